//! Tumor surface extraction, farthest point sampling and the radius graph
//! that the geometric encoder runs on.
//!
//!     cargo run --example point_cloud

use mmgt::geometry;
use mmgt::synth::{self, SynthesisConfig};

fn main() -> mmgt::Result<()> {
    let cfg = SynthesisConfig::default();
    let atlas = synth::generate_atlas(&cfg)?;
    for (index, label) in [(0u64, 0u8), (1, 1)] {
        let (_, mask) = synth::generate_patient(&cfg, label, &atlas, index)?;
        let surface = geometry::extract_surface_points(&mask)?;
        let sample = geometry::fps_indices(&surface, 64.min(surface.len()), 0)?;
        let cloud = surface.select(&sample)?;
        let graph = geometry::build_point_graph(&cloud, 2.0)?;
        let degree = 2.0 * graph.edges.len() as f64 / cloud.len() as f64;
        println!("patient {index} (label {label})");
        println!("  tumor voxels      {}", mask.voxels().len());
        println!("  surface points    {}", surface.len());
        println!("  sampled points    {}", cloud.len());
        println!("  coverage radius   {:.3}", geometry::coverage_radius(&surface, &sample));
        println!("  graph edges       {} (mean degree {degree:.1})", graph.edges.len());
    }
    Ok(())
}
