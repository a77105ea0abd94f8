//! Point attention from the geometric encoder flowing into edge and node
//! attention on the brain network.
//!
//!     cargo run --release --example hierarchical_attention

mod common;

use mmgt::explain::rank_edges;
use mmgt::pipeline;

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("attention");
    let mut cfg = common::quick_config(40);
    cfg.brainnet.ae_epochs = 10;
    cfg.brainnet.edge_epochs = 10;
    let cohort = common::cohort(&root, &cfg)?;
    let (_, inputs) = common::inputs(&cohort, &cfg)?;
    let model = pipeline::new_model(&cfg)?;

    for input in inputs.iter().take(3) {
        let f = model.features(input, true);
        let plain = model.features(input, false);
        let crossed = input.edge_map.crossed.iter().filter(|&&c| c).count();
        let max_p = f.a_p.iter().cloned().fold(f64::MIN, f64::max);
        let (lo, hi) = f.a_n.iter().fold((f64::MAX, f64::MIN), |(l, h), &a| (l.min(a), h.max(a)));
        println!("{} (label {:?})", input.id, input.label);
        println!("  points {:>4}  max a^P {max_p:.4}  (uniform would be {:.4})", f.a_p.len(), 1.0 / f.a_p.len() as f64);
        println!("  edges  {:>4}  crossed by the tumor surface: {crossed}", f.a_e.len());
        let top: Vec<String> = rank_edges(&f.a_e)
            .into_iter()
            .take(5)
            .map(|e| {
                let (a, b) = input.network.edge_index()[e];
                format!("{a}-{b}:{:.3}", f.a_e[e])
            })
            .collect();
        println!("  top edges by a^E  {}", top.join("  "));
        println!("  a^N range         [{lo:.3}, {hi:.3}]");
        let shift: f64 = f.u_b.iter().zip(&plain.u_b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("  |u^B(attention) - u^B(none)| = {shift:.4}");
    }
    Ok(())
}
