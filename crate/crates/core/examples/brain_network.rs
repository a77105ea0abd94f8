//! Self-supervised node and edge encoders, then one brain network per
//! patient: atlas regions as nodes, tracts as edges.
//!
//!     cargo run --release --example brain_network

mod common;

use mmgt::stages;

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("brain-network");
    let cfg = common::quick_config(40);
    let cohort = common::cohort(&root, &cfg)?;
    let (models, history) = stages::train_brainnet(&cohort, &cfg.brainnet, cfg.seed)?;
    let first_last = |h: &[mmgt::brainnet::EpochLoss]| (h[0].loss, h[h.len() - 1].loss);
    let (a0, a1) = first_last(&history.autoencoder);
    let (e0, e1) = first_last(&history.edges);
    println!("node autoencoder  reconstruction {a0:.4} -> {a1:.4}");
    println!("edge encoders     contrastive    {e0:.4} -> {e1:.4}");

    let entries = stages::labelled_patients(&cohort);
    let nets = stages::build_networks(&cohort, &models, &cfg.brainnet, &entries[..4])?;
    for (id, net) in &nets {
        let attrs = net.edge_attrs();
        let spread = attrs.std_axis(ndarray::Axis(0), 0.0).mean().unwrap_or(0.0);
        println!(
            "{id}: {} nodes, {} edges, attribute dim {}, mean edge-attribute spread {spread:.3}",
            net.n_nodes(),
            net.n_edges(),
            net.attr_dim()
        );
    }
    Ok(())
}
