//! Patient-level population graphs under the five node/edge feature
//! schemes, each with its own node classifier.
//!
//!     cargo run --release --example population_graph

mod common;

use mmgt::pipeline;
use mmgt::popgraph::{self, Scheme};

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("popgraph");
    let cfg = common::quick_config(60);
    let cohort = common::cohort(&root, &cfg)?;
    let (_, inputs) = common::inputs(&cohort, &cfg)?;
    let run = pipeline::RunDir::new(root.join("run"));
    let (model, _) = pipeline::train_encoders(&run, &cfg, &inputs, &cohort)?;
    let features = pipeline::extract_features(&model, &inputs, cfg.contrastive.attention);

    for scheme in Scheme::ALL {
        let g = pipeline::build_graph(&features, &cohort, &cfg, scheme)?;
        let degree = 2.0 * g.edges.len() as f64 / g.n_nodes() as f64;
        println!("{:<40} {} nodes, {:>4} edges, mean degree {degree:.1}", scheme.label(), g.n_nodes(), g.edges.len());
    }
    println!();
    let rows = pipeline::sweep(&run, &features, &cohort, &cfg)?;
    let table: Vec<_> = rows.iter().map(|r| (r.label.clone(), r.metrics)).collect();
    print!("{}", popgraph::format_table(&table));
    if let Some((k, auc)) = pipeline::best_scheme(&rows) {
        println!("best: {} (AUC {auc:.3})", Scheme::ALL[k].label());
    }
    Ok(())
}
