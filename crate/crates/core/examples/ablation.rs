//! A few rows of the component ablation: single branches, a pairwise
//! contrastive variant and the full model with and without attention.
//!
//!     cargo run --release --example ablation

mod common;

use mmgt::ablation::{self, AblationReport};
use mmgt::pipeline::SCHEMA_VERSION;

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("ablation");
    let cfg = common::quick_config(60);
    let cohort = common::cohort(&root, &cfg)?;
    let (_, inputs) = common::inputs(&cohort, &cfg)?;
    let (train, test) = ablation::partition(&inputs, |id| cohort.manifest.get(id).map(|e| e.split));
    println!("{} training patients, {} test patients", train.len(), test.len());
    let mut rows = Vec::new();
    for k in [0, 2, 7, ablation::NO_ATTENTION_ROW, ablation::FULL_MODEL_ROW] {
        eprintln!("training {}", ablation::ROWS[k].label);
        rows.push(ablation::run_row(k, &train, &test, &cfg, cfg.seed)?);
    }
    let report = AblationReport {
        schema_version: SCHEMA_VERSION,
        command: "example".into(),
        seed: cfg.seed,
        rows,
    };
    print!("{}", report.table());
    Ok(())
}
