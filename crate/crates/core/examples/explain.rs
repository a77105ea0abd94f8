//! Runs the pipeline once, then exports saliency and attention for the
//! first test patient.
//!
//!     cargo run --release --example explain

mod common;

use mmgt::cli;
use mmgt::pipeline::{self, RunDir};
use mmgt::types::Split;

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("explain");
    let cfg = common::quick_config(40);
    let cohort = common::cohort(&root, &cfg)?;
    let run = RunDir::new(root.join("run"));
    let report = pipeline::run_pipeline(&cohort.root, &run.root, &cfg, true, |m| eprintln!("{m}"))?;
    let patient = cohort.patients(Split::Test)[0].id.clone();
    let dir = cli::cmd_explain(&cfg, &run, &cohort, &patient, report.best_scheme)?;
    let e: serde_json::Value = mmgt::io::read_json(dir.join("explanation.json"))?;
    println!("{patient}: predicted probability {:.3}", e["probability"].as_f64().unwrap_or(f64::NAN));
    println!("edge cut (median a^E) {:.4}", e["edge_cut"].as_f64().unwrap_or(f64::NAN));
    for edge in e["edges"].as_array().into_iter().flatten().take(5) {
        println!(
            "  edge {:>3} regions {} a^E {:.4} crossed {}",
            edge["edge"], edge["regions"], edge["attention"].as_f64().unwrap_or(0.0), edge["crossed"]
        );
    }
    let saliency = mmgt::io::load_tensor::<f32>(dir.join("saliency.mmgt"))?;
    let peak = saliency.iter().cloned().fold(0.0f32, f32::max);
    println!("saliency volume {:?}, peak {peak:.3e}", saliency.shape());
    println!("exports in {}", dir.display());
    Ok(())
}
