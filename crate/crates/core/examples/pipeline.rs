//! End-to-end run into a resumable run directory; a second call with
//! `resume` reloads every stage and reproduces the report.
//!
//!     cargo run --release --example pipeline -- /tmp/mmgt-run

mod common;

use mmgt::pipeline;

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("pipeline");
    let cfg = common::quick_config(60);
    let cohort = common::cohort(&root, &cfg)?;
    let out = root.join("run");
    let _ = std::fs::remove_dir_all(&out);
    let report = pipeline::run_pipeline(&cohort.root, &out, &cfg, false, |m| eprintln!("{m}"))?;
    print!("{}", report.table());
    println!(
        "contrastive loss {:.4} -> {:.4}",
        report.contrastive.initial.unwrap_or(f64::NAN),
        report.contrastive.last.unwrap_or(f64::NAN)
    );
    let again = pipeline::run_pipeline(&cohort.root, &out, &cfg, true, |_| {})?;
    println!("resumed report identical: {}", again == report);
    Ok(())
}
