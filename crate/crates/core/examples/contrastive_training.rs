//! Multi-modal contrastive pre-training of the image, point and brain
//! encoders on the contrastive split.
//!
//!     cargo run --release --example contrastive_training

mod common;

use mmgt::contrastive::train_contrastive;
use mmgt::pipeline;
use mmgt::types::Split;

fn main() -> mmgt::Result<()> {
    let root = common::out_dir("contrastive");
    let cfg = common::quick_config(60);
    let cohort = common::cohort(&root, &cfg)?;
    let (_, inputs) = common::inputs(&cohort, &cfg)?;
    let train: Vec<_> = inputs
        .iter()
        .filter(|i| cohort.manifest.get(&i.id).is_some_and(|e| e.split == Split::Contrastive))
        .cloned()
        .collect();
    let mut model = pipeline::new_model(&cfg)?;
    println!(
        "{} patients, tau {}, lambda {}, {} epochs",
        train.len(),
        cfg.contrastive.tau,
        cfg.contrastive.lambda,
        cfg.contrastive.epochs
    );
    let history = train_contrastive(&mut model, &train, &cfg.contrastive, cfg.seed)?;
    for h in history.iter().step_by(5).chain(history.last()) {
        println!("  epoch {:>3}  loss {:.4}  lr {:.2e}", h.epoch, h.loss, h.lr);
    }
    Ok(())
}
