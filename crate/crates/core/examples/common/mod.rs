//! Setup shared by the examples: a small cohort and shortened schedules.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mmgt::config::PipelineConfig;
use mmgt::encoders::PatientInput;
use mmgt::stages::{self, BrainnetModels};
use mmgt::synth::{self, Cohort};

/// Desk preset with schedules short enough for an example run.
pub fn quick_config(n: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::desk();
    cfg.synthesis.n_patients = n;
    cfg.brainnet.ae_epochs = 30;
    cfg.brainnet.edge_epochs = 30;
    cfg.contrastive.epochs = 40;
    cfg.classifier.epochs = 200;
    cfg.ablation.epochs = 30;
    cfg
}

pub fn out_dir(name: &str) -> PathBuf {
    std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("mmgt-{name}")))
}

/// Writes (or reuses) the cohort under `root/cohort`.
pub fn cohort(root: &Path, cfg: &PipelineConfig) -> mmgt::Result<Cohort> {
    let dir = root.join("cohort");
    if !dir.join("cohort.json").exists() {
        synth::generate_cohort(&cfg.synthesis, &dir)?;
    }
    Cohort::open(&dir)
}

/// Brain-network encoders plus model inputs for every labelled patient.
pub fn inputs(cohort: &Cohort, cfg: &PipelineConfig) -> mmgt::Result<(BrainnetModels, Vec<PatientInput>)> {
    let (models, _) = stages::train_brainnet(cohort, &cfg.brainnet, cfg.seed)?;
    let entries = stages::labelled_patients(cohort);
    let nets = stages::build_networks(cohort, &models, &cfg.brainnet, &entries)?;
    let inputs = stages::prepare_inputs(cohort, &nets, &cfg.encoders, &entries)?;
    Ok((models, inputs))
}
