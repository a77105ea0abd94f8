//! Cohort-level glue between the modules: brainnet training on the SSL
//! split, network construction and encoder input preparation.

use std::collections::BTreeMap;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use crate::brainnet::{self, BrainnetConfig, EdgeEncoderPair, EpochLoss, NodeAutoencoder};
use crate::encoders::{EncoderConfig, PatientInput};
use crate::error::{Error, Result};
use crate::synth::Cohort;
use crate::types::{BrainNetwork, PatientEntry, Split};

pub struct BrainnetModels {
    pub autoencoder: NodeAutoencoder,
    pub edges: EdgeEncoderPair,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BrainnetHistory {
    pub autoencoder: Vec<EpochLoss>,
    pub edges: Vec<EpochLoss>,
}

/// Trains the node autoencoder and the edge encoders on every SSL patient.
pub fn train_brainnet(cohort: &Cohort, cfg: &BrainnetConfig, seed: u64) -> Result<(BrainnetModels, BrainnetHistory)> {
    let ssl = cohort.patients(Split::Ssl);
    if ssl.is_empty() {
        return Err(Error::data("no SSL patients to train brain-network encoders on"));
    }
    let mut regions = Vec::new();
    let mut anat = Vec::new();
    let mut fa = Vec::new();
    for entry in ssl {
        let (volume, _) = cohort.load_patient(entry)?;
        regions.push(brainnet::region_samples(&volume, &cohort.atlas, cfg)?);
        let (a, f) = brainnet::tract_samples(&volume, &cohort.atlas, cfg)?;
        anat.push(a);
        fa.push(f);
    }
    let stack = |m: &[ndarray::Array2<f64>]| {
        let views: Vec<_> = m.iter().map(|a| a.view()).collect();
        concatenate(Axis(0), &views).expect("equal widths")
    };
    let (autoencoder, h_ae) = brainnet::train_node_autoencoder(&stack(&regions), cfg, seed)?;
    let (edges, h_edge) = brainnet::train_edge_encoders(&stack(&anat), &stack(&fa), cfg, seed)?;
    Ok((
        BrainnetModels { autoencoder, edges },
        BrainnetHistory {
            autoencoder: h_ae,
            edges: h_edge,
        },
    ))
}

/// Brain networks for the given patients, keyed by id.
pub fn build_networks(
    cohort: &Cohort,
    models: &BrainnetModels,
    cfg: &BrainnetConfig,
    entries: &[&PatientEntry],
) -> Result<BTreeMap<String, BrainNetwork>> {
    let mut out = BTreeMap::new();
    for entry in entries {
        let (volume, _) = cohort.load_patient(entry)?;
        let net = brainnet::build_brain_network(&volume, &cohort.atlas, &models.autoencoder, &models.edges, cfg)?;
        out.insert(entry.id.clone(), net);
    }
    Ok(out)
}

/// Patients of every split except SSL, in manifest order.
pub fn labelled_patients(cohort: &Cohort) -> Vec<&PatientEntry> {
    cohort
        .manifest
        .patients
        .iter()
        .filter(|p| p.split != Split::Ssl)
        .collect()
}

pub fn prepare_inputs(
    cohort: &Cohort,
    networks: &BTreeMap<String, BrainNetwork>,
    cfg: &EncoderConfig,
    entries: &[&PatientEntry],
) -> Result<Vec<PatientInput>> {
    entries
        .iter()
        .map(|entry| {
            let (volume, mask) = cohort.load_patient(entry)?;
            let net = networks
                .get(&entry.id)
                .ok_or_else(|| Error::data(format!("{}: no brain network", entry.id)))?;
            PatientInput::build(&entry.id, entry.label, &volume, &mask, net.clone(), cfg)
        })
        .collect()
}
