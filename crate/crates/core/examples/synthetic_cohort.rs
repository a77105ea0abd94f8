//! Generates a small cohort and prints what the planted signal looks like.
//!
//!     cargo run --example synthetic_cohort -- /tmp/cohort

use std::path::PathBuf;

use mmgt::synth::{self, SynthesisConfig};
use mmgt::types::{Split, FA_CHANNEL};

fn main() -> mmgt::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mmgt-cohort"));
    let config = SynthesisConfig {
        n_patients: 20,
        ..Default::default()
    };
    let manifest = synth::generate_cohort(&config, &out)?;
    let cohort = synth::Cohort::open(&out)?;
    println!("cohort written to {}", out.display());
    for split in Split::ALL {
        let members: Vec<_> = manifest.patients_in(split).collect();
        let pos = members.iter().filter(|p| p.label == Some(1)).count();
        println!("  {:<12} {:>3} patients, {pos} positive", split.as_str(), members.len());
    }
    println!(
        "atlas: {} regions, {} tracts",
        cohort.atlas.n_regions(),
        cohort.atlas.n_tracts()
    );

    println!("\n  id    label  tumor voxels  disrupted tracts  mean FA near tumor");
    for entry in manifest.patients.iter().filter(|p| p.label.is_some()).take(8) {
        let (volume, mask) = cohort.load_patient(entry)?;
        let near = synth::tumor_adjacent_tract_voxels(&cohort.atlas, &mask);
        let fa = near.iter().map(|v| volume.at(FA_CHANNEL, *v) as f64).sum::<f64>() / near.len().max(1) as f64;
        println!(
            "  {}  {:>5}  {:>12}  {:>16}  {fa:>18.3}",
            entry.id,
            entry.label.unwrap(),
            mask.voxels().len(),
            synth::disrupted_tracts(&cohort.atlas, &mask).len(),
        );
    }
    Ok(())
}
