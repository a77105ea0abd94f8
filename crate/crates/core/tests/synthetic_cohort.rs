use std::collections::BTreeMap;
use std::path::Path;

use mmgt::synth::{self, Cohort, SynthesisConfig};
use mmgt::types::{flood_fill, validate_manifest, Split, FA_CHANNEL};

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small(n: usize, seed: u64) -> SynthesisConfig {
    SynthesisConfig {
        n_patients: n,
        seed,
        ..Default::default()
    }
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth::generate_cohort(&small(12, 7), a.path()).unwrap();
    synth::generate_cohort(&small(12, 7), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = tempfile::tempdir().unwrap();
    synth::generate_cohort(&small(12, 8), c.path()).unwrap();
    assert_ne!(tree(c.path()), ta);
}

#[test]
fn default_atlas_regions_are_disjoint() {
    let atlas = synth::generate_atlas(&SynthesisConfig::default()).unwrap();
    let mut owner = BTreeMap::new();
    for (r, voxels) in atlas.region_voxels.iter().enumerate() {
        for v in voxels {
            assert!(owner.insert(*v, r).is_none(), "voxel {v:?} in two regions");
        }
    }
    assert_eq!(atlas.n_regions(), 12);
}

#[test]
fn generated_cohort_passes_validators() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(40, 11);
    let manifest = synth::generate_cohort(&cfg, dir.path()).unwrap();
    assert!(validate_manifest(&manifest).is_empty());
    let cohort = Cohort::open(dir.path()).unwrap();
    cohort.atlas.validate().unwrap();
    for e in &manifest.patients {
        let (volume, mask) = cohort.load_patient(e).unwrap();
        assert!(volume.data().iter().all(|v| v.is_finite()));
        let voxels = mask.voxels();
        assert_eq!(flood_fill(mask.data(), voxels[0]).len(), voxels.len(), "{} mask not connected", e.id);
    }
}

#[test]
fn label_balance_follows_the_positive_rate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::generate_cohort(&small(200, 3), dir.path()).unwrap();
    let labelled: Vec<_> = manifest.patients.iter().filter(|p| p.split != Split::Ssl).collect();
    let pos = labelled.iter().filter(|p| p.label == Some(1)).count() as f64 / labelled.len() as f64;
    assert!((pos - 0.25).abs() < 0.05, "positive rate {pos}");
}

fn fa_near_tumor(cfg: &SynthesisConfig, label: u8, index: u64) -> f64 {
    let atlas = synth::generate_atlas(cfg).unwrap();
    let (volume, mask) = synth::generate_patient(cfg, label, &atlas, index).unwrap();
    let near = synth::tumor_adjacent_tract_voxels(&atlas, &mask);
    assert!(!near.is_empty());
    near.iter().map(|v| volume.at(FA_CHANNEL, *v) as f64).sum::<f64>() / near.len() as f64
}

#[test]
fn positive_patients_have_lower_fa_near_the_tumor() {
    let cfg = SynthesisConfig::default();
    for index in 0..5 {
        assert!(fa_near_tumor(&cfg, 1, index) < fa_near_tumor(&cfg, 0, index));
    }
}

#[test]
fn fa_drop_grows_with_the_network_effect() {
    for seed in 0..10 {
        let means: Vec<f64> = [0.25, 0.5, 1.0]
            .iter()
            .map(|&d| {
                let cfg = SynthesisConfig {
                    delta_net: d,
                    seed,
                    ..Default::default()
                };
                fa_near_tumor(&cfg, 1, 0)
            })
            .collect();
        assert!(means[0] > means[1] && means[1] > means[2], "seed {seed}: {means:?}");
    }
}
