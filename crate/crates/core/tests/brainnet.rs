mod common;

use common::*;
use mmgt::brainnet::{self, BrainnetConfig, EdgeEncoderPair, NodeAutoencoder};
use mmgt::contrastive::loss::{self, LossConfig};
use mmgt::synth::{self, Cohort, SynthesisConfig};
use mmgt::types::Split;
use mmgt_autograd::{Mat, Tape};
use rand::seq::SliceRandom;
use rand::Rng;

fn small_brainnet() -> BrainnetConfig {
    BrainnetConfig {
        node_samples: 16,
        edge_samples: 16,
        fa_samples: 8,
        node_widths: vec![32, 16],
        edge_widths: vec![32, 16],
        fa_widths: vec![16, 16],
        projection_widths: vec![16],
        ..BrainnetConfig::default()
    }
}

#[test]
fn edge_loss_matches_double_loop() {
    let mut r = rng(10);
    for trial in 0..100 {
        let m = 2 + trial % 15;
        let d = r.random_range(2..12);
        let (a, b) = (random_mat(&mut r, m, d), random_mat(&mut r, m, d));
        let tau = r.random_range(0.05..1.0);
        for include in [false, true] {
            let cfg = LossConfig { tau, include_positive: include };
            let got = loss::edge_contrastive_loss(&a, &b, cfg).unwrap();
            let want = contrastive_oracle(&a, &b, tau, include);
            assert!((got - want).abs() < 1e-6, "m={m}: {got} vs {want}");
        }
    }
}

#[test]
fn edge_loss_is_invariant_to_joint_row_permutation() {
    let mut r = rng(11);
    for _ in 0..20 {
        let m = r.random_range(2..16);
        let (a, b) = (random_mat(&mut r, m, 6), random_mat(&mut r, m, 6));
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut r);
        let pa = a.select(ndarray::Axis(0), &perm);
        let pb = b.select(ndarray::Axis(0), &perm);
        let cfg = LossConfig::new(0.1);
        let l0 = loss::edge_contrastive_loss(&a, &b, cfg).unwrap();
        let l1 = loss::edge_contrastive_loss(&pa, &pb, cfg).unwrap();
        assert!((l0 - l1).abs() < 1e-9);
    }
}

#[test]
fn edge_loss_gradient_matches_finite_differences() {
    let mut r = rng(12);
    let (a, b) = (random_mat(&mut r, 6, 5), random_mat(&mut r, 6, 5));
    let cfg = LossConfig::new(0.3);
    let eval = |a: &Mat, b: &Mat| loss::edge_contrastive_loss(a, b, cfg).unwrap();
    let mut tape = Tape::new();
    let (va, vb) = (tape.input(a.clone()), tape.input(b.clone()));
    let l = loss::mean_loss(&mut tape, va, vb, cfg);
    let g = tape.backward_with(&[(l, Mat::ones((1, 1)))]);
    let (ga, gb) = (g.get_or_zeros(&tape, va), g.get_or_zeros(&tape, vb));
    let h = 1e-6;
    for (which, grad) in [(0, &ga), (1, &gb)] {
        for idx in 0..a.len() {
            let (mut ap, mut am, mut bp, mut bm) = (a.clone(), a.clone(), b.clone(), b.clone());
            if which == 0 {
                ap.as_slice_mut().unwrap()[idx] += h;
                am.as_slice_mut().unwrap()[idx] -= h;
            } else {
                bp.as_slice_mut().unwrap()[idx] += h;
                bm.as_slice_mut().unwrap()[idx] -= h;
            }
            let numeric = (eval(&ap, &bp) - eval(&am, &bm)) / (2.0 * h);
            let analytic = grad.iter().nth(idx).copied().unwrap();
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(err < 1e-4 || (analytic - numeric).abs() < 1e-9, "{analytic} vs {numeric}");
        }
    }
}

#[test]
fn autoencoder_gradient_matches_finite_differences() {
    let cfg = small_brainnet();
    let ae = NodeAutoencoder::new(&cfg, 3);
    let mut r = rng(13);
    let x = random_mat(&mut r, 5, ae.input_dim);
    let (_, grads) = ae.loss_and_grads(&x);
    let ids: Vec<_> = ae.store.ids().collect();
    let h = 1e-6;
    for _ in 0..20 {
        let id = ids[r.random_range(0..ids.len())];
        let idx = r.random_range(0..ae.store.get(id).len());
        let mut plus = ae.clone();
        let mut minus = ae.clone();
        plus.store.get_mut(id).as_slice_mut().unwrap()[idx] += h;
        minus.store.get_mut(id).as_slice_mut().unwrap()[idx] -= h;
        let numeric = (plus.reconstruction_loss(&x) - minus.reconstruction_loss(&x)) / (2.0 * h);
        let analytic = grads.get(id).map_or(0.0, |g| g.iter().nth(idx).copied().unwrap());
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(err < 1e-4 || (analytic - numeric).abs() < 1e-10, "{analytic} vs {numeric}");
    }
}

#[test]
fn autoencoder_memorises_a_constant_vector() {
    let cfg = BrainnetConfig {
        ae_epochs: 200,
        ae_lr: 1e-2,
        ..small_brainnet()
    };
    let input_dim = NodeAutoencoder::new(&cfg, 0).input_dim;
    let data = Mat::from_elem((10, input_dim), 0.3);
    let (ae, history) = brainnet::train_node_autoencoder(&data, &cfg, 0).unwrap();
    assert_eq!(history.len(), 200);
    assert!(history.iter().all(|h| h.loss.is_finite()));
    assert!(ae.reconstruction_loss(&data) < 1e-3, "{}", ae.reconstruction_loss(&data));
}

fn ssl_regions(cohort: &Cohort, cfg: &BrainnetConfig) -> Mat {
    let rows: Vec<Mat> = cohort
        .patients(Split::Ssl)
        .into_iter()
        .map(|e| brainnet::region_samples(&cohort.load_patient(e).unwrap().0, &cohort.atlas, cfg).unwrap())
        .collect();
    let views: Vec<_> = rows.iter().map(|m| m.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
}

#[test]
fn autoencoder_loss_falls_over_the_first_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let mut curves = Vec::new();
    for seed in 0..3 {
        let root = dir.path().join(format!("c{seed}"));
        synth::generate_cohort(&SynthesisConfig { n_patients: 20, seed, ..Default::default() }, &root).unwrap();
        let cohort = Cohort::open(&root).unwrap();
        let cfg = BrainnetConfig { ae_epochs: 10, ..BrainnetConfig::default() };
        let (_, h) = brainnet::train_node_autoencoder(&ssl_regions(&cohort, &cfg), &cfg, seed).unwrap();
        curves.push(h.iter().map(|e| e.loss).collect::<Vec<_>>());
    }
    let median: Vec<f64> = (0..10)
        .map(|k| {
            let mut v: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            v.sort_by(f64::total_cmp);
            v[1]
        })
        .collect();
    assert!(median.windows(2).all(|w| w[1] < w[0]), "{median:?}");
}

#[test]
fn edge_training_aligns_held_out_tracts() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate_cohort(&SynthesisConfig { n_patients: 30, seed: 4, ..Default::default() }, dir.path()).unwrap();
    let cohort = Cohort::open(dir.path()).unwrap();
    let cfg = BrainnetConfig { edge_epochs: 60, ..BrainnetConfig::default() };
    let samples = |split: Split| {
        let (mut a, mut f) = (Vec::new(), Vec::new());
        for e in cohort.patients(split) {
            let (x, y) = brainnet::tract_samples(&cohort.load_patient(e).unwrap().0, &cohort.atlas, &cfg).unwrap();
            a.push(x);
            f.push(y);
        }
        let cat = |m: &[Mat]| ndarray::concatenate(ndarray::Axis(0), &m.iter().map(|x| x.view()).collect::<Vec<_>>()).unwrap();
        (cat(&a), cat(&f))
    };
    let (anat, fa) = samples(Split::Ssl);
    let (pair, history) = brainnet::train_edge_encoders(&anat, &fa, &cfg, 4).unwrap();
    assert!(history.last().unwrap().loss < history[0].loss);
    let (ha, hf) = samples(Split::Test);
    let (za, zf) = pair.project(&ha, &hf);
    let n = za.nrows();
    let (mut matched, mut other) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let s = cosine(&za.row(i).to_vec(), &zf.row(j).to_vec());
            if i == j { matched += s } else { other += s }
        }
    }
    let (matched, other) = (matched / n as f64, other / (n * (n - 1)) as f64);
    assert!(matched > other, "matched {matched} vs mismatched {other}");

    let (again, h2) = brainnet::train_edge_encoders(&anat, &fa, &cfg, 4).unwrap();
    assert_eq!(h2.last().unwrap().loss.to_bits(), history.last().unwrap().loss.to_bits());
    assert_eq!(again.store, pair.store);
}

#[test]
fn minimal_atlas_gives_two_node_network() {
    let cfg = SynthesisConfig { atlas_regions: 2, atlas_tracts: 1, volume_shape: [16; 3], ..Default::default() };
    let atlas = synth::generate_atlas(&cfg).unwrap();
    let (volume, _) = synth::generate_patient(&cfg, 0, &atlas, 0).unwrap();
    let bcfg = BrainnetConfig::default();
    let ae = NodeAutoencoder::new(&bcfg, 0);
    let pair = EdgeEncoderPair::new(&bcfg, 0);
    let net = brainnet::build_brain_network(&volume, &atlas, &ae, &pair, &bcfg).unwrap();
    assert_eq!(net.node_attrs().dim(), (2, 16));
    assert_eq!(net.edge_attrs().dim(), (1, 16));
    let again = brainnet::build_brain_network(&volume, &atlas, &ae, &pair, &bcfg).unwrap();
    assert_eq!(again, net);
}

#[test]
fn networks_are_finite_varied_and_survive_serialisation() {
    let dir = tempfile::tempdir().unwrap();
    synth::generate_cohort(&SynthesisConfig { n_patients: 20, seed: 5, ..Default::default() }, dir.path()).unwrap();
    let cohort = Cohort::open(dir.path()).unwrap();
    let cfg = BrainnetConfig::default();
    let ae = NodeAutoencoder::new(&cfg, 1);
    let pair = EdgeEncoderPair::new(&cfg, 1);
    for e in cohort.manifest.patients.iter().take(10) {
        let (volume, _) = cohort.load_patient(e).unwrap();
        let net = brainnet::build_brain_network(&volume, &cohort.atlas, &ae, &pair, &cfg).unwrap();
        for m in [net.node_attrs(), net.edge_attrs()] {
            assert!(m.iter().all(|v| v.is_finite()));
            let (lo, hi) = m.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(hi > lo, "{}: constant attributes", e.id);
        }
        let out = dir.path().join("net").join(&e.id);
        brainnet::save_network(&out, &net, "atlas.json").unwrap();
        assert_eq!(brainnet::load_network(&out, &cohort.atlas).unwrap(), net);
    }
}
