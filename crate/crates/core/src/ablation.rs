//! Component ablations: encoder subsets with a shared MLP head, trained
//! end-to-end with BCE and, where marked, a contrastive term.

use mmgt_autograd::optim::{Adam, Optimizer, StepLr};
use mmgt_autograd::{Mat, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::contrastive::loss::{mean_loss, multi_loss_var};
use crate::encoders::{Branches, EncoderConfig, ForwardOptions, ImageEncoder, MultiModalModel, PatientInput, Rotation};
use crate::error::{Error, Result};
use crate::layers::{Ctx, Mlp};
use crate::metrics::{self, Metrics};
use crate::rng;
use crate::types::{MultiChannelVolume, Split, ANATOMICAL_CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveTerm {
    None,
    /// `(l_I2P + l_P2I) / 2`
    ImagePoints,
    /// brain anchors against point latents
    BrainPoints,
    /// brain anchors against image latents
    BrainImage,
    /// the full bi-level objective
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationRow {
    pub label: &'static str,
    pub branches: Branches,
    pub term: ContrastiveTerm,
    pub attention: bool,
}

const fn br(image: bool, points: bool, brain: bool) -> Branches {
    Branches { image, points, brain }
}

pub const ROWS: [AblationRow; 12] = [
    AblationRow { label: "f^I + MLP", branches: br(true, false, false), term: ContrastiveTerm::None, attention: false },
    AblationRow { label: "f^P + MLP", branches: br(false, true, false), term: ContrastiveTerm::None, attention: false },
    AblationRow { label: "f^B + MLP", branches: br(false, false, true), term: ContrastiveTerm::None, attention: false },
    AblationRow { label: "f^I+f^P + MLP", branches: br(true, true, false), term: ContrastiveTerm::None, attention: false },
    AblationRow { label: "f^B+f^P + MLP", branches: br(false, true, true), term: ContrastiveTerm::None, attention: false },
    AblationRow { label: "f^I+f^B + MLP", branches: br(true, false, true), term: ContrastiveTerm::None, attention: false },
    AblationRow { label: "f^I+f^P + MLP + L_contr", branches: br(true, true, false), term: ContrastiveTerm::ImagePoints, attention: false },
    AblationRow { label: "f^B+f^P + MLP + L_contr", branches: br(false, true, true), term: ContrastiveTerm::BrainPoints, attention: false },
    AblationRow { label: "f^I+f^B + MLP + L_contr", branches: br(true, false, true), term: ContrastiveTerm::BrainImage, attention: false },
    AblationRow { label: "Multi-modal (no attention) + MLP", branches: Branches::ALL, term: ContrastiveTerm::Multi, attention: false },
    AblationRow { label: "Multi-modal (no L_multi) + MLP", branches: Branches::ALL, term: ContrastiveTerm::None, attention: true },
    AblationRow { label: "Multi-modal (full model) + MLP", branches: Branches::ALL, term: ContrastiveTerm::Multi, attention: true },
];

pub const BASELINE_LABEL: &str = "3D CNN baseline + MLP";
pub const NO_ATTENTION_ROW: usize = 9;
pub const FULL_MODEL_ROW: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// 1-based position in the table; 13 is the convolutional baseline.
    pub row: usize,
    pub label: String,
    pub metrics: Metrics,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub rows: Vec<AblationResult>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let rows: Vec<_> = self.rows.iter().map(|r| (r.label.clone(), r.metrics)).collect();
        crate::popgraph::format_table(&rows)
    }
}

fn labels(inputs: &[&PatientInput]) -> Result<Vec<u8>> {
    inputs
        .iter()
        .map(|i| i.label.ok_or_else(|| Error::data(format!("{}: ablation patient without label", i.id))))
        .collect()
}

/// Inverse class frequency weights, so both classes weigh the same.
fn class_weights(labels: &[u8]) -> Result<[f64; 2]> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data("degenerate labels: ablation training set has a single class"));
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * neg as f64), n / (2.0 * pos as f64)])
}

struct RowModel {
    model: MultiModalModel,
    head: Mlp,
}

impl RowModel {
    fn new(cfg: &PipelineConfig, row: &AblationRow, index: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "ablation-init", index as u64);
        let mut model = MultiModalModel::new(&cfg.encoders, &cfg.heads, cfg.brainnet.attr_dim(), &mut r)?;
        let width = cfg.encoders.feature_dim * row.branches.count();
        let head = Mlp::new(&mut model.store, &mut r, "ablation.head", &[width, cfg.ablation.head_hidden, 1]);
        crate::io::round_params(&mut model.store);
        Ok(Self { model, head })
    }

    /// Logits `N × 1` and the contrastive term (if any) for a batch.
    fn forward(
        &self,
        ctx: &mut Ctx,
        row: &AblationRow,
        batch: &[&PatientInput],
        rotations: Option<&[Rotation]>,
        cfg: &PipelineConfig,
    ) -> (Var, Option<Var>) {
        let mut ui = Vec::new();
        let mut up = Vec::new();
        let mut ub = Vec::new();
        let mut ut = Vec::new();
        for (k, input) in batch.iter().enumerate() {
            let opts = ForwardOptions {
                rotation: rotations.map(|r| r[k]),
                track_image: false,
            };
            let f = self.model.forward(ctx, input, row.branches, row.attention, opts);
            ui.extend(f.u_i);
            up.extend(f.u_p);
            ub.extend(f.u_b);
            ut.extend(f.u_t);
        }
        let stack = |ctx: &mut Ctx, v: &[Var]| (!v.is_empty()).then(|| ctx.tape.concat_rows(v));
        let (ui, up, ub, ut) = (stack(ctx, &ui), stack(ctx, &up), stack(ctx, &ub), stack(ctx, &ut));
        let parts: Vec<Var> = [ui, up, ub].into_iter().flatten().collect();
        let x = ctx.tape.concat_cols(&parts);
        let logits = self.head.forward(ctx, x);
        let loss_cfg = cfg.contrastive.loss();
        let m = &self.model;
        let term = match row.term {
            ContrastiveTerm::None => None,
            ContrastiveTerm::ImagePoints => {
                let zi = m.g_i.forward(ctx, ui.unwrap());
                let zp = m.g_p.forward(ctx, up.unwrap());
                let a = mean_loss(&mut ctx.tape, zi, zp, loss_cfg);
                let b = mean_loss(&mut ctx.tape, zp, zi, loss_cfg);
                let s = ctx.tape.add(a, b);
                Some(ctx.tape.scale(s, 0.5))
            }
            ContrastiveTerm::BrainPoints => {
                let zb = m.g_b.forward(ctx, ub.unwrap());
                let zp = m.g_p.forward(ctx, up.unwrap());
                Some(mean_loss(&mut ctx.tape, zb, zp, loss_cfg))
            }
            ContrastiveTerm::BrainImage => {
                let zb = m.g_b.forward(ctx, ub.unwrap());
                let zi = m.g_i.forward(ctx, ui.unwrap());
                Some(mean_loss(&mut ctx.tape, zb, zi, loss_cfg))
            }
            ContrastiveTerm::Multi => {
                let z = [
                    m.g_i.forward(ctx, ui.unwrap()),
                    m.g_p.forward(ctx, up.unwrap()),
                    m.g_b.forward(ctx, ub.unwrap()),
                    m.g_t.forward(ctx, ut.unwrap()),
                ];
                Some(multi_loss_var(ctx, z, loss_cfg, cfg.contrastive.lambda))
            }
        };
        (logits, term)
    }

    fn probabilities(&self, row: &AblationRow, inputs: &[&PatientInput], cfg: &PipelineConfig) -> Vec<f64> {
        let mut ctx = Ctx::frozen(&self.model.store);
        let (logits, _) = self.forward(&mut ctx, row, inputs, None, cfg);
        ctx.value(logits).iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect()
    }
}

/// Trains one row on `train` and evaluates it on `test`.
pub fn run_row(
    index: usize,
    train: &[&PatientInput],
    test: &[&PatientInput],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<AblationResult> {
    let row = ROWS
        .get(index)
        .ok_or_else(|| Error::config(format!("ablation row {} does not exist", index + 1)))?;
    let mut rm = RowModel::new(cfg, row, index, seed)?;
    let y = labels(train)?;
    let w = class_weights(&y)?;
    let a = &cfg.ablation;
    let schedule = StepLr {
        base_lr: a.lr,
        gamma: cfg.contrastive.lr_gamma,
        step_size: cfg.contrastive.lr_step,
    };
    let mut opt = Adam::new(a.weight_decay);
    let mut order_rng = rng::stream(seed, "ablation-batches", index as u64);
    let mut aug_rng = rng::stream(seed, "ablation-augment", index as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..a.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(a.batch_size).filter(|b| b.len() >= 2) {
            let batch: Vec<&PatientInput> = chunk.iter().map(|&i| train[i]).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| y[i] as f64).collect();
            let weights: Vec<f64> = chunk.iter().map(|&i| w[y[i] as usize]).collect();
            let rotations: Option<Vec<Rotation>> = cfg
                .contrastive
                .augment
                .then(|| batch.iter().map(|_| Rotation::random(&mut aug_rng)).collect());
            let (loss, grads) = {
                let mut ctx = Ctx::new(&rm.model.store);
                let (logits, term) = rm.forward(&mut ctx, row, &batch, rotations.as_deref(), cfg);
                let mut l = ctx.tape.bce_with_logits(logits, &targets, &weights);
                if let Some(t) = term {
                    let t = ctx.tape.scale(t, a.contrastive_weight);
                    l = ctx.tape.add(l, t);
                }
                (ctx.scalar(l), ctx.param_grads(l))
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    stage: format!("ablation row {}", index + 1),
                    epoch,
                });
            }
            opt.step(&mut rm.model.store, &grads, lr);
            total += loss;
            batches += 1;
        }
        final_loss = total / batches.max(1) as f64;
    }
    crate::io::finish_training(&mut rm.model.store, &format!("ablation row {}", index + 1), a.epochs.saturating_sub(1))?;
    let probs = rm.probabilities(row, test, cfg);
    Ok(AblationResult {
        row: index + 1,
        label: row.label.to_string(),
        metrics: metrics::evaluate(&probs, &labels(test)?, cfg.classifier.threshold)?,
        final_loss,
    })
}

/// Whole-volume input for the convolutional baseline: anatomical channels
/// block-averaged down to a `side³` cube.
pub fn baseline_input(volume: &MultiChannelVolume, side: usize) -> Mat {
    let shape = volume.shape();
    let dims = mmgt_autograd::VolumeDims::cube(side);
    let mut out = Mat::zeros((ANATOMICAL_CHANNELS, dims.voxels()));
    let mut counts = vec![0usize; dims.voxels()];
    for x in 0..shape[0] {
        for y in 0..shape[1] {
            for z in 0..shape[2] {
                let t = dims.index(x * side / shape[0], y * side / shape[1], z * side / shape[2]);
                counts[t] += 1;
                for c in 0..ANATOMICAL_CHANNELS {
                    out[[c, t]] += volume.at(c, [x, y, z]) as f64;
                }
            }
        }
    }
    for (t, &n) in counts.iter().enumerate() {
        for c in 0..ANATOMICAL_CHANNELS {
            out[[c, t]] /= n.max(1) as f64;
        }
    }
    out
}

/// The generic 3-D convolutional baseline on whole volumes.
pub fn run_baseline(
    train: &[(Mat, u8)],
    test: &[(Mat, u8)],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<AblationResult> {
    let enc_cfg = EncoderConfig {
        crop_side: cfg.ablation.baseline_side,
        ..cfg.encoders.clone()
    };
    let mut r = rng::stream(seed, "baseline-init", 0);
    let mut store = mmgt_autograd::ParamStore::new();
    let enc = ImageEncoder::new(&mut store, &mut r, &enc_cfg);
    let head = Mlp::new(&mut store, &mut r, "baseline.head", &[enc_cfg.feature_dim, cfg.ablation.head_hidden, 1]);
    crate::io::round_params(&mut store);
    let y: Vec<u8> = train.iter().map(|t| t.1).collect();
    let w = class_weights(&y)?;
    let a = &cfg.ablation;
    let schedule = StepLr {
        base_lr: a.lr,
        gamma: cfg.contrastive.lr_gamma,
        step_size: cfg.contrastive.lr_step,
    };
    let mut opt = Adam::new(a.weight_decay);
    let mut order_rng = rng::stream(seed, "baseline-batches", 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let logits = |ctx: &mut Ctx, xs: &[&Mat]| {
        let feats: Vec<Var> = xs
            .iter()
            .map(|x| {
                let v = ctx.constant((*x).clone());
                enc.forward(ctx, v)
            })
            .collect();
        let f = ctx.tape.concat_rows(&feats);
        head.forward(ctx, f)
    };
    let mut final_loss = f64::NAN;
    for epoch in 0..a.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(a.batch_size).filter(|b| b.len() >= 2) {
            let xs: Vec<&Mat> = chunk.iter().map(|&i| &train[i].0).collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| y[i] as f64).collect();
            let weights: Vec<f64> = chunk.iter().map(|&i| w[y[i] as usize]).collect();
            let (loss, grads) = {
                let mut ctx = Ctx::new(&store);
                let z = logits(&mut ctx, &xs);
                let l = ctx.tape.bce_with_logits(z, &targets, &weights);
                (ctx.scalar(l), ctx.param_grads(l))
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    stage: "ablation baseline".into(),
                    epoch,
                });
            }
            opt.step(&mut store, &grads, lr);
            total += loss;
            batches += 1;
        }
        final_loss = total / batches.max(1) as f64;
    }
    crate::io::finish_training(&mut store, "ablation baseline", a.epochs.saturating_sub(1))?;
    let mut ctx = Ctx::frozen(&store);
    let xs: Vec<&Mat> = test.iter().map(|t| &t.0).collect();
    let z = logits(&mut ctx, &xs);
    let probs: Vec<f64> = ctx.value(z).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let labels: Vec<u8> = test.iter().map(|t| t.1).collect();
    Ok(AblationResult {
        row: ROWS.len() + 1,
        label: BASELINE_LABEL.to_string(),
        metrics: metrics::evaluate(&probs, &labels, cfg.classifier.threshold)?,
        final_loss,
    })
}

/// Train (contrastive ∪ classifier) and test partitions of `inputs`.
pub fn partition(
    inputs: &[PatientInput],
    split_of: impl Fn(&str) -> Option<Split>,
) -> (Vec<&PatientInput>, Vec<&PatientInput>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in inputs {
        match split_of(&i.id) {
            Some(Split::Contrastive | Split::Classifier) => train.push(i),
            Some(Split::Test) => test.push(i),
            _ => {}
        }
    }
    (train, test)
}
