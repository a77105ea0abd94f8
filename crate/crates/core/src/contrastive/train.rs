//! Joint multi-modal contrastive training of all encoders and heads.

use mmgt_autograd::optim::{Optimizer, Sgd, StepLr};
use mmgt_autograd::Var;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{multi_loss_var, LossConfig};
use crate::brainnet::EpochLoss;
use crate::encoders::{Branches, ForwardOptions, MultiModalModel, PatientInput, Rotation};
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub augment: bool,
    pub include_positive: bool,
    /// Hierarchical attention during training; off gives the identity path.
    pub attention: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 0.8,
            batch_size: 20,
            epochs: 200,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_gamma: 0.9,
            lr_step: 50,
            augment: true,
            include_positive: false,
            attention: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn paper() -> Self {
        Self {
            epochs: 1000,
            ..Self::default()
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            include_positive: self.include_positive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("contrastive.tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("contrastive.lambda must be in [0,1], got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::config("contrastive.batch_size must be at least 2"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("contrastive.lr and weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// Batched latents `[z^I, z^P, z^B, z^T]` for a minibatch.
pub fn batch_latents(
    ctx: &mut Ctx,
    model: &MultiModalModel,
    batch: &[&PatientInput],
    attention: bool,
    rotations: Option<&[Rotation]>,
) -> [Var; 4] {
    let mut ui = Vec::with_capacity(batch.len());
    let mut up = Vec::with_capacity(batch.len());
    let mut ub = Vec::with_capacity(batch.len());
    let mut ut = Vec::with_capacity(batch.len());
    for (k, input) in batch.iter().enumerate() {
        let opts = ForwardOptions {
            rotation: rotations.map(|r| r[k]),
            track_image: false,
        };
        let f = model.forward(ctx, input, Branches::ALL, attention, opts);
        ui.push(f.u_i.unwrap());
        up.push(f.u_p.unwrap());
        ub.push(f.u_b.unwrap());
        ut.push(f.u_t.unwrap());
    }
    let ui = ctx.tape.concat_rows(&ui);
    let up = ctx.tape.concat_rows(&up);
    let ub = ctx.tape.concat_rows(&ub);
    let ut = ctx.tape.concat_rows(&ut);
    [
        model.g_i.forward(ctx, ui),
        model.g_p.forward(ctx, up),
        model.g_b.forward(ctx, ub),
        model.g_t.forward(ctx, ut),
    ]
}

/// The bi-level objective on a batch, without augmentation and without gradients.
pub fn evaluate_loss(model: &MultiModalModel, batch: &[&PatientInput], cfg: &ContrastiveConfig) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::data("contrastive loss needs at least two patients"));
    }
    let mut ctx = Ctx::frozen(&model.store);
    let z = batch_latents(&mut ctx, model, batch, cfg.attention, None);
    let l = multi_loss_var(&mut ctx, z, cfg.loss(), cfg.lambda);
    Ok(ctx.scalar(l))
}

/// Trains `model` in place. On divergence the parameters are restored to
/// the end of the last finite epoch before the error is returned.
pub fn train_contrastive(
    model: &mut MultiModalModel,
    inputs: &[PatientInput],
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if inputs.len() < 2 {
        return Err(Error::data("contrastive split needs at least two patients"));
    }
    let schedule = StepLr {
        base_lr: cfg.lr,
        gamma: cfg.lr_gamma,
        step_size: cfg.lr_step,
    };
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut order_rng = rng::stream(seed, "contrastive-batches", 0);
    let mut aug_rng = rng::stream(seed, "contrastive-augment", 0);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_good = model.store.clone();
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let batch: Vec<&PatientInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let rotations: Option<Vec<Rotation>> = cfg
                .augment
                .then(|| batch.iter().map(|_| Rotation::random(&mut aug_rng)).collect());
            let (loss, grads) = {
                let mut ctx = Ctx::new(&model.store);
                let z = batch_latents(&mut ctx, model, &batch, cfg.attention, rotations.as_deref());
                let l = multi_loss_var(&mut ctx, z, cfg.loss(), cfg.lambda);
                (ctx.scalar(l), ctx.param_grads(l))
            };
            if !loss.is_finite() || !grads.is_finite() {
                model.store = last_good;
                return Err(Error::Divergence {
                    stage: "contrastive".into(),
                    epoch,
                });
            }
            opt.step(&mut model.store, &grads, lr);
            total += loss;
            batches += 1;
        }
        history.push(EpochLoss {
            epoch,
            loss: total / batches.max(1) as f64,
            lr,
        });
        if model.store.flatten().iter().all(|&v| (v as f32).is_finite()) {
            last_good.clone_from(&model.store);
        } else {
            model.store = last_good;
            return Err(Error::Divergence {
                stage: "contrastive".into(),
                epoch,
            });
        }
    }
    crate::io::finish_training(&mut model.store, "contrastive", cfg.epochs.saturating_sub(1))?;
    Ok(history)
}
