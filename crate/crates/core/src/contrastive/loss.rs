//! Cross-modal contrastive losses with cosine similarity.
//!
//! For anchors `a` and targets `b` (rows matched by patient), row `i` costs
//! `-log( exp(S(a_i,b_i)/τ) / Σ_{j≠i} exp(S(a_i,b_j)/τ) )`. The positive pair
//! is left out of the denominator unless `include_positive` is set, which
//! gives the usual InfoNCE form.

use mmgt_autograd::{Mat, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Ctx;

/// Rows with a norm below this are rejected.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub include_positive: bool,
}

impl LossConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            include_positive: false,
        }
    }
}

pub fn check_batch(a: &Mat, b: &Mat, tau: f64) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::data(format!("latent batches differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.nrows() < 2 {
        return Err(Error::data("contrastive loss needs a batch of at least 2"));
    }
    if !(tau > 0.0) {
        return Err(Error::config(format!("temperature must be > 0, got {tau}")));
    }
    for (name, m) in [("anchor", a), ("target", b)] {
        for (i, r) in m.rows().into_iter().enumerate() {
            let n = r.dot(&r).sqrt();
            if !(n >= MIN_NORM) {
                return Err(Error::data(format!("{name} row {i} has zero norm; cosine undefined")));
            }
        }
    }
    Ok(())
}

/// Per-row losses (`N × 1`) on the tape. Inputs are checked by the caller.
pub fn rowwise(tape: &mut Tape, anchors: Var, targets: Var, cfg: LossConfig) -> Var {
    let n = tape.value(anchors).nrows();
    let a = tape.normalize_rows(anchors, MIN_NORM);
    let b = tape.normalize_rows(targets, MIN_NORM);
    let bt = tape.transpose(b);
    let s = tape.matmul(a, bt);
    // shift by the largest attainable logit, 1/τ, before exponentiating
    let logits = tape.scale(s, 1.0 / cfg.tau);
    let logits = tape.shift(logits, -1.0 / cfg.tau);
    let eye = Mat::eye(n);
    let diag_mask = tape.constant(eye.clone());
    let positive = tape.mul(logits, diag_mask);
    let positive = tape.row_sums(positive);
    let e = tape.exp(logits);
    let keep = if cfg.include_positive {
        Mat::ones((n, n))
    } else {
        Mat::ones((n, n)) - &eye
    };
    let keep = tape.constant(keep);
    let e = tape.mul(e, keep);
    let denom = tape.row_sums(e);
    let log_denom = tape.log(denom);
    tape.sub(log_denom, positive)
}

/// Mean over rows, as a `1 × 1` var.
pub fn mean_loss(tape: &mut Tape, anchors: Var, targets: Var, cfg: LossConfig) -> Var {
    let rows = rowwise(tape, anchors, targets, cfg);
    tape.mean_all(rows)
}

fn evaluate(a: &Mat, b: &Mat, cfg: LossConfig) -> Result<f64> {
    check_batch(a, b, cfg.tau)?;
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let vb = tape.constant(b.clone());
    let l = mean_loss(&mut tape, va, vb, cfg);
    Ok(tape.scalar(l))
}

/// Brain-network edge loss between anatomical and FA projections.
pub fn edge_contrastive_loss(z_e: &Mat, z_e_fa: &Mat, cfg: LossConfig) -> Result<f64> {
    evaluate(z_e, z_e_fa, cfg)
}

/// Image anchors against geometry targets.
pub fn loss_i2p(z_i: &Mat, z_p: &Mat, cfg: LossConfig) -> Result<f64> {
    evaluate(z_i, z_p, cfg)
}

/// Geometry anchors against image targets.
pub fn loss_p2i(z_p: &Mat, z_i: &Mat, cfg: LossConfig) -> Result<f64> {
    evaluate(z_p, z_i, cfg)
}

/// Brain-network anchors against tumor targets. There is no reverse term.
pub fn loss_b2t(z_b: &Mat, z_t: &Mat, cfg: LossConfig) -> Result<f64> {
    evaluate(z_b, z_t, cfg)
}

/// The bi-level objective
/// `λ (L^P2I + L^I2P)/2 + (1-λ) L^B2T`, each term a batch mean.
pub fn multi_loss_var(ctx: &mut Ctx, z: [Var; 4], cfg: LossConfig, lambda: f64) -> Var {
    let [zi, zp, zb, zt] = z;
    let i2p = mean_loss(&mut ctx.tape, zi, zp, cfg);
    let p2i = mean_loss(&mut ctx.tape, zp, zi, cfg);
    let b2t = mean_loss(&mut ctx.tape, zb, zt, cfg);
    let tumor = ctx.tape.add(i2p, p2i);
    let tumor = ctx.tape.scale(tumor, 0.5);
    let tumor = ctx.tape.scale(tumor, lambda);
    let brain = ctx.tape.scale(b2t, 1.0 - lambda);
    ctx.tape.add(tumor, brain)
}

pub fn loss_multi(z_i: &Mat, z_p: &Mat, z_b: &Mat, z_t: &Mat, cfg: LossConfig, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda must be in [0,1], got {lambda}")));
    }
    check_batch(z_i, z_p, cfg.tau)?;
    check_batch(z_b, z_t, cfg.tau)?;
    if z_i.nrows() != z_b.nrows() {
        return Err(Error::data("tumor-level and brain-level batches differ in size"));
    }
    let store = mmgt_autograd::ParamStore::new();
    let mut ctx = Ctx::new(&store);
    let vars = [z_i, z_p, z_b, z_t].map(|m| ctx.constant(m.clone()));
    let l = multi_loss_var(&mut ctx, vars, cfg, lambda);
    Ok(ctx.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_identical_rows_cost_nothing() {
        let z = Mat::from_elem((2, 3), 1.0 / 3f64.sqrt());
        assert!(loss_i2p(&z, &z, LossConfig::new(0.1)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn orthonormal_triplet_closed_form() {
        let z = Mat::eye(3);
        let l = loss_b2t(&z, &z, LossConfig::new(1.0)).unwrap();
        assert!((l - (-1.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn swapped_pair_matches_hand_evaluation() {
        let a = Mat::from_shape_vec((2, 2), vec![1.0, 0.0, 0.6, 0.8]).unwrap();
        let b = Mat::from_shape_vec((2, 2), vec![0.6, 0.8, 1.0, 0.0]).unwrap();
        let tau = 0.5;
        // row 0: matched s(a0,b0)=0.6, other s(a0,b1)=1.0; row 1: 0.6 vs 1.0
        let expected = -((0.6f64 / tau) - (1.0 / tau));
        let l = edge_contrastive_loss(&a, &b, LossConfig::new(tau)).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!(l > 0.0);
    }

    #[test]
    fn rejects_degenerate_batches() {
        let z = Mat::ones((1, 3));
        assert!(loss_i2p(&z, &z, LossConfig::new(0.1)).is_err());
        let mut z = Mat::ones((3, 3));
        z.row_mut(1).fill(0.0);
        assert!(loss_i2p(&z, &Mat::ones((3, 3)), LossConfig::new(0.1)).is_err());
    }
}
