//! Self-supervised brain-network construction: a node-attribute autoencoder
//! over region voxels and anatomical/FA edge encoders aligned with the edge
//! contrastive loss.

use std::path::Path;

use mmgt_autograd::optim::{Adam, Optimizer, Sgd, StepLr};
use mmgt_autograd::{Mat, ParamStore};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contrastive::loss::{self, LossConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::layers::{Ctx, Mlp};
use crate::rng;
use crate::types::{Atlas, BrainNetwork, MultiChannelVolume, Voxel, ANATOMICAL_CHANNELS, FA_CHANNEL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrainnetConfig {
    pub node_samples: usize,
    pub edge_samples: usize,
    pub fa_samples: usize,
    /// Hidden widths of the node encoder; the last entry is the attribute
    /// dimension. The decoder mirrors them.
    pub node_widths: Vec<usize>,
    pub edge_widths: Vec<usize>,
    pub fa_widths: Vec<usize>,
    pub projection_widths: Vec<usize>,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub ae_batch: usize,
    pub edge_epochs: usize,
    pub edge_lr: f64,
    pub edge_momentum: f64,
    pub edge_batch: usize,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub tau_edge: f64,
    pub include_positive_in_denominator: bool,
}

impl Default for BrainnetConfig {
    fn default() -> Self {
        Self {
            node_samples: 512,
            edge_samples: 256,
            fa_samples: 64,
            node_widths: vec![256, 128, 64, 32, 16],
            edge_widths: vec![256, 128, 64, 32, 16],
            fa_widths: vec![64, 32, 16],
            projection_widths: vec![32, 32],
            ae_epochs: 100,
            ae_lr: 1e-3,
            ae_batch: 50,
            edge_epochs: 100,
            edge_lr: 1e-2,
            edge_momentum: 0.9,
            edge_batch: 50,
            weight_decay: 5e-4,
            lr_gamma: 0.9,
            lr_step: 50,
            tau_edge: 0.1,
            include_positive_in_denominator: false,
        }
    }
}

impl BrainnetConfig {
    pub fn paper() -> Self {
        Self {
            node_samples: 4000,
            edge_samples: 4000,
            fa_samples: 1000,
            node_widths: vec![2048, 1024, 512, 128, 32, 16],
            edge_widths: vec![2048, 1024, 512, 128, 32, 16],
            fa_widths: vec![1024, 512, 128, 32, 16],
            ae_epochs: 1000,
            edge_epochs: 1000,
            edge_lr: 1e-3,
            edge_momentum: 0.0,
            ..Self::default()
        }
    }

    pub fn attr_dim(&self) -> usize {
        *self.node_widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_widths.is_empty() || self.edge_widths.is_empty() || self.fa_widths.is_empty() {
            return Err(Error::config("brainnet widths must be non-empty"));
        }
        if self.node_widths.last() != self.edge_widths.last() || self.edge_widths.last() != self.fa_widths.last() {
            return Err(Error::config("node, edge and FA encoders must share one attribute dimension"));
        }
        if self.node_samples == 0 || self.edge_samples == 0 || self.fa_samples == 0 {
            return Err(Error::config("voxel sample sizes must be positive"));
        }
        if !(self.tau_edge > 0.0) {
            return Err(Error::config("tau_edge must be > 0"));
        }
        if self.ae_batch == 0 || self.edge_batch < 2 {
            return Err(Error::config("autoencoder batch must be >= 1 and edge batch >= 2"));
        }
        Ok(())
    }

    fn loss(&self) -> LossConfig {
        LossConfig {
            tau: self.tau_edge,
            include_positive: self.include_positive_in_denominator,
        }
    }
}

/// Fixed-length resampling of a voxel set: with the set in `(x, y, z)` scan
/// order, sample `k` takes voxel `floor(k·V/n)`. Values of each requested
/// channel are concatenated, channel-major.
pub fn sample_voxels(volume: &MultiChannelVolume, voxels: &[Voxel], channels: &[usize], n: usize) -> Result<Vec<f64>> {
    if voxels.is_empty() {
        return Err(Error::data("cannot sample an empty voxel set"));
    }
    let mut sorted = voxels.to_vec();
    sorted.sort_unstable();
    let v = sorted.len();
    let mut out = Vec::with_capacity(n * channels.len());
    for &c in channels {
        for k in 0..n {
            out.push(volume.at(c, sorted[k * v / n]) as f64);
        }
    }
    Ok(out)
}

pub fn sample_region_voxels(volume: &MultiChannelVolume, atlas: &Atlas, region: usize, n: usize) -> Result<Vec<f64>> {
    let voxels = atlas
        .region_voxels
        .get(region)
        .ok_or_else(|| Error::data(format!("region {region} does not exist")))?;
    if voxels.is_empty() {
        return Err(Error::data(format!("region {region} is empty")));
    }
    sample_voxels(volume, voxels, &anatomical(), n)
}

fn anatomical() -> Vec<usize> {
    (0..ANATOMICAL_CHANNELS).collect()
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct NodeAutoencoder {
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub input_dim: usize,
}

impl NodeAutoencoder {
    pub fn new(cfg: &BrainnetConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "node-ae-init", 0);
        let mut store = ParamStore::new();
        let input_dim = cfg.node_samples * ANATOMICAL_CHANNELS;
        let mut enc = vec![input_dim];
        enc.extend(&cfg.node_widths);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        let encoder = Mlp::new(&mut store, &mut rng, "enc", &enc);
        let decoder = Mlp::new(&mut store, &mut rng, "dec", &dec);
        Self {
            store,
            encoder,
            decoder,
            input_dim,
        }
    }

    pub fn attr_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, x: &Mat) -> Mat {
        let mut ctx = Ctx::frozen(&self.store);
        let v = ctx.constant(x.clone());
        let z = self.encoder.forward(&mut ctx, v);
        ctx.value(z).clone()
    }

    /// Mean squared reconstruction error and its parameter gradients.
    pub fn loss_and_grads(&self, x: &Mat) -> (f64, mmgt_autograd::GradStore) {
        let mut ctx = Ctx::new(&self.store);
        let v = ctx.constant(x.clone());
        let z = self.encoder.forward(&mut ctx, v);
        let r = self.decoder.forward(&mut ctx, z);
        let l = ctx.tape.mse(r, x);
        (ctx.scalar(l), ctx.param_grads(l))
    }

    pub fn reconstruction_loss(&self, x: &Mat) -> f64 {
        let mut ctx = Ctx::frozen(&self.store);
        let v = ctx.constant(x.clone());
        let z = self.encoder.forward(&mut ctx, v);
        let r = self.decoder.forward(&mut ctx, z);
        let l = ctx.tape.mse(r, x);
        ctx.scalar(l)
    }
}

/// Trains the autoencoder on the rows of `data` with Adam and the step
/// schedule; one history entry per epoch (mean minibatch loss).
pub fn train_node_autoencoder(
    data: &Mat,
    cfg: &BrainnetConfig,
    seed: u64,
) -> Result<(NodeAutoencoder, Vec<EpochLoss>)> {
    cfg.validate()?;
    let mut ae = NodeAutoencoder::new(cfg, seed);
    if data.ncols() != ae.input_dim {
        return Err(Error::data(format!(
            "autoencoder input has {} columns, expected {}",
            data.ncols(),
            ae.input_dim
        )));
    }
    if data.nrows() == 0 {
        return Err(Error::data("no region samples to train the autoencoder on"));
    }
    let schedule = StepLr {
        base_lr: cfg.ae_lr,
        gamma: cfg.lr_gamma,
        step_size: cfg.lr_step,
    };
    let mut opt = Adam::new(cfg.weight_decay);
    let mut rng = rng::stream(seed, "node-ae-batches", 0);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.ae_epochs);
    for epoch in 0..cfg.ae_epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for batch in order.chunks(cfg.ae_batch) {
            let x = data.select(ndarray::Axis(0), batch);
            let (l, grads) = ae.loss_and_grads(&x);
            if !l.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    stage: "node-autoencoder".into(),
                    epoch,
                });
            }
            opt.step(&mut ae.store, &grads, lr);
            total += l * batch.len() as f64;
            count += batch.len();
        }
        history.push(EpochLoss {
            epoch,
            loss: total / count as f64,
            lr,
        });
    }
    io::finish_training(&mut ae.store, "node-autoencoder", cfg.ae_epochs.saturating_sub(1))?;
    Ok((ae, history))
}

/// Anatomical and FA tract encoders with their projection heads.
#[derive(Clone, Debug)]
pub struct EdgeEncoderPair {
    pub store: ParamStore,
    pub anatomical: Mlp,
    pub fa: Mlp,
    pub proj: Mlp,
    pub proj_fa: Mlp,
    pub loss: LossConfig,
}

impl EdgeEncoderPair {
    pub fn new(cfg: &BrainnetConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "edge-init", 0);
        let mut store = ParamStore::new();
        let mut w = vec![cfg.edge_samples * ANATOMICAL_CHANNELS];
        w.extend(&cfg.edge_widths);
        let anatomical = Mlp::new(&mut store, &mut rng, "anat", &w);
        let mut w = vec![cfg.fa_samples];
        w.extend(&cfg.fa_widths);
        let fa = Mlp::new(&mut store, &mut rng, "fa", &w);
        let mut w = vec![cfg.attr_dim()];
        w.extend(&cfg.projection_widths);
        let proj = Mlp::new(&mut store, &mut rng, "proj", &w);
        let proj_fa = Mlp::new(&mut store, &mut rng, "proj_fa", &w);
        Self {
            store,
            anatomical,
            fa,
            proj,
            proj_fa,
            loss: cfg.loss(),
        }
    }

    /// Edge attributes from anatomical tract samples only.
    pub fn encode(&self, anat: &Mat) -> Mat {
        let mut ctx = Ctx::frozen(&self.store);
        let v = ctx.constant(anat.clone());
        let z = self.anatomical.forward(&mut ctx, v);
        ctx.value(z).clone()
    }

    /// Projected latents `(z^E, z^E')` for a batch.
    pub fn project(&self, anat: &Mat, fa: &Mat) -> (Mat, Mat) {
        let mut ctx = Ctx::frozen(&self.store);
        let (a, b) = self.forward(&mut ctx, anat, fa);
        (ctx.value(a).clone(), ctx.value(b).clone())
    }

    fn forward(&self, ctx: &mut Ctx, anat: &Mat, fa: &Mat) -> (mmgt_autograd::Var, mmgt_autograd::Var) {
        let a = ctx.constant(anat.clone());
        let f = ctx.constant(fa.clone());
        let va = self.anatomical.forward(ctx, a);
        let vf = self.fa.forward(ctx, f);
        (self.proj.forward(ctx, va), self.proj_fa.forward(ctx, vf))
    }

    pub fn loss_and_grads(&self, anat: &Mat, fa: &Mat) -> (f64, mmgt_autograd::GradStore) {
        let mut ctx = Ctx::new(&self.store);
        let (za, zf) = self.forward(&mut ctx, anat, fa);
        let l = loss::mean_loss(&mut ctx.tape, za, zf, self.loss);
        (ctx.scalar(l), ctx.param_grads(l))
    }
}

/// Tract samples for every tract of one volume: anatomical `E × (n·4)` and
/// FA `E × n_fa`.
pub fn tract_samples(volume: &MultiChannelVolume, atlas: &Atlas, cfg: &BrainnetConfig) -> Result<(Mat, Mat)> {
    let e = atlas.n_tracts();
    let mut anat = Mat::zeros((e, cfg.edge_samples * ANATOMICAL_CHANNELS));
    let mut fa = Mat::zeros((e, cfg.fa_samples));
    for (i, t) in atlas.tracts.iter().enumerate() {
        let a = sample_voxels(volume, &t.voxels, &anatomical(), cfg.edge_samples)?;
        anat.row_mut(i).assign(&ndarray::Array1::from(a));
        if volume.channels() <= FA_CHANNEL {
            return Err(Error::data("edge encoder training needs the FA-like channel"));
        }
        let f = sample_voxels(volume, &t.voxels, &[FA_CHANNEL], cfg.fa_samples)?;
        fa.row_mut(i).assign(&ndarray::Array1::from(f));
    }
    Ok((anat, fa))
}

/// Region samples for every region of one volume, `R × (n·4)`.
pub fn region_samples(volume: &MultiChannelVolume, atlas: &Atlas, cfg: &BrainnetConfig) -> Result<Mat> {
    let mut out = Mat::zeros((atlas.n_regions(), cfg.node_samples * ANATOMICAL_CHANNELS));
    for r in 0..atlas.n_regions() {
        let s = sample_region_voxels(volume, atlas, r, cfg.node_samples)?;
        out.row_mut(r).assign(&ndarray::Array1::from(s));
    }
    Ok(out)
}

/// Minimises the edge contrastive loss with SGD over shuffled minibatches of
/// tract rows. Trailing batches smaller than 2 are dropped.
pub fn train_edge_encoders(
    anat: &Mat,
    fa: &Mat,
    cfg: &BrainnetConfig,
    seed: u64,
) -> Result<(EdgeEncoderPair, Vec<EpochLoss>)> {
    cfg.validate()?;
    let mut pair = EdgeEncoderPair::new(cfg, seed);
    if anat.nrows() != fa.nrows() || anat.nrows() < 2 {
        return Err(Error::data("edge training needs at least two matched tract samples"));
    }
    let schedule = StepLr {
        base_lr: cfg.edge_lr,
        gamma: cfg.lr_gamma,
        step_size: cfg.lr_step,
    };
    let mut opt = Sgd::new(cfg.edge_momentum, cfg.weight_decay);
    let mut rng = rng::stream(seed, "edge-batches", 0);
    let mut order: Vec<usize> = (0..anat.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.edge_epochs);
    for epoch in 0..cfg.edge_epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.edge_batch).filter(|b| b.len() >= 2) {
            let a = anat.select(ndarray::Axis(0), batch);
            let f = fa.select(ndarray::Axis(0), batch);
            let (l, grads) = pair.loss_and_grads(&a, &f);
            if !l.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    stage: "edge-encoders".into(),
                    epoch,
                });
            }
            opt.step(&mut pair.store, &grads, lr);
            total += l;
            batches += 1;
        }
        history.push(EpochLoss {
            epoch,
            loss: total / batches.max(1) as f64,
            lr,
        });
    }
    if cfg.edge_epochs > 0 {
        io::finish_training(&mut pair.store, "edge-encoders", cfg.edge_epochs - 1)?;
    }
    Ok((pair, history))
}

/// Node attributes from the autoencoder bottleneck, edge attributes from the
/// anatomical edge encoder; the FA branch is not used.
pub fn build_brain_network(
    volume: &MultiChannelVolume,
    atlas: &Atlas,
    ae: &NodeAutoencoder,
    pair: &EdgeEncoderPair,
    cfg: &BrainnetConfig,
) -> Result<BrainNetwork> {
    let nodes = ae.encode(&region_samples(volume, atlas, cfg)?);
    let e = atlas.n_tracts();
    let mut anat = Mat::zeros((e, cfg.edge_samples * ANATOMICAL_CHANNELS));
    for (i, t) in atlas.tracts.iter().enumerate() {
        if t.voxels.is_empty() {
            return Err(Error::data(format!("tract {i} is empty")));
        }
        let a = sample_voxels(volume, &t.voxels, &anatomical(), cfg.edge_samples)?;
        anat.row_mut(i).assign(&ndarray::Array1::from(a));
    }
    let edges = pair.encode(&anat);
    let round = |m: Mat| m.mapv(|v| v as f32 as f64);
    BrainNetwork::new(
        round(nodes),
        atlas.tracts.iter().map(|t| t.endpoints).collect(),
        round(edges),
        atlas.tracts.iter().map(|t| t.voxels.clone()).collect(),
    )
}

/// Side-car written next to the network tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkSidecar {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub attr_dim: usize,
    pub node_attrs: String,
    pub edge_attrs: String,
    pub edge_index: String,
    /// Edge voxel sets are the atlas tract footprints, referenced by tract
    /// index into this atlas file.
    pub edge_voxel_sets: String,
}

pub fn save_network(dir: &Path, net: &BrainNetwork, atlas_ref: &str) -> Result<()> {
    let f32m = |m: &Array2<f64>| m.mapv(|v| v as f32).into_dyn();
    io::save_tensor(dir.join("node_attrs.mmgt"), &f32m(net.node_attrs()))?;
    io::save_tensor(dir.join("edge_attrs.mmgt"), &f32m(net.edge_attrs()))?;
    let idx = Array2::from_shape_fn((net.n_edges(), 2), |(e, k)| {
        let (i, j) = net.edge_index()[e];
        (if k == 0 { i } else { j }) as f32
    });
    io::save_tensor(dir.join("edge_index.mmgt"), &idx.into_dyn())?;
    io::write_json(
        dir.join("network.json"),
        &NetworkSidecar {
            n_nodes: net.n_nodes(),
            n_edges: net.n_edges(),
            attr_dim: net.attr_dim(),
            node_attrs: "node_attrs.mmgt".into(),
            edge_attrs: "edge_attrs.mmgt".into(),
            edge_index: "edge_index.mmgt".into(),
            edge_voxel_sets: atlas_ref.into(),
        },
    )
}

pub fn load_network(dir: &Path, atlas: &Atlas) -> Result<BrainNetwork> {
    let side: NetworkSidecar = io::read_json(dir.join("network.json"))?;
    let mat = |name: &str| -> Result<Array2<f64>> {
        io::load_tensor::<f32>(dir.join(name))?
            .into_dimensionality::<ndarray::Ix2>()
            .map(|m| m.mapv(f64::from))
            .map_err(|_| Error::data(format!("{name} is not rank 2")))
    };
    let nodes = mat(&side.node_attrs)?;
    let edges = mat(&side.edge_attrs)?;
    let idx = mat(&side.edge_index)?;
    let pairs: Vec<(usize, usize)> = idx.rows().into_iter().map(|r| (r[0] as usize, r[1] as usize)).collect();
    if pairs.len() != atlas.n_tracts() {
        return Err(Error::data("network edge count differs from the atlas tract count"));
    }
    let sets = atlas.tracts.iter().map(|t| t.voxels.clone()).collect();
    BrainNetwork::new(nodes, pairs, edges, sets)
}

pub fn brainnet_architecture(cfg: &BrainnetConfig) -> serde_json::Value {
    serde_json::json!({
        "node_samples": cfg.node_samples,
        "edge_samples": cfg.edge_samples,
        "fa_samples": cfg.fa_samples,
        "node_widths": cfg.node_widths,
        "edge_widths": cfg.edge_widths,
        "fa_widths": cfg.fa_widths,
        "projection_widths": cfg.projection_widths,
        "channels": ANATOMICAL_CHANNELS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn volume(f: impl Fn(usize, usize, usize, usize) -> f32) -> MultiChannelVolume {
        let data = Array4::from_shape_fn((5, 6, 6, 6), |(c, x, y, z)| f(c, x, y, z));
        let names = crate::types::CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
        MultiChannelVolume::new(data, names, [1.0; 3]).unwrap()
    }

    #[test]
    fn exact_size_region_is_returned_in_scan_order() {
        let vol = volume(|c, x, y, z| (c * 1000 + x * 100 + y * 10 + z) as f32);
        let voxels = vec![[2, 1, 0], [0, 0, 1], [1, 5, 5]];
        let s = sample_voxels(&vol, &voxels, &[0, 1], 3).unwrap();
        assert_eq!(s, vec![1.0, 155.0, 210.0, 1001.0, 1155.0, 1210.0]);
    }

    #[test]
    fn constant_volume_gives_constant_vector() {
        let vol = volume(|_, _, _, _| 0.25);
        let s = sample_voxels(&vol, &[[1, 1, 1], [2, 2, 2]], &[0, 1, 2, 3], 7).unwrap();
        assert!(s.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn upsampling_repeats_each_voxel_equally() {
        let vol = volume(|_, x, y, z| (x * 36 + y * 6 + z) as f32);
        let voxels: Vec<Voxel> = (0..10).map(|i| [i / 6, i % 6, 0]).collect();
        let s = sample_voxels(&vol, &voxels, &[0], 20).unwrap();
        for v in &voxels {
            let value = (v[0] * 36 + v[1] * 6 + v[2]) as f64;
            assert_eq!(s.iter().filter(|&&x| x == value).count(), 2);
        }
    }

    #[test]
    fn zero_epoch_edge_training_returns_the_initial_pair() {
        let cfg = BrainnetConfig {
            edge_epochs: 0,
            edge_samples: 4,
            fa_samples: 4,
            ..Default::default()
        };
        let anat = Mat::from_shape_fn((6, 16), |(i, j)| (i * 16 + j) as f64 * 0.01);
        let fa = Mat::from_shape_fn((6, 4), |(i, j)| (i + j) as f64 * 0.1);
        let (pair, hist) = train_edge_encoders(&anat, &fa, &cfg, 5).unwrap();
        assert!(hist.is_empty());
        assert_eq!(pair.store, EdgeEncoderPair::new(&cfg, 5).store);
    }
}
