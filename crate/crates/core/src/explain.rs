//! Per-patient interpretation exports: gradient-times-input saliency of the
//! image crop, point attention, and edge/node attention on the brain
//! network.

use std::path::Path;

use mmgt_autograd::Mat;
use serde::{Deserialize, Serialize};

use crate::encoders::{Branches, ForwardOptions, MultiModalModel, PatientInput};
use crate::error::{Error, Result};
use crate::io;
use crate::layers::Ctx;
use crate::popgraph::{FeatureSource, NodeClassifier, PopulationGraph};
use crate::types::ANATOMICAL_CHANNELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAttention {
    pub coords: [f64; 3],
    pub attention: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttention {
    pub edge: usize,
    pub regions: (usize, usize),
    pub attention: f64,
    pub crossed: bool,
    /// At or above the median edge attention.
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub schema_version: u32,
    pub patient: String,
    pub scheme: usize,
    pub probability: f64,
    pub edge_cut: f64,
    pub points: Vec<PointAttention>,
    /// Sorted by attention, highest first (stable on ties).
    pub edges: Vec<EdgeAttention>,
    pub nodes: Vec<f64>,
    #[serde(skip)]
    pub saliency: Mat,
}

/// Median of `v` (mean of the two middle values for even lengths).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.is_empty() {
        f64::NAN
    } else if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Edge indices ordered by descending attention, ties by index.
pub fn rank_edges(attention: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..attention.len()).collect();
    idx.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]).then(a.cmp(&b)));
    idx
}

/// `|x ⊙ ∂score/∂x|` for the patient's image crop, where the score is the
/// classifier logit of the patient's node. Attentions come from the same
/// forward pass.
pub fn explain_patient(
    model: &MultiModalModel,
    classifier: &NodeClassifier,
    graph: &PopulationGraph,
    raw_nodes: &Mat,
    input: &PatientInput,
    attention: bool,
) -> Result<Explanation> {
    let p = graph
        .ids
        .iter()
        .position(|id| id == &input.id)
        .ok_or_else(|| Error::data(format!("{}: not a node of the population graph", input.id)))?;
    if raw_nodes.dim() != graph.node_weights.dim() {
        return Err(Error::data("raw node features do not match the graph"));
    }
    let (_, inv_sd) = crate::popgraph::column_stats(raw_nodes);

    // classifier stage: gradient of the patient's logit w.r.t. its node row
    let mut cctx = Ctx::frozen(&classifier.store);
    let nodes = cctx.input(graph.node_weights.clone());
    let logits = classifier.logits_with(&mut cctx, graph, nodes);
    let z = cctx.value(logits)[[p, 0]];
    let mut seed = Mat::zeros((graph.n_nodes(), 1));
    seed[[p, 0]] = 1.0;
    let g = cctx.tape.backward_with(&[(logits, seed)]);
    let g_nodes = g.get_or_zeros(&cctx.tape, nodes);
    let g_raw = Mat::from_shape_fn((1, raw_nodes.ncols()), |(_, k)| g_nodes[[p, k]] * inv_sd[k]);

    // encoder stage: pull that row gradient back to the image voxels
    let mut ctx = Ctx::frozen(&model.store);
    let opts = ForwardOptions {
        rotation: None,
        track_image: true,
    };
    let f = model.forward(&mut ctx, input, Branches::ALL, attention, opts);
    let parts: Vec<_> = match graph.scheme.node {
        FeatureSource::Tumor => vec![f.u_i, f.u_p],
        FeatureSource::Brain => vec![f.u_b],
        FeatureSource::Both => vec![f.u_i, f.u_p, f.u_b],
    }
    .into_iter()
    .flatten()
    .collect();
    let raw = ctx.tape.concat_cols(&parts);
    let x = f.image_input.expect("image branch is on");
    let grads = ctx.tape.backward_with(&[(raw, g_raw)]);
    let gx = grads.get_or_zeros(&ctx.tape, x);
    let saliency = (ctx.value(x) * &gx).mapv(f64::abs);

    let a_p: Vec<f64> = f.a_p.map(|v| ctx.value(v).iter().copied().collect()).unwrap_or_default();
    let a_e: Vec<f64> = match f.a_e {
        Some(v) => ctx.value(v).iter().copied().collect(),
        None => vec![1.0; input.network.n_edges()],
    };
    let a_n: Vec<f64> = match f.a_n {
        Some(v) => ctx.value(v).iter().copied().collect(),
        None => vec![1.0; input.network.n_nodes()],
    };
    let points = (0..input.cloud.len())
        .map(|k| PointAttention {
            coords: input.cloud.point(k),
            attention: a_p.get(k).copied().unwrap_or(f64::NAN),
        })
        .collect();
    let cut = median(&a_e);
    let edges = rank_edges(&a_e)
        .into_iter()
        .map(|e| EdgeAttention {
            edge: e,
            regions: input.network.edge_index()[e],
            attention: a_e[e],
            crossed: input.edge_map.crossed[e],
            selected: a_e[e] >= cut,
        })
        .collect();
    Ok(Explanation {
        schema_version: crate::pipeline::SCHEMA_VERSION,
        patient: input.id.clone(),
        scheme: graph.scheme.index(),
        probability: 1.0 / (1.0 + (-z).exp()),
        edge_cut: cut,
        points,
        edges,
        nodes: a_n,
        saliency,
    })
}

/// Writes `saliency.mmgt` (`4 × s × s × s`, f32) and `explanation.json`.
pub fn write_explanation(dir: &Path, e: &Explanation, side: usize) -> Result<()> {
    let s = e
        .saliency
        .mapv(|v| v as f32)
        .into_shape_with_order((ANATOMICAL_CHANNELS, side, side, side))
        .map_err(|_| Error::data("saliency shape mismatch"))?;
    io::save_tensor(dir.join("saliency.mmgt"), &s.into_dyn())?;
    io::write_json(dir.join("explanation.json"), e)
}
