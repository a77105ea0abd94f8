//! Population graph over patients and the transductive graph-attention node
//! classifier trained on it.

use mmgt_autograd::optim::{Adam, Optimizer, StepLr};
use mmgt_autograd::{Mat, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::brainnet::EpochLoss;
use crate::encoders::PatientFeatures;
use crate::error::{Error, Result};
use crate::layers::{Ctx, EdgeSet, GatConv, Linear};
use crate::metrics::{self, Metrics};
use crate::rng;

/// Which per-patient feature a node weight or an edge similarity reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// `u^T = ⟨u^I, u^P⟩`
    Tumor,
    /// `u^B`
    Brain,
    /// `⟨u^T, u^B⟩`
    Both,
}

impl FeatureSource {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Tumor => "u^T",
            Self::Brain => "u^B",
            Self::Both => "<u^T,u^B>",
        }
    }

    pub fn extract(self, f: &PatientFeatures) -> Vec<f64> {
        match self {
            Self::Tumor => f.u_t(),
            Self::Brain => f.u_b.clone(),
            Self::Both => {
                let mut v = f.u_t();
                v.extend(&f.u_b);
                v
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub node: FeatureSource,
    pub edge: FeatureSource,
}

impl Scheme {
    /// The five node/edge combinations, in table order.
    pub const ALL: [Scheme; 5] = [
        Scheme {
            node: FeatureSource::Tumor,
            edge: FeatureSource::Brain,
        },
        Scheme {
            node: FeatureSource::Brain,
            edge: FeatureSource::Tumor,
        },
        Scheme {
            node: FeatureSource::Both,
            edge: FeatureSource::Brain,
        },
        Scheme {
            node: FeatureSource::Both,
            edge: FeatureSource::Tumor,
        },
        Scheme {
            node: FeatureSource::Both,
            edge: FeatureSource::Both,
        },
    ];

    pub fn label(&self) -> String {
        format!("node {} / edge r({})", self.node.symbol(), self.edge.symbol())
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|s| s == self).expect("all schemes are listed")
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::config(format!("unknown scheme {i}; expected 0..{}", Self::ALL.len())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Cosine,
    Pearson,
}

pub fn similarity(a: &[f64], b: &[f64], kind: Similarity) -> f64 {
    let (a, b) = match kind {
        Similarity::Cosine => (a.to_vec(), b.to_vec()),
        Similarity::Pearson => {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            (a.iter().map(|x| x - ma).collect(), b.iter().map(|x| x - mb).collect())
        }
    };
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Role of a patient node in transductive training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Train,
    Test,
    /// In the graph for message passing only.
    Context,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationGraph {
    pub scheme: Scheme,
    pub ids: Vec<String>,
    pub node_weights: Mat,
    /// `(i, j, w)` with `i < j` and `w ≥ θ`.
    pub edges: Vec<(usize, usize, f64)>,
    pub labels: Vec<Option<u8>>,
    pub roles: Vec<NodeRole>,
}

impl PopulationGraph {
    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn mask(&self, role: NodeRole) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.roles[i] == role).collect()
    }
}

/// All pairs `i < j` whose similarity reaches `theta`.
pub fn threshold_edges(features: &[Vec<f64>], theta: f64, kind: Similarity) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let r = similarity(&features[i], &features[j], kind);
            if r >= theta {
                out.push((i, j, r));
            }
        }
    }
    out
}

/// Per-column mean and inverse standard deviation (0 for constant columns).
pub fn column_stats(m: &Mat) -> (Vec<f64>, Vec<f64>) {
    m.columns()
        .into_iter()
        .map(|col| {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            (mean, if sd > 1e-12 { 1.0 / sd } else { 0.0 })
        })
        .unzip()
}

/// Column-wise z-score; constant columns become zero.
pub fn standardize(m: &mut Mat) {
    let (mean, inv) = column_stats(m);
    for (k, mut col) in m.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|x| (x - mean[k]) * inv[k]);
    }
}

pub fn build_population_graph(
    features: &[PatientFeatures],
    roles: &[NodeRole],
    scheme: Scheme,
    theta: f64,
    kind: Similarity,
) -> Result<PopulationGraph> {
    if features.is_empty() || features.len() != roles.len() {
        return Err(Error::data("population graph needs one role per patient, at least one patient"));
    }
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::config(format!("theta must be in [-1,1], got {theta}")));
    }
    let nodes: Vec<Vec<f64>> = features.iter().map(|f| scheme.node.extract(f)).collect();
    let edge_feats: Vec<Vec<f64>> = features.iter().map(|f| scheme.edge.extract(f)).collect();
    for (name, set) in [("node", &nodes), ("edge", &edge_feats)] {
        let d = set[0].len();
        if d == 0 || set.iter().any(|v| v.len() != d) {
            return Err(Error::data(format!("{name} features have inconsistent dimensions")));
        }
    }
    let to_mat = |set: &[Vec<f64>]| {
        let mut m = Mat::from_shape_fn((set.len(), set[0].len()), |(i, k)| set[i][k]);
        standardize(&mut m);
        m
    };
    let node_weights = to_mat(&nodes);
    let edge_feats: Vec<Vec<f64>> = to_mat(&edge_feats).rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(PopulationGraph {
        scheme,
        ids: features.iter().map(|f| f.id.clone()).collect(),
        node_weights,
        edges: threshold_edges(&edge_feats, theta, kind),
        labels: features.iter().map(|f| f.label).collect(),
        roles: roles.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub widths: Vec<usize>,
    pub theta: f64,
    pub similarity: Similarity,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_step: usize,
    /// Weight each class by the inverse of its training frequency.
    pub class_balanced: bool,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 32, 32],
            theta: 0.5,
            similarity: Similarity::Cosine,
            epochs: 200,
            lr: 1e-3,
            weight_decay: 5e-4,
            lr_gamma: 0.9,
            lr_step: 50,
            class_balanced: true,
            threshold: 0.5,
        }
    }
}

impl ClassifierConfig {
    pub fn paper() -> Self {
        Self {
            widths: vec![64, 128, 128, 128],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("classifier.widths must be non-empty and positive"));
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(Error::config(format!("classifier.theta must be in [-1,1], got {}", self.theta)));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::config("classifier.lr must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NodeClassifier {
    pub store: ParamStore,
    pub layers: Vec<GatConv>,
    pub out: Linear,
}

impl NodeClassifier {
    pub fn new(cfg: &ClassifierConfig, in_dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "classifier-init", 0);
        let mut store = ParamStore::new();
        let mut c = in_dim;
        let mut layers = Vec::new();
        for (i, &w) in cfg.widths.iter().enumerate() {
            layers.push(GatConv::new(&mut store, &mut rng, &format!("gat{i}"), c, w, Some(1)));
            c = w;
        }
        let out = Linear::new(&mut store, &mut rng, "out", c, 1);
        crate::io::round_params(&mut store);
        Self { store, layers, out }
    }

    /// Logits for every node (`n × 1`).
    pub fn logits(&self, ctx: &mut Ctx, graph: &PopulationGraph) -> Var {
        let h = ctx.constant(graph.node_weights.clone());
        self.logits_with(ctx, graph, h)
    }

    /// Logits with node features supplied as a var (`n × d`).
    pub fn logits_with(&self, ctx: &mut Ctx, graph: &PopulationGraph, nodes: Var) -> Var {
        let pairs: Vec<(usize, usize)> = graph.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let edges = EdgeSet::undirected(graph.n_nodes(), &pairs, true);
        let w = Mat::from_shape_fn((graph.edges.len(), 1), |(e, _)| graph.edges[e].2);
        let w = ctx.constant(w);
        let attrs = edges.expand_attrs(ctx, w);
        let mut h = nodes;
        for layer in &self.layers {
            h = layer.forward(ctx, h, &edges, Some(attrs));
            h = ctx.tape.relu(h);
        }
        self.out.forward(ctx, h)
    }

    pub fn probabilities(&self, graph: &PopulationGraph) -> Vec<f64> {
        let mut ctx = Ctx::frozen(&self.store);
        let l = self.logits(&mut ctx, graph);
        ctx.value(l).iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect()
    }
}

/// Per-node BCE target and weight; only training nodes carry weight.
pub fn loss_weights(graph: &PopulationGraph, balanced: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let train = graph.mask(NodeRole::Train);
    if train.is_empty() {
        return Err(Error::data("empty training mask"));
    }
    let mut counts = [0usize; 2];
    for &i in &train {
        let l = graph.labels[i].ok_or_else(|| Error::data(format!("{}: training node without label", graph.ids[i])))?;
        if l > 1 {
            return Err(Error::data(format!("{}: non-binary label {l}", graph.ids[i])));
        }
        counts[l as usize] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::data("degenerate labels: training mask has a single class"));
    }
    let n = train.len() as f64;
    let mut targets = vec![0.0; graph.n_nodes()];
    let mut weights = vec![0.0; graph.n_nodes()];
    for &i in &train {
        let l = graph.labels[i].unwrap() as usize;
        targets[i] = l as f64;
        weights[i] = if balanced { n / (2.0 * counts[l] as f64) } else { 1.0 };
    }
    Ok((targets, weights))
}

fn loss_var(model: &NodeClassifier, ctx: &mut Ctx, graph: &PopulationGraph, targets: &[f64], weights: &[f64]) -> Var {
    let logits = model.logits(ctx, graph);
    ctx.tape.bce_with_logits(logits, targets, weights)
}

/// Training loss of `model` on `graph` (test-node labels never enter).
pub fn training_loss(model: &NodeClassifier, graph: &PopulationGraph, cfg: &ClassifierConfig) -> Result<f64> {
    let (t, w) = loss_weights(graph, cfg.class_balanced)?;
    let mut ctx = Ctx::frozen(&model.store);
    let l = loss_var(model, &mut ctx, graph, &t, &w);
    Ok(ctx.scalar(l))
}

/// Loss and parameter gradients, for checks and training.
pub fn loss_and_grads(
    model: &NodeClassifier,
    graph: &PopulationGraph,
    cfg: &ClassifierConfig,
) -> Result<(f64, mmgt_autograd::GradStore)> {
    let (t, w) = loss_weights(graph, cfg.class_balanced)?;
    let mut ctx = Ctx::new(&model.store);
    let l = loss_var(model, &mut ctx, graph, &t, &w);
    Ok((ctx.scalar(l), ctx.param_grads(l)))
}

/// Full-batch Adam on the training nodes.
pub fn train_node_classifier(
    graph: &PopulationGraph,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(NodeClassifier, Vec<EpochLoss>)> {
    cfg.validate()?;
    let mut model = NodeClassifier::new(cfg, graph.node_weights.ncols(), seed);
    let (targets, weights) = loss_weights(graph, cfg.class_balanced)?;
    let schedule = StepLr {
        base_lr: cfg.lr,
        gamma: cfg.lr_gamma,
        step_size: cfg.lr_step,
    };
    let mut opt = Adam::new(cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let (loss, grads) = {
            let mut ctx = Ctx::new(&model.store);
            let l = loss_var(&model, &mut ctx, graph, &targets, &weights);
            (ctx.scalar(l), ctx.param_grads(l))
        };
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence {
                stage: "classifier".into(),
                epoch,
            });
        }
        opt.step(&mut model.store, &grads, lr);
        history.push(EpochLoss { epoch, loss, lr });
    }
    crate::io::finish_training(&mut model.store, "classifier", cfg.epochs.saturating_sub(1))?;
    Ok((model, history))
}

/// Metrics on the test nodes.
pub fn evaluate(model: &NodeClassifier, graph: &PopulationGraph, threshold: f64) -> Result<Metrics> {
    let test = graph.mask(NodeRole::Test);
    if test.is_empty() {
        return Err(Error::data("empty test mask"));
    }
    let probs = model.probabilities(graph);
    let mut p = Vec::with_capacity(test.len());
    let mut l = Vec::with_capacity(test.len());
    for &i in &test {
        p.push(probs[i]);
        l.push(graph.labels[i].ok_or_else(|| Error::data(format!("{}: test node without label", graph.ids[i])))?);
    }
    metrics::evaluate(&p, &l, threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: usize,
    pub label: String,
    pub n_edges: usize,
    pub metrics: Metrics,
    pub final_loss: f64,
}

/// Builds, trains and evaluates every scheme with the same seed.
pub fn run_scheme_sweep(
    features: &[PatientFeatures],
    roles: &[NodeRole],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<SchemeResult>> {
    Scheme::ALL
        .iter()
        .map(|&scheme| {
            let graph = build_population_graph(features, roles, scheme, cfg.theta, cfg.similarity)?;
            let (model, history) = train_node_classifier(&graph, cfg, seed)?;
            Ok(SchemeResult {
                scheme: scheme.index(),
                label: scheme.label(),
                n_edges: graph.edges.len(),
                metrics: evaluate(&model, &graph, cfg.threshold)?,
                final_loss: history.last().map_or(f64::NAN, |h| h.loss),
            })
        })
        .collect()
}

/// Table with AUC, ACC, SEN, SPE columns; absent values print as `-`.
pub fn format_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    let mut out = format!("{:<width$}  {:>6} {:>6} {:>6} {:>6}\n", "Method", "AUC", "ACC", "SEN", "SPE");
    for (label, m) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6} {:>6} {:>6} {:>6}\n",
            label,
            f(m.auc),
            f(Some(m.acc)),
            f(m.sen),
            f(m.spe)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal_pairs() {
        let f = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let e = threshold_edges(&f, 0.5, Similarity::Cosine);
        assert_eq!(e.len(), 1);
        assert!((e[0].2 - 1.0).abs() < 1e-12);
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(threshold_edges(&g, 0.5, Similarity::Cosine).is_empty());
    }

    #[test]
    fn pearson_ignores_offsets() {
        let a = [1.0, 2.0, 3.0];
        let b = [11.0, 12.0, 13.0];
        assert!((similarity(&a, &b, Similarity::Pearson) - 1.0).abs() < 1e-12);
        assert!(similarity(&a, &b, Similarity::Cosine) < 1.0);
    }

    #[test]
    fn schemes_are_distinct_and_ordered() {
        assert_eq!(Scheme::ALL.len(), 5);
        for (i, s) in Scheme::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
        assert_eq!(Scheme::ALL[0].label(), "node u^T / edge r(u^B)");
    }
}
