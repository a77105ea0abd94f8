//! The three modality encoders and the hierarchical (edge, then node)
//! attention that couples the tumor branches to the brain-network branch.

use mmgt_autograd::{Mat, ParamStore, Var, VolumeDims};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, PointGraph};
use crate::layers::{AttentionPool, Conv3d, Ctx, EdgeSet, GatConv, Mlp, NnConv};
use crate::rng::Rng;
use crate::types::{BrainNetwork, MultiChannelVolume, PointsCloud, TumorImage, TumorMask, ANATOMICAL_CHANNELS};

/// How the node-attention cosine is turned into pooling weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeAttentionMode {
    /// `(1 + s) / 2`, in `[0, 1]`.
    Rescaled,
    /// The raw cosine `s`, in `[-1, 1]`.
    Raw,
    /// Softmax of the cosines over nodes.
    Softmax,
}

/// What counts as an edge "crossing" a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// Any voxel of the tract pathway.
    Pathway,
    /// Only the first and last voxel of the pathway, in scan order.
    Endpoints,
}

/// Rescaling of the point attention before it is projected onto edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointAttentionScale {
    /// Divide by the largest point attention so values span `(0, 1]`.
    Max,
    /// Use the softmax weights as they are.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub crop_side: usize,
    pub crop_pad: usize,
    pub image_widths: Vec<usize>,
    pub image_head: Vec<usize>,
    pub point_samples: usize,
    pub point_radius: f64,
    pub fps_seed_index: usize,
    pub point_widths: Vec<usize>,
    pub point_head: Vec<usize>,
    pub brain_widths: Vec<usize>,
    pub brain_head: Vec<usize>,
    pub node_projection: Vec<usize>,
    pub crossing_radius: f64,
    pub crossing_rule: CrossingRule,
    pub uncrossed_attention: f64,
    pub point_attention_scale: PointAttentionScale,
    pub node_attention: NodeAttentionMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            crop_side: 16,
            crop_pad: 2,
            image_widths: vec![16, 32, 32, 64, 64],
            image_head: vec![128, 64],
            point_samples: 256,
            point_radius: 2.0,
            fps_seed_index: 0,
            point_widths: vec![8, 16, 16, 32, 32],
            point_head: vec![64, 32],
            brain_widths: vec![16, 32, 32, 64, 64, 64],
            brain_head: vec![128, 64],
            node_projection: vec![16, 32, 64, 128],
            crossing_radius: 1.0,
            crossing_rule: CrossingRule::Pathway,
            uncrossed_attention: 0.1,
            point_attention_scale: PointAttentionScale::Max,
            node_attention: NodeAttentionMode::Rescaled,
        }
    }
}

impl EncoderConfig {
    pub fn paper() -> Self {
        Self {
            crop_side: 120,
            image_widths: vec![64, 128, 128, 256, 256],
            image_head: vec![512, 256],
            point_widths: vec![32, 64, 64, 128, 128],
            point_head: vec![256, 128],
            brain_widths: vec![64, 128, 128, 256, 256, 256],
            brain_head: vec![512, 256],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("image_widths", &self.image_widths),
            ("point_widths", &self.point_widths),
            ("brain_widths", &self.brain_widths),
            ("node_projection", &self.node_projection),
        ];
        for (name, l) in lists {
            if l.is_empty() || l.contains(&0) {
                return Err(Error::config(format!("encoders.{name} must be non-empty and positive")));
            }
        }
        if self.crop_side < 2 || self.point_samples == 0 || self.feature_dim == 0 {
            return Err(Error::config("crop side, point samples and feature dim must be positive"));
        }
        if !(self.point_radius > 0.0) || !(self.crossing_radius >= 0.0) {
            return Err(Error::config("point and crossing radii must be positive"));
        }
        Ok(())
    }
}

/// `f^I`: conv → ReLU → max-pool blocks, global mean, feed-forward head.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub convs: Vec<Conv3d>,
    pub head: Mlp,
    pub side: usize,
}

impl ImageEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, cfg: &EncoderConfig) -> Self {
        let mut c_in = ANATOMICAL_CHANNELS;
        let mut convs = Vec::new();
        for (i, &w) in cfg.image_widths.iter().enumerate() {
            convs.push(Conv3d::new(store, rng, &format!("image.conv{i}"), c_in, w));
            c_in = w;
        }
        let mut widths = vec![c_in];
        widths.extend(&cfg.image_head);
        widths.push(cfg.feature_dim);
        Self {
            convs,
            head: Mlp::new(store, rng, "image.head", &widths),
            side: cfg.crop_side,
        }
    }

    /// `x` is `4 × side³`; returns `1 × feature_dim`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let mut dims = VolumeDims::cube(self.side);
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(ctx, h, dims);
            h = ctx.tape.relu(h);
            h = ctx.tape.maxpool3d(h, dims);
            dims = dims.pooled();
        }
        let pooled = ctx.tape.row_means(h);
        let pooled = ctx.tape.transpose(pooled);
        self.head.forward(ctx, pooled)
    }
}

/// `f^P`: edge-conditioned point convolutions, softmax attention pooling and
/// a feed-forward head. The pooling weights are the point attention.
#[derive(Clone, Debug)]
pub struct GeometricEncoder {
    pub convs: Vec<NnConv>,
    pub pool: AttentionPool,
    pub head: Mlp,
}

impl GeometricEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, cfg: &EncoderConfig) -> Self {
        let mut c_in = 3;
        let mut convs = Vec::new();
        for (i, &w) in cfg.point_widths.iter().enumerate() {
            convs.push(NnConv::new(store, rng, &format!("points.conv{i}"), c_in, w));
            c_in = w;
        }
        let pool = AttentionPool::new(store, rng, "points.pool", c_in);
        let mut widths = vec![c_in];
        widths.extend(&cfg.point_head);
        widths.push(cfg.feature_dim);
        Self {
            convs,
            pool,
            head: Mlp::new(store, rng, "points.head", &widths),
        }
    }

    /// Returns `(u^P 1×d, a^P P×1)`.
    pub fn forward(&self, ctx: &mut Ctx, graph: &PointGraph, node_features: &Mat) -> (Var, Var) {
        let edges = EdgeSet::directed(graph.len(), &graph.edges);
        let d = Mat::from_shape_fn((graph.edges.len(), 1), |(m, _)| graph.edge_features[m] / graph.radius);
        let d = ctx.constant(d);
        let inv = ctx.constant(edges.inverse_in_degree());
        let mut h = ctx.constant(node_features.clone());
        for conv in &self.convs {
            h = conv.forward(ctx, h, &edges, d, inv);
            h = ctx.tape.relu(h);
        }
        let (pooled, weights) = self.pool.forward(ctx, h);
        (self.head.forward(ctx, pooled), weights)
    }
}

/// `f^B`: GAT stack producing node embeddings `e^N`, the node-attention
/// projection `g^N_a`, mean pooling and a feed-forward head.
#[derive(Clone, Debug)]
pub struct BrainNetworkEncoder {
    pub layers: Vec<GatConv>,
    pub node_projection: Mlp,
    pub head: Mlp,
    pub mode: NodeAttentionMode,
}

/// Attention inputs for one brain-network forward pass.
pub enum BrainAttention<'a> {
    /// No reweighting at all.
    Off,
    /// Edge attention `a^E` (`E × 1`) and tumor feature `⟨u^I, u^P⟩`
    /// (`1 × 2d`), from which node attention is derived through `g^T`.
    Hierarchical { edge: Var, tumor: Var, g_t: &'a Mlp },
    /// Externally supplied `a^E` (`E × 1`) and `a^N` (`R × 1`).
    Fixed { edge: Var, node: Var },
}

/// Intermediate values of one brain-network pass.
pub struct BrainOutput {
    pub u_b: Var,
    pub embeddings: Var,
    pub node_attention: Option<Var>,
    pub node_cosine: Option<Var>,
}

impl BrainNetworkEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, cfg: &EncoderConfig, attr_dim: usize) -> Self {
        let mut c_in = attr_dim;
        let mut layers = Vec::new();
        for (i, &w) in cfg.brain_widths.iter().enumerate() {
            layers.push(GatConv::new(store, rng, &format!("brain.gat{i}"), c_in, w, Some(attr_dim)));
            c_in = w;
        }
        let mut proj = vec![c_in];
        proj.extend(&cfg.node_projection);
        let mut head = vec![c_in];
        head.extend(&cfg.brain_head);
        head.push(cfg.feature_dim);
        Self {
            layers,
            node_projection: Mlp::new(store, rng, "brain.g_n", &proj),
            head: Mlp::new(store, rng, "brain.head", &head),
            mode: cfg.node_attention,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    /// Node embeddings `e^N` (`R × embed_dim`). Edge attributes are scaled
    /// by `edge_attention` when given.
    pub fn embed(&self, ctx: &mut Ctx, net: &BrainNetwork, edge_attention: Option<Var>) -> Var {
        let edges = EdgeSet::undirected(net.n_nodes(), net.edge_index(), true);
        let mut attrs = ctx.constant(net.edge_attrs().clone());
        if let Some(a) = edge_attention {
            attrs = ctx.tape.mul_col(attrs, a);
        }
        let expanded = edges.expand_attrs(ctx, attrs);
        let mut h = ctx.constant(net.node_attrs().clone());
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, h, &edges, Some(expanded));
            if i + 1 < self.layers.len() {
                h = ctx.tape.relu(h);
            }
        }
        h
    }

    /// Raw cosine between `g^N_a(e^N_i)` and `g^T(tumor)` per node (`R × 1`).
    pub fn node_cosine(&self, ctx: &mut Ctx, embeddings: Var, tumor: Var, g_t: &Mlp) -> Var {
        let pn = self.node_projection.forward(ctx, embeddings);
        let pt = g_t.forward(ctx, tumor);
        let pn = ctx.tape.normalize_rows(pn, crate::contrastive::loss::MIN_NORM);
        let pt = ctx.tape.normalize_rows(pt, crate::contrastive::loss::MIN_NORM);
        let ptt = ctx.tape.transpose(pt);
        ctx.tape.matmul(pn, ptt)
    }

    pub fn attention_from_cosine(&self, ctx: &mut Ctx, cosine: Var) -> Var {
        match self.mode {
            NodeAttentionMode::Rescaled => {
                let half = ctx.tape.scale(cosine, 0.5);
                ctx.tape.shift(half, 0.5)
            }
            NodeAttentionMode::Raw => cosine,
            NodeAttentionMode::Softmax => {
                let r = ctx.value(cosine).nrows();
                ctx.tape.segment_softmax(cosine, &vec![0; r], 1)
            }
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, net: &BrainNetwork, attention: BrainAttention) -> BrainOutput {
        let (edge, node_source) = match attention {
            BrainAttention::Off => (None, None),
            BrainAttention::Hierarchical { edge, tumor, g_t } => (Some(edge), Some((Some((tumor, g_t)), None))),
            BrainAttention::Fixed { edge, node } => (Some(edge), Some((None, Some(node)))),
        };
        let embeddings = self.embed(ctx, net, edge);
        let mut node_attention = None;
        let mut node_cosine = None;
        let mut h = embeddings;
        match node_source {
            Some((Some((tumor, g_t)), _)) => {
                let cos = self.node_cosine(ctx, embeddings, tumor, g_t);
                let a = self.attention_from_cosine(ctx, cos);
                h = ctx.tape.mul_col(embeddings, a);
                node_cosine = Some(cos);
                node_attention = Some(a);
            }
            Some((None, Some(a))) => {
                h = ctx.tape.mul_col(embeddings, a);
                node_attention = Some(a);
            }
            _ => {}
        }
        let pooled = ctx.tape.col_means(h);
        BrainOutput {
            u_b: self.head.forward(ctx, pooled),
            embeddings,
            node_attention,
            node_cosine,
        }
    }
}

/// Chebyshev distance between a point and a voxel.
fn chebyshev(p: [f64; 3], v: [usize; 3]) -> f64 {
    (0..3).map(|a| (p[a] - v[a] as f64).abs()).fold(0.0, f64::max)
}

/// Voxels of tract `e` that count for crossing under `rule`.
fn crossing_voxels(net: &BrainNetwork, e: usize, rule: CrossingRule) -> Vec<[usize; 3]> {
    let set = &net.edge_voxel_sets()[e];
    match rule {
        CrossingRule::Pathway => set.clone(),
        CrossingRule::Endpoints => {
            let mut s = set.clone();
            s.sort_unstable();
            match (s.first(), s.last()) {
                (Some(a), Some(b)) if a != b => vec![*a, *b],
                (Some(a), _) => vec![*a],
                _ => Vec::new(),
            }
        }
    }
}

/// `E × P` 0/1 matrix: point `k` is crossed by edge `e` when it lies within
/// Chebyshev distance `radius` of one of the edge's voxels.
pub fn crossing_matrix(points: &PointsCloud, net: &BrainNetwork, radius: f64, rule: CrossingRule) -> Mat {
    let mut m = Mat::zeros((net.n_edges(), points.len()));
    // bounding boxes prune most point/tract pairs
    for e in 0..net.n_edges() {
        let voxels = crossing_voxels(net, e, rule);
        if voxels.is_empty() {
            continue;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &voxels {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a] as f64);
                hi[a] = hi[a].max(v[a] as f64);
            }
        }
        for k in 0..points.len() {
            let p = points.point(k);
            if (0..3).any(|a| p[a] < lo[a] - radius || p[a] > hi[a] + radius) {
                continue;
            }
            if voxels.iter().any(|v| chebyshev(p, *v) <= radius) {
                m[[e, k]] = 1.0;
            }
        }
    }
    m
}

/// Precomputed linear form of the edge attention: `a^E = W a + c`, where
/// `W` averages over crossing points and `c` is the baseline on uncrossed
/// edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeAttentionMap {
    pub weights: Mat,
    pub baseline: Mat,
    pub crossed: Vec<bool>,
}

impl EdgeAttentionMap {
    pub fn new(crossing: &Mat, beta: f64) -> Self {
        let (e, p) = crossing.dim();
        let mut weights = Mat::zeros((e, p));
        let mut baseline = Mat::zeros((e, 1));
        let mut crossed = vec![false; e];
        for i in 0..e {
            let k: f64 = crossing.row(i).sum();
            if k > 0.0 {
                crossed[i] = true;
                for j in 0..p {
                    weights[[i, j]] = crossing[[i, j]] / k;
                }
            } else {
                baseline[[i, 0]] = beta;
            }
        }
        Self {
            weights,
            baseline,
            crossed,
        }
    }

    /// `attention` is `P × 1`; returns `E × 1`.
    pub fn apply(&self, ctx: &mut Ctx, attention: Var) -> Var {
        let w = ctx.constant(self.weights.clone());
        let c = ctx.constant(self.baseline.clone());
        let mean = ctx.tape.matmul(w, attention);
        ctx.tape.add(mean, c)
    }
}

/// Edge attention from per-point attention: mean attention of the points
/// each edge crosses, `beta` for edges that cross none.
pub fn edge_attention(
    attention: &[f64],
    points: &PointsCloud,
    net: &BrainNetwork,
    radius: f64,
    rule: CrossingRule,
    beta: f64,
) -> Result<Vec<f64>> {
    if attention.len() != points.len() {
        return Err(Error::data("attention and points are not aligned"));
    }
    let crossing = crossing_matrix(points, net, radius, rule);
    let map = EdgeAttentionMap::new(&crossing, beta);
    let a = Mat::from_shape_vec((attention.len(), 1), attention.to_vec()).unwrap();
    let out = map.weights.dot(&a) + &map.baseline;
    Ok(out.column(0).to_vec())
}

/// Node attention between projected node embeddings (`R × d`) and a
/// projected tumor feature (`d`), as the raw cosine of each row.
pub fn node_attention(projected_nodes: &Mat, projected_tumor: &[f64], mode: NodeAttentionMode) -> Result<Vec<f64>> {
    let tn = projected_tumor.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(tn > 0.0) {
        return Err(Error::data("tumor projection has zero norm"));
    }
    let mut cos = Vec::with_capacity(projected_nodes.nrows());
    for (i, r) in projected_nodes.rows().into_iter().enumerate() {
        let n = r.dot(&r).sqrt();
        if !(n > 0.0) {
            return Err(Error::data(format!("node {i} projection has zero norm")));
        }
        let dot: f64 = r.iter().zip(projected_tumor).map(|(a, b)| a * b).sum();
        cos.push(dot / (n * tn));
    }
    Ok(match mode {
        NodeAttentionMode::Raw => cos,
        NodeAttentionMode::Rescaled => cos.into_iter().map(|s| (1.0 + s) / 2.0).collect(),
        NodeAttentionMode::Softmax => {
            let m = cos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = cos.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        }
    })
}

/// Axis-aligned quarter turn in the plane of two axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rotation {
    pub axes: (usize, usize),
    pub quarter_turns: u8,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        axes: (0, 1),
        quarter_turns: 0,
    };

    pub fn random(rng: &mut Rng) -> Self {
        use rand::Rng as _;
        const PLANES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
        Self {
            axes: PLANES[rng.random_range(0..3)],
            quarter_turns: rng.random_range(0..4),
        }
    }

    /// One quarter turn of a centred coordinate: `(a, b) → (b, -a)`.
    fn turn(&self, p: &mut [f64; 3]) {
        let (i, j) = self.axes;
        let (a, b) = (p[i], p[j]);
        p[i] = b;
        p[j] = -a;
    }

    /// Rotates `P × 3` coordinates about the origin.
    pub fn apply_coords(&self, coords: &Mat) -> Mat {
        let mut out = coords.clone();
        for mut row in out.rows_mut() {
            let mut p = [row[0], row[1], row[2]];
            for _ in 0..self.quarter_turns % 4 {
                self.turn(&mut p);
            }
            row[0] = p[0];
            row[1] = p[1];
            row[2] = p[2];
        }
        out
    }

    /// Rotates a `channels × side³` cube about its centre, consistently with
    /// [`Rotation::apply_coords`] on centred voxel coordinates.
    pub fn apply_image(&self, image: &Mat, side: usize) -> Mat {
        if self.quarter_turns.is_multiple_of(4) {
            return image.clone();
        }
        let dims = VolumeDims::cube(side);
        let mut out = Mat::zeros(image.dim());
        let half = (side as f64 - 1.0) / 2.0;
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let mut p = [x as f64 - half, y as f64 - half, z as f64 - half];
                    for _ in 0..self.quarter_turns % 4 {
                        self.turn(&mut p);
                    }
                    let q: [usize; 3] = std::array::from_fn(|a| (p[a] + half).round() as usize);
                    let src = dims.index(x, y, z);
                    let dst = dims.index(q[0], q[1], q[2]);
                    for c in 0..image.nrows() {
                        out[[c, dst]] = image[[c, src]];
                    }
                }
            }
        }
        out
    }
}

/// Everything the multi-modal forward pass needs for one patient.
#[derive(Clone, Debug)]
pub struct PatientInput {
    pub id: String,
    pub label: Option<u8>,
    pub image: TumorImage,
    pub image_matrix: Mat,
    pub cloud: PointsCloud,
    pub graph: PointGraph,
    pub network: BrainNetwork,
    pub edge_map: EdgeAttentionMap,
}

impl PatientInput {
    pub fn build(
        id: &str,
        label: Option<u8>,
        volume: &MultiChannelVolume,
        mask: &TumorMask,
        network: BrainNetwork,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        let image = TumorImage::crop(volume, mask, cfg.crop_side, cfg.crop_pad)?;
        let cloud = geometry::sample_surface(mask, cfg.point_samples, cfg.fps_seed_index)?;
        let graph = geometry::build_point_graph(&cloud, cfg.point_radius)?;
        let crossing = crossing_matrix(&cloud, &network, cfg.crossing_radius, cfg.crossing_rule);
        let edge_map = EdgeAttentionMap::new(&crossing, cfg.uncrossed_attention);
        Ok(Self {
            id: id.to_string(),
            label,
            image_matrix: image.to_matrix(),
            image,
            cloud,
            graph,
            network,
            edge_map,
        })
    }
}

/// Which branches take part in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    pub image: bool,
    pub points: bool,
    pub brain: bool,
}

impl Branches {
    pub const ALL: Branches = Branches {
        image: true,
        points: true,
        brain: true,
    };

    pub fn count(&self) -> usize {
        [self.image, self.points, self.brain].iter().filter(|&&b| b).count()
    }
}

/// All encoders plus the four projection heads, sharing one parameter
/// store.
#[derive(Clone, Debug)]
pub struct MultiModalModel {
    pub store: ParamStore,
    pub cfg: EncoderConfig,
    pub attr_dim: usize,
    pub image: ImageEncoder,
    pub points: GeometricEncoder,
    pub brain: BrainNetworkEncoder,
    pub g_i: Mlp,
    pub g_p: Mlp,
    pub g_b: Mlp,
    pub g_t: Mlp,
}

/// Widths of `g^I`, `g^P`, `g^B` after the input, and of `g^T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub feature_heads: Vec<usize>,
    pub tumor_head: Vec<usize>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            feature_heads: vec![64, 128, 128],
            tumor_head: vec![64, 128, 128],
        }
    }
}

/// Per-patient values from one forward pass.
pub struct PatientForward {
    pub image_input: Option<Var>,
    pub u_i: Option<Var>,
    pub u_p: Option<Var>,
    pub a_p: Option<Var>,
    pub a_e: Option<Var>,
    pub a_n: Option<Var>,
    pub u_b: Option<Var>,
    pub u_t: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub rotation: Option<Rotation>,
    /// Bind the image as a differentiable input (for saliency).
    pub track_image: bool,
}

impl MultiModalModel {
    pub fn new(cfg: &EncoderConfig, heads: &HeadConfig, attr_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if heads.feature_heads.is_empty() || heads.tumor_head.is_empty() {
            return Err(Error::config("projection head widths must be non-empty"));
        }
        if heads.feature_heads.last() != heads.tumor_head.last() {
            return Err(Error::config("all projection heads must share one latent dimension"));
        }
        if cfg.node_projection.last() != heads.tumor_head.last() {
            return Err(Error::config("node projection and tumor head must share one latent dimension"));
        }
        let mut store = ParamStore::new();
        let image = ImageEncoder::new(&mut store, rng, cfg);
        let points = GeometricEncoder::new(&mut store, rng, cfg);
        let brain = BrainNetworkEncoder::new(&mut store, rng, cfg, attr_dim);
        let d = cfg.feature_dim;
        let mk = |store: &mut ParamStore, rng: &mut Rng, name: &str, input: usize, w: &[usize]| {
            let mut widths = vec![input];
            widths.extend(w);
            Mlp::new(store, rng, name, &widths)
        };
        let g_i = mk(&mut store, rng, "g_i", d, &heads.feature_heads);
        let g_p = mk(&mut store, rng, "g_p", d, &heads.feature_heads);
        let g_b = mk(&mut store, rng, "g_b", d, &heads.feature_heads);
        let g_t = mk(&mut store, rng, "g_t", 2 * d, &heads.tumor_head);
        crate::io::round_params(&mut store);
        Ok(Self {
            store,
            cfg: cfg.clone(),
            attr_dim,
            image,
            points,
            brain,
            g_i,
            g_p,
            g_b,
            g_t,
        })
    }

    pub fn architecture(&self, heads: &HeadConfig) -> serde_json::Value {
        serde_json::json!({
            "encoders": self.cfg,
            "heads": heads,
            "attr_dim": self.attr_dim,
            "gat_self_loops": true,
            "gat_heads": 1,
        })
    }

    /// Rescaled point attention fed to the edge projection.
    fn edge_point_attention(&self, ctx: &mut Ctx, a_p: Var) -> Var {
        match self.cfg.point_attention_scale {
            PointAttentionScale::None => a_p,
            PointAttentionScale::Max => {
                let v = ctx.value(a_p);
                let arg = (0..v.nrows()).fold(0, |b, i| if v[[i, 0]] > v[[b, 0]] { i } else { b });
                let max = ctx.tape.gather_rows(a_p, &[arg]);
                let inv = ctx.tape.recip(max);
                ctx.tape.mul_scalar(a_p, inv)
            }
        }
    }

    /// One patient. With `attention` false, or when a tumor branch is
    /// missing, the brain encoder runs without reweighting.
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        input: &PatientInput,
        branches: Branches,
        attention: bool,
        opts: ForwardOptions,
    ) -> PatientForward {
        let rot = opts.rotation.unwrap_or(Rotation::IDENTITY);
        let mut out = PatientForward {
            image_input: None,
            u_i: None,
            u_p: None,
            a_p: None,
            a_e: None,
            a_n: None,
            u_b: None,
            u_t: None,
        };
        if branches.image {
            let img = rot.apply_image(&input.image_matrix, input.image.side());
            let x = if opts.track_image { ctx.input(img) } else { ctx.constant(img) };
            out.image_input = Some(x);
            out.u_i = Some(self.image.forward(ctx, x));
        }
        if branches.points {
            let feats = rot.apply_coords(&input.graph.node_features);
            let (u, a) = self.points.forward(ctx, &input.graph, &feats);
            out.u_p = Some(u);
            out.a_p = Some(a);
        }
        if let (Some(ui), Some(up)) = (out.u_i, out.u_p) {
            out.u_t = Some(ctx.tape.concat_cols(&[ui, up]));
        }
        if branches.brain {
            let att = match (attention, out.a_p, out.u_t) {
                (true, Some(a_p), Some(u_t)) => {
                    let scaled = self.edge_point_attention(ctx, a_p);
                    let a_e = input.edge_map.apply(ctx, scaled);
                    out.a_e = Some(a_e);
                    BrainAttention::Hierarchical {
                        edge: a_e,
                        tumor: u_t,
                        g_t: &self.g_t,
                    }
                }
                _ => BrainAttention::Off,
            };
            let b = self.brain.forward(ctx, &input.network, att);
            out.a_n = b.node_attention;
            out.u_b = Some(b.u_b);
        }
        out
    }
}

/// Evaluation-mode outputs for one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientFeatures {
    pub id: String,
    pub label: Option<u8>,
    pub u_i: Vec<f64>,
    pub u_p: Vec<f64>,
    pub u_b: Vec<f64>,
    pub a_p: Vec<f64>,
    pub a_e: Vec<f64>,
    pub a_n: Vec<f64>,
}

impl PatientFeatures {
    /// `⟨u^I, u^P⟩`.
    pub fn u_t(&self) -> Vec<f64> {
        let mut t = self.u_i.clone();
        t.extend(&self.u_p);
        t
    }
}

impl MultiModalModel {
    pub fn features(&self, input: &PatientInput, attention: bool) -> PatientFeatures {
        let mut ctx = Ctx::frozen(&self.store);
        let f = self.forward(&mut ctx, input, Branches::ALL, attention, ForwardOptions::default());
        let vec = |v: Option<Var>| v.map(|v| ctx.value(v).iter().copied().collect()).unwrap_or_default();
        PatientFeatures {
            id: input.id.clone(),
            label: input.label,
            u_i: vec(f.u_i),
            u_p: vec(f.u_p),
            u_b: vec(f.u_b),
            a_p: vec(f.a_p),
            a_e: vec(f.a_e),
            a_n: vec(f.a_n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn rotation_of_image_matches_rotation_of_coordinates() {
        let side = 4;
        let dims = VolumeDims::cube(side);
        let mut img = Mat::zeros((1, dims.voxels()));
        img[[0, dims.index(0, 1, 3)]] = 1.0;
        let rot = Rotation {
            axes: (0, 2),
            quarter_turns: 1,
        };
        let out = rot.apply_image(&img, side);
        let half = 1.5;
        let c = Array2::from_shape_vec((1, 3), vec![0.0 - half, 1.0 - half, 3.0 - half]).unwrap();
        let r = rot.apply_coords(&c);
        let q: Vec<usize> = r.iter().map(|v| (v + half).round() as usize).collect();
        assert_eq!(out[[0, dims.index(q[0], q[1], q[2])]], 1.0);
        assert_eq!(out.sum(), 1.0);
        let full = Rotation {
            quarter_turns: 4,
            ..rot
        };
        assert_eq!(full.apply_coords(&c), c);
    }

    #[test]
    fn edge_attention_map_means_and_baseline() {
        let crossing = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let map = EdgeAttentionMap::new(&crossing, 0.1);
        let a = Array2::from_shape_vec((3, 1), vec![0.2, 0.9, 0.6]).unwrap();
        let out = map.weights.dot(&a) + &map.baseline;
        assert!((out[[0, 0]] - 0.4).abs() < 1e-15);
        assert_eq!(out[[1, 0]], 0.1);
        assert_eq!(map.crossed, vec![true, false]);
    }
}
