//! Trainable building blocks on top of the autograd tape: dense layers,
//! 3-D convolutions, graph attention, edge-conditioned graph convolution and
//! softmax attention pooling.

use mmgt_autograd::{init, GradStore, Mat, ParamId, ParamStore, Tape, Var, VolumeDims};

use crate::rng::Rng;

/// A forward pass in progress: the tape plus the parameter store it reads.
/// Each parameter is bound onto the tape at most once.
pub struct Ctx<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    frozen: bool,
}

impl<'s> Ctx<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            frozen: false,
        }
    }

    /// Parameters enter as constants: nothing upstream of them is tracked.
    pub fn frozen(store: &'s ParamStore) -> Self {
        Self {
            frozen: true,
            ..Self::new(store)
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let v = if self.frozen {
            self.tape.constant(self.store.get(id).clone())
        } else {
            self.tape.param(self.store, id)
        };
        self.bound[id.index()] = Some(v);
        v
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.tape.input(m)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.tape.constant(m)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.tape.value(v)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.tape.scalar(v)
    }

    /// Backpropagates from a scalar and collects parameter gradients.
    pub fn param_grads(&self, root: Var) -> GradStore {
        let g = self.tape.backward(root);
        let mut out = GradStore::new(self.store);
        g.accumulate(&self.tape, &mut out);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(
            format!("{name}.w"),
            init::xavier_uniform(rng, (fan_in, fan_out), fan_in, fan_out),
        );
        let b = store.add(format!("{name}.b"), init::zeros((1, fan_out)));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        let y = ctx.tape.matmul(x, w);
        ctx.tape.add_row(y, b)
    }
}

/// Dense stack with ReLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths[0]` is the input dimension.
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs an input and an output width");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn forward(&self, ctx: &mut Ctx, mut x: Var) -> Var {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(ctx, x);
            if i + 1 < self.layers.len() {
                x = ctx.tape.relu(x);
            }
        }
        x
    }
}

/// 3×3×3 same-padded convolution over `channels × voxels` maps.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv3d {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, c_in: usize, c_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), init::he_normal(rng, (c_out, c_in * 27), c_in * 27));
        let b = store.add(format!("{name}.b"), init::zeros((c_out, 1)));
        Self { w, b, c_in, c_out }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, dims: VolumeDims) -> Var {
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        ctx.tape.conv3d(x, w, b, dims)
    }
}

/// Directed message-passing structure: messages flow `src[m] → dst[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub n: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// For each directed edge, the row of the per-edge attribute matrix it
    /// reads, or `None` for an added self-loop.
    pub attr_row: Vec<Option<usize>>,
}

impl EdgeSet {
    /// Both directions of every undirected pair, optionally followed by one
    /// self-loop per node.
    pub fn undirected(n: usize, pairs: &[(usize, usize)], self_loops: bool) -> Self {
        let mut s = Self {
            n,
            src: Vec::new(),
            dst: Vec::new(),
            attr_row: Vec::new(),
        };
        for (e, &(i, j)) in pairs.iter().enumerate() {
            s.push(i, j, Some(e));
            s.push(j, i, Some(e));
        }
        if self_loops {
            for i in 0..n {
                s.push(i, i, None);
            }
        }
        s
    }

    /// Directed edges given explicitly (already containing both directions).
    pub fn directed(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut s = Self {
            n,
            src: Vec::new(),
            dst: Vec::new(),
            attr_row: Vec::new(),
        };
        for (e, &(i, j)) in edges.iter().enumerate() {
            s.push(i, j, Some(e));
        }
        s
    }

    fn push(&mut self, i: usize, j: usize, row: Option<usize>) {
        self.src.push(i);
        self.dst.push(j);
        self.attr_row.push(row);
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Expands an `E × d` per-edge attribute var to one row per directed
    /// edge, with zero rows for self-loops.
    pub fn expand_attrs(&self, ctx: &mut Ctx, attrs: Var) -> Var {
        let (e, d) = ctx.value(attrs).dim();
        let needs_zero = self.attr_row.iter().any(Option::is_none);
        let source = if needs_zero {
            let zero = ctx.constant(Mat::zeros((1, d)));
            ctx.tape.concat_rows(&[attrs, zero])
        } else {
            attrs
        };
        let idx: Vec<usize> = self.attr_row.iter().map(|r| r.unwrap_or(e)).collect();
        ctx.tape.gather_rows(source, &idx)
    }

    /// `1 / in-degree` per node (0 for isolated nodes), as an `n × 1` column.
    pub fn inverse_in_degree(&self) -> Mat {
        let mut deg = vec![0usize; self.n];
        for &d in &self.dst {
            deg[d] += 1;
        }
        Mat::from_shape_fn((self.n, 1), |(i, _)| if deg[i] > 0 { 1.0 / deg[i] as f64 } else { 0.0 })
    }
}

/// Single-head graph attention with edge attributes. Attention logits are
/// `LeakyReLU(a_src·Wx_j + a_dst·Wx_i + a_edge·W_e e_ij)` normalised over
/// each node's incoming edges; messages are `Wx_j + W_e e_ij`.
#[derive(Clone, Debug)]
pub struct GatConv {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub edge: Option<(ParamId, ParamId)>,
    pub bias: ParamId,
    pub fan_out: usize,
}

pub const GAT_SLOPE: f64 = 0.2;

impl GatConv {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        edge_dim: Option<usize>,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            init::xavier_uniform(rng, (fan_in, fan_out), fan_in, fan_out),
        );
        let a_src = store.add(format!("{name}.att_src"), init::xavier_uniform(rng, (fan_out, 1), fan_out, 1));
        let a_dst = store.add(format!("{name}.att_dst"), init::xavier_uniform(rng, (fan_out, 1), fan_out, 1));
        let edge = edge_dim.map(|d| {
            let we = store.add(format!("{name}.w_edge"), init::xavier_uniform(rng, (d, fan_out), d, fan_out));
            let ae = store.add(format!("{name}.att_edge"), init::xavier_uniform(rng, (fan_out, 1), fan_out, 1));
            (we, ae)
        });
        let bias = store.add(format!("{name}.b"), init::zeros((1, fan_out)));
        Self {
            w,
            a_src,
            a_dst,
            edge,
            bias,
            fan_out,
        }
    }

    /// `edge_attrs` must already be expanded to one row per directed edge.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, edges: &EdgeSet, edge_attrs: Option<Var>) -> Var {
        let w = ctx.p(self.w);
        let h = ctx.tape.matmul(x, w);
        let a_src = ctx.p(self.a_src);
        let a_dst = ctx.p(self.a_dst);
        let s_src = ctx.tape.matmul(h, a_src);
        let s_dst = ctx.tape.matmul(h, a_dst);
        let g_src = ctx.tape.gather_rows(s_src, &edges.src);
        let g_dst = ctx.tape.gather_rows(s_dst, &edges.dst);
        let mut logits = ctx.tape.add(g_src, g_dst);
        let mut msg = ctx.tape.gather_rows(h, &edges.src);
        if let (Some((we, ae)), Some(attrs)) = (self.edge, edge_attrs) {
            let we = ctx.p(we);
            let ae = ctx.p(ae);
            let he = ctx.tape.matmul(attrs, we);
            let s_e = ctx.tape.matmul(he, ae);
            logits = ctx.tape.add(logits, s_e);
            msg = ctx.tape.add(msg, he);
        }
        let logits = ctx.tape.leaky_relu(logits, GAT_SLOPE);
        let alpha = ctx.tape.segment_softmax(logits, &edges.dst, edges.n);
        let weighted = ctx.tape.mul_col(msg, alpha);
        let agg = ctx.tape.scatter_add_rows(weighted, &edges.dst, edges.n);
        let b = ctx.p(self.bias);
        ctx.tape.add_row(agg, b)
    }
}

/// Edge-conditioned convolution with a linear filter network on the scalar
/// edge feature `d`: `x_i' = W_root x_i + mean_j (W_0 + d_ij W_1) x_j + b`.
#[derive(Clone, Debug)]
pub struct NnConv {
    pub root: ParamId,
    pub w0: ParamId,
    pub w1: ParamId,
    pub bias: ParamId,
    pub fan_out: usize,
}

impl NnConv {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let mk = |store: &mut ParamStore, rng: &mut Rng, s: &str| {
            store.add(
                format!("{name}.{s}"),
                init::xavier_uniform(rng, (fan_in, fan_out), fan_in, fan_out),
            )
        };
        let root = mk(store, rng, "root");
        let w0 = mk(store, rng, "w0");
        let w1 = mk(store, rng, "w1");
        let bias = store.add(format!("{name}.b"), init::zeros((1, fan_out)));
        Self {
            root,
            w0,
            w1,
            bias,
            fan_out,
        }
    }

    /// `edge_feature` is `m × 1` (one scalar per directed edge) and
    /// `inv_degree` is `n × 1`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, edges: &EdgeSet, edge_feature: Var, inv_degree: Var) -> Var {
        let root = ctx.p(self.root);
        let w0 = ctx.p(self.w0);
        let w1 = ctx.p(self.w1);
        let self_term = ctx.tape.matmul(x, root);
        if edges.is_empty() {
            let b = ctx.p(self.bias);
            return ctx.tape.add_row(self_term, b);
        }
        let h0 = ctx.tape.matmul(x, w0);
        let h1 = ctx.tape.matmul(x, w1);
        let m0 = ctx.tape.gather_rows(h0, &edges.src);
        let m1 = ctx.tape.gather_rows(h1, &edges.src);
        let m1 = ctx.tape.mul_col(m1, edge_feature);
        let msg = ctx.tape.add(m0, m1);
        let agg = ctx.tape.scatter_add_rows(msg, &edges.dst, edges.n);
        let agg = ctx.tape.mul_col(agg, inv_degree);
        let out = ctx.tape.add(self_term, agg);
        let b = ctx.p(self.bias);
        ctx.tape.add_row(out, b)
    }
}

/// Softmax-gated global pooling: `weights = softmax(gate(h))`, output
/// `Σ_k weights_k h_k`.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    pub gate: Linear,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dim: usize) -> Self {
        Self {
            gate: Linear::new(store, rng, &format!("{name}.gate"), dim, 1),
        }
    }

    /// Returns `(pooled 1×d, weights P×1)`.
    pub fn forward(&self, ctx: &mut Ctx, h: Var) -> (Var, Var) {
        let p = ctx.value(h).nrows();
        let scores = self.gate.forward(ctx, h);
        let weights = ctx.tape.segment_softmax(scores, &vec![0; p], 1);
        let wt = ctx.tape.transpose(weights);
        (ctx.tape.matmul(wt, h), weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_are_bound_once_per_ctx() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(0, "t", 0);
        let l = Linear::new(&mut store, &mut rng, "l", 3, 2);
        let mut ctx = Ctx::new(&store);
        let x = ctx.input(Mat::ones((4, 3)));
        let before = ctx.tape.len();
        l.forward(&mut ctx, x);
        let mid = ctx.tape.len();
        l.forward(&mut ctx, x);
        // second pass reuses the bound weight and bias
        assert_eq!(mid - before, 4);
        assert_eq!(ctx.tape.len() - mid, 2);
    }

    #[test]
    fn self_loops_read_zero_attributes() {
        let store = ParamStore::new();
        let mut ctx = Ctx::new(&store);
        let edges = EdgeSet::undirected(3, &[(0, 2)], true);
        assert_eq!(edges.len(), 5);
        let attrs = ctx.constant(Mat::from_elem((1, 2), 5.0));
        let x = edges.expand_attrs(&mut ctx, attrs);
        let v = ctx.value(x);
        assert_eq!(v.row(0).to_vec(), vec![5.0, 5.0]);
        assert_eq!(v.row(1).to_vec(), vec![5.0, 5.0]);
        assert!(v.slice(ndarray::s![2.., ..]).iter().all(|&x| x == 0.0));
    }
}
