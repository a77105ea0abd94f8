use ndarray::{s, Array2, Axis, Zip};

use crate::conv::{self, VolumeDims, KERNEL};
use crate::params::{GradStore, ParamId, ParamStore};

/// Every value on the tape is a dense row-major `f64` matrix.
pub type Mat = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    SumAll(Var),
    RowSums(Var),
    ColSums(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    NormalizeRows(Var, Vec<f64>),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        dims: VolumeDims,
        cols: Mat,
    },
    MaxPool3d {
        input: Var,
        argmax: Vec<usize>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    Mse(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// Shape mismatches are programming errors and panic.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like its value if nothing reached it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(tape.value(v).dim()))
    }

    /// Adds every bound parameter's gradient into `store`.
    pub fn accumulate(&self, tape: &Tape, store: &mut GradStore) {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.grads[i]) {
                store.add(*id, g);
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on a non-scalar node");
        m[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, a: Var, value: Mat, op: Op) -> Var {
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Mat, op: Op) -> Var {
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    /// A differentiable input that is not a parameter.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant: no gradient is propagated into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter from `store` onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.binary(a, b, value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.unary(a, value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let value = self.value(a) + self.value(b);
        self.binary(a, b, value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape");
        let value = self.value(a) - self.value(b);
        self.binary(a, b, value, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape");
        let value = self.value(a) * self.value(b);
        self.binary(a, b, value, Op::Mul(a, b))
    }

    /// `a (m×n) + row (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, n) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, n), "add_row shape");
        let value = self.value(a) + self.value(row);
        self.binary(a, row, value, Op::AddRow(a, row))
    }

    /// `a (m×n) + col (m×1)` broadcast over columns.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (m, _) = self.value(a).dim();
        assert_eq!(self.value(col).dim(), (m, 1), "add_col shape");
        let value = self.value(a) + self.value(col);
        self.binary(a, col, value, Op::AddCol(a, col))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (m, _) = self.value(a).dim();
        assert_eq!(self.value(col).dim(), (m, 1), "mul_col shape");
        let value = self.value(a) * self.value(col);
        self.binary(a, col, value, Op::MulCol(a, col))
    }

    /// Scales every entry of `a` by the `1 × 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).dim(), (1, 1), "mul_scalar shape");
        let k = self.value(s)[[0, 0]];
        let value = self.value(a) * k;
        self.binary(a, s, value, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.unary(a, value, Op::Scale(a, k))
    }

    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        self.unary(a, value, Op::Shift(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.unary(a, value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.unary(a, value, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.unary(a, value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.unary(a, value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.unary(a, value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.unary(a, value, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / x);
        self.unary(a, value, Op::Recip(a))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.unary(a, value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `m × n → m × 1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(a, value, Op::RowSums(a))
    }

    /// Per-column sums, `m × n → 1 × n`.
    pub fn col_sums(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(a, value, Op::ColSums(a))
    }

    pub fn row_means(&mut self, a: Var) -> Var {
        let n = self.value(a).ncols() as f64;
        let s = self.row_sums(a);
        self.scale(s, 1.0 / n)
    }

    pub fn col_means(&mut self, a: Var) -> Var {
        let m = self.value(a).nrows() as f64;
        let s = self.col_sums(a);
        self.scale(s, 1.0 / m)
    }

    /// `out[k] = a[idx[k]]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros((idx.len(), src.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            value.row_mut(k).assign(&src.row(i));
        }
        self.unary(a, value, Op::GatherRows(a, idx.to_vec()))
    }

    /// `out[idx[k]] += a[k]` into a matrix with `n_out` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "scatter_add_rows length");
        let mut value = Mat::zeros((n_out, src.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            let mut row = value.row_mut(i);
            row += &src.row(k);
        }
        self.unary(a, value, Op::ScatterAddRows(a, idx.to_vec()))
    }

    /// Softmax of an `e × 1` score column within groups given by `segment`.
    pub fn segment_softmax(&mut self, scores: Var, segment: &[usize], n_segments: usize) -> Var {
        let s = self.value(scores);
        assert_eq!(s.dim(), (segment.len(), 1), "segment_softmax shape");
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (k, &g) in segment.iter().enumerate() {
            max[g] = max[g].max(s[[k, 0]]);
        }
        let mut denom = vec![0.0; n_segments];
        let mut e: Vec<f64> = Vec::with_capacity(segment.len());
        for (k, &g) in segment.iter().enumerate() {
            let v = (s[[k, 0]] - max[g]).exp();
            denom[g] += v;
            e.push(v);
        }
        let value = Mat::from_shape_fn((segment.len(), 1), |(k, _)| e[k] / denom[segment[k]]);
        self.unary(scores, value, Op::SegmentSoftmax(scores, segment.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols rows");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows cols");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.unary(a, value, Op::SliceCols(a, start))
    }

    /// Divides every row by its Euclidean norm, clamped below by `eps`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let src = self.value(a);
        let norms: Vec<f64> = src
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt().max(eps))
            .collect();
        let mut value = src.clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|x| x / n);
        }
        self.unary(a, value, Op::NormalizeRows(a, norms))
    }

    /// 3×3×3 convolution with one voxel of zero padding.
    ///
    /// `input` is `c_in × V`, `weight` is `c_out × (c_in·27)`, `bias` is
    /// `c_out × 1`; the result is `c_out × V` over the same `dims`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, dims: VolumeDims) -> Var {
        let x = self.value(input);
        let c_in = x.nrows();
        assert_eq!(x.ncols(), dims.voxels(), "conv3d voxel count");
        let w = self.value(weight);
        assert_eq!(w.ncols(), c_in * KERNEL, "conv3d weight width");
        let c_out = w.nrows();
        assert_eq!(self.value(bias).dim(), (c_out, 1), "conv3d bias");
        let x_std = x.as_standard_layout();
        let cols = conv::im2col(x_std.as_slice().unwrap(), c_in, dims);
        let cols = Mat::from_shape_vec((c_in * KERNEL, dims.voxels()), cols).unwrap();
        let value = w.dot(&cols) + self.value(bias);
        let ng = self.ng(input) || self.ng(weight) || self.ng(bias);
        self.push(
            value,
            Op::Conv3d {
                input,
                weight,
                bias,
                dims,
                cols,
            },
            ng,
        )
    }

    /// 2×2×2 stride-2 max pooling of a `channels × V` map over `dims`.
    pub fn maxpool3d(&mut self, input: Var, dims: VolumeDims) -> Var {
        let x = self.value(input);
        let channels = x.nrows();
        let x_std = x.as_standard_layout();
        let (out, argmax) = conv::maxpool(x_std.as_slice().unwrap(), channels, dims);
        let value = Mat::from_shape_vec((channels, dims.pooled().voxels()), out).unwrap();
        self.unary(input, value, Op::MaxPool3d { input, argmax })
    }

    /// Weighted binary cross-entropy on logits, normalised by the weight sum.
    /// Rows with zero weight contribute neither loss nor gradient.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], weights: &[f64]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), (targets.len(), 1), "bce logits shape");
        assert_eq!(targets.len(), weights.len(), "bce weights");
        let wsum: f64 = weights.iter().sum();
        let mut loss = 0.0;
        for k in 0..targets.len() {
            if weights[k] == 0.0 {
                continue;
            }
            let z = x[[k, 0]];
            let l = z.max(0.0) - z * targets[k] + (-z.abs()).exp().ln_1p();
            loss += weights[k] * l;
        }
        let value = Mat::from_elem((1, 1), loss / wsum);
        self.unary(
            logits,
            value,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: &Mat) -> Var {
        assert_eq!(self.value(a).dim(), target.dim(), "mse shape");
        let d = self.value(a) - target;
        let value = Mat::from_elem((1, 1), d.mapv(|x| x * x).mean().unwrap());
        self.unary(a, value, Op::Mse(a, target.clone()))
    }

    /// Backpropagates from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward from non-scalar");
        self.backward_with(&[(root, Mat::ones((1, 1)))])
    }

    /// Backpropagates from arbitrary seed gradients (vector-Jacobian product).
    pub fn backward_with(&self, seeds: &[(Var, Mat)]) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(*v).dim(), g.dim(), "seed shape");
            accumulate(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut send = |v: Var, delta: Mat| {
            if self.nodes[v.0].needs_grad {
                accumulate(grads, v, delta);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    send(*a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    send(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => send(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    send(*a, g * self.value(*b));
                }
                if self.ng(*b) {
                    send(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if self.ng(*row) {
                    send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AddCol(a, col) => {
                send(*a, g.clone());
                if self.ng(*col) {
                    send(*col, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::MulCol(a, col) => {
                if self.ng(*a) {
                    send(*a, g * self.value(*col));
                }
                if self.ng(*col) {
                    let prod = g * self.value(*a);
                    send(*col, prod.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::MulScalar(a, s) => {
                let k = self.value(*s)[[0, 0]];
                if self.ng(*a) {
                    send(*a, g * k);
                }
                if self.ng(*s) {
                    let d = (g * self.value(*a)).sum();
                    send(*s, Mat::from_elem((1, 1), d));
                }
            }
            Op::Scale(a, k) => send(*a, g * *k),
            Op::Shift(a) => send(*a, g.clone()),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                send(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= slope
                        }
                    });
                send(*a, d);
            }
            Op::Tanh(a) => send(*a, g * &y.mapv(|t| 1.0 - t * t)),
            Op::Sigmoid(a) => send(*a, g * &y.mapv(|s| s * (1.0 - s))),
            Op::Exp(a) => send(*a, g * y),
            Op::Log(a) => send(*a, g / self.value(*a)),
            Op::Recip(a) => send(*a, -(g * &y.mapv(|r| r * r))),
            Op::SumAll(a) => {
                let k = g[[0, 0]];
                send(*a, Mat::from_elem(self.value(*a).dim(), k));
            }
            Op::RowSums(a) => {
                let shape = self.value(*a).dim();
                send(*a, g.broadcast(shape).unwrap().to_owned());
            }
            Op::ColSums(a) => {
                let shape = self.value(*a).dim();
                send(*a, g.broadcast(shape).unwrap().to_owned());
            }
            Op::GatherRows(a, idx) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (k, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(k);
                }
                send(*a, d);
            }
            Op::ScatterAddRows(a, idx) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (k, &r) in idx.iter().enumerate() {
                    d.row_mut(k).assign(&g.row(r));
                }
                send(*a, d);
            }
            Op::SegmentSoftmax(a, segment) => {
                let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for (k, &s) in segment.iter().enumerate() {
                    dot[s] += y[[k, 0]] * g[[k, 0]];
                }
                let d = Mat::from_shape_fn(y.dim(), |(k, _)| {
                    y[[k, 0]] * (g[[k, 0]] - dot[segment[k]])
                });
                send(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.ng(*p) {
                        send(*p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.ng(*p) {
                        send(*p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                send(*a, d);
            }
            Op::NormalizeRows(a, norms) => {
                let mut d = g.clone();
                for ((mut drow, yrow), &n) in d.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                    let proj = yrow.dot(&drow);
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|dv, &yv| *dv = (*dv - yv * proj) / n);
                }
                send(*a, d);
            }
            Op::Conv3d {
                input,
                weight,
                bias,
                dims,
                cols,
            } => {
                if self.ng(*weight) {
                    send(*weight, g.dot(&cols.t()));
                }
                if self.ng(*bias) {
                    send(*bias, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
                if self.ng(*input) {
                    let gcols = self.value(*weight).t().dot(g);
                    let c_in = self.value(*input).nrows();
                    let gcols = gcols.as_standard_layout();
                    let gx = conv::col2im(gcols.as_slice().unwrap(), c_in, *dims);
                    send(*input, Mat::from_shape_vec((c_in, dims.voxels()), gx).unwrap());
                }
            }
            Op::MaxPool3d { input, argmax } => {
                let shape = self.value(*input).dim();
                let mut flat = vec![0.0; shape.0 * shape.1];
                for (gv, &src) in g.iter().zip(argmax) {
                    flat[src] += gv;
                }
                send(*input, Mat::from_shape_vec(shape, flat).unwrap());
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let x = self.value(*logits);
                let wsum: f64 = weights.iter().sum();
                let k = g[[0, 0]] / wsum;
                let d = Mat::from_shape_fn(x.dim(), |(r, _)| {
                    weights[r] * (sigmoid(x[[r, 0]]) - targets[r]) * k
                });
                send(*logits, d);
            }
            Op::Mse(a, target) => {
                let n = target.len() as f64;
                let k = 2.0 * g[[0, 0]] / n;
                send(*a, (self.value(*a) - target) * k);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
