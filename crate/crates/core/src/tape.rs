//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Only the operations the encoder, heads and losses need are provided.
//! Every op records what its backward pass requires; [`Graph::backward`]
//! walks the tape once in reverse. [`Graph::detach`] is the stop-gradient:
//! it copies a value into a fresh leaf that never receives gradient.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::rng::Rng;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a row-stacked batch of sequences: row `b * seq_len + t` is
/// frame `t` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqLayout {
    pub batch: usize,
    pub seq_len: usize,
    /// Per-sequence count of valid (unpadded) frames, when masking is on.
    pub valid: Option<Vec<usize>>,
}

impl SeqLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }

    fn valid_len(&self, b: usize) -> usize {
        self.valid.as_ref().map_or(self.seq_len, |v| v[b].clamp(1, self.seq_len))
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Mat,
    },
    AddPositional {
        x: Var,
        pos: Var,
        seq_len: usize,
    },
    Attention {
        qkv: Var,
        layout: SeqLayout,
        heads: usize,
        probs: Vec<Mat>,
    },
    MeanPool {
        x: Var,
        layout: SeqLayout,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Mse(Var, Var),
    RowNormalize {
        x: Var,
        norms: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.leaf(value, false)
    }

    /// Stop-gradient: same value, no path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `x + bias` with a `1 × C` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        let rg = self.rg(x) || self.rg(bias);
        self.push(value, Op::AddBias(x, bias), rg)
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let h = self.matmul(x, weight);
        self.add_bias(h, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(gelu);
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Inverted dropout; a no-op when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let (r, c) = self.value(x).dim();
        let mask = Mat::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let value = self.value(x) * &mask;
        let rg = self.rg(x);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Adds rows `0..seq_len` of `pos` to every sequence in `x`.
    pub fn add_positional(&mut self, x: Var, pos: Var, seq_len: usize) -> Var {
        let mut value = self.value(x).clone();
        let p = self.value(pos).slice(s![0..seq_len, ..]);
        for mut chunk in value.axis_chunks_iter_mut(Axis(0), seq_len) {
            chunk += &p;
        }
        let rg = self.rg(x) || self.rg(pos);
        self.push(value, Op::AddPositional { x, pos, seq_len }, rg)
    }

    /// Multi-head scaled dot-product self-attention within each sequence.
    /// `qkv` holds `[Q | K | V]` column blocks of width `E` each.
    pub fn attention(&mut self, qkv: Var, layout: &SeqLayout, heads: usize) -> Var {
        let qv = self.value(qkv);
        let e = qv.ncols() / 3;
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n = layout.seq_len;
        let mut out = Mat::zeros((layout.rows(), e));
        let mut probs = Vec::with_capacity(layout.batch * heads);
        for b in 0..layout.batch {
            let rows = b * n..(b + 1) * n;
            let valid = layout.valid_len(b);
            for h in 0..heads {
                let q = qv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let k = qv.slice(s![rows.clone(), e + h * dh..e + (h + 1) * dh]);
                let v = qv.slice(s![rows.clone(), 2 * e + h * dh..2 * e + (h + 1) * dh]);
                let mut scores = q.dot(&k.t()) * scale;
                if valid < n {
                    scores.slice_mut(s![.., valid..]).fill(f64::NEG_INFINITY);
                }
                softmax_rows(&mut scores);
                out.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh])
                    .assign(&scores.dot(&v));
                probs.push(scores);
            }
        }
        let rg = self.rg(qkv);
        self.push(
            out,
            Op::Attention {
                qkv,
                layout: layout.clone(),
                heads,
                probs,
            },
            rg,
        )
    }

    /// Mean over the (valid) frames of each sequence: `B·N × C → B × C`.
    pub fn mean_pool(&mut self, x: Var, layout: &SeqLayout) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros((layout.batch, xv.ncols()));
        for b in 0..layout.batch {
            let valid = layout.valid_len(b);
            let start = b * layout.seq_len;
            let block = xv.slice(s![start..start + valid, ..]);
            out.row_mut(b).assign(&(block.sum_axis(Axis(0)) / valid as f64));
        }
        let rg = self.rg(x);
        self.push(
            out,
            Op::MeanPool {
                x,
                layout: layout.clone(),
            },
            rg,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::SliceRows { x, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("matching column counts");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Mean squared difference over all entries, as a `1 × 1` scalar.
    /// For `B × n` inputs this is the batch mean of the per-row `‖a−b‖²/n`.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim(), "mse operands must share a shape");
        let count = av.len() as f64;
        let sum: f64 = Zip::from(av).and(bv).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y));
        let rg = self.rg(a) || self.rg(b);
        self.push(Mat::from_elem((1, 1), sum / count), Op::Mse(a, b), rg)
    }

    /// Scales each row to unit Euclidean norm (rows below `1e-12` are
    /// divided by `1e-12`).
    pub fn row_normalize(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt().max(1e-12);
            row /= n;
            norms.push(n);
        }
        let rg = self.rg(x);
        self.push(out, Op::RowNormalize { x, norms }, rg)
    }

    /// Mean softmax cross-entropy of `logits` rows against class `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let mut probs = self.value(logits).clone();
        softmax_rows(&mut probs);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs[[i, l]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64;
        let rg = self.rg(logits);
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Sum of `1 × 1` scalars.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, op: &Op, out: &Mat, g: &Mat, grads: &mut [Option<Mat>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    self.accumulate(grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &o| {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Gelu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*x))
                    .for_each(|d, &xv| *d *= gelu_grad(xv));
                self.accumulate(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.rg(*gamma) {
                    self.accumulate(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*beta) {
                    self.accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let dxhat = g * self.value(*gamma);
                    let c = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.dim());
                    for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_d = dh.sum();
                        let sum_dx = dh.dot(&xh);
                        let inv = inv_std[r];
                        Zip::from(&mut row).and(&dh).and(&xh).for_each(|o, &d, &h| {
                            *o = inv / c * (c * d - sum_d - h * sum_dx);
                        });
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Dropout { x, mask } => self.accumulate(grads, *x, g * mask),
            Op::AddPositional { x, pos, seq_len } => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*pos) {
                    let mut d = Mat::zeros(self.value(*pos).dim());
                    {
                        let mut head = d.slice_mut(s![0..*seq_len, ..]);
                        for chunk in g.axis_chunks_iter(Axis(0), *seq_len) {
                            head += &chunk;
                        }
                    }
                    self.accumulate(grads, *pos, d);
                }
            }
            Op::Attention {
                qkv,
                layout,
                heads,
                probs,
            } => {
                let qv = self.value(*qkv);
                let e = qv.ncols() / 3;
                let dh = e / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let n = layout.seq_len;
                let mut d = Mat::zeros(qv.dim());
                for b in 0..layout.batch {
                    let rows = b * n..(b + 1) * n;
                    for h in 0..*heads {
                        let p = &probs[b * heads + h];
                        let qc = h * dh..(h + 1) * dh;
                        let kc = e + h * dh..e + (h + 1) * dh;
                        let vc = 2 * e + h * dh..2 * e + (h + 1) * dh;
                        let q = qv.slice(s![rows.clone(), qc.clone()]);
                        let k = qv.slice(s![rows.clone(), kc.clone()]);
                        let v = qv.slice(s![rows.clone(), vc.clone()]);
                        let go = g.slice(s![rows.clone(), qc.clone()]);
                        d.slice_mut(s![rows.clone(), vc]).assign(&p.t().dot(&go));
                        let dp = go.dot(&v.t());
                        let mut ds = p * &dp;
                        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let dot: f64 = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|x, &pv| *x -= pv * dot);
                        }
                        ds *= scale;
                        d.slice_mut(s![rows.clone(), qc]).assign(&ds.dot(&k));
                        d.slice_mut(s![rows.clone(), kc]).assign(&ds.t().dot(&q));
                    }
                }
                self.accumulate(grads, *qkv, d);
            }
            Op::MeanPool { x, layout } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                for b in 0..layout.batch {
                    let valid = layout.valid_len(b);
                    let start = b * layout.seq_len;
                    let row = g.row(b).mapv(|v| v / valid as f64);
                    for t in start..start + valid {
                        d.row_mut(t).assign(&row);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SliceRows { x, start } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *x, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).nrows();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![offset..offset + r, ..]).to_owned());
                    }
                    offset += r;
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let coef = 2.0 * g[[0, 0]] / av.len() as f64;
                let diff = (av - bv) * coef;
                if self.rg(*b) {
                    self.accumulate(grads, *b, -&diff);
                }
                self.accumulate(grads, *a, diff);
            }
            Op::RowNormalize { x, norms } => {
                let mut d = g.clone();
                for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                    let y = out.row(r);
                    let dot = y.dot(&row);
                    Zip::from(&mut row).and(&y).for_each(|d, &yv| *d = (*d - yv * dot) / norms[r]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[[i, l]] -= 1.0;
                }
                d *= g[[0, 0]] / labels.len() as f64;
                self.accumulate(grads, *logits, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::Array;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut Rng) -> Mat {
        Array::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
    }

    /// Checks d(loss)/d(input) against central differences for every entry.
    fn check<F>(inputs: Vec<Mat>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let run = |vals: &[Mat]| -> (Graph, Vec<Var>, Var) {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|v| g.leaf(v.clone(), true)).collect();
            let root = build(&mut g, &vars);
            (g, vars, root)
        };
        let (g, vars, root) = run(&inputs);
        let grads = g.backward(root);
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(input.dim()));
            for idx in 0..input.len() {
                let (r, c) = (idx / input.ncols(), idx % input.ncols());
                let mut plus = inputs.clone();
                plus[k][[r, c]] += h;
                let mut minus = inputs.clone();
                minus[k][[r, c]] -= h;
                let (gp, _, rp) = run(&plus);
                let (gm, _, rm) = run(&minus);
                let numeric = (gp.scalar(rp) - gm.scalar(rm)) / (2.0 * h);
                let a = analytic[[r, c]];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "input {k} entry ({r},{c}): analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn linear_relu_gelu_grads() {
        let mut rng = rng_from_seed(1);
        let target = randn(4, 3, &mut rng);
        check(vec![randn(4, 5, &mut rng), randn(5, 3, &mut rng), randn(1, 3, &mut rng)], |g, v| {
            let h = g.linear(v[0], v[1], v[2]);
            let a = g.gelu(h);
            let r = g.relu(a);
            let t = g.constant(target.clone());
            g.mse(r, t)
        });
    }

    #[test]
    fn layer_norm_grads() {
        let mut rng = rng_from_seed(2);
        let w = randn(6, 6, &mut rng);
        check(vec![randn(5, 6, &mut rng), randn(1, 6, &mut rng), randn(1, 6, &mut rng)], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]);
            let wv = g.constant(w.clone());
            let z = g.matmul(y, wv);
            let zero = g.constant(Mat::zeros((5, 6)));
            g.mse(z, zero)
        });
    }

    #[test]
    fn attention_positional_pool_grads() {
        let mut rng = rng_from_seed(3);
        let layout = SeqLayout { batch: 2, seq_len: 3, valid: None };
        let masked = SeqLayout { batch: 2, seq_len: 3, valid: Some(vec![2, 3]) };
        let target = randn(2, 4, &mut rng);
        for lay in [layout, masked] {
            let target = target.clone();
            check(vec![randn(6, 12, &mut rng), randn(5, 4, &mut rng)], move |g, v| {
                let a = g.attention(v[0], &lay, 2);
                let p = g.add_positional(a, v[1], 3);
                let pooled = g.mean_pool(p, &lay);
                let t = g.constant(target.clone());
                g.mse(pooled, t)
            });
        }
    }

    #[test]
    fn slicing_concat_and_cross_entropy_grads() {
        let mut rng = rng_from_seed(4);
        check(vec![randn(2, 3, &mut rng), randn(2, 3, &mut rng)], |g, v| {
            let c = g.concat_rows(&[v[0], v[1]]);
            let top = g.slice_rows(c, 1, 4);
            let l1 = g.cross_entropy(top, &[0, 2, 1]);
            let bottom = g.slice_rows(c, 0, 2);
            let l2 = g.mse(bottom, v[1]);
            g.sum_scalars(&[l1, l2])
        });
    }

    #[test]
    fn row_normalize_grads() {
        let mut rng = rng_from_seed(5);
        let target = randn(3, 4, &mut rng);
        check(vec![randn(3, 4, &mut rng)], |g, v| {
            let n = g.row_normalize(v[0]);
            let t = g.constant(target.clone());
            g.mse(n, t)
        });
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Mat::from_elem((1, 2), 3.0), true);
        let d = g.detach(x);
        let zero = g.constant(Mat::zeros((1, 2)));
        let l = g.mse(zero, d);
        assert_eq!(g.value(d), g.value(x));
        let grads = g.backward(l);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn dropout_zero_is_passthrough_and_masks_scale() {
        let mut g = Graph::new();
        let mut rng = rng_from_seed(0);
        let x = g.leaf(Mat::from_elem((50, 40), 1.0), true);
        assert_eq!(g.dropout(x, 0.0, &mut rng), x);
        let y = g.dropout(x, 0.5, &mut rng);
        let vals = g.value(y);
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count() as f64 / vals.len() as f64;
        assert!((kept - 0.5).abs() < 0.05);
    }
}
