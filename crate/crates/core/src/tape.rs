//! Reverse-mode differentiation over matrix-valued operations.
//!
//! A [`GradTape`] is a Wengert list: every operation appends a node holding
//! its forward value and the indices of its inputs. [`GradTape::backward`]
//! walks the list in reverse and accumulates adjoints. One tape is built per
//! training sample and thrown away afterwards.

use crate::linalg::{dot, matmul_into, Matrix};

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, inv_std: Vec<f64>, xhat: Matrix },
    Mask(Var, Matrix),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    /// Row-major reinterpretation, optionally zero-padded at the end.
    Reshape(Var),
    Huber(Var, Matrix, f64),
    BlockAttention(Box<BlockAttn>),
}

#[derive(Debug, Clone)]
struct BlockAttn {
    q: Var,
    k: Var,
    v: Var,
    blocks: usize,
    scale: f64,
    /// Softmax output before masking, `(blocks·nq) × nk`.
    probs: Matrix,
    mask: Option<Matrix>,
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`GradTape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0].clone().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Parameter or constant input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul shape");
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        matmul_into(va, vb, &mut out);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b)).expect("matmul_t shape");
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b)).expect("add shape");
        self.push(out, Op::Add(a, b))
    }

    /// Adds the 1×c row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let row = self.value(b);
        assert_eq!(row.shape(), (1, out.cols()), "add_row shape");
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(row.as_slice()) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// `a · s` where `s` is a 1×1 node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1));
        let out = self.value(a).scale(self.scalar(s));
        self.push(out, Op::ScaleBy(a, s))
    }

    /// `offset − a` elementwise (for `1 − κ`).
    pub fn rsub(&mut self, offset: f64, a: Var) -> Var {
        let out = self.value(a).map(|v| offset - v);
        self.push(out, Op::Affine(a, -1.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            crate::linalg::softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization with 1×c gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        assert_eq!(g.shape(), (1, cols));
        assert_eq!(b.shape(), (1, cols));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g.as_slice()).zip(b.as_slice()) {
                *o = *o * gi + bi;
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, inv_std, xhat })
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mask(&mut self, a: Var, mask: Matrix) -> Var {
        let out = self.value(a).zip_with(&mask, |x, m| x * m).expect("mask shape");
        self.push(out, Op::Mask(a, mask))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width");
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols height");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        let mut out = Matrix::zeros(v.rows(), len);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, start + len);
        self.push(out, Op::SliceRows(a, start))
    }

    /// Reinterpret in row-major order as `rows × cols`, zero-padding if the
    /// new shape is larger.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a).as_slice();
        assert!(rows * cols >= src.len(), "reshape cannot truncate");
        let mut data = vec![0.0; rows * cols];
        data[..src.len()].copy_from_slice(src);
        self.push(Matrix::from_vec(rows, cols, data), Op::Reshape(a))
    }

    /// Mean Huber loss over every entry of `pred` against a constant target.
    pub fn huber(&mut self, pred: Var, target: &Matrix, delta: f64) -> Var {
        let loss = crate::model::huber_loss_values(self.value(pred).as_slice(), target.as_slice(), delta);
        self.push(Matrix::from_vec(1, 1, vec![loss]), Op::Huber(pred, target.clone(), delta))
    }

    /// Independent scaled dot-product attention inside each of `blocks`
    /// equal row blocks: for block b, `P = softmax(q_b k_bᵀ · scale)` and the
    /// output is `(P ∘ mask_b) v_b`. `q` has `blocks·nq` rows, `k` and `v`
    /// have `blocks·nk` rows; the mask, if any, is `(blocks·nq) × nk`.
    pub fn block_attention(&mut self, q: Var, k: Var, v: Var, blocks: usize, scale: f64, mask: Option<Matrix>) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert!(blocks > 0 && qv.rows() % blocks == 0 && kv.rows() % blocks == 0, "block_attention blocks");
        assert_eq!(qv.cols(), kv.cols(), "block_attention key width");
        assert_eq!(kv.rows(), vv.rows(), "block_attention value rows");
        let nq = qv.rows() / blocks;
        let nk = kv.rows() / blocks;
        let (d, dv) = (qv.cols(), vv.cols());
        if let Some(m) = &mask {
            assert_eq!(m.shape(), (blocks * nq, nk), "block_attention mask shape");
        }
        let mut probs = Matrix::zeros(blocks * nq, nk);
        let mut out = Matrix::zeros(blocks * nq, dv);
        for b in 0..blocks {
            for i in 0..nq {
                let r = b * nq + i;
                let qi = &qv.as_slice()[r * d..(r + 1) * d];
                let pr = probs.row_mut(r);
                for (j, p) in pr.iter_mut().enumerate() {
                    let kj = &kv.as_slice()[(b * nk + j) * d..(b * nk + j + 1) * d];
                    *p = dot(qi, kj) * scale;
                }
                crate::linalg::softmax_in_place(pr);
                let orow = out.row_mut(r);
                for j in 0..nk {
                    let mut p = probs[(r, j)];
                    if let Some(m) = &mask {
                        p *= m[(r, j)];
                    }
                    if p == 0.0 {
                        continue;
                    }
                    let vj = &vv.as_slice()[(b * nk + j) * dv..(b * nk + j + 1) * dv];
                    for (o, x) in orow.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        self.push(out, Op::BlockAttention(Box::new(BlockAttn { q, k, v, blocks, scale, probs, mask })))
    }

    /// Adjoints of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, g.matmul_t(vb).unwrap());
                accumulate(grads, *b, va.t_matmul(g).unwrap());
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                matmul_into(g, vb, &mut ga);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, g.t_matmul(va).unwrap());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::ScaleBy(a, s) => {
                let sv = self.scalar(*s);
                accumulate(grads, *a, g.scale(sv));
                let gs = dot(g.as_slice(), val(*a).as_slice());
                accumulate(grads, *s, Matrix::filled(1, 1, gs));
            }
            Op::Affine(a, c1) => accumulate(grads, *a, g.scale(*c1)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(grads, *a, g.zip_with(y, |gi, yi| gi * yi * (1.0 - yi)).unwrap());
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accumulate(grads, *a, g.zip_with(y, |gi, yi| gi * (1.0 - yi * yi)).unwrap());
            }
            Op::Relu(a) => {
                let x = val(*a);
                accumulate(grads, *a, g.zip_with(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }).unwrap());
            }
            Op::Gelu(a) => {
                let x = val(*a);
                accumulate(grads, *a, g.zip_with(x, |gi, xi| gi * gelu_grad(xi)).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for ((o, yi), gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - s);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, bias, inv_std, xhat } => {
                let gv = val(*gain);
                let (rows, cols) = xhat.shape();
                let mut ggain = Matrix::zeros(1, cols);
                let mut gbias = Matrix::zeros(1, cols);
                let mut gx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    let mut dxhat = vec![0.0; cols];
                    for c in 0..cols {
                        ggain.as_mut_slice()[c] += gr[c] * xr[c];
                        gbias.as_mut_slice()[c] += gr[c];
                        dxhat[c] = gr[c] * gv.as_slice()[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dx = dot(&dxhat, xr) / cols as f64;
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, ggain);
                accumulate(grads, *bias, gbias);
            }
            Op::Mask(a, m) => accumulate(grads, *a, g.zip_with(m, |gi, mi| gi * mi).unwrap()),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = val(p).rows();
                    accumulate(grads, p, g.slice_rows(off, off + r));
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let mut gp = Matrix::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                    }
                    accumulate(grads, p, gp);
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let va = val(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceRows(a, start) => {
                let va = val(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                let c = va.cols();
                ga.as_mut_slice()[start * c..(start + g.rows()) * c].copy_from_slice(g.as_slice());
                accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let va = val(*a);
                let n = va.len();
                accumulate(grads, *a, Matrix::from_vec(va.rows(), va.cols(), g.as_slice()[..n].to_vec()));
            }
            Op::Huber(pred, target, delta) => {
                let p = val(*pred);
                let n = p.len() as f64;
                let scale = g.as_slice()[0] / n;
                let gp = p.zip_with(target, |pi, ti| (pi - ti).clamp(-*delta, *delta) * scale).unwrap();
                accumulate(grads, *pred, gp);
            }
            Op::BlockAttention(ba) => {
                let (qv, kv, vv) = (val(ba.q), val(ba.k), val(ba.v));
                let nq = qv.rows() / ba.blocks;
                let nk = kv.rows() / ba.blocks;
                let (d, dv) = (qv.cols(), vv.cols());
                let mut gq = Matrix::zeros(qv.rows(), d);
                let mut gk = Matrix::zeros(kv.rows(), d);
                let mut gv = Matrix::zeros(vv.rows(), dv);
                let mut dp = vec![0.0; nk];
                for b in 0..ba.blocks {
                    for i in 0..nq {
                        let r = b * nq + i;
                        let gr = g.row(r);
                        let pr = ba.probs.row(r);
                        for j in 0..nk {
                            let m = ba.mask.as_ref().map_or(1.0, |m| m[(r, j)]);
                            let kr = b * nk + j;
                            let vj = &vv.as_slice()[kr * dv..(kr + 1) * dv];
                            dp[j] = dot(gr, vj) * m;
                            let pm = pr[j] * m;
                            if pm != 0.0 {
                                for (o, x) in gv.row_mut(kr).iter_mut().zip(gr) {
                                    *o += pm * x;
                                }
                            }
                        }
                        let s = dot(&dp, pr);
                        let qi = &qv.as_slice()[r * d..(r + 1) * d];
                        for j in 0..nk {
                            let ds = pr[j] * (dp[j] - s) * ba.scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let kr = b * nk + j;
                            let kj = &kv.as_slice()[kr * d..(kr + 1) * d];
                            for (o, x) in gq.row_mut(r).iter_mut().zip(kj) {
                                *o += ds * x;
                            }
                            for (o, x) in gk.row_mut(kr).iter_mut().zip(qi) {
                                *o += ds * x;
                            }
                        }
                    }
                }
                accumulate(grads, ba.q, gq);
                accumulate(grads, ba.k, gk);
                accumulate(grads, ba.v, gv);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_uniform, Rng};

    /// Central differences of `f` around `x`, one entry at a time.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            g.as_mut_slice()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(build: &dyn Fn(&mut GradTape, Var) -> Var, x: Matrix) {
        let f = |m: &Matrix| {
            let mut t = GradTape::new();
            let v = t.leaf(m.clone());
            let out = build(&mut t, v);
            t.scalar(out)
        };
        let mut t = GradTape::new();
        let v = t.leaf(x.clone());
        let out = build(&mut t, v);
        let g = t.backward(out).get(v, x.shape());
        let n = numeric_grad(&x, &f);
        let err = g.max_abs_diff(&n);
        assert!(err < 1e-7, "analytic {g:?}\nnumeric {n:?}");
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        sample_uniform(&mut Rng::new(seed), -1.0, 1.0, rows, cols).unwrap()
    }

    #[test]
    fn elementwise_ops() {
        let target = sample(3, 4, 99);
        for which in 0..5 {
            let target = target.clone();
            check(
                &move |t, v| {
                    let y = match which {
                        0 => t.tanh(v),
                        1 => t.sigmoid(v),
                        2 => t.gelu(v),
                        3 => t.softmax_rows(v),
                        _ => t.scale(v, 2.5),
                    };
                    t.huber(y, &target, 0.3)
                },
                sample(3, 4, which),
            );
        }
    }

    #[test]
    fn products_and_layer_norm() {
        let w = sample(4, 5, 11);
        let w2 = sample(6, 5, 12);
        let gain = sample(1, 5, 13);
        let bias = sample(1, 5, 14);
        let target = sample(3, 6, 15);
        check(
            &move |t, v| {
                let wv = t.leaf(w.clone());
                let a = t.matmul(v, wv);
                let g = t.leaf(gain.clone());
                let b = t.leaf(bias.clone());
                let n = t.layer_norm(a, g, b, 1e-5);
                let w2v = t.leaf(w2.clone());
                let p = t.matmul_t(n, w2v);
                let p = t.reshape(p, 3, 8);
                let p = t.slice_cols(p, 1, 6);
                t.huber(p, &target, 0.5)
            },
            sample(3, 4, 16),
        );
    }

    #[test]
    fn structural_ops() {
        let target = sample(1, 24, 21);
        let s = sample(1, 1, 22);
        check(
            &move |t, v| {
                let top = t.slice_rows(v, 0, 1);
                let rest = t.slice_rows(v, 1, 2);
                let sv = t.leaf(s.clone());
                let sig = t.sigmoid(sv);
                let one_minus = t.rsub(1.0, sig);
                let a = t.scale_by(top, one_minus);
                let b = t.scale_by(rest, sig);
                let c = t.concat_rows(&[b, a]);
                let d = t.concat_cols(&[c, v]);
                let top8 = t.concat_cols(&[top, top]);
                let e = t.add_row(d, top8);
                let flat = t.reshape(e, 1, 24);
                t.huber(flat, &target, 0.2)
            },
            sample(3, 4, 23),
        );
    }

    #[test]
    fn block_attention_matches_finite_differences() {
        let k = sample(6, 3, 31);
        let v = sample(6, 2, 32);
        let target = sample(4, 2, 33);
        let mask = Matrix::from_vec(4, 3, vec![1.25, 0.0, 1.25, 1.25, 1.25, 1.25, 0.0, 1.25, 1.25, 1.25, 1.25, 0.0]);
        for use_mask in [false, true] {
            let (k, v, target, mask) = (k.clone(), v.clone(), target.clone(), mask.clone());
            // gradient with respect to q
            check(
                &move |t, q| {
                    let kv = t.leaf(k.clone());
                    let vv = t.leaf(v.clone());
                    let o = t.block_attention(q, kv, vv, 2, 0.7, use_mask.then(|| mask.clone()));
                    t.huber(o, &target, 0.5)
                },
                sample(4, 3, 34),
            );
        }
        let q = sample(4, 3, 35);
        let v2 = v.clone();
        let t2 = target.clone();
        check(
            &move |t, kk| {
                let qv = t.leaf(q.clone());
                let vv = t.leaf(v2.clone());
                let o = t.block_attention(qv, kk, vv, 2, 0.7, None);
                t.huber(o, &t2, 0.5)
            },
            k.clone(),
        );
        let q = sample(4, 3, 36);
        check(
            &move |t, vv| {
                let qv = t.leaf(q.clone());
                let kv = t.leaf(k.clone());
                let o = t.block_attention(qv, kv, vv, 2, 0.7, Some(mask.clone()));
                t.huber(o, &target, 0.5)
            },
            v,
        );
    }

    #[test]
    fn block_attention_equals_per_block_softmax() {
        let q = sample(4, 3, 41);
        let k = sample(6, 3, 42);
        let v = sample(6, 2, 43);
        let mut t = GradTape::new();
        let (qv, kv, vv) = (t.leaf(q.clone()), t.leaf(k.clone()), t.leaf(v.clone()));
        let o = t.block_attention(qv, kv, vv, 2, 0.5, None);
        for b in 0..2 {
            let qb = q.slice_rows(2 * b, 2 * b + 2);
            let kb = k.slice_rows(3 * b, 3 * b + 3);
            let vb = v.slice_rows(3 * b, 3 * b + 3);
            let mut s = qb.matmul_t(&kb).unwrap().scale(0.5);
            for r in 0..2 {
                crate::linalg::softmax_in_place(s.row_mut(r));
            }
            let expect = s.matmul(&vb).unwrap();
            let got = t.value(o).slice_rows(2 * b, 2 * b + 2);
            assert!(got.max_abs_diff(&expect) < 1e-14);
        }
    }

    #[test]
    fn kappa_gradient_through_scale_by() {
        let s = Matrix::filled(1, 1, 0.4);
        let x = sample(2, 2, 5);
        let target = Matrix::zeros(2, 2);
        let mut t = GradTape::new();
        let sv = t.leaf(s);
        let xv = t.leaf(x.clone());
        let y = t.scale_by(xv, sv);
        let l = t.huber(y, &target, 100.0);
        let g = t.backward(l).get(sv, (1, 1));
        // L = mean(½ (s x)²) ⇒ dL/ds = s · mean(x²)
        let expected = 0.4 * x.as_slice().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((g[(0, 0)] - expected).abs() < 1e-14);
    }
}
