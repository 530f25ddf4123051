//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records primitive operations in execution order. Every
//! operation returns a [`Var`] handle; [`Tape::gradients`] walks the record
//! backwards once from a scalar output and returns the gradient of that output
//! with respect to every recorded value.
//!
//! ```
//! use decaypo::autodiff::Tape;
//! use decaypo::RealArray;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(RealArray::scalar(3.0));
//! let y = tape.square(x);
//! let grads = tape.gradients(y).unwrap();
//! assert_eq!(grads.wrt(x).values(), &[6.0]);
//! ```
//!
//! The primitive set is deliberately small: matrix products, elementwise
//! add/multiply/scale/offset, row gather and row slicing (embeddings and
//! output windows), causal row softmax and ReLU (attention and feed-forward),
//! the log-softmax target gather, sums and weighted sums, and the scalar
//! nonlinearities the preference losses need (log-sigmoid, sigmoid, square,
//! `log(1 - e^x)`). Shape mismatches are programming errors and panic; data
//! dependent failures (out-of-range indices) are returned as errors.

use crate::array::RealArray;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    CausalSoftmax(Var),
    Relu(Var),
    LogProbGather(Var, Vec<usize>),
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
    LogSigmoid(Var),
    Sigmoid(Var),
    Square(Var),
    Log1mExp(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: RealArray,
}

/// Ordered record of primitive operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<RealArray>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&RealArray> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`; exactly zero when `v` does not participate.
    pub fn wrt(&self, v: Var) -> RealArray {
        match self.get(v) {
            Some(g) => g.clone(),
            None => RealArray::zeros(self.shapes[v.0].clone()),
        }
    }
}

/// Numerically stable `log(sigmoid(x))`, computed as `-softplus(-x)`.
pub fn logsigmoid(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("logsigmoid of non-finite {x}")));
    }
    Ok(logsigmoid_unchecked(x))
}

#[inline]
pub(crate) fn logsigmoid_unchecked(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
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

/// `log(1 - e^x)` for `x < 0`.
#[inline]
pub(crate) fn log1mexp(x: f64) -> f64 {
    if x < -std::f64::consts::LN_2 {
        (-x.exp()).ln_1p()
    } else {
        (-x.exp_m1()).ln()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// Per-row log-softmax evaluated at `targets[t]` for a `T x V` logit matrix.
pub fn sequence_logprobs_from_logits(logits: &RealArray, targets: &[usize]) -> Result<RealArray> {
    check_targets(logits, targets)?;
    let out = targets
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let row = logits.row(t);
            row[y] - log_sum_exp(row)
        })
        .collect();
    Ok(RealArray::vector(out))
}

fn check_targets(logits: &RealArray, targets: &[usize]) -> Result<()> {
    if logits.shape().len() != 2 || logits.rows() != targets.len() {
        return Err(Error::invalid(format!(
            "logits shape {:?} does not match {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    let v = logits.cols();
    if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
        return Err(Error::invalid(format!(
            "target index {bad} out of range for vocabulary {v}"
        )));
    }
    Ok(())
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a (m x k) * b^T` where `b` is `n x k`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T * b` where `a` is `m x k` and `b` is `m x n`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn two_d(a: &RealArray, what: &str) -> (usize, usize) {
    assert!(
        a.shape().len() == 2,
        "{what}: expected a matrix, got shape {:?}",
        a.shape()
    );
    (a.shape()[0], a.shape()[1])
}

fn map(a: &RealArray, f: impl Fn(f64) -> f64) -> RealArray {
    RealArray::new(a.shape().to_vec(), a.values().iter().map(|&x| f(x)).collect())
        .expect("shape preserved")
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

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    /// Value of a single-element var.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert!(val.is_scalar(), "var {} is not a scalar", v.0);
        val.values()[0]
    }

    fn push(&mut self, op: Op, value: RealArray) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: RealArray) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = two_d(self.value(a), "matmul lhs");
        let (k2, n) = two_d(self.value(b), "matmul rhs");
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let out = matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        self.push(Op::MatMul(a, b), RealArray::new(vec![m, n], out).unwrap())
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = two_d(self.value(a), "matmul_t lhs");
        let (n, k2) = two_d(self.value(b), "matmul_t rhs");
        assert_eq!(k, k2, "matmul_t inner dimensions differ");
        let out = matmul_nt(self.value(a).values(), self.value(b).values(), m, k, n);
        self.push(Op::MatMulT(a, b), RealArray::new(vec![m, n], out).unwrap())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add: shapes differ");
        let out = x.values().iter().zip(y.values()).map(|(p, q)| p + q).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Add(a, b), RealArray::new(shape, out).unwrap())
    }

    /// `a - b`, recorded as `a + (-1) * b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul: shapes differ");
        let out = x.values().iter().zip(y.values()).map(|(p, q)| p * q).collect();
        let shape = x.shape().to_vec();
        self.push(Op::Mul(a, b), RealArray::new(shape, out).unwrap())
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| x * c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = map(self.value(a), |x| x + c);
        self.push(Op::Offset(a), out)
    }

    /// Rows `idx[i]` of the matrix `table`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = two_d(t, "gather_rows");
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::invalid(format!("row index {i} out of range for {r} rows")));
            }
            out.extend_from_slice(t.row(i));
        }
        let value = RealArray::new(vec![idx.len(), c], out).unwrap();
        Ok(self.push(Op::GatherRows(table, idx.to_vec()), value))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let (r, c) = two_d(x, "slice_rows");
        assert!(start < end && end <= r, "slice_rows: bad range {start}..{end} of {r}");
        let out = x.values()[start * c..end * c].to_vec();
        self.push(Op::SliceRows(a, start), RealArray::new(vec![end - start, c], out).unwrap())
    }

    /// Row softmax of a square score matrix where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, n2) = two_d(x, "causal_softmax");
        assert_eq!(n, n2, "causal_softmax needs a square matrix");
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let row = &x.row(i)[..=i];
            let lse = log_sum_exp(row);
            for (j, &v) in row.iter().enumerate() {
                out[i * n + j] = (v - lse).exp();
            }
        }
        self.push(Op::CausalSoftmax(a), RealArray::new(vec![n, n], out).unwrap())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(0.0));
        self.push(Op::Relu(a), out)
    }

    /// Log-softmax of each logit row evaluated at its target index.
    pub fn log_prob_gather(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let value = sequence_logprobs_from_logits(self.value(logits), targets)?;
        Ok(self.push(Op::LogProbGather(logits, targets.to_vec()), value))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values().iter().sum();
        self.push(Op::Sum(a), RealArray::scalar(s))
    }

    /// `sum_i w[i] * a[i]` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), weights.len(), "weighted_sum: length mismatch");
        let s = x.values().iter().zip(weights).map(|(v, w)| v * w).sum();
        self.push(Op::WeightedSum(a, weights.to_vec()), RealArray::scalar(s))
    }

    pub fn logsigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), logsigmoid_unchecked);
        self.push(Op::LogSigmoid(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x * x);
        self.push(Op::Square(a), out)
    }

    /// Elementwise `log(1 - e^x)`; inputs must be negative.
    pub fn log1mexp(&mut self, a: Var) -> Var {
        let out = map(self.value(a), log1mexp);
        self.push(Op::Log1mExp(a), out)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to every
    /// value recorded before it.
    pub fn gradients(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if !out_val.is_scalar() {
            return Err(Error::Contract(format!(
                "gradients need a scalar output, got shape {:?}",
                out_val.shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<RealArray>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| RealArray::new(self.nodes[i].value.shape().to_vec(), g).unwrap()))
            .collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = node.value.values();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let da = matmul_nt(g, bv.values(), m, n, k);
                let db = matmul_tn(av.values(), g, m, k, n);
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[0];
                let da = matmul(g, bv.values(), m, n, k);
                let db = matmul_tn(g, av.values(), m, n, k);
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|g| g * c).collect();
                accumulate(grads, *a, &da);
            }
            Op::Offset(a) => accumulate(grads, *a, g),
            Op::GatherRows(table, idx) => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut dt = vec![0.0; tv.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dt[i * c + j] += g[r * c + j];
                    }
                }
                accumulate(grads, *table, &dt);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut da = vec![0.0; av.len()];
                da[start * c..start * c + g.len()].copy_from_slice(g);
                accumulate(grads, *a, &da);
            }
            Op::CausalSoftmax(a) => {
                let n = node.value.shape()[0];
                let mut da = vec![0.0; n * n];
                for i in 0..n {
                    let yr = &y[i * n..i * n + i + 1];
                    let gr = &g[i * n..i * n + i + 1];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..=i {
                        da[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::LogProbGather(logits, targets) => {
                let lv = self.value(*logits);
                let v = lv.cols();
                let mut dl = vec![0.0; lv.len()];
                for (t, &tgt) in targets.iter().enumerate() {
                    let row = lv.row(t);
                    let lse = log_sum_exp(row);
                    let out = &mut dl[t * v..(t + 1) * v];
                    for (o, &x) in out.iter_mut().zip(row) {
                        *o = -g[t] * (x - lse).exp();
                    }
                    out[tgt] += g[t];
                }
                accumulate(grads, *logits, &dl);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &da);
            }
            Op::WeightedSum(a, w) => {
                let da: Vec<f64> = w.iter().map(|w| w * g[0]).collect();
                accumulate(grads, *a, &da);
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g.iter().zip(x).map(|(g, &x)| g * sigmoid(-x)).collect();
                accumulate(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = g.iter().zip(y).map(|(g, &y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *a, &da);
            }
            Op::Square(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g.iter().zip(x).map(|(g, &x)| 2.0 * g * x).collect();
                accumulate(grads, *a, &da);
            }
            Op::Log1mExp(a) => {
                let x = self.value(*a).values();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| -g / (-x).exp_m1())
                    .collect();
                accumulate(grads, *a, &da);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Free-function form of [`Tape::gradients`].
pub fn gradients(tape: &Tape, output: Var) -> Result<Gradients> {
    tape.gradients(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_logprob(row: &[f64], y: usize) -> f64 {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        (row[y].exp() / z).ln()
    }

    #[test]
    fn logsigmoid_anchors() {
        assert!((logsigmoid(0.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((logsigmoid(-1000.0).unwrap() + 1000.0).abs() < 1e-6);
        assert!(logsigmoid(1000.0).unwrap().abs() < 1e-6);
        assert!(logsigmoid(1e4).unwrap() <= 0.0);
        assert!(logsigmoid(-1e4).unwrap().is_finite());
        assert!(logsigmoid(f64::NAN).is_err());
        assert!(logsigmoid(f64::INFINITY).is_err());
    }

    #[test]
    fn logsigmoid_complement() {
        let mut x = -30.0;
        while x <= 30.0 {
            let s = logsigmoid(x).unwrap().exp() + logsigmoid(-x).unwrap().exp();
            assert!((s - 1.0).abs() < 1e-12, "x={x}");
            x += 0.37;
        }
    }

    #[test]
    fn logprob_anchors() {
        let logits = RealArray::zeros(vec![3, 4]);
        let lp = sequence_logprobs_from_logits(&logits, &[0, 3, 2]).unwrap();
        for v in lp.values() {
            assert!((v + 4f64.ln()).abs() < 1e-12);
        }
        let logits = RealArray::matrix(1, 2, vec![10.0, -10.0]).unwrap();
        let lp = sequence_logprobs_from_logits(&logits, &[0]).unwrap();
        assert!((lp.values()[0] + (-20f64).exp().ln_1p()).abs() < 1e-14);
        assert!((lp.values()[0] + 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn logprob_matches_naive_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..15).map(|_| rng.random_range(-3.0..3.0)).collect();
        let logits = RealArray::matrix(3, 5, vals).unwrap();
        let targets = [4, 0, 2];
        let lp = sequence_logprobs_from_logits(&logits, &targets).unwrap();
        for t in 0..3 {
            let expect = naive_logprob(logits.row(t), targets[t]);
            assert!((lp.values()[t] - expect).abs() < 1e-12);
            let total: f64 = (0..5)
                .map(|y| sequence_logprobs_from_logits(&logits, &[y, y, y]).unwrap().values()[t].exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logprob_rejects_bad_target() {
        let logits = RealArray::zeros(vec![2, 4]);
        assert!(matches!(
            sequence_logprobs_from_logits(&logits, &[0, 4]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn square_and_logsigmoid_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(RealArray::scalar(3.0));
        let y = tape.square(x);
        assert_eq!(tape.gradients(y).unwrap().wrt(x).values(), &[6.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(RealArray::scalar(0.0));
        let y = tape.logsigmoid(x);
        assert_eq!(tape.gradients(y).unwrap().wrt(x).values(), &[0.5]);
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(RealArray::vector(vec![1.0, 2.0]));
        let y = tape.square(x);
        assert!(matches!(tape.gradients(y), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(RealArray::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(RealArray::vector(vec![5.0, 6.0, 7.0]));
        let y = tape.sum(x);
        let g = tape.gradients(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).values(), &[0.0, 0.0, 0.0]);
    }
}
