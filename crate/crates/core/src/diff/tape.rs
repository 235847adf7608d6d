//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push gradients to its inputs. Nodes are created in
//! topological order, so [`Tape::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Logit(Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    SumN(Vec<Var>),
    SumAll(Var),
    MeanRows(Var),
    MulRows(Var, Var),
    ScatterRows(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ColMax(Var, Vec<usize>),
    Cosine(Var, Var),
    GaussianKl([Var; 4]),
    BernoulliKl(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    encoder_calls: usize,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records an input. Leaves receive gradients like any other node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable parameter. Each parameter maps to one node per
    /// tape, so its gradient is accumulated in one place.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn count_encoder_invocation(&mut self) {
        self.encoder_calls += 1;
    }

    /// Number of subgraph encodings run on this tape.
    pub fn encoder_invocations(&self) -> usize {
        self.encoder_calls
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x, y));
        }
        let (n, k, m) = (x.rows(), x.cols(), y.cols());
        let mut out = vec![0.0; n * m];
        let (xd, yd) = (x.data(), y.data());
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let xv = xd[i * k + p];
                if xv == 0.0 {
                    continue;
                }
                let yrow = &yd[p * m..(p + 1) * m];
                for (o, &w) in orow.iter_mut().zip(yrow) {
                    *o += xv * w;
                }
            }
        }
        Ok(self.push(Tensor::new(n, m, out)?, Op::MatMul(a, b)))
    }

    /// Adds a `1 × m` bias to every row of an `n × m` input.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err("add_bias", xv, bv));
        }
        let m = xv.cols();
        let mut out = xv.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += bv.data()[i % m];
        }
        let t = Tensor::new(xv.rows(), m, out)?;
        Ok(self.push(t, Op::AddBias(x, b)))
    }

    /// `x · W + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, x, y));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let t = Tensor::new(x.rows(), x.cols(), data)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&p| f(p)).collect();
        let t = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |p| p * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |p| p + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |p| if p > 0.0 { p } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |p| p.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// `ln p − ln(1 − p)`; infinite at 0 and 1, so callers clamp afterwards.
    pub fn logit(&mut self, p: Var) -> Var {
        self.map(p, |q| q.ln() - (1.0 - q).ln(), Op::Logit(p))
    }

    /// Column-wise concatenation of inputs with equal row counts.
    pub fn hcat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("hcat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for &x in xs {
            if self.value(x).rows() != rows {
                return Err(shape_err("hcat", self.value(*first), self.value(x)));
            }
        }
        let cols: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &x in xs {
                data.extend_from_slice(self.value(x).row_slice(r));
            }
        }
        let t = Tensor::new(rows, cols, data)?;
        Ok(self.push(t, Op::HCat(xs.to_vec())))
    }

    /// Row-wise stacking of inputs with equal column counts.
    pub fn vcat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("vcat of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.cols() != cols {
                return Err(shape_err("vcat", self.value(*first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(rows, cols, data)?;
        Ok(self.push(t, Op::VCat(xs.to_vec())))
    }

    /// Element-wise sum of equally shaped inputs, reduced in list order.
    pub fn sum_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("sum of nothing".into()))?;
        let mut acc = self.value(*first).clone();
        for &x in &xs[1..] {
            let v = self.value(x);
            if v.shape() != acc.shape() {
                return Err(shape_err("sum", &acc, v));
            }
            for (a, b) in acc.data_mut().iter_mut().zip(v.data()) {
                *a += b;
            }
        }
        Ok(self.push(acc, Op::SumN(xs.to_vec())))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Mean over rows, `n × d → 1 × d`, summing rows in order.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rows() == 0 {
            return Err(Error::InvalidArgument("mean of zero rows".into()));
        }
        let (n, d) = v.shape();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, p) in out.iter_mut().zip(v.row_slice(r)) {
                *o += p;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        Ok(self.push(Tensor::row(out), Op::MeanRows(x)))
    }

    /// Scales row `i` of an `n × d` input by entry `i` of an `n × 1` column.
    pub fn mul_rows(&mut self, x: Var, m: Var) -> Result<Var> {
        let (xv, mv) = (self.value(x), self.value(m));
        if mv.cols() != 1 || mv.rows() != xv.rows() {
            return Err(shape_err("mul_rows", xv, mv));
        }
        let d = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &p)| p * mv.data()[i / d.max(1)])
            .collect();
        let t = Tensor::new(xv.rows(), d, data)?;
        Ok(self.push(t, Op::MulRows(x, m)))
    }

    /// Sums row `i` of the input into output row `dest[i]`; the output has
    /// `n_out` rows.
    pub fn scatter_rows(&mut self, x: Var, dest: &[usize], n_out: usize) -> Result<Var> {
        let v = self.value(x);
        if dest.len() != v.rows() || dest.iter().any(|&d| d >= n_out) {
            return Err(Error::Shape {
                op: "scatter_rows",
                left: v.shape(),
                right: (dest.len(), n_out),
            });
        }
        let d = v.cols();
        let mut out = vec![0.0; n_out * d];
        for (i, &to) in dest.iter().enumerate() {
            for (o, p) in out[to * d..(to + 1) * d].iter_mut().zip(v.row_slice(i)) {
                *o += p;
            }
        }
        let t = Tensor::new(n_out, d, out)?;
        Ok(self.push(t, Op::ScatterRows(x, dest.to_vec())))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if idx.iter().any(|&i| i >= v.rows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: v.shape(),
                right: (idx.len(), 1),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * v.cols());
        for &i in idx {
            data.extend_from_slice(v.row_slice(i));
        }
        let t = Tensor::new(idx.len(), v.cols(), data)?;
        Ok(self.push(t, Op::GatherRows(x, idx.to_vec())))
    }

    /// Column-wise maximum, `n × d → 1 × d`. Ties go to the first row.
    pub fn col_max(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rows() == 0 {
            return Err(Error::InvalidArgument("max over zero rows".into()));
        }
        let (n, d) = v.shape();
        let mut arg = vec![0usize; d];
        let mut out = v.row_slice(0).to_vec();
        for r in 1..n {
            for (c, &p) in v.row_slice(r).iter().enumerate() {
                if p > out[c] {
                    out[c] = p;
                    arg[c] = r;
                }
            }
        }
        Ok(self.push(Tensor::row(out), Op::ColMax(x, arg)))
    }

    /// Element-wise maximum across a list of equally shaped row vectors.
    pub fn max_pool(&mut self, xs: &[Var]) -> Result<Var> {
        let stacked = self.vcat(xs)?;
        self.col_max(stacked)
    }

    /// Cosine similarity as a `1 × 1` value; zero when either side has zero
    /// norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.len() != y.len() {
            return Err(shape_err("cosine", x, y));
        }
        let c = cosine_value(x.data(), y.data());
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b)))
    }

    /// Closed-form `KL(N(mu_q, sigma_q²) ‖ N(mu_p, sigma_p²))` summed over
    /// coordinates of diagonal Gaussians.
    pub fn gaussian_kl(&mut self, mu_q: Var, sigma_q: Var, mu_p: Var, sigma_p: Var) -> Result<Var> {
        let shape = self.shape(mu_q);
        for v in [sigma_q, mu_p, sigma_p] {
            if self.shape(v) != shape {
                return Err(shape_err("gaussian_kl", self.value(mu_q), self.value(v)));
            }
        }
        for v in [sigma_q, sigma_p] {
            if self.value(v).data().iter().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidArgument(
                    "gaussian_kl requires strictly positive sigma".into(),
                ));
            }
        }
        let kl = gaussian_kl_value(
            self.value(mu_q).data(),
            self.value(sigma_q).data(),
            self.value(mu_p).data(),
            self.value(sigma_p).data(),
        );
        Ok(self.push(
            Tensor::scalar(kl),
            Op::GaussianKl([mu_q, sigma_q, mu_p, sigma_p]),
        ))
    }

    /// `Σ p·ln(p/τ) + (1−p)·ln((1−p)/(1−τ))` over all entries, with
    /// `0·ln 0 = 0`.
    pub fn bernoulli_kl(&mut self, p: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1)")));
        }
        let v = self.value(p);
        if v.data().iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::InvalidArgument(
                "probabilities outside [0, 1]".into(),
            ));
        }
        let kl = v.data().iter().map(|&q| bernoulli_kl_value(q, tau)).sum();
        Ok(self.push(Tensor::scalar(kl), Op::BernoulliKl(p, tau)))
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &dyn Fn(usize) -> f64| {
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (k, s) in slot.iter_mut().enumerate() {
                *s += f(k);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (n, k, m) = (x.rows(), x.cols(), y.cols());
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for r in 0..n {
                    let grow = &g[r * m..(r + 1) * m];
                    for p in 0..k {
                        let yrow = &y.data()[p * m..(p + 1) * m];
                        ga[r * k + p] = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        let xv = x.data()[r * k + p];
                        if xv != 0.0 {
                            for (s, &gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *s += xv * gv;
                            }
                        }
                    }
                }
                acc(*a, &|k| ga[k]);
                acc(*b, &|k| gb[k]);
            }
            Op::AddBias(x, b) => {
                let m = out.cols();
                let mut gb = vec![0.0; m];
                for (k, &gv) in g.iter().enumerate() {
                    gb[k % m] += gv;
                }
                acc(*x, &|k| g[k]);
                acc(*b, &|k| gb[k]);
            }
            Op::Add(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(*a, &|k| g[k]);
                acc(*b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|k| g[k] * y[k]);
                acc(*b, &|k| g[k] * x[k]);
            }
            Op::Scale(x, c) => acc(*x, &|k| g[k] * c),
            Op::AddScalar(x) => acc(*x, &|k| g[k]),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|k| if xv[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, &|k| g[k] * y[k] * (1.0 - y[k]));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                acc(*x, &|k| {
                    if xv[k] > *lo && xv[k] < *hi {
                        g[k]
                    } else {
                        0.0
                    }
                });
            }
            Op::Logit(p) => {
                let pv = self.value(*p).data();
                acc(*p, &|k| {
                    let q = pv[k];
                    if q > 0.0 && q < 1.0 {
                        g[k] / (q * (1.0 - q))
                    } else {
                        0.0
                    }
                });
            }
            Op::HCat(xs) => {
                let total = out.cols();
                let mut offset = 0;
                for &x in xs {
                    let c = self.value(x).cols();
                    acc(x, &|k| {
                        let (r, j) = (k / c, k % c);
                        g[r * total + offset + j]
                    });
                    offset += c;
                }
            }
            Op::VCat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    acc(x, &|k| g[offset + k]);
                    offset += n;
                }
            }
            Op::SumN(xs) => {
                for &x in xs {
                    acc(x, &|k| g[k]);
                }
            }
            Op::SumAll(x) => acc(*x, &|_| g[0]),
            Op::MeanRows(x) => {
                let (n, d) = self.value(*x).shape();
                acc(*x, &|k| g[k % d] / n as f64);
            }
            Op::MulRows(x, m) => {
                let (xv, mv) = (self.value(*x), self.value(*m));
                let d = xv.cols();
                acc(*x, &|k| g[k] * mv.data()[k / d]);
                let gm: Vec<f64> = (0..mv.rows())
                    .map(|r| (0..d).map(|c| g[r * d + c] * xv.data()[r * d + c]).sum())
                    .collect();
                acc(*m, &|k| gm[k]);
            }
            Op::ScatterRows(x, dest) => {
                let d = out.cols();
                acc(*x, &|k| g[dest[k / d] * d + k % d]);
            }
            Op::GatherRows(x, idx) => {
                let d = out.cols();
                let mut gx = vec![0.0; self.value(*x).len()];
                for (i, &from) in idx.iter().enumerate() {
                    for c in 0..d {
                        gx[from * d + c] += g[i * d + c];
                    }
                }
                acc(*x, &|k| gx[k]);
            }
            Op::ColMax(x, arg) => {
                let d = out.cols();
                acc(*x, &|k| {
                    let (r, c) = (k / d, k % d);
                    if arg[c] == r {
                        g[c]
                    } else {
                        0.0
                    }
                });
            }
            Op::Cosine(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let nx = norm(x);
                let ny = norm(y);
                if nx == 0.0 || ny == 0.0 {
                    acc(*a, &|_| 0.0);
                    acc(*b, &|_| 0.0);
                    return;
                }
                let c = out.item();
                let gs = g[0];
                acc(*a, &|k| gs * (y[k] / (nx * ny) - c * x[k] / (nx * nx)));
                acc(*b, &|k| gs * (x[k] / (nx * ny) - c * y[k] / (ny * ny)));
            }
            Op::GaussianKl([mq, sq, mp, sp]) => {
                let (mqv, sqv) = (self.value(*mq).data(), self.value(*sq).data());
                let (mpv, spv) = (self.value(*mp).data(), self.value(*sp).data());
                let gs = g[0];
                acc(*mq, &|k| gs * (mqv[k] - mpv[k]) / (spv[k] * spv[k]));
                acc(*mp, &|k| -gs * (mqv[k] - mpv[k]) / (spv[k] * spv[k]));
                acc(*sq, &|k| gs * (-1.0 / sqv[k] + sqv[k] / (spv[k] * spv[k])));
                acc(*sp, &|k| {
                    let d = mqv[k] - mpv[k];
                    gs * (1.0 / spv[k] - (sqv[k] * sqv[k] + d * d) / spv[k].powi(3))
                });
            }
            Op::BernoulliKl(p, tau) => {
                let pv = self.value(*p).data();
                let gs = g[0];
                let lt = (tau / (1.0 - tau)).ln();
                acc(*p, &|k| {
                    let q = pv[k].clamp(1e-12, 1.0 - 1e-12);
                    gs * ((q / (1.0 - q)).ln() - lt)
                });
            }
        }
    }
}

/// Gradients from one backward sweep, indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter recorded on `tape`, in id order.
    pub fn params(&self, tape: &Tape) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<_> = tape
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = self
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()]);
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine_value(x: &[f64], y: &[f64]) -> f64 {
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / (nx * ny)).clamp(-1.0, 1.0)
}

pub fn gaussian_kl_value(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> f64 {
    (0..mu_q.len())
        .map(|k| {
            let d = mu_q[k] - mu_p[k];
            (sigma_p[k] / sigma_q[k]).ln()
                + (sigma_q[k] * sigma_q[k] + d * d) / (2.0 * (sigma_p[k] * sigma_p[k]))
                - 0.5
        })
        .sum()
}

pub fn bernoulli_kl_value(p: f64, tau: f64) -> f64 {
    let a = if p > 0.0 { p * (p / tau).ln() } else { 0.0 };
    let b = if p < 1.0 {
        (1.0 - p) * ((1.0 - p) / (1.0 - tau)).ln()
    } else {
        0.0
    };
    a + b
}
