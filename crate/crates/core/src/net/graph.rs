//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation applied to its nodes. Values are
//! computed eagerly, so building the graph is the forward pass; [`Graph::backward`]
//! walks the tape in reverse and returns gradients for parameters and nodes.
//!
//! Spectral inputs use frame rows `[re(0..F) | im(0..F)]` (see
//! [`SpecTensor::to_rows`](crate::tensor::SpecTensor::to_rows)).

use crate::error::{Error, Result};
use crate::net::params::{Mat, ParamId, ParamStore};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Offset inside the compressed magnitude `(re^2 + im^2 + eps)^(1/4)`.
pub const MAG_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddRowVec(NodeId, NodeId),
    MulRowVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Silu(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SpecFeatures(NodeId),
    CMul(NodeId, NodeId),
    RowMean(NodeId),
    DwConvTime(NodeId, NodeId),
}

struct Node<T> {
    op: Op<T>,
    value: Option<Mat<T>>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    params: Vec<Option<Mat<T>>>,
    nodes: Vec<Option<Mat<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Mat<T>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn node(&self, id: NodeId) -> Option<&Mat<T>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    /// Dense per-parameter gradient buffers (zeros where a parameter was unused).
    pub fn into_param_buffers(self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        self.params
            .into_iter()
            .zip(store.iter())
            .map(|(g, p)| g.map(|m| m.data).unwrap_or_else(|| vec![T::zero(); p.value.data.len()]))
            .collect()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn shape_err(op: &str, a: &Mat<impl Real>, b: &Mat<impl Real>) -> Error {
    Error::Shape(format!("{op}: {}x{} with {}x{}", a.rows, a.cols, b.rows, b.cols))
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat<T> {
        match &self.nodes[id.0] {
            Node { op: Op::Param(p), .. } => &self.params.get(*p).value,
            Node { value: Some(v), .. } => v,
            Node { value: None, .. } => unreachable!("non-param node without value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Mat<T>) -> NodeId {
        self.nodes.push(Node { op, value: Some(value) });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat<T>) -> NodeId {
        self.push(Op::Input, m)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(x), self.value(w));
        if a.cols != b.rows {
            return Err(shape_err("matmul", a, b));
        }
        let mut out = Mat::zeros(a.rows, b.cols);
        T::gemm(a.rows, a.cols, b.cols, T::one(), &a.data, false, &b.data, false, T::zero(), &mut out.data);
        Ok(self.push(Op::MatMul(x, w), out))
    }

    fn row_vec_op(&mut self, x: NodeId, v: NodeId, mul: bool) -> Result<NodeId> {
        let (a, b) = (self.value(x), self.value(v));
        if b.rows != 1 || b.cols != a.cols {
            return Err(shape_err(if mul { "mul_row_vec" } else { "add_row_vec" }, a, b));
        }
        let mut out = a.clone();
        for row in out.data.chunks_exact_mut(a.cols) {
            for (o, &bv) in row.iter_mut().zip(&b.data) {
                if mul {
                    *o *= bv;
                } else {
                    *o += bv;
                }
            }
        }
        let op = if mul { Op::MulRowVec(x, v) } else { Op::AddRowVec(x, v) };
        Ok(self.push(op, out))
    }

    /// Adds a `1 x C` row vector to every row.
    pub fn add_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.row_vec_op(x, v, false)
    }

    /// Multiplies every row elementwise by a `1 x C` row vector.
    pub fn mul_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.row_vec_op(x, v, true)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, mul: bool) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(shape_err(if mul { "mul" } else { "add" }, x, y));
        }
        let data = x
            .data
            .iter()
            .zip(&y.data)
            .map(|(&p, &q)| if mul { p * q } else { p + q })
            .collect();
        let out = Mat { rows: x.rows, cols: x.cols, data };
        Ok(self.push(if mul { Op::Mul(a, b) } else { Op::Add(a, b) }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, true)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x);
        let out = Mat {
            rows: v.rows,
            cols: v.cols,
            data: v.data.iter().map(|&a| a * c).collect(),
        };
        self.push(Op::Scale(x, c), out)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out = Mat {
            rows: v.rows,
            cols: v.cols,
            data: v.data.iter().map(|&a| a * sigmoid(a)).collect(),
        };
        self.push(Op::Silu(x), out)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).rows;
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(Error::Shape("concat: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let v = self.value(p);
                out.data[r * cols + c0..r * cols + c0 + v.cols].copy_from_slice(v.row(r));
                c0 += v.cols;
            }
        }
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if start + len > v.cols {
            return Err(Error::Shape(format!("slice {start}+{len} of {} cols", v.cols)));
        }
        let mut out = Mat::zeros(v.rows, len);
        for r in 0..v.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&v.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols(x, start), out))
    }

    /// Maps spectral rows `[re | im]` (2F wide) to `[re | im | (re^2+im^2+eps)^(1/4)]`.
    pub fn spec_features(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if !v.cols.is_multiple_of(2) {
            return Err(Error::Shape("spec_features needs an even column count".into()));
        }
        let f = v.cols / 2;
        let eps = T::lit(MAG_EPS);
        let mut out = Mat::zeros(v.rows, 3 * f);
        for r in 0..v.rows {
            let src = v.row(r);
            let dst = &mut out.data[r * 3 * f..(r + 1) * 3 * f];
            dst[..2 * f].copy_from_slice(src);
            for k in 0..f {
                let p = src[k] * src[k] + src[f + k] * src[f + k] + eps;
                dst[2 * f + k] = p.sqrt().sqrt();
            }
        }
        Ok(self.push(Op::SpecFeatures(x), out))
    }

    /// Complex elementwise product of two spectral row blocks.
    pub fn cmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) || x.cols % 2 != 0 {
            return Err(shape_err("cmul", x, y));
        }
        let f = x.cols / 2;
        let mut out = Mat::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let (p, q) = (x.row(r), y.row(r));
            let o = &mut out.data[r * 2 * f..(r + 1) * 2 * f];
            for k in 0..f {
                o[k] = p[k] * q[k] - p[f + k] * q[f + k];
                o[f + k] = p[k] * q[f + k] + p[f + k] * q[k];
            }
        }
        Ok(self.push(Op::CMul(a, b), out))
    }

    /// Average over rows (pooling over frames), giving a `1 x C` row.
    pub fn row_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rows == 0 {
            return Err(Error::Empty("row_mean over zero rows"));
        }
        let mut out = Mat::zeros(1, v.cols);
        for r in 0..v.rows {
            for (o, &a) in out.data.iter_mut().zip(v.row(r)) {
                *o += a;
            }
        }
        let n = T::from_usize(v.rows).unwrap();
        out.data.iter_mut().for_each(|o| *o /= n);
        Ok(self.push(Op::RowMean(x), out))
    }

    /// Depthwise convolution along rows (time) with a `3 x C` kernel and zero padding:
    /// `y[l][c] = k[0][c] x[l-1][c] + k[1][c] x[l][c] + k[2][c] x[l+1][c]`.
    pub fn dwconv_time(&mut self, x: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (v, k) = (self.value(x), self.value(kernel));
        if k.rows != 3 || k.cols != v.cols {
            return Err(shape_err("dwconv_time", v, k));
        }
        let c = v.cols;
        let mut out = Mat::zeros(v.rows, c);
        for l in 0..v.rows {
            let o = &mut out.data[l * c..(l + 1) * c];
            for j in 0..3 {
                let src = l as isize + j as isize - 1;
                if src < 0 || src >= v.rows as isize {
                    continue;
                }
                let xs = v.row(src as usize);
                let kr = k.row(j);
                for i in 0..c {
                    o[i] += kr[i] * xs[i];
                }
            }
        }
        Ok(self.push(Op::DwConvTime(x, kernel), out))
    }

    /// Reverse pass seeded with upstream gradients on one or more nodes.
    pub fn backward(&self, seeds: &[(NodeId, Mat<T>)]) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("backward called on an empty graph".into()));
        }
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            if id.0 >= self.nodes.len() {
                return Err(Error::Graph(format!("unknown node {}", id.0)));
            }
            if !g.same_shape(self.value(*id)) {
                return Err(shape_err("backward seed", g, self.value(*id)));
            }
            accumulate(&mut grads, *id, g.clone());
        }
        let mut param_grads: Vec<Option<Mat<T>>> = (0..self.params.len()).map(|_| None).collect();

        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => grads[i] = Some(gy),
                Op::Param(p) => {
                    match &mut param_grads[p.0] {
                        Some(acc) => acc.add_assign(&gy),
                        slot => *slot = Some(gy.clone()),
                    }
                    grads[i] = Some(gy);
                }
                Op::MatMul(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    T::gemm(gy.rows, gy.cols, xv.cols, T::one(), &gy.data, false, &wv.data, true, T::zero(), &mut gx.data);
                    let mut gw = Mat::zeros(wv.rows, wv.cols);
                    T::gemm(xv.cols, xv.rows, gy.cols, T::one(), &xv.data, true, &gy.data, false, T::zero(), &mut gw.data);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::AddRowVec(x, v) => {
                    let mut gv = Mat::zeros(1, gy.cols);
                    for row in gy.data.chunks_exact(gy.cols) {
                        for (a, &b) in gv.data.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *v, gv);
                    accumulate(&mut grads, *x, gy);
                }
                Op::MulRowVec(x, v) => {
                    let (xv, vv) = (self.value(*x), self.value(*v));
                    let mut gx = gy.clone();
                    let mut gv = Mat::zeros(1, gy.cols);
                    for r in 0..gy.rows {
                        let xr = xv.row(r);
                        let gr = &mut gx.data[r * gy.cols..(r + 1) * gy.cols];
                        for c in 0..gy.cols {
                            gv.data[c] += gr[c] * xr[c];
                            gr[c] *= vv.data[c];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *v, gv);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gy.clone());
                    accumulate(&mut grads, *b, gy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip(&gy, bv, |g, q| g * q);
                    let gb = zip(&gy, av, |g, p| g * p);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    let gx = Mat {
                        rows: gy.rows,
                        cols: gy.cols,
                        data: gy.data.iter().map(|&g| g * c).collect(),
                    };
                    accumulate(&mut grads, *x, gx);
                }
                Op::Silu(x) => {
                    let gx = zip(&gy, self.value(*x), |g, a| {
                        let s = sigmoid(a);
                        g * s * (T::one() + a * (T::one() - s))
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Mat::zeros(gy.rows, w);
                        for r in 0..gy.rows {
                            gp.data[r * w..(r + 1) * w].copy_from_slice(&gy.row(r)[c0..c0 + w]);
                        }
                        accumulate(&mut grads, p, gp);
                        c0 += w;
                    }
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..gy.rows {
                        gx.data[r * xv.cols + start..r * xv.cols + start + gy.cols].copy_from_slice(gy.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SpecFeatures(x) => {
                    let xv = self.value(*x);
                    let f = xv.cols / 2;
                    let eps = T::lit(MAG_EPS);
                    let half = T::lit(0.5);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let src = xv.row(r);
                        let g = gy.row(r);
                        let o = &mut gx.data[r * 2 * f..(r + 1) * 2 * f];
                        for k in 0..f {
                            let (re, im) = (src[k], src[f + k]);
                            let p = re * re + im * im + eps;
                            let m = p.sqrt().sqrt();
                            // d m / d re = re * m / (2 p)
                            let dm = g[2 * f + k] * half * m / p;
                            o[k] = g[k] + dm * re;
                            o[f + k] = g[f + k] + dm * im;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::CMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let f = av.cols / 2;
                    let mut ga = Mat::zeros(av.rows, av.cols);
                    let mut gb = Mat::zeros(bv.rows, bv.cols);
                    for r in 0..av.rows {
                        let (p, q, g) = (av.row(r), bv.row(r), gy.row(r));
                        let base = r * 2 * f;
                        for k in 0..f {
                            let (gr, gi) = (g[k], g[f + k]);
                            ga.data[base + k] = gr * q[k] + gi * q[f + k];
                            ga.data[base + f + k] = -gr * q[f + k] + gi * q[k];
                            gb.data[base + k] = gr * p[k] + gi * p[f + k];
                            gb.data[base + f + k] = -gr * p[f + k] + gi * p[k];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::RowMean(x) => {
                    let xv = self.value(*x);
                    let n = T::from_usize(xv.rows).unwrap();
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for row in gx.data.chunks_exact_mut(xv.cols) {
                        for (o, &g) in row.iter_mut().zip(&gy.data) {
                            *o = g / n;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::DwConvTime(x, kernel) => {
                    let (xv, kv) = (self.value(*x), self.value(*kernel));
                    let c = xv.cols;
                    let mut gx = Mat::zeros(xv.rows, c);
                    let mut gk = Mat::zeros(3, c);
                    for l in 0..xv.rows {
                        let g = gy.row(l);
                        for j in 0..3 {
                            let src = l as isize + j as isize - 1;
                            if src < 0 || src >= xv.rows as isize {
                                continue;
                            }
                            let s = src as usize;
                            let kr = kv.row(j);
                            let xs = xv.row(s);
                            for i in 0..c {
                                gx.data[s * c + i] += kr[i] * g[i];
                                gk.data[j * c + i] += xs[i] * g[i];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *kernel, gk);
                }
            }
            if !matches!(self.nodes[i].op, Op::Input | Op::Param(_)) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            params: param_grads,
            nodes: grads,
        })
    }
}

fn zip<T: Real>(a: &Mat<T>, b: &Mat<T>, f: impl Fn(T, T) -> T) -> Mat<T> {
    Mat {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Mat<T>>], id: NodeId, g: Mat<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradcheck::{grad_check, probe_loss};
    use crate::net::params::Init;
    use crate::rng::{seeded, uniform};

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut r = seeded(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| uniform(&mut r, -1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut r = seeded(0);
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", 3, 2, Init::FanIn(1.0), &mut r);
        let mut g = Graph::new(&store);
        let x = g.input(rand_mat(1, 3, 1));
        let wi = g.param(w);
        let y = g.matmul(x, wi).unwrap();
        let up = rand_mat(1, 2, 2);
        let grads = g.backward(&[(y, up.clone())]).unwrap();
        let gw = grads.param(w).unwrap();
        let xv = g.value(x);
        for i in 0..3 {
            for j in 0..2 {
                assert!((gw.data[i * 2 + j] - xv.data[i] * up.data[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_parameter_gradients() {
        let mut r = seeded(0);
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", 4, 4, Init::FanIn(1.0), &mut r);
        let mut g = Graph::new(&store);
        let x = g.input(rand_mat(3, 4, 1));
        let wi = g.param(w);
        let y = g.matmul(x, wi).unwrap();
        let y = g.silu(y);
        let grads = g.backward(&[(y, Mat::zeros(3, 4))]).unwrap();
        assert!(grads.param(w).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_bad_seeds() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        assert!(g.backward(&[]).is_err());
        let mut g = Graph::new(&store);
        let x = g.input(Mat::zeros(2, 2));
        assert!(g.backward(&[(x, Mat::zeros(1, 2))]).is_err());
        assert!(g.backward(&[(NodeId(7), Mat::zeros(2, 2))]).is_err());
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut r = seeded(11);
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", 5, 6, Init::FanIn(1.0), &mut r);
        let b = store.add("b", 5, 6, Init::FanIn(1.0), &mut r);
        let v = store.add("v", 1, 6, Init::FanIn(1.0), &mut r);
        let k = store.add("k", 3, 6, Init::FanIn(1.0), &mut r);
        let w = store.add("w", 9, 6, Init::FanIn(1.0), &mut r);
        let f = probe_loss(
            move |g| {
                let (a, b, v, k, w) = (g.param(a), g.param(b), g.param(v), g.param(k), g.param(w));
                let c = g.cmul(a, b)?;
                let s = g.spec_features(c)?; // 5 x 9
                let h = g.matmul(s, w)?; // 5 x 6
                let h = g.mul_row_vec(h, v)?;
                let h = g.add_row_vec(h, v)?;
                let h = g.silu(h);
                let h = g.dwconv_time(h, k)?;
                let m = g.mul(h, a)?;
                let m = g.scale(m, 0.7);
                let m = g.add(m, b)?;
                let cat = g.concat(&[m, h])?;
                let sl = g.slice_cols(cat, 4, 5)?;
                let pooled = g.row_mean(sl)?;
                let tail = g.slice_cols(cat, 0, 5)?;
                let tail = g.mul_row_vec(tail, pooled)?;
                g.concat(&[tail, sl])
            },
            5,
        );
        let rep = grad_check(&mut store, 1, f).unwrap();
        assert!(rep.passes(1e-6), "{rep:?}");
    }
}
