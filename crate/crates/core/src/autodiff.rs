//! Minimal reverse-mode autodiff over 2D `f64` tensors.
//!
//! The model code builds a fresh [`Graph`] per forward pass; every tensor is
//! an `Array2<f64>` (vectors as single-row matrices, scalars as 1x1). The op
//! set is exactly what the dual-branch network needs: matrix products,
//! broadcasting adds/muls, row softmax, layer normalization, SiLU, column
//! slicing/concatenation, flat gathers for (un)patchifying latents, and a
//! per-frame weighted sum. Backward walks the tape in reverse, accumulating
//! gradients into leaves.

use std::sync::Arc;

use ndarray::{Array2, Axis};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `(T,d) + (1,d)` row broadcast.
    AddRow(Var, Var),
    /// `(T,d) * (1,d)` row broadcast.
    MulRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    /// Row-wise softmax.
    Softmax(Var),
    /// Row-wise normalization to zero mean / unit variance (no affine).
    LayerNorm(Var, f64),
    Silu(Var),
    /// Mean over all elements, producing 1x1.
    MeanAll(Var),
    /// Column means: `(T,d) -> (1,d)`.
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Flat permutation gather into a new shape: `out.flat[i] = in.flat[idx[i]]`.
    Gather(Var, Arc<Vec<usize>>),
    /// `sum_n weights[0,n] * items[n]`, items of equal shape.
    WeightedSum(Vec<Var>, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// A tape of operations with stored intermediate values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar() on non-1x1 node");
        a[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input/constant/parameter tensor.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = &self.nodes[row.0].value;
        assert_eq!(r.nrows(), 1, "add_row expects a 1xD row");
        let v = &self.nodes[a.0].value + &r.row(0);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = &self.nodes[row.0].value;
        assert_eq!(r.nrows(), 1, "mul_row expects a 1xD row");
        let v = &self.nodes[a.0].value * &r.row(0);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(y, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        self.push(y, Op::LayerNorm(a, eps))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let m = x.sum() / x.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let m = x.mean_axis(Axis(0)).expect("nonempty");
        let v = m.insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut out = Array2::zeros((rows, total));
        let mut c0 = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.nrows(), rows, "concat_cols row mismatch");
            out.slice_mut(ndarray::s![.., c0..c0 + v.ncols()]).assign(v);
            c0 += v.ncols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let v = self.nodes[a.0].value.slice(ndarray::s![.., c0..c1]).to_owned();
        self.push(v, Op::SliceCols(a, c0, c1))
    }

    /// Gathers flattened (row-major) elements of `a` into a new shape.
    /// `idx.len()` must equal `rows * cols`; indices may repeat.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather index/shape mismatch");
        let src = &self.nodes[a.0].value;
        let flat: Vec<f64> = src.iter().cloned().collect();
        let data: Vec<f64> = idx.iter().map(|&i| flat[i]).collect();
        let v = Array2::from_shape_vec((rows, cols), data).expect("gather shape");
        self.push(v, Op::Gather(a, idx))
    }

    /// `sum_n weights[0,n] * items[n]`; `weights` is a `1xN` row.
    pub fn weighted_sum(&mut self, items: &[Var], weights: Var) -> Var {
        let w = self.nodes[weights.0].value.clone();
        assert_eq!(w.nrows(), 1);
        assert_eq!(w.ncols(), items.len(), "one weight per item");
        let mut out: Array2<f64> = &self.nodes[items[0].0].value * w[(0, 0)];
        for (n, item) in items.iter().enumerate().skip(1) {
            out = out + &self.nodes[item.0].value * w[(0, n)];
        }
        self.push(out, Op::WeightedSum(items.to_vec(), weights))
    }

    /// True if any node holds a non-finite value; returns the first index.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.value.iter().any(|v| !v.is_finite()))
    }

    /// Reverse-mode sweep from a 1x1 `loss` node. Returns one gradient slot
    /// per node; leaves hold the accumulated dLoss/dLeaf.
    pub fn backward(&self, loss: Var) -> Vec<Option<Array2<f64>>> {
        assert_eq!(self.nodes[loss.0].value.dim(), (1, 1), "loss must be 1x1");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g); // keep for the caller
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, gr);
                }
                Op::MulRow(a, row) => {
                    let r = &self.nodes[row.0].value;
                    let ga = &g * &r.row(0);
                    let gr = (&g * &self.nodes[a.0].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *row, gr);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b.0].value.t());
                    let gb = self.nodes[a.0].value.t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.t().to_owned());
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g * *c);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[i].value;
                    let mut gx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| g[(r, c)] * y[(r, c)]).sum();
                        for c in 0..y.ncols() {
                            gx[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm(a, eps) => {
                    let x = &self.nodes[a.0].value;
                    let y = &self.nodes[i].value;
                    let mut gx = Array2::zeros(x.dim());
                    let n = x.ncols() as f64;
                    for r in 0..x.nrows() {
                        let row = x.row(r);
                        let mean = row.sum() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean: f64 = (0..x.ncols()).map(|c| g[(r, c)]).sum::<f64>() / n;
                        let gy_dot: f64 =
                            (0..x.ncols()).map(|c| g[(r, c)] * y[(r, c)]).sum::<f64>() / n;
                        for c in 0..x.ncols() {
                            gx[(r, c)] = inv * (g[(r, c)] - g_mean - y[(r, c)] * gy_dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::Silu(a) => {
                    let x = &self.nodes[a.0].value;
                    let gx = ndarray::Zip::from(&g).and(x).map_collect(|&gv, &xv| {
                        let s = sigmoid(xv);
                        gv * (s + xv * s * (1.0 - s))
                    });
                    accumulate(&mut grads, *a, gx);
                }
                Op::MeanAll(a) => {
                    let x = &self.nodes[a.0].value;
                    let c = g[(0, 0)] / x.len() as f64;
                    accumulate(&mut grads, *a, Array2::from_elem(x.dim(), c));
                }
                Op::MeanRows(a) => {
                    let x = &self.nodes[a.0].value;
                    let t = x.nrows() as f64;
                    let mut gx = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        for c in 0..x.ncols() {
                            gx[(r, c)] = g[(0, c)] / t;
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let gp = g.slice(ndarray::s![.., c0..c0 + w]).to_owned();
                        accumulate(&mut grads, *p, gp);
                        c0 += w;
                    }
                }
                Op::SliceCols(a, c0, c1) => {
                    let x = &self.nodes[a.0].value;
                    let mut gx = Array2::zeros(x.dim());
                    gx.slice_mut(ndarray::s![.., *c0..*c1]).assign(&g);
                    accumulate(&mut grads, *a, gx);
                }
                Op::Gather(a, idx) => {
                    let x = &self.nodes[a.0].value;
                    let mut flat = vec![0.0f64; x.len()];
                    for (out_i, &src_i) in idx.iter().enumerate() {
                        flat[src_i] += g.as_slice().expect("contiguous")[out_i];
                    }
                    let gx = Array2::from_shape_vec(x.dim(), flat).expect("gather grad shape");
                    accumulate(&mut grads, *a, gx);
                }
                Op::WeightedSum(items, weights) => {
                    let w = &self.nodes[weights.0].value;
                    let mut gw = Array2::zeros(w.dim());
                    for (n, item) in items.iter().enumerate() {
                        let gi = &g * w[(0, n)];
                        gw[(0, n)] = (&g * &self.nodes[item.0].value).sum();
                        accumulate(&mut grads, *item, gi);
                    }
                    accumulate(&mut grads, *weights, gw);
                }
            }
        }
        grads
    }

    pub fn grad_of<'g>(
        &self,
        grads: &'g [Option<Array2<f64>>],
        v: Var,
    ) -> Option<&'g Array2<f64>> {
        grads[v.0].as_ref()
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
