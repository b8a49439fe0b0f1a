//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every model computation in this crate is recorded on a [`Tape`]: leaves
//! hold parameters or constant inputs, interior nodes hold the result of one
//! primitive op. [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient of a scalar (1×1) node with respect to every node.
//!
//! The op set is deliberately small. Anything that is linear in its input
//! with data-independent coefficients (latent decoding, bilinear warping by a
//! fixed flow) goes through [`SparseMap`].

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed linear map `out[i] = Σ_k w_ik · in[j_ik]` over row-major flattened
/// matrices.
#[derive(Clone, Debug)]
pub struct SparseMap {
    in_len: usize,
    out_shape: (usize, usize),
    /// `offsets[i]..offsets[i + 1]` indexes the terms of output element `i`.
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMap {
    pub fn builder(in_len: usize, out_shape: (usize, usize)) -> SparseMapBuilder {
        SparseMapBuilder {
            map: SparseMap {
                in_len,
                out_shape,
                offsets: vec![0],
                cols: Vec::new(),
                weights: Vec::new(),
            },
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    pub fn apply(&self, input: &[f64]) -> Mat {
        let (r, c) = self.out_shape;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r * c {
            let mut acc = 0.0;
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.weights[k] * input[self.cols[k]];
            }
            out.push(acc);
        }
        Mat::from_shape_vec((r, c), out).expect("sparse map output shape")
    }

    fn apply_transpose(&self, grad_out: &[f64], grad_in: &mut [f64]) {
        for (i, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for k in self.offsets[i]..self.offsets[i + 1] {
                grad_in[self.cols[k]] += self.weights[k] * g;
            }
        }
    }
}

pub struct SparseMapBuilder {
    map: SparseMap,
}

impl SparseMapBuilder {
    /// Adds a term to the output element currently being built.
    pub fn term(&mut self, col: usize, weight: f64) {
        debug_assert!(col < self.map.in_len);
        self.map.cols.push(col);
        self.map.weights.push(weight);
    }

    /// Closes the current output element and starts the next one.
    pub fn finish_row(&mut self) {
        self.map.offsets.push(self.map.cols.len());
    }

    pub fn build(self) -> Result<SparseMap> {
        let (r, c) = self.map.out_shape;
        if self.map.offsets.len() != r * c + 1 {
            return Err(Error::shape(format!(
                "sparse map has {} outputs, expected {}",
                self.map.offsets.len() - 1,
                r * c
            )));
        }
        Ok(self.map)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row` broadcast over rows.
    AddRow(Var, Var),
    /// `a ⊙ row` broadcast over rows.
    MulRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    SoftmaxRows(Var),
    /// Row-wise root-mean-square normalization (no gain).
    RmsNorm(Var, f64),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Abs(Var),
    Square(Var),
    Mean(Var),
    Sum(Var),
    Sparse(Var, Arc<SparseMap>),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Tape::backward`]; `None` for nodes the loss does not depend on.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn check_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Mat::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(Error::shape(format!(
                "matmul_nt {:?} x {:?}ᵀ",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(&vb.t());
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self.value(a), self.value(b), "mul")?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn check_row(&self, a: Var, row: Var, what: &str) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::shape(format!(
                "{what}: row {:?} against {:?}",
                vr.dim(),
                va.dim()
            )));
        }
        Ok(())
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row(a, row, "add_row")?;
        let out = self.value(a) + self.value(row);
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row(a, row, "mul_row")?;
        let out = self.value(a) * self.value(row);
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn rms_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let n = out.ncols() as f64;
        for mut row in out.rows_mut() {
            let ms = row.iter().map(|x| x * x).sum::<f64>() / n;
            let r = (ms + eps).sqrt();
            row /= r;
        }
        self.push(out, Op::RmsNorm(a, eps))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.ncols() {
            return Err(Error::shape(format!(
                "slice_cols {start}+{len} of {:?}",
                va.dim()
            )));
        }
        let out = va.slice(s![.., start..start + len]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start, len)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.nrows() {
            return Err(Error::shape(format!(
                "slice_rows {start}+{len} of {:?}",
                va.dim()
            )));
        }
        let out = va.slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start, len)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::shape(format!("concat_cols: {e}")))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape(format!("concat_rows: {e}")))?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.sum() / va.len() as f64;
        self.push(Mat::from_elem((1, 1), m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let m = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), m), Op::Sum(a))
    }

    pub fn sparse(&mut self, a: Var, map: Arc<SparseMap>) -> Result<Var> {
        let va = self.value(a);
        if va.len() != map.in_len() {
            return Err(Error::shape(format!(
                "sparse map expects {} inputs, got {:?}",
                map.in_len(),
                va.dim()
            )));
        }
        let out = match va.as_slice() {
            Some(s) => map.apply(s),
            None => map.apply(&va.iter().cloned().collect::<Vec<_>>()),
        };
        Ok(self.push(out, Op::Sparse(a, map)))
    }

    /// Gradient of the 1×1 node `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::shape("backward requires a 1x1 loss".to_string()));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let grow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, grow);
                    acc(&mut grads, *a, &g * self.value(*row));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::Silu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gi, &x| {
                        let s = sigmoid(x);
                        *gi *= s * (1.0 + x * (1.0 - s));
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|r, &yy| *r -= yy * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RmsNorm(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = x.ncols() as f64;
                    let mut ga = g.clone();
                    for ((mut grow, xrow), yrow) in
                        ga.rows_mut().into_iter().zip(x.rows()).zip(y.rows())
                    {
                        let ms = xrow.iter().map(|v| v * v).sum::<f64>() / n;
                        let r = (ms + eps).sqrt();
                        let gy = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gi, &yi| *gi = (*gi - yi * gy) / r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start, len) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start, len) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::Abs(a) => {
                    let ga = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&gi, &x| gi * x.signum() * (x != 0.0) as u8 as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::Square(a) => acc(&mut grads, *a, &g * &(self.value(*a) * 2.0)),
                Op::Mean(a) => {
                    let va = self.value(*a);
                    let ga = Mat::from_elem(va.dim(), g[[0, 0]] / va.len() as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Mat::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::Sparse(a, map) => {
                    let dim = self.value(*a).dim();
                    let mut gin = vec![0.0; dim.0 * dim.1];
                    let gout: Vec<f64> = g.iter().cloned().collect();
                    map.apply_transpose(&gout, &mut gin);
                    acc(
                        &mut grads,
                        *a,
                        Mat::from_shape_vec(dim, gin).expect("sparse grad shape"),
                    );
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }
}
