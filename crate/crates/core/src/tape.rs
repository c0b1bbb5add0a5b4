//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records primitive operations in evaluation order, so the node
//! list is always a valid topological order. Operations whose inputs are all
//! constants are evaluated eagerly and recorded as constants; only nodes
//! connected to a registered parameter take part in [`Tape::backward`].
//!
//! ```
//! use svdtrain::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = tape.square(w);
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[2.0, -4.0, 6.0]);
//! ```

use crate::conv::{self, Conv2dParams, ConvShape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    SqrtAbs(Var),
    Sum(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    ScaleColumns(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        shape: ConvShape,
        cols: Vec<f64>,
    },
    MaxPool(Var, Vec<usize>),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if `var` did not influence the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    /// Gradients of all registered parameters, in registration order.
    pub fn params(&self) -> Vec<Tensor> {
        self.params.iter().map(|&p| self.wrt(p)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes and parameter registrations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn parameters(&self) -> &[Var] {
        &self.params
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Registers a trainable tensor.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Param, true);
        self.params.push(v);
        v
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records `op` if any input is tracked, otherwise stores a constant.
    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        if inputs.iter().any(|&v| self.tracked(v)) {
            self.push(value, op, true)
        } else {
            self.push(value, Op::Constant, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.record(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.record(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.record(value, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).scale(alpha);
        self.record(value, Op::Scale(a, alpha), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.record(value, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.record(value, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.record(value, Op::Square(a), &[a])
    }

    /// Elementwise square root; negative inputs are a domain error.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::Parameter("sqrt of a negative value".into()));
        }
        let value = self.value(a).map(f64::sqrt);
        Ok(self.record(value, Op::Sqrt(a), &[a]))
    }

    /// `sqrt(|x|)`, with gradient 0 taken at exact zeros.
    pub fn sqrt_abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.abs().sqrt());
        self.record(value, Op::SqrtAbs(a), &[a])
    }

    /// Sum of all entries, as a 0-d tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.record(value, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(a).permute(axes)?;
        Ok(self.record(value, Op::Permute(a, axes.to_vec()), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).ndim() != 2 {
            return Err(Error::dim("transpose", self.shape(a), &[2]));
        }
        self.permute(a, &[1, 0])
    }

    /// `x · diag(d)` for a matrix `x` (R×C) and vector `d` (C).
    pub fn scale_columns(&mut self, x: Var, d: Var) -> Result<Var> {
        let (xs, ds) = (self.value(x), self.value(d));
        if xs.ndim() != 2 || ds.ndim() != 1 || xs.cols() != ds.numel() {
            return Err(Error::dim("scale_columns", xs.shape(), ds.shape()));
        }
        let c = xs.cols();
        let dd = ds.data();
        let data = xs
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * dd[i % c])
            .collect();
        let value = Tensor::from_parts(xs.shape().to_vec(), data);
        Ok(self.record(value, Op::ScaleColumns(x, d), &[x, d]))
    }

    /// Adds `bias[f]` along axis 1 of an `N×F×…` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x), self.value(bias));
        if xs.ndim() < 2 || bs.ndim() != 1 || xs.shape()[1] != bs.numel() {
            return Err(Error::dim("add_bias", xs.shape(), bs.shape()));
        }
        let f = bs.numel();
        let inner: usize = xs.shape()[2..].iter().product();
        let bd = bs.data();
        let data = xs
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[(i / inner) % f])
            .collect();
        let value = Tensor::from_parts(xs.shape().to_vec(), data);
        Ok(self.record(value, Op::AddBias(x, bias), &[x, bias]))
    }

    /// 2-D cross-correlation of `N×C×H×W` input with an `F×C×KH×KW` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, params: Conv2dParams) -> Result<Var> {
        let shape = ConvShape::resolve(self.shape(input), self.shape(kernel), params)?;
        let cols = conv::im2col(self.value(input).data(), &shape);
        let (f, k, np) = (shape.f, shape.patch_len(), shape.columns());
        let mut out = vec![0.0; f * np];
        gemm(f, k, np, self.value(kernel).data(), false, &cols, false, &mut out, 0.0);
        let data = conv::fnp_to_nfp(&out, f, shape.n, shape.oh * shape.ow);
        let value = Tensor::from_parts(vec![shape.n, f, shape.oh, shape.ow], data);
        let tracked = self.tracked(input) || self.tracked(kernel);
        let op = Op::Conv2d {
            input,
            kernel,
            shape,
            cols: if tracked { cols } else { Vec::new() },
        };
        Ok(self.record(value, op, &[input, kernel]))
    }

    /// Non-overlapping `k×k` max pooling.
    pub fn max_pool2d(&mut self, input: Var, k: usize) -> Result<Var> {
        let (shape, vals, arg) = conv::max_pool(self.value(input).data(), self.shape(input), k)?;
        let value = Tensor::from_parts(shape, vals);
        Ok(self.record(value, Op::MaxPool(input, arg), &[input]))
    }

    /// Mean softmax cross-entropy of `N×K` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.value(logits);
        if ls.ndim() != 2 || ls.rows() != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", ls.shape(), &[labels.len()]));
        }
        let k = ls.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Parameter(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = Vec::with_capacity(ls.numel());
        let mut loss = 0.0;
        for (row, &label) in ls.data().chunks(k).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
            loss += denom.ln() + max - row[label];
            probs.extend(row.iter().map(|x| (x - max).exp() / denom));
        }
        let value = Tensor::scalar(loss / labels.len() as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.record(value, op, &[logits]))
    }

    /// Reverse accumulation from a 0-d `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if !loss_shape.is_empty() {
            return Err(Error::Rank(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.tracked(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga, 0.0);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.tracked(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut gb, 0.0);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip(g, bv, |g, y| g * y));
                self.accumulate(grads, *b, zip(g, av, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, zip(g, bv, |g, y| g / y));
                let gb = g
                    .zip_map(av, |g, x| g * x)
                    .and_then(|t| t.zip_map(bv, |gx, y| -gx / (y * y)))
                    .expect("div shapes validated at record time");
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, alpha) => self.accumulate(grads, *a, g.scale(*alpha)),
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(g, x, |g, x| g * sign(x)));
            }
            Op::Square(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(g, x, |g, x| 2.0 * g * x));
            }
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, zip(g, out, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 }));
            }
            Op::SqrtAbs(a) => {
                let x = self.value(*a);
                let gx = g
                    .zip_map(out, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 })
                    .and_then(|t| t.zip_map(x, |t, x| t * sign(x)))
                    .expect("sqrt_abs shapes validated at record time");
                self.accumulate(grads, *a, gx);
            }
            Op::Sum(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(shape, g.item()));
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let ga = g.permute(&inverse).expect("inverse permutation is valid");
                self.accumulate(grads, *a, ga);
            }
            Op::ScaleColumns(x, d) => {
                let (xv, dv) = (self.value(*x), self.value(*d));
                let c = dv.numel();
                if self.tracked(*x) {
                    let dd = dv.data();
                    let data = g.data().iter().enumerate().map(|(i, g)| g * dd[i % c]).collect();
                    self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), data));
                }
                if self.tracked(*d) {
                    let mut gd = vec![0.0; c];
                    for (i, (g, x)) in g.data().iter().zip(xv.data()).enumerate() {
                        gd[i % c] += g * x;
                    }
                    self.accumulate(grads, *d, Tensor::vector(gd));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.tracked(*b) {
                    let f = self.value(*b).numel();
                    let inner: usize = g.shape()[2..].iter().product();
                    let mut gb = vec![0.0; f];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[(i / inner) % f] += v;
                    }
                    self.accumulate(grads, *b, Tensor::vector(gb));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                shape,
                cols,
            } => {
                let (f, k, np) = (shape.f, shape.patch_len(), shape.columns());
                let g_fnp = conv::nfp_to_fnp(g.data(), f, shape.n, shape.oh * shape.ow);
                if self.tracked(*kernel) {
                    let mut gk = vec![0.0; f * k];
                    gemm(f, np, k, &g_fnp, false, cols, true, &mut gk, 0.0);
                    let kshape = self.shape(*kernel).to_vec();
                    self.accumulate(grads, *kernel, Tensor::from_parts(kshape, gk));
                }
                if self.tracked(*input) {
                    let mut gcols = vec![0.0; k * np];
                    gemm(k, f, np, self.value(*kernel).data(), true, &g_fnp, false, &mut gcols, 0.0);
                    let gi = conv::col2im(&gcols, shape);
                    let ishape = self.shape(*input).to_vec();
                    self.accumulate(grads, *input, Tensor::from_parts(ishape, gi));
                }
            }
            Op::MaxPool(a, arg) => {
                let shape = self.shape(*a).to_vec();
                let mut gi = vec![0.0; shape.iter().product()];
                for (&src, g) in arg.iter().zip(g.data()) {
                    gi[src] += g;
                }
                self.accumulate(grads, *a, Tensor::from_parts(shape, gi));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let shape = self.shape(*logits).to_vec();
                let k = shape[1];
                let scale = g.item() / labels.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &label) in labels.iter().enumerate() {
                    gl[row * k + label] -= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(shape, gl));
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("gradient shape matches its node")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let m = tape.constant(Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let col = tape.constant(Tensor::matrix(&[&[0.0], &[1.0]]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p), tape.value(m));
        let q = tape.matmul(m, col).unwrap();
        assert_eq!(tape.value(q).data(), &[2.0, 4.0]);
        let z = tape.constant(Tensor::zeros(&[3, 4]));
        let any = tape.constant(Tensor::full(&[4, 2], 7.5));
        let zz = tape.matmul(z, any).unwrap();
        assert_eq!(tape.value(zz), &Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn conv2d_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let two = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let y = tape.conv2d(ones, two, Conv2dParams::square(1, 0)).unwrap();
        assert_eq!(tape.value(y), &Tensor::full(&[1, 1, 3, 3], 2.0));

        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = tape.conv2d(x, k, Conv2dParams::square(1, 0)).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0]);
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);

        let x = tape.constant(Tensor::full(&[2, 3, 5, 5], 0.3));
        let zk = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
        let y = tape.conv2d(x, zk, Conv2dParams::square(2, 1)).unwrap();
        assert_eq!(tape.value(y), &Tensor::zeros(&[2, 4, 3, 3]));
    }

    #[test]
    fn conv2d_rejects_non_integral_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let err = tape.conv2d(x, k, Conv2dParams::square(2, 0)).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.wrt(loss).item(), 1.0);

        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        assert_eq!(tape.backward(loss).unwrap().wrt(w).data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn orthogonality_stationary_at_identity() {
        let mut tape = Tape::new();
        let u = tape.param(Tensor::eye(3));
        let ut = tape.transpose(u).unwrap();
        let gram = tape.matmul(ut, u).unwrap();
        let eye = tape.constant(Tensor::eye(3));
        let d = tape.sub(gram, eye).unwrap();
        let sq = tape.square(d);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap().wrt(u);
        assert_eq!(g, Tensor::zeros(&[3, 3]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Rank(_))));
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.param(Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let loss = tape.sum(a);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(b), Tensor::zeros(&[2, 2]));
        assert_eq!(grads.params().len(), 2);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(w * w + w)  => grad = 2w + 1
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, -3.0]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.add(sq, w).unwrap();
        let loss = tape.sum(s);
        assert_eq!(tape.backward(loss).unwrap().wrt(w).data(), &[3.0, -5.0]);
    }

    #[test]
    fn constant_only_ops_are_not_tracked() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0]));
        let b = tape.relu(a);
        assert!(!tape.tracked(b));
    }
}
