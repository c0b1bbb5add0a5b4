//! Central-difference gradient verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::Conv2dParams;
use crate::error::Result;
use crate::layers::{ConvGeometry, DecompositionScheme, DenseLayer, LayerGeometry, SvdLayer};
use crate::model::Model;
use crate::regularizers::{hoyer_loss, l1_loss, orthogonality_loss, total_objective, RegularizerConfig, SparsityKind};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar function against central
/// differences, coordinate by coordinate.
///
/// `f` receives a fresh tape and the parameter node and returns the scalar
/// loss node. The result is the maximum over coordinates of
/// `|numeric - analytic| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(f: F, p: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(eps > 0.0 && eps <= 1e-2, "eps must lie in (0, 1e-2]");
    let mut tape = Tape::new();
    let var = tape.param(p.clone());
    let loss = f(&mut tape, var)?;
    let analytic = tape.backward(loss)?.wrt(var);

    let eval = |q: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let var = tape.param(q);
        let loss = f(&mut tape, var)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    for i in 0..p.numel() {
        let mut plus = p.clone();
        plus.data_mut()[i] += eps;
        let mut minus = p.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((numeric - a).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

type LossFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// A scalar function of one parameter tensor, for [`finite_diff_check`].
pub struct GradCase {
    pub name: String,
    pub param: Tensor,
    pub f: LossFn,
}

impl GradCase {
    fn new(name: impl Into<String>, param: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var> + 'static) -> Self {
        GradCase {
            name: name.into(),
            param,
            f: Box::new(f),
        }
    }

    pub fn check(&self, eps: f64) -> Result<f64> {
        finite_diff_check(&self.f, &self.param, eps)
    }
}

/// `Σ out ⊙ w`, so every output coordinate reaches the loss with its own weight.
fn weighted_sum(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let c = tape.constant(w.clone());
    let m = tape.mul(out, c)?;
    Ok(tape.sum(m))
}

/// Gaussian entries pushed at least 0.2 away from zero (clear of kinks).
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng).map(|x| x + 0.2 * x.signum())
}

fn unary(name: &str, x: Tensor, w: Tensor, op: impl Fn(&mut Tape, Var) -> Result<Var> + 'static) -> GradCase {
    GradCase::new(name, x, move |t, p| {
        let out = op(t, p)?;
        weighted_sum(t, out, &w)
    })
}

/// Gradient of a two-input op with respect to `lhs` (`wrt_lhs`) or `rhs`.
fn binary(
    name: &str,
    a: Tensor,
    b: Tensor,
    w: Tensor,
    wrt_lhs: bool,
    op: impl Fn(&mut Tape, Var, Var) -> Result<Var> + 'static,
) -> GradCase {
    let (param, other) = if wrt_lhs { (a, b) } else { (b, a) };
    GradCase::new(name, param, move |t, p| {
        let o = t.constant(other.clone());
        let out = if wrt_lhs { op(t, p, o)? } else { op(t, o, p)? };
        weighted_sum(t, out, &w)
    })
}

fn both(
    cases: &mut Vec<GradCase>,
    name: &str,
    a: Tensor,
    b: Tensor,
    w: Tensor,
    op: impl Fn(&mut Tape, Var, Var) -> Result<Var> + Clone + 'static,
) {
    cases.push(binary(&format!("{name}/lhs"), a.clone(), b.clone(), w.clone(), true, op.clone()));
    cases.push(binary(&format!("{name}/rhs"), a, b, w, false, op));
}

/// Forward of `layer` with tensor `slot` replaced by the parameter.
fn layer_case(name: String, layer: SvdLayer, slot: usize, input: Tensor, w: Tensor) -> GradCase {
    let param = layer.tensors()[slot].clone();
    GradCase::new(name, param, move |t, p| {
        let mut vars: Vec<Var> = layer.tensors().into_iter().map(|x| t.constant(x.clone())).collect();
        vars[slot] = p;
        let x = t.constant(input.clone());
        let out = layer.forward(t, &vars, x)?;
        weighted_sum(t, out, &w)
    })
}

/// Full training objective of a decomposed model with tensor `slot` of
/// parameter layer `layer` as the variable.
fn objective_case(name: String, model: Model, layer: usize, slot: usize, input: Tensor, labels: Vec<usize>) -> GradCase {
    let param = model.layers().nth(layer).expect("layer exists").tensors()[slot].clone();
    let config = RegularizerConfig {
        lambda_o: 1.0,
        lambda_s: 0.1,
        kind: SparsityKind::Hoyer,
    };
    GradCase::new(name, param, move |t, p| {
        let mut vars = model.register(t, false);
        vars.layers[layer][slot] = p;
        let x = t.constant(input.clone());
        let logits = model.forward(t, &vars, x)?;
        let task = t.softmax_cross_entropy(logits, &labels)?;
        let factors = model.factor_vars(&vars);
        total_objective(t, task, &factors, &config)
    })
}

/// Seeded cases covering every differentiable tape op, both regularizers,
/// SVD-layer forwards under each scheme, and the assembled objective.
pub fn standard_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut cases = Vec::new();
    let randn = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::randn(shape, 1.0, rng);

    let (a, b, w) = (randn(&[3, 4], rng), randn(&[4, 2], rng), randn(&[3, 2], rng));
    both(&mut cases, "matmul", a, b, w, |t, x, y| t.matmul(x, y));
    let (a, b, w) = (randn(&[2, 3], rng), randn(&[2, 3], rng), randn(&[2, 3], rng));
    both(&mut cases, "add", a.clone(), b.clone(), w.clone(), |t, x, y| t.add(x, y));
    both(&mut cases, "sub", a.clone(), b.clone(), w.clone(), |t, x, y| t.sub(x, y));
    both(&mut cases, "mul", a.clone(), b.clone(), w.clone(), |t, x, y| t.mul(x, y));
    let den = Tensor::uniform(&[2, 3], 0.5, 2.0, rng);
    both(&mut cases, "div", a.clone(), den, w.clone(), |t, x, y| t.div(x, y));

    cases.push(unary("scale", a.clone(), w.clone(), |t, x| Ok(t.scale(x, -1.7))));
    let kinked = away_from_zero(&[2, 3], rng);
    cases.push(unary("relu", kinked.clone(), w.clone(), |t, x| Ok(t.relu(x))));
    cases.push(unary("abs", kinked.clone(), w.clone(), |t, x| Ok(t.abs(x))));
    cases.push(unary("square", a.clone(), w.clone(), |t, x| Ok(t.square(x))));
    let positive = Tensor::uniform(&[2, 3], 0.5, 2.0, rng);
    cases.push(unary("sqrt", positive, w.clone(), |t, x| t.sqrt(x)));
    cases.push(unary("sqrt_abs", kinked, w.clone(), |t, x| Ok(t.sqrt_abs(x))));
    cases.push(GradCase::new("sum", a.clone(), |t, x| {
        let s = t.sum(x);
        let sq = t.square(s);
        Ok(t.sum(sq))
    }));
    let w6 = randn(&[3, 2], rng);
    cases.push(unary("reshape", a.clone(), w6, |t, x| t.reshape(x, &[3, 2])));
    let (x3, w3) = (randn(&[2, 3, 4], rng), randn(&[4, 2, 3], rng));
    cases.push(unary("permute", x3, w3, |t, x| t.permute(x, &[2, 0, 1])));
    let wt = randn(&[3, 2], rng);
    cases.push(unary("transpose", a.clone(), wt, |t, x| t.transpose(x)));

    let (x, d, w) = (randn(&[4, 3], rng), randn(&[3], rng), randn(&[4, 3], rng));
    both(&mut cases, "scale_columns", x, d, w, |t, x, d| t.scale_columns(x, d));
    let (x, bias, w) = (randn(&[2, 3, 2, 2], rng), randn(&[3], rng), randn(&[2, 3, 2, 2], rng));
    both(&mut cases, "add_bias", x, bias, w, |t, x, b| t.add_bias(x, b));

    for (label, params) in [
        ("conv2d", Conv2dParams::square(1, 1)),
        ("conv2d_strided", Conv2dParams::square(2, 1)),
        (
            "conv2d_anisotropic",
            Conv2dParams {
                stride: (1, 2),
                padding: (1, 0),
            },
        ),
    ] {
        let input = randn(&[2, 2, 5, 5], rng);
        let kernel = randn(&[3, 2, 3, 3], rng);
        let mut probe = Tape::new();
        let (xi, ki) = (probe.constant(input.clone()), probe.constant(kernel.clone()));
        let o = probe.conv2d(xi, ki, params).expect("valid geometry");
        let out_shape = probe.shape(o).to_vec();
        let w = randn(&out_shape, rng);
        both(&mut cases, label, input, kernel, w, move |t, x, k| t.conv2d(x, k, params));
    }

    let (x, w) = (randn(&[2, 2, 4, 4], rng), randn(&[2, 2, 2, 2], rng));
    cases.push(unary("max_pool2d", x, w, |t, x| t.max_pool2d(x, 2)));
    let logits = randn(&[4, 3], rng);
    cases.push(GradCase::new("softmax_cross_entropy", logits, |t, x| {
        t.softmax_cross_entropy(x, &[0, 2, 1, 2])
    }));

    let (u, v) = (randn(&[5, 3], rng), randn(&[4, 3], rng));
    let v_fixed = v.clone();
    cases.push(GradCase::new("orthogonality_loss/u", u.clone(), move |t, p| {
        let v = t.constant(v_fixed.clone());
        orthogonality_loss(t, p, v)
    }));
    cases.push(GradCase::new("orthogonality_loss/v", v, move |t, p| {
        let u = t.constant(u.clone());
        orthogonality_loss(t, u, p)
    }));
    let s = away_from_zero(&[6], rng);
    cases.push(GradCase::new("l1_loss", s.clone(), |t, p| Ok(l1_loss(t, p))));
    cases.push(GradCase::new("hoyer_loss", s, hoyer_loss));

    let fc = LayerGeometry::linear(4, 5);
    let conv = LayerGeometry::Conv(ConvGeometry::new(3, 2, 3, 3, 1, 1).expect("valid conv"));
    for (label, geometry, scheme, input_shape) in [
        ("fc", fc, DecompositionScheme::FullyConnected, vec![3, 5]),
        ("channel", conv, DecompositionScheme::ChannelWise, vec![2, 2, 4, 4]),
        ("spatial", conv, DecompositionScheme::SpatialWise, vec![2, 2, 4, 4]),
    ] {
        let dense = DenseLayer::init(geometry, rng);
        let mut layer = SvdLayer::from_dense_layer(&dense, scheme).expect("decomposes");
        // Keep singular values clear of the kink of √|s| at zero.
        layer.s = layer.s.map(|x| x.max(0.3));
        if let Some(b) = &mut layer.bias {
            *b = randn(b.shape(), rng);
        }
        let input = randn(&input_shape, rng);
        let mut probe = Tape::new();
        let xi = probe.constant(input.clone());
        let out = layer.forward_const(&mut probe, xi).expect("forward");
        let w = randn(probe.shape(out), rng);
        for (slot, role) in ["u", "s", "v", "bias"].iter().enumerate() {
            cases.push(layer_case(format!("svd_layer/{label}/{role}"), layer.clone(), slot, input.clone(), w.clone()));
        }
    }

    for scheme in [DecompositionScheme::ChannelWise, DecompositionScheme::SpatialWise] {
        let mut model = Model::cnn_s(&[1, 4, 4], 3, rng)
            .expect("valid input")
            .decompose(scheme)
            .expect("decomposes");
        // Perturb the factors so the orthogonality term is active.
        for t in model.tensors_mut() {
            let noise: Vec<f64> = (0..t.numel()).map(|_| 0.05 * rng.random_range(-1.0..1.0)).collect();
            t.data_mut().iter_mut().zip(noise).for_each(|(x, n)| *x += n);
        }
        let input = randn(&[3, 1, 4, 4], rng);
        let tag = if scheme == DecompositionScheme::ChannelWise { "channel" } else { "spatial" };
        for layer in 0..3 {
            for (slot, role) in ["u", "s", "v"].iter().enumerate() {
                cases.push(objective_case(
                    format!("objective/{tag}/layer{layer}/{role}"),
                    model.clone(),
                    layer,
                    slot,
                    input.clone(),
                    vec![0, 2, 1],
                ));
            }
        }
    }
    cases
}
