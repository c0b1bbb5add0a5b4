//! Orthogonality and sparsity regularizers on SVD factors, and the assembled
//! training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::SvdLayer;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Below this L2 norm the Hoyer ratio is defined as 0 with zero gradient.
pub const HOYER_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityKind {
    #[default]
    None,
    L1,
    Hoyer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda_o: f64,
    pub lambda_s: f64,
    pub kind: SparsityKind,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            lambda_o: 1.0,
            lambda_s: 0.0,
            kind: SparsityKind::None,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_o >= 0.0 && self.lambda_s >= 0.0) {
            return Err(Error::Parameter(format!(
                "regularizer strengths must be non-negative (lambda_o={}, lambda_s={})",
                self.lambda_o, self.lambda_s
            )));
        }
        if self.kind == SparsityKind::None && self.lambda_s != 0.0 {
            return Err(Error::Parameter(
                "lambda_s must be 0 when no sparsity regularizer is selected".into(),
            ));
        }
        Ok(())
    }

    /// Same orthogonality strength, no sparsity term.
    pub fn without_sparsity(&self) -> Self {
        RegularizerConfig {
            lambda_o: self.lambda_o,
            lambda_s: 0.0,
            kind: SparsityKind::None,
        }
    }
}

/// `(‖uᵀu − I‖²_F + ‖vᵀv − I‖²_F) / r²`.
pub fn orthogonality_loss(tape: &mut Tape, u: Var, v: Var) -> Result<Var> {
    let (us, vs) = (tape.shape(u), tape.shape(v));
    if us.len() != 2 || vs.len() != 2 || us[1] != vs[1] || us[1] == 0 {
        return Err(Error::dim("orthogonality_loss", us, vs));
    }
    let r = us[1];
    let gu = gram_deviation_sq(tape, u)?;
    let gv = gram_deviation_sq(tape, v)?;
    let total = tape.add(gu, gv)?;
    Ok(tape.scale(total, 1.0 / (r * r) as f64))
}

fn gram_deviation_sq(tape: &mut Tape, m: Var) -> Result<Var> {
    let r = tape.shape(m)[1];
    let mt = tape.transpose(m)?;
    let gram = tape.matmul(mt, m)?;
    let eye = tape.constant(Tensor::eye(r));
    let dev = tape.sub(gram, eye)?;
    let sq = tape.square(dev);
    Ok(tape.sum(sq))
}

/// `Σ|s_i|`.
pub fn l1_loss(tape: &mut Tape, s: Var) -> Var {
    let a = tape.abs(s);
    tape.sum(a)
}

/// `‖s‖₁ / ‖s‖₂`, or 0 when `‖s‖₂ < 1e-12`.
pub fn hoyer_loss(tape: &mut Tape, s: Var) -> Result<Var> {
    if tape.value(s).frobenius_norm() < HOYER_GUARD {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let l1 = l1_loss(tape, s);
    let sq = tape.square(s);
    let sum_sq = tape.sum(sq);
    let l2 = tape.sqrt(sum_sq)?;
    tape.div(l1, l2)
}

/// Tape handles of one decomposed layer's factors.
#[derive(Clone, Copy, Debug)]
pub struct FactorVars {
    pub u: Var,
    pub s: Var,
    pub v: Var,
}

/// `task + λ_o Σ_l L_o(u_l, v_l) + λ_s Σ_l L_s(s_l)`.
pub fn total_objective(
    tape: &mut Tape,
    task_loss: Var,
    layers: &[FactorVars],
    config: &RegularizerConfig,
) -> Result<Var> {
    let mut total = task_loss;
    if config.lambda_o != 0.0 {
        for f in layers {
            let lo = orthogonality_loss(tape, f.u, f.v)?;
            let term = tape.scale(lo, config.lambda_o);
            total = tape.add(total, term)?;
        }
    }
    if config.lambda_s != 0.0 {
        for f in layers {
            let ls = match config.kind {
                SparsityKind::None => continue,
                SparsityKind::L1 => l1_loss(tape, f.s),
                SparsityKind::Hoyer => hoyer_loss(tape, f.s)?,
            };
            let term = tape.scale(ls, config.lambda_s);
            total = tape.add(total, term)?;
        }
    }
    Ok(total)
}

/// Plain-value orthogonality loss of a layer, for monitoring.
pub fn orthogonality_residual(layer: &SvdLayer) -> f64 {
    let r = layer.rank() as f64;
    let dev = |m: &Tensor| {
        let gram = m.transpose().and_then(|t| t.matmul(m)).expect("factor is a matrix");
        gram.sub(&Tensor::eye(m.cols())).expect("gram is r×r").sum_squares()
    };
    (dev(&layer.u) + dev(&layer.v)) / (r * r)
}

/// Plain-value Hoyer ratio, with the same guard as [`hoyer_loss`].
pub fn hoyer_value(s: &[f64]) -> f64 {
    let l2 = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 < HOYER_GUARD {
        return 0.0;
    }
    s.iter().map(|x| x.abs()).sum::<f64>() / l2
}
