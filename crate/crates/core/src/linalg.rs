//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 60;
const ROTATION_TOL: f64 = 1e-12;

/// Thin SVD factors `a = u · diag(s) · vᵀ` with `u: m×r`, `s: r`, `v: n×r`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFactors {
    pub u: Tensor,
    pub s: Tensor,
    pub v: Tensor,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.numel()
    }

    pub fn reconstruct(&self) -> Tensor {
        let us = scale_cols(&self.u, self.s.data());
        us.matmul(&self.v.transpose().expect("v is a matrix"))
            .expect("factor shapes agree")
    }

    /// Keeps the leading `r` triplets.
    pub fn truncate(&self, r: usize) -> SvdFactors {
        let keep: Vec<usize> = (0..r.min(self.rank())).collect();
        SvdFactors {
            u: self.u.select_columns(&keep),
            s: self.s.select(&keep),
            v: self.v.select_columns(&keep),
        }
    }
}

fn scale_cols(m: &Tensor, d: &[f64]) -> Tensor {
    let c = m.cols();
    let data = m.data().iter().enumerate().map(|(i, x)| x * d[i % c]).collect();
    Tensor::from_parts(m.shape().to_vec(), data)
}

/// Thin SVD of an `m×n` matrix with `r = min(m, n)`.
///
/// Singular values are non-negative and non-increasing. Each column of `u` has
/// its largest-magnitude entry non-negative (first such entry on ties), which
/// makes the factorization deterministic up to repeated singular values.
pub fn svd(a: &Tensor) -> Result<SvdFactors> {
    if a.ndim() != 2 || a.rows() == 0 || a.cols() == 0 {
        return Err(Error::dim("svd", a.shape(), &[]));
    }
    if !a.is_finite() {
        return Err(Error::Parameter("svd input contains non-finite values".into()));
    }
    let (m, n) = (a.rows(), a.cols());
    let mut f = if m >= n {
        jacobi_tall(a)?
    } else {
        let t = jacobi_tall(&a.transpose()?)?;
        SvdFactors {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    fix_signs(&mut f);
    Ok(f)
}

/// One-sided Jacobi for `m >= n`. Columns are held column-major while rotating.
fn jacobi_tall(a: &Tensor) -> Result<SvdFactors> {
    let (m, n) = (a.rows(), a.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    let mut residual = 0.0;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        residual = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 {
                    continue;
                }
                let scale = (alpha * beta).sqrt();
                let off = gamma.abs() / scale;
                residual = residual.max(off);
                if off <= ROTATION_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric {
            op: "jacobi svd",
            residual,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut zero_slots = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            ucols.push(cols[j].iter().map(|x| x / norms[j]).collect());
        } else {
            ucols.push(vec![0.0; m]);
            zero_slots.push(k);
        }
    }
    complete_basis(&mut ucols, &zero_slots);

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let vsorted: Vec<Vec<f64>> = order.iter().map(|&j| vcols[j].clone()).collect();
    Ok(SvdFactors {
        u: from_columns(m, &ucols),
        s: Tensor::vector(s),
        v: from_columns(n, &vsorted),
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others,
/// by Gram–Schmidt over the standard basis.
fn complete_basis(cols: &mut [Vec<f64>], slots: &[usize]) {
    let m = cols.first().map_or(0, Vec::len);
    let mut candidate = 0;
    for &slot in slots {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, col) in cols.iter().enumerate() {
                    if k == slot || col.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let proj = dot(&e, col);
                    e.iter_mut().zip(col).for_each(|(x, c)| *x -= proj * c);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-6 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Tensor {
    let r = cols.len();
    let mut data = vec![0.0; rows * r];
    for (j, col) in cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            data[i * r + j] = *x;
        }
    }
    Tensor::from_parts(vec![rows, r], data)
}

fn fix_signs(f: &mut SvdFactors) {
    let (m, r) = (f.u.rows(), f.u.cols());
    let n = f.v.rows();
    for j in 0..r {
        let mut best = 0;
        for i in 1..m {
            if f.u.at(&[i, j]).abs() > f.u.at(&[best, j]).abs() {
                best = i;
            }
        }
        if f.u.at(&[best, j]) < 0.0 {
            for i in 0..m {
                let x = f.u.at(&[i, j]);
                f.u.set(&[i, j], -x);
            }
            for i in 0..n {
                let x = f.v.at(&[i, j]);
                f.v.set(&[i, j], -x);
            }
        }
    }
}

/// `‖AᵀA − I‖_F` for a matrix with (ideally) orthonormal columns.
pub fn orthonormality_error(a: &Tensor) -> f64 {
    let gram = a.transpose().and_then(|t| t.matmul(a)).expect("matrix input");
    gram.sub(&Tensor::eye(a.cols())).expect("square gram").frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_input() {
        let f = svd(&Tensor::diag(&[3.0, 2.0])).unwrap();
        assert_eq!(f.s.data(), &[3.0, 2.0]);
        assert_eq!(f.u, Tensor::eye(2));
        assert_eq!(f.v, Tensor::eye(2));
    }

    #[test]
    fn sorts_ascending_diagonal() {
        let f = svd(&Tensor::diag(&[1.0, 5.0, 2.0])).unwrap();
        assert_eq!(f.s.data(), &[5.0, 2.0, 1.0]);
        assert!(f.reconstruct().max_abs_diff(&Tensor::diag(&[1.0, 5.0, 2.0])) < 1e-15);
    }

    #[test]
    fn permutation_matrix() {
        let a = Tensor::matrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let f = svd(&a).unwrap();
        assert!(f.s.max_abs_diff(&Tensor::vector(vec![1.0, 1.0])) < 1e-15);
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn zero_and_rank_deficient() {
        let z = svd(&Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(z.s.data(), &[0.0, 0.0]);
        assert!(orthonormality_error(&z.u) < 1e-12);
        assert!(orthonormality_error(&z.v) < 1e-12);

        let a = Tensor::matrix(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]);
        let f = svd(&a).unwrap();
        assert!(f.s.data()[1].abs() < 1e-12);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn wide_and_tall_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(&[4, 7], 1.0, &mut rng);
        let wide = svd(&a).unwrap();
        let tall = svd(&a.transpose().unwrap()).unwrap();
        assert_eq!(wide.u.shape(), &[4, 4]);
        assert_eq!(wide.v.shape(), &[7, 4]);
        assert!(wide.s.max_abs_diff(&tall.s) < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = svd(&Tensor::randn(&[6, 4], 1.0, &mut rng)).unwrap();
        for j in 0..4 {
            let col = f.u.column(j);
            let best = col.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(best >= 0.0);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let a = Tensor::matrix(&[&[1.0, f64::NAN]]);
        assert!(svd(&a).is_err());
    }
}
