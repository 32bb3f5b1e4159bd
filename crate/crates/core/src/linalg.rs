//! Thin wrappers over nalgebra decompositions with the ordering and failure
//! conventions the rest of the crate relies on.

use nalgebra::{DMatrix, DVector};

use crate::error::{CtsError, Result};
use crate::tensor::{C64, ZERO};

const SVD_MAX_ITER: usize = 0; // 0 = nalgebra's own unbounded iteration policy
const EIG_MAX_ITER: usize = 0;
// nalgebra's own default; a bare f64::EPSILON sends its complex SVD to wrong
// fixed points on some rank-deficient inputs.
const CONV_EPS: f64 = 5.0 * f64::EPSILON;
/// Relative reconstruction errors above this trigger the Jacobi fallback.
const GOOD_SVD: f64 = 1e-11;
/// and above this are reported as failures.
const BAD_SVD: f64 = 1e-6;

/// Thin SVD with singular values sorted in descending order. Ties keep the
/// order the decomposition produced them in (stable sort).
pub struct Svd {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<C64>,
}

pub fn svd(m: &DMatrix<C64>) -> Result<Svd> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Err(CtsError::shape("svd of an empty matrix"));
    }
    // nalgebra works best on tall matrices; factor the adjoint otherwise.
    if r < c {
        let t = svd(&m.adjoint())?;
        return Ok(Svd { u: t.vt.adjoint(), s: t.s, vt: t.u.adjoint() });
    }
    let (err, mut u, mut s, mut vt) = raw_svd(m)?;
    if err > GOOD_SVD {
        let (e2, u2, s2, vt2) = jacobi_svd(m);
        if e2 > BAD_SVD {
            return Err(CtsError::Numeric(format!("SVD reconstruction error {e2:e}")));
        }
        (u, s, vt) = (u2, s2, vt2);
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]);
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |k, j| vt[(order[k], j)]);
    let s = order.iter().map(|&k| s[k]).collect();
    Ok(Svd { u, s, vt })
}

/// nalgebra SVD with its relative reconstruction error.
#[allow(clippy::type_complexity)]
fn raw_svd(m: &DMatrix<C64>) -> Result<(f64, DMatrix<C64>, Vec<f64>, DMatrix<C64>)> {
    let dec = m
        .clone()
        .try_svd(true, true, CONV_EPS, SVD_MAX_ITER)
        .ok_or_else(|| CtsError::Numeric("SVD did not converge".into()))?;
    let u = dec.u.ok_or_else(|| CtsError::Numeric("SVD returned no U".into()))?;
    let vt = dec.v_t.ok_or_else(|| CtsError::Numeric("SVD returned no V^T".into()))?;
    let s: Vec<f64> = dec.singular_values.iter().copied().collect();
    let err = reconstruction_error(m, &u, &s, &vt);
    Ok((err, u, s, vt))
}

fn reconstruction_error(m: &DMatrix<C64>, u: &DMatrix<C64>, s: &[f64], vt: &DMatrix<C64>) -> f64 {
    let mut us = u.clone();
    for (k, &x) in s.iter().enumerate() {
        us.column_mut(k).scale_mut(x);
    }
    (us * vt - m).norm() / m.norm().max(f64::MIN_POSITIVE)
}

/// One-sided Jacobi SVD of a tall matrix: slow but accurate, used when the
/// nalgebra result fails its reconstruction check.
#[allow(clippy::type_complexity)]
fn jacobi_svd(m: &DMatrix<C64>) -> (f64, DMatrix<C64>, Vec<f64>, DMatrix<C64>) {
    let (r, c) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<C64>::identity(c, c);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                // align the phase so the 2×2 problem is real
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let x = mat[(i, p)];
                        let y = mat[(i, q)] * phase.conj();
                        mat[(i, p)] = x * cs - y * sn;
                        mat[(i, q)] = x * sn + y * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..c).map(|k| a.column(k).norm()).collect();
    let top = s.iter().cloned().fold(0.0, f64::max);
    let mut u = DMatrix::<C64>::zeros(r, c);
    let mut filled = Vec::new();
    for k in 0..c {
        if s[k] > 1e-300 && s[k] > f64::EPSILON * 1e-3 * top {
            u.set_column(k, &(a.column(k) / C64::new(s[k], 0.0)));
            filled.push(k);
        }
    }
    // complete U with unit vectors orthogonalized against the filled columns
    let mut e = 0;
    for k in 0..c {
        if filled.contains(&k) {
            continue;
        }
        while e < r {
            let mut x = DVector::<C64>::zeros(r);
            x[e] = C64::new(1.0, 0.0);
            e += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = u.column(f).dotc(&x);
                    x -= u.column(f) * proj;
                }
            }
            let n = x.norm();
            if n > 1e-8 {
                u.set_column(k, &(x / C64::new(n, 0.0)));
                filled.push(k);
                break;
            }
        }
    }
    let vt = v.adjoint();
    (reconstruction_error(m, &u, &s, &vt), u, s, vt)
}

/// Thin QR: `m = q r` with `q` having orthonormal columns.
pub fn qr(m: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let dec = m.clone().qr();
    (dec.q(), dec.r())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let dec = nalgebra::SymmetricEigen::try_new(h, CONV_EPS, EIG_MAX_ITER)
        .ok_or_else(|| CtsError::Numeric("Hermitian eigensolver did not converge".into()))?;
    let vals: Vec<f64> = dec.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |i, k| dec.eigenvectors[(i, order[k])]);
    Ok((order.iter().map(|&k| vals[k]).collect(), vecs))
}

/// Real symmetric variant of [`eigh`].
pub fn eigh_real(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dec = nalgebra::SymmetricEigen::try_new(m, CONV_EPS, EIG_MAX_ITER)
        .ok_or_else(|| CtsError::Numeric("symmetric eigensolver did not converge".into()))?;
    let vals: Vec<f64> = dec.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    let vecs = DMatrix::from_fn(dec.eigenvectors.nrows(), order.len(), |i, k| dec.eigenvectors[(i, order[k])]);
    Ok((order.iter().map(|&k| vals[k]).collect(), vecs))
}

/// Tikhonov-regularized solve of the Hermitian positive semidefinite system
/// `(n + λ I) x = b` with `λ = rel_reg · tr(n) / dim`, done through the
/// eigenbasis of `n`. Returns the solution and whether the regularization
/// actually mattered (some eigenvalue fell below `λ`).
pub fn solve_psd(n: &DMatrix<C64>, b: &DVector<C64>, rel_reg: f64) -> Result<(DVector<C64>, bool)> {
    let dim = n.nrows();
    if dim == 0 || n.ncols() != dim || b.len() != dim {
        return Err(CtsError::shape("solve_psd: shape mismatch"));
    }
    let trace: f64 = (0..dim).map(|i| n[(i, i)].re).sum();
    if !(trace > 0.0) {
        return Err(CtsError::ZeroNorm("Gram matrix".into()));
    }
    let lambda = rel_reg * trace / dim as f64;
    let (vals, vecs) = eigh(n)?;
    let proj = vecs.adjoint() * b;
    let mut flagged = false;
    let mut coeff = DVector::from_element(dim, ZERO);
    for k in 0..dim {
        let ev = vals[k].max(0.0);
        if ev < lambda {
            flagged = true;
        }
        let denom = ev + lambda;
        if denom > 0.0 {
            coeff[k] = proj[k] / denom;
        }
    }
    Ok((vecs * coeff, flagged))
}

/// Smallest generalized eigenpair of `e t = λ n t` for Hermitian `e` and
/// positive semidefinite `n`.
///
/// `n` is diagonalized, directions with eigenvalue below `rel_cut · max` are
/// projected out, and the problem is reduced to a standard Hermitian one on
/// the remaining range. Returns `(λ, t, flagged)` where `flagged` reports that
/// a null space was removed.
pub fn generalized_min_eig(e: &DMatrix<C64>, n: &DMatrix<C64>, rel_cut: f64) -> Result<(f64, DVector<C64>, bool)> {
    let dim = n.nrows();
    if dim == 0 || e.shape() != n.shape() {
        return Err(CtsError::shape("generalized_min_eig: shape mismatch"));
    }
    let (nv, nvec) = eigh(n)?;
    let max = nv.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(CtsError::ZeroNorm("Gram matrix".into()));
    }
    let keep: Vec<usize> = (0..dim).filter(|&k| nv[k] > rel_cut * max).collect();
    let flagged = keep.len() < dim;
    // W = V_keep Λ^{-1/2}
    let w = DMatrix::from_fn(dim, keep.len(), |i, c| nvec[(i, keep[c])] / nv[keep[c]].sqrt());
    let reduced = w.adjoint() * e * &w;
    let (vals, vecs) = eigh(&reduced)?;
    let t = &w * vecs.column(0);
    Ok((vals[0], t, flagged))
}
