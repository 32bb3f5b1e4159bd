//! Compression of MPO products into a single row of fixed bond dimension.
//!
//! Operators are vectorized into MPS with fused `(out, in)` physical legs and
//! handed to the single-site variational sweep of [`crate::mps`].

use std::cell::Cell;

use crate::error::{CtsError, Result};
use crate::mps::{canonicalize, inner_product, truncate_variational, Mpo};

/// Largest bond dimension of the explicit product handed to the optimizer.
pub const PRODUCT_BOND_CAP: usize = 4096;

/// Default per-step refusal threshold.
pub const DEFAULT_MIN_FIDELITY: f64 = 0.999;

thread_local! {
    static COMPRESSIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`compress_product`] calls made on this thread.
pub fn compression_counter() -> u64 {
    COMPRESSIONS.with(Cell::get)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressConfig {
    pub chi: usize,
    pub max_sweeps: usize,
    pub tol: f64,
    /// Fail with [`CtsError::FidelityTooLow`] below this value.
    pub min_fidelity: Option<f64>,
}

impl CompressConfig {
    pub fn new(chi: usize) -> Self {
        CompressConfig { chi, max_sweeps: 20, tol: 1e-12, min_fidelity: Some(DEFAULT_MIN_FIDELITY) }
    }
}

#[derive(Clone, Debug)]
pub struct Compressed {
    pub mpo: Mpo,
    pub fidelity: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// `|⟨⟨a|b⟩⟩|² / (⟨⟨a|a⟩⟩⟨⟨b|b⟩⟩)` on vectorized operators.
pub fn mpo_fidelity(a: &Mpo, b: &Mpo) -> Result<f64> {
    if a.len() != b.len() || a.out_dims() != b.out_dims() || a.in_dims() != b.in_dims() {
        return Err(CtsError::shape("mpo_fidelity: operator shapes differ"));
    }
    let (va, vb) = (a.as_mps()?, b.as_mps()?);
    let (na, nb) = (va.norm_sqr()?, vb.norm_sqr()?);
    if na == 0.0 || nb == 0.0 {
        return Err(CtsError::ZeroNorm("operator in mpo_fidelity".into()));
    }
    Ok((inner_product(&va, &vb)?.norm_sqr() / (na * nb)).min(1.0))
}

/// Replace `rows` (applied first to last) by one MPO of bond ≤ `chi`.
///
/// The returned operator is centered on site 0 and carries the scale that
/// best matches the product.
pub fn compress_product(rows: &[Mpo], cfg: &CompressConfig) -> Result<Compressed> {
    if cfg.chi < 1 {
        return Err(CtsError::invalid("chi must be at least 1"));
    }
    let (first, rest) = rows.split_first().ok_or_else(|| CtsError::invalid("empty MPO product"))?;
    let mut product = first.clone();
    for next in rest {
        let bond = product.max_bond().saturating_mul(next.max_bond());
        if bond > PRODUCT_BOND_CAP {
            return Err(CtsError::CapExceeded { what: "MPO product bond".into(), size: bond as u128, cap: PRODUCT_BOND_CAP as u128 });
        }
        product = product.then(next)?;
    }
    COMPRESSIONS.with(|c| c.set(c.get() + 1));
    let (out_dims, in_dims) = (product.out_dims(), product.in_dims());
    let fit = truncate_variational(&product.as_mps()?, cfg.chi, cfg.max_sweeps, cfg.tol)?;
    let mps = canonicalize(&fit.mps, 0)?;
    let result = Compressed { mpo: Mpo::from_mps(&mps, &out_dims, &in_dims)?, fidelity: fit.fidelity, sweeps: fit.sweeps, converged: fit.converged };
    check(result.fidelity, cfg)?;
    Ok(result)
}

fn check(fidelity: f64, cfg: &CompressConfig) -> Result<()> {
    match cfg.min_fidelity {
        Some(required) if fidelity < required => Err(CtsError::FidelityTooLow { achieved: fidelity, required }),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub struct Doubling {
    /// Operator covering `2^k` applications of the input row.
    pub mpo: Mpo,
    /// Fidelity of each of the `k` compressions.
    pub fidelities: Vec<f64>,
}

/// Square the row `k` times, compressing after each squaring.
pub fn compress_doubling(row: &Mpo, k: usize, cfg: &CompressConfig) -> Result<Doubling> {
    let mut level = row.clone();
    let mut fidelities = Vec::with_capacity(k);
    for _ in 0..k {
        let c = compress_product(&[level.clone(), level], cfg)?;
        fidelities.push(c.fidelity);
        level = c.mpo;
    }
    Ok(Doubling { mpo: level, fidelities })
}
