//! Overlap-maximizing fits of MPS and grids to dense target states.
//!
//! Every local update leaves one tensor out, contracts the rest of the
//! network exactly into a linear form `c` and a Gram matrix `N`, and sets the
//! tensor to `N⁻¹ c̄`. For MPS the isometric gauge makes `N` the identity.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CtsError, Result};
use crate::grid::{bra_label, gphys, hedge, vedge, Grid2d, EXACT_CAP};
use crate::linalg::solve_psd;
use crate::mps::{capped_bonds, truncate_svd, variational_sweeps, Mps};
use crate::tensor::{contract_chain, contract_shared, Label, Leg, Tensor, C64, ONE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitInit {
    Random { seed: u64 },
    /// SVD truncation of the target (MPS only).
    SvdFromTarget,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub max_sweeps: usize,
    /// Stop once a sweep changes the fidelity by less than this.
    pub tol: f64,
    pub init: FitInit,
    /// Relative Tikhonov shift for Gram solves.
    pub reg: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { max_sweeps: 100, tol: 1e-10, init: FitInit::Random { seed: 0 }, reg: 1e-12 }
    }
}

impl FitConfig {
    pub fn seeded(seed: u64) -> Self {
        FitConfig { init: FitInit::Random { seed }, ..FitConfig::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.reg >= 0.0) {
            return Err(CtsError::invalid("fit needs tol > 0 and reg >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Fit<T> {
    pub network: T,
    pub fidelity: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Fidelity after each sweep.
    pub history: Vec<f64>,
}

fn check_target(target: &[C64], phys_dims: &[usize]) -> Result<f64> {
    let total: usize = phys_dims.iter().product();
    if total != target.len() {
        return Err(CtsError::shape(format!("target has {} amplitudes, network {total}", target.len())));
    }
    let norm2: f64 = target.iter().map(|z| z.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(CtsError::ZeroNorm("fit target".into()));
    }
    Ok(norm2)
}

/// Bond-`chi` MPS maximizing the normalized overlap with `target`.
pub fn fit_mps(target: &[C64], phys_dims: &[usize], chi: usize, cfg: &FitConfig) -> Result<Fit<Mps>> {
    cfg.validate()?;
    if chi < 1 {
        return Err(CtsError::invalid("chi must be at least 1"));
    }
    check_target(target, phys_dims)?;
    let init = match cfg.init {
        FitInit::Random { seed } => Mps::random(phys_dims, chi, &mut ChaCha8Rng::seed_from_u64(seed))?,
        FitInit::SvdFromTarget => Mps::from_dense(target, phys_dims, Some(chi))?.0,
    };
    fit_mps_from(target, init, cfg)
}

/// [`fit_mps`] from a given starting point.
pub fn fit_mps_from(target: &[C64], init: Mps, cfg: &FitConfig) -> Result<Fit<Mps>> {
    cfg.validate()?;
    let norm2 = check_target(target, &init.phys_dims())?;
    let (exact, _) = Mps::from_dense(target, &init.phys_dims(), None)?;
    let fit = variational_sweeps(&exact, init, norm2, cfg.max_sweeps, cfg.tol)?;
    Ok(Fit { network: fit.mps, fidelity: fit.fidelity, sweeps: fit.sweeps, converged: fit.converged, history: fit.history })
}

/// Grid family of the fits: `rows × cols` tensors, one physical row, bond
/// dimension `h_bonds[i]` along row `i` and `v_bonds[i]` between rows `i`
/// and `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    pub phys_row: usize,
    pub phys_dim: usize,
    pub h_bonds: Vec<usize>,
    pub v_bonds: Vec<usize>,
}

impl GridShape {
    /// Auxiliary rows on top of a physical bottom row, all horizontal bonds
    /// `d_h`, all vertical bonds `d_v`.
    pub fn uniform(rows: usize, cols: usize, d_h: usize, d_v: usize) -> Self {
        GridShape {
            rows,
            cols,
            phys_row: rows.saturating_sub(1),
            phys_dim: 2,
            h_bonds: vec![d_h; rows],
            v_bonds: vec![d_v; rows.saturating_sub(1)],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.phys_row >= self.rows || self.phys_dim == 0 {
            return Err(CtsError::invalid("grid shape needs rows, cols >= 1 and a physical row inside"));
        }
        if self.h_bonds.len() != self.rows || self.v_bonds.len() + 1 != self.rows {
            return Err(CtsError::invalid("grid shape bond lists have the wrong length"));
        }
        if self.h_bonds.iter().chain(&self.v_bonds).any(|&d| d == 0) {
            return Err(CtsError::invalid("bond dimensions must be positive"));
        }
        Ok(())
    }

    fn dims(&self, i: usize, j: usize) -> Vec<usize> {
        let mut d = vec![
            if i == 0 { 1 } else { self.v_bonds[i - 1] },
            if i + 1 == self.rows { 1 } else { self.v_bonds[i] },
            if j == 0 { 1 } else { self.h_bonds[i] },
            if j + 1 == self.cols { 1 } else { self.h_bonds[i] },
        ];
        if i == self.phys_row {
            d.push(self.phys_dim);
        }
        d
    }

    /// Grid with unit-norm complex Gaussian tensors.
    pub fn random_grid(&self, seed: u64) -> Result<Grid2d> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let legs = self.dims(i, j).iter().enumerate().map(|(k, &d)| Leg::new(Label::new(0, k as u32, 0), d)).collect();
                let t = Tensor::from_fn(legs, |_| crate::mps::random_c64(&mut rng))?;
                let n = t.norm();
                tensors.push(t.scale(C64::new(1.0 / n, 0.0)));
            }
        }
        Grid2d::new(self.rows, self.cols, tensors)
    }
}

/// Grid of the given shape maximizing the normalized overlap with `target`.
pub fn fit_grid(target: &[C64], shape: &GridShape, cfg: &FitConfig) -> Result<Fit<Grid2d>> {
    cfg.validate()?;
    let seed = match cfg.init {
        FitInit::Random { seed } => seed,
        FitInit::SvdFromTarget => return Err(CtsError::invalid("grid fits start from random tensors")),
    };
    fit_grid_from(target, shape.random_grid(seed)?, cfg)
}

/// Boundary-free working copy of one tensor.
fn squeeze_boundary(t: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let mut t = t.clone();
    for l in t.labels() {
        let (a, b) = l.coords();
        let (a, b) = (a as usize, b as usize);
        let boundary = (l == vedge(a, b) && (a == 0 || a == rows)) || (l == hedge(a, b) && (b == 0 || b == cols));
        if boundary {
            t = t.squeeze(l)?;
        }
    }
    Ok(t)
}

/// Bra copy for Gram contractions: conjugated, bond legs renamed, physical
/// legs kept so that they close against the ket.
fn bra(t: &Tensor) -> Result<Tensor> {
    t.conj().map_labels(|l| if l.tag() == gphys(0, 0).tag() { l } else { bra_label(l) })
}

struct GridFit {
    rows: usize,
    cols: usize,
    work: Vec<Tensor>,
    /// Conjugated target with one leg per physical site.
    target: Tensor,
    reg: f64,
}

impl GridFit {
    fn t(&self, i: usize, j: usize) -> &Tensor {
        &self.work[i * self.cols + j]
    }

    fn chain(ts: &[&Tensor]) -> Result<Tensor> {
        Ok(contract_chain(ts, EXACT_CAP)?.0)
    }

    /// Target overlap with columns `0..j`, and with columns `j..cols`.
    fn overlap_left(&self, prev: &Tensor, j: usize) -> Result<Tensor> {
        let mut ts = vec![prev];
        ts.extend((0..self.rows).map(|i| self.t(i, j)));
        GridFit::chain(&ts)
    }

    fn overlap_right(&self, next: &Tensor, j: usize) -> Result<Tensor> {
        let mut ts: Vec<&Tensor> = (0..self.rows).rev().map(|i| self.t(i, j)).collect();
        ts.push(next);
        GridFit::chain(&ts)
    }

    fn bras(&self, j: usize) -> Result<Vec<Tensor>> {
        (0..self.rows).map(|i| bra(self.t(i, j))).collect()
    }

    fn norm_left(&self, prev: &Tensor, j: usize) -> Result<Tensor> {
        let bras = self.bras(j)?;
        let mut ts = vec![prev];
        for i in 0..self.rows {
            ts.push(self.t(i, j));
            ts.push(&bras[i]);
        }
        GridFit::chain(&ts)
    }

    fn norm_right(&self, next: &Tensor, j: usize) -> Result<Tensor> {
        let bras = self.bras(j)?;
        let mut ts = vec![next];
        for i in (0..self.rows).rev() {
            ts.push(self.t(i, j));
            ts.push(&bras[i]);
        }
        GridFit::chain(&ts)
    }

    /// Optimal tensor `(i, j)` given the column environments; returns the
    /// fidelity reached.
    fn update(&mut self, i: usize, j: usize, x: &Tensor, nl: &Tensor, nr: &Tensor, norm2: f64) -> Result<f64> {
        let labels = self.t(i, j).labels();
        let others: Vec<usize> = (0..self.rows).filter(|&k| k != i).collect();

        let mut ts = vec![x];
        ts.extend(others.iter().map(|&k| self.t(k, j)));
        let c = GridFit::chain(&ts)?.permute(&labels)?;

        let bras: Vec<Tensor> = others.iter().map(|&k| bra(self.t(k, j))).collect::<Result<_>>()?;
        let mut ts = vec![nl];
        for (n, &k) in others.iter().enumerate() {
            ts.push(self.t(k, j));
            ts.push(&bras[n]);
        }
        ts.push(nr);
        let mut gram = GridFit::chain(&ts)?;
        let phys = gphys(i, j);
        let rows: Vec<Label> = labels.iter().map(|&l| bra_label(l)).collect();
        if labels.contains(&phys) {
            let d = self.t(i, j).dim_of(phys)?;
            let delta = Tensor::from_fn(vec![Leg::new(bra_label(phys), d), Leg::new(phys, d)], |x| if x[0] == x[1] { ONE } else { C64::new(0.0, 0.0) })?;
            gram = crate::tensor::outer(&gram, &delta)?;
        }
        let n = gram.to_matrix(&rows, &labels)?;
        let b = DVector::from_iterator(c.len(), c.data().iter().map(|z| z.conj()));
        let (sol, _) = solve_psd(&n, &b, self.reg)?;
        let overlap: C64 = c.data().iter().zip(sol.iter()).map(|(a, s)| a * s).sum();
        let norm = (sol.adjoint() * &n * &sol)[(0, 0)].re;
        let scale = sol.norm();
        if !(scale > 0.0) || !(norm > 0.0) {
            return Err(CtsError::ZeroNorm("grid fit update".into()));
        }
        let t = Tensor::new(self.t(i, j).legs().to_vec(), sol.iter().map(|z| z / scale).collect())?;
        self.work[i * self.cols + j] = t;
        Ok(overlap.norm_sqr() / (norm * norm2))
    }
}

/// [`fit_grid`] from a given starting grid.
///
/// Sweeps run over columns left to right and back, updating the tensors of
/// each column top to bottom (bottom to top on the way back), with cached
/// left and right column environments.
pub fn fit_grid_from(target: &[C64], init: Grid2d, cfg: &FitConfig) -> Result<Fit<Grid2d>> {
    cfg.validate()?;
    let norm2 = check_target(target, &init.phys_dims())?;
    let (rows, cols) = (init.rows(), init.cols());
    let work = init.tensors().iter().map(|t| squeeze_boundary(t, rows, cols)).collect::<Result<Vec<_>>>()?;
    let legs = init.physical_sites().iter().map(|&(i, j)| Leg::new(gphys(i, j), init.tensor(i, j).dim_of(gphys(i, j)).expect("physical leg"))).collect();
    let target_t = Tensor::new(legs, target.iter().map(|z| z.conj()).collect())?;
    let mut f = GridFit { rows, cols, work, target: target_t, reg: cfg.reg };

    let unit = Tensor::scalar(ONE);
    let mut lb: Vec<Tensor> = vec![unit.clone(); cols + 1];
    let mut rb: Vec<Tensor> = vec![unit.clone(); cols + 1];
    let mut nl: Vec<Tensor> = vec![unit.clone(); cols + 1];
    let mut nr: Vec<Tensor> = vec![unit.clone(); cols + 1];
    lb[0] = f.target.clone();
    for j in (1..cols).rev() {
        rb[j] = f.overlap_right(&rb[j + 1], j)?;
        nr[j] = f.norm_right(&nr[j + 1], j)?;
    }

    let mut fid = 0.0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        for j in 0..cols {
            let x = contract_shared(&lb[j], &rb[j + 1])?;
            for i in 0..rows {
                fid = f.update(i, j, &x, &nl[j], &nr[j + 1], norm2)?;
            }
            if j + 1 < cols {
                lb[j + 1] = f.overlap_left(&lb[j], j)?;
                nl[j + 1] = f.norm_left(&nl[j], j)?;
            }
        }
        for j in (0..cols).rev() {
            let x = contract_shared(&lb[j], &rb[j + 1])?;
            for i in (0..rows).rev() {
                fid = f.update(i, j, &x, &nl[j], &nr[j + 1], norm2)?;
            }
            if j > 0 {
                rb[j] = f.overlap_right(&rb[j + 1], j)?;
                nr[j] = f.norm_right(&nr[j + 1], j)?;
            }
        }
        let prev = history.last().copied();
        history.push(fid.min(1.0));
        if let Some(p) = prev {
            if (fid - p).abs() < cfg.tol {
                converged = true;
                break;
            }
        }
    }

    let mut grid = init;
    for i in 0..rows {
        for j in 0..cols {
            let legs = grid.tensor(i, j).legs().to_vec();
            let t = Tensor::new(legs, f.t(i, j).data().to_vec())?;
            grid.set_tensor(i, j, t)?;
        }
    }
    Ok(Fit { network: grid, fidelity: fid.min(1.0), sweeps, converged, history })
}

/// Real parameters of a network: two per complex entry, with every bond
/// counted at most at the rank its position allows.
pub trait ParameterCount {
    fn parameter_count(&self) -> usize;
}

impl ParameterCount for Mps {
    fn parameter_count(&self) -> usize {
        let dims = self.phys_dims();
        let cap = capped_bonds(&dims, usize::MAX);
        let bonds = self.bond_dims();
        (0..self.len()).map(|i| 2 * bonds[i].min(cap[i]) * dims[i] * bonds[i + 1].min(cap[i + 1])).sum()
    }
}

/// Grid bonds are counted at their full dimension.
impl ParameterCount for Grid2d {
    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| 2 * t.len()).sum()
    }
}

/// Parameters of an MPS with bond `chi` over `phys_dims`.
pub fn mps_parameter_count(phys_dims: &[usize], chi: usize) -> usize {
    let b = capped_bonds(phys_dims, chi);
    (0..phys_dims.len()).map(|i| 2 * b[i] * phys_dims[i] * b[i + 1]).sum()
}

/// Smallest bond dimension whose MPS has at least `budget` parameters.
pub fn matched_chi(phys_dims: &[usize], budget: usize) -> usize {
    let max = capped_bonds(phys_dims, usize::MAX).into_iter().max().unwrap_or(1);
    (1..=max).find(|&chi| mps_parameter_count(phys_dims, chi) >= budget).unwrap_or(max)
}

/// Fidelity of a dense target with an MPS truncated by SVD, the usual
/// starting point for MPS fits.
pub fn svd_fidelity(target: &[C64], phys_dims: &[usize], chi: usize) -> Result<f64> {
    let (exact, _) = Mps::from_dense(target, phys_dims, None)?;
    let (t, _) = truncate_svd(&exact, chi)?;
    crate::mps::fidelity(&t, &exact)
}
