//! Rectangular tensor grids and their contraction.
//!
//! Tensor `(i, j)` carries the legs `up = vedge(i, j)`, `down = vedge(i+1, j)`,
//! `left = hedge(i, j)`, `right = hedge(i, j+1)` and optionally
//! `phys = gphys(i, j)`. Legs on the outer boundary have dimension one.
//!
//! Approximate contraction always runs left to right on an oriented copy of
//! the grid: each column is read as an MPO (input on the left, output on the
//! right) and absorbed into a boundary MPS that is truncated after each step.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CtsError, Result};
use crate::mps::{self, apply_mpo, dot, Mpo, Mps};
use crate::tensor::{contract_chain, contract_shared, flop_counter, Label, Leg, Tensor, C64, ONE};

const TAG_VEDGE: u8 = 10;
const TAG_HEDGE: u8 = 11;
const TAG_GPHYS: u8 = 12;
const TAG_BRA_VEDGE: u8 = 13;
const TAG_BRA_HEDGE: u8 = 14;
const TAG_BRA_GPHYS: u8 = 15;

/// Default cap on intermediate sizes in exact contraction.
pub const EXACT_CAP: usize = 1 << 24;

pub fn vedge(i: usize, j: usize) -> Label {
    Label::new(TAG_VEDGE, i as u32, j as u32)
}

pub fn hedge(i: usize, j: usize) -> Label {
    Label::new(TAG_HEDGE, i as u32, j as u32)
}

pub fn gphys(i: usize, j: usize) -> Label {
    Label::new(TAG_GPHYS, i as u32, j as u32)
}

/// Bra-layer copy of a grid label, used for double-layer networks.
pub fn bra_label(l: Label) -> Label {
    match l.tag() {
        TAG_VEDGE => l.with_tag(TAG_BRA_VEDGE),
        TAG_HEDGE => l.with_tag(TAG_BRA_HEDGE),
        TAG_GPHYS => l.with_tag(TAG_BRA_GPHYS),
        _ => l,
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl std::str::FromStr for Direction {
    type Err = CtsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left_to_right" | "ltr" => Ok(Direction::LeftToRight),
            "right_to_left" | "rtl" => Ok(Direction::RightToLeft),
            "top_to_bottom" | "ttb" => Ok(Direction::TopToBottom),
            "bottom_to_top" | "btt" => Ok(Direction::BottomToTop),
            _ => Err(CtsError::invalid(format!("unknown direction {s:?}"))),
        }
    }
}

/// How boundary MPSs are truncated after each column.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Truncation {
    Svd,
    Variational { max_sweeps: usize, tol: f64 },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Variational { max_sweeps: 4, tol: 1e-12 }
    }
}

/// Outcome of an approximate contraction.
#[derive(Clone, Debug, Default)]
pub struct ContractionReport {
    /// Uncorrected boundary-MPS value.
    pub value: C64,
    /// Per-truncation-step error estimates (empty without correction).
    pub errors: Vec<C64>,
    /// `value + Σ errors`.
    pub corrected: C64,
    /// Value of the reverse pass, when one was run.
    pub reverse_value: Option<C64>,
    /// Relative SVD discarded weight of each truncation step (0 if lossless).
    pub discarded: Vec<f64>,
    /// Norm of the untruncated boundary MPS at each step.
    pub step_norms: Vec<f64>,
    pub flops: u64,
    pub max_bond: usize,
}

/// Rectangular grid of tensors, some of which carry a physical leg.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2d {
    rows: usize,
    cols: usize,
    tensors: Vec<Tensor>,
    physical_sites: Vec<(usize, usize)>,
}

fn std_legs(i: usize, j: usize, d: &[usize]) -> Vec<Leg> {
    let mut legs = vec![
        Leg::new(vedge(i, j), d[0]),
        Leg::new(vedge(i + 1, j), d[1]),
        Leg::new(hedge(i, j), d[2]),
        Leg::new(hedge(i, j + 1), d[3]),
    ];
    if d.len() == 5 {
        legs.push(Leg::new(gphys(i, j), d[4]));
    }
    legs
}

impl Grid2d {
    /// Build from row-major tensors whose legs are read positionally as
    /// (up, down, left, right, [phys]). Physical sites are ordered row-major.
    pub fn new(rows: usize, cols: usize, tensors: Vec<Tensor>) -> Result<Self> {
        Grid2d::with_order(rows, cols, tensors, None)
    }

    /// As [`Grid2d::new`] with an explicit physical-site order.
    pub fn with_order(rows: usize, cols: usize, tensors: Vec<Tensor>, order: Option<Vec<(usize, usize)>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CtsError::shape("grid needs at least one row and one column"));
        }
        if tensors.len() != rows * cols {
            return Err(CtsError::shape(format!("expected {} tensors, got {}", rows * cols, tensors.len())));
        }
        let mut out = Vec::with_capacity(tensors.len());
        let mut phys_sites = Vec::new();
        for (k, t) in tensors.into_iter().enumerate() {
            let (i, j) = (k / cols, k % cols);
            if t.rank() != 4 && t.rank() != 5 {
                return Err(CtsError::shape(format!("grid tensor ({i},{j}) has rank {}", t.rank())));
            }
            if t.rank() == 5 {
                phys_sites.push((i, j));
            }
            let d = t.dims();
            out.push(t.reshape(std_legs(i, j, &d))?);
        }
        let physical_sites = match order {
            None => phys_sites,
            Some(o) => {
                let mut a = o.clone();
                a.sort();
                let mut b = phys_sites.clone();
                b.sort();
                if a != b {
                    return Err(CtsError::shape("physical order does not list exactly the physical tensors"));
                }
                o
            }
        };
        let g = Grid2d { rows, cols, tensors: out, physical_sites };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self.tensor(i, j).dims();
                if i == 0 && d[0] != 1 || i + 1 == self.rows && d[1] != 1 {
                    return Err(CtsError::shape(format!("vertical boundary leg of ({i},{j}) must have dim 1")));
                }
                if j == 0 && d[2] != 1 || j + 1 == self.cols && d[3] != 1 {
                    return Err(CtsError::shape(format!("horizontal boundary leg of ({i},{j}) must have dim 1")));
                }
                if i + 1 < self.rows && d[1] != self.tensor(i + 1, j).dims()[0] {
                    return Err(CtsError::DimensionMismatch {
                        left: vedge(i + 1, j),
                        right: vedge(i + 1, j),
                        left_dim: d[1],
                        right_dim: self.tensor(i + 1, j).dims()[0],
                    });
                }
                if j + 1 < self.cols && d[3] != self.tensor(i, j + 1).dims()[2] {
                    return Err(CtsError::DimensionMismatch {
                        left: hedge(i, j + 1),
                        right: hedge(i, j + 1),
                        left_dim: d[3],
                        right_dim: self.tensor(i, j + 1).dims()[2],
                    });
                }
            }
        }
        Ok(())
    }

    /// Random Gaussian grid with uniform bond dimension `d`. With `positive`
    /// the entries are uniform in `[0, 1)` and real.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, d: usize, phys: Option<usize>, positive: bool, rng: &mut R) -> Result<Self> {
        let mut tensors = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut dims = vec![
                    if i == 0 { 1 } else { d },
                    if i + 1 == rows { 1 } else { d },
                    if j == 0 { 1 } else { d },
                    if j + 1 == cols { 1 } else { d },
                ];
                if let Some(p) = phys {
                    dims.push(p);
                }
                let legs = std_legs(i, j, &dims);
                tensors.push(Tensor::from_fn(legs, |_| {
                    if positive {
                        C64::new(rng.random::<f64>(), 0.0)
                    } else {
                        mps::random_c64(rng)
                    }
                })?);
            }
        }
        Grid2d::new(rows, cols, tensors)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tensor(&self, i: usize, j: usize) -> &Tensor {
        &self.tensors[i * self.cols + j]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Replace tensor `(i, j)`; legs are read positionally and must keep the
    /// existing dimensions.
    pub fn set_tensor(&mut self, i: usize, j: usize, t: Tensor) -> Result<()> {
        let old = self.tensor(i, j);
        if t.dims() != old.dims() {
            return Err(CtsError::shape(format!("tensor ({i},{j}) dims {:?} != {:?}", t.dims(), old.dims())));
        }
        let d = t.dims();
        self.tensors[i * self.cols + j] = t.reshape(std_legs(i, j, &d))?;
        Ok(())
    }

    pub fn physical_sites(&self) -> &[(usize, usize)] {
        &self.physical_sites
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.physical_sites.iter().map(|&(i, j)| self.tensor(i, j).dims()[4]).collect()
    }

    pub fn is_scalar(&self) -> bool {
        self.physical_sites.is_empty()
    }

    pub fn max_bond(&self) -> usize {
        self.tensors.iter().flat_map(|t| t.dims().into_iter().take(4)).max().unwrap_or(1)
    }

    /// Rebuild with tensor `(i, j)` moved to `pos(i, j)` and its four bond
    /// legs reordered by `perm` (new position k takes old leg `perm[k]`).
    fn remap(&self, rows: usize, cols: usize, pos: impl Fn(usize, usize) -> (usize, usize), perm: [usize; 4]) -> Result<Grid2d> {
        let mut slots: Vec<Option<Tensor>> = vec![None; rows * cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let t = self.tensor(i, j);
                let mut p: Vec<usize> = perm.to_vec();
                if t.rank() == 5 {
                    p.push(4);
                }
                let t = t.permute_positions(&p);
                let (ni, nj) = pos(i, j);
                let d = t.dims();
                slots[ni * cols + nj] = Some(t.reshape(std_legs(ni, nj, &d))?);
            }
        }
        let order = self.physical_sites.iter().map(|&(i, j)| pos(i, j)).collect();
        let tensors = slots.into_iter().map(|t| t.expect("bijective remap")).collect();
        Grid2d::with_order(rows, cols, tensors, Some(order))
    }

    /// Swap rows and columns.
    pub fn transposed(&self) -> Result<Grid2d> {
        self.remap(self.cols, self.rows, |i, j| (j, i), [2, 3, 0, 1])
    }

    /// Mirror left-right.
    pub fn mirrored_lr(&self) -> Result<Grid2d> {
        let c = self.cols;
        self.remap(self.rows, c, |i, j| (i, c - 1 - j), [0, 1, 3, 2])
    }

    /// Mirror top-bottom.
    pub fn mirrored_ud(&self) -> Result<Grid2d> {
        let r = self.rows;
        self.remap(r, self.cols, |i, j| (r - 1 - i, j), [1, 0, 2, 3])
    }

    /// Copy oriented so that contracting it left to right is contracting
    /// `self` in direction `dir`.
    pub fn oriented(&self, dir: Direction) -> Result<Grid2d> {
        match dir {
            Direction::LeftToRight => Ok(self.clone()),
            Direction::RightToLeft => self.mirrored_lr(),
            Direction::TopToBottom => self.transposed(),
            Direction::BottomToTop => self.mirrored_ud()?.transposed(),
        }
    }

    /// Contract every physical leg with the given vector (no conjugation).
    pub fn close_physical(&self, vectors: &[Vec<C64>]) -> Result<Grid2d> {
        if vectors.len() != self.physical_sites.len() {
            return Err(CtsError::shape(format!(
                "{} vectors for {} physical sites",
                vectors.len(),
                self.physical_sites.len()
            )));
        }
        let mut g = self.clone();
        for (&(i, j), v) in self.physical_sites.iter().zip(vectors) {
            let t = self.tensor(i, j);
            if v.len() != t.dims()[4] {
                return Err(CtsError::shape(format!("vector for ({i},{j}) has length {}", v.len())));
            }
            let closed = contract_shared(t, &Tensor::vector(gphys(i, j), v.clone())?)?;
            g.tensors[i * self.cols + j] = closed;
        }
        g.physical_sites.clear();
        Ok(g)
    }

    /// Column `j` as an MPO acting left to right.
    fn column_mpo(&self, j: usize) -> Result<Mpo> {
        let sites = (0..self.rows)
            .map(|i| {
                let t = self.tensor(i, j);
                if t.rank() != 4 {
                    return Err(CtsError::invalid("approximate contraction needs a scalar grid; close physical legs first"));
                }
                let t = t.permute(&[vedge(i, j), hedge(i, j + 1), hedge(i, j), vedge(i + 1, j)])?;
                let d = t.dims();
                t.reshape(vec![
                    Leg::new(mps::mpo_bond(i), d[0]),
                    Leg::new(mps::phys(i), d[1]),
                    Leg::new(mps::phys_in(i), d[2]),
                    Leg::new(mps::mpo_bond(i + 1), d[3]),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Mpo::new(sites)
    }

    /// Exact contraction by column-major absorption. Returns the amplitudes
    /// over the physical legs in `physical_sites` order (length 1 for a
    /// scalar grid).
    pub fn contract_exact(&self, cap: usize) -> Result<Vec<C64>> {
        // sweep along the long side so the open frontier spans the short one
        let mut order: Vec<&Tensor> = Vec::with_capacity(self.tensors.len());
        if self.rows > self.cols {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    order.push(self.tensor(i, j));
                }
            }
        } else {
            for j in 0..self.cols {
                for i in 0..self.rows {
                    order.push(self.tensor(i, j));
                }
            }
        }
        let (t, _) = contract_chain(&order, cap)?;
        let phys: Vec<Label> = self.physical_sites.iter().map(|&(i, j)| gphys(i, j)).collect();
        let mut labels = phys.clone();
        labels.extend(t.labels().into_iter().filter(|l| !phys.contains(l)));
        Ok(t.permute(&labels)?.into_data())
    }

    /// Dense state over the physical legs.
    pub fn grid_to_state(&self, cap: usize) -> Result<Vec<C64>> {
        let total: u128 = self.phys_dims().iter().map(|&d| d as u128).product();
        if total > cap as u128 {
            return Err(CtsError::CapExceeded { what: "grid state vector".into(), size: total, cap: cap as u128 });
        }
        self.contract_exact(EXACT_CAP.max(cap))
    }

    /// Boundary-MPS contraction of a scalar grid.
    pub fn contract_approx(&self, dir: Direction, chi_cut: usize, trunc: Truncation) -> Result<ContractionReport> {
        check_chi(chi_cut)?;
        let g = self.oriented(dir)?;
        let start = flop_counter();
        let pass = g.forward_pass(chi_cut, trunc)?;
        Ok(ContractionReport {
            value: pass.value,
            errors: Vec::new(),
            corrected: pass.value,
            reverse_value: None,
            discarded: pass.discarded,
            step_norms: pass.step_norms,
            flops: flop_counter() - start,
            max_bond: pass.max_bond,
        })
    }

    /// Boundary-MPS contraction plus the additive error correction built from
    /// a cached reverse pass at the same cutoff.
    pub fn contract_with_correction(&self, dir: Direction, chi_cut: usize, trunc: Truncation) -> Result<ContractionReport> {
        check_chi(chi_cut)?;
        let g = self.oriented(dir)?;
        let start = flop_counter();
        let fwd = g.forward_pass(chi_cut, trunc)?;
        let rev = g.mirrored_lr()?.forward_pass(chi_cut, trunc)?;
        let c = g.cols;
        let mut errors = Vec::with_capacity(c.saturating_sub(1));
        // Step k truncates the boundary after column k; the reverse pass
        // after absorbing columns C-1..k+1 sits at index C-2-k.
        for k in 0..c.saturating_sub(1) {
            let rho = &rev.boundaries[c - 2 - k];
            if fwd.truncated[k] {
                let before = dot(&fwd.untruncated[k], rho)?;
                let after = dot(&fwd.boundaries[k], rho)?;
                errors.push(before - after);
            } else {
                errors.push(C64::new(0.0, 0.0));
            }
        }
        let corrected = fwd.value + errors.iter().sum::<C64>();
        Ok(ContractionReport {
            value: fwd.value,
            errors,
            corrected,
            reverse_value: Some(rev.value),
            discarded: fwd.discarded,
            step_norms: fwd.step_norms,
            flops: flop_counter() - start,
            max_bond: fwd.max_bond.max(rev.max_bond),
        })
    }

    fn forward_pass(&self, chi: usize, trunc: Truncation) -> Result<Pass> {
        let mut phi = Mps::from_product(&vec![vec![ONE]; self.rows])?;
        let mut pass = Pass::default();
        for k in 0..self.cols {
            let m = self.column_mpo(k)?;
            let psi = apply_mpo(&m, &phi)?;
            pass.max_bond = pass.max_bond.max(psi.max_bond());
            if k + 1 == self.cols {
                let d = psi.to_dense(1)?;
                pass.value = d[0];
                break;
            }
            let norm = psi.norm_sqr()?.sqrt();
            pass.step_norms.push(norm);
            if psi.max_bond() > chi && norm > 0.0 {
                let (svd, w) = mps::truncate_svd(&psi, chi)?;
                let next = match trunc {
                    Truncation::Svd => svd,
                    Truncation::Variational { max_sweeps, tol } => mps::truncate_variational(&psi, chi, max_sweeps, tol)?.mps,
                };
                pass.discarded.push(w);
                pass.truncated.push(true);
                phi = next;
            } else {
                pass.discarded.push(0.0);
                pass.truncated.push(false);
                phi = psi.clone();
            }
            pass.untruncated.push(psi);
            pass.boundaries.push(phi.clone());
        }
        Ok(pass)
    }

    /// Double-layer grid `⟨ψ|O|ψ⟩` with one operator per physical site.
    pub fn double_layer(&self, observables: &[DMatrix<C64>]) -> Result<Grid2d> {
        if observables.len() != self.physical_sites.len() {
            return Err(CtsError::shape(format!(
                "{} observables for {} physical sites",
                observables.len(),
                self.physical_sites.len()
            )));
        }
        let mut ops: Vec<Option<&DMatrix<C64>>> = vec![None; self.rows * self.cols];
        for (&(i, j), o) in self.physical_sites.iter().zip(observables) {
            let d = self.tensor(i, j).dims()[4];
            if o.nrows() != d || o.ncols() != d {
                return Err(CtsError::shape(format!("observable at ({i},{j}) is {}x{}, need {d}x{d}", o.nrows(), o.ncols())));
            }
            ops[i * self.cols + j] = Some(o);
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                let ket = self.tensor(i, j);
                let bra = ket.conj().map_labels(bra_label)?;
                let bra = match ops[i * self.cols + j] {
                    Some(o) => {
                        let d = o.nrows();
                        let op = Tensor::from_matrix(o, &[Leg::new(bra_label(gphys(i, j)), d)], &[Leg::new(gphys(i, j), d)])?;
                        contract_shared(&bra, &op)?
                    }
                    None => bra,
                };
                let t = contract_shared(&bra, ket)?;
                let ls = [vedge(i, j), vedge(i + 1, j), hedge(i, j), hedge(i, j + 1)];
                let order: Vec<Label> = ls.iter().flat_map(|&l| [bra_label(l), l]).collect();
                let t = t.permute(&order)?;
                let d = t.dims();
                tensors.push(t.reshape(std_legs(i, j, &[d[0] * d[1], d[2] * d[3], d[4] * d[5], d[6] * d[7]]))?);
            }
        }
        Grid2d::new(self.rows, self.cols, tensors)
    }

    /// `⟨ψ|⊗O|ψ⟩` and `⟨ψ|ψ⟩` by boundary-MPS contraction of the double layer.
    pub fn expectation(&self, observables: &[DMatrix<C64>], dir: Direction, chi_cut: usize, trunc: Truncation) -> Result<Expectation> {
        let value = self.double_layer(observables)?.contract_approx(dir, chi_cut, trunc)?;
        let ids: Vec<DMatrix<C64>> = self.phys_dims().iter().map(|&d| DMatrix::identity(d, d)).collect();
        let norm = self.double_layer(&ids)?.contract_approx(dir, chi_cut, trunc)?;
        Ok(Expectation { value, norm })
    }

    pub fn to_json(&self) -> GridJson {
        let tensors = (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| {
                let t = self.tensor(i, j);
                let d = t.dims();
                TensorJson {
                    pos: [i, j],
                    legs: LegsJson { up: d[0], down: d[1], left: d[2], right: d[3], phys: d.get(4).copied() },
                    re: t.data().iter().map(|z| z.re).collect(),
                    im: t.data().iter().map(|z| z.im).collect(),
                }
            })
            .collect();
        let row_major: Vec<(usize, usize)> = {
            let mut v = self.physical_sites.clone();
            v.sort();
            v
        };
        let phys_order = if row_major == self.physical_sites { None } else { Some(self.physical_sites.iter().map(|&(i, j)| [i, j]).collect()) };
        GridJson { rows: self.rows, cols: self.cols, tensors, phys_order }
    }

    pub fn from_json(j: &GridJson) -> Result<Self> {
        let mut slots: Vec<Option<Tensor>> = vec![None; j.rows * j.cols];
        for t in &j.tensors {
            let [i, c] = t.pos;
            if i >= j.rows || c >= j.cols {
                return Err(CtsError::shape(format!("tensor position ({i},{c}) outside grid")));
            }
            if t.re.len() != t.im.len() {
                return Err(CtsError::shape("re/im length mismatch"));
            }
            let mut dims = vec![t.legs.up, t.legs.down, t.legs.left, t.legs.right];
            dims.extend(t.legs.phys);
            let data = t.re.iter().zip(&t.im).map(|(&a, &b)| C64::new(a, b)).collect();
            let slot = &mut slots[i * j.cols + c];
            if slot.is_some() {
                return Err(CtsError::shape(format!("duplicate tensor at ({i},{c})")));
            }
            *slot = Some(Tensor::new(std_legs(i, c, &dims), data)?);
        }
        let tensors = slots
            .into_iter()
            .enumerate()
            .map(|(k, t)| t.ok_or_else(|| CtsError::shape(format!("missing tensor at ({},{})", k / j.cols, k % j.cols))))
            .collect::<Result<Vec<_>>>()?;
        let order = j.phys_order.as_ref().map(|o| o.iter().map(|p| (p[0], p[1])).collect());
        Grid2d::with_order(j.rows, j.cols, tensors, order)
    }
}

fn check_chi(chi: usize) -> Result<()> {
    if chi < 1 {
        return Err(CtsError::invalid("chi_cut must be at least 1"));
    }
    Ok(())
}

#[derive(Default)]
struct Pass {
    value: C64,
    boundaries: Vec<Mps>,
    untruncated: Vec<Mps>,
    truncated: Vec<bool>,
    discarded: Vec<f64>,
    step_norms: Vec<f64>,
    max_bond: usize,
}

/// Result of [`Grid2d::expectation`]; the expectation value is
/// `value.value / norm.value`.
#[derive(Clone, Debug)]
pub struct Expectation {
    pub value: ContractionReport,
    pub norm: ContractionReport,
}

impl Expectation {
    pub fn ratio(&self) -> C64 {
        self.value.value / self.norm.value
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegsJson {
    pub up: usize,
    pub down: usize,
    pub left: usize,
    pub right: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phys: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorJson {
    pub pos: [usize; 2],
    pub legs: LegsJson,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Serialized grid. Data is row-major over (up, down, left, right, phys).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridJson {
    pub rows: usize,
    pub cols: usize,
    pub tensors: Vec<TensorJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phys_order: Option<Vec<[usize; 2]>>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::ZERO;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    /// Sum over every joint assignment of all leg labels.
    pub(crate) fn brute_force(g: &Grid2d) -> Vec<C64> {
        let mut dims: BTreeMap<Label, usize> = BTreeMap::new();
        for t in g.tensors() {
            for l in t.legs() {
                dims.insert(l.label, l.dim);
            }
        }
        let labels: Vec<Label> = dims.keys().copied().collect();
        let phys: Vec<Label> = g.physical_sites().iter().map(|&(i, j)| gphys(i, j)).collect();
        let out_len: usize = g.phys_dims().iter().product();
        let mut out = vec![ZERO; out_len];
        let mut idx = vec![0usize; labels.len()];
        let pos = |l: Label| labels.iter().position(|&x| x == l).unwrap();
        let tensor_pos: Vec<Vec<usize>> = g.tensors().iter().map(|t| t.labels().into_iter().map(pos).collect()).collect();
        let phys_pos: Vec<usize> = phys.iter().map(|&l| pos(l)).collect();
        loop {
            let mut prod = ONE;
            for (t, p) in g.tensors().iter().zip(&tensor_pos) {
                let local: Vec<usize> = p.iter().map(|&k| idx[k]).collect();
                prod *= t.get(&local);
            }
            let mut o = 0;
            for &k in &phys_pos {
                o = o * dims[&labels[k]] + idx[k];
            }
            out[o] += prod;
            let mut k = labels.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < dims[&labels[k]] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    fn close(a: C64, b: C64, rel: f64) -> bool {
        (a - b).norm() <= rel * b.norm().max(1e-300)
    }

    #[test]
    fn one_by_one_scalar() {
        let t = Tensor::new(std_legs(0, 0, &[1, 1, 1, 1]), vec![C64::new(7.0, 0.0)]).unwrap();
        let g = Grid2d::new(1, 1, vec![t]).unwrap();
        assert_eq!(g.contract_exact(EXACT_CAP).unwrap(), vec![C64::new(7.0, 0.0)]);
        let r = g.contract_approx(Direction::LeftToRight, 1, Truncation::default()).unwrap();
        assert_eq!(r.value, C64::new(7.0, 0.0));
    }

    #[test]
    fn broken_links_multiply() {
        // every bond index pinned to 0, so each tensor contributes one scalar
        let vals = [2.0, -1.5, 0.5, 3.0, 1.25, -2.0];
        let tensors = (0..6)
            .map(|k| {
                let (i, j) = (k / 3, k % 3);
                let d = [if i == 0 { 1 } else { 2 }, if i == 1 { 1 } else { 2 }, if j == 0 { 1 } else { 2 }, if j == 2 { 1 } else { 2 }];
                Tensor::from_fn(std_legs(i, j, &d), |x| if x.iter().all(|&v| v == 0) { C64::new(vals[k], 0.0) } else { ZERO }).unwrap()
            })
            .collect();
        let g = Grid2d::new(2, 3, tensors).unwrap();
        let want: f64 = vals.iter().product();
        assert!(close(g.contract_exact(EXACT_CAP).unwrap()[0], C64::new(want, 0.0), 1e-14));
    }

    #[test]
    fn exact_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid2d::random(3, 3, 2, None, false, &mut rng).unwrap();
        let want = brute_force(&g)[0];
        assert!(close(g.contract_exact(EXACT_CAP).unwrap()[0], want, 1e-11));
        let g = Grid2d::random(2, 3, 2, Some(2), false, &mut rng).unwrap();
        let want = brute_force(&g);
        let got = g.grid_to_state(1 << 10).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!(close(*a, *b, 1e-11));
        }
    }

    #[test]
    fn exact_respects_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Grid2d::random(4, 4, 3, None, false, &mut rng).unwrap();
        assert!(matches!(g.contract_exact(100), Err(CtsError::CapExceeded { .. })));
        let g = Grid2d::random(1, 12, 1, Some(2), false, &mut rng).unwrap();
        assert!(matches!(g.grid_to_state(1 << 10), Err(CtsError::CapExceeded { .. })));
    }

    #[test]
    fn orientation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = Grid2d::random(3, 4, 2, None, false, &mut rng).unwrap();
        let exact = g.contract_exact(EXACT_CAP).unwrap()[0];
        for h in [g.transposed().unwrap(), g.mirrored_lr().unwrap(), g.mirrored_ud().unwrap()] {
            assert!(close(h.contract_exact(EXACT_CAP).unwrap()[0], exact, 1e-10));
        }
        for dir in [Direction::LeftToRight, Direction::RightToLeft, Direction::TopToBottom, Direction::BottomToTop] {
            let r = g.contract_approx(dir, 64, Truncation::default()).unwrap();
            assert!(close(r.value, exact, 1e-10), "{dir:?}");
        }
        let p = Grid2d::random(2, 3, 2, Some(2), false, &mut rng).unwrap();
        let t = p.transposed().unwrap();
        let (a, b) = (p.grid_to_state(64).unwrap(), t.grid_to_state(64).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn lossless_correction_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = Grid2d::random(3, 5, 2, None, false, &mut rng).unwrap();
        let r = g.contract_with_correction(Direction::LeftToRight, 64, Truncation::default()).unwrap();
        assert!(r.errors.iter().all(|e| *e == ZERO));
        assert_eq!(r.corrected, r.value);
        assert!(close(r.value, g.contract_exact(EXACT_CAP).unwrap()[0], 1e-10));
        assert!(close(r.reverse_value.unwrap(), r.value, 1e-10));
    }

    #[test]
    fn truncation_error_bounded_by_discarded_weight() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let g = Grid2d::random(4, 4, 2, None, true, &mut rng).unwrap();
            let exact = g.contract_exact(EXACT_CAP).unwrap()[0];
            let r = g.contract_approx(Direction::LeftToRight, 1, Truncation::default()).unwrap();
            // exact right environments: the reverse pass without truncation
            let rev = g.mirrored_lr().unwrap().forward_pass(usize::MAX, Truncation::Svd).unwrap();
            let mut bound = 0.0;
            for k in 0..3 {
                let rest = rev.boundaries[2 - k].norm_sqr().unwrap().sqrt();
                bound += r.discarded[k].sqrt() * r.step_norms[k] * rest;
            }
            assert!((r.value - exact).norm() <= bound * (1.0 + 1e-9), "seed {seed}");
        }
    }

    /// `Σ_k sqrt(w_k)·‖ψ_k‖·‖exact right environment of step k‖`.
    fn discarded_bound(g: &Grid2d, chi: usize) -> (C64, f64) {
        let c = g.cols;
        let fwd = g.forward_pass(chi, Truncation::Svd).unwrap();
        let env = g.mirrored_lr().unwrap().forward_pass(usize::MAX, Truncation::Svd).unwrap();
        let bound = (0..c - 1).map(|k| fwd.discarded[k].sqrt() * fwd.step_norms[k] * env.boundaries[c - 2 - k].norm_sqr().unwrap().sqrt()).sum();
        (fwd.value, bound)
    }

    #[test]
    fn reverse_pass_agrees_within_discarded_bounds() {
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(250 + seed);
            let g = Grid2d::random(4, 5, 2, None, seed % 2 == 0, &mut rng).unwrap();
            let (f, bf) = discarded_bound(&g, 2);
            let (r, br) = discarded_bound(&g.mirrored_lr().unwrap(), 2);
            assert!((f - r).norm() <= (bf + br) * (1.0 + 1e-9), "seed {seed}");
            let report = g.contract_with_correction(Direction::LeftToRight, 2, Truncation::Svd).unwrap();
            assert!((report.reverse_value.unwrap() - r).norm() <= 1e-12 * r.norm());
        }
    }

    #[test]
    fn correction_reduces_error() {
        let mut better = 0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let g = Grid2d::random(5, 6, 2, None, true, &mut rng).unwrap();
            let exact = g.contract_exact(EXACT_CAP).unwrap()[0];
            let r = g.contract_with_correction(Direction::LeftToRight, 2, Truncation::default()).unwrap();
            if (r.corrected - exact).norm() < (r.value - exact).norm() {
                better += 1;
            }
        }
        assert!(better >= 9, "{better}/10");
    }

    #[test]
    fn expectation_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = Grid2d::random(2, 3, 2, Some(2), false, &mut rng).unwrap();
        let ids = vec![DMatrix::identity(2, 2); 6];
        let e = g.expectation(&ids, Direction::LeftToRight, 64, Truncation::default()).unwrap();
        assert!(close(e.value.value, e.norm.value, 1e-12));

        let psi = g.grid_to_state(64).unwrap();
        let z = DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
        let mut obs = ids.clone();
        obs[1] = z.clone();
        obs[4] = z;
        let e = g.expectation(&obs, Direction::LeftToRight, 64, Truncation::default()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, a) in psi.iter().enumerate() {
            let s1 = if (k >> 4) & 1 == 1 { -1.0 } else { 1.0 };
            let s4 = if (k >> 1) & 1 == 1 { -1.0 } else { 1.0 };
            num += s1 * s4 * a.norm_sqr();
            den += a.norm_sqr();
        }
        assert!((e.ratio() - C64::new(num / den, 0.0)).norm() < 1e-9);
        assert!(g.expectation(&ids[..5], Direction::LeftToRight, 4, Truncation::default()).is_err());
    }

    #[test]
    fn product_grid_z_expectation() {
        let tensors = (0..4)
            .map(|j| Tensor::new(std_legs(0, j, &[1, 1, 1, 1, 2]), vec![ONE, ZERO]).unwrap())
            .collect();
        let g = Grid2d::new(1, 4, tensors).unwrap();
        let z = DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
        let e = g.expectation(&vec![z; 4], Direction::LeftToRight, 4, Truncation::default()).unwrap();
        assert!((e.ratio() - ONE).norm() < 1e-14);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let g = Grid2d::random(2, 3, 2, Some(2), false, &mut rng).unwrap().transposed().unwrap();
        let s = serde_json::to_string(&g.to_json()).unwrap();
        let back = Grid2d::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(serde_json::to_string(&back.to_json()).unwrap(), s);
    }

    #[test]
    fn invalid_inputs() {
        let t = Tensor::new(std_legs(0, 0, &[1, 1, 1, 2]), vec![ONE, ONE]).unwrap();
        assert!(Grid2d::new(1, 1, vec![t]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = Grid2d::random(2, 2, 2, Some(2), false, &mut rng).unwrap();
        assert!(g.contract_approx(Direction::LeftToRight, 2, Truncation::default()).is_err());
        let s = Grid2d::random(2, 2, 2, None, false, &mut rng).unwrap();
        assert!(s.contract_approx(Direction::LeftToRight, 0, Truncation::default()).is_err());
    }
}
