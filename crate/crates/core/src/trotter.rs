//! First-order Trotter grids for the chain `H = Σ Z_a Z_{a+1} + B Σ X_a`.
//!
//! The bonds are split into two commuting sets, `(0,1), (2,3), …` and
//! `(1,2), (3,4), …`. Each set owns its bond terms plus a share of the field:
//! a site gets `B/2` from every bond it borders, and a chain end gets the full
//! `B` from its single bond. A half step is
//! `exp(-iδt Σ Z_a Z_{a+1}) · Π_a exp(-iδt f_a X_a)`; the coupling
//! exponential has operator rank 2 per bond, so every grid bond has
//! dimension at most 2.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CtsError, Result};
use crate::grid::Grid2d;
use crate::mps::{self, Mpo};
use crate::tensor::{Leg, Tensor, C64, ONE, ZERO};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    pub n_sites: usize,
    pub b_field: f64,
}

impl IsingModel {
    pub fn new(n_sites: usize, b_field: f64) -> Result<Self> {
        if n_sites < 2 {
            return Err(CtsError::invalid("Ising chain needs at least two sites"));
        }
        if !b_field.is_finite() {
            return Err(CtsError::NonFinite);
        }
        Ok(IsingModel { n_sites, b_field })
    }

    /// Field coefficient of site `a` inside the bond set `which`.
    pub fn field_share(&self, which: Bonds, a: usize) -> f64 {
        let bordering: Vec<usize> = [a.checked_sub(1), (a + 1 < self.n_sites).then_some(a)].into_iter().flatten().collect();
        let owned = bordering.iter().filter(|&&b| which.contains(b)).count();
        self.b_field * owned as f64 / bordering.len() as f64
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bonds {
    /// `(0,1), (2,3), …`
    Odd,
    /// `(1,2), (3,4), …`
    Even,
}

impl Bonds {
    /// Whether bond `(b, b+1)` belongs to this set.
    pub fn contains(self, b: usize) -> bool {
        match self {
            Bonds::Odd => b % 2 == 0,
            Bonds::Even => b % 2 == 1,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterPlan {
    pub total_time: f64,
    pub steps: usize,
}

impl TrotterPlan {
    pub fn new(total_time: f64, steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(CtsError::invalid("Trotter plan needs at least one step"));
        }
        if !total_time.is_finite() {
            return Err(CtsError::NonFinite);
        }
        Ok(TrotterPlan { total_time, steps })
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.steps as f64
    }
}

/// `max(1, ⌈t²/ε⌉)`.
pub fn step_count(t: f64, eps: f64) -> Result<usize> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(CtsError::invalid("eps must be positive"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(CtsError::invalid("t must be nonnegative"));
    }
    Ok(((t * t / eps).ceil() as usize).max(1))
}

fn op(m: [C64; 4]) -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &m)
}

/// `exp(-iθX)`.
fn x_rotation(theta: f64) -> DMatrix<C64> {
    let c = C64::new(theta.cos(), 0.0);
    let s = C64::new(0.0, -theta.sin());
    op([c, s, s, c])
}

/// The half-step operator for bond set `which` as an MPO with bond
/// dimension at most 2.
pub fn half_step_mpo(model: &IsingModel, which: Bonds, dt: f64) -> Result<Mpo> {
    if !dt.is_finite() {
        return Err(CtsError::NonFinite);
    }
    let n = model.n_sites;
    let id = op([ONE, ZERO, ZERO, ONE]);
    let z = op([ONE, ZERO, ZERO, -ONE]);
    // exp(-iδt ZZ) = cos δt · I⊗I - i sin δt · Z⊗Z, split as Σ_k L_k ⊗ R_k
    let left_terms = [id.clone() * C64::new(dt.cos(), 0.0), z.clone()];
    let right_terms = [id.clone(), z.clone() * C64::new(0.0, -dt.sin())];
    let mut sites = Vec::with_capacity(n);
    for a in 0..n {
        let rot = x_rotation(dt * model.field_share(which, a));
        let starts = a + 1 < n && which.contains(a);
        let ends = a > 0 && which.contains(a - 1);
        let (dl, dr) = (if ends { 2 } else { 1 }, if starts { 2 } else { 1 });
        let legs = vec![
            Leg::new(mps::mpo_bond(a), dl),
            Leg::new(mps::phys(a), 2),
            Leg::new(mps::phys_in(a), 2),
            Leg::new(mps::mpo_bond(a + 1), dr),
        ];
        let t = Tensor::from_fn(legs, |x| {
            let m = if starts {
                &left_terms[x[3]]
            } else if ends {
                &right_terms[x[0]]
            } else {
                &id
            };
            let g = m * &rot;
            g[(x[1], x[2])]
        })?;
        sites.push(t);
    }
    Mpo::new(sites)
}

/// One full step: the odd half step followed by the even one. Bond ≤ 4.
pub fn full_step_mpo(model: &IsingModel, dt: f64) -> Result<Mpo> {
    half_step_mpo(model, Bonds::Odd, dt)?.then(&half_step_mpo(model, Bonds::Even, dt)?)
}

/// Grid of `2n + 1` rows: the initial product row followed by alternating
/// odd and even half steps. The last row carries the physical legs.
pub fn evolution_grid(model: &IsingModel, plan: &TrotterPlan, initial: &[C64; 2]) -> Result<Grid2d> {
    if initial.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(CtsError::ZeroNorm("initial local state".into()));
    }
    let n = model.n_sites;
    let dt = plan.dt();
    let rows = 2 * plan.steps + 1;
    let mut tensors = Vec::with_capacity(rows * n);
    for _ in 0..n {
        let legs = if rows == 1 { vec![1, 1, 1, 1, 2] } else { vec![1, 2, 1, 1] };
        tensors.push(Tensor::new(positional(&legs), initial.to_vec())?);
    }
    let rows_ops = [half_step_mpo(model, Bonds::Odd, dt)?, half_step_mpo(model, Bonds::Even, dt)?];
    for r in 1..rows {
        let mpo = &rows_ops[(r - 1) % 2];
        let last = r + 1 == rows;
        for a in 0..n {
            tensors.push(mpo_site_to_grid(mpo.site(a), a, last)?);
        }
    }
    Grid2d::new(rows, n, tensors)
}

fn positional(dims: &[usize]) -> Vec<Leg> {
    dims.iter().enumerate().map(|(k, &d)| Leg::new(crate::tensor::Label::new(0, k as u32, 0), d)).collect()
}

/// MPO site `[left, out, in, right]` as grid legs `(up=in, down=out, left,
/// right)`, or with `down` moved to the physical slot on the last row.
pub(crate) fn mpo_site_to_grid(site: &Tensor, a: usize, last: bool) -> Result<Tensor> {
    let t = site.permute(&[mps::phys_in(a), mps::phys(a), mps::mpo_bond(a), mps::mpo_bond(a + 1)])?;
    let d = t.dims();
    if last {
        let t = t.permute(&[mps::phys_in(a), mps::mpo_bond(a), mps::mpo_bond(a + 1), mps::phys(a)])?;
        let d2 = t.dims();
        t.reshape(positional(&[d2[0], 1, d2[1], d2[2], d2[3]]))
    } else {
        t.reshape(positional(&d))
    }
}
