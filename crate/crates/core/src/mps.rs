//! Open-boundary matrix product states and operators.
//!
//! Site `i` of an [`Mps`] carries legs `[bond(i), phys(i), bond(i+1)]`; site
//! `i` of an [`Mpo`] carries `[mpo_bond(i), phys(i), phys_in(i),
//! mpo_bond(i+1)]`, where `phys(i)` is the output and `phys_in(i)` the input
//! leg. The outermost bonds always have dimension one, so edge sites go
//! through the same code path as bulk sites.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CtsError, Result};
use crate::linalg;
use crate::tensor::{contract, contract_shared, Label, Leg, LegPairing, Tensor, C64, ONE};

pub const TAG_BOND: u8 = 1;
pub const TAG_PHYS: u8 = 2;
pub const TAG_PHYS_IN: u8 = 3;
pub const TAG_MPO_BOND: u8 = 4;
const TAG_BRA_BOND: u8 = 5;

/// Default cap on the number of amplitudes a dense expansion may produce.
pub const DENSE_CAP: usize = 1 << 20;

pub fn bond(i: usize) -> Label {
    Label::new(TAG_BOND, i as u32, 0)
}

pub fn phys(i: usize) -> Label {
    Label::new(TAG_PHYS, i as u32, 0)
}

pub fn phys_in(i: usize) -> Label {
    Label::new(TAG_PHYS_IN, i as u32, 0)
}

pub fn mpo_bond(i: usize) -> Label {
    Label::new(TAG_MPO_BOND, i as u32, 0)
}

fn bra(l: Label) -> Label {
    if l.tag() == TAG_BOND {
        l.with_tag(TAG_BRA_BOND)
    } else {
        l
    }
}

fn unbra(l: Label) -> Label {
    if l.tag() == TAG_BRA_BOND {
        l.with_tag(TAG_BOND)
    } else {
        l
    }
}

pub(crate) fn random_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im)
}

/// Matrix product state with open boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    sites: Vec<Tensor>,
}

impl Mps {
    /// Build from rank-3 site tensors whose legs are read positionally as
    /// (left bond, physical, right bond). Labels are replaced by the standard
    /// ones.
    pub fn new(sites: Vec<Tensor>) -> Result<Self> {
        if sites.is_empty() {
            return Err(CtsError::shape("MPS needs at least one site"));
        }
        let n = sites.len();
        let mut out = Vec::with_capacity(n);
        for (i, t) in sites.into_iter().enumerate() {
            if t.rank() != 3 {
                return Err(CtsError::shape(format!("MPS site {i} has rank {}", t.rank())));
            }
            let d = t.dims();
            let legs = vec![Leg::new(bond(i), d[0]), Leg::new(phys(i), d[1]), Leg::new(bond(i + 1), d[2])];
            out.push(t.reshape(legs)?);
        }
        Mps::from_standard(out)
    }

    /// Sites must already carry the standard labels.
    pub(crate) fn from_standard(sites: Vec<Tensor>) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(CtsError::shape("MPS needs at least one site"));
        }
        for (i, t) in sites.iter().enumerate() {
            if t.labels() != [bond(i), phys(i), bond(i + 1)] {
                return Err(CtsError::shape(format!("MPS site {i} has non-standard legs {:?}", t.legs())));
            }
        }
        if sites[0].dims()[0] != 1 || sites[n - 1].dims()[2] != 1 {
            return Err(CtsError::shape("MPS boundary bonds must have dimension 1"));
        }
        for i in 0..n - 1 {
            if sites[i].dims()[2] != sites[i + 1].dims()[0] {
                return Err(CtsError::shape(format!("bond {} dims disagree", i + 1)));
            }
        }
        Ok(Mps { sites })
    }

    /// χ = 1 state whose dense expansion is the Kronecker product of the
    /// local vectors.
    pub fn from_product(local: &[Vec<C64>]) -> Result<Self> {
        let mut sites = Vec::with_capacity(local.len());
        for (i, v) in local.iter().enumerate() {
            if v.is_empty() || v.iter().all(|z| z.norm_sqr() == 0.0) {
                return Err(CtsError::ZeroNorm(format!("local vector at site {i}")));
            }
            let legs = vec![Leg::new(bond(i), 1), Leg::new(phys(i), v.len()), Leg::new(bond(i + 1), 1)];
            sites.push(Tensor::new(legs, v.clone())?);
        }
        Mps::from_standard(sites)
    }

    /// Random Gaussian MPS. Bonds are capped at the largest rank the position
    /// allows, so no bond is trivially redundant.
    pub fn random<R: Rng + ?Sized>(phys_dims: &[usize], chi: usize, rng: &mut R) -> Result<Self> {
        let bonds = capped_bonds(phys_dims, chi);
        let sites = phys_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let legs = vec![Leg::new(bond(i), bonds[i]), Leg::new(phys(i), d), Leg::new(bond(i + 1), bonds[i + 1])];
                Tensor::from_fn(legs, |_| random_c64(rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Mps::from_standard(sites)
    }

    /// Exact (or `chi`-truncated) MPS of a dense vector by successive SVDs.
    pub fn from_dense(amps: &[C64], phys_dims: &[usize], chi: Option<usize>) -> Result<(Self, f64)> {
        let total: usize = phys_dims.iter().product();
        if total != amps.len() || phys_dims.is_empty() {
            return Err(CtsError::shape("dense vector length does not match physical dims"));
        }
        let n = phys_dims.len();
        let mut legs = vec![Leg::new(bond(0), 1)];
        legs.extend(phys_dims.iter().enumerate().map(|(i, &d)| Leg::new(phys(i), d)));
        let mut rest = Tensor::new(legs, amps.to_vec())?;
        let norm2 = rest.norm_sqr();
        let mut discarded = 0.0;
        let mut sites = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let split = crate::tensor::svd_split(&rest, &[bond(i), phys(i)], chi, bond(i + 1))?;
            discarded += split.discarded_weight;
            sites.push(split.u.clone());
            rest = split.sv();
        }
        let last = rest.unsqueeze(bond(n), 2)?;
        sites.push(last);
        let rel = if norm2 > 0.0 { discarded / norm2 } else { 0.0 };
        Ok((Mps::from_standard(sites)?, rel))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> &Tensor {
        &self.sites[i]
    }

    pub fn sites(&self) -> &[Tensor] {
        &self.sites
    }

    pub fn into_sites(self) -> Vec<Tensor> {
        self.sites
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.dims()[1]).collect()
    }

    /// All `len + 1` bond dimensions including the two dummy boundary bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.sites.iter().map(|s| s.dims()[0]).collect();
        b.push(1);
        b
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn conj(&self) -> Mps {
        Mps { sites: self.sites.iter().map(Tensor::conj).collect() }
    }

    pub fn scale(&self, factor: C64) -> Mps {
        let mut sites = self.sites.clone();
        sites[0].scale_mut(factor);
        Mps { sites }
    }

    pub fn norm_sqr(&self) -> Result<f64> {
        Ok(inner_product(self, self)?.re)
    }

    pub fn to_dense(&self, cap: usize) -> Result<Vec<C64>> {
        let total: u128 = self.phys_dims().iter().map(|&d| d as u128).product();
        if total > cap as u128 {
            return Err(CtsError::CapExceeded { what: "dense MPS expansion".into(), size: total, cap: cap as u128 });
        }
        let mut acc = self.sites[0].clone();
        for s in &self.sites[1..] {
            acc = contract_shared(&acc, s)?;
        }
        Ok(acc.into_data())
    }

    /// Frobenius norm residual of `A†A - I` for a left-isometric site.
    pub fn left_isometry_residual(&self, i: usize) -> Result<f64> {
        let m = self.sites[i].to_matrix(&[bond(i), phys(i)], &[bond(i + 1)])?;
        let g = m.adjoint() * &m;
        Ok((g - DMatrix::identity(m.ncols(), m.ncols())).norm())
    }

    /// Frobenius norm residual of `A A† - I` for a right-isometric site.
    pub fn right_isometry_residual(&self, i: usize) -> Result<f64> {
        let m = self.sites[i].to_matrix(&[bond(i)], &[phys(i), bond(i + 1)])?;
        let g = &m * m.adjoint();
        Ok((g - DMatrix::identity(m.nrows(), m.nrows())).norm())
    }

    fn check_compatible(&self, other: &Mps) -> Result<()> {
        if self.len() != other.len() || self.phys_dims() != other.phys_dims() {
            return Err(CtsError::shape(format!(
                "MPS shapes differ: {:?} vs {:?}",
                self.phys_dims(),
                other.phys_dims()
            )));
        }
        Ok(())
    }
}

/// Bond dimensions `min(chi, prod left dims, prod right dims)`.
pub fn capped_bonds(phys_dims: &[usize], chi: usize) -> Vec<usize> {
    let n = phys_dims.len();
    let mut bonds = vec![1usize; n + 1];
    for k in 1..n {
        let left = phys_dims[..k].iter().fold(1u128, |a, &d| a.saturating_mul(d as u128));
        let right = phys_dims[k..].iter().fold(1u128, |a, &d| a.saturating_mul(d as u128));
        bonds[k] = (chi as u128).min(left).min(right) as usize;
    }
    bonds
}

fn transfer(a: &Mps, b: &Mps, conj_a: bool) -> Result<C64> {
    a.check_compatible(b)?;
    let mut env = unit_env(0);
    for i in 0..a.len() {
        let ai = if conj_a { a.sites[i].conj() } else { a.sites[i].clone() };
        let t = contract_shared(&env, &ai.map_labels(bra)?)?;
        env = contract_shared(&t, &b.sites[i])?;
    }
    let n = a.len();
    env.squeeze(bra(bond(n)))?.squeeze(bond(n))?.to_scalar()
}

/// `⟨a|b⟩`, conjugating `a`.
pub fn inner_product(a: &Mps, b: &Mps) -> Result<C64> {
    transfer(a, b, true)
}

/// Bilinear contraction `Σ_s a(s) b(s)` without conjugation.
pub fn dot(a: &Mps, b: &Mps) -> Result<C64> {
    transfer(a, b, false)
}

/// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`.
pub fn fidelity(a: &Mps, b: &Mps) -> Result<f64> {
    let ab = inner_product(a, b)?;
    let aa = a.norm_sqr()?;
    let bb = b.norm_sqr()?;
    if aa <= 0.0 || bb <= 0.0 {
        return Err(CtsError::ZeroNorm("MPS in fidelity".into()));
    }
    Ok(ab.norm_sqr() / (aa * bb))
}

/// Matrix product operator with open boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Mpo {
    sites: Vec<Tensor>,
}

impl Mpo {
    /// Build from rank-4 site tensors read positionally as (left bond,
    /// output, input, right bond).
    pub fn new(sites: Vec<Tensor>) -> Result<Self> {
        let mut out = Vec::with_capacity(sites.len());
        for (i, t) in sites.into_iter().enumerate() {
            if t.rank() != 4 {
                return Err(CtsError::shape(format!("MPO site {i} has rank {}", t.rank())));
            }
            let d = t.dims();
            let legs = vec![
                Leg::new(mpo_bond(i), d[0]),
                Leg::new(phys(i), d[1]),
                Leg::new(phys_in(i), d[2]),
                Leg::new(mpo_bond(i + 1), d[3]),
            ];
            out.push(t.reshape(legs)?);
        }
        Mpo::from_standard(out)
    }

    pub(crate) fn from_standard(sites: Vec<Tensor>) -> Result<Self> {
        let n = sites.len();
        if n == 0 {
            return Err(CtsError::shape("MPO needs at least one site"));
        }
        for (i, t) in sites.iter().enumerate() {
            if t.labels() != [mpo_bond(i), phys(i), phys_in(i), mpo_bond(i + 1)] {
                return Err(CtsError::shape(format!("MPO site {i} has non-standard legs {:?}", t.legs())));
            }
        }
        if sites[0].dims()[0] != 1 || sites[n - 1].dims()[3] != 1 {
            return Err(CtsError::shape("MPO boundary bonds must have dimension 1"));
        }
        for i in 0..n - 1 {
            if sites[i].dims()[3] != sites[i + 1].dims()[0] {
                return Err(CtsError::shape(format!("MPO bond {} dims disagree", i + 1)));
            }
        }
        Ok(Mpo { sites })
    }

    /// Product of single-site operators (bond dimension one). Each matrix maps
    /// input (column) to output (row).
    pub fn from_local_ops(ops: &[DMatrix<C64>]) -> Result<Self> {
        let sites = ops
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let legs = vec![
                    Leg::new(mpo_bond(i), 1),
                    Leg::new(phys(i), m.nrows()),
                    Leg::new(phys_in(i), m.ncols()),
                    Leg::new(mpo_bond(i + 1), 1),
                ];
                Tensor::from_fn(legs, |idx| m[(idx[1], idx[2])])
            })
            .collect::<Result<Vec<_>>>()?;
        Mpo::from_standard(sites)
    }

    pub fn identity(phys_dims: &[usize]) -> Result<Self> {
        let ops: Vec<DMatrix<C64>> = phys_dims.iter().map(|&d| DMatrix::identity(d, d)).collect();
        Mpo::from_local_ops(&ops)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> &Tensor {
        &self.sites[i]
    }

    pub fn sites(&self) -> &[Tensor] {
        &self.sites
    }

    pub fn out_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.dims()[1]).collect()
    }

    pub fn in_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.dims()[2]).collect()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.sites.iter().map(|s| s.dims()[0]).collect();
        b.push(1);
        b
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Dense operator matrix, rows indexed by outputs and columns by inputs.
    pub fn to_dense(&self, cap: usize) -> Result<DMatrix<C64>> {
        let rows: u128 = self.out_dims().iter().map(|&d| d as u128).product();
        let cols: u128 = self.in_dims().iter().map(|&d| d as u128).product();
        if rows * cols > cap as u128 {
            return Err(CtsError::CapExceeded { what: "dense MPO".into(), size: rows * cols, cap: cap as u128 });
        }
        let mut acc = self.sites[0].clone();
        for s in &self.sites[1..] {
            acc = contract_shared(&acc, s)?;
        }
        let n = self.len();
        let acc = acc.squeeze(mpo_bond(0))?.squeeze(mpo_bond(n))?;
        let outs: Vec<Label> = (0..n).map(phys).collect();
        let ins: Vec<Label> = (0..n).map(phys_in).collect();
        acc.to_matrix(&outs, &ins)
    }

    /// Vectorize: fuse (output, input) into one physical leg of dimension
    /// `d_out · d_in`, output index major.
    pub fn as_mps(&self) -> Result<Mps> {
        let sites = self
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d = s.dims();
                s.clone().reshape(vec![
                    Leg::new(bond(i), d[0]),
                    Leg::new(phys(i), d[1] * d[2]),
                    Leg::new(bond(i + 1), d[3]),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Mps::from_standard(sites)
    }

    /// Inverse of [`Mpo::as_mps`].
    pub fn from_mps(m: &Mps, out_dims: &[usize], in_dims: &[usize]) -> Result<Self> {
        if out_dims.len() != m.len() || in_dims.len() != m.len() {
            return Err(CtsError::shape("from_mps: dims length mismatch"));
        }
        let sites = m
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d = s.dims();
                if d[1] != out_dims[i] * in_dims[i] {
                    return Err(CtsError::shape(format!("from_mps: site {i} physical dim mismatch")));
                }
                s.clone().reshape(vec![
                    Leg::new(mpo_bond(i), d[0]),
                    Leg::new(phys(i), out_dims[i]),
                    Leg::new(phys_in(i), in_dims[i]),
                    Leg::new(mpo_bond(i + 1), d[2]),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Mpo::from_standard(sites)
    }

    /// Operator product `next · self` (self acts first). Bond dims multiply.
    pub fn then(&self, next: &Mpo) -> Result<Mpo> {
        if self.len() != next.len() || self.out_dims() != next.in_dims() {
            return Err(CtsError::shape("MPO composition: shape mismatch"));
        }
        let n = self.len();
        let mut sites = Vec::with_capacity(n);
        const TMP: u8 = 250;
        const TMP_BOND: u8 = 251;
        for i in 0..n {
            let link = Label::new(TMP, i as u32, 0);
            let a = self.sites[i].map_labels(|l| match l.tag() {
                TAG_PHYS => link,
                TAG_MPO_BOND => l.with_tag(TMP_BOND),
                _ => l,
            })?;
            let b = next.sites[i].map_labels(|l| if l == phys_in(i) { link } else { l })?;
            let t = contract_shared(&b, &a)?;
            // legs: [nb_i, out_i, nb_i+1, sb_i, in_i, sb_i+1]
            let sb = |k: usize| mpo_bond(k).with_tag(TMP_BOND);
            let t = t.permute(&[mpo_bond(i), sb(i), phys(i), phys_in(i), mpo_bond(i + 1), sb(i + 1)])?;
            let d = t.dims();
            sites.push(t.reshape(vec![
                Leg::new(mpo_bond(i), d[0] * d[1]),
                Leg::new(phys(i), d[2]),
                Leg::new(phys_in(i), d[3]),
                Leg::new(mpo_bond(i + 1), d[4] * d[5]),
            ])?);
        }
        Mpo::from_standard(sites)
    }

    /// Transpose every site (swap input and output legs).
    pub fn transpose(&self) -> Result<Mpo> {
        let sites = self
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let t = s.permute(&[mpo_bond(i), phys_in(i), phys(i), mpo_bond(i + 1)])?;
                let d = t.dims();
                t.reshape(vec![
                    Leg::new(mpo_bond(i), d[0]),
                    Leg::new(phys(i), d[1]),
                    Leg::new(phys_in(i), d[2]),
                    Leg::new(mpo_bond(i + 1), d[3]),
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        Mpo::from_standard(sites)
    }
}

/// Exact MPO-MPS product; bond dims multiply.
pub fn apply_mpo(op: &Mpo, psi: &Mps) -> Result<Mps> {
    if op.len() != psi.len() || op.in_dims() != psi.phys_dims() {
        return Err(CtsError::shape(format!(
            "MPO inputs {:?} do not match MPS physical dims {:?}",
            op.in_dims(),
            psi.phys_dims()
        )));
    }
    let mut sites = Vec::with_capacity(psi.len());
    for i in 0..psi.len() {
        let pairing = LegPairing::new(vec![(phys_in(i), phys(i))])?;
        let t = contract(&op.sites[i], &psi.sites[i], &pairing)?;
        let t = t.permute(&[mpo_bond(i), bond(i), phys(i), mpo_bond(i + 1), bond(i + 1)])?;
        let d = t.dims();
        sites.push(t.reshape(vec![
            Leg::new(bond(i), d[0] * d[1]),
            Leg::new(phys(i), d[2]),
            Leg::new(bond(i + 1), d[3] * d[4]),
        ])?);
    }
    Mps::from_standard(sites)
}

fn left_factor(site: &Tensor, i: usize) -> Result<(Tensor, DMatrix<C64>)> {
    let d = site.dims();
    let m = site.to_matrix(&[bond(i), phys(i)], &[bond(i + 1)])?;
    let (q, r) = linalg::qr(&m);
    let k = q.ncols();
    let q = Tensor::from_matrix(&q, &[Leg::new(bond(i), d[0]), Leg::new(phys(i), d[1])], &[Leg::new(bond(i + 1), k)])?;
    Ok((q, r))
}

fn right_factor(site: &Tensor, i: usize) -> Result<(DMatrix<C64>, Tensor)> {
    let d = site.dims();
    let m = site.to_matrix(&[bond(i)], &[phys(i), bond(i + 1)])?;
    let (q, r) = linalg::qr(&m.adjoint());
    let l = r.adjoint();
    let qh = q.adjoint();
    let k = qh.nrows();
    let q = Tensor::from_matrix(&qh, &[Leg::new(bond(i), k)], &[Leg::new(phys(i), d[1]), Leg::new(bond(i + 1), d[2])])?;
    Ok((l, q))
}

/// Multiply `m` (rows: old bond(i)) into the left bond of `site`.
fn absorb_left(m: &DMatrix<C64>, site: &Tensor, i: usize) -> Result<Tensor> {
    let d = site.dims();
    let s = site.to_matrix(&[bond(i)], &[phys(i), bond(i + 1)])?;
    let p = m * s;
    Tensor::from_matrix(&p, &[Leg::new(bond(i), m.nrows())], &[Leg::new(phys(i), d[1]), Leg::new(bond(i + 1), d[2])])
}

/// Multiply `m` (columns: old bond(i+1)) into the right bond of `site`.
fn absorb_right(site: &Tensor, m: &DMatrix<C64>, i: usize) -> Result<Tensor> {
    let d = site.dims();
    let s = site.to_matrix(&[bond(i), phys(i)], &[bond(i + 1)])?;
    let p = s * m;
    Tensor::from_matrix(&p, &[Leg::new(bond(i), d[0]), Leg::new(phys(i), d[1])], &[Leg::new(bond(i + 1), m.ncols())])
}

/// Mixed canonical form: sites left of `center` left-isometric, sites right
/// of it right-isometric. The dense state is unchanged.
pub fn canonicalize(psi: &Mps, center: usize) -> Result<Mps> {
    let n = psi.len();
    if center >= n {
        return Err(CtsError::invalid(format!("center {center} out of range for {n} sites")));
    }
    let mut sites = psi.sites.clone();
    for i in 0..center {
        let (q, r) = left_factor(&sites[i], i)?;
        sites[i] = q;
        sites[i + 1] = absorb_left(&r, &sites[i + 1], i + 1)?;
    }
    for i in (center + 1..n).rev() {
        let (l, q) = right_factor(&sites[i], i)?;
        sites[i] = q;
        sites[i - 1] = absorb_right(&sites[i - 1], &l, i - 1)?;
    }
    Mps::from_standard(sites)
}

/// Left-to-right sweep of SVD truncations in canonical gauge.
///
/// Returns the truncated state (left-canonical, centered on the last site)
/// and the accumulated discarded weight relative to `⟨ψ|ψ⟩`, which bounds the
/// infidelity of the result.
pub fn truncate_svd(psi: &Mps, chi: usize) -> Result<(Mps, f64)> {
    if chi < 1 {
        return Err(CtsError::invalid("chi must be at least 1"));
    }
    let n = psi.len();
    let mut sites = canonicalize(psi, 0)?.sites;
    let norm2 = sites[0].norm_sqr();
    if norm2 == 0.0 {
        return Ok((Mps::from_standard(sites)?, 0.0));
    }
    let tmp = Label::new(TAG_BRA_BOND, u32::MAX, 0);
    let mut discarded = 0.0;
    for i in 0..n - 1 {
        let split = crate::tensor::svd_split(&sites[i], &[bond(i), phys(i)], Some(chi), tmp)?;
        discarded += split.discarded_weight;
        let next = contract_shared(&split.sv(), &sites[i + 1])?;
        sites[i + 1] = next.map_labels(|l| if l == tmp { bond(i + 1) } else { l })?;
        sites[i] = split.u.map_labels(|l| if l == tmp { bond(i + 1) } else { l })?;
    }
    Ok((Mps::from_standard(sites)?, discarded / norm2))
}

/// Outcome of [`truncate_variational`].
#[derive(Clone, Debug)]
pub struct VariationalFit {
    pub mps: Mps,
    pub fidelity: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Fidelity after each completed sweep.
    pub history: Vec<f64>,
}

/// Bond-`chi` MPS maximizing `|⟨φ|ψ⟩|² / ⟨φ|φ⟩` by single-site sweeps,
/// started from [`truncate_svd`]. Each local update is the least-squares
/// optimum, so the returned `φ` also carries the best scale.
pub fn truncate_variational(psi: &Mps, chi: usize, max_sweeps: usize, tol: f64) -> Result<VariationalFit> {
    let target_norm2 = psi.norm_sqr()?;
    if target_norm2 <= 0.0 {
        return Err(CtsError::ZeroNorm("truncation target".into()));
    }
    let (init, _) = truncate_svd(psi, chi)?;
    if psi.len() == 1 || psi.bond_dims().iter().all(|&b| b <= chi) {
        let f = fidelity(&init, psi)?.min(1.0);
        return Ok(VariationalFit { mps: init, fidelity: f, sweeps: 0, converged: true, history: Vec::new() });
    }
    variational_sweeps(psi, init, target_norm2, max_sweeps, tol)
}

fn unit_env(i: usize) -> Tensor {
    Tensor::from_parts(vec![Leg::new(bra(bond(i)), 1), Leg::new(bond(i), 1)], vec![ONE])
}

/// Extend an overlap environment (legs: bra bond, ket bond) by one site.
fn grow_env(prev: &Tensor, phi: &Tensor, psi: &Tensor) -> Result<Tensor> {
    let b = phi.conj().map_labels(bra)?;
    contract_shared(&contract_shared(prev, &b)?, psi)
}

/// `∂⟨φ|ψ⟩/∂φ̄_i`, returned with the standard site labels.
fn local_env(left: &Tensor, psi_site: &Tensor, right: &Tensor) -> Result<Tensor> {
    let t = contract_shared(&contract_shared(left, psi_site)?, right)?;
    t.map_labels(unbra)
}

pub(crate) fn variational_sweeps(psi: &Mps, phi: Mps, target_norm2: f64, max_sweeps: usize, tol: f64) -> Result<VariationalFit> {
    let n = psi.len();
    let mut sites = canonicalize(&phi, 0)?.sites;
    let mut left: Vec<Tensor> = (0..=n).map(unit_env).collect();
    let mut right: Vec<Tensor> = (0..=n).map(unit_env).collect();
    for i in (1..n).rev() {
        right[i] = grow_env(&right[i + 1], &sites[i], &psi.sites[i])?;
    }
    let mut fid = fidelity(&phi, psi)?;
    let mut sweeps = 0;
    let mut converged = false;
    let mut history = Vec::new();
    while sweeps < max_sweeps {
        sweeps += 1;
        for i in 0..n - 1 {
            let env = local_env(&left[i], &psi.sites[i], &right[i + 1])?;
            let (q, _) = left_factor(&env, i)?;
            left[i + 1] = grow_env(&left[i], &q, &psi.sites[i])?;
            sites[i] = q;
        }
        for i in (1..n).rev() {
            let env = local_env(&left[i], &psi.sites[i], &right[i + 1])?;
            let (_, q) = right_factor(&env, i)?;
            right[i] = grow_env(&right[i + 1], &q, &psi.sites[i])?;
            sites[i] = q;
        }
        sites[0] = local_env(&left[0], &psi.sites[0], &right[1])?;
        let new_fid = sites[0].norm_sqr() / target_norm2;
        let improvement = new_fid - fid;
        fid = new_fid;
        history.push(fid.min(1.0));
        if improvement.abs() < tol {
            converged = true;
            break;
        }
    }
    let mps = Mps::from_standard(sites)?;
    Ok(VariationalFit { mps, fidelity: fid.min(1.0), sweeps, converged, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::tensor::ZERO;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn kron(vs: &[Vec<C64>]) -> Vec<C64> {
        let mut out = vec![ONE];
        for v in vs {
            out = out.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        }
        out
    }

    fn dense_inner(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    fn dense_fid(a: &[C64], b: &[C64]) -> f64 {
        dense_inner(a, b).norm_sqr() / (dense_inner(a, a).re * dense_inner(b, b).re)
    }

    fn random_mpo(n: usize, d: usize, chi: usize, rng: &mut ChaCha8Rng) -> Mpo {
        let sites = (0..n)
            .map(|i| {
                let l = if i == 0 { 1 } else { chi };
                let r = if i == n - 1 { 1 } else { chi };
                let legs = vec![Leg::new(mpo_bond(i), l), Leg::new(phys(i), d), Leg::new(phys_in(i), d), Leg::new(mpo_bond(i + 1), r)];
                Tensor::from_fn(legs, |_| random_c64(rng)).unwrap()
            })
            .collect();
        Mpo::from_standard(sites).unwrap()
    }

    fn ghz(n: usize) -> Mps {
        let mut v = vec![ZERO; 1 << n];
        v[0] = c(1.0);
        v[(1 << n) - 1] = c(1.0);
        Mps::from_dense(&v, &vec![2; n], None).unwrap().0
    }

    #[test]
    fn product_states() {
        let zero = Mps::from_product(&vec![vec![ONE, ZERO]; 5]).unwrap();
        let d = zero.to_dense(DENSE_CAP).unwrap();
        assert_eq!(d[0], ONE);
        assert!(d[1..].iter().all(|z| *z == ZERO));
        let h = 1.0 / 2f64.sqrt();
        let plus = Mps::from_product(&vec![vec![c(h), c(h)]; 2]).unwrap();
        for z in plus.to_dense(DENSE_CAP).unwrap() {
            assert!((z - c(0.5)).norm() < 1e-15);
        }
        assert!(Mps::from_product(&[vec![ONE], vec![ZERO, ZERO]]).is_err());
    }

    #[test]
    fn product_matches_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vs: Vec<Vec<C64>> = (0..6).map(|k| (0..2 + k % 2).map(|_| random_c64(&mut rng)).collect()).collect();
        let m = Mps::from_product(&vs).unwrap();
        let d = m.to_dense(DENSE_CAP).unwrap();
        for (a, b) in d.iter().zip(kron(&vs)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn inner_products() {
        let zero = Mps::from_product(&vec![vec![ONE, ZERO]; 4]).unwrap();
        let one = Mps::from_product(&vec![vec![ZERO, ONE]; 4]).unwrap();
        assert!((inner_product(&zero, &zero).unwrap() - ONE).norm() < 1e-15);
        assert_eq!(inner_product(&zero, &one).unwrap(), ZERO);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Mps::random(&[2; 6], 3, &mut rng).unwrap();
        let b = Mps::random(&[2; 6], 3, &mut rng).unwrap();
        let (da, db) = (a.to_dense(DENSE_CAP).unwrap(), b.to_dense(DENSE_CAP).unwrap());
        let want = dense_inner(&da, &db);
        assert!((inner_product(&a, &b).unwrap() - want).norm() < 1e-11 * want.norm().max(1.0));
        let bil: C64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b).unwrap() - bil).norm() < 1e-11 * bil.norm().max(1.0));
        let short = Mps::random(&[2; 5], 3, &mut rng).unwrap();
        assert!(inner_product(&a, &short).is_err());
    }

    #[test]
    fn mpo_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = Mps::random(&[2; 6], 3, &mut rng).unwrap();
        let id = Mpo::identity(&[2; 6]).unwrap();
        let same = apply_mpo(&id, &psi).unwrap();
        for (a, b) in same.to_dense(DENSE_CAP).unwrap().iter().zip(psi.to_dense(DENSE_CAP).unwrap()) {
            assert!((a - b).norm() < 1e-12);
        }
        let x = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
        let flip = Mpo::from_local_ops(&vec![x; 5]).unwrap();
        let zero = Mps::from_product(&vec![vec![ONE, ZERO]; 5]).unwrap();
        let d = apply_mpo(&flip, &zero).unwrap().to_dense(DENSE_CAP).unwrap();
        assert_eq!(d[31], ONE);

        let op = random_mpo(6, 2, 2, &mut rng);
        let out = apply_mpo(&op, &psi).unwrap();
        assert_eq!(out.max_bond(), 6);
        let dense = op.to_dense(DENSE_CAP).unwrap() * nalgebra::DVector::from_vec(psi.to_dense(DENSE_CAP).unwrap());
        for (a, b) in out.to_dense(DENSE_CAP).unwrap().iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-11 * b.norm().max(1.0));
        }
        assert!(apply_mpo(&Mpo::identity(&[3; 6]).unwrap(), &psi).is_err());
    }

    #[test]
    fn mpo_composition_and_vectorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_mpo(4, 2, 2, &mut rng);
        let b = random_mpo(4, 2, 3, &mut rng);
        let ab = a.then(&b).unwrap();
        let want = b.to_dense(DENSE_CAP).unwrap() * a.to_dense(DENSE_CAP).unwrap();
        assert!((ab.to_dense(DENSE_CAP).unwrap() - &want).norm() < 1e-10 * want.norm());
        let back = Mpo::from_mps(&a.as_mps().unwrap(), &[2; 4], &[2; 4]).unwrap();
        assert_eq!(back, a);
        let at = a.transpose().unwrap().to_dense(DENSE_CAP).unwrap();
        assert!((at - a.to_dense(DENSE_CAP).unwrap().transpose()).norm() < 1e-12);
    }

    #[test]
    fn canonical_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = Mps::random(&[2; 8], 4, &mut rng).unwrap();
        let dense = psi.to_dense(DENSE_CAP).unwrap();
        for center in [0, 3, 7] {
            let can = canonicalize(&psi, center).unwrap();
            for i in 0..center {
                assert!(can.left_isometry_residual(i).unwrap() < 1e-12);
            }
            for i in center + 1..8 {
                assert!(can.right_isometry_residual(i).unwrap() < 1e-12);
            }
            let d2 = can.to_dense(DENSE_CAP).unwrap();
            let scale = dense.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for (a, b) in d2.iter().zip(&dense) {
                assert!((a - b).norm() < 1e-11 * scale);
            }
            let again = canonicalize(&can, center).unwrap().to_dense(DENSE_CAP).unwrap();
            for (a, b) in again.iter().zip(&d2) {
                assert!((a - b).norm() < 1e-12 * scale);
            }
        }
        assert!(canonicalize(&psi, 8).is_err());
    }

    #[test]
    fn svd_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psi = Mps::random(&[2; 6], 3, &mut rng).unwrap();
        let (same, w) = truncate_svd(&psi, 8).unwrap();
        assert!(w.abs() < 1e-12);
        assert!(1.0 - fidelity(&same, &psi).unwrap() < 1e-12);
        let (g1, w1) = truncate_svd(&ghz(4), 1).unwrap();
        assert!((fidelity(&g1, &ghz(4)).unwrap() - 0.5).abs() < 1e-12);
        assert!((w1 - 0.5).abs() < 1e-12);
        let psi = Mps::random(&[2; 8], 8, &mut rng).unwrap();
        let f1 = fidelity(&truncate_svd(&psi, 1).unwrap().0, &psi).unwrap();
        let f2 = fidelity(&truncate_svd(&psi, 2).unwrap().0, &psi).unwrap();
        assert!(f2 >= f1 - 1e-12);
        assert!(truncate_svd(&psi, 0).is_err());
    }

    #[test]
    fn variational_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let small = Mps::random(&[2; 6], 2, &mut rng).unwrap();
        let fit = truncate_variational(&small, 4, 10, 1e-12).unwrap();
        assert!((fit.fidelity - 1.0).abs() < 1e-10);
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let psi = Mps::random(&[2; 8], 8, &mut rng).unwrap();
            let (svd, _) = truncate_svd(&psi, 3).unwrap();
            let fs = fidelity(&svd, &psi).unwrap();
            let fit = truncate_variational(&psi, 3, 20, 1e-13).unwrap();
            let fv = fidelity(&fit.mps, &psi).unwrap();
            assert!(fv >= fs - 1e-12, "variational {fv} below svd {fs}");
            assert!((fit.fidelity - fv).abs() < 1e-10);
            assert!(fit.mps.max_bond() <= 3);
        }
    }

    /// Only the middle bond exceeds the target, so the Eckart-Young optimum at
    /// that cut is attainable and gives the exact best fidelity.
    #[test]
    fn variational_reaches_best_rank_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 8;
        let bonds = [1, 2, 4, 4, 8, 4, 4, 2, 1];
        let sites = (0..n)
            .map(|i| {
                let legs = vec![Leg::new(bond(i), bonds[i]), Leg::new(phys(i), 2), Leg::new(bond(i + 1), bonds[i + 1])];
                Tensor::from_fn(legs, |_| random_c64(&mut rng)).unwrap()
            })
            .collect();
        let psi = Mps::from_standard(sites).unwrap();
        let dense = psi.to_dense(DENSE_CAP).unwrap();
        let m = DMatrix::from_row_slice(16, 16, &dense);
        let s = linalg::svd(&m).unwrap().s;
        let total: f64 = s.iter().map(|x| x * x).sum();
        let bound: f64 = s[..4].iter().map(|x| x * x).sum::<f64>() / total;
        let fit = truncate_variational(&psi, 4, 50, 1e-14).unwrap();
        let f = dense_fid(&fit.mps.to_dense(DENSE_CAP).unwrap(), &dense);
        assert!((f - bound).abs() < 1e-6, "fidelity {f} vs bound {bound}");
    }

    #[test]
    fn dense_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<C64> = (0..2 * 3 * 2 * 2).map(|_| random_c64(&mut rng)).collect();
        let (m, w) = Mps::from_dense(&v, &[2, 3, 2, 2], None).unwrap();
        assert!(w < 1e-14);
        for (a, b) in m.to_dense(DENSE_CAP).unwrap().iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
        let big = Mps::from_product(&vec![vec![ONE, ZERO]; 21]).unwrap();
        assert!(matches!(big.to_dense(DENSE_CAP), Err(CtsError::CapExceeded { .. })));
    }
}
