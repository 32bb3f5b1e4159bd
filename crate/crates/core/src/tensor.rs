//! Dense complex tensors with labeled legs.
//!
//! A [`Tensor`] is a row-major array of `Complex64` together with an ordered
//! list of [`Leg`]s. Legs are identified by an opaque [`Label`]; contraction
//! pairs legs by label rather than by position, so callers never have to track
//! where a given index currently sits.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DMatrixView};
use num_complex::Complex64;

use crate::error::{CtsError, Result};
use crate::linalg;

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Opaque leg identifier.
///
/// The 64 bits are split into an 8-bit namespace tag and two 28-bit
/// coordinates, which is enough for every network built in this crate.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(pub u64);

const COORD_BITS: u32 = 28;
const COORD_MASK: u64 = (1 << COORD_BITS) - 1;

impl Label {
    pub const fn new(tag: u8, a: u32, b: u32) -> Label {
        Label(((tag as u64) << 56) | (((a as u64) & COORD_MASK) << COORD_BITS) | ((b as u64) & COORD_MASK))
    }

    pub const fn tag(self) -> u8 {
        (self.0 >> 56) as u8
    }

    pub const fn coords(self) -> (u32, u32) {
        (((self.0 >> COORD_BITS) & COORD_MASK) as u32, (self.0 & COORD_MASK) as u32)
    }

    /// Same coordinates, different namespace. Used to build bra copies of a
    /// network whose virtual legs must not collide with the ket.
    pub const fn with_tag(self, tag: u8) -> Label {
        Label((self.0 & !(0xff << 56)) | ((tag as u64) << 56))
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.coords();
        write!(f, "L{}({},{})", self.tag(), a, b)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Leg {
    pub label: Label,
    pub dim: usize,
}

impl Leg {
    pub const fn new(label: Label, dim: usize) -> Leg {
        Leg { label, dim }
    }
}

/// Pairs of legs to be summed over: the first label of each pair lives on the
/// left operand, the second on the right.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LegPairing {
    pub pairs: Vec<(Label, Label)>,
}

impl LegPairing {
    pub fn new(pairs: Vec<(Label, Label)>) -> Result<Self> {
        let mut seen_a = HashSet::new();
        let mut seen_b = HashSet::new();
        for &(a, b) in &pairs {
            if !seen_a.insert(a) {
                return Err(CtsError::DuplicateLabel(a));
            }
            if !seen_b.insert(b) {
                return Err(CtsError::DuplicateLabel(b));
            }
        }
        Ok(LegPairing { pairs })
    }

    /// Pair every label the two tensors have in common.
    pub fn shared(a: &Tensor, b: &Tensor) -> Self {
        let pairs = a
            .legs
            .iter()
            .filter(|l| b.position(l.label).is_some())
            .map(|l| (l.label, l.label))
            .collect();
        LegPairing { pairs }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    legs: Vec<Leg>,
    data: Vec<C64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("legs", &self.legs)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_unique(legs: &[Leg]) -> Result<()> {
    let mut seen = HashSet::with_capacity(legs.len());
    for leg in legs {
        if !seen.insert(leg.label) {
            return Err(CtsError::DuplicateLabel(leg.label));
        }
    }
    Ok(())
}

fn volume(legs: &[Leg]) -> usize {
    legs.iter().map(|l| l.dim).product()
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    strides
}

impl Tensor {
    pub fn new(legs: Vec<Leg>, data: Vec<C64>) -> Result<Self> {
        if legs.iter().any(|l| l.dim == 0) {
            return Err(CtsError::shape("leg of dimension zero"));
        }
        check_unique(&legs)?;
        if volume(&legs) != data.len() {
            return Err(CtsError::shape(format!(
                "leg dims {:?} need {} entries, got {}",
                legs.iter().map(|l| l.dim).collect::<Vec<_>>(),
                volume(&legs),
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CtsError::NonFinite);
        }
        Ok(Tensor { legs, data })
    }

    /// Internal constructor for data produced by this module's own kernels.
    pub(crate) fn from_parts(legs: Vec<Leg>, data: Vec<C64>) -> Self {
        debug_assert_eq!(volume(&legs), data.len());
        Tensor { legs, data }
    }

    pub fn zeros(legs: Vec<Leg>) -> Result<Self> {
        let n = volume(&legs);
        Tensor::new(legs, vec![ZERO; n])
    }

    pub fn scalar(value: C64) -> Self {
        Tensor { legs: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(legs: Vec<Leg>, mut f: impl FnMut(&[usize]) -> C64) -> Result<Self> {
        let dims: Vec<usize> = legs.iter().map(|l| l.dim).collect();
        let n = volume(&legs);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for k in (0..dims.len()).rev() {
                idx[k] += 1;
                if idx[k] < dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Tensor::new(legs, data)
    }

    /// A vector tensor with a single leg.
    pub fn vector(label: Label, data: Vec<C64>) -> Result<Self> {
        Tensor::new(vec![Leg::new(label, data.len())], data)
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn labels(&self) -> Vec<Label> {
        self.legs.iter().map(|l| l.label).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.legs.iter().map(|l| l.dim).collect()
    }

    pub fn rank(&self) -> usize {
        self.legs.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn position(&self, label: Label) -> Option<usize> {
        self.legs.iter().position(|l| l.label == label)
    }

    pub fn dim_of(&self, label: Label) -> Result<usize> {
        self.position(label)
            .map(|p| self.legs[p].dim)
            .ok_or(CtsError::UnknownLabel(label))
    }

    pub fn has(&self, label: Label) -> bool {
        self.position(label).is_some()
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.dims())
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.legs.len());
        let mut off = 0;
        for (i, leg) in idx.iter().zip(&self.legs) {
            debug_assert!(*i < leg.dim);
            off = off * leg.dim + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: C64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// The single entry of a rank-0 tensor (or of a tensor whose legs all have
    /// dimension one).
    pub fn to_scalar(&self) -> Result<C64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(CtsError::shape(format!("expected a scalar, got legs {:?}", self.legs)))
        }
    }

    pub fn relabel(&mut self, from: Label, to: Label) -> Result<()> {
        let p = self.position(from).ok_or(CtsError::UnknownLabel(from))?;
        if from != to && self.has(to) {
            return Err(CtsError::DuplicateLabel(to));
        }
        self.legs[p].label = to;
        Ok(())
    }

    /// Apply a label map to every leg. The map must stay injective on this
    /// tensor's labels.
    pub fn map_labels(&self, f: impl Fn(Label) -> Label) -> Result<Tensor> {
        let legs: Vec<Leg> = self.legs.iter().map(|l| Leg::new(f(l.label), l.dim)).collect();
        check_unique(&legs)?;
        Ok(Tensor { legs, data: self.data.clone() })
    }

    /// Reinterpret the data under a new leg list with the same total size.
    pub fn reshape(self, legs: Vec<Leg>) -> Result<Tensor> {
        check_unique(&legs)?;
        if volume(&legs) != self.data.len() || legs.iter().any(|l| l.dim == 0) {
            return Err(CtsError::shape(format!(
                "cannot reshape {} entries into {:?}",
                self.data.len(),
                legs
            )));
        }
        Ok(Tensor { legs, data: self.data })
    }

    /// Drop a leg of dimension one.
    pub fn squeeze(mut self, label: Label) -> Result<Tensor> {
        let p = self.position(label).ok_or(CtsError::UnknownLabel(label))?;
        if self.legs[p].dim != 1 {
            return Err(CtsError::shape(format!("cannot squeeze leg {label:?} of dim {}", self.legs[p].dim)));
        }
        self.legs.remove(p);
        Ok(self)
    }

    /// Insert a leg of dimension one at `pos`.
    pub fn unsqueeze(mut self, label: Label, pos: usize) -> Result<Tensor> {
        if self.has(label) {
            return Err(CtsError::DuplicateLabel(label));
        }
        if pos > self.legs.len() {
            return Err(CtsError::shape("unsqueeze position out of range"));
        }
        self.legs.insert(pos, Leg::new(label, 1));
        Ok(self)
    }

    pub fn permute(&self, order: &[Label]) -> Result<Tensor> {
        if order.len() != self.legs.len() {
            return Err(CtsError::NotAPermutation);
        }
        let mut perm = Vec::with_capacity(order.len());
        for &lab in order {
            let p = self.position(lab).ok_or(CtsError::NotAPermutation)?;
            if perm.contains(&p) {
                return Err(CtsError::NotAPermutation);
            }
            perm.push(p);
        }
        Ok(self.permute_positions(&perm))
    }

    /// `perm[k]` is the old position of the leg that ends up at position `k`.
    pub(crate) fn permute_positions(&self, perm: &[usize]) -> Tensor {
        let legs: Vec<Leg> = perm.iter().map(|&p| self.legs[p]).collect();
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Tensor { legs, data: self.data.clone() };
        }
        let old_strides = self.strides();
        let dims: Vec<usize> = legs.iter().map(|l| l.dim).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let n = self.data.len();
        let mut data = Vec::with_capacity(n);
        let rank = dims.len();
        if rank == 0 {
            return Tensor { legs, data: self.data.clone() };
        }
        // Innermost loop is unrolled over the last output leg.
        let last = rank - 1;
        let inner_dim = dims[last];
        let inner_stride = src_strides[last];
        let mut idx = vec![0usize; rank];
        let mut base = 0usize;
        let outer = n / inner_dim;
        for _ in 0..outer {
            let mut off = base;
            for _ in 0..inner_dim {
                data.push(self.data[off]);
                off += inner_stride;
            }
            for k in (0..last).rev() {
                idx[k] += 1;
                base += src_strides[k];
                if idx[k] < dims[k] {
                    break;
                }
                base -= src_strides[k] * dims[k];
                idx[k] = 0;
            }
        }
        Tensor { legs, data }
    }

    pub fn conj(&self) -> Tensor {
        Tensor { legs: self.legs.clone(), data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, factor: C64) -> Tensor {
        Tensor { legs: self.legs.clone(), data: self.data.iter().map(|z| z * factor).collect() }
    }

    pub fn scale_mut(&mut self, factor: C64) {
        for z in &mut self.data {
            *z *= factor;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Entrywise sum after aligning `other` to this tensor's leg order.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let other = other.permute(&self.labels())?;
        if other.dims() != self.dims() {
            return Err(CtsError::shape("add: leg dims differ"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { legs: self.legs.clone(), data })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-ONE))
    }

    /// Frobenius distance after aligning leg orders.
    pub fn distance(&self, other: &Tensor) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    /// Matricize: rows run over `rows` (row-major), columns over `cols`.
    pub fn to_matrix(&self, rows: &[Label], cols: &[Label]) -> Result<DMatrix<C64>> {
        let order: Vec<Label> = rows.iter().chain(cols).copied().collect();
        let p = self.permute(&order)?;
        let m: usize = rows.iter().map(|&l| self.dim_of(l)).product::<Result<usize>>()?;
        let n = p.data.len() / m.max(1);
        Ok(DMatrix::from_row_slice(m, n, &p.data))
    }

    /// Inverse of [`Tensor::to_matrix`].
    pub fn from_matrix(m: &DMatrix<C64>, row_legs: &[Leg], col_legs: &[Leg]) -> Result<Tensor> {
        if volume(row_legs) != m.nrows() || volume(col_legs) != m.ncols() {
            return Err(CtsError::shape("from_matrix: legs do not match matrix shape"));
        }
        let legs: Vec<Leg> = row_legs.iter().chain(col_legs).copied().collect();
        check_unique(&legs)?;
        // nalgebra is column-major; the transpose's storage is our row-major.
        let data = m.transpose().as_slice().to_vec();
        Tensor::new(legs, data)
    }
}

/// Multiply-add count of a contraction without performing it.
pub fn contract_cost(a: &Tensor, b: &Tensor, pairing: &LegPairing) -> Result<u64> {
    let plan = plan(a, b, pairing)?;
    Ok(plan.m as u64 * plan.k as u64 * plan.n as u64)
}

struct Plan {
    perm_a: Vec<usize>,
    perm_b: Vec<usize>,
    out_legs: Vec<Leg>,
    m: usize,
    k: usize,
    n: usize,
}

fn plan(a: &Tensor, b: &Tensor, pairing: &LegPairing) -> Result<Plan> {
    let mut paired_a = Vec::with_capacity(pairing.pairs.len());
    let mut paired_b = Vec::with_capacity(pairing.pairs.len());
    for &(la, lb) in &pairing.pairs {
        let pa = a.position(la).ok_or(CtsError::UnknownLabel(la))?;
        let pb = b.position(lb).ok_or(CtsError::UnknownLabel(lb))?;
        if paired_a.contains(&pa) {
            return Err(CtsError::DuplicateLabel(la));
        }
        if paired_b.contains(&pb) {
            return Err(CtsError::DuplicateLabel(lb));
        }
        if a.legs[pa].dim != b.legs[pb].dim {
            return Err(CtsError::DimensionMismatch {
                left: la,
                right: lb,
                left_dim: a.legs[pa].dim,
                right_dim: b.legs[pb].dim,
            });
        }
        paired_a.push(pa);
        paired_b.push(pb);
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|p| !paired_a.contains(p)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|p| !paired_b.contains(p)).collect();
    let out_legs: Vec<Leg> = free_a
        .iter()
        .map(|&p| a.legs[p])
        .chain(free_b.iter().map(|&p| b.legs[p]))
        .collect();
    check_unique(&out_legs)?;
    let m = free_a.iter().map(|&p| a.legs[p].dim).product();
    let k = paired_a.iter().map(|&p| a.legs[p].dim).product();
    let n = free_b.iter().map(|&p| b.legs[p].dim).product();
    let perm_a = free_a.into_iter().chain(paired_a).collect();
    let perm_b = paired_b.into_iter().chain(free_b).collect();
    Ok(Plan { perm_a, perm_b, out_legs, m, k, n })
}

/// Contract `a` with `b` over the paired legs.
///
/// The result carries the unpaired legs of `a` followed by the unpaired legs
/// of `b`, each in their original order.
pub fn contract(a: &Tensor, b: &Tensor, pairing: &LegPairing) -> Result<Tensor> {
    contract_with_cost(a, b, pairing).map(|(t, _)| t)
}

/// As [`contract`], also returning the multiply-add count.
pub fn contract_with_cost(a: &Tensor, b: &Tensor, pairing: &LegPairing) -> Result<(Tensor, u64)> {
    let plan = plan(a, b, pairing)?;
    let at = a.permute_positions(&plan.perm_a);
    let bt = b.permute_positions(&plan.perm_b);
    let (m, k, n) = (plan.m, plan.k, plan.n);
    // Row-major (m x k) storage is column-major (k x m): the transpose. The
    // product we want, row-major (m x n), is column-major C^T = B^T A^T.
    let a_t = DMatrixView::from_slice(&at.data, k, m);
    let b_t = DMatrixView::from_slice(&bt.data, n, k);
    let c_t = b_t * a_t;
    let data = c_t.as_slice().to_vec();
    let cost = m as u64 * k as u64 * n as u64;
    FLOPS.with(|f| f.set(f.get().wrapping_add(cost)));
    Ok((Tensor::from_parts(plan.out_legs, data), cost))
}

thread_local! {
    static FLOPS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Multiply-adds performed by [`contract`] on the current thread so far.
/// Callers take differences to meter a computation.
pub fn flop_counter() -> u64 {
    FLOPS.with(|f| f.get())
}

/// Contract over every label the two tensors share.
pub fn contract_shared(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    contract(a, b, &LegPairing::shared(a, b))
}

/// Outer (tensor) product.
pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    contract(a, b, &LegPairing::default())
}

/// Contract a sequence of tensors left to right, pairing shared labels at
/// each step. Intermediate sizes are checked against `cap` entries.
pub fn contract_chain(tensors: &[&Tensor], cap: usize) -> Result<(Tensor, u64)> {
    let mut iter = tensors.iter();
    let mut acc = match iter.next() {
        Some(t) => (*t).clone(),
        None => return Ok((Tensor::scalar(ONE), 0)),
    };
    let mut flops = 0u64;
    for t in iter {
        let pairing = LegPairing::shared(&acc, t);
        let p = plan(&acc, t, &pairing)?;
        let size = p.m as u128 * p.n as u128;
        if size > cap as u128 {
            return Err(CtsError::CapExceeded {
                what: format!("intermediate tensor with legs {:?}", p.out_legs),
                size,
                cap: cap as u128,
            });
        }
        let (next, c) = contract_with_cost(&acc, t, &pairing)?;
        flops += c;
        acc = next;
    }
    Ok((acc, flops))
}

/// Result of [`svd_split`]: `a ≈ u · diag(s) · v` with the new bond carried by
/// `bond` on both factors.
#[derive(Clone, Debug)]
pub struct SvdSplit {
    pub u: Tensor,
    pub singular_values: Vec<f64>,
    pub v: Tensor,
    /// Sum of squared singular values that were dropped.
    pub discarded_weight: f64,
}

impl SvdSplit {
    /// `u` with the singular values absorbed.
    pub fn us(&self) -> Tensor {
        absorb(&self.u, self.u.rank() - 1, &self.singular_values)
    }

    /// `v` with the singular values absorbed.
    pub fn sv(&self) -> Tensor {
        absorb(&self.v, 0, &self.singular_values)
    }
}

fn absorb(t: &Tensor, pos: usize, s: &[f64]) -> Tensor {
    let strides = t.strides();
    let dim = t.legs[pos].dim;
    let stride = strides[pos];
    let data = t
        .data
        .iter()
        .enumerate()
        .map(|(i, z)| z * s[(i / stride) % dim])
        .collect();
    Tensor::from_parts(t.legs.clone(), data)
}

/// Split `a` into `u` (legs `left`, then `bond`) and `v` (`bond`, then the
/// remaining legs), keeping at most `chi` singular values.
pub fn svd_split(a: &Tensor, left: &[Label], chi: Option<usize>, bond: Label) -> Result<SvdSplit> {
    if left.is_empty() || left.len() >= a.rank() {
        return Err(CtsError::InvalidSplit(format!(
            "left set must be a nonempty proper subset of {} legs",
            a.rank()
        )));
    }
    for &l in left {
        if !a.has(l) {
            return Err(CtsError::UnknownLabel(l));
        }
    }
    if a.has(bond) {
        return Err(CtsError::DuplicateLabel(bond));
    }
    if chi == Some(0) {
        return Err(CtsError::invalid("chi must be positive"));
    }
    let right: Vec<Label> = a.labels().into_iter().filter(|l| !left.contains(l)).collect();
    let row_legs: Vec<Leg> = left.iter().map(|&l| a.legs[a.position(l).unwrap()]).collect();
    let col_legs: Vec<Leg> = right.iter().map(|&l| a.legs[a.position(l).unwrap()]).collect();
    let m = a.to_matrix(left, &right)?;
    let svd = linalg::svd(&m)?;
    let full = svd.s.len();
    let keep = chi.map_or(full, |c| c.min(full)).max(1);
    let discarded_weight = svd.s[keep..].iter().map(|s| s * s).sum();
    let u = svd.u.columns(0, keep).into_owned();
    let vt = svd.vt.rows(0, keep).into_owned();
    let bond_leg = Leg::new(bond, keep);
    let u = Tensor::from_matrix(&u, &row_legs, &[bond_leg])?;
    let v = Tensor::from_matrix(&vt, &[bond_leg], &col_legs)?;
    Ok(SvdSplit { u, singular_values: svd.s[..keep].to_vec(), v, discarded_weight })
}
