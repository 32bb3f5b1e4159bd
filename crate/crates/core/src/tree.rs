//! Tree tensor networks whose rank-3 tensors may be replaced by triangle
//! loops, with exact contraction and local generalized-eigenvalue ground
//! state updates.
//!
//! Node tensors carry their legs in the order `[physical?, child bonds…,
//! parent bond?]`. A loop replaces a rank-3 tensor `A` by
//! `A_{a₁a₂a₃} = Σ_{αβγ} B¹_{a₁αβ} B²_{a₂αγ} B³_{a₃βγ}`.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CtsError, Result};
use crate::linalg::{generalized_min_eig, solve_psd, svd};
use crate::mps::random_c64;
use crate::tensor::{contract_chain, contract_shared, Label, Leg, Tensor, C64, ONE, ZERO};
use crate::trotter::IsingModel;

const TAG_BOND: u8 = 20;
const TAG_PHYS: u8 = 21;
const TAG_BRA_BOND: u8 = 22;
const TAG_LOOP: u8 = 23;
const TAG_BRA_LOOP: u8 = 24;
const TAG_BRA_PHYS: u8 = 25;

/// Largest intermediate of exact tree contractions.
pub const TREE_CAP: usize = 1 << 24;

/// Bond between node `child` and its parent.
pub fn tree_bond(child: usize) -> Label {
    Label::new(TAG_BOND, child as u32, 0)
}

pub fn tree_phys(site: usize) -> Label {
    Label::new(TAG_PHYS, site as u32, 0)
}

/// Internal loop leg `k` (0 = α, 1 = β, 2 = γ) of the loop at `node`.
pub fn loop_leg(node: usize, k: usize) -> Label {
    Label::new(TAG_LOOP, node as u32, k as u32)
}

const FREE_LOOP: usize = (1 << 28) - 1;

fn bra(l: Label) -> Label {
    match l.tag() {
        TAG_BOND => l.with_tag(TAG_BRA_BOND),
        TAG_PHYS => l.with_tag(TAG_BRA_PHYS),
        TAG_LOOP => l.with_tag(TAG_BRA_LOOP),
        _ => l,
    }
}

fn bra_tensor(t: &Tensor) -> Result<Tensor> {
    t.conj().map_labels(bra)
}

/// Three tensors replacing one rank-3 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleLoop {
    /// `B¹[a₁, α, β]`, `B²[a₂, α, γ]`, `B³[a₃, β, γ]`.
    pub b: [Tensor; 3],
}

/// Internal legs of `B^k`.
const INTERNAL: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

impl TriangleLoop {
    fn random(ext: &[Leg], node: usize, dims: [usize; 3], rng: &mut impl Rng) -> Result<Self> {
        if ext.len() != 3 || dims.iter().any(|&d| d == 0) {
            return Err(CtsError::invalid("a triangle needs three external legs and positive internal dims"));
        }
        let make = |k: usize, rng: &mut dyn rand::RngCore| {
            let [p, q] = INTERNAL[k];
            let legs = vec![ext[k], Leg::new(loop_leg(node, p), dims[p]), Leg::new(loop_leg(node, q), dims[q])];
            Tensor::from_fn(legs, |_| random_c64(rng))
        };
        Ok(TriangleLoop { b: [make(0, rng)?, make(1, rng)?, make(2, rng)?] })
    }

    pub fn external(&self) -> [Leg; 3] {
        [self.b[0].legs()[0], self.b[1].legs()[0], self.b[2].legs()[0]]
    }

    pub fn internal_dims(&self) -> [usize; 3] {
        let d0 = self.b[0].dims();
        let d1 = self.b[1].dims();
        [d0[1], d0[2], d1[2]]
    }

    /// The rank-3 tensor the loop stands for, legs in external order.
    pub fn contract(&self) -> Result<Tensor> {
        let ext: Vec<Label> = self.external().iter().map(|l| l.label).collect();
        contract_shared(&contract_shared(&self.b[0], &self.b[1])?, &self.b[2])?.permute(&ext)
    }

    fn relabel(&self, from: usize, to: usize) -> Result<TriangleLoop> {
        let f = |l: Label| if l.tag() == TAG_LOOP && l.coords().0 as usize == from { Label::new(TAG_LOOP, to as u32, l.coords().1) } else { l };
        Ok(TriangleLoop { b: [self.b[0].map_labels(f)?, self.b[1].map_labels(f)?, self.b[2].map_labels(f)?] })
    }

    pub fn parameter_count(&self) -> usize {
        self.b.iter().map(|t| 2 * t.len()).sum()
    }

    /// Make the other two tensors isometric onto their legs towards `B^k`,
    /// pushing the factors into `B^k`. The contraction is unchanged.
    fn gauge_towards(&mut self, k: usize) -> Result<()> {
        for m in (0..3).filter(|&m| m != k) {
            let shared = self.b[m].labels().into_iter().find(|&l| l.tag() == TAG_LOOP && self.b[k].has(l)).expect("loop legs pair up");
            let (q, r, tmp) = qr_on(&self.b[m], shared)?;
            let Some(q) = q else { continue };
            self.b[m] = q;
            let order = self.b[k].labels();
            self.b[k] = contract_shared(&r, &self.b[k])?.map_labels(|l| if l == tmp { shared } else { l })?.permute(&order)?;
        }
        Ok(())
    }
}

/// Thin QR of `t` with `bond` as the column leg. Returns the isometry with
/// `t`'s legs and `R` with legs `[tmp, bond]`, or `None` when the row space
/// is smaller than the bond.
fn qr_on(t: &Tensor, bond: Label) -> Result<(Option<Tensor>, Tensor, Label)> {
    let tmp = Label::new(0, (1 << 28) - 2, 0);
    let k = t.dim_of(bond)?;
    let rows: Vec<Leg> = t.legs().iter().copied().filter(|l| l.label != bond).collect();
    let row_labels: Vec<Label> = rows.iter().map(|l| l.label).collect();
    let m = t.to_matrix(&row_labels, &[bond])?;
    if m.nrows() < k {
        return Ok((None, Tensor::scalar(ONE), tmp));
    }
    let (q, r) = crate::linalg::qr(&m);
    let q = Tensor::from_matrix(&q, &rows, &[Leg::new(bond, k)])?.permute(&t.labels())?;
    let r = Tensor::from_matrix(&r, &[Leg::new(tmp, k)], &[Leg::new(bond, k)])?;
    Ok((Some(q), r, tmp))
}

#[derive(Clone, Debug)]
pub struct TriangleFit {
    pub triangle: TriangleLoop,
    /// `‖A − Â‖ / ‖A‖`.
    pub error: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Fit a triangle loop with internal dims `(α, β, γ)` to `a` by alternating
/// least squares from seeded random tensors.
pub fn expand_triangle(a: &Tensor, dims: [usize; 3], max_sweeps: usize, seed: u64) -> Result<TriangleFit> {
    if a.rank() != 3 {
        return Err(CtsError::shape(format!("triangle expansion needs a rank-3 tensor, got rank {}", a.rank())));
    }
    let norm = a.norm();
    if norm == 0.0 {
        return Err(CtsError::ZeroNorm("tensor to expand".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = [svd_start(a, dims, &mut rng)?, TriangleLoop::random(a.legs(), FREE_LOOP, dims, &mut rng)?];
    let mut best: Option<TriangleFit> = None;
    for tri in starts {
        let fit = als(a, tri, max_sweeps)?;
        if best.as_ref().is_none_or(|b| fit.error < b.error) {
            best = Some(fit);
        }
    }
    Ok(best.expect("two starts"))
}

/// Leading left singular vectors of each unfolding, padded with noise.
fn svd_start(a: &Tensor, dims: [usize; 3], rng: &mut impl Rng) -> Result<TriangleLoop> {
    let mut tri = TriangleLoop::random(a.legs(), FREE_LOOP, dims, rng)?;
    let labels = a.labels();
    for k in 0..3 {
        let rest: Vec<Label> = labels.iter().copied().filter(|&l| l != labels[k]).collect();
        let u = svd(&a.to_matrix(&[labels[k]], &rest)?)?.u;
        let [p, q] = INTERNAL[k];
        let cols = dims[p] * dims[q];
        let b = &tri.b[k];
        let data: Vec<C64> = (0..b.len())
            .map(|i| {
                let (row, col) = (i / cols, i % cols);
                if col < u.ncols() { u[(row, col)] } else { b.data()[i] * 1e-3 }
            })
            .collect();
        tri.b[k] = Tensor::new(b.legs().to_vec(), data)?;
    }
    Ok(tri)
}

fn als(a: &Tensor, mut tri: TriangleLoop, max_sweeps: usize) -> Result<TriangleFit> {
    let mut err = reconstruction_error(a, &tri)?;
    let mut sweeps = 0;
    let mut converged = err < 1e-14;
    while sweeps < max_sweeps && !converged {
        sweeps += 1;
        for k in 0..3 {
            tri.b[k] = ls_update(a, &tri, k)?;
        }
        let next = reconstruction_error(a, &tri)?;
        converged = (err - next).abs() < 1e-14 || next < 1e-14;
        err = next;
    }
    Ok(TriangleFit { triangle: tri, error: err, sweeps, converged })
}

fn reconstruction_error(a: &Tensor, tri: &TriangleLoop) -> Result<f64> {
    Ok(a.distance(&tri.contract()?)? / a.norm())
}

/// Least-squares optimal `B^k` with the other two fixed.
fn ls_update(a: &Tensor, tri: &TriangleLoop, k: usize) -> Result<Tensor> {
    let others: Vec<usize> = (0..3).filter(|&m| m != k).collect();
    let m = contract_shared(&tri.b[others[0]], &tri.b[others[1]])?;
    let bk = &tri.b[k];
    let ext_k = bk.legs()[0];
    let internal: Vec<Leg> = bk.legs()[1..].to_vec();
    let internal_labels: Vec<Label> = internal.iter().map(|l| l.label).collect();
    let other_ext: Vec<Label> = others.iter().map(|&o| tri.b[o].legs()[0].label).collect();
    let am = a.to_matrix(&[ext_k.label], &other_ext)?;
    let mm = m.to_matrix(&internal_labels, &other_ext)?;
    // minimise ‖B·M − A‖: (M M†) B† = M A†
    let gram = &mm * mm.adjoint();
    let rhs = &mm * am.adjoint();
    let mut bt = DMatrix::zeros(gram.nrows(), rhs.ncols());
    for c in 0..rhs.ncols() {
        let (x, _) = solve_psd(&gram, &DVector::from(rhs.column(c).clone_owned()), 1e-14)?;
        bt.set_column(c, &x);
    }
    Tensor::from_matrix(&bt.adjoint(), &[ext_k], &internal)
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeTensor {
    Plain(Tensor),
    Loop(TriangleLoop),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub site: Option<usize>,
    pub tensor: NodeTensor,
}

/// A tree of rank ≤ 3 tensors with physical legs on some nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeNetwork {
    nodes: Vec<TreeNode>,
    root: usize,
    n_sites: usize,
}

impl TreeNetwork {
    /// Build from parent pointers, physical site assignments and positional
    /// tensors whose legs follow `[physical?, children…, parent?]`, children
    /// in increasing node order.
    pub fn from_parents(parents: &[Option<usize>], sites: &[Option<usize>], tensors: Vec<Tensor>) -> Result<Self> {
        let n = parents.len();
        if n == 0 || sites.len() != n || tensors.len() != n {
            return Err(CtsError::shape("tree: parents, sites and tensors must have equal nonzero length"));
        }
        let roots: Vec<usize> = (0..n).filter(|&k| parents[k].is_none()).collect();
        if roots.len() != 1 {
            return Err(CtsError::invalid(format!("tree needs exactly one root, found {}", roots.len())));
        }
        let mut children = vec![Vec::new(); n];
        for (k, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == k {
                    return Err(CtsError::invalid(format!("node {k} has invalid parent {p}")));
                }
                children[p].push(k);
            }
        }
        for k in 0..n {
            let mut cur = k;
            for _ in 0..=n {
                match parents[cur] {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            if parents[cur].is_some() {
                return Err(CtsError::invalid("parent pointers contain a cycle"));
            }
        }
        let mut nodes = Vec::with_capacity(n);
        for (k, t) in tensors.into_iter().enumerate() {
            let labels = node_labels(parents[k], &children[k], sites[k], k);
            if t.rank() != labels.len() {
                return Err(CtsError::shape(format!("node {k}: tensor rank {} but {} legs expected", t.rank(), labels.len())));
            }
            let legs = labels.iter().zip(t.dims()).map(|(&l, d)| Leg::new(l, d)).collect();
            nodes.push(TreeNode { parent: parents[k], children: children[k].clone(), site: sites[k], tensor: NodeTensor::Plain(t.reshape(legs)?) });
        }
        let tree = TreeNetwork { nodes, root: roots[0], n_sites: sites.iter().flatten().count() };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for node in &self.nodes {
            if let Some(s) = node.site {
                if s >= self.n_sites || !seen.insert(s) {
                    return Err(CtsError::invalid("physical sites must be 0..n without repeats"));
                }
            }
        }
        for (k, node) in self.nodes.iter().enumerate() {
            let t = self.ket(k)?;
            if t.rank() > 3 {
                return Err(CtsError::invalid(format!("node {k} has degree {} > 3", t.rank())));
            }
            if let Some(p) = node.parent {
                let mine = t.dim_of(tree_bond(k))?;
                let theirs = self.ket(p)?.dim_of(tree_bond(k))?;
                if mine != theirs {
                    return Err(CtsError::DimensionMismatch { left: tree_bond(k), right: tree_bond(k), left_dim: mine, right_dim: theirs });
                }
            }
        }
        Ok(())
    }

    /// Balanced binary tree over `n_sites` physical leaves of dimension `d`;
    /// the bond above a subtree of `k` leaves is `min(max_bond, d^k, d^(n-k))`.
    pub fn balanced(n_sites: usize, d: usize, max_bond: usize, seed: u64) -> Result<Self> {
        if n_sites == 0 || d == 0 || max_bond == 0 {
            return Err(CtsError::invalid("balanced tree needs n_sites, d, max_bond >= 1"));
        }
        let mut parents = Vec::new();
        let mut sites = Vec::new();
        let mut span = Vec::new();
        fn build(lo: usize, hi: usize, parent: Option<usize>, parents: &mut Vec<Option<usize>>, sites: &mut Vec<Option<usize>>, span: &mut Vec<usize>) {
            let me = parents.len();
            parents.push(parent);
            span.push(hi - lo);
            if hi - lo == 1 {
                sites.push(Some(lo));
            } else {
                sites.push(None);
                let mid = lo + (hi - lo).div_ceil(2);
                build(lo, mid, Some(me), parents, sites, span);
                build(mid, hi, Some(me), parents, sites, span);
            }
        }
        build(0, n_sites, None, &mut parents, &mut sites, &mut span);
        let pow = |k: usize| (d as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
        let bond = |k: usize| (max_bond as u128).min(pow(span[k])).min(pow(n_sites - span[k])) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(parents.len());
        for k in 0..parents.len() {
            let mut dims = Vec::new();
            if sites[k].is_some() {
                dims.push(d);
            }
            for c in (0..parents.len()).filter(|&c| parents[c] == Some(k)) {
                dims.push(bond(c));
            }
            if parents[k].is_some() {
                dims.push(bond(k));
            }
            let legs = dims.iter().enumerate().map(|(i, &dd)| Leg::new(Label::new(0, i as u32, 0), dd)).collect();
            tensors.push(Tensor::from_fn(legs, |_| random_c64(&mut rng))?);
        }
        TreeNetwork::from_parents(&parents, &sites, tensors)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn phys_dims(&self) -> Result<Vec<usize>> {
        let mut dims = vec![0; self.n_sites];
        for (k, node) in self.nodes.iter().enumerate() {
            if let Some(s) = node.site {
                dims[s] = self.ket(k)?.dim_of(tree_phys(s))?;
            }
        }
        Ok(dims)
    }

    /// The rank-≤3 tensor at node `k` (loops contracted).
    pub fn ket(&self, k: usize) -> Result<Tensor> {
        match &self.nodes[k].tensor {
            NodeTensor::Plain(t) => Ok(t.clone()),
            NodeTensor::Loop(l) => l.contract(),
        }
    }

    pub fn set_plain(&mut self, k: usize, t: Tensor) -> Result<()> {
        let old = self.ket(k)?;
        if old.legs() != t.legs() {
            return Err(CtsError::shape(format!("node {k}: replacement legs differ")));
        }
        self.nodes[k].tensor = NodeTensor::Plain(t);
        Ok(())
    }

    /// Replace every rank-3 node by a triangle fitted to its tensor.
    pub fn with_loops(&self, dims: [usize; 3], max_sweeps: usize, seed: u64) -> Result<(TreeNetwork, f64)> {
        let mut out = self.clone();
        let mut worst: f64 = 0.0;
        for k in 0..self.nodes.len() {
            let a = self.ket(k)?;
            if a.rank() == 3 {
                let fit = expand_triangle(&a, dims, max_sweeps, seed.wrapping_add(k as u64))?;
                worst = worst.max(fit.error);
                out.nodes[k].tensor = NodeTensor::Loop(fit.triangle.relabel(FREE_LOOP, k)?);
            }
        }
        Ok((out, worst))
    }

    /// Replace every rank-3 node by a random triangle.
    pub fn with_random_loops(&self, dims: [usize; 3], seed: u64) -> Result<TreeNetwork> {
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..self.nodes.len() {
            let a = self.ket(k)?;
            if a.rank() == 3 {
                out.nodes[k].tensor = NodeTensor::Loop(TriangleLoop::random(a.legs(), k, dims, &mut rng)?);
            }
        }
        Ok(out)
    }

    pub fn parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.tensor {
                NodeTensor::Plain(t) => 2 * t.len(),
                NodeTensor::Loop(l) => l.parameter_count(),
            })
            .sum()
    }

    fn post_order(&self) -> Vec<usize> {
        fn walk(t: &TreeNetwork, k: usize, out: &mut Vec<usize>) {
            for &c in &t.nodes[k].children {
                walk(t, c, out);
            }
            out.push(k);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(self, self.root, &mut out);
        out
    }

    /// Dense state over the physical legs in site order, contracted leaves
    /// to root.
    pub fn contract_state(&self, cap: usize) -> Result<Vec<C64>> {
        let kets = self.post_order().into_iter().map(|k| self.ket(k)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = kets.iter().collect();
        let (t, _) = contract_chain(&refs, cap)?;
        let order: Vec<Label> = (0..self.n_sites).map(tree_phys).collect();
        Ok(t.permute(&order)?.into_data())
    }

    fn neighbours(&self, k: usize) -> Vec<usize> {
        let mut v = self.nodes[k].children.clone();
        v.extend(self.nodes[k].parent);
        v
    }

    /// Exact regauging that makes every plain node isometric towards `x`.
    /// Loop nodes are left as they are and absorb the factors sent to them.
    pub fn gauge_towards(&mut self, x: usize) -> Result<()> {
        for y in self.neighbours(x) {
            self.gauge_branch(y, x)?;
        }
        Ok(())
    }

    fn gauge_branch(&mut self, y: usize, x: usize) -> Result<()> {
        for z in self.neighbours(y) {
            if z != x {
                self.gauge_branch(z, y)?;
            }
        }
        let NodeTensor::Plain(t) = &self.nodes[y].tensor else {
            return Ok(());
        };
        let bond = if self.nodes[y].parent == Some(x) { tree_bond(y) } else { tree_bond(x) };
        let (q, r, tmp) = qr_on(t, bond)?;
        let Some(q) = q else { return Ok(()) };
        self.nodes[y].tensor = NodeTensor::Plain(q);
        let absorb = |t: &Tensor| -> Result<Tensor> {
            let order = t.labels();
            contract_shared(&r, t)?.map_labels(|l| if l == tmp { bond } else { l })?.permute(&order)
        };
        match &mut self.nodes[x].tensor {
            NodeTensor::Plain(t) => *t = absorb(t)?,
            NodeTensor::Loop(tri) => {
                let part = tri.b.iter().position(|b| b.legs()[0].label == bond).expect("loop carries the bond");
                tri.b[part] = absorb(&tri.b[part])?;
            }
        }
        Ok(())
    }

    /// Double layer of the part of the tree behind `y` as seen from `x`,
    /// with operators inserted at physical sites. Legs: ket and bra copies
    /// of the bond between `x` and `y`.
    fn branch(&self, y: usize, x: usize, ops: &ProductOp, cache: &mut BranchCache) -> Result<Tensor> {
        let untouched = !ops.ops.iter().any(|(s, _)| self.branch_sites(y, x, cache).contains(s));
        if untouched {
            if let Some(t) = cache.plain.get(&(y, x)) {
                return Ok(t.clone());
            }
        }
        let mut parts = Vec::new();
        for z in self.neighbours(y) {
            if z != x {
                parts.push(self.branch(z, y, ops, cache)?);
            }
        }
        let ket = self.ket(y)?;
        parts.push(ket.clone());
        if let Some(s) = self.nodes[y].site {
            parts.push(ops.tensor(s, ket.dim_of(tree_phys(s))?)?);
        }
        parts.push(bra_tensor(&ket)?);
        let refs: Vec<&Tensor> = parts.iter().collect();
        let t = contract_chain(&refs, TREE_CAP)?.0;
        if untouched {
            cache.plain.insert((y, x), t.clone());
        }
        Ok(t)
    }

    fn branch_sites(&self, y: usize, x: usize, cache: &mut BranchCache) -> Vec<usize> {
        if let Some(v) = cache.sites.get(&(y, x)) {
            return v.clone();
        }
        let mut v: Vec<usize> = self.nodes[y].site.into_iter().collect();
        for z in self.neighbours(y) {
            if z != x {
                v.extend(self.branch_sites(z, y, cache));
            }
        }
        cache.sites.insert((y, x), v.clone());
        v
    }

    /// Everything but node `x`: legs are the ket and bra copies of `x`'s legs.
    fn environment(&self, x: usize, ops: &ProductOp, cache: &mut BranchCache) -> Result<Tensor> {
        let mut env = Tensor::scalar(ONE);
        for y in self.neighbours(x) {
            env = crate::tensor::outer(&env, &self.branch(y, x, ops, cache)?)?;
        }
        if let Some(s) = self.nodes[x].site {
            let d = self.ket(x)?.dim_of(tree_phys(s))?;
            env = crate::tensor::outer(&env, &ops.tensor(s, d)?)?;
        }
        Ok(env)
    }

    /// `⟨ψ|P|ψ⟩` for a product operator.
    fn closed(&self, ops: &ProductOp, cache: &mut BranchCache) -> Result<C64> {
        let ket = self.ket(self.root)?;
        let env = self.environment(self.root, ops, cache)?;
        contract_shared(&contract_shared(&env, &ket)?, &bra_tensor(&ket)?)?.to_scalar()
    }

    pub fn norm_sqr(&self) -> Result<f64> {
        Ok(self.closed(&ProductOp::identity(), &mut BranchCache::default())?.re)
    }

    /// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩` by exact tree contraction.
    pub fn energy(&self, h: &Hamiltonian) -> Result<f64> {
        let mut cache = BranchCache::default();
        let norm = self.closed(&ProductOp::identity(), &mut cache)?.re;
        if norm == 0.0 {
            return Err(CtsError::ZeroNorm("tree state".into()));
        }
        let mut e = ZERO;
        for p in h.products()? {
            e += p.coeff * self.closed(&p, &mut cache)?;
        }
        Ok(e.re / norm)
    }

    /// Hamiltonian and Gram environments of node `x`.
    fn node_envs(&self, x: usize, h: &Hamiltonian) -> Result<Envs> {
        let mut cache = BranchCache::default();
        let gram = self.environment(x, &ProductOp::identity(), &mut cache)?;
        let mut energy = gram.scale(ZERO);
        for p in h.products()? {
            energy = energy.add(&self.environment(x, &p, &mut cache)?.scale(p.coeff))?;
        }
        Ok(Envs { energy, gram })
    }
}

/// Operator-free branches and branch site sets, valid for one network state.
#[derive(Default)]
struct BranchCache {
    plain: HashMap<(usize, usize), Tensor>,
    sites: HashMap<(usize, usize), Vec<usize>>,
}

struct Envs {
    energy: Tensor,
    gram: Tensor,
}

fn node_labels(parent: Option<usize>, children: &[usize], site: Option<usize>, me: usize) -> Vec<Label> {
    let mut v = Vec::new();
    v.extend(site.map(tree_phys));
    v.extend(children.iter().map(|&c| tree_bond(c)));
    if parent.is_some() {
        v.push(tree_bond(me));
    }
    v
}

/// `c · ⊗_s O_s` with identity on unlisted sites.
#[derive(Clone, Debug)]
struct ProductOp {
    coeff: C64,
    ops: Vec<(usize, DMatrix<C64>)>,
}

impl ProductOp {
    fn identity() -> Self {
        ProductOp { coeff: ONE, ops: Vec::new() }
    }

    /// Operator at `site` with legs `[bra phys, phys]`.
    fn tensor(&self, site: usize, d: usize) -> Result<Tensor> {
        let legs = vec![Leg::new(bra(tree_phys(site)), d), Leg::new(tree_phys(site), d)];
        match self.ops.iter().find(|(s, _)| *s == site) {
            Some((_, m)) => {
                if m.nrows() != d || m.ncols() != d {
                    return Err(CtsError::shape(format!("operator on site {site} is not {d}x{d}")));
                }
                Tensor::from_fn(legs, |x| m[(x[0], x[1])])
            }
            None => Tensor::from_fn(legs, |x| if x[0] == x[1] { ONE } else { ZERO }),
        }
    }
}

/// A local term: a dense matrix on one or two sites, rows indexing the
/// output configuration with the first listed site most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub sites: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Term {
    pub fn new(sites: Vec<usize>, m: &DMatrix<C64>) -> Self {
        let data: Vec<C64> = m.transpose().as_slice().to_vec();
        Term { sites, re: data.iter().map(|z| z.re).collect(), im: data.iter().map(|z| z.im).collect() }
    }

    pub fn matrix(&self) -> Result<DMatrix<C64>> {
        let len = self.re.len();
        let dim = (len as f64).sqrt().round() as usize;
        if dim * dim != len || self.im.len() != len {
            return Err(CtsError::shape("term matrix is not square"));
        }
        Ok(DMatrix::from_row_iterator(dim, dim, self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hamiltonian {
    pub n_sites: usize,
    pub terms: Vec<Term>,
}

fn pauli(k: u8) -> DMatrix<C64> {
    let (o, z, i) = (ONE, ZERO, C64::new(0.0, 1.0));
    match k {
        b'x' => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        b'y' => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        b'z' => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => DMatrix::identity(2, 2),
    }
}

impl Hamiltonian {
    pub fn new(n_sites: usize, terms: Vec<Term>) -> Result<Self> {
        let h = Hamiltonian { n_sites, terms };
        h.products()?;
        Ok(h)
    }

    /// `Σ Z_a Z_{a+1} + B Σ X_a`.
    pub fn ising(model: &IsingModel) -> Self {
        let n = model.n_sites;
        let zz = pauli(b'z').kronecker(&pauli(b'z'));
        let mut terms: Vec<Term> = (0..n.saturating_sub(1)).map(|a| Term::new(vec![a, a + 1], &zz)).collect();
        terms.extend((0..n).map(|a| Term::new(vec![a], &(pauli(b'x') * C64::new(model.b_field, 0.0)))));
        Hamiltonian { n_sites: n, terms }
    }

    /// `Σ_a c Z_a`.
    pub fn field_z(n_sites: usize, c: f64) -> Self {
        Hamiltonian { n_sites, terms: (0..n_sites).map(|a| Term::new(vec![a], &(pauli(b'z') * C64::new(c, 0.0)))).collect() }
    }

    /// Terms split into products of single-site operators; two-site terms
    /// go through their operator Schmidt decomposition.
    fn products(&self) -> Result<Vec<ProductOp>> {
        let mut out = Vec::new();
        for t in &self.terms {
            let m = t.matrix()?;
            if t.sites.iter().any(|&s| s >= self.n_sites) {
                return Err(CtsError::invalid("term acts outside the chain"));
            }
            match t.sites.as_slice() {
                [s] => out.push(ProductOp { coeff: ONE, ops: vec![(*s, m)] }),
                [a, b] if a != b => {
                    let d2 = m.nrows();
                    let d = (d2 as f64).sqrt().round() as usize;
                    if d * d != d2 {
                        return Err(CtsError::shape("two-site term dimension is not a square"));
                    }
                    // R[(s_a s_a'), (s_b s_b')] = M[(s_a s_b), (s_a' s_b')]
                    let r = DMatrix::from_fn(d * d, d * d, |p, q| m[((p / d) * d + q / d, (p % d) * d + q % d)]);
                    let dec = svd(&r)?;
                    let top = dec.s.first().copied().unwrap_or(0.0);
                    for k in 0..dec.s.len() {
                        if dec.s[k] <= 1e-14 * top {
                            continue;
                        }
                        let oa = DMatrix::from_fn(d, d, |i, j| dec.u[(i * d + j, k)] * dec.s[k]);
                        let ob = DMatrix::from_fn(d, d, |i, j| dec.vt[(k, i * d + j)]);
                        out.push(ProductOp { coeff: ONE, ops: vec![(*a, oa), (*b, ob)] });
                    }
                }
                _ => return Err(CtsError::invalid("terms act on one or two distinct sites")),
            }
        }
        Ok(out)
    }

    /// Dense matrix (site 0 most significant), for checks on small chains.
    pub fn dense(&self, d: usize) -> Result<DMatrix<C64>> {
        let dim = (d as u128).pow(self.n_sites as u32);
        if dim > 1 << 12 {
            return Err(CtsError::CapExceeded { what: "dense Hamiltonian".into(), size: dim, cap: 1 << 12 });
        }
        let dim = dim as usize;
        let n = self.n_sites;
        let digit = |x: usize, s: usize| (x / d.pow((n - 1 - s) as u32)) % d;
        let mut h = DMatrix::zeros(dim, dim);
        for p in self.products()? {
            for r in 0..dim {
                for c in 0..dim {
                    let mut v = p.coeff;
                    for s in 0..n {
                        let (i, j) = (digit(r, s), digit(c, s));
                        match p.ops.iter().find(|(site, _)| *site == s) {
                            Some((_, m)) => v *= m[(i, j)],
                            None if i != j => v = ZERO,
                            None => {}
                        }
                        if v == ZERO {
                            break;
                        }
                    }
                    h[(r, c)] += v;
                }
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeConfig {
    pub max_sweeps: usize,
    /// Stop when a sweep lowers the energy by less than this.
    pub tol: f64,
    /// Passes over the three tensors of a loop per visit.
    pub loop_sweeps: usize,
    /// Reuse the environment of a loop across its inner passes.
    pub cache_loop_env: bool,
    /// Gram eigenvalues below this fraction of the largest are projected out.
    pub rel_cut: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_sweeps: 50, tol: 1e-10, loop_sweeps: 3, cache_loop_env: true, rel_cut: 1e-12 }
    }
}

/// Which tensor a local update optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Node(usize),
    LoopPart(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalUpdate {
    /// Rayleigh quotient after the update.
    pub energy: f64,
    /// The Gram matrix had a projected null space.
    pub flagged: bool,
}

fn solve_local(envs: &Envs, extra: &[Tensor], target: &Tensor, rel_cut: f64) -> Result<(Tensor, LocalUpdate)> {
    let labels = target.labels();
    let rows: Vec<Label> = labels.iter().map(|&l| bra(l)).collect();
    let reduce = |env: &Tensor| -> Result<DMatrix<C64>> {
        let mut parts = vec![env];
        parts.extend(extra.iter());
        let m = contract_chain(&parts, TREE_CAP)?.0.to_matrix(&rows, &labels)?;
        Ok((&m + m.adjoint()) * C64::new(0.5, 0.0))
    };
    let e = reduce(&envs.energy)?;
    let n = reduce(&envs.gram)?;
    let (_, t, flagged) = generalized_min_eig(&e, &n, rel_cut)?;
    let lambda = (t.dotc(&(&e * &t)) / t.dotc(&(&n * &t))).re;
    let scale = t.norm();
    let new = Tensor::new(target.legs().to_vec(), t.iter().map(|z| z / scale).collect())?;
    Ok((new, LocalUpdate { energy: lambda, flagged }))
}

/// Replace one tensor by the minimal generalized eigenvector of `E t = λ N t`.
pub fn local_ground_update(tree: &mut TreeNetwork, slot: Slot, h: &Hamiltonian, rel_cut: f64) -> Result<LocalUpdate> {
    let node = match slot {
        Slot::Node(k) | Slot::LoopPart(k, _) => k,
    };
    if node >= tree.nodes.len() {
        return Err(CtsError::invalid(format!("node {node} out of range")));
    }
    tree.gauge_towards(node)?;
    let envs = tree.node_envs(node, h)?;
    update_with(tree, slot, &envs, rel_cut)
}

fn update_with(tree: &mut TreeNetwork, slot: Slot, envs: &Envs, rel_cut: f64) -> Result<LocalUpdate> {
    match slot {
        Slot::Node(k) => {
            let target = tree.ket(k)?;
            let (t, up) = solve_local(envs, &[], &target, rel_cut)?;
            tree.nodes[k].tensor = NodeTensor::Plain(t);
            Ok(up)
        }
        Slot::LoopPart(k, part) => {
            if part > 2 {
                return Err(CtsError::invalid("loop part must be 0, 1 or 2"));
            }
            let NodeTensor::Loop(tri) = &mut tree.nodes[k].tensor else {
                return Err(CtsError::invalid(format!("node {k} is not a loop")));
            };
            tri.gauge_towards(part)?;
            let tri = &*tri;
            let mut extra = Vec::new();
            for m in (0..3).filter(|&m| m != part) {
                extra.push(tri.b[m].clone());
                extra.push(bra_tensor(&tri.b[m])?);
            }
            let (t, up) = solve_local(envs, &extra, &tri.b[part], rel_cut)?;
            if let NodeTensor::Loop(tri) = &mut tree.nodes[k].tensor {
                tri.b[part] = t;
            }
            Ok(up)
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub tree: TreeNetwork,
    pub energy: f64,
    /// Energy after each sweep.
    pub history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Some local Gram matrix needed a null-space projection.
    pub flagged: bool,
}

/// Sweep local updates over every tensor until the energy settles.
pub fn ground_state_sweep(tree: &TreeNetwork, h: &Hamiltonian, cfg: &TreeConfig) -> Result<GroundState> {
    if h.n_sites != tree.n_sites {
        return Err(CtsError::shape("Hamiltonian and tree disagree on the number of sites"));
    }
    let mut t = tree.clone();
    let mut energy = t.energy(h)?;
    let mut history = Vec::new();
    let mut flagged = false;
    let mut converged = false;
    let mut sweeps = 0;
    let order = t.post_order();
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        for &k in order.iter().chain(order.iter().rev().skip(1)) {
            let is_loop = matches!(t.nodes[k].tensor, NodeTensor::Loop(_));
            if !is_loop {
                flagged |= local_ground_update(&mut t, Slot::Node(k), h, cfg.rel_cut)?.flagged;
                continue;
            }
            let cached = if cfg.cache_loop_env {
                t.gauge_towards(k)?;
                Some(t.node_envs(k, h)?)
            } else {
                None
            };
            for _ in 0..cfg.loop_sweeps.max(1) {
                for part in 0..3 {
                    let up = match &cached {
                        Some(envs) => update_with(&mut t, Slot::LoopPart(k, part), envs, cfg.rel_cut)?,
                        None => local_ground_update(&mut t, Slot::LoopPart(k, part), h, cfg.rel_cut)?,
                    };
                    flagged |= up.flagged;
                }
            }
        }
        let e = t.energy(h)?;
        history.push(e);
        let gain = energy - e;
        energy = e;
        if gain.abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(GroundState { tree: t, energy, history, sweeps, converged, flagged })
}

/// Serialized tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub dims: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl TensorData {
    fn from_tensor(t: &Tensor) -> Self {
        TensorData { dims: t.dims(), re: t.data().iter().map(|z| z.re).collect(), im: t.data().iter().map(|z| z.im).collect() }
    }

    fn to_positional(&self) -> Result<Tensor> {
        if self.re.len() != self.im.len() {
            return Err(CtsError::shape("re/im lengths differ"));
        }
        let legs = self.dims.iter().enumerate().map(|(i, &d)| Leg::new(Label::new(0, i as u32, 0), d)).collect();
        Tensor::new(legs, self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeJson {
    pub parent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<usize>,
    /// Plain node tensor, legs `[physical?, children…, parent?]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<TensorData>,
    /// Loop tensors `B¹[a₁,α,β]`, `B²[a₂,α,γ]`, `B³[a₃,β,γ]`.
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "loop")]
    pub triangle: Option<[TensorData; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub nodes: Vec<TreeNodeJson>,
}

impl TreeNetwork {
    pub fn to_json(&self) -> TreeJson {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let (tensor, triangle) = match &n.tensor {
                    NodeTensor::Plain(t) => (Some(TensorData::from_tensor(t)), None),
                    NodeTensor::Loop(l) => (None, Some([TensorData::from_tensor(&l.b[0]), TensorData::from_tensor(&l.b[1]), TensorData::from_tensor(&l.b[2])])),
                };
                TreeNodeJson { parent: n.parent, site: n.site, tensor, triangle }
            })
            .collect();
        TreeJson { nodes }
    }

    pub fn from_json(j: &TreeJson) -> Result<Self> {
        let parents: Vec<Option<usize>> = j.nodes.iter().map(|n| n.parent).collect();
        let sites: Vec<Option<usize>> = j.nodes.iter().map(|n| n.site).collect();
        let mut tensors = Vec::with_capacity(j.nodes.len());
        let mut loops = Vec::new();
        for (k, n) in j.nodes.iter().enumerate() {
            match (&n.tensor, &n.triangle) {
                (Some(t), None) => tensors.push(t.to_positional()?),
                (None, Some(parts)) => {
                    let b = [parts[0].to_positional()?, parts[1].to_positional()?, parts[2].to_positional()?];
                    let ext: Vec<usize> = b.iter().map(|t| t.dims()[0]).collect();
                    let legs = ext.iter().enumerate().map(|(i, &d)| Leg::new(Label::new(0, i as u32, 0), d)).collect();
                    tensors.push(Tensor::zeros(legs)?);
                    loops.push((k, b));
                }
                _ => return Err(CtsError::invalid(format!("node {k} needs exactly one of tensor or loop"))),
            }
        }
        let mut tree = TreeNetwork::from_parents(&parents, &sites, tensors)?;
        for (k, b) in loops {
            let ext = tree.ket(k)?.legs().to_vec();
            let parts = (0..3)
                .map(|m| {
                    let [p, q] = INTERNAL[m];
                    let d = b[m].dims();
                    if d.len() != 3 {
                        return Err(CtsError::shape("loop tensors are rank 3"));
                    }
                    b[m].clone().reshape(vec![ext[m], Leg::new(loop_leg(k, p), d[1]), Leg::new(loop_leg(k, q), d[2])])
                })
                .collect::<Result<Vec<_>>>()?;
            let tri = TriangleLoop { b: [parts[0].clone(), parts[1].clone(), parts[2].clone()] };
            tri.contract()?;
            tree.nodes[k].tensor = NodeTensor::Loop(tri);
        }
        tree.validate()?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn dense_energy(h: &Hamiltonian, psi: &[C64]) -> f64 {
        let m = h.dense(2).unwrap();
        let v = DVector::from_column_slice(psi);
        ((v.adjoint() * &m * &v)[(0, 0)] / v.norm_squared()).re
    }

    fn single(v: Vec<C64>) -> TreeNetwork {
        let t = Tensor::new(vec![Leg::new(Label::new(0, 0, 0), v.len())], v).unwrap();
        TreeNetwork::from_parents(&[None], &[Some(0)], vec![t]).unwrap()
    }

    #[test]
    fn single_node_vector() {
        let v = vec![C64::new(0.3, 0.1), C64::new(-0.5, 2.0)];
        assert_eq!(single(v.clone()).contract_state(TREE_CAP).unwrap(), v);
    }

    #[test]
    fn seven_node_tree_matches_dense_expansion() {
        // root with two internal children, each with two leaves
        let parents = [None, Some(0), Some(1), Some(1), Some(0), Some(4), Some(4)];
        let sites = [None, None, Some(0), Some(1), None, Some(2), Some(3)];
        let dims: [&[usize]; 7] = [&[3, 2], &[2, 2, 3], &[2, 2], &[2, 2], &[2, 2, 2], &[2, 2], &[2, 2]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tensors: Vec<Tensor> = dims
            .iter()
            .map(|d| Tensor::from_fn(d.iter().enumerate().map(|(i, &x)| Leg::new(Label::new(0, i as u32, 0), x)).collect(), |_| random_c64(&mut rng)).unwrap())
            .collect();
        let tree = TreeNetwork::from_parents(&parents, &sites, tensors.clone()).unwrap();
        let got = tree.contract_state(TREE_CAP).unwrap();
        let t = |k: usize, idx: &[usize]| tensors[k].get(idx);
        for s in 0..16usize {
            let b = |k: usize| (s >> (3 - k)) & 1;
            let mut want = ZERO;
            for a1 in 0..3 {
                for a4 in 0..2 {
                    let mut left = ZERO;
                    for c2 in 0..2 {
                        for c3 in 0..2 {
                            left += t(2, &[b(0), c2]) * t(3, &[b(1), c3]) * t(1, &[c2, c3, a1]);
                        }
                    }
                    let mut right = ZERO;
                    for c5 in 0..2 {
                        for c6 in 0..2 {
                            right += t(5, &[b(2), c5]) * t(6, &[b(3), c6]) * t(4, &[c5, c6, a4]);
                        }
                    }
                    want += t(0, &[a1, a4]) * left * right;
                }
            }
            assert!((got[s] - want).norm() < 1e-11 * want.norm().max(1.0));
        }
        let norm: f64 = got.iter().map(|z| z.norm_sqr()).sum();
        assert!((tree.norm_sqr().unwrap() - norm).abs() < 1e-11 * norm);
    }

    #[test]
    fn invalid_trees() {
        let t = || Tensor::new(vec![Leg::new(Label::new(0, 0, 0), 2)], vec![ONE, ONE]).unwrap();
        assert!(TreeNetwork::from_parents(&[None, None], &[Some(0), Some(1)], vec![t(), t()]).is_err());
        assert!(TreeNetwork::from_parents(&[Some(1), Some(0)], &[None, None], vec![t(), t()]).is_err());
        let wide = Tensor::from_fn((0..4).map(|i| Leg::new(Label::new(0, i, 0), 1)).collect(), |_| ONE).unwrap();
        let leaf = Tensor::from_fn(vec![Leg::new(Label::new(0, 0, 0), 2), Leg::new(Label::new(0, 1, 0), 1)], |_| ONE).unwrap();
        assert!(TreeNetwork::from_parents(&[None, Some(0), Some(0), Some(0), Some(0)], &[None, Some(0), Some(1), Some(2), Some(3)], vec![wide, leaf.clone(), leaf.clone(), leaf.clone(), leaf]).is_err());
    }

    #[test]
    fn triangle_expansions() {
        let v = |x: [f64; 2]| vec![C64::new(x[0], 0.3), C64::new(x[1], -0.2)];
        let (p, q, r) = (v([1.0, 2.0]), v([-0.5, 0.7]), v([0.2, 1.1]));
        let legs: Vec<Leg> = (0..3).map(|i| Leg::new(Label::new(0, i, 0), 2)).collect();
        let a = Tensor::from_fn(legs.clone(), |x| p[x[0]] * q[x[1]] * r[x[2]]).unwrap();
        let f = expand_triangle(&a, [1, 1, 1], 50, 0).unwrap();
        assert!(f.error < 1e-10, "{}", f.error);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let a = Tensor::from_fn(legs.clone(), |_| random_c64(&mut rng)).unwrap();
            let f = expand_triangle(&a, [2, 2, 2], 500, 3).unwrap();
            assert!(f.error < 1e-8, "{}", f.error);
        }
    }

    /// Largest `|A(x, y, z)|` over unit vectors, by brute force over the
    /// Bloch spheres of `y` and `z` (the best `x` is explicit), then refined
    /// by a finer local grid.
    fn best_rank_one_gap(a: &Tensor) -> f64 {
        let unit = |th: f64, ph: f64| [C64::new((th / 2.0).cos(), 0.0), C64::from_polar((th / 2.0).sin(), ph)];
        let value = |y: [C64; 2], z: [C64; 2]| -> f64 {
            (0..2)
                .map(|i| {
                    let mut s = ZERO;
                    for j in 0..2 {
                        for k in 0..2 {
                            s += a.get(&[i, j, k]) * y[j].conj() * z[k].conj();
                        }
                    }
                    s.norm_sqr()
                })
                .sum()
        };
        let pi = std::f64::consts::PI;
        let mut best = (0.0, [0.0; 4]);
        let n = 48;
        for i in 0..=n {
            for j in 0..n {
                for k in 0..=n {
                    for l in 0..n {
                        let p = [pi * i as f64 / n as f64, 2.0 * pi * j as f64 / n as f64, pi * k as f64 / n as f64, 2.0 * pi * l as f64 / n as f64];
                        let v = value(unit(p[0], p[1]), unit(p[2], p[3]));
                        if v > best.0 {
                            best = (v, p);
                        }
                    }
                }
            }
        }
        let mut step = pi / n as f64;
        while step > 1e-9 {
            let mut improved = false;
            for dim in 0..4 {
                for sgn in [-1.0, 1.0] {
                    let mut p = best.1;
                    p[dim] += sgn * step;
                    let v = value(unit(p[0], p[1]), unit(p[2], p[3]));
                    if v > best.0 {
                        best = (v, p);
                        improved = true;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        let norm2 = a.norm_sqr();
        ((norm2 - best.0).max(0.0) / norm2).sqrt()
    }

    #[test]
    fn rank_one_triangle_matches_best_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let legs: Vec<Leg> = (0..3).map(|i| Leg::new(Label::new(0, i, 0), 2)).collect();
        let a = Tensor::from_fn(legs, |_| random_c64(&mut rng)).unwrap();
        let f = expand_triangle(&a, [1, 1, 1], 2000, 5).unwrap();
        let oracle = best_rank_one_gap(&a);
        assert!((f.error - oracle).abs() < 1e-6, "{} vs {}", f.error, oracle);
    }

    #[test]
    fn product_decomposition_reproduces_dense_terms() {
        let h = Hamiltonian::ising(&IsingModel::new(4, 0.7).unwrap());
        let want = oracle::dense_hamiltonian(&IsingModel::new(4, 0.7).unwrap()).unwrap();
        let got = h.dense(2).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert!((got[(r, c)] - C64::new(want[(r, c)], 0.0)).norm() < 1e-12);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(4, 4, |_, _| random_c64(&mut rng));
        let h = Hamiltonian::new(2, vec![Term::new(vec![1, 0], &m)]).unwrap();
        let d = h.dense(2).unwrap();
        // sites listed (1, 0): swap the bit order
        let sw = |x: usize| ((x & 1) << 1) | (x >> 1);
        for r in 0..4 {
            for c in 0..4 {
                assert!((d[(r, c)] - m[(sw(r), sw(c))]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn energies_match_dense() {
        let h = Hamiltonian::ising(&IsingModel::new(6, 1.3).unwrap());
        let tree = TreeNetwork::balanced(6, 2, 4, 7).unwrap();
        let psi = tree.contract_state(TREE_CAP).unwrap();
        assert!((tree.energy(&h).unwrap() - dense_energy(&h, &psi)).abs() < 1e-10);
        let (loopy, _) = tree.with_loops([2, 2, 2], 5, 1).unwrap();
        let psi = loopy.contract_state(TREE_CAP).unwrap();
        assert!((loopy.energy(&h).unwrap() - dense_energy(&h, &psi)).abs() < 1e-10);
    }

    #[test]
    fn local_update_basics() {
        let id = Hamiltonian::new(4, vec![Term::new(vec![0], &DMatrix::identity(2, 2))]).unwrap();
        let mut tree = TreeNetwork::balanced(4, 2, 4, 1).unwrap();
        let root = tree.root();
        let up = local_ground_update(&mut tree, Slot::Node(root), &id, 1e-12).unwrap();
        assert!((up.energy - 1.0).abs() < 1e-10);

        let zz = Hamiltonian::new(2, vec![Term::new(vec![0, 1], &pauli(b'z').kronecker(&pauli(b'z')))]).unwrap();
        let mut tree = TreeNetwork::balanced(2, 2, 2, 2).unwrap();
        let root = tree.root();
        let up = local_ground_update(&mut tree, Slot::Node(root), &zz, 1e-12).unwrap();
        assert!((up.energy + 1.0).abs() < 1e-10);
        let psi = tree.contract_state(TREE_CAP).unwrap();
        let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((psi[1].norm_sqr() + psi[2].norm_sqr() - n).abs() < 1e-10 * n);
    }

    #[test]
    fn local_updates_never_raise_energy() {
        let h = Hamiltonian::ising(&IsingModel::new(6, 1.0).unwrap());
        for seed in 0..8 {
            let mut tree = TreeNetwork::balanced(6, 2, 3, seed).unwrap().with_loops([2, 2, 2], 50, seed).unwrap().0;
            let mut e = tree.energy(&h).unwrap();
            for k in tree.post_order() {
                let slots: Vec<Slot> = match tree.nodes[k].tensor {
                    NodeTensor::Plain(_) => vec![Slot::Node(k)],
                    NodeTensor::Loop(_) => (0..3).map(|p| Slot::LoopPart(k, p)).collect(),
                };
                for s in slots {
                    let up = local_ground_update(&mut tree, s, &h, 1e-12).unwrap();
                    let now = tree.energy(&h).unwrap();
                    assert!((up.energy - now).abs() < 1e-9, "{s:?} {} {now}", up.energy);
                    assert!(now <= e + 1e-10, "{now} > {e}");
                    e = now;
                }
            }
        }
    }

    #[test]
    fn product_hamiltonian_on_bond_one_tree() {
        let h = Hamiltonian::field_z(5, 1.0);
        let tree = TreeNetwork::balanced(5, 2, 1, 3).unwrap();
        let gs = ground_state_sweep(&tree, &h, &TreeConfig::default()).unwrap();
        assert!((gs.energy + 5.0).abs() < 1e-9);
    }

    #[test]
    fn sweeps_find_small_ising_ground_state() {
        let model = IsingModel::new(6, 1.0).unwrap();
        let h = Hamiltonian::ising(&model);
        let exact = oracle::ground_energy(&model).unwrap();
        let tree = TreeNetwork::balanced(6, 2, 8, 11).unwrap();
        let gs = ground_state_sweep(&tree, &h, &TreeConfig::default()).unwrap();
        for w in gs.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!((gs.energy - exact).abs() < 1e-8, "{} vs {exact}", gs.energy);
    }

    #[test]
    fn gauge_keeps_the_state() {
        let tree = TreeNetwork::balanced(6, 2, 4, 3).unwrap().with_random_loops([2, 2, 2], 1).unwrap();
        let before = tree.contract_state(TREE_CAP).unwrap();
        for x in 0..tree.nodes().len() {
            let mut t = tree.clone();
            t.gauge_towards(x).unwrap();
            let after = t.contract_state(TREE_CAP).unwrap();
            let d: f64 = before.iter().zip(&after).map(|(a, b)| (a - b).norm_sqr()).sum();
            assert!(d.sqrt() < 1e-10 * before.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
        }
    }

    fn overlap_fidelity(a: &[C64], b: &[C64]) -> f64 {
        let ip: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        let na: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
        ip.norm_sqr() / (na * nb)
    }

    #[test]
    fn ising_ground_state_with_and_without_loops() {
        let model = IsingModel::new(8, 1.0).unwrap();
        let h = Hamiltonian::ising(&model);
        let exact = oracle::ground_energy(&model).unwrap();
        let plain = ground_state_sweep(&TreeNetwork::balanced(8, 2, 8, 21).unwrap(), &h, &TreeConfig::default()).unwrap();
        assert!((plain.energy - exact).abs() < 1e-6, "{} vs {exact}", plain.energy);
        for w in plain.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        let (loopy, err) = plain.tree.with_loops([4, 4, 4], 300, 2).unwrap();
        assert!(err < 1e-6, "{err}");
        let looped = ground_state_sweep(&loopy, &h, &TreeConfig::default()).unwrap();
        for w in looped.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!((looped.energy - plain.energy).abs() < 1e-6, "{} vs {}", looped.energy, plain.energy);
        let f = overlap_fidelity(&plain.tree.contract_state(TREE_CAP).unwrap(), &looped.tree.contract_state(TREE_CAP).unwrap());
        assert!(f >= 1.0 - 1e-6, "{f}");
    }

    #[test]
    fn cached_and_uncached_loop_sweeps_agree() {
        let h = Hamiltonian::ising(&IsingModel::new(4, 0.8).unwrap());
        let tree = TreeNetwork::balanced(4, 2, 4, 5).unwrap().with_random_loops([2, 2, 2], 6).unwrap();
        let cfg = TreeConfig { max_sweeps: 3, ..TreeConfig::default() };
        let a = ground_state_sweep(&tree, &h, &cfg).unwrap();
        let b = ground_state_sweep(&tree, &h, &TreeConfig { cache_loop_env: false, ..cfg }).unwrap();
        assert!((a.energy - b.energy).abs() < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let tree = TreeNetwork::balanced(5, 2, 4, 9).unwrap();
        let (loopy, _) = tree.with_loops([2, 2, 2], 3, 0).unwrap();
        for t in [tree, loopy] {
            let s = serde_json::to_string(&t.to_json()).unwrap();
            let back = TreeNetwork::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
            assert_eq!(back, t);
        }
        let h = Hamiltonian::ising(&IsingModel::new(3, 1.0).unwrap());
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<Hamiltonian>(&s).unwrap(), h);
    }
}
