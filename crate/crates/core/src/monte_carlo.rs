//! Metropolis contraction of periodic grids of rank-4 tensors.
//!
//! A configuration `S = (s₀, …, s_{N-1})` fixes every vertical bond; `s_i`
//! sits above row `i` and `s_N = s₀`. Row `i` then contributes the trace
//! `Rᵢ(s_i, s_{i+1}) = Tr Π_j T^{i,j}[s_i[j], s_{i+1}[j]]`. Rows before the
//! split form `L`, the rest form `R`, and `Z = Σ_S μ f` with `μ = |L|²` and
//! `f = R / L*`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CtsError, Result};
use crate::tensor::{C64, ONE, ZERO};

/// Periodic `n_rows × n_cols` grid; each tensor is stored as `[up, down,
/// left, right]` in row-major order with every leg of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusNetwork {
    n_rows: usize,
    n_cols: usize,
    d: usize,
    /// `mats[i][j][u * d + v]` is the `d × d` (left, right) matrix of `T^{i,j}[u, v]`.
    mats: Vec<Vec<Vec<DMatrix<C64>>>>,
}

impl TorusNetwork {
    /// `data[i][j]` holds `d⁴` entries indexed `((u·d + v)·d + l)·d + r`.
    pub fn new(n_rows: usize, n_cols: usize, d: usize, data: Vec<Vec<Vec<C64>>>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 || d == 0 {
            return Err(CtsError::invalid("torus needs positive rows, cols and bond dimension"));
        }
        if data.len() != n_rows || data.iter().any(|r| r.len() != n_cols) {
            return Err(CtsError::shape(format!("expected {n_rows}×{n_cols} tensors")));
        }
        let mut mats = Vec::with_capacity(n_rows);
        for row in &data {
            let mut mrow = Vec::with_capacity(n_cols);
            for t in row {
                if t.len() != d.pow(4) {
                    return Err(CtsError::shape(format!("torus tensors need {} entries, got {}", d.pow(4), t.len())));
                }
                if t.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(CtsError::NonFinite);
                }
                let slices = (0..d * d).map(|uv| DMatrix::from_row_slice(d, d, &t[uv * d * d..(uv + 1) * d * d])).collect();
                mrow.push(slices);
            }
            mats.push(mrow);
        }
        Ok(TorusNetwork { n_rows, n_cols, d, mats })
    }

    /// Every tensor given by `f(i, j, [u, d, l, r])`.
    pub fn from_fn(n_rows: usize, n_cols: usize, d: usize, mut f: impl FnMut(usize, usize, [usize; 4]) -> C64) -> Result<Self> {
        let data = (0..n_rows)
            .map(|i| {
                (0..n_cols)
                    .map(|j| {
                        let mut v = Vec::with_capacity(d.pow(4));
                        for u in 0..d {
                            for dn in 0..d {
                                for l in 0..d {
                                    for r in 0..d {
                                        v.push(f(i, j, [u, dn, l, r]));
                                    }
                                }
                            }
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        TorusNetwork::new(n_rows, n_cols, d, data)
    }

    /// Seeded random tensors with entries uniform in `[lo, hi)`.
    pub fn random_real(n_rows: usize, n_cols: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TorusNetwork::from_fn(n_rows, n_cols, d, |_, _, _| C64::new(rng.random_range(lo..hi), 0.0))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn bond_dim(&self) -> usize {
        self.d
    }

    pub fn entry(&self, i: usize, j: usize, idx: [usize; 4]) -> C64 {
        self.mats[i][j][idx[0] * self.d + idx[1]][(idx[2], idx[3])]
    }

    /// `Tr Π_j T^{i,j}[s_top[j], s_bottom[j]]`.
    pub fn row_matrix(&self, i: usize, s_top: &[usize], s_bottom: &[usize]) -> Result<C64> {
        if i >= self.n_rows {
            return Err(CtsError::invalid(format!("row {i} out of range")));
        }
        if s_top.len() != self.n_cols || s_bottom.len() != self.n_cols {
            return Err(CtsError::shape(format!("index vectors need length {}", self.n_cols)));
        }
        if s_top.iter().chain(s_bottom).any(|&s| s >= self.d) {
            return Err(CtsError::invalid(format!("index out of range for bond dimension {}", self.d)));
        }
        Ok(self.row_unchecked(i, s_top, s_bottom))
    }

    fn row_unchecked(&self, i: usize, s_top: &[usize], s_bottom: &[usize]) -> C64 {
        let d = self.d;
        let mut p = self.mats[i][0][s_top[0] * d + s_bottom[0]].clone();
        for j in 1..self.n_cols {
            p *= &self.mats[i][j][s_top[j] * d + s_bottom[j]];
        }
        p.trace()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    /// Recorded samples per chain.
    pub n_samples: usize,
    /// Moves discarded before recording; `None` means `10·rows·cols`.
    pub burn_in: Option<usize>,
    /// Moves between recorded samples; `None` means `rows·cols`.
    pub thinning: Option<usize>,
    pub seed: u64,
    /// Rows `0..split_row` form `L`; `None` means `rows / 2`.
    pub split_row: Option<usize>,
    pub chains: usize,
    /// Accumulate `1/μ` for the partition-sum estimate. Without it the
    /// estimate is the bare sample mean of `f`.
    pub estimate_z: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_samples: 4096, burn_in: None, thinning: None, seed: 0, split_row: None, chains: 1, estimate_z: true }
    }
}

impl McConfig {
    fn resolved(&self, t: &TorusNetwork) -> Result<(usize, usize, usize)> {
        let sites = t.n_rows * t.n_cols;
        let burn_in = self.burn_in.unwrap_or(10 * sites);
        let thinning = self.thinning.unwrap_or(sites).max(1);
        let split = self.split_row.unwrap_or((t.n_rows / 2).max(1));
        if self.n_samples <= burn_in {
            return Err(CtsError::invalid(format!("n_samples ({}) must exceed burn_in ({burn_in})", self.n_samples)));
        }
        if split > t.n_rows {
            return Err(CtsError::invalid(format!("split row {split} beyond {} rows", t.n_rows)));
        }
        if self.chains == 0 {
            return Err(CtsError::invalid("at least one chain"));
        }
        Ok((burn_in, thinning, split))
    }
}

/// Circular variance of the phase of `f` above which the sign flag is set.
pub const SIGN_THRESHOLD: f64 = 0.5;
/// Acceptance below which the ergodicity flag is set.
pub const ACCEPTANCE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub estimate_re: f64,
    pub estimate_im: f64,
    pub std_error: f64,
    /// Accepted / proposed, counting only proposals that change the state.
    pub acceptance: f64,
    pub chains: usize,
    pub sign_flag: bool,
    pub ergodicity_flag: bool,
    /// `1 − |⟨f/|f|⟩|` over recorded samples.
    pub phase_variance: f64,
    /// Fraction of proposals that landed on `μ = 0`.
    pub zero_fraction: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct McResult {
    pub estimate: C64,
    pub std_error: f64,
    pub diagnostics: Diagnostics,
}

/// A measure over `components()` digits in `[0, dim())` that can be
/// probed one digit at a time.
pub trait Measure {
    fn components(&self) -> usize;
    fn dim(&self) -> usize;
    fn state(&self) -> &[usize];
    fn weight(&self) -> f64;
    /// Tentatively set one digit and return the new weight.
    fn try_set(&mut self, comp: usize, value: usize) -> f64;
    fn commit(&mut self);
    fn revert(&mut self);
}

/// Metropolis acceptance `min(1, μ'/μ)` against a uniform draw.
pub fn accept(mu_old: f64, mu_new: f64, rng: &mut impl Rng) -> bool {
    if mu_new >= mu_old {
        return true;
    }
    rng.random::<f64>() < mu_new / mu_old
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
    pub to_zero: u64,
}

/// One single-digit redraw. Redraws of the current value change nothing
/// and are not counted as proposals. Returns the move as `(comp, old, new,
/// μ_old, μ_new, accepted)` when it was a real proposal.
pub fn metropolis_move<M: Measure>(m: &mut M, rng: &mut impl Rng, stats: &mut MoveStats) -> Option<(usize, usize, usize, f64, f64, bool)> {
    let comp = rng.random_range(0..m.components());
    let value = rng.random_range(0..m.dim());
    let old = m.state()[comp];
    if value == old {
        return None;
    }
    let mu_old = m.weight();
    let mu_new = m.try_set(comp, value);
    stats.proposed += 1;
    if mu_new == 0.0 {
        stats.to_zero += 1;
    }
    let ok = accept(mu_old, mu_new, rng);
    if ok {
        m.commit();
        stats.accepted += 1;
    } else {
        m.revert();
    }
    Some((comp, old, value, mu_old, mu_new, ok))
}

/// Chain state on the torus with cached row traces.
pub struct TorusChain<'a> {
    t: &'a TorusNetwork,
    split: usize,
    /// Flattened `s_i[j]` at `i·cols + j`.
    s: Vec<usize>,
    rows: Vec<C64>,
    mu: f64,
    pending: Option<Pending>,
}

struct Pending {
    comp: usize,
    old: usize,
    rows: [(usize, C64); 2],
    mu: f64,
}

impl<'a> TorusChain<'a> {
    /// Chain at configuration `s` (flattened `s_i[j]` at `i·cols + j`), with
    /// rows `0..split` forming `L`. Panics on a wrong length or split.
    pub fn new(t: &'a TorusNetwork, split: usize, s: Vec<usize>) -> Self {
        assert_eq!(s.len(), t.n_rows * t.n_cols, "configuration length");
        assert!(split <= t.n_rows, "split row beyond the torus");
        let mut c = TorusChain { t, split, s, rows: Vec::new(), mu: 0.0, pending: None };
        c.rows = (0..t.n_rows).map(|i| c.row(i)).collect();
        c.mu = c.measure(&c.rows);
        c
    }

    fn vector(&self, i: usize) -> &[usize] {
        let i = i % self.t.n_rows;
        &self.s[i * self.t.n_cols..(i + 1) * self.t.n_cols]
    }

    fn row(&self, i: usize) -> C64 {
        self.t.row_unchecked(i, self.vector(i), self.vector(i + 1))
    }

    fn left(&self, rows: &[C64]) -> C64 {
        rows[..self.split].iter().product()
    }

    fn measure(&self, rows: &[C64]) -> f64 {
        self.left(rows).norm_sqr()
    }

    /// `f = R / L*`.
    fn f(&self) -> C64 {
        let right: C64 = self.rows[self.split..].iter().product();
        right / self.left(&self.rows).conj()
    }
}

impl Measure for TorusChain<'_> {
    fn components(&self) -> usize {
        self.s.len()
    }

    fn dim(&self) -> usize {
        self.t.d
    }

    fn state(&self) -> &[usize] {
        &self.s
    }

    fn weight(&self) -> f64 {
        self.mu
    }

    fn try_set(&mut self, comp: usize, value: usize) -> f64 {
        let n = self.t.n_rows;
        let i = comp / self.t.n_cols;
        let old = self.s[comp];
        self.s[comp] = value;
        // s_i is the top of row i and the bottom of row i-1
        let above = (i + n - 1) % n;
        let saved = [(i, self.rows[i]), (above, self.rows[above])];
        self.rows[i] = self.row(i);
        self.rows[above] = self.row(above);
        let mu = self.measure(&self.rows);
        self.pending = Some(Pending { comp, old, rows: saved, mu: self.mu });
        self.mu = mu;
        mu
    }

    fn commit(&mut self) {
        self.pending = None;
    }

    fn revert(&mut self) {
        if let Some(p) = self.pending.take() {
            self.s[p.comp] = p.old;
            for (i, v) in p.rows.iter().rev() {
                self.rows[*i] = *v;
            }
            self.mu = p.mu;
        }
    }
}

struct ChainOutput {
    f: Vec<C64>,
    inv_mu: Vec<f64>,
    stats: MoveStats,
}

const WARMUP_TRIES: usize = 10_000;

fn run_chain(t: &TorusNetwork, split: usize, burn_in: usize, thinning: usize, n_samples: usize, estimate_z: bool, seed: u64) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = t.n_rows * t.n_cols;
    let mut start = None;
    for _ in 0..WARMUP_TRIES {
        let s: Vec<usize> = (0..comps).map(|_| rng.random_range(0..t.d)).collect();
        let c = TorusChain::new(t, split, s);
        if c.mu > 0.0 && c.mu.is_finite() {
            start = Some(c);
            break;
        }
    }
    let mut chain = start.ok_or_else(|| CtsError::ZeroNorm(format!("sampling measure: no configuration with μ > 0 in {WARMUP_TRIES} random draws")))?;
    let mut stats = MoveStats::default();
    for _ in 0..burn_in {
        metropolis_move(&mut chain, &mut rng, &mut stats);
    }
    stats = MoveStats::default();
    let mut f = Vec::with_capacity(n_samples);
    let mut inv_mu = Vec::with_capacity(if estimate_z { n_samples } else { 0 });
    for _ in 0..n_samples {
        for _ in 0..thinning {
            metropolis_move(&mut chain, &mut rng, &mut stats);
        }
        f.push(chain.f());
        if estimate_z {
            inv_mu.push(1.0 / chain.mu);
        }
    }
    Ok(ChainOutput { f, inv_mu, stats })
}

/// Number of jackknife bins.
pub const BINS: usize = 32;

/// `count · mean(f) / mean(1/μ)` with `ln count` given, evaluated directly
/// when the count fits comfortably in a double.
fn ratio(ln_count: f64, mean_f: C64, mean_inv: f64) -> C64 {
    let scale = if ln_count < 600.0 { ln_count.exp() / mean_inv } else { (ln_count - mean_inv.ln()).exp() };
    mean_f * scale
}

/// Point estimate and jackknife error from binned samples.
fn jackknife(f: &[C64], inv_mu: Option<&[f64]>, ln_count: f64) -> (C64, f64) {
    let n = f.len();
    let bins = BINS.min(n);
    let per = n / bins;
    let used = per * bins;
    let bin_f: Vec<C64> = (0..bins).map(|b| f[b * per..(b + 1) * per].iter().sum()).collect();
    let bin_w: Vec<f64> = match inv_mu {
        Some(w) => (0..bins).map(|b| w[b * per..(b + 1) * per].iter().sum()).collect(),
        None => vec![0.0; bins],
    };
    let total_f: C64 = bin_f.iter().sum();
    let total_w: f64 = bin_w.iter().sum();
    let value = |sf: C64, sw: f64, m: usize| match inv_mu {
        Some(_) => ratio(ln_count, sf / m as f64, sw / m as f64),
        None => sf / m as f64,
    };
    let full = value(total_f, total_w, used);
    if bins < 2 {
        return (full, f64::INFINITY);
    }
    let loo: Vec<C64> = (0..bins).map(|b| value(total_f - bin_f[b], total_w - bin_w[b], used - per)).collect();
    let mean: C64 = loo.iter().sum::<C64>() / bins as f64;
    let var = loo.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() * (bins - 1) as f64 / bins as f64;
    (full, var.sqrt())
}

/// Estimate the full contraction of `t` by Metropolis sampling.
pub fn mc_contract(t: &TorusNetwork, cfg: &McConfig) -> Result<McResult> {
    let (burn_in, thinning, split) = cfg.resolved(t)?;
    let outputs: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| {
                let seed = cfg.seed.wrapping_add(c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                scope.spawn(move || run_chain(t, split, burn_in, thinning, cfg.n_samples, cfg.estimate_z, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let ln_count = (t.n_rows * t.n_cols) as f64 * (t.d as f64).ln();
    let mut per_chain = Vec::with_capacity(cfg.chains);
    let mut stats = MoveStats::default();
    let mut phases = ZERO;
    let mut samples = 0;
    for out in outputs {
        let out = out?;
        let inv = cfg.estimate_z.then_some(out.inv_mu.as_slice());
        per_chain.push(jackknife(&out.f, inv, ln_count));
        stats.proposed += out.stats.proposed;
        stats.accepted += out.stats.accepted;
        stats.to_zero += out.stats.to_zero;
        phases += out.f.iter().map(|z| if z.norm() > 0.0 { z / z.norm() } else { ZERO }).sum::<C64>();
        samples += out.f.len();
    }
    let (estimate, std_error) = merge(&per_chain);
    let acceptance = if stats.proposed == 0 { 0.0 } else { stats.accepted as f64 / stats.proposed as f64 };
    let zero_fraction = if stats.proposed == 0 { 0.0 } else { stats.to_zero as f64 / stats.proposed as f64 };
    let phase_variance = 1.0 - (phases / samples as f64).norm();
    let diagnostics = Diagnostics {
        estimate_re: estimate.re,
        estimate_im: estimate.im,
        std_error,
        acceptance,
        chains: cfg.chains,
        sign_flag: phase_variance > SIGN_THRESHOLD,
        ergodicity_flag: acceptance < ACCEPTANCE_FLOOR,
        phase_variance,
        zero_fraction,
        samples,
    };
    Ok(McResult { estimate, std_error, diagnostics })
}

/// Inverse-variance weighted mean; chains with zero error dominate.
fn merge(parts: &[(C64, f64)]) -> (C64, f64) {
    if parts.len() == 1 {
        return parts[0];
    }
    let exact: Vec<C64> = parts.iter().filter(|p| p.1 == 0.0).map(|p| p.0).collect();
    if !exact.is_empty() {
        return (exact.iter().sum::<C64>() / exact.len() as f64, 0.0);
    }
    let wsum: f64 = parts.iter().map(|p| 1.0 / (p.1 * p.1)).sum();
    let est: C64 = parts.iter().map(|p| p.0 / (p.1 * p.1)).sum::<C64>() / wsum;
    (est, (1.0 / wsum).sqrt())
}

/// Measure given by an explicit table over all configurations, digit 0
/// most significant.
#[derive(Clone, Debug)]
pub struct TableMeasure {
    weights: Vec<f64>,
    comps: usize,
    d: usize,
    state: Vec<usize>,
    pending: Option<(usize, usize)>,
}

impl TableMeasure {
    pub fn new(weights: Vec<f64>, comps: usize, d: usize) -> Result<Self> {
        if d.checked_pow(comps as u32) != Some(weights.len()) {
            return Err(CtsError::shape("table size must be d^components"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CtsError::invalid("weights must be finite and non-negative"));
        }
        let first = weights.iter().position(|&w| w > 0.0).ok_or_else(|| CtsError::ZeroNorm("table measure".into()))?;
        let mut tm = TableMeasure { weights, comps, d, state: vec![0; comps], pending: None };
        tm.state = tm.digits(first);
        Ok(tm)
    }

    fn digits(&self, mut x: usize) -> Vec<usize> {
        let mut v = vec![0; self.comps];
        for k in (0..self.comps).rev() {
            v[k] = x % self.d;
            x /= self.d;
        }
        v
    }

    fn index(&self) -> usize {
        self.state.iter().fold(0, |acc, &s| acc * self.d + s)
    }
}

impl Measure for TableMeasure {
    fn components(&self) -> usize {
        self.comps
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn state(&self) -> &[usize] {
        &self.state
    }

    fn weight(&self) -> f64 {
        self.weights[self.index()]
    }

    fn try_set(&mut self, comp: usize, value: usize) -> f64 {
        self.pending = Some((comp, self.state[comp]));
        self.state[comp] = value;
        self.weight()
    }

    fn commit(&mut self) {
        self.pending = None;
    }

    fn revert(&mut self) {
        if let Some((c, v)) = self.pending.take() {
            self.state[c] = v;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceReport {
    /// Visit counts per configuration after burn-in.
    pub occupation: HashMap<Vec<usize>, u64>,
    /// Accepted transitions `(from, to)`.
    pub flows: HashMap<(Vec<usize>, Vec<usize>), u64>,
    /// Largest `|n(x→y) − n(y→x)| / (n(x→y) + n(y→x))` over pairs with at
    /// least `min_count` transitions in total.
    pub max_imbalance: f64,
    pub increasing_proposed: u64,
    pub increasing_accepted: u64,
}

impl BalanceReport {
    pub fn occupation_of(&self, s: &[usize]) -> u64 {
        self.occupation.get(s).copied().unwrap_or(0)
    }
}

/// Run the implemented proposal and acceptance rule for `trials` moves and
/// tabulate forward and backward transition counts.
pub fn detailed_balance_check<M: Measure>(m: &mut M, trials: usize, burn_in: usize, min_count: u64, seed: u64) -> BalanceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = MoveStats::default();
    for _ in 0..burn_in {
        metropolis_move(m, &mut rng, &mut stats);
    }
    let mut occupation: HashMap<Vec<usize>, u64> = HashMap::new();
    let mut flows: HashMap<(Vec<usize>, Vec<usize>), u64> = HashMap::new();
    let (mut inc_p, mut inc_a) = (0, 0);
    for _ in 0..trials {
        let before = m.state().to_vec();
        if let Some((_, _, _, mu_old, mu_new, ok)) = metropolis_move(m, &mut rng, &mut stats) {
            if mu_new >= mu_old {
                inc_p += 1;
                inc_a += ok as u64;
            }
            if ok {
                *flows.entry((before, m.state().to_vec())).or_default() += 1;
            }
        }
        *occupation.entry(m.state().to_vec()).or_default() += 1;
    }
    let mut max_imbalance: f64 = 0.0;
    for ((a, b), &n_ab) in &flows {
        let n_ba = flows.get(&(b.clone(), a.clone())).copied().unwrap_or(0);
        if n_ab + n_ba >= min_count {
            max_imbalance = max_imbalance.max((n_ab as f64 - n_ba as f64).abs() / (n_ab + n_ba) as f64);
        }
    }
    BalanceReport { occupation, flows, max_imbalance, increasing_proposed: inc_p, increasing_accepted: inc_a }
}

/// `Σ_S Π_i Rᵢ` by enumerating every vertical configuration; the cost is
/// `d^(rows·cols)` row products.
pub fn transfer_sum(t: &TorusNetwork) -> Result<C64> {
    let comps = t.n_rows * t.n_cols;
    let total = (t.d as u128).checked_pow(comps as u32).unwrap_or(u128::MAX);
    if total > 1 << 24 {
        return Err(CtsError::CapExceeded { what: "vertical configurations".into(), size: total, cap: 1 << 24 });
    }
    let mut s = vec![0usize; comps];
    let mut z = ZERO;
    for _ in 0..total {
        let mut p = ONE;
        for i in 0..t.n_rows {
            let top = &s[i * t.n_cols..(i + 1) * t.n_cols];
            let k = (i + 1) % t.n_rows;
            let bottom = &s[k * t.n_cols..(k + 1) * t.n_cols];
            p *= t.row_unchecked(i, top, bottom);
        }
        z += p;
        for digit in s.iter_mut().rev() {
            *digit += 1;
            if *digit < t.d {
                break;
            }
            *digit = 0;
        }
    }
    Ok(z)
}
