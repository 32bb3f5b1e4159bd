//! Brute-force references: dense state vectors, gate application and exact
//! time evolution under the transverse-field Ising chain.
//!
//! Basis index bit `n-1-a` holds qubit `a`, so qubit 0 is the most
//! significant bit, matching the row-major order of dense MPS and grid
//! expansions.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::circuit::{Circuit, Gate, Mat2};
use crate::error::{CtsError, Result};
use crate::tensor::{C64, ONE, ZERO};
use crate::trotter::IsingModel;

/// Largest register handled by gate application.
pub const MAX_QUBITS: usize = 20;
/// Largest chain handled by exact evolution.
pub const MAX_EVOLVE: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(CtsError::shape(format!("state length {len} is not a power of two")));
        }
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CtsError::NonFinite);
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(CtsError::CapExceeded { what: "qubits".into(), size: n_qubits as u128, cap: MAX_QUBITS as u128 });
        }
        Ok(StateVector { n_qubits, amps })
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        if n > MAX_QUBITS {
            return Err(CtsError::CapExceeded { what: "qubits".into(), size: n as u128, cap: MAX_QUBITS as u128 });
        }
        let mut amps = vec![ZERO; 1 << n];
        amps[index] = ONE;
        StateVector::new(amps)
    }

    /// Same local state on every qubit.
    pub fn product(n: usize, local: [C64; 2]) -> Result<Self> {
        if n > MAX_QUBITS {
            return Err(CtsError::CapExceeded { what: "qubits".into(), size: n as u128, cap: MAX_QUBITS as u128 });
        }
        let amps = (0..1usize << n)
            .map(|x| (0..n).fold(ONE, |acc, a| acc * local[(x >> (n - 1 - a)) & 1]))
            .collect();
        StateVector::new(amps)
    }

    pub fn plus(n: usize) -> Result<Self> {
        let h = C64::new(1.0 / 2f64.sqrt(), 0.0);
        StateVector::product(n, [h, h])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.amps.len() != other.amps.len() {
            return Err(CtsError::shape("state lengths differ"));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }
}

/// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    let (na, nb) = (a.norm_sqr(), b.norm_sqr());
    if na == 0.0 || nb == 0.0 {
        return Err(CtsError::ZeroNorm("state in fidelity".into()));
    }
    Ok(a.inner(b)?.norm_sqr() / (na * nb))
}

/// Fidelity of two raw amplitude vectors.
pub fn fidelity_raw(a: &[C64], b: &[C64]) -> Result<f64> {
    fidelity(&StateVector::new(a.to_vec())?, &StateVector::new(b.to_vec())?)
}

fn check_wire(s: &StateVector, w: usize) -> Result<()> {
    if w >= s.n_qubits {
        return Err(CtsError::invalid(format!("wire {w} out of range for {} qubits", s.n_qubits)));
    }
    Ok(())
}

/// Apply a 2×2 matrix to qubit `w`.
pub fn apply_one(s: &mut StateVector, w: usize, m: &Mat2) -> Result<()> {
    check_wire(s, w)?;
    let bit = 1usize << (s.n_qubits - 1 - w);
    for x in 0..s.amps.len() {
        if x & bit == 0 {
            let (a0, a1) = (s.amps[x], s.amps[x | bit]);
            s.amps[x] = m[0] * a0 + m[1] * a1;
            s.amps[x | bit] = m[2] * a0 + m[3] * a1;
        }
    }
    Ok(())
}

/// Apply a 4×4 matrix to qubits `(w, w2)`, `w` the more significant.
pub fn apply_two(s: &mut StateVector, w: usize, w2: usize, m: &DMatrix<C64>) -> Result<()> {
    check_wire(s, w)?;
    check_wire(s, w2)?;
    if w == w2 || m.nrows() != 4 || m.ncols() != 4 {
        return Err(CtsError::invalid("two-qubit gate needs distinct wires and a 4x4 matrix"));
    }
    let b1 = 1usize << (s.n_qubits - 1 - w);
    let b2 = 1usize << (s.n_qubits - 1 - w2);
    for x in 0..s.amps.len() {
        if x & (b1 | b2) == 0 {
            let idx = [x, x | b2, x | b1, x | b1 | b2];
            let v: Vec<C64> = idx.iter().map(|&i| s.amps[i]).collect();
            for r in 0..4 {
                s.amps[idx[r]] = (0..4).map(|c| m[(r, c)] * v[c]).sum();
            }
        }
    }
    Ok(())
}

pub fn apply_gate(s: &StateVector, g: &Gate) -> Result<StateVector> {
    let mut out = s.clone();
    match *g {
        Gate::ControlledPhase { j, phi } => {
            check_wire(s, j + 1)?;
            let mask = (1usize << (s.n_qubits - 1 - j)) | (1usize << (s.n_qubits - 2 - j));
            let ph = if phi == std::f64::consts::PI { -ONE } else { C64::from_polar(1.0, phi) };
            for (x, a) in out.amps.iter_mut().enumerate() {
                if x & mask == mask {
                    *a *= ph;
                }
            }
        }
        _ => apply_one(&mut out, g.wires()[0], &g.local_matrix().expect("single-wire gate"))?,
    }
    Ok(out)
}

/// Run a circuit on `|0…0⟩`. Post-selections leave the branch unnormalized.
pub fn simulate(c: &Circuit) -> Result<StateVector> {
    c.validate()?;
    let mut s = StateVector::basis(c.n_wires, 0)?;
    for layer in &c.layers {
        for g in layer {
            s = apply_gate(&s, g)?;
        }
    }
    Ok(s)
}

/// `H|ψ⟩` for `H = Σ Z_a Z_{a+1} + B Σ X_a`.
pub fn apply_hamiltonian(model: &IsingModel, s: &StateVector) -> Result<StateVector> {
    let n = model.n_sites;
    if s.n_qubits != n {
        return Err(CtsError::shape(format!("state has {} qubits, model {n}", s.n_qubits)));
    }
    let mut out = vec![ZERO; s.amps.len()];
    for (x, a) in s.amps.iter().enumerate() {
        let mut diag = 0.0;
        for k in 0..n - 1 {
            let za = ((x >> (n - 1 - k)) & 1) as i32;
            let zb = ((x >> (n - 2 - k)) & 1) as i32;
            diag += if za == zb { 1.0 } else { -1.0 };
        }
        out[x] += a * diag;
        for k in 0..n {
            out[x ^ (1 << (n - 1 - k))] += a * model.b_field;
        }
    }
    StateVector::new(out)
}

pub fn energy(model: &IsingModel, s: &StateVector) -> Result<f64> {
    let hs = apply_hamiltonian(model, s)?;
    Ok(s.inner(&hs)?.re / s.norm_sqr())
}

/// Dense Hamiltonian matrix (small chains only).
pub fn dense_hamiltonian(model: &IsingModel) -> Result<DMatrix<f64>> {
    let n = model.n_sites;
    if n > 12 {
        return Err(CtsError::CapExceeded { what: "dense Hamiltonian sites".into(), size: n as u128, cap: 12 });
    }
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    for x in 0..dim {
        let e = StateVector::basis(n, x)?;
        let col = apply_hamiltonian(model, &e)?;
        for (y, a) in col.amps.iter().enumerate() {
            h[(y, x)] = a.re;
        }
    }
    Ok(h)
}

/// Lowest eigenvalue of the dense Hamiltonian.
pub fn ground_energy(model: &IsingModel) -> Result<f64> {
    let h = dense_hamiltonian(model)?;
    let e = SymmetricEigen::new(h);
    Ok(e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Normalized Walsh-Hadamard transform, i.e. `H^{⊗n}` on the register.
fn hadamard_all(v: &mut [C64]) {
    let len = v.len();
    let mut h = 1;
    while h < len {
        for i in (0..len).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let s = 1.0 / (len as f64).sqrt();
    for z in v.iter_mut() {
        *z *= s;
    }
}

/// Eigendecomposition of one parity sector of the rotated Hamiltonian.
struct Sector {
    states: Vec<usize>,
    vectors: DMatrix<f64>,
    values: Vec<f64>,
}

/// Exact propagator for one Ising model.
///
/// Conjugating by `H^{⊗n}` turns the model into `Σ X_a X_{a+1} + B Σ Z_a`,
/// which conserves the parity of the number of ones. Each parity sector is
/// diagonalized once, on first use.
pub struct ExactEvolver {
    model: IsingModel,
    sectors: [OnceLock<Sector>; 2],
}

impl ExactEvolver {
    pub fn new(model: IsingModel) -> Result<Self> {
        if model.n_sites > MAX_EVOLVE {
            return Err(CtsError::CapExceeded { what: "exact evolution sites".into(), size: model.n_sites as u128, cap: MAX_EVOLVE as u128 });
        }
        if model.n_sites < 1 || !model.b_field.is_finite() {
            return Err(CtsError::invalid("invalid Ising model"));
        }
        Ok(ExactEvolver { model, sectors: [OnceLock::new(), OnceLock::new()] })
    }

    fn sector(&self, parity: usize) -> &Sector {
        self.sectors[parity].get_or_init(|| {
            let n = self.model.n_sites;
            let states: Vec<usize> = (0..1usize << n).filter(|x| (x.count_ones() as usize) % 2 == parity).collect();
            let index: HashMap<usize, usize> = states.iter().enumerate().map(|(k, &x)| (x, k)).collect();
            let dim = states.len();
            let mut h = DMatrix::<f64>::zeros(dim, dim);
            for (k, &x) in states.iter().enumerate() {
                let mut diag = 0.0;
                for a in 0..n {
                    diag += if (x >> (n - 1 - a)) & 1 == 0 { self.model.b_field } else { -self.model.b_field };
                }
                h[(k, k)] = diag;
                for a in 0..n.saturating_sub(1) {
                    let y = x ^ (0b11 << (n - 2 - a));
                    h[(index[&y], k)] += 1.0;
                }
            }
            let e = SymmetricEigen::new(h);
            Sector { states, vectors: e.eigenvectors, values: e.eigenvalues.iter().copied().collect() }
        })
    }

    /// `e^{-itH}|ψ⟩`.
    pub fn evolve(&self, t: f64, initial: &StateVector) -> Result<StateVector> {
        let n = self.model.n_sites;
        if initial.n_qubits != n {
            return Err(CtsError::shape(format!("state has {} qubits, model {n}", initial.n_qubits)));
        }
        if !t.is_finite() {
            return Err(CtsError::NonFinite);
        }
        if t == 0.0 {
            return Ok(initial.clone());
        }
        let mut v = initial.amps.clone();
        hadamard_all(&mut v);
        let mut out = vec![ZERO; v.len()];
        for parity in 0..2 {
            let support = (0..v.len()).any(|x| (x.count_ones() as usize) % 2 == parity && v[x] != ZERO);
            if !support {
                continue;
            }
            let s = self.sector(parity);
            let dim = s.states.len();
            let re = nalgebra::DVector::from_iterator(dim, s.states.iter().map(|&x| v[x].re));
            let im = nalgebra::DVector::from_iterator(dim, s.states.iter().map(|&x| v[x].im));
            let cre = s.vectors.tr_mul(&re);
            let cim = s.vectors.tr_mul(&im);
            let mut rot_re = nalgebra::DVector::zeros(dim);
            let mut rot_im = nalgebra::DVector::zeros(dim);
            for k in 0..dim {
                let c = C64::new(cre[k], cim[k]) * C64::from_polar(1.0, -s.values[k] * t);
                rot_re[k] = c.re;
                rot_im[k] = c.im;
            }
            let back_re = &s.vectors * rot_re;
            let back_im = &s.vectors * rot_im;
            for (k, &x) in s.states.iter().enumerate() {
                out[x] = C64::new(back_re[k], back_im[k]);
            }
        }
        hadamard_all(&mut out);
        StateVector::new(out)
    }
}

fn evolver_cache() -> &'static Mutex<HashMap<(usize, u64), Arc<ExactEvolver>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<ExactEvolver>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared evolver for `model`, built once per process.
pub fn evolver(model: &IsingModel) -> Result<Arc<ExactEvolver>> {
    let key = (model.n_sites, model.b_field.to_bits());
    let mut cache = evolver_cache().lock().expect("evolver cache poisoned");
    if let Some(e) = cache.get(&key) {
        return Ok(e.clone());
    }
    let e = Arc::new(ExactEvolver::new(*model)?);
    cache.insert(key, e.clone());
    Ok(e)
}

/// `e^{-itH}|initial⟩` by exact diagonalization.
pub fn evolve_exact(model: &IsingModel, t: f64, initial: &StateVector) -> Result<StateVector> {
    evolver(model)?.evolve(t, initial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{pauli_x, random_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
        a.kronecker(b)
    }

    fn m2(m: Mat2) -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &m)
    }

    #[test]
    fn basic_gates() {
        let s = apply_gate(&StateVector::basis(1, 0).unwrap(), &Gate::OneQubit { target: 0, matrix: pauli_x() }).unwrap();
        assert_eq!(s.amplitudes(), &[ZERO, ONE]);
        let s = apply_gate(&StateVector::basis(2, 3).unwrap(), &Gate::cz(0)).unwrap();
        assert_eq!(s.amplitudes()[3], -ONE);
        assert!(apply_gate(&StateVector::basis(2, 0).unwrap(), &Gate::cz(1)).is_err());
    }

    #[test]
    fn gates_match_explicit_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(&mut rng);
        let v = random_unitary(&mut rng);
        let id = DMatrix::<C64>::identity(2, 2);
        let gates = [
            Gate::OneQubit { target: 1, matrix: u },
            Gate::ControlledPhase { j: 1, phi: 0.7 },
            Gate::OneQubit { target: 0, matrix: v },
        ];
        let mut cp = DMatrix::<C64>::identity(4, 4);
        cp[(3, 3)] = C64::from_polar(1.0, 0.7);
        let full = kron(&m2(v), &DMatrix::identity(4, 4)) * kron(&id, &cp) * kron(&kron(&id, &m2(u)), &id);
        let init: Vec<C64> = (0..8).map(|_| crate::mps::random_c64(&mut rng)).collect();
        let mut s = StateVector::new(init.clone()).unwrap();
        for g in &gates {
            s = apply_gate(&s, g).unwrap();
        }
        let want = full * nalgebra::DVector::from_vec(init);
        for (a, b) in s.amplitudes().iter().zip(want.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn fidelity_basics() {
        let z = StateVector::basis(1, 0).unwrap();
        let o = StateVector::basis(1, 1).unwrap();
        let p = StateVector::plus(1).unwrap();
        assert!((fidelity(&z, &z).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&z, &o).unwrap(), 0.0);
        assert!((fidelity(&z, &p).unwrap() - 0.5).abs() < 1e-15);
        assert!(fidelity(&z, &StateVector::new(vec![ZERO, ZERO]).unwrap()).is_err());
    }

    #[test]
    fn two_site_closed_form() {
        let model = IsingModel::new(2, 0.0).unwrap();
        let plus = StateVector::plus(2).unwrap();
        let h = 0.5;
        for t in [0.3, 1.1] {
            let s = evolve_exact(&model, t, &plus).unwrap();
            let c = C64::new(t.cos(), 0.0);
            let si = C64::new(0.0, -t.sin());
            // cos t |++⟩ - i sin t |−−⟩
            let want = [c * h + si * h, c * h - si * h, c * h - si * h, c * h + si * h];
            for (a, b) in s.amplitudes().iter().zip(want) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn evolution_conserves_and_composes() {
        let model = IsingModel::new(8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = StateVector::new((0..256).map(|_| crate::mps::random_c64(&mut rng)).collect()).unwrap();
        assert_eq!(evolve_exact(&model, 0.0, &init).unwrap(), init);
        let e0 = energy(&model, &init).unwrap();
        for t in [0.5, 1.0, 3.5] {
            let s = evolve_exact(&model, t, &init).unwrap();
            assert!((s.norm_sqr() - init.norm_sqr()).abs() < 1e-10 * init.norm_sqr());
            assert!((energy(&model, &s).unwrap() - e0).abs() < 1e-10);
        }
        let a = evolve_exact(&model, 0.7, &evolve_exact(&model, 0.4, &init).unwrap()).unwrap();
        let b = evolve_exact(&model, 1.1, &init).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn evolution_matches_dense_exponential() {
        let model = IsingModel::new(4, 0.7).unwrap();
        let h = dense_hamiltonian(&model).unwrap();
        let e = SymmetricEigen::new(h);
        let t = 0.9;
        let u = DMatrix::from_fn(16, 16, |r, c| {
            (0..16).map(|k| C64::from_polar(e.eigenvectors[(r, k)] * e.eigenvectors[(c, k)], -e.eigenvalues[k] * t)).sum::<C64>()
        });
        let init = StateVector::basis(4, 5).unwrap();
        let got = evolve_exact(&model, t, &init).unwrap();
        for r in 0..16 {
            assert!((got.amplitudes()[r] - u[(r, 5)]).norm() < 1e-12);
        }
    }

    #[test]
    fn caps() {
        assert!(ExactEvolver::new(IsingModel { n_sites: 15, b_field: 1.0 }).is_err());
        assert!(StateVector::new(vec![ONE; 3]).is_err());
    }
}
