//! Quantum circuits and their grid encoding.
//!
//! Row 0 of the encoded grid prepares `|0…0⟩`; row `i ≥ 1` holds layer
//! `i-1`. Each tensor is `B[l, r, u, d]` with `u` the incoming and `d` the
//! outgoing qubit value. A horizontal link is broken by keeping only entries
//! whose left (right) index is 1; on the grid boundary that slice becomes the
//! single index of the dimension-one leg. The down legs of the last row are
//! the physical legs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CtsError, Result};
use crate::grid::{Direction, Grid2d, Truncation};
use crate::tensor::{Leg, Label, Tensor, C64, ONE, ZERO};

/// Row-major 2×2 matrix `[m00, m01, m10, m11]`, mapping input column to
/// output row.
pub type Mat2 = [C64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "g")]
pub enum Gate {
    #[serde(rename = "u1")]
    OneQubit {
        #[serde(rename = "t")]
        target: usize,
        #[serde(rename = "m", serialize_with = "ser_mat", deserialize_with = "de_mat")]
        matrix: Mat2,
    },
    /// `diag(1, 1, 1, e^{iφ})` on wires `j, j+1`.
    #[serde(rename = "cphase")]
    ControlledPhase { j: usize, phi: f64 },
    /// Projector onto `|outcome⟩`.
    #[serde(rename = "post")]
    PostSelect {
        #[serde(rename = "t")]
        target: usize,
        #[serde(rename = "o")]
        outcome: u8,
    },
}

fn ser_mat<S: Serializer>(m: &Mat2, s: S) -> std::result::Result<S::Ok, S::Error> {
    let pairs: Vec<[f64; 2]> = m.iter().map(|z| [z.re, z.im]).collect();
    pairs.serialize(s)
}

fn de_mat<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Mat2, D::Error> {
    let pairs: [[f64; 2]; 4] = Deserialize::deserialize(d)?;
    Ok(pairs.map(|[re, im]| C64::new(re, im)))
}

pub fn hadamard() -> Mat2 {
    let h = C64::new(1.0 / 2f64.sqrt(), 0.0);
    [h, h, h, -h]
}

pub fn pauli_x() -> Mat2 {
    [ZERO, ONE, ONE, ZERO]
}

pub fn identity2() -> Mat2 {
    [ONE, ZERO, ZERO, ONE]
}

impl Gate {
    pub fn h(target: usize) -> Gate {
        Gate::OneQubit { target, matrix: hadamard() }
    }

    pub fn cz(j: usize) -> Gate {
        Gate::ControlledPhase { j, phi: PI }
    }

    /// Wires touched by the gate.
    pub fn wires(&self) -> Vec<usize> {
        match *self {
            Gate::OneQubit { target, .. } | Gate::PostSelect { target, .. } => vec![target],
            Gate::ControlledPhase { j, .. } => vec![j, j + 1],
        }
    }

    /// Single-wire matrix, if the gate acts on one wire.
    pub fn local_matrix(&self) -> Option<Mat2> {
        match *self {
            Gate::OneQubit { matrix, .. } => Some(matrix),
            Gate::PostSelect { outcome, .. } => Some(if outcome == 0 { [ONE, ZERO, ZERO, ZERO] } else { [ZERO, ZERO, ZERO, ONE] }),
            Gate::ControlledPhase { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    #[serde(rename = "wires")]
    pub n_wires: usize,
    pub layers: Vec<Vec<Gate>>,
}

impl Circuit {
    pub fn new(n_wires: usize) -> Self {
        Circuit { n_wires, layers: Vec::new() }
    }

    /// Append a gate in the earliest layer after every layer that touches
    /// one of its wires.
    pub fn push(&mut self, gate: Gate) {
        let wires = gate.wires();
        let mut slot = self.layers.len();
        while slot > 0 && !self.layers[slot - 1].iter().any(|g| g.wires().iter().any(|w| wires.contains(w))) {
            slot -= 1;
        }
        if slot == self.layers.len() {
            self.layers.push(Vec::new());
        }
        self.layers[slot].push(gate);
    }

    /// Append a whole layer without merging.
    pub fn push_layer(&mut self, layer: Vec<Gate>) {
        self.layers.push(layer);
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_wires == 0 {
            return Err(CtsError::invalid("circuit needs at least one wire"));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            let mut used = vec![false; self.n_wires];
            for g in layer {
                if let Gate::ControlledPhase { phi, .. } = g {
                    if !phi.is_finite() {
                        return Err(CtsError::NonFinite);
                    }
                }
                if let Gate::PostSelect { outcome, .. } = g {
                    if *outcome > 1 {
                        return Err(CtsError::invalid(format!("post-selection outcome {outcome} in layer {k}")));
                    }
                }
                if let Gate::OneQubit { matrix, .. } = g {
                    if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                        return Err(CtsError::NonFinite);
                    }
                }
                for w in g.wires() {
                    if w >= self.n_wires {
                        return Err(CtsError::invalid(format!("gate {g:?} in layer {k} touches wire {w} of {}", self.n_wires)));
                    }
                    if used[w] {
                        return Err(CtsError::invalid(format!("layer {k} uses wire {w} twice")));
                    }
                    used[w] = true;
                }
            }
        }
        Ok(())
    }

    /// Random circuit: each layer alternately offers adjacent pairs a
    /// controlled phase (probability 1/2) and fills the rest with Haar-like
    /// single-qubit unitaries.
    pub fn random<R: Rng + ?Sized>(n_wires: usize, depth: usize, rng: &mut R) -> Circuit {
        let mut c = Circuit::new(n_wires);
        for k in 0..depth {
            let mut layer = Vec::new();
            let mut j = 0;
            while j < n_wires {
                if j + 1 < n_wires && (j + k) % 2 == 0 && rng.random::<f64>() < 0.5 {
                    let phi = if rng.random::<f64>() < 0.3 { PI } else { rng.random_range(-PI..PI) };
                    layer.push(Gate::ControlledPhase { j, phi });
                    j += 2;
                } else {
                    layer.push(Gate::OneQubit { target: j, matrix: random_unitary(rng) });
                    j += 1;
                }
            }
            c.push_layer(layer);
        }
        c
    }
}

/// `e^{iα} [[e^{iβ} cos θ, e^{iγ} sin θ], [-e^{-iγ} sin θ, e^{-iβ} cos θ]]`
/// with random angles.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let theta = rng.random::<f64>().sqrt().asin();
    let [a, b, g]: [f64; 3] = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let ph = C64::from_polar(1.0, a);
    [
        ph * C64::from_polar(theta.cos(), b),
        ph * C64::from_polar(theta.sin(), g),
        -ph * C64::from_polar(theta.sin(), -g),
        ph * C64::from_polar(theta.cos(), -b),
    ]
}

/// Logical 2×2×2×2 tensor `B[l][r][u][d]`.
pub type Logical = [[[[C64; 2]; 2]; 2]; 2];

fn logical_zero() -> Logical {
    [[[[ZERO; 2]; 2]; 2]; 2]
}

fn one_qubit_tensor(m: &Mat2) -> Logical {
    let mut b = logical_zero();
    for u in 0..2 {
        for d in 0..2 {
            b[1][1][u][d] = m[2 * d + u];
        }
    }
    b
}

/// Left and right tensors of `diag(1, 1, 1, e^{iφ})`, joined by their shared
/// horizontal link.
pub fn phase_gate_pair(phi: f64) -> (Logical, Logical) {
    let mut a = logical_zero();
    let mut b = logical_zero();
    a[1][0][0][0] = ONE;
    a[1][0][1][1] = ONE;
    a[1][1][1][1] = ONE;
    b[0][1][0][0] = ONE;
    b[0][1][1][1] = ONE;
    b[1][1][1][1] = if phi == PI { C64::new(-2.0, 0.0) } else { C64::from_polar(1.0, phi) - ONE };
    (a, b)
}

/// Cut a logical tensor down to grid legs. Boundary links keep only index 1
/// (index 0 for the initialization row, which uses `l = r = 0`).
fn place(b: &Logical, left_dim: usize, right_dim: usize, up_dim: usize, last: bool, boundary_index: usize) -> Result<Tensor> {
    let pick = |dim: usize, k: usize| if dim == 1 { boundary_index } else { k };
    let dims = if last { vec![up_dim, 1, left_dim, right_dim, 2] } else { vec![up_dim, 2, left_dim, right_dim] };
    let legs = dims.iter().enumerate().map(|(k, &d)| Leg::new(Label::new(0, k as u32, 0), d)).collect();
    Tensor::from_fn(legs, |x| {
        let (u, d) = (x[0], if last { x[4] } else { x[1] });
        let u = if up_dim == 1 { 0 } else { u };
        b[pick(left_dim, x[2])][pick(right_dim, x[3])][u][d]
    })
}

/// Encode a circuit as a grid with one row per layer below an
/// initialization row. All interior bonds have dimension 2.
pub fn encode(c: &Circuit) -> Result<Grid2d> {
    c.validate()?;
    let n = c.n_wires;
    let rows = 1 + c.layers.len();
    let hdim = |j: usize| if j == 0 || j == n { 1 } else { 2 };
    let mut tensors = Vec::with_capacity(rows * n);
    let mut init = logical_zero();
    init[0][0][0][0] = ONE;
    for j in 0..n {
        tensors.push(place(&init, hdim(j), hdim(j + 1), 1, rows == 1, 0)?);
    }
    for (k, layer) in c.layers.iter().enumerate() {
        let mut row: Vec<Option<Logical>> = vec![None; n];
        for g in layer {
            match g {
                Gate::ControlledPhase { j, phi } => {
                    let (a, b) = phase_gate_pair(*phi);
                    row[*j] = Some(a);
                    row[*j + 1] = Some(b);
                }
                _ => {
                    let t = g.wires()[0];
                    row[t] = Some(one_qubit_tensor(&g.local_matrix().expect("single-wire gate")));
                }
            }
        }
        let last = k + 1 == c.layers.len();
        for (j, slot) in row.into_iter().enumerate() {
            let b = slot.unwrap_or_else(|| one_qubit_tensor(&identity2()));
            tensors.push(place(&b, hdim(j), hdim(j + 1), 2, last, 1)?);
        }
    }
    Grid2d::new(rows, n, tensors)
}

/// Weighted graph state: `|+⟩^n` followed by `diag(1,1,1,e^{iφ_ab})` on every
/// pair `a < b` with nonzero phase. Non-adjacent pairs are brought together
/// by SWAP chains and restored afterwards.
pub fn weighted_graph_circuit(n: usize, phases: &DMatrix<f64>) -> Result<Circuit> {
    if phases.nrows() != n || phases.ncols() != n {
        return Err(CtsError::shape(format!("phase matrix must be {n}x{n}")));
    }
    if phases.iter().any(|x| !x.is_finite()) {
        return Err(CtsError::NonFinite);
    }
    let mut c = Circuit::new(n);
    for w in 0..n {
        c.push(Gate::h(w));
    }
    for a in 0..n {
        for b in a + 1..n {
            let phi = phases[(a, b)];
            if phi == 0.0 {
                continue;
            }
            for k in a..b - 1 {
                push_swap(&mut c, k);
            }
            c.push(Gate::ControlledPhase { j: b - 1, phi });
            for k in (a..b - 1).rev() {
                push_swap(&mut c, k);
            }
        }
    }
    Ok(c)
}

pub fn encode_weighted_graph_state(n: usize, phases: &DMatrix<f64>) -> Result<Grid2d> {
    encode(&weighted_graph_circuit(n, phases)?)
}

/// SWAP of wires `j, j+1` as three CNOTs, each `H · CZ · H` on the target.
pub fn push_swap(c: &mut Circuit, j: usize) {
    for target in [j + 1, j, j + 1] {
        c.push(Gate::h(target));
        c.push(Gate::cz(j));
        c.push(Gate::h(target));
    }
}

/// Outcome of [`simulate_postselected`].
#[derive(Clone, Debug)]
pub struct PostselectedBranch {
    /// Unnormalized branch amplitudes, when the state is small enough.
    pub amplitudes: Option<Vec<C64>>,
    /// Squared norm of the branch.
    pub weight: f64,
}

/// Largest state expanded densely by [`simulate_postselected`].
pub const DENSE_WIRES: usize = 16;

/// Encode and contract. Small circuits are contracted exactly; larger ones
/// only yield the branch weight, via a boundary-MPS contraction of the norm
/// network at `chi_cut`.
pub fn simulate_postselected(c: &Circuit, chi_cut: usize) -> Result<PostselectedBranch> {
    let g = encode(c)?;
    let (amplitudes, weight) = if c.n_wires <= DENSE_WIRES {
        match g.grid_to_state(1 << DENSE_WIRES) {
            Ok(v) => {
                let w = v.iter().map(|z| z.norm_sqr()).sum();
                (Some(v), w)
            }
            Err(CtsError::CapExceeded { .. }) => (None, approx_weight(&g, chi_cut)?),
            Err(e) => return Err(e),
        }
    } else {
        (None, approx_weight(&g, chi_cut)?)
    };
    if !(weight > 1e-28) {
        return Err(CtsError::PostselectionImpossible);
    }
    Ok(PostselectedBranch { amplitudes, weight })
}

fn approx_weight(g: &Grid2d, chi_cut: usize) -> Result<f64> {
    let ids: Vec<DMatrix<C64>> = g.phys_dims().iter().map(|&d| DMatrix::identity(d, d)).collect();
    let r = g.double_layer(&ids)?.contract_approx(Direction::LeftToRight, chi_cut, Truncation::default())?;
    Ok(r.value.re)
}
