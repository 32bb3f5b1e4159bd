//! Concatenated tensor networks: dense labelled tensors, MPS/MPO machinery,
//! boundary-MPS contraction of 2D grids with error correction, circuit and
//! Trotter encodings, variational fitting, loop-augmented trees and Monte
//! Carlo contraction.

pub mod circuit;
pub mod error;
pub mod fit;
pub mod grid;
pub mod linalg;
pub mod monte_carlo;
pub mod mpo_compress;
pub mod mps;
pub mod oracle;
pub mod tensor;
pub mod tree;
pub mod trotter;

pub use error::{CtsError, Result};
pub use tensor::{Label, Leg, LegPairing, Tensor, C64};
