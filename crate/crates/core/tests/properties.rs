//! Property tests over seeded random inputs.

use cts::circuit::{encode, Circuit, Gate};
use cts::fit::{fit_mps, FitConfig};
use cts::grid::{Direction, Grid2d, Truncation, EXACT_CAP};
use cts::mpo_compress::{compress_product, CompressConfig};
use cts::mps::{apply_mpo, canonicalize, fidelity, truncate_svd, Mpo, Mps, DENSE_CAP};
use cts::oracle::{self, evolve_exact, StateVector};
use cts::tensor::{contract_shared, svd_split};
use cts::trotter::{evolution_grid, full_step_mpo, IsingModel, TrotterPlan};
use cts::{Label, Leg, Tensor, C64};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(r: &mut ChaCha8Rng) -> C64 {
    C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)
}

fn leg(tag: u8, k: u32, d: usize) -> Leg {
    Leg::new(Label::new(tag, k, 0), d)
}

fn random_tensor(legs: Vec<Leg>, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(legs, |_| gaussian(r)).unwrap()
}

fn rel(a: &[C64], b: &[C64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let norm: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    (diff / norm).sqrt()
}

fn mpo_dense_action(op: &Mpo, psi: &Mps) -> Vec<C64> {
    let m = op.to_dense(DENSE_CAP).unwrap();
    let v = DVector::from_vec(psi.to_dense(DENSE_CAP).unwrap());
    (m * v).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn contraction_is_associative(seed: u64, d in prop::collection::vec(1usize..5, 5)) {
        let mut r = rng(seed);
        let a = random_tensor(vec![leg(9, 0, d[0]), leg(9, 1, d[1])], &mut r);
        let b = random_tensor(vec![leg(9, 1, d[1]), leg(9, 2, d[2]), leg(9, 5, d[4])], &mut r);
        let c = random_tensor(vec![leg(9, 2, d[2]), leg(9, 3, d[3])], &mut r);
        let left = contract_shared(&contract_shared(&a, &b).unwrap(), &c).unwrap();
        let right = contract_shared(&a, &contract_shared(&b, &c).unwrap()).unwrap();
        let right = right.permute(&left.labels()).unwrap();
        prop_assert!(rel(right.data(), left.data()) < 1e-10);
    }

    #[test]
    fn svd_split_reconstructs_and_accounts_weight(seed: u64, d in prop::collection::vec(1usize..5, 3), chi in 1usize..6) {
        let mut r = rng(seed);
        let a = random_tensor(vec![leg(9, 0, d[0]), leg(9, 1, d[1]), leg(9, 2, d[2])], &mut r);
        let left = [Label::new(9, 0, 0), Label::new(9, 2, 0)];
        let bond = Label::new(9, 7, 0);
        let full = svd_split(&a, &left, None, bond).unwrap();
        let back = contract_shared(&full.us(), &full.v).unwrap().permute(&a.labels()).unwrap();
        prop_assert!(rel(back.data(), a.data()) < 1e-10);
        let cut = svd_split(&a, &left, Some(chi), bond).unwrap();
        let approx = contract_shared(&cut.us(), &cut.v).unwrap().permute(&a.labels()).unwrap();
        let dist2 = approx.distance(&a).unwrap().powi(2);
        prop_assert!((dist2 - cut.discarded_weight).abs() < 1e-10 * a.norm_sqr().max(1.0));
    }

    #[test]
    fn mpo_application_matches_dense(seed: u64, n in 1usize..7, chi in 1usize..4, dchi in 1usize..4) {
        let mut r = rng(seed);
        let psi = Mps::random(&vec![2; n], chi, &mut r).unwrap();
        let op = Mpo::from_mps(&Mps::random(&vec![4; n], dchi, &mut r).unwrap(), &vec![2; n], &vec![2; n]).unwrap();
        let got = apply_mpo(&op, &psi).unwrap().to_dense(DENSE_CAP).unwrap();
        prop_assert!(rel(&got, &mpo_dense_action(&op, &psi)) < 1e-10);
    }

    #[test]
    fn unitary_mpo_preserves_norm(seed: u64, n in 2usize..9, dt in -1.0f64..1.0, b in 0.0f64..2.0) {
        let mut r = rng(seed);
        let psi = Mps::random(&vec![2; n], 3, &mut r).unwrap();
        let u = full_step_mpo(&IsingModel::new(n, b).unwrap(), dt).unwrap();
        let before = psi.norm_sqr().unwrap();
        let after = apply_mpo(&u, &psi).unwrap().norm_sqr().unwrap();
        prop_assert!((after - before).abs() < 1e-10 * before);
    }

    #[test]
    fn discarded_weight_bounds_infidelity(seed: u64, n in 2usize..8, chi in 1usize..5) {
        let mut r = rng(seed);
        let psi = Mps::random(&vec![2; n], 6, &mut r).unwrap();
        let (t, w) = truncate_svd(&psi, chi).unwrap();
        prop_assert!(w >= 1.0 - fidelity(&t, &psi).unwrap() - 1e-10);
    }

    #[test]
    fn canonicalization_is_idempotent(seed: u64, n in 1usize..7, center_frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let psi = Mps::random(&vec![2; n], 4, &mut r).unwrap();
        let c = ((n as f64 * center_frac) as usize).min(n - 1);
        let once = canonicalize(&psi, c).unwrap();
        let twice = canonicalize(&once, c).unwrap();
        let (a, b) = (once.to_dense(DENSE_CAP).unwrap(), twice.to_dense(DENSE_CAP).unwrap());
        prop_assert!(rel(&b, &a) < 1e-12);
        prop_assert!(rel(&a, &psi.to_dense(DENSE_CAP).unwrap()) < 1e-12);
    }

    #[test]
    fn exact_contraction_ignores_orientation(seed: u64, rows in 1usize..4, cols in 1usize..5, d in 1usize..3) {
        let mut r = rng(seed);
        let g = Grid2d::random(rows, cols, d, None, false, &mut r).unwrap();
        let exact = g.contract_exact(EXACT_CAP).unwrap()[0];
        let t = g.transposed().unwrap().contract_exact(EXACT_CAP).unwrap()[0];
        prop_assert!((t - exact).norm() <= 1e-10 * exact.norm().max(1e-300));
        for dir in [Direction::RightToLeft, Direction::TopToBottom, Direction::BottomToTop] {
            let v = g.contract_approx(dir, 64, Truncation::Svd).unwrap().value;
            prop_assert!((v - exact).norm() <= 1e-10 * exact.norm().max(1e-300), "{:?}", dir);
        }
    }

    #[test]
    fn compression_fidelity_at_full_bond_is_one(seed: u64, n in 2usize..6) {
        let mut r = rng(seed);
        let a = Mpo::from_mps(&Mps::random(&vec![4; n], 2, &mut r).unwrap(), &vec![2; n], &vec![2; n]).unwrap();
        let b = Mpo::from_mps(&Mps::random(&vec![4; n], 2, &mut r).unwrap(), &vec![2; n], &vec![2; n]).unwrap();
        let c = compress_product(&[a, b], &CompressConfig::new(4)).unwrap();
        prop_assert!((c.fidelity - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn encoded_circuits_are_normalized_and_identity_layers_vanish(seed: u64, n in 1usize..8, depth in 0usize..10, at_frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let c = Circuit::random(n, depth, &mut r);
        let amps = encode(&c).unwrap().grid_to_state(1 << n).unwrap();
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-9);
        let want = oracle::simulate(&c).unwrap();
        prop_assert!(amps.iter().zip(want.amplitudes()).all(|(x, y)| (x - y).norm() < 1e-9));

        let at = ((c.layers.len() + 1) as f64 * at_frac) as usize;
        let mut padded = c.clone();
        let id = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        padded.layers.insert(at.min(c.layers.len()), (0..n).map(|t| Gate::OneQubit { target: t, matrix: id }).collect());
        let amps2 = encode(&padded).unwrap().grid_to_state(1 << n).unwrap();
        prop_assert!(amps.iter().zip(&amps2).all(|(x, y)| (x - y).norm() < 1e-10));
    }

    #[test]
    fn trotter_grids_have_bond_two_and_unit_norm(n in 2usize..7, steps in 1usize..6, t in 0.0f64..2.0, b in 0.0f64..2.0) {
        let m = IsingModel::new(n, b).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = evolution_grid(&m, &TrotterPlan::new(t, steps).unwrap(), &[C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap();
        prop_assert!(g.max_bond() <= 2);
        let ids = vec![DMatrix::<C64>::identity(2, 2); n];
        let norm = g.double_layer(&ids).unwrap().contract_approx(Direction::TopToBottom, 1 << 12, Truncation::Svd).unwrap().value;
        prop_assert!((norm - 1.0).norm() < 1e-9);
    }

    #[test]
    fn exact_evolution_composes_and_is_unitary(n in 2usize..7, b in 0.0f64..2.0, t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let m = IsingModel::new(n, b).unwrap();
        let psi0 = StateVector::plus(n).unwrap();
        let direct = evolve_exact(&m, t1 + t2, &psi0).unwrap();
        let stepped = evolve_exact(&m, t2, &evolve_exact(&m, t1, &psi0).unwrap()).unwrap();
        prop_assert!(rel(stepped.amplitudes(), direct.amplitudes()) < 1e-10);
        prop_assert!((direct.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mps_fit_ignores_global_phase(seed: u64, phase in 0.0f64..6.283) {
        let m = IsingModel::new(6, 1.0).unwrap();
        let target = evolve_exact(&m, 1.0, &StateVector::plus(6).unwrap()).unwrap();
        let rotated: Vec<C64> = target.amplitudes().iter().map(|z| z * C64::from_polar(1.0, phase)).collect();
        let cfg = FitConfig { max_sweeps: 40, ..FitConfig::seeded(seed % 1000) };
        let a = fit_mps(target.amplitudes(), &[2; 6], 2, &cfg).unwrap();
        let b = fit_mps(&rotated, &[2; 6], 2, &cfg).unwrap();
        prop_assert!((a.fidelity - b.fidelity).abs() < 1e-6);
        prop_assert!(a.history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}
