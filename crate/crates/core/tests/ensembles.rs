//! Statistical invariants checked on seeded ensembles.

use std::time::Instant;

use cts::grid::{Direction, Grid2d, Truncation, EXACT_CAP};
use cts::monte_carlo::{mc_contract, transfer_sum, McConfig, TorusNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn grids(n: usize, seed0: u64, positive: bool) -> Vec<Grid2d> {
    (0..n as u64)
        .map(|s| Grid2d::random(4, 5, 2, None, positive, &mut ChaCha8Rng::seed_from_u64(seed0 + s)).unwrap())
        .collect()
}

#[test]
fn approximate_error_does_not_grow_with_chi() {
    let gs = grids(20, 7000, false);
    let exact: Vec<_> = gs.iter().map(|g| g.contract_exact(EXACT_CAP).unwrap()[0]).collect();
    let mut prev = f64::INFINITY;
    for chi in 1..=4 {
        let errs = gs
            .iter()
            .zip(&exact)
            .map(|(g, e)| (g.contract_approx(Direction::LeftToRight, chi, Truncation::default()).unwrap().value - e).norm() / e.norm())
            .collect();
        let m = median(errs);
        assert!(m <= prev * (1.0 + 1e-9), "chi {chi}: {m} > {prev}");
        prev = m;
    }
    assert!(prev < 1e-10);
}

#[test]
fn correction_beats_raw_in_median() {
    for positive in [true, false] {
        let gs = grids(30, 7100, positive);
        let mut gain = Vec::new();
        for g in &gs {
            let e = g.contract_exact(EXACT_CAP).unwrap()[0];
            let r = g.contract_with_correction(Direction::LeftToRight, 2, Truncation::Svd).unwrap();
            gain.push((r.corrected - e).norm() - (r.value - e).norm());
        }
        assert!(median(gain) <= 0.0, "positive={positive}");
    }
}

#[test]
fn corrected_error_is_second_order() {
    let mut ratios = Vec::new();
    let mut seed = 7200;
    while ratios.len() < 40 {
        let g = Grid2d::random(5, 5, 2, None, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        seed += 1;
        let e = g.contract_exact(EXACT_CAP).unwrap()[0];
        let r = g.contract_with_correction(Direction::LeftToRight, 3, Truncation::Svd).unwrap();
        let raw = (r.value - e).norm() / e.norm();
        if raw > 0.0 && raw <= 0.3 {
            ratios.push((r.corrected - e).norm() / e.norm() / (raw * raw));
        }
    }
    let m = median(ratios);
    assert!(m <= 10.0, "median corrected/ε² = {m}");
}

fn cfg(samples: usize, seed: u64) -> McConfig {
    McConfig { n_samples: samples, seed, ..McConfig::default() }
}

#[test]
fn std_error_scales_as_inverse_sqrt_samples() {
    let t = TorusNetwork::random_real(3, 3, 2, 0.1, 1.0, 40).unwrap();
    let ratios = (0..9)
        .map(|s| {
            let small = mc_contract(&t, &cfg(2000, 100 + s)).unwrap().std_error;
            let large = mc_contract(&t, &cfg(32000, 200 + s)).unwrap().std_error;
            small / large
        })
        .collect();
    let m = median(ratios);
    assert!((3.0..=5.5).contains(&m), "{m}");
}

#[test]
fn estimate_does_not_depend_on_split_row() {
    let t = TorusNetwork::random_real(4, 3, 2, 0.2, 1.0, 41).unwrap();
    let exact = transfer_sum(&t).unwrap().re;
    let base = mc_contract(&t, &McConfig { split_row: Some(1), ..cfg(20000, 5) }).unwrap();
    for split in 2..=4 {
        let r = mc_contract(&t, &McConfig { split_row: Some(split), ..cfg(20000, 5 + split as u64) }).unwrap();
        let bar = 3.0 * (r.std_error.powi(2) + base.std_error.powi(2)).sqrt();
        assert!((r.estimate.re - base.estimate.re).abs() <= bar, "split {split}");
        assert!((r.estimate.re - exact).abs() <= 3.0 * r.std_error + 1e-9 * exact, "split {split} vs exact");
    }
}

#[test]
fn partition_sum_estimate_costs_at_most_double() {
    let t = TorusNetwork::random_real(4, 4, 2, 0.1, 1.0, 42).unwrap();
    let time = |estimate_z: bool| {
        let runs: Vec<f64> = (0..5)
            .map(|s| {
                let start = Instant::now();
                mc_contract(&t, &McConfig { estimate_z, ..cfg(20000, s) }).unwrap();
                start.elapsed().as_secs_f64()
            })
            .collect();
        median(runs)
    };
    let (without, with) = (time(false), time(true));
    assert!(with <= 2.0 * without, "{with} vs {without}");
}
