use lap_core::walker::{simulate_walkers, WalkerConfig, WalkerRow};
use rand::rngs::StdRng;
use rand::{Rng as _, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

fn row(rows: &[WalkerRow], leniency: f64, shift: f64) -> WalkerRow {
    *rows
        .iter()
        .find(|r| r.leniency == leniency && r.mean_shift == shift)
        .unwrap()
}

/// Independent Monte Carlo: Box–Muller normals from a different generator.
fn independent_mean_final_r(shift: f64, leniency: f64, walkers: usize, steps: usize) -> f64 {
    let mut rng = StdRng::seed_from_u64(12345);
    let mut total = 0.0;
    for _ in 0..walkers {
        let mut r: i64 = 0;
        for _ in 0..steps {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            r = if z + shift > leniency {
                r + 1
            } else {
                (r - 1).max(0)
            };
        }
        total += r as f64;
    }
    total / walkers as f64
}

#[test]
fn unshifted_walkers_stay_near_zero() {
    let cfg = WalkerConfig {
        mean_shifts: vec![0.0],
        leniencies: vec![3.0],
        ..WalkerConfig::default()
    };
    let rows = simulate_walkers(&cfg).unwrap();
    assert!(rows[0].mean_distrust < 1.0, "{:?}", rows[0]);
    assert!(independent_mean_final_r(0.0, 3.0, 100, 10_000) < 1.0);
}

#[test]
fn shifted_walkers_drift_to_full_depression() {
    let cfg = WalkerConfig {
        mean_shifts: vec![3.0],
        leniencies: vec![1.0],
        ..WalkerConfig::default()
    };
    let rows = simulate_walkers(&cfg).unwrap();
    let p = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(1.0 - 3.0);
    let drift = 2.0 * p - 1.0;
    let expected_r = drift * 10_000.0;
    assert!(rows[0].mean_depression > 0.9);
    // drift ≈ 0.954 per step; the ensemble mean is within a few sd of it
    assert!(
        (rows[0].mean_distrust - expected_r).abs() < 0.01 * expected_r,
        "{} vs {expected_r}",
        rows[0].mean_distrust
    );
}

#[test]
fn increment_probability_matches_normal_tail() {
    let cfg = WalkerConfig {
        mean_shifts: vec![0.0, 1.0, 2.0],
        leniencies: vec![0.5, 1.0, 2.0],
        n_walkers: 50,
        n_steps: 4000,
        ..WalkerConfig::default()
    };
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = (cfg.n_walkers * cfg.n_steps) as f64;
    for r in simulate_walkers(&cfg).unwrap() {
        let p = 1.0 - normal.cdf(r.leniency - r.mean_shift);
        let se = (p * (1.0 - p) / n).sqrt();
        assert!(
            (r.increment_fraction - p).abs() < 5.0 * se,
            "{r:?} expected {p}"
        );
    }
}

#[test]
fn distrust_is_monotone_in_leniency_and_shift() {
    let cfg = WalkerConfig {
        n_walkers: 30,
        n_steps: 3000,
        ..WalkerConfig::default()
    };
    let rows = simulate_walkers(&cfg).unwrap();
    for &s in &cfg.mean_shifts {
        for w in cfg.leniencies.windows(2) {
            assert!(row(&rows, w[1], s).mean_distrust <= row(&rows, w[0], s).mean_distrust);
        }
    }
    for &l in &cfg.leniencies {
        for w in cfg.mean_shifts.windows(2) {
            assert!(row(&rows, l, w[1]).mean_distrust >= row(&rows, l, w[0]).mean_distrust);
        }
    }
}
