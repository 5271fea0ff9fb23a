//! Random-walk model of distrust for a source whose standardized losses are
//! normal with a shifted mean.
//!
//! Each walker draws `N(shift, 1)` per step and moves its distrust up by one
//! when the draw exceeds the leniency and down by one otherwise, never below
//! zero. This is the distrust update with the other sources' weighted
//! statistics fixed at mean 0 and standard deviation 1.
//!
//! Walker `i` always consumes the same standard-normal stream, whatever grid
//! point it is evaluated at, so results across leniencies and shifts are
//! computed on common random numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::depression_factor;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerConfig {
    pub mean_shifts: Vec<f64>,
    pub leniencies: Vec<f64>,
    pub n_walkers: usize,
    pub n_steps: usize,
    pub depression_strength: f64,
    pub seed: u64,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        Self {
            mean_shifts: vec![0.0, 1.0, 2.0, 3.0],
            leniencies: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            n_walkers: 100,
            n_steps: 10_000,
            depression_strength: 1.0,
            seed: 0,
        }
    }
}

impl WalkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_walkers == 0 || self.n_steps == 0 {
            return Err(Error::Config("n_walkers and n_steps must be >= 1".into()));
        }
        if self.mean_shifts.is_empty() || self.leniencies.is_empty() {
            return Err(Error::Config("empty shift or leniency grid".into()));
        }
        if self.mean_shifts.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("mean shifts must be finite".into()));
        }
        if self.leniencies.iter().any(|l| l.is_nan()) {
            return Err(Error::Config("leniency grid contains NaN".into()));
        }
        if !(self.depression_strength > 0.0 && self.depression_strength.is_finite()) {
            return Err(Error::Config("depression_strength must be > 0".into()));
        }
        Ok(())
    }
}

/// Ensemble averages for one `(leniency, shift)` grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkerRow {
    pub leniency: f64,
    pub mean_shift: f64,
    /// Mean over walkers of the final distrust.
    pub mean_distrust: f64,
    /// Mean over walkers of the depression at the final distrust.
    pub mean_depression: f64,
    /// Mean over walkers of the distrust averaged over all steps.
    pub mean_time_averaged_distrust: f64,
    /// Fraction of all steps that incremented distrust.
    pub increment_fraction: f64,
}

#[derive(Debug, Clone, Default)]
struct WalkerOutcome {
    final_distrust: Vec<u64>,
    distrust_sum: Vec<f64>,
    increments: Vec<u64>,
}

fn run_walker(config: &WalkerConfig, grid: &[(f64, f64)], walker: usize) -> WalkerOutcome {
    let mut rng = Rng::new(config.seed).fork(walker as u64);
    let g = grid.len();
    let mut distrust = vec![0u64; g];
    let mut sum = vec![0.0; g];
    let mut increments = vec![0u64; g];
    for _ in 0..config.n_steps {
        let z = rng.normal();
        for (k, &(leniency, shift)) in grid.iter().enumerate() {
            if z + shift > leniency {
                distrust[k] += 1;
                increments[k] += 1;
            } else {
                distrust[k] = distrust[k].saturating_sub(1);
            }
            sum[k] += distrust[k] as f64;
        }
    }
    WalkerOutcome {
        final_distrust: distrust,
        distrust_sum: sum,
        increments,
    }
}

/// Simulates every `(leniency, shift)` combination; rows are ordered by
/// shift, then leniency, as given in the config.
pub fn simulate_walkers(config: &WalkerConfig) -> Result<Vec<WalkerRow>> {
    config.validate()?;
    let grid: Vec<(f64, f64)> = config
        .mean_shifts
        .iter()
        .flat_map(|&s| config.leniencies.iter().map(move |&l| (l, s)))
        .collect();

    let outcomes: Vec<WalkerOutcome> = (0..config.n_walkers)
        .into_par_iter()
        .map(|w| run_walker(config, &grid, w))
        .collect();

    let nw = config.n_walkers as f64;
    let steps = config.n_steps as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &(leniency, mean_shift))| {
            let mut r = 0.0;
            let mut d = 0.0;
            let mut avg = 0.0;
            let mut inc = 0.0;
            for o in &outcomes {
                r += o.final_distrust[k] as f64;
                d += depression_factor(config.depression_strength, o.final_distrust[k]);
                avg += o.distrust_sum[k] / steps;
                inc += o.increments[k] as f64;
            }
            WalkerRow {
                leniency,
                mean_shift,
                mean_distrust: r / nw,
                mean_depression: d / nw,
                mean_time_averaged_distrust: avg / nw,
                increment_fraction: inc / (nw * steps),
            }
        })
        .collect())
}
