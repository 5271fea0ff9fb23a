//! Hyperparameter grids over leniency, depression strength, history length
//! and corruption rate.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::run_experiment;

/// One grid point with the values it sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub leniency: f64,
    pub depression_strength: f64,
    pub history_length: usize,
    pub corruption_rate: f64,
}

impl GridPoint {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.lap.leniency = self.leniency;
        cfg.lap.depression_strength = self.depression_strength;
        cfg.lap.history_length = self.history_length;
        cfg.sources.corruption.rate = self.corruption_rate;
        cfg
    }
}

/// Aggregate over all seeds of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub leniency: f64,
    pub depression_strength: f64,
    pub history_length: usize,
    pub corruption_rate: f64,
    pub n_seeds: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std_accuracy: f64,
    pub mean_val_accuracy: f64,
    pub mean_step_micros: f64,
}

fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
    if values.is_empty() {
        vec![fallback]
    } else {
        values.to_vec()
    }
}

/// Cartesian product of the sweep axes; an empty axis contributes the base
/// config's value.
pub fn grid_points(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let g = &cfg.sweep;
    let mut points = Vec::new();
    for &rate in &axis(&g.corruption_rate, cfg.sources.corruption.rate) {
        for &h in &axis(&g.history_length, cfg.lap.history_length) {
            for &ds in &axis(&g.depression_strength, cfg.lap.depression_strength) {
                for &l in &axis(&g.leniency, cfg.lap.leniency) {
                    points.push(GridPoint {
                        leniency: l,
                        depression_strength: ds,
                        history_length: h,
                        corruption_rate: rate,
                    });
                }
            }
        }
    }
    points
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Runs every grid point for every seed. Per-point outputs go to
/// `out_dir/point_NNN/` and the aggregate to `out_dir/sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let points = grid_points(cfg);
    let mut rows = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let point_cfg = point.apply(cfg);
        point_cfg.validate()?;
        let dir = out_dir.map(|d| d.join(format!("point_{i:03}")));
        let runs = run_experiment(&point_cfg, dir.as_deref())?;
        let acc: Vec<f64> = runs.iter().map(|r| r.final_test_accuracy()).collect();
        let val: Vec<f64> = runs.iter().map(|r| r.final_val_accuracy()).collect();
        let micros: Vec<f64> = runs.iter().map(|r| r.mean_step_micros).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        rows.push(SweepRow {
            point: i,
            leniency: point.leniency,
            depression_strength: point.depression_strength,
            history_length: point.history_length,
            corruption_rate: point.corruption_rate,
            n_seeds: runs.len(),
            mean_accuracy,
            std_accuracy,
            mean_val_accuracy: mean_std(&val).0,
            mean_step_micros: mean_std(&micros).0,
        });
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BlobSpec;

    #[test]
    fn grid_is_cartesian() {
        let mut cfg = BlobSpec::default().motivation();
        cfg.sweep.leniency = vec![0.4, 0.8];
        cfg.sweep.history_length = vec![25, 50];
        cfg.sweep.corruption_rate = vec![0.5, 1.0];
        let pts = grid_points(&cfg);
        assert_eq!(pts.len(), 8);
        assert!(pts.iter().all(|p| p.depression_strength == 1.0));
    }

    #[test]
    fn empty_grid_is_the_base_point() {
        let cfg = BlobSpec::default().motivation();
        let pts = grid_points(&cfg);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].apply(&cfg), cfg);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[0.5]).1, 0.0);
    }
}
