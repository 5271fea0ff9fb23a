use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::diagnostic::{normality_report, NormalityReport};
use super::{LossHistory, SourceId};
use crate::error::{Error, Result};
use crate::model::GradientSet;

/// Fixed factor between the configured depression strength and the `tanh`
/// argument per unit of distrust.
pub const DEPRESSION_SCALE: f64 = 0.005;

fn default_leniency() -> f64 {
    0.8
}
fn default_depression_strength() -> f64 {
    1.0
}
fn default_history_length() -> usize {
    25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LapParams {
    /// Multiplier on the weighted standard deviation in the distrust test.
    #[serde(default = "default_leniency")]
    pub leniency: f64,
    /// Rate at which distrust turns into depression.
    #[serde(default = "default_depression_strength")]
    pub depression_strength: f64,
    /// Number of recent losses kept per source.
    #[serde(default = "default_history_length")]
    pub history_length: usize,
    /// Steps to wait after all histories fill before depressing gradients.
    #[serde(default)]
    pub hold_off: usize,
}

impl Default for LapParams {
    fn default() -> Self {
        Self {
            leniency: default_leniency(),
            depression_strength: default_depression_strength(),
            history_length: default_history_length(),
            hold_off: 0,
        }
    }
}

impl LapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.leniency.is_finite() && self.leniency > 0.0) {
            return Err(Error::Config(format!(
                "lap.leniency must be finite and > 0, got {}",
                self.leniency
            )));
        }
        if !(self.depression_strength.is_finite() && self.depression_strength > 0.0) {
            return Err(Error::Config(format!(
                "lap.depression_strength must be finite and > 0, got {}",
                self.depression_strength
            )));
        }
        if self.history_length < 2 {
            return Err(Error::Config(format!(
                "lap.history_length must be >= 2, got {}",
                self.history_length
            )));
        }
        Ok(())
    }
}

/// `tanh²(0.005 · strength · distrust)`.
pub fn depression_factor(depression_strength: f64, distrust: u64) -> f64 {
    if distrust == 0 {
        return 0.0;
    }
    let t = (DEPRESSION_SCALE * depression_strength * distrust as f64).tanh();
    t * t
}

/// `1 - tanh²(x) = sech²(x)`, evaluated without cancellation and floored at
/// the smallest positive normal so gradients are never zeroed outright.
pub fn gradient_scale_factor(depression_strength: f64, distrust: u64) -> f64 {
    if distrust == 0 {
        return 1.0;
    }
    let c = (DEPRESSION_SCALE * depression_strength * distrust as f64).cosh();
    (1.0 / (c * c)).max(f64::MIN_POSITIVE)
}

/// Multiplies every gradient by `1 - d`. `d` must lie in `[0, 1)`.
pub fn scale_gradients(grads: &GradientSet, d: f64) -> Result<GradientSet> {
    let mut out = grads.clone();
    scale_gradients_inplace(&mut out, d)?;
    Ok(out)
}

pub fn scale_gradients_inplace(grads: &mut GradientSet, d: f64) -> Result<()> {
    if !(0.0..1.0).contains(&d) {
        return Err(Error::Contract(format!("depression {d} outside [0, 1)")));
    }
    if d != 0.0 {
        grads.scale_inplace(1.0 - d);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedStats {
    pub mean: f64,
    pub std: f64,
}

/// What a distrust update saw and did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistrustUpdate {
    pub source_mean: f64,
    pub threshold: f64,
    pub previous: u64,
    pub distrust: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceSnapshot {
    pub source: SourceId,
    pub distrust: u64,
    pub depression: f64,
    pub gradient_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct SourceState {
    history: LossHistory,
    distrust: u64,
}

/// Loss histories and distrust levels for a fixed set of sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRegistry {
    params: LapParams,
    sources: BTreeMap<SourceId, SourceState>,
    all_full: bool,
    steps_since_full: usize,
}

impl SourceRegistry {
    pub fn new(params: LapParams, sources: impl IntoIterator<Item = SourceId>) -> Result<Self> {
        params.validate()?;
        let mut map = BTreeMap::new();
        for id in sources {
            let state = SourceState {
                history: LossHistory::new(params.history_length),
                distrust: 0,
            };
            if map.insert(id, state).is_some() {
                return Err(Error::Config(format!("source {id} registered twice")));
            }
        }
        if map.is_empty() {
            return Err(Error::Config("registry needs at least one source".into()));
        }
        Ok(Self {
            params,
            sources: map,
            all_full: false,
            steps_since_full: 0,
        })
    }

    /// Registry over sources `0..n`.
    pub fn with_sources(params: LapParams, n: usize) -> Result<Self> {
        Self::new(params, (0..n as u32).map(SourceId))
    }

    pub fn params(&self) -> &LapParams {
        &self.params
    }

    pub fn source_ids(&self) -> impl Iterator<Item = SourceId> + '_ {
        self.sources.keys().copied()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn contains(&self, id: SourceId) -> bool {
        self.sources.contains_key(&id)
    }

    fn state(&self, id: SourceId) -> Result<&SourceState> {
        self.sources.get(&id).ok_or(Error::UnknownSource(id))
    }

    pub fn history(&self, id: SourceId) -> Result<&LossHistory> {
        Ok(&self.state(id)?.history)
    }

    pub fn distrust(&self, id: SourceId) -> Result<u64> {
        Ok(self.state(id)?.distrust)
    }

    /// Overwrites a source's distrust, e.g. when restoring saved state.
    pub fn set_distrust(&mut self, id: SourceId, distrust: u64) -> Result<()> {
        self.sources
            .get_mut(&id)
            .ok_or(Error::UnknownSource(id))?
            .distrust = distrust;
        Ok(())
    }

    pub fn histories_full(&self) -> bool {
        self.all_full
    }

    pub fn steps_since_full(&self) -> usize {
        self.steps_since_full
    }

    /// True once every history is full and the hold-off has elapsed.
    pub fn depression_active(&self) -> bool {
        self.all_full && self.steps_since_full >= self.params.hold_off
    }

    /// Appends a loss for `source`. Once all histories are full this also
    /// moves the source's distrust and returns what the update did.
    pub fn record_loss(&mut self, source: SourceId, loss: f64) -> Result<Option<DistrustUpdate>> {
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::Data(format!(
                "loss for source {source} must be finite and >= 0, got {loss}"
            )));
        }
        let was_full = self.all_full;
        self.sources
            .get_mut(&source)
            .ok_or(Error::UnknownSource(source))?
            .history
            .push(loss);
        if !was_full {
            self.all_full = self.sources.values().all(|s| s.history.is_full());
        }
        if !self.all_full {
            return Ok(None);
        }
        if was_full {
            self.steps_since_full += 1;
        }
        self.update_distrust(source).map(Some)
    }

    /// Distrust-weighted mean and standard deviation over every cached loss
    /// of every source other than `source`. Each entry of source `s` carries
    /// weight `1 / (1 + R_s)` and the weights are normalized over all
    /// `h · (|S| - 1)` entries.
    pub fn weighted_other_stats(&self, source: SourceId) -> Result<WeightedStats> {
        self.state(source)?;
        if self.sources.len() < 2 {
            return Err(Error::Config(
                "weighted statistics need at least two sources".into(),
            ));
        }
        if !self.all_full {
            return Err(Error::State("loss histories are not yet full".into()));
        }
        let others = || self.sources.iter().filter(move |(id, _)| **id != source);

        let mut weight_total = 0.0;
        let mut weighted_sum = 0.0;
        for (_, s) in others() {
            let w = 1.0 / (1.0 + s.distrust as f64);
            weight_total += w * s.history.len() as f64;
            weighted_sum += w * s.history.sum();
        }
        let mean = weighted_sum / weight_total;

        let mut weighted_sq = 0.0;
        for (_, s) in others() {
            let w = 1.0 / (1.0 + s.distrust as f64);
            let sq: f64 = s.history.iter().map(|l| (l - mean) * (l - mean)).sum();
            weighted_sq += w * sq;
        }
        let std = (weighted_sq / weight_total).max(0.0).sqrt();
        Ok(WeightedStats { mean, std })
    }

    /// Mean of the source's full history.
    pub fn source_mean(&self, source: SourceId) -> Result<f64> {
        let h = &self.state(source)?.history;
        if !h.is_full() {
            return Err(Error::State(format!(
                "history of source {source} holds {} of {} losses",
                h.len(),
                h.capacity()
            )));
        }
        Ok(h.sum() / h.len() as f64)
    }

    /// Steps the source's distrust down if its mean loss is strictly below
    /// `mean_other + leniency · std_other`, up otherwise, never below zero.
    pub fn update_distrust(&mut self, source: SourceId) -> Result<DistrustUpdate> {
        let stats = self.weighted_other_stats(source)?;
        let source_mean = self.source_mean(source)?;
        let threshold = stats.mean + self.params.leniency * stats.std;
        let state = self
            .sources
            .get_mut(&source)
            .ok_or(Error::UnknownSource(source))?;
        let previous = state.distrust;
        state.distrust = if source_mean < threshold {
            previous.saturating_sub(1)
        } else {
            previous + 1
        };
        Ok(DistrustUpdate {
            source_mean,
            threshold,
            previous,
            distrust: state.distrust,
        })
    }

    /// Depression `d` currently applied to `source`; zero until the
    /// histories are full and the hold-off has elapsed.
    pub fn depression(&self, source: SourceId) -> Result<f64> {
        let r = self.state(source)?.distrust;
        if !self.depression_active() {
            return Ok(0.0);
        }
        Ok(depression_factor(self.params.depression_strength, r))
    }

    /// Multiplier `1 - d` currently applied to gradients from `source`.
    pub fn gradient_scale(&self, source: SourceId) -> Result<f64> {
        let r = self.state(source)?.distrust;
        if !self.depression_active() {
            return Ok(1.0);
        }
        Ok(gradient_scale_factor(self.params.depression_strength, r))
    }

    pub fn snapshot(&self) -> Vec<SourceSnapshot> {
        self.sources
            .keys()
            .map(|&id| SourceSnapshot {
                source: id,
                distrust: self.sources[&id].distrust,
                depression: self.depression(id).unwrap_or(0.0),
                gradient_scale: self.gradient_scale(id).unwrap_or(1.0),
            })
            .collect()
    }

    /// Histogram and moments of the source's full loss history.
    pub fn loss_normality_diagnostic(&self, source: SourceId) -> Result<NormalityReport> {
        let h = &self.state(source)?.history;
        if !h.is_full() {
            return Err(Error::State(format!(
                "history of source {source} is not full"
            )));
        }
        Ok(normality_report(&h.to_vec()))
    }
}
