//! Per-source loss tracking, distrust updates and gradient depression.
//!
//! A [`SourceRegistry`] owns one [`LossHistory`] and one distrust counter per
//! source. Every recorded loss is appended to its source's history; once every
//! history is full, the recording source's distrust moves one step up or down
//! depending on whether its mean loss sits above the distrust-weighted mean
//! plus `leniency` standard deviations of every other source's losses. The
//! distrust counter is turned into a depression factor
//! `d = tanh²(0.005 · depression_strength · distrust)` and gradients from that
//! source are multiplied by `1 - d`.

mod diagnostic;
mod history;
mod registry;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use diagnostic::{normality_report, HistogramBin, NormalityReport};
pub use history::LossHistory;
pub use registry::{
    depression_factor, gradient_scale_factor, scale_gradients, scale_gradients_inplace,
    DistrustUpdate, LapParams, SourceRegistry, SourceSnapshot, WeightedStats, DEPRESSION_SCALE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub u32);

impl SourceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for SourceId {
    fn from(v: u32) -> Self {
        SourceId(v)
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
