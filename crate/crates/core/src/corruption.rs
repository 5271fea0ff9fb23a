//! Synthetic unreliable sources: splitting a dataset into sources and
//! corrupting batches drawn from the unreliable ones.
//!
//! All functions take an explicit [`Rng`], so a given seed reproduces the
//! same corruption bit-for-bit.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::lap::SourceId;
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Original,
    ChunkShuffle,
    RandomLabel,
    BatchLabelShuffle,
    BatchLabelFlip,
    AddGaussianNoise,
    ReplaceGaussianNoise,
}

impl CorruptionMode {
    pub const ALL: [CorruptionMode; 7] = [
        CorruptionMode::Original,
        CorruptionMode::ChunkShuffle,
        CorruptionMode::RandomLabel,
        CorruptionMode::BatchLabelShuffle,
        CorruptionMode::BatchLabelFlip,
        CorruptionMode::AddGaussianNoise,
        CorruptionMode::ReplaceGaussianNoise,
    ];

    pub fn alters_labels(self) -> bool {
        matches!(
            self,
            CorruptionMode::RandomLabel
                | CorruptionMode::BatchLabelShuffle
                | CorruptionMode::BatchLabelFlip
        )
    }

    pub fn alters_features(self) -> bool {
        matches!(
            self,
            CorruptionMode::ChunkShuffle
                | CorruptionMode::AddGaussianNoise
                | CorruptionMode::ReplaceGaussianNoise
        )
    }

    /// Batch-level modes treat the rate as the chance a whole batch is hit.
    pub fn is_batch_level(self) -> bool {
        matches!(
            self,
            CorruptionMode::BatchLabelShuffle | CorruptionMode::BatchLabelFlip
        )
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CorruptionMode::Original => "original",
            CorruptionMode::ChunkShuffle => "chunk_shuffle",
            CorruptionMode::RandomLabel => "random_label",
            CorruptionMode::BatchLabelShuffle => "batch_label_shuffle",
            CorruptionMode::BatchLabelFlip => "batch_label_flip",
            CorruptionMode::AddGaussianNoise => "add_gaussian_noise",
            CorruptionMode::ReplaceGaussianNoise => "replace_gaussian_noise",
        };
        f.write_str(s)
    }
}

fn default_rate() -> f64 {
    1.0
}
fn default_chunks() -> usize {
    4
}
fn default_axes() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub mode: CorruptionMode,
    /// Fraction of observations (per-observation modes) or probability per
    /// batch (batch-level modes) that is corrupted.
    #[serde(default = "default_rate")]
    pub rate: f64,
    /// Number of chunks per axis for `chunk_shuffle`.
    #[serde(default = "default_chunks")]
    pub chunks: usize,
    /// Axes of the input shape to chunk; each of 0 and 1 at most once.
    #[serde(default = "default_axes")]
    pub chunk_axes: Vec<usize>,
    /// Shape of one input before flattening, e.g. `[28, 28]`. Defaults to
    /// the flat feature vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
}

impl CorruptionSpec {
    pub fn new(mode: CorruptionMode, rate: f64) -> Self {
        Self {
            mode,
            rate,
            chunks: default_chunks(),
            chunk_axes: default_axes(),
            input_shape: None,
        }
    }

    pub fn original() -> Self {
        Self::new(CorruptionMode::Original, 0.0)
    }

    /// Input shape as `(axis0, axis1)`, flat inputs being `(cols, 1)`.
    fn grid(&self, cols: usize) -> Result<(usize, usize)> {
        let shape = self.input_shape.clone().unwrap_or_else(|| vec![cols]);
        let (a, b) = match shape.as_slice() {
            [a] => (*a, 1),
            [a, b] => (*a, *b),
            _ => {
                return Err(Error::Config(format!(
                    "corruption.input_shape must have 1 or 2 axes, got {shape:?}"
                )))
            }
        };
        if a * b != cols {
            return Err(Error::Config(format!(
                "corruption.input_shape {shape:?} does not match {cols} features"
            )));
        }
        Ok((a, b))
    }

    /// Validates the spec against inputs with `cols` features.
    pub fn validate(&self, cols: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "corruption.rate must lie in [0, 1], got {}",
                self.rate
            )));
        }
        if self.mode != CorruptionMode::ChunkShuffle {
            return Ok(());
        }
        let (a, b) = self.grid(cols)?;
        let dims = self.input_shape.as_ref().map_or(1, Vec::len);
        if self.chunks == 0 {
            return Err(Error::Config("corruption.chunks must be >= 1".into()));
        }
        if self.chunk_axes.is_empty() {
            return Err(Error::Config("corruption.chunk_axes is empty".into()));
        }
        let mut seen = [false; 2];
        for &axis in &self.chunk_axes {
            if axis >= dims || seen[axis] {
                return Err(Error::Config(format!(
                    "corruption.chunk_axes {:?} invalid for a {dims}-axis input",
                    self.chunk_axes
                )));
            }
            seen[axis] = true;
            let len = if axis == 0 { a } else { b };
            if self.chunks > len {
                return Err(Error::Config(format!(
                    "corruption.chunks = {} exceeds axis {axis} length {len}",
                    self.chunks
                )));
            }
        }
        Ok(())
    }
}

/// Assignment of every item to one of `n_sources` disjoint sources, plus the
/// set of sources marked unreliable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePlan {
    pub n_sources: usize,
    pub assignment: Vec<SourceId>,
    pub corrupt: BTreeSet<SourceId>,
    pub seed: u64,
}

impl SourcePlan {
    pub fn members(&self, source: SourceId) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == source)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_sources];
        for s in &self.assignment {
            sizes[s.index()] += 1;
        }
        sizes
    }

    pub fn sources(&self) -> impl Iterator<Item = SourceId> {
        (0..self.n_sources as u32).map(SourceId)
    }

    pub fn is_corrupt(&self, source: SourceId) -> bool {
        self.corrupt.contains(&source)
    }

    /// Marks `n_corrupt` randomly chosen sources as unreliable.
    pub fn choose_corrupt(&mut self, n_corrupt: usize, rng: &mut Rng) -> Result<()> {
        if n_corrupt >= self.n_sources {
            return Err(Error::Config(format!(
                "n_corrupt = {n_corrupt} must be smaller than n_sources = {}",
                self.n_sources
            )));
        }
        self.corrupt = rng
            .sample_indices(self.n_sources, n_corrupt)
            .into_iter()
            .map(|i| SourceId(i as u32))
            .collect();
        Ok(())
    }
}

/// Randomly assigns `n_items` items to `n_sources` sources of sizes
/// differing by at most one.
pub fn split_into_sources(n_items: usize, n_sources: usize, rng: &mut Rng) -> Result<SourcePlan> {
    if n_sources < 2 {
        return Err(Error::Config(format!(
            "n_sources must be >= 2, got {n_sources}"
        )));
    }
    if n_sources > n_items {
        return Err(Error::Config(format!(
            "cannot split {n_items} items into {n_sources} sources"
        )));
    }
    let order = rng.permutation(n_items);
    let mut assignment = vec![SourceId(0); n_items];
    for (rank, &item) in order.iter().enumerate() {
        assignment[item] = SourceId((rank % n_sources) as u32);
    }
    Ok(SourcePlan {
        n_sources,
        assignment,
        corrupt: BTreeSet::new(),
        seed: rng.seed(),
    })
}

/// Boundaries of `k` near-equal contiguous chunks of `0..len`.
fn chunk_bounds(len: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (i * len / k, (i + 1) * len / k)).collect()
}

/// New index order for an axis of length `len` after permuting its chunks.
fn shuffled_axis(len: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let bounds = chunk_bounds(len, k);
    let perm = rng.permutation(k);
    perm.iter()
        .flat_map(|&c| bounds[c].0..bounds[c].1)
        .collect()
}

fn chunk_shuffle_row(row: &mut [f64], grid: (usize, usize), spec: &CorruptionSpec, rng: &mut Rng) {
    let (a, b) = grid;
    let mut rows: Vec<usize> = (0..a).collect();
    let mut cols: Vec<usize> = (0..b).collect();
    for &axis in &spec.chunk_axes {
        if axis == 0 {
            rows = shuffled_axis(a, spec.chunks, rng);
        } else {
            cols = shuffled_axis(b, spec.chunks, rng);
        }
    }
    let src = row.to_vec();
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            row[i * b + j] = src[ri * b + cj];
        }
    }
}

/// Returns a corrupted copy of `batch` according to `spec`.
pub fn apply_corruption(
    batch: &Batch,
    spec: &CorruptionSpec,
    label_domain: usize,
    rng: &mut Rng,
) -> Result<Batch> {
    if batch.is_empty() {
        return Err(Error::Data("cannot corrupt an empty batch".into()));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= label_domain) {
        return Err(Error::Data(format!(
            "label {bad} outside [0, {label_domain})"
        )));
    }
    spec.validate(batch.x.cols())?;

    let mut out = batch.clone();
    if spec.mode == CorruptionMode::Original || spec.rate == 0.0 {
        return Ok(out);
    }
    let n = batch.len();

    if spec.mode.is_batch_level() {
        if !rng.bernoulli(spec.rate) {
            return Ok(out);
        }
        match spec.mode {
            CorruptionMode::BatchLabelShuffle => rng.shuffle(&mut out.labels),
            CorruptionMode::BatchLabelFlip => {
                let label = batch.labels[rng.below(n)];
                out.labels.iter_mut().for_each(|y| *y = label);
            }
            _ => unreachable!(),
        }
        return Ok(out);
    }

    let k = ((spec.rate * n as f64).round() as usize).min(n);
    let mut rows = rng.sample_indices(n, k);
    rows.sort_unstable();
    match spec.mode {
        CorruptionMode::RandomLabel => {
            for r in rows {
                out.labels[r] = rng.below(label_domain);
            }
        }
        CorruptionMode::ChunkShuffle => {
            let grid = spec.grid(batch.x.cols())?;
            for r in rows {
                chunk_shuffle_row(out.x.row_mut(r), grid, spec, rng);
            }
        }
        CorruptionMode::AddGaussianNoise => {
            for r in rows {
                for v in out.x.row_mut(r) {
                    *v += rng.normal();
                }
            }
        }
        CorruptionMode::ReplaceGaussianNoise => {
            for r in rows {
                for v in out.x.row_mut(r) {
                    *v = rng.normal();
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

/// Gathers rows `indices` of `(x, labels)` into a batch for `source`.
pub fn gather_batch(x: &Matrix, labels: &[usize], indices: &[usize], source: SourceId) -> Batch {
    Batch {
        x: x.select_rows(indices),
        labels: indices.iter().map(|&i| labels[i]).collect(),
        source,
    }
}
