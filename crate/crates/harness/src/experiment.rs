//! Seeded end-to-end training runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lap_core::corruption::{
    apply_corruption, gather_batch, split_into_sources, CorruptionSpec, SourcePlan,
};
use lap_core::model::{evaluate, loss_grad, model_init};
use lap_core::{
    Error as CoreError, LapBinding, LapOptimizer, Optimizer, Rng, SourceId, SourceRegistry,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{load_dataset, Dataset};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One evaluation of one split at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub epoch: usize,
    pub split: Split,
    pub accuracy: f64,
    pub mean_loss: f64,
    /// Gradient scale per source at the time of evaluation.
    #[serde(skip)]
    pub gradient_scales: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub source_id: u32,
    pub distrust: u64,
    pub gradient_scale: f64,
    pub is_corrupt: bool,
}

/// End-of-run state of one source, with a summary of its loss history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceSummary {
    pub source_id: u32,
    pub is_corrupt: bool,
    pub n_items: usize,
    pub distrust: u64,
    pub gradient_scale: f64,
    pub loss_mean: f64,
    pub loss_variance: f64,
    pub loss_skewness: Option<f64>,
    pub loss_excess_kurtosis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    pub metrics: Vec<MetricsRecord>,
    pub trace: Vec<TraceRow>,
    pub sources: Vec<SourceSummary>,
    pub corrupt: Vec<SourceId>,
    pub steps: usize,
    /// Wall-clock mean of one optimizer step, in microseconds.
    pub mean_step_micros: f64,
}

impl RunOutput {
    fn last(&self, split: Split) -> Option<&MetricsRecord> {
        self.metrics.iter().rev().find(|m| m.split == split)
    }

    pub fn final_test_accuracy(&self) -> f64 {
        self.last(Split::Test).map_or(f64::NAN, |m| m.accuracy)
    }

    pub fn final_val_accuracy(&self) -> f64 {
        self.last(Split::Val).map_or(f64::NAN, |m| m.accuracy)
    }

    /// Final gradient scale of every source, indexed by source id.
    pub fn final_gradient_scales(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.gradient_scale).collect()
    }
}

/// Train/validation split of the pool plus the source plan over the
/// training part.
struct Prepared {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    plan: SourcePlan,
}

fn prepare(cfg: &ExperimentConfig, root: &Rng) -> Result<Prepared> {
    let splits = load_dataset(&cfg.dataset, &mut root.fork_named("data"))?;
    if splits.pool.features() != cfg.model.features() {
        return Err(HarnessError::config(
            "model.widths",
            format!(
                "first width {} differs from {} dataset features",
                cfg.model.features(),
                splits.pool.features()
            ),
        ));
    }
    let max_label = splits.pool.n_classes.max(splits.test.n_classes);
    if max_label > cfg.model.classes() {
        return Err(HarnessError::config(
            "model.widths",
            format!(
                "{} output classes but labels reach {}",
                cfg.model.classes(),
                max_label - 1
            ),
        ));
    }
    let val_fraction = 1.0 / (1.0 + cfg.training.train_val_ratio);
    let (train, val) = splits
        .pool
        .hold_out(val_fraction, &mut root.fork_named("split"));
    if val.is_empty() || splits.test.is_empty() {
        return Err(HarnessError::config(
            "dataset",
            "validation or test split is empty",
        ));
    }
    let mut plan = split_into_sources(
        train.len(),
        cfg.sources.n_sources,
        &mut root.fork_named("sources"),
    )
    .map_err(|e| HarnessError::config("sources.n_sources", e.to_string()))?;
    plan.choose_corrupt(cfg.sources.n_corrupt, &mut root.fork_named("corrupt"))
        .map_err(|e| HarnessError::config("sources.n_corrupt", e.to_string()))?;
    Ok(Prepared {
        train,
        val,
        test: splits.test,
        plan,
    })
}

/// The corruption spec with `input_shape` filled from the dataset when the
/// config leaves it open.
fn resolved_corruption(cfg: &ExperimentConfig, data: &Dataset) -> Result<CorruptionSpec> {
    let mut spec = cfg.sources.corruption.clone();
    if spec.input_shape.is_none() && data.input_shape.len() <= 2 {
        spec.input_shape = Some(data.input_shape.clone());
    }
    spec.validate(data.features())
        .map_err(|e| HarnessError::config("sources.corruption", e.to_string()))?;
    Ok(spec)
}

/// Member lists per trained source; upsampled with replacement to the largest
/// source when requested.
fn source_members(
    cfg: &ExperimentConfig,
    plan: &SourcePlan,
    active: &[SourceId],
    rng: &mut Rng,
) -> Vec<Vec<usize>> {
    let mut members: Vec<Vec<usize>> = active.iter().map(|&s| plan.members(s)).collect();
    if cfg.sources.upsample {
        let target = members.iter().map(Vec::len).max().unwrap_or(0);
        for m in &mut members {
            let base = m.len();
            while m.len() < target {
                let pick = m[rng.below(base)];
                m.push(pick);
            }
        }
    }
    members
}

/// Single-source batches for one epoch: each source's items are shuffled and
/// cut into batches, then sources take turns in a freshly shuffled order
/// every round until all batches are used.
pub fn epoch_schedule(
    members: &[Vec<usize>],
    batch_size: usize,
    rng: &mut Rng,
) -> Vec<(usize, Vec<usize>)> {
    let mut queues: Vec<Vec<Vec<usize>>> = members
        .iter()
        .map(|m| {
            let mut items = m.clone();
            rng.shuffle(&mut items);
            let mut batches: Vec<Vec<usize>> =
                items.chunks(batch_size).map(<[usize]>::to_vec).collect();
            batches.reverse();
            batches
        })
        .collect();
    let mut schedule = Vec::new();
    loop {
        let mut order: Vec<usize> = (0..queues.len())
            .filter(|&k| !queues[k].is_empty())
            .collect();
        if order.is_empty() {
            break;
        }
        rng.shuffle(&mut order);
        for k in order {
            let batch = queues[k].pop().expect("non-empty queue");
            schedule.push((k, batch));
        }
    }
    schedule
}

fn numeric(seed: u64, step: usize, source: SourceId, e: CoreError) -> HarnessError {
    match e {
        CoreError::NonFinite(msg) => HarnessError::Numeric {
            seed,
            step,
            source_id: source.0,
            message: msg,
        },
        other => HarnessError::Core(other),
    }
}

/// Trains one seed. Writes nothing.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let root = Rng::new(seed);
    let Prepared {
        train,
        val,
        test,
        plan,
    } = prepare(cfg, &root)?;
    let corruption = resolved_corruption(cfg, &train)?;
    let classes = cfg.model.classes();

    let active: Vec<SourceId> = plan
        .sources()
        .filter(|s| !(cfg.sources.exclude_corrupt && plan.is_corrupt(*s)))
        .collect();
    let members = source_members(cfg, &plan, &active, &mut root.fork_named("upsample"));

    let mut params = model_init(&cfg.model, &mut root.fork_named("init"))?;
    let inner = Optimizer::new(cfg.optimizer.rule(), cfg.optimizer.learning_rate, &params)?;
    let registry = SourceRegistry::new(cfg.lap.params(), active.iter().copied())?;
    let mut opt = LapOptimizer::new(
        inner,
        LapBinding {
            registry,
            enabled: cfg.lap.enabled,
        },
    );

    let mut schedule_rng = root.fork_named("schedule");
    let mut corrupt_rng = root.fork_named("corruption");
    let mut metrics = Vec::new();
    let mut trace = Vec::new();
    let mut step = 0usize;
    let mut train_seconds = 0.0;

    for epoch in 1..=cfg.training.epochs {
        let schedule = epoch_schedule(&members, cfg.training.batch_size, &mut schedule_rng);
        let (mut seen, mut correct, mut loss_sum) = (0usize, 0usize, 0.0);
        for (k, indices) in schedule {
            let source = active[k];
            let mut batch = gather_batch(&train.x, &train.labels, &indices, source);
            let corrupt_now =
                plan.is_corrupt(source) && cfg.sources.reliable_after_step.is_none_or(|t| step < t);
            if corrupt_now {
                batch = apply_corruption(&batch, &corruption, classes, &mut corrupt_rng)?;
            }

            let started = Instant::now();
            let out = loss_grad(&params, &cfg.model, &batch.x, &batch.labels)
                .map_err(|e| numeric(seed, step, source, e))?;
            let n = batch.len();
            opt.step(&mut params, out.grads, out.loss, source)
                .map_err(|e| numeric(seed, step, source, e))?;
            train_seconds += started.elapsed().as_secs_f64();

            seen += n;
            correct += out.correct;
            loss_sum += out.loss * n as f64;
            if step.is_multiple_of(cfg.training.trace_every) {
                record_trace(&mut trace, step, opt.registry(), &plan);
            }
            step += 1;
        }

        let scales = scales(opt.registry());
        metrics.push(MetricsRecord {
            seed,
            epoch,
            split: Split::Train,
            accuracy: correct as f64 / seen.max(1) as f64,
            mean_loss: loss_sum / seen.max(1) as f64,
            gradient_scales: scales.clone(),
        });
        for (split, data) in [(Split::Val, &val), (Split::Test, &test)] {
            let e = evaluate(&params, &cfg.model, &data.x, &data.labels)
                .map_err(|e| numeric(seed, step, SourceId(u32::MAX), e))?;
            metrics.push(MetricsRecord {
                seed,
                epoch,
                split,
                accuracy: e.accuracy,
                mean_loss: e.mean_loss,
                gradient_scales: scales.clone(),
            });
        }
    }

    let sizes = plan.sizes();
    let registry = opt.registry();
    let sources = active
        .iter()
        .map(|&s| {
            let report = registry.loss_normality_diagnostic(s).ok();
            SourceSummary {
                source_id: s.0,
                is_corrupt: plan.is_corrupt(s),
                n_items: sizes[s.index()],
                distrust: registry.distrust(s).unwrap_or(0),
                gradient_scale: registry.gradient_scale(s).unwrap_or(1.0),
                loss_mean: report.as_ref().map_or(f64::NAN, |r| r.mean),
                loss_variance: report.as_ref().map_or(f64::NAN, |r| r.variance),
                loss_skewness: report.as_ref().and_then(|r| r.skewness),
                loss_excess_kurtosis: report.as_ref().and_then(|r| r.excess_kurtosis),
            }
        })
        .collect();

    Ok(RunOutput {
        seed,
        metrics,
        trace,
        sources,
        corrupt: plan.corrupt.iter().copied().collect(),
        steps: step,
        mean_step_micros: if step == 0 {
            0.0
        } else {
            train_seconds * 1e6 / step as f64
        },
    })
}

fn scales(registry: &SourceRegistry) -> Vec<f64> {
    registry
        .snapshot()
        .iter()
        .map(|s| s.gradient_scale)
        .collect()
}

fn record_trace(
    trace: &mut Vec<TraceRow>,
    step: usize,
    registry: &SourceRegistry,
    plan: &SourcePlan,
) {
    for snap in registry.snapshot() {
        trace.push(TraceRow {
            step,
            source_id: snap.source.0,
            distrust: snap.distrust,
            gradient_scale: snap.gradient_scale,
            is_corrupt: plan.is_corrupt(snap.source),
        });
    }
}

/// Runs every seed in parallel and, when `out_dir` is given, writes each
/// seed's metrics, trace and source summary plus `config.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let outputs: Vec<RunOutput> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<_>>()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let sidecar = dir.join("config.json");
        fs::write(&sidecar, cfg.to_json_string()? + "\n")
            .map_err(|e| HarnessError::io(&sidecar, e))?;
        for out in &outputs {
            write_run(dir, out)?;
        }
    }
    Ok(outputs)
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

pub fn trace_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.csv"))
}

pub fn sources_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("sources_seed{seed}.csv"))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    write_csv(&metrics_path(dir, out.seed), &out.metrics)?;
    write_csv(&trace_path(dir, out.seed), &out.trace)?;
    write_csv(&sources_path(dir, out.seed), &out.sources)?;
    Ok(())
}

/// Reads a trace CSV back.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    #[derive(serde::Deserialize)]
    struct Row {
        step: usize,
        source_id: u32,
        distrust: u64,
        gradient_scale: f64,
        is_corrupt: bool,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    let headers = reader.headers()?.clone();
    let expected = [
        "step",
        "source_id",
        "distrust",
        "gradient_scale",
        "is_corrupt",
    ];
    if headers.iter().ne(expected) {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            message: format!(
                "columns {:?}, expected {expected:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        });
    }
    reader
        .deserialize()
        .map(|r| {
            let r: Row = r.map_err(|e| HarnessError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Ok(TraceRow {
                step: r.step,
                source_id: r.source_id,
                distrust: r.distrust,
                gradient_scale: r.gradient_scale,
                is_corrupt: r.is_corrupt,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_fair_and_complete() {
        let members: Vec<Vec<usize>> = (0..5)
            .map(|s| (s * 10..s * 10 + 10 + s % 2).collect())
            .collect();
        let schedule = epoch_schedule(&members, 3, &mut Rng::new(4));
        let mut counts = [0usize; 5];
        let mut items: Vec<usize> = Vec::new();
        for (k, batch) in &schedule {
            counts[*k] += 1;
            assert!(batch.iter().all(|i| members[*k].contains(i)));
            items.extend(batch);
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
        items.sort_unstable();
        let mut all: Vec<usize> = members.concat();
        all.sort_unstable();
        assert_eq!(items, all);
    }

    #[test]
    fn every_round_visits_each_source_once() {
        let members: Vec<Vec<usize>> = (0..4).map(|s| (s * 8..s * 8 + 8).collect()).collect();
        let schedule = epoch_schedule(&members, 2, &mut Rng::new(0));
        for round in schedule.chunks(4) {
            let mut ks: Vec<usize> = round.iter().map(|(k, _)| *k).collect();
            ks.sort_unstable();
            assert_eq!(ks, vec![0, 1, 2, 3]);
        }
    }
}
