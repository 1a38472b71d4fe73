//! Timing and operation-count sweeps over stack length, frame size, engine,
//! worker count and memory budget.
//!
//! Cells run one after another. Each cell streams its stack from a raw file so
//! disk time is part of the breakdown, as in a real analysis.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_raw_stack, ImageStack, RawFileSource, StackSource};
use crate::precision::Precision;
use crate::scheduler::{all_lags, plan_for, run, Algorithm, RunConfig};
use crate::synth::{generate, SynthConfig};
use crate::timing::TimingBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub frames: Vec<usize>,
    /// Square frame sizes.
    pub sizes: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub workers: Vec<usize>,
    pub budgets: Vec<u64>,
    pub precision: Precision,
    pub repetitions: usize,
    pub warmup: usize,
    /// Seed of the synthetic stacks.
    pub seed: u64,
    /// Cells whose raw stack would exceed this many bytes are recorded as failed.
    pub max_stack_bytes: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            frames: vec![256, 512],
            sizes: vec![32],
            algorithms: vec![Algorithm::WithFt, Algorithm::WithoutFt],
            workers: vec![2],
            budgets: vec![1 << 30],
            precision: Precision::F64,
            repetitions: 3,
            warmup: 1,
            seed: 1,
            max_stack_bytes: 2 << 30,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let axes_ok = !self.frames.is_empty()
            && !self.sizes.is_empty()
            && !self.algorithms.is_empty()
            && !self.workers.is_empty()
            && !self.budgets.is_empty();
        if !axes_ok {
            return Err(Error::InvalidArgument("every sweep axis needs at least one value".into()));
        }
        let positive = self.frames.iter().all(|&v| v > 0)
            && self.sizes.iter().all(|&v| v > 0)
            && self.workers.iter().all(|&v| v > 0)
            && self.budgets.iter().all(|&v| v > 0);
        if !positive {
            return Err(Error::InvalidArgument("sweep axis values must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.frames.len() * self.sizes.len() * self.algorithms.len() * self.workers.len() * self.budgets.len()
    }
}

/// Where the sweep's stacks come from.
#[derive(Debug, Clone)]
pub enum StackOrigin {
    /// Brownian stacks generated per (N, size) from this template.
    Synthetic(SynthConfig),
    /// A recorded stack, truncated to N frames and cropped to size×size.
    Recorded(ImageStack),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub workers: usize,
    pub budget_bytes: u64,
    pub groups_or_passes: u64,
    pub timing: TimingBreakdown,
    pub count_spatial_ffts: u64,
    pub count_temporal_ffts: u64,
    pub count_pairs: u64,
    /// Why the cell did not run, if it failed.
    pub failure: Option<String>,
}

impl BenchRow {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

fn crop(stack: &ImageStack, frames: usize, size: usize) -> Result<ImageStack> {
    if frames > stack.frames() || size > stack.width() || size > stack.height() {
        return Err(Error::InvalidArgument(format!(
            "recorded stack is {}x{}x{}, cell needs {size}x{size}x{frames}",
            stack.width(),
            stack.height(),
            stack.frames()
        )));
    }
    let mut pixels = Vec::with_capacity(frames * size * size);
    for n in 0..frames {
        let frame = stack.frame(n);
        for row in 0..size {
            pixels.extend_from_slice(&frame[row * stack.width()..row * stack.width() + size]);
        }
    }
    ImageStack::new(size, size, frames, pixels, stack.frame_interval())
}

fn prepare(origin: &StackOrigin, frames: usize, size: usize, seed: u64, path: &Path) -> Result<()> {
    let stack = match origin {
        StackOrigin::Synthetic(template) => generate(&SynthConfig {
            width: size,
            height: size,
            frames,
            seed,
            ..template.clone()
        })?,
        StackOrigin::Recorded(stack) => crop(stack, frames, size)?,
    };
    write_raw_stack(&stack, path)
}

fn run_cell(
    stack_path: &Path,
    work_dir: &Path,
    algorithm: Algorithm,
    workers: usize,
    budget: u64,
    spec: &SweepSpec,
) -> Result<(TimingBreakdown, crate::timing::CounterSnapshot)> {
    let mut reps = Vec::with_capacity(spec.repetitions);
    for rep in 0..spec.warmup + spec.repetitions {
        let mut source = RawFileSource::open(stack_path)?;
        let dims = source.dims();
        let mut config = RunConfig::new(algorithm, all_lags(dims.frames), work_dir);
        config.workers = workers;
        config.precision = spec.precision;
        let plan = plan_for(&dims, &config, budget)?;
        let archive = run(&mut source, &config, &plan)?;
        if rep >= spec.warmup {
            reps.push((archive.timing.unwrap_or_default(), archive.counters.unwrap_or_default()));
        }
    }
    // the repetition with the median total supplies the whole breakdown
    reps.sort_by(|a, b| a.0.total.total_cmp(&b.0.total));
    Ok(reps.swap_remove(reps.len() / 2))
}

/// Runs every cell of the sweep. Failing cells are recorded and skipped.
pub fn sweep(
    spec: &SweepSpec,
    origin: &StackOrigin,
    mut progress: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let mut rows = Vec::with_capacity(spec.cell_count());
    for &size in &spec.sizes {
        for &frames in &spec.frames {
            let stack_path: PathBuf = scratch.path().join(format!("stack_{size}_{frames}.raw"));
            let stack_bytes = (size * size * frames * 2) as u64;
            let prepared = if stack_bytes > spec.max_stack_bytes {
                Err(Error::InvalidArgument(format!(
                    "stack of {stack_bytes} bytes exceeds the {} byte guard",
                    spec.max_stack_bytes
                )))
            } else {
                prepare(origin, frames, size, spec.seed, &stack_path)
            };
            for &algorithm in &spec.algorithms {
                for &workers in &spec.workers {
                    for &budget in &spec.budgets {
                        let mut row = BenchRow {
                            algorithm,
                            frames,
                            width: size,
                            height: size,
                            workers,
                            budget_bytes: budget,
                            groups_or_passes: 0,
                            timing: TimingBreakdown::default(),
                            count_spatial_ffts: 0,
                            count_temporal_ffts: 0,
                            count_pairs: 0,
                            failure: None,
                        };
                        let outcome = match &prepared {
                            Ok(()) => run_cell(&stack_path, &scratch.path().join("work"), algorithm, workers, budget, spec),
                            Err(e) => Err(Error::InvalidArgument(e.to_string())),
                        };
                        match outcome {
                            Ok((timing, counters)) => {
                                row.timing = timing;
                                row.groups_or_passes = counters.groups_or_passes;
                                row.count_spatial_ffts = counters.spatial_ffts;
                                row.count_temporal_ffts = counters.temporal_ffts;
                                row.count_pairs = counters.pairs;
                            }
                            Err(e) => row.failure = Some(e.to_string()),
                        }
                        progress(&row);
                        rows.push(row);
                    }
                }
            }
            let _ = std::fs::remove_file(&stack_path);
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: [&str; 15] = [
    "algorithm",
    "N",
    "width",
    "height",
    "workers",
    "budget_bytes",
    "groups_or_passes",
    "seconds_total",
    "seconds_disk",
    "seconds_step1",
    "seconds_step2",
    "seconds_merge",
    "count_spatial_ffts",
    "count_temporal_ffts",
    "count_pairs",
];

/// Writes `bench.csv`. Failed cells carry `NaN` seconds and zero counts.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let secs = |v: f64| if r.ok() { format!("{v:.6}") } else { "NaN".to_string() };
        w.write_record([
            r.algorithm.to_string(),
            r.frames.to_string(),
            r.width.to_string(),
            r.height.to_string(),
            r.workers.to_string(),
            r.budget_bytes.to_string(),
            r.groups_or_passes.to_string(),
            secs(r.timing.total),
            secs(r.timing.disk),
            secs(r.timing.step1),
            secs(r.timing.step2),
            secs(r.timing.merge),
            r.count_spatial_ffts.to_string(),
            r.count_temporal_ffts.to_string(),
            r.count_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cells that share everything but the engine and N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CrossoverKey {
    pub width: usize,
    pub height: usize,
    pub workers: usize,
    pub budget_bytes: u64,
}

/// Smallest N at which the temporal-FFT engine beats the pairwise engine on
/// total time, per frame size (and worker count and budget). `None` when it
/// never does on the shared N axis.
pub fn crossover(rows: &[BenchRow]) -> BTreeMap<CrossoverKey, Option<usize>> {
    let mut totals: BTreeMap<CrossoverKey, BTreeMap<usize, (Option<f64>, Option<f64>)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        let key = CrossoverKey {
            width: r.width,
            height: r.height,
            workers: r.workers,
            budget_bytes: r.budget_bytes,
        };
        let cell = totals.entry(key).or_default().entry(r.frames).or_default();
        match r.algorithm {
            Algorithm::WithFt => cell.0 = Some(r.timing.total),
            Algorithm::WithoutFt => cell.1 = Some(r.timing.total),
            Algorithm::Direct => {}
        }
    }
    totals
        .into_iter()
        .map(|(key, by_n)| {
            let n_star = by_n.into_iter().find_map(|(n, cell)| match cell {
                (Some(with), Some(without)) if with < without => Some(n),
                _ => None,
            });
            (key, n_star)
        })
        .collect()
}
