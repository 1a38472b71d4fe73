//! Memory-budgeted execution of the two-step pipeline.
//!
//! Step 1 loads frames and computes their spatial spectra; step 2 analyzes
//! wave vectors. When the retained spectra of every frame do not fit in the
//! budget the work is split:
//!
//! * the temporal-FFT engine processes contiguous groups of wave vectors, each
//!   group re-streaming the whole stack; every group's result is written to
//!   `partials/group<k>.bin` and the partials are merged at the end;
//! * the pairwise engine processes contiguous chunks of lags, keeping a FIFO
//!   window of older spectra plus the current frame, and produces complete
//!   maps for its lags in each pass.
//!
//! Final maps do not depend on the plan or on the worker count.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    read_partial, write_partial, ArchiveMeta, ImageStack, MemorySource, Partial, ResultArchive,
    StackDims, StackSource,
};
use crate::pairwise::{check_lags, direct_eq1, LagAccumulator};
use crate::precision::{Precision, Real};
use crate::spectrum::{cutoff_set, SpatialTransform, WaveVectorSet};
use crate::temporal::{pad_length, TemporalEngine};
use crate::timing::{CounterSnapshot, OpCounters, Phase, TimingBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Algorithm {
    WithFt,
    WithoutFt,
    Direct,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::WithFt => "with_ft",
            Algorithm::WithoutFt => "without_ft",
            Algorithm::Direct => "direct",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub bytes: u64,
    pub precision: Precision,
}

impl MemoryBudget {
    pub fn new(bytes: u64, precision: Precision) -> Self {
        Self { bytes, precision }
    }

    pub fn bytes_per_complex(&self) -> u64 {
        self.precision.bytes_per_complex() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    /// Sequences held per group.
    pub capacity: usize,
    pub groups: Vec<Range<usize>>,
}

/// Partitions Q retained wave vectors into groups whose N-point sequences fit
/// the budget. Padded scratch is a per-worker reservation outside the budget.
pub fn plan_with_ft(q: usize, frames: usize, budget: MemoryBudget) -> Result<GroupPlan> {
    if frames == 0 {
        return Err(Error::InvalidArgument("stack has no frames".into()));
    }
    let bpc = budget.bytes_per_complex();
    let minimum = (q as u64 + pad_length(frames)? as u64) * bpc;
    if budget.bytes < minimum {
        return Err(Error::Plan(format!(
            "budget of {} bytes cannot hold one spectrum and one padded sequence ({minimum} bytes)",
            budget.bytes
        )));
    }
    let capacity = budget.bytes / (frames as u64 * bpc);
    if capacity == 0 {
        return Err(Error::Plan(format!(
            "budget of {} bytes cannot hold a single {frames}-point sequence",
            budget.bytes
        )));
    }
    let capacity = capacity.min(q.max(1) as u64) as usize;
    let groups = (0..q)
        .step_by(capacity)
        .map(|start| start..(start + capacity).min(q))
        .collect();
    Ok(GroupPlan { capacity, groups })
}

/// One pass of the pairwise engine: the requested lags inside `[first, last]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagChunk {
    pub first: usize,
    pub last: usize,
    pub lags: Vec<usize>,
}

impl LagChunk {
    pub fn width(&self) -> usize {
        self.last - self.first + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    /// Spectra held simultaneously.
    pub capacity: usize,
    pub chunks: Vec<LagChunk>,
}

impl ChunkPlan {
    pub fn passes(&self) -> usize {
        self.chunks.len()
    }
}

/// Splits the nonzero requested lags into contiguous intervals `[a, b]` with
/// `b - a + 2 <= C`, where C spectra of `spectrum_bytes` fit the budget.
pub fn plan_without_ft(
    frames: usize,
    lags: &[usize],
    budget: MemoryBudget,
    spectrum_bytes: u64,
) -> Result<ChunkPlan> {
    check_lags(lags, frames)?;
    if spectrum_bytes == 0 {
        return Err(Error::InvalidArgument("spectrum size must be positive".into()));
    }
    let capacity = budget.bytes / spectrum_bytes;
    if capacity < 2 {
        return Err(Error::Plan(format!(
            "budget of {} bytes holds {capacity} spectra of {spectrum_bytes} bytes, need at least 2",
            budget.bytes
        )));
    }
    let capacity = capacity.min(usize::MAX as u64) as usize;
    let mut wanted: Vec<usize> = lags.iter().copied().filter(|&m| m > 0).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let mut chunks = Vec::new();
    let mut rest = wanted.as_slice();
    while let Some(&first) = rest.first() {
        let last = first + (capacity - 2);
        let take = rest.partition_point(|&m| m <= last);
        chunks.push(LagChunk {
            first,
            last: last.min(frames - 1),
            lags: rest[..take].to_vec(),
        });
        rest = &rest[take..];
    }
    Ok(ChunkPlan { capacity, chunks })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionPlan {
    Groups(GroupPlan),
    Chunks(ChunkPlan),
    Direct,
}

impl ExecutionPlan {
    pub fn units(&self) -> usize {
        match self {
            ExecutionPlan::Groups(p) => p.groups.len(),
            ExecutionPlan::Chunks(p) => p.passes(),
            ExecutionPlan::Direct => 1,
        }
    }

    fn algorithm(&self) -> Algorithm {
        match self {
            ExecutionPlan::Groups(_) => Algorithm::WithFt,
            ExecutionPlan::Chunks(_) => Algorithm::WithoutFt,
            ExecutionPlan::Direct => Algorithm::Direct,
        }
    }
}

/// Everything a run needs besides the stack and the plan.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub precision: Precision,
    pub lags: Vec<usize>,
    pub q_max: Option<f64>,
    pub workers: usize,
    /// Holds `partials/`.
    pub work_dir: PathBuf,
    /// Test hook: writes an extra partial overlapping group 0 before merging.
    #[doc(hidden)]
    pub inject_overlap: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, lags: Vec<usize>, work_dir: impl Into<PathBuf>) -> Self {
        Self {
            algorithm,
            precision: Precision::F64,
            lags,
            q_max: None,
            workers: 2,
            work_dir: work_dir.into(),
            inject_overlap: false,
        }
    }
}

/// Builds the plan for `config.algorithm` under a byte budget.
pub fn plan_for(dims: &StackDims, config: &RunConfig, budget_bytes: u64) -> Result<ExecutionPlan> {
    let wave_vectors = cutoff_set(dims.width, dims.height, config.q_max)?;
    let budget = MemoryBudget::new(budget_bytes, config.precision);
    Ok(match config.algorithm {
        Algorithm::WithFt => {
            ExecutionPlan::Groups(plan_with_ft(wave_vectors.len(), dims.frames, budget)?)
        }
        Algorithm::WithoutFt => {
            let spectrum_bytes = wave_vectors.len() as u64 * budget.bytes_per_complex();
            ExecutionPlan::Chunks(plan_without_ft(dims.frames, &config.lags, budget, spectrum_bytes)?)
        }
        Algorithm::Direct => ExecutionPlan::Direct,
    })
}

/// Lags `0..N`.
pub fn all_lags(frames: usize) -> Vec<usize> {
    (0..frames).collect()
}

/// Executes a plan and returns merged maps with timing and counters attached.
pub fn run(
    source: &mut dyn StackSource,
    config: &RunConfig,
    plan: &ExecutionPlan,
) -> Result<ResultArchive> {
    if plan.algorithm() != config.algorithm {
        return Err(Error::InvalidArgument(format!(
            "plan is for {} but the run requests {}",
            plan.algorithm(),
            config.algorithm
        )));
    }
    if config.workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    if config.lags.is_empty() {
        return Err(Error::InvalidArgument("no lags".into()));
    }
    let dims = source.dims();
    check_lags(&config.lags, dims.frames)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| match config.precision {
        Precision::F32 => run_typed::<f32>(source, config, plan),
        Precision::F64 => run_typed::<f64>(source, config, plan),
    })
}

struct RunState {
    timing: TimingBreakdown,
    counters: OpCounters,
}

fn run_typed<T: Real>(
    source: &mut dyn StackSource,
    config: &RunConfig,
    plan: &ExecutionPlan,
) -> Result<ResultArchive> {
    let start = Instant::now();
    let dims = source.dims();
    let wave_vectors = cutoff_set(dims.width, dims.height, config.q_max)?;
    let mut state = RunState {
        timing: TimingBreakdown::default(),
        counters: OpCounters::new(),
    };
    let meta = ArchiveMeta {
        width: dims.width,
        height: dims.height,
        frames: dims.frames,
        frame_interval: dims.frame_interval,
        algorithm: config.algorithm.as_str().into(),
        precision: config.precision,
        q_max: config.q_max,
        retained_wave_vectors: wave_vectors.len(),
        config: serde_json::Value::Null,
    };
    let mut archive = match plan {
        ExecutionPlan::Groups(groups) => {
            run_with_ft::<T>(source, config, groups, &wave_vectors, meta, &mut state)?
        }
        ExecutionPlan::Chunks(chunks) => {
            let compact = run_without_ft::<T>(source, config, chunks, &wave_vectors, &mut state)?;
            state
                .timing
                .time(Phase::Merge, || scatter(&config.lags, compact, &wave_vectors, meta))
        }
        ExecutionPlan::Direct => {
            let compact = run_direct(source, config, &wave_vectors, &mut state)?;
            state
                .timing
                .time(Phase::Merge, || scatter(&config.lags, compact, &wave_vectors, meta))
        }
    };
    state.timing.finish(start.elapsed());
    archive.timing = Some(state.timing);
    archive.counters = Some(state.counters.snapshot(plan.units() as u64));
    Ok(archive)
}

/// Places compact per-lag values into zero-filled half-plane maps.
fn scatter(
    lags: &[usize],
    compact: Vec<Vec<f64>>,
    wave_vectors: &WaveVectorSet,
    meta: ArchiveMeta,
) -> ResultArchive {
    let (rows, cols) = wave_vectors.shape();
    let maps = compact
        .into_iter()
        .map(|values| {
            let mut map = vec![0.0; rows * cols];
            for (&flat, v) in wave_vectors.flat_indices().iter().zip(values) {
                map[flat] = v;
            }
            map
        })
        .collect();
    ResultArchive {
        lags: lags.to_vec(),
        maps,
        meta,
        timing: None,
        counters: None,
    }
}

/// Frames read and transformed per parallel batch in step 1.
fn batch_len(workers: usize) -> usize {
    (workers * 4).max(8)
}

fn run_with_ft<T: Real>(
    source: &mut dyn StackSource,
    config: &RunConfig,
    plan: &GroupPlan,
    wave_vectors: &WaveVectorSet,
    meta: ArchiveMeta,
    state: &mut RunState,
) -> Result<ResultArchive> {
    let dims = source.dims();
    let n = dims.frames;
    let spatial = SpatialTransform::<T>::new(dims.width, dims.height)?;
    let engine = TemporalEngine::<T>::new(n)?;
    let zero = Complex::new(T::zero(), T::zero());
    let pixels = dims.pixels_per_frame();
    let batch = batch_len(config.workers);
    let mut frames = vec![vec![0u16; pixels]; batch];
    let stale = work_dir_partials(&config.work_dir);
    if stale.exists() {
        std::fs::remove_dir_all(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let mut paths = Vec::with_capacity(plan.groups.len());
    for (group_id, range) in plan.groups.iter().enumerate() {
        let members = &wave_vectors.flat_indices()[range.clone()];
        let len = members.len();
        // sequence-major: seqs[j * n + frame]
        let mut seqs = vec![zero; len * n];
        for first in (0..n).step_by(batch) {
            let count = batch.min(n - first);
            state.timing.time(Phase::Disk, || -> Result<()> {
                for (k, buf) in frames[..count].iter_mut().enumerate() {
                    source.read_frame(first + k, buf)?;
                }
                Ok(())
            })?;
            state.counters.add_frames_read(count as u64);
            let counters = &state.counters;
            state.timing.time(Phase::Step1, || -> Result<()> {
                let gathered: Vec<Vec<Complex<T>>> = frames[..count]
                    .par_iter()
                    .map_init(
                        || (spatial.scratch(), vec![zero; spatial.half_len()]),
                        |(scratch, half), frame| -> Result<Vec<Complex<T>>> {
                            spatial.forward_u16(frame, half, scratch)?;
                            counters.add_spatial(1);
                            Ok(members.iter().map(|&f| half[f]).collect())
                        },
                    )
                    .collect::<Result<_>>()?;
                for (k, values) in gathered.iter().enumerate() {
                    for (j, &v) in values.iter().enumerate() {
                        seqs[j * n + first + k] = v;
                    }
                }
                Ok(())
            })?;
        }
        let counters = &state.counters;
        let lags = &config.lags;
        let per_seq: Vec<Vec<f64>> = state.timing.time(Phase::Step2, || {
            seqs.par_chunks_mut(n)
                .map_init(
                    || engine.scratch(),
                    |scratch, seq| -> Result<Vec<f64>> {
                        remove_mean(seq);
                        let profile = engine.with_ft_sequence(seq, scratch, Some(counters))?;
                        Ok(lags.iter().map(|&m| profile.d[m]).collect())
                    },
                )
                .collect::<Result<_>>()
        })?;
        drop(seqs);
        let mut values = vec![0.0; lags.len() * len];
        for (j, row) in per_seq.iter().enumerate() {
            for (l, &v) in row.iter().enumerate() {
                values[l * len + j] = v;
            }
        }
        let partial = Partial {
            group_id,
            range: range.clone(),
            total_wave_vectors: wave_vectors.len(),
            lags: lags.clone(),
            values,
        };
        let path = state
            .timing
            .time(Phase::Disk, || write_partial(group_id, &partial, &config.work_dir))?;
        paths.push(path);
    }
    if config.inject_overlap {
        let end = plan.groups.first().map_or(0, |r| r.end);
        let width = end.min(1);
        let bogus = Partial {
            group_id: plan.groups.len(),
            range: 0..width,
            total_wave_vectors: wave_vectors.len(),
            lags: config.lags.clone(),
            values: vec![0.0; config.lags.len() * width],
        };
        paths.push(write_partial(bogus.group_id, &bogus, &config.work_dir)?);
    }
    state
        .timing
        .time(Phase::Merge, || merge_partials(&paths, wave_vectors, meta))
}

/// Reads group partials and scatters them into full half-plane maps.
///
/// The partials must tile `[0, Q)` of the retained set exactly once and agree
/// on the lag list.
pub fn merge_partials(
    paths: &[PathBuf],
    wave_vectors: &WaveVectorSet,
    meta: ArchiveMeta,
) -> Result<ResultArchive> {
    let mut partials = paths
        .iter()
        .map(|p| read_partial(p))
        .collect::<Result<Vec<_>>>()?;
    merge_loaded(&mut partials, wave_vectors, meta)
}

fn merge_loaded(
    partials: &mut [Partial],
    wave_vectors: &WaveVectorSet,
    meta: ArchiveMeta,
) -> Result<ResultArchive> {
    let Some(first) = partials.first() else {
        return Err(Error::Merge("no partial results".into()));
    };
    let lags = first.lags.clone();
    let q = wave_vectors.len();
    for p in partials.iter() {
        if p.total_wave_vectors != q {
            return Err(Error::Merge(format!(
                "group {} was computed for {} wave vectors, expected {q}",
                p.group_id, p.total_wave_vectors
            )));
        }
        if p.lags != lags {
            return Err(Error::Merge(format!("group {} has a different lag list", p.group_id)));
        }
    }
    partials.sort_by_key(|p| (p.range.start, p.range.end));
    let mut covered = 0;
    for p in partials.iter() {
        if p.range.start < covered {
            return Err(Error::Merge(format!(
                "group {} range {:?} overlaps wave vectors below {covered}",
                p.group_id, p.range
            )));
        }
        if p.range.start > covered {
            return Err(Error::Merge(format!(
                "wave vectors {covered}..{} are not covered by any group",
                p.range.start
            )));
        }
        covered = p.range.end;
    }
    if covered != q {
        return Err(Error::Merge(format!("wave vectors {covered}..{q} are not covered by any group")));
    }
    let (rows, cols) = wave_vectors.shape();
    let flat = wave_vectors.flat_indices();
    let mut maps = vec![vec![0.0; rows * cols]; lags.len()];
    for p in partials.iter() {
        let len = p.range.len();
        for (l, map) in maps.iter_mut().enumerate() {
            for (j, &v) in p.values[l * len..(l + 1) * len].iter().enumerate() {
                map[flat[p.range.start + j]] = v;
            }
        }
    }
    Ok(ResultArchive {
        lags,
        maps,
        meta,
        timing: None,
        counters: None,
    })
}

/// Resident spectra of one pairwise pass: older frames in a FIFO plus the
/// frame most recently transformed by the leading cursor.
struct Window<T> {
    fifo: VecDeque<(usize, Vec<Complex<T>>)>,
    last: Option<(usize, Vec<Complex<T>>)>,
}

impl<T: Copy> Window<T> {
    fn older(&self, index: usize) -> Option<&[Complex<T>]> {
        let (front, _) = self.fifo.front()?;
        self.fifo.get(index.checked_sub(*front)?).map(|(k, v)| {
            debug_assert_eq!(*k, index);
            v.as_slice()
        })
    }
}

struct FrameLoader<'a, T: Real> {
    source: &'a mut dyn StackSource,
    spatial: SpatialTransform<T>,
    scratch: crate::spectrum::SpatialScratch<T>,
    pixels: Vec<u16>,
    half: Vec<Complex<T>>,
}

impl<T: Real> FrameLoader<'_, T> {
    fn load(
        &mut self,
        index: usize,
        wave_vectors: &WaveVectorSet,
        state: &mut RunState,
    ) -> Result<Vec<Complex<T>>> {
        let Self {
            source,
            spatial,
            scratch,
            pixels,
            half,
        } = self;
        state
            .timing
            .time(Phase::Disk, || source.read_frame(index, pixels))?;
        state.counters.add_frames_read(1);
        state.timing.time(Phase::Step1, || {
            spatial.forward_u16(pixels, half, scratch)?;
            state.counters.add_spatial(1);
            let mut compact = vec![Complex::new(T::zero(), T::zero()); wave_vectors.len()];
            wave_vectors.gather(half, &mut compact);
            Ok(compact)
        })
    }
}

fn run_without_ft<T: Real>(
    source: &mut dyn StackSource,
    config: &RunConfig,
    plan: &ChunkPlan,
    wave_vectors: &WaveVectorSet,
    state: &mut RunState,
) -> Result<Vec<Vec<f64>>> {
    let dims = source.dims();
    let n = dims.frames;
    let q = wave_vectors.len();
    let spatial = SpatialTransform::<T>::new(dims.width, dims.height)?;
    let mut loader = FrameLoader {
        scratch: spatial.scratch(),
        half: vec![Complex::new(T::zero(), T::zero()); spatial.half_len()],
        pixels: vec![0u16; dims.pixels_per_frame()],
        spatial,
        source,
    };
    let mut results: Vec<(usize, Vec<f64>)> = Vec::with_capacity(config.lags.len());
    for chunk in &plan.chunks {
        debug_assert!(chunk.width() + 1 <= plan.capacity);
        let mut acc = LagAccumulator::new(chunk.lags.clone(), q);
        let mut window = Window {
            fifo: VecDeque::with_capacity(chunk.width()),
            last: None,
        };
        // leading cursor over newer frames; frames below `first` have no partner
        for newer in chunk.first..n {
            // admit frame newer - first into the FIFO, reusing the previous
            // leading frame when it is the one needed (always, for first == 1)
            let entering = newer - chunk.first;
            let spectrum = match window.last.take() {
                Some((k, v)) if k == entering => v,
                _ => loader.load(entering, wave_vectors, state)?,
            };
            window.fifo.push_back((entering, spectrum));
            while window
                .fifo
                .front()
                .is_some_and(|(k, _)| *k + chunk.last < newer)
            {
                window.fifo.pop_front();
            }
            let current = loader.load(newer, wave_vectors, state)?;
            let pairs = state.timing.time(Phase::Step2, || {
                acc.add_frame(&current, |slot| {
                    newer.checked_sub(chunk.lags[slot]).and_then(|k| window.older(k))
                })
            });
            state.counters.add_pairs(pairs);
            window.last = Some((newer, current));
        }
        let lags = acc.lags().to_vec();
        results.extend(lags.into_iter().zip(acc.finish()));
    }
    Ok(config
        .lags
        .iter()
        .map(|&m| {
            results
                .iter()
                .find(|(lag, _)| *lag == m)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| vec![0.0; q])
        })
        .collect())
}

fn run_direct(
    source: &mut dyn StackSource,
    config: &RunConfig,
    wave_vectors: &WaveVectorSet,
    state: &mut RunState,
) -> Result<Vec<Vec<f64>>> {
    let dims = source.dims();
    let len = dims.pixels_per_frame();
    let stack = state.timing.time(Phase::Disk, || -> Result<ImageStack> {
        let mut pixels = vec![0u16; len * dims.frames];
        for (i, frame) in pixels.chunks_exact_mut(len).enumerate() {
            source.read_frame(i, frame)?;
        }
        ImageStack::new(dims.width, dims.height, dims.frames, pixels, dims.frame_interval)
    })?;
    state.counters.add_frames_read(dims.frames as u64);
    let counters = &state.counters;
    state.timing.time(Phase::Step2, || {
        direct_eq1(&stack, &config.lags, wave_vectors, Some(counters))
    })
}

/// Subtracts the temporal mean, which leaves every lag's difference unchanged
/// but keeps `d_a` and the correlation from cancelling at low precision.
fn remove_mean<T: Real>(seq: &mut [Complex<T>]) {
    let n = seq.len() as f64;
    let (re, im) = seq.iter().fold((0.0f64, 0.0f64), |(re, im), z| (re + z.re.into(), im + z.im.into()));
    let (re, im) = (re / n, im / n);
    for z in seq.iter_mut() {
        let zr: f64 = z.re.into();
        let zi: f64 = z.im.into();
        *z = Complex::new(T::from_f64_lossy(zr - re), T::from_f64_lossy(zi - im));
    }
}

/// Plans and runs against an in-memory stack with a byte budget.
pub fn run_stack(stack: &ImageStack, config: &RunConfig, budget_bytes: u64) -> Result<ResultArchive> {
    let plan = plan_for(&stack.dims(), config, budget_bytes)?;
    run(&mut MemorySource::new(stack), config, &plan)
}

/// Largest elementwise deviation between two archives' maps, relative to the
/// largest magnitude found in either.
pub fn max_relative_deviation(a: &ResultArchive, b: &ResultArchive) -> Result<f64> {
    if a.lags != b.lags {
        return Err(Error::InvalidArgument("archives have different lag lists".into()));
    }
    let mut scale = f64::MIN_POSITIVE;
    let mut worst = 0.0f64;
    for (ma, mb) in a.maps.iter().zip(&b.maps) {
        if ma.len() != mb.len() {
            return Err(Error::InvalidArgument("archives have different map shapes".into()));
        }
        for (x, y) in ma.iter().zip(mb) {
            scale = scale.max(x.abs()).max(y.abs());
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst / scale)
}

/// Counters of a finished run, for callers that only need the audit trail.
pub fn counters_of(archive: &ResultArchive) -> CounterSnapshot {
    archive.counters.unwrap_or_default()
}

pub fn work_dir_partials(dir: &Path) -> PathBuf {
    dir.join("partials")
}
