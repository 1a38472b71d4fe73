//! Command-line front end: `analyze`, `compare`, `synth` and `bench`.
//!
//! Exit codes: 0 success, 1 malformed input or bad arguments, 2 planning
//! failure, 3 I/O failure, 4 merge failure, 5 `compare` deviation over
//! tolerance.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{azimuthal_average, fit_all, write_fits_csv};
use crate::bench::{crossover, sweep, write_csv as write_bench_csv, BenchRow, StackOrigin, SweepSpec};
use crate::error::{Error, Result};
use crate::io::{load_stack, open_source, write_pgm_dir, write_raw_stack, ResultArchive, StackFormat};
use crate::precision::Precision;
use crate::scheduler::{max_relative_deviation, plan_for, run, Algorithm, RunConfig};
use crate::synth::{generate, write_config, SynthConfig};

/// Frames beyond which `--algorithm direct` warns about its cost.
pub const DIRECT_WARN_FRAMES: usize = 1024;

#[derive(Debug, Parser)]
#[command(name = "ddm", version, about = "Structure functions for differential dynamic microscopy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute structure functions, radial profiles and exponential fits.
    Analyze(AnalyzeArgs),
    /// Run two engines on the same stack and report their deviation.
    Compare(CompareArgs),
    /// Generate a stack of diffusing particles.
    Synth(SynthArgs),
    /// Time the engines over a grid of stack sizes, workers and budgets.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = StackFormat::RawStack)]
    pub format: StackFormat,
    /// `all`, `log`, or a comma-separated list.
    #[arg(long, default_value = "all")]
    pub lags: String,
    #[arg(long)]
    pub q_max: Option<f64>,
    /// Bytes with optional K/M/G suffix. Defaults to half the physical memory.
    #[arg(long, value_parser = parse_bytes)]
    pub memory_limit: Option<u64>,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long, hide = true)]
    pub inject_overlap: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, value_enum, default_value_t = Algorithm::WithFt)]
    pub algorithm: Algorithm,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Two engines, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',', num_args = 1.., default_values_t = [Algorithm::WithFt, Algorithm::WithoutFt])]
    pub algorithms: Vec<Algorithm>,
    /// Keeps both archives and a report here; a temporary directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub particles: usize,
    #[arg(long, default_value_t = 0.5)]
    pub diffusion: f64,
    #[arg(long, default_value_t = 512)]
    pub frames: usize,
    /// Square frame size; `--width`/`--height` override it.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub psf_sigma: f64,
    #[arg(long, default_value_t = 2000.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub background: f64,
    #[arg(long, default_value_t = 1.0)]
    pub frame_interval: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = StackFormat::RawStack)]
    pub format: StackFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Axis override such as `N=256,512`, `size=32,64`, `workers=1,2` or `budget=64M,1G`.
    #[arg(long = "sweep")]
    pub sweep: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 512])]
    pub frames: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize])]
    pub size: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Algorithm::WithFt, Algorithm::WithoutFt])]
    pub algorithms: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize])]
    pub workers: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_bytes)]
    pub memory_limit: Vec<u64>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Recorded stack to crop instead of synthetic data.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StackFormat::RawStack)]
    pub format: StackFormat,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_parser = parse_bytes, default_value = "2G")]
    pub max_stack_bytes: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `512`, `64K`, `1.5G`, `8GiB`. Suffixes are powers of 1024.
pub fn parse_bytes(text: &str) -> std::result::Result<u64, String> {
    let t = text.trim();
    let t = t.strip_suffix("iB").or_else(|| t.strip_suffix('B')).unwrap_or(t);
    let (number, scale) = match t.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&t[..t.len() - 1], 1u64 << 10),
        Some('M') => (&t[..t.len() - 1], 1 << 20),
        Some('G') => (&t[..t.len() - 1], 1 << 30),
        Some('T') => (&t[..t.len() - 1], 1 << 40),
        _ => (t, 1),
    };
    let value: f64 = number.trim().parse().map_err(|_| format!("not a byte count: {text:?}"))?;
    if !(value.is_finite() && value > 0.0) {
        return Err(format!("byte count must be positive: {text:?}"));
    }
    let bytes = (value * scale as f64).floor();
    if bytes < 1.0 || bytes > u64::MAX as f64 {
        return Err(format!("byte count out of range: {text:?}"));
    }
    Ok(bytes as u64)
}

/// Resolves a lag spec against a stack of `frames` frames. Lag 0 is always included.
pub fn parse_lags(spec: &str, frames: usize) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::InvalidArgument("stack has no frames".into()));
    }
    let mut lags = match spec.trim() {
        "all" => (0..frames).collect::<Vec<_>>(),
        "log" => {
            let mut v = vec![0];
            let mut m = 1;
            while m < frames {
                v.push(m);
                m *= 2;
            }
            v.push(frames - 1);
            v
        }
        list => {
            let mut v = vec![0];
            for item in list.split(',') {
                let m: usize = item
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad lag {item:?}")))?;
                if m >= frames {
                    return Err(Error::InvalidArgument(format!("lag {m} needs more than {frames} frames")));
                }
                v.push(m);
            }
            v
        }
    };
    lags.sort_unstable();
    lags.dedup();
    Ok(lags)
}

/// Half of `MemTotal` from `/proc/meminfo`, or 4 GiB when that is unavailable.
pub fn default_memory_limit() -> u64 {
    std::fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|text| {
            let line = text.lines().find(|l| l.starts_with("MemTotal:"))?;
            let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
            Some(kib * 1024 / 2)
        })
        .unwrap_or(4 << 30)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Format(_) | Error::InvalidArgument(_) => 1,
        Error::Plan(_) => 2,
        Error::Io { .. } => 3,
        Error::Merge(_) => 4,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Fully resolved engine settings, echoed into every manifest.
#[derive(Debug, Clone, Serialize)]
struct ResolvedRun {
    input: PathBuf,
    format: StackFormat,
    algorithm: Algorithm,
    lags_spec: String,
    lags: Vec<usize>,
    q_max: Option<f64>,
    memory_limit: u64,
    workers: usize,
    precision: Precision,
    version: &'static str,
}

fn run_engine(engine: &EngineArgs, algorithm: Algorithm, work_dir: &Path) -> Result<(ResultArchive, ResolvedRun)> {
    let mut source = open_source(&engine.input, engine.format)?;
    let dims = source.dims();
    let lags = parse_lags(&engine.lags, dims.frames)?;
    let resolved = ResolvedRun {
        input: engine.input.clone(),
        format: engine.format,
        algorithm,
        lags_spec: engine.lags.clone(),
        lags: lags.clone(),
        q_max: engine.q_max,
        memory_limit: engine.memory_limit.unwrap_or_else(default_memory_limit),
        workers: engine.workers,
        precision: engine.precision,
        version: env!("CARGO_PKG_VERSION"),
    };
    if algorithm == Algorithm::Direct && dims.frames > DIRECT_WARN_FRAMES {
        eprintln!(
            "warning: the direct oracle costs O(N²) image differences and transforms; N = {} will be slow",
            dims.frames
        );
    }
    let mut config = RunConfig::new(algorithm, lags, work_dir);
    config.precision = engine.precision;
    config.q_max = engine.q_max;
    config.workers = engine.workers;
    config.inject_overlap = engine.inject_overlap;
    let plan = plan_for(&dims, &config, resolved.memory_limit)?;
    eprintln!(
        "{}: {}x{}x{} frames, {} unit(s) of work",
        algorithm,
        dims.width,
        dims.height,
        dims.frames,
        plan.units()
    );
    let mut archive = run(source.as_mut(), &config, &plan)?;
    archive.meta.config = serde_json::to_value(&resolved).expect("config serializes");
    Ok((archive, resolved))
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    create_dir(&args.out)?;
    let (archive, resolved) = run_engine(&args.engine, args.algorithm, &args.out)?;
    crate::io::write_results(&archive, &args.out)?;

    let profile = azimuthal_average(&archive)?;
    let radial = args.out.join("radial.csv");
    profile.write_csv(create(&radial)?).map_err(|e| csv_err(&radial, e))?;
    let fits = fit_all(&profile, archive.meta.frame_interval);
    let fits_path = args.out.join("fits.csv");
    write_fits_csv(&fits, create(&fits_path)?).map_err(|e| csv_err(&fits_path, e))?;

    let timing = archive.timing.clone().unwrap_or_default();
    let counters = archive.counters.unwrap_or_default();
    let timing_path = args.out.join("timing.csv");
    timing.write_csv(&counters, create(&timing_path)?).map_err(|e| csv_err(&timing_path, e))?;

    write_json(
        &args.out.join("manifest.json"),
        &json!({ "command": "analyze", "run": resolved, "out": args.out }),
    )?;
    for (phase, fraction) in timing.fractions() {
        eprintln!("{phase:>6} {:6.1}%", 100.0 * fraction);
    }
    eprintln!("total  {:.3} s", timing.total);
    Ok(())
}

/// Returns whether the deviation stayed within the precision's tolerance.
fn compare(args: &CompareArgs) -> Result<bool> {
    if args.algorithms.len() != 2 || args.algorithms[0] == args.algorithms[1] {
        return Err(Error::InvalidArgument("--algorithms needs two different engines".into()));
    }
    let scratch;
    let root = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            scratch.path().to_path_buf()
        }
    };
    let mut archives = Vec::new();
    let mut resolved = Vec::new();
    for &alg in &args.algorithms {
        let dir = root.join(alg.as_str());
        create_dir(&dir)?;
        let (archive, run) = run_engine(&args.engine, alg, &dir)?;
        if args.out.is_some() {
            crate::io::write_results(&archive, &dir)?;
        }
        archives.push(archive);
        resolved.push(run);
    }
    let deviation = max_relative_deviation(&archives[0], &archives[1])?;
    let tolerance = match args.engine.precision {
        Precision::F64 => 1e-9,
        Precision::F32 => 1e-4,
    };
    let pass = deviation <= tolerance;
    println!("max relative deviation {deviation:.3e} (tolerance {tolerance:.0e})");
    println!("{:<12}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}", "algorithm", "disk", "step1", "step2", "merge", "other", "total");
    for (alg, archive) in args.algorithms.iter().zip(&archives) {
        let t = archive.timing.clone().unwrap_or_default();
        println!(
            "{:<12}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
            alg.as_str(),
            t.disk,
            t.step1,
            t.step2,
            t.merge,
            t.other,
            t.total
        );
    }
    if let Some(dir) = &args.out {
        let timings: Vec<_> = archives.iter().map(|a| a.timing.clone()).collect();
        write_json(
            &dir.join("compare.json"),
            &json!({
                "command": "compare",
                "runs": resolved,
                "deviation": deviation,
                "tolerance": tolerance,
                "pass": pass,
                "timing": timings,
            }),
        )?;
    }
    Ok(pass)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        particles: args.particles,
        diffusion: args.diffusion,
        psf_sigma: args.psf_sigma,
        amplitude: args.amplitude,
        background: args.background,
        width: args.width.unwrap_or(args.size),
        height: args.height.unwrap_or(args.size),
        frames: args.frames,
        seed: args.seed,
        frame_interval: args.frame_interval,
    };
    let stack = generate(&config)?;
    create_dir(&args.out)?;
    let target = match args.format {
        StackFormat::RawStack => {
            let path = args.out.join("stack.raw");
            write_raw_stack(&stack, &path)?;
            path
        }
        StackFormat::PgmDir => {
            let dir = args.out.join("frames");
            write_pgm_dir(&stack, &dir)?;
            dir
        }
    };
    write_config(&config, &args.out.join("synth.json"))?;
    eprintln!("wrote {}", target.display());
    Ok(())
}

fn parse_list<T>(values: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    values
        .split(',')
        .map(|v| item(v.trim()).map_err(Error::InvalidArgument))
        .collect()
}

fn sweep_spec(args: &BenchArgs) -> Result<SweepSpec> {
    let mut spec = SweepSpec {
        frames: args.frames.clone(),
        sizes: args.size.clone(),
        algorithms: args.algorithms.clone(),
        workers: args.workers.clone(),
        budgets: if args.memory_limit.is_empty() {
            vec![default_memory_limit()]
        } else {
            args.memory_limit.clone()
        },
        precision: args.precision,
        repetitions: args.repetitions,
        warmup: args.warmup,
        seed: args.seed,
        max_stack_bytes: args.max_stack_bytes,
    };
    let count = |v: &str| v.parse::<usize>().map_err(|_| format!("bad count {v:?}"));
    for axis in &args.sweep {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--sweep expects KEY=LIST, got {axis:?}")))?;
        match key.trim() {
            "N" | "n" | "frames" => spec.frames = parse_list(values, count)?,
            "size" => spec.sizes = parse_list(values, count)?,
            "workers" => spec.workers = parse_list(values, count)?,
            "budget" | "memory_limit" => spec.budgets = parse_list(values, parse_bytes)?,
            other => return Err(Error::InvalidArgument(format!("unknown sweep axis {other:?}"))),
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let spec = sweep_spec(args)?;
    let origin = match &args.input {
        Some(path) => StackOrigin::Recorded(load_stack(path, args.format)?),
        None => StackOrigin::Synthetic(SynthConfig::default()),
    };
    let total = spec.cell_count();
    let mut done = 0;
    let rows = sweep(&spec, &origin, |row| {
        done += 1;
        match &row.failure {
            None => eprintln!(
                "[{done}/{total}] {} N={} {}x{} workers={} budget={}: {:.4} s",
                row.algorithm, row.frames, row.width, row.height, row.workers, row.budget_bytes, row.timing.total
            ),
            Some(why) => eprintln!(
                "[{done}/{total}] {} N={} {}x{} workers={} budget={}: failed: {why}",
                row.algorithm, row.frames, row.width, row.height, row.workers, row.budget_bytes
            ),
        }
    })?;
    create_dir(&args.out)?;
    let csv_path = args.out.join("bench.csv");
    write_bench_csv(&rows, create(&csv_path)?).map_err(|e| csv_err(&csv_path, e))?;
    let crossings: Vec<_> = crossover(&rows)
        .into_iter()
        .map(|(k, n)| {
            json!({
                "width": k.width,
                "height": k.height,
                "workers": k.workers,
                "budget_bytes": k.budget_bytes,
                "crossover_frames": n,
            })
        })
        .collect();
    for c in &crossings {
        eprintln!("crossover {c}");
    }
    let origin_json = match &args.input {
        Some(path) => json!({ "recorded": path, "format": args.format }),
        None => json!({ "synthetic": SynthConfig::default() }),
    };
    write_json(
        &args.out.join("bench.json"),
        &json!({
            "command": "bench",
            "spec": spec,
            "origin": origin_json,
            "crossover": crossings,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    Ok(rows)
}

/// Runs one invocation and returns its exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Analyze(a) => analyze(a).map(|()| 0),
        Command::Compare(a) => compare(a).map(|pass| if pass { 0 } else { 5 }),
        Command::Synth(a) => synth(a).map(|()| 0),
        Command::Bench(a) => bench(a).map(|_| 0),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_suffixes() {
        assert_eq!(parse_bytes("1K"), Ok(1024));
        assert_eq!(parse_bytes("1k"), Ok(1024));
        assert_eq!(parse_bytes("23G"), Ok(23 << 30));
        assert_eq!(parse_bytes("8GiB"), Ok(8 << 30));
        assert_eq!(parse_bytes("1.5M"), Ok(3 << 19));
        assert_eq!(parse_bytes("4096"), Ok(4096));
        assert!(parse_bytes("0").is_err());
        assert!(parse_bytes("-1G").is_err());
        assert!(parse_bytes("lots").is_err());
    }

    #[test]
    fn lag_specs() {
        assert_eq!(parse_lags("all", 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_lags("log", 10).unwrap(), vec![0, 1, 2, 4, 8, 9]);
        assert_eq!(parse_lags("log", 9).unwrap(), vec![0, 1, 2, 4, 8]);
        assert_eq!(parse_lags("5, 1,5", 8).unwrap(), vec![0, 1, 5]);
        assert!(parse_lags("8", 8).is_err());
        assert!(parse_lags("x", 8).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&Error::Format(String::new())), 1);
        assert_eq!(exit_code(&Error::Plan(String::new())), 2);
        assert_eq!(exit_code(&Error::io("x", std::io::ErrorKind::NotFound.into())), 3);
        assert_eq!(exit_code(&Error::Merge(String::new())), 4);
    }

    #[test]
    fn memory_default_is_positive() {
        assert!(default_memory_limit() > 0);
    }

    #[test]
    fn sweep_axis_overrides() {
        let cli = Cli::try_parse_from([
            "ddm", "bench", "--sweep", "N=256,512,1024", "--size", "32", "--algorithms", "with_ft,without_ft",
            "--memory-limit", "1G",
        ])
        .unwrap();
        let Command::Bench(args) = cli.command else { panic!() };
        let spec = sweep_spec(&args).unwrap();
        assert_eq!(spec.frames, vec![256, 512, 1024]);
        assert_eq!(spec.sizes, vec![32]);
        assert_eq!(spec.budgets, vec![1 << 30]);
        assert_eq!(spec.cell_count(), 6);
    }

    #[test]
    fn bad_flags_exit_one() {
        assert_eq!(run_cli(["ddm", "analyze", "--bogus"]), 1);
        assert_eq!(run_cli(["ddm", "--help"]), 0);
    }
}
