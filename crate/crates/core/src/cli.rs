//! The `sensync` command line.
//!
//! Every failure ends with a single `ERROR <CODE>: <message>` line on stderr
//! and exit status 1. `sync --strict` exits with 2 when any pair is low
//! confidence. Log verbosity comes from `SENSYNC_LOG`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::report::{round3, SyncReport};
use crate::stream::{mean_and_population_std, SensorKind, TimeSeries};
use crate::sync::{
    self, calibrate, estimate_pairs, CalibrationRun, CalibrationTable, DelayObservation, EventType,
    SensorPair,
};
use crate::synthgen::{self, FrameSpec, GroundTruth, RunSpec};

pub const LOG_ENV: &str = "SENSYNC_LOG";

#[derive(Debug, Parser)]
#[command(name = "sensync", version, about = "Passive multi-sensor time synchronization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate pair delays and align every stream to the anchor.
    Sync(SyncArgs),
    /// Learn normalizing delays from one or more run directories.
    Calibrate(CalibrateArgs),
    /// Prefix-length convergence of the delay estimates, as CSV.
    Converge(ConvergeArgs),
    /// Write a synthetic run directory.
    Generate(GenerateArgs),
    /// Dump one pair's correlation function as CSV.
    XcorrDump(XcorrDumpArgs),
}

/// Settings that may override the config file.
#[derive(Debug, Args, Default)]
struct Overrides {
    #[arg(long)]
    grid_rate_hz: Option<f64>,
    #[arg(long)]
    max_lag_s: Option<f64>,
    #[arg(long)]
    refine: Option<bool>,
    #[arg(long)]
    min_duration_s: Option<f64>,
    #[arg(long)]
    anchor: Option<SensorKind>,
    /// Also estimate vibration pairs not involving the accelerometer.
    #[arg(long)]
    extra_pairs: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut Config) {
        if let Some(v) = self.grid_rate_hz {
            cfg.grid_rate_hz = v;
        }
        if let Some(v) = self.max_lag_s {
            cfg.max_lag_s = v;
        }
        if let Some(v) = self.refine {
            cfg.refine = v;
        }
        if let Some(v) = self.min_duration_s {
            cfg.min_duration_s = v;
        }
        if let Some(v) = self.anchor {
            cfg.anchor = v;
        }
        cfg.extra_pairs |= self.extra_pairs;
    }
}

#[derive(Debug, Args)]
struct SyncArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    require_calibration: bool,
    /// Exit with status 2 when any pair is below the confidence floor.
    #[arg(long)]
    strict: bool,
    /// Report path; stdout when neither this nor the config names one.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    shifted_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Run directories, each holding a `sync.toml`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Estimation settings shared by all runs (sensor inputs are ignored).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Prefix lengths in minutes, ascending.
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10,15,20,25,30,37")]
    durations: Vec<f64>,
    /// Only use the first this-many minutes of every run.
    #[arg(long)]
    truncate_min: Option<f64>,
    /// Aggregate CSV path; stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run, per-pair curves.
    #[arg(long)]
    per_pair: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// TOML or JSON run spec; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_s: Option<f64>,
    /// Emit camera traces as PGM frame sequences.
    #[arg(long)]
    emit_frames: bool,
}

#[derive(Debug, Args)]
struct XcorrDumpArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// `REFERENCE/TARGET`, e.g. `AccelZ/AudioEnergy`.
    #[arg(long)]
    pair: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("ERROR INVALID_ARGUMENT: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("ERROR {}: {message}", e.code());
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Sync(a) => cmd_sync(a),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| ExitCode::SUCCESS),
        Command::Converge(a) => cmd_converge(a).map(|_| ExitCode::SUCCESS),
        Command::Generate(a) => cmd_generate(a).map(|_| ExitCode::SUCCESS),
        Command::XcorrDump(a) => cmd_xcorr_dump(a).map(|_| ExitCode::SUCCESS),
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Aligns the configured streams and builds the report. No files are
/// written.
pub fn run_sync(config: &Config) -> Result<(SyncReport, sync::SyncOutcome)> {
    config.validate()?;
    let calibration = config
        .calibration
        .as_deref()
        .map(CalibrationTable::load)
        .transpose()?;
    let truth = config.ground_truth.as_deref().map(GroundTruth::load).transpose()?;
    let streams = config.load_streams()?;
    let outcome = sync::synchronize(&streams, calibration.as_ref(), &config.sync_options())?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let report = SyncReport::new(config, &outcome, calibration.as_ref(), truth.as_ref());
    Ok((report, outcome))
}

fn cmd_sync(a: SyncArgs) -> Result<ExitCode> {
    let mut config = Config::load(&a.config)?;
    a.overrides.apply(&mut config);
    if let Some(p) = &a.calibration {
        config.calibration = Some(absolute(p)?);
    }
    if let Some(p) = &a.ground_truth {
        config.ground_truth = Some(absolute(p)?);
    }
    config.require_calibration |= a.require_calibration;
    config.strict |= a.strict;
    let base = a.config.parent().unwrap_or(Path::new(""));
    let resolve_out = |p: &Path| -> Result<PathBuf> {
        if p.is_relative() {
            absolute(&base.join(p))
        } else {
            Ok(p.to_path_buf())
        }
    };
    let report_path = match &a.report {
        Some(p) => Some(absolute(p)?),
        None => config.output.report.as_deref().map(resolve_out).transpose()?,
    };
    let shifted_dir = match &a.shifted_dir {
        Some(p) => Some(absolute(p)?),
        None => config.output.shifted_dir.as_deref().map(resolve_out).transpose()?,
    };

    let (report, outcome) = run_sync(&config)?;

    // All outputs are written here, after every estimate succeeded.
    if let Some(dir) = &shifted_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (kind, series) in &outcome.shifted {
            crate::io::write_series_csv(&dir.join(format!("{kind}.csv")), series, "value")?;
        }
    }
    write_text(report_path.as_deref(), &report.to_json())?;
    if config.strict && report.any_low_confidence() {
        eprintln!(
            "{} pair(s) below the {:.0}-minute confidence floor",
            report.summary.low_confidence_pairs,
            sync::CONFIDENCE_FLOOR_MS / 60_000.0
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads a run directory's `sync.toml`, with estimation settings taken from
/// `shared` when given.
fn load_run(dir: &Path, shared: Option<&Config>, overrides: &Overrides) -> Result<Config> {
    let mut cfg = Config::load(&dir.join(synthgen::layout::CONFIG))?;
    if let Some(s) = shared {
        cfg = Config {
            sensors: cfg.sensors,
            ground_truth: cfg.ground_truth,
            ..s.clone()
        };
    }
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn pairs_for(cfg: &Config, streams: &BTreeMap<SensorKind, TimeSeries>) -> Vec<SensorPair> {
    let mut pairs = SensorPair::standard();
    if cfg.extra_pairs {
        pairs.extend(SensorPair::extra_vibration());
    }
    pairs.retain(|p| streams.contains_key(&p.reference) && streams.contains_key(&p.target));
    pairs
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let shared = a.config.as_deref().map(Config::load).transpose()?;
    let mut observations = Vec::new();
    let mut runs = Vec::new();
    for dir in &a.runs {
        let cfg = load_run(dir, shared.as_ref(), &a.overrides)?;
        let streams = cfg.load_streams()?;
        let pairs = pairs_for(&cfg, &streams);
        for (pair, estimate, _) in estimate_pairs(&streams, &pairs, &cfg.estimation())? {
            observations.push(DelayObservation {
                pair,
                delta_star_ms: estimate.delta_star_ms,
            });
        }
        let duration_ms = streams.get(&cfg.anchor).map_or(0.0, TimeSeries::duration_ms);
        runs.push(CalibrationRun {
            source: dir.display().to_string(),
            duration_s: round3(duration_ms / 1000.0),
        });
    }
    let mut table = calibrate(&observations)?;
    table.runs = runs;

    let mut text = String::new();
    for e in &table.entries {
        let err = e.error_ms.map_or("-".to_string(), |v| format!("{v:.1}"));
        let _ = writeln!(
            text,
            "{}/{}\t{:.1}\t{err}",
            e.reference, e.target, e.normalizing_delay_ms
        );
    }
    match table.summary.avg_error_ms {
        Some(avg) => {
            let _ = writeln!(text, "avg_error_ms\t{avg:.1}");
        }
        None => {
            let _ = writeln!(text, "avg_error_ms\t-");
        }
    }
    match &a.out {
        Some(path) => {
            table.save(path)?;
            print!("{text}");
        }
        None => {
            eprint!("{text}");
            print!("{}", serde_json::to_string_pretty(&table).expect("table serializes") + "\n");
        }
    }
    Ok(())
}

/// One point of a per-run, per-pair convergence curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub run: String,
    pub pair: SensorPair,
    pub duration_min: f64,
    /// `Err` carries the reason the point was skipped.
    pub result: std::result::Result<(f64, f64), String>,
}

/// Convergence points for every pair of one run. Points whose prefix is too
/// short are reported, not fatal.
pub fn run_convergence(
    run: &str,
    cfg: &Config,
    streams: &BTreeMap<SensorKind, TimeSeries>,
    durations_min: &[f64],
    truncate_min: Option<f64>,
) -> Result<Vec<CurvePoint>> {
    if durations_min.is_empty() || durations_min.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidArgument("durations must be positive".into()));
    }
    if durations_min.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("durations must be strictly ascending".into()));
    }
    let est = cfg.estimation();
    let mut out = Vec::new();
    for pair in pairs_for(cfg, streams) {
        let (mut reference, mut target) = (streams[&pair.reference].clone(), streams[&pair.target].clone());
        if let Some(limit) = truncate_min {
            let (start, _) = sync::overlap_ms(&reference, &target).ok_or(Error::InsufficientOverlap {
                overlap_ms: 0.0,
                required_ms: est.min_duration_s * 1000.0,
            })?;
            let cut = start + limit * 60_000.0;
            reference = reference.window(f64::NEG_INFINITY, cut);
            target = target.window(f64::NEG_INFINITY, cut);
        }
        let full = sync::estimate_pair_delay(&reference, &target, &est)?.delta_star_ms;
        for &d in durations_min {
            let result = match sync::prefix_delay(&reference, &target, d * 60_000.0, &est) {
                Ok(e) => Ok((e.delta_star_ms, (e.delta_star_ms - full).abs())),
                Err(e @ (Error::PrefixTooShort { .. } | Error::InsufficientOverlap { .. })) => {
                    Err(format!("{}: {e}", e.code()))
                }
                Err(e) => return Err(e),
            };
            out.push(CurvePoint {
                run: run.to_string(),
                pair,
                duration_min: d,
                result,
            });
        }
    }
    Ok(out)
}

/// `duration_min,mean_error_ms,std_error_ms` over every successful point.
pub fn aggregate_csv(points: &[CurvePoint], durations_min: &[f64]) -> String {
    let mut text = String::from("duration_min,mean_error_ms,std_error_ms\n");
    for &d in durations_min {
        let errors: Vec<f64> = points
            .iter()
            .filter(|p| p.duration_min == d)
            .filter_map(|p| p.result.as_ref().ok().map(|r| r.1))
            .collect();
        if errors.is_empty() {
            let _ = writeln!(text, "{d},,");
            continue;
        }
        let (mean, std) = mean_and_population_std(&errors);
        let _ = writeln!(text, "{d},{},{}", round3(mean), round3(std));
    }
    text
}

fn cmd_converge(a: ConvergeArgs) -> Result<()> {
    let shared = a.config.as_deref().map(Config::load).transpose()?;
    let mut points = Vec::new();
    for dir in &a.runs {
        let cfg = load_run(dir, shared.as_ref(), &a.overrides)?;
        let streams = cfg.load_streams()?;
        let run = dir.display().to_string();
        points.extend(run_convergence(&run, &cfg, &streams, &a.durations, a.truncate_min)?);
    }
    for p in &points {
        if let Err(reason) = &p.result {
            log::warn!("{} {} at {} min skipped: {reason}", p.run, p.pair, p.duration_min);
        }
    }
    if let Some(path) = &a.per_pair {
        let mut text = String::from("run,pair,duration_min,delta_star_ms,error_ms,status\n");
        for p in &points {
            let (delay, error, status) = match &p.result {
                Ok((d, e)) => (round3(*d).to_string(), round3(*e).to_string(), "ok".to_string()),
                Err(reason) => (String::new(), String::new(), reason.replace(',', ";")),
            };
            let _ = writeln!(
                text,
                "{},{},{},{delay},{error},{status}",
                p.run.replace(',', ";"),
                p.pair,
                p.duration_min
            );
        }
        write_text(Some(path), &text)?;
    }
    write_text(a.out.as_deref(), &aggregate_csv(&points, &a.durations))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => RunSpec::load(p)?,
        None => RunSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(d) = a.duration_s {
        spec.duration_s = d;
    }
    if a.emit_frames && spec.frames.is_none() {
        spec.frames = Some(FrameSpec::default());
    }
    synthgen::write_run(&spec, &a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn parse_pair(text: &str) -> Result<SensorPair> {
    let (r, t) = text
        .split_once('/')
        .ok_or_else(|| Error::InvalidArgument(format!("pair `{text}` is not REFERENCE/TARGET")))?;
    let (reference, target): (SensorKind, SensorKind) = (r.trim().parse()?, t.trim().parse()?);
    let event_type = SensorPair::standard()
        .into_iter()
        .find(|p| p.reference == reference && p.target == target)
        .map_or(EventType::Vibration, |p| p.event_type);
    Ok(SensorPair::new(reference, target, event_type))
}

fn cmd_xcorr_dump(a: XcorrDumpArgs) -> Result<()> {
    let pair = parse_pair(&a.pair)?;
    let mut config = Config::load(&a.config)?;
    a.overrides.apply(&mut config);
    config.validate()?;
    for kind in [pair.reference, pair.target] {
        if !config.sensors.contains_key(&kind) {
            return Err(Error::InvalidConfig(format!("{kind} has no input")));
        }
    }
    config.sensors.retain(|k, _| *k == pair.reference || *k == pair.target);
    let streams = config.load_streams()?;
    let (corr, _) = sync::pair_correlation(&streams[&pair.reference], &streams[&pair.target], &config.estimation())?;
    let mut buf = Vec::new();
    corr.write_csv(&mut buf).expect("writing to memory");
    write_text(a.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        let p = parse_pair("SteeringAngle/FlowX_Front").unwrap();
        assert_eq!(p.event_type, EventType::Steering);
        let p = parse_pair("audioenergy / flowy_dash").unwrap();
        assert_eq!((p.reference, p.target), (SensorKind::AudioEnergy, SensorKind::FlowYDash));
        assert!(parse_pair("AccelZ").is_err());
        assert!(parse_pair("AccelZ/Nope").is_err());
    }

    #[test]
    fn aggregate_format() {
        let pair = SensorPair::standard()[0];
        let point = |d, e| CurvePoint {
            run: "r".into(),
            pair,
            duration_min: d,
            result: Ok((0.0, e)),
        };
        let points = vec![
            point(4.0, 2.0),
            point(4.0, 4.0),
            point(10.0, 1.0),
            CurvePoint {
                result: Err("short".into()),
                ..point(10.0, 0.0)
            },
        ];
        assert_eq!(
            aggregate_csv(&points, &[4.0, 10.0, 20.0]),
            "duration_min,mean_error_ms,std_error_ms\n4,3,1\n10,1,0\n20,,\n"
        );
    }
}
