//! Pairwise delay estimation, multi-run calibration, stream alignment and
//! convergence analysis.
//!
//! Delays follow one convention throughout: a positive delay means the
//! target stream lags the reference, so aligning it requires moving the
//! target's timestamps earlier by that amount.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{
    apply_sign_convention, mean_and_population_std, normalize_zero_mean_unit_std, resample_uniform,
    SensorKind, TimeSeries, UniformSeries,
};
use crate::xcorr::{argmax_delay, cross_correlate_fft, CorrelationFunction, DelayEstimate};

/// Estimates from less data than this are flagged as low confidence.
pub const CONFIDENCE_FLOOR_MS: f64 = 8.0 * 60_000.0;

/// Implied shifts of one stream that disagree by more than this many grid
/// steps are reported.
const CONFLICT_GRID_STEPS: f64 = 2.0;

/// Slack allowed when a requested prefix is longer than the overlap.
const PREFIX_SLACK_MS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    Vibration,
    Steering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SensorPair {
    pub reference: SensorKind,
    pub target: SensorKind,
    pub event_type: EventType,
}

impl SensorPair {
    pub const fn new(reference: SensorKind, target: SensorKind, event_type: EventType) -> Self {
        SensorPair {
            reference,
            target,
            event_type,
        }
    }

    /// The accelerometer-anchored vibration pairs plus the steering pair.
    pub fn standard() -> Vec<SensorPair> {
        use SensorKind::*;
        vec![
            SensorPair::new(AccelZ, AudioEnergy, EventType::Vibration),
            SensorPair::new(AccelZ, FlowYFront, EventType::Vibration),
            SensorPair::new(AccelZ, FlowYDash, EventType::Vibration),
            SensorPair::new(AccelZ, FlowYFace, EventType::Vibration),
            SensorPair::new(SteeringAngle, FlowXFront, EventType::Steering),
        ]
    }

    /// The vibration pairings that do not involve the accelerometer.
    pub fn extra_vibration() -> Vec<SensorPair> {
        use SensorKind::*;
        let others = [AudioEnergy, FlowYFront, FlowYDash, FlowYFace];
        let mut out = Vec::new();
        for (i, &a) in others.iter().enumerate() {
            for &b in &others[i + 1..] {
                out.push(SensorPair::new(a, b, EventType::Vibration));
            }
        }
        out
    }
}

impl fmt::Display for SensorPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.reference, self.target)
    }
}

/// Knobs of the per-pair estimation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub grid_rate_hz: f64,
    pub max_lag_s: f64,
    pub refine: bool,
    pub min_duration_s: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            grid_rate_hz: 100.0,
            max_lag_s: 10.0,
            refine: true,
            min_duration_s: 60.0,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_rate_hz > 0.0) || !self.grid_rate_hz.is_finite() {
            return Err(Error::InvalidConfig("grid_rate_hz must be positive".into()));
        }
        if !(self.max_lag_s * self.grid_rate_hz >= 1.0) || !self.max_lag_s.is_finite() {
            return Err(Error::InvalidConfig(
                "max_lag_s * grid_rate_hz must be at least 1".into(),
            ));
        }
        if !(self.min_duration_s >= 0.0) || !self.min_duration_s.is_finite() {
            return Err(Error::InvalidConfig("min_duration_s must be non-negative".into()));
        }
        Ok(())
    }

    fn max_lag_samples(&self) -> usize {
        (self.max_lag_s * self.grid_rate_hz).round() as usize
    }
}

/// `[start, end]` shared by both series.
pub fn overlap_ms(a: &TimeSeries, b: &TimeSeries) -> Option<(f64, f64)> {
    let (a0, a1) = a.domain_ms()?;
    let (b0, b1) = b.domain_ms()?;
    let (s, e) = (a0.max(b0), a1.min(b1));
    (e >= s).then_some((s, e))
}

fn prepare(series: &TimeSeries, span: (f64, f64), rate: f64) -> Result<UniformSeries> {
    let grid = resample_uniform(series, rate, Some(span))?;
    let normalized = normalize_zero_mean_unit_std(&grid)?;
    Ok(apply_sign_convention(&normalized, series.kind()))
}

/// Correlation of the prepared reference and target over their overlap,
/// together with the overlap length in milliseconds.
pub fn pair_correlation(
    reference: &TimeSeries,
    target: &TimeSeries,
    cfg: &EstimationConfig,
) -> Result<(CorrelationFunction, f64)> {
    cfg.validate()?;
    let required_ms = cfg.min_duration_s * 1000.0;
    let (start, end) = overlap_ms(reference, target).ok_or(Error::InsufficientOverlap {
        overlap_ms: 0.0,
        required_ms,
    })?;
    let overlap = end - start;
    if overlap < required_ms || overlap <= 0.0 {
        return Err(Error::InsufficientOverlap {
            overlap_ms: overlap,
            required_ms,
        });
    }
    let f = prepare(reference, (start, end), cfg.grid_rate_hz)?;
    let g = prepare(target, (start, end), cfg.grid_rate_hz)?;
    let max_lag = cfg.max_lag_samples().min(f.len().max(g.len()) - 1);
    Ok((cross_correlate_fft(&f, &g, max_lag)?, overlap))
}

/// Optimal delay of `target` relative to `reference`.
///
/// Both series are resampled onto the common grid over their overlap,
/// normalized, sign-corrected by kind, correlated, and the peak is located.
pub fn estimate_pair_delay(
    reference: &TimeSeries,
    target: &TimeSeries,
    cfg: &EstimationConfig,
) -> Result<DelayEstimate> {
    let (corr, _) = pair_correlation(reference, target, cfg)?;
    argmax_delay(&corr, cfg.refine)
}

/// One run's delay for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayObservation {
    pub pair: SensorPair,
    pub delta_star_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub reference: SensorKind,
    pub target: SensorKind,
    pub event_type: EventType,
    /// Mean delay across runs.
    pub normalizing_delay_ms: f64,
    /// Population standard deviation across runs; absent for a single run.
    pub error_ms: Option<f64>,
    pub run_count: usize,
}

impl CalibrationEntry {
    pub fn pair(&self) -> SensorPair {
        SensorPair::new(self.reference, self.target, self.event_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    /// Mean of the per-pair errors.
    pub avg_error_ms: Option<f64>,
    /// Population standard deviation of the per-pair errors.
    pub error_std_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    pub source: String,
    pub duration_s: f64,
}

/// Per-pair normalizing delays learned from calibration runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub entries: Vec<CalibrationEntry>,
    pub summary: CalibrationSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<CalibrationRun>,
}

impl CalibrationTable {
    pub fn lookup(&self, reference: SensorKind, target: SensorKind) -> Option<&CalibrationEntry> {
        self.entries
            .iter()
            .find(|e| e.reference == reference && e.target == target)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// Aggregates delays per pair: mean is the normalizing delay, population
/// standard deviation the error estimate.
pub fn calibrate(observations: &[DelayObservation]) -> Result<CalibrationTable> {
    if observations.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut grouped: BTreeMap<SensorPair, Vec<f64>> = BTreeMap::new();
    for o in observations {
        if !o.delta_star_ms.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite delay for {}", o.pair)));
        }
        grouped.entry(o.pair).or_default().push(o.delta_star_ms);
    }
    let entries: Vec<CalibrationEntry> = grouped
        .into_iter()
        .map(|(pair, delays)| {
            let (mean, std) = mean_and_population_std(&delays);
            CalibrationEntry {
                reference: pair.reference,
                target: pair.target,
                event_type: pair.event_type,
                normalizing_delay_ms: mean,
                error_ms: (delays.len() >= 2).then_some(std),
                run_count: delays.len(),
            }
        })
        .collect();
    let errors: Vec<f64> = entries.iter().filter_map(|e| e.error_ms).collect();
    Ok(CalibrationTable {
        summary: summarize_errors(&errors),
        entries,
        runs: Vec::new(),
    })
}

/// Mean and spread of per-pair error estimates.
pub fn summarize_errors(errors: &[f64]) -> CalibrationSummary {
    if errors.is_empty() {
        return CalibrationSummary {
            avg_error_ms: None,
            error_std_ms: None,
        };
    }
    let (mean, std) = mean_and_population_std(errors);
    CalibrationSummary {
        avg_error_ms: Some(mean),
        error_std_ms: Some(std),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncOptions {
    pub estimation: EstimationConfig,
    pub anchor: SensorKind,
    /// Also estimate the vibration pairs that do not involve the accelerometer.
    pub extra_pairs: bool,
    /// Fail instead of proceeding uncorrected when a calibration table lacks
    /// an entry for an estimated pair.
    pub require_calibration: bool,
    /// Streams recorded on one clock (one camera yielding two traces).
    pub clock_groups: Vec<Vec<SensorKind>>,
}

impl Default for SyncOptions {
    fn default() -> Self {
        SyncOptions {
            estimation: EstimationConfig::default(),
            anchor: SensorKind::AccelZ,
            extra_pairs: false,
            require_calibration: false,
            clock_groups: vec![vec![SensorKind::FlowXFront, SensorKind::FlowYFront]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub pair: SensorPair,
    pub estimate: DelayEstimate,
    pub overlap_ms: f64,
    pub normalizing_delay_ms: Option<f64>,
    pub corrected_delay_ms: Option<f64>,
    pub low_confidence: bool,
}

impl PairResult {
    /// Delay used for alignment: corrected when calibrated, raw otherwise.
    pub fn effective_delay_ms(&self) -> f64 {
        self.corrected_delay_ms.unwrap_or(self.estimate.delta_star_ms)
    }
}

#[derive(Debug, Clone)]
pub struct SyncOutcome {
    pub pairs: Vec<PairResult>,
    /// Amount added to each stream's timestamps.
    pub shifts_ms: BTreeMap<SensorKind, f64>,
    pub shifted: BTreeMap<SensorKind, TimeSeries>,
    pub warnings: Vec<String>,
}

/// Estimates every applicable pair in parallel; output order follows
/// `pairs`.
pub fn estimate_pairs(
    streams: &BTreeMap<SensorKind, TimeSeries>,
    pairs: &[SensorPair],
    cfg: &EstimationConfig,
) -> Result<Vec<(SensorPair, DelayEstimate, f64)>> {
    pairs
        .par_iter()
        .map(|&pair| {
            let reference = &streams[&pair.reference];
            let target = &streams[&pair.target];
            let (corr, overlap) = pair_correlation(reference, target, cfg)?;
            Ok((pair, argmax_delay(&corr, cfg.refine)?, overlap))
        })
        .collect()
}

/// Estimates delays against the anchor and shifts every reachable stream
/// onto the anchor's clock.
///
/// With a calibration table, each pair's normalizing delay is subtracted
/// before the shift is derived. Streams reachable only through a clock group
/// (e.g. the steering sensor via the front camera) are resolved through that
/// chain; the first pair to resolve a stream wins, and later disagreements
/// larger than two grid steps are reported as warnings.
pub fn synchronize(
    streams: &BTreeMap<SensorKind, TimeSeries>,
    calibration: Option<&CalibrationTable>,
    options: &SyncOptions,
) -> Result<SyncOutcome> {
    options.estimation.validate()?;
    if !streams.contains_key(&options.anchor) {
        return Err(Error::InvalidArgument(format!(
            "anchor stream {} is missing",
            options.anchor
        )));
    }
    let mut candidates = SensorPair::standard();
    if options.extra_pairs {
        candidates.extend(SensorPair::extra_vibration());
    }
    let pairs: Vec<SensorPair> = candidates
        .into_iter()
        .filter(|p| streams.contains_key(&p.reference) && streams.contains_key(&p.target))
        .collect();

    let mut warnings = Vec::new();
    let mut results = Vec::with_capacity(pairs.len());
    for (pair, estimate, overlap) in estimate_pairs(streams, &pairs, &options.estimation)? {
        let normalizing = match calibration {
            None => None,
            Some(table) => match table.lookup(pair.reference, pair.target) {
                Some(entry) => Some(entry.normalizing_delay_ms),
                None if options.require_calibration => {
                    return Err(Error::MissingCalibrationEntry(pair.to_string()))
                }
                None => {
                    warnings.push(format!("no calibration entry for {pair}; using raw delay"));
                    Some(0.0)
                }
            },
        };
        results.push(PairResult {
            pair,
            estimate,
            overlap_ms: overlap,
            normalizing_delay_ms: normalizing,
            corrected_delay_ms: normalizing.map(|n| estimate.delta_star_ms - n),
            low_confidence: overlap < CONFIDENCE_FLOOR_MS,
        });
    }

    let step_ms = 1000.0 / options.estimation.grid_rate_hz;
    let offsets = resolve_offsets(
        options.anchor,
        &results,
        &options.clock_groups,
        step_ms,
        &mut warnings,
    );
    let mut shifts_ms = BTreeMap::new();
    let mut shifted = BTreeMap::new();
    for (&kind, series) in streams {
        match offsets.get(&kind) {
            Some(&offset) => {
                // `+ 0.0` normalizes a negative zero.
                let shift = -offset + 0.0;
                shifts_ms.insert(kind, shift);
                shifted.insert(kind, series.shifted(shift));
            }
            None => warnings.push(format!("{kind} is not connected to the anchor; left unshifted")),
        }
    }
    Ok(SyncOutcome {
        pairs: results,
        shifts_ms,
        shifted,
        warnings,
    })
}

/// Lag of every stream behind the anchor, propagated along pairs (in
/// priority order) and clock groups until nothing changes.
fn resolve_offsets(
    anchor: SensorKind,
    pairs: &[PairResult],
    clock_groups: &[Vec<SensorKind>],
    step_ms: f64,
    warnings: &mut Vec<String>,
) -> BTreeMap<SensorKind, f64> {
    // (from, to, offset(to) - offset(from)); vibration pairs before steering
    // pairs, clock groups in between so the steering chain goes through them.
    let mut edges: Vec<(SensorKind, SensorKind, f64, String)> = Vec::new();
    let push_pair = |edges: &mut Vec<_>, p: &PairResult| {
        edges.push((p.pair.reference, p.pair.target, p.effective_delay_ms(), p.pair.to_string()));
    };
    for p in pairs.iter().filter(|p| p.pair.event_type == EventType::Vibration) {
        push_pair(&mut edges, p);
    }
    for group in clock_groups {
        for w in group.windows(2) {
            edges.push((w[0], w[1], 0.0, format!("clock group {}/{}", w[0], w[1])));
        }
    }
    for p in pairs.iter().filter(|p| p.pair.event_type == EventType::Steering) {
        push_pair(&mut edges, p);
    }

    let mut offsets = BTreeMap::from([(anchor, 0.0)]);
    let mut used = vec![false; edges.len()];
    loop {
        let mut changed = false;
        for (i, (from, to, delta, label)) in edges.iter().enumerate() {
            if used[i] {
                continue;
            }
            let (known_from, known_to) = (offsets.get(from).copied(), offsets.get(to).copied());
            match (known_from, known_to) {
                (Some(a), None) => {
                    offsets.insert(*to, a + delta);
                }
                (None, Some(b)) => {
                    offsets.insert(*from, b - delta);
                }
                (Some(a), Some(b)) => {
                    let implied = a + delta;
                    if (implied - b).abs() > CONFLICT_GRID_STEPS * step_ms {
                        warnings.push(format!(
                            "{label} implies {to} lags by {implied:.3} ms, already resolved at {b:.3} ms"
                        ));
                    }
                }
                (None, None) => continue,
            }
            used[i] = true;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    offsets
}

/// One point of a convergence curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub duration_min: f64,
    pub delta_star_ms: f64,
    /// `|delay(prefix) - delay(full stream)|`.
    pub error_ms: f64,
}

/// Delay estimated from the first `duration_ms` of the pair's overlap. A
/// duration covering the whole overlap uses the full streams unchanged.
pub fn prefix_delay(
    reference: &TimeSeries,
    target: &TimeSeries,
    duration_ms: f64,
    cfg: &EstimationConfig,
) -> Result<DelayEstimate> {
    let min_ms = cfg.min_duration_s * 1000.0;
    if duration_ms < min_ms {
        return Err(Error::PrefixTooShort {
            duration_ms,
            min_ms,
        });
    }
    let (start, end) = overlap_ms(reference, target).ok_or(Error::InsufficientOverlap {
        overlap_ms: 0.0,
        required_ms: min_ms,
    })?;
    if duration_ms >= end - start {
        return estimate_pair_delay(reference, target, cfg);
    }
    let cut = start + duration_ms;
    estimate_pair_delay(
        &reference.window(f64::NEG_INFINITY, cut),
        &target.window(f64::NEG_INFINITY, cut),
        cfg,
    )
}

/// Error of prefix estimates against the full-stream estimate.
///
/// `durations_min` must be ascending and no longer than the overlap (within
/// one second).
pub fn convergence_curve(
    reference: &TimeSeries,
    target: &TimeSeries,
    durations_min: &[f64],
    cfg: &EstimationConfig,
) -> Result<Vec<ConvergencePoint>> {
    if durations_min.is_empty() {
        return Err(Error::EmptyInput);
    }
    if durations_min.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("durations must be strictly ascending".into()));
    }
    let (start, end) = overlap_ms(reference, target).ok_or(Error::InsufficientOverlap {
        overlap_ms: 0.0,
        required_ms: cfg.min_duration_s * 1000.0,
    })?;
    let longest = durations_min[durations_min.len() - 1] * 60_000.0;
    if longest > end - start + PREFIX_SLACK_MS {
        return Err(Error::InvalidArgument(format!(
            "longest duration {:.1} min exceeds the {:.1} min overlap",
            longest / 60_000.0,
            (end - start) / 60_000.0
        )));
    }
    let full = estimate_pair_delay(reference, target, cfg)?.delta_star_ms;
    durations_min
        .iter()
        .map(|&d| {
            let est = prefix_delay(reference, target, d * 60_000.0, cfg)?;
            Ok(ConvergencePoint {
                duration_min: d,
                delta_star_ms: est.delta_star_ms,
                error_ms: (est.delta_star_ms - full).abs(),
            })
        })
        .collect()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        (0..n)
            .map(|_| {
                acc = 0.8 * acc + rng.gen_range(-1.0..1.0);
                acc
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn delay_ignores_constant_offsets(seed in 0u64..1000, shift in -150i64..150, c in -1e3f64..1e3) {
            let latent = noisy(seed, 9000);
            let ts: Vec<f64> = (0..8000).map(|i| i as f64 * 10.0).collect();
            let r: Vec<f64> = latent[500..8500].to_vec();
            let t: Vec<f64> = (0..8000).map(|i| latent[(500 + i as i64 - shift) as usize]).collect();
            let series = |v: Vec<f64>, k| TimeSeries::new(k, ts.clone(), v).unwrap();
            let cfg = EstimationConfig { max_lag_s: 2.0, ..EstimationConfig::default() };
            let base = estimate_pair_delay(&series(r.clone(), SensorKind::AccelZ), &series(t.clone(), SensorKind::AudioEnergy), &cfg).unwrap();
            let lifted_r: Vec<f64> = r.iter().map(|v| v + c).collect();
            let lifted_t: Vec<f64> = t.iter().map(|v| v - c).collect();
            let moved = estimate_pair_delay(&series(lifted_r, SensorKind::AccelZ), &series(lifted_t, SensorKind::AudioEnergy), &cfg).unwrap();
            prop_assert_eq!(base.integer_lag, shift);
            prop_assert_eq!(moved.integer_lag, base.integer_lag);
            prop_assert!((moved.delta_star_ms - base.delta_star_ms).abs() < 1e-6);
        }

        #[test]
        fn calibration_is_two_pass_mean_and_std(delays in prop::collection::vec(-2000.0f64..2000.0, 1..12)) {
            let pair = SensorPair::standard()[0];
            let obs: Vec<DelayObservation> = delays.iter().map(|&d| DelayObservation { pair, delta_star_ms: d }).collect();
            let table = calibrate(&obs).unwrap();
            let n = delays.len() as f64;
            let mut sum = 0.0;
            for d in &delays {
                sum += d;
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for d in &delays {
                ss += (d - mean) * (d - mean);
            }
            let e = &table.entries[0];
            prop_assert_eq!(e.normalizing_delay_ms.to_bits(), mean.to_bits());
            prop_assert_eq!(e.run_count, delays.len());
            match e.error_ms {
                Some(std) => prop_assert_eq!(std.to_bits(), (ss / n).sqrt().to_bits()),
                None => prop_assert_eq!(delays.len(), 1),
            }
        }
    }
}
