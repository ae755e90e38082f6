//! Time-series containers shared by every sensor, plus the resampling,
//! normalization and sign-flip steps that prepare a stream for correlation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The sensor traces the pipeline knows how to pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    AccelZ,
    AudioEnergy,
    #[serde(rename = "FlowX_Front")]
    FlowXFront,
    #[serde(rename = "FlowY_Front")]
    FlowYFront,
    #[serde(rename = "FlowY_Dash")]
    FlowYDash,
    #[serde(rename = "FlowY_Face")]
    FlowYFace,
    SteeringAngle,
}

impl SensorKind {
    pub const ALL: [SensorKind; 7] = [
        SensorKind::AccelZ,
        SensorKind::AudioEnergy,
        SensorKind::FlowXFront,
        SensorKind::FlowYFront,
        SensorKind::FlowYDash,
        SensorKind::FlowYFace,
        SensorKind::SteeringAngle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::AccelZ => "AccelZ",
            SensorKind::AudioEnergy => "AudioEnergy",
            SensorKind::FlowXFront => "FlowX_Front",
            SensorKind::FlowYFront => "FlowY_Front",
            SensorKind::FlowYDash => "FlowY_Dash",
            SensorKind::FlowYFace => "FlowY_Face",
            SensorKind::SteeringAngle => "SteeringAngle",
        }
    }

    /// Kinds whose raw trace moves opposite to the reference sensor and must
    /// be negated before correlation.
    pub fn is_negatively_correlated(self) -> bool {
        matches!(
            self,
            SensorKind::FlowYFace | SensorKind::FlowYDash | SensorKind::FlowXFront
        )
    }

    /// Stable small integer used across the C interface.
    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(index: u32) -> Option<SensorKind> {
        Self::ALL.get(index as usize).copied()
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sensor kind `{s}`")))
    }
}

/// Timestamped scalar samples, possibly irregularly spaced.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    kind: SensorKind,
    timestamps_ms: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    /// Builds a series, rejecting duplicate or decreasing timestamps and
    /// non-finite samples.
    pub fn new(kind: SensorKind, timestamps_ms: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if timestamps_ms.len() != values.len() {
            return Err(Error::LengthMismatch {
                timestamps: timestamps_ms.len(),
                values: values.len(),
            });
        }
        for (i, (&t, &v)) in timestamps_ms.iter().zip(&values).enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(Error::NonFiniteValue(i));
            }
        }
        if let Some(i) = timestamps_ms.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicTimestamps {
                index: i + 1,
                previous_ms: timestamps_ms[i],
                timestamp_ms: timestamps_ms[i + 1],
            });
        }
        Ok(TimeSeries {
            kind,
            timestamps_ms,
            values,
        })
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    pub fn timestamps_ms(&self) -> &[f64] {
        &self.timestamps_ms
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(first, last)` timestamp, if any samples exist.
    pub fn domain_ms(&self) -> Option<(f64, f64)> {
        Some((*self.timestamps_ms.first()?, *self.timestamps_ms.last()?))
    }

    pub fn duration_ms(&self) -> f64 {
        self.domain_ms().map_or(0.0, |(a, b)| b - a)
    }

    pub fn with_kind(mut self, kind: SensorKind) -> Self {
        self.kind = kind;
        self
    }

    /// Adds `offset_ms` to every timestamp.
    pub fn shifted(&self, offset_ms: f64) -> TimeSeries {
        TimeSeries {
            kind: self.kind,
            timestamps_ms: self.timestamps_ms.iter().map(|t| t + offset_ms).collect(),
            values: self.values.clone(),
        }
    }

    /// Samples with `t0_ms <= t <= t1_ms`.
    pub fn window(&self, t0_ms: f64, t1_ms: f64) -> TimeSeries {
        let lo = self.timestamps_ms.partition_point(|&t| t < t0_ms);
        let hi = self.timestamps_ms.partition_point(|&t| t <= t1_ms);
        let hi = hi.max(lo);
        TimeSeries {
            kind: self.kind,
            timestamps_ms: self.timestamps_ms[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }
}

/// Fixed-rate series: sample `i` sits at `start_ms + 1000 * i / rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    rate_hz: f64,
    start_ms: f64,
    values: Vec<f64>,
}

impl UniformSeries {
    pub fn new(rate_hz: f64, start_ms: f64, values: Vec<f64>) -> Result<Self> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rate must be positive, got {rate_hz}"
            )));
        }
        if !start_ms.is_finite() {
            return Err(Error::InvalidArgument("start time must be finite".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(UniformSeries {
            rate_hz,
            start_ms,
            values,
        })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn start_ms(&self) -> f64 {
        self.start_ms
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_ms(&self) -> f64 {
        1000.0 / self.rate_hz
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_ms + 1000.0 * i as f64 / self.rate_hz
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> UniformSeries {
        UniformSeries {
            rate_hz: self.rate_hz,
            start_ms: self.start_ms,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Linearly interpolates `series` onto a `rate_hz` grid.
///
/// The grid starts at `span.0` (or the first timestamp) and covers every grid
/// point up to `span.1` (or the last timestamp). Grid points outside the
/// series' own time domain are filled with 0.
pub fn resample_uniform(
    series: &TimeSeries,
    rate_hz: f64,
    span: Option<(f64, f64)>,
) -> Result<UniformSeries> {
    if series.len() < 2 {
        return Err(Error::EmptySeries(series.len()));
    }
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rate must be positive, got {rate_hz}"
        )));
    }
    let ts = series.timestamps_ms();
    let vs = series.values();
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    let (t0, t1) = span.unwrap_or((first, last));
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(Error::InvalidArgument(format!(
            "invalid resampling span [{t0}, {t1}]"
        )));
    }
    if t1 < first || t0 > last {
        return Err(Error::InvalidArgument(format!(
            "span [{t0}, {t1}] does not intersect series domain [{first}, {last}]"
        )));
    }

    // Tolerate rounding so that a span of exactly k steps yields k + 1 points.
    let n = ((t1 - t0) * rate_hz / 1000.0 + 1e-9).floor() as usize + 1;
    let mut values = Vec::with_capacity(n);
    let mut j = 0usize;
    for i in 0..n {
        let t = t0 + 1000.0 * i as f64 / rate_hz;
        if t < first || t > last {
            values.push(0.0);
            continue;
        }
        while j + 2 < ts.len() && ts[j + 1] < t {
            j += 1;
        }
        // Bracket: ts[j] <= t <= ts[j + 1] (or the final segment).
        let (ta, tb) = (ts[j], ts[j + 1]);
        let (va, vb) = (vs[j], vs[j + 1]);
        let v = if t == tb {
            vb
        } else {
            va + (vb - va) * ((t - ta) / (tb - ta))
        };
        values.push(v);
    }
    UniformSeries::new(rate_hz, t0, values)
}

/// Shifts to zero mean and scales to unit population standard deviation.
pub fn normalize_zero_mean_unit_std(series: &UniformSeries) -> Result<UniformSeries> {
    let n = series.len();
    if n < 2 {
        return Err(Error::EmptySeries(n));
    }
    let (mean, std) = mean_and_population_std(series.values());
    let scale = series.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if std == 0.0 || std <= 1e-12 * scale {
        return Err(Error::ConstantSeries);
    }
    Ok(series.map_values(|v| (v - mean) / std))
}

/// Two-pass mean and population standard deviation.
pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Negates the three kinds that are negatively correlated with the reference
/// sensors; every other kind passes through unchanged.
pub fn apply_sign_convention(series: &UniformSeries, kind: SensorKind) -> UniformSeries {
    if kind.is_negatively_correlated() {
        series.map_values(|v| -v)
    } else {
        series.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(kind: SensorKind, pts: &[(f64, f64)]) -> TimeSeries {
        TimeSeries::new(
            kind,
            pts.iter().map(|p| p.0).collect(),
            pts.iter().map(|p| p.1).collect(),
        )
        .unwrap()
    }

    fn uniform(values: &[f64]) -> UniformSeries {
        UniformSeries::new(100.0, 0.0, values.to_vec()).unwrap()
    }

    #[test]
    fn resample_linear_endpoints() {
        let s = ts(SensorKind::AccelZ, &[(0.0, 0.0), (1000.0, 1.0)]);
        let u = resample_uniform(&s, 2.0, Some((0.0, 1000.0))).unwrap();
        assert_eq!(u.values(), &[0.0, 0.5, 1.0]);
        assert_eq!(u.start_ms(), 0.0);
    }

    #[test]
    fn resample_constant() {
        let s = ts(SensorKind::AccelZ, &[(0.0, 5.0), (1000.0, 5.0)]);
        let u = resample_uniform(&s, 4.0, None).unwrap();
        assert_eq!(u.len(), 5);
        assert!(u.values().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn resample_irregular_sine() {
        // 48 Hz-ish IMU timestamps with deterministic jitter; the analytic
        // 1 Hz sine evaluated on the 100 Hz grid is the oracle. Linear
        // interpolation of a unit sine with step h has RMS error
        // ~ w^2 h^2 / sqrt(120), about 1.1e-3 at 48 Hz, so the bound carries
        // a little headroom for the jitter.
        let mut t = 0.0;
        let mut pts = Vec::new();
        let mut k = 0u32;
        while t <= 10_000.0 {
            pts.push((t, (2.0 * std::f64::consts::PI * t / 1000.0).sin()));
            let jitter = ((k * 7919) % 17) as f64 / 16.0 - 0.5;
            t += (1000.0 / 48.0) * (1.0 + 0.2 * jitter);
            k += 1;
        }
        let s = ts(SensorKind::AccelZ, &pts);
        let u = resample_uniform(&s, 100.0, None).unwrap();
        let rms = (u
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let t = u.time_at(i);
                let e = v - (2.0 * std::f64::consts::PI * t / 1000.0).sin();
                e * e
            })
            .sum::<f64>()
            / u.len() as f64)
            .sqrt();
        assert!(rms <= 1.2e-3, "rms {rms}");
    }

    #[test]
    fn resample_zero_outside_domain() {
        let s = ts(SensorKind::AccelZ, &[(100.0, 1.0), (200.0, 1.0)]);
        let u = resample_uniform(&s, 100.0, Some((0.0, 300.0))).unwrap();
        assert_eq!(u.len(), 31);
        assert_eq!(u.values()[0], 0.0);
        assert_eq!(u.values()[10], 1.0);
        assert_eq!(u.values()[20], 1.0);
        assert_eq!(u.values()[21], 0.0);
    }

    #[test]
    fn resample_errors() {
        let one = ts(SensorKind::AccelZ, &[(0.0, 1.0)]);
        assert!(matches!(
            resample_uniform(&one, 100.0, None),
            Err(Error::EmptySeries(1))
        ));
        let s = ts(SensorKind::AccelZ, &[(0.0, 1.0), (10.0, 2.0)]);
        assert!(resample_uniform(&s, 100.0, Some((50.0, 60.0))).is_err());
        assert!(resample_uniform(&s, 0.0, None).is_err());
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let err = TimeSeries::new(SensorKind::AccelZ, vec![0.0, 5.0, 5.0], vec![1.0, 2.0, 3.0])
            .unwrap_err();
        assert!(matches!(
            err,
            Error::NonMonotonicTimestamps { index: 2, .. }
        ));
        assert!(matches!(
            TimeSeries::new(SensorKind::AccelZ, vec![0.0, 1.0], vec![1.0, f64::NAN]),
            Err(Error::NonFiniteValue(1))
        ));
    }

    #[test]
    fn normalize_hand_values() {
        let n = normalize_zero_mean_unit_std(&uniform(&[1.0, 2.0, 3.0])).unwrap();
        let k = 1.0 / (2.0f64 / 3.0).sqrt();
        for (got, want) in n.values().iter().zip([-k, 0.0, k]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((k - 1.224_744_871).abs() < 1e-9);
    }

    #[test]
    fn normalize_constant_is_error() {
        assert!(matches!(
            normalize_zero_mean_unit_std(&uniform(&[7.0, 7.0, 7.0])),
            Err(Error::ConstantSeries)
        ));
    }

    #[test]
    fn sign_convention() {
        let u = uniform(&[1.0, -2.0]);
        assert_eq!(
            apply_sign_convention(&u, SensorKind::FlowYFace).values(),
            &[-1.0, 2.0]
        );
        assert_eq!(apply_sign_convention(&u, SensorKind::AccelZ).values(), &[1.0, -2.0]);
        let twice = apply_sign_convention(
            &apply_sign_convention(&u, SensorKind::FlowXFront),
            SensorKind::FlowXFront,
        );
        assert_eq!(twice, u);
    }

    #[test]
    fn sensor_kind_names_round_trip() {
        for k in SensorKind::ALL {
            assert_eq!(k.as_str().parse::<SensorKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
            assert_eq!(SensorKind::from_index(k.index()), Some(k));
        }
    }

    fn sorted_times() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.5f64..50.0, 2..60).prop_map(|gaps| {
            gaps.iter()
                .scan(0.0, |t, g| {
                    *t += g;
                    Some(*t)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn resample_exact_on_affine(times in sorted_times(), a in -10.0f64..10.0, b in -5.0f64..5.0, rate in 10.0f64..500.0) {
            let values: Vec<f64> = times.iter().map(|t| a + b * t / 1000.0).collect();
            let s = TimeSeries::new(SensorKind::AccelZ, times, values).unwrap();
            let u = resample_uniform(&s, rate, None).unwrap();
            for (i, v) in u.values().iter().enumerate() {
                let want = a + b * u.time_at(i) / 1000.0;
                prop_assert!((v - want).abs() <= 1e-12 * (1.0 + want.abs()) * 16.0);
            }
        }

        #[test]
        fn normalize_idempotent(values in prop::collection::vec(-100.0f64..100.0, 3..200)) {
            let u = UniformSeries::new(50.0, 0.0, values).unwrap();
            if let Ok(once) = normalize_zero_mean_unit_std(&u) {
                let (m, s) = mean_and_population_std(once.values());
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((s - 1.0).abs() < 1e-9);
                let twice = normalize_zero_mean_unit_std(&once).unwrap();
                for (x, y) in once.values().iter().zip(twice.values()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn resample_commutes_with_grid_shift(values in prop::collection::vec(-5.0f64..5.0, 4..50), k in 0usize..20) {
            // Irregular-looking but fixed timestamps; shift by k grid steps.
            let times: Vec<f64> = (0..values.len()).map(|i| i as f64 * 23.0 + (i % 3) as f64).collect();
            let s = TimeSeries::new(SensorKind::AccelZ, times, values).unwrap();
            let shift = 10.0 * k as f64;
            let (t0, t1) = s.domain_ms().unwrap();
            let base = resample_uniform(&s, 100.0, Some((t0, t1))).unwrap();
            let moved = resample_uniform(&s.shifted(shift), 100.0, Some((t0 + shift, t1 + shift))).unwrap();
            prop_assert_eq!(base.len(), moved.len());
            for (x, y) in base.values().iter().zip(moved.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
