//! Bounded-lag cross-correlation and peak delay extraction.
//!
//! The correlation of `f` against `g` at lag `t` is `sum_i f[i] * g[i + t]`,
//! with both sequences treated as zero outside their domains. A sequence `g`
//! that is `f` delayed by `d` samples (`g[i] = f[i - d]`) peaks at `t = +d`.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::UniformSeries;

/// Minimum distance, in grid samples, between the main peak and the
/// competitor used for the ambiguity ratio.
pub const SECOND_PEAK_EXCLUSION: i64 = 20;

/// Correlation values over a contiguous range of integer lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFunction {
    first_lag: i64,
    values: Vec<f64>,
    rate_hz: f64,
}

impl CorrelationFunction {
    /// Values for lags `-max_lag ..= max_lag`.
    pub fn symmetric(max_lag: usize, values: Vec<f64>, rate_hz: f64) -> Result<Self> {
        if values.len() != 2 * max_lag + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for max lag {max_lag}, got {}",
                2 * max_lag + 1,
                values.len()
            )));
        }
        Self::from_parts(-(max_lag as i64), values, rate_hz)
    }

    /// Values for lags `first_lag, first_lag + 1, ...`.
    pub fn from_parts(first_lag: i64, values: Vec<f64>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rate must be positive, got {rate_hz}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(CorrelationFunction {
            first_lag,
            values,
            rate_hz,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn first_lag(&self) -> i64 {
        self.first_lag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.values.len() as i64).map(move |i| self.first_lag + i)
    }

    pub fn lag_ms(&self, lag: i64) -> f64 {
        1000.0 * lag as f64 / self.rate_hz
    }

    /// Value at `lag`, if inside the window.
    pub fn at(&self, lag: i64) -> Option<f64> {
        let i = lag - self.first_lag;
        (i >= 0).then(|| self.values.get(i as usize).copied()).flatten()
    }

    /// Writes `lag_ms,value` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lag_ms,value")?;
        for (lag, v) in self.lags().zip(&self.values) {
            writeln!(out, "{:.3},{}", self.lag_ms(lag), v)?;
        }
        Ok(())
    }
}

/// The lag that maximizes a correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    /// Optimal shift in milliseconds; positive when the second series lags
    /// the first.
    pub delta_star_ms: f64,
    pub peak_value: f64,
    pub integer_lag: i64,
    pub refined: bool,
    /// Peak value over the largest value at least [`SECOND_PEAK_EXCLUSION`]
    /// samples away. `None` when no such competitor exists or either value
    /// is non-positive.
    pub second_peak_ratio: Option<f64>,
    pub rate_hz: f64,
}

fn check_inputs(f: &UniformSeries, g: &UniformSeries, max_lag: usize) -> Result<()> {
    if f.rate_hz() != g.rate_hz() {
        return Err(Error::RateMismatch(f.rate_hz(), g.rate_hz()));
    }
    if f.is_empty() || g.is_empty() {
        return Err(Error::EmptyInput);
    }
    let limit = f.len().max(g.len());
    if max_lag >= limit {
        return Err(Error::LagTooLarge { max_lag, limit });
    }
    Ok(())
}

/// Direct O(n * lags) evaluation of the correlation sum.
pub fn cross_correlate_naive(
    f: &UniformSeries,
    g: &UniformSeries,
    max_lag: usize,
) -> Result<CorrelationFunction> {
    check_inputs(f, g, max_lag)?;
    let (fv, gv) = (f.values(), g.values());
    let lag = max_lag as i64;
    let values = (-lag..=lag)
        .map(|t| {
            // i in [0, |f|) with i + t in [0, |g|)
            let lo = (-t).max(0) as usize;
            let hi = (gv.len() as i64 - t).min(fv.len() as i64);
            if hi <= lo as i64 {
                return 0.0;
            }
            (lo..hi as usize)
                .map(|i| fv[i] * gv[(i as i64 + t) as usize])
                .sum()
        })
        .collect();
    CorrelationFunction::symmetric(max_lag, values, f.rate_hz())
}

/// FFT evaluation of the same correlation sum.
///
/// Both inputs are zero-padded to a power of two long enough that no lag in
/// the window wraps around.
pub fn cross_correlate_fft(
    f: &UniformSeries,
    g: &UniformSeries,
    max_lag: usize,
) -> Result<CorrelationFunction> {
    check_inputs(f, g, max_lag)?;
    let (fv, gv) = (f.values(), g.values());
    let min_len = (fv.len() + gv.len() - 1).max(fv.len().max(gv.len()) + max_lag);
    let n = min_len.next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let spectrum = |x: &[f64], fft: &Arc<dyn Fft<f64>>| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        buf
    };
    let fs = spectrum(fv, &forward);
    let mut prod = spectrum(gv, &forward);
    for (p, a) in prod.iter_mut().zip(&fs) {
        *p *= a.conj();
    }
    inverse.process(&mut prod);

    let scale = 1.0 / n as f64;
    let lag = max_lag as i64;
    let values = (-lag..=lag)
        .map(|t| prod[t.rem_euclid(n as i64) as usize].re * scale)
        .collect();
    CorrelationFunction::symmetric(max_lag, values, f.rate_hz())
}

/// Locates the correlation peak.
///
/// Ties go to the smallest `|t|`, then to the negative lag. With `refine`,
/// an interior peak is moved to the vertex of the parabola through its two
/// neighbours, clamped to half a grid step.
pub fn argmax_delay(corr: &CorrelationFunction, refine: bool) -> Result<DelayEstimate> {
    let values = corr.values();
    if values.is_empty() {
        return Err(Error::EmptyCorrelation);
    }
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        let (t, bt) = (corr.first_lag + i as i64, corr.first_lag + best as i64);
        let b = values[best];
        if v > b || (v == b && (t.abs() < bt.abs() || (t.abs() == bt.abs() && t < bt))) {
            best = i;
        }
    }
    let peak = values[best];
    let integer_lag = corr.first_lag + best as i64;

    let interior = best > 0 && best + 1 < values.len();
    let mut offset = 0.0;
    if refine && interior {
        let (ym, y0, yp) = (values[best - 1], peak, values[best + 1]);
        let curvature = 2.0 * y0 - ym - yp;
        if curvature > 0.0 {
            offset = ((yp - ym) / (2.0 * curvature)).clamp(-0.5, 0.5);
        }
    }
    let delta_star_ms = 1000.0 * (integer_lag as f64 + offset) / corr.rate_hz;

    let competitor = values
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as i64 - best as i64).abs() >= SECOND_PEAK_EXCLUSION)
        .map(|(_, &v)| v)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let second_peak_ratio = match competitor {
        Some(c) if c > 0.0 && peak > 0.0 => Some(peak / c),
        _ => None,
    };

    Ok(DelayEstimate {
        delta_star_ms,
        peak_value: peak,
        integer_lag,
        refined: refine && interior,
        second_peak_ratio,
        rate_hz: corr.rate_hz,
    })
}
