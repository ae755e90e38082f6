//! Sensor adapters that turn raw recordings into [`TimeSeries`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::stream::{SensorKind, TimeSeries};

pub const DEFAULT_AUDIO_RATE_HZ: u32 = 44_100;
pub const DEFAULT_BIT_DEPTH: u16 = 16;
pub const DEFAULT_ENERGY_BIN_MS: f64 = 10.0;

/// Mono integer PCM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    sample_rate_hz: u32,
    bit_depth: u16,
    samples: Vec<i32>,
}

impl AudioClip {
    /// Samples must fit the signed range of `bit_depth`.
    pub fn new(sample_rate_hz: u32, bit_depth: u16, samples: Vec<i32>) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::UnsupportedAudio("sample rate must be positive".into()));
        }
        if !(2..=32).contains(&bit_depth) {
            return Err(Error::UnsupportedAudio(format!("bit depth {bit_depth}")));
        }
        let half = 1i64 << (bit_depth - 1);
        if let Some(i) = samples
            .iter()
            .position(|&s| (s as i64) < -half || (s as i64) >= half)
        {
            return Err(Error::UnsupportedAudio(format!(
                "sample {i} ({}) exceeds {bit_depth}-bit range",
                samples[i]
            )));
        }
        Ok(AudioClip {
            sample_rate_hz,
            bit_depth,
            samples,
        })
    }

    pub fn from_i16(sample_rate_hz: u32, samples: &[i16]) -> Result<Self> {
        Self::new(sample_rate_hz, 16, samples.iter().map(|&s| s as i32).collect())
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn bit_depth(&self) -> u16 {
        self.bit_depth
    }

    pub fn samples(&self) -> &[i32] {
        &self.samples
    }
}

/// Streaming sum-of-squares binner; [`audio_energy`] is a thin wrapper.
///
/// Each bin's energy is the exact integer sum of squared samples, scaled by
/// `2^(-2 * (bit_depth - 1))`, which is exact in `f64` for any realistic bin.
#[derive(Debug, Clone)]
pub struct EnergyBinner {
    sample_rate_hz: u32,
    bin_size: usize,
    scale: f64,
    filled: usize,
    acc: u128,
    bins: usize,
    timestamps_ms: Vec<f64>,
    values: Vec<f64>,
}

impl EnergyBinner {
    pub fn new(sample_rate_hz: u32, bit_depth: u16, bin_ms: f64) -> Result<Self> {
        if !(bin_ms > 0.0) || !bin_ms.is_finite() {
            return Err(Error::NonPositiveBin(bin_ms));
        }
        let bin_size = (sample_rate_hz as f64 * bin_ms / 1000.0).round() as usize;
        if bin_size == 0 {
            return Err(Error::NonPositiveBin(bin_ms));
        }
        let scale = 2f64.powi(-2 * (bit_depth as i32 - 1));
        Ok(EnergyBinner {
            sample_rate_hz,
            bin_size,
            scale,
            filled: 0,
            acc: 0,
            bins: 0,
            timestamps_ms: Vec::new(),
            values: Vec::new(),
        })
    }

    pub fn bin_size(&self) -> usize {
        self.bin_size
    }

    pub fn push(&mut self, sample: i32) {
        let s = sample as i64;
        self.acc += (s * s) as u128;
        self.filled += 1;
        if self.filled == self.bin_size {
            self.bins += 1;
            let end = (self.bins * self.bin_size) as f64 * 1000.0 / self.sample_rate_hz as f64;
            self.timestamps_ms.push(end);
            self.values.push(self.acc as f64 * self.scale);
            self.acc = 0;
            self.filled = 0;
        }
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = i32>) {
        for s in samples {
            self.push(s);
        }
    }

    /// Drops any partial final bin.
    pub fn finish(self) -> Result<TimeSeries> {
        TimeSeries::new(SensorKind::AudioEnergy, self.timestamps_ms, self.values)
    }
}

/// Energy per `bin_ms` window, timestamped at each bin's end.
pub fn audio_energy(clip: &AudioClip, bin_ms: f64) -> Result<TimeSeries> {
    if clip.samples.is_empty() {
        return Err(Error::EmptyClip);
    }
    let mut binner = EnergyBinner::new(clip.sample_rate_hz, clip.bit_depth, bin_ms)?;
    binner.extend(clip.samples.iter().copied());
    binner.finish()
}

/// Reads `timestamp_ms` and `column` from a headed CSV file.
pub fn extract_column(path: &Path, column: &str, kind: SensorKind) -> Result<TimeSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    extract_column_from_reader(file, path, column, kind)
}

/// Selects a CSV column by header name or by position.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ColumnRef<'a> {
    Name(&'a str),
    Index(usize),
}

pub(crate) fn extract_column_from_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    column: &str,
    kind: SensorKind,
) -> Result<TimeSeries> {
    read_csv_columns(reader, path, ColumnRef::Name("timestamp_ms"), ColumnRef::Name(column), kind)
}

pub(crate) fn read_csv_columns<R: std::io::Read>(
    reader: R,
    path: &Path,
    time: ColumnRef<'_>,
    value: ColumnRef<'_>,
    kind: SensorKind,
) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e))?
        .clone();
    let find = |col: ColumnRef<'_>| match col {
        ColumnRef::Name(name) => headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .map(|i| (i, name.to_string()))
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            }),
        ColumnRef::Index(i) => headers
            .get(i)
            .map(|h| (i, h.to_string()))
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: format!("#{}", i + 1),
            }),
    };
    let (t_col, t_name) = find(time)?;
    let (v_col, v_name) = find(value)?;

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let bad = |message: String| Error::UnparsableRow {
            path: path.to_path_buf(),
            row: line,
            message,
        };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let parse = |col: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(col)
                .ok_or_else(|| bad(format!("missing field `{name}`")))?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("cannot parse `{raw}` as {name}")))
        };
        timestamps.push(parse(t_col, &t_name)?);
        values.push(parse(v_col, &v_name)?);
    }
    TimeSeries::new(kind, timestamps, values)
}
