//! File formats read and written by the pipeline: per-sensor CSV, PCM audio
//! (WAV or raw with a JSON sidecar) and grayscale frame sequences (PGM
//! directories or a raw blob with a JSON header).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, AudioClip, ColumnRef};
use crate::flow::{self, Frame, FrameSource};
use crate::stream::{SensorKind, TimeSeries};

/// Reads a `timestamp_ms,value` CSV by position; header names are ignored.
pub fn read_series_csv(path: &Path, kind: SensorKind) -> Result<TimeSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    features::read_csv_columns(BufReader::new(file), path, ColumnRef::Index(0), ColumnRef::Index(1), kind)
}

/// Writes `timestamp_ms` followed by one column per `(name, values)` pair.
/// Floats use the shortest round-trip representation.
pub fn write_columns_csv(path: &Path, timestamps_ms: &[f64], columns: &[(&str, &[f64])]) -> Result<()> {
    for (name, values) in columns {
        if values.len() != timestamps_ms.len() {
            return Err(Error::InvalidArgument(format!(
                "column `{name}` has {} values for {} timestamps",
                values.len(),
                timestamps_ms.len()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "timestamp_ms")?;
        for (name, _) in columns {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (i, t) in timestamps_ms.iter().enumerate() {
            write!(out, "{t}")?;
            for (_, values) in columns {
                write!(out, ",{}", values[i])?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

pub fn write_series_csv(path: &Path, series: &TimeSeries, column: &str) -> Result<()> {
    write_columns_csv(path, series.timestamps_ms(), &[(column, series.values())])
}

/// Reads a PCM 16-bit mono RIFF/WAVE file.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: only 16-bit integer PCM is supported",
            path.display()
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(i32::from))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    AudioClip::new(spec.sample_rate, 16, samples)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    }
}

/// Streaming 16-bit mono WAV writer.
pub struct WavSink {
    path: PathBuf,
    writer: hound::WavWriter<BufWriter<File>>,
}

impl WavSink {
    pub fn create(path: &Path, sample_rate_hz: u32) -> Result<Self> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
        Ok(WavSink {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn write(&mut self, samples: &[i16]) -> Result<()> {
        for &s in samples {
            self.writer
                .write_sample(s)
                .map_err(|e| wav_error(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        self.writer.finalize().map_err(|e| wav_error(&self.path, e))
    }
}

pub fn write_wav(path: &Path, sample_rate_hz: u32, samples: &[i16]) -> Result<()> {
    let mut sink = WavSink::create(path, sample_rate_hz)?;
    sink.write(samples)?;
    sink.finish()
}

/// Sidecar describing a headerless little-endian PCM file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPcmInfo {
    pub sample_rate: u32,
    pub bit_depth: u16,
}

pub fn read_raw_pcm(path: &Path, sidecar: &Path) -> Result<AudioClip> {
    let info: RawPcmInfo = read_json(sidecar)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let width = match info.bit_depth {
        8 | 16 | 24 | 32 => info.bit_depth as usize / 8,
        other => return Err(Error::UnsupportedAudio(format!("raw PCM bit depth {other}"))),
    };
    if bytes.len() % width != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of {width} bytes", bytes.len()),
        ));
    }
    let samples = bytes
        .chunks_exact(width)
        .map(|c| {
            let raw = c
                .iter()
                .enumerate()
                .fold(0i32, |v, (k, &b)| v | ((b as i32) << (8 * k)));
            let shift = 32 - 8 * width;
            (raw << shift) >> shift
        })
        .collect();
    AudioClip::new(info.sample_rate, info.bit_depth, samples)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a `frame_index,timestamp_ms` sidecar.
pub fn read_frame_timestamps(path: &Path) -> Result<Vec<(u64, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::UnparsableRow {
            path: path.to_path_buf(),
            row: i + 1,
            message: m.to_string(),
        };
        let (idx, ts) = line.split_once(',').ok_or_else(|| bad("expected two fields"))?;
        let idx = idx.trim().parse::<u64>().map_err(|_| bad("bad frame index"))?;
        let ts = ts
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or_else(|| bad("bad timestamp"))?;
        out.push((idx, ts));
    }
    Ok(out)
}

pub fn write_frame_timestamps(path: &Path, timestamps_ms: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "frame_index,timestamp_ms")?;
        for (i, t) in timestamps_ms.iter().enumerate() {
            writeln!(out, "{i},{t}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

pub fn pgm_name(index: u64) -> String {
    format!("{index:06}.pgm")
}

/// Writes an 8-bit binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::InvalidArgument("pixel count does not match dimensions".into()));
    }
    let mut data = format!("P5\n{width} {height}\n255\n").into_bytes();
    data.extend_from_slice(pixels);
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(path, "not a binary PGM (P5) file"));
    }
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::format(path, e))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        _ => return Err(Error::format(path, "expected an 8-bit grayscale PGM")),
    };
    let (w, h) = gray.dimensions();
    Frame::from_u8(w as usize, h as usize, gray.as_raw())
}

/// A directory of `NNNNNN.pgm` frames plus a timestamp sidecar.
#[derive(Debug, Clone)]
pub struct PgmFrames {
    dir: PathBuf,
    width: usize,
    height: usize,
    entries: Vec<(u64, f64)>,
}

impl PgmFrames {
    pub fn open(dir: &Path, timestamps: &Path) -> Result<Self> {
        let entries = read_frame_timestamps(timestamps)?;
        if entries.is_empty() {
            return Err(Error::TooFewFrames(0));
        }
        let first = read_pgm(&dir.join(pgm_name(entries[0].0)))?;
        flow::check_dims(first.width(), first.height())?;
        let ts: Vec<f64> = entries.iter().map(|e| e.1).collect();
        flow::check_timestamps(&ts)?;
        Ok(PgmFrames {
            dir: dir.to_path_buf(),
            width: first.width(),
            height: first.height(),
            entries,
        })
    }
}

impl FrameSource for PgmFrames {
    fn frame_count(&self) -> usize {
        self.entries.len()
    }

    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn timestamp_ms(&self, index: usize) -> f64 {
        self.entries[index].1
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let frame = read_pgm(&self.dir.join(pgm_name(self.entries[index].0)))?;
        if (frame.width(), frame.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                frame.width(),
                frame.height(),
            ));
        }
        Ok(frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFramesHeader {
    pub width: usize,
    pub height: usize,
    pub count: usize,
}

/// `count` frames of `width * height` bytes in one blob, with a JSON header
/// and the usual timestamp sidecar.
#[derive(Debug, Clone)]
pub struct RawFrames {
    blob: PathBuf,
    header: RawFramesHeader,
    timestamps_ms: Vec<f64>,
}

impl RawFrames {
    pub fn open(header: &Path, blob: &Path, timestamps: &Path) -> Result<Self> {
        let h: RawFramesHeader = read_json(header)?;
        flow::check_dims(h.width, h.height)?;
        let len = std::fs::metadata(blob).map_err(|e| Error::io(blob, e))?.len();
        let want = (h.width * h.height * h.count) as u64;
        if len != want {
            return Err(Error::format(
                blob,
                format!("expected {want} bytes for {} frames, found {len}", h.count),
            ));
        }
        let entries = read_frame_timestamps(timestamps)?;
        if entries.len() != h.count {
            return Err(Error::format(
                timestamps,
                format!("{} timestamps for {} frames", entries.len(), h.count),
            ));
        }
        let timestamps_ms: Vec<f64> = entries.iter().map(|e| e.1).collect();
        flow::check_timestamps(&timestamps_ms)?;
        Ok(RawFrames {
            blob: blob.to_path_buf(),
            header: h,
            timestamps_ms,
        })
    }
}

impl FrameSource for RawFrames {
    fn frame_count(&self) -> usize {
        self.header.count
    }

    fn dimensions(&self) -> (usize, usize) {
        (self.header.width, self.header.height)
    }

    fn timestamp_ms(&self, index: usize) -> f64 {
        self.timestamps_ms[index]
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let size = self.header.width * self.header.height;
        let mut file = File::open(&self.blob).map_err(|e| Error::io(&self.blob, e))?;
        let mut buf = vec![0u8; size];
        file.seek(SeekFrom::Start((index * size) as u64))
            .and_then(|_| file.read_exact(&mut buf))
            .map_err(|e| Error::io(&self.blob, e))?;
        Frame::from_u8(self.header.width, self.header.height, &buf)
    }
}
