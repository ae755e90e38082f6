//! Synthetic driving runs with known per-sensor clock offsets.
//!
//! Two latent signals drive every sensor: a train of road bumps (Poisson
//! arrivals, random amplitudes) and a steering angle (raised-cosine turns on
//! top of a slow mean-reverting walk). Each sensor smears its latent signal
//! with a response kernel, delays it by the kernel latency plus its clock
//! offset, samples it on a jittered clock and adds noise.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EnergyBinner, DEFAULT_AUDIO_RATE_HZ, DEFAULT_ENERGY_BIN_MS};
use crate::flow;
use crate::io;
use crate::stream::{SensorKind, TimeSeries};

/// Latent signals live on a 1 kHz grid.
const FINE_STEP_MS: f64 = 1.0;
pub const MAX_OFFSET_MS: f64 = 5000.0;
/// Fraction of the sample period by which timestamps wander.
const JITTER_FRACTION: f64 = 0.2;
/// Largest per-frame displacement rendered into synthetic frames.
const MAX_FRAME_SHIFT_PX: f64 = 2.5;
const FLOW_GAIN_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    Boxcar,
    Exponential,
}

/// How a sensor smears an impulse: a causal boxcar of `width_ms` or a
/// decaying exponential with time constant `width_ms`, delayed by
/// `latency_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub width_ms: f64,
    #[serde(default)]
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(default)]
    pub true_offset_ms: f64,
    /// Standard deviation of additive noise relative to the unit-RMS clean
    /// signal. For audio it is the level of the broadband noise floor.
    #[serde(default)]
    pub noise_std: f64,
    pub sample_rate_hz: f64,
    pub kernel: KernelSpec,
}

/// Size of rendered camera frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub width: usize,
    pub height: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            width: 96,
            height: 72,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub duration_s: f64,
    pub seed: u64,
    pub bump_rate_per_min: f64,
    pub turn_rate_per_min: f64,
    pub sensors: BTreeMap<SensorKind, SensorSpec>,
    /// When set, camera traces are emitted as PGM frame sequences.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameSpec>,
}

fn sensor(rate: f64, shape: KernelShape, width_ms: f64, latency_ms: f64, noise_std: f64) -> SensorSpec {
    SensorSpec {
        true_offset_ms: 0.0,
        noise_std,
        sample_rate_hz: rate,
        kernel: KernelSpec {
            shape,
            width_ms,
            latency_ms,
        },
    }
}

impl Default for RunSpec {
    fn default() -> Self {
        use KernelShape::*;
        use SensorKind::*;
        let sensors = BTreeMap::from([
            (AccelZ, sensor(48.0, Exponential, 30.0, 0.0, 0.3)),
            (AudioEnergy, sensor(DEFAULT_AUDIO_RATE_HZ as f64, Exponential, 60.0, 305.0, 0.3)),
            (FlowXFront, sensor(30.0, Exponential, 100.0, 312.0, 0.2)),
            (FlowYFront, sensor(30.0, Boxcar, 33.0, -280.0, 0.3)),
            (FlowYDash, sensor(30.0, Boxcar, 33.0, 246.0, 0.3)),
            (FlowYFace, sensor(30.0, Boxcar, 33.0, 95.0, 0.6)),
            (SteeringAngle, sensor(100.0, Exponential, 10.0, 0.0, 0.05)),
        ]);
        RunSpec {
            duration_s: 37.0 * 60.0,
            seed: 1,
            bump_rate_per_min: 6.0,
            turn_rate_per_min: 2.0,
            sensors,
            frames: None,
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return bad("duration_s must be positive".into());
        }
        for (name, rate) in [
            ("bump_rate_per_min", self.bump_rate_per_min),
            ("turn_rate_per_min", self.turn_rate_per_min),
        ] {
            if !(rate >= 0.0) || !rate.is_finite() {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.sensors.is_empty() {
            return bad("no sensors".into());
        }
        for (kind, s) in &self.sensors {
            if !(s.sample_rate_hz > 0.0) || !s.sample_rate_hz.is_finite() {
                return bad(format!("{kind}: sample_rate_hz must be positive"));
            }
            if !(s.noise_std >= 0.0) || !s.noise_std.is_finite() {
                return bad(format!("{kind}: noise_std must be non-negative"));
            }
            if !(s.true_offset_ms.abs() <= MAX_OFFSET_MS) {
                return bad(format!("{kind}: |true_offset_ms| must not exceed {MAX_OFFSET_MS}"));
            }
            if !(s.kernel.width_ms >= 0.0 && s.kernel.width_ms <= MAX_OFFSET_MS) {
                return bad(format!("{kind}: kernel width_ms must be in [0, {MAX_OFFSET_MS}]"));
            }
            if !(s.kernel.latency_ms.abs() <= MAX_OFFSET_MS) {
                return bad(format!("{kind}: |kernel latency_ms| must not exceed {MAX_OFFSET_MS}"));
            }
        }
        if let Some(audio) = self.sensors.get(&SensorKind::AudioEnergy) {
            let rate = audio.sample_rate_hz;
            if rate.fract() != 0.0 || rate > u32::MAX as f64 || rate * DEFAULT_ENERGY_BIN_MS / 1000.0 < 1.0 {
                return bad("AudioEnergy sample_rate_hz must be an integer PCM rate".into());
            }
        }
        let x = self.sensors.get(&SensorKind::FlowXFront);
        let y = self.sensors.get(&SensorKind::FlowYFront);
        match (x, y) {
            (Some(x), Some(y)) => {
                if x.true_offset_ms != y.true_offset_ms || x.sample_rate_hz != y.sample_rate_hz {
                    return bad("FlowX_Front and FlowY_Front come from one camera and must share true_offset_ms and sample_rate_hz".into());
                }
            }
            (None, None) => {}
            _ => return bad("FlowX_Front and FlowY_Front must be specified together".into()),
        }
        if let Some(f) = self.frames {
            if f.width < flow::MIN_FRAME_SIDE || f.height < flow::MIN_FRAME_SIDE {
                return Err(Error::FrameTooSmall(f.width, f.height));
            }
        }
        Ok(())
    }

    /// Reads a spec from TOML or JSON (by extension); missing fields take
    /// the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let spec: RunSpec = crate::config::read_by_extension(path)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Injected clock offsets: a sensor with offset `o` reports an event that
/// happened at true time `t` with timestamp `t + o` (before kernel latency).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub duration_s: f64,
    pub offsets_ms: BTreeMap<SensorKind, f64>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Offset of `kind` relative to `anchor`.
    pub fn relative_offset_ms(&self, kind: SensorKind, anchor: SensorKind) -> Option<f64> {
        Some(self.offsets_ms.get(&kind)? - self.offsets_ms.get(&anchor)?)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedRun {
    pub streams: BTreeMap<SensorKind, TimeSeries>,
    pub ground_truth: GroundTruth,
}

/// RNG stream identifiers, one per purpose so adding a sensor never
/// perturbs the others.
mod stream_id {
    pub const BUMPS: u64 = 1;
    pub const TURNS: u64 = 2;
    pub const WALK: u64 = 3;
    pub const AUDIO: u64 = 4;
    pub const CLOCK: u64 = 16;
    pub const NOISE: u64 = 32;
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Signal sampled every millisecond from `start_ms`; zero outside.
#[derive(Debug, Clone)]
struct FineSignal {
    start_ms: f64,
    values: Vec<f64>,
}

impl FineSignal {
    fn at(&self, t_ms: f64) -> f64 {
        let x = (t_ms - self.start_ms) / FINE_STEP_MS;
        if x < 0.0 {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return if i + 1 == self.values.len() { self.values[i] } else { 0.0 };
        }
        let frac = x - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    fn filtered(&self, kernel: &KernelSpec) -> FineSignal {
        let width = kernel.width_ms / FINE_STEP_MS;
        let values = match kernel.shape {
            KernelShape::Exponential if width > 0.0 => {
                let a = (-1.0 / width).exp();
                let mut y = 0.0;
                self.values
                    .iter()
                    .map(|&x| {
                        y = a * y + (1.0 - a) * x;
                        y
                    })
                    .collect()
            }
            KernelShape::Boxcar if width.round() > 1.0 => {
                let w = width.round() as usize;
                let mut sum = 0.0;
                (0..self.values.len())
                    .map(|i| {
                        sum += self.values[i];
                        if i >= w {
                            sum -= self.values[i - w];
                        }
                        sum / w as f64
                    })
                    .collect()
            }
            _ => self.values.clone(),
        };
        FineSignal {
            start_ms: self.start_ms,
            values,
        }
    }

    fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Latent {
    Vibration,
    Steering,
}

fn latent_of(kind: SensorKind) -> Latent {
    match kind {
        SensorKind::SteeringAngle | SensorKind::FlowXFront => Latent::Steering,
        _ => Latent::Vibration,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Camera {
    Front,
    Dash,
    Face,
}

impl Camera {
    const ALL: [Camera; 3] = [Camera::Front, Camera::Dash, Camera::Face];

    fn y_kind(self) -> SensorKind {
        match self {
            Camera::Front => SensorKind::FlowYFront,
            Camera::Dash => SensorKind::FlowYDash,
            Camera::Face => SensorKind::FlowYFace,
        }
    }

    fn x_kind(self) -> Option<SensorKind> {
        (self == Camera::Front).then_some(SensorKind::FlowXFront)
    }

    fn name(self) -> &'static str {
        match self {
            Camera::Front => "front",
            Camera::Dash => "dash",
            Camera::Face => "face",
        }
    }
}

/// Per-frame mean displacement of one camera, in pixels.
struct CameraTrace {
    timestamps_ms: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

struct Generator<'a> {
    spec: &'a RunSpec,
    vibration: FineSignal,
    steering: FineSignal,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a RunSpec) -> Self {
        // Cover every lookup `t - offset - latency` for t in the run, plus a
        // warm-up so causal kernels start settled.
        let shifts = spec
            .sensors
            .values()
            .map(|s| s.true_offset_ms + s.kernel.latency_ms);
        let max_shift = shifts.clone().fold(0.0f64, f64::max);
        let min_shift = shifts.fold(0.0f64, f64::min);
        let start_ms = (-max_shift - 10_000.0).floor();
        let end_ms = (spec.duration_s * 1000.0 - min_shift + 1000.0).ceil();
        let n = ((end_ms - start_ms) / FINE_STEP_MS) as usize + 1;
        Generator {
            spec,
            vibration: bumps(spec, start_ms, n),
            steering: steering(spec, start_ms, n),
        }
    }

    fn latent(&self, which: Latent) -> &FineSignal {
        match which {
            Latent::Vibration => &self.vibration,
            Latent::Steering => &self.steering,
        }
    }

    /// Clean unit-RMS response of `kind`, indexed by the sensor's own clock.
    fn response(&self, kind: SensorKind) -> (FineSignal, f64) {
        let s = &self.spec.sensors[&kind];
        let filtered = self.latent(latent_of(kind)).filtered(&s.kernel);
        let rms = filtered.rms();
        let delay = s.true_offset_ms + s.kernel.latency_ms;
        let shifted = FineSignal {
            start_ms: filtered.start_ms + delay,
            values: filtered.values,
        };
        (shifted, if rms > 0.0 { 1.0 / rms } else { 0.0 })
    }

    fn clock(&self, rate_hz: f64, stream: u64) -> Vec<f64> {
        let period = 1000.0 / rate_hz;
        let count = (self.spec.duration_s * rate_hz).floor() as usize;
        let mut r = rng(self.spec.seed, stream_id::CLOCK + stream);
        (0..count)
            .map(|i| (i as f64 + 0.5) * period + r.gen_range(-JITTER_FRACTION..JITTER_FRACTION) * period)
            .collect()
    }

    fn sample(&self, kind: SensorKind, timestamps: &[f64]) -> Vec<f64> {
        let s = &self.spec.sensors[&kind];
        let (response, scale) = self.response(kind);
        let sign = if kind.is_negatively_correlated() { -1.0 } else { 1.0 };
        let mut r = rng(self.spec.seed, stream_id::NOISE + kind.index() as u64);
        timestamps
            .iter()
            .map(|&t| {
                let noise: f64 = StandardNormal.sample(&mut r);
                sign * response.at(t) * scale + s.noise_std * noise
            })
            .collect()
    }

    fn scalar(&self, kind: SensorKind) -> Result<TimeSeries> {
        let rate = self.spec.sensors[&kind].sample_rate_hz;
        let ts = self.clock(rate, kind.index() as u64);
        let values = self.sample(kind, &ts);
        TimeSeries::new(kind, ts, values)
    }

    fn camera(&self, camera: Camera) -> Option<CameraTrace> {
        let y_kind = camera.y_kind();
        let rate = self.spec.sensors.get(&y_kind)?.sample_rate_hz;
        let ts = self.clock(rate, y_kind.index() as u64);
        let dy = self.sample(y_kind, &ts);
        let dx = match camera.x_kind() {
            Some(k) => self.sample(k, &ts),
            None => {
                // Cameras without a steering response see only a little
                // horizontal shake.
                let mut r = rng(self.spec.seed, stream_id::NOISE + 16 + camera as u64);
                ts.iter()
                    .map(|_| 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
                    .collect()
            }
        };
        let scale = |v: Vec<f64>| v.into_iter().map(|x| x * FLOW_GAIN_PX).collect();
        Some(CameraTrace {
            timestamps_ms: ts,
            dx: scale(dx),
            dy: scale(dy),
        })
    }

    /// Renders 16-bit PCM whose loudness follows the vibration response and
    /// feeds it to `sink` in chunks. Returns the binned energy.
    fn audio(&self, mut sink: impl FnMut(&[i16]) -> Result<()>) -> Result<TimeSeries> {
        let kind = SensorKind::AudioEnergy;
        let s = &self.spec.sensors[&kind];
        let rate = s.sample_rate_hz as u32;
        let (response, scale) = self.response(kind);
        let peak = response.values.iter().fold(0.0f64, |m, v| m.max(v.abs())) * scale;
        let floor = s.noise_std;
        let amplitude = if floor + peak > 0.0 { 8000.0 / (floor + peak) } else { 0.0 };
        let mut r = rng(self.spec.seed, stream_id::AUDIO);
        let mut binner = EnergyBinner::new(rate, 16, DEFAULT_ENERGY_BIN_MS)?;
        let total = (self.spec.duration_s * rate as f64).floor() as usize;
        let mut chunk = Vec::with_capacity(rate as usize);
        let mut done = 0;
        while done < total {
            chunk.clear();
            let end = (done + rate as usize).min(total);
            for i in done..end {
                let t = i as f64 * 1000.0 / rate as f64;
                let envelope = floor + response.at(t).abs() * scale;
                let z: f64 = StandardNormal.sample(&mut r);
                let sample = (amplitude * envelope * z).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                chunk.push(sample);
            }
            binner.extend(chunk.iter().map(|&s| s as i32));
            sink(&chunk)?;
            done = end;
        }
        binner.finish()
    }

    fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            seed: self.spec.seed,
            duration_s: self.spec.duration_s,
            offsets_ms: self
                .spec
                .sensors
                .iter()
                .map(|(&k, s)| (k, s.true_offset_ms))
                .collect(),
        }
    }
}

/// Poisson bumps with amplitudes `0.5 + Exp(1)`, each deposited on the two
/// nearest fine-grid samples.
fn bumps(spec: &RunSpec, start_ms: f64, n: usize) -> FineSignal {
    let mut values = vec![0.0; n];
    let rate_per_ms = spec.bump_rate_per_min / 60_000.0;
    if rate_per_ms > 0.0 {
        let mut r = rng(spec.seed, stream_id::BUMPS);
        let gap = Exp::new(rate_per_ms).expect("positive rate");
        let unit = Exp::new(1.0).expect("positive rate");
        let mut t = gap.sample(&mut r);
        let span = (n - 1) as f64 * FINE_STEP_MS;
        while t < span {
            let amplitude = 0.5 + unit.sample(&mut r);
            let x = t / FINE_STEP_MS;
            let i = x.floor() as usize;
            let frac = x - i as f64;
            values[i] += amplitude * (1.0 - frac);
            if i + 1 < n {
                values[i + 1] += amplitude * frac;
            }
            t += gap.sample(&mut r);
        }
    }
    FineSignal { start_ms, values }
}

/// Raised-cosine turns of 3-8 s with random sign and size, over a
/// mean-reverting walk of small corrections.
fn steering(spec: &RunSpec, start_ms: f64, n: usize) -> FineSignal {
    use std::f64::consts::TAU;
    let mut values = vec![0.0; n];
    let rate_per_ms = spec.turn_rate_per_min / 60_000.0;
    if rate_per_ms > 0.0 {
        let mut r = rng(spec.seed, stream_id::TURNS);
        let gap = Exp::new(rate_per_ms).expect("positive rate");
        let span = (n - 1) as f64 * FINE_STEP_MS;
        let mut t0 = gap.sample(&mut r);
        while t0 < span {
            let duration = r.gen_range(3000.0..8000.0);
            let size = r.gen_range(0.5..1.5) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            let first = (t0 / FINE_STEP_MS).ceil() as usize;
            let last = (((t0 + duration) / FINE_STEP_MS).floor() as usize).min(n - 1);
            for (i, v) in values.iter_mut().enumerate().take(last + 1).skip(first) {
                let phase = (i as f64 * FINE_STEP_MS - t0) / duration;
                *v += size * 0.5 * (1.0 - (TAU * phase).cos());
            }
            t0 += gap.sample(&mut r);
        }
    }
    // Small wheel corrections: an Ornstein-Uhlenbeck walk with 3 s
    // reversion, smoothed over 150 ms.
    let mut r = rng(spec.seed, stream_id::WALK);
    let theta = FINE_STEP_MS / 3000.0;
    let sigma = 0.2 * (2.0 * theta).sqrt();
    let smooth = (-FINE_STEP_MS / 150.0).exp();
    let (mut walk, mut smoothed) = (0.0, 0.0);
    for v in &mut values {
        let z: f64 = StandardNormal.sample(&mut r);
        walk += -theta * walk + sigma * z;
        smoothed = smooth * smoothed + (1.0 - smooth) * walk;
        *v += smoothed;
    }
    FineSignal { start_ms, values }
}

/// Generates every sensor of `spec` in memory. Camera traces are returned as
/// mean-flow series regardless of `spec.frames`.
pub fn generate_run(spec: &RunSpec) -> Result<GeneratedRun> {
    spec.validate()?;
    let generator = Generator::new(spec);
    let mut streams = BTreeMap::new();
    for kind in [SensorKind::AccelZ, SensorKind::SteeringAngle] {
        if spec.sensors.contains_key(&kind) {
            streams.insert(kind, generator.scalar(kind)?);
        }
    }
    if spec.sensors.contains_key(&SensorKind::AudioEnergy) {
        streams.insert(SensorKind::AudioEnergy, generator.audio(|_| Ok(()))?);
    }
    for camera in Camera::ALL {
        if let Some(trace) = generator.camera(camera) {
            insert_camera(&mut streams, camera, &trace)?;
        }
    }
    Ok(GeneratedRun {
        streams,
        ground_truth: generator.ground_truth(),
    })
}

fn insert_camera(
    streams: &mut BTreeMap<SensorKind, TimeSeries>,
    camera: Camera,
    trace: &CameraTrace,
) -> Result<()> {
    let y = TimeSeries::new(camera.y_kind(), trace.timestamps_ms.clone(), trace.dy.clone())?;
    streams.insert(camera.y_kind(), y);
    if let Some(x_kind) = camera.x_kind() {
        let x = TimeSeries::new(x_kind, trace.timestamps_ms.clone(), trace.dx.clone())?;
        streams.insert(x_kind, x);
    }
    Ok(())
}

/// File names used inside a generated run directory.
pub mod layout {
    pub const ACCEL: &str = "accel.csv";
    pub const ACCEL_COLUMN: &str = "accel_z";
    pub const STEERING: &str = "steering.csv";
    pub const STEERING_COLUMN: &str = "steering_angle";
    pub const AUDIO: &str = "audio.wav";
    pub const GROUND_TRUTH: &str = "ground_truth.json";
    pub const SPEC: &str = "spec.json";
    pub const CONFIG: &str = "sync.toml";
    pub const FRAME_TIMESTAMPS: &str = "timestamps.csv";

    pub fn flow_csv(camera: &str) -> String {
        format!("{camera}_flow.csv")
    }

    pub fn frames_dir(camera: &str) -> String {
        format!("frames_{camera}")
    }
}

/// Writes a run directory in the ingestion formats: sensor CSVs, a WAV
/// file, per-camera flow CSVs or PGM sequences, the ground truth, the
/// effective spec and a ready-to-run `sync.toml`.
///
/// The returned streams are exactly what reading the directory back yields
/// when cameras are written as flow CSVs.
pub fn write_run(spec: &RunSpec, dir: &Path) -> Result<GeneratedRun> {
    use crate::config::{Component, Config, SensorInput};
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let generator = Generator::new(spec);
    let mut streams = BTreeMap::new();
    let mut config = Config::default();
    let csv_input = |file: &str, column: &str| SensorInput::Csv {
        path: file.into(),
        column: Some(column.to_string()),
    };

    for (kind, file, column) in [
        (SensorKind::AccelZ, layout::ACCEL, layout::ACCEL_COLUMN),
        (SensorKind::SteeringAngle, layout::STEERING, layout::STEERING_COLUMN),
    ] {
        if spec.sensors.contains_key(&kind) {
            let series = generator.scalar(kind)?;
            io::write_series_csv(&dir.join(file), &series, column)?;
            config.sensors.insert(kind, csv_input(file, column));
            streams.insert(kind, series);
        }
    }

    if let Some(audio) = spec.sensors.get(&SensorKind::AudioEnergy) {
        let path = dir.join(layout::AUDIO);
        let mut wav = io::WavSink::create(&path, audio.sample_rate_hz as u32)?;
        let energy = generator.audio(|chunk| wav.write(chunk))?;
        wav.finish()?;
        config.sensors.insert(
            SensorKind::AudioEnergy,
            SensorInput::Wav {
                path: layout::AUDIO.into(),
                bin_ms: DEFAULT_ENERGY_BIN_MS,
                start_ms: 0.0,
            },
        );
        streams.insert(SensorKind::AudioEnergy, energy);
    }

    for camera in Camera::ALL {
        let Some(trace) = generator.camera(camera) else {
            continue;
        };
        let kinds = [(camera.y_kind(), Component::Y)]
            .into_iter()
            .chain(camera.x_kind().map(|k| (k, Component::X)));
        match spec.frames {
            None => {
                let file = layout::flow_csv(camera.name());
                io::write_columns_csv(
                    &dir.join(&file),
                    &trace.timestamps_ms,
                    &[("flow_x", &trace.dx), ("flow_y", &trace.dy)],
                )?;
                for (kind, component) in kinds {
                    let column = match component {
                        Component::X => "flow_x",
                        Component::Y => "flow_y",
                    };
                    config.sensors.insert(kind, csv_input(&file, column));
                }
            }
            Some(frames) => {
                let name = layout::frames_dir(camera.name());
                write_frames(&dir.join(&name), &trace, frames, spec.seed ^ camera as u64)?;
                for (kind, component) in kinds {
                    config.sensors.insert(
                        kind,
                        SensorInput::Pgm {
                            dir: name.clone().into(),
                            timestamps: Some(format!("{name}/{}", layout::FRAME_TIMESTAMPS).into()),
                            component,
                        },
                    );
                }
            }
        }
        insert_camera(&mut streams, camera, &trace)?;
    }

    let ground_truth = generator.ground_truth();
    ground_truth.save(&dir.join(layout::GROUND_TRUTH))?;
    io::write_json(&dir.join(layout::SPEC), spec)?;
    config.ground_truth = Some(layout::GROUND_TRUTH.into());
    config.save(&dir.join(layout::CONFIG))?;
    Ok(GeneratedRun {
        streams,
        ground_truth,
    })
}

/// Renders a textured background whose position integrates the camera's
/// per-frame displacements, so frame `i -> i + 1` moves by sample `i + 1`.
fn write_frames(dir: &Path, trace: &CameraTrace, size: FrameSpec, texture_seed: u64) -> Result<()> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let peak = trace
        .dx
        .iter()
        .chain(&trace.dy)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > MAX_FRAME_SHIFT_PX { MAX_FRAME_SHIFT_PX / peak } else { 1.0 };
    let mut positions = Vec::with_capacity(trace.dx.len());
    let (mut x, mut y) = (0.0, 0.0);
    for (i, (dx, dy)) in trace.dx.iter().zip(&trace.dy).enumerate() {
        if i > 0 {
            x += gain * dx;
            y += gain * dy;
        }
        positions.push((x, y));
    }
    positions
        .par_iter()
        .enumerate()
        .try_for_each(|(i, &(x, y))| {
            let frame = flow::render_texture(size.width, size.height, x, y, texture_seed);
            let pixels: Vec<u8> = frame
                .pixels()
                .iter()
                .map(|&p| p.round().clamp(0.0, 255.0) as u8)
                .collect();
            io::write_pgm(&dir.join(io::pgm_name(i as u64)), size.width, size.height, &pixels)
        })?;
    io::write_frame_timestamps(&dir.join(layout::FRAME_TIMESTAMPS), &trace.timestamps_ms)
}
