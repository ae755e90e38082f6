//! Dense optical flow between consecutive grayscale frames and its reduction
//! to per-frame mean horizontal and vertical displacement traces.
//!
//! The estimator follows Farnebäck's two-frame method: each frame is
//! approximated locally by a quadratic polynomial ([`poly`]), and the
//! displacement is solved from how the polynomial coefficients change
//! between frames, averaged over a window and refined coarse-to-fine.

mod plane;
mod poly;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::{SensorKind, TimeSeries};

use plane::Plane;
use poly::{PolyCoeffs, PolyExpansion};

pub const MIN_FRAME_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Side of the averaging window for the displacement solve, in pixels.
    pub window: usize,
    /// Pyramid depth, including the full-resolution level.
    pub levels: usize,
    /// Size ratio between consecutive pyramid levels.
    pub scale: f64,
    /// Displacement updates per pyramid level.
    pub iterations: usize,
    /// Radius of the polynomial-expansion neighbourhood.
    pub poly_radius: usize,
    /// Standard deviation of the Gaussian applicability weights.
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            window: 15,
            levels: 3,
            scale: 0.5,
            iterations: 3,
            poly_radius: 2,
            poly_sigma: 1.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("flow params: {m}")));
        if self.window < 3 || self.window % 2 == 0 {
            return bad("window must be odd and at least 3");
        }
        if self.levels == 0 || self.iterations == 0 {
            return bad("levels and iterations must be positive");
        }
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return bad("scale must lie in (0, 1)");
        }
        if self.poly_radius == 0 || !(self.poly_sigma > 0.0) {
            return bad("polynomial neighbourhood must be non-empty");
        }
        Ok(())
    }
}

/// Grayscale intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "frame of {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        Self::new(width, height, pixels.iter().map(|&p| p as f32).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    fn to_plane(&self) -> Plane {
        Plane::new(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
    }
}

/// Random access to timestamped frames of one camera.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn dimensions(&self) -> (usize, usize);
    fn timestamp_ms(&self, index: usize) -> f64;
    fn frame(&self, index: usize) -> Result<Frame>;
}

/// In-memory frames with capture times.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    width: usize,
    height: usize,
    frames: Vec<Frame>,
    timestamps_ms: Vec<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, timestamps_ms: Vec<f64>) -> Result<Self> {
        if frames.len() != timestamps_ms.len() {
            return Err(Error::LengthMismatch {
                timestamps: timestamps_ms.len(),
                values: frames.len(),
            });
        }
        let (width, height) = frames
            .first()
            .map_or((MIN_FRAME_SIDE, MIN_FRAME_SIDE), |f| (f.width, f.height));
        check_dims(width, height)?;
        for f in &frames {
            if (f.width, f.height) != (width, height) {
                return Err(Error::DimensionMismatch(width, height, f.width, f.height));
            }
        }
        check_timestamps(&timestamps_ms)?;
        Ok(FrameSequence {
            width,
            height,
            frames,
            timestamps_ms,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn timestamps_ms(&self) -> &[f64] {
        &self.timestamps_ms
    }
}

impl FrameSource for FrameSequence {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn timestamp_ms(&self, index: usize) -> f64 {
        self.timestamps_ms[index]
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self.frames[index].clone())
    }
}

pub(crate) fn check_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
        return Err(Error::FrameTooSmall(width, height));
    }
    Ok(())
}

pub(crate) fn check_timestamps(timestamps_ms: &[f64]) -> Result<()> {
    if let Some(i) = timestamps_ms.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    if let Some(i) = timestamps_ms.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotonicTimestamps {
            index: i + 1,
            previous_ms: timestamps_ms[i],
            timestamp_ms: timestamps_ms[i + 1],
        });
    }
    Ok(())
}

/// Per-pixel displacement from one frame to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(
        width: usize,
        height: usize,
        dx: Vec<f64>,
        dy: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if dx.len() != n || dy.len() != n || valid.len() != n {
            return Err(Error::InvalidArgument(format!(
                "flow field of {width}x{height} needs {n} entries per component"
            )));
        }
        Ok(FlowField {
            width,
            height,
            dx,
            dy,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

struct Level {
    width: usize,
    height: usize,
}

fn pyramid_levels(width: usize, height: usize, params: &FlowParams) -> Vec<Level> {
    let mut levels = Vec::with_capacity(params.levels);
    for k in 0..params.levels {
        let s = params.scale.powi(k as i32);
        let (w, h) = (
            (width as f64 * s).round() as usize,
            (height as f64 * s).round() as usize,
        );
        if k > 0 && (w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE) {
            break;
        }
        levels.push(Level {
            width: w,
            height: h,
        });
    }
    levels
}

fn level_image(full: &Plane, level: &Level) -> Plane {
    if level.width == full.width && level.height == full.height {
        return full.clone();
    }
    let s = level.width as f64 / full.width as f64;
    full.gaussian_blur((1.0 / s - 1.0) * 0.5)
        .resize(level.width, level.height)
}

/// Relative determinant floor below which the local system is treated as
/// rank deficient.
const CONDITION_FLOOR: f64 = 1e-6;

/// One displacement update; returns the well-conditioned mask.
fn update_flow(
    first: &PolyCoeffs,
    second: &PolyCoeffs,
    window: usize,
    fx: &mut Plane,
    fy: &mut Plane,
) -> Vec<bool> {
    let (w, h) = (first.width, first.height);
    let n = w * h;
    let mut channels: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (fx.data[i], fy.data[i]);
            let p1 = first.at(x, y);
            let p2 = second.sample(x as f64 + dx, y as f64 + dy);
            let axx = 0.5 * (p1[2] + p2[2]);
            let ayy = 0.5 * (p1[3] + p2[3]);
            let axy = 0.5 * (p1[4] + p2[4]);
            let bx = -0.5 * (p2[0] - p1[0]) + axx * dx + axy * dy;
            let by = -0.5 * (p2[1] - p1[1]) + axy * dx + ayy * dy;
            channels[0][i] = axx * axx + axy * axy;
            channels[1][i] = axx * axy + axy * ayy;
            channels[2][i] = axy * axy + ayy * ayy;
            channels[3][i] = axx * bx + axy * by;
            channels[4][i] = axy * bx + ayy * by;
        }
    }
    let blurred: Vec<Plane> = channels
        .into_iter()
        .map(|c| Plane::new(w, h, c).box_mean(window))
        .collect();
    let mut ok = vec![false; n];
    for i in 0..n {
        let (g11, g12, g22) = (blurred[0].data[i], blurred[1].data[i], blurred[2].data[i]);
        let (h1, h2) = (blurred[3].data[i], blurred[4].data[i]);
        let det = g11 * g22 - g12 * g12;
        let trace = g11 + g22;
        if trace > 0.0 && det > CONDITION_FLOOR * trace * trace {
            fx.data[i] = (g22 * h1 - g12 * h2) / det;
            fy.data[i] = (g11 * h2 - g12 * h1) / det;
            ok[i] = true;
        }
    }
    ok
}

/// Dense displacement field taking `frame_a` to `frame_b`, so that
/// `a(x, y) ~ b(x + dx, y + dy)`.
///
/// Pixels within half a window of the border, and pixels whose local system
/// is rank deficient, are marked invalid.
pub fn estimate_dense_flow(frame_a: &Frame, frame_b: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if (frame_a.width, frame_a.height) != (frame_b.width, frame_b.height) {
        return Err(Error::DimensionMismatch(
            frame_a.width,
            frame_a.height,
            frame_b.width,
            frame_b.height,
        ));
    }
    let (w, h) = (frame_a.width, frame_a.height);
    check_dims(w, h)?;
    let (pa, pb) = (frame_a.to_plane(), frame_b.to_plane());
    if pa.variance() == 0.0 || pb.variance() == 0.0 {
        return Err(Error::DegenerateFrame);
    }

    let expansion = PolyExpansion::new(params.poly_radius, params.poly_sigma);
    let levels = pyramid_levels(w, h, params);
    let mut flow: Option<(Plane, Plane)> = None;
    let mut conditioned = vec![false; w * h];
    for level in levels.iter().rev() {
        let ca = expansion.expand(&level_image(&pa, level));
        let cb = expansion.expand(&level_image(&pb, level));
        let (mut fx, mut fy) = match flow.take() {
            None => (
                Plane::zeros(level.width, level.height),
                Plane::zeros(level.width, level.height),
            ),
            Some((px, py)) => {
                let sx = level.width as f64 / px.width as f64;
                let sy = level.height as f64 / py.height as f64;
                let mut fx = px.resize(level.width, level.height);
                let mut fy = py.resize(level.width, level.height);
                fx.data.iter_mut().for_each(|v| *v *= sx);
                fy.data.iter_mut().for_each(|v| *v *= sy);
                (fx, fy)
            }
        };
        for _ in 0..params.iterations {
            conditioned = update_flow(&ca, &cb, params.window, &mut fx, &mut fy);
        }
        flow = Some((fx, fy));
    }
    let (fx, fy) = flow.expect("at least the full-resolution level exists");

    let r = params.window / 2;
    let valid = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            conditioned[i] && x >= r && y >= r && x + r < w && y + r < h
        })
        .collect();
    FlowField::new(w, h, fx.data, fy.data, valid)
}

/// Mean `(dx, dy)` over valid pixels.
pub fn reduce_flow(field: &FlowField) -> Result<(f64, f64)> {
    let mut count = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((&dx, &dy), &ok) in field.dx.iter().zip(&field.dy).zip(&field.valid) {
        if ok {
            sx += dx;
            sy += dy;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok((sx / count as f64, sy / count as f64))
}

/// Mean flow per consecutive frame pair.
///
/// Sample `i` describes frames `i -> i + 1` and is stamped at frame `i + 1`.
/// Displacements are raw per pair, not divided by the frame gap; the gaps
/// are kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTraces {
    pub timestamps_ms: Vec<f64>,
    pub mean_dx: Vec<f64>,
    pub mean_dy: Vec<f64>,
    pub gaps_ms: Vec<f64>,
}

impl FlowTraces {
    pub fn x_series(&self, kind: SensorKind) -> Result<TimeSeries> {
        TimeSeries::new(kind, self.timestamps_ms.clone(), self.mean_dx.clone())
    }

    pub fn y_series(&self, kind: SensorKind) -> Result<TimeSeries> {
        TimeSeries::new(kind, self.timestamps_ms.clone(), self.mean_dy.clone())
    }
}

/// Frame pairs processed per parallel batch.
const PAIR_BATCH: usize = 32;

/// Computes mean-flow traces for every consecutive frame pair.
///
/// Pairs are estimated in parallel; the output order is frame order and does
/// not depend on scheduling.
pub fn flow_traces<S: FrameSource + Sync>(source: &S, params: &FlowParams) -> Result<FlowTraces> {
    params.validate()?;
    let count = source.frame_count();
    if count < 2 {
        return Err(Error::TooFewFrames(count));
    }
    let (w, h) = source.dimensions();
    check_dims(w, h)?;
    let timestamps: Vec<f64> = (0..count).map(|i| source.timestamp_ms(i)).collect();
    check_timestamps(&timestamps)?;

    let mut means = Vec::with_capacity(count - 1);
    let mut start = 0;
    while start + 1 < count {
        let end = (start + PAIR_BATCH).min(count - 1);
        let frames: Vec<Frame> = (start..=end)
            .into_par_iter()
            .map(|i| source.frame(i))
            .collect::<Result<_>>()?;
        let batch: Vec<(f64, f64)> = frames
            .par_windows(2)
            .map(|pair| estimate_dense_flow(&pair[0], &pair[1], params).and_then(|f| reduce_flow(&f)))
            .collect::<Result<_>>()?;
        means.extend(batch);
        start = end;
    }

    Ok(FlowTraces {
        timestamps_ms: timestamps[1..].to_vec(),
        mean_dx: means.iter().map(|m| m.0).collect(),
        mean_dy: means.iter().map(|m| m.1).collect(),
        gaps_ms: timestamps.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// Smooth band-limited test texture: a fixed sum of plane waves with periods
/// between roughly 9 and 40 pixels. Exposed for generators and tests.
pub fn texture_intensity(x: f64, y: f64, seed: u64) -> f64 {
    use std::f64::consts::TAU;
    // Deterministic wave table derived from the seed via a small LCG.
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    };
    let mut v = 128.0;
    for _ in 0..8 {
        let period = 9.0 + 31.0 * next();
        let angle = TAU * next();
        let phase = TAU * next();
        let amp = 10.0 + 10.0 * next();
        let (kx, ky) = (angle.cos() / period, angle.sin() / period);
        v += amp * (TAU * (kx * x + ky * y) + phase).sin();
    }
    v
}

/// Renders [`texture_intensity`] translated by `(tx, ty)`:
/// `pixel(x, y) = texture(x - tx, y - ty)`.
pub fn render_texture(width: usize, height: usize, tx: f64, ty: f64, seed: u64) -> Frame {
    let pixels = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            texture_intensity(x - tx, y - ty, seed) as f32
        })
        .collect();
    Frame::new(width, height, pixels).expect("dimensions match")
}
