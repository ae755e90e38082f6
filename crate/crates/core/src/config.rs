//! Pipeline configuration: estimation knobs, per-sensor inputs and output
//! locations, read from TOML or JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, DEFAULT_ENERGY_BIN_MS};
use crate::flow::{self, FlowParams, FlowTraces};
use crate::io::{self, PgmFrames, RawFrames};
use crate::stream::{SensorKind, TimeSeries};
use crate::sync::{EstimationConfig, SyncOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
}

fn default_bin_ms() -> f64 {
    DEFAULT_ENERGY_BIN_MS
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Where a sensor's trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorInput {
    /// `timestamp_ms` plus a named column, or the second column when
    /// `column` is absent.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
    /// 16-bit mono WAV reduced to binned energy; `start_ms` is the clock
    /// time of the first sample.
    Wav {
        path: PathBuf,
        #[serde(default = "default_bin_ms")]
        bin_ms: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        start_ms: f64,
    },
    RawPcm {
        path: PathBuf,
        sidecar: PathBuf,
        #[serde(default = "default_bin_ms")]
        bin_ms: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        start_ms: f64,
    },
    /// Directory of PGM frames; `timestamps` defaults to
    /// `<dir>/timestamps.csv`.
    Pgm {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timestamps: Option<PathBuf>,
        component: Component,
    },
    RawFrames {
        header: PathBuf,
        path: PathBuf,
        timestamps: PathBuf,
        component: Component,
    },
}

impl SensorInput {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            SensorInput::Csv { path, .. } | SensorInput::Wav { path, .. } => vec![path],
            SensorInput::RawPcm { path, sidecar, .. } => vec![path, sidecar],
            SensorInput::Pgm { dir, timestamps, .. } => {
                let mut v = vec![dir];
                v.extend(timestamps.as_mut());
                v
            }
            SensorInput::RawFrames {
                header,
                path,
                timestamps,
                ..
            } => vec![header, path, timestamps],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Directory receiving one aligned CSV per stream.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifted_dir: Option<PathBuf>,
}

impl OutputConfig {
    fn is_empty(&self) -> bool {
        self.report.is_none() && self.shifted_dir.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid_rate_hz: f64,
    pub max_lag_s: f64,
    pub refine: bool,
    pub min_duration_s: f64,
    pub anchor: SensorKind,
    pub extra_pairs: bool,
    pub require_calibration: bool,
    /// Exit with status 2 when any pair is low confidence.
    pub strict: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    /// Injected offsets of a synthetic run; enables residuals in the report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    pub flow: FlowParams,
    #[serde(skip_serializing_if = "OutputConfig::is_empty")]
    pub output: OutputConfig,
    pub sensors: BTreeMap<SensorKind, SensorInput>,
}

impl Default for Config {
    fn default() -> Self {
        let est = EstimationConfig::default();
        Config {
            grid_rate_hz: est.grid_rate_hz,
            max_lag_s: est.max_lag_s,
            refine: est.refine,
            min_duration_s: est.min_duration_s,
            anchor: SensorKind::AccelZ,
            extra_pairs: false,
            require_calibration: false,
            strict: false,
            calibration: None,
            ground_truth: None,
            flow: FlowParams::default(),
            output: OutputConfig::default(),
            sensors: BTreeMap::new(),
        }
    }
}

/// Deserializes TOML or JSON, chosen by the file extension (`.json` is
/// JSON, anything else TOML).
pub(crate) fn read_by_extension<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_json(path) {
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    } else {
        toml::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl Config {
    /// Loads a config file and resolves relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Config = read_by_extension(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if is_json(path) {
            return io::write_json(path, self);
        }
        let text = toml::to_string(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Makes every input path absolute, interpreting relative ones against
    /// `base`.
    pub fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for input in self.sensors.values_mut() {
            input.paths_mut().into_iter().for_each(&fix);
        }
        self.calibration.iter_mut().for_each(&fix);
        self.ground_truth.iter_mut().for_each(&fix);
        Ok(())
    }

    pub fn estimation(&self) -> EstimationConfig {
        EstimationConfig {
            grid_rate_hz: self.grid_rate_hz,
            max_lag_s: self.max_lag_s,
            refine: self.refine,
            min_duration_s: self.min_duration_s,
        }
    }

    pub fn sync_options(&self) -> SyncOptions {
        SyncOptions {
            estimation: self.estimation(),
            anchor: self.anchor,
            extra_pairs: self.extra_pairs,
            require_calibration: self.require_calibration,
            ..SyncOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimation().validate()?;
        self.flow.validate()?;
        if self.sensors.is_empty() {
            return Err(Error::InvalidConfig("no sensors configured".into()));
        }
        if !self.sensors.contains_key(&self.anchor) {
            return Err(Error::InvalidConfig(format!(
                "anchor {} has no input",
                self.anchor
            )));
        }
        for (kind, input) in &self.sensors {
            let mut input = input.clone();
            if input.paths_mut().iter().any(|p| p.as_os_str().is_empty()) {
                return Err(Error::InvalidConfig(format!("{kind}: empty path")));
            }
        }
        Ok(())
    }

    /// The configuration as echoed in reports: everything that influences
    /// the result, without output locations.
    pub fn echo(&self) -> Config {
        Config {
            output: OutputConfig::default(),
            ..self.clone()
        }
    }

    /// Reads every configured sensor. Frame sources shared by two traces
    /// are processed once.
    pub fn load_streams(&self) -> Result<BTreeMap<SensorKind, TimeSeries>> {
        let mut flows: BTreeMap<Vec<PathBuf>, FlowTraces> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for (&kind, input) in &self.sensors {
            let series = match input {
                SensorInput::Csv { path, column } => match column {
                    Some(c) => features::extract_column(path, c, kind)?,
                    None => io::read_series_csv(path, kind)?,
                },
                SensorInput::Wav {
                    path,
                    bin_ms,
                    start_ms,
                } => features::audio_energy(&io::read_wav(path)?, *bin_ms)?.with_kind(kind).shifted(*start_ms),
                SensorInput::RawPcm {
                    path,
                    sidecar,
                    bin_ms,
                    start_ms,
                } => features::audio_energy(&io::read_raw_pcm(path, sidecar)?, *bin_ms)?
                    .with_kind(kind)
                    .shifted(*start_ms),
                SensorInput::Pgm {
                    dir,
                    timestamps,
                    component,
                } => {
                    let ts = timestamps
                        .clone()
                        .unwrap_or_else(|| dir.join(crate::synthgen::layout::FRAME_TIMESTAMPS));
                    let key = vec![dir.clone(), ts.clone()];
                    if !flows.contains_key(&key) {
                        let traces = flow::flow_traces(&PgmFrames::open(dir, &ts)?, &self.flow)?;
                        flows.insert(key.clone(), traces);
                    }
                    component_series(&flows[&key], *component, kind)?
                }
                SensorInput::RawFrames {
                    header,
                    path,
                    timestamps,
                    component,
                } => {
                    let key = vec![header.clone(), path.clone(), timestamps.clone()];
                    if !flows.contains_key(&key) {
                        let source = RawFrames::open(header, path, timestamps)?;
                        flows.insert(key.clone(), flow::flow_traces(&source, &self.flow)?);
                    }
                    component_series(&flows[&key], *component, kind)?
                }
            };
            log::info!("{kind}: {} samples over {:.1} s", series.len(), series.duration_ms() / 1000.0);
            out.insert(kind, series);
        }
        Ok(out)
    }
}

fn component_series(traces: &FlowTraces, component: Component, kind: SensorKind) -> Result<TimeSeries> {
    match component {
        Component::X => traces.x_series(kind),
        Component::Y => traces.y_series(kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
            grid_rate_hz = 50.0
            anchor = "AccelZ"

            [sensors.AccelZ]
            format = "csv"
            path = "accel.csv"
            column = "accel_z"

            [sensors.FlowY_Front]
            format = "pgm"
            dir = "frames_front"
            component = "y"

            [sensors.AudioEnergy]
            format = "wav"
            path = "audio.wav"
        "#;
        let cfg: Config = toml::from_str(text).unwrap();
        assert_eq!(cfg.grid_rate_hz, 50.0);
        assert_eq!(cfg.max_lag_s, 10.0);
        assert!(cfg.refine);
        assert!(matches!(
            cfg.sensors[&SensorKind::AudioEnergy],
            SensorInput::Wav { bin_ms, .. } if bin_ms == 10.0
        ));
        let again: Config = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
        let json: Config = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(json, cfg);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(toml::from_str::<Config>("grid_rate = 100.0").is_err());
        assert!(toml::from_str::<Config>(
            "[sensors.AccelZ]\nformat = \"csv\"\npath = \"a.csv\"\ncolour = \"x\""
        )
        .is_err());
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "calibration = \"cal.json\"\n[sensors.AccelZ]\nformat = \"csv\"\npath = \"accel.csv\"\n",
        )
        .unwrap();
        let cfg = Config::load(&path).unwrap();
        let SensorInput::Csv { path: p, .. } = &cfg.sensors[&SensorKind::AccelZ] else {
            panic!()
        };
        assert_eq!(p, &dir.path().join("accel.csv"));
        assert_eq!(cfg.calibration.as_deref(), Some(dir.path().join("cal.json").as_path()));
    }

    #[test]
    fn validation() {
        let mut cfg = Config::default();
        assert!(cfg.validate().is_err());
        cfg.sensors.insert(
            SensorKind::AccelZ,
            SensorInput::Csv {
                path: "a.csv".into(),
                column: None,
            },
        );
        cfg.validate().unwrap();
        cfg.max_lag_s = 0.001;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        cfg.max_lag_s = 10.0;
        cfg.anchor = SensorKind::SteeringAngle;
        assert!(cfg.validate().is_err());
    }
}
