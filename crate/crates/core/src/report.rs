//! The JSON document written by `sensync sync`.
//!
//! Millisecond quantities are rounded to three decimals so reports compare
//! byte-for-byte across runs and platforms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::stream::SensorKind;
use crate::sync::{CalibrationTable, EventType, PairResult, SyncOutcome};
use crate::synthgen::GroundTruth;

pub fn round3(x: f64) -> f64 {
    // `+ 0.0` turns -0.0 into 0.0.
    (x * 1000.0).round() / 1000.0 + 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub reference: SensorKind,
    pub target: SensorKind,
    pub event_type: EventType,
    pub delta_star_ms: f64,
    pub integer_lag: i64,
    pub refined: bool,
    pub peak_value: f64,
    pub second_peak_ratio: Option<f64>,
    pub overlap_ms: f64,
    pub normalizing_delay_ms: Option<f64>,
    pub corrected_delay_ms: Option<f64>,
    pub low_confidence: bool,
}

impl From<&PairResult> for PairReport {
    fn from(p: &PairResult) -> Self {
        PairReport {
            reference: p.pair.reference,
            target: p.pair.target,
            event_type: p.pair.event_type,
            delta_star_ms: round3(p.estimate.delta_star_ms),
            integer_lag: p.estimate.integer_lag,
            refined: p.estimate.refined,
            peak_value: round3(p.estimate.peak_value),
            second_peak_ratio: p.estimate.second_peak_ratio.map(round3),
            overlap_ms: round3(p.overlap_ms),
            normalizing_delay_ms: p.normalizing_delay_ms.map(round3),
            corrected_delay_ms: p.corrected_delay_ms.map(round3),
            low_confidence: p.low_confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// Expected error from the calibration table, when one was applied.
    pub avg_error_ms: Option<f64>,
    pub low_confidence_pairs: usize,
    /// Only with ground truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_residual_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub version: String,
    pub anchor: SensorKind,
    pub grid_rate_hz: f64,
    pub pairs: Vec<PairReport>,
    /// Amount added to each stream's timestamps.
    pub shifts_ms: BTreeMap<SensorKind, f64>,
    /// `(true offset - anchor's true offset) + shift`; zero is perfect.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residuals_ms: Option<BTreeMap<SensorKind, f64>>,
    pub summary: ReportSummary,
    pub warnings: Vec<String>,
    pub config: Config,
}

impl SyncReport {
    pub fn new(
        config: &Config,
        outcome: &SyncOutcome,
        calibration: Option<&CalibrationTable>,
        truth: Option<&GroundTruth>,
    ) -> Self {
        let mut warnings = outcome.warnings.clone();
        let residuals = truth.map(|t| {
            outcome
                .shifts_ms
                .iter()
                .filter_map(|(&kind, &shift)| match t.relative_offset_ms(kind, config.anchor) {
                    Some(offset) => Some((kind, round3(offset + shift))),
                    None => {
                        warnings.push(format!("ground truth has no offset for {kind}"));
                        None
                    }
                })
                .collect::<BTreeMap<_, _>>()
        });
        let max_abs_residual_ms = residuals
            .as_ref()
            .and_then(|r| r.values().map(|v| v.abs()).reduce(f64::max));
        SyncReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            anchor: config.anchor,
            grid_rate_hz: config.grid_rate_hz,
            pairs: outcome.pairs.iter().map(PairReport::from).collect(),
            shifts_ms: outcome
                .shifts_ms
                .iter()
                .map(|(&k, &v)| (k, round3(v)))
                .collect(),
            residuals_ms: residuals,
            summary: ReportSummary {
                avg_error_ms: calibration.and_then(|c| c.summary.avg_error_ms).map(round3),
                low_confidence_pairs: outcome.pairs.iter().filter(|p| p.low_confidence).count(),
                max_abs_residual_ms,
            },
            warnings,
            config: config.echo(),
        }
    }

    pub fn any_low_confidence(&self) -> bool {
        self.summary.low_confidence_pairs > 0
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}
