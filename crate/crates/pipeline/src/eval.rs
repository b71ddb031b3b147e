//! Angular-error metrics, per distance threshold.

use mvx_core::geometry::{angular_distance, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::calibrate::calibrate;
use crate::data::PreparedSequence;
use crate::predictor::RotationPredictor;
use crate::PipelineError;

/// One evaluated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub index: usize,
    /// Largest horizontal vehicle–camera distance over the sequence.
    pub distance: f64,
    pub truth: UnitQuaternion,
    pub predicted: UnitQuaternion,
}

/// Errors in degrees, per-axis values being magnitudes of the Euler angles
/// of the error rotation `predicted⁻¹ · truth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisErrors {
    pub total: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl AxisErrors {
    pub fn between(predicted: &UnitQuaternion, truth: &UnitQuaternion) -> Result<Self, PipelineError> {
        let e = predicted
            .inverse()
            .mul(truth)
            .to_euler()
            .map_err(|err| PipelineError::Numeric(format!("error rotation: {err}")))?;
        let [yaw, pitch, roll] = e.to_degrees();
        Ok(Self {
            total: angular_distance(predicted, truth).to_degrees(),
            roll: roll.abs(),
            pitch: pitch.abs(),
            yaw: yaw.abs(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub total: Stats,
    pub roll: Stats,
    pub pitch: Stats,
    pub yaw: Stats,
}

impl ErrorStats {
    pub fn of(errors: &[AxisErrors]) -> Option<Self> {
        let pick = |f: fn(&AxisErrors) -> f64| Stats::of(&errors.iter().map(f).collect::<Vec<_>>());
        Some(Self {
            total: pick(|e| e.total)?,
            roll: pick(|e| e.roll)?,
            pitch: pick(|e| e.pitch)?,
            yaw: pick(|e| e.yaw)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub index: usize,
    pub distance: f64,
    pub error: AxisErrors,
    /// Error of predicting no deviation.
    pub baseline: AxisErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sequences with every frame closer than this; `None` keeps all.
    pub distance_threshold: Option<f64>,
    pub count: usize,
    /// `None` exactly when no sequence passed the filter.
    pub error: Option<ErrorStats>,
    pub baseline: Option<ErrorStats>,
    pub records: Vec<SequenceRecord>,
}

impl EvalReport {
    pub fn from_cases(cases: &[Case], distance_threshold: Option<f64>) -> Result<Self, PipelineError> {
        let mut records = Vec::new();
        for c in cases.iter().filter(|c| distance_threshold.is_none_or(|d| c.distance < d)) {
            records.push(SequenceRecord {
                index: c.index,
                distance: c.distance,
                error: AxisErrors::between(&c.predicted, &c.truth)?,
                baseline: AxisErrors::between(&UnitQuaternion::identity(), &c.truth)?,
            });
        }
        let errors: Vec<_> = records.iter().map(|r| r.error).collect();
        let baseline: Vec<_> = records.iter().map(|r| r.baseline).collect();
        Ok(Self {
            distance_threshold,
            count: records.len(),
            error: ErrorStats::of(&errors),
            baseline: ErrorStats::of(&baseline),
            records,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn mean_error(&self) -> Option<f64> {
        self.error.map(|e| e.total.mean)
    }
}

pub fn reports(cases: &[Case], thresholds: &[f64]) -> Result<Vec<EvalReport>, PipelineError> {
    thresholds.iter().map(|&d| EvalReport::from_cases(cases, Some(d))).collect()
}

/// Runs the chain on every sequence against its stored deviation.
pub fn predict_cases(seqs: &[PreparedSequence], stages: &[&dyn RotationPredictor]) -> Result<Vec<Case>, PipelineError> {
    seqs.iter()
        .enumerate()
        .map(|(index, s)| {
            let cal = calibrate(s, stages)?;
            Ok(Case {
                index,
                distance: s.seq.max_distance(),
                truth: s.seq.delta.rotation,
                predicted: cal.deviation,
            })
        })
        .collect()
}

pub fn evaluate(seqs: &[PreparedSequence], stages: &[&dyn RotationPredictor], thresholds: &[f64]) -> Result<Vec<EvalReport>, PipelineError> {
    reports(&predict_cases(seqs, stages)?, thresholds)
}

/// Adjacent threshold pair where the tighter filter has the larger mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendViolation {
    pub tighter: f64,
    pub looser: f64,
    pub tighter_mean: f64,
    pub looser_mean: f64,
    pub tighter_count: usize,
    pub looser_count: usize,
}

/// Checks that mean error does not grow as the threshold tightens.
/// Empty reports are skipped.
pub fn distance_trend(reports: &[EvalReport]) -> Vec<TrendViolation> {
    let mut rows: Vec<(f64, f64, usize)> = reports
        .iter()
        .filter_map(|r| Some((r.distance_threshold?, r.mean_error()?, r.count)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.windows(2)
        .filter(|w| w[0].1 > w[1].1)
        .map(|w| TrendViolation {
            tighter: w[0].0,
            looser: w[1].0,
            tighter_mean: w[0].1,
            looser_mean: w[1].1,
            tighter_count: w[0].2,
            looser_count: w[1].2,
        })
        .collect()
}
