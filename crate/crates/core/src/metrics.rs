//! Evaluation measures.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SparseModel;

fn check_pair(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { context: "metric inputs", expected: truth.len(), found: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric over an empty set"));
    }
    Ok(())
}

pub fn mae(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    check_pair(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    check_pair(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Fraction of samples whose predicted sign differs from the label's.
/// A zero prediction counts as positive.
pub fn error_rate(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    check_pair(pred, truth)?;
    let wrong = pred
        .iter()
        .zip(truth.iter())
        .filter(|(p, t)| (**p >= 0.0) != (**t >= 0.0))
        .count();
    Ok(wrong as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
    ErrorRate,
}

impl LossKind {
    pub fn eval(self, pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
        match self {
            LossKind::Mse => mse(pred, truth),
            LossKind::Mae => mae(pred, truth),
            LossKind::ErrorRate => error_rate(pred, truth),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::ErrorRate => "error_rate",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "error_rate" | "error-rate" | "error" => Ok(LossKind::ErrorRate),
            other => Err(Error::invalid(format!("unknown loss `{other}`"))),
        }
    }
}

/// A decision threshold with its false acceptance and false rejection rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points over every distinct score, plus `-inf` and `+inf`.
///
/// A score is accepted when `score >= threshold`, so FAR is the fraction of
/// impostor scores at or above the threshold and FRR the fraction of genuine
/// scores below it. Points are ordered by increasing threshold.
pub fn far_frr_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<OperatingPoint>> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::invalid("FAR/FRR curve needs genuine and impostor scores"));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut gen = genuine.to_vec();
    let mut imp = impostor.to_vec();
    gen.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = gen.iter().chain(imp.iter()).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ng, ni) = (gen.len() as f64, imp.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(OperatingPoint { threshold: f64::NEG_INFINITY, far: 1.0, frr: 0.0 });
    // Two pointers over the sorted lists: count scores strictly below t.
    let (mut gi, mut ii) = (0usize, 0usize);
    for &t in &thresholds {
        while gi < gen.len() && gen[gi] < t {
            gi += 1;
        }
        while ii < imp.len() && imp[ii] < t {
            ii += 1;
        }
        points.push(OperatingPoint {
            threshold: t,
            far: (imp.len() - ii) as f64 / ni,
            frr: gi as f64 / ng,
        });
    }
    points.push(OperatingPoint { threshold: f64::INFINITY, far: 0.0, frr: 1.0 });
    Ok(points)
}

/// Similarity evaluations needed for one prediction, measured with the
/// model's counter on a probe input (its first prototype).
pub fn eval_cost(model: &SparseModel) -> Result<u64> {
    let probe = model.prototypes().row(0).to_owned();
    let before = model.similarity().evaluations();
    model.predict(probe.view())?;
    Ok(model.similarity().evaluations() - before)
}

/// Evaluations used by predicting every row of `rows`.
pub fn batch_eval_cost(model: &SparseModel, rows: ArrayView2<f64>) -> Result<u64> {
    let before = model.similarity().evaluations();
    model.predict_batch(rows)?;
    Ok(model.similarity().evaluations() - before)
}
