//! Shared domain types: training data, the sparse model, training
//! configuration and objective values.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{GradMode, Similarity};

/// Training data: `n` rows of `d` features, one target and one positive
/// weight per row.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array1<f64>,
    weights: Array1<f64>,
    groups: Option<Vec<String>>,
}

impl Dataset {
    /// Unit weights.
    pub fn new(features: Array2<f64>, targets: Array1<f64>) -> Result<Self> {
        let n = targets.len();
        Self::with_weights(features, targets, Array1::ones(n))
    }

    pub fn with_weights(features: Array2<f64>, targets: Array1<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch { context: "targets", expected: n, found: targets.len() });
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch { context: "weights", expected: n, found: weights.len() });
        }
        if let Some((i, _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features at {i:?}")));
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target {i}")));
        }
        if let Some(i) = weights.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("weight {i} must be finite and positive, got {}", weights[i])));
        }
        Ok(Self { features, targets, weights, groups: None })
    }

    /// Weights `u_i = n / (2 n_c)` for ±1 labels, so both classes carry the
    /// same total mass.
    pub fn class_balanced(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        if !labels.iter().all(|&y| y == 1.0 || y == -1.0) {
            return Err(Error::invalid("class-balanced weights need ±1 labels"));
        }
        let n = labels.len() as f64;
        let pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
        let neg = n - pos;
        if pos == 0.0 || neg == 0.0 {
            return Err(Error::invalid("class-balanced weights need both classes present"));
        }
        let weights = labels.mapv(|y| if y > 0.0 { n / (2.0 * pos) } else { n / (2.0 * neg) });
        Self::with_weights(features, labels, weights)
    }

    /// Attaches a group id per row (used for group-disjoint folds).
    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.len() {
            return Err(Error::DimensionMismatch { context: "groups", expected: self.len(), found: groups.len() });
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn targets(&self) -> ArrayView1<'_, f64> {
        self.targets.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    /// True when every target is ±1 and both classes occur.
    pub fn is_binary_labeled(&self) -> bool {
        let all = self.targets.iter().all(|&y| y == 1.0 || y == -1.0);
        all && self.targets.iter().any(|&y| y > 0.0) && self.targets.iter().any(|&y| y < 0.0)
    }

    /// Same features and weights with replaced targets.
    pub fn with_targets(&self, targets: Array1<f64>) -> Result<Self> {
        let mut out = Self::with_weights(self.features.clone(), targets, self.weights.clone())?;
        out.groups = self.groups.clone();
        Ok(out)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("empty subset"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            targets: self.targets.select(Axis(0), indices),
            weights: self.weights.select(Axis(0), indices),
            groups: self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i].clone()).collect()),
        })
    }

    /// Per-dimension `[min, max]` of the features.
    pub fn feature_bounds(&self) -> Vec<(f64, f64)> {
        self.features
            .axis_iter(Axis(1))
            .map(|col| {
                col.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            })
            .collect()
    }
}

/// Provenance recorded with a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub n_train: usize,
    pub lambda: f64,
    pub seed: u64,
    pub iterations: usize,
    pub objective: f64,
}

/// `g(x) = sum_j beta_j s(x, z_j) + b`. Everything needed at test time.
#[derive(Clone, Debug)]
pub struct SparseModel {
    prototypes: Array2<f64>,
    beta: Array1<f64>,
    bias: f64,
    similarity: Similarity,
    pub metadata: ModelMetadata,
}

impl SparseModel {
    pub fn new(prototypes: Array2<f64>, beta: Array1<f64>, bias: f64, similarity: Similarity) -> Result<Self> {
        let (m, d) = prototypes.dim();
        if m == 0 || d == 0 {
            return Err(Error::invalid(format!("model needs at least one prototype, got {m}x{d}")));
        }
        if beta.len() != m {
            return Err(Error::DimensionMismatch { context: "beta", expected: m, found: beta.len() });
        }
        if !prototypes.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("prototypes".into()));
        }
        if !beta.iter().all(|v| v.is_finite()) || !bias.is_finite() {
            return Err(Error::NonFinite("coefficients".into()));
        }
        Ok(Self { prototypes, beta, bias, similarity, metadata: ModelMetadata::default() })
    }

    pub fn with_metadata(mut self, metadata: ModelMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn num_prototypes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn prototypes(&self) -> ArrayView2<'_, f64> {
        self.prototypes.view()
    }

    pub fn beta(&self) -> ArrayView1<'_, f64> {
        self.beta.view()
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn similarity(&self) -> &Similarity {
        &self.similarity
    }

    pub(crate) fn prototypes_mut(&mut self) -> &mut Array2<f64> {
        &mut self.prototypes
    }

    pub(crate) fn set_coefficients(&mut self, beta: Array1<f64>, bias: f64) {
        debug_assert_eq!(beta.len(), self.prototypes.nrows());
        self.beta = beta;
        self.bias = bias;
    }

    /// Evaluates the discriminant at `x` using exactly `m` similarity calls.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { context: "predict input", expected: self.dim(), found: x.len() });
        }
        let mut acc = self.bias;
        for (j, (z, beta)) in self.prototypes.outer_iter().zip(self.beta.iter()).enumerate() {
            let s = match self.similarity.eval(x, z) {
                Err(Error::Evaluation { message, .. }) => {
                    return Err(Error::Evaluation { location: None, message: format!("prototype {j}: {message}") })
                }
                other => other?,
            };
            if !s.is_finite() {
                return Err(Error::NonFiniteSimilarity { prototype: j });
            }
            acc += beta * s;
        }
        Ok(acc)
    }

    pub fn predict_batch(&self, rows: ArrayView2<f64>) -> Result<Array1<f64>> {
        rows.outer_iter().map(|x| self.predict(x)).collect()
    }
}

/// Projection applied to a prototype after each gradient step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxConstraint {
    #[default]
    Unbounded,
    /// Per-dimension `[min, max]` of the training features.
    DataHull,
    Bounds(Vec<(f64, f64)>),
}

impl BoxConstraint {
    /// Resolves the constraint against a dataset.
    pub fn resolve(&self, data: &Dataset) -> Result<Option<Vec<(f64, f64)>>> {
        match self {
            BoxConstraint::Unbounded => Ok(None),
            BoxConstraint::DataHull => Ok(Some(data.feature_bounds())),
            BoxConstraint::Bounds(b) => {
                if b.len() != data.dim() {
                    return Err(Error::DimensionMismatch { context: "box bounds", expected: data.dim(), found: b.len() });
                }
                Ok(Some(b.clone()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub max_sweeps: usize,
    pub penalty_enabled: bool,
    pub penalty_decay_power: f64,
    pub bounds: BoxConstraint,
    pub seed: u64,
    pub grad_mode: GradMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            eta: 0.5,
            epsilon: 1e-6,
            max_sweeps: 50,
            penalty_enabled: true,
            penalty_decay_power: 2.0,
            bounds: BoxConstraint::Unbounded,
            seed: 0,
            grad_mode: GradMode::Analytic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be at least 1"));
        }
        if !self.penalty_decay_power.is_finite() {
            return Err(Error::invalid("penalty decay power must be finite"));
        }
        if let BoxConstraint::Bounds(b) = &self.bounds {
            if let Some((k, (lo, hi))) = b.iter().enumerate().find(|(_, (lo, hi))| !(lo <= hi)) {
                return Err(Error::invalid(format!("box bounds for dimension {k} are inverted: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Weighted squared loss, ridge term and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub reg: f64,
    pub total: f64,
}

impl ObjectiveValue {
    pub(crate) fn new(loss: f64, reg: f64) -> Self {
        Self { loss, reg, total: loss + reg }
    }
}

/// Objective from a precomputed similarity matrix (`n x m`).
pub(crate) fn objective_from_matrix(
    s: ArrayView2<f64>,
    beta: ArrayView1<f64>,
    bias: f64,
    data: &Dataset,
    lambda: f64,
) -> ObjectiveValue {
    let g = s.dot(&beta) + bias;
    let r = g - &data.targets;
    let loss = (&r * &data.weights).dot(&r);
    ObjectiveValue::new(loss, lambda * beta.dot(&beta))
}

/// `(g - y)^T U (g - y) + lambda * beta^T beta` over the dataset.
pub fn objective(model: &SparseModel, data: &Dataset, lambda: f64) -> Result<ObjectiveValue> {
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch { context: "objective data", expected: model.dim(), found: data.dim() });
    }
    let s = model.similarity.matrix(data.features(), model.prototypes())?;
    Ok(objective_from_matrix(s.view(), model.beta(), model.bias(), data, lambda))
}
