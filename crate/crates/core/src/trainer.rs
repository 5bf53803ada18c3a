//! The alternating optimization loop: one prototype gradient step, then an
//! exact coefficient solve, round-robin over prototypes until the objective
//! stops changing.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::similarity::Similarity;
use crate::types::{objective_from_matrix, Dataset, ModelMetadata, SparseModel, TrainConfig};
use crate::zstep::{self, Decay, FitState, ZGradient};

/// One iteration of the loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub t: u64,
    /// Index of the prototype that moved.
    pub j: usize,
    /// Objective before the prototype step.
    pub omega_before: f64,
    /// Objective after the prototype step, before re-solving coefficients.
    pub omega_after_z: f64,
    /// Objective after the coefficient step.
    pub omega_after: f64,
    pub step_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Converged,
    MaxSweeps,
    Error(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    /// Objective of the initial prototypes with optimal coefficients.
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl TrainTrace {
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.omega_after)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

/// Row indices used to initialize `m` prototypes: uniform without
/// replacement, and for ±1 labels with `m >= 2` at least one row per class.
pub fn init_indices(data: &Dataset, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("cannot pick {m} prototypes from {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if m >= 2 && data.is_binary_labeled() {
        let y = data.targets();
        let pos: Vec<usize> = (0..n).filter(|&i| y[i] > 0.0).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| y[i] < 0.0).collect();
        let first = [*pos.choose(&mut rng).unwrap(), *neg.choose(&mut rng).unwrap()];
        let mut rest: Vec<usize> = (0..n).filter(|i| !first.contains(i)).collect();
        rest.shuffle(&mut rng);
        let mut picked = first.to_vec();
        picked.extend(rest.into_iter().take(m - 2));
        picked.shuffle(&mut rng);
        return Ok(picked);
    }
    Ok(index::sample(&mut rng, n, m).into_vec())
}

/// Initial prototypes: `m` distinct training rows (see [`init_indices`]).
pub fn init_prototypes(data: &Dataset, m: usize, seed: u64) -> Result<Array2<f64>> {
    let idx = init_indices(data, m, seed)?;
    Ok(data.features().select(Axis(0), &idx))
}

/// Trains a model with `m` prototypes initialized from the training data.
///
/// Errors raised inside the loop do not abort: the model reached so far is
/// returned with [`Termination::Error`].
pub fn fit(data: &Dataset, m: usize, similarity: &Similarity, config: &TrainConfig) -> Result<(SparseModel, TrainTrace)> {
    config.validate()?;
    let protos = init_prototypes(data, m, config.seed)?;
    fit_from(data, protos.view(), similarity, config)
}

/// Trains starting from the given prototypes (warm start).
pub fn fit_from(
    data: &Dataset,
    prototypes: ArrayView2<f64>,
    similarity: &Similarity,
    config: &TrainConfig,
) -> Result<(SparseModel, TrainTrace)> {
    config.validate()?;
    let m = prototypes.nrows();
    if m == 0 {
        return Err(Error::invalid("need at least one prototype"));
    }
    if prototypes.ncols() != data.dim() {
        return Err(Error::DimensionMismatch { context: "initial prototypes", expected: data.dim(), found: prototypes.ncols() });
    }
    let bounds = config.bounds.resolve(data)?;
    let mut model = SparseModel::new(prototypes.to_owned(), Array1::zeros(m), 0.0, similarity.clone())?;
    let mut state = FitState::new(data, &model, config.lambda)?;
    model.set_coefficients(state.solution.beta.clone(), state.solution.bias);
    let initial_objective = current_objective(&state, &model, data, config.lambda);

    let mut records = Vec::new();
    let mut omega_prev = initial_objective;
    let max_iterations = (config.max_sweeps * m) as u64;
    let mut t = 0u64;
    let termination = loop {
        let j = (t % m as u64) as usize;
        t += 1;
        match iterate(data, &mut model, &mut state, j, t, config, bounds.as_deref()) {
            Ok((omega_after_z, step_norm)) => {
                let omega = current_objective(&state, &model, data, config.lambda);
                records.push(IterationRecord {
                    t,
                    j,
                    omega_before: omega_prev,
                    omega_after_z,
                    omega_after: omega,
                    step_norm,
                });
                let delta = (omega - omega_prev).abs();
                omega_prev = omega;
                // At least one full sweep before the stopping rule applies.
                if t >= m as u64 && delta < config.epsilon {
                    break Termination::Converged;
                }
                if t >= max_iterations {
                    break Termination::MaxSweeps;
                }
            }
            Err(e) => break Termination::Error(e.to_string()),
        }
    };

    model.metadata = ModelMetadata {
        n_train: data.len(),
        lambda: config.lambda,
        seed: config.seed,
        iterations: records.len(),
        objective: omega_prev,
    };
    let trace = TrainTrace { initial_objective, records, termination };
    Ok((model, trace))
}

fn iterate(
    data: &Dataset,
    model: &mut SparseModel,
    state: &mut FitState,
    j: usize,
    t: u64,
    config: &TrainConfig,
    bounds: Option<&[(f64, f64)]>,
) -> Result<(f64, f64)> {
    let (direct, sensitivity) = state.gradient(data, model, j, config.lambda, config.grad_mode)?;
    let penalty = if config.penalty_enabled {
        zstep::penalty_grad(model, j, Decay { t, power: config.penalty_decay_power }, config.grad_mode)?
    } else {
        Array1::zeros(model.dim())
    };
    let grad = ZGradient { direct, sensitivity, penalty };
    let report = zstep::apply_step(model, j, &grad, config, t, bounds, data.weights().sum())?;
    state.refresh_column(data, model, j)?;
    let omega_after_z = current_objective(state, model, data, config.lambda);
    state.resolve(data, config.lambda)?;
    model.set_coefficients(state.solution.beta.clone(), state.solution.bias);
    Ok((omega_after_z, report.step_norm))
}

fn current_objective(state: &FitState, model: &SparseModel, data: &Dataset, lambda: f64) -> f64 {
    objective_from_matrix(state.sims.view(), model.beta(), model.bias(), data, lambda).total
}

/// Fits the sparse model to a teacher's scores on the training rows.
pub fn distill(
    features: ArrayView2<f64>,
    teacher_scores: Array1<f64>,
    m: usize,
    similarity: &Similarity,
    config: &TrainConfig,
) -> Result<(SparseModel, TrainTrace)> {
    if teacher_scores.len() != features.nrows() {
        return Err(Error::DimensionMismatch { context: "teacher scores", expected: features.nrows(), found: teacher_scores.len() });
    }
    let data = Dataset::new(features.to_owned(), teacher_scores)?;
    fit(&data, m, similarity, config)
}

/// Distillation from a teacher model, scoring the rows with it first.
pub fn distill_from_model(
    features: ArrayView2<f64>,
    teacher: &SparseModel,
    m: usize,
    config: &TrainConfig,
) -> Result<(SparseModel, TrainTrace)> {
    let scores = teacher.predict_batch(features)?;
    distill(features, scores, m, &teacher.similarity().detached(), config)
}
