//! Gradient of the objective with respect to a single prototype and the
//! projected update of that prototype.
//!
//! The total derivative accounts for the fact that `(beta, b)` are
//! themselves functions of the prototypes through the coefficient system.
//! Differentiating `M [beta; b] = [S'; 1'] U y` with respect to `z_j` gives
//!
//! ```text
//! d[beta; b]/dz_j = -M^{-1} (beta_j [S'; 1'] + [V'; 0']) U dS_j/dz_j
//! ```
//!
//! where `V` is zero except for column `j`, which holds the residual
//! `g - y`. The factorization of `M` is shared with the coefficient step.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beta::{self, BetaSolution, BetaSystem};
use crate::error::{Error, Result};
use crate::similarity::{sq_dist, GradMode};
use crate::types::{Dataset, SparseModel, TrainConfig};

/// Coefficient residual (relative to `max(1, |rhs|)`) above which the model
/// coefficients are considered stale for the current prototypes.
const STALE_TOLERANCE: f64 = 1e-6;
const COINCIDENT_DISTANCE: f64 = 1e-12;
const SEPARATION_JITTER: f64 = 1e-6;

/// Gradient of the objective with respect to one prototype, split into its
/// contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ZGradient {
    /// `2 beta_j (g - y)' U dS_j/dz_j`
    pub direct: Array1<f64>,
    /// Contribution through `dbeta/dz_j` and `db/dz_j`. Vanishes (up to
    /// round-off) when the coefficients are exactly optimal.
    pub sensitivity: Array1<f64>,
    /// Decayed separation penalty, zero when disabled.
    pub penalty: Array1<f64>,
}

impl ZGradient {
    /// Sum of all parts.
    pub fn grad(&self) -> Array1<f64> {
        &self.direct + &self.sensitivity + &self.penalty
    }

    /// `dOmega/dz_j` without the penalty.
    pub fn objective_grad(&self) -> Array1<f64> {
        &self.direct + &self.sensitivity
    }
}

/// Decay schedule for the separation penalty: coefficient `t^-power`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decay {
    pub t: u64,
    pub power: f64,
}

impl Decay {
    pub fn coefficient(&self) -> f64 {
        (self.t as f64).powf(-self.power)
    }
}

/// Similarities, coefficient system and its solution for the current
/// prototypes. The trainer keeps one of these alive across iterations and
/// refreshes only the column of the prototype that moved.
#[derive(Clone, Debug)]
pub(crate) struct FitState {
    pub sims: Array2<f64>,
    pub system: BetaSystem,
    pub solution: BetaSolution,
}

impl FitState {
    pub fn new(data: &Dataset, model: &SparseModel, lambda: f64) -> Result<Self> {
        let sims = model.similarity().matrix(data.features(), model.prototypes())?;
        let system = beta::assemble(sims.view(), data.weights(), data.targets(), lambda)?;
        let solution = beta::solve(&system)?;
        Ok(Self { sims, system, solution })
    }

    /// Recomputes column `j` after prototype `j` moved (n evaluations).
    pub fn refresh_column(&mut self, data: &Dataset, model: &SparseModel, j: usize) -> Result<()> {
        let col = model.similarity().column(data.features(), model.prototypes().row(j), j)?;
        self.sims.column_mut(j).assign(&col);
        Ok(())
    }

    /// Re-solves the coefficients, warm-started from the previous solution.
    pub fn resolve(&mut self, data: &Dataset, lambda: f64) -> Result<()> {
        self.system = beta::assemble(self.sims.view(), data.weights(), data.targets(), lambda)?;
        let prev = &self.solution;
        self.solution = beta::solve_warm(&self.system, Some((prev.beta.view(), prev.bias)))?;
        Ok(())
    }

    /// Objective gradient parts `(direct, sensitivity)` for prototype `j`,
    /// evaluated at the model's coefficients.
    pub fn gradient(
        &self,
        data: &Dataset,
        model: &SparseModel,
        j: usize,
        lambda: f64,
        mode: GradMode,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let (n, m) = self.sims.dim();
        let beta = model.beta();
        let bias = model.bias();
        let residual = self.system.residual(beta, bias) / self.system.rhs_norm().max(1.0);
        if residual > STALE_TOLERANCE {
            return Err(Error::StaleCoefficients { residual });
        }

        let d = model.dim();
        let protos = model.prototypes();
        let z = protos.row(j);
        // dS_j/dz_j: row i is ds(x_i, z_j)/dz_j.
        let mut ds = Array2::zeros((n, d));
        for (i, x) in data.features().outer_iter().enumerate() {
            let g = model.similarity().grad_z(x, z, mode).map_err(|e| e.at(i, j))?;
            ds.row_mut(i).assign(&g);
        }

        let g = self.sims.dot(&beta) + bias;
        let r = &g - &data.targets();
        let ur = &r * &data.weights();
        let beta_j = beta[j];

        let direct = ds.t().dot(&ur) * (2.0 * beta_j);

        // B = (beta_j [S'; 1'] + [V'; 0']) U dS, an (m+1) x d matrix.
        let mut uds = ds.clone();
        for (mut row, &u) in uds.outer_iter_mut().zip(data.weights().iter()) {
            row *= u;
        }
        let mut b_mat = Array2::zeros((m + 1, d));
        b_mat.slice_mut(s![..m, ..]).assign(&(self.sims.t().dot(&uds) * beta_j));
        b_mat.row_mut(m).assign(&(uds.sum_axis(Axis(0)) * beta_j));
        {
            let extra = uds.t().dot(&r);
            let mut row = b_mat.row_mut(j);
            row += &extra;
        }

        // sensitivity = 2 w' d[beta; b]/dz = -2 (M^{-1} w)' B, with
        // w = [S' U r + lambda beta; 1' U r].
        let mut w = Array1::zeros(m + 1);
        w.slice_mut(s![..m]).assign(&(self.sims.t().dot(&ur) + &beta * lambda));
        w[m] = ur.sum();
        let v = self.solution.factor.solve(w.view());
        let sensitivity = b_mat.t().dot(&v) * -2.0;

        Ok((direct, sensitivity))
    }
}

/// Total derivative of the objective with respect to prototype `j`.
///
/// The model's coefficients must be the exact minimizers for its current
/// prototypes; otherwise [`Error::StaleCoefficients`] is returned.
pub fn grad_total(
    data: &Dataset,
    model: &SparseModel,
    j: usize,
    lambda: f64,
    mode: GradMode,
    decay: Option<Decay>,
) -> Result<ZGradient> {
    check_index(model, j)?;
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch { context: "gradient data", expected: model.dim(), found: data.dim() });
    }
    let state = FitState::new(data, model, lambda)?;
    let (direct, sensitivity) = state.gradient(data, model, j, lambda, mode)?;
    let penalty = match decay {
        Some(decay) => penalty_grad(model, j, decay, mode)?,
        None => Array1::zeros(model.dim()),
    };
    Ok(ZGradient { direct, sensitivity, penalty })
}

/// `t^-p * sum_{k != j} ds(z_k, z_j)/dz_j`.
///
/// For RBF this points from `z_j` towards the other prototypes; the update
/// subtracts it, pushing `z_j` away.
pub fn penalty_grad(model: &SparseModel, j: usize, decay: Decay, mode: GradMode) -> Result<Array1<f64>> {
    check_index(model, j)?;
    if decay.t == 0 {
        return Err(Error::invalid("penalty decay needs t >= 1"));
    }
    let protos = model.prototypes();
    let z = protos.row(j);
    let mut acc = Array1::zeros(model.dim());
    for (k, other) in protos.outer_iter().enumerate() {
        if k != j {
            acc += &model.similarity().grad_z(other, z, mode)?;
        }
    }
    Ok(acc * decay.coefficient())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Euclidean length of the applied move (after projection).
    pub step_norm: f64,
    /// Step size actually used.
    pub eta: f64,
    /// Whether the prototype was nudged apart from a coincident one.
    pub separated: bool,
}

/// One projected gradient step on prototype `j`. Coefficients are left as
/// they were; callers re-solve them afterwards.
pub fn step(model: &mut SparseModel, j: usize, data: &Dataset, config: &TrainConfig, t: u64) -> Result<StepReport> {
    config.validate()?;
    if t == 0 {
        return Err(Error::invalid("iteration count must be >= 1"));
    }
    let bounds = config.bounds.resolve(data)?;
    let decay = config.penalty_enabled.then_some(Decay { t, power: config.penalty_decay_power });
    let grad = grad_total(data, model, j, config.lambda, config.grad_mode, decay)?;
    apply_step(model, j, &grad, config, t, bounds.as_deref(), data.weights().sum())
}

pub(crate) fn apply_step(
    model: &mut SparseModel,
    j: usize,
    grad: &ZGradient,
    config: &TrainConfig,
    t: u64,
    bounds: Option<&[(f64, f64)]>,
    mass: f64,
) -> Result<StepReport> {
    let old = model.prototypes().row(j).to_owned();
    let objective = grad.objective_grad() / mass;
    let mut eta = config.eta;
    let mut candidate = &old - &(&objective * eta) - &grad.penalty;
    if !candidate.iter().all(|v| v.is_finite()) {
        eta *= 0.5;
        candidate = &old - &(&objective * eta) - &grad.penalty;
        if !candidate.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteUpdate { prototype: j });
        }
    }
    if let Some(bounds) = bounds {
        project(&mut candidate, bounds);
    }
    let separated = separate_if_coincident(model, j, &mut candidate, config.seed, t);
    if separated {
        if let Some(bounds) = bounds {
            project(&mut candidate, bounds);
        }
    }
    let step_norm = sq_dist(candidate.view(), old.view()).sqrt();
    model.prototypes_mut().row_mut(j).assign(&candidate);
    Ok(StepReport { step_norm, eta, separated })
}

pub(crate) fn project(z: &mut Array1<f64>, bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in z.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

// Coincident prototypes get zero RBF repulsion; nudge them apart instead.
fn separate_if_coincident(model: &SparseModel, j: usize, z: &mut Array1<f64>, seed: u64, t: u64) -> bool {
    let coincident = model
        .prototypes()
        .outer_iter()
        .enumerate()
        .any(|(k, other)| k != j && sq_dist(other, z.view()).sqrt() < COINCIDENT_DISTANCE);
    if !coincident {
        return false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).rotate_left(32));
    let dir: Array1<f64> = Array1::from_shape_fn(z.len(), |_| rng.random_range(-1.0..1.0));
    let len = dir.dot(&dir).sqrt().max(f64::MIN_POSITIVE);
    *z += &(dir * (SEPARATION_JITTER / len));
    true
}

fn check_index(model: &SparseModel, j: usize) -> Result<()> {
    if j >= model.num_prototypes() {
        return Err(Error::invalid(format!("prototype index {j} out of range (m = {})", model.num_prototypes())));
    }
    Ok(())
}

/// Re-solves the coefficients of `model` against `data` in place.
pub fn refit_coefficients(model: &mut SparseModel, data: &Dataset, lambda: f64) -> Result<BetaSolution> {
    let state = FitState::new(data, model, lambda)?;
    model.set_coefficients(state.solution.beta.clone(), state.solution.bias);
    Ok(state.solution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::Similarity;
    use ndarray::array;

    fn two_proto_model(a: Array1<f64>, b: Array1<f64>) -> SparseModel {
        let mut protos = Array2::zeros((2, a.len()));
        protos.row_mut(0).assign(&a);
        protos.row_mut(1).assign(&b);
        SparseModel::new(protos, array![1.0, 1.0], 0.0, Similarity::rbf(1.0).unwrap()).unwrap()
    }

    #[test]
    fn penalty_zero_for_single_prototype() {
        let m = SparseModel::new(array![[1.0, 2.0]], array![1.0], 0.0, Similarity::rbf(1.0).unwrap()).unwrap();
        let p = penalty_grad(&m, 0, Decay { t: 1, power: 2.0 }, GradMode::Analytic).unwrap();
        assert_eq!(p, array![0.0, 0.0]);
    }

    #[test]
    fn penalty_zero_for_identical_prototypes() {
        let m = two_proto_model(array![0.5, 0.5], array![0.5, 0.5]);
        let p = penalty_grad(&m, 0, Decay { t: 1, power: 2.0 }, GradMode::Analytic).unwrap();
        assert!(p.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn penalty_at_unit_distance() {
        let m = two_proto_model(array![0.0, 0.0], array![1.0, 0.0]);
        let p = penalty_grad(&m, 0, Decay { t: 1, power: 2.0 }, GradMode::Analytic).unwrap();
        // 2 gamma exp(-1) (z_1 - z_0): magnitude 2/e, pointing at the other
        // prototype, so the update (which subtracts it) moves away.
        assert!((p[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn penalty_decays_with_t_squared() {
        let m = two_proto_model(array![0.0, 0.3], array![0.4, -0.2]);
        let p1 = penalty_grad(&m, 1, Decay { t: 1, power: 2.0 }, GradMode::Analytic).unwrap();
        for t in [2u64, 3, 7, 50] {
            let pt = penalty_grad(&m, 1, Decay { t, power: 2.0 }, GradMode::Analytic).unwrap();
            let n1 = p1.dot(&p1).sqrt();
            let nt = pt.dot(&pt).sqrt();
            assert!((nt - n1 / (t * t) as f64).abs() <= 1e-15 * n1);
        }
    }

    #[test]
    fn stale_coefficients_detected() {
        let data = Dataset::new(array![[0.0], [1.0], [2.0]], array![1.0, 0.0, 1.0]).unwrap();
        let model = SparseModel::new(array![[0.5]], array![3.0], 1.0, Similarity::rbf(1.0).unwrap()).unwrap();
        let err = grad_total(&data, &model, 0, 0.0, GradMode::Analytic, None).unwrap_err();
        assert!(matches!(err, Error::StaleCoefficients { .. }));
    }

    #[test]
    fn perfect_fit_leaves_only_penalty() {
        let protos = array![[0.0, 0.0], [1.5, 0.5]];
        let sim = Similarity::rbf(0.5).unwrap();
        let teacher = SparseModel::new(protos.clone(), array![1.0, -0.5], 0.2, sim.clone()).unwrap();
        let x = array![[0.0, 0.0], [1.5, 0.5], [0.3, -0.2], [1.0, 1.0], [-0.5, 0.7]];
        let y = teacher.predict_batch(x.view()).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let mut model = SparseModel::new(protos, array![0.0, 0.0], 0.0, sim).unwrap();
        refit_coefficients(&mut model, &data, 0.0).unwrap();

        let g = grad_total(&data, &model, 1, 0.0, GradMode::Analytic, None).unwrap();
        assert!(g.grad().iter().all(|v| v.abs() < 1e-8), "{:?}", g);

        let decay = Decay { t: 1, power: 2.0 };
        let g = grad_total(&data, &model, 1, 0.0, GradMode::Analytic, Some(decay)).unwrap();
        let p = penalty_grad(&model, 1, decay, GradMode::Analytic).unwrap();
        for k in 0..2 {
            assert!((g.grad()[k] - p[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_leaves_prototype_unchanged() {
        let mut model = SparseModel::new(array![[0.3, 0.4]], array![1.0], 0.0, Similarity::rbf(1.0).unwrap()).unwrap();
        let zero = ZGradient { direct: array![0.0, 0.0], sensitivity: array![0.0, 0.0], penalty: array![0.0, 0.0] };
        let r = apply_step(&mut model, 0, &zero, &TrainConfig::default(), 1, None, 1.0).unwrap();
        assert_eq!(r.step_norm, 0.0);
        assert_eq!(model.prototypes().row(0), array![0.3, 0.4]);
    }

    #[test]
    fn step_projects_onto_box() {
        let mut model = SparseModel::new(array![[0.0, 0.0]], array![1.0], 0.0, Similarity::rbf(1.0).unwrap()).unwrap();
        let g = ZGradient { direct: array![-10.0, 10.0], sensitivity: array![0.0, 0.0], penalty: array![0.0, 0.0] };
        let bounds = [(-1.0, 1.0), (-0.5, 0.5)];
        apply_step(&mut model, 0, &g, &TrainConfig::default(), 1, Some(&bounds), 1.0).unwrap();
        assert_eq!(model.prototypes().row(0), array![1.0, -0.5]);
    }

    #[test]
    fn nonfinite_update_rejected() {
        let mut model = SparseModel::new(array![[0.0]], array![1.0], 0.0, Similarity::rbf(1.0).unwrap()).unwrap();
        let g = ZGradient { direct: array![f64::INFINITY], sensitivity: array![0.0], penalty: array![0.0] };
        let err = apply_step(&mut model, 0, &g, &TrainConfig::default(), 1, None, 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteUpdate { prototype: 0 }));
        assert_eq!(model.prototypes()[[0, 0]], 0.0);
    }

    #[test]
    fn penalty_repels_in_update() {
        let mut model = two_proto_model(array![0.0, 0.0], array![1.0, 0.0]);
        let penalty = penalty_grad(&model, 0, Decay { t: 1, power: 2.0 }, GradMode::Analytic).unwrap();
        let g = ZGradient { direct: array![0.0, 0.0], sensitivity: array![0.0, 0.0], penalty };
        apply_step(&mut model, 0, &g, &TrainConfig::default(), 1, None, 1.0).unwrap();
        assert!(model.prototypes()[[0, 0]] < 0.0);
        assert!(sq_dist(model.prototypes().row(0), model.prototypes().row(1)) > 1.0);
    }

    #[test]
    fn step_is_divided_by_total_weight() {
        let g = ZGradient { direct: array![4.0], sensitivity: array![2.0], penalty: array![0.0] };
        let cfg = TrainConfig { eta: 0.5, ..Default::default() };
        for mass in [1.0, 6.0, 25.0] {
            let mut model = SparseModel::new(array![[0.0]], array![1.0], 0.0, Similarity::rbf(1.0).unwrap()).unwrap();
            let r = apply_step(&mut model, 0, &g, &cfg, 1, None, mass).unwrap();
            assert!((r.step_norm - 3.0 / mass).abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_prototypes_are_separated() {
        let mut model = two_proto_model(array![1.0, 1.0], array![0.0, 0.0]);
        // Move prototype 1 exactly onto prototype 0.
        let g = ZGradient { direct: array![-2.0, -2.0], sensitivity: array![0.0, 0.0], penalty: array![0.0, 0.0] };
        let r = apply_step(&mut model, 1, &g, &TrainConfig::default(), 3, None, 1.0).unwrap();
        assert!(r.separated);
        let d = sq_dist(model.prototypes().row(0), model.prototypes().row(1)).sqrt();
        assert!((d - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn step_moves_only_one_row() {
        let x = array![[0.0, 0.0], [0.2, 0.1], [2.0, 2.0], [2.1, 1.8], [1.0, 0.0]];
        let data = Dataset::new(x, array![1.0, 1.0, -1.0, -1.0, 0.0]).unwrap();
        let mut model = SparseModel::new(array![[0.5, 0.5], [1.5, 1.5], [1.0, 0.2]], Array1::zeros(3), 0.0, Similarity::rbf(0.5).unwrap()).unwrap();
        refit_coefficients(&mut model, &data, 1e-3).unwrap();
        let before = model.prototypes().to_owned();
        let cfg = TrainConfig { lambda: 1e-3, ..Default::default() };
        step(&mut model, 1, &data, &cfg, 1).unwrap();
        let after = model.prototypes();
        assert_eq!(after.row(0), before.row(0));
        assert_eq!(after.row(2), before.row(2));
        assert_ne!(after.row(1), before.row(1));
    }
}
