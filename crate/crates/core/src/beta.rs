//! Closed-form coefficient step: for fixed prototypes, `(beta, b)` solve the
//! `(m+1) x (m+1)` normal equations
//!
//! ```text
//! [ S'US + lambda I   S'U1 ] [beta]   [S']
//! [ 1'US              1'U1 ] [ b  ] = [1'] U y
//! ```
//!
//! The matrix is symmetric positive semi-definite, so it is factored with
//! Cholesky and the solution is polished by iterative refinement. A warm
//! start only seeds the refinement.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Pivot ratio above which the first factorization attempt is considered
/// numerically singular.
const MAX_CONDITION: f64 = 1e13;
const JITTER_SCALE: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-9;
const MAX_REFINEMENT: usize = 50;

#[derive(Clone, Debug)]
pub struct BetaSystem {
    matrix: Array2<f64>,
    rhs: Array1<f64>,
}

impl BetaSystem {
    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn rhs(&self) -> ArrayView1<'_, f64> {
        self.rhs.view()
    }

    /// Number of coefficients, excluding the bias.
    pub fn num_coefficients(&self) -> usize {
        self.rhs.len() - 1
    }

    /// `|M x - rhs|_2` for `x = [beta; b]`.
    pub fn residual(&self, beta: ArrayView1<f64>, bias: f64) -> f64 {
        let m = beta.len();
        let mut x = Array1::zeros(m + 1);
        x.slice_mut(s![..m]).assign(&beta);
        x[m] = bias;
        norm(&(self.matrix.dot(&x) - &self.rhs))
    }

    pub fn rhs_norm(&self) -> f64 {
        norm(&self.rhs)
    }
}

/// Builds the normal-equation system from the `n x m` similarity matrix.
pub fn assemble(
    sims: ArrayView2<f64>,
    weights: ArrayView1<f64>,
    targets: ArrayView1<f64>,
    lambda: f64,
) -> Result<BetaSystem> {
    let (n, m) = sims.dim();
    if weights.len() != n || targets.len() != n {
        return Err(Error::DimensionMismatch {
            context: "coefficient system",
            expected: n,
            found: if weights.len() != n { weights.len() } else { targets.len() },
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    // Rows of [S 1] scaled by u.
    let mut aug = Array2::ones((n, m + 1));
    aug.slice_mut(s![.., ..m]).assign(&sims);
    let mut weighted = aug.clone();
    for (mut row, &u) in weighted.outer_iter_mut().zip(weights.iter()) {
        row *= u;
    }
    let mut matrix = aug.t().dot(&weighted);
    // Exact symmetry regardless of summation order.
    for i in 0..=m {
        for j in 0..i {
            let v = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
            matrix[[i, j]] = v;
            matrix[[j, i]] = v;
        }
    }
    for k in 0..m {
        matrix[[k, k]] += lambda;
    }
    let rhs = weighted.t().dot(&targets);
    Ok(BetaSystem { matrix, rhs })
}

/// Lower-triangular Cholesky factor of `M + jitter I`.
#[derive(Clone, Debug)]
pub struct Factorization {
    lower: Array2<f64>,
    jitter: f64,
}

impl Factorization {
    fn cholesky(matrix: &Array2<f64>, jitter: f64, check_condition: bool) -> Option<Self> {
        let k = matrix.nrows();
        let mut lower = Array2::<f64>::zeros((k, k));
        for i in 0..k {
            for j in 0..=i {
                let mut sum = matrix[[i, j]];
                if i == j {
                    sum += jitter;
                }
                for p in 0..j {
                    sum -= lower[[i, p]] * lower[[j, p]];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    lower[[i, i]] = sum.sqrt();
                } else {
                    lower[[i, j]] = sum / lower[[j, j]];
                }
            }
        }
        if check_condition {
            let (lo, hi) = (0..k).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
                let d = lower[[i, i]];
                (lo.min(d), hi.max(d))
            });
            if (hi / lo).powi(2) > MAX_CONDITION {
                return None;
            }
        }
        Some(Self { lower, jitter })
    }

    /// Factors `M`, retrying once with diagonal jitter when `M` is
    /// numerically singular.
    pub fn new(system: &BetaSystem) -> Result<Self> {
        if let Some(f) = Self::cholesky(&system.matrix, 0.0, true) {
            return Ok(f);
        }
        let k = system.matrix.nrows() as f64;
        let trace: f64 = system.matrix.diag().sum();
        if !(trace > 0.0) {
            return Err(Error::SingularSystem);
        }
        let jitter = JITTER_SCALE * trace / k;
        Self::cholesky(&system.matrix, jitter, false).ok_or(Error::SingularSystem)
    }

    /// Diagonal jitter added during factorization (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn size(&self) -> usize {
        self.lower.nrows()
    }

    /// Applies `(M + jitter I)^{-1}` to `b`.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let k = self.lower.nrows();
        let mut y = b.to_owned();
        for i in 0..k {
            let mut sum = y[i];
            for p in 0..i {
                sum -= self.lower[[i, p]] * y[p];
            }
            y[i] = sum / self.lower[[i, i]];
        }
        for i in (0..k).rev() {
            let mut sum = y[i];
            for p in i + 1..k {
                sum -= self.lower[[p, i]] * y[p];
            }
            y[i] = sum / self.lower[[i, i]];
        }
        y
    }
}

/// Solved coefficients plus the factorization that produced them, which the
/// prototype gradient reuses.
#[derive(Clone, Debug)]
pub struct BetaSolution {
    pub beta: Array1<f64>,
    pub bias: f64,
    pub factor: Factorization,
    /// Refinement sweeps used.
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve(system: &BetaSystem) -> Result<BetaSolution> {
    solve_warm(system, None)
}

/// Solves the system, starting the refinement from `warm` when given.
pub fn solve_warm(system: &BetaSystem, warm: Option<(ArrayView1<f64>, f64)>) -> Result<BetaSolution> {
    let factor = Factorization::new(system)?;
    solve_with_factor(system, factor, warm)
}

pub(crate) fn solve_with_factor(
    system: &BetaSystem,
    factor: Factorization,
    warm: Option<(ArrayView1<f64>, f64)>,
) -> Result<BetaSolution> {
    let m = system.num_coefficients();
    let mut x = Array1::zeros(m + 1);
    if let Some((beta, bias)) = warm {
        if beta.len() != m {
            return Err(Error::DimensionMismatch { context: "warm start", expected: m, found: beta.len() });
        }
        if beta.iter().all(|v| v.is_finite()) && bias.is_finite() {
            x.slice_mut(s![..m]).assign(&beta);
            x[m] = bias;
        }
    }
    let tol = RESIDUAL_TOL * norm(&system.rhs);
    let mut residual_vec = &system.rhs - &system.matrix.dot(&x);
    let mut residual = norm(&residual_vec);
    let mut iterations = 0;
    while residual > tol && iterations < MAX_REFINEMENT {
        let dx = factor.solve(residual_vec.view());
        let candidate = &x + &dx;
        let cand_vec = &system.rhs - &system.matrix.dot(&candidate);
        let cand_res = norm(&cand_vec);
        iterations += 1;
        if !(cand_res < residual) && iterations > 1 {
            break;
        }
        x = candidate;
        residual_vec = cand_vec;
        residual = cand_res;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let bias = x[m];
    let beta = x.slice(s![..m]).to_owned();
    Ok(BetaSolution { beta, bias, factor, iterations, residual })
}

pub(crate) fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_assembled_two_by_two() {
        let s = array![[1.0], [0.0]];
        let sys = assemble(s.view(), array![1.0, 1.0].view(), array![1.0, 0.0].view(), 0.0).unwrap();
        assert_eq!(sys.matrix(), array![[1.0, 1.0], [1.0, 2.0]]);
        assert_eq!(sys.rhs(), array![1.0, 1.0]);
        let sol = solve(&sys).unwrap();
        assert!((sol.beta[0] - 1.0).abs() < 1e-14);
        assert!(sol.bias.abs() < 1e-14);
    }

    #[test]
    fn lambda_only_touches_leading_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.0..1.0));
        let u = Array1::from_shape_fn(6, |_| rng.random_range(0.5..2.0));
        let y = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
        let a = assemble(s.view(), u.view(), y.view(), 0.0).unwrap();
        let b = assemble(s.view(), u.view(), y.view(), 0.25).unwrap();
        let diff = &b.matrix - &a.matrix;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j && i < 3 { 0.25 } else { 0.0 };
                assert_eq!(diff[[i, j]], expect);
            }
        }
        assert_eq!(a.rhs, b.rhs);
    }

    #[test]
    fn constant_targets_give_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Array2::from_shape_fn((10, 3), |_| rng.random_range(0.0..1.0));
        let y = Array1::from_elem(10, 2.5);
        let sys = assemble(s.view(), Array1::ones(10).view(), y.view(), 0.1).unwrap();
        let sol = solve(&sys).unwrap();
        assert!(sol.beta.iter().all(|b| b.abs() < 1e-10), "{}", sol.beta);
        assert!((sol.bias - 2.5).abs() < 1e-10);
    }

    #[test]
    fn duplicate_columns_are_jittered() {
        let s = array![[0.5, 0.5], [0.2, 0.2], [0.9, 0.9]];
        let y = array![1.0, 0.0, 2.0];
        let sys = assemble(s.view(), Array1::ones(3).view(), y.view(), 0.0).unwrap();
        let sol = solve(&sys).unwrap();
        assert!(sol.factor.jitter() > 0.0);
        // Still a minimizer: the two coefficients act only through their sum.
        let g = s.dot(&sol.beta) + sol.bias;
        let direct = {
            // least squares on a single column
            let col = array![0.5, 0.2, 0.9];
            let sys1 = assemble(col.view().insert_axis(ndarray::Axis(1)), Array1::ones(3).view(), y.view(), 0.0).unwrap();
            let s1 = solve(&sys1).unwrap();
            col.mapv(|v| v * s1.beta[0]) + s1.bias
        };
        for i in 0..3 {
            assert!((g[i] - direct[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_matrix_is_singular() {
        let sys = BetaSystem { matrix: Array2::zeros((2, 2)), rhs: Array1::zeros(2) };
        assert!(matches!(Factorization::new(&sys), Err(Error::SingularSystem)));
    }

    #[test]
    fn solution_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Array2::from_shape_fn((20, 4), |_| rng.random_range(0.0..1.0));
        let u = Array1::from_shape_fn(20, |_| rng.random_range(0.5..2.0));
        let y = Array1::from_shape_fn(20, |_| rng.random_range(-1.0..1.0));
        let lambda = 0.05;
        let sys = assemble(s.view(), u.view(), y.view(), lambda).unwrap();
        let sol = solve(&sys).unwrap();
        let obj = |beta: &Array1<f64>, b: f64| {
            let r = s.dot(beta) + b - &y;
            (&r * &u).dot(&r) + lambda * beta.dot(beta)
        };
        let best = obj(&sol.beta, sol.bias);
        for _ in 0..1000 {
            let db = Array1::from_shape_fn(4, |_| rng.random_range(-0.5..0.5));
            let b0 = rng.random_range(-0.5..0.5);
            assert!(best <= obj(&(&sol.beta + &db), sol.bias + b0));
        }
    }

    #[test]
    fn warm_and_cold_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Array2::from_shape_fn((15, 5), |_| rng.random_range(0.0..1.0));
        let y = Array1::from_shape_fn(15, |_| rng.random_range(-1.0..1.0));
        let sys = assemble(s.view(), Array1::ones(15).view(), y.view(), 1e-3).unwrap();
        let cold = solve(&sys).unwrap();
        let guess = cold.beta.mapv(|v| v + 0.3);
        let warm = solve_warm(&sys, Some((guess.view(), cold.bias - 0.2))).unwrap();
        for k in 0..5 {
            assert!((cold.beta[k] - warm.beta[k]).abs() <= 1e-8 * cold.beta[k].abs().max(1.0));
        }
        assert!((cold.bias - warm.bias).abs() <= 1e-8 * cold.bias.abs().max(1.0));
        // A converged warm start needs no further refinement.
        let again = solve_warm(&sys, Some((cold.beta.view(), cold.bias))).unwrap();
        assert!(again.iterations <= 1);
    }
}
