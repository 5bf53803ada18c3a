//! Comparison methods: prototype selection followed by a coefficient solve,
//! kernel ridge over every training row, and L1-regularized regression in
//! the similarity space.
//!
//! Selection criteria work on Euclidean distances in input space.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta;
use crate::error::{Error, Result};
use crate::similarity::{sq_dist, Similarity};
use crate::types::{Dataset, ModelMetadata, SparseModel};

const KMEANS_ITERATIONS: usize = 50;
const KMEANS_RESTARTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Random,
    Border,
    Spanning,
    KMedians,
}

impl SelectionMethod {
    pub fn select(self, data: &Dataset, m: usize, seed: u64) -> Result<Vec<usize>> {
        match self {
            SelectionMethod::Random => ps_random(data, m, seed),
            SelectionMethod::Border => ps_border(data, m),
            SelectionMethod::Spanning => ps_spanning(data, m),
            SelectionMethod::KMedians => ps_kmedians(data, m, seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Random => "ps-r",
            SelectionMethod::Border => "ps-b",
            SelectionMethod::Spanning => "ps-s",
            SelectionMethod::KMedians => "ps-km",
        }
    }
}

fn check_count(data: &Dataset, m: usize) -> Result<()> {
    if m == 0 || m > data.len() {
        return Err(Error::invalid(format!("cannot select {m} prototypes from {} samples", data.len())));
    }
    Ok(())
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Index of the member of `members` minimizing the summed Euclidean distance
/// to all other members. Ties go to the earliest member.
pub fn set_median(rows: ArrayView2<f64>, members: &[usize]) -> usize {
    let mut best = (f64::INFINITY, members[0]);
    for &i in members {
        let total: f64 = members.iter().map(|&k| dist(rows.row(i), rows.row(k))).sum();
        if total < best.0 {
            best = (total, i);
        }
    }
    best.1
}

/// Uniform sample without replacement.
pub fn ps_random(data: &Dataset, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_count(data, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, data.len(), m).into_vec())
}

/// Samples farthest from the training-set median, in decreasing order of
/// distance (ties by index).
pub fn ps_border(data: &Dataset, m: usize) -> Result<Vec<usize>> {
    check_count(data, m)?;
    let x = data.features();
    let all: Vec<usize> = (0..data.len()).collect();
    let median = set_median(x, &all);
    let d: Vec<f64> = (0..data.len()).map(|i| dist(x.row(i), x.row(median))).collect();
    let mut order = all;
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(order)
}

/// Set median first, then farthest-point traversal.
pub fn ps_spanning(data: &Dataset, m: usize) -> Result<Vec<usize>> {
    check_count(data, m)?;
    let x = data.features();
    let n = data.len();
    let all: Vec<usize> = (0..n).collect();
    let first = set_median(x, &all);
    let mut selected = vec![first];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(x.row(i), x.row(first))).collect();
    while selected.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            if best.is_none_or(|(d, _)| nearest[i] > d) {
                best = Some((nearest[i], i));
            }
        }
        let (_, next) = best.expect("fewer unselected samples than requested");
        chosen[next] = true;
        selected.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(x.row(i), x.row(next)));
        }
    }
    Ok(selected)
}

/// Result of a k-means run.
#[derive(Clone, Debug)]
pub struct Clustering {
    pub centers: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

/// Seeded k-means with k-means++ seeding, keeping the best of several
/// restarts. A cluster that empties out is re-seeded with the point
/// farthest from its current center.
pub fn kmeans(rows: ArrayView2<f64>, k: usize, seed: u64) -> Result<Clustering> {
    let n = rows.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = kmeans_once(rows, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn kmeans_once(rows: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Clustering {
    let n = rows.nrows();
    let mut center_idx = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), rows.row(center_idx[0]))).collect();
    while center_idx.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a center
            Err(_) => (0..n).find(|i| !center_idx.contains(i)).unwrap(),
        };
        center_idx.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(rows.row(i), rows.row(next)));
        }
    }
    let mut centers = rows.select(Axis(0), &center_idx);
    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (i, x) in rows.outer_iter().enumerate() {
            let c = nearest_center(x, centers.view());
            if c != assignment[i] {
                assignment[i] = c;
                changed = true;
            }
        }
        fix_empty_clusters(rows, centers.view(), &mut assignment, k);
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, x) in rows.outer_iter().enumerate() {
            let mut row = sums.row_mut(assignment[i]);
            row += &x;
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
        }
        if !changed {
            break;
        }
    }
    let inertia = rows
        .outer_iter()
        .enumerate()
        .map(|(i, x)| sq_dist(x, centers.row(assignment[i])))
        .sum();
    Clustering { centers, assignment, inertia }
}

fn nearest_center(x: ArrayView1<f64>, centers: ArrayView2<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, center) in centers.outer_iter().enumerate() {
        let d = sq_dist(x, center);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn fix_empty_clusters(rows: ArrayView2<f64>, centers: ArrayView2<f64>, assignment: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point from its own center, taken from a cluster that can spare it
        let donor = (0..rows.nrows())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(rows.row(a), centers.row(assignment[a]));
                let db = sq_dist(rows.row(b), centers.row(assignment[b]));
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n guarantees a donor");
        assignment[donor] = empty;
    }
}

/// k-means with `k = m`, then the set median of each cluster.
pub fn ps_kmedians(data: &Dataset, m: usize, seed: u64) -> Result<Vec<usize>> {
    check_count(data, m)?;
    let x = data.features();
    let clustering = kmeans(x, m, seed)?;
    let mut out = Vec::with_capacity(m);
    for c in 0..m {
        let members: Vec<usize> = (0..data.len()).filter(|&i| clustering.assignment[i] == c).collect();
        out.push(set_median(x, &members));
    }
    Ok(out)
}

/// Fixes the given training rows as prototypes and solves for coefficients.
pub fn fit_on_rows(data: &Dataset, indices: &[usize], lambda: f64, similarity: &Similarity) -> Result<SparseModel> {
    if indices.is_empty() {
        return Err(Error::invalid("no prototypes selected"));
    }
    let protos = data.features().select(Axis(0), indices);
    let sims = similarity.matrix(data.features(), protos.view())?;
    let system = beta::assemble(sims.view(), data.weights(), data.targets(), lambda)?;
    let sol = beta::solve(&system)?;
    let obj = crate::types::objective_from_matrix(sims.view(), sol.beta.view(), sol.bias, data, lambda);
    let model = SparseModel::new(protos, sol.beta, sol.bias, similarity.clone())?;
    Ok(model.with_metadata(ModelMetadata {
        n_train: data.len(),
        lambda,
        seed: 0,
        iterations: 0,
        objective: obj.total,
    }))
}

/// Ridge regression in the similarity space over all training rows.
pub fn kernel_ridge_full(data: &Dataset, lambda: f64, similarity: &Similarity) -> Result<SparseModel> {
    let all: Vec<usize> = (0..data.len()).collect();
    fit_on_rows(data, &all, lambda, similarity)
}

/// Selection followed by a coefficient solve; prototypes stay frozen.
pub fn baseline_pipeline(
    data: &Dataset,
    method: SelectionMethod,
    m: usize,
    lambda: f64,
    similarity: &Similarity,
    seed: u64,
) -> Result<SparseModel> {
    let idx = method.select(data, m, seed)?;
    let mut model = fit_on_rows(data, &idx, lambda, similarity)?;
    model.metadata.seed = seed;
    Ok(model)
}

/// Coordinate-descent solution of
/// `min sum_i u_i (y_i - s_i' beta - b)^2 + lambda1 |beta|_1`.
#[derive(Clone, Debug)]
pub struct LassoSolution {
    pub beta: Array1<f64>,
    pub bias: f64,
    pub sweeps: usize,
    /// Largest violation of the subgradient optimality conditions.
    pub kkt_residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { max_sweeps: 10_000, tolerance: 1e-6 }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Smallest `lambda1` for which all coefficients are zero.
pub fn lasso_lambda_max(design: ArrayView2<f64>, weights: ArrayView1<f64>, targets: ArrayView1<f64>) -> f64 {
    let mean = weights.dot(&targets) / weights.sum();
    let ur = (&targets - mean) * &weights;
    design.t().dot(&ur).iter().fold(0.0f64, |a, v| a.max(2.0 * v.abs()))
}

/// Largest violation of the optimality conditions at `(beta, b)`.
pub fn lasso_kkt_residual(
    design: ArrayView2<f64>,
    weights: ArrayView1<f64>,
    targets: ArrayView1<f64>,
    lambda1: f64,
    beta: ArrayView1<f64>,
    bias: f64,
) -> f64 {
    let r = &targets - &design.dot(&beta) - bias;
    let ur = &r * &weights;
    let corr = design.t().dot(&ur) * 2.0;
    let mut worst = (2.0 * ur.sum()).abs();
    for (c, b) in corr.iter().zip(beta.iter()) {
        let v = if *b == 0.0 { (c.abs() - lambda1).max(0.0) } else { (c - lambda1 * b.signum()).abs() };
        worst = worst.max(v);
    }
    worst
}

pub fn lasso_cd(
    design: ArrayView2<f64>,
    weights: ArrayView1<f64>,
    targets: ArrayView1<f64>,
    lambda1: f64,
    options: LassoOptions,
) -> Result<LassoSolution> {
    let start = Array1::zeros(design.ncols());
    lasso_cd_from(design, weights, targets, lambda1, options, start)
}

/// Coordinate descent started from `beta` (warm start along a path).
pub fn lasso_cd_from(
    design: ArrayView2<f64>,
    weights: ArrayView1<f64>,
    targets: ArrayView1<f64>,
    lambda1: f64,
    options: LassoOptions,
    mut beta: Array1<f64>,
) -> Result<LassoSolution> {
    let (n, p) = design.dim();
    if weights.len() != n || targets.len() != n {
        return Err(Error::DimensionMismatch { context: "lasso design", expected: n, found: targets.len() });
    }
    if beta.len() != p {
        return Err(Error::DimensionMismatch { context: "lasso start", expected: p, found: beta.len() });
    }
    if !(lambda1 >= 0.0) {
        return Err(Error::invalid(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    let wsum = weights.sum();
    let fitted = design.dot(&beta);
    let mut bias = weights.dot(&(&targets - &fitted)) / wsum;
    let mut r = &targets - &fitted - bias;
    let curvature: Vec<f64> = design
        .axis_iter(Axis(1))
        .map(|col| 2.0 * (&col * &col).dot(&weights))
        .collect();
    let mut residual = f64::INFINITY;
    for sweep in 1..=options.max_sweeps {
        for j in 0..p {
            if curvature[j] == 0.0 {
                continue;
            }
            let col = design.column(j);
            let old = beta[j];
            let rho = 2.0 * (&col * &weights).dot(&r) + curvature[j] * old;
            let new = soft_threshold(rho, lambda1) / curvature[j];
            if new != old {
                r.scaled_add(old - new, &col);
                beta[j] = new;
            }
        }
        let shift = weights.dot(&r) / wsum;
        bias += shift;
        r -= shift;
        residual = lasso_kkt_residual(design, weights, targets, lambda1, beta.view(), bias);
        if residual <= options.tolerance {
            return Ok(LassoSolution { beta, bias, sweeps: sweep, kkt_residual: residual });
        }
    }
    Err(Error::NotConverged { sweeps: options.max_sweeps, residual })
}

/// LASSO over candidate prototypes; the model keeps only the candidates
/// with nonzero coefficients. If none survive, the first candidate is kept
/// with a zero coefficient.
pub fn lasso_with_candidates(
    data: &Dataset,
    candidates: ArrayView2<f64>,
    lambda1: f64,
    similarity: &Similarity,
    options: LassoOptions,
) -> Result<SparseModel> {
    let sims = similarity.matrix(data.features(), candidates)?;
    let sol = lasso_cd(sims.view(), data.weights(), data.targets(), lambda1, options)?;
    model_from_solution(data, candidates, &sol, lambda1, similarity)
}

fn model_from_solution(
    data: &Dataset,
    candidates: ArrayView2<f64>,
    sol: &LassoSolution,
    lambda1: f64,
    similarity: &Similarity,
) -> Result<SparseModel> {
    let mut keep: Vec<usize> = (0..sol.beta.len()).filter(|&j| sol.beta[j] != 0.0).collect();
    if keep.is_empty() {
        // Constant model; keep one prototype with a zero coefficient.
        keep.push(0);
    }
    let protos = candidates.select(Axis(0), &keep);
    let beta = sol.beta.select(Axis(0), &keep);
    let model = SparseModel::new(protos, beta, sol.bias, similarity.clone())?;
    Ok(model.with_metadata(ModelMetadata {
        n_train: data.len(),
        lambda: lambda1,
        seed: 0,
        iterations: sol.sweeps,
        objective: 0.0,
    }))
}

/// Geometric ratio between successive penalties on the size path.
const PATH_RATIO: f64 = 0.95;
/// The path stops at this fraction of `lambda_max`.
const PATH_FLOOR: f64 = 1e-4;
const PATH_BISECTIONS: usize = 30;

fn nnz(beta: &Array1<f64>) -> usize {
    beta.iter().filter(|b| **b != 0.0).count()
}

/// LASSO over all training rows with `lambda1` tuned so that `m`
/// coefficients are nonzero.
///
/// Walks a warm-started path down from `lambda_max`. When a step jumps past
/// `m`, the bracket is bisected in log space. If no penalty yields exactly
/// `m`, the solution closest to `m` (preferring fewer) is returned. Returns
/// the model and the penalty used.
pub fn lasso_for_size(data: &Dataset, m: usize, similarity: &Similarity) -> Result<(SparseModel, f64)> {
    check_count(data, m)?;
    let design = similarity.matrix(data.features(), data.features())?;
    let (w, y) = (data.weights(), data.targets());
    let options = LassoOptions::default();
    let lambda_max = lasso_lambda_max(design.view(), w, y);
    let rank = |k: usize| (k.abs_diff(m), k > m);

    let mut best: Option<(LassoSolution, f64)> = None;
    let mut keep_best = |sol: &LassoSolution, lambda1: f64| {
        if best.as_ref().is_none_or(|(b, _)| rank(nnz(&sol.beta)) < rank(nnz(&b.beta))) {
            best = Some((sol.clone(), lambda1));
        }
    };

    let mut prev = lasso_cd(design.view(), w, y, lambda_max, options)?;
    let mut prev_lambda = lambda_max;
    keep_best(&prev, prev_lambda);
    let mut lambda1 = lambda_max * PATH_RATIO;
    while lambda1 >= lambda_max * PATH_FLOOR && nnz(&prev.beta) < m {
        let sol = match lasso_cd_from(design.view(), w, y, lambda1, options, prev.beta.clone()) {
            Ok(sol) => sol,
            Err(Error::NotConverged { .. }) => break,
            Err(e) => return Err(e),
        };
        keep_best(&sol, lambda1);
        let k = nnz(&sol.beta);
        if k > m {
            // Bisect between the sparse side (prev) and this penalty.
            let (mut hi, mut lo) = (prev_lambda.ln(), lambda1.ln());
            for _ in 0..PATH_BISECTIONS {
                let mid = 0.5 * (hi + lo);
                let sol = match lasso_cd_from(design.view(), w, y, mid.exp(), options, prev.beta.clone()) {
                    Ok(sol) => sol,
                    Err(Error::NotConverged { .. }) => break,
                    Err(e) => return Err(e),
                };
                keep_best(&sol, mid.exp());
                match nnz(&sol.beta).cmp(&m) {
                    std::cmp::Ordering::Equal => break,
                    std::cmp::Ordering::Less => hi = mid,
                    std::cmp::Ordering::Greater => lo = mid,
                }
            }
            break;
        }
        prev = sol;
        prev_lambda = lambda1;
        lambda1 *= PATH_RATIO;
    }
    let (sol, lambda1) = best.expect("lambda_max solution recorded");
    let model = model_from_solution(data, data.features(), &sol, lambda1, similarity)?;
    Ok((model, lambda1))
}

/// LASSO with every training row as a candidate prototype.
pub fn lasso_similarity(data: &Dataset, lambda1: f64, similarity: &Similarity) -> Result<SparseModel> {
    lasso_with_candidates(data, data.features(), lambda1, similarity, LassoOptions::default())
}
