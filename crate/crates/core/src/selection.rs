//! Choosing the number of prototypes by incremental cross-validation.
//!
//! Each fold trains at the largest grid size, then walks down the grid:
//! drop the prototypes with the smallest `|beta|`, re-solve, and retrain
//! from the surviving prototypes. The chosen size minimizes
//! `L(m) = loss(m) + rho * m` over the fold-averaged validation losses.

use std::collections::BTreeMap;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LossKind;
use crate::similarity::Similarity;
use crate::trainer::{self, TrainTrace};
use crate::types::{Dataset, SparseModel, TrainConfig};
use crate::zstep::refit_coefficients;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Strictly descending prototype counts.
    pub grid: Vec<usize>,
    pub rho: f64,
    pub loss: LossKind,
    pub folds: usize,
}

impl GridConfig {
    /// Default grid and trade-off for `n` samples: sizes start at
    /// `min(20, n/2)`, halve down to 5, then step by one to 2.
    pub fn for_samples(n: usize, loss: LossKind) -> Self {
        Self { grid: default_grid(n), rho: default_rho(loss), loss, folds: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("empty prototype grid"));
        }
        if self.grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::invalid(format!("grid must be strictly descending: {:?}", self.grid)));
        }
        if *self.grid.last().unwrap() == 0 {
            return Err(Error::invalid("grid values must be >= 1"));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::invalid(format!("rho must be >= 0, got {}", self.rho)));
        }
        if self.folds < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        Ok(())
    }
}

pub fn default_grid(n: usize) -> Vec<usize> {
    let mut m = (n / 2).min(20);
    let mut grid = Vec::new();
    while m > 5 {
        grid.push(m);
        m /= 2;
    }
    if let Some(&last) = grid.last() {
        m = (last - 1).min(5);
    }
    while m >= 2 {
        grid.push(m);
        m -= 1;
    }
    grid
}

pub fn default_rho(loss: LossKind) -> f64 {
    match loss {
        LossKind::Mae => 0.1,
        LossKind::Mse | LossKind::ErrorRate => 1e-3,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub m: usize,
    /// Validation loss averaged over folds.
    pub loss: f64,
    /// `loss + rho * m`.
    pub objective: f64,
    /// Per fold, indices (into the previous grid point's prototypes) removed
    /// to reach this size. Empty at the first grid point.
    pub pruned: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub records: Vec<GridRecord>,
    pub chosen: usize,
    /// The returned model was retrained on all data at the chosen size.
    pub refit_on_all_data: bool,
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most
/// one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Folds in which every group lands in exactly one fold. Groups are
/// shuffled, then each goes to the currently smallest fold.
pub fn group_kfold_split(groups: &[String], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.as_str()).or_default().push(i);
    }
    if k < 2 || by_group.len() < k {
        return Err(Error::invalid(format!("cannot split {} groups into {k} folds", by_group.len())));
    }
    let mut members: Vec<Vec<usize>> = by_group.into_values().collect();
    members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for group in members {
        let target = (0..k).min_by_key(|&f| (folds[f].len(), f)).unwrap();
        folds[target].extend(group);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Keeps the `target_m` prototypes with the largest `|beta|` (ties: the
/// lower index is removed first) and re-solves the coefficients on `data`.
/// Returns the pruned model and the removed indices.
pub fn prune(model: &SparseModel, target_m: usize, data: &Dataset, lambda: f64) -> Result<(SparseModel, Vec<usize>)> {
    let m = model.num_prototypes();
    if target_m == 0 || target_m >= m {
        return Err(Error::invalid(format!("cannot prune {m} prototypes down to {target_m}")));
    }
    let beta = model.beta();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()).then(a.cmp(&b)));
    let mut removed = order[..m - target_m].to_vec();
    removed.sort_unstable();
    let keep: Vec<usize> = (0..m).filter(|i| !removed.contains(i)).collect();
    let protos = model.prototypes().select(Axis(0), &keep);
    let kept_beta = beta.select(Axis(0), &keep);
    let mut pruned = SparseModel::new(protos, kept_beta, model.bias(), model.similarity().clone())?;
    pruned.metadata = model.metadata.clone();
    refit_coefficients(&mut pruned, data, lambda)?;
    Ok((pruned, removed))
}

/// One step of the descent: the model at a grid size and what was pruned
/// to get there.
struct PathPoint {
    m: usize,
    model: SparseModel,
    pruned: Vec<usize>,
}

/// Trains at `grid[0]`, then prunes and warm-starts down the grid, stopping
/// after `stop_at` (inclusive).
fn descend(
    data: &Dataset,
    grid: &[usize],
    stop_at: usize,
    similarity: &Similarity,
    config: &TrainConfig,
) -> Result<Vec<PathPoint>> {
    let (model, trace) = trainer::fit(data, grid[0], similarity, config)?;
    check_trace(&trace)?;
    let mut path = vec![PathPoint { m: grid[0], model, pruned: Vec::new() }];
    for &m in grid.iter().skip(1) {
        if path.last().unwrap().m <= stop_at {
            break;
        }
        let prev = &path.last().unwrap().model;
        let (pruned, removed) = prune(prev, m, data, config.lambda)?;
        let (model, trace) = trainer::fit_from(data, pruned.prototypes(), similarity, config)?;
        check_trace(&trace)?;
        path.push(PathPoint { m, model, pruned: removed });
    }
    Ok(path)
}

fn check_trace(trace: &TrainTrace) -> Result<()> {
    match &trace.termination {
        trainer::Termination::Error(msg) => Err(Error::invalid(format!("training failed: {msg}"))),
        _ => Ok(()),
    }
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Picks the number of prototypes by incremental cross-validation, then
/// retrains on all data down to the chosen size.
pub fn select_m(
    data: &Dataset,
    grid: &GridConfig,
    similarity: &Similarity,
    config: &TrainConfig,
) -> Result<(SparseModel, SelectionTrace)> {
    grid.validate()?;
    config.validate()?;
    let folds = match data.groups() {
        Some(groups) => group_kfold_split(groups, grid.folds, config.seed)?,
        None => kfold_split(data.len(), grid.folds, config.seed)?,
    };
    let largest = grid.grid[0];
    for fold in &folds {
        let train_size = data.len() - fold.len();
        if largest > train_size {
            return Err(Error::invalid(format!(
                "largest grid size {largest} exceeds a training fold of {train_size} samples"
            )));
        }
    }

    let per_fold: Vec<Result<Vec<(f64, Vec<usize>)>>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, val_idx)| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|i| !val_idx.contains(i)).collect();
            let train = data.subset(&train_idx)?;
            let val = data.subset(val_idx)?;
            let fold_config = TrainConfig { seed: fold_seed(config.seed, f), ..config.clone() };
            let path = descend(&train, &grid.grid, 0, similarity, &fold_config)?;
            path.into_iter()
                .map(|p| {
                    let pred = p.model.predict_batch(val.features())?;
                    Ok((grid.loss.eval(pred.view(), val.targets())?, p.pruned))
                })
                .collect()
        })
        .collect();
    let per_fold: Vec<Vec<(f64, Vec<usize>)>> = per_fold.into_iter().collect::<Result<_>>()?;

    let k = per_fold.len() as f64;
    let mut records = Vec::with_capacity(grid.grid.len());
    for (g, &m) in grid.grid.iter().enumerate() {
        let loss = per_fold.iter().map(|f| f[g].0).sum::<f64>() / k;
        let pruned = per_fold.iter().map(|f| f[g].1.clone()).collect();
        records.push(GridRecord { m, loss, objective: loss + grid.rho * m as f64, pruned });
    }
    // Ties go to the smaller m, which comes later in the descending grid.
    let chosen = records
        .iter()
        .fold(None::<&GridRecord>, |best, r| match best {
            Some(b) if b.objective < r.objective => Some(b),
            _ => Some(r),
        })
        .unwrap()
        .m;

    let path = descend(data, &grid.grid, chosen, similarity, config)?;
    let mut model = path.into_iter().find(|p| p.m == chosen).expect("chosen size is on the grid").model;
    model.metadata.seed = config.seed;
    Ok((model, SelectionTrace { records, chosen, refit_on_all_data: true }))
}

/// Cold-start counterpart of the descent, for comparisons: an independent
/// fit at each size.
pub fn cold_path(data: &Dataset, grid: &[usize], similarity: &Similarity, config: &TrainConfig) -> Result<Vec<SparseModel>> {
    grid.iter()
        .map(|&m| trainer::fit(data, m, similarity, config).map(|(model, _)| model))
        .collect()
}

/// Warm-started models at every grid size, on one dataset.
pub fn warm_path(data: &Dataset, grid: &[usize], similarity: &Similarity, config: &TrainConfig) -> Result<Vec<SparseModel>> {
    Ok(descend(data, grid, 0, similarity, config)?.into_iter().map(|p| p.model).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn default_grid_shape() {
        assert_eq!(default_grid(100), vec![20, 10, 5, 4, 3, 2]);
        assert_eq!(default_grid(24), vec![12, 6, 5, 4, 3, 2]);
        assert_eq!(default_grid(8), vec![4, 3, 2]);
    }

    #[test]
    fn grid_validation() {
        let mut g = GridConfig::for_samples(100, LossKind::Mse);
        assert!(g.validate().is_ok());
        g.grid = vec![3, 3, 2];
        assert!(g.validate().is_err());
        g.grid = vec![3, 2];
        g.folds = 1;
        assert!(g.validate().is_err());
    }

    #[test]
    fn kfold_partition() {
        let folds = kfold_split(10, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let folds = kfold_split(11, 3, 2).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(kfold_split(11, 3, 2).unwrap(), folds);
        assert!(kfold_split(3, 4, 0).is_err());
    }

    #[test]
    fn group_folds_keep_groups_together() {
        let groups: Vec<String> = (0..30).map(|i| format!("s{}", i % 7)).collect();
        let folds = group_kfold_split(&groups, 3, 4).unwrap();
        for (a, fa) in folds.iter().enumerate() {
            for (b, fb) in folds.iter().enumerate() {
                if a != b {
                    for &i in fa {
                        assert!(fb.iter().all(|&j| groups[i] != groups[j]));
                    }
                }
            }
        }
        assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 30);
    }

    fn model_with_beta(beta: Array1<f64>) -> SparseModel {
        let m = beta.len();
        let protos = Array2::from_shape_fn((m, 1), |(i, _)| i as f64 * 2.0);
        SparseModel::new(protos, beta, 0.0, Similarity::rbf(1.0).unwrap()).unwrap()
    }

    fn toy_data() -> Dataset {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| i as f64 * 0.4);
        let y = x.column(0).mapv(|v| v.sin());
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn prune_removes_smallest_magnitude() {
        let model = model_with_beta(array![0.5, -0.05, 2.0]);
        let (p, removed) = prune(&model, 2, &toy_data(), 1e-6).unwrap();
        assert_eq!(removed, vec![1]);
        assert_eq!(p.prototypes(), array![[0.0], [4.0]]);
    }

    #[test]
    fn prune_ties_remove_lowest_index() {
        let model = model_with_beta(array![1.0, -1.0, 1.0, 1.0]);
        let (_, removed) = prune(&model, 2, &toy_data(), 1e-6).unwrap();
        assert_eq!(removed, vec![0, 1]);
    }

    #[test]
    fn prune_rejects_non_shrinking_target() {
        let model = model_with_beta(array![1.0, 2.0]);
        assert!(prune(&model, 2, &toy_data(), 0.0).is_err());
        assert!(prune(&model, 0, &toy_data(), 0.0).is_err());
    }

    #[test]
    fn prune_matches_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let m = rng.random_range(2..9);
            let beta = Array1::from_shape_fn(m, |_| rng.random_range(-2.0..2.0));
            let target = rng.random_range(1..m);
            let model = model_with_beta(beta.clone());
            let (_, removed) = prune(&model, target, &toy_data(), 1e-6).unwrap();
            let mut mags: Vec<(f64, usize)> = beta.iter().map(|b| b.abs()).zip(0..).collect();
            mags.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut expect_removed: Vec<usize> = mags[target..].iter().map(|p| p.1).collect();
            expect_removed.sort();
            assert_eq!(removed, expect_removed);
        }
    }
}
