//! Fixtures shared by the benchmarks.

use supersparse::dataio::{gen_synthetic, SyntheticKind};
use supersparse::{trainer, Dataset, Similarity, SparseModel, TrainConfig};

/// Sine regression set of `n` rows with its default RBF similarity.
pub fn sine(n: usize) -> (Dataset, Similarity) {
    let data = gen_synthetic(SyntheticKind::SineRegression, n, 0).expect("valid size");
    let sim = Similarity::rbf_default(data.dim()).expect("positive dimension");
    (data, sim)
}

/// A model with `m` prototypes after a short training run.
pub fn trained(data: &Dataset, sim: &Similarity, m: usize) -> SparseModel {
    let config = TrainConfig { max_sweeps: 2, ..TrainConfig::default() };
    trainer::fit(data, m, sim, &config).expect("training succeeds").0
}
