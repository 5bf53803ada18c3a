use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supersparse::baselines::*;
use supersparse::dataio::{gen_synthetic, SyntheticKind, CLUSTER_CENTERS};
use supersparse::{Dataset, Similarity};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn random_selection_is_uniform() {
    let data = Dataset::new(Array2::from_shape_fn((10, 1), |(i, _)| i as f64), Array1::zeros(10)).unwrap();
    let mut counts = [0usize; 10];
    let draws = 10_000;
    for seed in 0..draws {
        counts[ps_random(&data, 1, seed).unwrap()[0]] += 1;
    }
    let expected = draws as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 9 degrees of freedom
    assert!(chi2 < 21.666, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn border_selection_on_ring_stays_on_ring() {
    let data = gen_synthetic(SyntheticKind::Ring, 50, 4).unwrap();
    let picked = ps_border(&data, 4).unwrap();
    assert_eq!(picked.len(), 4);
    for &i in &picked {
        let r = data.features().row(i).dot(&data.features().row(i)).sqrt();
        assert!(r > 1.5, "row {i} at radius {r}");
        assert_eq!(data.targets()[i], 1.0);
    }
}

#[test]
fn spanning_second_pick_leaves_the_median_cluster() {
    // 7 points near the origin, 3 near (10, 0): the median sits in the big one.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_fn((10, 2), |(i, k)| {
        let base = if i >= 7 && k == 0 { 10.0 } else { 0.0 };
        base + rng.random_range(-0.5..0.5)
    });
    let data = Dataset::new(x, Array1::zeros(10)).unwrap();
    let picked = ps_spanning(&data, 2).unwrap();
    assert!(picked[0] < 7);
    assert!(picked[1] >= 7);
    assert_ne!(picked[0], picked[1]);
    // exhaustive check of the median definition
    let rows: Vec<Vec<f64>> = data.features().outer_iter().map(|r| r.to_vec()).collect();
    let total = |i: usize| rows.iter().map(|r| dist(&rows[i], r)).sum::<f64>();
    let best = (0..10).min_by(|&a, &b| total(a).total_cmp(&total(b))).unwrap();
    assert_eq!(picked[0], best);
}

#[test]
fn kmeans_recovers_planted_cluster_centers() {
    for seed in 0..5 {
        let data = gen_synthetic(SyntheticKind::ThreeClusters, 60, seed).unwrap();
        let members: Vec<usize> = (0..data.len()).filter(|&i| data.targets()[i] > 0.0).collect();
        let rows = data.subset(&members).unwrap();
        let clustering = kmeans(rows.features(), 3, seed).unwrap();
        for c in CLUSTER_CENTERS {
            let nearest = clustering
                .centers
                .outer_iter()
                .map(|z| dist(z.as_slice().unwrap(), &c))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.15, "seed {seed}: planted {c:?} missed by {nearest}");
        }
    }
}

#[test]
fn kmedians_selects_one_row_per_cluster() {
    let data = gen_synthetic(SyntheticKind::ThreeClusters, 60, 2).unwrap();
    let members: Vec<usize> = (0..data.len()).filter(|&i| data.targets()[i] > 0.0).collect();
    let rows = data.subset(&members).unwrap();
    let picked = ps_kmedians(&rows, 3, 0).unwrap();
    let mut hit = [false; 3];
    for &i in &picked {
        let r = rows.features().row(i).to_vec();
        let c = (0..3).min_by(|&a, &b| dist(&r, &CLUSTER_CENTERS[a]).total_cmp(&dist(&r, &CLUSTER_CENTERS[b]))).unwrap();
        hit[c] = true;
    }
    assert_eq!(hit, [true; 3]);
}

#[test]
fn kernel_ridge_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 15;
    let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
    let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let data = Dataset::new(x.clone(), y.clone()).unwrap();
    let sim = Similarity::rbf(0.7).unwrap();
    let lambda = 0.05;
    let model = kernel_ridge_full(&data, lambda, &sim).unwrap();

    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = (-0.7 * dist(x.row(i).as_slice().unwrap(), x.row(j).as_slice().unwrap()).powi(2)).exp();
        }
        a[(i, n)] = 1.0;
    }
    let mut lhs = a.transpose() * &a;
    for j in 0..n {
        lhs[(j, j)] += lambda;
    }
    let rhs = a.transpose() * nalgebra::DVector::from_iterator(n, y.iter().copied());
    let c = lhs.lu().solve(&rhs).unwrap();
    for j in 0..n {
        assert!((model.beta()[j] - c[j]).abs() <= 1e-8 * c.norm(), "beta[{j}]");
    }
    assert!((model.bias() - c[n]).abs() <= 1e-8 * c.norm());
}

#[test]
fn random_selection_of_everything_equals_full_ridge() {
    let data = gen_synthetic(SyntheticKind::SineRegression, 30, 1).unwrap();
    let sim = Similarity::rbf_default(1).unwrap();
    let full = kernel_ridge_full(&data, 1e-3, &sim).unwrap();
    let sel = baseline_pipeline(&data, SelectionMethod::Random, 30, 1e-3, &sim, 9).unwrap();
    let probe = Array2::from_shape_fn((50, 1), |(i, _)| i as f64 * 0.13);
    let a = full.predict_batch(probe.view()).unwrap();
    let b = sel.predict_batch(probe.view()).unwrap();
    for (p, q) in a.iter().zip(b.iter()) {
        assert!((p - q).abs() < 1e-7, "{p} vs {q}");
    }
}

#[test]
fn every_method_returns_m_prototypes() {
    let data = gen_synthetic(SyntheticKind::TwoGaussians, 25, 0).unwrap();
    let sim = Similarity::rbf_default(2).unwrap();
    for method in [SelectionMethod::Random, SelectionMethod::Border, SelectionMethod::Spanning, SelectionMethod::KMedians] {
        for m in [1, 3, 7] {
            let model = baseline_pipeline(&data, method, m, 1e-6, &sim, 3).unwrap();
            assert_eq!(model.num_prototypes(), m, "{}", method.name());
        }
    }
}

#[test]
fn lasso_sparsity_shrinks_along_the_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let design = Array2::from_shape_fn((40, 8), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(40, |i| design[[i, 0]] - 0.5 * design[[i, 3]] + rng.random_range(-0.3..0.3));
    let u = Array1::ones(40);
    let lmax = lasso_lambda_max(design.view(), u.view(), y.view());
    let mut previous = usize::MAX;
    for step in 0..10 {
        let lambda1 = lmax * 10f64.powf(-2.0 + step as f64 / 4.5);
        let sol = lasso_cd(design.view(), u.view(), y.view(), lambda1, LassoOptions::default()).unwrap();
        let nnz = sol.beta.iter().filter(|b| **b != 0.0).count();
        assert!(nnz <= previous, "step {step}: {nnz} > {previous}");
        previous = nnz;
    }
    let dead = lasso_cd(design.view(), u.view(), y.view(), lmax * 1.01, LassoOptions::default()).unwrap();
    assert!(dead.beta.iter().all(|b| *b == 0.0));
    assert!((dead.bias - y.sum() / 40.0).abs() < 1e-12);
}

#[test]
fn lasso_on_similarity_features_converges_at_moderate_strength() {
    let data = gen_synthetic(SyntheticKind::SineRegression, 40, 6).unwrap();
    let sim = Similarity::rbf_default(1).unwrap();
    let design = sim.matrix(data.features(), data.features()).unwrap();
    let lmax = lasso_lambda_max(design.view(), data.weights(), data.targets());
    let sol = lasso_cd(design.view(), data.weights(), data.targets(), 0.1 * lmax, LassoOptions::default()).unwrap();
    assert!(sol.kkt_residual <= 1e-6);
    let nnz = sol.beta.iter().filter(|b| **b != 0.0).count();
    assert!(nnz > 0 && nnz < 40);
}

#[test]
fn warm_start_reaches_the_cold_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let design = Array2::from_shape_fn((40, 8), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(40, |i| design[[i, 2]] + 0.3 * design[[i, 5]] + rng.random_range(-0.3..0.3));
    let u = Array1::ones(40);
    let lambda1 = 0.2 * lasso_lambda_max(design.view(), u.view(), y.view());
    let cold = lasso_cd(design.view(), u.view(), y.view(), lambda1, LassoOptions::default()).unwrap();
    let start = Array1::from_shape_fn(8, |_| rng.random_range(-2.0..2.0));
    let warm = lasso_cd_from(design.view(), u.view(), y.view(), lambda1, LassoOptions::default(), start).unwrap();
    // Full column rank design: the minimizer is unique.
    for (a, b) in cold.beta.iter().zip(warm.beta.iter()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((cold.bias - warm.bias).abs() < 1e-6);
}

#[test]
fn lasso_for_size_hits_small_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_fn((40, 6), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(40, |i| x[[i, 0]] - x[[i, 4]] + rng.random_range(-0.2..0.2));
    let data = Dataset::new(x, y).unwrap();
    let sim = Similarity::linear();
    for m in 1..=4 {
        let (model, lambda1) = lasso_for_size(&data, m, &sim).unwrap();
        assert_eq!(model.num_prototypes(), m);
        // The reported penalty reproduces the same support from a cold start.
        let cold = lasso_similarity(&data, lambda1, &sim).unwrap();
        assert_eq!(cold.num_prototypes(), m);
    }
}
