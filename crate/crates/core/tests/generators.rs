use std::f64::consts::PI;

use supersparse::dataio::{gen_synthetic, SyntheticKind, CLUSTER_CENTERS, CLUSTER_SD, TWO_GAUSSIAN_MEANS, TWO_GAUSSIAN_SD};

const SEEDS: u64 = 50;

/// Pooled draws checked against a documented mean and sd: the sample mean
/// within 3 standard errors, the sample variance within 3 of its standard
/// errors (normal approximation).
fn check(name: &str, values: &[f64], mean: f64, sd: f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let se_mean = sd / n.sqrt();
    assert!((m - mean).abs() < 3.0 * se_mean, "{name}: mean {m} vs {mean} (se {se_mean})");
    let se_var = sd * sd * (2.0 / (n - 1.0)).sqrt();
    assert!((var - sd * sd).abs() < 3.0 * se_var, "{name}: variance {var} vs {} (se {se_var})", sd * sd);
}

fn pooled(kind: SyntheticKind, n: usize, mut f: impl FnMut(&[f64], f64)) {
    for seed in 0..SEEDS {
        let d = gen_synthetic(kind, n, seed).unwrap();
        for (row, y) in d.features().outer_iter().zip(d.targets().iter()) {
            f(row.as_slice().unwrap(), *y);
        }
    }
}

#[test]
fn two_gaussians_match_documented_parameters() {
    let mut coords = vec![vec![Vec::new(); 2]; 2];
    let mut counts = [0usize; 2];
    pooled(SyntheticKind::TwoGaussians, 25, |x, y| {
        let c = usize::from(y > 0.0);
        counts[c] += 1;
        for k in 0..2 {
            coords[c][k].push(x[k]);
        }
    });
    assert_eq!(counts, [13 * SEEDS as usize, 12 * SEEDS as usize]);
    for c in 0..2 {
        for k in 0..2 {
            check(&format!("class {c} axis {k}"), &coords[c][k], TWO_GAUSSIAN_MEANS[c][k], TWO_GAUSSIAN_SD);
        }
    }
}

#[test]
fn three_clusters_match_documented_parameters() {
    let n = 60;
    let mut coords = vec![vec![Vec::new(); 2]; 3];
    let mut radii = Vec::new();
    let mut positives = 0;
    let centroid = [1.5, 3f64.sqrt() / 2.0];
    pooled(SyntheticKind::ThreeClusters, n, |x, y| {
        if y > 0.0 {
            positives += 1;
            let c = (0..3)
                .min_by(|&a, &b| {
                    let da = (x[0] - CLUSTER_CENTERS[a][0]).hypot(x[1] - CLUSTER_CENTERS[a][1]);
                    let db = (x[0] - CLUSTER_CENTERS[b][0]).hypot(x[1] - CLUSTER_CENTERS[b][1]);
                    da.total_cmp(&db)
                })
                .unwrap();
            coords[c][0].push(x[0]);
            coords[c][1].push(x[1]);
        } else {
            radii.push((x[0] - centroid[0]).hypot(x[1] - centroid[1]));
        }
    });
    assert_eq!(positives, 51 * SEEDS as usize);
    for c in 0..3 {
        assert_eq!(coords[c][0].len(), 17 * SEEDS as usize, "cluster {c}");
        for k in 0..2 {
            check(&format!("cluster {c} axis {k}"), &coords[c][k], CLUSTER_CENTERS[c][k], CLUSTER_SD);
        }
    }
    check("background radius", &radii, 4.5, 0.2);
}

#[test]
fn ring_matches_documented_parameters() {
    let (mut radii, mut blob_x, mut blob_y) = (Vec::new(), Vec::new(), Vec::new());
    pooled(SyntheticKind::Ring, 50, |x, y| {
        if y > 0.0 {
            radii.push(x[0].hypot(x[1]));
        } else {
            blob_x.push(x[0]);
            blob_y.push(x[1]);
        }
    });
    assert_eq!(radii.len(), 40 * SEEDS as usize);
    check("ring radius", &radii, 2.0, 0.1);
    check("blob x", &blob_x, 0.0, 0.3);
    check("blob y", &blob_y, 0.0, 0.3);
}

#[test]
fn sine_regression_matches_documented_parameters() {
    let (mut xs, mut noise) = (Vec::new(), Vec::new());
    pooled(SyntheticKind::SineRegression, 200, |x, y| {
        xs.push(x[0]);
        noise.push(y - x[0].sin());
    });
    assert!(xs.iter().all(|x| (0.0..2.0 * PI).contains(x)));
    check("x", &xs, PI, 2.0 * PI / 12f64.sqrt());
    check("noise", &noise, 0.0, 0.1);
}
