//! Black-box similarity through a scorer subprocess.

use std::path::Path;

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supersparse::dataio::{blackbox_bridge, load_model, save_model};
use supersparse::trainer::fit;
use supersparse::{Dataset, GradMode, Similarity, SparseModel, TrainConfig};

const RBF_SCRIPT: &str = r#"
import math, sys
for line in sys.stdin:
    parts = line.split()
    d = int(parts[0])
    a = [float(v) for v in parts[1:1 + d]]
    b = [float(v) for v in parts[1 + d:1 + 2 * d]]
    s = math.exp(-0.3 * sum((x - y) ** 2 for x, y in zip(a, b)))
    print(repr(s), flush=True)
"#;

fn script(dir: &Path) -> String {
    let path = dir.join("rbf.py");
    std::fs::write(&path, RBF_SCRIPT).unwrap();
    format!("python3 {}", path.display())
}

#[test]
fn bridged_rbf_agrees_with_native() {
    let dir = tempfile::tempdir().unwrap();
    let bridged = blackbox_bridge(&script(dir.path())).unwrap();
    let native = Similarity::rbf(0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..50 {
        let d = rng.random_range(1..6);
        let a = Array1::from_shape_fn(d, |_| rng.random_range(-3.0..3.0));
        let b = Array1::from_shape_fn(d, |_| rng.random_range(-3.0..3.0));
        let x = bridged.eval(a.view(), b.view()).unwrap();
        let y = native.eval(a.view(), b.view()).unwrap();
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        // symmetric query
        assert_eq!(x, bridged.eval(b.view(), a.view()).unwrap());
    }
    assert_eq!(bridged.evaluations(), 100);
}

#[test]
fn training_through_the_bridge_matches_native_numeric_training() {
    let dir = tempfile::tempdir().unwrap();
    let bridged = blackbox_bridge(&script(dir.path())).unwrap();
    let native = Similarity::rbf(0.3).unwrap();
    let data = Dataset::new(array![[0.0, 0.0], [0.3, 0.1], [2.0, 2.1], [2.2, 1.9], [1.0, 1.0]], array![1.0, 1.0, -1.0, -1.0, 0.0]).unwrap();
    let config = TrainConfig { grad_mode: GradMode::Numeric, max_sweeps: 3, seed: 2, ..Default::default() };
    let (a, _) = fit(&data, 2, &bridged, &config).unwrap();
    let (b, _) = fit(&data, 2, &native, &config).unwrap();
    let diff = (&a.prototypes() - &b.prototypes()).iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(diff < 1e-8, "{diff}");
}

#[test]
fn black_box_model_file_relaunches_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let command = script(dir.path());
    let sim = blackbox_bridge(&command).unwrap();
    let model = SparseModel::new(Array2::from_shape_vec((1, 2), vec![0.5, -0.5]).unwrap(), array![2.0], 0.1, sim).unwrap();
    let path = dir.path().join("model.toml");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    let x = array![0.2, 0.2];
    assert_eq!(back.predict(x.view()).unwrap(), model.predict(x.view()).unwrap());
}
