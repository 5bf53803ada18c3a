//! Seeded toy datasets.
//!
//! | kind | layout | targets |
//! |------|--------|---------|
//! | `two_gaussians` | two isotropic 2D Gaussians, means `(-1.2, 0)` and `(1.2, 0)`, sd 0.6; `ceil(n/2)` rows in the first | -1 / +1 |
//! | `three_clusters` | 85% of rows in three tight 2D Gaussians (sd 0.1) at the corners of a triangle with side 3, the rest on a ring of radius 4.5 around them | +1 in clusters, -1 on the ring |
//! | `ring` | 80% on a ring of radius 2 (radial sd 0.1), 20% in a central blob (sd 0.3) | +1 ring, -1 centre |
//! | `sine_regression` | 1D `x ~ U(0, 2 pi)` | `sin(x) + N(0, 0.1^2)` |

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoGaussians,
    ThreeClusters,
    Ring,
    SineRegression,
}

impl SyntheticKind {
    pub fn default_size(self) -> usize {
        match self {
            SyntheticKind::TwoGaussians => 25,
            SyntheticKind::ThreeClusters => 60,
            SyntheticKind::Ring => 50,
            SyntheticKind::SineRegression => 200,
        }
    }
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "two_gaussians" => Ok(SyntheticKind::TwoGaussians),
            "three_clusters" => Ok(SyntheticKind::ThreeClusters),
            "ring" => Ok(SyntheticKind::Ring),
            "sine_regression" => Ok(SyntheticKind::SineRegression),
            other => Err(Error::invalid(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

pub const TWO_GAUSSIAN_MEANS: [[f64; 2]; 2] = [[-1.2, 0.0], [1.2, 0.0]];
pub const TWO_GAUSSIAN_SD: f64 = 0.6;
pub const CLUSTER_CENTERS: [[f64; 2]; 3] = [[0.0, 0.0], [3.0, 0.0], [1.5, 2.598_076_211_353_316]];
pub const CLUSTER_SD: f64 = 0.1;
const CLUSTER_FRACTION: f64 = 0.85;
const BACKGROUND_RADIUS: f64 = 4.5;

pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("synthetic datasets need at least 2 rows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let (x, y) = match kind {
        SyntheticKind::TwoGaussians => {
            let first = n.div_ceil(2);
            let mut x = Array2::zeros((n, 2));
            let mut y = Array1::zeros(n);
            for i in 0..n {
                let (c, label) = if i < first { (0, -1.0) } else { (1, 1.0) };
                for k in 0..2 {
                    x[[i, k]] = TWO_GAUSSIAN_MEANS[c][k] + TWO_GAUSSIAN_SD * unit.sample(&mut rng);
                }
                y[i] = label;
            }
            (x, y)
        }
        SyntheticKind::ThreeClusters => {
            let in_clusters = ((n as f64) * CLUSTER_FRACTION).round() as usize;
            let centroid = [1.5, 0.866_025_403_784_438_6];
            let mut x = Array2::zeros((n, 2));
            let mut y = Array1::zeros(n);
            for i in 0..n {
                if i < in_clusters {
                    let c = CLUSTER_CENTERS[i % 3];
                    for k in 0..2 {
                        x[[i, k]] = c[k] + CLUSTER_SD * unit.sample(&mut rng);
                    }
                    y[i] = 1.0;
                } else {
                    let angle = rng.random_range(0.0..2.0 * PI);
                    let r = BACKGROUND_RADIUS + 0.2 * unit.sample(&mut rng);
                    x[[i, 0]] = centroid[0] + r * angle.cos();
                    x[[i, 1]] = centroid[1] + r * angle.sin();
                    y[i] = -1.0;
                }
            }
            (x, y)
        }
        SyntheticKind::Ring => {
            let on_ring = ((n as f64) * 0.8).round() as usize;
            let mut x = Array2::zeros((n, 2));
            let mut y = Array1::zeros(n);
            for i in 0..n {
                if i < on_ring {
                    let angle = rng.random_range(0.0..2.0 * PI);
                    let r = 2.0 + 0.1 * unit.sample(&mut rng);
                    x[[i, 0]] = r * angle.cos();
                    x[[i, 1]] = r * angle.sin();
                    y[i] = 1.0;
                } else {
                    x[[i, 0]] = 0.3 * unit.sample(&mut rng);
                    x[[i, 1]] = 0.3 * unit.sample(&mut rng);
                    y[i] = -1.0;
                }
            }
            (x, y)
        }
        SyntheticKind::SineRegression => {
            let mut x = Array2::zeros((n, 1));
            let mut y = Array1::zeros(n);
            for i in 0..n {
                let v = rng.random_range(0.0..2.0 * PI);
                x[[i, 0]] = v;
                y[i] = v.sin() + 0.1 * unit.sample(&mut rng);
            }
            (x, y)
        }
    };
    Dataset::new(x, y)
}
