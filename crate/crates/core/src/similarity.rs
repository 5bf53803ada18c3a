//! Similarity functions, their gradients with respect to the prototype
//! argument, and similarity-matrix construction.
//!
//! Every evaluation goes through [`Similarity::eval`], which bumps a shared
//! counter. The counter is how test-time cost (`m` evaluations per
//! prediction) is measured.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable identity of a similarity function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SimilaritySpec {
    /// `exp(-gamma * |a - b|^2)`
    Rbf { gamma: f64 },
    /// Plain dot product.
    Linear,
    /// An externally supplied scorer. For subprocess scorers the id is the
    /// command line used to launch it.
    Blackbox { id: String },
}

impl SimilaritySpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SimilaritySpec::Rbf { .. } => "rbf",
            SimilaritySpec::Linear => "linear",
            SimilaritySpec::Blackbox { .. } => "blackbox",
        }
    }
}

/// How the gradient of `s(x, z)` with respect to `z` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    #[default]
    Analytic,
    /// `s(x, z) * (x - z)`: assumes similarity grows when `z` moves linearly
    /// towards `x`. Works for black-box scorers.
    Approximate,
    /// Central finite differences.
    Numeric,
}

impl GradMode {
    pub fn name(self) -> &'static str {
        match self {
            GradMode::Analytic => "analytic",
            GradMode::Approximate => "approximate",
            GradMode::Numeric => "numeric",
        }
    }
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(GradMode::Analytic),
            "approximate" => Ok(GradMode::Approximate),
            "numeric" => Ok(GradMode::Numeric),
            other => Err(Error::invalid(format!("unknown gradient mode `{other}`"))),
        }
    }
}

/// A black-box similarity. Implementations must be symmetric in their
/// arguments.
pub trait Scorer: Send + Sync {
    fn score(&self, a: &[f64], b: &[f64]) -> Result<f64>;
}

impl<F> Scorer for F
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync,
{
    fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self(a, b)
    }
}

#[derive(Clone)]
struct BlackBox {
    scorer: Arc<dyn Scorer>,
    // Scorers are non-reentrant unless registered otherwise.
    lock: Option<Arc<Mutex<()>>>,
}

/// A similarity function together with its evaluation counter.
///
/// Clones share the counter.
#[derive(Clone)]
pub struct Similarity {
    spec: SimilaritySpec,
    blackbox: Option<BlackBox>,
    evaluations: Arc<AtomicU64>,
}

impl fmt::Debug for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Similarity")
            .field("spec", &self.spec)
            .field("evaluations", &self.evaluations())
            .finish()
    }
}

impl Similarity {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("rbf gamma must be positive, got {gamma}")));
        }
        Ok(Self::from_parts(SimilaritySpec::Rbf { gamma }, None))
    }

    /// RBF with `gamma = 1 / dim`.
    pub fn rbf_default(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Self::rbf(1.0 / dim as f64)
    }

    pub fn linear() -> Self {
        Self::from_parts(SimilaritySpec::Linear, None)
    }

    /// Registers a black-box scorer. Calls into it are serialized.
    pub fn blackbox(id: impl Into<String>, scorer: Arc<dyn Scorer>) -> Self {
        let bb = BlackBox {
            scorer,
            lock: Some(Arc::new(Mutex::new(()))),
        };
        Self::from_parts(SimilaritySpec::Blackbox { id: id.into() }, Some(bb))
    }

    /// Registers a black-box scorer that may be called concurrently.
    pub fn blackbox_reentrant(id: impl Into<String>, scorer: Arc<dyn Scorer>) -> Self {
        let bb = BlackBox { scorer, lock: None };
        Self::from_parts(SimilaritySpec::Blackbox { id: id.into() }, Some(bb))
    }

    /// Rebuilds an analytic similarity from its spec. Black-box specs need a
    /// scorer and are rejected here.
    pub fn from_spec(spec: &SimilaritySpec) -> Result<Self> {
        match spec {
            SimilaritySpec::Rbf { gamma } => Self::rbf(*gamma),
            SimilaritySpec::Linear => Ok(Self::linear()),
            SimilaritySpec::Blackbox { id } => Err(Error::invalid(format!(
                "black-box similarity `{id}` needs a registered scorer"
            ))),
        }
    }

    fn from_parts(spec: SimilaritySpec, blackbox: Option<BlackBox>) -> Self {
        Self {
            spec,
            blackbox,
            evaluations: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn spec(&self) -> &SimilaritySpec {
        &self.spec
    }

    /// Total number of evaluations performed through this similarity (and
    /// its clones).
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    /// Same function, fresh counter.
    pub fn detached(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            blackbox: self.blackbox.clone(),
            evaluations: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "similarity arguments",
                expected: a.len(),
                found: b.len(),
            });
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        match &self.spec {
            SimilaritySpec::Rbf { gamma } => Ok((-gamma * sq_dist(a, b)).exp()),
            SimilaritySpec::Linear => Ok(a.dot(&b)),
            SimilaritySpec::Blackbox { .. } => {
                let bb = self.blackbox.as_ref().expect("black-box spec without scorer");
                let _guard = bb
                    .lock
                    .as_ref()
                    .map(|l| l.lock().unwrap_or_else(|e| e.into_inner()));
                let (a, b) = (a.to_vec(), b.to_vec());
                let value = bb.scorer.score(&a, &b)?;
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::Evaluation {
                        location: None,
                        message: format!("scorer returned {value}"),
                    })
                }
            }
        }
    }

    /// Gradient of `s(x, z)` with respect to `z`.
    pub fn grad_z(&self, x: ArrayView1<f64>, z: ArrayView1<f64>, mode: GradMode) -> Result<Array1<f64>> {
        if x.len() != z.len() {
            return Err(Error::DimensionMismatch {
                context: "similarity gradient arguments",
                expected: z.len(),
                found: x.len(),
            });
        }
        match mode {
            GradMode::Analytic => match &self.spec {
                SimilaritySpec::Rbf { gamma } => {
                    let s = self.eval(x, z)?;
                    Ok((&x - &z) * (2.0 * gamma * s))
                }
                SimilaritySpec::Linear => Ok(x.to_owned()),
                SimilaritySpec::Blackbox { .. } => Err(Error::UnsupportedGradMode {
                    mode: mode.name(),
                    kind: self.spec.kind_name(),
                }),
            },
            GradMode::Approximate => {
                let s = self.eval(x, z)?;
                Ok((&x - &z) * s)
            }
            GradMode::Numeric => {
                let h = numeric_step(z);
                let mut zp = z.to_owned();
                let mut grad = Array1::zeros(z.len());
                for k in 0..z.len() {
                    let orig = zp[k];
                    zp[k] = orig + h;
                    let up = self.eval(x, zp.view())?;
                    zp[k] = orig - h;
                    let down = self.eval(x, zp.view())?;
                    zp[k] = orig;
                    grad[k] = (up - down) / (2.0 * h);
                }
                Ok(grad)
            }
        }
    }

    /// `k x m` matrix with entry `(i, j) = s(rows_i, protos_j)`.
    pub fn matrix(&self, rows: ArrayView2<f64>, protos: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != protos.ncols() {
            return Err(Error::DimensionMismatch {
                context: "similarity matrix",
                expected: protos.ncols(),
                found: rows.ncols(),
            });
        }
        let mut out = Array2::zeros((rows.nrows(), protos.nrows()));
        for (i, row) in rows.outer_iter().enumerate() {
            for (j, proto) in protos.outer_iter().enumerate() {
                out[[i, j]] = self.eval(row, proto).map_err(|e| e.at(i, j))?;
            }
        }
        Ok(out)
    }

    /// Similarities of every row to a single prototype.
    pub fn column(&self, rows: ArrayView2<f64>, proto: ArrayView1<f64>, col: usize) -> Result<Array1<f64>> {
        rows.outer_iter()
            .enumerate()
            .map(|(i, row)| self.eval(row, proto).map_err(|e| e.at(i, col)))
            .collect()
    }
}

/// Finite-difference step: `1e-6 * max(1, |z|_inf)`.
pub fn numeric_step(z: ArrayView1<f64>) -> f64 {
    let scale = z.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    1e-6 * scale
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
