use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{Similarity, SimilaritySpec};
use crate::types::{ModelMetadata, SparseModel};

use super::bridge::blackbox_bridge;

pub const FORMAT_VERSION: u32 = 1;

/// On-disk layout of a model (TOML).
///
/// Floats are written in shortest round-trip form, so loading reproduces
/// every value bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub bias: f64,
    pub beta: Vec<f64>,
    /// Row-major, one inner array per prototype.
    pub prototypes: Vec<Vec<f64>>,
    pub similarity: SimilaritySpec,
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn from_model(model: &SparseModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            bias: model.bias(),
            beta: model.beta().to_vec(),
            prototypes: model.prototypes().outer_iter().map(|r| r.to_vec()).collect(),
            similarity: model.similarity().spec().clone(),
            metadata: model.metadata.clone(),
        }
    }

    /// Builds the model, launching the scorer process for black-box specs.
    pub fn into_model(self) -> Result<SparseModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion { found: self.format_version, expected: FORMAT_VERSION });
        }
        let m = self.prototypes.len();
        let d = self.prototypes.first().map_or(0, Vec::len);
        if self.prototypes.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("prototype rows have different lengths"));
        }
        let flat: Vec<f64> = self.prototypes.into_iter().flatten().collect();
        let protos = Array2::from_shape_vec((m, d), flat).expect("checked shape");
        let similarity = match &self.similarity {
            SimilaritySpec::Blackbox { id } => blackbox_bridge(id)?,
            spec => Similarity::from_spec(spec)?,
        };
        Ok(SparseModel::new(protos, Array1::from(self.beta), self.bias, similarity)?.with_metadata(self.metadata))
    }
}

pub fn model_to_string(model: &SparseModel) -> Result<String> {
    toml::to_string(&ModelFile::from_model(model)).map_err(|e| Error::invalid(format!("cannot serialize model: {e}")))
}

pub fn model_from_str(text: &str, path: &Path) -> Result<SparseModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Parse { path: path.to_path_buf(), line, message: e.message().to_string() }
    })?;
    file.into_model()
}

pub fn save_model(model: &SparseModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SparseModel> {
    let text = std::fs::read_to_string(path)?;
    model_from_str(&text, path)
}
