use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::types::Dataset;

/// Loads a headed CSV. Features are every column except the target (and the
/// optional group column), in header order.
pub fn load_csv(path: &Path, target_column: &str, group_column: Option<&str>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    read_csv_str(&text, path, target_column, group_column)
}

/// Parses CSV text; `path` is only used in error messages.
pub fn read_csv_str(text: &str, path: &Path, target_column: &str, group_column: Option<&str>) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let target = find(target_column).ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    let group = match group_column {
        Some(g) => Some(find(g).ok_or_else(|| Error::MissingColumn(g.to_string()))?),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != target && Some(c) != group).collect();
    if feature_cols.is_empty() {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut groups = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        let cell = |c: usize| -> Result<f64> {
            let raw = record[c].trim();
            raw.parse::<f64>()
                .map_err(|_| parse_err(line, format!("column `{}`: cannot parse `{raw}` as a number", &headers[c])))
        };
        for &c in &feature_cols {
            values.push(cell(c)?);
        }
        targets.push(cell(target)?);
        if let Some(g) = group {
            groups.push(record[g].trim().to_string());
        }
    }
    let n = targets.len();
    if n == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    let features = Array2::from_shape_vec((n, feature_cols.len()), values).expect("row-major shape");
    let data = Dataset::new(features, Array1::from(targets))?;
    match group {
        Some(_) => data.with_groups(groups),
        None => Ok(data),
    }
}

/// Writes features as `x0..x{d-1}` followed by `y` (and `group` when set).
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    if data.groups().is_some() {
        header.push("group".into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.features().row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.targets()[i].to_string());
        if let Some(g) = data.groups() {
            row.push(g[i].clone());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `prediction` column, plus `target` and `residual` when targets are known.
pub fn write_predictions_csv(pred: ArrayView1<f64>, truth: Option<ArrayView1<f64>>, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match truth {
        Some(_) => w.write_record(["prediction", "target", "residual"])?,
        None => w.write_record(["prediction"])?,
    }
    for (i, p) in pred.iter().enumerate() {
        match truth {
            Some(t) => w.write_record([p.to_string(), t[i].to_string(), (p - t[i]).to_string()])?,
            None => w.write_record([p.to_string()])?,
        }
    }
    w.flush()?;
    Ok(())
}
