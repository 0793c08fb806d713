//! Token datasets: per-input token matrices, key matrices and binary labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, max_abs, Matrix};

/// Tolerance for `K_i = X_i W^T` when a key-query matrix is recorded.
pub const KEY_CONSISTENCY_TOL: f64 = 1e-10;

/// One training example: `T_i` tokens (rows of `x`), their keys (rows of `k`), and a label.
#[derive(Clone, Debug, PartialEq)]
pub struct InputRecord {
    x: Matrix,
    k: Matrix,
    y: f64,
}

impl InputRecord {
    pub fn new(x: Matrix, k: Matrix, y: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("input has no tokens".into()));
        }
        if x.shape() != k.shape() {
            return Err(Error::DimensionMismatch(format!(
                "token matrix is {:?} but key matrix is {:?}",
                x.shape(),
                k.shape()
            )));
        }
        if y != 1.0 && y != -1.0 {
            return Err(Error::InvalidInput(format!("label must be +1 or -1, got {y}")));
        }
        if x.iter().chain(k.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite token or key entry".into()));
        }
        Ok(Self { x, k, y })
    }

    /// Input whose keys are the tokens themselves.
    pub fn self_keyed(x: Matrix, y: f64) -> Result<Self> {
        let k = x.clone();
        Self::new(x, k, y)
    }

    pub fn tokens(&self) -> &Matrix {
        &self.x
    }

    pub fn keys(&self) -> &Matrix {
        &self.k
    }

    pub fn label(&self) -> f64 {
        self.y
    }

    pub fn token_count(&self) -> usize {
        self.x.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenDataset {
    dim: usize,
    inputs: Vec<InputRecord>,
    key_query: Option<Matrix>,
}

impl TokenDataset {
    pub fn new(inputs: Vec<InputRecord>, key_query: Option<Matrix>) -> Result<Self> {
        let dim = inputs
            .first()
            .map(|r| r.x.ncols())
            .ok_or_else(|| Error::InvalidInput("dataset has no inputs".into()))?;
        if dim == 0 {
            return Err(Error::InvalidInput("token dimension must be at least 1".into()));
        }
        for (i, r) in inputs.iter().enumerate() {
            if r.x.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "input {i} has dimension {} but dataset dimension is {dim}",
                    r.x.ncols()
                )));
            }
        }
        if let Some(w) = &key_query {
            if w.shape() != (dim, dim) {
                return Err(Error::DimensionMismatch(format!(
                    "key-query matrix is {:?}, expected ({dim}, {dim})",
                    w.shape()
                )));
            }
            for (i, r) in inputs.iter().enumerate() {
                let dev = max_abs(&(&r.k - &r.x * w.transpose()));
                if dev > KEY_CONSISTENCY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "input {i}: keys deviate from X W^T by {dev:e}"
                    )));
                }
            }
        }
        Ok(Self { dim, inputs, key_query })
    }

    /// Builds keys as `K_i = X_i W^T` and records `W`.
    pub fn from_key_query(tokens: Vec<Matrix>, labels: Vec<f64>, w: Matrix) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} token matrices but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        let inputs = tokens
            .into_iter()
            .zip(labels)
            .map(|(x, y)| {
                if x.ncols() != w.nrows() {
                    return Err(Error::DimensionMismatch(format!(
                        "token dimension {} does not match key-query {:?}",
                        x.ncols(),
                        w.shape()
                    )));
                }
                let k = &x * w.transpose();
                InputRecord::new(x, k, y)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(inputs, Some(w))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[InputRecord] {
        &self.inputs
    }

    pub fn key_query(&self) -> Option<&Matrix> {
        self.key_query.as_ref()
    }

    pub fn keys(&self) -> Vec<Matrix> {
        self.inputs.iter().map(|r| r.k.clone()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.inputs.iter().map(|r| r.y).collect()
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.inputs.iter().map(InputRecord::token_count).collect()
    }

    /// True when every key matrix equals its token matrix exactly.
    pub fn keys_are_tokens(&self) -> bool {
        self.inputs.iter().all(|r| r.k == r.x)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DatasetFile::from(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// On-disk layout: `{d, inputs: [{X, K?, Y}], W?}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetFile {
    pub d: usize,
    pub inputs: Vec<InputFile>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputFile {
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<f64>>>,
    /// Written as an integer; any number equal to ±1 is read.
    #[serde(rename = "Y", deserialize_with = "label_from_number")]
    pub y: i8,
}

fn label_from_number<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<i8, D::Error> {
    let y = f64::deserialize(de)?;
    if y == 1.0 || y == -1.0 {
        Ok(y as i8)
    } else {
        Err(serde::de::Error::custom(format!("label {y} is not ±1")))
    }
}

impl TryFrom<DatasetFile> for TokenDataset {
    type Error = Error;

    fn try_from(file: DatasetFile) -> Result<Self> {
        let w = match &file.w {
            Some(rows) => Some(
                matrix_from_rows(rows)
                    .ok_or_else(|| Error::InvalidInput("ragged W matrix".into()))?,
            ),
            None => None,
        };
        let mut inputs = Vec::with_capacity(file.inputs.len());
        for (i, inp) in file.inputs.iter().enumerate() {
            let x = matrix_from_rows(&inp.x)
                .ok_or_else(|| Error::InvalidInput(format!("input {i}: ragged X")))?;
            if x.ncols() != file.d {
                return Err(Error::DimensionMismatch(format!(
                    "input {i}: X has {} columns but d = {}",
                    x.ncols(),
                    file.d
                )));
            }
            let k = match (&inp.k, &w) {
                (Some(rows), _) => matrix_from_rows(rows)
                    .ok_or_else(|| Error::InvalidInput(format!("input {i}: ragged K")))?,
                (None, Some(w)) => {
                    if w.shape() != (file.d, file.d) {
                        return Err(Error::DimensionMismatch(format!(
                            "W is {:?}, expected ({}, {})",
                            w.shape(),
                            file.d,
                            file.d
                        )));
                    }
                    &x * w.transpose()
                }
                (None, None) => x.clone(),
            };
            inputs.push(InputRecord::new(x, k, f64::from(inp.y))?);
        }
        TokenDataset::new(inputs, w)
    }
}

impl From<&TokenDataset> for DatasetFile {
    fn from(ds: &TokenDataset) -> Self {
        let derived = ds.key_query.is_some();
        DatasetFile {
            d: ds.dim,
            inputs: ds
                .inputs
                .iter()
                .map(|r| InputFile {
                    x: matrix_to_rows(&r.x),
                    k: (!derived).then(|| matrix_to_rows(&r.k)),
                    y: if r.y > 0.0 { 1 } else { -1 },
                })
                .collect(),
            w: ds.key_query.as_ref().map(matrix_to_rows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        let x = m(&[&[1.0, 0.0]]);
        assert!(InputRecord::self_keyed(x.clone(), 0.5).is_err());
        assert!(InputRecord::new(x.clone(), m(&[&[1.0, 0.0, 0.0]]), 1.0).is_err());
        assert!(InputRecord::new(Matrix::zeros(0, 2), Matrix::zeros(0, 2), 1.0).is_err());
        let a = InputRecord::self_keyed(x, 1.0).unwrap();
        let b = InputRecord::self_keyed(m(&[&[1.0, 0.0, 2.0]]), 1.0).unwrap();
        assert!(matches!(
            TokenDataset::new(vec![a, b], None),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn key_query_consistency_enforced() {
        let x = m(&[&[1.0, 2.0], &[0.0, 1.0]]);
        let w = Matrix::identity(2, 2) * 2.0;
        let ok = InputRecord::new(x.clone(), &x * w.transpose(), 1.0).unwrap();
        assert!(TokenDataset::new(vec![ok], Some(w.clone())).is_ok());
        let bad = InputRecord::self_keyed(x, 1.0).unwrap();
        assert!(TokenDataset::new(vec![bad], Some(w)).is_err());
    }

    #[test]
    fn json_materializes_keys_from_w() {
        let json = r#"{"d": 2, "W": [[1, 0], [0, 0]],
            "inputs": [{"X": [[1, 2], [3, 4]], "Y": -1}]}"#;
        let ds = TokenDataset::from_json_str(json).unwrap();
        assert_eq!(ds.inputs()[0].keys(), &m(&[&[1.0, 0.0], &[3.0, 0.0]]));
        assert_eq!(ds.inputs()[0].label(), -1.0);
        let back = TokenDataset::from_json_str(&ds.to_json_string().unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn json_explicit_keys_and_defaults() {
        let json = r#"{"d": 1, "inputs": [
            {"X": [[1], [2]], "K": [[5], [6]], "Y": 1},
            {"X": [[7]], "Y": 1}]}"#;
        let ds = TokenDataset::from_json_str(json).unwrap();
        assert_eq!(ds.inputs()[0].keys()[(1, 0)], 6.0);
        assert_eq!(ds.inputs()[1].keys()[(0, 0)], 7.0);
        assert_eq!(ds.token_counts(), vec![2, 1]);
        assert!(TokenDataset::from_json_str(r#"{"d": 1, "inputs": [{"X": [[1]], "Y": 0}]}"#).is_err());
    }
}
