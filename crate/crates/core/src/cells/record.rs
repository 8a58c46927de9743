use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element-wise nonlinearity of a vanilla layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Identity,
}

impl Nonlinearity {
    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" => Ok(Nonlinearity::Identity),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

/// A named parameter: a bias vector or a row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tensor {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Tensor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Tensor::Matrix(m.row_iter().map(|row| row.iter().copied().collect()).collect())
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Tensor::Vector(v.iter().copied().collect())
    }
}

/// Architecture-neutral bundle of one layer's parameters, the unit that
/// weight files store and the cell registry builds from.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub arch: String,
    pub n_hidden: usize,
    pub n_input: usize,
    pub nonlinearity: Option<Nonlinearity>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl LayerRecord {
    pub fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let rows_data = match self.tensors.get(name) {
            Some(Tensor::Matrix(rows)) => rows,
            Some(Tensor::Vector(_)) => return Err(Error::dim(name, format!("{rows}x{cols} matrix"), "vector")),
            None => return Err(Error::Config(format!("missing parameter `{name}`"))),
        };
        if rows_data.len() != rows {
            return Err(Error::dim(name, format!("{rows} rows"), rows_data.len()));
        }
        for (i, row) in rows_data.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim(
                    format!("{name} row {i}"),
                    format!("{cols} columns"),
                    row.len(),
                ));
            }
        }
        let m = DMatrix::from_fn(rows, cols, |i, j| rows_data[i][j]);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(m)
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<DVector<f64>> {
        let data = match self.tensors.get(name) {
            Some(Tensor::Vector(v)) => v,
            Some(Tensor::Matrix(_)) => return Err(Error::dim(name, format!("vector of length {len}"), "matrix")),
            None => return Err(Error::Config(format!("missing parameter `{name}`"))),
        };
        if data.len() != len {
            return Err(Error::dim(name, len, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(DVector::from_column_slice(data))
    }

    pub fn optional_matrix(&self, name: &str, cols: usize) -> Result<Option<DMatrix<f64>>> {
        match self.tensors.get(name) {
            None => Ok(None),
            Some(Tensor::Matrix(rows)) => self.matrix(name, rows.len(), cols).map(Some),
            Some(Tensor::Vector(_)) => Err(Error::dim(name, "matrix", "vector")),
        }
    }
}
