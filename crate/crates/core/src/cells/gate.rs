use nalgebra::{DMatrix, DVector};

use super::{LayerRecord, Tensor};
use crate::error::{Error, Result};

/// One affine gate `W x + U h + b` of a gated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Gate {
    pub fn new(w: DMatrix<f64>, u: DMatrix<f64>, b: DVector<f64>, tag: &str) -> Result<Self> {
        let n = u.nrows();
        if n == 0 || u.ncols() != n {
            return Err(Error::dim(
                format!("U_{tag}"),
                "square n x n",
                format!("{}x{}", u.nrows(), u.ncols()),
            ));
        }
        if w.nrows() != n || w.ncols() == 0 {
            return Err(Error::dim(
                format!("W_{tag}"),
                format!("{n}xn_in"),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        if b.len() != n {
            return Err(Error::dim(format!("b_{tag}"), n, b.len()));
        }
        for (name, ok) in [
            ("W", w.iter().all(|v| v.is_finite())),
            ("U", u.iter().all(|v| v.is_finite())),
            ("b", b.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(format!("{name}_{tag}")));
            }
        }
        Ok(Gate { w, u, b })
    }

    pub fn zeros(n: usize, n_in: usize) -> Self {
        Gate {
            w: DMatrix::zeros(n, n_in),
            u: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_input(&self) -> usize {
        self.w.ncols()
    }

    pub fn pre(&self, x: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.u * h + &self.b
    }

    pub fn from_record(rec: &LayerRecord, tag: &str) -> Result<Self> {
        let n = rec.n_hidden;
        Gate::new(
            rec.matrix(&format!("W_{tag}"), n, rec.n_input)?,
            rec.matrix(&format!("U_{tag}"), n, n)?,
            rec.vector(&format!("b_{tag}"), n)?,
            tag,
        )
    }

    pub fn write_record(&self, rec: &mut LayerRecord, tag: &str) {
        rec.tensors.insert(format!("W_{tag}"), Tensor::from_matrix(&self.w));
        rec.tensors.insert(format!("U_{tag}"), Tensor::from_matrix(&self.u));
        rec.tensors.insert(format!("b_{tag}"), Tensor::from_vector(&self.b));
    }
}

pub(crate) fn check_same_shape(gates: &[(&Gate, &str)]) -> Result<()> {
    let (first, _) = gates[0];
    for (g, tag) in &gates[1..] {
        if g.n_hidden() != first.n_hidden() {
            return Err(Error::dim(format!("U_{tag}"), first.n_hidden(), g.n_hidden()));
        }
        if g.n_input() != first.n_input() {
            return Err(Error::dim(format!("W_{tag}"), first.n_input(), g.n_input()));
        }
    }
    Ok(())
}
