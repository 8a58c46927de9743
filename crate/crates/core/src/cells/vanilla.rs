use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{check_inputs, LayerRecord, LayerState, Linearization, Nonlinearity, RecurrentCell, Tensor};
use crate::error::{Error, Result};
use crate::linalg::{scale_rows, sech2};

/// `h_t = φ(V h_{t−1} + U x_t + b)`, with an optional unused readout `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaCell {
    pub v: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub b: DVector<f64>,
    pub nonlinearity: Nonlinearity,
    pub readout: Option<DMatrix<f64>>,
}

impl VanillaCell {
    pub fn new(v: DMatrix<f64>, u: DMatrix<f64>, b: DVector<f64>, nonlinearity: Nonlinearity) -> Result<Self> {
        let n = v.nrows();
        if n == 0 {
            return Err(Error::dim("V", "at least 1 row", 0));
        }
        if v.ncols() != n {
            return Err(Error::dim("V", format!("{n}x{n}"), format!("{}x{}", n, v.ncols())));
        }
        if u.nrows() != n || u.ncols() == 0 {
            return Err(Error::dim(
                "U",
                format!("{n}xn_in"),
                format!("{}x{}", u.nrows(), u.ncols()),
            ));
        }
        if b.len() != n {
            return Err(Error::dim("b", n, b.len()));
        }
        for (name, ok) in [
            ("V", v.iter().all(|x| x.is_finite())),
            ("U", u.iter().all(|x| x.is_finite())),
            ("b", b.iter().all(|x| x.is_finite())),
        ] {
            if !ok {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(VanillaCell {
            v,
            u,
            b,
            nonlinearity,
            readout: None,
        })
    }

    pub fn with_readout(mut self, w: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != self.v.nrows() {
            return Err(Error::dim("W", format!("n_out x {}", self.v.nrows()), w.ncols()));
        }
        self.readout = Some(w);
        Ok(self)
    }

    pub fn from_record(rec: &LayerRecord) -> Result<Self> {
        let n = rec.n_hidden;
        let cell = VanillaCell::new(
            rec.matrix("V", n, n)?,
            rec.matrix("U", n, rec.n_input)?,
            rec.vector("b", n)?,
            rec.nonlinearity.unwrap_or(Nonlinearity::Tanh),
        )?;
        match rec.optional_matrix("W", n)? {
            Some(w) => cell.with_readout(w),
            None => Ok(cell),
        }
    }

    fn preactivation(&self, state: &LayerState, x: &DVector<f64>) -> DVector<f64> {
        &self.v * &state.h + &self.u * x + &self.b
    }

    /// Returns `(φ(a), φ′(a))`.
    fn activate(&self, a: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match self.nonlinearity {
            Nonlinearity::Tanh => (a.map(f64::tanh), a.map(sech2)),
            Nonlinearity::Identity => (a.clone(), DVector::from_element(a.len(), 1.0)),
        }
    }
}

impl RecurrentCell for VanillaCell {
    fn arch(&self) -> &'static str {
        "vanilla"
    }

    fn n_hidden(&self) -> usize {
        self.v.nrows()
    }

    fn n_input(&self) -> usize {
        self.u.ncols()
    }

    fn step(&self, state: &LayerState, x: &DVector<f64>) -> Result<LayerState> {
        check_inputs(self, state, x)?;
        let (h, _) = self.activate(&self.preactivation(state, x));
        Ok(LayerState { h, c: None })
    }

    fn jacobian_state(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_inputs(self, state, x)?;
        let (_, d) = self.activate(&self.preactivation(state, x));
        Ok(scale_rows(&d, &self.v))
    }

    fn jacobian_input(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_inputs(self, state, x)?;
        let (_, d) = self.activate(&self.preactivation(state, x));
        Ok(scale_rows(&d, &self.u))
    }

    fn linearize(&self, state: &LayerState, x: &DVector<f64>) -> Result<Linearization> {
        check_inputs(self, state, x)?;
        let (h, d) = self.activate(&self.preactivation(state, x));
        Ok(Linearization {
            next: LayerState { h, c: None },
            d_state: scale_rows(&d, &self.v),
            d_input: scale_rows(&d, &self.u),
        })
    }

    fn to_record(&self) -> LayerRecord {
        let mut tensors = BTreeMap::new();
        tensors.insert("V".to_string(), Tensor::from_matrix(&self.v));
        tensors.insert("U".to_string(), Tensor::from_matrix(&self.u));
        tensors.insert("b".to_string(), Tensor::from_vector(&self.b));
        if let Some(w) = &self.readout {
            tensors.insert("W".to_string(), Tensor::from_matrix(w));
        }
        LayerRecord {
            arch: self.arch().to_string(),
            n_hidden: self.n_hidden(),
            n_input: self.n_input(),
            nonlinearity: Some(self.nonlinearity),
            tensors,
        }
    }

    fn clone_box(&self) -> Box<dyn RecurrentCell> {
        Box::new(self.clone())
    }
}
