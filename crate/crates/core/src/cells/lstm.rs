use nalgebra::{DMatrix, DVector};

use super::gate::{check_same_shape, Gate};
use super::{check_inputs, LayerRecord, LayerState, Linearization, RecurrentCell};
use crate::error::Result;
use crate::linalg::{scale_rows, sech2, sigmoid, sigmoid_prime};

/// Standard LSTM:
///
/// ```text
/// f = σ(y_f)  i = σ(y_i)  o = σ(y_o)  g = tanh(y_c)      y_* = W_* x + U_* h + b_*
/// c' = f ∘ c + i ∘ g
/// h' = o ∘ tanh(c')
/// ```
///
/// Jacobians are taken with respect to `h` only; `c_{t−1}` is supplied by
/// the trajectory and held fixed, so the spectrum has `n_hidden` exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub forget: Gate,
    pub input: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

struct Forward {
    y_f: DVector<f64>,
    y_i: DVector<f64>,
    y_o: DVector<f64>,
    y_c: DVector<f64>,
    f: DVector<f64>,
    i: DVector<f64>,
    o: DVector<f64>,
    g: DVector<f64>,
    c: DVector<f64>,
    tanh_c: DVector<f64>,
}

impl LstmCell {
    pub fn new(forget: Gate, input: Gate, output: Gate, candidate: Gate) -> Result<Self> {
        check_same_shape(&[(&forget, "f"), (&input, "i"), (&output, "o"), (&candidate, "c")])?;
        Ok(LstmCell {
            forget,
            input,
            output,
            candidate,
        })
    }

    pub fn zeros(n: usize, n_in: usize) -> Self {
        LstmCell {
            forget: Gate::zeros(n, n_in),
            input: Gate::zeros(n, n_in),
            output: Gate::zeros(n, n_in),
            candidate: Gate::zeros(n, n_in),
        }
    }

    pub fn from_record(rec: &LayerRecord) -> Result<Self> {
        LstmCell::new(
            Gate::from_record(rec, "f")?,
            Gate::from_record(rec, "i")?,
            Gate::from_record(rec, "o")?,
            Gate::from_record(rec, "c")?,
        )
    }

    fn forward(&self, state: &LayerState, x: &DVector<f64>) -> Forward {
        let h = &state.h;
        let c_prev = state.c.as_ref().expect("checked by check_inputs");
        let y_f = self.forget.pre(x, h);
        let y_i = self.input.pre(x, h);
        let y_o = self.output.pre(x, h);
        let y_c = self.candidate.pre(x, h);
        let f = y_f.map(sigmoid);
        let i = y_i.map(sigmoid);
        let o = y_o.map(sigmoid);
        let g = y_c.map(f64::tanh);
        let c = f.component_mul(c_prev) + i.component_mul(&g);
        let tanh_c = c.map(f64::tanh);
        Forward {
            y_f,
            y_i,
            y_o,
            y_c,
            f,
            i,
            o,
            g,
            c,
            tanh_c,
        }
    }

    /// Shared form of ∂h'/∂h and ∂h'/∂x; `pick` selects U_* or W_*.
    fn derivative(&self, fw: &Forward, c_prev: &DVector<f64>, pick: impl Fn(&Gate) -> &DMatrix<f64>) -> DMatrix<f64> {
        let n = fw.f.len();
        // ∂h'/∂(·) = diag(σ'(y_o) tanh c') M_o + diag(o sech² c') ∂c'/∂(·)
        // ∂c'/∂(·) = diag(σ'(y_f) c) M_f + diag(σ'(y_i) g) M_i + diag(i sech² y_c) M_c
        let mut coef_o = DVector::zeros(n);
        let mut coef_f = DVector::zeros(n);
        let mut coef_i = DVector::zeros(n);
        let mut coef_c = DVector::zeros(n);
        for k in 0..n {
            let through_c = fw.o[k] * sech2(fw.c[k]);
            coef_o[k] = sigmoid_prime(fw.y_o[k]) * fw.tanh_c[k];
            coef_f[k] = through_c * sigmoid_prime(fw.y_f[k]) * c_prev[k];
            coef_i[k] = through_c * sigmoid_prime(fw.y_i[k]) * fw.g[k];
            coef_c[k] = through_c * fw.i[k] * sech2(fw.y_c[k]);
        }
        scale_rows(&coef_o, pick(&self.output))
            + scale_rows(&coef_f, pick(&self.forget))
            + scale_rows(&coef_i, pick(&self.input))
            + scale_rows(&coef_c, pick(&self.candidate))
    }
}

impl RecurrentCell for LstmCell {
    fn arch(&self) -> &'static str {
        "lstm"
    }

    fn n_hidden(&self) -> usize {
        self.forget.n_hidden()
    }

    fn n_input(&self) -> usize {
        self.forget.n_input()
    }

    fn has_cell_state(&self) -> bool {
        true
    }

    fn step(&self, state: &LayerState, x: &DVector<f64>) -> Result<LayerState> {
        check_inputs(self, state, x)?;
        let fw = self.forward(state, x);
        Ok(LayerState {
            h: fw.o.component_mul(&fw.tanh_c),
            c: Some(fw.c),
        })
    }

    fn jacobian_state(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_inputs(self, state, x)?;
        let fw = self.forward(state, x);
        Ok(self.derivative(&fw, state.c.as_ref().unwrap(), |g| &g.u))
    }

    fn jacobian_input(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_inputs(self, state, x)?;
        let fw = self.forward(state, x);
        Ok(self.derivative(&fw, state.c.as_ref().unwrap(), |g| &g.w))
    }

    fn linearize(&self, state: &LayerState, x: &DVector<f64>) -> Result<Linearization> {
        check_inputs(self, state, x)?;
        let fw = self.forward(state, x);
        let c_prev = state.c.as_ref().unwrap();
        let d_state = self.derivative(&fw, c_prev, |g| &g.u);
        let d_input = self.derivative(&fw, c_prev, |g| &g.w);
        Ok(Linearization {
            next: LayerState {
                h: fw.o.component_mul(&fw.tanh_c),
                c: Some(fw.c),
            },
            d_state,
            d_input,
        })
    }

    fn to_record(&self) -> LayerRecord {
        let mut rec = LayerRecord {
            arch: self.arch().to_string(),
            n_hidden: self.n_hidden(),
            n_input: self.n_input(),
            nonlinearity: None,
            tensors: Default::default(),
        };
        self.forget.write_record(&mut rec, "f");
        self.input.write_record(&mut rec, "i");
        self.output.write_record(&mut rec, "o");
        self.candidate.write_record(&mut rec, "c");
        rec
    }

    fn clone_box(&self) -> Box<dyn RecurrentCell> {
        Box::new(self.clone())
    }
}
