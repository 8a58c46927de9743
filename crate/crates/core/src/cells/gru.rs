use nalgebra::{DMatrix, DVector};

use super::gate::{check_same_shape, Gate};
use super::{check_inputs, LayerRecord, LayerState, Linearization, RecurrentCell};
use crate::error::Result;
use crate::linalg::{scale_rows, sech2, sigmoid, sigmoid_prime};

/// GRU with the reset gate applied before the candidate's recurrent matrix:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// ĥ = tanh(W_c x + U_c (r ∘ h) + b_c)
/// h' = (1 − z) ∘ h + z ∘ ĥ
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
}

struct Forward {
    y_z: DVector<f64>,
    y_r: DVector<f64>,
    y_c: DVector<f64>,
    z: DVector<f64>,
    r: DVector<f64>,
    cand: DVector<f64>,
}

impl GruCell {
    pub fn new(update: Gate, reset: Gate, candidate: Gate) -> Result<Self> {
        check_same_shape(&[(&update, "z"), (&reset, "r"), (&candidate, "c")])?;
        Ok(GruCell {
            update,
            reset,
            candidate,
        })
    }

    pub fn zeros(n: usize, n_in: usize) -> Self {
        GruCell {
            update: Gate::zeros(n, n_in),
            reset: Gate::zeros(n, n_in),
            candidate: Gate::zeros(n, n_in),
        }
    }

    pub fn from_record(rec: &LayerRecord) -> Result<Self> {
        GruCell::new(
            Gate::from_record(rec, "z")?,
            Gate::from_record(rec, "r")?,
            Gate::from_record(rec, "c")?,
        )
    }

    fn forward(&self, h: &DVector<f64>, x: &DVector<f64>) -> Forward {
        let y_z = self.update.pre(x, h);
        let y_r = self.reset.pre(x, h);
        let z = y_z.map(sigmoid);
        let r = y_r.map(sigmoid);
        let y_c = self.candidate.pre(x, &r.component_mul(h));
        let cand = y_c.map(f64::tanh);
        Forward {
            y_z,
            y_r,
            y_c,
            z,
            r,
            cand,
        }
    }

    fn next_h(fw: &Forward, h: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(h.len(), |k, _| (1.0 - fw.z[k]) * h[k] + fw.z[k] * fw.cand[k])
    }

    /// Returns (coefficient on M_z rows, coefficient on the candidate path,
    /// column scaling h ∘ σ'(y_r) applied between U_c and M_r).
    fn coefficients(fw: &Forward, h: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = h.len();
        let through_z = DVector::from_fn(n, |k, _| (fw.cand[k] - h[k]) * sigmoid_prime(fw.y_z[k]));
        let through_cand = DVector::from_fn(n, |k, _| fw.z[k] * sech2(fw.y_c[k]));
        let reset_scale = DVector::from_fn(n, |k, _| h[k] * sigmoid_prime(fw.y_r[k]));
        (through_z, through_cand, reset_scale)
    }

    fn d_state(&self, fw: &Forward, h: &DVector<f64>) -> DMatrix<f64> {
        let (through_z, through_cand, reset_scale) = Self::coefficients(fw, h);
        // ∂y_c/∂h = U_c diag(r) + U_c diag(h ∘ σ'(y_r)) U_r
        let mut uc_r = self.candidate.u.clone();
        for (j, mut col) in uc_r.column_iter_mut().enumerate() {
            col *= fw.r[j];
        }
        let mut uc_hr = self.candidate.u.clone();
        for (j, mut col) in uc_hr.column_iter_mut().enumerate() {
            col *= reset_scale[j];
        }
        let dy_c = uc_r + uc_hr * &self.reset.u;
        let mut out = scale_rows(&through_z, &self.update.u) + scale_rows(&through_cand, &dy_c);
        for k in 0..h.len() {
            out[(k, k)] += 1.0 - fw.z[k];
        }
        out
    }

    fn d_input(&self, fw: &Forward, h: &DVector<f64>) -> DMatrix<f64> {
        let (through_z, through_cand, reset_scale) = Self::coefficients(fw, h);
        let mut uc_hr = self.candidate.u.clone();
        for (j, mut col) in uc_hr.column_iter_mut().enumerate() {
            col *= reset_scale[j];
        }
        let dy_c = &self.candidate.w + uc_hr * &self.reset.w;
        scale_rows(&through_z, &self.update.w) + scale_rows(&through_cand, &dy_c)
    }
}

impl RecurrentCell for GruCell {
    fn arch(&self) -> &'static str {
        "gru"
    }

    fn n_hidden(&self) -> usize {
        self.update.n_hidden()
    }

    fn n_input(&self) -> usize {
        self.update.n_input()
    }

    fn step(&self, state: &LayerState, x: &DVector<f64>) -> Result<LayerState> {
        check_inputs(self, state, x)?;
        let fw = self.forward(&state.h, x);
        Ok(LayerState {
            h: Self::next_h(&fw, &state.h),
            c: None,
        })
    }

    fn jacobian_state(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_inputs(self, state, x)?;
        let fw = self.forward(&state.h, x);
        Ok(self.d_state(&fw, &state.h))
    }

    fn jacobian_input(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_inputs(self, state, x)?;
        let fw = self.forward(&state.h, x);
        Ok(self.d_input(&fw, &state.h))
    }

    fn linearize(&self, state: &LayerState, x: &DVector<f64>) -> Result<Linearization> {
        check_inputs(self, state, x)?;
        let fw = self.forward(&state.h, x);
        Ok(Linearization {
            next: LayerState {
                h: Self::next_h(&fw, &state.h),
                c: None,
            },
            d_state: self.d_state(&fw, &state.h),
            d_input: self.d_input(&fw, &state.h),
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
        self.update.write_record(&mut rec, "z");
        self.reset.write_record(&mut rec, "r");
        self.candidate.write_record(&mut rec, "c");
        rec
    }

    fn clone_box(&self) -> Box<dyn RecurrentCell> {
        Box::new(self.clone())
    }
}
