//! Recurrent cells: forward step maps and analytical Jacobians.
//!
//! Each architecture implements [`RecurrentCell`] and is constructed through
//! a [`CellFactory`] registered by name in a [`CellRegistry`]. Layers are
//! stacked into a [`Network`], whose state Jacobian is block lower-triangular.

mod gate;
mod gru;
mod lstm;
mod record;
mod registry;
mod vanilla;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use gate::Gate;
pub use gru::GruCell;
pub use lstm::LstmCell;
pub use record::{LayerRecord, Nonlinearity, Tensor};
pub use registry::{CellFactory, CellRegistry, CellSpec, GruFactory, LstmFactory, VanillaFactory};
pub use vanilla::VanillaCell;

/// Hidden state of one layer. `c` is present only for cells that carry a
/// separate memory vector (LSTM).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: DVector<f64>,
    pub c: Option<DVector<f64>>,
}

impl LayerState {
    pub fn zeros(n: usize, with_cell: bool) -> Self {
        LayerState {
            h: DVector::zeros(n),
            c: with_cell.then(|| DVector::zeros(n)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| v.is_finite()) && self.c.as_ref().is_none_or(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer states of a stacked network at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub layers: Vec<LayerState>,
}

impl NetState {
    /// All hidden vectors concatenated, layer 1 first.
    pub fn stacked_h(&self) -> DVector<f64> {
        let n: usize = self.layers.iter().map(|l| l.h.len()).sum();
        let mut out = DVector::zeros(n);
        let mut off = 0;
        for layer in &self.layers {
            out.rows_mut(off, layer.h.len()).copy_from(&layer.h);
            off += layer.h.len();
        }
        out
    }
}

/// Everything the estimator needs from one layer at one time step.
pub struct Linearization {
    pub next: LayerState,
    /// ∂h_t/∂h_{t−1}
    pub d_state: DMatrix<f64>,
    /// ∂h_t/∂x_t
    pub d_input: DMatrix<f64>,
}

pub trait RecurrentCell: Send + Sync + fmt::Debug {
    /// Registry name of the architecture.
    fn arch(&self) -> &'static str;
    fn n_hidden(&self) -> usize;
    fn n_input(&self) -> usize;

    fn has_cell_state(&self) -> bool {
        false
    }

    fn step(&self, state: &LayerState, x: &DVector<f64>) -> Result<LayerState>;

    /// ∂h_t/∂h_{t−1} evaluated at the pre-update state. For cells with a
    /// memory vector, `c_{t−1}` is held fixed.
    fn jacobian_state(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// ∂h_t/∂x_t, an `n_hidden × n_input` matrix.
    fn jacobian_input(&self, state: &LayerState, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn linearize(&self, state: &LayerState, x: &DVector<f64>) -> Result<Linearization> {
        Ok(Linearization {
            next: self.step(state, x)?,
            d_state: self.jacobian_state(state, x)?,
            d_input: self.jacobian_input(state, x)?,
        })
    }

    fn to_record(&self) -> LayerRecord;

    fn clone_box(&self) -> Box<dyn RecurrentCell>;
}

impl Clone for Box<dyn RecurrentCell> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub(crate) fn check_inputs(cell: &dyn RecurrentCell, state: &LayerState, x: &DVector<f64>) -> Result<()> {
    if state.h.len() != cell.n_hidden() {
        return Err(Error::dim("h", cell.n_hidden(), state.h.len()));
    }
    if x.len() != cell.n_input() {
        return Err(Error::dim("x", cell.n_input(), x.len()));
    }
    match (&state.c, cell.has_cell_state()) {
        (None, true) => Err(Error::Config(format!(
            "{} layer state must carry a cell vector c",
            cell.arch()
        ))),
        (Some(c), true) if c.len() != cell.n_hidden() => Err(Error::dim("c", cell.n_hidden(), c.len())),
        _ => Ok(()),
    }
}

/// A stack of recurrent layers; layer k ≥ 2 is driven by the hidden state
/// of layer k − 1 at the same time step.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Box<dyn RecurrentCell>>,
}

impl Network {
    pub fn new(layers: Vec<Box<dyn RecurrentCell>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].n_input() != pair[0].n_hidden() {
                return Err(Error::dim(
                    format!("layer {} input", k + 2),
                    pair[0].n_hidden(),
                    pair[1].n_input(),
                ));
            }
        }
        Ok(Network { layers })
    }

    pub fn single(cell: Box<dyn RecurrentCell>) -> Self {
        Network { layers: vec![cell] }
    }

    pub fn layers(&self) -> &[Box<dyn RecurrentCell>] {
        &self.layers
    }

    pub fn n_input(&self) -> usize {
        self.layers[0].n_input()
    }

    /// Side of the stacked state Jacobian.
    pub fn total_hidden(&self) -> usize {
        self.layers.iter().map(|l| l.n_hidden()).sum()
    }

    pub fn zero_state(&self) -> NetState {
        NetState {
            layers: self
                .layers
                .iter()
                .map(|l| LayerState::zeros(l.n_hidden(), l.has_cell_state()))
                .collect(),
        }
    }

    fn check_state(&self, state: &NetState) -> Result<()> {
        if state.layers.len() != self.layers.len() {
            return Err(Error::dim("layer count", self.layers.len(), state.layers.len()));
        }
        Ok(())
    }

    pub fn step(&self, state: &NetState, x: &DVector<f64>) -> Result<NetState> {
        self.check_state(state)?;
        let mut next = Vec::with_capacity(self.layers.len());
        let mut input = x.clone();
        for (cell, layer_state) in self.layers.iter().zip(&state.layers) {
            let s = cell.step(layer_state, &input)?;
            input = s.h.clone();
            next.push(s);
        }
        Ok(NetState { layers: next })
    }

    /// Advances the state by one step and returns the stacked Jacobian
    /// ∂h_t/∂h_{t−1} evaluated at the pre-update state.
    pub fn advance(&self, state: &NetState, x: &DVector<f64>) -> Result<(NetState, DMatrix<f64>)> {
        self.check_state(state)?;
        let n = self.total_hidden();
        let mut jac = DMatrix::<f64>::zeros(n, n);
        let mut next = Vec::with_capacity(self.layers.len());
        let mut input = x.clone();
        let mut prev_off = 0;
        let mut off = 0;
        for (k, (cell, layer_state)) in self.layers.iter().zip(&state.layers).enumerate() {
            let lin = cell.linearize(layer_state, &input)?;
            let nk = cell.n_hidden();
            if k > 0 {
                // Block row k, columns of layers j < k: ∂h^k/∂x^k times block row k−1.
                let prev_n = self.layers[k - 1].n_hidden();
                let above = jac.view((prev_off, 0), (prev_n, off)).clone_owned();
                let composed = &lin.d_input * above;
                jac.view_mut((off, 0), (nk, off)).copy_from(&composed);
            }
            jac.view_mut((off, off), (nk, nk)).copy_from(&lin.d_state);
            input = lin.next.h.clone();
            next.push(lin.next);
            prev_off = off;
            off += nk;
        }
        Ok((NetState { layers: next }, jac))
    }

    /// Full Jacobian of the stacked hidden state with respect to its value
    /// at the previous step.
    pub fn stacked_jacobian(&self, state: &NetState, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.advance(state, x).map(|(_, j)| j)
    }

    /// Hex SHA-256 over all parameters, layer by layer.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for cell in &self.layers {
            let rec = cell.to_record();
            hasher.update(rec.arch.as_bytes());
            hasher.update((rec.n_hidden as u64).to_le_bytes());
            hasher.update((rec.n_input as u64).to_le_bytes());
            if let Some(nl) = rec.nonlinearity {
                hasher.update(nl.name().as_bytes());
            }
            for (name, tensor) in &rec.tensors {
                hasher.update(name.as_bytes());
                let values: Vec<f64> = match tensor {
                    Tensor::Vector(v) => v.clone(),
                    Tensor::Matrix(rows) => rows.iter().flatten().copied().collect(),
                };
                for v in values {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Central-difference ∂h_t/∂h_{t−1} of a single cell; `c` is held fixed.
pub fn finite_difference_jacobian(
    cell: &dyn RecurrentCell,
    state: &LayerState,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let n = cell.n_hidden();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = state.clone();
        plus.h[j] += eps;
        let mut minus = state.clone();
        minus.h[j] -= eps;
        let col = (cell.step(&plus, x)?.h - cell.step(&minus, x)?.h) / (2.0 * eps);
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Central-difference ∂h_t/∂x_t of a single cell.
pub fn finite_difference_input_jacobian(
    cell: &dyn RecurrentCell,
    state: &LayerState,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let mut out = DMatrix::zeros(cell.n_hidden(), cell.n_input());
    for j in 0..cell.n_input() {
        let mut plus = x.clone();
        plus[j] += eps;
        let mut minus = x.clone();
        minus[j] -= eps;
        let col = (cell.step(state, &plus)?.h - cell.step(state, &minus)?.h) / (2.0 * eps);
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Central-difference Jacobian of the composed stacked step with respect to
/// the concatenated hidden state; every `c` is held fixed.
pub fn finite_difference_stacked_jacobian(
    net: &Network,
    state: &NetState,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    check_eps(eps)?;
    let n = net.total_hidden();
    let mut out = DMatrix::zeros(n, n);
    let mut col_index = 0;
    for (k, layer) in state.layers.iter().enumerate() {
        for j in 0..layer.h.len() {
            let mut plus = state.clone();
            plus.layers[k].h[j] += eps;
            let mut minus = state.clone();
            minus.layers[k].h[j] -= eps;
            let col = (net.step(&plus, x)?.stacked_h() - net.step(&minus, x)?.stacked_h()) / (2.0 * eps);
            out.set_column(col_index, &col);
            col_index += 1;
        }
    }
    Ok(out)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )))
    }
}

/// Largest entrywise error `|a − b| / max(|b|, floor)`.
///
/// The floor keeps entries that are zero up to rounding from dominating.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{init_uniform, RngSpec, StreamKind, WeightInit};
    use crate::linalg::sech2;
    use proptest::prelude::*;

    fn identity_layer(n: usize, u: DMatrix<f64>) -> Box<dyn RecurrentCell> {
        Box::new(VanillaCell::new(DMatrix::identity(n, n), u, DVector::zeros(n), Nonlinearity::Identity).unwrap())
    }

    fn uniform_state(cell: &dyn RecurrentCell, rng: &mut crate::ensembles::StreamRng) -> LayerState {
        let n = cell.n_hidden();
        LayerState {
            h: init_uniform(n, 1, 1.0, rng).column(0).into_owned(),
            c: cell
                .has_cell_state()
                .then(|| init_uniform(n, 1, 1.0, rng).column(0).into_owned()),
        }
    }

    fn random_net(archs: &[&str], n: usize, seed: u64) -> (Network, NetState, DVector<f64>) {
        let registry = CellRegistry::builtin();
        let mut rng = RngSpec::new(seed).stream(StreamKind::Weights, 0);
        let spec = CellSpec {
            n_hidden: n,
            n_input: n,
            nonlinearity: Nonlinearity::Tanh,
        };
        let layers = archs
            .iter()
            .map(|a| {
                registry
                    .get(a)
                    .unwrap()
                    .random(&spec, &WeightInit::Uniform { p: 1.0 }, &mut rng)
                    .unwrap()
            })
            .collect();
        let net = Network::new(layers).unwrap();
        let state = NetState {
            layers: net
                .layers()
                .iter()
                .map(|c| uniform_state(c.as_ref(), &mut rng))
                .collect(),
        };
        let x = init_uniform(n, 1, 1.0, &mut rng).column(0).into_owned();
        (net, state, x)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn analytic_jacobians_match_finite_differences(seed in any::<u64>(), arch in 0usize..3) {
            let name = ["vanilla", "lstm", "gru"][arch];
            let (net, state, x) = random_net(&[name], 4, seed);
            let cell = net.layers()[0].as_ref();
            let s = &state.layers[0];
            let js = cell.jacobian_state(s, &x).unwrap();
            let fs = finite_difference_jacobian(cell, s, &x, 1e-5).unwrap();
            prop_assert!(max_relative_error(&js, &fs, 1e-3) < 1e-5);
            let jx = cell.jacobian_input(s, &x).unwrap();
            let fx = finite_difference_input_jacobian(cell, s, &x, 1e-5).unwrap();
            prop_assert!(max_relative_error(&jx, &fx, 1e-3) < 1e-5);
        }

        #[test]
        fn stacked_jacobian_is_block_lower_triangular(seed in any::<u64>()) {
            let (net, state, x) = random_net(&["gru", "lstm", "vanilla"], 3, seed);
            let j = net.stacked_jacobian(&state, &x).unwrap();
            for r in 0..9 {
                for c in 0..9 {
                    if c / 3 > r / 3 {
                        prop_assert_eq!(j[(r, c)], 0.0);
                    }
                }
            }
            let fd = finite_difference_stacked_jacobian(&net, &state, &x, 1e-5).unwrap();
            prop_assert!(max_relative_error(&j, &fd, 1e-3) < 1e-5);
        }

        #[test]
        fn vanilla_jacobian_is_exactly_scaled_rows(seed in any::<u64>()) {
            let mut rng = RngSpec::new(seed).stream(StreamKind::Weights, 0);
            let v = init_uniform(5, 5, 1.0, &mut rng);
            let u = init_uniform(5, 2, 1.0, &mut rng);
            let b = init_uniform(5, 1, 1.0, &mut rng).column(0).into_owned();
            let h = init_uniform(5, 1, 1.0, &mut rng).column(0).into_owned();
            let x = init_uniform(2, 1, 1.0, &mut rng).column(0).into_owned();
            let a = &v * &h + &u * &x + &b;
            let cell = VanillaCell::new(v.clone(), u, b, Nonlinearity::Tanh).unwrap();
            let j = cell.jacobian_state(&LayerState { h, c: None }, &x).unwrap();
            for r in 0..5 {
                for c in 0..5 {
                    prop_assert_eq!(j[(r, c)], sech2(a[r]) * v[(r, c)]);
                }
            }
        }

        #[test]
        fn step_is_deterministic(seed in any::<u64>(), arch in 0usize..3) {
            let name = ["vanilla", "lstm", "gru"][arch];
            let (net, state, x) = random_net(&[name, name], 3, seed);
            prop_assert_eq!(net.step(&state, &x).unwrap(), net.step(&state, &x).unwrap());
            prop_assert_eq!(net.advance(&state, &x).unwrap().1, net.advance(&state, &x).unwrap().1);
        }
    }

    #[test]
    fn identity_layers_compose_to_identity_blocks() {
        let net = Network::new(vec![
            identity_layer(2, DMatrix::zeros(2, 1)),
            identity_layer(2, DMatrix::identity(2, 2)),
        ])
        .unwrap();
        let j = net.stacked_jacobian(&net.zero_state(), &DVector::zeros(1)).unwrap();
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(j.view((0, 0), (2, 2)), i2);
        assert_eq!(j.view((2, 2), (2, 2)), i2);
        assert_eq!(j.view((2, 0), (2, 2)), i2);
        assert_eq!(j.view((0, 2), (2, 2)), DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn single_layer_stack_is_the_cell_jacobian() {
        let (net, state, x) = random_net(&["lstm"], 4, 11);
        let j = net.stacked_jacobian(&state, &x).unwrap();
        assert_eq!(j, net.layers()[0].jacobian_state(&state.layers[0], &x).unwrap());
    }

    #[test]
    fn layer_chain_mismatch_is_rejected() {
        let err = Network::new(vec![
            identity_layer(2, DMatrix::zeros(2, 1)),
            identity_layer(3, DMatrix::zeros(3, 3)),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("layer 2 input"), "{err}");
    }

    #[test]
    fn finite_differences_of_linear_map_are_exact() {
        let v = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let cell = VanillaCell::new(
            v.clone(),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            Nonlinearity::Identity,
        )
        .unwrap();
        let state = LayerState {
            h: DVector::from_vec(vec![1.0, 2.0]),
            c: None,
        };
        let fd = finite_difference_jacobian(&cell, &state, &DVector::zeros(2), 1e-5).unwrap();
        assert!(max_relative_error(&fd, &v, 1e-3) < 1e-9);
    }

    #[test]
    fn finite_difference_tanh_slope_at_origin() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let cell = VanillaCell::new(one.clone(), one, DVector::zeros(1), Nonlinearity::Tanh).unwrap();
        let state = LayerState::zeros(1, false);
        let fd = finite_difference_jacobian(&cell, &state, &DVector::zeros(1), 1e-5).unwrap();
        assert!((fd[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(finite_difference_jacobian(&cell, &state, &DVector::zeros(1), 0.0).is_err());
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let (a, _, _) = random_net(&["gru"], 3, 1);
        let (b, _, _) = random_net(&["gru"], 3, 2);
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
