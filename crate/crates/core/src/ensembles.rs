//! Seeded generators for weights, input sequences and initial states.
//!
//! # Random stream scheme
//!
//! Every generated object draws from its own ChaCha20 stream. The generator
//! for `(seed, kind, index)` is `ChaCha20Rng::seed_from_u64(seed)` with the
//! stream id set to `(kind << 32) | index`, where `kind` is 1 for layer
//! weights (index = layer, 0-based), 2 for input sequences (index = batch
//! position) and 3 for initial states (index = batch position). Normal
//! variates come from `rand_distr::StandardNormal`, scaled by `sqrt(σ²)`.
//! The scheme is part of the reproducibility contract: changing it changes
//! every seeded result.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::cells::{LayerState, NetState, Network};
use crate::error::{Error, Result};
use crate::linalg::qr_positive;

pub type StreamRng = ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Weights = 1,
    Inputs = 2,
    InitialStates = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        RngSpec { seed }
    }

    pub fn stream(&self, kind: StreamKind, index: u32) -> StreamRng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(((kind as u64) << 32) | u64::from(index));
        rng
    }
}

/// Weight initialization family. Orthogonal takes the squared gain, so
/// `Orthogonal { gain_sq: 500.0 }` yields singular values `sqrt(500)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    Orthogonal { gain_sq: f64 },
    Uniform { p: f64 },
    Gaussian { sigma2: f64 },
}

impl WeightInit {
    pub fn validate(&self) -> Result<()> {
        let (name, value, strictly) = match *self {
            WeightInit::Orthogonal { gain_sq } => ("orthogonal gain²", gain_sq, true),
            WeightInit::Uniform { p } => ("uniform p", p, false),
            WeightInit::Gaussian { sigma2 } => ("gaussian σ²", sigma2, false),
        };
        let ok = value.is_finite() && if strictly { value > 0.0 } else { value >= 0.0 };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid {name}: {value}")))
        }
    }

    /// Recurrent (square) matrix.
    pub fn square(&self, n: usize, rng: &mut StreamRng) -> DMatrix<f64> {
        match *self {
            WeightInit::Orthogonal { gain_sq } => init_orthogonal(n, gain_sq.sqrt(), rng),
            WeightInit::Uniform { p } => init_uniform(n, n, p, rng),
            WeightInit::Gaussian { sigma2 } => init_gaussian(n, n, sigma2, rng),
        }
    }
}

impl std::str::FromStr for WeightInit {
    type Err = Error;

    /// Parses `orthogonal:<g²>`, `uniform:<p>` or `gaussian:<σ²>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected <kind>:<value>, got `{s}`")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("invalid number `{value}` in `{s}`")))?;
        let init = match kind {
            "orthogonal" => WeightInit::Orthogonal { gain_sq: value },
            "uniform" => WeightInit::Uniform { p: value },
            "gaussian" => WeightInit::Gaussian { sigma2: value },
            other => return Err(Error::Config(format!("unknown init `{other}`"))),
        };
        init.validate()?;
        Ok(init)
    }
}

/// `gain · Q` with `Q` Haar-distributed: QR of a standard Gaussian matrix
/// with the R diagonal made positive.
pub fn init_orthogonal(n: usize, gain: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    let a = init_gaussian(n, n, 1.0, rng);
    let (q, _) = qr_positive(&a);
    q * gain
}

pub fn init_uniform(rows: usize, cols: usize, p: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    if p == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    // Row-major draw order.
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-p..=p)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn init_gaussian(rows: usize, cols: usize, sigma2: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    let sd = sigma2.sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn gaussian_vector(n: usize, sigma2: f64, rng: &mut StreamRng) -> DVector<f64> {
    let sd = sigma2.sqrt();
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// `batch` i.i.d. Gaussian sequences, each `t_total × n_in`, one stream per
/// batch index.
pub fn gen_inputs(t_total: usize, n_in: usize, sigma2_x: f64, batch: usize, rng: &RngSpec) -> Vec<DMatrix<f64>> {
    (0..batch)
        .map(|j| {
            let mut stream = rng.stream(StreamKind::Inputs, j as u32);
            init_gaussian(t_total, n_in, sigma2_x, &mut stream)
        })
        .collect()
}

/// `count` Gaussian initial states for `net`; memory vectors start at zero.
pub fn gen_initial_states(net: &Network, sigma2_h0: f64, count: usize, rng: &RngSpec) -> Vec<NetState> {
    (0..count)
        .map(|j| {
            let mut stream = rng.stream(StreamKind::InitialStates, j as u32);
            NetState {
                layers: net
                    .layers()
                    .iter()
                    .map(|cell| {
                        let n = cell.n_hidden();
                        LayerState {
                            h: gaussian_vector(n, sigma2_h0, &mut stream),
                            c: cell.has_cell_state().then(|| DVector::zeros(n)),
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_error;

    #[test]
    fn orthogonal_scalar() {
        let mut rng = RngSpec::new(3).stream(StreamKind::Weights, 0);
        let m = init_orthogonal(1, 2.0, &mut rng);
        assert_eq!(m[(0, 0)].abs(), 2.0);
    }

    #[test]
    fn orthogonal_gram_is_scaled_identity() {
        for (n, g) in [(5, 0.5), (17, 3.0), (64, 22.36)] {
            let mut rng = RngSpec::new(11).stream(StreamKind::Weights, n as u32);
            let m = init_orthogonal(n, g, &mut rng);
            let gram = &m * m.transpose();
            let err = (gram - DMatrix::identity(n, n) * (g * g)).abs().max();
            assert!(err < 1e-10, "n={n} g={g} err={err}");
            assert!(orthonormality_error(&(m / g)) < 1e-12);
        }
    }

    #[test]
    fn zero_scales_give_zeros() {
        let mut rng = RngSpec::new(1).stream(StreamKind::Weights, 0);
        assert_eq!(init_uniform(3, 4, 0.0, &mut rng), DMatrix::zeros(3, 4));
        assert_eq!(init_gaussian(3, 4, 0.0, &mut rng), DMatrix::zeros(3, 4));
        let xs = gen_inputs(5, 2, 0.0, 2, &RngSpec::new(1));
        assert!(xs.iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    fn moments(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn uniform_moments() {
        let p: f64 = 0.08;
        let n = 1_000_000usize;
        let mut rng = RngSpec::new(2024).stream(StreamKind::Weights, 0);
        let m = init_uniform(1000, 1000, p, &mut rng);
        let (mean, var) = moments(m.as_slice());
        let var_true = p * p / 3.0;
        assert!((var_true - 0.002133).abs() < 1e-6);
        let se_mean = (var_true / n as f64).sqrt();
        // Var of the sample variance for U(−p,p): (μ4 − σ⁴)/n with μ4 = p⁴/5.
        let se_var = ((p.powi(4) / 5.0 - var_true * var_true) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - var_true).abs() < 3.0 * se_var, "var {var}");
        assert!(m.iter().all(|v| v.abs() <= p));
    }

    #[test]
    fn gaussian_moments() {
        let sigma2 = 0.6;
        let n = 1_000_000usize;
        let mut rng = RngSpec::new(77).stream(StreamKind::Inputs, 0);
        let m = init_gaussian(1000, 1000, sigma2, &mut rng);
        let (mean, var) = moments(m.as_slice());
        let se_mean = (sigma2 / n as f64).sqrt();
        let se_var = (2.0 * sigma2 * sigma2 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - sigma2).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let spec = RngSpec::new(9);
        let a = gen_inputs(10, 3, 1.0, 2, &spec);
        let b = gen_inputs(10, 3, 1.0, 2, &spec);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        let other = gen_inputs(10, 3, 1.0, 2, &RngSpec::new(10));
        assert_ne!(a[0], other[0]);
    }

    #[test]
    fn parses_init_strings() {
        assert_eq!(
            "orthogonal:0.002".parse::<WeightInit>().unwrap(),
            WeightInit::Orthogonal { gain_sq: 0.002 }
        );
        assert_eq!(
            "uniform:0.08".parse::<WeightInit>().unwrap(),
            WeightInit::Uniform { p: 0.08 }
        );
        assert!("orthogonal:0".parse::<WeightInit>().is_err());
        assert!("uniform:-1".parse::<WeightInit>().is_err());
        assert!("laplace:1".parse::<WeightInit>().is_err());
        assert!("gaussian".parse::<WeightInit>().is_err());
    }

    #[test]
    fn stable_regime_forgets_initial_conditions() {
        let net = crate::check::orthogonal_tanh_network(128, (1.0f64 / 500.0).sqrt(), 7).unwrap();
        let rng = RngSpec::new(7);
        let x = gen_inputs(100, 128, 0.6, 1, &rng).remove(0);
        let states = gen_initial_states(&net, 1.0, 2, &rng);
        let (mut a, mut b) = (states[0].clone(), states[1].clone());
        assert!((&a.layers[0].h - &b.layers[0].h).norm() > 1.0);
        for t in 0..100 {
            let xt = x.row(t).transpose();
            a = net.step(&a, &xt).unwrap();
            b = net.step(&b, &xt).unwrap();
        }
        assert!((&a.layers[0].h - &b.layers[0].h).norm() < 1e-3);
    }
}
