//! Built-in self-check suite: analytical Jacobians against finite
//! differences, sequential QR against the explicit-product oracles, and
//! linear systems with known spectra.

use nalgebra::{DMatrix, DVector};

use crate::cells::{
    finite_difference_input_jacobian, finite_difference_jacobian, finite_difference_stacked_jacobian,
    max_relative_error, CellRegistry, CellSpec, LayerState, NetState, Network, Nonlinearity, RecurrentCell,
    VanillaCell,
};
use crate::ensembles::{
    gen_initial_states, gen_inputs, init_gaussian, init_orthogonal, RngSpec, StreamKind, WeightInit,
};
use crate::error::Result;
use crate::estimator::{collect_jacobians, run_sequence, EstimatorConfig};
use crate::oracle::{log_det_rate, product_qr_exponents, svd_exponents};

/// Entries below this magnitude are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// Input and initial-state variance of the telescoping check.
pub const TELESCOPING_SIGMA2: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSettings {
    pub seed: u64,
    pub fd_eps: f64,
    pub jacobian_tol: f64,
    pub identity_tol: f64,
    pub linear_tol: f64,
    /// Perturbs every analytical quantity before comparison; used to prove
    /// the suite can fail.
    pub inject_fault: bool,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            seed: 20_210_615,
            fd_eps: 1e-5,
            jacobian_tol: 1e-5,
            identity_tol: 1e-8,
            linear_tol: 1e-10,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    /// Set when the check could not run.
    pub error: Option<String>,
}

impl CheckOutcome {
    fn new(name: &str, measured: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: measured.is_finite() && measured < tolerance,
            measured,
            tolerance,
            error: None,
        }
    }
}

/// A random layer state for `cell`: Gaussian `h` (and `c`) with unit variance.
pub fn random_layer_state(cell: &dyn RecurrentCell, rng: &mut crate::ensembles::StreamRng) -> LayerState {
    let n = cell.n_hidden();
    let h = init_gaussian(n, 1, 1.0, rng).column(0).into_owned();
    let c = cell
        .has_cell_state()
        .then(|| init_gaussian(n, 1, 1.0, rng).column(0).into_owned());
    LayerState { h, c }
}

/// Worst relative error of `(jacobian_state, jacobian_input)` over
/// `instances` random cells of `arch` with `n` units and weights uniform on
/// `[−0.5, 0.5]`.
pub fn jacobian_errors(arch: &str, n: usize, instances: usize, settings: &CheckSettings) -> Result<(f64, f64)> {
    let registry = CellRegistry::builtin();
    let factory = registry.get(arch)?;
    let spec = CellSpec {
        n_hidden: n,
        n_input: n,
        nonlinearity: Nonlinearity::Tanh,
    };
    let rng_spec = RngSpec::new(settings.seed);
    let mut worst_state: f64 = 0.0;
    let mut worst_input: f64 = 0.0;
    for i in 0..instances {
        let mut rng = rng_spec.stream(StreamKind::Weights, i as u32);
        let cell = factory.random(&spec, &WeightInit::Uniform { p: 0.5 }, &mut rng)?;
        let state = random_layer_state(cell.as_ref(), &mut rng);
        let x = init_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();

        let mut js = cell.jacobian_state(&state, &x)?;
        let mut jx = cell.jacobian_input(&state, &x)?;
        if settings.inject_fault {
            js[(0, 0)] += 1e-3;
            jx[(0, 0)] += 1e-3;
        }
        let fs = finite_difference_jacobian(cell.as_ref(), &state, &x, settings.fd_eps)?;
        let fx = finite_difference_input_jacobian(cell.as_ref(), &state, &x, settings.fd_eps)?;
        worst_state = worst_state.max(max_relative_error(&js, &fs, RELATIVE_ERROR_FLOOR));
        worst_input = worst_input.max(max_relative_error(&jx, &fx, RELATIVE_ERROR_FLOOR));
    }
    Ok((worst_state, worst_input))
}

/// Worst relative error of the stacked Jacobian of a two-layer network,
/// plus the largest strictly-upper block entry (must be exactly zero).
pub fn stacked_jacobian_error(arch: &str, n: usize, settings: &CheckSettings) -> Result<(f64, f64)> {
    let registry = CellRegistry::builtin();
    let factory = registry.get(arch)?;
    let spec = CellSpec {
        n_hidden: n,
        n_input: n,
        nonlinearity: Nonlinearity::Tanh,
    };
    let rng_spec = RngSpec::new(settings.seed);
    let mut rng = rng_spec.stream(StreamKind::Weights, 100);
    let net = Network::new(vec![
        factory.random(&spec, &WeightInit::Uniform { p: 0.5 }, &mut rng)?,
        factory.random(&spec, &WeightInit::Uniform { p: 0.5 }, &mut rng)?,
    ])?;
    let state = NetState {
        layers: net
            .layers()
            .iter()
            .map(|c| random_layer_state(c.as_ref(), &mut rng))
            .collect(),
    };
    let x = init_gaussian(n, 1, 1.0, &mut rng).column(0).into_owned();
    let mut analytic = net.stacked_jacobian(&state, &x)?;
    if settings.inject_fault {
        analytic[(n, 0)] += 1e-3;
        analytic[(0, n)] += 1e-3;
    }
    let fd = finite_difference_stacked_jacobian(&net, &state, &x, settings.fd_eps)?;
    let upper = analytic.view((0, n), (n, n)).abs().max();
    Ok((max_relative_error(&analytic, &fd, RELATIVE_ERROR_FLOOR), upper))
}

/// Vanilla tanh network with a Haar-orthogonal recurrent matrix, `U = I`.
pub fn orthogonal_tanh_network(n: usize, gain: f64, seed: u64) -> Result<Network> {
    let mut rng = RngSpec::new(seed).stream(StreamKind::Weights, 0);
    let cell = VanillaCell::new(
        init_orthogonal(n, gain, &mut rng),
        DMatrix::identity(n, n),
        DVector::zeros(n),
        Nonlinearity::Tanh,
    )?;
    Ok(Network::single(Box::new(cell)))
}

pub struct TelescopingReport {
    /// Largest pairwise difference between γ vectors over all `t_on`.
    pub pairwise: f64,
    /// Largest difference between γ/T and the explicit-product QR oracle.
    pub versus_oracle: f64,
    /// `|Σ λ_i − (1/T) Σ log|det J_t||`
    pub volume: f64,
    /// `|Σ qr − Σ svd|` of the two oracles.
    pub oracle_sums: f64,
}

/// Runs one driven trajectory with several orthonormalization intervals and
/// compares the accumulated expansions with the explicit-product oracles.
///
/// The explicit product only resolves exponents whose accumulated spread
/// `γ_1 − γ_k` stays well below `ln(1/ε_mach) ≈ 36`, so the drive must keep
/// the Jacobians mildly conditioned (weak inputs, small initial states).
pub fn telescoping_report(
    net: &Network,
    steps: usize,
    t_ons: &[usize],
    sigma2_x: f64,
    sigma2_h0: f64,
    seed: u64,
) -> Result<TelescopingReport> {
    let rng = RngSpec::new(seed);
    let x = gen_inputs(steps, net.n_input(), sigma2_x, 1, &rng).remove(0);
    let h0 = gen_initial_states(net, sigma2_h0, 1, &rng).remove(0);

    let mut gammas = Vec::new();
    let mut lambdas_first = Vec::new();
    for &t_on in t_ons {
        let config = EstimatorConfig {
            steps,
            t_on,
            batch_size: 1,
            ..Default::default()
        };
        let r = run_sequence(net, &config, &x, &h0)?;
        if gammas.is_empty() {
            lambdas_first = r.lambdas.clone();
        }
        gammas.push(r.gamma);
    }
    let mut pairwise: f64 = 0.0;
    for a in &gammas {
        for b in &gammas {
            for (u, v) in a.iter().zip(b) {
                pairwise = pairwise.max((u - v).abs());
            }
        }
    }

    let jacobians = collect_jacobians(net, &x, &h0, 0, steps)?;
    let oracle = product_qr_exponents(&jacobians)?;
    let svd = svd_exponents(&jacobians)?;
    let det = log_det_rate(&jacobians)?;
    let versus_oracle = lambdas_first
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs() * steps as f64)
        .fold(0.0, f64::max);
    let volume = (lambdas_first.iter().sum::<f64>() - det).abs();
    let oracle_sums = (oracle.iter().sum::<f64>() - svd.iter().sum::<f64>()).abs();
    Ok(TelescopingReport {
        pairwise,
        versus_oracle,
        volume,
        oracle_sums,
    })
}

/// Largest `|λ_i − ln g|` for identity-φ vanilla networks `V = g·Q_Haar`.
pub fn linear_spectrum_error(gains: &[f64], n: usize, settings: &CheckSettings) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (idx, &g) in gains.iter().enumerate() {
        let mut rng = RngSpec::new(settings.seed).stream(StreamKind::Weights, idx as u32);
        let cell = VanillaCell::new(
            init_orthogonal(n, g, &mut rng),
            DMatrix::identity(n, n),
            DVector::zeros(n),
            Nonlinearity::Identity,
        )?;
        let net = Network::single(Box::new(cell));
        let config = EstimatorConfig {
            steps: 40,
            batch_size: 1,
            ..Default::default()
        };
        let rng_spec = RngSpec::new(settings.seed);
        let x = gen_inputs(40, n, 1.0, 1, &rng_spec).remove(0);
        let h0 = gen_initial_states(&net, 1.0, 1, &rng_spec).remove(0);
        let r = run_sequence(&net, &config, &x, &h0)?;
        let expected = g.ln() + if settings.inject_fault { 1e-3 } else { 0.0 };
        for l in r.lambdas {
            worst = worst.max((l - expected).abs());
        }
    }
    Ok(worst)
}

/// Runs the whole suite. Errors while running a check count as failures.
pub fn run_checks(settings: &CheckSettings) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let fail = |name: &str, tol: f64, e: crate::error::Error| CheckOutcome {
        name: name.to_string(),
        passed: false,
        measured: f64::NAN,
        tolerance: tol,
        error: Some(e.to_string()),
    };

    for arch in ["vanilla", "lstm", "gru"] {
        let tol = settings.jacobian_tol;
        match jacobian_errors(arch, 4, 20, settings) {
            Ok((s, i)) => {
                out.push(CheckOutcome::new(
                    &format!("{arch}: state Jacobian vs finite differences"),
                    s,
                    tol,
                ));
                out.push(CheckOutcome::new(
                    &format!("{arch}: input Jacobian vs finite differences"),
                    i,
                    tol,
                ));
            }
            Err(e) => out.push(fail(&format!("{arch}: Jacobians vs finite differences"), tol, e)),
        }
    }

    match stacked_jacobian_error("lstm", 3, settings) {
        Ok((err, upper)) => {
            out.push(CheckOutcome::new(
                "2-layer lstm: stacked Jacobian vs finite differences",
                err,
                settings.jacobian_tol,
            ));
            let mut zero = CheckOutcome::new("2-layer lstm: upper blocks are zero", upper, 0.0);
            zero.passed = upper == 0.0;
            out.push(zero);
        }
        Err(e) => out.push(fail("2-layer lstm: stacked Jacobian", settings.jacobian_tol, e)),
    }

    let telescoping = orthogonal_tanh_network(6, 1.0, settings.seed).and_then(|net| {
        telescoping_report(
            &net,
            50,
            &[1, 5, 10, 25, 50],
            TELESCOPING_SIGMA2,
            TELESCOPING_SIGMA2,
            settings.seed,
        )
    });
    match telescoping {
        Ok(mut r) => {
            if settings.inject_fault {
                r.pairwise += 1e-3;
                r.volume += 1e-3;
            }
            out.push(CheckOutcome::new(
                "telescoping QR: t_on invariance",
                r.pairwise,
                settings.identity_tol,
            ));
            out.push(CheckOutcome::new(
                "telescoping QR: explicit-product oracle",
                r.versus_oracle,
                settings.identity_tol,
            ));
            out.push(CheckOutcome::new(
                "volume identity: sum of exponents vs log|det J|",
                r.volume,
                settings.identity_tol,
            ));
            out.push(CheckOutcome::new(
                "oracles: QR and SVD volume rates agree",
                r.oracle_sums,
                settings.identity_tol,
            ));
        }
        Err(e) => out.push(fail("telescoping QR", settings.identity_tol, e)),
    }

    match linear_spectrum_error(&[0.5, 1.0, 2.0], 5, settings) {
        Ok(e) => out.push(CheckOutcome::new(
            "linear isometry: every exponent equals ln g",
            e,
            settings.linear_tol,
        )),
        Err(e) => out.push(fail("linear isometry", settings.linear_tol, e)),
    }
    out
}
