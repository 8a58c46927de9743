//! Tangent-basis propagation with periodic QR re-orthonormalization.
//!
//! For each input sequence the tangent basis `Q` (first `k` columns of the
//! identity) is pushed through the stacked state Jacobians. Every `t_on`
//! steps `Q` is re-factored as `Q R` with a positive diagonal and
//! `log R_ii` is added to `γ_i`; after `T` accumulated steps the exponents
//! are `λ_i = γ_i / T`. A warmup phase propagates state and basis the same
//! way but discards the log-expansions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{NetState, Network};
use crate::error::{Error, Result};
use crate::linalg::qr_positive;

/// Log-expansion substituted for an exactly zero `R_ii` under
/// [`DegeneratePolicy::Clamp`]; close to `ln` of the smallest subnormal.
pub const CLAMPED_LOG_EXPANSION: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegeneratePolicy {
    Error,
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Accumulated steps per sequence (`T`).
    pub steps: usize,
    pub warmup_steps: usize,
    /// Orthonormalization interval.
    pub t_on: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of tracked tangent vectors; all of them when `None`.
    pub k_exponents: Option<usize>,
    pub degenerate_policy: DegeneratePolicy,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            steps: 100,
            warmup_steps: 0,
            t_on: 1,
            batch_size: 10,
            seed: 0,
            k_exponents: None,
            degenerate_policy: DegeneratePolicy::Error,
        }
    }
}

impl EstimatorConfig {
    /// Checks the config against a state of dimension `n` and returns the
    /// number of tracked exponents.
    pub fn validate(&self, n: usize) -> Result<usize> {
        if self.steps == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.t_on == 0 || self.t_on > self.steps {
            return Err(Error::Config(format!(
                "t_on must lie in [1, T = {}], got {}",
                self.steps, self.t_on
            )));
        }
        let k = self.k_exponents.unwrap_or(n);
        if k == 0 || k > n {
            return Err(Error::Config(format!("k_exponents must lie in [1, {n}], got {k}")));
        }
        Ok(k)
    }

    pub fn sequence_len(&self) -> usize {
        self.warmup_steps + self.steps
    }
}

/// Orthonormal tangent vectors and their accumulated log-expansions.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    pub q: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub steps_accumulated: usize,
}

impl TangentBasis {
    /// First `k` columns of the `n × n` identity.
    pub fn new(n: usize, k: usize) -> Self {
        TangentBasis {
            q: DMatrix::identity(n, k),
            gamma: DVector::zeros(k),
            steps_accumulated: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    /// Re-factors `Q`; returns `log R_ii` per column.
    fn orthonormalize(&mut self, step: usize, policy: DegeneratePolicy) -> Result<DVector<f64>> {
        let (q, r) = qr_positive(&self.q);
        let mut logs = DVector::zeros(self.k());
        for i in 0..self.k() {
            let rii = r[(i, i)];
            if !rii.is_finite() {
                return Err(Error::NonFinite(format!("R[{i},{i}] at step {step}")));
            }
            logs[i] = if rii > 0.0 {
                rii.ln()
            } else {
                match policy {
                    DegeneratePolicy::Error => return Err(Error::DegenerateExpansion { index: i, step }),
                    DegeneratePolicy::Clamp => CLAMPED_LOG_EXPANSION,
                }
            };
        }
        self.q = q;
        Ok(logs)
    }
}

/// What to do with the basis after the Jacobian has been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrAction {
    /// Leave `Q` un-normalized.
    Skip,
    /// Re-orthonormalize without touching `γ` (warmup).
    Discard,
    /// Re-orthonormalize and add `log R_ii` to `γ`; `steps_accumulated` is
    /// set to the given step count.
    Accumulate(usize),
}

/// One step: `Q ← J(h_{t−1}, x_t)·Q`, optionally followed by QR. Returns the
/// next state. The Jacobian is evaluated at the state `step` consumes.
pub fn propagate_step(
    net: &Network,
    state: &NetState,
    basis: &mut TangentBasis,
    x: &DVector<f64>,
    action: QrAction,
    policy: DegeneratePolicy,
) -> Result<NetState> {
    let (next, jac) = net.advance(state, x)?;
    if jac.nrows() != basis.q.nrows() {
        return Err(Error::dim("tangent basis", jac.nrows(), basis.q.nrows()));
    }
    basis.q = jac * &basis.q;
    match action {
        QrAction::Skip => {}
        QrAction::Discard => {
            basis.orthonormalize(basis.steps_accumulated, policy)?;
        }
        QrAction::Accumulate(t) => {
            let logs = basis.orthonormalize(t, policy)?;
            basis.gamma += logs;
            basis.steps_accumulated = t;
        }
    }
    if !next.layers.iter().all(|l| l.is_finite()) {
        return Err(Error::NonFinite("hidden state".into()));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    /// Running estimates `γ_i(t) / t`.
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceResult {
    pub lambdas: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Sampled at every orthonormalization of the accumulation phase.
    pub trace: Vec<TracePoint>,
}

fn row(x_seq: &DMatrix<f64>, t: usize) -> DVector<f64> {
    x_seq.row(t).transpose()
}

/// Runs warmup plus `T` accumulated steps on one sequence.
///
/// `x_seq` holds one input per row; the first `warmup_steps` rows drive the
/// warmup. Accumulation orthonormalizes at every multiple of `t_on` and at
/// the final step, so no expansion is lost when `t_on` does not divide `T`.
pub fn run_sequence(
    net: &Network,
    config: &EstimatorConfig,
    x_seq: &DMatrix<f64>,
    h0: &NetState,
) -> Result<SequenceResult> {
    let n = net.total_hidden();
    let k = config.validate(n)?;
    let needed = config.sequence_len();
    if x_seq.nrows() < needed {
        return Err(Error::SequenceTooShort {
            needed,
            got: x_seq.nrows(),
        });
    }
    if x_seq.ncols() != net.n_input() {
        return Err(Error::dim("input sequence columns", net.n_input(), x_seq.ncols()));
    }

    let policy = config.degenerate_policy;
    let mut basis = TangentBasis::new(n, k);
    let mut state = h0.clone();

    for w in 1..=config.warmup_steps {
        let action = if w % config.t_on == 0 || w == config.warmup_steps {
            QrAction::Discard
        } else {
            QrAction::Skip
        };
        state = propagate_step(net, &state, &mut basis, &row(x_seq, w - 1), action, policy)?;
    }

    let mut trace = Vec::with_capacity(config.steps / config.t_on + 1);
    for t in 1..=config.steps {
        let action = if t % config.t_on == 0 || t == config.steps {
            QrAction::Accumulate(t)
        } else {
            QrAction::Skip
        };
        let x = row(x_seq, config.warmup_steps + t - 1);
        state = propagate_step(net, &state, &mut basis, &x, action, policy)?;
        if action != QrAction::Skip {
            trace.push(TracePoint {
                t,
                lambdas: basis.gamma.iter().map(|g| g / t as f64).collect(),
            });
        }
    }

    let lambdas = basis.gamma.iter().map(|g| g / config.steps as f64).collect();
    Ok(SequenceResult {
        lambdas,
        gamma: basis.gamma.iter().copied().collect(),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub config: EstimatorConfig,
    /// Architecture of each layer, bottom first.
    pub arch: Vec<String>,
    pub n_state: usize,
    pub fingerprint: String,
    /// `batch_size × k` exponents, tangent-basis order.
    pub per_sequence: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation over sequences.
    pub std: Vec<f64>,
    pub traces: Vec<Vec<TracePoint>>,
}

impl SpectrumResult {
    pub fn k(&self) -> usize {
        self.mean.len()
    }

    /// Trace averaged index-wise over sequences.
    pub fn mean_trace(&self) -> Vec<TracePoint> {
        let Some(first) = self.traces.first() else {
            return Vec::new();
        };
        first
            .iter()
            .enumerate()
            .map(|(s, point)| {
                let columns: Vec<Vec<f64>> = (0..point.lambdas.len())
                    .map(|i| self.traces.iter().map(|tr| tr[s].lambdas[i]).collect())
                    .collect();
                TracePoint {
                    t: point.t,
                    lambdas: columns.iter().map(|c| mean_std(c).0).collect(),
                }
            })
            .collect()
    }
}

/// Mean and population standard deviation; the mean gets one residual
/// correction pass so identical samples reproduce their value exactly.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut mean = values.iter().sum::<f64>() / n;
    mean += values.iter().map(|v| v - mean).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every sequence (concurrently on the current rayon pool) and reduces
/// in ascending sequence order.
pub fn run_batch(
    net: &Network,
    config: &EstimatorConfig,
    inputs: &[DMatrix<f64>],
    initial_states: &[NetState],
) -> Result<SpectrumResult> {
    let k = config.validate(net.total_hidden())?;
    if inputs.len() < config.batch_size || initial_states.len() < config.batch_size {
        return Err(Error::Config(format!(
            "batch of {} needs as many sequences and initial states (got {} and {})",
            config.batch_size,
            inputs.len(),
            initial_states.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }

    let results: Vec<Result<SequenceResult>> = (0..config.batch_size)
        .into_par_iter()
        .map(|j| {
            run_sequence(net, config, &inputs[j], &initial_states[j]).map_err(|e| Error::Sequence {
                index: j,
                source: Box::new(e),
            })
        })
        .collect();

    let mut per_sequence = Vec::with_capacity(config.batch_size);
    let mut traces = Vec::with_capacity(config.batch_size);
    for r in results {
        let r = r?;
        per_sequence.push(r.lambdas);
        traces.push(r.trace);
    }

    let mut mean = Vec::with_capacity(k);
    let mut std = Vec::with_capacity(k);
    for i in 0..k {
        let column: Vec<f64> = per_sequence.iter().map(|s| s[i]).collect();
        let (m, s) = mean_std(&column);
        mean.push(m);
        std.push(s);
    }

    Ok(SpectrumResult {
        config: config.clone(),
        arch: net.layers().iter().map(|l| l.arch().to_string()).collect(),
        n_state: net.total_hidden(),
        fingerprint: net.fingerprint(),
        per_sequence,
        mean,
        std,
        traces,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    pub t: usize,
    /// `|λ_i(t) − λ_i(T)|`
    pub deviations: Vec<f64>,
}

/// Distance of every running estimate from the final one.
pub fn convergence_report(trace: &[TracePoint]) -> Result<Vec<ConvergencePoint>> {
    let last = trace
        .last()
        .ok_or_else(|| Error::Config("convergence report needs a non-empty trace".into()))?;
    Ok(trace
        .iter()
        .map(|p| ConvergencePoint {
            t: p.t,
            deviations: p
                .lambdas
                .iter()
                .zip(&last.lambdas)
                .map(|(a, b)| (a - b).abs())
                .collect(),
        })
        .collect())
}

/// The stacked Jacobians `J_1 … J_T` along one trajectory, after warmup.
pub fn collect_jacobians(
    net: &Network,
    x_seq: &DMatrix<f64>,
    h0: &NetState,
    warmup_steps: usize,
    steps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if x_seq.nrows() < warmup_steps + steps {
        return Err(Error::SequenceTooShort {
            needed: warmup_steps + steps,
            got: x_seq.nrows(),
        });
    }
    let mut state = h0.clone();
    for w in 0..warmup_steps {
        state = net.step(&state, &row(x_seq, w))?;
    }
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let (next, jac) = net.advance(&state, &row(x_seq, warmup_steps + t))?;
        out.push(jac);
        state = next;
    }
    Ok(out)
}
