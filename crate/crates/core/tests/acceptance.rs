//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rnn_lyapunov::cells::{CellRegistry, CellSpec, Network, Nonlinearity};
use rnn_lyapunov::check::{
    jacobian_errors, linear_spectrum_error, orthogonal_tanh_network, telescoping_report, CheckSettings,
};
use rnn_lyapunov::ensembles::{gen_initial_states, gen_inputs, RngSpec, StreamKind, WeightInit};
use rnn_lyapunov::estimator::{run_batch, run_sequence, EstimatorConfig, SpectrumResult};
use rnn_lyapunov::features::{rms_distance, summarize, Regime, DEFAULT_MARGINAL_TOL};
use rnn_lyapunov::io::{
    load_spectrum, load_weights, save_spectrum, save_weights, spectrum_to_string, weights_to_string, SpectrumFormat,
};

type Criterion = Box<dyn FnOnce() -> Outcome>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.2}s (limit {limit_s}s)"))
}

const REGIME_N: usize = 128;
const REGIME_SEED: u64 = 7;
const REGIME_SIGMA2_X: f64 = 0.6;
const REGIME_SIGMA2_H0: f64 = 1.0;

/// Orthogonal tanh network with `V = sqrt(gain_sq)·Q`, `U = I`, weights
/// drawn exactly as `simulate --seed 7` draws them.
fn regime_network(gain_sq: f64) -> Network {
    let registry = CellRegistry::builtin();
    let spec = CellSpec {
        n_hidden: REGIME_N,
        n_input: REGIME_N,
        nonlinearity: Nonlinearity::Tanh,
    };
    let mut rng = RngSpec::new(REGIME_SEED).stream(StreamKind::Weights, 0);
    let cell = registry
        .get("vanilla")
        .unwrap()
        .random(&spec, &WeightInit::Orthogonal { gain_sq }, &mut rng)
        .unwrap();
    Network::single(cell)
}

/// Batch of 10, T = 100, inputs and initial states from `input_seed`.
fn regime_spectrum(net: &Network, input_seed: u64) -> SpectrumResult {
    let config = EstimatorConfig {
        steps: 100,
        batch_size: 10,
        seed: input_seed,
        ..Default::default()
    };
    let rng = RngSpec::new(input_seed);
    let inputs = gen_inputs(100, REGIME_N, REGIME_SIGMA2_X, 10, &rng);
    let states = gen_initial_states(net, REGIME_SIGMA2_H0, 10, &rng);
    run_batch(net, &config, &inputs, &states).unwrap()
}

fn lambda_max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn jacobian_correctness() -> Outcome {
    let start = Instant::now();
    let settings = CheckSettings::default();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for arch in ["vanilla", "lstm", "gru"] {
        let (s, i) = jacobian_errors(arch, 4, 20, &settings).unwrap();
        worst = worst.max(s).max(i);
        parts.push(format!("{arch} {:.1e}/{:.1e}", s, i));
    }
    let (fast, time) = within(start.elapsed(), 1.0);
    outcome(
        worst < 1e-5 && fast,
        format!("max rel err {worst:.2e} < 1e-5 [{}], {time}", parts.join(", ")),
    )
}

fn telescoping_and_volume() -> (Outcome, Outcome) {
    let start = Instant::now();
    let net = orthogonal_tanh_network(6, 1.0, 20_210_615).unwrap();
    let r = telescoping_report(&net, 50, &[1, 5, 10, 25, 50], 0.05, 0.05, 20_210_615).unwrap();
    let (fast, time) = within(start.elapsed(), 1.0);
    (
        outcome(
            r.pairwise < 1e-8 && r.versus_oracle < 1e-8 && fast,
            format!(
                "pairwise {:.2e}, vs product QR {:.2e} (< 1e-8), {time}",
                r.pairwise, r.versus_oracle
            ),
        ),
        outcome(
            r.volume < 1e-8,
            format!("|sum - log det rate| = {:.2e} < 1e-8", r.volume),
        ),
    )
}

fn linear_spectrum() -> Outcome {
    let start = Instant::now();
    let err = linear_spectrum_error(&[0.5, 1.0, 2.0], 8, &CheckSettings::default()).unwrap();
    let (fast, time) = within(start.elapsed(), 1.0);
    outcome(
        err < 1e-10 && fast,
        format!("max |lambda - ln g| = {err:.2e} < 1e-10, {time}"),
    )
}

fn regimes() -> Outcome {
    let start = Instant::now();
    let stable = regime_spectrum(&regime_network(1.0 / 500.0), REGIME_SEED);
    let chaotic = regime_spectrum(&regime_network(500.0), REGIME_SEED);
    let marginal = regime_spectrum(&regime_network(100.0), REGIME_SEED);
    let (fast, time) = within(start.elapsed(), 60.0);

    let ls = lambda_max(&stable.mean);
    let lc = lambda_max(&chaotic.mean);
    let lm = lambda_max(&marginal.mean);
    let marginal_regime = summarize(&marginal.mean, DEFAULT_MARGINAL_TOL).unwrap().regime;
    let ok_stable = ls < -0.05;
    let ok_chaotic = lc > 0.05;
    let ok_marginal = lm.abs() < 0.2;
    outcome(
        ok_stable && ok_chaotic && ok_marginal && fast,
        format!(
            "g2=1/500: {ls:.4} (< -0.05 {}); g2=500: {lc:.4} (> 0.05 {}); g2=100: {lm:.4} (|.| < 0.2 {}, regime {marginal_regime}); {time}",
            mark(ok_stable),
            mark(ok_chaotic),
            mark(ok_marginal),
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

fn ergodicity() -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for (label, gain_sq, expected) in [
        ("stable", 1.0 / 500.0, Regime::Stable),
        ("chaotic", 500.0, Regime::Chaotic),
    ] {
        let net = regime_network(gain_sq);
        let a = regime_spectrum(&net, 1001);
        let b = regime_spectrum(&net, 2002);
        let d = rms_distance(&a.mean, &b.mean).unwrap();
        let ra = summarize(&a.mean, DEFAULT_MARGINAL_TOL).unwrap().regime;
        let rb = summarize(&b.mean, DEFAULT_MARGINAL_TOL).unwrap().regime;
        passed &= d < 0.05 && ra == expected && rb == expected;
        parts.push(format!("{label}: rms {d:.4} < 0.05, regimes {ra}/{rb}"));
    }
    outcome(passed, parts.join("; "))
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let net = regime_network(500.0);
    let rng = RngSpec::new(REGIME_SEED);
    let x = gen_inputs(1000, REGIME_N, REGIME_SIGMA2_X, 1, &rng).remove(0);
    let h0 = gen_initial_states(&net, REGIME_SIGMA2_H0, 1, &rng).remove(0);
    let config = EstimatorConfig {
        steps: 1000,
        batch_size: 1,
        ..Default::default()
    };
    let r = run_sequence(&net, &config, &x, &h0).unwrap();
    let at = |t: usize| lambda_max(&r.trace.iter().find(|p| p.t == t).unwrap().lambdas);
    let (l100, l1000) = (at(100), at(1000));
    let diff = (l100 - l1000).abs();
    let (fast, time) = within(start.elapsed(), 60.0);
    outcome(
        diff < 0.05 && fast,
        format!("lambda_max(100) = {l100:.4}, lambda_max(1000) = {l1000:.4}, diff {diff:.4} < 0.05, {time}"),
    )
}

fn t_on_plateau() -> Outcome {
    let n = 64;
    let registry = CellRegistry::builtin();
    let spec = CellSpec {
        n_hidden: n,
        n_input: n,
        nonlinearity: Nonlinearity::Tanh,
    };
    let mut wrng = RngSpec::new(REGIME_SEED).stream(StreamKind::Weights, 0);
    let cell = registry
        .get("lstm")
        .unwrap()
        .random(&spec, &WeightInit::Uniform { p: 0.08 }, &mut wrng)
        .unwrap();
    let net = Network::single(cell);
    let rng = RngSpec::new(REGIME_SEED);
    let inputs = gen_inputs(100, n, REGIME_SIGMA2_X, 10, &rng);
    let states = gen_initial_states(&net, REGIME_SIGMA2_H0, 10, &rng);
    let spectra: Vec<Vec<f64>> = [1, 5, 10]
        .iter()
        .map(|&t_on| {
            let config = EstimatorConfig {
                steps: 100,
                t_on,
                batch_size: 10,
                ..Default::default()
            };
            run_batch(&net, &config, &inputs, &states).unwrap().mean
        })
        .collect();
    let mut worst: f64 = 0.0;
    for a in &spectra {
        for b in &spectra {
            for i in 0..16 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
    }
    let tail: f64 = (16..n)
        .map(|i| (spectra[0][i] - spectra[2][i]).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < 0.02,
        format!(
            "first 16 exponents agree within {worst:.2e} < 0.02 (tail gap t_on 1 vs 10: {tail:.2e}, unconstrained)"
        ),
    )
}

fn run_cli(dir: &Path, threads: usize, out_name: &str, format: &str) -> Vec<u8> {
    let path = dir.join(out_name);
    let status = Command::new(env!("CARGO_BIN_EXE_rnn-lyapunov"))
        .args([
            "--threads",
            &threads.to_string(),
            "simulate",
            "--arch",
            "lstm",
            "--n",
            "24",
            "--init",
            "uniform:0.3",
            "--t",
            "60",
            "--t-on",
            "3",
            "--batch",
            "8",
            "--seed",
            "11",
            "--format",
            format,
            "--out",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(path).unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut passed = true;
    for format in ["structured", "tabular"] {
        let one = run_cli(dir.path(), 1, &format!("{format}-1"), format);
        let again = run_cli(dir.path(), 1, &format!("{format}-1b"), format);
        let many = run_cli(dir.path(), 8, &format!("{format}-8"), format);
        passed &= one == again && one == many && !one.is_empty();
    }
    outcome(
        passed,
        "simulate output bytes identical for --threads 1 (twice) and --threads 8, structured and tabular",
    )
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let registry = CellRegistry::builtin();
    let mut passed = true;
    let mut checked = 0;

    for (arch, layers) in [("vanilla", 1), ("lstm", 1), ("gru", 1), ("lstm", 2), ("gru", 3)] {
        let factory = registry.get(arch).unwrap();
        let mut rng = RngSpec::new(5).stream(StreamKind::Weights, 0);
        let cells = (0..layers)
            .map(|k| {
                let spec = CellSpec {
                    n_hidden: 5,
                    n_input: if k == 0 && arch != "vanilla" { 3 } else { 5 },
                    nonlinearity: Nonlinearity::Tanh,
                };
                factory
                    .random(&spec, &WeightInit::Gaussian { sigma2: 0.7 }, &mut rng)
                    .unwrap()
            })
            .collect();
        let net = Network::new(cells).unwrap();
        let path = dir.path().join(format!("{arch}-{layers}.json"));
        save_weights(&net, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let reloaded = load_weights(&path, &registry).unwrap();
        passed &= weights_to_string(&reloaded).unwrap().into_bytes() == first;
        passed &= reloaded.fingerprint() == net.fingerprint();
        checked += 1;

        let config = EstimatorConfig {
            steps: 20,
            t_on: 3,
            batch_size: 3,
            ..Default::default()
        };
        let spec_rng = RngSpec::new(9);
        let inputs = gen_inputs(20, net.n_input(), 0.6, 3, &spec_rng);
        let states = gen_initial_states(&net, 1.0, 3, &spec_rng);
        let result = run_batch(&net, &config, &inputs, &states).unwrap();
        for format in [SpectrumFormat::Structured, SpectrumFormat::Tabular] {
            let path = dir.path().join(format!("{arch}-{layers}-{format:?}"));
            save_spectrum(&result, &path, format).unwrap();
            let first = std::fs::read(&path).unwrap();
            let loaded = load_spectrum(&path).unwrap();
            passed &= loaded.to_file_string().into_bytes() == first;
            if format == SpectrumFormat::Structured {
                passed &= spectrum_to_string(&result, format).into_bytes() == first;
            }
            checked += 1;
        }
    }
    outcome(
        passed,
        format!("{checked} weights/spectrum files reproduce byte-identically after save, load, save"),
    )
}

fn main() {
    let (telescoping, volume) = telescoping_and_volume();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 Jacobian correctness", Box::new(jacobian_correctness)),
        ("2 telescoping QR identity", Box::new(move || telescoping)),
        ("3 volume identity", Box::new(move || volume)),
        ("4 analytic linear spectrum", Box::new(linear_spectrum)),
        ("5 stability regimes", Box::new(regimes)),
        ("6 input-realization independence", Box::new(ergodicity)),
        ("7 convergence", Box::new(convergence)),
        ("8 t_on plateau containment", Box::new(t_on_plateau)),
        ("9 determinism", Box::new(determinism)),
        ("10 file-format round trips", Box::new(round_trips)),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {failed} of 10 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
