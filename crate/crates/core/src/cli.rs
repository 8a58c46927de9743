//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on numerical or I/O failure, 2 on usage
//! errors (unknown flags, invalid flag combinations).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::cells::{CellRegistry, CellSpec, NetState, Network, Nonlinearity};
use crate::check::{run_checks, CheckSettings};
use crate::ensembles::{gen_initial_states, gen_inputs, RngSpec, StreamKind, WeightInit};
use crate::error::Error;
use crate::estimator::{run_batch, DegeneratePolicy, EstimatorConfig, SpectrumResult};
use crate::features::{mean_difference, rms_distance, summarize, SpectrumFeatures, DEFAULT_MARGINAL_TOL};
use crate::io::{load_sequences, load_spectrum, load_weights, save_spectrum, SpectrumFormat};

#[derive(Debug, Parser)]
#[command(
    name = "rnn-lyapunov",
    version,
    about = "Lyapunov spectra of input-driven recurrent networks"
)]
struct Cli {
    /// Worker threads for per-sequence parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random network and inputs, then compute its spectrum.
    Simulate(SimulateArgs),
    /// Compute the spectrum of a network loaded from a weights file.
    Compute(ComputeArgs),
    /// Summarize one spectrum file, or compare two.
    Features(FeaturesArgs),
    /// Run the built-in verification suite.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NonlinearityArg {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Structured,
    Tabular,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Error,
    Clamp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TextFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct EstimatorArgs {
    /// Accumulated steps per sequence.
    #[arg(long = "t", default_value_t = 100)]
    t: usize,
    /// Discarded steps before accumulation.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    /// Orthonormalization interval.
    #[arg(long = "t-on", default_value_t = 1)]
    t_on: usize,
    /// Number of tracked exponents (default: all).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Handling of an exactly zero expansion.
    #[arg(long, value_enum, default_value_t = PolicyArg::Error)]
    degenerate: PolicyArg,
    /// Spectrum output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Structured)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Registered cell architecture (vanilla, lstm, gru).
    #[arg(long)]
    arch: String,
    /// Hidden units per layer.
    #[arg(long)]
    n: usize,
    /// Input dimension (default: n).
    #[arg(long = "n-in")]
    n_in: Option<usize>,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    /// Vanilla nonlinearity.
    #[arg(long, value_enum, default_value_t = NonlinearityArg::Tanh)]
    nonlinearity: NonlinearityArg,
    /// orthogonal:<g²> | uniform:<p> | gaussian:<σ²>
    #[arg(long)]
    init: String,
    /// Input variance σ²_x.
    #[arg(long = "sigma-x", default_value_t = 0.6)]
    sigma_x: f64,
    /// Initial-state variance σ²_h0.
    #[arg(long = "sigma-h0", default_value_t = 1.0)]
    sigma_h0: f64,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Debug, Args)]
struct ComputeArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Input sequences file; Gaussian inputs are generated when absent.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Input variance σ²_x for generated inputs.
    #[arg(long = "sigma-x", default_value_t = 0.6)]
    sigma_x: f64,
    /// Initial-state variance σ²_h0 (0 starts from zero states).
    #[arg(long = "sigma-h0", default_value_t = 0.0)]
    sigma_h0: f64,
    /// Sequences to use (default: 10, or every sequence in --inputs).
    #[arg(long)]
    batch: Option<usize>,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// One spectrum file, or two to also report distances.
    #[arg(long, required = true, num_args = 1)]
    spectrum: Vec<PathBuf>,
    #[arg(long = "marginal-tol", default_value_t = DEFAULT_MARGINAL_TOL)]
    marginal_tol: f64,
    #[arg(long, value_enum, default_value_t = TextFormat::Text)]
    format: TextFormat,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, hide = true)]
    inject_fault: bool,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start thread pool: {e}");
            return 1;
        }
    };

    // Single writer: commands render into a buffer flushed after the run.
    let mut buffer: Vec<u8> = Vec::new();
    let result = pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate(a, &mut buffer),
        Command::Compute(a) => compute(a, &mut buffer),
        Command::Features(a) => features(a, &mut buffer),
        Command::Check(a) => check(a, &mut buffer),
    });
    let _ = out.write_all(&buffer);
    let _ = out.flush();

    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn estimator_config(est: &EstimatorArgs, batch: usize, n_state: usize) -> Result<EstimatorConfig, Failure> {
    let config = EstimatorConfig {
        steps: est.t,
        warmup_steps: est.warmup,
        t_on: est.t_on,
        batch_size: batch,
        seed: est.seed,
        k_exponents: est.k,
        degenerate_policy: match est.degenerate {
            PolicyArg::Error => DegeneratePolicy::Error,
            PolicyArg::Clamp => DegeneratePolicy::Clamp,
        },
    };
    config.validate(n_state).map_err(|e| Failure::Usage(e.to_string()))?;
    if batch == 0 {
        return Err(Failure::Usage("--batch must be at least 1".into()));
    }
    Ok(config)
}

fn print_features(f: &SpectrumFeatures, out: &mut dyn Write) {
    let _ = writeln!(out, "lambda_max      {}", f.lambda_max);
    let _ = writeln!(out, "lambda_mean     {}", f.lambda_mean);
    let _ = writeln!(out, "lambda_variance {}", f.lambda_variance);
    let _ = writeln!(out, "regime          {}", f.regime);
}

fn finish(result: &SpectrumResult, est: &EstimatorArgs, out: &mut dyn Write) -> CmdResult {
    if let Some(path) = &est.out {
        let format = match est.format {
            FormatArg::Structured => SpectrumFormat::Structured,
            FormatArg::Tabular => SpectrumFormat::Tabular,
        };
        save_spectrum(result, path, format)?;
    }
    let f = summarize(&result.mean, DEFAULT_MARGINAL_TOL)?;
    let _ = writeln!(out, "sequences       {}", result.per_sequence.len());
    let _ = writeln!(out, "exponents       {}", result.k());
    print_features(&f, out);
    Ok(())
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> CmdResult {
    let init: WeightInit = a
        .init
        .parse()
        .map_err(|e: Error| Failure::Usage(format!("--init: {e}")))?;
    let n_in = a.n_in.unwrap_or(a.n);
    if a.n == 0 || n_in == 0 || a.layers == 0 {
        return Err(Failure::Usage("--n, --n-in and --layers must be positive".into()));
    }
    let registry = CellRegistry::builtin();
    let factory = registry.get(&a.arch).map_err(|_| {
        Failure::Usage(format!(
            "--arch: unknown architecture '{}' (known: {})",
            a.arch,
            registry.names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let is_vanilla = factory.name() == "vanilla";
    let nonlinearity = match a.nonlinearity {
        NonlinearityArg::Tanh => Nonlinearity::Tanh,
        NonlinearityArg::Identity => Nonlinearity::Identity,
    };
    if !is_vanilla && matches!(nonlinearity, Nonlinearity::Identity) {
        return Err(Failure::Usage("--nonlinearity applies to vanilla layers only".into()));
    }
    if is_vanilla && n_in != a.n {
        return Err(Failure::Usage(
            "generated vanilla networks use U = I and need --n-in equal to --n; use `compute` with a weights file"
                .into(),
        ));
    }
    for (flag, v) in [("--sigma-x", a.sigma_x), ("--sigma-h0", a.sigma_h0)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Failure::Usage(format!("{flag} must be a finite variance ≥ 0")));
        }
    }

    let rng = RngSpec::new(a.est.seed);
    let mut cells = Vec::with_capacity(a.layers);
    for layer in 0..a.layers {
        let spec = CellSpec {
            n_hidden: a.n,
            n_input: if layer == 0 { n_in } else { a.n },
            nonlinearity,
        };
        let mut stream = rng.stream(StreamKind::Weights, layer as u32);
        cells.push(factory.random(&spec, &init, &mut stream)?);
    }
    let net = Network::new(cells)?;
    let config = estimator_config(&a.est, a.batch, net.total_hidden())?;

    let inputs = gen_inputs(config.sequence_len(), n_in, a.sigma_x, a.batch, &rng);
    let states = gen_initial_states(&net, a.sigma_h0, a.batch, &rng);
    let result = run_batch(&net, &config, &inputs, &states)?;
    finish(&result, &a.est, out)
}

fn compute(a: &ComputeArgs, out: &mut dyn Write) -> CmdResult {
    let registry = CellRegistry::builtin();
    let net = load_weights(&a.weights, &registry)?;
    let rng = RngSpec::new(a.est.seed);

    let (inputs, batch): (Vec<DMatrix<f64>>, usize) = match &a.inputs {
        Some(path) => {
            let seqs = load_sequences(path)?;
            let batch = a.batch.unwrap_or(seqs.len());
            if batch > seqs.len() {
                return Err(Failure::Run(Error::Config(format!(
                    "--batch {batch} exceeds the {} sequences in {}",
                    seqs.len(),
                    path.display()
                ))));
            }
            if let Some(seq) = seqs.iter().find(|s| s.ncols() != net.n_input()) {
                return Err(Failure::Run(Error::dim(
                    format!("inputs in {}", path.display()),
                    format!("{} columns (network n_input)", net.n_input()),
                    format!("{} columns", seq.ncols()),
                )));
            }
            (seqs, batch)
        }
        None => {
            if !(a.sigma_x >= 0.0 && a.sigma_x.is_finite()) {
                return Err(Failure::Usage("--sigma-x must be a finite variance ≥ 0".into()));
            }
            let batch = a.batch.unwrap_or(10);
            let len = a.est.warmup + a.est.t;
            (gen_inputs(len, net.n_input(), a.sigma_x, batch, &rng), batch)
        }
    };
    if !(a.sigma_h0 >= 0.0 && a.sigma_h0.is_finite()) {
        return Err(Failure::Usage("--sigma-h0 must be a finite variance ≥ 0".into()));
    }
    let config = estimator_config(&a.est, batch, net.total_hidden())?;
    let states: Vec<NetState> = gen_initial_states(&net, a.sigma_h0, batch, &rng);
    let result = run_batch(&net, &config, &inputs, &states)?;
    finish(&result, &a.est, out)
}

fn features(a: &FeaturesArgs, out: &mut dyn Write) -> CmdResult {
    if a.spectrum.len() > 2 {
        return Err(Failure::Usage("--spectrum accepts one or two files".into()));
    }
    if a.marginal_tol.is_nan() || a.marginal_tol < 0.0 {
        return Err(Failure::Usage("--marginal-tol must be ≥ 0".into()));
    }
    let first = load_spectrum(&a.spectrum[0])?;
    let f = summarize(first.mean(), a.marginal_tol)?;
    let distances = match a.spectrum.get(1) {
        Some(path) => {
            let second = load_spectrum(path)?;
            Some((
                rms_distance(first.mean(), second.mean())?,
                mean_difference(first.mean(), second.mean())?,
            ))
        }
        None => None,
    };
    match a.format {
        TextFormat::Text => {
            print_features(&f, out);
            if let Some((rms, md)) = distances {
                let _ = writeln!(out, "rms_distance    {rms}");
                let _ = writeln!(out, "mean_difference {md}");
            }
        }
        TextFormat::Json => {
            let mut value = serde_json::to_value(f).expect("features serialize");
            if let Some((rms, md)) = distances {
                value["rms_distance"] = rms.into();
                value["mean_difference"] = md.into();
            }
            let _ = writeln!(out, "{value}");
        }
    }
    Ok(())
}

fn check(a: &CheckArgs, out: &mut dyn Write) -> CmdResult {
    let settings = CheckSettings {
        inject_fault: a.inject_fault,
        ..Default::default()
    };
    let outcomes = run_checks(&settings);
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    for o in &outcomes {
        let tol = if o.tolerance == 0.0 {
            "exact".to_string()
        } else {
            format!("tol {:.0e}", o.tolerance)
        };
        let _ = writeln!(
            out,
            "{}  {:width$}  {:.3e} ({tol})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.measured,
        );
        if let Some(e) = &o.error {
            let _ = writeln!(out, "      {e}");
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let _ = writeln!(out, "{} checks, {} failed", outcomes.len(), failed);
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Run(Error::Config(format!("{failed} self-checks failed"))))
    }
}
