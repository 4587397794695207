use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use latent_krr::complexity::{self, Spectrum};
use latent_krr::experiment::{default_lambda_grid, run_sweep, ExperimentConfig};
use latent_krr::factor::{draw_loading, simulate_with_loading, FactorConfig};
use latent_krr::io::{read_matrix_file, read_vector_file, write_matrix_file, write_vector_csv, write_vector_file, IoError};
use latent_krr::kernels::{median_bandwidth, GramMatrix, KernelSpec, PointSet};
use latent_krr::krr::{cross_validate_lambda, KrrModel, LossSpec, SolverOptions};
use latent_krr::rng::derive_seed;

const THREADS_ENV: &str = "LATENT_KRR_THREADS";

#[derive(Parser)]
#[command(name = "latent-krr", version, about = "Kernel ridge regression on predicted latent factors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a factor-model sample and write X, Z, Y and A as headerless CSV.
    Simulate {
        /// FactorConfig as a JSON file or inline JSON.
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write an independent auxiliary design `X_aux.csv` of this size.
        #[arg(long)]
        aux_size: Option<usize>,
    },
    /// Fit a kernel ridge model and write it as JSON.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Regularization; chosen by cross-validation when omitted.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a fitted model; one value per input row.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validation table over a λ grid.
    Cv {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated λ values; 10 log-spaced points in [1e-5, 1] by default.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate R(δ), D(δ) and d(δ) on a log grid and report the fixed point.
    Complexity {
        /// Spectrum JSON (file or inline).
        #[arg(long, conflicts_with = "gram")]
        spectrum: Option<String>,
        /// Gram matrix CSV; its eigenvalues form the spectrum.
        #[arg(long)]
        gram: Option<PathBuf>,
        /// The Gram CSV is already divided by n.
        #[arg(long, requires = "gram")]
        normalized: bool,
        /// Sample size; defaults to the Gram size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1e-8)]
        delta_min: f64,
        #[arg(long, default_value_t = 10.0)]
        delta_max: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critical radius over a grid of sample sizes and its log-log slope.
    Ratefit {
        #[arg(long)]
        spectrum: String,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000,1000000")]
        n_grid: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// CSV report with header sweep,method,mean,sd,runtime_s.
        #[arg(long)]
        out: PathBuf,
        /// JSON sidecar with config, provenance and per-replication errors.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Feature matrix CSV, one row per sample.
    #[arg(long)]
    x: PathBuf,
    /// Response vector CSV.
    #[arg(long)]
    y: PathBuf,
    /// Kernel JSON; Gaussian with median bandwidth when omitted.
    #[arg(long)]
    kernel: Option<String>,
    /// Loss JSON, e.g. '{"kind":"check","tau":0.5}'.
    #[arg(long)]
    loss: Option<String>,
}

enum CliError {
    Config(String),
    Numeric(String),
}

impl From<latent_krr::Error> for CliError {
    fn from(e: latent_krr::Error) -> Self {
        if e.is_contract() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parse JSON given inline (starting with `{`) or as a file path.
fn json_arg<T: DeserializeOwned>(arg: &str) -> CliResult<T> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| config_err(format!("{arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| config_err(format!("{arg}: {e}")))
}

fn output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

struct Data {
    x: PointSet,
    y: Vec<f64>,
    kernel: KernelSpec,
    loss: LossSpec,
}

fn load_data(args: &DataArgs) -> CliResult<Data> {
    let x = PointSet::from_matrix(&read_matrix_file(&args.x)?)?;
    let y = read_vector_file(&args.y)?;
    if y.len() != x.len() {
        return Err(config_err(format!("{} feature rows but {} responses", x.len(), y.len())));
    }
    let kernel = match &args.kernel {
        Some(k) => json_arg(k)?,
        None => KernelSpec::gaussian(median_bandwidth(&x)?)?,
    };
    kernel.validate()?;
    let loss = match &args.loss {
        Some(l) => json_arg(l)?,
        None => LossSpec::Squared,
    };
    loss.validate()?;
    Ok(Data { x, y, kernel, loss })
}

fn cmd_simulate(config: &str, seed: u64, out_dir: &Path, aux_size: Option<usize>) -> CliResult<()> {
    let cfg: FactorConfig = json_arg(config)?;
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let loading = draw_loading(&cfg, derive_seed(seed, &[1]))?;
    let s = simulate_with_loading(&cfg, &loading, cfg.n, derive_seed(seed, &[2]))?;
    write_matrix_file(&out_dir.join("X.csv"), &s.x)?;
    write_matrix_file(&out_dir.join("Z.csv"), &s.z)?;
    write_vector_file(&out_dir.join("Y.csv"), &s.y)?;
    write_matrix_file(&out_dir.join("A.csv"), &s.loading)?;
    if let Some(m) = aux_size {
        let aux = simulate_with_loading(&cfg, &loading, m, derive_seed(seed, &[3]))?;
        write_matrix_file(&out_dir.join("X_aux.csv"), &aux.x)?;
    }
    Ok(())
}

fn cmd_fit(data: &DataArgs, lambda: Option<f64>, folds: usize, seed: u64, out: &Path) -> CliResult<()> {
    let d = load_data(data)?;
    let opts = SolverOptions::default();
    let lambda = match lambda {
        Some(l) => l,
        None => {
            let cv = cross_validate_lambda(&d.x, &d.y, &d.kernel, d.loss, &default_lambda_grid(), folds, seed, &opts)?;
            eprintln!("cross-validated lambda = {}", cv.best_lambda);
            cv.best_lambda
        }
    };
    let model = KrrModel::fit(d.x, &d.y, d.kernel, d.loss, lambda, &opts)?;
    let file = File::create(out).map_err(|e| config_err(format!("{}: {e}", out.display())))?;
    serde_json::to_writer(BufWriter::new(file), &model).map_err(|e| config_err(e.to_string()))?;
    Ok(())
}

fn cmd_predict(model: &Path, x: &Path, out: &Option<PathBuf>) -> CliResult<()> {
    let model: KrrModel = json_arg(&model.to_string_lossy())?;
    let pts = PointSet::from_matrix(&read_matrix_file(x)?)?;
    let pred = model.predict(&pts)?;
    write_vector_csv(output(out)?, &pred)?;
    Ok(())
}

fn cmd_cv(data: &DataArgs, grid: Option<Vec<f64>>, folds: usize, seed: u64, out: &Option<PathBuf>) -> CliResult<()> {
    let d = load_data(data)?;
    let grid = grid.unwrap_or_else(default_lambda_grid);
    let cv = cross_validate_lambda(&d.x, &d.y, &d.kernel, d.loss, &grid, folds, seed, &SolverOptions::default())?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["lambda", "mean_loss", "sd_loss"])?;
    for row in &cv.table {
        w.write_record([row.lambda.to_string(), row.mean_loss.to_string(), row.sd_loss.to_string()])?;
    }
    w.flush()?;
    eprintln!("best_lambda = {}", cv.best_lambda);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_complexity(
    spectrum: &Option<String>,
    gram_path: &Option<PathBuf>,
    normalized: bool,
    n: Option<usize>,
    delta_min: f64,
    delta_max: f64,
    points: usize,
    out: &Option<PathBuf>,
) -> CliResult<()> {
    let (spec, n) = match (spectrum, gram_path) {
        (Some(s), None) => {
            let n = n.ok_or_else(|| config_err("--n is required with --spectrum"))?;
            (json_arg::<Spectrum>(s)?, n)
        }
        (None, Some(path)) => {
            let m = read_matrix_file(path)?;
            let g = GramMatrix::from_values(m, normalized)?;
            let size = g.size();
            let g = if normalized { g } else { g.to_normalized() };
            (complexity::empirical_spectrum(&g)?, n.unwrap_or(size))
        }
        _ => return Err(config_err("give exactly one of --spectrum or --gram")),
    };
    if n == 0 || points < 2 || !(delta_min > 0.0 && delta_max > delta_min) {
        return Err(config_err("need n ≥ 1, points ≥ 2 and 0 < delta_min < delta_max"));
    }
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["delta", "R", "D", "d"])?;
    let ratio = (delta_max / delta_min).ln();
    for i in 0..points {
        let delta = delta_min * (ratio * i as f64 / (points - 1) as f64).exp();
        w.write_record([
            delta.to_string(),
            complexity::complexity_r(&spec, n, delta).to_string(),
            complexity::effective_dimension(&spec, n, delta)?.to_string(),
            complexity::statistical_dimension(&spec, delta)?.to_string(),
        ])?;
    }
    w.flush()?;
    let fp = complexity::fixed_point(&spec, n)?;
    eprintln!("delta_star = {} (iterations {}, residual {:e})", fp.delta_star, fp.iterations, fp.residual);
    Ok(())
}

fn cmd_ratefit(spectrum: &str, n_grid: &[usize], out: &Option<PathBuf>) -> CliResult<()> {
    let spec: Spectrum = json_arg(spectrum)?;
    let fit = complexity::rate_fit(&spec, n_grid)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record(["n", "delta_star"])?;
    for (n, d) in &fit.points {
        w.write_record([n.to_string(), d.to_string()])?;
    }
    w.flush()?;
    eprintln!("slope = {}", fit.slope);
    Ok(())
}

fn cmd_experiment(config: &Path, out: &Path, json: &Option<PathBuf>) -> CliResult<()> {
    let cfg: ExperimentConfig = json_arg(&config.to_string_lossy())?;
    cfg.validate()?;
    let report = run_sweep(&cfg)?;
    let file = File::create(out).map_err(|e| config_err(format!("{}: {e}", out.display())))?;
    report.write_csv(BufWriter::new(file))?;
    if let Some(path) = json {
        let file = File::create(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        report.write_json(BufWriter::new(file)).map_err(|e| config_err(e.to_string()))?;
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| config_err(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate {
            config,
            seed,
            out_dir,
            aux_size,
        } => cmd_simulate(config, *seed, out_dir, *aux_size),
        Command::Fit {
            data,
            lambda,
            folds,
            seed,
            out,
        } => cmd_fit(data, *lambda, *folds, *seed, out),
        Command::Predict { model, x, out } => cmd_predict(model, x, out),
        Command::Cv {
            data,
            grid,
            folds,
            seed,
            out,
        } => cmd_cv(data, grid.clone(), *folds, *seed, out),
        Command::Complexity {
            spectrum,
            gram,
            normalized,
            n,
            delta_min,
            delta_max,
            points,
            out,
        } => cmd_complexity(spectrum, gram, *normalized, *n, *delta_min, *delta_max, *points, out),
        Command::Ratefit { spectrum, n_grid, out } => cmd_ratefit(spectrum, n_grid, out),
        Command::Experiment { config, out, json } => cmd_experiment(config, out, json),
    }
}

fn main() -> ExitCode {
    // usage errors count as configuration errors (exit 1), not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
