use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use injectdrop::data::{load_csv, Dataset, Standardizer};
use injectdrop::dropout::DropoutConfig;
use injectdrop::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use injectdrop::mc::{mc_predict, McEstimate, DEFAULT_PASSES};
use injectdrop::metrics::{self, DEFAULT_ALPHA_POINTS};
use injectdrop::nn::{train, Activation, MlpModel, TrainConfig};
use injectdrop::report::{export_report, load_report, write_atomic};
use injectdrop::scaling::{self, CalibrationSet, DEFAULT_TOLERANCE};
use injectdrop::tuner::{self, write_rows_csv, RateGrid, SweepSettings};
use injectdrop::{Error, Result};
use serde_json::json;

const MODEL_FILE: &str = "model.json";
const STANDARDIZER_FILE: &str = "standardizer.json";

#[derive(Parser)]
#[command(name = "injectdrop", version, about = "Post hoc uncertainty for regression MLPs via dropout injection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a plain model on a CSV and save it with its standardizer.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model.json and standardizer.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Monte Carlo predictions at one dropout rate.
    Inject {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = DEFAULT_PASSES)]
        passes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Predictions CSV (instance_id,mean,variance); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search of the dropout rate, unscaled and scale-aware.
    Tune {
        #[command(flatten)]
        model: ModelArg,
        /// Validation CSV.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Output directory for sweep.csv and selection.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale factor and balance-relaxed scale factor for saved predictions.
    Relax {
        #[arg(long)]
        predictions: PathBuf,
        /// CSV whose last column holds the targets of the predicted rows.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA_POINTS)]
        alpha_points: usize,
        /// Result JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full repeated train/validation/test protocol.
    Experiment {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Also train one embedded-dropout model per rate for comparison.
        #[arg(long)]
        embedded: bool,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit all report files from a saved summary.json.
    Report {
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArg {
    /// model.json, or a directory written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct NetArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    hidden: Vec<usize>,
    #[arg(long, default_value = "relu")]
    activation: Activation,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

impl NetArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
            dropout: None,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// `min,max,count,log|lin`; 15 log-spaced rates in [0.001, 0.5] by default.
    #[arg(long)]
    rate_grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA_POINTS)]
    alpha_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SweepArgs {
    fn grid(&self) -> Result<RateGrid> {
        self.rate_grid.as_deref().map_or_else(|| Ok(RateGrid::default()), RateGrid::parse)
    }

    fn settings(&self) -> SweepSettings {
        SweepSettings {
            passes: self.passes,
            seed: self.seed,
            alpha_points: self.alpha_points,
            tau: self.tau,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let mut bytes = serde_json::to_vec_pretty(value).expect("json value serializes");
    bytes.push(b'\n');
    write_atomic(dir, &name.to_string_lossy(), &bytes).map(drop)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Loads a model and, when present next to it, its standardizer.
fn load_model(path: &Path) -> Result<(MlpModel, Option<Standardizer>)> {
    let model_path = if path.is_dir() { path.join(MODEL_FILE) } else { path.to_owned() };
    let model = MlpModel::from_json(&read_text(&model_path)?)?;
    let sidecar = model_path.with_file_name(STANDARDIZER_FILE);
    let standardizer = if sidecar.is_file() {
        let st: Standardizer =
            serde_json::from_str(&read_text(&sidecar)?).map_err(|e| Error::Document(format!("{}: {e}", sidecar.display())))?;
        if st.dim() != model.input_dim() {
            return Err(Error::InputShape {
                expected: model.input_dim(),
                got: st.dim(),
            });
        }
        Some(st)
    } else {
        None
    };
    Ok((model, standardizer))
}

fn standardized(data: &Dataset, st: Option<&Standardizer>) -> Result<Dataset> {
    match st {
        Some(st) => st.transform(data),
        None => Ok(data.clone()),
    }
}

fn cmd_train(data: &Path, out: &Path, seed: u64, net: &NetArgs) -> Result<()> {
    let raw = load_csv(data)?;
    let st = Standardizer::fit(&raw);
    let set = st.transform(&raw)?;
    let model = train(&set, &net.config(seed), seed)?;
    let predictions: Vec<f64> = set
        .features()
        .iter_rows()
        .map(|x| model.forward(x).map(|z| st.destandardize_target(z)))
        .collect::<Result<_>>()?;
    let rmse = metrics::rmse(raw.targets(), &predictions)?;

    create_dir(out)?;
    write_atomic(out, MODEL_FILE, model.to_json().as_bytes())?;
    let st_json = serde_json::to_vec_pretty(&st).expect("standardizer serializes");
    write_atomic(out, STANDARDIZER_FILE, &st_json)?;
    println!(
        "trained {:?} on {} rows; training RMSE {rmse:.6}; wrote {}",
        model.layer_sizes(),
        raw.len(),
        out.display()
    );
    Ok(())
}

/// Predictions are reported in the units of the CSV targets.
fn cmd_inject(model: &Path, data: &Path, rate: f64, passes: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let (model, st) = load_model(model)?;
    let set = standardized(&load_csv(data)?, st.as_ref())?;
    let dropout = DropoutConfig::all_hidden(rate, &model)?;
    let mut est = mc_predict(&model, set.features(), &dropout, passes, seed)?;
    if let Some(st) = &st {
        let unit = st.target_unit();
        for (m, v) in est.mean.iter_mut().zip(est.variance.iter_mut()) {
            *m = st.destandardize_target(*m);
            *v *= unit * unit;
        }
    }
    let mut buf = Vec::new();
    est.write_csv(&mut buf)?;
    match out {
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            write_atomic(dir, &path.file_name().unwrap_or_default().to_string_lossy(), &buf)?;
        }
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn cmd_tune(model: &Path, data: &Path, sweep: &SweepArgs, out: &Path) -> Result<()> {
    let (model, st) = load_model(model)?;
    let validation = standardized(&load_csv(data)?, st.as_ref())?;
    let grid = sweep.grid()?;
    let report = tuner::sweep(&model, None, &validation, &grid, &sweep.settings())?;

    create_dir(out)?;
    let mut csv = Vec::new();
    write_rows_csv(&report.injected.rows, &mut csv)?;
    write_atomic(out, "sweep.csv", &csv)?;
    let s = &report.injected.selection;
    let selection = json!({
        "rate_unscaled": s.rate_unscaled,
        "rate_scaled": s.rate_scaled,
        "scale_factor": s.scale_factor,
        "relaxation": report.relaxation,
        "relaxation_error": report.relaxation_error,
    });
    write_json(&out.join("selection.json"), &selection)?;
    println!(
        "unscaled rate {}; scale-aware rate {} with C = {:.6}",
        s.rate_unscaled, s.rate_scaled, s.scale_factor
    );
    if let Some(r) = &report.relaxation {
        println!("relaxed C_r = {:.6} (balance {:+.4})", r.factor_relaxed, r.final_balance);
    }
    Ok(())
}

fn cmd_relax(predictions: &Path, data: &Path, tau: f64, alpha_points: usize, out: Option<&Path>) -> Result<()> {
    let text = read_text(predictions)?;
    let est = McEstimate::read_csv(text.as_bytes())?;
    let targets = load_csv(data)?;
    if targets.len() != est.len() {
        return Err(Error::InputShape {
            expected: est.len(),
            got: targets.len(),
        });
    }
    let y = targets.targets();
    let e2 = scaling::ideal_uncertainty(y, &est.mean)?;
    let scale = scaling::optimal_scale(&e2, &est.variance)?;
    let set = CalibrationSet::new(y, &est.mean, &est.variance, alpha_points)?;
    let bracket = scaling::bracket(&set, scale.factor)?;
    let relaxed = scaling::relax(&set, bracket, tau)?;
    let result = json!({
        "scale_factor": scale.factor,
        "relaxed_factor": relaxed.factor_relaxed,
        "iterations": relaxed.iterations,
        "final_balance": relaxed.final_balance,
        "tolerance": relaxed.tolerance,
        "nll_unscaled": scale.nll_unscaled,
        "nll_scaled": scale.nll_scaled,
        "ma_unscaled": set.miscalibration_area(1.0)?,
        "ma_scaled": set.miscalibration_area(scale.factor)?,
        "ma_relaxed": set.miscalibration_area(relaxed.factor_relaxed)?,
    });
    match out {
        Some(path) => write_json(path, &result),
        None => {
            println!("{}", serde_json::to_string_pretty(&result).expect("json value serializes"));
            Ok(())
        }
    }
}

fn print_aggregates(report: &ExperimentReport) {
    println!("{} ({} rows, {} repeats)", report.dataset, report.rows, report.repeats.len());
    for a in &report.aggregates {
        println!("  {:<28} {:>12.6} ± {:<10.6} (n={})", a.metric, a.mean, a.std, a.count);
    }
}

fn cmd_experiment(data: &Path, sweep: &SweepArgs, repeats: usize, embedded: bool, net: &NetArgs, out: &Path) -> Result<()> {
    let dataset = load_csv(data)?;
    let mut config = ExperimentConfig {
        train: net.config(0),
        grid: sweep.grid()?,
        sweep: sweep.settings(),
        embedded,
        ..ExperimentConfig::default()
    };
    config.split.repeats = repeats;
    config.split.base_seed = sweep.seed;
    let report = run_experiment(&dataset, &config)?;
    let manifest = export_report(&report, out)?;
    print_aggregates(&report);
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(())
}

fn cmd_report(summary: &Path, out: &Path) -> Result<()> {
    let report = load_report(summary)?;
    let manifest = export_report(&report, out)?;
    print_aggregates(&report);
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, out, seed, net } => cmd_train(&data, &out, seed, &net),
        Command::Inject {
            model,
            data,
            rate,
            passes,
            seed,
            out,
        } => cmd_inject(&model.model, &data, rate, passes, seed, out.as_deref()),
        Command::Tune { model, data, sweep, out } => cmd_tune(&model.model, &data, &sweep, &out),
        Command::Relax {
            predictions,
            data,
            tau,
            alpha_points,
            out,
        } => cmd_relax(&predictions, &data, tau, alpha_points, out.as_deref()),
        Command::Experiment {
            data,
            sweep,
            repeats,
            embedded,
            net,
            out,
        } => cmd_experiment(&data, &sweep, repeats, embedded, &net, &out),
        Command::Report { summary, out } => cmd_report(&summary, &out),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
