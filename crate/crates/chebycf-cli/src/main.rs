//! `chebycf`: spectral collaborative filtering from the command line.
//!
//! Every run is deterministic given its inputs and seed, and emits its
//! fully-resolved configuration as JSON alongside the primary output (a
//! `<output>.run.json` sidecar when writing to a file, one line on stderr
//! when writing to stdout), so any artifact can be reproduced from its
//! sidecar alone. Wall-clock timing fields are the only exception to the
//! byte-determinism guarantee.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use chebycf::eval::{evaluate, grid_search, grid_csv, metrics_csv_row, HyperGrid, METRICS_CSV_HEADER};
use chebycf::model::{ChebyCFModel, HyperParams};
use chebycf::verify::run_verification;
use chebycf::{ChebyFilterSpec, Error, InteractionDataset};

/// Dataset root honored by relative `--train`/`--test` paths.
const DATA_ROOT_VAR: &str = "CHEBYCF_DATA_ROOT";

const EXIT_IO: u8 = 3;
const EXIT_MODEL: u8 = 4;
const EXIT_VERIFY: u8 = 5;
const EXIT_MISMATCH: u8 = 6;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, invalid parameter value)
  3  I/O or data error (missing file, parse failure, bad split)
  4  model file error (unsupported version, corruption)
  5  verification failure (a numerical check missed its tolerance)
  6  dataset mismatch (model was fitted on a different train split)

Environment:
  CHEBYCF_DATA_ROOT  directory that relative --train/--test paths resolve
                     against (absolute paths are used as given)";

#[derive(Parser)]
#[command(
    name = "chebycf",
    version,
    about = "Graph spectral collaborative filtering with Chebyshev-interpolated polynomial filters",
    after_help = EXIT_HELP
)]
struct Cli {
    /// Worker threads for batched scoring (0 = one per CPU core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a filter on a train split and save the model file.
    Fit(FitArgs),
    /// Score a saved model against the held-out split; emit a metrics CSV.
    Evaluate(EvaluateArgs),
    /// Print top-N recommendations for users of a saved model.
    Recommend(RecommendArgs),
    /// Sweep hyperparameter ranges; emit the full CSV and the best model.
    Grid(GridArgs),
    /// Sample a plateau filter's transfer function as CSV ("lambda,weight").
    ExportFilter(ExportFilterArgs),
    /// Run the numerical verification suite against dense oracles.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Train split, adjacency-list text: `user item item ...` per line.
    #[arg(long)]
    train: PathBuf,
    /// Test split, same format, disjoint from train.
    #[arg(long)]
    test: PathBuf,
}

impl DataArgs {
    /// Resolve against `CHEBYCF_DATA_ROOT` and load.
    fn load(&self) -> Result<(InteractionDataset, PathBuf, PathBuf), Error> {
        let train = resolve_data_path(&self.train);
        let test = resolve_data_path(&self.test);
        let dataset = InteractionDataset::load(&train, &test)?;
        Ok((dataset, train, test))
    }
}

fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_VAR) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Args)]
struct ParamArgs {
    /// Plateau flatness exponent.
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    /// Ideal-pass blend weight (0 disables the ideal branch).
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Ideal-pass rank (only used when alpha > 0).
    #[arg(long, default_value_t = 128)]
    eta: usize,
    /// Degree-normalization power.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Polynomial filter order.
    #[arg(long, default_value_t = 8)]
    order: usize,
}

impl ParamArgs {
    fn to_params(&self) -> HyperParams {
        HyperParams {
            phi: self.phi,
            alpha: self.alpha,
            eta: self.eta,
            beta: self.beta,
            order_k: self.order,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// RNG seed for the ideal-pass basis iteration.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model file produced by `fit` or `grid`.
    #[arg(long)]
    model: PathBuf,
    /// Cutoffs to evaluate at (the CSV prints the N = 10 and 20 columns).
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 20])]
    at: Vec<usize>,
    /// Label for the CSV's dataset column.
    #[arg(long, default_value = "dataset")]
    dataset_name: String,
    /// Metrics CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model file produced by `fit` or `grid`.
    #[arg(long)]
    model: PathBuf,
    /// External user ids to recommend for (all users when omitted).
    #[arg(long, value_delimiter = ',')]
    users: Option<Vec<u64>>,
    /// List length per user.
    #[arg(long, default_value_t = 20)]
    top: usize,
    /// Destination (stdout when omitted). One line per user:
    /// `user<TAB>item:score item:score ...` with external ids.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Flatness exponents to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = HyperGrid::default().phis)]
    phis: Vec<f64>,
    /// Blend weights to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = HyperGrid::default().alphas)]
    alphas: Vec<f64>,
    /// Ideal-pass ranks to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = HyperGrid::default().etas)]
    etas: Vec<usize>,
    /// Normalization powers to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = HyperGrid::default().betas)]
    betas: Vec<f64>,
    /// Polynomial filter order (fixed across the sweep).
    #[arg(long, default_value_t = 8)]
    order: usize,
    /// RNG seed for the ideal-pass bases.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Label for the CSV's dataset column.
    #[arg(long, default_value = "dataset")]
    dataset_name: String,
    /// Grid CSV destination (one row per combination plus a BEST row).
    #[arg(long)]
    out: PathBuf,
    /// Also refit the winning combination and save it here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportFilterArgs {
    /// Plateau flatness exponent.
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    /// Polynomial filter order.
    #[arg(long, default_value_t = 8)]
    order: usize,
    /// Sample count over the rescaled spectrum [-1, 1].
    #[arg(long, default_value_t = 1001)]
    points: usize,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Seed for the randomized check instances.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Fully-resolved run configuration, one per invocation. Fields irrelevant
/// to the subcommand stay `None` and are omitted from the JSON.
#[derive(Serialize)]
struct RunConfig {
    command: &'static str,
    threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<ParamsJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<GridJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    users: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
}

#[derive(Serialize)]
struct ParamsJson {
    phi: f64,
    alpha: f64,
    eta: usize,
    beta: f64,
    order: usize,
}

impl From<&HyperParams> for ParamsJson {
    fn from(p: &HyperParams) -> Self {
        ParamsJson {
            phi: p.phi,
            alpha: p.alpha,
            eta: p.eta,
            beta: p.beta,
            order: p.order_k,
        }
    }
}

#[derive(Serialize)]
struct GridJson {
    phis: Vec<f64>,
    alphas: Vec<f64>,
    etas: Vec<usize>,
    betas: Vec<f64>,
    order: usize,
}

impl RunConfig {
    fn new(command: &'static str, threads: usize) -> Self {
        RunConfig {
            command,
            threads,
            data_root: std::env::var_os(DATA_ROOT_VAR).map(PathBuf::from),
            train: None,
            test: None,
            model: None,
            out: None,
            model_out: None,
            params: None,
            grid: None,
            seed: None,
            n_values: None,
            top_n: None,
            users: None,
            dataset_name: None,
            points: None,
        }
    }
}

/// Write `text` to the sidecar-bearing destination, or stdout. The resolved
/// config lands next to the file (`<out>.run.json`) or on stderr.
fn emit(out: Option<&Path>, text: &str, config: &RunConfig) -> Result<(), Error> {
    let json = serde_json::to_string(config).expect("config serializes");
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".run.json");
            std::fs::write(PathBuf::from(sidecar), json)?;
        }
        None => {
            print!("{text}");
            eprintln!("{json}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore the error: the global pool can only be set once, which is
        // fine when tests drive several commands in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) | Error::EtaOutOfRange { .. } => 2,
        Error::ModelVersion { .. } | Error::ModelCorrupt(_) => EXIT_MODEL,
        Error::DatasetMismatch => EXIT_MISMATCH,
        _ => EXIT_IO,
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let threads = cli.threads;
    match cli.command {
        Command::Fit(args) => cmd_fit(args, threads),
        Command::Evaluate(args) => cmd_evaluate(args, threads),
        Command::Recommend(args) => cmd_recommend(args, threads),
        Command::Grid(args) => cmd_grid(args, threads),
        Command::ExportFilter(args) => cmd_export_filter(args, threads),
        Command::Verify(args) => cmd_verify(args, threads),
    }
}

fn cmd_fit(args: FitArgs, threads: usize) -> Result<ExitCode, Error> {
    let (dataset, train, test) = args.data.load()?;
    let params = args.params.to_params();
    let model = ChebyCFModel::fit(&dataset, &params, args.seed)?;
    model.save(&args.out)?;

    let mut config = RunConfig::new("fit", threads);
    config.train = Some(train);
    config.test = Some(test);
    config.out = Some(args.out.clone());
    config.params = Some((&params).into());
    config.seed = Some(args.seed);
    let json = serde_json::to_string(&config).expect("config serializes");
    let mut sidecar = args.out.as_os_str().to_owned();
    sidecar.push(".run.json");
    std::fs::write(PathBuf::from(sidecar), json)?;

    println!(
        "fitted {} users x {} items ({} interactions), saved to {}",
        model.num_users(),
        model.num_items(),
        dataset.train().nnz(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: EvaluateArgs, threads: usize) -> Result<ExitCode, Error> {
    let (dataset, train, test) = args.data.load()?;
    let model = ChebyCFModel::load(&resolve_data_path(&args.model))?;
    let report = evaluate(&model, &dataset, &args.at)?;

    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&metrics_csv_row(&args.dataset_name, &report));
    csv.push('\n');

    let mut config = RunConfig::new("evaluate", threads);
    config.train = Some(train);
    config.test = Some(test);
    config.model = Some(args.model.clone());
    config.out = args.out.clone();
    config.params = Some(model.params().into());
    config.n_values = Some(args.at.clone());
    config.dataset_name = Some(args.dataset_name.clone());
    emit(args.out.as_deref(), &csv, &config)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_recommend(args: RecommendArgs, threads: usize) -> Result<ExitCode, Error> {
    let (dataset, train, test) = args.data.load()?;
    let model = ChebyCFModel::load(&resolve_data_path(&args.model))?;
    model.verify_dataset(&dataset)?;

    let user_indices: Vec<usize> = match &args.users {
        Some(ids) => ids
            .iter()
            .map(|&id| {
                dataset.user_index(id).ok_or_else(|| {
                    Error::InvalidParameter(format!("unknown user id {id}"))
                })
            })
            .collect::<Result<_, _>>()?,
        None => (0..dataset.num_users()).collect(),
    };

    let mut text = String::new();
    for &u in &user_indices {
        let recs = model.recommend_topn_for_user(u, args.top)?;
        write!(text, "{}", dataset.user_id(u)).expect("string write");
        for (item, score) in recs {
            write!(text, "\t{}:{}", dataset.item_id(item), score).expect("string write");
        }
        text.push('\n');
    }

    let mut config = RunConfig::new("recommend", threads);
    config.train = Some(train);
    config.test = Some(test);
    config.model = Some(args.model.clone());
    config.out = args.out.clone();
    config.top_n = Some(args.top);
    config.users = args.users.clone();
    emit(args.out.as_deref(), &text, &config)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_grid(args: GridArgs, threads: usize) -> Result<ExitCode, Error> {
    let (dataset, train, test) = args.data.load()?;
    let grid = HyperGrid {
        phis: args.phis.clone(),
        alphas: args.alphas.clone(),
        etas: args.etas.clone(),
        betas: args.betas.clone(),
        order_k: args.order,
    };
    let (best, reports) = grid_search(&dataset, &grid, 20, args.seed)?;
    let csv = grid_csv(&args.dataset_name, &reports, &best);

    let mut config = RunConfig::new("grid", threads);
    config.train = Some(train);
    config.test = Some(test);
    config.out = Some(args.out.clone());
    config.model_out = args.model_out.clone();
    config.grid = Some(GridJson {
        phis: args.phis,
        alphas: args.alphas,
        etas: args.etas,
        betas: args.betas,
        order: args.order,
    });
    config.params = Some((&best).into());
    config.seed = Some(args.seed);
    config.dataset_name = Some(args.dataset_name.clone());
    emit(Some(&args.out), &csv, &config)?;

    if let Some(model_out) = &args.model_out {
        let model = ChebyCFModel::fit(&dataset, &best, args.seed)?;
        model.save(model_out)?;
    }
    println!(
        "swept {} combinations, best: phi={} alpha={} eta={} beta={}",
        reports.len(),
        best.phi,
        best.alpha,
        best.eta,
        best.beta
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_filter(args: ExportFilterArgs, threads: usize) -> Result<ExitCode, Error> {
    let spec = ChebyFilterSpec::plateau(args.phi, args.order)?;
    if args.points < 2 {
        return Err(Error::InvalidParameter(
            "points must be at least 2".into(),
        ));
    }
    let mut csv = String::from("lambda,weight\n");
    for (lambda, weight) in spec.sample_transfer(args.points) {
        writeln!(csv, "{lambda},{weight}").expect("string write");
    }

    let mut config = RunConfig::new("export-filter", threads);
    config.out = args.out.clone();
    config.params = Some(ParamsJson {
        phi: args.phi,
        alpha: 0.0,
        eta: 0,
        beta: 0.0,
        order: args.order,
    });
    config.points = Some(args.points);
    emit(args.out.as_deref(), &csv, &config)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs, _threads: usize) -> Result<ExitCode, Error> {
    let report = run_verification(args.seed)?;
    print!("{}", report.render());
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_VERIFY))
    }
}
