//! Command-line interface: `fit`, `predict`, `simulate`, `residuals` and `graph`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::SpatioTemporalDataset;
use crate::error::{Error, Result};
use crate::graph::{dedupe_locations, order_locations, to_dot, ReferenceSet};
use crate::io::artifact::FitArtifact;
use crate::io::config::{ReferenceSource, RunConfig};
use crate::io::grid::{read_ascii_grid, write_ascii_grid};
use crate::io::table::{
    read_locations_csv, read_points_csv, write_file, write_parameters, write_pit, write_predictions, write_random_effects,
    write_simulations,
};
use crate::io::{fmt, read_dataset};
use crate::laplace::{fit, initial_parameters, FitResult};
use crate::model::{observed_reference_set, Model, SpaceTimePoint};
use crate::predict::{predict, PredictOptions, PredictionRecord};
use crate::residuals::{dispersion_direction, ks_uniform, simulate_residuals, Dispersion};
use crate::simulate::simulate_replicates;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "stnngp", version, about = "Spatio-temporal NNGP models fitted by Laplace-approximated maximum likelihood")]
pub struct Cli {
    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model and write the fit artifact, parameter table and random effects.
    Fit(FitArgs),
    /// Predict at points or on a raster grid from a fit artifact.
    Predict(PredictArgs),
    /// Simulate responses from a fit artifact.
    Simulate(SimulateArgs),
    /// Simulation-based PIT residuals and a KS uniformity test.
    Residuals(ResidualArgs),
    /// Build the neighbour graph and write it as DOT.
    Graph(GraphArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Observations as CSV or GeoJSON.
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Output directory for fit.json, parameters.csv and random_effects.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Fit artifact written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV of prediction points with coordinate, time and covariate columns.
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub points: Option<PathBuf>,
    /// ESRI ASCII raster whose non-NODATA cells are predicted.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Time labels for grid prediction (default: fitted times plus the forecast horizon).
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<i64>,
    /// Forecast horizon past the last fitted time (default from the configuration).
    #[arg(long)]
    pub forecast: Option<usize>,
    /// Keep fitted effects fixed and ignore parameter uncertainty.
    #[arg(long)]
    pub hold_fitted: bool,
    /// Prediction CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for one raster per layer and time (grid prediction only).
    #[arg(long, requires = "grid")]
    pub grid_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n_sim: usize,
    /// Hold random effects at their fitted modes.
    #[arg(long)]
    pub conditional: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ResidualArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub n_sim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Singular(_) | Error::DegenerateBlup(_) | Error::InnerDivergence(_) | Error::SaddleAtMode(_) => EXIT_NONCONVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Parses arguments, runs the command, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Fit(a) => run_fit(a),
        Command::Predict(a) => run_predict(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Residuals(a) => run_residuals(a),
        Command::Graph(a) => run_graph(a),
    }
}

fn load_input(a: &DataArgs) -> Result<(RunConfig, SpatioTemporalDataset, ReferenceSet)> {
    let cfg = match &a.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    let data = read_dataset(&a.data, &cfg.columns)?.data;
    data.validate(cfg.family)?;
    let refs = match &cfg.reference {
        ReferenceSource::Observed => observed_reference_set(&data)?,
        ReferenceSource::File(p) => {
            let (unique, _) = dedupe_locations(&read_locations_csv(p, &cfg.columns.coords)?);
            order_locations(unique)?
        }
    };
    Ok((cfg, data, refs))
}

fn parameter_table(fit: &FitResult) -> String {
    let mut out = format!("{:<16} {:>14} {:>14} {:>6}\n", "", "par", "se", "fixed");
    for (p, se) in fit.params.params.iter().zip(&fit.se) {
        out.push_str(&format!("{:<16} {:>14.6} {:>14.6} {:>6}\n", p.name, p.value, se, p.fixed));
    }
    out
}

fn run_fit(a: &FitArgs) -> Result<i32> {
    let (cfg, data, refs) = load_input(&a.input)?;
    let model = Model::build(cfg.model_spec(), refs, &data, data.n_times(), &[])?;
    log::info!(
        "{} observations, {} times, {} reference nodes, {} random effects",
        model.n_obs(),
        model.n_times(),
        model.refs.len(),
        model.n_effects()
    );
    let mut init = initial_parameters(&model, &data.covariate_names);
    cfg.apply_overrides(&mut init)?;
    let result = fit(&model, &init, &cfg.fit_options())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    FitArtifact::new(&cfg, &model, &data, &result).write(&a.out.join("fit.json"))?;
    let label = |t: usize| data.time_label(t);
    write_file(&a.out.join("parameters.csv"), |w| write_parameters(w, &result))?;
    write_file(&a.out.join("random_effects.csv"), |w| write_random_effects(w, &model, &result, label))?;
    print!("{}", parameter_table(&result));
    println!("negative log-likelihood {}", fmt(result.nll));
    println!("{} after {} iterations", result.message, result.iterations);
    Ok(if result.converged { EXIT_OK } else { EXIT_NONCONVERGENCE })
}

fn internal_time(data: &SpatioTemporalDataset, label: i64, horizon: usize) -> Result<usize> {
    let first = data.time_label(0);
    let last = data.time_label(data.n_times() - 1 + horizon);
    if label < first || label > last {
        return Err(Error::invalid(format!(
            "time {label} outside the predictable range {first}..={last}; raise the forecast horizon to predict further ahead"
        )));
    }
    Ok((label - first) as usize)
}

fn run_predict(a: &PredictArgs) -> Result<i32> {
    let art = FitArtifact::read(&a.fit)?;
    let model = art.model()?;
    let data = &art.dataset;
    let horizon = a.forecast.unwrap_or(art.config.forecast);
    let opts = PredictOptions {
        hold_fitted: a.hold_fitted,
        inner: art.config.inner,
    };
    let label = |t: usize| data.time_label(t);
    let dim = model.refs.dim();
    if let Some(points) = &a.points {
        let cols = &art.config.columns;
        let rows = read_points_csv(points, &cols.coords, &cols.time, &data.covariate_names)?;
        let pts = rows
            .iter()
            .map(|r| {
                Ok(SpaceTimePoint {
                    location: r.location.clone(),
                    time: internal_time(data, r.time, horizon)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let covs: Vec<Vec<f64>> = rows.into_iter().map(|r| r.covariates).collect();
        let cov = (model.n_covariates > 0).then_some(covs.as_slice());
        let records = predict(&model, &art.fit, &pts, cov, &opts)?;
        write_file(&a.out, |w| write_predictions(w, &records, dim, label))?;
        return Ok(EXIT_OK);
    }
    let grid_path = a.grid.as_ref().expect("clap requires --points or --grid");
    if model.n_covariates > 0 {
        return Err(Error::invalid("grid prediction needs covariate rasters, which are not supported; use --points"));
    }
    if dim != 2 {
        return Err(Error::invalid("grid prediction needs two-dimensional locations"));
    }
    let (grid, _) = read_ascii_grid(grid_path)?;
    let times: Vec<usize> = if a.times.is_empty() {
        (0..data.n_times() + horizon).collect()
    } else {
        a.times.iter().map(|&l| internal_time(data, l, horizon)).collect::<Result<_>>()?
    };
    let cells = grid.centroids();
    let pts: Vec<SpaceTimePoint> = times
        .iter()
        .flat_map(|&t| cells.iter().map(move |c| SpaceTimePoint { location: c.clone(), time: t }))
        .collect();
    let records = predict(&model, &art.fit, &pts, None, &opts)?;
    write_file(&a.out, |w| write_predictions(w, &records, dim, label))?;
    if let Some(dir) = &a.grid_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let layers: [(&str, fn(&PredictionRecord) -> f64); 6] = [
            ("w", |r| r.w),
            ("w_se", |r| r.w_se),
            ("linear", |r| r.linear),
            ("linear_se", |r| r.linear_se),
            ("response", |r| r.response),
            ("response_se", |r| r.response_se),
        ];
        for (k, &t) in times.iter().enumerate() {
            let block = &records[k * cells.len()..(k + 1) * cells.len()];
            for (name, get) in layers {
                let values: Vec<f64> = block.iter().map(get).collect();
                write_ascii_grid(&dir.join(format!("{name}_{}.asc", label(t))), &grid, &values)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn run_simulate(a: &SimulateArgs) -> Result<i32> {
    let art = FitArtifact::read(&a.fit)?;
    let model = art.model()?;
    let seed = a.seed.unwrap_or(art.config.seed);
    let sims: Vec<Vec<f64>> = simulate_replicates(&model, &art.fit, a.n_sim, a.conditional, seed)?
        .into_iter()
        .map(|s| s.responses)
        .collect();
    write_file(&a.out, |w| write_simulations(w, &model, &sims, |t| art.dataset.time_label(t)))?;
    Ok(EXIT_OK)
}

fn run_residuals(a: &ResidualArgs) -> Result<i32> {
    let art = FitArtifact::read(&a.fit)?;
    let model = art.model()?;
    let seed = a.seed.unwrap_or(art.config.seed);
    let n_sim = a.n_sim.unwrap_or(art.config.n_sim);
    let res = simulate_residuals(&model, &art.fit, n_sim, seed)?;
    write_file(&a.out, |w| write_pit(w, &model, &res.pit, |t| art.dataset.time_label(t)))?;
    let ks = ks_uniform(&res.pit)?;
    println!("KS statistic {}", fmt(ks.statistic));
    println!("KS p-value {}", fmt(ks.p_value));
    let dir = match dispersion_direction(&res.pit) {
        Dispersion::Under => "under",
        Dispersion::Over => "over",
    };
    println!("PIT spread suggests {dir}-dispersion relative to the model");
    Ok(EXIT_OK)
}

fn run_graph(a: &GraphArgs) -> Result<i32> {
    let (cfg, data, refs) = load_input(&a.input)?;
    let model = Model::build(cfg.model_spec(), refs, &data, data.n_times(), &[])?;
    write_text(&a.out, &to_dot(&model.dag, &model.refs))?;
    let cal = &model.process.calibration;
    println!("reference nodes {}", model.refs.len());
    println!("edges {}", model.dag.n_edges());
    println!("mean edge distance {}", fmt(cal.mean_edge_distance));
    println!("k_cal {}", fmt(cal.k_cal));
    println!("rho_tau {}", fmt(cal.rho_tau));
    Ok(EXIT_OK)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
