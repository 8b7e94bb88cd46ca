//! The command-line workflow end to end: write a CSV and a run configuration,
//! then fit, predict, simulate, check residuals and export the graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stnngp::cli::main_with_args;
use stnngp::data::SpatioTemporalDataset;
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, Location};
use stnngp::io::config::RunConfig;
use stnngp::io::table::{write_dataset_csv, write_file};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::simulate::{design_dataset, simulate_effects, simulate_responses, with_responses};

const CONFIG: &str = "\
family = poisson
time = year
response = count
n_parents = 6
forecast = 1
seed = 9
n_sim = 60
";

/// Counts at 50 random sites over 2018..=2021.
fn simulated_counts() -> SpatioTemporalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sites: Vec<Location> = (0..50).map(|_| Location::xy(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
    let nt = 4;
    let points: Vec<SpaceTimePoint> = (0..nt).flat_map(|t| sites.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t })).collect();
    let design = design_dataset(&points, nt);
    let refs = order_locations(sites).expect("sites");
    let model = Model::build(ModelSpec::new(Family::Poisson, Link::Log).with_n_parents(6), refs, &design, nt, &[]).expect("model");
    let mut p = ParameterSet::new(Family::Poisson, &[]);
    for (name, v) in [("mu", 10f64.ln()), ("phi", 0.6), ("sigma", 0.3), ("tau", 0.3)] {
        p.set(name, v).expect("parameter");
    }
    let u = simulate_effects(&model, &p, &mut rng).expect("effects");
    let y = simulate_responses(&model, &p, &u, &mut rng).expect("responses");
    let mut data = with_responses(&design, &y);
    data.time_labels = (2018..2018 + nt as i64).collect();
    data
}

fn run(args: &[&str]) {
    println!("\n$ stnngp {}", args.join(" "));
    let code = main_with_args(std::iter::once("stnngp").chain(args.iter().copied()));
    assert_eq!(code, 0, "exit code {code}");
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let p = |name: &str| dir.path().join(name).display().to_string();

    let cfg = RunConfig::parse(CONFIG).expect("config");
    write_file(&dir.path().join("counts.csv"), |w| write_dataset_csv(w, &simulated_counts(), &cfg.columns)).expect("write data");
    std::fs::write(p("run.cfg"), CONFIG).expect("write config");
    std::fs::write(p("points.csv"), "x,y,year\n2.5,2.5,2021\n7.5,7.5,2022\n").expect("write points");

    run(&["fit", "--data", &p("counts.csv"), "--config", &p("run.cfg"), "--out", &p("fit")]);
    run(&["predict", "--fit", &p("fit/fit.json"), "--points", &p("points.csv"), "--out", &p("pred.csv")]);
    println!("{}", std::fs::read_to_string(p("pred.csv")).expect("predictions"));
    run(&["simulate", "--fit", &p("fit/fit.json"), "--n-sim", "2", "--out", &p("sims.csv")]);
    run(&["residuals", "--fit", &p("fit/fit.json"), "--out", &p("pit.csv")]);
    run(&["graph", "--data", &p("counts.csv"), "--config", &p("run.cfg"), "--out", &p("graph.dot")]);
}
