use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stnngp::cli::{main_with_args, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use stnngp::data::SpatioTemporalDataset;
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, Location};
use stnngp::io::artifact::FitArtifact;
use stnngp::io::config::RunConfig;
use stnngp::io::table::{read_table, write_dataset_csv, write_file, write_predictions};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::predict::{predict, PredictOptions};
use stnngp::simulate::{design_dataset, simulate_effects, simulate_responses, with_responses};

const CONFIG: &str = "family = poisson\nlink = log\ntime = year\nresponse = cnt\nn_parents = 6\nforecast = 2\nseed = 42\nn_sim = 60\n";

fn simulated_counts() -> SpatioTemporalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let locs: Vec<Location> = (0..40).map(|_| Location::xy(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    let nt = 4;
    let points: Vec<SpaceTimePoint> = (0..nt).flat_map(|t| locs.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t })).collect();
    let design = design_dataset(&points, nt);
    let refs = order_locations(locs).unwrap();
    let model = Model::build(ModelSpec::new(Family::Poisson, Link::Log).with_n_parents(6), refs, &design, nt, &[]).unwrap();
    let mut p = ParameterSet::new(Family::Poisson, &[]);
    p.set("mu", 8f64.ln()).unwrap();
    p.set("sigma", 0.3).unwrap();
    p.set("tau", 0.2).unwrap();
    let u = simulate_effects(&model, &p, &mut rng).unwrap();
    let y = simulate_responses(&model, &p, &u, &mut rng).unwrap();
    let mut data = with_responses(&design, &y);
    data.time_labels = (2001..2001 + nt as i64).collect();
    data
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = RunConfig::parse(CONFIG).unwrap();
        let data = simulated_counts();
        write_file(&root.join("data.csv"), |w| write_dataset_csv(w, &data, &cfg.columns)).unwrap();
        std::fs::write(root.join("run.cfg"), CONFIG).unwrap();
        std::fs::write(root.join("points.csv"), "x,y,year\n0.5,0.5,2002\n0.25,0.75,2006\n0.1,0.9,2004\n").unwrap();
        std::fs::write(
            root.join("mask.asc"),
            "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 0.3\nNODATA_value -9999\n1 1 -9999\n1 1 1\n",
        )
        .unwrap();
        Workspace { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> i32 {
        main_with_args(std::iter::once("stnngp".to_string()).chain(args.iter().map(|a| a.to_string())))
    }

    fn fit(&self, out: &str) -> i32 {
        self.run(&["fit", "--data", &self.p("data.csv"), "--config", &self.p("run.cfg"), "--out", &self.p(out)])
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn fit_predict_simulate_residuals_graph() {
    let ws = Workspace::new();
    assert_eq!(ws.fit("fit_a"), EXIT_OK);
    assert_eq!(ws.fit("fit_b"), EXIT_OK);
    for f in ["fit.json", "parameters.csv", "random_effects.csv"] {
        assert_eq!(bytes(&ws.root.join("fit_a").join(f)), bytes(&ws.root.join("fit_b").join(f)), "{f}");
    }
    let (header, rows) = read_table(&ws.root.join("fit_a/parameters.csv")).unwrap();
    assert_eq!(header, vec!["name", "par", "se", "fixed"]);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), vec!["mu", "phi", "sigma", "tau"]);

    let fit_json = ws.p("fit_a/fit.json");
    for out in ["pred_a.csv", "pred_b.csv"] {
        assert_eq!(ws.run(&["predict", "--fit", &fit_json, "--points", &ws.p("points.csv"), "--out", &ws.p(out)]), EXIT_OK);
    }
    assert_eq!(bytes(&ws.root.join("pred_a.csv")), bytes(&ws.root.join("pred_b.csv")));
    let (header, rows) = read_table(&ws.root.join("pred_a.csv")).unwrap();
    assert_eq!(header, vec!["x", "y", "t", "w", "w_se", "linear", "linear_se", "response", "response_se"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][2], "2006");
    for r in &rows {
        assert_eq!(r[3], r[5]);
        assert!(r[7].parse::<f64>().unwrap() > 0.0);
    }

    // Past the forecast horizon.
    std::fs::write(ws.root.join("late.csv"), "x,y,year\n0.5,0.5,2007\n").unwrap();
    assert_eq!(ws.run(&["predict", "--fit", &fit_json, "--points", &ws.p("late.csv"), "--out", &ws.p("late_out.csv")]), EXIT_DATA);

    let code = ws.run(&[
        "predict", "--fit", &fit_json, "--grid", &ws.p("mask.asc"), "--times", "2004,2005", "--out", &ws.p("grid.csv"), "--grid-dir", &ws.p("rasters"),
    ]);
    assert_eq!(code, EXIT_OK);
    let (_, rows) = read_table(&ws.root.join("grid.csv")).unwrap();
    assert_eq!(rows.len(), 10);
    for layer in ["w", "w_se", "linear", "linear_se", "response", "response_se"] {
        for year in [2004, 2005] {
            let text = std::fs::read_to_string(ws.root.join(format!("rasters/{layer}_{year}.asc"))).unwrap();
            assert!(text.contains("NODATA_value -9999"));
        }
    }

    assert_eq!(ws.run(&["simulate", "--fit", &fit_json, "--n-sim", "3", "--out", &ws.p("sims.csv")]), EXIT_OK);
    let (header, rows) = read_table(&ws.root.join("sims.csv")).unwrap();
    assert_eq!(header, vec!["sim", "x", "y", "t", "response"]);
    assert_eq!(rows.len(), 3 * 160);
    assert_eq!(ws.run(&["--threads", "1", "simulate", "--fit", &fit_json, "--n-sim", "3", "--out", &ws.p("sims2.csv")]), EXIT_OK);
    assert_eq!(bytes(&ws.root.join("sims.csv")), bytes(&ws.root.join("sims2.csv")));

    assert_eq!(ws.run(&["residuals", "--fit", &fit_json, "--out", &ws.p("pit.csv")]), EXIT_OK);
    let (_, rows) = read_table(&ws.root.join("pit.csv")).unwrap();
    assert_eq!(rows.len(), 160);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r[4].parse::<f64>().unwrap())));

    assert_eq!(ws.run(&["graph", "--data", &ws.p("data.csv"), "--config", &ws.p("run.cfg"), "--out", &ws.p("g.dot")]), EXIT_OK);
    assert!(std::fs::read_to_string(ws.root.join("g.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn artifact_round_trip_and_reload_prediction() {
    let ws = Workspace::new();
    assert_eq!(ws.fit("fit"), EXIT_OK);
    let path = ws.root.join("fit/fit.json");
    let art = FitArtifact::read(&path).unwrap();
    let again = FitArtifact::from_json(&art.to_json().unwrap()).unwrap();
    assert_eq!(art, again);

    // Predicting from a reloaded artifact matches predicting with the in-process fit bit for bit.
    let cfg = RunConfig::parse(CONFIG).unwrap();
    let data = stnngp::io::read_dataset(&ws.root.join("data.csv"), &cfg.columns).unwrap().data;
    let refs = stnngp::model::observed_reference_set(&data).unwrap();
    let model = Model::build(cfg.model_spec(), refs, &data, data.n_times(), &[]).unwrap();
    let mut init = stnngp::laplace::initial_parameters(&model, &[]);
    cfg.apply_overrides(&mut init).unwrap();
    let fit = stnngp::laplace::fit(&model, &init, &cfg.fit_options()).unwrap();
    assert_eq!(fit, art.fit);
    let pts = [SpaceTimePoint { location: Location::xy(0.5, 0.5), time: 1 }, SpaceTimePoint { location: Location::xy(0.2, 0.7), time: 5 }];
    let a = predict(&model, &fit, &pts, None, &PredictOptions::default()).unwrap();
    let b = predict(&art.model().unwrap(), &art.fit, &pts, None, &PredictOptions::default()).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    write_predictions(&mut ba, &a, 2, |t| data.time_label(t)).unwrap();
    write_predictions(&mut bb, &b, 2, |t| data.time_label(t)).unwrap();
    assert_eq!(ba, bb);
}

#[test]
fn bad_artifacts_fail_cleanly() {
    let ws = Workspace::new();
    assert_eq!(ws.fit("fit"), EXIT_OK);
    let text = std::fs::read_to_string(ws.root.join("fit/fit.json")).unwrap();
    assert!(matches!(FitArtifact::from_json(&text[..text.len() / 2]), Err(stnngp::Error::Json(_))));
    let v2 = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(matches!(FitArtifact::from_json(&v2), Err(stnngp::Error::Version { found: 2, expected: 1 })));
    std::fs::write(ws.root.join("trunc.json"), &text[..100]).unwrap();
    let code = ws.run(&["simulate", "--fit", &ws.p("trunc.json"), "--out", &ws.p("s.csv")]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["fit", "--data", &ws.p("data.csv")]), EXIT_USAGE);
    assert_eq!(ws.run(&["frobnicate"]), EXIT_USAGE);
    std::fs::write(ws.root.join("typo.cfg"), "famly = poisson\n").unwrap();
    assert_eq!(ws.run(&["fit", "--data", &ws.p("data.csv"), "--config", &ws.p("typo.cfg"), "--out", &ws.p("o")]), EXIT_USAGE);
    std::fs::write(ws.root.join("bad.csv"), "x,y,year,cnt\n0.1,0.1,1,2\n0.2,zz,1,3\n").unwrap();
    assert_eq!(ws.run(&["fit", "--data", &ws.p("bad.csv"), "--config", &ws.p("run.cfg"), "--out", &ws.p("o")]), EXIT_DATA);
    std::fs::write(ws.root.join("neg.csv"), "x,y,year,cnt\n0.1,0.1,1,2\n0.2,0.3,1,-3\n").unwrap();
    assert_eq!(ws.run(&["fit", "--data", &ws.p("neg.csv"), "--config", &ws.p("run.cfg"), "--out", &ws.p("o")]), EXIT_DATA);
}
