//! Predicts a fitted field onto a masked raster and writes one ESRI ASCII grid
//! per layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, unit_square_grid};
use stnngp::io::grid::{write_ascii_grid, PredictionGrid};
use stnngp::laplace::{fit, initial_parameters, FitOptions};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::predict::{predict, PredictOptions};
use stnngp::simulate::{design_dataset, simulate_effects, simulate_responses, with_responses};

fn main() -> stnngp::Result<()> {
    let grid = unit_square_grid();
    let nt = 4;
    let points: Vec<SpaceTimePoint> = (0..nt)
        .flat_map(|t| grid.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t }))
        .collect();
    let design = design_dataset(&points, nt);
    let spec = ModelSpec::new(Family::Gaussian, Link::Identity);
    let refs = order_locations(grid)?;
    let sim_model = Model::build(spec, refs.clone(), &design, nt, &[])?;
    let mut truth = ParameterSet::new(Family::Gaussian, &[]);
    for (name, v) in [("sd", 1.0), ("mu", 10.0), ("phi", 0.6), ("sigma", 2.0), ("tau", 2.0)] {
        truth.set(name, v)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = simulate_effects(&sim_model, &truth, &mut rng)?;
    let y = simulate_responses(&sim_model, &truth, &u, &mut rng)?;
    let data = with_responses(&design, &y);
    let model = Model::build(spec, refs, &data, nt, &[])?;
    let r = fit(&model, &initial_parameters(&model, &[]), &FitOptions::default())?;

    // 12 x 12 cells over the unit square, keeping a disc.
    let n = 12;
    let cell = 1.0 / n as f64;
    let active = (0..n * n)
        .map(|k| {
            let (row, col) = (k / n, k % n);
            let (x, y) = ((col as f64 + 0.5) * cell - 0.5, (row as f64 + 0.5) * cell - 0.5);
            x * x + y * y <= 0.25
        })
        .collect();
    let raster = PredictionGrid::new(0.0, 0.0, cell, cell, n, n, active)?;
    let centroids = raster.centroids();
    let year = nt;
    let targets: Vec<SpaceTimePoint> = centroids.iter().map(|l| SpaceTimePoint { location: l.clone(), time: year }).collect();
    let recs = predict(&model, &r, &targets, None, &PredictOptions::default())?;

    let dir = std::env::temp_dir().join("stnngp_grid_example");
    std::fs::create_dir_all(&dir).expect("output directory");
    let w: Vec<f64> = recs.iter().map(|p| p.w).collect();
    let se: Vec<f64> = recs.iter().map(|p| p.w_se).collect();
    write_ascii_grid(&dir.join("w.asc"), &raster, &w)?;
    write_ascii_grid(&dir.join("w_se.asc"), &raster, &se)?;
    println!("{} active cells, one-step forecast written to {}", raster.n_active(), dir.display());
    let rounded: Vec<f64> = w.iter().map(|v| (v * 10.0).round() / 10.0).collect();
    print!("{}", raster.to_ascii(&rounded)?);
    Ok(())
}
