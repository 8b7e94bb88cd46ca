//! Fits a Poisson count model and forecasts two years ahead along a transect.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, unit_square_grid, unit_square_transect};
use stnngp::laplace::{fit, initial_parameters, FitOptions};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::predict::{predict, PredictOptions};
use stnngp::simulate::{design_dataset, simulate_effects, simulate_responses, with_responses};

fn main() -> stnngp::Result<()> {
    let grid = unit_square_grid();
    let nt = 6;
    let points: Vec<SpaceTimePoint> = (0..nt)
        .flat_map(|t| grid.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t }))
        .collect();
    let design = design_dataset(&points, nt);
    let spec = ModelSpec::new(Family::Poisson, Link::Log).with_n_parents(8);
    let refs = order_locations(grid)?;
    let sim_model = Model::build(spec, refs.clone(), &design, nt, &[])?;

    let mut truth = ParameterSet::new(Family::Poisson, &[]);
    for (name, v) in [("mu", 8f64.ln()), ("phi", 0.5), ("sigma", 0.5), ("tau", 0.2)] {
        truth.set(name, v)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = simulate_effects(&sim_model, &truth, &mut rng)?;
    let y = simulate_responses(&sim_model, &truth, &u, &mut rng)?;
    let mut data = with_responses(&design, &y);
    data.time_labels = (2015..2015 + nt as i64).collect();

    let model = Model::build(spec, refs, &data, nt, &[])?;
    let r = fit(&model, &initial_parameters(&model, &[]), &FitOptions::default())?;
    println!("{}; nll {:.3}", r.message, r.nll);
    for (p, se) in r.params.params.iter().zip(&r.se) {
        println!("  {:>5} = {:7.3} (se {:.3})", p.name, p.value, se);
    }

    let transect = unit_square_transect();
    let last = nt - 1;
    let targets: Vec<SpaceTimePoint> = [last, last + 1, last + 2]
        .iter()
        .flat_map(|&t| transect.iter().step_by(4).map(move |l| SpaceTimePoint { location: l.clone(), time: t }))
        .collect();
    let recs = predict(&model, &r, &targets, None, &PredictOptions::default())?;
    println!("\n{:>5} {:>12} {:>8} {:>8} {:>9} {:>8}", "year", "location", "w", "w_se", "count", "se");
    for rec in &recs {
        let c = &rec.point.location.coords;
        println!(
            "{:>5} ({:.2}, {:.2}) {:8.3} {:8.3} {:9.2} {:8.2}",
            data.time_label(rec.point.time),
            c[0],
            c[1],
            rec.w,
            rec.w_se,
            rec.response,
            rec.response_se
        );
    }
    Ok(())
}
