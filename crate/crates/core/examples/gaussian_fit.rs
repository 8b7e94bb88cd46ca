//! Simulates a Gaussian spatio-temporal field on the unit-square lattice and
//! recovers its parameters by Laplace-approximated maximum likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, unit_square_grid};
use stnngp::laplace::{fit, initial_parameters, FitOptions};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::simulate::{design_dataset, simulate_effects, simulate_responses, with_responses};

fn main() -> stnngp::Result<()> {
    let grid = unit_square_grid();
    let nt = 6;
    let points: Vec<SpaceTimePoint> = (0..nt)
        .flat_map(|t| grid.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t }))
        .collect();
    let design = design_dataset(&points, nt);
    let spec = ModelSpec::new(Family::Gaussian, Link::Identity);
    let refs = order_locations(grid.clone())?;
    let sim_model = Model::build(spec, refs.clone(), &design, nt, &[])?;

    let mut truth = ParameterSet::new(Family::Gaussian, &[]);
    for (name, v) in [("sd", 2.0), ("mu", 0.0), ("phi", 0.5), ("sigma", 5.0), ("tau", 1.0)] {
        truth.set(name, v)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = simulate_effects(&sim_model, &truth, &mut rng)?;
    let y = simulate_responses(&sim_model, &truth, &u, &mut rng)?;
    let data = with_responses(&design, &y);

    let model = Model::build(spec, refs, &data, nt, &[])?;
    let start = std::time::Instant::now();
    let r = fit(&model, &initial_parameters(&model, &[]), &FitOptions::default())?;
    println!(
        "{} after {} iterations ({} evaluations, {:.1?}); nll {:.3}",
        r.message,
        r.iterations,
        r.evaluations,
        start.elapsed(),
        r.nll
    );
    println!("{:>6} {:>8} {:>9} {:>8} {:>20}", "name", "truth", "estimate", "se", "95% interval");
    for (i, p) in r.params.params.iter().enumerate() {
        let (lo, hi) = r.wald_interval(i, 1.959964);
        let t = truth.get(&p.name).map_or(f64::NAN, |q| q.value);
        println!("{:>6} {:8.3} {:9.3} {:8.3} [{:8.3}, {:8.3}]", p.name, t, p.value, r.se[i], lo, hi);
    }

    let layout = model.layout();
    let err: f64 = (0..nt)
        .flat_map(|t| (0..grid.len()).map(move |i| (t, i)))
        .map(|(t, i)| (r.modes[layout.node(t, i)] - u[layout.node(t, i)]).powi(2))
        .sum::<f64>()
        / (nt * grid.len()) as f64;
    println!("rms error of the field modes: {:.3}", err.sqrt());
    Ok(())
}
