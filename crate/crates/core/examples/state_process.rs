//! Draws the two-level random-effect process and evaluates its log density.
//!
//! The temporal level follows a stationary AR(1); each spatial field is centred
//! on the level and carries a lag-one memory of the previous field. A site
//! observed only in the last year becomes a transient node.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, unit_square_grid, Location};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::process::{ar1_logdensity, mean_function, persistent_loglik, process_loglik, transient_loglik, RandomEffectState};
use stnngp::simulate::{design_dataset, simulate_effects};

fn main() -> stnngp::Result<()> {
    let grid = unit_square_grid();
    let nt = 6;
    let extra = Location::xy(0.387, 0.5);
    let mut points: Vec<SpaceTimePoint> = (0..nt)
        .flat_map(|t| grid.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t }))
        .collect();
    points.push(SpaceTimePoint { location: extra.clone(), time: nt - 1 });
    let design = design_dataset(&points, nt);
    let model = Model::build(ModelSpec::new(Family::Gaussian, Link::Identity), order_locations(grid)?, &design, nt, &[])?;

    let mut params = ParameterSet::new(Family::Gaussian, &[]);
    for (name, v) in [("sd", 1.0), ("mu", 2.0), ("phi", 0.8), ("sigma", 1.0), ("tau", 0.5)] {
        params.set(name, v)?;
    }
    let p = params.process();
    let u = simulate_effects(&model, &params, &mut ChaCha8Rng::seed_from_u64(4))?;
    let state = RandomEffectState::from_flat(model.layout(), &u);

    println!("year  level  field mean  field sd");
    for t in 0..nt {
        let w = &state.w[t];
        let m = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        println!("{t:4} {:6.3} {:11.3} {:9.3}", state.eps[t], m, sd);
    }
    println!("transient site {:?} in the last year: {:.3}", extra.coords, state.transient[nt - 1][0]);

    let node = 100;
    let last = nt - 1;
    println!(
        "node {node}: previous {:.3}, conditional mean now {:.3}, drawn {:.3}",
        state.w[last - 1][node],
        mean_function(state.w[last - 1][node], state.eps[last - 1], state.eps[last], p.temporal.phi),
        state.w[last][node]
    );

    let temporal = ar1_logdensity(&state.eps, &p.temporal)?;
    let persistent = persistent_loglik(&state, &model.process, &p)?;
    let transient = transient_loglik(&state, &model.process, &p)?;
    println!("log density: temporal {temporal:.3} + persistent {persistent:.3} + transient {transient:.3}");
    println!("             total {:.3}", process_loglik(&state, &model.process, &p)?);
    Ok(())
}
