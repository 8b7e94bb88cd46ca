//! Builds the persistent neighbour graph on the 221-point lattice and prints
//! the constants that calibrate the covariance function.

use stnngp::covariance::{calibrate, covariance, CovarianceSpec};
use stnngp::graph::{build_persistent_graph, build_transient_parents, order_locations, unit_square_grid, DistanceMetric, Location};

fn main() -> stnngp::Result<()> {
    let refs = order_locations(unit_square_grid())?;
    for m in [4, 8, 16] {
        let dag = build_persistent_graph(&refs, m, DistanceMetric::Euclidean)?;
        let cal = calibrate(&dag, &refs, DistanceMetric::Euclidean, &CovarianceSpec::exponential())?;
        println!(
            "m={m:2}  edges={:4}  mean edge={:.4}  k_cal={:.4}  rho_tau={:.4}",
            dag.n_edges(),
            cal.mean_edge_distance,
            cal.k_cal,
            cal.rho_tau
        );
    }

    let dag = build_persistent_graph(&refs, 8, DistanceMetric::Euclidean)?;
    println!("\nfirst nodes and their parents:");
    for i in 0..5 {
        println!("  {i} {:?} <- {:?}", refs.get(i).coords, dag.parents(i));
    }

    let extra = [Location::xy(0.33, 0.71), Location::xy(1.2, -0.1)];
    let parents = build_transient_parents(&extra, &refs, 8, DistanceMetric::Euclidean)?;
    for (l, p) in extra.iter().zip(&parents) {
        println!("  off-graph {:?} <- {:?}", l.coords, p);
    }

    let cal = calibrate(&dag, &refs, DistanceMetric::Euclidean, &CovarianceSpec::exponential())?;
    let matern = CovarianceSpec::matern(1.5)?;
    println!("\ncovariance at tau = 1");
    for d in [0.0, 0.05, 0.1, 0.2, 0.5] {
        println!(
            "  d={d:.2}  exponential={:.4}  matern(1.5)={:.4}",
            covariance(d, &CovarianceSpec::exponential(), &cal, 1.0)?,
            covariance(d, &matern, &cal, 1.0)?
        );
    }
    Ok(())
}
