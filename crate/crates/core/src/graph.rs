//! Reference locations, the persistent neighbour DAG, and transient parent sets.
//!
//! Reference nodes are ordered from south-west to north-east by the sum of
//! their coordinates. Each node's persistent parents are its nearest
//! predecessors in that order, so the graph is acyclic by construction.
//! Locations outside the reference set draw their parents from the whole
//! reference set.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{self, KdTree, Neighbour, KD_TREE_THRESHOLD};

/// Parent count used when none is configured.
pub const DEFAULT_N_PARENTS: usize = 15;

/// Mean earth radius in kilometres, used by the haversine metric.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A point in `d`-dimensional space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub coords: Vec<f64>,
}

impl Location {
    pub fn new(coords: Vec<f64>) -> Self {
        Location { coords }
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Location { coords: vec![x, y] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn ordering_key(&self) -> f64 {
        self.coords.iter().sum()
    }

    /// Bit-exact hash key; `-0.0` and `0.0` compare equal.
    pub(crate) fn exact_key(&self) -> Vec<u64> {
        self.coords
            .iter()
            .map(|c| if *c == 0.0 { 0u64 } else { c.to_bits() })
            .collect()
    }
}

/// Distance between two locations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// Great-circle distance in km; coordinates are (longitude, latitude) in degrees.
    Haversine,
}

impl DistanceMetric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Haversine => {
                let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
                let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
                let dlat = lat2 - lat1;
                let dlon = lon2 - lon1;
                let h = (dlat / 2.0).sin().powi(2)
                    + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "haversine" => Ok(DistanceMetric::Haversine),
            other => Err(Error::Config(format!("unknown distance metric '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Haversine => "haversine",
        }
    }

    /// Coordinates in a Euclidean space whose distances are monotone in this metric.
    fn embed(&self, coords: &[f64]) -> Vec<f64> {
        match self {
            DistanceMetric::Euclidean => coords.to_vec(),
            DistanceMetric::Haversine => {
                let (lon, lat) = (coords[0].to_radians(), coords[1].to_radians());
                vec![lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
            }
        }
    }
}

/// Reference locations in south-west to north-east order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    locations: Vec<Location>,
}

impl ReferenceSet {
    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.locations[0].dim()
    }

    pub fn get(&self, i: usize) -> &Location {
        &self.locations[i]
    }

    /// Index of the reference node with exactly these coordinates.
    pub fn find(&self, loc: &Location) -> Option<usize> {
        let key = loc.ordering_key();
        let start = self
            .locations
            .partition_point(|l| l.ordering_key().total_cmp(&key).is_lt());
        self.locations[start..]
            .iter()
            .take_while(|l| l.ordering_key() == key)
            .position(|l| l.exact_key() == loc.exact_key())
            .map(|p| p + start)
    }

    pub(crate) fn distance(&self, metric: DistanceMetric, i: usize, j: usize) -> f64 {
        metric.distance(&self.locations[i].coords, &self.locations[j].coords)
    }
}

fn check_finite(locations: &[Location]) -> Result<()> {
    let dim = locations[0].dim();
    if dim == 0 {
        return Err(Error::invalid("locations must have at least one coordinate"));
    }
    for (i, l) in locations.iter().enumerate() {
        if l.dim() != dim {
            return Err(Error::invalid(format!(
                "location {i} has {} coordinates, expected {dim}",
                l.dim()
            )));
        }
        if l.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("location {i} has a non-finite coordinate")));
        }
    }
    Ok(())
}

/// Merges exact-coordinate duplicates.
///
/// Returns the unique locations in order of first appearance and, for each
/// input row, the index of its unique location.
pub fn dedupe_locations(locations: &[Location]) -> (Vec<Location>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut map = Vec::with_capacity(locations.len());
    for l in locations {
        let id = *seen.entry(l.exact_key()).or_insert_with(|| {
            unique.push(l.clone());
            unique.len() - 1
        });
        map.push(id);
    }
    (unique, map)
}

/// Sorts locations ascending by coordinate sum, breaking ties coordinate-wise
/// and then by input position.
pub fn order_locations(locations: Vec<Location>) -> Result<ReferenceSet> {
    if locations.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    check_finite(&locations)?;
    let mut keyed: Vec<(usize, Location)> = locations.into_iter().enumerate().collect();
    keyed.sort_by(|(ia, a), (ib, b)| {
        a.ordering_key()
            .total_cmp(&b.ordering_key())
            .then_with(|| {
                a.coords
                    .iter()
                    .zip(&b.coords)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(ia.cmp(ib))
    });
    let locations: Vec<Location> = keyed.into_iter().map(|(_, l)| l).collect();
    for i in 1..locations.len() {
        if locations[i].exact_key() == locations[i - 1].exact_key() {
            return Err(Error::DuplicateReference(i));
        }
    }
    Ok(ReferenceSet { locations })
}

/// The persistent neighbour graph over the reference set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighbourDag {
    n_parents: usize,
    persistent: Vec<Vec<usize>>,
}

impl NeighbourDag {
    pub fn n_parents(&self) -> usize {
        self.n_parents
    }

    /// Parents of reference node `i`, nearest first. All are `< i`.
    pub fn parents(&self, i: usize) -> &[usize] {
        &self.persistent[i]
    }

    pub fn len(&self) -> usize {
        self.persistent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persistent.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.persistent.iter().map(Vec::len).sum()
    }

    /// `(child, parent)` pairs in node order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.persistent
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (c, p)))
    }
}

fn embedded(refs: &ReferenceSet, metric: DistanceMetric) -> (Vec<f64>, usize) {
    let mut flat = Vec::new();
    for l in refs.locations() {
        flat.extend(metric.embed(&l.coords));
    }
    let dim = flat.len() / refs.len();
    (flat, dim)
}

/// Re-ranks tree results by the true metric (the embedding is only monotone).
fn rerank(
    refs: &ReferenceSet,
    metric: DistanceMetric,
    query: &[f64],
    found: Vec<Neighbour>,
) -> Vec<usize> {
    let mut with_metric: Vec<Neighbour> = found
        .into_iter()
        .map(|n| Neighbour {
            distance: metric.distance(query, &refs.get(n.index).coords),
            index: n.index,
        })
        .collect();
    with_metric.sort_by(|a, b| a.cmp(b));
    with_metric.into_iter().map(|n| n.index).collect()
}

/// Builds the persistent DAG: node `i` gets its `min(i, n_parents)` nearest predecessors.
pub fn build_persistent_graph(
    refs: &ReferenceSet,
    n_parents: usize,
    metric: DistanceMetric,
) -> Result<NeighbourDag> {
    if n_parents == 0 {
        return Err(Error::invalid("n_parents must be at least 1"));
    }
    let n = refs.len();
    let persistent = if n <= KD_TREE_THRESHOLD {
        (0..n)
            .map(|i| {
                knn::brute_force(0..i, n_parents, |j| refs.distance(metric, i, j))
                    .into_iter()
                    .map(|nb| nb.index)
                    .collect()
            })
            .collect()
    } else {
        let (flat, dim) = embedded(refs, metric);
        let tree = KdTree::new(flat.clone(), dim);
        (0..n)
            .map(|i| {
                if i <= n_parents {
                    return knn::brute_force(0..i, n_parents, |j| refs.distance(metric, i, j))
                        .into_iter()
                        .map(|nb| nb.index)
                        .collect();
                }
                let found = tree.nearest(&flat[i * dim..(i + 1) * dim], n_parents, |j| j < i);
                rerank(refs, metric, &refs.get(i).coords, found)
            })
            .collect()
    };
    Ok(NeighbourDag {
        n_parents,
        persistent,
    })
}

/// Parents of locations outside the persistent graph: the `min(|refs|, n_parents)`
/// nearest reference nodes regardless of ordering.
pub fn build_transient_parents(
    locations: &[Location],
    refs: &ReferenceSet,
    n_parents: usize,
    metric: DistanceMetric,
) -> Result<Vec<Vec<usize>>> {
    if refs.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    if n_parents == 0 {
        return Err(Error::invalid("n_parents must be at least 1"));
    }
    if let Some(bad) = locations.iter().position(|l| l.dim() != refs.dim()) {
        return Err(Error::invalid(format!(
            "location {bad} has dimension {}, reference set has {}",
            locations[bad].dim(),
            refs.dim()
        )));
    }
    let n = refs.len();
    if n <= KD_TREE_THRESHOLD {
        return Ok(locations
            .iter()
            .map(|l| {
                knn::brute_force(0..n, n_parents, |j| metric.distance(&l.coords, &refs.get(j).coords))
                    .into_iter()
                    .map(|nb| nb.index)
                    .collect()
            })
            .collect());
    }
    let (flat, dim) = embedded(refs, metric);
    let tree = KdTree::new(flat, dim);
    Ok(locations
        .iter()
        .map(|l| {
            let found = tree.nearest(&metric.embed(&l.coords), n_parents, |_| true);
            rerank(refs, metric, &l.coords, found)
        })
        .collect())
}

/// Graph-level distance summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    /// Mean length of the persistent directed edges.
    pub mean_edge_distance: f64,
}

pub fn mean_edge_distance(
    dag: &NeighbourDag,
    refs: &ReferenceSet,
    metric: DistanceMetric,
) -> Result<EdgeSummary> {
    let n_edges = dag.n_edges();
    if n_edges == 0 {
        return Err(Error::DegenerateGraph(
            "persistent graph has no edges".to_string(),
        ));
    }
    let total: f64 = dag.edges().map(|(c, p)| refs.distance(metric, c, p)).sum();
    Ok(EdgeSummary {
        mean_edge_distance: total / n_edges as f64,
    })
}

/// Graphviz rendering of the persistent graph, one `child -> parent` edge per line.
pub fn to_dot(dag: &NeighbourDag, refs: &ReferenceSet) -> String {
    let mut out = String::from("digraph persistent {\n");
    for (i, l) in refs.locations().iter().enumerate() {
        let coords: Vec<String> = l.coords.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "  {i} [label=\"{i} ({})\"];", coords.join(", "));
    }
    for (c, p) in dag.edges() {
        let _ = writeln!(out, "  {c} -> {p};");
    }
    out.push_str("}\n");
    out
}

/// The 221-point unit-square lattice used by the simulation scenarios:
/// `(0.1x, 0.1y)` for `x, y in 0..=10` plus the cell centres `(0.1x + 0.05, 0.1y + 0.05)`.
pub fn unit_square_grid() -> Vec<Location> {
    let mut pts = Vec::with_capacity(221);
    for x in 0..=10 {
        for y in 0..=10 {
            pts.push(Location::xy(0.1 * f64::from(x), 0.1 * f64::from(y)));
        }
    }
    for x in 0..10 {
        for y in 0..10 {
            pts.push(Location::xy(
                0.1 * f64::from(x) + 0.05,
                0.1 * f64::from(y) + 0.05,
            ));
        }
    }
    pts
}

/// The south-north transect `(0.387, 0.01y)` for `y in 0..=100`.
pub fn unit_square_transect() -> Vec<Location> {
    (0..=100)
        .map(|y| Location::xy(0.387, 0.01 * f64::from(y)))
        .collect()
}
