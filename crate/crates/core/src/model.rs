//! A dataset bound to a reference set, its graphs, and the effect layout.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::covariance::{calibrate, persistent_kriging, unit_kriging, CovarianceCalibration, CovarianceSpec, UnitKriging};
use crate::data::{Observation, SpatioTemporalDataset};
use crate::error::{Error, Result};
use crate::family::{Family, Link};
use crate::graph::{build_persistent_graph, build_transient_parents, dedupe_locations, order_locations, DistanceMetric, Location, NeighbourDag, ReferenceSet, DEFAULT_N_PARENTS};
use crate::process::{Effect, EffectLayout, ProcessStructure, TransientNode};

/// Structural choices of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub link: Link,
    pub n_parents: usize,
    pub metric: DistanceMetric,
    pub covariance: CovarianceSpec,
}

impl ModelSpec {
    pub fn new(family: Family, link: Link) -> Self {
        ModelSpec {
            family,
            link,
            n_parents: DEFAULT_N_PARENTS,
            metric: DistanceMetric::Euclidean,
            covariance: CovarianceSpec::exponential(),
        }
    }

    pub fn with_n_parents(mut self, n: usize) -> Self {
        self.n_parents = n;
        self
    }

    pub fn with_metric(mut self, m: DistanceMetric) -> Self {
        self.metric = m;
        self
    }

    pub fn with_covariance(mut self, c: CovarianceSpec) -> Self {
        self.covariance = c;
        self
    }
}

/// A location at an internal time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub location: Location,
    pub time: usize,
}

/// Unique observation locations, ordered as a reference set.
pub fn observed_reference_set(data: &SpatioTemporalDataset) -> Result<ReferenceSet> {
    let locs: Vec<Location> = data.observations.iter().map(|o| o.location.clone()).collect();
    order_locations(dedupe_locations(&locs).0)
}

/// The parameter-free part of a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub refs: ReferenceSet,
    pub dag: NeighbourDag,
    pub process: ProcessStructure,
    /// Effect index of each observation.
    pub obs_slot: Vec<usize>,
    pub y: Vec<f64>,
    /// Covariate rows, one per observation.
    pub x: Vec<Vec<f64>>,
    pub n_covariates: usize,
}

impl Model {
    /// Builds graphs, calibration and the effect layout.
    ///
    /// `extra` adds effects at unobserved points; `n_times` may exceed the
    /// dataset's times to extend the temporal chain.
    pub fn build(
        spec: ModelSpec,
        refs: ReferenceSet,
        data: &SpatioTemporalDataset,
        n_times: usize,
        extra: &[SpaceTimePoint],
    ) -> Result<Model> {
        spec.covariance.validate()?;
        if refs.is_empty() {
            return Err(Error::EmptyReferenceSet);
        }
        data.validate(spec.family)?;
        let dag = build_persistent_graph(&refs, spec.n_parents, spec.metric)?;
        let calibration = calibrate(&dag, &refs, spec.metric, &spec.covariance)?;
        let persistent = persistent_kriging(&dag, &refs, spec.metric, &spec.covariance, calibration.range())?;
        Self::assemble(spec, refs, dag, calibration, persistent, &data.observations, data.n_covariates(), n_times.max(data.n_times()), extra)
    }

    /// The same model with more times or unobserved points; graph and calibration are reused.
    pub fn augmented(&self, n_times: usize, extra: &[SpaceTimePoint]) -> Result<Model> {
        let observations: Vec<Observation> = self.obs_iter().collect();
        Self::assemble(
            self.spec,
            self.refs.clone(),
            self.dag.clone(),
            self.process.calibration,
            self.process.persistent.clone(),
            &observations,
            self.n_covariates,
            n_times.max(self.n_times()),
            extra,
        )
    }

    fn obs_iter(&self) -> impl Iterator<Item = Observation> + '_ {
        let l = &self.process.layout;
        self.obs_slot.iter().enumerate().map(move |(k, &slot)| {
            let (time, location) = match l.effect(slot) {
                Effect::Node { t, i } => (t, self.refs.get(i).clone()),
                Effect::Site { t, k } => (t, self.process.transient[t][k].location.clone()),
                Effect::Eps(_) => unreachable!("observations never map to temporal effects"),
            };
            Observation {
                location,
                time,
                response: self.y[k],
                covariates: self.x[k].clone(),
            }
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: ModelSpec,
        refs: ReferenceSet,
        dag: NeighbourDag,
        calibration: CovarianceCalibration,
        persistent: Vec<UnitKriging>,
        observations: &[Observation],
        n_covariates: usize,
        n_times: usize,
        extra: &[SpaceTimePoint],
    ) -> Result<Model> {
        if n_times == 0 {
            return Err(Error::invalid("at least one time is required"));
        }
        let dim = refs.dim();
        let points = observations
            .iter()
            .map(|o| (&o.location, o.time))
            .chain(extra.iter().map(|p| (&p.location, p.time)));
        let mut site_locs: Vec<Vec<Location>> = vec![Vec::new(); n_times];
        let mut site_keys: Vec<HashMap<Vec<u64>, usize>> = vec![HashMap::new(); n_times];
        let mut slot_ref: Vec<(usize, Result<usize, usize>)> = Vec::new();
        for (loc, t) in points {
            if loc.dim() != dim {
                return Err(Error::invalid(format!("location has dimension {}, reference set has {dim}", loc.dim())));
            }
            if t >= n_times {
                return Err(Error::invalid(format!("time index {t} outside 0..{n_times}")));
            }
            let r = match refs.find(loc) {
                Some(i) => Ok(i),
                None => {
                    let next = site_locs[t].len();
                    let k = *site_keys[t].entry(loc.exact_key()).or_insert(next);
                    if k == next {
                        site_locs[t].push(loc.clone());
                    }
                    Err(k)
                }
            };
            slot_ref.push((t, r));
        }

        let range = calibration.range();
        let mut transient = Vec::with_capacity(n_times);
        for (t, locs) in site_locs.iter().enumerate() {
            let parents = build_transient_parents(locs, &refs, spec.n_parents, spec.metric)?;
            let mut nodes = Vec::with_capacity(locs.len());
            for (loc, par) in locs.iter().zip(parents) {
                let pc: Vec<&[f64]> = par.iter().map(|&j| refs.get(j).coords.as_slice()).collect();
                let (weights, deficit) = unit_kriging(&loc.coords, &pc, spec.metric, &spec.covariance, range)?;
                let kriging = UnitKriging {
                    parents: par,
                    weights,
                    deficit,
                };
                nodes.push(TransientNode::new(loc.clone(), kriging, t == 0)?);
            }
            transient.push(nodes);
        }
        let process = ProcessStructure::new(calibration, persistent, transient)?;
        let layout = &process.layout;
        let slot_of = |(t, r): &(usize, Result<usize, usize>)| match r {
            Ok(i) => layout.node(*t, *i),
            Err(k) => layout.site(*t, *k),
        };
        let obs_slot = slot_ref[..observations.len()].iter().map(slot_of).collect();
        for o in observations {
            if o.covariates.len() != n_covariates {
                return Err(Error::invalid("covariate row length mismatch"));
            }
        }
        Ok(Model {
            spec,
            refs,
            dag,
            obs_slot,
            y: observations.iter().map(|o| o.response).collect(),
            x: observations.iter().map(|o| o.covariates.clone()).collect(),
            n_covariates,
            process,
        })
    }

    pub fn layout(&self) -> &EffectLayout {
        &self.process.layout
    }

    pub fn n_times(&self) -> usize {
        self.process.n_times()
    }

    pub fn n_effects(&self) -> usize {
        self.layout().n_effects()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Effect carrying the value at `loc` and internal time `t`, if any.
    pub fn effect_at(&self, loc: &Location, t: usize) -> Option<Effect> {
        if t >= self.n_times() {
            return None;
        }
        if let Some(i) = self.refs.find(loc) {
            return Some(Effect::Node { t, i });
        }
        self.process.transient[t]
            .iter()
            .position(|s| s.location.exact_key() == loc.exact_key())
            .map(|k| Effect::Site { t, k })
    }

    /// Linear predictor of each observation.
    pub fn eta(&self, beta: &[f64], u: &[f64]) -> Vec<f64> {
        self.obs_slot
            .iter()
            .zip(&self.x)
            .map(|(&s, x)| u[s] + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}
