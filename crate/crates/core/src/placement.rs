//! Iterative astrocyte placement.
//!
//! For every cluster and every layer the cluster spans, faults are injected
//! into that cluster layer and the minimum accuracy over a few independent
//! plans is measured. While it stays below the threshold, one more astrocyte
//! is attached to the layer. A per-layer cap and coverage saturation bound
//! the loop.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{
    derive_seed, generate_plan_with, trial_accuracy, AccuracyOracle, FaultError, FaultMode, FaultPlan, FaultScope,
    FaultSettings,
};
use crate::network::{attach_astrocyte, NetworkError, NetworkSpec};
use crate::sim::AstrocyteReport;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("invalid placement problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("oracle failed while probing cluster {cluster} layer {layer}: {message}")]
    Oracle { cluster: usize, layer: usize, message: String, partial: Box<PlacementResult> },
}

/// Whether faults injected by earlier probes of a layer stay in place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Persistence {
    /// Every probe draws new plans.
    #[default]
    Fresh,
    /// Probe `i` of a layer applies the plans of probes `0..=i`.
    Accumulate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementProblem {
    pub model: NetworkSpec,
    /// Faults per probe plan.
    pub n_r: usize,
    /// Accuracy threshold; `None` uses the fault-free baseline `a0`.
    pub a_th: Option<f64>,
    /// Independent plans per probe.
    pub trials: usize,
    /// Per-layer cap; `None` uses `ceil(cluster-layer size / budget)`.
    pub max_astrocytes_per_layer: Option<usize>,
    /// Neurons per astrocyte.
    pub budget: usize,
    pub seed: u64,
    pub mode: FaultMode,
    pub persistence: Persistence,
    pub settings: FaultSettings,
}

impl PlacementProblem {
    pub fn new(model: NetworkSpec) -> Self {
        let budget = model.roster.neurons_per_astrocyte_budget;
        Self {
            model,
            n_r: 10_000,
            a_th: None,
            trials: 5,
            max_astrocytes_per_layer: None,
            budget,
            seed: 0,
            mode: FaultMode::Simultaneous,
            persistence: Persistence::Fresh,
            settings: FaultSettings::default(),
        }
    }

    fn validate(&self) -> Result<(), PlacementError> {
        if let Some(a) = self.a_th {
            if !(0.0..=1.0).contains(&a) {
                return Err(PlacementError::InvalidProblem(format!("a_th must lie in [0, 1], got {a}")));
            }
        }
        if self.trials == 0 {
            return Err(PlacementError::InvalidProblem("trials must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(PlacementError::InvalidProblem("budget must be at least 1".into()));
        }
        if self.max_astrocytes_per_layer == Some(0) {
            return Err(PlacementError::InvalidProblem("max_astrocytes_per_layer must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerStatus {
    /// A probe met the threshold.
    Protected,
    /// The cap was reached with accuracy still below threshold.
    Unprotectable,
    /// Every neuron of the cluster layer was already covered.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub cluster: usize,
    pub layer: usize,
    pub iteration: usize,
    /// Astrocytes in this cluster layer during the probe.
    pub astrocytes: usize,
    pub a_min: f64,
    pub per_trial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOutcome {
    pub cluster: usize,
    pub layer: usize,
    pub astrocytes: usize,
    pub cap: usize,
    pub status: LayerStatus,
    /// `a_min` never decreased across this layer's probes.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    /// The astrocyte-augmented model.
    #[serde(skip)]
    pub spec: Option<NetworkSpec>,
    pub a0: f64,
    pub a_th: f64,
    pub n_r: usize,
    pub trials: usize,
    pub layers: Vec<LayerOutcome>,
    pub probes: Vec<ProbeRecord>,
    pub disabled: Vec<usize>,
}

impl PlacementResult {
    pub fn astrocytes_placed(&self) -> usize {
        self.layers.iter().map(|l| l.astrocytes).sum()
    }

    /// Probe log as CSV: cluster, layer, iteration, astrocytes, a_min.
    pub fn write_probe_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cluster,layer,iteration,astrocytes,a_min")?;
        for p in &self.probes {
            writeln!(w, "{},{},{},{},{}", p.cluster, p.layer, p.iteration, p.astrocytes, p.a_min)?;
        }
        w.flush()
    }
}

fn probe(
    spec: &NetworkSpec,
    oracle: &dyn AccuracyOracle,
    problem: &PlacementProblem,
    scope: FaultScope,
    seeds: &[Vec<u64>],
) -> Result<Vec<f64>, String> {
    seeds
        .par_iter()
        .map(|trial_seeds| {
            let mut events = Vec::new();
            for &s in trial_seeds {
                let plan =
                    generate_plan_with(spec, problem.n_r, scope, s, &problem.settings).map_err(|e| e.to_string())?;
                events.extend(plan.events);
            }
            let plan = FaultPlan { seed: trial_seeds[0], n_r: events.len(), scope, events };
            trial_accuracy(spec, oracle, &plan, problem.mode)
        })
        .collect()
}

/// Runs the placement loop over every cluster layer.
pub fn place_astrocytes(
    problem: &PlacementProblem,
    oracle: &dyn AccuracyOracle,
) -> Result<PlacementResult, PlacementError> {
    problem.validate()?;
    let a0 = oracle.baseline(&problem.model).map_err(|message| PlacementError::Oracle {
        cluster: 0,
        layer: 0,
        message,
        partial: Box::new(PlacementResult {
            spec: None,
            a0: f64::NAN,
            a_th: f64::NAN,
            n_r: problem.n_r,
            trials: problem.trials,
            layers: Vec::new(),
            probes: Vec::new(),
            disabled: Vec::new(),
        }),
    })?;
    let mut result = PlacementResult {
        spec: None,
        a0,
        a_th: problem.a_th.unwrap_or(a0),
        n_r: problem.n_r,
        trials: problem.trials,
        layers: Vec::new(),
        probes: Vec::new(),
        disabled: Vec::new(),
    };
    let mut spec = problem.model.clone();
    if problem.n_r == 0 {
        result.spec = Some(spec);
        return Ok(result);
    }

    for cluster in 0..spec.clusters.k {
        for &layer in &spec.clusters.layers_within[cluster].clone() {
            let size = spec.layer_range(layer).filter(|&i| spec.clusters.cluster_of[i] == cluster).count();
            let cap = problem.max_astrocytes_per_layer.unwrap_or_else(|| size.div_ceil(problem.budget)).max(1);
            let scope = FaultScope::ClusterLayer { cluster, layer };
            let layer_tag = derive_seed(problem.seed, ((cluster as u64) << 32) | layer as u64);
            let mut placed = 0;
            let mut last = f64::NEG_INFINITY;
            let mut monotone = true;
            let mut iteration = 0;
            let status = loop {
                let seeds: Vec<Vec<u64>> = (0..problem.trials as u64)
                    .map(|t| {
                        let first = match problem.persistence {
                            Persistence::Fresh => iteration,
                            Persistence::Accumulate => 0,
                        };
                        (first..=iteration).map(|i| derive_seed(layer_tag, (i as u64) << 20 | t)).collect()
                    })
                    .collect();
                let per_trial = match probe(&spec, oracle, problem, scope, &seeds) {
                    Ok(v) => v,
                    Err(message) => {
                        result.spec = Some(spec);
                        return Err(PlacementError::Oracle { cluster, layer, message, partial: Box::new(result) });
                    }
                };
                let a_min = per_trial.iter().copied().fold(f64::INFINITY, f64::min);
                monotone &= a_min >= last;
                last = a_min;
                result.probes.push(ProbeRecord { cluster, layer, iteration, astrocytes: placed, a_min, per_trial });
                iteration += 1;
                if a_min >= result.a_th {
                    break LayerStatus::Protected;
                }
                if placed >= cap {
                    break LayerStatus::Unprotectable;
                }
                let outcome = attach_astrocyte(&spec, cluster, layer, problem.budget)?;
                if outcome.saturated {
                    break LayerStatus::Saturated;
                }
                spec = outcome.spec;
                placed += 1;
            };
            result.layers.push(LayerOutcome { cluster, layer, astrocytes: placed, cap, status, monotone });
        }
    }
    result.spec = Some(spec);
    Ok(result)
}

/// Activation counts per astrocyte id from a post-placement run.
pub fn usage_from_reports(reports: &[AstrocyteReport]) -> BTreeMap<usize, u64> {
    reports.iter().map(|r| (r.id, r.activations)).collect()
}

/// Disables every astrocyte with no recorded repair activation.
pub fn disable_unused(mut result: PlacementResult, usage: &BTreeMap<usize, u64>) -> PlacementResult {
    if let Some(spec) = result.spec.as_mut() {
        for a in spec.roster.astrocytes.iter_mut().filter(|a| a.enabled) {
            if usage.get(&a.id).copied().unwrap_or(0) == 0 {
                a.enabled = false;
                result.disabled.push(a.id);
            }
        }
    }
    result.disabled.sort_unstable();
    result.disabled.dedup();
    result
}
