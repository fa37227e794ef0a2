//! Pattern-classification tasks that score a network by simulation.
//!
//! A task presents each input pattern as constant currents on the input layer,
//! counts output-layer spikes and reads a class out of a fixed random linear
//! projection of the counts. [`SurrogateOracle`] scores a faulted network
//! against the predictions of the same network without faults, so it needs no
//! dataset. [`DatasetOracle`] scores against supplied labels.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fault::{AccuracyOracle, FaultedView};
use crate::network::NetworkSpec;
use crate::sim::{SimConfig, SimError, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub patterns: usize,
    pub classes: usize,
    /// Input currents are drawn uniformly from `[0, input_peak]`.
    pub input_peak: f64,
    /// Steps spent cycling through the patterns before scoring starts.
    pub warmup_steps: u64,
    pub steps_per_pattern: u64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            patterns: 24,
            classes: 4,
            input_peak: 1.25,
            warmup_steps: 2000,
            steps_per_pattern: 400,
            seed: 0x5eed,
            sim: SimConfig::default(),
        }
    }
}

/// Inputs plus readout shared by both oracles.
#[derive(Debug, Clone)]
pub struct PatternTask {
    pub cfg: TaskConfig,
    pub inputs: Vec<Vec<f64>>,
    /// `classes x outputs`, row-major.
    pub projection: Vec<f64>,
    outputs: usize,
}

impl PatternTask {
    /// Random patterns and projection sized for `spec`.
    pub fn random(spec: &NetworkSpec, cfg: TaskConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let inputs_n = spec.topology.layer_sizes[0];
        let inputs =
            (0..cfg.patterns).map(|_| (0..inputs_n).map(|_| rng.gen_range(0.0..=cfg.input_peak)).collect()).collect();
        Self::with_inputs(spec, cfg, inputs)
    }

    /// Caller-supplied input currents with a random projection.
    pub fn with_inputs(spec: &NetworkSpec, cfg: TaskConfig, inputs: Vec<Vec<f64>>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
        let outputs = *spec.topology.layer_sizes.last().expect("validated topology");
        let projection = (0..cfg.classes * outputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { cfg, inputs, projection, outputs }
    }

    /// Class of one output count vector; `None` when the output layer was silent.
    pub fn readout(&self, counts: &[u64]) -> Option<usize> {
        if counts.iter().all(|&c| c == 0) {
            return None;
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for class in 0..self.cfg.classes {
            let row = &self.projection[class * self.outputs..(class + 1) * self.outputs];
            let score: f64 = row.iter().zip(counts).map(|(w, &c)| w * c as f64).sum();
            if score > best.0 {
                best = (score, class);
            }
        }
        Some(best.1)
    }

    /// Classes for a whole evaluation set. Each output neuron's count is
    /// centred on its mean over the set before projection, so a neuron that
    /// fires identically for every pattern carries no weight.
    pub fn readout_all(&self, counts: &[Vec<u64>]) -> Vec<Option<usize>> {
        let Some(first) = counts.first() else { return Vec::new() };
        let mut mean = vec![0.0; first.len()];
        for row in counts {
            for (m, &c) in mean.iter_mut().zip(row) {
                *m += c as f64 / counts.len() as f64;
            }
        }
        counts
            .iter()
            .map(|row| {
                if row.iter().all(|&c| c == 0) {
                    return None;
                }
                let centred: Vec<f64> = row.iter().zip(&mean).map(|(&c, m)| c as f64 - m).collect();
                Some(self.argmax(&centred))
            })
            .collect()
    }

    fn argmax(&self, features: &[f64]) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for class in 0..self.cfg.classes {
            let row = &self.projection[class * self.outputs..(class + 1) * self.outputs];
            let score: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum();
            if score > best.0 {
                best = (score, class);
            }
        }
        best.1
    }

    /// Simulates the view and returns one prediction per pattern.
    pub fn predict(&self, view: &FaultedView<'_>) -> Result<Vec<Option<usize>>, SimError> {
        let spec = view.base();
        let mut sim = Simulator::new(view, self.cfg.sim)?;
        if self.inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut t = 0;
        while t < self.cfg.warmup_steps {
            let pattern = &self.inputs[(t / self.cfg.steps_per_pattern.max(1)) as usize % self.inputs.len()];
            sim.step(pattern)?;
            t += 1;
        }
        let out = spec.layer_range(spec.topology.layer_sizes.len() - 1);
        let mut counts = Vec::with_capacity(self.inputs.len());
        for pattern in &self.inputs {
            sim.reset_counts();
            sim.run_constant(pattern, self.cfg.steps_per_pattern)?;
            counts.push(sim.spike_counts()[out.clone()].to_vec());
        }
        Ok(self.readout_all(&counts))
    }
}

/// Hash of everything that determines fault-free predictions.
fn spec_fingerprint(spec: &NetworkSpec) -> u64 {
    let mut h = DefaultHasher::new();
    FaultedView::new(spec).checksum().hash(&mut h);
    serde_json::to_string(&spec.roster).expect("roster serializes").hash(&mut h);
    serde_json::to_string(&spec.neuron_params).expect("params serialize").hash(&mut h);
    h.finish()
}

/// Agreement with the fault-free predictions of the same network.
///
/// A pattern counts as correct when the faulted network predicts a class and
/// that class equals the fault-free one. Fault-free predictions are cached per
/// network fingerprint.
pub struct SurrogateOracle {
    task: PatternTask,
    reference: Mutex<HashMap<u64, Vec<Option<usize>>>>,
}

impl SurrogateOracle {
    pub fn new(spec: &NetworkSpec, cfg: TaskConfig) -> Self {
        Self { task: PatternTask::random(spec, cfg), reference: Mutex::new(HashMap::new()) }
    }

    pub fn task(&self) -> &PatternTask {
        &self.task
    }

    /// Fault-free predictions for `spec`.
    pub fn reference(&self, spec: &NetworkSpec) -> Result<Vec<Option<usize>>, SimError> {
        let key = spec_fingerprint(spec);
        if let Some(r) = self.reference.lock().expect("cache lock").get(&key) {
            return Ok(r.clone());
        }
        let r = self.task.predict(&FaultedView::new(spec))?;
        self.reference.lock().expect("cache lock").insert(key, r.clone());
        Ok(r)
    }

    /// Same task with a different simulation config and an empty cache.
    pub fn with_sim(&self, sim: SimConfig) -> Self {
        let mut task = self.task.clone();
        task.cfg.sim = sim;
        Self { task, reference: Mutex::new(HashMap::new()) }
    }
}

fn agreement(pred: &[Option<usize>], labels: &[Option<usize>]) -> f64 {
    if labels.is_empty() {
        return 1.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p.is_some() && p == l).count();
    hits as f64 / labels.len() as f64
}

impl AccuracyOracle for SurrogateOracle {
    fn accuracy(&self, view: &FaultedView<'_>) -> Result<f64, String> {
        let reference = self.reference(view.base()).map_err(|e| e.to_string())?;
        let pred = self.task.predict(view).map_err(|e| e.to_string())?;
        Ok(agreement(&pred, &reference))
    }
}

/// Accuracy against supplied class labels.
pub struct DatasetOracle {
    task: PatternTask,
    labels: Vec<Option<usize>>,
}

impl DatasetOracle {
    pub fn new(spec: &NetworkSpec, cfg: TaskConfig, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, String> {
        let width = spec.topology.layer_sizes[0];
        if inputs.len() != labels.len() {
            return Err(format!("{} inputs but {} labels", inputs.len(), labels.len()));
        }
        if let Some((i, row)) = inputs.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(format!("input {i} has {} values, input layer has {width}", row.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= cfg.classes) {
            return Err(format!("label {l} out of range for {} classes", cfg.classes));
        }
        let task = PatternTask::with_inputs(spec, TaskConfig { patterns: inputs.len(), ..cfg }, inputs);
        Ok(Self { task, labels: labels.into_iter().map(Some).collect() })
    }
}

impl AccuracyOracle for DatasetOracle {
    fn accuracy(&self, view: &FaultedView<'_>) -> Result<f64, String> {
        let pred = self.task.predict(view).map_err(|e| e.to_string())?;
        Ok(agreement(&pred, &self.labels))
    }
}
