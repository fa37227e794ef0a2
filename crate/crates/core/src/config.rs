//! Run configuration.
//!
//! A run is described by one TOML file (JSON is accepted too). Every section
//! and key is optional; anything left out takes the default shown by
//! [`RunConfig::default`], and unknown keys are rejected. The fully resolved
//! configuration, defaults included, is written next to the run outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AstrocyteParams, EfficacyLaw, NeuronParams};
use crate::energy::{ArrMode, EnergyCoefficients};
use crate::fault::{FaultMode, FaultScope, FaultSettings};
use crate::memory::SweepConfig;
use crate::network::{ClusterPolicy, CountMode, WeightInit};
use crate::oracle::TaskConfig;
use crate::placement::Persistence;
use crate::repair::RepairPolicy;
use crate::sim::{ArrStimulus, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub topology: Vec<usize>,
    pub density: f64,
    pub seed: u64,
    pub count_mode: CountMode,
    pub weight_init: WeightInit,
    pub clusters: usize,
    pub cluster_policy: ClusterPolicy,
    /// Neurons per astrocyte.
    pub astrocyte_budget: usize,
    /// Weight file to import instead of generating weights. `.txt` and `.mat`
    /// are read as layered matrix text, anything else as the binary container.
    /// The file's topology replaces `topology`, `density` and `weight_init`.
    pub weights: Option<String>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            topology: vec![1024, 768, 2048, 512, 100],
            density: 1.0,
            seed: 1,
            count_mode: CountMode::Bidirectional,
            weight_init: WeightInit::UniformFanIn,
            clusters: 1,
            cluster_policy: ClusterPolicy::ByLayerBlock,
            astrocyte_budget: 4452,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub neuron: NeuronParams,
    pub astrocyte: AstrocyteParams,
    pub dt: f64,
    pub input_gain: f64,
    pub bias: f64,
    pub efficacy: EfficacyLaw,
    pub natural_release_gain: f64,
    pub threshold_relief: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            neuron: NeuronParams::default(),
            astrocyte: AstrocyteParams::default(),
            dt: sim.dt,
            input_gain: sim.input_gain,
            bias: sim.bias,
            efficacy: sim.efficacy,
            natural_release_gain: sim.natural_release_gain,
            threshold_relief: sim.threshold_relief,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepairSection {
    pub enabled: bool,
    pub policy: RepairPolicy,
}

impl Default for RepairSection {
    fn default() -> Self {
        Self { enabled: true, policy: RepairPolicy::default() }
    }
}

/// Surrogate classification task used as the accuracy oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub patterns: usize,
    pub classes: usize,
    pub input_peak: f64,
    pub warmup_steps: u64,
    pub steps_per_pattern: u64,
    pub seed: u64,
}

impl Default for TaskSection {
    fn default() -> Self {
        let t = TaskConfig::default();
        Self {
            patterns: t.patterns,
            classes: t.classes,
            input_peak: t.input_peak,
            warmup_steps: t.warmup_steps,
            steps_per_pattern: t.steps_per_pattern,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSection {
    pub enabled: bool,
    /// Faults per plan; `None` uses `synapse_fraction` of the unidirectional synapse count.
    pub n_r: Option<usize>,
    pub synapse_fraction: f64,
    /// Paired trials (one fault plan each).
    pub trials: usize,
    pub seed: u64,
    pub scope: FaultScope,
    pub mode: FaultMode,
    pub settings: FaultSettings,
}

impl Default for FaultSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n_r: None,
            synapse_fraction: 0.02,
            trials: 10,
            seed: 0xfa17,
            scope: FaultScope::WholeNetwork,
            mode: FaultMode::Simultaneous,
            settings: FaultSettings::default(),
        }
    }
}

/// How the astrocyte arm gets its astrocytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementSection {
    /// Run the iterative placement; otherwise cover `cover_layers` outright.
    pub enabled: bool,
    /// Layers covered when placement is off; `None` covers every non-input layer.
    pub cover_layers: Option<Vec<usize>>,
    pub n_r: usize,
    pub trials: usize,
    pub a_th: Option<f64>,
    pub max_astrocytes_per_layer: Option<usize>,
    pub seed: u64,
    pub persistence: Persistence,
    /// Disable astrocytes whose controller never acted during the activity run.
    pub disable_unused: bool,
}

impl Default for PlacementSection {
    fn default() -> Self {
        Self {
            enabled: false,
            cover_layers: None,
            n_r: 100,
            trials: 3,
            a_th: None,
            max_astrocytes_per_layer: None,
            seed: 0x91ace,
            persistence: Persistence::Fresh,
            disable_unused: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSection {
    pub enabled: bool,
    pub width: usize,
    pub height: usize,
    /// Clusters mapped onto the mesh; `None` uses the network's cluster count.
    pub clusters: Option<usize>,
    pub fault_fractions: Vec<f64>,
    pub seeds: u64,
    pub base_seed: u64,
}

impl Default for RoutingSection {
    fn default() -> Self {
        Self {
            enabled: true,
            width: 6,
            height: 6,
            clusters: Some(8),
            fault_fractions: vec![0.0, 0.05, 0.1, 0.2, 0.3],
            seeds: 30,
            base_seed: 0x2047e,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    pub enabled: bool,
    pub sweep: SweepConfig,
    /// Astrocyte block size for the modulated arm.
    pub astrocyte_budget: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        Self { enabled: true, sweep: SweepConfig::default(), astrocyte_budget: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub enabled: bool,
    pub coefficients: EnergyCoefficients,
    pub arr: ArrMode,
    pub gate_after: u32,
    pub stimulus: ArrStimulus,
    pub seeds: Vec<u64>,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            enabled: true,
            coefficients: EnergyCoefficients::default(),
            arr: ArrMode::Account,
            gate_after: 4,
            stimulus: ArrStimulus::default(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: String,
    pub network: NetworkSection,
    pub dynamics: DynamicsSection,
    pub repair: RepairSection,
    pub task: TaskSection,
    pub faults: FaultSection,
    pub placement: PlacementSection,
    pub routing: RoutingSection,
    pub memory: MemorySection,
    pub energy: EnergySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: "lifa-out".into(),
            network: NetworkSection::default(),
            dynamics: DynamicsSection::default(),
            repair: RepairSection::default(),
            task: TaskSection::default(),
            faults: FaultSection::default(),
            placement: PlacementSection::default(),
            routing: RoutingSection::default(),
            memory: MemorySection::default(),
            energy: EnergySection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    /// Resolved configuration with every default spelled out.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Simulation settings for the astrocyte arm.
    pub fn sim_config(&self) -> SimConfig {
        let d = &self.dynamics;
        SimConfig {
            dt: d.dt,
            input_gain: d.input_gain,
            bias: d.bias,
            efficacy: d.efficacy,
            natural_release_gain: d.natural_release_gain,
            threshold_relief: d.threshold_relief,
            repair: self.repair.enabled.then_some(self.repair.policy),
            arr: ArrMode::Off,
            gate_after: self.energy.gate_after,
        }
    }

    pub fn task_config(&self, sim: SimConfig) -> TaskConfig {
        let t = &self.task;
        TaskConfig {
            patterns: t.patterns,
            classes: t.classes,
            input_peak: t.input_peak,
            warmup_steps: t.warmup_steps,
            steps_per_pattern: t.steps_per_pattern,
            seed: t.seed,
            sim,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.network.topology.len() < 2 || self.network.topology.contains(&0) {
            return bad(format!(
                "network.topology needs two or more non-empty layers, got {:?}",
                self.network.topology
            ));
        }
        if !(self.network.density > 0.0 && self.network.density <= 1.0) {
            return bad(format!("network.density must lie in (0, 1], got {}", self.network.density));
        }
        if self.network.clusters == 0 || self.network.astrocyte_budget == 0 {
            return bad("network.clusters and network.astrocyte_budget must be at least 1".into());
        }
        self.sim_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.dynamics.neuron.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.dynamics.astrocyte.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.task.patterns == 0 || self.task.classes < 2 || self.task.steps_per_pattern == 0 {
            return bad("task needs patterns >= 1, classes >= 2 and steps_per_pattern >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.faults.synapse_fraction) || self.faults.trials == 0 {
            return bad("faults.synapse_fraction must lie in [0, 1] and faults.trials be at least 1".into());
        }
        if self.routing.fault_fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return bad("routing.fault_fractions must lie in [0, 1)".into());
        }
        if self.routing.width == 0 || self.routing.height == 0 || self.routing.seeds == 0 {
            return bad("routing.width, routing.height and routing.seeds must be at least 1".into());
        }
        if self.memory.sweep.p_max == 0 || self.memory.sweep.seeds == 0 || self.memory.astrocyte_budget == 0 {
            return bad("memory.sweep.p_max, memory.sweep.seeds and memory.astrocyte_budget must be at least 1".into());
        }
        self.energy.coefficients.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.energy.seeds.is_empty() {
            return bad("energy.seeds must not be empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml("[network]\ntopolgy = [2, 2]\n").unwrap_err().to_string();
        assert!(err.contains("topolgy"), "{err}");
        let err = RunConfig::from_toml("[dynamics.neuron]\ntau = 3.0\n").unwrap_err().to_string();
        assert!(err.contains("tau"), "{err}");
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg =
            RunConfig::from_toml("[network]\ntopology = [64, 32, 10]\n[repair.policy]\nrepair_gain = 0.2\n").unwrap();
        assert_eq!(cfg.network.topology, vec![64, 32, 10]);
        assert_eq!(cfg.network.density, 1.0);
        assert_eq!(cfg.repair.policy.repair_gain, 0.2);
        assert_eq!(cfg.repair.policy.target_rate_hz, RepairPolicy::default().target_rate_hz);
    }

    #[test]
    fn resolved_echo_parses_back() {
        let cfg = RunConfig::from_toml("[faults]\nn_r = 7\nmode = { mode = \"sequential\", stride = 2 }\n").unwrap();
        assert_eq!(RunConfig::from_json(&cfg.resolved_json()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("[network]\ndensity = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[energy.coefficients]\ne_gated_idle = 5.0\n").is_err());
    }
}
