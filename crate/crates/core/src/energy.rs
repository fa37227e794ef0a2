//! Per-spike and per-step energy accounting with idle-neuron gating.
//!
//! Ledgers keep integer event counts and price them against the coefficients
//! on demand, so totals are additive and independent of summation order.
//! Units are arbitrary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("invalid energy coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("spike vector has {got} entries, ledger tracks {expected} neurons")]
    SizeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryTechnology {
    #[default]
    Sram,
    Dram,
    Memristor,
}

/// Energy per weight update for each synaptic memory technology.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryUpdateCosts {
    pub sram: f64,
    pub dram: f64,
    pub memristor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyCoefficients {
    pub e_spike: f64,
    pub e_active_idle: f64,
    pub e_gated_idle: f64,
    pub e_syn_event: f64,
    #[serde(default)]
    pub technology: MemoryTechnology,
    #[serde(default)]
    pub mem_update: MemoryUpdateCosts,
}

impl Default for EnergyCoefficients {
    fn default() -> Self {
        Self {
            e_spike: 1.0,
            e_active_idle: 0.1,
            e_gated_idle: 0.01,
            e_syn_event: 0.05,
            technology: MemoryTechnology::Sram,
            mem_update: MemoryUpdateCosts::default(),
        }
    }
}

impl EnergyCoefficients {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let all = [
            self.e_spike,
            self.e_active_idle,
            self.e_gated_idle,
            self.e_syn_event,
            self.mem_update.sram,
            self.mem_update.dram,
            self.mem_update.memristor,
        ];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(EnergyError::InvalidCoefficients("every coefficient must be finite and >= 0".into()));
        }
        if self.e_gated_idle > self.e_active_idle {
            return Err(EnergyError::InvalidCoefficients("e_gated_idle must not exceed e_active_idle".into()));
        }
        Ok(())
    }

    pub fn e_mem_update(&self) -> f64 {
        match self.technology {
            MemoryTechnology::Sram => self.mem_update.sram,
            MemoryTechnology::Dram => self.mem_update.dram,
            MemoryTechnology::Memristor => self.mem_update.memristor,
        }
    }
}

/// Idle-neuron gating regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrMode {
    #[default]
    Off,
    /// Gated neurons are billed at the gated rate; dynamics are untouched.
    Account,
    /// Gated neurons additionally skip integration until an input event arrives.
    Dynamics,
}

impl ArrMode {
    pub fn gating(self) -> bool {
        self != ArrMode::Off
    }
}

impl std::str::FromStr for ArrMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(ArrMode::Off),
            "account" => Ok(ArrMode::Account),
            "dynamics" => Ok(ArrMode::Dynamics),
            other => Err(format!("unknown ARR mode `{other}` (expected off, account or dynamics)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NeuronCounts {
    pub spikes: u64,
    pub active_idle: u64,
    pub gated_idle: u64,
    pub syn_events: u64,
}

/// Event counts accumulated over a trace.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub arr_enabled: bool,
    pub spikes: u64,
    pub active_idle_steps: u64,
    pub gated_idle_steps: u64,
    pub syn_events: u64,
    pub mem_updates: u64,
    pub per_neuron: Vec<NeuronCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTotals {
    pub spikes: f64,
    pub idle: f64,
    pub synaptic: f64,
    pub memory: f64,
    pub total: f64,
}

impl EnergyTotals {
    pub fn categories(&self) -> [(&'static str, f64); 4] {
        [("spikes", self.spikes), ("idle", self.idle), ("synaptic", self.synaptic), ("memory", self.memory)]
    }
}

impl EnergyLedger {
    pub fn new(neurons: usize, arr_enabled: bool) -> Self {
        Self { arr_enabled, per_neuron: vec![NeuronCounts::default(); neurons], ..Default::default() }
    }

    pub fn totals(&self, c: &EnergyCoefficients) -> EnergyTotals {
        let spikes = self.spikes as f64 * c.e_spike;
        let idle = self.active_idle_steps as f64 * c.e_active_idle + self.gated_idle_steps as f64 * c.e_gated_idle;
        let synaptic = self.syn_events as f64 * c.e_syn_event;
        let memory = self.mem_updates as f64 * c.e_mem_update();
        EnergyTotals { spikes, idle, synaptic, memory, total: spikes + idle + synaptic + memory }
    }

    pub fn total(&self, c: &EnergyCoefficients) -> f64 {
        self.totals(c).total
    }

    /// Energy attributed to one neuron (spikes, idle steps and its outgoing events).
    pub fn neuron_energy(&self, neuron: usize, c: &EnergyCoefficients) -> f64 {
        let n = &self.per_neuron[neuron];
        n.spikes as f64 * c.e_spike
            + n.active_idle as f64 * c.e_active_idle
            + n.gated_idle as f64 * c.e_gated_idle
            + n.syn_events as f64 * c.e_syn_event
    }

    pub fn merge(&mut self, other: &EnergyLedger) {
        self.spikes += other.spikes;
        self.active_idle_steps += other.active_idle_steps;
        self.gated_idle_steps += other.gated_idle_steps;
        self.syn_events += other.syn_events;
        self.mem_updates += other.mem_updates;
        if self.per_neuron.len() < other.per_neuron.len() {
            self.per_neuron.resize(other.per_neuron.len(), NeuronCounts::default());
        }
        for (a, b) in self.per_neuron.iter_mut().zip(&other.per_neuron) {
            a.spikes += b.spikes;
            a.active_idle += b.active_idle;
            a.gated_idle += b.gated_idle;
            a.syn_events += b.syn_events;
        }
    }
}

/// Stateful per-step accountant. A neuron is gated once it has been idle
/// (not spiking) for at least `gate_after` consecutive steps before the
/// current one.
#[derive(Debug, Clone)]
pub struct EnergyAccountant {
    mode: ArrMode,
    gate_after: u32,
    idle_run: Vec<u32>,
    ledger: EnergyLedger,
}

impl EnergyAccountant {
    pub fn new(neurons: usize, mode: ArrMode, gate_after: u32) -> Self {
        Self { mode, gate_after, idle_run: vec![0; neurons], ledger: EnergyLedger::new(neurons, mode.gating()) }
    }

    pub fn is_gated(&self, neuron: usize) -> bool {
        self.mode.gating() && self.idle_run[neuron] >= self.gate_after
    }

    /// Books one step and returns the step's own ledger delta.
    ///
    /// `syn_events[i]` counts the synaptic events caused by neuron `i` this step.
    pub fn account_step(
        &mut self,
        spikes: &[bool],
        syn_events: &[u32],
        mem_updates: u64,
    ) -> Result<EnergyLedger, EnergyError> {
        let n = self.idle_run.len();
        for len in [spikes.len(), syn_events.len()] {
            if len != n {
                return Err(EnergyError::SizeMismatch { expected: n, got: len });
            }
        }
        let mut delta = EnergyLedger::new(n, self.mode.gating());
        for i in 0..n {
            let counts = &mut delta.per_neuron[i];
            if spikes[i] {
                counts.spikes = 1;
                delta.spikes += 1;
                self.idle_run[i] = 0;
            } else {
                if self.is_gated(i) {
                    counts.gated_idle = 1;
                    delta.gated_idle_steps += 1;
                } else {
                    counts.active_idle = 1;
                    delta.active_idle_steps += 1;
                }
                self.idle_run[i] = self.idle_run[i].saturating_add(1);
            }
            counts.syn_events = u64::from(syn_events[i]);
            delta.syn_events += u64::from(syn_events[i]);
        }
        delta.mem_updates = mem_updates;
        self.ledger.merge(&delta);
        Ok(delta)
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> EnergyLedger {
        self.ledger
    }
}

/// Books a recorded spike raster (steps by neurons) with no synaptic or memory events.
pub fn account_trace(trace: &[Vec<bool>], mode: ArrMode, gate_after: u32) -> EnergyLedger {
    let n = trace.first().map_or(0, Vec::len);
    let mut acc = EnergyAccountant::new(n, mode, gate_after);
    let zeros = vec![0u32; n];
    for step in trace {
        acc.account_step(step, &zeros, 0).expect("rectangular trace");
    }
    acc.into_ledger()
}

/// `1 - E_arr / E_base`; zero when the baseline spends nothing.
pub fn savings(e_arr: f64, e_base: f64) -> f64 {
    if e_base > 0.0 {
        1.0 - e_arr / e_base
    } else {
        0.0
    }
}
