//! Discrete-time simulation of a layered network with astrocytes.
//!
//! Each step runs the layers in order. A layer's input is built from the
//! spikes its predecessor emitted earlier in the same step, so activity
//! crosses the whole feedforward stack within one step. Astrocytes then
//! integrate the spikes of their covered neurons, update `v_G`, `g` and
//! `gamma`, and refresh the weight modulation used on the next step. Every
//! `rate_window_ms` the repair controller compares the covered neurons'
//! measured rate with its target and adjusts the release drive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, receptor_rate, step_astrocyte, step_gliotransmitter, step_neuron_with_threshold, step_receptor,
    AstrocyteParams, AstrocyteState, DynamicsError, EfficacyLaw, NeuronState,
};
use crate::energy::{savings, ArrMode, EnergyAccountant, EnergyCoefficients, EnergyError, EnergyLedger, EnergyTotals};
use crate::fault::{FaultedView, NeuronFault};
use crate::repair::{monitor_and_repair, AstrocyteTrace, RecoveryRecord, RepairError, RepairPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Repair(#[from] RepairError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("external input has {got} entries, input layer has {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Step size (ms).
    pub dt: f64,
    /// Current injected per unit of `weight * v_spk` from an incoming spike.
    pub input_gain: f64,
    /// Constant current added to every non-input neuron.
    pub bias: f64,
    pub efficacy: EfficacyLaw,
    /// Release rate contributed by Ca2+ activity, `r_g = gain * v_G + drive`.
    pub natural_release_gain: f64,
    /// Fractional threshold reduction at `g = 1` for covered neurons.
    pub threshold_relief: f64,
    /// Rate controller; `None` leaves the release drive at zero.
    pub repair: Option<RepairPolicy>,
    pub arr: ArrMode,
    /// Idle steps before ARR gates a neuron.
    pub gate_after: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 5.0,
            input_gain: 8.0,
            bias: 0.0,
            efficacy: EfficacyLaw::Multiplicative,
            natural_release_gain: 1.0,
            threshold_relief: 0.05,
            repair: Some(RepairPolicy::default()),
            arr: ArrMode::Off,
            gate_after: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.input_gain.is_finite() && self.bias.is_finite()) {
            return Err(SimError::InvalidConfig("input_gain and bias must be finite".into()));
        }
        if !(self.natural_release_gain >= 0.0 && self.natural_release_gain.is_finite()) {
            return Err(SimError::InvalidConfig("natural_release_gain must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.threshold_relief) {
            return Err(SimError::InvalidConfig("threshold_relief must lie in [0, 1)".into()));
        }
        if let Some(policy) = &self.repair {
            policy.validate(self.dt)?;
        }
        Ok(())
    }

    /// Same config without the rate controller; release then follows Ca2+ activity alone.
    pub fn without_repair(&self) -> Self {
        Self { repair: None, ..*self }
    }
}

struct AstroUnit {
    id: usize,
    covered: Vec<usize>,
    coverage_weight: f64,
    incoming_synapses: u64,
    params: AstrocyteParams,
    state: AstrocyteState,
    gamma_dot: f64,
    drive: f64,
    window_spikes: u64,
    window_steps: u64,
    activations: u64,
    saturations: u64,
    trace: AstrocyteTrace,
}

/// Per-astrocyte summary after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstrocyteReport {
    pub id: usize,
    pub covered: usize,
    pub g: f64,
    pub gamma: f64,
    pub drive: f64,
    pub activations: u64,
    pub saturations: u64,
}

pub struct Simulator<'v, 'a> {
    view: &'v FaultedView<'a>,
    cfg: SimConfig,
    offsets: Vec<usize>,
    neurons: Vec<NeuronState>,
    astro: Vec<AstroUnit>,
    covered_by: Vec<Option<usize>>,
    factor: Vec<f64>,
    threshold_scale: Vec<f64>,
    indirect: Vec<f64>,
    accum: Vec<f64>,
    events_in: Vec<u32>,
    events_out: Vec<u32>,
    spikes: Vec<bool>,
    spike_counts: Vec<u64>,
    idle_run: Vec<u32>,
    step: u64,
    window_len: u64,
    energy: Option<EnergyAccountant>,
    raster: Option<Vec<(u64, u32)>>,
}

impl<'v, 'a> Simulator<'v, 'a> {
    pub fn new(view: &'v FaultedView<'a>, cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let spec = view.base();
        spec.neuron_params.validate()?;
        let params = spec.neuron_params;
        if cfg.dt > params.tau_n {
            return Err(DynamicsError::InvalidStep { dt: cfg.dt, tau: params.tau_n }.into());
        }
        let n = spec.total_neurons();
        let offsets = spec.layer_offsets();
        let neurons = (0..n)
            .map(|i| NeuronState { v_th: params.v_th_base + view.threshold_shift(i), ..NeuronState::resting(&params) })
            .collect();

        // In-degree per neuron, for the memory-update bill of modulated synapses.
        let mut in_degree = vec![0u64; n];
        for (pair, block) in spec.connectivity.layers.iter().enumerate() {
            for &c in &block.col {
                in_degree[offsets[pair + 1] + c as usize] += 1;
            }
        }

        let mut covered_by = vec![None; n];
        let mut astro = Vec::new();
        for a in spec.roster.enabled() {
            a.params.validate()?;
            if cfg.dt > a.params.tau_g {
                return Err(DynamicsError::InvalidStep { dt: cfg.dt, tau: a.params.tau_g }.into());
            }
            if a.covered.is_empty() {
                continue;
            }
            dynamics::modulation_factor(&a.params, 0.0)?;
            for &i in &a.covered {
                covered_by[i] = Some(astro.len());
            }
            astro.push(AstroUnit {
                id: a.id,
                covered: a.covered.clone(),
                coverage_weight: a.coverage_weight(),
                incoming_synapses: a.covered.iter().map(|&i| in_degree[i]).sum(),
                params: a.params,
                state: AstrocyteState::default(),
                gamma_dot: 0.0,
                drive: 0.0,
                window_spikes: 0,
                window_steps: 0,
                activations: 0,
                saturations: 0,
                trace: AstrocyteTrace { astrocyte_id: a.id, ..Default::default() },
            });
        }
        let window_len = cfg.repair.map_or(u64::MAX, |p| p.window_steps(cfg.dt));
        Ok(Self {
            view,
            cfg,
            offsets,
            neurons,
            astro,
            covered_by,
            factor: vec![1.0; n],
            threshold_scale: vec![1.0; n],
            indirect: vec![0.0; n],
            accum: vec![0.0; n],
            events_in: vec![0; n],
            events_out: vec![0; n],
            spikes: vec![false; n],
            spike_counts: vec![0; n],
            idle_run: vec![0; n],
            step: 0,
            window_len,
            energy: None,
            raster: None,
        })
    }

    /// Books energy for every subsequent step under the config's ARR mode.
    pub fn with_energy(mut self) -> Self {
        self.energy = Some(EnergyAccountant::new(self.neurons.len(), self.cfg.arr, self.cfg.gate_after));
        self
    }

    /// Keeps every `(step, neuron)` spike.
    pub fn with_raster(mut self) -> Self {
        self.raster = Some(Vec::new());
        self
    }

    pub fn input_size(&self) -> usize {
        self.offsets[1]
    }

    pub fn steps_run(&self) -> u64 {
        self.step
    }

    /// Advances one step with the given input-layer currents.
    pub fn step(&mut self, external: &[f64]) -> Result<&[bool], SimError> {
        let input = self.input_size();
        if external.len() != input {
            return Err(SimError::InputSize { expected: input, got: external.len() });
        }
        let spec = self.view.base();
        let params = spec.neuron_params;
        let dt = self.cfg.dt;
        let layers = spec.topology.layer_sizes.len();
        self.events_out.iter_mut().for_each(|e| *e = 0);
        let dynamics_gating = self.cfg.arr == ArrMode::Dynamics;

        for layer in 0..layers {
            let (lo, hi) = (self.offsets[layer], self.offsets[layer + 1]);
            for i in lo..hi {
                let current = if layer == 0 {
                    self.factor[i] * external[i]
                } else {
                    let syn = match self.cfg.efficacy {
                        EfficacyLaw::Multiplicative => self.factor[i] * self.accum[i],
                        EfficacyLaw::IndirectPathway { .. } => {
                            self.accum[i] + self.indirect[i] * f64::from(self.events_in[i]) * params.v_spk
                        }
                    };
                    self.cfg.bias + self.cfg.input_gain * syn
                };
                let fired = match self.view.neuron_fault(i) {
                    Some(NeuronFault::StuckSilent) => {
                        self.neurons[i].v_n = params.v_idle;
                        false
                    }
                    Some(NeuronFault::StuckFiring) => true,
                    None if dynamics_gating
                        && layer > 0
                        && self.events_in[i] == 0
                        && self.idle_run[i] >= self.cfg.gate_after =>
                    {
                        false
                    }
                    None => {
                        let threshold = self.neurons[i].v_th * self.threshold_scale[i];
                        let (next, fired) =
                            step_neuron_with_threshold(&self.neurons[i], &params, current, dt, threshold)
                                .map_err(|e| e.at(i))?;
                        self.neurons[i] = next;
                        fired
                    }
                };
                self.spikes[i] = fired;
                if fired {
                    self.neurons[i].last_spike_step = Some(self.step);
                    self.spike_counts[i] += 1;
                    self.idle_run[i] = 0;
                    if let Some(r) = self.raster.as_mut() {
                        r.push((self.step, i as u32));
                    }
                } else {
                    self.idle_run[i] = self.idle_run[i].saturating_add(1);
                }
            }
            // Inputs of this layer are consumed; clear them for the next step.
            for i in lo..hi {
                self.accum[i] = 0.0;
                self.events_in[i] = 0;
            }
            if layer + 1 < layers {
                self.propagate(layer, params.v_spk);
            }
        }

        let mem_updates = self.update_astrocytes()?;
        if let Some(acc) = self.energy.as_mut() {
            acc.account_step(&self.spikes, &self.events_out, mem_updates)?;
        }
        self.step += 1;
        Ok(&self.spikes)
    }

    fn propagate(&mut self, pair: usize, v_spk: f64) {
        let spec = self.view.base();
        let block = &spec.connectivity.layers[pair];
        let edge_base: usize = spec.connectivity.layers[..pair].iter().map(|b| b.nnz()).sum();
        let (pre_lo, post_lo) = (self.offsets[pair], self.offsets[pair + 1]);
        for j in 0..block.pre_size {
            let pre = pre_lo + j;
            if !self.spikes[pre] {
                continue;
            }
            let (start, end) = (block.row_ptr[j], block.row_ptr[j + 1]);
            self.events_out[pre] = (end - start) as u32;
            if let Some(row) = self.view.row_overrides(pre) {
                let mut overrides = row.iter().peekable();
                for pos in start..end {
                    let post = post_lo + block.col[pos] as usize;
                    let w = match overrides.peek() {
                        Some(&(&edge, &w)) if edge == edge_base + pos => {
                            overrides.next();
                            block.transmission[pos] * w
                        }
                        _ => block.effective(pos),
                    };
                    self.accum[post] += w * v_spk;
                    self.events_in[post] += 1;
                }
            } else {
                for pos in start..end {
                    let post = post_lo + block.col[pos] as usize;
                    self.accum[post] += block.effective(pos) * v_spk;
                    self.events_in[post] += 1;
                }
            }
        }
    }

    fn update_astrocytes(&mut self) -> Result<u64, SimError> {
        let dt = self.cfg.dt;
        let v_th_base = self.view.base().neuron_params.v_th_base;
        let mut mem_updates = 0;
        for unit in &mut self.astro {
            let fired = unit.covered.iter().filter(|&&i| self.spikes[i]).count() as u64;
            // Coverage-weighted spike rate of the domain (1/ms).
            let i_g = unit.coverage_weight * fired as f64 / dt;
            let mut s = step_astrocyte(&unit.state, &unit.params, i_g, dt).map_err(|e| e.at(unit.id))?;
            let r_g = self.cfg.natural_release_gain * s.v_g + unit.drive;
            s = step_gliotransmitter(&s, &unit.params, r_g, dt).map_err(|e| e.at(unit.id))?;
            s = step_receptor(&s, &unit.params, dt).map_err(|e| e.at(unit.id))?;
            unit.state = s;
            unit.gamma_dot = receptor_rate(&s, &unit.params);

            unit.window_spikes += fired;
            unit.window_steps += 1;
            if let Some(policy) = &self.cfg.repair {
                if unit.window_steps >= self.window_len {
                    let seconds = unit.window_steps as f64 * dt / 1000.0;
                    let rate_hz = unit.window_spikes as f64 / (unit.covered.len() as f64 * seconds);
                    let update = monitor_and_repair(unit.drive, rate_hz, policy);
                    if update.drive != unit.drive {
                        mem_updates += unit.incoming_synapses;
                    }
                    unit.drive = update.drive;
                    unit.activations += u64::from(update.activated);
                    unit.saturations += u64::from(update.saturated);

                    let relief = 1.0 - self.cfg.threshold_relief * unit.state.g;
                    let delta: f64 =
                        unit.covered.iter().map(|&i| self.neurons[i].v_th * relief - v_th_base).sum::<f64>()
                            / unit.covered.len() as f64;
                    unit.trace.steps.push(self.step + 1);
                    unit.trace.delta_vth.push(delta);
                    unit.trace.g.push(unit.state.g);
                    unit.trace.rate_hz.push(rate_hz);
                    unit.window_spikes = 0;
                    unit.window_steps = 0;
                }
            }

            let (factor, indirect) = match self.cfg.efficacy {
                EfficacyLaw::Multiplicative => (dynamics::modulation_factor(&unit.params, unit.state.g)?, 0.0),
                EfficacyLaw::IndirectPathway { indirect_gain } => {
                    (1.0, indirect_gain / unit.params.tau_p * unit.gamma_dot)
                }
            };
            let scale = 1.0 - self.cfg.threshold_relief * unit.state.g;
            for &i in &unit.covered {
                self.factor[i] = factor;
                self.indirect[i] = indirect;
                self.threshold_scale[i] = scale;
            }
        }
        Ok(mem_updates)
    }

    /// Release drive of each simulated astrocyte, in roster order.
    pub fn drives(&self) -> Vec<f64> {
        self.astro.iter().map(|a| a.drive).collect()
    }

    /// Overrides the release drives, e.g. to replay a calibrated operating point.
    pub fn set_drives(&mut self, drives: &[f64]) -> Result<(), SimError> {
        if drives.len() != self.astro.len() {
            return Err(SimError::InvalidConfig(format!(
                "{} drives for {} astrocytes",
                drives.len(),
                self.astro.len()
            )));
        }
        if let Some(d) = drives.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(SimError::InvalidConfig(format!("drive {d} must be finite and >= 0")));
        }
        for (unit, &d) in self.astro.iter_mut().zip(drives) {
            unit.drive = d;
        }
        Ok(())
    }

    /// Runs `steps` steps with a constant input vector.
    pub fn run_constant(&mut self, external: &[f64], steps: u64) -> Result<(), SimError> {
        for _ in 0..steps {
            self.step(external)?;
        }
        Ok(())
    }

    pub fn spike_counts(&self) -> &[u64] {
        &self.spike_counts
    }

    pub fn reset_counts(&mut self) {
        self.spike_counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn neuron_states(&self) -> &[NeuronState] {
        &self.neurons
    }

    pub fn astrocyte_states(&self) -> Vec<AstrocyteState> {
        self.astro.iter().map(|a| a.state).collect()
    }

    pub fn covered_by(&self, neuron: usize) -> Option<usize> {
        self.covered_by[neuron]
    }

    /// Mean rate (Hz) of `neurons` over the counted steps.
    pub fn mean_rate_hz(&self, neurons: impl IntoIterator<Item = usize>, steps: u64) -> f64 {
        let (mut spikes, mut count) = (0u64, 0usize);
        for i in neurons {
            spikes += self.spike_counts[i];
            count += 1;
        }
        if count == 0 || steps == 0 {
            return 0.0;
        }
        spikes as f64 / (count as f64 * steps as f64 * self.cfg.dt / 1000.0)
    }

    /// Every neuron covered by an enabled astrocyte.
    pub fn covered_neurons(&self) -> Vec<usize> {
        (0..self.covered_by.len()).filter(|&i| self.covered_by[i].is_some()).collect()
    }

    pub fn astrocyte_reports(&self) -> Vec<AstrocyteReport> {
        self.astro
            .iter()
            .map(|a| AstrocyteReport {
                id: a.id,
                covered: a.covered.len(),
                g: a.state.g,
                gamma: a.state.gamma,
                drive: a.drive,
                activations: a.activations,
                saturations: a.saturations,
            })
            .collect()
    }

    pub fn recovery_record(&self) -> RecoveryRecord {
        RecoveryRecord { traces: self.astro.iter().map(|a| a.trace.clone()).collect() }
    }

    pub fn energy(&self) -> Option<&EnergyLedger> {
        self.energy.as_ref().map(EnergyAccountant::ledger)
    }

    pub fn raster(&self) -> Option<&[(u64, u32)]> {
        self.raster.as_deref()
    }
}

/// Stimulus for an ARR comparison: constant input currents drawn uniformly
/// from `[0, input_peak]` per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrStimulus {
    pub input_peak: f64,
    pub steps: u64,
    /// Width of the step buckets in the report.
    pub bucket_steps: u64,
}

impl Default for ArrStimulus {
    fn default() -> Self {
        Self { input_peak: 1.25, steps: 2000, bucket_steps: 200 }
    }
}

/// Category totals of one step bucket, summed over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBucket {
    pub start_step: u64,
    pub base: EnergyTotals,
    pub arr: EnergyTotals,
}

/// Paired baseline and ARR runs on identical stimuli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrComparison {
    pub mode: ArrMode,
    pub base: EnergyLedger,
    pub arr: EnergyLedger,
    pub base_totals: EnergyTotals,
    pub arr_totals: EnergyTotals,
    /// `1 - E_arr / E_base`.
    pub savings: f64,
    /// Both arms emitted the same spikes on every seed.
    pub identical_spikes: bool,
    pub buckets: Vec<EnergyBucket>,
}

fn bucketed_run(
    view: &FaultedView<'_>,
    cfg: SimConfig,
    input: &[f64],
    stim: &ArrStimulus,
    coeffs: &EnergyCoefficients,
) -> Result<(EnergyLedger, Vec<EnergyTotals>, Vec<(u64, u32)>), SimError> {
    let mut sim = Simulator::new(view, cfg)?.with_energy().with_raster();
    let mut buckets = Vec::new();
    let mut last = EnergyTotals::default();
    let width = stim.bucket_steps.max(1);
    let mut t = 0;
    while t < stim.steps {
        let n = width.min(stim.steps - t);
        sim.run_constant(input, n)?;
        t += n;
        let now = sim.energy().expect("energy enabled").totals(coeffs);
        buckets.push(EnergyTotals {
            spikes: now.spikes - last.spikes,
            idle: now.idle - last.idle,
            synaptic: now.synaptic - last.synaptic,
            memory: now.memory - last.memory,
            total: now.total - last.total,
        });
        last = now;
    }
    let raster = sim.raster().expect("raster enabled").to_vec();
    Ok((sim.energy().expect("energy enabled").clone(), buckets, raster))
}

fn add_totals(a: &mut EnergyTotals, b: &EnergyTotals) {
    a.spikes += b.spikes;
    a.idle += b.idle;
    a.synaptic += b.synaptic;
    a.memory += b.memory;
    a.total += b.total;
}

/// Runs every seed's stimulus once with ARR off and once under `mode`.
/// Seeds run in parallel; ledgers are merged in seed order.
pub fn compare_arr(
    view: &FaultedView<'_>,
    cfg: SimConfig,
    mode: ArrMode,
    coeffs: &EnergyCoefficients,
    stim: &ArrStimulus,
    seeds: &[u64],
) -> Result<ArrComparison, SimError> {
    coeffs.validate()?;
    if !(stim.input_peak >= 0.0 && stim.input_peak.is_finite()) {
        return Err(SimError::InvalidConfig(format!("input_peak must be finite and >= 0, got {}", stim.input_peak)));
    }
    let inputs = view.base().topology.layer_sizes[0];
    let runs: Result<Vec<_>, SimError> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input: Vec<f64> = (0..inputs).map(|_| rng.gen_range(0.0..=stim.input_peak)).collect();
            let base = bucketed_run(view, SimConfig { arr: ArrMode::Off, ..cfg }, &input, stim, coeffs)?;
            let arr = bucketed_run(view, SimConfig { arr: mode, ..cfg }, &input, stim, coeffs)?;
            Ok((base, arr))
        })
        .collect();
    let n = view.base().total_neurons();
    let mut out = ArrComparison {
        mode,
        base: EnergyLedger::new(n, false),
        arr: EnergyLedger::new(n, mode.gating()),
        base_totals: EnergyTotals::default(),
        arr_totals: EnergyTotals::default(),
        savings: 0.0,
        identical_spikes: true,
        buckets: Vec::new(),
    };
    for ((base, base_buckets, base_raster), (arr, arr_buckets, arr_raster)) in runs? {
        out.base.merge(&base);
        out.arr.merge(&arr);
        out.identical_spikes &= base_raster == arr_raster;
        for (i, (b, a)) in base_buckets.iter().zip(&arr_buckets).enumerate() {
            if out.buckets.len() <= i {
                out.buckets.push(EnergyBucket {
                    start_step: i as u64 * stim.bucket_steps.max(1),
                    base: EnergyTotals::default(),
                    arr: EnergyTotals::default(),
                });
            }
            add_totals(&mut out.buckets[i].base, b);
            add_totals(&mut out.buckets[i].arr, a);
        }
    }
    out.base_totals = out.base.totals(coeffs);
    out.arr_totals = out.arr.totals(coeffs);
    out.savings = savings(out.arr_totals.total, out.base_totals.total);
    Ok(out)
}

/// Columns `start_step, arm, category, value`.
pub fn write_energy_csv<W: std::io::Write>(cmp: &ArrComparison, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["start_step", "arm", "category", "value"])?;
    for b in &cmp.buckets {
        for (arm, totals) in [("base", &b.base), ("arr", &b.arr)] {
            for (category, value) in totals.categories() {
                out.write_record([b.start_step.to_string(), arm.to_string(), category.to_string(), value.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
