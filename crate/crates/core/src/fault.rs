//! Seeded fault injection.
//!
//! A [`FaultPlan`] is a reproducible list of events drawn from `(seed, n_r,
//! scope)`. Applying it yields a [`FaultedView`], an overlay on a shared
//! [`NetworkSpec`] that records every change in an undo log so faults can be
//! reverted exactly.

use std::collections::{BTreeMap, HashMap};
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("fault count must be at least 1")]
    ZeroFaults,
    #[error("invalid fault scope {0:?}")]
    InvalidScope(FaultScope),
    #[error("scope {0:?} has no eligible fault targets")]
    NoEligibleTargets(FaultScope),
    #[error("fault event {index} ({event:?}) targets a missing {what}")]
    TargetOutOfRange { index: usize, event: FaultEvent, what: &'static str },
    #[error("invalid fault settings: {0}")]
    InvalidSettings(String),
    #[error("oracle failed on trial {trial}: {message}")]
    Oracle { trial: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    NeuronStuckSilent,
    NeuronStuckFiring,
    SynapseDead,
    WeightBitflip,
    ThresholdShift,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::NeuronStuckSilent,
        FaultKind::NeuronStuckFiring,
        FaultKind::SynapseDead,
        FaultKind::WeightBitflip,
        FaultKind::ThresholdShift,
    ];

    fn targets_edges(self) -> bool {
        matches!(self, FaultKind::SynapseDead | FaultKind::WeightBitflip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultEvent {
    NeuronStuckSilent { neuron: usize },
    NeuronStuckFiring { neuron: usize },
    SynapseDead { edge: usize },
    WeightBitflip { edge: usize, bit: u8 },
    ThresholdShift { neuron: usize, delta: f64 },
}

impl FaultEvent {
    pub fn kind(&self) -> FaultKind {
        match self {
            FaultEvent::NeuronStuckSilent { .. } => FaultKind::NeuronStuckSilent,
            FaultEvent::NeuronStuckFiring { .. } => FaultKind::NeuronStuckFiring,
            FaultEvent::SynapseDead { .. } => FaultKind::SynapseDead,
            FaultEvent::WeightBitflip { .. } => FaultKind::WeightBitflip,
            FaultEvent::ThresholdShift { .. } => FaultKind::ThresholdShift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FaultScope {
    WholeNetwork,
    Cluster {
        cluster: usize,
    },
    Layer {
        layer: usize,
    },
    /// Neurons of one layer inside one cluster, and the edges into them.
    ClusterLayer {
        cluster: usize,
        layer: usize,
    },
}

impl Default for FaultScope {
    fn default() -> Self {
        FaultScope::WholeNetwork
    }
}

/// Whether faults of one plan are applied all at once or one at a time with
/// an accuracy evaluation after every `stride` of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FaultMode {
    Simultaneous,
    Sequential { stride: usize },
}

impl Default for FaultMode {
    fn default() -> Self {
        FaultMode::Sequential { stride: 1 }
    }
}

/// Relative frequency of each fault kind, in [`FaultKind::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultMixture {
    pub neuron_stuck_silent: f64,
    pub neuron_stuck_firing: f64,
    pub synapse_dead: f64,
    pub weight_bitflip: f64,
    pub threshold_shift: f64,
}

impl Default for FaultMixture {
    fn default() -> Self {
        Self::only(&FaultKind::ALL)
    }
}

impl FaultMixture {
    pub fn only(kinds: &[FaultKind]) -> Self {
        let w = |k| if kinds.contains(&k) { 1.0 } else { 0.0 };
        Self {
            neuron_stuck_silent: w(FaultKind::NeuronStuckSilent),
            neuron_stuck_firing: w(FaultKind::NeuronStuckFiring),
            synapse_dead: w(FaultKind::SynapseDead),
            weight_bitflip: w(FaultKind::WeightBitflip),
            threshold_shift: w(FaultKind::ThresholdShift),
        }
    }

    pub fn weights(&self) -> [f64; 5] {
        [
            self.neuron_stuck_silent,
            self.neuron_stuck_firing,
            self.synapse_dead,
            self.weight_bitflip,
            self.threshold_shift,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSettings {
    pub mixture: FaultMixture,
    /// Threshold shifts are drawn uniformly from this range, in units of the
    /// baseline threshold.
    pub shift_range: (f64, f64),
}

impl Default for FaultSettings {
    fn default() -> Self {
        Self { mixture: FaultMixture::default(), shift_range: (0.25, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub seed: u64,
    pub n_r: usize,
    pub scope: FaultScope,
    pub events: Vec<FaultEvent>,
}

impl FaultPlan {
    pub fn empty() -> Self {
        Self { seed: 0, n_r: 0, scope: FaultScope::WholeNetwork, events: Vec::new() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fault plans always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Neurons and edges a scope can hit.
pub struct EligibleTargets {
    pub neurons: Vec<usize>,
    pub edges: Vec<usize>,
}

pub fn eligible_targets(spec: &NetworkSpec, scope: FaultScope) -> Result<EligibleTargets, FaultError> {
    let n_layers = spec.topology.layer_sizes.len();
    let in_scope: Box<dyn Fn(usize) -> bool + '_> = match scope {
        FaultScope::WholeNetwork => Box::new(|_| true),
        FaultScope::Cluster { cluster } if cluster < spec.clusters.k => {
            Box::new(move |n| spec.clusters.cluster_of[n] == cluster)
        }
        FaultScope::Layer { layer } if layer < n_layers => {
            let range = spec.layer_range(layer);
            Box::new(move |n| range.contains(&n))
        }
        FaultScope::ClusterLayer { cluster, layer } if cluster < spec.clusters.k && layer < n_layers => {
            let range = spec.layer_range(layer);
            Box::new(move |n| range.contains(&n) && spec.clusters.cluster_of[n] == cluster)
        }
        other => return Err(FaultError::InvalidScope(other)),
    };
    let neurons = (0..spec.total_neurons()).filter(|&n| in_scope(n)).collect();
    let edges = spec.edges_into(&in_scope);
    Ok(EligibleTargets { neurons, edges })
}

/// Draws `n_r` events uniformly over the scope's eligible targets with the
/// default mixture.
pub fn generate_plan(spec: &NetworkSpec, n_r: usize, scope: FaultScope, seed: u64) -> Result<FaultPlan, FaultError> {
    generate_plan_with(spec, n_r, scope, seed, &FaultSettings::default())
}

pub fn generate_plan_with(
    spec: &NetworkSpec,
    n_r: usize,
    scope: FaultScope,
    seed: u64,
    settings: &FaultSettings,
) -> Result<FaultPlan, FaultError> {
    if n_r == 0 {
        return Err(FaultError::ZeroFaults);
    }
    let targets = eligible_targets(spec, scope)?;
    let (lo, hi) = settings.shift_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(FaultError::InvalidSettings(format!("shift range ({lo}, {hi})")));
    }
    let mut weights = settings.mixture.weights();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(FaultError::InvalidSettings("mixture weights must be finite and >= 0".into()));
    }
    // Kinds without eligible targets in this scope drop out of the mixture.
    for (w, kind) in weights.iter_mut().zip(FaultKind::ALL) {
        let pool = if kind.targets_edges() { &targets.edges } else { &targets.neurons };
        if pool.is_empty() {
            *w = 0.0;
        }
    }
    let kind_dist = WeightedIndex::new(weights).map_err(|_| FaultError::NoEligibleTargets(scope))?;
    let v_th = spec.neuron_params.v_th_base;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n_r)
        .map(|_| {
            let kind = FaultKind::ALL[kind_dist.sample(&mut rng)];
            let mut neuron = || targets.neurons[rng.gen_range(0..targets.neurons.len())];
            match kind {
                FaultKind::NeuronStuckSilent => FaultEvent::NeuronStuckSilent { neuron: neuron() },
                FaultKind::NeuronStuckFiring => FaultEvent::NeuronStuckFiring { neuron: neuron() },
                FaultKind::SynapseDead => {
                    FaultEvent::SynapseDead { edge: targets.edges[rng.gen_range(0..targets.edges.len())] }
                }
                FaultKind::WeightBitflip => {
                    let edge = targets.edges[rng.gen_range(0..targets.edges.len())];
                    FaultEvent::WeightBitflip { edge, bit: rng.gen_range(0..16) }
                }
                FaultKind::ThresholdShift => {
                    let neuron = neuron();
                    let delta = if lo == hi { lo } else { rng.gen_range(lo..hi) } * v_th;
                    FaultEvent::ThresholdShift { neuron, delta }
                }
            }
        })
        .collect();
    Ok(FaultPlan { seed, n_r, scope, events })
}

/// Fractional bits of the 16-bit fixed-point weight layout used for bit flips.
pub const WEIGHT_FRAC_BITS: u32 = 12;

pub fn quantize_weight(w: f64) -> i16 {
    (w * f64::from(1u32 << WEIGHT_FRAC_BITS)).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize_weight(q: i16) -> f64 {
    f64::from(q) / f64::from(1u32 << WEIGHT_FRAC_BITS)
}

/// Flips `bit` of the quantised form of `w`.
pub fn flip_weight_bit(w: f64, bit: u8) -> f64 {
    let q = quantize_weight(w) as u16 ^ (1u16 << (bit % 16));
    dequantize_weight(q as i16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeuronFault {
    StuckSilent,
    StuckFiring,
}

#[derive(Debug, Clone)]
enum Undo {
    Weight { edge: usize, pre: usize, prev: Option<f64> },
    Neuron { neuron: usize, prev: Option<NeuronFault> },
    Threshold { neuron: usize, prev: Option<f64> },
}

/// Faults overlaid on a shared, unmodified network.
#[derive(Debug, Clone)]
pub struct FaultedView<'a> {
    base: &'a NetworkSpec,
    /// Overridden `M̂` per presynaptic neuron, keyed by global edge index.
    rows: HashMap<usize, BTreeMap<usize, f64>>,
    neuron_fault: Vec<Option<NeuronFault>>,
    threshold_shift: HashMap<usize, f64>,
    undo: Vec<Undo>,
}

impl<'a> FaultedView<'a> {
    pub fn new(base: &'a NetworkSpec) -> Self {
        Self {
            base,
            rows: HashMap::new(),
            neuron_fault: vec![None; base.total_neurons()],
            threshold_shift: HashMap::new(),
            undo: Vec::new(),
        }
    }

    pub fn base(&self) -> &'a NetworkSpec {
        self.base
    }

    pub fn is_pristine(&self) -> bool {
        self.rows.is_empty() && self.neuron_fault.iter().all(Option::is_none) && self.threshold_shift.is_empty()
    }

    pub fn applied_events(&self) -> usize {
        self.undo.len()
    }

    /// Validates every event before applying any of them.
    pub fn apply(&mut self, plan: &FaultPlan) -> Result<(), FaultError> {
        let neurons = self.base.total_neurons();
        let edges = self.base.connectivity.edge_count();
        for (index, event) in plan.events.iter().enumerate() {
            let bad = |what| Err(FaultError::TargetOutOfRange { index, event: *event, what });
            match *event {
                FaultEvent::NeuronStuckSilent { neuron }
                | FaultEvent::NeuronStuckFiring { neuron }
                | FaultEvent::ThresholdShift { neuron, .. }
                    if neuron >= neurons =>
                {
                    return bad("neuron")
                }
                FaultEvent::SynapseDead { edge } | FaultEvent::WeightBitflip { edge, .. } if edge >= edges => {
                    return bad("edge")
                }
                FaultEvent::ThresholdShift { delta, .. } if !delta.is_finite() => return bad("finite threshold shift"),
                _ => {}
            }
        }
        let edge_offsets = self.base.connectivity.edge_offsets();
        let neuron_offsets = self.base.layer_offsets();
        let pre_of = |edge: usize| {
            let pair = edge_offsets.partition_point(|&o| o <= edge) - 1;
            let block = &self.base.connectivity.layers[pair];
            neuron_offsets[pair] + block.row_ptr.partition_point(|&p| p <= edge - edge_offsets[pair]) - 1
        };
        let pres: Vec<Option<usize>> = plan
            .events
            .iter()
            .map(|e| match *e {
                FaultEvent::SynapseDead { edge } | FaultEvent::WeightBitflip { edge, .. } => Some(pre_of(edge)),
                _ => None,
            })
            .collect();
        for (event, pre) in plan.events.iter().zip(pres) {
            self.apply_event(event, pre);
        }
        Ok(())
    }

    fn apply_event(&mut self, event: &FaultEvent, pre: Option<usize>) {
        match *event {
            FaultEvent::NeuronStuckSilent { neuron } => self.set_neuron(neuron, NeuronFault::StuckSilent),
            FaultEvent::NeuronStuckFiring { neuron } => self.set_neuron(neuron, NeuronFault::StuckFiring),
            FaultEvent::SynapseDead { edge } => self.set_weight(edge, pre.expect("edge event"), 0.0),
            FaultEvent::WeightBitflip { edge, bit } => {
                let current = self.raw_weight(edge);
                self.set_weight(edge, pre.expect("edge event"), flip_weight_bit(current, bit));
            }
            FaultEvent::ThresholdShift { neuron, delta } => {
                let prev = self.threshold_shift.get(&neuron).copied();
                self.undo.push(Undo::Threshold { neuron, prev });
                self.threshold_shift.insert(neuron, prev.unwrap_or(0.0) + delta);
            }
        }
    }

    fn set_neuron(&mut self, neuron: usize, fault: NeuronFault) {
        let prev = self.neuron_fault[neuron].replace(fault);
        self.undo.push(Undo::Neuron { neuron, prev });
    }

    fn set_weight(&mut self, edge: usize, pre: usize, value: f64) {
        let prev = self.rows.entry(pre).or_default().insert(edge, value);
        self.undo.push(Undo::Weight { edge, pre, prev });
    }

    /// Undoes the most recent `count` events, newest first.
    pub fn revert_last(&mut self, count: usize) {
        for _ in 0..count.min(self.undo.len()) {
            match self.undo.pop().unwrap() {
                Undo::Weight { edge, pre, prev } => {
                    let row = self.rows.get_mut(&pre).expect("row recorded on apply");
                    match prev {
                        Some(v) => {
                            row.insert(edge, v);
                        }
                        None => {
                            row.remove(&edge);
                            if row.is_empty() {
                                self.rows.remove(&pre);
                            }
                        }
                    }
                }
                Undo::Neuron { neuron, prev } => self.neuron_fault[neuron] = prev,
                Undo::Threshold { neuron, prev } => match prev {
                    Some(v) => {
                        self.threshold_shift.insert(neuron, v);
                    }
                    None => {
                        self.threshold_shift.remove(&neuron);
                    }
                },
            }
        }
    }

    /// Drops every fault and hands back the untouched base network.
    pub fn revert(mut self) -> &'a NetworkSpec {
        self.revert_last(self.undo.len());
        self.base
    }

    /// Faulted `M̂` of a global edge, before `R` is applied.
    pub fn raw_weight(&self, edge: usize) -> f64 {
        let r = self.base.edge_ref(edge).expect("edge in range");
        match self.rows.get(&r.pre).and_then(|row| row.get(&edge)) {
            Some(&w) => w,
            None => self.base.connectivity.layers[r.pair].weight[r.pos],
        }
    }

    /// Effective weight `A ⊙ R ⊙ M̂` of the edge at (`pair`, `pos`), whose
    /// global index is `edge` and presynaptic neuron `pre`.
    #[inline]
    pub fn edge_weight(&self, pair: usize, pos: usize, edge: usize, pre: usize) -> f64 {
        let block = &self.base.connectivity.layers[pair];
        match self.rows.get(&pre).and_then(|row| row.get(&edge)) {
            Some(&w) => block.transmission[pos] * w,
            None => block.effective(pos),
        }
    }

    /// Overridden `M̂` values of one presynaptic row in edge order, if any.
    #[inline]
    pub fn row_overrides(&self, pre: usize) -> Option<&BTreeMap<usize, f64>> {
        if self.rows.is_empty() {
            None
        } else {
            self.rows.get(&pre)
        }
    }

    #[inline]
    pub fn neuron_fault(&self, neuron: usize) -> Option<NeuronFault> {
        self.neuron_fault[neuron]
    }

    pub fn threshold_shift(&self, neuron: usize) -> f64 {
        self.threshold_shift.get(&neuron).copied().unwrap_or(0.0)
    }

    /// Hash over every effective weight bit pattern, neuron fault flag and
    /// threshold shift.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let offsets = self.base.layer_offsets();
        let mut edge = 0;
        for (pair, block) in self.base.connectivity.layers.iter().enumerate() {
            for j in 0..block.pre_size {
                let pre = offsets[pair] + j;
                for pos in block.row_ptr[j]..block.row_ptr[j + 1] {
                    self.edge_weight(pair, pos, edge, pre).to_bits().hash(&mut h);
                    edge += 1;
                }
            }
        }
        for n in 0..self.base.total_neurons() {
            self.neuron_fault(n).hash(&mut h);
            self.threshold_shift(n).to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Overlays `plan` on `spec`.
pub fn apply_plan<'a>(spec: &'a NetworkSpec, plan: &FaultPlan) -> Result<FaultedView<'a>, FaultError> {
    let mut view = FaultedView::new(spec);
    view.apply(plan)?;
    Ok(view)
}

pub fn revert(view: FaultedView<'_>) -> &NetworkSpec {
    view.revert()
}

/// A task that scores a (possibly faulted) network with an accuracy in [0, 1].
pub trait AccuracyOracle: Sync {
    fn accuracy(&self, view: &FaultedView<'_>) -> Result<f64, String>;

    /// Fault-free accuracy `a0`.
    fn baseline(&self, spec: &NetworkSpec) -> Result<f64, String> {
        self.accuracy(&FaultedView::new(spec))
    }
}

impl<F> AccuracyOracle for F
where
    F: Fn(&FaultedView<'_>) -> Result<f64, String> + Sync,
{
    fn accuracy(&self, view: &FaultedView<'_>) -> Result<f64, String> {
        self(view)
    }
}

/// Ignores faults entirely.
#[derive(Debug, Clone, Copy)]
pub struct ConstantOracle(pub f64);

impl AccuracyOracle for ConstantOracle {
    fn accuracy(&self, _view: &FaultedView<'_>) -> Result<f64, String> {
        Ok(self.0)
    }
}

/// Mixes a base seed with a tag into an independent stream seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinAccuracy {
    pub a_min: f64,
    pub per_trial: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Campaign {
    pub n_r: usize,
    pub trials: usize,
    pub scope: FaultScope,
    pub mode: FaultMode,
    pub seed: u64,
}

/// Accuracy of one trial: final accuracy for simultaneous mode, the minimum
/// over all checkpoints for sequential mode.
pub fn trial_accuracy(
    spec: &NetworkSpec,
    oracle: &dyn AccuracyOracle,
    plan: &FaultPlan,
    mode: FaultMode,
) -> Result<f64, String> {
    let mut view = FaultedView::new(spec);
    match mode {
        FaultMode::Simultaneous => {
            view.apply(plan).map_err(|e| e.to_string())?;
            oracle.accuracy(&view)
        }
        FaultMode::Sequential { stride } => {
            let stride = stride.max(1);
            let mut worst = f64::INFINITY;
            for chunk in plan.events.chunks(stride) {
                let step = FaultPlan { events: chunk.to_vec(), ..plan.clone() };
                view.apply(&step).map_err(|e| e.to_string())?;
                worst = worst.min(oracle.accuracy(&view)?);
            }
            Ok(worst)
        }
    }
}

/// Minimum oracle accuracy over `trials` independent fault plans.
pub fn min_accuracy_under_faults(
    spec: &NetworkSpec,
    oracle: &dyn AccuracyOracle,
    campaign: &Campaign,
    settings: &FaultSettings,
) -> Result<MinAccuracy, FaultError> {
    if campaign.trials == 0 {
        return Err(FaultError::InvalidSettings("trials must be at least 1".into()));
    }
    if campaign.n_r == 0 {
        let a0 = oracle.baseline(spec).map_err(|message| FaultError::Oracle { trial: 0, message })?;
        return Ok(MinAccuracy { a_min: a0, per_trial: vec![a0; campaign.trials] });
    }
    let per_trial = (0..campaign.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(campaign.seed, trial as u64);
            let plan = generate_plan_with(spec, campaign.n_r, campaign.scope, seed, settings)?;
            trial_accuracy(spec, oracle, &plan, campaign.mode).map_err(|message| FaultError::Oracle { trial, message })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let a_min = per_trial.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MinAccuracy { a_min, per_trial })
}
