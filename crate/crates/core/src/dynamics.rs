//! Neuron, astrocyte and gliotransmitter dynamics.
//!
//! Every leaky variable obeys `tau dx/dt = -x + I` and is advanced with
//! exponential Euler, `x <- I + (x - I) * exp(-dt / tau)`, which is exact when
//! `I` is constant over the step. The saturating gliotransmitter and receptor
//! equations are linear in their own state for fixed drive, so they are
//! advanced the same way around their moving fixed point.
//!
//! Rates are in 1/ms and times in ms throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to every firing threshold.
pub const THRESHOLD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {quantity} at index {index}")]
    NonFinite { quantity: &'static str, index: usize },
    #[error("time step {dt} ms is outside (0, {tau}] ms")]
    InvalidStep { dt: f64, tau: f64 },
    #[error("negative gliotransmitter release rate {0}")]
    NegativeRelease(f64),
    #[error("{quantity} = {value} is outside [0, 1]")]
    OutOfUnitRange { quantity: &'static str, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl DynamicsError {
    /// Re-targets an error raised on a single state to its index in a population.
    pub fn at(self, index: usize) -> Self {
        match self {
            DynamicsError::NonFinite { quantity, .. } => DynamicsError::NonFinite { quantity, index },
            other => other,
        }
    }
}

fn finite(value: f64, quantity: &'static str) -> Result<f64, DynamicsError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(DynamicsError::NonFinite { quantity, index: 0 })
    }
}

fn check_dt(dt: f64, tau: f64) -> Result<(), DynamicsError> {
    if dt > 0.0 && dt <= tau {
        Ok(())
    } else {
        Err(DynamicsError::InvalidStep { dt, tau })
    }
}

/// Exact solution of `tau dx/dt = -x + input` after `dt` with constant input.
#[inline]
pub fn leak_toward(x: f64, input: f64, tau: f64, dt: f64) -> f64 {
    input + (x - input) * (-dt / tau).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronParams {
    /// Membrane time constant (ms).
    pub tau_n: f64,
    /// Baseline firing threshold.
    pub v_th_base: f64,
    /// Spike output level transmitted to downstream synapses.
    pub v_spk: f64,
    /// Idle level; the membrane is reset here after a spike.
    pub v_idle: f64,
    /// Refractory period in steps.
    pub refractory: u32,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self { tau_n: 20.0, v_th_base: 1.0, v_spk: 2.0, v_idle: 0.0, refractory: 0 }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in
            [("tau_n", self.tau_n), ("v_th_base", self.v_th_base), ("v_spk", self.v_spk), ("v_idle", self.v_idle)]
        {
            finite(v, name)?;
        }
        if self.tau_n <= 0.0 {
            return Err(DynamicsError::InvalidParams(format!("tau_n must be > 0, got {}", self.tau_n)));
        }
        if !(self.v_spk > self.v_th_base && self.v_th_base > self.v_idle) {
            return Err(DynamicsError::InvalidParams(format!(
                "need v_spk > v_th_base > v_idle, got {} / {} / {}",
                self.v_spk, self.v_th_base, self.v_idle
            )));
        }
        if self.v_th_base < THRESHOLD_FLOOR {
            return Err(DynamicsError::InvalidParams("v_th_base must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v_n: f64,
    pub v_th: f64,
    pub refractory_left: u32,
    pub last_spike_step: Option<u64>,
}

impl NeuronState {
    pub fn resting(params: &NeuronParams) -> Self {
        Self { v_n: params.v_idle, v_th: params.v_th_base, refractory_left: 0, last_spike_step: None }
    }
}

/// Advances one neuron by `dt` under constant input current `i_n`.
///
/// Integrates first, then compares against the state's threshold. Returns the
/// new state and whether it spiked.
pub fn step_neuron(
    state: &NeuronState,
    params: &NeuronParams,
    i_n: f64,
    dt: f64,
) -> Result<(NeuronState, bool), DynamicsError> {
    step_neuron_with_threshold(state, params, i_n, dt, state.v_th)
}

/// [`step_neuron`] with an explicit effective threshold (e.g. astrocyte-relieved).
pub fn step_neuron_with_threshold(
    state: &NeuronState,
    params: &NeuronParams,
    i_n: f64,
    dt: f64,
    threshold: f64,
) -> Result<(NeuronState, bool), DynamicsError> {
    finite(i_n, "neuron input")?;
    finite(state.v_n, "membrane activity")?;
    finite(threshold, "threshold")?;
    check_dt(dt, params.tau_n)?;

    let mut next = *state;
    next.v_th = state.v_th.max(THRESHOLD_FLOOR);
    if state.refractory_left > 0 {
        next.refractory_left -= 1;
        next.v_n = params.v_idle;
        return Ok((next, false));
    }
    next.v_n = leak_toward(state.v_n, i_n, params.tau_n, dt);
    if next.v_n >= threshold.max(THRESHOLD_FLOOR) {
        next.v_n = params.v_idle;
        next.refractory_left = params.refractory;
        return Ok((next, true));
    }
    Ok((next, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AstrocyteParams {
    /// Ca2+ time constant (ms).
    pub tau_g: f64,
    /// Gliotransmitter and receptor time constant (ms).
    pub tau_p: f64,
    /// Release gain `G` of the gliotransmitter equation.
    pub release_gain: f64,
    /// Postsynaptic receptor binding gain `G^post`.
    pub g_post: f64,
    /// Baseline postsynaptic activation `q0`.
    pub q0: f64,
    /// Astrocyte contribution gain `Q`.
    pub q_gain: f64,
    /// Presynaptic release scale `u0`.
    pub u: f64,
    /// Ca2+ level below which release is suppressed.
    pub ca_threshold: f64,
}

impl Default for AstrocyteParams {
    fn default() -> Self {
        Self {
            tau_g: 200.0,
            tau_p: 100.0,
            release_gain: 0.5,
            g_post: 0.02,
            q0: 0.5,
            q_gain: 2.0,
            u: 1.0,
            ca_threshold: 0.0,
        }
    }
}

impl AstrocyteParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [
            ("tau_g", self.tau_g),
            ("tau_p", self.tau_p),
            ("release_gain", self.release_gain),
            ("g_post", self.g_post),
            ("q0", self.q0),
            ("q_gain", self.q_gain),
            ("u", self.u),
            ("ca_threshold", self.ca_threshold),
        ] {
            finite(v, name)?;
        }
        if self.tau_g <= 0.0 || self.tau_p <= 0.0 {
            return Err(DynamicsError::InvalidParams("time constants must be > 0".into()));
        }
        if self.q0 < 0.0 || self.q_gain < 0.0 || self.u < 0.0 || self.release_gain < 0.0 || self.g_post < 0.0 {
            return Err(DynamicsError::InvalidParams("q0, Q, u, G and G_post must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AstrocyteState {
    /// Ca2+ activity.
    pub v_g: f64,
    /// Gliotransmitter availability in [0, 1].
    pub g: f64,
    /// Bound extrasynaptic receptor fraction in [0, 1].
    pub gamma: f64,
}

/// Ca2+ leak toward the glial input `i_g`.
pub fn step_astrocyte(
    state: &AstrocyteState,
    params: &AstrocyteParams,
    i_g: f64,
    dt: f64,
) -> Result<AstrocyteState, DynamicsError> {
    finite(i_g, "astrocyte input")?;
    finite(state.v_g, "calcium activity")?;
    check_dt(dt, params.tau_g)?;
    Ok(AstrocyteState { v_g: leak_toward(state.v_g, i_g, params.tau_g, dt), ..*state })
}

/// `tau_p dg/dt = -g + G (1 - g) r_g`, with release forced to zero while the
/// Ca2+ activity sits below `ca_threshold`.
pub fn step_gliotransmitter(
    state: &AstrocyteState,
    params: &AstrocyteParams,
    r_g: f64,
    dt: f64,
) -> Result<AstrocyteState, DynamicsError> {
    finite(r_g, "release rate")?;
    finite(state.g, "gliotransmitter")?;
    if r_g < 0.0 {
        return Err(DynamicsError::NegativeRelease(r_g));
    }
    if dt <= 0.0 {
        return Err(DynamicsError::InvalidStep { dt, tau: params.tau_p });
    }
    let r = if state.v_g < params.ca_threshold { 0.0 } else { r_g };
    let drive = params.release_gain * r;
    let g_inf = drive / (1.0 + drive);
    let g = g_inf + (state.g - g_inf) * (-dt * (1.0 + drive) / params.tau_p).exp();
    Ok(AstrocyteState { g: g.clamp(0.0, 1.0), ..*state })
}

/// `tau_p dgamma/dt = -gamma + G_post (1 - gamma) g tau_p`.
pub fn step_receptor(
    state: &AstrocyteState,
    params: &AstrocyteParams,
    dt: f64,
) -> Result<AstrocyteState, DynamicsError> {
    finite(state.gamma, "receptor fraction")?;
    finite(state.g, "gliotransmitter")?;
    if dt <= 0.0 {
        return Err(DynamicsError::InvalidStep { dt, tau: params.tau_p });
    }
    if !(0.0..=1.0).contains(&state.gamma) {
        return Err(DynamicsError::OutOfUnitRange { quantity: "gamma", value: state.gamma });
    }
    let drive = params.g_post * state.g * params.tau_p;
    let gamma_inf = drive / (1.0 + drive);
    let gamma = gamma_inf + (state.gamma - gamma_inf) * (-dt * (1.0 + drive) / params.tau_p).exp();
    Ok(AstrocyteState { gamma: gamma.clamp(0.0, 1.0), ..*state })
}

/// Instantaneous `dgamma/dt` (1/ms) at the given state.
pub fn receptor_rate(state: &AstrocyteState, params: &AstrocyteParams) -> f64 {
    (-state.gamma + params.g_post * (1.0 - state.gamma) * state.g * params.tau_p) / params.tau_p
}

/// Weight multiplier `u (q0 + Q g) / (u q0)`; equals 1 at `g = 0`.
pub fn modulation_factor(params: &AstrocyteParams, g: f64) -> Result<f64, DynamicsError> {
    finite(g, "gliotransmitter")?;
    if !(0.0..=1.0).contains(&g) {
        return Err(DynamicsError::OutOfUnitRange { quantity: "g", value: g });
    }
    let base = params.u * params.q0;
    if base > 0.0 {
        Ok(params.u * (params.q0 + params.q_gain * g) / base)
    } else if params.q_gain > 0.0 {
        Err(DynamicsError::InvalidParams("u * q0 = 0 leaves the modulation normalisation undefined".into()))
    } else {
        Ok(1.0)
    }
}

/// Astrocyte-modulated synaptic weight. `None` means the postsynaptic neuron
/// is not covered by any astrocyte and the weight passes through unchanged.
pub fn effective_weight(base_weight: f64, params: Option<&AstrocyteParams>, g: f64) -> Result<f64, DynamicsError> {
    finite(base_weight, "base weight")?;
    match params {
        Some(p) => Ok(base_weight * modulation_factor(p, g)?),
        None => Ok(base_weight),
    }
}

/// Direct plus gliotransmission pathway: `J0 + (G_ij / tau_p) * dgamma/dt`.
pub fn indirect_pathway_weight(j0: f64, g_ij: f64, gamma_dot: f64, tau_p: f64) -> Result<f64, DynamicsError> {
    finite(j0, "direct weight")?;
    finite(g_ij, "indirect gain")?;
    finite(gamma_dot, "receptor rate")?;
    if tau_p <= 0.0 {
        return Err(DynamicsError::InvalidParams(format!("tau_p must be > 0, got {tau_p}")));
    }
    Ok(j0 + g_ij / tau_p * gamma_dot)
}

/// Network-wide choice of synaptic efficacy law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EfficacyLaw {
    /// `w = u (q0 + Q g)`, normalised so `g = 0` keeps the structural weight.
    Multiplicative,
    /// `s = J0 + (G_ij / tau_p) dgamma/dt` with one indirect gain for every edge.
    IndirectPathway { indirect_gain: f64 },
}

impl Default for EfficacyLaw {
    fn default() -> Self {
        EfficacyLaw::Multiplicative
    }
}
