//! Hopfield associative memory with optional astrocyte modulation.
//!
//! Patterns are stored with the Hebbian outer-product rule and recalled by
//! asynchronous sign updates in fixed index order. Astrocyte modulation
//! scales each weight by the multiplicative efficacy factor of the mean
//! gliotransmitter level of its two endpoints, which keeps the matrix
//! symmetric so the Hopfield energy still never increases.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{modulation_factor, AstrocyteParams, DynamicsError};
use crate::fault::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("a Hopfield network needs at least 2 neurons, got {0}")]
    TooSmall(usize),
    #[error("vector has {got} entries, network has {expected}")]
    Length { expected: usize, got: usize },
    #[error("entry {index} is {value}, expected -1 or +1")]
    NotBipolar { index: usize, value: i8 },
    #[error("cannot draw {wanted} distinct patterns of length {n}")]
    TooManyPatterns { wanted: usize, n: usize },
    #[error("invalid benchmark setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Bipolar patterns of a common length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    pub n: usize,
    pub patterns: Vec<Vec<i8>>,
    pub seed: u64,
}

impl PatternSet {
    /// `p` distinct uniformly random patterns.
    pub fn random(n: usize, p: usize, seed: u64) -> Result<Self, MemoryError> {
        if n < 2 {
            return Err(MemoryError::TooSmall(n));
        }
        if n < 63 && p as u128 > 1u128 << n {
            return Err(MemoryError::TooManyPatterns { wanted: p, n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::with_capacity(p);
        let mut patterns = Vec::with_capacity(p);
        while patterns.len() < p {
            let x: Vec<i8> = (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            if seen.insert(x.clone()) {
                patterns.push(x);
            }
        }
        Ok(Self { n, patterns, seed })
    }

    /// Checks entries and lengths. Duplicates are allowed here and reported
    /// by [`hebbian_store`].
    pub fn new(n: usize, patterns: Vec<Vec<i8>>, seed: u64) -> Result<Self, MemoryError> {
        if n < 2 {
            return Err(MemoryError::TooSmall(n));
        }
        for p in &patterns {
            check_bipolar(p, n)?;
        }
        Ok(Self { n, patterns, seed })
    }
}

fn check_bipolar(x: &[i8], n: usize) -> Result<(), MemoryError> {
    if x.len() != n {
        return Err(MemoryError::Length { expected: n, got: x.len() });
    }
    match x.iter().position(|&v| v != 1 && v != -1) {
        Some(index) => Err(MemoryError::NotBipolar { index, value: x[index] }),
        None => Ok(()),
    }
}

/// Symmetric weight matrix with zero diagonal, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hopfield {
    pub n: usize,
    pub w: Vec<f64>,
    /// Patterns that repeated an earlier one when the matrix was stored.
    pub duplicate_patterns: usize,
}

impl Hopfield {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    /// `E = -1/2 x^T W x`.
    pub fn energy(&self, x: &[i8]) -> f64 {
        energy_of(&self.w, self.n, x)
    }

    /// Keeps the largest-magnitude off-diagonal pairs so that at most
    /// `density * n * (n - 1)` entries stay nonzero. Ties break toward the
    /// lower index pair.
    pub fn pruned(&self, density: f64) -> Result<Self, MemoryError> {
        if !(0.0..=1.0).contains(&density) {
            return Err(MemoryError::InvalidSetting(format!("density {density} outside [0, 1]")));
        }
        let n = self.n;
        let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let keep = (density * pairs.len() as f64).round() as usize;
        pairs.sort_by(|a, b| self.get(b.0, b.1).abs().total_cmp(&self.get(a.0, a.1).abs()).then(a.cmp(b)));
        let mut w = vec![0.0; n * n];
        for &(i, j) in &pairs[..keep] {
            w[i * n + j] = self.get(i, j);
            w[j * n + i] = self.get(j, i);
        }
        Ok(Self { n, w, duplicate_patterns: self.duplicate_patterns })
    }
}

fn energy_of(w: &[f64], n: usize, x: &[i8]) -> f64 {
    let mut e = 0.0;
    for i in 0..n {
        let row = &w[i * n..(i + 1) * n];
        let h: f64 = row.iter().zip(x).map(|(w, &xj)| w * f64::from(xj)).sum();
        e += f64::from(x[i]) * h;
    }
    -0.5 * e
}

/// `W = (1/n) sum_mu xi^mu xi^mu^T` with the diagonal cleared.
pub fn hebbian_store(set: &PatternSet) -> Result<Hopfield, MemoryError> {
    let n = set.n;
    if n < 2 {
        return Err(MemoryError::TooSmall(n));
    }
    let mut seen = HashSet::new();
    let mut duplicate_patterns = 0;
    let mut w = vec![0.0; n * n];
    for p in &set.patterns {
        check_bipolar(p, n)?;
        if !seen.insert(p.as_slice()) {
            duplicate_patterns += 1;
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[i * n + j] += f64::from(p[i] * p[j]);
                }
            }
        }
    }
    let scale = 1.0 / n as f64;
    w.iter_mut().for_each(|v| *v *= scale);
    Ok(Hopfield { n, w, duplicate_patterns })
}

/// Per-neuron gliotransmitter levels; synapse `(i, j)` sees the mean of `g_i` and `g_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstroModulation {
    pub params: AstrocyteParams,
    pub g: Vec<f64>,
}

impl AstroModulation {
    pub fn uniform(params: AstrocyteParams, n: usize, g: f64) -> Self {
        Self { params, g: vec![g; n] }
    }

    /// Astrocytes cover contiguous blocks of `budget` neurons and sit at the
    /// gliotransmitter fixed point `G r / (1 + G r)`, `r` being the fraction
    /// of active (+1) neurons of the block in `cue`.
    pub fn from_cue(params: AstrocyteParams, cue: &[i8], budget: usize) -> Result<Self, MemoryError> {
        if budget == 0 {
            return Err(MemoryError::InvalidSetting("astrocyte budget must be at least 1".into()));
        }
        let mut g = Vec::with_capacity(cue.len());
        for block in cue.chunks(budget) {
            let r = block.iter().filter(|&&v| v > 0).count() as f64 / block.len() as f64;
            let level = params.release_gain * r / (1.0 + params.release_gain * r);
            g.extend(std::iter::repeat(level).take(block.len()));
        }
        Ok(Self { params, g })
    }

    fn apply(&self, net: &Hopfield) -> Result<Vec<f64>, MemoryError> {
        let n = net.n;
        if self.g.len() != n {
            return Err(MemoryError::Length { expected: n, got: self.g.len() });
        }
        let mut w = net.w.clone();
        for i in 0..n {
            for j in 0..n {
                let g = 0.5 * (self.g[i] + self.g[j]);
                w[i * n + j] *= modulation_factor(&self.params, g)?;
            }
        }
        Ok(w)
    }
}

/// Final state of one recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub state: Vec<i8>,
    pub sweeps: usize,
    /// A full sweep changed nothing before `max_sweeps` ran out.
    pub converged: bool,
    /// Energy of the cue followed by the energy after every sweep, measured
    /// on the (possibly modulated) matrix used for the updates.
    pub energy: Vec<f64>,
}

/// Local fields this close to zero count as ties.
pub const FIELD_TIE: f64 = 1e-12;

/// Asynchronous sign updates in index order. A neuron whose local field is
/// zero (within [`FIELD_TIE`]) keeps its state.
pub fn recall(
    net: &Hopfield,
    cue: &[i8],
    max_sweeps: usize,
    modulation: Option<&AstroModulation>,
) -> Result<Recall, MemoryError> {
    let n = net.n;
    check_bipolar(cue, n)?;
    let modulated;
    let w: &[f64] = match modulation {
        Some(m) => {
            modulated = m.apply(net)?;
            &modulated
        }
        None => &net.w,
    };
    let mut x = cue.to_vec();
    let mut energy = vec![energy_of(w, n, &x)];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for i in 0..n {
            let h: f64 = w[i * n..(i + 1) * n].iter().zip(&x).map(|(w, &xj)| w * f64::from(xj)).sum();
            let next = if h > FIELD_TIE {
                1
            } else if h < -FIELD_TIE {
                -1
            } else {
                x[i]
            };
            if next != x[i] {
                x[i] = next;
                changed = true;
            }
        }
        let e = energy_of(w, n, &x);
        let last = *energy.last().expect("cue energy recorded");
        assert!(e <= last + 1e-9 * (1.0 + last.abs()), "Hopfield energy rose from {last} to {e}");
        energy.push(e);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(Recall { state: x, sweeps, converged, energy })
}

/// `m = (1/n) sum_i x_i xi_i`.
pub fn overlap(state: &[i8], pattern: &[i8]) -> f64 {
    let dot: i64 = state.iter().zip(pattern).map(|(&a, &b)| i64::from(a) * i64::from(b)).sum();
    dot as f64 / state.len() as f64
}

/// Index and overlap of the stored pattern closest to `state`.
pub fn nearest_pattern(state: &[i8], set: &PatternSet) -> Option<(usize, f64)> {
    set.patterns.iter().map(|p| overlap(state, p)).enumerate().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
}

/// Flips exactly `round(noise * n)` distinct positions.
pub fn corrupt(pattern: &[i8], noise: f64, rng: &mut impl Rng) -> Vec<i8> {
    let n = pattern.len();
    let flips = ((noise * n as f64).round() as usize).min(n);
    let mut out = pattern.to_vec();
    for i in index::sample(rng, n, flips) {
        out[i] = -out[i];
    }
    out
}

/// Per-pattern overlaps and the resulting capacity for one pattern set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub overlaps: Vec<f64>,
    /// Mean of the overlaps clamped below at zero.
    pub capacity: f64,
    pub noise: f64,
}

/// How astrocytes modulate recall in a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModulationScheme {
    /// Block coverage with cue-driven gliotransmitter levels (see [`AstroModulation::from_cue`]).
    CueDriven { budget: usize, params: AstrocyteParams },
}

/// Recalls every stored pattern from a corrupted cue.
pub fn evaluate_capacity(
    set: &PatternSet,
    net: &Hopfield,
    noise: f64,
    max_sweeps: usize,
    scheme: Option<&ModulationScheme>,
    seed: u64,
) -> Result<RecallResult, MemoryError> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(MemoryError::InvalidSetting(format!("noise {noise} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overlaps = Vec::with_capacity(set.patterns.len());
    for p in &set.patterns {
        let cue = corrupt(p, noise, &mut rng);
        let modulation = match scheme {
            Some(ModulationScheme::CueDriven { budget, params }) => {
                Some(AstroModulation::from_cue(*params, &cue, *budget)?)
            }
            None => None,
        };
        let r = recall(net, &cue, max_sweeps, modulation.as_ref())?;
        overlaps.push(overlap(&r.state, p));
    }
    let capacity = if overlaps.is_empty() {
        1.0
    } else {
        overlaps.iter().map(|m| m.max(0.0)).sum::<f64>() / overlaps.len() as f64
    };
    Ok(RecallResult { overlaps, capacity, noise })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n: usize,
    pub p_max: usize,
    pub noise: f64,
    pub seeds: u64,
    pub base_seed: u64,
    pub max_sweeps: usize,
    /// Fraction of off-diagonal weights kept after pruning; `None` keeps all.
    pub prune_density: Option<f64>,
    pub modulation: Option<ModulationScheme>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p_max: 25,
            noise: 0.1,
            seeds: 20,
            base_seed: 0x40f1e1d,
            max_sweeps: 50,
            prune_density: None,
            modulation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub n: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub noise: f64,
    pub seed: u64,
    pub capacity: f64,
}

/// Capacity for every load `P = 1..=p_max` and seed, in (P, seed) order.
pub fn capacity_sweep(cfg: &SweepConfig) -> Result<Vec<CapacityRow>, MemoryError> {
    if cfg.p_max < 1 {
        return Err(MemoryError::InvalidSetting("p_max must be at least 1".into()));
    }
    if cfg.seeds == 0 {
        return Err(MemoryError::InvalidSetting("at least one seed is needed".into()));
    }
    let jobs: Vec<(usize, u64)> = (1..=cfg.p_max).flat_map(|p| (0..cfg.seeds).map(move |s| (p, s))).collect();
    jobs.par_iter()
        .map(|&(p, s)| {
            let seed = derive_seed(cfg.base_seed, s);
            let set = PatternSet::random(cfg.n, p, seed)?;
            let mut net = hebbian_store(&set)?;
            if let Some(d) = cfg.prune_density {
                net = net.pruned(d)?;
            }
            let r = evaluate_capacity(
                &set,
                &net,
                cfg.noise,
                cfg.max_sweeps,
                cfg.modulation.as_ref(),
                derive_seed(seed, 1),
            )?;
            Ok(CapacityRow { n: cfg.n, p, noise: cfg.noise, seed: s, capacity: r.capacity })
        })
        .collect()
}

/// Mean capacity per load, indexed by `P - 1`.
pub fn mean_curve(rows: &[CapacityRow]) -> Vec<(usize, f64)> {
    let p_max = rows.iter().map(|r| r.p).max().unwrap_or(0);
    (1..=p_max)
        .filter_map(|p| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.p == p).map(|r| r.capacity).collect();
            (!vals.is_empty()).then(|| (p, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

/// First load whose mean capacity drops below `level`.
pub fn breakdown_load(curve: &[(usize, f64)], level: f64) -> Option<usize> {
    curve.iter().find(|(_, c)| *c < level).map(|(p, _)| *p)
}

/// Columns `n, P, noise, seed, capacity`.
pub fn write_capacity_csv<W: Write>(rows: &[CapacityRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
