//! Experiment orchestration and reporting.
//!
//! [`run_experiment`] builds the network, equips the astrocyte arm, runs the
//! paired fault campaign and the enabled benches, and writes every artifact
//! plus `summary.json` into the output directory. All randomness comes from
//! seeds in the config, so identical configs give byte-identical outputs.
//! Wall-clock timings go to `timing.json`, which is the one file that varies
//! between runs.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::energy::EnergyTotals;
use crate::fault::{
    derive_seed, generate_plan_with, trial_accuracy, AccuracyOracle, FaultMode, FaultScope, FaultSettings, FaultedView,
};
use crate::memory::{
    breakdown_load, capacity_sweep, mean_curve, write_capacity_csv, CapacityRow, ModulationScheme, SweepConfig,
};
use crate::netio;
use crate::network::{assign_clusters, build_feedforward, cover_layers, CountMode, NetworkSpec, Topology};
use crate::oracle::SurrogateOracle;
use crate::placement::{disable_unused, place_astrocytes, usage_from_reports, PlacementProblem, PlacementResult};
use crate::repair::{fault_tolerance, network_recovery, write_recovery_csv, FaultToleranceMetric, NetworkRecovery};
use crate::routing::{
    cluster_fanout, evaluate_modes, summarize, write_routing_csv, Mesh, RoutingRow, RoutingSummary, Traffic,
};
use crate::sim::{compare_arr, write_energy_csv, ArrComparison, AstrocyteReport, SimConfig, Simulator};

/// A failed pipeline stage.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("stage `{stage}` failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn at<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError { stage, message: e.to_string() }
}

/// Builds the configured network with its cluster map and parameters.
pub fn build_network(cfg: &RunConfig) -> Result<NetworkSpec, PipelineError> {
    let n = &cfg.network;
    let mut spec = match &n.weights {
        Some(path) => {
            let path = Path::new(path);
            let mut spec = netio::import_weights(path, netio::WeightFormat::from_path(path)).map_err(at("build"))?;
            spec.topology.count_mode = n.count_mode;
            spec
        }
        None => {
            let topology = Topology { layer_sizes: n.topology.clone(), count_mode: n.count_mode };
            build_feedforward(topology, n.density, n.weight_init, n.seed).map_err(at("build"))?
        }
    };
    spec.neuron_params = cfg.dynamics.neuron;
    spec.astrocyte_params = cfg.dynamics.astrocyte;
    spec.roster.neurons_per_astrocyte_budget = n.astrocyte_budget;
    if n.clusters > 1 {
        let clusters = assign_clusters(&spec, n.clusters, n.cluster_policy).map_err(at("build"))?;
        spec = spec.with_clusters(clusters);
    }
    Ok(spec)
}

/// Unidirectional faults per plan.
pub fn fault_count(cfg: &RunConfig, spec: &NetworkSpec) -> usize {
    cfg.faults.n_r.unwrap_or_else(|| {
        (cfg.faults.synapse_fraction * spec.synapse_count_as(CountMode::Unidirectional) as f64).ceil() as usize
    })
}

/// The astrocyte arm: iterative placement or full coverage of the chosen layers.
pub fn astrocyte_network(
    cfg: &RunConfig,
    base: &NetworkSpec,
) -> Result<(NetworkSpec, Option<PlacementResult>), PipelineError> {
    let p = &cfg.placement;
    if p.enabled {
        let oracle = SurrogateOracle::new(base, cfg.task_config(cfg.sim_config()));
        let problem = PlacementProblem {
            n_r: p.n_r,
            a_th: p.a_th,
            trials: p.trials,
            max_astrocytes_per_layer: p.max_astrocytes_per_layer,
            budget: cfg.network.astrocyte_budget,
            seed: p.seed,
            mode: FaultMode::Simultaneous,
            persistence: p.persistence,
            settings: cfg.faults.settings,
            ..PlacementProblem::new(base.clone())
        };
        let result = place_astrocytes(&problem, &oracle).map_err(at("astrocytes"))?;
        let spec = result.spec.clone().expect("placement returns the augmented model");
        Ok((spec, Some(result)))
    } else {
        let layers: Vec<usize> =
            p.cover_layers.clone().unwrap_or_else(|| (1..base.topology.layer_sizes.len()).collect());
        if let Some(&l) = layers.iter().find(|&&l| l >= base.topology.layer_sizes.len()) {
            return Err(PipelineError { stage: "astrocytes", message: format!("cover layer {l} does not exist") });
        }
        let spec = cover_layers(base, &layers, cfg.network.astrocyte_budget).map_err(at("astrocytes"))?;
        Ok((spec, None))
    }
}

/// One fault plan scored in both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTrial {
    pub trial: usize,
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub astrocyte_accuracy: f64,
    /// `min(a / a0, 1)` per arm.
    pub baseline_retained: f64,
    pub astrocyte_retained: f64,
}

/// Paired comparison of a baseline arm and an astrocyte arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedBench {
    pub n_r: usize,
    pub a0_baseline: f64,
    pub a0_astrocyte: f64,
    pub trials: Vec<PairedTrial>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl PairedBench {
    pub fn mean_baseline_accuracy(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.baseline_accuracy))
    }

    pub fn mean_astrocyte_accuracy(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.astrocyte_accuracy))
    }

    pub fn mean_improvement(&self) -> f64 {
        mean(self.trials.iter().map(|t| t.astrocyte_retained - t.baseline_retained))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn retained(a: f64, a0: f64) -> f64 {
    if a0 > 0.0 {
        (a / a0).min(1.0)
    } else {
        0.0
    }
}

/// Arm of a paired fault campaign.
pub struct Arm<'a> {
    pub spec: &'a NetworkSpec,
    pub oracle: &'a dyn AccuracyOracle,
}

/// Draws one plan per trial on `baseline.spec` and scores it in both arms.
/// Both networks must share topology and edges.
#[allow(clippy::too_many_arguments)]
pub fn paired_fault_bench(
    baseline: Arm<'_>,
    astrocyte: Arm<'_>,
    n_r: usize,
    trials: usize,
    seed: u64,
    scope: FaultScope,
    mode: FaultMode,
    settings: &FaultSettings,
) -> Result<PairedBench, String> {
    if baseline.spec.connectivity != astrocyte.spec.connectivity || baseline.spec.topology != astrocyte.spec.topology {
        return Err("the two arms must share topology and connectivity".into());
    }
    let a0_baseline = baseline.oracle.baseline(baseline.spec)?;
    let a0_astrocyte = astrocyte.oracle.baseline(astrocyte.spec)?;
    let trials: Vec<PairedTrial> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = derive_seed(seed, trial as u64);
            let plan = generate_plan_with(baseline.spec, n_r, scope, s, settings).map_err(|e| e.to_string())?;
            let b = trial_accuracy(baseline.spec, baseline.oracle, &plan, mode)?;
            let a = trial_accuracy(astrocyte.spec, astrocyte.oracle, &plan, mode)?;
            Ok(PairedTrial {
                trial,
                seed: s,
                baseline_accuracy: b,
                astrocyte_accuracy: a,
                baseline_retained: retained(b, a0_baseline),
                astrocyte_retained: retained(a, a0_astrocyte),
            })
        })
        .collect::<Result<_, String>>()?;
    let wins = trials.iter().filter(|t| t.astrocyte_retained > t.baseline_retained).count();
    let losses = trials.iter().filter(|t| t.astrocyte_retained < t.baseline_retained).count();
    let ties = trials.len() - wins - losses;
    Ok(PairedBench { n_r, a0_baseline, a0_astrocyte, trials, wins, losses, ties })
}

/// Fault-tolerance figures for both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultToleranceSummary {
    pub n_r: usize,
    pub trials: usize,
    /// `None` when the arm's fault-free output is silent.
    pub baseline: Option<FaultToleranceMetric>,
    pub astrocyte: Option<FaultToleranceMetric>,
    /// Computed from the retained-accuracy variant of both arms; a silent
    /// baseline retains 0%.
    pub recovery: Option<NetworkRecovery>,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

/// Runs the configured campaign: no astrocytes and no controller versus the astrocyte arm.
pub fn fault_bench(cfg: &RunConfig, base: &NetworkSpec, astro: &NetworkSpec) -> Result<PairedBench, PipelineError> {
    let sim = cfg.sim_config();
    let astro_oracle = SurrogateOracle::new(astro, cfg.task_config(sim));
    let base_oracle = astro_oracle.with_sim(sim.without_repair());
    let plain = base.without_astrocytes();
    let f = &cfg.faults;
    paired_fault_bench(
        Arm { spec: &plain, oracle: &base_oracle },
        Arm { spec: astro, oracle: &astro_oracle },
        fault_count(cfg, base),
        f.trials,
        f.seed,
        f.scope,
        f.mode,
        &f.settings,
    )
    .map_err(at("faults"))
}

pub fn summarize_faults(bench: &PairedBench) -> Result<FaultToleranceSummary, PipelineError> {
    let metric = |a0: f64, a: f64| -> Result<Option<FaultToleranceMetric>, PipelineError> {
        if a0 == 0.0 {
            return Ok(None);
        }
        fault_tolerance(a0, a).map(Some).map_err(at("faults"))
    };
    let baseline = metric(bench.a0_baseline, bench.mean_baseline_accuracy())?;
    let astrocyte = metric(bench.a0_astrocyte, bench.mean_astrocyte_accuracy())?;
    let recovery = match &astrocyte {
        Some(a) => {
            let b = baseline.as_ref().map_or(0.0, |b| b.retained_percent);
            Some(network_recovery(b, a.retained_percent).map_err(at("faults"))?)
        }
        None => None,
    };
    Ok(FaultToleranceSummary {
        n_r: bench.n_r,
        trials: bench.trials.len(),
        baseline,
        astrocyte,
        recovery,
        wins: bench.wins,
        losses: bench.losses,
        ties: bench.ties,
    })
}

/// Fault-free run of the astrocyte arm over the task patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityReport {
    pub steps: u64,
    pub simulated_seconds: f64,
    pub mean_rate_hz: f64,
    pub covered_rate_hz: Option<f64>,
    pub astrocytes: Vec<AstrocyteReport>,
}

/// Cycles through the task patterns for the warm-up, then measures rates
/// over one presentation of every pattern.
pub fn activity_run(
    cfg: &RunConfig,
    spec: &NetworkSpec,
    recovery_csv: Option<&Path>,
) -> Result<ActivityReport, PipelineError> {
    let sim_cfg = cfg.sim_config();
    let task = SurrogateOracle::new(spec, cfg.task_config(sim_cfg));
    let view = FaultedView::new(spec);
    let mut sim = Simulator::new(&view, sim_cfg).map_err(at("activity"))?;
    let inputs = &task.task().inputs;
    let per = cfg.task.steps_per_pattern;
    for t in 0..cfg.task.warmup_steps {
        sim.step(&inputs[(t / per) as usize % inputs.len()]).map_err(at("activity"))?;
    }
    sim.reset_counts();
    for x in inputs {
        sim.run_constant(x, per).map_err(at("activity"))?;
    }
    let measured = per * inputs.len() as u64;
    let steps = cfg.task.warmup_steps + measured;
    let covered = sim.covered_neurons();
    if let (Some(path), Some(policy)) = (recovery_csv, &sim_cfg.repair) {
        let file = fs::File::create(path).map_err(at("activity"))?;
        write_recovery_csv(&sim.recovery_record(), policy, BufWriter::new(file)).map_err(at("activity"))?;
    }
    Ok(ActivityReport {
        steps,
        simulated_seconds: steps as f64 * sim_cfg.dt / 1000.0,
        mean_rate_hz: sim.mean_rate_hz(0..spec.total_neurons(), measured),
        covered_rate_hz: (!covered.is_empty()).then(|| sim.mean_rate_hz(covered.iter().copied(), measured)),
        astrocytes: sim.astrocyte_reports(),
    })
}

pub fn route_bench(cfg: &RunConfig, spec: &NetworkSpec) -> Result<Vec<RoutingRow>, PipelineError> {
    let r = &cfg.routing;
    let spec = match r.clusters {
        Some(k) if k != spec.clusters.k => {
            let clusters = assign_clusters(spec, k, cfg.network.cluster_policy).map_err(at("routing"))?;
            spec.clone().with_clusters(clusters)
        }
        _ => spec.clone(),
    };
    let mesh = Mesh::new(r.width, r.height).map_err(at("routing"))?;
    let seeds: Vec<u64> = (0..r.seeds).map(|s| derive_seed(r.base_seed, s)).collect();
    evaluate_modes(&mesh, &Traffic::Clusters(cluster_fanout(&spec)), &r.fault_fractions, &seeds).map_err(at("routing"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySummary {
    pub n: usize,
    pub noise: f64,
    /// Seed-mean capacity per load, `P = 1..=p_max`.
    pub capacity: Vec<f64>,
    pub capacity_astrocyte: Vec<f64>,
    /// First load with mean capacity below 0.9.
    pub breakdown_load: Option<usize>,
    pub breakdown_load_astrocyte: Option<usize>,
}

pub fn memory_bench(cfg: &RunConfig) -> Result<(Vec<CapacityRow>, Vec<CapacityRow>), PipelineError> {
    let plain = SweepConfig { modulation: None, ..cfg.memory.sweep.clone() };
    let modulated = SweepConfig {
        modulation: Some(ModulationScheme::CueDriven {
            budget: cfg.memory.astrocyte_budget,
            params: cfg.dynamics.astrocyte,
        }),
        ..cfg.memory.sweep.clone()
    };
    Ok((capacity_sweep(&plain).map_err(at("memory"))?, capacity_sweep(&modulated).map_err(at("memory"))?))
}

pub fn summarize_memory(cfg: &RunConfig, plain: &[CapacityRow], astro: &[CapacityRow]) -> MemorySummary {
    let (a, b) = (mean_curve(plain), mean_curve(astro));
    MemorySummary {
        n: cfg.memory.sweep.n,
        noise: cfg.memory.sweep.noise,
        capacity: a.iter().map(|x| x.1).collect(),
        capacity_astrocyte: b.iter().map(|x| x.1).collect(),
        breakdown_load: breakdown_load(&a, 0.9),
        breakdown_load_astrocyte: breakdown_load(&b, 0.9),
    }
}

pub fn energy_bench(cfg: &RunConfig, spec: &NetworkSpec) -> Result<ArrComparison, PipelineError> {
    let e = &cfg.energy;
    let view = FaultedView::new(spec);
    compare_arr(
        &view,
        SimConfig { gate_after: e.gate_after, ..cfg.sim_config() },
        e.arr,
        &e.coefficients,
        &e.stimulus,
        &e.seeds,
    )
    .map_err(at("energy"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub arr_mode: crate::energy::ArrMode,
    pub baseline: EnergyTotals,
    pub arr: EnergyTotals,
    pub savings: f64,
    pub identical_spikes: bool,
}

impl From<&ArrComparison> for EnergySummary {
    fn from(cmp: &ArrComparison) -> Self {
        Self {
            arr_mode: cmp.mode,
            baseline: cmp.base_totals,
            arr: cmp.arr_totals,
            savings: cmp.savings,
            identical_spikes: cmp.identical_spikes,
        }
    }
}

/// Headline metrics under the names used for published results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub neurons: usize,
    /// Synapse count under the configured convention.
    pub synapses: usize,
    pub synapse_convention: CountMode,
    pub synapses_unidirectional: usize,
    pub synapses_bidirectional: usize,
    pub network_topology: String,
    /// `100 - fault_tolerance_rate_percent`.
    pub network_recovery_percent: Option<f64>,
    /// Astrocyte-arm retained minus baseline retained accuracy.
    pub network_recovery_difference_percent: Option<f64>,
    /// Retained accuracy of the astrocyte arm.
    pub fault_tolerance_rate_percent: Option<f64>,
    pub fault_tolerance_rate_baseline_percent: Option<f64>,
    /// Signed deviation `(o_fault - o_original) / o_original * 100` of the astrocyte arm.
    pub fault_tolerance_deviation_percent: Option<f64>,
    pub fault_tolerance_deviation_baseline_percent: Option<f64>,
    /// One multiply-accumulate per stored edge per forward pass.
    pub model_complexity_mac: usize,
    pub model_complexity_mac_bidirectional: usize,
    pub average_spike_frequency_hz: f64,
    pub covered_spike_frequency_hz: Option<f64>,
    /// Simulated time of the activity run.
    pub latency_sec: f64,
    /// `neurons / latency_sec`.
    pub throughput_neurons_per_sec: f64,
    pub astrocytes: usize,
    pub astrocytes_disabled: usize,
    pub fault_tolerance: Option<FaultToleranceSummary>,
    pub routing: Option<Vec<RoutingSummary>>,
    pub memory: Option<MemorySummary>,
    pub energy: Option<EnergySummary>,
}

/// Wall-clock measurements (seconds); these vary between runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
    pub total: f64,
    /// Wall time of the fault-free activity run.
    pub latency_wall_sec: f64,
    /// `neurons / latency_wall_sec`.
    pub throughput_wall_neurons_per_sec: f64,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>, stage: &'static str) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError { stage, message: format!("{}: {e}", path.display()) })
}

fn csv_file<F>(path: &Path, stage: &'static str, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(BufWriter<fs::File>) -> Result<(), csv::Error>,
{
    let file =
        fs::File::create(path).map_err(|e| PipelineError { stage, message: format!("{}: {e}", path.display()) })?;
    f(BufWriter::new(file)).map_err(|e| PipelineError { stage, message: format!("{}: {e}", path.display()) })
}

/// `placement_probes.csv` and `placement.json`.
pub fn write_placement(result: &PlacementResult, out: &Path) -> Result<(), PipelineError> {
    let path = out.join("placement_probes.csv");
    let file = fs::File::create(&path)
        .map_err(|e| PipelineError { stage: "astrocytes", message: format!("{}: {e}", path.display()) })?;
    result.write_probe_csv(BufWriter::new(file)).map_err(at("astrocytes"))?;
    write_file(
        &out.join("placement.json"),
        serde_json::to_string_pretty(result).expect("placement result") + "\n",
        "astrocytes",
    )
}

/// One row per trial: `trial, seed, baseline_accuracy, astrocyte_accuracy, baseline_retained, astrocyte_retained`.
pub fn write_fault_bench_csv(bench: &PairedBench, path: &Path) -> Result<(), PipelineError> {
    csv_file(path, "faults", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for trial in &bench.trials {
            csv.serialize(trial)?;
        }
        csv.flush()?;
        Ok(())
    })
}

pub fn write_routing(rows: &[RoutingRow], path: &Path) -> Result<(), PipelineError> {
    csv_file(path, "routing", |w| write_routing_csv(rows, w))
}

/// `memory.csv` for the plain network and `memory_astrocyte.csv` for the modulated one.
pub fn write_memory(plain: &[CapacityRow], modulated: &[CapacityRow], out: &Path) -> Result<(), PipelineError> {
    csv_file(&out.join("memory.csv"), "memory", |w| write_capacity_csv(plain, w))?;
    csv_file(&out.join("memory_astrocyte.csv"), "memory", |w| write_capacity_csv(modulated, w))
}

pub fn write_energy(cmp: &ArrComparison, path: &Path) -> Result<(), PipelineError> {
    csv_file(path, "energy", |w| write_energy_csv(cmp, w))
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path, stage: &'static str) -> Result<(), PipelineError> {
    write_file(path, serde_json::to_string_pretty(value).map_err(at(stage))? + "\n", stage)
}

/// Runs the whole pipeline and writes its artifacts into `out`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    let mut timing = Timing::default();
    let mut lap = |name: &str, t: Instant| timing.stages.push((name.to_string(), t.elapsed().as_secs_f64()));
    cfg.validate().map_err(at("config"))?;
    fs::create_dir_all(out).map_err(at("config"))?;
    write_file(&out.join("resolved_config.json"), cfg.resolved_json(), "config")?;

    let t = Instant::now();
    let base = build_network(cfg)?;
    write_file(
        &out.join("network.json"),
        serde_json::to_string_pretty(&netio::descriptor(&base)).expect("descriptor"),
        "build",
    )?;
    lap("build", t);

    let t = Instant::now();
    let (mut astro, placement) = astrocyte_network(cfg, &base)?;
    if let Some(p) = &placement {
        write_placement(p, out)?;
    }
    lap("astrocytes", t);

    let t = Instant::now();
    let mut activity = activity_run(cfg, &astro, Some(&out.join("recovery.csv")))?;
    let mut activity_wall = t.elapsed().as_secs_f64();
    let mut disabled = 0;
    if let (Some(p), true) = (placement, cfg.placement.disable_unused) {
        let pruned = disable_unused(p, &usage_from_reports(&activity.astrocytes));
        disabled = pruned.disabled.len();
        astro = pruned.spec.expect("placement keeps the model");
        let rerun = Instant::now();
        activity = activity_run(cfg, &astro, Some(&out.join("recovery.csv")))?;
        activity_wall = rerun.elapsed().as_secs_f64();
    }
    write_file(&out.join("astrocyte_network.bin"), netio::to_bytes(&astro), "activity")?;
    lap("activity", t);

    let t = Instant::now();
    let fault_tolerance = if cfg.faults.enabled {
        let bench = fault_bench(cfg, &base, &astro)?;
        write_fault_bench_csv(&bench, &out.join("fault_bench.csv"))?;
        Some(summarize_faults(&bench)?)
    } else {
        None
    };
    lap("faults", t);

    let t = Instant::now();
    let routing = if cfg.routing.enabled {
        let rows = route_bench(cfg, &base)?;
        write_routing(&rows, &out.join("routing.csv"))?;
        Some(summarize(&rows))
    } else {
        None
    };
    lap("routing", t);

    let t = Instant::now();
    let memory = if cfg.memory.enabled {
        let (plain, modulated) = memory_bench(cfg)?;
        write_memory(&plain, &modulated, out)?;
        Some(summarize_memory(cfg, &plain, &modulated))
    } else {
        None
    };
    lap("memory", t);

    let t = Instant::now();
    let energy = if cfg.energy.enabled {
        let cmp = energy_bench(cfg, &astro)?;
        write_energy(&cmp, &out.join("energy.csv"))?;
        Some(EnergySummary::from(&cmp))
    } else {
        None
    };
    lap("energy", t);

    let uni = base.synapse_count_as(CountMode::Unidirectional);
    let bi = base.synapse_count_as(CountMode::Bidirectional);
    let ft = fault_tolerance.as_ref();
    let report = RunReport {
        neurons: base.total_neurons(),
        synapses: base.synapse_count(),
        synapse_convention: base.topology.count_mode,
        synapses_unidirectional: uni,
        synapses_bidirectional: bi,
        network_topology: base.topology.layer_sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
        network_recovery_percent: ft.and_then(|f| f.recovery).map(|r| r.complement_percent),
        network_recovery_difference_percent: ft.and_then(|f| f.recovery).map(|r| r.difference_percent),
        fault_tolerance_rate_percent: ft.and_then(|f| f.astrocyte).map(|m| m.retained_percent),
        fault_tolerance_rate_baseline_percent: ft.and_then(|f| f.baseline).map(|m| m.retained_percent),
        fault_tolerance_deviation_percent: ft.and_then(|f| f.astrocyte).map(|m| m.ft_percent),
        fault_tolerance_deviation_baseline_percent: ft.and_then(|f| f.baseline).map(|m| m.ft_percent),
        model_complexity_mac: uni,
        model_complexity_mac_bidirectional: bi,
        average_spike_frequency_hz: activity.mean_rate_hz,
        covered_spike_frequency_hz: activity.covered_rate_hz,
        latency_sec: activity.simulated_seconds,
        throughput_neurons_per_sec: base.total_neurons() as f64 / activity.simulated_seconds,
        astrocytes: astro.roster.enabled().count(),
        astrocytes_disabled: disabled,
        fault_tolerance,
        routing,
        memory,
        energy,
    };
    write_file(&out.join("summary.json"), summary_json(&report), "report")?;
    emit_plot_data(std::slice::from_ref(&report), &out.join("plots"))?;
    timing.total = started.elapsed().as_secs_f64();
    timing.latency_wall_sec = activity_wall;
    timing.throughput_wall_neurons_per_sec = base.total_neurons() as f64 / activity_wall;
    write_file(&out.join("timing.json"), serde_json::to_string_pretty(&timing).expect("timing"), "report")?;
    Ok(report)
}

pub fn summary_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// Writes one CSV per figure family into `dir`:
///
/// * `energy.csv`: `run, arm, category, value`
/// * `routing.csv`: `run, mode, condition, delivered, hops, latency`
/// * `fault_tolerance.csv`: `run, arm, ft_percent, retained_percent`
///
/// `run` is the report's position in `reports`; `condition` is the node
/// fault fraction.
pub fn emit_plot_data(reports: &[RunReport], dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    if reports.is_empty() {
        return Err(PipelineError { stage: "report", message: "no reports to plot".into() });
    }
    fs::create_dir_all(dir).map_err(at("report"))?;
    let energy = dir.join("energy.csv");
    csv_file(&energy, "report", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["run", "arm", "category", "value"])?;
        for (i, r) in reports.iter().enumerate() {
            if let Some(e) = &r.energy {
                for (arm, totals) in [("baseline", &e.baseline), ("arr", &e.arr)] {
                    for (category, value) in totals.categories().into_iter().chain([("total", totals.total)]) {
                        csv.write_record([i.to_string(), arm.into(), category.into(), value.to_string()])?;
                    }
                }
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let routing = dir.join("routing.csv");
    csv_file(&routing, "report", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["run", "mode", "condition", "delivered", "hops", "latency"])?;
        for (i, r) in reports.iter().enumerate() {
            for s in r.routing.iter().flatten() {
                csv.write_record([
                    i.to_string(),
                    s.mode.as_str().into(),
                    s.fault_fraction.to_string(),
                    s.delivered.to_string(),
                    s.total_hops.to_string(),
                    s.max_latency.to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let ft = dir.join("fault_tolerance.csv");
    csv_file(&ft, "report", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["run", "arm", "ft_percent", "retained_percent"])?;
        for (i, r) in reports.iter().enumerate() {
            if let Some(f) = &r.fault_tolerance {
                for (arm, m) in [("baseline", &f.baseline), ("astrocyte", &f.astrocyte)] {
                    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                    let (ft, kept) = (cell(m.map(|m| m.ft_percent)), cell(m.map(|m| m.retained_percent)));
                    csv.write_record([i.to_string(), arm.into(), ft, kept])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    Ok(vec![energy, routing, ft])
}
