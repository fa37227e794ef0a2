use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lifa::config::RunConfig;
use lifa::energy::ArrMode;
use lifa::fault::FaultScope;
use lifa::netio;
use lifa::pipeline::{self, PipelineError, RunReport};

#[derive(Parser)]
#[command(
    name = "lifa",
    version,
    about = "Spiking networks with astrocyte self-repair: build, fault, place and benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory; overrides LIFA_OUT_DIR and the config's output_dir.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FaultArgs {
    /// Faults per plan.
    #[arg(long)]
    faults: Option<usize>,
    #[arg(long)]
    fault_seed: Option<u64>,
    /// `whole`, `layer:L`, `cluster:C` or `cluster:C:layer:L`.
    #[arg(long, value_parser = parse_scope)]
    fault_scope: Option<FaultScope>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arr {
    Off,
    Account,
    Dynamics,
}

impl From<Arr> for ArrMode {
    fn from(a: Arr) -> Self {
        match a {
            Arr::Off => ArrMode::Off,
            Arr::Account => ArrMode::Account,
            Arr::Dynamics => ArrMode::Dynamics,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build (or import) the network and write network.bin and network.json.
    Build {
        #[command(flatten)]
        common: Common,
        /// Import weights from a binary container or layered matrix text file.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Run astrocyte placement and write the probe log.
    Place {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        faults: FaultArgs,
    },
    /// Paired fault campaign: no astrocytes versus astrocytes with repair.
    FaultBench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        faults: FaultArgs,
    },
    /// Hopfield capacity sweep, plain and astrocyte-modulated.
    Membench {
        #[command(flatten)]
        common: Common,
    },
    /// Mesh routing under node faults for every routing mode.
    RouteBench {
        #[command(flatten)]
        common: Common,
    },
    /// Energy of a baseline run versus an ARR run.
    EnergyBench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        arr: Option<Arr>,
    },
    /// Full pipeline: every enabled stage plus summary.json.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        faults: FaultArgs,
        #[arg(long, value_enum)]
        arr: Option<Arr>,
    },
    /// Turn one or more summary.json files into per-figure CSVs.
    ExportPlots {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(short, long, default_value = "plots")]
        out: PathBuf,
    },
}

fn parse_scope(s: &str) -> Result<FaultScope, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<usize>().map_err(|e| format!("bad index `{p}` in scope `{s}`: {e}"));
    match parts.as_slice() {
        ["whole"] => Ok(FaultScope::WholeNetwork),
        ["layer", l] => Ok(FaultScope::Layer { layer: num(l)? }),
        ["cluster", c] => Ok(FaultScope::Cluster { cluster: num(c)? }),
        ["cluster", c, "layer", l] => Ok(FaultScope::ClusterLayer { cluster: num(c)?, layer: num(l)? }),
        _ => Err(format!("unknown scope `{s}`; expected whole, layer:L, cluster:C or cluster:C:layer:L")),
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("stage `config` failed for {}", path.display()))?,
        None => RunConfig::default(),
    };
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os("LIFA_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&out).with_context(|| format!("stage `config` failed: cannot create {}", out.display()))?;
    Ok((cfg, out))
}

fn apply_faults(cfg: &mut RunConfig, f: &FaultArgs) -> Result<()> {
    if let Some(n) = f.faults {
        cfg.faults.n_r = Some(n);
        cfg.placement.n_r = n;
    }
    if let Some(s) = f.fault_seed {
        cfg.faults.seed = s;
        cfg.placement.seed = s;
    }
    if let Some(scope) = f.fault_scope {
        cfg.faults.scope = scope;
    }
    cfg.validate().context("stage `config` failed")?;
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build { common, import } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(path) = import {
                cfg.network.weights = Some(path.display().to_string());
            }
            let spec = pipeline::build_network(&cfg)?;
            netio::save_binary(&spec, &out.join("network.bin")).map_err(|e| stage("build", e))?;
            let desc = netio::descriptor(&spec);
            pipeline::write_json(&desc, &out.join("network.json"), "build")?;
            print_json(&desc)
        }
        Command::Place { common, faults } => {
            let (mut cfg, out) = load(&common)?;
            apply_faults(&mut cfg, &faults)?;
            cfg.placement.enabled = true;
            let base = pipeline::build_network(&cfg)?;
            let (_, result) = pipeline::astrocyte_network(&cfg, &base)?;
            let result = result.expect("placement enabled");
            pipeline::write_placement(&result, &out)?;
            println!(
                "placed {} astrocytes over {} cluster layers (a0 = {:.4}, threshold = {:.4})",
                result.astrocytes_placed(),
                result.layers.len(),
                result.a0,
                result.a_th
            );
            Ok(())
        }
        Command::FaultBench { common, faults } => {
            let (mut cfg, out) = load(&common)?;
            apply_faults(&mut cfg, &faults)?;
            let base = pipeline::build_network(&cfg)?;
            let (astro, _) = pipeline::astrocyte_network(&cfg, &base)?;
            let bench = pipeline::fault_bench(&cfg, &base, &astro)?;
            pipeline::write_fault_bench_csv(&bench, &out.join("fault_bench.csv"))?;
            let summary = pipeline::summarize_faults(&bench)?;
            pipeline::write_json(&summary, &out.join("fault_tolerance.json"), "faults")?;
            print_json(&summary)
        }
        Command::Membench { common } => {
            let (cfg, out) = load(&common)?;
            let (plain, modulated) = pipeline::memory_bench(&cfg)?;
            pipeline::write_memory(&plain, &modulated, &out)?;
            let summary = pipeline::summarize_memory(&cfg, &plain, &modulated);
            pipeline::write_json(&summary, &out.join("memory.json"), "memory")?;
            print_json(&summary)
        }
        Command::RouteBench { common } => {
            let (cfg, out) = load(&common)?;
            let base = pipeline::build_network(&cfg)?;
            let rows = pipeline::route_bench(&cfg, &base)?;
            pipeline::write_routing(&rows, &out.join("routing.csv"))?;
            let summary = lifa::routing::summarize(&rows);
            pipeline::write_json(&summary, &out.join("routing.json"), "routing")?;
            print_json(&summary)
        }
        Command::EnergyBench { common, arr } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(a) = arr {
                cfg.energy.arr = a.into();
            }
            let base = pipeline::build_network(&cfg)?;
            let (astro, _) = pipeline::astrocyte_network(&cfg, &base)?;
            let cmp = pipeline::energy_bench(&cfg, &astro)?;
            pipeline::write_energy(&cmp, &out.join("energy.csv"))?;
            let summary = pipeline::EnergySummary::from(&cmp);
            pipeline::write_json(&summary, &out.join("energy.json"), "energy")?;
            print_json(&summary)
        }
        Command::RunAll { common, faults, arr } => {
            let (mut cfg, out) = load(&common)?;
            apply_faults(&mut cfg, &faults)?;
            if let Some(a) = arr {
                cfg.energy.arr = a.into();
            }
            let report = pipeline::run_experiment(&cfg, &out)?;
            print!("{}", pipeline::summary_json(&report));
            Ok(())
        }
        Command::ExportPlots { reports, out } => {
            let reports = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            for path in pipeline::emit_plot_data(&reports, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn stage(stage: &'static str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError { stage, message: e.to_string() }
}

fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("stage `report` failed: cannot read {}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(r) => Ok(r),
        Err(e) => bail!("stage `report` failed: {} is not a run summary: {e}", path.display()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
