use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[network]
topology = [12, 8, 4]
astrocyte_budget = 4
clusters = 2

[task]
patterns = 6
warmup_steps = 200
steps_per_pattern = 100

[faults]
trials = 3

[routing]
width = 4
height = 4
clusters = 4
fault_fractions = [0.0, 0.2]
seeds = 3

[memory.sweep]
n = 20
p_max = 4
seeds = 2

[energy]
seeds = [1]

[energy.stimulus]
steps = 200
bucket_steps = 100
"#;

fn lifa(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lifa"));
    cmd.args(args).env_remove("LIFA_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("LIFA_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

#[test]
fn run_all_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&lifa(&["run-all", "-c", &cfg, "-o", a.to_str().unwrap()], None));
    ok(&lifa(&["run-all", "-c", &cfg, "-o", b.to_str().unwrap()], None));
    for file in ["summary.json", "fault_bench.csv", "routing.csv", "memory.csv", "energy.csv", "resolved_config.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
}

#[test]
fn summary_carries_the_table_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let stdout = ok(&lifa(&["run-all", "-c", &cfg, "-o", dir.path().join("o").to_str().unwrap()], None));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    for key in [
        "neurons",
        "synapses",
        "network_topology",
        "network_recovery_percent",
        "fault_tolerance_rate_percent",
        "model_complexity_mac",
        "average_spike_frequency_hz",
        "latency_sec",
        "throughput_neurons_per_sec",
        "energy",
    ] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    assert_eq!(v["neurons"], 24);
    assert_eq!(v["synapses"], 2 * (12 * 8 + 8 * 4));
    assert_eq!(v["model_complexity_mac"], 12 * 8 + 8 * 4);
    let product = v["throughput_neurons_per_sec"].as_f64().unwrap() * v["latency_sec"].as_f64().unwrap();
    assert!((product - 24.0).abs() < 1e-9);
}

#[test]
fn env_var_sets_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let target = dir.path().join("from-env");
    ok(&lifa(&["build", "-c", &cfg], Some(&target)));
    assert!(target.join("network.bin").is_file());
    assert!(target.join("network.json").is_file());
}

#[test]
fn unknown_key_fails_in_config_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[faults]\ntrails = 3\n").unwrap();
    let out = lifa(&["run-all", "-c", path.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config") && err.contains("trails"), "{err}");
}

#[test]
fn failing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("layers.toml");
    fs::write(&path, "[network]\ntopology = [4, 3]\n[placement]\ncover_layers = [5]\n").unwrap();
    let out = lifa(&["fault-bench", "-c", path.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("astrocytes"), "{err}");
}

#[test]
fn bad_scope_is_rejected_by_the_parser() {
    let out = lifa(&["fault-bench", "--fault-scope", "row:3"], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row:3"));
}

#[test]
fn text_weights_import() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.txt");
    fs::write(&weights, "topology 2 2\n0.5 0.0\n-0.25 1.0\n").unwrap();
    let stdout = ok(&lifa(&["build", "--import", weights.to_str().unwrap(), "-o", dir.path().to_str().unwrap()], None));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["synapses_unidirectional"], 3);
}

#[test]
fn fault_bench_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("fb");
    let stdout = ok(&lifa(
        &[
            "fault-bench",
            "-c",
            &cfg,
            "-o",
            out.to_str().unwrap(),
            "--faults",
            "7",
            "--fault-seed",
            "9",
            "--fault-scope",
            "layer:1",
        ],
        None,
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["n_r"], 7);
    let csv = fs::read_to_string(out.join("fault_bench.csv")).unwrap();
    assert!(csv.starts_with("trial,seed,baseline_accuracy,astrocyte_accuracy"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn energy_bench_with_accounting_keeps_spikes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let stdout = ok(&lifa(&["energy-bench", "-c", &cfg, "-o", dir.path().to_str().unwrap(), "--arr", "account"], None));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["identical_spikes"], true);
    assert!(v["arr"]["total"].as_f64().unwrap() <= v["baseline"]["total"].as_f64().unwrap());
}

#[test]
fn export_plots_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&lifa(&["run-all", "-c", &cfg, "-o", run.to_str().unwrap()], None));
    let plots = dir.path().join("plots");
    let summary = run.join("summary.json");
    ok(&lifa(
        &["export-plots", summary.to_str().unwrap(), summary.to_str().unwrap(), "-o", plots.to_str().unwrap()],
        None,
    ));
    let header = |f: &str| fs::read_to_string(plots.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("energy.csv"), "run,arm,category,value");
    assert_eq!(header("routing.csv"), "run,mode,condition,delivered,hops,latency");
    assert_eq!(header("fault_tolerance.csv"), "run,arm,ft_percent,retained_percent");
    let ft = fs::read_to_string(plots.join("fault_tolerance.csv")).unwrap();
    assert_eq!(ft.lines().count(), 5);
    assert!(ft.contains(",baseline,") && ft.contains(",astrocyte,"));
}

#[test]
fn other_benches_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = dir.path().to_str().unwrap();
    ok(&lifa(&["membench", "-c", &cfg, "-o", o], None));
    ok(&lifa(&["route-bench", "-c", &cfg, "-o", o], None));
    ok(&lifa(&["place", "-c", &cfg, "-o", o, "--faults", "4"], None));
    for f in [
        "memory.csv",
        "memory_astrocyte.csv",
        "memory.json",
        "routing.csv",
        "routing.json",
        "placement_probes.csv",
        "placement.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}
