use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use im_cli::commands::Source;
use im_cli::config::ExperimentConfig;
use im_cli::pipeline;
use im_cli::presets::preset;
use im_core::interchange::{export_interchange, import_interchange};
use im_core::toys::layered_toy;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_im-pomdp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// A cheap variant of the R_RI50-R_FR20 experiment.
fn small_config() -> ExperimentConfig {
    let mut cfg = preset("R_RI50-R_FR20").unwrap();
    cfg.name = "small".into();
    cfg.discretization.trajectories = 20_000;
    cfg.evaluation.episodes = 300;
    cfg.solver.time_budget = 600.0;
    cfg.solver.max_backups = Some(40);
    cfg.infinite_horizon.clear();
    cfg.heuristics.families[0].values = vec![5.0, 10.0, 15.0];
    cfg.heuristics.families[1].values = vec![5e-4, 1e-3, 2e-3];
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let p = dir.join("experiment.toml");
    fs::write(&p, cfg.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn toy_export_round_trips_through_import() {
    let dir = tempfile::tempdir().unwrap();
    let m = layered_toy(3, 4);
    let text = export_interchange(&m).unwrap();
    assert!(text.contains("discount: 0.9\n"));
    let file = dir.path().join("toy.pomdp");
    fs::write(&file, &text).unwrap();
    let out = run(&["import", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("7 states"));
    assert_eq!(import_interchange(&fs::read_to_string(&file).unwrap()).unwrap(), m);
}

#[test]
fn traditional_model_export_keeps_initial_belief() {
    let cfg = small_config();
    let dbn = pipeline::compile(&cfg, None, None).unwrap();
    let m = pipeline::assemble(&cfg, &dbn, false).unwrap();
    assert_eq!(m.model.num_states, 930);
    let text = export_interchange(&m.model).unwrap();
    assert!(text.starts_with("discount: 0.95\n"));
    let back = import_interchange(&text).unwrap();
    assert_eq!(back.initial_belief, m.model.initial_belief);
    assert!(back.validate().is_empty());
    assert_eq!(back, m.model);
}

#[test]
fn export_subcommand_writes_an_importable_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let target = dir.path().join("m.pomdp");
    let out = run(&[
        "export", "--config", &cfg, "--infinite", "--file", target.to_str().unwrap(), "-o",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["import", target.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("930 states"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["reproduce", "R_RI99-R_FR1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "horizon = \"thirty\"\n").unwrap();
    let out = run(&["build", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed config"));

    let mut cfg = small_config();
    cfg.assemble.state_budget = 1_000;
    let path = write_config(dir.path(), &cfg);
    let out = run(&["build", "--config", &path, "-o", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("state budget") && err.contains("hint"), "{err}");

    let broken = dir.path().join("broken.pomdp");
    fs::write(&broken, "discount: 0.9\nvalues: reward\nstates: 2\nactions: 1\nobservations: 1\nT: 0 : 0 : 9 1\n").unwrap();
    let out = run(&["import", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 6"));

    let out = bin()
        .args(["import", broken.to_str().unwrap()])
        .env("IM_POMDP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_directories_reproduce_byte_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let go = |sub: &str, tag: &str| {
        let out_dir = dir.path().join(format!("{sub}-{tag}"));
        let out = run(&[sub, "--config", &cfg, "-o", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    for (sub, files) in [
        ("solve", vec!["trace.csv"]),
        ("heuristics", vec!["heuristics.csv"]),
    ] {
        let (a, b) = (go(sub, "a"), go(sub, "b"));
        for f in files {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{sub}/{f}");
        }
        // the recorded configuration reproduces the run
        let again = dir.path().join(format!("{sub}-c"));
        let out = run(&[sub, "--config", a.join("config.toml").to_str().unwrap(), "-o", again.to_str().unwrap()]);
        assert!(out.status.success());
        assert_eq!(fs::read(a.join("config.toml")).unwrap(), fs::read(again.join("config.toml")).unwrap());
    }
    let policy = dir.path().join("solve-a/policy.bin");
    let mut outs = Vec::new();
    for tag in ["x", "y"] {
        let d = dir.path().join(format!("eval-{tag}"));
        let out = run(&["evaluate", "--config", &cfg, "--policy", policy.to_str().unwrap(), "-o", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outs.push(fs::read(d.join("evaluation.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    // a policy for the stationary model does not fit the time-augmented one
    let out = run(&[
        "evaluate", "--config", &cfg, "--infinite", "--policy", policy.to_str().unwrap(), "-o",
        dir.path().join("eval-z").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reproduce_reports_relative_differences_to_the_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let source = Source {
        config: Some(write_config(dir.path(), &small_config()).into()),
        out: Some(dir.path().join("rep")),
        ..Default::default()
    };
    let text = im_cli::commands::reproduce(&source, None, |_| {}).unwrap();
    assert!(text.contains("EQ-INS"));
    let mut rd = csv::Reader::from_path(dir.path().join("rep/table.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    let lb: f64 = rows[0][2].parse().unwrap();
    assert!(rows[0][4].is_empty());
    for r in &rows[1..] {
        let cost: f64 = r[2].parse().unwrap();
        let delta: f64 = r[4].parse().unwrap();
        assert_eq!(delta, 100.0 * (cost - lb) / lb);
    }
    for f in ["heuristics.csv", "histogram.csv", "evaluation.csv", "fh_trace.csv", "config.toml"] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
}

#[test]
fn discretize_writes_accuracy_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("d");
    let out = run(&["discretize", "DR_d15", "--samples", "20000", "-o", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let xi = fs::read_to_string(out_dir.join("xi.csv")).unwrap();
    assert!(xi.starts_with("scheme,states,nonzeros,xi,"));
    assert!(xi.contains("DR_d15,465,"));
    let cfg = ExperimentConfig::load(&out_dir.join("config.toml")).unwrap();
    assert_eq!(cfg.accuracy.reference_samples, 20_000);
}
