//! Subcommands: each resolves a configuration, runs a pipeline step and
//! writes its artifacts into a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use im_core::builder::ImPomdp;
use im_core::eval::SimulationResult;
use im_core::interchange::{export_interchange, import_interchange};
use im_core::solver::{AlphaPolicy, SolveOutput};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::pipeline::{self, seeds, FamilyResult, ReproduceReport};
use crate::presets;
use crate::ConfigError;

/// Where the configuration comes from, plus common overrides.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Source {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => return Err(ConfigError("give either a preset name or --config, not both".into())),
            (Some(p), None) => presets::preset(p)?,
            (None, Some(path)) => ExperimentConfig::load(path)?,
            (None, None) => {
                return Err(ConfigError(format!(
                    "no configuration: pass a preset ({}) or --config FILE",
                    presets::EXPERIMENTS.join(", ")
                )))
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A run directory holding the resolved configuration.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(source: &Source, cfg: &ExperimentConfig, command: &str) -> anyhow::Result<Self> {
        let path = source
            .out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(&cfg.name).join(command));
        fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        let dir = Self { path };
        dir.write("config.toml", cfg.to_toml())?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
        let p = self.file(name);
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn discretize(source: &Source, schemes: &[String], samples: Option<usize>) -> anyhow::Result<String> {
    let mut cfg = source.resolve()?;
    if !schemes.is_empty() {
        for s in schemes {
            presets::check_scheme(s, &cfg.deterioration)?;
        }
        cfg.accuracy.schemes = schemes.to_vec();
    }
    if let Some(n) = samples {
        cfg.accuracy.reference_samples = n;
        cfg.validate()?;
    }
    let dir = RunDir::create(source, &cfg, "discretize")?;
    let rep = pipeline::accuracy(&cfg)?;
    let mut timing = Vec::new();
    #[derive(Serialize)]
    struct Xi<'a> {
        scheme: &'a str,
        states: usize,
        nonzeros: usize,
        xi: f64,
        xi_self_scaled: f64,
        flagged_cells: usize,
    }
    dir.csv(
        "xi.csv",
        rep.rows.iter().map(|r| Xi {
            scheme: &r.scheme,
            states: r.states,
            nonzeros: r.nonzeros,
            xi: r.xi,
            xi_self_scaled: r.xi_self_scaled,
            flagged_cells: r.flagged_cells,
        }),
    )?;
    #[derive(Serialize)]
    struct Curve<'a> {
        year: usize,
        series: &'a str,
        failure_probability: f64,
    }
    let mut curves = Vec::new();
    for (t, p) in rep.reference.iter().enumerate() {
        curves.push(Curve { year: t, series: "MCS conditioned", failure_probability: *p });
    }
    for (t, p) in rep.unconditioned.iter().enumerate() {
        curves.push(Curve { year: t, series: "MCS prior", failure_probability: *p });
    }
    for (row, c) in rep.rows.iter().zip(&rep.curves) {
        for (t, p) in c.iter().enumerate() {
            curves.push(Curve { year: t, series: &row.scheme, failure_probability: *p });
        }
    }
    dir.csv("curves.csv", curves)?;
    let mut out = format!(
        "reference: {} trajectories, no detection at years {:?}\n",
        cfg.accuracy.reference_samples, cfg.accuracy.no_detection_years
    );
    for r in &rep.rows {
        out += &format!("{:<16} states {:>6}  xi {:.3e}\n", r.scheme, r.states, r.xi);
        timing.push((r.scheme.clone(), r.seconds));
    }
    dir.write("timing.txt", timing_text(&timing))?;
    Ok(out)
}

fn timing_text(rows: &[(String, f64)]) -> String {
    rows.iter().map(|(k, s)| format!("{k}: {s:.2}s\n")).collect()
}

fn build_model(cfg: &ExperimentConfig, infinite: bool) -> anyhow::Result<ImPomdp> {
    let dbn = pipeline::compile(cfg, None, None)?;
    pipeline::assemble(cfg, &dbn, !infinite)
}

fn model_summary(m: &ImPomdp) -> String {
    let nnz: usize = m.model.transition.iter().map(|t| t.nnz()).sum();
    format!(
        "states: {}\nactions: {}\nobservations: {}\ntransition nonzeros: {}\ndiscount: {}\nhorizon: {}\n",
        m.model.num_states,
        m.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>().join(" "),
        m.model.num_observations,
        nnz,
        m.model.discount,
        m.model.horizon.map_or("infinite".to_string(), |h| h.to_string()),
    )
}

pub fn build(source: &Source, infinite: bool) -> anyhow::Result<String> {
    let cfg = source.resolve()?;
    let dir = RunDir::create(source, &cfg, "build")?;
    let m = build_model(&cfg, infinite)?;
    dir.write("model.bin", m.to_bytes()?)?;
    let s = model_summary(&m);
    dir.write("model.txt", &s)?;
    Ok(s)
}

#[derive(Serialize)]
struct TraceCsv {
    backups: usize,
    vectors: usize,
    lower_cost: f64,
    upper_cost: f64,
}

fn write_solve(dir: &RunDir, prefix: &str, out: &SolveOutput, policy: &AlphaPolicy) -> anyhow::Result<()> {
    // costs are negated rewards
    dir.csv(
        &format!("{prefix}trace.csv"),
        out.trace.iter().map(|r| TraceCsv {
            backups: r.backups,
            vectors: r.vectors,
            lower_cost: -r.lower,
            upper_cost: -r.upper,
        }),
    )?;
    // wall-clock times vary between runs, so they stay out of the CSVs
    let timing: String = out
        .trace
        .iter()
        .map(|r| format!("{} {:.3}\n", r.backups, r.seconds))
        .collect();
    dir.write(&format!("{prefix}timing.txt"), format!("backups seconds\n{timing}"))?;
    dir.write(&format!("{prefix}policy.bin"), policy.to_bytes()?)?;
    Ok(())
}

pub fn solve(source: &Source, infinite: bool, budget: Option<f64>, max_backups: Option<usize>) -> anyhow::Result<String> {
    let mut cfg = source.resolve()?;
    if let Some(b) = budget {
        cfg.solver.time_budget = b;
    }
    if max_backups.is_some() {
        cfg.solver.max_backups = max_backups;
    }
    cfg.validate()?;
    let dir = RunDir::create(source, &cfg, "solve")?;
    let m = build_model(&cfg, infinite)?;
    let run = pipeline::solve_model(&cfg, &m)?;
    write_solve(&dir, "", &run.output, &run.policy)?;
    let b = &run.output.bounds;
    let s = format!(
        "lower bound cost: {:.4}\nupper bound cost: {:.4}\nbackups: {}\nvectors: {}\nconverged: {}\nseconds: {:.1}\n",
        -b.lower_at_initial,
        -b.upper_at_initial,
        run.output.backups,
        b.lower.len(),
        run.output.converged,
        run.seconds
    );
    dir.write("bounds.txt", &s)?;
    Ok(s)
}

#[derive(Serialize)]
struct GridCsv<'a> {
    family: &'a str,
    rule: String,
    inspection: f64,
    repair: f64,
    failure: f64,
    total: f64,
    ci95: Option<f64>,
    best: bool,
}

fn write_grids(dir: &RunDir, fams: &[FamilyResult]) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    for f in fams {
        for (i, e) in f.grid.table.iter().enumerate() {
            rows.push(GridCsv {
                family: &f.label,
                rule: e.rule.label(),
                inspection: e.cost.inspection,
                repair: e.cost.repair,
                failure: e.cost.failure,
                total: e.cost.total,
                ci95: e.cost.ci95,
                best: i == f.grid.best,
            });
        }
    }
    dir.csv("heuristics.csv", rows)
}

pub fn heuristics(source: &Source) -> anyhow::Result<String> {
    let cfg = source.resolve()?;
    let dir = RunDir::create(source, &cfg, "heuristics")?;
    let dbn = pipeline::compile(&cfg, None, None)?;
    let model = match cfg.heuristics.evaluator {
        crate::config::Evaluator::Simulated => Some(pipeline::assemble(&cfg, &dbn, true)?),
        crate::config::Evaluator::Analytic => None,
    };
    let fams = pipeline::heuristic_search(&cfg, &dbn, model.as_ref())?;
    write_grids(&dir, &fams)?;
    Ok(fams
        .iter()
        .map(|f| format!("{:<20} {:<40} {:.3}\n", f.label, f.best().rule.label(), f.best().cost.total))
        .collect())
}

#[derive(Serialize)]
struct EvalCsv<'a> {
    policy: &'a str,
    episodes: usize,
    mean: f64,
    ci95: f64,
    std_dev: f64,
    inspection: f64,
    repair: f64,
    failure: f64,
}

#[derive(Serialize)]
struct HistCsv<'a> {
    policy: &'a str,
    group: &'a str,
    decisions: u64,
}

#[derive(Serialize)]
struct TraceRowCsv<'a> {
    policy: &'a str,
    episode: usize,
    year: usize,
    failure_probability: f64,
    expected_damage: f64,
    group: Option<&'a str>,
    observation: Option<usize>,
    cost: f64,
}

fn write_simulations(dir: &RunDir, model: &ImPomdp, runs: &[(&str, &SimulationResult)]) -> anyhow::Result<()> {
    dir.csv(
        "evaluation.csv",
        runs.iter().map(|(name, r)| EvalCsv {
            policy: name,
            episodes: r.episodes,
            mean: r.mean,
            ci95: r.ci95,
            std_dev: r.std_dev,
            inspection: r.breakdown.inspection,
            repair: r.breakdown.repair,
            failure: r.breakdown.failure,
        }),
    )?;
    let mut hist = Vec::new();
    let mut traces = Vec::new();
    for (name, r) in runs {
        for (g, c) in model.groups.iter().zip(&r.histogram) {
            hist.push(HistCsv { policy: name, group: &g.name, decisions: *c });
        }
        for tr in &r.traces {
            for rec in &tr.records {
                traces.push(TraceRowCsv {
                    policy: name,
                    episode: tr.episode,
                    year: rec.year,
                    failure_probability: rec.failure_probability,
                    expected_damage: rec.expected_damage,
                    group: rec.group.map(|g| model.groups[g].name.as_str()),
                    observation: rec.observation,
                    cost: rec.cost(),
                });
            }
        }
    }
    dir.csv("histogram.csv", hist)?;
    if !traces.is_empty() {
        dir.csv("realizations.csv", traces)?;
    }
    Ok(())
}

pub fn evaluate(source: &Source, policy: &Path, infinite: bool, episodes: Option<usize>) -> anyhow::Result<String> {
    let mut cfg = source.resolve()?;
    if let Some(n) = episodes {
        cfg.evaluation.episodes = n;
        cfg.validate()?;
    }
    let bytes = fs::read(policy).with_context(|| format!("reading policy {}", policy.display()))?;
    let pol = AlphaPolicy::from_bytes(&bytes)?;
    let dir = RunDir::create(source, &cfg, "evaluate")?;
    let m = build_model(&cfg, infinite)?;
    if pol.vectors.vectors.first().is_some_and(|v| v.values.len() != m.model.num_states) {
        return Err(ConfigError(format!(
            "policy has {} states but the configured model has {}; match --infinite to the solve run",
            pol.vectors.vectors[0].values.len(),
            m.model.num_states
        ))
        .into());
    }
    let r = pipeline::simulate(&cfg, &m, &pol, seeds::FH_SIMULATION)?;
    write_simulations(&dir, &m, &[("POMDP", &r)])?;
    Ok(format!("mean cost {:.4} ± {:.4} over {} episodes\n", r.mean, r.ci95, r.episodes))
}

pub fn export(source: &Source, infinite: bool, file: Option<&Path>) -> anyhow::Result<String> {
    let cfg = source.resolve()?;
    let dir = RunDir::create(source, &cfg, "export")?;
    let m = build_model(&cfg, infinite)?;
    let text = export_interchange(&m.model)?;
    let target = file.map(Path::to_path_buf).unwrap_or_else(|| dir.file("model.pomdp"));
    fs::write(&target, &text).with_context(|| format!("writing {}", target.display()))?;
    Ok(format!("wrote {} ({} states)\n", target.display(), m.model.num_states))
}

pub fn import(file: &Path) -> anyhow::Result<String> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let m = import_interchange(&text)?;
    let nnz: usize = m.transition.iter().map(|t| t.nnz()).sum();
    Ok(format!(
        "valid model: {} states, {} actions, {} observations, {} transition nonzeros, discount {}\n",
        m.num_states, m.num_actions, m.num_observations, nnz, m.discount
    ))
}

#[derive(Serialize)]
struct TableCsv<'a> {
    basis: &'a str,
    method: &'a str,
    cost: f64,
    ci95: Option<f64>,
    delta_pct: Option<f64>,
}

pub fn write_reproduction(dir: &RunDir, rep: &ReproduceReport) -> anyhow::Result<()> {
    dir.csv(
        "table.csv",
        rep.rows.iter().map(|r| TableCsv {
            basis: r.basis,
            method: &r.label,
            cost: r.cost,
            ci95: r.ci95,
            delta_pct: r.delta_pct,
        }),
    )?;
    write_grids(dir, &rep.heuristics)?;
    write_solve(dir, "fh_", &rep.finite.output, &rep.finite.policy)?;
    for (scheme, run) in &rep.infinite {
        write_solve(dir, &format!("ih_{scheme}_"), &run.output, &run.policy)?;
    }
    let runs: Vec<(&str, &SimulationResult)> = rep.runs.iter().map(|r| (r.label.as_str(), &r.result)).collect();
    write_simulations(dir, &rep.finite_model, &runs)
}

pub fn table_text(rep: &ReproduceReport) -> String {
    let mut s = String::new();
    for r in &rep.rows {
        let ci = r.ci95.map_or(String::new(), |c| format!("(±{c:.2})"));
        let d = r.delta_pct.map_or("-".to_string(), |d| format!("{d:+.0}%"));
        s += &format!("{:<4} {:<56} {:>8.2} {:>9} {:>6}\n", r.basis, r.label, r.cost, ci, d);
    }
    s
}

pub fn reproduce(source: &Source, budget: Option<f64>, mut progress: impl FnMut(&str)) -> anyhow::Result<String> {
    let mut cfg = source.resolve()?;
    if let Some(b) = budget {
        cfg.solver.time_budget = b;
        cfg.validate()?;
    }
    let dir = RunDir::create(source, &cfg, "reproduce")?;
    let t = Instant::now();
    let rep = pipeline::reproduce(&cfg, &mut progress)?;
    write_reproduction(&dir, &rep)?;
    dir.write("timing.txt", format!("total: {:.1}s\n", t.elapsed().as_secs_f64()))?;
    Ok(table_text(&rep))
}
