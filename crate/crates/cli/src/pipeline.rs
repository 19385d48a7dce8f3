//! The computations behind each subcommand, free of file handling so tests
//! can drive them directly.

use std::time::Instant;

use im_core::builder::*;
use im_core::dbn::*;
use im_core::eval::{simulate_policy, Policy, SimulationConfig, SimulationResult};
use im_core::fatigue::*;
use im_core::heuristics::*;
use im_core::rng::derive_seed;
use im_core::solver::{extract_policy, solve, AlphaPolicy, SolveOutput};
use serde::Serialize;

use crate::config::*;
use crate::ConfigError;

/// Seed tags for the derived random streams.
pub mod seeds {
    pub const FH_SIMULATION: u64 = 1;
    pub const HEURISTIC_SEARCH: u64 = 2;
    pub const HEURISTIC_FINAL: u64 = 3;
    pub const REFERENCE_POOL: u64 = 4;
    pub const INFINITE_SIMULATION: u64 = 10;
}

pub fn groups(cfg: &ExperimentConfig) -> Result<Vec<ActionObservationGroup>, ConfigError> {
    let a = &cfg.actions;
    let pod = PodCurve::new(a.pod_mean).map_err(|e| ConfigError(format!("actions.pod_mean: {e}")))?;
    Ok(match a.set {
        ActionSet::Traditional => traditional_groups(a.inspection_cost, a.perfect_repair_cost, pod),
        ActionSet::Complex => {
            let poi =
                PoiCurve::from_scales(&a.poi_means).map_err(|e| ConfigError(format!("actions.poi_means: {e}")))?;
            complex_groups(
                a.inspection_cost,
                a.inspection2_cost,
                a.minor_repair_cost,
                a.perfect_repair_cost,
                pod,
                poi,
            )
        }
    })
}

pub fn cost_spec(cfg: &ExperimentConfig) -> CostSpec {
    CostSpec {
        failure_cost: cfg.costs.failure,
        discount: cfg.costs.discount,
        timing: cfg.costs.timing,
    }
}

pub fn scheme(cfg: &ExperimentConfig, name: &str) -> im_core::Result<DiscretizationScheme> {
    Ok(DiscretizationScheme::from_name(name, &cfg.deterioration)?
        .with_representative(cfg.discretization.representative))
}

/// Compiles `name` (the configured scheme when `None`).
pub fn compile(cfg: &ExperimentConfig, name: Option<&str>, samples_per_cell: Option<usize>) -> im_core::Result<CompiledDbn> {
    let s = scheme(cfg, name.unwrap_or(&cfg.discretization.scheme))?;
    let mut cc = cfg.compile_config();
    if let Some(n) = samples_per_cell {
        cc.samples_per_cell = n;
    }
    compile_transition(&s, &cfg.deterioration, &cc)
}

pub fn assemble(cfg: &ExperimentConfig, dbn: &CompiledDbn, finite: bool) -> anyhow::Result<ImPomdp> {
    let g = groups(cfg)?;
    let c = cost_spec(cfg);
    Ok(if finite {
        assemble_finite(dbn, &g, &c, cfg.horizon, &cfg.assemble)?
    } else {
        assemble_infinite(dbn, &g, &c, &cfg.assemble)?
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyRow {
    pub scheme: String,
    pub states: usize,
    pub nonzeros: usize,
    pub xi: f64,
    /// Standardized by the conditioned curve's own spread.
    pub xi_self_scaled: f64,
    pub flagged_cells: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
    /// Monte Carlo conditioned failure curve, years `0..=t_N`.
    pub reference: Vec<f64>,
    pub unconditioned: Vec<f64>,
    /// Discretized conditioned curve per scheme.
    pub curves: Vec<Vec<f64>>,
}

/// Compares each scheme's filtered failure curve with a Monte Carlo
/// reference under the configured inspection history. Rate schemes are
/// estimated from the reference pool itself.
pub fn accuracy(cfg: &ExperimentConfig) -> im_core::Result<AccuracyReport> {
    let a = &cfg.accuracy;
    let p = &cfg.deterioration;
    let pool = sample_trajectories(p, a.reference_samples, derive_seed(cfg.seed, seeds::REFERENCE_POOL))?;
    let pod = PodCurve::new(a.pod_mean)?;
    let events: Vec<InspectionEvent> = a
        .no_detection_years
        .iter()
        .map(|&y| InspectionEvent::no_detection(y, pod))
        .collect();
    let reference = conditional_failure_curve(&pool, &events, DEFAULT_ESS_FLOOR)?;
    let unconditioned = pool.failure_curve();
    let schemes: Vec<String> = if a.schemes.is_empty() {
        vec![cfg.discretization.scheme.clone()]
    } else {
        a.schemes.clone()
    };
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for name in &schemes {
        let t = Instant::now();
        let s = scheme(cfg, name)?;
        let dbn = match s.variant {
            Variant::DeteriorationRate => compile_rate_from_pool(&s, p, &pool)?,
            Variant::Parametric => compile_transition(&s, p, &cfg.compile_config())?,
        };
        let curve = unroll_failure_curve(&dbn, &events)?;
        rows.push(AccuracyRow {
            scheme: name.clone(),
            states: dbn.num_states(),
            nonzeros: dbn.transition.nnz(),
            xi: discretization_error_scaled(&curve, &reference, &unconditioned)?,
            xi_self_scaled: discretization_error(&curve, &reference)?,
            flagged_cells: dbn.report.flagged.len(),
            seconds: t.elapsed().as_secs_f64(),
        });
        curves.push(curve);
    }
    Ok(AccuracyReport {
        rows,
        reference,
        unconditioned,
        curves,
    })
}

/// Best rule of one heuristic family, with the full grid.
#[derive(Debug, Clone)]
pub struct FamilyResult {
    pub label: String,
    pub grid: GridResult,
}

impl FamilyResult {
    pub fn best(&self) -> &GridEntry {
        self.grid.best()
    }
}

pub fn family_rules(f: &HeuristicFamily) -> Vec<HeuristicRule> {
    let mut rules = Vec::new();
    for plan in f.plans() {
        for m in &f.maintenance {
            rules.push(HeuristicRule::new(plan, &f.inspection_group, m.clone()));
            if plan == InspectionPlan::None {
                // maintenance is irrelevant without inspections
                break;
            }
        }
    }
    rules
}

/// Grid search of every configured family. `model` is needed for the
/// simulated evaluator.
pub fn heuristic_search(
    cfg: &ExperimentConfig,
    dbn: &CompiledDbn,
    model: Option<&ImPomdp>,
) -> anyhow::Result<Vec<FamilyResult>> {
    let g = groups(cfg)?;
    let c = cost_spec(cfg);
    let mut out = Vec::new();
    for f in &cfg.heuristics.families {
        let rules = family_rules(f);
        let grid = match cfg.heuristics.evaluator {
            Evaluator::Analytic => {
                if cfg.horizon != dbn.horizon() {
                    return Err(ConfigError(
                        "the analytic evaluator runs over deterioration.t_n; set horizon to match".into(),
                    )
                    .into());
                }
                grid_search(rules, |r| evaluate_analytic(dbn, &g, r, &c))?
            }
            Evaluator::Simulated => {
                let m = model.ok_or_else(|| anyhow::anyhow!("simulated heuristics need an assembled model"))?;
                let sc = SimulationConfig {
                    failure: cfg.evaluation.failure,
                    ..SimulationConfig::new(
                        cfg.heuristics.search_episodes,
                        cfg.horizon,
                        derive_seed(cfg.seed, seeds::HEURISTIC_SEARCH),
                    )
                };
                grid_search(rules, |r| evaluate_simulated(m, r, &sc))?
            }
        };
        out.push(FamilyResult {
            label: f.label.clone(),
            grid,
        });
    }
    Ok(out)
}

pub struct SolveRun {
    pub output: SolveOutput,
    pub policy: AlphaPolicy,
    pub seconds: f64,
}

pub fn solve_model(cfg: &ExperimentConfig, model: &ImPomdp) -> im_core::Result<SolveRun> {
    let t = Instant::now();
    let output = solve(&model.model, &cfg.solver)?;
    let policy = extract_policy(&output.bounds)?;
    Ok(SolveRun {
        output,
        policy,
        seconds: t.elapsed().as_secs_f64(),
    })
}

pub fn simulate(
    cfg: &ExperimentConfig,
    model: &ImPomdp,
    policy: &dyn Policy,
    tag: u64,
) -> im_core::Result<SimulationResult> {
    let sc = SimulationConfig {
        failure: cfg.evaluation.failure,
        keep_traces: cfg.evaluation.keep_traces,
        ..SimulationConfig::new(cfg.evaluation.episodes, cfg.horizon, derive_seed(cfg.seed, tag))
    };
    simulate_policy(model, policy, &sc)
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub label: String,
    /// "AN" for closed-form or bound values, "SIM" for simulation estimates.
    pub basis: &'static str,
    pub cost: f64,
    pub ci95: Option<f64>,
    /// Relative difference to the finite-horizon lower bound, percent.
    pub delta_pct: Option<f64>,
}

/// Simulation of one policy, kept for behavior checks.
pub struct PolicyRun {
    pub label: String,
    pub result: SimulationResult,
    /// Inspection group of a heuristic, `None` for solver policies.
    pub inspection_group: Option<String>,
}

pub struct ReproduceReport {
    pub rows: Vec<TableRow>,
    pub finite: SolveRun,
    pub finite_model: ImPomdp,
    pub heuristics: Vec<FamilyResult>,
    pub runs: Vec<PolicyRun>,
    /// `(scheme, solve)` for each stationary model.
    pub infinite: Vec<(String, SolveRun)>,
}

impl ReproduceReport {
    pub fn run(&self, label: &str) -> Option<&PolicyRun> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn lower_bound(&self) -> f64 {
        -self.finite.output.bounds.lower_at_initial
    }
}

pub fn delta_pct(method: f64, reference: f64) -> f64 {
    100.0 * (method - reference) / reference
}

fn describe(entry: &GridEntry, family: &str) -> String {
    match entry.rule.plan {
        InspectionPlan::None => format!("{family} no inspections"),
        InspectionPlan::Equidistant { interval } => format!("{family} interval={interval}"),
        InspectionPlan::Threshold { delta_pf } => match &entry.rule.maintenance {
            MaintenanceRule::Threshold { threshold, .. } => {
                format!("{family} dPF={delta_pf:e} repair>{threshold:e}")
            }
            _ => format!("{family} dPF={delta_pf:e}"),
        },
    }
}

/// The full comparison table of one experiment.
pub fn reproduce(
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&str),
) -> anyhow::Result<ReproduceReport> {
    let t = Instant::now();
    let dbn = compile(cfg, None, None)?;
    progress(&format!("compiled {} in {:.1}s", cfg.discretization.scheme, t.elapsed().as_secs_f64()));
    let fh = assemble(cfg, &dbn, true)?;
    let finite = solve_model(cfg, &fh)?;
    let lb = -finite.output.bounds.lower_at_initial;
    progress(&format!(
        "finite-horizon solve: lower bound {lb:.3}, upper {:.3}, {} backups",
        -finite.output.bounds.upper_at_initial,
        finite.output.backups
    ));
    let mut rows = vec![TableRow {
        label: "POMDP finite horizon, lower bound".into(),
        basis: "AN",
        cost: lb,
        ci95: None,
        delta_pct: None,
    }];
    let mut runs = Vec::new();
    let sim = simulate(cfg, &fh, &finite.policy, seeds::FH_SIMULATION)?;
    rows.push(TableRow {
        label: "POMDP finite horizon, simulated".into(),
        basis: "SIM",
        cost: sim.mean,
        ci95: Some(sim.ci95),
        delta_pct: Some(delta_pct(sim.mean, lb)),
    });
    runs.push(PolicyRun {
        label: "POMDP-FH".into(),
        result: sim,
        inspection_group: None,
    });

    let heuristics = heuristic_search(cfg, &dbn, Some(&fh))?;
    let analytic = cfg.heuristics.evaluator == Evaluator::Analytic;
    for f in &heuristics {
        let best = f.best();
        let label = describe(best, &f.label);
        if analytic {
            rows.push(TableRow {
                label: label.clone(),
                basis: "AN",
                cost: best.cost.total,
                ci95: None,
                delta_pct: Some(delta_pct(best.cost.total, lb)),
            });
        }
        let policy = HeuristicPolicy::new(&fh, &best.rule)?;
        let r = simulate(cfg, &fh, &policy, seeds::HEURISTIC_FINAL)?;
        rows.push(TableRow {
            label,
            basis: "SIM",
            cost: r.mean,
            ci95: Some(r.ci95),
            delta_pct: Some(delta_pct(r.mean, lb)),
        });
        runs.push(PolicyRun {
            label: f.label.clone(),
            result: r,
            inspection_group: Some(best.rule.inspection_group.clone()),
        });
        progress(&format!("heuristic {}: {}", f.label, best.rule.label()));
    }

    let mut infinite = Vec::new();
    for (i, run) in cfg.infinite_horizon.iter().enumerate() {
        let t = Instant::now();
        let d = if run.scheme == cfg.discretization.scheme && run.samples_per_cell.is_none() {
            dbn.clone()
        } else {
            compile(cfg, Some(&run.scheme), run.samples_per_cell)?
        };
        let ih = assemble(cfg, &d, false)?;
        let solved = solve_model(cfg, &ih)?;
        let r = simulate(cfg, &ih, &solved.policy, seeds::INFINITE_SIMULATION + i as u64)?;
        progress(&format!(
            "infinite horizon {}: {:.3} ± {:.3} ({:.0}s)",
            run.scheme,
            r.mean,
            r.ci95,
            t.elapsed().as_secs_f64()
        ));
        rows.push(TableRow {
            label: format!("POMDP infinite horizon ({}), {} years", run.scheme, cfg.horizon),
            basis: "SIM",
            cost: r.mean,
            ci95: Some(r.ci95),
            delta_pct: Some(delta_pct(r.mean, lb)),
        });
        runs.push(PolicyRun {
            label: format!("POMDP-IH {}", run.scheme),
            result: r,
            inspection_group: None,
        });
        infinite.push((run.scheme.clone(), solved));
    }
    Ok(ReproduceReport {
        rows,
        finite,
        finite_model: fh,
        heuristics,
        runs,
        infinite,
    })
}

