//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero if any criterion fails.
//!
//! Runtime is dominated by the solver budgets (120 s per model).

use std::time::Instant;

use im_cli::config::ExperimentConfig;
use im_cli::pipeline::{self, ReproduceReport};
use im_cli::presets::preset;
use im_core::builder::*;
use im_core::dbn::*;
use im_core::eval::{simulate_policy, SimulationConfig};
use im_core::fatigue::*;
use im_core::heuristics::*;
use im_core::interchange::{export_interchange, import_interchange};
use im_core::pomdp::{BeliefState, DiscretePomdp};
use im_core::rng::stream_rng;
use im_core::solver::{solve, SolverConfig};
use im_core::toys::{layered_toy, random_pomdp};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Check {
    pass: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Self {
            pass: true,
            notes: Vec::new(),
        }
    }

    fn expect(&mut self, ok: bool, note: String) {
        self.pass &= ok;
        self.notes.push(if ok { note } else { format!("{note} [miss]") });
    }

    fn done(self) -> Outcome {
        Outcome {
            pass: self.pass,
            detail: self.notes.join("; "),
        }
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x - target).abs() <= rel * target
}

fn pct(x: f64, target: f64) -> String {
    format!("{:+.1}%", 100.0 * (x - target) / target)
}

fn dr30() -> CompiledDbn {
    let p = CrackGrowthParams::default();
    let s = DiscretizationScheme::from_name("DR_d30", &p).unwrap();
    compile_transition(&s, &p, &CompileConfig::default()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut cfg = preset("DR_d30").unwrap();
    cfg.accuracy.reference_samples = 1_000_000;
    cfg.accuracy.schemes = ["DR_d15", "DR_d30", "PAR_K50-d40", "PAR_K50-d80", "PAR_K100-d160"]
        .map(String::from)
        .to_vec();
    let rep = pipeline::accuracy(&cfg).unwrap();
    let xi = |name: &str| rep.rows.iter().find(|r| r.scheme == name).unwrap().xi;
    let mut c = Check::new();
    c.expect(xi("DR_d30") <= 1e-3, format!("DR_d30 xi {:.2e} <= 1e-3", xi("DR_d30")));
    c.expect(xi("DR_d15") > xi("DR_d30"), format!("DR_d15 xi {:.2e} > DR_d30", xi("DR_d15")));
    let par = [xi("PAR_K50-d40"), xi("PAR_K50-d80"), xi("PAR_K100-d160")];
    c.expect(
        par[0] > par[1] && par[1] > par[2],
        format!("PAR chain {:.2e} > {:.2e} > {:.2e}", par[0], par[1], par[2]),
    );
    for (name, table) in [("DR_d30", 2.1e-4), ("DR_d15", 8.6e-3), ("PAR_K50-d40", 7.1e-2), ("PAR_K100-d160", 4.3e-4)] {
        let r = xi(name) / table;
        c.expect((1.0 / 3.0..=3.0).contains(&r), format!("{name} ratio {r:.2}"));
    }
    c.done()
}

fn no_inspection_cost(dbn: &CompiledDbn, discount: f64) -> f64 {
    let g = traditional_groups(1.0, 10.0, PodCurve::new(8.0).unwrap());
    let rule = HeuristicRule::new(InspectionPlan::None, "DN-I", MaintenanceRule::RepairOnDetection);
    evaluate_analytic(dbn, &g, &rule, &CostSpec::new(1e2, discount)).unwrap().total
}

fn criterion_2(dbn: &CompiledDbn) -> Outcome {
    let frozen = ExperimentConfig::default().costs.discount;
    let sweep: Vec<(f64, f64)> = (90..=99)
        .map(|k| {
            let g = k as f64 / 100.0;
            (g, no_inspection_cost(dbn, g))
        })
        .collect();
    let (best, cost) = sweep
        .iter()
        .copied()
        .min_by(|a, b| (a.1 - 2.25).abs().total_cmp(&(b.1 - 2.25).abs()))
        .unwrap();
    let mut c = Check::new();
    c.expect((cost - 2.25).abs() <= 0.01, format!("sweep optimum gamma {best:.2} gives {cost:.4}"));
    c.expect((best - frozen).abs() < 1e-12, format!("frozen gamma {frozen}"));
    c.done()
}

fn criterion_3(dbn: &CompiledDbn) -> Outcome {
    let mut c = Check::new();
    let rod = MaintenanceRule::RepairOnDetection;
    for (name, eq, eq_target, thr, thr_target) in [
        ("R_RI20-R_FR100", 4, 69.17, 3e-4, 65.62),
        ("R_RI50-R_FR20", 11, 17.06, 1e-3, 16.69),
    ] {
        let cfg = preset(name).unwrap();
        let g = pipeline::groups(&cfg).unwrap();
        let costs = pipeline::cost_spec(&cfg);
        let value = |plan| evaluate_analytic(dbn, &g, &HeuristicRule::new(plan, "DN-I", rod.clone()), &costs).unwrap().total;
        let e = value(InspectionPlan::Equidistant { interval: eq });
        let t = value(InspectionPlan::Threshold { delta_pf: thr });
        c.expect(within(e, eq_target, 0.05), format!("{name} EQ {eq} {e:.2} ({})", pct(e, eq_target)));
        c.expect(within(t, thr_target, 0.05), format!("{name} THR {thr:e} {t:.2} ({})", pct(t, thr_target)));
        let fams = pipeline::heuristic_search(&cfg, dbn, None).unwrap();
        let best = &fams.iter().find(|f| f.label == "EQ-INS").unwrap().best().rule.plan;
        c.expect(
            *best == InspectionPlan::Equidistant { interval: eq },
            format!("{name} EQ grid optimum {best:?}"),
        );
    }
    c.done()
}

const EXPERIMENTS: [(&str, f64); 4] = [
    ("R_RI20-R_FR100", 58.35),
    ("R_RI10-R_FR10", 2.25),
    ("R_RI50-R_FR20", 12.45),
    ("complex", 12.26),
];

/// What criteria 4 and 5 need from one reproduction; the full report is too
/// large to keep four of them alive at once.
struct Summary {
    lb: f64,
    heuristic: f64,
    crossover: Option<f64>,
    fh_mean: f64,
    fh_ci: f64,
    infinite: Vec<(String, f64)>,
}

fn summarize(rep: &ReproduceReport) -> Summary {
    let analytic = rep.rows.iter().any(|r| r.basis == "AN" && !r.label.starts_with("POMDP"));
    let heuristic = rep
        .rows
        .iter()
        .filter(|r| !r.label.starts_with("POMDP") && (r.basis == "AN") == analytic)
        .map(|r| r.cost)
        .fold(f64::INFINITY, f64::min);
    // anytime crossover: first trace row whose guaranteed cost beats the heuristic
    let crossover = rep.finite.output.trace.iter().find(|r| -r.lower <= heuristic + 1e-6).map(|r| r.seconds);
    let fh = &rep.run("POMDP-FH").unwrap().result;
    Summary {
        lb: rep.lower_bound(),
        heuristic,
        crossover,
        fh_mean: fh.mean,
        fh_ci: fh.ci95,
        infinite: rep
            .runs
            .iter()
            .filter_map(|r| r.label.strip_prefix("POMDP-IH ").map(|s| (s.to_string(), r.result.mean)))
            .collect(),
    }
}

fn criterion_4(sums: &[Summary]) -> Outcome {
    let mut c = Check::new();
    for ((name, target), s) in EXPERIMENTS.iter().zip(sums) {
        c.expect(within(s.lb, *target, 0.05), format!("{name} LB {:.3} ({})", s.lb, pct(s.lb, *target)));
        c.expect(s.lb <= s.heuristic + 1e-6, format!("{name} LB <= best heuristic {:.3}", s.heuristic));
        c.expect(
            s.crossover.is_some_and(|t| t <= 120.0),
            format!("{name} crossover at {:.1}s", s.crossover.unwrap_or(f64::NAN)),
        );
    }
    c.done()
}

fn criterion_5(sums: &[Summary]) -> Outcome {
    let mut c = Check::new();
    for ((name, _), s) in EXPERIMENTS.iter().zip(sums) {
        let tol = s.fh_ci + 0.02 * s.lb;
        c.expect(
            (s.fh_mean - s.lb).abs() <= tol,
            format!("{name} FH sim {:.3} ± {:.3} vs LB {:.3}", s.fh_mean, s.fh_ci, s.lb),
        );
    }
    for (name, scheme, target) in [
        ("R_RI20-R_FR100", "DR_d30", 60.23),
        ("R_RI50-R_FR20", "DR_d30", 12.99),
        ("R_RI50-R_FR20", "PAR_K100-d160", 13.08),
    ] {
        let i = EXPERIMENTS.iter().position(|(n, _)| *n == name).unwrap();
        let mean = sums[i].infinite.iter().find(|(s, _)| s == scheme).map(|x| x.1).unwrap_or(f64::NAN);
        c.expect(within(mean, target, 0.08), format!("{name} IH {scheme} {mean:.2} ({})", pct(mean, target)));
    }
    c.done()
}

fn criterion_6(rep: &ReproduceReport) -> Outcome {
    let m = &rep.finite_model;
    let used = |hist: &[u64], pred: &dyn Fn(&ActionObservationGroup) -> bool| -> u64 {
        m.groups.iter().zip(hist).filter(|(g, _)| pred(g)).map(|(_, c)| *c).sum()
    };
    let mut c = Check::new();
    let h = &rep.run("POMDP-FH").unwrap().result.histogram;
    let i1 = used(h, &|g| matches!(g.inspection, Some(Inspection::Detection(_))));
    let i2 = used(h, &|g| matches!(g.inspection, Some(Inspection::Indication(_))));
    let minor = used(h, &|g| g.maintenance == Maintenance::MinorRepair);
    let perfect = used(h, &|g| g.maintenance == Maintenance::PerfectRepair);
    c.expect(i1 > 0 && i2 > 0, format!("POMDP inspections I1 {i1}, I2 {i2}"));
    c.expect(minor > 0 && perfect > 0, format!("POMDP repairs minor {minor}, perfect {perfect}"));
    for run in rep.runs.iter().filter(|r| r.inspection_group.is_some()) {
        let own = m.groups.iter().find(|g| Some(&g.name) == run.inspection_group.as_ref()).unwrap();
        let mine = used(&run.result.histogram, &|g| g.inspects() && g.inspection == own.inspection);
        let other = used(&run.result.histogram, &|g| g.inspects() && g.inspection != own.inspection);
        c.expect(mine > 0 && other == 0, format!("{}: own {mine}, other {other}", run.label));
    }
    c.done()
}

fn tree_value(m: &DiscretePomdp, b: &BeliefState, steps: usize) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    (0..m.num_actions)
        .map(|a| {
            let mut v = m.belief_reward(b, a).unwrap();
            for o in 0..m.num_observations {
                if let Ok((post, p)) = m.belief_update(b, a, o) {
                    v += m.discount * p * tree_value(m, &post, steps - 1);
                }
            }
            v
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn random_belief(n: usize, rng: &mut impl Rng) -> BeliefState {
    // sparse weights with one guaranteed positive entry
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.2) { rng.random::<f64>() } else { 0.0 })
        .collect();
    w[rng.random_range(0..n)] += 0.5;
    BeliefState::from_unnormalized(w).unwrap()
}

fn criterion_7(dbn: &CompiledDbn) -> Outcome {
    let mut c = Check::new();
    let mut rng = stream_rng(7, 0);

    let mut ok = 0;
    for seed in 0..200 {
        let m = random_pomdp(2 + seed as usize % 7, 1 + seed as usize % 3, 1 + seed as usize % 4, seed);
        let b = random_belief(m.num_states, &mut rng);
        let valid = m.validate().is_empty()
            && (0..m.num_actions).all(|a| {
                let mass: f64 = (0..m.num_observations).map(|o| m.belief_update(&b, a, o).unwrap().1).sum();
                (mass - 1.0).abs() < 1e-12
            });
        let round = import_interchange(&export_interchange(&m).unwrap()).unwrap() == m;
        ok += (valid && round) as usize;
    }
    c.expect(ok == 200, format!("random models valid and round-trip {ok}/200"));

    let reset = perfect_repair_matrix(&dbn.initial_belief);
    let worst = (0..1000)
        .map(|_| {
            let b = random_belief(dbn.num_states(), &mut rng);
            BeliefState::new_unchecked(reset.left_multiply(b.probs())).l1_distance(&dbn.initial_belief)
        })
        .fold(0.0, f64::max);
    c.expect(worst < 1e-12, format!("perfect repair reset max L1 {worst:.1e}"));

    let exact = SolverConfig {
        time_budget: 30.0,
        target_gap: 1e-11,
        target_gap_relative: 0.0,
        trial_gap_fraction: 0.1,
        prune_tolerance: 1e-13,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        for h in 1..=3 {
            let m = layered_toy(h, seed);
            let out = solve(&m, &exact).unwrap();
            let v = tree_value(&m, &m.initial_belief, h);
            worst = worst.max((out.bounds.lower_at_initial - v).abs());
        }
    }
    c.expect(worst <= 1e-9, format!("solver vs tree enumeration max error {worst:.1e}"));

    let pod = PodCurve::new(8.0).unwrap();
    let m = assemble_infinite(dbn, &traditional_groups(1.0, 50.0, pod), &CostSpec::new(1e3, 0.95), &AssembleOptions::default())
        .unwrap();
    let z = dbn.observation_matrix(&Inspection::Detection(pod));
    let a = m.group_index("DN-I").unwrap();
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let b = random_belief(dbn.num_states(), &mut rng);
        let o = k % 2;
        if let (Ok(x), Ok((y, _))) = (forward_step(dbn, &b, Some((&z, o))), m.model.belief_update(&b, a, o)) {
            worst = worst.max(x.l1_distance(&y));
        }
    }
    c.expect(worst < 1e-12, format!("filter step vs belief update max L1 {worst:.1e}"));

    let rule = HeuristicRule::new(InspectionPlan::Equidistant { interval: 6 }, "DN-I", MaintenanceRule::RepairOnDetection);
    let policy = HeuristicPolicy::new(&m, &rule).unwrap();
    let sc = SimulationConfig::new(2_000, 30, 99);
    let runs: Vec<(u64, f64)> = [1, 4]
        .iter()
        .map(|&n| {
            let r = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| simulate_policy(&m, &policy, &sc).unwrap());
            (r.mean.to_bits(), r.ci95)
        })
        .collect();
    c.expect(runs[0] == runs[1], "simulation identical on 1 and 4 threads".into());
    c.done()
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {n} {} {name}: {} ({:.0}s elapsed)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((n, name, o));
    };

    report(1, "discretization accuracy", criterion_1());
    let dbn = dr30();
    report(2, "discount calibration", criterion_2(&dbn));
    report(3, "analytic heuristic values", criterion_3(&dbn));
    report(7, "exact property suites", criterion_7(&dbn));

    drop(dbn);

    let mut sums = Vec::new();
    let mut complex = None;
    for (name, _) in EXPERIMENTS {
        let rep = pipeline::reproduce(&preset(name).unwrap(), |m| eprintln!("  [{name}] {m}")).unwrap();
        sums.push(summarize(&rep));
        if name == "complex" {
            complex = Some(criterion_6(&rep));
        }
    }
    report(4, "solver level and dominance", criterion_4(&sums));
    report(5, "policy evaluation consistency", criterion_5(&sums));
    report(6, "complex-setting behavior", complex.unwrap());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
