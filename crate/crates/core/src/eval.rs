//! Monte Carlo evaluation of policies on an assembled model.
//!
//! Episodes sharing the same action-observation history share one filtered
//! belief, so the engine expands a tree of histories step by step and only
//! filters each distinct belief once. Every episode keeps its own random
//! stream, which makes the estimates independent of scheduling and of the
//! number of worker threads.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::ImPomdp;
use crate::error::{Error, Result};
use crate::pomdp::{BeliefState, SparseMatrix};
use crate::rng::{stream_rng, StreamRng};

/// What a policy sees at a decision epoch.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// Decision epoch; the action's inspection and risk refer to year + 1.
    pub year: usize,
    pub horizon: usize,
    pub belief: &'a BeliefState,
    /// Indices with non-zero belief, ascending.
    pub support: &'a [usize],
    pub last_group: Option<usize>,
    /// Outcome of the inspection carried by the last group, if any.
    pub last_observation: Option<usize>,
}

pub trait Policy: Sync {
    fn act(&self, model: &ImPomdp, ctx: &DecisionContext) -> Result<usize>;
}

/// Always the same group.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub usize);

impl Policy for FixedPolicy {
    fn act(&self, _: &ImPomdp, _: &DecisionContext) -> Result<usize> {
        Ok(self.0)
    }
}

/// How failure costs enter an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureAccounting {
    /// Annual risk `ΔP_F C_f` computed from the filtered belief.
    #[default]
    BeliefRisk,
    /// `C_f` billed when the sampled ground truth enters failure.
    SampledFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default)]
    pub failure: FailureAccounting,
    /// Number of leading episodes whose full trace is kept.
    #[serde(default)]
    pub keep_traces: usize,
}

impl SimulationConfig {
    pub fn new(episodes: usize, horizon: usize, seed: u64) -> Self {
        Self {
            episodes,
            horizon,
            seed,
            failure: FailureAccounting::BeliefRisk,
            keep_traces: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRecord {
    pub year: usize,
    /// Failure probability of the filtered belief at this epoch.
    pub failure_probability: f64,
    pub expected_damage: f64,
    /// `None` for the closing record at the horizon.
    pub group: Option<usize>,
    /// Inspection outcome observed at `year + 1`.
    pub observation: Option<usize>,
    /// Discounted cost terms (positive numbers).
    pub inspection: f64,
    pub repair: f64,
    pub failure: f64,
}

impl YearRecord {
    pub fn cost(&self) -> f64 {
        self.inspection + self.repair + self.failure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub seed: u64,
    pub records: Vec<YearRecord>,
}

impl EpisodeTrace {
    pub fn total(&self) -> f64 {
        self.records.iter().map(YearRecord::cost).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostParts {
    pub inspection: f64,
    pub repair: f64,
    pub failure: f64,
}

impl CostParts {
    pub fn total(&self) -> f64 {
        self.inspection + self.repair + self.failure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub std_dev: f64,
    pub episodes: usize,
    /// Mean cost split; sums to `mean`.
    pub breakdown: CostParts,
    /// Decisions per group over all episodes and years.
    pub histogram: Vec<u64>,
    pub traces: Vec<EpisodeTrace>,
    /// Number of distinct histories expanded.
    pub nodes: usize,
}

/// Mean and 95% half-width `1.96 s / √n`.
pub fn mean_ci(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (mean, 1.96 * sd / n.sqrt(), sd)
}

struct Episode {
    id: usize,
    rng: StreamRng,
    state: usize,
    parts: CostParts,
    /// Running sum of record costs, in year order.
    total: f64,
    trace: Option<Vec<YearRecord>>,
}

struct Node {
    belief: BeliefState,
    support: Vec<usize>,
    last_group: Option<usize>,
    last_observation: Option<usize>,
    episodes: Vec<Episode>,
}

fn support_of(b: &[f64]) -> Vec<usize> {
    b.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn sample_dense(rng: &mut StreamRng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn sample_row(rng: &mut StreamRng, m: &SparseMatrix, row: usize) -> usize {
    let (cols, vals) = m.row(row);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&c, &p) in cols.iter().zip(vals) {
        acc += p;
        if u < acc {
            return c;
        }
    }
    *cols.last().expect("stochastic rows are non-empty")
}

/// Whether every observation row of an action is the same (the action
/// carries no information).
pub fn uninformative(z: &SparseMatrix) -> bool {
    let first = z.row(0);
    (1..z.n_rows()).all(|s| z.row(s) == first)
}

struct Expanded {
    group: usize,
    children: Vec<(Option<usize>, Vec<Episode>)>,
}

/// Simulates `config.episodes` episodes of `policy` over `config.horizon`
/// decision epochs.
pub fn simulate_policy(
    model: &ImPomdp,
    policy: &dyn Policy,
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    if config.horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if config.episodes < 1 {
        return Err(Error::InvalidParameter("need at least one episode".into()));
    }
    let m = &model.model;
    let gamma = m.discount;
    let silent: Vec<bool> = m.observation.iter().map(uninformative).collect();
    let failed = {
        let mut f = vec![false; m.num_states];
        for &s in &m.failure_states {
            f[s] = true;
        }
        f
    };

    let b0 = m.initial_belief.clone();
    let episodes: Vec<Episode> = (0..config.episodes)
        .map(|id| {
            let mut rng = stream_rng(config.seed, id as u64);
            let state = sample_dense(&mut rng, b0.probs());
            Episode {
                id,
                rng,
                state,
                parts: CostParts::default(),
                total: 0.0,
                trace: (id < config.keep_traces).then(Vec::new),
            }
        })
        .collect();
    let mut frontier = vec![Node {
        support: support_of(b0.probs()),
        belief: b0,
        last_group: None,
        last_observation: None,
        episodes,
    }];
    let mut histogram = vec![0u64; model.num_groups()];
    let mut nodes = 0usize;
    let mut finished: Vec<Episode> = Vec::with_capacity(config.episodes);

    for year in 0..config.horizon {
        nodes += frontier.len();
        let disc = gamma.powi(year as i32);
        let expanded: Vec<Result<Expanded>> = frontier
            .par_iter_mut()
            .map(|node| {
                let ctx = DecisionContext {
                    year,
                    horizon: config.horizon,
                    belief: &node.belief,
                    support: &node.support,
                    last_group: node.last_group,
                    last_observation: node.last_observation,
                };
                let a = policy.act(model, &ctx)?;
                if a >= model.num_groups() {
                    return Err(Error::InvalidPolicyAction {
                        group: a,
                        episode: node.episodes[0].id,
                        year,
                    });
                }
                // Expected parts over the belief.
                let mut exp = CostParts::default();
                for &s in &node.support {
                    let p = node.belief.probs()[s];
                    let (r, i, f) = model.reward_parts(s, a);
                    exp.repair -= p * r;
                    exp.inspection -= p * i;
                    exp.failure -= p * f;
                }
                let pf = model.failure_probability(node.belief.probs());
                let ed = model.expected_damage(node.belief.probs());
                let t = &m.transition[a];
                let z = &m.observation[a];
                let mut groups: BTreeMap<Option<usize>, Vec<Episode>> = BTreeMap::new();
                for mut ep in node.episodes.drain(..) {
                    let s = ep.state;
                    let next = sample_row(&mut ep.rng, t, s);
                    let o = (!silent[a]).then(|| sample_row(&mut ep.rng, z, next));
                    let failure = match config.failure {
                        FailureAccounting::BeliefRisk => exp.failure,
                        FailureAccounting::SampledFailure => {
                            if failed[next] && !failed[s] && !model.is_inactive(s) {
                                model.costs.event_factor() * model.costs.failure_cost
                            } else {
                                0.0
                            }
                        }
                    };
                    let rec = YearRecord {
                        year,
                        failure_probability: pf,
                        expected_damage: ed,
                        group: Some(a),
                        observation: o,
                        inspection: disc * exp.inspection,
                        repair: disc * exp.repair,
                        failure: disc * failure,
                    };
                    ep.parts.inspection += rec.inspection;
                    ep.parts.repair += rec.repair;
                    ep.parts.failure += rec.failure;
                    ep.total += rec.cost();
                    if let Some(tr) = ep.trace.as_mut() {
                        tr.push(rec);
                    }
                    ep.state = next;
                    groups.entry(o).or_default().push(ep);
                }
                Ok(Expanded {
                    group: a,
                    children: groups.into_iter().collect(),
                })
            })
            .collect();

        let mut work = Vec::new();
        for (node, ex) in frontier.iter().zip(expanded) {
            let ex = ex?;
            for (o, eps) in ex.children {
                histogram[ex.group] += eps.len() as u64;
                work.push((node.belief.clone(), ex.group, o, eps));
            }
        }
        let children: Vec<Result<Node>> = work
            .into_par_iter()
            .map(|(b, a, o, eps)| {
                let (post, _) = m.belief_update(&b, a, o.unwrap_or(0))?;
                Ok(Node {
                    support: support_of(post.probs()),
                    belief: post,
                    last_group: Some(a),
                    last_observation: o,
                    episodes: eps,
                })
            })
            .collect();
        frontier = children.into_iter().collect::<Result<_>>()?;
    }
    for mut node in frontier {
        let pf = model.failure_probability(node.belief.probs());
        let ed = model.expected_damage(node.belief.probs());
        for mut ep in node.episodes.drain(..) {
            if let Some(tr) = ep.trace.as_mut() {
                tr.push(YearRecord {
                    year: config.horizon,
                    failure_probability: pf,
                    expected_damage: ed,
                    group: None,
                    observation: None,
                    inspection: 0.0,
                    repair: 0.0,
                    failure: 0.0,
                });
            }
            finished.push(ep);
        }
    }
    finished.sort_by_key(|e| e.id);

    let totals: Vec<f64> = finished.iter().map(|e| e.total).collect();
    let (mean, ci95, std_dev) = mean_ci(&totals);
    let n = finished.len() as f64;
    let mut breakdown = CostParts::default();
    for e in &finished {
        breakdown.inspection += e.parts.inspection;
        breakdown.repair += e.parts.repair;
        breakdown.failure += e.parts.failure;
    }
    breakdown.inspection /= n;
    breakdown.repair /= n;
    breakdown.failure /= n;
    let traces = finished
        .into_iter()
        .filter_map(|e| {
            e.trace.map(|records| EpisodeTrace {
                episode: e.id,
                seed: config.seed,
                records,
            })
        })
        .collect();
    Ok(SimulationResult {
        mean,
        ci95,
        std_dev,
        episodes: config.episodes,
        breakdown,
        histogram,
        traces,
        nodes,
    })
}

/// Plot-ready columns of one realization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RealizationSeries {
    pub years: Vec<usize>,
    pub failure_probability: Vec<f64>,
    /// Group chosen at each epoch (`None` at the horizon).
    pub groups: Vec<Option<usize>>,
    /// `(year, outcome)` of every inspection.
    pub inspections: Vec<(usize, usize)>,
    /// Years with an outcome other than "no detection".
    pub detections: Vec<usize>,
}

pub fn realization_report(trace: &EpisodeTrace) -> RealizationSeries {
    let mut out = RealizationSeries::default();
    for r in &trace.records {
        out.years.push(r.year);
        out.failure_probability.push(r.failure_probability);
        out.groups.push(r.group);
        if let Some(o) = r.observation {
            out.inspections.push((r.year + 1, o));
            if o != 0 {
                out.detections.push(r.year + 1);
            }
        }
    }
    out
}

/// Histogram as relative frequencies per group.
pub fn frequencies(histogram: &[u64]) -> Vec<f64> {
    let total: u64 = histogram.iter().sum();
    histogram
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{assemble_finite, assemble_infinite, traditional_groups, AssembleOptions, CostSpec};
    use crate::dbn::{build_scheme, compile_transition, CompileConfig, Variant};
    use crate::fatigue::{CrackGrowthParams, PodCurve};

    fn model(c_i: f64, c_r: f64, c_f: f64, gamma: f64) -> ImPomdp {
        build(c_i, c_r, c_f, gamma, false)
    }

    fn build(c_i: f64, c_r: f64, c_f: f64, gamma: f64, finite: bool) -> ImPomdp {
        let p = CrackGrowthParams::default();
        let s = build_scheme(Variant::DeteriorationRate, 15, None, &p).unwrap();
        let d = compile_transition(
            &s,
            &p,
            &CompileConfig {
                trajectories: 20_000,
                ..Default::default()
            },
        )
        .unwrap();
        let g = traditional_groups(c_i, c_r, PodCurve::new(8.0).unwrap());
        let c = CostSpec::new(c_f, gamma);
        let o = AssembleOptions::default();
        if finite {
            assemble_finite(&d, &g, &c, 30, &o).unwrap()
        } else {
            assemble_infinite(&d, &g, &c, &o).unwrap()
        }
    }

    struct Alternate;
    impl Policy for Alternate {
        fn act(&self, _: &ImPomdp, ctx: &DecisionContext) -> Result<usize> {
            Ok(match ctx.last_observation {
                Some(o) if o > 0 => 2,
                _ => (ctx.year % 3 == 2) as usize,
            })
        }
    }

    #[test]
    fn zero_cost_model_gives_zero() {
        let m = model(0.0, 0.0, 0.0, 0.95);
        let r = simulate_policy(&m, &Alternate, &SimulationConfig::new(200, 30, 1)).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.ci95, 0.0);
    }

    #[test]
    fn blind_policy_has_no_variance() {
        let m = model(1.0, 10.0, 100.0, 0.95);
        let r = simulate_policy(&m, &FixedPolicy(0), &SimulationConfig::new(100, 30, 3)).unwrap();
        assert!(r.mean > 0.0);
        assert!(r.std_dev < 1e-12);
        assert_eq!(r.nodes, 30);
    }

    #[test]
    fn histogram_and_trace_bookkeeping() {
        let m = build(1.0, 50.0, 1e3, 1.0, true);
        let mut cfg = SimulationConfig::new(500, 30, 9);
        cfg.keep_traces = 1;
        let r = simulate_policy(&m, &Alternate, &cfg).unwrap();
        assert_eq!(r.histogram.iter().sum::<u64>(), 500 * 30);
        let tr = &r.traces[0];
        let years: Vec<usize> = tr.records.iter().map(|r| r.year).collect();
        assert_eq!(years, (0..=30).collect::<Vec<_>>());
        assert!((r.breakdown.total() - r.mean).abs() < 1e-9);

        let mut one = SimulationConfig::new(1, 30, 9);
        one.keep_traces = 1;
        let r1 = simulate_policy(&m, &Alternate, &one).unwrap();
        assert_eq!(r1.mean, r1.traces[0].total());
    }

    #[test]
    fn invalid_group_names_episode_and_year() {
        let m = model(1.0, 50.0, 1e3, 0.95);
        struct Bad;
        impl Policy for Bad {
            fn act(&self, _: &ImPomdp, ctx: &DecisionContext) -> Result<usize> {
                Ok(if ctx.year == 4 { 9 } else { 0 })
            }
        }
        let e = simulate_policy(&m, &Bad, &SimulationConfig::new(10, 30, 0)).unwrap_err();
        assert_eq!(
            e,
            Error::InvalidPolicyAction {
                group: 9,
                episode: 0,
                year: 4
            }
        );
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let m = model(1.0, 50.0, 1e3, 0.95);
        let cfg = SimulationConfig::new(2000, 30, 17);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_policy(&m, &Alternate, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.ci95, b.ci95);
        assert_eq!(a.histogram, b.histogram);
    }

    #[test]
    fn realization_markers() {
        let m = model(1.0, 50.0, 1e3, 0.95);
        let mut cfg = SimulationConfig::new(300, 30, 5);
        cfg.keep_traces = 300;
        let r = simulate_policy(&m, &Alternate, &cfg).unwrap();
        let quiet = simulate_policy(&m, &FixedPolicy(0), &SimulationConfig {
            keep_traces: 1,
            ..cfg
        })
        .unwrap();
        assert!(realization_report(&quiet.traces[0]).inspections.is_empty());
        let with_detection = r
            .traces
            .iter()
            .find(|t| !realization_report(t).detections.is_empty())
            .expect("some episode detects");
        let rep = realization_report(with_detection);
        let y = rep.detections[0];
        assert_eq!(rep.groups[y], Some(2));
    }
}
