//! Point-based value iteration with a lower bound of alpha vectors and a
//! sawtooth upper bound. The default search descends gap-driven trials from
//! the initial belief (heuristic search value iteration); a randomized
//! backup mode over a fixed reachable belief set is also available.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::builder::ImPomdp;
use crate::container;
use crate::error::{Error, Result};
use crate::eval::{uninformative, DecisionContext, Policy};
use crate::pomdp::{AlphaVector, AlphaVectorSet, BeliefState, DiscretePomdp};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    #[default]
    GapDriven,
    /// Randomized backups over beliefs gathered by random exploration.
    RandomReachable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpperInit {
    /// Fully observable MDP values at the corners.
    Mdp,
    /// Fast informed bound; never looser than the MDP bound.
    #[default]
    Fib,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub time_budget: f64,
    pub target_gap: f64,
    pub target_gap_relative: f64,
    /// Cap on stored upper-bound points (gap-driven) or on the sampled
    /// belief set (randomized mode).
    pub max_belief_points: usize,
    pub strategy: SamplingStrategy,
    /// Randomized mode: beliefs backed up between trace records.
    pub backup_batch: usize,
    pub prune_tolerance: f64,
    /// Trials stop once the node gap is below this fraction of the root gap.
    pub trial_gap_fraction: f64,
    pub max_depth: usize,
    pub upper_init: UpperInit,
    /// Stop after this many backups (for reproducible runs).
    pub max_backups: Option<usize>,
    /// Interleave gap-driven trials with rollouts of the lower-bound policy.
    pub policy_rollouts: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_budget: 120.0,
            target_gap: 1e-6,
            target_gap_relative: 1e-4,
            max_belief_points: 200_000,
            strategy: SamplingStrategy::GapDriven,
            backup_batch: 100,
            prune_tolerance: 1e-9,
            trial_gap_fraction: 0.5,
            max_depth: 400,
            upper_init: UpperInit::Fib,
            max_backups: None,
            policy_rollouts: true,
            seed: 2021,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_budget > 0.0) {
            return Err(Error::InvalidParameter("time budget must be positive".into()));
        }
        if !(self.target_gap >= 0.0) || !(self.target_gap_relative >= 0.0) {
            return Err(Error::InvalidParameter("target gap must be non-negative".into()));
        }
        if !(self.trial_gap_fraction > 0.0 && self.trial_gap_fraction < 1.0) {
            return Err(Error::InvalidParameter("trial gap fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Stored upper-bound point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperPoint {
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
    pub value: f64,
    /// `value − Σ b(s) corner(s)` (≤ 0).
    delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub corner: Vec<f64>,
    /// Per-action informed-bound vectors (empty for the MDP variant).
    pub informed: Vec<Vec<f64>>,
    pub points: Vec<UpperPoint>,
}

impl UpperBound {
    pub fn value(&self, b: &[f64], support: &[usize]) -> f64 {
        let cb: f64 = support.iter().map(|&s| b[s] * self.corner[s]).sum();
        let mut best = cb;
        if !self.informed.is_empty() {
            let fib = self
                .informed
                .iter()
                .map(|q| support.iter().map(|&s| b[s] * q[s]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            best = best.min(fib);
        }
        for p in &self.points {
            let mut ratio = f64::INFINITY;
            for (&s, &q) in p.support.iter().zip(&p.probs) {
                let r = b[s] / q;
                if r < ratio {
                    ratio = r;
                    if ratio == 0.0 {
                        break;
                    }
                }
            }
            if ratio > 0.0 {
                best = best.min(cb + p.delta * ratio);
            }
        }
        best
    }

    fn add(&mut self, b: &[f64], support: &[usize], value: f64) {
        let cb: f64 = support.iter().map(|&s| b[s] * self.corner[s]).sum();
        self.points.push(UpperPoint {
            support: support.to_vec(),
            probs: support.iter().map(|&s| b[s]).collect(),
            value,
            delta: value - cb,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: AlphaVectorSet,
    pub upper: UpperBound,
    pub lower_at_initial: f64,
    pub upper_at_initial: f64,
}

impl BoundPair {
    pub fn gap(&self) -> f64 {
        self.upper_at_initial - self.lower_at_initial
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub seconds: f64,
    pub lower: f64,
    pub upper: f64,
    pub vectors: usize,
    pub backups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub bounds: BoundPair,
    pub trace: Vec<TraceRow>,
    pub backups: usize,
    pub converged: bool,
    /// Set when the budget ran out before the first backup.
    pub no_backup: bool,
}

/// Value iteration for a stationary per-state recursion; returns the fixed
/// point of `v ↦ f(v)` in sup norm.
fn iterate<F: FnMut(&[f64]) -> Vec<f64>>(
    model: &DiscretePomdp,
    start: Vec<f64>,
    mut f: F,
) -> Result<Vec<f64>> {
    let mut v = start;
    let scale = model
        .reward
        .iter()
        .flatten()
        .fold(0.0f64, |m, r| m.max(r.abs()))
        .max(1.0);
    let max_iter = match model.horizon {
        Some(h) if model.discount >= 1.0 => h + 3,
        _ => 100_000,
    };
    for _ in 0..max_iter {
        let next = f(&v);
        let diff = next
            .iter()
            .zip(&v)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if !diff.is_finite() {
            return Err(Error::Divergent("non-finite values".into()));
        }
        if diff <= 1e-13 * scale {
            return Ok(v);
        }
    }
    if model.discount >= 1.0 {
        return Err(Error::Divergent(
            "value iteration did not settle; undiscounted model without absorbing end".into(),
        ));
    }
    Ok(v)
}

/// One blind (fixed-action) vector per action.
pub fn blind_vectors(model: &DiscretePomdp) -> Result<Vec<AlphaVector>> {
    let min_r = model
        .reward
        .iter()
        .flatten()
        .fold(0.0f64, |m, &r| m.min(r));
    (0..model.num_actions)
        .map(|a| {
            let start = if model.terminal_states.is_empty() {
                vec![min_r / (1.0 - model.discount); model.num_states]
            } else {
                vec![0.0; model.num_states]
            };
            let v = iterate(model, start, |v| {
                let tv = model.transition[a].right_multiply(v);
                model.reward[a]
                    .iter()
                    .zip(tv)
                    .map(|(r, x)| r + model.discount * x)
                    .collect()
            })?;
            Ok(AlphaVector::new(v, a))
        })
        .collect()
}

/// Fully observable MDP values.
pub fn mdp_values(model: &DiscretePomdp) -> Result<Vec<f64>> {
    let max_r = model
        .reward
        .iter()
        .flatten()
        .fold(0.0f64, |m, &r| m.max(r));
    // Layered models settle exactly from zero; stationary ones are approached
    // from the safe side.
    let start = if model.terminal_states.is_empty() {
        vec![max_r / (1.0 - model.discount); model.num_states]
    } else {
        vec![0.0; model.num_states]
    };
    iterate(model, start, |v| {
        let mut out = vec![f64::NEG_INFINITY; model.num_states];
        for a in 0..model.num_actions {
            let tv = model.transition[a].right_multiply(v);
            for s in 0..model.num_states {
                out[s] = out[s].max(model.reward[a][s] + model.discount * tv[s]);
            }
        }
        out
    })
}

/// Fast informed bound vectors, started from the MDP values.
pub fn informed_bound(model: &DiscretePomdp, mdp: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = model.num_states;
    let na = model.num_actions;
    let mut q: Vec<Vec<f64>> = (0..na)
        .map(|a| {
            let tv = model.transition[a].right_multiply(mdp);
            (0..n)
                .map(|s| model.reward[a][s] + model.discount * tv[s])
                .collect()
        })
        .collect();
    let scale = model
        .reward
        .iter()
        .flatten()
        .fold(0.0f64, |m, r| m.max(r.abs()))
        .max(1.0);
    let max_iter = match model.horizon {
        Some(h) => h + 3,
        None => 100_000,
    };
    for _ in 0..max_iter {
        let mut next = Vec::with_capacity(na);
        for a in 0..na {
            let z = &model.observation[a];
            let t = &model.transition[a];
            // Σ_o max_a' Σ_s' T(s,s') Z(s',o) Q_a'(s')
            let mut acc = vec![0.0; n];
            for o in 0..model.num_observations {
                let mut best = vec![f64::NEG_INFINITY; n];
                let zo: Vec<f64> = (0..n).map(|s| z.get(s, o)).collect();
                if zo.iter().all(|&p| p == 0.0) {
                    continue;
                }
                for qa in &q {
                    let w: Vec<f64> = qa.iter().zip(&zo).map(|(x, p)| x * p).collect();
                    let tw = t.right_multiply(&w);
                    for s in 0..n {
                        best[s] = best[s].max(tw[s]);
                    }
                }
                for s in 0..n {
                    acc[s] += best[s];
                }
            }
            next.push(
                (0..n)
                    .map(|s| model.reward[a][s] + model.discount * acc[s])
                    .collect::<Vec<f64>>(),
            );
        }
        let diff = next
            .iter()
            .flatten()
            .zip(q.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if !diff.is_finite() {
            return Err(Error::Divergent("informed bound diverged".into()));
        }
        if diff <= 1e-12 * scale {
            break;
        }
    }
    Ok(q)
}

/// Blind lower bound and informed (or MDP) upper bound.
pub fn initialize_bounds(model: &DiscretePomdp, init: UpperInit) -> Result<BoundPair> {
    model.ensure_valid()?;
    let lower = AlphaVectorSet::new(blind_vectors(model)?);
    let mdp = mdp_values(model)?;
    let (corner, informed) = match init {
        UpperInit::Mdp => (mdp, vec![]),
        UpperInit::Fib => {
            let q = informed_bound(model, &mdp)?;
            let corner = (0..model.num_states)
                .map(|s| q.iter().map(|v| v[s]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            (corner, q)
        }
    };
    let upper = UpperBound {
        corner,
        informed,
        points: vec![],
    };
    let b0 = model.initial_belief.probs();
    let sup = support_of(b0);
    let lower_at_initial = lower_value(&lower, b0, &sup).0;
    let upper_at_initial = upper.value(b0, &sup);
    Ok(BoundPair {
        lower,
        upper,
        lower_at_initial,
        upper_at_initial,
    })
}

fn support_of(b: &[f64]) -> Vec<usize> {
    b.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Best vector at a belief (lowest index on ties).
fn lower_value(set: &AlphaVectorSet, b: &[f64], support: &[usize]) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, v) in set.vectors.iter().enumerate() {
        let x: f64 = support.iter().map(|&s| b[s] * v.values[s]).sum();
        if x > best {
            best = x;
            idx = i;
        }
    }
    (best, idx)
}

#[derive(Clone)]
struct Belief {
    dense: Vec<f64>,
    support: Vec<usize>,
}

impl Belief {
    fn new(dense: Vec<f64>) -> Self {
        let support = support_of(&dense);
        Self { dense, support }
    }
}

struct Child {
    obs: usize,
    prob: f64,
    belief: Belief,
}

struct Solver<'a> {
    model: &'a DiscretePomdp,
    silent: Vec<bool>,
    lower: AlphaVectorSet,
    upper: UpperBound,
    tol: f64,
    max_points: usize,
    backups: usize,
}

impl<'a> Solver<'a> {
    fn children(&self, b: &Belief, a: usize) -> Vec<Child> {
        let pred = self.model.transition[a].left_multiply(&b.dense);
        if self.silent[a] {
            return vec![Child {
                obs: 0,
                prob: 1.0,
                belief: Belief::new(pred),
            }];
        }
        let sup = support_of(&pred);
        let z = &self.model.observation[a];
        let mut out = Vec::new();
        for o in 0..self.model.num_observations {
            let mut post = vec![0.0; pred.len()];
            let mut norm = 0.0;
            for &s in &sup {
                let p = pred[s] * z.get(s, o);
                post[s] = p;
                norm += p;
            }
            if norm > 0.0 {
                let support: Vec<usize> = sup.iter().copied().filter(|&s| post[s] > 0.0).collect();
                for &s in &support {
                    post[s] /= norm;
                }
                out.push(Child {
                    obs: o,
                    prob: norm,
                    belief: Belief {
                        dense: post,
                        support,
                    },
                });
            }
        }
        out
    }

    fn lb(&self, b: &Belief) -> f64 {
        lower_value(&self.lower, &b.dense, &b.support).0
    }

    fn ub(&self, b: &Belief) -> f64 {
        self.upper.value(&b.dense, &b.support)
    }

    fn reward(&self, b: &Belief, a: usize) -> f64 {
        b.support
            .iter()
            .map(|&s| b.dense[s] * self.model.reward[a][s])
            .sum()
    }

    /// Upper-bound Q values at `b` from precomputed children.
    fn q_upper(&self, b: &Belief, kids: &[Vec<Child>]) -> Vec<f64> {
        kids.iter()
            .enumerate()
            .map(|(a, ch)| {
                self.reward(b, a)
                    + self.model.discount * ch.iter().map(|c| c.prob * self.ub(&c.belief)).sum::<f64>()
            })
            .collect()
    }

    /// Point-based backup of the lower bound at `b`; returns the new vector.
    fn backup_vector(&self, b: &Belief, kids: &[Vec<Child>]) -> AlphaVector {
        let n = self.model.num_states;
        let mut best: Option<(f64, AlphaVector)> = None;
        for (a, ch) in kids.iter().enumerate() {
            let z = &self.model.observation[a];
            let u: Vec<f64> = if self.silent[a] {
                let (_, i) = lower_value(&self.lower, &ch[0].belief.dense, &ch[0].belief.support);
                self.lower.vectors[i].values.clone()
            } else {
                // Observations that cannot occur take the vector best at
                // the predicted belief.
                let pred = self.model.transition[a].left_multiply(&b.dense);
                let ps = support_of(&pred);
                let fallback = lower_value(&self.lower, &pred, &ps).1;
                let mut choice = vec![fallback; self.model.num_observations];
                for c in ch {
                    choice[c.obs] = lower_value(&self.lower, &c.belief.dense, &c.belief.support).1;
                }
                let mut u = vec![0.0; n];
                for (sp, us) in u.iter_mut().enumerate() {
                    let (cols, vals) = z.row(sp);
                    *us = cols
                        .iter()
                        .zip(vals)
                        .map(|(&o, &p)| p * self.lower.vectors[choice[o]].values[sp])
                        .sum();
                }
                u
            };
            let tu = self.model.transition[a].right_multiply(&u);
            let values: Vec<f64> = self.model.reward[a]
                .iter()
                .zip(tu)
                .map(|(r, x)| r + self.model.discount * x)
                .collect();
            let v = b.support.iter().map(|&s| b.dense[s] * values[s]).sum::<f64>();
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, AlphaVector::new(values, a)));
            }
        }
        best.expect("model has actions").1
    }

    fn add_vector(&mut self, alpha: AlphaVector, b: &Belief) -> bool {
        let tol = self.tol;
        let current = self.lb(b);
        if alpha.dot(&b.dense) <= current + tol {
            return false;
        }
        if self
            .lower
            .vectors
            .iter()
            .any(|v| v.values.iter().zip(&alpha.values).all(|(x, y)| *x >= *y - tol))
        {
            return false;
        }
        self.lower
            .vectors
            .retain(|v| !v.values.iter().zip(&alpha.values).all(|(x, y)| *y >= *x + tol));
        self.lower.vectors.push(alpha);
        true
    }

    fn backup(&mut self, b: &Belief, kids: &[Vec<Child>], update_upper: bool) {
        let alpha = self.backup_vector(b, kids);
        self.add_vector(alpha, b);
        if update_upper {
            let q = self.q_upper(b, kids);
            let v = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if v < self.ub(b) - self.tol && self.upper.points.len() < self.max_points {
                self.upper.add(&b.dense, &b.support, v);
            }
        }
        self.backups += 1;
    }

    fn all_children(&self, b: &Belief) -> Vec<Vec<Child>> {
        (0..self.model.num_actions).map(|a| self.children(b, a)).collect()
    }

    /// One gap-driven trial; returns false when the budget ran out.
    fn trial(
        &mut self,
        b: &Belief,
        depth: usize,
        eps: f64,
        cfg: &SolverConfig,
        start: &Instant,
    ) -> bool {
        let threshold = eps * self.model.discount.powi(-(depth as i32));
        if self.ub(b) - self.lb(b) <= threshold || depth >= cfg.max_depth {
            return true;
        }
        let kids = self.all_children(b);
        let q = self.q_upper(b, &kids);
        let mut a_star = 0;
        for a in 1..q.len() {
            if q[a] > q[a_star] {
                a_star = a;
            }
        }
        let next_threshold = threshold / self.model.discount;
        let mut pick: Option<(f64, usize)> = None;
        for (i, c) in kids[a_star].iter().enumerate() {
            let excess = c.prob * (self.ub(&c.belief) - self.lb(&c.belief) - next_threshold);
            if pick.is_none_or(|(e, _)| excess > e) {
                pick = Some((excess, i));
            }
        }
        let mut in_time = true;
        if let Some((e, i)) = pick {
            if e > 0.0 {
                let child = kids[a_star][i].belief.clone();
                in_time = self.trial(&child, depth + 1, eps, cfg, start);
            }
        }
        self.backup(b, &kids, true);
        in_time && !budget_spent(cfg, start, self.backups)
    }

    /// Follows the current lower-bound policy with sampled observations and
    /// backs up the visited beliefs on the way back.
    fn rollout(
        &mut self,
        b: &Belief,
        depth: usize,
        max_depth: usize,
        rng: &mut crate::rng::StreamRng,
        cfg: &SolverConfig,
        start: &Instant,
    ) -> bool {
        if depth >= max_depth || self.ub(b) - self.lb(b) <= self.tol {
            return true;
        }
        let kids = self.all_children(b);
        let mut a_star = 0;
        let mut best = f64::NEG_INFINITY;
        for (a, ch) in kids.iter().enumerate() {
            let q = self.reward(b, a)
                + self.model.discount * ch.iter().map(|c| c.prob * self.lb(&c.belief)).sum::<f64>();
            if q > best {
                best = q;
                a_star = a;
            }
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = kids[a_star].len() - 1;
        for (i, c) in kids[a_star].iter().enumerate() {
            acc += c.prob;
            if u < acc {
                pick = i;
                break;
            }
        }
        let child = kids[a_star][pick].belief.clone();
        let in_time = self.rollout(&child, depth + 1, max_depth, rng, cfg, start);
        self.backup(b, &kids, true);
        in_time && !budget_spent(cfg, start, self.backups)
    }
}

fn budget_spent(cfg: &SolverConfig, start: &Instant, backups: usize) -> bool {
    start.elapsed().as_secs_f64() >= cfg.time_budget
        || cfg.max_backups.is_some_and(|m| backups >= m)
}

/// Runs the configured search from the model's initial belief.
pub fn solve(model: &DiscretePomdp, config: &SolverConfig) -> Result<SolveOutput> {
    config.validate()?;
    let start = Instant::now();
    let init = initialize_bounds(model, config.upper_init)?;
    let mut solver = Solver {
        model,
        silent: model.observation.iter().map(uninformative).collect(),
        lower: init.lower,
        upper: init.upper,
        tol: config.prune_tolerance,
        max_points: config.max_belief_points,
        backups: 0,
    };
    let root = Belief::new(model.initial_belief.probs().to_vec());
    let mut trace = vec![TraceRow {
        seconds: start.elapsed().as_secs_f64(),
        lower: solver.lb(&root),
        upper: solver.ub(&root),
        vectors: solver.lower.len(),
        backups: 0,
    }];
    let done = |lo: f64, up: f64| {
        let gap = up - lo;
        gap <= config.target_gap || gap <= config.target_gap_relative * lo.abs().max(up.abs())
    };
    let mut converged = done(trace[0].lower, trace[0].upper);
    let record = |s: &Solver, trace: &mut Vec<TraceRow>| {
        let lo = s.lb(&root);
        let up = s.ub(&root);
        trace.push(TraceRow {
            seconds: start.elapsed().as_secs_f64(),
            lower: lo,
            upper: up,
            vectors: s.lower.len(),
            backups: s.backups,
        });
        (lo, up)
    };

    match config.strategy {
        SamplingStrategy::GapDriven => {
            let mut rng = stream_rng(config.seed, 2);
            let rollout_depth = model.horizon.map_or_else(
                || ((1e-2f64).ln() / model.discount.ln()).ceil() as usize,
                |h| h + 1,
            );
            let mut trials = 0usize;
            while !converged && !budget_spent(config, &start, solver.backups) {
                let gap = solver.ub(&root) - solver.lb(&root);
                let eps = (config.trial_gap_fraction * gap).max(config.target_gap);
                let before = solver.backups;
                trials += 1;
                let in_time = if config.policy_rollouts && trials % 2 == 0 {
                    solver.rollout(&root, 0, rollout_depth.min(config.max_depth), &mut rng, config, &start)
                } else {
                    solver.trial(&root, 0, eps, config, &start)
                };
                if solver.backups == before {
                    // Nothing left to refine at this resolution.
                    let kids = solver.all_children(&root);
                    solver.backup(&root, &kids, true);
                }
                let (lo, up) = record(&solver, &mut trace);
                converged = done(lo, up);
                if !in_time {
                    break;
                }
            }
        }
        SamplingStrategy::RandomReachable => {
            let beliefs = explore(model, config.max_belief_points.min(5000), config.seed)?;
            let mut rng = stream_rng(config.seed, 1);
            let mut values: Vec<f64> = beliefs.iter().map(|b| solver.lb(b)).collect();
            'stages: while !budget_spent(config, &start, solver.backups) {
                let stage_start = values.clone();
                let mut todo: Vec<usize> = (0..beliefs.len()).collect();
                let mut since = 0;
                while !todo.is_empty() {
                    let k = rng.random_range(0..todo.len());
                    let i = todo.swap_remove(k);
                    let kids = solver.all_children(&beliefs[i]);
                    solver.backup(&beliefs[i], &kids, false);
                    let newest = solver.lower.vectors.last().expect("non-empty");
                    for (j, b) in beliefs.iter().enumerate() {
                        let x: f64 = b.support.iter().map(|&s| b.dense[s] * newest.values[s]).sum();
                        values[j] = values[j].max(x);
                    }
                    todo.retain(|&j| values[j] <= stage_start[j] + config.prune_tolerance);
                    since += 1;
                    if since >= config.backup_batch {
                        record(&solver, &mut trace);
                        since = 0;
                    }
                    if budget_spent(config, &start, solver.backups) {
                        break 'stages;
                    }
                }
                let (lo, up) = record(&solver, &mut trace);
                if values
                    .iter()
                    .zip(&stage_start)
                    .all(|(v, s)| *v <= s + config.prune_tolerance)
                {
                    converged = done(lo, up);
                    break;
                }
            }
        }
    }
    let (lo, up) = record(&solver, &mut trace);
    converged = converged || done(lo, up);
    Ok(SolveOutput {
        no_backup: solver.backups == 0,
        backups: solver.backups,
        converged,
        trace,
        bounds: BoundPair {
            lower: solver.lower,
            upper: solver.upper,
            lower_at_initial: lo,
            upper_at_initial: up,
        },
    })
}

/// Beliefs reached by random actions with observations drawn from a
/// sampled ground truth, deduplicated.
fn explore(model: &DiscretePomdp, count: usize, seed: u64) -> Result<Vec<Belief>> {
    let mut out: Vec<Belief> = vec![Belief::new(model.initial_belief.probs().to_vec())];
    let depth = model.horizon.unwrap_or(60).max(1);
    let mut episode = 0u64;
    while out.len() < count && episode < 50 * count as u64 {
        let mut rng = stream_rng(seed, episode);
        episode += 1;
        let mut b = model.initial_belief.clone();
        let mut s = sample(&mut rng, b.probs().iter().copied().enumerate());
        for _ in 0..depth {
            let a = rng.random_range(0..model.num_actions);
            let (cols, vals) = model.transition[a].row(s);
            s = sample(&mut rng, cols.iter().copied().zip(vals.iter().copied()));
            let (cols, vals) = model.observation[a].row(s);
            let o = sample(&mut rng, cols.iter().copied().zip(vals.iter().copied()));
            b = model.belief_update(&b, a, o)?.0;
            if !out.iter().any(|x| l1(&x.dense, b.probs()) < 1e-9) {
                out.push(Belief::new(b.probs().to_vec()));
                if out.len() >= count {
                    break;
                }
            }
        }
    }
    let mut rng = stream_rng(seed, u64::MAX);
    out[1..].shuffle(&mut rng);
    Ok(out)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sample(rng: &mut impl Rng, items: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in items {
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

/// Single exact point-based backup at `b`: returns the updated bounds.
pub fn backup(model: &DiscretePomdp, b: &BeliefState, bounds: &BoundPair) -> Result<BoundPair> {
    if b.len() != model.num_states {
        return Err(Error::InvalidBelief("belief length does not match model".into()));
    }
    let mut solver = Solver {
        model,
        silent: model.observation.iter().map(uninformative).collect(),
        lower: bounds.lower.clone(),
        upper: bounds.upper.clone(),
        tol: 1e-12,
        max_points: usize::MAX,
        backups: 0,
    };
    let belief = Belief::new(b.probs().to_vec());
    let kids = solver.all_children(&belief);
    solver.backup(&belief, &kids, true);
    let b0 = Belief::new(model.initial_belief.probs().to_vec());
    Ok(BoundPair {
        lower_at_initial: solver.lb(&b0),
        upper_at_initial: solver.ub(&b0),
        lower: solver.lower,
        upper: solver.upper,
    })
}

/// Greedy policy of a lower-bound vector set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPolicy {
    pub vectors: AlphaVectorSet,
}

const POLICY_KIND: [u8; 4] = *b"ALPH";
const POLICY_VERSION: u32 = 1;

impl AlphaPolicy {
    pub fn action(&self, b: &BeliefState) -> Result<usize> {
        if self.vectors.is_empty() {
            return Err(Error::UninitializedPolicy);
        }
        let sup = support_of(b.probs());
        let (_, i) = lower_value(&self.vectors, b.probs(), &sup);
        Ok(self.vectors.vectors[i].action)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(POLICY_KIND, POLICY_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::decode(POLICY_KIND, POLICY_VERSION, bytes)
    }
}

pub fn extract_policy(bounds: &BoundPair) -> Result<AlphaPolicy> {
    if bounds.lower.is_empty() {
        return Err(Error::UninitializedPolicy);
    }
    Ok(AlphaPolicy {
        vectors: bounds.lower.clone(),
    })
}

impl Policy for AlphaPolicy {
    fn act(&self, _: &ImPomdp, ctx: &DecisionContext) -> Result<usize> {
        if self.vectors.is_empty() {
            return Err(Error::UninitializedPolicy);
        }
        let (_, i) = lower_value(&self.vectors, ctx.belief.probs(), ctx.support);
        Ok(self.vectors.vectors[i].action)
    }
}
