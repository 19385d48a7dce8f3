//! Risk-based inspection heuristics: inspection plans combined with
//! maintenance rules, scored analytically along the no-detection branch or
//! by simulation on an assembled model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::{ActionObservationGroup, CostSpec, ImPomdp, Maintenance};
use crate::dbn::{forward_step, CompiledDbn};
use crate::error::{Error, Result};
use crate::eval::{simulate_policy, DecisionContext, Policy, SimulationConfig};
use crate::fatigue::Inspection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InspectionPlan {
    None,
    /// Inspections at years Δ, 2Δ, ... up to the horizon.
    Equidistant { interval: usize },
    /// Inspect in year t when the next annual failure probability would
    /// exceed the threshold.
    Threshold { delta_pf: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    FailureProbability,
    ExpectedDamage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaintenanceRule {
    /// Perfect repair after any outcome other than "no detection".
    RepairOnDetection,
    /// Action per inspection outcome.
    ObservationMap(Vec<Maintenance>),
    /// After an inspection, act if the belief metric exceeds the threshold.
    Threshold {
        metric: Metric,
        threshold: f64,
        action: Maintenance,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicRule {
    pub plan: InspectionPlan,
    /// Name of the do-nothing group that carries the plan's inspection.
    pub inspection_group: String,
    pub maintenance: MaintenanceRule,
}

impl HeuristicRule {
    pub fn new(plan: InspectionPlan, inspection_group: &str, maintenance: MaintenanceRule) -> Self {
        Self {
            plan,
            inspection_group: inspection_group.to_string(),
            maintenance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.plan {
            InspectionPlan::Equidistant { interval } if interval < 1 => {
                return Err(Error::InvalidParameter("inspection interval must be ≥ 1".into()))
            }
            InspectionPlan::Threshold { delta_pf } if !(delta_pf > 0.0) => {
                return Err(Error::InvalidParameter("ΔP_F threshold must be > 0".into()))
            }
            _ => {}
        }
        if let MaintenanceRule::Threshold { threshold, .. } = self.maintenance {
            if !(threshold > 0.0) {
                return Err(Error::InvalidParameter("maintenance threshold must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Short label such as `EQ Δ=4 DN-I` or `THR 3e-4 DN-I2`.
    pub fn label(&self) -> String {
        let plan = match self.plan {
            InspectionPlan::None => "NO-INS".to_string(),
            InspectionPlan::Equidistant { interval } => format!("EQ {interval}"),
            InspectionPlan::Threshold { delta_pf } => format!("THR {delta_pf:e}"),
        };
        let m = match &self.maintenance {
            MaintenanceRule::RepairOnDetection => "RP-D".to_string(),
            MaintenanceRule::ObservationMap(map) => {
                let s: Vec<&str> = map.iter().map(|m| maintenance_code(*m)).collect();
                format!("map[{}]", s.join(","))
            }
            MaintenanceRule::Threshold {
                metric,
                threshold,
                action,
            } => format!(
                "{} {}>{threshold:e}",
                maintenance_code(*action),
                match metric {
                    Metric::FailureProbability => "PF",
                    Metric::ExpectedDamage => "Ed",
                }
            ),
        };
        format!("{plan} {} {m}", self.inspection_group)
    }

    /// Grid ordering key used to break cost ties: smaller intervals and
    /// larger thresholds come first.
    fn tie_key(&self) -> (u8, f64) {
        match self.plan {
            InspectionPlan::Equidistant { interval } => (0, interval as f64),
            InspectionPlan::Threshold { delta_pf } => (1, -delta_pf),
            InspectionPlan::None => (2, 0.0),
        }
    }
}

fn maintenance_code(m: Maintenance) -> &'static str {
    match m {
        Maintenance::DoNothing => "DN",
        Maintenance::MinorRepair => "mRP",
        Maintenance::PerfectRepair => "pRP",
    }
}

fn severity(m: Maintenance) -> u8 {
    match m {
        Maintenance::DoNothing => 0,
        Maintenance::MinorRepair => 1,
        Maintenance::PerfectRepair => 2,
    }
}

/// All outcome-to-action maps that never pick a milder action for a more
/// severe outcome. `actions` is sorted by severity internally.
pub fn monotone_maps(n_outcomes: usize, actions: &[Maintenance]) -> Vec<Vec<Maintenance>> {
    let mut acts = actions.to_vec();
    acts.sort_by_key(|&a| severity(a));
    acts.dedup();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n_outcomes);
    fn rec(
        acts: &[Maintenance],
        n: usize,
        from: usize,
        cur: &mut Vec<Maintenance>,
        out: &mut Vec<Vec<Maintenance>>,
    ) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in from..acts.len() {
            cur.push(acts[i]);
            rec(acts, n, i, cur, out);
            cur.pop();
        }
    }
    rec(&acts, n_outcomes, 0, &mut cur, &mut out);
    out
}

/// Expected discounted costs; `total = inspection + repair + failure`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub inspection: f64,
    pub repair: f64,
    pub failure: f64,
    pub total: f64,
    /// 95% half-width for simulated estimates.
    pub ci95: Option<f64>,
}

fn find_group<'a>(
    groups: &'a [ActionObservationGroup],
    name: &str,
) -> Result<(usize, &'a ActionObservationGroup)> {
    groups
        .iter()
        .enumerate()
        .find(|(_, g)| g.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown group {name}")))
}

/// Single-branch evaluation along the no-repair outcomes of every
/// inspection (the repaired component is assumed to behave like an
/// inspected one without findings).
pub fn evaluate_analytic(
    dbn: &CompiledDbn,
    groups: &[ActionObservationGroup],
    rule: &HeuristicRule,
    costs: &CostSpec,
) -> Result<CostBreakdown> {
    rule.validate()?;
    costs.validate()?;
    let horizon = dbn.horizon();
    let gamma = costs.discount;
    let (inspection, c_i) = match rule.plan {
        InspectionPlan::None => (None, 0.0),
        _ => {
            let (_, g) = find_group(groups, &rule.inspection_group)?;
            let ins = g.inspection.clone().ok_or_else(|| {
                Error::InvalidParameter(format!("group {} does not inspect", g.name))
            })?;
            (Some(ins), g.inspection_cost)
        }
    };
    let c_r = groups
        .iter()
        .find(|g| g.maintenance == Maintenance::PerfectRepair && !g.inspects())
        .map(|g| g.repair_cost);
    // Outcomes that trigger a repair.
    let repair_outcomes: Vec<bool> = match (&inspection, &rule.maintenance) {
        (None, _) => vec![],
        (Some(ins), MaintenanceRule::RepairOnDetection) => {
            (0..ins.num_outcomes()).map(|o| o != 0).collect()
        }
        (Some(ins), MaintenanceRule::ObservationMap(map)) => {
            if map.len() != ins.num_outcomes() {
                return Err(Error::InvalidParameter(
                    "observation map does not cover every outcome".into(),
                ));
            }
            if map.contains(&Maintenance::MinorRepair) {
                return Err(Error::UnsupportedAction(
                    "single-branch evaluation handles perfect repairs only".into(),
                ));
            }
            map.iter().map(|&m| m == Maintenance::PerfectRepair).collect()
        }
        (Some(_), MaintenanceRule::Threshold { .. }) => {
            return Err(Error::UnsupportedAction(
                "belief-threshold maintenance needs simulation".into(),
            ))
        }
    };
    let c_r = if repair_outcomes.iter().any(|&r| r) {
        c_r.ok_or_else(|| Error::InvalidParameter("no perfect-repair group".into()))?
    } else {
        0.0
    };
    // Per-cell likelihood of the continuing (no-repair) outcomes.
    let keep: Vec<f64> = match &inspection {
        Some(ins) => {
            let per_cell: Vec<f64> = (0..dbn.scheme.n_d())
                .map(|i| {
                    let l = ins.likelihoods(dbn.scheme.d_representative(i));
                    l.iter()
                        .zip(&repair_outcomes)
                        .filter(|(_, &r)| !r)
                        .map(|(p, _)| p)
                        .sum()
                })
                .collect();
            (0..dbn.num_states())
                .map(|s| per_cell[dbn.scheme.split(s).0])
                .collect()
        }
        None => vec![],
    };

    let pf = |b: &crate::pomdp::BeliefState| b.mass_on(&dbn.failure_states);
    let mut b = dbn.initial_belief.clone();
    let mut out = CostBreakdown::default();
    for t in 1..=horizon {
        let next = forward_step(dbn, &b, None)?;
        let disc = gamma.powi(t as i32);
        out.failure += costs.failure_cost * (pf(&next) - pf(&b)) * disc;
        b = next;
        let inspect = match rule.plan {
            InspectionPlan::None => false,
            InspectionPlan::Equidistant { interval } => t % interval == 0,
            InspectionPlan::Threshold { delta_pf } => {
                t < horizon && pf(&forward_step(dbn, &b, None)?) - pf(&b) > delta_pf
            }
        };
        if inspect {
            let mut post = b.probs().to_vec();
            let mut kept = 0.0;
            for (p, k) in post.iter_mut().zip(&keep) {
                *p *= k;
                kept += *p;
            }
            out.inspection += c_i * disc;
            out.repair += c_r * (1.0 - kept) * disc;
            if kept > 0.0 {
                post.iter_mut().for_each(|p| *p /= kept);
                b = crate::pomdp::BeliefState::new_unchecked(post);
            }
        }
    }
    out.total = out.inspection + out.repair + out.failure;
    Ok(out)
}

/// Years at which a rule inspects along the no-detection branch.
pub fn analytic_inspection_years(
    dbn: &CompiledDbn,
    groups: &[ActionObservationGroup],
    rule: &HeuristicRule,
) -> Result<Vec<usize>> {
    let horizon = dbn.horizon();
    let pf = |b: &crate::pomdp::BeliefState| b.mass_on(&dbn.failure_states);
    let ins = match rule.plan {
        InspectionPlan::None => return Ok(vec![]),
        _ => find_group(groups, &rule.inspection_group)?
            .1
            .inspection
            .clone()
            .ok_or_else(|| Error::InvalidParameter("group does not inspect".into()))?,
    };
    let like = dbn.likelihood(&ins, 0);
    let mut b = dbn.initial_belief.clone();
    let mut years = vec![];
    for t in 1..=horizon {
        b = forward_step(dbn, &b, None)?;
        let inspect = match rule.plan {
            InspectionPlan::None => false,
            InspectionPlan::Equidistant { interval } => t % interval == 0,
            InspectionPlan::Threshold { delta_pf } => {
                t < horizon && pf(&forward_step(dbn, &b, None)?) - pf(&b) > delta_pf
            }
        };
        if inspect {
            years.push(t);
            let mut v = b.probs().to_vec();
            crate::dbn::apply_likelihood(&mut v, &like)?;
            b = crate::pomdp::BeliefState::new_unchecked(v);
        }
    }
    Ok(years)
}

/// A heuristic rule bound to the groups of a model.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    rule: HeuristicRule,
    inspection: Option<Inspection>,
    do_nothing: usize,
    /// `[maintenance][with inspection]` group indices.
    table: [[Option<usize>; 2]; 3],
}

fn mi(m: Maintenance) -> usize {
    severity(m) as usize
}

impl HeuristicPolicy {
    pub fn new(model: &ImPomdp, rule: &HeuristicRule) -> Result<Self> {
        rule.validate()?;
        let inspection = match rule.plan {
            InspectionPlan::None => None,
            _ => {
                let (_, g) = find_group(&model.groups, &rule.inspection_group)?;
                Some(g.inspection.clone().ok_or_else(|| {
                    Error::InvalidParameter(format!("group {} does not inspect", g.name))
                })?)
            }
        };
        let do_nothing = model
            .do_nothing_group()
            .ok_or_else(|| Error::InvalidParameter("no do-nothing group".into()))?;
        let mut table = [[None; 2]; 3];
        for (i, g) in model.groups.iter().enumerate() {
            let slot = match (&g.inspection, &inspection) {
                (None, _) => 0,
                (Some(a), Some(b)) if a == b => 1,
                _ => continue,
            };
            table[mi(g.maintenance)][slot].get_or_insert(i);
        }
        let needed: Vec<Maintenance> = match &rule.maintenance {
            MaintenanceRule::RepairOnDetection => vec![Maintenance::PerfectRepair],
            MaintenanceRule::ObservationMap(map) => {
                if let Some(ins) = &inspection {
                    if map.len() != ins.num_outcomes() {
                        return Err(Error::InvalidParameter(
                            "observation map does not cover every outcome".into(),
                        ));
                    }
                }
                map.clone()
            }
            MaintenanceRule::Threshold { action, .. } => vec![*action],
        };
        for m in needed {
            if table[mi(m)][0].is_none() && table[mi(m)][1].is_none() {
                return Err(Error::InvalidParameter(format!(
                    "model has no {} group",
                    maintenance_code(m)
                )));
            }
        }
        Ok(Self {
            rule: rule.clone(),
            inspection,
            do_nothing,
            table,
        })
    }

    fn maintenance(&self, model: &ImPomdp, ctx: &DecisionContext) -> Maintenance {
        let inspected = ctx.last_group.is_some_and(|g| {
            model.groups[g].inspection.is_some() && model.groups[g].inspection == self.inspection
        });
        let Some(o) = ctx.last_observation.filter(|_| inspected) else {
            return Maintenance::DoNothing;
        };
        match &self.rule.maintenance {
            MaintenanceRule::RepairOnDetection => {
                if o != 0 {
                    Maintenance::PerfectRepair
                } else {
                    Maintenance::DoNothing
                }
            }
            MaintenanceRule::ObservationMap(map) => map[o],
            MaintenanceRule::Threshold {
                metric,
                threshold,
                action,
            } => {
                let b = ctx.belief.probs();
                let v = match metric {
                    Metric::FailureProbability => model.failure_probability(b),
                    Metric::ExpectedDamage => model.expected_damage(b),
                };
                if v > *threshold {
                    *action
                } else {
                    Maintenance::DoNothing
                }
            }
        }
    }
}

impl Policy for HeuristicPolicy {
    fn act(&self, model: &ImPomdp, ctx: &DecisionContext) -> Result<usize> {
        let m = self.maintenance(model, ctx);
        let year = ctx.year + 1;
        let row = &self.table[mi(m)];
        let carrier = row[0].or(row[1]).expect("checked at construction");
        let inspect = match self.rule.plan {
            InspectionPlan::None => false,
            InspectionPlan::Equidistant { interval } => year % interval == 0 && year <= ctx.horizon,
            InspectionPlan::Threshold { delta_pf } => {
                if year >= ctx.horizon {
                    false
                } else {
                    let next = model.model.transition[carrier].left_multiply(ctx.belief.probs());
                    model.annual_failure_increment(&next, self.do_nothing) > delta_pf
                }
            }
        };
        Ok(if inspect {
            row[1].unwrap_or(carrier)
        } else {
            row[0].unwrap_or(carrier)
        })
    }
}

/// Simulated cost of a rule on an assembled model.
pub fn evaluate_simulated(
    model: &ImPomdp,
    rule: &HeuristicRule,
    config: &SimulationConfig,
) -> Result<CostBreakdown> {
    if config.episodes < 2 {
        return Err(Error::InvalidParameter("need at least two episodes".into()));
    }
    let policy = HeuristicPolicy::new(model, rule)?;
    let r = simulate_policy(model, &policy, config)?;
    Ok(CostBreakdown {
        inspection: r.breakdown.inspection,
        repair: r.breakdown.repair,
        failure: r.breakdown.failure,
        total: r.mean,
        ci95: Some(r.ci95),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub rule: HeuristicRule,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Every evaluated rule, in grid order.
    pub table: Vec<GridEntry>,
    pub best: usize,
}

impl GridResult {
    pub fn best(&self) -> &GridEntry {
        &self.table[self.best]
    }
}

/// Evaluates every rule and returns the cheapest (ties: smaller interval,
/// then larger threshold, then grid order).
pub fn grid_search<F>(rules: Vec<HeuristicRule>, evaluate: F) -> Result<GridResult>
where
    F: Fn(&HeuristicRule) -> Result<CostBreakdown> + Sync,
{
    if rules.is_empty() {
        return Err(Error::InvalidParameter("empty heuristic grid".into()));
    }
    let costs: Vec<CostBreakdown> = rules
        .par_iter()
        .map(&evaluate)
        .collect::<Result<_>>()?;
    let table: Vec<GridEntry> = rules
        .into_iter()
        .zip(costs)
        .map(|(rule, cost)| GridEntry { rule, cost })
        .collect();
    let mut best = 0;
    for (i, e) in table.iter().enumerate().skip(1) {
        let b = &table[best];
        let better = e.cost.total < b.cost.total
            || (e.cost.total == b.cost.total
                && e.rule.tie_key().partial_cmp(&b.rule.tie_key()) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
        }
    }
    Ok(GridResult { table, best })
}

/// Equidistant rules for every interval in `intervals`.
pub fn equidistant_grid(
    intervals: impl IntoIterator<Item = usize>,
    inspection_group: &str,
    maintenance: &MaintenanceRule,
) -> Vec<HeuristicRule> {
    intervals
        .into_iter()
        .map(|interval| {
            HeuristicRule::new(
                InspectionPlan::Equidistant { interval },
                inspection_group,
                maintenance.clone(),
            )
        })
        .collect()
}

pub fn threshold_grid(
    thresholds: impl IntoIterator<Item = f64>,
    inspection_group: &str,
    maintenance: &MaintenanceRule,
) -> Vec<HeuristicRule> {
    thresholds
        .into_iter()
        .map(|delta_pf| {
            HeuristicRule::new(
                InspectionPlan::Threshold { delta_pf },
                inspection_group,
                maintenance.clone(),
            )
        })
        .collect()
}
