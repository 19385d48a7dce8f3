//! Assembly of inspection and maintenance POMDPs from a compiled
//! deterioration chain: action-observation groups, repair transitions,
//! structural-reliability rewards and finite-horizon time augmentation.

use serde::{Deserialize, Serialize};

use crate::dbn::{CompiledDbn, Variant};
use crate::error::{Error, Result};
use crate::fatigue::{Inspection, PodCurve, PoiCurve};
use crate::pomdp::{BeliefState, DiscretePomdp, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maintenance {
    DoNothing,
    PerfectRepair,
    MinorRepair,
}

/// One combined action: a maintenance choice plus an optional inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionObservationGroup {
    pub name: String,
    pub maintenance: Maintenance,
    #[serde(default)]
    pub inspection: Option<Inspection>,
    #[serde(default)]
    pub inspection_cost: f64,
    #[serde(default)]
    pub repair_cost: f64,
}

impl ActionObservationGroup {
    pub fn new(name: &str, maintenance: Maintenance) -> Self {
        Self {
            name: name.to_string(),
            maintenance,
            inspection: None,
            inspection_cost: 0.0,
            repair_cost: 0.0,
        }
    }

    pub fn with_inspection(mut self, inspection: Inspection, cost: f64) -> Self {
        self.inspection = Some(inspection);
        self.inspection_cost = cost;
        self
    }

    pub fn with_repair_cost(mut self, cost: f64) -> Self {
        self.repair_cost = cost;
        self
    }

    pub fn inspects(&self) -> bool {
        self.inspection.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inspection_cost >= 0.0) || !(self.repair_cost >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "group {} has a negative cost",
                self.name
            )));
        }
        if self.maintenance == Maintenance::DoNothing && self.repair_cost != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "do-nothing group {} carries a repair cost",
                self.name
            )));
        }
        Ok(())
    }
}

/// Do-nothing, do-nothing with inspection, perfect repair.
pub fn traditional_groups(c_i: f64, c_r: f64, pod: PodCurve) -> Vec<ActionObservationGroup> {
    vec![
        ActionObservationGroup::new("DN-NI", Maintenance::DoNothing),
        ActionObservationGroup::new("DN-I", Maintenance::DoNothing)
            .with_inspection(Inspection::Detection(pod), c_i),
        ActionObservationGroup::new("PR-NI", Maintenance::PerfectRepair).with_repair_cost(c_r),
    ]
}

/// The seven groups of the two-inspection, two-repair setting.
pub fn complex_groups(
    c_i1: f64,
    c_i2: f64,
    c_minor: f64,
    c_perfect: f64,
    pod: PodCurve,
    poi: PoiCurve,
) -> Vec<ActionObservationGroup> {
    let i1 = Inspection::Detection(pod);
    let i2 = Inspection::Indication(poi);
    use Maintenance::*;
    vec![
        ActionObservationGroup::new("DN-NI", DoNothing),
        ActionObservationGroup::new("DN-I1", DoNothing).with_inspection(i1.clone(), c_i1),
        ActionObservationGroup::new("DN-I2", DoNothing).with_inspection(i2.clone(), c_i2),
        ActionObservationGroup::new("mRP-NI", MinorRepair).with_repair_cost(c_minor),
        ActionObservationGroup::new("mRP-I1", MinorRepair)
            .with_repair_cost(c_minor)
            .with_inspection(i1, c_i1),
        ActionObservationGroup::new("mRP-I2", MinorRepair)
            .with_repair_cost(c_minor)
            .with_inspection(i2, c_i2),
        ActionObservationGroup::new("pRP-NI", PerfectRepair).with_repair_cost(c_perfect),
    ]
}

/// When the costs of a step are billed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostTiming {
    /// Repairs in the decision year, inspections and the failure risk in the
    /// following year (one extra discount factor).
    #[default]
    EventYear,
    /// Everything at the start of the step.
    StepStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub failure_cost: f64,
    pub discount: f64,
    #[serde(default)]
    pub timing: CostTiming,
}

impl CostSpec {
    pub fn new(failure_cost: f64, discount: f64) -> Self {
        Self {
            failure_cost,
            discount,
            timing: CostTiming::EventYear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.failure_cost >= 0.0) {
            return Err(Error::InvalidParameter("failure cost must be non-negative".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount {} must lie in (0, 1]",
                self.discount
            )));
        }
        Ok(())
    }

    /// Discount applied to inspection and risk terms relative to repair.
    pub fn event_factor(&self) -> f64 {
        match self.timing {
            CostTiming::EventYear => self.discount,
            CostTiming::StepStart => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssembleOptions {
    /// Whether a perfect repair also resets failed states.
    pub repair_resets_failed: bool,
    /// Maximum number of states of an assembled model.
    pub state_budget: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            repair_resets_failed: false,
            state_budget: 2_000_000,
        }
    }
}

/// Every row equals the initial belief.
pub fn perfect_repair_matrix(initial_belief: &BeliefState) -> SparseMatrix {
    SparseMatrix::repeated_row(initial_belief.len(), initial_belief.probs())
}

/// Rewinds the deterioration rate by two (floored at zero), keeping the
/// damage cell. Failure cells are left in place.
pub fn minor_repair_matrix(dbn: &CompiledDbn) -> Result<SparseMatrix> {
    if dbn.scheme.variant != Variant::DeteriorationRate {
        return Err(Error::UnsupportedAction(
            "minor repair needs a deterioration-rate model".into(),
        ));
    }
    let sch = &dbn.scheme;
    let fail = sch.failure_cell();
    let rows = (0..sch.num_states())
        .map(|s| {
            let (d, tau) = sch.split(s);
            if d == fail {
                vec![(s, 1.0)]
            } else {
                vec![(sch.index(d, tau.saturating_sub(2)), 1.0)]
            }
        })
        .collect();
    SparseMatrix::from_rows(sch.num_states(), rows)
}

/// Per-group transition on the compiled (time-free) state space.
pub fn group_transition(
    dbn: &CompiledDbn,
    group: &ActionObservationGroup,
    options: &AssembleOptions,
) -> Result<SparseMatrix> {
    match group.maintenance {
        Maintenance::DoNothing => Ok(dbn.transition.clone()),
        Maintenance::MinorRepair => minor_repair_matrix(dbn),
        Maintenance::PerfectRepair => {
            if options.repair_resets_failed {
                return Ok(perfect_repair_matrix(&dbn.initial_belief));
            }
            let b0: Vec<(usize, f64)> = dbn
                .initial_belief
                .probs()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(s, &p)| (s, p))
                .collect();
            let failed = failure_mask(dbn);
            let rows = (0..dbn.num_states())
                .map(|s| if failed[s] { vec![(s, 1.0)] } else { b0.clone() })
                .collect();
            SparseMatrix::from_rows(dbn.num_states(), rows)
        }
    }
}

fn failure_mask(dbn: &CompiledDbn) -> Vec<bool> {
    let mut m = vec![false; dbn.num_states()];
    for &s in &dbn.failure_states {
        m[s] = true;
    }
    m
}

/// Annual failure risk `R_F(s) = Σ T(s,s') R̄(s') − R̄(s)` with `R̄ = −C_f`
/// on failure states.
pub fn failure_risk(transition: &SparseMatrix, failed: &[bool], failure_cost: f64) -> Vec<f64> {
    let rbar = |s: usize| if failed[s] { -failure_cost } else { 0.0 };
    (0..transition.n_rows())
        .map(|s| {
            let (cols, vals) = transition.row(s);
            let next: f64 = cols.iter().zip(vals).map(|(&c, &p)| p * rbar(c)).sum();
            next - rbar(s)
        })
        .collect()
}

/// Reward terms of one group on the compiled state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    /// Undiscounted annual failure risk under the group's transition.
    pub failure_risk: Vec<f64>,
    /// Billed repair term (≤ 0).
    pub repair: f64,
    /// Billed inspection term (≤ 0), already carrying the timing factor.
    pub inspection: f64,
    /// Factor applied to the failure risk.
    pub risk_factor: f64,
}

impl RewardTerms {
    pub fn total(&self, s: usize) -> f64 {
        self.repair + self.inspection + self.risk_factor * self.failure_risk[s]
    }
}

/// Per-group reward vectors on the compiled state space.
pub fn build_rewards(
    dbn: &CompiledDbn,
    groups: &[ActionObservationGroup],
    costs: &CostSpec,
    options: &AssembleOptions,
) -> Result<Vec<Vec<f64>>> {
    Ok(reward_terms(dbn, groups, costs, options)?
        .iter()
        .map(|t| (0..dbn.num_states()).map(|s| t.total(s)).collect())
        .collect())
}

pub fn reward_terms(
    dbn: &CompiledDbn,
    groups: &[ActionObservationGroup],
    costs: &CostSpec,
    options: &AssembleOptions,
) -> Result<Vec<RewardTerms>> {
    costs.validate()?;
    let failed = failure_mask(dbn);
    let f = costs.event_factor();
    groups
        .iter()
        .map(|g| {
            g.validate()?;
            let t = group_transition(dbn, g, options)?;
            Ok(RewardTerms {
                failure_risk: failure_risk(&t, &failed, costs.failure_cost),
                repair: -g.repair_cost,
                inspection: if g.inspects() {
                    -f * g.inspection_cost
                } else {
                    0.0
                },
                risk_factor: f,
            })
        })
        .collect()
}

/// How assembled states relate to the compiled chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layout {
    /// States are the compiled states.
    Stationary { n_core: usize },
    /// Compiled states copied once per year `0..=horizon`, plus a terminal
    /// state. Rate models keep only rates `≤ t` in layer `t`.
    TimeAugmented {
        n_core: usize,
        horizon: usize,
        triangular: bool,
        n_d: usize,
    },
}

impl Layout {
    pub fn n_core(&self) -> usize {
        match *self {
            Layout::Stationary { n_core } | Layout::TimeAugmented { n_core, .. } => n_core,
        }
    }

    /// First state of layer `t`.
    pub fn offset(&self, t: usize) -> usize {
        match *self {
            Layout::Stationary { .. } => 0,
            Layout::TimeAugmented {
                n_core,
                triangular,
                n_d,
                ..
            } => {
                if triangular {
                    n_d * t * (t + 1) / 2
                } else {
                    n_core * t
                }
            }
        }
    }

    pub fn layer_size(&self, t: usize) -> usize {
        match *self {
            Layout::Stationary { n_core } => n_core,
            Layout::TimeAugmented {
                n_core,
                triangular,
                n_d,
                ..
            } => {
                if triangular {
                    n_d * (t + 1)
                } else {
                    n_core
                }
            }
        }
    }

    pub fn num_states(&self) -> usize {
        match *self {
            Layout::Stationary { n_core } => n_core,
            Layout::TimeAugmented { horizon, .. } => self.offset(horizon + 1) + 1,
        }
    }

    pub fn terminal(&self) -> Option<usize> {
        match self {
            Layout::Stationary { .. } => None,
            Layout::TimeAugmented { .. } => Some(self.num_states() - 1),
        }
    }

    /// Assembled index of compiled state `core` in layer `t`.
    pub fn state(&self, t: usize, core: usize) -> usize {
        self.offset(t) + core
    }

    /// `(layer, compiled state)` of an assembled state; `None` for the
    /// terminal state.
    pub fn split(&self, s: usize) -> Option<(usize, usize)> {
        match *self {
            Layout::Stationary { .. } => Some((0, s)),
            Layout::TimeAugmented { horizon, .. } => {
                if s >= self.offset(horizon + 1) {
                    return None;
                }
                let mut t = 0;
                while self.offset(t + 1) <= s {
                    t += 1;
                }
                Some((t, s - self.offset(t)))
            }
        }
    }
}

/// Size of the triangular rate layout without the terminal state.
pub fn triangular_size(n_d: usize, horizon: usize) -> usize {
    ((horizon + 1) * (horizon + 1) * n_d + (horizon + 1) * n_d) / 2
}

/// An assembled model together with the bookkeeping needed to simulate and
/// report costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImPomdp {
    pub model: DiscretePomdp,
    pub groups: Vec<ActionObservationGroup>,
    pub costs: CostSpec,
    pub layout: Layout,
    /// Representative damage per state (0 for the terminal state).
    pub damage: Vec<f64>,
    /// Reward terms per group, on the compiled state space.
    pub terms: Vec<RewardTerms>,
    /// Compiled failure states.
    pub core_failed: Vec<bool>,
}

const MODEL_KIND: [u8; 4] = *b"IMPD";
const MODEL_VERSION: u32 = 1;

impl ImPomdp {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        crate::container::encode(MODEL_KIND, MODEL_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        crate::container::decode(MODEL_KIND, MODEL_VERSION, bytes)
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Compiled state of an assembled state, if it is not terminal and the
    /// layer is still within the decision horizon.
    pub fn core_state(&self, s: usize) -> Option<(usize, usize)> {
        self.layout.split(s)
    }

    /// Whether a state lies in the last (zero-reward) layer or is terminal.
    pub fn is_inactive(&self, s: usize) -> bool {
        match self.layout {
            Layout::Stationary { .. } => false,
            Layout::TimeAugmented { horizon, .. } => match self.layout.split(s) {
                None => true,
                Some((t, _)) => t >= horizon,
            },
        }
    }

    /// `(repair, inspection, failure)` parts of `R(s, a)`.
    pub fn reward_parts(&self, s: usize, a: usize) -> (f64, f64, f64) {
        if self.is_inactive(s) {
            return (0.0, 0.0, 0.0);
        }
        let core = self.layout.split(s).map_or(s, |(_, c)| c);
        let t = &self.terms[a];
        (t.repair, t.inspection, t.risk_factor * t.failure_risk[core])
    }

    pub fn failure_probability(&self, b: &[f64]) -> f64 {
        self.model.failure_states.iter().map(|&s| b[s]).sum()
    }

    pub fn expected_damage(&self, b: &[f64]) -> f64 {
        b.iter().zip(&self.damage).map(|(p, d)| p * d).sum()
    }

    /// One-year increase of failure probability if nothing is done.
    pub fn annual_failure_increment(&self, b: &[f64], do_nothing: usize) -> f64 {
        let next = self.model.transition[do_nothing].left_multiply(b);
        self.failure_probability(&next) - self.failure_probability(b)
    }

    /// Index of the plain do-nothing, no-inspection group.
    pub fn do_nothing_group(&self) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.maintenance == Maintenance::DoNothing && !g.inspects())
    }
}

fn num_observations(groups: &[ActionObservationGroup]) -> usize {
    groups
        .iter()
        .filter_map(|g| g.inspection.as_ref().map(|i| i.num_outcomes()))
        .max()
        .unwrap_or(1)
}

/// Observation matrix of one group on `n_states` states given the compiled
/// state of every post-transition state (`None`: terminal, uniform row).
fn observation_rows(
    dbn: &CompiledDbn,
    group: &ActionObservationGroup,
    n_obs: usize,
    core_of: impl Fn(usize) -> Option<usize>,
    n_states: usize,
) -> SparseMatrix {
    let uniform: Vec<(usize, f64)> = (0..n_obs).map(|o| (o, 1.0 / n_obs as f64)).collect();
    let per_cell: Option<Vec<Vec<(usize, f64)>>> = group.inspection.as_ref().map(|ins| {
        (0..dbn.scheme.n_d())
            .map(|i| {
                let l = ins.likelihoods(dbn.scheme.d_representative(i));
                l.into_iter().enumerate().filter(|(_, p)| *p > 0.0).collect()
            })
            .collect()
    });
    let rows = (0..n_states)
        .map(|s| match (&per_cell, core_of(s)) {
            (Some(cells), Some(core)) => cells[dbn.scheme.split(core).0].clone(),
            _ => uniform.clone(),
        })
        .collect();
    SparseMatrix::from_rows(n_obs, rows).expect("observation indices in range")
}

fn check_groups(groups: &[ActionObservationGroup]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::InvalidParameter("at least one group is required".into()));
    }
    for g in groups {
        g.validate()?;
    }
    Ok(())
}

/// Stationary model on the compiled state space.
pub fn assemble_infinite(
    dbn: &CompiledDbn,
    groups: &[ActionObservationGroup],
    costs: &CostSpec,
    options: &AssembleOptions,
) -> Result<ImPomdp> {
    check_groups(groups)?;
    let n = dbn.num_states();
    if n > options.state_budget {
        return Err(Error::StateBudget {
            required: n,
            budget: options.state_budget,
        });
    }
    let terms = reward_terms(dbn, groups, costs, options)?;
    let n_obs = num_observations(groups);
    let transition = groups
        .iter()
        .map(|g| group_transition(dbn, g, options))
        .collect::<Result<Vec<_>>>()?;
    let observation = groups
        .iter()
        .map(|g| observation_rows(dbn, g, n_obs, Some, n))
        .collect();
    let reward = terms
        .iter()
        .map(|t| (0..n).map(|s| t.total(s)).collect())
        .collect();
    let model = DiscretePomdp {
        num_states: n,
        num_actions: groups.len(),
        num_observations: n_obs,
        transition,
        observation,
        reward,
        discount: costs.discount,
        initial_belief: dbn.initial_belief.clone(),
        failure_states: dbn.failure_states.clone(),
        terminal_states: vec![],
        horizon: None,
        action_names: groups.iter().map(|g| g.name.clone()).collect(),
    };
    model.ensure_valid()?;
    Ok(ImPomdp {
        model,
        groups: groups.to_vec(),
        costs: *costs,
        layout: Layout::Stationary { n_core: n },
        damage: dbn.damage_per_state(),
        terms,
        core_failed: failure_mask(dbn),
    })
}

/// Time-augmented model: one layer per year `0..=horizon`; decisions in
/// layers `< horizon` carry the stationary rewards, the last layer moves to a
/// zero-reward absorbing terminal state.
pub fn assemble_finite(
    dbn: &CompiledDbn,
    groups: &[ActionObservationGroup],
    costs: &CostSpec,
    horizon: usize,
    options: &AssembleOptions,
) -> Result<ImPomdp> {
    check_groups(groups)?;
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let sch = &dbn.scheme;
    let n_core = dbn.num_states();
    let n_d = sch.n_d();
    let triangular = sch.variant == Variant::DeteriorationRate;
    if triangular && horizon + 1 > sch.n_theta() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} exceeds the {} rates of the scheme",
            sch.n_theta()
        )));
    }
    let layout = Layout::TimeAugmented {
        n_core,
        horizon,
        triangular,
        n_d,
    };
    let n = layout.num_states();
    if n > options.state_budget {
        return Err(Error::StateBudget {
            required: n,
            budget: options.state_budget,
        });
    }
    let terminal = n - 1;
    let terms = reward_terms(dbn, groups, costs, options)?;
    let core_t = groups
        .iter()
        .map(|g| group_transition(dbn, g, options))
        .collect::<Result<Vec<_>>>()?;

    let in_layer = |t: usize, core: usize| !triangular || sch.split(core).1 <= t;
    // Assembled state -> compiled state, for all non-terminal states.
    let mut core_of = vec![usize::MAX; n];
    for t in 0..=horizon {
        for core in (0..n_core).filter(|&c| in_layer(t, c)) {
            core_of[layout.state(t, core)] = core;
        }
    }
    let core_opt = |s: usize| (core_of[s] != usize::MAX).then(|| core_of[s]);

    let mut transition = Vec::with_capacity(groups.len());
    for (a, tm) in core_t.iter().enumerate() {
        let mut rows = Vec::with_capacity(n);
        for t in 0..=horizon {
            for core in (0..n_core).filter(|&c| in_layer(t, c)) {
                if t == horizon {
                    rows.push(vec![(terminal, 1.0)]);
                    continue;
                }
                let (cols, vals) = tm.row(core);
                let row: Vec<(usize, f64)> = cols
                    .iter()
                    .zip(vals)
                    .map(|(&c, &p)| {
                        if !in_layer(t + 1, c) {
                            return Err(Error::InvalidModel(format!(
                                "group {a} moves compiled state {core} to {c}, outside layer {}",
                                t + 1
                            )));
                        }
                        Ok((layout.state(t + 1, c), p))
                    })
                    .collect::<Result<_>>()?;
                rows.push(row);
            }
        }
        rows.push(vec![(terminal, 1.0)]);
        debug_assert_eq!(rows.len(), n);
        transition.push(SparseMatrix::from_rows(n, rows)?);
    }
    // The compiled index of a state in layer `t` is its position in the
    // layer for the triangular layout as well, because rates are the major
    // index of the compiled layout.
    let n_obs = num_observations(groups);
    let observation = groups
        .iter()
        .map(|g| observation_rows(dbn, g, n_obs, core_opt, n))
        .collect();
    let reward = terms
        .iter()
        .map(|tr| {
            (0..n)
                .map(|s| match layout.split(s) {
                    Some((t, core)) if t < horizon => tr.total(core),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let mut b0 = vec![0.0; n];
    for (core, &p) in dbn.initial_belief.probs().iter().enumerate() {
        if p > 0.0 {
            if !in_layer(0, core) {
                return Err(Error::InvalidModel(
                    "initial belief has mass on rates above zero".into(),
                ));
            }
            b0[layout.state(0, core)] = p;
        }
    }
    let failure_states = (0..terminal)
        .filter(|&s| dbn.failure_states.binary_search(&core_of[s]).is_ok())
        .collect();
    let mut damage: Vec<f64> = (0..n)
        .map(|s| core_opt(s).map_or(0.0, |c| sch.d_representative(sch.split(c).0)))
        .collect();
    damage[terminal] = 0.0;
    let model = DiscretePomdp {
        num_states: n,
        num_actions: groups.len(),
        num_observations: n_obs,
        transition,
        observation,
        reward,
        discount: costs.discount,
        initial_belief: BeliefState::new_unchecked(b0),
        failure_states,
        terminal_states: vec![terminal],
        horizon: Some(horizon),
        action_names: groups.iter().map(|g| g.name.clone()).collect(),
    };
    model.ensure_valid()?;
    Ok(ImPomdp {
        model,
        groups: groups.to_vec(),
        costs: *costs,
        layout,
        damage,
        terms,
        core_failed: failure_mask(dbn),
    })
}
