//! Experiment configuration, read from TOML.

use std::path::Path;

use im_core::builder::{AssembleOptions, CostTiming};
use im_core::dbn::{CompileConfig, InCellMeasure, Representative};
use im_core::eval::FailureAccounting;
use im_core::fatigue::CrackGrowthParams;
use im_core::heuristics::{InspectionPlan, MaintenanceRule};
use im_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; per-task seeds are derived from it unless set explicitly.
    pub seed: u64,
    pub horizon: usize,
    pub deterioration: CrackGrowthParams,
    pub discretization: DiscretizationConfig,
    pub costs: CostConfig,
    pub actions: ActionConfig,
    pub assemble: AssembleOptions,
    pub solver: SolverConfig,
    pub heuristics: HeuristicConfig,
    pub evaluation: EvaluationConfig,
    /// Schemes whose stationary models are solved and simulated over the
    /// horizon by `reproduce`.
    pub infinite_horizon: Vec<InfiniteRun>,
    pub accuracy: AccuracyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub scheme: String,
    pub representative: Representative,
    pub in_cell: InCellMeasure,
    pub trajectories: usize,
    pub samples_per_cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub failure: f64,
    pub discount: f64,
    pub timing: CostTiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSet {
    /// Do nothing, inspect, perfect repair.
    Traditional,
    /// Two inspection techniques and two repair types.
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionConfig {
    pub set: ActionSet,
    pub inspection_cost: f64,
    /// Inspection type 2 (complex set only).
    pub inspection2_cost: f64,
    pub perfect_repair_cost: f64,
    pub minor_repair_cost: f64,
    /// Mean of the exponential detection curve, mm.
    pub pod_mean: f64,
    /// Indication boundaries of inspection type 2, mm.
    pub poi_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    None,
    Equidistant,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluator {
    /// Single-branch closed form (traditional action set).
    Analytic,
    Simulated,
}

/// One row of a heuristic table: a plan family searched over `values`, each
/// combined with every maintenance rule listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeuristicFamily {
    pub label: String,
    pub plan: PlanKind,
    pub inspection_group: String,
    /// Intervals (equidistant) or ΔP_F thresholds (threshold plans).
    #[serde(default)]
    pub values: Vec<f64>,
    pub maintenance: Vec<MaintenanceRule>,
    /// Also consider the plan without inspections.
    #[serde(default)]
    pub include_no_inspection: bool,
}

impl HeuristicFamily {
    pub fn plans(&self) -> Vec<InspectionPlan> {
        let mut out = Vec::new();
        if self.include_no_inspection || self.plan == PlanKind::None {
            out.push(InspectionPlan::None);
        }
        match self.plan {
            PlanKind::None => {}
            PlanKind::Equidistant => out.extend(self.values.iter().map(|v| InspectionPlan::Equidistant {
                interval: v.round() as usize,
            })),
            PlanKind::Threshold => out.extend(
                self.values
                    .iter()
                    .map(|v| InspectionPlan::Threshold { delta_pf: *v }),
            ),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub evaluator: Evaluator,
    /// Episodes per candidate during a simulated grid search.
    pub search_episodes: usize,
    pub families: Vec<HeuristicFamily>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
    pub failure: FailureAccounting,
    /// Leading episodes written out year by year.
    pub keep_traces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfiniteRun {
    pub scheme: String,
    /// Overrides `discretization.samples_per_cell` for this scheme.
    #[serde(default)]
    pub samples_per_cell: Option<usize>,
}

/// Settings of the discretization accuracy check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracyConfig {
    /// Monte Carlo reference pool size.
    pub reference_samples: usize,
    /// Years with a recorded "no detection".
    pub no_detection_years: Vec<usize>,
    pub pod_mean: f64,
    pub schemes: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 2021,
            horizon: 30,
            deterioration: CrackGrowthParams::default(),
            discretization: DiscretizationConfig::default(),
            costs: CostConfig::default(),
            actions: ActionConfig::default(),
            assemble: AssembleOptions::default(),
            solver: SolverConfig::default(),
            heuristics: HeuristicConfig::default(),
            evaluation: EvaluationConfig::default(),
            infinite_horizon: Vec::new(),
            accuracy: AccuracyConfig::default(),
        }
    }
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        let c = CompileConfig::default();
        Self {
            scheme: "DR_d30".into(),
            representative: Representative::default(),
            in_cell: c.in_cell,
            trajectories: c.trajectories,
            samples_per_cell: c.samples_per_cell,
        }
    }
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            failure: 1e3,
            discount: 0.95,
            timing: CostTiming::default(),
        }
    }
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            set: ActionSet::Traditional,
            inspection_cost: 1.0,
            inspection2_cost: 2.0,
            perfect_repair_cost: 50.0,
            minor_repair_cost: 10.0,
            pod_mean: 8.0,
            poi_means: vec![4.0, 7.0, 10.0, 13.0],
        }
    }
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            evaluator: Evaluator::Analytic,
            search_episodes: 2_000,
            families: Vec::new(),
        }
    }
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            failure: FailureAccounting::default(),
            keep_traces: 0,
        }
    }
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self {
            reference_samples: 1_000_000,
            no_detection_years: vec![18, 25],
            pod_mean: 8.0,
            schemes: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn compile_config(&self) -> CompileConfig {
        CompileConfig {
            samples_per_cell: self.discretization.samples_per_cell,
            trajectories: self.discretization.trajectories,
            seed: self.seed,
            in_cell: self.discretization.in_cell,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        self.deterioration
            .validate()
            .map_err(|e| ConfigError(format!("deterioration: {e}")))?;
        if self.horizon < 1 || self.horizon > self.deterioration.t_n {
            return fail(format!(
                "horizon {} must lie in 1..={} (deterioration.t_n)",
                self.horizon, self.deterioration.t_n
            ));
        }
        crate::presets::check_scheme(&self.discretization.scheme, &self.deterioration)?;
        if self.discretization.trajectories < 1 || self.discretization.samples_per_cell < 1 {
            return fail("discretization sample counts must be at least 1".into());
        }
        if !nonneg(self.costs.failure) {
            return fail(format!("costs.failure = {} must be ≥ 0", self.costs.failure));
        }
        if !(self.costs.discount > 0.0 && self.costs.discount <= 1.0) {
            return fail(format!("costs.discount = {} must lie in (0, 1]", self.costs.discount));
        }
        let a = &self.actions;
        for (name, v) in [
            ("inspection_cost", a.inspection_cost),
            ("inspection2_cost", a.inspection2_cost),
            ("perfect_repair_cost", a.perfect_repair_cost),
            ("minor_repair_cost", a.minor_repair_cost),
        ] {
            if !nonneg(v) {
                return fail(format!("actions.{name} = {v} must be ≥ 0"));
            }
        }
        if !pos(a.pod_mean) {
            return fail(format!("actions.pod_mean = {} must be > 0", a.pod_mean));
        }
        if a.set == ActionSet::Complex && (a.poi_means.is_empty() || !a.poi_means.iter().all(|m| pos(*m))) {
            return fail("actions.poi_means must be a non-empty list of positive means".into());
        }
        self.solver
            .validate()
            .map_err(|e| ConfigError(format!("solver: {e}")))?;
        if self.evaluation.episodes < 2 || self.heuristics.search_episodes < 2 {
            return fail("evaluation.episodes and heuristics.search_episodes must be at least 2".into());
        }
        let groups = crate::pipeline::groups(self)?;
        for f in &self.heuristics.families {
            if f.maintenance.is_empty() {
                return fail(format!("heuristic family {}: no maintenance rule", f.label));
            }
            if f.plan != PlanKind::None && f.values.is_empty() {
                return fail(format!("heuristic family {}: empty value grid", f.label));
            }
            if !groups.iter().any(|g| g.name == f.inspection_group && g.inspects()) {
                return fail(format!(
                    "heuristic family {}: '{}' is not an inspecting group (available: {})",
                    f.label,
                    f.inspection_group,
                    groups
                        .iter()
                        .filter(|g| g.inspects())
                        .map(|g| g.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ));
            }
            for v in &f.values {
                let ok = match f.plan {
                    PlanKind::Equidistant => *v >= 1.0 && v.fract() == 0.0,
                    _ => pos(*v),
                };
                if !ok {
                    return fail(format!("heuristic family {}: invalid grid value {v}", f.label));
                }
            }
        }
        if self.heuristics.evaluator == Evaluator::Analytic && a.set == ActionSet::Complex {
            return fail("the analytic evaluator supports the traditional action set only; use evaluator = \"simulated\"".into());
        }
        for r in &self.infinite_horizon {
            crate::presets::check_scheme(&r.scheme, &self.deterioration)?;
        }
        for s in &self.accuracy.schemes {
            crate::presets::check_scheme(s, &self.deterioration)?;
        }
        if self.accuracy.reference_samples < 2 || !pos(self.accuracy.pod_mean) {
            return fail("accuracy: need at least 2 reference samples and a positive PoD mean".into());
        }
        Ok(())
    }
}
