//! Named experiment and discretization presets.

use im_core::builder::Maintenance;
use im_core::dbn::DiscretizationScheme;
use im_core::fatigue::CrackGrowthParams;
use im_core::heuristics::{MaintenanceRule, Metric};

use crate::config::*;
use crate::ConfigError;

pub const EXPERIMENTS: [&str; 4] = ["R_RI20-R_FR100", "R_RI10-R_FR10", "R_RI50-R_FR20", "complex"];

pub const SCHEMES: [&str; 7] = [
    "DR_d15",
    "DR_d30",
    "PAR_K50-d40",
    "PAR_K50-d80",
    "PAR_K50-d160",
    "PAR_K100-d80",
    "PAR_K100-d160",
];

pub fn check_scheme(name: &str, params: &CrackGrowthParams) -> Result<(), ConfigError> {
    DiscretizationScheme::from_name(name, params)
        .map(|_| ())
        .map_err(|_| {
            ConfigError(format!(
                "unknown discretization scheme '{name}'; expected DR_d<n> or PAR_K<n>-d<n>, e.g. {}",
                SCHEMES.join(", ")
            ))
        })
}

fn intervals() -> Vec<f64> {
    (1..=30).map(f64::from).collect()
}

const THRESHOLDS: [f64; 10] = [1e-4, 2e-4, 3e-4, 4e-4, 5e-4, 7e-4, 1e-3, 1.5e-3, 2e-3, 3e-3];

fn traditional_families() -> Vec<HeuristicFamily> {
    let family = |label: &str, plan: PlanKind, values: Vec<f64>| HeuristicFamily {
        label: label.into(),
        plan,
        inspection_group: "DN-I".into(),
        values,
        maintenance: vec![MaintenanceRule::RepairOnDetection],
        include_no_inspection: true,
    };
    vec![
        family("EQ-INS", PlanKind::Equidistant, intervals()),
        family("THR-INS", PlanKind::Threshold, THRESHOLDS.to_vec()),
    ]
}

fn complex_families() -> Vec<HeuristicFamily> {
    use Maintenance::{DoNothing as DN, PerfectRepair as PR};
    let on_d1 = MaintenanceRule::ObservationMap(vec![DN, PR]);
    let on_d2 = MaintenanceRule::ObservationMap(vec![DN, DN, DN, DN, PR]);
    let family = |label: &str, plan: PlanKind, group: &str, values: Vec<f64>, maintenance| HeuristicFamily {
        label: label.into(),
        plan,
        inspection_group: group.into(),
        values,
        maintenance,
        include_no_inspection: false,
    };
    let thr = vec![5e-4, 7e-4, 1e-3, 1.1e-3, 1.5e-3, 2e-3, 3e-3];
    vec![
        family("EQ-INS1 pRP-D1", PlanKind::Equidistant, "DN-I1", intervals(), vec![on_d1.clone()]),
        family("EQ-INS2 pRP-D2", PlanKind::Equidistant, "DN-I2", intervals(), vec![on_d2.clone()]),
        family("THR-INS1 pRP-D1", PlanKind::Threshold, "DN-I1", thr.clone(), vec![on_d1]),
        family("THR-INS2 pRP-D2", PlanKind::Threshold, "DN-I2", thr, vec![on_d2]),
        family(
            "THR-INS2 pRP-PF",
            PlanKind::Threshold,
            "DN-I2",
            vec![3e-4, 5e-4, 7e-4, 1e-3],
            [1e-2, 1.5e-2, 2.2e-2, 3e-2]
                .iter()
                .map(|&threshold| MaintenanceRule::Threshold {
                    metric: Metric::FailureProbability,
                    threshold,
                    action: PR,
                })
                .collect(),
        ),
        family(
            "THR-INS2 pRP-Ed",
            PlanKind::Threshold,
            "DN-I2",
            vec![5e-4, 7e-4, 1e-3, 1.5e-3],
            [2.0, 3.0, 4.0, 5.0, 6.0]
                .iter()
                .map(|&threshold| MaintenanceRule::Threshold {
                    metric: Metric::ExpectedDamage,
                    threshold,
                    action: PR,
                })
                .collect(),
        ),
    ]
}

fn traditional(name: &str, c_i: f64, c_r: f64, c_f: f64, infinite: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        costs: CostConfig {
            failure: c_f,
            ..Default::default()
        },
        actions: ActionConfig {
            set: ActionSet::Traditional,
            inspection_cost: c_i,
            perfect_repair_cost: c_r,
            ..Default::default()
        },
        heuristics: HeuristicConfig {
            families: traditional_families(),
            ..Default::default()
        },
        infinite_horizon: infinite
            .iter()
            .map(|s| InfiniteRun {
                scheme: s.to_string(),
                samples_per_cell: s.starts_with("PAR").then_some(4_000),
            })
            .collect(),
        ..Default::default()
    }
}

/// Resolves an experiment or scheme name.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg = match name {
        "R_RI20-R_FR100" => traditional(name, 5.0, 100.0, 1e4, &["DR_d30"]),
        "R_RI10-R_FR10" => traditional(name, 1.0, 10.0, 1e2, &["DR_d30"]),
        "R_RI50-R_FR20" => traditional(name, 1.0, 50.0, 1e3, &["DR_d30", "PAR_K100-d160"]),
        "complex" => ExperimentConfig {
            name: name.into(),
            actions: ActionConfig {
                set: ActionSet::Complex,
                inspection_cost: 1.0,
                inspection2_cost: 2.0,
                minor_repair_cost: 10.0,
                perfect_repair_cost: 50.0,
                ..Default::default()
            },
            heuristics: HeuristicConfig {
                evaluator: Evaluator::Simulated,
                families: complex_families(),
                ..Default::default()
            },
            ..Default::default()
        },
        s if SCHEMES.contains(&s) => {
            let mut cfg = ExperimentConfig {
                name: s.into(),
                ..Default::default()
            };
            cfg.discretization.scheme = s.into();
            cfg.accuracy.schemes = vec![s.into()];
            cfg
        }
        _ => {
            return Err(ConfigError(format!(
                "unknown preset '{name}'; experiments: {}; schemes: {}",
                EXPERIMENTS.join(", "),
                SCHEMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves_and_validates() {
        for name in EXPERIMENTS.iter().chain(SCHEMES.iter()) {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn unknown_preset_lists_alternatives() {
        let e = preset("R_RI99").unwrap_err();
        assert!(e.0.contains("R_RI50-R_FR20"));
    }
}
