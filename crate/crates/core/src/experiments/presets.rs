//! Named experiment grids.

use crate::error::{Error, Result};
use crate::quantizer::{EstimatorConfig, EstimatorKind, DEFAULT_CL_WEIGHT};
use crate::trainer::TrainConfig;

/// Per-run changes applied on top of a base configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunDelta {
    pub kind: EstimatorKind,
    pub cl_weight: f64,
    /// Bits per value of the bottleneck quantizer.
    pub quantizer_bits: u32,
}

impl RunDelta {
    const fn new(kind: EstimatorKind, cl: bool) -> Self {
        Self {
            kind,
            cl_weight: if cl { DEFAULT_CL_WEIGHT } else { 0.0 },
            quantizer_bits: 2,
        }
    }

    const fn bits(mut self, bits: u32) -> Self {
        self.quantizer_bits = bits;
        self
    }

    /// `base` with this run's estimator, commitment weight and quantizer.
    /// The base noise ratio is kept.
    pub fn apply(&self, base: &TrainConfig, run_id: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone().with_quantizer_bits(self.quantizer_bits)?;
        cfg.run_id = run_id.to_string();
        cfg.estimator = EstimatorConfig {
            kind: self.kind,
            cl_weight: self.cl_weight,
            na_ratio_db: base.estimator.na_ratio_db,
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetRun {
    pub run_id: &'static str,
    pub delta: RunDelta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub runs: Vec<PresetRun>,
}

impl ExperimentPreset {
    /// Concrete configurations for every run, in preset order.
    pub fn configs(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        self.runs
            .iter()
            .map(|r| r.delta.apply(base, r.run_id))
            .collect()
    }
}

fn run(run_id: &'static str, delta: RunDelta) -> PresetRun {
    PresetRun { run_id, delta }
}

pub fn preset_catalog() -> Vec<ExperimentPreset> {
    use EstimatorKind::*;
    vec![
        ExperimentPreset {
            name: "fig3",
            description: "no quantizer vs. STE with commitment loss at 60 and 120 bits",
            runs: vec![
                run("none", RunDelta::new(None, false)),
                run("ste_cl", RunDelta::new(Ste, true)),
                run("ste_cl_120bit", RunDelta::new(Ste, true).bits(4)),
            ],
        },
        ExperimentPreset {
            name: "fig4",
            description: "noise addition vs. STE, with and without commitment loss",
            runs: vec![
                run("na", RunDelta::new(Na, false)),
                run("na_cl", RunDelta::new(Na, true)),
                run("ste", RunDelta::new(Ste, false)),
                run("ste_cl", RunDelta::new(Ste, true)),
            ],
        },
        ExperimentPreset {
            name: "fig5",
            description: "attached vs. detached noise, with and without commitment loss",
            runs: vec![
                run("na", RunDelta::new(Na, false)),
                run("na_cl", RunDelta::new(Na, true)),
                run("na_det", RunDelta::new(NaDet, false)),
                run("na_det_cl", RunDelta::new(NaDet, true)),
            ],
        },
        ExperimentPreset {
            name: "fig6",
            description: "STE vs. modified STE, with and without commitment loss",
            runs: vec![
                run("ste", RunDelta::new(Ste, false)),
                run("ste_cl", RunDelta::new(Ste, true)),
                run("mste", RunDelta::new(Mste, false)),
                run("mste_cl", RunDelta::new(Mste, true)),
            ],
        },
    ]
}

pub fn find_preset(name: &str) -> Result<ExperimentPreset> {
    preset_catalog()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            let known: Vec<&str> = preset_catalog().iter().map(|p| p.name).collect();
            Error::Config(format!(
                "unknown preset '{name}' (known: {})",
                known.join(", ")
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::bits_per_value;
    use std::collections::HashSet;

    #[test]
    fn run_ids_unique_and_non_empty() {
        for p in preset_catalog() {
            assert!(!p.runs.is_empty());
            let ids: HashSet<_> = p.runs.iter().map(|r| r.run_id).collect();
            assert_eq!(ids.len(), p.runs.len(), "{}", p.name);
        }
    }

    #[test]
    fn grid_sizes() {
        let sizes: Vec<(&str, usize)> = preset_catalog()
            .iter()
            .map(|p| (p.name, p.runs.len()))
            .collect();
        assert_eq!(sizes, [("fig3", 3), ("fig4", 4), ("fig5", 4), ("fig6", 4)]);
    }

    #[test]
    fn fig3_high_rate_run_has_120_bits_per_frame() {
        let base = TrainConfig::default();
        let cfgs = find_preset("fig3").unwrap().configs(&base).unwrap();
        let hi = cfgs.iter().find(|c| c.run_id == "ste_cl_120bit").unwrap();
        assert_eq!(hi.quantizer_levels.len(), 16);
        let bits = base.model.width * bits_per_value(&hi.quantizer_levels).unwrap() as usize;
        assert_eq!(bits, 120);
        assert_eq!(hi.estimator.cl_weight, 0.1);
    }

    #[test]
    fn presets_share_the_base_seed() {
        let base = TrainConfig::default().with_seed(42);
        for p in preset_catalog() {
            for c in p.configs(&base).unwrap() {
                assert_eq!(c.seed, 42);
                assert_eq!(c.data.seed, 42);
            }
        }
    }

    #[test]
    fn unknown_preset_is_a_config_error() {
        assert!(matches!(find_preset("fig9"), Err(Error::Config(_))));
    }
}
