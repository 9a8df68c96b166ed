use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PsConfig;
use crate::sim::{KeyframeNoise, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub count: usize,
    pub pos_std: f64,
    pub feature_std: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            count: 20,
            pos_std: 0.015,
            feature_std: KeyframeNoise::default().feature_std,
        }
    }
}

impl DemoConfig {
    pub fn noise(&self) -> KeyframeNoise {
        KeyframeNoise {
            pos_std: self.pos_std,
            feature_std: self.feature_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub gmm_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            gmm_restarts: 10,
        }
    }
}

/// Displacement of the action state at `position` of the expected
/// trajectory (0-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub position: usize,
    pub displacement_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Builtin scenario name or path to a scenario JSON file, relative to
    /// the config file.
    pub scenario: String,
    /// Goal hidden states; defaults to the number of distinct object phases.
    pub n_goal: Option<usize>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Worker threads for repetitions; 0 uses every core.
    pub workers: usize,
    pub steps_per_segment: usize,
    /// Seconds the end effector rests at the end of every execution.
    pub rollout_hold_s: f64,
    /// Uniform floor mixed into the trained model's probabilities.
    pub prob_floor: f64,
    /// Perturbation directions tried until the skill fails.
    pub perturb_attempts: usize,
    pub demos: DemoConfig,
    pub em: EmConfig,
    pub perturbations: Vec<PerturbationSpec>,
    pub ps: PsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "close_box".into(),
            n_goal: None,
            repetitions: 5,
            base_seed: 0,
            workers: 0,
            steps_per_segment: 10,
            rollout_hold_s: 2.0,
            prob_floor: 1e-6,
            perturb_attempts: 20,
            demos: DemoConfig::default(),
            em: EmConfig::default(),
            perturbations: Vec::new(),
            ps: PsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative scenario paths are resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&s)?;
        if Scenario::builtin(&cfg.scenario).is_none() {
            let p = PathBuf::from(&cfg.scenario);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.scenario = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.steps_per_segment == 0 {
            return bad("steps_per_segment must be positive");
        }
        if !(self.rollout_hold_s >= 0.0) {
            return bad("rollout_hold_s must be non-negative");
        }
        if !(self.prob_floor >= 0.0 && self.prob_floor < 0.1) {
            return bad("prob_floor must lie in [0, 0.1)");
        }
        if self.perturb_attempts == 0 {
            return bad("perturb_attempts must be positive");
        }
        if self.demos.count == 0 || !(self.demos.pos_std >= 0.0) || !(self.demos.feature_std >= 0.0) {
            return bad("demos need a positive count and non-negative noise");
        }
        if self.n_goal == Some(0) {
            return bad("n_goal must be positive");
        }
        if self.em.gmm_restarts == 0 {
            return bad("em.gmm_restarts must be positive");
        }
        if self.perturbations.iter().any(|p| !(p.displacement_m >= 0.0)) {
            return bad("perturbation displacements must be non-negative");
        }
        self.ps.validate()
    }

    /// The referenced scenario: a builtin name or a JSON file.
    pub fn resolve_scenario(&self) -> Result<Scenario> {
        match Scenario::builtin(&self.scenario) {
            Some(s) => Ok(s),
            None => {
                let p = Path::new(&self.scenario);
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "scenario '{}' is neither a builtin ({}) nor an existing file",
                        self.scenario,
                        Scenario::BUILTIN_NAMES.join(", ")
                    )));
                }
                Scenario::load(p)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            scenario = "open_drawer"
            repetitions = 3

            [[perturbations]]
            position = 2
            displacement_m = 0.09

            [ps]
            alpha = 2.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.repetitions, 3);
        assert_eq!(cfg.perturbations[0].position, 2);
        assert_eq!(cfg.ps.alpha, 2.0);
        assert_eq!(cfg.ps.max_episodes, 10);
        assert_eq!(cfg.demos, DemoConfig::default());
    }

    #[test]
    fn bad_configs_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml("repetitions = 0"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("unknown_key = 1"),
            Err(Error::Config(_))
        ));
        let cfg = ExperimentConfig {
            scenario: "/nonexistent/scenario.json".into(),
            ..Default::default()
        };
        assert!(matches!(cfg.resolve_scenario(), Err(Error::Config(_))));
    }
}
