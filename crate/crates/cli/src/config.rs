//! Experiment configuration: per-experiment defaults, the partial JSON
//! config file, command-line overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdvr_core::instances::GridWorldSpec;

use crate::error::{HarnessError, Result};
pub use crate::experiments::AblationParams;

/// Which experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Structural inequalities on random instances.
    LemmaSuite,
    /// Exact-operator runs on the cyclic hard instance.
    OracleLb,
    /// Error versus discount on the two-state family at budget `5/(1-gamma)^2`.
    SweepTwoState,
    /// Extrapolation switched on versus off.
    AblationOe,
    /// Mini-batching switched on versus off.
    AblationMinibatch,
    /// Learning curves on a grid world with random features.
    Gridworld,
    /// Trajectory sampling on the two-state family.
    MarkovTwoState,
    /// One epoch of each variance-reduced method.
    EpochContraction,
    /// Iteration counts on a noiseless chain.
    Acceleration,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::LemmaSuite,
        Self::OracleLb,
        Self::SweepTwoState,
        Self::AblationOe,
        Self::AblationMinibatch,
        Self::Gridworld,
        Self::MarkovTwoState,
        Self::EpochContraction,
        Self::Acceleration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LemmaSuite => "lemma-suite",
            Self::OracleLb => "oracle-lb",
            Self::SweepTwoState => "sweep-two-state",
            Self::AblationOe => "ablation-oe",
            Self::AblationMinibatch => "ablation-minibatch",
            Self::Gridworld => "gridworld",
            Self::MarkovTwoState => "markov-two-state",
            Self::EpochContraction => "epoch-contraction",
            Self::Acceleration => "acceleration",
        }
    }

    /// Whether the experiment is built on the two-state or cyclic families,
    /// which only exist for discounts in `(1/2, 1)`.
    fn needs_upper_half_discount(self) -> bool {
        matches!(
            self,
            Self::OracleLb
                | Self::SweepTwoState
                | Self::AblationOe
                | Self::AblationMinibatch
                | Self::MarkovTwoState
                | Self::EpochContraction
        )
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Candidate budget-fitted schedule shapes; the best one on separate tuning
/// streams is used for the reported runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningGrid {
    pub eta_scales: Vec<f64>,
    pub inner_constants: Vec<f64>,
    pub epochs: Vec<usize>,
    pub growth: Vec<f64>,
    /// Replications per candidate on the tuning streams.
    pub tuning_trials: usize,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            eta_scales: vec![0.25, 0.5, 1.0, 2.0],
            inner_constants: vec![0.25, 0.5, 1.0, 2.0],
            epochs: vec![2, 3, 4, 5],
            growth: vec![1.5, 2.0],
            tuning_trials: 300,
        }
    }
}

/// How epoch schedules are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Parameters satisfying every convergence condition; runs reject
    /// anything else.
    Strict,
    /// Budget-fitted schedules picked from a grid.
    Tuned {
        #[serde(default)]
        grid: TuningGrid,
    },
}

impl ScheduleMode {
    pub fn is_strict(&self) -> bool {
        matches!(self, Self::Strict)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Strict => "strict",
            Self::Tuned { .. } => "tuned",
        }
    }
}

/// Fully resolved configuration of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub gamma_grid: Vec<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub schedule_mode: ScheduleMode,
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses every logical core.
    pub workers: Option<usize>,
    /// Epoch count for strict schedules.
    pub epochs: usize,
    /// Base recentering batch; `None` means `ceil(5/(1-gamma)^2)`.
    pub base_batch: Option<usize>,
    /// Sample budget per run; `None` means `ceil(5/(1-gamma)^2)`.
    pub budget: Option<u64>,
    /// States of the cyclic hard instance.
    pub num_states: usize,
    /// Largest number of operator evaluations checked against the oracle bound.
    pub queries: usize,
    /// Random vectors per instance in the lemma suite.
    pub vectors: usize,
    pub gridworld: GridWorldSpec,
    #[serde(default)]
    pub ablation: AblationParams,
}

/// Seed used when neither the config file nor the command line sets one.
pub const DEFAULT_SEED: u64 = 20_240_917;

const DISCOUNT_GRID: [f64; 5] = [0.8, 0.85, 0.9, 0.93, 0.95];

impl ExperimentConfig {
    /// Desk-scale defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut config = Self {
            experiment: kind,
            gamma_grid: DISCOUNT_GRID.to_vec(),
            trials: 200,
            base_seed: DEFAULT_SEED,
            schedule_mode: ScheduleMode::Strict,
            output_dir: PathBuf::from("results"),
            workers: None,
            epochs: 3,
            base_batch: None,
            budget: None,
            num_states: 100,
            queries: 20,
            vectors: 50,
            gridworld: GridWorldSpec::new(10, 10, 10, 20),
            ablation: AblationParams::default(),
        };
        match kind {
            ExperimentKind::LemmaSuite => {
                config.gamma_grid = Vec::new();
                config.trials = 100;
            }
            ExperimentKind::OracleLb => {
                config.gamma_grid = vec![0.75];
                config.trials = 1;
                config.epochs = 2;
            }
            ExperimentKind::SweepTwoState => {
                config.schedule_mode = ScheduleMode::Tuned {
                    grid: TuningGrid::default(),
                };
            }
            ExperimentKind::AblationOe => {
                config.schedule_mode = ScheduleMode::Tuned {
                    grid: TuningGrid::default(),
                };
            }
            ExperimentKind::AblationMinibatch => {}
            ExperimentKind::Gridworld => {
                config.gamma_grid = vec![0.99];
                config.trials = 20;
                config.budget = Some(200_000);
                config.schedule_mode = ScheduleMode::Tuned {
                    grid: TuningGrid {
                        eta_scales: vec![0.5],
                        inner_constants: vec![0.05],
                        epochs: vec![4],
                        growth: vec![1.5],
                        tuning_trials: 0,
                    },
                };
            }
            ExperimentKind::MarkovTwoState => {
                config.gamma_grid = vec![0.7];
                config.base_batch = Some(10_000);
            }
            ExperimentKind::EpochContraction => {
                config.gamma_grid = vec![0.8, 0.9];
                config.trials = 500;
                config.epochs = 1;
            }
            ExperimentKind::Acceleration => {
                config.gamma_grid = vec![0.9, 0.95, 0.975];
                config.trials = 1;
                config.epochs = 1;
            }
        }
        config
    }

    /// Applies a partial config file on top of the defaults.
    pub fn apply_file(&mut self, file: ConfigFile) -> Result<()> {
        if let Some(kind) = file.experiment {
            if kind != self.experiment {
                return Err(HarnessError::Config(format!(
                    "config file is for `{kind}` but `{}` was requested",
                    self.experiment
                )));
            }
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = file.$field { self.$field = v; })*
            };
        }
        take!(
            gamma_grid,
            trials,
            base_seed,
            schedule_mode,
            output_dir,
            epochs,
            num_states,
            queries,
            vectors,
            gridworld,
            ablation
        );
        if file.workers.is_some() {
            self.workers = file.workers;
        }
        if file.base_batch.is_some() {
            self.base_batch = file.base_batch;
        }
        if file.budget.is_some() {
            self.budget = file.budget;
        }
        Ok(())
    }

    /// Applies command-line flags, which take precedence over the file.
    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.base_seed = seed;
        }
        if let Some(trials) = overrides.trials {
            self.trials = trials;
        }
        if let Some(out) = &overrides.out {
            self.output_dir = out.clone();
        }
        if overrides.workers.is_some() {
            self.workers = overrides.workers;
        }
        if overrides.strict_schedule {
            self.schedule_mode = ScheduleMode::Strict;
        }
    }

    /// Defaults, then the optional file, then the flags; validated.
    pub fn resolve(
        kind: ExperimentKind,
        file: Option<&Path>,
        overrides: &Overrides,
    ) -> Result<Self> {
        let mut config = Self::defaults(kind);
        if let Some(path) = file {
            config.apply_file(ConfigFile::load(path)?)?;
        }
        config.apply_overrides(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1".into());
        }
        if self.experiment != ExperimentKind::LemmaSuite && self.gamma_grid.is_empty() {
            return fail(format!(
                "`{}` needs a non-empty gamma_grid",
                self.experiment
            ));
        }
        let low = if self.experiment.needs_upper_half_discount() {
            0.5
        } else {
            0.0
        };
        if let Some(g) = self.gamma_grid.iter().find(|&&g| !(g > low && g < 1.0)) {
            return fail(format!(
                "discount {g} outside ({low}, 1) for `{}`",
                self.experiment
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.base_batch == Some(0) || self.budget == Some(0) {
            return fail("batch sizes and budgets must be positive".into());
        }
        self.ablation.validate().map_err(HarnessError::Config)?;
        if let ScheduleMode::Tuned { grid } = &self.schedule_mode {
            if grid.eta_scales.is_empty()
                || grid.inner_constants.is_empty()
                || grid.epochs.is_empty()
                || grid.growth.is_empty()
            {
                return fail("every tuning grid axis needs at least one value".into());
            }
            if grid
                .eta_scales
                .iter()
                .chain(&grid.inner_constants)
                .chain(&grid.growth)
                .any(|&x| !(x > 0.0))
                || grid.epochs.contains(&0)
            {
                return fail("tuning grid values must be positive".into());
            }
        }
        match self.experiment {
            ExperimentKind::OracleLb if self.num_states < 2 => {
                fail("the cyclic instance needs at least two states".into())
            }
            ExperimentKind::LemmaSuite if self.vectors == 0 => {
                fail("the lemma suite needs at least one vector per instance".into())
            }
            ExperimentKind::Gridworld if self.schedule_mode.is_strict() => fail(
                "strict schedules are infeasible at grid-world scale; use the tuned mode".into(),
            ),
            ExperimentKind::MarkovTwoState
            | ExperimentKind::EpochContraction
            | ExperimentKind::Acceleration
                if !self.schedule_mode.is_strict() =>
            {
                fail(format!("`{}` only runs strict schedules", self.experiment))
            }
            _ => Ok(()),
        }
    }

    /// `ceil(5 / (1 - gamma)^2)`, the default sample budget.
    pub fn default_budget(gamma: f64) -> u64 {
        (5.0 / (1.0 - gamma).powi(2) - 1e-9).ceil() as u64
    }
}

/// Config file contents: every field optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<ExperimentKind>,
    pub gamma_grid: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub base_seed: Option<u64>,
    pub schedule_mode: Option<ScheduleMode>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
    pub base_batch: Option<usize>,
    pub budget: Option<u64>,
    pub num_states: Option<usize>,
    pub queries: Option<usize>,
    pub vectors: Option<usize>,
    pub gridworld: Option<GridWorldSpec>,
    pub ablation: Option<AblationParams>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line flags that override config values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub strict_schedule: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for kind in ExperimentKind::ALL {
            ExperimentConfig::defaults(kind).validate().unwrap();
        }
    }

    #[test]
    fn names_match_serde() {
        for kind in ExperimentKind::ALL {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
    }

    #[test]
    fn file_then_flags() {
        let file: ConfigFile = serde_json::from_str(
            r#"{"experiment":"sweep-two-state","trials":7,"base_seed":3,"gamma_grid":[0.9],
                "schedule_mode":{"mode":"tuned","grid":{"eta_scales":[1.0],"inner_constants":[1.0],
                "epochs":[2],"growth":[2.0],"tuning_trials":5}}}"#,
        )
        .unwrap();
        let mut config = ExperimentConfig::defaults(ExperimentKind::SweepTwoState);
        config.apply_file(file).unwrap();
        assert_eq!(config.trials, 7);
        assert_eq!(config.base_seed, 3);
        config.apply_overrides(&Overrides {
            seed: Some(11),
            strict_schedule: true,
            ..Default::default()
        });
        assert_eq!(config.base_seed, 11);
        assert!(config.schedule_mode.is_strict());
        config.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut config = ExperimentConfig::defaults(ExperimentKind::SweepTwoState);
        config.gamma_grid = vec![0.4];
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::defaults(ExperimentKind::OracleLb);
        config.trials = 0;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::defaults(ExperimentKind::Gridworld);
        config.schedule_mode = ScheduleMode::Strict;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::defaults(ExperimentKind::Gridworld);
        config
            .apply_file(ConfigFile {
                experiment: Some(ExperimentKind::LemmaSuite),
                ..Default::default()
            })
            .unwrap_err();
        config.gamma_grid = vec![0.3];
        config.validate().unwrap();
        assert!(serde_json::from_str::<ConfigFile>(r#"{"trails": 3}"#).is_err());
    }

    #[test]
    fn default_budget_is_ceiling() {
        assert_eq!(ExperimentConfig::default_budget(0.9), 500);
        assert_eq!(ExperimentConfig::default_budget(0.8), 125);
        assert_eq!(ExperimentConfig::default_budget(0.93), 1021);
    }
}
