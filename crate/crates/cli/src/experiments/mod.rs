//! Experiment drivers. Each driver streams its rows to a CSV in the output
//! directory and returns them together with a JSON summary.

mod ablation;
mod common;
mod contraction;
mod gridworld;
mod lemmas;
mod markov;
mod oracle;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::output::{self, CsvRow, RowSink, Summary};
use crate::trials::TrialPool;

pub use ablation::AblationParams;
pub use common::{bound_source_problem, BoundSource, BoundSourceKind};
pub use lemmas::LemmaRow;

/// Everything an experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<CsvRow>,
    /// Rows of the lemma table (lemma suite only).
    pub lemma_rows: Vec<LemmaRow>,
    pub summary: Summary,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

/// What a driver hands back to [`run_experiment`].
struct Outcome {
    rows: Vec<CsvRow>,
    lemma_rows: Vec<LemmaRow>,
    slopes: BTreeMap<String, f64>,
    details: serde_json::Value,
}

impl Outcome {
    fn rows(
        rows: Vec<CsvRow>,
        slopes: BTreeMap<String, f64>,
        details: impl Serialize,
    ) -> Result<Self> {
        Ok(Self {
            rows,
            lemma_rows: Vec::new(),
            slopes,
            details: serde_json::to_value(details)?,
        })
    }
}

/// Shared state of one run: configuration, worker pool, output directory
/// and the artifact and timing bookkeeping.
pub(crate) struct Ctx<'a> {
    pub config: &'a ExperimentConfig,
    pub pool: TrialPool,
    out: PathBuf,
    artifacts: Vec<String>,
    runtimes: BTreeMap<String, f64>,
}

impl<'a> Ctx<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let out = config.output_dir.clone();
        output::ensure_dir(&out)?;
        Ok(Self {
            config,
            pool: TrialPool::new(config.workers)?,
            out,
            artifacts: Vec::new(),
            runtimes: BTreeMap::new(),
        })
    }

    pub fn name(&self) -> &'static str {
        self.config.experiment.name()
    }

    /// Path of `relative` inside the output directory, creating parents
    /// and recording it as an artifact.
    pub fn artifact(&mut self, relative: &str) -> Result<PathBuf> {
        let path = self.out.join(relative);
        if let Some(parent) = path.parent() {
            output::ensure_dir(parent)?;
        }
        if !self.artifacts.iter().any(|a| a == relative) {
            self.artifacts.push(relative.to_string());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<()> {
        let path = self.artifact(relative)?;
        output::write_json(&path, value)
    }

    pub fn sink<T: Serialize + Clone>(&mut self, relative: &str) -> Result<RowSink<T>> {
        let path = self.artifact(relative)?;
        RowSink::create(path)
    }

    /// Runs `f`, adding its wall-clock time to the `label` stage.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let value = f(self)?;
        *self.runtimes.entry(label.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        Ok(value)
    }
}

/// Main results table of an experiment, relative to the output directory.
pub fn csv_name(kind: ExperimentKind) -> String {
    match kind {
        ExperimentKind::LemmaSuite => "lemmas.csv".into(),
        other => format!("{}.csv", other.name()),
    }
}

pub fn summary_name(kind: ExperimentKind) -> String {
    format!("{}.summary.json", kind.name())
}

/// Runs one experiment end to end and writes its artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut ctx = Ctx::new(config)?;
    let start = Instant::now();
    let outcome = match config.experiment {
        ExperimentKind::LemmaSuite => lemmas::run(&mut ctx)?,
        ExperimentKind::OracleLb => oracle::run(&mut ctx)?,
        ExperimentKind::SweepTwoState => sweep::run(&mut ctx)?,
        ExperimentKind::AblationOe => ablation::run_extrapolation(&mut ctx)?,
        ExperimentKind::AblationMinibatch => ablation::run_minibatch(&mut ctx)?,
        ExperimentKind::Gridworld => gridworld::run(&mut ctx)?,
        ExperimentKind::MarkovTwoState => markov::run(&mut ctx)?,
        ExperimentKind::EpochContraction => contraction::run_epoch(&mut ctx)?,
        ExperimentKind::Acceleration => contraction::run_acceleration(&mut ctx)?,
    };
    ctx.runtimes
        .insert("total".into(), start.elapsed().as_secs_f64());
    let summary_rel = summary_name(config.experiment);
    ctx.artifact(&summary_rel)?;
    let summary = Summary {
        experiment: config.experiment.name().into(),
        config: config.clone(),
        workers: ctx.pool.workers(),
        slopes: outcome.slopes,
        runtimes_sec: ctx.runtimes.clone(),
        artifacts: ctx.artifacts.clone(),
        details: outcome.details,
    };
    let summary_path = ctx.out.join(&summary_rel);
    output::write_json(&summary_path, &summary)?;
    Ok(ExperimentReport {
        rows: outcome.rows,
        lemma_rows: outcome.lemma_rows,
        summary,
        csv_path: ctx.out.join(csv_name(config.experiment)),
        summary_path,
    })
}

/// Convenience for tests and scripts: the CSV path of a finished run.
pub fn csv_path(dir: &Path, kind: ExperimentKind) -> PathBuf {
    dir.join(csv_name(kind))
}
