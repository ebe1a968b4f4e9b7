//! Helpers shared by the drivers.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use tdvr_core::algorithms::{budget_schedule, BudgetShape, EpochSchedule, Problem, Setting};
use tdvr_core::bounds::{self, CovarianceBundle};
use tdvr_core::instances;
use tdvr_core::mrp::InstanceFile;
use tdvr_core::sampling::TrialRng;

use super::Ctx;
use crate::config::TuningGrid;
use crate::error::{HarnessError, Result};
use crate::output::{self, CsvRow};
use crate::stats;
use crate::trials::TUNING_STREAM_OFFSET;

/// Which noise covariance a lower-bound column was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSourceKind {
    /// Independent tuples drawn from the stationary distribution.
    Iid,
    /// A stationary trajectory.
    Markov,
}

/// Where the lower-bound column for one discount comes from: the
/// serialized instance (with features) and the covariance it implies.
/// Every row's `lower_bound` is the trace functional divided by the row's
/// `samples`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSource {
    pub gamma: f64,
    pub instance: String,
    pub covariance: String,
    pub kind: BoundSourceKind,
    pub trace: f64,
}

fn covariance_of(problem: &Problem, kind: BoundSourceKind) -> Result<CovarianceBundle> {
    let instance = problem.instance();
    let basis = problem.basis();
    Ok(match kind {
        BoundSourceKind::Iid => {
            bounds::iid_covariance(instance, basis, basis.weights().as_slice())?
        }
        BoundSourceKind::Markov => bounds::markov_covariance(instance, basis, None)?,
    })
}

/// Rebuilds the problem from a serialized instance and recomputes its
/// covariance bundle.
pub fn bound_source_problem(
    dir: &Path,
    source: &BoundSource,
) -> Result<(Problem, CovarianceBundle)> {
    let file: InstanceFile = output::read_json(&dir.join(&source.instance))?;
    let instance = file.instance()?;
    let psi = file
        .psi()?
        .ok_or_else(|| HarnessError::Config(format!("{} has no features", source.instance)))?;
    let problem = Problem::new(instance, &psi)?;
    let bundle = covariance_of(&problem, source.kind)?;
    Ok((problem, bundle))
}

/// Serializes the problem and its covariance bundle and returns the record
/// the lower-bound column is derived from.
pub fn register_bound(
    ctx: &mut Ctx,
    label: &str,
    gamma: f64,
    problem: &Problem,
    kind: BoundSourceKind,
) -> Result<BoundSource> {
    let bundle = covariance_of(problem, kind)?;
    let trace = bounds::stochastic_lower_bound(&bundle)?;
    let instance_rel = format!("instances/{label}.json");
    let file = problem
        .instance()
        .to_file()
        .with_features(problem.basis().psi());
    ctx.write_json(&instance_rel, &file)?;
    let kind_tag = match kind {
        BoundSourceKind::Iid => "iid",
        BoundSourceKind::Markov => "markov",
    };
    let covariance_rel = format!("covariance/{label}-{kind_tag}.json");
    ctx.write_json(&covariance_rel, &bundle.to_file())?;
    Ok(BoundSource {
        gamma,
        instance: instance_rel,
        covariance: covariance_rel,
        kind,
        trace,
    })
}

pub fn two_state_problem(gamma: f64) -> Result<Problem> {
    let instance = instances::two_state_instance(gamma)?;
    Ok(Problem::new(instance, &instances::two_state_features())?)
}

pub fn gamma_label(gamma: f64) -> String {
    format!("g{gamma}")
}

pub fn zero_start(problem: &Problem) -> DVector<f64> {
    DVector::zeros(problem.basis().dim())
}

/// `||v_0 - v_bar||_Pi^2` from the zero start.
pub fn initial_gap_sq(problem: &Problem) -> f64 {
    problem.error_to_vbar_sq(zero_start(problem).as_slice())
}

/// Aggregates per-trial values into a table row.
#[allow(clippy::too_many_arguments)]
pub fn make_row(
    ctx: &Ctx,
    algorithm: &str,
    gamma: f64,
    tag: &str,
    samples: u64,
    values: &[f64],
    lower_bound: f64,
) -> CsvRow {
    let (mean, stderr) = stats::mean_stderr(values);
    CsvRow {
        experiment: ctx.name().into(),
        algorithm: algorithm.into(),
        gamma,
        stepsize_tag: tag.into(),
        trials: values.len(),
        samples,
        mean_err_pi_sq: mean,
        stderr,
        lower_bound,
        slope_fit: None,
    }
}

/// Fits the log-log slope of mean error against `1/(1-gamma)` over `rows`
/// and stores it in every row.
pub fn fill_slope(rows: &mut [CsvRow]) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().map(|r| 1.0 / (1.0 - r.gamma)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_err_pi_sq).collect();
    let slope = stats::loglog_slope(&xs, &ys);
    for row in rows.iter_mut() {
        row.slope_fit = slope;
    }
    slope
}

/// Outcome of a schedule search.
#[derive(Clone, Debug, Serialize)]
pub struct TunedSchedule {
    pub shape: BudgetShape,
    pub schedule: EpochSchedule,
    /// Mean tuning-stream error of the chosen shape (absent when nothing
    /// was tuned).
    pub tuning_error: Option<f64>,
    pub candidates: usize,
}

/// Every budget-feasible shape of the grid, in grid order.
pub fn candidate_schedules(
    problem: &Problem,
    budget: usize,
    grid: &TuningGrid,
    setting: Setting,
) -> Result<Vec<(BudgetShape, EpochSchedule)>> {
    let stats = problem.stats()?;
    let mut out = Vec::new();
    for &eta_scale in &grid.eta_scales {
        for &inner_constant in &grid.inner_constants {
            for &epochs in &grid.epochs {
                for &growth in &grid.growth {
                    let shape = BudgetShape {
                        eta_scale,
                        inner_constant,
                        epochs,
                        growth,
                    };
                    if let Ok(schedule) = budget_schedule(&stats, budget, &shape, setting) {
                        out.push((shape, schedule));
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config(format!(
            "no tuning-grid shape fits a budget of {budget} samples"
        )));
    }
    Ok(out)
}

/// Picks the shape with the lowest mean final error on the tuning streams
/// (first in grid order on ties). `evaluate(schedule, rng)` returns one
/// run's error. With no tuning trials the first feasible shape is used.
pub fn tune_schedule<F>(
    ctx: &Ctx,
    seed: u64,
    problem: &Problem,
    budget: usize,
    grid: &TuningGrid,
    setting: Setting,
    evaluate: F,
) -> Result<TunedSchedule>
where
    F: Fn(&EpochSchedule, &mut TrialRng) -> Result<f64> + Sync,
{
    let candidates = candidate_schedules(problem, budget, grid, setting)?;
    let count = candidates.len();
    if grid.tuning_trials == 0 || count == 1 {
        let (shape, schedule) = candidates.into_iter().next().expect("non-empty");
        return Ok(TunedSchedule {
            shape,
            schedule,
            tuning_error: None,
            candidates: count,
        });
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, (_, schedule)) in candidates.iter().enumerate() {
        let errs = ctx
            .pool
            .run(seed, TUNING_STREAM_OFFSET, grid.tuning_trials, |_, rng| {
                evaluate(schedule, rng)
            })?;
        let (mean, _) = stats::mean_stderr(&errs);
        if mean.is_finite() && best.is_none_or(|(b, _)| mean < b) {
            best = Some((mean, i));
        }
    }
    let (err, idx) =
        best.ok_or_else(|| HarnessError::Config("every tuning candidate diverged".into()))?;
    let (shape, schedule) = candidates
        .into_iter()
        .nth(idx)
        .expect("index from the same list");
    Ok(TunedSchedule {
        shape,
        schedule,
        tuning_error: Some(err),
        candidates: count,
    })
}
