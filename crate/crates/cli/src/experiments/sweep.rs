//! Error against discount on the two-state family at the budget
//! `ceil(5/(1-gamma)^2)`, compared with the trace functional over the budget.

use std::collections::BTreeMap;

use serde::Serialize;
use tdvr_core::algorithms::{
    run_td_family, run_vrftd_iid, run_vrtd, theoretical_schedule, EpochSchedule, Oracle, Problem,
    RunOptions, RunTrace, Setting, StepRule, TdOutput,
};
use tdvr_core::sampling::{SamplingModel, TrialRng};

use super::common::{self, BoundSource, BoundSourceKind, TunedSchedule};
use super::{Ctx, Outcome};
use crate::config::{ExperimentConfig, ScheduleMode};
use crate::error::{HarnessError, Result};
use crate::output::{CsvRow, RowSink};
use crate::trials::cell_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    TdDiminishing,
    Vrtd,
    Vrftd,
}

impl Method {
    const ALL: [Method; 3] = [Method::TdDiminishing, Method::Vrtd, Method::Vrftd];

    fn name(self) -> &'static str {
        match self {
            Method::TdDiminishing => "td",
            Method::Vrtd => "vrtd",
            Method::Vrftd => "vrftd",
        }
    }

    fn setting(self) -> Option<Setting> {
        match self {
            Method::TdDiminishing => None,
            Method::Vrtd => Some(Setting::Vrtd),
            Method::Vrftd => Some(Setting::VrftdIid),
        }
    }
}

/// Per-discount record in the summary.
#[derive(Debug, Serialize)]
struct CellDetail {
    algorithm: &'static str,
    gamma: f64,
    budget: u64,
    samples: u64,
    mean_err_pi_sq: f64,
    /// Mean error over `trace / samples`.
    ratio_to_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuned: Option<TunedSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<EpochSchedule>,
}

#[derive(Debug, Serialize)]
struct Details {
    lower_bound_sources: Vec<BoundSource>,
    cells: Vec<CellDetail>,
    /// Slope of the lower-bound curve `trace / budget` itself.
    lower_bound_slope: Option<f64>,
}

/// Stepsize of the diminishing-step baseline: `eta_0 / (t + 1)` with
/// `eta_0 = 1 / (2 beta (1 + gamma))`.
pub(crate) fn td_steps(problem: &Problem) -> StepRule {
    let beta = problem.basis().beta();
    let gamma = problem.instance().gamma();
    StepRule::Diminishing {
        eta0: 1.0 / (2.0 * beta * (1.0 + gamma)),
        power: 1.0,
        offset: 1.0,
    }
}

pub(crate) fn run_vr(
    problem: &Problem,
    setting: Setting,
    schedule: &EpochSchedule,
    opts: &RunOptions,
    rng: &mut TrialRng,
) -> Result<RunTrace> {
    let oracle = Oracle::Sampled(SamplingModel::stationary_iid());
    let theta0 = common::zero_start(problem);
    Ok(match setting {
        Setting::Vrtd => run_vrtd(problem, &oracle, schedule, &theta0, opts, rng)?,
        Setting::VrftdIid => run_vrftd_iid(problem, &oracle, schedule, &theta0, opts, rng)?,
        Setting::VrftdMarkov => {
            return Err(HarnessError::Config(
                "trajectory sampling is not part of this sweep".into(),
            ))
        }
    })
}

pub(crate) fn final_error(trace: &RunTrace) -> f64 {
    trace.final_checkpoint().map_or(f64::NAN, |c| c.error_pi_sq)
}

pub(crate) fn budget_of(config: &ExperimentConfig, gamma: f64) -> u64 {
    config
        .budget
        .unwrap_or_else(|| ExperimentConfig::default_budget(gamma))
}

pub fn run(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let mut problems = Vec::new();
    let mut sources = Vec::new();
    ctx.timed("setup", |ctx| {
        for &gamma in &config.gamma_grid {
            let problem = common::two_state_problem(gamma)?;
            let label = format!("two-state-{}", common::gamma_label(gamma));
            sources.push(common::register_bound(
                ctx,
                &label,
                gamma,
                &problem,
                BoundSourceKind::Iid,
            )?);
            problems.push(problem);
        }
        Ok(())
    })?;

    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut slopes = BTreeMap::new();
    let mut cells = Vec::new();
    let quiet = RunOptions {
        checkpoints: 1,
        ..RunOptions::default()
    };
    let strict_opts = RunOptions {
        strict: true,
        ..quiet.clone()
    };
    for (mi, method) in Method::ALL.into_iter().enumerate() {
        let mut rows = Vec::new();
        let tag = match (method, &config.schedule_mode) {
            (Method::TdDiminishing, _) => "diminishing",
            (_, mode) => mode.tag(),
        };
        ctx.timed(method.name(), |ctx| {
            for (gi, (problem, source)) in problems.iter().zip(&sources).enumerate() {
                let gamma = source.gamma;
                let budget = budget_of(config, gamma);
                let seed = cell_seed(config.base_seed, &[mi as u64, gi as u64]);
                let (errors, samples, tuned, schedule) = match method.setting() {
                    None => {
                        let steps = td_steps(problem);
                        let theta0 = common::zero_start(problem);
                        let oracle = Oracle::Sampled(SamplingModel::stationary_iid());
                        let errs = ctx.pool.run(seed, 0, config.trials, |_, rng| {
                            let trace = run_td_family(
                                problem,
                                &oracle,
                                steps,
                                0.0,
                                budget,
                                TdOutput::LastIterate,
                                &theta0,
                                &quiet,
                                rng,
                            )?;
                            Ok(final_error(&trace))
                        })?;
                        (errs, budget, None, None)
                    }
                    Some(setting) => {
                        let (schedule, tuned, opts) = match &config.schedule_mode {
                            ScheduleMode::Strict => {
                                let base = config.base_batch.unwrap_or(budget as usize);
                                let stats = problem.stats()?;
                                let s = theoretical_schedule(&stats, config.epochs, base, setting)?;
                                (s, None, &strict_opts)
                            }
                            ScheduleMode::Tuned { grid } => {
                                let t = common::tune_schedule(
                                    ctx,
                                    seed,
                                    problem,
                                    budget as usize,
                                    grid,
                                    setting,
                                    |s, rng| {
                                        Ok(final_error(&run_vr(problem, setting, s, &quiet, rng)?))
                                    },
                                )?;
                                (t.schedule.clone(), Some(t), &quiet)
                            }
                        };
                        let errs = ctx.pool.run(seed, 0, config.trials, |_, rng| {
                            Ok(final_error(&run_vr(
                                problem, setting, &schedule, opts, rng,
                            )?))
                        })?;
                        let samples = schedule.total_samples();
                        (errs, samples, tuned, Some(schedule))
                    }
                };
                let lower = source.trace / samples as f64;
                let row = common::make_row(ctx, method.name(), gamma, tag, samples, &errors, lower);
                cells.push(CellDetail {
                    algorithm: method.name(),
                    gamma,
                    budget,
                    samples,
                    mean_err_pi_sq: row.mean_err_pi_sq,
                    ratio_to_bound: row.mean_err_pi_sq / lower,
                    tuned,
                    schedule: if config.schedule_mode.is_strict() {
                        schedule
                    } else {
                        None
                    },
                });
                rows.push(row);
            }
            Ok(())
        })?;
        if let Some(s) = common::fill_slope(&mut rows) {
            slopes.insert(format!("{}/{}", method.name(), tag), s);
        }
        sink.push_all(&rows)?;
    }
    let rows = sink.finish()?;
    let xs: Vec<f64> = sources.iter().map(|s| 1.0 / (1.0 - s.gamma)).collect();
    let ys: Vec<f64> = sources
        .iter()
        .map(|s| s.trace / budget_of(config, s.gamma) as f64)
        .collect();
    let lower_bound_slope = crate::stats::loglog_slope(&xs, &ys);
    if let Some(s) = lower_bound_slope {
        slopes.insert("lower_bound".into(), s);
    }
    Outcome::rows(
        rows,
        slopes,
        Details {
            lower_bound_sources: sources,
            cells,
            lower_bound_slope,
        },
    )
}
