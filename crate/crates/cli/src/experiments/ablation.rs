//! Ablations on the two-state family at the budget `ceil(5/(1-gamma)^2)`:
//! extrapolation on versus off, and mini-batching on versus off, each pair
//! at equal sample counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tdvr_core::algorithms::{Averaging, EpochSchedule, Problem, RunOptions, Setting};

use super::common::{self, BoundSource, BoundSourceKind};
use super::sweep::{budget_of, final_error, run_vr};
use super::{Ctx, Outcome};
use crate::config::ScheduleMode;
use crate::error::{HarnessError, Result};
use crate::output::{CsvRow, RowSink};
use crate::trials::{cell_seed, TUNING_STREAM_OFFSET};

/// Shape of the budget-fitted epochs used by both ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationParams {
    /// Share of the budget spent in inner loops; the rest recenters.
    pub inner_fraction: f64,
    /// Recentering batches grow in proportion `growth^k`.
    pub growth: f64,
    /// Inner mini-batch of the mini-batched group.
    pub minibatch: usize,
    /// Multiple of `1 / (4 beta (1 + gamma))` used as the aggressive stepsize.
    pub aggressive_scale: f64,
}

impl Default for AblationParams {
    fn default() -> Self {
        Self {
            inner_fraction: 0.5,
            growth: 2.0,
            minibatch: 4,
            aggressive_scale: 4.0,
        }
    }
}

impl AblationParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.inner_fraction > 0.0
            && self.inner_fraction < 1.0
            && self.growth > 0.0
            && self.aggressive_scale > 0.0)
            || self.minibatch == 0
        {
            return Err(format!("ablation parameters must be positive: {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct GroupDetail {
    algorithm: &'static str,
    gamma: f64,
    stepsize_tag: &'static str,
    schedule: EpochSchedule,
    mean_err_pi_sq: f64,
}

#[derive(Debug, Serialize)]
struct Details {
    params: AblationParams,
    lower_bound_sources: Vec<BoundSource>,
    groups: Vec<GroupDetail>,
}

/// `1 / (4 beta (1 + gamma))`, the extrapolated method's stepsize.
fn extrapolated_stepsize(problem: &Problem) -> f64 {
    let beta = problem.basis().beta();
    let gamma = problem.instance().gamma();
    1.0 / (4.0 * beta * (1.0 + gamma))
}

/// Stepsize the non-extrapolated method is entitled to:
/// `min((1-gamma) / (2 beta (1+gamma)^2), (1-gamma) / (32 varsigma^2))`.
fn plain_stepsize(problem: &Problem) -> Result<f64> {
    let stats = problem.stats()?;
    let gamma = stats.gamma;
    let mut eta = (1.0 - gamma) / (2.0 * stats.beta * (1.0 + gamma).powi(2));
    if stats.varsigma_sq > 0.0 {
        eta = eta.min((1.0 - gamma) / (32.0 * stats.varsigma_sq));
    }
    Ok(eta)
}

/// Epochs with `inner` steps of `minibatch` samples each; the rest of the
/// budget goes to the recentering batches in proportion `growth^k`.
fn fit_schedule(
    budget: u64,
    epochs: usize,
    eta: f64,
    inner: usize,
    minibatch: usize,
    growth: f64,
) -> Result<EpochSchedule> {
    let inner_total = (epochs * inner * minibatch) as u64;
    if inner_total + epochs as u64 > budget {
        return Err(HarnessError::Config(format!(
            "budget {budget} cannot fit {epochs} epochs of {inner} steps x {minibatch} samples"
        )));
    }
    let left = (budget - inner_total) as usize;
    let weights: Vec<f64> = (0..epochs).map(|i| growth.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total * left as f64).floor() as usize).max(1))
        .collect();
    let used: usize = sizes.iter().sum();
    if used > left {
        return Err(HarnessError::Config(
            "budget too small for the recentering batches".into(),
        ));
    }
    sizes[epochs - 1] += left - used;
    Ok(EpochSchedule {
        eta,
        lambda: 1.0,
        inner_iters: inner,
        minibatch,
        minibatch_burn_in: 0,
        recenter_burn_in: 0,
        recenter_sizes: sizes,
        base_batch: left,
        tau: 0,
        averaging: Averaging::UniformTail,
    })
}

/// Inner steps per epoch for unit batches, so that all epochs together
/// spend `fraction` of the budget.
fn inner_length(budget: u64, fraction: f64, epochs: usize, minibatch: usize) -> usize {
    ((fraction * budget as f64 / (epochs * minibatch) as f64).floor() as usize).max(1)
}

/// A named group with its schedule for one stepsize variant.
struct Arm {
    name: &'static str,
    tag: &'static str,
    schedule: EpochSchedule,
    /// Candidate stepsizes to tune over (empty: use the schedule's).
    tune: Vec<f64>,
}

fn extrapolation_arms(ctx: &Ctx, problem: &Problem, budget: u64) -> Result<Vec<Arm>> {
    let config = ctx.config;
    let params = &config.ablation;
    let eta = extrapolated_stepsize(problem);
    let inner = inner_length(budget, params.inner_fraction, config.epochs, 1);
    let on = fit_schedule(budget, config.epochs, eta, inner, 1, params.growth)?;
    let off = EpochSchedule {
        eta: plain_stepsize(problem)?,
        lambda: 0.0,
        ..on.clone()
    };
    let mut arms = vec![
        Arm {
            name: "vrftd",
            tag: "theory",
            schedule: on.clone(),
            tune: Vec::new(),
        },
        Arm {
            name: "vrftd-no-extrapolation",
            tag: "theory",
            schedule: off.clone(),
            tune: Vec::new(),
        },
    ];
    if let ScheduleMode::Tuned { grid } = &config.schedule_mode {
        let candidates: Vec<f64> = grid.eta_scales.iter().map(|s| s * eta).collect();
        arms.push(Arm {
            name: "vrftd",
            tag: "tuned",
            schedule: on,
            tune: candidates.clone(),
        });
        arms.push(Arm {
            name: "vrftd-no-extrapolation",
            tag: "tuned",
            schedule: off,
            tune: candidates,
        });
    }
    Ok(arms)
}

fn minibatch_arms(ctx: &Ctx, problem: &Problem, budget: u64) -> Result<Vec<Arm>> {
    let config = ctx.config;
    let params = &config.ablation;
    let mut arms = Vec::new();
    for (tag, scale) in [("theory", 1.0), ("aggressive", params.aggressive_scale)] {
        let eta = scale * extrapolated_stepsize(problem);
        let m = params.minibatch;
        let inner = inner_length(budget, params.inner_fraction, config.epochs, m);
        arms.push(Arm {
            name: "vrftd",
            tag,
            schedule: fit_schedule(budget, config.epochs, eta, inner, m, params.growth)?,
            tune: Vec::new(),
        });
        arms.push(Arm {
            name: "vrftd-no-minibatch",
            tag,
            schedule: fit_schedule(budget, config.epochs, eta, inner * m, 1, params.growth)?,
            tune: Vec::new(),
        });
    }
    Ok(arms)
}

/// Picks the stepsize with the lowest mean error on the tuning streams.
fn tune_arm(
    ctx: &Ctx,
    seed: u64,
    problem: &Problem,
    arm: &Arm,
    opts: &RunOptions,
) -> Result<EpochSchedule> {
    let trials = match &ctx.config.schedule_mode {
        ScheduleMode::Tuned { grid } => grid.tuning_trials.max(1),
        ScheduleMode::Strict => 1,
    };
    let mut best: Option<(f64, EpochSchedule)> = None;
    for &eta in &arm.tune {
        let candidate = EpochSchedule {
            eta,
            ..arm.schedule.clone()
        };
        let errs = ctx.pool.run(seed, TUNING_STREAM_OFFSET, trials, |_, rng| {
            Ok(final_error(&run_vr(
                problem,
                Setting::VrftdIid,
                &candidate,
                opts,
                rng,
            )?))
        })?;
        let (mean, _) = crate::stats::mean_stderr(&errs);
        if mean.is_finite() && best.as_ref().is_none_or(|(b, _)| mean < *b) {
            best = Some((mean, candidate));
        }
    }
    Ok(best.map_or_else(|| arm.schedule.clone(), |(_, s)| s))
}

fn run_ablation(
    ctx: &mut Ctx,
    arms_of: fn(&Ctx, &Problem, u64) -> Result<Vec<Arm>>,
) -> Result<Outcome> {
    let config = ctx.config;
    let opts = RunOptions {
        checkpoints: 1,
        ..RunOptions::default()
    };
    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut sources = Vec::new();
    let mut details = Vec::new();
    let mut curves: BTreeMap<String, Vec<CsvRow>> = BTreeMap::new();
    for (gi, &gamma) in config.gamma_grid.iter().enumerate() {
        let problem = common::two_state_problem(gamma)?;
        let label = format!("two-state-{}", common::gamma_label(gamma));
        let source = common::register_bound(ctx, &label, gamma, &problem, BoundSourceKind::Iid)?;
        let budget = budget_of(config, gamma);
        let arms = arms_of(ctx, &problem, budget)?;
        let mut rows = Vec::new();
        for (ai, arm) in arms.iter().enumerate() {
            let seed = cell_seed(config.base_seed, &[gi as u64, ai as u64]);
            let schedule = if arm.tune.is_empty() {
                arm.schedule.clone()
            } else {
                tune_arm(ctx, seed, &problem, arm, &opts)?
            };
            let errs = ctx.timed(arm.name, |ctx| {
                ctx.pool.run(seed, 0, config.trials, |_, rng| {
                    Ok(final_error(&run_vr(
                        &problem,
                        Setting::VrftdIid,
                        &schedule,
                        &opts,
                        rng,
                    )?))
                })
            })?;
            let samples = schedule.total_samples();
            let row = common::make_row(
                ctx,
                arm.name,
                gamma,
                arm.tag,
                samples,
                &errs,
                source.trace / samples as f64,
            );
            details.push(GroupDetail {
                algorithm: arm.name,
                gamma,
                stepsize_tag: arm.tag,
                schedule,
                mean_err_pi_sq: row.mean_err_pi_sq,
            });
            curves
                .entry(format!("{}/{}", arm.name, arm.tag))
                .or_default()
                .push(row.clone());
            rows.push(row);
        }
        sink.push_all(&rows)?;
        sources.push(source);
    }
    let rows = sink.finish()?;
    let mut slopes = BTreeMap::new();
    for (key, mut curve) in curves {
        if let Some(s) = common::fill_slope(&mut curve) {
            slopes.insert(key, s);
        }
    }
    Outcome::rows(
        rows,
        slopes,
        Details {
            params: config.ablation.clone(),
            lower_bound_sources: sources,
            groups: details,
        },
    )
}

/// Extrapolated method against the same epochs without extrapolation; the
/// `theory` variant gives each group the stepsize of its own analysis, the
/// `tuned` variant picks both from a common grid.
pub fn run_extrapolation(ctx: &mut Ctx) -> Result<Outcome> {
    run_ablation(ctx, extrapolation_arms)
}

/// Mini-batched inner loop against unit batches over proportionally more
/// inner steps, with the same stepsize and sample count, at the theory
/// stepsize and at an aggressive multiple of it.
pub fn run_minibatch(ctx: &mut Ctx) -> Result<Outcome> {
    run_ablation(ctx, minibatch_arms)
}
