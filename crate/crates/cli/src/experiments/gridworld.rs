//! Learning curves on a goal-seeking grid world with random features and
//! trajectory sampling, all methods at the same sample budget.

use std::collections::BTreeMap;

use serde::Serialize;
use tdvr_core::algorithms::{
    run_td_family, run_vrftd_markov, EpochSchedule, Oracle, Problem, RunOptions, RunTrace, Setting,
    StepRule, TdOutput,
};
use tdvr_core::instances::{self, GridWorldSpec};
use tdvr_core::mrp;
use tdvr_core::sampling::{trial_rng, SamplingModel, TrialRng};

use super::common::{self, BoundSource, BoundSourceKind, TunedSchedule};
use super::{Ctx, Outcome};
use crate::config::{ScheduleMode, TuningGrid};
use crate::error::{HarnessError, Result};
use crate::output::{CsvRow, RowSink};
use crate::stats;
use crate::trials::{cell_seed, TUNING_STREAM_OFFSET};

#[derive(Debug, Serialize)]
struct MethodDetail {
    algorithm: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    stepsize: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuned: Option<TunedSchedule>,
    final_mean_err_pi_sq: f64,
    final_normalized_err: f64,
}

#[derive(Debug, Serialize)]
struct CellDetail {
    gamma: f64,
    spec: GridWorldSpec,
    traps: Vec<(usize, usize)>,
    budget: u64,
    beta: f64,
    mu: f64,
    /// `||v*||_Pi^2`, the normaliser of the error curves.
    v_star_norm_sq: f64,
    /// `||v_bar - v*||_Pi^2 / ||v*||_Pi^2`.
    approximation_floor: f64,
    methods: Vec<MethodDetail>,
}

#[derive(Debug, Serialize)]
struct Details {
    lower_bound_sources: Vec<BoundSource>,
    cells: Vec<CellDetail>,
}

fn plain_stepsize(problem: &Problem, scale: f64) -> f64 {
    let beta = problem.basis().beta();
    let gamma = problem.instance().gamma();
    scale / (4.0 * beta * (1.0 + gamma))
}

/// Constant stepsize `scale / (4 beta (1 + gamma))` with the best grid scale.
fn tune_plain(
    ctx: &Ctx,
    seed: u64,
    problem: &Problem,
    grid: &TuningGrid,
    run: impl Fn(f64, &mut TrialRng) -> Result<RunTrace> + Sync,
) -> Result<f64> {
    let scales = &grid.eta_scales;
    if grid.tuning_trials == 0 || scales.len() == 1 {
        return Ok(plain_stepsize(problem, scales[0]));
    }
    let mut best: Option<(f64, f64)> = None;
    for &scale in scales {
        let eta = plain_stepsize(problem, scale);
        let errs = ctx
            .pool
            .run(seed, TUNING_STREAM_OFFSET, grid.tuning_trials, |_, rng| {
                Ok(run(eta, rng)?
                    .final_checkpoint()
                    .map_or(f64::NAN, |c| c.error_pi_sq))
            })?;
        let (mean, _) = stats::mean_stderr(&errs);
        if mean.is_finite() && best.is_none_or(|(b, _)| mean < b) {
            best = Some((mean, eta));
        }
    }
    best.map(|(_, eta)| eta)
        .ok_or_else(|| HarnessError::Config("every stepsize candidate diverged".into()))
}

/// Mean and standard error at each checkpoint; all trials share the grid.
fn curve(traces: &[RunTrace]) -> Result<Vec<(u64, Vec<f64>)>> {
    let first = traces
        .first()
        .ok_or_else(|| HarnessError::Config("no trials".into()))?;
    let mut out = Vec::new();
    for (i, cp) in first.checkpoints.iter().enumerate() {
        let mut values = Vec::with_capacity(traces.len());
        for t in traces {
            match t.checkpoints.get(i) {
                Some(c) if c.samples_used == cp.samples_used => values.push(c.error_pi_sq),
                _ => {
                    return Err(HarnessError::Config(
                        "trials disagree on the checkpoint grid".into(),
                    ))
                }
            }
        }
        out.push((cp.samples_used, values));
    }
    Ok(out)
}

pub fn run(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let grid = match &config.schedule_mode {
        ScheduleMode::Tuned { grid } => grid.clone(),
        ScheduleMode::Strict => {
            return Err(HarnessError::Config(
                "grid-world runs use tuned schedules".into(),
            ))
        }
    };
    let opts = RunOptions::default();
    let oracle = Oracle::Sampled(SamplingModel::stationary_markov());
    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut sources = Vec::new();
    let mut cells = Vec::new();
    for (gi, &gamma) in config.gamma_grid.iter().enumerate() {
        let (problem, traps) = ctx.timed("setup", |_| {
            let mut rng = trial_rng(cell_seed(config.base_seed, &[gi as u64, u64::MAX]), 0);
            let world = instances::gridworld_instance(&config.gridworld, gamma, &mut rng)?;
            let pi = mrp::stationary_distribution(world.instance.transition())?;
            let psi = instances::random_features(config.gridworld.feature_dim, &pi, &mut rng)?;
            Ok((Problem::new(world.instance, &psi)?, world.traps))
        })?;
        let label = format!("gridworld-{}", common::gamma_label(gamma));
        let source = ctx.timed("setup", |ctx| {
            common::register_bound(ctx, &label, gamma, &problem, BoundSourceKind::Markov)
        })?;
        let budget = super::sweep::budget_of(config, gamma);
        let theta0 = common::zero_start(&problem);
        let v_star_norm_sq = problem.error_to_vstar_sq(theta0.as_slice());
        let floor = problem.solution().approx_error_sq / v_star_norm_sq;

        let mut rows = Vec::new();
        let mut methods = Vec::new();
        for (mi, name) in ["td", "ftd", "vrftd"].into_iter().enumerate() {
            let seed = cell_seed(config.base_seed, &[gi as u64, mi as u64]);
            let (traces, stepsize, tuned) = ctx.timed(name, |ctx| {
                if name == "vrftd" {
                    let run_with = |s: &EpochSchedule, o: &RunOptions, rng: &mut TrialRng| {
                        Ok(run_vrftd_markov(&problem, &oracle, s, &theta0, o, rng)?)
                    };
                    let quiet = RunOptions {
                        checkpoints: 1,
                        ..opts.clone()
                    };
                    let tuned = common::tune_schedule(
                        ctx,
                        seed,
                        &problem,
                        budget as usize,
                        &grid,
                        Setting::VrftdMarkov,
                        |s, rng| {
                            Ok(run_with(s, &quiet, rng)?
                                .final_checkpoint()
                                .map_or(f64::NAN, |c| c.error_pi_sq))
                        },
                    )?;
                    let traces = ctx.pool.run(seed, 0, config.trials, |_, rng| {
                        run_with(&tuned.schedule, &opts, rng)
                    })?;
                    Ok((traces, None, Some(tuned)))
                } else {
                    let lambda = if name == "ftd" { 1.0 } else { 0.0 };
                    let run_with = |eta: f64, o: &RunOptions, rng: &mut TrialRng| {
                        Ok(run_td_family(
                            &problem,
                            &oracle,
                            StepRule::Constant(eta),
                            lambda,
                            budget,
                            TdOutput::LastIterate,
                            &theta0,
                            o,
                            rng,
                        )?)
                    };
                    let quiet = RunOptions {
                        checkpoints: 1,
                        ..opts.clone()
                    };
                    let eta = tune_plain(ctx, seed, &problem, &grid, |eta, rng| {
                        run_with(eta, &quiet, rng)
                    })?;
                    let traces = ctx
                        .pool
                        .run(seed, 0, config.trials, |_, rng| run_with(eta, &opts, rng))?;
                    Ok((traces, Some(eta), None))
                }
            })?;
            let points = curve(&traces)?;
            for (samples, values) in &points {
                rows.push(common::make_row(
                    ctx,
                    name,
                    gamma,
                    "tuned",
                    *samples,
                    values,
                    source.trace / (*samples).max(1) as f64,
                ));
            }
            let final_mean = rows.last().map_or(f64::NAN, |r| r.mean_err_pi_sq);
            methods.push(MethodDetail {
                algorithm: name,
                stepsize,
                tuned,
                final_mean_err_pi_sq: final_mean,
                final_normalized_err: final_mean / v_star_norm_sq,
            });
        }
        sink.push_all(&rows)?;
        cells.push(CellDetail {
            gamma,
            spec: config.gridworld.clone(),
            traps,
            budget,
            beta: problem.basis().beta(),
            mu: problem.basis().mu(),
            v_star_norm_sq,
            approximation_floor: floor,
            methods,
        });
        sources.push(source);
    }
    let rows = sink.finish()?;
    Outcome::rows(
        rows,
        BTreeMap::new(),
        Details {
            lower_bound_sources: sources,
            cells,
        },
    )
}
