//! Single-epoch progress on the two-state family, and iteration counts of
//! the two variance-reduced methods on a noiseless chain.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;
use tdvr_core::algorithms::{theoretical_schedule, EpochSchedule, Problem, RunOptions, Setting};
use tdvr_core::instances;

use super::common::{self, BoundSource, BoundSourceKind};
use super::sweep::run_vr;
use super::{Ctx, Outcome};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{CsvRow, RowSink};
use crate::trials::cell_seed;

const METHODS: [(&str, Setting); 2] = [("vrtd", Setting::Vrtd), ("vrftd", Setting::VrftdIid)];

#[derive(Debug, Serialize)]
struct EpochDetail {
    algorithm: &'static str,
    gamma: f64,
    schedule: EpochSchedule,
    first_batch: usize,
    initial_gap_sq: f64,
    trace: f64,
    mean_err_to_vbar_sq: f64,
    stderr: f64,
    /// `0.6 ||v0 - v_bar||^2 + 6 trace / N_1`.
    reference_bound: f64,
}

#[derive(Debug, Serialize)]
struct EpochDetails {
    lower_bound_sources: Vec<BoundSource>,
    cells: Vec<EpochDetail>,
}

pub fn run_epoch(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let opts = RunOptions {
        strict: true,
        checkpoints: 1,
        ..RunOptions::default()
    };
    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut sources = Vec::new();
    let mut cells = Vec::new();
    for (gi, &gamma) in config.gamma_grid.iter().enumerate() {
        let problem = common::two_state_problem(gamma)?;
        let label = format!("two-state-{}", common::gamma_label(gamma));
        let source = common::register_bound(ctx, &label, gamma, &problem, BoundSourceKind::Iid)?;
        let base = config
            .base_batch
            .unwrap_or_else(|| ExperimentConfig::default_budget(gamma) as usize);
        let gap = common::initial_gap_sq(&problem);
        let mut rows = Vec::new();
        for (mi, (name, setting)) in METHODS.into_iter().enumerate() {
            let schedule = theoretical_schedule(&problem.stats()?, config.epochs, base, setting)?;
            let seed = cell_seed(config.base_seed, &[gi as u64, mi as u64]);
            let errs = ctx.timed(name, |ctx| {
                ctx.pool.run(seed, 0, config.trials, |_, rng| {
                    let trace = run_vr(&problem, setting, &schedule, &opts, rng)?;
                    Ok(trace.final_checkpoint().map_or((f64::NAN, f64::NAN), |c| {
                        (c.error_pi_sq, c.error_to_vbar_sq)
                    }))
                })
            })?;
            let to_vstar: Vec<f64> = errs.iter().map(|e| e.0).collect();
            let to_vbar: Vec<f64> = errs.iter().map(|e| e.1).collect();
            let (mean_vbar, stderr_vbar) = crate::stats::mean_stderr(&to_vbar);
            let samples = schedule.total_samples();
            rows.push(common::make_row(
                ctx,
                name,
                gamma,
                "strict",
                samples,
                &to_vstar,
                source.trace / samples as f64,
            ));
            let first_batch = schedule.recenter_sizes[0];
            cells.push(EpochDetail {
                algorithm: name,
                gamma,
                first_batch,
                initial_gap_sq: gap,
                trace: source.trace,
                mean_err_to_vbar_sq: mean_vbar,
                stderr: stderr_vbar,
                reference_bound: 0.6 * gap + 6.0 * source.trace / first_batch as f64,
                schedule,
            });
        }
        sink.push_all(&rows)?;
        sources.push(source);
    }
    let rows = sink.finish()?;
    Outcome::rows(
        rows,
        BTreeMap::new(),
        EpochDetails {
            lower_bound_sources: sources,
            cells,
        },
    )
}

/// Target accuracy relative to the initial gap.
pub const ACCURACY: f64 = 1e-6;

#[derive(Debug, Serialize)]
struct AccelerationDetail {
    gamma: f64,
    vrtd_iterations: usize,
    vrftd_iterations: usize,
    ratio: f64,
    /// `2 (1 - gamma) / (1 + gamma)`, the ratio of the two iteration bounds.
    predicted_ratio: f64,
    ratio_over_predicted: f64,
}

#[derive(Debug, Serialize)]
struct AccelerationDetails {
    accuracy: f64,
    lower_bound_sources: Vec<BoundSource>,
    cells: Vec<AccelerationDetail>,
}

/// Inner iterations until `||v_t - v_bar||^2 <= ACCURACY ||v_0 - v_bar||^2`,
/// and the error reached.
fn iterations_to_accuracy(
    problem: &Problem,
    setting: Setting,
    schedule: &EpochSchedule,
    seed: u64,
) -> Result<(usize, f64)> {
    let opts = RunOptions {
        strict: true,
        log_iterates: true,
        checkpoints: 1,
    };
    let mut rng = tdvr_core::sampling::trial_rng(seed, 0);
    let trace = run_vr(problem, setting, schedule, &opts, &mut rng)?;
    let log = trace.iterate_log.unwrap_or_default();
    let gap = common::initial_gap_sq(problem);
    // Layout: start, then the inner iterates of the (single) epoch.
    for (i, theta) in log.iter().enumerate().skip(1).take(schedule.inner_iters) {
        let err = problem.error_to_vbar_sq(theta.as_slice());
        if err <= ACCURACY * gap {
            return Ok((i, err));
        }
    }
    Err(HarnessError::Config(format!(
        "accuracy {ACCURACY} not reached within {} inner iterations",
        schedule.inner_iters
    )))
}

pub fn run_acceleration(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut sources = Vec::new();
    let mut cells = Vec::new();
    for (gi, &gamma) in config.gamma_grid.iter().enumerate() {
        let instance = instances::single_state_instance(gamma, 1.0)?;
        let problem = Problem::new(instance, &DMatrix::from_element(1, 1, 1.0))?;
        let label = format!("single-state-{}", common::gamma_label(gamma));
        let source = common::register_bound(ctx, &label, gamma, &problem, BoundSourceKind::Iid)?;
        let stats = problem.stats()?;
        let mut counts = Vec::new();
        let mut rows = Vec::new();
        for (mi, (name, setting)) in METHODS.into_iter().enumerate() {
            let schedule = theoretical_schedule(&stats, config.epochs, 1, setting)?;
            let seed = cell_seed(config.base_seed, &[gi as u64, mi as u64]);
            let (iters, err) = ctx.timed(name, |_| {
                iterations_to_accuracy(&problem, setting, &schedule, seed)
            })?;
            counts.push(iters);
            rows.push(common::make_row(
                ctx,
                name,
                gamma,
                "strict",
                iters as u64,
                &[err],
                source.trace / iters as f64,
            ));
        }
        let ratio = counts[1] as f64 / counts[0] as f64;
        let predicted_ratio = 2.0 * (1.0 - gamma) / (1.0 + gamma);
        cells.push(AccelerationDetail {
            gamma,
            vrtd_iterations: counts[0],
            vrftd_iterations: counts[1],
            ratio,
            predicted_ratio,
            ratio_over_predicted: ratio / predicted_ratio,
        });
        sink.push_all(&rows)?;
        sources.push(source);
    }
    let rows = sink.finish()?;
    Outcome::rows(
        rows,
        BTreeMap::new(),
        AccelerationDetails {
            accuracy: ACCURACY,
            lower_bound_sources: sources,
            cells,
        },
    )
}
