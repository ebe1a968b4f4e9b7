//! Trajectory sampling on the two-state family with the strict schedule.

use std::collections::BTreeMap;

use serde::Serialize;
use tdvr_core::algorithms::{
    run_vrftd_markov, theoretical_schedule, EpochSchedule, Oracle, RunOptions, Setting,
};
use tdvr_core::bounds::{self, CovarianceKind};
use tdvr_core::sampling::SamplingModel;

use super::common::{self, BoundSource, BoundSourceKind};
use super::{Ctx, Outcome};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{CsvRow, RowSink};
use crate::trials::cell_seed;

#[derive(Debug, Serialize)]
struct CellDetail {
    gamma: f64,
    schedule: EpochSchedule,
    base_batch: usize,
    epochs: usize,
    initial_gap_sq: f64,
    approximation_error_sq: f64,
    iid_trace: f64,
    markov_trace: f64,
    truncation_lag: usize,
    truncation_error_bound: f64,
    mean_err_to_vbar_sq: f64,
    stderr: f64,
    /// `2^-K ||v0 - v_bar||^2 + 60 trace / N`.
    reference_bound: f64,
}

#[derive(Debug, Serialize)]
struct Details {
    lower_bound_sources: Vec<BoundSource>,
    cells: Vec<CellDetail>,
}

pub fn run(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let opts = RunOptions {
        strict: true,
        checkpoints: 1,
        ..RunOptions::default()
    };
    let oracle = Oracle::Sampled(SamplingModel::stationary_markov());
    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut sources = Vec::new();
    let mut cells = Vec::new();
    for (gi, &gamma) in config.gamma_grid.iter().enumerate() {
        let problem = common::two_state_problem(gamma)?;
        let label = format!("two-state-{}", common::gamma_label(gamma));
        let source = common::register_bound(ctx, &label, gamma, &problem, BoundSourceKind::Iid)?;
        let markov = bounds::markov_covariance(problem.instance(), problem.basis(), None)?;
        ctx.write_json(
            &format!("covariance/{label}-markov.json"),
            &markov.to_file(),
        )?;
        let (lag, tail) = match markov.kind {
            CovarianceKind::MarkovStationary {
                truncation_lag,
                truncation_error_bound,
            } => (truncation_lag, truncation_error_bound),
            CovarianceKind::Iid { .. } => (0, 0.0),
        };
        let base = config
            .base_batch
            .unwrap_or_else(|| ExperimentConfig::default_budget(gamma) as usize);
        let schedule =
            theoretical_schedule(&problem.stats()?, config.epochs, base, Setting::VrftdMarkov)?;
        let theta0 = common::zero_start(&problem);
        let seed = cell_seed(config.base_seed, &[gi as u64]);
        let errs = ctx.timed("vrftd-markov", |ctx| {
            ctx.pool.run(seed, 0, config.trials, |_, rng| {
                let trace = run_vrftd_markov(&problem, &oracle, &schedule, &theta0, &opts, rng)?;
                Ok(trace.final_checkpoint().map_or((f64::NAN, f64::NAN), |c| {
                    (c.error_pi_sq, c.error_to_vbar_sq)
                }))
            })
        })?;
        let to_vstar: Vec<f64> = errs.iter().map(|e| e.0).collect();
        let to_vbar: Vec<f64> = errs.iter().map(|e| e.1).collect();
        let (mean_vbar, stderr_vbar) = crate::stats::mean_stderr(&to_vbar);
        let samples = schedule.total_samples();
        let row = common::make_row(
            ctx,
            "vrftd-markov",
            gamma,
            "strict",
            samples,
            &to_vstar,
            source.trace / samples as f64,
        );
        let gap = common::initial_gap_sq(&problem);
        cells.push(CellDetail {
            gamma,
            base_batch: base,
            epochs: config.epochs,
            initial_gap_sq: gap,
            approximation_error_sq: problem.solution().approx_error_sq,
            iid_trace: source.trace,
            markov_trace: markov.trace_functional,
            truncation_lag: lag,
            truncation_error_bound: tail,
            mean_err_to_vbar_sq: mean_vbar,
            stderr: stderr_vbar,
            reference_bound: 0.5f64.powi(config.epochs as i32) * gap
                + 60.0 * source.trace / base as f64,
            schedule,
        });
        sink.push_all(std::slice::from_ref(&row))?;
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
