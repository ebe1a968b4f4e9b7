//! Exact-operator runs on the cyclic hard instance, checked against the
//! oracle lower bound and the span and support structure it relies on.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use tdvr_core::algorithms::{
    run_td_family, run_vrftd_iid, run_vrtd, Averaging, EpochSchedule, Oracle, Problem, RunOptions,
    StepRule, TdOutput,
};
use tdvr_core::bounds::{self, WorstCaseInstance};
use tdvr_core::sampling::trial_rng;

use super::common;
use super::{Ctx, Outcome};
use crate::error::Result;
use crate::output::{CsvRow, RowSink};

/// Absolute slack for comparing an error with the bound.
pub const ARITHMETIC_SLACK: f64 = 1e-12;

/// One logged iterate and the number of distinct operator evaluations it
/// may depend on.
struct Point {
    queries: usize,
    theta: DVector<f64>,
}

#[derive(Debug, Serialize)]
struct MethodDetail {
    algorithm: &'static str,
    gamma: f64,
    /// Iterates with a valid bound that were checked.
    checked: usize,
    /// Smallest `error - bound` over the checked iterates.
    min_margin: f64,
    violations: usize,
    span_residual: f64,
    /// Iterates with a nonzero coordinate at or beyond their query count.
    support_violations: usize,
}

#[derive(Debug, Serialize)]
struct Details {
    num_states: usize,
    max_queries: usize,
    initial_distance_sq: f64,
    methods: Vec<MethodDetail>,
}

/// Query counts for the logged iterates of a plain method: iterate `i`
/// used the evaluations at the `i` points before it.
fn plain_points(log: Vec<DVector<f64>>) -> Vec<Point> {
    log.into_iter()
        .enumerate()
        .map(|(i, theta)| Point { queries: i, theta })
        .collect()
}

/// Query counts for an epoch method. Each epoch evaluates once at its
/// reference point (also its first inner iterate) and once at every later
/// inner iterate; the epoch output is charged like the last inner iterate.
fn epoch_points(log: Vec<DVector<f64>>, epochs: usize, inner: usize) -> Vec<Point> {
    let mut points = Vec::with_capacity(log.len());
    let mut iter = log.into_iter();
    if let Some(theta) = iter.next() {
        points.push(Point { queries: 0, theta });
    }
    let mut base = 0;
    for _ in 0..epochs {
        for t in 1..=inner {
            if let Some(theta) = iter.next() {
                points.push(Point {
                    queries: base + t,
                    theta,
                });
            }
        }
        if let Some(theta) = iter.next() {
            points.push(Point {
                queries: base + inner,
                theta,
            });
        }
        base += inner;
    }
    points
}

fn check_method(
    ctx: &Ctx,
    name: &'static str,
    wc: &WorstCaseInstance,
    problem: &Problem,
    points: &[Point],
    rows: &mut Vec<CsvRow>,
) -> Result<MethodDetail> {
    let v0 = DVector::zeros(wc.num_states());
    let max_queries = ctx.config.queries;
    let mut detail = MethodDetail {
        algorithm: name,
        gamma: wc.gamma(),
        checked: 0,
        min_margin: f64::INFINITY,
        violations: 0,
        span_residual: 0.0,
        support_violations: 0,
    };
    // Tabular features: the value vector is the parameter vector.
    let values: Vec<DVector<f64>> = points.iter().map(|p| p.theta.clone()).collect();
    detail.span_residual = bounds::span_residual(&values, wc.instance());
    let mut best_per_k: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for p in points {
        if !bounds::in_band(&p.theta, p.queries, 0) {
            detail.support_violations += 1;
        }
        if p.queries > max_queries {
            continue;
        }
        let (bound, valid) = bounds::oracle_lower_bound(wc, p.queries, &v0)?;
        if !valid {
            continue;
        }
        let err = problem.error_to_vstar_sq(p.theta.as_slice());
        detail.checked += 1;
        let margin = err - bound;
        detail.min_margin = detail.min_margin.min(margin);
        if margin < -ARITHMETIC_SLACK {
            detail.violations += 1;
        }
        // Latest iterate for each query count.
        best_per_k.insert(p.queries, (err, bound));
    }
    for (k, (err, bound)) in best_per_k {
        rows.push(common::make_row(
            ctx,
            name,
            wc.gamma(),
            "exact",
            k as u64,
            &[err],
            bound,
        ));
    }
    Ok(detail)
}

pub fn run(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let mut sink: RowSink<CsvRow> = ctx.sink(&super::csv_name(config.experiment))?;
    let mut methods = Vec::new();
    let mut initial = 0.0;
    let opts = RunOptions {
        log_iterates: true,
        checkpoints: 1,
        ..RunOptions::default()
    };
    for &gamma in &config.gamma_grid {
        let wc = bounds::worstcase_instance(gamma, config.num_states)?;
        initial = wc.initial_distance_sq();
        let n = wc.num_states();
        let problem = Problem::new(wc.instance().clone(), &DMatrix::identity(n, n))?;
        let label = format!("worst-case-{}", common::gamma_label(gamma));
        let file = wc.instance().to_file().with_features(problem.basis().psi());
        ctx.write_json(&format!("instances/{label}.json"), &file)?;
        let beta = problem.basis().beta();
        let theta0 = common::zero_start(&problem);
        let mut rng = trial_rng(config.base_seed, 0);
        let steps = config.queries as u64 + 1;
        let mut rows = Vec::new();

        let plain = [
            ("td", 0.0, (1.0 - gamma) / (beta * (1.0 + gamma).powi(2))),
            ("ftd", 1.0, 1.0 / (4.0 * beta * (1.0 + gamma))),
        ];
        for (name, lambda, eta) in plain {
            let trace = run_td_family(
                &problem,
                &Oracle::Exact,
                StepRule::Constant(eta),
                lambda,
                steps,
                TdOutput::LastIterate,
                &theta0,
                &opts,
                &mut rng,
            )?;
            let points = plain_points(trace.iterate_log.unwrap_or_default());
            methods.push(check_method(ctx, name, &wc, &problem, &points, &mut rows)?);
        }

        let inner = config.queries.div_ceil(config.epochs).max(1);
        for (name, lambda, eta, averaging) in [
            (
                "vrtd",
                0.0,
                (1.0 - gamma) / (2.0 * beta * (1.0 + gamma).powi(2)),
                Averaging::Weighted,
            ),
            (
                "vrftd",
                1.0,
                1.0 / (4.0 * beta * (1.0 + gamma)),
                Averaging::UniformTail,
            ),
        ] {
            let schedule = EpochSchedule {
                eta,
                lambda,
                inner_iters: inner,
                minibatch: 1,
                minibatch_burn_in: 0,
                recenter_burn_in: 0,
                recenter_sizes: vec![1; config.epochs],
                base_batch: 1,
                tau: 0,
                averaging,
            };
            let trace = if lambda == 0.0 {
                run_vrtd(
                    &problem,
                    &Oracle::Exact,
                    &schedule,
                    &theta0,
                    &opts,
                    &mut rng,
                )?
            } else {
                run_vrftd_iid(
                    &problem,
                    &Oracle::Exact,
                    &schedule,
                    &theta0,
                    &opts,
                    &mut rng,
                )?
            };
            let points = epoch_points(trace.iterate_log.unwrap_or_default(), config.epochs, inner);
            methods.push(check_method(ctx, name, &wc, &problem, &points, &mut rows)?);
        }
        sink.push_all(&rows)?;
    }
    let rows = sink.finish()?;
    Outcome::rows(
        rows,
        BTreeMap::new(),
        Details {
            num_states: config.num_states,
            max_queries: config.queries,
            initial_distance_sq: initial,
            methods,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_query_counts() {
        let log: Vec<DVector<f64>> = (0..9).map(|i| DVector::from_element(1, i as f64)).collect();
        // start, 3 inner + output, 3 inner + output
        let q: Vec<usize> = epoch_points(log, 2, 3).iter().map(|p| p.queries).collect();
        assert_eq!(q, vec![0, 1, 2, 3, 3, 4, 5, 6, 6]);
    }
}
