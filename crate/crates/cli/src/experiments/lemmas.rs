//! Structural inequalities of the projected TD geometry on random ergodic
//! instances, reported as the worst relative violation per inequality.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tdvr_core::algorithms::Problem;
use tdvr_core::instances;
use tdvr_core::linalg;
use tdvr_core::mrp::{self, MrpInstance, StationaryDistribution};
use tdvr_core::sampling::TrialRng;

use super::{Ctx, Outcome};
use crate::error::Result;
use crate::output::RowSink;
use crate::trials::cell_seed;

/// Violations above this (relative) level count as failures.
pub const TOLERANCE: f64 = 1e-9;

/// The checked statements, in table order.
pub const CHECKS: [&str; 9] = [
    "parameter-isometry",
    "value-isometry",
    "transition-nonexpansive",
    "strong-monotonicity",
    "lipschitz-value",
    "lipschitz-parameter",
    "resolvent-bound",
    "projected-resolvent-identity",
    "reduced-resolvent-bound",
];

/// One line of `lemmas.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub check: String,
    pub instances: usize,
    pub evaluations: usize,
    pub max_rel_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `max(0, lhs - rhs)` relative to the larger side.
fn excess(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    (lhs - rhs).max(0.0) / scale
}

fn mismatch(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b).abs() / scale
}

fn normal_vector(n: usize, rng: &mut TrialRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Ergodic instance with strictly positive transition probabilities,
/// `2..=12` states, `1..=6` features and a discount in `[0.05, 0.99)` (or
/// from `grid`).
fn random_problem(rng: &mut TrialRng, grid: &[f64], index: usize) -> Result<Problem> {
    let n = rng.gen_range(2..=12usize);
    let d = rng.gen_range(1..=n.min(6));
    let gamma = if grid.is_empty() {
        rng.gen_range(0.05..0.99)
    } else {
        grid[index % grid.len()]
    };
    let mut p = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.01..1.0));
    for mut row in p.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
    let reward = DMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let instance = MrpInstance::new(p, reward, gamma)?;
    let pi = mrp::stationary_distribution(instance.transition())?;
    let psi = instances::random_features(d, &pi, rng)?;
    Ok(Problem::new(instance, &psi)?)
}

/// Worst violation of every check on one instance.
fn check_instance(problem: &Problem, vectors: usize, rng: &mut TrialRng) -> Result<[f64; 9]> {
    let basis = problem.basis();
    let instance = problem.instance();
    let op = problem.operator();
    let n = instance.num_states();
    let d = basis.dim();
    let gamma = instance.gamma();
    let beta = basis.beta();
    let p = instance.transition();
    let pi = StationaryDistribution::from_weights(basis.weights().clone())?;
    let root_b = linalg::symmetric_power(basis.gram(), 0.5, 0.0);
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_d = DMatrix::<f64>::identity(d, d);
    let resolvent = linalg::inverse(&(&eye_n - p * gamma))?;
    let proj = basis.subspace_projector();
    let projected_resolvent = linalg::inverse(&(&eye_n - &proj * p * gamma))?;
    let reduced_resolvent = linalg::inverse(&(&eye_d - basis.m()))?;
    let pi_diag = pi.diag();

    let mut worst = [0.0f64; 9];
    let mut note = |i: usize, v: f64| worst[i] = worst[i].max(v);
    for _ in 0..vectors {
        let theta = normal_vector(d, rng);
        let theta2 = normal_vector(d, rng);
        let u = normal_vector(n, rng);

        note(
            0,
            mismatch(theta.norm(), pi.norm_sq(&basis.phi().tr_mul(&theta)).sqrt()),
        );
        let v = basis.value(&theta);
        note(
            1,
            mismatch(pi.norm_sq(&v).sqrt(), (&root_b * &theta).norm()),
        );
        note(
            2,
            excess(pi.norm_sq(&(p * &u)).sqrt(), pi.norm_sq(&u).sqrt()),
        );

        let diff = &theta - &theta2;
        let dv_norm = pi.norm_sq(&basis.value(&diff)).sqrt();
        let dg = op.apply(&theta) - op.apply(&theta2);
        note(3, excess((1.0 - gamma) * dv_norm * dv_norm, dg.dot(&diff)));
        let lip_value = (1.0 + gamma) * beta.sqrt() * dv_norm;
        note(4, excess(dg.norm(), lip_value));
        note(5, excess(lip_value, (1.0 + gamma) * beta * diff.norm()));

        note(
            6,
            excess(
                pi.norm_sq(&(&resolvent * &u)).sqrt(),
                pi.norm_sq(&u).sqrt() / (1.0 - gamma),
            ),
        );

        let lhs = &projected_resolvent * (&proj * &u);
        let rhs = basis
            .phi()
            .tr_mul(&(&reduced_resolvent * (basis.phi() * (&pi_diag * &u))));
        let gap = pi.norm_sq(&(&lhs - &rhs)).sqrt();
        let scale = pi
            .norm_sq(&lhs)
            .sqrt()
            .max(pi.norm_sq(&rhs).sqrt())
            .max(f64::MIN_POSITIVE);
        note(7, gap / scale);

        note(
            8,
            excess(
                (&reduced_resolvent * &theta).norm(),
                theta.norm() / (1.0 - gamma),
            ),
        );
    }
    Ok(worst)
}

#[derive(Debug, Serialize)]
struct Details {
    tolerance: f64,
    vectors_per_instance: usize,
    /// Instance index attaining the worst violation of each check.
    worst_instance: BTreeMap<String, usize>,
}

pub fn run(ctx: &mut Ctx) -> Result<Outcome> {
    let config = ctx.config;
    let seed = cell_seed(config.base_seed, &[0]);
    let per_instance = ctx.timed("checks", |ctx| {
        ctx.pool.run(seed, 0, config.trials, |trial, rng| {
            let problem = random_problem(rng, &config.gamma_grid, trial as usize)?;
            check_instance(&problem, config.vectors, rng)
        })
    })?;
    let mut rows = Vec::new();
    let mut worst_instance = BTreeMap::new();
    for (i, name) in CHECKS.iter().enumerate() {
        let (arg, max) = per_instance
            .iter()
            .enumerate()
            .map(|(k, w)| (k, w[i]))
            .fold((0, 0.0f64), |acc, x| if x.1 > acc.1 { x } else { acc });
        worst_instance.insert(name.to_string(), arg);
        rows.push(LemmaRow {
            check: name.to_string(),
            instances: per_instance.len(),
            evaluations: per_instance.len() * config.vectors,
            max_rel_violation: max,
            tolerance: TOLERANCE,
            passed: max <= TOLERANCE,
        });
    }
    let mut sink: RowSink<LemmaRow> = ctx.sink(&super::csv_name(config.experiment))?;
    sink.push_all(&rows)?;
    let lemma_rows = sink.finish()?;
    Ok(Outcome {
        rows: Vec::new(),
        lemma_rows,
        slopes: BTreeMap::new(),
        details: serde_json::to_value(Details {
            tolerance: TOLERANCE,
            vectors_per_instance: config.vectors,
            worst_instance,
        })?,
    })
}
