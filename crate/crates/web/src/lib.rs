//! Browser bindings for `tdvr-core`.
//!
//! Every export takes plain numbers and returns a JSON string; failures come
//! back as `{"error": "..."}` so the page never has to catch exceptions.

use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;
use tdvr_core::algorithms::{
    budget_schedule, run_td_family, run_vrftd_iid, BudgetShape, Oracle, Problem, RunOptions,
    Setting, StepRule, TdOutput,
};
use tdvr_core::bounds::{
    iid_covariance, oracle_lower_bound, stochastic_lower_bound, worstcase_instance,
};
use tdvr_core::instances::{two_state_features, two_state_instance};
use tdvr_core::sampling::{trial_rng, SamplingModel};
use wasm_bindgen::prelude::wasm_bindgen;

type Outcome<T> = Result<T, String>;

fn respond<T: Serialize>(result: Outcome<T>) -> String {
    match result {
        Ok(value) => serde_json::to_string(&value)
            .unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string()),
        Err(message) => json!({ "error": message }).to_string(),
    }
}

fn two_state(gamma: f64) -> Outcome<Problem> {
    let instance = two_state_instance(gamma).map_err(|e| e.to_string())?;
    Problem::new(instance, &two_state_features()).map_err(|e| e.to_string())
}

fn trace_of(problem: &Problem) -> Outcome<f64> {
    let omega = problem.basis().weights().as_slice().to_vec();
    let bundle =
        iid_covariance(problem.instance(), problem.basis(), &omega).map_err(|e| e.to_string())?;
    stochastic_lower_bound(&bundle).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TwoStateReport {
    gamma: f64,
    v_star: Vec<f64>,
    trace: f64,
    closed_form_trace: f64,
    budget: u64,
    lower_bound: f64,
}

/// Value function, covariance trace and the resulting error floor
/// `trace / budget` of the two-state chain.
#[wasm_bindgen]
pub fn two_state_bound(gamma: f64, budget: u32) -> String {
    respond((|| {
        let problem = two_state(gamma)?;
        let trace = trace_of(&problem)?;
        let budget = u64::from(budget.max(1));
        Ok(TwoStateReport {
            gamma,
            v_star: problem.v_star().iter().copied().collect(),
            trace,
            closed_form_trace: 40.0 / 81.0 * (2.0 * gamma - 1.0) / (1.0 - gamma).powi(3),
            budget,
            lower_bound: trace / budget as f64,
        })
    })())
}

#[derive(Serialize)]
struct Curve {
    samples: Vec<u64>,
    mean_err_pi_sq: Vec<f64>,
}

fn mean_curve(runs: &[Vec<(u64, f64)>]) -> Curve {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let samples = runs
        .first()
        .map(|r| r[..len].iter().map(|c| c.0).collect())
        .unwrap_or_default();
    let mean_err_pi_sq = (0..len)
        .map(|i| runs.iter().map(|r| r[i].1).sum::<f64>() / runs.len() as f64)
        .collect();
    Curve {
        samples,
        mean_err_pi_sq,
    }
}

/// Mean error curves of diminishing-stepsize TD and of the variance-reduced
/// extrapolated method on the two-state chain at an equal sample budget.
#[wasm_bindgen]
pub fn compare_methods(gamma: f64, budget: u32, trials: u32, seed: u32) -> String {
    respond((|| {
        let problem = two_state(gamma)?;
        let stats = problem.stats().map_err(|e| e.to_string())?;
        let shape = BudgetShape {
            eta_scale: 1.0,
            inner_constant: 0.5,
            epochs: 3,
            growth: 2.0,
        };
        let schedule = budget_schedule(&stats, budget as usize, &shape, Setting::VrftdIid)
            .map_err(|e| e.to_string())?;
        let steps = StepRule::Diminishing {
            eta0: 1.0 / (2.0 * stats.beta * (1.0 + gamma)),
            power: 1.0,
            offset: 1.0,
        };
        let oracle = Oracle::Sampled(SamplingModel::stationary_iid());
        let opts = RunOptions {
            checkpoints: 20,
            ..RunOptions::default()
        };
        let theta0 = DVector::zeros(2);
        let points = |cps: &[tdvr_core::algorithms::Checkpoint]| -> Vec<(u64, f64)> {
            cps.iter()
                .map(|c| (c.samples_used, c.error_pi_sq))
                .collect()
        };
        let (mut td, mut vr) = (Vec::new(), Vec::new());
        for trial in 0..u64::from(trials.clamp(1, 500)) {
            let mut rng = trial_rng(u64::from(seed), trial);
            let run = run_td_family(
                &problem,
                &oracle,
                steps,
                0.0,
                u64::from(budget),
                TdOutput::LastIterate,
                &theta0,
                &opts,
                &mut rng,
            )
            .map_err(|e| e.to_string())?;
            td.push(points(&run.checkpoints));
            let run = run_vrftd_iid(&problem, &oracle, &schedule, &theta0, &opts, &mut rng)
                .map_err(|e| e.to_string())?;
            vr.push(points(&run.checkpoints));
        }
        let trace = trace_of(&problem)?;
        Ok(json!({
            "gamma": gamma,
            "budget": budget,
            "lower_bound": trace / f64::from(budget.max(1)),
            "td": mean_curve(&td),
            "vrftd": mean_curve(&vr),
        }))
    })())
}

/// Exact-operator TD on the cyclic hard instance against the oracle lower
/// bound, for `k = 0..=queries` evaluations.
#[wasm_bindgen]
pub fn oracle_race(gamma: f64, num_states: u32, queries: u32) -> String {
    respond((|| {
        let wc = worstcase_instance(gamma, num_states as usize).map_err(|e| e.to_string())?;
        let d = wc.num_states();
        let problem = Problem::new(wc.instance().clone(), &nalgebra::DMatrix::identity(d, d))
            .map_err(|e| e.to_string())?;
        let beta = problem.basis().beta();
        let eta = (1.0 - gamma) / (beta * (1.0 + gamma).powi(2));
        let v0 = DVector::zeros(d);
        let opts = RunOptions {
            log_iterates: true,
            ..RunOptions::default()
        };
        let queries = queries.min(200) as u64;
        let run = run_td_family(
            &problem,
            &Oracle::Exact,
            StepRule::Constant(eta),
            0.0,
            queries,
            TdOutput::LastIterate,
            &v0,
            &opts,
            &mut trial_rng(0, 0),
        )
        .map_err(|e| e.to_string())?;
        let log = run.iterate_log.unwrap_or_default();
        let mut rows = Vec::new();
        for (k, theta) in log.iter().enumerate() {
            let (bound, valid) = oracle_lower_bound(&wc, k, &v0).map_err(|e| e.to_string())?;
            rows.push(json!({
                "k": k,
                "td_error": problem.error_to_vstar_sq(theta.as_slice()),
                "lower_bound": bound,
                "valid": valid,
            }));
        }
        Ok(json!({ "gamma": gamma, "num_states": d, "stepsize": eta, "rows": rows }))
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn two_state_trace_matches_closed_form() {
        let v = parse(&two_state_bound(0.9, 1000));
        let (t, c) = (
            v["trace"].as_f64().unwrap(),
            v["closed_form_trace"].as_f64().unwrap(),
        );
        assert!((t - c).abs() <= 1e-10 * c);
    }

    #[test]
    fn invalid_discount_is_reported() {
        assert!(parse(&two_state_bound(0.3, 10))["error"].is_string());
    }

    #[test]
    fn comparison_returns_curves() {
        let v = parse(&compare_methods(0.8, 400, 3, 7));
        assert!(v["error"].is_null(), "{v}");
        assert!(!v["td"]["samples"].as_array().unwrap().is_empty());
        assert!(!v["vrftd"]["mean_err_pi_sq"].as_array().unwrap().is_empty());
    }

    #[test]
    fn oracle_race_respects_bound() {
        let v = parse(&oracle_race(0.75, 30, 10));
        for row in v["rows"].as_array().unwrap() {
            if row["valid"].as_bool().unwrap() {
                assert!(
                    row["td_error"].as_f64().unwrap()
                        >= row["lower_bound"].as_f64().unwrap() - 1e-12
                );
            }
        }
    }
}
