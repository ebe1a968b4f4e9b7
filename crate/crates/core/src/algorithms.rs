//! The temporal-difference family: plain TD and its extrapolated variant,
//! the variance-reduced epoch methods, and the parameter schedules that
//! make their guarantees hold.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{self, MixingProfile, MrpInstance};
use crate::projection::{self, FeatureBasis, LinearOperator, ProjectedSolution};
use crate::sampling::{self, Sampler, SamplingModel};

/// Relative slack used when comparing a schedule against its conditions and
/// when rounding real-valued requirements up to integers.
const REL_SLACK: f64 = 1e-9;

/// `ceil(x)` that ignores floating-point fuzz just above an integer.
pub fn ceil_tol(x: f64) -> usize {
    if !x.is_finite() || x <= 0.0 {
        return 0;
    }
    (x - REL_SLACK * x.abs().max(1.0)).ceil().max(0.0) as usize
}

fn at_most(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + REL_SLACK * rhs.abs().max(lhs.abs()).max(f64::MIN_POSITIVE)
}

/// Everything an algorithm run needs to know about one problem instance.
///
/// Construction solves for `v*` and the projected fixed point; noise and
/// mixing constants are computed on first use and cached.
#[derive(Debug)]
pub struct Problem {
    instance: MrpInstance,
    basis: FeatureBasis,
    operator: LinearOperator,
    solution: ProjectedSolution,
    v_star: DVector<f64>,
    stats: OnceLock<std::result::Result<ProblemStats, String>>,
}

impl Problem {
    /// Builds the problem with the basis geometry taken under the stationary
    /// distribution of the instance.
    pub fn new(instance: MrpInstance, psi: &DMatrix<f64>) -> Result<Self> {
        let pi = mrp::stationary_distribution(instance.transition())?;
        let basis =
            projection::build_feature_basis(psi, &pi, instance.transition(), instance.gamma())?;
        Self::with_basis(instance, basis)
    }

    pub fn with_basis(instance: MrpInstance, basis: FeatureBasis) -> Result<Self> {
        let operator = LinearOperator::new(&instance, &basis)?;
        let solution = projection::projected_fixed_point(&instance, &basis)?;
        let v_star = mrp::true_value_function(&instance)?;
        Ok(Self {
            instance,
            basis,
            operator,
            solution,
            v_star,
            stats: OnceLock::new(),
        })
    }

    pub fn instance(&self) -> &MrpInstance {
        &self.instance
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.operator
    }

    pub fn solution(&self) -> &ProjectedSolution {
        &self.solution
    }

    pub fn v_star(&self) -> &DVector<f64> {
        &self.v_star
    }

    /// `||Psi^T theta - v*||_Pi^2`.
    pub fn error_to_vstar_sq(&self, theta: &[f64]) -> f64 {
        let psi = self.basis.psi();
        let d = psi.nrows();
        let cols = psi.as_slice();
        self.basis
            .weights()
            .iter()
            .enumerate()
            .map(|(s, w)| {
                let e = linalg::dot(&cols[s * d..(s + 1) * d], theta) - self.v_star[s];
                w * e * e
            })
            .sum()
    }

    /// `||Psi^T theta - v_bar||_Pi^2 = (theta - theta_bar)^T B (theta - theta_bar)`.
    pub fn error_to_vbar_sq(&self, theta: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(theta) - &self.solution.theta_bar;
        self.basis.value_norm_sq(&diff)
    }

    /// Noise, conditioning and mixing constants of the problem.
    pub fn stats(&self) -> Result<ProblemStats> {
        self.stats
            .get_or_init(|| {
                ProblemStats::compute(&self.instance, &self.basis).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(Error::InfeasibleInputs)
    }
}

/// Constants entering the schedule conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemStats {
    pub beta: f64,
    pub mu: f64,
    pub gamma: f64,
    pub varsigma_sq: f64,
    pub mixing: Option<MixingProfile>,
    pub c_m: Option<f64>,
    pub min_pi: Option<f64>,
}

impl ProblemStats {
    pub fn compute(instance: &MrpInstance, basis: &FeatureBasis) -> Result<Self> {
        let varsigma_sq =
            sampling::variance_parameter(instance, basis, basis.weights().as_slice())?;
        let (mixing, c_m, min_pi) = if mrp::ergodicity_check(instance.transition()).is_ergodic() {
            let p = instance.transition();
            let rho = linalg::second_eigen_modulus(p).clamp(mrp::RHO_FLOOR, 1.0 - 1e-15);
            let mixing = mrp::mixing_constants(p, mrp::default_horizon(rho))?;
            let c_m = sampling::bias_constant(instance, basis, &mixing)?;
            let min_pi = mrp::stationary_distribution(p)?.min();
            (Some(mixing), Some(c_m), Some(min_pi))
        } else {
            (None, None, None)
        };
        Ok(Self {
            beta: basis.beta(),
            mu: basis.mu(),
            gamma: instance.gamma(),
            varsigma_sq,
            mixing,
            c_m,
            min_pi,
        })
    }
}

/// Stepsize sequence for the non-variance-reduced methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Constant(f64),
    /// `eta_t = eta0 * (offset / (t + offset))^power`, `t = 0, 1, ...`.
    Diminishing {
        eta0: f64,
        power: f64,
        offset: f64,
    },
}

impl StepRule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            StepRule::Constant(eta) => eta,
            StepRule::Diminishing {
                eta0,
                power,
                offset,
            } => eta0 * (offset / (t as f64 + offset)).powf(power),
        }
    }
}

/// Output of a TD-family run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdOutput {
    LastIterate,
    /// Uniform average over the final `fraction` of the iterates.
    TailAverage {
        fraction: f64,
    },
}

/// Which epoch method (and which set of conditions) a schedule is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Vrtd,
    VrftdIid,
    VrftdMarkov,
}

/// How an epoch's iterates are combined into its output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// `(sum_{t<=T} eta (1-gamma) theta_t + theta_{T+1} / beta) / (T eta (1-gamma) + 1/beta)`.
    Weighted,
    /// Uniform average of `theta_2, ..., theta_{T+1}`.
    UniformTail,
}

/// Parameters of an epoch method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub eta: f64,
    pub lambda: f64,
    /// Inner iterations per epoch.
    pub inner_iters: usize,
    /// Samples per inner iteration.
    pub minibatch: usize,
    /// Leading samples of each inner mini-batch that are discarded.
    pub minibatch_burn_in: usize,
    /// Leading samples of each recentering batch that are discarded.
    pub recenter_burn_in: usize,
    /// Recentering batch size of every epoch; its length is the epoch count.
    pub recenter_sizes: Vec<usize>,
    /// Base batch size the recentering sizes were derived from.
    pub base_batch: usize,
    /// Bias horizon used to derive the burn-ins (zero for independent samples).
    pub tau: usize,
    pub averaging: Averaging,
}

impl EpochSchedule {
    pub fn epochs(&self) -> usize {
        self.recenter_sizes.len()
    }

    /// Total number of observations consumed by a run.
    pub fn total_samples(&self) -> u64 {
        let inner = (self.minibatch * self.inner_iters) as u64;
        self.recenter_sizes.iter().map(|&n| inner + n as u64).sum()
    }

    /// Structural sanity independent of the convergence conditions.
    pub fn check_shape(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            problems.push(format!(
                "stepsize {} is not a finite nonnegative number",
                self.eta
            ));
        }
        if self.lambda != 0.0 && self.lambda != 1.0 {
            problems.push(format!(
                "extrapolation weight {} not in {{0, 1}}",
                self.lambda
            ));
        }
        if self.inner_iters == 0 {
            problems.push("inner iteration count is zero".into());
        }
        if self.minibatch <= self.minibatch_burn_in {
            problems.push(format!(
                "mini-batch {} does not exceed its burn-in {}",
                self.minibatch, self.minibatch_burn_in
            ));
        }
        if self.recenter_sizes.is_empty() {
            problems.push("no epochs".into());
        }
        if let Some(&smallest) = self.recenter_sizes.iter().min() {
            if smallest <= self.recenter_burn_in {
                problems.push(format!(
                    "recentering batch {} does not exceed its burn-in {}",
                    smallest, self.recenter_burn_in
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ScheduleInfeasible(problems.join("; ")))
        }
    }

    /// Checks every condition of the convergence guarantee for `setting`.
    pub fn validate(&self, stats: &ProblemStats, setting: Setting) -> Result<()> {
        self.check_shape()?;
        let mut problems = Vec::new();
        let mut need = |ok: bool, what: String| {
            if !ok {
                problems.push(what);
            }
        };
        let ProblemStats {
            beta,
            mu,
            gamma,
            varsigma_sq,
            ..
        } = *stats;
        let k_total = self.epochs();
        let geometric = |k: usize| 0.75f64.powi((k_total - k) as i32) * self.base_batch as f64;
        let eta = self.eta;
        need(eta > 0.0, "stepsize must be positive".into());
        match setting {
            Setting::Vrtd => {
                let cap1 = (1.0 - gamma) / (2.0 * beta * (1.0 + gamma).powi(2));
                need(at_most(eta, cap1), format!("stepsize {eta} above {cap1}"));
                if varsigma_sq > 0.0 {
                    let cap2 = (1.0 - gamma) / (32.0 * varsigma_sq);
                    need(at_most(eta, cap2), format!("stepsize {eta} above {cap2}"));
                }
                let t_min = 32.0 / (mu * (1.0 - gamma) * eta);
                need(
                    at_most(t_min, self.inner_iters as f64),
                    format!("inner iterations {} below {t_min}", self.inner_iters),
                );
                need(self.minibatch == 1, "mini-batch must be 1".into());
                need(self.lambda == 0.0, "no extrapolation allowed".into());
                need(
                    self.averaging == Averaging::Weighted,
                    "weighted output required".into(),
                );
                let floor = 38.0 * varsigma_sq / (mu * (1.0 - gamma).powi(2));
                for (i, &n) in self.recenter_sizes.iter().enumerate() {
                    let req = floor.max(geometric(i + 1));
                    need(
                        at_most(req, n as f64),
                        format!("epoch {} batch {n} below {req}", i + 1),
                    );
                }
            }
            Setting::VrftdIid => {
                let cap = 1.0 / (4.0 * beta * (1.0 + gamma));
                need(at_most(eta, cap), format!("stepsize {eta} above {cap}"));
                need(self.lambda == 1.0, "extrapolation weight must be 1".into());
                let t_min = 32.0 / (mu * (1.0 - gamma) * eta);
                need(
                    at_most(t_min, self.inner_iters as f64),
                    format!("inner iterations {} below {t_min}", self.inner_iters),
                );
                let m_min = (256.0 * eta * varsigma_sq / (1.0 - gamma)).max(1.0);
                need(
                    at_most(m_min, self.minibatch as f64),
                    format!("mini-batch {} below {m_min}", self.minibatch),
                );
                need(
                    self.averaging == Averaging::UniformTail,
                    "uniform output required".into(),
                );
                let floor = 56.0 * varsigma_sq / (mu * (1.0 - gamma).powi(2));
                for (i, &n) in self.recenter_sizes.iter().enumerate() {
                    let req = floor.max(geometric(i + 1));
                    need(
                        at_most(req, n as f64),
                        format!("epoch {} batch {n} below {req}", i + 1),
                    );
                }
            }
            Setting::VrftdMarkov => {
                let (mixing, c_m, min_pi) = match (&stats.mixing, stats.c_m, stats.min_pi) {
                    (Some(m), Some(c), Some(p)) => (m, c, p),
                    _ => {
                        return Err(Error::ScheduleInfeasible(
                            "mixing constants are unavailable".into(),
                        ))
                    }
                };
                let rho = mixing.rho;
                let c_p = mixing.c_p;
                let tau = self.tau as f64;
                let varsigma = varsigma_sq.sqrt();
                let tau_cap = (2.0 * (1.0 - rho) * varsigma / (3.0 * c_m))
                    .min(2.0 * (1.0 - rho).powi(2) / (5.0 * c_m));
                need(
                    self.tau >= 1 && at_most(rho.powi(self.tau as i32), tau_cap),
                    format!("bias horizon {} too short", self.tau),
                );
                need(
                    at_most(rho.powi(self.recenter_burn_in as i32), min_pi / c_p),
                    format!("recentering burn-in {} too short", self.recenter_burn_in),
                );
                let m0_cap =
                    (min_pi / c_p).min(mu.sqrt() * eta * tau * varsigma_sq * (1.0 - rho) / c_m);
                need(
                    at_most(rho.powi(self.minibatch_burn_in as i32), m0_cap),
                    format!("mini-batch burn-in {} too short", self.minibatch_burn_in),
                );
                let cap = 1.0 / (4.0 * beta * (1.0 + gamma));
                need(at_most(eta, cap), format!("stepsize {eta} above {cap}"));
                need(self.lambda == 1.0, "extrapolation weight must be 1".into());
                let t_min = 64.0 / (mu * (1.0 - gamma) * eta);
                need(
                    at_most(t_min, self.inner_iters as f64),
                    format!("inner iterations {} below {t_min}", self.inner_iters),
                );
                let effective = (self.minibatch - self.minibatch_burn_in) as f64;
                let m_min = (792.0 * eta * (tau + 1.0) * varsigma_sq / (1.0 - gamma)).max(1.0);
                need(
                    at_most(m_min, effective),
                    format!("effective mini-batch {effective} below {m_min}"),
                );
                need(
                    self.averaging == Averaging::UniformTail,
                    "uniform output required".into(),
                );
                let floor = 206.0 * (tau + 1.0) * varsigma_sq / (mu * (1.0 - gamma).powi(2));
                for (i, &n) in self.recenter_sizes.iter().enumerate() {
                    let kept = (n - self.recenter_burn_in.min(n)) as f64;
                    let req = floor.max(geometric(i + 1));
                    need(
                        at_most(req, kept),
                        format!("epoch {} batch {kept} below {req}", i + 1),
                    );
                    need(
                        at_most(rho.powf(kept), tau * (1.0 - rho) / (5.0 * c_m * kept)),
                        format!("epoch {} batch {kept} too short for the mixing rate", i + 1),
                    );
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ScheduleInfeasible(problems.join("; ")))
        }
    }
}

/// Smallest integer `n >= lo` with `rho^n <= bound`.
fn min_power_exponent(rho: f64, bound: f64, lo: usize) -> Result<usize> {
    if !(bound > 0.0) {
        return Err(Error::InfeasibleInputs(format!(
            "geometric requirement rho^n <= {bound} has no solution"
        )));
    }
    if bound >= 1.0 {
        return Ok(lo);
    }
    let mut n = ceil_tol(bound.ln() / rho.ln()).max(lo);
    while n > lo && at_most(rho.powi(n as i32 - 1), bound) {
        n -= 1;
    }
    while !at_most(rho.powi(n as i32), bound) {
        n += 1;
    }
    Ok(n)
}

/// Cheapest parameters satisfying every condition of the guarantee for
/// `setting`, for `epochs` epochs and base batch size `base_batch`.
pub fn theoretical_schedule(
    stats: &ProblemStats,
    epochs: usize,
    base_batch: usize,
    setting: Setting,
) -> Result<EpochSchedule> {
    let ProblemStats {
        beta,
        mu,
        gamma,
        varsigma_sq,
        ..
    } = *stats;
    if !(mu > 0.0 && beta >= mu * (1.0 - 1e-12)) {
        return Err(Error::InfeasibleInputs(format!(
            "conditioning constants mu = {mu}, beta = {beta} are inconsistent"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if epochs == 0 {
        return Err(Error::InfeasibleInputs(
            "at least one epoch is required".into(),
        ));
    }
    let geometric =
        |k: usize| ceil_tol(0.75f64.powi((epochs - k) as i32) * base_batch as f64).max(1);
    let schedule = match setting {
        Setting::Vrtd => {
            let mut eta = (1.0 - gamma) / (2.0 * beta * (1.0 + gamma).powi(2));
            if varsigma_sq > 0.0 {
                eta = eta.min((1.0 - gamma) / (32.0 * varsigma_sq));
            }
            let floor = ceil_tol(38.0 * varsigma_sq / (mu * (1.0 - gamma).powi(2)));
            EpochSchedule {
                eta,
                lambda: 0.0,
                inner_iters: ceil_tol(32.0 / (mu * (1.0 - gamma) * eta)).max(1),
                minibatch: 1,
                minibatch_burn_in: 0,
                recenter_burn_in: 0,
                recenter_sizes: (1..=epochs).map(|k| floor.max(geometric(k))).collect(),
                base_batch,
                tau: 0,
                averaging: Averaging::Weighted,
            }
        }
        Setting::VrftdIid => {
            let eta = 1.0 / (4.0 * beta * (1.0 + gamma));
            let floor = ceil_tol(56.0 * varsigma_sq / (mu * (1.0 - gamma).powi(2)));
            EpochSchedule {
                eta,
                lambda: 1.0,
                inner_iters: ceil_tol(32.0 / (mu * (1.0 - gamma) * eta)).max(1),
                minibatch: ceil_tol(256.0 * eta * varsigma_sq / (1.0 - gamma)).max(1),
                minibatch_burn_in: 0,
                recenter_burn_in: 0,
                recenter_sizes: (1..=epochs).map(|k| floor.max(geometric(k))).collect(),
                base_batch,
                tau: 0,
                averaging: Averaging::UniformTail,
            }
        }
        Setting::VrftdMarkov => {
            let (mixing, c_m, min_pi) = match (&stats.mixing, stats.c_m, stats.min_pi) {
                (Some(m), Some(c), Some(p)) => (m, c, p),
                _ => {
                    return Err(Error::InfeasibleInputs(
                        "mixing constants are required for trajectory sampling".into(),
                    ))
                }
            };
            let rho = mixing.rho;
            if !(rho < 1.0) {
                return Err(Error::InfeasibleInputs(format!(
                    "mixing rate {rho} is not below one"
                )));
            }
            let c_p = mixing.c_p;
            let varsigma = varsigma_sq.sqrt();
            let tau_cap = (2.0 * (1.0 - rho) * varsigma / (3.0 * c_m))
                .min(2.0 * (1.0 - rho).powi(2) / (5.0 * c_m));
            let tau = min_power_exponent(rho, tau_cap, 1)?;
            let eta = 1.0 / (4.0 * beta * (1.0 + gamma));
            let n0 = min_power_exponent(rho, min_pi / c_p, 0)?;
            let m0_cap =
                (min_pi / c_p).min(mu.sqrt() * eta * tau as f64 * varsigma_sq * (1.0 - rho) / c_m);
            let m0 = min_power_exponent(rho, m0_cap, 0)?;
            let effective =
                ceil_tol(792.0 * eta * (tau as f64 + 1.0) * varsigma_sq / (1.0 - gamma)).max(1);
            let floor =
                ceil_tol(206.0 * (tau as f64 + 1.0) * varsigma_sq / (mu * (1.0 - gamma).powi(2)));
            let mut sizes = Vec::with_capacity(epochs);
            for k in 1..=epochs {
                let mut kept = floor.max(geometric(k));
                let limit = kept.saturating_mul(1000).max(10_000_000);
                while !at_most(
                    rho.powf(kept as f64),
                    tau as f64 * (1.0 - rho) / (5.0 * c_m * kept as f64),
                ) {
                    kept += 1;
                    if kept > limit {
                        return Err(Error::InfeasibleInputs(
                            "recentering batch condition cannot be met".into(),
                        ));
                    }
                }
                sizes.push(kept + n0);
            }
            EpochSchedule {
                eta,
                lambda: 1.0,
                inner_iters: ceil_tol(64.0 / (mu * (1.0 - gamma) * eta)).max(1),
                minibatch: m0 + effective,
                minibatch_burn_in: m0,
                recenter_burn_in: n0,
                recenter_sizes: sizes,
                base_batch,
                tau,
                averaging: Averaging::UniformTail,
            }
        }
    };
    schedule.validate(stats, setting)?;
    Ok(schedule)
}

/// Shape of a schedule fitted to a fixed sample budget.
///
/// The stepsize is `eta_scale / (4 beta (1 + gamma))`, the inner loop runs
/// `T = ceil(inner_constant / (mu (1 - gamma) eta))` steps with unit
/// mini-batches, and whatever the inner loops leave of the budget is spread
/// over the recentering batches in proportion `growth^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetShape {
    pub eta_scale: f64,
    pub inner_constant: f64,
    pub epochs: usize,
    pub growth: f64,
}

/// Schedule that consumes exactly `budget` samples.
pub fn budget_schedule(
    stats: &ProblemStats,
    budget: usize,
    shape: &BudgetShape,
    setting: Setting,
) -> Result<EpochSchedule> {
    let ProblemStats {
        beta, mu, gamma, ..
    } = *stats;
    if shape.epochs == 0 || !(shape.eta_scale > 0.0) || !(shape.inner_constant > 0.0) {
        return Err(Error::InfeasibleInputs(format!(
            "degenerate budget shape {shape:?}"
        )));
    }
    let eta = shape.eta_scale / (4.0 * beta * (1.0 + gamma));
    let inner = ceil_tol(shape.inner_constant / (mu * (1.0 - gamma) * eta)).max(1);
    let k = shape.epochs;
    let inner_total = inner * k;
    if inner_total + k > budget {
        return Err(Error::InfeasibleInputs(format!(
            "budget {budget} cannot fit {k} epochs of {inner} inner steps"
        )));
    }
    let left = budget - inner_total;
    let weights: Vec<f64> = (0..k).map(|i| shape.growth.powi(i as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total) * left as f64).floor().max(1.0) as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    if used > left {
        return Err(Error::InfeasibleInputs(
            "budget too small for the recentering batches".into(),
        ));
    }
    sizes[k - 1] += left - used;
    let (lambda, averaging) = match setting {
        Setting::Vrtd => (0.0, Averaging::Weighted),
        Setting::VrftdIid | Setting::VrftdMarkov => (1.0, Averaging::UniformTail),
    };
    Ok(EpochSchedule {
        eta,
        lambda,
        inner_iters: inner,
        minibatch: 1,
        minibatch_burn_in: 0,
        recenter_burn_in: 0,
        recenter_sizes: sizes,
        base_batch: left,
        tau: 0,
        averaging,
    })
}

/// Errors of the running estimate after a given number of observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub samples_used: u64,
    /// `||v_hat - v*||_Pi^2`.
    pub error_pi_sq: f64,
    /// `||v_hat - v_bar||_Pi^2`.
    pub error_to_vbar_sq: f64,
}

/// Record of one algorithm run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub final_theta: DVector<f64>,
    /// Output of each epoch (empty for the plain TD family).
    pub epoch_outputs: Vec<DVector<f64>>,
    /// When requested: the initial point, then every iterate in order. For
    /// epoch methods each epoch contributes its inner iterates followed by
    /// its output.
    pub iterate_log: Option<Vec<DVector<f64>>>,
    pub samples_used: u64,
}

impl RunTrace {
    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Where operator evaluations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Oracle {
    Sampled(SamplingModel),
    /// Every stochastic evaluation is replaced by the exact operator; each
    /// evaluation still counts as one observation.
    Exact,
}

/// Run-level switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Reject schedules that violate the convergence conditions.
    pub strict: bool,
    pub log_iterates: bool,
    /// Approximate number of geometrically spaced checkpoints.
    pub checkpoints: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            strict: false,
            log_iterates: false,
            checkpoints: 30,
        }
    }
}

/// Geometric checkpoint grid plus error bookkeeping.
struct Recorder<'a> {
    problem: &'a Problem,
    grid: Vec<u64>,
    next: usize,
    checkpoints: Vec<Checkpoint>,
    log: Option<Vec<DVector<f64>>>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, total: u64, opts: &RunOptions, theta0: &[f64]) -> Self {
        let count = opts.checkpoints.max(1);
        let mut grid: Vec<u64> = (0..count)
            .map(|i| {
                let frac = if count == 1 {
                    1.0
                } else {
                    i as f64 / (count - 1) as f64
                };
                (total.max(1) as f64).powf(frac).round() as u64
            })
            .collect();
        grid.dedup();
        let log = opts
            .log_iterates
            .then(|| vec![DVector::from_column_slice(theta0)]);
        Self {
            problem,
            grid,
            next: 0,
            checkpoints: Vec::new(),
            log,
        }
    }

    #[inline]
    fn tick(&mut self, samples: u64, theta: &[f64]) {
        if self.next < self.grid.len() && samples >= self.grid[self.next] {
            while self.next < self.grid.len() && samples >= self.grid[self.next] {
                self.next += 1;
            }
            self.push(samples, theta);
        }
    }

    fn push(&mut self, samples: u64, theta: &[f64]) {
        let cp = Checkpoint {
            samples_used: samples,
            error_pi_sq: self.problem.error_to_vstar_sq(theta),
            error_to_vbar_sq: self.problem.error_to_vbar_sq(theta),
        };
        match self.checkpoints.last_mut() {
            Some(last) if last.samples_used == samples => *last = cp,
            _ => self.checkpoints.push(cp),
        }
    }

    #[inline]
    fn log(&mut self, theta: &[f64]) {
        if let Some(log) = self.log.as_mut() {
            log.push(DVector::from_column_slice(theta));
        }
    }

    fn finish(self, theta: Vec<f64>, epoch_outputs: Vec<DVector<f64>>, samples: u64) -> RunTrace {
        RunTrace {
            checkpoints: self.checkpoints,
            final_theta: DVector::from_vec(theta),
            epoch_outputs,
            iterate_log: self.log,
            samples_used: samples,
        }
    }
}

fn check_theta0(problem: &Problem, theta0: &DVector<f64>) -> Result<()> {
    if theta0.len() != problem.basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.basis.dim(),
            got: theta0.len(),
        });
    }
    Ok(())
}

/// Source of operator evaluations during a run.
enum Source {
    Sampled(Sampler),
    Exact,
}

impl Source {
    fn new<R: Rng + ?Sized>(problem: &Problem, oracle: &Oracle, rng: &mut R) -> Result<Self> {
        Ok(match oracle {
            Oracle::Sampled(model) => Source::Sampled(model.sampler(&problem.instance, rng)?),
            Oracle::Exact => Source::Exact,
        })
    }
}

/// `out += w * (<psi(s), x> - R - gamma <psi(s'), x>) psi(s)` (with or
/// without the reward term).
#[inline]
fn accumulate_td(
    out: &mut [f64],
    x: &[f64],
    xi: &sampling::ObservationTuple,
    cols: &[f64],
    gamma: f64,
    with_reward: bool,
    weight: f64,
) {
    let d = out.len();
    let a = &cols[xi.s * d..(xi.s + 1) * d];
    let b = &cols[xi.s_next * d..(xi.s_next + 1) * d];
    let mut delta = linalg::dot(a, x) - gamma * linalg::dot(b, x);
    if with_reward {
        delta -= xi.reward;
    }
    let scale = weight * delta;
    for (o, &ai) in out.iter_mut().zip(a) {
        *o += scale * ai;
    }
}

/// Plain TD (`lambda = 0`) or its extrapolated variant (`lambda = 1`),
/// one observation per step.
#[allow(clippy::too_many_arguments)]
pub fn run_td_family<R: Rng + ?Sized>(
    problem: &Problem,
    oracle: &Oracle,
    steps: StepRule,
    lambda: f64,
    total_samples: u64,
    output: TdOutput,
    theta0: &DVector<f64>,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunTrace> {
    check_theta0(problem, theta0)?;
    if lambda != 0.0 && lambda != 1.0 {
        return Err(Error::ScheduleInfeasible(format!(
            "extrapolation weight {lambda} not in {{0, 1}}"
        )));
    }
    let mut source = Source::new(problem, oracle, rng)?;
    let d = problem.basis.dim();
    let gamma = problem.instance.gamma();
    let cols = problem.basis.psi().as_slice();
    let mut theta = theta0.as_slice().to_vec();
    let mut f_cur = vec![0.0; d];
    let mut f_prev = vec![0.0; d];
    let tail_start = match output {
        TdOutput::LastIterate => u64::MAX,
        TdOutput::TailAverage { fraction } => {
            let fraction = fraction.clamp(0.0, 1.0);
            total_samples - ((fraction * total_samples as f64).round() as u64).min(total_samples)
        }
    };
    let mut tail_sum = vec![0.0; d];
    let mut tail_count = 0u64;
    let mut estimate = theta.clone();
    let mut rec = Recorder::new(problem, total_samples, opts, &theta);
    for t in 0..total_samples {
        f_cur.iter_mut().for_each(|x| *x = 0.0);
        match &mut source {
            Source::Sampled(sampler) => {
                let xi = sampler.next(rng);
                accumulate_td(&mut f_cur, &theta, &xi, cols, gamma, true, 1.0);
            }
            Source::Exact => {
                let g = problem.operator.apply(&DVector::from_column_slice(&theta));
                f_cur.copy_from_slice(g.as_slice());
            }
        }
        if t == 0 {
            f_prev.copy_from_slice(&f_cur);
        }
        let eta = steps.at(t);
        for i in 0..d {
            theta[i] -= eta * (f_cur[i] + lambda * (f_cur[i] - f_prev[i]));
        }
        std::mem::swap(&mut f_cur, &mut f_prev);
        rec.log(&theta);
        let current: &[f64] = if t + 1 > tail_start {
            for (s, &x) in tail_sum.iter_mut().zip(&theta) {
                *s += x;
            }
            tail_count += 1;
            for (e, &s) in estimate.iter_mut().zip(&tail_sum) {
                *e = s / tail_count as f64;
            }
            &estimate
        } else {
            &theta
        };
        rec.tick(t + 1, current);
    }
    let result = if tail_count > 0 { estimate } else { theta };
    rec.push(total_samples, &result);
    Ok(rec.finish(result, Vec::new(), total_samples))
}

/// Variance-reduced TD with recentred single-sample updates and the
/// weighted epoch average. Requires independent samples (or the exact
/// oracle).
pub fn run_vrtd<R: Rng + ?Sized>(
    problem: &Problem,
    oracle: &Oracle,
    schedule: &EpochSchedule,
    theta0: &DVector<f64>,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunTrace> {
    require_model(oracle, false)?;
    if opts.strict {
        schedule.validate(&problem.stats()?, Setting::Vrtd)?;
    }
    run_epochs(problem, oracle, schedule, theta0, opts, rng)
}

/// Variance-reduced fast TD with mini-batches and operator extrapolation
/// under independent sampling.
pub fn run_vrftd_iid<R: Rng + ?Sized>(
    problem: &Problem,
    oracle: &Oracle,
    schedule: &EpochSchedule,
    theta0: &DVector<f64>,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunTrace> {
    require_model(oracle, false)?;
    if opts.strict {
        schedule.validate(&problem.stats()?, Setting::VrftdIid)?;
    }
    run_epochs(problem, oracle, schedule, theta0, opts, rng)
}

/// Variance-reduced fast TD on a single trajectory, discarding burn-in
/// samples at the start of every batch.
pub fn run_vrftd_markov<R: Rng + ?Sized>(
    problem: &Problem,
    oracle: &Oracle,
    schedule: &EpochSchedule,
    theta0: &DVector<f64>,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunTrace> {
    require_model(oracle, true)?;
    if opts.strict {
        schedule.validate(&problem.stats()?, Setting::VrftdMarkov)?;
    }
    run_epochs(problem, oracle, schedule, theta0, opts, rng)
}

fn require_model(oracle: &Oracle, markov: bool) -> Result<()> {
    match oracle {
        Oracle::Sampled(model) if model.is_markov() != markov => {
            Err(Error::InvalidDistribution(if markov {
                "this method consumes a single trajectory".into()
            } else {
                "this method consumes independent samples".into()
            }))
        }
        _ => Ok(()),
    }
}

/// Shared epoch engine for the variance-reduced methods.
fn run_epochs<R: Rng + ?Sized>(
    problem: &Problem,
    oracle: &Oracle,
    schedule: &EpochSchedule,
    theta0: &DVector<f64>,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunTrace> {
    check_theta0(problem, theta0)?;
    schedule.check_shape()?;
    let mut source = Source::new(problem, oracle, rng)?;
    let d = problem.basis.dim();
    let gamma = problem.instance.gamma();
    let beta = problem.basis.beta();
    let cols = problem.basis.psi().as_slice();
    let eta = schedule.eta;
    let lambda = schedule.lambda;
    let t_inner = schedule.inner_iters;
    let m = schedule.minibatch;
    let m0 = schedule.minibatch_burn_in;
    let n0 = schedule.recenter_burn_in;
    let total = schedule.total_samples();

    let mut rec = Recorder::new(problem, total, opts, theta0.as_slice());
    let mut samples = 0u64;
    let mut tilde = theta0.as_slice().to_vec();
    let mut theta = vec![0.0; d];
    let mut g_hat = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut f_cur = vec![0.0; d];
    let mut f_prev = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut outputs = Vec::with_capacity(schedule.epochs());

    let (w_inner, w_last) = match schedule.averaging {
        Averaging::Weighted => (eta * (1.0 - gamma), 1.0 / beta),
        Averaging::UniformTail => (1.0, 1.0),
    };

    for &n_k in &schedule.recenter_sizes {
        // Recentering at the epoch's reference point.
        g_hat.iter_mut().for_each(|v| *v = 0.0);
        match &mut source {
            Source::Sampled(sampler) => {
                let weight = 1.0 / (n_k - n0) as f64;
                for i in 0..n_k {
                    let xi = sampler.next(rng);
                    if i >= n0 {
                        accumulate_td(&mut g_hat, &tilde, &xi, cols, gamma, true, weight);
                    }
                }
            }
            Source::Exact => {
                let g = problem.operator.apply(&DVector::from_column_slice(&tilde));
                g_hat.copy_from_slice(g.as_slice());
            }
        }
        samples += n_k as u64;
        rec.tick(samples, &tilde);

        theta.copy_from_slice(&tilde);
        acc.iter_mut().for_each(|v| *v = 0.0);
        let mut weight_total = 0.0;
        if schedule.averaging == Averaging::Weighted {
            // theta_1 enters the weighted average.
            for (a, &th) in acc.iter_mut().zip(&theta) {
                *a += w_inner * th;
            }
            weight_total += w_inner;
        }
        for t in 1..=t_inner {
            for (xi, (&th, &tl)) in x.iter_mut().zip(theta.iter().zip(&tilde)) {
                *xi = th - tl;
            }
            f_cur.copy_from_slice(&g_hat);
            match &mut source {
                Source::Sampled(sampler) => {
                    let weight = 1.0 / (m - m0) as f64;
                    for j in 0..m {
                        let xi = sampler.next(rng);
                        if j >= m0 {
                            accumulate_td(&mut f_cur, &x, &xi, cols, gamma, false, weight);
                        }
                    }
                }
                Source::Exact => {
                    let ax = &problem.operator.a * DVector::from_column_slice(&x);
                    for (f, v) in f_cur.iter_mut().zip(ax.iter()) {
                        *f += v;
                    }
                }
            }
            samples += m as u64;
            if t == 1 {
                f_prev.copy_from_slice(&f_cur);
            }
            for i in 0..d {
                theta[i] -= eta * (f_cur[i] + lambda * (f_cur[i] - f_prev[i]));
            }
            std::mem::swap(&mut f_cur, &mut f_prev);
            // theta now holds theta_{t+1}.
            let w = match schedule.averaging {
                Averaging::Weighted if t == t_inner => w_last,
                Averaging::Weighted => w_inner,
                Averaging::UniformTail => 1.0,
            };
            for (a, &th) in acc.iter_mut().zip(&theta) {
                *a += w * th;
            }
            weight_total += w;
            rec.log(&theta);
            rec.tick(samples, &theta);
        }
        for (tl, &a) in tilde.iter_mut().zip(&acc) {
            *tl = a / weight_total;
        }
        rec.log(&tilde);
        rec.push(samples, &tilde);
        outputs.push(DVector::from_column_slice(&tilde));
    }
    Ok(rec.finish(tilde, outputs, samples))
}
