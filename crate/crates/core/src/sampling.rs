//! Observation models (independent tuples and a single Markov trajectory),
//! the stochastic TD operator and exact noise constants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{self, MixingProfile, MrpInstance};
use crate::projection::{self, FeatureBasis};

/// Generator used for every trial. ChaCha is counter based, so each
/// `(seed, stream)` pair is an independent, replayable sequence.
pub type TrialRng = ChaCha8Rng;

/// Generator for trial `trial` of an experiment seeded with `base_seed`.
pub fn trial_rng(base_seed: u64, trial: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial);
    rng
}

/// One observation `(s, s', R(s, s'))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationTuple {
    pub s: usize,
    pub s_next: usize,
    pub reward: f64,
}

/// Starting point of a Markov trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    State(usize),
    Distribution(Vec<f64>),
    /// Draw the first state from the stationary distribution.
    Stationary,
}

/// How observations are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingModel {
    /// Independent tuples with `s ~ omega`; `None` means the stationary
    /// distribution.
    Iid { omega: Option<Vec<f64>> },
    /// Consecutive transitions of a single trajectory.
    Markov { init: InitialState },
}

impl SamplingModel {
    pub fn stationary_iid() -> Self {
        SamplingModel::Iid { omega: None }
    }

    pub fn stationary_markov() -> Self {
        SamplingModel::Markov {
            init: InitialState::Stationary,
        }
    }

    pub fn is_markov(&self) -> bool {
        matches!(self, SamplingModel::Markov { .. })
    }

    /// Instantiates a sampler. Markov trajectories draw their first state
    /// from `rng` here.
    pub fn sampler<R: Rng + ?Sized>(&self, instance: &MrpInstance, rng: &mut R) -> Result<Sampler> {
        match self {
            SamplingModel::Iid { omega } => {
                let omega = match omega {
                    Some(w) => w.clone(),
                    None => mrp::stationary_distribution(instance.transition())?
                        .pi()
                        .as_slice()
                        .to_vec(),
                };
                Ok(Sampler::Iid(IidSampler::new(instance, &omega)?))
            }
            SamplingModel::Markov { init } => {
                Ok(Sampler::Markov(MarkovSampler::new(instance, init, rng)?))
            }
        }
    }
}

/// Cumulative table for inverse-CDF draws from a discrete distribution.
#[derive(Clone, Debug)]
struct Cdf {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl Cdf {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|&w| {
                acc += w;
                acc
            })
            .collect();
        let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        Self {
            cumulative,
            last_positive,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.last_positive)
    }
}

fn validate_sampling_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len(),
        });
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidDistribution(
            "weights must be nonnegative".into(),
        ));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDistribution(format!("weights sum to {sum}")));
    }
    Ok(())
}

/// Transition rows as cumulative tables plus the reward table.
#[derive(Clone, Debug)]
struct Kernel {
    rows: Vec<Cdf>,
    reward: DMatrix<f64>,
}

impl Kernel {
    fn new(instance: &MrpInstance) -> Self {
        let p = instance.transition();
        let rows = (0..p.nrows())
            .map(|s| Cdf::new(&p.row(s).iter().copied().collect::<Vec<_>>()))
            .collect();
        Self {
            rows,
            reward: instance.reward().clone(),
        }
    }

    fn step<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> ObservationTuple {
        let s_next = self.rows[s].draw(rng);
        ObservationTuple {
            s,
            s_next,
            reward: self.reward[(s, s_next)],
        }
    }
}

/// Independent tuples: `s ~ omega`, `s' ~ P(s, .)`.
#[derive(Clone, Debug)]
pub struct IidSampler {
    start: Cdf,
    kernel: Kernel,
}

impl IidSampler {
    pub fn new(instance: &MrpInstance, omega: &[f64]) -> Result<Self> {
        validate_sampling_weights(omega, instance.num_states())?;
        Ok(Self {
            start: Cdf::new(omega),
            kernel: Kernel::new(instance),
        })
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ObservationTuple {
        let s = self.start.draw(rng);
        self.kernel.step(s, rng)
    }
}

/// A single trajectory; consecutive tuples share a state.
#[derive(Clone, Debug)]
pub struct MarkovSampler {
    state: usize,
    kernel: Kernel,
}

impl MarkovSampler {
    pub fn new<R: Rng + ?Sized>(
        instance: &MrpInstance,
        init: &InitialState,
        rng: &mut R,
    ) -> Result<Self> {
        let report = mrp::ergodicity_check(instance.transition());
        if !report.is_ergodic() {
            return Err(Error::NonErgodicChain(report.detail));
        }
        let n = instance.num_states();
        let state = match init {
            InitialState::State(s) if *s < n => *s,
            InitialState::State(s) => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: *s,
                })
            }
            InitialState::Distribution(w) => {
                validate_sampling_weights(w, n)?;
                Cdf::new(w).draw(rng)
            }
            InitialState::Stationary => {
                let pi = mrp::stationary_distribution(instance.transition())?;
                Cdf::new(pi.pi().as_slice()).draw(rng)
            }
        };
        Ok(Self {
            state,
            kernel: Kernel::new(instance),
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ObservationTuple {
        let xi = self.kernel.step(self.state, rng);
        self.state = xi.s_next;
        xi
    }
}

/// Either observation model behind one interface.
#[derive(Clone, Debug)]
pub enum Sampler {
    Iid(IidSampler),
    Markov(MarkovSampler),
}

impl Sampler {
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ObservationTuple {
        match self {
            Sampler::Iid(s) => s.next(rng),
            Sampler::Markov(s) => s.next(rng),
        }
    }
}

/// Draws one independent tuple.
pub fn sample_iid<R: Rng + ?Sized>(
    instance: &MrpInstance,
    omega: &[f64],
    rng: &mut R,
) -> Result<ObservationTuple> {
    Ok(IidSampler::new(instance, omega)?.next(rng))
}

/// `length` consecutive transitions of one trajectory.
pub fn markov_stream<R: Rng + ?Sized>(
    instance: &MrpInstance,
    init: &InitialState,
    length: usize,
    rng: &mut R,
) -> Result<Vec<ObservationTuple>> {
    let mut sampler = MarkovSampler::new(instance, init, rng)?;
    Ok((0..length).map(|_| sampler.next(rng)).collect())
}

/// Temporal-difference error `<psi(s), theta> - R - gamma <psi(s'), theta>`.
#[inline]
pub fn td_error(theta: &[f64], xi: &ObservationTuple, psi: &DMatrix<f64>, gamma: f64) -> f64 {
    let d = psi.nrows();
    let col = psi.as_slice();
    let a = &col[xi.s * d..(xi.s + 1) * d];
    let b = &col[xi.s_next * d..(xi.s_next + 1) * d];
    linalg::dot(a, theta) - xi.reward - gamma * linalg::dot(b, theta)
}

/// `g~(theta, xi) = (<psi(s), theta> - R(s, s') - gamma <psi(s'), theta>) psi(s)`.
pub fn stochastic_operator(
    theta: &DVector<f64>,
    xi: &ObservationTuple,
    psi: &DMatrix<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    if theta.len() != psi.nrows() {
        return Err(Error::DimensionMismatch {
            expected: psi.nrows(),
            got: theta.len(),
        });
    }
    let n = psi.ncols();
    for idx in [xi.s, xi.s_next] {
        if idx >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: idx,
            });
        }
    }
    let delta = td_error(theta.as_slice(), xi, psi, gamma);
    Ok(psi.column(xi.s) * delta)
}

/// Tightest constant `varsigma^2` with
/// `E||g~(theta) - g~(theta') - (g(theta) - g(theta'))||^2 <= varsigma^2 ||v - v'||_Pi^2`,
/// the expectation taken over `s ~ omega`, `s' ~ P(s, .)`.
pub fn variance_parameter(
    instance: &MrpInstance,
    basis: &FeatureBasis,
    omega: &[f64],
) -> Result<f64> {
    let n = instance.num_states();
    validate_sampling_weights(omega, n)?;
    if basis.num_states() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: basis.num_states(),
        });
    }
    let d = basis.dim();
    let psi = basis.psi();
    let p = instance.transition();
    let gamma = instance.gamma();
    let mut second = DMatrix::<f64>::zeros(d, d);
    let mut mean = DMatrix::<f64>::zeros(d, d);
    for s in 0..n {
        if omega[s] == 0.0 {
            continue;
        }
        let a = psi.column(s);
        for t in 0..n {
            let w = omega[s] * p[(s, t)];
            if w == 0.0 {
                continue;
            }
            // A = psi(s) (psi(s) - gamma psi(s'))^T, so A^T A = |psi(s)|^2 u u^T.
            let u = psi.column(s) - psi.column(t) * gamma;
            second += (&u * u.transpose()) * (w * a.norm_squared());
            mean += (a * u.transpose()) * w;
        }
    }
    let centered = second - mean.tr_mul(&mean);
    let w = basis.gram_inv_sqrt();
    let scaled = projection::symmetrize(&(w * centered * w));
    Ok(linalg::lambda_max_symmetric(&scaled).max(0.0))
}

/// Bias constant `C_M = c_p / sqrt(min pi) * ||Psi||_2 * ||I - gamma P||_2`.
pub fn bias_constant(
    instance: &MrpInstance,
    basis: &FeatureBasis,
    mixing: &MixingProfile,
) -> Result<f64> {
    let pi = mrp::stationary_distribution(instance.transition())?;
    let n = instance.num_states();
    let resolvent = DMatrix::<f64>::identity(n, n) - instance.transition() * instance.gamma();
    Ok(mixing.c_p / pi.min().sqrt()
        * linalg::spectral_norm(basis.psi())
        * linalg::spectral_norm(&resolvent))
}
