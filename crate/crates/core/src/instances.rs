//! Instance generators: the symmetric two-state family, a single-state
//! noiseless chain, goal-seeking grid worlds and random features.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{MrpInstance, StationaryDistribution};
use crate::projection;

/// Symmetric two-state chain that stays put with probability
/// `(2 gamma - 1) / gamma`, with state rewards `+1` and `-1`.
///
/// Valid for `gamma` in `(1/2, 1)`; its stationary law is uniform.
pub fn two_state_instance(gamma: f64) -> Result<MrpInstance> {
    if !(gamma > 0.5 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    let stay = (2.0 * gamma - 1.0) / gamma;
    let p = DMatrix::from_row_slice(2, 2, &[stay, 1.0 - stay, 1.0 - stay, stay]);
    MrpInstance::from_state_rewards(p, &DVector::from_vec(vec![1.0, -1.0]), gamma)
}

/// Features `diag(sqrt 2, sqrt 2)`, orthonormal under the uniform law.
pub fn two_state_features() -> DMatrix<f64> {
    DMatrix::from_diagonal_element(2, 2, 2f64.sqrt())
}

/// One state with a self-loop: every observation is identical, so all
/// stochastic operators are exact.
pub fn single_state_instance(gamma: f64, reward: f64) -> Result<MrpInstance> {
    MrpInstance::new(
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, reward),
        gamma,
    )
}

/// When transition rewards are paid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardTiming {
    /// `R(s, s')` is the reward of the cell being entered.
    #[default]
    OnEntry,
    /// `R(s, s')` is the reward of the cell being left.
    OnExit,
}

/// Goal-seeking walk on a rectangular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    /// `(column, row)` of the goal.
    pub goal: (usize, usize),
    /// Fixed trap cells.
    #[serde(default)]
    pub traps: Vec<(usize, usize)>,
    /// Extra traps placed uniformly at random on free cells.
    #[serde(default)]
    pub random_traps: usize,
    pub trap_reward: f64,
    pub goal_reward: f64,
    pub toward_goal_prob: f64,
    pub feature_dim: usize,
    #[serde(default)]
    pub reward_timing: RewardTiming,
}

impl GridWorldSpec {
    /// Grid of the given size with the goal in the far corner.
    pub fn new(width: usize, height: usize, random_traps: usize, feature_dim: usize) -> Self {
        Self {
            width,
            height,
            goal: (width.saturating_sub(1), height.saturating_sub(1)),
            traps: Vec::new(),
            random_traps,
            trap_reward: -0.2,
            goal_reward: 1.0,
            toward_goal_prob: 0.95,
            feature_dim,
            reward_timing: RewardTiming::OnEntry,
        }
    }

    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    fn index(&self, cell: (usize, usize)) -> usize {
        cell.1 * self.width + cell.0
    }

    fn validate(&self) -> Result<()> {
        let in_bounds = |c: (usize, usize)| c.0 < self.width && c.1 < self.height;
        if self.width == 0 || self.height == 0 || self.num_states() < 2 {
            return Err(Error::InvalidSpec("grid needs at least two cells".into()));
        }
        if !in_bounds(self.goal) {
            return Err(Error::InvalidSpec(format!(
                "goal {:?} is off the grid",
                self.goal
            )));
        }
        if let Some(t) = self.traps.iter().find(|&&t| !in_bounds(t)) {
            return Err(Error::InvalidSpec(format!("trap {t:?} is off the grid")));
        }
        if self.traps.contains(&self.goal) {
            return Err(Error::InvalidSpec("goal cell cannot be a trap".into()));
        }
        if !(self.toward_goal_prob > 0.0 && self.toward_goal_prob < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "toward-goal probability {} outside (0, 1)",
                self.toward_goal_prob
            )));
        }
        let free = self.num_states() - 1 - self.traps.len();
        if self.random_traps > free {
            return Err(Error::InvalidSpec(format!(
                "{} random traps requested but only {free} free cells",
                self.random_traps
            )));
        }
        if self.feature_dim == 0 || self.feature_dim > self.num_states() {
            return Err(Error::InvalidSpec(format!(
                "feature dimension {} outside 1..={}",
                self.feature_dim,
                self.num_states()
            )));
        }
        Ok(())
    }
}

/// A generated grid world: the chain plus the realised trap layout.
#[derive(Clone, Debug)]
pub struct GridWorld {
    pub instance: MrpInstance,
    pub traps: Vec<(usize, usize)>,
}

/// Builds the grid-world chain.
///
/// From a non-goal cell the walker takes, with probability
/// `toward_goal_prob`, one of the moves that shorten the Manhattan distance
/// to the goal (uniformly among them), and otherwise a uniformly random
/// legal move. Moves never leave the grid. From the goal the walker
/// re-spawns uniformly on the grid.
pub fn gridworld_instance<R: Rng + ?Sized>(
    spec: &GridWorldSpec,
    gamma: f64,
    rng: &mut R,
) -> Result<GridWorld> {
    spec.validate()?;
    let n = spec.num_states();
    let goal = spec.index(spec.goal);
    let mut trap_cells = spec.traps.clone();
    if spec.random_traps > 0 {
        let free: Vec<usize> = (0..n)
            .filter(|&i| i != goal && !spec.traps.iter().any(|&t| spec.index(t) == i))
            .collect();
        let mut picked: Vec<usize> = sample(rng, free.len(), spec.random_traps)
            .into_iter()
            .map(|k| free[k])
            .collect();
        picked.sort_unstable();
        trap_cells.extend(picked.into_iter().map(|i| (i % spec.width, i / spec.width)));
    }
    let mut cell_reward = vec![0.0; n];
    for &t in &trap_cells {
        cell_reward[spec.index(t)] = spec.trap_reward;
    }
    cell_reward[goal] = spec.goal_reward;

    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        if s == goal {
            for t in 0..n {
                p[(s, t)] = 1.0 / n as f64;
            }
            continue;
        }
        let (c, r) = (s % spec.width, s / spec.width);
        let mut legal = Vec::with_capacity(4);
        if c > 0 {
            legal.push((c - 1, r));
        }
        if c + 1 < spec.width {
            legal.push((c + 1, r));
        }
        if r > 0 {
            legal.push((c, r - 1));
        }
        if r + 1 < spec.height {
            legal.push((c, r + 1));
        }
        let dist =
            |cell: (usize, usize)| cell.0.abs_diff(spec.goal.0) + cell.1.abs_diff(spec.goal.1);
        let here = dist((c, r));
        let toward: Vec<(usize, usize)> =
            legal.iter().copied().filter(|&x| dist(x) < here).collect();
        let q = spec.toward_goal_prob;
        for &cell in &toward {
            p[(s, spec.index(cell))] += q / toward.len() as f64;
        }
        for &cell in &legal {
            p[(s, spec.index(cell))] += (1.0 - q) / legal.len() as f64;
        }
        // Remove rounding drift so the row sums to one.
        let sum: f64 = p.row(s).iter().sum();
        for t in 0..n {
            p[(s, t)] /= sum;
        }
    }
    let reward = DMatrix::from_fn(n, n, |s, t| match spec.reward_timing {
        RewardTiming::OnEntry => cell_reward[t],
        RewardTiming::OnExit => cell_reward[s],
    });
    Ok(GridWorld {
        instance: MrpInstance::new(p, reward, gamma)?,
        traps: trap_cells,
    })
}

/// Attempts made by [`random_features`] before giving up.
pub const FEATURE_ATTEMPTS: usize = 100;

/// Standard-normal `d x D` features, redrawn until the Gram matrix under
/// `pi` has smallest eigenvalue above `1e-8`.
pub fn random_features<R: Rng + ?Sized>(
    d: usize,
    pi: &StationaryDistribution,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = pi.len();
    if d == 0 || d > n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: d,
        });
    }
    let mut last = 0.0;
    for _ in 0..FEATURE_ATTEMPTS {
        let psi = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gram = projection::weight_columns(&psi, pi.pi()) * psi.transpose();
        let (values, _) = linalg::symmetric_eigen(&gram);
        last = values[0];
        if last > 1e-8 {
            return Ok(psi);
        }
    }
    Err(Error::RankDeficientFeatures {
        min_eigenvalue: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrp::{ergodicity_check, stationary_distribution};
    use crate::sampling::trial_rng;

    #[test]
    fn two_cell_grid_by_hand() {
        let mut spec = GridWorldSpec::new(2, 1, 0, 1);
        spec.goal = (1, 0);
        let g = gridworld_instance(&spec, 0.9, &mut trial_rng(0, 0)).unwrap();
        let p = g.instance.transition();
        assert_eq!(p[(0, 1)], 1.0);
        assert_eq!(p[(1, 0)], 0.5);
        assert_eq!(p[(1, 1)], 0.5);
        let r = g.instance.reward();
        assert_eq!(r[(0, 1)], 1.0);
        assert_eq!(r[(1, 0)], 0.0);
    }

    #[test]
    fn large_trapped_grid_is_ergodic() {
        let spec = GridWorldSpec::new(20, 20, 30, 50);
        let g = gridworld_instance(&spec, 0.99, &mut trial_rng(4, 0)).unwrap();
        assert_eq!(g.instance.num_states(), 400);
        assert_eq!(g.traps.len(), 30);
        assert!(ergodicity_check(g.instance.transition()).is_ergodic());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = GridWorldSpec::new(3, 3, 0, 2);
        spec.traps = vec![spec.goal];
        assert!(matches!(
            gridworld_instance(&spec, 0.9, &mut trial_rng(0, 0)),
            Err(Error::InvalidSpec(_))
        ));
        let mut spec = GridWorldSpec::new(3, 3, 0, 2);
        spec.toward_goal_prob = 1.0;
        assert!(gridworld_instance(&spec, 0.9, &mut trial_rng(0, 0)).is_err());
        let mut spec = GridWorldSpec::new(3, 3, 0, 2);
        spec.goal = (3, 0);
        assert!(gridworld_instance(&spec, 0.9, &mut trial_rng(0, 0)).is_err());
    }

    #[test]
    fn features_are_reproducible() {
        let spec = GridWorldSpec::new(4, 4, 2, 5);
        let g = gridworld_instance(&spec, 0.9, &mut trial_rng(1, 0)).unwrap();
        let pi = stationary_distribution(g.instance.transition()).unwrap();
        let a = random_features(5, &pi, &mut trial_rng(9, 1)).unwrap();
        let b = random_features(5, &pi, &mut trial_rng(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_state_rejects_low_discount() {
        assert!(two_state_instance(0.5).is_err());
        assert!(two_state_instance(0.75).is_ok());
    }
}
