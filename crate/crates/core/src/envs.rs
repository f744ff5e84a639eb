//! Benchmark and randomly generated environments.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::posterior::sample_dirichlet;

/// Draws allowed before a random generator gives up on finding a
/// communicating MDP.
pub const REJECTION_CAP: usize = 1000;

/// Number of steps in the reward grid `{0, 1/n, ..., 1}`.
pub const REWARD_GRID_STEPS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvKind {
    RiverSwim {
        #[serde(default = "defaults::river_len")]
        n: usize,
        #[serde(default = "defaults::p_right")]
        p_right: f64,
        #[serde(default = "defaults::r_left")]
        r_left: f64,
        #[serde(default = "defaults::r_right")]
        r_right: f64,
    },
    RandomDirichlet {
        n_states: usize,
        n_actions: usize,
        #[serde(default = "defaults::alpha")]
        alpha: f64,
    },
    Cycle {
        rewards: Vec<f64>,
        #[serde(default)]
        stay_action: bool,
    },
}

mod defaults {
    pub fn river_len() -> usize {
        6
    }
    pub fn p_right() -> f64 {
        0.3
    }
    pub fn r_left() -> f64 {
        0.005
    }
    pub fn r_right() -> f64 {
        1.0
    }
    pub fn alpha() -> f64 {
        1.0
    }
}

/// An environment recipe. Random kinds draw from `seed` when it is set and
/// from the caller's run seed otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EnvSpec {
    pub fn river_swim(n: usize) -> Self {
        Self {
            kind: EnvKind::RiverSwim {
                n,
                p_right: defaults::p_right(),
                r_left: defaults::r_left(),
                r_right: defaults::r_right(),
            },
            seed: None,
        }
    }

    pub fn random_dirichlet(n_states: usize, n_actions: usize, alpha: f64) -> Self {
        Self {
            kind: EnvKind::RandomDirichlet {
                n_states,
                n_actions,
                alpha,
            },
            seed: None,
        }
    }

    pub fn build(&self, run_seed: u64) -> Result<TabularMdp> {
        let seed = self.seed.unwrap_or(run_seed);
        match &self.kind {
            EnvKind::RiverSwim {
                n,
                p_right,
                r_left,
                r_right,
            } => make_river_swim(*n, *p_right, *r_left, *r_right),
            EnvKind::RandomDirichlet {
                n_states,
                n_actions,
                alpha,
            } => make_random_dirichlet(*n_states, *n_actions, *alpha, seed),
            EnvKind::Cycle {
                rewards,
                stay_action,
            } => make_cycle(rewards, *stay_action),
        }
    }

    /// Whether the built environment is a draw from the agents' transition
    /// prior with pseudo-count `alpha`.
    pub fn matches_prior(&self, prior_alpha: f64) -> bool {
        matches!(self.kind, EnvKind::RandomDirichlet { alpha, .. } if alpha == prior_alpha)
    }
}

/// RiverSwim chain. Action 0 swims left (always succeeds); action 1 swims
/// right, succeeding with `p_right`, slipping back with probability 0.1 and
/// otherwise staying. At the ends the blocked move becomes a stay. Swimming
/// left in state 0 pays `r_left`; swimming right in state `n-1` pays
/// `r_right`.
pub fn make_river_swim(n: usize, p_right: f64, r_left: f64, r_right: f64) -> Result<TabularMdp> {
    const P_BACK: f64 = 0.1;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "RiverSwim needs n >= 2, got {n}"
        )));
    }
    if !(0.0..=1.0 - P_BACK).contains(&p_right) || p_right == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "p_right must lie in (0, {}], got {p_right}",
            1.0 - P_BACK
        )));
    }
    for r in [r_left, r_right] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!(
                "reward {r} outside [0, 1]"
            )));
        }
    }
    let (left, right) = (0, 1);
    let mut p = Array3::zeros((2, n, n));
    for s in 0..n {
        p[[left, s, s.saturating_sub(1)]] = 1.0;

        let back = s.saturating_sub(1);
        let forward = (s + 1).min(n - 1);
        p[[right, s, forward]] += p_right;
        p[[right, s, back]] += P_BACK;
        p[[right, s, s]] += 1.0 - p_right - P_BACK;
    }
    let mut r = Array2::zeros((n, 2));
    r[[0, left]] = r_left;
    r[[n - 1, right]] = r_right;
    TabularMdp::new(p, r, 0)
}

/// Transition rows from `Dirichlet(alpha 1)`, rewards uniform on the grid
/// `{0, 0.1, ..., 1}`, redrawn until the MDP is communicating.
pub fn make_random_dirichlet(
    n_states: usize,
    n_actions: usize,
    alpha: f64,
    seed: u64,
) -> Result<TabularMdp> {
    make_random_dirichlet_counted(n_states, n_actions, alpha, seed).map(|(mdp, _)| mdp)
}

/// As [`make_random_dirichlet`], also returning how many draws were needed.
pub fn make_random_dirichlet_counted(
    n_states: usize,
    n_actions: usize,
    alpha: f64,
    seed: u64,
) -> Result<(TabularMdp, usize)> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidParameter("S and A must be positive".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concentration = Array1::from_elem(n_states, alpha);
    for attempt in 1..=REJECTION_CAP {
        let mut p = Array3::zeros((n_actions, n_states, n_states));
        for a in 0..n_actions {
            for s in 0..n_states {
                p.slice_mut(ndarray::s![a, s, ..])
                    .assign(&sample_dirichlet(&concentration, &mut rng));
            }
        }
        let r = Array2::from_shape_simple_fn((n_states, n_actions), || {
            rng.random_range(0..=REWARD_GRID_STEPS) as f64 / REWARD_GRID_STEPS as f64
        });
        let mdp = TabularMdp::new(p, r, 0)?;
        if mdp.check_communicating() {
            return Ok((mdp, attempt));
        }
    }
    Err(Error::RejectionCapExceeded(REJECTION_CAP))
}

/// Deterministic cycle `0 -> 1 -> ... -> n-1 -> 0` paying `rewards[s]` in
/// state `s`. With `stay_action`, a second action stays put and pays the
/// same reward.
pub fn make_cycle(rewards: &[f64], stay_action: bool) -> Result<TabularMdp> {
    let n = rewards.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "cycle needs n >= 2, got {n}"
        )));
    }
    let n_actions = if stay_action { 2 } else { 1 };
    let mut p = Array3::zeros((n_actions, n, n));
    for s in 0..n {
        p[[0, s, (s + 1) % n]] = 1.0;
        if stay_action {
            p[[1, s, s]] = 1.0;
        }
    }
    let r = Array2::from_shape_fn((n, n_actions), |(s, _)| rewards[s]);
    TabularMdp::new(p, r, 0)
}
