//! Step-driven agents. [`CpsrlAgent`] resamples its environment model with
//! probability `1 - gamma` before each step; the TSDE, duration-doubling and
//! uniform-random agents are baselines behind the same [`Agent`] interface.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::planning::solve_discounted;
use crate::posterior::PosteriorState;

/// Largest discount any schedule produces.
pub const MAX_GAMMA: f64 = 1.0 - 1e-9;

/// Default absolute tolerance for the discounted planner.
pub const DEFAULT_PLANNER_TOL: f64 = 1e-8;

/// Discount in force at each time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaSchedule {
    Fixed(f64),
    /// `1 / (1 - gamma) = sqrt(T / (S A))`.
    HorizonTuned {
        horizon: u64,
        n_states: usize,
        n_actions: usize,
    },
    /// `1 / (1 - gamma_t) = sqrt(2^(k+1) / (S A))` for `t` in `[2^k, 2^(k+1))`.
    DoublingTrick {
        n_states: usize,
        n_actions: usize,
    },
}

impl GammaSchedule {
    pub fn gamma_at(&self, t: u64) -> f64 {
        let raw = match *self {
            GammaSchedule::Fixed(gamma) => gamma,
            GammaSchedule::HorizonTuned {
                horizon,
                n_states,
                n_actions,
            } => 1.0 - ((n_states * n_actions) as f64 / horizon as f64).sqrt(),
            GammaSchedule::DoublingTrick {
                n_states,
                n_actions,
            } => {
                let k = doubling_interval(t);
                1.0 - ((n_states * n_actions) as f64 / 2f64.powi(k as i32 + 1)).sqrt()
            }
        };
        raw.clamp(0.0, MAX_GAMMA)
    }

    /// True at the first step of a doubling interval `[2^k, 2^(k+1))`, k >= 1.
    pub fn is_interval_boundary(&self, t: u64) -> bool {
        matches!(self, GammaSchedule::DoublingTrick { .. }) && t >= 2 && t.is_power_of_two()
    }
}

/// The `k` with `t` in `[2^k, 2^(k+1))`.
pub fn doubling_interval(t: u64) -> u32 {
    t.max(1).ilog2()
}

/// Number of steps in one pseudo-episode: after every step the episode
/// continues with probability `gamma`.
pub fn pseudo_episode_length<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> u64 {
    let mut len = 1;
    while rng.random_bool(gamma) {
        len += 1;
    }
    len
}

/// A model resample and replan, reported by the agent that performed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resample {
    /// 1-based pseudo-episode index.
    pub k: u64,
    pub t_k: u64,
    pub gamma: f64,
    pub sampled: TabularMdp,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub resample: Option<Resample>,
}

pub trait Agent: Send {
    fn name(&self) -> &'static str;

    /// Chooses the action at time `t >= 1` in state `s`.
    fn act(&mut self, t: u64, s: usize) -> Result<Decision>;

    fn observe(&mut self, s: usize, a: usize, r: f64, s_next: usize) -> Result<()>;

    fn posterior(&self) -> Option<&PosteriorState> {
        None
    }

    /// Discount used for planning at `t`, if the agent plans.
    fn gamma_at(&self, _t: u64) -> Option<f64> {
        None
    }
}

/// Everything a posterior-sampling agent needs at construction time.
#[derive(Debug, Clone)]
pub struct AgentParams {
    pub n_states: usize,
    pub n_actions: usize,
    /// Known reward function, indexed `(s, a)`.
    pub rewards: Array2<f64>,
    pub prior_alpha: f64,
    pub schedule: GammaSchedule,
    pub planner_tol: f64,
    pub seed: u64,
}

impl AgentParams {
    pub fn for_env(env: &TabularMdp, schedule: GammaSchedule, seed: u64) -> Self {
        Self {
            n_states: env.n_states(),
            n_actions: env.n_actions(),
            rewards: env.rewards().clone(),
            prior_alpha: 1.0,
            schedule,
            planner_tol: DEFAULT_PLANNER_TOL,
            seed,
        }
    }
}

/// Posterior, sampled policy and randomness shared by every
/// posterior-sampling variant.
#[derive(Debug, Clone)]
struct SampleAndPlan {
    posterior: PosteriorState,
    rewards: Array2<f64>,
    schedule: GammaSchedule,
    planner_tol: f64,
    rng: ChaCha8Rng,
    policy: Option<Policy>,
    episodes: u64,
    episode_start: u64,
}

impl SampleAndPlan {
    fn new(params: AgentParams) -> Result<Self> {
        if params.rewards.dim() != (params.n_states, params.n_actions) {
            return Err(Error::DimensionMismatch {
                what: "reward matrix",
                expected: params.n_states * params.n_actions,
                found: params.rewards.len(),
            });
        }
        Ok(Self {
            posterior: PosteriorState::new(params.n_states, params.n_actions, params.prior_alpha)?,
            rewards: params.rewards,
            schedule: params.schedule,
            planner_tol: params.planner_tol,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            policy: None,
            episodes: 0,
            episode_start: 0,
        })
    }

    fn resample(&mut self, t: u64, gamma: f64) -> Result<Resample> {
        let sampled = self.posterior.sample_mdp(&self.rewards, &mut self.rng)?;
        let plan = solve_discounted(&sampled, gamma, self.planner_tol)?;
        self.episodes += 1;
        self.episode_start = t;
        self.policy = Some(plan.policy.clone());
        Ok(Resample {
            k: self.episodes,
            t_k: t,
            gamma,
            sampled,
            policy: plan.policy,
        })
    }

    fn sample_action(&mut self, s: usize) -> Result<usize> {
        let policy = self
            .policy
            .as_ref()
            .expect("a policy exists after the first resample");
        policy.sample_action(s, &mut self.rng)
    }
}

fn check_time(t: u64) -> Result<()> {
    if t == 0 {
        Err(Error::InvalidParameter("time steps start at t = 1".into()))
    } else {
        Ok(())
    }
}

/// Continuing posterior sampling: resample when the pending indicator is
/// zero, act from the current sampled-optimal policy, then draw the next
/// indicator from `Bernoulli(gamma_t)`.
#[derive(Debug, Clone)]
pub struct CpsrlAgent {
    inner: SampleAndPlan,
    /// `X_t = 0`: resample before acting.
    pending_resample: bool,
    force_boundary_resample: bool,
}

impl CpsrlAgent {
    pub fn new(params: AgentParams) -> Result<Self> {
        Ok(Self {
            inner: SampleAndPlan::new(params)?,
            pending_resample: true,
            force_boundary_resample: false,
        })
    }

    /// Also resample at the first step of every doubling interval.
    pub fn with_boundary_resample(mut self, force: bool) -> Self {
        self.force_boundary_resample = force;
        self
    }

    pub fn episode_index(&self) -> u64 {
        self.inner.episodes
    }

    pub fn episode_start(&self) -> u64 {
        self.inner.episode_start
    }

    pub fn current_policy(&self) -> Option<&Policy> {
        self.inner.policy.as_ref()
    }

    pub fn pending_resample(&self) -> bool {
        self.pending_resample
    }

    pub fn schedule(&self) -> &GammaSchedule {
        &self.inner.schedule
    }
}

impl Agent for CpsrlAgent {
    fn name(&self) -> &'static str {
        "cpsrl"
    }

    fn act(&mut self, t: u64, s: usize) -> Result<Decision> {
        check_time(t)?;
        let gamma = self.inner.schedule.gamma_at(t);
        let boundary = self.force_boundary_resample && self.inner.schedule.is_interval_boundary(t);
        let resample = if self.pending_resample || boundary {
            Some(self.inner.resample(t, gamma)?)
        } else {
            None
        };
        let action = self.inner.sample_action(s)?;
        self.pending_resample = !self.inner.rng.random_bool(gamma);
        Ok(Decision { action, resample })
    }

    fn observe(&mut self, s: usize, a: usize, _r: f64, s_next: usize) -> Result<()> {
        self.inner.posterior.update(s, a, s_next)
    }

    fn posterior(&self) -> Option<&PosteriorState> {
        Some(&self.inner.posterior)
    }

    fn gamma_at(&self, t: u64) -> Option<f64> {
        Some(self.inner.schedule.gamma_at(t))
    }
}

/// Resample times and the visit counts recorded at the latest one.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleHistory {
    /// Start times `t_1 < t_2 < ...`.
    pub starts: Vec<u64>,
    /// `N_{t_k}(s, a)` at the latest start.
    pub counts_at_last: Array2<u64>,
}

impl ResampleHistory {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            starts: Vec::new(),
            counts_at_last: Array2::zeros((n_states, n_actions)),
        }
    }

    pub fn record(&mut self, t: u64, counts: &PosteriorState) {
        self.starts.push(t);
        self.counts_at_last = counts.visit_counts().clone();
    }

    /// Length of the interval that ended at the latest start. Before the
    /// second resample the first start is measured from `t = 0`.
    pub fn previous_interval(&self) -> Option<u64> {
        match self.starts.as_slice() {
            [] => None,
            [first] => Some(*first),
            [.., prev, last] => Some(last - prev),
        }
    }
}

/// TSDE rule: resample once the current episode outlasts the previous one,
/// or once some pair's visit count has doubled (or gone from zero to
/// nonzero) since the latest resample.
pub fn tsde_should_resample(history: &ResampleHistory, counts: &PosteriorState, t: u64) -> bool {
    let (Some(&t_k), Some(previous)) = (history.starts.last(), history.previous_interval()) else {
        return true;
    };
    if t.saturating_sub(t_k) > previous {
        return true;
    }
    counts
        .visit_counts()
        .iter()
        .zip(&history.counts_at_last)
        .any(|(&now, &then)| if then == 0 { now >= 1 } else { now >= 2 * then })
}

/// Episode `k` lasts `base_len * 2^(k-1)` steps.
pub fn doubling_duration_should_resample(t: u64, t_k: u64, k: u64, base_len: u64) -> bool {
    let exponent = k.saturating_sub(1).min(62) as u32;
    t.saturating_sub(t_k) >= base_len.saturating_mul(1 << exponent)
}

/// Posterior sampling with TSDE's resampling criteria. Plans with the same
/// discounted planner and schedule as [`CpsrlAgent`].
#[derive(Debug, Clone)]
pub struct TsdeAgent {
    inner: SampleAndPlan,
    history: ResampleHistory,
}

impl TsdeAgent {
    pub fn new(params: AgentParams) -> Result<Self> {
        let history = ResampleHistory::new(params.n_states, params.n_actions);
        Ok(Self {
            inner: SampleAndPlan::new(params)?,
            history,
        })
    }

    pub fn history(&self) -> &ResampleHistory {
        &self.history
    }
}

impl Agent for TsdeAgent {
    fn name(&self) -> &'static str {
        "tsde"
    }

    fn act(&mut self, t: u64, s: usize) -> Result<Decision> {
        check_time(t)?;
        let resample = if tsde_should_resample(&self.history, &self.inner.posterior, t) {
            let gamma = self.inner.schedule.gamma_at(t);
            let event = self.inner.resample(t, gamma)?;
            self.history.record(t, &self.inner.posterior);
            Some(event)
        } else {
            None
        };
        let action = self.inner.sample_action(s)?;
        Ok(Decision { action, resample })
    }

    fn observe(&mut self, s: usize, a: usize, _r: f64, s_next: usize) -> Result<()> {
        self.inner.posterior.update(s, a, s_next)
    }

    fn posterior(&self) -> Option<&PosteriorState> {
        Some(&self.inner.posterior)
    }

    fn gamma_at(&self, t: u64) -> Option<f64> {
        Some(self.inner.schedule.gamma_at(t))
    }
}

/// Posterior sampling whose episode lengths double: `L0, 2 L0, 4 L0, ...`.
#[derive(Debug, Clone)]
pub struct DoublingAgent {
    inner: SampleAndPlan,
    base_len: u64,
}

impl DoublingAgent {
    pub fn new(params: AgentParams, base_len: u64) -> Result<Self> {
        if base_len == 0 {
            return Err(Error::InvalidParameter(
                "base episode length must be positive".into(),
            ));
        }
        Ok(Self {
            inner: SampleAndPlan::new(params)?,
            base_len,
        })
    }
}

impl Agent for DoublingAgent {
    fn name(&self) -> &'static str {
        "doubling"
    }

    fn act(&mut self, t: u64, s: usize) -> Result<Decision> {
        check_time(t)?;
        let due = self.inner.policy.is_none()
            || doubling_duration_should_resample(
                t,
                self.inner.episode_start,
                self.inner.episodes,
                self.base_len,
            );
        let resample = if due {
            let gamma = self.inner.schedule.gamma_at(t);
            Some(self.inner.resample(t, gamma)?)
        } else {
            None
        };
        let action = self.inner.sample_action(s)?;
        Ok(Decision { action, resample })
    }

    fn observe(&mut self, s: usize, a: usize, _r: f64, s_next: usize) -> Result<()> {
        self.inner.posterior.update(s, a, s_next)
    }

    fn posterior(&self) -> Option<&PosteriorState> {
        Some(&self.inner.posterior)
    }

    fn gamma_at(&self, t: u64) -> Option<f64> {
        Some(self.inner.schedule.gamma_at(t))
    }
}

pub fn random_agent_act<R: Rng + ?Sized>(rng: &mut R, n_actions: usize) -> usize {
    rng.random_range(0..n_actions)
}

/// Uniformly random actions; the linear-regret reference.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    n_actions: usize,
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(n_actions: usize, seed: u64) -> Self {
        Self {
            n_actions,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &'static str {
        "random"
    }

    fn act(&mut self, t: u64, _s: usize) -> Result<Decision> {
        check_time(t)?;
        Ok(Decision {
            action: random_agent_act(&mut self.rng, self.n_actions),
            resample: None,
        })
    }

    fn observe(&mut self, _s: usize, _a: usize, _r: f64, _s_next: usize) -> Result<()> {
        Ok(())
    }
}
