use std::collections::HashMap;

use ndarray::Array1;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AgentKind, RunConfig};
use crate::agents::{
    Agent, AgentParams, CpsrlAgent, DoublingAgent, GammaSchedule, RandomAgent, TsdeAgent,
};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::planning::{evaluate_discounted, optimal_gain, solve_discounted};
use crate::posterior::ConfidenceSet;

/// Tolerance for the gain and value computations used in regret accounting.
const ACCOUNTING_TOL: f64 = 1e-10;

/// One environment step. `t` counts from 1: record `t` holds the action taken
/// at step `t` and the reward that followed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    /// `lambda_* - r`.
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub k: u64,
    pub t_k: u64,
    /// Steps in the episode; the last one may be cut off by the horizon.
    pub len: u64,
    pub gamma: f64,
    pub start_state: usize,
    /// `V*_E(s) - V_{pi_k, E}(s)` at the episode's discount.
    pub delta_k: Option<f64>,
    /// `V_{pi_k, E^k}(s) - V_{pi_k, E}(s)`.
    pub delta_tilde_k: Option<f64>,
    pub in_confidence_set: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: u64,
    pub cumulative_regret: f64,
    pub k: u64,
    pub gamma: Option<f64>,
}

/// Everything recorded during one agent-environment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub agent: String,
    pub seed: u64,
    pub horizon: u64,
    pub lambda_star: f64,
    /// Planned episode count `ceil(sum_t (1 - gamma_t)) + 1`.
    pub k_hat: Option<u64>,
    pub realized_k: u64,
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub curve: Vec<CurvePoint>,
    /// Times at which the agent's discount changed.
    pub gamma_changes: Vec<u64>,
}

impl RunLog {
    pub fn total_regret(&self) -> f64 {
        self.steps.iter().map(|s| s.regret).sum()
    }

    /// Cumulative regret after the first `t` steps.
    pub fn regret_at(&self, t: u64) -> f64 {
        self.steps.iter().take(t as usize).map(|s| s.regret).sum()
    }

    pub fn sum_delta(&self) -> Option<f64> {
        self.episodes.iter().map(|e| e.delta_k).sum()
    }

    pub fn sum_delta_tilde(&self) -> Option<f64> {
        self.episodes.iter().map(|e| e.delta_tilde_k).sum()
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Episode lengths cover the run, and the curve is the prefix sum of
    /// the per-step regret terms.
    pub fn check_invariants(&self) -> Result<()> {
        let steps = self.steps.len() as u64;
        if !self.episodes.is_empty() {
            let covered: u64 = self.episodes.iter().map(|e| e.len).sum();
            let before_first = self.episodes[0].t_k - 1;
            if covered + before_first != steps {
                return Err(Error::InvalidParameter(format!(
                    "episodes cover {covered} steps, run has {steps}"
                )));
            }
        }
        let mut cumulative = 0.0;
        let mut points = self.curve.iter().peekable();
        for step in &self.steps {
            cumulative += step.regret;
            if let Some(point) = points.next_if(|p| p.t == step.t) {
                if point.cumulative_regret != cumulative {
                    return Err(Error::InvalidParameter(format!(
                        "curve at t={} is {}, prefix sum is {cumulative}",
                        step.t, point.cumulative_regret
                    )));
                }
            }
        }
        if points.next().is_some() {
            return Err(Error::InvalidParameter(
                "curve has points past the last step".into(),
            ));
        }
        Ok(())
    }
}

/// Tracks confidence-set membership of the true model at episode starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceTracking {
    /// `K` in the confidence radius.
    pub big_k: u64,
    /// Seeds the draws for never-visited pairs in the empirical model.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub log_every: u64,
    pub lambda_star: f64,
    pub record_deltas: bool,
    pub confidence: Option<ConfidenceTracking>,
}

/// Independent random streams for one run, all derived from its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub env: u64,
    pub agent: u64,
    pub transitions: u64,
    pub diagnostics: u64,
}

impl RunSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Self {
            env: master.next_u64(),
            agent: master.next_u64(),
            transitions: master.next_u64(),
            diagnostics: master.next_u64(),
        }
    }
}

/// `ceil(sum_{t <= T} (1 - gamma_t)) + 1`; equals `ceil((1 - gamma) T) + 1`
/// for a constant discount.
pub fn planned_episode_bound(schedule: &GammaSchedule, horizon: u64) -> u64 {
    let expected: f64 = match schedule {
        GammaSchedule::DoublingTrick { .. } => {
            (1..=horizon).map(|t| 1.0 - schedule.gamma_at(t)).sum()
        }
        _ => (1.0 - schedule.gamma_at(1)) * horizon as f64,
    };
    (expected - 1e-9).ceil().max(0.0) as u64 + 1
}

pub fn build_agent(
    config: &RunConfig,
    env: &TabularMdp,
    schedule: GammaSchedule,
    seed: u64,
) -> Result<Box<dyn Agent>> {
    let params = AgentParams {
        prior_alpha: config.prior_alpha,
        planner_tol: config.planner_tol,
        ..AgentParams::for_env(env, schedule, seed)
    };
    Ok(match config.agent {
        AgentKind::Cpsrl => Box::new(
            CpsrlAgent::new(params)?.with_boundary_resample(config.force_boundary_resample),
        ),
        AgentKind::Tsde => Box::new(TsdeAgent::new(params)?),
        AgentKind::Doubling => Box::new(DoublingAgent::new(params, config.doubling_base_len)?),
        AgentKind::Random => Box::new(RandomAgent::new(env.n_actions(), seed)),
    })
}

/// Optimal discounted values of the true model, computed once per discount.
struct OptimalValueCache<'a> {
    env: &'a TabularMdp,
    values: HashMap<u64, Array1<f64>>,
}

impl<'a> OptimalValueCache<'a> {
    fn new(env: &'a TabularMdp) -> Self {
        Self {
            env,
            values: HashMap::new(),
        }
    }

    fn get(&mut self, gamma: f64) -> Result<&Array1<f64>> {
        let key = gamma.to_bits();
        if !self.values.contains_key(&key) {
            let greedy = solve_discounted(self.env, gamma, ACCOUNTING_TOL)?.policy;
            let exact = evaluate_discounted(self.env, &greedy, gamma, ACCOUNTING_TOL)?;
            self.values.insert(key, exact.v);
        }
        Ok(&self.values[&key])
    }
}

/// Runs `agent` on `env` for `horizon` steps from the initial state.
pub fn simulate(
    env: &TabularMdp,
    agent: &mut dyn Agent,
    horizon: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<RunLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diag_rng = options
        .confidence
        .map(|c| ChaCha8Rng::seed_from_u64(c.seed));
    let mut optimal = OptimalValueCache::new(env);
    let cadence = options.log_every.max(1);

    let mut steps = Vec::with_capacity(horizon as usize);
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut curve = Vec::new();
    let mut gamma_changes = Vec::new();
    let mut previous_gamma = None;
    let mut cumulative = 0.0;
    let mut state = env.initial_state();

    for t in 1..=horizon {
        let gamma_t = agent.gamma_at(t);
        if gamma_t != previous_gamma && previous_gamma.is_some() {
            gamma_changes.push(t);
        }
        previous_gamma = gamma_t;

        let decision = agent.act(t, state)?;
        if let Some(event) = decision.resample {
            let (delta_k, delta_tilde_k) = if options.record_deltas {
                let on_true =
                    evaluate_discounted(env, &event.policy, event.gamma, ACCOUNTING_TOL)?.v[state];
                let on_sample = evaluate_discounted(
                    &event.sampled,
                    &event.policy,
                    event.gamma,
                    ACCOUNTING_TOL,
                )?
                .v[state];
                let best = optimal.get(event.gamma)?[state];
                (Some(best - on_true), Some(on_sample - on_true))
            } else {
                (None, None)
            };
            let in_confidence_set = match (options.confidence, diag_rng.as_mut(), agent.posterior())
            {
                (Some(tracking), Some(rng), Some(posterior)) => {
                    let set = ConfidenceSet::build(
                        posterior,
                        env.rewards(),
                        event.k,
                        event.t_k,
                        tracking.big_k,
                        rng,
                    )?;
                    Some(set.contains(env)?)
                }
                _ => None,
            };
            if let Some(last) = episodes.last_mut() {
                last.len = t - last.t_k;
            }
            episodes.push(EpisodeRecord {
                k: event.k,
                t_k: event.t_k,
                len: 0,
                gamma: event.gamma,
                start_state: state,
                delta_k,
                delta_tilde_k,
                in_confidence_set,
            });
        }

        let action = decision.action;
        let (next, reward) = env.step(state, action, &mut rng)?;
        agent.observe(state, action, reward, next)?;
        let regret = options.lambda_star - reward;
        cumulative += regret;
        steps.push(StepRecord {
            t,
            s: state,
            a: action,
            r: reward,
            regret,
        });
        if t % cadence == 0 || t == horizon {
            curve.push(CurvePoint {
                t,
                cumulative_regret: cumulative,
                k: episodes.last().map_or(0, |e| e.k),
                gamma: gamma_t,
            });
        }
        state = next;
    }
    if let Some(last) = episodes.last_mut() {
        last.len = horizon + 1 - last.t_k;
    }

    Ok(RunLog {
        agent: agent.name().to_string(),
        seed,
        horizon,
        lambda_star: options.lambda_star,
        k_hat: None,
        realized_k: episodes.len() as u64,
        steps,
        episodes,
        curve,
        gamma_changes,
    })
}

/// Builds the environment and agent for `seed` and runs them.
pub fn run_single(config: &RunConfig, seed: u64) -> Result<RunLog> {
    config.validate()?;
    let seeds = RunSeeds::derive(seed);
    let env = config.env.build(seeds.env)?;
    let lambda_star = optimal_gain(&env, ACCOUNTING_TOL)?;
    let schedule = config
        .schedule
        .resolve(config.horizon, env.n_states(), env.n_actions());
    let k_hat = (config.agent != AgentKind::Random)
        .then(|| planned_episode_bound(&schedule, config.horizon));
    let mut agent = build_agent(config, &env, schedule, seeds.agent)?;
    let options = SimOptions {
        log_every: config.log_cadence(),
        lambda_star,
        record_deltas: config.agent != AgentKind::Random,
        confidence: match (config.track_confidence, k_hat) {
            (true, Some(big_k)) => Some(ConfidenceTracking {
                big_k,
                seed: seeds.diagnostics,
            }),
            _ => None,
        },
    };
    let mut log = simulate(
        &env,
        agent.as_mut(),
        config.horizon,
        seeds.transitions,
        &options,
    )?;
    log.seed = seed;
    log.k_hat = k_hat;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_cycle, EnvSpec};
    use crate::experiment::config::ScheduleConfig;
    use crate::mdp::Policy;
    use crate::planning::average_reward;

    fn config(agent: AgentKind, horizon: u64) -> RunConfig {
        RunConfig::new(
            EnvSpec::river_swim(6),
            agent,
            ScheduleConfig::Fixed { gamma: 0.9 },
            horizon,
        )
    }

    #[test]
    fn random_agent_regret_slope() {
        let mut config = config(AgentKind::Random, 200_000);
        config.log_every = Some(1000);
        let log = run_single(&config, 1).unwrap();
        log.check_invariants().unwrap();
        let env = EnvSpec::river_swim(6).build(0).unwrap();
        let random_gain = average_reward(&env, &Policy::uniform(6, 2), 1e-12).unwrap()[0];
        let slope = log.lambda_star - random_gain;
        assert!(slope > 0.0);
        let t = log.horizon as f64;
        let observed = log.total_regret() / t;
        assert!((observed - slope).abs() < 0.01, "{observed} vs {slope}");
        assert!(log.episodes.is_empty());
    }

    #[test]
    fn optimal_policy_regret_stays_bounded() {
        // A policy that is optimal from the start: every stationary policy on a
        // single-action cycle is.
        let env = make_cycle(&[0.0, 1.0, 0.5], false).unwrap();
        let mut agent = RandomAgent::new(1, 0);
        let options = SimOptions {
            log_every: 10,
            lambda_star: optimal_gain(&env, 1e-12).unwrap(),
            record_deltas: false,
            confidence: None,
        };
        let log = simulate(&env, &mut agent, 3000, 4, &options).unwrap();
        let tau = crate::planning::reward_averaging_time(&env, &Policy::uniform(3, 1), 100)
            .unwrap()
            .tau_hat;
        for point in &log.curve {
            assert!(point.cumulative_regret.abs() <= tau + 1e-9);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let config = config(AgentKind::Cpsrl, 3000);
        let a = run_single(&config, 7).unwrap().to_json_bytes().unwrap();
        let b = run_single(&config, 7).unwrap().to_json_bytes().unwrap();
        assert_eq!(a, b);
        let c = run_single(&config, 8).unwrap().to_json_bytes().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn episode_bookkeeping() {
        for agent in [AgentKind::Cpsrl, AgentKind::Tsde, AgentKind::Doubling] {
            let log = run_single(&config(agent, 2500), 3).unwrap();
            log.check_invariants().unwrap();
            assert_eq!(log.episodes[0].t_k, 1);
            assert_eq!(log.realized_k, log.episodes.len() as u64);
            for e in &log.episodes {
                assert!(e.delta_k.unwrap() >= -1e-7, "{agent:?}: {e:?}");
                assert!(e.len >= 1);
            }
        }
    }

    #[test]
    fn doubling_schedule_changes_are_logged() {
        let mut config = config(AgentKind::Cpsrl, 1000);
        config.schedule = ScheduleConfig::DoublingTrick;
        let log = run_single(&config, 0).unwrap();
        // gamma clamps to 0 until 2^(k+1) > S A = 12
        assert!(log.gamma_changes.iter().all(|t| t.is_power_of_two()));
        assert!(log.gamma_changes.contains(&512));
    }

    #[test]
    fn planned_bound_matches_constant_formula() {
        assert_eq!(
            planned_episode_bound(&GammaSchedule::Fixed(0.99), 10_000),
            101
        );
        let doubling = GammaSchedule::DoublingTrick {
            n_states: 1,
            n_actions: 1,
        };
        let direct: f64 = (1..=100u64).map(|t| 1.0 - doubling.gamma_at(t)).sum();
        assert_eq!(
            planned_episode_bound(&doubling, 100),
            direct.ceil() as u64 + 1
        );
    }

    #[test]
    fn confidence_tracking_fills_membership() {
        let mut config = RunConfig::new(
            EnvSpec::random_dirichlet(3, 2, 1.0),
            AgentKind::Cpsrl,
            ScheduleConfig::Fixed { gamma: 0.9 },
            500,
        );
        config.track_confidence = true;
        let log = run_single(&config, 2).unwrap();
        assert!(log.episodes.iter().all(|e| e.in_confidence_set.is_some()));
    }
}
