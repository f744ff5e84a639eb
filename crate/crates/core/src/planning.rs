//! Dynamic programming on known tabular MDPs: discounted evaluation and
//! control, long-run average reward, optimal gain, and reward averaging
//! times.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};

/// Above this many states, policy evaluation iterates instead of solving.
pub const DIRECT_SOLVE_MAX_STATES: usize = 500;

/// Default scan horizon for reward averaging times: `10 * ceil(1 / (1 - 0.999))`.
pub const DEFAULT_TAU_HORIZON: usize = 10_000;

/// Lazy-chain weight used by both gain routines. `(1-w) I + w P` has the same
/// Cesàro limit as `P` and is aperiodic.
const LAZY_WEIGHT: f64 = 0.5;

const MAX_SQUARINGS: usize = 64;
const MAX_RVI_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueReport {
    pub gamma: f64,
    pub v: Array1<f64>,
    #[serde(skip)]
    pub policy: Policy,
    /// Sup-norm Bellman residual of `v`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub lambda_per_state: Array1<f64>,
    /// Set when the gain is the same in every state.
    pub lambda_opt: Option<f64>,
    pub tau_hat: f64,
    pub horizon_used: usize,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidDiscount(gamma))
    }
}

fn sup_norm_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves `v = r_pi + gamma P_pi v`.
pub fn evaluate_discounted(
    mdp: &TabularMdp,
    policy: &Policy,
    gamma: f64,
    tol: f64,
) -> Result<ValueReport> {
    check_gamma(gamma)?;
    let p = mdp.policy_transition_matrix(policy)?;
    let r = mdp.policy_reward_vector(policy)?;
    if gamma == 0.0 {
        return Ok(ValueReport {
            gamma,
            v: r,
            policy: policy.clone(),
            residual: 0.0,
            iterations: 0,
        });
    }

    let bellman = |v: &Array1<f64>| &r + &(p.dot(v) * gamma);
    let n = mdp.n_states();
    if n <= DIRECT_SOLVE_MAX_STATES {
        let a = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - gamma * p[[i, j]]
        });
        let b = DVector::from_iterator(n, r.iter().copied());
        if let Some(x) = a.lu().solve(&b) {
            let v = Array1::from_iter(x.iter().copied());
            let residual = sup_norm_diff(&v, &bellman(&v));
            if residual <= tol {
                return Ok(ValueReport {
                    gamma,
                    v,
                    policy: policy.clone(),
                    residual,
                    iterations: 1,
                });
            }
        }
    }

    // Fixed-point iteration from zero; successive differences shrink by gamma.
    let cap = contraction_iterations(gamma, tol);
    let mut v = Array1::zeros(n);
    for it in 1..=cap {
        let next = bellman(&v);
        let residual = sup_norm_diff(&next, &v);
        v = next;
        if residual * gamma <= tol {
            let residual = sup_norm_diff(&v, &bellman(&v));
            return Ok(ValueReport {
                gamma,
                v,
                policy: policy.clone(),
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        what: "policy evaluation",
        iterations: cap,
        last: v.to_vec(),
    })
}

/// Iterations after which `gamma^n <= target`, plus slack for rounding.
fn contraction_iterations(gamma: f64, target: f64) -> usize {
    if gamma == 0.0 || target >= 1.0 {
        return 2;
    }
    let n = (target.ln() / gamma.ln()).ceil();
    (n as usize).saturating_add(1000)
}

/// `Q(s, a) = r(s, a) + gamma * <P_as, v>` for every pair.
pub fn q_values(mdp: &TabularMdp, v: &Array1<f64>, gamma: f64) -> Array2<f64> {
    let mut q = mdp.rewards().clone();
    if gamma == 0.0 {
        return q;
    }
    for a in 0..mdp.n_actions() {
        for s in 0..mdp.n_states() {
            q[[s, a]] += gamma * mdp.row(s, a).dot(v);
        }
    }
    q
}

/// Greedy deterministic policy; ties go to the lowest action index.
pub fn greedy_policy(q: &Array2<f64>) -> Policy {
    let actions: Vec<usize> = q
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (a, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(&actions, q.ncols()).expect("greedy actions are in range")
}

/// Value iteration for `V*_gamma`. Stops once successive iterates differ by
/// at most `tol (1 - gamma) / (2 gamma)`, which puts `v` within `tol / 2` of
/// the optimum and makes the greedy policy `tol`-optimal.
pub fn solve_discounted(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<ValueReport> {
    check_gamma(gamma)?;
    if gamma == 0.0 {
        let q = mdp.rewards().clone();
        let v = q.map_axis(ndarray::Axis(1), |row| row.fold(f64::MIN, |m, &x| m.max(x)));
        return Ok(ValueReport {
            gamma,
            v,
            policy: greedy_policy(&q),
            residual: 0.0,
            iterations: 1,
        });
    }

    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    // From v = 0 the first difference is at most 1 (rewards in [0, 1]).
    let cap = contraction_iterations(gamma, threshold);
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let p = mdp.transitions().as_standard_layout();
    let p = p.as_slice().expect("standard layout is contiguous");
    let r = mdp.rewards();
    let mut v = vec![0.0; n_s];
    let mut next = vec![0.0; n_s];
    for it in 1..=cap {
        let mut residual = 0.0f64;
        for s in 0..n_s {
            let mut best = f64::MIN;
            for a in 0..n_a {
                let row = &p[(a * n_s + s) * n_s..(a * n_s + s + 1) * n_s];
                let expected: f64 = row.iter().zip(&v).map(|(p, v)| p * v).sum();
                best = best.max(r[[s, a]] + gamma * expected);
            }
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= threshold {
            let v = Array1::from(v);
            let q = q_values(mdp, &v, gamma);
            let backed_up =
                q.map_axis(ndarray::Axis(1), |row| row.fold(f64::MIN, |m, &x| m.max(x)));
            return Ok(ValueReport {
                gamma,
                residual: sup_norm_diff(&backed_up, &v),
                v,
                policy: greedy_policy(&q),
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        what: "value iteration",
        iterations: cap,
        last: v,
    })
}

/// Limiting matrix `P*` of a stochastic matrix: repeated squaring of the lazy
/// chain `(1-w) I + w P` until the iterate is idempotent to `tol`.
pub fn limiting_matrix(p: &Array2<f64>, tol: f64) -> Result<Array2<f64>> {
    let n = p.nrows();
    let mut m = p * LAZY_WEIGHT;
    for i in 0..n {
        m[[i, i]] += 1.0 - LAZY_WEIGHT;
    }
    for _ in 0..MAX_SQUARINGS {
        let next = m.dot(&m);
        let change = next
            .iter()
            .zip(m.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        m = next;
        if change < tol {
            return Ok(m);
        }
    }
    Err(Error::NotConverged {
        what: "limiting matrix",
        iterations: MAX_SQUARINGS,
        last: m.iter().copied().collect(),
    })
}

/// Per-state long-run average reward `lambda_pi = P_pi^* r_pi`.
pub fn average_reward(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<Array1<f64>> {
    let p = mdp.policy_transition_matrix(policy)?;
    let r = mdp.policy_reward_vector(policy)?;
    match limiting_matrix(&p, tol) {
        Ok(limit) => Ok(limit.dot(&r)),
        Err(Error::NotConverged {
            iterations, last, ..
        }) => {
            let n = p.nrows();
            let limit = Array2::from_shape_vec((n, n), last).expect("square iterate");
            Err(Error::NotConverged {
                what: "average reward",
                iterations,
                last: limit.dot(&r).to_vec(),
            })
        }
        Err(e) => Err(e),
    }
}

/// Optimal gain via relative value iteration on the lazy-chain transform,
/// stopping when the span of successive differences drops below `tol`.
/// Meaningful for weakly communicating inputs, where the gain is
/// state-independent.
pub fn optimal_gain(mdp: &TabularMdp, tol: f64) -> Result<f64> {
    let n = mdp.n_states();
    let mut h = Array1::<f64>::zeros(n);
    let mut diff = Array1::<f64>::zeros(n);
    for _ in 0..MAX_RVI_ITERATIONS {
        let next = Array1::from_iter((0..n).map(|s| {
            (0..mdp.n_actions())
                .map(|a| {
                    mdp.reward(s, a)
                        + LAZY_WEIGHT * mdp.row(s, a).dot(&h)
                        + (1.0 - LAZY_WEIGHT) * h[s]
                })
                .fold(f64::MIN, f64::max)
        }));
        diff = &next - &h;
        let (lo, hi) = min_max(diff.iter().copied());
        if hi - lo < tol {
            return Ok(0.5 * (lo + hi));
        }
        let offset = next[0];
        h = next.mapv(|x| x - offset);
    }
    Err(Error::NotConverged {
        what: "relative value iteration",
        iterations: MAX_RVI_ITERATIONS,
        last: diff.to_vec(),
    })
}

/// `tau_hat = max_{s, T <= t_max} |sum_{t<T} (P^t r)(s) - T lambda(s)|`.
///
/// Exact for the scanned horizon; a lower bound on the supremum over all `T`.
pub fn reward_averaging_time(
    mdp: &TabularMdp,
    policy: &Policy,
    t_max: usize,
) -> Result<GainReport> {
    let lambda = average_reward(mdp, policy, 1e-13)?;
    let tau_hat = partial_sum_deviation(mdp, policy, &lambda, t_max)?;
    let (lo, hi) = min_max(lambda.iter().copied());
    Ok(GainReport {
        lambda_opt: (hi - lo <= 1e-9).then_some(0.5 * (lo + hi)),
        lambda_per_state: lambda,
        tau_hat,
        horizon_used: t_max,
    })
}

/// Largest partial-sum deviation for a given gain vector.
pub fn partial_sum_deviation(
    mdp: &TabularMdp,
    policy: &Policy,
    lambda: &Array1<f64>,
    t_max: usize,
) -> Result<f64> {
    let p = mdp.policy_transition_matrix(policy)?;
    let mut expected = mdp.policy_reward_vector(policy)?;
    let mut partial = Array1::<f64>::zeros(mdp.n_states());
    let mut tau: f64 = 0.0;
    for t in 1..=t_max {
        partial += &expected;
        let horizon = t as f64;
        for (s, &x) in partial.iter().enumerate() {
            tau = tau.max((x - horizon * lambda[s]).abs());
        }
        expected = p.dot(&expected);
    }
    Ok(tau)
}

pub fn span(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    let (lo, hi) = min_max(v.iter().copied());
    Ok(hi - lo)
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}
