//! Tabular MDPs with known deterministic rewards, stationary policies, and
//! single-step simulation.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for freshly constructed models.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Row-sum tolerance for matrices produced by arithmetic on models.
pub const DERIVED_ROW_SUM_TOL: f64 = 1e-10;

/// A finite MDP `(A, S, rho)` with a known reward function `r(s, a)` and a
/// deterministic initial state.
///
/// `transitions[[a, s, s2]]` is the probability of moving from `s` to `s2`
/// under action `a`; `rewards[[s, a]]` lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transitions: Array3<f64>,
    rewards: Array2<f64>,
    initial_state: usize,
}

impl TabularMdp {
    pub fn new(
        transitions: Array3<f64>,
        rewards: Array2<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let mdp = Self::from_parts_unchecked(transitions, rewards, initial_state);
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds a model without checking the probability invariants. Callers
    /// that accept external data should follow up with [`TabularMdp::validate`].
    pub fn from_parts_unchecked(
        transitions: Array3<f64>,
        rewards: Array2<f64>,
        initial_state: usize,
    ) -> Self {
        Self {
            transitions,
            rewards,
            initial_state,
        }
    }

    pub fn n_states(&self) -> usize {
        self.transitions.shape()[1]
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.shape()[0]
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transitions(&self) -> &Array3<f64> {
        &self.transitions
    }

    pub fn rewards(&self) -> &Array2<f64> {
        &self.rewards
    }

    /// Successor distribution `P_{as}`.
    pub fn row(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.transitions.slice(ndarray::s![a, s, ..])
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[[s, a]]
    }

    pub fn with_initial_state(mut self, initial_state: usize) -> Result<Self> {
        check_index("state", initial_state, self.n_states())?;
        self.initial_state = initial_state;
        Ok(self)
    }

    /// Checks every model invariant, reporting the first violation with its
    /// indices.
    pub fn validate(&self) -> Result<()> {
        let shape = self.transitions.shape();
        let (n_actions, n_states) = (shape[0], shape[1]);
        if n_actions == 0 || n_states == 0 {
            return Err(Error::InvalidMdp(
                "n_states and n_actions must be positive".into(),
            ));
        }
        if shape[2] != n_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has shape {shape:?}; expected (A, S, S)"
            )));
        }
        if self.rewards.dim() != (n_states, n_actions) {
            return Err(Error::InvalidMdp(format!(
                "reward matrix has shape {:?}; expected ({n_states}, {n_actions})",
                self.rewards.dim()
            )));
        }
        for a in 0..n_actions {
            for s in 0..n_states {
                let row = self.row(s, a);
                if let Some((s2, p)) = row
                    .iter()
                    .enumerate()
                    .find(|(_, p)| !p.is_finite() || **p < 0.0)
                {
                    return Err(Error::InvalidMdp(format!(
                        "transition (a={a},s={s},s'={s2}) has invalid probability {p}"
                    )));
                }
                let sum = row.sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "row (a={a},s={s}) sums to {sum}"
                    )));
                }
            }
        }
        for ((s, a), r) in self.rewards.indexed_iter() {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::InvalidMdp(format!(
                    "reward out of [0,1] at (s={s},a={a}): {r}"
                )));
            }
        }
        if self.initial_state >= n_states {
            return Err(Error::InvalidMdp(format!(
                "initial_state {} >= n_states {n_states}",
                self.initial_state
            )));
        }
        Ok(())
    }

    /// Samples `(next_state, reward)` for taking `a` in `s`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<(usize, f64)> {
        check_index("state", s, self.n_states())?;
        check_index("action", a, self.n_actions())?;
        let next = sample_categorical(self.row(s, a), rng);
        Ok((next, self.rewards[[s, a]]))
    }

    /// True iff the support graph (edge `s -> s'` whenever some action reaches
    /// `s'` with positive probability) is strongly connected. Communicating
    /// MDPs are in particular weakly communicating.
    pub fn check_communicating(&self) -> bool {
        let n = self.n_states();
        let mut forward = vec![Vec::new(); n];
        let mut backward = vec![Vec::new(); n];
        for s in 0..n {
            for s2 in 0..n {
                if (0..self.n_actions()).any(|a| self.transitions[[a, s, s2]] > 0.0) {
                    forward[s].push(s2);
                    backward[s2].push(s);
                }
            }
        }
        reaches_all(&forward) && reaches_all(&backward)
    }

    /// `P_pi[s, s'] = sum_a pi(a|s) P_a[s, s']`.
    pub fn policy_transition_matrix(&self, policy: &Policy) -> Result<Array2<f64>> {
        self.check_policy_dims(policy)?;
        let n = self.n_states();
        let mut out = Array2::zeros((n, n));
        for s in 0..n {
            for (a, &w) in policy.probs.row(s).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                out.row_mut(s).scaled_add(w, &self.row(s, a));
            }
        }
        Ok(out)
    }

    /// `r_pi[s] = sum_a pi(a|s) r(s, a)`.
    pub fn policy_reward_vector(&self, policy: &Policy) -> Result<Array1<f64>> {
        self.check_policy_dims(policy)?;
        Ok(Array1::from_iter((0..self.n_states()).map(|s| {
            policy
                .probs
                .row(s)
                .iter()
                .zip(self.rewards.row(s))
                .map(|(w, r)| w * r)
                .sum::<f64>()
        })))
    }

    fn check_policy_dims(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states() {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: self.n_states(),
                found: policy.n_states(),
            });
        }
        if policy.n_actions() != self.n_actions() {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: self.n_actions(),
                found: policy.n_actions(),
            });
        }
        Ok(())
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            n_states: self.n_states(),
            n_actions: self.n_actions(),
            initial_state: self.initial_state,
            transitions: self.transitions.iter().copied().collect(),
            rewards: self.rewards.iter().copied().collect(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let (s, a) = (doc.n_states, doc.n_actions);
        let transitions =
            Array3::from_shape_vec((a, s, s), doc.transitions.clone()).map_err(|_| {
                Error::DimensionMismatch {
                    what: "flattened transitions",
                    expected: a * s * s,
                    found: doc.transitions.len(),
                }
            })?;
        let rewards = Array2::from_shape_vec((s, a), doc.rewards.clone()).map_err(|_| {
            Error::DimensionMismatch {
                what: "flattened rewards",
                expected: s * a,
                found: doc.rewards.len(),
            }
        })?;
        Self::new(transitions, rewards, doc.initial_state)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

/// On-disk form of a [`TabularMdp`]. `transitions` is row-major over
/// `(a, s, s')`, `rewards` row-major over `(s, a)`. Floats are written in
/// shortest round-trip form, so reading back is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub initial_state: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
}

/// A stationary stochastic policy `pi(a|s)`, stored as an `(S, A)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::InvalidPolicy("empty probability matrix".into()));
        }
        for (s, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "row s={s} has a negative entry"
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPolicy(format!("row s={s} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            check_index("action", a, n_actions)?;
            probs[[s, a]] = 1.0;
        }
        Self::new(probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn action_probs(&self, s: usize) -> ArrayView1<'_, f64> {
        self.probs.row(s)
    }

    /// The chosen action per state if every row is one-hot.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| row.iter().position(|&p| p == 1.0))
            .collect()
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<usize> {
        check_index("state", s, self.n_states())?;
        let row = self.probs.row(s);
        // One-hot rows need no randomness.
        if let Some(a) = row.iter().position(|&p| p == 1.0) {
            return Ok(a);
        }
        Ok(sample_categorical(row, rng))
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair below one.
    last_positive
}

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, bound })
    }
}

fn reaches_all(adjacency: &[Vec<usize>]) -> bool {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}
