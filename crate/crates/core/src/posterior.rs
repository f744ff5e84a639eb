//! Transition counts, the conjugate Dirichlet posterior over transition
//! probabilities, empirical models, and L1 confidence sets.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_index, TabularMdp};

/// Visit counts plus an independent Dirichlet prior per state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    /// `N_t(s, a)`.
    visit_counts: Array2<u64>,
    /// Indexed `(s, a, s')`.
    transition_counts: Array3<u64>,
    /// Dirichlet pseudo-counts, indexed `(s, a, s')`.
    prior_alpha: Array3<f64>,
    total_steps: u64,
}

impl PosteriorState {
    /// Symmetric prior with pseudo-count `alpha` on every successor.
    pub fn new(n_states: usize, n_actions: usize, alpha: f64) -> Result<Self> {
        Self::with_prior(Array3::from_elem((n_states, n_actions, n_states), alpha))
    }

    pub fn with_prior(prior_alpha: Array3<f64>) -> Result<Self> {
        let (s, a, s2) = prior_alpha.dim();
        if s == 0 || a == 0 || s2 != s {
            return Err(Error::InvalidParameter(format!(
                "prior shape {:?} is not (S, A, S)",
                prior_alpha.dim()
            )));
        }
        if prior_alpha.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter(
                "prior pseudo-counts must be positive and finite".into(),
            ));
        }
        Ok(Self {
            visit_counts: Array2::zeros((s, a)),
            transition_counts: Array3::zeros((s, a, s)),
            prior_alpha,
            total_steps: 0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.visit_counts.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.visit_counts.ncols()
    }

    pub fn visit_counts(&self) -> &Array2<u64> {
        &self.visit_counts
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visit_counts[[s, a]]
    }

    pub fn transition_counts(&self) -> &Array3<u64> {
        &self.transition_counts
    }

    pub fn prior_alpha(&self) -> &Array3<f64> {
        &self.prior_alpha
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Records one observed transition.
    pub fn update(&mut self, s: usize, a: usize, s_next: usize) -> Result<()> {
        check_index("state", s, self.n_states())?;
        check_index("action", a, self.n_actions())?;
        check_index("next state", s_next, self.n_states())?;
        self.transition_counts[[s, a, s_next]] += 1;
        self.visit_counts[[s, a]] += 1;
        self.total_steps += 1;
        Ok(())
    }

    /// Draws an environment from the posterior: every row independently from
    /// `Dirichlet(alpha + counts)`, with the known reward matrix.
    pub fn sample_mdp<R: Rng + ?Sized>(
        &self,
        rewards: &Array2<f64>,
        rng: &mut R,
    ) -> Result<TabularMdp> {
        self.check_rewards(rewards)?;
        let (n_s, n_a) = (self.n_states(), self.n_actions());
        let mut transitions = Array3::zeros((n_a, n_s, n_s));
        for s in 0..n_s {
            for a in 0..n_a {
                let concentration = Array1::from_iter((0..n_s).map(|s2| {
                    self.prior_alpha[[s, a, s2]] + self.transition_counts[[s, a, s2]] as f64
                }));
                let row = sample_dirichlet(&concentration, rng);
                transitions.slice_mut(ndarray::s![a, s, ..]).assign(&row);
            }
        }
        TabularMdp::new(transitions, rewards.clone(), 0)
    }

    /// Count-ratio model. Unvisited pairs get a one-hot row at a uniformly
    /// drawn successor.
    pub fn empirical_mdp<R: Rng + ?Sized>(
        &self,
        rewards: &Array2<f64>,
        rng: &mut R,
    ) -> Result<TabularMdp> {
        self.check_rewards(rewards)?;
        let (n_s, n_a) = (self.n_states(), self.n_actions());
        let mut transitions = Array3::zeros((n_a, n_s, n_s));
        for s in 0..n_s {
            for a in 0..n_a {
                let n = self.visit_counts[[s, a]];
                if n == 0 {
                    transitions[[a, s, rng.random_range(0..n_s)]] = 1.0;
                } else {
                    for s2 in 0..n_s {
                        transitions[[a, s, s2]] =
                            self.transition_counts[[s, a, s2]] as f64 / n as f64;
                    }
                }
            }
        }
        TabularMdp::new(transitions, rewards.clone(), 0)
    }

    /// `beta(s, a) = sqrt(14 S ln(2 S A K t_k) / max(N(s, a), 1))`.
    pub fn confidence_radius(&self, s: usize, a: usize, big_k: u64, t_k: u64) -> f64 {
        confidence_radius(
            self.n_states(),
            self.n_actions(),
            self.visit_counts[[s, a]],
            big_k,
            t_k,
        )
    }

    fn check_rewards(&self, rewards: &Array2<f64>) -> Result<()> {
        if rewards.dim() != (self.n_states(), self.n_actions()) {
            return Err(Error::DimensionMismatch {
                what: "reward matrix",
                expected: self.n_states() * self.n_actions(),
                found: rewards.len(),
            });
        }
        Ok(())
    }
}

pub fn confidence_radius(
    n_states: usize,
    n_actions: usize,
    visits: u64,
    big_k: u64,
    t_k: u64,
) -> f64 {
    let s = n_states as f64;
    let log_term = (2.0 * s * n_actions as f64 * big_k as f64 * t_k as f64).ln();
    (14.0 * s * log_term / visits.max(1) as f64).sqrt()
}

/// Planned-horizon episode count `ceil((1 - gamma) T) + 1`, used as `K`
/// inside the confidence radius while a run is still in progress.
pub fn planned_episode_count(gamma: f64, horizon: u64) -> u64 {
    // Absorb rounding in 1 - gamma, e.g. (1 - 0.99) * 1e4 = 100.00000000000009.
    let expected = (1.0 - gamma) * horizon as f64;
    (expected - 1e-9).ceil().max(0.0) as u64 + 1
}

/// Normalised Gamma variates. A row whose variates all underflow falls back
/// to a one-hot vector at a uniform index.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &Array1<f64>, rng: &mut R) -> Array1<f64> {
    let mut row = concentration.mapv(|alpha| {
        Gamma::new(alpha, 1.0)
            .expect("concentration is positive")
            .sample(rng)
    });
    let total = row.sum();
    if total > 0.0 && total.is_finite() {
        row /= total;
    } else {
        row.fill(0.0);
        row[rng.random_range(0..concentration.len())] = 1.0;
    }
    row
}

/// The L1 ball `M_k` around an empirical model at the start of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    /// `beta_k(s, a)`, indexed `(s, a)`.
    pub radii: Array2<f64>,
    pub center: TabularMdp,
    pub k: u64,
    pub t_k: u64,
    pub big_k: u64,
}

impl ConfidenceSet {
    pub fn build<R: Rng + ?Sized>(
        posterior: &PosteriorState,
        rewards: &Array2<f64>,
        k: u64,
        t_k: u64,
        big_k: u64,
        rng: &mut R,
    ) -> Result<Self> {
        if big_k == 0 || t_k == 0 {
            return Err(Error::InvalidParameter(
                "K and t_k must be at least 1".into(),
            ));
        }
        let center = posterior.empirical_mdp(rewards, rng)?;
        let radii =
            Array2::from_shape_fn((posterior.n_states(), posterior.n_actions()), |(s, a)| {
                posterior.confidence_radius(s, a, big_k, t_k)
            });
        Ok(Self {
            radii,
            center,
            k,
            t_k,
            big_k,
        })
    }

    /// L1 deviation `||P_as - P_hat_as||_1` of every row, indexed `(s, a)`.
    pub fn deviations(&self, candidate: &TabularMdp) -> Result<Array2<f64>> {
        let (n_s, n_a) = (self.center.n_states(), self.center.n_actions());
        if candidate.n_states() != n_s {
            return Err(Error::DimensionMismatch {
                what: "candidate states",
                expected: n_s,
                found: candidate.n_states(),
            });
        }
        if candidate.n_actions() != n_a {
            return Err(Error::DimensionMismatch {
                what: "candidate actions",
                expected: n_a,
                found: candidate.n_actions(),
            });
        }
        Ok(Array2::from_shape_fn((n_s, n_a), |(s, a)| {
            candidate
                .row(s, a)
                .iter()
                .zip(self.center.row(s, a))
                .map(|(p, q)| (p - q).abs())
                .sum()
        }))
    }

    pub fn contains(&self, candidate: &TabularMdp) -> Result<bool> {
        let dev = self.deviations(candidate)?;
        Ok(dev.iter().zip(&self.radii).all(|(d, beta)| d <= beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rewards(n_s: usize, n_a: usize) -> Array2<f64> {
        Array2::from_elem((n_s, n_a), 0.5)
    }

    #[test]
    fn single_update_counts_one_visit() {
        let mut post = PosteriorState::new(3, 2, 1.0).unwrap();
        post.update(1, 0, 2).unwrap();
        assert_eq!(post.visits(1, 0), 1);
        assert_eq!(post.transition_counts()[[1, 0, 2]], 1);
        assert_eq!(post.total_steps(), 1);
    }

    #[test]
    fn repeated_updates_touch_one_triple() {
        let mut post = PosteriorState::new(3, 2, 1.0).unwrap();
        for _ in 0..100 {
            post.update(2, 1, 0).unwrap();
        }
        assert_eq!(post.transition_counts()[[2, 1, 0]], 100);
        assert_eq!(post.transition_counts().sum(), 100);
        assert_eq!(post.visit_counts().sum(), 100);
    }

    #[test]
    fn update_rejects_bad_indices() {
        let mut post = PosteriorState::new(2, 2, 1.0).unwrap();
        assert!(post.update(2, 0, 0).is_err());
        assert!(post.update(0, 2, 0).is_err());
        assert!(post.update(0, 0, 2).is_err());
        assert_eq!(post.total_steps(), 0);
    }

    #[test]
    fn prior_must_be_positive() {
        assert!(PosteriorState::new(2, 2, 0.0).is_err());
        assert!(PosteriorState::new(2, 2, f64::NAN).is_err());
    }

    #[test]
    fn flat_prior_marginals_are_uniform() {
        let n = 4;
        let post = PosteriorState::new(n, 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut sum = Array1::<f64>::zeros(n);
        let mut sum_sq = Array1::<f64>::zeros(n);
        for _ in 0..draws {
            let mdp = post.sample_mdp(&rewards(n, 1), &mut rng).unwrap();
            let row = mdp.row(0, 0);
            sum += &row;
            sum_sq += &row.mapv(|x| x * x);
        }
        for i in 0..n {
            let mean = sum[i] / draws as f64;
            let var = sum_sq[i] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!(
                (mean - 0.25).abs() <= 3.0 * se,
                "entry {i}: {mean} (se {se})"
            );
        }
    }

    #[test]
    fn heavy_counts_concentrate_samples() {
        let n = 3;
        let mut post = PosteriorState::new(n, 1, 1.0).unwrap();
        post.transition_counts[[0, 0, 0]] = 1_000_000;
        post.visit_counts[[0, 0]] = 1_000_000;
        post.total_steps = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 2000;
        let close = (0..trials)
            .filter(|_| {
                let mdp = post.sample_mdp(&rewards(n, 1), &mut rng).unwrap();
                (mdp.row(0, 0)[0] - 1.0).abs() <= 1e-2
            })
            .count();
        assert!(close as f64 / trials as f64 >= 0.999);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut post = PosteriorState::new(3, 2, 1.0).unwrap();
        post.update(0, 1, 2).unwrap();
        let draw = |seed| {
            post.sample_mdp(&rewards(3, 2), &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn empirical_rows_are_count_ratios() {
        let mut post = PosteriorState::new(2, 1, 1.0).unwrap();
        for _ in 0..3 {
            post.update(0, 0, 0).unwrap();
        }
        post.update(0, 0, 1).unwrap();
        let mdp = post
            .empirical_mdp(&rewards(2, 1), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(mdp.row(0, 0).to_vec(), vec![0.75, 0.25]);
    }

    #[test]
    fn unvisited_pairs_get_a_one_hot_row() {
        let post = PosteriorState::new(5, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = post.empirical_mdp(&rewards(5, 2), &mut rng).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let row = mdp.row(s, a);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 4);
            }
        }
    }

    #[test]
    fn radius_at_first_step() {
        let post = PosteriorState::new(2, 2, 1.0).unwrap();
        let beta = post.confidence_radius(0, 0, 1, 1);
        assert_abs_diff_eq!(beta, (28.0 * 8f64.ln()).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(beta, 7.6305, epsilon = 1e-4);
    }

    #[test]
    fn radius_scaling_in_counts() {
        let b0 = confidence_radius(3, 2, 0, 10, 100);
        let b1 = confidence_radius(3, 2, 1, 10, 100);
        let b4 = confidence_radius(3, 2, 4, 10, 100);
        let b16 = confidence_radius(3, 2, 16, 10, 100);
        assert_eq!(b0, b1);
        assert_abs_diff_eq!(b4, b1 / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b16, b4 / 2.0, epsilon = 1e-14);
    }

    fn fixed_set(radius: f64) -> ConfidenceSet {
        let mut post = PosteriorState::new(2, 1, 1.0).unwrap();
        post.update(0, 0, 0).unwrap();
        post.update(1, 0, 1).unwrap();
        let mut set = ConfidenceSet::build(
            &post,
            &rewards(2, 1),
            1,
            2,
            1,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        set.radii.fill(radius);
        set
    }

    #[test]
    fn center_is_inside_its_own_set() {
        let set = fixed_set(0.0);
        assert!(set.contains(&set.center).unwrap());
    }

    #[test]
    fn radius_two_contains_everything() {
        let set = fixed_set(2.0);
        let far =
            TabularMdp::new(ndarray::arr3(&[[[0.0, 1.0], [1.0, 0.0]]]), rewards(2, 1), 0).unwrap();
        assert_abs_diff_eq!(set.deviations(&far).unwrap().sum(), 4.0);
        assert!(set.contains(&far).unwrap());
    }

    #[test]
    fn one_violating_row_excludes_candidate() {
        let mut set = fixed_set(2.0);
        set.radii[[1, 0]] = 0.1;
        let candidate =
            TabularMdp::new(ndarray::arr3(&[[[1.0, 0.0], [0.2, 0.8]]]), rewards(2, 1), 0).unwrap();
        // row (1, 0) deviates by 0.4 from (0, 1)
        assert!(!set.contains(&candidate).unwrap());
    }

    #[test]
    fn candidate_dimensions_are_checked() {
        let set = fixed_set(2.0);
        let other = TabularMdp::new(Array3::from_elem((1, 1, 1), 1.0), rewards(1, 1), 0).unwrap();
        assert!(matches!(
            set.contains(&other),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn planned_count_convention() {
        assert_eq!(planned_episode_count(0.99, 10_000), 101);
        assert_eq!(planned_episode_count(0.0, 10), 11);
    }
}
