//! Generative-model access and the geometric-horizon Monte Carlo estimators.
//!
//! Randomness is organised as a tree of labelled streams: every estimator
//! call, and every trajectory inside it, owns a child stream derived from the
//! run seed and its position in the computation. Results therefore do not
//! depend on the order in which parallel workers execute.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{FeatureMap, Mdp, Policy, RewardTable};

/// Concrete generator behind every stream.
pub type SampleRng = ChaCha8Rng;

/// Deterministic, hierarchically labelled random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: u64,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            key: mix(seed ^ 0x5851_f42d_4c95_7f2d),
        }
    }

    /// Independent child stream identified by `label`.
    pub fn child(&self, label: u64) -> Self {
        RngStream {
            key: mix(self.key.rotate_left(17) ^ mix(label.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    pub fn rng(&self) -> SampleRng {
        let mut seed = [0u8; 32];
        let mut z = self.key;
        for chunk in seed.chunks_mut(8) {
            z = mix(z.wrapping_add(0x9e37_79b9_7f4a_7c15));
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        SampleRng::from_seed(seed)
    }
}

/// Simulator access: initial states and next states from arbitrary pairs.
///
/// This is the only view of the environment the learning algorithm gets.
pub trait GenerativeModel: Sync {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn temperature(&self) -> f64;
    /// Draws `s0 ~ ν0`.
    fn sample_initial(&self, rng: &mut SampleRng) -> usize;
    /// Draws `s' ~ P(·|s,a)`.
    fn sample_next(&self, s: usize, a: usize, rng: &mut SampleRng) -> usize;
    /// Cumulative number of draws served so far.
    fn samples_drawn(&self) -> u64;
}

/// [`GenerativeModel`] backed by a known [`Mdp`].
#[derive(Debug)]
pub struct Simulator<'a> {
    mdp: &'a Mdp,
    drawn: AtomicU64,
}

impl<'a> Simulator<'a> {
    pub fn new(mdp: &'a Mdp) -> Self {
        Simulator {
            mdp,
            drawn: AtomicU64::new(0),
        }
    }
}

impl GenerativeModel for Simulator<'_> {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn discount(&self) -> f64 {
        self.mdp.discount()
    }

    fn temperature(&self) -> f64 {
        self.mdp.temperature()
    }

    fn sample_initial(&self, rng: &mut SampleRng) -> usize {
        self.drawn.fetch_add(1, Ordering::Relaxed);
        sample_index(self.mdp.initial_dist(), rng.gen())
    }

    fn sample_next(&self, s: usize, a: usize, rng: &mut SampleRng) -> usize {
        self.drawn.fetch_add(1, Ordering::Relaxed);
        sample_index(self.mdp.transition_row(s, a), rng.gen())
    }

    fn samples_drawn(&self) -> u64 {
        self.drawn.load(Ordering::Relaxed)
    }
}

/// Inverse-CDF draw from a probability vector given `u ∈ [0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn sample_action(pi: &Policy, s: usize, rng: &mut SampleRng) -> usize {
    sample_index(pi.row(s), rng.gen())
}

/// `H ~ Geom(1−γ)` on `{0, 1, 2, ...}`, so `Pr(H = k) = γ^k (1−γ)`.
///
/// Inverse CDF on a single uniform `u`: `H = 0` exactly when `u < 1 − γ`.
pub fn sample_geometric_horizon<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> u64 {
    let u: f64 = rng.gen();
    ((1.0 - u).ln() / gamma.ln()).floor() as u64
}

/// How a rollout begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Fixed first pair `(s, a)`; the policy takes over from the successor state.
    Pair(usize, usize),
    /// `s0 ~ ν0`, `a0 ~ π(·|s0)`.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    pub start: Start,
    /// Draws taken from the generative model to produce this trajectory.
    pub samples: u64,
}

/// Rolls `π` forward with `horizon` policy transitions after the start.
///
/// `Start::Pair(s, a)` yields `horizon + 2` pairs: `(s, a)` followed by the
/// `horizon + 1` pairs `(s'_0, a'_0), ..., (s'_H, a'_H)` with `s'_0 ~ P(·|s,a)`.
/// `Start::Initial` yields the `horizon + 1` pairs `(s_0, a_0), ..., (s_H, a_H)`.
pub fn rollout<M: GenerativeModel + ?Sized>(
    model: &M,
    pi: &Policy,
    start: Start,
    horizon: u64,
    rng: &mut SampleRng,
) -> Trajectory {
    let mut steps = Vec::with_capacity(horizon as usize + 2);
    let mut samples = 0;
    let (mut s, mut a) = match start {
        Start::Pair(s, a) => {
            steps.push((s, a));
            let next = model.sample_next(s, a, rng);
            samples += 1;
            (next, sample_action(pi, next, rng))
        }
        Start::Initial => {
            let s0 = model.sample_initial(rng);
            samples += 1;
            (s0, sample_action(pi, s0, rng))
        }
    };
    steps.push((s, a));
    for _ in 0..horizon {
        s = model.sample_next(s, a, rng);
        a = sample_action(pi, s, rng);
        samples += 1;
        steps.push((s, a));
    }
    Trajectory {
        steps,
        start,
        samples,
    }
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    Ok(())
}

pub(crate) fn capped(h: u64, cap: Option<u64>) -> u64 {
    cap.map_or(h, |c| h.min(c))
}

/// Batch-mean estimate of `Q^π_r(s,a)` and the number of model draws used.
///
/// Each trajectory draws `s'_0 ~ P(·|s,a)` and `H ~ Geom(1−γ)`, then sums
/// `r + τ H(π(·|s'))` over the `H + 1` visited pairs. The sum is unbiased for
/// `V^π(s'_0)`, so `r(s,a) + γ · sum` is unbiased for `Q^π_r(s,a)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn q_estimate<M: GenerativeModel + ?Sized>(
    model: &M,
    s: usize,
    a: usize,
    pi: &Policy,
    entropies: &[f64],
    r: &RewardTable,
    batch: usize,
    horizon_cap: Option<u64>,
    stream: &RngStream,
) -> (f64, u64) {
    let gamma = model.discount();
    let tau = model.temperature();
    let mut total = 0.0;
    let mut samples = 0;
    for i in 0..batch {
        let mut rng = stream.child(i as u64).rng();
        let horizon = capped(sample_geometric_horizon(&mut rng, gamma), horizon_cap);
        let mut state = model.sample_next(s, a, &mut rng);
        let mut action = sample_action(pi, state, &mut rng);
        let mut acc = r.get(state, action) + tau * entropies[state];
        for _ in 0..horizon {
            state = model.sample_next(state, action, &mut rng);
            action = sample_action(pi, state, &mut rng);
            acc += r.get(state, action) + tau * entropies[state];
        }
        samples += horizon + 1;
        total += acc;
    }
    (r.get(s, a) + gamma * total / batch as f64, samples)
}

/// Unbiased estimate `Q̂^π_r(s,a)` from `batch` geometric-horizon rollouts.
#[allow(clippy::too_many_arguments)]
pub fn est_q<M: GenerativeModel + ?Sized>(
    model: &M,
    s: usize,
    a: usize,
    pi: &Policy,
    r: &RewardTable,
    batch: usize,
    stream: &RngStream,
) -> Result<f64> {
    check_batch(batch)?;
    pi.check_shape(model.n_states(), model.n_actions())?;
    r.check_shape(model.n_states(), model.n_actions())?;
    if s >= model.n_states() || a >= model.n_actions() {
        return Err(Error::invalid(format!("pair ({s}, {a}) out of range")));
    }
    let entropies = pi.state_entropies();
    Ok(q_estimate(model, s, a, pi, &entropies, r, batch, None, stream).0)
}

/// Batch-mean estimate of `σ^π` and the number of model draws used.
pub(crate) fn sigma_estimate<M: GenerativeModel + ?Sized>(
    model: &M,
    pi: &Policy,
    phi: &FeatureMap,
    batch: usize,
    horizon_cap: Option<u64>,
    stream: &RngStream,
) -> (Vec<f64>, u64) {
    let gamma = model.discount();
    let mut sigma = vec![0.0; phi.k()];
    let mut samples = 0;
    let add = |acc: &mut [f64], s: usize, a: usize| {
        for (x, f) in acc.iter_mut().zip(phi.phi(s, a)) {
            *x += f;
        }
    };
    for i in 0..batch {
        let mut rng = stream.child(i as u64).rng();
        let horizon = capped(sample_geometric_horizon(&mut rng, gamma), horizon_cap);
        let mut state = model.sample_initial(&mut rng);
        let mut action = sample_action(pi, state, &mut rng);
        add(&mut sigma, state, action);
        for _ in 0..horizon {
            state = model.sample_next(state, action, &mut rng);
            action = sample_action(pi, state, &mut rng);
            add(&mut sigma, state, action);
        }
        samples += horizon + 1;
    }
    sigma.iter_mut().for_each(|x| *x /= batch as f64);
    (sigma, samples)
}

/// Unbiased estimate `σ̂^π = (1/B) Σ_i Σ_{h=0}^{H_i} φ(s_h, a_h)` with `s_0 ~ ν0`.
pub fn est_sigma<M: GenerativeModel + ?Sized>(
    model: &M,
    pi: &Policy,
    phi: &FeatureMap,
    batch: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    check_batch(batch)?;
    pi.check_shape(model.n_states(), model.n_actions())?;
    phi.check_shape(model.n_states(), model.n_actions())?;
    Ok(sigma_estimate(model, pi, phi, batch, None, stream).0)
}

/// `N` expert trajectories of exactly `H` pairs each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertDataset {
    pub trajectories: Vec<Vec<(usize, usize)>>,
    pub horizon: usize,
    pub seed: Option<u64>,
}

impl ExpertDataset {
    pub fn new(trajectories: Vec<Vec<(usize, usize)>>, horizon: usize, seed: Option<u64>) -> Result<Self> {
        if trajectories.is_empty() || horizon == 0 {
            return Err(Error::invalid("expert dataset needs N >= 1 and H >= 1"));
        }
        if let Some(i) = trajectories.iter().position(|t| t.len() != horizon) {
            return Err(Error::invalid(format!(
                "trajectory {i} has length {}, expected {horizon}",
                trajectories[i].len()
            )));
        }
        Ok(ExpertDataset {
            trajectories,
            horizon,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }
}

/// Samples `n` trajectories of `horizon` pairs from `π^E`, starting at `s0 ~ ν0`.
pub fn generate_expert_dataset<M: GenerativeModel + ?Sized>(
    model: &M,
    pi_e: &Policy,
    n: usize,
    horizon: usize,
    stream: &RngStream,
) -> Result<ExpertDataset> {
    if n == 0 || horizon == 0 {
        return Err(Error::invalid("expert dataset needs N >= 1 and H >= 1"));
    }
    pi_e.check_shape(model.n_states(), model.n_actions())?;
    let trajectories = (0..n)
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            rollout(model, pi_e, Start::Initial, horizon as u64 - 1, &mut rng).steps
        })
        .collect();
    ExpertDataset::new(trajectories, horizon, None)
}

/// `σ̂^E = (1/N) Σ_i Σ_{h<H} γ^h φ(s_h^i, a_h^i)`.
pub fn empirical_expert_features(d: &ExpertDataset, phi: &FeatureMap, gamma: f64) -> Result<Vec<f64>> {
    let mut sigma = vec![0.0; phi.k()];
    for traj in &d.trajectories {
        let mut weight = 1.0;
        for &(s, a) in traj {
            if s >= phi.n_states() || a >= phi.n_actions() {
                return Err(Error::invalid(format!("dataset pair ({s}, {a}) out of range")));
            }
            for (x, f) in sigma.iter_mut().zip(phi.phi(s, a)) {
                *x += weight * f;
            }
            weight *= gamma;
        }
    }
    let n = d.n() as f64;
    sigma.iter_mut().for_each(|x| *x /= n);
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::mock::StepRng;

    fn one_state() -> Mdp {
        Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0], 0.9, 1.0).unwrap()
    }

    // Deterministic 3-state chain: action 0 stays, action 1 moves right (wrapping).
    fn chain() -> Mdp {
        let mut t = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            t[(s * 2) * 3 + s] = 1.0;
            t[(s * 2 + 1) * 3 + (s + 1) % 3] = 1.0;
        }
        Mdp::new(3, 2, t, vec![1.0, 0.0, 0.0], 0.5, 1.0).unwrap()
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let root = RngStream::new(7);
        assert_eq!(root.child(3), RngStream::new(7).child(3));
        assert_ne!(root.child(3), root.child(4));
        assert_ne!(root.child(1).child(2), root.child(2).child(1));
        let a: Vec<u64> = (0..4).map(|_| root.rng().gen()).collect();
        let b: Vec<u64> = (0..4).map(|_| root.rng().gen()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn small_first_uniform_gives_zero_horizon() {
        let mut stub = StepRng::new(0, 0);
        assert_eq!(sample_geometric_horizon(&mut stub, 0.9), 0);
        let mut rng = RngStream::new(1).rng();
        for _ in 0..100 {
            let h = sample_geometric_horizon(&mut rng, 0.999_999);
            assert!(h < u64::MAX);
        }
    }

    #[test]
    fn sample_index_respects_support() {
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.999_999), 1);
        assert_eq!(sample_index(&[0.25, 0.75], 0.3), 1);
        // rounding shortfall falls back to the last supported index
        assert_eq!(sample_index(&[0.5, 0.5 - 1e-15, 0.0], 1.0 - 1e-16), 1);
    }

    #[test]
    fn rollout_shapes() {
        let m = one_state();
        let sim = Simulator::new(&m);
        let mut rng = RngStream::new(0).rng();
        let t = rollout(&sim, &Policy::uniform(1, 2), Start::Initial, 3, &mut rng);
        assert_eq!(t.steps.len(), 4);
        assert!(t.steps.iter().all(|&(s, _)| s == 0));
        assert_eq!(t.samples, 4);
        let t = rollout(&sim, &Policy::uniform(1, 2), Start::Pair(0, 1), 3, &mut rng);
        assert_eq!(t.steps.len(), 5);
        assert_eq!(t.steps[0], (0, 1));
        assert_eq!(t.samples, 4);
        assert_eq!(sim.samples_drawn(), 8);
    }

    #[test]
    fn deterministic_rollout_is_unique_path() {
        let m = chain();
        let sim = Simulator::new(&m);
        let pi = Policy::deterministic(2, &[1, 1, 1]).unwrap();
        for seed in 0..5 {
            let mut rng = RngStream::new(seed).rng();
            let t = rollout(&sim, &pi, Start::Initial, 4, &mut rng);
            assert_eq!(t.steps, vec![(0, 1), (1, 1), (2, 1), (0, 1), (1, 1)]);
        }
    }

    #[test]
    fn est_q_zero_reward_deterministic_policy_is_zero() {
        let m = chain();
        let sim = Simulator::new(&m);
        let pi = Policy::deterministic(2, &[0, 1, 0]).unwrap();
        let r = RewardTable::constant(3, 2, 0.0);
        for s in 0..3 {
            let q = est_q(&sim, s, 1, &pi, &r, 5, &RngStream::new(s as u64)).unwrap();
            assert_eq!(q, 0.0);
        }
    }

    #[test]
    fn est_q_single_draw_unwinds() {
        // find a stream whose first trajectory has H = 0
        let m = chain();
        let sim = Simulator::new(&m);
        let pi = Policy::new(3, 2, vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5]).unwrap();
        let r = RewardTable::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let stream = (0..)
            .map(RngStream::new)
            .find(|st| sample_geometric_horizon(&mut st.child(0).rng(), 0.5) == 0)
            .unwrap();
        // replay the draws: horizon, next state (deterministic), action
        let mut rng = stream.child(0).rng();
        let _ = sample_geometric_horizon(&mut rng, 0.5);
        let s1 = sim.sample_next(0, 1, &mut rng);
        let a1 = sample_action(&pi, s1, &mut rng);
        let expected = r.get(0, 1) + 0.5 * (r.get(s1, a1) + crate::mdp::entropy_of(pi.row(s1)));
        let q = est_q(&sim, 0, 1, &pi, &r, 1, &stream).unwrap();
        assert_eq!(s1, 1);
        assert!((q - expected).abs() < 1e-15);
    }

    #[test]
    fn est_sigma_zero_features_is_zero() {
        let m = chain();
        let sim = Simulator::new(&m);
        let phi = FeatureMap::new(3, 2, 2, vec![0.0; 12]).unwrap();
        let sigma = est_sigma(&sim, &Policy::uniform(3, 2), &phi, 4, &RngStream::new(2)).unwrap();
        assert_eq!(sigma, vec![0.0, 0.0]);
    }

    #[test]
    fn horizon_cap_bounds_length() {
        let m = one_state();
        let sim = Simulator::new(&m);
        let phi = FeatureMap::constant(1, 2);
        let (sigma, samples) = sigma_estimate(&sim, &Policy::uniform(1, 2), &phi, 50, Some(2), &RngStream::new(3));
        assert!(sigma[0] <= 3.0);
        assert!(samples <= 150);
    }

    #[test]
    fn bad_batch_rejected() {
        let m = one_state();
        let sim = Simulator::new(&m);
        let r = RewardTable::constant(1, 2, 0.0);
        assert!(est_q(&sim, 0, 0, &Policy::uniform(1, 2), &r, 0, &RngStream::new(0)).is_err());
    }

    #[test]
    fn dataset_shape_and_features() {
        let m = chain();
        let sim = Simulator::new(&m);
        let pi = Policy::deterministic(2, &[1, 1, 1]).unwrap();
        let d = generate_expert_dataset(&sim, &pi, 2, 3, &RngStream::new(5)).unwrap();
        assert_eq!(d.n(), 2);
        assert!(d.trajectories.iter().all(|t| t.len() == 3));
        assert_eq!(d.trajectories[0], d.trajectories[1]);

        let single = ExpertDataset::new(vec![vec![(0, 0), (0, 1)]], 2, None).unwrap();
        let phi = FeatureMap::constant(3, 2);
        assert_eq!(empirical_expert_features(&single, &phi, 0.5).unwrap(), vec![1.5]);
        let doubled = ExpertDataset::new(vec![vec![(0, 0), (0, 1)]; 4], 2, None).unwrap();
        assert_eq!(empirical_expert_features(&doubled, &phi, 0.5).unwrap(), vec![1.5]);
    }

    #[test]
    fn ragged_dataset_rejected() {
        assert!(ExpertDataset::new(vec![vec![(0, 0)], vec![(0, 0), (0, 0)]], 1, None).is_err());
    }
}
