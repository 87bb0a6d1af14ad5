//! Single-loop primal-dual IRL: stochastic soft policy iteration on the
//! policy, projected stochastic gradient descent on the reward weights.
//!
//! [`run_irl`] touches the environment only through [`GenerativeModel`].

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{l1_norm, linf_norm, reward_of, FeatureMap, Policy, RewardWeights};
use crate::sampling::{q_estimate, sigma_estimate, GenerativeModel, RngStream};

/// Euclidean projection of `v` onto `{y : ‖y‖₁ ≤ radius}`.
///
/// Sort-based soft thresholding: find `θ` with `Σ max(|v_i| − θ, 0) = radius`
/// and shrink every coordinate towards zero by `θ`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("projection radius must be positive and finite"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot project a vector with non-finite entries"));
    }
    if l1_norm(v) <= radius {
        return Ok(v.to_vec());
    }
    let theta = l1_threshold(v, radius);
    Ok(v.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect())
}

/// Shrinkage level of the L1-ball projection for a point outside the ball.
pub fn l1_threshold(v: &[f64], radius: f64) -> f64 {
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Soft policy iteration step `π(·|s) ∝ exp(Q̂(s,·)/τ)`.
pub fn policy_update(q_hat: &[f64], n_states: usize, n_actions: usize, tau: f64) -> Result<Policy> {
    Policy::softmax(n_states, n_actions, q_hat, tau)
}

/// `P_W(w − η (σ̂^π − σ̂^E))` on the unit L1 ball.
pub fn reward_step(w: &RewardWeights, sigma_pi_hat: &[f64], sigma_e_hat: &[f64], eta_w: f64) -> Result<RewardWeights> {
    Error::check_dim("policy feature estimate", w.dim(), sigma_pi_hat.len())?;
    Error::check_dim("expert feature estimate", w.dim(), sigma_e_hat.len())?;
    if !(eta_w > 0.0) {
        return Err(Error::invalid("reward stepsize must be positive"));
    }
    let moved: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(sigma_pi_hat.iter().zip(sigma_e_hat))
        .map(|(wi, (sp, se))| wi - eta_w * (sp - se))
        .collect();
    RewardWeights::new(project_l1_ball(&moved, 1.0)?)
}

/// Which constant the automatic reward stepsize uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepsizeRule {
    /// `(1−γ) / (√(kT) ‖φ‖∞)`.
    #[default]
    Theorem,
    /// `(1−γ) / (√(2kT) ‖φ‖∞)`, the constant that yields the `3√(2kT)` regret bound.
    Regret,
}

pub fn default_stepsize(k: usize, iterations: usize, gamma: f64, phi_sup: f64, rule: StepsizeRule) -> Result<f64> {
    if !(phi_sup > 0.0) {
        return Err(Error::invalid("feature sup-norm must be positive for the automatic stepsize"));
    }
    if k == 0 || iterations == 0 || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("stepsize needs k >= 1, T >= 1 and 0 < γ < 1"));
    }
    let scale = match rule {
        StepsizeRule::Theorem => (k * iterations) as f64,
        StepsizeRule::Regret => (2 * k * iterations) as f64,
    };
    Ok((1.0 - gamma) / (scale.sqrt() * phi_sup))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepsize {
    Auto(StepsizeRule),
    Fixed(f64),
}

impl Default for Stepsize {
    fn default() -> Self {
        Stepsize::Auto(StepsizeRule::Theorem)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub stepsize: Stepsize,
    pub seed: u64,
    /// Optional hard cap on sampled horizons. Off by default; biases the estimators when set.
    pub horizon_cap: Option<u64>,
    /// Policy snapshot cadence; `None` means every `⌈T/100⌉` iterations.
    pub snapshot_every: Option<usize>,
}

impl IrlConfig {
    pub fn new(iterations: usize, batch_size: usize, seed: u64) -> Self {
        IrlConfig {
            iterations,
            batch_size,
            stepsize: Stepsize::default(),
            seed,
            horizon_cap: None,
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration count T must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size B must be at least 1"));
        }
        if let Stepsize::Fixed(eta) = self.stepsize {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid("explicit reward stepsize must be positive"));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot cadence must be at least 1"));
        }
        Ok(())
    }

    pub fn snapshot_cadence(&self) -> usize {
        self.snapshot_every.unwrap_or_else(|| self.iterations.div_ceil(100)).max(1)
    }
}

/// Per-iteration record; `w` is the iterate `w^t` the gradient was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub w: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub grad_linf: f64,
    pub grad_l2_sq: f64,
    /// Generative-model draws used in this iteration.
    pub samples: u64,
    pub samples_total: u64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlTrace {
    pub records: Vec<IterationRecord>,
    /// `(t, π^t)` at the snapshot cadence.
    pub snapshots: Vec<(usize, Policy)>,
    pub eta_w: f64,
    pub gamma: f64,
    pub tau: f64,
    /// `w̄ = (1/T) Σ_{t<T} w^t`; `None` until the run completes.
    pub w_bar: Option<RewardWeights>,
    /// Last iterates `(w^T, π^T)`.
    pub final_w: Option<RewardWeights>,
    pub final_policy: Option<Policy>,
}

impl IrlTrace {
    pub fn samples_total(&self) -> u64 {
        self.records.last().map_or(0, |r| r.samples_total)
    }
}

/// A failed run together with the iterations completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("IRL run failed after {} iterations: {error}", partial.records.len())]
pub struct IrlFailure {
    #[source]
    pub error: Error,
    pub partial: Box<IrlTrace>,
}

// Stream labels below an iteration's stream.
const Q_STREAM: u64 = 0;
const SIGMA_STREAM: u64 = 1;

/// Runs the algorithm for `cfg.iterations` steps.
pub fn run_irl<M: GenerativeModel + ?Sized>(
    model: &M,
    phi: &FeatureMap,
    sigma_e_hat: &[f64],
    cfg: &IrlConfig,
) -> Result<IrlTrace, IrlFailure> {
    run_irl_observed(model, phi, sigma_e_hat, cfg, |_, _, _| {})
}

/// [`run_irl`] with a hook called as `observer(t, &w^t, &π^t)` before each update.
pub fn run_irl_observed<M, F>(
    model: &M,
    phi: &FeatureMap,
    sigma_e_hat: &[f64],
    cfg: &IrlConfig,
    mut observer: F,
) -> Result<IrlTrace, IrlFailure>
where
    M: GenerativeModel + ?Sized,
    F: FnMut(usize, &RewardWeights, &Policy),
{
    let (ns, na) = (model.n_states(), model.n_actions());
    let (gamma, tau) = (model.discount(), model.temperature());
    let mut trace = IrlTrace {
        records: Vec::with_capacity(cfg.iterations),
        snapshots: Vec::new(),
        eta_w: f64::NAN,
        gamma,
        tau,
        w_bar: None,
        final_w: None,
        final_policy: None,
    };
    let fail = |error: Error, trace: IrlTrace| IrlFailure {
        error,
        partial: Box::new(trace),
    };

    let setup = (|| -> Result<f64> {
        cfg.validate()?;
        phi.check_shape(ns, na)?;
        Error::check_dim("expert feature estimate", phi.k(), sigma_e_hat.len())?;
        match cfg.stepsize {
            Stepsize::Fixed(eta) => Ok(eta),
            Stepsize::Auto(rule) => default_stepsize(phi.k(), cfg.iterations, gamma, phi.sup_norm(), rule),
        }
    })();
    let eta_w = match setup {
        Ok(eta) => eta,
        Err(e) => return Err(fail(e, trace)),
    };
    trace.eta_w = eta_w;
    if let Some(cap) = cfg.horizon_cap {
        log::warn!("horizon cap {cap} is enabled: Monte Carlo estimates are biased");
    }

    let root = RngStream::new(cfg.seed);
    let cadence = cfg.snapshot_cadence();
    let mut w = RewardWeights::zeros(phi.k());
    let mut pi = Policy::uniform(ns, na);
    let mut w_sum = vec![0.0; phi.k()];
    let mut samples_total = 0u64;

    for t in 0..cfg.iterations {
        let started = Instant::now();
        observer(t, &w, &pi);
        if t % cadence == 0 {
            trace.snapshots.push((t, pi.clone()));
        }
        for (acc, x) in w_sum.iter_mut().zip(w.as_slice()) {
            *acc += x;
        }

        let step = (|| -> Result<(Vec<f64>, Vec<f64>, u64)> {
            let r = reward_of(&w, phi)?;
            let entropies = pi.state_entropies();
            let iter_stream = root.child(t as u64);
            let q_stream = iter_stream.child(Q_STREAM);
            let estimates: Vec<(f64, u64)> = (0..ns * na)
                .into_par_iter()
                .map(|j| {
                    q_estimate(
                        model,
                        j / na,
                        j % na,
                        &pi,
                        &entropies,
                        &r,
                        cfg.batch_size,
                        cfg.horizon_cap,
                        &q_stream.child(j as u64),
                    )
                })
                .collect();
            let (sigma_hat, sigma_samples) = sigma_estimate(
                model,
                &pi,
                phi,
                cfg.batch_size,
                cfg.horizon_cap,
                &iter_stream.child(SIGMA_STREAM),
            );
            let samples = estimates.iter().map(|e| e.1).sum::<u64>() + sigma_samples;
            let q_hat: Vec<f64> = estimates.into_iter().map(|e| e.0).collect();
            Ok((q_hat, sigma_hat, samples))
        })();
        let (q_hat, sigma_hat, samples) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };

        let grad: Vec<f64> = sigma_hat.iter().zip(sigma_e_hat).map(|(a, b)| a - b).collect();
        let next_pi = policy_update(&q_hat, ns, na, tau);
        let next_w = reward_step(&w, &sigma_hat, sigma_e_hat, eta_w);
        let (next_pi, next_w) = match (next_pi, next_w) {
            (Ok(p), Ok(w)) => (p, w),
            (Err(e), _) | (_, Err(e)) => return Err(fail(e, trace)),
        };

        samples_total += samples;
        trace.records.push(IterationRecord {
            t,
            w: w.as_slice().to_vec(),
            grad_linf: linf_norm(&grad),
            grad_l2_sq: grad.iter().map(|g| g * g).sum(),
            sigma_hat,
            samples,
            samples_total,
            wall_time: started.elapsed(),
        });
        pi = next_pi;
        w = next_w;
    }

    let t_count = cfg.iterations as f64;
    let averaged: Vec<f64> = w_sum.iter().map(|x| x / t_count).collect();
    match RewardWeights::new(averaged) {
        Ok(w_bar) => trace.w_bar = Some(w_bar),
        Err(e) => return Err(fail(e, trace)),
    }
    trace.final_w = Some(w);
    trace.final_policy = Some(pi);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Mdp, BALL_TOL};
    use crate::sampling::Simulator;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projection_examples() {
        assert_eq!(project_l1_ball(&[0.3, -0.2], 1.0).unwrap(), vec![0.3, -0.2]);
        assert_eq!(project_l1_ball(&[2.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        let p = project_l1_ball(&[0.8, 0.8], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
        let p = project_l1_ball(&[-3.0, 1.0, 0.5], 2.0).unwrap();
        assert_abs_diff_eq!(l1_norm(&p), 2.0, epsilon = 1e-12);
        assert!(p[0] < 0.0);
    }

    #[test]
    fn projection_rejects_bad_input() {
        assert!(project_l1_ball(&[f64::NAN], 1.0).is_err());
        assert!(project_l1_ball(&[1.0], 0.0).is_err());
    }

    #[test]
    fn policy_update_examples() {
        let pi = policy_update(&[2.0, 2.0], 1, 2, 0.5).unwrap();
        assert_eq!(pi.row(0), &[0.5, 0.5]);
        let tau = 0.7;
        let pi = policy_update(&[tau * 3f64.ln(), 0.0], 1, 2, tau).unwrap();
        assert_abs_diff_eq!(pi.prob(0, 0), 0.75, epsilon = 1e-15);
        let shifted = policy_update(&[tau * 3f64.ln() + 1000.0, 1000.0], 1, 2, tau).unwrap();
        for (a, b) in pi.probs().iter().zip(shifted.probs()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reward_step_examples() {
        let w = RewardWeights::new(vec![0.2, -0.1]).unwrap();
        assert_eq!(reward_step(&w, &[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), w);
        let w0 = RewardWeights::zeros(2);
        let w1 = reward_step(&w0, &[10.0, 0.0], &[0.0, 0.0], 0.01).unwrap();
        assert_abs_diff_eq!(w1.as_slice()[0], -0.1, epsilon = 1e-15);
        assert_eq!(w1.as_slice()[1], 0.0);
        let w2 = reward_step(&w0, &[-500.0, 300.0], &[0.0, 0.0], 1.0).unwrap();
        assert!(w2.l1_norm() <= 1.0 + BALL_TOL);
        assert!(reward_step(&w0, &[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn stepsize_examples() {
        let eta = default_stepsize(1, 100, 0.9, 1.0, StepsizeRule::Theorem).unwrap();
        assert_abs_diff_eq!(eta, 0.01, epsilon = 1e-15);
        let quad = default_stepsize(1, 400, 0.9, 1.0, StepsizeRule::Theorem).unwrap();
        assert_abs_diff_eq!(quad, eta / 2.0, epsilon = 1e-15);
        let eta = default_stepsize(4, 25, 0.5, 2.0, StepsizeRule::Theorem).unwrap();
        assert_abs_diff_eq!(eta, 0.025, epsilon = 1e-15);
        let regret = default_stepsize(4, 25, 0.5, 2.0, StepsizeRule::Regret).unwrap();
        assert_abs_diff_eq!(regret, 0.025 / 2f64.sqrt(), epsilon = 1e-15);
        assert!(default_stepsize(1, 100, 0.9, 0.0, StepsizeRule::Theorem).is_err());
    }

    #[test]
    fn single_iteration_averages_only_w0() {
        let m = Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0], 0.9, 1.0).unwrap();
        let sim = Simulator::new(&m);
        let phi = FeatureMap::constant(1, 2);
        let mut cfg = IrlConfig::new(1, 1, 3);
        cfg.stepsize = Stepsize::Fixed(0.01);
        let trace = run_irl(&sim, &phi, &[10.0], &cfg).unwrap();
        assert_eq!(trace.w_bar.as_ref().unwrap().as_slice(), &[0.0]);
        let rec = &trace.records[0];
        let expected = project_l1_ball(&[-0.01 * (rec.sigma_hat[0] - 10.0)], 1.0).unwrap();
        assert_eq!(trace.final_w.as_ref().unwrap().as_slice(), expected.as_slice());
        assert_eq!(trace.snapshots.len(), 1);
        assert_eq!(rec.samples, sim.samples_drawn());
    }

    #[test]
    fn invalid_config_reports_failure_with_empty_trace() {
        let m = Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0], 0.9, 1.0).unwrap();
        let sim = Simulator::new(&m);
        let err = run_irl(&sim, &FeatureMap::constant(1, 2), &[1.0], &IrlConfig::new(0, 1, 0)).unwrap_err();
        assert!(err.partial.records.is_empty());
        let err = run_irl(&sim, &FeatureMap::constant(1, 2), &[1.0, 2.0], &IrlConfig::new(3, 1, 0)).unwrap_err();
        assert!(matches!(err.error, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn iterates_stay_in_ball_and_average_matches() {
        let m = Mdp::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0],
            vec![0.5, 0.5],
            0.8,
            0.5,
        )
        .unwrap();
        let sim = Simulator::new(&m);
        let phi = FeatureMap::one_hot_state_action(2, 2);
        let mut cfg = IrlConfig::new(60, 2, 11);
        cfg.stepsize = Stepsize::Fixed(0.5);
        let trace = run_irl(&sim, &phi, &[4.0, 0.0, 0.0, 1.0], &cfg).unwrap();
        let mut sum = [0.0; 4];
        for rec in &trace.records {
            assert!(l1_norm(&rec.w) <= 1.0 + BALL_TOL);
            for (a, b) in sum.iter_mut().zip(&rec.w) {
                *a += b;
            }
        }
        for (a, b) in sum.iter().zip(trace.w_bar.as_ref().unwrap().as_slice()) {
            assert_abs_diff_eq!(a / 60.0, *b, epsilon = 1e-12);
        }
        assert!(trace.final_policy.as_ref().unwrap().is_strictly_positive());
        assert_eq!(trace.snapshots.len(), 60);
    }
}
