//! Exact, model-based oracles: soft Bellman solvers, policy evaluation,
//! occupancy measures, feature expectations and objective values.
//!
//! Everything here reads the transition kernel directly. The learning
//! algorithm in [`crate::irl`] never calls into this module; it is used to
//! build experts and to score results.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{entropy_of, kl_of, xlogx, FeatureMap, Mdp, Policy, RewardTable};

/// Default sup-norm Bellman residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Temperatures below this are rejected; every bound in the analysis scales with `1/τ`.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// Above this many states the occupancy measure is computed iteratively.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

const SWEEP_MARGIN: usize = 200;

/// Value function pair `(V, Q)` returned by the soft Bellman solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePair {
    pub v: Vec<f64>,
    /// Flat `[s][a]` table.
    pub q: Vec<f64>,
    /// Final sup-norm Bellman residual `‖T V_k − V_k‖∞`.
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    n_actions: usize,
}

impl ValuePair {
    pub fn q_value(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Soft advantage `A(s,a) = Q(s,a) − V(s) − τ log π(a|s)` for the policy
    /// this pair evaluates. Entries with `π(a|s) = 0` are `+∞`.
    pub fn advantage(&self, pi: &Policy, tau: f64) -> Vec<f64> {
        let na = self.n_actions;
        (0..self.q.len())
            .map(|j| {
                let p = pi.probs()[j];
                if p > 0.0 {
                    self.q[j] - self.v[j / na] - tau * p.ln()
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

/// State and state-action occupancy measures of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyPair {
    pub nu: Vec<f64>,
    /// Flat `[s][a]` table, `μ(s,a) = ν(s) π(a|s)`.
    pub mu: Vec<f64>,
}

fn check_temperature(m: &Mdp) -> Result<()> {
    if m.temperature() < MIN_TEMPERATURE {
        return Err(Error::invalid(format!(
            "temperature {} is below the supported minimum {MIN_TEMPERATURE}",
            m.temperature()
        )));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    Ok(())
}

/// Sweep cap from the known contraction rate: `γ^k C ≤ tol (1 − γ)`.
fn sweep_cap(gamma: f64, tol: f64, initial_residual: f64) -> usize {
    if initial_residual <= tol {
        return SWEEP_MARGIN;
    }
    let k = ((tol * (1.0 - gamma) / initial_residual).ln() / gamma.ln()).ceil();
    k.max(0.0) as usize + SWEEP_MARGIN
}

/// Generic fixed-point loop for a γ-contraction on state values.
fn iterate_to_fixed_point<F>(
    m: &Mdp,
    tol: f64,
    max_sweeps: Option<usize>,
    solver: &'static str,
    mut sweep: F,
) -> Result<ValuePair>
where
    F: FnMut(&[f64], &mut [f64], &mut [f64]),
{
    let (ns, na) = (m.n_states(), m.n_actions());
    let mut v = vec![0.0; ns];
    let mut v_next = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut history = Vec::new();
    let mut cap = usize::MAX;
    loop {
        sweep(&v, &mut q, &mut v_next);
        let residual = v.iter().zip(&v_next).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        history.push(residual);
        if history.len() == 1 {
            cap = max_sweeps.unwrap_or_else(|| sweep_cap(m.discount(), tol, residual));
        }
        std::mem::swap(&mut v, &mut v_next);
        if residual <= tol {
            return Ok(ValuePair {
                v,
                q,
                residual,
                iterations: history.len(),
                residual_history: history,
                n_actions: na,
            });
        }
        if !residual.is_finite() || history.len() >= cap {
            return Err(Error::SolverFailure {
                solver,
                iterations: history.len(),
                last_residual: residual,
                residual_history: history,
            });
        }
    }
}

/// Fixed point of the soft Bellman optimality operator
/// `V(s) = τ log Σ_a exp((r(s,a) + γ Σ_{s'} P(s'|s,a) V(s'))/τ)`.
///
/// On return `V(s) = τ log Σ_a exp(Q(s,a)/τ)` holds exactly (up to rounding)
/// and `Q = r + γ P V_prev` with `‖V − V_prev‖∞ ≤ tol`.
pub fn soft_value_iteration(m: &Mdp, r: &RewardTable, tol: f64) -> Result<ValuePair> {
    soft_value_iteration_limited(m, r, tol, None)
}

/// [`soft_value_iteration`] with an explicit sweep cap in place of the one
/// derived from the contraction rate.
pub fn soft_value_iteration_limited(
    m: &Mdp,
    r: &RewardTable,
    tol: f64,
    max_sweeps: Option<usize>,
) -> Result<ValuePair> {
    check_tol(tol)?;
    check_temperature(m)?;
    r.check_shape(m.n_states(), m.n_actions())?;
    let (ns, na) = (m.n_states(), m.n_actions());
    let (gamma, tau) = (m.discount(), m.temperature());
    iterate_to_fixed_point(m, tol, max_sweeps, "soft value iteration", |v, q, v_next| {
        for s in 0..ns {
            let row = &mut q[s * na..(s + 1) * na];
            for (a, qa) in row.iter_mut().enumerate() {
                *qa = r.get(s, a) + gamma * m.expect_next(s, a, v);
            }
            v_next[s] = log_sum_exp(row, tau);
        }
    })
}

/// `τ log Σ_i exp(x_i/τ)` with max-subtraction.
pub fn log_sum_exp(x: &[f64], tau: f64) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + tau * x.iter().map(|xi| ((xi - max) / tau).exp()).sum::<f64>().ln()
}

/// Soft-optimal policy `π*(a|s) ∝ exp(Q*(s,a)/τ)`.
pub fn optimal_policy(values: &ValuePair, tau: f64) -> Result<Policy> {
    let na = values.n_actions;
    Policy::softmax(values.v.len(), na, &values.q, tau)
}

/// Regularized evaluation of `π`:
/// `Q(s,a) = r(s,a) + γ Σ P(s'|s,a) V(s')`, `V(s) = Σ_a π(a|s)(Q(s,a) − τ log π(a|s))`.
pub fn policy_evaluation(m: &Mdp, r: &RewardTable, pi: &Policy, tol: f64) -> Result<ValuePair> {
    check_tol(tol)?;
    check_temperature(m)?;
    r.check_shape(m.n_states(), m.n_actions())?;
    pi.check_shape(m.n_states(), m.n_actions())?;
    let (ns, na) = (m.n_states(), m.n_actions());
    let (gamma, tau) = (m.discount(), m.temperature());
    let entropy: Vec<f64> = pi.state_entropies();
    iterate_to_fixed_point(m, tol, None, "policy evaluation", |v, q, v_next| {
        for s in 0..ns {
            let mut acc = tau * entropy[s];
            for a in 0..na {
                let qa = r.get(s, a) + gamma * m.expect_next(s, a, v);
                q[s * na + a] = qa;
                acc += pi.prob(s, a) * qa;
            }
            v_next[s] = acc;
        }
    })
}

/// Optimal soft value and its soft-optimal policy.
pub fn solve_optimal(m: &Mdp, r: &RewardTable, tol: f64) -> Result<(ValuePair, Policy)> {
    let values = soft_value_iteration(m, r, tol)?;
    let pi = optimal_policy(&values, m.temperature())?;
    Ok((values, pi))
}

/// State-to-state kernel `P^π(s'|s) = Σ_a π(a|s) P(s'|s,a)`, row-major.
fn policy_kernel(m: &Mdp, pi: &Policy) -> Vec<f64> {
    let ns = m.n_states();
    let mut kernel = vec![0.0; ns * ns];
    for s in 0..ns {
        let out = &mut kernel[s * ns..(s + 1) * ns];
        for (a, &p) in pi.row(s).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(m.transition_row(s, a)) {
                *o += p * t;
            }
        }
    }
    kernel
}

fn mu_from_nu(pi: &Policy, nu: &[f64]) -> Vec<f64> {
    let na = pi.n_actions();
    (0..nu.len() * na).map(|j| nu[j / na] * pi.probs()[j]).collect()
}

/// Discounted occupancy measures. Solves the Bellman flow equations
/// `ν = (1−γ)ν0 + γ (P^π)ᵀ ν` by dense LU, or iteratively above
/// [`DIRECT_SOLVE_LIMIT`] states.
pub fn occupancy(m: &Mdp, pi: &Policy) -> Result<OccupancyPair> {
    pi.check_shape(m.n_states(), m.n_actions())?;
    if m.n_states() > DIRECT_SOLVE_LIMIT {
        return occupancy_iterative(m, pi, 1e-12);
    }
    let ns = m.n_states();
    let gamma = m.discount();
    let kernel = policy_kernel(m, pi);
    let a = DMatrix::from_fn(ns, ns, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * kernel[j * ns + i]
    });
    let b = DVector::from_iterator(ns, m.initial_dist().iter().map(|x| (1.0 - gamma) * x));
    let nu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("Bellman flow system".into()))?;
    let nu: Vec<f64> = nu.iter().map(|x| x.max(0.0)).collect();
    Ok(OccupancyPair {
        mu: mu_from_nu(pi, &nu),
        nu,
    })
}

/// Fixed-point iteration on the flow equations until the L1 change is below `tol`.
pub fn occupancy_iterative(m: &Mdp, pi: &Policy, tol: f64) -> Result<OccupancyPair> {
    check_tol(tol)?;
    pi.check_shape(m.n_states(), m.n_actions())?;
    let ns = m.n_states();
    let gamma = m.discount();
    let base: Vec<f64> = m.initial_dist().iter().map(|x| (1.0 - gamma) * x).collect();
    let mut nu = m.initial_dist().to_vec();
    let mut pushed = vec![0.0; ns];
    let cap = sweep_cap(gamma, tol, 2.0);
    for _ in 0..cap {
        let mu = mu_from_nu(pi, &nu);
        m.push_forward(&mu, &mut pushed);
        let mut change = 0.0;
        for s in 0..ns {
            let next = base[s] + gamma * pushed[s];
            change += (next - nu[s]).abs();
            nu[s] = next;
        }
        if change <= tol {
            return Ok(OccupancyPair {
                mu: mu_from_nu(pi, &nu),
                nu,
            });
        }
    }
    Err(Error::SolverFailure {
        solver: "occupancy iteration",
        iterations: cap,
        last_residual: f64::NAN,
        residual_history: Vec::new(),
    })
}

fn features_from_mu(mu: &[f64], phi: &FeatureMap, scale: f64) -> Vec<f64> {
    let mut sigma = vec![0.0; phi.k()];
    let na = phi.n_actions();
    for (j, &weight) in mu.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        for (acc, f) in sigma.iter_mut().zip(phi.phi(j / na, j % na)) {
            *acc += weight * f;
        }
    }
    sigma.iter_mut().for_each(|x| *x *= scale);
    sigma
}

/// Feature expectation `σ^π = E_π[Σ_h γ^h φ(s_h,a_h)] = Σ μ^π φ / (1−γ)`.
pub fn feature_expectation_exact(m: &Mdp, pi: &Policy, phi: &FeatureMap) -> Result<Vec<f64>> {
    phi.check_shape(m.n_states(), m.n_actions())?;
    let occ = occupancy(m, pi)?;
    Ok(features_from_mu(&occ.mu, phi, 1.0 / (1.0 - m.discount())))
}

/// `Σ_{h<H} γ^h E_π[φ(s_h,a_h)]`, the expectation of the truncated empirical
/// expert feature estimate.
pub fn truncated_feature_expectation(m: &Mdp, pi: &Policy, phi: &FeatureMap, horizon: usize) -> Result<Vec<f64>> {
    phi.check_shape(m.n_states(), m.n_actions())?;
    pi.check_shape(m.n_states(), m.n_actions())?;
    let mut dist = m.initial_dist().to_vec();
    let mut next = vec![0.0; m.n_states()];
    let mut sigma = vec![0.0; phi.k()];
    let mut weight = 1.0;
    for _ in 0..horizon {
        let mu = mu_from_nu(pi, &dist);
        for (acc, x) in sigma.iter_mut().zip(features_from_mu(&mu, phi, weight)) {
            *acc += x;
        }
        m.push_forward(&mu, &mut next);
        std::mem::swap(&mut dist, &mut next);
        weight *= m.discount();
    }
    Ok(sigma)
}

/// `J^π_r` in occupancy form: `Σ μ(s,a)(r(s,a) − τ log π(a|s)) / (1−γ)`.
pub fn objective_value(m: &Mdp, r: &RewardTable, pi: &Policy) -> Result<f64> {
    r.check_shape(m.n_states(), m.n_actions())?;
    let occ = occupancy(m, pi)?;
    Ok(objective_from_occupancy(m, r, pi, &occ.nu))
}

pub(crate) fn objective_from_occupancy(m: &Mdp, r: &RewardTable, pi: &Policy, nu: &[f64]) -> f64 {
    let tau = m.temperature();
    let total: f64 = (0..m.n_states())
        .map(|s| {
            let per_state: f64 = pi
                .row(s)
                .iter()
                .enumerate()
                .map(|(a, &p)| p * r.get(s, a) - tau * xlogx(p))
                .sum();
            nu[s] * per_state
        })
        .sum();
    total / (1.0 - m.discount())
}

/// `J*_r = Σ_s ν0(s) V*(s)`.
pub fn optimal_objective(m: &Mdp, r: &RewardTable) -> Result<f64> {
    let values = soft_value_iteration(m, r, DEFAULT_TOL)?;
    Ok(weighted_value(m.initial_dist(), &values.v))
}

pub(crate) fn weighted_value(dist: &[f64], v: &[f64]) -> f64 {
    dist.iter().zip(v).map(|(d, x)| d * x).sum()
}

/// Two routes to the soft suboptimality of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftSuboptimality {
    /// `J*_r − J^π_r`.
    pub gap: f64,
    /// `τ/(1−γ) Σ_s ν^π(s) KL(π(·|s) ‖ π*_r(·|s))`.
    pub kl_form: f64,
}

pub fn soft_suboptimality(m: &Mdp, r: &RewardTable, pi: &Policy) -> Result<SoftSuboptimality> {
    let (values, pi_star) = solve_optimal(m, r, DEFAULT_TOL)?;
    let occ = occupancy(m, pi)?;
    let j_star = weighted_value(m.initial_dist(), &values.v);
    let j_pi = objective_from_occupancy(m, r, pi, &occ.nu);
    let kl: f64 = (0..m.n_states())
        .map(|s| occ.nu[s] * kl_of(pi.row(s), pi_star.row(s)))
        .sum();
    Ok(SoftSuboptimality {
        gap: j_star - j_pi,
        kl_form: m.temperature() / (1.0 - m.discount()) * kl,
    })
}

/// `max_s ν^{π_ref}(s) / ν^π(s)`.
pub fn distribution_mismatch(m: &Mdp, pi: &Policy, pi_ref: &Policy) -> Result<f64> {
    let nu = occupancy(m, pi)?.nu;
    let nu_ref = occupancy(m, pi_ref)?.nu;
    let mut worst = 0.0_f64;
    for (state, (&num, &den)) in nu_ref.iter().zip(&nu).enumerate() {
        if den <= 0.0 {
            return Err(Error::StarvedState { state });
        }
        worst = worst.max(num / den);
    }
    Ok(worst)
}

/// Mean per-state entropy weighted by `ν`, i.e. `(1−γ)` times the discounted causal entropy.
pub fn occupancy_entropy(pi: &Policy, nu: &[f64]) -> f64 {
    (0..pi.n_states()).map(|s| nu[s] * entropy_of(pi.row(s))).sum()
}
