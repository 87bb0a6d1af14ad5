//! Test-bed environments with ground-truth experts.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::mdp::{reward_of, FeatureMap, Mdp, Policy, RewardWeights};
use crate::sampling::RngStream;
use crate::solver::solve_optimal;

/// Bellman tolerance used when building soft-optimal experts.
pub const EXPERT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentBundle {
    pub mdp: Mdp,
    pub phi: FeatureMap,
    pub w_true: Option<RewardWeights>,
    pub pi_expert: Policy,
    /// Constructor name and parameters, e.g. `gridworld(size=4, slip=0.1, gamma=0.9, tau=1)`.
    pub provenance: String,
}

impl EnvironmentBundle {
    /// Replaces the expert by `(1−ρ) π_E + ρ · uniform`, which makes it
    /// suboptimal for `w_true` whenever `ρ > 0` and `π_E` is not uniform.
    pub fn misspecified(mut self, rho: f64) -> Result<Self> {
        self.pi_expert = self.pi_expert.mix_uniform(rho)?;
        self.provenance = format!("{} + mix_uniform(rho={rho})", self.provenance);
        Ok(self)
    }
}

/// Soft-optimal policy of `r_w`.
pub fn realizable_expert(m: &Mdp, phi: &FeatureMap, w: &RewardWeights) -> Result<Policy> {
    let r = reward_of(w, phi)?;
    Ok(solve_optimal(m, &r, EXPERT_TOL)?.1)
}

/// One state, two self-looping actions, `φ ≡ 1`, uniform expert.
pub fn one_state_mdp(gamma: f64, tau: f64) -> Result<EnvironmentBundle> {
    let mdp = Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0], gamma, tau)?;
    Ok(EnvironmentBundle {
        mdp,
        phi: FeatureMap::constant(1, 2),
        w_true: Some(RewardWeights::zeros(1)),
        pi_expert: Policy::uniform(1, 2),
        provenance: format!("one_state(gamma={gamma}, tau={tau})"),
    })
}

pub(crate) fn dirichlet_ones<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub seed: u64,
    pub gamma: f64,
    pub tau: f64,
    pub nu0_floor: f64,
}

/// Dirichlet(1) transition rows and initial distribution (floored at
/// `nu0_floor`), one-hot state-action features and a random `w_true` on the
/// unit L1 sphere with its soft-optimal expert.
pub fn random_mdp(spec: RandomMdpSpec) -> Result<EnvironmentBundle> {
    let RandomMdpSpec {
        n_states: ns,
        n_actions: na,
        seed,
        gamma,
        tau,
        nu0_floor,
    } = spec;
    if ns == 0 || na == 0 {
        return Err(Error::invalid("random MDP needs at least one state and one action"));
    }
    if !(0.0..=1.0 / ns as f64).contains(&nu0_floor) {
        return Err(Error::invalid(format!("nu0_floor {nu0_floor} must lie in [0, 1/{ns}]")));
    }
    let root = RngStream::new(seed);
    let mut rng = root.child(0).rng();
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        transition.extend(dirichlet_ones(ns, &mut rng));
    }
    let mut rng = root.child(1).rng();
    let spare = 1.0 - nu0_floor * ns as f64;
    let initial: Vec<f64> = dirichlet_ones(ns, &mut rng)
        .into_iter()
        .map(|p| nu0_floor + spare * p)
        .collect();
    let mdp = Mdp::new(ns, na, transition, initial, gamma, tau)?;

    let phi = FeatureMap::one_hot_state_action(ns, na);
    let mut rng = root.child(2).rng();
    let magnitudes = dirichlet_ones(phi.k(), &mut rng);
    let w: Vec<f64> = magnitudes
        .into_iter()
        .map(|m| if rng.gen::<bool>() { m } else { -m })
        .collect();
    let w_true = RewardWeights::new(w)?;
    let pi_expert = realizable_expert(&mdp, &phi, &w_true)?;
    Ok(EnvironmentBundle {
        mdp,
        phi,
        w_true: Some(w_true),
        pi_expert,
        provenance: format!(
            "random(n_states={ns}, n_actions={na}, seed={seed}, gamma={gamma}, tau={tau}, nu0_floor={nu0_floor})"
        ),
    })
}

/// Action indices of the gridworld.
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridworldSpec {
    pub size: usize,
    pub slip_prob: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// `size × size` grid, state `row * size + col`. An action moves to the
/// neighbouring cell in its direction (staying put at a wall) with probability
/// `1 − slip`, and to a uniformly chosen adjacent cell otherwise. The reward
/// puts unit weight on the bottom-right goal cell.
pub fn gridworld(spec: GridworldSpec) -> Result<EnvironmentBundle> {
    let GridworldSpec {
        size,
        slip_prob,
        gamma,
        tau,
    } = spec;
    if size < 2 {
        return Err(Error::invalid("gridworld size must be at least 2"));
    }
    if !(0.0..1.0).contains(&slip_prob) {
        return Err(Error::invalid("slip probability must lie in [0, 1)"));
    }
    let ns = size * size;
    let step = |s: usize, a: usize| -> usize {
        let (row, col) = (s / size, s % size);
        match a {
            UP if row > 0 => s - size,
            RIGHT if col + 1 < size => s + 1,
            DOWN if row + 1 < size => s + size,
            LEFT if col > 0 => s - 1,
            _ => s,
        }
    };
    let mut transition = vec![0.0; ns * 4 * ns];
    for s in 0..ns {
        let neighbours: Vec<usize> = (0..4).map(|a| step(s, a)).filter(|&n| n != s).collect();
        for a in 0..4 {
            let row = &mut transition[(s * 4 + a) * ns..(s * 4 + a + 1) * ns];
            row[step(s, a)] += 1.0 - slip_prob;
            for &n in &neighbours {
                row[n] += slip_prob / neighbours.len() as f64;
            }
        }
    }
    let mdp = Mdp::new(ns, 4, transition, vec![1.0 / ns as f64; ns], gamma, tau)?;
    let phi = FeatureMap::one_hot_state(ns, 4);
    let w_true = RewardWeights::basis(ns, ns - 1);
    let pi_expert = realizable_expert(&mdp, &phi, &w_true)?;
    Ok(EnvironmentBundle {
        mdp,
        phi,
        w_true: Some(w_true),
        pi_expert,
        provenance: format!("gridworld(size={size}, slip={slip_prob}, gamma={gamma}, tau={tau})"),
    })
}
