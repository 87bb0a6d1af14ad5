//! Finite entropy-regularized MDPs, linear reward classes and tabular policies.
//!
//! All tables are dense and stored row-major. State-action tables use the flat
//! index `s * n_actions + a`; the transition kernel uses
//! `(s * n_actions + a) * n_states + s_next`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability vectors (row sums, initial distribution).
pub const PROB_TOL: f64 = 1e-12;

/// Tolerance for membership in the unit L1 ball after projection roundoff.
pub const BALL_TOL: f64 = 1e-9;

/// Unvalidated MDP components, as read from a file or assembled by a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flat `[s][a][s']` table of length `n_states * n_actions * n_states`.
    pub transition: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
    pub temperature: f64,
}

/// One broken invariant found by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace { n_states: usize, n_actions: usize },
    TransitionShape { expected: usize, got: usize },
    TransitionEntry { state: usize, action: usize, next: usize, value: f64 },
    TransitionRowSum { state: usize, action: usize, sum: f64 },
    InitialShape { expected: usize, got: usize },
    InitialEntry { state: usize, value: f64 },
    InitialSum { sum: f64 },
    DiscountOutOfRange { discount: f64 },
    TemperatureNotPositive { temperature: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::EmptySpace { n_states, n_actions } => write!(
                f,
                "state and action spaces must be non-empty (n_states = {n_states}, n_actions = {n_actions})"
            ),
            Violation::TransitionShape { expected, got } => {
                write!(f, "transition table has {got} entries, expected {expected}")
            }
            Violation::TransitionEntry { state, action, next, value } => write!(
                f,
                "transition P({next} | {state}, {action}) = {value} is negative or not finite"
            ),
            Violation::TransitionRowSum { state, action, sum } => write!(
                f,
                "transition row (s = {state}, a = {action}) sums to {sum} (deficit {:e})",
                1.0 - sum
            ),
            Violation::InitialShape { expected, got } => {
                write!(f, "initial distribution has {got} entries, expected {expected}")
            }
            Violation::InitialEntry { state, value } => {
                write!(f, "initial probability of state {state} is {value}")
            }
            Violation::InitialSum { sum } => write!(
                f,
                "initial distribution sums to {sum} (deficit {:e})",
                1.0 - sum
            ),
            Violation::DiscountOutOfRange { discount } => {
                write!(f, "discount {discount} is outside the open interval (0, 1)")
            }
            Violation::TemperatureNotPositive { temperature } => {
                write!(f, "temperature {temperature} must be positive")
            }
        }
    }
}

/// Result of [`validate_mdp`]; empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every MDP invariant and reports all violations rather than the first.
pub fn validate_mdp(parts: &MdpParts) -> ValidationReport {
    let mut violations = Vec::new();
    let (ns, na) = (parts.n_states, parts.n_actions);
    if ns == 0 || na == 0 {
        violations.push(Violation::EmptySpace { n_states: ns, n_actions: na });
    }

    let expected = ns * na * ns;
    if parts.transition.len() != expected {
        violations.push(Violation::TransitionShape {
            expected,
            got: parts.transition.len(),
        });
    } else {
        for s in 0..ns {
            for a in 0..na {
                let row = &parts.transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                for (next, &p) in row.iter().enumerate() {
                    if !(p >= 0.0 && p.is_finite()) {
                        violations.push(Violation::TransitionEntry {
                            state: s,
                            action: a,
                            next,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if !((sum - 1.0).abs() <= PROB_TOL) {
                    violations.push(Violation::TransitionRowSum { state: s, action: a, sum });
                }
            }
        }
    }

    if parts.initial_dist.len() != ns {
        violations.push(Violation::InitialShape {
            expected: ns,
            got: parts.initial_dist.len(),
        });
    } else {
        for (s, &p) in parts.initial_dist.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) {
                violations.push(Violation::InitialEntry { state: s, value: p });
            }
        }
        let sum: f64 = parts.initial_dist.iter().sum();
        if ns > 0 && !((sum - 1.0).abs() <= PROB_TOL) {
            violations.push(Violation::InitialSum { sum });
        }
    }

    if !(parts.discount > 0.0 && parts.discount < 1.0) {
        violations.push(Violation::DiscountOutOfRange { discount: parts.discount });
    }
    if !(parts.temperature > 0.0 && parts.temperature.is_finite()) {
        violations.push(Violation::TemperatureNotPositive {
            temperature: parts.temperature,
        });
    }
    ValidationReport { violations }
}

/// A validated finite MDP with entropy regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    parts: MdpParts,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        initial_dist: Vec<f64>,
        discount: f64,
        temperature: f64,
    ) -> Result<Self> {
        Self::from_parts(MdpParts {
            n_states,
            n_actions,
            transition,
            initial_dist,
            discount,
            temperature,
        })
    }

    pub fn from_parts(parts: MdpParts) -> Result<Self> {
        let report = validate_mdp(&parts);
        if report.is_ok() {
            Ok(Mdp { parts })
        } else {
            Err(Error::InvalidMdp(report))
        }
    }

    pub fn parts(&self) -> &MdpParts {
        &self.parts
    }

    pub fn n_states(&self) -> usize {
        self.parts.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.parts.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.parts.n_states * self.parts.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.parts.discount
    }

    pub fn temperature(&self) -> f64 {
        self.parts.temperature
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.parts.initial_dist
    }

    /// Next-state distribution `P(· | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.parts.n_states;
        let start = (s * self.parts.n_actions + a) * ns;
        &self.parts.transition[start..start + ns]
    }

    /// Same MDP with a different regularization temperature.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.temperature = temperature;
        Self::from_parts(parts)
    }

    /// `x(s') = Σ_{s,a} P(s'|s,a) y(s,a)`, the adjoint of [`Mdp::expect_next`].
    pub(crate) fn push_forward(&self, mass: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                let m = mass[s * self.n_actions() + a];
                if m == 0.0 {
                    continue;
                }
                for (o, &p) in out.iter_mut().zip(self.transition_row(s, a)) {
                    *o += m * p;
                }
            }
        }
    }

    /// `Σ_{s'} P(s'|s,a) v(s')`.
    pub(crate) fn expect_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum()
    }
}

/// Feature map `φ : S × A → R^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    k: usize,
    values: Vec<f64>,
    sup_norm: f64,
}

impl FeatureMap {
    /// `values` is the flat `[s][a][i]` table.
    pub fn new(n_states: usize, n_actions: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Error::check_dim("feature table", n_states * n_actions * k, values.len())?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("feature table contains non-finite entries"));
        }
        let sup_norm = values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        Ok(FeatureMap {
            n_states,
            n_actions,
            k,
            values,
            sup_norm,
        })
    }

    /// `k = |S||A|`, `φ(s,a) = e_{s|A|+a}`.
    pub fn one_hot_state_action(n_states: usize, n_actions: usize) -> Self {
        let k = n_states * n_actions;
        let mut values = vec![0.0; k * k];
        for j in 0..k {
            values[j * k + j] = 1.0;
        }
        Self::new(n_states, n_actions, k, values).expect("one-hot table is well formed")
    }

    /// `k = |S|`, `φ(s,a) = e_s`.
    pub fn one_hot_state(n_states: usize, n_actions: usize) -> Self {
        let k = n_states;
        let mut values = vec![0.0; n_states * n_actions * k];
        for s in 0..n_states {
            for a in 0..n_actions {
                values[(s * n_actions + a) * k + s] = 1.0;
            }
        }
        Self::new(n_states, n_actions, k, values).expect("one-hot table is well formed")
    }

    /// Scalar constant feature `φ ≡ 1`.
    pub fn constant(n_states: usize, n_actions: usize) -> Self {
        Self::new(n_states, n_actions, 1, vec![1.0; n_states * n_actions])
            .expect("constant table is well formed")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `max_{s,a,i} |φ_i(s,a)|`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.k;
        &self.values[start..start + self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        Error::check_dim("feature map states", n_states, self.n_states)?;
        Error::check_dim("feature map actions", n_actions, self.n_actions)
    }
}

/// Weight vector `w` constrained to the unit L1 ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardWeights(Vec<f64>);

impl RewardWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("reward weights must be finite"));
        }
        let l1 = l1_norm(&w);
        if l1 > 1.0 + BALL_TOL {
            return Err(Error::invalid(format!(
                "reward weights have L1 norm {l1}, outside the unit ball"
            )));
        }
        Ok(RewardWeights(w))
    }

    pub fn zeros(k: usize) -> Self {
        RewardWeights(vec![0.0; k])
    }

    /// Standard basis vector `e_i` in `R^k`.
    pub fn basis(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        RewardWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1_norm(&self) -> f64 {
        l1_norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for RewardWeights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        RewardWeights::new(w)
    }
}

impl From<RewardWeights> for Vec<f64> {
    fn from(w: RewardWeights) -> Self {
        w.0
    }
}

/// Tabular reward `r(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        Error::check_dim("reward table", n_states * n_actions, values.len())?;
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("reward table contains non-finite entries"));
        }
        Ok(RewardTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn constant(n_states: usize, n_actions: usize, c: f64) -> Self {
        RewardTable {
            n_states,
            n_actions,
            values: vec![c; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `‖self − other‖∞`.
    pub fn sup_distance(&self, other: &RewardTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        Error::check_dim("reward table states", n_states, self.n_states)?;
        Error::check_dim("reward table actions", n_actions, self.n_actions)
    }
}

/// Stationary Markov policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        Error::check_dim("policy table", n_states * n_actions, probs.len())?;
        if n_actions == 0 {
            return Err(Error::invalid("policy needs at least one action"));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::invalid(format!(
                    "policy row {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::invalid(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::invalid("policy rows have unequal lengths"));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Puts all mass on `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    /// Row-wise softmax of `logits / temperature` with max-subtraction.
    pub fn softmax(n_states: usize, n_actions: usize, logits: &[f64], temperature: f64) -> Result<Self> {
        Error::check_dim("softmax logits", n_states * n_actions, logits.len())?;
        if !(temperature > 0.0) {
            return Err(Error::invalid("softmax temperature must be positive"));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("softmax logits must be finite"));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(n_actions) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            probs.extend(row.iter().map(|q| ((q - max) / temperature).exp()));
            let z: f64 = probs[start..].iter().sum();
            probs[start..].iter_mut().for_each(|p| *p /= z);
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
        })
    }

    /// `(1 − ρ) π + ρ · uniform`.
    pub fn mix_uniform(&self, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid("mixing weight must lie in [0, 1]"));
        }
        let u = 1.0 / self.n_actions as f64;
        let probs = self.probs.iter().map(|p| (1.0 - rho) * p + rho * u).collect();
        Ok(Policy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// Entropy of each row, in nats.
    pub fn state_entropies(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| entropy_of(self.row(s))).collect()
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        Error::check_dim("policy states", n_states, self.n_states)?;
        Error::check_dim("policy actions", n_actions, self.n_actions)
    }
}

/// `r_w(s,a) = ⟨w, φ(s,a)⟩`.
pub fn reward_of(w: &RewardWeights, phi: &FeatureMap) -> Result<RewardTable> {
    Error::check_dim("reward weights", phi.k(), w.dim())?;
    let values = (0..phi.n_states() * phi.n_actions())
        .map(|j| {
            let f = &phi.values[j * phi.k..(j + 1) * phi.k];
            f.iter().zip(w.as_slice()).map(|(x, y)| x * y).sum()
        })
        .collect();
    RewardTable::new(phi.n_states(), phi.n_actions(), values)
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn shannon_entropy(dist: &[f64]) -> Result<f64> {
    check_distribution(dist)?;
    Ok(entropy_of(dist))
}

/// `KL(p ‖ q)` in nats; infinite when `p` is not absolutely continuous w.r.t. `q`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    Error::check_dim("KL arguments", p.len(), q.len())?;
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(kl_of(p, q))
}

fn check_distribution(dist: &[f64]) -> Result<()> {
    if dist.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::invalid("distribution has negative or non-finite entries"));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL * (dist.len().max(1) as f64) {
        return Err(Error::invalid(format!("distribution sums to {sum}")));
    }
    Ok(())
}

pub(crate) fn entropy_of(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

pub(crate) fn kl_of(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| if qi > 0.0 { pi * (pi / qi).ln() } else { f64::INFINITY })
        .sum()
}

/// `p log p` with the `0 log 0 = 0` convention.
pub(crate) fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn linf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_state(discount: f64) -> MdpParts {
        MdpParts {
            n_states: 1,
            n_actions: 2,
            transition: vec![1.0, 1.0],
            initial_dist: vec![1.0],
            discount,
            temperature: 1.0,
        }
    }

    #[test]
    fn well_formed_mdp_validates() {
        assert!(validate_mdp(&one_state(0.9)).is_ok());
        assert!(Mdp::from_parts(one_state(0.9)).is_ok());
    }

    #[test]
    fn short_row_is_reported_with_deficit() {
        let mut parts = one_state(0.9);
        parts.n_states = 2;
        parts.initial_dist = vec![1.0, 0.0];
        // (s=0,a=1) row sums to 0.9
        parts.transition = vec![1.0, 0.0, 0.5, 0.4, 0.0, 1.0, 0.0, 1.0];
        let report = validate_mdp(&parts);
        assert_eq!(report.violations.len(), 1);
        match report.violations[0] {
            Violation::TransitionRowSum { state, action, sum } => {
                assert_eq!((state, action), (0, 1));
                assert_abs_diff_eq!(1.0 - sum, 0.1, epsilon = 1e-12);
            }
            ref v => panic!("unexpected violation {v:?}"),
        }
        assert!(report.to_string().contains("s = 0, a = 1"));
        assert!(report.to_string().contains("deficit"));
    }

    #[test]
    fn discount_of_one_is_flagged() {
        let report = validate_mdp(&one_state(1.0));
        assert_eq!(
            report.violations,
            vec![Violation::DiscountOutOfRange { discount: 1.0 }]
        );
        assert!(matches!(Mdp::from_parts(one_state(1.0)), Err(Error::InvalidMdp(_))));
    }

    #[test]
    fn negative_entries_and_bad_shapes_are_flagged() {
        let mut parts = one_state(0.5);
        parts.initial_dist = vec![0.5];
        parts.temperature = 0.0;
        let report = validate_mdp(&parts);
        assert!(report.violations.contains(&Violation::InitialSum { sum: 0.5 }));
        assert!(report
            .violations
            .contains(&Violation::TemperatureNotPositive { temperature: 0.0 }));

        parts = one_state(0.5);
        parts.transition = vec![1.0];
        assert!(matches!(
            validate_mdp(&parts).violations[0],
            Violation::TransitionShape { expected: 2, got: 1 }
        ));
    }

    #[test]
    fn reward_of_basis_and_one_hot() {
        let phi = FeatureMap::one_hot_state_action(2, 2);
        let r = reward_of(&RewardWeights::basis(4, 0), &phi).unwrap();
        assert_eq!(r.values(), &[1.0, 0.0, 0.0, 0.0]);
        let r = reward_of(&RewardWeights::zeros(4), &phi).unwrap();
        assert!(r.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_feature_unit_weight_gives_unit_reward() {
        let phi = FeatureMap::constant(1, 2);
        let r = reward_of(&RewardWeights::new(vec![1.0]).unwrap(), &phi).unwrap();
        assert_eq!(r.values(), &[1.0, 1.0]);
    }

    #[test]
    fn reward_of_rejects_dimension_mismatch() {
        let phi = FeatureMap::constant(1, 2);
        assert!(matches!(
            reward_of(&RewardWeights::zeros(3), &phi),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weights_outside_ball_are_rejected() {
        assert!(RewardWeights::new(vec![0.6, -0.4]).is_ok());
        assert!(RewardWeights::new(vec![1.0 + 5e-10]).is_ok());
        assert!(RewardWeights::new(vec![0.6, 0.5]).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_abs_diff_eq!(shannon_entropy(&[0.5, 0.5]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(shannon_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        // hand evaluation: -0.25 ln 0.25 - 0.75 ln 0.75
        assert_abs_diff_eq!(shannon_entropy(&[0.25, 0.75]).unwrap(), 0.562335, epsilon = 1e-6);
        assert!(shannon_entropy(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn softmax_rows() {
        let pi = Policy::softmax(1, 2, &[2f64.ln(), 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(pi.prob(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        let pi = Policy::softmax(1, 2, &[1e4, 1e4 - 1.0], 1e-3).unwrap();
        assert!(pi.probs().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(Policy::new(1, 2, vec![-0.1, 1.1]).is_err());
        assert!(Policy::deterministic(2, &[1]).unwrap().row(0) == [0.0, 1.0]);
        assert!(Policy::deterministic(2, &[2]).is_err());
    }

    fn weights_in_ball(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0..1.0f64, k).prop_map(|v| {
            let n = l1_norm(&v).max(1.0);
            v.into_iter().map(|x| x / n).collect()
        })
    }

    proptest! {
        #[test]
        fn reward_is_linear_and_bounded(
            w1 in weights_in_ball(6),
            w2 in weights_in_ball(6),
            alpha in 0.0..1.0f64,
            feats in prop::collection::vec(-3.0..3.0f64, 2 * 3 * 6),
        ) {
            let phi = FeatureMap::new(2, 3, 6, feats).unwrap();
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let r1 = reward_of(&RewardWeights::new(w1).unwrap(), &phi).unwrap();
            let r2 = reward_of(&RewardWeights::new(w2).unwrap(), &phi).unwrap();
            let rm = reward_of(&RewardWeights::new(mix).unwrap(), &phi).unwrap();
            for j in 0..6 {
                let lin = alpha * r1.values()[j] + (1.0 - alpha) * r2.values()[j];
                prop_assert!((rm.values()[j] - lin).abs() < 1e-12);
                prop_assert!(rm.values()[j].abs() <= phi.sup_norm() + 1e-12);
            }
        }

        #[test]
        fn entropy_is_bounded(raw in prop::collection::vec(0.0..1.0f64, 1..8)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let h = shannon_entropy(&p).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
        }
    }
}
