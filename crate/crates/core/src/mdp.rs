//! Tabular cross-embodiment MDPs and exact occupancy machinery.
//!
//! A set of embodiments shares one state space, one unified action space,
//! and one initial distribution. Each embodiment has its own transition
//! kernel over a local action space plus a projector mapping unified
//! actions onto local ones. A single policy over unified actions therefore
//! induces a different Markov chain in every embodiment.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::util::{log_sum_exp, safe_ln, sample_index, LOG_ZERO};

const ROW_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64]) -> Result<(), (usize, f64, f64)> {
    let mut sum = 0.0;
    for (i, &x) in p.iter().enumerate() {
        if x < 0.0 {
            return Err((i, x, f64::NAN));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > ROW_TOL {
        return Err((usize::MAX, f64::NAN, sum));
    }
    Ok(())
}

/// Dense transition table `P(s' | s, a)` over local actions.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    /// Build from rows laid out as `probs[(s * num_actions + a) * num_states + s']`.
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self, CoreError> {
        if probs.len() != num_states * num_actions * num_states {
            return Err(CoreError::DimensionMismatch {
                what: "transition table",
                got: probs.len(),
                expected: num_states * num_actions * num_states,
            });
        }
        let kernel = Self { num_states, num_actions, probs };
        for s in 0..num_states {
            for a in 0..num_actions {
                match check_distribution(kernel.row(s, a)) {
                    Ok(()) => {}
                    Err((i, v, _)) if i != usize::MAX => {
                        return Err(CoreError::NegativeProbability { index: i, value: v })
                    }
                    Err((_, _, sum)) => {
                        return Err(CoreError::UnnormalizedRow { state: s, action: a, sum })
                    }
                }
            }
        }
        Ok(kernel)
    }

    /// Deterministic kernel from a next-state table `next[s][a]`.
    pub fn deterministic(num_states: usize, num_actions: usize, next: &[Vec<usize>]) -> Result<Self, CoreError> {
        let mut probs = vec![0.0; num_states * num_actions * num_states];
        for s in 0..num_states {
            for a in 0..num_actions {
                let s2 = next[s][a];
                if s2 >= num_states {
                    return Err(CoreError::DimensionMismatch {
                        what: "next-state entry",
                        got: s2,
                        expected: num_states,
                    });
                }
                probs[(s * num_actions + a) * num_states + s2] = 1.0;
            }
        }
        Self::new(num_states, num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.probs[base..base + self.num_states]
    }

    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.probs[(s * self.num_actions + a) * self.num_states + s2]
    }
}

/// One controlled MDP inside a cross-embodiment set: local dynamics plus
/// the projector from unified actions to local ones.
#[derive(Debug, Clone)]
pub struct Embodiment {
    pub name: String,
    kernel: TransitionKernel,
    projector: Vec<usize>,
}

impl Embodiment {
    pub fn new(name: impl Into<String>, kernel: TransitionKernel, projector: Vec<usize>) -> Result<Self, CoreError> {
        for (a, &local) in projector.iter().enumerate() {
            if local >= kernel.num_actions() {
                return Err(CoreError::BadProjection {
                    action: a,
                    got: local,
                    bound: kernel.num_actions(),
                });
            }
        }
        Ok(Self { name: name.into(), kernel, projector })
    }

    /// Identity projector: the local action space is the unified one.
    pub fn direct(name: impl Into<String>, kernel: TransitionKernel) -> Self {
        let projector = (0..kernel.num_actions()).collect();
        Self { name: name.into(), kernel, projector }
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn project(&self, unified_action: usize) -> usize {
        self.projector[unified_action]
    }

    pub fn num_unified_actions(&self) -> usize {
        self.projector.len()
    }
}

/// A distribution over embodiments sharing states, unified actions, and
/// the initial state distribution.
#[derive(Debug, Clone)]
pub struct EmbodimentSet {
    embodiments: Vec<Embodiment>,
    prior: Vec<f64>,
    initial: Vec<f64>,
    num_states: usize,
    num_actions: usize,
}

impl EmbodimentSet {
    pub fn new(embodiments: Vec<Embodiment>, prior: Vec<f64>, initial: Vec<f64>) -> Result<Self, CoreError> {
        let first = embodiments.first().ok_or(CoreError::EmptyEmbodimentSet)?;
        let num_states = first.kernel.num_states();
        let num_actions = first.num_unified_actions();
        for em in &embodiments {
            if em.kernel.num_states() != num_states {
                return Err(CoreError::DimensionMismatch {
                    what: "embodiment state space",
                    got: em.kernel.num_states(),
                    expected: num_states,
                });
            }
            if em.num_unified_actions() != num_actions {
                return Err(CoreError::DimensionMismatch {
                    what: "embodiment unified action space",
                    got: em.num_unified_actions(),
                    expected: num_actions,
                });
            }
        }
        if prior.len() != embodiments.len() {
            return Err(CoreError::PriorSizeMismatch { got: prior.len(), expected: embodiments.len() });
        }
        if let Err((i, v, sum)) = check_distribution(&prior) {
            if i != usize::MAX {
                return Err(CoreError::NegativeProbability { index: i, value: v });
            }
            return Err(CoreError::UnnormalizedInitial { sum });
        }
        if initial.len() != num_states {
            return Err(CoreError::DimensionMismatch {
                what: "initial distribution",
                got: initial.len(),
                expected: num_states,
            });
        }
        if let Err((i, v, sum)) = check_distribution(&initial) {
            if i != usize::MAX {
                return Err(CoreError::NegativeProbability { index: i, value: v });
            }
            return Err(CoreError::UnnormalizedInitial { sum });
        }
        Ok(Self { embodiments, prior, initial, num_states, num_actions })
    }

    /// Uniform prior over the given embodiments.
    pub fn with_uniform_prior(embodiments: Vec<Embodiment>, initial: Vec<f64>) -> Result<Self, CoreError> {
        let n = embodiments.len().max(1);
        let prior = vec![1.0 / n as f64; embodiments.len()];
        Self::new(embodiments, prior, initial)
    }

    pub fn len(&self) -> usize {
        self.embodiments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embodiments.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn embodiment(&self, e: usize) -> &Embodiment {
        &self.embodiments[e]
    }

    pub fn embodiments(&self) -> &[Embodiment] {
        &self.embodiments
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// `P_e(s' | s, a)` for a unified action `a`.
    pub fn transition_prob(&self, e: usize, s: usize, a: usize, s2: usize) -> f64 {
        let em = &self.embodiments[e];
        em.kernel.prob(s, em.project(a), s2)
    }

    /// Next-state row for a unified action.
    pub fn transition_row(&self, e: usize, s: usize, a: usize) -> &[f64] {
        let em = &self.embodiments[e];
        em.kernel.row(s, em.project(a))
    }
}

/// Index layout for policies conditioned on state, skill, and inferred
/// context. Plain state policies use one skill and one context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub num_states: usize,
    pub num_skills: usize,
    pub num_contexts: usize,
}

impl PolicyShape {
    pub fn states_only(num_states: usize) -> Self {
        Self { num_states, num_skills: 1, num_contexts: 1 }
    }

    pub fn num_keys(&self) -> usize {
        self.num_states * self.num_skills * self.num_contexts
    }

    /// Mixed-radix key; states vary fastest.
    pub fn key(&self, state: usize, skill: usize, context: usize) -> usize {
        debug_assert!(state < self.num_states && skill < self.num_skills && context < self.num_contexts);
        (skill * self.num_contexts + context) * self.num_states + state
    }

    pub fn is_states_only(&self) -> bool {
        self.num_skills == 1 && self.num_contexts == 1
    }
}

/// Stochastic policy over unified actions, stored as explicit rows.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    shape: PolicyShape,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(shape: PolicyShape, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self { shape, num_actions, probs: vec![p; shape.num_keys() * num_actions] }
    }

    /// Build from rows laid out as `probs[key * num_actions + a]`.
    pub fn from_probs(shape: PolicyShape, num_actions: usize, probs: Vec<f64>) -> Result<Self, CoreError> {
        if probs.len() != shape.num_keys() * num_actions {
            return Err(CoreError::DimensionMismatch {
                what: "policy table",
                got: probs.len(),
                expected: shape.num_keys() * num_actions,
            });
        }
        for key in 0..shape.num_keys() {
            let row = &probs[key * num_actions..(key + 1) * num_actions];
            if let Err((i, v, sum)) = check_distribution(row) {
                if i != usize::MAX {
                    return Err(CoreError::NegativeProbability { index: key * num_actions + i, value: v });
                }
                return Err(CoreError::UnnormalizedRow { state: key, action: 0, sum });
            }
        }
        Ok(Self { shape, num_actions, probs })
    }

    /// Deterministic state policy from one chosen action per key.
    pub fn deterministic(shape: PolicyShape, num_actions: usize, choices: &[usize]) -> Result<Self, CoreError> {
        if choices.len() != shape.num_keys() {
            return Err(CoreError::DimensionMismatch {
                what: "policy choices",
                got: choices.len(),
                expected: shape.num_keys(),
            });
        }
        let mut probs = vec![0.0; shape.num_keys() * num_actions];
        for (key, &a) in choices.iter().enumerate() {
            if a >= num_actions {
                return Err(CoreError::DimensionMismatch { what: "policy choice", got: a, expected: num_actions });
            }
            probs[key * num_actions + a] = 1.0;
        }
        Ok(Self { shape, num_actions, probs })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, key: usize, action: usize) -> f64 {
        self.probs[key * self.num_actions + action]
    }

    pub fn row(&self, key: usize) -> &[f64] {
        &self.probs[key * self.num_actions..(key + 1) * self.num_actions]
    }

    pub fn set_row(&mut self, key: usize, row: &[f64]) -> Result<(), CoreError> {
        if row.len() != self.num_actions {
            return Err(CoreError::DimensionMismatch {
                what: "policy row",
                got: row.len(),
                expected: self.num_actions,
            });
        }
        if let Err((i, v, sum)) = check_distribution(row) {
            if i != usize::MAX {
                return Err(CoreError::NegativeProbability { index: i, value: v });
            }
            return Err(CoreError::UnnormalizedRow { state: key, action: 0, sum });
        }
        self.probs[key * self.num_actions..(key + 1) * self.num_actions].copy_from_slice(row);
        Ok(())
    }
}

/// State-action path: `states` has exactly one more entry than `actions`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self, CoreError> {
        if states.is_empty() || states.len() != actions.len() + 1 {
            return Err(CoreError::BadTrajectory(format!(
                "{} states with {} actions",
                states.len(),
                actions.len()
            )));
        }
        Ok(Self { states, actions })
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-state reward table for exact return computations.
#[derive(Debug, Clone)]
pub struct RewardTable {
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn reward(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Normalized discounted state-visitation distribution.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    probs: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self, CoreError> {
        if let Err((i, v, sum)) = check_distribution(&probs) {
            if i != usize::MAX {
                return Err(CoreError::NegativeProbability { index: i, value: v });
            }
            return Err(CoreError::UnnormalizedInitial { sum });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn l1_distance(&self, other: &OccupancyMeasure) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

fn check_gamma(gamma: f64) -> Result<(), CoreError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(CoreError::BadDiscount { gamma });
    }
    Ok(())
}

fn state_policy_key(policy: &TabularPolicy, state: usize) -> usize {
    debug_assert!(policy.shape().is_states_only(), "expected a plain state policy");
    state
}

/// Markov chain induced by a policy in one embodiment, as a column-stochastic
/// matrix `T[(s', s)] = P(s' | s)`.
fn induced_chain(set: &EmbodimentSet, e: usize, policy: &TabularPolicy) -> DMatrix<f64> {
    let n = set.num_states();
    let mut t = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        let row = policy.row(state_policy_key(policy, s));
        for (a, &pa) in row.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (s2, &ptr) in set.transition_row(e, s, a).iter().enumerate() {
                t[(s2, s)] += pa * ptr;
            }
        }
    }
    t
}

/// Exact discounted occupancy of a state policy in one embodiment, via the
/// linear solve `(I - gamma T) x = mu0`, `d = (1 - gamma) x`.
pub fn occupancy(
    set: &EmbodimentSet,
    e: usize,
    policy: &TabularPolicy,
    gamma: f64,
) -> Result<OccupancyMeasure, CoreError> {
    check_gamma(gamma)?;
    let n = set.num_states();
    let t = induced_chain(set, e, policy);
    let mut m = DMatrix::<f64>::identity(n, n);
    m -= t * gamma;
    let mu = DVector::from_column_slice(set.initial());
    let x = m
        .lu()
        .solve(&mu)
        .ok_or_else(|| CoreError::SingularSystem(format!("embodiment {e}, gamma {gamma}")))?;
    let probs: Vec<f64> = x.iter().map(|&v| (v * (1.0 - gamma)).max(0.0)).collect();
    // Rounding can leave the solution off the simplex by ~1e-15; renormalize.
    let sum: f64 = probs.iter().sum();
    OccupancyMeasure::from_probs(probs.iter().map(|p| p / sum).collect())
}

/// Prior-weighted average of per-embodiment occupancies.
pub fn mixture_occupancy(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    gamma: f64,
) -> Result<OccupancyMeasure, CoreError> {
    let n = set.num_states();
    let mut mix = vec![0.0; n];
    for e in 0..set.len() {
        let d = occupancy(set, e, policy, gamma)?;
        for (m, &p) in mix.iter_mut().zip(d.probs()) {
            *m += set.prior()[e] * p;
        }
    }
    OccupancyMeasure::from_probs(mix)
}

/// Distributions of the state at times `0..=horizon` under a state policy.
pub fn state_distribution_sequence(
    set: &EmbodimentSet,
    e: usize,
    policy: &TabularPolicy,
    horizon: usize,
) -> Vec<Vec<f64>> {
    let t = induced_chain(set, e, policy);
    let mut out = Vec::with_capacity(horizon + 1);
    let mut d = DVector::from_column_slice(set.initial());
    out.push(d.iter().cloned().collect());
    for _ in 0..horizon {
        d = &t * d;
        out.push(d.iter().cloned().collect());
    }
    out
}

/// Log-probability of a full path in one embodiment under a state policy.
/// Returns `LOG_ZERO` for impossible paths.
pub fn trajectory_logprob(
    set: &EmbodimentSet,
    e: usize,
    policy: &TabularPolicy,
    traj: &Trajectory,
) -> Result<f64, CoreError> {
    for &s in &traj.states {
        if s >= set.num_states() {
            return Err(CoreError::BadTrajectory(format!("state {s} out of range")));
        }
    }
    for &a in &traj.actions {
        if a >= set.num_actions() {
            return Err(CoreError::BadTrajectory(format!("action {a} out of range")));
        }
    }
    let mut lp = safe_ln(set.initial()[traj.states[0]]);
    for t in 0..traj.len() {
        let s = traj.states[t];
        let a = traj.actions[t];
        lp += safe_ln(policy.prob(state_policy_key(policy, s), a));
        lp += safe_ln(set.transition_prob(e, s, a, traj.states[t + 1]));
        if lp == LOG_ZERO {
            return Ok(LOG_ZERO);
        }
    }
    Ok(lp)
}

/// Log-probability of a path under the prior-weighted embodiment mixture.
pub fn mixture_trajectory_logprob(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    traj: &Trajectory,
) -> Result<f64, CoreError> {
    let mut terms = Vec::with_capacity(set.len());
    for e in 0..set.len() {
        let lp = trajectory_logprob(set, e, policy, traj)?;
        terms.push(safe_ln(set.prior()[e]) + lp);
    }
    Ok(log_sum_exp(&terms))
}

/// Exact discounted return `<d, r> / (1 - gamma)` of a state reward.
pub fn expected_return(occ: &OccupancyMeasure, reward: &RewardTable, gamma: f64) -> Result<f64, CoreError> {
    check_gamma(gamma)?;
    if reward.values().len() != occ.len() {
        return Err(CoreError::DimensionMismatch {
            what: "reward table",
            got: reward.values().len(),
            expected: occ.len(),
        });
    }
    let dot: f64 = occ.probs().iter().zip(reward.values()).map(|(d, r)| d * r).sum();
    Ok(dot / (1.0 - gamma))
}

/// Sample one state in one embodiment under a unified action.
pub fn step(set: &EmbodimentSet, e: usize, s: usize, a: usize, rng: &mut ChaCha8Rng) -> usize {
    sample_index(set.transition_row(e, s, a), rng)
}

/// Sample a path of `horizon` transitions under a state policy.
pub fn rollout(
    set: &EmbodimentSet,
    e: usize,
    policy: &TabularPolicy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = sample_index(set.initial(), rng);
    states.push(s);
    for _ in 0..horizon {
        let a = sample_index(policy.row(state_policy_key(policy, s)), rng);
        s = step(set, e, s, a, rng);
        actions.push(a);
        states.push(s);
    }
    Trajectory { states, actions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::substream;

    /// Two states, two actions. Action 0 stays, action 1 swaps.
    fn swap_world() -> EmbodimentSet {
        let kernel = TransitionKernel::deterministic(2, 2, &[vec![0, 1], vec![1, 0]]).unwrap();
        let em = Embodiment::direct("swap", kernel);
        EmbodimentSet::with_uniform_prior(vec![em], vec![1.0, 0.0]).unwrap()
    }

    fn always(action: usize) -> TabularPolicy {
        TabularPolicy::deterministic(PolicyShape::states_only(2), 2, &[action, action]).unwrap()
    }

    #[test]
    fn kernel_rejects_unnormalized_rows() {
        let err = TransitionKernel::new(1, 1, vec![0.5]).unwrap_err();
        assert!(matches!(err, CoreError::UnnormalizedRow { .. }));
    }

    #[test]
    fn kernel_rejects_negative_entries() {
        let err = TransitionKernel::new(1, 1, vec![-0.25; 1]).unwrap_err();
        assert!(matches!(err, CoreError::NegativeProbability { .. }));
    }

    #[test]
    fn projector_bounds_are_enforced() {
        let kernel = TransitionKernel::deterministic(2, 1, &[vec![0], vec![1]]).unwrap();
        let err = Embodiment::new("bad", kernel, vec![0, 3]).unwrap_err();
        assert!(matches!(err, CoreError::BadProjection { .. }));
    }

    #[test]
    fn occupancy_of_a_deterministic_cycle() {
        // Swapping every step from state 0 visits 0, 1, 0, 1, ... so the
        // discounted visitation is (1, gamma) / (1 + gamma).
        let set = swap_world();
        let gamma = 0.9;
        let d = occupancy(&set, 0, &always(1), gamma).unwrap();
        assert!((d.probs()[0] - 1.0 / 1.9).abs() < 1e-12);
        assert!((d.probs()[1] - 0.9 / 1.9).abs() < 1e-12);
    }

    #[test]
    fn occupancy_matches_discounted_forward_sums() {
        let set = swap_world();
        let shape = PolicyShape::states_only(2);
        let policy = TabularPolicy::from_probs(shape, 2, vec![0.3, 0.7, 0.8, 0.2]).unwrap();
        let gamma = 0.85f64;
        let horizon = 400;
        let seq = state_distribution_sequence(&set, 0, &policy, horizon);
        let mut acc = vec![0.0; 2];
        for (t, dt) in seq.iter().enumerate() {
            let w = (1.0 - gamma) * gamma.powi(t as i32);
            for (a, &p) in acc.iter_mut().zip(dt) {
                *a += w * p;
            }
        }
        let d = occupancy(&set, 0, &policy, gamma).unwrap();
        for (exact, approx) in d.probs().iter().zip(&acc) {
            assert!((exact - approx).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_return_of_the_cycle() {
        let set = swap_world();
        let gamma = 0.9;
        let d = occupancy(&set, 0, &always(1), gamma).unwrap();
        let j = expected_return(&d, &RewardTable::new(vec![1.0, 0.0]), gamma).unwrap();
        // 1 + gamma^2 + gamma^4 + ... = 1 / (1 - gamma^2)
        assert!((j - 1.0 / (1.0 - gamma * gamma)).abs() < 1e-10);
        assert!((j - 5.263157894736842).abs() < 1e-12);
    }

    #[test]
    fn mixture_occupancy_is_the_prior_average() {
        let stay = TransitionKernel::deterministic(2, 2, &[vec![0, 1], vec![1, 0]]).unwrap();
        let drift = TransitionKernel::deterministic(2, 2, &[vec![1, 1], vec![0, 0]]).unwrap();
        let set = EmbodimentSet::new(
            vec![Embodiment::direct("a", stay), Embodiment::direct("b", drift)],
            vec![0.25, 0.75],
            vec![0.5, 0.5],
        )
        .unwrap();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 2);
        let gamma = 0.7;
        let mix = mixture_occupancy(&set, &policy, gamma).unwrap();
        let d0 = occupancy(&set, 0, &policy, gamma).unwrap();
        let d1 = occupancy(&set, 1, &policy, gamma).unwrap();
        for s in 0..2 {
            let want = 0.25 * d0.probs()[s] + 0.75 * d1.probs()[s];
            assert!((mix.probs()[s] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_logprob_multiplies_along_the_path() {
        let set = swap_world();
        let shape = PolicyShape::states_only(2);
        let policy = TabularPolicy::from_probs(shape, 2, vec![0.3, 0.7, 0.8, 0.2]).unwrap();
        let traj = Trajectory::new(vec![0, 1, 1], vec![1, 0]).unwrap();
        let lp = trajectory_logprob(&set, 0, &policy, &traj).unwrap();
        // mu0(0) * pi(1|0) * P(1|0,1) * pi(0|1) * P(1|1,0)
        let want = (1.0f64).ln() + 0.7f64.ln() + 0.8f64.ln();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn impossible_paths_have_log_zero_probability() {
        let set = swap_world();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 2);
        // Action 1 from state 0 lands in state 1, never back in 0.
        let traj = Trajectory::new(vec![0, 0], vec![1]).unwrap();
        let lp = trajectory_logprob(&set, 0, &policy, &traj).unwrap();
        assert!(lp == LOG_ZERO);
        // Starting outside the support of mu0 is also impossible.
        let traj2 = Trajectory::new(vec![1, 0], vec![1]).unwrap();
        assert!(trajectory_logprob(&set, 0, &policy, &traj2).unwrap() == LOG_ZERO);
    }

    #[test]
    fn mixture_logprob_averages_in_probability_space() {
        let stay = TransitionKernel::deterministic(2, 2, &[vec![0, 1], vec![1, 0]]).unwrap();
        let swap = TransitionKernel::deterministic(2, 2, &[vec![1, 0], vec![0, 1]]).unwrap();
        let set = EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("stay", stay), Embodiment::direct("swap", swap)],
            vec![1.0, 0.0],
        )
        .unwrap();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 2);
        let traj = Trajectory::new(vec![0, 0], vec![0]).unwrap();
        let lp = mixture_trajectory_logprob(&set, &policy, &traj).unwrap();
        // Possible only under "stay": 0.5 * (1 * 0.5 * 1).
        assert!((lp - (0.25f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn rollout_frequencies_match_exact_occupancy() {
        let mut rng = substream(11, &[0]);
        let stoch = TransitionKernel::new(
            3,
            2,
            vec![
                0.6, 0.3, 0.1, /* s0 a0 */ 0.1, 0.1, 0.8, /* s0 a1 */
                0.2, 0.5, 0.3, /* s1 a0 */ 0.4, 0.4, 0.2, /* s1 a1 */
                0.3, 0.3, 0.4, /* s2 a0 */ 0.7, 0.2, 0.1, /* s2 a1 */
            ],
        )
        .unwrap();
        let set = EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("stoch", stoch)],
            vec![1.0, 0.0, 0.0],
        )
        .unwrap();
        let shape = PolicyShape::states_only(3);
        let policy =
            TabularPolicy::from_probs(shape, 2, vec![0.5, 0.5, 0.2, 0.8, 0.9, 0.1]).unwrap();
        let gamma = 0.9;
        let exact = occupancy(&set, 0, &policy, gamma).unwrap();

        let horizon = 120;
        let episodes = 800;
        let mut freq = vec![0.0; 3];
        for _ in 0..episodes {
            let traj = rollout(&set, 0, &policy, horizon, &mut rng);
            for (t, &s) in traj.states.iter().take(horizon).enumerate() {
                freq[s] += (1.0 - gamma) * gamma.powi(t as i32);
            }
        }
        let norm: f64 = freq.iter().sum();
        for f in &mut freq {
            *f /= norm;
        }
        let l1: f64 = exact
            .probs()
            .iter()
            .zip(&freq)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 0.02, "empirical occupancy off by {l1}");
    }

    #[test]
    fn policy_shape_keys_are_disjoint() {
        let shape = PolicyShape { num_states: 3, num_skills: 2, num_contexts: 4 };
        let mut seen = vec![false; shape.num_keys()];
        for skill in 0..2 {
            for context in 0..4 {
                for state in 0..3 {
                    let k = shape.key(state, skill, context);
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn trajectory_requires_one_more_state_than_action() {
        assert!(Trajectory::new(vec![0, 1], vec![0]).is_ok());
        assert!(Trajectory::new(vec![0], vec![0]).is_err());
        assert!(Trajectory::new(vec![], vec![]).is_err());
    }
}
