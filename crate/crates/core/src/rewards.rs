//! Intrinsic reward signals and their compositions.
//!
//! The identification reward log p(e) - log q(e|history) pushes the policy
//! toward behavior every embodiment can produce equally well. It can be
//! paired with a Dirichlet-count surprise bonus (exploration) or with a
//! skill-identification bonus (skill discovery). Compositions are selected
//! by name through a small strategy registry so configs and the CLI can
//! pick them without code changes.

use crate::error::CoreError;
use crate::mdp::{EmbodimentSet, TabularPolicy};
use crate::softmax::SparseSoftmax;
use crate::util::{kl_divergence, log_sum_exp, safe_ln};

/// Per-step reward components, produced by the agent loop and folded by a
/// strategy.
#[derive(Debug, Clone, Copy, Default)]
pub struct RewardParts {
    pub identification: f64,
    pub surprise: f64,
    pub skill: f64,
}

/// A named intrinsic-reward composition.
pub trait IntrinsicReward: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether the identification reward (and thus the embodiment
    /// discriminator) is active.
    fn uses_identification(&self) -> bool {
        false
    }
    /// Whether a transition-surprise model must be maintained.
    fn uses_surprise(&self) -> bool {
        false
    }
    /// Number of skills when skill discovery is active.
    fn skill_count(&self) -> Option<usize> {
        None
    }
    /// Weighted sum of the active components.
    fn combine(&self, parts: &RewardParts) -> f64;
}

struct IdentificationOnly {
    weight: f64,
}

impl IntrinsicReward for IdentificationOnly {
    fn name(&self) -> &'static str {
        KIND_CE
    }
    fn uses_identification(&self) -> bool {
        true
    }
    fn combine(&self, parts: &RewardParts) -> f64 {
        self.weight * parts.identification
    }
}

struct SurpriseOnly {
    weight: f64,
}

impl IntrinsicReward for SurpriseOnly {
    fn name(&self) -> &'static str {
        KIND_LBS
    }
    fn uses_surprise(&self) -> bool {
        true
    }
    fn combine(&self, parts: &RewardParts) -> f64 {
        self.weight * parts.surprise
    }
}

struct SkillOnly {
    weight: f64,
    skills: usize,
}

impl IntrinsicReward for SkillOnly {
    fn name(&self) -> &'static str {
        KIND_DIAYN
    }
    fn skill_count(&self) -> Option<usize> {
        Some(self.skills)
    }
    fn combine(&self, parts: &RewardParts) -> f64 {
        self.weight * parts.skill
    }
}

struct IdentificationPlusSurprise {
    weights: [f64; 2],
}

impl IntrinsicReward for IdentificationPlusSurprise {
    fn name(&self) -> &'static str {
        KIND_CE_LBS
    }
    fn uses_identification(&self) -> bool {
        true
    }
    fn uses_surprise(&self) -> bool {
        true
    }
    fn combine(&self, parts: &RewardParts) -> f64 {
        self.weights[0] * parts.identification + self.weights[1] * parts.surprise
    }
}

struct IdentificationPlusSkill {
    weights: [f64; 2],
    skills: usize,
}

impl IntrinsicReward for IdentificationPlusSkill {
    fn name(&self) -> &'static str {
        KIND_CE_DIAYN
    }
    fn uses_identification(&self) -> bool {
        true
    }
    fn skill_count(&self) -> Option<usize> {
        Some(self.skills)
    }
    fn combine(&self, parts: &RewardParts) -> f64 {
        self.weights[0] * parts.identification + self.weights[1] * parts.skill
    }
}

pub const KIND_CE: &str = "ce";
pub const KIND_LBS: &str = "lbs";
pub const KIND_DIAYN: &str = "diayn";
pub const KIND_CE_LBS: &str = "ce+lbs";
pub const KIND_CE_DIAYN: &str = "ce+diayn";

/// Registered composition names, in registry order.
pub fn reward_kind_names() -> &'static [&'static str] {
    &[KIND_CE, KIND_LBS, KIND_DIAYN, KIND_CE_LBS, KIND_CE_DIAYN]
}

/// Declarative selection of an intrinsic-reward composition.
#[derive(Debug, Clone)]
pub struct IntrinsicRewardSpec {
    /// Registry key; one of `reward_kind_names()`.
    pub kind: String,
    /// Per-component weights; empty means 1.0 for each component.
    pub weights: Vec<f64>,
    /// Skill count, required by skill-bearing kinds.
    pub skill_count: Option<usize>,
}

impl IntrinsicRewardSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), weights: Vec::new(), skill_count: None }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_skills(mut self, k: usize) -> Self {
        self.skill_count = Some(k);
        self
    }

    fn resolved_weights(&self, components: usize) -> Result<Vec<f64>, CoreError> {
        let w = if self.weights.is_empty() {
            vec![1.0; components]
        } else {
            self.weights.clone()
        };
        if w.len() != components {
            return Err(CoreError::BadConfig {
                field: "reward.weights",
                message: format!("expected {components} weights, got {}", w.len()),
            });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite { what: "reward weight" });
        }
        Ok(w)
    }

    fn resolved_skills(&self) -> Result<usize, CoreError> {
        let k = self.skill_count.ok_or(CoreError::BadConfig {
            field: "reward.skills",
            message: "skill count required for skill-bearing reward kinds".into(),
        })?;
        if k < 2 {
            return Err(CoreError::BadConfig {
                field: "reward.skills",
                message: format!("need at least 2 skills, got {k}"),
            });
        }
        Ok(k)
    }

    /// Instantiate the named strategy.
    pub fn build(&self) -> Result<Box<dyn IntrinsicReward>, CoreError> {
        match self.kind.as_str() {
            KIND_CE => Ok(Box::new(IdentificationOnly { weight: self.resolved_weights(1)?[0] })),
            KIND_LBS => Ok(Box::new(SurpriseOnly { weight: self.resolved_weights(1)?[0] })),
            KIND_DIAYN => Ok(Box::new(SkillOnly {
                weight: self.resolved_weights(1)?[0],
                skills: self.resolved_skills()?,
            })),
            KIND_CE_LBS => {
                let w = self.resolved_weights(2)?;
                Ok(Box::new(IdentificationPlusSurprise { weights: [w[0], w[1]] }))
            }
            KIND_CE_DIAYN => {
                let w = self.resolved_weights(2)?;
                Ok(Box::new(IdentificationPlusSkill {
                    weights: [w[0], w[1]],
                    skills: self.resolved_skills()?,
                }))
            }
            other => Err(CoreError::BadConfig {
                field: "reward.kind",
                message: format!("unknown kind {other:?}; known: {:?}", reward_kind_names()),
            }),
        }
    }
}

/// Identification reward for a whole trajectory: log p(e) minus the
/// estimated log-posterior of the true embodiment.
pub fn r_ce_trajectory(
    set: &EmbodimentSet,
    q_log_posterior: &[f64],
    embodiment: usize,
) -> Result<f64, CoreError> {
    if q_log_posterior.len() != set.len() {
        return Err(CoreError::DimensionMismatch {
            what: "log posterior",
            got: q_log_posterior.len(),
            expected: set.len(),
        });
    }
    let lq = q_log_posterior[embodiment];
    if !lq.is_finite() {
        return Err(CoreError::NonFinite { what: "log posterior of the true embodiment" });
    }
    Ok(safe_ln(set.prior()[embodiment]) - lq)
}

/// Per-step identification reward on the current history window's
/// discriminator output. Same formula as the trajectory form.
pub fn r_ce_step(
    disc_log_posterior: &[f64],
    set: &EmbodimentSet,
    embodiment: usize,
) -> Result<f64, CoreError> {
    r_ce_trajectory(set, disc_log_posterior, embodiment)
}

/// Dirichlet-count transition model shared across embodiments. The
/// surprise of an observed transition is the KL divergence from the
/// pre-update posterior predictive to the post-update one, in closed form
/// from the counts.
#[derive(Debug, Clone)]
pub struct SurpriseModel {
    num_states: usize,
    num_actions: usize,
    alpha: f64,
    counts: Vec<f64>,
}

impl SurpriseModel {
    pub fn new(num_states: usize, num_actions: usize, alpha: f64) -> Self {
        Self { num_states, num_actions, alpha, counts: vec![0.0; num_states * num_actions * num_states] }
    }

    fn row_base(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    /// Posterior-predictive next-state distribution for a row.
    pub fn predictive(&self, s: usize, a: usize) -> Vec<f64> {
        let base = self.row_base(s, a);
        let row = &self.counts[base..base + self.num_states];
        let total: f64 = row.iter().sum::<f64>() + self.alpha * self.num_states as f64;
        row.iter().map(|&c| (c + self.alpha) / total).collect()
    }

    /// Surprise of observing the transition now, without ingesting it.
    pub fn peek(&self, s: usize, a: usize, s2: usize) -> f64 {
        let before = self.predictive(s, a);
        let base = self.row_base(s, a);
        let row = &self.counts[base..base + self.num_states];
        let total: f64 = row.iter().sum::<f64>() + self.alpha * self.num_states as f64;
        let after: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(i, &c)| (c + self.alpha + if i == s2 { 1.0 } else { 0.0 }) / (total + 1.0))
            .collect();
        kl_divergence(&before, &after)
    }

    /// Surprise of the transition, then ingest it into the counts.
    pub fn observe(&mut self, s: usize, a: usize, s2: usize) -> f64 {
        let surprise = self.peek(s, a, s2);
        let idx = self.row_base(s, a) + s2;
        self.counts[idx] += 1.0;
        surprise
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn set_counts(&mut self, counts: Vec<f64>) -> Result<(), CoreError> {
        if counts.len() != self.counts.len() {
            return Err(CoreError::DimensionMismatch {
                what: "surprise counts",
                got: counts.len(),
                expected: self.counts.len(),
            });
        }
        if let Some((i, &v)) = counts.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(CoreError::NegativeProbability { index: i, value: v });
        }
        self.counts = counts;
        Ok(())
    }
}

/// Default symmetric pseudo-count of the surprise model.
pub const SURPRISE_ALPHA: f64 = 1.0;

/// Linear softmax skill classifier on the current state.
///
/// In joint mode the classes are (skill, embodiment) pairs, matching a
/// discriminator that predicts both at once; skill and embodiment
/// posteriors come out by marginalization. Plain mode is the special case
/// of one embodiment.
#[derive(Debug, Clone)]
pub struct SkillDiscriminator {
    num_states: usize,
    num_skills: usize,
    num_embodiments: usize,
    core: SparseSoftmax,
}

impl SkillDiscriminator {
    pub fn new(num_states: usize, num_skills: usize) -> Self {
        Self::joint(num_states, num_skills, 1)
    }

    pub fn joint(num_states: usize, num_skills: usize, num_embodiments: usize) -> Self {
        Self {
            num_states,
            num_skills,
            num_embodiments,
            core: SparseSoftmax::new(num_skills * num_embodiments, num_states + 1),
        }
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn num_embodiments(&self) -> usize {
        self.num_embodiments
    }

    fn features(&self, state: usize) -> Vec<usize> {
        vec![state, self.num_states]
    }

    fn class(&self, skill: usize, embodiment: usize) -> usize {
        skill * self.num_embodiments + embodiment
    }

    /// Log joint posterior over (skill, embodiment) classes.
    pub fn log_joint(&self, state: usize) -> Vec<f64> {
        self.core.log_posterior(&self.features(state))
    }

    /// Log q(z | s), embodiments marginalized out.
    pub fn log_skill_marginal(&self, state: usize) -> Vec<f64> {
        let joint = self.log_joint(state);
        (0..self.num_skills)
            .map(|z| {
                let terms: Vec<f64> =
                    (0..self.num_embodiments).map(|e| joint[self.class(z, e)]).collect();
                log_sum_exp(&terms)
            })
            .collect()
    }

    /// Log q(e | s), skills marginalized out.
    pub fn log_embodiment_marginal(&self, state: usize) -> Vec<f64> {
        let joint = self.log_joint(state);
        (0..self.num_embodiments)
            .map(|e| {
                let terms: Vec<f64> = (0..self.num_skills).map(|z| joint[self.class(z, e)]).collect();
                log_sum_exp(&terms)
            })
            .collect()
    }

    fn batch_examples(&self, batch: &[(usize, usize, usize)]) -> Vec<(Vec<usize>, usize)> {
        batch
            .iter()
            .map(|&(state, skill, embodiment)| (self.features(state), self.class(skill, embodiment)))
            .collect()
    }

    /// Mean cross-entropy on (state, skill, embodiment) triples.
    pub fn loss(&self, batch: &[(usize, usize, usize)], l2: f64) -> f64 {
        self.core.loss(&self.batch_examples(batch), l2)
    }

    /// One gradient step on (state, skill, embodiment) triples; returns the
    /// pre-step loss.
    pub fn train_step(&mut self, batch: &[(usize, usize, usize)], lr: f64, l2: f64) -> f64 {
        let examples = self.batch_examples(batch);
        self.core.step(&examples, lr, l2)
    }

    pub fn weights(&self) -> &[f64] {
        &self.core.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), CoreError> {
        if weights.len() != self.core.weights.len() {
            return Err(CoreError::DimensionMismatch {
                what: "skill discriminator weights",
                got: weights.len(),
                expected: self.core.weights.len(),
            });
        }
        self.core.weights = weights;
        Ok(())
    }
}

/// Skill-identification reward: log q(z|s) + log K, zero for a uniform
/// discriminator and at most log K.
pub fn r_diayn(disc: &SkillDiscriminator, state: usize, skill: usize) -> f64 {
    disc.log_skill_marginal(state)[skill] + (disc.num_skills() as f64).ln()
}

/// The two information terms of the skill-conditioned objective, by exact
/// enumeration: the embodiment identification term
/// E_e E_{tau|e}[log p(e|tau) - log p(e)] and the per-embodiment skill
/// information E_e KL(p(tau,z|e) || p(z|e) p(tau|e)).
pub fn skill_objective_terms(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    skill_prior: &[f64],
    horizon: usize,
) -> Result<(f64, f64), CoreError> {
    let space = crate::oracle::enumerate_skill_space(set, policy, skill_prior, horizon)?;
    let m = set.len();

    let mut embodiment_term = 0.0;
    for e in 0..m {
        let prior_e = space.embodiment_prior[e];
        for (idx, &pte) in space.per_embodiment[e].iter().enumerate() {
            if pte == 0.0 {
                continue;
            }
            let posterior = prior_e * pte / space.mixture[idx];
            embodiment_term += prior_e * pte * (safe_ln(posterior) - safe_ln(prior_e));
        }
    }

    let mut skill_term = 0.0;
    for e in 0..m {
        let prior_e = space.embodiment_prior[e];
        for (z, &pz) in space.skill_prior.iter().enumerate() {
            skill_term +=
                prior_e * pz * kl_divergence(&space.per_skill[z][e], &space.per_embodiment[e]);
        }
    }
    Ok((embodiment_term, skill_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Embodiment, PolicyShape, TransitionKernel};
    use crate::oracle::{sample_embodiment_set, sample_policy};
    use crate::util::substream;
    use rand::Rng;

    fn uniform_pair() -> EmbodimentSet {
        crate::geometry::counterexample_embodiments()
    }

    #[test]
    fn identification_reward_matches_hand_arithmetic() {
        let set = uniform_pair();
        // Posterior equal to the prior: no information, zero reward.
        let r = r_ce_trajectory(&set, &[0.5f64.ln(), 0.5f64.ln()], 0).unwrap();
        assert!(r.abs() < 1e-15);
        // Certain posterior on the true embodiment: log(1/2) - 0.
        let r = r_ce_trajectory(&set, &[0.0, f64::NEG_INFINITY], 0).unwrap();
        assert!((r - 0.5f64.ln()).abs() < 1e-12);
        assert!((r - -0.6931471805599453).abs() < 1e-12);
    }

    #[test]
    fn identification_reward_with_four_embodiments() {
        let kernel = TransitionKernel::deterministic(2, 2, &[vec![0, 1], vec![1, 0]]).unwrap();
        let ems: Vec<Embodiment> =
            (0..4).map(|i| Embodiment::direct(format!("e{i}"), kernel.clone())).collect();
        let set = EmbodimentSet::with_uniform_prior(ems, vec![0.5, 0.5]).unwrap();
        let mut lq = vec![0.25f64.ln(); 4];
        lq[2] = 0.1f64.ln();
        let r = r_ce_trajectory(&set, &lq, 2).unwrap();
        assert!((r - 0.9162907318741551).abs() < 1e-12);
    }

    #[test]
    fn non_finite_posterior_on_the_true_embodiment_is_an_error() {
        let set = uniform_pair();
        let err = r_ce_trajectory(&set, &[f64::NEG_INFINITY, 0.0], 0).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { .. }));
        let err = r_ce_step(&[f64::NAN, 0.0], &set, 0).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { .. }));
    }

    #[test]
    fn step_variant_is_the_same_formula() {
        let set = uniform_pair();
        let lq = [0.7f64.ln(), 0.3f64.ln()];
        let a = r_ce_trajectory(&set, &lq, 1).unwrap();
        let b = r_ce_step(&lq, &set, 1).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn exact_posterior_under_identical_dynamics_gives_zero_reward() {
        let kernel = TransitionKernel::new(2, 1, vec![0.4, 0.6, 0.7, 0.3]).unwrap();
        let set = EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("a", kernel.clone()), Embodiment::direct("b", kernel)],
            vec![1.0, 0.0],
        )
        .unwrap();
        let mut post = crate::inference::ExactPosterior::from_set(&set);
        let mut rng = substream(51, &[0]);
        let mut s = 0;
        for _ in 0..20 {
            let s2 = if rng.random::<f64>() < set.transition_prob(0, s, 0, 0) { 0 } else { 1 };
            post.observe(&set, s, 0, s2).unwrap();
            let lp: Vec<f64> = post.probs().iter().map(|&p| safe_ln(p)).collect();
            for e in 0..2 {
                let r = r_ce_trajectory(&set, &lp, e).unwrap();
                assert!(r.abs() < 1e-12);
            }
            s = s2;
        }
    }

    #[test]
    fn first_observation_surprise_in_closed_form() {
        let mut model = SurpriseModel::new(2, 1, SURPRISE_ALPHA);
        let got = model.observe(0, 0, 0);
        // KL((1/2,1/2) || (2/3,1/3)) = ln 3 - (3/2) ln 2.
        let want = 3.0f64.ln() - 1.5 * 2.0f64.ln();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.0589).abs() < 1e-4);
    }

    #[test]
    fn well_known_transitions_stop_surprising() {
        let mut model = SurpriseModel::new(2, 1, SURPRISE_ALPHA);
        model.counts[0] = 1e6;
        let s = model.peek(0, 0, 0);
        assert!(s < 1e-5, "surprise {s}");
    }

    #[test]
    fn surprise_is_positive_and_decreasing_on_repeats() {
        let mut model = SurpriseModel::new(3, 2, SURPRISE_ALPHA);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let s = model.observe(1, 0, 2);
            assert!(s > 0.0);
            assert!(s < last, "surprise must shrink: {s} after {last}");
            last = s;
        }
    }

    #[test]
    fn surprise_is_nonnegative_on_random_streams() {
        let mut rng = substream(53, &[0]);
        let mut model = SurpriseModel::new(3, 2, SURPRISE_ALPHA);
        for _ in 0..200 {
            let s = rng.random_range(0..3);
            let a = rng.random_range(0..2);
            let s2 = rng.random_range(0..3);
            assert!(model.observe(s, a, s2) >= 0.0);
        }
    }

    #[test]
    fn predictive_rows_are_distributions() {
        let mut rng = substream(54, &[0]);
        let mut model = SurpriseModel::new(3, 2, SURPRISE_ALPHA);
        for _ in 0..100 {
            model.observe(rng.random_range(0..3), rng.random_range(0..2), rng.random_range(0..3));
        }
        for s in 0..3 {
            for a in 0..2 {
                let row = model.predictive(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }

    #[test]
    fn untrained_skill_discriminator_gives_zero_reward() {
        let disc = SkillDiscriminator::new(3, 4);
        for s in 0..3 {
            for z in 0..4 {
                assert!(r_diayn(&disc, s, z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confident_skill_discriminator_approaches_log_k() {
        let mut disc = SkillDiscriminator::new(2, 4);
        // Bias logits chosen so q(.|s) is exactly (0.1, 0.3, 0.3, 0.3).
        let mut w = vec![0.0; disc.weights().len()];
        let targets = [0.1f64, 0.3, 0.3, 0.3];
        for (z, &t) in targets.iter().enumerate() {
            w[z * 3 + 2] = t.ln();
        }
        disc.set_weights(w).unwrap();
        let r = r_diayn(&disc, 0, 0);
        assert!((r - (0.1f64.ln() + 4.0f64.ln())).abs() < 1e-12);
        assert!((r - -0.9162907318741551).abs() < 1e-12);

        // Near-certain discriminator: reward approaches log K.
        let mut sharp = SkillDiscriminator::new(2, 4);
        let mut w = vec![0.0; sharp.weights().len()];
        w[1 * 3 + 2] = 40.0;
        sharp.set_weights(w).unwrap();
        assert!((r_diayn(&sharp, 0, 1) - 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn skill_reward_never_exceeds_log_k() {
        let mut rng = substream(55, &[0]);
        for _ in 0..20 {
            let mut disc = SkillDiscriminator::joint(3, 4, 2);
            let w: Vec<f64> =
                (0..disc.weights().len()).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            disc.set_weights(w).unwrap();
            for s in 0..3 {
                for z in 0..4 {
                    assert!(r_diayn(&disc, s, z) <= 4.0f64.ln() + 1e-12);
                }
                let lm = disc.log_skill_marginal(s);
                let total: f64 = lm.iter().map(|&l| l.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_discriminator_learns_separable_pairs() {
        let mut disc = SkillDiscriminator::joint(4, 2, 2);
        // State index encodes the (skill, embodiment) pair exactly.
        let batch: Vec<(usize, usize, usize)> =
            (0..4).map(|s| (s, s / 2, s % 2)).collect();
        let mut loss = f64::NAN;
        for _ in 0..400 {
            loss = disc.train_step(&batch, 0.5, 1e-4);
        }
        assert!(loss < 0.05, "loss {loss}");
        for &(s, z, e) in &batch {
            let joint = disc.log_joint(s);
            let best =
                (0..4).max_by(|&a, &b| joint[a].partial_cmp(&joint[b]).unwrap()).unwrap();
            assert_eq!(best, z * 2 + e);
        }
    }

    #[test]
    fn composition_weights_apply_per_component() {
        let ce_lbs = IntrinsicRewardSpec::new(KIND_CE_LBS).build().unwrap();
        let parts = RewardParts { identification: 0.0, surprise: 0.5, skill: 0.0 };
        assert!((ce_lbs.combine(&parts) - 0.5).abs() < 1e-15);

        let ce_diayn =
            IntrinsicRewardSpec::new(KIND_CE_DIAYN).with_skills(4).build().unwrap();
        let parts = RewardParts { identification: -0.69, skill: 1.39, surprise: 0.0 };
        assert!((ce_diayn.combine(&parts) - 0.70).abs() < 1e-9);

        let ce = IntrinsicRewardSpec::new(KIND_CE).build().unwrap();
        let parts = RewardParts { identification: -1.25, surprise: 9.0, skill: 9.0 };
        assert!((ce.combine(&parts) - -1.25).abs() < 1e-15);

        let weighted = IntrinsicRewardSpec::new(KIND_CE_LBS)
            .with_weights(vec![2.0, 0.5])
            .build()
            .unwrap();
        let parts = RewardParts { identification: 1.0, surprise: 4.0, skill: 0.0 };
        assert!((weighted.combine(&parts) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn equal_weight_composition_is_symmetric_in_its_components() {
        let ce_lbs = IntrinsicRewardSpec::new(KIND_CE_LBS).build().unwrap();
        let a = RewardParts { identification: 0.3, surprise: -1.7, skill: 0.0 };
        let b = RewardParts { identification: -1.7, surprise: 0.3, skill: 0.0 };
        assert_eq!(ce_lbs.combine(&a).to_bits(), ce_lbs.combine(&b).to_bits());
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        assert!(IntrinsicRewardSpec::new("nope").build().is_err());
        assert!(IntrinsicRewardSpec::new(KIND_DIAYN).build().is_err());
        assert!(IntrinsicRewardSpec::new(KIND_DIAYN).with_skills(1).build().is_err());
        assert!(IntrinsicRewardSpec::new(KIND_CE)
            .with_weights(vec![f64::NAN])
            .build()
            .is_err());
        assert!(IntrinsicRewardSpec::new(KIND_CE_LBS)
            .with_weights(vec![1.0])
            .build()
            .is_err());
        for &name in reward_kind_names() {
            let mut spec = IntrinsicRewardSpec::new(name);
            if name.contains(KIND_DIAYN) {
                spec = spec.with_skills(4);
            }
            let strat = spec.build().unwrap();
            assert_eq!(strat.name(), name);
        }
    }

    #[test]
    fn objective_terms_vanish_in_the_degenerate_cases() {
        let mut rng = substream(56, &[0]);
        // One embodiment: nothing to identify.
        let set = sample_embodiment_set(&mut rng, 2, 2, 1);
        let shape = PolicyShape { num_states: 2, num_skills: 2, num_contexts: 1 };
        let policy = sample_policy(&mut rng, shape, 2);
        let (ident, skill) = skill_objective_terms(&set, &policy, &[0.5, 0.5], 3).unwrap();
        assert!(ident.abs() < 1e-12);
        assert!(skill > 0.0);

        // Skill-independent policy: no skill information.
        let set2 = sample_embodiment_set(&mut rng, 2, 2, 2);
        let base = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let mut rows = Vec::new();
        for _z in 0..2 {
            for s in 0..2 {
                rows.extend(base.row(s).to_vec());
            }
        }
        let tied = TabularPolicy::from_probs(shape, 2, rows).unwrap();
        let (ident2, skill2) = skill_objective_terms(&set2, &tied, &[0.5, 0.5], 3).unwrap();
        assert!(skill2.abs() < 1e-12);
        assert!(ident2 >= 0.0);
    }

    #[test]
    fn objective_terms_are_nonnegative_information_quantities() {
        let mut rng = substream(57, &[0]);
        for _ in 0..5 {
            let set = sample_embodiment_set(&mut rng, 2, 2, 2);
            let shape = PolicyShape { num_states: 2, num_skills: 2, num_contexts: 1 };
            let policy = sample_policy(&mut rng, shape, 2);
            let prior = [0.3, 0.7];
            let (ident, skill) = skill_objective_terms(&set, &policy, &prior, 3).unwrap();
            assert!(ident >= -1e-12);
            assert!(skill >= -1e-12);
        }
    }
}
