//! Embodiment inference from interaction data.
//!
//! Two estimators of p(e | trajectory): an exact Bayesian posterior that
//! accumulates transition log-likelihoods (policy terms cancel because the
//! policy is shared across embodiments), and a learned linear-softmax
//! discriminator over a fixed-length window of recent state-action pairs.

use std::collections::VecDeque;

use crate::error::CoreError;
use crate::mdp::{EmbodimentSet, Trajectory};
use crate::softmax::SparseSoftmax;
use crate::util::{is_log_zero, normalize_log_weights, safe_ln};

/// Running Bayesian posterior over embodiments given observed transitions.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    prior_log: Vec<f64>,
    log_weights: Vec<f64>,
}

impl ExactPosterior {
    pub fn new(prior: &[f64]) -> Self {
        let prior_log: Vec<f64> = prior.iter().map(|&p| safe_ln(p)).collect();
        Self { log_weights: prior_log.clone(), prior_log }
    }

    pub fn from_set(set: &EmbodimentSet) -> Self {
        Self::new(set.prior())
    }

    /// Fold in one observed transition under a unified action. Errors when
    /// the accumulated evidence is impossible under every embodiment; the
    /// posterior is left untouched in that case.
    pub fn observe(&mut self, set: &EmbodimentSet, s: usize, a: usize, s2: usize) -> Result<(), CoreError> {
        let updated: Vec<f64> = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(e, &lw)| {
                if is_log_zero(lw) {
                    lw
                } else {
                    lw + safe_ln(set.transition_prob(e, s, a, s2))
                }
            })
            .collect();
        if updated.iter().all(|&lw| is_log_zero(lw)) {
            return Err(CoreError::ImpossibleEvidence);
        }
        self.log_weights = updated;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.log_weights.copy_from_slice(&self.prior_log);
    }

    /// Current posterior probabilities.
    pub fn probs(&self) -> Vec<f64> {
        normalize_log_weights(&self.log_weights)
    }

    /// Context embedding for conditioned policies: the posterior itself.
    pub fn context(&self) -> Vec<f64> {
        self.probs()
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }
}

/// Posterior computed in one pass over a complete path. Matches the
/// incremental estimator exactly.
pub fn posterior_from_trajectory(
    set: &EmbodimentSet,
    traj: &Trajectory,
) -> Result<Vec<f64>, CoreError> {
    let mut log_w = Vec::with_capacity(set.len());
    for e in 0..set.len() {
        let mut lw = safe_ln(set.prior()[e]);
        for t in 0..traj.len() {
            let (s, a, s2) = (traj.states[t], traj.actions[t], traj.states[t + 1]);
            if s >= set.num_states() || s2 >= set.num_states() {
                return Err(CoreError::BadTrajectory(format!("state out of range at step {t}")));
            }
            if a >= set.num_actions() {
                return Err(CoreError::BadTrajectory(format!("action out of range at step {t}")));
            }
            if is_log_zero(lw) {
                break;
            }
            lw += safe_ln(set.transition_prob(e, s, a, s2));
        }
        log_w.push(lw);
    }
    if log_w.iter().all(|&lw| is_log_zero(lw)) {
        return Err(CoreError::ImpossibleEvidence);
    }
    Ok(normalize_log_weights(&log_w))
}

/// Sliding window of the most recent state-action pairs, left-padded with
/// null tokens until enough history exists.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    len: usize,
    pairs: VecDeque<(usize, usize)>,
}

impl HistoryWindow {
    pub fn new(len: usize) -> Self {
        Self { len, pairs: VecDeque::with_capacity(len) }
    }

    pub fn push(&mut self, s: usize, a: usize) {
        if self.pairs.len() == self.len {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, a));
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Oldest-first slots, padded at the front with `None`.
    pub fn slots(&self) -> impl Iterator<Item = Option<(usize, usize)>> + '_ {
        let pad = self.len - self.pairs.len();
        (0..pad).map(|_| None).chain(self.pairs.iter().map(|&p| Some(p)))
    }
}

/// Linear softmax classifier over window transition counts.
///
/// The features are the counts of each (state, action, next state) triple
/// observed in the window, plus a constant bias. Transition counts are the
/// sufficient statistic here: the log-likelihood of a window under an
/// embodiment is linear in them, so the exact Bayesian window posterior lies
/// inside the model family (weights `ln T_e`, bias `ln p(e)`), and that
/// optimum does not move when the policy does. Richer encodings (state
/// marginals in particular) pick up policy-dependent signal that goes stale
/// as the policy drifts, and an intrinsic-reward agent farms the stale
/// errors. An example is stored as its active feature indexes, repeated per
/// occurrence.
#[derive(Debug, Clone)]
pub struct LearnedDiscriminator {
    num_states: usize,
    num_actions: usize,
    window_len: usize,
    core: SparseSoftmax,
}

pub use crate::softmax::LabeledExample;

impl LearnedDiscriminator {
    pub fn new(num_states: usize, num_actions: usize, num_classes: usize, window_len: usize) -> Self {
        let feature_dim = num_states * num_actions * num_states + 1;
        Self {
            num_states,
            num_actions,
            window_len,
            core: SparseSoftmax::new(num_classes, feature_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.core.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.core.num_classes
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.core.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), CoreError> {
        if weights.len() != self.core.weights.len() {
            return Err(CoreError::DimensionMismatch {
                what: "discriminator weights",
                got: weights.len(),
                expected: self.core.weights.len(),
            });
        }
        self.core.weights = weights;
        Ok(())
    }

    /// Active feature indexes for a window and the current state, one entry
    /// per transition occurrence. The window holds departure pairs, so each
    /// pair's landing state is the next pair's state, with the final pair
    /// landing on `current_state`; padding slots contribute nothing.
    pub fn featurize(&self, window: &HistoryWindow, current_state: usize) -> Vec<usize> {
        debug_assert_eq!(window.len(), self.window_len);
        let mut idx = Vec::with_capacity(self.window_len + 2);
        let mut pending: Option<(usize, usize)> = None;
        for entry in window.slots().flatten() {
            if let Some((s, a)) = pending {
                idx.push((s * self.num_actions + a) * self.num_states + entry.0);
            }
            pending = Some(entry);
        }
        if let Some((s, a)) = pending {
            idx.push((s * self.num_actions + a) * self.num_states + current_state);
        }
        idx.push(self.num_states * self.num_actions * self.num_states);
        idx
    }

    /// Log p(class | features), a log-softmax over the linear logits.
    pub fn log_posterior(&self, features: &[usize]) -> Vec<f64> {
        self.core.log_posterior(features)
    }

    pub fn posterior(&self, features: &[usize]) -> Vec<f64> {
        self.core.posterior(features)
    }

    /// Context embedding for conditioned policies: the predicted posterior
    /// over embodiments given the current window and state.
    pub fn context(&self, window: &HistoryWindow, current_state: usize) -> Vec<f64> {
        self.posterior(&self.featurize(window, current_state))
    }

    pub fn classify(&self, features: &[usize]) -> usize {
        self.core
            .logits(features)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Mean cross-entropy over a batch plus the ridge penalty.
    pub fn loss(&self, batch: &[LabeledExample], l2: f64) -> f64 {
        self.core.loss(batch, l2)
    }

    /// Gradient of `loss` with respect to every weight.
    pub fn loss_gradient(&self, batch: &[LabeledExample], l2: f64) -> Vec<f64> {
        self.core.gradient(batch, l2)
    }

    /// One full-batch gradient step. Returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[LabeledExample], lr: f64, l2: f64) -> f64 {
        self.core.step(batch, lr, l2)
    }
}

/// Default gradient step size for discriminator training.
pub const DISCRIMINATOR_LEARNING_RATE: f64 = 0.5;
/// Default ridge penalty for discriminator training.
pub const DISCRIMINATOR_RIDGE: f64 = 1e-4;
/// Default number of past state-action pairs the discriminator sees.
pub const DISCRIMINATOR_WINDOW: usize = 8;
