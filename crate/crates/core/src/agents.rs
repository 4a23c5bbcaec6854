//! Training loops on a tabular one-step actor-critic backbone.
//!
//! Pre-training collects per-embodiment episodes, trains the history
//! discriminator on labeled windows, and follows intrinsic rewards; the
//! policy is conditioned on the state, an optional skill, and a discretized
//! embodiment-context bucket. Fine-tuning re-trains the same tables on an
//! extrinsic reward, optionally anchored to the pre-trained policy by a
//! per-state KL penalty.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::inference::{
    HistoryWindow, LabeledExample, LearnedDiscriminator, DISCRIMINATOR_LEARNING_RATE,
    DISCRIMINATOR_WINDOW,
};
use crate::mdp::{
    state_distribution_sequence, step, EmbodimentSet, PolicyShape, RewardTable, TabularPolicy,
    Trajectory,
};
use crate::rewards::{
    r_ce_step, r_diayn, IntrinsicReward, IntrinsicRewardSpec, RewardParts, SkillDiscriminator,
    SurpriseModel, KIND_CE, SURPRISE_ALPHA,
};
use crate::util::{sample_index, substream};

/// Posterior mass the argmax embodiment needs before its bucket is used
/// instead of the shared "uncertain" bucket.
pub const CONTEXT_CONFIDENCE_THRESHOLD: f64 = 0.6;

/// Most recent trajectories kept per embodiment.
pub const BUFFER_CAPACITY: usize = 512;

/// Steps a chosen skill runs for before the meta-controller picks again.
pub const META_SUBHORIZON: usize = 8;

/// Scale of the uniform policy-logit init noise. Symmetry breaking matters:
/// under an exactly uniform policy, action-permuted embodiments induce
/// identical window distributions and the linear discriminator has provably
/// zero gradient, so identification could never start.
pub const POLICY_INIT_NOISE: f64 = 0.1;

/// Rounds of labeled windows kept for discriminator batches. The spurious
/// posterior sharpness on indistinguishable embodiments scales inversely
/// with batch size, so the batch must stay well above the feature count.
const DISCRIMINATOR_REPLAY_ROUNDS: usize = 16;

/// Full-batch epochs the discriminators may take per round. The
/// identification reward is only meaningful against a fitted posterior; a
/// single step per round lets the policy outrun the discriminator and chase
/// its errors instead of true indistinguishability.
const DISCRIMINATOR_MAX_EPOCHS: usize = 60;

/// Epoch loop stops once the loss improves by less than this.
const DISCRIMINATOR_LOSS_TOL: f64 = 1e-7;

/// Ridge for discriminators trained inside the collection loop. A batch
/// holds few episodes and windows within an episode share a label, so the
/// penalty must be strong enough that per-episode quirks shrink to zero
/// while patterns consistent across a class's episodes survive.
const ONLINE_RIDGE: f64 = 1e-2;

const TAG_PRETRAIN: u64 = 0x7072_6574;
const TAG_FINETUNE: u64 = 0x6669_6e65;
const TAG_META: u64 = 0x6d65_7461;
const TAG_EVAL: u64 = 0x6576_616c;
const TAG_INIT: u64 = 0x696e_6974;

/// Discretize a posterior into a conditioning bucket: the argmax id when
/// confident, else the shared uncertain bucket (index `posterior.len()`).
pub fn context_bucket(posterior: &[f64], threshold: f64) -> usize {
    let mut best = 0;
    for i in 1..posterior.len() {
        if posterior[i] > posterior[best] {
            best = i;
        }
    }
    if posterior[best] >= threshold {
        best
    } else {
        posterior.len()
    }
}

/// Policy key for a bucketed context, clamped so shapes with fewer context
/// slots (states-only fine-tuning in particular) accept the same traces.
fn conditioned_key(shape: PolicyShape, state: usize, skill: usize, bucket: usize) -> usize {
    shape.key(state, skill, bucket.min(shape.num_contexts - 1))
}

/// Knobs shared by the training entry points.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub horizon: usize,
    pub actor_rate: f64,
    pub critic_rate: f64,
    pub discriminator_rate: f64,
    pub entropy_bonus: f64,
    pub gamma: f64,
    /// Fine-tune KL anchor weight; 0 disables the penalty.
    pub beta: f64,
    pub context_threshold: f64,
    pub seed: u64,
    pub reward: IntrinsicRewardSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 10_000,
            finetune_steps: 1_000,
            horizon: 40,
            actor_rate: 0.1,
            critic_rate: 0.2,
            discriminator_rate: DISCRIMINATOR_LEARNING_RATE,
            entropy_bonus: 0.01,
            gamma: 0.99,
            beta: 0.0,
            context_threshold: CONTEXT_CONFIDENCE_THRESHOLD,
            seed: 0,
            reward: IntrinsicRewardSpec::new(KIND_CE),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.pretrain_steps == 0 {
            return Err(CoreError::BadConfig {
                field: "pretrain_steps",
                message: "must be positive".into(),
            });
        }
        if self.finetune_steps > self.pretrain_steps {
            return Err(CoreError::BadConfig {
                field: "finetune_steps",
                message: format!(
                    "fine-tune budget {} exceeds pre-train budget {}",
                    self.finetune_steps, self.pretrain_steps
                ),
            });
        }
        if self.horizon == 0 {
            return Err(CoreError::BadConfig { field: "horizon", message: "must be positive".into() });
        }
        for (field, value) in [
            ("actor_rate", self.actor_rate),
            ("critic_rate", self.critic_rate),
            ("discriminator_rate", self.discriminator_rate),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CoreError::BadConfig {
                    field,
                    message: format!("rate must be positive and finite, got {value}"),
                });
            }
        }
        if !(self.entropy_bonus >= 0.0 && self.entropy_bonus.is_finite()) {
            return Err(CoreError::BadConfig {
                field: "entropy_bonus",
                message: format!("must be nonnegative, got {}", self.entropy_bonus),
            });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CoreError::BadDiscount { gamma: self.gamma });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(CoreError::BadConfig {
                field: "beta",
                message: format!("must be nonnegative and finite, got {}", self.beta),
            });
        }
        if !(self.context_threshold > 0.0 && self.context_threshold <= 1.0) {
            return Err(CoreError::BadConfig {
                field: "context_threshold",
                message: format!("must lie in (0, 1], got {}", self.context_threshold),
            });
        }
        Ok(())
    }
}

/// Everything a training run accumulates.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub shape: PolicyShape,
    pub num_actions: usize,
    /// Policy logits, key-major; `policy` always holds their softmax.
    pub logits: Vec<f64>,
    pub policy: TabularPolicy,
    pub critic: Vec<f64>,
    pub discriminator: LearnedDiscriminator,
    pub surprise: Option<SurpriseModel>,
    pub skills: Option<SkillDiscriminator>,
    pub buffers: Vec<VecDeque<Trajectory>>,
    pub env_steps: usize,
    pub episodes: usize,
}

impl AgentState {
    /// Fresh tables for a reward strategy: near-uniform policy, zero critic,
    /// and whichever auxiliary models the strategy needs. Logits start at
    /// small seeded noise rather than zero so that action-permuted
    /// embodiments do not produce exactly identical rollouts.
    pub fn fresh(
        set: &EmbodimentSet,
        shape: PolicyShape,
        strategy: &dyn IntrinsicReward,
        seed: u64,
    ) -> Self {
        let ns = set.num_states();
        let na = set.num_actions();
        let m = set.len();
        let mut rng = substream(seed, &[TAG_INIT]);
        let logits: Vec<f64> = (0..shape.num_keys() * na)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * POLICY_INIT_NOISE)
            .collect();
        let mut state = Self {
            shape,
            num_actions: na,
            logits,
            policy: TabularPolicy::uniform(shape, na),
            critic: vec![0.0; shape.num_keys()],
            discriminator: LearnedDiscriminator::new(ns, na, m, DISCRIMINATOR_WINDOW),
            surprise: strategy.uses_surprise().then(|| SurpriseModel::new(ns, na, SURPRISE_ALPHA)),
            skills: strategy.skill_count().map(|k| SkillDiscriminator::joint(ns, k, m)),
            buffers: (0..m).map(|_| VecDeque::new()).collect(),
            env_steps: 0,
            episodes: 0,
        };
        state.sync_policy();
        state
    }

    /// Recompute every policy row from the logits; needed after bulk logit
    /// edits (tests, checkpoint restore).
    pub fn sync_policy(&mut self) {
        for key in 0..self.shape.num_keys() {
            self.refresh_policy_row(key);
        }
    }

    fn refresh_policy_row(&mut self, key: usize) {
        let base = key * self.num_actions;
        let row = softmax(&self.logits[base..base + self.num_actions]);
        debug_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        debug_assert!(row.iter().all(|&p| p > 0.0));
        self.policy.set_row(key, &row).expect("softmax row is a distribution");
    }

    fn actor_step(&mut self, key: usize, action: usize, advantage: f64, config: &TrainConfig) {
        let dir = actor_direction(self.policy.row(key), action, advantage, config.entropy_bonus);
        let base = key * self.num_actions;
        for (a, d) in dir.iter().enumerate() {
            self.logits[base + a] += config.actor_rate * d;
        }
        self.refresh_policy_row(key);
    }

    fn kl_anchor_step(&mut self, key: usize, anchor: &[f64], kappa: f64) {
        let base = key * self.num_actions;
        let solved = kl_prox(&self.logits[base..base + self.num_actions], anchor, kappa);
        self.logits[base..base + self.num_actions].copy_from_slice(&solved);
        self.refresh_policy_row(key);
    }

    /// States-only view of the policy at a fixed skill and context bucket.
    pub fn state_policy_slice(&self, skill: usize, context: usize) -> TabularPolicy {
        let ns = self.shape.num_states;
        let mut probs = Vec::with_capacity(ns * self.num_actions);
        for s in 0..ns {
            probs.extend_from_slice(self.policy.row(self.shape.key(s, skill, context)));
        }
        TabularPolicy::from_probs(PolicyShape::states_only(ns), self.num_actions, probs)
            .expect("policy rows are distributions")
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Logit-space ascent direction for one visited action: advantage-weighted
/// score function plus the entropy-bonus gradient.
pub fn actor_direction(row: &[f64], action: usize, advantage: f64, entropy_bonus: f64) -> Vec<f64> {
    let entropy: f64 = -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    row.iter()
        .enumerate()
        .map(|(a, &p)| {
            let score = if a == action { 1.0 - p } else { -p };
            let ent = if p > 0.0 { -p * (p.ln() + entropy) } else { 0.0 };
            advantage * score + entropy_bonus * ent
        })
        .collect()
}

/// One-step TD update; returns the temporal-difference error.
pub fn td_step(
    critic: &mut [f64],
    key: usize,
    next_key: usize,
    reward: f64,
    gamma: f64,
    rate: f64,
) -> f64 {
    let delta = reward + gamma * critic[next_key] - critic[key];
    critic[key] += rate * delta;
    delta
}

/// Proximal step for the anchored actor loss: given post-gradient logits
/// `theta`, returns argmin over u of `0.5 |u - theta|^2 + kappa *
/// CE(anchor, softmax(u))`. An explicit gradient on the KL anchor diverges
/// once `kappa` exceeds the curvature bound, so the stiff term is solved
/// implicitly; Newton with a Sherman-Morrison inverse is exact here.
fn kl_prox(theta: &[f64], anchor: &[f64], kappa: f64) -> Vec<f64> {
    let n = theta.len();
    let phi = |u: &[f64]| -> f64 {
        let top = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + u.iter().map(|&x| (x - top).exp()).sum::<f64>().ln();
        let quad: f64 = u.iter().zip(theta).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let cross: f64 = u.iter().zip(anchor).map(|(&a, &p)| p * a).sum();
        0.5 * quad - kappa * (cross - lse)
    };
    let tol = 1e-9 * (1.0 + kappa);
    let mut u = theta.to_vec();
    for _ in 0..80 {
        let pi = softmax(&u);
        let grad: Vec<f64> =
            (0..n).map(|i| u[i] - theta[i] + kappa * (pi[i] - anchor[i])).collect();
        if grad.iter().all(|g| g.abs() < tol) {
            break;
        }
        // Hessian I + kappa (diag(pi) - pi pi^T); invert the rank-one update.
        let ainv_g: Vec<f64> = (0..n).map(|i| grad[i] / (1.0 + kappa * pi[i])).collect();
        let ainv_p: Vec<f64> = (0..n).map(|i| pi[i] / (1.0 + kappa * pi[i])).collect();
        let denom = 1.0 - kappa * pi.iter().zip(&ainv_p).map(|(&a, &b)| a * b).sum::<f64>();
        let coef = kappa * pi.iter().zip(&ainv_g).map(|(&a, &b)| a * b).sum::<f64>() / denom;
        let dir: Vec<f64> = (0..n).map(|i| -(ainv_g[i] + coef * ainv_p[i])).collect();
        let slope: f64 = grad.iter().zip(&dir).map(|(&g, &d)| g * d).sum();
        let phi0 = phi(&u);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = (0..n).map(|i| u[i] + t * dir[i]).collect();
            if phi(&trial) <= phi0 + 1e-4 * t * slope || t < 1e-12 {
                u = trial;
                break;
            }
            t *= 0.5;
        }
    }
    u
}

/// Deterministic scheduler whose visit frequencies match the weights
/// exactly in the long run (smooth weighted round-robin).
#[derive(Debug, Clone)]
pub struct EmbodimentScheduler {
    weights: Vec<f64>,
    current: Vec<f64>,
}

impl EmbodimentScheduler {
    pub fn new(weights: Vec<f64>) -> Self {
        let current = vec![0.0; weights.len()];
        Self { weights, current }
    }

    pub fn next(&mut self) -> usize {
        for (c, w) in self.current.iter_mut().zip(&self.weights) {
            *c += *w;
        }
        let mut best = 0;
        for i in 1..self.current.len() {
            if self.current[i] > self.current[best] {
                best = i;
            }
        }
        self.current[best] -= self.weights.iter().sum::<f64>();
        best
    }
}

/// Per-round learning-curve entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub env_steps: usize,
    /// Mean combined intrinsic reward (pre-training) or mean discounted
    /// episode return (fine-tuning).
    pub mean_reward: f64,
    pub mean_identification: Option<f64>,
    pub mean_surprise: Option<f64>,
    pub mean_skill: Option<f64>,
    pub discriminator_loss: Option<f64>,
    pub skill_loss: Option<f64>,
}

struct EpisodeTrace {
    embodiment: usize,
    skill: usize,
    trajectory: Trajectory,
    /// Context bucket at each of the `horizon + 1` states, from the
    /// discriminator as it stood when the action was chosen. Updates must
    /// key on these, not on recomputed buckets.
    buckets: Vec<usize>,
    /// Discriminator features at each of the `horizon + 1` states.
    examples: Vec<LabeledExample>,
}

fn run_episode(
    set: &EmbodimentSet,
    state: &AgentState,
    e: usize,
    skill: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> EpisodeTrace {
    let horizon = config.horizon;
    let mut window = HistoryWindow::new(state.discriminator.window_len());
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut buckets = Vec::with_capacity(horizon + 1);
    let mut examples = Vec::with_capacity(horizon + 1);

    let mut s = sample_index(set.initial(), rng);
    states.push(s);
    let observe = |window: &HistoryWindow,
                   s: usize,
                   buckets: &mut Vec<usize>,
                   examples: &mut Vec<LabeledExample>| {
        let feats = state.discriminator.featurize(window, s);
        let probs = state.discriminator.posterior(&feats);
        buckets.push(context_bucket(&probs, config.context_threshold));
        examples.push((feats, e));
    };
    observe(&window, s, &mut buckets, &mut examples);

    for t in 0..horizon {
        let key = conditioned_key(state.shape, s, skill, buckets[t]);
        let a = sample_index(state.policy.row(key), rng);
        let s2 = step(set, e, s, a, rng);
        window.push(s, a);
        observe(&window, s2, &mut buckets, &mut examples);
        actions.push(a);
        states.push(s2);
        s = s2;
    }

    EpisodeTrace {
        embodiment: e,
        skill,
        trajectory: Trajectory::new(states, actions).expect("rollout is well-formed"),
        buckets,
        examples,
    }
}

/// Collect one episode per scheduler slot. Each slot draws from its own
/// seed substream, so results do not depend on thread interleaving.
fn collect_round(
    set: &EmbodimentSet,
    state: &AgentState,
    assignment: &[usize],
    config: &TrainConfig,
    tag: u64,
    round: usize,
) -> Vec<EpisodeTrace> {
    assignment
        .par_iter()
        .enumerate()
        .map(|(slot, &e)| {
            let mut rng = substream(config.seed, &[tag, round as u64, slot as u64]);
            let skill = if state.shape.num_skills > 1 {
                rng.random_range(0..state.shape.num_skills)
            } else {
                0
            };
            run_episode(set, state, e, skill, config, &mut rng)
        })
        .collect()
}

/// Run full-batch steps until the loss flattens; returns the last loss.
/// `step` must return the pre-step loss, so a non-improving epoch is visible
/// on the next call.
fn fit_batch<F: FnMut() -> f64>(mut step: F) -> f64 {
    let mut prev = f64::INFINITY;
    for _ in 0..DISCRIMINATOR_MAX_EPOCHS {
        let loss = step();
        if prev - loss < DISCRIMINATOR_LOSS_TOL {
            return loss;
        }
        prev = loss;
    }
    prev
}

fn merge_into_buffers(state: &mut AgentState, traces: &[EpisodeTrace]) {
    for e in 0..state.buffers.len() {
        for trace in traces.iter().filter(|t| t.embodiment == e) {
            if state.buffers[e].len() == BUFFER_CAPACITY {
                state.buffers[e].pop_front();
            }
            state.buffers[e].push_back(trace.trajectory.clone());
        }
    }
}

#[derive(Default)]
struct RoundStats {
    transitions: usize,
    reward: f64,
    identification: f64,
    surprise: f64,
    skill: f64,
}

fn update_from_traces(
    state: &mut AgentState,
    set: &EmbodimentSet,
    traces: &[EpisodeTrace],
    strategy: &dyn IntrinsicReward,
    config: &TrainConfig,
) -> Result<RoundStats, CoreError> {
    let mut stats = RoundStats::default();
    for trace in traces {
        let traj = &trace.trajectory;
        for t in 0..traj.len() {
            let s = traj.states[t];
            let a = traj.actions[t];
            let s2 = traj.states[t + 1];
            let mut parts = RewardParts::default();
            if strategy.uses_identification() {
                // The discriminator was refit on this round's windows before
                // the update, so a window it misclassifies is one the data
                // cannot settle, not one it has not seen. Rewards computed
                // against pre-refit outputs are farmable: the policy gets
                // paid for errors that the next fit removes.
                let lp = state.discriminator.log_posterior(&trace.examples[t + 1].0);
                parts.identification = r_ce_step(&lp, set, trace.embodiment)?;
            }
            if let Some(model) = state.surprise.as_mut() {
                parts.surprise = model.observe(s, a, s2);
            }
            if let Some(disc) = state.skills.as_ref() {
                parts.skill = r_diayn(disc, s2, trace.skill);
            }
            let r = strategy.combine(&parts);
            let key = conditioned_key(state.shape, s, trace.skill, trace.buckets[t]);
            let next_key = conditioned_key(state.shape, s2, trace.skill, trace.buckets[t + 1]);
            let delta = td_step(&mut state.critic, key, next_key, r, config.gamma, config.critic_rate);
            state.actor_step(key, a, delta, config);
            stats.transitions += 1;
            stats.reward += r;
            stats.identification += parts.identification;
            stats.surprise += parts.surprise;
            stats.skill += parts.skill;
        }
    }
    Ok(stats)
}

fn pretrain_loop(
    state: &mut AgentState,
    set: &EmbodimentSet,
    strategy: &dyn IntrinsicReward,
    config: &TrainConfig,
) -> Result<Vec<RoundRecord>, CoreError> {
    let mut scheduler = EmbodimentScheduler::new(set.prior().to_vec());
    let mut records = Vec::new();
    let mut round = 0usize;
    let mut recent_examples: VecDeque<Vec<LabeledExample>> = VecDeque::new();
    let mut recent_triples: VecDeque<Vec<(usize, usize, usize)>> = VecDeque::new();
    while state.env_steps < config.pretrain_steps {
        let assignment: Vec<usize> = (0..set.len()).map(|_| scheduler.next()).collect();
        let traces = collect_round(set, state, &assignment, config, TAG_PRETRAIN, round);

        // Refit the discriminators on a replay that includes this round
        // before computing any reward from them.
        if recent_examples.len() == DISCRIMINATOR_REPLAY_ROUNDS {
            recent_examples.pop_front();
        }
        recent_examples
            .push_back(traces.iter().flat_map(|t| t.examples.iter().cloned()).collect());
        let batch: Vec<LabeledExample> = recent_examples.iter().flatten().cloned().collect();
        let disc_loss = fit_batch(|| {
            state.discriminator.train_step(&batch, config.discriminator_rate, ONLINE_RIDGE)
        });
        let skill_loss = if let Some(disc) = state.skills.as_mut() {
            if recent_triples.len() == DISCRIMINATOR_REPLAY_ROUNDS {
                recent_triples.pop_front();
            }
            recent_triples.push_back(
                traces
                    .iter()
                    .flat_map(|t| {
                        t.trajectory.states[1..]
                            .iter()
                            .map(|&s| (s, t.skill, t.embodiment))
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            );
            let triples: Vec<(usize, usize, usize)> =
                recent_triples.iter().flatten().cloned().collect();
            Some(fit_batch(|| disc.train_step(&triples, config.discriminator_rate, ONLINE_RIDGE)))
        } else {
            None
        };

        let stats = update_from_traces(state, set, &traces, strategy, config)?;
        merge_into_buffers(state, &traces);
        state.env_steps += traces.len() * config.horizon;
        state.episodes += traces.len();

        let n = stats.transitions as f64;
        records.push(RoundRecord {
            round,
            env_steps: state.env_steps,
            mean_reward: stats.reward / n,
            mean_identification: strategy
                .uses_identification()
                .then_some(stats.identification / n),
            mean_surprise: state.surprise.is_some().then_some(stats.surprise / n),
            mean_skill: state.skills.is_some().then_some(stats.skill / n),
            discriminator_loss: Some(disc_loss),
            skill_loss,
        });
        round += 1;
    }
    Ok(records)
}

/// Pre-train on the identification reward (optionally plus surprise),
/// conditioning the policy on (state, context bucket).
pub fn pretrain_peac(
    set: &EmbodimentSet,
    config: &TrainConfig,
) -> Result<(AgentState, Vec<RoundRecord>), CoreError> {
    config.validate()?;
    let strategy = config.reward.build()?;
    if !strategy.uses_identification() || strategy.skill_count().is_some() {
        return Err(CoreError::BadConfig {
            field: "reward.kind",
            message: format!("expected `ce` or `ce+lbs`, got {:?}", strategy.name()),
        });
    }
    let shape = PolicyShape {
        num_states: set.num_states(),
        num_skills: 1,
        num_contexts: set.len() + 1,
    };
    let mut state = AgentState::fresh(set, shape, strategy.as_ref(), config.seed);
    let records = pretrain_loop(&mut state, set, strategy.as_ref(), config)?;
    Ok((state, records))
}

/// Pre-train on transition surprise alone; no identification machinery, so
/// the policy conditions on the state only.
pub fn pretrain_surprise(
    set: &EmbodimentSet,
    config: &TrainConfig,
) -> Result<(AgentState, Vec<RoundRecord>), CoreError> {
    config.validate()?;
    let strategy = config.reward.build()?;
    if strategy.uses_identification() || !strategy.uses_surprise() {
        return Err(CoreError::BadConfig {
            field: "reward.kind",
            message: format!("expected `lbs`, got {:?}", strategy.name()),
        });
    }
    let shape = PolicyShape::states_only(set.num_states());
    let mut state = AgentState::fresh(set, shape, strategy.as_ref(), config.seed);
    let records = pretrain_loop(&mut state, set, strategy.as_ref(), config)?;
    Ok((state, records))
}

/// Pre-train `k` skills jointly with the identification machinery; the
/// skill is drawn uniformly per episode and the policy is conditioned on
/// (state, skill, context bucket).
pub fn pretrain_peac_diayn(
    set: &EmbodimentSet,
    config: &TrainConfig,
    k: usize,
) -> Result<(AgentState, Vec<RoundRecord>), CoreError> {
    config.validate()?;
    if k < 2 {
        return Err(CoreError::BadConfig {
            field: "skills",
            message: format!("need at least 2 skills, got {k}"),
        });
    }
    if let Some(k0) = config.reward.skill_count {
        if k0 != k {
            return Err(CoreError::BadConfig {
                field: "skills",
                message: format!("reward spec says {k0} skills, caller says {k}"),
            });
        }
    }
    let strategy = config.reward.clone().with_skills(k).build()?;
    if strategy.skill_count().is_none() {
        return Err(CoreError::BadConfig {
            field: "reward.kind",
            message: format!("expected `diayn` or `ce+diayn`, got {:?}", strategy.name()),
        });
    }
    let shape = PolicyShape {
        num_states: set.num_states(),
        num_skills: k,
        num_contexts: set.len() + 1,
    };
    let mut state = AgentState::fresh(set, shape, strategy.as_ref(), config.seed);
    let records = pretrain_loop(&mut state, set, strategy.as_ref(), config)?;
    Ok((state, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneMode {
    /// Plain actor-critic from the pre-trained tables.
    InitOnly,
    /// Adds a per-state KL anchor to the pre-trained policy, weight `beta`.
    KlPenalized,
}

/// Fine-tune a pre-trained agent on an extrinsic state reward, collected on
/// arrival. Returns the tuned agent and per-round mean episode returns.
pub fn finetune(
    pretrained: &AgentState,
    set: &EmbodimentSet,
    extrinsic: &RewardTable,
    config: &TrainConfig,
    mode: FinetuneMode,
) -> Result<(AgentState, Vec<RoundRecord>), CoreError> {
    config.validate()?;
    check_compatible(pretrained, set)?;
    if extrinsic.values().len() != set.num_states() {
        return Err(CoreError::DimensionMismatch {
            what: "extrinsic reward table",
            got: extrinsic.values().len(),
            expected: set.num_states(),
        });
    }
    let kappa = config.actor_rate * config.beta;
    let anchor: Option<Vec<Vec<f64>>> = match mode {
        FinetuneMode::KlPenalized if config.beta > 0.0 => Some(
            (0..pretrained.shape.num_keys()).map(|k| pretrained.policy.row(k).to_vec()).collect(),
        ),
        _ => None,
    };

    let mut state = pretrained.clone();
    let mut scheduler = EmbodimentScheduler::new(set.prior().to_vec());
    let mut records = Vec::new();
    let mut spent = 0usize;
    let mut round = 0usize;
    while spent < config.finetune_steps {
        let assignment: Vec<usize> = (0..set.len()).map(|_| scheduler.next()).collect();
        let traces = collect_round(set, &state, &assignment, config, TAG_FINETUNE, round);
        let mut return_sum = 0.0;
        for trace in &traces {
            let traj = &trace.trajectory;
            let mut discount = 1.0;
            for t in 0..traj.len() {
                let s = traj.states[t];
                let a = traj.actions[t];
                let s2 = traj.states[t + 1];
                let r = extrinsic.reward(s2);
                return_sum += discount * r;
                discount *= config.gamma;
                let key = conditioned_key(state.shape, s, trace.skill, trace.buckets[t]);
                let next_key = conditioned_key(state.shape, s2, trace.skill, trace.buckets[t + 1]);
                let delta =
                    td_step(&mut state.critic, key, next_key, r, config.gamma, config.critic_rate);
                state.actor_step(key, a, delta, config);
                if let Some(rows) = anchor.as_ref() {
                    state.kl_anchor_step(key, &rows[key], kappa);
                }
            }
        }
        merge_into_buffers(&mut state, &traces);
        spent += traces.len() * config.horizon;
        state.env_steps += traces.len() * config.horizon;
        state.episodes += traces.len();
        records.push(RoundRecord {
            round,
            env_steps: spent,
            mean_reward: return_sum / traces.len() as f64,
            mean_identification: None,
            mean_surprise: None,
            mean_skill: None,
            discriminator_loss: None,
            skill_loss: None,
        });
        round += 1;
    }
    Ok((state, records))
}

fn check_compatible(state: &AgentState, set: &EmbodimentSet) -> Result<(), CoreError> {
    if state.shape.num_states != set.num_states() {
        return Err(CoreError::DimensionMismatch {
            what: "agent states",
            got: set.num_states(),
            expected: state.shape.num_states,
        });
    }
    if state.num_actions != set.num_actions() {
        return Err(CoreError::DimensionMismatch {
            what: "agent actions",
            got: set.num_actions(),
            expected: state.num_actions,
        });
    }
    Ok(())
}

/// Skill chooser over (context bucket, state) keys.
#[derive(Debug, Clone)]
pub struct MetaController {
    pub num_states: usize,
    pub num_skills: usize,
    pub num_contexts: usize,
    pub logits: Vec<f64>,
    /// Softmax of `logits`, row per key.
    pub probs: Vec<f64>,
    pub critic: Vec<f64>,
}

impl MetaController {
    pub fn new(num_states: usize, num_skills: usize, num_contexts: usize) -> Self {
        let keys = num_states * num_contexts;
        Self {
            num_states,
            num_skills,
            num_contexts,
            logits: vec![0.0; keys * num_skills],
            probs: vec![1.0 / num_skills as f64; keys * num_skills],
            critic: vec![0.0; keys],
        }
    }

    pub fn key(&self, state: usize, context: usize) -> usize {
        context * self.num_states + state
    }

    pub fn row(&self, key: usize) -> &[f64] {
        &self.probs[key * self.num_skills..(key + 1) * self.num_skills]
    }

    /// Recompute every probability row from the logits; needed after bulk
    /// logit edits (checkpoint restore).
    pub fn sync_probs(&mut self) {
        for key in 0..self.num_states * self.num_contexts {
            self.refresh_row(key);
        }
    }

    fn refresh_row(&mut self, key: usize) {
        let base = key * self.num_skills;
        let row = softmax(&self.logits[base..base + self.num_skills]);
        debug_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        self.probs[base..base + self.num_skills].copy_from_slice(&row);
    }
}

struct MetaDecision {
    key: usize,
    skill: usize,
    /// Discounted extrinsic return earned inside the chunk.
    chunk_return: f64,
    /// Discount carried to the bootstrap key: gamma^(chunk length).
    carry: f64,
    next_key: usize,
}

fn run_meta_episode(
    set: &EmbodimentSet,
    state: &AgentState,
    meta: &MetaController,
    e: usize,
    extrinsic: &RewardTable,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<MetaDecision>, f64) {
    let sub = META_SUBHORIZON.min(config.horizon).max(1);
    let mut window = HistoryWindow::new(state.discriminator.window_len());
    let mut decisions = Vec::new();
    let mut s = sample_index(set.initial(), rng);
    let mut bucket = {
        let probs = state.discriminator.context(&window, s);
        context_bucket(&probs, config.context_threshold)
    };
    let mut episode_return = 0.0;
    let mut episode_discount = 1.0;
    let mut t = 0;
    while t < config.horizon {
        let mkey = meta.key(s, bucket.min(meta.num_contexts - 1));
        let z = sample_index(meta.row(mkey), rng);
        let mut chunk_return = 0.0;
        let mut carry = 1.0;
        let mut took = 0;
        while took < sub && t < config.horizon {
            let key = conditioned_key(state.shape, s, z, bucket);
            let a = sample_index(state.policy.row(key), rng);
            let s2 = step(set, e, s, a, rng);
            window.push(s, a);
            let r = extrinsic.reward(s2);
            chunk_return += carry * r;
            episode_return += episode_discount * r;
            carry *= config.gamma;
            episode_discount *= config.gamma;
            s = s2;
            bucket = {
                let probs = state.discriminator.context(&window, s);
                context_bucket(&probs, config.context_threshold)
            };
            took += 1;
            t += 1;
        }
        decisions.push(MetaDecision {
            key: mkey,
            skill: z,
            chunk_return,
            carry,
            next_key: meta.key(s, bucket.min(meta.num_contexts - 1)),
        });
    }
    (decisions, episode_return)
}

/// Train a skill chooser over a frozen skill-conditioned agent.
pub fn finetune_meta_controller(
    pretrained: &AgentState,
    set: &EmbodimentSet,
    extrinsic: &RewardTable,
    config: &TrainConfig,
) -> Result<(MetaController, Vec<RoundRecord>), CoreError> {
    config.validate()?;
    check_compatible(pretrained, set)?;
    if pretrained.skills.is_none() || pretrained.shape.num_skills < 2 {
        return Err(CoreError::BadConfig {
            field: "agent",
            message: "meta-controller needs a skill-conditioned pre-trained agent".into(),
        });
    }
    if extrinsic.values().len() != set.num_states() {
        return Err(CoreError::DimensionMismatch {
            what: "extrinsic reward table",
            got: extrinsic.values().len(),
            expected: set.num_states(),
        });
    }
    let mut meta = MetaController::new(
        pretrained.shape.num_states,
        pretrained.shape.num_skills,
        pretrained.shape.num_contexts,
    );
    let mut scheduler = EmbodimentScheduler::new(set.prior().to_vec());
    let mut records = Vec::new();
    let mut spent = 0usize;
    let mut round = 0usize;
    while spent < config.finetune_steps {
        let assignment: Vec<usize> = (0..set.len()).map(|_| scheduler.next()).collect();
        let episodes: Vec<(Vec<MetaDecision>, f64)> = assignment
            .par_iter()
            .enumerate()
            .map(|(slot, &e)| {
                let mut rng = substream(config.seed, &[TAG_META, round as u64, slot as u64]);
                run_meta_episode(set, pretrained, &meta, e, extrinsic, config, &mut rng)
            })
            .collect();
        let mut return_sum = 0.0;
        for (decisions, episode_return) in &episodes {
            return_sum += episode_return;
            for d in decisions {
                let delta = d.chunk_return + d.carry * meta.critic[d.next_key]
                    - meta.critic[d.key];
                meta.critic[d.key] += config.critic_rate * delta;
                let dir =
                    actor_direction(meta.row(d.key), d.skill, delta, config.entropy_bonus);
                let base = d.key * meta.num_skills;
                for (z, g) in dir.iter().enumerate() {
                    meta.logits[base + z] += config.actor_rate * g;
                }
                meta.refresh_row(d.key);
            }
        }
        spent += assignment.len() * config.horizon;
        records.push(RoundRecord {
            round,
            env_steps: spent,
            mean_reward: return_sum / assignment.len() as f64,
            mean_identification: None,
            mean_surprise: None,
            mean_skill: None,
            discriminator_loss: None,
            skill_loss: None,
        });
        round += 1;
    }
    Ok((meta, records))
}

/// Per-embodiment evaluation of a frozen agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub episodes: usize,
    /// Mean discounted episode return per embodiment.
    pub monte_carlo: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Exact finite-horizon return where the policy is state-only.
    pub analytic: Vec<Option<f64>>,
}

fn episode_return(traj: &Trajectory, extrinsic: &RewardTable, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..traj.len() {
        total += discount * extrinsic.reward(traj.states[t + 1]);
        discount *= gamma;
    }
    total
}

/// Monte-Carlo returns of the frozen policy, plus the exact expectation
/// when the conditioning is state-only.
pub fn evaluate(
    state: &AgentState,
    set: &EmbodimentSet,
    extrinsic: &RewardTable,
    config: &TrainConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvaluationReport, CoreError> {
    config.validate()?;
    check_compatible(state, set)?;
    if extrinsic.values().len() != set.num_states() {
        return Err(CoreError::DimensionMismatch {
            what: "extrinsic reward table",
            got: extrinsic.values().len(),
            expected: set.num_states(),
        });
    }
    if episodes == 0 {
        return Err(CoreError::BadConfig { field: "episodes", message: "must be positive".into() });
    }
    let mut monte_carlo = Vec::with_capacity(set.len());
    let mut std_error = Vec::with_capacity(set.len());
    let mut analytic = Vec::with_capacity(set.len());
    for e in 0..set.len() {
        let returns: Vec<f64> = (0..episodes)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed, &[TAG_EVAL, e as u64, i as u64]);
                let skill = if state.shape.num_skills > 1 {
                    rng.random_range(0..state.shape.num_skills)
                } else {
                    0
                };
                let trace = run_episode(set, state, e, skill, config, &mut rng);
                episode_return(&trace.trajectory, extrinsic, config.gamma)
            })
            .collect();
        let mean = returns.iter().sum::<f64>() / episodes as f64;
        let se = if episodes > 1 {
            let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                / (episodes - 1) as f64;
            (var / episodes as f64).sqrt()
        } else {
            0.0
        };
        monte_carlo.push(mean);
        std_error.push(se);
        analytic.push(if state.shape.is_states_only() {
            let seq = state_distribution_sequence(set, e, &state.policy, config.horizon);
            let mut total = 0.0;
            let mut discount = 1.0;
            for d in &seq[1..] {
                total +=
                    discount * d.iter().zip(extrinsic.values()).map(|(&p, &r)| p * r).sum::<f64>();
                discount *= config.gamma;
            }
            Some(total)
        } else {
            None
        });
    }
    Ok(EvaluationReport { episodes, monte_carlo, std_error, analytic })
}

/// Monte-Carlo returns of a frozen meta-controller driving a frozen
/// skill-conditioned agent.
pub fn evaluate_with_controller(
    state: &AgentState,
    meta: &MetaController,
    set: &EmbodimentSet,
    extrinsic: &RewardTable,
    config: &TrainConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvaluationReport, CoreError> {
    config.validate()?;
    check_compatible(state, set)?;
    if episodes == 0 {
        return Err(CoreError::BadConfig { field: "episodes", message: "must be positive".into() });
    }
    let mut monte_carlo = Vec::with_capacity(set.len());
    let mut std_error = Vec::with_capacity(set.len());
    for e in 0..set.len() {
        let returns: Vec<f64> = (0..episodes)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed, &[TAG_EVAL, e as u64, i as u64]);
                run_meta_episode(set, state, meta, e, extrinsic, config, &mut rng).1
            })
            .collect();
        let mean = returns.iter().sum::<f64>() / episodes as f64;
        let se = if episodes > 1 {
            let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                / (episodes - 1) as f64;
            (var / episodes as f64).sqrt()
        } else {
            0.0
        };
        monte_carlo.push(mean);
        std_error.push(se);
    }
    Ok(EvaluationReport {
        episodes,
        monte_carlo,
        std_error,
        analytic: vec![None; set.len()],
    })
}
