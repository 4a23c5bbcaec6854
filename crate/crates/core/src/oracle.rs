//! Brute-force numerical verification of the variational identities the
//! intrinsic rewards rest on.
//!
//! Everything here works on exhaustively enumerated finite trajectory
//! spaces: sequences of state-action pairs of a fixed length, with exact
//! per-embodiment probabilities. On these spaces the min-max value of the
//! adaptation objective, its log-sum-exp dual, the mutual-information
//! identity, and the skill decomposition can all be computed to floating
//! point accuracy and compared against their closed forms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CoreError;
use crate::mdp::{Embodiment, EmbodimentSet, PolicyShape, TabularPolicy, TransitionKernel};
use crate::util::{is_log_zero, kl_divergence, log_sum_exp, project_to_simplex, safe_ln, substream};

/// Cap on the number of enumerated trajectories, (|S||A|)^L.
pub const TRAJECTORY_SPACE_BOUND: u128 = 200_000;

fn check_space_size(num_states: usize, num_actions: usize, horizon: usize) -> Result<usize, CoreError> {
    let per_step = (num_states as u128) * (num_actions as u128);
    let count = per_step.checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if count == 0 || count > TRAJECTORY_SPACE_BOUND {
        return Err(CoreError::TrajectorySpaceTooLarge { got: count, bound: TRAJECTORY_SPACE_BOUND });
    }
    Ok(count as usize)
}

/// Exhaustive distribution over length-`horizon` state-action sequences.
///
/// A trajectory is the pair list (s_0,a_0)..(s_{L-1},a_{L-1}); its
/// probability is mu0(s_0) times the policy factor at every pair times the
/// transition factor between consecutive pairs. The final action carries a
/// policy factor but no transition.
#[derive(Debug, Clone)]
pub struct FiniteTrajectorySpace {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    prior: Vec<f64>,
    /// `per_embodiment[e][idx]` = p_e(trajectory idx).
    per_embodiment: Vec<Vec<f64>>,
    mixture: Vec<f64>,
}

impl FiniteTrajectorySpace {
    /// Enumerate under a plain state policy.
    pub fn enumerate(
        set: &EmbodimentSet,
        policy: &TabularPolicy,
        horizon: usize,
    ) -> Result<Self, CoreError> {
        Self::enumerate_keyed(set, policy, 0, 0, horizon)
    }

    /// Enumerate under a conditioned policy with fixed skill and context.
    pub fn enumerate_keyed(
        set: &EmbodimentSet,
        policy: &TabularPolicy,
        skill: usize,
        context: usize,
        horizon: usize,
    ) -> Result<Self, CoreError> {
        let ns = set.num_states();
        let na = set.num_actions();
        let count = check_space_size(ns, na, horizon)?;
        let m = set.len();
        let shape = policy.shape();
        let mut per_embodiment = vec![Vec::with_capacity(count); m];

        // Depth-first in digit order (state major, then action), so leaf
        // order matches the mixed-radix index used by decode().
        let mut stack_shared = vec![0.0f64; horizon + 1];
        let mut stack_dyn = vec![vec![0.0f64; m]; horizon + 1];
        let mut digits = vec![(0usize, 0usize); horizon];

        fn recurse(
            set: &EmbodimentSet,
            policy: &TabularPolicy,
            shape: &PolicyShape,
            skill: usize,
            context: usize,
            horizon: usize,
            t: usize,
            digits: &mut [(usize, usize)],
            shared: &mut [f64],
            dynamics: &mut [Vec<f64>],
            out: &mut [Vec<f64>],
        ) {
            if t == horizon {
                for (e, sink) in out.iter_mut().enumerate() {
                    let lp = shared[t] + dynamics[t][e];
                    sink.push(if is_log_zero(lp) { 0.0 } else { lp.exp() });
                }
                return;
            }
            for s in 0..set.num_states() {
                for a in 0..set.num_actions() {
                    digits[t] = (s, a);
                    let key = shape.key(s, skill, context);
                    let step_shared = if t == 0 {
                        safe_ln(set.initial()[s]) + safe_ln(policy.prob(key, a))
                    } else {
                        safe_ln(policy.prob(key, a))
                    };
                    shared[t + 1] = shared[t] + step_shared;
                    for e in 0..set.len() {
                        let trans = if t == 0 {
                            0.0
                        } else {
                            let (ps, pa) = digits[t - 1];
                            safe_ln(set.transition_prob(e, ps, pa, s))
                        };
                        dynamics[t + 1][e] = dynamics[t][e] + trans;
                    }
                    recurse(set, policy, shape, skill, context, horizon, t + 1, digits, shared, dynamics, out);
                }
            }
        }

        recurse(
            set,
            policy,
            &shape,
            skill,
            context,
            horizon,
            0,
            &mut digits,
            &mut stack_shared,
            &mut stack_dyn,
            &mut per_embodiment,
        );
        debug_assert!(per_embodiment.iter().all(|p| p.len() == count));

        let mut mixture = vec![0.0; count];
        for (e, probs) in per_embodiment.iter().enumerate() {
            let w = set.prior()[e];
            for (mix, &p) in mixture.iter_mut().zip(probs) {
                *mix += w * p;
            }
        }
        Ok(Self {
            horizon,
            num_states: ns,
            num_actions: na,
            prior: set.prior().to_vec(),
            per_embodiment,
            mixture,
        })
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_embodiments(&self) -> usize {
        self.per_embodiment.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn p_e(&self, e: usize) -> &[f64] {
        &self.per_embodiment[e]
    }

    pub fn mixture(&self) -> &[f64] {
        &self.mixture
    }

    /// State-action pairs of the trajectory at a mixed-radix index.
    pub fn decode(&self, mut idx: usize) -> Vec<(usize, usize)> {
        let base = self.num_states * self.num_actions;
        let mut pairs = vec![(0, 0); self.horizon];
        for slot in pairs.iter_mut().rev() {
            let digit = idx % base;
            idx /= base;
            *slot = (digit / self.num_actions, digit % self.num_actions);
        }
        pairs
    }

    /// Exact posterior p(e | trajectory idx).
    pub fn posterior(&self, idx: usize) -> Vec<f64> {
        let joint: Vec<f64> =
            (0..self.num_embodiments()).map(|e| self.prior[e] * self.per_embodiment[e][idx]).collect();
        let z: f64 = joint.iter().sum();
        if z == 0.0 {
            return self.prior.clone();
        }
        joint.iter().map(|j| j / z).collect()
    }

    /// KL(p_e || mixture).
    pub fn kl_to_mixture(&self, e: usize) -> f64 {
        kl_divergence(&self.per_embodiment[e], &self.mixture)
    }
}

/// Value of the inner maximization at a fixed trajectory reward: the
/// log-sum-exp dual `beta log Sum p_bar e^{R/beta} - E_{p_e}[R]`, together
/// with the Boltzmann-tilted maximizer.
pub fn inner_max_closed_form(
    space: &FiniteTrajectorySpace,
    reward: &[f64],
    beta: f64,
    embodiment: usize,
) -> Result<(f64, Vec<f64>), CoreError> {
    if reward.len() != space.len() {
        return Err(CoreError::DimensionMismatch {
            what: "trajectory reward vector",
            got: reward.len(),
            expected: space.len(),
        });
    }
    let tilted_logs: Vec<f64> = space
        .mixture()
        .iter()
        .zip(reward)
        .map(|(&pb, &r)| safe_ln(pb) + r / beta)
        .collect();
    let z = log_sum_exp(&tilted_logs);
    let p_star: Vec<f64> = tilted_logs
        .iter()
        .map(|&lw| if is_log_zero(lw) { 0.0 } else { (lw - z).exp() })
        .collect();
    let expected: f64 = space.p_e(embodiment).iter().zip(reward).map(|(&p, &r)| p * r).sum();
    Ok((beta * z - expected, p_star))
}

/// Outcome of minimizing the dual over the reward vector.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    /// Minimizing reward divided by beta (the scale-free variable).
    pub scaled_reward: Vec<f64>,
    /// Minimum of the dual at beta = 1.
    pub unit_value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `h(u) = log Sum p_bar e^u - p_e . u` (the dual at beta = 1 in
/// the scale-free variable u = R / beta; minima for other beta follow by
/// linear scaling).
///
/// Damped Newton using the softmax Hessian structure diag(q) - q q^T: the
/// system H d = -g is solved in closed form by d = -g/q + c, with the
/// constant chosen so the step has zero mean. Each iteration is O(n).
pub fn minimize_dual(space: &FiniteTrajectorySpace, embodiment: usize) -> Result<MinimizeOutcome, CoreError> {
    let p_e = space.p_e(embodiment);
    let mixture = space.mixture();
    let support: Vec<usize> = (0..space.len()).filter(|&i| mixture[i] > 0.0).collect();
    if support.iter().map(|&i| p_e[i]).sum::<f64>() < 1.0 - 1e-9 {
        return Err(CoreError::NoConvergence(
            "embodiment places mass outside the mixture support".into(),
        ));
    }
    let log_mix: Vec<f64> = support.iter().map(|&i| safe_ln(mixture[i])).collect();
    let target: Vec<f64> = support.iter().map(|&i| p_e[i]).collect();
    let n = support.len();

    let eval = |u: &[f64]| -> (f64, Vec<f64>) {
        let logs: Vec<f64> = log_mix.iter().zip(u).map(|(&lm, &ui)| lm + ui).collect();
        let z = log_sum_exp(&logs);
        let q: Vec<f64> = logs.iter().map(|&l| (l - z).exp()).collect();
        let dot: f64 = target.iter().zip(u).map(|(&t, &ui)| t * ui).sum();
        (z - dot, q)
    };

    let mut u = vec![0.0; n];
    let (mut value, mut q) = eval(&u);
    let max_iter = 500;
    let grad_tol = 1e-11;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < max_iter {
        let grad: Vec<f64> = q.iter().zip(&target).map(|(&qi, &ti)| qi - ti).collect();
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < grad_tol {
            break;
        }
        let mut dir: Vec<f64> = grad
            .iter()
            .zip(&q)
            .map(|(&g, &qi)| if qi > 0.0 { -g / qi } else { 0.0 })
            .collect();
        let mean: f64 = dir.iter().sum::<f64>() / n as f64;
        dir.iter_mut().for_each(|d| *d -= mean);
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if slope >= 0.0 {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(&ui, &d)| ui + step * d).collect();
            let (tv, tq) = eval(&trial);
            if tv <= value + 1e-4 * step * slope {
                u = trial;
                value = tv;
                q = tq;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    let mut scaled_reward = vec![0.0; space.len()];
    for (&i, &ui) in support.iter().zip(&u) {
        scaled_reward[i] = ui;
    }
    Ok(MinimizeOutcome {
        scaled_reward,
        unit_value: value,
        gradient_norm: grad_norm,
        converged: grad_norm < 1e-7,
        iterations,
    })
}

/// Maximize `F(p) = p.R - E_{p_e}[R] - beta KL(p || p_bar)` over the
/// simplex by projected gradient ascent with backtracking. Cross-checks
/// the closed-form tilt.
pub fn projected_gradient_max(
    space: &FiniteTrajectorySpace,
    reward: &[f64],
    beta: f64,
    embodiment: usize,
) -> Result<(f64, Vec<f64>), CoreError> {
    if reward.len() != space.len() {
        return Err(CoreError::DimensionMismatch {
            what: "trajectory reward vector",
            got: reward.len(),
            expected: space.len(),
        });
    }
    let support: Vec<usize> = (0..space.len()).filter(|&i| space.mixture()[i] > 0.0).collect();
    let log_mix: Vec<f64> = support.iter().map(|&i| safe_ln(space.mixture()[i])).collect();
    let r: Vec<f64> = support.iter().map(|&i| reward[i]).collect();
    let expected: f64 =
        space.p_e(embodiment).iter().zip(reward).map(|(&p, &rr)| p * rr).sum();

    let objective = |p: &[f64]| -> f64 {
        let mut val = -expected;
        for ((&pi, &ri), &lm) in p.iter().zip(&r).zip(&log_mix) {
            val += pi * ri;
            if pi > 0.0 {
                val -= beta * pi * (pi.ln() - lm);
            }
        }
        val
    };

    let mut p: Vec<f64> = {
        let z: f64 = support.iter().map(|&i| space.mixture()[i]).sum();
        support.iter().map(|&i| space.mixture()[i] / z).collect()
    };
    let mut value = objective(&p);
    // Warm-started backtracking: near the optimum the accepted step shrinks
    // by orders of magnitude, so restarting each line search from the last
    // accepted step keeps late iterations cheap.
    let mut step0 = 1.0f64;
    for _ in 0..200_000 {
        let grad: Vec<f64> = p
            .iter()
            .zip(&r)
            .zip(&log_mix)
            .map(|((&pi, &ri), &lm)| ri - beta * (safe_ln(pi.max(1e-300)) - lm + 1.0))
            .collect();
        let mut step = step0;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..60 {
            let trial = project_to_simplex(
                &p.iter().zip(&grad).map(|(&pi, &g)| pi + step * g).collect::<Vec<_>>(),
            );
            let tv = objective(&trial);
            if tv > value + 1e-15 {
                best = Some((tv, trial));
                break;
            }
            step *= 0.5;
        }
        match best {
            Some((tv, trial)) => {
                let moved = trial
                    .iter()
                    .zip(&p)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                p = trial;
                value = tv;
                step0 = (step * 4.0).min(1.0);
                if moved < 1e-15 {
                    break;
                }
            }
            None => break,
        }
    }
    let mut full = vec![0.0; space.len()];
    for (&i, &pi) in support.iter().zip(&p) {
        full[i] = pi;
    }
    Ok((value, full))
}

/// One verified (embodiment, beta) cell of the min-max identity.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub embodiment: usize,
    pub beta: f64,
    /// -beta KL(p_e || p_bar), the closed-form min-max value.
    pub closed_form_value: f64,
    /// Dual value at the numerically minimized reward vector.
    pub numeric_minimax_value: f64,
    pub gap: f64,
    /// KL(p_e || p_bar) for every embodiment of the instance.
    pub kl_values: Vec<f64>,
    /// Minimizing reward vector (at this beta).
    pub argmin_reward: Vec<f64>,
    /// Tilted distribution at the minimizer; matches p_e at stationarity.
    pub argmax_distribution: Vec<f64>,
    /// Sup-norm mismatch between the tilt and p_e.
    pub stationarity_gap: f64,
    pub converged: bool,
}

/// Check the min-max identity on one instance for every embodiment and
/// every requested beta.
pub fn verify_theorem(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    horizon: usize,
    betas: &[f64],
) -> Result<Vec<OracleReport>, CoreError> {
    let space = FiniteTrajectorySpace::enumerate(set, policy, horizon)?;
    let kl_values: Vec<f64> = (0..space.num_embodiments()).map(|e| space.kl_to_mixture(e)).collect();
    let mut reports = Vec::with_capacity(space.num_embodiments() * betas.len());
    for e in 0..space.num_embodiments() {
        let outcome = minimize_dual(&space, e)?;
        for &beta in betas {
            let reward: Vec<f64> = outcome.scaled_reward.iter().map(|&u| beta * u).collect();
            let (numeric, p_star) = inner_max_closed_form(&space, &reward, beta, e)?;
            let closed = -beta * kl_values[e];
            let stationarity_gap = p_star
                .iter()
                .zip(space.p_e(e))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            reports.push(OracleReport {
                embodiment: e,
                beta,
                closed_form_value: closed,
                numeric_minimax_value: numeric,
                gap: (numeric - closed).abs(),
                kl_values: kl_values.clone(),
                argmin_reward: reward,
                argmax_distribution: p_star,
                stationarity_gap,
                converged: outcome.converged,
            });
        }
    }
    Ok(reports)
}

/// Three independent computations of the identification value.
#[derive(Debug, Clone, Serialize)]
pub struct MiIdentityReport {
    /// E_e KL(p_e || p_bar).
    pub kl_form: f64,
    /// E_e E_{tau ~ p_e} [log p(e|tau) - log p(e)].
    pub posterior_form: f64,
    /// I(e; tau) from the explicit joint distribution.
    pub mutual_information_form: f64,
    pub max_gap: f64,
}

/// Verify that the KL, posterior-ratio, and mutual-information forms of
/// the identification value agree.
pub fn verify_mi_identity(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    horizon: usize,
) -> Result<MiIdentityReport, CoreError> {
    let space = FiniteTrajectorySpace::enumerate(set, policy, horizon)?;
    let m = space.num_embodiments();

    let kl_form: f64 = (0..m).map(|e| space.prior()[e] * space.kl_to_mixture(e)).sum();

    let mut posterior_form = 0.0;
    for e in 0..m {
        let pe = space.p_e(e);
        let prior_e = space.prior()[e];
        for idx in 0..space.len() {
            if pe[idx] == 0.0 {
                continue;
            }
            let post = space.posterior(idx)[e];
            posterior_form += prior_e * pe[idx] * (safe_ln(post) - safe_ln(prior_e));
        }
    }

    // Third path: build the explicit joint, re-derive both marginals from
    // it, and evaluate the standard mutual-information sum.
    let mut joint = vec![vec![0.0; space.len()]; m];
    for (e, row) in joint.iter_mut().enumerate() {
        for (idx, cell) in row.iter_mut().enumerate() {
            *cell = space.prior()[e] * space.p_e(e)[idx];
        }
    }
    let marg_e: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
    let mut marg_tau = vec![0.0; space.len()];
    for row in &joint {
        for (mt, &c) in marg_tau.iter_mut().zip(row) {
            *mt += c;
        }
    }
    let mut mutual_information_form = 0.0;
    for (e, row) in joint.iter().enumerate() {
        for (idx, &c) in row.iter().enumerate() {
            if c > 0.0 {
                mutual_information_form += c * (safe_ln(c) - safe_ln(marg_e[e]) - safe_ln(marg_tau[idx]));
            }
        }
    }

    let max_gap = (kl_form - posterior_form)
        .abs()
        .max((kl_form - mutual_information_form).abs())
        .max((posterior_form - mutual_information_form).abs());
    Ok(MiIdentityReport { kl_form, posterior_form, mutual_information_form, max_gap })
}

/// Exhaustive skill-and-embodiment trajectory distributions.
#[derive(Debug, Clone)]
pub struct SkillSpace {
    pub skill_prior: Vec<f64>,
    pub embodiment_prior: Vec<f64>,
    /// `per_skill[z][e][idx]` = p(tau | z, e).
    pub per_skill: Vec<Vec<Vec<f64>>>,
    /// `per_embodiment[e][idx]` = p(tau | e), skills marginalized.
    pub per_embodiment: Vec<Vec<f64>>,
    /// Full mixture over skills and embodiments.
    pub mixture: Vec<f64>,
}

/// Enumerate p(tau | z, e) for a skill-conditioned policy and fold out the
/// skill and embodiment marginals.
pub fn enumerate_skill_space(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    skill_prior: &[f64],
    horizon: usize,
) -> Result<SkillSpace, CoreError> {
    let shape = policy.shape();
    if shape.num_skills != skill_prior.len() {
        return Err(CoreError::DimensionMismatch {
            what: "skill prior",
            got: skill_prior.len(),
            expected: shape.num_skills,
        });
    }
    let m = set.len();
    let mut per_skill = Vec::with_capacity(skill_prior.len());
    for z in 0..skill_prior.len() {
        let space = FiniteTrajectorySpace::enumerate_keyed(set, policy, z, 0, horizon)?;
        per_skill.push((0..m).map(|e| space.p_e(e).to_vec()).collect::<Vec<_>>());
    }
    let count = per_skill[0][0].len();
    let mut per_embodiment = vec![vec![0.0; count]; m];
    for (z, by_e) in per_skill.iter().enumerate() {
        for (e, probs) in by_e.iter().enumerate() {
            for (acc, &p) in per_embodiment[e].iter_mut().zip(probs) {
                *acc += skill_prior[z] * p;
            }
        }
    }
    let mut mixture = vec![0.0; count];
    for (e, probs) in per_embodiment.iter().enumerate() {
        for (mix, &p) in mixture.iter_mut().zip(probs) {
            *mix += set.prior()[e] * p;
        }
    }
    Ok(SkillSpace {
        skill_prior: skill_prior.to_vec(),
        embodiment_prior: set.prior().to_vec(),
        per_skill,
        per_embodiment,
        mixture,
    })
}

/// Both sides of the skill-objective decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct SkillDecompositionReport {
    /// E_{e,z} KL(p(tau|z,e) || mixture).
    pub lhs: f64,
    /// E_e E_{tau|e} [log p(e|tau) - log p(e)].
    pub embodiment_term: f64,
    /// E_e KL(p(tau,z|e) || p(z|e) p(tau|e)).
    pub skill_term: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Verify that the joint divergence splits into the embodiment
/// identification term plus the per-embodiment skill information term.
pub fn verify_skill_decomposition(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    skill_prior: &[f64],
    horizon: usize,
) -> Result<SkillDecompositionReport, CoreError> {
    let space = enumerate_skill_space(set, policy, skill_prior, horizon)?;
    let (embodiment_term, skill_term) =
        crate::rewards::skill_objective_terms(set, policy, skill_prior, horizon)?;
    let mut lhs = 0.0;
    for (e, &pe) in space.embodiment_prior.iter().enumerate() {
        for (z, &pz) in space.skill_prior.iter().enumerate() {
            lhs += pe * pz * kl_divergence(&space.per_skill[z][e], &space.mixture);
        }
    }
    let rhs = embodiment_term + skill_term;
    Ok(SkillDecompositionReport { lhs, embodiment_term, skill_term, rhs, gap: (lhs - rhs).abs() })
}

/// Expected per-step identification rewards against the trajectory-level
/// value. Diagnostic only: the gap quantifies how far the per-step
/// practice sits from the objective it stands in for.
#[derive(Debug, Clone, Serialize)]
pub struct StepwiseGapReport {
    /// E_{e,tau}[log p(e) - log p(e|tau)] with the full-trajectory posterior.
    pub trajectory_value: f64,
    /// E_{e,tau}[sum over steps of log p(e) - log p(e|prefix)].
    pub stepwise_value: f64,
    pub gap: f64,
}

/// Compare summed per-prefix identification rewards with the
/// full-trajectory reward by exhaustive enumeration.
pub fn measure_stepwise_gap(
    set: &EmbodimentSet,
    policy: &TabularPolicy,
    horizon: usize,
) -> Result<StepwiseGapReport, CoreError> {
    let space = FiniteTrajectorySpace::enumerate(set, policy, horizon)?;
    let m = space.num_embodiments();
    let mut trajectory_value = 0.0;
    let mut stepwise_value = 0.0;
    for idx in 0..space.len() {
        let pairs = space.decode(idx);
        for e in 0..m {
            let weight = space.prior()[e] * space.p_e(e)[idx];
            if weight == 0.0 {
                continue;
            }
            let lp_prior = safe_ln(space.prior()[e]);
            // Posterior after each observed transition along the prefix.
            let mut log_w: Vec<f64> = set.prior().iter().map(|&p| safe_ln(p)).collect();
            let mut per_step_sum = 0.0;
            let mut last_reward = 0.0;
            for t in 1..pairs.len() {
                let (ps, pa) = pairs[t - 1];
                let (s, _) = pairs[t];
                for (e2, lw) in log_w.iter_mut().enumerate() {
                    if !is_log_zero(*lw) {
                        *lw += safe_ln(set.transition_prob(e2, ps, pa, s));
                    }
                }
                let z = log_sum_exp(&log_w);
                let log_post = log_w[e] - z;
                last_reward = lp_prior - log_post;
                per_step_sum += last_reward;
            }
            trajectory_value += weight * last_reward;
            stepwise_value += weight * per_step_sum;
        }
    }
    Ok(StepwiseGapReport {
        trajectory_value,
        stepwise_value,
        gap: (trajectory_value - stepwise_value).abs(),
    })
}

/// Size limits for randomly sampled verification instances.
#[derive(Debug, Clone, Copy)]
pub struct InstanceLimits {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_embodiments: usize,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        Self { max_states: 3, max_actions: 2, max_embodiments: 3 }
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    v
}

/// Random fully-supported instance: dynamics, initial distribution, prior,
/// and a stochastic state policy.
pub fn sample_instance(
    rng: &mut ChaCha8Rng,
    limits: InstanceLimits,
) -> (EmbodimentSet, TabularPolicy) {
    let ns = rng.random_range(2..=limits.max_states);
    let na = rng.random_range(1..=limits.max_actions);
    let m = rng.random_range(2..=limits.max_embodiments);
    let set = sample_embodiment_set(rng, ns, na, m);
    let policy = sample_policy(rng, PolicyShape::states_only(ns), na);
    (set, policy)
}

/// Random embodiment set with strictly positive rows and prior.
pub fn sample_embodiment_set(rng: &mut ChaCha8Rng, ns: usize, na: usize, m: usize) -> EmbodimentSet {
    let mut ems = Vec::with_capacity(m);
    for e in 0..m {
        let mut probs = Vec::with_capacity(ns * na * ns);
        for _ in 0..ns * na {
            probs.extend(random_distribution(rng, ns));
        }
        ems.push(Embodiment::direct(format!("sampled-{e}"), TransitionKernel::new(ns, na, probs).unwrap()));
    }
    let prior = random_distribution(rng, m);
    let initial = random_distribution(rng, ns);
    EmbodimentSet::new(ems, prior, initial).unwrap()
}

/// Random stochastic policy for a conditioning shape.
pub fn sample_policy(rng: &mut ChaCha8Rng, shape: PolicyShape, na: usize) -> TabularPolicy {
    let mut probs = Vec::with_capacity(shape.num_keys() * na);
    for _ in 0..shape.num_keys() {
        probs.extend(random_distribution(rng, na));
    }
    TabularPolicy::from_probs(shape, na, probs).unwrap()
}

/// Batch result for one sampled instance.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremInstanceOutcome {
    pub instance: usize,
    pub max_gap: f64,
    pub max_stationarity_gap: f64,
    pub all_converged: bool,
    pub pass: bool,
    pub reports: Vec<OracleReport>,
}

/// Run the min-max identity check on `instances` random instances, in
/// parallel, with per-instance RNG substreams so results are independent
/// of thread scheduling.
pub fn verify_theorem_batch(
    instances: usize,
    horizon: usize,
    betas: &[f64],
    tolerance: f64,
    seed: u64,
) -> Result<Vec<TheoremInstanceOutcome>, CoreError> {
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[0x7465_6f72, i as u64]);
            let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
            let reports = verify_theorem(&set, &policy, horizon, betas)?;
            let max_gap = reports.iter().map(|r| r.gap).fold(0.0f64, f64::max);
            let max_stationarity_gap =
                reports.iter().map(|r| r.stationarity_gap).fold(0.0f64, f64::max);
            let all_converged = reports.iter().all(|r| r.converged);
            Ok(TheoremInstanceOutcome {
                instance: i,
                max_gap,
                max_stationarity_gap,
                all_converged,
                pass: max_gap < tolerance && all_converged,
                reports,
            })
        })
        .collect()
}

/// Run the three-path identity check on random instances.
pub fn verify_mi_batch(
    instances: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<MiIdentityReport>, CoreError> {
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[0x6d69_6964, i as u64]);
            let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
            verify_mi_identity(&set, &policy, horizon)
        })
        .collect()
}

/// Run the decomposition check on random skill-conditioned instances.
/// Every fifth instance uses a single embodiment, the degenerate case
/// where the embodiment term must vanish.
pub fn verify_skill_batch(
    instances: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<SkillDecompositionReport>, CoreError> {
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, &[0x736b_696c, i as u64]);
            let ns = rng.random_range(2..=3);
            let na = rng.random_range(1..=2);
            let m = if i % 5 == 0 { 1 } else { rng.random_range(2..=3) };
            let k = 2;
            let set = sample_embodiment_set(&mut rng, ns, na, m);
            let shape = PolicyShape { num_states: ns, num_skills: k, num_contexts: 1 };
            let policy = sample_policy(&mut rng, shape, na);
            let skill_prior = random_distribution(&mut rng, k);
            verify_skill_decomposition(&set, &policy, &skill_prior, horizon)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::counterexample_embodiments;
    use crate::inference::posterior_from_trajectory;
    use crate::mdp::Trajectory;

    fn identical_pair(rng: &mut ChaCha8Rng) -> EmbodimentSet {
        let ns = 2;
        let na = 2;
        let mut probs = Vec::new();
        for _ in 0..ns * na {
            probs.extend(random_distribution(rng, ns));
        }
        let kernel = TransitionKernel::new(ns, na, probs).unwrap();
        EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("a", kernel.clone()), Embodiment::direct("b", kernel)],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    /// Two embodiments, one action, deterministic transitions to different
    /// states: one step identifies the embodiment perfectly.
    fn distinguishing_pair() -> EmbodimentSet {
        let left = TransitionKernel::deterministic(2, 1, &[vec![0], vec![0]]).unwrap();
        let right = TransitionKernel::deterministic(2, 1, &[vec![1], vec![1]]).unwrap();
        EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("left", left), Embodiment::direct("right", right)],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn trivial_space_has_one_sure_trajectory() {
        let kernel = TransitionKernel::deterministic(1, 1, &[vec![0]]).unwrap();
        let set =
            EmbodimentSet::with_uniform_prior(vec![Embodiment::direct("only", kernel)], vec![1.0])
                .unwrap();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(1), 1);
        for horizon in [1, 2, 4] {
            let space = FiniteTrajectorySpace::enumerate(&set, &policy, horizon).unwrap();
            assert_eq!(space.len(), 1);
            assert!((space.p_e(0)[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn counterexample_space_at_length_two() {
        let set = counterexample_embodiments();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 2);
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 2).unwrap();
        assert_eq!(space.len(), 16);
        for e in 0..2 {
            let total: f64 = space.p_e(e).iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "embodiment {e} sums to {total}");
        }
        // Pair list ((0,0),(0,0)): stay possible only in the first
        // embodiment: 1/2 * 1/2 * 1 * 1/2.
        assert!((space.p_e(0)[0] - 0.125).abs() < 1e-15);
        assert!(space.p_e(1)[0] == 0.0);
    }

    #[test]
    fn space_probabilities_sum_to_one_on_random_instances() {
        let mut rng = substream(101, &[0]);
        for _ in 0..10 {
            let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
            let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
            for e in 0..space.num_embodiments() {
                let total: f64 = space.p_e(e).iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
            let mix_total: f64 = space.mixture().iter().sum();
            assert!((mix_total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_embodiments_share_the_distribution() {
        let mut rng = substream(102, &[0]);
        let set = identical_pair(&mut rng);
        let policy = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        for idx in 0..space.len() {
            assert!((space.p_e(0)[idx] - space.p_e(1)[idx]).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_round_trips_the_index() {
        let set = counterexample_embodiments();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 2);
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        let base = 4;
        for idx in 0..space.len() {
            let pairs = space.decode(idx);
            let mut rebuilt = 0;
            for (s, a) in pairs {
                rebuilt = rebuilt * base + (s * 2 + a);
            }
            assert_eq!(rebuilt, idx);
        }
    }

    #[test]
    fn space_size_guard_trips() {
        let mut rng = substream(103, &[0]);
        let set = sample_embodiment_set(&mut rng, 3, 2, 2);
        let policy = sample_policy(&mut rng, PolicyShape::states_only(3), 2);
        let err = FiniteTrajectorySpace::enumerate(&set, &policy, 8).unwrap_err();
        assert!(matches!(err, CoreError::TrajectorySpaceTooLarge { .. }));
    }

    #[test]
    fn constant_reward_tilts_nothing() {
        let mut rng = substream(104, &[0]);
        let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        let reward = vec![0.7; space.len()];
        let (value, p_star) = inner_max_closed_form(&space, &reward, 1.0, 0).unwrap();
        assert!(value.abs() < 1e-12);
        for (ps, pb) in p_star.iter().zip(space.mixture()) {
            assert!((ps - pb).abs() < 1e-12);
        }
    }

    #[test]
    fn large_beta_linearizes_the_dual() {
        let mut rng = substream(105, &[0]);
        let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        let reward: Vec<f64> = (0..space.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let (value, _) = inner_max_closed_form(&space, &reward, 1e6, 0).unwrap();
        let mean_mix: f64 = space.mixture().iter().zip(&reward).map(|(p, r)| p * r).sum();
        let mean_e: f64 = space.p_e(0).iter().zip(&reward).map(|(p, r)| p * r).sum();
        assert!((value - (mean_mix - mean_e)).abs() < 1e-4);
    }

    #[test]
    fn closed_form_matches_projected_gradient() {
        let mut rng = substream(106, &[0]);
        for trial in 0..5 {
            let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
            let space = FiniteTrajectorySpace::enumerate(&set, &policy, 2).unwrap();
            let reward: Vec<f64> =
                (0..space.len()).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            for &beta in &[0.5, 1.0, 5.0] {
                let (closed, p_closed) = inner_max_closed_form(&space, &reward, beta, 0).unwrap();
                let (pga, p_pga) = projected_gradient_max(&space, &reward, beta, 0).unwrap();
                assert!(
                    (closed - pga).abs() < 1e-5,
                    "trial {trial} beta {beta}: closed {closed} vs pga {pga}"
                );
                let dist = p_closed
                    .iter()
                    .zip(&p_pga)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(dist < 1e-3, "trial {trial} beta {beta}: tilt mismatch {dist}");
            }
        }
    }

    #[test]
    fn dual_minimum_equals_negative_kl() {
        let mut rng = substream(107, &[0]);
        for trial in 0..10 {
            let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
            let reports = verify_theorem(&set, &policy, 3, &[0.1, 1.0, 10.0]).unwrap();
            for r in &reports {
                assert!(r.converged, "trial {trial}: no convergence");
                assert!(r.gap < 1e-6, "trial {trial}: gap {}", r.gap);
                assert!(r.stationarity_gap < 1e-6, "trial {trial}: stationarity {}", r.stationarity_gap);
            }
        }
    }

    #[test]
    fn dual_minimum_is_zero_for_identical_embodiments() {
        let mut rng = substream(108, &[0]);
        let set = identical_pair(&mut rng);
        let policy = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let reports = verify_theorem(&set, &policy, 3, &[1.0]).unwrap();
        for r in &reports {
            assert!(r.closed_form_value.abs() < 1e-12);
            assert!(r.numeric_minimax_value.abs() < 1e-9);
        }
    }

    #[test]
    fn dual_minimum_is_zero_for_a_single_embodiment() {
        let mut rng = substream(109, &[0]);
        let set = sample_embodiment_set(&mut rng, 2, 2, 1);
        let policy = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let reports = verify_theorem(&set, &policy, 3, &[0.1, 1.0, 10.0]).unwrap();
        for r in &reports {
            assert!(r.closed_form_value.abs() < 1e-12);
            assert!(r.numeric_minimax_value.abs() < 1e-9);
        }
    }

    #[test]
    fn stationarity_reward_is_the_log_ratio_up_to_a_shift() {
        let mut rng = substream(110, &[0]);
        let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 2).unwrap();
        let outcome = minimize_dual(&space, 0).unwrap();
        assert!(outcome.converged);
        // r*/beta - log(p_e/p_bar) must be constant wherever p_e > 0.
        let mut shifts = Vec::new();
        for idx in 0..space.len() {
            let pe = space.p_e(0)[idx];
            if pe > 1e-12 {
                shifts.push(outcome.scaled_reward[idx] - (safe_ln(pe) - safe_ln(space.mixture()[idx])));
            }
        }
        let spread = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - shifts.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-7, "shift spread {spread}");
    }

    #[test]
    fn dual_is_convex_shift_invariant_and_lower_bounded() {
        let mut rng = substream(111, &[0]);
        let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        let beta = 1.0;
        let e = 0;
        let bound = -beta * space.kl_to_mixture(e);
        for _ in 0..100 {
            let r1: Vec<f64> = (0..space.len()).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let r2: Vec<f64> = (0..space.len()).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let lambda: f64 = rng.random();
            let blend: Vec<f64> =
                r1.iter().zip(&r2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let g1 = inner_max_closed_form(&space, &r1, beta, e).unwrap().0;
            let g2 = inner_max_closed_form(&space, &r2, beta, e).unwrap().0;
            let gb = inner_max_closed_form(&space, &blend, beta, e).unwrap().0;
            assert!(gb <= lambda * g1 + (1.0 - lambda) * g2 + 1e-9);
            assert!(g1 >= bound - 1e-9);

            let c: f64 = rng.random::<f64>() * 10.0 - 5.0;
            let shifted: Vec<f64> = r1.iter().map(|r| r + c).collect();
            let gs = inner_max_closed_form(&space, &shifted, beta, e).unwrap().0;
            assert!((gs - g1).abs() < 1e-9);
        }
    }

    #[test]
    fn three_identity_paths_agree() {
        let mut rng = substream(112, &[0]);
        for _ in 0..10 {
            let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
            let report = verify_mi_identity(&set, &policy, 3).unwrap();
            assert!(report.max_gap < 1e-9, "gap {}", report.max_gap);
        }
    }

    #[test]
    fn identical_embodiments_carry_no_information() {
        let mut rng = substream(113, &[0]);
        let set = identical_pair(&mut rng);
        let policy = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let report = verify_mi_identity(&set, &policy, 3).unwrap();
        assert!(report.kl_form.abs() < 1e-12);
        assert!(report.mutual_information_form.abs() < 1e-12);
    }

    #[test]
    fn perfect_identification_yields_prior_entropy() {
        let set = distinguishing_pair();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 1);
        let report = verify_mi_identity(&set, &policy, 2).unwrap();
        assert!((report.kl_form - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(report.max_gap < 1e-12);
    }

    #[test]
    fn posterior_is_calibrated_over_the_space() {
        let mut rng = substream(114, &[0]);
        let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        let m = space.num_embodiments();
        let mut recovered = vec![0.0; m];
        for idx in 0..space.len() {
            let post = space.posterior(idx);
            for (acc, &p) in recovered.iter_mut().zip(&post) {
                *acc += space.mixture()[idx] * p;
            }
        }
        for (got, want) in recovered.iter().zip(space.prior()) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn space_posterior_matches_transition_bayes() {
        let mut rng = substream(115, &[0]);
        let (set, policy) = sample_instance(&mut rng, InstanceLimits::default());
        let space = FiniteTrajectorySpace::enumerate(&set, &policy, 3).unwrap();
        for idx in 0..space.len() {
            let pairs = space.decode(idx);
            let states: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
            let actions: Vec<usize> = pairs.iter().take(pairs.len() - 1).map(|&(_, a)| a).collect();
            let traj = Trajectory::new(states, actions).unwrap();
            let direct = posterior_from_trajectory(&set, &traj).unwrap();
            let via_space = space.posterior(idx);
            for (a, b) in direct.iter().zip(&via_space) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decomposition_balances_on_random_instances() {
        let reports = verify_skill_batch(10, 3, 2024).unwrap();
        for (i, r) in reports.iter().enumerate() {
            assert!(r.gap < 1e-10, "instance {i}: gap {}", r.gap);
            assert!(r.embodiment_term >= -1e-12);
            assert!(r.skill_term >= -1e-12);
            if i % 5 == 0 {
                assert!(r.embodiment_term.abs() < 1e-12, "Dirac instance {i} leaks");
            }
        }
    }

    #[test]
    fn skill_independent_single_embodiment_decomposition_vanishes() {
        let mut rng = substream(116, &[0]);
        let set = sample_embodiment_set(&mut rng, 2, 2, 1);
        // Same rows for both skills.
        let base = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let shape = PolicyShape { num_states: 2, num_skills: 2, num_contexts: 1 };
        let mut rows = Vec::new();
        for _z in 0..2 {
            for s in 0..2 {
                rows.extend(base.row(s).to_vec());
            }
        }
        let policy = TabularPolicy::from_probs(shape, 2, rows).unwrap();
        let report = verify_skill_decomposition(&set, &policy, &[0.5, 0.5], 3).unwrap();
        assert!(report.lhs.abs() < 1e-12);
        assert!(report.embodiment_term.abs() < 1e-12);
        assert!(report.skill_term.abs() < 1e-12);
    }

    #[test]
    fn with_one_embodiment_lhs_is_the_skill_term() {
        let mut rng = substream(117, &[0]);
        let set = sample_embodiment_set(&mut rng, 2, 2, 1);
        let shape = PolicyShape { num_states: 2, num_skills: 2, num_contexts: 1 };
        let policy = sample_policy(&mut rng, shape, 2);
        let report = verify_skill_decomposition(&set, &policy, &[0.5, 0.5], 3).unwrap();
        assert!(report.embodiment_term.abs() < 1e-12);
        assert!((report.lhs - report.skill_term).abs() < 1e-10);
        assert!(report.skill_term > 1e-4, "random skills should differ");
    }

    #[test]
    fn stepwise_gap_vanishes_for_identical_embodiments() {
        let mut rng = substream(118, &[0]);
        let set = identical_pair(&mut rng);
        let policy = sample_policy(&mut rng, PolicyShape::states_only(2), 2);
        let report = measure_stepwise_gap(&set, &policy, 3).unwrap();
        assert!(report.trajectory_value.abs() < 1e-12);
        assert!(report.stepwise_value.abs() < 1e-12);
    }

    #[test]
    fn one_step_identification_saturates_the_prefix_posterior() {
        // Every transition reveals the embodiment, so the summed per-step
        // reward is (horizon - 1) times the trajectory-level reward.
        let set = distinguishing_pair();
        let policy = TabularPolicy::uniform(PolicyShape::states_only(2), 1);
        let horizon = 4;
        let report = measure_stepwise_gap(&set, &policy, horizon).unwrap();
        assert!(
            (report.stepwise_value - (horizon - 1) as f64 * report.trajectory_value).abs() < 1e-12
        );
        assert!((report.trajectory_value - -std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn theorem_batch_passes_and_is_deterministic() {
        let a = verify_theorem_batch(6, 3, &[0.1, 1.0, 10.0], 1e-4, 7).unwrap();
        let b = verify_theorem_batch(6, 3, &[0.1, 1.0, 10.0], 1e-4, 7).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.pass, "instance {} gap {}", x.instance, x.max_gap);
            assert_eq!(x.max_gap.to_bits(), y.max_gap.to_bits());
        }
    }
}
