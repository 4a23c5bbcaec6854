//! Geometry of discounted occupancy sets.
//!
//! For one embodiment the set of achievable occupancies is the convex hull
//! of the deterministic-policy occupancies. Averaged over an embodiment
//! distribution this breaks: a stochastic policy's mixture occupancy can
//! leave the hull of the deterministic mixtures. This module enumerates
//! deterministic occupancies, answers hull-membership queries exactly, and
//! packages the two-embodiment construction demonstrating the escape.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::CoreError;
use crate::mdp::{
    mixture_occupancy, occupancy, Embodiment, EmbodimentSet, OccupancyMeasure, PolicyShape,
    TabularPolicy, TransitionKernel,
};

/// Cap on |A|^|S| for exhaustive deterministic-policy enumeration.
pub const DETERMINISTIC_ENUMERATION_BOUND: u128 = 4096;

/// All deterministic state policies as action-choice tables.
pub fn enumerate_deterministic_policies(
    num_states: usize,
    num_actions: usize,
) -> Result<Vec<Vec<usize>>, CoreError> {
    let count = (num_actions as u128)
        .checked_pow(num_states as u32)
        .unwrap_or(u128::MAX);
    if count > DETERMINISTIC_ENUMERATION_BOUND {
        return Err(CoreError::EnumerationTooLarge {
            got: count,
            bound: DETERMINISTIC_ENUMERATION_BOUND,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut choices = vec![0usize; num_states];
    loop {
        out.push(choices.clone());
        let mut s = 0;
        loop {
            if s == num_states {
                return Ok(out);
            }
            choices[s] += 1;
            if choices[s] < num_actions {
                break;
            }
            choices[s] = 0;
            s += 1;
        }
    }
}

/// Occupancies of every deterministic policy in one embodiment.
pub fn deterministic_occupancies(
    set: &EmbodimentSet,
    e: usize,
    gamma: f64,
) -> Result<Vec<(Vec<usize>, OccupancyMeasure)>, CoreError> {
    let shape = PolicyShape::states_only(set.num_states());
    enumerate_deterministic_policies(set.num_states(), set.num_actions())?
        .into_iter()
        .map(|choices| {
            let policy = TabularPolicy::deterministic(shape, set.num_actions(), &choices)?;
            let d = occupancy(set, e, &policy, gamma)?;
            Ok((choices, d))
        })
        .collect()
}

/// Prior-averaged occupancies of every deterministic policy.
pub fn deterministic_mixture_occupancies(
    set: &EmbodimentSet,
    gamma: f64,
) -> Result<Vec<(Vec<usize>, OccupancyMeasure)>, CoreError> {
    let shape = PolicyShape::states_only(set.num_states());
    enumerate_deterministic_policies(set.num_states(), set.num_actions())?
        .into_iter()
        .map(|choices| {
            let policy = TabularPolicy::deterministic(shape, set.num_actions(), &choices)?;
            let d = mixture_occupancy(set, &policy, gamma)?;
            Ok((choices, d))
        })
        .collect()
}

/// Result of projecting a point onto the convex hull of a vertex list.
#[derive(Debug, Clone)]
pub struct HullQuery {
    /// Euclidean distance from the point to the hull.
    pub distance: f64,
    /// True when the distance is within the query tolerance.
    pub inside: bool,
    /// Convex weights of the nearest hull point, aligned with the vertices.
    pub weights: Vec<f64>,
    /// The nearest hull point itself.
    pub projection: Vec<f64>,
}

/// Least-norm solve of the equality-constrained least-squares step on the
/// free vertex set. Rank-deficient systems (duplicate vertices) fall back
/// to the minimum-norm solution, which is still a subproblem minimizer.
fn equality_step(v: &DMatrix<f64>, p: &DVector<f64>, free: &[usize]) -> (Vec<f64>, f64) {
    let f = free.len();
    let vf = v.select_columns(free.iter());
    let gram = vf.transpose() * &vf;
    let vtp = vf.transpose() * p;
    let mut kkt = DMatrix::<f64>::zeros(f + 1, f + 1);
    kkt.view_mut((0, 0), (f, f)).copy_from(&gram);
    for i in 0..f {
        kkt[(i, f)] = -1.0;
        kkt[(f, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(f + 1);
    rhs.rows_mut(0, f).copy_from(&vtp);
    rhs[f] = 1.0;
    let svd = kkt.svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-13)
        .expect("SVD solve on a square system cannot fail");
    (sol.rows(0, f).iter().cloned().collect(), sol[f])
}

/// Distance from `point` to the convex hull of `vertices`, via an active-set
/// solve of `min |V w - point|^2` over the simplex of weights.
///
/// Invariant to vertex order and to duplicated vertices.
pub fn hull_membership(
    vertices: &[Vec<f64>],
    point: &[f64],
    tol: f64,
) -> Result<HullQuery, CoreError> {
    if vertices.is_empty() {
        return Err(CoreError::DimensionMismatch { what: "hull vertices", got: 0, expected: 1 });
    }
    let dim = point.len();
    for v in vertices {
        if v.len() != dim {
            return Err(CoreError::DimensionMismatch {
                what: "hull vertex",
                got: v.len(),
                expected: dim,
            });
        }
    }
    let m = vertices.len();
    let v = DMatrix::<f64>::from_fn(dim, m, |i, j| vertices[j][i]);
    let p = DVector::<f64>::from_column_slice(point);

    // Feasible start: all mass on the vertex nearest the query point.
    let start = (0..m)
        .min_by(|&a, &b| {
            let da = (v.column(a) - &p).norm_squared();
            let db = (v.column(b) - &p).norm_squared();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    let mut w = DVector::<f64>::zeros(m);
    w[start] = 1.0;
    let mut free: Vec<usize> = vec![start];

    let active_tol = 1e-12;
    for _ in 0..32 * (m + 1) {
        let (target, lambda) = equality_step(&v, &p, &free);
        let worst = target.iter().cloned().fold(f64::INFINITY, f64::min);
        if worst >= -active_tol {
            // Subproblem solution is feasible; adopt it and test optimality.
            let mut next = DVector::<f64>::zeros(m);
            for (&j, &tw) in free.iter().zip(&target) {
                next[j] = tw.max(0.0);
            }
            let scale: f64 = next.iter().sum();
            next /= scale;
            w = next;
            let grad = v.transpose() * (&v * &w - &p);
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..m {
                if free.contains(&j) {
                    continue;
                }
                let reduced = grad[j] - lambda;
                if reduced < -1e-10 && entering.map_or(true, |(_, r)| reduced < r) {
                    entering = Some((j, reduced));
                }
            }
            match entering {
                None => break,
                Some((j, _)) => free.push(j),
            }
        } else {
            // Blocked: move toward the target until a weight hits zero.
            let mut alpha = 1.0f64;
            let mut blocker = None;
            for (&j, &tw) in free.iter().zip(&target) {
                if tw < w[j] {
                    let a = w[j] / (w[j] - tw);
                    if a < alpha {
                        alpha = a;
                        blocker = Some(j);
                    }
                }
            }
            for (&j, &tw) in free.iter().zip(&target) {
                w[j] += alpha * (tw - w[j]);
            }
            if let Some(j) = blocker {
                w[j] = 0.0;
                free.retain(|&k| k != j);
            }
            if free.is_empty() {
                // Numerically possible only under heavy degeneracy.
                free.push(start);
                w[start] = 1.0;
            }
        }
    }

    let projection = &v * &w;
    let distance = (&projection - &p).norm();
    Ok(HullQuery {
        distance,
        inside: distance <= tol,
        weights: w.iter().cloned().collect(),
        projection: projection.iter().cloned().collect(),
    })
}

/// Distance of a stochastic policy's occupancy from the deterministic hull
/// in a single embodiment. Zero (up to tolerance) for every valid MDP.
pub fn single_embodiment_hull_gap(
    set: &EmbodimentSet,
    e: usize,
    policy: &TabularPolicy,
    gamma: f64,
) -> Result<f64, CoreError> {
    let verts: Vec<Vec<f64>> = deterministic_occupancies(set, e, gamma)?
        .into_iter()
        .map(|(_, d)| d.probs().to_vec())
        .collect();
    let d = occupancy(set, e, policy, gamma)?;
    Ok(hull_membership(&verts, d.probs(), 1e-9)?.distance)
}

/// Two deterministic embodiments on two states and two actions whose
/// transition tables are swapped copies of each other. Under the uniform
/// embodiment prior every deterministic policy has mixture occupancy
/// (1/2, 1/2), yet one stochastic policy escapes that hull.
pub fn counterexample_embodiments() -> EmbodimentSet {
    let first = TransitionKernel::deterministic(2, 2, &[vec![0, 1], vec![1, 0]]).unwrap();
    let second = TransitionKernel::deterministic(2, 2, &[vec![1, 0], vec![0, 1]]).unwrap();
    EmbodimentSet::with_uniform_prior(
        vec![Embodiment::direct("forward", first), Embodiment::direct("mirrored", second)],
        vec![0.5, 0.5],
    )
    .unwrap()
}

/// The escaping policy: deterministic in the first state, uniform in the
/// second.
pub fn counterexample_probe_policy() -> TabularPolicy {
    TabularPolicy::from_probs(PolicyShape::states_only(2), 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap()
}

/// Closed-form mixture occupancy of the probe policy.
pub fn counterexample_mixture_closed_form(gamma: f64) -> [f64; 2] {
    let den = 4.0 - gamma * gamma;
    [2.0 / den, (2.0 - gamma * gamma) / den]
}

/// Closed-form per-embodiment occupancies of the probe policy.
pub fn counterexample_embodiment_closed_form(gamma: f64) -> [[f64; 2]; 2] {
    [
        [1.0 / (2.0 - gamma), (1.0 - gamma) / (2.0 - gamma)],
        [1.0 / (2.0 + gamma), (1.0 + gamma) / (2.0 + gamma)],
    ]
}

/// Closed-form distance from the probe mixture to the deterministic hull,
/// which collapses to the single point (1/2, 1/2).
pub fn counterexample_distance_closed_form(gamma: f64) -> f64 {
    let excess = 2.0 / (4.0 - gamma * gamma) - 0.5;
    excess * std::f64::consts::SQRT_2
}

/// One discount level of the counterexample summary.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleRow {
    pub gamma: f64,
    /// Probe-policy occupancy in each embodiment.
    pub probe_occupancies: Vec<Vec<f64>>,
    /// Prior-averaged probe occupancy.
    pub probe_mixture: Vec<f64>,
    /// Mixture occupancies of all deterministic policies (the hull vertices).
    pub deterministic_mixtures: Vec<Vec<f64>>,
    /// Distance of the probe mixture from the deterministic hull.
    pub hull_distance: f64,
    pub inside_hull: bool,
    /// Closed-form values for cross-checking.
    pub expected_mixture: Vec<f64>,
    pub expected_distance: f64,
}

/// Numerical reproduction of the counterexample at the given discounts.
pub fn counterexample_report(gammas: &[f64]) -> Result<Vec<CounterexampleRow>, CoreError> {
    let set = counterexample_embodiments();
    let probe = counterexample_probe_policy();
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let probe_occupancies: Vec<Vec<f64>> = (0..set.len())
            .map(|e| occupancy(&set, e, &probe, gamma).map(|d| d.probs().to_vec()))
            .collect::<Result<_, _>>()?;
        let probe_mixture = mixture_occupancy(&set, &probe, gamma)?.probs().to_vec();
        let deterministic_mixtures: Vec<Vec<f64>> = deterministic_mixture_occupancies(&set, gamma)?
            .into_iter()
            .map(|(_, d)| d.probs().to_vec())
            .collect();
        let query = hull_membership(&deterministic_mixtures, &probe_mixture, 1e-9)?;
        rows.push(CounterexampleRow {
            gamma,
            probe_occupancies,
            probe_mixture,
            deterministic_mixtures,
            hull_distance: query.distance,
            inside_hull: query.inside,
            expected_mixture: counterexample_mixture_closed_form(gamma).to_vec(),
            expected_distance: counterexample_distance_closed_form(gamma),
        });
    }
    Ok(rows)
}
