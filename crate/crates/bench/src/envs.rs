//! Built-in embodiment families and their downstream reward tasks.
//!
//! Grid families share a 5-action unified space (four moves plus stay) on a
//! width x height board with row-major cell indices. Embodiments within a
//! family differ by a single structured parameter: a disabled action routed
//! to stay through the projector, a per-embodiment slip probability, or a
//! cyclic permutation of the four directions.

use celab_core::geometry::counterexample_embodiments;
use celab_core::mdp::{Embodiment, EmbodimentSet, RewardTable, TransitionKernel};

use crate::error::{BenchError, Result};

pub const FAMILY_APPENDIX_A1: &str = "appendix-a1";
pub const FAMILY_CONFUSION_ROOMS: &str = "confusion-rooms";
pub const FAMILY_GRID_DISABLED: &str = "grid-disabled";
pub const FAMILY_GRID_SLIP: &str = "grid-slip";
pub const FAMILY_GRID_PERMUTED: &str = "grid-permuted";

pub fn family_names() -> [&'static str; 5] {
    [
        FAMILY_APPENDIX_A1,
        FAMILY_CONFUSION_ROOMS,
        FAMILY_GRID_DISABLED,
        FAMILY_GRID_SLIP,
        FAMILY_GRID_PERMUTED,
    ]
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const NUM_MOVES: usize = 5;

const ACTION_NAMES: [&str; NUM_MOVES] = ["up", "down", "left", "right", "stay"];

pub fn action_name(action: usize) -> &'static str {
    ACTION_NAMES[action]
}

pub fn parse_action(name: &str) -> Result<usize> {
    ACTION_NAMES.iter().position(|&n| n == name).ok_or_else(|| BenchError::BadSpec {
        field: "action",
        message: format!("unknown action {name:?}, expected one of {ACTION_NAMES:?}"),
    })
}

pub const TASK_GOAL: &str = "goal";
pub const TASK_CORRIDOR: &str = "corridor";
pub const TASK_ANTI_GOAL: &str = "anti-goal";

/// Everything needed to build one environment plus its downstream task.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub family: String,
    pub width: usize,
    pub height: usize,
    /// grid-disabled: unified action each embodiment loses (projected to stay).
    pub disabled: Vec<usize>,
    /// grid-slip: per-embodiment probability that a move lands on stay.
    pub slips: Vec<f64>,
    /// grid-permuted and confusion-rooms: per-embodiment cyclic offset
    /// applied to the four direction actions.
    pub rotations: Vec<usize>,
    /// Downstream reward name: goal, corridor, or anti-goal.
    pub reward: String,
    /// Goal cell (row, col) for the goal and anti-goal tasks.
    pub goal: (usize, usize),
}

impl EnvSpec {
    /// Canonical parameters for a family; config files override from here.
    pub fn defaults(family: &str) -> Result<Self> {
        let base = |width, height| Self {
            family: family.to_string(),
            width,
            height,
            disabled: Vec::new(),
            slips: Vec::new(),
            rotations: Vec::new(),
            reward: TASK_GOAL.to_string(),
            goal: (height - 1, width - 1),
        };
        match family {
            FAMILY_APPENDIX_A1 => {
                let mut spec = base(2, 1);
                spec.goal = (0, 1);
                Ok(spec)
            }
            FAMILY_CONFUSION_ROOMS => {
                let mut spec = base(4, 2);
                spec.rotations = vec![0, 1];
                Ok(spec)
            }
            FAMILY_GRID_DISABLED => {
                let mut spec = base(5, 5);
                spec.disabled = vec![UP, DOWN, LEFT, RIGHT];
                Ok(spec)
            }
            FAMILY_GRID_SLIP => {
                let mut spec = base(5, 5);
                spec.slips = vec![0.0, 0.1, 0.2, 0.3, 0.4];
                Ok(spec)
            }
            FAMILY_GRID_PERMUTED => {
                let mut spec = base(5, 5);
                spec.rotations = vec![0, 1, 2, 3];
                Ok(spec)
            }
            other => Err(BenchError::BadSpec {
                field: "family",
                message: format!("unknown family {other:?}, expected one of {:?}", family_names()),
            }),
        }
    }

    pub fn num_embodiments(&self) -> usize {
        match self.family.as_str() {
            FAMILY_APPENDIX_A1 => 2,
            FAMILY_GRID_DISABLED => self.disabled.len(),
            FAMILY_GRID_SLIP => self.slips.len(),
            _ => self.rotations.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |field: &'static str, message: String| Err(BenchError::BadSpec { field, message });
        match self.family.as_str() {
            FAMILY_APPENDIX_A1 => Ok(()),
            FAMILY_CONFUSION_ROOMS => {
                if (self.width, self.height) != (4, 2) {
                    return fail(
                        "width/height",
                        format!("confusion-rooms is a fixed 2x4 board, got {}x{}", self.height, self.width),
                    );
                }
                validate_rotations(&self.rotations)
            }
            FAMILY_GRID_DISABLED => {
                validate_board(self.width, self.height)?;
                if self.disabled.len() < 2 {
                    return fail("disabled", "need at least 2 embodiments".to_string());
                }
                if let Some(&a) = self.disabled.iter().find(|&&a| a >= STAY) {
                    return fail("disabled", format!("cannot disable action {a}; only the four moves"));
                }
                Ok(())
            }
            FAMILY_GRID_SLIP => {
                validate_board(self.width, self.height)?;
                if self.slips.len() < 2 {
                    return fail("slips", "need at least 2 embodiments".to_string());
                }
                if let Some(&p) = self.slips.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
                    return fail("slips", format!("slip probability {p} outside [0, 1]"));
                }
                Ok(())
            }
            FAMILY_GRID_PERMUTED => {
                validate_board(self.width, self.height)?;
                validate_rotations(&self.rotations)
            }
            other => fail("family", format!("unknown family {other:?}")),
        }
    }
}

fn validate_board(width: usize, height: usize) -> Result<()> {
    if width < 2 || height < 2 || width * height > 400 {
        return Err(BenchError::BadSpec {
            field: "width/height",
            message: format!("board {height}x{width} outside the supported 2x2..400-cell range"),
        });
    }
    Ok(())
}

fn validate_rotations(rotations: &[usize]) -> Result<()> {
    if rotations.len() < 2 {
        return Err(BenchError::BadSpec {
            field: "rotations",
            message: "need at least 2 embodiments".to_string(),
        });
    }
    if let Some(&r) = rotations.iter().find(|&&r| r >= 4) {
        return Err(BenchError::BadSpec {
            field: "rotations",
            message: format!("rotation {r} outside 0..4"),
        });
    }
    for (i, &a) in rotations.iter().enumerate() {
        if rotations[..i].contains(&a) {
            return Err(BenchError::BadSpec {
                field: "rotations",
                message: format!("rotation {a} repeats; embodiments must differ"),
            });
        }
    }
    Ok(())
}

/// Row-major cell index.
pub fn cell(width: usize, row: usize, col: usize) -> usize {
    row * width + col
}

/// Where a direction action lands from (row, col), honoring board edges and
/// the blocked-edge predicate; `None` crossings stay in place.
fn move_target(
    width: usize,
    height: usize,
    row: usize,
    col: usize,
    action: usize,
    blocked: &dyn Fn((usize, usize), (usize, usize)) -> bool,
) -> (usize, usize) {
    let (dr, dc): (isize, isize) = match action {
        UP => (-1, 0),
        DOWN => (1, 0),
        LEFT => (0, -1),
        RIGHT => (0, 1),
        _ => (0, 0),
    };
    let nr = row as isize + dr;
    let nc = col as isize + dc;
    if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
        return (row, col);
    }
    let to = (nr as usize, nc as usize);
    if blocked((row, col), to) {
        (row, col)
    } else {
        to
    }
}

/// Deterministic 5-action kernel with optional blocked edges, slip mass on
/// stay, and a per-state direction rotation.
fn grid_kernel(
    width: usize,
    height: usize,
    slip: f64,
    blocked: &dyn Fn((usize, usize), (usize, usize)) -> bool,
    rotate_at: &dyn Fn(usize, usize) -> usize,
) -> TransitionKernel {
    let ns = width * height;
    let mut probs = vec![0.0; ns * NUM_MOVES * ns];
    for row in 0..height {
        for col in 0..width {
            let s = cell(width, row, col);
            let rot = rotate_at(row, col);
            for a in 0..NUM_MOVES {
                let executed = if a < STAY { (a + rot) % 4 } else { STAY };
                let (tr, tc) = move_target(width, height, row, col, executed, blocked);
                let target = cell(width, tr, tc);
                let base = (s * NUM_MOVES + a) * ns;
                probs[base + target] += 1.0 - slip;
                probs[base + s] += slip;
            }
        }
    }
    TransitionKernel::new(ns, NUM_MOVES, probs).expect("grid rows are distributions")
}

fn open_board(_: (usize, usize), _: (usize, usize)) -> bool {
    false
}

/// Inter-room edges on the 2x4 confusion board: the two 2x2 rooms connect
/// only through the top row.
fn confusion_wall(from: (usize, usize), to: (usize, usize)) -> bool {
    let crosses = (from.1 <= 1) != (to.1 <= 1);
    crosses && from.0 != 0
}

/// Quadrant walls on the 4x4 four-room board, with a door at each end of
/// both dividing lines.
fn four_room_wall(from: (usize, usize), to: (usize, usize)) -> bool {
    if (from.1 <= 1) != (to.1 <= 1) && !matches!(from.0, 0 | 3) {
        return true;
    }
    (from.0 <= 1) != (to.0 <= 1) && !matches!(from.1, 0 | 3)
}

fn uniform_initial(ns: usize) -> Vec<f64> {
    vec![1.0 / ns as f64; ns]
}

/// Materialize the embodiment set for a spec.
pub fn build_env(spec: &EnvSpec) -> Result<EmbodimentSet> {
    spec.validate()?;
    let (width, height) = (spec.width, spec.height);
    let set = match spec.family.as_str() {
        FAMILY_APPENDIX_A1 => counterexample_embodiments(),
        FAMILY_CONFUSION_ROOMS => {
            let embodiments = spec
                .rotations
                .iter()
                .map(|&rot| {
                    // Permuted controls only inside the right room; the left
                    // room is common ground where nothing identifies you.
                    let kernel = grid_kernel(width, height, 0.0, &confusion_wall, &|_, col| {
                        if col >= 2 {
                            rot
                        } else {
                            0
                        }
                    });
                    Embodiment::direct(format!("rooms-rot{rot}"), kernel)
                })
                .collect();
            EmbodimentSet::with_uniform_prior(embodiments, uniform_initial(width * height))?
        }
        FAMILY_GRID_DISABLED => {
            let kernel = grid_kernel(width, height, 0.0, &open_board, &|_, _| 0);
            let embodiments = spec
                .disabled
                .iter()
                .map(|&dead| {
                    let projector: Vec<usize> =
                        (0..NUM_MOVES).map(|a| if a == dead { STAY } else { a }).collect();
                    Embodiment::new(format!("no-{}", action_name(dead)), kernel.clone(), projector)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            EmbodimentSet::with_uniform_prior(embodiments, uniform_initial(width * height))?
        }
        FAMILY_GRID_SLIP => {
            let embodiments = spec
                .slips
                .iter()
                .map(|&p| {
                    let kernel = grid_kernel(width, height, p, &open_board, &|_, _| 0);
                    Embodiment::direct(format!("slip-{p}"), kernel)
                })
                .collect();
            EmbodimentSet::with_uniform_prior(embodiments, uniform_initial(width * height))?
        }
        FAMILY_GRID_PERMUTED => {
            let kernel = grid_kernel(width, height, 0.0, &open_board, &|_, _| 0);
            let embodiments = spec
                .rotations
                .iter()
                .map(|&rot| {
                    let projector: Vec<usize> =
                        (0..NUM_MOVES).map(|a| if a < STAY { (a + rot) % 4 } else { STAY }).collect();
                    Embodiment::new(format!("rot-{rot}"), kernel.clone(), projector)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            EmbodimentSet::with_uniform_prior(embodiments, uniform_initial(width * height))?
        }
        other => {
            return Err(BenchError::BadSpec {
                field: "family",
                message: format!("unknown family {other:?}"),
            })
        }
    };
    Ok(set)
}

/// Single-embodiment four-room board for skill-discovery runs.
pub fn four_rooms() -> EmbodimentSet {
    let kernel = grid_kernel(4, 4, 0.0, &four_room_wall, &|_, _| 0);
    EmbodimentSet::with_uniform_prior(vec![Embodiment::direct("rooms", kernel)], uniform_initial(16))
        .expect("four-room construction is well-formed")
}

/// Split a family into train and held-out sets by interleaving the
/// parameter levels: even positions train, odd positions held out.
/// Deterministic; the seed is accepted for interface parity with the
/// stochastic entry points and does not change the split.
pub fn train_test_split(spec: &EnvSpec, _seed: u64) -> Result<(EmbodimentSet, EmbodimentSet)> {
    let full = build_env(spec)?;
    if full.len() <= 2 {
        return Err(BenchError::BadSpec {
            field: "family",
            message: format!("{} embodiments leave nothing to hold out", full.len()),
        });
    }
    let train: Vec<Embodiment> =
        (0..full.len()).step_by(2).map(|e| full.embodiment(e).clone()).collect();
    let heldout: Vec<Embodiment> =
        (1..full.len()).step_by(2).map(|e| full.embodiment(e).clone()).collect();
    let initial = full.initial().to_vec();
    Ok((
        EmbodimentSet::with_uniform_prior(train, initial.clone())?,
        EmbodimentSet::with_uniform_prior(heldout, initial)?,
    ))
}

/// Downstream state reward for the spec's task name.
pub fn task_reward(spec: &EnvSpec) -> Result<RewardTable> {
    if spec.family == FAMILY_APPENDIX_A1 {
        return match spec.reward.as_str() {
            TASK_GOAL => Ok(RewardTable::new(vec![0.0, 1.0])),
            TASK_ANTI_GOAL => Ok(RewardTable::new(vec![0.0, -1.0])),
            other => Err(BenchError::BadSpec {
                field: "reward",
                message: format!("task {other:?} undefined on the two-state board"),
            }),
        };
    }
    let ns = spec.width * spec.height;
    let mut values = vec![0.0; ns];
    match spec.reward.as_str() {
        TASK_GOAL | TASK_ANTI_GOAL => {
            let (row, col) = spec.goal;
            if row >= spec.height || col >= spec.width {
                return Err(BenchError::BadSpec {
                    field: "goal",
                    message: format!("cell ({row}, {col}) outside the {}x{} board", spec.height, spec.width),
                });
            }
            values[cell(spec.width, row, col)] =
                if spec.reward == TASK_GOAL { 1.0 } else { -1.0 };
        }
        TASK_CORRIDOR => {
            if spec.family == FAMILY_CONFUSION_ROOMS {
                values[cell(spec.width, 0, 1)] = 1.0;
                values[cell(spec.width, 0, 2)] = 1.0;
            } else {
                let row = spec.height / 2;
                for col in 0..spec.width {
                    values[cell(spec.width, row, col)] = 1.0;
                }
            }
        }
        other => {
            return Err(BenchError::BadSpec {
                field: "reward",
                message: format!(
                    "unknown task {other:?}, expected {TASK_GOAL}, {TASK_CORRIDOR}, or {TASK_ANTI_GOAL}"
                ),
            })
        }
    }
    Ok(RewardTable::new(values))
}

/// Cells of the left confusion room, for occupancy summaries.
pub fn left_room_cells(spec: &EnvSpec) -> Vec<usize> {
    let mut cells = Vec::new();
    for row in 0..spec.height {
        for col in 0..2 {
            cells.push(cell(spec.width, row, col));
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use celab_core::mdp::{occupancy, TabularPolicy};

    #[test]
    fn defaults_build_for_every_family() {
        for family in family_names() {
            let spec = EnvSpec::defaults(family).unwrap();
            let set = build_env(&spec).unwrap();
            assert!(set.len() >= 2, "{family}: {} embodiments", set.len());
            assert_eq!(set.len(), spec.num_embodiments());
        }
    }

    #[test]
    fn appendix_board_is_the_two_state_construction() {
        let spec = EnvSpec::defaults(FAMILY_APPENDIX_A1).unwrap();
        let set = build_env(&spec).unwrap();
        assert_eq!(set.num_states(), 2);
        assert_eq!(set.num_actions(), 2);
        assert_eq!(set.len(), 2);
        // Stay/swap table: the second embodiment swaps the action roles.
        assert_eq!(set.transition_prob(0, 0, 0, 0), 1.0);
        assert_eq!(set.transition_prob(0, 0, 1, 1), 1.0);
        assert_eq!(set.transition_prob(1, 0, 0, 1), 1.0);
        assert_eq!(set.transition_prob(1, 0, 1, 0), 1.0);
    }

    #[test]
    fn disabled_action_turns_into_stay() {
        let spec = EnvSpec::defaults(FAMILY_GRID_DISABLED).unwrap();
        let set = build_env(&spec).unwrap();
        // Embodiment 0 disables "up": from an interior cell the unified up
        // action stays put while everyone else moves.
        let s = cell(5, 2, 2);
        assert_eq!(set.transition_prob(0, s, UP, s), 1.0);
        assert_eq!(set.transition_prob(1, s, UP, cell(5, 1, 2)), 1.0);
    }

    #[test]
    fn zero_slip_is_deterministic_and_slip_mass_stays() {
        let spec = EnvSpec::defaults(FAMILY_GRID_SLIP).unwrap();
        let set = build_env(&spec).unwrap();
        let s = cell(5, 2, 2);
        assert_eq!(set.transition_prob(0, s, RIGHT, cell(5, 2, 3)), 1.0);
        let p = 0.3;
        assert!((set.transition_prob(3, s, RIGHT, cell(5, 2, 3)) - (1.0 - p)).abs() < 1e-12);
        assert!((set.transition_prob(3, s, RIGHT, s) - p).abs() < 1e-12);
    }

    #[test]
    fn permuted_projectors_rotate_the_moves() {
        let spec = EnvSpec::defaults(FAMILY_GRID_PERMUTED).unwrap();
        let set = build_env(&spec).unwrap();
        let s = cell(5, 2, 2);
        // Rotation 1 maps up -> down.
        assert_eq!(set.transition_prob(1, s, UP, cell(5, 3, 2)), 1.0);
        assert_eq!(set.transition_prob(1, s, STAY, s), 1.0);
    }

    #[test]
    fn confusion_rooms_left_identical_right_distinct() {
        let spec = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
        let set = build_env(&spec).unwrap();
        let ns = set.num_states();
        for s in 0..ns {
            let col = s % spec.width;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for e in 0..set.len() {
                let mut row = Vec::new();
                for a in 0..NUM_MOVES {
                    for s2 in 0..ns {
                        row.push(set.transition_prob(e, s, a, s2));
                    }
                }
                rows.push(row);
            }
            if col <= 1 {
                assert_eq!(rows[0], rows[1], "left cell {s} must be common ground");
            }
        }
        // At least one right-room row differs for the pair.
        let mut differs = false;
        for s in 0..ns {
            if s % spec.width >= 2 {
                for a in 0..NUM_MOVES {
                    for s2 in 0..ns {
                        if set.transition_prob(0, s, a, s2) != set.transition_prob(1, s, a, s2) {
                            differs = true;
                        }
                    }
                }
            }
        }
        assert!(differs);
    }

    #[test]
    fn doorway_is_the_only_room_crossing() {
        let spec = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
        let set = build_env(&spec).unwrap();
        // Row 0 door open both ways.
        assert_eq!(set.transition_prob(0, cell(4, 0, 1), RIGHT, cell(4, 0, 2)), 1.0);
        assert_eq!(set.transition_prob(0, cell(4, 0, 2), LEFT, cell(4, 0, 1)), 1.0);
        // Row 1 crossing blocked.
        assert_eq!(set.transition_prob(0, cell(4, 1, 1), RIGHT, cell(4, 1, 1)), 1.0);
        assert_eq!(set.transition_prob(0, cell(4, 1, 2), LEFT, cell(4, 1, 2)), 1.0);
    }

    #[test]
    fn uniform_policy_occupies_both_rooms_evenly() {
        let spec = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
        let set = build_env(&spec).unwrap();
        let policy = TabularPolicy::uniform(
            celab_core::mdp::PolicyShape::states_only(set.num_states()),
            set.num_actions(),
        );
        let left = left_room_cells(&spec);
        for e in 0..set.len() {
            let d = occupancy(&set, e, &policy, 0.99).unwrap();
            let mass: f64 = left.iter().map(|&s| d.probs()[s]).sum();
            assert!((mass - 0.5).abs() < 1e-10, "embodiment {e}: left mass {mass}");
        }
    }

    #[test]
    fn four_rooms_has_two_doors_per_room() {
        let set = four_rooms();
        assert_eq!(set.num_states(), 16);
        // (0,1) -> (0,2) open; (1,1) -> (1,2) walled.
        assert_eq!(set.transition_prob(0, cell(4, 0, 1), RIGHT, cell(4, 0, 2)), 1.0);
        assert_eq!(set.transition_prob(0, cell(4, 1, 1), RIGHT, cell(4, 1, 1)), 1.0);
        // (1,0) -> (2,0) open; (1,1) -> (2,1) walled.
        assert_eq!(set.transition_prob(0, cell(4, 1, 0), DOWN, cell(4, 2, 0)), 1.0);
        assert_eq!(set.transition_prob(0, cell(4, 1, 1), DOWN, cell(4, 1, 1)), 1.0);
        // Uniform random walk still reaches everything.
        let policy = TabularPolicy::uniform(
            celab_core::mdp::PolicyShape::states_only(16),
            NUM_MOVES,
        );
        let d = occupancy(&set, 0, &policy, 0.99).unwrap();
        assert!(d.probs().iter().all(|&p| p > 0.01));
    }

    #[test]
    fn interleaved_split_is_disjoint_and_deterministic() {
        let spec = EnvSpec::defaults(FAMILY_GRID_SLIP).unwrap();
        let (train, heldout) = train_test_split(&spec, 7).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(heldout.len(), 2);
        let names = |set: &EmbodimentSet| -> Vec<String> {
            (0..set.len()).map(|e| set.embodiment(e).name.clone()).collect()
        };
        assert_eq!(names(&train), vec!["slip-0", "slip-0.2", "slip-0.4"]);
        assert_eq!(names(&heldout), vec!["slip-0.1", "slip-0.3"]);
        let (again, _) = train_test_split(&spec, 99).unwrap();
        assert_eq!(names(&train), names(&again));
    }

    #[test]
    fn two_embodiment_families_refuse_to_split() {
        let spec = EnvSpec::defaults(FAMILY_APPENDIX_A1).unwrap();
        assert!(train_test_split(&spec, 0).is_err());
        let rooms = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
        assert!(train_test_split(&rooms, 0).is_err());
    }

    #[test]
    fn tasks_mark_the_right_cells() {
        let mut spec = EnvSpec::defaults(FAMILY_GRID_DISABLED).unwrap();
        let reward = task_reward(&spec).unwrap();
        assert_eq!(reward.reward(cell(5, 4, 4)), 1.0);
        assert_eq!(reward.values().iter().sum::<f64>(), 1.0);

        spec.reward = TASK_ANTI_GOAL.to_string();
        assert_eq!(task_reward(&spec).unwrap().reward(cell(5, 4, 4)), -1.0);

        spec.reward = TASK_CORRIDOR.to_string();
        let corridor = task_reward(&spec).unwrap();
        assert_eq!(corridor.values().iter().sum::<f64>(), 5.0);
        assert_eq!(corridor.reward(cell(5, 2, 0)), 1.0);

        spec.reward = "treasure".to_string();
        assert!(task_reward(&spec).is_err());

        spec.reward = TASK_GOAL.to_string();
        spec.goal = (9, 0);
        assert!(task_reward(&spec).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = EnvSpec::defaults(FAMILY_GRID_DISABLED).unwrap();
        spec.disabled = vec![UP, STAY];
        assert!(build_env(&spec).is_err());

        let mut spec = EnvSpec::defaults(FAMILY_GRID_SLIP).unwrap();
        spec.slips = vec![0.0, 1.5];
        assert!(build_env(&spec).is_err());

        let mut spec = EnvSpec::defaults(FAMILY_GRID_PERMUTED).unwrap();
        spec.rotations = vec![1, 1];
        assert!(build_env(&spec).is_err());

        let mut spec = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
        spec.width = 6;
        assert!(build_env(&spec).is_err());

        assert!(EnvSpec::defaults("maze").is_err());
    }
}
