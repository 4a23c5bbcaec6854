//! Plain-text run configuration.
//!
//! Sectioned key-value files, human-diffable. Unknown sections, unknown
//! keys, and duplicate keys are hard errors with the offending line number;
//! silent-default drift is the main reproducibility hazard this guards
//! against.
//!
//! ```text
//! # smoke test
//! [env]
//! family = appendix-a1
//!
//! [train]
//! strategy = ce
//! pretrain_steps = 2000
//!
//! [run]
//! seed = 7
//! ```
//!
//! Full schema:
//!
//! ```text
//! [env]   family, width, height, disabled, slips, rotations, prior,
//!         reward, goal, split
//! [train] strategy, weights, skills, pretrain_steps, finetune_steps,
//!         horizon, actor_rate, critic_rate, discriminator_rate,
//!         entropy_bonus, gamma, beta, context_threshold, finetune_mode
//! [run]   seed, eval_episodes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use celab_core::agents::{FinetuneMode, TrainConfig};
use celab_core::rewards::{reward_kind_names, IntrinsicRewardSpec};

use crate::envs::{parse_action, EnvSpec};
use crate::error::{BenchError, Result};

pub const MODE_INIT_ONLY: &str = "init-only";
pub const MODE_KL_PENALIZED: &str = "kl-penalized";

const ENV_KEYS: [&str; 10] = [
    "family", "width", "height", "disabled", "slips", "rotations", "prior", "reward", "goal",
    "split",
];
const TRAIN_KEYS: [&str; 14] = [
    "strategy",
    "weights",
    "skills",
    "pretrain_steps",
    "finetune_steps",
    "horizon",
    "actor_rate",
    "critic_rate",
    "discriminator_rate",
    "entropy_bonus",
    "gamma",
    "beta",
    "context_threshold",
    "finetune_mode",
];
const RUN_KEYS: [&str; 2] = ["seed", "eval_episodes"];

/// A fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub env: EnvSpec,
    /// Train on the interleaved parameter split and evaluate held-out too.
    pub split: bool,
    /// Non-uniform embodiment prior; uniform when absent.
    pub prior: Option<Vec<f64>>,
    pub train: TrainConfig,
    pub finetune_mode: FinetuneMode,
    pub eval_episodes: usize,
    /// Raw file text; snapshotted into records and hashed into the run id.
    pub text: String,
}

struct Entry {
    line: usize,
    value: String,
}

type Section = BTreeMap<String, Entry>;

fn err(path: &str, line: usize, message: String) -> BenchError {
    BenchError::Config { path: path.to_string(), line, message }
}

/// Split the text into known sections, rejecting anything off-schema.
fn scan(path: &str, text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(path, line, format!("unterminated section header {trimmed:?}")))?
                .trim();
            if !matches!(name, "env" | "train" | "run") {
                return Err(err(
                    path,
                    line,
                    format!("unknown section [{name}], expected [env], [train], or [run]"),
                ));
            }
            if sections.contains_key(name) {
                return Err(err(path, line, format!("section [{name}] appears twice")));
            }
            sections.insert(name.to_string(), Section::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| err(path, line, format!("expected `key = value`, got {trimmed:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let section_name = current
            .clone()
            .ok_or_else(|| err(path, line, format!("key {key:?} appears before any section")))?;
        let known: &[&str] = match section_name.as_str() {
            "env" => &ENV_KEYS,
            "train" => &TRAIN_KEYS,
            _ => &RUN_KEYS,
        };
        if !known.contains(&key) {
            return Err(err(
                path,
                line,
                format!("unknown key {key:?} in [{section_name}], expected one of {known:?}"),
            ));
        }
        let section = sections.get_mut(&section_name).expect("section was just inserted");
        if let Some(prev) = section.get(key) {
            return Err(err(
                path,
                line,
                format!("duplicate key {key:?} in [{section_name}], first set on line {}", prev.line),
            ));
        }
        section.insert(key.to_string(), Entry { line, value: value.to_string() });
    }
    Ok(sections)
}

fn parse_value<T: std::str::FromStr>(path: &str, key: &str, entry: &Entry) -> Result<T> {
    entry.value.parse().map_err(|_| {
        err(
            path,
            entry.line,
            format!(
                "cannot parse {key} value {:?} as {}",
                entry.value,
                std::any::type_name::<T>()
            ),
        )
    })
}

fn parse_list<T: std::str::FromStr>(path: &str, key: &str, entry: &Entry) -> Result<Vec<T>> {
    entry
        .value
        .split(',')
        .map(|item| {
            item.trim().parse().map_err(|_| {
                err(
                    path,
                    entry.line,
                    format!("cannot parse {key} item {:?} in {:?}", item.trim(), entry.value),
                )
            })
        })
        .collect()
}

fn parse_bool(path: &str, key: &str, entry: &Entry) -> Result<bool> {
    match entry.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(err(path, entry.line, format!("{key} must be true or false, got {other:?}"))),
    }
}

/// Parse config text. `path` is used only for error messages.
pub fn parse_config(path: &str, text: &str) -> Result<BenchConfig> {
    let mut sections = scan(path, text)?;
    let mut env_section = sections.remove("env").unwrap_or_default();
    let mut train_section = sections.remove("train").unwrap_or_default();
    let run_section = sections.remove("run").unwrap_or_default();

    let family = env_section
        .remove("family")
        .ok_or_else(|| err(path, 1, "missing required key `family` in [env]".to_string()))?;
    let mut env = EnvSpec::defaults(family.value.trim())
        .map_err(|e| err(path, family.line, e.to_string()))?;

    let mut split = false;
    let mut prior: Option<Vec<f64>> = None;
    let mut goal_set = false;
    for (key, entry) in env_section {
        match key.as_str() {
            "width" => env.width = parse_value(path, &key, &entry)?,
            "height" => env.height = parse_value(path, &key, &entry)?,
            "disabled" => {
                let names: Vec<String> = parse_list(path, &key, &entry)?;
                env.disabled = names
                    .iter()
                    .map(|n| parse_action(n).map_err(|e| err(path, entry.line, e.to_string())))
                    .collect::<Result<_>>()?;
            }
            "slips" => env.slips = parse_list(path, &key, &entry)?,
            "rotations" => env.rotations = parse_list(path, &key, &entry)?,
            "prior" => prior = Some(parse_list(path, &key, &entry)?),
            "reward" => env.reward = entry.value,
            "goal" => {
                let pair: Vec<usize> = parse_list(path, &key, &entry)?;
                if pair.len() != 2 {
                    return Err(err(
                        path,
                        entry.line,
                        format!("goal needs `row, col`, got {:?}", entry.value),
                    ));
                }
                env.goal = (pair[0], pair[1]);
                goal_set = true;
            }
            "split" => split = parse_bool(path, &key, &entry)?,
            _ => unreachable!("scan admits only schema keys"),
        }
    }
    if !goal_set {
        // The default goal tracks the default board; keep it pinned to the
        // far corner when width or height are overridden.
        env.goal = (env.height.saturating_sub(1), env.width.saturating_sub(1));
    }
    if split && prior.is_some() {
        return Err(err(
            path,
            1,
            "prior and split cannot be combined; the split re-normalizes to uniform".to_string(),
        ));
    }

    let mut train = TrainConfig::default();
    let mut kind = String::from("ce");
    let mut weights: Vec<f64> = Vec::new();
    let mut skills: Option<usize> = None;
    let mut finetune_mode = FinetuneMode::InitOnly;
    if let Some(entry) = train_section.remove("strategy") {
        if !reward_kind_names().contains(&entry.value.as_str()) {
            return Err(err(
                path,
                entry.line,
                format!("unknown strategy {:?}, expected one of {:?}", entry.value, reward_kind_names()),
            ));
        }
        kind = entry.value;
    }
    for (key, entry) in train_section {
        match key.as_str() {
            "weights" => weights = parse_list(path, &key, &entry)?,
            "skills" => skills = Some(parse_value(path, &key, &entry)?),
            "pretrain_steps" => train.pretrain_steps = parse_value(path, &key, &entry)?,
            "finetune_steps" => train.finetune_steps = parse_value(path, &key, &entry)?,
            "horizon" => train.horizon = parse_value(path, &key, &entry)?,
            "actor_rate" => train.actor_rate = parse_value(path, &key, &entry)?,
            "critic_rate" => train.critic_rate = parse_value(path, &key, &entry)?,
            "discriminator_rate" => train.discriminator_rate = parse_value(path, &key, &entry)?,
            "entropy_bonus" => train.entropy_bonus = parse_value(path, &key, &entry)?,
            "gamma" => train.gamma = parse_value(path, &key, &entry)?,
            "beta" => train.beta = parse_value(path, &key, &entry)?,
            "context_threshold" => train.context_threshold = parse_value(path, &key, &entry)?,
            "finetune_mode" => {
                finetune_mode = match entry.value.as_str() {
                    MODE_INIT_ONLY => FinetuneMode::InitOnly,
                    MODE_KL_PENALIZED => FinetuneMode::KlPenalized,
                    other => {
                        return Err(err(
                            path,
                            entry.line,
                            format!(
                                "unknown finetune_mode {other:?}, expected {MODE_INIT_ONLY} or {MODE_KL_PENALIZED}"
                            ),
                        ))
                    }
                }
            }
            _ => unreachable!("scan admits only schema keys"),
        }
    }
    let mut reward = IntrinsicRewardSpec::new(kind);
    if !weights.is_empty() {
        reward = reward.with_weights(weights);
    }
    if let Some(k) = skills {
        reward = reward.with_skills(k);
    }
    train.reward = reward;

    let mut eval_episodes = 200usize;
    for (key, entry) in run_section.iter() {
        match key.as_str() {
            "seed" => train.seed = parse_value(path, key, entry)?,
            "eval_episodes" => eval_episodes = parse_value(path, key, entry)?,
            _ => unreachable!("scan admits only schema keys"),
        }
    }
    if eval_episodes == 0 {
        return Err(err(path, 1, "eval_episodes must be positive".to_string()));
    }

    train.validate().map_err(|e| err(path, 1, e.to_string()))?;
    Ok(BenchConfig {
        env,
        split,
        prior,
        train,
        finetune_mode,
        eval_episodes,
        text: text.to_string(),
    })
}

/// Read and parse a config file.
pub fn load_config(path: &Path) -> Result<BenchConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    parse_config(&path.display().to_string(), &text)
}
