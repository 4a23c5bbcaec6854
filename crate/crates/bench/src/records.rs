//! Run persistence: JSON-lines metrics, decimal-text checkpoints, and the
//! run summary.
//!
//! Metric logs are append-only and carry the run id on every row so files
//! can be concatenated safely. Checkpoints are plain decimal text with the
//! shortest round-tripping float representation, so a restore is exact and
//! the format survives being reimplemented in any language.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use celab_core::agents::{AgentState, MetaController};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RUN_FILE: &str = "run.json";

const CHECKPOINT_HEADER: &str = "celab checkpoint v1";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Content-derived run id: hash of the config text and the effective seed.
pub fn run_id(config_text: &str, seed: u64) -> String {
    let mut bytes = config_text.as_bytes().to_vec();
    bytes.extend_from_slice(&seed.to_le_bytes());
    format!("{:016x}", fnv1a(&bytes))
}

/// Content hash of the code version string baked into the binary.
pub fn version_hash() -> String {
    format!("{:016x}", fnv1a(concat!("celab ", env!("CARGO_PKG_VERSION")).as_bytes()))
}

/// One metric observation; the log is a sequence of these, one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run: String,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Summary written next to the metric log. Mutable, unlike the log: the
/// wall clock and the finished flag are filled in at the end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: String,
    pub version: String,
    pub config: String,
    pub seed: u64,
    pub checkpoints: Vec<String>,
    pub wall_clock_secs: f64,
    pub finished: bool,
}

impl RunRecord {
    pub fn new(run: String, config: String, seed: u64) -> Self {
        Self {
            run,
            version: version_hash(),
            config,
            seed,
            checkpoints: Vec::new(),
            wall_clock_secs: 0.0,
            finished: false,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_FILE);
        let text = serde_json::to_string_pretty(self).expect("record is serializable");
        write_atomic(&path, text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| BenchError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))
}

/// Append-only metric log writer.
pub struct MetricsWriter {
    run: String,
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn append(dir: &Path, run: impl Into<String>) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| BenchError::io(&path, e))?;
        Ok(Self { run: run.into(), out: BufWriter::new(file), path })
    }

    pub fn write(&mut self, step: u64, metric: &str, value: f64) -> Result<()> {
        let row = MetricRow {
            run: self.run.clone(),
            step,
            metric: metric.to_string(),
            value,
        };
        let line = serde_json::to_string(&row).expect("row is serializable");
        writeln!(self.out, "{line}").map_err(|e| BenchError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| BenchError::io(&self.path, e))
    }
}

/// Read every row of a metric log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BenchError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: MetricRow = serde_json::from_str(&line).map_err(|e| BenchError::Corrupt {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", idx + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Phase completion marker, keyed to the run id so a changed config cannot
/// silently reuse stale state.
pub fn mark_phase(dir: &Path, run: &str, phase: &str) -> Result<()> {
    write_atomic(&dir.join(format!("{phase}.ok")), format!("{run}\n").as_bytes())
}

pub fn phase_done(dir: &Path, run: &str, phase: &str) -> bool {
    match std::fs::read_to_string(dir.join(format!("{phase}.ok"))) {
        Ok(text) => text.trim() == run,
        Err(_) => false,
    }
}

struct CheckpointWriter {
    out: String,
}

impl CheckpointWriter {
    fn new() -> Self {
        Self { out: format!("{CHECKPOINT_HEADER}\n") }
    }

    fn dims(&mut self, pairs: &[(&str, usize)]) {
        self.out.push_str("[dims]\n");
        for (key, value) in pairs {
            self.out.push_str(&format!("{key} {value}\n"));
        }
    }

    fn array(&mut self, name: &str, values: &[f64]) {
        self.out.push_str(&format!("[{name}]\n"));
        for v in values {
            // Debug formatting of f64 is the shortest exact representation.
            self.out.push_str(&format!("{v:?}\n"));
        }
    }
}

struct Checkpoint {
    dims: Vec<(String, usize)>,
    arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    fn parse(path: &Path, text: &str) -> Result<Self> {
        let corrupt = |message: String| BenchError::Corrupt { path: path.to_path_buf(), message };
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(corrupt("missing checkpoint header".to_string()));
        }
        let mut dims = Vec::new();
        let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
        let mut in_dims = false;
        for line in lines {
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| corrupt(format!("bad section line {line:?}")))?;
                in_dims = name == "dims";
                if !in_dims {
                    arrays.push((name.to_string(), Vec::new()));
                }
                continue;
            }
            if in_dims {
                let (key, value) = line
                    .split_once(' ')
                    .ok_or_else(|| corrupt(format!("bad dims line {line:?}")))?;
                let value = value
                    .parse()
                    .map_err(|_| corrupt(format!("bad dims value {value:?}")))?;
                dims.push((key.to_string(), value));
            } else {
                let slot = arrays
                    .last_mut()
                    .ok_or_else(|| corrupt(format!("value {line:?} before any section")))?;
                slot.1.push(
                    line.parse().map_err(|_| corrupt(format!("bad float {line:?}")))?,
                );
            }
        }
        Ok(Self { dims, arrays })
    }

    fn dim(&self, path: &Path, key: &str) -> Result<usize> {
        self.dims
            .iter()
            .find(|(k, _)| k == key)
            .map(|&(_, v)| v)
            .ok_or_else(|| BenchError::Corrupt {
                path: path.to_path_buf(),
                message: format!("missing dim {key:?}"),
            })
    }

    fn take(&self, path: &Path, name: &str, expected_len: usize) -> Result<Vec<f64>> {
        let values = self
            .arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| BenchError::Corrupt {
                path: path.to_path_buf(),
                message: format!("missing section [{name}]"),
            })?;
        if values.len() != expected_len {
            return Err(BenchError::Corrupt {
                path: path.to_path_buf(),
                message: format!("[{name}] has {} values, expected {expected_len}", values.len()),
            });
        }
        Ok(values)
    }

    fn has(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _)| n == name)
    }
}

/// Write the trainable tables of an agent as decimal text.
pub fn save_agent(path: &Path, state: &AgentState) -> Result<()> {
    let mut w = CheckpointWriter::new();
    w.dims(&[
        ("num_states", state.shape.num_states),
        ("num_skills", state.shape.num_skills),
        ("num_contexts", state.shape.num_contexts),
        ("num_actions", state.num_actions),
        ("env_steps", state.env_steps),
        ("episodes", state.episodes),
    ]);
    w.array("logits", &state.logits);
    w.array("critic", &state.critic);
    w.array("discriminator", state.discriminator.weights());
    if let Some(model) = &state.surprise {
        w.array("surprise", model.counts());
    }
    if let Some(disc) = &state.skills {
        w.array("skills", disc.weights());
    }
    write_atomic(path, w.out.as_bytes())
}

/// Restore tables into a freshly constructed agent of the same shape.
pub fn load_agent(path: &Path, state: &mut AgentState) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let ckpt = Checkpoint::parse(path, &text)?;
    for (key, expected) in [
        ("num_states", state.shape.num_states),
        ("num_skills", state.shape.num_skills),
        ("num_contexts", state.shape.num_contexts),
        ("num_actions", state.num_actions),
    ] {
        let got = ckpt.dim(path, key)?;
        if got != expected {
            return Err(BenchError::Corrupt {
                path: path.to_path_buf(),
                message: format!("{key} is {got}, expected {expected}"),
            });
        }
    }
    state.env_steps = ckpt.dim(path, "env_steps")?;
    state.episodes = ckpt.dim(path, "episodes")?;
    state.logits = ckpt.take(path, "logits", state.logits.len())?;
    state.critic = ckpt.take(path, "critic", state.critic.len())?;
    state
        .discriminator
        .set_weights(ckpt.take(path, "discriminator", state.discriminator.weights().len())?)?;
    match state.surprise.as_mut() {
        Some(model) if ckpt.has("surprise") => {
            model.set_counts(ckpt.take(path, "surprise", model.counts().len())?)?;
        }
        None if !ckpt.has("surprise") => {}
        _ => {
            return Err(BenchError::Corrupt {
                path: path.to_path_buf(),
                message: "surprise section does not match the reward strategy".to_string(),
            })
        }
    }
    match state.skills.as_mut() {
        Some(disc) if ckpt.has("skills") => {
            disc.set_weights(ckpt.take(path, "skills", disc.weights().len())?)?;
        }
        None if !ckpt.has("skills") => {}
        _ => {
            return Err(BenchError::Corrupt {
                path: path.to_path_buf(),
                message: "skills section does not match the reward strategy".to_string(),
            })
        }
    }
    state.sync_policy();
    Ok(())
}

/// Write a skill chooser as decimal text.
pub fn save_meta(path: &Path, meta: &MetaController) -> Result<()> {
    let mut w = CheckpointWriter::new();
    w.dims(&[
        ("num_states", meta.num_states),
        ("num_skills", meta.num_skills),
        ("num_contexts", meta.num_contexts),
    ]);
    w.array("logits", &meta.logits);
    w.array("critic", &meta.critic);
    write_atomic(path, w.out.as_bytes())
}

pub fn load_meta(path: &Path) -> Result<MetaController> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let ckpt = Checkpoint::parse(path, &text)?;
    let mut meta = MetaController::new(
        ckpt.dim(path, "num_states")?,
        ckpt.dim(path, "num_skills")?,
        ckpt.dim(path, "num_contexts")?,
    );
    meta.logits = ckpt.take(path, "logits", meta.logits.len())?;
    meta.critic = ckpt.take(path, "critic", meta.critic.len())?;
    meta.sync_probs();
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use celab_core::agents::{pretrain_peac_diayn, TrainConfig};
    use celab_core::mdp::{Embodiment, EmbodimentSet, TransitionKernel};
    use celab_core::rewards::{IntrinsicRewardSpec, KIND_CE_DIAYN};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("celab-records-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn run_ids_hash_config_and_seed() {
        let a = run_id("[env]\nfamily = appendix-a1\n", 0);
        let b = run_id("[env]\nfamily = appendix-a1\n", 1);
        let c = run_id("[env]\nfamily = grid-slip\n", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, run_id("[env]\nfamily = appendix-a1\n", 0));
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn metric_log_appends_without_rewriting() {
        let dir = tmp_dir("append");
        {
            let mut w = MetricsWriter::append(&dir, "run-a").unwrap();
            w.write(1, "loss", 0.5).unwrap();
            w.write(2, "loss", 0.25).unwrap();
            w.flush().unwrap();
        }
        let first = std::fs::read(dir.join(METRICS_FILE)).unwrap();
        {
            let mut w = MetricsWriter::append(&dir, "run-a").unwrap();
            w.write(3, "loss", 0.125).unwrap();
            w.flush().unwrap();
        }
        let second = std::fs::read(dir.join(METRICS_FILE)).unwrap();
        assert_eq!(&second[..first.len()], &first[..], "prior rows must not change");
        let rows = read_metrics(&dir.join(METRICS_FILE)).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.run == "run-a"));
        assert_eq!(rows[2].value, 0.125);
    }

    #[test]
    fn phase_markers_are_keyed_to_the_run() {
        let dir = tmp_dir("phase");
        assert!(!phase_done(&dir, "r1", "pretrain"));
        mark_phase(&dir, "r1", "pretrain").unwrap();
        assert!(phase_done(&dir, "r1", "pretrain"));
        assert!(!phase_done(&dir, "r2", "pretrain"));
    }

    #[test]
    fn agent_checkpoint_round_trips_exactly() {
        let kernel = TransitionKernel::deterministic(3, 2, &[vec![0, 1], vec![1, 2], vec![2, 0]])
            .unwrap();
        let shifted = TransitionKernel::deterministic(3, 2, &[vec![1, 0], vec![2, 1], vec![0, 2]])
            .unwrap();
        let set = EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("a", kernel), Embodiment::direct("b", shifted)],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        )
        .unwrap();
        let config = TrainConfig {
            pretrain_steps: 400,
            finetune_steps: 40,
            reward: IntrinsicRewardSpec::new(KIND_CE_DIAYN),
            seed: 5,
            ..TrainConfig::default()
        };
        let (mut state, _) = pretrain_peac_diayn(&set, &config, 2).unwrap();
        // Irrational-looking values exercise the exact float round trip.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for l in state.logits.iter_mut() {
            *l += rng.random::<f64>() * 1e-13;
        }
        state.sync_policy();

        let dir = tmp_dir("ckpt");
        let path = dir.join("agent.ckpt");
        save_agent(&path, &state).unwrap();
        let strategy = config.reward.clone().with_skills(2).build().unwrap();
        let mut restored = AgentState::fresh(&set, state.shape, strategy.as_ref(), 999);
        load_agent(&path, &mut restored).unwrap();

        assert_eq!(restored.logits, state.logits);
        assert_eq!(restored.critic, state.critic);
        assert_eq!(restored.discriminator.weights(), state.discriminator.weights());
        assert_eq!(
            restored.skills.as_ref().unwrap().weights(),
            state.skills.as_ref().unwrap().weights()
        );
        assert_eq!(restored.env_steps, state.env_steps);
        assert_eq!(restored.policy.row(3), state.policy.row(3));
    }

    #[test]
    fn mismatched_checkpoints_are_refused() {
        let kernel = TransitionKernel::deterministic(2, 2, &[vec![0, 1], vec![1, 0]]).unwrap();
        let set = EmbodimentSet::with_uniform_prior(
            vec![Embodiment::direct("a", kernel.clone()), Embodiment::direct("b", kernel)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let config =
            TrainConfig { pretrain_steps: 200, finetune_steps: 20, ..TrainConfig::default() };
        let strategy = config.reward.build().unwrap();
        let shape = celab_core::mdp::PolicyShape {
            num_states: 2,
            num_skills: 1,
            num_contexts: 3,
        };
        let state = AgentState::fresh(&set, shape, strategy.as_ref(), 1);
        let dir = tmp_dir("refuse");
        let path = dir.join("agent.ckpt");
        save_agent(&path, &state).unwrap();

        let wrong_shape = celab_core::mdp::PolicyShape {
            num_states: 2,
            num_skills: 2,
            num_contexts: 3,
        };
        let skilled = IntrinsicRewardSpec::new(KIND_CE_DIAYN).with_skills(2).build().unwrap();
        let mut target = AgentState::fresh(&set, wrong_shape, skilled.as_ref(), 1);
        assert!(load_agent(&path, &mut target).is_err());

        std::fs::write(&path, "not a checkpoint\n").unwrap();
        let mut target = AgentState::fresh(&set, shape, strategy.as_ref(), 1);
        assert!(load_agent(&path, &mut target).is_err());
    }

    #[test]
    fn meta_checkpoint_round_trips() {
        let mut meta = MetaController::new(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for l in meta.logits.iter_mut() {
            *l = rng.random::<f64>() * 2.0 - 1.0;
        }
        meta.sync_probs();
        for c in meta.critic.iter_mut() {
            *c = rng.random::<f64>();
        }
        let dir = tmp_dir("meta");
        let path = dir.join("meta.ckpt");
        save_meta(&path, &meta).unwrap();
        let restored = load_meta(&path).unwrap();
        assert_eq!(restored.logits, meta.logits);
        assert_eq!(restored.critic, meta.critic);
        assert_eq!(restored.probs, meta.probs);
    }

    #[test]
    fn run_record_survives_save_and_load() {
        let dir = tmp_dir("record");
        let mut record = RunRecord::new("abc123".to_string(), "[env]\n".to_string(), 9);
        record.checkpoints.push("pretrain.ckpt".to_string());
        record.save(&dir).unwrap();
        let loaded = RunRecord::load(&dir).unwrap();
        assert_eq!(loaded.run, "abc123");
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.checkpoints, vec!["pretrain.ckpt"]);
        assert!(!loaded.finished);
        assert_eq!(loaded.version, version_hash());
    }
}
