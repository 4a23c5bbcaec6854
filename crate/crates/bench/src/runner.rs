//! Experiment orchestration: pretrain, fine-tune, evaluate, with persisted
//! state between phases.
//!
//! Each phase reads its input from the previous phase's checkpoint and ends
//! by flushing its metric rows and writing a completion marker keyed to the
//! run id, so an interrupted pipeline resumes at the last finished phase
//! and a finished pipeline is a no-op to re-run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use celab_core::agents::{
    evaluate, evaluate_with_controller, finetune, finetune_meta_controller, pretrain_peac,
    pretrain_peac_diayn, pretrain_surprise, AgentState, EvaluationReport, RoundRecord,
};
use celab_core::mdp::{EmbodimentSet, PolicyShape, RewardTable};
use celab_core::rewards::{KIND_CE, KIND_CE_DIAYN, KIND_CE_LBS, KIND_DIAYN, KIND_LBS};

use crate::config::BenchConfig;
use crate::envs::{build_env, task_reward, train_test_split};
use crate::error::{BenchError, Result};
use crate::records::{
    load_agent, load_meta, mark_phase, phase_done, run_id, save_agent, save_meta, MetricsWriter,
    RunRecord,
};

pub const PHASE_PRETRAIN: &str = "pretrain";
pub const PHASE_FINETUNE: &str = "finetune";
pub const PHASE_EVAL: &str = "eval";

pub const PRETRAINED_CKPT: &str = "pretrained.ckpt";
pub const FINETUNED_CKPT: &str = "finetuned.ckpt";
pub const META_CKPT: &str = "meta.ckpt";

/// A configured experiment bound to its output directory.
pub struct Pipeline {
    pub config: BenchConfig,
    pub out_dir: PathBuf,
    pub run: String,
    /// Embodiments trained on.
    pub train_set: EmbodimentSet,
    /// Named evaluation splits; "train" plus "heldout" when splitting.
    pub eval_sets: Vec<(String, EmbodimentSet)>,
    task: RewardTable,
}

impl Pipeline {
    pub fn new(config: BenchConfig, out_dir: &Path) -> Result<Self> {
        let run = run_id(&config.text, config.train.seed);
        std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;

        let (train_set, eval_sets) = if config.split {
            let (train, heldout) = train_test_split(&config.env, config.train.seed)?;
            let sets =
                vec![("train".to_string(), train.clone()), ("heldout".to_string(), heldout)];
            (train, sets)
        } else {
            let mut set = build_env(&config.env)?;
            if let Some(prior) = &config.prior {
                set = EmbodimentSet::new(
                    set.embodiments().to_vec(),
                    prior.clone(),
                    set.initial().to_vec(),
                )?;
            }
            (set.clone(), vec![("train".to_string(), set)])
        };
        let task = task_reward(&config.env)?;

        // Refuse to mix two configurations in one directory.
        if out_dir.join(crate::records::RUN_FILE).exists() {
            let existing = RunRecord::load(out_dir)?;
            if existing.run != run {
                return Err(BenchError::Corrupt {
                    path: out_dir.to_path_buf(),
                    message: format!(
                        "directory belongs to run {}, this config+seed is run {run}",
                        existing.run
                    ),
                });
            }
        } else {
            RunRecord::new(run.clone(), config.text.clone(), config.train.seed).save(out_dir)?;
        }

        Ok(Self { config, out_dir: out_dir.to_path_buf(), run, train_set, eval_sets, task })
    }

    fn uses_skills(&self) -> bool {
        matches!(self.config.train.reward.kind.as_str(), KIND_DIAYN | KIND_CE_DIAYN)
    }

    fn skill_count(&self) -> Result<usize> {
        self.config.train.reward.skill_count.ok_or(BenchError::BadSpec {
            field: "skills",
            message: "skill-bearing strategies need `skills` in [train]".to_string(),
        })
    }

    /// Agent with the tables this config's strategy trains, for checkpoint
    /// restore. Shapes mirror the pretrain entry points.
    fn fresh_agent(&self) -> Result<AgentState> {
        let set = &self.train_set;
        let kind = self.config.train.reward.kind.as_str();
        let shape = match kind {
            KIND_LBS => PolicyShape::states_only(set.num_states()),
            KIND_DIAYN | KIND_CE_DIAYN => PolicyShape {
                num_states: set.num_states(),
                num_skills: self.skill_count()?,
                num_contexts: set.len() + 1,
            },
            _ => PolicyShape {
                num_states: set.num_states(),
                num_skills: 1,
                num_contexts: set.len() + 1,
            },
        };
        let mut spec = self.config.train.reward.clone();
        if self.uses_skills() {
            spec = spec.with_skills(self.skill_count()?);
        }
        let strategy = spec.build()?;
        Ok(AgentState::fresh(set, shape, strategy.as_ref(), self.config.train.seed))
    }

    fn load_pretrained(&self) -> Result<AgentState> {
        let mut agent = self.fresh_agent()?;
        load_agent(&self.out_dir.join(PRETRAINED_CKPT), &mut agent)?;
        Ok(agent)
    }

    fn write_rows(&self, rows: &[(u64, String, f64)]) -> Result<()> {
        let mut writer = MetricsWriter::append(&self.out_dir, self.run.clone())?;
        for (step, metric, value) in rows {
            writer.write(*step, metric, *value)?;
        }
        writer.flush()
    }

    fn finish_phase(
        &self,
        phase: &str,
        rows: &[(u64, String, f64)],
        checkpoint: Option<&str>,
        started: Instant,
    ) -> Result<()> {
        self.write_rows(rows)?;
        let mut record = RunRecord::load(&self.out_dir)?;
        if let Some(name) = checkpoint {
            if !record.checkpoints.iter().any(|c| c == name) {
                record.checkpoints.push(name.to_string());
            }
        }
        record.wall_clock_secs += started.elapsed().as_secs_f64();
        record.finished = phase == PHASE_EVAL;
        record.save(&self.out_dir)?;
        mark_phase(&self.out_dir, &self.run, phase)
    }

    /// Returns false when the phase had already completed.
    pub fn pretrain(&self) -> Result<bool> {
        if phase_done(&self.out_dir, &self.run, PHASE_PRETRAIN) {
            return Ok(false);
        }
        let started = Instant::now();
        let config = &self.config.train;
        let kind = config.reward.kind.as_str();
        let (agent, records) = match kind {
            KIND_CE | KIND_CE_LBS => pretrain_peac(&self.train_set, config)?,
            KIND_LBS => pretrain_surprise(&self.train_set, config)?,
            KIND_DIAYN | KIND_CE_DIAYN => {
                pretrain_peac_diayn(&self.train_set, config, self.skill_count()?)?
            }
            other => {
                return Err(BenchError::BadSpec {
                    field: "strategy",
                    message: format!("unknown strategy {other:?}"),
                })
            }
        };
        let rows = pretrain_rows(&records);
        save_agent(&self.out_dir.join(PRETRAINED_CKPT), &agent)?;
        self.finish_phase(PHASE_PRETRAIN, &rows, Some(PRETRAINED_CKPT), started)?;
        Ok(true)
    }

    pub fn finetune(&self) -> Result<bool> {
        if !phase_done(&self.out_dir, &self.run, PHASE_PRETRAIN) {
            return Err(BenchError::Corrupt {
                path: self.out_dir.clone(),
                message: "fine-tune needs a completed pretrain phase in this directory".to_string(),
            });
        }
        if phase_done(&self.out_dir, &self.run, PHASE_FINETUNE) {
            return Ok(false);
        }
        let started = Instant::now();
        let pretrained = self.load_pretrained()?;
        let offset = pretrained.env_steps as u64;
        let (rows, checkpoint) = if self.uses_skills() {
            let (meta, records) =
                finetune_meta_controller(&pretrained, &self.train_set, &self.task, &self.config.train)?;
            save_meta(&self.out_dir.join(META_CKPT), &meta)?;
            (finetune_rows(&records, offset), META_CKPT)
        } else {
            let (tuned, records) = finetune(
                &pretrained,
                &self.train_set,
                &self.task,
                &self.config.train,
                self.config.finetune_mode,
            )?;
            save_agent(&self.out_dir.join(FINETUNED_CKPT), &tuned)?;
            (finetune_rows(&records, offset), FINETUNED_CKPT)
        };
        self.finish_phase(PHASE_FINETUNE, &rows, Some(checkpoint), started)?;
        Ok(true)
    }

    pub fn eval(&self) -> Result<bool> {
        if !phase_done(&self.out_dir, &self.run, PHASE_FINETUNE) {
            return Err(BenchError::Corrupt {
                path: self.out_dir.clone(),
                message: "eval needs a completed fine-tune phase in this directory".to_string(),
            });
        }
        if phase_done(&self.out_dir, &self.run, PHASE_EVAL) {
            return Ok(false);
        }
        let started = Instant::now();
        let config = &self.config.train;
        let step = (config.pretrain_steps + config.finetune_steps) as u64;
        let mut rows = Vec::new();
        if self.uses_skills() {
            let agent = self.load_pretrained()?;
            let meta = load_meta(&self.out_dir.join(META_CKPT))?;
            for (split, set) in &self.eval_sets {
                let report = evaluate_with_controller(
                    &agent,
                    &meta,
                    set,
                    &self.task,
                    config,
                    self.config.eval_episodes,
                    config.seed,
                )?;
                eval_rows(&mut rows, step, split, set, &report);
            }
        } else {
            let mut tuned = self.fresh_agent()?;
            load_agent(&self.out_dir.join(FINETUNED_CKPT), &mut tuned)?;
            for (split, set) in &self.eval_sets {
                let report = evaluate(
                    &tuned,
                    set,
                    &self.task,
                    config,
                    self.config.eval_episodes,
                    config.seed,
                )?;
                eval_rows(&mut rows, step, split, set, &report);
            }
        }
        self.finish_phase(PHASE_EVAL, &rows, None, started)?;
        Ok(true)
    }

    /// The whole pipeline; completed phases are skipped.
    pub fn run_all(&self) -> Result<()> {
        self.pretrain()?;
        self.finetune()?;
        self.eval()?;
        Ok(())
    }
}

fn push_optional(rows: &mut Vec<(u64, String, f64)>, step: u64, metric: &str, value: Option<f64>) {
    if let Some(v) = value {
        rows.push((step, metric.to_string(), v));
    }
}

fn pretrain_rows(records: &[RoundRecord]) -> Vec<(u64, String, f64)> {
    let mut rows = Vec::new();
    for r in records {
        let step = r.env_steps as u64;
        rows.push((step, "pretrain/reward".to_string(), r.mean_reward));
        push_optional(&mut rows, step, "pretrain/identification", r.mean_identification);
        push_optional(&mut rows, step, "pretrain/surprise", r.mean_surprise);
        push_optional(&mut rows, step, "pretrain/skill", r.mean_skill);
        push_optional(&mut rows, step, "pretrain/discriminator_loss", r.discriminator_loss);
        push_optional(&mut rows, step, "pretrain/skill_loss", r.skill_loss);
    }
    rows
}

fn finetune_rows(records: &[RoundRecord], offset: u64) -> Vec<(u64, String, f64)> {
    records
        .iter()
        .map(|r| (offset + r.env_steps as u64, "finetune/return".to_string(), r.mean_reward))
        .collect()
}

fn eval_rows(
    rows: &mut Vec<(u64, String, f64)>,
    step: u64,
    split: &str,
    set: &EmbodimentSet,
    report: &EvaluationReport,
) {
    for e in 0..set.len() {
        let name = &set.embodiment(e).name;
        rows.push((step, format!("eval/{split}/{name}/return"), report.monte_carlo[e]));
        rows.push((step, format!("eval/{split}/{name}/stderr"), report.std_error[e]));
        if let Some(v) = report.analytic[e] {
            rows.push((step, format!("eval/{split}/{name}/analytic"), v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::records::{read_metrics, METRICS_FILE};

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("celab-runner-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    fn smoke_config(seed: u64) -> BenchConfig {
        let text = format!(
            "[env]\nfamily = appendix-a1\n\n[train]\nstrategy = ce\npretrain_steps = 800\n\
             finetune_steps = 80\nhorizon = 20\n\n[run]\nseed = {seed}\neval_episodes = 20\n"
        );
        parse_config("smoke.cfg", &text).unwrap()
    }

    #[test]
    fn pipeline_runs_all_phases_and_resumes_idempotently() {
        let dir = tmp_dir("full");
        let pipeline = Pipeline::new(smoke_config(3), &dir).unwrap();
        assert!(pipeline.pretrain().unwrap());
        assert!(pipeline.finetune().unwrap());
        assert!(pipeline.eval().unwrap());

        let metrics = std::fs::read(dir.join(METRICS_FILE)).unwrap();
        let record = RunRecord::load(&dir).unwrap();
        assert!(record.finished);
        assert_eq!(record.checkpoints, vec![PRETRAINED_CKPT, FINETUNED_CKPT]);
        assert!(record.wall_clock_secs > 0.0);

        // Re-running is a no-op on the metric log.
        let again = Pipeline::new(smoke_config(3), &dir).unwrap();
        assert!(!again.pretrain().unwrap());
        assert!(!again.finetune().unwrap());
        assert!(!again.eval().unwrap());
        assert_eq!(std::fs::read(dir.join(METRICS_FILE)).unwrap(), metrics);

        let rows = read_metrics(&dir.join(METRICS_FILE)).unwrap();
        assert!(rows.iter().any(|r| r.metric == "pretrain/identification"));
        assert!(rows.iter().any(|r| r.metric == "finetune/return"));
        assert!(rows.iter().any(|r| r.metric.starts_with("eval/train/") && r.metric.ends_with("/return")));
        assert!(rows.iter().any(|r| r.metric.starts_with("eval/train/") && r.metric.ends_with("/stderr")));
        assert!(rows.iter().all(|r| r.run == pipeline.run));
    }

    #[test]
    fn phases_refuse_to_run_out_of_order() {
        let dir = tmp_dir("order");
        let pipeline = Pipeline::new(smoke_config(4), &dir).unwrap();
        assert!(pipeline.finetune().is_err());
        assert!(pipeline.eval().is_err());
    }

    #[test]
    fn resume_continues_from_the_last_checkpoint() {
        let dir = tmp_dir("resume");
        {
            let pipeline = Pipeline::new(smoke_config(5), &dir).unwrap();
            pipeline.pretrain().unwrap();
        }
        let metrics_after_pretrain = std::fs::read(dir.join(METRICS_FILE)).unwrap();
        {
            let pipeline = Pipeline::new(smoke_config(5), &dir).unwrap();
            pipeline.run_all().unwrap();
        }
        let metrics = std::fs::read(dir.join(METRICS_FILE)).unwrap();
        assert_eq!(&metrics[..metrics_after_pretrain.len()], &metrics_after_pretrain[..]);
        assert!(RunRecord::load(&dir).unwrap().finished);
    }

    #[test]
    fn changed_config_cannot_reuse_a_directory() {
        let dir = tmp_dir("mixed");
        Pipeline::new(smoke_config(6), &dir).unwrap();
        assert!(Pipeline::new(smoke_config(7), &dir).is_err());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tmp_dir("identical-a");
        let b = tmp_dir("identical-b");
        Pipeline::new(smoke_config(8), &a).unwrap().run_all().unwrap();
        Pipeline::new(smoke_config(8), &b).unwrap().run_all().unwrap();
        assert_eq!(
            std::fs::read(a.join(METRICS_FILE)).unwrap(),
            std::fs::read(b.join(METRICS_FILE)).unwrap()
        );
    }

    #[test]
    fn skill_strategy_trains_a_meta_controller() {
        let dir = tmp_dir("skills");
        let text = "[env]\nfamily = appendix-a1\n\n[train]\nstrategy = ce+diayn\nskills = 2\n\
                    pretrain_steps = 600\nfinetune_steps = 60\nhorizon = 20\n\n[run]\nseed = 2\n\
                    eval_episodes = 10\n";
        let config = parse_config("skills.cfg", text).unwrap();
        let pipeline = Pipeline::new(config, &dir).unwrap();
        pipeline.run_all().unwrap();
        assert!(dir.join(META_CKPT).exists());
        let record = RunRecord::load(&dir).unwrap();
        assert!(record.checkpoints.contains(&META_CKPT.to_string()));
    }

    #[test]
    fn split_runs_evaluate_heldout_embodiments() {
        let dir = tmp_dir("split");
        let text = "[env]\nfamily = grid-slip\nwidth = 3\nheight = 3\nsplit = true\n\n\
                    [train]\nstrategy = ce\npretrain_steps = 600\nfinetune_steps = 60\n\
                    horizon = 15\n\n[run]\nseed = 1\neval_episodes = 10\n";
        let config = parse_config("split.cfg", text).unwrap();
        let pipeline = Pipeline::new(config, &dir).unwrap();
        assert_eq!(pipeline.train_set.len(), 3);
        pipeline.run_all().unwrap();
        let rows = read_metrics(&dir.join(METRICS_FILE)).unwrap();
        assert!(rows.iter().any(|r| r.metric.starts_with("eval/heldout/slip-0.1/")));
        assert!(rows.iter().any(|r| r.metric.starts_with("eval/train/slip-0/")));
    }
}
