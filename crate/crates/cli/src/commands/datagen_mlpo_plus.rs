//! `datagen-mlpo-plus`: build the multi-round continuation corpus from
//! leader-in-the-loop episodes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mlpo_core::datagen::{build_mlpo_plus_dataset, MlpoCorpusRecord, MlpoPlusConfig};
use mlpo_core::jsonl;
use mlpo_core::model::TaskKind;

use crate::commands::{build_runner, load_tasks, parallel_map, runner_counts};
use crate::config::{prompt_library, RunConfig};
use crate::lock::RunLock;
use crate::manifest::RunManifest;

/// Per-task outcome persisted for resume.
#[derive(Debug, Serialize, Deserialize)]
struct TaskState {
    kept: bool,
    records: Vec<MlpoCorpusRecord>,
}

struct PlusStateStore {
    dir: PathBuf,
}

impl PlusStateStore {
    fn open(dir: PathBuf) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(PlusStateStore { dir })
    }

    fn path(&self, task_id: &str) -> PathBuf {
        let digest = Sha256::digest(task_id.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{hex}.plus.json"))
    }

    fn load(&self, task_id: &str) -> anyhow::Result<Option<TaskState>> {
        match std::fs::read(self.path(task_id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn store(&self, task_id: &str, state: &TaskState) -> anyhow::Result<()> {
        let tmp = self.path(task_id).with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(state)?)?;
        std::fs::rename(&tmp, self.path(task_id))?;
        Ok(())
    }
}

pub fn run(
    config: &RunConfig,
    config_hash: &str,
    tasks_path: &Path,
    out: &Path,
    workers: Option<usize>,
) -> anyhow::Result<()> {
    let episode = config.episode_required()?;
    let plus = &config.mlpo_plus;
    let tasks = load_tasks(tasks_path)?;
    let _lock = RunLock::acquire(out)?;
    let prompts = prompt_library(config)?;
    let runner = build_runner(episode, config, prompts.clone())?;
    let store = PlusStateStore::open(out.join("state").join("mlpo_plus"))?;
    let workers = workers.unwrap_or(config.run.workers);

    let plus_config = MlpoPlusConfig {
        rounds_used: plus.rounds_used.clone(),
        sets_per_round: plus.sets_per_round,
        acc_threshold: plus.acc_threshold,
        episodes_per_task: plus.episodes_per_task,
        info_mode: config.datagen.info_mode,
        seed: config.run.seed,
    };

    let mut kind_of: BTreeMap<String, TaskKind> = BTreeMap::new();
    for task in &tasks {
        kind_of.insert(task.id.clone(), task.task_kind);
    }

    let outcomes = parallel_map(&tasks, workers, |task| {
        if let Some(state) = store.load(&task.id)? {
            return Ok(state);
        }
        let outcome =
            build_mlpo_plus_dataset(&runner, std::slice::from_ref(task), &prompts, &plus_config)
                .map_err(|e| anyhow::anyhow!("task {}: {e}", task.id))?;
        let state = TaskState {
            kept: outcome.kept_tasks == 1,
            records: outcome
                .instances
                .iter()
                .map(|inst| inst.to_record(kind_of[&inst.task_id]))
                .collect(),
        };
        store.store(&task.id, &state)?;
        Ok(state)
    });

    let mut records = Vec::new();
    let mut kept = 0u64;
    let mut dropped = 0u64;
    for outcome in outcomes {
        let state = outcome?;
        if state.kept {
            kept += 1;
        } else {
            dropped += 1;
        }
        records.extend(state.records);
    }
    jsonl::write_jsonl(&records, out.join("mlpo_plus_corpus.jsonl"))?;

    let mut manifest = RunManifest::new("datagen-mlpo-plus", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "rounds_used": plus.rounds_used,
            "sets_per_round": plus.sets_per_round,
            "acc_threshold": plus.acc_threshold,
            "episodes_per_task": plus.episodes_per_task,
            "t": episode.t,
        }))
        .count("tasks", tasks.len() as u64)
        .count("tasks_kept", kept)
        .count("tasks_dropped", dropped)
        .count("instances", records.len() as u64);
    for (key, value) in runner_counts(&runner) {
        manifest = manifest.count(&key, value);
    }
    manifest.write(out)?;
    println!(
        "datagen-mlpo-plus: {} tasks ({} kept, {} dropped), {} instances -> {}",
        tasks.len(),
        kept,
        dropped,
        records.len(),
        out.display()
    );
    Ok(())
}
