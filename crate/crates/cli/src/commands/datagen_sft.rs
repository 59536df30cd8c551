//! `datagen-sft`: build the backtracking SFT corpus.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mlpo_core::backends::SamplingParams;
use mlpo_core::datagen::{build_sft_records, sample_agent_solutions, SftGenConfig, SftRecord};
use mlpo_core::jsonl;
use mlpo_core::Error;

use crate::commands::{build_client, load_tasks, parallel_map};
use crate::config::{prompt_library, RunConfig};
use crate::lock::RunLock;
use crate::manifest::RunManifest;

/// Per-task outcome persisted for resume: either records (possibly none for
/// all-incorrect tasks) or a skip reason.
#[derive(Debug, Serialize, Deserialize)]
enum TaskState {
    Done(Vec<SftRecord>),
    Skipped(String),
}

struct SftStateStore {
    dir: PathBuf,
}

impl SftStateStore {
    fn open(dir: PathBuf) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(SftStateStore { dir })
    }

    fn path(&self, task_id: &str) -> PathBuf {
        let digest = Sha256::digest(task_id.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{hex}.sft.json"))
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
    let datagen = &config.datagen;
    let tasks = load_tasks(tasks_path)?;
    let _lock = RunLock::acquire(out)?;
    let prompts = prompt_library(config)?;
    let agents = episode
        .agent_backends
        .iter()
        .map(|spec| build_client(spec, config))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let leader = build_client(&episode.leader_backend, config)?;
    // The backtracker defaults to the (untrained) leader backend.
    let backtracker = match &datagen.backtracker_backend {
        Some(spec) => build_client(spec, config)?,
        None => build_client(&episode.leader_backend, config)?,
    };
    let store = SftStateStore::open(out.join("state").join("sft"))?;
    let workers = workers.unwrap_or(config.run.workers);

    let gen_config = SftGenConfig {
        n_leader_samples: datagen.n_leader_samples,
        backtrack_retries: datagen.backtrack_retries,
        info_mode: datagen.info_mode,
        leader_sampling: episode.leader_sampling.clone(),
        seed: config.run.seed,
    };

    let outcomes = parallel_map(&tasks, workers, |task| {
        if let Some(state) = store.load(&task.id)? {
            return Ok(state);
        }
        // One round of agent responses feeds SFT generation.
        let solutions = sample_agent_solutions(
            task,
            &agents,
            &prompts,
            1,
            &sampling_with_seed(&episode.agent_sampling, config.run.seed),
        )
        .map_err(|e| anyhow::anyhow!("task {}: {e}", task.id))?;
        let one_set: Vec<String> = solutions
            .iter()
            .map(|per_agent| per_agent[0].raw_text.clone())
            .collect();
        let state = match build_sft_records(task, &one_set, &leader, &backtracker, &prompts, &gen_config)
        {
            Ok(records) => TaskState::Done(records),
            Err(Error::Data(reason)) => {
                eprintln!("datagen-sft: skipping task {}: {reason}", task.id);
                TaskState::Skipped(reason)
            }
            Err(e) => return Err(anyhow::anyhow!("task {}: {e}", task.id)),
        };
        store.store(&task.id, &state)?;
        Ok(state)
    });

    let mut records: Vec<SftRecord> = Vec::new();
    let mut skipped = 0u64;
    let mut empty = 0u64;
    for outcome in outcomes {
        match outcome? {
            TaskState::Done(task_records) => {
                if task_records.is_empty() {
                    empty += 1;
                }
                records.extend(task_records);
            }
            TaskState::Skipped(_) => skipped += 1,
        }
    }
    jsonl::write_jsonl(&records, out.join("sft_corpus.jsonl"))?;

    let backtracked = records
        .iter()
        .filter(|r| matches!(r.kind, mlpo_core::datagen::SftKind::Backtracked))
        .count() as u64;
    RunManifest::new("datagen-sft", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "n_leader_samples": datagen.n_leader_samples,
            "backtrack_retries": datagen.backtrack_retries,
            "info_mode": datagen.info_mode,
            "leader": episode.leader_backend.model_name,
            "backtracker": datagen
                .backtracker_backend
                .as_ref()
                .map(|b| b.model_name.clone())
                .unwrap_or_else(|| episode.leader_backend.model_name.clone()),
        }))
        .count("tasks", tasks.len() as u64)
        .count("records", records.len() as u64)
        .count("backtracked", backtracked)
        .count("direct_correct", records.len() as u64 - backtracked)
        .count("tasks_all_incorrect", empty)
        .count("tasks_skipped", skipped)
        .write(out)?;
    println!(
        "datagen-sft: {} records ({} backtracked) from {} tasks, {} skipped -> {}",
        records.len(),
        backtracked,
        tasks.len(),
        skipped,
        out.display()
    );
    Ok(())
}

fn sampling_with_seed(params: &SamplingParams, seed: u64) -> SamplingParams {
    let mut out = params.clone();
    out.seed = Some(out.seed.unwrap_or(seed));
    out
}
