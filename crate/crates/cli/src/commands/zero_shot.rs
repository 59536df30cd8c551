//! `zero-shot`: the leader answers every task alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mlpo_core::jsonl;
use mlpo_core::model::LeaderOutput;
use mlpo_core::orchestrator::run_zero_shot;

use crate::commands::{build_client, load_tasks, parallel_map};
use crate::config::{prompt_library, RunConfig};
use crate::lock::RunLock;
use crate::manifest::RunManifest;

#[derive(Debug, Serialize, Deserialize)]
struct ZeroShotRecord {
    task_id: String,
    #[serde(flatten)]
    output: LeaderOutput,
}

pub fn run(
    config: &RunConfig,
    config_hash: &str,
    tasks_path: &Path,
    out: &Path,
    workers: Option<usize>,
) -> anyhow::Result<()> {
    let episode = config.episode_required()?;
    let tasks = load_tasks(tasks_path)?;
    let _lock = RunLock::acquire(out)?;
    let prompts = prompt_library(config)?;
    let leader = build_client(&episode.leader_backend, config)?;
    let workers = workers.unwrap_or(config.run.workers);

    let outcomes = parallel_map(&tasks, workers, |task| {
        let output = run_zero_shot(&leader, &prompts, task, &episode.leader_sampling)?;
        Ok(ZeroShotRecord {
            task_id: task.id.clone(),
            output,
        })
    });
    let mut records = Vec::with_capacity(tasks.len());
    for outcome in outcomes {
        records.push(outcome?);
    }
    jsonl::write_jsonl(&records, out.join("zero_shot.jsonl"))?;

    let correct = records
        .iter()
        .filter(|r| r.output.correct == Some(true))
        .count();
    RunManifest::new("zero-shot", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "leader": episode.leader_backend.model_name,
        }))
        .count("tasks", records.len() as u64)
        .count("correct", correct as u64)
        .count("requests", leader.requests())
        .count("backend_requests", leader.backend_requests())
        .write(out)?;
    println!(
        "zero-shot: {}/{} correct -> {}",
        correct,
        records.len(),
        out.display()
    );
    Ok(())
}
