//! `infer`: run leader/agent-team episodes over a task file.

use std::path::Path;

use mlpo_core::jsonl;
use mlpo_core::orchestrator::{run_many, EpisodeStore};

use crate::commands::{build_runner, load_tasks, runner_counts};
use crate::config::{prompt_library, RunConfig};
use crate::lock::RunLock;
use crate::manifest::RunManifest;

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
    let runner = build_runner(episode, config, prompts)?;
    let store = EpisodeStore::open(out.join("state"))?;
    let workers = workers.unwrap_or(config.run.workers);

    let transcripts = run_many(&runner, &tasks, Some(&store), workers)?;
    jsonl::write_jsonl(&transcripts, out.join("transcripts.jsonl"))?;

    let correct = transcripts
        .iter()
        .zip(tasks.iter())
        .filter(|(tr, task)| {
            mlpo_core::extract::grade(&tr.final_answer, &task.gold_answer, task.task_kind)
        })
        .count();
    let mut manifest = RunManifest::new("infer", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "t": episode.t,
            "k": episode.agent_backends.len(),
            "info_mode": episode.info_mode,
            "leader": episode.leader_backend.model_name,
            "team": episode.agent_backends.iter().map(|b| b.model_name.clone()).collect::<Vec<_>>(),
        }))
        .count("episodes", transcripts.len() as u64)
        .count("final_correct", correct as u64);
    for (key, value) in runner_counts(&runner) {
        manifest = manifest.count(&key, value);
    }
    manifest.write(out)?;
    println!(
        "infer: {} episodes, {} final answers correct -> {}",
        transcripts.len(),
        correct,
        out.display()
    );
    Ok(())
}
