//! `datagen-mlpo`: build the round-0 leader-prompt training corpus.

use std::collections::BTreeMap;
use std::path::Path;

use mlpo_core::datagen::{
    build_mlpo_prompts, difficulty_stats, filter_easy, order_dataset, sample_agent_solutions,
    FilterDecision, MlpoCorpusRecord, SolutionStore,
};
use mlpo_core::jsonl;
use mlpo_core::model::TaskKind;

use crate::commands::{build_client, load_tasks, parallel_map};
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
    let datagen = &config.datagen;
    let tasks = load_tasks(tasks_path)?;
    let _lock = RunLock::acquire(out)?;
    let prompts = prompt_library(config)?;
    let agents = episode
        .agent_backends
        .iter()
        .map(|spec| build_client(spec, config))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let store = SolutionStore::open(out.join("state").join("solutions"))?;
    let workers = workers.unwrap_or(config.run.workers);

    // Sample (or reload) each task's agent solutions.
    let sampled = parallel_map(&tasks, workers, |task| {
        if let Some(existing) = store.load(&task.id)? {
            return Ok(existing);
        }
        let solutions = sample_agent_solutions(
            task,
            &agents,
            &prompts,
            datagen.per_agent,
            &episode.agent_sampling,
        )
        .map_err(|e| anyhow::anyhow!("task {}: {e}", task.id))?;
        store.store(&task.id, &solutions)?;
        Ok(solutions)
    });

    let mut instances = Vec::new();
    let mut kept = 0u64;
    let mut dropped = 0u64;
    let mut kind_of: BTreeMap<String, TaskKind> = BTreeMap::new();
    for (task, solutions) in tasks.iter().zip(sampled) {
        let solutions = solutions?;
        kind_of.insert(task.id.clone(), task.task_kind);
        let stats = difficulty_stats(task, &solutions);
        match filter_easy(&stats, datagen.easy_threshold) {
            FilterDecision::Drop => dropped += 1,
            FilterDecision::Keep => {
                kept += 1;
                instances.extend(build_mlpo_prompts(
                    task,
                    &solutions,
                    datagen.n_sets,
                    datagen.info_mode,
                    &prompts,
                )?);
            }
        }
    }
    let ordered = order_dataset(instances, datagen.order, config.run.seed);
    let records: Vec<MlpoCorpusRecord> = ordered
        .iter()
        .map(|inst| inst.to_record(kind_of[&inst.task_id]))
        .collect();
    jsonl::write_jsonl(&records, out.join("mlpo_corpus.jsonl"))?;

    RunManifest::new("datagen-mlpo", config_hash, config.run.seed)
        .with_params(serde_json::json!({
            "per_agent": datagen.per_agent,
            "n_sets": datagen.n_sets,
            "easy_threshold": datagen.easy_threshold,
            "order": datagen.order,
            "info_mode": datagen.info_mode,
            "team": episode.agent_backends.iter().map(|b| b.model_name.clone()).collect::<Vec<_>>(),
        }))
        .count("tasks", tasks.len() as u64)
        .count("tasks_kept", kept)
        .count("tasks_dropped_easy", dropped)
        .count("instances", records.len() as u64)
        .write(out)?;
    println!(
        "datagen-mlpo: {} tasks ({} kept, {} dropped), {} instances -> {}",
        tasks.len(),
        kept,
        dropped,
        records.len(),
        out.display()
    );
    Ok(())
}
