//! Command implementations and shared plumbing.

pub mod datagen_mlpo;
pub mod datagen_mlpo_plus;
pub mod datagen_sft;
pub mod eval;
pub mod infer;
pub mod simulate;
pub mod train_toy;
pub mod zero_shot;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};

use mlpo_core::backends::{BackendSpec, Client, CompletionCache};
use mlpo_core::model::Task;
use mlpo_core::orchestrator::{EpisodeConfig, EpisodeRunner};
use mlpo_core::prompt::PromptLibrary;

use crate::config::RunConfig;

/// Load and sanity-check a task file.
pub fn load_tasks(path: &Path) -> anyhow::Result<Vec<Task>> {
    let tasks: Vec<Task> = mlpo_core::jsonl::read_jsonl(path)
        .with_context(|| format!("reading tasks from {}", path.display()))?;
    if tasks.is_empty() {
        bail!("task file {} is empty", path.display());
    }
    let mut seen = BTreeSet::new();
    for task in &tasks {
        if task.gold_answer.is_empty() {
            bail!("task {} has an empty gold answer", task.id);
        }
        if !seen.insert(task.id.as_str()) {
            bail!("duplicate task id {} in {}", task.id, path.display());
        }
    }
    Ok(tasks)
}

/// Build an instrumented client, wiring in the configured completion cache.
pub fn build_client(spec: &BackendSpec, config: &RunConfig) -> anyhow::Result<Arc<Client>> {
    let backend = spec.build()?;
    let client = match &config.run.cache_dir {
        Some(dir) => Client::with_cache(backend, CompletionCache::open(dir.clone())?),
        None => Client::new(backend),
    };
    Ok(Arc::new(client))
}

/// Build the episode runner an `[episode]` section describes.
pub fn build_runner(
    episode: &EpisodeConfig,
    config: &RunConfig,
    prompts: PromptLibrary,
) -> anyhow::Result<EpisodeRunner> {
    let leader = build_client(&episode.leader_backend, config)?;
    let agents = episode
        .agent_backends
        .iter()
        .map(|spec| build_client(spec, config))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(EpisodeRunner::new(
        episode.t,
        episode.info_mode,
        leader,
        agents,
        episode.agent_sampling.clone(),
        episode.leader_sampling.clone(),
        prompts,
    )?)
}

/// Request/generation counters across a runner's clients, for manifests.
pub fn runner_counts(runner: &EpisodeRunner) -> Vec<(String, u64)> {
    let mut requests = runner.leader_client().requests();
    let mut backend_requests = runner.leader_client().backend_requests();
    let mut generations = runner.leader_client().generations();
    for client in runner.agent_clients() {
        requests += client.requests();
        backend_requests += client.backend_requests();
        generations += client.generations();
    }
    vec![
        ("requests".into(), requests),
        ("backend_requests".into(), backend_requests),
        ("generations".into(), generations),
    ]
}

/// Order-preserving bounded-parallel map.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<anyhow::Result<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> anyhow::Result<R> + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<anyhow::Result<R>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= items.len() {
                    break;
                }
                let outcome = f(&items[index]);
                slots.lock().unwrap()[index] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every item claimed"))
        .collect()
}

/// Write a simple CSV report.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}
