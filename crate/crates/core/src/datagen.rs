//! Training-corpus builders: leader-prompt sets from sampled agent
//! solutions, backtracking SFT records, and the multi-round continuation
//! set harvested from leader-in-the-loop episodes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{ChatMessage, Client, SamplingParams};
use crate::error::{Error, Result};
use crate::extract;
use crate::model::{InfoMode, Task};
use crate::orchestrator::EpisodeRunner;
use crate::prompt::PromptLibrary;

/// One graded model generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedGeneration {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

/// One training prompt: the task paired with exactly one solution per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpoPromptInstance {
    pub task_id: String,
    /// Position within the task's instance group, `[0, n_sets)`.
    pub set_index: usize,
    /// One solution text per agent, in agent order.
    pub agent_solutions: Vec<String>,
    pub rendered_prompt: String,
    pub gold_answer: String,
}

/// JSONL serialization of one prompt instance. `agent_answers` carries the
/// extracted canonical answers; the full solution texts live in the prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpoCorpusRecord {
    pub task_id: String,
    pub set_index: usize,
    pub prompt: String,
    pub gold_answer: String,
    pub agent_answers: Vec<Option<String>>,
}

impl MlpoPromptInstance {
    pub fn to_record(&self, kind: crate::model::TaskKind) -> MlpoCorpusRecord {
        MlpoCorpusRecord {
            task_id: self.task_id.clone(),
            set_index: self.set_index,
            prompt: self.rendered_prompt.clone(),
            gold_answer: self.gold_answer.clone(),
            agent_answers: self
                .agent_solutions
                .iter()
                .map(|s| extract::extract_answer(s, kind))
                .collect(),
        }
    }
}

/// SFT record kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftKind {
    Backtracked,
    DirectCorrect,
}

/// One supervised-finetuning example for the leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub task_id: String,
    pub prompt: String,
    pub completion: String,
    pub kind: SftKind,
}

/// Agent-correctness statistics driving the easy-task filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDifficultyStats {
    pub task_id: String,
    pub total_responses: usize,
    pub correct_responses: usize,
}

impl TaskDifficultyStats {
    pub fn correct_fraction(&self) -> f64 {
        self.correct_responses as f64 / self.total_responses as f64
    }
}

/// Keep-or-drop outcome of the easy-task filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// Drop a task iff at least `threshold` of its sampled agent responses are
/// correct (the boundary itself drops).
pub fn filter_easy(stats: &TaskDifficultyStats, threshold: f64) -> FilterDecision {
    debug_assert!(stats.total_responses > 0);
    if stats.correct_fraction() >= threshold {
        FilterDecision::Drop
    } else {
        FilterDecision::Keep
    }
}

/// Per-task deterministic RNG stream, independent of worker scheduling.
pub fn task_rng(seed: u64, task_id: &str, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(task_id.as_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed_bytes = [0u8; 32];
    seed_bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed_bytes)
}

/// Query each agent for `per_agent` independent round-0 solutions and grade
/// them. Returns K lists of `per_agent` generations.
pub fn sample_agent_solutions(
    task: &Task,
    agents: &[Arc<Client>],
    prompts: &PromptLibrary,
    per_agent: usize,
    sampling: &SamplingParams,
) -> Result<Vec<Vec<GradedGeneration>>> {
    if per_agent == 0 {
        return Err(Error::Config("per_agent must be at least 1".into()));
    }
    let k = agents.len();
    let mut all = Vec::with_capacity(k);
    for (i, agent) in agents.iter().enumerate() {
        let prompt = prompts.render_agent_round0(task, i, k)?;
        let generations = agent
            .complete_chat(
                &[ChatMessage::user(prompt)],
                &sampling.clone().with_n(per_agent as u32),
            )
            .map_err(|e| e.in_episode(format!("agent {i}"), 0))?;
        let graded = generations
            .into_iter()
            .map(|g| {
                let extracted = extract::extract_answer(&g.text, task.task_kind);
                let correct = extracted
                    .as_deref()
                    .map(|a| extract::grade(a, &task.gold_answer, task.task_kind))
                    .unwrap_or(false);
                GradedGeneration {
                    raw_text: g.text,
                    extracted_answer: extracted,
                    correct,
                    token_logprobs: g.token_logprobs,
                }
            })
            .collect();
        all.push(graded);
    }
    Ok(all)
}

/// Difficulty statistics over one task's sampled solutions.
pub fn difficulty_stats(task: &Task, solutions: &[Vec<GradedGeneration>]) -> TaskDifficultyStats {
    let total = solutions.iter().map(Vec::len).sum();
    let correct = solutions
        .iter()
        .flat_map(|per_agent| per_agent.iter())
        .filter(|g| g.correct)
        .count();
    TaskDifficultyStats {
        task_id: task.id.clone(),
        total_responses: total,
        correct_responses: correct,
    }
}

/// Build `n_sets` prompt instances for one task: set j pairs the task with
/// each agent's j-th draw.
pub fn build_mlpo_prompts(
    task: &Task,
    sampled_solutions: &[Vec<GradedGeneration>],
    n_sets: usize,
    info_mode: InfoMode,
    prompts: &PromptLibrary,
) -> Result<Vec<MlpoPromptInstance>> {
    if n_sets == 0 {
        return Err(Error::Config("n_sets must be at least 1".into()));
    }
    for (i, per_agent) in sampled_solutions.iter().enumerate() {
        if per_agent.len() < n_sets {
            return Err(Error::Data(format!(
                "task {}: agent {i} has {} draws, {n_sets} sets requested",
                task.id,
                per_agent.len()
            )));
        }
    }
    let mut instances = Vec::with_capacity(n_sets);
    for set_index in 0..n_sets {
        let agent_solutions: Vec<String> = sampled_solutions
            .iter()
            .map(|per_agent| per_agent[set_index].raw_text.clone())
            .collect();
        let rendered_prompt = prompts.render_leader(task, &agent_solutions, info_mode)?;
        instances.push(MlpoPromptInstance {
            task_id: task.id.clone(),
            set_index,
            agent_solutions,
            rendered_prompt,
            gold_answer: task.gold_answer.clone(),
        });
    }
    Ok(instances)
}

/// Dataset ordering modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Shuffle task order but keep each task's instances contiguous.
    Grouped,
    /// Permute all instances freely.
    Shuffled,
}

/// Order a dataset for training.
pub fn order_dataset(
    mut instances: Vec<MlpoPromptInstance>,
    mode: OrderMode,
    seed: u64,
) -> Vec<MlpoPromptInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        OrderMode::Shuffled => {
            instances.shuffle(&mut rng);
            instances
        }
        OrderMode::Grouped => {
            let mut groups: Vec<(String, Vec<MlpoPromptInstance>)> = Vec::new();
            for instance in instances {
                match groups.iter_mut().find(|(id, _)| *id == instance.task_id) {
                    Some((_, group)) => group.push(instance),
                    None => groups.push((instance.task_id.clone(), vec![instance])),
                }
            }
            groups.shuffle(&mut rng);
            groups
                .into_iter()
                .flat_map(|(_, mut group)| {
                    group.sort_by_key(|i| i.set_index);
                    group
                })
                .collect()
        }
    }
}

/// Configuration for backtracking SFT generation.
#[derive(Debug, Clone)]
pub struct SftGenConfig {
    /// Leader samples per prompt.
    pub n_leader_samples: usize,
    /// Attempts at a consistent backtracked completion before skipping.
    pub backtrack_retries: usize,
    pub info_mode: InfoMode,
    pub leader_sampling: SamplingParams,
    pub seed: u64,
}

impl Default for SftGenConfig {
    fn default() -> Self {
        SftGenConfig {
            n_leader_samples: 16,
            backtrack_retries: 4,
            info_mode: InfoMode::Full,
            leader_sampling: SamplingParams::default(),
            seed: 0,
        }
    }
}

/// Build SFT records for one task from one set of agent solutions.
///
/// Samples the leader `n_leader_samples` times and grades each draw. All
/// incorrect: the task is beyond reach, emit nothing. All correct: emit one
/// correct solution directly. Mixed: pair one correct and one incorrect
/// draw uniformly at random, prompt the backtracker, and keep the
/// completion only if its final boxed answer grades correct (bounded
/// retries, then an error the caller logs and skips).
pub fn build_sft_records(
    task: &Task,
    agent_solutions_one_set: &[String],
    leader: &Client,
    backtracker: &Client,
    prompts: &PromptLibrary,
    config: &SftGenConfig,
) -> Result<Vec<SftRecord>> {
    let leader_prompt = prompts.render_leader(task, agent_solutions_one_set, config.info_mode)?;
    let generations = leader.complete_chat(
        &[ChatMessage::user(leader_prompt.clone())],
        &config
            .leader_sampling
            .clone()
            .with_n(config.n_leader_samples as u32),
    )?;

    let graded: Vec<(String, Option<String>, bool)> = generations
        .into_iter()
        .map(|g| {
            let parsed = extract::extract_tagged_blocks(&g.text);
            let correct = parsed
                .boxed_payload
                .as_deref()
                .map(|p| extract::grade(p, &task.gold_answer, task.task_kind))
                .unwrap_or(false);
            (g.text, parsed.think_block, correct)
        })
        .collect();

    let correct: Vec<&(String, Option<String>, bool)> =
        graded.iter().filter(|(_, _, c)| *c).collect();
    let incorrect: Vec<&(String, Option<String>, bool)> =
        graded.iter().filter(|(_, _, c)| !*c).collect();

    let mut rng = task_rng(config.seed, &task.id, "sft");

    if correct.is_empty() {
        // Task beyond the leader's current reach.
        return Ok(Vec::new());
    }
    if incorrect.is_empty() {
        let pick = correct[rng.random_range(0..correct.len())];
        return Ok(vec![SftRecord {
            task_id: task.id.clone(),
            prompt: leader_prompt,
            completion: pick.0.clone(),
            kind: SftKind::DirectCorrect,
        }]);
    }

    let think_of = |entry: &(String, Option<String>, bool)| -> String {
        match &entry.1 {
            Some(think) if !think.trim().is_empty() => think.clone(),
            _ => entry.0.clone(),
        }
    };

    let mut last_problem = String::new();
    for _ in 0..config.backtrack_retries.max(1) {
        let good = correct[rng.random_range(0..correct.len())];
        let bad = incorrect[rng.random_range(0..incorrect.len())];
        let backtrack_prompt = match prompts.render_backtracking(
            task,
            agent_solutions_one_set,
            &think_of(bad),
            &think_of(good),
        ) {
            Ok(p) => p,
            Err(e) => {
                last_problem = e.to_string();
                continue;
            }
        };
        let completion = backtracker
            .complete_chat(
                &[ChatMessage::user(backtrack_prompt)],
                &config.leader_sampling.clone().with_n(1),
            )?
            .into_iter()
            .next()
            .map(|g| g.text)
            .unwrap_or_default();
        let consistent = extract::extract_boxed(&completion)
            .map(|p| extract::grade(&p, &task.gold_answer, task.task_kind))
            .unwrap_or(false);
        if consistent {
            return Ok(vec![SftRecord {
                task_id: task.id.clone(),
                prompt: leader_prompt,
                completion,
                kind: SftKind::Backtracked,
            }]);
        }
        last_problem = "backtracked completion does not reach the gold answer".into();
    }
    Err(Error::Data(format!(
        "task {}: no consistent backtracked completion within {} attempt(s): {last_problem}",
        task.id, config.backtrack_retries
    )))
}

/// Configuration for the multi-round continuation set.
#[derive(Debug, Clone)]
pub struct MlpoPlusConfig {
    /// Rounds whose agent responses are harvested.
    pub rounds_used: Vec<usize>,
    /// Response sets taken per round (one per episode).
    pub sets_per_round: usize,
    /// Tasks whose leader accuracy after two rounds exceeds this are dropped.
    pub acc_threshold: f64,
    /// Episodes run per task to estimate accuracy and harvest responses.
    pub episodes_per_task: usize,
    pub info_mode: InfoMode,
    pub seed: u64,
}

impl Default for MlpoPlusConfig {
    fn default() -> Self {
        MlpoPlusConfig {
            rounds_used: vec![0, 1, 2],
            sets_per_round: 2,
            acc_threshold: 0.5,
            episodes_per_task: 8,
            info_mode: InfoMode::Full,
            seed: 0,
        }
    }
}

/// Outcome of the continuation builder.
#[derive(Debug, Clone)]
pub struct MlpoPlusOutcome {
    pub instances: Vec<MlpoPromptInstance>,
    pub kept_tasks: usize,
    pub dropped_tasks: usize,
}

/// Build the continuation set: run leader-in-the-loop episodes per task,
/// drop tasks the leader already solves (> threshold accuracy at the second
/// round), and harvest agent-response sets from the configured rounds of
/// the first `sets_per_round` episodes.
pub fn build_mlpo_plus_dataset(
    runner: &EpisodeRunner,
    tasks: &[Task],
    prompts: &PromptLibrary,
    config: &MlpoPlusConfig,
) -> Result<MlpoPlusOutcome> {
    if config.rounds_used.is_empty() {
        return Err(Error::Config("rounds_used must not be empty".into()));
    }
    if config.sets_per_round == 0 {
        return Err(Error::Config("sets_per_round must be at least 1".into()));
    }
    if config.episodes_per_task < config.sets_per_round {
        return Err(Error::Config(
            "episodes_per_task must be at least sets_per_round".into(),
        ));
    }
    let max_round = *config.rounds_used.iter().max().unwrap();
    if runner.rounds() <= max_round {
        return Err(Error::Config(format!(
            "episode runner has T={} but round {max_round} is harvested",
            runner.rounds()
        )));
    }
    let accuracy_round = 1.min(runner.rounds() - 1);

    let mut instances = Vec::new();
    let mut kept_tasks = 0;
    let mut dropped_tasks = 0;
    for task in tasks {
        let mut transcripts = Vec::with_capacity(config.episodes_per_task);
        for episode in 0..config.episodes_per_task {
            let mut hasher = Sha256::new();
            hasher.update(config.seed.to_le_bytes());
            hasher.update(task.id.as_bytes());
            hasher.update((episode as u64).to_le_bytes());
            let episode_seed = u64::from_le_bytes(hasher.finalize()[..8].try_into().unwrap());
            let seeded = runner.with_sampling_seed(episode_seed);
            transcripts.push(seeded.run_episode(task)?);
        }
        let correct_at_two = transcripts
            .iter()
            .filter(|t| t.rounds[accuracy_round].leader.correct == Some(true))
            .count();
        let accuracy = correct_at_two as f64 / transcripts.len() as f64;
        if accuracy > config.acc_threshold {
            dropped_tasks += 1;
            continue;
        }
        kept_tasks += 1;
        let mut set_index = 0;
        for &round in &config.rounds_used {
            for transcript in transcripts.iter().take(config.sets_per_round) {
                let agent_solutions: Vec<String> = transcript.rounds[round]
                    .agents
                    .iter()
                    .map(|a| a.raw_text.clone())
                    .collect();
                let rendered_prompt =
                    prompts.render_leader(task, &agent_solutions, config.info_mode)?;
                instances.push(MlpoPromptInstance {
                    task_id: task.id.clone(),
                    set_index,
                    agent_solutions,
                    rendered_prompt,
                    gold_answer: task.gold_answer.clone(),
                });
                set_index += 1;
            }
        }
    }
    Ok(MlpoPlusOutcome {
        instances,
        kept_tasks,
        dropped_tasks,
    })
}

/// Per-task persistence of sampled solutions for resumable corpus builds.
#[derive(Debug, Clone)]
pub struct SolutionStore {
    dir: PathBuf,
}

impl SolutionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(SolutionStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, task_id: &str) -> PathBuf {
        let digest = Sha256::digest(task_id.as_bytes());
        self.dir
            .join(format!("{}.solutions.json", crate::backends::hex(&digest[..8])))
    }

    pub fn load(&self, task_id: &str) -> Result<Option<Vec<Vec<GradedGeneration>>>> {
        let path = self.path(task_id);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store(&self, task_id: &str, solutions: &[Vec<GradedGeneration>]) -> Result<()> {
        let tmp = self.path(task_id).with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(solutions)?)?;
        std::fs::rename(&tmp, self.path(task_id))?;
        Ok(())
    }
}
