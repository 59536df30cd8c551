//! The round-based inference protocol.
//!
//! Round 0: every agent answers the task independently; the leader
//! synthesizes the K responses. Rounds 1..T-1: each agent revises against
//! its own previous response and the leader's previous output (nothing
//! else), and the leader aggregates the fresh responses. The leader is
//! stateless across rounds: its prompt is a function of the task and the
//! current round's agent responses only.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{BackendSpec, ChatMessage, Client, Generation, SamplingParams};
use crate::error::{Error, Result};
use crate::extract;
use crate::jsonl;
use crate::model::{AgentResponse, InfoMode, LeaderOutput, Round, Task, Transcript};
use crate::prompt::PromptLibrary;

/// Declarative episode configuration, as written in run files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Inference rounds T.
    #[serde(default = "default_rounds")]
    pub t: usize,
    #[serde(default = "default_info_mode")]
    pub info_mode: InfoMode,
    pub leader_backend: BackendSpec,
    pub agent_backends: Vec<BackendSpec>,
    #[serde(default)]
    pub agent_sampling: SamplingParams,
    #[serde(default)]
    pub leader_sampling: SamplingParams,
}

fn default_rounds() -> usize {
    5
}

fn default_info_mode() -> InfoMode {
    InfoMode::Full
}

impl EpisodeConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.t == 0 {
            problems.push("episode.t must be at least 1".into());
        }
        if self.agent_backends.is_empty() {
            problems.push("episode needs at least one agent backend".into());
        }
        problems.extend(self.leader_backend.validate());
        for spec in &self.agent_backends {
            problems.extend(spec.validate());
        }
        if let Err(e) = self.agent_sampling.validate() {
            problems.push(format!("agent sampling: {e}"));
        }
        if let Err(e) = self.leader_sampling.validate() {
            problems.push(format!("leader sampling: {e}"));
        }
        problems
    }

    /// Build the live runner this configuration describes.
    pub fn build(&self, prompts: PromptLibrary) -> Result<EpisodeRunner> {
        if let Some(problem) = self.validate().into_iter().next() {
            return Err(Error::Config(problem));
        }
        let leader = Arc::new(Client::new(self.leader_backend.build()?));
        let agents = self
            .agent_backends
            .iter()
            .map(|spec| Ok(Arc::new(Client::new(spec.build()?))))
            .collect::<Result<Vec<_>>>()?;
        EpisodeRunner::new(
            self.t,
            self.info_mode,
            leader,
            agents,
            self.agent_sampling.clone(),
            self.leader_sampling.clone(),
            prompts,
        )
    }
}

/// Executable episode pipeline: clients, sampling, and prompt templates.
#[derive(Clone)]
pub struct EpisodeRunner {
    t: usize,
    info_mode: InfoMode,
    leader: Arc<Client>,
    agents: Vec<Arc<Client>>,
    agent_sampling: SamplingParams,
    leader_sampling: SamplingParams,
    prompts: Arc<PromptLibrary>,
}

impl EpisodeRunner {
    pub fn new(
        t: usize,
        info_mode: InfoMode,
        leader: Arc<Client>,
        agents: Vec<Arc<Client>>,
        agent_sampling: SamplingParams,
        leader_sampling: SamplingParams,
        prompts: PromptLibrary,
    ) -> Result<Self> {
        if t == 0 {
            return Err(Error::Config("round count T must be at least 1".into()));
        }
        if agents.is_empty() {
            return Err(Error::Config("episode needs at least one agent".into()));
        }
        Ok(EpisodeRunner {
            t,
            info_mode,
            leader,
            agents,
            agent_sampling,
            leader_sampling,
            prompts: Arc::new(prompts),
        })
    }

    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn team_size(&self) -> usize {
        self.agents.len()
    }

    pub fn info_mode(&self) -> InfoMode {
        self.info_mode
    }

    pub fn leader_client(&self) -> &Arc<Client> {
        &self.leader
    }

    pub fn agent_clients(&self) -> &[Arc<Client>] {
        &self.agents
    }

    pub fn prompts(&self) -> &PromptLibrary {
        &self.prompts
    }

    /// Backend identifiers in agent order.
    pub fn team_spec(&self) -> Vec<String> {
        self.agents.iter().map(|c| c.name().to_string()).collect()
    }

    /// Same pipeline with both roles' sampling seeds set, for repeated-run
    /// settings (continuation data, majority voting) where each run must
    /// draw a distinct stream.
    pub fn with_sampling_seed(&self, seed: u64) -> EpisodeRunner {
        let mut runner = self.clone();
        runner.agent_sampling.seed = Some(seed);
        runner.leader_sampling.seed = Some(seed);
        runner
    }

    /// Completion calls per episode: one per agent per round plus one leader
    /// call per round.
    pub fn calls_per_episode(&self) -> usize {
        self.t * (self.team_size() + 1)
    }

    fn agent_response(&self, task: &Task, agent_index: usize, round: usize, text: String) -> AgentResponse {
        let extracted = extract::extract_answer(&text, task.task_kind);
        let correct = Some(
            extracted
                .as_deref()
                .map(|a| extract::grade(a, &task.gold_answer, task.task_kind))
                .unwrap_or(false),
        );
        AgentResponse {
            agent_index,
            round,
            raw_text: text,
            extracted_answer: extracted,
            correct,
        }
    }

    fn leader_output(&self, task: &Task, round: usize, text: String) -> LeaderOutput {
        leader_output_from_text(task, round, text)
    }

    /// Issue the K agent calls for one round (concurrently), then the leader
    /// call over the fresh responses.
    fn run_round(
        &self,
        task: &Task,
        round: usize,
        prev: Option<&Round>,
    ) -> Result<(Vec<AgentResponse>, LeaderOutput)> {
        let k = self.team_size();
        // Salt the sampling seed with the round index: a prompt that happens
        // to repeat across rounds must still draw a fresh sample (and a
        // fresh cache entry), not replay the earlier round.
        let agent_sampling = salt_seed(&self.agent_sampling, round);
        let leader_sampling = salt_seed(&self.leader_sampling, round);
        let mut prompts = Vec::with_capacity(k);
        for (i, _) in self.agents.iter().enumerate() {
            let prompt = match prev {
                None => self.prompts.render_agent_round0(task, i, k)?,
                Some(prev_round) => {
                    let leader_text = &prev_round.leader.raw_text;
                    if leader_text.is_empty() {
                        return Err(Error::Protocol(format!(
                            "round {round} needs the previous leader output"
                        ))
                        .in_episode("leader", round.saturating_sub(1)));
                    }
                    self.prompts.render_agent_followup(
                        task,
                        i,
                        k,
                        &prev_round.agents[i].raw_text,
                        leader_text,
                    )?
                }
            };
            prompts.push(prompt);
        }

        // Same-round agent calls are independent; run them concurrently and
        // store results slot-indexed so completion order cannot matter.
        let mut slots: Vec<Option<Result<Vec<Generation>>>> = (0..k).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(k);
            for (i, (client, prompt)) in self.agents.iter().zip(prompts.iter()).enumerate() {
                let sampling = agent_sampling.clone();
                handles.push((
                    i,
                    scope.spawn(move || {
                        client.complete_chat(&[ChatMessage::user(prompt.clone())], &sampling)
                    }),
                ));
            }
            for (i, handle) in handles {
                slots[i] = Some(handle.join().expect("agent worker panicked"));
            }
        });

        let mut responses = Vec::with_capacity(k);
        for (i, slot) in slots.into_iter().enumerate() {
            let generations = slot
                .expect("slot filled")
                .map_err(|e| e.in_episode(format!("agent {i}"), round))?;
            let text = generations
                .into_iter()
                .next()
                .ok_or_else(|| {
                    Error::Protocol("agent call returned no generations".into())
                        .in_episode(format!("agent {i}"), round)
                })?
                .text;
            responses.push(self.agent_response(task, i, round, text));
        }

        let response_texts: Vec<String> =
            responses.iter().map(|r| r.raw_text.clone()).collect();
        let leader_prompt = self
            .prompts
            .render_leader(task, &response_texts, self.info_mode)?;
        let leader_generations = self
            .leader
            .complete_chat(&[ChatMessage::user(leader_prompt)], &leader_sampling)
            .map_err(|e| e.in_episode("leader", round))?;
        let leader_text = leader_generations
            .into_iter()
            .next()
            .ok_or_else(|| {
                Error::Protocol("leader call returned no generations".into())
                    .in_episode("leader", round)
            })?
            .text;
        Ok((responses, self.leader_output(task, round, leader_text)))
    }

    /// Round 0: independent agent solutions, then leader synthesis.
    pub fn run_round0(&self, task: &Task) -> Result<(Vec<AgentResponse>, LeaderOutput)> {
        self.run_round(task, 0, None)
    }

    /// Round t >= 1: agents revise against their own previous response and
    /// the previous leader output; the leader sees only the new responses.
    pub fn run_followup_round(
        &self,
        task: &Task,
        prev: &Round,
    ) -> Result<(Vec<AgentResponse>, LeaderOutput)> {
        let round = prev.leader.round + 1;
        self.run_round(task, round, Some(prev))
    }

    /// Execute a full T-round episode.
    pub fn run_episode(&self, task: &Task) -> Result<Transcript> {
        self.run_episode_resumable(task, None)
    }

    /// Execute an episode, persisting each completed round to `store` and
    /// resuming from whatever rounds are already on disk.
    pub fn run_episode_resumable(
        &self,
        task: &Task,
        store: Option<&EpisodeStore>,
    ) -> Result<Transcript> {
        let existing = match store {
            Some(s) => s.load_rounds(&task.id)?,
            None => Vec::new(),
        };
        let mut transcript = Transcript::from_rounds(
            task,
            self.team_spec(),
            self.info_mode,
            self.t,
            existing.into_iter().take(self.t).collect(),
        )?;

        while transcript.rounds.len() < self.t {
            let round_index = transcript.rounds.len();
            let prev = transcript.rounds.last().cloned();
            let outcome = self.run_round(task, round_index, prev.as_ref());
            match outcome {
                Ok((agents, leader)) => {
                    let round = Round {
                        agents,
                        leader,
                    };
                    if let Some(s) = store {
                        s.append_round(&task.id, &round)?;
                    }
                    transcript = transcript.append_round(round.agents, round.leader)?;
                }
                Err(e) => {
                    if let Some(s) = store {
                        s.record_error(&task.id, round_index, &e)?;
                    }
                    return Err(e);
                }
            }
        }
        if let Some(s) = store {
            s.clear_error(&task.id)?;
        }
        Ok(transcript.resolve_final_answer())
    }
}

/// Mix the round index into the configured sampling seed. Round 0 keeps the
/// base seed unchanged.
fn salt_seed(params: &SamplingParams, round: usize) -> SamplingParams {
    let base = params.seed.unwrap_or(0);
    let mut salted = params.clone();
    salted.seed = Some(base ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    salted
}

/// Parse and grade one leader completion.
pub fn leader_output_from_text(task: &Task, round: usize, text: String) -> LeaderOutput {
    let parsed = extract::extract_tagged_blocks(&text);
    let extracted = parsed
        .boxed_payload
        .as_deref()
        .and_then(|p| extract::normalize_answer(p, task.task_kind).ok());
    let correct = Some(
        extracted
            .as_deref()
            .map(|a| extract::grade(a, &task.gold_answer, task.task_kind))
            .unwrap_or(false),
    );
    LeaderOutput {
        round,
        raw_text: text,
        think_block: parsed.think_block,
        answer_block: parsed.answer_block,
        extracted_answer: extracted,
        format_ok: parsed.format_ok,
        correct,
    }
}

/// Leader answering alone with the round-0 style prompt (no agent blocks).
pub fn run_zero_shot(
    leader: &Client,
    prompts: &PromptLibrary,
    task: &Task,
    sampling: &SamplingParams,
) -> Result<LeaderOutput> {
    let prompt = prompts.render_zero_shot(task)?;
    let generations = leader
        .complete_chat(&[ChatMessage::user(prompt)], sampling)
        .map_err(|e| e.in_episode("leader", 0))?;
    let text = generations
        .into_iter()
        .next()
        .ok_or_else(|| Error::Protocol("zero-shot call returned no generations".into()))?
        .text;
    Ok(leader_output_from_text(task, 0, text))
}

/// Run episodes for many tasks over a bounded worker pool.
///
/// Results are slot-indexed by task order, so the returned transcripts (and
/// any serialized corpus) are identical for every worker count.
pub fn run_many(
    runner: &EpisodeRunner,
    tasks: &[Task],
    store: Option<&EpisodeStore>,
    workers: usize,
) -> Result<Vec<Transcript>> {
    let workers = workers.max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Transcript>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers.min(tasks.len().max(1)) {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    break;
                }
                let outcome = runner.run_episode_resumable(&tasks[index], store);
                slots.lock().unwrap()[index] = Some(outcome);
            });
        }
    });

    let mut transcripts = Vec::with_capacity(tasks.len());
    for slot in slots.into_inner().unwrap() {
        transcripts.push(slot.expect("every task claimed")?);
    }
    Ok(transcripts)
}

/// Per-task round persistence for resume-safe episode runs.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ErrorMarker {
    round: usize,
    message: String,
}

impl EpisodeStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(EpisodeStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stem(&self, task_id: &str) -> String {
        let sanitized: String = task_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .take(64)
            .collect();
        let digest = Sha256::digest(task_id.as_bytes());
        format!("{sanitized}_{}", crate::backends::hex(&digest[..4]))
    }

    fn rounds_path(&self, task_id: &str) -> PathBuf {
        self.dir.join(format!("{}.rounds.jsonl", self.stem(task_id)))
    }

    fn error_path(&self, task_id: &str) -> PathBuf {
        self.dir.join(format!("{}.error.json", self.stem(task_id)))
    }

    pub fn load_rounds(&self, task_id: &str) -> Result<Vec<Round>> {
        let path = self.rounds_path(task_id);
        if !path.exists() {
            return Ok(Vec::new());
        }
        jsonl::read_jsonl(path)
    }

    pub fn append_round(&self, task_id: &str, round: &Round) -> Result<()> {
        jsonl::append_jsonl(round, self.rounds_path(task_id))
    }

    pub fn record_error(&self, task_id: &str, round: usize, error: &Error) -> Result<()> {
        let marker = ErrorMarker {
            round,
            message: error.to_string(),
        };
        std::fs::write(self.error_path(task_id), serde_json::to_vec_pretty(&marker)?)?;
        Ok(())
    }

    pub fn clear_error(&self, task_id: &str) -> Result<()> {
        let path = self.error_path(task_id);
        if path.exists() {
            std::fs::remove_file(path)?;
        }
        Ok(())
    }

    /// Rounds already persisted for `task_id`.
    pub fn completed_rounds(&self, task_id: &str) -> Result<usize> {
        Ok(self.load_rounds(task_id)?.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Backend, ScriptedBackend};
    use crate::model::TaskKind;

    fn task() -> Task {
        Task::new("t1", "What is 2+2?", "4", TaskKind::MathExpression).unwrap()
    }

    fn agent_text(answer: &str, tag: &str) -> String {
        format!("{tag} reasoning.\nTherefore, the final answer is: $\\boxed{{{answer}}}$.")
    }

    fn leader_text(answer: &str) -> String {
        format!(
            "<think>weighing the options</think>\n<answer>Therefore, the final answer is: $\\boxed{{{answer}}}$</answer>"
        )
    }

    /// Script a full T-round episode: agents answer per `agent_answers[round][agent]`,
    /// the leader answers per `leader_answers[round]`.
    fn scripted_runner(
        task: &Task,
        agent_answers: &[Vec<&str>],
        leader_answers: &[&str],
    ) -> EpisodeRunner {
        let prompts = PromptLibrary::builtin();
        let t = leader_answers.len();
        let k = agent_answers[0].len();
        let mut agents: Vec<ScriptedBackend> = (0..k)
            .map(|i| ScriptedBackend::new(format!("agent-{i}")))
            .collect();
        let mut leader = ScriptedBackend::new("leader");

        let mut round_texts: Vec<Vec<String>> = Vec::new();
        for (round, answers) in agent_answers.iter().enumerate() {
            let texts: Vec<String> = answers
                .iter()
                .enumerate()
                .map(|(i, a)| agent_text(a, &format!("r{round}a{i}")))
                .collect();
            for (i, backend) in agents.iter_mut().enumerate() {
                let prompt = if round == 0 {
                    prompts.render_agent_round0(task, i, k).unwrap()
                } else {
                    prompts
                        .render_agent_followup(
                            task,
                            i,
                            k,
                            &round_texts[round - 1][i],
                            &leader_text(leader_answers[round - 1]),
                        )
                        .unwrap()
                };
                backend.add_prompt(&prompt, vec![texts[i].clone()]);
            }
            let leader_prompt = prompts
                .render_leader(task, &texts, InfoMode::Full)
                .unwrap();
            leader.add_prompt(&leader_prompt, vec![leader_text(leader_answers[round])]);
            round_texts.push(texts);
        }

        EpisodeRunner::new(
            t,
            InfoMode::Full,
            Arc::new(Client::new(Arc::new(leader))),
            agents
                .into_iter()
                .map(|b| Arc::new(Client::new(Arc::new(b) as Arc<dyn Backend>)))
                .collect(),
            SamplingParams::default(),
            SamplingParams::default(),
            prompts,
        )
        .unwrap()
    }

    #[test]
    fn round0_composes_agents_then_leader() {
        let task = task();
        let runner = scripted_runner(&task, &[vec!["4", "4", "5"]], &["4"]);
        let (agents, leader) = runner.run_round0(&task).unwrap();
        assert_eq!(agents.len(), 3);
        assert_eq!(agents[2].extracted_answer.as_deref(), Some("5"));
        assert_eq!(agents[2].correct, Some(false));
        assert_eq!(leader.extracted_answer.as_deref(), Some("4"));
        assert_eq!(leader.correct, Some(true));
        assert!(leader.format_ok);
    }

    #[test]
    fn degenerate_single_agent_team() {
        let task = task();
        let runner = scripted_runner(&task, &[vec!["4"]], &["4"]);
        let (agents, leader) = runner.run_round0(&task).unwrap();
        assert_eq!(agents.len(), 1);
        assert_eq!(leader.correct, Some(true));
    }

    #[test]
    fn followup_flips_agent_after_leader_feedback() {
        let task = task();
        let runner = scripted_runner(
            &task,
            &[vec!["4", "5", "4"], vec!["4", "4", "4"]],
            &["4", "4"],
        );
        let transcript = runner.run_episode(&task).unwrap();
        assert_eq!(transcript.rounds.len(), 2);
        let round1 = &transcript.rounds[1];
        assert!(round1.agents.iter().all(|a| a.correct == Some(true)));
        assert_eq!(transcript.final_answer, "4");
    }

    #[test]
    fn missing_leader_output_is_protocol_error() {
        let task = task();
        let runner = scripted_runner(&task, &[vec!["4"]], &["4"]);
        let prev = Round {
            agents: vec![AgentResponse {
                agent_index: 0,
                round: 0,
                raw_text: "something".into(),
                extracted_answer: None,
                correct: Some(false),
            }],
            leader: LeaderOutput {
                round: 0,
                raw_text: String::new(),
                think_block: None,
                answer_block: None,
                extracted_answer: None,
                format_ok: false,
                correct: Some(false),
            },
        };
        let err = runner.run_followup_round(&task, &prev).unwrap_err();
        assert!(matches!(err, Error::Episode { .. }));
    }

    #[test]
    fn episode_issues_exactly_kt_plus_t_calls() {
        let task = task();
        let answers = vec![vec!["4", "4", "4"]; 5];
        let leaders = vec!["4"; 5];
        let runner = scripted_runner(&task, &answers, &leaders);
        runner.run_episode(&task).unwrap();
        let agent_calls: u64 = runner.agent_clients().iter().map(|c| c.requests()).sum();
        assert_eq!(agent_calls, 15); // K * T
        assert_eq!(runner.leader_client().requests(), 5); // T
    }

    #[test]
    fn t1_episode_equals_round0() {
        let task = task();
        let runner = scripted_runner(&task, &[vec!["4", "4"]], &["4"]);
        let transcript = runner.run_episode(&task).unwrap();
        assert_eq!(transcript.rounds.len(), 1);
        assert_eq!(transcript.final_answer, "4");
    }

    #[test]
    fn backend_error_names_role_and_round() {
        let task = task();
        // Leader script present for round 0 only; round-1 agents scripted,
        // round-1 leader missing.
        let prompts = PromptLibrary::builtin();
        let runner = scripted_runner(&task, &[vec!["4"], vec!["4"]], &["4", "4"]);
        // Build a second runner reusing agent scripts but an empty leader.
        let empty_leader = ScriptedBackend::new("leader");
        let broken = EpisodeRunner::new(
            1,
            InfoMode::Full,
            Arc::new(Client::new(Arc::new(empty_leader))),
            runner.agents.clone(),
            SamplingParams::default(),
            SamplingParams::default(),
            (*runner.prompts).clone(),
        )
        .unwrap();
        let err = broken.run_episode(&task).unwrap_err();
        match err {
            Error::Episode { role, round, .. } => {
                assert_eq!(role, "leader");
                assert_eq!(round, 0);
            }
            other => panic!("unexpected error {other}"),
        }
        let _ = prompts;
    }

    #[test]
    fn store_resumes_at_failed_round_without_repeating_calls() {
        let dir = tempfile::tempdir().unwrap();
        let store = EpisodeStore::open(dir.path().join("state")).unwrap();
        let task = task();

        // First runner: knows round 0 only; round 1 leader prompt missing.
        let full_answers = vec![vec!["4", "5"], vec!["4", "4"]];
        let full_leaders = vec!["5", "4"];
        let complete = scripted_runner(&task, &full_answers, &full_leaders);
        let partial = {
            let mut leader = ScriptedBackend::new("leader");
            let prompts = PromptLibrary::builtin();
            let texts: Vec<String> = full_answers[0]
                .iter()
                .enumerate()
                .map(|(i, a)| agent_text(a, &format!("r0a{i}")))
                .collect();
            let leader_prompt = prompts.render_leader(&task, &texts, InfoMode::Full).unwrap();
            leader.add_prompt(&leader_prompt, vec![leader_text("5")]);
            EpisodeRunner::new(
                2,
                InfoMode::Full,
                Arc::new(Client::new(Arc::new(leader))),
                complete.agents.clone(),
                SamplingParams::default(),
                SamplingParams::default(),
                prompts,
            )
            .unwrap()
        };

        let err = partial.run_episode_resumable(&task, Some(&store)).unwrap_err();
        assert!(matches!(err, Error::Episode { .. }));
        assert_eq!(store.completed_rounds(&task.id).unwrap(), 1);
        assert!(store.error_path(&task.id).exists());

        // Resume with a complete runner: round 0 replays from disk.
        complete.leader_client().reset_counters();
        for client in complete.agent_clients() {
            client.reset_counters();
        }
        let transcript = complete.run_episode_resumable(&task, Some(&store)).unwrap();
        assert_eq!(transcript.rounds.len(), 2);
        assert_eq!(transcript.final_answer, "4");
        // Only round 1 was executed: K agent calls + 1 leader call.
        let agent_calls: u64 = complete.agent_clients().iter().map(|c| c.requests()).sum();
        assert_eq!(agent_calls, 2);
        assert_eq!(complete.leader_client().requests(), 1);
        assert!(!store.error_path(&task.id).exists());
    }

    #[test]
    fn zero_shot_scripted() {
        let task = task();
        let prompts = PromptLibrary::builtin();
        let mut leader = ScriptedBackend::new("leader");
        let zs_prompt = prompts.render_zero_shot(&task).unwrap();
        leader.add_prompt(&zs_prompt, vec![agent_text("4", "solo")]);
        let client = Client::new(Arc::new(leader));
        let out = run_zero_shot(&client, &prompts, &task, &SamplingParams::default()).unwrap();
        assert_eq!(out.correct, Some(true));
        assert!(!out.format_ok); // no tags in the round-0 style output

        let out2 = run_zero_shot(&client, &prompts, &task, &SamplingParams::default()).unwrap();
        assert_eq!(out.raw_text, out2.raw_text);
    }

    #[test]
    fn zero_shot_malformed_output_grades_incorrect() {
        let task = task();
        let prompts = PromptLibrary::builtin();
        let mut leader = ScriptedBackend::new("leader");
        let zs_prompt = prompts.render_zero_shot(&task).unwrap();
        leader.add_prompt(&zs_prompt, vec!["no boxed answer anywhere".to_string()]);
        let client = Client::new(Arc::new(leader));
        let out = run_zero_shot(&client, &prompts, &task, &SamplingParams::default()).unwrap();
        assert_eq!(out.correct, Some(false));
        assert!(!out.format_ok);
        assert!(out.extracted_answer.is_none());
    }
}
