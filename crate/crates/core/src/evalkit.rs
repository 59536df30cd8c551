//! Evaluation machinery: per-round accuracy with ±2 standard-error bands,
//! budgeted final-round majority voting, leader accuracy conditioned on
//! agent correctness, and team-composition summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract;
use crate::model::{Task, TaskKind, Transcript};
use crate::sim::majority_winner;

/// Point estimate with a binomial ±2 standard-error band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    pub p: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Binomial accuracy: `p = mean`, `se = sqrt(p (1-p) / n)`, band `p ± 2 se`.
pub fn accuracy_with_se(correct_flags: &[bool]) -> Result<Accuracy> {
    if correct_flags.is_empty() {
        return Err(Error::Integrity("accuracy over an empty sample".into()));
    }
    let n = correct_flags.len();
    let p = correct_flags.iter().filter(|&&c| c).count() as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    Ok(Accuracy {
        p,
        se,
        lo: p - 2.0 * se,
        hi: p + 2.0 * se,
        n,
    })
}

/// Completed episodes plus the per-round leader-correctness matrix.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub transcripts: Vec<Transcript>,
    /// `per_round_correct[episode][round]`.
    pub per_round_correct: Vec<Vec<bool>>,
    pub config_hash: String,
    pub seed: u64,
}

impl RunResult {
    /// Assemble a result from transcripts; all episodes must share T.
    pub fn from_transcripts(
        transcripts: Vec<Transcript>,
        config_hash: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if transcripts.is_empty() {
            return Err(Error::Integrity("run holds no transcripts".into()));
        }
        let t = transcripts[0].rounds.len();
        let mut per_round_correct = Vec::with_capacity(transcripts.len());
        for transcript in &transcripts {
            if transcript.rounds.len() != t {
                return Err(Error::Integrity(format!(
                    "episode {} has {} rounds, expected {t}",
                    transcript.task_id,
                    transcript.rounds.len()
                )));
            }
            per_round_correct.push(
                transcript
                    .rounds
                    .iter()
                    .map(|r| r.leader.correct == Some(true))
                    .collect(),
            );
        }
        Ok(RunResult {
            transcripts,
            per_round_correct,
            config_hash: config_hash.into(),
            seed,
        })
    }

    pub fn rounds(&self) -> usize {
        self.per_round_correct.first().map(Vec::len).unwrap_or(0)
    }
}

/// Leader accuracy per round, with bands, across episodes.
pub fn per_round_curve(run: &RunResult) -> Result<Vec<Accuracy>> {
    let t = run.rounds();
    (0..t)
        .map(|round| {
            let flags: Vec<bool> = run.per_round_correct.iter().map(|ep| ep[round]).collect();
            accuracy_with_se(&flags)
        })
        .collect()
}

/// Generation budget for majority voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteBudget {
    /// Total completion calls allowed across all runs.
    pub total_generations: usize,
    /// Completion calls one pipeline run costs.
    pub generations_per_run: usize,
}

impl VoteBudget {
    /// Budget for a T-round, K-agent pipeline: each run costs `T * (K + 1)`
    /// generations (every completion call counts as one generation).
    pub fn for_pipeline(total_generations: usize, t: usize, k: usize) -> Result<Self> {
        let per_run = t * (k + 1);
        let budget = VoteBudget {
            total_generations,
            generations_per_run: per_run,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations_per_run == 0 {
            return Err(Error::Config("generations_per_run must be positive".into()));
        }
        if self.runs_used() < 1 {
            return Err(Error::Config(format!(
                "budget of {} generations cannot afford one {}-generation run",
                self.total_generations, self.generations_per_run
            )));
        }
        Ok(())
    }

    /// Independent runs the budget affords.
    pub fn runs_used(&self) -> usize {
        self.total_generations / self.generations_per_run
    }
}

/// Where votes are drawn from within each run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteSource {
    /// One vote per run: the leader's final-round answer.
    LeaderFinal,
    /// K votes per run: every agent's final-round answer.
    AgentFinals,
}

/// Outcome of one budgeted vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    /// Winning normalized answer; `None` when every vote was unparseable.
    pub answer: Option<String>,
    pub votes: Vec<Option<String>>,
    pub runs_used: usize,
}

/// Run the pipeline as many times as the budget affords and vote over
/// final-round answers.
///
/// Votes are normalized before counting; ties resolve to the earliest
/// completed vote. The runner receives the run index so callers can vary
/// sampling seeds per run.
pub fn budgeted_majority_vote<F>(
    task: &Task,
    mut pipeline_runner: F,
    budget: &VoteBudget,
    vote_source: VoteSource,
) -> Result<VoteOutcome>
where
    F: FnMut(usize) -> Result<Transcript>,
{
    budget.validate()?;
    let runs = budget.runs_used();
    let mut votes: Vec<Option<String>> = Vec::new();
    for run_index in 0..runs {
        let transcript = pipeline_runner(run_index)?;
        let last = transcript
            .rounds
            .last()
            .ok_or_else(|| Error::Integrity("vote over an empty transcript".into()))?;
        match vote_source {
            VoteSource::LeaderFinal => votes.push(last.leader.extracted_answer.clone()),
            VoteSource::AgentFinals => {
                for agent in &last.agents {
                    votes.push(agent.extracted_answer.clone());
                }
            }
        }
    }
    let normalized: Vec<Option<String>> = votes
        .iter()
        .map(|v| {
            v.as_deref()
                .and_then(|a| extract::normalize_answer(a, task.task_kind).ok())
        })
        .collect();
    let valid: Vec<String> = normalized.iter().flatten().cloned().collect();
    let answer = majority_winner(&valid);
    Ok(VoteOutcome {
        answer,
        votes: normalized,
        runs_used: runs,
    })
}

/// Leader round-0 accuracy bucketed by the number of round-0 correct agents.
///
/// Bucket m holds episodes where exactly m agents were correct; empty
/// buckets are absent from the map.
pub fn condition_on_agent_correctness(run: &RunResult) -> BTreeMap<usize, Accuracy> {
    let mut buckets: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for transcript in &run.transcripts {
        let Some(round0) = transcript.rounds.first() else {
            continue;
        };
        let m = round0
            .agents
            .iter()
            .filter(|a| a.correct == Some(true))
            .count();
        buckets
            .entry(m)
            .or_default()
            .push(round0.leader.correct == Some(true));
    }
    buckets
        .into_iter()
        .map(|(m, flags)| (m, accuracy_with_se(&flags).expect("bucket non-empty")))
        .collect()
}

/// One row of the team-composition report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TeamCompositionRow {
    pub team: Vec<String>,
    pub leader_accuracy: Accuracy,
    /// Final-round accuracy averaged over the K agents.
    pub mean_team_accuracy: f64,
}

/// Final-round leader accuracy and mean team accuracy per team spec.
pub fn team_composition_report(runs: &[(Vec<String>, RunResult)]) -> Result<Vec<TeamCompositionRow>> {
    let mut rows = Vec::with_capacity(runs.len());
    for (team, run) in runs {
        let final_flags: Vec<bool> = run
            .per_round_correct
            .iter()
            .map(|ep| *ep.last().unwrap_or(&false))
            .collect();
        let leader_accuracy = accuracy_with_se(&final_flags)?;
        let k = team.len().max(1);
        let mut per_agent_correct = vec![0usize; k];
        for transcript in &run.transcripts {
            if let Some(last) = transcript.rounds.last() {
                for (i, agent) in last.agents.iter().enumerate().take(k) {
                    if agent.correct == Some(true) {
                        per_agent_correct[i] += 1;
                    }
                }
            }
        }
        let n = run.transcripts.len() as f64;
        let mean_team_accuracy =
            per_agent_correct.iter().map(|&c| c as f64 / n).sum::<f64>() / k as f64;
        rows.push(TeamCompositionRow {
            team: team.clone(),
            leader_accuracy,
            mean_team_accuracy,
        });
    }
    Ok(rows)
}

/// Accuracy grouped by a task attribute (category or difficulty).
pub fn grouped_accuracy<'a>(
    run: &RunResult,
    tasks: &'a [Task],
    attribute: impl Fn(&'a Task) -> Option<&'a str>,
) -> BTreeMap<String, Accuracy> {
    let label_of: BTreeMap<&str, &str> = tasks
        .iter()
        .filter_map(|t| attribute(t).map(|a| (t.id.as_str(), a)))
        .collect();
    let mut groups: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (transcript, flags) in run.transcripts.iter().zip(run.per_round_correct.iter()) {
        if let Some(label) = label_of.get(transcript.task_id.as_str()) {
            groups
                .entry(label.to_string())
                .or_default()
                .push(*flags.last().unwrap_or(&false));
        }
    }
    groups
        .into_iter()
        .map(|(label, flags)| {
            let acc = accuracy_with_se(&flags).expect("group non-empty");
            (label, acc)
        })
        .collect()
}

/// Re-grade a transcript from its raw texts and check the stored flags
/// (replay grading used by the persistence smoke checks).
pub fn replay_grades_match(transcript: &Transcript, gold: &str, kind: TaskKind) -> bool {
    transcript.rounds.iter().all(|round| {
        let leader_ok = {
            let parsed = extract::extract_tagged_blocks(&round.leader.raw_text);
            let correct = parsed
                .boxed_payload
                .as_deref()
                .map(|p| extract::grade(p, gold, kind))
                .unwrap_or(false);
            Some(correct) == round.leader.correct
        };
        let agents_ok = round.agents.iter().all(|agent| {
            let correct = extract::extract_answer(&agent.raw_text, kind)
                .map(|a| extract::grade(&a, gold, kind))
                .unwrap_or(false);
            Some(correct) == agent.correct
        });
        leader_ok && agents_ok
    })
}
