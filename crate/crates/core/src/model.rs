//! Shared domain types: tasks, per-round responses, and episode transcripts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grading rule attached to a task's gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    MathExpression,
    ExactString,
}

/// Which agent material the leader sees when aggregating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoMode {
    /// Full agent responses, verbatim.
    Full,
    /// Responses with their final-answer sentences stripped.
    ReasoningOnly,
    /// Only each response's final-answer line.
    AnswerOnly,
}

/// One benchmark question with its gold answer and metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    /// Canonical answer string (stored post-normalization).
    pub gold_answer: String,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        gold_answer: impl Into<String>,
        task_kind: TaskKind,
    ) -> Result<Self> {
        let gold_answer = gold_answer.into();
        if gold_answer.is_empty() {
            return Err(Error::Config("task gold_answer must be non-empty".into()));
        }
        Ok(Task {
            id: id.into(),
            question: question.into(),
            gold_answer,
            task_kind,
            category: None,
            difficulty: None,
        })
    }
}

/// One agent's output for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    /// Position within the team, in `[0, K)`.
    pub agent_index: usize,
    /// Round the response belongs to, `t >= 0`.
    pub round: usize,
    pub raw_text: String,
    /// Canonical extracted answer; present iff extraction succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    /// Set after grading against the task's gold answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// The leader's synthesized output for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderOutput {
    pub round: usize,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think_block: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_block: Option<String>,
    /// Canonical answer derived only from the answer block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    /// True iff exactly one well-formed think block precedes exactly one
    /// well-formed answer block.
    pub format_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// One round of the episode: K agent responses followed by the leader output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub agents: Vec<AgentResponse>,
    pub leader: LeaderOutput,
}

/// Sentinel recorded as the final answer when no round produced a parseable
/// leader answer.
pub const UNPARSED_ANSWER: &str = "<unparsed>";

/// Full record of one T-round episode.
///
/// Serializes to one JSON object per line (JSONL) with exactly the fields
/// `task_id`, `team_spec`, `info_mode`, `rounds`, `final_answer`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub task_id: String,
    /// Ordered backend identifiers, one per agent (length K).
    pub team_spec: Vec<String>,
    pub info_mode: InfoMode,
    pub rounds: Vec<Round>,
    pub final_answer: String,
    /// Round capacity T fixed at construction; not serialized.
    #[serde(skip, default)]
    capacity: usize,
}

// Equality over content only; round capacity is construction-time metadata
// and does not survive serialization.
impl PartialEq for Transcript {
    fn eq(&self, other: &Self) -> bool {
        self.task_id == other.task_id
            && self.team_spec == other.team_spec
            && self.info_mode == other.info_mode
            && self.rounds == other.rounds
            && self.final_answer == other.final_answer
    }
}

impl Transcript {
    /// Create an empty transcript for `task` with capacity for `t` rounds.
    pub fn new(task: &Task, team_spec: Vec<String>, info_mode: InfoMode, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Config("round count T must be at least 1".into()));
        }
        if team_spec.is_empty() {
            return Err(Error::Config("team_spec must name at least one agent".into()));
        }
        Ok(Transcript {
            task_id: task.id.clone(),
            team_spec,
            info_mode,
            rounds: Vec::with_capacity(t),
            final_answer: String::new(),
            capacity: t,
        })
    }

    /// Team size K.
    pub fn team_size(&self) -> usize {
        self.team_spec.len()
    }

    /// Round capacity T. Zero for transcripts read back from disk.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append one completed round, returning the extended transcript.
    ///
    /// Transcripts are append-only values; the input is consumed and a new
    /// version returned. The round index of every response and of the leader
    /// output must equal the next round index, and the response count must
    /// equal K.
    pub fn append_round(
        mut self,
        agent_responses: Vec<AgentResponse>,
        leader_output: LeaderOutput,
    ) -> Result<Self> {
        let k = self.team_size();
        let next = self.rounds.len();
        if self.capacity != 0 && next >= self.capacity {
            return Err(Error::Integrity(format!(
                "transcript {} already holds its full {} round(s)",
                self.task_id, self.capacity
            )));
        }
        if agent_responses.len() != k {
            return Err(Error::Integrity(format!(
                "expected {} agent responses for round {}, got {}",
                k,
                next,
                agent_responses.len()
            )));
        }
        for (i, resp) in agent_responses.iter().enumerate() {
            if resp.round != next {
                return Err(Error::Integrity(format!(
                    "agent {} carries round index {} but round {} is next",
                    resp.agent_index, resp.round, next
                )));
            }
            if resp.agent_index != i {
                return Err(Error::Integrity(format!(
                    "agent responses out of order: slot {} holds agent_index {}",
                    i, resp.agent_index
                )));
            }
        }
        if leader_output.round != next {
            return Err(Error::Integrity(format!(
                "leader output carries round index {} but round {} is next",
                leader_output.round, next
            )));
        }
        if let Some(ans) = &leader_output.extracted_answer {
            self.final_answer = ans.clone();
        }
        self.rounds.push(Round {
            agents: agent_responses,
            leader: leader_output,
        });
        Ok(self)
    }

    /// Rebuild a transcript from previously persisted rounds (resume path).
    pub fn from_rounds(
        task: &Task,
        team_spec: Vec<String>,
        info_mode: InfoMode,
        t: usize,
        rounds: Vec<Round>,
    ) -> Result<Self> {
        let mut transcript = Transcript::new(task, team_spec, info_mode, t)?;
        for round in rounds {
            transcript = transcript.append_round(round.agents, round.leader)?;
        }
        Ok(transcript)
    }

    /// Resolve the final answer: the most recent round with a parseable
    /// leader answer, or [`UNPARSED_ANSWER`] when no round has one.
    pub fn resolve_final_answer(mut self) -> Self {
        let resolved = self
            .rounds
            .iter()
            .rev()
            .find_map(|r| r.leader.extracted_answer.clone());
        self.final_answer = resolved.unwrap_or_else(|| UNPARSED_ANSWER.to_string());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> Task {
        Task::new("t1", "What is 2+2?", "4", TaskKind::MathExpression).unwrap()
    }

    fn agent_resp(agent_index: usize, round: usize) -> AgentResponse {
        AgentResponse {
            agent_index,
            round,
            raw_text: format!("agent {agent_index} round {round}"),
            extracted_answer: Some("4".into()),
            correct: Some(true),
        }
    }

    fn leader_out(round: usize, answer: Option<&str>) -> LeaderOutput {
        LeaderOutput {
            round,
            raw_text: "<think>x</think><answer>4</answer>".into(),
            think_block: Some("x".into()),
            answer_block: Some("4".into()),
            extracted_answer: answer.map(str::to_string),
            format_ok: true,
            correct: Some(true),
        }
    }

    #[test]
    fn new_transcript_starts_empty() {
        let t = Transcript::new(
            &task(),
            vec!["a".into(), "b".into(), "c".into()],
            InfoMode::Full,
            5,
        )
        .unwrap();
        assert!(t.rounds.is_empty());
        assert_eq!(t.team_size(), 3);
        assert_eq!(t.capacity(), 5);
    }

    #[test]
    fn empty_team_rejected() {
        let err = Transcript::new(&task(), vec![], InfoMode::Full, 5).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_rounds_rejected() {
        let err = Transcript::new(&task(), vec!["a".into()], InfoMode::Full, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn degenerate_single_agent_single_round() {
        let t = Transcript::new(&task(), vec!["a".into()], InfoMode::AnswerOnly, 1).unwrap();
        let t = t
            .append_round(vec![agent_resp(0, 0)], leader_out(0, Some("4")))
            .unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.final_answer, "4");
    }

    #[test]
    fn append_round_grows_and_updates_final_answer() {
        let t = Transcript::new(
            &task(),
            vec!["a".into(), "b".into(), "c".into()],
            InfoMode::Full,
            5,
        )
        .unwrap();
        let t = t
            .append_round(
                vec![agent_resp(0, 0), agent_resp(1, 0), agent_resp(2, 0)],
                leader_out(0, Some("4")),
            )
            .unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.final_answer, "4");
    }

    #[test]
    fn wrong_response_count_rejected() {
        let t = Transcript::new(
            &task(),
            vec!["a".into(), "b".into(), "c".into()],
            InfoMode::Full,
            5,
        )
        .unwrap();
        let err = t
            .append_round(vec![agent_resp(0, 0), agent_resp(1, 0)], leader_out(0, None))
            .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn skipped_round_index_rejected() {
        let t = Transcript::new(&task(), vec!["a".into()], InfoMode::Full, 5).unwrap();
        let err = t
            .append_round(vec![agent_resp(0, 2)], leader_out(2, None))
            .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn round_indices_are_contiguous() {
        let mut t = Transcript::new(&task(), vec!["a".into()], InfoMode::Full, 3).unwrap();
        for round in 0..3 {
            t = t
                .append_round(vec![agent_resp(0, round)], leader_out(round, Some("4")))
                .unwrap();
        }
        for (i, round) in t.rounds.iter().enumerate() {
            assert_eq!(round.leader.round, i);
            assert_eq!(round.agents[0].round, i);
        }
    }

    #[test]
    fn final_answer_falls_back_to_last_parseable_round() {
        let mut t = Transcript::new(&task(), vec!["a".into()], InfoMode::Full, 3).unwrap();
        t = t
            .append_round(vec![agent_resp(0, 0)], leader_out(0, Some("4")))
            .unwrap();
        t = t
            .append_round(vec![agent_resp(0, 1)], leader_out(1, None))
            .unwrap();
        let t = t.resolve_final_answer();
        assert_eq!(t.final_answer, "4");
    }

    #[test]
    fn final_answer_unparsed_when_nothing_parses() {
        let mut t = Transcript::new(&task(), vec!["a".into()], InfoMode::Full, 1).unwrap();
        t = t
            .append_round(vec![agent_resp(0, 0)], leader_out(0, None))
            .unwrap();
        let t = t.resolve_final_answer();
        assert_eq!(t.final_answer, UNPARSED_ANSWER);
    }

    #[test]
    fn transcript_jsonl_shape_is_stable() {
        let t = Transcript::new(&task(), vec!["a".into()], InfoMode::Full, 1)
            .unwrap()
            .append_round(vec![agent_resp(0, 0)], leader_out(0, Some("4")))
            .unwrap();
        // Serialized bytes carry exactly these top-level fields in struct
        // order; rounds hold {agents: [...], leader: {...}} objects.
        let line = serde_json::to_string(&t).unwrap();
        let positions: Vec<usize> = ["task_id", "team_spec", "info_mode", "rounds", "final_answer"]
            .iter()
            .map(|field| line.find(&format!("\"{field}\":")).expect(field))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "field order in {line}");
        let json: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 5);
        assert!(json["rounds"][0]["agents"].is_array());
        assert!(json["rounds"][0]["leader"].is_object());

        let back: Transcript = serde_json::from_str(&line).unwrap();
        assert_eq!(back, t);
    }
}
