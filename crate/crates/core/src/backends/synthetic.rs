//! Synthetic stochastic agents for team-dynamics simulation.
//!
//! An agent answers the gold answer with a configured probability at round
//! 0; in later rounds it adopts the leader's previous answer with some
//! probability, otherwise it retries with a (usually different) accuracy.
//! Randomness derives from a hash of (backend seed, prompt), so outputs are
//! bit-identical across runs and across concurrent scheduling orders.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{Backend, ChatMessage, Generation, SamplingParams};
use crate::error::{Error, Result};
use crate::extract;

/// Behavior of one synthetic agent.
///
/// `answer_space[0]` is the gold answer; the remaining entries are the wrong
/// answers an incorrect draw picks uniformly from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticAgentParams {
    pub p_correct_round0: f64,
    pub adopt_leader_prob: f64,
    pub p_correct_given_retry: f64,
    pub answer_space: Vec<String>,
}

impl SyntheticAgentParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_correct_round0", self.p_correct_round0),
            ("adopt_leader_prob", self.adopt_leader_prob),
            ("p_correct_given_retry", self.p_correct_given_retry),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.answer_space.len() < 2 {
            return Err(Error::Config(
                "answer_space needs the gold answer plus at least one wrong answer".into(),
            ));
        }
        let gold = &self.answer_space[0];
        if self.answer_space[1..].iter().any(|a| a == gold) {
            return Err(Error::Config(
                "answer_space must contain the gold answer exactly once".into(),
            ));
        }
        Ok(())
    }

    pub fn gold(&self) -> &str {
        &self.answer_space[0]
    }

    fn wrong_answers(&self) -> &[String] {
        &self.answer_space[1..]
    }
}

/// One synthetic-agent decision.
///
/// Round 0 answers gold with `p_correct_round0`, otherwise a uniform wrong
/// answer. Rounds >= 1 copy `leader_prev_answer` with `adopt_leader_prob`,
/// otherwise resample with `p_correct_given_retry`.
pub fn synthetic_agent_step(
    params: &SyntheticAgentParams,
    round: usize,
    leader_prev_answer: Option<&str>,
    rng: &mut impl Rng,
) -> Result<String> {
    params.validate()?;
    let draw_fresh = |rng: &mut dyn rand::RngCore, p_correct: f64| {
        if rng.random::<f64>() < p_correct {
            params.gold().to_string()
        } else {
            let wrong = params.wrong_answers();
            wrong[rng.random_range(0..wrong.len())].clone()
        }
    };
    if round == 0 {
        return Ok(draw_fresh(rng, params.p_correct_round0));
    }
    let leader_prev = leader_prev_answer.ok_or_else(|| {
        Error::Protocol(format!(
            "synthetic agent at round {round} requires the previous leader answer"
        ))
    })?;
    if rng.random::<f64>() < params.adopt_leader_prob {
        Ok(leader_prev.to_string())
    } else {
        Ok(draw_fresh(rng, params.p_correct_given_retry))
    }
}

/// Backend wrapper deriving the round and previous leader answer from the
/// rendered prompt sections.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    name: String,
    params: SyntheticAgentParams,
    seed: u64,
}

impl SyntheticBackend {
    pub fn new(name: impl Into<String>, params: SyntheticAgentParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(SyntheticBackend {
            name: name.into(),
            params,
            seed,
        })
    }

    fn rng_for(&self, prompt: &str, params: &SamplingParams) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(params.seed.unwrap_or(0).to_le_bytes());
        hasher.update(self.name.as_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

/// Section marker distinguishing follow-up prompts from round-0 prompts.
const PREV_SOLUTION_MARKER: &str = "Your previous solution:";
const AGGREGATOR_MARKER: &str = "The aggregator's output:";

impl Backend for SyntheticBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete_chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<Generation>> {
        let prompt = messages
            .last()
            .ok_or_else(|| Error::Protocol("complete_chat with no messages".into()))?
            .content
            .as_str();
        let is_followup = prompt.contains(PREV_SOLUTION_MARKER);
        let leader_answer = if is_followup {
            let section = prompt
                .split(AGGREGATOR_MARKER)
                .nth(1)
                .ok_or_else(|| Error::Protocol("follow-up prompt lacks aggregator section".into()))?;
            let section = section.split("*** Plan:").next().unwrap_or(section);
            extract::extract_boxed(section)
        } else {
            None
        };
        let round = usize::from(is_followup);
        let mut rng = self.rng_for(prompt, params);
        let mut generations = Vec::with_capacity(params.n as usize);
        for _ in 0..params.n {
            let answer =
                synthetic_agent_step(&self.params, round, leader_answer.as_deref(), &mut rng)?;
            generations.push(Generation::text(format!(
                "I worked through the problem step by step.\nTherefore, the final answer is: $\\boxed{{{answer}}}$."
            )));
        }
        Ok(generations)
    }
}
