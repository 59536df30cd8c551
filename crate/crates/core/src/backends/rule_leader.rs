//! Deterministic rule-based leader for simulation runs.
//!
//! The rule leader plays by the same interface as any other backend: it
//! parses the agent blocks out of the rendered leader prompt, extracts each
//! block's boxed answer, applies its rule, and emits a well-formed
//! `<think>`/`<answer>` completion. Tie-breaking is shared with the chain
//! enumerator via [`majority_winner`].

use once_cell::sync::Lazy;
use regex::Regex;

use crate::backends::{Backend, ChatMessage, Generation, SamplingParams};
use crate::error::{Error, Result};
use crate::extract;
use crate::sim::{majority_winner, LeaderRule};

static AGENT_BLOCK: Lazy<Regex> = Lazy::new(|| Regex::new(r"Agent \d+ Response: ").unwrap());
/// The instruction coda that follows the last agent block in the leader
/// prompt.
const BLOCKS_END: &str = "Please complete the following two blocks";

#[derive(Debug, Clone)]
pub struct RuleLeaderBackend {
    name: String,
    rule: LeaderRule,
    gold: String,
}

impl RuleLeaderBackend {
    pub fn new(name: impl Into<String>, rule: LeaderRule, gold: impl Into<String>) -> Self {
        RuleLeaderBackend {
            name: name.into(),
            rule,
            gold: gold.into(),
        }
    }

    fn decide(&self, prompt: &str) -> Result<String> {
        if matches!(self.rule, LeaderRule::AlwaysGold) {
            return Ok(self.gold.clone());
        }
        let mut votes: Vec<String> = Vec::new();
        let matches: Vec<_> = AGENT_BLOCK.find_iter(prompt).collect();
        for (i, m) in matches.iter().enumerate() {
            let start = m.end();
            let end = matches
                .get(i + 1)
                .map(|next| next.start())
                .or_else(|| prompt[start..].find(BLOCKS_END).map(|off| start + off))
                .unwrap_or(prompt.len());
            let block = &prompt[start..end];
            votes.push(extract::extract_boxed(block).unwrap_or_default());
        }
        if votes.is_empty() {
            return Err(Error::Protocol(
                "rule leader found no agent blocks in its prompt".into(),
            ));
        }
        match self.rule {
            LeaderRule::CopyMajority => Ok(majority_winner(&votes).unwrap()),
            LeaderRule::CopyAgent(k) => votes.get(k).cloned().ok_or_else(|| {
                Error::Protocol(format!(
                    "rule leader copies agent {k} but the prompt has {} blocks",
                    votes.len()
                ))
            }),
            LeaderRule::AlwaysGold => unreachable!(),
        }
    }
}

impl Backend for RuleLeaderBackend {
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
        let answer = self.decide(prompt)?;
        let text = format!(
            "<think>Compared the agent responses and selected the consensus answer.</think>\n<answer>Therefore, the final answer is: $\\boxed{{{answer}}}$</answer>"
        );
        Ok(vec![Generation::text(text); params.n as usize])
    }
}
