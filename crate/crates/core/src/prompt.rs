//! Prompt rendering for the four prompt families (agent round-0, agent
//! follow-up, leader aggregation, backtracking generation) plus the
//! leader-alone zero-shot variant.
//!
//! Templates are external UTF-8 text files with `{{name}}` placeholders;
//! the shipped defaults are embedded at compile time. Rendering is pure:
//! equal inputs produce byte-equal outputs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::extract;
use crate::model::{InfoMode, Task, TaskKind};

/// The prompt families understood by the pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptFamily {
    AgentRound0,
    AgentFollowup,
    Leader,
    Backtracking,
    ZeroShot,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 5] = [
        PromptFamily::AgentRound0,
        PromptFamily::AgentFollowup,
        PromptFamily::Leader,
        PromptFamily::Backtracking,
        PromptFamily::ZeroShot,
    ];

    fn file_name(self) -> &'static str {
        match self {
            PromptFamily::AgentRound0 => "agent_round0.txt",
            PromptFamily::AgentFollowup => "agent_followup.txt",
            PromptFamily::Leader => "leader.txt",
            PromptFamily::Backtracking => "backtracking.txt",
            PromptFamily::ZeroShot => "zero_shot.txt",
        }
    }
}

/// One flavor's template set.
#[derive(Debug, Clone)]
struct FlavorTemplates {
    agent_round0: String,
    agent_followup: String,
    leader: String,
    backtracking: String,
    zero_shot: String,
}

impl FlavorTemplates {
    fn get(&self, family: PromptFamily) -> &str {
        match family {
            PromptFamily::AgentRound0 => &self.agent_round0,
            PromptFamily::AgentFollowup => &self.agent_followup,
            PromptFamily::Leader => &self.leader,
            PromptFamily::Backtracking => &self.backtracking,
            PromptFamily::ZeroShot => &self.zero_shot,
        }
    }
}

macro_rules! builtin_flavor {
    ($dir:literal) => {
        FlavorTemplates {
            agent_round0: include_str!(concat!("../templates/", $dir, "/agent_round0.txt"))
                .trim_end()
                .to_string(),
            agent_followup: include_str!(concat!("../templates/", $dir, "/agent_followup.txt"))
                .trim_end()
                .to_string(),
            leader: include_str!(concat!("../templates/", $dir, "/leader.txt"))
                .trim_end()
                .to_string(),
            backtracking: include_str!(concat!("../templates/", $dir, "/backtracking.txt"))
                .trim_end()
                .to_string(),
            zero_shot: include_str!(concat!("../templates/", $dir, "/zero_shot.txt"))
                .trim_end()
                .to_string(),
        }
    };
}

/// Registry of prompt templates, keyed by dataset flavor.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    flavors: BTreeMap<String, FlavorTemplates>,
    flavor_override: Option<String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    /// Library with the shipped flavors: `math`, `multiple_choice`, `general`.
    pub fn builtin() -> Self {
        let mut flavors = BTreeMap::new();
        flavors.insert("math".to_string(), builtin_flavor!("math"));
        flavors.insert(
            "multiple_choice".to_string(),
            builtin_flavor!("multiple_choice"),
        );
        flavors.insert("general".to_string(), builtin_flavor!("general"));
        PromptLibrary {
            flavors,
            flavor_override: None,
        }
    }

    /// Load template overrides from `<dir>/<flavor>/<family>.txt` on top of
    /// the shipped defaults.
    pub fn with_dir(mut self, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let flavor = entry.file_name().to_string_lossy().to_string();
            let mut templates = self
                .flavors
                .get(&flavor)
                .cloned()
                .unwrap_or_else(|| builtin_flavor!("general"));
            for family in PromptFamily::ALL {
                let path = entry.path().join(family.file_name());
                if path.exists() {
                    let body = std::fs::read_to_string(&path)?.trim_end().to_string();
                    match family {
                        PromptFamily::AgentRound0 => templates.agent_round0 = body,
                        PromptFamily::AgentFollowup => templates.agent_followup = body,
                        PromptFamily::Leader => templates.leader = body,
                        PromptFamily::Backtracking => templates.backtracking = body,
                        PromptFamily::ZeroShot => templates.zero_shot = body,
                    }
                }
            }
            self.flavors.insert(flavor, templates);
        }
        Ok(self)
    }

    /// Force one flavor for every task regardless of task kind.
    pub fn with_flavor(mut self, flavor: impl Into<String>) -> Self {
        self.flavor_override = Some(flavor.into());
        self
    }

    fn flavor_for(&self, task: &Task) -> Result<&FlavorTemplates> {
        let name = match &self.flavor_override {
            Some(f) => f.as_str(),
            None => match task.task_kind {
                TaskKind::MathExpression => "math",
                TaskKind::MultipleChoice => "multiple_choice",
                TaskKind::ExactString => "general",
            },
        };
        self.flavors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown dataset flavor: {name}")))
    }

    /// Round-0 prompt for agent `agent_index` in a team of `k`.
    pub fn render_agent_round0(&self, task: &Task, agent_index: usize, k: usize) -> Result<String> {
        if agent_index >= k {
            return Err(Error::Protocol(format!(
                "agent index {agent_index} out of range for team of {k}"
            )));
        }
        let templates = self.flavor_for(task)?;
        render(
            templates.get(PromptFamily::AgentRound0),
            &[
                ("team_size", &k.to_string()),
                ("agent_number", &(agent_index + 1).to_string()),
                ("question", &task.question),
            ],
        )
    }

    /// Follow-up prompt: the agent's previous solution plus the aggregator's
    /// output from the previous round.
    pub fn render_agent_followup(
        &self,
        task: &Task,
        agent_index: usize,
        k: usize,
        prev_solution: &str,
        leader_output_text: &str,
    ) -> Result<String> {
        if agent_index >= k {
            return Err(Error::Protocol(format!(
                "agent index {agent_index} out of range for team of {k}"
            )));
        }
        if prev_solution.is_empty() {
            return Err(Error::Protocol(
                "follow-up prompt requires the agent's previous solution".into(),
            ));
        }
        if leader_output_text.is_empty() {
            return Err(Error::Protocol(
                "follow-up prompt requires the previous leader output".into(),
            ));
        }
        let templates = self.flavor_for(task)?;
        render(
            templates.get(PromptFamily::AgentFollowup),
            &[
                ("team_size", &k.to_string()),
                ("agent_number", &(agent_index + 1).to_string()),
                ("question", &task.question),
                ("previous_solution", prev_solution),
                ("aggregator_response", leader_output_text),
            ],
        )
    }

    /// Leader aggregation prompt over round-t agent responses.
    ///
    /// A function of (task, responses, info mode) only: no round index and no
    /// earlier-round material enters the prompt.
    pub fn render_leader(
        &self,
        task: &Task,
        agent_responses: &[String],
        info_mode: InfoMode,
    ) -> Result<String> {
        if agent_responses.is_empty() {
            return Err(Error::Protocol(
                "leader prompt requires at least one agent response".into(),
            ));
        }
        let blocks = agent_responses
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let content = project_response(text, info_mode);
                format!("Agent {} Response: {}", i + 1, content)
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let templates = self.flavor_for(task)?;
        render(
            templates.get(PromptFamily::Leader),
            &[("question", &task.question), ("agent_blocks", &blocks)],
        )
    }

    /// Backtracking-generation prompt pairing an incorrect and a correct
    /// reasoning trace.
    pub fn render_backtracking(
        &self,
        task: &Task,
        agent_responses: &[String],
        incorrect_think: &str,
        correct_think: &str,
    ) -> Result<String> {
        if incorrect_think.trim().is_empty() || correct_think.trim().is_empty() {
            return Err(Error::Data(
                "backtracking prompt requires non-empty think blocks".into(),
            ));
        }
        if incorrect_think == correct_think {
            return Err(Error::Data(
                "backtracking pair has identical think blocks (pairing bug)".into(),
            ));
        }
        let blocks = agent_responses
            .iter()
            .enumerate()
            .map(|(i, text)| format!("Agent {} response:\n{}", i + 1, text))
            .collect::<Vec<_>>()
            .join("\n\n");
        let templates = self.flavor_for(task)?;
        render(
            templates.get(PromptFamily::Backtracking),
            &[
                ("question", &task.question),
                ("agent_blocks", &blocks),
                ("incorrect_think", incorrect_think),
                ("correct_think", correct_think),
            ],
        )
    }

    /// Round-0 style prompt adapted for the leader answering alone.
    pub fn render_zero_shot(&self, task: &Task) -> Result<String> {
        let templates = self.flavor_for(task)?;
        render(
            templates.get(PromptFamily::ZeroShot),
            &[("question", &task.question)],
        )
    }
}

/// Project one agent response according to the information-sharing mode.
fn project_response(text: &str, info_mode: InfoMode) -> String {
    match info_mode {
        InfoMode::Full => text.to_string(),
        InfoMode::ReasoningOnly => extract::strip_final_answer_sentences(text),
        InfoMode::AnswerOnly => match extract::final_answer_line(text) {
            Some(line) => line.to_string(),
            None => match extract::extract_boxed(text) {
                Some(payload) => {
                    format!("Therefore, the final answer is: $\\boxed{{{payload}}}$.")
                }
                None => "(no final answer found)".to_string(),
            },
        },
    }
}

/// Substitute `{{name}}` placeholders. Every placeholder in the template must
/// have a binding; placeholders are located in the template only, so braces
/// inside substituted content are never re-interpreted.
fn render(template: &str, bindings: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(Error::Config("unterminated {{placeholder}} in template".into()));
        };
        let name = &after[..end];
        let value = bindings
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Config(format!("template placeholder {{{{{name}}}}} has no binding")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
