//! Run configuration: a strict TOML file validated before any network call.
//!
//! Unknown keys are rejected (naming the key), and semantic validation
//! reports every violation, not just the first. The file's SHA-256 hash is
//! recorded in every output manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mlpo_core::backends::{BackendSpec, SyntheticAgentParams};
use mlpo_core::datagen::OrderMode;
use mlpo_core::evalkit::VoteSource;
use mlpo_core::model::InfoMode;
use mlpo_core::orchestrator::EpisodeConfig;
use mlpo_core::sim::LeaderRule;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub episode: Option<EpisodeConfig>,
    #[serde(default)]
    pub datagen: DatagenSection,
    #[serde(default)]
    pub mlpo_plus: MlpoPlusSection,
    #[serde(default)]
    pub vote: VoteSection,
    #[serde(default)]
    pub train_toy: TrainToySection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Completion-cache directory (content-addressed files).
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Prompt-template override directory.
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    /// Force one dataset flavor regardless of task kind.
    #[serde(default)]
    pub prompt_flavor: Option<String>,
}

fn default_workers() -> usize {
    8
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            workers: default_workers(),
            cache_dir: None,
            template_dir: None,
            prompt_flavor: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenSection {
    /// Independent solutions sampled per agent per task.
    #[serde(default = "default_per_agent")]
    pub per_agent: usize,
    /// Training prompts built per kept task.
    #[serde(default = "default_n_sets")]
    pub n_sets: usize,
    /// Drop tasks whose correct-response fraction reaches this value.
    #[serde(default = "default_easy_threshold")]
    pub easy_threshold: f64,
    #[serde(default = "default_order")]
    pub order: OrderMode,
    #[serde(default = "default_info_mode")]
    pub info_mode: InfoMode,
    /// Leader samples per prompt for SFT generation.
    #[serde(default = "default_n_leader_samples")]
    pub n_leader_samples: usize,
    #[serde(default = "default_backtrack_retries")]
    pub backtrack_retries: usize,
    /// Backtracker backend; defaults to the episode leader backend.
    #[serde(default)]
    pub backtracker_backend: Option<BackendSpec>,
}

fn default_per_agent() -> usize {
    4
}
fn default_n_sets() -> usize {
    4
}
fn default_easy_threshold() -> f64 {
    0.75
}
fn default_order() -> OrderMode {
    OrderMode::Grouped
}
fn default_info_mode() -> InfoMode {
    InfoMode::Full
}
fn default_n_leader_samples() -> usize {
    16
}
fn default_backtrack_retries() -> usize {
    4
}

impl Default for DatagenSection {
    fn default() -> Self {
        DatagenSection {
            per_agent: default_per_agent(),
            n_sets: default_n_sets(),
            easy_threshold: default_easy_threshold(),
            order: default_order(),
            info_mode: default_info_mode(),
            n_leader_samples: default_n_leader_samples(),
            backtrack_retries: default_backtrack_retries(),
            backtracker_backend: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MlpoPlusSection {
    #[serde(default = "default_rounds_used")]
    pub rounds_used: Vec<usize>,
    #[serde(default = "default_sets_per_round")]
    pub sets_per_round: usize,
    #[serde(default = "default_acc_threshold")]
    pub acc_threshold: f64,
    #[serde(default = "default_episodes_per_task")]
    pub episodes_per_task: usize,
}

fn default_rounds_used() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_sets_per_round() -> usize {
    2
}
fn default_acc_threshold() -> f64 {
    0.5
}
fn default_episodes_per_task() -> usize {
    8
}

impl Default for MlpoPlusSection {
    fn default() -> Self {
        MlpoPlusSection {
            rounds_used: default_rounds_used(),
            sets_per_round: default_sets_per_round(),
            acc_threshold: default_acc_threshold(),
            episodes_per_task: default_episodes_per_task(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VoteSection {
    #[serde(default = "default_total_generations")]
    pub total_generations: usize,
    #[serde(default = "default_vote_source")]
    pub vote_source: VoteSource,
}

fn default_total_generations() -> usize {
    40
}
fn default_vote_source() -> VoteSource {
    VoteSource::LeaderFinal
}

impl Default for VoteSection {
    fn default() -> Self {
        VoteSection {
            total_generations: default_total_generations(),
            vote_source: default_vote_source(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TrainToySection {
    #[serde(default = "default_agent_accuracies")]
    pub agent_accuracies: Vec<f64>,
    #[serde(default = "default_own_accuracy")]
    pub own_accuracy: f64,
    #[serde(default)]
    pub conditioned: bool,
    #[serde(default)]
    pub multi_token: bool,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
}

fn default_agent_accuracies() -> Vec<f64> {
    vec![0.9, 0.5, 0.5]
}
fn default_own_accuracy() -> f64 {
    0.2
}
fn default_steps() -> usize {
    2000
}
fn default_group_size() -> usize {
    8
}
fn default_epsilon() -> f64 {
    0.2
}
fn default_learning_rate() -> f64 {
    0.5
}
fn default_max_seq_len() -> usize {
    4
}

impl Default for TrainToySection {
    fn default() -> Self {
        TrainToySection {
            agent_accuracies: default_agent_accuracies(),
            own_accuracy: default_own_accuracy(),
            conditioned: false,
            multi_token: false,
            steps: default_steps(),
            group_size: default_group_size(),
            epsilon: default_epsilon(),
            learning_rate: default_learning_rate(),
            momentum: 0.0,
            max_seq_len: default_max_seq_len(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    pub p_correct_round0: f64,
    pub adopt_leader_prob: f64,
    pub p_correct_given_retry: f64,
    /// First entry is the gold answer.
    pub answer_space: Vec<String>,
    #[serde(default = "default_leader_rule")]
    pub leader_rule: LeaderRule,
}

fn default_k() -> usize {
    3
}
fn default_t() -> usize {
    5
}
fn default_episodes() -> usize {
    2000
}
fn default_leader_rule() -> LeaderRule {
    LeaderRule::CopyMajority
}

impl SimulateSection {
    pub fn agent_params(&self) -> SyntheticAgentParams {
        SyntheticAgentParams {
            p_correct_round0: self.p_correct_round0,
            adopt_leader_prob: self.adopt_leader_prob,
            p_correct_given_retry: self.p_correct_given_retry,
            answer_space: self.answer_space.clone(),
        }
    }
}

impl RunConfig {
    /// Collect every semantic violation.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.run.workers == 0 {
            problems.push("run.workers must be at least 1".into());
        }
        if let Some(episode) = &self.episode {
            problems.extend(episode.validate());
        }
        if self.datagen.per_agent == 0 {
            problems.push("datagen.per_agent must be at least 1".into());
        }
        if self.datagen.n_sets == 0 {
            problems.push("datagen.n_sets must be at least 1".into());
        }
        if self.datagen.n_sets > self.datagen.per_agent {
            problems.push(format!(
                "datagen.n_sets ({}) cannot exceed datagen.per_agent ({})",
                self.datagen.n_sets, self.datagen.per_agent
            ));
        }
        if !(0.0..=1.0).contains(&self.datagen.easy_threshold) {
            problems.push("datagen.easy_threshold must lie in [0, 1]".into());
        }
        if self.datagen.n_leader_samples == 0 {
            problems.push("datagen.n_leader_samples must be at least 1".into());
        }
        if let Some(spec) = &self.datagen.backtracker_backend {
            problems.extend(spec.validate());
        }
        if self.mlpo_plus.rounds_used.is_empty() {
            problems.push("mlpo_plus.rounds_used must not be empty".into());
        }
        if self.mlpo_plus.sets_per_round == 0 {
            problems.push("mlpo_plus.sets_per_round must be at least 1".into());
        }
        if self.mlpo_plus.episodes_per_task < self.mlpo_plus.sets_per_round {
            problems.push("mlpo_plus.episodes_per_task must be at least sets_per_round".into());
        }
        if !(0.0..=1.0).contains(&self.mlpo_plus.acc_threshold) {
            problems.push("mlpo_plus.acc_threshold must lie in [0, 1]".into());
        }
        if self.vote.total_generations == 0 {
            problems.push("vote.total_generations must be at least 1".into());
        }
        let toy = &self.train_toy;
        if toy.agent_accuracies.is_empty() {
            problems.push("train_toy.agent_accuracies must not be empty".into());
        }
        for p in toy.agent_accuracies.iter().chain([&toy.own_accuracy]) {
            if !(0.0..=1.0).contains(p) {
                problems.push(format!("train_toy probability {p} outside [0, 1]"));
            }
        }
        if toy.steps == 0 {
            problems.push("train_toy.steps must be at least 1".into());
        }
        if toy.group_size < 2 {
            problems.push("train_toy.group_size must be at least 2".into());
        }
        if !(toy.epsilon > 0.0 && toy.epsilon < 1.0) {
            problems.push("train_toy.epsilon must lie in (0, 1)".into());
        }
        if let Some(sim) = &self.simulate {
            if sim.k == 0 {
                problems.push("simulate.k must be at least 1".into());
            }
            if sim.t == 0 {
                problems.push("simulate.t must be at least 1".into());
            }
            if sim.episodes == 0 {
                problems.push("simulate.episodes must be at least 1".into());
            }
            if let Err(e) = sim.agent_params().validate() {
                problems.push(format!("simulate: {e}"));
            }
            if let LeaderRule::CopyAgent(idx) = sim.leader_rule {
                if idx >= sim.k {
                    problems.push(format!(
                        "simulate.leader_rule copies agent {idx} but k = {}",
                        sim.k
                    ));
                }
            }
        }
        problems
    }

    /// The episode section, required by inference and data commands.
    pub fn episode_required(&self) -> anyhow::Result<&EpisodeConfig> {
        self.episode
            .as_ref()
            .context("this command requires an [episode] section in the config")
    }

    pub fn simulate_required(&self) -> anyhow::Result<&SimulateSection> {
        self.simulate
            .as_ref()
            .context("this command requires a [simulate] section in the config")
    }
}

/// Parse and fully validate a config file; returns the config and its hash.
pub fn parse_config(path: &Path) -> anyhow::Result<(RunConfig, String)> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig = toml::from_str(&raw)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let problems = config.validate();
    if !problems.is_empty() {
        bail!(
            "configuration invalid ({} problem(s)):\n  - {}",
            problems.len(),
            problems.join("\n  - ")
        );
    }
    let hash = hex(&Sha256::digest(raw.as_bytes()));
    Ok((config, hash))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build the prompt library a config describes.
pub fn prompt_library(config: &RunConfig) -> anyhow::Result<mlpo_core::prompt::PromptLibrary> {
    let mut library = mlpo_core::prompt::PromptLibrary::builtin();
    if let Some(dir) = &config.run.template_dir {
        library = library.with_dir(dir)?;
    }
    if let Some(flavor) = &config.run.prompt_flavor {
        library = library.with_flavor(flavor.clone());
    }
    Ok(library)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let (_dir, path) = write_config("");
        let (config, hash) = parse_config(&path).unwrap();
        assert_eq!(config.datagen.n_sets, 4);
        assert_eq!(config.datagen.per_agent, 4);
        assert!((config.datagen.easy_threshold - 0.75).abs() < 1e-15);
        assert_eq!(config.vote.total_generations, 40);
        assert_eq!(config.mlpo_plus.rounds_used, vec![0, 1, 2]);
        assert_eq!(config.mlpo_plus.sets_per_round, 2);
        assert_eq!(hash.len(), 64);
    }

    #[test]
    fn episode_default_t_is_five() {
        let (_dir, path) = write_config(
            r#"
[episode]
[episode.leader_backend]
kind = "scripted"
model_name = "lead"
script_path = "lead.jsonl"
[[episode.agent_backends]]
kind = "scripted"
model_name = "a0"
script_path = "a0.jsonl"
"#,
        );
        let (config, _) = parse_config(&path).unwrap();
        assert_eq!(config.episode.unwrap().t, 5);
    }

    #[test]
    fn unknown_key_is_named() {
        let (_dir, path) = write_config("[episode]\ntemprature = 0.7\n");
        let err = format!("{:#}", parse_config(&path).unwrap_err());
        assert!(err.contains("temprature"), "error was: {err}");
    }

    #[test]
    fn zero_rounds_rejected() {
        let (_dir, path) = write_config(
            r#"
[episode]
t = 0
[episode.leader_backend]
kind = "scripted"
model_name = "lead"
script_path = "lead.jsonl"
[[episode.agent_backends]]
kind = "scripted"
model_name = "a0"
script_path = "a0.jsonl"
"#,
        );
        let err = format!("{:#}", parse_config(&path).unwrap_err());
        assert!(err.contains("t must be at least 1"), "error was: {err}");
    }

    #[test]
    fn every_violation_is_reported() {
        let (_dir, path) = write_config(
            r#"
[run]
workers = 0
[datagen]
per_agent = 0
n_sets = 0
[train_toy]
steps = 0
group_size = 1
"#,
        );
        let err = format!("{:#}", parse_config(&path).unwrap_err());
        for needle in [
            "run.workers",
            "datagen.per_agent",
            "datagen.n_sets",
            "train_toy.steps",
            "train_toy.group_size",
        ] {
            assert!(err.contains(needle), "missing {needle} in: {err}");
        }
    }

    #[test]
    fn shipped_example_configs_stay_valid() {
        let configs_dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs");
        let mut checked = 0;
        for entry in std::fs::read_dir(configs_dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                parse_config(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
                checked += 1;
            }
        }
        assert!(checked >= 3, "expected the shipped example configs");
    }

    #[test]
    fn simulate_section_parses_leader_rules() {
        let (_dir, path) = write_config(
            r#"
[simulate]
p_correct_round0 = 0.5
adopt_leader_prob = 0.9
p_correct_given_retry = 0.5
answer_space = ["A", "B"]
leader_rule = { copy_agent = 1 }
"#,
        );
        let (config, _) = parse_config(&path).unwrap();
        let sim = config.simulate.unwrap();
        assert_eq!(sim.leader_rule, LeaderRule::CopyAgent(1));
        assert_eq!(sim.k, 3);
        assert_eq!(sim.t, 5);
    }
}
