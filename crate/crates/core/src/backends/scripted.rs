//! Deterministic scripted backend: prompt hash -> fixed response list.
//!
//! Script files are JSONL; each line carries either the prompt text or its
//! precomputed hash:
//!
//! ```text
//! {"prompt": "...", "responses": ["...", "..."]}
//! {"prompt_sha256": "<hex>", "responses": ["..."]}
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{hex, Backend, ChatMessage, Generation, SamplingParams};
use crate::error::{Error, Result};
use crate::jsonl;

/// Key a scripted entry by the full message list.
pub fn script_key(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages always serialize");
    hex(&Sha256::digest(&bytes))
}

/// Key for the common single-user-message case.
pub fn prompt_key(prompt: &str) -> String {
    script_key(&[ChatMessage::user(prompt)])
}

#[derive(Debug, Serialize, Deserialize)]
struct ScriptLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_sha256: Option<String>,
    responses: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    name: String,
    entries: HashMap<String, Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>) -> Self {
        ScriptedBackend {
            name: name.into(),
            entries: HashMap::new(),
        }
    }

    pub fn from_file(name: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let mut backend = ScriptedBackend::new(name);
        for line in jsonl::read_jsonl::<ScriptLine>(path)? {
            let key = match (&line.prompt, &line.prompt_sha256) {
                (Some(prompt), _) => prompt_key(prompt),
                (None, Some(hash)) => hash.clone(),
                (None, None) => {
                    return Err(Error::Data(
                        "script line needs either prompt or prompt_sha256".into(),
                    ))
                }
            };
            backend.entries.insert(key, line.responses);
        }
        Ok(backend)
    }

    /// Script `responses` for a single-user-message prompt.
    pub fn add_prompt(&mut self, prompt: &str, responses: Vec<String>) -> &mut Self {
        self.entries.insert(prompt_key(prompt), responses);
        self
    }

    pub fn add_messages(&mut self, messages: &[ChatMessage], responses: Vec<String>) -> &mut Self {
        self.entries.insert(script_key(messages), responses);
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Persist the script as hash-keyed JSONL.
    pub fn to_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut lines: Vec<ScriptLine> = self
            .entries
            .iter()
            .map(|(key, responses)| ScriptLine {
                prompt: None,
                prompt_sha256: Some(key.clone()),
                responses: responses.clone(),
            })
            .collect();
        lines.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        jsonl::write_jsonl(&lines, path)
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete_chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<Generation>> {
        if messages.is_empty() {
            return Err(Error::Protocol("complete_chat with no messages".into()));
        }
        let key = script_key(messages);
        let responses = self.entries.get(&key).ok_or_else(|| {
            let preview: String = messages
                .last()
                .map(|m| m.content.chars().take(80).collect())
                .unwrap_or_default();
            Error::Data(format!(
                "scripted backend {} has no entry for prompt hash {key} (prompt starts: {preview:?})",
                self.name
            ))
        })?;
        let n = params.n as usize;
        if responses.len() < n {
            return Err(Error::Data(format!(
                "scripted backend {}: {n} samples requested but only {} scripted",
                self.name,
                responses.len()
            )));
        }
        Ok(responses[..n].iter().cloned().map(Generation::text).collect())
    }
}
