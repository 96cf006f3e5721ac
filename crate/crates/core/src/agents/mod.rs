//! Designer and Coder: prompt assembly, provider calls and extraction of
//! fenced code from replies.

mod provider;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use provider::{
    build_provider, ChatMessage, ChatProvider, ChatRequest, HttpProvider, LimitedProvider, ProviderConfig, ProviderError, ProviderKind,
    RecordingProvider, Role, Rule, ScriptedProvider, Transcript, TranscriptEntry,
};

use crate::knowledge::{render_sections, PromptSection};
use crate::sketch::{parse_and_validate, print_sketch, Sketch};
use crate::task::OperatorSpec;
use crate::verify::{Dsl, HARNESS};

pub const DESIGNER_TEMPLATE: &str = include_str!("../../templates/designer.md");
pub const CODER_C_TEMPLATE: &str = include_str!("../../templates/coder_c.md");
pub const CODER_SKETCH_TEMPLATE: &str = include_str!("../../templates/coder_sketch.md");
pub const CONDUCTOR_TEMPLATE: &str = include_str!("../../templates/conductor.md");
pub const ANALYSIS_TEMPLATE: &str = include_str!("../../templates/analysis.md");
pub const CLASSIFY_TEMPLATE: &str = include_str!("../../templates/classify.md");

/// Generation settings for one agent call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Sampling {
        Sampling { temperature: 0.0, max_tokens: 4096, seed: None }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("malformed agent output: {message}")]
    MalformedOutput { message: String, transcript: Vec<ChatMessage> },
    #[error("provider failed: {source}")]
    Provider { source: ProviderError, transcript: Vec<ChatMessage> },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl AgentError {
    pub fn transcript(&self) -> &[ChatMessage] {
        match self {
            AgentError::MalformedOutput { transcript, .. } | AgentError::Provider { transcript, .. } => transcript,
            AgentError::Precondition(_) => &[],
        }
    }
}

/// Bodies of fenced blocks whose info string is exactly `tag`.
pub fn fenced_blocks(text: &str, tag: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        match &mut current {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    if info.trim() == tag {
                        current = Some(Vec::new());
                    }
                }
            }
            Some(lines) => {
                if trimmed == "```" {
                    let mut body = lines.join("\n");
                    body.push('\n');
                    out.push(body);
                    current = None;
                } else {
                    lines.push(line);
                }
            }
        }
    }
    out
}

fn call(provider: &dyn ChatProvider, messages: &[ChatMessage], s: &Sampling) -> Result<String, AgentError> {
    let req = ChatRequest {
        model: provider.model_id().to_string(),
        messages: messages.to_vec(),
        temperature: s.temperature,
        max_tokens: s.max_tokens,
        seed: s.seed,
    };
    provider.complete(&req).map_err(|source| AgentError::Provider { source, transcript: messages.to_vec() })
}

/// Elite sketch and plan handed to the Designer by the search loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inspiration {
    pub plan: String,
    pub sketch: Option<String>,
    pub latency_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRequest {
    pub task: OperatorSpec,
    /// Assembled context: task, hardware notes, suggestions, examples and
    /// prior feedback.
    pub context: Vec<PromptSection>,
    pub inspiration: Option<Inspiration>,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub sketch: Sketch,
    /// The sketch as the model wrote it.
    pub sketch_text: String,
    pub rationale: String,
    pub transcript: Vec<ChatMessage>,
}

pub fn design_prompt(req: &DesignRequest) -> Vec<ChatMessage> {
    let mut user = render_sections(&req.context);
    if let Some(insp) = &req.inspiration {
        user.push_str("\n## INSPIRATION\n");
        user.push_str(insp.plan.trim_end());
        user.push('\n');
        if let Some(s) = &insp.sketch {
            let lat = insp.latency_us.map(|l| format!(" ({l:.3} us)")).unwrap_or_default();
            user.push_str(&format!("best elite so far{lat}:\n```usk\n{}\n```\n", s.trim_end()));
        }
    }
    user.push_str("\nReply with one ```usk block holding the sketch, then a short rationale.\n");
    vec![ChatMessage::system(DESIGNER_TEMPLATE), ChatMessage::user(user)]
}

fn strip_blocks(reply: &str) -> String {
    let mut out = Vec::new();
    let mut inside = false;
    for line in reply.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
            continue;
        }
        if !inside {
            out.push(line);
        }
    }
    out.join("\n").trim().to_string()
}

/// Asks for a sketch and accepts the first `usk` block that parses and
/// validates. One repair round is attempted before giving up.
pub fn design(req: &DesignRequest, provider: &dyn ChatProvider) -> Result<DesignResult, AgentError> {
    if req.task.name.trim().is_empty() {
        return Err(AgentError::Precondition("task spec is empty".into()));
    }
    let mut messages = design_prompt(req);
    let mut problem = String::new();
    for attempt in 0..2 {
        let reply = call(provider, &messages, &req.sampling)?;
        messages.push(ChatMessage::assistant(reply.clone()));
        match fenced_blocks(&reply, Dsl::Sketch.fence()).into_iter().next() {
            None => problem = "the reply contains no ```usk block".into(),
            Some(text) => match parse_and_validate(&text) {
                Ok(sketch) => {
                    return Ok(DesignResult { sketch, sketch_text: text, rationale: strip_blocks(&reply), transcript: messages });
                }
                Err(e) => problem = e.to_string(),
            },
        }
        if attempt == 0 {
            messages.push(ChatMessage::user(format!(
                "The sketch was rejected:\n{problem}\nReply with a single corrected ```usk block."
            )));
        }
    }
    Err(AgentError::MalformedOutput { message: problem, transcript: messages })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeRequest {
    pub sketch: Sketch,
    pub dsl: Dsl,
    pub context: Vec<PromptSection>,
    pub previous_source: Option<String>,
    /// Verifier log of the previous attempt.
    pub error_log: Option<String>,
    pub suggestion: Option<String>,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeResult {
    pub source: String,
    /// Host-side driver the kernel is linked with.
    pub wrapper: String,
    pub dsl: Dsl,
    pub transcript: Vec<ChatMessage>,
}

pub const PREVIOUS_FAILURE: &str = "PREVIOUS FAILURE";
pub const FIX_SUGGESTION: &str = "FIX SUGGESTION";

pub fn code_prompt(req: &CodeRequest) -> Vec<ChatMessage> {
    let system = match req.dsl {
        Dsl::C => CODER_C_TEMPLATE,
        Dsl::Sketch => CODER_SKETCH_TEMPLATE,
    };
    let sketch = print_sketch(&req.sketch).unwrap_or_default();
    let mut user = render_sections(&req.context);
    user.push_str(&format!("\n## SKETCH\n```usk\n{}\n```\n", sketch.trim_end()));
    if let Some(prev) = &req.previous_source {
        user.push_str(&format!("\n## PREVIOUS CODE\n```{}\n{}\n```\n", req.dsl.fence(), prev.trim_end()));
    }
    if let Some(log) = &req.error_log {
        user.push_str(&format!("\n## {PREVIOUS_FAILURE}\n{}\n", log.trim_end()));
    }
    if let Some(s) = &req.suggestion {
        user.push_str(&format!("\n## {FIX_SUGGESTION}\n{}\n", s.trim_end()));
    }
    user.push_str(&format!("\nReply with exactly one ```{} block.\n", req.dsl.fence()));
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Asks for the kernel source. The reply must hold exactly one block
/// tagged with the target's fence; one repair round is attempted.
pub fn code(req: &CodeRequest, provider: &dyn ChatProvider) -> Result<CodeResult, AgentError> {
    if req.sketch.body.is_empty() {
        return Err(AgentError::Precondition("sketch is empty".into()));
    }
    let fence = req.dsl.fence();
    let mut messages = code_prompt(req);
    let mut problem = String::new();
    for attempt in 0..2 {
        let reply = call(provider, &messages, &req.sampling)?;
        messages.push(ChatMessage::assistant(reply.clone()));
        let blocks = fenced_blocks(&reply, fence);
        if blocks.len() == 1 {
            let wrapper = match req.dsl {
                Dsl::C => HARNESS.to_string(),
                Dsl::Sketch => String::new(),
            };
            return Ok(CodeResult { source: blocks.into_iter().next().unwrap_or_default(), wrapper, dsl: req.dsl, transcript: messages });
        }
        problem = format!("expected exactly one ```{fence} block, found {}", blocks.len());
        if attempt == 0 {
            messages.push(ChatMessage::user(format!("{problem}. Reply again with exactly one ```{fence} block.")));
        }
    }
    Err(AgentError::MalformedOutput { message: problem, transcript: messages })
}
