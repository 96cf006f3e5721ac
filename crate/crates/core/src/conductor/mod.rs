//! Closed-loop orchestration: classify verification failures and send the
//! task back to the Coder or the Designer.

mod history;
mod pipeline;

use serde::{Deserialize, Serialize};

pub use history::{digest, report_digest, AgentRole, ExecutionHistory, HistoryEntry};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineContext, PipelineError, PipelineResult, RunSummary};

use crate::agents::{ChatMessage, ChatProvider, ChatRequest, CLASSIFY_TEMPLATE, CONDUCTOR_TEMPLATE};
use crate::knowledge::{render_sections, PromptSection};
use crate::verify::{VerifyReport, VerifyStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorClass {
    Syntax,
    ApiMisuse,
    Runtime,
    Algorithm,
    MemoryPattern,
}

impl ErrorClass {
    /// Agent that owns this kind of failure.
    pub fn owner(self) -> NextAgent {
        match self {
            ErrorClass::Syntax | ErrorClass::ApiMisuse | ErrorClass::Runtime => NextAgent::Coder,
            ErrorClass::Algorithm | ErrorClass::MemoryPattern => NextAgent::Designer,
        }
    }

    pub fn parse(s: &str) -> Option<ErrorClass> {
        match s.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase().as_str() {
            "syntax" => Some(ErrorClass::Syntax),
            "apimisuse" => Some(ErrorClass::ApiMisuse),
            "runtime" => Some(ErrorClass::Runtime),
            "algorithm" => Some(ErrorClass::Algorithm),
            "memorypattern" => Some(ErrorClass::MemoryPattern),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NextAgent {
    Finish,
    Coder,
    Designer,
}

const API_MARKERS: [&str; 9] = [
    "implicit declaration of function",
    "undeclared",
    "undefined reference",
    "unknownfunction",
    "unknown function",
    "has no member",
    "too few arguments",
    "too many arguments",
    "not registered",
];

const MEMORY_MARKERS: [&str; 9] = [
    "heap-buffer-overflow",
    "stack-buffer-overflow",
    "global-buffer-overflow",
    "use-after-free",
    "addresssanitizer: segv",
    "out of range for axis",
    "negative index",
    "out of bounds",
    "segmentation fault",
];

fn contains_any(text: &str, markers: &[&str]) -> bool {
    let lower = text.to_lowercase();
    markers.iter().any(|m| lower.contains(m))
}

/// Rule-based class of a failed report; `None` for a passing one. With a
/// provider, runtime failures may be reassigned among Runtime, Algorithm
/// and MemoryPattern, never to a compile-time class.
pub fn classify_error(report: &VerifyReport, provider: Option<&dyn ChatProvider>) -> Option<ErrorClass> {
    let rule = match report.status {
        VerifyStatus::Pass => return None,
        VerifyStatus::CompileFail if contains_any(&report.diagnostics, &API_MARKERS) => ErrorClass::ApiMisuse,
        VerifyStatus::CompileFail => ErrorClass::Syntax,
        VerifyStatus::RuntimeFail | VerifyStatus::Timeout if contains_any(&report.diagnostics, &MEMORY_MARKERS) => ErrorClass::MemoryPattern,
        VerifyStatus::RuntimeFail | VerifyStatus::Timeout => ErrorClass::Runtime,
        VerifyStatus::NumericFail => ErrorClass::Algorithm,
    };
    if !matches!(report.status, VerifyStatus::RuntimeFail | VerifyStatus::Timeout) {
        return Some(rule);
    }
    let Some(p) = provider else { return Some(rule) };
    let messages = vec![
        ChatMessage::system(CLASSIFY_TEMPLATE),
        ChatMessage::user(format!("status: {}\nrule-based class: {rule:?}\nlog:\n{}", report.status, clip(&report.diagnostics, 3000))),
    ];
    let req = ChatRequest { model: p.model_id().into(), messages, temperature: 0.0, max_tokens: 16, seed: None };
    let answer = p.complete(&req).ok().and_then(|r| r.split_whitespace().next().and_then(ErrorClass::parse));
    match answer {
        Some(c @ (ErrorClass::Runtime | ErrorClass::Algorithm | ErrorClass::MemoryPattern)) => Some(c),
        _ => Some(rule),
    }
}

fn clip(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub next: NextAgent,
    pub class: Option<ErrorClass>,
    pub suggestion: String,
    /// A repeated Coder-owned class was sent to the Designer instead.
    pub escalated: bool,
}

fn template_suggestion(report: &VerifyReport, class: ErrorClass, next: NextAgent) -> String {
    match next {
        NextAgent::Coder => format!(
            "Fix the {class:?} failure ({}) without changing the sketch's structure. Verifier log:\n{}",
            report.status,
            clip(report.diagnostics.trim(), 2000)
        ),
        _ if class == ErrorClass::Algorithm => format!(
            "Revise the sketch: {:.4} of output elements exceed tolerance (max error {:.3e}). Recheck the computation order, reductions and partial tiles.\n{}",
            report.violation_fraction,
            report.max_error,
            clip(report.diagnostics.trim(), 1000)
        ),
        _ => format!(
            "Revise the sketch's memory access pattern ({class:?}, {}). Recheck slice bounds and tile extents. Log:\n{}",
            report.status,
            clip(report.diagnostics.trim(), 1500)
        ),
    }
}

/// Routing per the case table: Pass finishes, Coder-owned classes go to the
/// Coder, the rest to the Designer. A Coder-owned class that repeats the
/// previous decision's class escalates to the Designer.
pub fn route(report: &VerifyReport, history: &ExecutionHistory, provider: Option<&dyn ChatProvider>) -> Routing {
    route_with(report, history, provider, &[])
}

/// As [`route`], with extra context (e.g. expert suggestions) for the
/// provider-authored suggestion.
pub fn route_with(report: &VerifyReport, history: &ExecutionHistory, provider: Option<&dyn ChatProvider>, notes: &[PromptSection]) -> Routing {
    let Some(class) = classify_error(report, provider) else {
        return Routing { next: NextAgent::Finish, class: None, suggestion: String::new(), escalated: false };
    };
    let mut next = class.owner();
    let mut escalated = false;
    if next == NextAgent::Coder && history.last_decision() == Some((NextAgent::Coder, Some(class))) {
        next = NextAgent::Designer;
        escalated = true;
    }
    let suggestion = match provider {
        Some(p) => {
            let mut user = String::new();
            if !notes.is_empty() {
                user.push_str(&render_sections(notes));
                user.push('\n');
            }
            user.push_str(&format!(
                "## FAILURE\nstatus: {}\nerror class: {class:?}\nnext agent: {next:?}\nviolation fraction: {:.4}\nlog:\n{}\n\n## HISTORY\n{}\n",
                report.status,
                report.violation_fraction,
                clip(report.diagnostics.trim(), 3000),
                history.summary()
            ));
            let req = ChatRequest {
                model: p.model_id().into(),
                messages: vec![ChatMessage::system(CONDUCTOR_TEMPLATE), ChatMessage::user(user)],
                temperature: 0.0,
                max_tokens: 512,
                seed: None,
            };
            p.complete(&req).unwrap_or_else(|_| template_suggestion(report, class, next))
        }
        None => template_suggestion(report, class, next),
    };
    Routing { next, class: Some(class), suggestion, escalated }
}
