use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ErrorClass, NextAgent};
use crate::verify::VerifyReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentRole {
    Designer,
    Coder,
    Verifier,
}

/// Short content hash used to tie history entries to artifacts.
pub fn digest(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

pub fn report_digest(r: &VerifyReport) -> String {
    digest(&serde_json::to_string(r).expect("report serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Position in the history, strictly increasing from 1.
    pub seq: u64,
    /// Pipeline iteration, i.e. how many verifications have started.
    pub iteration: u32,
    pub agent: AgentRole,
    pub inputs_digest: String,
    pub outputs_digest: String,
    pub report: Option<VerifyReport>,
    pub class: Option<ErrorClass>,
    pub decision: Option<NextAgent>,
    #[serde(default)]
    pub escalated: bool,
    pub suggestion: String,
}

/// Append-only record of one pipeline run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionHistory {
    entries: Vec<HistoryEntry>,
}

impl ExecutionHistory {
    pub fn new() -> ExecutionHistory {
        ExecutionHistory::default()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryEntry> {
        self.entries.last()
    }

    /// Appends `e`, overwriting its `seq` with the next number.
    pub fn push(&mut self, mut e: HistoryEntry) -> &HistoryEntry {
        e.seq = self.entries.last().map_or(1, |l| l.seq + 1);
        self.entries.push(e);
        self.entries.last().expect("just pushed")
    }

    /// The most recent routing decision with its error class.
    pub fn last_decision(&self) -> Option<(NextAgent, Option<ErrorClass>)> {
        self.entries.iter().rev().find_map(|e| e.decision.map(|d| (d, e.class)))
    }

    /// Routing decisions in order, as recorded by verifier entries.
    pub fn decisions(&self) -> Vec<(Option<ErrorClass>, NextAgent, bool)> {
        self.entries.iter().filter_map(|e| e.decision.map(|d| (e.class, d, e.escalated))).collect()
    }

    pub fn summary(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let status = e.report.as_ref().map(|r| format!(" status={}", r.status)).unwrap_or_default();
                let class = e.class.map(|c| format!(" class={c:?}")).unwrap_or_default();
                let next = e.decision.map(|d| format!(" next={d:?}")).unwrap_or_default();
                format!("{}. iter {} {:?}{status}{class}{next}", e.seq, e.iteration, e.agent)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}
