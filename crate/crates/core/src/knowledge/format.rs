//! Wraps loose text files into the docset layout.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, sorted_entries, DocCategory, DocError, Document};
use crate::agents::{ChatMessage, ChatProvider, ChatRequest};
use crate::interp::ComputeLibrary;

const FORMAT_PROMPT: &str = "You file vendor documentation. Reply with exactly two lines:\n\
category: one of basic, api, expert_suggestions, examples\n\
tags: comma-separated lowercase keywords";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedDoc {
    pub source: PathBuf,
    pub dest: PathBuf,
    pub category: DocCategory,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub root: PathBuf,
    pub docs: Vec<FormattedDoc>,
}

fn guess(stem: &str, text: &str) -> (DocCategory, BTreeSet<String>) {
    let lower = stem.to_lowercase();
    let category = if lower.contains("example") {
        DocCategory::Examples
    } else if lower.contains("suggest") || lower.contains("tip") || lower.contains("guide") {
        DocCategory::ExpertSuggestions
    } else if lower.contains("basic") || lower.contains("hardware") || lower.contains("overview") {
        DocCategory::Basic
    } else {
        DocCategory::Api
    };
    let lib = ComputeLibrary::standard();
    let mut tags: BTreeSet<String> = crate::retrieval::tokens(text).into_iter().filter(|t| lib.contains(t)).collect();
    tags.extend(crate::retrieval::tokens(stem).into_iter().filter(|t| t.len() > 2));
    (category, tags)
}

fn parse_reply(reply: &str) -> Option<(DocCategory, BTreeSet<String>)> {
    let mut cat = None;
    let mut tags = BTreeSet::new();
    for line in reply.lines() {
        if let Some((k, v)) = line.split_once(':') {
            match k.trim().to_lowercase().as_str() {
                "category" => cat = DocCategory::parse(v.trim()),
                "tags" => tags = super::parse_tags(v),
                _ => {}
            }
        }
    }
    cat.map(|c| (c, tags))
}

/// Files every `.md`/`.txt` under `raw` into `out/<dsl>/<backend>/`, with
/// category and tags from the provider when given, otherwise from file
/// names and compute-library keywords. All four category directories are
/// created even when empty.
pub fn format_docs(raw: &Path, out: &Path, dsl: &str, backend: &str, provider: Option<&dyn ChatProvider>) -> Result<FormatReport, DocError> {
    let root = out.join(dsl).join(backend);
    for c in DocCategory::ALL {
        std::fs::create_dir_all(root.join(c.dir())).map_err(|e| io_err(&root, e))?;
    }
    let mut report = FormatReport { root: root.clone(), docs: Vec::new() };
    for src in sorted_entries(raw)? {
        if !src.is_file() || !src.extension().is_some_and(|e| e == "md" || e == "txt") {
            continue;
        }
        let stem = src.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let text = std::fs::read_to_string(&src).map_err(|e| io_err(&src, e))?;
        let (category, tags) = match provider {
            Some(p) => {
                let messages = vec![ChatMessage::system(FORMAT_PROMPT), ChatMessage::user(format!("file: {stem}\n\n{text}"))];
                let req = ChatRequest { model: p.model_id().into(), messages, temperature: 0.0, max_tokens: 128, seed: None };
                let reply = p.complete(&req).map_err(|source| DocError::Provider { source, transcript: req.messages.clone() })?;
                parse_reply(&reply).unwrap_or_else(|| guess(&stem, &text))
            }
            None => guess(&stem, &text),
        };
        let mut doc = Document::parse(&format!("{}/{stem}", category.dir()), &text);
        doc.tags.extend(tags.iter().cloned());
        let dest = root.join(category.dir()).join(format!("{stem}.md"));
        std::fs::write(&dest, doc.render()).map_err(|e| io_err(&dest, e))?;
        report.docs.push(FormattedDoc { source: src, dest, category, tags: doc.tags });
    }
    Ok(report)
}
