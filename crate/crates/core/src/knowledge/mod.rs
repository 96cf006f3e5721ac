//! Target documentation in four categories, and prompt context assembled
//! from it.
//!
//! On disk a docset lives at `docspec/<dsl>/<backend>/` with one directory
//! per category. Each document is a Markdown file with an optional
//! front-matter block:
//!
//! ```text
//! ---
//! title: reduce_sum
//! tags: reduce, reduction
//! ---
//! body...
//! ```
//!
//! Examples may sit one level deeper, under a directory named for their
//! frontend framework.

mod format;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{format_docs, FormatReport};

use crate::agents::{ChatMessage, ChatProvider, ChatRequest, ProviderError};
use crate::retrieval::Retrieved;
use crate::sketch::Sketch;
use crate::task::OperatorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocCategory {
    Basic,
    Api,
    ExpertSuggestions,
    Examples,
}

impl DocCategory {
    pub const ALL: [DocCategory; 4] = [DocCategory::Basic, DocCategory::Api, DocCategory::ExpertSuggestions, DocCategory::Examples];

    pub fn dir(self) -> &'static str {
        match self {
            DocCategory::Basic => "basic",
            DocCategory::Api => "api",
            DocCategory::ExpertSuggestions => "expert_suggestions",
            DocCategory::Examples => "examples",
        }
    }

    pub fn parse(s: &str) -> Option<DocCategory> {
        DocCategory::ALL.into_iter().find(|c| c.dir() == s)
    }
}

impl fmt::Display for DocCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// Path below the docset root without extension, e.g. `api/reduce_sum`.
    pub id: String,
    pub title: String,
    pub body: String,
    pub tags: BTreeSet<String>,
    /// Frontend framework, for examples filed under a subdirectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framework: Option<String>,
}

impl Document {
    /// Character count charged against a compression budget.
    pub fn size(&self) -> usize {
        self.title.chars().count() + self.body.chars().count()
    }

    pub fn parse(id: &str, text: &str) -> Document {
        let stem = id.rsplit('/').next().unwrap_or(id).to_string();
        let mut title = None;
        let mut tags = BTreeSet::new();
        let mut body = text;
        if let Some(rest) = text.strip_prefix("---\n") {
            if let Some(end) = rest.find("\n---") {
                for line in rest[..end].lines() {
                    if let Some((k, v)) = line.split_once(':') {
                        match k.trim() {
                            "title" => title = Some(v.trim().to_string()),
                            "tags" => tags = parse_tags(v),
                            _ => {}
                        }
                    }
                }
                body = rest[end + 4..].strip_prefix('\n').unwrap_or(&rest[end + 4..]);
            }
        }
        let title = title
            .filter(|t| !t.is_empty())
            .or_else(|| body.lines().find_map(|l| l.strip_prefix("# ")).map(|t| t.trim().to_string()))
            .unwrap_or(stem);
        Document { id: id.to_string(), title, body: body.trim_end().to_string(), tags, framework: None }
    }

    pub fn render(&self) -> String {
        let tags: Vec<&str> = self.tags.iter().map(String::as_str).collect();
        format!("---\ntitle: {}\ntags: {}\n---\n{}\n", self.title, tags.join(", "), self.body)
    }
}

fn parse_tags(v: &str) -> BTreeSet<String> {
    v.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|t| t.trim().trim_matches('"').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSet {
    pub dsl_id: String,
    pub backend_id: String,
    pub basic: Vec<Document>,
    pub api: Vec<Document>,
    pub expert_suggestions: Vec<Document>,
    pub examples: Vec<Document>,
    /// Files that were skipped while loading.
    pub warnings: Vec<String>,
}

impl DocSet {
    pub fn empty(dsl_id: &str, backend_id: &str) -> DocSet {
        DocSet {
            dsl_id: dsl_id.into(),
            backend_id: backend_id.into(),
            basic: Vec::new(),
            api: Vec::new(),
            expert_suggestions: Vec::new(),
            examples: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn category(&self, c: DocCategory) -> &[Document] {
        match c {
            DocCategory::Basic => &self.basic,
            DocCategory::Api => &self.api,
            DocCategory::ExpertSuggestions => &self.expert_suggestions,
            DocCategory::Examples => &self.examples,
        }
    }

    fn category_mut(&mut self, c: DocCategory) -> &mut Vec<Document> {
        match c {
            DocCategory::Basic => &mut self.basic,
            DocCategory::Api => &mut self.api,
            DocCategory::ExpertSuggestions => &mut self.expert_suggestions,
            DocCategory::Examples => &mut self.examples,
        }
    }

    /// Examples filed under `framework`.
    pub fn examples_for(&self, framework: &str) -> Vec<&Document> {
        self.examples.iter().filter(|d| d.framework.as_deref() == Some(framework)).collect()
    }
}

#[derive(Debug, Error)]
pub enum DocError {
    #[error("docset {root} is missing categories: {}", .missing.join(", "))]
    MissingCategories { root: String, missing: Vec<String> },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("compression budget must be positive")]
    ZeroBudget,
    #[error("document compression failed: {source}")]
    Provider { source: ProviderError, transcript: Vec<ChatMessage> },
}

fn io_err(p: &Path, e: std::io::Error) -> DocError {
    DocError::Io { path: p.display().to_string(), message: e.to_string() }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, DocError> {
    let mut v: Vec<_> = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    v.sort();
    Ok(v)
}

fn is_markdown(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e == "md")
}

/// Loads `root` laid out as `<category>/<doc>.md`. The dsl and backend ids
/// come from the last two path components.
pub fn load_docset(root: &Path) -> Result<DocSet, DocError> {
    let name = |p: Option<&Path>| p.and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut set = DocSet::empty(&name(root.parent()), &name(Some(root)));
    let missing: Vec<String> = DocCategory::ALL.iter().filter(|c| !root.join(c.dir()).is_dir()).map(|c| c.dir().to_string()).collect();
    if !missing.is_empty() {
        return Err(DocError::MissingCategories { root: root.display().to_string(), missing });
    }
    for entry in sorted_entries(root)? {
        let fname = name(Some(&entry));
        if !(entry.is_dir() && DocCategory::parse(&fname).is_some()) {
            set.warnings.push(format!("unknown entry {}", entry.display()));
        }
    }
    for c in DocCategory::ALL {
        let dir = root.join(c.dir());
        for entry in sorted_entries(&dir)? {
            let fname = name(Some(&entry));
            if is_markdown(&entry) {
                let stem = fname.trim_end_matches(".md");
                let text = std::fs::read_to_string(&entry).map_err(|e| io_err(&entry, e))?;
                set.category_mut(c).push(Document::parse(&format!("{}/{stem}", c.dir()), &text));
            } else if c == DocCategory::Examples && entry.is_dir() {
                for inner in sorted_entries(&entry)? {
                    let iname = name(Some(&inner));
                    if is_markdown(&inner) {
                        let text = std::fs::read_to_string(&inner).map_err(|e| io_err(&inner, e))?;
                        let mut d = Document::parse(&format!("examples/{fname}/{}", iname.trim_end_matches(".md")), &text);
                        d.framework = Some(fname.clone());
                        set.examples.push(d);
                    } else {
                        set.warnings.push(format!("unknown entry {}", inner.display()));
                    }
                }
            } else {
                set.warnings.push(format!("unknown entry {}", entry.display()));
            }
        }
    }
    Ok(set)
}

/// Tags a sketch's compute calls suggest: each function name, its
/// underscore-separated parts, and `elementwise` for pointwise math.
pub fn sketch_tags(sketch: &Sketch) -> BTreeSet<String> {
    const POINTWISE: [&str; 17] = [
        "add", "sub", "mul", "div", "max", "min", "pow", "copy", "neg", "abs", "relu", "sqrt", "rsqrt", "exp", "log", "tanh", "sigmoid",
    ];
    let mut tags = BTreeSet::new();
    for f in sketch.compute_functions() {
        if POINTWISE.contains(&f.as_str()) || f == "silu" {
            tags.insert("elementwise".to_string());
        }
        tags.extend(f.split('_').filter(|p| !p.is_empty()).map(str::to_string));
        tags.insert(f);
    }
    tags
}

const COMPRESS_PROMPT: &str = "You select API documentation for a kernel author. From the list below, reply with the ids \
of the documents the kernel needs, one per line, most important first. Reply with ids only.";

/// Reduces `docs` to what fits in `budget` characters. A provider chooses
/// the documents when given; otherwise documents are ranked by how many of
/// their tags the sketch's compute calls mention. Never invents documents.
pub fn compress_api_docs(
    docs: &[Document],
    task_summary: &str,
    sketch: &Sketch,
    provider: Option<&dyn ChatProvider>,
    budget: usize,
) -> Result<Vec<Document>, DocError> {
    if budget == 0 {
        return Err(DocError::ZeroBudget);
    }
    if docs.iter().map(Document::size).sum::<usize>() <= budget && provider.is_none() {
        return Ok(docs.to_vec());
    }
    let order: Vec<&Document> = match provider {
        Some(p) => {
            let listing: Vec<String> = docs
                .iter()
                .map(|d| format!("{} | {} | tags: {}", d.id, d.title, d.tags.iter().cloned().collect::<Vec<_>>().join(", ")))
                .collect();
            let messages = vec![
                ChatMessage::system(COMPRESS_PROMPT),
                ChatMessage::user(format!(
                    "task: {task_summary}\ncompute calls: {}\nbudget: {budget} characters\n\ndocuments:\n{}",
                    sketch.compute_functions().join(", "),
                    listing.join("\n")
                )),
            ];
            let req = ChatRequest { model: p.model_id().into(), messages, temperature: 0.0, max_tokens: 512, seed: None };
            let reply = p.complete(&req).map_err(|source| DocError::Provider { source, transcript: req.messages.clone() })?;
            let mut picked: Vec<&Document> = Vec::new();
            for tok in reply.split(|c: char| c.is_whitespace() || c == ',') {
                let tok = tok.trim_matches(|c: char| c == '`' || c == '-' || c == '*');
                if let Some(d) = docs.iter().find(|d| d.id == tok) {
                    if !picked.iter().any(|p| p.id == d.id) {
                        picked.push(d);
                    }
                }
            }
            picked
        }
        None => {
            let want = sketch_tags(sketch);
            let mut ranked: Vec<(usize, usize, &Document)> =
                docs.iter().enumerate().map(|(i, d)| (d.tags.intersection(&want).count(), i, d)).collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            ranked.into_iter().map(|(_, _, d)| d).collect()
        }
    };
    let mut used = 0;
    let mut out = Vec::new();
    for d in order {
        if used + d.size() <= budget {
            used += d.size();
            out.push(d.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Designer,
    Coder,
    Conductor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub label: String,
    pub body: String,
}

impl PromptSection {
    pub fn new(label: &str, body: impl Into<String>) -> PromptSection {
        PromptSection { label: label.to_string(), body: body.into() }
    }
}

pub mod labels {
    pub const TASK: &str = "TASK SPECIFICATION";
    pub const BASIC: &str = "HARDWARE AND BASICS";
    pub const API: &str = "API REFERENCE";
    pub const EXPERT: &str = "EXPERT SUGGESTIONS";
    pub const EXAMPLES: &str = "RETRIEVED EXAMPLES";
    pub const FEEDBACK: &str = "PRIOR FEEDBACK";
}

/// Everything prompt assembly reads. `api` overrides the deterministic
/// compression of `docset.api` for the coder stage.
#[derive(Debug, Clone, Copy)]
pub struct ContextInputs<'a> {
    pub task: &'a OperatorSpec,
    pub sketch: Option<&'a Sketch>,
    pub docset: &'a DocSet,
    pub retrieved: &'a [Retrieved],
    pub stage: Stage,
    pub feedback: Option<&'a str>,
    pub api: Option<&'a [Document]>,
    pub api_budget: usize,
}

impl<'a> ContextInputs<'a> {
    pub fn new(task: &'a OperatorSpec, docset: &'a DocSet, stage: Stage) -> ContextInputs<'a> {
        ContextInputs { task, sketch: None, docset, retrieved: &[], stage, feedback: None, api: None, api_budget: 6000 }
    }
}

fn docs_body(docs: &[Document]) -> String {
    if docs.is_empty() {
        return "(none)".into();
    }
    docs.iter().map(|d| format!("### {}\n{}", d.title, d.body)).collect::<Vec<_>>().join("\n\n")
}

/// Labeled sections in fixed order: task, basics, API (coder only), expert
/// suggestions, retrieved examples (when any), feedback. Pure: equal inputs
/// give byte-identical sections.
pub fn assemble_context(inp: &ContextInputs<'_>) -> Vec<PromptSection> {
    let t = inp.task;
    let mut task = format!("operator: {}\ncategory: {}\ndtype: {}\n", t.name, t.category, t.dtype);
    if !t.description.is_empty() {
        task.push_str(&format!("description: {}\n", t.description.trim()));
    }
    let shapes: Vec<String> = t.static_shapes.iter().map(|(k, v)| format!("{k}={v}")).collect();
    task.push_str(&format!("static shapes: {}\n", shapes.join(", ")));
    if !t.dynamic_ranges.is_empty() {
        let ranges: Vec<String> = t.dynamic_ranges.iter().map(|(k, [lo, hi])| format!("{k} in [{lo}, {hi}]")).collect();
        task.push_str(&format!("dynamic shapes: {}\n", ranges.join(", ")));
    }
    if !t.constexpr.is_empty() {
        let c: Vec<String> = t.constexpr.iter().map(|(k, v)| format!("{k}={}", v.as_f64())).collect();
        task.push_str(&format!("bound constants: {}\n", c.join(", ")));
    }
    task.push_str(&format!("reference semantics:\n```usk\n{}\n```", t.reference.trim_end()));

    let mut out = vec![PromptSection::new(labels::TASK, task), PromptSection::new(labels::BASIC, docs_body(&inp.docset.basic))];
    if inp.stage == Stage::Coder {
        let api = match (inp.api, inp.sketch) {
            (Some(a), _) => a.to_vec(),
            (None, Some(s)) => compress_api_docs(&inp.docset.api, &t.features(), s, None, inp.api_budget.max(1)).unwrap_or_default(),
            (None, None) => inp.docset.api.clone(),
        };
        out.push(PromptSection::new(labels::API, docs_body(&api)));
    }
    out.push(PromptSection::new(labels::EXPERT, docs_body(&inp.docset.expert_suggestions)));
    if !inp.retrieved.is_empty() {
        let body = inp
            .retrieved
            .iter()
            .map(|r| {
                let mut s = format!("### {} (op_type {}, {})\nsketch:\n```usk\n{}\n```", r.record.id, r.record.op_type, r.record.shape_info, r.record.sketch.trim_end());
                if inp.stage == Stage::Coder && !r.record.code.is_empty() {
                    s.push_str(&format!("\ncode ({}):\n```{}\n{}\n```", r.record.dsl, r.record.dsl, r.record.code.trim_end()));
                }
                s
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        out.push(PromptSection::new(labels::EXAMPLES, body));
    }
    out.push(PromptSection::new(labels::FEEDBACK, inp.feedback.filter(|f| !f.trim().is_empty()).unwrap_or("(none: first attempt)")));
    out
}

/// Sections joined into prompt text.
pub fn render_sections(sections: &[PromptSection]) -> String {
    sections.iter().map(|s| format!("## {}\n{}\n", s.label, s.body)).collect::<Vec<_>>().join("\n")
}
