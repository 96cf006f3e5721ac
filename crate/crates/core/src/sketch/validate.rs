use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use crate::interp::ComputeLibrary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    InvalidName,
    EmptyBody,
    DuplicateDeclaration,
    UndeclaredSymbol,
    UnknownHint,
    UnknownFunction,
    UseBeforeAlloc,
    UnwrittenStore,
    RankMismatch,
    ShadowedIndex,
    NotATensor,
    MissingDestination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "{:?} at line {}: {}", self.kind, self.line, self.message)
        } else {
            write!(f, "{:?}: {}", self.kind, self.message)
        }
    }
}

/// Checks a parsed sketch against the standard compute library.
pub fn validate_sketch(s: &Sketch) -> Vec<Diagnostic> {
    validate_with(s, ComputeLibrary::standard())
}

pub fn validate_with(s: &Sketch, lib: &ComputeLibrary) -> Vec<Diagnostic> {
    let mut v = Validator { d: &s.decls, lib, diags: Vec::new() };
    v.header(s);
    let mut scope = Scope::default();
    v.block(&s.body, &mut scope);
    v.diags
}

#[derive(Default, Clone)]
struct Scope {
    loops: Vec<String>,
    buffers: BTreeSet<String>,
    written: BTreeSet<String>,
}

struct Validator<'a> {
    d: &'a Declarations,
    lib: &'a ComputeLibrary,
    diags: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn push(&mut self, kind: DiagnosticKind, line: usize, message: impl Into<String>) {
        self.diags.push(Diagnostic { kind, line, message: message.into() });
    }

    fn header(&mut self, s: &Sketch) {
        if !is_identifier(&s.name) {
            self.push(DiagnosticKind::InvalidName, 0, format!("`{}` is not an identifier", s.name));
        }
        if s.body.is_empty() {
            self.push(DiagnosticKind::EmptyBody, 0, "sketch body has no statements");
        }
        let mut seen = BTreeSet::new();
        let names = self
            .d
            .symbols
            .iter()
            .chain(self.d.tensors.iter().map(|t| &t.name))
            .chain(self.d.constexpr.iter().map(|c| &c.name));
        for n in names {
            if !is_identifier(n) {
                self.push(DiagnosticKind::InvalidName, 0, format!("`{n}` is not an identifier"));
            }
            if !seen.insert(n.clone()) {
                self.push(DiagnosticKind::DuplicateDeclaration, 0, format!("`{n}` is declared more than once"));
            }
        }
        for t in &self.d.tensors {
            if t.dims.is_empty() {
                self.push(DiagnosticKind::RankMismatch, 0, format!("tensor `{}` has no dimensions", t.name));
            }
            for dim in &t.dims {
                self.expr(dim, &[], 0);
            }
        }
    }

    fn expr(&mut self, e: &Expr, loops: &[String], line: usize) {
        let mut bad = Vec::new();
        e.visit_vars(&mut |v| {
            if !self.d.is_scalar(v) && !loops.iter().any(|l| l == v) {
                bad.push(v.to_string());
            }
        });
        for v in bad {
            self.push(DiagnosticKind::UndeclaredSymbol, line, format!("`{v}` is not declared"));
        }
    }

    fn slice(&mut self, sl: &TensorSlice, scope: &Scope, line: usize) {
        let Some(t) = self.d.tensor(&sl.tensor) else {
            self.push(DiagnosticKind::NotATensor, line, format!("`{}` is not a declared tensor", sl.tensor));
            return;
        };
        if sl.axes.len() != t.dims.len() {
            self.push(
                DiagnosticKind::RankMismatch,
                line,
                format!("slice of `{}` has {} axes but the tensor has rank {}", t.name, sl.axes.len(), t.dims.len()),
            );
        }
        for ax in &sl.axes {
            match ax {
                SliceAxis::Index(e) => self.expr(e, &scope.loops, line),
                SliceAxis::Range(a, b) => {
                    self.expr(a, &scope.loops, line);
                    self.expr(b, &scope.loops, line);
                }
            }
        }
    }

    fn block(&mut self, stmts: &[Statement], scope: &mut Scope) {
        for st in stmts {
            for h in st.hints.iter() {
                if let Hint::Extension(tag) = h {
                    if !tag.starts_with("x-") {
                        self.push(DiagnosticKind::UnknownHint, st.line, format!("\"{tag}\" is not a known hint"));
                    }
                }
            }
            match &st.kind {
                StmtKind::For { index, range, body } => {
                    for e in [range.start.as_ref(), Some(&range.stop), range.step.as_ref()].into_iter().flatten() {
                        self.expr(e, &scope.loops, st.line);
                    }
                    if self.d.declares(index) || scope.loops.contains(index) || scope.buffers.contains(index) {
                        self.push(
                            DiagnosticKind::ShadowedIndex,
                            st.line,
                            format!("loop index `{index}` shadows an enclosing name"),
                        );
                    }
                    let mut inner = scope.clone();
                    inner.loops.push(index.clone());
                    self.block(body, &mut inner);
                    // Buffers written inside the loop stay written for the enclosing scope.
                    for w in inner.written {
                        if scope.buffers.contains(&w) {
                            scope.written.insert(w);
                        }
                    }
                }
                StmtKind::Alloc { dest, shape } => {
                    for e in shape {
                        self.expr(e, &scope.loops, st.line);
                    }
                    if self.d.declares(dest) || scope.loops.contains(dest) {
                        self.push(
                            DiagnosticKind::DuplicateDeclaration,
                            st.line,
                            format!("buffer `{dest}` collides with a declared name"),
                        );
                    }
                    scope.buffers.insert(dest.clone());
                    scope.written.remove(dest);
                }
                StmtKind::Load { src, dest } => {
                    self.slice(src, scope, st.line);
                    if !scope.buffers.contains(dest) {
                        self.push(DiagnosticKind::UseBeforeAlloc, st.line, format!("`{dest}` is loaded into before alloc"));
                    }
                    scope.written.insert(dest.clone());
                }
                StmtKind::Store { src, dest } => {
                    self.slice(dest, scope, st.line);
                    if !scope.buffers.contains(src) {
                        self.push(DiagnosticKind::UseBeforeAlloc, st.line, format!("`{src}` is stored before alloc"));
                    } else if !scope.written.contains(src) {
                        self.push(DiagnosticKind::UnwrittenStore, st.line, format!("`{src}` is stored but never written"));
                    }
                }
                StmtKind::Compute { func, args } => {
                    if !self.lib.contains(func) {
                        self.push(DiagnosticKind::UnknownFunction, st.line, format!("`{func}` is not in the compute library"));
                    }
                    let Some((Arg::Name(out), inputs)) = args.split_last() else {
                        self.push(
                            DiagnosticKind::MissingDestination,
                            st.line,
                            format!("`{func}` needs a destination buffer as its last argument"),
                        );
                        continue;
                    };
                    for a in inputs {
                        if let Arg::Name(n) = a {
                            let known = scope.buffers.contains(n) || scope.loops.contains(n) || self.d.is_scalar(n);
                            if !known {
                                self.push(DiagnosticKind::UseBeforeAlloc, st.line, format!("`{n}` is used before alloc"));
                            }
                        }
                    }
                    if !scope.buffers.contains(out) {
                        self.push(DiagnosticKind::UseBeforeAlloc, st.line, format!("`{out}` is written before alloc"));
                    }
                    scope.written.insert(out.clone());
                }
            }
        }
    }
}
