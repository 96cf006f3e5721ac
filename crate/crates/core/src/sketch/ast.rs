//! Syntax tree for the sketch language.
//!
//! A sketch is `(declarations, operations, control flow, hints)`: the
//! [`Declarations`] block holds the first part, [`Statement`] carries the
//! operations and loops, and every statement owns a [`HintSet`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of a declared tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F16,
    F32,
    I32,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F16 => "f16",
            Dtype::F32 => "f32",
            Dtype::I32 => "i32",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "f16" => Some(Dtype::F16),
            "f32" => Some(Dtype::F32),
            "i32" => Some(Dtype::I32),
            _ => None,
        }
    }

    /// Size in bytes of one element on disk.
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 | Dtype::I32 => 4,
        }
    }

    pub fn is_float(self) -> bool {
        !matches!(self, Dtype::I32)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integer index/extent expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Int(i64),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// Floor division.
    Div(Box<Expr>, Box<Expr>),
    /// Ceiling division, written `ceil(a, b)`.
    Ceil(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn ceil(a: Expr, b: Expr) -> Expr {
        Expr::Ceil(Box::new(a), Box::new(b))
    }

    /// Calls `f` on every identifier, left to right.
    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Int(_) => {}
            Expr::Var(v) => f(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Ceil(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<Expr>,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstDecl {
    pub name: String,
    /// Default value; an external binding takes precedence.
    pub default: Option<Number>,
}

/// Numeric literal as written in the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    pub fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(x) => x,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Declarations {
    pub symbols: Vec<String>,
    pub tensors: Vec<TensorSpec>,
    pub constexpr: Vec<ConstDecl>,
}

impl Declarations {
    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn is_symbol(&self, name: &str) -> bool {
        self.symbols.iter().any(|s| s == name)
    }

    pub fn constant(&self, name: &str) -> Option<&ConstDecl> {
        self.constexpr.iter().find(|c| c.name == name)
    }

    /// True for names usable inside integer expressions.
    pub fn is_scalar(&self, name: &str) -> bool {
        self.is_symbol(name) || self.constant(name).is_some()
    }

    pub fn declares(&self, name: &str) -> bool {
        self.is_scalar(name) || self.tensor(name).is_some()
    }
}

/// Performance-only annotation attached to a statement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hint {
    Parallel,
    GridIdx,
    CoreIdx,
    Pipeline,
    Vectorize,
    Unroll,
    Fastest,
    Fast,
    Accumulator,
    InitZero,
    InputCache,
    OutputBuffer,
    TempWorkspace,
    /// Vendor extension, always spelled with the `x-` prefix.
    Extension(String),
}

impl Hint {
    pub const VOCABULARY: [&'static str; 13] = [
        "parallel",
        "grididx",
        "coreidx",
        "pipeline",
        "vectorize",
        "unroll",
        "fastest",
        "fast",
        "accumulator",
        "init_zero",
        "input_cache",
        "output_buffer",
        "temp_workspace",
    ];

    pub fn parse(tag: &str) -> Option<Hint> {
        Some(match tag {
            "parallel" => Hint::Parallel,
            "grididx" => Hint::GridIdx,
            "coreidx" => Hint::CoreIdx,
            "pipeline" => Hint::Pipeline,
            "vectorize" => Hint::Vectorize,
            "unroll" => Hint::Unroll,
            "fastest" => Hint::Fastest,
            "fast" => Hint::Fast,
            "accumulator" => Hint::Accumulator,
            "init_zero" => Hint::InitZero,
            "input_cache" => Hint::InputCache,
            "output_buffer" => Hint::OutputBuffer,
            "temp_workspace" => Hint::TempWorkspace,
            ext if ext.len() > 2 && ext.starts_with("x-") => Hint::Extension(ext.to_string()),
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &str {
        match self {
            Hint::Parallel => "parallel",
            Hint::GridIdx => "grididx",
            Hint::CoreIdx => "coreidx",
            Hint::Pipeline => "pipeline",
            Hint::Vectorize => "vectorize",
            Hint::Unroll => "unroll",
            Hint::Fastest => "fastest",
            Hint::Fast => "fast",
            Hint::Accumulator => "accumulator",
            Hint::InitZero => "init_zero",
            Hint::InputCache => "input_cache",
            Hint::OutputBuffer => "output_buffer",
            Hint::TempWorkspace => "temp_workspace",
            Hint::Extension(s) => s,
        }
    }
}

impl fmt::Display for Hint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSet {
    pub tags: BTreeSet<Hint>,
}

impl HintSet {
    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn contains(&self, h: &Hint) -> bool {
        self.tags.contains(h)
    }

    pub fn insert(&mut self, h: Hint) {
        self.tags.insert(h);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Hint> {
        self.tags.iter()
    }
}

impl FromIterator<Hint> for HintSet {
    fn from_iter<I: IntoIterator<Item = Hint>>(iter: I) -> Self {
        HintSet { tags: iter.into_iter().collect() }
    }
}

/// One axis of a tensor slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SliceAxis {
    Index(Expr),
    /// Half-open `lo:hi`.
    Range(Expr, Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSlice {
    pub tensor: String,
    pub axes: Vec<SliceAxis>,
}

/// Argument of a compute call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arg {
    Name(String),
    Number(Number),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub start: Option<Expr>,
    pub stop: Expr,
    pub step: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StmtKind {
    For { index: String, range: Range, body: Vec<Statement> },
    Alloc { dest: String, shape: Vec<Expr> },
    Load { src: TensorSlice, dest: String },
    Store { src: String, dest: TensorSlice },
    /// Library call; the destination buffer is the last argument.
    Compute { func: String, args: Vec<Arg> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Statement {
    pub kind: StmtKind,
    pub hints: HintSet,
    /// 1-based source line; `0` for synthesized statements. Ignored by equality.
    #[serde(default)]
    pub line: usize,
}

impl PartialEq for Statement {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.hints == other.hints
    }
}

impl Statement {
    pub fn new(kind: StmtKind) -> Statement {
        Statement { kind, hints: HintSet::default(), line: 0 }
    }

    pub fn with_hints(mut self, hints: impl IntoIterator<Item = Hint>) -> Statement {
        self.hints.tags.extend(hints);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub name: String,
    pub decls: Declarations,
    pub body: Vec<Statement>,
}

impl Sketch {
    /// Visits every statement depth-first in program order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Statement, usize)) {
        fn go<'a>(stmts: &'a [Statement], depth: usize, f: &mut impl FnMut(&'a Statement, usize)) {
            for s in stmts {
                f(s, depth);
                if let StmtKind::For { body, .. } = &s.kind {
                    go(body, depth + 1, f);
                }
            }
        }
        go(&self.body, 0, f);
    }

    /// Copy with every hint removed.
    pub fn strip_hints(&self) -> Sketch {
        fn strip(stmts: &[Statement]) -> Vec<Statement> {
            stmts
                .iter()
                .map(|s| {
                    let kind = match &s.kind {
                        StmtKind::For { index, range, body } => StmtKind::For {
                            index: index.clone(),
                            range: range.clone(),
                            body: strip(body),
                        },
                        other => other.clone(),
                    };
                    Statement { kind, hints: HintSet::default(), line: s.line }
                })
                .collect()
        }
        Sketch { name: self.name.clone(), decls: self.decls.clone(), body: strip(&self.body) }
    }

    /// Names of compute functions in program order, deduplicated.
    pub fn compute_functions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk(&mut |s, _| {
            if let StmtKind::Compute { func, .. } = &s.kind {
                if !out.contains(func) {
                    out.push(func.clone());
                }
            }
        });
        out
    }

    /// Tensors read by some `load`, in declaration order.
    pub fn input_tensors(&self) -> Vec<&TensorSpec> {
        let mut read = BTreeSet::new();
        self.walk(&mut |s, _| {
            if let StmtKind::Load { src, .. } = &s.kind {
                read.insert(src.tensor.as_str());
            }
        });
        self.decls.tensors.iter().filter(|t| read.contains(t.name.as_str())).collect()
    }

    /// Tensors written by some `store`, in declaration order.
    pub fn output_tensors(&self) -> Vec<&TensorSpec> {
        let mut written = BTreeSet::new();
        self.walk(&mut |s, _| {
            if let StmtKind::Store { dest, .. } = &s.kind {
                written.insert(dest.tensor.as_str());
            }
        });
        self.decls.tensors.iter().filter(|t| written.contains(t.name.as_str())).collect()
    }

    pub fn loop_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |s, _| {
            if matches!(s.kind, StmtKind::For { .. }) {
                n += 1;
            }
        });
        n
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
