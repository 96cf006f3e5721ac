use std::collections::BTreeMap;

use thiserror::Error;

use super::tensor::Binding;
use crate::sketch::{Dtype, Expr, Number, Sketch, StmtKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BindError {
    #[error("BindError(\"{0}\"): no value bound")]
    Unbound(String),
    #[error("BindError(\"{name}\"): symbol must be a positive integer, got {value}")]
    NonPositive { name: String, value: i64 },
    #[error("BindError(\"{name}\"): value {value} is used as an extent but is not an integer")]
    NotInteger { name: String, value: f64 },
    #[error("BindError(\"{tensor}\"): expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("BindError(\"{tensor}\"): expected dtype {expected}, found {found}")]
    DtypeMismatch { tensor: String, expected: Dtype, found: Dtype },
    #[error("BindError(\"{name}\"): {message}")]
    BadExtent { name: String, message: String },
}

impl BindError {
    /// The identifier the error is about.
    pub fn name(&self) -> &str {
        match self {
            BindError::Unbound(n) => n,
            BindError::NonPositive { name, .. } | BindError::NotInteger { name, .. } | BindError::BadExtent { name, .. } => name,
            BindError::ShapeMismatch { tensor, .. } | BindError::DtypeMismatch { tensor, .. } => tensor,
        }
    }
}

/// Loop with its trip count when that is fixed by the scalars alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrip {
    pub index: String,
    pub line: usize,
    pub trips: Option<u64>,
}

/// A sketch whose scalars and tensor extents have concrete values.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSketch {
    pub sketch: Sketch,
    /// Every symbol and constexpr value.
    pub scalars: BTreeMap<String, f64>,
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub loops: Vec<LoopTrip>,
}

impl ResolvedSketch {
    /// Trip count of the first loop using `index`.
    pub fn trip_count(&self, index: &str) -> Option<u64> {
        self.loops.iter().find(|l| l.index == index).and_then(|l| l.trips)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("`{0}` has no value")]
    Unbound(String),
    #[error("`{name}` = {value} is not an integer")]
    NotInteger { name: String, value: f64 },
    #[error("division by zero")]
    DivByZero,
    #[error("integer overflow")]
    Overflow,
}

/// Evaluates an integer expression. `lookup` returns the value of a name.
pub fn eval_expr(e: &Expr, lookup: &impl Fn(&str) -> Option<f64>) -> Result<i64, ExprError> {
    Ok(match e {
        Expr::Int(i) => *i,
        Expr::Var(v) => {
            let x = lookup(v).ok_or_else(|| ExprError::Unbound(v.clone()))?;
            if x.fract() != 0.0 || !x.is_finite() {
                return Err(ExprError::NotInteger { name: v.clone(), value: x });
            }
            x as i64
        }
        Expr::Add(a, b) => eval_expr(a, lookup)?.checked_add(eval_expr(b, lookup)?).ok_or(ExprError::Overflow)?,
        Expr::Sub(a, b) => eval_expr(a, lookup)?.checked_sub(eval_expr(b, lookup)?).ok_or(ExprError::Overflow)?,
        Expr::Mul(a, b) => eval_expr(a, lookup)?.checked_mul(eval_expr(b, lookup)?).ok_or(ExprError::Overflow)?,
        Expr::Div(a, b) => {
            let (a, b) = (eval_expr(a, lookup)?, eval_expr(b, lookup)?);
            if b == 0 {
                return Err(ExprError::DivByZero);
            }
            floor_div(a, b)
        }
        Expr::Ceil(a, b) => {
            let (a, b) = (eval_expr(a, lookup)?, eval_expr(b, lookup)?);
            if b == 0 {
                return Err(ExprError::DivByZero);
            }
            -floor_div(-a, b)
        }
    })
}

fn floor_div(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

/// Number of iterations of `range(start, stop, step)`.
pub fn trip_count(start: i64, stop: i64, step: i64) -> u64 {
    if step > 0 && stop > start {
        ((stop - start + step - 1) / step) as u64
    } else {
        0
    }
}

fn expr_error(e: ExprError) -> BindError {
    match e {
        ExprError::Unbound(n) => BindError::Unbound(n),
        ExprError::NotInteger { name, value } => BindError::NotInteger { name, value },
        other => BindError::BadExtent { name: String::new(), message: other.to_string() },
    }
}

/// Resolves every symbol, constexpr and tensor extent of `s` against `b`.
/// Bound constexpr values take precedence over sketch defaults. Tensors that
/// are absent from `b` are allowed; the evaluator zero-fills them.
pub fn bind_shapes(s: &Sketch, b: &Binding) -> Result<ResolvedSketch, BindError> {
    let mut scalars = BTreeMap::new();
    for sym in &s.decls.symbols {
        let v = *b.symbol_values.get(sym).ok_or_else(|| BindError::Unbound(sym.clone()))?;
        if v <= 0 {
            return Err(BindError::NonPositive { name: sym.clone(), value: v });
        }
        scalars.insert(sym.clone(), v as f64);
    }
    for c in &s.decls.constexpr {
        let v = b.constexpr_values.get(&c.name).copied().or(c.default).ok_or_else(|| BindError::Unbound(c.name.clone()))?;
        scalars.insert(c.name.clone(), v.as_f64());
    }
    let lookup = |n: &str| scalars.get(n).copied();

    let mut shapes = BTreeMap::new();
    for t in &s.decls.tensors {
        let mut dims = Vec::new();
        for d in &t.dims {
            let v = eval_expr(d, &lookup).map_err(|e| match expr_error(e) {
                BindError::BadExtent { message, .. } => BindError::BadExtent { name: t.name.clone(), message },
                other => other,
            })?;
            if v <= 0 {
                return Err(BindError::BadExtent { name: t.name.clone(), message: format!("dimension evaluates to {v}") });
            }
            dims.push(v as usize);
        }
        if let Some(given) = b.tensor_values.get(&t.name) {
            if given.shape != dims {
                return Err(BindError::ShapeMismatch { tensor: t.name.clone(), expected: dims, found: given.shape.clone() });
            }
            if given.dtype != t.dtype {
                return Err(BindError::DtypeMismatch { tensor: t.name.clone(), expected: t.dtype, found: given.dtype });
            }
        }
        shapes.insert(t.name.clone(), dims);
    }

    let mut loops = Vec::new();
    s.walk(&mut |st, _| {
        if let StmtKind::For { index, range, .. } = &st.kind {
            let start = range.start.as_ref().map_or(Ok(0), |e| eval_expr(e, &lookup));
            let stop = eval_expr(&range.stop, &lookup);
            let step = range.step.as_ref().map_or(Ok(1), |e| eval_expr(e, &lookup));
            let trips = match (start, stop, step) {
                (Ok(a), Ok(z), Ok(st)) if st > 0 => Some(trip_count(a, z, st)),
                _ => None,
            };
            loops.push(LoopTrip { index: index.clone(), line: st.line, trips });
        }
    });
    Ok(ResolvedSketch { sketch: s.clone(), scalars, shapes, loops })
}

/// Convenience for tests and fixtures: a binding from `(name, value)` pairs.
pub fn symbols(pairs: &[(&str, i64)]) -> Binding {
    let mut b = Binding::default();
    for (n, v) in pairs {
        b.symbol_values.insert(n.to_string(), *v);
    }
    b
}

/// Same as [`symbols`] for constexpr values.
pub fn with_constexpr(mut b: Binding, pairs: &[(&str, Number)]) -> Binding {
    for (n, v) in pairs {
        b.constexpr_values.insert(n.to_string(), *v);
    }
    b
}
