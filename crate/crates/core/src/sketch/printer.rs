//! Canonical pretty-printer. Output always re-parses to an equal [`Sketch`].

use std::fmt::Write;

use super::ast::*;
use super::SketchError;

const INDENT: &str = "  ";

pub fn print_sketch(s: &Sketch) -> Result<String, SketchError> {
    if !is_identifier(&s.name) {
        return Err(SketchError::InvalidName(s.name.clone()));
    }
    if s.body.is_empty() {
        return Err(SketchError::EmptyBody);
    }
    let mut out = String::new();
    writeln!(out, "sketch {} {{", s.name).unwrap();
    let d = &s.decls;
    if !d.symbols.is_empty() {
        writeln!(out, "{INDENT}symbols: {};", d.symbols.join(", ")).unwrap();
    }
    if !d.tensors.is_empty() {
        let items: Vec<String> = d
            .tensors
            .iter()
            .map(|t| format!("{}[{}]: {};", t.name, join_exprs(&t.dims), t.dtype))
            .collect();
        writeln!(out, "{INDENT}tensors: {}", items.join(" ")).unwrap();
    }
    if !d.constexpr.is_empty() {
        let items: Vec<String> = d
            .constexpr
            .iter()
            .map(|c| match c.default {
                Some(n) => format!("{} = {}", c.name, number(n)),
                None => c.name.clone(),
            })
            .collect();
        writeln!(out, "{INDENT}constexpr: {};", items.join(", ")).unwrap();
    }
    out.push('\n');
    print_block(&mut out, &s.body, 1);
    out.push_str("}\n");
    Ok(out)
}

fn print_block(out: &mut String, stmts: &[Statement], depth: usize) {
    let pad = INDENT.repeat(depth);
    for st in stmts {
        let inline_hints = matches!(st.kind, StmtKind::Alloc { .. });
        if !st.hints.is_empty() && !inline_hints {
            writeln!(out, "{pad}@llm_hint({})", quoted_hints(&st.hints)).unwrap();
        }
        match &st.kind {
            StmtKind::For { index, range, body } => {
                let mut args = Vec::new();
                if let Some(start) = &range.start {
                    args.push(expr(start));
                } else if range.step.is_some() {
                    args.push("0".to_string());
                }
                args.push(expr(&range.stop));
                if let Some(step) = &range.step {
                    args.push(expr(step));
                }
                writeln!(out, "{pad}for {index} in range({}):", args.join(", ")).unwrap();
                print_block(out, body, depth + 1);
            }
            StmtKind::Alloc { dest, shape } => {
                if st.hints.is_empty() {
                    writeln!(out, "{pad}{dest} = alloc([{}])", join_exprs(shape)).unwrap();
                } else {
                    let tags = quoted_hints(&st.hints);
                    writeln!(out, "{pad}{dest} = alloc([{}], llm_hint=[{tags}])", join_exprs(shape)).unwrap();
                }
            }
            StmtKind::Load { src, dest } => {
                writeln!(out, "{pad}load({} -> {dest})", slice(src)).unwrap();
            }
            StmtKind::Store { src, dest } => {
                writeln!(out, "{pad}store({src} -> {})", slice(dest)).unwrap();
            }
            StmtKind::Compute { func, args } => {
                let args: Vec<String> = args
                    .iter()
                    .map(|a| match a {
                        Arg::Name(n) => n.clone(),
                        Arg::Number(n) => number(*n),
                    })
                    .collect();
                writeln!(out, "{pad}{func}({})", args.join(", ")).unwrap();
            }
        }
    }
}

fn quoted_hints(h: &HintSet) -> String {
    h.iter().map(|t| format!("\"{t}\"")).collect::<Vec<_>>().join(", ")
}

fn slice(s: &TensorSlice) -> String {
    let axes: Vec<String> = s
        .axes
        .iter()
        .map(|a| match a {
            SliceAxis::Index(e) => expr(e),
            SliceAxis::Range(lo, hi) => format!("{}:{}", expr(lo), expr(hi)),
        })
        .collect();
    format!("{}[{}]", s.tensor, axes.join(", "))
}

fn join_exprs(es: &[Expr]) -> String {
    es.iter().map(expr).collect::<Vec<_>>().join(", ")
}

pub(crate) fn number(n: Number) -> String {
    match n {
        Number::Int(i) => i.to_string(),
        // Debug formatting is the shortest representation that round-trips.
        Number::Float(x) => format!("{x:?}"),
    }
}

pub fn expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, 0);
    s
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        _ => 3,
    }
}

/// Writes `e`, parenthesizing when its precedence is below `min`.
fn write_expr(out: &mut String, e: &Expr, min: u8) {
    let p = prec(e);
    let paren = p < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Int(i) if *i < 0 => write!(out, "({i})").unwrap(),
        Expr::Int(i) => write!(out, "{i}").unwrap(),
        Expr::Var(v) => out.push_str(v),
        Expr::Ceil(a, b) => {
            out.push_str("ceil(");
            write_expr(out, a, 0);
            out.push_str(", ");
            write_expr(out, b, 0);
            out.push(')');
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let op = match e {
                Expr::Add(..) => " + ",
                Expr::Sub(..) => " - ",
                Expr::Mul(..) => " * ",
                _ => " / ",
            };
            write_expr(out, a, p);
            out.push_str(op);
            // Left-associative: an equal-precedence right operand needs parentheses.
            write_expr(out, b, p + 1);
        }
    }
    if paren {
        out.push(')');
    }
}
