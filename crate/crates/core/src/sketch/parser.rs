//! Recursive-descent parser for `.usk` sketch sources.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, SketchError};

pub fn parse_sketch(text: &str) -> Result<Sketch, SketchError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { toks: tokens, pos: 0 };
    let sketch = p.sketch()?;
    check_scopes(&sketch)?;
    Ok(sketch)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn here(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: impl Into<String>) -> ParseError {
        let t = self.here();
        ParseError::new(t.line, t.col, format!("{}, found {}", expected.into(), t.tok.describe()))
    }

    fn expect(&mut self, tok: Tok) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.err(tok.describe()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("an identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.err(format!("`{kw}`"))),
        }
    }

    fn is_ident(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn skip_layout(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Indent | Tok::Dedent | Tok::Semi) {
            self.bump();
        }
    }

    fn sketch(&mut self) -> Result<Sketch, SketchError> {
        self.skip_layout();
        self.keyword("sketch")?;
        let name = self.ident()?;
        self.expect(Tok::LBrace)?;

        let mut decls = Declarations::default();
        let mut seen = [false; 3];
        let mut body = Vec::new();
        loop {
            self.skip_layout();
            match self.peek().clone() {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Eof => return Err(self.err("`}` closing the sketch").into()),
                Tok::Ident(s)
                    if matches!(s.as_str(), "symbols" | "tensors" | "constexpr")
                        && *self.peek_at(1) == Tok::Colon =>
                {
                    if !body.is_empty() {
                        return Err(self.err("a statement (declarations must precede the body)").into());
                    }
                    let slot = match s.as_str() {
                        "symbols" => 0,
                        "tensors" => 1,
                        _ => 2,
                    };
                    if seen[slot] {
                        return Err(self.err(format!("a single `{s}:` section")).into());
                    }
                    seen[slot] = true;
                    self.bump();
                    self.bump();
                    match slot {
                        0 => decls.symbols = self.name_list()?,
                        1 => decls.tensors = self.tensor_list()?,
                        _ => decls.constexpr = self.const_list()?,
                    }
                }
                _ => body.push(self.statement()?),
            }
        }
        self.skip_layout();
        if *self.peek() != Tok::Eof {
            return Err(self.err("end of input after the closing `}`").into());
        }
        if body.is_empty() {
            return Err(SketchError::EmptyBody);
        }
        Ok(Sketch { name, decls, body })
    }

    fn end_of_section(&self) -> bool {
        matches!(self.peek(), Tok::Semi | Tok::Newline | Tok::RBrace | Tok::Eof)
    }

    fn name_list(&mut self) -> Result<Vec<String>, ParseError> {
        let mut out = Vec::new();
        if !self.end_of_section() {
            out.push(self.ident()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                out.push(self.ident()?);
            }
        }
        self.section_end()?;
        Ok(out)
    }

    fn section_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Semi | Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::RBrace => Ok(()),
            _ => Err(self.err("`;` or end of line")),
        }
    }

    fn tensor_list(&mut self) -> Result<Vec<TensorSpec>, ParseError> {
        let mut out = Vec::new();
        while matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::LBracket {
            let name = self.ident()?;
            self.expect(Tok::LBracket)?;
            let mut dims = vec![self.expr()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                dims.push(self.expr()?);
            }
            self.expect(Tok::RBracket)?;
            self.expect(Tok::Colon)?;
            let dt_tok = self.here().clone();
            let dt = self.ident()?;
            let dtype = Dtype::parse(&dt)
                .ok_or_else(|| ParseError::new(dt_tok.line, dt_tok.col, format!("a dtype (f16, f32, i32), found `{dt}`")))?;
            out.push(TensorSpec { name, dims, dtype });
            match self.peek() {
                Tok::Semi => {
                    self.bump();
                }
                Tok::Newline => {
                    self.bump();
                    return Ok(out);
                }
                Tok::RBrace => return Ok(out),
                _ => return Err(self.err("`;` after a tensor declaration")),
            }
        }
        if out.is_empty() {
            self.section_end()?;
        }
        Ok(out)
    }

    fn const_list(&mut self) -> Result<Vec<ConstDecl>, ParseError> {
        let mut out = Vec::new();
        if !self.end_of_section() {
            loop {
                let name = self.ident()?;
                let default = if *self.peek() == Tok::Eq {
                    self.bump();
                    Some(self.number()?)
                } else {
                    None
                };
                out.push(ConstDecl { name, default });
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.section_end()?;
        Ok(out)
    }

    fn number(&mut self) -> Result<Number, ParseError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let n = match self.peek().clone() {
            Tok::Int(i) => Number::Int(if neg { -i } else { i }),
            Tok::Float(x) => Number::Float(if neg { -x } else { x }),
            _ => return Err(self.err("a number")),
        };
        self.bump();
        Ok(n)
    }

    fn hint_strings(&mut self, close: Tok) -> Result<Vec<Hint>, SketchError> {
        let mut out = Vec::new();
        loop {
            let t = self.here().clone();
            match &t.tok {
                Tok::Str(tag) => {
                    self.bump();
                    let hint = Hint::parse(tag).ok_or_else(|| SketchError::UnknownHint {
                        line: t.line,
                        col: t.col,
                        tag: tag.clone(),
                    })?;
                    out.push(hint);
                }
                _ => return Err(self.err("a quoted hint tag").into()),
            }
            if *self.peek() == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        self.expect(close)?;
        Ok(out)
    }

    fn statement(&mut self) -> Result<Statement, SketchError> {
        let mut hints = HintSet::default();
        while *self.peek() == Tok::At {
            self.bump();
            self.keyword("llm_hint")?;
            self.expect(Tok::LParen)?;
            for h in self.hint_strings(Tok::RParen)? {
                hints.insert(h);
            }
            match self.peek() {
                Tok::Newline | Tok::Semi => {
                    self.bump();
                }
                _ => return Err(self.err("end of line after a decorator").into()),
            }
            while matches!(self.peek(), Tok::Newline) {
                self.bump();
            }
        }

        let line = self.here().line;
        let mut stmt = if self.is_ident("for") {
            self.for_loop()?
        } else {
            let s = self.simple_statement()?;
            self.statement_end()?;
            s
        };
        stmt.line = line;
        for h in hints.tags {
            stmt.hints.insert(h);
        }
        Ok(stmt)
    }

    fn statement_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Newline | Tok::Semi => {
                self.bump();
                Ok(())
            }
            Tok::RBrace | Tok::Dedent | Tok::Eof => Ok(()),
            _ => Err(self.err("end of statement")),
        }
    }

    fn for_loop(&mut self) -> Result<Statement, SketchError> {
        self.keyword("for")?;
        let index = self.ident()?;
        self.keyword("in")?;
        self.keyword("range")?;
        self.expect(Tok::LParen)?;
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect(Tok::RParen)?;
        let range = match args.len() {
            1 => Range { start: None, stop: args.pop().unwrap(), step: None },
            2 => {
                let stop = args.pop().unwrap();
                Range { start: args.pop(), stop, step: None }
            }
            3 => {
                let step = args.pop();
                let stop = args.pop().unwrap();
                Range { start: args.pop(), stop, step }
            }
            _ => return Err(self.err("at most three range arguments").into()),
        };
        self.expect(Tok::Colon)?;

        let mut body = Vec::new();
        if *self.peek() == Tok::Newline {
            self.bump();
            self.expect(Tok::Indent)?;
            loop {
                while matches!(self.peek(), Tok::Newline | Tok::Semi) {
                    self.bump();
                }
                match self.peek() {
                    Tok::Dedent => {
                        self.bump();
                        break;
                    }
                    Tok::RBrace | Tok::Eof => break,
                    _ => body.push(self.statement()?),
                }
            }
        } else {
            // Inline suite: `for i in range(N): a(x); b(y)`
            loop {
                let line = self.here().line;
                let mut s = if self.is_ident("for") { self.for_loop()? } else { self.simple_statement()? };
                s.line = line;
                body.push(s);
                match self.peek() {
                    Tok::Semi => {
                        self.bump();
                        if matches!(self.peek(), Tok::Newline | Tok::RBrace | Tok::Eof) {
                            break;
                        }
                    }
                    _ => break,
                }
            }
            if *self.peek() == Tok::Newline {
                self.bump();
            }
        }
        if body.is_empty() {
            return Err(self.err("a loop body").into());
        }
        Ok(Statement::new(StmtKind::For { index, range, body }))
    }

    fn simple_statement(&mut self) -> Result<Statement, SketchError> {
        let first = self.ident()?;
        if *self.peek() == Tok::Eq {
            self.bump();
            self.keyword("alloc")?;
            self.expect(Tok::LParen)?;
            self.expect(Tok::LBracket)?;
            let mut shape = vec![self.expr()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                shape.push(self.expr()?);
            }
            self.expect(Tok::RBracket)?;
            let mut hints = HintSet::default();
            if *self.peek() == Tok::Comma {
                self.bump();
                self.keyword("llm_hint")?;
                self.expect(Tok::Eq)?;
                self.expect(Tok::LBracket)?;
                hints = self.hint_strings(Tok::RBracket)?.into_iter().collect();
            }
            self.expect(Tok::RParen)?;
            return Ok(Statement { kind: StmtKind::Alloc { dest: first, shape }, hints, line: 0 });
        }

        self.expect(Tok::LParen)?;
        let kind = match first.as_str() {
            "load" => {
                let src = self.slice()?;
                self.expect(Tok::Arrow)?;
                let dest = self.ident()?;
                StmtKind::Load { src, dest }
            }
            "store" => {
                let src = self.ident()?;
                self.expect(Tok::Arrow)?;
                let dest = self.slice()?;
                StmtKind::Store { src, dest }
            }
            _ => {
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    args.push(self.arg()?);
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.arg()?);
                    }
                }
                StmtKind::Compute { func: first, args }
            }
        };
        self.expect(Tok::RParen)?;
        Ok(Statement::new(kind))
    }

    fn arg(&mut self) -> Result<Arg, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(Arg::Name(s))
            }
            _ => Ok(Arg::Number(self.number()?)),
        }
    }

    fn slice(&mut self) -> Result<TensorSlice, ParseError> {
        let tensor = self.ident()?;
        self.expect(Tok::LBracket)?;
        let mut axes = vec![self.axis()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            axes.push(self.axis()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(TensorSlice { tensor, axes })
    }

    fn axis(&mut self) -> Result<SliceAxis, ParseError> {
        let lo = self.expr()?;
        if *self.peek() == Tok::Colon {
            self.bump();
            let hi = self.expr()?;
            Ok(SliceAxis::Range(lo, hi))
        } else {
            Ok(SliceAxis::Index(lo))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.atom()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.atom()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::div(lhs, self.atom()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Int(i))
            }
            Tok::Minus => {
                self.bump();
                match self.atom()? {
                    Expr::Int(i) => Ok(Expr::Int(-i)),
                    e => Ok(Expr::sub(Expr::Int(0), e)),
                }
            }
            Tok::Ident(s) if s == "ceil" && *self.peek_at(1) == Tok::LParen => {
                self.bump();
                self.bump();
                let a = self.expr()?;
                self.expect(Tok::Comma)?;
                let b = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::ceil(a, b))
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(Expr::Var(s))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.err("an integer expression")),
        }
    }
}

/// Resolves every identifier in expression position against the declarations
/// and enclosing loop indices. Buffer names are checked later by validation.
fn check_scopes(s: &Sketch) -> Result<(), SketchError> {
    fn undeclared(line: usize, name: &str) -> SketchError {
        SketchError::UndeclaredSymbol { line, name: name.to_string() }
    }

    let d = &s.decls;
    for t in &d.tensors {
        for dim in &t.dims {
            let mut bad = None;
            dim.visit_vars(&mut |v| {
                if bad.is_none() && !d.is_scalar(v) {
                    bad = Some(v.to_string());
                }
            });
            if let Some(v) = bad {
                return Err(undeclared(0, &v));
            }
        }
    }

    fn check_expr(e: &Expr, d: &Declarations, loops: &[String], line: usize) -> Result<(), SketchError> {
        let mut bad = None;
        e.visit_vars(&mut |v| {
            if bad.is_none() && !d.is_scalar(v) && !loops.iter().any(|l| l == v) {
                bad = Some(v.to_string());
            }
        });
        match bad {
            Some(v) => Err(undeclared(line, &v)),
            None => Ok(()),
        }
    }

    fn check_slice(sl: &TensorSlice, d: &Declarations, loops: &[String], line: usize) -> Result<(), SketchError> {
        if d.tensor(&sl.tensor).is_none() {
            return Err(undeclared(line, &sl.tensor));
        }
        for ax in &sl.axes {
            match ax {
                SliceAxis::Index(e) => check_expr(e, d, loops, line)?,
                SliceAxis::Range(a, b) => {
                    check_expr(a, d, loops, line)?;
                    check_expr(b, d, loops, line)?;
                }
            }
        }
        Ok(())
    }

    fn go(stmts: &[Statement], d: &Declarations, loops: &mut Vec<String>) -> Result<(), SketchError> {
        for st in stmts {
            match &st.kind {
                StmtKind::For { index, range, body } => {
                    for e in [range.start.as_ref(), Some(&range.stop), range.step.as_ref()].into_iter().flatten() {
                        check_expr(e, d, loops, st.line)?;
                    }
                    loops.push(index.clone());
                    go(body, d, loops)?;
                    loops.pop();
                }
                StmtKind::Alloc { shape, .. } => {
                    for e in shape {
                        check_expr(e, d, loops, st.line)?;
                    }
                }
                StmtKind::Load { src, .. } => check_slice(src, d, loops, st.line)?,
                StmtKind::Store { dest, .. } => check_slice(dest, d, loops, st.line)?,
                StmtKind::Compute { .. } => {}
            }
        }
        Ok(())
    }

    go(&s.body, d, &mut Vec::new())
}
