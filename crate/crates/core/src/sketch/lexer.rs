//! Tokenizer with Python-style indentation tracking.
//!
//! Newlines inside `(...)` and `[...]` are insignificant. Outside of them every
//! logical line ends with [`Tok::Newline`], and changes in leading whitespace
//! produce [`Tok::Indent`] / [`Tok::Dedent`]. Blank and comment-only lines are
//! skipped entirely.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Eq,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    At,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Float(x) => format!("number `{x}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::At => "`@`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indentation".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    let mut depth: usize = 0;
    let mut last_line = 1;

    for (lineno, raw) in src.lines().enumerate() {
        let line = lineno + 1;
        last_line = line;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;

        if depth == 0 {
            let mut width = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                width += if chars[i] == '\t' { 4 } else { 1 };
                i += 1;
            }
            if i == chars.len() || chars[i] == '#' {
                continue;
            }
            let current = *indents.last().unwrap();
            if width > current {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, line, col: i + 1 });
            } else if width < current {
                while *indents.last().unwrap() > width {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, line, col: i + 1 });
                }
                if *indents.last().unwrap() != width {
                    return Err(ParseError::new(line, i + 1, "indentation matching an enclosing block"));
                }
            }
        }

        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c == ' ' || c == '\t' || c == '\r' {
                i += 1;
                continue;
            }
            if c == '#' {
                break;
            }
            let simple = match c {
                '{' => Some(Tok::LBrace),
                '}' => Some(Tok::RBrace),
                '(' => Some(Tok::LParen),
                ')' => Some(Tok::RParen),
                '[' => Some(Tok::LBracket),
                ']' => Some(Tok::RBracket),
                ',' => Some(Tok::Comma),
                ';' => Some(Tok::Semi),
                ':' => Some(Tok::Colon),
                '=' => Some(Tok::Eq),
                '+' => Some(Tok::Plus),
                '*' => Some(Tok::Star),
                '/' => Some(Tok::Slash),
                '@' => Some(Tok::At),
                _ => None,
            };
            if let Some(tok) = simple {
                match tok {
                    Tok::LParen | Tok::LBracket => depth += 1,
                    Tok::RParen | Tok::RBracket => depth = depth.saturating_sub(1),
                    _ => {}
                }
                out.push(Token { tok, line, col });
                i += 1;
                continue;
            }
            if c == '-' {
                if chars.get(i + 1) == Some(&'>') {
                    out.push(Token { tok: Tok::Arrow, line, col });
                    i += 2;
                } else {
                    out.push(Token { tok: Tok::Minus, line, col });
                    i += 1;
                }
                continue;
            }
            if c == '"' || c == '\'' {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(ParseError::new(line, col, "closing quote")),
                        Some(&q) if q == quote => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), line, col });
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                let mut is_float = false;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| ParseError::new(line, col, "a valid number"))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| ParseError::new(line, col, "an integer that fits in 64 bits"))?)
                };
                out.push(Token { tok, line, col });
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), line, col });
                continue;
            }
            return Err(ParseError::new(line, col, format!("a token, found `{c}`")));
        }

        if depth == 0 {
            out.push(Token { tok: Tok::Newline, line, col: chars.len() + 1 });
        }
    }

    let line = last_line + 1;
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line, col: 1 });
    }
    out.push(Token { tok: Tok::Eof, line, col: 1 });
    Ok(out)
}
