//! The sketch language: a small DSL that carries parallelization, memory and
//! tiling intent from the designer to the coder without committing to any
//! target language.
//!
//! ```text
//! sketch scale {
//!   symbols: N;
//!   tensors: X[N]: f32; Y[N]: f32;
//!   constexpr: TILE = 4;
//!
//!   @llm_hint("parallel")
//!   for t in range(0, ceil(N, TILE)):
//!     buf = alloc([TILE], llm_hint=["fast"])
//!     load(X[t*TILE:(t+1)*TILE] -> buf)
//!     mul(buf, 2, buf)
//!     store(buf -> Y[t*TILE:(t+1)*TILE])
//! }
//! ```
//!
//! Loop bodies are indentation-delimited; header sections are
//! semicolon-separated; `#` starts a comment; `@llm_hint(...)` decorators
//! attach to the following statement and stack.

mod ast;
pub mod generate;
mod lexer;
mod parser;
mod printer;
mod validate;

use thiserror::Error;

pub use ast::*;
pub use parser::parse_sketch;
pub use printer::{expr as print_expr, print_sketch};
pub use validate::{validate_sketch, validate_with, Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ParseError at line {line}, column {col}: expected {expected}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: String,
}

impl ParseError {
    pub fn new(line: usize, col: usize, expected: impl Into<String>) -> ParseError {
        ParseError { line, col, expected: expected.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SketchError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("UnknownHint at line {line}, column {col}: \"{tag}\" is not in the hint vocabulary")]
    UnknownHint { line: usize, col: usize, tag: String },
    #[error("UndeclaredSymbol at line {line}: `{name}` is not declared")]
    UndeclaredSymbol { line: usize, name: String },
    #[error("sketch body must contain at least one statement")]
    EmptyBody,
    #[error("`{0}` is not a valid sketch name")]
    InvalidName(String),
    #[error("sketch failed validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Parses and validates in one step; the form used to gate agent output.
pub fn parse_and_validate(text: &str) -> Result<Sketch, SketchError> {
    let s = parse_sketch(text)?;
    let diags = validate_sketch(&s);
    if diags.is_empty() {
        Ok(s)
    } else {
        Err(SketchError::Invalid(diags))
    }
}

/// Two-pass RMSNorm over axis `F`, tiled along `D1`.
pub const RMS_NORM_SKETCH: &str = r#"sketch rms_norm_optimized {
  symbols: B, F, D1, D2;
  tensors: X[B, F, D1, D2]: f32; Y[B, F, D1, D2]: f32;
  constexpr: eps, TILE_SIZE;

  # Reduce parallel dimensions, only parallelize on batch and D1 dimensions
  @llm_hint("parallel", "coreidx")
  for b in range(B):
    @llm_hint("parallel", "coreidx")
    for d1_outer in range(0, ceil(D1, TILE_SIZE)):

      # Allocate memory for each D2 dimension
      square_sum = alloc([TILE_SIZE, D2], llm_hint=["fast", "accumulator", "init_zero"])

      # First pass: compute sum of squares, fully unroll on D2 dimension
      @llm_hint("pipeline")
      for f in range(F):
        # Load entire row data, reduce memory access count
        x_row = alloc([TILE_SIZE, D2], llm_hint=["fast", "input_cache"])
        load(X[b, f, d1_outer*TILE_SIZE:(d1_outer+1)*TILE_SIZE, 0:D2] -> x_row)

        # Compute square and accumulate
        square_row = alloc([TILE_SIZE, D2], llm_hint=["fastest", "temp_workspace"])
        mul(x_row, x_row, square_row)
        add(square_sum, square_row, square_sum)

      # Compute RMS
      mean_row = alloc([TILE_SIZE, D2], llm_hint=["fastest", "temp_workspace"])
      rms_row = alloc([TILE_SIZE, D2], llm_hint=["fastest", "temp_workspace"])
      div(square_sum, F, mean_row)
      add(mean_row, eps, mean_row)
      sqrt(mean_row, rms_row)

      # Second pass: normalize and store
      @llm_hint("pipeline")
      for f in range(F):
        # Load entire row of input data
        x_row = alloc([TILE_SIZE, D2], llm_hint=["fast", "input_cache"])
        load(X[b, f, d1_outer*TILE_SIZE:(d1_outer+1)*TILE_SIZE, 0:D2] -> x_row)

        # Normalization computation
        y_row = alloc([TILE_SIZE, D2], llm_hint=["fast", "output_buffer"])
        div(x_row, rms_row, y_row)

        # Store entire row result
        store(y_row -> Y[b, f, d1_outer*TILE_SIZE:(d1_outer+1)*TILE_SIZE, 0:D2])
}
"#;
