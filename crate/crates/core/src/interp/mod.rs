//! Reference interpreter for sketches. It is the correctness oracle for every
//! backend and defines what each compute library function means.

mod bind;
mod eval;
mod library;
mod tensor;
pub mod ten;

pub use bind::{bind_shapes, eval_expr, symbols, trip_count, with_constexpr, BindError, ExprError, LoopTrip, ResolvedSketch};
pub use eval::{eval_sketch, eval_with, run_sketch, Cost, Evaluation, InterpError, RuntimeEvalError};
pub use library::{apply_compute, elementwise, Buffer, ComputeError, ComputeFn, ComputeLibrary, Operand};
pub use tensor::{numel, round_to, strides, Binding, Tensor};
