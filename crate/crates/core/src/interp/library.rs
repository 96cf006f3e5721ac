//! Compute library shared by the interpreter and the sketch validator.
//!
//! Every function follows the destination-last convention: `inputs` holds the
//! leading arguments and `out` is overwritten. Buffers are `f32` working
//! storage; an `int` flag records whether the contents came from `i32` data.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use super::tensor::{numel, strides};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComputeError {
    #[error("UnknownFunction: `{0}` is not registered")]
    UnknownFunction(String),
    #[error("ShapeConformanceError in `{func}`: {message}")]
    ShapeConformance { func: String, message: String },
    #[error("dtype mismatch in `{func}`: {message}")]
    DtypeMismatch { func: String, message: String },
    #[error("bad argument to `{func}`: {message}")]
    BadArgument { func: String, message: String },
}

fn shape_err(func: &str, message: impl Into<String>) -> ComputeError {
    ComputeError::ShapeConformance { func: func.to_string(), message: message.into() }
}

fn arg_err(func: &str, message: impl Into<String>) -> ComputeError {
    ComputeError::BadArgument { func: func.to_string(), message: message.into() }
}

/// Local working buffer created by `alloc`.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub int: bool,
}

impl Buffer {
    pub fn zeros(shape: Vec<usize>) -> Buffer {
        let n = numel(&shape);
        Buffer { shape, data: vec![0.0; n], int: false }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Buffer {
        assert_eq!(numel(&shape), data.len(), "buffer data does not match shape");
        Buffer { shape, data, int: false }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Scalar(f64),
    Buffer(&'a Buffer),
}

impl Operand<'_> {
    fn scalar(&self) -> Option<f64> {
        match self {
            Operand::Scalar(x) => Some(*x),
            Operand::Buffer(_) => None,
        }
    }
}

/// A library function. Returns the number of work units performed, which the
/// interpreter's cost model consumes.
pub type ComputeFn = Arc<dyn Fn(&str, &[Operand<'_>], &mut Buffer) -> Result<u64, ComputeError> + Send + Sync>;

#[derive(Clone)]
struct Entry {
    arity: usize,
    f: ComputeFn,
}

#[derive(Clone, Default)]
pub struct ComputeLibrary {
    fns: BTreeMap<String, Entry>,
}

impl fmt::Debug for ComputeLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.fns.keys()).finish()
    }
}

impl ComputeLibrary {
    /// The built-in library.
    pub fn standard() -> &'static ComputeLibrary {
        static LIB: OnceLock<ComputeLibrary> = OnceLock::new();
        LIB.get_or_init(build_standard)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fns.keys().map(String::as_str)
    }

    /// Adds or replaces a function taking `arity` inputs plus the destination.
    pub fn register<F>(&mut self, name: &str, arity: usize, f: F)
    where
        F: Fn(&str, &[Operand<'_>], &mut Buffer) -> Result<u64, ComputeError> + Send + Sync + 'static,
    {
        self.fns.insert(name.to_string(), Entry { arity, f: Arc::new(f) });
    }

    pub fn arity(&self, name: &str) -> Option<usize> {
        self.fns.get(name).map(|e| e.arity)
    }

    pub fn apply(&self, name: &str, inputs: &[Operand<'_>], out: &mut Buffer) -> Result<u64, ComputeError> {
        let e = self.fns.get(name).ok_or_else(|| ComputeError::UnknownFunction(name.to_string()))?;
        if inputs.len() != e.arity {
            return Err(arg_err(name, format!("expected {} inputs plus a destination, got {}", e.arity, inputs.len())));
        }
        (e.f)(name, inputs, out)
    }
}

/// Applies a standard library function.
pub fn apply_compute(name: &str, inputs: &[Operand<'_>], out: &mut Buffer) -> Result<u64, ComputeError> {
    ComputeLibrary::standard().apply(name, inputs, out)
}

/// For each flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` under right-aligned broadcasting.
fn broadcast_map(func: &str, in_shape: &[usize], out_shape: &[usize]) -> Result<Vec<usize>, ComputeError> {
    if in_shape == out_shape {
        return Ok((0..numel(out_shape)).collect());
    }
    // Leading unit axes on the input never matter.
    let trimmed: Vec<usize> = in_shape.iter().copied().skip_while(|&d| d == 1).collect();
    if trimmed.len() > out_shape.len() {
        return Err(shape_err(func, format!("{in_shape:?} does not broadcast to {out_shape:?}")));
    }
    let pad = out_shape.len() - trimmed.len();
    let in_st = strides(&trimmed);
    let mut eff = vec![0usize; out_shape.len()];
    for (i, &d) in trimmed.iter().enumerate() {
        let o = out_shape[pad + i];
        if d == o {
            eff[pad + i] = in_st[i];
        } else if d != 1 {
            return Err(shape_err(func, format!("{in_shape:?} does not broadcast to {out_shape:?}")));
        }
    }
    let n = numel(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            flat += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            flat -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(map)
}

enum Src {
    Scalar(f32),
    Buf(Vec<f32>, Vec<usize>),
}

/// Shared driver for elementwise functions with scalar and right-aligned
/// broadcasting. `int_preserving` marks ops whose integer inputs give integer
/// outputs.
pub fn elementwise(
    func: &str,
    inputs: &[Operand<'_>],
    out: &mut Buffer,
    int_preserving: bool,
    f: impl Fn(&[f32]) -> f32,
) -> Result<u64, ComputeError> {
    let mut int_flags = inputs.iter().filter_map(|o| match o {
        Operand::Buffer(b) => Some(b.int),
        Operand::Scalar(_) => None,
    });
    let first = int_flags.next();
    if let Some(first) = first {
        if int_flags.any(|b| b != first) {
            return Err(ComputeError::DtypeMismatch {
                func: func.to_string(),
                message: "mixes integer and floating-point buffers".into(),
            });
        }
    }
    let all_int = first.unwrap_or(false)
        && inputs.iter().all(|o| o.scalar().is_none_or(|x| x.fract() == 0.0));
    let srcs = inputs
        .iter()
        .map(|o| match o {
            Operand::Scalar(x) => Ok(Src::Scalar(*x as f32)),
            Operand::Buffer(b) => Ok(Src::Buf(b.data.clone(), broadcast_map(func, &b.shape, &out.shape)?)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut args = vec![0f32; srcs.len()];
    for i in 0..out.data.len() {
        for (a, s) in args.iter_mut().zip(&srcs) {
            *a = match s {
                Src::Scalar(x) => *x,
                Src::Buf(d, m) => d[m[i]],
            };
        }
        out.data[i] = f(&args);
    }
    out.int = all_int && int_preserving;
    Ok(out.data.len() as u64)
}

fn axis_arg(func: &str, op: &Operand<'_>, rank: usize) -> Result<usize, ComputeError> {
    let x = op.scalar().ok_or_else(|| arg_err(func, "axis must be an integer literal or scalar"))?;
    if x.fract() != 0.0 {
        return Err(arg_err(func, format!("axis {x} is not an integer")));
    }
    let a = if x < 0.0 { rank as i64 + x as i64 } else { x as i64 };
    if a < 0 || a as usize >= rank {
        return Err(arg_err(func, format!("axis {x} out of range for rank {rank}")));
    }
    Ok(a as usize)
}

fn buffer_arg<'a>(func: &str, op: &Operand<'a>, what: &str) -> Result<&'a Buffer, ComputeError> {
    match op {
        Operand::Buffer(b) => Ok(b),
        Operand::Scalar(_) => Err(arg_err(func, format!("{what} must be a buffer"))),
    }
}

fn reduce(func: &str, inputs: &[Operand<'_>], out: &mut Buffer, init: f32, f: fn(f32, f32) -> f32) -> Result<u64, ComputeError> {
    let x = buffer_arg(func, &inputs[0], "input")?;
    let axis = axis_arg(func, &inputs[1], x.shape.len())?;
    let n = x.shape[axis];
    let outer: usize = x.shape[..axis].iter().product();
    let inner: usize = x.shape[axis + 1..].iter().product();
    if out.numel() != outer * inner {
        return Err(shape_err(func, format!("reducing {:?} over axis {axis} needs {} outputs, destination has {}", x.shape, outer * inner, out.numel())));
    }
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = init;
            for k in 0..n {
                acc = f(acc, x.data[(o * n + k) * inner + i]);
            }
            out.data[o * inner + i] = acc;
        }
    }
    out.int = x.int;
    Ok(x.numel() as u64)
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [m, n] => Some((*m, *n)),
        _ => None,
    }
}

fn gemm(func: &str, inputs: &[Operand<'_>], out: &mut Buffer) -> Result<u64, ComputeError> {
    let a = buffer_arg(func, &inputs[0], "left operand")?;
    let b = buffer_arg(func, &inputs[1], "right operand")?;
    let (m, k) = as_matrix(&a.shape).ok_or_else(|| shape_err(func, "left operand must be rank 1 or 2"))?;
    let (k2, n) = match b.shape.as_slice() {
        [k2, n] => (*k2, *n),
        _ => return Err(shape_err(func, "right operand must be rank 2")),
    };
    if k != k2 {
        return Err(shape_err(func, format!("inner dimensions differ: {:?} x {:?}", a.shape, b.shape)));
    }
    if out.numel() != m * n {
        return Err(shape_err(func, format!("destination must hold {m}x{n} values")));
    }
    if a.int != b.int {
        return Err(ComputeError::DtypeMismatch { func: func.into(), message: "operands differ in kind".into() });
    }
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0f32;
            for p in 0..k {
                acc += a.data[i * k + p] * b.data[p * n + j];
            }
            out.data[i * n + j] = acc;
        }
    }
    out.int = a.int;
    Ok((m * n * k) as u64)
}

fn transpose(func: &str, inputs: &[Operand<'_>], out: &mut Buffer) -> Result<u64, ComputeError> {
    let x = buffer_arg(func, &inputs[0], "input")?;
    let (m, n) = as_matrix(&x.shape).ok_or_else(|| shape_err(func, "input must be rank 1 or 2"))?;
    if out.numel() != m * n {
        return Err(shape_err(func, format!("destination must hold {n}x{m} values")));
    }
    for i in 0..m {
        for j in 0..n {
            out.data[j * m + i] = x.data[i * n + j];
        }
    }
    out.int = x.int;
    Ok((m * n) as u64)
}

fn gather_rows(func: &str, inputs: &[Operand<'_>], out: &mut Buffer) -> Result<u64, ComputeError> {
    let table = buffer_arg(func, &inputs[0], "table")?;
    let rows = *table.shape.first().ok_or_else(|| shape_err(func, "table has no rows"))?;
    let width = if rows == 0 { 0 } else { table.numel() / rows };
    let picks: Vec<f64> = match &inputs[1] {
        Operand::Scalar(x) => vec![*x],
        Operand::Buffer(b) => b.data.iter().map(|&x| x as f64).collect(),
    };
    if out.numel() != picks.len() * width {
        return Err(shape_err(func, format!("destination must hold {}x{width} values", picks.len())));
    }
    for (i, &p) in picks.iter().enumerate() {
        if p.fract() != 0.0 || p < 0.0 || p as usize >= rows {
            return Err(arg_err(func, format!("row index {p} outside 0..{rows}")));
        }
        let r = p as usize;
        out.data[i * width..(i + 1) * width].copy_from_slice(&table.data[r * width..(r + 1) * width]);
    }
    out.int = table.int;
    Ok(out.numel() as u64)
}

fn sort_desc(func: &str, inputs: &[Operand<'_>], out: &mut Buffer) -> Result<u64, ComputeError> {
    let x = buffer_arg(func, &inputs[0], "input")?;
    if out.numel() != x.numel() {
        return Err(shape_err(func, "destination must match the input size"));
    }
    let row = *x.shape.last().unwrap_or(&1);
    out.data.copy_from_slice(&x.data);
    if row > 0 {
        for chunk in out.data.chunks_mut(row) {
            chunk.sort_by(|a, b| b.total_cmp(a));
        }
    }
    out.int = x.int;
    let n = x.numel() as u64;
    Ok(n * (64 - (row as u64).leading_zeros() as u64).max(1))
}

fn build_standard() -> ComputeLibrary {
    let mut lib = ComputeLibrary::default();
    macro_rules! binary {
        ($name:literal, $int:expr, $f:expr) => {
            lib.register($name, 2, |n, i, o| elementwise(n, i, o, $int, |a| $f(a[0], a[1])));
        };
    }
    macro_rules! unary {
        ($name:literal, $int:expr, $f:expr) => {
            lib.register($name, 1, |n, i, o| elementwise(n, i, o, $int, |a| $f(a[0])));
        };
    }
    binary!("add", true, |a: f32, b: f32| a + b);
    binary!("sub", true, |a: f32, b: f32| a - b);
    binary!("mul", true, |a: f32, b: f32| a * b);
    binary!("div", false, |a: f32, b: f32| a / b);
    binary!("max", true, |a: f32, b: f32| a.max(b));
    binary!("min", true, |a: f32, b: f32| a.min(b));
    binary!("pow", false, |a: f32, b: f32| a.powf(b));
    unary!("copy", true, |a: f32| a);
    unary!("neg", true, |a: f32| -a);
    unary!("abs", true, |a: f32| a.abs());
    unary!("relu", true, |a: f32| a.max(0.0));
    unary!("sqrt", false, |a: f32| a.sqrt());
    unary!("rsqrt", false, |a: f32| 1.0 / a.sqrt());
    unary!("exp", false, |a: f32| a.exp());
    unary!("log", false, |a: f32| a.ln());
    unary!("tanh", false, |a: f32| a.tanh());
    unary!("sigmoid", false, |a: f32| 1.0 / (1.0 + (-a).exp()));
    unary!("silu", false, |a: f32| a / (1.0 + (-a).exp()));
    lib.register("reduce_sum", 2, |n, i, o| reduce(n, i, o, 0.0, |a, b| a + b));
    lib.register("reduce_max", 2, |n, i, o| reduce(n, i, o, f32::NEG_INFINITY, f32::max));
    lib.register("gemm", 2, gemm);
    lib.register("transpose", 1, transpose);
    lib.register("gather_rows", 2, gather_rows);
    lib.register("sort_desc", 1, sort_desc);
    lib
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(shape: &[usize], data: &[f32]) -> Buffer {
        Buffer::from_vec(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn floor_set_is_registered() {
        let lib = ComputeLibrary::standard();
        for f in ["add", "sub", "mul", "div", "sqrt", "exp", "relu", "max", "min", "reduce_sum", "reduce_max", "gemm"] {
            assert!(lib.contains(f), "{f}");
        }
    }

    #[test]
    fn gemm_identity() {
        let id = buf(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let a = buf(&[2, 2], &[1.5, -2.0, 3.0, 4.25]);
        let mut out = Buffer::zeros(vec![2, 2]);
        apply_compute("gemm", &[Operand::Buffer(&id), Operand::Buffer(&a)], &mut out).unwrap();
        assert_eq!(out.data, a.data);
    }

    #[test]
    fn reduce_sum_axis0() {
        let x = buf(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let mut out = Buffer::zeros(vec![2]);
        apply_compute("reduce_sum", &[Operand::Buffer(&x), Operand::Scalar(0.0)], &mut out).unwrap();
        assert_eq!(out.data, vec![4.0, 6.0]);
        apply_compute("reduce_max", &[Operand::Buffer(&x), Operand::Scalar(-1.0)], &mut out).unwrap();
        assert_eq!(out.data, vec![2.0, 4.0]);
    }

    #[test]
    fn relu_definition() {
        let x = buf(&[3], &[-1.0, 0.0, 2.0]);
        let mut out = Buffer::zeros(vec![3]);
        apply_compute("relu", &[Operand::Buffer(&x)], &mut out).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn scalar_and_row_broadcast() {
        let x = buf(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let row = buf(&[3], &[10.0, 20.0, 30.0]);
        let col = buf(&[2, 1], &[100.0, 200.0]);
        let mut out = Buffer::zeros(vec![2, 3]);
        apply_compute("add", &[Operand::Buffer(&x), Operand::Buffer(&row)], &mut out).unwrap();
        assert_eq!(out.data, vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        apply_compute("add", &[Operand::Buffer(&x), Operand::Buffer(&col)], &mut out).unwrap();
        assert_eq!(out.data, vec![101.0, 102.0, 103.0, 204.0, 205.0, 206.0]);
        apply_compute("mul", &[Operand::Scalar(2.0), Operand::Buffer(&x)], &mut out).unwrap();
        assert_eq!(out.data, vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn conformance_errors() {
        let x = buf(&[4], &[0.0; 4]);
        let mut out = Buffer::zeros(vec![3]);
        assert!(matches!(
            apply_compute("add", &[Operand::Buffer(&x), Operand::Scalar(1.0)], &mut out),
            Err(ComputeError::ShapeConformance { .. })
        ));
        assert_eq!(
            apply_compute("frob", &[], &mut out),
            Err(ComputeError::UnknownFunction("frob".into()))
        );
        let a = buf(&[2, 3], &[0.0; 6]);
        let mut o = Buffer::zeros(vec![4]);
        assert!(matches!(
            apply_compute("gemm", &[Operand::Buffer(&a), Operand::Buffer(&a)], &mut o),
            Err(ComputeError::ShapeConformance { .. })
        ));
    }

    #[test]
    fn mixed_kinds_are_rejected() {
        let mut i = buf(&[2], &[1.0, 2.0]);
        i.int = true;
        let f = buf(&[2], &[0.5, 0.5]);
        let mut out = Buffer::zeros(vec![2]);
        assert!(matches!(
            apply_compute("add", &[Operand::Buffer(&i), Operand::Buffer(&f)], &mut out),
            Err(ComputeError::DtypeMismatch { .. })
        ));
        apply_compute("add", &[Operand::Buffer(&i), Operand::Scalar(1.0)], &mut out).unwrap();
        assert!(out.int);
    }

    #[test]
    fn gather_transpose_sort() {
        let t = buf(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx = buf(&[2], &[2.0, 0.0]);
        let mut out = Buffer::zeros(vec![2, 2]);
        apply_compute("gather_rows", &[Operand::Buffer(&t), Operand::Buffer(&idx)], &mut out).unwrap();
        assert_eq!(out.data, vec![5.0, 6.0, 1.0, 2.0]);

        let mut tr = Buffer::zeros(vec![2, 3]);
        apply_compute("transpose", &[Operand::Buffer(&t)], &mut tr).unwrap();
        assert_eq!(tr.data, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);

        let x = buf(&[2, 3], &[3.0, 1.0, 2.0, -1.0, 7.0, 0.0]);
        let mut s = Buffer::zeros(vec![2, 3]);
        apply_compute("sort_desc", &[Operand::Buffer(&x)], &mut s).unwrap();
        assert_eq!(s.data, vec![3.0, 2.0, 1.0, 7.0, 0.0, -1.0]);
    }

    #[test]
    fn registration_extends_a_copy() {
        let mut lib = ComputeLibrary::standard().clone();
        lib.register("square", 1, |n, i, o| elementwise(n, i, o, true, |a| a[0] * a[0]));
        let x = buf(&[2], &[3.0, -2.0]);
        let mut out = Buffer::zeros(vec![2]);
        lib.apply("square", &[Operand::Buffer(&x)], &mut out).unwrap();
        assert_eq!(out.data, vec![9.0, 4.0]);
        assert!(!ComputeLibrary::standard().contains("square"));
    }
}
