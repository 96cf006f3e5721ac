use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::bind::{bind_shapes, eval_expr, BindError, ExprError, ResolvedSketch};
use super::library::{Buffer, ComputeError, ComputeLibrary, Operand};
use super::tensor::{strides, Binding, Tensor};
use crate::sketch::{Arg, Hint, HintSet, SliceAxis, Statement, StmtKind, TensorSlice};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeEvalError {
    #[error("line {line}: negative index {value} on axis {axis} of `{tensor}`")]
    NegativeIndex { line: usize, tensor: String, axis: usize, value: i64 },
    #[error("line {line}: index {value} out of range for axis {axis} of `{tensor}` (extent {extent})")]
    IndexOutOfRange { line: usize, tensor: String, axis: usize, value: i64, extent: usize },
    #[error("line {line}: zero-extent slice on axis {axis} of `{tensor}`")]
    EmptySlice { line: usize, tensor: String, axis: usize },
    #[error("line {line}: {message}")]
    Shape { line: usize, message: String },
    #[error("line {line}: `{name}` is not an allocated buffer")]
    NoBuffer { line: usize, name: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: ExprError },
    #[error("line {line}: {source}")]
    Compute { line: usize, source: ComputeError },
}

impl RuntimeEvalError {
    pub fn is_dtype_mismatch(&self) -> bool {
        matches!(self, RuntimeEvalError::Compute { source: ComputeError::DtypeMismatch { .. }, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("RuntimeEvalError at {0}")]
    Eval(#[from] RuntimeEvalError),
}

/// Abstract work performed by an evaluation.
///
/// Each executed statement costs one unit, each loop iteration one unit, each
/// compute work item one unit and each element moved by a load or store two
/// units. Hints scale these: a `parallel` loop divides its body by
/// `min(trips, 8)`, `vectorize` divides compute by 4, `pipeline` halves
/// memory traffic and `unroll` drops per-iteration overhead. Values are
/// unaffected by hints; only the cost is.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cost {
    pub units: f64,
}

impl Cost {
    /// One unit is modelled as one nanosecond.
    pub fn latency_us(&self) -> f64 {
        self.units / 1000.0
    }
}

/// Outputs of one evaluation plus its modelled cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outputs: BTreeMap<String, Tensor>,
    pub cost: Cost,
}

/// Evaluates with the standard compute library and returns the final value
/// of every tensor written by a `store`. Hints never change the result.
pub fn eval_sketch(rs: &ResolvedSketch, b: &Binding) -> Result<BTreeMap<String, Tensor>, RuntimeEvalError> {
    eval_with(rs, b, ComputeLibrary::standard()).map(|e| e.outputs)
}

pub fn eval_with(rs: &ResolvedSketch, b: &Binding, lib: &ComputeLibrary) -> Result<Evaluation, RuntimeEvalError> {
    let mut tensors = BTreeMap::new();
    for t in &rs.sketch.decls.tensors {
        let v = match b.tensor_values.get(&t.name) {
            Some(v) => v.clone(),
            None => Tensor::zeros(t.dtype, rs.shapes[&t.name].clone()),
        };
        tensors.insert(t.name.clone(), v);
    }
    let mut ev = Evaluator {
        rs,
        lib,
        ints: HashMap::new(),
        tensors,
        buffers: HashMap::new(),
        units: 0.0,
    };
    ev.block(&rs.sketch.body, Ctx { scale: 1.0, vectorize: false, pipeline: false })?;
    let written: Vec<String> = rs.sketch.output_tensors().iter().map(|t| t.name.clone()).collect();
    let outputs = ev.tensors.into_iter().filter(|(k, _)| written.contains(k)).collect();
    Ok(Evaluation { outputs, cost: Cost { units: ev.units } })
}

/// Binds and evaluates in one step.
pub fn run_sketch(s: &crate::sketch::Sketch, b: &Binding) -> Result<Evaluation, InterpError> {
    let rs = bind_shapes(s, b)?;
    Ok(eval_with(&rs, b, ComputeLibrary::standard())?)
}

#[derive(Clone, Copy)]
struct Ctx {
    scale: f64,
    vectorize: bool,
    pipeline: bool,
}

impl Ctx {
    fn with(self, h: &HintSet) -> Ctx {
        Ctx {
            scale: self.scale,
            vectorize: self.vectorize || h.contains(&Hint::Vectorize),
            pipeline: self.pipeline || h.contains(&Hint::Pipeline),
        }
    }
}

struct Evaluator<'a> {
    rs: &'a ResolvedSketch,
    lib: &'a ComputeLibrary,
    ints: HashMap<String, i64>,
    tensors: BTreeMap<String, Tensor>,
    buffers: HashMap<String, Buffer>,
    units: f64,
}

/// Concrete region of a tensor selected by a slice.
struct Region {
    starts: Vec<usize>,
    extents: Vec<usize>,
    /// Extents of range axes only; index axes are dropped.
    kept: Vec<usize>,
}

impl Evaluator<'_> {
    fn int(&self, e: &crate::sketch::Expr, line: usize) -> Result<i64, RuntimeEvalError> {
        let lookup = |n: &str| self.ints.get(n).map(|&v| v as f64).or_else(|| self.rs.scalars.get(n).copied());
        eval_expr(e, &lookup).map_err(|source| RuntimeEvalError::Expr { line, source })
    }

    fn block(&mut self, stmts: &[Statement], ctx: Ctx) -> Result<(), RuntimeEvalError> {
        for st in stmts {
            self.units += ctx.scale;
            self.statement(st, ctx.with(&st.hints))?;
        }
        Ok(())
    }

    fn statement(&mut self, st: &Statement, ctx: Ctx) -> Result<(), RuntimeEvalError> {
        let line = st.line;
        match &st.kind {
            StmtKind::For { index, range, body } => {
                let start = range.start.as_ref().map_or(Ok(0), |e| self.int(e, line))?;
                let stop = self.int(&range.stop, line)?;
                let step = range.step.as_ref().map_or(Ok(1), |e| self.int(e, line))?;
                if step <= 0 {
                    return Err(RuntimeEvalError::Shape { line, message: format!("range step {step} must be positive") });
                }
                let trips = super::bind::trip_count(start, stop, step);
                let mut inner = ctx;
                if st.hints.contains(&Hint::Parallel) && trips > 0 {
                    inner.scale /= trips.min(8) as f64;
                }
                let overhead = if st.hints.contains(&Hint::Unroll) { 0.0 } else { inner.scale };
                let saved = self.ints.get(index).copied();
                let mut i = start;
                while i < stop {
                    self.ints.insert(index.clone(), i);
                    self.units += overhead;
                    self.block(body, inner)?;
                    i += step;
                }
                match saved {
                    Some(v) => self.ints.insert(index.clone(), v),
                    None => self.ints.remove(index),
                };
            }
            StmtKind::Alloc { dest, shape } => {
                let mut dims = Vec::new();
                for e in shape {
                    let v = self.int(e, line)?;
                    if v <= 0 {
                        return Err(RuntimeEvalError::Shape { line, message: format!("alloc `{dest}` has extent {v}") });
                    }
                    dims.push(v as usize);
                }
                self.buffers.insert(dest.clone(), Buffer::zeros(dims));
            }
            StmtKind::Load { src, dest } => {
                let region = self.region(src, line)?;
                let t = &self.tensors[&src.tensor];
                let buf = self.buffers.get_mut(dest).ok_or_else(|| RuntimeEvalError::NoBuffer { line, name: dest.clone() })?;
                let map = placement(&region, &buf.shape, line)?;
                let tst = strides(&t.shape);
                for_each_index(&region.extents, |k, idx| {
                    let flat: usize = idx.iter().zip(&region.starts).zip(&tst).map(|((i, s), st)| (i + s) * st).sum();
                    buf.data[map[k]] = t.data[flat] as f32;
                });
                buf.int = t.dtype == crate::sketch::Dtype::I32;
                let n = region.extents.iter().product::<usize>() as f64;
                self.units += 2.0 * n * ctx.scale * if ctx.pipeline { 0.5 } else { 1.0 };
            }
            StmtKind::Store { src, dest } => {
                let region = self.region(dest, line)?;
                let buf = self.buffers.get(src).ok_or_else(|| RuntimeEvalError::NoBuffer { line, name: src.clone() })?;
                let map = placement(&region, &buf.shape, line)?;
                let t = self.tensors.get_mut(&dest.tensor).unwrap();
                let tst = strides(&t.shape);
                let starts = region.starts.clone();
                for_each_index(&region.extents, |k, idx| {
                    let flat: usize = idx.iter().zip(&starts).zip(&tst).map(|((i, s), st)| (i + s) * st).sum();
                    t.set(flat, buf.data[map[k]] as f64);
                });
                let n = region.extents.iter().product::<usize>() as f64;
                self.units += 2.0 * n * ctx.scale * if ctx.pipeline { 0.5 } else { 1.0 };
            }
            StmtKind::Compute { func, args } => {
                let Some((Arg::Name(out_name), inputs)) = args.split_last() else {
                    return Err(RuntimeEvalError::Shape { line, message: format!("`{func}` has no destination buffer") });
                };
                // Inputs are copied so the destination may alias any of them.
                let mut owned: Vec<Result<Buffer, f64>> = Vec::with_capacity(inputs.len());
                for a in inputs {
                    owned.push(match a {
                        Arg::Number(n) => Err(n.as_f64()),
                        Arg::Name(n) => {
                            if let Some(b) = self.buffers.get(n) {
                                Ok(b.clone())
                            } else if let Some(&i) = self.ints.get(n) {
                                Err(i as f64)
                            } else if let Some(&x) = self.rs.scalars.get(n) {
                                Err(x)
                            } else {
                                return Err(RuntimeEvalError::NoBuffer { line, name: n.clone() });
                            }
                        }
                    });
                }
                let ops: Vec<Operand<'_>> = owned
                    .iter()
                    .map(|o| match o {
                        Ok(b) => Operand::Buffer(b),
                        Err(x) => Operand::Scalar(*x),
                    })
                    .collect();
                let out = self.buffers.get_mut(out_name).ok_or_else(|| RuntimeEvalError::NoBuffer { line, name: out_name.clone() })?;
                let work = self.lib.apply(func, &ops, out).map_err(|source| RuntimeEvalError::Compute { line, source })?;
                self.units += work as f64 * ctx.scale * if ctx.vectorize { 0.25 } else { 1.0 };
            }
        }
        Ok(())
    }

    /// Resolves a slice, clamping range ends to the tensor extent.
    fn region(&self, sl: &TensorSlice, line: usize) -> Result<Region, RuntimeEvalError> {
        let shape = &self.rs.shapes[&sl.tensor];
        if sl.axes.len() != shape.len() {
            return Err(RuntimeEvalError::Shape {
                line,
                message: format!("slice of `{}` has {} axes, tensor rank is {}", sl.tensor, sl.axes.len(), shape.len()),
            });
        }
        let mut r = Region { starts: Vec::new(), extents: Vec::new(), kept: Vec::new() };
        for (axis, (ax, &extent)) in sl.axes.iter().zip(shape).enumerate() {
            let neg = |value| RuntimeEvalError::NegativeIndex { line, tensor: sl.tensor.clone(), axis, value };
            match ax {
                SliceAxis::Index(e) => {
                    let v = self.int(e, line)?;
                    if v < 0 {
                        return Err(neg(v));
                    }
                    if v as usize >= extent {
                        return Err(RuntimeEvalError::IndexOutOfRange { line, tensor: sl.tensor.clone(), axis, value: v, extent });
                    }
                    r.starts.push(v as usize);
                    r.extents.push(1);
                }
                SliceAxis::Range(lo, hi) => {
                    let lo = self.int(lo, line)?;
                    let hi = self.int(hi, line)?;
                    if lo < 0 {
                        return Err(neg(lo));
                    }
                    let hi = hi.min(extent as i64);
                    if hi <= lo {
                        return Err(RuntimeEvalError::EmptySlice { line, tensor: sl.tensor.clone(), axis });
                    }
                    r.starts.push(lo as usize);
                    r.extents.push((hi - lo) as usize);
                    r.kept.push((hi - lo) as usize);
                }
            }
        }
        Ok(r)
    }
}

/// Maps each element of the region (in row-major order) to a flat buffer
/// offset. Region axes are right-aligned with buffer axes and placed at the
/// buffer's leading corner, so a clamped partial tile fills a prefix.
fn placement(region: &Region, buf_shape: &[usize], line: usize) -> Result<Vec<usize>, RuntimeEvalError> {
    let mut kept: Vec<usize> = region.kept.clone();
    while kept.len() > buf_shape.len() && kept.first() == Some(&1) {
        kept.remove(0);
    }
    let misfit = || RuntimeEvalError::Shape {
        line,
        message: format!("slice region {:?} does not fit buffer {:?}", region.kept, buf_shape),
    };
    if kept.len() > buf_shape.len() {
        return Err(misfit());
    }
    let pad = buf_shape.len() - kept.len();
    let mut full = vec![1usize; pad];
    full.extend(&kept);
    if full.iter().zip(buf_shape).any(|(r, b)| r > b) {
        return Err(misfit());
    }
    let bst = strides(buf_shape);
    let mut map = Vec::with_capacity(full.iter().product());
    for_each_index(&full, |_, idx| map.push(idx.iter().zip(&bst).map(|(i, s)| i * s).sum()));
    Ok(map)
}

/// Calls `f(k, idx)` for every multi-index of `extents` in row-major order.
fn for_each_index(extents: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let n: usize = extents.iter().product();
    let mut idx = vec![0usize; extents.len()];
    for k in 0..n {
        f(k, &idx);
        for ax in (0..extents.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < extents[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
