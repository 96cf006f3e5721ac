//! Seeded generator of random, valid sketches for property tests and fuzzing.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ast::*;

const SYMBOLS: [&str; 5] = ["N", "M", "K", "B", "D"];
const BINARY: [&str; 6] = ["add", "sub", "mul", "div", "max", "min"];
const UNARY: [&str; 4] = ["sqrt", "exp", "relu", "copy"];

/// Builds a random sketch that parses, validates and round-trips.
pub fn random_sketch(seed: u64) -> Sketch {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), loops: 0, bufs: 0 };
    g.sketch(seed)
}

struct Gen {
    rng: ChaCha8Rng,
    loops: usize,
    bufs: usize,
}

#[derive(Clone, Default)]
struct Env {
    scalars: Vec<String>,
    loops: Vec<String>,
    buffers: Vec<String>,
    written: Vec<String>,
}

impl Gen {
    fn sketch(&mut self, seed: u64) -> Sketch {
        let nsym = self.rng.random_range(1..=3);
        let symbols: Vec<String> = SYMBOLS[..nsym].iter().map(|s| s.to_string()).collect();
        let mut constexpr = Vec::new();
        for i in 0..self.rng.random_range(0..=2) {
            let default = match self.rng.random_range(0..3) {
                0 => None,
                1 => Some(Number::Int(self.rng.random_range(1..16))),
                _ => Some(Number::Float(self.rng.random_range(-4i32..4) as f64 * 0.25 + 1e-3)),
            };
            constexpr.push(ConstDecl { name: format!("C{i}"), default });
        }
        let mut scalars = symbols.clone();
        scalars.extend(constexpr.iter().map(|c| c.name.clone()));

        let mut tensors = Vec::new();
        for i in 0..self.rng.random_range(1..=3) {
            let rank = self.rng.random_range(1..=3);
            let dims = (0..rank).map(|_| self.dim_expr(&symbols)).collect();
            let dtype = *[Dtype::F16, Dtype::F32, Dtype::I32].choose(&mut self.rng).unwrap();
            tensors.push(TensorSpec { name: format!("T{i}"), dims, dtype });
        }
        let decls = Declarations { symbols, tensors, constexpr };
        let env = Env { scalars, ..Env::default() };
        let mut body = self.block(&decls, env, 0);
        if body.is_empty() {
            body.push(self.alloc(&mut Env::default()));
        }
        Sketch { name: format!("gen_{seed}"), decls, body }
    }

    fn dim_expr(&mut self, symbols: &[String]) -> Expr {
        let s = Expr::var(symbols.choose(&mut self.rng).unwrap().clone());
        match self.rng.random_range(0..4) {
            0 => Expr::Int(self.rng.random_range(1..9)),
            1 => Expr::mul(s, Expr::Int(self.rng.random_range(1..4))),
            2 => Expr::add(s, Expr::var(symbols[0].clone())),
            _ => s,
        }
    }

    fn expr(&mut self, env: &Env, depth: usize) -> Expr {
        let mut names = env.scalars.clone();
        names.extend(env.loops.iter().cloned());
        if depth >= 2 || self.rng.random_bool(0.4) {
            return if self.rng.random_bool(0.3) {
                Expr::Int(self.rng.random_range(-3..10))
            } else {
                Expr::var(names.choose(&mut self.rng).unwrap().clone())
            };
        }
        let a = self.expr(env, depth + 1);
        let b = self.expr(env, depth + 1);
        match self.rng.random_range(0..5) {
            0 => Expr::add(a, b),
            1 => Expr::sub(a, b),
            2 => Expr::mul(a, b),
            3 => Expr::div(a, b),
            _ => Expr::ceil(a, b),
        }
    }

    fn hints(&mut self, pool: &[Hint]) -> HintSet {
        let n = self.rng.random_range(0..=2);
        let mut hs: HintSet = pool.choose_multiple(&mut self.rng, n).cloned().collect();
        if self.rng.random_bool(0.05) {
            hs.insert(Hint::Extension("x-vendor".into()));
        }
        hs
    }

    fn alloc(&mut self, env: &mut Env) -> Statement {
        let dest = format!("buf{}", self.bufs);
        self.bufs += 1;
        let rank = self.rng.random_range(1..=2);
        let shape = (0..rank).map(|_| self.expr(env, 1)).collect();
        env.buffers.push(dest.clone());
        let hints = self.hints(&[Hint::Fast, Hint::Fastest, Hint::Accumulator, Hint::InitZero, Hint::TempWorkspace]);
        Statement { kind: StmtKind::Alloc { dest, shape }, hints, line: 0 }
    }

    fn slice(&mut self, t: &TensorSpec, env: &Env) -> TensorSlice {
        let axes = t
            .dims
            .iter()
            .map(|_| {
                if self.rng.random_bool(0.5) {
                    SliceAxis::Index(self.expr(env, 1))
                } else {
                    SliceAxis::Range(self.expr(env, 1), self.expr(env, 1))
                }
            })
            .collect();
        TensorSlice { tensor: t.name.clone(), axes }
    }

    fn block(&mut self, d: &Declarations, mut env: Env, depth: usize) -> Vec<Statement> {
        let mut out = Vec::new();
        let n = self.rng.random_range(1..=4);
        for _ in 0..n {
            let choice = self.rng.random_range(0..6);
            let st = match choice {
                0 if depth < 3 => {
                    let index = format!("i{}", self.loops);
                    self.loops += 1;
                    let stop = self.expr(&env, 0);
                    let range = match self.rng.random_range(0..3) {
                        0 => Range { start: None, stop, step: None },
                        1 => Range { start: Some(self.expr(&env, 1)), stop, step: None },
                        _ => Range { start: Some(Expr::Int(0)), stop, step: Some(Expr::Int(self.rng.random_range(1..4))) },
                    };
                    let mut inner = env.clone();
                    inner.loops.push(index.clone());
                    let body = self.block(d, inner, depth + 1);
                    let hints = self.hints(&[Hint::Parallel, Hint::CoreIdx, Hint::GridIdx, Hint::Pipeline, Hint::Unroll, Hint::Vectorize]);
                    Statement { kind: StmtKind::For { index, range, body }, hints, line: 0 }
                }
                1 if !env.buffers.is_empty() => {
                    let t = d.tensors.choose(&mut self.rng).unwrap().clone();
                    let dest = env.buffers.choose(&mut self.rng).unwrap().clone();
                    env.written.push(dest.clone());
                    let src = self.slice(&t, &env);
                    Statement::new(StmtKind::Load { src, dest })
                        .with_hints(self.hints(&[Hint::Pipeline, Hint::Vectorize]).tags)
                }
                2 | 3 if !env.buffers.is_empty() => {
                    let out_buf = env.buffers.choose(&mut self.rng).unwrap().clone();
                    let unary = self.rng.random_bool(0.3);
                    let func = if unary { UNARY.choose(&mut self.rng) } else { BINARY.choose(&mut self.rng) }
                        .unwrap()
                        .to_string();
                    let arity = if unary { 1 } else { 2 };
                    let mut args = Vec::new();
                    for _ in 0..arity {
                        args.push(match self.rng.random_range(0..4) {
                            0 => Arg::Number(Number::Float(self.rng.random_range(-8i32..8) as f64 * 0.5)),
                            1 => Arg::Number(Number::Int(self.rng.random_range(-5..5))),
                            2 if !env.scalars.is_empty() => Arg::Name(env.scalars.choose(&mut self.rng).unwrap().clone()),
                            _ => Arg::Name(env.buffers.choose(&mut self.rng).unwrap().clone()),
                        });
                    }
                    args.push(Arg::Name(out_buf.clone()));
                    env.written.push(out_buf);
                    Statement::new(StmtKind::Compute { func, args })
                }
                4 if !env.written.is_empty() => {
                    let t = d.tensors.choose(&mut self.rng).unwrap().clone();
                    let src = env.written.choose(&mut self.rng).unwrap().clone();
                    let dest = self.slice(&t, &env);
                    Statement::new(StmtKind::Store { src, dest })
                }
                _ => self.alloc(&mut env),
            };
            // A fresh alloc resets the written state of its buffer.
            if let StmtKind::Alloc { dest, .. } = &st.kind {
                env.written.retain(|w| w != dest);
            }
            out.push(st);
        }
        out
    }
}
