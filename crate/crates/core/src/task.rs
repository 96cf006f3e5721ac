//! Operator specifications: what a kernel must compute and on which shapes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{bind_shapes, Binding, Tensor};
use crate::sketch::{parse_and_validate, Dtype, Number, Sketch, SketchError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Elementwise,
    Reduction,
    Normalization,
    TensorManipulation,
    Matmul,
    Indexing,
    Sorting,
    Fused,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Elementwise,
        Category::Reduction,
        Category::Normalization,
        Category::TensorManipulation,
        Category::Matmul,
        Category::Indexing,
        Category::Sorting,
        Category::Fused,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Elementwise => "elementwise",
            Category::Reduction => "reduction",
            Category::Normalization => "normalization",
            Category::TensorManipulation => "tensor_manipulation",
            Category::Matmul => "matmul",
            Category::Indexing => "indexing",
            Category::Sorting => "sorting",
            Category::Fused => "fused",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task `{task}`: reference sketch is invalid: {source}")]
    Reference { task: String, source: SketchError },
    #[error("task `{task}`: {message}")]
    Invalid { task: String, message: String },
    #[error("cannot read task file {path}: {message}")]
    Load { path: String, message: String },
}

/// One operator to generate a kernel for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub name: String,
    pub category: Category,
    #[serde(default)]
    pub description: String,
    pub dtype: Dtype,
    /// Reference sketch source; the interpreter's result on it is ground truth.
    pub reference: String,
    pub static_shapes: BTreeMap<String, i64>,
    /// Inclusive `[lo, hi]` per symbol for dynamic-shape tests.
    #[serde(default)]
    pub dynamic_ranges: BTreeMap<String, [i64; 2]>,
    #[serde(default)]
    pub constexpr: BTreeMap<String, Number>,
    /// Input generator per tensor: `uniform(lo, hi)` or `index(SYM)` for
    /// integer row indices below the value of `SYM`. Default `uniform(-1, 1)`.
    #[serde(default)]
    pub init: BTreeMap<String, String>,
}

/// Concrete symbol values for one test run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub symbols: BTreeMap<String, i64>,
    pub dynamic: bool,
}

impl OperatorSpec {
    pub fn from_toml(text: &str) -> Result<OperatorSpec, TaskError> {
        let spec: OperatorSpec = toml::from_str(text).map_err(|e| TaskError::Load { path: "<toml>".into(), message: e.to_string() })?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<OperatorSpec, TaskError> {
        let load_err = |message: String| TaskError::Load { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let spec: OperatorSpec = toml::from_str(&text).map_err(|e| load_err(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("operator spec serializes")
    }

    fn invalid(&self, message: impl Into<String>) -> TaskError {
        TaskError::Invalid { task: self.name.clone(), message: message.into() }
    }

    /// Checks manifest invariants and that the reference sketch validates.
    pub fn check(&self) -> Result<(), TaskError> {
        if self.name.trim().is_empty() {
            return Err(self.invalid("name is empty"));
        }
        for (sym, [lo, hi]) in &self.dynamic_ranges {
            if *lo < 1 || lo > hi {
                return Err(self.invalid(format!("dynamic range for {sym} must satisfy 1 <= lo <= hi")));
            }
        }
        let s = self.reference_sketch()?;
        for sym in &s.decls.symbols {
            if !self.static_shapes.contains_key(sym) {
                return Err(self.invalid(format!("static_shapes has no value for `{sym}`")));
            }
        }
        Ok(())
    }

    pub fn reference_sketch(&self) -> Result<Sketch, TaskError> {
        parse_and_validate(&self.reference).map_err(|source| TaskError::Reference { task: self.name.clone(), source })
    }

    pub fn static_instance(&self) -> Instance {
        Instance { symbols: self.static_shapes.clone(), dynamic: false }
    }

    /// `count` seeded draws from the dynamic ranges. Symbols without a range
    /// keep their static value. Identical seeds give identical instances.
    pub fn dynamic_instances(&self, seed: u64, count: usize) -> Vec<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(&self.name));
        (0..count)
            .map(|_| {
                let mut symbols = self.static_shapes.clone();
                for (sym, [lo, hi]) in &self.dynamic_ranges {
                    symbols.insert(sym.clone(), rng.random_range(*lo..=*hi));
                }
                Instance { symbols, dynamic: true }
            })
            .collect()
    }

    /// Binding with seeded inputs for every tensor the reference loads.
    pub fn binding(&self, inst: &Instance, seed: u64) -> Result<Binding, TaskError> {
        let s = self.reference_sketch()?;
        let mut b = Binding { symbol_values: inst.symbols.clone(), constexpr_values: self.constexpr.clone(), ..Binding::default() };
        let rs = bind_shapes(&s, &b).map_err(|e| self.invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(&self.name).rotate_left(17));
        for t in s.input_tensors() {
            let shape = rs.shapes[&t.name].clone();
            let rule = self.init.get(&t.name).map(String::as_str).unwrap_or("");
            let tensor = match parse_init(rule) {
                Some(Init::Index(sym)) => {
                    let hi = *inst.symbols.get(&sym).ok_or_else(|| self.invalid(format!("init refers to unknown symbol {sym}")))?;
                    Tensor::from_fn(t.dtype, shape, |_| rng.random_range(0..hi.max(1)) as f64)
                }
                Some(Init::Uniform(lo, hi)) => Tensor::random(t.dtype, shape, lo, hi, &mut rng),
                None if rule.is_empty() => {
                    if t.dtype == Dtype::I32 {
                        Tensor::random(t.dtype, shape, 0.0, 10.0, &mut rng)
                    } else {
                        Tensor::random(t.dtype, shape, -1.0, 1.0, &mut rng)
                    }
                }
                None => return Err(self.invalid(format!("unknown init rule `{rule}` for {}", t.name))),
            };
            b.tensor_values.insert(t.name.clone(), tensor);
        }
        Ok(b)
    }

    /// Structured feature summary used when no provider is available.
    pub fn features(&self) -> String {
        let (rank, computes) = match self.reference_sketch() {
            Ok(s) => (s.decls.tensors.iter().map(|t| t.dims.len()).max().unwrap_or(0), s.compute_functions().join(",")),
            Err(_) => (0, String::new()),
        };
        format!(
            "op_type={} name={} dtype={} rank={} computes=[{}] description={}",
            self.category,
            self.name,
            self.dtype,
            rank,
            computes,
            self.description.trim()
        )
    }

    /// Canonical shape description of the static instance.
    pub fn shape_text(&self) -> String {
        let dims: Vec<String> = match self.reference_sketch() {
            Ok(s) => s.decls.tensors.first().map_or(Vec::new(), |t| {
                t.dims.iter().map(|d| {
                    crate::interp::eval_expr(d, &|n| self.static_shapes.get(n).map(|&v| v as f64)).map_or_else(|_| crate::sketch::print_expr(d), |v| v.to_string())
                }).collect()
            }),
            Err(_) => Vec::new(),
        };
        shape_text(dims.len(), &dims.join(", "), self.dtype)
    }
}

/// `rank=R dims=[..] dtype=T layout=row_major`
pub fn shape_text(rank: usize, dims: &str, dtype: Dtype) -> String {
    format!("rank={rank} dims=[{dims}] dtype={dtype} layout=row_major")
}

enum Init {
    Uniform(f64, f64),
    Index(String),
}

fn parse_init(rule: &str) -> Option<Init> {
    let rule = rule.trim();
    let inner = |p: &str| rule.strip_prefix(p).and_then(|r| r.strip_prefix('(')).and_then(|r| r.strip_suffix(')'));
    if let Some(args) = inner("uniform") {
        let (a, b) = args.split_once(',')?;
        return Some(Init::Uniform(a.trim().parse().ok()?, b.trim().parse().ok()?));
    }
    inner("index").map(|s| Init::Index(s.trim().to_string()))
}

/// FNV-1a, used to derive per-name seeds.
pub fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Loads every `*.toml` under `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<OperatorSpec>, TaskError> {
    let rd = std::fs::read_dir(dir).map_err(|e| TaskError::Load { path: dir.display().to_string(), message: e.to_string() })?;
    let mut paths: Vec<_> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect();
    paths.sort();
    paths.iter().map(|p| OperatorSpec::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ADD: &str = r#"
name = "add"
category = "elementwise"
dtype = "f32"
reference = """
sketch add {
  symbols: N;
  tensors: X[N]: f32; Y[N]: f32; Z[N]: f32;
  a = alloc([N])
  b = alloc([N])
  load(X[0:N] -> a)
  load(Y[0:N] -> b)
  add(a, b, a)
  store(a -> Z[0:N])
}
"""
static_shapes = { N = 64 }
dynamic_ranges = { N = [1, 200] }
"#;

    #[test]
    fn manifest_round_trip() {
        let t = OperatorSpec::from_toml(ADD).unwrap();
        assert_eq!(t.category, Category::Elementwise);
        let again = OperatorSpec::from_toml(&t.to_toml()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn dynamic_instances_are_seeded() {
        let t = OperatorSpec::from_toml(ADD).unwrap();
        let a = t.dynamic_instances(7, 5);
        assert_eq!(a, t.dynamic_instances(7, 5));
        assert_ne!(a, t.dynamic_instances(8, 5));
        assert!(a.iter().all(|i| (1..=200).contains(&i.symbols["N"])));
    }

    #[test]
    fn binding_fills_inputs_only() {
        let t = OperatorSpec::from_toml(ADD).unwrap();
        let b = t.binding(&t.static_instance(), 1).unwrap();
        assert_eq!(b.tensor_values.keys().collect::<Vec<_>>(), ["X", "Y"]);
        assert_eq!(b.tensor_values["X"].shape, vec![64]);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let bad = ADD.replace("[1, 200]", "[0, 200]");
        assert!(OperatorSpec::from_toml(&bad).is_err());
        let bad = ADD.replace("static_shapes = { N = 64 }", "static_shapes = {}");
        assert!(OperatorSpec::from_toml(&bad).is_err());
    }

    #[test]
    fn features_and_shape_text() {
        let t = OperatorSpec::from_toml(ADD).unwrap();
        assert!(t.features().contains("op_type=elementwise"));
        assert!(t.features().contains("rank=1"));
        assert_eq!(t.shape_text(), "rank=1 dims=[64] dtype=f32 layout=row_major");
    }
}
