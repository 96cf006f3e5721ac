use crate::task::OperatorSpec;

/// Manifests of the builtin suite, one or more per category.
pub const BUILTIN_MANIFESTS: [(&str, &str); 9] = [
    ("add", include_str!("../../../../bench/tasks/add.toml")),
    ("relu", include_str!("../../../../bench/tasks/relu.toml")),
    ("row_sum", include_str!("../../../../bench/tasks/row_sum.toml")),
    ("rms_norm", include_str!("../../../../bench/tasks/rms_norm.toml")),
    ("transpose", include_str!("../../../../bench/tasks/transpose.toml")),
    ("gemm", include_str!("../../../../bench/tasks/gemm.toml")),
    ("gather_rows", include_str!("../../../../bench/tasks/gather_rows.toml")),
    ("topk", include_str!("../../../../bench/tasks/topk.toml")),
    ("silu_mul", include_str!("../../../../bench/tasks/silu_mul.toml")),
];

/// Desk-scale tasks covering every category.
pub fn builtin_suite() -> Vec<OperatorSpec> {
    BUILTIN_MANIFESTS
        .iter()
        .map(|(name, text)| OperatorSpec::from_toml(text).unwrap_or_else(|e| panic!("builtin task {name}: {e}")))
        .collect()
}

pub fn builtin_task(name: &str) -> Option<OperatorSpec> {
    builtin_suite().into_iter().find(|t| t.name == name)
}
