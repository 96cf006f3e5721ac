//! TOML configuration with `${VAR}` interpolation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kagent_core::agents::ProviderConfig;
use kagent_core::evolve::EvolveConfig;
use kagent_core::retrieval::RetrievalConfig;
use kagent_core::verify::{Tolerance, VerifyConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub backend: String,
    pub dsl: String,
    /// Either a docset directory or a root holding `<dsl>/<backend>/`.
    pub docset: Option<PathBuf>,
    pub database: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub max_iterations: u32,
    pub provider: ProviderConfig,
    pub verify: VerifySection,
    pub retrieval: RetrievalConfig,
    pub evolve: EvolveConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub warmup: usize,
    pub repetitions: usize,
    pub dynamic_instances: usize,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> VerifySection {
        let v = VerifyConfig::default();
        VerifySection { warmup: v.warmup, repetitions: v.repetitions, dynamic_instances: v.dynamic_instances, tau: None, epsilon: None }
    }
}

impl Default for Config {
    fn default() -> Config {
        Config {
            seed: 0,
            backend: "interp".into(),
            dsl: "sketch".into(),
            docset: None,
            database: None,
            work_dir: PathBuf::from("kagent-work"),
            max_iterations: 6,
            provider: ProviderConfig::default(),
            verify: VerifySection::default(),
            retrieval: RetrievalConfig::default(),
            evolve: EvolveConfig::default(),
        }
    }
}

/// Replaces every `${NAME}` with the environment variable's value. An unset
/// variable is an error so secrets never silently become empty.
pub fn interpolate(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else { bail!("unterminated `${{` in config") };
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            bail!("bad variable name `{name}` in config");
        }
        out.push_str(&lookup(name).with_context(|| format!("environment variable `{name}` is not set"))?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl Config {
    pub fn from_str_at(text: &str, base: &Path) -> Result<Config> {
        let text = interpolate(text, |n| std::env::var(n).ok())?;
        let mut c: Config = toml::from_str(&text).context("parsing config")?;
        c.resolve(base);
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Config::from_str_at(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Makes relative paths relative to the config file's directory.
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [self.docset.as_mut(), self.database.as_mut(), self.provider.transcript.as_mut()].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.work_dir);
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("tau", self.verify.tau), ("epsilon", self.verify.epsilon)] {
            if v.is_some_and(|x| !(x > 0.0)) {
                bail!("verify.{name} must be positive");
            }
        }
        if let Some(t) = &self.provider.transcript {
            if !t.exists() {
                bail!("provider transcript {} does not exist", t.display());
            }
        }
        if self.max_iterations == 0 {
            bail!("max_iterations must be at least 1");
        }
        Ok(())
    }

    pub fn verify_config(&self) -> VerifyConfig {
        let tolerance = match (self.verify.tau, self.verify.epsilon) {
            (None, None) => None,
            (tau, eps) => Some(Tolerance { tau: tau.unwrap_or(0.001), epsilon: eps.unwrap_or(1e-6) }),
        };
        VerifyConfig {
            warmup: self.verify.warmup,
            repetitions: self.verify.repetitions,
            dynamic_instances: self.verify.dynamic_instances,
            seed: self.seed,
            tolerance,
            work_dir: self.work_dir.clone(),
            ..VerifyConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let env = |n: &str| (n == "KEY").then(|| "s3cret".to_string());
        assert_eq!(interpolate("a = \"${KEY}\"\nb = 1", env).unwrap(), "a = \"s3cret\"\nb = 1");
        assert!(interpolate("${MISSING}", env).is_err());
        assert!(interpolate("${KEY", env).is_err());
        assert_eq!(interpolate("no vars", env).unwrap(), "no vars");
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let c = Config::from_str_at("work_dir = \"w\"\ndatabase = \"k.kdb\"\n[verify]\ntau = 0.01\n", Path::new("/tmp/cfg")).unwrap();
        assert_eq!(c.work_dir, Path::new("/tmp/cfg/w"));
        assert_eq!(c.database.as_deref(), Some(Path::new("/tmp/cfg/k.kdb")));
        assert_eq!(c.verify_config().tolerance.unwrap().tau, 0.01);
        assert!(Config::from_str_at("[verify]\ntau = -1.0\n", Path::new(".")).is_err());
        assert!(Config::from_str_at("bogus = 1\n", Path::new(".")).is_err());
    }
}
