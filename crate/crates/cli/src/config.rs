//! JSON configuration for `solve` and `bench`, merged with command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use bregman_dc::methods::MethodRegistry;
use serde::{Deserialize, Serialize};

/// Overrides the directory that relative output paths are written to.
pub const OUT_DIR_ENV: &str = "BDC_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    L12reg,
    L12con,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::L12reg => "l12reg",
            ProblemKind::L12con => "l12con",
        })
    }
}

/// `m x n x s`, written `200x2000x40`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct Size {
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

impl TryFrom<[usize; 3]> for Size {
    type Error = String;

    fn try_from([m, n, s]: [usize; 3]) -> Result<Self, String> {
        if m == 0 || n == 0 || s == 0 || s > n {
            return Err(format!("invalid size {m}x{n}x{s}: need m, n >= 1 and 1 <= s <= n"));
        }
        Ok(Size { m, n, s })
    }
}

impl From<Size> for [usize; 3] {
    fn from(s: Size) -> Self {
        [s.m, s.n, s.s]
    }
}

impl FromStr for Size {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(['x', 'X']).collect();
        let [m, n, s] = parts.as_slice() else {
            return Err(format!("expected MxNxS, got '{text}'"));
        };
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
        Size::try_from([parse(m)?, parse(n)?, parse(s)?])
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.s)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Resolves an output path against `$BDC_OUT_DIR` when it is set and `path`
/// is relative.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() && !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Settings for a single solve. Every field may also be given as a flag;
/// flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub problem: Option<ProblemKind>,
    pub method: Option<String>,
    pub lambda: Option<f64>,
    /// `lambda = lambda_c ||A^T b||_inf`.
    pub lambda_c: Option<f64>,
    pub mu: Option<f64>,
    /// `kappa = nf ||0.01 noise||`, for generated instances.
    pub nf: Option<f64>,
    pub kappa: Option<f64>,
    /// `kappa = kappa_c ||b||`.
    pub kappa_c: Option<f64>,
    pub sigma: Option<f64>,
    pub max_iter: Option<usize>,
}

impl SolveConfig {
    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: SolveConfig) -> SolveConfig {
        SolveConfig {
            problem: over.problem.or(self.problem),
            method: over.method.or(self.method),
            lambda: over.lambda.or(self.lambda),
            lambda_c: over.lambda_c.or(self.lambda_c),
            mu: over.mu.or(self.mu),
            nf: over.nf.or(self.nf),
            kappa: over.kappa.or(self.kappa),
            kappa_c: over.kappa_c.or(self.kappa_c),
            sigma: over.sigma.or(self.sigma),
            max_iter: over.max_iter.or(self.max_iter),
        }
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_MU: f64 = 0.95;
pub const DEFAULT_NF: f64 = 1.1;

fn default_trials() -> usize {
    20
}

fn default_mu() -> f64 {
    DEFAULT_MU
}

/// A benchmark grid: every size, parameter value and method, over `trials`
/// seeds `base_seed, base_seed + 1, ...`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub problem: ProblemKind,
    pub sizes: Vec<Size>,
    /// Regularization weights (`l12reg`).
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Noise factors for `kappa` (`l12con`).
    #[serde(default)]
    pub nfs: Vec<f64>,
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

impl BenchConfig {
    pub fn new(problem: ProblemKind) -> Self {
        Self {
            problem,
            sizes: Vec::new(),
            lambdas: Vec::new(),
            mu: DEFAULT_MU,
            nfs: Vec::new(),
            methods: Vec::new(),
            trials: default_trials(),
            base_seed: 0,
            max_iter: None,
        }
    }

    /// Fills defaults and checks the grid.
    pub fn finalize(mut self, registry: &MethodRegistry) -> anyhow::Result<Self> {
        if self.sizes.is_empty() {
            bail!("bench config needs at least one size");
        }
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        match self.problem {
            ProblemKind::L12reg => {
                if self.lambdas.is_empty() {
                    self.lambdas = vec![DEFAULT_LAMBDA];
                }
                if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                    bail!("lambda must be positive, got {l}");
                }
            }
            ProblemKind::L12con => {
                if self.nfs.is_empty() {
                    self.nfs = vec![DEFAULT_NF];
                }
                if let Some(nf) = self.nfs.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    bail!("nf must be positive, got {nf}");
                }
                if !(0.0..1.0).contains(&self.mu) {
                    bail!("mu must lie in [0, 1), got {}", self.mu);
                }
            }
        }
        if self.methods.is_empty() {
            self.methods = match self.problem {
                ProblemKind::L12reg => vec!["ibpdca-sc1".into(), "ibpdca-sc2".into(), "pdcae".into()],
                ProblemKind::L12con => vec!["ibpdca-sc1".into(), "ibpdca-sc2".into()],
            };
        }
        for name in &self.methods {
            registry.get(name)?;
            if self.problem == ProblemKind::L12con && name == "pdcae" {
                bail!("method pdcae does not support l12con");
            }
        }
        Ok(self)
    }

    /// Parameter values swept for each size, with their CSV label.
    pub fn params(&self) -> Vec<(String, f64)> {
        match self.problem {
            ProblemKind::L12reg => self.lambdas.iter().map(|&l| (format!("lambda={l}"), l)).collect(),
            ProblemKind::L12con => self.nfs.iter().map(|&nf| (format!("nf={nf}"), nf)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!("20x100x4".parse::<Size>().unwrap(), Size { m: 20, n: 100, s: 4 });
        assert!("20x100".parse::<Size>().is_err());
        assert!("20x100x0".parse::<Size>().is_err());
        assert!("20x10x11".parse::<Size>().is_err());
    }

    #[test]
    fn bench_config_from_json() {
        let cfg: BenchConfig =
            serde_json::from_str(r#"{"problem":"l12reg","sizes":[[20,100,4]],"trials":2}"#).unwrap();
        let cfg = cfg.finalize(&MethodRegistry::default()).unwrap();
        assert_eq!(cfg.lambdas, vec![DEFAULT_LAMBDA]);
        assert_eq!(cfg.methods.len(), 3);
        assert!(serde_json::from_str::<BenchConfig>(r#"{"problem":"l12reg","sizes":[[20,100,0]]}"#).is_err());
        let empty: BenchConfig = serde_json::from_str(r#"{"problem":"l12con","sizes":[]}"#).unwrap();
        assert!(empty.finalize(&MethodRegistry::default()).is_err());
    }

    #[test]
    fn flags_override_config() {
        let file = SolveConfig {
            lambda: Some(1.0),
            sigma: Some(0.5),
            ..Default::default()
        };
        let flags = SolveConfig {
            lambda: Some(0.1),
            ..Default::default()
        };
        let m = file.merged(flags);
        assert_eq!(m.lambda, Some(0.1));
        assert_eq!(m.sigma, Some(0.5));
    }
}
