use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::KMeansConfig;
use crate::dataset::Format;
use crate::embedding::TrainConfig;
use crate::meta::DEFAULT_LEVEL;
use crate::oracle::{OracleConfig, OracleKind};
use crate::sensitivity::GridSpec;
use crate::triplets::LogBase;
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<Format>,
}

impl DatasetSection {
    pub fn format(&self) -> Result<Format> {
        self.format.or_else(|| Format::from_path(&self.path)).ok_or_else(|| {
            Error::Config(format!(
                "cannot infer the format of {}; set dataset.format",
                self.path.display()
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub lambda: u32,
    pub d: usize,
    pub log_base: LogBase,
    /// Replaces the formula value when set.
    pub budget: Option<usize>,
    /// Candidate pairs judged per anchor when building the pool.
    pub pairs_per_anchor: usize,
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection {
            lambda: 2,
            d: 2,
            log_base: LogBase::Natural,
            budget: None,
            pairs_per_anchor: 40,
        }
    }
}

/// Training settings; the seed comes from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Embedding dimension; defaults to `budget.d` and must match it.
    pub dim: Option<usize>,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            dim: None,
            margin: t.margin,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            init_scale: t.init_scale,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            margin: self.margin,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            init_scale: self.init_scale,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: usize,
    /// Inclusive k range for the elbow curve, clipped to the study count.
    pub k_range: (usize, usize),
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let km = KMeansConfig::default();
        ClusterSection {
            k: 3,
            k_range: (1, 10),
            restarts: km.restarts,
            max_iter: km.max_iter,
        }
    }
}

impl ClusterSection {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.restarts,
            max_iter: self.max_iter,
            ..KMeansConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub level: f64,
    /// Characteristics for an optional meta-regression.
    pub moderators: Vec<String>,
}

impl Default for MetaSection {
    fn default() -> Self {
        MetaSection {
            level: DEFAULT_LEVEL,
            moderators: Vec::new(),
        }
    }
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Overrides the derived subsample seed.
    #[serde(default)]
    pub subsample_seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub meta: MetaSection,
    /// Runs the robustness grid when present.
    #[serde(default)]
    pub sensitivity: Option<GridSpec>,
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            subsample_seed: None,
            out: out.into(),
            dataset: DatasetSection {
                path: dataset.into(),
                format: None,
            },
            oracle: OracleConfig::default(),
            budget: BudgetSection::default(),
            train: TrainSection::default(),
            cluster: ClusterSection::default(),
            meta: MetaSection::default(),
            sensitivity: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Parses a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.out);
        fix(&mut self.oracle.cache_dir);
        if let Some(t) = &mut self.oracle.prompt_template {
            fix(t);
        }
    }

    pub fn dim(&self) -> usize {
        self.train.dim.unwrap_or(self.budget.d)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.train.dim {
            if d != self.budget.d {
                return Err(Error::Config(format!(
                    "budget.d = {} but train.dim = {d}; the embedding dimension must match the budget",
                    self.budget.d
                )));
            }
        }
        if self.budget.d == 0 || self.budget.lambda == 0 {
            return Err(Error::Config("budget.d and budget.lambda must be positive".into()));
        }
        if self.budget.pairs_per_anchor == 0 {
            return Err(Error::Config("budget.pairs_per_anchor must be positive".into()));
        }
        if self.budget.budget == Some(0) {
            return Err(Error::Config("budget.budget must be positive".into()));
        }
        self.train.to_config(0).validate()?;
        if self.cluster.k == 0 {
            return Err(Error::Config("cluster.k must be positive".into()));
        }
        let (lo, hi) = self.cluster.k_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("cluster.k_range ({lo}, {hi}) is not a valid range")));
        }
        if self.cluster.restarts == 0 {
            return Err(Error::Config("cluster.restarts must be positive".into()));
        }
        if !(self.meta.level > 0.0 && self.meta.level < 1.0) {
            return Err(Error::Config(format!("meta.level must lie in (0, 1), got {}", self.meta.level)));
        }
        self.oracle.validate()?;
        if let Some(g) = &self.sensitivity {
            g.validate()?;
        }
        self.dataset.format()?;
        Ok(())
    }
}

/// Command-line values that replace config-file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<u32>,
    pub dim: Option<usize>,
    pub budget: Option<usize>,
    pub margin: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub k: Option<usize>,
    pub k_range: Option<(usize, usize)>,
    pub oracle: Option<OracleKind>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub prompt_template: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.budget.lambda = l;
        }
        if let Some(d) = self.dim {
            cfg.budget.d = d;
            cfg.train.dim = Some(d);
        }
        if let Some(b) = self.budget {
            cfg.budget.budget = Some(b);
        }
        if let Some(m) = self.margin {
            cfg.train.margin = m;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(k) = self.k {
            cfg.cluster.k = k;
        }
        if let Some(r) = self.k_range {
            cfg.cluster.k_range = r;
        }
        if let Some(o) = self.oracle {
            cfg.oracle.kind = o;
        }
        if let Some(e) = &self.llm_endpoint {
            cfg.oracle.endpoint = e.clone();
        }
        if let Some(m) = &self.llm_model {
            cfg.oracle.model = m.clone();
        }
        if let Some(p) = &self.prompt_template {
            cfg.oracle.prompt_template = Some(p.clone());
        }
        if let Some(c) = &self.cache_dir {
            cfg.oracle.cache_dir = c.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
    }
}

/// Parses an inclusive range written `lo-hi` or `lo,hi`.
pub fn parse_k_range(s: &str) -> Result<(usize, usize)> {
    let s = s.trim();
    let bad = || Error::Config(format!("k range `{s}` is not of the form lo-hi"));
    let (a, b) = s.split_once('-').or_else(|| s.split_once(',')).ok_or_else(bad)?;
    let lo = a.trim().parse().map_err(|_| bad())?;
    let hi = b.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml("[dataset]\npath = \"studies.csv\"\n").unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.budget.lambda, 2);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.cluster.k, 3);
        assert!(cfg.sensitivity.is_none());
        cfg.validate().unwrap();
    }

    #[test]
    fn mismatched_dimension_rejected() {
        let cfg = RunConfig::from_toml("[dataset]\npath = \"s.csv\"\n[budget]\nd = 2\n[train]\ndim = 5\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("train.dim")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[dataset]\npath = \"s.csv\"\n[train]\nlr = 0.1\n").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::new("s.csv", "out");
        Overrides {
            dim: Some(5),
            budget: Some(1160),
            oracle: Some(OracleKind::Llm),
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!((cfg.budget.d, cfg.train.dim), (5, Some(5)));
        assert_eq!(cfg.budget.budget, Some(1160));
        assert_eq!(cfg.oracle.kind, OracleKind::Llm);
    }

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("2-8").unwrap(), (2, 8));
        assert_eq!(parse_k_range("3,5").unwrap(), (3, 5));
        assert!(parse_k_range("5-2").is_err());
        assert!(parse_k_range("x").is_err());
    }
}
