//! Staged runs: ingest → triplets → embed → cluster → meta → sensitivity →
//! report.
//!
//! Every stage reads its inputs from the output directory, hashes them
//! together with the settings it uses, and is skipped when the previous
//! manifest shows the same input hash and its outputs are still on disk
//! unchanged. `manifest.json` is rewritten after every stage.
//!
//! Stage seeds come from the master seed as the first eight bytes
//! (little-endian) of `sha256("<master>:<stage>")`, see
//! [`crate::seed::derive_seed`].

mod artifacts;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use artifacts::*;
pub use config::{
    parse_k_range, BudgetSection, ClusterSection, DatasetSection, MetaSection, Overrides, RunConfig,
    TrainSection, DEFAULT_SEED,
};

use crate::clustering::{elbow_curve, kmeans, ElbowCurve};
use crate::dataset::{parse_dataset, validate_dataset, Dataset, Format};
use crate::embedding::train;
use crate::meta::{meta_regression, subgroup_analysis, MetaRegression, SubgroupReport};
use crate::oracle::{GowerOracle, LlmOracle, Oracle, OracleKind};
use crate::seed::{derive_seed, sha256_hex};
use crate::sensitivity::{run_grid_with, GridBase, ReferenceCluster, SensitivityReport};
use crate::triplets::{generate_pool, parse_jsonl, subsample, to_jsonl, triplet_budget, BudgetParams};
use crate::{Error, Result};

pub const TOOL_VERSION: &str = concat!("triplet-meta ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Triplets,
    Embed,
    Cluster,
    Meta,
    Sensitivity,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Triplets,
        Stage::Embed,
        Stage::Cluster,
        Stage::Meta,
        Stage::Sensitivity,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Triplets => "triplets",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Meta => "meta",
            Stage::Sensitivity => "sensitivity",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Computed,
    Reused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: Stage,
    pub input_hash: String,
    pub status: StageStatus,
    pub duration_ms: u64,
    /// Files the stage wrote, relative to the output directory.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub master: u64,
    pub pool: u64,
    pub subsample: u64,
    pub train: u64,
    pub cluster: u64,
}

impl StageSeeds {
    pub fn new(master: u64, subsample_override: Option<u64>) -> Self {
        StageSeeds {
            master,
            pool: derive_seed(master, "triplets"),
            subsample: subsample_override.unwrap_or_else(|| derive_seed(master, "subsample")),
            train: derive_seed(master, "embed"),
            cluster: derive_seed(master, "cluster"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub seeds: StageSeeds,
    pub stages: Vec<StageRecord>,
    /// Every file under the output directory except the manifest, by
    /// relative path, with its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.name == s)
    }

    pub fn read(out: &Path) -> Result<Option<Self>> {
        let path = out.join(MANIFEST);
        match fs::read(&path) {
            Ok(bytes) => from_json_bytes(&bytes, MANIFEST).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
        }
    }
}

fn hash_value(v: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(v).expect("json values serialize").as_bytes())
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
            continue;
        }
        let rel = rel_name(root, &path);
        if rel == MANIFEST || rel.ends_with(".tmp") {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        out.insert(rel, sha256_hex(&bytes));
    }
    Ok(())
}

fn rel_name(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming {}", tmp.display()), e))
}

struct Input {
    bytes: Vec<u8>,
    hash: String,
}

enum Outcome {
    Computed { input_hash: String, outputs: Vec<String> },
    Reused { input_hash: String, outputs: Vec<String> },
}

/// Executes stages against one output directory.
pub struct Runner {
    cfg: RunConfig,
    out: PathBuf,
    seeds: StageSeeds,
    prev: Option<RunManifest>,
    records: BTreeMap<Stage, StageRecord>,
    written: Vec<String>,
}

impl Runner {
    /// Validates the configuration before touching the output directory.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out.clone();
        fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
        let prev = match RunManifest::read(&out) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("ignoring unreadable previous manifest: {e}");
                None
            }
        };
        let records = prev
            .iter()
            .flat_map(|m| m.stages.iter().cloned())
            .map(|r| (r.name, r))
            .collect();
        let seeds = StageSeeds::new(cfg.seed, cfg.subsample_seed);
        Ok(Runner {
            cfg,
            out,
            seeds,
            prev,
            records,
            written: Vec::new(),
        })
    }

    pub fn seeds(&self) -> StageSeeds {
        self.seeds
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Every stage in order; sensitivity only when configured.
    pub fn run_all(&mut self) -> Result<RunManifest> {
        for s in Stage::ALL {
            if s == Stage::Sensitivity && self.cfg.sensitivity.is_none() {
                continue;
            }
            self.run_stage(s)?;
        }
        self.manifest()
    }

    /// One stage; its inputs must already be on disk.
    pub fn run_stage(&mut self, stage: Stage) -> Result<RunManifest> {
        let start = Instant::now();
        self.written.clear();
        let result = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Triplets => self.triplets(),
            Stage::Embed => self.embed(),
            Stage::Cluster => self.cluster(),
            Stage::Meta => self.meta(),
            Stage::Sensitivity => self.sensitivity(),
            Stage::Report => self.report(),
        };
        let duration_ms = start.elapsed().as_millis() as u64;
        let record = match &result {
            Ok(Outcome::Computed { input_hash, outputs }) => StageRecord {
                name: stage,
                input_hash: input_hash.clone(),
                status: StageStatus::Computed,
                duration_ms,
                outputs: outputs.clone(),
                error: None,
            },
            Ok(Outcome::Reused { input_hash, outputs }) => StageRecord {
                name: stage,
                input_hash: input_hash.clone(),
                status: StageStatus::Reused,
                duration_ms,
                outputs: outputs.clone(),
                error: None,
            },
            Err(e) => StageRecord {
                name: stage,
                input_hash: String::new(),
                status: StageStatus::Failed,
                duration_ms,
                outputs: std::mem::take(&mut self.written),
                error: Some(e.to_string()),
            },
        };
        log::info!("stage {}: {:?} in {} ms", stage.name(), record.status, duration_ms);
        self.records.insert(stage, record);
        let manifest = self.manifest()?;
        self.write_manifest(&manifest)?;
        result.map(|_| manifest)
    }

    fn manifest(&self) -> Result<RunManifest> {
        let mut artifacts = BTreeMap::new();
        collect_files(&self.out, &self.out, &mut artifacts)?;
        Ok(RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config: self.cfg.clone(),
            seeds: self.seeds,
            stages: self.records.values().cloned().collect(),
            artifacts,
        })
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        write_atomic(&self.out.join(MANIFEST), &to_json_bytes(m))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    fn require(&self, rel: &str, producer: Stage) -> Result<Input> {
        let path = self.path(rel);
        match fs::read(&path) {
            Ok(bytes) => {
                let hash = sha256_hex(&bytes);
                Ok(Input { bytes, hash })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact {
                path,
                stage: producer.name(),
            }),
            Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
        }
    }

    fn dataset(&self) -> Result<(Dataset, String)> {
        let input = self.require(STUDIES, Stage::Ingest)?;
        Ok((parse_dataset(&input.bytes, Format::Json)?, input.hash))
    }

    /// True when the previous manifest ran `stage` on the same inputs and
    /// every file it wrote is unchanged.
    fn reusable(&self, stage: Stage, input_hash: &str) -> Option<Vec<String>> {
        let prev = self.prev.as_ref()?;
        let rec = prev.stage(stage)?;
        if rec.status == StageStatus::Failed || rec.input_hash != input_hash {
            return None;
        }
        for rel in &rec.outputs {
            let want = prev.artifacts.get(rel)?;
            let bytes = fs::read(self.path(rel)).ok()?;
            if sha256_hex(&bytes) != *want {
                return None;
            }
        }
        Some(rec.outputs.clone())
    }

    fn computed(&mut self, input_hash: String) -> Outcome {
        Outcome::Computed {
            input_hash,
            outputs: std::mem::take(&mut self.written),
        }
    }

    fn ingest(&mut self) -> Result<Outcome> {
        let path = self.cfg.dataset.path.clone();
        let format = self.cfg.dataset.format()?;
        let bytes = fs::read(&path).map_err(|e| {
            Error::Config(format!("cannot read dataset {}: {e}", path.display()))
        })?;
        let input_hash = hash_value(&json!({
            "stage": "ingest",
            "dataset": sha256_hex(&bytes),
            "format": format,
        }));
        if let Some(outputs) = self.reusable(Stage::Ingest, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let ds = parse_dataset(&bytes, format)?;
        let report = validate_dataset(&ds);
        if !report.is_ok() {
            let msgs: Vec<String> = report
                .errors
                .iter()
                .map(|f| match &f.study {
                    Some(s) => format!("{s}: {}", f.message),
                    None => f.message.clone(),
                })
                .collect();
            return Err(Error::invalid(format!("dataset failed validation: {}", msgs.join("; "))));
        }
        self.write(STUDIES, ds.to_canonical_json().as_bytes())?;
        Ok(self.computed(input_hash))
    }

    fn oracle_identity(&self) -> Result<serde_json::Value> {
        let o = &self.cfg.oracle;
        Ok(match o.kind {
            OracleKind::Gower => json!({ "kind": "gower" }),
            OracleKind::Llm => {
                let template = match &o.prompt_template {
                    Some(p) => sha256_hex(&fs::read(p).map_err(|e| {
                        Error::Config(format!("cannot read prompt template {}: {e}", p.display()))
                    })?),
                    None => "builtin".to_string(),
                };
                json!({
                    "kind": "llm",
                    "endpoint": o.endpoint,
                    "model": o.model,
                    "temperature": o.temperature,
                    "template": template,
                    "order_seed": o.order_seed,
                })
            }
        })
    }

    fn build_oracle(&self, ds: &Dataset) -> Result<Box<dyn Oracle>> {
        Ok(match self.cfg.oracle.kind {
            OracleKind::Gower => Box::new(GowerOracle::new(ds)),
            OracleKind::Llm => Box::new(LlmOracle::from_env(self.cfg.oracle.clone())?),
        })
    }

    fn triplets(&mut self) -> Result<Outcome> {
        let (ds, ds_hash) = self.dataset()?;
        let b = self.cfg.budget.clone();
        let formula_budget = triplet_budget(BudgetParams {
            m: ds.len(),
            d: b.d,
            lambda: b.lambda,
            log_base: b.log_base,
        })?;
        let budget = b.budget.unwrap_or(formula_budget);
        let input_hash = hash_value(&json!({
            "stage": "triplets",
            "studies": ds_hash,
            "oracle": self.oracle_identity()?,
            "pairs_per_anchor": b.pairs_per_anchor,
            "pool_seed": self.seeds.pool,
            "subsample_seed": self.seeds.subsample,
            "budget": budget,
        }));
        if let Some(outputs) = self.reusable(Stage::Triplets, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let oracle = self.build_oracle(&ds)?;
        let pool = generate_pool(&ds, oracle.as_ref(), b.pairs_per_anchor, self.seeds.pool)?;
        let kept = subsample(&pool, budget, self.seeds.subsample)?;
        let summary = TripletSummary {
            oracle: self.cfg.oracle.kind,
            oracle_tag: oracle.tag(),
            m: ds.len(),
            pool_size: pool.len(),
            pairs_per_anchor: b.pairs_per_anchor.min((ds.len() - 1) * (ds.len() - 2) / 2),
            lambda: b.lambda,
            d: b.d,
            log_base: b.log_base,
            formula_budget,
            budget_override: b.budget,
            budget,
            pool_seed: self.seeds.pool,
            subsample_seed: self.seeds.subsample,
        };
        self.write(POOL, to_jsonl(&pool).as_bytes())?;
        self.write(TRIPLETS, to_jsonl(&kept).as_bytes())?;
        self.write(TRIPLET_SUMMARY, &to_json_bytes(&summary))?;
        Ok(self.computed(input_hash))
    }

    fn embed(&mut self) -> Result<Outcome> {
        let (ds, ds_hash) = self.dataset()?;
        let trip = self.require(TRIPLETS, Stage::Triplets)?;
        let cfg = self.cfg.train.to_config(self.seeds.train);
        let d = self.cfg.dim();
        let input_hash = hash_value(&json!({
            "stage": "embed",
            "studies": ds_hash,
            "triplets": trip.hash,
            "d": d,
            "train": cfg,
        }));
        if let Some(outputs) = self.reusable(Stage::Embed, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let text = String::from_utf8(trip.bytes)
            .map_err(|_| Error::invalid(format!("{TRIPLETS} is not UTF-8")))?;
        let set = parse_jsonl(&text, &ds)?;
        let history = train(&set, ds.len(), d, &cfg)?;
        let artifact = EmbeddingArtifact::new(&ds, &cfg, &history);
        self.write(EMBEDDING, &to_json_bytes(&artifact))?;
        Ok(self.computed(input_hash))
    }

    fn cluster(&mut self) -> Result<Outcome> {
        let (ds, ds_hash) = self.dataset()?;
        let emb = self.require(EMBEDDING, Stage::Embed)?;
        let c = self.cfg.cluster.clone();
        let input_hash = hash_value(&json!({
            "stage": "cluster",
            "studies": ds_hash,
            "embedding": emb.hash,
            "cluster": c,
            "seed": self.seeds.cluster,
        }));
        if let Some(outputs) = self.reusable(Stage::Cluster, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let artifact: EmbeddingArtifact = from_json_bytes(&emb.bytes, EMBEDDING)?;
        let e = artifact.embedding(&ds)?;
        let km = c.kmeans();
        let ca = kmeans(&e, c.k, self.seeds.cluster, &km)?;
        let hi = c.k_range.1.min(ds.len());
        let lo = c.k_range.0.min(hi);
        let elbow = elbow_curve(&e, lo, hi, self.seeds.cluster, &km)?;
        self.write(CLUSTERS, &to_json_bytes(&ClusterArtifact::new(&ds, &ca)))?;
        self.write(ELBOW, &to_json_bytes(&elbow))?;
        Ok(self.computed(input_hash))
    }

    fn meta(&mut self) -> Result<Outcome> {
        let (ds, ds_hash) = self.dataset()?;
        let clusters = self.require(CLUSTERS, Stage::Cluster)?;
        let m = self.cfg.meta.clone();
        let input_hash = hash_value(&json!({
            "stage": "meta",
            "studies": ds_hash,
            "clusters": clusters.hash,
            "meta": m,
        }));
        if let Some(outputs) = self.reusable(Stage::Meta, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let ca = from_json_bytes::<ClusterArtifact>(&clusters.bytes, CLUSTERS)?.assignment(&ds)?;
        let report = subgroup_analysis(&ds, &ca, m.level)?;
        self.write(META, &to_json_bytes(&report))?;
        if !m.moderators.is_empty() {
            let mods: Vec<&str> = m.moderators.iter().map(String::as_str).collect();
            let reg = meta_regression(&ds, &mods, m.level)?;
            self.write(REGRESSION, &to_json_bytes(&reg))?;
        } else if self.path(REGRESSION).exists() {
            fs::remove_file(self.path(REGRESSION))
                .map_err(|e| Error::io(format!("removing stale {REGRESSION}"), e))?;
        }
        Ok(self.computed(input_hash))
    }

    fn sensitivity(&mut self) -> Result<Outcome> {
        let spec = self.cfg.sensitivity.clone().unwrap_or_default();
        let (ds, ds_hash) = self.dataset()?;
        let pool = self.require(POOL, Stage::Triplets)?;
        let clusters = self.require(CLUSTERS, Stage::Cluster)?;
        let meta = self.require(META, Stage::Meta)?;
        let train_cfg = self.cfg.train.to_config(self.seeds.train);
        let input_hash = hash_value(&json!({
            "stage": "sensitivity",
            "studies": ds_hash,
            "pool": pool.hash,
            "clusters": clusters.hash,
            "meta": meta.hash,
            "spec": spec,
            "train": train_cfg,
            "cluster": self.cfg.cluster,
            "cluster_seed": self.seeds.cluster,
            "log_base": self.cfg.budget.log_base,
            "level": self.cfg.meta.level,
        }));
        if let Some(outputs) = self.reusable(Stage::Sensitivity, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let text = String::from_utf8(pool.bytes).map_err(|_| Error::invalid(format!("{POOL} is not UTF-8")))?;
        let pool = parse_jsonl(&text, &ds)?;
        let ca = from_json_bytes::<ClusterArtifact>(&clusters.bytes, CLUSTERS)?.assignment(&ds)?;
        let primary: SubgroupReport = from_json_bytes(&meta.bytes, META)?;
        let base = GridBase {
            train: train_cfg,
            kmeans: self.cfg.cluster.kmeans(),
            cluster_seed: self.seeds.cluster,
            log_base: self.cfg.budget.log_base,
            level: self.cfg.meta.level,
            reference: ReferenceCluster::lowest_tau2(&ca, &primary),
        };
        let dir = self.path(SENSITIVITY_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(format!("clearing {}", dir.display()), e))?;
        }
        let report: SensitivityReport = run_grid_with(&ds, &pool, &spec, &base, |cell| {
            let r = cell.record;
            let sub = format!("{SENSITIVITY_DIR}/seed{}_lambda{}_d{}_k{}", r.seed, r.lambda, r.d, r.k);
            let emb = EmbeddingArtifact::new(&ds, &base.train, cell.history);
            self.write(&format!("{sub}/{EMBEDDING}"), &to_json_bytes(&emb))?;
            self.write(&format!("{sub}/{CLUSTERS}"), &to_json_bytes(&ClusterArtifact::new(&ds, cell.clusters)))?;
            self.write(&format!("{sub}/{META}"), &to_json_bytes(cell.meta))
        })?;
        self.write(SENSITIVITY, &to_json_bytes(&report))?;
        Ok(self.computed(input_hash))
    }

    fn report(&mut self) -> Result<Outcome> {
        let (ds, ds_hash) = self.dataset()?;
        let emb = self.require(EMBEDDING, Stage::Embed)?;
        let clusters = self.require(CLUSTERS, Stage::Cluster)?;
        let elbow = self.require(ELBOW, Stage::Cluster)?;
        let meta = self.require(META, Stage::Meta)?;
        let optional = |rel: &str| -> Result<Option<Input>> {
            match self.require(rel, Stage::Meta) {
                Ok(i) => Ok(Some(i)),
                Err(Error::MissingArtifact { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let regression = optional(REGRESSION)?;
        let sensitivity = optional(SENSITIVITY)?;
        let input_hash = hash_value(&json!({
            "stage": "report",
            "studies": ds_hash,
            "embedding": emb.hash,
            "clusters": clusters.hash,
            "elbow": elbow.hash,
            "meta": meta.hash,
            "regression": regression.as_ref().map(|i| &i.hash),
            "sensitivity": sensitivity.as_ref().map(|i| &i.hash),
            "version": TOOL_VERSION,
        }));
        if let Some(outputs) = self.reusable(Stage::Report, &input_hash) {
            return Ok(Outcome::Reused { input_hash, outputs });
        }
        let emb: EmbeddingArtifact = from_json_bytes(&emb.bytes, EMBEDDING)?;
        let ca = from_json_bytes::<ClusterArtifact>(&clusters.bytes, CLUSTERS)?.assignment(&ds)?;
        let elbow: ElbowCurve = from_json_bytes(&elbow.bytes, ELBOW)?;
        let meta: SubgroupReport = from_json_bytes(&meta.bytes, META)?;
        let regression: Option<MetaRegression> = regression
            .map(|i| from_json_bytes(&i.bytes, REGRESSION))
            .transpose()?;
        let sens: Option<SensitivityReport> = sensitivity
            .map(|i| from_json_bytes(&i.bytes, SENSITIVITY))
            .transpose()?;
        let report = Report::assemble(&ds, &emb, &ca, elbow, &meta, regression, sens.as_ref());
        self.write(REPORT, &to_json_bytes(&report))?;
        Ok(self.computed(input_hash))
    }
}

/// Full pipeline in one call.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    Runner::new(cfg.clone())?.run_all()
}
