use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterAssignment, ElbowCurve};
use crate::dataset::Dataset;
use crate::embedding::{Embedding, EpochRecord, TrainConfig, TrainHistory};
use crate::meta::{ForestRow, MetaRegression, SubgroupReport};
use crate::oracle::OracleKind;
use crate::sensitivity::SensitivityReport;
use crate::triplets::LogBase;
use crate::{Error, Result};

pub const STUDIES: &str = "studies.normalized.json";
pub const POOL: &str = "triplets.pool.jsonl";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const TRIPLET_SUMMARY: &str = "triplets.summary.json";
pub const EMBEDDING: &str = "embedding.json";
pub const ELBOW: &str = "elbow.json";
pub const CLUSTERS: &str = "clusters.json";
pub const META: &str = "meta.json";
pub const REGRESSION: &str = "regression.json";
pub const SENSITIVITY: &str = "sensitivity.json";
pub const SENSITIVITY_DIR: &str = "sensitivity";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn from_json_bytes<T: for<'de> Deserialize<'de>>(bytes: &[u8], what: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::json(format!("parsing {what}"), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSummary {
    pub oracle: OracleKind,
    pub oracle_tag: String,
    pub m: usize,
    pub pool_size: usize,
    pub pairs_per_anchor: usize,
    pub lambda: u32,
    pub d: usize,
    pub log_base: LogBase,
    pub formula_budget: usize,
    pub budget_override: Option<usize>,
    /// The number of triplets kept.
    pub budget: usize,
    pub pool_seed: u64,
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingArtifact {
    pub m: usize,
    pub d: usize,
    pub study_ids: Vec<String>,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_triplet_error: f64,
    /// Best checkpoint, row-major `m × d`.
    pub coords: Vec<f64>,
    pub final_coords: Vec<f64>,
    pub history: Vec<EpochRecord>,
}

impl EmbeddingArtifact {
    pub fn new(ds: &Dataset, cfg: &TrainConfig, h: &TrainHistory) -> Self {
        EmbeddingArtifact {
            m: h.best_coords.m,
            d: h.best_coords.d,
            study_ids: ds.ids().map(str::to_string).collect(),
            config: *cfg,
            best_epoch: h.best_epoch,
            best_triplet_error: h.best().triplet_error,
            coords: h.best_coords.coords.clone(),
            final_coords: h.final_coords.coords.clone(),
            history: h.records.clone(),
        }
    }

    pub fn embedding(&self, ds: &Dataset) -> Result<Embedding> {
        if !self.study_ids.iter().map(String::as_str).eq(ds.ids()) {
            return Err(Error::invalid(format!(
                "{EMBEDDING} was built for a different study list; rerun the embed stage"
            )));
        }
        Embedding::new(self.m, self.d, self.coords.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub wcss: f64,
    pub sizes: Vec<usize>,
    /// Study id to cluster index.
    pub labels: BTreeMap<String, usize>,
    pub centers: Vec<Vec<f64>>,
}

impl ClusterArtifact {
    pub fn new(ds: &Dataset, ca: &ClusterAssignment) -> Self {
        ClusterArtifact {
            k: ca.k,
            seed: ca.seed,
            restarts: ca.restarts,
            wcss: ca.wcss,
            sizes: ca.sizes(),
            labels: ds.ids().map(str::to_string).zip(ca.labels.iter().copied()).collect(),
            centers: (0..ca.k).map(|j| ca.center(j).to_vec()).collect(),
        }
    }

    pub fn assignment(&self, ds: &Dataset) -> Result<ClusterAssignment> {
        if self.labels.len() != ds.len() {
            return Err(Error::invalid(format!(
                "{CLUSTERS} labels {} studies but the dataset has {}",
                self.labels.len(),
                ds.len()
            )));
        }
        let labels = ds
            .ids()
            .map(|id| {
                self.labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("{CLUSTERS} has no label for study \"{id}\"")))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = self.centers.first().map_or(0, Vec::len);
        Ok(ClusterAssignment {
            k: self.k,
            labels,
            centers: self.centers.concat(),
            d,
            wcss: self.wcss,
            seed: self.seed,
            restarts: self.restarts,
            trace: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub id: String,
    pub coords: Vec<f64>,
    pub cluster: usize,
    pub effect: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriSummary {
    pub lambda: u32,
    pub d: usize,
    pub k: usize,
    pub min_ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub seed: u64,
    pub lambda: u32,
    pub d: usize,
    pub min_jaccard: f64,
    pub core: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityDigest {
    pub cells: usize,
    pub failed_cells: usize,
    pub ari: Vec<AriSummary>,
    pub stability: Vec<StabilitySummary>,
}

impl SensitivityDigest {
    pub fn new(r: &SensitivityReport) -> Self {
        SensitivityDigest {
            cells: r.cells.len(),
            failed_cells: r.cells.iter().filter(|c| c.failure.is_some()).count(),
            ari: r
                .ari
                .iter()
                .map(|b| AriSummary {
                    lambda: b.lambda,
                    d: b.d,
                    k: b.k,
                    min_ari: b.min_off_diagonal(),
                })
                .collect(),
            stability: r
                .stability
                .iter()
                .map(|s| StabilitySummary {
                    seed: s.seed,
                    lambda: s.lambda,
                    d: s.d,
                    min_jaccard: s.summary.min_jaccard(),
                    core: s.summary.core.iter().map(|&i| r.study_ids[i].clone()).collect(),
                })
                .collect(),
        }
    }
}

/// Plot-ready summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub n_studies: usize,
    pub d: usize,
    pub k: usize,
    pub best_epoch: usize,
    pub best_triplet_error: f64,
    pub points: Vec<PlotPoint>,
    pub training_curve: Vec<EpochRecord>,
    pub elbow: ElbowCurve,
    pub forest: Vec<ForestRow>,
    pub overall_tau2: f64,
    pub cluster_tau2: BTreeMap<usize, Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<MetaRegression>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityDigest>,
}

impl Report {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        ds: &Dataset,
        emb: &EmbeddingArtifact,
        ca: &ClusterAssignment,
        elbow: ElbowCurve,
        meta: &SubgroupReport,
        regression: Option<MetaRegression>,
        sensitivity: Option<&SensitivityReport>,
    ) -> Self {
        let points = ds
            .studies
            .iter()
            .enumerate()
            .map(|(i, s)| PlotPoint {
                id: s.id.clone(),
                coords: emb.coords[i * emb.d..(i + 1) * emb.d].to_vec(),
                cluster: ca.labels[i],
                effect: s.effect,
                variance: s.variance,
            })
            .collect();
        Report {
            tool_version: super::TOOL_VERSION.to_string(),
            n_studies: ds.len(),
            d: emb.d,
            k: ca.k,
            best_epoch: emb.best_epoch,
            best_triplet_error: emb.best_triplet_error,
            points,
            training_curve: emb.history.clone(),
            elbow,
            forest: meta.forest.clone(),
            overall_tau2: meta.overall.tau2,
            cluster_tau2: meta.cluster_tau2(),
            regression,
            sensitivity: sensitivity.map(SensitivityDigest::new),
        }
    }
}
