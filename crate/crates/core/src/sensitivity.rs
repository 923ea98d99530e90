//! Robustness grid over subsample seed, λ, d and k, with ARI across seeds and
//! best-Jaccard tracking of a reference cluster.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clustering::{adjusted_rand_index, kmeans, ClusterAssignment, KMeansConfig};
use crate::dataset::Dataset;
use crate::embedding::{train, TrainConfig, TrainHistory};
use crate::meta::{subgroup_analysis, SubgroupReport, DEFAULT_LEVEL};
use crate::triplets::{subsample, triplet_budget, BudgetParams, LogBase, TripletSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub seeds: Vec<u64>,
    pub lambdas: Vec<u32>,
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            seeds: vec![20, 50, 100],
            lambdas: vec![1, 2, 4],
            dims: vec![2, 5, 10],
            ks: vec![2, 3, 4, 5],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("seeds", self.seeds.is_empty()),
            ("lambdas", self.lambdas.is_empty()),
            ("dims", self.dims.is_empty()),
            ("ks", self.ks.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("sensitivity.{name} must not be empty")));
            }
        }
        if self.lambdas.contains(&0) || self.dims.contains(&0) || self.ks.contains(&0) {
            return Err(Error::Config("sensitivity lambdas, dims and ks must be positive".into()));
        }
        Ok(())
    }
}

/// Settings shared by every cell.
#[derive(Debug, Clone)]
pub struct GridBase {
    /// The same training seed is used in every cell.
    pub train: TrainConfig,
    pub kmeans: KMeansConfig,
    pub cluster_seed: u64,
    pub log_base: LogBase,
    pub level: f64,
    /// Cluster to follow across k, normally taken from the primary run.
    /// Without it the lowest-τ² cluster of the first cell is used.
    pub reference: Option<ReferenceCluster>,
}

impl Default for GridBase {
    fn default() -> Self {
        GridBase {
            train: TrainConfig::default(),
            kmeans: KMeansConfig::default(),
            cluster_seed: 0,
            log_base: LogBase::Natural,
            level: DEFAULT_LEVEL,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCluster {
    pub labels: Vec<usize>,
    pub cluster: usize,
}

impl ReferenceCluster {
    /// The pooled cluster with the smallest τ̂², lowest index on ties.
    pub fn lowest_tau2(ca: &ClusterAssignment, report: &SubgroupReport) -> Option<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (&c, m) in &report.per_cluster {
            if let Some(r) = &m.result {
                if best.is_none_or(|(_, t)| r.tau2 < t) {
                    best = Some((c, r.tau2));
                }
            }
        }
        best.map(|(cluster, _)| ReferenceCluster {
            labels: ca.labels.clone(),
            cluster,
        })
    }

    fn members(&self) -> BTreeSet<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == self.cluster).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub triplet_count: usize,
    pub best_epoch: usize,
    /// Triplet error of the retained (best) checkpoint.
    pub triplet_error: f64,
    pub labels: Vec<usize>,
    /// Per cluster in index order; `None` for singletons.
    pub tau2: Vec<Option<f64>>,
    pub overall_tau2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required_pool_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub seed: u64,
    pub lambda: u32,
    pub d: usize,
    pub k: usize,
    pub budget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<CellResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriBlock {
    pub lambda: u32,
    pub d: usize,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// `matrix[i][j]` compares seeds `i` and `j`; `None` where a cell failed.
    pub matrix: Vec<Vec<Option<f64>>>,
}

impl AriBlock {
    pub fn min_off_diagonal(&self) -> Option<f64> {
        let n = self.seeds.len();
        let mut min: Option<f64> = None;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    if let Some(a) = self.matrix[i][j] {
                        min = Some(min.map_or(a, |m: f64| m.min(a)));
                    }
                }
            }
        }
        min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatch {
    pub k: usize,
    pub cluster: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableSummary {
    pub reference_cluster: usize,
    pub reference_members: Vec<usize>,
    /// Best match in every assignment after the reference.
    pub matches: Vec<ClusterMatch>,
    /// Studies of the reference cluster found in every matched cluster.
    pub core: Vec<usize>,
}

impl StableSummary {
    pub fn min_jaccard(&self) -> f64 {
        self.matches.iter().map(|m| m.jaccard).fold(1.0, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityEntry {
    pub seed: u64,
    pub lambda: u32,
    pub d: usize,
    pub summary: StableSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub spec: GridSpec,
    pub study_ids: Vec<String>,
    pub pool_size: usize,
    /// Ordered by (seed, λ, d, k) as listed in the spec.
    pub cells: Vec<CellRecord>,
    pub ari: Vec<AriBlock>,
    pub reference: Option<ReferenceCluster>,
    pub stability: Vec<StabilityEntry>,
}

impl SensitivityReport {
    pub fn cell(&self, seed: u64, lambda: u32, d: usize, k: usize) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.lambda == lambda && c.d == d && c.k == k)
    }
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Follows `assignments[0]`'s cluster `reference_cluster` through the other
/// assignments. Matches maximise Jaccard overlap, lowest cluster index on
/// ties.
pub fn stable_clusters(assignments: &[&ClusterAssignment], reference_cluster: usize) -> Result<StableSummary> {
    if assignments.len() < 2 {
        return Err(Error::invalid(format!(
            "stable_clusters needs at least 2 assignments, got {}",
            assignments.len()
        )));
    }
    let reference = ReferenceCluster {
        labels: assignments[0].labels.clone(),
        cluster: reference_cluster,
    };
    stable_against(&reference, &assignments[1..])
}

fn stable_against(reference: &ReferenceCluster, others: &[&ClusterAssignment]) -> Result<StableSummary> {
    let m = reference.labels.len();
    let refset = reference.members();
    if refset.is_empty() {
        return Err(Error::invalid(format!("reference cluster {} is empty", reference.cluster)));
    }
    let mut core = refset.clone();
    let mut matches = Vec::with_capacity(others.len());
    for ca in others {
        if ca.labels.len() != m {
            return Err(Error::invalid("assignments cover different numbers of studies"));
        }
        let mut best = (0, -1.0, BTreeSet::new());
        for c in 0..ca.k {
            let set: BTreeSet<usize> = (0..m).filter(|&i| ca.labels[i] == c).collect();
            let j = jaccard(&refset, &set);
            if j > best.1 {
                best = (c, j, set);
            }
        }
        core = core.intersection(&best.2).copied().collect();
        matches.push(ClusterMatch {
            k: ca.k,
            cluster: best.0,
            jaccard: best.1,
        });
    }
    Ok(StableSummary {
        reference_cluster: reference.cluster,
        reference_members: refset.into_iter().collect(),
        matches,
        core: core.into_iter().collect(),
    })
}

/// Everything a cell produced, for callers that persist per-cell artifacts.
pub struct CellOutput<'a> {
    pub record: &'a CellRecord,
    pub triplets: &'a TripletSet,
    pub history: &'a TrainHistory,
    pub clusters: &'a ClusterAssignment,
    pub meta: &'a SubgroupReport,
}

pub fn run_grid(ds: &Dataset, pool: &TripletSet, spec: &GridSpec, base: &GridBase) -> Result<SensitivityReport> {
    run_grid_with(ds, pool, spec, base, |_| Ok(()))
}

/// Runs every cell in (seed, λ, d, k) order. A cell that cannot be built
/// (for example a budget above the pool size) is recorded as failed and
/// the sweep continues; errors from `on_cell` abort it.
pub fn run_grid_with(
    ds: &Dataset,
    pool: &TripletSet,
    spec: &GridSpec,
    base: &GridBase,
    mut on_cell: impl FnMut(&CellOutput) -> Result<()>,
) -> Result<SensitivityReport> {
    spec.validate()?;
    let m = ds.len();
    let mut cells = Vec::new();
    let mut assignments: Vec<Option<ClusterAssignment>> = Vec::new();
    let mut reference = base.reference.clone();
    let mut stability = Vec::new();

    for &seed in &spec.seeds {
        for &lambda in &spec.lambdas {
            for &d in &spec.dims {
                let budget = triplet_budget(BudgetParams {
                    m,
                    d,
                    lambda,
                    log_base: base.log_base,
                })?;
                let fail_all = |message: String, required: Option<usize>, cells: &mut Vec<CellRecord>| {
                    for &k in &spec.ks {
                        cells.push(CellRecord {
                            seed,
                            lambda,
                            d,
                            k,
                            budget,
                            result: None,
                            failure: Some(CellFailure {
                                message: message.clone(),
                                required_pool_size: required,
                            }),
                        });
                    }
                };
                if budget > pool.len() {
                    log::warn!("cell seed={seed} lambda={lambda} d={d}: budget {budget} > pool {}", pool.len());
                    fail_all(
                        format!("budget {budget} exceeds the pool of {} triplets", pool.len()),
                        Some(budget),
                        &mut cells,
                    );
                    assignments.extend(spec.ks.iter().map(|_| None));
                    continue;
                }
                let subset = subsample(pool, budget, seed)?;
                let history = match train(&subset, m, d, &base.train) {
                    Ok(h) => h,
                    Err(e) => {
                        fail_all(e.to_string(), None, &mut cells);
                        assignments.extend(spec.ks.iter().map(|_| None));
                        continue;
                    }
                };
                let best = *history.best();
                let mut block_assignments = Vec::new();
                for &k in &spec.ks {
                    let outcome = kmeans(&history.best_coords, k, base.cluster_seed, &base.kmeans)
                        .and_then(|ca| subgroup_analysis(ds, &ca, base.level).map(|r| (ca, r)));
                    let (ca, report) = match outcome {
                        Ok(x) => x,
                        Err(e) => {
                            cells.push(CellRecord {
                                seed,
                                lambda,
                                d,
                                k,
                                budget,
                                result: None,
                                failure: Some(CellFailure {
                                    message: e.to_string(),
                                    required_pool_size: None,
                                }),
                            });
                            assignments.push(None);
                            continue;
                        }
                    };
                    if reference.is_none() {
                        reference = ReferenceCluster::lowest_tau2(&ca, &report);
                    }
                    let record = CellRecord {
                        seed,
                        lambda,
                        d,
                        k,
                        budget,
                        result: Some(CellResult {
                            triplet_count: subset.len(),
                            best_epoch: history.best_epoch,
                            triplet_error: best.triplet_error,
                            labels: ca.labels.clone(),
                            tau2: (0..ca.k)
                                .map(|c| report.per_cluster[&c].result.as_ref().map(|r| r.tau2))
                                .collect(),
                            overall_tau2: report.overall.tau2,
                        }),
                        failure: None,
                    };
                    on_cell(&CellOutput {
                        record: &record,
                        triplets: &subset,
                        history: &history,
                        clusters: &ca,
                        meta: &report,
                    })?;
                    cells.push(record);
                    block_assignments.push(ca.clone());
                    assignments.push(Some(ca));
                }
                if let Some(r) = &reference {
                    if !block_assignments.is_empty() {
                        let refs: Vec<&ClusterAssignment> = block_assignments.iter().collect();
                        stability.push(StabilityEntry {
                            seed,
                            lambda,
                            d,
                            summary: stable_against(r, &refs)?,
                        });
                    }
                }
            }
        }
    }

    let ari = ari_blocks(spec, &assignments)?;
    Ok(SensitivityReport {
        spec: spec.clone(),
        study_ids: ds.ids().map(str::to_string).collect(),
        pool_size: pool.len(),
        cells,
        ari,
        reference,
        stability,
    })
}

fn ari_blocks(spec: &GridSpec, assignments: &[Option<ClusterAssignment>]) -> Result<Vec<AriBlock>> {
    let (nl, nd, nk) = (spec.lambdas.len(), spec.dims.len(), spec.ks.len());
    let at = |s: usize, l: usize, d: usize, k: usize| &assignments[((s * nl + l) * nd + d) * nk + k];
    let mut blocks = Vec::new();
    for (li, &lambda) in spec.lambdas.iter().enumerate() {
        for (di, &d) in spec.dims.iter().enumerate() {
            for (ki, &k) in spec.ks.iter().enumerate() {
                let n = spec.seeds.len();
                let mut matrix = vec![vec![None; n]; n];
                for (i, row) in matrix.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        if let (Some(a), Some(b)) = (at(i, li, di, ki), at(j, li, di, ki)) {
                            *cell = Some(if i == j {
                                1.0
                            } else {
                                adjusted_rand_index(&a.labels, &b.labels)?
                            });
                        }
                    }
                }
                blocks.push(AriBlock {
                    lambda,
                    d,
                    k,
                    seeds: spec.seeds.clone(),
                    matrix,
                });
            }
        }
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ca(labels: Vec<usize>) -> ClusterAssignment {
        ClusterAssignment::from_labels(labels).unwrap()
    }

    #[test]
    fn identical_assignments_have_unit_jaccard() {
        let a = ca(vec![0, 0, 1, 1, 2, 2]);
        let s = stable_clusters(&[&a, &a.clone()], 1).unwrap();
        assert_eq!(s.matches[0].jaccard, 1.0);
        assert_eq!(s.core, vec![2, 3]);
    }

    #[test]
    fn split_reference_gives_half() {
        let a = ca(vec![0, 0, 0, 0, 1, 1]);
        let b = ca(vec![0, 0, 2, 2, 1, 1]);
        let s = stable_clusters(&[&a, &b], 0).unwrap();
        // |{0,1}| / |{0,1,2,3}|
        assert_eq!(s.matches[0].jaccard, 0.5);
        assert_eq!(s.matches[0].cluster, 0);
        assert_eq!(s.core, vec![0, 1]);
    }

    #[test]
    fn needs_two_assignments() {
        let a = ca(vec![0, 1]);
        assert!(stable_clusters(&[&a], 0).is_err());
    }

    #[test]
    fn empty_lists_rejected() {
        let spec = GridSpec {
            ks: vec![],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
