//! Random-effects meta-analysis: REML between-study variance, pooled
//! effect, Wald confidence and t-based prediction intervals, Q/I²,
//! per-cluster subgroup analysis and mixed-effects meta-regression.

mod regression;
mod reml;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::clustering::ClusterAssignment;
use crate::dataset::Dataset;
use crate::{Error, Result};

pub use regression::{meta_regression, Coefficient, MetaRegression};
pub use reml::{reml_tau2, restricted_loglik, tau2_upper_bound};

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    fn around(center: f64, half_width: f64) -> Self {
        Interval {
            low: center - half_width,
            high: center + half_width,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.low <= other.low && other.high <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyWeight {
    pub id: String,
    pub effect: f64,
    pub variance: f64,
    /// Normalised random-effects weight; the column sums to 1.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub n_studies: usize,
    pub tau2: f64,
    pub mu_hat: f64,
    pub se_mu: f64,
    pub level: f64,
    pub ci: Interval,
    pub pi: Option<Interval>,
    pub q_stat: f64,
    /// Percent.
    pub i2: f64,
    pub per_study: Vec<StudyWeight>,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("level must lie in (0, 1), got {level}")))
    }
}

pub(crate) fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub(crate) fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("degrees of freedom are positive")
        .inverse_cdf(p)
}

/// `(μ̂, se)` with weights `1 / (v_i + τ²)`.
pub fn pooled_effect(effects: &[f64], variances: &[f64], tau2: f64) -> Result<(f64, f64)> {
    reml::check_inputs(effects, variances)?;
    if !(tau2 >= 0.0 && tau2.is_finite()) {
        return Err(Error::invalid(format!("tau2 must be finite and >= 0, got {tau2}")));
    }
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let mu = w.iter().zip(effects).map(|(w, y)| w * y).sum::<f64>() / sw;
    Ok((mu, sw.sqrt().recip()))
}

/// Wald CI and, for `n >= 3`, a prediction interval on `n − 2` degrees of
/// freedom with variance `τ² + se²`.
pub fn intervals(
    mu_hat: f64,
    se_mu: f64,
    tau2: f64,
    n: usize,
    level: f64,
) -> Result<(Interval, Option<Interval>)> {
    check_level(level)?;
    if n < 2 {
        return Err(Error::invalid(format!("intervals need n >= 2, got {n}")));
    }
    let p = 0.5 * (1.0 + level);
    let ci = Interval::around(mu_hat, z_quantile(p) * se_mu);
    let pi = (n >= 3).then(|| {
        Interval::around(mu_hat, t_quantile(p, (n - 2) as f64) * (tau2 + se_mu * se_mu).sqrt())
    });
    Ok((ci, pi))
}

/// Cochran's Q with fixed-effect weights and I² in percent.
pub fn heterogeneity_stats(effects: &[f64], variances: &[f64]) -> Result<(f64, f64)> {
    let (mu_fe, _) = pooled_effect(effects, variances, 0.0)?;
    let q: f64 = effects
        .iter()
        .zip(variances)
        .map(|(y, v)| (y - mu_fe) * (y - mu_fe) / v)
        .sum();
    let df = (effects.len() - 1) as f64;
    let i2 = if q > 0.0 { ((q - df) / q).max(0.0) * 100.0 } else { 0.0 };
    Ok((q, i2))
}

/// Full random-effects fit on parallel slices.
pub fn random_effects(
    ids: &[String],
    effects: &[f64],
    variances: &[f64],
    level: f64,
) -> Result<MetaResult> {
    if ids.len() != effects.len() {
        return Err(Error::invalid("ids and effects differ in length"));
    }
    check_level(level)?;
    let tau2 = reml_tau2(effects, variances)?;
    let (mu_hat, se_mu) = pooled_effect(effects, variances, tau2)?;
    let (ci, pi) = intervals(mu_hat, se_mu, tau2, effects.len(), level)?;
    let (q_stat, i2) = heterogeneity_stats(effects, variances)?;
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / (v + tau2)).collect();
    let sw: f64 = w.iter().sum();
    let per_study = ids
        .iter()
        .zip(effects)
        .zip(variances)
        .zip(&w)
        .map(|(((id, &effect), &variance), w)| StudyWeight {
            id: id.clone(),
            effect,
            variance,
            weight: w / sw,
        })
        .collect();
    Ok(MetaResult {
        n_studies: effects.len(),
        tau2,
        mu_hat,
        se_mu,
        level,
        ci,
        pi,
        q_stat,
        i2,
        per_study,
    })
}

/// Random-effects fit over a subset of the dataset's studies.
pub fn analyze_studies(ds: &Dataset, members: &[usize], level: f64) -> Result<MetaResult> {
    let ids: Vec<String> = members.iter().map(|&i| ds.studies[i].id.clone()).collect();
    let y: Vec<f64> = members.iter().map(|&i| ds.studies[i].effect).collect();
    let v: Vec<f64> = members.iter().map(|&i| ds.studies[i].variance).collect();
    random_effects(&ids, &y, &v, level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMeta {
    pub studies: Vec<String>,
    /// Absent for singleton clusters.
    pub result: Option<MetaResult>,
    pub singleton: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub label: String,
    pub n: usize,
    pub mu_hat: f64,
    pub ci: Interval,
    pub pi: Option<Interval>,
    pub tau2: Option<f64>,
    pub q: Option<f64>,
    pub i2: Option<f64>,
    /// Set on single-study clusters, whose row shows the raw effect.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

impl ForestRow {
    fn pooled(label: String, r: &MetaResult) -> Self {
        ForestRow {
            label,
            n: r.n_studies,
            mu_hat: r.mu_hat,
            ci: r.ci,
            pi: r.pi,
            tau2: Some(r.tau2),
            q: Some(r.q_stat),
            i2: Some(r.i2),
            flagged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub level: f64,
    pub overall: MetaResult,
    pub per_cluster: BTreeMap<usize, ClusterMeta>,
    /// Clusters in index order, then the overall row.
    pub forest: Vec<ForestRow>,
}

impl SubgroupReport {
    pub fn cluster_tau2(&self) -> BTreeMap<usize, Option<f64>> {
        self.per_cluster
            .iter()
            .map(|(&c, m)| (c, m.result.as_ref().map(|r| r.tau2)))
            .collect()
    }
}

pub fn subgroup_analysis(ds: &Dataset, ca: &ClusterAssignment, level: f64) -> Result<SubgroupReport> {
    check_level(level)?;
    if ca.labels.len() != ds.len() {
        return Err(Error::invalid(format!(
            "cluster labels cover {} studies but the dataset has {}",
            ca.labels.len(),
            ds.len()
        )));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let overall = analyze_studies(ds, &all, level)?;
    let z = z_quantile(0.5 * (1.0 + level));

    let mut per_cluster = BTreeMap::new();
    let mut forest = Vec::new();
    for c in 0..ca.k {
        let members = ca.members(c);
        if members.is_empty() {
            return Err(Error::invalid(format!("cluster {c} has no studies")));
        }
        let studies: Vec<String> = members.iter().map(|&i| ds.studies[i].id.clone()).collect();
        let label = format!("cluster {c}");
        if members.len() == 1 {
            let s = &ds.studies[members[0]];
            forest.push(ForestRow {
                label,
                n: 1,
                mu_hat: s.effect,
                ci: Interval::around(s.effect, z * s.variance.sqrt()),
                pi: None,
                tau2: None,
                q: None,
                i2: None,
                flagged: true,
            });
            per_cluster.insert(
                c,
                ClusterMeta {
                    studies,
                    result: None,
                    singleton: true,
                },
            );
            continue;
        }
        let r = analyze_studies(ds, &members, level)?;
        forest.push(ForestRow::pooled(label, &r));
        per_cluster.insert(
            c,
            ClusterMeta {
                studies,
                result: Some(r),
                singleton: false,
            },
        );
    }
    forest.push(ForestRow::pooled("overall".to_string(), &overall));
    Ok(SubgroupReport {
        level,
        overall,
        per_cluster,
        forest,
    })
}
