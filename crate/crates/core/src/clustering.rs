//! k-means on study embeddings (squared Euclidean), elbow curves and
//! partition agreement.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::seed::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    /// Row-major `k × d`.
    pub centers: Vec<f64>,
    pub d: usize,
    pub wcss: f64,
    pub seed: u64,
    pub restarts: usize,
    /// WCSS after every centre update of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.d..(j + 1) * self.d]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, j: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == j).then_some(i))
            .collect()
    }

    /// A labelling without geometry, e.g. planted groups.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |&x| x + 1);
        let a = Self {
            k,
            labels,
            centers: Vec::new(),
            d: 0,
            wcss: 0.0,
            seed: 0,
            restarts: 0,
            trace: Vec::new(),
        };
        if a.sizes().contains(&0) {
            return Err(Error::invalid("labels must use every cluster index 0..k"));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the largest squared centre shift is at or below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 0.0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ_i ‖x_i − μ_{label(i)}‖²`, summed in point order.
pub fn wcss_of(e: &Embedding, labels: &[usize], centers: &[f64]) -> f64 {
    let d = e.d;
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(e.row(i), &centers[l * d..(l + 1) * d]))
        .sum()
}

/// Cluster means, accumulated in point order.
pub fn centers_of(e: &Embedding, labels: &[usize], k: usize) -> Vec<f64> {
    let d = e.d;
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(e.row(i)) {
            *s += x;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for s in &mut sums[j * d..(j + 1) * d] {
                *s /= counts[j] as f64;
            }
        }
    }
    sums
}

fn nearest(x: &[f64], centers: &[f64], d: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.chunks_exact(d).enumerate() {
        let dj = sq_dist(x, c);
        if dj < best_d {
            best_d = dj;
            best = j;
        }
    }
    best
}

fn kmeans_pp(e: &Embedding, k: usize, r: &mut impl Rng) -> Vec<f64> {
    let d = e.d;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(r.random_range(0..e.m));
    let mut dmin: Vec<f64> = (0..e.m).map(|i| sq_dist(e.row(i), e.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = dmin.iter().sum();
        let next = if total > 0.0 {
            let target = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in dmin.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very end
            pick.unwrap_or_else(|| dmin.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..e.m).filter(|i| !chosen.contains(i)).collect();
            free[r.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, dm) in dmin.iter_mut().enumerate() {
            *dm = dm.min(sq_dist(e.row(i), e.row(next)));
        }
    }
    let mut centers = Vec::with_capacity(k * d);
    for &i in &chosen {
        centers.extend_from_slice(e.row(i));
    }
    centers
}

/// Gives every empty cluster the point farthest from its own centre, taken
/// from a cluster that can spare it.
fn repair_empty(e: &Embedding, labels: &mut [usize], centers: &mut [f64], k: usize) {
    let d = e.d;
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut pick = None;
        let mut far = -1.0;
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] < 2 {
                continue;
            }
            let di = sq_dist(e.row(i), &centers[l * d..(l + 1) * d]);
            if di > far {
                far = di;
                pick = Some(i);
            }
        }
        let i = pick.expect("k <= m leaves a cluster with two members");
        counts[labels[i]] -= 1;
        labels[i] = j;
        counts[j] = 1;
        centers[j * d..(j + 1) * d].copy_from_slice(e.row(i));
    }
}

struct Run {
    labels: Vec<usize>,
    centers: Vec<f64>,
    wcss: f64,
    trace: Vec<f64>,
}

fn lloyd(e: &Embedding, k: usize, cfg: &KMeansConfig, r: &mut impl Rng) -> Run {
    let d = e.d;
    let mut centers = kmeans_pp(e, k, r);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter.max(1) {
        let mut next: Vec<usize> = e.rows().map(|x| nearest(x, &centers, d)).collect();
        repair_empty(e, &mut next, &mut centers, k);
        if next == labels {
            break;
        }
        labels = next;
        let updated = centers_of(e, &labels, k);
        let shift = updated
            .chunks_exact(d)
            .zip(centers.chunks_exact(d))
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0, f64::max);
        centers = updated;
        trace.push(wcss_of(e, &labels, &centers));
        if shift <= cfg.tol && cfg.tol > 0.0 {
            break;
        }
    }
    let centers = centers_of(e, &labels, k);
    let wcss = wcss_of(e, &labels, &centers);
    Run {
        labels,
        centers,
        wcss,
        trace,
    }
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest WCSS
/// wins, earliest restart on ties. Point-to-centre ties go to the lower
/// centre index.
pub fn kmeans(e: &Embedding, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    if k < 1 || k > e.m {
        return Err(Error::invalid(format!(
            "k must lie in [1, m = {}], got {k}",
            e.m
        )));
    }
    if e.d == 0 {
        return Err(Error::invalid("cannot cluster a zero-dimensional embedding"));
    }
    let mut r = rng(seed);
    let mut best: Option<Run> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = lloyd(e, k, cfg, &mut r);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterAssignment {
        k,
        labels: best.labels,
        centers: best.centers,
        d: e.d,
        wcss: best.wcss,
        seed,
        restarts: cfg.restarts.max(1),
        trace: best.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowEntry {
    pub k: usize,
    pub wcss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub entries: Vec<ElbowEntry>,
    /// Advisory only: the k with the largest second difference of WCSS.
    pub advisory_knee: Option<usize>,
}

pub fn elbow_curve(
    e: &Embedding,
    k_min: usize,
    k_max: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<ElbowCurve> {
    if k_min > k_max {
        return Err(Error::invalid(format!(
            "elbow range is empty: k_min {k_min} > k_max {k_max}"
        )));
    }
    let entries = (k_min..=k_max)
        .map(|k| {
            kmeans(e, k, seed, cfg).map(|a| ElbowEntry { k, wcss: a.wcss })
        })
        .collect::<Result<Vec<_>>>()?;
    let advisory_knee = knee(&entries);
    Ok(ElbowCurve {
        entries,
        advisory_knee,
    })
}

fn knee(entries: &[ElbowEntry]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for w in entries.windows(3) {
        let second = w[0].wcss - 2.0 * w[1].wcss + w[2].wcss;
        if best.is_none_or(|(_, b)| second > b) {
            best = Some((w[1].k, second));
        }
    }
    best.map(|(k, _)| k)
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index of two labellings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "labelings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
        *cells.entry((x, y)).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

pub fn assignment_ari(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    adjusted_rand_index(&a.labels, &b.labels)
}
