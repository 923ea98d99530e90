//! Triplet pool construction, the retained-triplet budget and seeded
//! subsampling.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::oracle::{JudgeRequest, Oracle, Slot, TripletJudgment};
use crate::seed::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub judgment: TripletJudgment,
}

impl Triplet {
    pub fn key(&self) -> (usize, usize, usize) {
        (self.anchor, self.positive, self.negative)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TripletSource {
    Pool,
    Subsample { seed: u64, budget: usize },
    Loaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub seed: u64,
    pub source: TripletSource,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// `(anchor, positive, negative)` index triples.
    pub fn index_triples(&self) -> Vec<[usize; 3]> {
        self.triplets
            .iter()
            .map(|t| [t.anchor, t.positive, t.negative])
            .collect()
    }

    /// Checks distinctness, index bounds, uniqueness and that positive and
    /// negative agree with the recorded judgment.
    pub fn check(&self, ds: &Dataset) -> Result<()> {
        let m = ds.len();
        let mut seen = HashSet::new();
        for (i, t) in self.triplets.iter().enumerate() {
            if t.anchor >= m || t.positive >= m || t.negative >= m {
                return Err(Error::invalid(format!("triplet {i}: index out of range for m = {m}")));
            }
            if t.anchor == t.positive || t.anchor == t.negative || t.positive == t.negative {
                return Err(Error::invalid(format!("triplet {i}: studies are not distinct")));
            }
            let id = |k: usize| ds.studies[k].id.as_str();
            if t.judgment.anchor_id != id(t.anchor)
                || t.judgment.winner_id() != id(t.positive)
                || t.judgment.loser_id() != id(t.negative)
            {
                return Err(Error::invalid(format!(
                    "triplet {i}: positive/negative disagree with the judgment"
                )));
            }
            if !seen.insert(t.key()) {
                return Err(Error::invalid(format!("triplet {i}: duplicate")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Base2,
    Base10,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base2 => x.log2(),
            LogBase::Base10 => x.log10(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" | "e" | "ln" => Ok(LogBase::Natural),
            "base2" | "2" => Ok(LogBase::Base2),
            "base10" | "10" => Ok(LogBase::Base10),
            other => Err(Error::Config(format!("unknown log base `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub m: usize,
    pub d: usize,
    pub lambda: u32,
    pub log_base: LogBase,
}

/// Number of triplets to retain: `⌈λ · m · d · log(m)⌉`.
pub fn triplet_budget(p: BudgetParams) -> Result<usize> {
    if p.m < 3 {
        return Err(Error::invalid(format!(
            "triplet budget needs m >= 3, got m = {}",
            p.m
        )));
    }
    if p.d < 1 || p.lambda < 1 {
        return Err(Error::invalid("triplet budget needs d >= 1 and lambda >= 1"));
    }
    let raw = f64::from(p.lambda) * p.m as f64 * p.d as f64 * p.log_base.log(p.m as f64);
    Ok(raw.ceil() as usize)
}

fn binom2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a rank in `0..C(n,2)` to the pair `(i, j)`, `i < j < n`, in
/// lexicographic order.
fn unrank_pair(mut r: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if r < row {
            return (i, i + 1 + r);
        }
        r -= row;
        i += 1;
    }
}

/// The comparisons [`generate_pool`] would send to the oracle, in order.
/// Returns the requests and the effective pairs per anchor.
pub fn pool_requests(m: usize, pairs_per_anchor: usize, seed: u64) -> Result<(Vec<JudgeRequest>, usize)> {
    if m < 3 {
        return Err(Error::invalid(format!("triplet pool needs m >= 3, got {m}")));
    }
    if pairs_per_anchor == 0 {
        return Err(Error::invalid("pairs_per_anchor must be positive"));
    }
    let available = binom2(m - 1);
    let per_anchor = if pairs_per_anchor > available {
        log::warn!(
            "pairs_per_anchor {pairs_per_anchor} exceeds the {available} distinct pairs per anchor; capping"
        );
        available
    } else {
        pairs_per_anchor
    };
    let mut rng = rng(seed);
    let mut requests = Vec::with_capacity(m * per_anchor);
    for anchor in 0..m {
        for r in index::sample(&mut rng, available, per_anchor) {
            // pair over the m-1 other studies, then skip the anchor
            let (i, j) = unrank_pair(r, m - 1);
            let lift = |k: usize| if k >= anchor { k + 1 } else { k };
            requests.push(JudgeRequest {
                anchor,
                candidate_a: lift(i),
                candidate_b: lift(j),
            });
        }
    }
    Ok((requests, per_anchor))
}

fn triplet_from(ds: &Dataset, req: JudgeRequest, judgment: TripletJudgment) -> Result<Triplet> {
    let (positive, negative) = match judgment.more_similar {
        Slot::A => (req.candidate_a, req.candidate_b),
        Slot::B => (req.candidate_b, req.candidate_a),
    };
    let t = Triplet {
        anchor: req.anchor,
        positive,
        negative,
        judgment,
    };
    if t.judgment.anchor_id != ds.studies[t.anchor].id
        || t.judgment.winner_id() != ds.studies[positive].id
    {
        return Err(Error::invalid("oracle answered a different comparison"));
    }
    Ok(t)
}

/// Judges `pairs_per_anchor` sampled candidate pairs for every anchor, in
/// dataset order. Exact duplicates are dropped after judging.
pub fn generate_pool(
    ds: &Dataset,
    oracle: &dyn Oracle,
    pairs_per_anchor: usize,
    seed: u64,
) -> Result<TripletSet> {
    let (requests, _) = pool_requests(ds.len(), pairs_per_anchor, seed)?;
    let results = oracle.judge_all(ds, &requests);
    let mut triplets = Vec::with_capacity(requests.len());
    let mut seen = HashSet::new();
    for (req, res) in requests.iter().zip(results) {
        let judgment = match res {
            Some(r) => r?,
            None => return Err(Error::invalid("oracle stopped before answering every request")),
        };
        let t = triplet_from(ds, *req, judgment)?;
        if seen.insert(t.key()) {
            triplets.push(t);
        }
    }
    Ok(TripletSet {
        triplets,
        seed,
        source: TripletSource::Pool,
    })
}

/// Uniform random subset of `budget` triplets, kept in pool order.
pub fn subsample(pool: &TripletSet, budget: usize, seed: u64) -> Result<TripletSet> {
    if budget == 0 {
        return Err(Error::invalid("subsample budget must be positive"));
    }
    if budget > pool.len() {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the pool of {} triplets; increase pairs_per_anchor",
            pool.len()
        )));
    }
    let mut picked = index::sample(&mut rng(seed), pool.len(), budget).into_vec();
    picked.sort_unstable();
    Ok(TripletSet {
        triplets: picked.into_iter().map(|i| pool.triplets[i].clone()).collect(),
        seed,
        source: TripletSource::Subsample { seed, budget },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRecord {
    anchor_id: String,
    positive_id: String,
    negative_id: String,
    oracle_tag: String,
    #[serde(default)]
    explanation: String,
    #[serde(default)]
    prompt_hash: Option<String>,
}

/// One JSON object per line, ids rather than indices.
pub fn to_jsonl(set: &TripletSet) -> String {
    let mut out = String::new();
    for t in &set.triplets {
        let rec = JsonlRecord {
            anchor_id: t.judgment.anchor_id.clone(),
            positive_id: t.judgment.winner_id().to_string(),
            negative_id: t.judgment.loser_id().to_string(),
            oracle_tag: t.judgment.oracle_tag.clone(),
            explanation: t.judgment.explanation.clone(),
            prompt_hash: t.judgment.prompt_hash.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain strings serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(set: &TripletSet, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(to_jsonl(set).as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses triplets.jsonl, mapping ids back to indices of `ds`. The positive is
/// recorded as candidate A.
pub fn parse_jsonl(text: &str, ds: &Dataset) -> Result<TripletSet> {
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("triplets line {}", n + 1);
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        let idx = |id: &str| {
            ds.index_of(id).ok_or_else(|| Error::Parse {
                location: location.clone(),
                message: format!("unknown study id \"{id}\""),
            })
        };
        let (a, p, q) = (idx(&rec.anchor_id)?, idx(&rec.positive_id)?, idx(&rec.negative_id)?);
        if a == p || a == q || p == q {
            return Err(Error::Parse {
                location,
                message: "anchor, positive and negative must be distinct".into(),
            });
        }
        if !seen.insert((a, p, q)) {
            continue;
        }
        triplets.push(Triplet {
            anchor: a,
            positive: p,
            negative: q,
            judgment: TripletJudgment {
                anchor_id: rec.anchor_id,
                candidate_a_id: rec.positive_id,
                candidate_b_id: rec.negative_id,
                more_similar: Slot::A,
                explanation: rec.explanation,
                oracle_tag: rec.oracle_tag,
                prompt_hash: rec.prompt_hash,
                presented_swapped: false,
            },
        });
    }
    Ok(TripletSet {
        triplets,
        seed: 0,
        source: TripletSource::Loaded,
    })
}

pub fn read_jsonl(path: &Path, ds: &Dataset) -> Result<TripletSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_jsonl(&text, ds)
}
