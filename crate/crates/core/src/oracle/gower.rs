use crate::dataset::{CharacteristicKind, Dataset, Schema, Study, Value};
use crate::oracle::{JudgeRequest, Oracle, Slot, TripletJudgment};
use crate::Result;

/// Per-feature ranges needed to normalise numeric gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct GowerContext {
    pub schema: Schema,
    /// max − min over the dataset for numeric features, `None` otherwise or
    /// when no value is present.
    pub ranges: Vec<Option<f64>>,
}

impl GowerContext {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let ranges = ds
            .schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| {
                if f.kind != CharacteristicKind::Numeric {
                    return None;
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for s in &ds.studies {
                    if let Some(Value::Numeric(x)) = s.values.get(j).and_then(Option::as_ref) {
                        lo = lo.min(*x);
                        hi = hi.max(*x);
                    }
                }
                (lo <= hi).then_some(hi - lo)
            })
            .collect();
        Self {
            schema: ds.schema.clone(),
            ranges,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GowerDistance {
    pub value: f64,
    /// Number of features present in both studies.
    pub compared: usize,
    /// Set when no feature was jointly present (value is then 1).
    pub no_joint_features: bool,
    /// Numeric features with zero range that were compared (contributed 0).
    pub constant_features: Vec<String>,
}

pub fn gower_distance(a: &Study, b: &Study, ctx: &GowerContext) -> GowerDistance {
    let mut total = 0.0;
    let mut compared = 0usize;
    let mut constant_features = Vec::new();
    for (j, feat) in ctx.schema.features.iter().enumerate() {
        let (Some(va), Some(vb)) = (
            a.values.get(j).and_then(Option::as_ref),
            b.values.get(j).and_then(Option::as_ref),
        ) else {
            continue;
        };
        let d = match (feat.kind, va, vb) {
            (CharacteristicKind::Numeric, Value::Numeric(x), Value::Numeric(y)) => {
                match ctx.ranges[j] {
                    Some(r) if r > 0.0 => ((x - y).abs() / r).min(1.0),
                    _ => {
                        constant_features.push(feat.name.clone());
                        0.0
                    }
                }
            }
            // values of the wrong kind for the schema are not comparable
            (CharacteristicKind::Numeric, _, _) => continue,
            (CharacteristicKind::Categorical, _, _) | (CharacteristicKind::Text, _, _) => {
                let (sa, sb) = match (va, vb) {
                    (Value::Categorical(x) | Value::Text(x), Value::Categorical(y) | Value::Text(y)) => {
                        (x.as_bytes(), y.as_bytes())
                    }
                    _ => continue,
                };
                if sa == sb {
                    0.0
                } else {
                    1.0
                }
            }
        };
        total += d;
        compared += 1;
    }
    if compared == 0 {
        return GowerDistance {
            value: 1.0,
            compared,
            no_joint_features: true,
            constant_features,
        };
    }
    GowerDistance {
        value: total / compared as f64,
        compared,
        no_joint_features: false,
        constant_features,
    }
}

/// Picks the candidate with the smaller Gower distance to the anchor; equal
/// distances go to the lexicographically smaller study id.
pub fn judge_gower(
    anchor: &Study,
    cand_a: &Study,
    cand_b: &Study,
    ctx: &GowerContext,
) -> TripletJudgment {
    let da = gower_distance(anchor, cand_a, ctx);
    let db = gower_distance(anchor, cand_b, ctx);
    let more_similar = if da.value < db.value {
        Slot::A
    } else if db.value < da.value {
        Slot::B
    } else if cand_a.id <= cand_b.id {
        Slot::A
    } else {
        Slot::B
    };
    let mut explanation = format!(
        "gower(anchor, A={}) = {}; gower(anchor, B={}) = {}",
        cand_a.id, da.value, cand_b.id, db.value
    );
    if da.value == db.value {
        explanation.push_str("; tie broken by smaller id");
    }
    if da.no_joint_features || db.no_joint_features {
        explanation.push_str("; warning: no jointly observed characteristics");
    }
    TripletJudgment {
        anchor_id: anchor.id.clone(),
        candidate_a_id: cand_a.id.clone(),
        candidate_b_id: cand_b.id.clone(),
        more_similar,
        explanation,
        oracle_tag: "gower".into(),
        prompt_hash: None,
        presented_swapped: false,
    }
}

/// [`Oracle`] backed by [`judge_gower`], with ranges taken from the dataset
/// it was built from.
#[derive(Debug, Clone)]
pub struct GowerOracle {
    ctx: GowerContext,
}

impl GowerOracle {
    pub fn new(ds: &Dataset) -> Self {
        Self {
            ctx: GowerContext::from_dataset(ds),
        }
    }

    pub fn context(&self) -> &GowerContext {
        &self.ctx
    }
}

impl Oracle for GowerOracle {
    fn tag(&self) -> String {
        "gower".into()
    }

    fn judge(&self, ds: &Dataset, r: JudgeRequest) -> Result<TripletJudgment> {
        let get = |i: usize| {
            ds.studies
                .get(i)
                .ok_or_else(|| crate::Error::invalid(format!("study index {i} out of range")))
        };
        if r.anchor == r.candidate_a || r.anchor == r.candidate_b || r.candidate_a == r.candidate_b {
            return Err(crate::Error::invalid(format!(
                "triplet studies must be distinct, got {r:?}"
            )));
        }
        Ok(judge_gower(
            get(r.anchor)?,
            get(r.candidate_a)?,
            get(r.candidate_b)?,
            &self.ctx,
        ))
    }
}
