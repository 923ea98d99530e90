//! Similarity judges: given an anchor study and two candidates, decide which
//! candidate is closer to the anchor.
//!
//! [`GowerOracle`] is deterministic and offline; [`LlmOracle`] asks a
//! chat-completion endpoint and caches every answer on disk.

mod gower;
mod llm;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::Result;

pub use gower::{gower_distance, judge_gower, GowerContext, GowerDistance, GowerOracle};
pub use llm::{
    presentation_swapped, render_characteristics, render_prompt, LlmOracle, DEFAULT_PROMPT_TEMPLATE,
    API_KEY_ENV, SYSTEM_PROMPT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
}

impl Slot {
    pub fn swapped(self) -> Self {
        match self {
            Slot::A => Slot::B,
            Slot::B => Slot::A,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().trim_matches('"').to_ascii_uppercase().as_str() {
            "A" => Some(Slot::A),
            "B" => Some(Slot::B),
            _ => None,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::A => "A",
            Slot::B => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletJudgment {
    pub anchor_id: String,
    pub candidate_a_id: String,
    pub candidate_b_id: String,
    pub more_similar: Slot,
    pub explanation: String,
    /// `gower` or `llm:<model>`.
    pub oracle_tag: String,
    /// Digest of the rendered prompt (LLM judgments only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    /// True when candidate B was shown first in the prompt.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub presented_swapped: bool,
}

impl TripletJudgment {
    pub fn winner_id(&self) -> &str {
        match self.more_similar {
            Slot::A => &self.candidate_a_id,
            Slot::B => &self.candidate_b_id,
        }
    }

    pub fn loser_id(&self) -> &str {
        match self.more_similar {
            Slot::A => &self.candidate_b_id,
            Slot::B => &self.candidate_a_id,
        }
    }
}

/// One comparison, by study index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub anchor: usize,
    pub candidate_a: usize,
    pub candidate_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Llm,
    Gower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub cache_dir: std::path::PathBuf,
    /// Path to a prompt template overriding the built-in one.
    pub prompt_template: Option<std::path::PathBuf>,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    /// Mixed into the candidate-order coin so different runs can reshuffle.
    pub order_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Gower,
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_in_flight: 4,
            max_retries: 3,
            cache_dir: "cache".into(),
            prompt_template: None,
            backoff_ms: 500,
            timeout_secs: 120,
            order_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(crate::Error::Config(format!(
                "oracle temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight < 1 {
            return Err(crate::Error::Config("oracle max_in_flight must be >= 1".into()));
        }
        if self.kind == OracleKind::Llm && self.model.trim().is_empty() {
            return Err(crate::Error::Config("LLM oracle needs a model name".into()));
        }
        Ok(())
    }
}

/// Anything that can answer triplet comparisons over a dataset.
pub trait Oracle: Sync {
    fn tag(&self) -> String;

    fn judge(&self, ds: &Dataset, request: JudgeRequest) -> Result<TripletJudgment>;

    /// Judges every request; `results[i]` answers `requests[i]` whatever the
    /// completion order. Implementations may stop early after an error, in
    /// which case the remaining slots hold `None`.
    fn judge_all(
        &self,
        ds: &Dataset,
        requests: &[JudgeRequest],
    ) -> Vec<Option<Result<TripletJudgment>>> {
        let mut out = Vec::with_capacity(requests.len());
        for &r in requests {
            let res = self.judge(ds, r);
            let failed = res.is_err();
            out.push(Some(res));
            if failed {
                break;
            }
        }
        out.resize_with(requests.len(), || None);
        out
    }
}
