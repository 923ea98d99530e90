use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Schema, Study};
use crate::oracle::{JudgeRequest, Oracle, OracleConfig, OracleKind, Slot, TripletJudgment};
use crate::seed::sha256_hex;
use crate::{Error, Result};

pub const API_KEY_ENV: &str = "TRIPLET_META_API_KEY";

pub const SYSTEM_PROMPT: &str = "You compare studies included in a meta-analysis. \
You are given an anchor study and two candidate studies, A and B, each described by its \
clinical and methodological characteristics. Decide which candidate is more similar to the \
anchor with respect to those characteristics. Reply with a single JSON object and nothing \
else, of the form {\"more_similar\": \"A\" | \"B\", \"explanation\": \"<one or two sentences>\"}.";

pub const DEFAULT_PROMPT_TEMPLATE: &str = "Anchor study:
{anchor}

Candidate A:
{candidate_a}

Candidate B:
{candidate_b}

Which candidate, A or B, is more similar to the anchor study according to its clinical and \
methodological characteristics? Answer with JSON only: \
{\"more_similar\": \"A\" or \"B\", \"explanation\": \"brief reason\"}.
";

/// `name: value` lines, one per characteristic in schema order.
pub fn render_characteristics(study: &Study, schema: &Schema) -> String {
    let mut out = String::new();
    for c in study.characteristics(schema) {
        match c.value {
            Some(v) => out.push_str(&format!("{}: {v}\n", c.name)),
            None => out.push_str(&format!("{}: not reported\n", c.name)),
        }
    }
    if out.ends_with('\n') {
        out.pop();
    }
    out
}

pub fn render_prompt(
    template: &str,
    anchor: &Study,
    first: &Study,
    second: &Study,
    schema: &Schema,
) -> String {
    template
        .replace("{anchor}", &render_characteristics(anchor, schema))
        .replace("{candidate_a}", &render_characteristics(first, schema))
        .replace("{candidate_b}", &render_characteristics(second, schema))
}

/// Whether the candidates are shown in reverse order. A stable coin flip on
/// the study ids, so identical requests render identical prompts.
pub fn presentation_swapped(anchor: &str, a: &str, b: &str, order_seed: u64) -> bool {
    let digest = sha256_hex(format!("{order_seed}\u{1f}{anchor}\u{1f}{a}\u{1f}{b}").as_bytes());
    u8::from_str_radix(&digest[..2], 16).unwrap_or(0) & 1 == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    temperature: f64,
    endpoint: String,
    prompt_hash: String,
    system: String,
    prompt: String,
    raw_reply: String,
    /// Slot as presented in the prompt, before undoing any swap.
    presented_more_similar: Slot,
    explanation: String,
    /// The judgment for the request that first populated the entry.
    judgment: TripletJudgment,
}

#[derive(Deserialize)]
struct Reply {
    more_similar: String,
    #[serde(default)]
    explanation: String,
}

enum AttemptError {
    Transport(String),
    Fatal(String),
    Parse { message: String, raw: String },
}

/// Chat-completion client with on-disk caching and retries.
pub struct LlmOracle {
    cfg: OracleConfig,
    api_key: String,
    template: String,
    agent: ureq::Agent,
    cache_dir: PathBuf,
    write_lock: Mutex<()>,
    network_requests: AtomicU64,
}

impl std::fmt::Debug for LlmOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmOracle")
            .field("endpoint", &self.cfg.endpoint)
            .field("model", &self.cfg.model)
            .field("cache_dir", &self.cache_dir)
            .finish_non_exhaustive()
    }
}

impl LlmOracle {
    /// Reads the API key from `TRIPLET_META_API_KEY`.
    pub fn from_env(cfg: OracleConfig) -> Result<Self> {
        Self::new(cfg, std::env::var(API_KEY_ENV).ok())
    }

    pub fn new(cfg: OracleConfig, api_key: Option<String>) -> Result<Self> {
        if cfg.kind != OracleKind::Llm {
            return Err(Error::Config("LLM oracle built from a non-llm config".into()));
        }
        cfg.validate()?;
        let api_key = match api_key {
            Some(k) if !k.trim().is_empty() => k,
            _ => {
                return Err(Error::Config(format!(
                    "environment variable {API_KEY_ENV} is not set"
                )))
            }
        };
        let template = match &cfg.prompt_template {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::io(format!("reading prompt template {}", p.display()), e))?,
            None => DEFAULT_PROMPT_TEMPLATE.to_string(),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let cache_dir = cfg.cache_dir.join(model_dir_name(&cfg.model));
        Ok(Self {
            cfg,
            api_key,
            template,
            agent,
            cache_dir,
            write_lock: Mutex::new(()),
            network_requests: AtomicU64::new(0),
        })
    }

    /// HTTP requests sent so far (cache hits excluded).
    pub fn network_requests(&self) -> u64 {
        self.network_requests.load(Ordering::SeqCst)
    }

    pub fn prompt_hash(&self, prompt: &str) -> String {
        sha256_hex(format!("{}\n\n{}\n\n{}", self.cfg.model, SYSTEM_PROMPT, prompt).as_bytes())
    }

    fn cache_path(&self, prompt_hash: &str) -> PathBuf {
        self.cache_dir.join(format!("{prompt_hash}.json"))
    }

    fn read_cache(&self, path: &Path) -> Option<CacheEntry> {
        let bytes = std::fs::read(path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("ignoring unreadable cache file {}: {e}", path.display());
                None
            }
        }
    }

    fn write_cache(&self, path: &Path, entry: &CacheEntry) -> Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        std::fs::create_dir_all(&self.cache_dir)
            .map_err(|e| Error::io(format!("creating {}", self.cache_dir.display()), e))?;
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(entry).map_err(|e| Error::json("cache entry", e))?;
        std::fs::write(&tmp, body).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        std::fs::rename(&tmp, path)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    fn request_once(&self, prompt: &str) -> std::result::Result<(String, Reply), AttemptError> {
        self.network_requests.fetch_add(1, Ordering::SeqCst);
        let body = serde_json::json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "response_format": {"type": "json_object"},
        });
        let mut resp = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => {
                return Err(AttemptError::Transport(format!("HTTP {status}: {raw}")))
            }
            _ => return Err(AttemptError::Fatal(format!("HTTP {status}: {raw}"))),
        }
        parse_reply(&raw)
            .map(|r| (raw.clone(), r))
            .map_err(|message| AttemptError::Parse { message, raw })
    }

    fn ask(&self, prompt: &str) -> Result<(String, Slot, String)> {
        let attempts = self.cfg.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.request_once(prompt) {
                Ok((raw, reply)) => {
                    let slot = Slot::parse(&reply.more_similar)
                        .expect("parse_reply validated more_similar");
                    return Ok((raw, slot, reply.explanation));
                }
                Err(AttemptError::Fatal(message)) => {
                    return Err(Error::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(e) => {
                    match &e {
                        AttemptError::Transport(m) => log::warn!("attempt {}: {m}", attempt + 1),
                        AttemptError::Parse { message, .. } => {
                            log::warn!("attempt {}: malformed reply: {message}", attempt + 1)
                        }
                        AttemptError::Fatal(_) => {}
                    }
                    last = Some(e);
                }
            }
        }
        Err(match last {
            Some(AttemptError::Parse { message, raw }) => Error::JudgmentParse {
                attempts,
                message,
                raw,
            },
            Some(AttemptError::Transport(message)) | Some(AttemptError::Fatal(message)) => {
                Error::Transport { attempts, message }
            }
            None => Error::Transport {
                attempts,
                message: "no attempt made".into(),
            },
        })
    }

    pub fn judge_studies(
        &self,
        anchor: &Study,
        cand_a: &Study,
        cand_b: &Study,
        schema: &Schema,
    ) -> Result<TripletJudgment> {
        let swapped =
            presentation_swapped(&anchor.id, &cand_a.id, &cand_b.id, self.cfg.order_seed);
        let (first, second) = if swapped {
            (cand_b, cand_a)
        } else {
            (cand_a, cand_b)
        };
        let prompt = render_prompt(&self.template, anchor, first, second, schema);
        let prompt_hash = self.prompt_hash(&prompt);
        let path = self.cache_path(&prompt_hash);

        let make = |presented: Slot, explanation: String| {
            let more_similar = if swapped { presented.swapped() } else { presented };
            TripletJudgment {
                anchor_id: anchor.id.clone(),
                candidate_a_id: cand_a.id.clone(),
                candidate_b_id: cand_b.id.clone(),
                more_similar,
                explanation,
                oracle_tag: self.tag(),
                prompt_hash: Some(prompt_hash.clone()),
                presented_swapped: swapped,
            }
        };

        if let Some(entry) = self.read_cache(&path) {
            if entry.prompt == prompt && entry.model == self.cfg.model {
                return Ok(make(entry.presented_more_similar, entry.explanation));
            }
        }

        let (raw, presented, explanation) = self.ask(&prompt)?;
        let judgment = make(presented, explanation.clone());
        let entry = CacheEntry {
            model: self.cfg.model.clone(),
            temperature: self.cfg.temperature,
            endpoint: self.cfg.endpoint.clone(),
            prompt_hash: prompt_hash.clone(),
            system: SYSTEM_PROMPT.to_string(),
            prompt,
            raw_reply: raw,
            presented_more_similar: presented,
            explanation,
            judgment: judgment.clone(),
        };
        self.write_cache(&path, &entry)?;
        Ok(judgment)
    }
}

fn model_dir_name(model: &str) -> String {
    let clean: String = model
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{clean}-{}", &sha256_hex(model.as_bytes())[..8])
}

fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Accepts either a chat-completion envelope whose first message content is
/// the JSON answer, or the JSON answer itself.
fn parse_reply(raw: &str) -> std::result::Result<Reply, String> {
    let doc: serde_json::Value =
        serde_json::from_str(raw.trim()).map_err(|e| format!("reply is not JSON: {e}"))?;
    let answer = if doc.get("more_similar").is_some() {
        doc
    } else {
        let content = doc
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or("reply has neither `more_similar` nor choices[0].message.content")?;
        serde_json::from_str(strip_fences(content))
            .map_err(|e| format!("message content is not JSON: {e}"))?
    };
    let reply: Reply =
        serde_json::from_value(answer).map_err(|e| format!("unexpected answer shape: {e}"))?;
    if Slot::parse(&reply.more_similar).is_none() {
        return Err(format!(
            "more_similar must be \"A\" or \"B\", got {:?}",
            reply.more_similar
        ));
    }
    Ok(reply)
}

impl Oracle for LlmOracle {
    fn tag(&self) -> String {
        format!("llm:{}", self.cfg.model)
    }

    fn judge(&self, ds: &Dataset, r: JudgeRequest) -> Result<TripletJudgment> {
        let get = |i: usize| {
            ds.studies
                .get(i)
                .ok_or_else(|| Error::invalid(format!("study index {i} out of range")))
        };
        if r.anchor == r.candidate_a || r.anchor == r.candidate_b || r.candidate_a == r.candidate_b {
            return Err(Error::invalid(format!(
                "triplet studies must be distinct, got {r:?}"
            )));
        }
        self.judge_studies(
            get(r.anchor)?,
            get(r.candidate_a)?,
            get(r.candidate_b)?,
            &ds.schema,
        )
    }

    /// Up to `max_in_flight` worker threads pull requests in index order.
    fn judge_all(
        &self,
        ds: &Dataset,
        requests: &[JudgeRequest],
    ) -> Vec<Option<Result<TripletJudgment>>> {
        let slots: Vec<Mutex<Option<Result<TripletJudgment>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let workers = self.cfg.max_in_flight.min(requests.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let res = self.judge(ds, requests[i]);
                    if res.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(res);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()))
            .collect()
    }
}
