//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use triplet_meta::clustering::{adjusted_rand_index, kmeans, KMeansConfig};
use triplet_meta::dataset::{parse_dataset, Format};
use triplet_meta::embedding::{triplet_loss, triplet_loss_grad, Embedding};
use triplet_meta::meta::{analyze_studies, meta_regression, random_effects, reml_tau2, tau2_upper_bound};
use triplet_meta::oracle::{JudgeRequest, LlmOracle, Oracle, OracleConfig, OracleKind, Slot};
use triplet_meta::pipeline::{
    ClusterArtifact, EmbeddingArtifact, RunManifest, Runner, Stage, TripletSummary, CLUSTERS, EMBEDDING,
    SENSITIVITY, TRIPLETS, TRIPLET_SUMMARY,
};
use triplet_meta::sensitivity::{GridSpec, SensitivityReport};
use triplet_meta::synthetic::{planted_groups, PlantedSpec};
use triplet_meta::triplets::{triplet_budget, BudgetParams, LogBase};
use triplet_meta::Error;

use common::{chat_reply, planted_config, MockServer};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn planted_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path());
    let planted = planted_groups(&PlantedSpec::default()).unwrap();
    let start = Instant::now();
    let mut runner = Runner::new(cfg).unwrap();
    runner.run_all().map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let out = dir.path().join("out");
    let emb: EmbeddingArtifact = read_json(&out.join(EMBEDDING));
    let ca: ClusterArtifact = read_json(&out.join(CLUSTERS));
    let labels = ca.assignment(&planted.dataset).unwrap().labels;
    let ari = adjusted_rand_index(&labels, &planted.groups).unwrap();
    check(
        emb.best_triplet_error < 0.10 && ari >= 0.9 && secs <= 60.0 && emb.d == 2 && ca.k == 3,
        format!("best triplet error {:.4}, ARI {ari:.4}, {secs:.2} s", emb.best_triplet_error),
    )
}

fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut up, mut dn) = (x.to_vec(), x.to_vec());
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let margin = 1.0;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for d in [1usize, 2, 5] {
        let mut n = 0;
        while n < 200 {
            let x: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (a, p, q) = (&x[..d], &x[d..2 * d], &x[2 * d..]);
            let (dap, dan) = (dist(a, p), dist(a, q));
            let hinge = margin + dap - dan;
            if hinge <= 1e-3 || dap < 1e-3 || dan < 1e-3 {
                continue;
            }
            n += 1;
            let g = triplet_loss_grad(a, p, q, margin).unwrap();
            let analytic: Vec<f64> = [g.anchor, g.positive, g.negative].concat();
            let f = |z: &[f64]| triplet_loss(&z[..d], &z[d..2 * d], &z[2 * d..], margin).unwrap();
            let numeric = central_diff(&f, &x, 1e-6);
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(u, v)| u - v).collect();
            worst = worst.max(norm(&diff) / norm(&numeric));
        }
        checked += n;
    }
    check(worst <= 1e-4, format!("{checked} active triplets, worst relative error {worst:.2e}"))
}

/// Restricted log-likelihood, written out independently of the library.
fn reml_loglik(y: &[f64], v: &[f64], t: f64) -> f64 {
    let w: Vec<f64> = v.iter().map(|vi| 1.0 / (vi + t)).collect();
    let sw: f64 = w.iter().sum();
    let mu = y.iter().zip(&w).map(|(yi, wi)| yi * wi).sum::<f64>() / sw;
    let rss: f64 = y.iter().zip(&w).map(|(yi, wi)| wi * (yi - mu).powi(2)).sum();
    -0.5 * (v.iter().map(|vi| (vi + t).ln()).sum::<f64>() + sw.ln() + rss)
}

fn random_meta(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let tau2: f64 = rng.random_range(0.0..1.0);
    let mu: f64 = rng.random_range(-1.0..1.0);
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let y = v
        .iter()
        .map(|vi| mu + Normal::new(0.0, (vi + tau2).sqrt()).unwrap().sample(rng))
        .collect();
    (y, v)
}

fn reml_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_grid, mut worst_scale) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.random_range(3..=20);
        let (y, v) = random_meta(&mut rng, n);
        let est = reml_tau2(&y, &v).unwrap();
        let hi = tau2_upper_bound(&y, &v);
        let steps = (hi / 1e-4).ceil() as usize;
        let (mut best_t, mut best_f) = (0.0, f64::NEG_INFINITY);
        for i in 0..=steps {
            let t = (i as f64 * 1e-4).min(hi);
            let f = reml_loglik(&y, &v, t);
            if f > best_f {
                (best_t, best_f) = (t, f);
            }
        }
        worst_grid = worst_grid.max((est - best_t).abs());
        for c in [0.1, 3.0] {
            let ys: Vec<f64> = y.iter().map(|x| c * x).collect();
            let vs: Vec<f64> = v.iter().map(|x| c * c * x).collect();
            let scaled = reml_tau2(&ys, &vs).unwrap();
            let expect = c * c * est;
            let rel = if expect == 0.0 { scaled.abs() } else { (scaled - expect).abs() / expect };
            worst_scale = worst_scale.max(rel);
        }
    }
    let equal = [0.3; 7];
    let ve: Vec<f64> = (0..7).map(|_| rng.random_range(0.01..1.0)).collect();
    let zero = reml_tau2(&equal, &ve).unwrap();
    check(
        worst_grid <= 1e-4 && zero == 0.0 && worst_scale <= 1e-10,
        format!(
            "worst grid gap {worst_grid:.2e}, equal-effects tau2 {zero}, worst scale error {worst_scale:.2e}"
        ),
    )
}

/// Centroid WCSS with sums accumulated in point order.
fn wcss_brute(x: &[f64], d: usize, labels: &[usize]) -> f64 {
    let mut c = vec![0.0; 2 * d];
    let mut cnt = [0usize; 2];
    for (i, &l) in labels.iter().enumerate() {
        cnt[l] += 1;
        for j in 0..d {
            c[l * d + j] += x[i * d + j];
        }
    }
    for l in 0..2 {
        for j in 0..d {
            c[l * d + j] /= cnt[l] as f64;
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| (0..d).map(|j| (x[i * d + j] - c[l * d + j]).powi(2)).sum::<f64>())
        .sum()
}

fn kmeans_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    for inst in 0..20 {
        let m = rng.random_range(3..=10);
        let d = 2;
        let x: Vec<f64> = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = f64::INFINITY;
        // labelings with point 0 in cluster 0 and both clusters non-empty
        for mask in 1u32..(1 << (m - 1)) {
            let labels: Vec<usize> = (0..m).map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize }).collect();
            best = best.min(wcss_brute(&x, d, &labels));
        }
        let e = Embedding::new(m, d, x).unwrap();
        let got = kmeans(&e, 2, inst, &KMeansConfig::default()).unwrap().wcss;
        if got != best {
            mismatches.push(format!("instance {inst}: {got} vs {best}"));
        }
    }
    check(mismatches.is_empty(), format!("20 instances, {} mismatch(es) {mismatches:?}", mismatches.len()))
}

fn budget_formula() -> Outcome {
    let got = triplet_budget(BudgetParams { m: 58, d: 2, lambda: 2, log_base: LogBase::Natural }).unwrap();
    let expect = (2.0 * 58.0 * 2.0 * 58f64.ln()).ceil() as usize;

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_config(dir.path());
    cfg.budget.budget = Some(1160);
    let mut runner = Runner::new(cfg).unwrap();
    runner.run_stage(Stage::Ingest).map_err(|e| e.to_string())?;
    runner.run_stage(Stage::Triplets).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let summary: TripletSummary = read_json(&out.join(TRIPLET_SUMMARY));
    let lines = std::fs::read_to_string(out.join(TRIPLETS)).unwrap().lines().count();

    let cli_dir = tempfile::tempdir().unwrap();
    planted_config(cli_dir.path());
    let toml = cli_dir.path().join("config.toml");
    std::fs::write(&toml, "out = \"out\"\n[dataset]\npath = \"studies.json\"\n").unwrap();
    let bin = env!("CARGO_BIN_EXE_triplet-meta");
    for stage in ["ingest", "triplets"] {
        let st = Command::new(bin)
            .args(["--config", toml.to_str().unwrap(), "--budget", "1160", stage])
            .output()
            .unwrap();
        if !st.status.success() {
            return Err(format!("CLI {stage} failed: {}", String::from_utf8_lossy(&st.stderr)));
        }
    }
    let cli_lines = std::fs::read_to_string(cli_dir.path().join("out").join(TRIPLETS)).unwrap().lines().count();
    check(
        got == 943 && expect == 943 && summary.formula_budget == 943 && summary.budget == 1160 && lines == 1160 && cli_lines == 1160,
        format!(
            "formula {got}, override config {} ({lines} lines), override CLI {cli_lines} lines",
            summary.budget
        ),
    )
}

fn interval_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(3..=20);
        let (y, v) = random_meta(&mut rng, n);
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let r = random_effects(&ids, &y, &v, 0.95).unwrap();
        match r.pi {
            Some(pi) if pi.half_width() >= r.ci.half_width() => {}
            _ => bad += 1,
        }
    }
    let two = random_effects(&["a".into(), "b".into()], &[0.1, 0.5], &[0.02, 0.03], 0.95).unwrap();

    let mut worst: f64 = 0.0;
    for seed in 1..=10 {
        let ds = planted_groups(&PlantedSpec { seed, ..Default::default() }).unwrap().dataset;
        let reg = meta_regression(&ds, &[], 0.95).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let re = analyze_studies(&ds, &all, 0.95).unwrap();
        let c = &reg.coefficients[0];
        for (a, b) in [
            (reg.tau2, re.tau2),
            (c.estimate, re.mu_hat),
            (c.se, re.se_mu),
            (c.ci.low, re.ci.low),
            (c.ci.high, re.ci.high),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        bad == 0 && two.pi.is_none() && worst <= 1e-8,
        format!(
            "PI narrower than CI in {bad}/100, n=2 PI {}, intercept-only worst gap {worst:.2e}",
            if two.pi.is_none() { "absent" } else { "present" }
        ),
    )
}

fn subgroup_ordering() -> Outcome {
    let mut wins = 0;
    for seed in 1..=100 {
        let p = planted_groups(&PlantedSpec { seed, ..Default::default() }).unwrap();
        let homogeneous: Vec<usize> = (0..p.dataset.len()).filter(|&i| p.groups[i] == 0).collect();
        let all: Vec<usize> = (0..p.dataset.len()).collect();
        let t0 = analyze_studies(&p.dataset, &homogeneous, 0.95).unwrap().tau2;
        let overall = analyze_studies(&p.dataset, &all, 0.95).unwrap().tau2;
        if t0 < overall {
            wins += 1;
        }
    }
    check(wins >= 95, format!("homogeneous cluster below overall in {wins}/100"))
}

fn sensitivity_stability() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_config(dir.path());
    cfg.subsample_seed = Some(20);
    cfg.sensitivity = Some(GridSpec { seeds: vec![20, 50, 100], lambdas: vec![2], dims: vec![2], ks: vec![3, 4, 5] });
    let mut runner = Runner::new(cfg).unwrap();
    runner.run_all().map_err(|e| e.to_string())?;
    let r: SensitivityReport = read_json(&dir.path().join("out").join(SENSITIVITY));
    let block = r.ari.iter().find(|b| b.k == 3).ok_or("no k = 3 ARI block")?;
    let min_ari = block.min_off_diagonal().ok_or("k = 3 block has fewer than two seeds")?;
    let mut jaccards = Vec::new();
    let mut reference = None;
    for s in &r.stability {
        let per_k: Vec<String> = s.summary.matches.iter().map(|m| format!("k{} {:.2}", m.k, m.jaccard)).collect();
        jaccards.push(format!("seed {} [{}]", s.seed, per_k.join(" ")));
        if s.seed == 20 {
            reference = Some(s.summary.min_jaccard());
        }
    }
    let j = reference.ok_or("no stability entry for the reference seed")?;
    check(
        min_ari >= 0.8 && j >= 0.9,
        format!("min pairwise ARI {min_ari:.3}, reference best-Jaccard over k=3..5 {j:.3} ({})", jaccards.join(", ")),
    )
}

fn llm_contract() -> Outcome {
    let ds = planted_groups(&PlantedSpec::default()).unwrap().dataset;
    let cache = tempfile::tempdir().unwrap();
    let oracle_for = |url: &str, retries: u32| {
        let cfg = OracleConfig {
            kind: OracleKind::Llm,
            endpoint: url.to_string(),
            model: "mock-model".into(),
            max_retries: retries,
            backoff_ms: 1,
            timeout_secs: 5,
            cache_dir: cache.path().to_path_buf(),
            ..Default::default()
        };
        LlmOracle::new(cfg, Some("test-key".into())).unwrap()
    };
    let req = JudgeRequest { anchor: 0, candidate_a: 1, candidate_b: 2 };

    let good = MockServer::start(vec![(200, chat_reply(r#"{"more_similar": "A", "explanation": "same region"}"#))]);
    let oracle = oracle_for(&good.url, 2);
    let j = oracle.judge(&ds, req).map_err(|e| e.to_string())?;
    // the reply names a presented slot; map it back through the swap
    let expect = if j.presented_swapped { Slot::B } else { Slot::A };
    let parsed = j.more_similar == expect && j.explanation == "same region" && good.hits() == 1;

    let fresh = oracle_for(&good.url, 2);
    let again = fresh.judge(&ds, req).map_err(|e| e.to_string())?;
    let cached = again == j && fresh.network_requests() == 0 && good.hits() == 1;

    let garbage = "I think A is closer, honestly.";
    let bad = MockServer::start(vec![(200, garbage.to_string())]);
    let other = JudgeRequest { anchor: 3, candidate_a: 4, candidate_b: 5 };
    let err = oracle_for(&bad.url, 2).judge(&ds, other);
    let parse_error = matches!(
        &err,
        Err(Error::JudgmentParse { attempts: 3, raw, .. }) if raw == garbage
    ) && bad.hits() == 3;

    check(
        parsed && cached && parse_error,
        format!(
            "structured reply parsed: {parsed}; malformed reply retried {} times then parse error with raw body: {parse_error}; cache hit with zero requests: {cached}",
            bad.hits()
        ),
    )
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for dir in [&a, &b] {
        let cfg = planted_config(dir.path());
        Runner::new(cfg).unwrap().run_all().map_err(|e| e.to_string())?;
        hashes.push(RunManifest::read(&dir.path().join("out")).unwrap().unwrap().artifacts);
    }
    let same = hashes[0] == hashes[1] && !hashes[0].is_empty();
    let files: BTreeSet<_> = hashes[0].keys().collect();
    let ds_ok = parse_dataset(&std::fs::read(a.path().join("studies.json")).unwrap(), Format::Json).is_ok();
    check(same && ds_ok, format!("{} artifacts, hashes identical: {same}", files.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("planted structure end-to-end", planted_end_to_end),
        ("gradient vs finite differences", gradient_oracle),
        ("REML vs grid maximiser", reml_oracle),
        ("k-means vs brute force", kmeans_brute_force),
        ("budget formula and override", budget_formula),
        ("interval properties", interval_properties),
        ("subgroup heterogeneity ordering", subgroup_ordering),
        ("sensitivity stability", sensitivity_stability),
        ("LLM client contract", llm_contract),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
