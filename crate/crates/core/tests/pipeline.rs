mod common;

use sha2::{Digest, Sha256};
use triplet_meta::dataset::{parse_dataset, Format};
use triplet_meta::pipeline::{
    ClusterArtifact, RunManifest, Runner, Stage, StageStatus, CLUSTERS, MANIFEST, SENSITIVITY, STUDIES,
};
use triplet_meta::sensitivity::{GridSpec, SensitivityReport};
use triplet_meta::{Error, ErrorKind};

use common::planted_config;

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn statuses(m: &RunManifest) -> Vec<(Stage, StageStatus)> {
    m.stages.iter().map(|s| (s.name, s.status)).collect()
}

#[test]
fn rerun_reuses_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path());
    let first = Runner::new(cfg.clone()).unwrap().run_all().unwrap();
    assert!(first.stages.iter().all(|s| s.status == StageStatus::Computed));
    assert!(first.stage(Stage::Sensitivity).is_none());

    let second = Runner::new(cfg.clone()).unwrap().run_all().unwrap();
    assert!(second.stages.iter().all(|s| s.status == StageStatus::Reused), "{:?}", statuses(&second));
    assert_eq!(first.artifacts, second.artifacts);

    // a downstream change leaves upstream stages alone
    let mut k4 = cfg;
    k4.cluster.k = 4;
    let third = Runner::new(k4).unwrap().run_all().unwrap();
    for (stage, status) in statuses(&third) {
        let expect = match stage {
            Stage::Ingest | Stage::Triplets | Stage::Embed => StageStatus::Reused,
            _ => StageStatus::Computed,
        };
        assert_eq!(status, expect, "{stage:?}");
    }
}

#[test]
fn tampered_output_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path());
    let first = Runner::new(cfg.clone()).unwrap().run_all().unwrap();
    let clusters = dir.path().join("out").join(CLUSTERS);
    std::fs::write(&clusters, "{}").unwrap();
    let again = Runner::new(cfg).unwrap().run_all().unwrap();
    assert_eq!(again.stage(Stage::Embed).unwrap().status, StageStatus::Reused);
    assert_eq!(again.stage(Stage::Cluster).unwrap().status, StageStatus::Computed);
    assert_eq!(first.artifacts, again.artifacts);
}

#[test]
fn manifest_hashes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_config(dir.path());
    cfg.meta.moderators = vec!["mean_age".into()];
    let m = Runner::new(cfg).unwrap().run_all().unwrap();
    let out = dir.path().join("out");
    let mut on_disk = Vec::new();
    for entry in std::fs::read_dir(&out).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != MANIFEST {
            on_disk.push(name);
        }
    }
    on_disk.sort();
    assert_eq!(on_disk, m.artifacts.keys().cloned().collect::<Vec<_>>());
    for (name, hash) in &m.artifacts {
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), hash, "{name}");
    }
    assert!(m.artifacts.contains_key("regression.json"));
    assert_eq!(RunManifest::read(&out).unwrap().unwrap(), m);
}

#[test]
fn stages_run_one_by_one_match_full_run() {
    let full = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    let a = Runner::new(planted_config(full.path())).unwrap().run_all().unwrap();
    let mut runner = Runner::new(planted_config(staged.path())).unwrap();
    let mut last = None;
    for stage in [Stage::Ingest, Stage::Triplets, Stage::Embed, Stage::Cluster, Stage::Meta, Stage::Report] {
        last = Some(runner.run_stage(stage).unwrap());
    }
    assert_eq!(a.artifacts, last.unwrap().artifacts);
}

#[test]
fn missing_upstream_artifact_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut runner = Runner::new(planted_config(dir.path())).unwrap();
    runner.run_stage(Stage::Ingest).unwrap();
    match runner.run_stage(Stage::Meta) {
        Err(e @ Error::MissingArtifact { .. }) => assert_eq!(e.kind(), ErrorKind::Dependency),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    let m = RunManifest::read(&dir.path().join("out")).unwrap().unwrap();
    assert_eq!(m.stage(Stage::Meta).unwrap().status, StageStatus::Failed);
}

#[test]
fn dimension_mismatch_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_config(dir.path());
    cfg.train.dim = Some(3);
    let Err(err) = Runner::new(cfg) else { panic!("mismatched dims accepted") };
    assert_eq!(err.kind(), ErrorKind::Config);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn single_cell_grid_reproduces_primary_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_config(dir.path());
    cfg.subsample_seed = Some(77);
    cfg.sensitivity = Some(GridSpec { seeds: vec![77], lambdas: vec![2], dims: vec![2], ks: vec![3] });
    let m = Runner::new(cfg).unwrap().run_all().unwrap();
    assert_eq!(m.stage(Stage::Sensitivity).unwrap().status, StageStatus::Computed);
    let out = dir.path().join("out");
    let ds = parse_dataset(&std::fs::read(out.join(STUDIES)).unwrap(), Format::Json).unwrap();
    let primary: ClusterArtifact = read_json(&out.join(CLUSTERS));
    let report: SensitivityReport = read_json(&out.join(SENSITIVITY));
    assert_eq!(report.cells.len(), 1);
    let cell = report.cells[0].result.as_ref().unwrap();
    assert_eq!(cell.labels, primary.assignment(&ds).unwrap().labels);
    let cell_dir = out.join("sensitivity/seed77_lambda2_d2_k3");
    assert_eq!(
        std::fs::read(cell_dir.join("clusters.json")).unwrap(),
        std::fs::read(out.join(CLUSTERS)).unwrap()
    );
    assert_eq!(
        std::fs::read(cell_dir.join("embedding.json")).unwrap(),
        std::fs::read(out.join("embedding.json")).unwrap()
    );
    assert!(m.artifacts.contains_key("sensitivity/seed77_lambda2_d2_k3/meta.json"));
}

#[test]
fn normalized_studies_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path());
    let src = std::fs::read(&cfg.dataset.path).unwrap();
    let mut runner = Runner::new(cfg).unwrap();
    runner.run_stage(Stage::Ingest).unwrap();
    let written = std::fs::read(dir.path().join("out").join(STUDIES)).unwrap();
    let a = parse_dataset(&src, Format::Json).unwrap();
    let b = parse_dataset(&written, Format::Json).unwrap();
    assert_eq!(a, b);
    assert_eq!(b.to_canonical_json().as_bytes(), &written[..]);
}
