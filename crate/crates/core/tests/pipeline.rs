use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use xtalkprint::fingerprint::Frame;
use xtalkprint::noisesim::{ErrorModel, NoiseConfig};
use xtalkprint::par::Execution;
use xtalkprint::pipeline::{self, RunConfig};
use xtalkprint::topology::{DeviceKind, Embedding, Fleet, PatternKind};
use xtalkprint::Error;

fn small(out: &Path) -> RunConfig {
    RunConfig {
        seed: 3,
        batches: 4,
        patterns: vec![PatternKind::L3, PatternKind::T4],
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

/// Relative path → bytes for every file under `root`, except the resolved
/// config (which records the output directory itself).
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "config.json" {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn fleet_init_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    let (fleet, _) = pipeline::fleet_init(&c).unwrap();
    let first = snapshot(dir.path());
    pipeline::fleet_init(&c).unwrap();
    assert_eq!(snapshot(dir.path()), first);
    assert_eq!(fleet.devices.len(), 9);
    for kind in DeviceKind::ALL {
        assert_eq!(fleet.devices.iter().filter(|d| d.kind == kind).count(), 3);
    }
    let loaded: Fleet = serde_json::from_slice(&first["fleet.json"]).unwrap();
    assert_eq!(loaded, fleet);
}

#[test]
fn zero_decay_writes_zero_crosstalk() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.noise.decay = 0.0;
    pipeline::fleet_init(&c).unwrap();
    let models: Vec<ErrorModel> = serde_json::from_slice(&fs::read(dir.path().join("models.json")).unwrap()).unwrap();
    for m in &models {
        assert!(m.crosstalk.iter().all(|x| x.rates.h == [0.0; 3] && x.rates.s == [0.0; 3] && x.rates.a == [0.0; 3]));
        assert!(m.pair_crosstalk.iter().all(|x| x.lambda == 0.0));
    }
}

#[test]
fn commands_fail_loudly_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    assert!(matches!(pipeline::enroll(&c, Execution::Parallel), Err(Error::MissingArtifacts(_))));
    pipeline::fleet_init(&c).unwrap();
    match pipeline::eval(&c, Execution::Parallel) {
        Err(Error::MissingArtifacts(list)) => {
            assert_eq!(list.len(), 36);
            assert!(list[0].ends_with("fingerprint.json"), "{list:?}");
        }
        other => panic!("{other:?}"),
    }
    assert!(!dir.path().join("reports").exists());
    assert!(matches!(
        pipeline::infer(&c, &dir.path().join("probe.json"), PatternKind::L3),
        Err(Error::MissingArtifacts(_))
    ));
}

#[test]
fn enrollment_resumes_and_regenerates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    pipeline::fleet_init(&c).unwrap();
    let s = pipeline::enroll(&c, Execution::Parallel).unwrap();
    assert_eq!(s.enrolled.len(), 36);
    let full = snapshot(dir.path());
    let again = pipeline::enroll(&c, Execution::Parallel).unwrap();
    assert_eq!((again.enrolled.len(), again.skipped.len()), (0, 36));

    let batch = dir.path().join("enroll/d4/batch_02");
    fs::remove_dir_all(&batch).unwrap();
    let resumed = pipeline::enroll(&c, Execution::Sequential).unwrap();
    assert_eq!(resumed.enrolled, vec![("d4".to_string(), 2)]);
    assert_eq!(snapshot(dir.path()), full);

    let lines = fs::read_to_string(batch.join("counts.jsonl")).unwrap();
    // T5: 5 single + 4 pair + 2 control drives, 12 cells, 4 idle lengths
    assert_eq!(lines.lines().count(), 11 * 12 * 4);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, exec) in [(&a, Execution::Parallel), (&b, Execution::Sequential)] {
        let c = small(dir.path());
        pipeline::fleet_init(&c).unwrap();
        pipeline::enroll(&c, exec).unwrap();
        pipeline::eval(&c, exec).unwrap();
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs");
    }
}

#[test]
fn eval_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    pipeline::fleet_init(&c).unwrap();
    pipeline::enroll(&c, Execution::Parallel).unwrap();
    let s = pipeline::eval(&c, Execution::Parallel).unwrap();
    for name in ["distance_summary.csv", "accuracy_vs_batches.csv", "accuracy_by_pattern.csv", "degradation.csv", "distances_L3.csv"] {
        assert!(dir.path().join("reports").join(name).exists(), "{name}");
    }
    assert_eq!(s.growth.len(), 2);
    assert_eq!(s.degradation.len(), 2 * 3);
    for r in &s.by_pattern {
        assert!(r.device_accuracy >= r.embedding_accuracy);
        assert_eq!(r.test_batches, "3");
    }
    for d in &s.distances {
        // L3: 84 classes × C(4,2) batch pairs; inter: C(84,2) pairs × 4 batches minus nothing
        if d.pattern == PatternKind::L3 {
            assert_eq!(d.intra_count, 84 * 6);
            assert_eq!(d.inter_count, 84 * 83 / 2 * 4);
        }
        assert!(d.inter_median > d.intra_median);
    }
}

#[test]
fn infer_recovers_a_training_probe() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(dir.path());
    pipeline::fleet_init(&c).unwrap();
    pipeline::enroll(&c, Execution::Parallel).unwrap();
    let datasets = pipeline::slice_all(&c, Execution::Parallel).unwrap();
    assert!(dir.path().join("datasets/L3/manifest.json").exists());
    assert_eq!(datasets[0].samples.len(), 84 * 4);
    pipeline::train(&c, Execution::Parallel).unwrap();

    let emb = Embedding {
        pattern: PatternKind::T4,
        device_id: "d7".into(),
        vertex_map: vec![5, 3, 4, 6],
    };
    let probe = pipeline::slice_probe(&c, &emb, 1).unwrap();
    assert_eq!(probe.frame, Frame::Pattern(PatternKind::T4));
    let json = dir.path().join("probe.json");
    probe.write_json(&json).unwrap();
    let r = pipeline::infer(&c, &json, PatternKind::T4).unwrap();
    assert_eq!(r.embedding, emb);
    assert!(r.margin > 0.0);
    let csv = dir.path().join("probe.csv");
    probe.write_csv(&csv).unwrap();
    assert_eq!(pipeline::infer(&c, &csv, PatternKind::T4).unwrap().embedding, emb);

    assert!(matches!(pipeline::infer(&c, &json, PatternKind::L3), Err(Error::LayoutMismatch(_))));
    assert!(matches!(pipeline::infer(&c, &csv, PatternKind::L3), Err(Error::LayoutMismatch(_))));
}

#[test]
fn analytic_zero_noise_enrollment_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let c = RunConfig {
        noise: NoiseConfig::noiseless(),
        analytic: true,
        batches: 1,
        train_batches: vec![0],
        ..small(dir.path())
    };
    pipeline::fleet_init(&c).unwrap();
    pipeline::enroll(&c, Execution::Parallel).unwrap();
    let (fleet, _) = pipeline::load_fleet(&c).unwrap();
    let all = pipeline::load_fingerprints(&c, &fleet).unwrap();
    assert_eq!(all.len(), 9);
    assert!(all.iter().all(|f| f.features.iter().all(|v| *v == 0.0)));
}
