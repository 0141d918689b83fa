use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xtalkprint::fingerprint::{
    assemble, assemble_local, build_dataset, layout, normalized_distance, slice, EstimateSet, Fingerprint,
    FingerprintDataset, Frame, Target,
};
use xtalkprint::idt::{generate_experiments, DriveSpec};
use xtalkprint::noisesim::{generate_fleet_model, NoiseConfig};
use xtalkprint::par::Execution;
use xtalkprint::pipeline::{enroll_one, RunConfig};
use xtalkprint::topology::{enumerate_embeddings, Embedding, Fleet, PatternKind};

struct Enrolled {
    fleet: Fleet,
    estimates: Vec<EstimateSet>,
    full: Vec<Fingerprint>,
}

fn enrolled(config: &RunConfig, batches: u32) -> Enrolled {
    let fleet = Fleet::standard(config.seed);
    let models = generate_fleet_model(&fleet, &config.noise, 1).unwrap();
    let mut estimates = Vec::new();
    let mut full = Vec::new();
    for (d, (device, model)) in fleet.devices.iter().zip(&models).enumerate() {
        let specs = generate_experiments(device, &config.idt()).unwrap();
        for b in 0..batches {
            let (_, e, f) = enroll_one(config, device, d, model, &specs, b, Execution::Parallel).unwrap();
            estimates.push(e);
            full.push(f);
        }
    }
    Enrolled { fleet, estimates, full }
}

#[test]
fn slicing_equals_local_assembly() {
    let e = enrolled(&RunConfig::default(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for pattern in PatternKind::ALL {
        let all = enumerate_embeddings(pattern, &e.fleet);
        for emb in all.choose_multiple(&mut rng, 20) {
            let d = e.fleet.device_index(&emb.device_id).unwrap();
            let device = &e.fleet.devices[d];
            let sliced = slice(&e.full[d], emb, device).unwrap();
            let local = assemble_local(&e.estimates[d], emb, device).unwrap();
            assert_eq!(sliced, local, "{}", emb.describe());
            assert_eq!(sliced.layout, layout(&pattern.topology()));
        }
    }
}

#[test]
fn identity_slice_keeps_everything() {
    let e = enrolled(&RunConfig::default(), 1);
    let emb = Embedding {
        pattern: PatternKind::L5p,
        device_id: "d0".into(),
        vertex_map: vec![0, 1, 2, 3, 4],
    };
    let s = slice(&e.full[0], &emb, &e.fleet.devices[0]).unwrap();
    assert_eq!(s.features, e.full[0].features);
    assert_eq!(s.frame, Frame::Pattern(PatternKind::L5p));
}

#[test]
fn p1_slice_is_the_qubit_control_groups() {
    let e = enrolled(&RunConfig::default(), 1);
    let emb = Embedding {
        pattern: PatternKind::P1,
        device_id: "d7".into(),
        vertex_map: vec![5],
    };
    let s = slice(&e.full[7], &emb, &e.fleet.devices[7]).unwrap();
    assert_eq!(s.dim(), 18);
    let expected: Vec<f64> = e.full[7]
        .layout
        .iter()
        .zip(&e.full[7].features)
        .filter(|(d, _)| matches!(d.drive, DriveSpec::ControlSingle | DriveSpec::ControlPair) && d.target == Target::Qubit(5))
        .map(|(_, v)| *v)
        .collect();
    assert_eq!(s.features, expected);
}

#[test]
fn embeddings_share_layouts_but_not_values() {
    let e = enrolled(&RunConfig::default(), 1);
    let device = &e.fleet.devices[0];
    let a = Embedding { pattern: PatternKind::L3, device_id: "d0".into(), vertex_map: vec![0, 1, 2] };
    let b = Embedding { pattern: PatternKind::L3, device_id: "d0".into(), vertex_map: vec![2, 3, 4] };
    let (sa, sb) = (slice(&e.full[0], &a, device).unwrap(), slice(&e.full[0], &b, device).unwrap());
    assert_eq!(sa.layout, sb.layout);
    assert_ne!(sa.features, sb.features);
    assert!(normalized_distance(&sa, &sb).unwrap() > 0.0);
}

#[test]
fn invalid_embeddings_are_rejected() {
    let e = enrolled(&RunConfig::default(), 1);
    let device = &e.fleet.devices[0];
    let bad_map = Embedding { pattern: PatternKind::L3, device_id: "d0".into(), vertex_map: vec![0, 2, 1] };
    assert!(slice(&e.full[0], &bad_map, device).is_err());
    let wrong_device = Embedding { pattern: PatternKind::L3, device_id: "d1".into(), vertex_map: vec![0, 1, 2] };
    assert!(slice(&e.full[0], &wrong_device, &e.fleet.devices[1]).is_err());
}

#[test]
fn assembly_ignores_input_order() {
    let e = enrolled(&RunConfig::default(), 1);
    let device = &e.fleet.devices[4];
    let mut entries: Vec<_> = e.estimates[4].entries.clone().into_iter().collect();
    entries.reverse();
    let shuffled = EstimateSet {
        entries: entries.into_iter().collect(),
        ..e.estimates[4].clone()
    };
    assert_eq!(assemble(&shuffled, device).unwrap(), e.full[4]);
}

#[test]
fn zero_noise_fingerprints_vanish() {
    let config = RunConfig {
        noise: NoiseConfig::noiseless(),
        analytic: true,
        ..RunConfig::default()
    };
    let e = enrolled(&config, 1);
    for f in &e.full {
        assert!(f.features.iter().all(|v| *v == 0.0), "{}", f.frame);
    }
    // with finite shots only the sampling floor remains
    let sampled = enrolled(&RunConfig { analytic: false, ..config }, 1);
    for f in &sampled.full {
        let worst = f.features.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 0.02, "{}: {worst}", f.frame);
    }
}

#[test]
fn distances_are_metric() {
    let e = enrolled(&RunConfig::default(), 3);
    let same_kind: Vec<&Fingerprint> = e.full.iter().filter(|f| f.dim() == e.full[0].dim()).collect();
    for a in &same_kind {
        for b in &same_kind {
            let ab = normalized_distance(a, b).unwrap();
            assert_eq!(ab, normalized_distance(b, a).unwrap());
            for c in &same_kind {
                assert!(ab <= normalized_distance(a, c).unwrap() + normalized_distance(c, b).unwrap() + 1e-15);
            }
        }
    }
    assert!(normalized_distance(&e.full[0], &e.full[9]).is_err());
}

#[test]
fn dataset_sizes_and_filters() {
    let e = enrolled(&RunConfig::default(), 3);
    let l3 = build_dataset(&e.full, &e.fleet, PatternKind::L3, Execution::Parallel).unwrap();
    assert_eq!(l3.num_classes(), 84);
    assert_eq!(l3.samples.len(), 84 * 3);
    let first: Vec<Fingerprint> = e.full.iter().filter(|f| f.batch_index == 0).cloned().collect();
    let p1 = build_dataset(&first, &e.fleet, PatternKind::P1, Execution::Sequential).unwrap();
    assert_eq!(p1.samples.len(), 51);
    let two = l3.restrict(&[0, 2]);
    for k in 0..84 {
        assert_eq!(two.samples.iter().filter(|s| s.class == k).count(), 2);
    }
    assert_eq!(two.batches(), vec![0, 2]);
    let seq = build_dataset(&e.full, &e.fleet, PatternKind::L3, Execution::Sequential).unwrap();
    assert_eq!(seq, l3);
}

#[test]
fn persistence_round_trips() {
    let e = enrolled(&RunConfig::default(), 2);
    let dir = tempfile::tempdir().unwrap();
    let f = &e.full[6];
    let csv = dir.path().join("f.csv");
    f.write_csv(&csv).unwrap();
    assert_eq!(&Fingerprint::read_csv(&csv, f.frame.clone(), f.batch_index).unwrap(), f);
    let json = dir.path().join("f.json");
    f.write_json(&json).unwrap();
    let compact = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(&Fingerprint::from_compact(compact, f.layout.clone()).unwrap(), f);
    let compact = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(Fingerprint::from_compact(compact, layout(&e.fleet.devices[0])).is_err());

    let est = dir.path().join("e.csv");
    e.estimates[6].write_csv(&est).unwrap();
    let back = EstimateSet::read_csv(&est, e.estimates[6].frame.clone(), e.estimates[6].batch_index).unwrap();
    assert_eq!(back, e.estimates[6]);

    let data = build_dataset(&e.full, &e.fleet, PatternKind::T4, Execution::Parallel).unwrap();
    data.write_dir(&dir.path().join("T4")).unwrap();
    assert_eq!(FingerprintDataset::read_dir(&dir.path().join("T4")).unwrap(), data);
}
