use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xtalkprint::classify::{nearest_centroid, AccuracyReport, Classifier, Hyperparameters, PcaModel, Standardizer};
use xtalkprint::fingerprint::{build_dataset, layout, Fingerprint, FingerprintDataset, Frame, Sample};
use xtalkprint::idt::generate_experiments;
use xtalkprint::noisesim::generate_fleet_model;
use xtalkprint::par::Execution;
use xtalkprint::pipeline::{enroll_one, RunConfig};
use xtalkprint::topology::{Embedding, Fleet, PatternKind};

fn dataset(pattern: PatternKind, batches: u32) -> FingerprintDataset {
    let config = RunConfig::default();
    let fleet = Fleet::standard(config.seed);
    let models = generate_fleet_model(&fleet, &config.noise, 2).unwrap();
    let mut full = Vec::new();
    for (d, (device, model)) in fleet.devices.iter().zip(&models).enumerate() {
        let specs = generate_experiments(device, &config.idt()).unwrap();
        for b in 0..batches {
            full.push(enroll_one(&config, device, d, model, &specs, b, Execution::Parallel).unwrap().2);
        }
    }
    build_dataset(&full, &fleet, pattern, Execution::Parallel).unwrap()
}

/// Two-class P1-shaped dataset with gaussian clusters at ±`offset`.
fn clusters(offset: f64, per_class: usize, seed: u64) -> FingerprintDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = layout(&PatternKind::P1.topology());
    let classes = vec![
        Embedding { pattern: PatternKind::P1, device_id: "d0".into(), vertex_map: vec![0] },
        Embedding { pattern: PatternKind::P1, device_id: "d1".into(), vertex_map: vec![0] },
    ];
    let samples = (0..2 * per_class)
        .map(|i| {
            let class = i % 2;
            let sign = if class == 0 { -1.0 } else { 1.0 };
            Sample {
                features: (0..layout.len()).map(|_| sign * offset + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect(),
                class,
                batch_index: (i / 2) as u32,
            }
        })
        .collect();
    FingerprintDataset { pattern: PatternKind::P1, layout, classes, samples }
}

#[test]
fn interpolating_model_scores_perfectly_on_its_training_set() {
    let data = dataset(PatternKind::L4, 3);
    let c = Classifier::fit(&data, &Hyperparameters::default(), 1).unwrap();
    assert!(c.training.converged, "{:?}", c.training);
    assert!(*c.training.set_losses.last().unwrap() < 0.05);
    let before = c.preprocess.state_hash();
    let r = c.evaluate(&data, Execution::Parallel).unwrap();
    assert_eq!(c.preprocess.state_hash(), before);
    assert_eq!((r.device_accuracy, r.embedding_accuracy), (1.0, 1.0));
    assert_eq!(r.confusion.iter().map(|row| row.iter().sum::<u32>()).sum::<u32>() as usize, data.samples.len());
    assert_eq!(c.mlp.classes(), 48);
    assert_eq!(c.mlp.hidden(), data.dim());

    let s = &data.samples[17];
    assert_eq!(c.predict(&s.features).unwrap().0, s.class);
    assert!(c.predict(&s.features[1..]).is_err());
    let probe = Fingerprint {
        frame: Frame::Pattern(PatternKind::T4),
        batch_index: 0,
        features: vec![0.0; 246],
        layout: layout(&PatternKind::T4.topology()),
    };
    assert!(c.predict_fingerprint(&probe).is_err());
}

#[test]
fn random_guess_rates_match_class_counts() {
    let data = dataset(PatternKind::L3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reps = 200;
    let big = FingerprintDataset {
        samples: (0..reps).flat_map(|_| data.samples.iter().cloned()).collect(),
        ..data.clone()
    };
    let preds: Vec<usize> = (0..big.samples.len()).map(|_| rng.random_range(0..84)).collect();
    let r = AccuracyReport::from_predictions(vec![0], &big, &preds).unwrap();
    // same-device mass of a uniform guess: Σ_devices (classes on device / 84)²
    let mut per_device = std::collections::BTreeMap::new();
    for c in &data.classes {
        *per_device.entry(c.device_id.clone()).or_insert(0.0) += 1.0 / 84.0;
    }
    let device_rate: f64 = per_device.values().map(|p: &f64| p * p).sum();
    let n = big.samples.len() as f64;
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    assert!((r.embedding_accuracy - 1.0 / 84.0).abs() < 4.0 * se(1.0 / 84.0));
    assert!((r.device_accuracy - device_rate).abs() < 4.0 * se(device_rate));
    assert!(r.device_accuracy >= r.embedding_accuracy);
}

#[test]
fn nearest_centroid_on_synthetic_clusters() {
    let separated = clusters(5.0, 40, 1);
    let r = nearest_centroid(&separated.restrict(&(0..20).collect::<Vec<_>>()), &separated.restrict(&(20..40).collect::<Vec<_>>())).unwrap();
    assert_eq!(r.embedding_accuracy, 1.0);
    let same = clusters(0.0, 2000, 2);
    let r = nearest_centroid(&same.restrict(&(0..1000).collect::<Vec<_>>()), &same.restrict(&(1000..2000).collect::<Vec<_>>())).unwrap();
    assert!((r.embedding_accuracy - 0.5).abs() < 0.05, "{}", r.embedding_accuracy);
    let mut lonely = separated.restrict(&[0]);
    lonely.samples.retain(|s| s.class == 0);
    assert!(nearest_centroid(&lonely, &separated).is_err());
}

#[test]
fn empty_test_set_is_rejected() {
    let data = clusters(5.0, 10, 4);
    let c = Classifier::fit(&data, &Hyperparameters::default(), 0).unwrap();
    assert!(c.evaluate(&data.restrict(&[99]), Execution::Sequential).is_err());
}

#[test]
fn pca_subspace_on_fingerprint_data() {
    let data = dataset(PatternKind::L3, 9);
    assert_eq!(data.samples.len(), 756);
    let rows: Vec<&[f64]> = data.samples.iter().map(|s| s.features.as_slice()).collect();
    let st = Standardizer::fit(&rows).unwrap();
    let z: Vec<Vec<f64>> = rows.iter().map(|r| st.transform(r)).collect();
    let pca = PcaModel::fit(&z, 0.95).unwrap();
    let x = DMatrix::from_fn(z.len(), z[0].len(), |i, j| z[i][j]);
    let mean = x.row_mean();
    let c = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let total: f64 = c.iter().map(|v| v * v).sum();
    let residual: f64 = (&c - &c * pca.components.transpose() * &pca.components).iter().map(|v| v * v).sum();
    assert!(residual <= 0.05 * total * (1.0 + 1e-9), "{residual} vs {total}");
    let gram = &pca.components * pca.components.transpose();
    assert!((gram - DMatrix::identity(pca.retained, pca.retained)).abs().max() < 1e-8);
}

#[test]
fn classifier_json_round_trip() {
    let data = clusters(3.0, 10, 5);
    let c = Classifier::fit(&data, &Hyperparameters::default(), 9).unwrap();
    let json = serde_json::to_string(&c).unwrap();
    let back: Classifier = serde_json::from_str(&json).unwrap();
    assert_eq!(back, c);
    assert_eq!(Classifier::fit(&data, &Hyperparameters::default(), 9).unwrap(), c);
}
