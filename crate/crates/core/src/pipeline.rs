//! End-to-end runs: fleet setup, enrollment, dataset slicing, training,
//! inference and the evaluation reports, all persisted under one output
//! directory and driven by one master seed.
//!
//! Output layout:
//!
//! ```text
//! config.json  fleet.json  models.json
//! circuits/<device>.json
//! enroll/<device>/batch_<b>/{counts.jsonl, estimates.csv, fingerprint.csv, fingerprint.json}
//! datasets/<pattern>/{manifest.json, class_<k>.csv}
//! classifiers/<pattern>.json
//! reports/*.csv  reports/eval_models/*.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{nearest_centroid, AccuracyReport, Classifier, Hyperparameters};
use crate::fingerprint::{
    assemble, build_dataset, distance, layout, slice, CompactFingerprint, EstimateSet, Fingerprint,
    FingerprintDataset, Frame,
};
use crate::idt::{estimate_drive, generate_experiments, IdtCircuitSpec, IdtConfig, Observation};
use crate::noisesim::{
    batch_params, generate_fleet_model, observe, simulate_counts, CountRecord, DriftConfig, ErrorModel, NoiseConfig,
};
use crate::par::{self, Execution};
use crate::topology::{enumerate_embeddings, DeviceTopology, Embedding, Fleet, PatternKind, QubitGraph};
use crate::{seed, store, Error, Result};

pub const DEFAULT_OUT_DIR: &str = "xtalkprint-out";

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(alias = "fleet_seed")]
    pub seed: u64,
    pub noise: NoiseConfig,
    pub drift: DriftConfig,
    pub idle_lengths: Vec<u32>,
    pub shots: u64,
    /// Use exact outcome moments instead of sampling `shots` per circuit.
    pub analytic: bool,
    pub batches: u32,
    pub patterns: Vec<PatternKind>,
    pub train_batches: Vec<u32>,
    /// `None` means every enrolled batch outside `train_batches`.
    pub test_batches: Option<Vec<u32>>,
    pub hyper: Hyperparameters,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            noise: NoiseConfig::default(),
            drift: DriftConfig::default(),
            idle_lengths: IdtConfig::default().idle_lengths,
            shots: 2048,
            analytic: false,
            batches: 9,
            patterns: PatternKind::ALL.to_vec(),
            train_batches: vec![0, 1, 2],
            test_batches: None,
            hyper: Hyperparameters::default(),
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let config: RunConfig = store::read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.shots == 0 {
            return bad("shots must be ≥ 1".into());
        }
        if self.batches == 0 {
            return bad("batches must be ≥ 1".into());
        }
        if self.idle_lengths.is_empty() || self.idle_lengths.contains(&0) {
            return bad("idle lengths must be a non-empty set of positive integers".into());
        }
        let mut distinct = self.idle_lengths.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return bad("at least two distinct idle lengths are needed to fit rates".into());
        }
        if self.patterns.is_empty() {
            return bad("pattern list is empty".into());
        }
        for b in self.train_batches.iter().chain(self.test_batches.iter().flatten()) {
            if *b >= self.batches {
                return bad(format!("split references batch {b}, but only {} batches run", self.batches));
            }
        }
        if self.train_batches.is_empty() {
            return bad("training split is empty".into());
        }
        self.noise.validate()?;
        self.drift.validate()?;
        self.hyper.validate()
    }

    pub fn idt(&self) -> IdtConfig {
        IdtConfig {
            idle_lengths: self.idle_lengths.clone(),
        }
    }

    pub fn test_split(&self) -> Vec<u32> {
        match &self.test_batches {
            Some(t) => t.clone(),
            None => (0..self.batches).filter(|b| !self.train_batches.contains(b)).collect(),
        }
    }

    pub fn paths(&self) -> RunPaths {
        RunPaths {
            root: self.out_dir.clone(),
        }
    }
}

/// Artifact locations under one output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn fleet(&self) -> PathBuf {
        self.root.join("fleet.json")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models.json")
    }
    pub fn circuits(&self, device: &str) -> PathBuf {
        self.root.join("circuits").join(format!("{device}.json"))
    }
    pub fn batch_dir(&self, device: &str, batch: u32) -> PathBuf {
        self.root.join("enroll").join(device).join(format!("batch_{batch:02}"))
    }
    pub fn fingerprint_json(&self, device: &str, batch: u32) -> PathBuf {
        self.batch_dir(device, batch).join("fingerprint.json")
    }
    pub fn incomplete(&self, device: &str, batch: u32) -> PathBuf {
        self.batch_dir(device, batch).join("incomplete.json")
    }
    pub fn dataset(&self, pattern: PatternKind) -> PathBuf {
        self.root.join("datasets").join(pattern.to_string())
    }
    pub fn classifier(&self, pattern: PatternKind) -> PathBuf {
        self.root.join("classifiers").join(format!("{pattern}.json"))
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn noise_seed(config: &RunConfig) -> u64 {
    seed::derive(config.seed, "noise", 0)
}

fn drift_seed(config: &RunConfig) -> u64 {
    seed::derive(config.seed, "drift", 0)
}

fn sampling_seed(config: &RunConfig, device: usize, batch: u32, circuit: usize) -> u64 {
    seed::derive_path(
        config.seed,
        &[("sampling", 0), ("device", device as u64), ("batch", u64::from(batch)), ("circuit", circuit as u64)],
    )
}

fn training_seed(config: &RunConfig, pattern: PatternKind, train: &[u32]) -> u64 {
    let mask = train.iter().fold(0u64, |m, &b| m | 1u64.checked_shl(b).unwrap_or(0));
    seed::derive_path(config.seed, &[("train", pattern as u64), ("batches", mask)])
}

/// Writes the resolved config, the fleet and its error models.
pub fn fleet_init(config: &RunConfig) -> Result<(Fleet, Vec<ErrorModel>)> {
    config.validate()?;
    let fleet = Fleet::standard(config.seed);
    fleet.validate()?;
    let models = generate_fleet_model(&fleet, &config.noise, noise_seed(config))?;
    let paths = config.paths();
    store::write_json(&paths.config(), config)?;
    store::write_json(&paths.fleet(), &fleet)?;
    store::write_json(&paths.models(), &models)?;
    Ok((fleet, models))
}

pub fn load_fleet(config: &RunConfig) -> Result<(Fleet, Vec<ErrorModel>)> {
    let paths = config.paths();
    let missing: Vec<String> = [paths.fleet(), paths.models()]
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let fleet: Fleet = store::read_json(&paths.fleet())?;
    fleet.validate()?;
    let models: Vec<ErrorModel> = store::read_json(&paths.models())?;
    if models.len() != fleet.devices.len() || models.iter().zip(&fleet.devices).any(|(m, d)| m.device_id != d.device_id) {
        return Err(Error::Config("models.json does not match fleet.json".into()));
    }
    Ok((fleet, models))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnrollSummary {
    pub enrolled: Vec<(String, u32)>,
    pub skipped: Vec<(String, u32)>,
    pub incomplete: Vec<(String, u32)>,
}

/// Simulates, estimates and assembles one device-batch. Returns the counts
/// (none in analytic mode) alongside the estimates and fingerprint.
pub fn enroll_one(
    config: &RunConfig,
    device: &DeviceTopology,
    device_index: usize,
    model: &ErrorModel,
    specs: &[IdtCircuitSpec],
    batch: u32,
    exec: Execution,
) -> Result<(Vec<CountRecord>, EstimateSet, Fingerprint)> {
    let params = batch_params(model, batch, &config.drift, drift_seed(config));
    let results = par::map_range(specs.len(), exec, |i| {
        let spec = &specs[i];
        if config.analytic {
            return observe(&params, spec, None, 0).map(|o| (None, o));
        }
        let counts = simulate_counts(&params, spec, config.shots, sampling_seed(config, device_index, batch, i))?;
        let moments = counts.moments(spec, &params.rates)?;
        Ok((
            Some(counts),
            Observation {
                spec: spec.clone(),
                moments,
            },
        ))
    });
    let (counts, observations): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let counts: Vec<CountRecord> = counts.into_iter().flatten().collect();
    let mut by_drive: BTreeMap<_, Vec<Observation>> = BTreeMap::new();
    for o in observations {
        by_drive.entry(o.spec.drive).or_default().push(o);
    }
    let groups: Vec<Vec<Observation>> = by_drive.into_values().collect();
    let drives = par::map(&groups, exec, |obs| estimate_drive(obs));
    let drives = drives.into_iter().collect::<Result<Vec<_>>>()?;
    let estimates = EstimateSet::from_drives(Frame::Device(device.device_id.clone()), batch, &drives);
    let fingerprint = assemble(&estimates, device)?;
    Ok((counts, estimates, fingerprint))
}

/// Enrolls every (device, batch) whose fingerprint is not yet on disk.
pub fn enroll(config: &RunConfig, exec: Execution) -> Result<EnrollSummary> {
    config.validate()?;
    let (fleet, models) = load_fleet(config)?;
    let paths = config.paths();
    let mut summary = EnrollSummary::default();
    for (d, (device, model)) in fleet.devices.iter().zip(&models).enumerate() {
        let specs = generate_experiments(device, &config.idt())?;
        store::write_json(&paths.circuits(&device.device_id), &specs)?;
        for batch in 0..config.batches {
            let key = (device.device_id.clone(), batch);
            if paths.fingerprint_json(&device.device_id, batch).exists() {
                summary.skipped.push(key);
                continue;
            }
            let dir = paths.batch_dir(&device.device_id, batch);
            match enroll_one(config, device, d, model, &specs, batch, exec) {
                Ok((counts, estimates, fingerprint)) => {
                    let mut jsonl = String::new();
                    for c in &counts {
                        jsonl.push_str(&serde_json::to_string(c).map_err(|e| Error::Json {
                            path: dir.join("counts.jsonl"),
                            source: e,
                        })?);
                        jsonl.push('\n');
                    }
                    store::write_bytes(&dir.join("counts.jsonl"), jsonl.as_bytes())?;
                    estimates.write_csv(&dir.join("estimates.csv"))?;
                    fingerprint.write_csv(&dir.join("fingerprint.csv"))?;
                    let marker = paths.incomplete(&device.device_id, batch);
                    if marker.exists() {
                        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
                    }
                    // written last: its presence marks the batch complete
                    fingerprint.write_json(&paths.fingerprint_json(&device.device_id, batch))?;
                    summary.enrolled.push(key);
                }
                Err(e @ (Error::MissingCells(_) | Error::Degenerate(_))) => {
                    store::write_json(
                        &paths.incomplete(&device.device_id, batch),
                        &serde_json::json!({ "device_id": device.device_id, "batch_index": batch, "error": e.to_string() }),
                    )?;
                    summary.incomplete.push(key);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(summary)
}

/// Reads every enrolled full-device fingerprint for batches `0..batches`.
/// Batches marked incomplete are left out; anything else absent is an
/// error naming each missing file.
pub fn load_fingerprints(config: &RunConfig, fleet: &Fleet) -> Result<Vec<Fingerprint>> {
    let paths = config.paths();
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for device in &fleet.devices {
        let device_layout = layout(device);
        for batch in 0..config.batches {
            let path = paths.fingerprint_json(&device.device_id, batch);
            if !path.exists() {
                if !paths.incomplete(&device.device_id, batch).exists() {
                    missing.push(path.display().to_string());
                }
                continue;
            }
            let compact: CompactFingerprint = store::read_json(&path)?;
            if compact.frame != Frame::Device(device.device_id.clone()) || compact.batch_index != batch {
                return Err(Error::LayoutMismatch(format!("{} holds {} batch {}", path.display(), compact.frame, compact.batch_index)));
            }
            out.push(Fingerprint::from_compact(compact, device_layout.clone())?);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    Ok(out)
}

pub fn datasets(config: &RunConfig, exec: Execution) -> Result<Vec<FingerprintDataset>> {
    let (fleet, _) = load_fleet(config)?;
    let fingerprints = load_fingerprints(config, &fleet)?;
    config
        .patterns
        .iter()
        .map(|&p| build_dataset(&fingerprints, &fleet, p, exec))
        .collect()
}

/// Writes one dataset directory per configured pattern.
pub fn slice_all(config: &RunConfig, exec: Execution) -> Result<Vec<FingerprintDataset>> {
    config.validate()?;
    let sets = datasets(config, exec)?;
    for d in &sets {
        d.write_dir(&config.paths().dataset(d.pattern))?;
    }
    Ok(sets)
}

/// Slices one enrolled fingerprint down to one embedding.
pub fn slice_probe(config: &RunConfig, embedding: &Embedding, batch: u32) -> Result<Fingerprint> {
    let (fleet, _) = load_fleet(config)?;
    let device = fleet
        .device(&embedding.device_id)
        .ok_or_else(|| Error::InvalidEmbedding(format!("unknown device {}", embedding.device_id)))?;
    let path = config.paths().fingerprint_json(&device.device_id, batch);
    if !path.exists() {
        return Err(Error::MissingArtifacts(vec![path.display().to_string()]));
    }
    let full = Fingerprint::from_compact(store::read_json(&path)?, layout(device))?;
    slice(&full, embedding, device)
}

fn fit_classifier(config: &RunConfig, data: &FingerprintDataset, train: &[u32]) -> Result<Classifier> {
    let train_set = data.restrict(train);
    Classifier::fit(&train_set, &config.hyper, training_seed(config, data.pattern, train))
}

/// Trains and stores one classifier per configured pattern on the
/// configured training batches.
pub fn train(config: &RunConfig, exec: Execution) -> Result<Vec<Classifier>> {
    config.validate()?;
    let sets = datasets(config, exec)?;
    let trained = par::map(&sets, exec, |d| fit_classifier(config, d, &config.train_batches));
    let trained = trained.into_iter().collect::<Result<Vec<_>>>()?;
    for c in &trained {
        store::write_json(&config.paths().classifier(c.pattern), c)?;
    }
    Ok(trained)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Inference {
    pub pattern: PatternKind,
    pub class: usize,
    pub embedding: Embedding,
    /// Top score minus runner-up score.
    pub margin: f64,
}

/// Reads a probe fingerprint (compact JSON or feature CSV in the pattern
/// frame) for `pattern`.
pub fn read_probe(path: &Path, pattern: PatternKind) -> Result<Fingerprint> {
    let expected = layout(&pattern.topology());
    if path.extension().is_some_and(|e| e == "csv") {
        let f = Fingerprint::read_csv(path, Frame::Pattern(pattern), 0)?;
        if f.layout != expected {
            return Err(Error::LayoutMismatch(format!(
                "{} has {} features that do not follow the {pattern} layout ({} features)",
                path.display(),
                f.dim(),
                expected.len()
            )));
        }
        return Ok(f);
    }
    let compact: CompactFingerprint = store::read_json(path)?;
    if compact.frame != Frame::Pattern(pattern) {
        return Err(Error::LayoutMismatch(format!("{} is a {} fingerprint, not pattern:{pattern}", path.display(), compact.frame)));
    }
    Fingerprint::from_compact(compact, expected)
}

pub fn infer(config: &RunConfig, probe: &Path, pattern: PatternKind) -> Result<Inference> {
    let model_path = config.paths().classifier(pattern);
    if !model_path.exists() {
        return Err(Error::MissingArtifacts(vec![model_path.display().to_string()]));
    }
    let classifier: Classifier = store::read_json(&model_path)?;
    let f = read_probe(probe, pattern)?;
    let (class, scores) = classifier.predict_fingerprint(&f)?;
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != class)
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Inference {
        pattern,
        class,
        embedding: classifier.classes[class].clone(),
        margin: if runner_up.is_finite() { scores[class] - runner_up } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub pattern: PatternKind,
    pub qubits: usize,
    pub dim: usize,
    pub intra_count: usize,
    pub inter_count: usize,
    pub intra_median: f64,
    pub inter_median: f64,
    pub ratio: f64,
}

#[derive(Serialize)]
struct DistanceRow {
    kind: &'static str,
    class_a: usize,
    class_b: usize,
    batch_a: u32,
    batch_b: u32,
    distance: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Intra-embedding distances (one class, two batches) and inter-embedding
/// distances (two classes, one batch).
fn distance_rows(data: &FingerprintDataset) -> Vec<DistanceRow> {
    let mut rows = Vec::new();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    let mut by_batch: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.samples.iter().enumerate() {
        by_class[s.class].push(i);
        by_batch.entry(s.batch_index).or_default().push(i);
    }
    let s = &data.samples;
    let mut push = |kind, i: usize, j: usize| {
        rows.push(DistanceRow {
            kind,
            class_a: s[i].class,
            class_b: s[j].class,
            batch_a: s[i].batch_index,
            batch_b: s[j].batch_index,
            distance: distance(&s[i].features, &s[j].features),
        })
    };
    for members in &by_class {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                push("intra", i, j);
            }
        }
    }
    for members in by_batch.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                if s[i].class != s[j].class {
                    push("inter", i, j);
                }
            }
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub pattern: PatternKind,
    pub train_batches: String,
    pub test_batches: String,
    pub device_accuracy: f64,
    pub embedding_accuracy: f64,
    pub centroid_device_accuracy: f64,
    pub centroid_embedding_accuracy: f64,
    pub epochs: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub pattern: PatternKind,
    pub train_count: u32,
    pub device_accuracy: f64,
    pub embedding_accuracy: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub pattern: PatternKind,
    pub test_batch: u32,
    pub device_accuracy: f64,
    pub embedding_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub distances: Vec<DistanceSummary>,
    pub by_pattern: Vec<AccuracyRow>,
    pub growth: Vec<GrowthRow>,
    pub degradation: Vec<DegradationRow>,
}

fn batch_list(b: &[u32]) -> String {
    b.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

/// Patterns averaged in the headline accuracy row.
pub const HEADLINE_PATTERNS: [PatternKind; 4] = [PatternKind::L4, PatternKind::T4, PatternKind::L5p, PatternKind::T5p];

/// Builds every evaluation report from persisted fingerprints:
/// (a) distance distributions, (b) accuracy against the number of training
/// batches tested on the last three, (c) per-pattern accuracy on the
/// configured split, (d) per-batch accuracy of batch-0 classifiers.
pub fn eval(config: &RunConfig, exec: Execution) -> Result<EvalSummary> {
    config.validate()?;
    if config.batches < 4 {
        return Err(Error::Config(format!("evaluation needs ≥ 4 batches, got {}", config.batches)));
    }
    let sets = datasets(config, exec)?;
    let reports = config.paths().reports();

    let mut distances = Vec::new();
    for d in &sets {
        let rows = distance_rows(d);
        let mut intra: Vec<f64> = rows.iter().filter(|r| r.kind == "intra").map(|r| r.distance).collect();
        let mut inter: Vec<f64> = rows.iter().filter(|r| r.kind == "inter").map(|r| r.distance).collect();
        let (intra_median, inter_median) = (median(&mut intra), median(&mut inter));
        distances.push(DistanceSummary {
            pattern: d.pattern,
            qubits: d.pattern.num_vertices(),
            dim: d.dim(),
            intra_count: intra.len(),
            inter_count: inter.len(),
            intra_median,
            inter_median,
            ratio: inter_median / intra_median,
        });
        store::write_csv(&reports.join(format!("distances_{}.csv", d.pattern)), rows)?;
    }
    store::write_csv(&reports.join("distance_summary.csv"), &distances)?;

    // every distinct training split, trained once and shared by the reports
    let last3: Vec<u32> = (config.batches - 3..config.batches).collect();
    let mut splits: Vec<Vec<u32>> = (1..=config.batches - 3).map(|n| (0..n).collect()).collect();
    if !splits.contains(&config.train_batches) {
        splits.push(config.train_batches.clone());
    }
    let jobs: Vec<(usize, usize)> = (0..sets.len()).flat_map(|d| (0..splits.len()).map(move |s| (d, s))).collect();
    let trained = par::map(&jobs, exec, |&(d, s)| fit_classifier(config, &sets[d], &splits[s]));
    let mut models: BTreeMap<(usize, usize), Classifier> = BTreeMap::new();
    for (job, c) in jobs.iter().zip(trained) {
        let c = c?;
        let split = batch_list(&splits[job.1]).replace(' ', "-");
        store::write_json(&reports.join("eval_models").join(format!("{}_train_{split}.json", c.pattern)), &c)?;
        models.insert(*job, c);
    }
    let model_for = |d: usize, split: &[u32]| {
        let s = splits.iter().position(|x| x == split).expect("split was trained");
        &models[&(d, s)]
    };

    let mut growth = Vec::new();
    for (d, data) in sets.iter().enumerate() {
        let test = data.restrict(&last3);
        for n in 1..=config.batches - 3 {
            let split: Vec<u32> = (0..n).collect();
            let c = model_for(d, &split);
            let r = c.evaluate(&test, exec)?;
            growth.push(GrowthRow {
                pattern: data.pattern,
                train_count: n,
                device_accuracy: r.device_accuracy,
                embedding_accuracy: r.embedding_accuracy,
                converged: c.training.converged,
            });
        }
    }
    store::write_csv(&reports.join("accuracy_vs_batches.csv"), &growth)?;

    let test_split = config.test_split();
    let mut by_pattern = Vec::new();
    for (d, data) in sets.iter().enumerate() {
        let c = model_for(d, &config.train_batches);
        let test = data.restrict(&test_split);
        let r: AccuracyReport = c.evaluate(&test, exec)?;
        let base = nearest_centroid(&data.restrict(&config.train_batches), &test)?;
        write_confusion(&reports.join(format!("confusion_{}.csv", data.pattern)), &r)?;
        by_pattern.push(AccuracyRow {
            pattern: data.pattern,
            train_batches: batch_list(&config.train_batches),
            test_batches: batch_list(&test_split),
            device_accuracy: r.device_accuracy,
            embedding_accuracy: r.embedding_accuracy,
            centroid_device_accuracy: base.device_accuracy,
            centroid_embedding_accuracy: base.embedding_accuracy,
            epochs: c.training.epochs,
            converged: c.training.converged,
        });
    }
    store::write_csv(&reports.join("accuracy_by_pattern.csv"), &by_pattern)?;

    let mut degradation = Vec::new();
    for (d, data) in sets.iter().enumerate() {
        let c = model_for(d, &[0]);
        for b in 1..config.batches {
            let r = c.evaluate(&data.restrict(&[b]), exec)?;
            degradation.push(DegradationRow {
                pattern: data.pattern,
                test_batch: b,
                device_accuracy: r.device_accuracy,
                embedding_accuracy: r.embedding_accuracy,
            });
        }
    }
    store::write_csv(&reports.join("degradation.csv"), &degradation)?;

    Ok(EvalSummary {
        distances,
        by_pattern,
        growth,
        degradation,
    })
}

fn write_confusion(path: &Path, r: &AccuracyReport) -> Result<()> {
    let mut text = String::from("true\\predicted");
    for k in 0..r.confusion.len() {
        text.push_str(&format!(",{k}"));
    }
    text.push('\n');
    for (k, row) in r.confusion.iter().enumerate() {
        text.push_str(&k.to_string());
        for c in row {
            text.push_str(&format!(",{c}"));
        }
        text.push('\n');
    }
    store::write_bytes(path, text.as_bytes())
}

/// Embeddings of `pattern` into the standard fleet.
pub fn embeddings(pattern: PatternKind, seed: u64) -> Vec<Embedding> {
    enumerate_embeddings(pattern, &Fleet::standard(seed))
}

/// Human-readable one-liner for a device or pattern graph.
pub fn describe_graph(g: &impl QubitGraph) -> String {
    let edges: Vec<String> = g.edges().iter().map(|(a, b)| format!("{a}-{b}")).collect();
    format!("{} ({} qubits; {})", g.label(), g.num_qubits(), edges.join(" "))
}
