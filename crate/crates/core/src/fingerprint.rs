//! Fingerprint vectors: canonical layouts, assembly from rate estimates,
//! slicing down to embedded localities, distances and datasets.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::idt::{DriveEstimates, DriveSpec, RateEstimate, RateSource};
use crate::par::{self, Execution};
use crate::store;
use crate::topology::{
    enumerate_embeddings, is_embedding, DeviceTopology, Embedding, Fleet, PatternKind, QubitGraph,
};
use crate::{Error, Result};

pub const FINGERPRINT_FORMAT_VERSION: u32 = 1;

/// The qubit or adjacent pair a rate belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Target {
    Qubit(usize),
    Pair(usize, usize),
}

impl Target {
    fn pair(a: usize, b: usize) -> Target {
        Target::Pair(a.min(b), a.max(b))
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Qubit(q) => write!(f, "{q}"),
            Target::Pair(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed target {s:?}"));
        match s.split_once('-') {
            Some((a, b)) => Ok(Target::Pair(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
            None => Ok(Target::Qubit(s.parse().map_err(|_| bad())?)),
        }
    }
}

/// One coordinate of a fingerprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub drive: DriveSpec,
    pub target: Target,
    pub source: RateSource,
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.drive, self.target, self.source.label())
    }
}

impl FromStr for FeatureDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('|');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(t), Some(r), None) => Ok(FeatureDescriptor {
                drive: d.parse()?,
                target: t.parse()?,
                source: RateSource::parse(r)?,
            }),
            _ => Err(Error::Parse(format!("malformed feature descriptor {s:?}"))),
        }
    }
}

/// Canonical feature order for `graph`: drives in `DriveSpec::all_for`
/// order; within a drive, spectators ascending with the nine weight-1
/// rates each, then adjacent spectator pairs (in coupling order) with λ.
pub fn layout(graph: &impl QubitGraph) -> Vec<FeatureDescriptor> {
    let mut out = Vec::new();
    for drive in DriveSpec::all_for(graph) {
        for q in (0..graph.num_qubits()).filter(|q| !drive.drives(*q)) {
            out.extend(RateSource::WEIGHT1.iter().map(|&source| FeatureDescriptor {
                drive,
                target: Target::Qubit(q),
                source,
            }));
        }
        for &(a, b) in graph.edges() {
            if !drive.drives(a) && !drive.drives(b) {
                out.push(FeatureDescriptor {
                    drive,
                    target: Target::pair(a, b),
                    source: RateSource::PairLambda,
                });
            }
        }
    }
    out
}

/// Short hash identifying a layout.
pub fn layout_hash(layout: &[FeatureDescriptor]) -> String {
    let mut h = Sha256::new();
    for d in layout {
        h.update(d.to_string().as_bytes());
        h.update(b"\n");
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Coordinate system a fingerprint lives in.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Device(String),
    Pattern(PatternKind),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Device(d) => write!(f, "device:{d}"),
            Frame::Pattern(p) => write!(f, "pattern:{p}"),
        }
    }
}

/// Rate estimates for one frame and batch, keyed by descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSet {
    pub frame: Frame,
    pub batch_index: u32,
    pub entries: BTreeMap<FeatureDescriptor, RateEstimate>,
}

impl EstimateSet {
    pub fn new(frame: Frame, batch_index: u32) -> Self {
        EstimateSet {
            frame,
            batch_index,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert_drive(&mut self, est: &DriveEstimates) {
        for (q, rates) in &est.qubits {
            for r in rates {
                self.entries.insert(
                    FeatureDescriptor {
                        drive: est.drive,
                        target: Target::Qubit(*q),
                        source: r.source,
                    },
                    *r,
                );
            }
        }
        for ((a, b), r) in &est.pairs {
            self.entries.insert(
                FeatureDescriptor {
                    drive: est.drive,
                    target: Target::pair(*a, *b),
                    source: RateSource::PairLambda,
                },
                *r,
            );
        }
    }

    pub fn from_drives<'a>(frame: Frame, batch_index: u32, drives: impl IntoIterator<Item = &'a DriveEstimates>) -> Self {
        let mut set = EstimateSet::new(frame, batch_index);
        for d in drives {
            set.insert_drive(d);
        }
        set
    }

    /// The estimates visible inside `emb`, relabeled into pattern
    /// coordinates.
    pub fn restrict(&self, emb: &Embedding, device: &DeviceTopology) -> Result<EstimateSet> {
        check_embedding(&self.frame, emb, device)?;
        let pattern = emb.pattern.topology();
        let mut out = EstimateSet::new(Frame::Pattern(emb.pattern), self.batch_index);
        for (d, r) in &self.entries {
            if let Some(local) = pull_back(d, emb, &pattern) {
                out.entries.insert(local, *r);
            }
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        store::write_csv(
            path,
            self.entries.iter().map(|(d, r)| EstimateRow {
                drive: d.drive.to_string(),
                target: d.target.to_string(),
                source: d.source.label().to_string(),
                value: r.value,
                std_err: r.std_err,
                clamped: r.clamped,
            }),
        )
    }

    pub fn read_csv(path: &Path, frame: Frame, batch_index: u32) -> Result<EstimateSet> {
        let rows: Vec<EstimateRow> = store::read_csv(path)?;
        let mut out = EstimateSet::new(frame, batch_index);
        for row in rows {
            let source = RateSource::parse(&row.source)?;
            out.entries.insert(
                FeatureDescriptor {
                    drive: row.drive.parse()?,
                    target: row.target.parse()?,
                    source,
                },
                RateEstimate {
                    source,
                    value: row.value,
                    std_err: row.std_err,
                    clamped: row.clamped,
                },
            );
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct EstimateRow {
    drive: String,
    target: String,
    source: String,
    value: f64,
    std_err: f64,
    clamped: bool,
}

#[derive(Serialize, Deserialize)]
struct FeatureRow {
    drive: String,
    target: String,
    source: String,
    value: f64,
}

fn check_embedding(frame: &Frame, emb: &Embedding, device: &DeviceTopology) -> Result<()> {
    if *frame != Frame::Device(emb.device_id.clone()) {
        return Err(Error::InvalidEmbedding(format!(
            "embedding {} does not target {frame}",
            emb.describe()
        )));
    }
    if device.device_id != emb.device_id || !is_embedding(&emb.pattern.topology(), device, &emb.vertex_map) {
        return Err(Error::InvalidEmbedding(format!(
            "{} is not a {} embedding into {}",
            emb.describe(),
            emb.pattern,
            device.device_id
        )));
    }
    Ok(())
}

/// Relabels a device-frame descriptor through κ⁻¹, or `None` when its drive
/// or target leaves the embedded vertex set.
fn pull_back(d: &FeatureDescriptor, emb: &Embedding, pattern: &impl QubitGraph) -> Option<FeatureDescriptor> {
    let drive = match d.drive {
        DriveSpec::Single { qubit } => DriveSpec::Single {
            qubit: emb.preimage(qubit)?,
        },
        DriveSpec::Pair { control, target } => {
            let (a, b) = (emb.preimage(control)?, emb.preimage(target)?);
            if !pattern.adjacent(a, b) {
                return None;
            }
            DriveSpec::Pair {
                control: a.min(b),
                target: a.max(b),
            }
        }
        other => other,
    };
    let target = match d.target {
        Target::Qubit(q) => Target::Qubit(emb.preimage(q)?),
        Target::Pair(a, b) => {
            let (a, b) = (emb.preimage(a)?, emb.preimage(b)?);
            if !pattern.adjacent(a, b) {
                return None;
            }
            Target::pair(a, b)
        }
    };
    Some(FeatureDescriptor {
        drive,
        target,
        source: d.source,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fingerprint {
    pub frame: Frame,
    pub batch_index: u32,
    pub features: Vec<f64>,
    pub layout: Vec<FeatureDescriptor>,
}

/// Compact JSON form: the layout is referenced by hash only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactFingerprint {
    pub version: u32,
    pub frame: Frame,
    pub batch_index: u32,
    pub layout_hash: String,
    pub features: Vec<f64>,
}

impl Fingerprint {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn layout_hash(&self) -> String {
        layout_hash(&self.layout)
    }

    pub fn compact(&self) -> CompactFingerprint {
        CompactFingerprint {
            version: FINGERPRINT_FORMAT_VERSION,
            frame: self.frame.clone(),
            batch_index: self.batch_index,
            layout_hash: self.layout_hash(),
            features: self.features.clone(),
        }
    }

    /// Rebuilds a fingerprint from its compact form and the layout it was
    /// written with.
    pub fn from_compact(c: CompactFingerprint, layout: Vec<FeatureDescriptor>) -> Result<Fingerprint> {
        let expected = layout_hash(&layout);
        if c.layout_hash != expected || c.features.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} fingerprint has layout {} with {} features, expected {} with {}",
                c.frame,
                c.layout_hash,
                c.features.len(),
                expected,
                layout.len()
            )));
        }
        Ok(Fingerprint {
            frame: c.frame,
            batch_index: c.batch_index,
            features: c.features,
            layout,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        store::write_csv(
            path,
            self.layout.iter().zip(&self.features).map(|(d, &value)| FeatureRow {
                drive: d.drive.to_string(),
                target: d.target.to_string(),
                source: d.source.label().to_string(),
                value,
            }),
        )
    }

    pub fn read_csv(path: &Path, frame: Frame, batch_index: u32) -> Result<Fingerprint> {
        let rows: Vec<FeatureRow> = store::read_csv(path)?;
        let mut layout = Vec::with_capacity(rows.len());
        let mut features = Vec::with_capacity(rows.len());
        for row in rows {
            layout.push(FeatureDescriptor {
                drive: row.drive.parse()?,
                target: row.target.parse()?,
                source: RateSource::parse(&row.source)?,
            });
            features.push(row.value);
        }
        Ok(Fingerprint {
            frame,
            batch_index,
            features,
            layout,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        store::write_json(path, &self.compact())
    }
}

/// Orders `estimates` into the canonical layout of `graph`.
pub fn assemble(estimates: &EstimateSet, graph: &impl QubitGraph) -> Result<Fingerprint> {
    let layout = layout(graph);
    let mut missing = Vec::new();
    let mut features = Vec::with_capacity(layout.len());
    for d in &layout {
        match estimates.entries.get(d) {
            Some(r) if r.value.is_finite() => features.push(r.value),
            Some(_) => return Err(Error::Degenerate(format!("non-finite estimate for {d}"))),
            None => missing.push(d.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    Ok(Fingerprint {
        frame: estimates.frame.clone(),
        batch_index: estimates.batch_index,
        features,
        layout,
    })
}

/// Keeps the features of `full` whose drive and target lie inside the
/// embedded vertex set, relabeled into pattern coordinates.
pub fn slice(full: &Fingerprint, emb: &Embedding, device: &DeviceTopology) -> Result<Fingerprint> {
    check_embedding(&full.frame, emb, device)?;
    let pattern = emb.pattern.topology();
    let target = layout(&pattern);
    let position: HashMap<FeatureDescriptor, usize> = target.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut features = vec![None; target.len()];
    for (d, &v) in full.layout.iter().zip(&full.features) {
        let Some(local) = pull_back(d, emb, &pattern) else {
            continue;
        };
        let slot = position.get(&local).ok_or_else(|| {
            Error::LayoutMismatch(format!("{d} maps to {local}, which is not in the {} layout", emb.pattern))
        })?;
        if features[*slot].replace(v).is_some() {
            return Err(Error::LayoutMismatch(format!("{local} reached twice")));
        }
    }
    let missing: Vec<String> = features
        .iter()
        .zip(&target)
        .filter(|(v, _)| v.is_none())
        .map(|(_, d)| d.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    Ok(Fingerprint {
        frame: Frame::Pattern(emb.pattern),
        batch_index: full.batch_index,
        features: features.into_iter().flatten().collect(),
        layout: target,
    })
}

/// Assembles a locality fingerprint straight from device estimates,
/// without going through the full-device vector.
pub fn assemble_local(estimates: &EstimateSet, emb: &Embedding, device: &DeviceTopology) -> Result<Fingerprint> {
    assemble(&estimates.restrict(emb, device)?, &emb.pattern.topology())
}

/// `‖f1 − f2‖₂ / n`.
pub fn normalized_distance(f1: &Fingerprint, f2: &Fingerprint) -> Result<f64> {
    if f1.layout != f2.layout {
        return Err(Error::LayoutMismatch(format!(
            "{} ({} features) vs {} ({} features)",
            f1.frame,
            f1.dim(),
            f2.frame,
            f2.dim()
        )));
    }
    if f1.features.is_empty() {
        return Err(Error::LayoutMismatch("empty layout".into()));
    }
    Ok(distance(&f1.features, &f2.features))
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sq.sqrt() / a.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class: usize,
    pub batch_index: u32,
}

/// Sliced fingerprints of one pattern, one class per embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintDataset {
    pub pattern: PatternKind,
    pub layout: Vec<FeatureDescriptor>,
    pub classes: Vec<Embedding>,
    pub samples: Vec<Sample>,
}

impl FingerprintDataset {
    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn layout_hash(&self) -> String {
        layout_hash(&self.layout)
    }

    /// Samples whose batch is in `batches`.
    pub fn restrict(&self, batches: &[u32]) -> FingerprintDataset {
        FingerprintDataset {
            samples: self
                .samples
                .iter()
                .filter(|s| batches.contains(&s.batch_index))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn batches(&self) -> Vec<u32> {
        let mut b: Vec<u32> = self.samples.iter().map(|s| s.batch_index).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    /// Writes `manifest.json` plus one CSV per class.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); self.classes.len()];
        for s in &self.samples {
            by_class[s.class].push(s);
        }
        let header: Vec<String> = std::iter::once("batch_index".to_string())
            .chain(self.layout.iter().map(FeatureDescriptor::to_string))
            .collect();
        let mut classes = Vec::with_capacity(self.classes.len());
        for (k, (emb, samples)) in self.classes.iter().zip(&by_class).enumerate() {
            let file = format!("class_{k:03}.csv");
            let path = dir.join(&file);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).map_err(|e| store::csv_error(&path, e))?;
            for s in samples {
                let row = std::iter::once(s.batch_index.to_string()).chain(s.features.iter().map(f64::to_string));
                w.write_record(row).map_err(|e| store::csv_error(&path, e))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
            store::write_bytes(&path, &bytes)?;
            classes.push(ManifestClass {
                device_id: emb.device_id.clone(),
                vertex_map: emb.vertex_map.clone(),
                file,
                samples: samples.len(),
            });
        }
        let manifest = DatasetManifest {
            version: FINGERPRINT_FORMAT_VERSION,
            pattern: self.pattern,
            layout_hash: self.layout_hash(),
            layout: self.layout.iter().map(FeatureDescriptor::to_string).collect(),
            classes,
        };
        store::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<FingerprintDataset> {
        let manifest: DatasetManifest = store::read_json(&dir.join("manifest.json"))?;
        let layout = manifest
            .layout
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<FeatureDescriptor>>>()?;
        if layout_hash(&layout) != manifest.layout_hash {
            return Err(Error::LayoutMismatch(format!("{}: layout hash disagrees", dir.display())));
        }
        let mut classes = Vec::new();
        let mut samples = Vec::new();
        for (k, c) in manifest.classes.iter().enumerate() {
            classes.push(Embedding {
                pattern: manifest.pattern,
                device_id: c.device_id.clone(),
                vertex_map: c.vertex_map.clone(),
            });
            let path = dir.join(&c.file);
            let mut r = csv::Reader::from_path(&path).map_err(|e| store::csv_error(&path, e))?;
            for rec in r.records() {
                let rec = rec.map_err(|e| store::csv_error(&path, e))?;
                let bad = |f: &str| Error::Parse(format!("{}: bad value {f:?}", path.display()));
                let mut fields = rec.iter();
                let batch = fields.next().ok_or_else(|| bad(""))?;
                let batch_index = batch.parse().map_err(|_| bad(batch))?;
                let features = fields
                    .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
                    .collect::<Result<Vec<_>>>()?;
                if features.len() != layout.len() {
                    return Err(Error::LayoutMismatch(format!(
                        "{}: row has {} features, layout has {}",
                        path.display(),
                        features.len(),
                        layout.len()
                    )));
                }
                samples.push(Sample {
                    features,
                    class: k,
                    batch_index,
                });
            }
        }
        Ok(FingerprintDataset {
            pattern: manifest.pattern,
            layout,
            classes,
            samples,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    pattern: PatternKind,
    layout_hash: String,
    layout: Vec<String>,
    classes: Vec<ManifestClass>,
}

#[derive(Serialize, Deserialize)]
struct ManifestClass {
    device_id: String,
    vertex_map: Vec<usize>,
    file: String,
    samples: usize,
}

/// One sample per (embedding, enrolled batch), ordered by class then batch.
/// `fingerprints` are full-device fingerprints in device frames.
pub fn build_dataset(
    fingerprints: &[Fingerprint],
    fleet: &Fleet,
    pattern: PatternKind,
    exec: Execution,
) -> Result<FingerprintDataset> {
    let classes = enumerate_embeddings(pattern, fleet);
    let mut by_device: BTreeMap<&str, Vec<&Fingerprint>> = BTreeMap::new();
    for f in fingerprints {
        let Frame::Device(id) = &f.frame else {
            return Err(Error::InvalidArgument(format!("{} is not a device fingerprint", f.frame)));
        };
        by_device.entry(id.as_str()).or_default().push(f);
    }
    for list in by_device.values_mut() {
        list.sort_by_key(|f| f.batch_index);
    }
    let per_class = par::map_range(classes.len(), exec, |k| {
        let emb = &classes[k];
        let device = fleet
            .device(&emb.device_id)
            .ok_or_else(|| Error::InvalidEmbedding(format!("unknown device {}", emb.device_id)))?;
        by_device
            .get(emb.device_id.as_str())
            .map_or(&[][..], |v| v.as_slice())
            .iter()
            .map(|f| {
                slice(f, emb, device).map(|s| Sample {
                    features: s.features,
                    class: k,
                    batch_index: s.batch_index,
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut samples = Vec::new();
    for part in per_class {
        samples.extend(part?);
    }
    Ok(FingerprintDataset {
        pattern,
        layout: layout(&pattern.topology()),
        classes,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{canonical_topology, DeviceKind};

    /// Closed-form dimension: each drive contributes 9 per spectator plus
    /// one per coupling with no driven endpoint.
    fn counted_dim(graph: &impl QubitGraph) -> usize {
        let n = graph.num_qubits();
        let e = graph.edges().len();
        let deg = |q: usize| graph.neighbors(q).len();
        let singles: usize = (0..n).map(|q| 9 * (n - 1) + e - deg(q)).sum();
        let pairs: usize = graph.edges().iter().map(|&(a, b)| 9 * (n - 2) + e + 1 - deg(a) - deg(b)).sum();
        singles + pairs + 2 * (9 * n + e)
    }

    #[test]
    fn golden_dimensions() {
        assert_eq!(layout(&canonical_topology(DeviceKind::L5, "d0")).len(), 404);
        assert_eq!(layout(&PatternKind::L4.topology()).len(), 248);
        assert_eq!(layout(&PatternKind::P1.topology()).len(), 18);
        for kind in DeviceKind::ALL {
            let g = canonical_topology(kind, "d");
            assert_eq!(layout(&g).len(), counted_dim(&g), "{kind}");
        }
        for p in PatternKind::ALL {
            let g = p.topology();
            assert_eq!(layout(&g).len(), counted_dim(&g), "{p}");
        }
    }

    #[test]
    fn p1_layout_is_control_groups_only() {
        let l = layout(&PatternKind::P1.topology());
        assert!(l
            .iter()
            .all(|d| matches!(d.drive, DriveSpec::ControlSingle | DriveSpec::ControlPair) && d.target == Target::Qubit(0)));
    }

    #[test]
    fn layouts_have_unique_descriptors() {
        for kind in DeviceKind::ALL {
            let l = layout(&canonical_topology(kind, "d"));
            let set: std::collections::BTreeSet<_> = l.iter().collect();
            assert_eq!(set.len(), l.len());
        }
    }

    #[test]
    fn descriptor_labels_round_trip() {
        for d in layout(&canonical_topology(DeviceKind::H7, "d6")) {
            assert_eq!(d.to_string().parse::<FeatureDescriptor>().unwrap(), d);
        }
        assert!("single:0|1".parse::<FeatureDescriptor>().is_err());
    }

    fn fp(values: &[f64]) -> Fingerprint {
        let layout = layout(&PatternKind::L2.topology())[..values.len()].to_vec();
        Fingerprint {
            frame: Frame::Pattern(PatternKind::L2),
            batch_index: 0,
            features: values.to_vec(),
            layout,
        }
    }

    #[test]
    fn distance_arithmetic() {
        let a = fp(&[0.0, 0.0, 0.0, 0.0]);
        let b = fp(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(normalized_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(normalized_distance(&a, &b).unwrap(), 0.25);
        assert!(normalized_distance(&a, &fp(&[0.0; 5])).is_err());
    }

    #[test]
    fn missing_estimates_are_listed() {
        let g = canonical_topology(DeviceKind::L5, "d0");
        let mut set = EstimateSet::new(Frame::Device("d0".into()), 0);
        for d in layout(&g).into_iter().skip(2) {
            set.entries.insert(
                d,
                RateEstimate {
                    source: d.source,
                    value: 0.0,
                    std_err: 0.0,
                    clamped: false,
                },
            );
        }
        match assemble(&set, &g) {
            Err(Error::MissingCells(m)) => assert_eq!(m.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
