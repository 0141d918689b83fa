//! Locality classifiers over sliced fingerprints: standardization, PCA, a
//! one-hidden-layer perceptron trained with Adam, and a nearest-centroid
//! baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fingerprint::{Fingerprint, FingerprintDataset, Frame};
use crate::par::{self, Execution};
use crate::seed;
use crate::topology::{Embedding, PatternKind};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const STD_FLOOR: f64 = 1e-12;

/// Row-major matrix for JSON persistence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FlatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for FlatMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        FlatMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl FlatMatrix {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Parse(format!(
                "matrix of {}×{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

mod flat {
    use super::FlatMatrix;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        FlatMatrix::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        FlatMatrix::deserialize(d)?
            .to_matrix()
            .map_err(serde::de::Error::custom)
    }
}

fn rows_to_matrix(rows: &[&[f64]]) -> DMatrix<f64> {
    let n = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

/// Per-feature affine normalization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Standardizer> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("standardizer needs ≥ 2 samples, got {n}")));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::LayoutMismatch("rows differ in length".into()));
        }
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(*r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(*r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }
}

/// Principal axes of standardized training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// `m × n`, orthonormal rows.
    #[serde(with = "flat")]
    pub components: DMatrix<f64>,
    /// Explained-variance ratio of every retained component.
    pub explained_ratio: Vec<f64>,
    pub retained: usize,
}

impl PcaModel {
    /// Keeps the smallest number of leading components whose cumulative
    /// explained variance reaches `variance_target`.
    pub fn fit(rows: &[Vec<f64>], variance_target: f64) -> Result<PcaModel> {
        if !(variance_target > 0.0 && variance_target <= 1.0) {
            return Err(Error::Config(format!("variance target {variance_target} outside (0, 1]")));
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let x = rows_to_matrix(&refs);
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument("PCA needs ≥ 2 samples".into()));
        }
        let means = x.row_mean();
        let centered = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - means[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        let total: f64 = values.iter().sum();
        if total <= 1e-12 * x.ncols() as f64 || !total.is_finite() {
            return Err(Error::Degenerate("training data has no variance".into()));
        }
        let mut retained = 0;
        let mut cumulative = 0.0;
        for v in &values {
            retained += 1;
            cumulative += v / total;
            if cumulative >= variance_target - 1e-12 {
                break;
            }
        }
        let mut components = DMatrix::zeros(retained, x.ncols());
        for (r, &k) in order.iter().take(retained).enumerate() {
            let mut v = eig.eigenvectors.column(k).into_owned();
            // fix the sign so the largest-magnitude entry is positive
            let pivot = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
            if pivot < 0.0 {
                v.neg_mut();
            }
            components.set_row(r, &v.transpose());
        }
        Ok(PcaModel {
            components,
            explained_ratio: values.iter().take(retained).map(|v| v / total).collect(),
            retained,
        })
    }

    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        (&self.components * DVector::from_column_slice(z)).as_slice().to_vec()
    }
}

/// Standardizer followed by PCA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub standardizer: Standardizer,
    pub pca: PcaModel,
}

impl Preprocess {
    pub fn fit(train: &FingerprintDataset, variance_target: f64) -> Result<Preprocess> {
        let rows: Vec<&[f64]> = train.samples.iter().map(|s| s.features.as_slice()).collect();
        let standardizer = Standardizer::fit(&rows)?;
        let z: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.transform(r)).collect();
        let pca = PcaModel::fit(&z, variance_target)?;
        Ok(Preprocess { standardizer, pca })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        self.pca.transform(&self.standardizer.transform(x))
    }

    /// Digest of the fitted state, for leakage checks.
    pub fn state_hash(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub variance_target: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs_per_set: usize,
    pub loss_threshold: f64,
    pub max_sets: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            variance_target: 0.95,
            dropout: 0.2,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs_per_set: 100,
            loss_threshold: 0.05,
            max_sets: 50,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("hyperparameter {what}")));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("learning rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam decays must be in [0, 1)");
        }
        if self.epochs_per_set == 0 || self.max_sets == 0 {
            return bad("epoch counts must be ≥ 1");
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return bad("variance target must be in (0, 1]");
        }
        Ok(())
    }
}

/// Dense sigmoid layer, dropout, dense linear layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `u × m`
    #[serde(with = "flat")]
    pub w1: DMatrix<f64>,
    pub b1: Vec<f64>,
    /// `classes × u`
    #[serde(with = "flat")]
    pub w2: DMatrix<f64>,
    pub b2: Vec<f64>,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_row_bias(m: &mut DMatrix<f64>, bias: &[f64]) {
    for (j, b) in bias.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(*b);
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(inputs: usize, hidden: usize, classes: usize, dropout: f64, seed: u64) -> MlpModel {
        let mut rng = seed::rng(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        MlpModel {
            w1: glorot(hidden, inputs),
            b1: vec![0.0; hidden],
            w2: glorot(classes, hidden),
            b2: vec![0.0; classes],
            dropout,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    fn hidden_activations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.w1.transpose();
        add_row_bias(&mut z, &self.b1);
        z.map(sigmoid)
    }

    /// Linear outputs for each row of `x` (no dropout).
    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = self.hidden_activations(x);
        let mut o = h * self.w2.transpose();
        add_row_bias(&mut o, &self.b2);
        o
    }

    /// Mean softmax cross-entropy and its gradient. `mask` multiplies the
    /// hidden activations (inverted dropout when training).
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, labels: &[usize], mask: Option<&DMatrix<f64>>) -> (f64, MlpGrad) {
        let n = x.nrows() as f64;
        let h = self.hidden_activations(x);
        let hd = match mask {
            Some(m) => h.component_mul(m),
            None => h.clone(),
        };
        let mut o = &hd * self.w2.transpose();
        add_row_bias(&mut o, &self.b2);
        let mut loss = 0.0;
        let mut d_o = o;
        for (i, &y) in labels.iter().enumerate() {
            let mut row = d_o.row_mut(i);
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let sum = row.sum();
            row /= sum;
            loss -= row[y].max(f64::MIN_POSITIVE).ln();
            row[y] -= 1.0;
        }
        d_o /= n;
        let w2 = d_o.transpose() * &hd;
        let b2 = d_o.row_sum().transpose();
        let mut d_h = &d_o * &self.w2;
        if let Some(m) = mask {
            d_h.component_mul_assign(m);
        }
        let d_z = d_h.zip_map(&h, |g, a| g * a * (1.0 - a));
        let w1 = d_z.transpose() * x;
        let b1 = d_z.row_sum().transpose();
        (loss / n, MlpGrad { w1, b1, w2, b2 })
    }

    /// All parameters as one vector (w1, b1, w2, b2; matrices column-major).
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w1.as_slice().to_vec();
        v.extend(&self.b1);
        v.extend(self.w2.as_slice());
        v.extend(&self.b2);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p[at..at + dst.len()]);
            at += dst.len();
        };
        take(self.w1.as_mut_slice());
        take(&mut self.b1);
        take(self.w2.as_mut_slice());
        take(&mut self.b2);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

impl MlpGrad {
    /// Same ordering as [`MlpModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.w1.as_slice().to_vec();
        v.extend(self.b1.iter());
        v.extend(self.w2.as_slice());
        v.extend(self.b2.iter());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Final-epoch training loss of every epoch set.
    pub set_losses: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

/// Full-batch Adam in sets of epochs until the final-epoch loss of a set
/// drops below the threshold or the set cap is hit.
pub fn train_mlp(
    x: &DMatrix<f64>,
    labels: &[usize],
    model: &mut MlpModel,
    hyper: &Hyperparameters,
    seed: u64,
) -> Result<TrainingLog> {
    hyper.validate()?;
    if x.nrows() != labels.len() || x.nrows() == 0 {
        return Err(Error::InvalidArgument("training set is empty or mislabeled".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.classes()) {
        return Err(Error::InvalidArgument(format!("label {bad} ≥ {} classes", model.classes())));
    }
    let mut rng = seed::rng(seed::derive(seed, "dropout", 0));
    let keep = 1.0 - hyper.dropout;
    let mut params = model.params();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step = 0i32;
    let mut log = TrainingLog {
        set_losses: Vec::new(),
        epochs: 0,
        converged: false,
    };
    for _ in 0..hyper.max_sets {
        let mut loss = f64::NAN;
        for _ in 0..hyper.epochs_per_set {
            let mask = (hyper.dropout > 0.0).then(|| {
                DMatrix::from_fn(x.nrows(), model.hidden(), |_, _| {
                    if rng.random_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            let (l, grad) = model.loss_and_grad(x, labels, mask.as_ref());
            if !l.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {l} at epoch {} (last set losses {:?})",
                    log.epochs, log.set_losses
                )));
            }
            loss = l;
            step += 1;
            let c1 = 1.0 - hyper.beta1.powi(step);
            let c2 = 1.0 - hyper.beta2.powi(step);
            for (k, g) in grad.flatten().into_iter().enumerate() {
                m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
                v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
                params[k] -= hyper.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + hyper.epsilon);
            }
            model.set_params(&params);
            log.epochs += 1;
        }
        log.set_losses.push(loss);
        if loss < hyper.loss_threshold {
            log.converged = true;
            break;
        }
    }
    if !model.is_finite() {
        return Err(Error::Diverged("non-finite parameters after training".into()));
    }
    Ok(log)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = k;
        }
    }
    best
}

/// A trained per-pattern locality classifier with everything needed to
/// apply it to a probe fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub version: u32,
    pub pattern: PatternKind,
    pub layout_hash: String,
    pub train_batches: Vec<u32>,
    pub classes: Vec<Embedding>,
    pub preprocess: Preprocess,
    pub mlp: MlpModel,
    pub training: TrainingLog,
}

impl Classifier {
    pub fn fit(train: &FingerprintDataset, hyper: &Hyperparameters, seed: u64) -> Result<Classifier> {
        if train.samples.is_empty() {
            return Err(Error::InvalidArgument(format!("no {} training samples", train.pattern)));
        }
        let preprocess = Preprocess::fit(train, hyper.variance_target)?;
        let rows: Vec<Vec<f64>> = train.samples.iter().map(|s| preprocess.transform(&s.features)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let x = rows_to_matrix(&refs);
        let labels: Vec<usize> = train.samples.iter().map(|s| s.class).collect();
        let mut mlp = MlpModel::new(
            preprocess.pca.retained,
            train.dim(),
            train.num_classes(),
            hyper.dropout,
            seed::derive(seed, "init", 0),
        );
        let training = train_mlp(&x, &labels, &mut mlp, hyper, seed)?;
        Ok(Classifier {
            version: MODEL_FORMAT_VERSION,
            pattern: train.pattern,
            layout_hash: train.layout_hash(),
            train_batches: train.batches(),
            classes: train.classes.clone(),
            preprocess,
            mlp,
            training,
        })
    }

    /// Class index and the linear output scores for raw features.
    pub fn predict(&self, features: &[f64]) -> Result<(usize, Vec<f64>)> {
        if features.len() != self.preprocess.standardizer.mean.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} classifier expects {} features, got {}",
                self.pattern,
                self.preprocess.standardizer.mean.len(),
                features.len()
            )));
        }
        let z = self.preprocess.transform(features);
        let x = DMatrix::from_row_slice(1, z.len(), &z);
        let scores = self.mlp.logits(&x).row(0).iter().copied().collect::<Vec<_>>();
        Ok((argmax(&scores), scores))
    }

    pub fn predict_fingerprint(&self, f: &Fingerprint) -> Result<(usize, Vec<f64>)> {
        if f.frame != Frame::Pattern(self.pattern) || f.layout_hash() != self.layout_hash {
            return Err(Error::LayoutMismatch(format!(
                "probe in {} with layout {} does not match the {} classifier layout {}",
                f.frame,
                f.layout_hash(),
                self.pattern,
                self.layout_hash
            )));
        }
        self.predict(&f.features)
    }

    pub fn evaluate(&self, test: &FingerprintDataset, exec: Execution) -> Result<AccuracyReport> {
        if test.layout_hash() != self.layout_hash || test.classes != self.classes {
            return Err(Error::LayoutMismatch(format!(
                "test set for {} does not match the {} classifier",
                test.pattern, self.pattern
            )));
        }
        let preds = par::map(&test.samples, exec, |s| self.predict(&s.features).map(|p| p.0));
        let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
        AccuracyReport::from_predictions(self.train_batches.clone(), test, &preds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub pattern: PatternKind,
    pub train_batches: Vec<u32>,
    pub test_batches: Vec<u32>,
    pub samples: usize,
    pub device_accuracy: f64,
    pub embedding_accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u32>>,
}

impl AccuracyReport {
    pub fn from_predictions(train_batches: Vec<u32>, test: &FingerprintDataset, preds: &[usize]) -> Result<Self> {
        if test.samples.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {} test set", test.pattern)));
        }
        let c = test.num_classes();
        let mut confusion = vec![vec![0u32; c]; c];
        let (mut exact, mut device) = (0usize, 0usize);
        for (s, &p) in test.samples.iter().zip(preds) {
            confusion[s.class][p] += 1;
            exact += usize::from(s.class == p);
            device += usize::from(test.classes[s.class].device_id == test.classes[p].device_id);
        }
        let n = test.samples.len() as f64;
        Ok(AccuracyReport {
            pattern: test.pattern,
            train_batches,
            test_batches: test.batches(),
            samples: test.samples.len(),
            device_accuracy: device as f64 / n,
            embedding_accuracy: exact as f64 / n,
            confusion,
        })
    }
}

/// Baseline: nearest class centroid in standardized space.
pub fn nearest_centroid(train: &FingerprintDataset, test: &FingerprintDataset) -> Result<AccuracyReport> {
    let rows: Vec<&[f64]> = train.samples.iter().map(|s| s.features.as_slice()).collect();
    let st = Standardizer::fit(&rows)?;
    let dim = train.dim();
    let mut sums = vec![vec![0.0; dim]; train.num_classes()];
    let mut counts = vec![0usize; train.num_classes()];
    for s in &train.samples {
        for (a, z) in sums[s.class].iter_mut().zip(st.transform(&s.features)) {
            *a += z;
        }
        counts[s.class] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "class {k} ({}) has no training samples",
            train.classes[k].describe()
        )));
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let preds: Vec<usize> = test
        .samples
        .iter()
        .map(|s| {
            let z = st.transform(&s.features);
            let d: Vec<f64> = centroids
                .iter()
                .map(|c| -c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect();
            argmax(&d)
        })
        .collect();
    AccuracyReport::from_predictions(train.batches(), test, &preds)
}
