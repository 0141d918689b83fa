//! Error-rate estimators for one drive.
//!
//! Per idle length `s`, the schedule determines the spectator's affine
//! Bloch map after `s` steps: the offset `b(s)` from `(⟨w⟩₊ + ⟨w⟩₋)/2` and
//! the linear part `M^s` from the `+w` preparations minus that offset. The
//! per-step generator `log M` is the slope of `log(M^s)` against `s`; its
//! rotation gives the Hamiltonian rates, its contraction the stochastic
//! rates, and the offsets regressed on `Σ_{k<s} M^k` give the affine rates.
//! Correlated pair flips are estimated first from the normalized outcome
//! covariance of same-basis circuits and divided out of the marginals.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::fit::fit_slope;
use super::linalg::matrix_log;
use super::{basis_schedule, DriveSpec, IdtCircuitSpec};
use crate::pauli::{Axis, SignedAxis};
use crate::{Error, Result};

/// Outcome moments of one circuit: per-spectator means of the ±1 outcome and
/// products for adjacent spectator pairs. `shots == None` marks exact
/// (infinite-shot) moments.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitMoments {
    pub shots: Option<u64>,
    pub spectators: Vec<usize>,
    pub means: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub pair_products: Vec<f64>,
}

impl CircuitMoments {
    fn mean_of(&self, q: usize) -> Option<f64> {
        self.spectators.iter().position(|&s| s == q).map(|k| self.means[k])
    }

    fn product_of(&self, pair: (usize, usize)) -> Option<f64> {
        self.pairs.iter().position(|&p| p == pair).map(|k| self.pair_products[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub spec: IdtCircuitSpec,
    pub moments: CircuitMoments,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    HamiltonianX,
    HamiltonianY,
    HamiltonianZ,
    StochasticX,
    StochasticY,
    StochasticZ,
    AffineX,
    AffineY,
    AffineZ,
    PairLambda,
}

impl RateSource {
    /// Fixed order of the nine weight-1 sources.
    pub const WEIGHT1: [RateSource; 9] = [
        RateSource::HamiltonianX,
        RateSource::HamiltonianY,
        RateSource::HamiltonianZ,
        RateSource::StochasticX,
        RateSource::StochasticY,
        RateSource::StochasticZ,
        RateSource::AffineX,
        RateSource::AffineY,
        RateSource::AffineZ,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RateSource::HamiltonianX => "hamiltonian_x",
            RateSource::HamiltonianY => "hamiltonian_y",
            RateSource::HamiltonianZ => "hamiltonian_z",
            RateSource::StochasticX => "stochastic_x",
            RateSource::StochasticY => "stochastic_y",
            RateSource::StochasticZ => "stochastic_z",
            RateSource::AffineX => "affine_x",
            RateSource::AffineY => "affine_y",
            RateSource::AffineZ => "affine_z",
            RateSource::PairLambda => "pair_lambda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        RateSource::WEIGHT1
            .iter()
            .chain(&[RateSource::PairLambda])
            .copied()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::Parse(format!("unknown rate source {s:?}")))
    }

    fn is_nonnegative(self) -> bool {
        matches!(
            self,
            RateSource::StochasticX | RateSource::StochasticY | RateSource::StochasticZ | RateSource::PairLambda
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub source: RateSource,
    pub value: f64,
    pub std_err: f64,
    /// Set when a negative stochastic or pair estimate was raised to zero.
    pub clamped: bool,
}

impl RateEstimate {
    fn new(source: RateSource, raw: f64, std_err: f64) -> Self {
        let clamped = source.is_nonnegative() && raw < 0.0;
        RateEstimate {
            source,
            value: if clamped { 0.0 } else { raw },
            std_err: std_err.max(0.0),
            clamped,
        }
    }
}

/// Every estimate obtainable from one drive's circuits.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveEstimates {
    pub drive: DriveSpec,
    pub qubits: Vec<(usize, [RateEstimate; 9])>,
    pub pairs: Vec<((usize, usize), RateEstimate)>,
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    mean: f64,
    /// Sampling variance of `mean`; `None` for exact moments.
    var: Option<f64>,
}

type CellKey = (SignedAxis, Axis, u32);

fn binomial_var(mean: f64, shots: u64) -> f64 {
    let n = shots as f64;
    ((1.0 - mean * mean) / n).max(1.0 / (n * n))
}

fn check_single_drive(obs: &[Observation]) -> Result<DriveSpec> {
    let first = obs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no observations".into()))?;
    if obs.iter().any(|o| o.spec.drive != first.spec.drive) {
        return Err(Error::InvalidArgument(
            "observations mix several drives".into(),
        ));
    }
    Ok(first.spec.drive)
}

fn cells_for(obs: &[Observation], q: usize) -> Result<BTreeMap<CellKey, Cell>> {
    let mut acc: BTreeMap<CellKey, (f64, f64, Option<u64>)> = BTreeMap::new();
    for o in obs {
        let (Some(mean), Some(&prep), Some(&meas)) =
            (o.moments.mean_of(q), o.spec.prep.get(&q), o.spec.meas.get(&q))
        else {
            continue;
        };
        let weight = o.moments.shots.map_or(1.0, |n| n as f64);
        let entry = acc.entry((prep, meas, o.spec.idle_length)).or_insert((0.0, 0.0, Some(0)));
        entry.0 += weight * mean;
        entry.1 += weight;
        entry.2 = match (entry.2, o.moments.shots) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
    }
    if acc.is_empty() {
        return Err(Error::InvalidArgument(format!("qubit {q} is not a measured spectator")));
    }
    Ok(acc
        .into_iter()
        .map(|(k, (sum, w, shots))| {
            let mean = sum / w;
            (
                k,
                Cell {
                    mean,
                    var: shots.map(|n| binomial_var(mean, n)),
                },
            )
        })
        .collect())
}

fn idle_lengths(cells: &BTreeMap<CellKey, Cell>) -> Vec<u32> {
    let mut s: Vec<u32> = cells.keys().map(|k| k.2).collect();
    s.sort_unstable();
    s.dedup();
    s
}

fn fit_weight(var: Option<f64>) -> f64 {
    var.map_or(1.0, |v| 1.0 / v)
}

/// Correlated flip rate of an adjacent spectator pair.
pub fn estimate_weight2(obs: &[Observation], pair: (usize, usize)) -> Result<RateEstimate> {
    check_single_drive(obs)?;
    let pair = (pair.0.min(pair.1), pair.0.max(pair.1));
    let adjacent = obs.iter().any(|o| o.moments.pairs.contains(&pair));
    if !adjacent {
        return Err(Error::InvalidArgument(format!(
            "({}, {}) is not an adjacent spectator pair",
            pair.0, pair.1
        )));
    }
    // Per idle length: least-squares ratio c² = Σ mᵢmⱼP / Σ P² over
    // same-basis circuits, where P = ⟨wᵢwⱼ⟩ and c = (1 − 2λ)^s.
    let mut per_s: BTreeMap<u32, (f64, f64, f64, bool)> = BTreeMap::new();
    for o in obs {
        let (i, j) = pair;
        let same_basis = |q: usize| match (o.spec.prep.get(&q), o.spec.meas.get(&q)) {
            (Some(p), Some(m)) => p.axis == *m,
            _ => false,
        };
        if !(same_basis(i) && same_basis(j)) {
            continue;
        }
        let (Some(mi), Some(mj), Some(p)) =
            (o.moments.mean_of(i), o.moments.mean_of(j), o.moments.product_of(pair))
        else {
            continue;
        };
        let entry = per_s.entry(o.spec.idle_length).or_insert((0.0, 0.0, 0.0, false));
        entry.0 += mi * mj * p;
        entry.1 += p * p;
        if let Some(n) = o.moments.shots {
            // First-order variance of the ratio contribution.
            let var = binomial_var(mi, n) * mj * mj + binomial_var(mj, n) * mi * mi + binomial_var(p, n);
            entry.2 += var * p * p;
        } else {
            entry.3 = true;
        }
    }
    let mut series = Vec::new();
    let mut exact = false;
    for (&s, &(num, den, var_num, analytic)) in &per_s {
        if den <= 1e-12 {
            continue;
        }
        let c2 = (num / den).clamp(1e-9, 1.0 / 1e-9);
        let y = -0.5 * c2.ln();
        exact |= analytic;
        let weight = if analytic {
            1.0
        } else {
            // var(c²) ≈ var_num / den²; var(y) ≈ var(c²) / (4 c⁴)
            let var_y = (var_num / (den * den)) / (4.0 * c2 * c2);
            1.0 / var_y.max(1e-14)
        };
        series.push((f64::from(s), y, weight));
    }
    if series.len() < 2 {
        return Err(Error::MissingCells(vec![format!(
            "same-basis circuits for pair ({}, {}) at two or more idle lengths",
            pair.0, pair.1
        )]));
    }
    let fit = fit_slope(&series)?;
    let decay = (-fit.slope).exp();
    let lambda = (1.0 - decay) / 2.0;
    let se = if exact { 0.0 } else { decay / 2.0 * fit.slope_std_err };
    Ok(RateEstimate::new(RateSource::PairLambda, lambda, se))
}

/// Nine weight-1 rates of spectator `q` (Hamiltonian, stochastic, affine;
/// x, y, z each).
pub fn estimate_weight1(obs: &[Observation], q: usize) -> Result<[RateEstimate; 9]> {
    check_single_drive(obs)?;
    let incident: Vec<(usize, usize)> = incident_pairs(obs, q);
    let lambdas = incident
        .iter()
        .map(|&p| estimate_weight2(obs, p).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    weight1_with_pairs(obs, q, &lambdas)
}

fn incident_pairs(obs: &[Observation], q: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = obs
        .iter()
        .flat_map(|o| o.moments.pairs.iter().copied())
        .filter(|&(a, b)| a == q || b == q)
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn weight1_with_pairs(obs: &[Observation], q: usize, lambdas: &[f64]) -> Result<[RateEstimate; 9]> {
    let cells = cells_for(obs, q)?;
    let lengths = idle_lengths(&cells);
    let schedule = basis_schedule();
    let missing: Vec<String> = lengths
        .iter()
        .flat_map(|&s| schedule.iter().map(move |&(p, m)| (p, m, s)))
        .filter(|k| !cells.contains_key(k))
        .map(|(p, m, s)| format!("(prep {p}, meas {m}, s={s}) for qubit {q}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    if lengths.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "qubit {q}: need at least two distinct idle lengths"
        )));
    }
    let exact = cells.values().any(|c| c.var.is_none());

    let mut log_series: [[Vec<(f64, f64, f64)>; 3]; 3] = Default::default();
    let mut offsets: Vec<(u32, Vector3<f64>, Vector3<f64>)> = Vec::new();
    for &s in &lengths {
        let flip: f64 = lambdas.iter().map(|l| (1.0 - 2.0 * l).powi(s as i32)).product();
        let cell = |p: SignedAxis, m: Axis| {
            let c = cells[&(p, m, s)];
            (c.mean / flip, c.var.map(|v| v / (flip * flip)))
        };
        let mut b = Vector3::<f64>::zeros();
        let mut b_var = [None; 3];
        for v in Axis::ALL {
            let (plus, vp) = cell(SignedAxis::plus(v), v);
            let (minus, vm) = cell(SignedAxis::minus(v), v);
            b[v.index()] = (plus + minus) / 2.0;
            b_var[v.index()] = vp.zip(vm).map(|(a, c)| (a + c) / 4.0);
        }
        let mut power = Matrix3::<f64>::zeros();
        let mut power_var = [[None; 3]; 3];
        for w in Axis::ALL {
            for v in Axis::ALL {
                let (vi, wi) = (v.index(), w.index());
                if v == w {
                    let (plus, vp) = cell(SignedAxis::plus(w), w);
                    let (minus, vm) = cell(SignedAxis::minus(w), w);
                    power[(vi, wi)] = (plus - minus) / 2.0;
                    power_var[vi][wi] = vp.zip(vm).map(|(a, c)| (a + c) / 4.0);
                } else {
                    let (plus, vp) = cell(SignedAxis::plus(w), v);
                    power[(vi, wi)] = plus - b[vi];
                    power_var[vi][wi] = vp.zip(b_var[vi]).map(|(a, c)| a + c);
                }
            }
        }
        let log = matrix_log(&power).ok_or_else(|| {
            Error::Degenerate(format!("qubit {q}: Bloch map at s={s} has no real logarithm"))
        })?;
        for r in 0..3 {
            for c in 0..3 {
                log_series[r][c].push((f64::from(s), log[(r, c)], fit_weight(power_var[r][c])));
            }
        }
        let bw = Vector3::from_iterator(b_var.iter().map(|v| fit_weight(*v)));
        offsets.push((s, b, bw));
    }

    let mut generator = Matrix3::<f64>::zeros();
    let mut generator_se = Matrix3::<f64>::zeros();
    for r in 0..3 {
        for c in 0..3 {
            let fit = fit_slope(&log_series[r][c])?;
            generator[(r, c)] = fit.slope;
            generator_se[(r, c)] = if exact { 0.0 } else { fit.slope_std_err };
        }
    }

    let step = generator.exp();
    // step = R · diag(d)  ⇒  stepᵀ·step = diag(d²)
    let gram = step.transpose() * step;
    let d = Vector3::new(gram[(0, 0)].sqrt(), gram[(1, 1)].sqrt(), gram[(2, 2)].sqrt());
    let rot = step * Matrix3::from_diagonal(&d.map(|x| if x > 0.0 { 1.0 / x } else { 0.0 }));
    let h = rotation_half_vector(&rot);

    let t = d.map(|x| (1.0 - x) / 2.0);
    let s_rates = Vector3::new(
        (t.y + t.z - t.x) / 2.0,
        (t.x + t.z - t.y) / 2.0,
        (t.x + t.y - t.z) / 2.0,
    );

    // Affine: b(s) = Σ_{k<s} step^k · a, solved by weighted least squares.
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (s, b, w) in &offsets {
        let mut k_sum = Matrix3::<f64>::zeros();
        let mut power = Matrix3::<f64>::identity();
        for _ in 0..*s {
            k_sum += power;
            power *= step;
        }
        let wk = Matrix3::from_diagonal(w);
        normal += k_sum.transpose() * wk * k_sum;
        rhs += k_sum.transpose() * wk * b;
    }
    let normal_inv = normal
        .try_inverse()
        .ok_or_else(|| Error::Degenerate(format!("qubit {q}: affine system is singular")))?;
    let a = normal_inv * rhs;

    let se = |r: usize, c: usize| generator_se[(r, c)];
    let h_se = [
        (se(2, 1).powi(2) + se(1, 2).powi(2)).sqrt() / 4.0,
        (se(0, 2).powi(2) + se(2, 0).powi(2)).sqrt() / 4.0,
        (se(1, 0).powi(2) + se(0, 1).powi(2)).sqrt() / 4.0,
    ];
    let s_se = ((se(0, 0).powi(2) + se(1, 1).powi(2) + se(2, 2).powi(2)).sqrt()) / 4.0;
    let a_se = |i: usize| if exact { 0.0 } else { normal_inv[(i, i)].max(0.0).sqrt() };

    let values = [h.x, h.y, h.z, s_rates.x, s_rates.y, s_rates.z, a.x, a.y, a.z];
    let errors = [h_se[0], h_se[1], h_se[2], s_se, s_se, s_se, a_se(0), a_se(1), a_se(2)];
    let mut out = [RateEstimate::new(RateSource::HamiltonianX, 0.0, 0.0); 9];
    for (k, source) in RateSource::WEIGHT1.iter().enumerate() {
        if !values[k].is_finite() {
            return Err(Error::Degenerate(format!("qubit {q}: non-finite {}", source.label())));
        }
        out[k] = RateEstimate::new(*source, values[k], errors[k]);
    }
    Ok(out)
}

/// Half the rotation vector of (approximately orthogonal) `rot`: the
/// Hamiltonian rates for a rotation by `2|h|` about `h`.
fn rotation_half_vector(rot: &Matrix3<f64>) -> Vector3<f64> {
    let v = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    ) / 2.0;
    let sin = v.norm();
    if sin == 0.0 {
        return Vector3::zeros();
    }
    let cos = (rot.trace() - 1.0) / 2.0;
    let angle = sin.atan2(cos);
    v / sin * (angle / 2.0)
}

/// All weight-1 estimates for every spectator and weight-2 estimates for
/// every adjacent spectator pair of one drive.
pub fn estimate_drive(obs: &[Observation]) -> Result<DriveEstimates> {
    let drive = check_single_drive(obs)?;
    let mut spectators: Vec<usize> = obs
        .iter()
        .flat_map(|o| o.moments.spectators.iter().copied())
        .collect();
    spectators.sort_unstable();
    spectators.dedup();
    let mut pairs: Vec<(usize, usize)> = obs
        .iter()
        .flat_map(|o| o.moments.pairs.iter().copied())
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let pair_estimates = pairs
        .iter()
        .map(|&p| estimate_weight2(obs, p).map(|e| (p, e)))
        .collect::<Result<Vec<_>>>()?;
    let qubits = spectators
        .iter()
        .map(|&q| {
            let lambdas: Vec<f64> = pair_estimates
                .iter()
                .filter(|((a, b), _)| *a == q || *b == q)
                .map(|(_, e)| e.value)
                .collect();
            weight1_with_pairs(obs, q, &lambdas).map(|r| (q, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriveEstimates {
        drive,
        qubits,
        pairs: pair_estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idt::{generate_experiments, IdtConfig};
    use crate::noisesim::{
        batch_params, generate_device_model, observe, BatchParams, DriftConfig, ErrorModel, NoiseConfig,
    };
    use crate::topology::{canonical_topology, DeviceKind, DeviceTopology};
    use proptest::prelude::*;

    fn l5() -> DeviceTopology {
        canonical_topology(DeviceKind::L5, "d0")
    }

    fn params(model: ErrorModel) -> BatchParams {
        BatchParams {
            device_id: model.device_id.clone(),
            batch_index: 0,
            calibrated: false,
            rates: model,
        }
    }

    fn observations(p: &BatchParams, device: &DeviceTopology, drive: DriveSpec, shots: Option<u64>, seed: u64) -> Vec<Observation> {
        generate_experiments(device, &IdtConfig::default())
            .unwrap()
            .into_iter()
            .filter(|c| c.drive == drive)
            .enumerate()
            .map(|(i, spec)| observe(p, &spec, shots, seed ^ (i as u64) << 20).unwrap())
            .collect()
    }

    fn value(est: &[RateEstimate; 9], source: RateSource) -> f64 {
        est.iter().find(|e| e.source == source).unwrap().value
    }

    #[test]
    fn noiseless_estimates_vanish() {
        let p = params(ErrorModel::zero(&l5(), 2.3));
        let obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
        let est = estimate_drive(&obs).unwrap();
        assert_eq!(est.qubits.len(), 4);
        assert_eq!(est.pairs.len(), 3);
        for (_, rates) in &est.qubits {
            assert!(rates.iter().all(|r| r.value.abs() < 1e-12));
        }
        assert!(est.pairs.iter().all(|(_, r)| r.value.abs() < 1e-12));
    }

    #[test]
    fn pure_hamiltonian_rate_is_recovered() {
        let mut m = ErrorModel::zero(&l5(), 2.3);
        m.ambient[2].h = [0.0, 0.0, 0.01];
        let p = params(m);
        let obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
        let est = estimate_weight1(&obs, 2).unwrap();
        let hz = value(&est, RateSource::HamiltonianZ);
        assert!((0.0095..=0.0105).contains(&hz), "{hz}");
        assert!(value(&est, RateSource::HamiltonianX).abs() < 1e-10);
    }

    #[test]
    fn analytic_estimates_match_ground_truth() {
        for seed in 0..10 {
            let device = l5();
            let model = generate_device_model(&device, &NoiseConfig::default(), seed);
            let p = batch_params(&model, 0, &DriftConfig::default(), seed);
            for drive in DriveSpec::all_for(&device) {
                let obs = observations(&p, &device, drive, None, 0);
                if obs.is_empty() {
                    continue;
                }
                let est = estimate_drive(&obs).unwrap();
                for (q, rates) in &est.qubits {
                    let truth = p.rates.effective_rates(&drive, *q);
                    let expect = [
                        truth.h[0], truth.h[1], truth.h[2], truth.s[0], truth.s[1], truth.s[2], truth.a[0],
                        truth.a[1], truth.a[2],
                    ];
                    for (r, t) in rates.iter().zip(expect) {
                        assert!((r.value - t).abs() < 5e-4, "{drive} q{q} {}: {} vs {t}", r.source.label(), r.value);
                    }
                }
                for (pair, r) in &est.pairs {
                    let t = p.rates.effective_lambda(&drive, *pair);
                    assert!((r.value - t).abs() < 1e-9, "{drive} {pair:?}: {} vs {t}", r.value);
                }
            }
        }
    }

    #[test]
    fn stochastic_rates_are_recovered() {
        let mut m = ErrorModel::zero(&l5(), 2.3);
        m.ambient[4].s = [0.004, 0.002, 0.001];
        let p = params(m);
        let obs = observations(&p, &l5(), DriveSpec::ControlPair, None, 0);
        let est = estimate_weight1(&obs, 4).unwrap();
        let k = 2.3;
        for (src, t) in [(RateSource::StochasticX, 0.004), (RateSource::StochasticY, 0.002), (RateSource::StochasticZ, 0.001)] {
            assert!((value(&est, src) - k * t).abs() < 5e-4);
        }
    }

    fn lambda_model(lambda: f64) -> BatchParams {
        let mut m = ErrorModel::zero(&l5(), 2.3);
        m.ambient.iter_mut().for_each(|r| r.s = [0.001, 0.001, 0.002]);
        m.pair_ambient.iter_mut().find(|p| p.pair == (2, 3)).unwrap().lambda = lambda;
        params(m)
    }

    #[test]
    fn analytic_lambda_is_recovered() {
        let p = lambda_model(0.004);
        let obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
        let est = estimate_weight2(&obs, (2, 3)).unwrap();
        assert!((0.0036..=0.0044).contains(&est.value), "{}", est.value);
        assert_eq!(estimate_weight2(&obs, (3, 2)).unwrap(), est);
    }

    #[test]
    fn null_lambda_is_within_noise() {
        let p = lambda_model(0.0);
        let obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, Some(2048), 17);
        let est = estimate_weight2(&obs, (2, 3)).unwrap();
        assert!(est.value <= 2.0 * est.std_err, "{est:?}");
        assert!(est.std_err > 0.0);
    }

    #[test]
    fn sampled_lambda_median_error() {
        let p = lambda_model(0.004);
        let mut errors: Vec<f64> = (0..100)
            .map(|seed| {
                let obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, Some(2048), seed);
                (estimate_weight2(&obs, (2, 3)).unwrap().value - 0.004).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[50] <= 1.5e-3, "median {}", errors[50]);
    }

    #[test]
    fn non_adjacent_pair_is_rejected() {
        let p = lambda_model(0.0);
        let obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
        assert!(matches!(estimate_weight2(&obs, (1, 3)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn missing_cells_are_listed() {
        let p = lambda_model(0.0);
        let mut obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
        obs.retain(|o| !(o.spec.idle_length == 4 && o.spec.meas[&1] == Axis::Y && o.spec.prep[&1] == SignedAxis::plus(Axis::X)));
        match estimate_weight1(&obs, 1) {
            Err(Error::MissingCells(cells)) => {
                assert_eq!(cells.len(), 1);
                assert!(cells[0].contains("s=4"), "{cells:?}");
            }
            other => panic!("{other:?}"),
        }
        assert!(estimate_weight1(&obs, 0).is_err());
    }

    #[test]
    fn mixed_drives_are_rejected() {
        let p = lambda_model(0.0);
        let mut obs = observations(&p, &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
        obs.extend(observations(&p, &l5(), DriveSpec::ControlSingle, None, 0));
        assert!(estimate_drive(&obs).is_err());
        assert!(estimate_drive(&[]).is_err());
    }

    #[test]
    fn schedule_covers_every_device_kind() {
        for kind in [DeviceKind::L5, DeviceKind::T5, DeviceKind::H7] {
            let device = canonical_topology(kind, "d");
            let p = params(ErrorModel::zero(&device, 2.3));
            for drive in DriveSpec::all_for(&device) {
                let obs = observations(&p, &device, drive, None, 0);
                let est = estimate_drive(&obs).unwrap();
                let spectators = (0..device.num_qubits).filter(|q| !drive.drives(*q)).count();
                assert_eq!(est.qubits.len(), spectators, "{kind:?} {drive}");
            }
        }
    }

    #[test]
    fn control_drives_agree_without_crosstalk() {
        let config = NoiseConfig {
            decay: 0.0,
            ..NoiseConfig::default()
        };
        let device = l5();
        let p = params(generate_device_model(&device, &config, 3));
        let single = estimate_drive(&observations(&p, &device, DriveSpec::ControlSingle, None, 0)).unwrap();
        let driven = estimate_drive(&observations(&p, &device, DriveSpec::Single { qubit: 0 }, None, 0)).unwrap();
        for (q, rates) in &driven.qubits {
            let control = &single.qubits.iter().find(|(c, _)| c == q).unwrap().1;
            for (a, b) in rates.iter().zip(control) {
                assert!((a.value - b.value).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn hamiltonian_sign_is_antisymmetric(hx in -0.02f64..0.02, hy in -0.02f64..0.02, hz in -0.02f64..0.02) {
            let run = |sign: f64| {
                let mut m = ErrorModel::zero(&l5(), 2.3);
                m.ambient[3].h = [sign * hx, sign * hy, sign * hz];
                m.ambient[3].s = [0.001, 0.002, 0.001];
                let obs = observations(&params(m), &l5(), DriveSpec::Single { qubit: 0 }, None, 0);
                estimate_weight1(&obs, 3).unwrap()
            };
            let (pos, neg) = (run(1.0), run(-1.0));
            for k in 0..3 {
                prop_assert!((pos[k].value + neg[k].value).abs() < 1e-10);
            }
            for k in 3..9 {
                prop_assert!((pos[k].value - neg[k].value).abs() < 1e-10);
            }
        }
    }
}
