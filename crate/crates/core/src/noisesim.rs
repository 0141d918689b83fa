//! Ground-truth error models and exact outcome sampling for idle-tomography
//! circuits on the simulated fleet.
//!
//! Each spectator qubit evolves under a per-step Bloch map
//! `r ← R(2h)·diag(d)·r + a` with `d_w = 1 − 2(s_u + s_v)`. Adjacent spectator
//! pairs additionally suffer correlated events that flip both outcome signs
//! with probability `λ` per step. Rates are ambient plus drive-dependent
//! crosstalk, scaled by the step duration of the drive.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::idt::{CircuitMoments, DriveSpec, IdtCircuitSpec, Observation};
use crate::pauli::{Axis, SignedAxis};
use crate::topology::{DeviceTopology, Fleet, QubitGraph};
use crate::{seed, Error, Result};

pub const MAX_STOCHASTIC: f64 = 0.25;
pub const MAX_STOCHASTIC_SUM: f64 = 0.5;
pub const MAX_AFFINE: f64 = 0.05;
pub const MAX_LAMBDA: f64 = 0.1;
pub const MAX_HAMILTONIAN: f64 = 0.1;

/// Largest affine magnitude allowed relative to the weakest contraction,
/// `|a| ≤ margin · (1 − max_w d_w)`. Keeps `σ_max(M) + |a| ≤ 1`.
const AFFINE_MARGIN_DRAW: f64 = 0.6;
const AFFINE_MARGIN_HARD: f64 = 0.95;

/// Weight-1 error rates of one qubit per unit step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QubitRates {
    pub h: [f64; 3],
    pub s: [f64; 3],
    pub a: [f64; 3],
}

impl QubitRates {
    pub const ZERO: QubitRates = QubitRates {
        h: [0.0; 3],
        s: [0.0; 3],
        a: [0.0; 3],
    };

    pub fn add(&self, other: &QubitRates) -> QubitRates {
        let mut out = *self;
        for i in 0..3 {
            out.h[i] += other.h[i];
            out.s[i] += other.s[i];
            out.a[i] += other.a[i];
        }
        out
    }

    pub fn scale(&self, k: f64) -> QubitRates {
        QubitRates {
            h: self.h.map(|x| x * k),
            s: self.s.map(|x| x * k),
            a: self.a.map(|x| x * k),
        }
    }

    /// Diagonal contraction factors `d_w = 1 − 2(s_u + s_v)`.
    pub fn contraction(&self) -> [f64; 3] {
        let [sx, sy, sz] = self.s;
        [1.0 - 2.0 * (sy + sz), 1.0 - 2.0 * (sx + sz), 1.0 - 2.0 * (sx + sy)]
    }

    /// Linear part and offset of the per-step Bloch map.
    pub fn bloch_map(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let d = self.contraction();
        let m = rotation(Vector3::from(self.h) * 2.0) * Matrix3::from_diagonal(&Vector3::from(d));
        (m, Vector3::from(self.a))
    }

    /// Pulls the affine shift back inside `margin · (1 − max d)` so the map
    /// stays a contraction of the Bloch ball.
    fn project_affine(&mut self, margin: f64) {
        let d = self.contraction();
        let slack = (1.0 - d.iter().copied().fold(f64::MIN, f64::max)).max(0.0);
        let norm = self.a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let limit = margin * slack;
        if norm > limit {
            let k = if norm > 0.0 { limit / norm } else { 0.0 };
            self.a = self.a.map(|x| x * k);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.h.iter().chain(&self.s).chain(&self.a).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("non-finite rate".into()));
        }
        if self.s.iter().any(|&x| !(0.0..=MAX_STOCHASTIC).contains(&x))
            || self.s.iter().sum::<f64>() > MAX_STOCHASTIC_SUM
        {
            return Err(Error::Config(format!("stochastic rates out of range: {:?}", self.s)));
        }
        if self.a.iter().any(|x| x.abs() > MAX_AFFINE) {
            return Err(Error::Config(format!("affine rates out of range: {:?}", self.a)));
        }
        if !self.is_contraction() {
            return Err(Error::Config(format!("rates do not define a contraction: {self:?}")));
        }
        Ok(())
    }

    /// Sufficient condition for the Bloch map to send the unit ball into
    /// itself: `σ_max(M) + |a| ≤ 1`. `M = R·diag(d)` so `σ_max = max |d_w|`.
    pub fn is_contraction(&self) -> bool {
        let d = self.contraction();
        let sigma = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let norm = self.a.iter().map(|x| x * x).sum::<f64>().sqrt();
        sigma + norm <= 1.0 + 1e-12
    }
}

/// Rotation by angle `|v|` about `v/|v|` (Rodrigues).
pub fn rotation(v: Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let n = v / theta;
    let k = Matrix3::new(0.0, -n.z, n.y, n.z, 0.0, -n.x, -n.y, n.x, 0.0);
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Physical element a drive acts on; crosstalk is keyed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveElement {
    Qubit(usize),
    Coupling(usize, usize),
}

impl DriveElement {
    pub fn of(drive: &DriveSpec) -> Option<DriveElement> {
        match *drive {
            DriveSpec::Single { qubit } => Some(DriveElement::Qubit(qubit)),
            DriveSpec::Pair { control, target } => {
                Some(DriveElement::Coupling(control.min(target), control.max(target)))
            }
            DriveSpec::ControlSingle | DriveSpec::ControlPair => None,
        }
    }

    fn qubits(self) -> Vec<usize> {
        match self {
            DriveElement::Qubit(q) => vec![q],
            DriveElement::Coupling(a, b) => vec![a, b],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRate {
    pub pair: (usize, usize),
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkEntry {
    pub drive: DriveElement,
    pub qubit: usize,
    pub rates: QubitRates,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCrosstalkEntry {
    pub drive: DriveElement,
    pub pair: (usize, usize),
    pub lambda: f64,
}

/// Ground-truth error generator rates of one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub device_id: String,
    pub duration_ratio: f64,
    pub ambient: Vec<QubitRates>,
    pub pair_ambient: Vec<PairRate>,
    pub crosstalk: Vec<CrosstalkEntry>,
    pub pair_crosstalk: Vec<PairCrosstalkEntry>,
}

impl ErrorModel {
    /// Noiseless model of a device: every rate zero, one pair entry per
    /// coupling and one crosstalk entry per (drive element, spectator).
    pub fn zero(device: &DeviceTopology, duration_ratio: f64) -> Self {
        generate_device_model(
            device,
            &NoiseConfig {
                duration_ratio,
                ..NoiseConfig::noiseless()
            },
            0,
        )
    }

    pub fn num_qubits(&self) -> usize {
        self.ambient.len()
    }

    pub fn is_coupling(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.pair_ambient.iter().any(|p| p.pair == key)
    }

    fn crosstalk_for(&self, drive: DriveElement, qubit: usize) -> QubitRates {
        self.crosstalk
            .iter()
            .find(|c| c.drive == drive && c.qubit == qubit)
            .map(|c| c.rates)
            .unwrap_or_default()
    }

    fn pair_crosstalk_for(&self, drive: DriveElement, pair: (usize, usize)) -> f64 {
        self.pair_crosstalk
            .iter()
            .find(|c| c.drive == drive && c.pair == pair)
            .map_or(0.0, |c| c.lambda)
    }

    /// Step duration of a drive in single-qubit step units.
    pub fn duration(&self, drive: &DriveSpec) -> f64 {
        if drive.is_two_qubit() {
            self.duration_ratio
        } else {
            1.0
        }
    }

    /// Composed per-step rates felt by `qubit` while `drive` runs.
    pub fn effective_rates(&self, drive: &DriveSpec, qubit: usize) -> QubitRates {
        let mut rates = self.ambient[qubit];
        if let Some(el) = DriveElement::of(drive) {
            rates = rates.add(&self.crosstalk_for(el, qubit));
        }
        rates.scale(self.duration(drive))
    }

    /// Composed per-step correlated-flip probability of an adjacent pair.
    pub fn effective_lambda(&self, drive: &DriveSpec, pair: (usize, usize)) -> f64 {
        let key = (pair.0.min(pair.1), pair.0.max(pair.1));
        let base = self
            .pair_ambient
            .iter()
            .find(|p| p.pair == key)
            .map_or(0.0, |p| p.lambda);
        let xt = DriveElement::of(drive).map_or(0.0, |el| self.pair_crosstalk_for(el, key));
        (base + xt) * self.duration(drive)
    }

    /// Checks that every composed per-step rate is a valid channel.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_qubits();
        let mut drives = vec![DriveSpec::ControlSingle, DriveSpec::ControlPair];
        drives.extend((0..n).map(|qubit| DriveSpec::Single { qubit }));
        drives.extend(self.pair_ambient.iter().map(|p| DriveSpec::Pair {
            control: p.pair.0,
            target: p.pair.1,
        }));
        for drive in &drives {
            for q in (0..n).filter(|q| !drive.drives(*q)) {
                self.effective_rates(drive, q).validate()?;
            }
            for p in &self.pair_ambient {
                let lambda = self.effective_lambda(drive, p.pair);
                if !(0.0..=MAX_LAMBDA).contains(&lambda) {
                    return Err(Error::Config(format!("pair rate {lambda} out of range")));
                }
            }
        }
        Ok(())
    }
}

/// A closed interval of rate magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRange {
    pub min: f64,
    pub max: f64,
}

impl RateRange {
    pub const fn new(min: f64, max: f64) -> Self {
        RateRange { min, max }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.max <= self.min {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    fn draw_signed(&self, rng: &mut impl Rng) -> f64 {
        let v = self.draw(rng);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min < 0.0 || self.max < self.min {
            return Err(Error::Config(format!(
                "{name} range must satisfy 0 ≤ min ≤ max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Rate distributions for one source of error (ambient, or crosstalk at
/// unit distance before decay).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDistribution {
    /// Magnitude of each Hamiltonian component; sign is uniform.
    pub hamiltonian: RateRange,
    pub stochastic: RateRange,
    /// Magnitude of each affine component; sign is uniform.
    pub affine: RateRange,
    pub pair: RateRange,
}

impl RateDistribution {
    fn check(&self, prefix: &str) -> Result<()> {
        self.hamiltonian.check(&format!("{prefix}.hamiltonian"))?;
        self.stochastic.check(&format!("{prefix}.stochastic"))?;
        self.affine.check(&format!("{prefix}.affine"))?;
        self.pair.check(&format!("{prefix}.pair"))
    }

    fn draw_qubit(&self, rng: &mut impl Rng, scale: f64) -> QubitRates {
        let mut r = QubitRates::ZERO;
        for i in 0..3 {
            r.h[i] = self.hamiltonian.draw_signed(rng) * scale;
        }
        for i in 0..3 {
            r.s[i] = self.stochastic.draw(rng) * scale;
        }
        for i in 0..3 {
            r.a[i] = self.affine.draw_signed(rng) * scale;
        }
        r.project_affine(AFFINE_MARGIN_DRAW);
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub ambient: RateDistribution,
    /// Crosstalk increment distribution before distance decay.
    pub crosstalk: RateDistribution,
    /// Crosstalk at hop distance `d` is scaled by `decay^d`.
    pub decay: f64,
    /// Two-qubit drive step duration over single-qubit step duration.
    pub duration_ratio: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            ambient: RateDistribution {
                hamiltonian: RateRange::new(0.001, 0.02),
                stochastic: RateRange::new(0.0005, 0.01),
                affine: RateRange::new(0.001, 0.02),
                pair: RateRange::new(0.0005, 0.005),
            },
            crosstalk: RateDistribution {
                hamiltonian: RateRange::new(0.001, 0.02),
                stochastic: RateRange::new(0.0005, 0.01),
                affine: RateRange::new(0.0005, 0.004),
                pair: RateRange::new(0.0005, 0.005),
            },
            decay: 0.4,
            duration_ratio: 2.3,
        }
    }
}

impl NoiseConfig {
    /// All rates zero.
    pub fn noiseless() -> Self {
        let zero = RateRange::new(0.0, 0.0);
        let dist = RateDistribution {
            hamiltonian: zero,
            stochastic: zero,
            affine: zero,
            pair: zero,
        };
        NoiseConfig {
            ambient: dist,
            crosstalk: dist,
            ..Default::default()
        }
    }

    /// Rejects configurations whose worst-case composed rates could leave
    /// the valid ranges of a per-step channel.
    pub fn validate(&self) -> Result<()> {
        self.ambient.check("ambient")?;
        self.crosstalk.check("crosstalk")?;
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!("decay must lie in [0, 1), got {}", self.decay)));
        }
        if !(self.duration_ratio.is_finite() && self.duration_ratio > 0.0) {
            return Err(Error::Config("duration_ratio must be positive".into()));
        }
        let k = self.duration_ratio.max(1.0);
        let worst = |f: fn(&RateDistribution) -> RateRange| {
            (f(&self.ambient).max + f(&self.crosstalk).max * self.decay) * k
        };
        let checks = [
            (worst(|d| d.hamiltonian), MAX_HAMILTONIAN, "hamiltonian"),
            (worst(|d| d.stochastic), MAX_STOCHASTIC, "stochastic"),
            (3.0 * worst(|d| d.stochastic), MAX_STOCHASTIC_SUM, "stochastic sum"),
            (worst(|d| d.affine), MAX_AFFINE, "affine"),
            (worst(|d| d.pair), MAX_LAMBDA, "pair"),
        ];
        for (value, limit, name) in checks {
            if value > limit {
                return Err(Error::Config(format!(
                    "worst-case composed {name} rate {value:.4} exceeds {limit}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws an independent error model for every fleet device.
pub fn generate_fleet_model(fleet: &Fleet, config: &NoiseConfig, seed: u64) -> Result<Vec<ErrorModel>> {
    config.validate()?;
    fleet
        .devices
        .iter()
        .enumerate()
        .map(|(i, device)| {
            let s = seed::derive_path(seed, &[("fleet", fleet.fleet_seed), ("device", i as u64)]);
            let model = generate_device_model(device, config, s);
            model.validate()?;
            Ok(model)
        })
        .collect()
}

pub fn generate_device_model(device: &DeviceTopology, config: &NoiseConfig, seed: u64) -> ErrorModel {
    let mut rng = seed::rng(seed);
    let n = device.num_qubits;
    let dist = device.distances();
    let ambient: Vec<QubitRates> = (0..n).map(|_| config.ambient.draw_qubit(&mut rng, 1.0)).collect();
    let pair_ambient: Vec<PairRate> = device
        .couplings
        .iter()
        .map(|&pair| PairRate {
            pair,
            lambda: config.ambient.pair.draw(&mut rng),
        })
        .collect();

    let elements: Vec<DriveElement> = (0..n)
        .map(DriveElement::Qubit)
        .chain(device.couplings.iter().map(|&(a, b)| DriveElement::Coupling(a, b)))
        .collect();
    let mut crosstalk = Vec::new();
    let mut pair_crosstalk = Vec::new();
    for &el in &elements {
        let driven = el.qubits();
        let hop = |q: usize| driven.iter().map(|&d| dist[d][q]).min().unwrap_or(0);
        for q in (0..n).filter(|q| !driven.contains(q)) {
            let scale = config.decay.powi(hop(q) as i32);
            crosstalk.push(CrosstalkEntry {
                drive: el,
                qubit: q,
                rates: config.crosstalk.draw_qubit(&mut rng, scale),
            });
        }
        for &pair in device
            .couplings
            .iter()
            .filter(|(a, b)| !driven.contains(a) && !driven.contains(b))
        {
            let scale = config.decay.powi(hop(pair.0).min(hop(pair.1)) as i32);
            pair_crosstalk.push(PairCrosstalkEntry {
                drive: el,
                pair,
                lambda: config.crosstalk.pair.draw(&mut rng) * scale,
            });
        }
    }
    ErrorModel {
        device_id: device.device_id.clone(),
        duration_ratio: config.duration_ratio,
        ambient,
        pair_ambient,
        crosstalk,
        pair_crosstalk,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Log-normal scale of the independent per-rate, per-batch multiplier.
    pub sigma: f64,
    /// Probability that a batch follows a calibration event on a device.
    pub calibration_probability: f64,
    /// Log-normal scale of the extra multiplier applied after calibration.
    pub calibration_scale: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            sigma: 0.05,
            calibration_probability: 0.1,
            calibration_scale: 0.1,
        }
    }
}

impl DriftConfig {
    pub fn none() -> Self {
        DriftConfig {
            sigma: 0.0,
            calibration_probability: 0.0,
            calibration_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma.is_finite()
            && self.sigma >= 0.0
            && (0.0..=1.0).contains(&self.calibration_probability)
            && self.calibration_scale.is_finite()
            && self.calibration_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid drift config {self:?}")))
        }
    }
}

/// Error model of one device as seen during one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchParams {
    pub device_id: String,
    pub batch_index: u32,
    pub calibrated: bool,
    pub rates: ErrorModel,
}

/// Mean-one log-normal multiplier `exp(σz − σ²/2)`.
fn lognormal_multiplier(rng: &mut impl Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// Applies independent per-rate multiplicative jitter for one batch.
pub fn batch_params(model: &ErrorModel, batch_index: u32, drift: &DriftConfig, seed: u64) -> BatchParams {
    let stream = seed::derive(seed, &format!("drift:{}", model.device_id), u64::from(batch_index));
    let mut rng = seed::rng(stream);
    let calibrated = drift.calibration_probability > 0.0 && rng.random_bool(drift.calibration_probability);
    let mut jitter = |x: f64| {
        let mut k = lognormal_multiplier(&mut rng, drift.sigma);
        if calibrated {
            k *= lognormal_multiplier(&mut rng, drift.calibration_scale);
        }
        x * k
    };
    let mut jitter_rates = |r: &QubitRates| {
        let mut out = QubitRates {
            h: r.h.map(&mut jitter),
            s: r.s.map(&mut jitter),
            a: r.a.map(&mut jitter),
        };
        out.project_affine(AFFINE_MARGIN_HARD);
        out
    };
    let ambient = model.ambient.iter().map(&mut jitter_rates).collect();
    let crosstalk = model
        .crosstalk
        .iter()
        .map(|c| CrosstalkEntry {
            rates: jitter_rates(&c.rates),
            ..*c
        })
        .collect();
    let pair_ambient = model
        .pair_ambient
        .iter()
        .map(|p| PairRate {
            pair: p.pair,
            lambda: jitter(p.lambda),
        })
        .collect();
    let pair_crosstalk = model
        .pair_crosstalk
        .iter()
        .map(|p| PairCrosstalkEntry {
            lambda: jitter(p.lambda),
            ..*p
        })
        .collect();
    BatchParams {
        device_id: model.device_id.clone(),
        batch_index,
        calibrated,
        rates: ErrorModel {
            device_id: model.device_id.clone(),
            duration_ratio: model.duration_ratio,
            ambient,
            pair_ambient,
            crosstalk,
            pair_crosstalk,
        },
    }
}

/// Bloch component along `meas` after `steps` applications of the per-step
/// map, starting from the `prep` eigenstate. Excludes correlated pair flips.
pub fn expectation(
    params: &BatchParams,
    qubit: usize,
    prep: SignedAxis,
    meas: Axis,
    drive: &DriveSpec,
    steps: u32,
) -> Result<f64> {
    if qubit >= params.rates.num_qubits() {
        return Err(Error::InvalidArgument(format!(
            "qubit {qubit} outside device {}",
            params.device_id
        )));
    }
    if drive.drives(qubit) {
        return Err(Error::InvalidArgument(format!("qubit {qubit} is driven, not a spectator")));
    }
    let (m, a) = params.rates.effective_rates(drive, qubit).bloch_map();
    let mut r = Vector3::from(prep.bloch());
    for _ in 0..steps {
        r = m * r + a;
    }
    Ok(r[meas.index()])
}

/// Outcome-sign correlations of a circuit: per-spectator means before pair
/// flips and per-pair flip probabilities over the whole idle sequence.
struct CircuitLaw {
    spectators: Vec<usize>,
    own_means: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    /// Index pairs into `spectators`.
    pair_slots: Vec<(usize, usize)>,
    /// Survival factor `(1 − 2λ)^s` of each pair.
    survival: Vec<f64>,
}

fn circuit_law(params: &BatchParams, spec: &IdtCircuitSpec) -> Result<CircuitLaw> {
    check_spec(params, spec)?;
    let spectators: Vec<usize> = spec.meas.keys().copied().collect();
    let own_means = spectators
        .iter()
        .map(|&q| expectation(params, q, spec.prep[&q], spec.meas[&q], &spec.drive, spec.idle_length))
        .collect::<Result<Vec<_>>>()?;
    let (pairs, pair_slots): (Vec<_>, Vec<_>) = params
        .rates
        .pair_ambient
        .iter()
        .filter_map(|p| {
            let i = spectators.iter().position(|&q| q == p.pair.0)?;
            let j = spectators.iter().position(|&q| q == p.pair.1)?;
            Some((p.pair, (i, j)))
        })
        .unzip();
    let survival = pairs
        .iter()
        .map(|&p| (1.0 - 2.0 * params.rates.effective_lambda(&spec.drive, p)).powi(spec.idle_length as i32))
        .collect();
    Ok(CircuitLaw {
        spectators,
        own_means,
        pairs,
        pair_slots,
        survival,
    })
}

fn check_spec(params: &BatchParams, spec: &IdtCircuitSpec) -> Result<()> {
    let mismatch = |reason: String| Error::DeviceMismatch {
        circuit_id: spec.circuit_id.clone(),
        device_id: params.device_id.clone(),
        reason,
    };
    if spec.device_id != params.device_id {
        return Err(mismatch(format!("circuit targets {}", spec.device_id)));
    }
    let n = params.rates.num_qubits();
    if let DriveSpec::Pair { control, target } = spec.drive {
        if !params.rates.is_coupling(control, target) {
            return Err(mismatch(format!("no coupling ({control}, {target})")));
        }
    }
    if let DriveSpec::Single { qubit } = spec.drive {
        if qubit >= n {
            return Err(mismatch(format!("no qubit {qubit}")));
        }
    }
    let expected: Vec<usize> = (0..n).filter(|q| !spec.drive.drives(*q)).collect();
    let prep: Vec<usize> = spec.prep.keys().copied().collect();
    let meas: Vec<usize> = spec.meas.keys().copied().collect();
    if prep != expected || meas != expected {
        return Err(mismatch("spectator set differs from undriven qubits".into()));
    }
    Ok(())
}

/// Exact outcome moments of a circuit (infinite-shot limit).
pub fn analytic_moments(params: &BatchParams, spec: &IdtCircuitSpec) -> Result<CircuitMoments> {
    let law = circuit_law(params, spec)?;
    let flip_product = |slot: usize, skip: Option<usize>| -> f64 {
        law.pair_slots
            .iter()
            .zip(&law.survival)
            .enumerate()
            .filter(|&(e, ((i, j), _))| Some(e) != skip && (*i == slot || *j == slot))
            .map(|(_, (_, c))| c)
            .product()
    };
    let means = (0..law.spectators.len())
        .map(|k| law.own_means[k] * flip_product(k, None))
        .collect();
    let pair_products = law
        .pair_slots
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            law.own_means[i] * law.own_means[j] * flip_product(i, Some(e)) * flip_product(j, Some(e))
        })
        .collect();
    Ok(CircuitMoments {
        shots: None,
        spectators: law.spectators,
        means,
        pairs: law.pairs,
        pair_products,
    })
}

/// Moments of one circuit, either exact (`shots == None`) or from
/// `shots` sampled outcomes.
pub fn observe(params: &BatchParams, spec: &IdtCircuitSpec, shots: Option<u64>, seed: u64) -> Result<Observation> {
    let moments = match shots {
        None => analytic_moments(params, spec)?,
        Some(n) => simulate_counts(params, spec, n, seed)?.moments(spec, &params.rates)?,
    };
    Ok(Observation {
        spec: spec.clone(),
        moments,
    })
}

/// Sampled shot counts of one circuit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub circuit_id: String,
    pub shots: u64,
    /// Spectator outcomes in ascending qubit order; `0` is the `+1`
    /// eigenvalue of the measured Pauli, `1` the `−1` eigenvalue.
    pub counts: BTreeMap<String, u64>,
}

/// Exact joint distribution over spectator outcome patterns; bit `k` of the
/// index is set when spectator `k` reads `−1`.
fn joint_pmf(law: &CircuitLaw) -> Vec<f64> {
    let k = law.spectators.len();
    let e = law.pair_slots.len();
    let p_plus: Vec<f64> = law.own_means.iter().map(|m| ((1.0 + m) / 2.0).clamp(0.0, 1.0)).collect();
    let p_flip: Vec<f64> = law.survival.iter().map(|c| ((1.0 - c) / 2.0).clamp(0.0, 1.0)).collect();
    let mut pmf = vec![0.0; 1 << k];
    for flips in 0..(1usize << e) {
        let mut weight = 1.0;
        let mut parity = 0usize;
        for (bit, &(i, j)) in law.pair_slots.iter().enumerate() {
            if flips >> bit & 1 == 1 {
                weight *= p_flip[bit];
                parity ^= (1 << i) | (1 << j);
            } else {
                weight *= 1.0 - p_flip[bit];
            }
        }
        if weight == 0.0 {
            continue;
        }
        for (outcome, slot) in pmf.iter_mut().enumerate() {
            let own = outcome ^ parity;
            let p: f64 = (0..k)
                .map(|q| if own >> q & 1 == 0 { p_plus[q] } else { 1.0 - p_plus[q] })
                .product();
            *slot += weight * p;
        }
    }
    pmf
}

fn bitstring(outcome: usize, k: usize) -> String {
    (0..k).map(|q| if outcome >> q & 1 == 1 { '1' } else { '0' }).collect()
}

/// Samples `shots` joint spectator outcomes from the exact circuit law by
/// sequential binomial splitting of the outcome pmf.
pub fn simulate_counts(params: &BatchParams, spec: &IdtCircuitSpec, shots: u64, seed: u64) -> Result<CountRecord> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be ≥ 1".into()));
    }
    let law = circuit_law(params, spec)?;
    let pmf = joint_pmf(&law);
    let mut rng = seed::rng(seed);
    let mut counts = BTreeMap::new();
    let mut remaining = shots;
    let mut mass = 1.0;
    for (outcome, &p) in pmf.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let n = if outcome + 1 == pmf.len() || mass <= p {
            remaining
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, q)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(&mut rng)
        };
        mass -= p;
        remaining -= n;
        if n > 0 {
            counts.insert(bitstring(outcome, law.spectators.len()), n);
        }
    }
    Ok(CountRecord {
        circuit_id: spec.circuit_id.clone(),
        shots,
        counts,
    })
}

impl CountRecord {
    /// Empirical outcome moments; `pairs` are the adjacent spectator pairs
    /// taken from `model`.
    pub fn moments(&self, spec: &IdtCircuitSpec, model: &ErrorModel) -> Result<CircuitMoments> {
        let spectators: Vec<usize> = spec.meas.keys().copied().collect();
        let k = spectators.len();
        let pairs: Vec<(usize, usize)> = model
            .pair_ambient
            .iter()
            .map(|p| p.pair)
            .filter(|(a, b)| spectators.contains(a) && spectators.contains(b))
            .collect();
        let slots: Vec<(usize, usize)> = pairs
            .iter()
            .map(|(a, b)| {
                (
                    spectators.iter().position(|q| q == a).unwrap_or(0),
                    spectators.iter().position(|q| q == b).unwrap_or(0),
                )
            })
            .collect();
        let mut sums = vec![0i64; k];
        let mut pair_sums = vec![0i64; pairs.len()];
        let mut total = 0u64;
        for (bits, &n) in &self.counts {
            let bytes = bits.as_bytes();
            if bytes.len() != k || bytes.iter().any(|b| *b != b'0' && *b != b'1') {
                return Err(Error::Parse(format!(
                    "circuit {}: malformed outcome {bits:?}",
                    self.circuit_id
                )));
            }
            let sign = |q: usize| if bytes[q] == b'0' { 1i64 } else { -1i64 };
            let n_i = n as i64;
            for (q, s) in sums.iter_mut().enumerate() {
                *s += sign(q) * n_i;
            }
            for (e, &(i, j)) in slots.iter().enumerate() {
                pair_sums[e] += sign(i) * sign(j) * n_i;
            }
            total += n;
        }
        if total != self.shots {
            return Err(Error::Parse(format!(
                "circuit {}: counts sum to {total}, expected {}",
                self.circuit_id, self.shots
            )));
        }
        let norm = self.shots as f64;
        Ok(CircuitMoments {
            shots: Some(self.shots),
            spectators,
            means: sums.iter().map(|&s| s as f64 / norm).collect(),
            pairs,
            pair_products: pair_sums.iter().map(|&s| s as f64 / norm).collect(),
        })
    }
}
