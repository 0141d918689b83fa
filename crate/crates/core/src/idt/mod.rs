//! Idle-tomography experiment suites and error-rate estimation.

mod estimate;
mod fit;
mod linalg;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pauli::{Axis, SignedAxis};
use crate::topology::QubitGraph;
use crate::{Error, Result};

pub use estimate::{
    estimate_drive, estimate_weight1, estimate_weight2, CircuitMoments, DriveEstimates, Observation,
    RateEstimate, RateSource,
};
pub use fit::{fit_slope, SlopeFit};
pub use linalg::{matrix_log, matrix_sqrt};

/// What the drive qubits do during the idle sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriveSpec {
    /// Repeated Hadamard on one qubit.
    Single { qubit: usize },
    /// Repeated CNOT on a coupling.
    Pair { control: usize, target: usize },
    /// No drive, idle delay matching one single-qubit step.
    ControlSingle,
    /// No drive, idle delay matching one two-qubit step.
    ControlPair,
}

impl DriveSpec {
    pub fn gate(&self) -> &'static str {
        match self {
            DriveSpec::Single { .. } => "H",
            DriveSpec::Pair { .. } => "CNOT",
            DriveSpec::ControlSingle | DriveSpec::ControlPair => "I",
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, DriveSpec::Pair { .. } | DriveSpec::ControlPair)
    }

    pub fn drives(&self, q: usize) -> bool {
        match *self {
            DriveSpec::Single { qubit } => qubit == q,
            DriveSpec::Pair { control, target } => control == q || target == q,
            DriveSpec::ControlSingle | DriveSpec::ControlPair => false,
        }
    }

    /// Canonical drive order for a graph: single drives by qubit, pair drives
    /// by coupling (lower index controls), then the two control groups.
    pub fn all_for(graph: &impl QubitGraph) -> Vec<DriveSpec> {
        let mut out: Vec<DriveSpec> = (0..graph.num_qubits())
            .map(|qubit| DriveSpec::Single { qubit })
            .collect();
        out.extend(graph.edges().iter().map(|&(a, b)| DriveSpec::Pair {
            control: a.min(b),
            target: a.max(b),
        }));
        out.push(DriveSpec::ControlSingle);
        out.push(DriveSpec::ControlPair);
        out
    }
}

impl fmt::Display for DriveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriveSpec::Single { qubit } => write!(f, "single:{qubit}"),
            DriveSpec::Pair { control, target } => write!(f, "pair:{control}-{target}"),
            DriveSpec::ControlSingle => write!(f, "control_single"),
            DriveSpec::ControlPair => write!(f, "control_pair"),
        }
    }
}

impl std::str::FromStr for DriveSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed drive {s:?}"));
        match s {
            "control_single" => Ok(DriveSpec::ControlSingle),
            "control_pair" => Ok(DriveSpec::ControlPair),
            _ => {
                if let Some(q) = s.strip_prefix("single:") {
                    Ok(DriveSpec::Single {
                        qubit: q.parse().map_err(|_| bad())?,
                    })
                } else if let Some(rest) = s.strip_prefix("pair:") {
                    let (c, t) = rest.split_once('-').ok_or_else(bad)?;
                    Ok(DriveSpec::Pair {
                        control: c.parse().map_err(|_| bad())?,
                        target: t.parse().map_err(|_| bad())?,
                    })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// One idle-tomography circuit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdtCircuitSpec {
    pub device_id: String,
    pub drive: DriveSpec,
    pub prep: BTreeMap<usize, SignedAxis>,
    pub meas: BTreeMap<usize, Axis>,
    pub idle_length: u32,
    pub circuit_id: String,
}

impl IdtCircuitSpec {
    fn new(
        device_id: &str,
        drive: DriveSpec,
        spectators: &[usize],
        prep: SignedAxis,
        meas: Axis,
        idle_length: u32,
    ) -> Self {
        let mut spec = IdtCircuitSpec {
            device_id: device_id.to_string(),
            drive,
            prep: spectators.iter().map(|&q| (q, prep)).collect(),
            meas: spectators.iter().map(|&q| (q, meas)).collect(),
            idle_length,
            circuit_id: String::new(),
        };
        spec.circuit_id = spec.compute_id();
        spec
    }

    /// Stable identifier: truncated SHA-256 of device, drive, bases and
    /// idle length.
    pub fn compute_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.device_id.as_bytes());
        h.update(b"|");
        h.update(self.drive.to_string().as_bytes());
        for (q, p) in &self.prep {
            h.update(format!("|p{q}{p}").as_bytes());
        }
        for (q, m) in &self.meas {
            h.update(format!("|m{q}{m}").as_bytes());
        }
        h.update(format!("|s{}", self.idle_length).as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn spectators(&self) -> impl Iterator<Item = usize> + '_ {
        self.meas.keys().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdtConfig {
    pub idle_lengths: Vec<u32>,
}

impl Default for IdtConfig {
    fn default() -> Self {
        IdtConfig {
            idle_lengths: vec![1, 2, 4, 8],
        }
    }
}

/// The per-drive basis schedule: every `(+w, v)` pair, then `(−w, w)` for
/// each axis.
pub fn basis_schedule() -> Vec<(SignedAxis, Axis)> {
    let mut cells: Vec<(SignedAxis, Axis)> = Axis::ALL
        .iter()
        .flat_map(|&w| Axis::ALL.iter().map(move |&v| (SignedAxis::plus(w), v)))
        .collect();
    cells.extend(Axis::ALL.iter().map(|&w| (SignedAxis::minus(w), w)));
    cells
}

/// Full enrollment suite of a graph: single drives, pair drives and both
/// control groups, each with the complete basis schedule at every idle
/// length. Drives that leave no spectators are omitted.
pub fn generate_experiments(graph: &impl QubitGraph, config: &IdtConfig) -> Result<Vec<IdtCircuitSpec>> {
    if config.idle_lengths.is_empty() {
        return Err(Error::Config("idle length set is empty".into()));
    }
    let device_id = graph.label();
    let schedule = basis_schedule();
    let mut out = Vec::new();
    for drive in DriveSpec::all_for(graph) {
        let spectators: Vec<usize> = (0..graph.num_qubits()).filter(|q| !drive.drives(*q)).collect();
        if spectators.is_empty() {
            continue;
        }
        for &s in &config.idle_lengths {
            for &(prep, meas) in &schedule {
                out.push(IdtCircuitSpec::new(&device_id, drive, &spectators, prep, meas, s));
            }
        }
    }
    Ok(out)
}
