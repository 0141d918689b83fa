//! Device and pattern coupling graphs, the nine-device fleet, and embedding
//! enumeration.
//!
//! Device graphs are trees. Couplings are stored directed with the lower
//! qubit index first; adjacency tests ignore direction.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::idt::{DriveSpec, IdtCircuitSpec};
use crate::{Error, Result};

pub const FLEET_FORMAT_VERSION: u32 = 1;

/// Common read access to a small undirected qubit graph.
pub trait QubitGraph {
    fn label(&self) -> String;
    fn num_qubits(&self) -> usize;
    /// Undirected edges as `(low, high)` pairs in canonical order.
    fn edges(&self) -> &[(usize, usize)];

    fn adjacent(&self, a: usize, b: usize) -> bool {
        let key = (a.min(b), a.max(b));
        self.edges().contains(&key)
    }

    fn neighbors(&self, q: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges()
            .iter()
            .filter_map(|&(a, b)| {
                if a == q {
                    Some(b)
                } else if b == q {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Hop distance between every pair of vertices (`usize::MAX` when
    /// disconnected).
    fn distances(&self) -> Vec<Vec<usize>> {
        let n = self.num_qubits();
        let adj: Vec<Vec<usize>> = (0..n).map(|q| self.neighbors(q)).collect();
        (0..n)
            .map(|src| {
                let mut dist = vec![usize::MAX; n];
                dist[src] = 0;
                let mut queue = VecDeque::from([src]);
                while let Some(u) = queue.pop_front() {
                    for &v in &adj[u] {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    fn is_tree(&self) -> bool {
        let n = self.num_qubits();
        n > 0
            && self.edges().len() == n - 1
            && self.distances()[0].iter().all(|&d| d != usize::MAX)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeviceKind {
    L5,
    T5,
    H7,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 3] = [DeviceKind::L5, DeviceKind::T5, DeviceKind::H7];

    pub fn num_qubits(self) -> usize {
        match self {
            DeviceKind::L5 | DeviceKind::T5 => 5,
            DeviceKind::H7 => 7,
        }
    }

    fn canonical_edges(self) -> &'static [(usize, usize)] {
        match self {
            DeviceKind::L5 => &[(0, 1), (1, 2), (2, 3), (3, 4)],
            DeviceKind::T5 => &[(0, 1), (1, 2), (1, 3), (3, 4)],
            DeviceKind::H7 => &[(0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6)],
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceTopology {
    pub device_id: String,
    pub kind: DeviceKind,
    pub num_qubits: usize,
    pub couplings: Vec<(usize, usize)>,
}

impl DeviceTopology {
    /// Checks the structural invariants of a (possibly deserialized) device.
    pub fn validate(&self) -> Result<()> {
        let expected = canonical_topology(self.kind, &self.device_id);
        if self.num_qubits != expected.num_qubits || self.couplings != expected.couplings {
            return Err(Error::Config(format!(
                "device {} does not match the canonical {} graph",
                self.device_id, self.kind
            )));
        }
        Ok(())
    }
}

impl QubitGraph for DeviceTopology {
    fn label(&self) -> String {
        self.device_id.clone()
    }
    fn num_qubits(&self) -> usize {
        self.num_qubits
    }
    fn edges(&self) -> &[(usize, usize)] {
        &self.couplings
    }
}

/// Canonical graph of a device kind: L5 is a path, T5 a path with a pendant
/// branch at qubit 1, H7 two claws joined through qubit 3.
pub fn canonical_topology(kind: DeviceKind, device_id: &str) -> DeviceTopology {
    DeviceTopology {
        device_id: device_id.to_string(),
        kind,
        num_qubits: kind.num_qubits(),
        couplings: kind.canonical_edges().to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternKind {
    P1,
    L2,
    L3,
    L4,
    T4,
    L5p,
    T5p,
}

impl PatternKind {
    pub const ALL: [PatternKind; 7] = [
        PatternKind::P1,
        PatternKind::L2,
        PatternKind::L3,
        PatternKind::L4,
        PatternKind::T4,
        PatternKind::L5p,
        PatternKind::T5p,
    ];

    pub fn topology(self) -> PatternTopology {
        let (vertices, edges): (usize, &[(usize, usize)]) = match self {
            PatternKind::P1 => (1, &[]),
            PatternKind::L2 => (2, &[(0, 1)]),
            PatternKind::L3 => (3, &[(0, 1), (1, 2)]),
            PatternKind::L4 => (4, &[(0, 1), (1, 2), (2, 3)]),
            // claw: center 0, leaves 1..3
            PatternKind::T4 => (4, &[(0, 1), (0, 2), (0, 3)]),
            PatternKind::L5p => (5, DeviceKind::L5.canonical_edges()),
            PatternKind::T5p => (5, DeviceKind::T5.canonical_edges()),
        };
        PatternTopology {
            name: self,
            vertices,
            edges: edges.to_vec(),
        }
    }

    pub fn num_vertices(self) -> usize {
        self.topology().vertices
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P1" => Ok(PatternKind::P1),
            "L2" => Ok(PatternKind::L2),
            "L3" => Ok(PatternKind::L3),
            "L4" => Ok(PatternKind::L4),
            "T4" => Ok(PatternKind::T4),
            "L5" | "L5p" => Ok(PatternKind::L5p),
            "T5" | "T5p" => Ok(PatternKind::T5p),
            other => Err(Error::InvalidArgument(format!(
                "unknown pattern {other:?} (expected one of P1, L2, L3, L4, T4, L5p, T5p)"
            ))),
        }
    }
}

/// Probe-circuit topology. Path vertices are numbered along the path; the
/// claw center is vertex 0; T5p reuses the T5 device labeling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTopology {
    pub name: PatternKind,
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl QubitGraph for PatternTopology {
    fn label(&self) -> String {
        self.name.to_string()
    }
    fn num_qubits(&self) -> usize {
        self.vertices
    }
    fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Injective map from pattern vertices to device qubits that carries every
/// pattern edge onto a device coupling.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Embedding {
    pub pattern: PatternKind,
    pub device_id: String,
    pub vertex_map: Vec<usize>,
}

impl Embedding {
    /// Pattern vertex mapped onto device qubit `q`, if any.
    pub fn preimage(&self, q: usize) -> Option<usize> {
        self.vertex_map.iter().position(|&m| m == q)
    }

    pub fn describe(&self) -> String {
        let map: Vec<String> = self.vertex_map.iter().map(usize::to_string).collect();
        format!("{}:[{}]", self.device_id, map.join(","))
    }
}

/// Independent structural check: injectivity plus edge preservation.
pub fn is_embedding(pattern: &PatternTopology, device: &DeviceTopology, map: &[usize]) -> bool {
    if map.len() != pattern.vertices || map.iter().any(|&q| q >= device.num_qubits) {
        return false;
    }
    let distinct: BTreeSet<usize> = map.iter().copied().collect();
    distinct.len() == map.len()
        && pattern
            .edges
            .iter()
            .all(|&(u, v)| device.adjacent(map[u], map[v]))
}

/// The fleet: three devices of each kind, ids `d0..d8` in L5, T5, H7 order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fleet {
    pub version: u32,
    pub fleet_seed: u64,
    pub devices: Vec<DeviceTopology>,
}

impl Fleet {
    pub fn standard(fleet_seed: u64) -> Self {
        let devices = DeviceKind::ALL
            .iter()
            .flat_map(|&kind| std::iter::repeat_n(kind, 3))
            .enumerate()
            .map(|(i, kind)| canonical_topology(kind, &format!("d{i}")))
            .collect();
        Fleet {
            version: FLEET_FORMAT_VERSION,
            fleet_seed,
            devices,
        }
    }

    pub fn device(&self, device_id: &str) -> Option<&DeviceTopology> {
        self.devices.iter().find(|d| d.device_id == device_id)
    }

    pub fn device_index(&self, device_id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.device_id == device_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FLEET_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported fleet format version {}",
                self.version
            )));
        }
        if self.devices.len() != 9 {
            return Err(Error::Config(format!(
                "fleet must have 9 devices, found {}",
                self.devices.len()
            )));
        }
        let ids: BTreeSet<&str> = self.devices.iter().map(|d| d.device_id.as_str()).collect();
        if ids.len() != self.devices.len() {
            return Err(Error::Config("duplicate device ids in fleet".into()));
        }
        for kind in DeviceKind::ALL {
            let n = self.devices.iter().filter(|d| d.kind == kind).count();
            if n != 3 {
                return Err(Error::Config(format!("fleet has {n} {kind} devices, expected 3")));
            }
        }
        self.devices.iter().try_for_each(DeviceTopology::validate)
    }
}

/// All embeddings of `pattern` into the fleet, ordered by device then by
/// lexicographic vertex map. Orientation-reversed maps are distinct.
pub fn enumerate_embeddings(pattern: PatternKind, fleet: &Fleet) -> Vec<Embedding> {
    let pat = pattern.topology();
    // Assign vertices in an order where each vertex after the first touches
    // an already-assigned one, so partial maps prune early.
    let order = connected_order(&pat);
    let mut out = Vec::new();
    for device in &fleet.devices {
        let mut found = Vec::new();
        let mut map = vec![usize::MAX; pat.vertices];
        let mut used = vec![false; device.num_qubits];
        extend(&pat, device, &order, 0, &mut map, &mut used, &mut found);
        found.sort();
        out.extend(found.into_iter().map(|vertex_map| Embedding {
            pattern,
            device_id: device.device_id.clone(),
            vertex_map,
        }));
    }
    out
}

fn connected_order(pat: &PatternTopology) -> Vec<usize> {
    let mut order = Vec::with_capacity(pat.vertices);
    let mut seen = vec![false; pat.vertices];
    for start in 0..pat.vertices {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for v in pat.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order
}

fn extend(
    pat: &PatternTopology,
    device: &DeviceTopology,
    order: &[usize],
    depth: usize,
    map: &mut Vec<usize>,
    used: &mut Vec<bool>,
    found: &mut Vec<Vec<usize>>,
) {
    if depth == order.len() {
        found.push(map.clone());
        return;
    }
    let u = order[depth];
    for q in 0..device.num_qubits {
        if used[q] {
            continue;
        }
        let consistent = pat
            .neighbors(u)
            .into_iter()
            .filter(|&v| map[v] != usize::MAX)
            .all(|v| device.adjacent(q, map[v]));
        if !consistent {
            continue;
        }
        map[u] = q;
        used[q] = true;
        extend(pat, device, order, depth + 1, map, used, found);
        used[q] = false;
        map[u] = usize::MAX;
    }
}

/// Minimal graph supporting a circuit set: every touched qubit plus every
/// pair used by a two-qubit gate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    pub vertices: BTreeSet<usize>,
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn topology_dependency<'a>(
    specs: impl IntoIterator<Item = &'a IdtCircuitSpec>,
) -> DependencyGraph {
    let mut graph = DependencyGraph::default();
    for spec in specs {
        graph.vertices.extend(spec.prep.keys().copied());
        graph.vertices.extend(spec.meas.keys().copied());
        match spec.drive {
            DriveSpec::Single { qubit } => {
                graph.vertices.insert(qubit);
            }
            DriveSpec::Pair { control, target } => {
                graph.vertices.insert(control);
                graph.vertices.insert(target);
                graph
                    .edges
                    .insert((control.min(target), control.max(target)));
            }
            DriveSpec::ControlSingle | DriveSpec::ControlPair => {}
        }
    }
    graph
}
