use std::collections::BTreeSet;

use itertools::Itertools;
use proptest::prelude::*;
use xtalkprint::topology::{
    enumerate_embeddings, is_embedding, DeviceTopology, Fleet, PatternKind, QubitGraph,
};

/// Brute force: every injective assignment, kept if each pattern edge lands
/// on a device coupling. Shares nothing with the backtracking search.
fn brute_force(pattern: PatternKind, device: &DeviceTopology) -> Vec<Vec<usize>> {
    let pat = pattern.topology();
    let couplings: BTreeSet<(usize, usize)> = device
        .couplings
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    (0..device.num_qubits)
        .permutations(pat.vertices)
        .filter(|m| pat.edges.iter().all(|&(u, v)| couplings.contains(&(m[u], m[v]))))
        .sorted()
        .collect()
}

#[test]
fn census_matches_brute_force() {
    let fleet = Fleet::standard(0);
    let expected = [
        (PatternKind::P1, 51),
        (PatternKind::L2, 84),
        (PatternKind::L3, 84),
        (PatternKind::L4, 48),
        (PatternKind::T4, 54),
        (PatternKind::L5p, 30),
        (PatternKind::T5p, 18),
    ];
    for (pattern, count) in expected {
        let found = enumerate_embeddings(pattern, &fleet);
        assert_eq!(found.len(), count, "{pattern}");
        let oracle: Vec<(String, Vec<usize>)> = fleet
            .devices
            .iter()
            .flat_map(|d| brute_force(pattern, d).into_iter().map(|m| (d.device_id.clone(), m)))
            .collect();
        let got: Vec<(String, Vec<usize>)> = found.iter().map(|e| (e.device_id.clone(), e.vertex_map.clone())).collect();
        assert_eq!(got, oracle, "{pattern}");
    }
}

#[test]
fn census_is_fast() {
    let fleet = Fleet::standard(0);
    let start = std::time::Instant::now();
    for p in PatternKind::ALL {
        enumerate_embeddings(p, &fleet);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn reversed_paths_are_embeddings_too() {
    let fleet = Fleet::standard(0);
    for p in [PatternKind::L2, PatternKind::L3, PatternKind::L4, PatternKind::L5p] {
        let all: BTreeSet<(String, Vec<usize>)> = enumerate_embeddings(p, &fleet)
            .into_iter()
            .map(|e| (e.device_id, e.vertex_map))
            .collect();
        for (d, m) in &all {
            let rev: Vec<usize> = m.iter().rev().copied().collect();
            assert!(all.contains(&(d.clone(), rev)), "{p} {d} {m:?}");
        }
    }
}

#[test]
fn embeddings_are_in_device_then_map_order() {
    let fleet = Fleet::standard(0);
    for p in PatternKind::ALL {
        let found = enumerate_embeddings(p, &fleet);
        let keys: Vec<(usize, Vec<usize>)> = found
            .iter()
            .map(|e| (fleet.device_index(&e.device_id).unwrap(), e.vertex_map.clone()))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{p}");
    }
}

proptest! {
    #[test]
    fn random_maps_agree_with_census(p in 0usize..7, d in 0usize..9, perm in Just(()).prop_perturb(|_, mut rng| {
        let mut v: Vec<usize> = (0..7).collect();
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        v
    })) {
        let fleet = Fleet::standard(0);
        let pattern = PatternKind::ALL[p];
        let device = &fleet.devices[d];
        let map: Vec<usize> = perm.into_iter().filter(|&q| q < device.num_qubits()).take(pattern.num_vertices()).collect();
        let listed = enumerate_embeddings(pattern, &fleet)
            .iter()
            .any(|e| e.device_id == device.device_id && e.vertex_map == map);
        prop_assert_eq!(listed, is_embedding(&pattern.topology(), device, &map));
    }
}
