//! Isomorphism-invariant graph keys via Weisfeiler–Lehman refinement.

use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use super::bonds::BondGraph;

/// Refinement rounds.
pub const WL_ROUNDS: usize = 3;

type Label = [u8; 32];

fn digest(parts: &[&[u8]]) -> Label {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// 32-byte key over atom labels `(element, charge)` and bond orders; equal
/// for isomorphic graphs, independent of coordinates and atom order.
pub fn canonical_key(graph: &BondGraph) -> Vec<u8> {
    let n = graph.n_atoms();
    let adj = graph.adjacency();
    let mut labels: Vec<Label> = (0..n)
        .map(|i| digest(&[graph.elements[i].as_bytes(), &graph.charges[i].to_le_bytes()]))
        .collect();
    let mut history: Vec<Vec<Label>> = Vec::with_capacity(WL_ROUNDS + 1);
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    history.push(sorted);
    for _ in 0..WL_ROUNDS {
        labels = (0..n)
            .map(|i| {
                let mut neigh: Vec<(u8, Label)> = adj[i].iter().map(|&(j, o)| (o, labels[j])).collect();
                neigh.sort_unstable();
                let mut buf = Vec::with_capacity(neigh.len() * 33);
                for (o, l) in &neigh {
                    buf.push(*o);
                    buf.extend_from_slice(l);
                }
                digest(&[&labels[i], &buf])
            })
            .collect();
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        history.push(sorted);
    }
    let mut h = Sha256::new();
    h.update((n as u64).to_le_bytes());
    h.update((graph.bonds.len() as u64).to_le_bytes());
    for round in &history {
        for l in round {
            h.update(l);
        }
    }
    h.finalize().to_vec()
}

/// Lower-case hex rendering of a key.
pub fn key_hex(key: &[u8]) -> alloc::string::String {
    use core::fmt::Write;
    let mut s = alloc::string::String::with_capacity(key.len() * 2);
    for b in key {
        let _ = write!(s, "{b:02x}");
    }
    s
}
