//! Valence rules, connectivity and the validity/stability checks.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::bonds::BondGraph;

/// How formal charge shifts an element's allowed valence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChargeRule {
    /// Valence grows with positive charge (N⁺ makes four bonds, O⁻ one).
    Add,
    /// Any charge removes bonds (C⁺ and C⁻ make three).
    SubtractAbs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValenceTable {
    rules: BTreeMap<String, (Vec<u32>, ChargeRule)>,
}

impl Default for ValenceTable {
    fn default() -> Self {
        let mut rules = BTreeMap::new();
        for (el, v, rule) in [
            ("H", 1, ChargeRule::SubtractAbs),
            ("C", 4, ChargeRule::SubtractAbs),
            ("N", 3, ChargeRule::Add),
            ("O", 2, ChargeRule::Add),
            ("F", 1, ChargeRule::Add),
        ] {
            rules.insert(el.to_string(), (alloc::vec![v], rule));
        }
        Self { rules }
    }
}

impl ValenceTable {
    pub fn insert(&mut self, element: &str, valences: Vec<u32>, rule: ChargeRule) {
        self.rules.insert(element.to_string(), (valences, rule));
    }

    /// Allowed total bond orders for `element` at `charge`; `None` if unknown.
    pub fn allowed(&self, element: &str, charge: i32) -> Option<Vec<u32>> {
        let (base, rule) = self.rules.get(element)?;
        Some(
            base.iter()
                .filter_map(|&v| {
                    let adj = match rule {
                        ChargeRule::Add => v as i64 + charge as i64,
                        ChargeRule::SubtractAbs => v as i64 - (charge as i64).abs(),
                    };
                    (adj >= 0).then_some(adj as u32)
                })
                .collect(),
        )
    }
}

/// Every atom's summed bond order lies in its charge-adjusted valence set.
pub fn validity(graph: &BondGraph, valence: &ValenceTable) -> bool {
    let mut total = alloc::vec![0u32; graph.n_atoms()];
    for &(i, j, o) in &graph.bonds {
        total[i] += o as u32;
        total[j] += o as u32;
    }
    graph.elements.iter().zip(&graph.charges).zip(&total).all(|((el, &q), &sum)| match valence.allowed(el, q) {
        Some(allowed) => allowed.contains(&sum),
        None => {
            log::warn!("no valence rule for element {el}; molecule counted invalid");
            false
        }
    })
}

/// The bond graph forms one connected component.
pub fn stability(graph: &BondGraph) -> bool {
    let n = graph.n_atoms();
    if n <= 1 {
        return true;
    }
    let adj = graph.adjacency();
    let mut seen = alloc::vec![false; n];
    let mut stack = alloc::vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &(j, _) in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}
