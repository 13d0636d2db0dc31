//! Bond-length lookup and distance-based bond inference.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{MdmError, Result};
use crate::geometry::{distance, ElementSet, MolecularGeometry};
use crate::linalg::Mat;

/// Default tolerance around each reference length, Å.
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Reference bond lengths in pm: (El1, El2, order, length).
const REFERENCE_PM: &[(&str, &str, u8, f64)] = &[
    ("H", "H", 1, 74.0),
    ("H", "C", 1, 109.0),
    ("H", "N", 1, 101.0),
    ("H", "O", 1, 96.0),
    ("H", "F", 1, 92.0),
    ("C", "C", 1, 154.0),
    ("C", "N", 1, 147.0),
    ("C", "O", 1, 143.0),
    ("C", "F", 1, 135.0),
    ("N", "N", 1, 145.0),
    ("N", "O", 1, 140.0),
    ("N", "F", 1, 136.0),
    ("O", "O", 1, 148.0),
    ("O", "F", 1, 142.0),
    ("F", "F", 1, 142.0),
    ("C", "C", 2, 134.0),
    ("C", "N", 2, 129.0),
    ("C", "O", 2, 120.0),
    ("N", "N", 2, 125.0),
    ("N", "O", 2, 121.0),
    ("O", "O", 2, 121.0),
    ("C", "C", 3, 120.0),
    ("C", "N", 3, 116.0),
    ("C", "O", 3, 113.0),
    ("N", "N", 3, 110.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct BondEntry {
    pub a: String,
    pub b: String,
    pub order: u8,
    /// Reference length, Å.
    pub length: f64,
    /// Half-width of the accepted range, Å.
    pub margin: f64,
}

impl BondEntry {
    fn matches(&self, a: &str, b: &str) -> bool {
        (self.a == a && self.b == b) || (self.a == b && self.b == a)
    }
}

/// Per element pair and bond order: reference length and tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct BondLengthTable {
    entries: Vec<BondEntry>,
}

impl Default for BondLengthTable {
    fn default() -> Self {
        Self::with_margin(DEFAULT_MARGIN)
    }
}

impl BondLengthTable {
    /// The shipped reference table with a uniform margin.
    pub fn with_margin(margin: f64) -> Self {
        let entries = REFERENCE_PM
            .iter()
            .map(|&(a, b, order, pm)| BondEntry {
                a: a.to_string(),
                b: b.to_string(),
                order,
                length: pm / 100.0,
                margin,
            })
            .collect();
        Self { entries }
    }

    pub fn new(entries: Vec<BondEntry>) -> Result<Self> {
        for e in &entries {
            if !(e.length > 0.0) || !(e.margin >= 0.0) || !(1..=3).contains(&e.order) {
                return Err(MdmError::Config(alloc::format!("invalid bond entry {} {} {}", e.a, e.b, e.order)));
            }
        }
        let t = Self { entries };
        for e in &t.entries {
            for higher in e.order + 1..=3 {
                if let Some(h) = t.lookup(&e.a, &e.b, higher) {
                    if h.length >= e.length {
                        return Err(MdmError::Config(alloc::format!(
                            "{}-{} order {higher} must be shorter than order {}",
                            e.a,
                            e.b,
                            e.order
                        )));
                    }
                }
            }
        }
        Ok(t)
    }

    /// Parses rows `El1 El2 order length margin`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || MdmError::Config(alloc::format!("bond table line {}: expected `El1 El2 order length margin`", lineno + 1));
            if f.len() != 5 {
                return Err(bad());
            }
            entries.push(BondEntry {
                a: f[0].to_string(),
                b: f[1].to_string(),
                order: f[2].parse().map_err(|_| bad())?,
                length: f[3].parse().map_err(|_| bad())?,
                margin: f[4].parse().map_err(|_| bad())?,
            });
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&alloc::format!("{} {} {} {} {}\n", e.a, e.b, e.order, e.length, e.margin));
        }
        s
    }

    pub fn entries(&self) -> &[BondEntry] {
        &self.entries
    }

    pub fn lookup(&self, a: &str, b: &str, order: u8) -> Option<&BondEntry> {
        self.entries.iter().find(|e| e.order == order && e.matches(a, b))
    }

    pub fn has_pair(&self, a: &str, b: &str) -> bool {
        self.entries.iter().any(|e| e.matches(a, b))
    }

    /// Highest order whose `[length − margin, length + margin]` contains `d`.
    pub fn bond_order(&self, a: &str, b: &str, d: f64, single_only: bool) -> Option<u8> {
        let max = if single_only { 1 } else { 3 };
        (1..=max)
            .rev()
            .find(|&k| self.lookup(a, b, k).is_some_and(|e| (e.length - e.margin..=e.length + e.margin).contains(&d)))
    }
}

/// Element-labelled graph with typed bonds.
#[derive(Clone, Debug, PartialEq)]
pub struct BondGraph {
    pub elements: Vec<String>,
    pub charges: Vec<i32>,
    /// `(i, j, order)` with `i < j`, each pair at most once.
    pub bonds: Vec<(usize, usize, u8)>,
    pub coords: Mat,
}

impl BondGraph {
    pub fn n_atoms(&self) -> usize {
        self.elements.len()
    }

    /// Neighbour lists `(j, order)` per atom.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = alloc::vec![Vec::new(); self.n_atoms()];
        for &(i, j, o) in &self.bonds {
            adj[i].push((j, o));
            adj[j].push((i, o));
        }
        adj
    }
}

/// Assigns bonds from interatomic distances. Pairs absent from the table get
/// no bond (with a warning).
pub fn infer_bonds(
    geometry: &MolecularGeometry,
    elements: &ElementSet,
    table: &BondLengthTable,
    single_only: bool,
) -> BondGraph {
    let species = geometry.species();
    let names: Vec<String> = species.iter().map(|&s| elements.symbol(s).to_string()).collect();
    let n = geometry.n_atoms();
    let mut bonds = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&names[i], &names[j]);
            if !table.has_pair(a, b) {
                log::warn!("no bond lengths for {a}-{b}; pair left unbonded");
                continue;
            }
            let d = distance(geometry.coords.row(i), geometry.coords.row(j));
            if let Some(order) = table.bond_order(a, b, d, single_only) {
                bonds.push((i, j, order));
            }
        }
    }
    BondGraph { elements: names, charges: geometry.charges(), bonds, coords: geometry.coords.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: usize, b: usize, d: f64) -> MolecularGeometry {
        let el = ElementSet::default();
        let coords = Mat::from_rows(&[&[0.0, 0.0, 0.0], &[d, 0.0, 0.0]]);
        MolecularGeometry::from_elements(&el, &[a, b], &[0, 0], coords).unwrap()
    }

    #[test]
    fn distance_rules() {
        let t = BondLengthTable::default();
        let el = ElementSet::default();
        assert!(infer_bonds(&pair(0, 0, 5.0), &el, &t, false).bonds.is_empty());
        assert_eq!(infer_bonds(&pair(1, 1, 1.54), &el, &t, false).bonds, [(0, 1, 1)]);
        assert_eq!(infer_bonds(&pair(1, 1, 1.33), &el, &t, false).bonds, [(0, 1, 2)]);
        assert_eq!(infer_bonds(&pair(1, 1, 1.20), &el, &t, false).bonds, [(0, 1, 3)]);
        assert_eq!(infer_bonds(&pair(1, 1, 1.20), &el, &t, true).bonds, Vec::new());
        assert_eq!(infer_bonds(&pair(1, 1, 1.50), &el, &t, true).bonds, [(0, 1, 1)]);
    }

    #[test]
    fn reference_lengths_are_ordered() {
        let t = BondLengthTable::default();
        assert!(BondLengthTable::new(t.entries().to_vec()).is_ok());
        for e in t.entries() {
            assert!(e.length > 0.0);
        }
    }

    #[test]
    fn text_round_trip() {
        let t = BondLengthTable::default();
        assert_eq!(BondLengthTable::parse(&t.to_text()).unwrap(), t);
        assert!(BondLengthTable::parse("C C 1 1.54").is_err());
        assert!(BondLengthTable::parse("C C 1 1.2 0.1\nC C 2 1.3 0.1").is_err());
    }

    #[test]
    fn unknown_pair_gets_no_bond() {
        let el = ElementSet::new(alloc::vec!["C".into(), "S".into()]).unwrap();
        let g = MolecularGeometry::from_elements(
            &el,
            &[0, 1],
            &[0, 0],
            Mat::from_rows(&[&[0.0, 0.0, 0.0], &[1.8, 0.0, 0.0]]),
        )
        .unwrap();
        assert!(infer_bonds(&g, &el, &BondLengthTable::default(), false).bonds.is_empty());
    }
}
