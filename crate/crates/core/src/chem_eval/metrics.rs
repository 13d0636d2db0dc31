//! Validity, uniqueness, novelty and stability over a set of samples.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::bonds::{infer_bonds, BondLengthTable};
use super::canonical::canonical_key;
use super::valence::{stability, validity, ValenceTable};
use crate::geometry::{ElementSet, MolecularGeometry};

/// Everything needed to turn a geometry into a verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct ChemContext {
    pub elements: ElementSet,
    pub bonds: BondLengthTable,
    pub valence: ValenceTable,
    pub single_bonds_only: bool,
}

impl Default for ChemContext {
    fn default() -> Self {
        Self {
            elements: ElementSet::default(),
            bonds: BondLengthTable::default(),
            valence: ValenceTable::default(),
            single_bonds_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleVerdict {
    pub valid: bool,
    pub stable: bool,
    pub key: Vec<u8>,
}

pub fn evaluate_sample(geometry: &MolecularGeometry, ctx: &ChemContext) -> SampleVerdict {
    let g = infer_bonds(geometry, &ctx.elements, &ctx.bonds, ctx.single_bonds_only);
    SampleVerdict { valid: validity(&g, &ctx.valence), stable: stability(&g), key: canonical_key(&g) }
}

/// Percentages in `[0, 100]`, all over the total number of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub stability: f64,
    pub samples: Vec<SampleVerdict>,
}

/// Keys of a reference set (e.g. the training molecules).
pub fn key_set(molecules: &[MolecularGeometry], ctx: &ChemContext) -> BTreeSet<Vec<u8>> {
    molecules.iter().map(|g| evaluate_sample(g, ctx).key).collect()
}

pub fn metrics_report(
    samples: &[MolecularGeometry],
    training_keys: &BTreeSet<Vec<u8>>,
    ctx: &ChemContext,
) -> MetricsReport {
    let verdicts: Vec<SampleVerdict> = samples.iter().map(|g| evaluate_sample(g, ctx)).collect();
    summarize(verdicts, training_keys)
}

/// Aggregates per-sample verdicts.
pub fn summarize(verdicts: Vec<SampleVerdict>, training_keys: &BTreeSet<Vec<u8>>) -> MetricsReport {
    let total = verdicts.len().max(1) as f64;
    let pct = |k: usize| 100.0 * k as f64 / total;
    let valid: BTreeSet<&Vec<u8>> = verdicts.iter().filter(|v| v.valid).map(|v| &v.key).collect();
    let novel = valid.iter().filter(|k| !training_keys.contains(**k)).count();
    MetricsReport {
        validity: pct(verdicts.iter().filter(|v| v.valid).count()),
        uniqueness: pct(valid.len()),
        novelty: pct(novel),
        stability: pct(verdicts.iter().filter(|v| v.stable).count()),
        samples: verdicts,
    }
}
