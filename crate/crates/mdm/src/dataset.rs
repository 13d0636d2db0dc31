//! Molecule datasets loaded from extended-XYZ files.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use mdm_core::geometry::{ElementSet, MolecularGeometry};
use mdm_core::sampling::{ConditionSpec, SizeHistogram};
use mdm_core::training::TrainSample;

use crate::xyz::{read_xyz, XyzBlock};

/// Mean and (population) standard deviation of one named property.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertyStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Zero-COM geometries.
    pub molecules: Vec<MolecularGeometry>,
    pub properties: Vec<BTreeMap<String, f64>>,
    pub size_histogram: SizeHistogram,
    /// Over the molecules that carry each property.
    pub property_stats: BTreeMap<String, PropertyStats>,
}

impl Dataset {
    pub fn new(molecules: Vec<MolecularGeometry>, properties: Vec<BTreeMap<String, f64>>) -> anyhow::Result<Self> {
        if molecules.is_empty() {
            bail!("dataset is empty");
        }
        if properties.len() != molecules.len() {
            bail!("{} property maps for {} molecules", properties.len(), molecules.len());
        }
        let molecules = molecules.iter().map(|g| g.centered()).collect::<Result<Vec<_>, _>>()?;
        let mut size_histogram = SizeHistogram::new();
        for g in &molecules {
            *size_histogram.entry(g.n_atoms()).or_insert(0) += 1;
        }
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for p in &properties {
            for (k, v) in p {
                values.entry(k.clone()).or_default().push(*v);
            }
        }
        let property_stats = values
            .into_iter()
            .map(|(k, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                (k, PropertyStats { mean, std })
            })
            .collect();
        Ok(Self { molecules, properties, size_histogram, property_stats })
    }

    pub fn from_blocks(blocks: &[XyzBlock], elements: &ElementSet, path: &Path) -> anyhow::Result<Self> {
        let molecules = blocks.iter().map(|b| b.to_geometry(elements, path)).collect::<Result<Vec<_>, _>>()?;
        let properties = blocks.iter().map(|b| b.properties.clone()).collect();
        Self::new(molecules, properties).with_context(|| format!("loading {}", path.display()))
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn condition_spec(&self, name: &str) -> anyhow::Result<ConditionSpec> {
        condition_spec(&self.property_stats, name)
    }

    /// Pairs of geometry and property value; every molecule must carry `name`.
    pub fn labelled(&self, name: &str) -> anyhow::Result<Vec<(MolecularGeometry, f64)>> {
        self.molecules
            .iter()
            .zip(&self.properties)
            .enumerate()
            .map(|(i, (g, p))| match p.get(name) {
                Some(v) => Ok((g.clone(), *v)),
                None => bail!("molecule {} has no property {name}", i + 1),
            })
            .collect()
    }

    /// Training samples, standardized on `condition` when given.
    pub fn train_samples(&self, condition: Option<&ConditionSpec>) -> anyhow::Result<Vec<TrainSample>> {
        match condition {
            None => Ok(self.molecules.iter().map(|g| TrainSample { geometry: g.clone(), condition: vec![] }).collect()),
            Some(spec) => Ok(self
                .labelled(&spec.name)?
                .into_iter()
                .map(|(geometry, v)| TrainSample { geometry, condition: vec![spec.standardize(v)] })
                .collect()),
        }
    }
}

/// Standardization of `name` from stored statistics, with a zero spread
/// replaced by 1.
pub fn condition_spec(stats: &BTreeMap<String, PropertyStats>, name: &str) -> anyhow::Result<ConditionSpec> {
    let s = stats.get(name).with_context(|| format!("no statistics for property {name}"))?;
    let std = if s.std > 0.0 { s.std } else { 1.0 };
    Ok(ConditionSpec { name: name.to_string(), mean: s.mean, std })
}

/// Reads, zero-COMs and summarizes an extended-XYZ file.
pub fn load_dataset(path: &Path, elements: &ElementSet) -> anyhow::Result<Dataset> {
    let blocks = read_xyz(path)?;
    Dataset::from_blocks(&blocks, elements, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xyz::parse_xyz;

    fn ds(text: &str) -> anyhow::Result<Dataset> {
        let p = Path::new("d.xyz");
        Dataset::from_blocks(&parse_xyz(text, p)?, &ElementSet::default(), p)
    }

    #[test]
    fn one_methane_block() {
        let d = ds("5\nprop:alpha=1.5\nC 1 1 1\nH 1.629 1.629 1.629\nH 0.371 0.371 1.629\nH 0.371 1.629 0.371\nH 1.629 0.371 0.371\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.molecules[0].n_atoms(), 5);
        assert_eq!(d.properties[0]["alpha"], 1.5);
        assert!(d.molecules[0].coords.col_mean().iter().all(|m| m.abs() < 1e-12));
        assert_eq!(d.size_histogram[&5], 1);
    }

    #[test]
    fn statistics_and_standardization() {
        let d = ds("1\nprop:a=1\nH 0 0 0\n2\nprop:a=3\nH 0 0 0\nH 0.74 0 0\n").unwrap();
        let s = d.condition_spec("a").unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(s.standardize(2.0), 0.0);
        let samples = d.train_samples(Some(&s)).unwrap();
        assert_eq!(samples[1].condition, vec![1.0]);
        assert_eq!(d.size_histogram.values().sum::<usize>(), d.len());
        assert!(d.condition_spec("b").is_err());
    }

    #[test]
    fn missing_property_and_empty_file_are_errors() {
        let d = ds("1\nprop:a=1\nH 0 0 0\n1\n\nH 0 0 0\n").unwrap();
        assert!(d.labelled("a").unwrap_err().to_string().contains("molecule 2"));
        assert!(ds("\n\n").is_err());
    }
}
