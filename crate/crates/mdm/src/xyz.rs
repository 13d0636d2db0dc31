//! Extended-XYZ reading and writing.
//!
//! One molecule per block: atom count, a comment line that may carry
//! `prop:<name>=<float>` tokens, then `Element x y z [charge]` lines in Å.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mdm_core::geometry::{ElementSet, MolecularGeometry};
use mdm_core::linalg::Mat;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum XyzError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: unknown element {symbol}")]
    UnknownElement { path: PathBuf, line: usize, symbol: String },
    #[error("{path}:{line}: {source}")]
    Geometry {
        path: PathBuf,
        line: usize,
        #[source]
        source: mdm_core::MdmError,
    },
}

/// One parsed block, before element lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct XyzBlock {
    /// 1-based line number of the atom-count line.
    pub line: usize,
    pub comment: String,
    pub properties: BTreeMap<String, f64>,
    pub symbols: Vec<String>,
    pub coords: Vec<[f64; 3]>,
    pub charges: Vec<i32>,
}

impl XyzBlock {
    /// Resolves element symbols against `elements`.
    pub fn to_geometry(&self, elements: &ElementSet, path: &Path) -> Result<MolecularGeometry, XyzError> {
        let mut species = Vec::with_capacity(self.symbols.len());
        for (k, s) in self.symbols.iter().enumerate() {
            match elements.index_of(s) {
                Some(i) => species.push(i),
                None => {
                    return Err(XyzError::UnknownElement {
                        path: path.to_path_buf(),
                        line: self.line + 2 + k,
                        symbol: s.clone(),
                    })
                }
            }
        }
        let coords = Mat::from_vec(self.coords.len(), 3, self.coords.iter().flatten().copied().collect());
        MolecularGeometry::from_elements(elements, &species, &self.charges, coords)
            .map_err(|source| XyzError::Geometry { path: path.to_path_buf(), line: self.line, source })
    }

    /// Symbols, coordinates and rounded charges of a geometry.
    pub fn from_geometry(g: &MolecularGeometry, elements: &ElementSet) -> Self {
        let species = g.species();
        Self {
            line: 0,
            comment: String::new(),
            properties: BTreeMap::new(),
            symbols: species.iter().map(|&s| elements.symbol(s).to_string()).collect(),
            coords: (0..g.n_atoms()).map(|i| [g.coords[(i, 0)], g.coords[(i, 1)], g.coords[(i, 2)]]).collect(),
            charges: g.charges(),
        }
    }

    pub fn with_comment(mut self, comment: impl Into<String>) -> Self {
        self.comment = comment.into();
        self
    }

    pub fn with_property(mut self, name: &str, value: f64) -> Self {
        self.properties.insert(name.to_string(), value);
        self
    }
}

fn parse_comment(
    text: &str,
    path: &Path,
    line: usize,
) -> Result<(String, BTreeMap<String, f64>), XyzError> {
    let mut props = BTreeMap::new();
    let mut rest = Vec::new();
    for tok in text.split_whitespace() {
        match tok.strip_prefix("prop:") {
            Some(kv) => {
                let bad = || XyzError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: format!("bad property token {tok:?}"),
                };
                let (name, value) = kv.split_once('=').ok_or_else(bad)?;
                let value: f64 = value.parse().map_err(|_| bad())?;
                if name.is_empty() || !value.is_finite() {
                    return Err(bad());
                }
                props.insert(name.to_string(), value);
            }
            None => rest.push(tok),
        }
    }
    Ok((rest.join(" "), props))
}

/// Parses every block of `text`; `path` is only used in error messages.
pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<XyzBlock>, XyzError> {
    let malformed = |line: usize, message: String| XyzError::Malformed { path: path.to_path_buf(), line, message };
    let lines: Vec<&str> = text.lines().collect();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let start = i + 1;
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| malformed(start, format!("expected atom count, found {:?}", lines[i].trim())))?;
        if n == 0 {
            return Err(malformed(start, "molecule with zero atoms".into()));
        }
        if i + 2 + n > lines.len() {
            return Err(malformed(start, format!("block declares {n} atoms but the file ends early")));
        }
        let (comment, properties) = parse_comment(lines[i + 1], path, start + 1)?;
        let mut block = XyzBlock {
            line: start,
            comment,
            properties,
            symbols: Vec::with_capacity(n),
            coords: Vec::with_capacity(n),
            charges: Vec::with_capacity(n),
        };
        for k in 0..n {
            let ln = start + 2 + k;
            let fields: Vec<&str> = lines[i + 2 + k].split_whitespace().collect();
            if !(4..=5).contains(&fields.len()) {
                return Err(malformed(ln, format!("expected `Element x y z [charge]`, found {} fields", fields.len())));
            }
            let mut r = [0.0f64; 3];
            for (c, f) in fields[1..4].iter().enumerate() {
                r[c] = f.parse().map_err(|_| malformed(ln, format!("bad coordinate {f:?}")))?;
                if !r[c].is_finite() {
                    return Err(malformed(ln, format!("non-finite coordinate {f:?}")));
                }
            }
            let charge = match fields.get(4) {
                None => 0,
                Some(f) => {
                    let q: f64 = f.parse().map_err(|_| malformed(ln, format!("bad charge {f:?}")))?;
                    if q.fract() != 0.0 || q.abs() > 8.0 {
                        return Err(malformed(ln, format!("charge must be a small integer, found {f:?}")));
                    }
                    q as i32
                }
            };
            block.symbols.push(fields[0].to_string());
            block.coords.push(r);
            block.charges.push(charge);
        }
        blocks.push(block);
        i += 2 + n;
    }
    Ok(blocks)
}

pub fn read_xyz(path: &Path) -> Result<Vec<XyzBlock>, XyzError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| XyzError::Io { path: path.to_path_buf(), source })?;
    parse_xyz(&text, path)
}

/// Renders blocks with 9-decimal coordinates; charges are always written.
pub fn format_xyz(blocks: &[XyzBlock]) -> String {
    let mut out = String::new();
    for b in blocks {
        let _ = writeln!(out, "{}", b.symbols.len());
        let mut comment = b.comment.clone();
        for (name, value) in &b.properties {
            if !comment.is_empty() {
                comment.push(' ');
            }
            let _ = write!(comment, "prop:{name}={value}");
        }
        let _ = writeln!(out, "{comment}");
        for ((s, r), q) in b.symbols.iter().zip(&b.coords).zip(&b.charges) {
            let _ = writeln!(out, "{s:<2} {:15.9} {:15.9} {:15.9} {q}", r[0], r[1], r[2]);
        }
    }
    out
}

pub fn write_xyz(path: &Path, blocks: &[XyzBlock]) -> Result<(), XyzError> {
    std::fs::write(path, format_xyz(blocks)).map_err(|source| XyzError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    const METHANE: &str = "5\nmethane prop:alpha=1.5\nC 0 0 0\nH 0.629 0.629 0.629\nH -0.629 -0.629 0.629\nH -0.629 0.629 -0.629\nH 0.629 -0.629 -0.629 0\n";

    #[test]
    fn parses_one_block_with_property() {
        let blocks = parse_xyz(METHANE, Path::new("m.xyz")).unwrap();
        assert_eq!(blocks.len(), 1);
        let b = &blocks[0];
        assert_eq!(b.symbols.len(), 5);
        assert_eq!(b.comment, "methane");
        assert_eq!(b.properties["alpha"], 1.5);
        let g = b.to_geometry(&ElementSet::default(), Path::new("m.xyz")).unwrap();
        assert_eq!(g.n_atoms(), 5);
        assert_eq!(g.species(), vec![1, 0, 0, 0, 0]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let mut blocks = parse_xyz(METHANE, Path::new("m.xyz")).unwrap();
        blocks[0].coords[2] = [-0.123456789012, 3.0e-10, 12.5];
        blocks[0].charges[0] = -1;
        let again = parse_xyz(&format_xyz(&blocks), Path::new("r.xyz")).unwrap();
        assert_eq!(again[0].symbols, blocks[0].symbols);
        assert_eq!(again[0].charges, blocks[0].charges);
        assert_eq!(again[0].properties, blocks[0].properties);
        for (a, b) in again[0].coords.iter().zip(&blocks[0].coords) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 5e-10);
            }
        }
    }

    #[test]
    fn errors_carry_file_and_line() {
        let bad = "2\n\nC 0 0 0\nH 0 zero 0\n";
        let e = parse_xyz(bad, Path::new("bad.xyz")).unwrap_err().to_string();
        assert!(e.starts_with("bad.xyz:4:"), "{e}");
        let short = "3\n\nC 0 0 0\n";
        assert!(parse_xyz(short, Path::new("s.xyz")).unwrap_err().to_string().starts_with("s.xyz:1:"));
        let count = "two\n\n";
        assert!(parse_xyz(count, Path::new("c.xyz")).unwrap_err().to_string().contains("atom count"));
        let prop = "1\nprop:x=abc\nH 0 0 0\n";
        assert!(parse_xyz(prop, Path::new("p.xyz")).unwrap_err().to_string().starts_with("p.xyz:2:"));
    }

    #[test]
    fn unknown_element_is_named() {
        let text = "2\n\nC 0 0 0\nSi 1.5 0 0\n";
        let b = parse_xyz(text, Path::new("u.xyz")).unwrap();
        let e = b[0].to_geometry(&ElementSet::default(), Path::new("u.xyz")).unwrap_err();
        assert!(matches!(&e, XyzError::UnknownElement { symbol, line: 4, .. } if symbol == "Si"), "{e}");
    }

    #[test]
    fn multiple_blocks_and_blank_lines() {
        let text = format!("{METHANE}\n3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n");
        let b = parse_xyz(&text, Path::new("m.xyz")).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].line, 9);
        assert!(b[1].properties.is_empty());
    }
}
