//! Molecular geometries, rigid motions, pairwise distances and the
//! local/global edge split used by the score networks.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MdmError, Result};
use crate::linalg::{det3, Mat};

/// Default element vocabulary (QM9).
pub const DEFAULT_ELEMENTS: [&str; 5] = ["H", "C", "N", "O", "F"];

/// Local radius in Å separating bond-like from long-range pairs.
pub const DEFAULT_TAU: f64 = 2.0;

/// Ordered element vocabulary defining the one-hot block of the features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementSet {
    symbols: Vec<String>,
}

impl Default for ElementSet {
    fn default() -> Self {
        Self::new(DEFAULT_ELEMENTS.iter().map(|s| s.to_string()).collect()).expect("default elements")
    }
}

impl ElementSet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(MdmError::Config("element set is empty".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(MdmError::Config(alloc::format!("duplicate element {s}")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Width of the atom feature rows: one-hot block plus the charge column.
    pub fn feature_dim(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Atom features (n×f) and coordinates (n×3, Å) of one molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGeometry {
    pub atom_features: Mat,
    pub coords: Mat,
}

impl MolecularGeometry {
    pub fn new(atom_features: Mat, coords: Mat) -> Result<Self> {
        if coords.rows() == 0 {
            return Err(MdmError::EmptyGeometry);
        }
        if coords.cols() != 3 || atom_features.rows() != coords.rows() {
            return Err(MdmError::Shape(alloc::format!(
                "features {:?} vs coords {:?}",
                atom_features.shape(),
                coords.shape()
            )));
        }
        if !atom_features.is_finite() || !coords.is_finite() {
            return Err(MdmError::NonFinite);
        }
        Ok(Self { atom_features, coords })
    }

    /// One-hot encodes element indices and integer charges.
    pub fn from_elements(elements: &ElementSet, species: &[usize], charges: &[i32], coords: Mat) -> Result<Self> {
        if species.len() != coords.rows() || charges.len() != species.len() {
            return Err(MdmError::Shape("species/charges/coords length mismatch".into()));
        }
        let f = elements.feature_dim();
        let mut feats = Mat::zeros(species.len(), f);
        for (i, (&s, &q)) in species.iter().zip(charges).enumerate() {
            if s >= elements.len() {
                return Err(MdmError::Shape(alloc::format!("element index {s} out of range")));
            }
            feats[(i, s)] = 1.0;
            feats[(i, f - 1)] = q as f64;
        }
        Self::new(feats, coords)
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.atom_features.cols()
    }

    /// Element index per atom by argmax over the one-hot block, lowest index on ties.
    pub fn species(&self) -> Vec<usize> {
        let k = self.feature_dim() - 1;
        (0..self.n_atoms())
            .map(|i| {
                let row = &self.atom_features.row(i)[..k];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Charge column rounded to the nearest integer and clamped to [-2, 2].
    pub fn charges(&self) -> Vec<i32> {
        let c = self.feature_dim() - 1;
        (0..self.n_atoms()).map(|i| libm::round(self.atom_features[(i, c)]).clamp(-2.0, 2.0) as i32).collect()
    }

    /// Same geometry with coordinates shifted to zero centre of mass.
    pub fn centered(&self) -> Result<Self> {
        Ok(Self { atom_features: self.atom_features.clone(), coords: zero_com(&self.coords)? })
    }

    /// Applies the atom permutation `perm` (new row `k` is old row `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut f = Mat::zeros(self.n_atoms(), self.feature_dim());
        let mut r = Mat::zeros(self.n_atoms(), 3);
        for (k, &p) in perm.iter().enumerate() {
            f.row_mut(k).copy_from_slice(self.atom_features.row(p));
            r.row_mut(k).copy_from_slice(self.coords.row(p));
        }
        Self { atom_features: f, coords: r }
    }
}

/// Subtracts the column mean (unit masses) from every row.
pub fn zero_com(coords: &Mat) -> Result<Mat> {
    if coords.rows() == 0 {
        return Err(MdmError::EmptyGeometry);
    }
    let mean = coords.col_mean();
    let mut out = coords.clone();
    for i in 0..out.rows() {
        for (v, m) in out.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    Ok(out)
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn pairwise_distances(coords: &Mat) -> Mat {
    let n = coords.rows();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(coords.row(i), coords.row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeType {
    Local,
    Global,
}

/// Complete graph split by distance: `local` pairs lie within `tau`, `global` pairs beyond.
/// Pairs are stored as `(i, j)` with `i < j`, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub local_edges: Vec<(usize, usize)>,
    pub global_edges: Vec<(usize, usize)>,
    pub tau: f64,
}

impl EdgeSet {
    pub fn edges(&self, kind: EdgeType) -> &[(usize, usize)] {
        match kind {
            EdgeType::Local => &self.local_edges,
            EdgeType::Global => &self.global_edges,
        }
    }

    /// Every pair, local then global.
    pub fn all_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.local_edges.iter().chain(&self.global_edges).copied()
    }
}

pub fn build_edges(geometry: &MolecularGeometry, tau: f64) -> EdgeSet {
    build_edges_from_coords(&geometry.coords, tau)
}

pub fn build_edges_from_coords(coords: &Mat, tau: f64) -> EdgeSet {
    let n = coords.rows();
    let mut local_edges = Vec::new();
    let mut global_edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if distance(coords.row(i), coords.row(j)) <= tau {
                local_edges.push((i, j));
            } else {
                global_edges.push((i, j));
            }
        }
    }
    EdgeSet { local_edges, global_edges, tau }
}

/// Proper rigid motion `x ↦ R·x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: Mat,
    translation: [f64; 3],
}

impl RigidTransform {
    pub fn new(rotation: Mat, translation: [f64; 3]) -> Result<Self> {
        if rotation.shape() != (3, 3) || !rotation.is_finite() {
            return Err(MdmError::InvalidRotation);
        }
        let rtr = rotation.t_matmul(&rotation);
        let id = Mat::identity(3);
        let orth_err = rtr.zip_map(&id, |a, b| (a - b).abs()).max_abs();
        if orth_err > 1e-10 || (det3(&rotation) - 1.0).abs() > 1e-10 {
            return Err(MdmError::InvalidRotation);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat::identity(3), translation: [0.0; 3] }
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = (libm::sin(angle), libm::cos(angle));
        let rotation = Mat::from_rows(&[&[c, -s, 0.0], &[s, c, 0.0], &[0.0, 0.0, 1.0]]);
        Self { rotation, translation: [0.0; 3] }
    }

    /// Uniformly random rotation (via a random unit quaternion) and a
    /// translation with independent N(0, scale²) components.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, translation_scale: f64) -> Self {
        let mut q = [0.0f64; 4];
        loop {
            for v in &mut q {
                *v = StandardNormal.sample(rng);
            }
            let norm = libm::sqrt(q.iter().map(|v| v * v).sum());
            if norm > 1e-6 {
                q.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
        let [w, x, y, z] = q;
        let rotation = Mat::from_rows(&[
            &[1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            &[2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            &[2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ]);
        let mut translation = [0.0; 3];
        for t in &mut translation {
            let g: f64 = StandardNormal.sample(rng);
            *t = g * translation_scale;
        }
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Mat {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    /// Same rotation, no translation.
    pub fn rotation_only(&self) -> Self {
        Self { rotation: self.rotation.clone(), translation: [0.0; 3] }
    }

    /// Rotates every row of `m` (n×3) without translating.
    pub fn rotate_rows(&self, m: &Mat) -> Mat {
        m.matmul_t(&self.rotation)
    }

    /// Rotates and translates every row of `m` (n×3).
    pub fn apply_to_rows(&self, m: &Mat) -> Mat {
        let mut out = self.rotate_rows(m);
        for i in 0..out.rows() {
            for (v, t) in out.row_mut(i).iter_mut().zip(&self.translation) {
                *v += t;
            }
        }
        out
    }
}

pub fn apply_rigid(geometry: &MolecularGeometry, transform: &RigidTransform) -> MolecularGeometry {
    MolecularGeometry {
        atom_features: geometry.atom_features.clone(),
        coords: transform.apply_to_rows(&geometry.coords),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_coords(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        Mat::from_vec(n, 3, (0..3 * n).map(|_| rng.random_range(-3.0..3.0)).collect())
    }

    #[test]
    fn zero_com_examples() {
        let c = Mat::from_rows(&[&[0.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]);
        assert_eq!(zero_com(&c).unwrap(), Mat::from_rows(&[&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]));
        let single = Mat::from_rows(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(zero_com(&single).unwrap(), Mat::zeros(1, 3));
        assert_eq!(zero_com(&Mat::zeros(0, 3)), Err(MdmError::EmptyGeometry));
    }

    #[test]
    fn zero_com_is_idempotent_and_cancels_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = zero_com(&random_coords(&mut rng, 5)).unwrap();
        let again = zero_com(&c).unwrap();
        assert!(again.zip_map(&c, |a, b| a - b).max_abs() < 1e-12);
        let shifted = RigidTransform::new(Mat::identity(3), [3.0, -7.5, 0.25]).unwrap().apply_to_rows(&c);
        let back = zero_com(&shifted).unwrap();
        assert!(back.zip_map(&c, |a, b| a - b).max_abs() < 1e-12);
        assert!(back.col_mean().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn distances_examples() {
        let c = Mat::from_rows(&[&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]]);
        assert_eq!(pairwise_distances(&c)[(0, 1)], 5.0);
        assert_eq!(pairwise_distances(&Mat::from_rows(&[&[1.0, 1.0, 1.0]])), Mat::zeros(1, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_coords(&mut rng, 6);
        let d = pairwise_distances(&c);
        for i in 0..6 {
            assert_eq!(d[(i, i)], 0.0);
            for j in 0..6 {
                let direct = ((c[(i, 0)] - c[(j, 0)]).powi(2) + (c[(i, 1)] - c[(j, 1)]).powi(2)
                    + (c[(i, 2)] - c[(j, 2)]).powi(2))
                .sqrt();
                assert!((d[(i, j)] - direct).abs() < 1e-12);
                assert_eq!(d[(i, j)], d[(j, i)]);
                for k in 0..6 {
                    assert!(d[(i, k)] <= d[(i, j)] + d[(j, k)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn edges_split_by_tau() {
        // d01 = 1.2, d12 = 2.5, d02 = 3.0 (collinear would violate; use a triangle)
        let x2 = (1.2f64 * 1.2 + 3.0 * 3.0 - 2.5 * 2.5) / (2.0 * 1.2);
        let y2 = (9.0 - x2 * x2).sqrt();
        let c = Mat::from_rows(&[&[0.0, 0.0, 0.0], &[1.2, 0.0, 0.0], &[x2, y2, 0.0]]);
        let d = pairwise_distances(&c);
        assert!((d[(1, 2)] - 2.5).abs() < 1e-12 && (d[(0, 2)] - 3.0).abs() < 1e-12);
        let g = MolecularGeometry::new(Mat::zeros(3, 6), c).unwrap();
        let e = build_edges(&g, 2.0);
        assert_eq!(e.local_edges, alloc::vec![(0, 1)]);
        assert_eq!(e.global_edges.len(), 2);

        let tight = MolecularGeometry::new(
            Mat::zeros(3, 6),
            Mat::from_rows(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]),
        )
        .unwrap();
        assert!(build_edges(&tight, 2.0).global_edges.is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = MolecularGeometry::new(Mat::zeros(25, 6), random_coords(&mut rng, 25)).unwrap();
        let e = build_edges(&cloud, 2.0);
        assert_eq!(e.local_edges.len() + e.global_edges.len(), 25 * 24 / 2);
    }

    #[test]
    fn rigid_examples() {
        let g = MolecularGeometry::new(Mat::zeros(1, 6), Mat::from_rows(&[&[1.0, 0.0, 0.0]])).unwrap();
        assert_eq!(apply_rigid(&g, &RigidTransform::identity()), g);
        let r = apply_rigid(&g, &RigidTransform::rotation_z(core::f64::consts::FRAC_PI_2));
        assert!((r.coords[(0, 0)]).abs() < 1e-12 && (r.coords[(0, 1)] - 1.0).abs() < 1e-12);

        let bad = Mat::from_rows(&[&[1.0, 0.1, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(RigidTransform::new(bad, [0.0; 3]), Err(MdmError::InvalidRotation));
        let reflection = Mat::from_rows(&[&[-1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(RigidTransform::new(reflection, [0.0; 3]), Err(MdmError::InvalidRotation));
    }

    #[test]
    fn random_transform_preserves_distances_and_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g = MolecularGeometry::new(Mat::zeros(7, 6), random_coords(&mut rng, 7)).unwrap();
            let t = RigidTransform::random(&mut rng, 5.0);
            // the generated rotation must itself validate
            RigidTransform::new(t.rotation().clone(), t.translation()).unwrap();
            let moved = apply_rigid(&g, &t);
            let diff = pairwise_distances(&moved.coords).zip_map(&pairwise_distances(&g.coords), |a, b| a - b);
            assert!(diff.max_abs() < 1e-10);
            assert_eq!(moved.atom_features, g.atom_features);
            let (a, b) = (build_edges(&g, 2.0), build_edges(&moved, 2.0));
            assert_eq!(a.local_edges, b.local_edges);
            assert_eq!(a.global_edges, b.global_edges);
        }
    }

    #[test]
    fn species_tie_breaks_low_and_charges_round() {
        let f = Mat::from_rows(&[&[0.1, 0.7, 0.2, 0.0, 0.0, 0.4], &[0.5, 0.5, 0.0, 0.0, 0.0, 1.6]]);
        let g = MolecularGeometry::new(f, Mat::zeros(2, 3)).unwrap();
        assert_eq!(g.species(), alloc::vec![1, 0]);
        assert_eq!(g.charges(), alloc::vec![0, 2]);
    }
}
