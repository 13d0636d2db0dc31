//! Synthetic template molecules for offline desk-scale runs.

use mdm_core::geometry::{apply_rigid, zero_com, ElementSet, MolecularGeometry, RigidTransform};
use mdm_core::linalg::Mat;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const C_H: f64 = 1.09;
const C_C: f64 = 1.54;
const C_O: f64 = 1.43;
const O_H: f64 = 0.96;
const HOH_DEG: f64 = 104.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Template {
    /// CH₄, tetrahedral.
    Methane,
    /// H₂O, bent.
    Water,
    /// C₂H₅OH, staggered: the 9-atom chain.
    Ethanol,
}

/// Four unit vectors at tetrahedral angles, the first along `+x`.
fn tetrahedral() -> [[f64; 3]; 4] {
    let r = 2.0 * 2f64.sqrt() / 3.0;
    let mut d = [[1.0, 0.0, 0.0]; 4];
    for (k, v) in d.iter_mut().enumerate().skip(1) {
        let phi = (k - 1) as f64 * 2.0 * std::f64::consts::PI / 3.0;
        *v = [-1.0 / 3.0, r * phi.cos(), r * phi.sin()];
    }
    d
}

fn along(origin: [f64; 3], dir: [f64; 3], len: f64) -> [f64; 3] {
    [origin[0] + len * dir[0], origin[1] + len * dir[1], origin[2] + len * dir[2]]
}

fn neg(v: [f64; 3]) -> [f64; 3] {
    [-v[0], -v[1], -v[2]]
}

impl Template {
    /// Element symbols and coordinates (Å), heavy atoms first.
    pub fn atoms(self) -> Vec<(&'static str, [f64; 3])> {
        let o = [0.0; 3];
        match self {
            Template::Methane => {
                let mut v = vec![("C", o)];
                v.extend(tetrahedral().iter().map(|&d| ("H", along(o, d, C_H))));
                v
            }
            Template::Water => {
                let a = HOH_DEG.to_radians();
                vec![("O", o), ("H", [O_H, 0.0, 0.0]), ("H", [O_H * a.cos(), O_H * a.sin(), 0.0])]
            }
            Template::Ethanol => {
                // C2's substituents point along the inverted C1 directions (staggered);
                // O's hydrogen points along C1's first direction again.
                let d = tetrahedral();
                let c2 = along(o, d[0], C_C);
                let ox = along(c2, neg(d[1]), C_O);
                vec![
                    ("C", o),
                    ("C", c2),
                    ("O", ox),
                    ("H", along(o, d[1], C_H)),
                    ("H", along(o, d[2], C_H)),
                    ("H", along(o, d[3], C_H)),
                    ("H", along(c2, neg(d[2]), C_H)),
                    ("H", along(c2, neg(d[3]), C_H)),
                    ("H", along(ox, d[0], O_H)),
                ]
            }
        }
    }

    /// Template geometry with zero-COM coordinates, coordinates scaled by `scale`.
    pub fn geometry(self, elements: &ElementSet, scale: f64) -> anyhow::Result<MolecularGeometry> {
        let atoms = self.atoms();
        let species = atoms
            .iter()
            .map(|(s, _)| elements.index_of(s).ok_or_else(|| anyhow::anyhow!("element {s} not in element set")))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let coords = Mat::from_vec(atoms.len(), 3, atoms.iter().flat_map(|(_, r)| r.map(|x| x * scale)).collect());
        Ok(MolecularGeometry::from_elements(elements, &species, &vec![0; atoms.len()], zero_com(&coords)?)?)
    }
}

/// Copy of `base` with i.i.d. N(0, jitter²) coordinate noise, optionally
/// under a uniformly random rotation, re-centred.
pub fn jittered<R: Rng + ?Sized>(
    base: &MolecularGeometry,
    jitter: f64,
    rotate: bool,
    rng: &mut R,
) -> anyhow::Result<MolecularGeometry> {
    let noise = Normal::new(0.0, jitter)?;
    let mut g = base.clone();
    g.coords.as_mut_slice().iter_mut().for_each(|x| *x += noise.sample(rng));
    if rotate {
        g = apply_rigid(&g, &RigidTransform::random(rng, 0.0));
    }
    Ok(g.centered()?)
}

/// `count` jittered copies of one template.
pub fn template_dataset<R: Rng + ?Sized>(
    template: Template,
    elements: &ElementSet,
    count: usize,
    jitter: f64,
    rotate: bool,
    rng: &mut R,
) -> anyhow::Result<Vec<MolecularGeometry>> {
    let base = template.geometry(elements, 1.0)?;
    (0..count).map(|_| jittered(&base, jitter, rotate, rng)).collect()
}

/// Root-mean-square distance of the atoms from their centroid.
pub fn radius_of_gyration(g: &MolecularGeometry) -> f64 {
    let c = g.coords.col_mean();
    let n = g.n_atoms() as f64;
    let ss: f64 = (0..g.n_atoms())
        .map(|i| g.coords.row(i).iter().zip(&c).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum();
    (ss / n).sqrt()
}

/// Water- and methane-like molecules uniformly scaled by `s ~ U(lo, hi)`,
/// labelled with their radius of gyration.
pub fn scaled_family<R: Rng + ?Sized>(
    elements: &ElementSet,
    count: usize,
    scale_range: (f64, f64),
    jitter: f64,
    rng: &mut R,
) -> anyhow::Result<Vec<(MolecularGeometry, f64)>> {
    (0..count)
        .map(|_| {
            let t = if rng.random_bool(0.5) { Template::Water } else { Template::Methane };
            let s = rng.random_range(scale_range.0..scale_range.1);
            let g = jittered(&t.geometry(elements, s)?, jitter, true, rng)?;
            let rg = radius_of_gyration(&g);
            Ok((g, rg))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdm_core::chem_eval::{evaluate_sample, ChemContext};
    use mdm_core::geometry::distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn templates_are_valid_and_stable() {
        let ctx = ChemContext::default();
        for (t, n) in [(Template::Methane, 5), (Template::Water, 3), (Template::Ethanol, 9)] {
            let g = t.geometry(&ctx.elements, 1.0).unwrap();
            assert_eq!(g.n_atoms(), n);
            let v = evaluate_sample(&g, &ctx);
            assert!(v.valid && v.stable, "{t:?}");
        }
    }

    #[test]
    fn methane_bond_lengths_and_angles() {
        let g = Template::Methane.geometry(&ElementSet::default(), 1.0).unwrap();
        for i in 1..5 {
            assert!((distance(g.coords.row(0), g.coords.row(i)) - C_H).abs() < 1e-12);
            for j in i + 1..5 {
                let hh = distance(g.coords.row(i), g.coords.row(j));
                assert!((hh - C_H * (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jittered_copies_stay_valid() {
        let ctx = ChemContext::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = template_dataset(Template::Ethanol, &ctx.elements, 50, 0.02, true, &mut rng).unwrap();
        for g in &data {
            assert!(g.coords.col_mean().iter().all(|m| m.abs() < 1e-12));
            let v = evaluate_sample(g, &ctx);
            assert!(v.valid && v.stable);
        }
    }

    #[test]
    fn gyration_radius_scales_linearly() {
        let e = ElementSet::default();
        let a = radius_of_gyration(&Template::Water.geometry(&e, 1.0).unwrap());
        let b = radius_of_gyration(&Template::Water.geometry(&e, 1.2).unwrap());
        assert!((b / a - 1.2).abs() < 1e-12);
        let methane = radius_of_gyration(&Template::Methane.geometry(&e, 1.0).unwrap());
        assert!((methane - C_H * (4.0f64 / 5.0).sqrt()).abs() < 1e-12);
    }
}
