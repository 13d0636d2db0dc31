//! Ancestral sampling of the reverse chain, size sampling, conditional
//! generation and decoding of continuous states into discrete molecules.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MdmError, Result};
use crate::geometry::{zero_com, MolecularGeometry};
use crate::linalg::Mat;
use crate::model::Model;
use crate::schedule::NoiseSchedule;
use crate::score_net::{dual_score, ScoreOutput, ScoreQuery};
use crate::varnoise::{sample_prior, PriorMode};

/// Molecule-size counts observed in the training set.
pub type SizeHistogram = BTreeMap<usize, usize>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeMode {
    Histogram,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub num_samples: usize,
    pub zv_mode: PriorMode,
    pub size_mode: SizeMode,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { num_samples: 1, zv_mode: PriorMode::Uniform, size_mode: SizeMode::Histogram, seed: 0 }
    }
}

/// Name and training statistics of the scalar property a model was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSpec {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

impl ConditionSpec {
    pub fn standardize(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }
}

/// Anything that can supply `s_θ(𝒢_t, t)` to the reverse chain.
pub trait ScoreFn {
    fn score(&self, geometry: &MolecularGeometry, t: usize, schedule: &NoiseSchedule) -> Result<ScoreOutput>;
}

/// A trained model with its latent and condition fixed for one chain.
pub struct ModelScore<'a> {
    pub model: &'a Model,
    pub z_v: &'a [f64],
    pub condition: &'a [f64],
}

impl ScoreFn for ModelScore<'_> {
    fn score(&self, geometry: &MolecularGeometry, t: usize, schedule: &NoiseSchedule) -> Result<ScoreOutput> {
        let query = ScoreQuery { geometry, t, schedule, condition: self.condition };
        dual_score(&self.model.store, &self.model.net, &query, self.z_v)
    }
}

/// Mean of `p_θ(𝒢_{t−1} | 𝒢_t)`: `(𝒢_t + β_t·s_θ)/√α_t`.
///
/// The network predicts the score of `q(𝒢_t | 𝒢_0)` itself; in noise units
/// that is `−ε_θ/√(1−ᾱ_t)`, which turns the usual
/// `(𝒢_t − β_t/√(1−ᾱ_t)·ε_θ)/√α_t` into the form above.
pub fn reverse_mean(
    score: &dyn ScoreFn,
    state: &MolecularGeometry,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<MolecularGeometry> {
    schedule.check_step(t)?;
    let s = score.score(state, t, schedule)?;
    let (b, inv) = (schedule.beta(t), 1.0 / libm::sqrt(schedule.alpha(t)));
    let features = state.atom_features.zip_map(&s.feature_score, |x, g| inv * (x + b * g));
    let coords = state.coords.zip_map(&s.coord_score, |x, g| inv * (x + b * g));
    Ok(MolecularGeometry { atom_features: features, coords })
}

/// Draws `(ξ^a, ξ^r)` with the coordinate part projected to zero COM.
pub fn draw_noise<R: Rng + ?Sized>(n: usize, f: usize, rng: &mut R) -> Result<(Mat, Mat)> {
    let xa = Mat::from_vec(n, f, (0..n * f).map(|_| StandardNormal.sample(rng)).collect());
    let xr = Mat::from_vec(n, 3, (0..n * 3).map(|_| StandardNormal.sample(rng)).collect());
    Ok((xa, zero_com(&xr)?))
}

/// One reverse step with explicit noise; `noise` is ignored at `t = 1`.
pub fn reverse_step_with_noise(
    score: &dyn ScoreFn,
    state: &MolecularGeometry,
    t: usize,
    schedule: &NoiseSchedule,
    noise: Option<(&Mat, &Mat)>,
) -> Result<MolecularGeometry> {
    let mut mean = reverse_mean(score, state, t, schedule)?;
    if t > 1 {
        if let Some((xa, xr)) = noise {
            let sigma = schedule.sigma(t);
            let xr = zero_com(xr)?;
            mean.atom_features = mean.atom_features.zip_map(xa, |m, e| m + sigma * e);
            mean.coords = mean.coords.zip_map(&xr, |m, e| m + sigma * e);
        }
    }
    if !mean.atom_features.is_finite() || !mean.coords.is_finite() {
        return Err(MdmError::SamplerDivergence { t });
    }
    mean.coords = zero_com(&mean.coords)?;
    Ok(mean)
}

/// `𝒢_{t−1} = μ_θ(𝒢_t) + σ_t·ξ`, with `ξ = 0` at `t = 1`.
pub fn reverse_step<R: Rng + ?Sized>(
    score: &dyn ScoreFn,
    state: &MolecularGeometry,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<MolecularGeometry> {
    if t > 1 {
        let (xa, xr) = draw_noise(state.n_atoms(), state.feature_dim(), rng)?;
        reverse_step_with_noise(score, state, t, schedule, Some((&xa, &xr)))
    } else {
        reverse_step_with_noise(score, state, t, schedule, None)
    }
}

/// Standard-normal `𝒢_T` with zero-COM coordinates.
pub fn initial_state<R: Rng + ?Sized>(n: usize, f: usize, rng: &mut R) -> Result<MolecularGeometry> {
    if n == 0 {
        return Err(MdmError::EmptyGeometry);
    }
    let (a, r) = draw_noise(n, f, rng)?;
    MolecularGeometry::new(a, r)
}

/// Runs the full chain from `state` at `T` down to `t = 1`; `observe` sees
/// every intermediate `(t − 1, 𝒢_{t−1})`.
pub fn run_chain<R: Rng + ?Sized>(
    score: &dyn ScoreFn,
    mut state: MolecularGeometry,
    schedule: &NoiseSchedule,
    rng: &mut R,
    observe: &mut dyn FnMut(usize, &MolecularGeometry),
) -> Result<MolecularGeometry> {
    for t in (1..=schedule.steps()).rev() {
        state = reverse_step(score, &state, t, schedule, rng)?;
        observe(t - 1, &state);
    }
    Ok(state)
}

/// Random streams consumed by one chain.
pub struct ChainRngs<'a, R: Rng + ?Sized> {
    /// Draws the latent `z_v`.
    pub zv: &'a mut R,
    /// Draws `𝒢_T` and every step's `ξ`.
    pub chain: &'a mut R,
}

/// Generates one molecule of `n` atoms and decodes it. The latent `z_v` is
/// drawn once and held fixed for the whole chain.
pub fn sample_molecule<R: Rng + ?Sized>(
    n: usize,
    model: &Model,
    schedule: &NoiseSchedule,
    zv_mode: PriorMode,
    condition: &[f64],
    rngs: ChainRngs<'_, R>,
    observe: &mut dyn FnMut(usize, &MolecularGeometry),
) -> Result<MolecularGeometry> {
    let cfg = model.config();
    let z_v = sample_prior(zv_mode, cfg.zv_dim, rngs.zv);
    let rng = rngs.chain;
    let start = initial_state(n, cfg.feature_dim, rng)?;
    let score = ModelScore { model, z_v: &z_v, condition };
    let g0 = run_chain(&score, start, schedule, rng, observe)?;
    Ok(decode(&g0))
}

/// Checks the requested property against the model and standardizes it.
pub fn condition_vector(model: &Model, spec: Option<&ConditionSpec>, name: &str, value: f64) -> Result<Vec<f64>> {
    let spec = match spec {
        Some(s) if model.config().condition_dim == 1 => s,
        _ => return Err(MdmError::ConditionMismatch(alloc::format!("model is unconditional, got {name}"))),
    };
    if spec.name != name {
        return Err(MdmError::ConditionMismatch(alloc::format!("trained on {}, got {name}", spec.name)));
    }
    Ok(alloc::vec![spec.standardize(value)])
}

/// [`sample_molecule`] with the standardized property injected at every step.
#[allow(clippy::too_many_arguments)]
pub fn sample_conditional<R: Rng + ?Sized>(
    n: usize,
    model: &Model,
    schedule: &NoiseSchedule,
    spec: Option<&ConditionSpec>,
    condition: (&str, f64),
    zv_mode: PriorMode,
    rngs: ChainRngs<'_, R>,
    observe: &mut dyn FnMut(usize, &MolecularGeometry),
) -> Result<MolecularGeometry> {
    let c = condition_vector(model, spec, condition.0, condition.1)?;
    sample_molecule(n, model, schedule, zv_mode, &c, rngs, observe)
}

pub fn sample_size<R: Rng + ?Sized>(histogram: Option<&SizeHistogram>, mode: SizeMode, rng: &mut R) -> Result<usize> {
    if let SizeMode::Fixed(n) = mode {
        return Ok(n);
    }
    let hist = histogram.filter(|h| h.values().any(|&c| c > 0)).ok_or(MdmError::NoSizeHistogram)?;
    let total: usize = hist.values().sum();
    let mut k = rng.random_range(0..total);
    for (&n, &c) in hist {
        if k < c {
            return Ok(n);
        }
        k -= c;
    }
    unreachable!("histogram draw out of range")
}

/// Argmax element (lowest index on ties) and nearest charge in `[−2, 2]`.
pub fn decode(geometry: &MolecularGeometry) -> MolecularGeometry {
    let n = geometry.n_atoms();
    let f = geometry.feature_dim();
    let species = geometry.species();
    let charges = geometry.charges();
    let mut feats = Mat::zeros(n, f);
    for i in 0..n {
        feats[(i, species[i])] = 1.0;
        feats[(i, f - 1)] = charges[i] as f64;
    }
    MolecularGeometry { atom_features: feats, coords: geometry.coords.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind, SigmaMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Zero;
    impl ScoreFn for Zero {
        fn score(&self, g: &MolecularGeometry, _: usize, _: &NoiseSchedule) -> Result<ScoreOutput> {
            Ok(ScoreOutput {
                feature_score: Mat::zeros(g.n_atoms(), g.feature_dim()),
                coord_score: Mat::zeros(g.n_atoms(), 3),
            })
        }
    }

    fn two_atoms() -> MolecularGeometry {
        MolecularGeometry::new(
            Mat::from_rows(&[&[0.3, -0.2], &[1.0, 0.5]]),
            Mat::from_rows(&[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]]),
        )
        .unwrap()
    }

    #[test]
    fn zero_score_scales_by_inverse_sqrt_alpha() {
        let s = make_schedule(ScheduleKind::Linear, 10, 0.01, 0.1).unwrap();
        let g = two_atoms();
        let out = reverse_step_with_noise(&Zero, &g, 5, &s, None).unwrap();
        let k = 1.0 / (1.0 - s.beta(5)).sqrt();
        assert_eq!(out.atom_features, g.atom_features.scale(k));
        assert!(out.coords.zip_map(&g.coords.scale(k), |a, b| a - b).max_abs() < 1e-15);
    }

    #[test]
    fn first_step_adds_no_noise() {
        let s = make_schedule(ScheduleKind::Linear, 10, 0.01, 0.1).unwrap().with_sigma_mode(SigmaMode::Beta);
        let g = two_atoms();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = reverse_step(&Zero, &g, 1, &s, &mut rng).unwrap();
        let b = reverse_step_with_noise(&Zero, &g, 1, &s, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let s = make_schedule(ScheduleKind::Linear, 10, 0.01, 0.1).unwrap();
        let mut g = two_atoms();
        g.atom_features[(0, 0)] = f64::INFINITY;
        assert_eq!(
            reverse_step_with_noise(&Zero, &g, 4, &s, None).unwrap_err(),
            MdmError::SamplerDivergence { t: 4 }
        );
    }

    #[test]
    fn size_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let point: SizeHistogram = [(5, 3)].into_iter().collect();
        for _ in 0..20 {
            assert_eq!(sample_size(Some(&point), SizeMode::Histogram, &mut rng).unwrap(), 5);
        }
        assert_eq!(sample_size(None, SizeMode::Fixed(9), &mut rng).unwrap(), 9);
        assert_eq!(sample_size(None, SizeMode::Histogram, &mut rng), Err(MdmError::NoSizeHistogram));
        let two: SizeHistogram = [(3, 1), (7, 1)].into_iter().collect();
        let draws = 10_000;
        let threes =
            (0..draws).filter(|_| sample_size(Some(&two), SizeMode::Histogram, &mut rng).unwrap() == 3).count();
        let se = (0.25 / draws as f64).sqrt();
        assert!((threes as f64 / draws as f64 - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn decode_examples() {
        let g = MolecularGeometry::new(
            Mat::from_rows(&[&[0.1, 0.7, 0.2, 0.4], &[0.5, 0.5, 0.0, 1.6], &[0.0, 0.0, 0.9, -3.0]]),
            Mat::zeros(3, 3),
        )
        .unwrap();
        let d = decode(&g);
        assert_eq!(d.species(), [1, 0, 2]);
        assert_eq!(d.charges(), [0, 2, -2]);
        assert_eq!(d.atom_features.row(0), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn condition_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(crate::score_net::NetConfig::desk(6), &mut rng).unwrap();
        let spec = ConditionSpec { name: "rg".into(), mean: 2.0, std: 0.5 };
        assert!(matches!(condition_vector(&model, Some(&spec), "rg", 2.0), Err(MdmError::ConditionMismatch(_))));
        let mut cfg = crate::score_net::NetConfig::desk(6);
        cfg.condition_dim = 1;
        let cond = Model::new(cfg, &mut rng).unwrap();
        assert_eq!(condition_vector(&cond, Some(&spec), "rg", 2.0).unwrap(), [0.0]);
        assert!(matches!(condition_vector(&cond, Some(&spec), "alpha", 2.0), Err(MdmError::ConditionMismatch(_))));
        assert!(matches!(condition_vector(&cond, None, "rg", 2.0), Err(MdmError::ConditionMismatch(_))));
    }

    #[test]
    fn chain_is_seeded_and_stays_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = crate::score_net::NetConfig::desk(6);
        cfg.hidden_dim = 8;
        cfg.n_layers = 1;
        let model = Model::new(cfg, &mut rng).unwrap();
        let s = make_schedule(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut zv_rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut worst: f64 = 0.0;
            let rngs = ChainRngs { zv: &mut zv_rng, chain: &mut rng };
            let g = sample_molecule(4, &model, &s, PriorMode::Uniform, &[], rngs, &mut |_, g| {
                worst = g.coords.col_mean().iter().fold(worst, |w, m| w.max(m.abs()));
            })
            .unwrap();
            (g, worst)
        };
        let (a, wa) = run(9);
        let (b, _) = run(9);
        assert_eq!(a, b);
        assert!(wa < 1e-9);
        assert!(a.coords.col_mean().iter().all(|m| m.abs() < 1e-9));
    }
}
