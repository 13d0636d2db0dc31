//! Variance schedules, the closed-form forward marginal, the true posterior
//! of one reverse step, and score-matching targets.

use alloc::vec::Vec;

use crate::error::{MdmError, Result};
use crate::geometry::{distance, zero_com, EdgeSet, MolecularGeometry};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Polynomial,
}

/// Reverse-step standard deviation: `√β̃_t` or `√β_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaMode {
    Posterior,
    Beta,
}

/// Per-step quantities for `t = 1..=T`. Stored 0-based; accessors take `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn make_schedule(kind: ScheduleKind, steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(MdmError::InvalidBetaRange);
    }
    let beta = (1..=steps)
        .map(|t| {
            let frac = if steps == 1 { 0.0 } else { (t - 1) as f64 / (steps - 1) as f64 };
            let shape = match kind {
                ScheduleKind::Linear => frac,
                ScheduleKind::Polynomial => frac * frac,
            };
            beta_min + shape * (beta_max - beta_min)
        })
        .collect();
    NoiseSchedule::from_betas(beta, SigmaMode::Posterior)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>, sigma_mode: SigmaMode) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(MdmError::InvalidBetaRange);
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let beta_tilde = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        let mut s = Self { steps: beta.len(), beta, alpha, alpha_bar, beta_tilde, sigma: Vec::new() };
        s.set_sigma_mode(sigma_mode);
        Ok(s)
    }

    pub fn with_sigma_mode(mut self, mode: SigmaMode) -> Self {
        self.set_sigma_mode(mode);
        self
    }

    fn set_sigma_mode(&mut self, mode: SigmaMode) {
        self.sigma = match mode {
            SigmaMode::Posterior => self.beta_tilde.iter().map(|v| libm::sqrt(*v)).collect(),
            SigmaMode::Beta => self.beta.iter().map(|v| libm::sqrt(*v)).collect(),
        };
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(MdmError::StepOutOfRange { t, steps: self.steps })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Weight `γ = β²/(2(1−β)(1−ᾱ)σ²)`; `σ² = β_t` stands in where `σ_t = 0`.
    pub fn gamma(&self, t: usize) -> f64 {
        let b = self.beta(t);
        let s2 = self.sigma(t) * self.sigma(t);
        let s2 = if s2 > 0.0 { s2 } else { b };
        b * b / (2.0 * (1.0 - b) * (1.0 - self.alpha_bar(t)) * s2)
    }

    /// Posterior mean coefficients `(c_t, c_0)` with `μ̃ = c_t·x_t + c_0·x_0`.
    pub fn posterior_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        if t < 2 {
            return Err(MdmError::NoPosteriorAtFirstStep);
        }
        let (ab, ab_prev, b) = (self.alpha_bar(t), self.alpha_bar(t - 1), self.beta(t));
        let ct = libm::sqrt(self.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
        let c0 = libm::sqrt(ab_prev) * b / (1.0 - ab);
        Ok((ct, c0))
    }
}

/// A noised molecule together with the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusedState {
    pub geometry_t: MolecularGeometry,
    pub t: usize,
    pub eps_features: Mat,
    pub eps_coords: Mat,
}

/// Closed-form forward marginal `𝒢_t = √ᾱ_t·𝒢_0 + √(1−ᾱ_t)·ε`, per channel.
pub fn q_sample(
    g0: &MolecularGeometry,
    t: usize,
    schedule: &NoiseSchedule,
    eps_features: Mat,
    eps_coords: Mat,
) -> Result<DiffusedState> {
    schedule.check_step(t)?;
    if eps_features.shape() != g0.atom_features.shape() || eps_coords.shape() != g0.coords.shape() {
        return Err(MdmError::Shape("noise shape does not match geometry".into()));
    }
    let eps_coords = zero_com(&eps_coords)?;
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    let features = g0.atom_features.zip_map(&eps_features, |x, e| signal * x + noise * e);
    let coords = zero_com(&g0.coords)?.zip_map(&eps_coords, |x, e| signal * x + noise * e);
    Ok(DiffusedState {
        geometry_t: MolecularGeometry::new(features, coords)?,
        t,
        eps_features,
        eps_coords,
    })
}

/// Mean and variance of `q(𝒢_{t−1} | 𝒢_t, 𝒢_0)` for `t ≥ 2`.
pub fn posterior_params(
    g0: &MolecularGeometry,
    gt: &MolecularGeometry,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<(MolecularGeometry, f64)> {
    let (ct, c0) = schedule.posterior_coefficients(t)?;
    let features = gt.atom_features.zip_map(&g0.atom_features, |a, b| ct * a + c0 * b);
    let coords = gt.coords.zip_map(&g0.coords, |a, b| ct * a + c0 * b);
    Ok((MolecularGeometry { atom_features: features, coords }, schedule.beta_tilde(t)))
}

/// `−(A_t − √ᾱ_t·A_0)/(1−ᾱ_t)`.
pub fn score_target_features(g0: &MolecularGeometry, state: &DiffusedState, schedule: &NoiseSchedule) -> Mat {
    let ab = schedule.alpha_bar(state.t);
    let s = libm::sqrt(ab);
    state.geometry_t.atom_features.zip_map(&g0.atom_features, |at, a0| -(at - s * a0) / (1.0 - ab))
}

/// Distance-decomposed coordinate target: for each atom
/// `Σ_j (1/d̃_ij)·(−√ᾱ_t(d̃_ij − d_ij)/(1−ᾱ_t))·(r̃_i − r̃_j)` over every pair in `edges`.
pub fn score_target_coords(
    g0: &MolecularGeometry,
    state: &DiffusedState,
    schedule: &NoiseSchedule,
    edges: &EdgeSet,
) -> Result<Mat> {
    let ab = schedule.alpha_bar(state.t);
    let k = -libm::sqrt(ab) / (1.0 - ab);
    let rt = &state.geometry_t.coords;
    let r0 = &g0.coords;
    let mut out = Mat::zeros(rt.rows(), 3);
    for (i, j) in edges.all_pairs() {
        let dt = distance(rt.row(i), rt.row(j));
        if dt < 1e-8 {
            return Err(MdmError::CoincidentDiffused { i, j });
        }
        let d0 = distance(r0.row(i), r0.row(j));
        let w = k * (dt - d0) / dt;
        for c in 0..3 {
            let diff = rt[(i, c)] - rt[(j, c)];
            out[(i, c)] += w * diff;
            out[(j, c)] -= w * diff;
        }
    }
    Ok(out)
}

/// Exact Gaussian-kernel gradient for zero-COM coordinates,
/// `−(R_t − √ᾱ_t·R_0)/(1−ᾱ_t)`.
pub fn score_target_coords_gaussian(
    g0: &MolecularGeometry,
    state: &DiffusedState,
    schedule: &NoiseSchedule,
) -> Result<Mat> {
    let ab = schedule.alpha_bar(state.t);
    let s = libm::sqrt(ab);
    let r0 = zero_com(&g0.coords)?;
    Ok(state.geometry_t.coords.zip_map(&r0, |rt, r| -(rt - s * r) / (1.0 - ab)))
}

/// `KL(N(m1, v1) ‖ N(m2, v2))` for scalars.
pub fn gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * (libm::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_edges, MolecularGeometry};

    #[test]
    fn constant_linear_schedule_products() {
        let s = make_schedule(ScheduleKind::Linear, 4, 0.1, 0.1).unwrap();
        let expected = [0.9, 0.81, 0.729, 0.6561];
        for (t, e) in expected.iter().enumerate() {
            assert!((s.alpha_bar(t + 1) - e).abs() < 1e-12);
        }
        assert_eq!(s.beta_tilde(1), 0.0);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn first_step_alpha_bar() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Polynomial] {
            let s = make_schedule(kind, 50, 1e-3, 0.3).unwrap();
            assert_eq!(s.alpha_bar(1), 1.0 - s.beta(1));
        }
    }

    #[test]
    fn long_linear_schedule_decays() {
        let s = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
        // independent oracle: exp of summed log(1 - β_t)
        let log_sum: f64 = (0..1000)
            .map(|i| {
                let b = 1e-4 + (i as f64 / 999.0) * (0.02 - 1e-4);
                (1.0 - b).ln()
            })
            .sum();
        assert!((s.alpha_bar(1000) - log_sum.exp()).abs() < 1e-15);
        assert!(s.alpha_bar(1000) < 1e-4);
    }

    #[test]
    fn schedule_invariants() {
        let s = make_schedule(ScheduleKind::Polynomial, 100, 1e-3, 0.2).unwrap();
        for t in 1..=100 {
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            assert!(s.beta_tilde(t) >= 0.0 && s.sigma(t) >= 0.0);
            if t > 1 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
        assert!((s.beta(100) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invalid_ranges_rejected() {
        for (lo, hi) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0), (-0.1, 0.5)] {
            assert_eq!(make_schedule(ScheduleKind::Linear, 10, lo, hi), Err(MdmError::InvalidBetaRange));
        }
        assert_eq!(make_schedule(ScheduleKind::Linear, 0, 0.1, 0.2), Err(MdmError::InvalidBetaRange));
        assert!(make_schedule(ScheduleKind::Linear, 1, 0.1, 0.2).is_ok());
    }

    fn scalar_geometry(feature: f64) -> MolecularGeometry {
        MolecularGeometry::new(Mat::from_rows(&[&[feature]]), Mat::zeros(1, 3)).unwrap()
    }

    fn quarter_schedule() -> NoiseSchedule {
        // single step with ᾱ_1 = 0.25
        NoiseSchedule::from_betas(alloc::vec![0.75], SigmaMode::Posterior).unwrap()
    }

    #[test]
    fn q_sample_examples() {
        let s = quarter_schedule();
        let g0 = scalar_geometry(1.0);
        let st = q_sample(&g0, 1, &s, Mat::zeros(1, 1), Mat::zeros(1, 3)).unwrap();
        assert!((st.geometry_t.atom_features[(0, 0)] - 0.5).abs() < 1e-15);
        let st = q_sample(&g0, 1, &s, Mat::filled(1, 1, 1.0), Mat::zeros(1, 3)).unwrap();
        assert!((st.geometry_t.atom_features[(0, 0)] - (0.5 + 0.75f64.sqrt())).abs() < 1e-12);
        assert!((st.geometry_t.atom_features[(0, 0)] - 1.3660).abs() < 1e-4);
        assert_eq!(
            q_sample(&g0, 2, &s, Mat::zeros(1, 1), Mat::zeros(1, 3)).unwrap_err(),
            MdmError::StepOutOfRange { t: 2, steps: 1 }
        );
        assert!(matches!(
            q_sample(&g0, 0, &s, Mat::zeros(1, 1), Mat::zeros(1, 3)),
            Err(MdmError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn q_sample_centers_coordinates() {
        let s = quarter_schedule();
        let g0 = MolecularGeometry::new(
            Mat::zeros(2, 1),
            Mat::from_rows(&[&[1.0, 1.0, 1.0], &[3.0, 1.0, 1.0]]),
        )
        .unwrap();
        let eps = Mat::from_rows(&[&[0.3, -0.2, 0.1], &[-0.3, 0.2, -0.1]]);
        let st = q_sample(&g0, 1, &s, Mat::zeros(2, 1), eps).unwrap();
        assert!(st.geometry_t.coords.col_mean().iter().all(|m| m.abs() < 1e-12));
        assert!(st.eps_coords.col_mean().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn posterior_requires_t_at_least_two() {
        let s = make_schedule(ScheduleKind::Linear, 2, 0.1, 0.1).unwrap();
        let g = scalar_geometry(0.0);
        assert_eq!(posterior_params(&g, &g, 1, &s).unwrap_err(), MdmError::NoPosteriorAtFirstStep);
        let (mu, _) = posterior_params(&g, &g, 2, &s).unwrap();
        assert_eq!(mu.atom_features[(0, 0)], 0.0);
    }

    #[test]
    fn posterior_small_beta_limit() {
        // β_t → 0: 𝒢_{t-1} ≈ 𝒢_t, so the mean collapses onto 𝒢_t.
        let s = NoiseSchedule::from_betas(alloc::vec![0.3, 1e-8], SigmaMode::Posterior).unwrap();
        let g0 = scalar_geometry(0.7);
        let gt = scalar_geometry(s.alpha(2).sqrt() * 0.4);
        let (mu, bt) = posterior_params(&g0, &gt, 2, &s).unwrap();
        assert!((mu.atom_features[(0, 0)] - gt.atom_features[(0, 0)]).abs() < 1e-7);
        assert!(bt < 1e-7);
    }

    #[test]
    fn feature_target_examples() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.25], SigmaMode::Posterior).unwrap();
        let g0 = scalar_geometry(1.0);
        let mut st = q_sample(&g0, 1, &s, Mat::zeros(1, 1), Mat::zeros(1, 3)).unwrap();
        assert_eq!(score_target_features(&g0, &st, &s)[(0, 0)], 0.0);
        st.geometry_t.atom_features[(0, 0)] = 1.0;
        let v = score_target_features(&g0, &st, &s)[(0, 0)];
        assert!((v - (-(1.0 - 0.75f64.sqrt()) / 0.25)).abs() < 1e-12);
        assert!((v + 0.5359).abs() < 1e-4);
    }

    fn two_atom_state(d0: f64, dt: f64, s: &NoiseSchedule) -> (MolecularGeometry, DiffusedState) {
        let g0 = MolecularGeometry::new(
            Mat::zeros(2, 1),
            Mat::from_rows(&[&[d0 / 2.0, 0.0, 0.0], &[-d0 / 2.0, 0.0, 0.0]]),
        )
        .unwrap();
        let gt = MolecularGeometry::new(
            Mat::zeros(2, 1),
            Mat::from_rows(&[&[dt / 2.0, 0.0, 0.0], &[-dt / 2.0, 0.0, 0.0]]),
        )
        .unwrap();
        let st = DiffusedState { geometry_t: gt, t: 1, eps_features: Mat::zeros(2, 1), eps_coords: Mat::zeros(2, 3) };
        let _ = s;
        (g0, st)
    }

    #[test]
    fn coordinate_target_hand_example() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.36], SigmaMode::Posterior).unwrap();
        let (g0, st) = two_atom_state(2.0, 3.0, &s);
        let e = build_edges(&st.geometry_t, 2.0);
        let target = score_target_coords(&g0, &st, &s, &e).unwrap();
        // factor (1/3)(−0.8·1/0.36) times r̃_1 − r̃_2 = (3,0,0)
        let factor: f64 = (1.0 / 3.0) * (-0.8 / 0.36);
        assert!((factor + 0.7407).abs() < 1e-4);
        assert!((target[(0, 0)] - 3.0 * factor).abs() < 1e-12);
        assert!((target[(0, 0)] + 2.222).abs() < 1e-3);
        assert_eq!(target[(0, 1)], 0.0);
        assert!((target[(1, 0)] + target[(0, 0)]).abs() < 1e-15);
        // stretched pair: pulls atoms together
        let diff = [3.0, 0.0, 0.0];
        let inner: f64 = (0..3).map(|c| target[(0, c)] * diff[c]).sum();
        assert!(inner < 0.0);
    }

    #[test]
    fn coordinate_target_zero_when_undisplaced() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.36], SigmaMode::Posterior).unwrap();
        let (g0, st) = two_atom_state(2.0, 2.0, &s);
        let e = build_edges(&st.geometry_t, 2.0);
        assert_eq!(score_target_coords(&g0, &st, &s, &e).unwrap(), Mat::zeros(2, 3));
    }

    #[test]
    fn coordinate_target_rejects_coincident_atoms() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.36], SigmaMode::Posterior).unwrap();
        let (g0, st) = two_atom_state(2.0, 0.0, &s);
        let e = build_edges(&st.geometry_t, 2.0);
        assert_eq!(
            score_target_coords(&g0, &st, &s, &e).unwrap_err(),
            MdmError::CoincidentDiffused { i: 0, j: 1 }
        );
    }

    #[test]
    fn scalar_gaussian_kl() {
        assert!((gaussian_kl(0.5, 1.0, 0.0, 1.0) - 0.125).abs() < 1e-15);
        assert_eq!(gaussian_kl(0.0, 1.0, 0.0, 1.0), 0.0);
    }
}
