//! Independent numerical oracles for the diffusion targets, the loss and
//! a short training run.

use approx::assert_relative_eq;
use mdm_core::geometry::{apply_rigid, build_edges, ElementSet, MolecularGeometry, RigidTransform};
use mdm_core::linalg::Mat;
use mdm_core::model::Model;
use mdm_core::schedule::{
    make_schedule, q_sample, score_target_coords, score_target_features, DiffusedState, NoiseSchedule,
    ScheduleKind, SigmaMode,
};
use mdm_core::score_net::{dual_score, NetConfig, ScoreQuery};
use mdm_core::training::{
    molecule_loss, train, LrSchedule, NoiseDraw, StepRecord, TrainConfig, TrainObserver, TrainSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_vec(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect())
}

fn methane() -> MolecularGeometry {
    let c = 0.629;
    MolecularGeometry::from_elements(
        &ElementSet::default(),
        &[1, 0, 0, 0, 0],
        &[0; 5],
        Mat::from_rows(&[&[0.0, 0.0, 0.0], &[c, c, c], &[-c, -c, c], &[-c, c, -c], &[c, -c, -c]]),
    )
    .unwrap()
}

#[test]
fn feature_target_matches_finite_differences_of_log_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let ab: f64 = rng.random_range(0.05..0.95);
        let s = NoiseSchedule::from_betas(vec![1.0 - ab], SigmaMode::Posterior).unwrap();
        let g0 = MolecularGeometry::new(gaussian_mat(&mut rng, 3, 4), Mat::zeros(3, 3)).unwrap();
        let at = gaussian_mat(&mut rng, 3, 4);
        let log_q = |a: &Mat| -> f64 {
            a.zip_map(&g0.atom_features, |x, x0| -(x - ab.sqrt() * x0).powi(2) / (2.0 * (1.0 - ab))).sum()
        };
        let state = DiffusedState {
            geometry_t: MolecularGeometry::new(at.clone(), Mat::zeros(3, 3)).unwrap(),
            t: 1,
            eps_features: Mat::zeros(3, 4),
            eps_coords: Mat::zeros(3, 3),
        };
        let target = score_target_features(&g0, &state, &s);
        let h = 1e-5;
        for i in 0..3 {
            for c in 0..4 {
                let (mut p, mut m) = (at.clone(), at.clone());
                p[(i, c)] += h;
                m[(i, c)] -= h;
                let fd = (log_q(&p) - log_q(&m)) / (2.0 * h);
                assert!((target[(i, c)] - fd).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}

#[test]
fn stretched_pairs_are_pulled_together() {
    let s = NoiseSchedule::from_betas(vec![0.36], SigmaMode::Posterior).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let d0: f64 = rng.random_range(0.8..2.0);
        let dt = d0 * rng.random_range(1.1..2.0);
        let dir = {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            v.map(|x| x / n)
        };
        let pair = |d: f64| {
            MolecularGeometry::new(
                Mat::zeros(2, 1),
                Mat::from_rows(&[&dir.map(|x| x * d / 2.0), &dir.map(|x| -x * d / 2.0)]),
            )
            .unwrap()
        };
        let (g0, gt) = (pair(d0), pair(dt));
        let state = DiffusedState { geometry_t: gt.clone(), t: 1, eps_features: Mat::zeros(2, 1), eps_coords: Mat::zeros(2, 3) };
        let target = score_target_coords(&g0, &state, &s, &build_edges(&g0, 0.0)).unwrap();
        let inner: f64 = (0..3).map(|c| target[(0, c)] * (gt.coords[(0, c)] - gt.coords[(1, c)])).sum();
        assert!(inner < 0.0);
    }
}

#[test]
fn loss_is_invariant_under_rigid_motion_of_data_and_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cfg = NetConfig::desk(6);
    cfg.hidden_dim = 16;
    let model = Model::new(cfg, &mut rng).unwrap();
    let s = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap();
    let config = TrainConfig::default();
    let g = methane();
    for _ in 0..10 {
        let draw = NoiseDraw::sample(5, 6, model.config().zv_dim, s.steps(), &mut rng);
        let transform = RigidTransform::random(&mut rng, 4.0);
        let moved = TrainSample { geometry: apply_rigid(&g, &transform), condition: vec![] };
        let rotated_draw = NoiseDraw { eps_coords: transform.rotate_rows(&draw.eps_coords), ..draw.clone() };
        let base = TrainSample { geometry: g.clone(), condition: vec![] };
        let (a, _) = molecule_loss(&model, &s, &config, &base, &draw).unwrap();
        let (b, _) = molecule_loss(&model, &s, &config, &moved, &rotated_draw).unwrap();
        assert_relative_eq!(a.total, b.total, max_relative = 1e-9);
        assert_relative_eq!(a.score_coord_loss, b.score_coord_loss, max_relative = 1e-9);
    }
}

#[test]
fn condition_value_changes_the_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = NetConfig::desk(6);
    cfg.hidden_dim = 16;
    cfg.condition_dim = 1;
    let model = Model::new(cfg, &mut rng).unwrap();
    let s = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap();
    let g = methane();
    let zv = [0.1, -0.2, 0.3, 0.0];
    let score = |c: f64| {
        dual_score(&model.store, &model.net, &ScoreQuery { geometry: &g, t: 30, schedule: &s, condition: &[c] }, &zv)
            .unwrap()
    };
    let (a, b) = (score(-1.0), score(1.0));
    assert!(a.feature_score.zip_map(&b.feature_score, |x, y| x - y).max_abs() > 1e-6);
    assert!(a.coord_score.zip_map(&b.coord_score, |x, y| x - y).max_abs() > 1e-6);
}

#[test]
fn monte_carlo_forward_mean_matches_signal() {
    let s = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap();
    let g = methane();
    let t = 10;
    let ab = s.alpha_bar(t);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let mut sum = Mat::zeros(5, 6);
    for _ in 0..draws {
        let out = q_sample(&g, t, &s, gaussian_mat(&mut rng, 5, 6), gaussian_mat(&mut rng, 5, 3)).unwrap();
        sum.add_assign(&out.geometry_t.atom_features);
    }
    let se = ((1.0 - ab) / draws as f64).sqrt();
    for (m, x0) in sum.as_slice().iter().zip(g.atom_features.as_slice()) {
        assert!((m / draws as f64 - ab.sqrt() * x0).abs() < 4.0 * se);
    }
}

struct LossLog(Vec<f64>);

impl TrainObserver for LossLog {
    fn on_step(&mut self, record: &StepRecord) -> mdm_core::Result<()> {
        self.0.push(record.loss.total);
        Ok(())
    }
}

#[test]
fn toy_training_reduces_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cfg = NetConfig::desk(6);
    cfg.hidden_dim = 16;
    cfg.n_layers = 1;
    cfg.tau = 3.0;
    let mut model = Model::new(cfg, &mut rng).unwrap();
    let s = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.2).unwrap();
    let data = vec![TrainSample { geometry: methane(), condition: vec![] }; 8];
    let config = TrainConfig {
        lr: 1e-2,
        batch_size: 8,
        epochs: 2000,
        max_steps: 2000,
        grad_clip: 1.0,
        lr_schedule: LrSchedule::Cosine,
        ..TrainConfig::default()
    };
    let mut log = LossLog(Vec::new());
    let steps = train(&data, &mut model, &s, &config, &mut log, &mut ChaCha8Rng::seed_from_u64(7), &mut rng).unwrap();
    assert_eq!(steps, 2000);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (first, last) = (mean(&log.0[..100]), mean(&log.0[log.0.len() - 100..]));
    assert!(last < 0.3 * first, "first {first}, last {last}");
}
