//! Loss assembly, exact gradients, Adam, the training loop and ELBO reporting.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Grads, Tape};
use crate::error::{MdmError, Result};
use crate::geometry::{build_edges, MolecularGeometry};
use crate::linalg::Mat;
use crate::model::Model;
use crate::params::ParamStore;
use crate::sampling::{reverse_mean, ModelScore, SizeHistogram};
use crate::schedule::{
    gaussian_kl, q_sample, score_target_coords, score_target_coords_gaussian, score_target_features,
    NoiseSchedule,
};
use crate::score_net::{dual_score_tape, ScoreQuery};
use crate::varnoise::{kl_loss_tape, reparameterize_tape, Reparam};

/// Which coordinate score the network is regressed onto.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordTarget {
    /// Pairwise-distance decomposition summed over all pairs.
    Distance,
    /// Exact gradient of the zero-COM Gaussian kernel.
    Gaussian,
}

/// Per-step weight on the score-matching terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreWeighting {
    /// Plain squared score error.
    Uniform,
    /// Squared score error times `1 − ᾱ_t`, i.e. squared error in noise units.
    NoiseLevel,
}

/// Learning-rate schedule over the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over the planned number of steps.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early once this many optimizer steps have run (0 = no cap).
    pub max_steps: usize,
    pub seed: u64,
    pub gamma_weighting: bool,
    pub kl_weight: f64,
    pub adam: AdamConfig,
    /// Steps between checkpoints (0 = only at the end).
    pub checkpoint_interval: usize,
    pub reparam: Reparam,
    pub coord_target: CoordTarget,
    pub score_weighting: ScoreWeighting,
    pub lr_schedule: LrSchedule,
    /// Global gradient-norm ceiling applied before each update (0 = off).
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 1,
            max_steps: 0,
            seed: 0,
            gamma_weighting: false,
            kl_weight: 1e-3,
            adam: AdamConfig::default(),
            checkpoint_interval: 0,
            reparam: Reparam::Literal,
            coord_target: CoordTarget::Gaussian,
            score_weighting: ScoreWeighting::NoiseLevel,
            lr_schedule: LrSchedule::Constant,
            grad_clip: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(MdmError::Config("lr must be a non-negative number".into()));
        }
        if self.batch_size == 0 {
            return Err(MdmError::Config("batch_size must be at least 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(MdmError::Config("grad_clip must be non-negative".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(MdmError::Config("kl_weight must be non-negative".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(MdmError::Config("adam parameters out of range".into()));
        }
        Ok(())
    }
}

/// One training molecule with its (standardized) condition values.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub geometry: MolecularGeometry,
    pub condition: Vec<f64>,
}

/// All randomness consumed by one molecule's loss.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps_features: Mat,
    pub eps_coords: Mat,
    pub z: Vec<f64>,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(n: usize, f: usize, dz: usize, steps: usize, rng: &mut R) -> Self {
        let t = rng.random_range(1..=steps);
        let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect() };
        let eps_features = Mat::from_vec(n, f, normal(n * f));
        let raw = Mat::from_vec(n, 3, normal(n * 3));
        let z = normal(dz);
        let eps_coords = crate::geometry::zero_com(&raw).expect("n ≥ 1");
        Self { t, eps_features, eps_coords, z }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub score_feature_loss: f64,
    pub score_coord_loss: f64,
    pub vn_loss: f64,
    pub total: f64,
    pub gamma_weight: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown, w: f64) {
        self.score_feature_loss += w * other.score_feature_loss;
        self.score_coord_loss += w * other.score_coord_loss;
        self.vn_loss += w * other.vn_loss;
        self.total += w * other.total;
        self.gamma_weight += w * other.gamma_weight;
    }
}

/// Loss and parameter gradients of one molecule under a fixed noise draw.
pub fn molecule_loss(
    model: &Model,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    sample: &TrainSample,
    draw: &NoiseDraw,
) -> Result<(LossBreakdown, Grads)> {
    let g0 = sample.geometry.centered()?;
    let state = q_sample(&g0, draw.t, schedule, draw.eps_features.clone(), draw.eps_coords.clone())?;
    let target_a = score_target_features(&g0, &state, schedule);
    let target_r = match config.coord_target {
        CoordTarget::Distance => score_target_coords(&g0, &state, schedule, &build_edges(&g0, 0.0))?,
        CoordTarget::Gaussian => score_target_coords_gaussian(&g0, &state, schedule)?,
    };

    let cfg = model.config();
    let mut tape = Tape::new();
    let (mu, log_sigma) =
        model.varnoise.encode_tape(&mut tape, &model.store, cfg, &state.geometry_t, draw.t, schedule.steps())?;
    let zv = reparameterize_tape(&mut tape, mu, log_sigma, &draw.z, config.reparam);
    let query = ScoreQuery {
        geometry: &state.geometry_t,
        t: draw.t,
        schedule,
        condition: &sample.condition,
    };
    let (sa, sr) = dual_score_tape(&mut tape, &model.store, &model.net, &query, zv)?;

    let ta = tape.constant(target_a);
    let tr = tape.constant(target_r);
    let da = tape.sub(sa, ta);
    let dr = tape.sub(sr, tr);
    let la = tape.sum_sq(da);
    let lr = tape.sum_sq(dr);
    let kl = kl_loss_tape(&mut tape, mu, log_sigma);

    let gamma = schedule.gamma(draw.t);
    let mut score_weight = if config.gamma_weighting { gamma } else { 1.0 };
    if config.score_weighting == ScoreWeighting::NoiseLevel {
        score_weight *= 1.0 - schedule.alpha_bar(draw.t);
    }
    let score = tape.add(la, lr);
    let score = tape.scale(score, score_weight);
    let vn = tape.scale(kl, config.kl_weight);
    let total = tape.add(score, vn);

    let breakdown = LossBreakdown {
        score_feature_loss: tape.scalar(la),
        score_coord_loss: tape.scalar(lr),
        vn_loss: tape.scalar(kl),
        total: tape.scalar(total),
        gamma_weight: gamma,
    };
    let grads = tape.backward(total, &model.store);
    Ok((breakdown, grads))
}

/// Mean loss and gradient over a batch; draws `t`, `ε` and `z` per molecule.
pub fn training_step<R: Rng + ?Sized>(
    batch: &[&TrainSample],
    model: &Model,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, Grads, f64)> {
    let cfg = model.config();
    let w = 1.0 / batch.len() as f64;
    let mut grads = Grads::zeros_like(&model.store);
    let mut loss = LossBreakdown::default();
    let mut t_mean = 0.0;
    for (index, sample) in batch.iter().enumerate() {
        let g = &sample.geometry;
        let draw = NoiseDraw::sample(g.n_atoms(), g.feature_dim(), cfg.zv_dim, schedule.steps(), rng);
        let (l, gr) = molecule_loss(model, schedule, config, sample, &draw)?;
        if !l.total.is_finite() || !gr.is_finite() {
            return Err(MdmError::NumericalDivergence { index });
        }
        loss.accumulate(&l, w);
        grads.add_scaled(&gr, w);
        t_mean += w * draw.t as f64;
    }
    Ok((loss, grads, t_mean))
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Grads,
    pub v: Grads,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self { m: Grads::zeros_like(store), v: Grads::zeros_like(store), step: 0 }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_update(store: &mut ParamStore, grads: &Grads, state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let bc1 = 1.0 - libm::pow(cfg.beta1, state.step as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, state.step as f64);
    for (id, g) in grads.blocks.iter().enumerate() {
        let m = state.m.blocks[id].as_mut_slice();
        let v = state.v.blocks[id].as_mut_slice();
        let p = store.value_mut(id).as_mut_slice();
        for k in 0..p.len() {
            let gk = g.as_slice()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            p[k] -= lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
}

/// Per-step record handed to the [`TrainObserver`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t_mean: f64,
    pub loss: LossBreakdown,
}

/// Receives metrics and checkpoint requests from [`train`].
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _step: usize, _model: &Model) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoopObserver;
impl TrainObserver for NoopObserver {}

/// Molecule-size counts of a dataset.
pub fn size_histogram(samples: &[TrainSample]) -> SizeHistogram {
    let mut h = SizeHistogram::new();
    for s in samples {
        *h.entry(s.geometry.n_atoms()).or_insert(0) += 1;
    }
    h
}

/// Shuffled mini-batch training. Returns the number of optimizer steps run.
/// `shuffle_rng` orders the data, `noise_rng` draws `t`, `ε` and `z`. On
/// divergence the model keeps its last finite parameters and no further
/// checkpoints are emitted.
pub fn train<R: Rng + ?Sized, S: Rng + ?Sized>(
    dataset: &[TrainSample],
    model: &mut Model,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
    shuffle_rng: &mut S,
    noise_rng: &mut R,
) -> Result<usize> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(MdmError::EmptyDataset);
    }
    let mut adam = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut planned = config.epochs.saturating_mul(dataset.len().div_ceil(config.batch_size));
    if config.max_steps > 0 {
        planned = planned.min(config.max_steps);
    }
    let mut step = 0;
    'outer: for _ in 0..config.epochs {
        order.shuffle(shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps > 0 && step >= config.max_steps {
                break 'outer;
            }
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, mut grads, t_mean) = match training_step(&batch, model, schedule, config, noise_rng) {
                Ok(v) => v,
                Err(MdmError::NumericalDivergence { index }) => {
                    return Err(MdmError::NumericalDivergence { index: chunk[index] })
                }
                Err(e) => return Err(e),
            };
            if config.grad_clip > 0.0 {
                grads.clip_norm(config.grad_clip);
            }
            let backup = model.store.clone();
            let lr = match config.lr_schedule {
                LrSchedule::Constant => config.lr,
                LrSchedule::Cosine => {
                    0.5 * config.lr * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / planned as f64))
                }
            };
            adam_update(&mut model.store, &grads, &mut adam, lr, &config.adam);
            if !model.store.is_finite() {
                model.store = backup;
                return Err(MdmError::NumericalDivergence { index: chunk[0] });
            }
            step += 1;
            observer.on_step(&StepRecord { step, t_mean, loss })?;
            if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
                observer.checkpoint(step, model)?;
            }
        }
    }
    observer.checkpoint(step, model)?;
    Ok(step)
}

/// Monte Carlo estimates of the variational bound's terms (in nats, averaged
/// over molecules).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboReport {
    pub l0: f64,
    pub lt_sum: f64,
    pub lvn_sum: f64,
    pub l_final: f64,
}

/// Bin width of the discretized Gaussian used for `L_0`.
pub const L0_BIN_WIDTH: f64 = 2.0 / 255.0;

/// `KL(q(𝒢_T | 𝒢_0) ‖ N(0, I))` on the feature and zero-COM coordinate subspaces.
pub fn prior_kl(g0: &MolecularGeometry, schedule: &NoiseSchedule) -> Result<f64> {
    let ab = schedule.alpha_bar(schedule.steps());
    let s = libm::sqrt(ab);
    let n = g0.n_atoms();
    let coords = crate::geometry::zero_com(&g0.coords)?;
    let mean_part: f64 = g0.atom_features.as_slice().iter().chain(coords.as_slice()).map(|&x| gaussian_kl(s * x, 1.0 - ab, 0.0, 1.0) - gaussian_kl(0.0, 1.0 - ab, 0.0, 1.0)).sum();
    let dims = (n * g0.feature_dim() + (n - 1) * 3) as f64;
    Ok(mean_part + dims * gaussian_kl(0.0, 1.0 - ab, 0.0, 1.0))
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean) * (x - mean) / var + libm::log(2.0 * core::f64::consts::PI * var))
}

/// Estimates `L_0`, `Σ_{t≥2} L_{t−1}`, `Σ_t L_vn` and `L_T` using `mc_steps`
/// random timesteps per molecule. The latent is the encoder mean at each step.
pub fn elbo_report<R: Rng + ?Sized>(
    samples: &[TrainSample],
    model: &Model,
    schedule: &NoiseSchedule,
    mc_steps: usize,
    rng: &mut R,
) -> Result<ElboReport> {
    if samples.is_empty() {
        return Err(MdmError::EmptyDataset);
    }
    let steps = schedule.steps();
    let cfg = model.config();
    let mut report = ElboReport::default();
    let w = 1.0 / samples.len() as f64;
    for sample in samples {
        let g0 = sample.geometry.centered()?;
        let (n, f) = (g0.n_atoms(), g0.feature_dim());
        report.l_final += w * prior_kl(&g0, schedule)?;

        let diffuse = |t: usize, rng: &mut R| -> Result<MolecularGeometry> {
            let d = NoiseDraw::sample(n, f, 0, steps, rng);
            Ok(q_sample(&g0, t, schedule, d.eps_features, d.eps_coords)?.geometry_t)
        };
        let latent = |g: &MolecularGeometry, t: usize| -> Result<(Vec<f64>, f64)> {
            let v = model.varnoise.encode(&model.store, cfg, g, t, steps)?;
            let kl = crate::varnoise::kl_loss(&v.mu_v, &v.sigma_v)?;
            Ok((v.mu_v, kl))
        };

        // L_0: discretized Gaussian likelihood of 𝒢_0 under p_θ(𝒢_0 | 𝒢_1).
        let g1 = diffuse(1, rng)?;
        let (zv, _) = latent(&g1, 1)?;
        let score = ModelScore { model, z_v: &zv, condition: &sample.condition };
        let mean = reverse_mean(&score, &g1, 1, schedule)?;
        let var = if schedule.sigma(1) > 0.0 { schedule.sigma(1).powi(2) } else { schedule.beta(1) };
        let ll: f64 = g0
            .atom_features
            .as_slice()
            .iter()
            .zip(mean.atom_features.as_slice())
            .chain(g0.coords.as_slice().iter().zip(mean.coords.as_slice()))
            .map(|(&x, &m)| log_normal_pdf(x, m, var) + libm::log(L0_BIN_WIDTH))
            .sum();
        report.l0 += w * -ll;

        for _ in 0..mc_steps {
            let t = rng.random_range(1..=steps);
            let gt = diffuse(t, rng)?;
            let (zv, kl) = latent(&gt, t)?;
            report.lvn_sum += w * kl * steps as f64 / mc_steps as f64;
            if t < 2 || steps < 2 {
                continue;
            }
            let score = ModelScore { model, z_v: &zv, condition: &sample.condition };
            let mean = reverse_mean(&score, &gt, t, schedule)?;
            let (post, bt) = crate::schedule::posterior_params(&g0, &gt, t, schedule)?;
            let s2 = schedule.sigma(t).powi(2);
            let term: f64 = post
                .atom_features
                .as_slice()
                .iter()
                .zip(mean.atom_features.as_slice())
                .chain(post.coords.as_slice().iter().zip(mean.coords.as_slice()))
                .map(|(&a, &b)| (a - b) * (a - b) / (2.0 * s2))
                .sum::<f64>()
                + (n * f + (n - 1) * 3) as f64 * (gaussian_kl(0.0, bt, 0.0, s2));
            report.lt_sum += w * term * (steps - 1) as f64 / mc_steps as f64;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ElementSet;
    use crate::schedule::{make_schedule, ScheduleKind, SigmaMode};
    use crate::score_net::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn methane() -> TrainSample {
        let coords = Mat::from_rows(&[
            &[0.0, 0.0, 0.0],
            &[0.629, 0.629, 0.629],
            &[-0.629, -0.629, 0.629],
            &[-0.629, 0.629, -0.629],
            &[0.629, -0.629, -0.629],
        ]);
        let g = MolecularGeometry::from_elements(&ElementSet::default(), &[1, 0, 0, 0, 0], &[0; 5], coords).unwrap();
        TrainSample { geometry: g, condition: Vec::new() }
    }

    fn small_model(seed: u64) -> Model {
        let mut cfg = NetConfig::desk(6);
        cfg.hidden_dim = 8;
        cfg.n_layers = 1;
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut store = ParamStore::new();
        store.push("x", Mat::zeros(1, 1));
        let mut st = AdamState::new(&store);
        let g = Grads { blocks: alloc::vec![Mat::filled(1, 1, 1.0)] };
        adam_update(&mut store, &g, &mut st, 0.1, &AdamConfig::default());
        assert!((store.value(0)[(0, 0)] + 0.1).abs() < 1e-6);
        // constant gradient keeps the bias-corrected step at lr
        adam_update(&mut store, &g, &mut st, 0.1, &AdamConfig::default());
        assert!((store.value(0)[(0, 0)] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_only_decays_moments() {
        let mut store = ParamStore::new();
        store.push("x", Mat::filled(1, 2, 0.5));
        let mut st = AdamState::new(&store);
        st.m.blocks[0] = Mat::filled(1, 2, 0.2);
        st.v.blocks[0] = Mat::filled(1, 2, 0.4);
        let g = Grads::zeros_like(&store);
        let before = store.clone();
        let mut zero_lr = st.clone();
        adam_update(&mut store, &g, &mut zero_lr, 0.0, &AdamConfig::default());
        assert_eq!(store, before);
        assert!((zero_lr.m.blocks[0][(0, 0)] - 0.18).abs() < 1e-15);
        assert!((zero_lr.v.blocks[0][(0, 0)] - 0.4 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn perfect_network_has_zero_score_loss() {
        let mut model = small_model(1);
        // zero the score encoders: both heads output zero
        model.net.local.zero(&mut model.store);
        model.net.global.zero(&mut model.store);
        let s = make_schedule(ScheduleKind::Linear, 10, 0.01, 0.2).unwrap();
        let sample = methane();
        let draw = NoiseDraw {
            t: 3,
            eps_features: Mat::zeros(5, 6),
            eps_coords: Mat::zeros(5, 3),
            z: alloc::vec![0.1, 0.2, -0.3, 0.0],
        };
        let cfg = TrainConfig { coord_target: CoordTarget::Gaussian, kl_weight: 0.5, ..TrainConfig::default() };
        let (l, _) = molecule_loss(&model, &s, &cfg, &sample, &draw).unwrap();
        assert!(l.score_feature_loss.abs() < 1e-20);
        assert!(l.score_coord_loss < 1e-20);
        assert!((l.total - 0.5 * l.vn_loss).abs() < 1e-15);
        // the distance target is not zero at ε = 0: noiseless distances shrink by √ᾱ_t
        let cfg = TrainConfig { coord_target: CoordTarget::Distance, ..cfg };
        let (l, _) = molecule_loss(&model, &s, &cfg, &sample, &draw).unwrap();
        assert!(l.score_coord_loss > 0.0);
    }

    #[test]
    fn losses_are_finite_and_non_negative() {
        let model = small_model(2);
        let s = make_schedule(ScheduleKind::Linear, 50, 1e-3, 0.2).unwrap();
        let data = [methane(), methane()];
        let batch: Vec<&TrainSample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (l, g, _) = training_step(&batch, &model, &s, &TrainConfig::default(), &mut rng).unwrap();
            assert!(l.score_feature_loss >= 0.0 && l.score_coord_loss >= 0.0 && l.vn_loss >= 0.0);
            assert!(l.total.is_finite() && g.is_finite());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut model = small_model(4);
        let before = model.store.clone();
        let s = make_schedule(ScheduleKind::Linear, 10, 1e-3, 0.2).unwrap();
        let cfg = TrainConfig { lr: 0.0, batch_size: 1, epochs: 1, ..TrainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let steps = train(&[methane()], &mut model, &s, &cfg, &mut NoopObserver, &mut rng.clone(), &mut rng).unwrap();
        assert_eq!(steps, 1);
        assert_eq!(model.store, before);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = small_model(6);
        let s = make_schedule(ScheduleKind::Linear, 10, 1e-3, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = train(&[], &mut model, &s, &TrainConfig::default(), &mut NoopObserver, &mut rng.clone(), &mut rng);
        assert_eq!(r, Err(MdmError::EmptyDataset));
    }

    #[test]
    fn prior_kl_examples() {
        // ᾱ_T → 0 makes q(𝒢_T | 𝒢_0) the standard normal
        let s = make_schedule(ScheduleKind::Linear, 1000, 1e-2, 0.5).unwrap();
        assert!(prior_kl(&methane().geometry, &s).unwrap() < 1e-12);
        // crafted ᾱ_T: mean √ᾱ·x = 0.5 at unit variance gives 0.125
        let tiny = NoiseSchedule::from_betas(alloc::vec![1.0 - 1e-12], SigmaMode::Posterior).unwrap();
        let x = 0.5 / tiny.alpha_bar(1).sqrt();
        let g = MolecularGeometry::new(Mat::from_rows(&[&[x]]), Mat::zeros(1, 3)).unwrap();
        assert!((prior_kl(&g, &tiny).unwrap() - 0.125).abs() < 1e-6);
    }

    #[test]
    fn elbo_terms_are_finite() {
        let model = small_model(7);
        let s = make_schedule(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
        let r = elbo_report(&[methane()], &model, &s, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        for v in [r.l0, r.lt_sum, r.lvn_sum, r.l_final] {
            assert!(v.is_finite());
        }
        assert!(r.lvn_sum >= 0.0 && r.l_final >= 0.0);
    }

    #[test]
    fn histogram_counts_sizes() {
        let h = size_histogram(&[methane(), methane()]);
        assert_eq!(h.get(&5), Some(&2));
        assert_eq!(h.values().sum::<usize>(), 2);
    }
}
