//! Variational noising: an invariant encoder for `(μ_v, σ_v)`, the
//! reparameterized latent `z_v`, its KL penalty, and prior draws.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{MdmError, Result};
use crate::geometry::{EdgeType, MolecularGeometry};
use crate::linalg::Mat;
use crate::params::{Linear, ParamStore};
use crate::score_net::{atom_inputs, pair_geometry, NetConfig, Trunk};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorMode {
    Gaussian,
    Uniform,
}

/// `z_v = μ + σ²·z` (literal) or `μ + σ·z` (standard).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reparam {
    #[default]
    Literal,
    Standard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarNoise {
    pub mu_v: Vec<f64>,
    pub sigma_v: Vec<f64>,
}

/// SchNet trunk over all pairs, mean-pooled, with heads for `μ_v` and `log σ_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarNoiseEncoder {
    pub trunk: Trunk,
    pub mu_head: Linear,
    pub log_sigma_head: Linear,
}

impl VarNoiseEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &NetConfig, rng: &mut R) -> Self {
        let input_dim = cfg.feature_dim + cfg.time_embed_dim + cfg.coord_embed_dim();
        let trunk = Trunk::new(store, "varnoise", input_dim, cfg, rng);
        let mu_head = Linear::new(store, "varnoise.mu_head", cfg.hidden_dim, cfg.zv_dim, true, rng);
        let log_sigma_head = Linear::new(store, "varnoise.log_sigma_head", cfg.hidden_dim, cfg.zv_dim, true, rng);
        Self { trunk, mu_head, log_sigma_head }
    }

    /// Records `(μ_v, log σ_v)` as 1×d_z nodes.
    pub fn encode_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cfg: &NetConfig,
        geometry: &MolecularGeometry,
        t: usize,
        steps: usize,
    ) -> Result<(Var, Var)> {
        let inputs = atom_inputs(geometry, &[], Some((t, steps)), cfg)?;
        let pairs = all_pairs(geometry.n_atoms());
        let pg = pair_geometry(&geometry.coords, &pairs, EdgeType::Global, cfg)?;
        let x = tape.constant(inputs);
        let rbf = tape.constant(pg.rbf);
        let h = self.trunk.forward(tape, store, x, &pairs, rbf);
        let pooled = tape.mean_rows(h);
        let mu = self.mu_head.forward(tape, store, pooled);
        let log_sigma = self.log_sigma_head.forward(tape, store, pooled);
        Ok((mu, log_sigma))
    }

    pub fn encode(
        &self,
        store: &ParamStore,
        cfg: &NetConfig,
        geometry: &MolecularGeometry,
        t: usize,
        steps: usize,
    ) -> Result<VarNoise> {
        let mut tape = Tape::new();
        let (mu, ls) = self.encode_tape(&mut tape, store, cfg, geometry, t, steps)?;
        Ok(VarNoise {
            mu_v: tape.value(mu).as_slice().to_vec(),
            sigma_v: tape.value(ls).as_slice().iter().map(|&v| libm::exp(v)).collect(),
        })
    }

    pub fn zero(&self, store: &mut ParamStore) {
        self.trunk.input_embed.zero(store);
        for l in &self.trunk.layers {
            [l.filter, l.w0, l.w1, l.w2].iter().for_each(|lin| lin.zero(store));
        }
        self.mu_head.zero(store);
        self.log_sigma_head.zero(store);
    }
}

pub(crate) fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

pub fn reparameterize(mu_v: &[f64], sigma_v: &[f64], z: &[f64], mode: Reparam) -> Vec<f64> {
    mu_v.iter()
        .zip(sigma_v)
        .zip(z)
        .map(|((&m, &s), &e)| match mode {
            Reparam::Literal => m + s * s * e,
            Reparam::Standard => m + s * e,
        })
        .collect()
}

/// Reparameterization on the tape, from `log σ_v`.
pub fn reparameterize_tape(tape: &mut Tape, mu: Var, log_sigma: Var, z: &[f64], mode: Reparam) -> Var {
    let power = match mode {
        Reparam::Literal => 2.0,
        Reparam::Standard => 1.0,
    };
    let scaled = tape.scale(log_sigma, power);
    let spread = tape.exp(scaled);
    let zc = tape.constant(Mat::from_vec(1, z.len(), z.to_vec()));
    let noise = tape.mul(spread, zc);
    tape.add(mu, noise)
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_loss(mu_v: &[f64], sigma_v: &[f64]) -> Result<f64> {
    if sigma_v.iter().any(|&s| !(s > 0.0)) {
        return Err(MdmError::InvalidSigma);
    }
    Ok(0.5
        * mu_v
            .iter()
            .zip(sigma_v)
            .map(|(&m, &s)| m * m + s * s - 1.0 - 2.0 * libm::log(s))
            .sum::<f64>())
}

/// The same KL recorded on the tape from `(μ_v, log σ_v)`.
pub fn kl_loss_tape(tape: &mut Tape, mu: Var, log_sigma: Var) -> Var {
    let dz = tape.value(mu).cols() as f64;
    let m2 = tape.sum_sq(mu);
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let var_sum = tape.sum(var);
    let ls_sum = tape.sum(two_ls);
    let a = tape.add(m2, var_sum);
    let b = tape.sub(a, ls_sum);
    let offset = tape.constant(Mat::from_vec(1, 1, alloc::vec![dz]));
    let c = tape.sub(b, offset);
    tape.scale(c, 0.5)
}

pub fn sample_prior<R: Rng + ?Sized>(mode: PriorMode, dz: usize, rng: &mut R) -> Vec<f64> {
    match mode {
        PriorMode::Gaussian => (0..dz).map(|_| StandardNormal.sample(rng)).collect(),
        PriorMode::Uniform => (0..dz).map(|_| rng.random_range(-1.0..=1.0)).collect(),
    }
}
