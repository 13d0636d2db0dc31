//! Property regressor and the conditional-generation MAE protocol with its
//! baselines (shuffled labels, size-only predictor, real-data lower bound).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Grads, Tape};
use crate::error::{MdmError, Result};
use crate::geometry::{EdgeType, MolecularGeometry};
use crate::linalg::Mat;
use crate::params::{Linear, ParamStore};
use crate::score_net::{atom_inputs, pair_geometry, NetConfig, Trunk};
use crate::training::{adam_update, AdamConfig, AdamState};
use crate::varnoise::all_pairs;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self { hidden_dim: 32, n_layers: 2, epochs: 60, lr: 3e-3, batch_size: 16 }
    }
}

/// Invariant SchNet with mean pooling and a scalar head; predictions are
/// made in standardized units and mapped back with the fit statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyRegressor {
    pub net: NetConfig,
    pub store: ParamStore,
    pub trunk: Trunk,
    pub head: (Linear, Linear),
    pub mean: f64,
    pub std: f64,
    pub trained: bool,
}

impl PropertyRegressor {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, cfg: &RegressorConfig, rng: &mut R) -> Self {
        let mut net = NetConfig::desk(feature_dim);
        net.hidden_dim = cfg.hidden_dim;
        net.n_layers = cfg.n_layers;
        net.zv_dim = 0;
        let mut store = ParamStore::new();
        let input_dim = feature_dim + net.coord_embed_dim();
        let trunk = Trunk::new(&mut store, "regressor", input_dim, &net, rng);
        let head = (
            Linear::new(&mut store, "regressor.head.0", net.hidden_dim, net.hidden_dim, true, rng),
            Linear::new(&mut store, "regressor.head.1", net.hidden_dim, 1, true, rng),
        );
        Self { net, store, trunk, head, mean: 0.0, std: 1.0, trained: false }
    }

    fn forward(&self, tape: &mut Tape, g: &MolecularGeometry) -> Result<crate::autodiff::Var> {
        let inputs = atom_inputs(g, &[], None, &self.net)?;
        let pairs = all_pairs(g.n_atoms());
        let pg = pair_geometry(&g.coords, &pairs, EdgeType::Global, &self.net)?;
        let x = tape.constant(inputs);
        let rbf = tape.constant(pg.rbf);
        let h = self.trunk.forward(tape, &self.store, x, &pairs, rbf);
        let pooled = tape.mean_rows(h);
        let a = self.head.0.forward(tape, &self.store, pooled);
        let a = tape.ssp(a);
        Ok(self.head.1.forward(tape, &self.store, a))
    }

    /// Mean-squared-error fit with Adam on standardized targets.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        data: &[(MolecularGeometry, f64)],
        cfg: &RegressorConfig,
        rng: &mut R,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(MdmError::EmptyDataset);
        }
        let n = data.len() as f64;
        self.mean = data.iter().map(|d| d.1).sum::<f64>() / n;
        let var = data.iter().map(|d| (d.1 - self.mean).powi(2)).sum::<f64>() / n;
        self.std = if var > 0.0 { libm::sqrt(var) } else { 1.0 };
        let mut adam = AdamState::new(&self.store);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let mut grads = Grads::zeros_like(&self.store);
                for &i in chunk {
                    let (g, y) = &data[i];
                    let mut tape = Tape::new();
                    let pred = self.forward(&mut tape, g)?;
                    let target = tape.constant(Mat::from_vec(1, 1, alloc::vec![(y - self.mean) / self.std]));
                    let diff = tape.sub(pred, target);
                    let loss = tape.sum_sq(diff);
                    grads.add_scaled(&tape.backward(loss, &self.store), 1.0 / chunk.len() as f64);
                }
                adam_update(&mut self.store, &grads, &mut adam, cfg.lr, &AdamConfig::default());
            }
        }
        self.trained = true;
        Ok(())
    }

    pub fn predict(&self, g: &MolecularGeometry) -> Result<f64> {
        if !self.trained {
            return Err(MdmError::UntrainedRegressor);
        }
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, g)?;
        Ok(self.mean + self.std * tape.scalar(out))
    }

    /// Mean absolute error over labelled molecules.
    pub fn mae(&self, data: &[(MolecularGeometry, f64)]) -> Result<f64> {
        if data.is_empty() {
            return Err(MdmError::EmptyDataset);
        }
        let mut acc = 0.0;
        for (g, y) in data {
            acc += (self.predict(g)? - y).abs();
        }
        Ok(acc / data.len() as f64)
    }
}

/// Best constant (median) per atom count, with the global median as fallback.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeBaseline {
    pub by_size: BTreeMap<usize, f64>,
    pub fallback: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl SizeBaseline {
    pub fn fit(data: &[(MolecularGeometry, f64)]) -> Result<Self> {
        if data.is_empty() {
            return Err(MdmError::EmptyDataset);
        }
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (g, y) in data {
            groups.entry(g.n_atoms()).or_default().push(*y);
        }
        Ok(Self {
            fallback: median(data.iter().map(|d| d.1).collect()),
            by_size: groups.into_iter().map(|(n, v)| (n, median(v))).collect(),
        })
    }

    pub fn predict(&self, n_atoms: usize) -> f64 {
        self.by_size.get(&n_atoms).copied().unwrap_or(self.fallback)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalReport {
    pub model_mae: f64,
    pub naive_mae: f64,
    pub natoms_mae: f64,
    pub lower_bound_mae: f64,
}

/// Scores generated molecules against their target property values.
/// `eval_split` is real labelled data the regressor did not train on.
pub fn conditional_mae_eval<R: Rng + ?Sized>(
    generated: &[(MolecularGeometry, f64)],
    regressor: &PropertyRegressor,
    eval_split: &[(MolecularGeometry, f64)],
    size_baseline: &SizeBaseline,
    rng: &mut R,
) -> Result<ConditionalReport> {
    if !regressor.trained {
        return Err(MdmError::UntrainedRegressor);
    }
    if generated.is_empty() || eval_split.is_empty() {
        return Err(MdmError::EmptyDataset);
    }
    let model_mae = regressor.mae(generated)?;
    let lower_bound_mae = regressor.mae(eval_split)?;
    let mut labels: Vec<f64> = eval_split.iter().map(|d| d.1).collect();
    labels.shuffle(rng);
    let mut naive = 0.0;
    for ((g, _), y) in eval_split.iter().zip(&labels) {
        naive += (regressor.predict(g)? - y).abs();
    }
    let natoms = eval_split.iter().map(|(g, y)| (size_baseline.predict(g.n_atoms()) - y).abs()).sum::<f64>();
    let m = eval_split.len() as f64;
    Ok(ConditionalReport { model_mae, naive_mae: naive / m, natoms_mae: natoms / m, lower_bound_mae })
}
