//! Dual SchNet score network over local (d ≤ τ) and global (d > τ) edges.
//!
//! Each encoder embeds atoms, runs continuous-filter message passing over its
//! own edge set, and emits a per-atom feature score plus one scalar score per
//! edge. Edge scores become coordinate scores through the dist-transition
//! `Σ_j s(d_ij)·(r_i − r_j)/d_ij`, which is rotation-equivariant by
//! construction. Both raw heads are multiplied by `1/√(1−ᾱ_t)` so that the
//! learnable part stays O(1) across noise levels.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{MdmError, Result};
use crate::geometry::{build_edges_from_coords, distance, EdgeType, MolecularGeometry};
use crate::linalg::Mat;
use crate::params::{Linear, ParamStore};
use crate::schedule::NoiseSchedule;

/// Architecture hyperparameters shared by both encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Width of atom features `f` (element one-hot plus charge).
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub rbf_count: usize,
    pub rbf_cutoff: f64,
    pub time_embed_dim: usize,
    pub tau: f64,
    pub literal_coord_embed: bool,
    /// 0 for unconditional models.
    pub condition_dim: usize,
    pub zv_dim: usize,
}

impl NetConfig {
    pub fn desk(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim: 32,
            n_layers: 2,
            rbf_count: 64,
            rbf_cutoff: 10.0,
            time_embed_dim: 32,
            tau: crate::geometry::DEFAULT_TAU,
            literal_coord_embed: false,
            condition_dim: 0,
            zv_dim: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MdmError::Config(m.into()));
        if self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("feature_dim and hidden_dim must be positive");
        }
        if self.rbf_count < 2 || !(self.rbf_cutoff > 0.0) {
            return bad("rbf_count must be ≥ 2 and rbf_cutoff > 0");
        }
        if self.time_embed_dim % 2 != 0 {
            return bad("time_embed_dim must be even");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        Ok(())
    }

    pub(crate) fn coord_embed_dim(&self) -> usize {
        if self.literal_coord_embed {
            3
        } else {
            self.rbf_count
        }
    }
}

/// Gaussian radial basis expansion of a distance on `[0, cutoff]`.
pub fn rbf_expand(d: f64, count: usize, cutoff: f64, out: &mut [f64]) {
    let spacing = cutoff / (count - 1) as f64;
    let gamma = 0.5 / (spacing * spacing);
    for (k, o) in out.iter_mut().enumerate().take(count) {
        let diff = d - k as f64 * spacing;
        *o = libm::exp(-gamma * diff * diff);
    }
}

/// Sinusoidal embedding of `1000·t/T`.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Vec<f64> {
    let x = 1000.0 * t as f64 / steps as f64;
    let half = dim / 2;
    let mut out = alloc::vec![0.0; dim];
    for k in 0..half {
        let freq = libm::pow(10000.0, -(k as f64) / half as f64);
        out[k] = libm::sin(x * freq);
        out[half + k] = libm::cos(x * freq);
    }
    out
}

/// One continuous-filter convolution: `σ(W₀h_i + Σ_j W₁φ_w(d_ij) ⊙ W₂h_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SchNetLayer {
    pub filter: Linear,
    pub w0: Linear,
    pub w1: Linear,
    pub w2: Linear,
}

/// Input embedding plus message-passing layers; shared by score encoders,
/// the noise encoder and the property regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub input_embed: Linear,
    pub layers: Vec<SchNetLayer>,
}

impl Trunk {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        cfg: &NetConfig,
        rng: &mut R,
    ) -> Self {
        let h = cfg.hidden_dim;
        let input_embed = Linear::new(store, &alloc::format!("{prefix}.input_embed"), input_dim, h, true, rng);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = alloc::format!("{prefix}.layer{l}");
                SchNetLayer {
                    filter: Linear::new(store, &alloc::format!("{p}.filter"), cfg.rbf_count, h, true, rng),
                    w0: Linear::new(store, &alloc::format!("{p}.w0"), h, h, true, rng),
                    w1: Linear::new(store, &alloc::format!("{p}.w1"), h, h, false, rng),
                    w2: Linear::new(store, &alloc::format!("{p}.w2"), h, h, false, rng),
                }
            })
            .collect();
        Self { input_embed, layers }
    }

    /// Runs the trunk over undirected `pairs`; `pair_rbf` holds one basis row per pair.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
        pairs: &[(usize, usize)],
        pair_rbf: Var,
    ) -> Var {
        let n = tape.value(input).rows();
        let pre = self.input_embed.forward(tape, store, input);
        let mut h = tape.ssp(pre);
        if self.layers.is_empty() {
            return h;
        }
        let e = pairs.len();
        // directed edges: (dst i, src j) then (dst j, src i)
        let dst: Vec<usize> = pairs.iter().map(|p| p.0).chain(pairs.iter().map(|p| p.1)).collect();
        let src: Vec<usize> = pairs.iter().map(|p| p.1).chain(pairs.iter().map(|p| p.0)).collect();
        let dup: Vec<usize> = (0..e).chain(0..e).collect();
        for layer in &self.layers {
            let self_term = layer.w0.forward(tape, store, h);
            if e == 0 {
                h = tape.ssp(self_term);
                continue;
            }
            let f = layer.filter.forward(tape, store, pair_rbf);
            let f = tape.ssp(f);
            let wf = layer.w1.forward(tape, store, f);
            let wf = tape.gather(wf, dup.clone());
            let wh = layer.w2.forward(tape, store, h);
            let wh = tape.gather(wh, src.clone());
            let msg = tape.mul(wf, wh);
            let agg = tape.scatter_add(msg, dst.clone(), n);
            let sum = tape.add(self_term, agg);
            h = tape.ssp(sum);
        }
        h
    }
}

/// Weights of one score encoder (local or global).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub edge_type: EdgeType,
    pub edge_mlp: (Linear, Linear),
    pub trunk: Trunk,
    pub node_mlp: (Linear, Linear),
    pub distance_mlp: (Linear, Linear),
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        edge_type: EdgeType,
        cfg: &NetConfig,
        rng: &mut R,
    ) -> Self {
        let h = cfg.hidden_dim;
        let input_dim =
            cfg.feature_dim + cfg.condition_dim + cfg.time_embed_dim + cfg.coord_embed_dim() + cfg.zv_dim;
        let name = |s: &str| alloc::format!("{prefix}.{s}");
        Self {
            edge_type,
            edge_mlp: (
                Linear::new(store, &name("edge_mlp.0"), cfg.rbf_count + 1, h, true, rng),
                Linear::new(store, &name("edge_mlp.1"), h, h, true, rng),
            ),
            trunk: Trunk::new(store, prefix, input_dim, cfg, rng),
            node_mlp: (
                Linear::new(store, &name("node_mlp.0"), h, h, true, rng),
                Linear::new(store, &name("node_mlp.1"), h, cfg.feature_dim, true, rng),
            ),
            distance_mlp: (
                Linear::new(store, &name("distance_mlp.0"), 2 * h, h, true, rng),
                Linear::new(store, &name("distance_mlp.1"), h, 1, true, rng),
            ),
        }
    }

    /// Zeroes every weight of this encoder.
    pub fn zero(&self, store: &mut ParamStore) {
        let mut all = alloc::vec![
            self.edge_mlp.0,
            self.edge_mlp.1,
            self.trunk.input_embed,
            self.node_mlp.0,
            self.node_mlp.1,
            self.distance_mlp.0,
            self.distance_mlp.1
        ];
        for l in &self.trunk.layers {
            all.extend([l.filter, l.w0, l.w1, l.w2]);
        }
        all.iter().for_each(|lin| lin.zero(store));
    }
}

/// Both encoders plus their shared hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DualParams {
    pub config: NetConfig,
    pub local: EncoderParams,
    pub global: EncoderParams,
}

impl DualParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: NetConfig, rng: &mut R) -> Self {
        let local = EncoderParams::new(store, "local", EdgeType::Local, &cfg, rng);
        let global = EncoderParams::new(store, "global", EdgeType::Global, &cfg, rng);
        Self { config: cfg, local, global }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutput {
    pub feature_score: Mat,
    pub coord_score: Mat,
}

fn edge_flag(kind: EdgeType) -> f64 {
    match kind {
        EdgeType::Local => 1.0,
        EdgeType::Global => -1.0,
    }
}

/// Per-pair geometric quantities that do not depend on parameters.
pub(crate) struct PairGeometry {
    pub(crate) pairs: Vec<(usize, usize)>,
    pub(crate) rbf: Mat,
    edge_input: Mat,
    unit: Mat,
}

pub(crate) fn pair_geometry(coords: &Mat, pairs: &[(usize, usize)], kind: EdgeType, cfg: &NetConfig) -> Result<PairGeometry> {
    let (e, k) = (pairs.len(), cfg.rbf_count);
    let mut rbf = Mat::zeros(e, k);
    let mut edge_input = Mat::zeros(e, k + 1);
    let mut unit = Mat::zeros(e, 3);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let d = distance(coords.row(i), coords.row(j));
        if d < 1e-8 {
            return Err(MdmError::CoincidentAtoms { i, j });
        }
        rbf_expand(d, k, cfg.rbf_cutoff, rbf.row_mut(p));
        edge_input.row_mut(p)[..k].copy_from_slice(rbf.row(p));
        edge_input[(p, k)] = edge_flag(kind);
        for c in 0..3 {
            unit[(p, c)] = (coords[(i, c)] - coords[(j, c)]) / d;
        }
    }
    Ok(PairGeometry { pairs: pairs.to_vec(), rbf, edge_input, unit })
}

/// Parameter-free per-atom inputs: `[A, c, time embedding, coordinate embedding]`.
fn static_inputs(
    geometry: &MolecularGeometry,
    t: usize,
    steps: usize,
    condition: &[f64],
    cfg: &NetConfig,
) -> Result<Mat> {
    if condition.len() != cfg.condition_dim {
        return Err(MdmError::ConditionShape { expected: cfg.condition_dim, got: condition.len() });
    }
    atom_inputs(geometry, condition, Some((t, steps)), cfg)
}

/// `[A, extra, time embedding (if any), coordinate embedding]` per atom.
pub(crate) fn atom_inputs(
    geometry: &MolecularGeometry,
    extra: &[f64],
    time: Option<(usize, usize)>,
    cfg: &NetConfig,
) -> Result<Mat> {
    if geometry.feature_dim() != cfg.feature_dim {
        return Err(MdmError::Shape(alloc::format!(
            "feature width {} does not match network width {}",
            geometry.feature_dim(),
            cfg.feature_dim
        )));
    }
    let n = geometry.n_atoms();
    let temb = time.map(|(t, steps)| time_embedding(t, steps, cfg.time_embed_dim)).unwrap_or_default();
    let com = geometry.coords.col_mean();
    let width = cfg.feature_dim + extra.len() + temb.len() + cfg.coord_embed_dim();
    let mut out = Mat::zeros(n, width);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..cfg.feature_dim].copy_from_slice(geometry.atom_features.row(i));
        let mut off = cfg.feature_dim;
        row[off..off + extra.len()].copy_from_slice(extra);
        off += extra.len();
        row[off..off + temb.len()].copy_from_slice(&temb);
        off += temb.len();
        if cfg.literal_coord_embed {
            row[off..off + 3].copy_from_slice(geometry.coords.row(i));
        } else {
            let r = distance(geometry.coords.row(i), &com);
            rbf_expand(r, cfg.rbf_count, cfg.rbf_cutoff, &mut row[off..off + cfg.rbf_count]);
        }
    }
    Ok(out)
}

/// Tape nodes produced by one encoder.
pub struct EncoderVars {
    pub nodes: Var,
    pub feature_score: Var,
    pub coord_score: Var,
}

struct EncoderContext<'a> {
    geometry: &'a MolecularGeometry,
    pairs: &'a [(usize, usize)],
    inputs: Var,
    zv: Var,
    out_scale: f64,
}

fn encoder_forward(
    tape: &mut Tape,
    store: &ParamStore,
    enc: &EncoderParams,
    cfg: &NetConfig,
    ctx: &EncoderContext<'_>,
) -> Result<EncoderVars> {
    let n = ctx.geometry.n_atoms();
    let pg = pair_geometry(&ctx.geometry.coords, ctx.pairs, enc.edge_type, cfg)?;
    let zv_rows = tape.broadcast_rows(ctx.zv, n);
    let input = tape.concat(&[ctx.inputs, zv_rows]);
    let rbf = tape.constant(pg.rbf);
    let nodes = enc.trunk.forward(tape, store, input, &pg.pairs, rbf);

    let a = enc.node_mlp.0.forward(tape, store, nodes);
    let a = tape.ssp(a);
    let raw_feat = enc.node_mlp.1.forward(tape, store, a);
    let feature_score = tape.scale(raw_feat, ctx.out_scale);

    let coord_score = if pg.pairs.is_empty() {
        tape.constant(Mat::zeros(n, 3))
    } else {
        let edge_in = tape.constant(pg.edge_input);
        let he = enc.edge_mlp.0.forward(tape, store, edge_in);
        let he = tape.ssp(he);
        let he = enc.edge_mlp.1.forward(tape, store, he);
        let hi = tape.gather(nodes, pg.pairs.iter().map(|p| p.0).collect());
        let hj = tape.gather(nodes, pg.pairs.iter().map(|p| p.1).collect());
        let prod = tape.mul(hi, hj);
        let pair_in = tape.concat(&[prod, he]);
        let s = enc.distance_mlp.0.forward(tape, store, pair_in);
        let s = tape.ssp(s);
        let s = enc.distance_mlp.1.forward(tape, store, s);
        let s = tape.scale(s, ctx.out_scale);
        let unit = tape.constant(pg.unit);
        let contrib = tape.mul_col(unit, s);
        let to_i = tape.scatter_add(contrib, pg.pairs.iter().map(|p| p.0).collect(), n);
        let neg = tape.scale(contrib, -1.0);
        let to_j = tape.scatter_add(neg, pg.pairs.iter().map(|p| p.1).collect(), n);
        let total = tape.add(to_i, to_j);
        tape.center_rows(total)
    };
    Ok(EncoderVars { nodes, feature_score, coord_score })
}

/// Everything a score evaluation needs besides the parameters.
#[derive(Clone, Copy, Debug)]
pub struct ScoreQuery<'a> {
    pub geometry: &'a MolecularGeometry,
    pub t: usize,
    pub schedule: &'a NoiseSchedule,
    pub condition: &'a [f64],
}

/// Records the dual score on `tape`; `zv` is a 1×d_z node.
pub fn dual_score_tape(
    tape: &mut Tape,
    store: &ParamStore,
    params: &DualParams,
    query: &ScoreQuery<'_>,
    zv: Var,
) -> Result<(Var, Var)> {
    let cfg = &params.config;
    query.schedule.check_step(query.t)?;
    if tape.value(zv).shape() != (1, cfg.zv_dim) {
        return Err(MdmError::Shape(alloc::format!("z_v must have {} entries", cfg.zv_dim)));
    }
    let inputs = static_inputs(query.geometry, query.t, query.schedule.steps(), query.condition, cfg)?;
    let inputs = tape.constant(inputs);
    let edges = build_edges_from_coords(&query.geometry.coords, cfg.tau);
    let out_scale = 1.0 / libm::sqrt(1.0 - query.schedule.alpha_bar(query.t));
    let mut feat = None;
    let mut coord = None;
    for enc in [&params.local, &params.global] {
        let ctx =
            EncoderContext { geometry: query.geometry, pairs: edges.edges(enc.edge_type), inputs, zv, out_scale };
        let v = encoder_forward(tape, store, enc, cfg, &ctx)?;
        feat = Some(match feat {
            None => v.feature_score,
            Some(f) => tape.add(f, v.feature_score),
        });
        coord = Some(match coord {
            None => v.coord_score,
            Some(c) => tape.add(c, v.coord_score),
        });
    }
    Ok((feat.unwrap(), coord.unwrap()))
}

/// `φ_l(𝒢_t, z_v, t, e_l) + φ_g(𝒢_t, z_v, t, e_g)`.
pub fn dual_score(
    store: &ParamStore,
    params: &DualParams,
    query: &ScoreQuery<'_>,
    z_v: &[f64],
) -> Result<ScoreOutput> {
    let mut tape = Tape::new();
    let zv = tape.constant(Mat::from_vec(1, z_v.len(), z_v.to_vec()));
    let (f, c) = dual_score_tape(&mut tape, store, params, query, zv)?;
    Ok(ScoreOutput { feature_score: tape.value(f).clone(), coord_score: tape.value(c).clone() })
}

/// Single-encoder evaluation, exposing the intermediate stages.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub node_embeddings: Mat,
    pub feature_score: Mat,
    pub coord_score: Mat,
}

pub fn encoder_score(
    store: &ParamStore,
    enc: &EncoderParams,
    cfg: &NetConfig,
    query: &ScoreQuery<'_>,
    z_v: &[f64],
) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let zv = tape.constant(Mat::from_vec(1, z_v.len(), z_v.to_vec()));
    let inputs = static_inputs(query.geometry, query.t, query.schedule.steps(), query.condition, cfg)?;
    let inputs = tape.constant(inputs);
    let edges = build_edges_from_coords(&query.geometry.coords, cfg.tau);
    let ctx = EncoderContext {
        geometry: query.geometry,
        pairs: edges.edges(enc.edge_type),
        inputs,
        zv,
        out_scale: 1.0 / libm::sqrt(1.0 - query.schedule.alpha_bar(query.t)),
    };
    let v = encoder_forward(&mut tape, store, enc, cfg, &ctx)?;
    Ok(EncoderOutput {
        node_embeddings: tape.value(v.nodes).clone(),
        feature_score: tape.value(v.feature_score).clone(),
        coord_score: tape.value(v.coord_score).clone(),
    })
}

/// Node embeddings of one encoder over an explicit pair list.
pub fn schnet_forward(
    store: &ParamStore,
    enc: &EncoderParams,
    cfg: &NetConfig,
    query: &ScoreQuery<'_>,
    pairs: &[(usize, usize)],
    z_v: &[f64],
) -> Result<Mat> {
    let mut tape = Tape::new();
    let inputs = static_inputs(query.geometry, query.t, query.schedule.steps(), query.condition, cfg)?;
    let inputs = tape.constant(inputs);
    let zv = tape.constant(Mat::from_vec(1, z_v.len(), z_v.to_vec()));
    let zv_rows = tape.broadcast_rows(zv, query.geometry.n_atoms());
    let input = tape.concat(&[inputs, zv_rows]);
    let pg = pair_geometry(&query.geometry.coords, pairs, enc.edge_type, cfg)?;
    let rbf = tape.constant(pg.rbf);
    let h = enc.trunk.forward(&mut tape, store, input, pairs, rbf);
    Ok(tape.value(h).clone())
}

/// Edge embedding `MLP([rbf(d), type flag])` for one pair.
pub fn edge_embed(d: f64, kind: EdgeType, store: &ParamStore, enc: &EncoderParams, cfg: &NetConfig) -> Vec<f64> {
    let mut row = alloc::vec![0.0; cfg.rbf_count + 1];
    rbf_expand(d, cfg.rbf_count, cfg.rbf_cutoff, &mut row[..cfg.rbf_count]);
    row[cfg.rbf_count] = edge_flag(kind);
    let mut tape = Tape::new();
    let x = tape.constant(Mat::from_vec(1, row.len(), row));
    let h = enc.edge_mlp.0.forward(&mut tape, store, x);
    let h = tape.ssp(h);
    let h = enc.edge_mlp.1.forward(&mut tape, store, h);
    tape.value(h).as_slice().to_vec()
}

/// Raw (unscaled) feature head applied to node embeddings.
pub fn node_score(node_embeddings: &Mat, store: &ParamStore, enc: &EncoderParams) -> Mat {
    let mut tape = Tape::new();
    let x = tape.constant(node_embeddings.clone());
    let a = enc.node_mlp.0.forward(&mut tape, store, x);
    let a = tape.ssp(a);
    let out = enc.node_mlp.1.forward(&mut tape, store, a);
    tape.value(out).clone()
}

/// Raw (unscaled) distance score `MLP([h_i ⊙ h_j, h_e])`.
pub fn distance_score(
    node_embeddings: &Mat,
    edge_embedding: &[f64],
    pair: (usize, usize),
    store: &ParamStore,
    enc: &EncoderParams,
) -> f64 {
    let (i, j) = pair;
    let h = node_embeddings.cols();
    let mut row: Vec<f64> = (0..h).map(|k| node_embeddings[(i, k)] * node_embeddings[(j, k)]).collect();
    row.extend_from_slice(edge_embedding);
    let mut tape = Tape::new();
    let x = tape.constant(Mat::from_vec(1, row.len(), row));
    let s = enc.distance_mlp.0.forward(&mut tape, store, x);
    let s = tape.ssp(s);
    let s = enc.distance_mlp.1.forward(&mut tape, store, s);
    tape.value(s)[(0, 0)]
}

/// Dist-transition `Σ_j s(d_ij)·(r_i − r_j)/d_ij`, projected to zero COM.
pub fn coord_score(coords: &Mat, pairs: &[(usize, usize)], distance_scores: &[f64]) -> Result<Mat> {
    if pairs.len() != distance_scores.len() {
        return Err(MdmError::Shape("one distance score per pair is required".into()));
    }
    let mut out = Mat::zeros(coords.rows(), 3);
    for (&(i, j), &s) in pairs.iter().zip(distance_scores) {
        let d = distance(coords.row(i), coords.row(j));
        if d < 1e-8 {
            return Err(MdmError::CoincidentAtoms { i, j });
        }
        for c in 0..3 {
            let v = s * (coords[(i, c)] - coords[(j, c)]) / d;
            out[(i, c)] += v;
            out[(j, c)] -= v;
        }
    }
    crate::geometry::zero_com(&out)
}
