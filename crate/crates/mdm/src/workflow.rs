//! End-to-end operations shared by the CLI and the integration tests.

use std::path::{Path, PathBuf};

use anyhow::Context;
use mdm_core::chem_eval::{
    conditional_mae_eval, key_set, metrics_report, ChemContext, ConditionalReport, MetricsReport, PropertyRegressor,
    RegressorConfig, SizeBaseline,
};
use mdm_core::geometry::{ElementSet, MolecularGeometry};
use mdm_core::model::Model;
use mdm_core::sampling::{condition_vector, decode, draw_noise, sample_molecule, sample_size, ChainRngs, SizeMode};
use mdm_core::schedule::{q_sample, NoiseSchedule};
use mdm_core::training::{train, StepRecord, TrainObserver};
use mdm_core::varnoise::PriorMode;
use mdm_core::MdmError;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, RegressorFile};
use crate::config::RunConfig;
use crate::dataset::{condition_spec, Dataset};
use crate::reports::MetricsLog;
use crate::streams::{indexed_stream, stream, DATA_SHUFFLE, EVAL, INIT, NOISE, SAMPLER, ZV};
use crate::xyz::XyzBlock;

/// Writes the metrics log and checkpoint files of a training run.
struct RunSink<'a> {
    template: Checkpoint,
    out_dir: Option<&'a Path>,
    metrics: Option<MetricsLog>,
    on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
}

fn sink_err(e: impl std::fmt::Display) -> MdmError {
    MdmError::Sink(format!("{e:#}"))
}

impl TrainObserver for RunSink<'_> {
    fn on_step(&mut self, record: &StepRecord) -> mdm_core::Result<()> {
        if let Some(log) = &mut self.metrics {
            log.record(record).map_err(sink_err)?;
        }
        if let Some(f) = &mut self.on_step {
            f(record);
        }
        Ok(())
    }

    fn checkpoint(&mut self, step: usize, model: &Model) -> mdm_core::Result<()> {
        self.template.model.store.clone_from(&model.store);
        if let Some(dir) = self.out_dir {
            if let Some(log) = &mut self.metrics {
                log.flush().map_err(sink_err)?;
            }
            for name in [format!("checkpoint-{step}.ckpt"), "model.ckpt".to_string()] {
                self.template.save(&dir.join(name)).map_err(sink_err)?;
            }
        }
        Ok(())
    }
}

/// Trains a fresh model on `dataset`. With `out_dir`, writes `metrics.csv`,
/// `checkpoint-{step}.ckpt` at every checkpoint and `model.ckpt` (the latest).
pub fn train_model<'a>(
    config: &RunConfig,
    dataset: &Dataset,
    out_dir: Option<&'a Path>,
    on_step: Option<&'a mut dyn FnMut(&StepRecord)>,
) -> anyhow::Result<(Checkpoint, usize)> {
    let schedule = config.schedule.build()?;
    let spec = config.condition_name.as_deref().map(|name| dataset.condition_spec(name)).transpose()?;
    let samples = dataset.train_samples(spec.as_ref())?;
    let seed = config.seed;
    let model = Model::new(config.net.clone(), &mut stream(seed, INIT))?;
    let metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Some(MetricsLog::create(&dir.join("metrics.csv"))?)
        }
        None => None,
    };
    // Where the run read and wrote files is not part of the model.
    let mut stored = config.clone();
    stored.data_path = None;
    stored.out_dir = None;
    let template = Checkpoint {
        config: stored,
        histogram: dataset.size_histogram.clone(),
        stats: dataset.property_stats.clone(),
        model,
    };
    let mut model = template.model.clone();
    let mut sink = RunSink { template, out_dir, metrics, on_step };
    let steps = train(
        &samples,
        &mut model,
        &schedule,
        &config.train,
        &mut sink,
        &mut stream(seed, DATA_SHUFFLE),
        &mut stream(seed, NOISE),
    )
    .context("training failed")?;
    let mut ckpt = sink.template;
    ckpt.model = model;
    Ok((ckpt, steps))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub num: usize,
    pub zv_mode: PriorMode,
    pub size: SizeMode,
    /// Property name and target value for conditional generation.
    pub condition: Option<(String, f64)>,
    pub seed: u64,
    /// Record every `k`-th intermediate state; 0 records nothing.
    pub trajectory_stride: usize,
}

impl Default for SampleRequest {
    fn default() -> Self {
        Self { num: 1, zv_mode: PriorMode::Uniform, size: SizeMode::Histogram, condition: None, seed: 0, trajectory_stride: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub molecules: Vec<MolecularGeometry>,
    /// Per molecule: `(t, state)` frames, decoded, from high to low `t`.
    pub trajectories: Vec<Vec<(usize, MolecularGeometry)>>,
}

type Chain = (MolecularGeometry, Vec<(usize, MolecularGeometry)>);

/// Standardized condition vector for an optional `(name, value)` target.
fn condition_for(ckpt: &Checkpoint, target: Option<(&str, f64)>) -> anyhow::Result<Vec<f64>> {
    match target {
        None if ckpt.model.config().condition_dim > 0 => {
            anyhow::bail!("model is conditioned on a property; pass --condition name=value")
        }
        None => Ok(vec![]),
        Some((name, value)) => {
            let spec = condition_spec(&ckpt.stats, name).ok();
            Ok(condition_vector(&ckpt.model, spec.as_ref(), name, value)?)
        }
    }
}

/// Runs chain `k` for every job in parallel. Chain `k` draws its size and
/// noise from sampler stream `k` and its latent from z_v stream `k`, so
/// output does not depend on the thread count.
fn run_chains(
    ckpt: &Checkpoint,
    jobs: &[(SizeMode, Vec<f64>)],
    zv_mode: PriorMode,
    seed: u64,
    stride: usize,
) -> anyhow::Result<Vec<Chain>> {
    let schedule = ckpt.config.schedule.build()?;
    let results: Vec<anyhow::Result<Chain>> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, (size, condition))| {
            let mut chain = indexed_stream(seed, SAMPLER, k as u64);
            let mut zv = indexed_stream(seed, ZV, k as u64);
            let n = sample_size(Some(&ckpt.histogram), *size, &mut chain)?;
            let mut frames = Vec::new();
            let mut observe = |t: usize, g: &MolecularGeometry| {
                if stride > 0 && t % stride == 0 {
                    frames.push((t, decode(g)));
                }
            };
            let g = sample_molecule(
                n,
                &ckpt.model,
                &schedule,
                zv_mode,
                condition,
                ChainRngs { zv: &mut zv, chain: &mut chain },
                &mut observe,
            )
            .with_context(|| format!("sample {k}"))?;
            Ok((g, frames))
        })
        .collect();
    results.into_iter().collect()
}

/// Runs `req.num` independent chains.
pub fn generate(ckpt: &Checkpoint, req: &SampleRequest) -> anyhow::Result<Generated> {
    let condition = condition_for(ckpt, req.condition.as_ref().map(|(n, v)| (n.as_str(), *v)))?;
    let jobs = vec![(req.size, condition); req.num];
    let mut out = Generated { molecules: Vec::with_capacity(req.num), trajectories: Vec::new() };
    for (g, frames) in run_chains(ckpt, &jobs, req.zv_mode, req.seed, req.trajectory_stride)? {
        out.molecules.push(g);
        if req.trajectory_stride > 0 {
            out.trajectories.push(frames);
        }
    }
    Ok(out)
}

/// One conditional chain per `(atom count, target value)` of `property`.
pub fn generate_targets(
    ckpt: &Checkpoint,
    property: &str,
    targets: &[(usize, f64)],
    zv_mode: PriorMode,
    seed: u64,
) -> anyhow::Result<Vec<MolecularGeometry>> {
    let jobs = targets
        .iter()
        .map(|&(n, y)| Ok((SizeMode::Fixed(n), condition_for(ckpt, Some((property, y)))?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(run_chains(ckpt, &jobs, zv_mode, seed, 0)?.into_iter().map(|c| c.0).collect())
}

/// XYZ blocks of generated molecules, tagged with the conditioning target.
pub fn sample_blocks(ckpt: &Checkpoint, req: &SampleRequest, molecules: &[MolecularGeometry]) -> Vec<XyzBlock> {
    molecules
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let b = XyzBlock::from_geometry(g, &ckpt.config.elements).with_comment(format!("sample={k}"));
            match &req.condition {
                Some((name, value)) => b.with_property(name, *value),
                None => b,
            }
        })
        .collect()
}

/// Forward-noises every molecule to step `t`, with noise from the run seed.
pub fn diffuse(dataset: &Dataset, schedule: &NoiseSchedule, t: usize, seed: u64) -> anyhow::Result<Vec<MolecularGeometry>> {
    let mut rng = stream(seed, NOISE);
    dataset
        .molecules
        .iter()
        .map(|g| {
            let (ef, ec) = draw_noise(g.n_atoms(), g.feature_dim(), &mut rng)?;
            Ok(q_sample(g, t, schedule, ef, ec)?.geometry_t)
        })
        .collect()
}

pub fn evaluate(samples: &[MolecularGeometry], training: &[MolecularGeometry], ctx: &ChemContext) -> MetricsReport {
    metrics_report(samples, &key_set(training, ctx), ctx)
}

/// Fits a regressor on a random half of the labelled molecules; the other
/// half becomes the stored evaluation split.
pub fn fit_regressor(
    dataset: &Dataset,
    elements: &ElementSet,
    property: &str,
    config: &RegressorConfig,
    seed: u64,
) -> anyhow::Result<RegressorFile> {
    let mut data = dataset.labelled(property)?;
    if data.len() < 2 {
        anyhow::bail!("need at least two labelled molecules to split");
    }
    data.shuffle(&mut stream(seed, DATA_SHUFFLE));
    let eval_split = data.split_off(data.len() / 2);
    let mut regressor = PropertyRegressor::new(elements.feature_dim(), config, &mut stream(seed, INIT));
    regressor.fit(&data, config, &mut stream(seed, NOISE))?;
    Ok(RegressorFile {
        property: property.to_string(),
        elements: elements.clone(),
        config: config.clone(),
        regressor,
        size_baseline: SizeBaseline::fit(&data)?,
        eval_split,
    })
}

/// Scores conditionally generated molecules (each tagged with its target
/// value) against the stored regressor and baselines.
pub fn conditional_eval(generated: &[(MolecularGeometry, f64)], file: &RegressorFile, seed: u64) -> anyhow::Result<ConditionalReport> {
    Ok(conditional_mae_eval(generated, &file.regressor, &file.eval_split, &file.size_baseline, &mut stream(seed, EVAL))?)
}

/// Directory that receives per-sample trajectory files for output `out`.
pub fn trajectory_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".traj");
    out.with_file_name(name)
}
