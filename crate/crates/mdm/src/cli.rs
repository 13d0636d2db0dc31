//! Command-line driver. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mdm_core::chem_eval::{BondLengthTable, ChemContext, RegressorConfig};
use mdm_core::geometry::ElementSet;
use mdm_core::sampling::SizeMode;
use mdm_core::varnoise::PriorMode;

use crate::checkpoint::{Checkpoint, RegressorFile};
use crate::config::RunConfig;
use crate::dataset::load_dataset;
use crate::reports::{write_conditional_report, write_eval_report};
use crate::streams::{stream, SYNTH};
use crate::synth::{scaled_family, template_dataset, Template};
use crate::workflow::{
    conditional_eval, diffuse, evaluate, fit_regressor, generate, sample_blocks, train_model, trajectory_dir,
    SampleRequest,
};
use crate::xyz::{write_xyz, XyzBlock};

#[derive(Debug, Parser)]
#[command(name = "mdm", version, about = "Molecular diffusion with variational noise: train, sample, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ZvMode {
    Gaussian,
    Uniform,
}

impl From<ZvMode> for PriorMode {
    fn from(m: ZvMode) -> Self {
        match m {
            ZvMode::Gaussian => PriorMode::Gaussian,
            ZvMode::Uniform => PriorMode::Uniform,
        }
    }
}

/// `histogram` or a fixed atom count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeArg(pub SizeMode);

impl FromStr for SizeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "histogram" {
            return Ok(Self(SizeMode::Histogram));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Self(SizeMode::Fixed(n))),
            _ => Err(format!("expected `histogram` or a positive atom count, got {s:?}")),
        }
    }
}

/// `name=value` property target.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionArg(pub String, pub f64);

impl FromStr for ConditionArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
        let value: f64 = value.trim().parse().map_err(|_| format!("bad value in {s:?}"))?;
        if name.trim().is_empty() || !value.is_finite() {
            return Err(format!("expected name=value, got {s:?}"));
        }
        Ok(Self(name.trim().to_string(), value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Methane,
    Water,
    Ethanol,
    /// Water/methane scaled uniformly, labelled `prop:rg=<radius of gyration>`.
    RgFamily,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics.csv, checkpoint-<step>.ckpt and model.ckpt into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data_path` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate molecules from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        num: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        zv_mode: ZvMode,
        /// `histogram` or a fixed atom count.
        #[arg(long, default_value = "histogram")]
        size: SizeArg,
        /// Conditional target, `name=value`.
        #[arg(long)]
        condition: Option<ConditionArg>,
        /// Write every K-th intermediate state of each chain to <out>.traj/.
        #[arg(long, value_name = "K")]
        dump_trajectory: Option<usize>,
        /// Defaults to the seed stored in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validity, uniqueness, novelty and stability of generated molecules.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        single_bonds_only: bool,
        /// Comma-separated element symbols.
        #[arg(long, default_value = "H,C,N,O,F")]
        elements: String,
        /// Bond table rows `El1 El2 order length margin`.
        #[arg(long)]
        bond_table: Option<PathBuf>,
    },
    /// Forward-noise every molecule of a file to step --t.
    Diffuse {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        out: PathBuf,
        /// Supplies the schedule and elements; defaults apply otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// MAE of conditionally generated molecules against their targets.
    CondEval {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        regressor: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a property regressor on half of a labelled file.
    FitRegressor {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        property: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "H,C,N,O,F")]
        elements: String,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic template dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-coordinate Gaussian noise (Å).
        #[arg(long, default_value_t = 0.02)]
        jitter: f64,
        #[arg(long, default_value_t = 0.8)]
        scale_min: f64,
        #[arg(long, default_value_t = 1.25)]
        scale_max: f64,
        #[arg(long)]
        no_rotate: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn elements(list: &str) -> anyhow::Result<ElementSet> {
    Ok(ElementSet::new(list.split(',').map(|s| s.trim().to_string()).collect())?)
}

fn write_blocks(path: &Path, blocks: &[XyzBlock]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(write_xyz(path, blocks)?)
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train { config, data, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if data.is_some() {
                cfg.data_path = data;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            let data = cfg.data_path.clone().context("no --data given and no data_path in the config")?;
            let out = cfg.out_dir.clone().context("no --out given and no out_dir in the config")?;
            let dataset = load_dataset(&data, &cfg.elements)?;
            let (_, steps) = train_model(&cfg, &dataset, Some(&out), None)?;
            eprintln!("trained {steps} steps; wrote {}", out.join("model.ckpt").display());
        }
        Command::Sample { ckpt, num, out, zv_mode, size, condition, dump_trajectory, seed } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let req = SampleRequest {
                num,
                zv_mode: zv_mode.into(),
                size: size.0,
                condition: condition.map(|c| (c.0, c.1)),
                seed: seed.unwrap_or(ckpt.config.seed),
                trajectory_stride: dump_trajectory.unwrap_or(0),
            };
            if dump_trajectory == Some(0) {
                bail!("--dump-trajectory needs a positive stride");
            }
            let generated = generate(&ckpt, &req)?;
            write_blocks(&out, &sample_blocks(&ckpt, &req, &generated.molecules))?;
            if !generated.trajectories.is_empty() {
                let dir = trajectory_dir(&out);
                for (k, frames) in generated.trajectories.iter().enumerate() {
                    let blocks: Vec<XyzBlock> = frames
                        .iter()
                        .map(|(t, g)| XyzBlock::from_geometry(g, &ckpt.config.elements).with_comment(format!("sample={k} t={t}")))
                        .collect();
                    write_blocks(&dir.join(format!("sample-{k}.xyz")), &blocks)?;
                }
            }
        }
        Command::Eval { samples, train, report, single_bonds_only, elements: list, bond_table } => {
            let elements = elements(&list)?;
            let bonds = match bond_table {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    BondLengthTable::parse(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => BondLengthTable::default(),
            };
            let ctx = ChemContext { elements: elements.clone(), bonds, single_bonds_only, ..ChemContext::default() };
            let generated = load_dataset(&samples, &elements)?;
            let training = load_dataset(&train, &elements)?;
            let r = evaluate(&generated.molecules, &training.molecules, &ctx);
            write_eval_report(&report, &r)?;
            eprintln!(
                "validity {:.1}%  uniqueness {:.1}%  novelty {:.1}%  stability {:.1}%  ({} samples)",
                r.validity,
                r.uniqueness,
                r.novelty,
                r.stability,
                r.samples.len()
            );
        }
        Command::Diffuse { data, t, out, config, seed } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let dataset = load_dataset(&data, &cfg.elements)?;
            let noised = diffuse(&dataset, &cfg.schedule.build()?, t, seed)?;
            let blocks: Vec<XyzBlock> = noised
                .iter()
                .map(|g| XyzBlock::from_geometry(g, &cfg.elements).with_comment(format!("t={t}")))
                .collect();
            write_blocks(&out, &blocks)?;
        }
        Command::CondEval { samples, regressor, report, seed } => {
            let file = RegressorFile::load(&regressor)?;
            let dataset = load_dataset(&samples, &file.elements)?;
            let generated = dataset
                .labelled(&file.property)
                .with_context(|| format!("{}: samples must carry prop:{}=<target>", samples.display(), file.property))?;
            let r = conditional_eval(&generated, &file, seed)?;
            write_conditional_report(&report, &r, generated.len())?;
            eprintln!(
                "model MAE {:.4}  naive {:.4}  #atoms {:.4}  lower bound {:.4}",
                r.model_mae, r.naive_mae, r.natoms_mae, r.lower_bound_mae
            );
        }
        Command::FitRegressor { data, property, out, elements: list, epochs, seed } => {
            let elements = elements(&list)?;
            let dataset = load_dataset(&data, &elements)?;
            let cfg = RegressorConfig { epochs, ..RegressorConfig::default() };
            let file = fit_regressor(&dataset, &elements, &property, &cfg, seed)?;
            file.save(&out)?;
            eprintln!("held-out MAE {:.4}", file.regressor.mae(&file.eval_split)?);
        }
        Command::Synth { kind, count, out, jitter, scale_min, scale_max, no_rotate, seed } => {
            let elements = ElementSet::default();
            let mut rng = stream(seed, SYNTH);
            let template = match kind {
                SynthKind::Methane => Some(Template::Methane),
                SynthKind::Water => Some(Template::Water),
                SynthKind::Ethanol => Some(Template::Ethanol),
                SynthKind::RgFamily => None,
            };
            let blocks: Vec<XyzBlock> = match template {
                Some(t) => template_dataset(t, &elements, count, jitter, !no_rotate, &mut rng)?
                    .iter()
                    .map(|g| XyzBlock::from_geometry(g, &elements))
                    .collect(),
                None => {
                    if !(scale_min > 0.0 && scale_min < scale_max) {
                        bail!("need 0 < --scale-min < --scale-max");
                    }
                    scaled_family(&elements, count, (scale_min, scale_max), jitter, &mut rng)?
                        .iter()
                        .map(|(g, rg)| XyzBlock::from_geometry(g, &elements).with_property("rg", *rg))
                        .collect()
                }
            };
            write_blocks(&out, &blocks)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
