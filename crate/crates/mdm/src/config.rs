//! Plain-text run configuration: `key = value` lines, `#` comments.
//!
//! Parsing is total: either every key is valid and a [`RunConfig`] is
//! returned, or a single [`ConfigError`] lists every problem found.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mdm_core::geometry::ElementSet;
use mdm_core::schedule::{make_schedule, NoiseSchedule, ScheduleKind, SigmaMode};
use mdm_core::score_net::NetConfig;
use mdm_core::training::{CoordTarget, LrSchedule, ScoreWeighting, TrainConfig};
use mdm_core::varnoise::{PriorMode, Reparam};
use thiserror::Error;

/// Every problem found in one config text.
#[derive(Debug, Error, PartialEq)]
pub struct ConfigError {
    pub source_name: String,
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration {}:", self.source_name)?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSettings {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_mode: SigmaMode,
}

impl ScheduleSettings {
    pub fn build(&self) -> mdm_core::Result<NoiseSchedule> {
        Ok(make_schedule(self.kind, self.steps, self.beta_min, self.beta_max)?.with_sigma_mode(self.sigma_mode))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub schedule: ScheduleSettings,
    /// `feature_dim` always equals `elements.feature_dim()`.
    pub net: NetConfig,
    pub train: TrainConfig,
    pub zv_prior: PriorMode,
    /// Property the model is conditioned on, if any.
    pub condition_name: Option<String>,
    pub elements: ElementSet,
    pub data_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub single_bonds_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let elements = ElementSet::default();
        let mut net = NetConfig::desk(elements.feature_dim());
        net.hidden_dim = 128;
        net.n_layers = 4;
        Self {
            schedule: ScheduleSettings {
                kind: ScheduleKind::Linear,
                steps: 1000,
                beta_min: 1e-4,
                beta_max: 0.02,
                sigma_mode: SigmaMode::Posterior,
            },
            net,
            train: TrainConfig::default(),
            zv_prior: PriorMode::Uniform,
            condition_name: None,
            elements,
            data_path: None,
            out_dir: None,
            seed: 0,
            single_bonds_only: false,
        }
    }
}

/// Keys in the order [`RunConfig::to_text`] writes them. `standard_reparam`
/// is also accepted on input as a boolean spelling of `reparam`.
pub const KEYS: &[&str] = &[
    "T",
    "beta_schedule",
    "beta_min",
    "beta_max",
    "sigma_mode",
    "hidden_dim",
    "n_layers",
    "rbf_count",
    "rbf_cutoff",
    "time_embed_dim",
    "tau",
    "literal_coord_embed",
    "condition_name",
    "zv_dim",
    "zv_prior",
    "reparam",
    "kl_weight",
    "lr",
    "lr_schedule",
    "batch_size",
    "epochs",
    "max_steps",
    "gamma_weighting",
    "score_weighting",
    "coord_target",
    "grad_clip",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "checkpoint_interval",
    "elements",
    "data_path",
    "out_dir",
    "seed",
    "single_bonds_only",
];

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected a number, found {v:?}"))
}

fn positive(v: &str) -> Result<usize, String> {
    match num::<usize>(v)? {
        0 => Err("must be at least 1".into()),
        n => Ok(n),
    }
}

fn finite(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be finite, found {v:?}"))
    }
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true/false, found {v:?}")),
    }
}

fn choice<T: Copy>(v: &str, options: &[(&str, T)]) -> Result<T, String> {
    options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        format!("expected one of {}, found {v:?}", names.join("|"))
    })
}

const SCHEDULES: &[(&str, ScheduleKind)] = &[("linear", ScheduleKind::Linear), ("polynomial", ScheduleKind::Polynomial)];
const SIGMAS: &[(&str, SigmaMode)] = &[("posterior", SigmaMode::Posterior), ("beta", SigmaMode::Beta)];
const PRIORS: &[(&str, PriorMode)] = &[("gaussian", PriorMode::Gaussian), ("uniform", PriorMode::Uniform)];
const REPARAMS: &[(&str, Reparam)] = &[("literal", Reparam::Literal), ("standard", Reparam::Standard)];
const TARGETS: &[(&str, CoordTarget)] = &[("gaussian", CoordTarget::Gaussian), ("distance", CoordTarget::Distance)];
const WEIGHTINGS: &[(&str, ScoreWeighting)] =
    &[("uniform", ScoreWeighting::Uniform), ("noise_level", ScoreWeighting::NoiseLevel)];
const LR_SCHEDULES: &[(&str, LrSchedule)] = &[("constant", LrSchedule::Constant), ("cosine", LrSchedule::Cosine)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], value: T) -> &'static str {
    options.iter().find(|(_, t)| *t == value).map(|(n, _)| *n).expect("every variant is named")
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let n = &mut self.net;
        let t = &mut self.train;
        let s = &mut self.schedule;
        match key {
            "T" => s.steps = positive(v)?,
            "beta_schedule" => s.kind = choice(v, SCHEDULES)?,
            "beta_min" => s.beta_min = finite(v)?,
            "beta_max" => s.beta_max = finite(v)?,
            "sigma_mode" => s.sigma_mode = choice(v, SIGMAS)?,
            "hidden_dim" => n.hidden_dim = positive(v)?,
            "n_layers" => n.n_layers = num(v)?,
            "rbf_count" => n.rbf_count = num(v)?,
            "rbf_cutoff" => n.rbf_cutoff = finite(v)?,
            "time_embed_dim" => n.time_embed_dim = num(v)?,
            "tau" => n.tau = finite(v)?,
            "literal_coord_embed" => n.literal_coord_embed = flag(v)?,
            "condition_name" => {
                if v.chars().any(|c| c.is_whitespace() || c == '=') {
                    return Err(format!("property names cannot contain spaces or '=', found {v:?}"));
                }
                self.condition_name = (!v.is_empty() && v != "none").then(|| v.to_string());
            }
            "zv_dim" => n.zv_dim = num(v)?,
            "zv_prior" => self.zv_prior = choice(v, PRIORS)?,
            "reparam" => t.reparam = choice(v, REPARAMS)?,
            "standard_reparam" => t.reparam = if flag(v)? { Reparam::Standard } else { Reparam::Literal },
            "kl_weight" => t.kl_weight = finite(v)?,
            "lr" => t.lr = finite(v)?,
            "lr_schedule" => t.lr_schedule = choice(v, LR_SCHEDULES)?,
            "batch_size" => t.batch_size = positive(v)?,
            "epochs" => t.epochs = num(v)?,
            "max_steps" => t.max_steps = num(v)?,
            "gamma_weighting" => t.gamma_weighting = flag(v)?,
            "score_weighting" => t.score_weighting = choice(v, WEIGHTINGS)?,
            "coord_target" => t.coord_target = choice(v, TARGETS)?,
            "grad_clip" => t.grad_clip = finite(v)?,
            "adam_beta1" => t.adam.beta1 = finite(v)?,
            "adam_beta2" => t.adam.beta2 = finite(v)?,
            "adam_eps" => t.adam.eps = finite(v)?,
            "checkpoint_interval" => t.checkpoint_interval = num(v)?,
            "elements" => {
                let symbols: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                if symbols.iter().any(|s| s.is_empty()) {
                    return Err(format!("expected comma-separated element symbols, found {v:?}"));
                }
                self.elements = ElementSet::new(symbols).map_err(|e| e.to_string())?;
            }
            "data_path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out_dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => {
                self.seed = num(v)?;
                t.seed = self.seed;
            }
            "single_bonds_only" => self.single_bonds_only = flag(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Cross-key checks delegated to each module's own validation.
    fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let s = &self.schedule;
        if let Err(e) = make_schedule(s.kind, s.steps, s.beta_min, s.beta_max) {
            problems.push(format!("beta_min/beta_max: {e} (need 0 < beta_min <= beta_max < 1)"));
        }
        if let Err(e) = self.net.validate() {
            problems.push(format!("network: {e}"));
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("training: {e}"));
        }
        problems
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`, found {line:?}", i + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                problems.push(format!("line {}: {key}: duplicate key", i + 1));
                continue;
            }
            if let Err(e) = cfg.set(key, value) {
                problems.push(format!("line {}: {key}: {e}", i + 1));
            }
        }
        cfg.net.feature_dim = cfg.elements.feature_dim();
        cfg.net.condition_dim = usize::from(cfg.condition_name.is_some());
        if problems.is_empty() {
            problems = cfg.check();
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError { source_name: source_name.to_string(), problems })
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::parse(&text, &path.display().to_string())?)
    }

    /// Canonical text listing every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let (s, n, t) = (&self.schedule, &self.net, &self.train);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values: Vec<String> = vec![
            s.steps.to_string(),
            name_of(SCHEDULES, s.kind).into(),
            s.beta_min.to_string(),
            s.beta_max.to_string(),
            name_of(SIGMAS, s.sigma_mode).into(),
            n.hidden_dim.to_string(),
            n.n_layers.to_string(),
            n.rbf_count.to_string(),
            n.rbf_cutoff.to_string(),
            n.time_embed_dim.to_string(),
            n.tau.to_string(),
            n.literal_coord_embed.to_string(),
            self.condition_name.clone().unwrap_or_else(|| "none".into()),
            n.zv_dim.to_string(),
            name_of(PRIORS, self.zv_prior).into(),
            name_of(REPARAMS, t.reparam).into(),
            t.kl_weight.to_string(),
            t.lr.to_string(),
            name_of(LR_SCHEDULES, t.lr_schedule).into(),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            t.max_steps.to_string(),
            t.gamma_weighting.to_string(),
            name_of(WEIGHTINGS, t.score_weighting).into(),
            name_of(TARGETS, t.coord_target).into(),
            t.grad_clip.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.eps.to_string(),
            t.checkpoint_interval.to_string(),
            self.elements.symbols().join(","),
            path(&self.data_path),
            path(&self.out_dir),
            self.seed.to_string(),
            self.single_bonds_only.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
