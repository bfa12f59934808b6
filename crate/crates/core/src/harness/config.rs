//! Line-oriented experiment configuration.
//!
//! ```text
//! # comment
//! algorithm = gt
//! eta = 0.05
//! sweep.eta = 0.2, 0.1, 0.05
//! ```
//!
//! Every key has a default, so an empty file is a valid configuration. Sweep
//! lines expand into the cartesian product of their values, in file order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::algorithms::{Algorithm, HyperParams, NoiseMode};
use crate::problems::{
    gaussian_dataset, load_auroc_csv, make_auroc, make_quadratic, make_tanh, stratified_split,
    Minibatch, NoiseLevels, Oracle, ProblemError, SyntheticSpec,
};
use crate::topology::{MixingMatrix, TopologyError, DEFAULT_SELF_WEIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, key `{key}`: {msg}")]
pub struct ConfigError {
    /// 1-based line number; 0 for whole-config checks.
    pub line: usize,
    pub key: String,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    Tanh,
    Auroc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Ring,
    Complete,
    File,
}

/// Extra summary output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Report {
    None,
    /// Log-log slope of steady-state consensus against `eta`.
    Slope,
}

/// Fully resolved settings of one experiment (one sweep point).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub hp: HyperParams,
    pub iterations: u64,
    /// Base seed; run `i` uses `seed + i`.
    pub seed: u64,
    pub seeds: usize,
    /// Seed of the instance (and dataset), fixed across runs.
    pub instance_seed: u64,
    pub noise_mode: NoiseMode,

    pub problem: ProblemKind,
    pub workers: usize,
    pub d0: usize,
    pub d1: usize,
    pub d2: usize,
    pub mu: f64,
    pub sigma_f: f64,
    pub sigma_g: f64,
    pub sigma_g_prime: f64,
    pub heterogeneity: f64,

    pub rho: f64,
    /// 0 means the full shard.
    pub minibatch: usize,
    pub imbalance_ratio: f64,
    pub train_test_split: f64,
    pub samples: usize,
    pub features: usize,
    pub separation: f64,
    pub auroc_data: Option<PathBuf>,

    pub topology: TopologyKind,
    pub topology_file: Option<PathBuf>,
    pub self_weight: f64,

    pub metrics_every: usize,
    pub stationarity: bool,
    /// Fraction of trailing records averaged for steady-state consensus.
    pub steady_fraction: f64,
    pub output_dir: PathBuf,
    pub report: Report,
    /// Write `wall_ms`; off gives byte-identical reruns.
    pub wall_time: bool,
    pub sweep: Vec<(String, Vec<String>)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Gt,
            hp: HyperParams::default(),
            iterations: 1000,
            seed: 0,
            seeds: 1,
            instance_seed: 0,
            noise_mode: NoiseMode::PerWorker,
            problem: ProblemKind::Quadratic,
            workers: 4,
            d0: 5,
            d1: 5,
            d2: 5,
            mu: 1.0,
            sigma_f: 0.01,
            sigma_g: 0.01,
            sigma_g_prime: 0.01,
            heterogeneity: 1.0,
            rho: 0.1,
            minibatch: 32,
            imbalance_ratio: 0.1,
            train_test_split: 0.9,
            samples: 2000,
            features: 20,
            separation: 3.0,
            auroc_data: None,
            topology: TopologyKind::Ring,
            topology_file: None,
            self_weight: DEFAULT_SELF_WEIGHT,
            metrics_every: 10,
            stationarity: true,
            steady_fraction: 0.2,
            output_dir: PathBuf::from("out"),
            report: Report::None,
            wall_time: true,
            sweep: Vec::new(),
        }
    }
}

/// Keys accepted by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "algorithm",
    "eta",
    "gamma_x",
    "gamma_y",
    "beta_x",
    "beta_y",
    "alpha",
    "iterations",
    "seed",
    "seeds",
    "instance_seed",
    "noise_mode",
    "problem",
    "workers",
    "d0",
    "d1",
    "d2",
    "mu",
    "sigma",
    "sigma_f",
    "sigma_g",
    "sigma_g_prime",
    "heterogeneity",
    "rho",
    "minibatch",
    "imbalance_ratio",
    "train_test_split",
    "samples",
    "features",
    "separation",
    "auroc_data",
    "topology",
    "topology_file",
    "self_weight",
    "metrics_every",
    "stationarity",
    "steady_fraction",
    "output_dir",
    "report",
    "wall_time",
];

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse {value:?}: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("cannot parse {value:?} as a boolean")),
    }
}

fn unquote(v: &str) -> &str {
    let v = v.trim();
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
}

impl ExperimentConfig {
    /// Assign one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = unquote(value);
        match key {
            "algorithm" => self.algorithm = v.parse()?,
            "eta" => self.hp.eta = parse(v)?,
            "gamma_x" => self.hp.gamma_x = parse(v)?,
            "gamma_y" => self.hp.gamma_y = parse(v)?,
            "beta_x" => self.hp.beta_x = parse(v)?,
            "beta_y" => self.hp.beta_y = parse(v)?,
            "alpha" => self.hp.alpha = parse(v)?,
            "iterations" => self.iterations = parse(v)?,
            "seed" => self.seed = parse(v)?,
            "seeds" => self.seeds = parse(v)?,
            "instance_seed" => self.instance_seed = parse(v)?,
            "noise_mode" => {
                self.noise_mode = match v {
                    "per-worker" => NoiseMode::PerWorker,
                    "shared" => NoiseMode::Shared,
                    _ => return Err(format!("unknown noise mode {v:?} (per-worker or shared)")),
                }
            }
            "problem" => {
                self.problem = match v {
                    "quadratic" => ProblemKind::Quadratic,
                    "tanh" => ProblemKind::Tanh,
                    "auroc" => ProblemKind::Auroc,
                    _ => return Err(format!("unknown problem {v:?} (quadratic, tanh or auroc)")),
                }
            }
            "workers" => self.workers = parse(v)?,
            "d0" => self.d0 = parse(v)?,
            "d1" => self.d1 = parse(v)?,
            "d2" => self.d2 = parse(v)?,
            "mu" => self.mu = parse(v)?,
            "sigma" => {
                let s = parse(v)?;
                (self.sigma_f, self.sigma_g, self.sigma_g_prime) = (s, s, s);
            }
            "sigma_f" => self.sigma_f = parse(v)?,
            "sigma_g" => self.sigma_g = parse(v)?,
            "sigma_g_prime" => self.sigma_g_prime = parse(v)?,
            "heterogeneity" => self.heterogeneity = parse(v)?,
            "rho" => self.rho = parse(v)?,
            "minibatch" => {
                self.minibatch = if v == "full" { 0 } else { parse(v)? };
            }
            "imbalance_ratio" => self.imbalance_ratio = parse(v)?,
            "train_test_split" => self.train_test_split = parse(v)?,
            "samples" => self.samples = parse(v)?,
            "features" => self.features = parse(v)?,
            "separation" => self.separation = parse(v)?,
            "auroc_data" => self.auroc_data = Some(PathBuf::from(v)),
            "topology" => {
                self.topology = match v {
                    "ring" => TopologyKind::Ring,
                    "complete" => TopologyKind::Complete,
                    "file" => TopologyKind::File,
                    _ => return Err(format!("unknown topology {v:?} (ring, complete or file)")),
                }
            }
            "topology_file" => self.topology_file = Some(PathBuf::from(v)),
            "self_weight" => self.self_weight = parse(v)?,
            "metrics_every" => self.metrics_every = parse(v)?,
            "stationarity" => self.stationarity = parse_bool(v)?,
            "steady_fraction" => self.steady_fraction = parse(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "report" => {
                self.report = match v {
                    "none" => Report::None,
                    "slope" => Report::Slope,
                    _ => return Err(format!("unknown report {v:?} (none or slope)")),
                }
            }
            "wall_time" => self.wall_time = parse_bool(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Check invariants that span keys. Returns `(key, message)` on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let hp = &self.hp;
        if !(hp.eta > 0.0 && hp.eta < 1.0) {
            return Err(("eta", format!("η ∈ (0,1) violated: eta = {}", hp.eta)));
        }
        self.hp.validate().map_err(|e| ("eta", e.to_string()))?;
        let checks: [(&'static str, bool, &str); 12] = [
            ("iterations", self.iterations >= 1, "must be ≥ 1"),
            ("seeds", self.seeds >= 1, "must be ≥ 1"),
            ("workers", self.workers >= 1, "must be ≥ 1"),
            ("d0", self.d0 >= 1 && self.d1 >= 1 && self.d2 >= 1, "dimensions must be ≥ 1"),
            ("mu", self.mu > 0.0, "must be > 0"),
            (
                "sigma",
                self.sigma_f >= 0.0 && self.sigma_g >= 0.0 && self.sigma_g_prime >= 0.0,
                "noise levels must be ≥ 0",
            ),
            ("heterogeneity", self.heterogeneity >= 0.0, "must be ≥ 0"),
            ("rho", self.rho >= 0.0, "must be ≥ 0"),
            ("metrics_every", self.metrics_every >= 1, "must be ≥ 1"),
            (
                "steady_fraction",
                self.steady_fraction > 0.0 && self.steady_fraction <= 1.0,
                "must lie in (0, 1]",
            ),
            (
                "train_test_split",
                self.train_test_split > 0.0 && self.train_test_split < 1.0,
                "must lie in (0, 1)",
            ),
            (
                "imbalance_ratio",
                self.imbalance_ratio > 0.0 && self.imbalance_ratio < 1.0,
                "must lie in (0, 1)",
            ),
        ];
        for (key, ok, msg) in checks {
            if !ok {
                return Err((key, msg.to_string()));
            }
        }
        if self.topology == TopologyKind::File && self.topology_file.is_none() {
            return Err(("topology_file", "required when topology = file".into()));
        }
        if self.report == Report::Slope && !self.sweep.iter().any(|(k, _)| k == "eta") {
            return Err(("report", "slope report needs a sweep over eta".into()));
        }
        Ok(())
    }

    /// One `(tag, config)` per sweep point; the tag names the swept values
    /// (`base` without a sweep).
    pub fn expand(&self) -> Result<Vec<(String, ExperimentConfig)>, ConfigError> {
        let mut points = vec![(Vec::<String>::new(), self.clone())];
        for (key, values) in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for (parts, cfg) in &points {
                for value in values {
                    let mut cfg = cfg.clone();
                    cfg.set(key, value).map_err(|msg| ConfigError {
                        line: 0,
                        key: format!("sweep.{key}"),
                        msg,
                    })?;
                    let mut parts = parts.clone();
                    parts.push(format!("{key}-{value}"));
                    next.push((parts, cfg));
                }
            }
            points = next;
        }
        points
            .into_iter()
            .map(|(parts, cfg)| {
                cfg.validate().map_err(|(key, msg)| ConfigError {
                    line: 0,
                    key: key.into(),
                    msg,
                })?;
                let tag = if parts.is_empty() { "base".into() } else { parts.join("_") };
                Ok((tag, cfg))
            })
            .collect()
    }

    pub fn noise_levels(&self) -> NoiseLevels {
        NoiseLevels {
            sigma_f: self.sigma_f,
            sigma_g: self.sigma_g,
            sigma_g_prime: self.sigma_g_prime,
        }
    }

    pub fn build_topology(&self) -> Result<MixingMatrix, TopologyError> {
        match self.topology {
            TopologyKind::Ring => MixingMatrix::cycle(self.workers, self.self_weight),
            TopologyKind::Complete => MixingMatrix::complete(self.workers),
            TopologyKind::File => {
                let path = self.topology_file.as_deref().unwrap_or(Path::new(""));
                MixingMatrix::from_file(path)
            }
        }
    }

    pub fn build_problem(&self) -> Result<Box<dyn Oracle>, ProblemError> {
        let spec = SyntheticSpec {
            workers: self.workers,
            d0: self.d0,
            d1: self.d1,
            d2: self.d2,
            mu: self.mu,
            noise: self.noise_levels(),
            heterogeneity: self.heterogeneity,
            ..SyntheticSpec::default()
        };
        Ok(match self.problem {
            ProblemKind::Quadratic => Box::new(make_quadratic(&spec, self.instance_seed)?),
            ProblemKind::Tanh => Box::new(make_tanh(&spec, self.instance_seed)?),
            ProblemKind::Auroc => {
                let data = match &self.auroc_data {
                    Some(path) => load_auroc_csv(path)?,
                    None => gaussian_dataset(
                        self.samples,
                        self.features,
                        self.imbalance_ratio,
                        self.separation,
                        self.instance_seed,
                    )?,
                };
                let (train, test) = stratified_split(data, self.train_test_split, self.instance_seed)?;
                let minibatch = match self.minibatch {
                    0 => Minibatch::Full,
                    n => Minibatch::Sampled(n),
                };
                Box::new(
                    make_auroc(train, self.rho, minibatch, self.workers, self.instance_seed)?
                        .with_test_set(test)?,
                )
            }
        })
    }
}

/// Parse configuration text, applying defaults for absent keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut last_line = std::collections::HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |key: &str, msg: String| ConfigError {
            line,
            key: key.to_string(),
            msg,
        };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(content, "expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        if let Some(target) = key.strip_prefix("sweep.") {
            if !KEYS.contains(&target) {
                return Err(err(key, "sweep over unknown key".into()));
            }
            let values: Vec<String> = value
                .split(',')
                .map(|v| unquote(v).to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(err(key, "sweep needs at least one value".into()));
            }
            for v in &values {
                cfg.clone().set(target, v).map_err(|m| err(key, m))?;
            }
            cfg.sweep.retain(|(k, _)| k != target);
            cfg.sweep.push((target.to_string(), values));
            last_line.insert(target.to_string(), line);
        } else {
            cfg.set(key, value).map_err(|m| err(key, m))?;
            last_line.insert(key.to_string(), line);
        }
    }
    if cfg.sweep.is_empty() {
        cfg.validate().map_err(|(key, msg)| ConfigError {
            line: last_line.get(key).copied().unwrap_or(0),
            key: key.into(),
            msg,
        })?;
    } else {
        // each sweep point is validated on its own; blame the first sweep line
        let first_sweep = last_line.get(&cfg.sweep[0].0).copied().unwrap_or(0);
        cfg.expand().map_err(|mut e| {
            e.line = last_line.get(&e.key).copied().unwrap_or(first_sweep);
            e
        })?;
    }
    Ok(cfg)
}
