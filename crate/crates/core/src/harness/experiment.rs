//! Run every sweep point × seed, persist traces and summaries.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Report};
use crate::algorithms::{run, Algorithm, RunSpec};
use crate::metrics::{fit_loglog_slope, steady_state_consensus, write_trace, MetricsError, MetricsSchedule, Quantity};
use crate::problems::ProblemError;
use crate::topology::TopologyError;

/// Environment variable capping the number of parallel runners.
pub const THREADS_ENV: &str = "DECOMP_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("building instance: {0}")]
    Problem(#[from] ProblemError),
    #[error("building topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: MetricsError },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub tag: String,
    /// Index within the sweep point (`trace_seed<i>.csv`).
    pub seed_index: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub eta: f64,
    /// `None` on success, the abort message otherwise.
    pub error: Option<String>,
    pub final_criterion: Option<f64>,
    pub final_auroc: Option<f64>,
    pub steady: BTreeMap<Quantity, f64>,
}

/// Fitted consensus slope of one group of an η-sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRow {
    /// Tag with the η component removed (`all` when η is the only sweep key).
    pub group: String,
    pub algorithm: Algorithm,
    pub quantity: Quantity,
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSummary {
    /// Sorted by tag, then seed index.
    pub runs: Vec<RunSummary>,
    pub slopes: Vec<SlopeRow>,
}

impl ExperimentSummary {
    pub fn aborted(&self) -> usize {
        self.runs.iter().filter(|r| r.error.is_some()).count()
    }

    /// 0 when every run finished, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.aborted() == 0 {
            0
        } else {
            2
        }
    }
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Slope quantity of an algorithm: the inner estimate the gradients use.
pub fn slope_quantity(algorithm: Algorithm) -> Quantity {
    match algorithm {
        Algorithm::Gt => Quantity::R,
        _ => Quantity::H,
    }
}

fn run_one(tag: &str, cfg: &ExperimentConfig, seed_index: usize, dir: &Path) -> Result<RunSummary, HarnessError> {
    let problem = cfg.build_problem()?;
    let w = cfg.build_topology()?;
    let seed = cfg.seed + seed_index as u64;
    let spec = RunSpec {
        noise: cfg.noise_mode,
        schedule: MetricsSchedule {
            every: cfg.metrics_every,
            stationarity: cfg.stationarity,
        },
        ..RunSpec::new(cfg.algorithm, cfg.iterations, seed)
    };
    let mut summary = RunSummary {
        tag: tag.to_string(),
        seed_index,
        seed,
        algorithm: cfg.algorithm,
        eta: cfg.hp.eta,
        error: None,
        final_criterion: None,
        final_auroc: None,
        steady: BTreeMap::new(),
    };
    match run(problem.as_ref(), &w, &cfg.hp, &spec) {
        Ok(out) => {
            let path = dir.join(format!("trace_seed{seed_index}.csv"));
            let file = File::create(&path).map_err(io_err(&path))?;
            write_trace(BufWriter::new(file), &out.trace, cfg.wall_time)
                .map_err(|source| HarnessError::Write { path, source })?;
            let last = out.trace.last().expect("trace has the initial record");
            summary.final_criterion = last.criterion;
            summary.final_auroc = last.auroc;
            let window = ((out.trace.len() as f64 * cfg.steady_fraction).ceil() as usize).max(1);
            for q in Quantity::ALL {
                if let Ok(v) = steady_state_consensus(&out.trace, q, window) {
                    summary.steady.insert(q, v);
                }
            }
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    Ok(summary)
}

fn strip_eta(tag: &str) -> String {
    let rest: Vec<&str> = tag.split('_').filter(|p| !p.starts_with("eta-")).collect();
    if rest.is_empty() {
        "all".into()
    } else {
        rest.join("_")
    }
}

fn slopes(runs: &[RunSummary]) -> Vec<SlopeRow> {
    // (group, algorithm) -> eta bits -> values over seeds
    let mut groups: BTreeMap<(String, Algorithm), BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for r in runs.iter().filter(|r| r.error.is_none()) {
        let q = slope_quantity(r.algorithm);
        if let Some(&v) = r.steady.get(&q) {
            groups
                .entry((strip_eta(&r.tag), r.algorithm))
                .or_default()
                .entry(r.eta.to_bits())
                .or_insert((r.eta, Vec::new()))
                .1
                .push(v);
        }
    }
    groups
        .into_iter()
        .filter_map(|((group, algorithm), by_eta)| {
            let points: Vec<(f64, f64)> = by_eta
                .values()
                .map(|(eta, vals)| (*eta, vals.iter().sum::<f64>() / vals.len() as f64))
                .collect();
            let (slope, r_squared) = fit_loglog_slope(&points).ok()?;
            Some(SlopeRow {
                group,
                algorithm,
                quantity: slope_quantity(algorithm),
                slope,
                r_squared,
                points: points.len(),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_summary(path: &Path, runs: &[RunSummary]) -> Result<(), HarnessError> {
    let wrap = |e: csv::Error| HarnessError::Write {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header = vec![
        "tag",
        "seed_index",
        "seed",
        "algorithm",
        "eta",
        "status",
        "final_criterion",
        "final_auroc",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend(Quantity::ALL.iter().map(|q| format!("steady_cons_{q}")));
    header.push("error".into());
    w.write_record(&header).map_err(wrap)?;
    for r in runs {
        let mut row = vec![
            r.tag.clone(),
            r.seed_index.to_string(),
            r.seed.to_string(),
            r.algorithm.to_string(),
            r.eta.to_string(),
            if r.error.is_some() { "aborted" } else { "ok" }.to_string(),
            opt(r.final_criterion),
            opt(r.final_auroc),
        ];
        row.extend(Quantity::ALL.iter().map(|q| opt(r.steady.get(q).copied())));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_slopes(path: &Path, rows: &[SlopeRow]) -> Result<(), HarnessError> {
    let wrap = |e: csv::Error| HarnessError::Write {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(["group", "algorithm", "quantity", "slope", "r_squared", "points"])
        .map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.algorithm.to_string(),
            format!("cons_{}", r.quantity),
            r.slope.to_string(),
            r.r_squared.to_string(),
            r.points.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Execute every sweep point × seed of `config`, writing
/// `<output_dir>/<tag>/trace_seed<i>.csv`, `<output_dir>/summary.csv` and,
/// for `report = slope`, `<output_dir>/slopes.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, HarnessError> {
    let points = config.expand()?;
    let out = &config.output_dir;
    let mut jobs = Vec::new();
    for (tag, cfg) in &points {
        let dir = out.join(tag);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for i in 0..cfg.seeds {
            jobs.push((tag.as_str(), cfg, i, dir.clone()));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut runs = pool.install(|| {
        jobs.par_iter()
            .map(|(tag, cfg, i, dir)| run_one(tag, cfg, *i, dir))
            .collect::<Result<Vec<_>, _>>()
    })?;
    runs.sort_by(|a, b| a.tag.cmp(&b.tag).then(a.seed_index.cmp(&b.seed_index)));
    write_summary(&out.join("summary.csv"), &runs)?;
    let slopes = if config.report == Report::Slope {
        let rows = slopes(&runs);
        write_slopes(&out.join("slopes.csv"), &rows)?;
        rows
    } else {
        Vec::new()
    };
    Ok(ExperimentSummary { runs, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    #[test]
    fn eta_is_stripped_from_group() {
        assert_eq!(strip_eta("eta-0.1"), "all");
        assert_eq!(strip_eta("workers-4_eta-0.1"), "workers-4");
        assert_eq!(strip_eta("base"), "base");
    }

    #[test]
    fn two_seeds_two_traces() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "iterations = 20\nseeds = 2\nworkers = 3\nd0 = 2\nd1 = 2\nd2 = 2\nwall_time = false\noutput_dir = {}",
            dir.path().display()
        );
        let cfg = parse_config(&text).unwrap();
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.runs.len(), 2);
        assert_eq!(s.exit_code(), 0);
        for i in 0..2 {
            assert!(dir.path().join(format!("base/trace_seed{i}.csv")).exists());
        }
        assert!(!dir.path().join("base/trace_seed2.csv").exists());
        assert!(dir.path().join("summary.csv").exists());
    }

    #[test]
    fn divergent_run_is_counted() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "iterations = 300\nworkers = 3\nd0 = 2\nd1 = 2\nd2 = 2\ngamma_x = 1e150\ngamma_y = 1e150\nmetrics_every = 1000\nstationarity = false\noutput_dir = {}",
            dir.path().display()
        );
        let s = run_experiment(&parse_config(&text).unwrap()).unwrap();
        assert_eq!(s.aborted(), 1);
        assert_eq!(s.exit_code(), 2);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.contains("aborted"));
    }
}
