//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use super::config::{parse_config, ExperimentConfig};
use super::experiment::run_experiment;
use super::golden::{golden_rows, GOLDEN_TOL};
use super::selftest::run_selftest;
use crate::theory::{theorem1_bounds, theorem2_bounds};

pub const EXIT_OK: i32 = 0;
/// A check (golden, selftest) failed.
pub const EXIT_FAILED: i32 = 1;
/// At least one run aborted on a non-finite value.
pub const EXIT_ABORTED: i32 = 2;
/// Bad usage or invalid configuration.
pub const EXIT_USAGE: i32 = 64;
/// An input file could not be read, or an output could not be written.
pub const EXIT_NO_INPUT: i32 = 66;

#[derive(Debug, Parser)]
#[command(name = "decomp", about = "Decentralized compositional minimax simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override `output_dir` of the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override the base `seed` of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config: traces, summary and optional slope report.
    Run { config: PathBuf },
    /// Evaluate the theorem step-size bounds for a config (or `defaults`).
    Regime { config: String },
    /// Check one hand-computed step of both algorithms.
    Golden,
    /// Run the invariant suite on small instances.
    Selftest,
}

enum Loaded {
    Config(ExperimentConfig),
    Exit(i32),
}

fn load(path: &std::path::Path, err: &mut dyn Write) -> Loaded {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read config {}: {e}", path.display());
            return Loaded::Exit(EXIT_NO_INPUT);
        }
    };
    match parse_config(&text) {
        Ok(c) => Loaded::Config(c),
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            Loaded::Exit(EXIT_USAGE)
        }
    }
}

/// Entry point; returns the process exit code.
pub fn cli(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let args = match Cli::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let quiet = args.quiet;
    let mut say = |text: String| {
        if !quiet {
            let _ = out.write_all(text.as_bytes());
        }
    };
    match args.command {
        Command::Run { config } => {
            let mut cfg = match load(&config, err) {
                Loaded::Config(c) => c,
                Loaded::Exit(code) => return code,
            };
            if let Some(dir) = args.output_dir {
                cfg.output_dir = dir;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            match run_experiment(&cfg) {
                Ok(summary) => {
                    for r in &summary.runs {
                        let status = match &r.error {
                            None => "ok".to_string(),
                            Some(e) => format!("ABORTED ({e})"),
                        };
                        let crit = r.final_criterion.map_or("-".into(), |c| format!("{c:.4e}"));
                        let auc = r.final_auroc.map_or(String::new(), |a| format!(" auroc {a:.4}"));
                        say(format!("{} seed {}: {} criterion {}{}\n", r.tag, r.seed, status, crit, auc));
                    }
                    for s in &summary.slopes {
                        say(format!(
                            "slope {} {} cons_{}: {:.3} (r² {:.3}, {} points)\n",
                            s.group, s.algorithm, s.quantity, s.slope, s.r_squared, s.points
                        ));
                    }
                    say(format!("wrote {}\n", cfg.output_dir.join("summary.csv").display()));
                    summary.exit_code()
                }
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    EXIT_NO_INPUT
                }
            }
        }
        Command::Regime { config } => {
            let cfg = if config == "defaults" {
                ExperimentConfig::default()
            } else {
                match load(std::path::Path::new(&config), err) {
                    Loaded::Config(c) => c,
                    Loaded::Exit(code) => return code,
                }
            };
            let problem = match cfg.build_problem() {
                Ok(p) => p,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    return EXIT_USAGE;
                }
            };
            let w = match cfg.build_topology() {
                Ok(w) => w,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    return EXIT_USAGE;
                }
            };
            let c = problem.constants();
            let reports = [
                theorem1_bounds(c, w.lambda(), &cfg.hp),
                theorem2_bounds(c, w.lambda(), &cfg.hp),
            ];
            for report in reports {
                let report = match report {
                    Ok(r) => r,
                    Err(e) => {
                        let _ = writeln!(err, "error: {e}");
                        return EXIT_USAGE;
                    }
                };
                let mut text = report.table(&cfg.hp);
                let violations = report.violations();
                if !violations.is_empty() {
                    text.push_str(&format!(
                        "  warning: eta = {}, gamma_x = {}, gamma_y = {} violate the {} bound on {}\n",
                        cfg.hp.eta,
                        cfg.hp.gamma_x,
                        cfg.hp.gamma_y,
                        report.theorem,
                        violations.join(", ")
                    ));
                }
                text.push('\n');
                text.push_str(&report.key_values());
                text.push('\n');
                say(text);
            }
            EXIT_OK
        }
        Command::Golden => {
            let rows = golden_rows();
            let mut ok = true;
            say(format!("{:<6}{:<6}{:>7}{:>22}{:>22}{:>11}\n", "stage", "field", "worker", "expected", "actual", "error"));
            for r in &rows {
                let pass = r.error() <= GOLDEN_TOL;
                ok &= pass;
                say(format!(
                    "{:<6}{:<6}{:>7}{:>22.15}{:>22.15}{:>11.1e}{}\n",
                    r.stage,
                    r.field,
                    r.worker,
                    r.expected,
                    r.actual,
                    r.error(),
                    if pass { "" } else { "  MISMATCH" }
                ));
            }
            say(format!("golden: {}\n", if ok { "pass" } else { "FAIL" }));
            if ok {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Command::Selftest => {
            let checks = run_selftest();
            let ok = checks.iter().all(|c| c.passed);
            for c in &checks {
                say(format!("[{}] {}: {}\n", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail));
            }
            if ok {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
    }
}
