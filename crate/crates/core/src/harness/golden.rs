//! Hand-computed single step on a two-worker scalar instance.
//!
//! Worker 1: `g = x`, `f = y(g) − y²/2 + g`. Worker 2: `g = 2x + 1`,
//! `f = y(g − 1) − y²/2 − g`. Weights `[[3/4, 1/4], [1/4, 3/4]]`, start
//! `x = 1`, `y = 1/2`, noise off, `η = 1/2`, `γ_x = 1/5`, `γ_y = 2/5`,
//! `β_x = β_y = α = 1`. All values below are exact binary fractions or the
//! nearest doubles to short decimals, obtained by rational arithmetic.

use nalgebra::DMatrix;

use crate::algorithms::{init, step, Algorithm, HyperParams, NoiseMode, SwarmState};
use crate::problems::{InnerMap, NoiseLevels, SyntheticProblem};
use crate::topology::MixingMatrix;
use crate::ParamVec;

pub const GOLDEN_TOL: f64 = 1e-12;

/// Expected per-worker values after initialization.
pub const INIT: &[(&str, [f64; 2])] = &[("h", [1.0, 3.0]), ("u", [1.5, -1.0]), ("v", [0.5, 1.5])];

/// Expected per-worker values after one gossip step.
pub const GP_STEP: &[(&str, [f64; 2])] = &[
    ("x", [0.85, 1.1]),
    ("y", [0.6, 0.8]),
    ("h", [0.925, 3.1]),
    ("u", [1.55, -0.7]),
    ("v", [0.4125, 1.4]),
];

/// Expected per-worker values after one gradient-tracking step.
pub const GT_STEP: &[(&str, [f64; 2])] = &[
    ("x", [0.85, 1.1]),
    ("y", [0.6, 0.8]),
    ("h", [0.925, 3.1]),
    ("r", [1.425, 2.6]),
    ("u", [1.55, -0.7]),
    ("v", [0.6625, 1.15]),
    ("p", [0.925, -0.075]),
    ("q", [0.9125, 0.9]),
];

pub fn golden_problem() -> SyntheticProblem {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let v = |v: f64| ParamVec::from_element(1, v);
    SyntheticProblem::from_parts(
        InnerMap::Affine,
        1.0,
        NoiseLevels::default(),
        vec![s(1.0), s(2.0)],
        vec![v(0.0), v(1.0)],
        s(1.0),
        vec![v(0.0), v(1.0)],
        vec![v(1.0), v(-1.0)],
        10.0,
    )
    .expect("golden instance is valid")
}

pub fn golden_topology() -> MixingMatrix {
    MixingMatrix::from_weights(DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]))
        .expect("golden weights are valid")
}

pub fn golden_hyperparams() -> HyperParams {
    HyperParams {
        eta: 0.5,
        gamma_x: 0.2,
        gamma_y: 0.4,
        beta_x: 1.0,
        beta_y: 1.0,
        alpha: 1.0,
    }
}

/// One compared value.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRow {
    pub stage: &'static str,
    pub field: &'static str,
    pub worker: usize,
    pub expected: f64,
    pub actual: f64,
}

impl GoldenRow {
    pub fn error(&self) -> f64 {
        (self.expected - self.actual).abs()
    }
}

fn field(state: &SwarmState, k: usize, name: &str) -> f64 {
    let w = &state.workers[k];
    let v = match name {
        "x" => Some(&w.x),
        "y" => Some(&w.y),
        "h" => Some(&w.h),
        "u" => Some(&w.u),
        "v" => Some(&w.v),
        "p" => w.p.as_ref(),
        "q" => w.q.as_ref(),
        "r" => w.r.as_ref(),
        _ => None,
    };
    v.map_or(f64::NAN, |v| v[0])
}

fn compare(stage: &'static str, state: &SwarmState, table: &[(&'static str, [f64; 2])], out: &mut Vec<GoldenRow>) {
    for (name, expected) in table {
        for (k, &e) in expected.iter().enumerate() {
            out.push(GoldenRow {
                stage,
                field: name,
                worker: k + 1,
                expected: e,
                actual: field(state, k, name),
            });
        }
    }
}

/// Run both algorithms one step on the golden instance and tabulate every
/// compared value.
pub fn golden_rows() -> Vec<GoldenRow> {
    let p = golden_problem();
    let w = golden_topology();
    let hp = golden_hyperparams();
    let x0 = ParamVec::from_element(1, 1.0);
    let y0 = ParamVec::from_element(1, 0.5);
    let mut rows = Vec::new();
    for (alg, stage, table) in [
        (Algorithm::Gp, "gp", GP_STEP),
        (Algorithm::Gt, "gt", GT_STEP),
    ] {
        let s0 = init(&p, &w, &hp, alg, &x0, &y0, 0, NoiseMode::PerWorker).expect("golden init");
        if alg == Algorithm::Gp {
            compare("init", &s0, INIT, &mut rows);
        }
        let s1 = step(&s0, &p, &w, &hp).expect("golden step");
        compare(stage, &s1, table, &mut rows);
    }
    rows
}

/// Largest absolute deviation from the hand-computed values.
pub fn golden_max_error() -> f64 {
    golden_rows()
        .iter()
        .map(GoldenRow::error)
        .fold(0.0, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_values_match() {
        for r in golden_rows() {
            assert!(r.error() <= GOLDEN_TOL, "{r:?}");
        }
        assert!(golden_max_error() <= GOLDEN_TOL);
    }
}
