//! Diagnostics measured along a run: consensus errors, stationarity of the
//! network average, the combined convergence criterion, and log-log slope fits.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Duration;

use thiserror::Error;

use crate::algorithms::{mean_of, SwarmState};
use crate::problems::{best_response, deterministic_objective, objective_grads, Oracle, ProblemError};
use crate::ParamVec;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("log-log fit needs positive inputs, got ({scale}, {value})")]
    NonPositive { scale: f64, value: f64 },
    #[error("all scales are equal; slope undefined")]
    DegenerateScales,
    #[error("window must be ≥ 1")]
    EmptyWindow,
    #[error("window {window} exceeds {available} records carrying cons_{quantity}")]
    WindowTooLong {
        window: usize,
        available: usize,
        quantity: Quantity,
    },
    #[error("no values given")]
    Empty,
    #[error("dimension mismatch: vector {index} has length {got}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-worker quantities whose dispersion is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    X,
    Y,
    H,
    U,
    V,
    P,
    Q,
    R,
}

impl Quantity {
    pub const ALL: [Quantity; 8] = [
        Quantity::X,
        Quantity::Y,
        Quantity::H,
        Quantity::U,
        Quantity::V,
        Quantity::P,
        Quantity::Q,
        Quantity::R,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::X => "x",
            Quantity::Y => "y",
            Quantity::H => "h",
            Quantity::U => "u",
            Quantity::V => "v",
            Quantity::P => "p",
            Quantity::Q => "q",
            Quantity::R => "r",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// When diagnostics are taken and how expensive they may be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricsSchedule {
    /// Record every `every`-th iteration (plus iteration 0 and the last).
    pub every: usize,
    /// Compute `Φ`, `y*` based quantities; consensus is always recorded.
    pub stationarity: bool,
}

impl Default for MetricsSchedule {
    fn default() -> Self {
        Self {
            every: 10,
            stationarity: true,
        }
    }
}

/// Diagnostics of one recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    /// `F(x̄, ȳ)`.
    pub objective: Option<f64>,
    /// `‖∇Φ(x̄)‖²`.
    pub grad_phi_sq: Option<f64>,
    /// `‖y*(x̄) − ȳ‖²`.
    pub dual_gap_sq: Option<f64>,
    pub criterion: Option<f64>,
    pub consensus: BTreeMap<Quantity, f64>,
    pub auroc: Option<f64>,
    pub wall_ms: f64,
}

impl TraceRecord {
    pub fn cons(&self, q: Quantity) -> Option<f64> {
        self.consensus.get(&q).copied()
    }
}

/// `(1/K) Σ_k ‖v_k − v̄‖²`.
pub fn consensus_error(values: &[ParamVec]) -> Result<f64, MetricsError> {
    let first = values.first().ok_or(MetricsError::Empty)?;
    for (index, v) in values.iter().enumerate() {
        if v.len() != first.len() {
            return Err(MetricsError::Dimension {
                index,
                expected: first.len(),
                got: v.len(),
            });
        }
    }
    let mean = mean_of(values.iter());
    let total: f64 = values.iter().map(|v| (v - &mean).norm_squared()).sum();
    Ok(total / values.len() as f64)
}

/// Stationarity of a point `(x̄, ȳ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    pub grad_phi_sq: f64,
    pub dual_gap_sq: f64,
    /// `grad_phi_sq + C_g² L_f² · dual_gap_sq`.
    pub criterion: f64,
    /// Whether the best response met its tolerance.
    pub converged: bool,
}

pub fn criterion_from<P: Oracle + ?Sized>(problem: &P, grad_phi_sq: f64, dual_gap_sq: f64) -> f64 {
    let c = problem.constants();
    grad_phi_sq + c.c_g * c.c_g * c.l_f * c.l_f * dual_gap_sq
}

pub fn stationarity<P: Oracle + ?Sized>(
    problem: &P,
    x_bar: &ParamVec,
    y_bar: &ParamVec,
) -> Result<Stationarity, ProblemError> {
    let br = best_response(problem, x_bar)?;
    if y_bar.len() != br.y.len() {
        return Err(ProblemError::Dimension {
            what: "y_bar",
            expected: br.y.len(),
            got: y_bar.len(),
        });
    }
    let (grad, _) = objective_grads(problem, x_bar, &br.y)?;
    let grad_phi_sq = grad.norm_squared();
    let dual_gap_sq = (&br.y - y_bar).norm_squared();
    Ok(Stationarity {
        grad_phi_sq,
        dual_gap_sq,
        criterion: criterion_from(problem, grad_phi_sq, dual_gap_sq),
        converged: br.converged,
    })
}

/// Least-squares slope of `log(value)` on `log(scale)` and its `r²`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64), MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let mut logs = Vec::with_capacity(points.len());
    for &(scale, value) in points {
        if !(scale > 0.0 && value > 0.0) {
            return Err(MetricsError::NonPositive { scale, value });
        }
        logs.push((scale.ln(), value.ln()));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateScales);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}

/// Mean of `cons_quantity` over the last `window` records that carry it.
pub fn steady_state_consensus(
    trace: &[TraceRecord],
    quantity: Quantity,
    window: usize,
) -> Result<f64, MetricsError> {
    if window == 0 {
        return Err(MetricsError::EmptyWindow);
    }
    let values: Vec<f64> = trace.iter().filter_map(|r| r.cons(quantity)).collect();
    if window > values.len() {
        return Err(MetricsError::WindowTooLong {
            window,
            available: values.len(),
            quantity,
        });
    }
    let tail = &values[values.len() - window..];
    Ok(tail.iter().sum::<f64>() / window as f64)
}

/// Consensus errors of every quantity the state carries.
pub fn consensus_map(state: &SwarmState) -> BTreeMap<Quantity, f64> {
    let ws = &state.workers;
    let mut out = BTreeMap::new();
    for q in Quantity::ALL {
        let values: Option<Vec<ParamVec>> = ws
            .iter()
            .map(|w| match q {
                Quantity::X => Some(w.x.clone()),
                Quantity::Y => Some(w.y.clone()),
                Quantity::H => Some(w.h.clone()),
                Quantity::U => Some(w.u.clone()),
                Quantity::V => Some(w.v.clone()),
                Quantity::P => w.p.clone(),
                Quantity::Q => w.q.clone(),
                Quantity::R => w.r.clone(),
            })
            .collect();
        if let Some(values) = values {
            let e = consensus_error(&values).expect("worker vectors share a dimension");
            out.insert(q, e);
        }
    }
    out
}

/// Build the record of the current state.
pub fn record<P: Oracle + ?Sized>(
    problem: &P,
    state: &SwarmState,
    schedule: &MetricsSchedule,
    elapsed: Duration,
) -> Result<TraceRecord, ProblemError> {
    let x_bar = state.mean_x();
    let y_bar = state.mean_y();
    let mut rec = TraceRecord {
        t: state.t,
        objective: None,
        grad_phi_sq: None,
        dual_gap_sq: None,
        criterion: None,
        consensus: consensus_map(state),
        auroc: problem.test_auroc(&x_bar),
        wall_ms: elapsed.as_secs_f64() * 1e3,
    };
    if schedule.stationarity {
        let s = stationarity(problem, &x_bar, &y_bar)?;
        rec.objective = Some(deterministic_objective(problem, &x_bar, &y_bar)?);
        rec.grad_phi_sq = Some(s.grad_phi_sq);
        rec.dual_gap_sq = Some(s.dual_gap_sq);
        rec.criterion = Some(s.criterion);
    }
    Ok(rec)
}

/// Trace CSV header, in column order.
pub fn csv_header() -> Vec<String> {
    let mut cols: Vec<String> = ["t", "objective", "grad_phi_sq", "dual_gap_sq", "criterion"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(Quantity::ALL.iter().map(|q| format!("cons_{q}")));
    cols.push("auroc".into());
    cols.push("wall_ms".into());
    cols
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Write a trace as CSV. With `wall_time = false` the `wall_ms` column is left
/// empty so repeated runs produce identical bytes.
pub fn write_trace<W: Write>(out: W, trace: &[TraceRecord], wall_time: bool) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    for r in trace {
        let mut row = vec![
            r.t.to_string(),
            cell(r.objective),
            cell(r.grad_phi_sq),
            cell(r.dual_gap_sq),
            cell(r.criterion),
        ];
        row.extend(Quantity::ALL.iter().map(|q| cell(r.cons(*q))));
        row.push(cell(r.auroc));
        row.push(cell(wall_time.then_some(r.wall_ms)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, phi_and_grad, SyntheticSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> ParamVec {
        ParamVec::from_column_slice(xs)
    }

    fn rec(t: u64, h: f64) -> TraceRecord {
        TraceRecord {
            t,
            objective: None,
            grad_phi_sq: None,
            dual_gap_sq: None,
            criterion: None,
            consensus: BTreeMap::from([(Quantity::H, h)]),
            auroc: None,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus_error(&vec![v(&[1.0, 2.0]); 3]).unwrap(), 0.0);
        assert_eq!(consensus_error(&[v(&[0.0]), v(&[2.0])]).unwrap(), 1.0);
        assert!(matches!(consensus_error(&[]), Err(MetricsError::Empty)));
        assert!(matches!(
            consensus_error(&[v(&[0.0]), v(&[1.0, 2.0])]),
            Err(MetricsError::Dimension { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn consensus_translation_and_permutation_invariant(
            raw in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..7),
            shift in prop::collection::vec(-10.0f64..10.0, 3),
            rot in 0usize..7,
        ) {
            let vals: Vec<ParamVec> = raw.iter().map(|r| v(r)).collect();
            let base = consensus_error(&vals).unwrap();
            prop_assert!(base >= 0.0);
            let s = v(&shift);
            let moved: Vec<ParamVec> = vals.iter().map(|x| x + &s).collect();
            prop_assert!((consensus_error(&moved).unwrap() - base).abs() <= 1e-9 * (1.0 + base));
            let mut perm = vals.clone();
            perm.rotate_left(rot % vals.len());
            prop_assert!((consensus_error(&perm).unwrap() - base).abs() <= 1e-9 * (1.0 + base));
        }
    }

    #[test]
    fn slope_examples() {
        let (s, r2) = fit_loglog_slope(&[(1.0, 1.0), (2.0, 4.0), (4.0, 16.0)]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        let (s, r2) = fit_loglog_slope(&[(1.0, 3.0), (2.0, 6.0), (4.0, 12.0)]).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(matches!(
            fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(MetricsError::NonPositive { .. })
        ));
        assert!(matches!(
            fit_loglog_slope(&[(1.0, 1.0), (2.0, 1.0)]),
            Err(MetricsError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn noisy_quadratic_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&e: &f64| (e, e * e * rng.random_range(0.9..1.1)))
            .collect();
        let (s, _) = fit_loglog_slope(&pts).unwrap();
        assert!((1.8..=2.2).contains(&s), "slope {s}");
    }

    #[test]
    fn steady_state_examples() {
        let constant: Vec<_> = (0..5).map(|t| rec(t, 0.7)).collect();
        assert!((steady_state_consensus(&constant, Quantity::H, 3).unwrap() - 0.7).abs() < 1e-15);
        let vals = [1.0, 2.0, 3.0, 5.0];
        let trace: Vec<_> = vals.iter().enumerate().map(|(t, &h)| rec(t as u64, h)).collect();
        assert_eq!(steady_state_consensus(&trace, Quantity::H, 2).unwrap(), 4.0);
        assert_eq!(steady_state_consensus(&trace, Quantity::H, 4).unwrap(), 2.75);
        assert!(matches!(
            steady_state_consensus(&trace, Quantity::H, 0),
            Err(MetricsError::EmptyWindow)
        ));
        assert!(steady_state_consensus(&trace, Quantity::H, 5).is_err());
        assert!(steady_state_consensus(&trace, Quantity::R, 1).is_err());
    }

    #[test]
    fn stationarity_at_saddle_and_best_response() {
        let spec = SyntheticSpec { d0: 4, d1: 3, d2: 4, ..SyntheticSpec::default() };
        let p = make_quadratic(&spec, 2).unwrap();
        let x = v(&[0.4, -1.0, 0.2]);
        let br = best_response(&p, &x).unwrap();
        let s = stationarity(&p, &x, &br.y).unwrap();
        assert_eq!(s.dual_gap_sq, 0.0);
        assert_eq!(s.criterion, s.grad_phi_sq);
        let s2 = stationarity(&p, &x, &v(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(s2.criterion >= s2.grad_phi_sq);
        assert_eq!(s2.criterion, criterion_from(&p, s2.grad_phi_sq, s2.dual_gap_sq));

        // Φ is a convex quadratic here; one Newton step from any point lands on x*.
        let n = 3;
        let g0 = phi_and_grad(&p, &ParamVec::zeros(n)).unwrap().grad;
        let hess = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let e = ParamVec::from_fn(n, |r, _| if r == j { 1.0 } else { 0.0 });
            phi_and_grad(&p, &e).unwrap().grad[i] - g0[i]
        });
        let x_star = -hess.lu().solve(&g0).unwrap();
        let y_star = best_response(&p, &x_star).unwrap().y;
        assert!(stationarity(&p, &x_star, &y_star).unwrap().criterion <= 1e-12);
    }

    #[test]
    fn csv_layout() {
        let mut r = rec(3, 0.5);
        r.objective = Some(1.5);
        r.wall_ms = 12.0;
        let mut buf = Vec::new();
        write_trace(&mut buf, &[r.clone()], true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,objective,grad_phi_sq,dual_gap_sq,criterion,cons_x,cons_y,cons_h,cons_u,cons_v,cons_p,cons_q,cons_r,auroc,wall_ms"
        );
        assert_eq!(lines.next().unwrap(), "3,1.5,,,,,,0.5,,,,,,,12");
        let mut buf = Vec::new();
        write_trace(&mut buf, &[r], false).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with(",0.5,,,,,,,\n"));
    }
}
