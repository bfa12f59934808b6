//! Synchronous per-iteration updates over all K workers.
//!
//! Four variants share one step routine:
//!
//! * `Gp`: gossip on `x`, `y`; moving-average inner estimate `h`; momenta `u`, `v`.
//! * `Gt`: gradient tracking on the momenta (`p`, `q`) and on the inner
//!   estimate (`r`); gradients are evaluated at `r`.
//! * `GtM`: tracking on the momenta only; gradients at `h`.
//! * `Dsgda`: `Gp` with the inner moving-average rate pinned to 1, i.e. the
//!   fresh inner sample is plugged straight into the chained gradient.
//!
//! Every worker reads iteration-`t` values of its neighbours and all workers
//! commit `t + 1` together. Tracked quantities are stored at the same index as
//! the quantity they track: after any step, `p_t` pairs with `u_t`, so
//! `mean(p) = mean(u)`, `mean(q) = mean(v)` and `mean(r) = mean(h)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::metrics::{self, MetricsSchedule, TraceRecord};
use crate::problems::{Oracle, ProblemError};
use crate::topology::{mix, MixingMatrix, TopologyError};
use crate::ParamVec;

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid hyperparameter: {0}")]
    HyperParam(String),
    #[error("state is tagged {state}, step expects {expected}")]
    WrongAlgorithm { state: Algorithm, expected: Algorithm },
    #[error("mixing matrix has {matrix} workers, instance has {instance}")]
    WorkerMismatch { matrix: usize, instance: usize },
    #[error("{what}: dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {field} at iteration {iteration}, worker {worker}")]
    NonFinite {
        iteration: u64,
        worker: usize,
        field: &'static str,
    },
    #[error("iterations must be ≥ 1")]
    NoIterations,
}

/// Step sizes and averaging rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub eta: f64,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub beta_x: f64,
    pub beta_y: f64,
    pub alpha: f64,
}

impl Default for HyperParams {
    /// `gamma = 0.99`, `beta = 9.9`, `alpha = 9`, `eta = 0.1`.
    fn default() -> Self {
        Self {
            eta: 0.1,
            gamma_x: 0.99,
            gamma_y: 0.99,
            beta_x: 9.9,
            beta_y: 9.9,
            alpha: 9.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), AlgorithmError> {
        let bad = |msg: String| Err(AlgorithmError::HyperParam(msg));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta ∈ (0,1) violated: eta = {}", self.eta));
        }
        for (name, v) in [
            ("gamma_x", self.gamma_x),
            ("gamma_y", self.gamma_y),
            ("beta_x", self.beta_x),
            ("beta_y", self.beta_y),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} > 0 violated: {name} = {v}"));
            }
        }
        // a unit rate is allowed: it turns the average into the fresh sample
        for (name, v) in [
            ("alpha*eta", self.alpha * self.eta),
            ("beta_x*eta", self.beta_x * self.eta),
            ("beta_y*eta", self.beta_y * self.eta),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} ∈ (0,1] violated: {name} = {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Gp,
    Gt,
    GtM,
    Dsgda,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Gp, Algorithm::Gt, Algorithm::GtM, Algorithm::Dsgda];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gp => "gp",
            Algorithm::Gt => "gt",
            Algorithm::GtM => "gt-m",
            Algorithm::Dsgda => "dsgda",
        }
    }

    fn tracks_momentum(self) -> bool {
        matches!(self, Algorithm::Gt | Algorithm::GtM)
    }

    fn tracks_inner(self) -> bool {
        self == Algorithm::Gt
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected gp, gt, gt-m or dsgda)"))
    }
}

/// Whose noise stream a worker reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Worker `k` reads stream `k`.
    #[default]
    PerWorker,
    /// Every worker reads stream 0.
    Shared,
}

/// Per-worker optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub x: ParamVec,
    pub y: ParamVec,
    /// Moving-average estimate of `g_k(x)`.
    pub h: ParamVec,
    pub u: ParamVec,
    pub v: ParamVec,
    /// Tracked primal momentum (GT, GT-M).
    pub p: Option<ParamVec>,
    /// Tracked dual momentum (GT, GT-M).
    pub q: Option<ParamVec>,
    /// Tracked inner estimate (GT).
    pub r: Option<ParamVec>,
    /// Previous-iteration `u`, `v`, `h` (tracking variants).
    pub u_prev: Option<ParamVec>,
    pub v_prev: Option<ParamVec>,
    pub h_prev: Option<ParamVec>,
}

impl WorkerState {
    fn first_non_finite(&self) -> Option<&'static str> {
        let fields: [(&'static str, Option<&ParamVec>); 8] = [
            ("x", Some(&self.x)),
            ("y", Some(&self.y)),
            ("h", Some(&self.h)),
            ("u", Some(&self.u)),
            ("v", Some(&self.v)),
            ("p", self.p.as_ref()),
            ("q", self.q.as_ref()),
            ("r", self.r.as_ref()),
        ];
        fields
            .into_iter()
            .find(|(_, v)| v.is_some_and(|v| v.iter().any(|c| !c.is_finite())))
            .map(|(name, _)| name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub workers: Vec<WorkerState>,
    pub t: u64,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub noise: NoiseMode,
}

impl SwarmState {
    pub fn mean_x(&self) -> ParamVec {
        mean_of(self.workers.iter().map(|w| &w.x))
    }

    pub fn mean_y(&self) -> ParamVec {
        mean_of(self.workers.iter().map(|w| &w.y))
    }

    fn noise_worker(&self, k: usize) -> usize {
        match self.noise {
            NoiseMode::PerWorker => k,
            NoiseMode::Shared => 0,
        }
    }

    fn check_finite(&self) -> Result<(), AlgorithmError> {
        for (worker, w) in self.workers.iter().enumerate() {
            if let Some(field) = w.first_non_finite() {
                return Err(AlgorithmError::NonFinite {
                    iteration: self.t,
                    worker,
                    field,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn mean_of<'a>(mut it: impl Iterator<Item = &'a ParamVec>) -> ParamVec {
    let first = it.next().expect("at least one worker").clone();
    let (sum, n) = it.fold((first, 1usize), |(acc, n), v| (acc + v, n + 1));
    sum / n as f64
}

fn check_setup<P: Oracle + ?Sized>(problem: &P, w: &MixingMatrix) -> Result<(), AlgorithmError> {
    let workers = problem.dims().workers;
    if w.workers() != workers {
        return Err(AlgorithmError::WorkerMismatch {
            matrix: w.workers(),
            instance: workers,
        });
    }
    Ok(())
}

/// Iteration-0 state: every worker at `(x0, y0)`, `h` a fresh inner sample,
/// `u`, `v` fresh stochastic gradients at `(h, y0)`. Tracking variants start
/// with `p = u`, `q = v` (the tracking recursion with zero predecessors) and
/// `r = h`.
#[allow(clippy::too_many_arguments)]
pub fn init<P: Oracle + ?Sized>(
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
    algorithm: Algorithm,
    x0: &ParamVec,
    y0: &ParamVec,
    seed: u64,
    noise: NoiseMode,
) -> Result<SwarmState, AlgorithmError> {
    hp.validate()?;
    check_setup(problem, w)?;
    let dims = problem.dims();
    for (what, v, expected) in [("x0", x0, dims.d1), ("y0", y0, dims.d2)] {
        if v.len() != expected {
            return Err(AlgorithmError::Dimension {
                what,
                expected,
                got: v.len(),
            });
        }
    }
    let mut state = SwarmState {
        workers: Vec::with_capacity(dims.workers),
        t: 0,
        algorithm,
        seed,
        noise,
    };
    for k in 0..dims.workers {
        let (xi, zeta) = problem.sample_keys(seed, state.noise_worker(k), 0);
        let h = problem.inner_value(k, x0, xi)?;
        let jac = problem.inner_jacobian(k, x0, xi)?;
        let (grad_g, grad_y) = problem.outer_grads(k, &h, y0, zeta)?;
        let u = jac.tr_mul(&grad_g);
        let v = grad_y;
        let tracking = algorithm.tracks_momentum();
        state.workers.push(WorkerState {
            x: x0.clone(),
            y: y0.clone(),
            p: tracking.then(|| u.clone()),
            q: tracking.then(|| v.clone()),
            r: algorithm.tracks_inner().then(|| h.clone()),
            u_prev: tracking.then(|| ParamVec::zeros(dims.d1)),
            v_prev: tracking.then(|| ParamVec::zeros(dims.d2)),
            h_prev: algorithm.tracks_inner().then(|| h.clone()),
            h,
            u,
            v,
        });
    }
    state.check_finite()?;
    Ok(state)
}

fn expect(state: &SwarmState, expected: Algorithm) -> Result<(), AlgorithmError> {
    if state.algorithm != expected {
        return Err(AlgorithmError::WrongAlgorithm {
            state: state.algorithm,
            expected,
        });
    }
    Ok(())
}

/// One gossip step (moving-average inner estimate, plain momenta).
pub fn step_gp<P: Oracle + ?Sized>(
    state: &SwarmState,
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
) -> Result<SwarmState, AlgorithmError> {
    expect(state, Algorithm::Gp)?;
    advance(state, problem, w, hp)
}

/// One gradient-tracking step (tracked momenta and tracked inner estimate).
pub fn step_gt<P: Oracle + ?Sized>(
    state: &SwarmState,
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
) -> Result<SwarmState, AlgorithmError> {
    expect(state, Algorithm::Gt)?;
    advance(state, problem, w, hp)
}

/// One step with tracked momenta but an untracked inner estimate.
pub fn step_gt_m<P: Oracle + ?Sized>(
    state: &SwarmState,
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
) -> Result<SwarmState, AlgorithmError> {
    expect(state, Algorithm::GtM)?;
    advance(state, problem, w, hp)
}

/// One non-compositional step: the fresh inner sample replaces `h`.
pub fn step_dsgda<P: Oracle + ?Sized>(
    state: &SwarmState,
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
) -> Result<SwarmState, AlgorithmError> {
    expect(state, Algorithm::Dsgda)?;
    advance(state, problem, w, hp)
}

/// Dispatch on the state's algorithm tag.
pub fn step<P: Oracle + ?Sized>(
    state: &SwarmState,
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
) -> Result<SwarmState, AlgorithmError> {
    advance(state, problem, w, hp)
}

fn collect<'a>(
    workers: &'a [WorkerState],
    f: impl Fn(&'a WorkerState) -> Option<&'a ParamVec>,
) -> Option<Vec<ParamVec>> {
    workers.iter().map(|w| f(w).cloned()).collect()
}

/// `(mixed − old) + new`. Ordered so that with `W = [1]` and `tracked == old`
/// the result is `new` bit-for-bit.
fn tracked(mixed: &ParamVec, old: &ParamVec, new: &ParamVec) -> ParamVec {
    (mixed - old) + new
}

fn advance<P: Oracle + ?Sized>(
    state: &SwarmState,
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
) -> Result<SwarmState, AlgorithmError> {
    check_setup(problem, w)?;
    let alg = state.algorithm;
    let eta = hp.eta;
    let inner_rate = match alg {
        Algorithm::Dsgda => 1.0,
        _ => hp.alpha * eta,
    };
    let (bx, by) = (hp.beta_x * eta, hp.beta_y * eta);
    let t_next = state.t + 1;
    let ws = &state.workers;

    let xs: Vec<ParamVec> = ws.iter().map(|s| s.x.clone()).collect();
    let ys: Vec<ParamVec> = ws.iter().map(|s| s.y.clone()).collect();
    let mixed_x = mix(w, &xs)?;
    let mixed_y = mix(w, &ys)?;
    let mixed_p = collect(ws, |s| s.p.as_ref()).map(|v| mix(w, &v)).transpose()?;
    let mixed_q = collect(ws, |s| s.q.as_ref()).map(|v| mix(w, &v)).transpose()?;
    let mixed_r = collect(ws, |s| s.r.as_ref()).map(|v| mix(w, &v)).transpose()?;

    let mut next = Vec::with_capacity(ws.len());
    for (k, cur) in ws.iter().enumerate() {
        let dir_x = cur.p.as_ref().unwrap_or(&cur.u);
        let dir_y = cur.q.as_ref().unwrap_or(&cur.v);
        let x_tilde = &mixed_x[k] - dir_x * hp.gamma_x;
        let x = &cur.x + (x_tilde - &cur.x) * eta;
        let y_tilde = &mixed_y[k] + dir_y * hp.gamma_y;
        let y = &cur.y + (y_tilde - &cur.y) * eta;

        let (xi, zeta) = problem.sample_keys(state.seed, state.noise_worker(k), t_next);
        let fresh = problem.inner_value(k, &x, xi)?;
        let h = &cur.h * (1.0 - inner_rate) + fresh * inner_rate;
        let r = mixed_r.as_ref().map(|m| {
            let old = cur.r.as_ref().map(|_| &cur.h).expect("r present");
            tracked(&m[k], old, &h)
        });
        let at = r.as_ref().unwrap_or(&h);

        let jac = problem.inner_jacobian(k, &x, xi)?;
        let (grad_g, grad_y) = problem.outer_grads(k, at, &y, zeta)?;
        let u = &cur.u * (1.0 - bx) + jac.tr_mul(&grad_g) * bx;
        let v = &cur.v * (1.0 - by) + grad_y * by;

        let p = mixed_p.as_ref().map(|m| tracked(&m[k], &cur.u, &u));
        let q = mixed_q.as_ref().map(|m| tracked(&m[k], &cur.v, &v));
        let tracking = alg.tracks_momentum();
        next.push(WorkerState {
            u_prev: tracking.then(|| cur.u.clone()),
            v_prev: tracking.then(|| cur.v.clone()),
            h_prev: alg.tracks_inner().then(|| cur.h.clone()),
            x,
            y,
            h,
            u,
            v,
            p,
            q,
            r,
        });
    }
    let out = SwarmState {
        workers: next,
        t: t_next,
        ..state.clone()
    };
    out.check_finite()?;
    Ok(out)
}

/// Settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub iterations: u64,
    pub seed: u64,
    pub noise: NoiseMode,
    pub schedule: MetricsSchedule,
    /// Starting point; zeros when `None`.
    pub x0: Option<ParamVec>,
    pub y0: Option<ParamVec>,
}

impl RunSpec {
    pub fn new(algorithm: Algorithm, iterations: u64, seed: u64) -> Self {
        Self {
            algorithm,
            iterations,
            seed,
            noise: NoiseMode::PerWorker,
            schedule: MetricsSchedule::default(),
            x0: None,
            y0: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub state: SwarmState,
}

/// Iterate `T` steps from [`init`], recording diagnostics on the schedule
/// (iteration 0, every `every`-th iteration, and the last one).
pub fn run<P: Oracle + ?Sized>(
    problem: &P,
    w: &MixingMatrix,
    hp: &HyperParams,
    spec: &RunSpec,
) -> Result<RunOutput, AlgorithmError> {
    if spec.iterations == 0 {
        return Err(AlgorithmError::NoIterations);
    }
    let dims = problem.dims();
    let x0 = spec.x0.clone().unwrap_or_else(|| ParamVec::zeros(dims.d1));
    let y0 = spec.y0.clone().unwrap_or_else(|| ParamVec::zeros(dims.d2));
    let start = Instant::now();
    let mut state = init(problem, w, hp, spec.algorithm, &x0, &y0, spec.seed, spec.noise)?;
    let mut trace = Vec::new();
    let every = spec.schedule.every.max(1) as u64;
    trace.push(metrics::record(problem, &state, &spec.schedule, start.elapsed())?);
    for _ in 0..spec.iterations {
        state = advance(&state, problem, w, hp)?;
        if state.t % every == 0 || state.t == spec.iterations {
            trace.push(metrics::record(problem, &state, &spec.schedule, start.elapsed())?);
        }
    }
    Ok(RunOutput { trace, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, NoiseLevels, SyntheticSpec};

    fn noisy(workers: usize, het: f64) -> crate::problems::SyntheticProblem {
        let spec = SyntheticSpec {
            workers,
            d0: 3,
            d1: 2,
            d2: 3,
            noise: NoiseLevels::uniform(0.2),
            heterogeneity: het,
            ..SyntheticSpec::default()
        };
        make_quadratic(&spec, 11).unwrap()
    }

    fn hp() -> HyperParams {
        HyperParams {
            eta: 0.1,
            gamma_x: 0.5,
            gamma_y: 0.5,
            beta_x: 2.0,
            beta_y: 2.0,
            alpha: 3.0,
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = HyperParams { eta: 1.5, ..HyperParams::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("eta ∈ (0,1)"));
        let bad = HyperParams { eta: 0.2, ..HyperParams::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("alpha*eta"));
        let unit = HyperParams { alpha: 10.0, ..HyperParams::default() };
        assert!(unit.validate().is_ok());
        let bad = HyperParams { gamma_x: 0.0, ..HyperParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn init_noise_off_is_exact() {
        let p = make_quadratic(&SyntheticSpec { d0: 3, d1: 2, d2: 3, ..SyntheticSpec::default() }, 1).unwrap();
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let x0 = ParamVec::from_column_slice(&[0.3, -0.4]);
        let s = init(&p, &w, &hp(), Algorithm::Gp, &x0, &ParamVec::zeros(3), 0, NoiseMode::PerWorker).unwrap();
        for (k, ws) in s.workers.iter().enumerate() {
            assert_eq!(ws.h, p.inner_matrix(k) * &x0 + p.inner_offset(k));
            assert!(ws.p.is_none() && ws.r.is_none());
        }
    }

    #[test]
    fn gt_init_tracks_from_zero() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let s = init(&p, &w, &hp(), Algorithm::Gt, &ParamVec::zeros(2), &ParamVec::zeros(3), 3, NoiseMode::PerWorker).unwrap();
        for ws in &s.workers {
            assert_eq!(ws.p.as_ref().unwrap(), &ws.u);
            assert_eq!(ws.q.as_ref().unwrap(), &ws.v);
            assert_eq!(ws.r.as_ref().unwrap(), &ws.h);
        }
        let again = init(&p, &w, &hp(), Algorithm::Gt, &ParamVec::zeros(2), &ParamVec::zeros(3), 3, NoiseMode::PerWorker).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn step_rejects_wrong_tag() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let s = init(&p, &w, &hp(), Algorithm::Gp, &ParamVec::zeros(2), &ParamVec::zeros(3), 0, NoiseMode::PerWorker).unwrap();
        assert!(matches!(step_gt(&s, &p, &w, &hp()), Err(AlgorithmError::WrongAlgorithm { .. })));
        assert!(step_gp(&s, &p, &w, &hp()).is_ok());
        let w3 = MixingMatrix::ring(3, 0.5).unwrap();
        assert!(matches!(step_gp(&s, &p, &w3, &hp()), Err(AlgorithmError::WorkerMismatch { .. })));
    }

    #[test]
    fn full_inner_rate_forgets_history() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let hp = HyperParams { alpha: 10.0, ..hp() };
        let s0 = init(&p, &w, &hp, Algorithm::Gp, &ParamVec::zeros(2), &ParamVec::zeros(3), 5, NoiseMode::PerWorker).unwrap();
        let s1 = step_gp(&s0, &p, &w, &hp).unwrap();
        for (k, ws) in s1.workers.iter().enumerate() {
            let (xi, _) = p.sample_keys(5, k, 1);
            assert_eq!(ws.h, p.inner_value(k, &ws.x, xi).unwrap());
        }
    }

    #[test]
    fn gp_with_unit_inner_rate_is_dsgda() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let hp = HyperParams { alpha: 10.0, ..hp() };
        let x0 = ParamVec::zeros(2);
        let y0 = ParamVec::zeros(3);
        let mut gp = init(&p, &w, &hp, Algorithm::Gp, &x0, &y0, 8, NoiseMode::PerWorker).unwrap();
        let mut ds = init(&p, &w, &hp, Algorithm::Dsgda, &x0, &y0, 8, NoiseMode::PerWorker).unwrap();
        for _ in 0..30 {
            gp = step_gp(&gp, &p, &w, &hp).unwrap();
            ds = step_dsgda(&ds, &p, &w, &hp).unwrap();
            assert_eq!(gp.workers, ds.workers);
        }
    }

    #[test]
    fn momentum_stays_in_hull() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let mut s = init(&p, &w, &hp(), Algorithm::Gp, &ParamVec::zeros(2), &ParamVec::zeros(3), 1, NoiseMode::PerWorker).unwrap();
        let bx = hp().beta_x * hp().eta;
        for _ in 0..50 {
            let next = step_gp(&s, &p, &w, &hp()).unwrap();
            for (a, b) in s.workers.iter().zip(&next.workers) {
                // reconstruct the fresh estimate and check u' = (1-c)u + c·fresh
                let fresh = (&b.u - &a.u * (1.0 - bx)) / bx;
                let back = &a.u * (1.0 - bx) + &fresh * bx;
                assert!((back - &b.u).norm() < 1e-12);
                assert!(b.u.norm() <= a.u.norm().max(fresh.norm()) + 1e-12);
            }
            s = next;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let hp = HyperParams { gamma_x: 1e150, gamma_y: 1e150, ..hp() };
        let spec = RunSpec {
            schedule: MetricsSchedule { every: 1000, stationarity: false },
            ..RunSpec::new(Algorithm::Gp, 200, 0)
        };
        match run(&p, &w, &hp, &spec) {
            Err(AlgorithmError::NonFinite { iteration, .. }) => assert!(iteration >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn run_records_on_schedule() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let spec = RunSpec {
            schedule: MetricsSchedule { every: 10, stationarity: true },
            ..RunSpec::new(Algorithm::Gt, 25, 0)
        };
        let out = run(&p, &w, &hp(), &spec).unwrap();
        let ts: Vec<u64> = out.trace.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 10, 20, 25]);
        assert_eq!(out.state.t, 25);
        assert!(matches!(
            run(&p, &w, &hp(), &RunSpec::new(Algorithm::Gt, 0, 0)),
            Err(AlgorithmError::NoIterations)
        ));
    }

    #[test]
    fn single_iteration_run_is_init_plus_step() {
        let p = noisy(4, 1.0);
        let w = MixingMatrix::ring(4, 0.5).unwrap();
        let out = run(&p, &w, &hp(), &RunSpec::new(Algorithm::GtM, 1, 6)).unwrap();
        let s0 = init(&p, &w, &hp(), Algorithm::GtM, &ParamVec::zeros(2), &ParamVec::zeros(3), 6, NoiseMode::PerWorker).unwrap();
        assert_eq!(out.state, step_gt_m(&s0, &p, &w, &hp()).unwrap());
    }
}
