//! Instances of the decentralized compositional minimax objective
//!
//! ```text
//! min_x max_y F(x, y) = (1/K) Σ_k f_k(g_k(x), y)
//! ```
//!
//! Each family implements [`Oracle`]: stochastic inner/outer oracles keyed by
//! a [`NoiseKey`], plus exact (noise-free) versions. The generic functions in
//! this module build the verification quantities on top of the exact oracles:
//! the objective, the best response `y*(x)`, and `Φ(x) = F(x, y*(x))` with its
//! Danskin gradient.

mod auroc;
mod synthetic;

pub use auroc::{
    auroc_score, gaussian_dataset, load_auroc_csv, make_auroc, stratified_split, AurocProblem,
    AurocSample, Label, Minibatch,
};
pub use synthetic::{make_quadratic, make_tanh, InnerMap, NoiseLevels, SyntheticProblem, SyntheticSpec};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::rng::{NoiseKey, OracleTag};
use crate::ParamVec;

/// Smallest value reported for a constant that is analytically zero (e.g. the
/// inner smoothness of an affine map), so every constant stays positive.
pub const CONSTANT_FLOOR: f64 = 1e-12;

/// Gradient-ascent steps used by [`best_response_iterative`].
pub const ASCENT_STEPS: usize = 200;
/// Target `‖∇_y F‖` for the iterative best response.
pub const ASCENT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("worker index {index} out of range (K = {workers})")]
    Worker { index: usize, workers: usize },
    #[error("{what}: dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("dataset must contain both classes")]
    SingleClass,
    #[error("data file {path}: {msg}")]
    Data { path: String, msg: String },
}

/// Dimensions of one instance: `K` workers, inner output `d0`, primal `d1`,
/// dual `d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub workers: usize,
    pub d0: usize,
    pub d1: usize,
    pub d2: usize,
}

/// Smoothness, moment and noise constants of an instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub l_f: f64,
    pub l_g: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub sigma_f: f64,
    pub sigma_g: f64,
    pub sigma_g_prime: f64,
    pub mu: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let positive = [
            ("L_f", self.l_f),
            ("L_g", self.l_g),
            ("C_f", self.c_f),
            ("C_g", self.c_g),
            ("mu", self.mu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ProblemError::Invalid(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [
            ("sigma_f", self.sigma_f),
            ("sigma_g", self.sigma_g),
            ("sigma_g_prime", self.sigma_g_prime),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ProblemError::Invalid(format!("{name} = {v} must be ≥ 0")));
            }
        }
        if self.mu > self.l_f {
            return Err(ProblemError::Invalid(format!(
                "mu = {} exceeds L_f = {}",
                self.mu, self.l_f
            )));
        }
        Ok(())
    }
}

/// Oracle bundle for one instance.
///
/// Stochastic methods take the key of the draw; two calls with the same key
/// see the same sample. The `mean_*` methods are the exact expectations.
pub trait Oracle: Send + Sync {
    fn dims(&self) -> Dims;
    fn constants(&self) -> &ProblemConstants;

    /// Keys `(xi, zeta)` of worker `k`'s draws at iteration `iter`. Families
    /// that feed both levels from one data pass return the same key twice.
    fn sample_keys(&self, seed: u64, worker: usize, iter: u64) -> (NoiseKey, NoiseKey) {
        (
            NoiseKey::new(seed, worker, iter, OracleTag::Inner),
            NoiseKey::new(seed, worker, iter, OracleTag::Outer),
        )
    }

    /// `g_k(x; ξ)`.
    fn inner_value(&self, k: usize, x: &ParamVec, xi: NoiseKey) -> Result<ParamVec, ProblemError>;
    /// `∇g_k(x; ξ)`, a `d0 × d1` matrix.
    fn inner_jacobian(&self, k: usize, x: &ParamVec, xi: NoiseKey)
        -> Result<DMatrix<f64>, ProblemError>;
    /// `(∇_g f_k(h, y; ζ), ∇_y f_k(h, y; ζ))`.
    fn outer_grads(
        &self,
        k: usize,
        h: &ParamVec,
        y: &ParamVec,
        zeta: NoiseKey,
    ) -> Result<(ParamVec, ParamVec), ProblemError>;
    /// `f_k(h, y; ζ)`.
    fn outer_value(&self, k: usize, h: &ParamVec, y: &ParamVec, zeta: NoiseKey)
        -> Result<f64, ProblemError>;

    fn mean_inner_value(&self, k: usize, x: &ParamVec) -> Result<ParamVec, ProblemError>;
    fn mean_inner_jacobian(&self, k: usize, x: &ParamVec) -> Result<DMatrix<f64>, ProblemError>;
    fn mean_outer_grads(
        &self,
        k: usize,
        h: &ParamVec,
        y: &ParamVec,
    ) -> Result<(ParamVec, ParamVec), ProblemError>;
    fn mean_outer_value(&self, k: usize, h: &ParamVec, y: &ParamVec) -> Result<f64, ProblemError>;

    /// Closed-form `argmax_y F(x, y)` when the family has one.
    fn closed_form_best_response(&self, _x: &ParamVec) -> Option<Result<ParamVec, ProblemError>> {
        None
    }

    /// Test AUROC of the model encoded in `x`, for classification families.
    fn test_auroc(&self, _x: &ParamVec) -> Option<f64> {
        None
    }
}

pub(crate) fn check_worker(k: usize, workers: usize) -> Result<(), ProblemError> {
    if k >= workers {
        return Err(ProblemError::Worker { index: k, workers });
    }
    Ok(())
}

pub(crate) fn check_dim(what: &'static str, v: &ParamVec, expected: usize) -> Result<(), ProblemError> {
    if v.len() != expected {
        return Err(ProblemError::Dimension {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Largest singular value.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// `F(x, y) = (1/K) Σ_k f_k(g_k(x), y)`, noise-free.
pub fn deterministic_objective<P: Oracle + ?Sized>(
    p: &P,
    x: &ParamVec,
    y: &ParamVec,
) -> Result<f64, ProblemError> {
    let dims = p.dims();
    let mut total = 0.0;
    for k in 0..dims.workers {
        let g = p.mean_inner_value(k, x)?;
        total += p.mean_outer_value(k, &g, y)?;
    }
    Ok(total / dims.workers as f64)
}

/// `(∇_x F(x, y), ∇_y F(x, y))`, noise-free, by the chain rule through `g_k`.
pub fn objective_grads<P: Oracle + ?Sized>(
    p: &P,
    x: &ParamVec,
    y: &ParamVec,
) -> Result<(ParamVec, ParamVec), ProblemError> {
    let dims = p.dims();
    let mut gx = ParamVec::zeros(dims.d1);
    let mut gy = ParamVec::zeros(dims.d2);
    for k in 0..dims.workers {
        let g = p.mean_inner_value(k, x)?;
        let jac = p.mean_inner_jacobian(k, x)?;
        let (grad_g, grad_y) = p.mean_outer_grads(k, &g, y)?;
        gx += jac.tr_mul(&grad_g);
        gy += grad_y;
    }
    let scale = 1.0 / dims.workers as f64;
    Ok((gx * scale, gy * scale))
}

/// Exact chained gradient of worker `k`: `∇g_k(x)ᵀ ∇_g f_k(g_k(x), y)`.
pub fn chained_gradient<P: Oracle + ?Sized>(
    p: &P,
    k: usize,
    x: &ParamVec,
    y: &ParamVec,
) -> Result<ParamVec, ProblemError> {
    let g = p.mean_inner_value(k, x)?;
    let jac = p.mean_inner_jacobian(k, x)?;
    let (grad_g, _) = p.mean_outer_grads(k, &g, y)?;
    Ok(jac.tr_mul(&grad_g))
}

/// `y*(x)` with a convergence flag.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub y: ParamVec,
    /// `‖∇_y F(x, y)‖` at the returned point.
    pub grad_norm: f64,
    /// False when the iterative route missed [`ASCENT_TOL`].
    pub converged: bool,
}

/// `argmax_y F(x, y)`: closed form when available, otherwise
/// [`best_response_iterative`].
pub fn best_response<P: Oracle + ?Sized>(p: &P, x: &ParamVec) -> Result<BestResponse, ProblemError> {
    match p.closed_form_best_response(x) {
        Some(y) => {
            let y = y?;
            let (_, gy) = objective_grads(p, x, &y)?;
            Ok(BestResponse {
                y,
                grad_norm: gy.norm(),
                converged: true,
            })
        }
        None => best_response_iterative(p, x, ASCENT_STEPS),
    }
}

/// Exact gradient ascent on `F(x, ·)` from `y = 0` with step `1/L_f`.
pub fn best_response_iterative<P: Oracle + ?Sized>(
    p: &P,
    x: &ParamVec,
    steps: usize,
) -> Result<BestResponse, ProblemError> {
    let dims = p.dims();
    check_dim("x", x, dims.d1)?;
    let step = 1.0 / p.constants().l_f;
    // inner values do not depend on y
    let inner = (0..dims.workers)
        .map(|k| p.mean_inner_value(k, x))
        .collect::<Result<Vec<_>, _>>()?;
    let grad_y = |y: &ParamVec| -> Result<ParamVec, ProblemError> {
        let mut gy = ParamVec::zeros(dims.d2);
        for (k, g) in inner.iter().enumerate() {
            gy += p.mean_outer_grads(k, g, y)?.1;
        }
        Ok(gy / dims.workers as f64)
    };
    let mut y = ParamVec::zeros(dims.d2);
    let mut gy = grad_y(&y)?;
    for _ in 0..steps {
        if gy.norm() <= ASCENT_TOL {
            break;
        }
        y += &gy * step;
        gy = grad_y(&y)?;
    }
    let grad_norm = gy.norm();
    Ok(BestResponse {
        y,
        grad_norm,
        converged: grad_norm <= ASCENT_TOL,
    })
}

/// `Φ(x)` and `∇Φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGrad {
    pub phi: f64,
    pub grad: ParamVec,
    pub best_response: BestResponse,
}

/// `Φ(x) = F(x, y*(x))` and, by Danskin, `∇Φ(x) = ∇_x F(x, y*(x))`.
pub fn phi_and_grad<P: Oracle + ?Sized>(p: &P, x: &ParamVec) -> Result<PhiGrad, ProblemError> {
    let br = best_response(p, x)?;
    let phi = deterministic_objective(p, x, &br.y)?;
    let (grad, _) = objective_grads(p, x, &br.y)?;
    Ok(PhiGrad {
        phi,
        grad,
        best_response: br,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences, step `h`.
    fn fd_grad(f: impl Fn(&ParamVec) -> f64, x: &ParamVec, h: f64) -> ParamVec {
        ParamVec::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    fn rel_err(a: &ParamVec, b: &ParamVec) -> f64 {
        (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
    }

    fn quad() -> SyntheticProblem {
        let spec = SyntheticSpec {
            workers: 3,
            d0: 4,
            d1: 3,
            d2: 4,
            mu: 0.7,
            noise: NoiseLevels::default(),
            heterogeneity: 1.0,
            domain_radius: 10.0,
        };
        make_quadratic(&spec, 5).unwrap()
    }

    #[test]
    fn iterative_matches_closed_form() {
        for seed in 0..5 {
            let spec = SyntheticSpec {
                workers: 2 + seed as usize,
                mu: 0.5 + 0.3 * seed as f64,
                ..SyntheticSpec::default()
            };
            let p = make_quadratic(&spec, seed).unwrap();
            let x = ParamVec::from_fn(spec.d1, |i, _| (i as f64 * 0.7 + seed as f64).sin());
            let closed = best_response(&p, &x).unwrap();
            let iter = best_response_iterative(&p, &x, ASCENT_STEPS).unwrap();
            assert!(iter.converged, "grad norm {}", iter.grad_norm);
            assert!((closed.y - iter.y).norm() <= 1e-6);
        }
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let p = quad();
        for s in 0..5 {
            let x = ParamVec::from_fn(3, |i, _| ((i + 3 * s) as f64).cos());
            let pg = phi_and_grad(&p, &x).unwrap();
            let fd = fd_grad(|z| phi_and_grad(&p, z).unwrap().phi, &x, 1e-5);
            assert!(rel_err(&pg.grad, &fd) <= 1e-5, "{}", rel_err(&pg.grad, &fd));
        }
    }

    #[test]
    fn dual_gradient_vanishes_at_best_response() {
        let p = quad();
        let x = ParamVec::from_element(3, 0.3);
        let br = best_response(&p, &x).unwrap();
        assert!(br.grad_norm < 1e-10);
    }

    #[test]
    fn objective_is_strongly_concave_in_y() {
        let p = quad();
        let mu = p.constants().mu;
        let x = ParamVec::from_element(3, -0.2);
        for s in 0..10 {
            let y1 = ParamVec::from_fn(4, |i, _| ((i * 7 + s) as f64).sin());
            let y2 = ParamVec::from_fn(4, |i, _| ((i * 3 + 2 * s) as f64).cos() * 2.0);
            let t = 0.3;
            let mid = &y1 * t + &y2 * (1.0 - t);
            let lhs = deterministic_objective(&p, &x, &mid).unwrap();
            let rhs = t * deterministic_objective(&p, &x, &y1).unwrap()
                + (1.0 - t) * deterministic_objective(&p, &x, &y2).unwrap()
                + mu / 2.0 * t * (1.0 - t) * (&y1 - &y2).norm_squared();
            assert!(lhs >= rhs - 1e-10);
        }
    }

    #[test]
    fn constants_validation() {
        let mut c = *quad().constants();
        assert!(c.validate().is_ok());
        c.mu = c.l_f * 2.0;
        assert!(c.validate().is_err());
        c.mu = 0.0;
        assert!(c.validate().is_err());
    }
}
