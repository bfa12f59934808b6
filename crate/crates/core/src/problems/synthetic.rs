//! Synthetic families with an affine or elementwise-tanh inner map and a
//! bilinear, `mu`-strongly concave outer function
//!
//! ```text
//! g_k(x)    = A_k x + a_k            (quadratic)
//!           = tanh(A_k x + a_k)      (tanh)
//! f_k(g, y) = y·(B g − b_k) − (mu/2)‖y‖² + c_k·g
//! ```
//!
//! Noise is additive Gaussian with total variance `sigma²` spread evenly over
//! the coordinates of the perturbed quantity.

use nalgebra::DMatrix;

use super::{check_dim, check_worker, spectral_norm, Dims, Oracle, ProblemConstants, ProblemError, CONSTANT_FLOOR};
use crate::rng::{normals, NoiseKey, OracleTag};
use crate::ParamVec;

/// Lipschitz constant of `sech²`, i.e. `max |2 tanh(z) sech²(z)| = 4/(3√3)`.
const SECH2_LIPSCHITZ: f64 = 0.769_800_358_919_501;

const LANE_VALUE: u64 = 0;
const LANE_JACOBIAN: u64 = 1;
const LANE_GRAD_G: u64 = 0;
const LANE_GRAD_Y: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMap {
    Affine,
    Tanh,
}

/// Noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseLevels {
    pub sigma_f: f64,
    pub sigma_g: f64,
    pub sigma_g_prime: f64,
}

impl NoiseLevels {
    pub fn uniform(sigma: f64) -> Self {
        Self {
            sigma_f: sigma,
            sigma_g: sigma,
            sigma_g_prime: sigma,
        }
    }
}

/// Generator settings for [`make_quadratic`] / [`make_tanh`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub workers: usize,
    pub d0: usize,
    pub d1: usize,
    pub d2: usize,
    pub mu: f64,
    pub noise: NoiseLevels,
    /// Scale of the per-worker perturbations of `A_k, a_k, b_k, c_k`; 0 gives
    /// identical workers.
    pub heterogeneity: f64,
    /// Radius of the region on which the gradient-moment bound `C_f` holds.
    pub domain_radius: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            workers: 4,
            d0: 5,
            d1: 5,
            d2: 5,
            mu: 1.0,
            noise: NoiseLevels::default(),
            heterogeneity: 1.0,
            domain_radius: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    map: InnerMap,
    dims: Dims,
    mu: f64,
    noise: NoiseLevels,
    inner_mat: Vec<DMatrix<f64>>,
    inner_off: Vec<ParamVec>,
    outer_mat: DMatrix<f64>,
    outer_off: Vec<ParamVec>,
    linear: Vec<ParamVec>,
    constants: ProblemConstants,
}

pub fn make_quadratic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticProblem, ProblemError> {
    generate(InnerMap::Affine, spec, seed)
}

pub fn make_tanh(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticProblem, ProblemError> {
    generate(InnerMap::Tanh, spec, seed)
}

fn generate(map: InnerMap, spec: &SyntheticSpec, seed: u64) -> Result<SyntheticProblem, ProblemError> {
    let SyntheticSpec { workers, d0, d1, d2, .. } = *spec;
    if workers == 0 || d0 == 0 || d1 == 0 || d2 == 0 {
        return Err(ProblemError::Invalid("dimensions and worker count must be ≥ 1".into()));
    }
    if !(spec.heterogeneity >= 0.0) {
        return Err(ProblemError::Invalid("heterogeneity must be ≥ 0".into()));
    }
    let key = NoiseKey::new(seed, 0, 0, OracleTag::Build);
    let gauss_mat = |rng: &mut _, r: usize, c: usize, scale: f64| {
        let z = normals(rng, r * c);
        DMatrix::from_fn(r, c, |i, j| scale * z[i * c + j])
    };
    let gauss_vec = |rng: &mut _, n: usize, scale: f64| {
        ParamVec::from_vec(normals(rng, n).into_iter().map(|v| v * scale).collect())
    };

    let mut base = key.stream(0);
    let a_base = DMatrix::<f64>::identity(d0, d1) + gauss_mat(&mut base, d0, d1, 0.3 / (d1 as f64).sqrt());
    let a_off_base = gauss_vec(&mut base, d0, 0.5);
    let outer_mat = DMatrix::<f64>::identity(d2, d0) + gauss_mat(&mut base, d2, d0, 0.3 / (d0 as f64).sqrt());
    let b_base = gauss_vec(&mut base, d2, 0.5);
    let c_base = gauss_vec(&mut base, d0, 0.5);

    let het = spec.heterogeneity;
    let mut inner_mat = Vec::with_capacity(workers);
    let mut inner_off = Vec::with_capacity(workers);
    let mut outer_off = Vec::with_capacity(workers);
    let mut linear = Vec::with_capacity(workers);
    for k in 0..workers {
        let mut rng = key.stream(k as u64 + 1);
        inner_mat.push(&a_base + gauss_mat(&mut rng, d0, d1, het * 0.2 / (d1 as f64).sqrt()));
        inner_off.push(&a_off_base + gauss_vec(&mut rng, d0, het * 0.5));
        outer_off.push(&b_base + gauss_vec(&mut rng, d2, het * 0.5));
        linear.push(&c_base + gauss_vec(&mut rng, d0, het * 0.5));
    }
    SyntheticProblem::from_parts(
        map,
        spec.mu,
        spec.noise,
        inner_mat,
        inner_off,
        outer_mat,
        outer_off,
        linear,
        spec.domain_radius,
    )
}

impl SyntheticProblem {
    /// Build from explicit parameters: per-worker `A_k`, `a_k`, shared `B`,
    /// per-worker `b_k`, `c_k`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        map: InnerMap,
        mu: f64,
        noise: NoiseLevels,
        inner_mat: Vec<DMatrix<f64>>,
        inner_off: Vec<ParamVec>,
        outer_mat: DMatrix<f64>,
        outer_off: Vec<ParamVec>,
        linear: Vec<ParamVec>,
        domain_radius: f64,
    ) -> Result<Self, ProblemError> {
        let workers = inner_mat.len();
        if workers == 0 {
            return Err(ProblemError::Invalid("need at least one worker".into()));
        }
        if !(mu > 0.0) {
            return Err(ProblemError::Invalid(format!("mu = {mu} must be positive")));
        }
        if !(domain_radius > 0.0) {
            return Err(ProblemError::Invalid("domain radius must be positive".into()));
        }
        let (d0, d1) = inner_mat[0].shape();
        let d2 = outer_mat.nrows();
        if outer_mat.ncols() != d0 {
            return Err(ProblemError::Dimension {
                what: "B columns",
                expected: d0,
                got: outer_mat.ncols(),
            });
        }
        if inner_off.len() != workers || outer_off.len() != workers || linear.len() != workers {
            return Err(ProblemError::Invalid("per-worker parameter counts differ".into()));
        }
        for k in 0..workers {
            if inner_mat[k].shape() != (d0, d1) {
                return Err(ProblemError::Invalid(format!("A_{k} has shape {:?}", inner_mat[k].shape())));
            }
            check_dim("a_k", &inner_off[k], d0)?;
            check_dim("b_k", &outer_off[k], d2)?;
            check_dim("c_k", &linear[k], d0)?;
        }

        let b_norm = spectral_norm(&outer_mat);
        let a_norm = inner_mat.iter().map(spectral_norm).fold(0.0, f64::max);
        let radius = domain_radius;
        // bound on ‖g‖ over the domain ball
        let g_bound = match map {
            InnerMap::Affine => {
                a_norm * radius + inner_off.iter().map(|v| v.norm()).fold(0.0, f64::max)
            }
            InnerMap::Tanh => (d0 as f64).sqrt(),
        };
        let grad_g_bound = b_norm * radius + linear.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let grad_y_bound =
            b_norm * g_bound + outer_off.iter().map(|v| v.norm()).fold(0.0, f64::max) + mu * radius;
        let l_g = match map {
            InnerMap::Affine => CONSTANT_FLOOR,
            InnerMap::Tanh => (SECH2_LIPSCHITZ * a_norm * a_norm).max(CONSTANT_FLOOR),
        };
        let constants = ProblemConstants {
            l_f: (b_norm * b_norm + mu * mu).sqrt(),
            l_g,
            c_f: grad_g_bound.max(grad_y_bound).max(CONSTANT_FLOOR) + noise.sigma_f,
            c_g: a_norm.max(CONSTANT_FLOOR) + noise.sigma_g_prime,
            sigma_f: noise.sigma_f,
            sigma_g: noise.sigma_g,
            sigma_g_prime: noise.sigma_g_prime,
            mu,
        };
        constants.validate()?;
        Ok(Self {
            map,
            dims: Dims { workers, d0, d1, d2 },
            mu,
            noise,
            inner_mat,
            inner_off,
            outer_mat,
            outer_off,
            linear,
            constants,
        })
    }

    pub fn map(&self) -> InnerMap {
        self.map
    }

    pub fn noise(&self) -> NoiseLevels {
        self.noise
    }

    /// `A_k`.
    pub fn inner_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.inner_mat[k]
    }

    /// `a_k`.
    pub fn inner_offset(&self, k: usize) -> &ParamVec {
        &self.inner_off[k]
    }

    /// Shared `B`.
    pub fn outer_matrix(&self) -> &DMatrix<f64> {
        &self.outer_mat
    }

    /// `b_k`.
    pub fn outer_offset(&self, k: usize) -> &ParamVec {
        &self.outer_off[k]
    }

    /// `c_k`.
    pub fn linear_term(&self, k: usize) -> &ParamVec {
        &self.linear[k]
    }

    fn pre_activation(&self, k: usize, x: &ParamVec) -> ParamVec {
        &self.inner_mat[k] * x + &self.inner_off[k]
    }

    fn exact_inner(&self, k: usize, x: &ParamVec) -> ParamVec {
        let z = self.pre_activation(k, x);
        match self.map {
            InnerMap::Affine => z,
            InnerMap::Tanh => z.map(f64::tanh),
        }
    }

    fn exact_jacobian(&self, k: usize, x: &ParamVec) -> DMatrix<f64> {
        match self.map {
            InnerMap::Affine => self.inner_mat[k].clone(),
            InnerMap::Tanh => {
                let z = self.pre_activation(k, x);
                let mut jac = self.inner_mat[k].clone();
                for (i, zi) in z.iter().enumerate() {
                    let t = zi.tanh();
                    jac.row_mut(i).scale_mut(1.0 - t * t);
                }
                jac
            }
        }
    }

    fn exact_grads(&self, k: usize, h: &ParamVec, y: &ParamVec) -> (ParamVec, ParamVec) {
        let grad_g = self.outer_mat.tr_mul(y) + &self.linear[k];
        let grad_y = &self.outer_mat * h - &self.outer_off[k] - y * self.mu;
        (grad_g, grad_y)
    }

    fn exact_value(&self, k: usize, h: &ParamVec, y: &ParamVec) -> f64 {
        let bh = &self.outer_mat * h - &self.outer_off[k];
        y.dot(&bh) - 0.5 * self.mu * y.norm_squared() + self.linear[k].dot(h)
    }

    fn outer_noise(&self, zeta: NoiseKey) -> Option<(ParamVec, ParamVec)> {
        let s = self.noise.sigma_f;
        if s == 0.0 {
            return None;
        }
        let Dims { d0, d2, .. } = self.dims;
        let ng = normals(&mut zeta.stream(LANE_GRAD_G), d0);
        let ny = normals(&mut zeta.stream(LANE_GRAD_Y), d2);
        let sg = s / (d0 as f64).sqrt();
        let sy = s / (d2 as f64).sqrt();
        Some((
            ParamVec::from_iterator(d0, ng.into_iter().map(|v| v * sg)),
            ParamVec::from_iterator(d2, ny.into_iter().map(|v| v * sy)),
        ))
    }

    fn check_x(&self, k: usize, x: &ParamVec) -> Result<(), ProblemError> {
        check_worker(k, self.dims.workers)?;
        check_dim("x", x, self.dims.d1)
    }

    fn check_hy(&self, k: usize, h: &ParamVec, y: &ParamVec) -> Result<(), ProblemError> {
        check_worker(k, self.dims.workers)?;
        check_dim("h", h, self.dims.d0)?;
        check_dim("y", y, self.dims.d2)
    }
}

impl Oracle for SyntheticProblem {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn inner_value(&self, k: usize, x: &ParamVec, xi: NoiseKey) -> Result<ParamVec, ProblemError> {
        self.check_x(k, x)?;
        let mut g = self.exact_inner(k, x);
        let s = self.noise.sigma_g;
        if s > 0.0 {
            let d0 = self.dims.d0;
            let z = normals(&mut xi.stream(LANE_VALUE), d0);
            let scale = s / (d0 as f64).sqrt();
            for (gi, zi) in g.iter_mut().zip(z) {
                *gi += scale * zi;
            }
        }
        Ok(g)
    }

    fn inner_jacobian(&self, k: usize, x: &ParamVec, xi: NoiseKey) -> Result<DMatrix<f64>, ProblemError> {
        self.check_x(k, x)?;
        let mut jac = self.exact_jacobian(k, x);
        let s = self.noise.sigma_g_prime;
        if s > 0.0 {
            let (r, c) = jac.shape();
            let z = normals(&mut xi.stream(LANE_JACOBIAN), r * c);
            let scale = s / ((r * c) as f64).sqrt();
            for i in 0..r {
                for j in 0..c {
                    jac[(i, j)] += scale * z[i * c + j];
                }
            }
        }
        Ok(jac)
    }

    fn outer_grads(
        &self,
        k: usize,
        h: &ParamVec,
        y: &ParamVec,
        zeta: NoiseKey,
    ) -> Result<(ParamVec, ParamVec), ProblemError> {
        self.check_hy(k, h, y)?;
        let (mut gg, mut gy) = self.exact_grads(k, h, y);
        if let Some((ng, ny)) = self.outer_noise(zeta) {
            gg += ng;
            gy += ny;
        }
        Ok((gg, gy))
    }

    fn outer_value(&self, k: usize, h: &ParamVec, y: &ParamVec, zeta: NoiseKey) -> Result<f64, ProblemError> {
        self.check_hy(k, h, y)?;
        let mut v = self.exact_value(k, h, y);
        if let Some((ng, ny)) = self.outer_noise(zeta) {
            v += ng.dot(h) + ny.dot(y);
        }
        Ok(v)
    }

    fn mean_inner_value(&self, k: usize, x: &ParamVec) -> Result<ParamVec, ProblemError> {
        self.check_x(k, x)?;
        Ok(self.exact_inner(k, x))
    }

    fn mean_inner_jacobian(&self, k: usize, x: &ParamVec) -> Result<DMatrix<f64>, ProblemError> {
        self.check_x(k, x)?;
        Ok(self.exact_jacobian(k, x))
    }

    fn mean_outer_grads(
        &self,
        k: usize,
        h: &ParamVec,
        y: &ParamVec,
    ) -> Result<(ParamVec, ParamVec), ProblemError> {
        self.check_hy(k, h, y)?;
        Ok(self.exact_grads(k, h, y))
    }

    fn mean_outer_value(&self, k: usize, h: &ParamVec, y: &ParamVec) -> Result<f64, ProblemError> {
        self.check_hy(k, h, y)?;
        Ok(self.exact_value(k, h, y))
    }

    /// `y* = (1/mu)·(1/K) Σ_k (B g_k(x) − b_k)`.
    fn closed_form_best_response(&self, x: &ParamVec) -> Option<Result<ParamVec, ProblemError>> {
        if let Err(e) = check_dim("x", x, self.dims.d1) {
            return Some(Err(e));
        }
        let mut acc = ParamVec::zeros(self.dims.d2);
        for k in 0..self.dims.workers {
            acc += &self.outer_mat * self.exact_inner(k, x) - &self.outer_off[k];
        }
        Some(Ok(acc / (self.dims.workers as f64 * self.mu)))
    }
}
