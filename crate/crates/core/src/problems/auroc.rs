//! Compositional AUROC maximization with a linear classifier `s = θ·a`.
//!
//! Primal variable `x = [θ; θ̂₁; θ̂₂]` (length `d + 2`), dual `y = [θ̃]`.
//! The inner map takes one cross-entropy gradient step on the classifier block,
//!
//! ```text
//! g(x; ξ) = x − ρ·[ mean_{j∈ξ} ∇ℓ_j(θ); 0; 0 ],   ℓ_j(θ) = log(1 + exp(−b_j θ·a_j))
//! ```
//!
//! and the outer function is the square-loss AUROC surrogate averaged over the
//! minibatch, evaluated at the classifier encoded in `h = g(x)`:
//!
//! ```text
//! L_i = (1−p)(s_i − θ̂₁)² I[b_i=1] + p(s_i − θ̂₂)² I[b_i=−1] − p(1−p)θ̃²
//!       + 2(1+θ̃)(p s_i I[b_i=−1] − (1−p) s_i I[b_i=1])
//! ```
//!
//! Both levels of one iteration read the same minibatch.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_dim, check_worker, Dims, Oracle, ProblemConstants, ProblemError, CONSTANT_FLOOR};
use crate::rng::{normals, NoiseKey, OracleTag};
use crate::ParamVec;

/// `max |σ''(z)| = 1/(6√3)`.
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_63;

const LANE_BATCH: u64 = 7;

/// Radius of the region on which the gradient-moment bound `C_f` is computed.
pub const AUROC_DOMAIN_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_sign(v: f64) -> Option<Self> {
        if v == 1.0 {
            Some(Label::Positive)
        } else if v == -1.0 {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AurocSample {
    pub features: ParamVec,
    pub label: Label,
}

/// Per-call sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Minibatch {
    /// Whole shard every call; the oracles become exact.
    Full,
    /// `n` indices drawn uniformly with replacement from the shard.
    Sampled(usize),
}

#[derive(Debug, Clone)]
pub struct AurocProblem {
    data: Vec<AurocSample>,
    shards: Vec<Vec<usize>>,
    test: Vec<AurocSample>,
    dim: usize,
    rho: f64,
    positive_ratio: f64,
    minibatch: Minibatch,
    constants: ProblemConstants,
}

/// Split `dataset` over `workers` (seeded shuffle, then round-robin) and build
/// the instance. `p` is the global positive ratio of `dataset`.
pub fn make_auroc(
    dataset: Vec<AurocSample>,
    rho: f64,
    minibatch: Minibatch,
    workers: usize,
    seed: u64,
) -> Result<AurocProblem, ProblemError> {
    if dataset.is_empty() {
        return Err(ProblemError::Invalid("empty dataset".into()));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(ProblemError::Invalid(format!("rho = {rho} must be ≥ 0")));
    }
    if workers == 0 || workers > dataset.len() {
        return Err(ProblemError::Invalid(format!(
            "{workers} workers for {} samples",
            dataset.len()
        )));
    }
    if minibatch == Minibatch::Sampled(0) {
        return Err(ProblemError::Invalid("minibatch must be ≥ 1".into()));
    }
    let dim = dataset[0].features.len();
    if dim == 0 {
        return Err(ProblemError::Invalid("samples need at least one feature".into()));
    }
    for s in &dataset {
        check_dim("features", &s.features, dim)?;
    }
    let positives = dataset.iter().filter(|s| s.label == Label::Positive).count();
    if positives == 0 || positives == dataset.len() {
        return Err(ProblemError::SingleClass);
    }
    let p = positives as f64 / dataset.len() as f64;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut NoiseKey::new(seed, 0, 0, OracleTag::Build).stream(LANE_BATCH));
    let mut shards = vec![Vec::new(); workers];
    for (i, idx) in order.into_iter().enumerate() {
        shards[i % workers].push(idx);
    }

    let constants = auroc_constants(&dataset, rho, p, minibatch);
    constants.validate()?;
    Ok(AurocProblem {
        data: dataset,
        shards,
        test: Vec::new(),
        dim,
        rho,
        positive_ratio: p,
        minibatch,
        constants,
    })
}

fn auroc_constants(data: &[AurocSample], rho: f64, p: f64, minibatch: Minibatch) -> ProblemConstants {
    let q = 1.0 - p;
    let r = AUROC_DOMAIN_RADIUS;
    let mut l_f: f64 = 0.0;
    let mut c_f: f64 = 0.0;
    let mut max_a: f64 = 0.0;
    for s in data {
        let a2 = s.features.norm_squared();
        let a = a2.sqrt();
        max_a = max_a.max(a);
        // Frobenius norm of the per-sample Hessian in (h_θ, θ̂, θ̃)
        let w = match s.label {
            Label::Positive => q,
            Label::Negative => p,
        };
        let frob2 = 4.0 * w * w * (a2 * a2 + 4.0 * a2 + 1.0) + 4.0 * p * p * q * q;
        l_f = l_f.max(frob2.sqrt());
        let s_bound = a * r;
        let grad_h = 2.0 * (s_bound + r) * a + 2.0 * (1.0 + r) * a + 2.0 * (s_bound + r);
        let grad_y = 2.0 * r + 2.0 * s_bound;
        c_f = c_f.max(grad_h).max(grad_y);
    }
    let batch_scale = match minibatch {
        Minibatch::Full => 0.0,
        Minibatch::Sampled(n) => 1.0 / (n as f64).sqrt(),
    };
    let mu = 2.0 * p * q;
    ProblemConstants {
        l_f: l_f.max(mu),
        l_g: (rho * SIGMOID_CURVATURE * max_a.powi(3)).max(CONSTANT_FLOOR),
        c_f: c_f.max(CONSTANT_FLOOR),
        c_g: 1.0f64.max((1.0 - rho * max_a * max_a / 4.0).abs()),
        sigma_f: c_f * batch_scale,
        sigma_g: rho * max_a * batch_scale,
        sigma_g_prime: rho * max_a * max_a / 4.0 * batch_scale,
        mu,
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
/// `log(1 + exp(−margin))`.
pub(crate) fn logistic_loss(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

impl AurocProblem {
    /// Attach a held-out set used by [`Oracle::test_auroc`].
    pub fn with_test_set(mut self, test: Vec<AurocSample>) -> Result<Self, ProblemError> {
        for s in &test {
            check_dim("test features", &s.features, self.dim)?;
        }
        self.test = test;
        Ok(self)
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn positive_ratio(&self) -> f64 {
        self.positive_ratio
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn shard(&self, k: usize) -> impl Iterator<Item = &AurocSample> {
        self.shards[k].iter().map(|&i| &self.data[i])
    }

    pub fn test_set(&self) -> &[AurocSample] {
        &self.test
    }

    /// Classifier weights `θ` of a primal vector.
    pub fn classifier<'a>(&self, x: &'a ParamVec) -> nalgebra::DVectorView<'a, f64> {
        x.rows(0, self.dim)
    }

    fn batch(&self, k: usize, key: Option<NoiseKey>) -> Vec<usize> {
        let shard = &self.shards[k];
        match (self.minibatch, key) {
            (Minibatch::Sampled(n), Some(key)) => {
                let mut rng = key.stream(LANE_BATCH);
                (0..n).map(|_| shard[rng.random_range(0..shard.len())]).collect()
            }
            _ => shard.clone(),
        }
    }

    fn inner_on(&self, x: &ParamVec, batch: &[usize]) -> ParamVec {
        let theta = x.rows(0, self.dim);
        let mut g = x.clone();
        if self.rho == 0.0 {
            return g;
        }
        let scale = self.rho / batch.len() as f64;
        for &i in batch {
            let s = &self.data[i];
            let b = s.label.sign();
            let coef = -b * sigmoid(-b * theta.dot(&s.features));
            for j in 0..self.dim {
                g[j] -= scale * coef * s.features[j];
            }
        }
        g
    }

    fn jacobian_on(&self, x: &ParamVec, batch: &[usize]) -> DMatrix<f64> {
        let n = self.dim + 2;
        let mut jac = DMatrix::identity(n, n);
        if self.rho == 0.0 {
            return jac;
        }
        let theta = x.rows(0, self.dim);
        let scale = self.rho / batch.len() as f64;
        for &i in batch {
            let a = &self.data[i].features;
            let sg = sigmoid(theta.dot(a));
            let w = scale * sg * (1.0 - sg);
            for r in 0..self.dim {
                let ar = w * a[r];
                for c in 0..self.dim {
                    jac[(r, c)] -= ar * a[c];
                }
            }
        }
        jac
    }

    fn grads_on(&self, h: &ParamVec, y: &ParamVec, batch: &[usize]) -> (ParamVec, ParamVec) {
        let (p, q) = (self.positive_ratio, 1.0 - self.positive_ratio);
        let d = self.dim;
        let theta = h.rows(0, d);
        let (t1, t2, ty) = (h[d], h[d + 1], y[0]);
        let mut gh = ParamVec::zeros(d + 2);
        let mut gy = 0.0;
        for &i in batch {
            let smp = &self.data[i];
            let s = theta.dot(&smp.features);
            let ds = match smp.label {
                Label::Positive => {
                    gh[d] += -2.0 * q * (s - t1);
                    gy += -2.0 * q * s;
                    2.0 * q * (s - t1) - 2.0 * (1.0 + ty) * q
                }
                Label::Negative => {
                    gh[d + 1] += -2.0 * p * (s - t2);
                    gy += 2.0 * p * s;
                    2.0 * p * (s - t2) + 2.0 * (1.0 + ty) * p
                }
            };
            for j in 0..d {
                gh[j] += ds * smp.features[j];
            }
        }
        let n = batch.len() as f64;
        gh /= n;
        let gy = gy / n - 2.0 * p * q * ty;
        (gh, ParamVec::from_element(1, gy))
    }

    fn value_on(&self, h: &ParamVec, y: &ParamVec, batch: &[usize]) -> f64 {
        let (p, q) = (self.positive_ratio, 1.0 - self.positive_ratio);
        let d = self.dim;
        let theta = h.rows(0, d);
        let (t1, t2, ty) = (h[d], h[d + 1], y[0]);
        let total: f64 = batch
            .iter()
            .map(|&i| {
                let smp = &self.data[i];
                let s = theta.dot(&smp.features);
                match smp.label {
                    Label::Positive => q * (s - t1).powi(2) - 2.0 * (1.0 + ty) * q * s,
                    Label::Negative => p * (s - t2).powi(2) + 2.0 * (1.0 + ty) * p * s,
                }
            })
            .sum();
        total / batch.len() as f64 - p * q * ty * ty
    }

    fn check_x(&self, k: usize, x: &ParamVec) -> Result<(), ProblemError> {
        check_worker(k, self.shards.len())?;
        check_dim("x", x, self.dim + 2)
    }

    fn check_hy(&self, k: usize, h: &ParamVec, y: &ParamVec) -> Result<(), ProblemError> {
        check_worker(k, self.shards.len())?;
        check_dim("h", h, self.dim + 2)?;
        check_dim("y", y, 1)
    }
}

impl Oracle for AurocProblem {
    fn dims(&self) -> Dims {
        Dims {
            workers: self.shards.len(),
            d0: self.dim + 2,
            d1: self.dim + 2,
            d2: 1,
        }
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn sample_keys(&self, seed: u64, worker: usize, iter: u64) -> (NoiseKey, NoiseKey) {
        let key = NoiseKey::new(seed, worker, iter, OracleTag::Inner);
        (key, key)
    }

    fn inner_value(&self, k: usize, x: &ParamVec, xi: NoiseKey) -> Result<ParamVec, ProblemError> {
        self.check_x(k, x)?;
        Ok(self.inner_on(x, &self.batch(k, Some(xi))))
    }

    fn inner_jacobian(&self, k: usize, x: &ParamVec, xi: NoiseKey) -> Result<DMatrix<f64>, ProblemError> {
        self.check_x(k, x)?;
        Ok(self.jacobian_on(x, &self.batch(k, Some(xi))))
    }

    fn outer_grads(
        &self,
        k: usize,
        h: &ParamVec,
        y: &ParamVec,
        zeta: NoiseKey,
    ) -> Result<(ParamVec, ParamVec), ProblemError> {
        self.check_hy(k, h, y)?;
        Ok(self.grads_on(h, y, &self.batch(k, Some(zeta))))
    }

    fn outer_value(&self, k: usize, h: &ParamVec, y: &ParamVec, zeta: NoiseKey) -> Result<f64, ProblemError> {
        self.check_hy(k, h, y)?;
        Ok(self.value_on(h, y, &self.batch(k, Some(zeta))))
    }

    fn mean_inner_value(&self, k: usize, x: &ParamVec) -> Result<ParamVec, ProblemError> {
        self.check_x(k, x)?;
        Ok(self.inner_on(x, &self.batch(k, None)))
    }

    fn mean_inner_jacobian(&self, k: usize, x: &ParamVec) -> Result<DMatrix<f64>, ProblemError> {
        self.check_x(k, x)?;
        Ok(self.jacobian_on(x, &self.batch(k, None)))
    }

    fn mean_outer_grads(
        &self,
        k: usize,
        h: &ParamVec,
        y: &ParamVec,
    ) -> Result<(ParamVec, ParamVec), ProblemError> {
        self.check_hy(k, h, y)?;
        Ok(self.grads_on(h, y, &self.batch(k, None)))
    }

    fn mean_outer_value(&self, k: usize, h: &ParamVec, y: &ParamVec) -> Result<f64, ProblemError> {
        self.check_hy(k, h, y)?;
        Ok(self.value_on(h, y, &self.batch(k, None)))
    }

    /// Stationary point of the concave quadratic in `θ̃`:
    /// `θ̃* = mean_k mean_{i∈k} (p s_i I[−] − (1−p) s_i I[+]) / (p(1−p))`.
    fn closed_form_best_response(&self, x: &ParamVec) -> Option<Result<ParamVec, ProblemError>> {
        if let Err(e) = check_dim("x", x, self.dim + 2) {
            return Some(Err(e));
        }
        let (p, q) = (self.positive_ratio, 1.0 - self.positive_ratio);
        let mut acc = 0.0;
        for k in 0..self.shards.len() {
            let batch = self.batch(k, None);
            let g = self.inner_on(x, &batch);
            let theta = g.rows(0, self.dim);
            let sum: f64 = batch
                .iter()
                .map(|&i| {
                    let s = theta.dot(&self.data[i].features);
                    match self.data[i].label {
                        Label::Positive => -q * s,
                        Label::Negative => p * s,
                    }
                })
                .sum();
            acc += sum / batch.len() as f64;
        }
        let y = acc / self.shards.len() as f64 / (p * q);
        Some(Ok(ParamVec::from_element(1, y)))
    }

    fn test_auroc(&self, x: &ParamVec) -> Option<f64> {
        if self.test.is_empty() || x.len() != self.dim + 2 {
            return None;
        }
        let theta = ParamVec::from(x.rows(0, self.dim));
        auroc_score(&theta, &self.test).ok()
    }
}

/// Wilcoxon–Mann–Whitney AUROC of the linear scores `θ·a`: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auroc_score(theta: &ParamVec, data: &[AurocSample]) -> Result<f64, ProblemError> {
    let mut scored = Vec::with_capacity(data.len());
    for s in data {
        check_dim("features", &s.features, theta.len())?;
        scored.push((theta.dot(&s.features), s.label));
    }
    auroc_from_scores(&scored)
}

pub(crate) fn auroc_from_scores(scored: &[(f64, Label)]) -> Result<f64, ProblemError> {
    let n_pos = scored.iter().filter(|(_, l)| *l == Label::Positive).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ProblemError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // rank sum of positives with average ranks over ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if scored[idx].1 == Label::Positive {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Two isotropic unit-variance Gaussians in `R^dim`: negatives centred at 0,
/// positives at `separation · 1/√dim`. Exactly `round(n · positive_ratio)`
/// positives, returned in shuffled order.
pub fn gaussian_dataset(
    n: usize,
    dim: usize,
    positive_ratio: f64,
    separation: f64,
    seed: u64,
) -> Result<Vec<AurocSample>, ProblemError> {
    if !(positive_ratio > 0.0 && positive_ratio < 1.0) {
        return Err(ProblemError::Invalid(format!(
            "positive ratio {positive_ratio} outside (0,1)"
        )));
    }
    if dim == 0 {
        return Err(ProblemError::Invalid("dim must be ≥ 1".into()));
    }
    let n_pos = (n as f64 * positive_ratio).round() as usize;
    if n_pos == 0 || n_pos == n {
        return Err(ProblemError::SingleClass);
    }
    let mut rng = NoiseKey::new(seed, 1, 0, OracleTag::Build).stream(0);
    let shift = separation / (dim as f64).sqrt();
    let mut data: Vec<AurocSample> = (0..n)
        .map(|i| {
            let label = if i < n_pos { Label::Positive } else { Label::Negative };
            let z = normals(&mut rng, dim);
            let off = if label == Label::Positive { shift } else { 0.0 };
            AurocSample {
                features: ParamVec::from_iterator(dim, z.into_iter().map(|v| v + off)),
                label,
            }
        })
        .collect();
    data.shuffle(&mut rng);
    Ok(data)
}

/// Stratified split: a `train_fraction` share of each class goes to the
/// training set, chosen by a seeded shuffle.
pub fn stratified_split(
    data: Vec<AurocSample>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<AurocSample>, Vec<AurocSample>), ProblemError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ProblemError::Invalid(format!(
            "train fraction {train_fraction} outside (0,1)"
        )));
    }
    let mut rng = NoiseKey::new(seed, 2, 0, OracleTag::Build).stream(0);
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = data.into_iter().partition(|s| s.label == Label::Positive);
    if pos.is_empty() || neg.is_empty() {
        return Err(ProblemError::SingleClass);
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [pos, neg] {
        let cut = ((class.len() as f64) * train_fraction).round() as usize;
        let cut = cut.clamp(1, class.len().saturating_sub(1).max(1));
        let mut class = class;
        test.extend(class.split_off(cut));
        train.extend(class);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

/// Read `label,feature,...` lines; labels are `1`/`+1` or `-1`.
pub fn load_auroc_csv(path: &Path) -> Result<Vec<AurocSample>, ProblemError> {
    let err = |msg: String| ProblemError::Data {
        path: path.display().to_string(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let mut fields = rec.iter();
        let label = fields
            .next()
            .and_then(|f| f.parse::<f64>().ok())
            .and_then(Label::from_sign)
            .ok_or_else(|| err(format!("record {}: label must be +1 or -1", line + 1)))?;
        let features = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(format!("record {}: {e}", line + 1)))?;
        out.push(AurocSample {
            features: ParamVec::from_vec(features),
            label,
        });
    }
    if out.is_empty() {
        return Err(err("no samples".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{best_response, best_response_iterative, deterministic_objective, ASCENT_STEPS};

    fn sample(label: Label, f: &[f64]) -> AurocSample {
        AurocSample {
            features: ParamVec::from_column_slice(f),
            label,
        }
    }

    fn small(rho: f64, minibatch: Minibatch) -> AurocProblem {
        let data = gaussian_dataset(60, 3, 0.25, 2.0, 11).unwrap();
        make_auroc(data, rho, minibatch, 3, 4).unwrap()
    }

    fn key(i: u64) -> NoiseKey {
        NoiseKey::new(3, 0, i, OracleTag::Inner)
    }

    /// Brute-force pair enumeration.
    fn auroc_pairs(scored: &[(f64, Label)]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (sp, lp) in scored {
            for (sn, ln) in scored {
                if *lp == Label::Positive && *ln == Label::Negative {
                    den += 1.0;
                    num += if sp > sn { 1.0 } else if sp == sn { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        use Label::*;
        assert_eq!(auroc_from_scores(&[(0.9, Positive), (0.8, Positive), (0.1, Negative)]).unwrap(), 1.0);
        let tied = [(0.0, Positive), (0.0, Negative), (0.0, Negative)];
        assert_eq!(auroc_from_scores(&tied).unwrap(), 0.5);
        let four = [(0.9, Positive), (0.4, Positive), (0.5, Negative), (0.1, Negative)];
        assert_eq!(auroc_from_scores(&four).unwrap(), 0.75);
        assert_eq!(auroc_from_scores(&[(1.0, Positive)]), Err(ProblemError::SingleClass));
        let data = gaussian_dataset(40, 2, 0.3, 1.0, 0).unwrap();
        assert_eq!(auroc_score(&ParamVec::zeros(2), &data).unwrap(), 0.5);
    }

    #[test]
    fn auroc_matches_pair_enumeration_with_ties() {
        let data = gaussian_dataset(50, 2, 0.3, 1.0, 5).unwrap();
        // coarse rounding forces ties
        let scored: Vec<(f64, Label)> = data
            .iter()
            .map(|s| ((s.features[0] * 2.0).round(), s.label))
            .collect();
        assert!((auroc_from_scores(&scored).unwrap() - auroc_pairs(&scored)).abs() < 1e-12);
        let monotone: Vec<(f64, Label)> = scored.iter().map(|(s, l)| (s.exp() * 3.0 + 1.0, *l)).collect();
        assert_eq!(auroc_from_scores(&monotone).unwrap(), auroc_from_scores(&scored).unwrap());
    }

    #[test]
    fn global_positive_ratio() {
        let mut data = Vec::new();
        for i in 0..100 {
            let label = if i < 10 { Label::Positive } else { Label::Negative };
            data.push(sample(label, &[i as f64]));
        }
        let p = make_auroc(data, 0.1, Minibatch::Sampled(4), 4, 0).unwrap();
        assert!((p.positive_ratio() - 0.1).abs() < 1e-15);
        assert_eq!((0..4).map(|k| p.shard(k).count()).sum::<usize>(), 100);
    }

    #[test]
    fn rejects_single_class() {
        let data = vec![sample(Label::Negative, &[1.0]), sample(Label::Negative, &[2.0])];
        assert_eq!(make_auroc(data, 0.1, Minibatch::Full, 1, 0).unwrap_err(), ProblemError::SingleClass);
    }

    #[test]
    fn rho_zero_inner_is_identity() {
        let p = small(0.0, Minibatch::Sampled(5));
        let x = ParamVec::from_fn(5, |i, _| i as f64 - 2.0);
        for i in 0..3 {
            assert_eq!(p.inner_value(1, &x, key(i)).unwrap(), x);
            assert_eq!(p.inner_jacobian(1, &x, key(i)).unwrap(), DMatrix::identity(5, 5));
        }
    }

    #[test]
    fn surrogate_is_zero_at_origin() {
        let data = vec![sample(Label::Positive, &[1.0, 2.0]), sample(Label::Negative, &[0.5, 0.5])];
        let p = make_auroc(data, 0.0, Minibatch::Full, 1, 0).unwrap();
        let (h, y) = (ParamVec::zeros(4), ParamVec::zeros(1));
        for i in 0..2 {
            assert_eq!(p.value_on(&h, &y, &[i]), 0.0);
        }
    }

    #[test]
    fn dual_gradient_single_positive() {
        let data = vec![sample(Label::Positive, &[1.0, -2.0]), sample(Label::Negative, &[0.0, 1.0])];
        let mut p = make_auroc(data, 0.0, Minibatch::Full, 1, 0).unwrap();
        p.positive_ratio = 0.1;
        let pos = (0..2).find(|&i| p.data[i].label == Label::Positive).unwrap();
        let h = ParamVec::from_column_slice(&[0.3, 0.4, 0.1, -0.2]);
        let ty = 0.7;
        let y = ParamVec::from_element(1, ty);
        let f = 0.3 * 1.0 + 0.4 * -2.0;
        let (_, gy) = p.grads_on(&h, &y, &[pos]);
        let expected = -2.0 * 0.1 * 0.9 * ty - 2.0 * 0.9 * f;
        assert!((gy[0] - expected).abs() < 1e-14);
        let eps = 1e-6;
        let fd = (p.value_on(&h, &ParamVec::from_element(1, ty + eps), &[pos])
            - p.value_on(&h, &ParamVec::from_element(1, ty - eps), &[pos]))
            / (2.0 * eps);
        assert!((fd - expected).abs() < 1e-7);
    }

    #[test]
    fn outer_gradient_matches_finite_differences() {
        let p = small(0.1, Minibatch::Full);
        let h = ParamVec::from_column_slice(&[0.3, -0.2, 0.5, 0.1, -0.4]);
        let y = ParamVec::from_element(1, 0.25);
        let (gh, gy) = p.mean_outer_grads(2, &h, &y).unwrap();
        let eps = 1e-6;
        for j in 0..5 {
            let mut hp = h.clone();
            let mut hm = h.clone();
            hp[j] += eps;
            hm[j] -= eps;
            let fd = (p.mean_outer_value(2, &hp, &y).unwrap() - p.mean_outer_value(2, &hm, &y).unwrap()) / (2.0 * eps);
            assert!((fd - gh[j]).abs() < 1e-6, "coord {j}: {fd} vs {}", gh[j]);
        }
        let fd = (p.mean_outer_value(2, &h, &ParamVec::from_element(1, 0.25 + eps)).unwrap()
            - p.mean_outer_value(2, &h, &ParamVec::from_element(1, 0.25 - eps)).unwrap())
            / (2.0 * eps);
        assert!((fd - gy[0]).abs() < 1e-6);
    }

    #[test]
    fn inner_map_is_gradient_step_on_logistic_loss() {
        let p = small(0.3, Minibatch::Full);
        let x = ParamVec::from_column_slice(&[0.2, -0.1, 0.4, 1.0, 2.0]);
        let g = p.mean_inner_value(0, &x).unwrap();
        let shard: Vec<&AurocSample> = p.shard(0).collect();
        let loss = |theta: &[f64]| -> f64 {
            shard
                .iter()
                .map(|s| {
                    let m: f64 = s.label.sign() * theta.iter().zip(s.features.iter()).map(|(a, b)| a * b).sum::<f64>();
                    logistic_loss(m)
                })
                .sum::<f64>()
                / shard.len() as f64
        };
        let eps = 1e-6;
        for j in 0..3 {
            let mut tp: Vec<f64> = x.iter().take(3).cloned().collect();
            let mut tm = tp.clone();
            tp[j] += eps;
            tm[j] -= eps;
            let grad = (loss(&tp) - loss(&tm)) / (2.0 * eps);
            assert!((g[j] - (x[j] - 0.3 * grad)).abs() < 1e-8);
        }
        assert_eq!(g[3], 1.0);
        assert_eq!(g[4], 2.0);
        // Jacobian vs finite differences of the inner map
        let jac = p.mean_inner_jacobian(0, &x).unwrap();
        for j in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let col = (p.mean_inner_value(0, &xp).unwrap() - p.mean_inner_value(0, &xm).unwrap()) / (2.0 * eps);
            assert!((col - jac.column(j)).norm() < 1e-8);
        }
    }

    #[test]
    fn logistic_loss_is_stable() {
        assert!((logistic_loss(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(logistic_loss(800.0) >= 0.0 && logistic_loss(800.0) < 1e-300);
        assert!((logistic_loss(-800.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn same_minibatch_feeds_both_levels() {
        let p = small(0.1, Minibatch::Sampled(4));
        let (xi, zeta) = p.sample_keys(9, 1, 5);
        assert_eq!(p.batch(1, Some(xi)), p.batch(1, Some(zeta)));
        assert_ne!(p.batch(1, Some(xi)), p.batch(1, Some(p.sample_keys(9, 1, 6).0)));
    }

    #[test]
    fn closed_form_dual_matches_ascent() {
        let p = small(0.2, Minibatch::Sampled(4));
        let x = ParamVec::from_column_slice(&[0.5, -0.3, 0.8, 0.1, 0.2]);
        let closed = best_response(&p, &x).unwrap();
        let iter = best_response_iterative(&p, &x, ASCENT_STEPS * 50).unwrap();
        assert!(closed.grad_norm < 1e-10);
        assert!((closed.y[0] - iter.y[0]).abs() < 1e-6);
    }

    #[test]
    fn strongly_concave_in_dual() {
        let p = small(0.1, Minibatch::Full);
        let mu = p.constants().mu;
        let x = ParamVec::from_column_slice(&[0.5, -0.3, 0.8, 0.1, 0.2]);
        for (a, b) in [(-1.0, 2.0), (0.3, 0.9), (-5.0, -4.0)] {
            let f = |t: f64| deterministic_objective(&p, &x, &ParamVec::from_element(1, t)).unwrap();
            let lhs = f(0.5 * a + 0.5 * b);
            let rhs = 0.5 * f(a) + 0.5 * f(b) + mu / 8.0 * (a - b) * (a - b);
            assert!(lhs >= rhs - 1e-10);
        }
    }

    #[test]
    fn split_is_stratified() {
        let data = gaussian_dataset(2000, 4, 0.1, 3.0, 1).unwrap();
        assert_eq!(data.iter().filter(|s| s.label == Label::Positive).count(), 200);
        let (train, test) = stratified_split(data, 0.9, 2).unwrap();
        assert_eq!(train.len(), 1800);
        assert_eq!(test.len(), 200);
        assert_eq!(test.iter().filter(|s| s.label == Label::Positive).count(), 20);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "# label, f1, f2\n1, 0.5, 2\n-1, 1.5, -3\n+1,0,0\n").unwrap();
        let data = load_auroc_csv(&path).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data[1].label, Label::Negative);
        assert_eq!(data[1].features, ParamVec::from_column_slice(&[1.5, -3.0]));
        std::fs::write(&path, "0, 1, 2\n").unwrap();
        assert!(load_auroc_csv(&path).is_err());
    }
}
