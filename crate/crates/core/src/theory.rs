//! Closed-form constants and step-size bounds of the two convergence
//! theorems, used to flag whether a configuration lies in the proven regime.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::algorithms::HyperParams;
use crate::problems::ProblemConstants;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("lambda must lie in [0, 1), got {0}")]
    Lambda(f64),
}

fn positive(name: &'static str, value: f64) -> Result<f64, TheoryError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(TheoryError::NonPositive { name, value })
    }
}

/// `L_Φ = 2 C_g² L_f² / μ + C_f L_g`.
pub fn l_phi(c: &ProblemConstants) -> Result<f64, TheoryError> {
    let mu = positive("mu", c.mu)?;
    Ok(2.0 * c.c_g.powi(2) * c.l_f.powi(2) / mu + c.c_f * c.l_g)
}

/// Which theorem's regime is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    /// Gossip variant.
    Gossip,
    /// Gradient-tracking variant.
    Tracking,
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theorem::Gossip => "theorem1",
            Theorem::Tracking => "theorem2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub theorem: Theorem,
    pub l_phi: f64,
    pub kappa: f64,
    pub spectral_gap: f64,
    /// Upper bound per hyperparameter (`gamma_x`, `gamma_y`, `eta`).
    pub bounds: BTreeMap<&'static str, f64>,
    /// Whether the hyperparameter respects its bound; strict for `eta`.
    pub satisfied: BTreeMap<&'static str, bool>,
    /// Named intermediate constants (`gamma_x1`, `c4_hat`, ...).
    pub intermediates: BTreeMap<&'static str, f64>,
}

impl RegimeReport {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.values().all(|&s| s)
    }

    pub fn violations(&self) -> Vec<&'static str> {
        self.satisfied
            .iter()
            .filter(|(_, &ok)| !ok)
            .map(|(&k, _)| k)
            .collect()
    }

    /// `key = value` lines, one per quantity.
    pub fn key_values(&self) -> String {
        let mut out = format!(
            "theorem = {}\nl_phi = {}\nkappa = {}\nspectral_gap = {}\n",
            self.theorem, self.l_phi, self.kappa, self.spectral_gap
        );
        for (k, v) in &self.intermediates {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.bounds {
            out.push_str(&format!("bound.{k} = {v}\n"));
        }
        for (k, v) in &self.satisfied {
            out.push_str(&format!("satisfied.{k} = {v}\n"));
        }
        out
    }

    /// Aligned table of value, bound, and verdict.
    pub fn table(&self, hp: &HyperParams) -> String {
        let mut out = format!(
            "{} regime\n  {:<14}{:>14.6e}\n  {:<14}{:>14.6e}\n  {:<14}{:>14.6e}\n",
            self.theorem, "L_phi", self.l_phi, "kappa", self.kappa, "1 - lambda", self.spectral_gap
        );
        for (k, v) in &self.intermediates {
            out.push_str(&format!("  {k:<14}{v:>14.6e}\n"));
        }
        out.push_str(&format!("  {:<10}{:>14}{:>14}  {}\n", "param", "value", "bound", "ok"));
        for (k, bound) in &self.bounds {
            let value = param_value(hp, k);
            let ok = if self.satisfied[k] { "yes" } else { "NO" };
            out.push_str(&format!("  {k:<10}{value:>14.6e}{bound:>14.6e}  {ok}\n"));
        }
        out
    }
}

fn param_value(hp: &HyperParams, name: &str) -> f64 {
    match name {
        "gamma_x" => hp.gamma_x,
        "gamma_y" => hp.gamma_y,
        "eta" => hp.eta,
        _ => f64::NAN,
    }
}

struct Common {
    l_phi: f64,
    kappa: f64,
    gap: f64,
    /// `C_g⁴ L_f²`.
    cg4lf2: f64,
    /// `C_f² L_g²`.
    cf2lg2: f64,
    inv_bx2: f64,
    inv_by2: f64,
}

fn common(c: &ProblemConstants, lambda: f64, hp: &HyperParams) -> Result<Common, TheoryError> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(TheoryError::Lambda(lambda));
    }
    positive("alpha", hp.alpha)?;
    let bx = positive("beta_x", hp.beta_x)?;
    let by = positive("beta_y", hp.beta_y)?;
    let l_f = positive("l_f", c.l_f)?;
    Ok(Common {
        l_phi: l_phi(c)?,
        kappa: l_f / c.mu,
        gap: 1.0 - lambda,
        cg4lf2: c.c_g.powi(4) * l_f.powi(2),
        cf2lg2: c.c_f.powi(2) * c.l_g.powi(2),
        inv_bx2: 1.0 / (bx * bx),
        inv_by2: 1.0 / (by * by),
    })
}

fn eta_bound(k: &Common, hp: &HyperParams) -> f64 {
    [
        1.0 / hp.alpha,
        1.0 / hp.beta_x,
        1.0 / hp.beta_y,
        1.0 / (2.0 * hp.gamma_x * k.l_phi),
        1.0,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

fn finish(
    theorem: Theorem,
    k: &Common,
    hp: &HyperParams,
    gamma_x: f64,
    gamma_y: f64,
    intermediates: BTreeMap<&'static str, f64>,
) -> RegimeReport {
    let eta = eta_bound(k, hp);
    let bounds = BTreeMap::from([("gamma_x", gamma_x), ("gamma_y", gamma_y), ("eta", eta)]);
    let satisfied = BTreeMap::from([
        ("gamma_x", hp.gamma_x <= gamma_x),
        ("gamma_y", hp.gamma_y <= gamma_y),
        ("eta", hp.eta < eta),
    ]);
    RegimeReport {
        theorem,
        l_phi: k.l_phi,
        kappa: k.kappa,
        spectral_gap: k.gap,
        bounds,
        satisfied,
        intermediates,
    }
}

/// `Ĉ₅ = 55 + 64/β_x² + 800/β_y²`.
pub fn c5_hat(beta_x: f64, beta_y: f64) -> f64 {
    55.0 + 64.0 / (beta_x * beta_x) + 800.0 / (beta_y * beta_y)
}

/// `(104/α + 315/α² + 8/β_x² + 100/β_y²)`, shared by `γ_{x,1}` and `γ_{x,2}`.
fn gossip_mix(hp: &HyperParams, k: &Common) -> f64 {
    104.0 / hp.alpha + 315.0 / hp.alpha.powi(2) + 8.0 * k.inv_bx2 + 100.0 * k.inv_by2
}

/// Step-size regime of the gossip theorem.
pub fn theorem1_bounds(
    c: &ProblemConstants,
    lambda: f64,
    hp: &HyperParams,
) -> Result<RegimeReport, TheoryError> {
    let k = common(c, lambda, hp)?;
    let mix = gossip_mix(hp, &k);
    let gx1 = 8.0 * k.inv_bx2 * k.cf2lg2 + mix * k.cg4lf2;
    let c4 = (2566.0 + 64.0 * k.inv_bx2 + 800.0 * k.inv_by2 + 832.0 / hp.alpha
        + 2520.0 / hp.alpha.powi(2))
        * k.cg4lf2
        + (5.0 + 64.0 * k.inv_bx2) * k.cf2lg2;
    let gx2 = c4 + k.cf2lg2 + 1264.0 * k.cg4lf2 + 32.0 * k.inv_bx2 * k.cf2lg2 + 4.0 * mix * k.cg4lf2;
    let c5 = c5_hat(hp.beta_x, hp.beta_y);

    let (mu, l_f, cg) = (c.mu, c.l_f, c.c_g);
    let gamma_x = (hp.gamma_y * mu * mu / (20.0 * cg * cg * l_f * l_f))
        .min(mu / (8.0 * l_f * gx1.sqrt()))
        .min(k.gap / (4.0 * gx2.sqrt()));
    let gamma_y = (1.0 / (6.0 * l_f))
        .min(k.gap / (3.0 * l_f * (c5 + 1.0 + 32.0 * k.inv_bx2 + 400.0 * k.inv_by2).sqrt()))
        .min(9.0 * mu / (8.0 * l_f * l_f * (8.0 * k.inv_bx2 + 100.0 * k.inv_by2)));
    let inter = BTreeMap::from([
        ("gamma_x1", gx1),
        ("gamma_x2", gx2),
        ("c4_hat", c4),
        ("c5_hat", c5),
    ]);
    Ok(finish(Theorem::Gossip, &k, hp, gamma_x, gamma_y, inter))
}

/// Step-size regime of the gradient-tracking theorem.
pub fn theorem2_bounds(
    c: &ProblemConstants,
    lambda: f64,
    hp: &HyperParams,
) -> Result<RegimeReport, TheoryError> {
    let k = common(c, lambda, hp)?;
    let gx1 = 8.0 * (k.cg4lf2 + k.cf2lg2) * k.inv_bx2
        + 100.0 * k.cg4lf2 * k.inv_by2
        + 312.0 * k.cg4lf2 / hp.alpha
        + 4056.0 * k.cg4lf2;
    let (mu, l_f, cg) = (c.mu, c.l_f, c.c_g);
    let gamma_x = (mu * mu * hp.gamma_y / (20.0 * cg * cg * l_f * l_f))
        .min(mu * k.gap / (8.0 * l_f * gx1.sqrt()));
    let gamma_y =
        (1.0 / (6.0 * l_f)).min(9.0 * mu / (8.0 * l_f * l_f * (8.0 * k.inv_bx2 + 100.0 * k.inv_by2)));
    let inter = BTreeMap::from([("gamma_x1", gx1)]);
    Ok(finish(Theorem::Tracking, &k, hp, gamma_x, gamma_y, inter))
}
