//! Invariant suite on small instances, run by the `selftest` subcommand.

use crate::algorithms::{init, step, Algorithm, HyperParams, NoiseMode, SwarmState};
use crate::harness::golden::{golden_max_error, GOLDEN_TOL};
use crate::metrics::consensus_map;
use crate::problems::{chained_gradient, make_quadratic, make_tanh, phi_and_grad, NoiseLevels, Oracle, SyntheticSpec};
use crate::topology::{mix, MixingMatrix};
use crate::ParamVec;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, tol: f64) -> SelfCheck {
    SelfCheck {
        name,
        passed: value <= tol,
        detail: format!("{value:.3e} (tolerance {tol:.0e})"),
    }
}

fn hp() -> HyperParams {
    HyperParams {
        eta: 0.1,
        gamma_x: 0.3,
        gamma_y: 0.3,
        beta_x: 5.0,
        beta_y: 5.0,
        alpha: 5.0,
    }
}

fn spec(workers: usize, sigma: f64, heterogeneity: f64) -> SyntheticSpec {
    SyntheticSpec {
        workers,
        d0: 3,
        d1: 3,
        d2: 3,
        noise: NoiseLevels::uniform(sigma),
        heterogeneity,
        ..SyntheticSpec::default()
    }
}

fn trajectory<P: Oracle>(p: &P, w: &MixingMatrix, alg: Algorithm, noise: NoiseMode, steps: usize) -> Vec<SwarmState> {
    let d = p.dims();
    let mut s = init(p, w, &hp(), alg, &ParamVec::zeros(d.d1), &ParamVec::zeros(d.d2), 7, noise)
        .expect("selftest init");
    let mut out = vec![s.clone()];
    for _ in 0..steps {
        s = step(&s, p, w, &hp()).expect("selftest step");
        out.push(s.clone());
    }
    out
}

fn mean_deviation(states: &[SwarmState]) -> f64 {
    let mean = |f: &dyn Fn(&crate::algorithms::WorkerState) -> ParamVec, s: &SwarmState| {
        crate::algorithms::mean_of(s.workers.iter().map(f).collect::<Vec<_>>().iter())
    };
    let mut worst: f64 = 0.0;
    for s in states {
        let pairs = [
            (mean(&|w| w.p.clone().unwrap(), s), mean(&|w| w.u.clone(), s)),
            (mean(&|w| w.q.clone().unwrap(), s), mean(&|w| w.v.clone(), s)),
            (mean(&|w| w.r.clone().unwrap(), s), mean(&|w| w.h.clone(), s)),
        ];
        for (a, b) in pairs {
            worst = worst.max((a - b).amax());
        }
    }
    worst
}

fn fd_relative_error<P: Oracle>(p: &P) -> f64 {
    let d = p.dims();
    let x = ParamVec::from_fn(d.d1, |i, _| 0.3 - 0.2 * i as f64);
    let y = ParamVec::from_fn(d.d2, |i, _| 0.1 * i as f64 - 0.2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..d.workers {
        let f = |x: &ParamVec| {
            let g = p.mean_inner_value(k, x).unwrap();
            p.mean_outer_value(k, &g, &y).unwrap()
        };
        let grad = chained_gradient(p, k, &x, &y).unwrap();
        let fd = ParamVec::from_fn(d.d1, |i, _| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        });
        worst = worst.max((grad - &fd).norm() / fd.norm().max(1e-12));
    }
    let g = phi_and_grad(p, &x).unwrap().grad;
    let fd = ParamVec::from_fn(d.d1, |i, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h;
        b[i] -= h;
        (phi_and_grad(p, &a).unwrap().phi - phi_and_grad(p, &b).unwrap().phi) / (2.0 * h)
    });
    worst.max((g - &fd).norm() / fd.norm().max(1e-12))
}

/// Run every check; never panics on a failed comparison.
pub fn run_selftest() -> Vec<SelfCheck> {
    let mut out = Vec::new();

    let ring = MixingMatrix::ring(5, 0.5).expect("ring");
    let vals: Vec<ParamVec> = (0..5)
        .map(|k| ParamVec::from_fn(3, |i, _| ((k * 7 + i * 3) % 11) as f64 - 5.0))
        .collect();
    let mixed = mix(&ring, &vals).expect("mix");
    let before = crate::algorithms::mean_of(vals.iter());
    let after = crate::algorithms::mean_of(mixed.iter());
    out.push(check("mix preserves the mean", (before - after).amax(), 1e-12));

    let noisy = make_quadratic(&spec(5, 0.3, 1.0), 1).expect("instance");
    let states = trajectory(&noisy, &ring, Algorithm::Gt, NoiseMode::PerWorker, 100);
    out.push(check("tracking identities", mean_deviation(&states), 1e-10));

    let single = make_quadratic(&spec(1, 0.3, 1.0), 1).expect("instance");
    let one = MixingMatrix::complete(1).expect("K=1");
    let gp = trajectory(&single, &one, Algorithm::Gp, NoiseMode::Shared, 50);
    let mut identical = true;
    for alg in [Algorithm::Gt, Algorithm::GtM] {
        let other = trajectory(&single, &one, alg, NoiseMode::Shared, 50);
        identical &= gp.iter().zip(&other).all(|(a, b)| {
            a.workers.iter().zip(&b.workers).all(|(a, b)| {
                a.x == b.x && a.y == b.y && a.h == b.h && a.u == b.u && a.v == b.v
            })
        });
    }
    out.push(SelfCheck {
        name: "single-worker collapse",
        passed: identical,
        detail: if identical { "bitwise identical".into() } else { "trajectories differ".into() },
    });

    let homog = make_quadratic(&spec(4, 0.3, 0.0), 1).expect("instance");
    let complete = MixingMatrix::complete(4).expect("complete");
    let mut worst: f64 = 0.0;
    for alg in Algorithm::ALL {
        for s in trajectory(&homog, &complete, alg, NoiseMode::Shared, 50) {
            worst = consensus_map(&s).values().fold(worst, |m, &v| m.max(v));
        }
    }
    out.push(check("homogeneous collapse", worst, 1e-12));

    let q = make_quadratic(&spec(3, 0.0, 1.0), 2).expect("instance");
    let t = make_tanh(&spec(3, 0.0, 1.0), 2).expect("instance");
    out.push(check("gradients vs finite differences (quadratic)", fd_relative_error(&q), 1e-5));
    out.push(check("gradients vs finite differences (tanh)", fd_relative_error(&t), 1e-5));

    out.push(check("golden single step", golden_max_error(), GOLDEN_TOL));
    out
}
