use decomp::algorithms::{init, step, Algorithm, HyperParams, NoiseMode, SwarmState, WorkerState};
use decomp::metrics::consensus_map;
use decomp::problems::{make_quadratic, make_tanh, phi_and_grad, NoiseLevels, Oracle, SyntheticProblem, SyntheticSpec};
use decomp::topology::MixingMatrix;
use decomp::ParamVec;
use proptest::prelude::*;

fn instance(workers: usize, sigma: f64, heterogeneity: f64, tanh: bool, seed: u64) -> SyntheticProblem {
    let spec = SyntheticSpec {
        workers,
        d0: 3,
        d1: 3,
        d2: 3,
        noise: NoiseLevels::uniform(sigma),
        heterogeneity,
        ..SyntheticSpec::default()
    };
    if tanh {
        make_tanh(&spec, seed).unwrap()
    } else {
        make_quadratic(&spec, seed).unwrap()
    }
}

fn hp(eta: f64) -> HyperParams {
    HyperParams {
        eta,
        gamma_x: 0.3,
        gamma_y: 0.3,
        beta_x: 4.0,
        beta_y: 4.0,
        alpha: 4.0,
    }
}

fn topology(kind: u8, k: usize) -> MixingMatrix {
    match kind {
        0 => MixingMatrix::complete(k).unwrap(),
        _ => MixingMatrix::cycle(k, 0.5).unwrap(),
    }
}

fn trajectory(p: &SyntheticProblem, w: &MixingMatrix, h: &HyperParams, alg: Algorithm, noise: NoiseMode, seed: u64, steps: usize) -> Vec<SwarmState> {
    let d = p.dims();
    let mut s = init(p, w, h, alg, &ParamVec::zeros(d.d1), &ParamVec::zeros(d.d2), seed, noise).unwrap();
    let mut out = vec![s.clone()];
    for _ in 0..steps {
        s = step(&s, p, w, h).unwrap();
        out.push(s.clone());
    }
    out
}

fn mean(s: &SwarmState, f: impl Fn(&WorkerState) -> ParamVec) -> ParamVec {
    let vals: Vec<ParamVec> = s.workers.iter().map(f).collect();
    vals.iter().skip(1).fold(vals[0].clone(), |a, v| a + v) / vals.len() as f64
}

fn all_le(a: &ParamVec, b: &ParamVec) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| x <= y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tracking_means_match(k in 1usize..7, kind in 0u8..2, sigma in 0.0..0.5f64, seed in 0u64..1000, tanh: bool) {
        let p = instance(k, sigma, 1.0, tanh, seed);
        let w = topology(kind, k);
        for s in trajectory(&p, &w, &hp(0.1), Algorithm::Gt, NoiseMode::PerWorker, seed, 60) {
            let gaps = [
                mean(&s, |w| w.p.clone().unwrap()) - mean(&s, |w| w.u.clone()),
                mean(&s, |w| w.q.clone().unwrap()) - mean(&s, |w| w.v.clone()),
                mean(&s, |w| w.r.clone().unwrap()) - mean(&s, |w| w.h.clone()),
            ];
            for g in gaps {
                prop_assert!(g.amax() <= 1e-10);
            }
        }
    }

    #[test]
    fn single_worker_variants_coincide(sigma in 0.0..0.5f64, seed in 0u64..1000, tanh: bool) {
        let p = instance(1, sigma, 1.0, tanh, seed);
        let w = MixingMatrix::complete(1).unwrap();
        let gp = trajectory(&p, &w, &hp(0.1), Algorithm::Gp, NoiseMode::Shared, seed, 40);
        for alg in [Algorithm::Gt, Algorithm::GtM] {
            let other = trajectory(&p, &w, &hp(0.1), alg, NoiseMode::Shared, seed, 40);
            for (a, b) in gp.iter().zip(&other) {
                let (a, b) = (&a.workers[0], &b.workers[0]);
                prop_assert!(a.x == b.x && a.y == b.y && a.h == b.h && a.u == b.u && a.v == b.v);
            }
        }
    }

    #[test]
    fn homogeneous_shared_noise_keeps_consensus(k in 1usize..7, kind in 0u8..2, seed in 0u64..1000, alg_i in 0usize..4) {
        let p = instance(k, 0.3, 0.0, false, seed);
        let w = topology(kind, k);
        for s in trajectory(&p, &w, &hp(0.1), Algorithm::ALL[alg_i], NoiseMode::Shared, seed, 40) {
            for v in consensus_map(&s).values() {
                prop_assert!(*v <= 1e-12);
            }
        }
    }

    /// Momentum estimates stay inside the coordinatewise hull of their
    /// previous value and the fresh sample when the rate is at most 1.
    #[test]
    fn momentum_is_a_convex_combination(seed in 0u64..1000, eta in 0.05..0.25f64, sigma in 0.0..0.5f64) {
        let p = instance(3, sigma, 1.0, true, seed);
        let w = topology(1, 3);
        let h = hp(eta);
        let states = trajectory(&p, &w, &h, Algorithm::Gp, NoiseMode::PerWorker, seed, 20);
        for pair in states.windows(2) {
            for (k, (before, after)) in pair[0].workers.iter().zip(&pair[1].workers).enumerate() {
                let c = h.alpha * h.eta;
                let fresh = (&after.h - &before.h * (1.0 - c)) / c;
                let lo = before.h.zip_map(&fresh, f64::min).add_scalar(-1e-9);
                let hi = before.h.zip_map(&fresh, f64::max).add_scalar(1e-9);
                prop_assert!(all_le(&lo, &after.h) && all_le(&after.h, &hi), "worker {k}");
            }
        }
    }
}

#[test]
fn single_worker_noise_free_reaches_stationarity() {
    let p = instance(1, 0.0, 1.0, false, 11);
    let w = MixingMatrix::complete(1).unwrap();
    let states = trajectory(&p, &w, &hp(0.1), Algorithm::Gt, NoiseMode::PerWorker, 0, 3000);
    let x = states.last().unwrap().mean_x();
    let g0 = phi_and_grad(&p, &states[0].mean_x()).unwrap().grad.norm();
    let g = phi_and_grad(&p, &x).unwrap().grad.norm();
    assert!(g <= 1e-6 * g0.max(1.0), "‖∇Φ‖ {g:e} from {g0:e}");
}
