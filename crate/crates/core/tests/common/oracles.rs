//! Independent reference implementations used to check the library.
//!
//! Nothing here calls into the code it checks beyond data types and the
//! codec's encoder; each oracle solves its problem by brute force or by a
//! different algorithm.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use smrls_core::channel::CMatrix;
use smrls_core::codec::{encode_users, SmCodebook, UserPayload};
use smrls_core::constellation::Constellation;
use smrls_core::detect::{apply_decision, Decision};
use smrls_core::replica::{
    scalar_rls, DecoupledInput, DecoupledState, ScalarDecision, ScalarEstimatorSpec,
};

/// Minimise a 1-D function on `[lo, hi]` by a dense grid, then repeated local
/// grid zooms around the best point.
pub fn grid_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut best = lo;
    let mut best_v = f(lo);
    for _ in 0..12 {
        let steps = 400;
        let h = (b - a) / steps as f64;
        for i in 0..=steps {
            let v = a + h * i as f64;
            let fv = f(v);
            if fv < best_v {
                best_v = fv;
                best = v;
            }
        }
        a = (best - 2.0 * h).max(lo);
        b = (best + 2.0 * h).min(hi);
        if h < 1e-13 {
            break;
        }
    }
    for v in [lo, hi] {
        if f(v) <= best_v {
            best_v = f(v);
            best = v;
        }
    }
    best
}

/// Scalar box-LASSO by grid search over `[-lower, upper]`, truncated to a
/// window around `y` for unbounded sides.
pub fn box_scalar_oracle(yr: f64, tau: f64, lambda: f64, lower: f64, upper: f64) -> f64 {
    let span = yr.abs() + 1.0;
    let lo = if lower.is_finite() { -lower } else { -span };
    let hi = if upper.is_finite() { upper } else { span };
    grid_minimize(|v| (yr - v) * (yr - v) / tau + lambda * v.abs(), lo, hi)
}

/// Scalar `l0` estimate by listing every candidate in `{0} ∪ S`.
pub fn l0_scalar_oracle(
    y: Complex64,
    tau: f64,
    a: f64,
    constellation: &Constellation,
) -> Complex64 {
    let mut best = Complex64::new(0.0, 0.0);
    let mut best_cost = y.norm_sqr() / tau;
    for &p in constellation.points() {
        let cost = (y - p).norm_sqr() / tau + a;
        if cost < best_cost {
            best_cost = cost;
            best = p;
        }
    }
    best
}

pub fn residual(h: &CMatrix, y: &[Complex64], v: &[Complex64]) -> f64 {
    (0..h.rows())
        .map(|r| {
            let hv: Complex64 = (0..h.cols()).map(|c| h.get(r, c) * v[c]).sum();
            (y[r] - hv).norm_sqr()
        })
        .sum()
}

/// Box-LASSO objective evaluated directly from `H` and `y`.
pub fn lasso_objective(h: &CMatrix, y: &[Complex64], v: &[f64], lambda: f64) -> f64 {
    let vc: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    residual(h, y, &vc) + lambda * v.iter().map(|x| x.abs()).sum::<f64>()
}

/// Cyclic coordinate descent with exact one-dimensional minimisation.
#[allow(clippy::needless_range_loop)]
pub fn coordinate_descent_box_lasso(
    h: &CMatrix,
    y: &[Complex64],
    lambda: f64,
    lower: f64,
    upper: f64,
    sweeps: usize,
) -> Vec<f64> {
    let (n, m) = (h.rows(), h.cols());
    let mut v = vec![0.0; m];
    let mut r: Vec<Complex64> = y.to_vec();
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for j in 0..m {
            let col_norm: f64 = (0..n).map(|i| h.get(i, j).norm_sqr()).sum();
            if col_norm == 0.0 {
                continue;
            }
            // r + h_j v_j is the residual without coordinate j
            let rho: f64 = (0..n)
                .map(|i| (h.get(i, j).conj() * (r[i] + h.get(i, j) * v[j])).re)
                .sum();
            let w = rho / col_norm;
            let kappa = lambda / (2.0 * col_norm);
            let shrunk = if w > kappa {
                w - kappa
            } else if w < -kappa {
                w + kappa
            } else {
                0.0
            };
            let nv = shrunk.clamp(-lower, upper);
            let delta = nv - v[j];
            if delta != 0.0 {
                for (i, ri) in r.iter_mut().enumerate() {
                    *ri -= h.get(i, j) * delta;
                }
                v[j] = nv;
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    v
}

/// Exhaustive `l0` search over `S0^M`, candidates visited by recursion.
pub fn enumerate_l0(
    h: &CMatrix,
    y: &[Complex64],
    a: f64,
    constellation: &Constellation,
) -> Vec<Complex64> {
    fn rec(
        h: &CMatrix,
        y: &[Complex64],
        a: f64,
        alphabet: &[Complex64],
        cur: &mut Vec<Complex64>,
        best: &mut (f64, Vec<Complex64>),
    ) {
        if cur.len() == h.cols() {
            let nnz = cur.iter().filter(|v| v.norm_sqr() != 0.0).count();
            let cost = residual(h, y, cur) + a * nnz as f64;
            if cost < best.0 {
                *best = (cost, cur.clone());
            }
            return;
        }
        for &s in alphabet {
            cur.push(s);
            rec(h, y, a, alphabet, cur, best);
            cur.pop();
        }
    }
    let mut alphabet = vec![Complex64::new(0.0, 0.0)];
    alphabet.extend_from_slice(constellation.points());
    let mut best = (f64::INFINITY, Vec::new());
    rec(h, y, a, &alphabet, &mut Vec::new(), &mut best);
    best.1
}

/// Exhaustive search over all joint payloads of `users` users.
pub fn enumerate_codebook(
    h: &CMatrix,
    y: &[Complex64],
    codebook: &SmCodebook,
    constellation: &Constellation,
    users: usize,
) -> Vec<Complex64> {
    let bits = codebook.payload_bits(constellation);
    let mut best = (f64::INFINITY, Vec::new());
    for joint in 0u64..(1u64 << (bits * users)) {
        let payloads: Vec<UserPayload> = (0..users)
            .map(|k| {
                let shift = bits * (users - 1 - k);
                UserPayload::from_integer(
                    (joint >> shift) & ((1 << bits) - 1),
                    codebook,
                    constellation,
                )
                .unwrap()
            })
            .collect();
        let x = encode_users(codebook, constellation, &payloads).unwrap();
        let cost = residual(h, y, &x);
        if cost < best.0 {
            best = (cost, x);
        }
    }
    best.1
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se + 1e-12
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarMc {
    pub c: Estimate,
    pub e: Estimate,
    pub error: Estimate,
}

fn decide(v: Complex64, decision: ScalarDecision, constellation: &Constellation) -> Complex64 {
    match decision {
        ScalarDecision::Identity => v,
        ScalarDecision::Threshold(eps) => {
            apply_decision(&[v], Decision::HardThreshold(eps), constellation).unwrap()[0]
        }
    }
}

/// Monte Carlo of the decoupled scalar channel `y = x + theta z`, split over threads.
pub fn scalar_monte_carlo(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
    draws: usize,
    seed: u64,
) -> ScalarMc {
    let threads = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .min(16);
    let per = draws.div_ceil(threads);
    let sums: Vec<[f64; 6]> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let pts = input.constellation.points();
                    let mut acc = [0.0; 6];
                    for _ in 0..per {
                        let x = if rng.random::<f64>() < input.eta {
                            pts[rng.random_range(0..pts.len())]
                        } else {
                            Complex64::new(0.0, 0.0)
                        };
                        let g1: f64 = rng.sample(StandardNormal);
                        let g2: f64 = rng.sample(StandardNormal);
                        let z = Complex64::new(g1, g2) / 2f64.sqrt();
                        let est = scalar_rls(spec, x + state.theta * z, state.tau);
                        let d = est - x;
                        let c = (d * z.conj()).re;
                        let e = d.norm_sqr();
                        let err = if decide(est, decision, &input.constellation) == x {
                            0.0
                        } else {
                            1.0
                        };
                        for (k, v) in [c, e, err].into_iter().enumerate() {
                            acc[2 * k] += v;
                            acc[2 * k + 1] += v * v;
                        }
                    }
                    acc
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let n = (per * threads) as f64;
    let est = |k: usize| {
        let s: f64 = sums.iter().map(|a| a[2 * k]).sum();
        let s2: f64 = sums.iter().map(|a| a[2 * k + 1]).sum();
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
        Estimate {
            mean,
            se: (var / n).sqrt(),
        }
    };
    ScalarMc {
        c: est(0),
        e: est(1),
        error: est(2),
    }
}
