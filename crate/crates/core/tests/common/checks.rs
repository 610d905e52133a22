//! Oracle comparisons shared by the oracle tests and the acceptance gate.
//! Each check returns a short report on success and the first mismatch on
//! failure.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use smrls_core::channel::{sample_rayleigh, CMatrix, NumericDerivative, RayleighSpectrum};
use smrls_core::codec::{CodebookPolicy, SmCodebook};
use smrls_core::constellation::Constellation;
use smrls_core::detect::{
    solve_box_lasso, solve_l0_exhaustive, FeasibleSet, L0Mode, SolverOptions,
};
use smrls_core::replica::*;

use super::oracles::*;

pub type Check = Result<String, String>;

pub fn cgauss(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Complex64::new(a, b) * (var / 2.0).sqrt()
}

pub fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (CMatrix, Vec<Complex64>) {
    let h = sample_rayleigh(n, m, rng).unwrap().matrix;
    let y = (0..n).map(|_| cgauss(rng, 1.0)).collect();
    (h, y)
}

pub fn box_scalar_rule() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lambda = rng.random_range(0.0..2.0);
        let tau = rng.random_range(0.1..3.0);
        let y = cgauss(&mut rng, 3.0);
        let lower = match rng.random_range(0..3) {
            0 => 0.0,
            1 => rng.random_range(0.1..2.0),
            _ => f64::INFINITY,
        };
        let upper = if rng.random::<bool>() {
            rng.random_range(0.5..2.0)
        } else {
            f64::INFINITY
        };
        let spec = ScalarEstimatorSpec::BoxLasso {
            lambda,
            lower,
            upper,
        };
        let got = scalar_rls(&spec, y, tau);
        if got.im != 0.0 {
            return Err(format!("imaginary part {} at y = {y}", got.im));
        }
        worst = worst.max((got.re - box_scalar_oracle(y.re, tau, lambda, lower, upper)).abs());
    }
    if worst <= 1e-6 {
        Ok(format!("box: worst |diff| {worst:.1e} over 1000 draws"))
    } else {
        Err(format!("box: worst |diff| {worst:.3e}"))
    }
}

pub fn l0_scalar_rule() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for constellation in [
        Constellation::ssk(1.0),
        Constellation::bpsk(2.0),
        Constellation::qam4(1.0),
    ] {
        for _ in 0..1000 {
            let a = rng.random_range(-0.5..2.0);
            let tau = rng.random_range(0.1..3.0);
            let y = cgauss(&mut rng, 2.0);
            let spec = ScalarEstimatorSpec::L0 {
                a,
                constellation: constellation.clone(),
            };
            let (got, want) = (
                scalar_rls(&spec, y, tau),
                l0_scalar_oracle(y, tau, a, &constellation),
            );
            if got != want {
                return Err(format!(
                    "l0: {got} vs {want} at y = {y}, tau = {tau}, a = {a}"
                ));
            }
        }
    }
    Ok("l0: exact on 3 x 1000 draws".into())
}

pub fn generic_scalar_rule() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lambda = rng.random_range(0.0..2.0);
        let tau = rng.random_range(0.1..3.0);
        let (lower, upper) = (rng.random_range(0.0..2.0), rng.random_range(0.5..2.0));
        let generic = GenericEstimator::new(
            move |v: f64| lambda * v.abs(),
            GenericFeasible::Interval {
                lower: -lower,
                upper,
            },
        )
        .unwrap();
        let y = cgauss(&mut rng, 3.0);
        let numeric = scalar_rls(&ScalarEstimatorSpec::NumericGeneric(generic), y, tau);
        let want = box_scalar_oracle(y.re, tau, lambda, lower, upper);
        worst = worst.max((numeric.re - want).abs());

        let a = rng.random_range(0.0..1.5);
        let points = GenericEstimator::new(
            move |v: f64| if v == 0.0 { 0.0 } else { a },
            GenericFeasible::Points(vec![0.0, -1.0, 1.0]),
        )
        .unwrap();
        let y = Complex64::new(y.re, 0.0);
        let got = scalar_rls(&ScalarEstimatorSpec::NumericGeneric(points), y, tau);
        let want = l0_scalar_oracle(y, tau, a, &Constellation::bpsk(1.0));
        if got != want {
            return Err(format!("generic points: {got} vs {want} at y = {y}"));
        }
    }
    if worst <= 1e-6 {
        Ok(format!("generic: worst |diff| {worst:.1e} over 1000 draws"))
    } else {
        Err(format!("generic: worst |diff| {worst:.3e}"))
    }
}

pub fn proximal_solver() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = SolverOptions {
        tol: 1e-12,
        max_iter: 200_000,
    };
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let (h, y) = random_problem(&mut rng, 4, 2);
        let lambda = rng.random_range(0.0..1.0);
        let (lower, upper) = if trial % 2 == 0 {
            (0.0, 1.0)
        } else {
            (1.0, 1.0)
        };
        let est =
            solve_box_lasso(&h, &y, lambda, &FeasibleSet::Box { lower, upper }, &opts).unwrap();
        // nested grid over the square
        let inner = |v0: f64| {
            let v1 = grid_minimize(
                |v1| lasso_objective(&h, &y, &[v0, v1], lambda),
                -lower,
                upper,
            );
            lasso_objective(&h, &y, &[v0, v1], lambda)
        };
        let v0 = grid_minimize(inner, -lower, upper);
        let v1 = grid_minimize(
            |v1| lasso_objective(&h, &y, &[v0, v1], lambda),
            -lower,
            upper,
        );
        worst = worst
            .max((est.values[0] - v0).abs())
            .max((est.values[1] - v1).abs());
    }
    for trial in 0..100 {
        let m = 2 + trial % 7;
        let (h, y) = random_problem(&mut rng, 2 * m, m);
        let lambda = rng.random_range(0.0..1.0);
        let (lower, upper) = [(0.0, 1.0), (1.0, 1.0), (f64::INFINITY, f64::INFINITY)][trial % 3];
        let feasible = if lower.is_finite() {
            FeasibleSet::Box { lower, upper }
        } else {
            FeasibleSet::FullReal
        };
        let est = solve_box_lasso(&h, &y, lambda, &feasible, &opts).unwrap();
        let cd = coordinate_descent_box_lasso(&h, &y, lambda, lower, upper, 100_000);
        for (a, b) in est.values.iter().zip(&cd) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst <= 1e-4 {
        Ok(format!("prox: worst |diff| {worst:.1e} over 120 problems"))
    } else {
        Err(format!("prox: worst |diff| {worst:.3e}"))
    }
}

pub fn exhaustive_l0() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = 0;
    for trial in 0..120 {
        let (constellation, m) = match trial % 3 {
            0 => (Constellation::ssk(1.0), 4 + trial % 7),
            1 => (Constellation::bpsk(1.0), 3 + trial % 5),
            _ => (Constellation::qam4(1.0), 2 + trial % 4),
        };
        let h = sample_rayleigh(m + 2, m, &mut rng).unwrap().matrix;
        let y: Vec<Complex64> = (0..m + 2).map(|_| cgauss(&mut rng, 1.0)).collect();
        let a = rng.random_range(0.0..1.0);
        let got = solve_l0_exhaustive(&h, &y, a, &constellation, L0Mode::IidMismatched).unwrap();
        if got != enumerate_l0(&h, &y, a, &constellation) {
            return Err(format!("i.i.d. instance {trial} differs"));
        }
        instances += 1;
    }
    for trial in 0..40 {
        let constellation = if trial % 2 == 0 {
            Constellation::ssk(1.0)
        } else {
            Constellation::bpsk(1.0)
        };
        let codebook = SmCodebook::build(4, 2, CodebookPolicy::SeededRandom(trial)).unwrap();
        let users = 2;
        let h = sample_rayleigh(6, 8, &mut rng).unwrap().matrix;
        let y: Vec<Complex64> = (0..6).map(|_| cgauss(&mut rng, 1.0)).collect();
        let mode = L0Mode::CodebookExact {
            codebook: &codebook,
            users,
        };
        let got = solve_l0_exhaustive(&h, &y, 0.0, &constellation, mode).unwrap();
        if got != enumerate_codebook(&h, &y, &codebook, &constellation, users) {
            return Err(format!("codebook instance {trial} differs"));
        }
        instances += 1;
    }
    Ok(format!(
        "exhaustive: exact on {instances} instances, M <= 10"
    ))
}

fn random_state(rng: &mut ChaCha8Rng) -> DecoupledState {
    let r = RayleighSpectrum::new(rng.random_range(0.3..2.5)).unwrap();
    let noise = rng.random_range(0.02..0.5);
    DecoupledState::new(
        &r,
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..0.3),
        noise,
    )
    .unwrap()
}

fn against_mc(
    label: &str,
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    input: &DecoupledInput,
    draws: usize,
    seed: u64,
) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for point in 0..5 {
        let state = random_state(&mut rng);
        let f = functionals(spec, decision, &state, input).map_err(|e| format!("{label}: {e}"))?;
        let mc = scalar_monte_carlo(spec, decision, &state, input, draws, seed * 100 + point);
        for (name, value, est) in [
            ("C", f.c_value, mc.c),
            ("E", f.e_value, mc.e),
            ("error", f.error_rate, mc.error),
        ] {
            if !est.covers(value, 3.0) {
                return Err(format!("{label}: {name} = {value} vs {est:?} at {state:?}"));
            }
            if est.se > 0.0 {
                worst = worst.max((est.mean - value).abs() / est.se);
            }
        }
    }
    Ok(format!(
        "{label}: within {worst:.2} standard errors at 5 points, {draws} draws"
    ))
}

pub const MC_DRAWS: usize = 10_000_000;

pub fn box_functionals() -> Check {
    let ssk = DecoupledInput::new(0.125, Constellation::ssk(1.0)).unwrap();
    let a = against_mc(
        "box",
        &ScalarEstimatorSpec::box_lasso(0.3, 0.0, 1.0),
        ScalarDecision::Threshold(0.5),
        &ssk,
        MC_DRAWS,
        11,
    )?;
    let bpsk = DecoupledInput::new(0.25, Constellation::bpsk(1.0)).unwrap();
    let b = against_mc(
        "classic",
        &ScalarEstimatorSpec::classic_lasso(0.4),
        ScalarDecision::Threshold(0.5),
        &bpsk,
        MC_DRAWS,
        12,
    )?;
    Ok(format!("{a}; {b}"))
}

pub fn l0_functionals() -> Check {
    let mut out = Vec::new();
    for (k, c) in [
        Constellation::ssk(1.0),
        Constellation::bpsk(1.0),
        Constellation::qam4(1.0),
    ]
    .into_iter()
    .enumerate()
    {
        let input = DecoupledInput::new(0.2, c.clone()).unwrap();
        let spec = ScalarEstimatorSpec::L0 {
            a: 0.15,
            constellation: c,
        };
        out.push(against_mc(
            "l0",
            &spec,
            ScalarDecision::Identity,
            &input,
            MC_DRAWS,
            20 + k as u64,
        )?);
    }
    Ok(out.join("; "))
}

pub fn generic_functionals() -> Check {
    let input = DecoupledInput::new(0.25, Constellation::bpsk(1.0)).unwrap();
    let points = GenericEstimator::new(
        |v: f64| 0.2 * v * v + if v == 0.0 { 0.0 } else { 0.1 },
        GenericFeasible::Points(vec![0.0, -1.0, 1.0, 0.5]),
    )
    .unwrap();
    let a = against_mc(
        "generic points",
        &ScalarEstimatorSpec::NumericGeneric(points),
        ScalarDecision::Threshold(0.5),
        &input,
        MC_DRAWS,
        30,
    )?;
    // the interval minimiser is costly per draw, so fewer draws
    let interval = GenericEstimator::new(
        |v: f64| 0.3 * v.abs() + 0.2 * v * v,
        GenericFeasible::Interval {
            lower: -1.5,
            upper: 1.5,
        },
    )
    .unwrap();
    let b = against_mc(
        "generic interval",
        &ScalarEstimatorSpec::NumericGeneric(interval),
        ScalarDecision::Threshold(0.5),
        &input,
        200_000,
        31,
    )?;
    Ok(format!("{a}; {b}"))
}

pub fn rayleigh_maps() -> Check {
    let mut worst = 0.0f64;
    for &load in &[0.5, 2.0] {
        let r = RayleighSpectrum::new(load).unwrap();
        let numeric = NumericDerivative(&r);
        for i in 0..=10 {
            for j in 0..=10 {
                let (c, q, noise) = (i as f64, j as f64, 0.1);
                let (tau, theta) = tau_theta(&r, c, q, noise).unwrap();
                let (tau_n, theta_n) = tau_theta(&numeric, c, q, noise).unwrap();
                if (tau - load * (1.0 + c)).abs() > 1e-12
                    || (theta * theta - load * (noise + q)).abs() > 1e-12
                {
                    return Err(format!("closed form off at c = {c}, q = {q}"));
                }
                worst = worst.max((theta - theta_n).abs()).max((tau - tau_n).abs());
            }
        }
    }
    if worst <= 1e-8 {
        Ok(format!("rayleigh: worst |diff| {worst:.1e} on [0,10]^2"))
    } else {
        Err(format!("rayleigh: worst |diff| {worst:.3e}"))
    }
}
