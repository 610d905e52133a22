//! Decoupled scalar analysis of RLS detectors.
//!
//! In the large-system limit each entry of an RLS estimate behaves like a
//! scalar RLS estimate of `x` from `y = x + theta z`, `z ~ CN(0, 1)`, with the
//! quadratic term scaled by `1/tau`. The pair `(tau, theta)` follows from the
//! tuning parameters `(c, q)` and the channel's R-transform; `(c, q)` solve a
//! two-dimensional fixed point.
//!
//! Estimators whose feasible set is real only see `Re(y)`, whose noise part
//! has standard deviation `theta / sqrt(2)`.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;

use crate::channel::SpectralModel;
use crate::constellation::{Constellation, ConstellationKind};
use crate::detect::Regularizer;
use crate::error::{Error, Result};
use crate::math::{
    gauss_legendre, golden_section, normal_interval, normal_pdf, normal_sf, truncated_moments,
};

/// Default and maximum quadrature node counts per segment.
pub const DEFAULT_NODES: usize = 64;
pub const MAX_NODES: usize = 512;

const QUAD_ATOL: f64 = 1e-9;
const QUAD_RTOL: f64 = 1e-5;
/// Half-width of the imaginary-noise range integrated for complex alphabets;
/// the `N(0, 1/2)` mass outside is below `1e-35`.
const Z_SPAN: f64 = 9.0;

/// The decoupled source law: `x = psi s`, `psi ~ Bernoulli(eta)`, `s` uniform on `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledInput {
    pub eta: f64,
    pub constellation: Constellation,
}

impl DecoupledInput {
    pub fn new(eta: f64, constellation: Constellation) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "activity ratio {eta} must lie in (0, 1]"
            )));
        }
        Ok(Self { eta, constellation })
    }

    /// `(value, probability)` over `{0} ∪ S`, zero first.
    pub fn prior(&self) -> Vec<(Complex64, f64)> {
        crate::codec::reference_marginal(self.eta, &self.constellation)
    }

    /// `E|x|^2 = eta P`.
    pub fn second_moment(&self) -> f64 {
        self.eta * self.constellation.power()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoupledState {
    pub c: f64,
    pub q: f64,
    pub tau: f64,
    pub theta: f64,
}

impl DecoupledState {
    pub fn new(spectral: &dyn SpectralModel, c: f64, q: f64, noise_var: f64) -> Result<Self> {
        let (tau, theta) = tau_theta(spectral, c, q, noise_var)?;
        Ok(Self { c, q, tau, theta })
    }
}

/// `tau = 1 / R(-c)` and `theta = tau sqrt(d/dc[(sigma^2 c - q) R(-c)])`.
pub fn tau_theta(
    spectral: &dyn SpectralModel,
    c: f64,
    q: f64,
    noise_var: f64,
) -> Result<(f64, f64)> {
    let r = spectral.r_transform(-c)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "R(-c) = {r} is not positive at c = {c}"
        )));
    }
    let tau = 1.0 / r;
    let derivative = match spectral.r_derivative(-c) {
        Some(dr) => noise_var * r - (noise_var * c - q) * dr?,
        None => {
            let h = 1e-6 * c.abs().max(1.0);
            let g =
                |cc: f64| -> Result<f64> { Ok((noise_var * cc - q) * spectral.r_transform(-cc)?) };
            (g(c + h)? - g(c - h)?) / (2.0 * h)
        }
    };
    let radicand = tau * tau * derivative;
    if radicand < 0.0 || radicand.is_nan() {
        return Err(Error::NegativeRadicand { c, q, radicand });
    }
    Ok((tau, libm::sqrt(radicand)))
}

/// Feasible set of a numerically minimised real scalar estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum GenericFeasible {
    /// Finite interval `[lower, upper]`.
    Interval { lower: f64, upper: f64 },
    /// Finite list of real candidates; ties go to the earliest.
    Points(Vec<f64>),
}

/// Scalar RLS with an arbitrary real regularizer, minimised numerically.
#[derive(Clone)]
pub struct GenericEstimator {
    regularizer: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    feasible: GenericFeasible,
}

impl core::fmt::Debug for GenericEstimator {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GenericEstimator")
            .field("feasible", &self.feasible)
            .finish_non_exhaustive()
    }
}

impl GenericEstimator {
    pub fn new(
        regularizer: impl Fn(f64) -> f64 + Send + Sync + 'static,
        feasible: GenericFeasible,
    ) -> Result<Self> {
        match &feasible {
            GenericFeasible::Interval { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
                    return Err(Error::InvalidParameter(format!(
                        "generic interval [{lower}, {upper}] must be finite and ordered"
                    )));
                }
            }
            GenericFeasible::Points(p) => {
                if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "generic point set must be finite and non-empty".into(),
                    ));
                }
            }
        }
        Ok(Self {
            regularizer: Arc::new(regularizer),
            feasible,
        })
    }

    pub fn feasible(&self) -> &GenericFeasible {
        &self.feasible
    }

    pub fn regularizer(&self, v: f64) -> f64 {
        (self.regularizer)(v)
    }

    fn cost(&self, yr: f64, v: f64, tau: f64) -> f64 {
        let d = yr - v;
        d * d / tau + (self.regularizer)(v)
    }

    /// Minimiser over the feasible set of `(y_r - v)^2 / tau + f(v)`.
    pub fn estimate(&self, yr: f64, tau: f64) -> f64 {
        match &self.feasible {
            GenericFeasible::Points(points) => {
                let mut best = points[0];
                let mut best_cost = self.cost(yr, best, tau);
                for &p in &points[1..] {
                    let c = self.cost(yr, p, tau);
                    if c < best_cost {
                        best = p;
                        best_cost = c;
                    }
                }
                best
            }
            GenericFeasible::Interval { lower, upper } => {
                let (lo, hi) = (*lower, *upper);
                if hi == lo {
                    return lo;
                }
                const GRID: usize = 1000;
                let step = (hi - lo) / GRID as f64;
                let mut best_i = 0;
                let mut best_cost = f64::INFINITY;
                for i in 0..=GRID {
                    let c = self.cost(yr, lo + step * i as f64, tau);
                    if c < best_cost {
                        best_cost = c;
                        best_i = i;
                    }
                }
                let a = lo + step * best_i.saturating_sub(1) as f64;
                let b = (lo + step * (best_i + 1) as f64).min(hi);
                let (mut x, mut fx) = golden_section(|v| self.cost(yr, v, tau), a, b, 1e-12);
                // comparisons resolve a smooth minimum only to ~sqrt(eps); the
                // sign of a symmetric difference resolves it much further
                let h = 1e-7 * (1.0 + x.abs());
                let slope = |v: f64| self.cost(yr, v + h, tau) - self.cost(yr, v - h, tau);
                let (mut p, mut r) = ((x - 1e3 * h).max(lo + h), (x + 1e3 * h).min(hi - h));
                if p < r && slope(p) < 0.0 && slope(r) > 0.0 {
                    for _ in 0..60 {
                        let m = 0.5 * (p + r);
                        if slope(m) > 0.0 {
                            r = m;
                        } else {
                            p = m;
                        }
                    }
                    x = 0.5 * (p + r);
                    fx = self.cost(yr, x, tau);
                }
                let mut candidates =
                    alloc::vec![lo, hi, yr.clamp(lo, hi), lo + step * best_i as f64];
                if lo <= 0.0 && 0.0 <= hi {
                    candidates.push(0.0);
                }
                for v in candidates {
                    let c = self.cost(yr, v, tau);
                    if c < fx {
                        x = v;
                        fx = c;
                    }
                }
                x
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ScalarEstimatorSpec {
    /// `clip(soft(Re y, tau lambda / 2), -lower, upper)`.
    BoxLasso {
        lambda: f64,
        lower: f64,
        upper: f64,
    },
    /// `l0`-penalised search over `{0} ∪ S` with weight `a`.
    L0 {
        a: f64,
        constellation: Constellation,
    },
    NumericGeneric(GenericEstimator),
}

impl ScalarEstimatorSpec {
    pub fn box_lasso(lambda: f64, lower: f64, upper: f64) -> Self {
        ScalarEstimatorSpec::BoxLasso {
            lambda,
            lower,
            upper,
        }
    }

    pub fn classic_lasso(lambda: f64) -> Self {
        ScalarEstimatorSpec::BoxLasso {
            lambda,
            lower: f64::INFINITY,
            upper: f64::INFINITY,
        }
    }

    /// The `l0` estimator of MAP detection under the i.i.d. sparse prior.
    pub fn mismatched_map(noise_var: f64, input: &DecoupledInput) -> Result<Self> {
        let Regularizer::L0 { a, .. } = Regularizer::mismatched_map(
            noise_var,
            input.eta,
            input.constellation.bits_per_symbol(),
        )?
        else {
            unreachable!()
        };
        Ok(ScalarEstimatorSpec::L0 {
            a,
            constellation: input.constellation.clone(),
        })
    }

    pub fn validate(&self, input: &DecoupledInput) -> Result<()> {
        match self {
            ScalarEstimatorSpec::BoxLasso {
                lambda,
                lower,
                upper,
            } => {
                if !(*lambda >= 0.0) || !(*lower >= 0.0) || !(*upper >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "box-LASSO needs lambda, lower, upper >= 0 (got {lambda}, {lower}, {upper})"
                    )));
                }
                if !input.constellation.is_real() {
                    return Err(Error::InvalidParameter(
                        "box-LASSO needs a real constellation".into(),
                    ));
                }
            }
            ScalarEstimatorSpec::L0 { a, constellation } => {
                if !a.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "l0 weight {a} is not finite"
                    )));
                }
                if constellation != &input.constellation {
                    return Err(Error::InvalidParameter(
                        "estimator and source constellations differ".into(),
                    ));
                }
            }
            ScalarEstimatorSpec::NumericGeneric(_) => {
                if !input.constellation.is_real() {
                    return Err(Error::InvalidParameter(
                        "generic estimators need a real constellation".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn needs_quadrature(&self) -> bool {
        match self {
            ScalarEstimatorSpec::BoxLasso { .. } => false,
            ScalarEstimatorSpec::L0 { constellation, .. } => !constellation.is_real(),
            ScalarEstimatorSpec::NumericGeneric(g) => {
                matches!(g.feasible, GenericFeasible::Interval { .. })
            }
        }
    }
}

/// Box-LASSO's five-branch scalar rule.
pub fn box_lasso_scalar(yr: f64, kappa: f64, lower: f64, upper: f64) -> f64 {
    crate::detect::prox_box_soft_threshold(yr, kappa, lower, upper)
}

/// Decoupled scalar RLS estimate of `x` from `y`.
pub fn scalar_rls(spec: &ScalarEstimatorSpec, y: Complex64, tau: f64) -> Complex64 {
    match spec {
        ScalarEstimatorSpec::BoxLasso {
            lambda,
            lower,
            upper,
        } => Complex64::new(
            box_lasso_scalar(y.re, 0.5 * tau * lambda, *lower, *upper),
            0.0,
        ),
        ScalarEstimatorSpec::L0 { a, constellation } => {
            let mut best = Complex64::new(0.0, 0.0);
            let mut best_u = tau * a;
            for s in constellation.points() {
                let u = 2.0 * (y.re * s.re + y.im * s.im) - s.norm_sqr();
                if u > best_u {
                    best_u = u;
                    best = *s;
                }
            }
            best
        }
        ScalarEstimatorSpec::NumericGeneric(g) => Complex64::new(g.estimate(y.re, tau), 0.0),
    }
}

/// Hard decision applied to the decoupled estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarDecision {
    Identity,
    /// SSK: `sqrt(P) 1{x >= eps}`; antipodal: `sqrt(P) sign(x) 1{|x| > eps}`.
    Threshold(f64),
}

fn decide(v: Complex64, decision: ScalarDecision, constellation: &Constellation) -> Complex64 {
    match decision {
        ScalarDecision::Identity => v,
        ScalarDecision::Threshold(eps) => {
            let pts = constellation.points();
            match constellation.kind() {
                ConstellationKind::Ssk if v.re >= eps => pts[0],
                ConstellationKind::Bpsk if v.re > eps => pts[1],
                ConstellationKind::Bpsk if v.re < -eps => pts[0],
                _ => Complex64::new(0.0, 0.0),
            }
        }
    }
}

fn check_decision(decision: ScalarDecision, constellation: &Constellation) -> Result<()> {
    if let ScalarDecision::Threshold(_) = decision {
        if !matches!(
            constellation.kind(),
            ConstellationKind::Ssk | ConstellationKind::Bpsk
        ) {
            return Err(Error::InvalidParameter(
                "threshold decisions need an SSK or antipodal constellation".into(),
            ));
        }
    }
    Ok(())
}

/// Gaussian expectations of the decoupled estimator at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Functionals {
    /// `C = E[Re{(x* - x) conj(z)}]`.
    pub c_value: f64,
    /// `C / theta`, kept separately so `theta -> 0` stays finite where possible.
    pub c_over_theta: f64,
    /// `E = E|x* - x|^2`, also the soft-estimate MSE.
    pub e_value: f64,
    /// Probability that the decided symbol equals `x`; NaN when not requested.
    pub p_correct: f64,
    pub error_rate: f64,
    /// Per-value correct-decision probabilities over `{0} ∪ S`, zero first.
    pub g_s: Vec<f64>,
    /// Quadrature nodes used; zero for closed-form evaluations.
    pub nodes: usize,
}

/// Functionals with adaptive quadrature: nodes double from 64 until two
/// successive rules agree, failing past 512.
pub fn functionals(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
) -> Result<Functionals> {
    adaptive(spec, decision, state, input, DEFAULT_NODES, true)
}

/// Functionals with a fixed per-segment rule (ignored for closed forms).
pub fn functionals_with_nodes(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
    nodes: usize,
) -> Result<Functionals> {
    spec.validate(input)?;
    check_decision(decision, &input.constellation)?;
    let rule = if spec.needs_quadrature() {
        Some(gauss_legendre(nodes))
    } else {
        None
    };
    evaluate(spec, decision, state, input, rule.as_ref(), true)
}

fn adaptive(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
    start: usize,
    with_error: bool,
) -> Result<Functionals> {
    spec.validate(input)?;
    check_decision(decision, &input.constellation)?;
    if !spec.needs_quadrature() {
        return evaluate(spec, decision, state, input, None, with_error);
    }
    let mut n = start.max(1);
    let mut coarse = evaluate(
        spec,
        decision,
        state,
        input,
        Some(&gauss_legendre(n)),
        with_error,
    )?;
    while 2 * n <= MAX_NODES {
        let fine = evaluate(
            spec,
            decision,
            state,
            input,
            Some(&gauss_legendre(2 * n)),
            with_error,
        )?;
        if agree(&coarse, &fine) {
            return Ok(fine);
        }
        coarse = fine;
        n *= 2;
    }
    Err(Error::Quadrature { nodes: MAX_NODES })
}

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= QUAD_ATOL + QUAD_RTOL * a.abs().max(b.abs())
}

fn agree(a: &Functionals, b: &Functionals) -> bool {
    close(a.c_value, b.c_value) && close(a.e_value, b.e_value) && close(a.error_rate, b.error_rate)
}

type Rule = (Vec<f64>, Vec<f64>);

fn evaluate(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
    rule: Option<&Rule>,
    with_error: bool,
) -> Result<Functionals> {
    let mut out = match spec {
        ScalarEstimatorSpec::BoxLasso {
            lambda,
            lower,
            upper,
        } => box_functionals(*lambda, *lower, *upper, decision, state, input),
        ScalarEstimatorSpec::L0 { a, constellation } => {
            require_noise(state)?;
            let ta = state.tau * a;
            let mut lines = alloc::vec![Line {
                slope: 0.0,
                lift: 0.0,
                intercept: 0.0,
                value: Complex64::new(0.0, 0.0),
            }];
            lines.extend(constellation.points().iter().map(|v| Line {
                slope: 2.0 * v.re,
                lift: 2.0 * v.im,
                intercept: -v.norm_sqr() - ta,
                value: *v,
            }));
            envelope_functionals(
                &lines,
                !constellation.is_real(),
                decision,
                state,
                input,
                rule,
            )?
        }
        ScalarEstimatorSpec::NumericGeneric(g) => match &g.feasible {
            GenericFeasible::Points(points) => {
                require_noise(state)?;
                let tau = state.tau;
                let fixed: Vec<Line> = points
                    .iter()
                    .map(|&v| Line {
                        slope: 2.0 * v,
                        lift: 0.0,
                        intercept: -v * v - tau * g.regularizer(v),
                        value: Complex64::new(v, 0.0),
                    })
                    .collect();
                envelope_functionals(&fixed, false, decision, state, input, None)?
            }
            GenericFeasible::Interval { .. } => {
                require_noise(state)?;
                let rule = rule.ok_or(Error::Quadrature { nodes: 0 })?;
                generic_interval_functionals(g, decision, state, input, rule, with_error)
            }
        },
    };
    if !with_error {
        out.p_correct = f64::NAN;
        out.error_rate = f64::NAN;
        out.g_s.clear();
    }
    Ok(out)
}

fn require_noise(state: &DecoupledState) -> Result<()> {
    if state.theta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "this estimator needs theta > 0".into(),
        ))
    }
}

/// `P(y >= t)` for `y ~ N(x, s^2)`; `s = 0` collapses to a point mass.
fn tail(t: f64, x: f64, s: f64) -> f64 {
    if t == f64::NEG_INFINITY {
        1.0
    } else if t == f64::INFINITY {
        0.0
    } else if s == 0.0 {
        if x >= t {
            1.0
        } else {
            0.0
        }
    } else {
        normal_sf((t - x) / s)
    }
}

/// Correct-decision probability for a nondecreasing real estimator, given
/// `P(x* >= e)` and `P(x* > e)`.
fn monotone_correct(
    x: f64,
    decision: ScalarDecision,
    constellation: &Constellation,
    p_ge: &dyn Fn(f64) -> f64,
    p_gt: &dyn Fn(f64) -> f64,
) -> f64 {
    match decision {
        ScalarDecision::Identity => p_ge(x) - p_gt(x),
        ScalarDecision::Threshold(eps) => match constellation.kind() {
            ConstellationKind::Ssk => {
                if x == 0.0 {
                    1.0 - p_ge(eps)
                } else {
                    p_ge(eps)
                }
            }
            _ => {
                if x > 0.0 {
                    p_gt(eps)
                } else if x < 0.0 {
                    1.0 - p_ge(-eps)
                } else {
                    p_ge(-eps) - p_gt(eps)
                }
            }
        },
    }
}

fn box_functionals(
    lambda: f64,
    lower: f64,
    upper: f64,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
) -> Functionals {
    let s = state.theta * FRAC_1_SQRT_2;
    let k = 0.5 * state.tau * lambda;
    let inf = f64::INFINITY;
    let t_ge = |e: f64| {
        if e > upper {
            inf
        } else if e > 0.0 {
            k + e
        } else if e > -lower {
            e - k
        } else {
            -inf
        }
    };
    let t_gt = |e: f64| {
        if e >= upper {
            inf
        } else if e >= 0.0 {
            k + e
        } else if e >= -lower {
            e - k
        } else {
            -inf
        }
    };
    let mut e_total = 0.0;
    let mut slope_mass = 0.0;
    let mut g_s = Vec::new();
    let mut p_correct = 0.0;
    for (xv, w) in input.prior() {
        let x = xv.re;
        let (e, chi) = if s == 0.0 {
            let v = box_lasso_scalar(x, k, lower, upper);
            let linear = (x > k && x < k + upper) || (x < -k && x > -k - lower);
            ((v - x) * (v - x), if linear { 1.0 } else { 0.0 })
        } else {
            let z = |b: f64| (b - x) / s;
            let flat = |v: f64, a: f64, b: f64| {
                if b <= a {
                    0.0
                } else {
                    (v - x) * (v - x) * normal_interval(z(a), z(b))
                }
            };
            // x* - x = s g + off on a linear piece
            let linear = |off: f64, a: f64, b: f64| {
                if b <= a {
                    return 0.0;
                }
                let [m0, m1, m2] = truncated_moments(z(a), z(b));
                s * s * m2 + 2.0 * s * off * m1 + off * off * m0
            };
            let e = flat(-lower, -inf, -k - lower)
                + linear(k, -k - lower, -k)
                + flat(0.0, -k, k)
                + linear(-k, k, k + upper)
                + flat(upper, k + upper, inf);
            let chi = normal_interval(z(k), z(k + upper)) + normal_interval(z(-k - lower), z(-k));
            (e, chi)
        };
        let p_ge = |e: f64| tail(t_ge(e), x, s);
        let p_gt = |e: f64| tail(t_gt(e), x, s);
        let g = monotone_correct(x, decision, &input.constellation, &p_ge, &p_gt);
        e_total += w * e;
        slope_mass += w * chi;
        p_correct += w * g;
        g_s.push(g);
    }
    Functionals {
        c_value: 0.5 * state.theta * slope_mass,
        c_over_theta: 0.5 * slope_mass,
        e_value: e_total,
        p_correct,
        error_rate: 1.0 - p_correct,
        g_s,
        nodes: 0,
    }
}

/// `score = slope y_r + lift y_i + intercept`; the estimate is the value of the highest line.
#[derive(Debug, Clone, Copy)]
struct Line {
    slope: f64,
    lift: f64,
    intercept: f64,
    value: Complex64,
}

impl Line {
    fn at(&self, yi: f64) -> Line {
        Line {
            slope: self.slope,
            lift: 0.0,
            intercept: self.intercept + self.lift * yi,
            value: self.value,
        }
    }
}

/// Values of `y_i` at which the envelope in `y_r` can change shape: parallel
/// lines swapping order and three lines meeting in one point.
fn envelope_breaks(lines: &[Line]) -> Vec<f64> {
    let mut out = Vec::new();
    let n = lines.len();
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (&lines[i], &lines[j]);
            if p.slope == q.slope && p.lift != q.lift {
                out.push((q.intercept - p.intercept) / (p.lift - q.lift));
            }
            for r in &lines[j + 1..] {
                let (a11, a12, b1) = (
                    p.slope - q.slope,
                    p.lift - q.lift,
                    q.intercept - p.intercept,
                );
                let (a21, a22, b2) = (
                    p.slope - r.slope,
                    p.lift - r.lift,
                    r.intercept - p.intercept,
                );
                let det = a11 * a22 - a12 * a21;
                if det != 0.0 {
                    out.push((a11 * b2 - a21 * b1) / det);
                }
            }
        }
    }
    out.retain(|v| v.is_finite());
    out
}

/// Upper envelope as `(from, to, line index)` pieces covering the real line.
/// Ties go to the earliest line.
fn upper_envelope(lines: &[Line]) -> Vec<(f64, f64, usize)> {
    let mut cuts = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let ds = lines[i].slope - lines[j].slope;
            if ds != 0.0 {
                let x = (lines[j].intercept - lines[i].intercept) / ds;
                if x.is_finite() {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    cuts.dedup();
    let argmax = |y: f64| {
        let mut best = 0;
        let mut best_v = lines[0].slope * y + lines[0].intercept;
        for (k, l) in lines.iter().enumerate().skip(1) {
            let v = l.slope * y + l.intercept;
            if v > best_v {
                best = k;
                best_v = v;
            }
        }
        best
    };
    let mut pieces: Vec<(f64, f64, usize)> = Vec::new();
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(f64::NEG_INFINITY);
    bounds.extend_from_slice(&cuts);
    bounds.push(f64::INFINITY);
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a + 1.0 + a.abs(),
            (false, true) => b - 1.0 - b.abs(),
            (false, false) => 0.0,
        };
        let k = argmax(mid);
        match pieces.last_mut() {
            Some(last) if last.2 == k => last.1 = b,
            _ => pieces.push((a, b, k)),
        }
    }
    pieces
}

/// Functionals of an estimator that is piecewise constant in `Re(y)` given
/// `Im(y)`, computed exactly in `Re(y)`. With `complex_noise` the imaginary
/// noise part is integrated with a Gauss–Legendre `rule` on every segment
/// between envelope breakpoints.
fn envelope_functionals(
    lines: &[Line],
    complex_noise: bool,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
    rule: Option<&Rule>,
) -> Result<Functionals> {
    let theta = state.theta;
    let s = theta * FRAC_1_SQRT_2;
    let breaks = if complex_noise {
        envelope_breaks(lines)
    } else {
        Vec::new()
    };
    let mut c_total = 0.0;
    let mut e_total = 0.0;
    let mut p_correct = 0.0;
    let mut g_s = Vec::new();
    for (x, w) in input.prior() {
        // (z_i, weight) pairs; the weights integrate the N(0, 1/2) density of z_i
        let points: Vec<(f64, f64)> = if complex_noise {
            let rule = rule.ok_or(Error::Quadrature { nodes: 0 })?;
            segmented(breaks.iter().map(|b| (b - x.im) / theta), rule)
        } else {
            alloc::vec![(0.0, 1.0)]
        };
        let (mut c_x, mut e_x, mut g_x) = (0.0, 0.0, 0.0);
        for (zi, weight) in points {
            let fixed: Vec<Line> = lines.iter().map(|l| l.at(x.im + theta * zi)).collect();
            for (from, to, k) in upper_envelope(&fixed) {
                let v = fixed[k].value;
                let (a, b) = ((from - x.re) / s, (to - x.re) / s);
                let m0 = normal_interval(a, b);
                if m0 == 0.0 && normal_pdf(a) == normal_pdf(b) {
                    continue;
                }
                let d = v - x;
                // z_r = g / sqrt(2) with g standard normal
                let zr_mass = FRAC_1_SQRT_2 * (normal_pdf(a) - normal_pdf(b));
                e_x += weight * d.norm_sqr() * m0;
                c_x += weight * (d.re * zr_mass + d.im * zi * m0);
                if decide(v, decision, &input.constellation) == x {
                    g_x += weight * m0;
                }
            }
        }
        c_total += w * c_x;
        e_total += w * e_x;
        p_correct += w * g_x;
        g_s.push(g_x);
    }
    Ok(Functionals {
        c_value: c_total,
        c_over_theta: c_total / theta,
        e_value: e_total,
        p_correct,
        error_rate: 1.0 - p_correct,
        g_s,
        nodes: if complex_noise {
            rule.map_or(0, |r| r.0.len())
        } else {
            0
        },
    })
}

/// Nodes and weights integrating the `N(0, 1/2)` density over `[-Z_SPAN, Z_SPAN]`,
/// with `rule` applied on every segment between `cuts`.
fn segmented(cuts: impl Iterator<Item = f64>, rule: &Rule) -> Vec<(f64, f64)> {
    let (nodes, weights) = rule;
    let norm = 1.0 / libm::sqrt(PI);
    let mut cuts: Vec<f64> = cuts.filter(|z| z.abs() < Z_SPAN).collect();
    cuts.push(-Z_SPAN);
    cuts.push(Z_SPAN);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    cuts.dedup();
    let mut pts = Vec::with_capacity(nodes.len() * (cuts.len() - 1));
    for seg in cuts.windows(2) {
        let (mid, half) = (0.5 * (seg[0] + seg[1]), 0.5 * (seg[1] - seg[0]));
        for (t, wt) in nodes.iter().zip(weights) {
            let z = mid + half * t;
            pts.push((z, half * wt * norm * libm::exp(-z * z)));
        }
    }
    pts
}

/// Smallest `y` at which `hit` holds, for a predicate monotone in `y`.
fn crossing(hit: &dyn Fn(f64) -> bool, reach: f64) -> f64 {
    if hit(-reach) {
        return f64::NEG_INFINITY;
    }
    if !hit(reach) {
        return f64::INFINITY;
    }
    let (mut a, mut b) = (-reach, reach);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if hit(m) {
            b = m;
        } else {
            a = m;
        }
        if b - a <= 1e-13 * (1.0 + b.abs()) {
            break;
        }
    }
    b
}

fn generic_interval_functionals(
    g: &GenericEstimator,
    decision: ScalarDecision,
    state: &DecoupledState,
    input: &DecoupledInput,
    rule: &Rule,
    with_error: bool,
) -> Functionals {
    let theta = state.theta;
    let s = theta * FRAC_1_SQRT_2;
    let tau = state.tau;
    let (lo, hi) = match g.feasible {
        GenericFeasible::Interval { lower, upper } => (lower, upper),
        GenericFeasible::Points(_) => unreachable!(),
    };
    let reach = 1e3 * (1.0 + lo.abs() + hi.abs() + s);
    // prox maps are nondecreasing: the usual kinks are where the estimate
    // leaves a bound or enters and leaves a plateau at zero
    let mut kinks = alloc::vec![
        crossing(&|y| g.estimate(y, tau) > lo, reach),
        crossing(&|y| g.estimate(y, tau) >= hi, reach),
    ];
    if lo < 0.0 && 0.0 < hi {
        kinks.push(crossing(&|y| g.estimate(y, tau) >= 0.0, reach));
        kinks.push(crossing(&|y| g.estimate(y, tau) > 0.0, reach));
    }
    let mut c_total = 0.0;
    let mut e_total = 0.0;
    let mut p_correct = 0.0;
    let mut g_s = Vec::new();
    for (x, w) in input.prior() {
        let x = x.re;
        let (mut c_x, mut e_x) = (0.0, 0.0);
        for (zr, wr) in segmented(kinks.iter().map(|k| (k - x) / theta), rule) {
            let d = g.estimate(x + theta * zr, tau) - x;
            e_x += wr * d * d;
            c_x += wr * d * zr;
        }
        c_total += w * c_x;
        e_total += w * e_x;
        if with_error {
            let p_ge = |e: f64| tail(crossing(&|y| g.estimate(y, tau) >= e, reach), x, s);
            let p_gt = |e: f64| tail(crossing(&|y| g.estimate(y, tau) > e, reach), x, s);
            let gx = monotone_correct(x, decision, &input.constellation, &p_ge, &p_gt);
            p_correct += w * gx;
            g_s.push(gx);
        }
    }
    Functionals {
        c_value: c_total,
        c_over_theta: c_total / theta,
        e_value: e_total,
        p_correct,
        error_rate: 1.0 - p_correct,
        g_s,
        nodes: rule.0.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub damping: f64,
    /// Starting `(c, q)`; `None` uses `(sigma^2, eta P)`.
    pub init: Option<(f64, f64)>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            init: None,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub c_star: f64,
    pub q_star: f64,
    pub tau: f64,
    pub theta: f64,
    /// `|c theta - tau C|`.
    pub residual_a: f64,
    /// `|q - E|`.
    pub residual_b: f64,
    pub iterations: usize,
    pub converged: bool,
    pub c_value: f64,
    pub e_value: f64,
    pub mse: f64,
    pub error_rate: f64,
    pub p_correct: f64,
    pub g_s: Vec<f64>,
    pub nodes: usize,
}

impl FixedPointResult {
    pub fn residual(&self) -> f64 {
        self.residual_a.max(self.residual_b)
    }
}

/// Damped iteration `q <- (1-b) q + b E`, `c <- (1-b) c + b tau C / theta`.
///
/// Quadrature nodes stay fixed during the iteration so the map is
/// deterministic; at convergence the rule is checked against one with twice
/// the nodes and the iteration resumes with the finer rule if they disagree.
pub fn solve_fixed_point(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    spectral: &dyn SpectralModel,
    noise_var: f64,
    input: &DecoupledInput,
    opts: &FixedPointOptions,
) -> Result<FixedPointResult> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "damping {} must lie in (0, 1]",
            opts.damping
        )));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance {noise_var} must be non-negative"
        )));
    }
    spec.validate(input)?;
    check_decision(decision, &input.constellation)?;
    let (mut c, mut q) = opts.init.unwrap_or((noise_var, input.second_moment()));
    let beta = opts.damping;

    let quad = spec.needs_quadrature();
    let mut nodes = if quad {
        let st = DecoupledState::new(spectral, c, q, noise_var)?;
        adaptive(spec, decision, &st, input, DEFAULT_NODES, false)?.nodes
    } else {
        0
    };
    let mut rule: Option<Rule> = if quad {
        Some(gauss_legendre(nodes))
    } else {
        None
    };

    let mut best: Option<(f64, f64, f64, usize)> = None;
    let mut iterations = 0;
    loop {
        let state = DecoupledState::new(spectral, c, q, noise_var)?;
        let f = evaluate(spec, decision, &state, input, rule.as_ref(), false)?;
        let res_a = (c * state.theta - state.tau * f.c_value).abs();
        let res_b = (q - f.e_value).abs();
        let res = res_a.max(res_b);
        if best.is_none_or(|b| res < b.2) {
            best = Some((c, q, res, iterations));
        }
        if res < opts.tol {
            if quad && 2 * nodes <= MAX_NODES {
                let finer = gauss_legendre(2 * nodes);
                let g = evaluate(spec, decision, &state, input, Some(&finer), false)?;
                if !agree(&f, &g) {
                    nodes *= 2;
                    rule = Some(finer);
                    best = None;
                    continue;
                }
            }
            return finish(
                spec,
                decision,
                spectral,
                noise_var,
                input,
                rule.as_ref(),
                c,
                q,
                iterations,
                true,
                nodes,
            );
        }
        if iterations >= opts.max_iter {
            let (bc, bq, _, _) = best.expect("at least one iterate");
            return finish(
                spec,
                decision,
                spectral,
                noise_var,
                input,
                rule.as_ref(),
                bc,
                bq,
                iterations,
                false,
                nodes,
            );
        }
        let c_next = state.tau * f.c_over_theta;
        c = (1.0 - beta) * c + beta * c_next;
        q = (1.0 - beta) * q + beta * f.e_value;
        iterations += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &ScalarEstimatorSpec,
    decision: ScalarDecision,
    spectral: &dyn SpectralModel,
    noise_var: f64,
    input: &DecoupledInput,
    rule: Option<&Rule>,
    c: f64,
    q: f64,
    iterations: usize,
    converged: bool,
    nodes: usize,
) -> Result<FixedPointResult> {
    let state = DecoupledState::new(spectral, c, q, noise_var)?;
    let f = evaluate(spec, decision, &state, input, rule, true)?;
    Ok(FixedPointResult {
        c_star: c,
        q_star: q,
        tau: state.tau,
        theta: state.theta,
        residual_a: (c * state.theta - state.tau * f.c_value).abs(),
        residual_b: (q - f.e_value).abs(),
        iterations,
        converged,
        c_value: f.c_value,
        e_value: f.e_value,
        mse: f.e_value,
        error_rate: f.error_rate,
        p_correct: f.p_correct,
        g_s: f.g_s,
        nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMetric {
    Mse,
    ErrorRate,
}

impl TuneMetric {
    pub fn of(&self, r: &FixedPointResult) -> f64 {
        match self {
            TuneMetric::Mse => r.mse,
            TuneMetric::ErrorRate => r.error_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub lambda: f64,
    pub value: f64,
    pub fixed_point: FixedPointResult,
    /// Every `(lambda, metric)` evaluated; non-converged points carry NaN.
    pub evaluated: Vec<(f64, f64)>,
}

/// A family of scalar estimators indexed by a regularization weight.
pub type EstimatorFamily<'a> = dyn Fn(f64) -> ScalarEstimatorSpec + Sync + 'a;

/// Grid search over `grid` followed by golden-section refinement between the
/// best grid point's neighbours.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    family: &EstimatorFamily<'_>,
    decision: ScalarDecision,
    spectral: &dyn SpectralModel,
    noise_var: f64,
    input: &DecoupledInput,
    metric: TuneMetric,
    grid: &[f64],
    opts: &FixedPointOptions,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("tuning grid is empty".into()));
    }
    let mut evaluated = Vec::new();
    let mut best: Option<(f64, f64, FixedPointResult)> = None;
    let consider = |lambda: f64,
                    evaluated: &mut Vec<(f64, f64)>,
                    best: &mut Option<(f64, f64, FixedPointResult)>| {
        let outcome =
            solve_fixed_point(&family(lambda), decision, spectral, noise_var, input, opts);
        let value = match outcome {
            Ok(r) if r.converged => {
                let v = metric.of(&r);
                if best.as_ref().is_none_or(|b| v < b.1) {
                    *best = Some((lambda, v, r));
                }
                v
            }
            _ => f64::NAN,
        };
        evaluated.push((lambda, value));
        if value.is_nan() {
            f64::INFINITY
        } else {
            value
        }
    };
    let mut values = Vec::with_capacity(grid.len());
    for &lambda in grid {
        values.push(consider(lambda, &mut evaluated, &mut best));
    }
    let Some((_, _, _)) = best.as_ref() else {
        return Err(Error::NoConvergence);
    };
    if grid.len() > 1 {
        let i = values
            .iter()
            .enumerate()
            .fold(0, |bi, (k, v)| if *v < values[bi] { k } else { bi });
        let a = grid[i.saturating_sub(1)];
        let b = grid[(i + 1).min(grid.len() - 1)];
        let tol = 1e-6 * (1.0 + b.abs());
        golden_section(
            |l| consider(l, &mut evaluated, &mut best),
            a.min(b),
            a.max(b),
            tol,
        );
    }
    let (lambda, value, fixed_point) = best.expect("checked above");
    Ok(TuneResult {
        lambda,
        value,
        fixed_point,
        evaluated,
    })
}

/// One row of a tuning dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryRow {
    pub snr_db: f64,
    pub noise_var: f64,
    pub lambda: f64,
    pub value: f64,
    pub c_star: f64,
    pub q_star: f64,
    pub residual: f64,
    pub mse: f64,
    pub error_rate: f64,
    pub converged: bool,
}

impl DictionaryRow {
    fn failed(snr_db: f64, noise_var: f64) -> Self {
        Self {
            snr_db,
            noise_var,
            lambda: f64::NAN,
            value: f64::NAN,
            c_star: f64::NAN,
            q_star: f64::NAN,
            residual: f64::NAN,
            mse: f64::NAN,
            error_rate: f64::NAN,
            converged: false,
        }
    }
}

/// `sigma^2 = P 10^(-snr/10)`.
pub fn noise_for_snr(power: f64, snr_db: f64) -> f64 {
    crate::channel::ExperimentConfig::noise_for_snr(power, snr_db)
}

/// One [`tune`] per SNR; failed rows are kept with NaN entries.
#[allow(clippy::too_many_arguments)]
pub fn tuning_dictionary(
    family: &EstimatorFamily<'_>,
    decision: ScalarDecision,
    spectral: &dyn SpectralModel,
    input: &DecoupledInput,
    metric: TuneMetric,
    snr_db: &[f64],
    grid: &[f64],
    opts: &FixedPointOptions,
) -> Vec<DictionaryRow> {
    snr_db
        .iter()
        .map(|&snr| {
            let noise_var = noise_for_snr(input.constellation.power(), snr);
            match tune(
                family, decision, spectral, noise_var, input, metric, grid, opts,
            ) {
                Ok(t) => DictionaryRow {
                    snr_db: snr,
                    noise_var,
                    lambda: t.lambda,
                    value: t.value,
                    c_star: t.fixed_point.c_star,
                    q_star: t.fixed_point.q_star,
                    residual: t.fixed_point.residual(),
                    mse: t.fixed_point.mse,
                    error_rate: t.fixed_point.error_rate,
                    converged: t.fixed_point.converged,
                },
                Err(_) => DictionaryRow::failed(snr, noise_var),
            }
        })
        .collect()
}

/// Replica prediction for mismatched MAP detection with the identity decision.
pub fn map_bound(
    spectral: &dyn SpectralModel,
    noise_var: f64,
    input: &DecoupledInput,
    opts: &FixedPointOptions,
) -> Result<FixedPointResult> {
    let spec = ScalarEstimatorSpec::mismatched_map(noise_var, input)?;
    solve_fixed_point(
        &spec,
        ScalarDecision::Identity,
        spectral,
        noise_var,
        input,
        opts,
    )
}

/// Boxed estimator family, for callers that build families at run time.
pub type BoxedFamily = Box<dyn Fn(f64) -> ScalarEstimatorSpec + Send + Sync>;
