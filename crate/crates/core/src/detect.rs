//! Finite-dimensional RLS detectors.
//!
//! Convex detectors optimise a real vector `v` against the complex channel:
//! `||y - H v||^2 = v^T G v - 2 b^T v + ||y||^2` with `G = Re(H^H H)` and
//! `b = Re(H^H y)`, which is what the proximal-gradient solver works on.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::channel::CMatrix;
use crate::codec::{encode, SmCodebook, UserPayload};
use crate::constellation::{Constellation, ConstellationKind};
use crate::error::{Error, Result};

/// Relaxation of the augmented alphabet the detector searches over.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    /// `[-lower, upper]` with `lower, upper >= 0`.
    Box {
        lower: f64,
        upper: f64,
    },
    FullReal,
    FullComplex,
    Discrete(Vec<Complex64>),
}

impl FeasibleSet {
    /// Real interval bounds `(lower, upper)` as distances from zero.
    pub fn real_bounds(&self) -> Result<(f64, f64)> {
        match *self {
            FeasibleSet::Box { lower, upper } => {
                if !(lower >= 0.0) || !(upper >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "box [-{lower}, {upper}] must contain zero"
                    )));
                }
                Ok((lower, upper))
            }
            FeasibleSet::FullReal => Ok((f64::INFINITY, f64::INFINITY)),
            _ => Err(Error::InvalidParameter(
                "feasible set is not a real interval".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    L1(f64),
    /// `a ||v||_0 + b`; `b` is carried along but never affects the minimiser.
    L0 {
        a: f64,
        b: f64,
    },
    None,
}

impl Regularizer {
    /// The `l0` weights of MAP detection under the i.i.d. sparse prior.
    pub fn mismatched_map(noise_var: f64, eta: f64, bits_per_symbol: usize) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "activity ratio {eta} must lie in (0, 1)"
            )));
        }
        let a = noise_var
            * (bits_per_symbol as f64 * core::f64::consts::LN_2 + libm::log(1.0 - eta)
                - libm::log(eta));
        let b = -noise_var * libm::log(1.0 - eta);
        Ok(Regularizer::L0 { a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// SSK: `sqrt(P) 1{x >= eps}`; antipodal: `sqrt(P) sign(x) 1{|x| > eps}`.
    HardThreshold(f64),
    /// Keep the `L` largest magnitudes, demap them to the nearest point, zero the rest.
    SignWithSparsity(usize),
    Identity,
}

/// A complete RLS detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsSpec {
    pub feasible: FeasibleSet,
    pub regularizer: Regularizer,
    pub decision: Decision,
}

impl RlsSpec {
    pub fn box_lasso(lambda: f64, lower: f64, upper: f64, threshold: f64) -> Self {
        Self {
            feasible: FeasibleSet::Box { lower, upper },
            regularizer: Regularizer::L1(lambda),
            decision: Decision::HardThreshold(threshold),
        }
    }

    pub fn classic_lasso(lambda: f64, threshold: f64) -> Self {
        Self {
            feasible: FeasibleSet::FullReal,
            regularizer: Regularizer::L1(lambda),
            decision: Decision::HardThreshold(threshold),
        }
    }

    pub fn validate(&self, constellation: &Constellation) -> Result<()> {
        if let Regularizer::L1(lambda) = self.regularizer {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "lambda {lambda} must be non-negative"
                )));
            }
        }
        match &self.feasible {
            FeasibleSet::Box { upper, .. } => {
                self.feasible.real_bounds()?;
                let amp = libm::sqrt(constellation.power());
                if *upper < amp {
                    return Err(Error::InvalidParameter(format!(
                        "box upper bound {upper} is below sqrt(P) = {amp}"
                    )));
                }
            }
            FeasibleSet::Discrete(points) => {
                let zero = Complex64::new(0.0, 0.0);
                if !points.contains(&zero)
                    || !constellation.points().iter().all(|p| points.contains(p))
                {
                    return Err(Error::InvalidParameter(
                        "discrete set must contain S0".into(),
                    ));
                }
            }
            _ => {}
        }
        if let Decision::HardThreshold(_) = self.decision {
            check_threshold_compatible(constellation)?;
        }
        Ok(())
    }
}

fn check_threshold_compatible(constellation: &Constellation) -> Result<()> {
    match constellation.kind() {
        ConstellationKind::Ssk | ConstellationKind::Bpsk => Ok(()),
        _ => Err(Error::InvalidParameter(
            "hard-threshold decisions need an SSK or antipodal constellation".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative objective change at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub lipschitz: f64,
    pub converged: bool,
}

/// Soft estimate of a real-valued detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftEstimate {
    pub values: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

impl SoftEstimate {
    pub fn to_complex(&self) -> Vec<Complex64> {
        self.values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect()
    }
}

/// `clip(soft_threshold(w, kappa), -lower, upper)`.
pub fn prox_box_soft_threshold(w: f64, kappa: f64, lower: f64, upper: f64) -> f64 {
    let shrunk = if w > kappa {
        w - kappa
    } else if w < -kappa {
        w + kappa
    } else {
        0.0
    };
    shrunk.clamp(-lower, upper)
}

/// A box-LASSO instance reduced to its real quadratic form; reusable across `lambda`.
#[derive(Debug, Clone)]
pub struct BoxLassoProblem {
    m: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    y_norm2: f64,
    lipschitz: f64,
}

impl BoxLassoProblem {
    pub fn new(h: &CMatrix, y: &[Complex64]) -> Result<Self> {
        if y.len() != h.rows() {
            return Err(Error::LengthMismatch {
                left: y.len(),
                right: h.rows(),
            });
        }
        let m = h.cols();
        let gram: Vec<f64> = h.gram().iter().map(|g| g.re).collect();
        let rhs: Vec<f64> = h.adjoint_mul(y).iter().map(|v| v.re).collect();
        let y_norm2 = y.iter().map(|v| v.norm_sqr()).sum();
        // 1% headroom over the power-iteration estimate keeps the step a true descent step
        let lipschitz = 2.0 * 1.01 * largest_eigenvalue(&gram, m);
        Ok(Self {
            m,
            gram,
            rhs,
            y_norm2,
            lipschitz,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn y_norm2(&self) -> f64 {
        self.y_norm2
    }

    fn gram_mul(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.gram[i * self.m..(i + 1) * self.m];
            *o = row.iter().zip(v).map(|(g, x)| g * x).sum();
        }
    }

    fn objective_with(&self, v: &[f64], gv: &[f64], lambda: f64) -> f64 {
        let quad: f64 = v.iter().zip(gv).map(|(a, b)| a * b).sum();
        let lin: f64 = v.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        let l1: f64 = v.iter().map(|x| x.abs()).sum();
        quad - 2.0 * lin + self.y_norm2 + lambda * l1
    }

    /// `||y - H v||^2 + lambda ||v||_1`.
    pub fn objective(&self, v: &[f64], lambda: f64) -> f64 {
        let mut gv = alloc::vec![0.0; self.m];
        self.gram_mul(v, &mut gv);
        self.objective_with(v, &gv, lambda)
    }

    /// Norm of the minimal-norm element of the optimality inclusion at `v`.
    pub fn kkt_residual(&self, v: &[f64], lambda: f64, lower: f64, upper: f64) -> f64 {
        let mut gv = alloc::vec![0.0; self.m];
        self.gram_mul(v, &mut gv);
        self.kkt_with(v, &gv, lambda, lower, upper)
    }

    fn kkt_with(&self, v: &[f64], gv: &[f64], lambda: f64, lower: f64, upper: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.m {
            let g = 2.0 * (gv[i] - self.rhs[i]);
            let x = v[i];
            let r = if x == 0.0 {
                match (lower == 0.0, upper == 0.0) {
                    (true, true) => 0.0,
                    (true, false) => (-(g + lambda)).max(0.0),
                    (false, true) => (g - lambda).max(0.0),
                    (false, false) => (g.abs() - lambda).max(0.0),
                }
            } else if x >= upper {
                (g + lambda).max(0.0)
            } else if x <= -lower {
                (lambda - g).max(0.0)
            } else if x > 0.0 {
                (g + lambda).abs()
            } else {
                (g - lambda).abs()
            };
            acc += r * r;
        }
        libm::sqrt(acc)
    }

    /// Proximal gradient over `[-lower, upper]^M`.
    ///
    /// Stops once the relative objective change drops below `tol` and the KKT
    /// residual is below `10 tol (1 + ||y||^2)`.
    pub fn solve(&self, lambda: f64, lower: f64, upper: f64, opts: &SolverOptions) -> SoftEstimate {
        let m = self.m;
        let mut v = alloc::vec![0.0; m];
        let mut gv = alloc::vec![0.0; m];
        if self.lipschitz == 0.0 {
            let objective = self.objective_with(&v, &gv, lambda);
            return SoftEstimate {
                values: v,
                diagnostics: SolverDiagnostics {
                    iterations: 0,
                    objective,
                    kkt_residual: self.kkt_with(&alloc::vec![0.0; m], &gv, lambda, lower, upper),
                    lipschitz: 0.0,
                    converged: true,
                },
            };
        }
        let step = 1.0 / self.lipschitz;
        let kkt_tol = 10.0 * opts.tol * (1.0 + self.y_norm2);
        let mut obj = self.objective_with(&v, &gv, lambda);
        let mut iterations = 0;
        let mut converged = false;
        let mut kkt = self.kkt_with(&v, &gv, lambda, lower, upper);
        while iterations < opts.max_iter {
            for i in 0..m {
                let grad = 2.0 * (gv[i] - self.rhs[i]);
                v[i] = prox_box_soft_threshold(v[i] - step * grad, step * lambda, lower, upper);
            }
            self.gram_mul(&v, &mut gv);
            let next = self.objective_with(&v, &gv, lambda);
            iterations += 1;
            let change = (obj - next).abs() / obj.abs().max(f64::MIN_POSITIVE);
            obj = next;
            kkt = self.kkt_with(&v, &gv, lambda, lower, upper);
            if change < opts.tol && kkt <= kkt_tol {
                converged = true;
                break;
            }
        }
        SoftEstimate {
            values: v,
            diagnostics: SolverDiagnostics {
                iterations,
                objective: obj,
                kkt_residual: kkt,
                lipschitz: self.lipschitz,
                converged,
            },
        }
    }

    /// Same as [`solve`](Self::solve) but also returns the objective after every iteration.
    pub fn solve_traced(
        &self,
        lambda: f64,
        lower: f64,
        upper: f64,
        opts: &SolverOptions,
    ) -> (SoftEstimate, Vec<f64>) {
        let mut trace = Vec::new();
        let mut v = alloc::vec![0.0; self.m];
        trace.push(self.objective(&v, lambda));
        if self.lipschitz == 0.0 {
            return (self.solve(lambda, lower, upper, opts), trace);
        }
        let step = 1.0 / self.lipschitz;
        let mut gv = alloc::vec![0.0; self.m];
        let budget = self
            .solve(lambda, lower, upper, opts)
            .diagnostics
            .iterations;
        for _ in 0..budget {
            for i in 0..self.m {
                let grad = 2.0 * (gv[i] - self.rhs[i]);
                v[i] = prox_box_soft_threshold(v[i] - step * grad, step * lambda, lower, upper);
            }
            self.gram_mul(&v, &mut gv);
            trace.push(self.objective_with(&v, &gv, lambda));
        }
        (self.solve(lambda, lower, upper, opts), trace)
    }
}

fn largest_eigenvalue(a: &[f64], m: usize) -> f64 {
    if m == 0 || a.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut v = alloc::vec![1.0 / libm::sqrt(m as f64); m];
    let mut w = alloc::vec![0.0; m];
    let mut est = 0.0;
    for _ in 0..1000 {
        for (i, o) in w.iter_mut().enumerate() {
            *o = a[i * m..(i + 1) * m]
                .iter()
                .zip(&v)
                .map(|(g, x)| g * x)
                .sum();
        }
        let norm = libm::sqrt(w.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            return 0.0;
        }
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (next - est).abs() <= 1e-12 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    // the Rayleigh quotient can trail the norm ratio; take the larger
    let mut w2 = alloc::vec![0.0; m];
    for (i, o) in w2.iter_mut().enumerate() {
        *o = a[i * m..(i + 1) * m]
            .iter()
            .zip(&v)
            .map(|(g, x)| g * x)
            .sum();
    }
    est.max(libm::sqrt(w2.iter().map(|x| x * x).sum::<f64>()))
}

/// Minimise `||y - H v||^2 + lambda ||v||_1` over a real box or the real line.
pub fn solve_box_lasso(
    h: &CMatrix,
    y: &[Complex64],
    lambda: f64,
    feasible: &FeasibleSet,
    opts: &SolverOptions,
) -> Result<SoftEstimate> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} must be non-negative"
        )));
    }
    let (lower, upper) = feasible.real_bounds()?;
    let problem = BoxLassoProblem::new(h, y)?;
    Ok(problem.solve(lambda, lower, upper, opts))
}

/// Search space for exhaustive `l0` / MAP detection.
#[derive(Debug, Clone, Copy)]
pub enum L0Mode<'a> {
    /// All of `S0^M` under the `a ||v||_0` penalty.
    IidMismatched,
    /// Only valid concatenations of per-user codewords, no penalty.
    CodebookExact {
        codebook: &'a SmCodebook,
        users: usize,
    },
}

/// Upper bound on the number of candidates an exhaustive search may visit.
pub const MAX_EXHAUSTIVE_CANDIDATES: u128 = 1 << 24;

/// Exhaustive minimiser over a discrete candidate set; ties keep the
/// lexicographically first candidate.
pub fn solve_l0_exhaustive(
    h: &CMatrix,
    y: &[Complex64],
    a: f64,
    constellation: &Constellation,
    mode: L0Mode<'_>,
) -> Result<Vec<Complex64>> {
    if y.len() != h.rows() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: h.rows(),
        });
    }
    let m = h.cols();
    match mode {
        L0Mode::IidMismatched => {
            let alphabet = constellation.augmented();
            let size = (alphabet.len() as u128)
                .checked_pow(m as u32)
                .unwrap_or(u128::MAX);
            if size > MAX_EXHAUSTIVE_CANDIDATES {
                return Err(Error::SearchSpaceTooLarge {
                    size,
                    limit: MAX_EXHAUSTIVE_CANDIDATES,
                });
            }
            let mut digits = alloc::vec![0usize; m];
            let mut best = alloc::vec![Complex64::new(0.0, 0.0); m];
            let mut best_cost = f64::INFINITY;
            let mut candidate = best.clone();
            loop {
                for (c, &d) in candidate.iter_mut().zip(&digits) {
                    *c = alphabet[d];
                }
                let nnz = digits.iter().filter(|&&d| d != 0).count();
                let cost = residual_energy(h, y, &candidate) + a * nnz as f64;
                if cost < best_cost {
                    best_cost = cost;
                    best.copy_from_slice(&candidate);
                }
                if !odometer_step(&mut digits, alphabet.len()) {
                    break;
                }
            }
            Ok(best)
        }
        L0Mode::CodebookExact { codebook, users } => {
            if users * codebook.m_u() != m {
                return Err(Error::InvalidDimension(format!(
                    "{users} users x {} antennas does not match {m} channel columns",
                    codebook.m_u()
                )));
            }
            let per_user = codebook.payload_bits(constellation);
            let total_bits = per_user * users;
            if total_bits as u128 >= 128 || (1u128 << total_bits) > MAX_EXHAUSTIVE_CANDIDATES {
                return Err(Error::SearchSpaceTooLarge {
                    size: 1u128.checked_shl(total_bits as u32).unwrap_or(u128::MAX),
                    limit: MAX_EXHAUSTIVE_CANDIDATES,
                });
            }
            let words: Vec<Vec<Complex64>> = (0..1u64 << per_user)
                .map(|p| {
                    let payload = UserPayload::from_integer(p, codebook, constellation)?;
                    encode(codebook, constellation, &payload)
                })
                .collect::<Result<_>>()?;
            let mut digits = alloc::vec![0usize; users];
            let mut best = alloc::vec![Complex64::new(0.0, 0.0); m];
            let mut best_cost = f64::INFINITY;
            let mut candidate = best.clone();
            let mu = codebook.m_u();
            loop {
                for (k, &d) in digits.iter().enumerate() {
                    candidate[k * mu..(k + 1) * mu].copy_from_slice(&words[d]);
                }
                let cost = residual_energy(h, y, &candidate);
                if cost < best_cost {
                    best_cost = cost;
                    best.copy_from_slice(&candidate);
                }
                if !odometer_step(&mut digits, words.len()) {
                    break;
                }
            }
            Ok(best)
        }
    }
}

/// Advance a most-significant-first counter; false once it wraps.
fn odometer_step(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

fn residual_energy(h: &CMatrix, y: &[Complex64], v: &[Complex64]) -> f64 {
    let active: Vec<(usize, Complex64)> = v
        .iter()
        .enumerate()
        .filter(|(_, x)| **x != Complex64::new(0.0, 0.0))
        .map(|(i, x)| (i, *x))
        .collect();
    let mut acc = 0.0;
    for (r, yr) in y.iter().enumerate() {
        let row = h.row(r);
        let hv: Complex64 = active.iter().map(|&(i, x)| row[i] * x).sum();
        acc += (yr - hv).norm_sqr();
    }
    acc
}

/// Map a soft estimate to `S0^M`.
pub fn apply_decision(
    values: &[Complex64],
    decision: Decision,
    constellation: &Constellation,
) -> Result<Vec<Complex64>> {
    let zero = Complex64::new(0.0, 0.0);
    match decision {
        Decision::Identity => Ok(values.to_vec()),
        Decision::HardThreshold(eps) => {
            check_threshold_compatible(constellation)?;
            let pts = constellation.points();
            Ok(values
                .iter()
                .map(|x| match constellation.kind() {
                    ConstellationKind::Ssk => {
                        if x.re >= eps {
                            pts[0]
                        } else {
                            zero
                        }
                    }
                    _ => {
                        if x.re > eps {
                            pts[1]
                        } else if x.re < -eps {
                            pts[0]
                        } else {
                            zero
                        }
                    }
                })
                .collect())
        }
        Decision::SignWithSparsity(keep) => {
            let mut order: Vec<usize> = (0..values.len()).collect();
            // stable sort: equal magnitudes keep ascending index order
            order.sort_by(|&i, &j| {
                values[j]
                    .norm()
                    .partial_cmp(&values[i].norm())
                    .unwrap_or(core::cmp::Ordering::Equal)
            });
            let mut out = alloc::vec![zero; values.len()];
            for &i in order.iter().take(keep) {
                out[i] = constellation.points()[constellation.nearest(values[i])];
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ErrorRate,
    Mse,
}

/// Average per-entry distortion between an estimate and the truth.
pub fn distortion(estimate: &[Complex64], truth: &[Complex64], metric: Metric) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimate.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidDimension("empty vectors".into()));
    }
    let m = truth.len() as f64;
    let total: f64 = match metric {
        Metric::ErrorRate => estimate.iter().zip(truth).filter(|(a, b)| a != b).count() as f64,
        Metric::Mse => estimate
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum(),
    };
    Ok(total / m)
}
