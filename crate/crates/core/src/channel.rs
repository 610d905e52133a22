//! Channel sampling, AWGN and the spectral (R-transform) layer.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `H x` for complex `x`.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(h, v)| h * v).sum())
            .collect()
    }

    /// `H v` for real `v`.
    pub fn mul_real(&self, v: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(h, &v)| h * v).sum())
            .collect()
    }

    /// `H^H y`.
    pub fn adjoint_mul(&self, y: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); self.cols];
        for (r, yr) in y.iter().enumerate() {
            for (o, h) in out.iter_mut().zip(self.row(r)) {
                *o += h.conj() * yr;
            }
        }
        out
    }

    /// `H^H H` (Hermitian, `cols x cols`), row-major.
    pub fn gram(&self) -> Vec<Complex64> {
        let m = self.cols;
        let mut g = alloc::vec![Complex64::new(0.0, 0.0); m * m];
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..m {
                let hi = row[i].conj();
                for j in i..m {
                    g[i * m + j] += hi * row[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                g[i * m + j] = g[j * m + i].conj();
            }
        }
        g
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.data.iter().map(|h| h.norm_sqr()).sum()
    }
}

/// One draw of the `N x M` channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub matrix: CMatrix,
}

impl ChannelRealization {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn m(&self) -> usize {
        self.matrix.cols()
    }

    /// Effective load `M / N`.
    pub fn load(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }

    /// Mean eigenvalue of `H^H H`, i.e. `tr(H^H H) / M`.
    pub fn mean_eigenvalue(&self) -> f64 {
        self.matrix.frobenius_sqr() / self.m() as f64
    }
}

/// Circular complex Gaussian with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = libm::sqrt(0.5 * var);
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// I.i.d. Rayleigh channel: entries `CN(0, 1/M)`.
pub fn sample_rayleigh<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidDimension(format!(
            "channel must be at least 1x1, got {n}x{m}"
        )));
    }
    let var = 1.0 / m as f64;
    let data = (0..n * m).map(|_| complex_gaussian(rng, var)).collect();
    Ok(ChannelRealization {
        matrix: CMatrix::from_row_major(n, m, data)?,
    })
}

/// `signal + n` with `n ~ CN(0, sigma2 I)`.
pub fn add_awgn<R: Rng + ?Sized>(
    signal: &[Complex64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance {sigma2} is negative"
        )));
    }
    if sigma2 == 0.0 {
        return Ok(signal.to_vec());
    }
    Ok(signal
        .iter()
        .map(|s| s + complex_gaussian(rng, sigma2))
        .collect())
}

/// Asymptotic squared-singular-value law of the channel, seen through its R-transform.
pub trait SpectralModel: Send + Sync {
    fn r_transform(&self, omega: f64) -> Result<f64>;

    /// `dR/domega`, if known in closed form.
    fn r_derivative(&self, _omega: f64) -> Option<Result<f64>> {
        None
    }

    fn description(&self) -> String;

    /// Mean squared singular value, `lim R(omega)` as `omega -> 0`.
    fn mean_eigenvalue(&self) -> Result<f64> {
        self.r_transform(0.0)
    }
}

/// I.i.d. Rayleigh fading with entry variance `1/M`: `R(omega) = 1 / (xi (1 - omega))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighSpectrum {
    pub load: f64,
}

impl RayleighSpectrum {
    pub fn new(load: f64) -> Result<Self> {
        if !(load > 0.0) || !load.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "load {load} must be positive"
            )));
        }
        Ok(Self { load })
    }
}

/// The Rayleigh preset.
pub fn rayleigh_r_transform(load: f64) -> Result<RayleighSpectrum> {
    RayleighSpectrum::new(load)
}

impl SpectralModel for RayleighSpectrum {
    fn r_transform(&self, omega: f64) -> Result<f64> {
        if omega == 1.0 {
            return Err(Error::Pole { omega });
        }
        Ok(1.0 / (self.load * (1.0 - omega)))
    }

    fn r_derivative(&self, omega: f64) -> Option<Result<f64>> {
        if omega == 1.0 {
            return Some(Err(Error::Pole { omega }));
        }
        let d = 1.0 - omega;
        Some(Ok(1.0 / (self.load * d * d)))
    }

    fn description(&self) -> String {
        format!("iid Rayleigh, load {}", self.load)
    }
}

/// User-supplied R-transform, for right-unitarily-invariant ensembles without a preset.
pub struct CustomSpectrum {
    r: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    dr: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    label: String,
}

impl CustomSpectrum {
    pub fn new(label: impl Into<String>, r: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            r: Box::new(r),
            dr: None,
            label: label.into(),
        }
    }

    pub fn with_derivative(mut self, dr: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dr = Some(Box::new(dr));
        self
    }
}

impl SpectralModel for CustomSpectrum {
    fn r_transform(&self, omega: f64) -> Result<f64> {
        let v = (self.r)(omega);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Pole { omega })
        }
    }

    fn r_derivative(&self, omega: f64) -> Option<Result<f64>> {
        self.dr.as_ref().map(|d| Ok(d(omega)))
    }

    fn description(&self) -> String {
        self.label.clone()
    }
}

/// Strips the analytic derivative from a model so the finite-difference path is used.
pub struct NumericDerivative<'a, S: SpectralModel + ?Sized>(pub &'a S);

impl<S: SpectralModel + ?Sized> SpectralModel for NumericDerivative<'_, S> {
    fn r_transform(&self, omega: f64) -> Result<f64> {
        self.0.r_transform(omega)
    }

    fn description(&self) -> String {
        format!("{} (finite differences)", self.0.description())
    }
}

/// System dimensions, loads and noise for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub users: usize,
    pub m_u: usize,
    pub l_u: usize,
    pub n: usize,
    pub noise_var: f64,
    pub constellation: Constellation,
    pub seed: u64,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.n == 0 {
            return Err(Error::InvalidDimension("K and N must be positive".into()));
        }
        crate::codec::index_bits(self.m_u, self.l_u)?;
        if !(self.noise_var > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance {} must be positive",
                self.noise_var
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        Ok(())
    }

    /// Activity ratio `L_u / M_u`.
    pub fn eta(&self) -> f64 {
        self.l_u as f64 / self.m_u as f64
    }

    pub fn m(&self) -> usize {
        self.users * self.m_u
    }

    pub fn l(&self) -> usize {
        self.users * self.l_u
    }

    /// Effective load `M / N`.
    pub fn xi(&self) -> f64 {
        self.m() as f64 / self.n as f64
    }

    /// System load `K / N`.
    pub fn alpha(&self) -> f64 {
        self.users as f64 / self.n as f64
    }

    /// Per-user load `M_u / N`.
    pub fn xi_u(&self) -> f64 {
        self.m_u as f64 / self.n as f64
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * libm::log10(self.constellation.power() / self.noise_var)
    }

    /// Noise variance that puts `P / sigma^2` at `snr_db`.
    pub fn noise_for_snr(power: f64, snr_db: f64) -> f64 {
        power * libm::pow(10.0, -snr_db / 10.0)
    }
}
