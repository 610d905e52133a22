use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Which preset a constellation was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstellationKind {
    /// Space shift keying: one point `sqrt(P)`, no symbol bits.
    Ssk,
    /// `{-sqrt(P), +sqrt(P)}`, bit 0 maps to the negative point.
    Bpsk,
    /// Gray-mapped 4-QAM `(+-1 +- j) sqrt(P/2)`; first bit drives the real sign.
    Qam4,
    Custom,
}

/// A symbol alphabet with `2^S` points of nominal power `P`.
///
/// Point `k` carries the `S`-bit big-endian representation of `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    bits_per_symbol: usize,
    power: f64,
    kind: ConstellationKind,
}

impl Constellation {
    pub fn ssk(power: f64) -> Self {
        Self {
            points: alloc::vec![Complex64::new(libm::sqrt(power), 0.0)],
            bits_per_symbol: 0,
            power,
            kind: ConstellationKind::Ssk,
        }
    }

    pub fn bpsk(power: f64) -> Self {
        let a = libm::sqrt(power);
        Self {
            points: alloc::vec![Complex64::new(-a, 0.0), Complex64::new(a, 0.0)],
            bits_per_symbol: 1,
            power,
            kind: ConstellationKind::Bpsk,
        }
    }

    pub fn qam4(power: f64) -> Self {
        let a = libm::sqrt(power / 2.0);
        let points = (0..4u32)
            .map(|k| {
                let re = if k & 0b10 != 0 { a } else { -a };
                let im = if k & 0b01 != 0 { a } else { -a };
                Complex64::new(re, im)
            })
            .collect();
        Self {
            points,
            bits_per_symbol: 2,
            power,
            kind: ConstellationKind::Qam4,
        }
    }

    /// Arbitrary alphabet; the point count must be a power of two.
    pub fn custom(points: Vec<Complex64>, power: f64) -> Result<Self> {
        let n = points.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(alloc::format!(
                "constellation size {n} is not a power of two"
            )));
        }
        if points.iter().any(|p| *p == Complex64::new(0.0, 0.0)) {
            return Err(Error::InvalidParameter(
                "constellation contains zero".into(),
            ));
        }
        Ok(Self {
            points,
            bits_per_symbol: n.trailing_zeros() as usize,
            power,
            kind: ConstellationKind::Custom,
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every point lies on the real axis.
    pub fn is_real(&self) -> bool {
        self.points.iter().all(|p| p.im == 0.0)
    }

    /// The augmented alphabet `{0} ∪ S`, zero first.
    pub fn augmented(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.points.len() + 1);
        out.push(Complex64::new(0.0, 0.0));
        out.extend_from_slice(&self.points);
        out
    }

    /// Map `S` bits (MSB first) to a point.
    pub fn modulate(&self, bits: &[u8]) -> Complex64 {
        debug_assert_eq!(bits.len(), self.bits_per_symbol);
        let idx = bits
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
        self.points[idx]
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, v: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (v - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Append the `S` bits of point `idx` to `out`.
    pub fn push_bits(&self, idx: usize, out: &mut Vec<u8>) {
        for b in (0..self.bits_per_symbol).rev() {
            out.push(((idx >> b) & 1) as u8);
        }
    }

    /// `E[s^k]` under the uniform law on the alphabet.
    pub fn moment(&self, k: u32) -> Complex64 {
        let n = self.points.len() as f64;
        self.points.iter().map(|p| p.powu(k)).sum::<Complex64>() / n
    }
}
