//! Multiple-active spatial modulation: codebooks, bit mapping and rate accounting.
//!
//! A user with `M_u` antennas and `L_u` RF chains selects one of `2^I` active
//! supports, `I = floor(log2 binom(M_u, L_u))`, with the first `I` payload bits
//! (big-endian), then places `L_u` constellation symbols on that support in
//! ascending antenna order. Antenna indices are zero-based in memory.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::math::{binary_entropy, binomial, floor_log2};

/// Largest codebook we are willing to materialise (`2^I` supports).
pub const MAX_INDEX_BITS: u64 = 20;

/// `floor(log2 binom(m_u, l_u))`, computed with exact integers.
pub fn index_bits(m_u: usize, l_u: usize) -> Result<u32> {
    check_dims(m_u, l_u)?;
    Ok(floor_log2(&binomial(m_u as u64, l_u as u64)) as u32)
}

fn check_dims(m_u: usize, l_u: usize) -> Result<()> {
    if m_u < 1 || l_u < 1 || l_u > m_u {
        return Err(Error::InvalidDimension(format!(
            "need 1 <= L_u <= M_u, got M_u = {m_u}, L_u = {l_u}"
        )));
    }
    Ok(())
}

/// How the `2^I` supports are picked from all `binom(M_u, L_u)` tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodebookPolicy {
    /// First `2^I` tuples in lexicographic order.
    Lexicographic,
    /// Uniformly random distinct tuples, sorted lexicographically afterwards.
    SeededRandom(u64),
    /// Caller-supplied supports (zero-based), in modulation-index order.
    Explicit(Vec<Vec<usize>>),
}

/// Indexed set of active-antenna supports shared by all users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmCodebook {
    m_u: usize,
    l_u: usize,
    index_bits: u32,
    supports: Vec<Vec<usize>>,
    lookup: BTreeMap<Vec<usize>, usize>,
}

impl SmCodebook {
    pub fn build(m_u: usize, l_u: usize, policy: CodebookPolicy) -> Result<Self> {
        let i = index_bits(m_u, l_u)?;
        if u64::from(i) > MAX_INDEX_BITS {
            return Err(Error::InvalidDimension(format!(
                "codebook with 2^{i} supports is too large (limit 2^{MAX_INDEX_BITS})"
            )));
        }
        let size = 1usize << i;
        let supports = match policy {
            CodebookPolicy::Lexicographic => Combinations::new(m_u, l_u).take(size).collect(),
            CodebookPolicy::SeededRandom(seed) => {
                let mut all: Vec<Vec<usize>> = Combinations::new(m_u, l_u).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for k in 0..size {
                    let j = rng.random_range(k..all.len());
                    all.swap(k, j);
                }
                all.truncate(size);
                all.sort();
                all
            }
            CodebookPolicy::Explicit(list) => {
                if list.len() != size {
                    return Err(Error::InvalidCodebook(format!(
                        "expected {size} supports, got {}",
                        list.len()
                    )));
                }
                list
            }
        };
        Self::from_supports(m_u, l_u, supports)
    }

    fn from_supports(m_u: usize, l_u: usize, supports: Vec<Vec<usize>>) -> Result<Self> {
        let index_bits = index_bits(m_u, l_u)?;
        let mut lookup = BTreeMap::new();
        let mut normalized = Vec::with_capacity(supports.len());
        for (idx, s) in supports.into_iter().enumerate() {
            let mut s = s;
            s.sort_unstable();
            if s.len() != l_u {
                return Err(Error::InvalidCodebook(format!(
                    "support {idx} has {} entries, expected {l_u}",
                    s.len()
                )));
            }
            if s.windows(2).any(|w| w[0] == w[1]) || s.iter().any(|&a| a >= m_u) {
                return Err(Error::InvalidCodebook(format!(
                    "support {idx} is not a valid subset"
                )));
            }
            if lookup.insert(s.clone(), idx).is_some() {
                return Err(Error::InvalidCodebook(format!(
                    "support {idx} is a duplicate"
                )));
            }
            normalized.push(s);
        }
        Ok(Self {
            m_u,
            l_u,
            index_bits,
            supports: normalized,
            lookup,
        })
    }

    /// Build from one-based antenna tuples, as written in the literature.
    pub fn from_one_based(m_u: usize, l_u: usize, supports: &[Vec<usize>]) -> Result<Self> {
        let zero_based = supports
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&a| {
                        a.checked_sub(1).ok_or_else(|| {
                            Error::InvalidCodebook("antenna index 0 in one-based list".into())
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(m_u, l_u, CodebookPolicy::Explicit(zero_based))
    }

    pub fn m_u(&self) -> usize {
        self.m_u
    }

    pub fn l_u(&self) -> usize {
        self.l_u
    }

    pub fn index_bits(&self) -> u32 {
        self.index_bits
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn support(&self, index: usize) -> &[usize] {
        &self.supports[index]
    }

    /// Modulation index of an exact support, if it is a codeword.
    pub fn index_of(&self, support: &[usize]) -> Option<usize> {
        self.lookup.get(support).copied()
    }

    /// Payload bits per user per channel use, `I + L_u S`.
    pub fn payload_bits(&self, constellation: &Constellation) -> usize {
        self.index_bits as usize + self.l_u * constellation.bits_per_symbol()
    }

    /// Number of supports that activate antenna `a` (zero-based).
    pub fn activation_count(&self, a: usize) -> usize {
        self.supports.iter().filter(|s| s.contains(&a)).count()
    }
}

/// Lexicographic iterator over `k`-subsets of `0..n`.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Bits sent by one user in one channel use.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserPayload(Vec<u8>);

impl UserPayload {
    pub fn new(
        bits: Vec<u8>,
        codebook: &SmCodebook,
        constellation: &Constellation,
    ) -> Result<Self> {
        let expected = codebook.payload_bits(constellation);
        if bits.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                actual: bits.len(),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter(
                "payload bits must be 0 or 1".into(),
            ));
        }
        Ok(Self(bits))
    }

    /// Payload whose bits are the big-endian representation of `value`.
    pub fn from_integer(
        value: u64,
        codebook: &SmCodebook,
        constellation: &Constellation,
    ) -> Result<Self> {
        let n = codebook.payload_bits(constellation);
        let bits = (0..n).rev().map(|b| ((value >> b) & 1) as u8).collect();
        Self::new(bits, codebook, constellation)
    }

    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        codebook: &SmCodebook,
        constellation: &Constellation,
    ) -> Self {
        let n = codebook.payload_bits(constellation);
        Self((0..n).map(|_| rng.random::<bool>() as u8).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn to_integer(&self) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
    }
}

/// Map one user's payload to its `M_u`-entry transmit vector.
pub fn encode(
    codebook: &SmCodebook,
    constellation: &Constellation,
    payload: &UserPayload,
) -> Result<Vec<Complex64>> {
    let expected = codebook.payload_bits(constellation);
    let bits = payload.bits();
    if bits.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            actual: bits.len(),
        });
    }
    let ib = codebook.index_bits() as usize;
    let index = bits[..ib]
        .iter()
        .fold(0usize, |acc, &b| (acc << 1) | b as usize);
    let s = constellation.bits_per_symbol();
    let mut x = alloc::vec![Complex64::new(0.0, 0.0); codebook.m_u()];
    for (slot, &antenna) in codebook.support(index).iter().enumerate() {
        let off = ib + slot * s;
        x[antenna] = constellation.modulate(&bits[off..off + s]);
    }
    Ok(x)
}

/// Concatenate the per-user vectors of all users into the full transmit vector.
pub fn encode_users(
    codebook: &SmCodebook,
    constellation: &Constellation,
    payloads: &[UserPayload],
) -> Result<Vec<Complex64>> {
    let mut x = Vec::with_capacity(payloads.len() * codebook.m_u());
    for p in payloads {
        x.extend(encode(codebook, constellation, p)?);
    }
    Ok(x)
}

/// Recover a payload from a detected per-user vector.
///
/// An exact codeword support is decoded directly; anything else is projected
/// onto the support carrying the most magnitude (lowest index on ties), and
/// every active entry is demapped to its nearest constellation point.
pub fn decode_hard(
    codebook: &SmCodebook,
    constellation: &Constellation,
    detected: &[Complex64],
) -> Result<UserPayload> {
    if detected.len() != codebook.m_u() {
        return Err(Error::LengthMismatch {
            left: detected.len(),
            right: codebook.m_u(),
        });
    }
    let support: Vec<usize> = (0..detected.len())
        .filter(|&a| detected[a] != Complex64::new(0.0, 0.0))
        .collect();
    let index = codebook.index_of(&support).unwrap_or_else(|| {
        let mut best = 0;
        let mut best_mass = f64::NEG_INFINITY;
        for (idx, s) in codebook.supports().iter().enumerate() {
            let mass: f64 = s.iter().map(|&a| detected[a].norm()).sum();
            if mass > best_mass {
                best_mass = mass;
                best = idx;
            }
        }
        best
    });
    let mut bits = Vec::with_capacity(codebook.payload_bits(constellation));
    let ib = codebook.index_bits();
    for b in (0..ib).rev() {
        bits.push(((index >> b) & 1) as u8);
    }
    for &a in codebook.support(index) {
        constellation.push_bits(constellation.nearest(detected[a]), &mut bits);
    }
    Ok(UserPayload(bits))
}

/// Closed-form constants that bracket the per-antenna rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// The constant `C` solved from the exact rate.
    pub c_const: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    /// Stirling bracket on the per-antenna rate: `stirling_lo < R̄ <= stirling_hi`.
    pub stirling_lo: f64,
    pub stirling_hi: f64,
    pub log_theta0: f64,
    pub log_theta1: f64,
    /// `log2 Θ0 + log2 Θ1 + L_u S`.
    pub xi: f64,
    /// Index-bit bracket `I_d < I <= I_u` implied by the `C` bounds.
    pub index_lo: f64,
    pub index_hi: f64,
}

/// Exact per-antenna rate and its asymptotic decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBounds {
    pub r_bar: f64,
    pub index_bits: u32,
    pub user_rate: usize,
    /// Absent when every antenna is active (`L_u = M_u`).
    pub constants: Option<RateConstants>,
}

/// Per-antenna transmit rate `(I + L_u S) / M_u` with its bracketing constants.
pub fn per_antenna_rate(m_u: usize, l_u: usize, s: usize) -> Result<RateBounds> {
    let i = index_bits(m_u, l_u)?;
    let user_rate = i as usize + l_u * s;
    let mf = m_u as f64;
    let lf = l_u as f64;
    let r_bar = user_rate as f64 / mf;
    if l_u == m_u {
        return Ok(RateBounds {
            r_bar,
            index_bits: i,
            user_rate,
            constants: None,
        });
    }
    let eta = lf / mf;
    let sf = s as f64;
    let h = binary_entropy(eta);
    let log_m = libm::log2(mf);
    let log_var = libm::log2(eta - eta * eta);
    let e = core::f64::consts::E;
    let pi = core::f64::consts::PI;
    let c_lower = libm::log2(pi / (2.0 * libm::pow(e, 4.0))) - log_var;
    let c_upper = libm::log2(e * e / (4.0 * pi * pi)) - log_var;
    let c_const = 2.0 * mf * (r_bar - eta * sf - h) + log_m;

    let rest = mf - lf;
    let log_theta0 = 0.5 * (log_m - libm::log2(lf) - libm::log2(rest));
    let log_theta1 = mf * log_m - lf * libm::log2(lf) - rest * libm::log2(rest);
    let xi = log_theta0 + log_theta1 + lf * sf;
    let stirling_lo = (libm::log2(libm::sqrt(2.0 * pi) / (e * e)) - 1.0 + xi) / mf;
    let stirling_hi = (libm::log2(e / (2.0 * pi)) + xi) / mf;
    let index_lo = 0.5 * (c_lower - log_m) + mf * h;
    let index_hi = 0.5 * (c_upper - log_m) + mf * h;

    Ok(RateBounds {
        r_bar,
        index_bits: i,
        user_rate,
        constants: Some(RateConstants {
            c_const,
            c_lower,
            c_upper,
            stirling_lo,
            stirling_hi,
            log_theta0,
            log_theta1,
            xi,
            index_lo,
            index_hi,
        }),
    })
}

/// One joint moment `E[x_m^l x_{m+delta}^t]` to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentRequest {
    pub l: u32,
    pub t: u32,
    pub delta: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub request: MomentRequest,
    pub empirical: Complex64,
    /// Value under the i.i.d. sparse reference law.
    pub reference: Complex64,
}

/// Statistics of one transmit entry gathered over random payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryStats {
    /// One-based entry index into the full `K M_u` vector.
    pub entry: usize,
    pub draws: usize,
    /// Empirical mass on each value of `{0} ∪ S` (zero first).
    pub marginal: Vec<(Complex64, f64)>,
    /// `(1-eta) 1{v=0} + 2^-S eta 1{v != 0}`.
    pub reference_marginal: Vec<(Complex64, f64)>,
    pub moments: Vec<MomentEstimate>,
}

/// Reference i.i.d. marginal over `{0} ∪ S`.
pub fn reference_marginal(eta: f64, constellation: &Constellation) -> Vec<(Complex64, f64)> {
    let share = eta / constellation.len() as f64;
    constellation
        .augmented()
        .into_iter()
        .enumerate()
        .map(|(k, v)| (v, if k == 0 { 1.0 - eta } else { share }))
        .collect()
}

/// Exact marginal of antenna `entry` (one-based, within one user) under
/// uniform payloads for a given codebook.
pub fn exact_marginal(
    codebook: &SmCodebook,
    constellation: &Constellation,
    entry: usize,
) -> Result<Vec<(Complex64, f64)>> {
    if entry == 0 || entry > codebook.m_u() {
        return Err(Error::IndexOutOfRange {
            index: entry,
            len: codebook.m_u(),
        });
    }
    let active = codebook.activation_count(entry - 1) as f64 / codebook.len() as f64;
    Ok(reference_marginal(active, constellation))
}

/// Monte Carlo estimate of the marginal and joint moments of one entry.
pub fn empirical_stats<R: Rng + ?Sized>(
    codebook: &SmCodebook,
    constellation: &Constellation,
    users: usize,
    entry: usize,
    draws: usize,
    requests: &[MomentRequest],
    rng: &mut R,
) -> Result<EntryStats> {
    let total = users * codebook.m_u();
    if entry == 0 || entry > total {
        return Err(Error::IndexOutOfRange {
            index: entry,
            len: total,
        });
    }
    if draws == 0 {
        return Err(Error::InvalidParameter("draws must be at least 1".into()));
    }
    for r in requests {
        let partner = entry as i64 + r.delta;
        if partner < 1 || partner > total as i64 {
            return Err(Error::IndexOutOfRange {
                index: partner.max(0) as usize,
                len: total,
            });
        }
    }
    let alphabet = constellation.augmented();
    let mut counts = alloc::vec![0usize; alphabet.len()];
    let mut sums = alloc::vec![Complex64::new(0.0, 0.0); requests.len()];
    for _ in 0..draws {
        let payloads: Vec<UserPayload> = (0..users)
            .map(|_| UserPayload::random(rng, codebook, constellation))
            .collect();
        let x = encode_users(codebook, constellation, &payloads)?;
        let v = x[entry - 1];
        let slot = alphabet
            .iter()
            .position(|a| *a == v)
            .expect("entry lies in S0");
        counts[slot] += 1;
        for (acc, r) in sums.iter_mut().zip(requests) {
            let partner = x[(entry as i64 + r.delta - 1) as usize];
            *acc += v.powu(r.l) * partner.powu(r.t);
        }
    }
    let jf = draws as f64;
    let eta = codebook.l_u() as f64 / codebook.m_u() as f64;
    let raw_moment = |k: u32| {
        if k == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            constellation.moment(k) * eta
        }
    };
    let moments = requests
        .iter()
        .zip(&sums)
        .map(|(r, s)| MomentEstimate {
            request: *r,
            empirical: s / jf,
            reference: if r.delta == 0 {
                raw_moment(r.l + r.t)
            } else {
                raw_moment(r.l) * raw_moment(r.t)
            },
        })
        .collect();
    Ok(EntryStats {
        entry,
        draws,
        marginal: alphabet
            .iter()
            .zip(&counts)
            .map(|(v, &c)| (*v, c as f64 / jf))
            .collect(),
        reference_marginal: reference_marginal(eta, constellation),
        moments,
    })
}
