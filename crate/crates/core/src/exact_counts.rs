//! Exact expectations of the block counts `K_n` and `K_{nr}`.
//!
//! `E[K_n] = sum_{m=1}^n C(n, m) (-1)^{m+1} p(m)` and
//! `E[K_{nr}] = C(n, r) sum_{m=0}^{n-r} C(n-r, m) (-1)^m p(m + r)`, where
//! `p(m) = phi(m) / (1 - psi(m))`. The binomial weights reach `2^n` while the
//! result is of order `n^alpha*`, so the sums are evaluated in binary
//! fixed point with `n + 64` guard bits and outward rounding: every quantity
//! is carried as an interval `[lo, hi] / 2^prec` that provably contains the
//! true value. Split parameters are doubles, hence exact dyadic rationals,
//! and at integer arguments the Mellin transforms of all supported laws are
//! finite products of them; no special functions enter.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mellin::{p_of_alpha_with, solve_malthusian, MalthusianSolution};
use crate::split_laws::SplitLaw;

/// Default cap on `n`.
pub const DEFAULT_MAX_N: usize = 1 << 14;

/// Relative width above which a result is not certified.
pub const CERTIFIED_REL_TOL: f64 = 1e-9;

const GUARD_BITS: u32 = 64;
const RETRIES: u32 = 4;

/// Exact dyadic rational `mant * 2^exp`.
#[derive(Clone, Debug, PartialEq)]
struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "finite parameter");
        if x == 0.0 {
            return Dyadic {
                mant: BigInt::zero(),
                exp: 0,
            };
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 0 { 1i64 } else { -1 };
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        Dyadic {
            mant: BigInt::from(sign) * BigInt::from(m),
            exp: e,
        }
    }

    fn from_int(k: i64) -> Self {
        Dyadic {
            mant: BigInt::from(k),
            exp: 0,
        }
    }

    fn align(&self, e: i64) -> BigInt {
        debug_assert!(e <= self.exp);
        &self.mant << (self.exp - e) as usize
    }

    fn add(&self, other: &Dyadic) -> Dyadic {
        let e = self.exp.min(other.exp);
        Dyadic {
            mant: self.align(e) + other.align(e),
            exp: e,
        }
    }

    fn mul_int(&self, k: i64) -> Dyadic {
        Dyadic {
            mant: &self.mant * k,
            exp: self.exp,
        }
    }

    /// Integer pair `(a, b)` with `a / b = self / other`.
    fn ratio(&self, other: &Dyadic) -> (BigInt, BigInt) {
        let e = self.exp.min(other.exp);
        (self.align(e), other.align(e))
    }
}

/// Closed interval `[lo, hi] / 2^prec`.
#[derive(Clone, Debug, PartialEq)]
struct Interval {
    lo: BigInt,
    hi: BigInt,
}

#[derive(Clone, Copy, Debug)]
struct FixedPoint {
    prec: u32,
}

impl FixedPoint {
    fn one(&self) -> BigInt {
        BigInt::one() << self.prec as usize
    }

    fn point(&self, v: BigInt) -> Interval {
        Interval { lo: v.clone(), hi: v }
    }

    fn lift(&self, x: &Dyadic) -> Interval {
        let shift = x.exp + self.prec as i64;
        if shift >= 0 {
            self.point(&x.mant << shift as usize)
        } else {
            let den = BigInt::one() << (-shift) as usize;
            Interval {
                lo: x.mant.div_floor(&den),
                hi: div_ceil(&x.mant, &den),
            }
        }
    }

    /// Product of two nonnegative intervals.
    fn mul(&self, a: &Interval, b: &Interval) -> Interval {
        let den = self.one();
        Interval {
            lo: (&a.lo * &b.lo).div_floor(&den),
            hi: div_ceil(&(&a.hi * &b.hi), &den),
        }
    }

    /// Quotient of nonnegative intervals; `None` if the divisor may vanish.
    fn div(&self, a: &Interval, b: &Interval) -> Option<Interval> {
        if !b.lo.is_positive() {
            return None;
        }
        let p = self.prec as usize;
        Some(Interval {
            lo: (&a.lo << p).div_floor(&b.hi),
            hi: div_ceil(&(&a.hi << p), &b.lo),
        })
    }

    /// Nonnegative interval times the positive rational `num / den`.
    fn scale(&self, a: &Interval, num: &BigInt, den: &BigInt) -> Interval {
        Interval {
            lo: (&a.lo * num).div_floor(den),
            hi: div_ceil(&(&a.hi * num), den),
        }
    }

    fn add(&self, a: &Interval, b: &Interval) -> Interval {
        Interval {
            lo: &a.lo + &b.lo,
            hi: &a.hi + &b.hi,
        }
    }

    fn decode(&self, v: &BigInt) -> f64 {
        big_to_f64(v, self.prec)
    }
}

fn div_ceil(a: &BigInt, b: &BigInt) -> BigInt {
    -((-a).div_floor(b))
}

// v / 2^prec rounded to double
fn big_to_f64(v: &BigInt, prec: u32) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    let bits = v.bits() as i64;
    let drop = (bits - 64).max(0);
    let top = (v.abs() >> drop as usize).to_u64().expect("64 bits fit");
    let magnitude = top as f64 * 2f64.powi((drop - prec as i64) as i32);
    if v.sign() == Sign::Minus {
        -magnitude
    } else {
        magnitude
    }
}

/// `psi(m)` and `phi(m)` as certified intervals for `m = 0..=m_max`.
fn integer_mellin(law: &SplitLaw, m_max: usize, fx: FixedPoint) -> Result<(Vec<Interval>, Vec<Interval>)> {
    match law {
        SplitLaw::DeterministicTest { crumbs, solids } => {
            Ok((power_sums(crumbs, m_max, fx), power_sums(solids, m_max, fx)))
        }
        SplitLaw::Refined { base, subdivider } => {
            let (psi, phi0) = integer_mellin(base, m_max, fx)?;
            let extra = power_sums(subdivider, m_max, fx);
            let phi = phi0.iter().zip(&extra).map(|(a, b)| fx.mul(a, b)).collect();
            Ok((psi, phi))
        }
        _ => {
            let shape = law.dirichlet_shape().ok_or(Error::NoClosedForm)?;
            let gamma = Dyadic::from_f64(shape.crumb_shape);
            let beta = Dyadic::from_f64(shape.solid_shape);
            let total = beta.add(&gamma.mul_int(shape.crumbs as i64));
            // tau_m = (gamma)_m / (S)_m, rho_m = (beta)_m / (S)_m
            let mut tau = fx.point(fx.one());
            let mut rho = fx.point(fx.one());
            let count = BigInt::from(shape.crumbs);
            let mut psi = Vec::with_capacity(m_max + 1);
            let mut phi = Vec::with_capacity(m_max + 1);
            for m in 0..=m_max {
                if m > 0 {
                    let shift = Dyadic::from_int(m as i64 - 1);
                    let s = total.add(&shift);
                    let (g_num, g_den) = gamma.add(&shift).ratio(&s);
                    let (b_num, b_den) = beta.add(&shift).ratio(&s);
                    tau = fx.scale(&tau, &g_num, &g_den);
                    rho = fx.scale(&rho, &b_num, &b_den);
                }
                psi.push(Interval {
                    lo: &tau.lo * &count,
                    hi: &tau.hi * &count,
                });
                phi.push(rho.clone());
            }
            Ok((psi, phi))
        }
    }
}

fn power_sums(sizes: &[f64], m_max: usize, fx: FixedPoint) -> Vec<Interval> {
    let bases: Vec<Interval> = sizes
        .iter()
        .map(|&s| fx.lift(&Dyadic::from_f64(s)))
        .collect();
    let mut powers: Vec<Interval> = bases.iter().map(|_| fx.point(fx.one())).collect();
    let mut sums = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        if m > 0 {
            for (p, b) in powers.iter_mut().zip(&bases) {
                *p = fx.mul(p, b);
            }
        }
        let zero = fx.point(BigInt::zero());
        sums.push(powers.iter().fold(zero, |acc, p| fx.add(&acc, p)));
    }
    sums
}

/// Certified interval for a real quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certified {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    /// Interval width relative to the magnitude of the value.
    pub relative_bound: f64,
}

/// `p(1), ..., p(n_max)` as certified fixed-point intervals at one precision.
pub struct AlternatingSums {
    fx: FixedPoint,
    p: Vec<Interval>,
}

impl AlternatingSums {
    /// Evaluates `p(m)` for `m <= n_max` at `prec` fractional bits.
    pub fn new(law: &SplitLaw, n_max: usize, prec: u32) -> Result<Self> {
        law.validate()?;
        let fx = FixedPoint { prec };
        let (psi, phi) = integer_mellin(law, n_max, fx)?;
        let one = fx.one();
        let mut p = Vec::with_capacity(n_max + 1);
        p.push(fx.point(BigInt::zero()));
        for m in 1..=n_max {
            let den = Interval {
                lo: &one - &psi[m].hi,
                hi: &one - &psi[m].lo,
            };
            let value = fx.div(&phi[m], &den).ok_or(Error::PrecisionInsufficient {
                relative_bound: f64::INFINITY,
            })?;
            p.push(value);
        }
        Ok(AlternatingSums { fx, p })
    }

    pub fn n_max(&self) -> usize {
        self.p.len() - 1
    }

    pub fn precision_bits(&self) -> u32 {
        self.fx.prec
    }

    /// Certified `p(m)`.
    pub fn p(&self, m: usize) -> Certified {
        self.certify(&self.p[m])
    }

    pub fn expected_blocks(&self, n: usize) -> Certified {
        assert!(n >= 1 && n <= self.n_max());
        let terms = (1..=n).map(|m| (m, m % 2 == 1));
        let sum = self.signed_binomial_sum(n, terms, 0);
        self.certify(&sum)
    }

    pub fn expected_count_r(&self, n: usize, r: usize) -> Certified {
        assert!(r >= 1 && r <= n && n <= self.n_max());
        let terms = (0..=n - r).map(|m| (m, m % 2 == 0));
        let sum = self.signed_binomial_sum(n - r, terms, r);
        let c = binomial(n, r);
        let scaled = Interval {
            lo: &sum.lo * &c,
            hi: &sum.hi * &c,
        };
        self.certify(&scaled)
    }

    // sum over m of ±C(k, m) p(m + offset)
    fn signed_binomial_sum(
        &self,
        k: usize,
        terms: impl Iterator<Item = (usize, bool)>,
        offset: usize,
    ) -> Interval {
        let mut lo = BigInt::zero();
        let mut hi = BigInt::zero();
        let mut c = BigInt::one();
        let mut at = 0usize;
        for (m, positive) in terms {
            while at < m {
                at += 1;
                c = c * BigInt::from(k - at + 1) / BigInt::from(at);
            }
            let p = &self.p[m + offset];
            if positive {
                lo += &c * &p.lo;
                hi += &c * &p.hi;
            } else {
                lo -= &c * &p.hi;
                hi -= &c * &p.lo;
            }
        }
        Interval { lo, hi }
    }

    fn certify(&self, iv: &Interval) -> Certified {
        let lo = self.fx.decode(&iv.lo);
        let hi = self.fx.decode(&iv.hi);
        let mid = &iv.lo + &iv.hi;
        let value = big_to_f64(&mid, self.fx.prec + 1);
        let width = big_to_f64(&(&iv.hi - &iv.lo), self.fx.prec);
        let relative_bound = if value == 0.0 {
            if width == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            width / value.abs()
        };
        Certified {
            lo,
            hi,
            value,
            relative_bound,
        }
    }
}

fn binomial(n: usize, k: usize) -> BigInt {
    let mut c = BigInt::one();
    for i in 1..=k {
        c = c * BigInt::from(n - k + i) / BigInt::from(i);
    }
    c
}

/// Working precision for sums up to `n`: `n + 64` bits plus headroom for
/// the rounding errors accumulated by `n` products.
pub fn default_precision(n: usize) -> u32 {
    let log_n = usize::BITS - n.max(1).leading_zeros();
    n as u32 + GUARD_BITS + 2 * log_n + 8
}

fn check_size(n: usize, allow_large: bool) -> Result<()> {
    if n > DEFAULT_MAX_N && !allow_large {
        return Err(Error::SizeCap {
            n,
            cap: DEFAULT_MAX_N,
        });
    }
    Ok(())
}

// evaluate with growing precision until certified
fn certified_eval(
    law: &SplitLaw,
    n: usize,
    precision_bits: Option<u32>,
    eval: impl Fn(&AlternatingSums) -> Certified,
) -> Result<Certified> {
    let mut prec = precision_bits.unwrap_or_else(|| default_precision(n));
    let mut last = f64::INFINITY;
    for attempt in 0..=RETRIES {
        match AlternatingSums::new(law, n, prec) {
            Ok(sums) => {
                let c = eval(&sums);
                if c.relative_bound <= CERTIFIED_REL_TOL {
                    return Ok(c);
                }
                last = c.relative_bound;
            }
            Err(Error::PrecisionInsufficient { .. }) => {}
            Err(e) => return Err(e),
        }
        // an explicit precision is honoured as given
        if precision_bits.is_some() {
            break;
        }
        prec += GUARD_BITS << attempt;
    }
    Err(Error::PrecisionInsufficient {
        relative_bound: last,
    })
}

/// Exact `E[K_n]`, rounded to double.
pub fn expected_blocks(law: &SplitLaw, n: usize, precision_bits: Option<u32>) -> Result<f64> {
    expected_blocks_certified(law, n, precision_bits, false).map(|c| c.value)
}

pub fn expected_blocks_certified(
    law: &SplitLaw,
    n: usize,
    precision_bits: Option<u32>,
    allow_large: bool,
) -> Result<Certified> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    check_size(n, allow_large)?;
    certified_eval(law, n, precision_bits, |s| s.expected_blocks(n))
}

/// Exact `E[K_{nr}]`, rounded to double.
pub fn expected_count_r(law: &SplitLaw, n: usize, r: usize, precision_bits: Option<u32>) -> Result<f64> {
    expected_count_r_certified(law, n, r, precision_bits, false).map(|c| c.value)
}

pub fn expected_count_r_certified(
    law: &SplitLaw,
    n: usize,
    r: usize,
    precision_bits: Option<u32>,
    allow_large: bool,
) -> Result<Certified> {
    if r == 0 || r > n {
        return Err(Error::InvalidParameter(format!("need 1 <= r <= n, got r = {r}, n = {n}")));
    }
    check_size(n, allow_large)?;
    certified_eval(law, n, precision_bits, |s| s.expected_count_r(n, r))
}

/// Model families with a closed-form one-colour probability.
#[derive(Clone, Debug, PartialEq)]
pub enum SameColorModel {
    /// Tripartite `Dirichlet(gamma, r - gamma, gamma)` with integer `r`.
    TripartiteR { r: u32, gamma: f64 },
    EwensPitman { alpha: f64, theta: f64 },
    General(SplitLaw),
}

/// Probability that `n` balls all receive the same colour.
pub fn p_same_color(model: &SameColorModel, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    match model {
        &SameColorModel::TripartiteR { r, gamma } => {
            let r = f64::from(r);
            if !(gamma > 0.0 && gamma < r) {
                return Err(Error::InvalidParameter(format!("need 0 < gamma < r, got gamma = {gamma}")));
            }
            // (r - g)_n / ((r + g)_n - 2 (g)_n), both terms divided by (r - g)_n
            let (mut wide, mut narrow) = (1.0, 1.0);
            for i in 0..n {
                let i = i as f64;
                wide *= (r + gamma + i) / (r - gamma + i);
                narrow *= (gamma + i) / (r - gamma + i);
            }
            Ok(1.0 / (wide - 2.0 * narrow))
        }
        &SameColorModel::EwensPitman { alpha, theta } => {
            crate::ewens_pitman::check_parameters(alpha, theta)?;
            Ok(crate::ewens_pitman::p_one_block(alpha, theta, n))
        }
        SameColorModel::General(law) => {
            let solution = solve_malthusian(law)?;
            p_of_alpha_with(law, &solution, n as f64)
        }
    }
}

/// One row of the comparison between exact means and the power-law asymptote.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticRow {
    pub n: usize,
    pub expected_blocks: f64,
    /// `E[K_n] / n^alpha*`.
    pub ratio: f64,
    /// `Gamma(-alpha*) phi(alpha*) / psi'(alpha*)`.
    pub limit_constant: f64,
}

impl AsymptoticRow {
    pub fn relative_deviation(&self) -> f64 {
        (self.ratio / self.limit_constant - 1.0).abs()
    }
}

pub fn asymptotic_ratio_table(law: &SplitLaw, n_values: &[usize]) -> Result<Vec<AsymptoticRow>> {
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n values must be strictly ascending".into()));
    }
    let solution = solve_malthusian(law)?;
    asymptotic_rows(law, &solution, n_values)
}

fn asymptotic_rows(law: &SplitLaw, solution: &MalthusianSolution, n_values: &[usize]) -> Result<Vec<AsymptoticRow>> {
    n_values
        .par_iter()
        .map(|&n| {
            let value = expected_blocks(law, n, None)?;
            Ok(AsymptoticRow {
                n,
                expected_blocks: value,
                ratio: value / (n as f64).powf(solution.alpha_star),
                limit_constant: solution.c_blocks,
            })
        })
        .collect()
}
