//! Integer moments `a_k = E[M^k]` of the martingale limit.
//!
//! Expanding `M = sum_i X_i^alpha* M^(i)` to the `k`-th power and grouping the
//! exponents by their partition `lambda` gives
//! `a_k (1 - psi(alpha* k)) = k! sum_{lambda |- k, l > 1} m(lambda) prod a_{lambda_j} / lambda_j!`.

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mellin::psi;
use crate::split_laws::SplitLaw;

/// Largest supported moment order.
pub const MAX_ORDER: usize = 40;
/// Relative tolerance of the asserted convolution identities.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Nonincreasing positive parts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct IntegerPartition {
    parts: Vec<u32>,
}

impl IntegerPartition {
    pub fn new(parts: Vec<u32>) -> Result<Self> {
        if parts.is_empty() || parts.contains(&0) || parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidPartition(format!("{parts:?}")));
        }
        Ok(IntegerPartition { parts })
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn weight(&self) -> u32 {
        self.parts.iter().sum()
    }

    /// Number of distinct orderings of the parts.
    pub fn distinct_permutations(&self) -> f64 {
        let mut log = ln_gamma(self.len() as f64 + 1.0);
        let mut i = 0;
        while i < self.parts.len() {
            let run = self.parts[i..].iter().take_while(|&&p| p == self.parts[i]).count();
            log -= ln_gamma(run as f64 + 1.0);
            i += run;
        }
        log.exp().round()
    }
}

/// All partitions of `k` in reverse-lexicographic order.
pub fn enumerate_partitions(k: usize) -> Vec<IntegerPartition> {
    fn extend(left: u32, cap: u32, prefix: &mut Vec<u32>, out: &mut Vec<IntegerPartition>) {
        if left == 0 {
            out.push(IntegerPartition { parts: prefix.clone() });
            return;
        }
        for first in (1..=left.min(cap)).rev() {
            prefix.push(first);
            extend(left - first, first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        extend(k as u32, k as u32, &mut Vec::new(), &mut out);
    }
    out
}

/// `m(lambda)`: the expectation of `sum prod_j X_{i_j}^{alpha* lambda_j}` over
/// distinct crumbs `i_1, ..., i_l` with equal parts counted once.
pub fn m_lambda(law: &SplitLaw, lambda: &IntegerPartition, alpha_star: f64) -> Result<f64> {
    if lambda.is_empty() {
        return Err(Error::InvalidPartition("empty partition".into()));
    }
    let c = law.crumb_count();
    let l = lambda.len();
    if l > c {
        return Ok(0.0);
    }
    if let Some(shape) = law.dirichlet_shape() {
        let (g, total) = (shape.crumb_shape, shape.total());
        let exponent: f64 = lambda.weight() as f64 * alpha_star;
        let mut log = ln_gamma(total) - ln_gamma(total + exponent);
        for &p in lambda.parts() {
            log += ln_gamma(g + p as f64 * alpha_star) - ln_gamma(g);
        }
        return Ok(lambda.distinct_permutations() * binomial(c, l) * log.exp());
    }
    let crumbs = deterministic_crumbs(law);
    // every injective placement of the parts, then divide out equal-part swaps
    let mut total = 0.0;
    let mut used = vec![false; c];
    place(&crumbs, lambda.parts(), alpha_star, 1.0, &mut used, &mut total);
    let swaps = ln_gamma(l as f64 + 1.0).exp() / lambda.distinct_permutations();
    Ok(total / swaps)
}

fn deterministic_crumbs(law: &SplitLaw) -> Vec<f64> {
    match law {
        SplitLaw::DeterministicTest { crumbs, .. } => crumbs.clone(),
        SplitLaw::Refined { base, .. } => deterministic_crumbs(base),
        _ => unreachable!("Dirichlet laws are handled in closed form"),
    }
}

fn place(crumbs: &[f64], parts: &[u32], alpha: f64, acc: f64, used: &mut [bool], total: &mut f64) {
    let Some((&first, rest)) = parts.split_first() else {
        *total += acc;
        return;
    };
    for i in 0..crumbs.len() {
        if !used[i] {
            used[i] = true;
            place(crumbs, rest, alpha, acc * crumbs[i].powf(alpha * first as f64), used, total);
            used[i] = false;
        }
    }
}

fn factorial(k: usize) -> f64 {
    (2..=k).map(|i| i as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Family tag deciding which specialized identities apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MomentFamily {
    Tripartite { gamma: f64, beta: f64 },
    /// `d + 1` crumbs with `beta + d gamma = 1`, so `alpha* = d gamma`.
    MultiR1 { d: usize, gamma: f64 },
    Multi { d: usize, gamma: f64, beta: f64 },
    General,
}

impl MomentFamily {
    pub fn of(law: &SplitLaw) -> Self {
        match *law {
            SplitLaw::DirichletTripartite { gamma, beta } => MomentFamily::Tripartite { gamma, beta },
            SplitLaw::DirichletMulti { d, gamma, beta } if (beta + d as f64 * gamma - 1.0).abs() < 1e-12 => {
                MomentFamily::MultiR1 { d, gamma }
            }
            SplitLaw::DirichletMulti { d, gamma, beta } => MomentFamily::Multi { d, gamma, beta },
            _ => MomentFamily::General,
        }
    }

    fn crumb_shape(&self) -> Option<f64> {
        match *self {
            MomentFamily::Tripartite { gamma, .. }
            | MomentFamily::MultiR1 { gamma, .. }
            | MomentFamily::Multi { gamma, .. } => Some(gamma),
            MomentFamily::General => None,
        }
    }

    /// Closed form of `E[M^q]` when one is known.
    pub fn closed_form(&self, alpha_star: f64) -> Option<ClosedFormFamily> {
        match *self {
            MomentFamily::MultiR1 { d, .. } => Some(ClosedFormFamily::MultiR1 { d, alpha_star }),
            MomentFamily::Tripartite { gamma, beta } if (gamma + beta - 1.0).abs() < 1e-12 => {
                Some(ClosedFormFamily::BesselAlphaAlpha { alpha: gamma })
            }
            _ => None,
        }
    }
}

/// `a_0, ..., a_K` and, for Dirichlet families, `b_n = Gamma(n alpha* + gamma) a_n / (Gamma(gamma) n!)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentTable {
    pub alpha_star: f64,
    pub a: Vec<f64>,
    pub b: Option<Vec<f64>>,
    pub family: MomentFamily,
}

impl MomentTable {
    pub fn order(&self) -> usize {
        self.a.len() - 1
    }
}

/// Fills `a_0..a_K` by the partition recursion and asserts the specialized
/// identities that apply to the law.
pub fn moments_m(law: &SplitLaw, alpha_star: f64, k_max: usize) -> Result<MomentTable> {
    if k_max > MAX_ORDER {
        return Err(Error::InvalidParameter(format!("moment order {k_max} exceeds {MAX_ORDER}")));
    }
    if !(alpha_star > 0.0 && alpha_star < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha* must lie in (0, 1), got {alpha_star}")));
    }
    // c_k = a_k / k!
    let mut c = vec![1.0; k_max + 1];
    for k in 2..=k_max {
        let denom = 1.0 - psi(law, alpha_star * k as f64)?;
        let mut sum = 0.0;
        for lambda in enumerate_partitions(k).iter().skip(1) {
            let m = m_lambda(law, lambda, alpha_star)?;
            if m != 0.0 {
                sum += m * lambda.parts().iter().map(|&p| c[p as usize]).product::<f64>();
            }
        }
        c[k] = sum / denom;
        let a = c[k] * factorial(k);
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::NumericalBlowup { k, value: a });
        }
    }
    let a: Vec<f64> = c
        .iter()
        .enumerate()
        .map(|(k, ck)| ck * factorial(k))
        .collect();

    let family = MomentFamily::of(law);
    let b = family.crumb_shape().map(|g| b_transform(&a, alpha_star, g));
    let table = MomentTable {
        alpha_star,
        a,
        b,
        family,
    };
    if let MomentFamily::Tripartite { gamma, beta } = family {
        check_tripartite_convolution(&table, gamma, beta)?;
    }
    check_b_identity(&table)?;
    Ok(table)
}

/// `b_n = Gamma(n alpha + gamma) a_n / (Gamma(gamma) n!)`.
pub fn b_transform(a: &[f64], alpha_star: f64, gamma: f64) -> Vec<f64> {
    a.iter()
        .enumerate()
        .map(|(n, an)| {
            let nf = n as f64;
            an * (ln_gamma(nf * alpha_star + gamma) - ln_gamma(gamma)).exp() / factorial(n)
        })
        .collect()
}

/// Two-crumb form of the recursion:
/// `a_k (1 - psi(alpha* k)) = sum_{0<j<k} C(k, j) E[X_1^{alpha* j} X_3^{alpha* (k-j)}] a_j a_{k-j}`.
fn check_tripartite_convolution(table: &MomentTable, gamma: f64, beta: f64) -> Result<()> {
    let alpha = table.alpha_star;
    let total = beta + 2.0 * gamma;
    let law = SplitLaw::DirichletTripartite { gamma, beta };
    let a = &table.a;
    for k in 2..a.len() {
        let kf = k as f64;
        let mut rhs = 0.0;
        for j in 1..k {
            let jf = j as f64;
            let joint = (ln_gamma(total) - ln_gamma(total + alpha * kf) + ln_gamma(gamma + alpha * jf)
                + ln_gamma(gamma + alpha * (kf - jf))
                - 2.0 * ln_gamma(gamma))
            .exp();
            rhs += binomial(k, j) * joint * a[j] * a[k - j];
        }
        let lhs = a[k] * (1.0 - psi(&law, alpha * kf)?);
        if !relatively_close(lhs, rhs) {
            return Err(Error::IdentityViolated { n: k, lhs, rhs });
        }
    }
    Ok(())
}

/// Which convolution identity of the `b_n` applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BIdentity {
    /// Tripartite with integer `r = beta + gamma`:
    /// `sum_k b_k b_{n-k} = (n alpha* + gamma)_r / (gamma)_r b_n`.
    TripartiteIntegerR { r: u32 },
    /// `d + 1` crumbs with `beta + d gamma = 1`: the `(d + 1)`-fold
    /// convolution of `b` equals `(n d + 1) b_n`.
    MultiR1 { d: usize },
    NotApplicable,
}

/// Asserts the applicable identity for `n = 0..=K`.
pub fn check_b_identity(table: &MomentTable) -> Result<BIdentity> {
    let Some(b) = &table.b else {
        return Ok(BIdentity::NotApplicable);
    };
    let alpha = table.alpha_star;
    match table.family {
        MomentFamily::Tripartite { gamma, beta } => {
            let r = beta + gamma;
            if (r - r.round()).abs() > 1e-12 || r.round() < 1.0 {
                return Ok(BIdentity::NotApplicable);
            }
            let r = r.round() as u32;
            let conv = convolve(b, b);
            for n in 0..b.len() {
                let factor: f64 = (0..r)
                    .map(|i| (n as f64 * alpha + gamma + i as f64) / (gamma + i as f64))
                    .product();
                check_close(n, conv[n], factor * b[n])?;
            }
            Ok(BIdentity::TripartiteIntegerR { r })
        }
        MomentFamily::MultiR1 { d, .. } => {
            let mut conv = b.clone();
            for _ in 0..d {
                conv = convolve(&conv, b);
            }
            for n in 0..b.len() {
                check_close(n, conv[n], (n * d + 1) as f64 * b[n])?;
            }
            Ok(BIdentity::MultiR1 { d })
        }
        _ => Ok(BIdentity::NotApplicable),
    }
}

fn convolve(x: &[f64], y: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| (0..=n).map(|k| x[k] * y[n - k]).sum())
        .collect()
}

fn relatively_close(lhs: f64, rhs: f64) -> bool {
    (lhs - rhs).abs() <= IDENTITY_TOL * lhs.abs().max(rhs.abs())
}

fn check_close(n: usize, lhs: f64, rhs: f64) -> Result<()> {
    if relatively_close(lhs, rhs) {
        Ok(())
    } else {
        Err(Error::IdentityViolated { n, lhs, rhs })
    }
}

/// Families with a known closed form for `E[M^q]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClosedFormFamily {
    /// Dirichlet `(alpha, 1 - alpha, alpha)` split, `alpha* = alpha`.
    BesselAlphaAlpha { alpha: f64 },
    /// `d + 1` crumbs of shape `alpha*/d` and a solid of shape `1 - alpha*`.
    MultiR1 { d: usize, alpha_star: f64 },
}

impl ClosedFormFamily {
    /// The split law the closed form belongs to.
    pub fn law(&self) -> Result<SplitLaw> {
        match *self {
            ClosedFormFamily::BesselAlphaAlpha { alpha } => SplitLaw::tripartite(alpha, 1.0 - alpha),
            ClosedFormFamily::MultiR1 { d, alpha_star } => SplitLaw::multi_ewens_pitman(alpha_star, d),
        }
    }
}

/// `E[M^q]` for real `q` in the family's domain.
pub fn closed_form_moments(family: &ClosedFormFamily, q: f64) -> Result<f64> {
    match *family {
        ClosedFormFamily::BesselAlphaAlpha { alpha } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            if q <= -1.0 {
                return Err(Error::DomainError { alpha: q, abscissa: -1.0 });
            }
            let ratio = ln_gamma(alpha) - ln_gamma(2.0 * alpha);
            Ok((ln_gamma(alpha) + ln_gamma(q + 1.0) - q * ratio - ln_gamma((q + 1.0) * alpha)).exp())
        }
        ClosedFormFamily::MultiR1 { d, alpha_star } => {
            if d == 0 || !(alpha_star > 0.0 && alpha_star < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "need d >= 1 and 0 < alpha* < 1, got ({d}, {alpha_star})"
                )));
            }
            let df = d as f64;
            if q <= -1.0 / df {
                return Err(Error::DomainError { alpha: q, abscissa: -1.0 / df });
            }
            let a = alpha_star;
            let log = q * df.ln() + q * ln_gamma(a + a / df) + ln_gamma(1.0 / df + q)
                - (q - 1.0) * ln_gamma(a / df)
                - ln_gamma(q * a + a / df)
                - ln_gamma(1.0 / df);
            Ok(log.exp())
        }
    }
}

/// Signs of the Hankel determinants `det(a_{i+j})_{i,j<m}` for
/// `m = 1..=floor(K/2) + 1`, evaluated exactly on the given floating-point values.
pub fn hankel_signs(a: &[f64]) -> Vec<i8> {
    let (ints, _) = common_scale(a);
    let orders = a.len().div_ceil(2);
    (1..=orders)
        .map(|m| {
            let matrix: Vec<Vec<BigInt>> = (0..m).map(|i| ints[i..i + m].to_vec()).collect();
            let det = bareiss_determinant(matrix);
            if det.is_zero() {
                0
            } else if det.is_positive() {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Whether all Hankel determinants are nonnegative.
pub fn hankel_nonnegative(a: &[f64]) -> bool {
    hankel_signs(a).iter().all(|&s| s >= 0)
}

/// Integers `x_i 2^-e` for a shared exponent `e`.
fn common_scale(xs: &[f64]) -> (Vec<BigInt>, i64) {
    let parts: Vec<(i64, i64)> = xs.iter().map(|&x| decode(x)).collect();
    let e = parts.iter().filter(|p| p.0 != 0).map(|p| p.1).min().unwrap_or(0);
    let ints = parts
        .iter()
        .map(|&(m, ex)| if m == 0 { BigInt::zero() } else { BigInt::from(m) << (ex - e) as usize })
        .collect();
    (ints, e)
}

/// `x = m 2^e` exactly.
fn decode(x: f64) -> (i64, i64) {
    assert!(x.is_finite(), "finite moment");
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 0 { 1 } else { -1 };
    let raw = ((bits >> 52) & 0x7ff) as i64;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    if raw == 0 {
        (sign * frac, -1074)
    } else {
        (sign * (frac | 1 << 52), raw - 1075)
    }
}

fn bareiss_determinant(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let n = m.len();
    let mut sign = 1;
    let mut prev = BigInt::from(1);
    for k in 0..n {
        if m[k][k].is_zero() {
            match (k + 1..n).find(|&i| !m[i][k].is_zero()) {
                Some(i) => {
                    m.swap(i, k);
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (&m[i][j] * &m[k][k] - &m[i][k] * &m[k][j]) / &prev;
            }
        }
        prev = m[k][k].clone();
    }
    if sign < 0 {
        -prev
    } else {
        prev
    }
}
