//! Ewens-Pitman `(alpha, theta)` partitions: the exact partition probability
//! function, a stick-breaking sampler, and the size-biased rearrangement of
//! the `(alpha, alpha/d)` multi-split paintbox.

use std::collections::HashMap;
use std::ops::{Add, Mul};

use num_traits::One;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::branching::{replicates, sample_partition_keyed, OccupancyVector};
use crate::error::{Error, Result};
use crate::exact_counts::{p_same_color, SameColorModel};
use crate::mellin::{p_of_alpha_with, solve_malthusian};
use crate::moments::enumerate_partitions;
use crate::rng::StreamKey;
use crate::split_laws::{sample_dirichlet, SplitLaw, UNIT_SUM_TOL};
use crate::verify::{chi_squared, ChiSquared};

/// Number of sticks generated explicitly before the remaining balls are
/// seated by the sequential (restaurant) rule.
pub const MAX_STICKS: usize = 10_000;

pub fn check_parameters(alpha: f64, theta: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) && theta > -alpha && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "need 0 <= alpha < 1 and theta > -alpha, got ({alpha}, {theta})"
        )))
    }
}

/// `(a)_k = a (a + 1) ... (a + k - 1)` in any ring.
pub fn rising_factorial<T>(a: T, k: usize) -> T
where
    T: Clone + One + Add<Output = T> + Mul<Output = T>,
{
    let mut acc = T::one();
    let mut term = a;
    for _ in 0..k {
        acc = acc * term.clone();
        term = term + T::one();
    }
    acc
}

/// `p_{alpha,theta}(n) = (1 - alpha)_{n-1} / (1 + theta)_{n-1}`.
pub fn p_one_block(alpha: f64, theta: f64, n: usize) -> f64 {
    (0..n.saturating_sub(1))
        .map(|i| (1.0 - alpha + i as f64) / (1.0 + theta + i as f64))
        .product()
}

/// Probability of an occupancy vector under Ewens-Pitman `(alpha, theta)`.
pub fn eppf_probability(alpha: f64, theta: f64, occupancy: &OccupancyVector) -> Result<f64> {
    check_parameters(alpha, theta)?;
    if !occupancy.is_consistent() {
        return Err(Error::InvalidParameter("occupancy counts do not sum to n".into()));
    }
    let n = occupancy.n;
    let blocks = occupancy.blocks() as usize;
    // theta (theta + alpha) ... / (theta)_n with the leading theta cancelled
    let mut log_p = ln_gamma(n as f64 + 1.0);
    log_p += (1..blocks).map(|i| (theta + i as f64 * alpha).ln()).sum::<f64>();
    log_p -= (1..n).map(|i| (theta + i as f64).ln()).sum::<f64>();
    for (i, &k) in occupancy.counts.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let size = i + 1;
        let weight: f64 = (1..size).map(|j| (j as f64 - alpha).ln()).sum::<f64>() - ln_gamma(size as f64 + 1.0);
        log_p += k as f64 * weight - ln_gamma(k as f64 + 1.0);
    }
    Ok(log_p.exp())
}

/// All occupancy vectors of `n` balls.
pub fn enumerate_occupancies(n: usize) -> Vec<OccupancyVector> {
    enumerate_partitions(n)
        .into_iter()
        .map(|lambda| OccupancyVector::from_block_sizes(n, lambda.parts().iter().map(|&p| p as usize)))
        .collect()
}

/// Samples the partition of `n` balls from the `(alpha, theta)` stick-breaking
/// paintbox `P_j = W_1 ... W_{j-1} (1 - W_j)`, `W_j ~ beta(theta + j alpha, 1 - alpha)`.
/// Sticks are generated only as far as the balls reach, up to [`MAX_STICKS`].
/// The mass beyond stick `J` is itself a scaled `(alpha, theta + J alpha)`
/// paintbox, so balls landing there are partitioned by the restaurant rule.
pub fn sample_pd_paintbox_partition(alpha: f64, theta: f64, n: usize, seed: u64) -> Result<OccupancyVector> {
    sample_pd_paintbox_partition_keyed(alpha, theta, n, StreamKey::from_seed(seed))
}

pub fn sample_pd_paintbox_partition_keyed(
    alpha: f64,
    theta: f64,
    n: usize,
    key: StreamKey,
) -> Result<OccupancyVector> {
    check_parameters(alpha, theta)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut rng = key.rng();
    let mut cumulative: Vec<f64> = Vec::new();
    let mut remaining = 1.0f64;
    let mut tally: Vec<usize> = Vec::new();
    let mut beyond = 0usize;
    for _ in 0..n {
        let u: f64 = rng.random();
        while cumulative.last().is_none_or(|&c| c <= u) && cumulative.len() < MAX_STICKS {
            let j = cumulative.len() as f64 + 1.0;
            let w = Beta::new(theta + j * alpha, 1.0 - alpha)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                .sample(&mut rng);
            remaining *= w;
            // 1 - W_1 ... W_j rather than a running sum, which can stall below u
            cumulative.push(1.0 - remaining);
            tally.push(0);
        }
        let j = cumulative.partition_point(|&c| c <= u);
        match tally.get_mut(j) {
            Some(t) => *t += 1,
            None => beyond += 1,
        }
    }
    let shifted = theta + cumulative.len() as f64 * alpha;
    let tail = restaurant_tables(alpha, shifted, beyond, &mut rng);
    Ok(OccupancyVector::from_block_sizes(
        n,
        tally.into_iter().chain(tail).filter(|&c| c > 0),
    ))
}

/// Table sizes after seating `n` customers: with `i` seated at `k` tables, the
/// next joins table `j` with probability `(n_j - alpha)/(i + theta)` and opens a
/// new one with probability `(theta + k alpha)/(i + theta)`.
fn restaurant_tables<R: Rng + ?Sized>(alpha: f64, theta: f64, n: usize, rng: &mut R) -> Vec<usize> {
    let mut tables: Vec<usize> = Vec::new();
    for i in 0..n {
        let u = rng.random::<f64>() * (i as f64 + theta);
        let mut acc = 0.0;
        let mut seat = None;
        for (j, &size) in tables.iter().enumerate() {
            acc += size as f64 - alpha;
            if u < acc {
                seat = Some(j);
                break;
            }
        }
        match seat {
            Some(j) => tables[j] += 1,
            None => tables.push(1),
        }
    }
    tables
}

/// Result of one application of the size-biased replacement map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QMapOutcome {
    /// `(k + 1) d + 1` elements summing to one.
    pub collection: Vec<f64>,
    /// Size of the removed element `YZ` before rescaling.
    pub discarded: f64,
}

/// Maps a collection of `k d + 1` sizes with unit sum to one of `(k + 1) d + 1`:
/// pick `Z` size-biased, replace it by `(YZ, X_1 Z, ..., X_{d+1} Z)` with
/// `(Y, X) ~ Dirichlet(1 - alpha, alpha/d, ..., alpha/d)`, drop `YZ` and rescale.
pub fn q_mapping(collection: &[f64], alpha: f64, d: usize, seed: u64) -> Result<QMapOutcome> {
    q_mapping_with_rng(collection, alpha, d, &mut StreamKey::from_seed(seed).rng())
}

pub fn q_mapping_with_rng<R: Rng + ?Sized>(
    collection: &[f64],
    alpha: f64,
    d: usize,
    rng: &mut R,
) -> Result<QMapOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let len = collection.len();
    if d == 0 || len < d + 1 || !(len - 1).is_multiple_of(d) {
        return Err(Error::BadCardinality { len, d });
    }
    let sum: f64 = collection.iter().sum();
    if (sum - 1.0).abs() > UNIT_SUM_TOL {
        return Err(Error::MassLeak { sum });
    }

    let chosen = size_biased_index(collection, rng);
    let z = collection[chosen];
    let mut shapes = vec![alpha / d as f64; d + 2];
    shapes[0] = 1.0 - alpha;
    let split = sample_dirichlet(&shapes, rng);
    let discarded = split[0] * z;

    let mut out = Vec::with_capacity(len + d);
    for (i, &b) in collection.iter().enumerate() {
        out.push(if i == chosen { split[1] * z } else { b });
    }
    out.extend(split[2..].iter().map(|&x| x * z));
    // the kept mass is 1 - YZ; summing it avoids cancellation when YZ is near 1
    let scale: f64 = out.iter().sum();
    for v in &mut out {
        *v /= scale;
    }
    Ok(QMapOutcome {
        collection: out,
        discarded,
    })
}

fn size_biased_index<R: Rng + ?Sized>(sizes: &[f64], rng: &mut R) -> usize {
    let total: f64 = sizes.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &s) in sizes.iter().enumerate() {
        acc += s;
        if u < acc {
            return i;
        }
    }
    sizes.len() - 1
}

/// Relative sizes of the first `k_max` solids of the `(alpha, alpha/d)`
/// multi-split process arranged by size-biased picks of crumbs: the `k`-th
/// entry is the `k`-th solid divided by the crumb mass left before it was
/// produced. These are the `1 - W_k` of a stick-breaking representation.
pub fn arranged_solid_fractions(alpha: f64, d: usize, k_max: usize, key: StreamKey) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) || d == 0 {
        return Err(Error::InvalidParameter(format!("need 0 < alpha < 1 and d >= 1, got ({alpha}, {d})")));
    }
    let mut rng = key.rng();
    let mut shapes = vec![alpha / d as f64; d + 1];
    shapes.push(1.0 - alpha);

    let mut crumbs: Vec<f64> = vec![1.0];
    let mut fractions = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        let total: f64 = crumbs.iter().sum();
        let pick = size_biased_index(&crumbs, &mut rng);
        let parent = crumbs.swap_remove(pick);
        let split = sample_dirichlet(&shapes, &mut rng);
        fractions.push(parent * split[d + 1] / total);
        crumbs.extend(split[..=d].iter().map(|&x| parent * x));
    }
    Ok(fractions)
}

/// Chi-squared comparison of the `(alpha, alpha/d)` multi-split partition
/// with its Ewens-Pitman counterpart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// `|p(m) - p_{alpha,alpha/d}(m)|` for `m = 1..=12`.
    pub p_n_gaps: Vec<f64>,
    /// Same samples tested against the wrong `theta = alpha`.
    pub control: ChiSquared,
}

pub fn equivalence_suite(alpha: f64, d: usize, n: usize, reps: usize, seed: u64) -> Result<EquivalenceReport> {
    if n == 0 || n > 8 {
        return Err(Error::InvalidParameter(format!("exact enumeration needs 1 <= n <= 8, got {n}")));
    }
    let law = SplitLaw::multi_ewens_pitman(alpha, d)?;
    let theta = alpha / d as f64;

    let solution = solve_malthusian(&law)?;
    let p_n_gaps = (1..=12)
        .map(|m| Ok((p_of_alpha_with(&law, &solution, m as f64)? - p_one_block(alpha, theta, m)).abs()))
        .collect::<Result<Vec<f64>>>()?;

    let samples = replicates(reps, StreamKey::from_seed(seed), |k| sample_partition_keyed(&law, n, k));
    let mut observed: HashMap<OccupancyVector, u64> = HashMap::new();
    for occ in samples {
        *observed.entry(occ?).or_default() += 1;
    }
    let cells = enumerate_occupancies(n);
    let expected_for = |t: f64| -> Result<HashMap<OccupancyVector, f64>> {
        cells
            .iter()
            .map(|o| Ok((o.clone(), eppf_probability(alpha, t, o)?)))
            .collect()
    };
    let test = chi_squared(&observed, &expected_for(theta)?, reps as u64)?;
    let control = chi_squared(&observed, &expected_for(alpha)?, reps as u64)?;
    Ok(EquivalenceReport {
        chi2: test.chi2,
        dof: test.dof,
        p_value: test.p_value,
        p_n_gaps,
        control,
    })
}

/// Outcome of fitting an Ewens-Pitman pair to a tripartite model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoncoincidenceReport {
    pub alpha_fit: f64,
    pub theta_fit: f64,
    /// `p(2), p(3), p(4)` of the tripartite model.
    pub p_model: [f64; 3],
    /// `|p(4) - p_{alpha_fit, theta_fit}(4)|`.
    pub residual_at_4: f64,
}

/// Fits `(alpha, theta)` to the tripartite `(gamma, r - gamma, gamma)` model
/// through `p(2)` and `p(3)` and reports the mismatch at four balls.
///
/// Matching `p(2)` fixes `theta = (1 - alpha)/p(2) - 1`; `alpha` is then
/// found by bisection on the `p(3)` equation.
pub fn noncoincidence_check(r: u32, gamma: f64) -> Result<NoncoincidenceReport> {
    if r < 2 {
        return Err(Error::InvalidParameter(format!("r must be at least 2, got {r}")));
    }
    let model = SameColorModel::TripartiteR { r, gamma };
    let p2 = p_same_color(&model, 2)?;
    let p3 = p_same_color(&model, 3)?;
    let p4 = p_same_color(&model, 4)?;

    let theta_of = |a: f64| (1.0 - a) / p2 - 1.0;
    let mismatch = |a: f64| p_one_block(a, theta_of(a), 3) - p3;

    let (mut lo, mut hi) = (0.0f64, 1.0 - 1e-12);
    let (f_lo, f_hi) = (mismatch(lo), mismatch(hi));
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::FitFailed(format!(
            "p(3) mismatch does not change sign on [0, 1): {f_lo:e}, {f_hi:e} (p2 = {p2}, p3 = {p3})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mismatch(mid).signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let alpha_fit = 0.5 * (lo + hi);
    let theta_fit = theta_of(alpha_fit);
    if check_parameters(alpha_fit, theta_fit).is_err() {
        return Err(Error::FitFailed(format!(
            "fitted pair ({alpha_fit}, {theta_fit}) is outside the two-parameter family"
        )));
    }
    Ok(NoncoincidenceReport {
        alpha_fit,
        theta_fit,
        p_model: [p2, p3, p4],
        residual_at_4: (p4 - p_one_block(alpha_fit, theta_fit, 4)).abs(),
    })
}
