//! Simulation of the crumb/solid division process.
//!
//! Three views of one process:
//! - [`generate_paintbox`] expands every crumb above a size threshold and
//!   collects the solids, which are then exact above the threshold;
//! - [`sample_partition`] samples the partition of `n` balls exactly by
//!   refining only the crumbs that hold balls;
//! - [`simulate_martingale`] follows the generation sums `M_k` of crumb
//!   sizes raised to `alpha*`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::split_laws::{sample_split, validate_supercritical, SplitLaw};

/// Recursion guard of the lazy partition sampler.
pub const MAX_DEPTH: usize = 1_000_000;

/// Solids of one realization, complete down to `threshold_delta`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PaintboxSample {
    /// Solid sizes, descending.
    pub solids: Vec<f64>,
    /// Total size of crumbs left unexpanded.
    pub residual_crumb_mass: f64,
    pub residual_crumb_count: usize,
    pub threshold_delta: f64,
    /// Number of crumb generations that were split.
    pub generations_explored: usize,
    pub seed: u64,
    /// False when the generation cap stopped expansion of crumbs above the threshold.
    pub complete: bool,
    max_gen: usize,
}

impl PaintboxSample {
    pub fn total_mass(&self) -> f64 {
        self.solids.iter().sum::<f64>() + self.residual_crumb_mass
    }

    /// Fails with [`Error::GenerationCap`] if the sample is incomplete.
    pub fn require_complete(self) -> Result<Self> {
        if self.complete {
            Ok(self)
        } else {
            Err(Error::GenerationCap {
                max_gen: self.max_gen,
            })
        }
    }
}

/// Expands crumbs breadth-first. A crumb is split when its size exceeds
/// `delta`; smaller ones are frozen into the residual, so every solid of size
/// at least `delta` is present.
pub fn generate_paintbox(law: &SplitLaw, delta: f64, max_gen: usize, seed: u64) -> Result<PaintboxSample> {
    let mut sample = generate_paintbox_keyed(law, delta, max_gen, StreamKey::from_seed(seed))?;
    sample.seed = seed;
    Ok(sample)
}

pub fn generate_paintbox_keyed(
    law: &SplitLaw,
    delta: f64,
    max_gen: usize,
    key: StreamKey,
) -> Result<PaintboxSample> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    validate_supercritical(law)?;

    let mut solids = Vec::new();
    let mut residual_crumb_mass = 0.0;
    let mut residual_crumb_count = 0usize;
    let mut complete = true;
    let mut generation: Vec<(f64, StreamKey)> = vec![(1.0, key)];
    let mut generations_explored = 0;

    while !generation.is_empty() {
        if generations_explored == max_gen {
            complete = false;
            residual_crumb_count += generation.len();
            residual_crumb_mass += generation.iter().map(|&(s, _)| s).sum::<f64>();
            break;
        }
        let mut next = Vec::new();
        for (size, node) in generation {
            let outcome = sample_split(law, &mut node.rng());
            solids.extend(outcome.solids.iter().map(|&(_, y)| size * y));
            for (label, x) in outcome.crumbs {
                let child = size * x;
                if child > delta {
                    next.push((child, node.child(label)));
                } else {
                    residual_crumb_mass += child;
                    residual_crumb_count += 1;
                }
            }
        }
        generations_explored += 1;
        generation = next;
    }

    solids.sort_by(|a, b| b.total_cmp(a));
    Ok(PaintboxSample {
        solids,
        residual_crumb_mass,
        residual_crumb_count,
        threshold_delta: delta,
        generations_explored,
        seed: 0,
        complete,
        max_gen,
    })
}

/// `N_x`, the number of solids of size at least `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct NxCount {
    pub count: usize,
    /// False when `x` is below the threshold, making `count` a lower bound.
    pub exact: bool,
}

pub fn count_nx(pb: &PaintboxSample, x: f64) -> NxCount {
    // solids are sorted descending
    let count = pb.solids.partition_point(|&s| s >= x);
    NxCount {
        count,
        exact: x >= pb.threshold_delta && pb.complete,
    }
}

/// Block counts `(K_{n1}, ..., K_{nn})` of a partition of `n` balls.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct OccupancyVector {
    pub n: usize,
    /// `counts[r - 1]` is the number of blocks of size `r`.
    pub counts: Vec<u64>,
}

impl OccupancyVector {
    pub fn from_block_sizes(n: usize, sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = vec![0u64; n];
        for s in sizes {
            counts[s - 1] += 1;
        }
        OccupancyVector { n, counts }
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let n = counts.len();
        let v = OccupancyVector { n, counts };
        if n == 0 || !v.is_consistent() {
            return Err(Error::InvalidParameter("occupancy counts do not sum to n balls".into()));
        }
        Ok(v)
    }

    /// `K_n`.
    pub fn blocks(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `K_{nr}`, zero outside `1..=n`.
    pub fn count(&self, r: usize) -> u64 {
        if r == 0 {
            0
        } else {
            self.counts.get(r - 1).copied().unwrap_or(0)
        }
    }

    /// `sum_r r K_{nr} = n`.
    pub fn is_consistent(&self) -> bool {
        self.counts.len() == self.n
            && self
                .counts
                .iter()
                .enumerate()
                .map(|(i, &k)| (i as u64 + 1) * k)
                .sum::<u64>()
                == self.n as u64
    }
}

/// Samples the exchangeable partition of `n` balls exactly.
///
/// Balls are dropped multinomially on the crumbs and solids of one split;
/// the balls on each solid form a block, and each crumb holding at least two
/// balls is refined recursively on its own stream. A crumb holding one ball
/// always yields a singleton block, so it is closed immediately.
pub fn sample_partition(law: &SplitLaw, n: usize, seed: u64) -> Result<OccupancyVector> {
    sample_partition_keyed(law, n, StreamKey::from_seed(seed))
}

pub fn sample_partition_keyed(law: &SplitLaw, n: usize, key: StreamKey) -> Result<OccupancyVector> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut blocks = Vec::new();
    let mut stack = vec![(key, n as u64, 0usize)];
    let mut probs = Vec::new();
    let mut alloc = Vec::new();
    while let Some((node, balls, depth)) = stack.pop() {
        if balls == 1 {
            blocks.push(1);
            continue;
        }
        if depth >= MAX_DEPTH {
            return Err(Error::DepthExceeded { cap: MAX_DEPTH });
        }
        let mut rng = node.rng();
        let outcome = sample_split(law, &mut rng);
        probs.clear();
        probs.extend(outcome.crumbs.iter().chain(&outcome.solids).map(|&(_, s)| s));
        multinomial(balls, &probs, &mut rng, &mut alloc);
        let (on_crumbs, on_solids) = alloc.split_at(outcome.crumbs.len());
        blocks.extend(on_solids.iter().filter(|&&c| c > 0).map(|&c| c as usize));
        for (&(label, _), &c) in outcome.crumbs.iter().zip(on_crumbs) {
            if c > 0 {
                stack.push((node.child(label), c, depth + 1));
            }
        }
    }
    Ok(OccupancyVector::from_block_sizes(n, blocks))
}

/// Sequential-binomial multinomial draw into `out`.
fn multinomial<R: Rng + ?Sized>(trials: u64, probs: &[f64], rng: &mut R, out: &mut Vec<u64>) {
    out.clear();
    let mut left = trials;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            out.push(0);
            continue;
        }
        if i + 1 == probs.len() {
            out.push(left);
            left = 0;
            continue;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        out.push(c);
        left -= c;
        mass -= p;
    }
}

/// Generation sums `M_0, ..., M_{k_max}` of `xi^alpha*` over crumbs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleTrace {
    pub values: Vec<f64>,
    /// `(crumbs frozen) * delta^alpha*`, a crude cap on the fluctuation the
    /// frozen crumbs' descendants would have added.
    pub truncation_bound: f64,
    pub alpha_star: f64,
    pub pruned: usize,
}

impl MartingaleTrace {
    /// `M_{k_max}`, the estimate of the terminal value `M`.
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("M_0 is always present")
    }
}

/// Default size threshold for martingale and fixed-point simulations.
pub const DEFAULT_MARTINGALE_DELTA: f64 = 1e-5;
/// Default generation horizon for the same.
pub const DEFAULT_KMAX: usize = 60;

/// Follows the intrinsic martingale. Crumbs of size at most `delta` stop
/// splitting; their power `xi^alpha*` is kept in a frozen component carried
/// through later generations, which leaves `E[M_k] = 1` intact.
pub fn simulate_martingale(
    law: &SplitLaw,
    alpha_star: f64,
    k_max: usize,
    delta: f64,
    seed: u64,
) -> Result<MartingaleTrace> {
    simulate_martingale_keyed(law, alpha_star, k_max, delta, StreamKey::from_seed(seed))
}

pub fn simulate_martingale_keyed(
    law: &SplitLaw,
    alpha_star: f64,
    k_max: usize,
    delta: f64,
    key: StreamKey,
) -> Result<MartingaleTrace> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(alpha_star > 0.0 && alpha_star < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha* must lie in (0, 1), got {alpha_star}")));
    }
    let mut values = Vec::with_capacity(k_max + 1);
    values.push(1.0);
    let mut frozen = 0.0;
    let mut pruned = 0usize;
    let mut live: Vec<(f64, StreamKey)> = vec![(1.0, key)];
    for _ in 0..k_max {
        if live.is_empty() {
            values.push(frozen);
            continue;
        }
        let mut next = Vec::with_capacity(live.len() * 2);
        for (size, node) in &live {
            let outcome = sample_split(law, &mut node.rng());
            for &(label, x) in &outcome.crumbs {
                let child = size * x;
                if child > delta {
                    next.push((child, node.child(label)));
                } else {
                    frozen += child.powf(alpha_star);
                    pruned += 1;
                }
            }
        }
        live = next;
        values.push(frozen + live.iter().map(|&(s, _)| s.powf(alpha_star)).sum::<f64>());
    }
    Ok(MartingaleTrace {
        values,
        truncation_bound: pruned as f64 * delta.powf(alpha_star),
        alpha_star,
        pruned,
    })
}

/// Two sides of the fixed-point equation `M = sum_i X_i^alpha* M^(i)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixedPointReport {
    /// Empirical `E[M^q]`, `q = 1, 2, 3`, from direct simulation.
    pub lhs_moments: Vec<f64>,
    /// Same for `sum_i X_i^alpha* M^(i)` with fresh splits and independent copies.
    pub rhs_moments: Vec<f64>,
    /// Standardized differences of the two sides.
    pub moment_gaps: Vec<f64>,
}

/// Draws `samples` terminal values for each side of the fixed-point
/// equation and compares their first three moments. Every `M^(i)` on the
/// right is an independent simulation, used once.
pub fn empirical_fixed_point_check(
    law: &SplitLaw,
    alpha_star: f64,
    samples: usize,
    seed: u64,
) -> Result<FixedPointReport> {
    if samples < 1000 {
        return Err(Error::InvalidParameter("fixed-point check needs at least 1000 samples".into()));
    }
    let root = StreamKey::from_seed(seed);
    let lhs_key = root.child(0);
    let rhs_key = root.child(1);
    let copies_key = root.child(2);
    let crumbs = law.crumb_count();

    let terminal = |key: StreamKey| {
        simulate_martingale_keyed(law, alpha_star, DEFAULT_KMAX, DEFAULT_MARTINGALE_DELTA, key)
            .map(|t| t.terminal())
    };
    let lhs: Vec<f64> = replicates(samples, lhs_key, terminal)
        .into_iter()
        .collect::<Result<_>>()?;
    let copies: Vec<f64> = replicates(samples * crumbs, copies_key, terminal)
        .into_iter()
        .collect::<Result<_>>()?;
    let rhs: Vec<f64> = (0..samples)
        .map(|j| {
            let outcome = sample_split(law, &mut rhs_key.child(j as u64).rng());
            outcome
                .crumbs
                .iter()
                .enumerate()
                .map(|(i, &(_, x))| x.powf(alpha_star) * copies[j * crumbs + i])
                .sum()
        })
        .collect();

    let mut lhs_moments = Vec::new();
    let mut rhs_moments = Vec::new();
    let mut moment_gaps = Vec::new();
    for q in 1..=3 {
        let (ml, sl) = power_mean_se(&lhs, q);
        let (mr, sr) = power_mean_se(&rhs, q);
        let diff = ml - mr;
        let se = (sl * sl + sr * sr).sqrt();
        moment_gaps.push(if diff == 0.0 { 0.0 } else { diff / se });
        lhs_moments.push(ml);
        rhs_moments.push(mr);
    }
    Ok(FixedPointReport {
        lhs_moments,
        rhs_moments,
        moment_gaps,
    })
}

fn power_mean_se(xs: &[f64], q: i32) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| x.powi(q)).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x.powi(q) - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `f` on `reps` child streams of `key` in parallel, keeping rep order.
pub fn replicates<T, F>(reps: usize, key: StreamKey, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(StreamKey) -> T + Sync,
{
    (0..reps as u64)
        .into_par_iter()
        .map(|i| f(key.child(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mellin::solve_malthusian;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn quarter_law() -> SplitLaw {
        SplitLaw::deterministic(vec![0.25, 0.25], vec![0.5]).unwrap()
    }

    #[test]
    fn deterministic_paintbox_tally() {
        let delta = 0.25f64.powi(3);
        let pb = generate_paintbox(&quarter_law(), delta, 100, 1).unwrap();
        let mut expected = Vec::new();
        for g in 0..=2 {
            for _ in 0..1 << g {
                expected.push(0.25f64.powi(g) * 0.5);
            }
        }
        assert_eq!(pb.solids, expected);
        assert_eq!(pb.residual_crumb_mass, 0.125);
        assert_eq!(pb.residual_crumb_count, 8);
        assert_eq!(pb.generations_explored, 3);
        assert!(pb.complete);

        for g in 0..=2 {
            let x = 0.25f64.powi(g) * 0.5;
            let nx = count_nx(&pb, x);
            assert_eq!(nx.count, (1 << (g + 1)) - 1);
            assert!(nx.exact);
        }
        assert_eq!(count_nx(&pb, 1.0).count, 0);
        assert!(!count_nx(&pb, delta / 2.0).exact);
    }

    #[test]
    fn coarse_threshold_and_mass() {
        let law = SplitLaw::tripartite(1.0, 1.0).unwrap();
        let pb = generate_paintbox(&law, 0.5, 100, 9).unwrap();
        assert!((pb.total_mass() - 1.0).abs() < 1e-9);
        assert!(pb.generations_explored >= 1);
        let fine = generate_paintbox(&law, 1e-4, 1000, 9).unwrap();
        assert!((fine.total_mass() - 1.0).abs() < 1e-9);
        assert_eq!(count_nx(&fine, 1e-4).count, fine.solids.iter().filter(|&&s| s >= 1e-4).count());
    }

    #[test]
    fn generation_cap_flags_incomplete() {
        let law = SplitLaw::tripartite(1.0, 1.0).unwrap();
        let pb = generate_paintbox(&law, 1e-6, 2, 3).unwrap();
        assert!(!pb.complete);
        assert!((pb.total_mass() - 1.0).abs() < 1e-9);
        assert!(matches!(pb.require_complete(), Err(Error::GenerationCap { max_gen: 2 })));
    }

    #[test]
    fn single_ball() {
        for seed in 0..20 {
            let occ = sample_partition(&SplitLaw::tripartite(0.4, 2.0).unwrap(), 1, seed).unwrap();
            assert_eq!(occ.counts, vec![1]);
            assert_eq!(occ.blocks(), 1);
        }
    }

    #[test]
    fn reproducible_outputs() {
        let law = SplitLaw::multi(2, 0.25, 0.5).unwrap();
        assert_eq!(
            sample_partition(&law, 300, 17).unwrap(),
            sample_partition(&law, 300, 17).unwrap()
        );
        assert_eq!(
            generate_paintbox(&law, 1e-4, 500, 5).unwrap(),
            generate_paintbox(&law, 1e-4, 500, 5).unwrap()
        );
        assert_eq!(
            simulate_martingale(&law, 0.5, 20, 1e-4, 5).unwrap(),
            simulate_martingale(&law, 0.5, 20, 1e-4, 5).unwrap()
        );
    }

    // Exact block-size law of 3 balls under the deterministic paintbox, whose
    // atoms are 2^g copies of (1/2)(1/4)^g.
    fn three_ball_law() -> [f64; 3] {
        let (mut s2, mut s3) = (0.0, 0.0);
        let mut g = 0;
        while 0.5f64.powi(g) > 1e-12 {
            let size = 0.5 * 0.25f64.powi(g);
            let copies = 2f64.powi(g);
            s2 += copies * size * size;
            s3 += copies * size * size * size;
            g += 1;
        }
        let all_same = s3;
        let pair = 3.0 * (s2 - s3);
        [all_same, pair, 1.0 - all_same - pair]
    }

    #[test]
    fn lazy_sampler_is_exact_on_deterministic_law() {
        let law = quarter_law();
        let exact = three_ball_law();
        let reps = 2_000_000;
        let key = StreamKey::from_seed(2024);
        let samples = replicates(reps, key, |k| sample_partition_keyed(&law, 3, k).unwrap());
        let mut freq = [0usize; 3];
        for occ in &samples {
            match occ.blocks() {
                1 => freq[0] += 1,
                2 => freq[1] += 1,
                _ => freq[2] += 1,
            }
        }
        let tv: f64 = 0.5
            * freq
                .iter()
                .zip(exact)
                .map(|(&f, p)| (f as f64 / reps as f64 - p).abs())
                .sum::<f64>();
        assert!(tv < 1e-3, "tv {tv} {freq:?} {exact:?}");
        for (&f, p) in freq.iter().zip(exact) {
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((f as f64 / reps as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn bessel_split_matches_ewens_pitman_at_six_balls() {
        use crate::ewens_pitman::{enumerate_occupancies, eppf_probability};
        use crate::verify::chi_squared;
        let law = SplitLaw::tripartite(0.5, 0.5).unwrap();
        let reps = 100_000;
        let samples = replicates(reps, StreamKey::from_seed(606), |k| {
            sample_partition_keyed(&law, 6, k).unwrap()
        });
        let mut observed: HashMap<OccupancyVector, u64> = HashMap::new();
        for occ in samples {
            *observed.entry(occ).or_default() += 1;
        }
        let expected: HashMap<OccupancyVector, f64> = enumerate_occupancies(6)
            .into_iter()
            .map(|o| {
                let p = eppf_probability(0.5, 0.5, &o).unwrap();
                (o, p)
            })
            .collect();
        let test = chi_squared(&observed, &expected, reps as u64).unwrap();
        assert!(test.p_value > 1e-3, "{test:?}");
    }

    #[test]
    fn martingale_examples() {
        let law = quarter_law();
        let trace = simulate_martingale(&law, 0.5, 25, 1e-5, 0).unwrap();
        assert_eq!(trace.values.len(), 26);
        assert!(trace.values.iter().all(|&m| m == 1.0));

        let law = SplitLaw::tripartite(1.0, 1.0).unwrap();
        let s = solve_malthusian(&law).unwrap();
        let traces = replicates(10_000, StreamKey::from_seed(77), |k| {
            simulate_martingale_keyed(&law, s.alpha_star, 25, 1e-5, k).unwrap()
        });
        assert!(traces.iter().all(|t| t.values[0] == 1.0 && t.truncation_bound >= 0.0));
        let m: Vec<f64> = traces.iter().map(|t| t.terminal()).collect();
        let (mean, se) = power_mean_se(&m, 1);
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn deterministic_fixed_point_is_exact() {
        let report = empirical_fixed_point_check(&quarter_law(), 0.5, 1000, 3).unwrap();
        assert_eq!(report.moment_gaps, vec![0.0; 3]);
        assert_eq!(report.lhs_moments, vec![1.0; 3]);
    }

    #[test]
    fn bessel_fixed_point_second_moment() {
        let law = SplitLaw::tripartite(0.5, 0.5).unwrap();
        let report = empirical_fixed_point_check(&law, 0.5, 10_000, 8).unwrap();
        for gap in &report.moment_gaps[..2] {
            assert!(gap.abs() < 4.0, "{report:?}");
        }
        let target = 4.0 / std::f64::consts::PI;
        assert!((report.lhs_moments[1] - target).abs() < 0.05, "{report:?}");
    }

    #[test]
    fn fixed_point_needs_samples() {
        assert!(empirical_fixed_point_check(&quarter_law(), 0.5, 10, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn occupancy_identities(n in 1usize..400, seed in any::<u64>(), gamma in 0.1f64..2.0, beta in 0.1f64..2.0, d in 1usize..4) {
            let law = SplitLaw::multi(d, gamma, beta).unwrap();
            let occ = sample_partition(&law, n, seed).unwrap();
            prop_assert!(occ.is_consistent());
            prop_assert_eq!(occ.blocks(), occ.counts.iter().sum::<u64>());
        }

        #[test]
        fn paintbox_conserves_mass(seed in any::<u64>(), gamma in 0.2f64..2.0, beta in 0.2f64..2.0) {
            let law = SplitLaw::refined(SplitLaw::tripartite(gamma, beta).unwrap(), vec![0.25, 0.75]).unwrap();
            let pb = generate_paintbox(&law, 1e-3, 10_000, seed).unwrap();
            prop_assert!((pb.total_mass() - 1.0).abs() < 1e-9);
            prop_assert!(pb.solids.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
