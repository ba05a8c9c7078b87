//! Statistical comparisons of simulation output with exact values.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;
use statrs::function::gamma::gamma_ur;

use crate::branching::{replicates, sample_partition_keyed};
use crate::error::{Error, Result};
use crate::mellin::solve_malthusian;
use crate::moments::moments_m;
use crate::rng::StreamKey;
use crate::split_laws::SplitLaw;

/// Minimum expected count of a chi-squared cell; sparser cells are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

/// `(sample mean of X^q - reference_q) / SE` for `q = 1, 2, ...`.
pub fn moment_z_scores(samples: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 100 {
        return Err(Error::InvalidParameter(format!(
            "moment z-scores need at least 100 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    Ok(reference
        .iter()
        .enumerate()
        .map(|(i, &target)| {
            let q = i as i32 + 1;
            let mean = samples.iter().map(|x| x.powi(q)).sum::<f64>() / n;
            let var = samples.iter().map(|x| (x.powi(q) - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let diff = mean - target;
            if diff == 0.0 {
                0.0
            } else {
                diff / (var / n).sqrt()
            }
        })
        .collect())
}

/// Least-squares line `y = intercept + slope t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

pub fn regression_slope(t: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = t.len();
    if n != y.len() || n < 3 {
        return Err(Error::InsufficientRange(format!("need at least 3 paired points, got {n}")));
    }
    let nf = n as f64;
    let tm = t.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::InsufficientRange("all abscissae coincide".into()));
    }
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let rss: f64 = t.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(LineFit {
        slope,
        intercept,
        stderr: (rss / (nf - 2.0) / stt).sqrt(),
    })
}

/// Fits `log N_x = c + slope log(1/x)` to `(x, N_x)` pairs.
///
/// Needs at least 10 points with positive counts spanning two decades of `x`.
pub fn power_law_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    let usable: Vec<(f64, f64)> = points.iter().copied().filter(|&(x, c)| x > 0.0 && c > 0.0).collect();
    if usable.len() < 10 {
        return Err(Error::InsufficientRange(format!(
            "{} usable points, need at least 10",
            usable.len()
        )));
    }
    let (lo, hi) = usable
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    if hi / lo < 100.0 {
        return Err(Error::InsufficientRange(format!("x spans only [{lo:e}, {hi:e}]")));
    }
    let t: Vec<f64> = usable.iter().map(|&(x, _)| -x.ln()).collect();
    let y: Vec<f64> = usable.iter().map(|&(_, c)| c.ln()).collect();
    regression_slope(&t, &y)
}

/// Pearson chi-squared goodness of fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquared {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Cells left after pooling.
    pub cells: usize,
}

/// Compares observed counts with cell probabilities. Cells are sorted by
/// expected count and the sparsest are pooled until every pooled cell
/// expects at least [`MIN_EXPECTED`] observations.
pub fn chi_squared<K>(observed: &HashMap<K, u64>, expected: &HashMap<K, f64>, total: u64) -> Result<ChiSquared>
where
    K: Eq + Hash + Ord,
{
    if total == 0 {
        return Err(Error::DegenerateCells);
    }
    let n = total as f64;
    if observed.keys().any(|k| expected.get(k).is_none_or(|&p| p <= 0.0)) {
        // an impossible outcome was observed
        return Ok(ChiSquared {
            chi2: f64::INFINITY,
            dof: expected.len().saturating_sub(1),
            p_value: 0.0,
            cells: expected.len(),
        });
    }
    let mut cells: Vec<(&K, f64, f64)> = expected
        .iter()
        .map(|(k, &p)| (k, p * n, observed.get(k).copied().unwrap_or(0) as f64))
        .collect();
    cells.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut e_acc, mut o_acc) = (0.0, 0.0);
    for &(_, e, o) in &cells {
        e_acc += e;
        o_acc += o;
        if e_acc >= MIN_EXPECTED {
            pooled.push((e_acc, o_acc));
            e_acc = 0.0;
            o_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += e_acc;
                last.1 += o_acc;
            }
            None => pooled.push((e_acc, o_acc)),
        }
    }
    if pooled.len() < 2 {
        return Err(Error::DegenerateCells);
    }
    let chi2: f64 = pooled.iter().map(|&(e, o)| (o - e).powi(2) / e).sum();
    let dof = pooled.len() - 1;
    Ok(ChiSquared {
        chi2,
        dof,
        p_value: if chi2 > 0.0 { gamma_ur(dof as f64 / 2.0, chi2 / 2.0) } else { 1.0 },
        cells: pooled.len(),
    })
}

/// Simulation check of the block-count limit `K_n / n^alpha* -> c M`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitCheck {
    pub n: usize,
    pub reps: usize,
    pub alpha_star: f64,
    /// Empirical first and second moments of `K_n / (c_blocks n^alpha*)`.
    pub scaled_moments: [f64; 2],
    /// `E[M] = 1` and `E[M^2]`.
    pub reference_moments: [f64; 2],
    pub z_scores: Vec<f64>,
    /// `sum K_{n1} / sum K_n`.
    pub singleton_share: f64,
    /// Its limit `c_count_1 / c_blocks = alpha*`.
    pub singleton_share_limit: f64,
}

impl LimitCheck {
    /// Relative error of each scaled moment.
    pub fn relative_errors(&self) -> [f64; 2] {
        [0, 1].map(|i| (self.scaled_moments[i] / self.reference_moments[i] - 1.0).abs())
    }
}

/// Samples `reps` partitions of `n` balls and compares the moments of
/// `K_n / (c_blocks n^alpha*)` with those of `M`.
pub fn block_count_limit_check(law: &SplitLaw, n: usize, reps: usize, seed: u64) -> Result<LimitCheck> {
    if n < 1000 {
        return Err(Error::InvalidParameter(format!("n must be at least 1000, got {n}")));
    }
    let solution = solve_malthusian(law)?;
    if solution.lattice {
        return Err(Error::InvalidParameter("lattice laws have no limit constant".into()));
    }
    let alpha = solution.alpha_star;
    let table = moments_m(law, alpha, 2)?;
    let scale = solution.c_blocks * (n as f64).powf(alpha);

    let samples = replicates(reps, StreamKey::from_seed(seed), |k| sample_partition_keyed(law, n, k));
    let mut scaled = Vec::with_capacity(reps);
    let (mut blocks, mut singletons) = (0u64, 0u64);
    for occ in samples {
        let occ = occ?;
        blocks += occ.blocks();
        singletons += occ.count(1);
        scaled.push(occ.blocks() as f64 / scale);
    }
    let reference = [1.0, table.a[2]];
    let z_scores = moment_z_scores(&scaled, &reference)?;
    let m = scaled.len() as f64;
    Ok(LimitCheck {
        n,
        reps,
        alpha_star: alpha,
        scaled_moments: [
            scaled.iter().sum::<f64>() / m,
            scaled.iter().map(|x| x * x).sum::<f64>() / m,
        ],
        reference_moments: reference,
        z_scores,
        singleton_share: singletons as f64 / blocks as f64,
        singleton_share_limit: solution.c_count_r(1) / solution.c_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // upper regularized gamma for integer shape: e^-x sum_{i<k} x^i / i!
    fn poisson_tail(k: usize, x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for i in 0..k {
            if i > 0 {
                term *= x / i as f64;
            }
            sum += term;
        }
        (-x).exp() * sum
    }

    #[test]
    fn chi_squared_p_values() {
        let expected: HashMap<u8, f64> = (0..4).map(|k| (k, 0.25)).collect();
        let observed: HashMap<u8, u64> = [(0, 30), (1, 20), (2, 25), (3, 25)].into_iter().collect();
        let test = chi_squared(&observed, &expected, 100).unwrap();
        assert!((test.chi2 - 2.0).abs() < 1e-12);
        assert_eq!(test.dof, 3);
        // odd dof lies between its even neighbours
        assert!(test.p_value > poisson_tail(1, 1.0) && test.p_value < poisson_tail(2, 1.0));

        let expected: HashMap<u8, f64> = (0..5).map(|k| (k, 0.2)).collect();
        let observed: HashMap<u8, u64> = [(0, 30), (1, 10), (2, 20), (3, 20), (4, 20)].into_iter().collect();
        let test = chi_squared(&observed, &expected, 100).unwrap();
        assert!((test.chi2 - 10.0).abs() < 1e-12);
        assert_eq!(test.dof, 4);
        assert!((test.p_value - poisson_tail(2, 5.0)).abs() < 1e-12);
    }

    #[test]
    fn chi_squared_pools_sparse_cells() {
        let expected: HashMap<u8, f64> = [(0, 0.9), (1, 0.04), (2, 0.03), (3, 0.03)].into_iter().collect();
        let observed: HashMap<u8, u64> = [(0, 90), (1, 4), (2, 3), (3, 3)].into_iter().collect();
        let test = chi_squared(&observed, &expected, 100).unwrap();
        assert_eq!(test.cells, 2);
        assert_eq!(test.dof, 1);
        assert!(test.chi2.abs() < 1e-12);

        let tiny: HashMap<u8, f64> = [(0, 0.5), (1, 0.5)].into_iter().collect();
        let obs: HashMap<u8, u64> = [(0, 2), (1, 2)].into_iter().collect();
        assert!(matches!(chi_squared(&obs, &tiny, 4), Err(Error::DegenerateCells)));

        let obs: HashMap<u8, u64> = [(0, 50), (1, 40), (7, 10)].into_iter().collect();
        assert_eq!(chi_squared(&obs, &tiny, 100).unwrap().p_value, 0.0);
    }

    #[test]
    fn slope_recovers_power_law() {
        let points: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = 10f64.powf(-0.25 * i as f64);
                (x, 3.0 * x.powf(-0.56))
            })
            .collect();
        let fit = power_law_slope(&points).unwrap();
        assert!((fit.slope - 0.56).abs() < 1e-12);
        assert!(fit.stderr < 1e-10);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);

        assert!(matches!(power_law_slope(&points[..5]), Err(Error::InsufficientRange(_))));
        let narrow: Vec<(f64, f64)> = (0..20).map(|i| (0.5 + 0.01 * i as f64, 2.0)).collect();
        assert!(matches!(power_law_slope(&narrow), Err(Error::InsufficientRange(_))));
    }

    #[test]
    fn z_scores() {
        let samples: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let z = moment_z_scores(&samples, &[1.0, 2.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let z = moment_z_scores(&samples, &[1.1]).unwrap();
        assert!(z[0] < -3.0);
        assert!(moment_z_scores(&samples[..50], &[1.0]).is_err());
    }

    #[test]
    fn limit_check_bessel() {
        let law = SplitLaw::tripartite(0.5, 0.5).unwrap();
        let check = block_count_limit_check(&law, 2000, 2000, 9).unwrap();
        assert!((check.reference_moments[1] - 4.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!(check.relative_errors()[0] < 0.05, "{check:?}");
        assert!((check.singleton_share_limit - 0.5).abs() < 1e-12);
        assert!((check.singleton_share - 0.5).abs() < 0.02, "{check:?}");
        assert!(block_count_limit_check(&law, 10, 100, 0).is_err());
    }
}
