//! The verification suite behind `recsplit verify`: golden values, oracle
//! equivalences and simulation checks, each reduced to one statistic
//! compared with a threshold.

use serde::Serialize;

use crate::branching::{
    count_nx, empirical_fixed_point_check, generate_paintbox_keyed, replicates, sample_partition_keyed,
    simulate_martingale, simulate_martingale_keyed, OccupancyVector, DEFAULT_MARTINGALE_DELTA,
};
use crate::error::Result;
use crate::ewens_pitman::{
    arranged_solid_fractions, enumerate_occupancies, eppf_probability, equivalence_suite, noncoincidence_check,
    q_mapping_with_rng,
};
use crate::exact_counts::{default_precision, expected_blocks, AlternatingSums};
use crate::mellin::{phi, psi, solve_malthusian};
use crate::moments::{closed_form_moments, moments_m, ClosedFormFamily};
use crate::rng::StreamKey;
use crate::split_laws::{sample_dirichlet, SplitLaw, UNIT_SUM_TOL};
use crate::verify::{power_law_slope, block_count_limit_check};

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub check_name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    /// Passes when `statistic <= threshold`.
    pub fn at_most(name: &str, statistic: f64, threshold: f64) -> Self {
        CheckResult {
            check_name: name.to_string(),
            statistic,
            threshold,
            pass: statistic <= threshold,
        }
    }

    /// Passes when `statistic >= threshold`.
    pub fn at_least(name: &str, statistic: f64, threshold: f64) -> Self {
        CheckResult {
            check_name: name.to_string(),
            statistic,
            threshold,
            pass: statistic >= threshold,
        }
    }
}

/// Sample sizes of the suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub count_reps: usize,
    pub equivalence_reps: usize,
    pub map_reps: usize,
    pub martingale_traces: usize,
    pub fixed_point_samples: usize,
    pub paintboxes: usize,
    pub limit_n: usize,
    pub limit_reps: usize,
}

impl SuiteConfig {
    pub fn full(seed: u64) -> Self {
        SuiteConfig {
            seed,
            count_reps: 10_000,
            equivalence_reps: 100_000,
            map_reps: 40_000,
            martingale_traces: 10_000,
            fixed_point_samples: 10_000,
            paintboxes: 64,
            limit_n: 10_000,
            limit_reps: 4000,
        }
    }

    /// Reduced sizes for a run of well under a minute.
    pub fn quick(seed: u64) -> Self {
        SuiteConfig {
            seed,
            count_reps: 2000,
            equivalence_reps: 20_000,
            map_reps: 10_000,
            martingale_traces: 2000,
            fixed_point_samples: 2000,
            paintboxes: 16,
            limit_n: 2000,
            limit_reps: 1000,
        }
    }

    fn key(&self, task: &str) -> StreamKey {
        StreamKey::for_task(self.seed, task)
    }

    fn task_seed(&self, task: &str) -> u64 {
        self.key(task).derive_seed()
    }
}

/// Runs every check. Errors from the library abort the run; failed
/// comparisons are reported through `pass`.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    out.extend(malthusian_golden()?);
    out.extend(moment_oracles()?);
    out.extend(exact_vs_simulation(config)?);
    out.extend(asymptote()?);
    out.extend(ewens_pitman_equivalence(config)?);
    out.extend(size_biased_map(config)?);
    out.push(noncoincidence()?);
    out.extend(martingale(config)?);
    out.extend(power_laws(config)?);
    out.extend(structure(config)?);
    Ok(out)
}

fn malthusian_golden() -> Result<Vec<CheckResult>> {
    let mut worst: f64 = 0.0;
    let tri = solve_malthusian(&SplitLaw::tripartite(1.0, 1.0)?)?;
    worst = worst.max((tri.alpha_star - (17f64.sqrt() - 3.0) / 2.0).abs());
    for i in 1..=9 {
        let a = i as f64 / 10.0;
        worst = worst.max((solve_malthusian(&SplitLaw::tripartite(a, 1.0 - a)?)?.alpha_star - a).abs());
    }
    for (d, g) in [(2usize, 0.3), (3, 0.2), (5, 0.1)] {
        let law = SplitLaw::multi(d, g, 1.0 - d as f64 * g)?;
        worst = worst.max((solve_malthusian(&law)?.alpha_star - d as f64 * g).abs());
    }
    Ok(vec![CheckResult::at_most("malthusian_golden_abs_error", worst, 1e-10)])
}

fn moment_oracles() -> Result<Vec<CheckResult>> {
    let mut families = vec![ClosedFormFamily::BesselAlphaAlpha { alpha: 0.5 }];
    families.extend((1..=3).map(|d| ClosedFormFamily::MultiR1 { d, alpha_star: 0.5 }));
    let mut worst: f64 = 0.0;
    for family in &families {
        let law = family.law()?;
        let alpha = solve_malthusian(&law)?.alpha_star;
        let table = moments_m(&law, alpha, 8)?;
        for q in 2..=8 {
            let exact = closed_form_moments(family, q as f64)?;
            worst = worst.max((table.a[q] / exact - 1.0).abs());
        }
    }
    let mut identity: f64 = 0.0;
    for i in 1..=9 {
        let a = i as f64 / 10.0;
        for q in 2..=8 {
            let x = closed_form_moments(&ClosedFormFamily::BesselAlphaAlpha { alpha: a }, q as f64)?;
            let y = closed_form_moments(&ClosedFormFamily::MultiR1 { d: 1, alpha_star: a }, q as f64)?;
            identity = identity.max((x / y - 1.0).abs());
        }
    }
    Ok(vec![
        CheckResult::at_most("moment_recursion_vs_closed_form_rel_error", worst, 1e-8),
        CheckResult::at_most("closed_form_single_pair_identity_rel_error", identity, 1e-12),
    ])
}

fn exact_vs_simulation(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let n = 200;
    let laws = [SplitLaw::tripartite(1.0, 1.0)?, SplitLaw::multi_ewens_pitman(0.5, 2)?];
    let mut worst: f64 = 0.0;
    for (i, law) in laws.iter().enumerate() {
        let sums = AlternatingSums::new(law, n, default_precision(n))?;
        let samples = replicates(config.count_reps, config.key("counts").child(i as u64), |k| {
            sample_partition_keyed(law, n, k)
        })
        .into_iter()
        .collect::<Result<Vec<OccupancyVector>>>()?;
        // r = 0 stands for the total block count
        let targets = [
            (sums.expected_blocks(n).value, 0),
            (sums.expected_count_r(n, 1).value, 1),
            (sums.expected_count_r(n, 2).value, 2),
            (sums.expected_count_r(n, 3).value, 3),
        ];
        for (exact, r) in targets {
            let xs: Vec<f64> = samples
                .iter()
                .map(|o| if r == 0 { o.blocks() } else { o.count(r) } as f64)
                .collect();
            worst = worst.max(z_of_mean(&xs, exact).abs());
        }
    }
    Ok(vec![CheckResult::at_most("exact_vs_simulated_counts_max_abs_z", worst, 4.0)])
}

fn asymptote() -> Result<Vec<CheckResult>> {
    let law = SplitLaw::tripartite(1.0, 1.0)?;
    let s = solve_malthusian(&law)?;
    let n_values = [1usize << 8, 1 << 10, 1 << 12];
    let mut deviations = Vec::new();
    for &n in &n_values {
        let value = expected_blocks(&law, n, None)?;
        deviations.push((value / (n as f64).powf(s.alpha_star) / s.c_blocks - 1.0).abs());
    }
    // smallest decrease between consecutive sizes; positive when the deviations shrink
    let shrink = deviations.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let n = n_values[2];
    let p = default_precision(n);
    let lo = expected_blocks(&law, n, Some(p))?;
    let hi = expected_blocks(&law, n, Some(2 * p))?;
    let monotone = CheckResult {
        check_name: "asymptote_deviation_min_decrease".into(),
        statistic: shrink,
        threshold: 0.0,
        pass: shrink > 0.0,
    };
    Ok(vec![
        monotone,
        CheckResult::at_most("asymptote_rel_deviation_at_4096", deviations[2], 0.10),
        CheckResult::at_most("precision_doubling_rel_change", (hi / lo - 1.0).abs(), 1e-12),
    ])
}

fn ewens_pitman_equivalence(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut gap: f64 = 0.0;
    let mut out = Vec::new();
    for (i, (alpha, d)) in [(0.5, 2usize), (0.6, 3)].into_iter().enumerate() {
        let report = equivalence_suite(
            alpha,
            d,
            6,
            config.equivalence_reps,
            config.task_seed(&format!("equivalence{i}")),
        )?;
        gap = report.p_n_gaps.iter().fold(gap, |g, &x| g.max(x));
        out.push(CheckResult::at_least(
            &format!("equivalence_p_value_alpha{alpha}_d{d}"),
            report.p_value,
            1e-3,
        ));
        out.push(CheckResult::at_most(
            &format!("wrong_theta_control_p_value_alpha{alpha}_d{d}"),
            report.control.p_value,
            1e-6,
        ));
    }
    out.insert(0, CheckResult::at_most("one_block_probability_gap", gap, 1e-10));
    Ok(out)
}

fn size_biased_map(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let (alpha, d, k) = (0.4, 2usize, 2usize);
    let shape = alpha / d as f64;
    let draws = replicates(config.map_reps, config.key("qmap"), |key| {
        let mut rng = key.rng();
        let b = sample_dirichlet(&vec![shape; k * d + 1], &mut rng);
        q_mapping_with_rng(&b, alpha, d, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let structural = draws
        .iter()
        .filter(|o| {
            o.collection.len() != (k + 1) * d + 1 || (o.collection.iter().sum::<f64>() - 1.0).abs() > UNIT_SUM_TOL
        })
        .count();
    let discarded: Vec<f64> = draws.iter().map(|o| o.discarded).collect();
    let map_z = beta_moment_z(&discarded, 1.0 - alpha, (k as f64 + 1.0 + 1.0 / d as f64) * alpha);

    let fractions = replicates(config.map_reps, config.key("arrangement"), |key| {
        arranged_solid_fractions(0.5, 2, 5, key)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut arrangement_z: f64 = 0.0;
    for j in 1..=5 {
        let xs: Vec<f64> = fractions.iter().map(|f| f[j - 1]).collect();
        arrangement_z = arrangement_z.max(beta_moment_z(&xs, 0.5, (j as f64 + 0.5) * 0.5));
    }
    Ok(vec![
        CheckResult::at_most("size_biased_map_structural_violations", structural as f64, 0.0),
        CheckResult::at_most("size_biased_map_discarded_max_abs_z", map_z, 4.0),
        CheckResult::at_most("arrangement_fraction_max_abs_z", arrangement_z, 4.0),
    ])
}

fn noncoincidence() -> Result<CheckResult> {
    let report = noncoincidence_check(2, 1.0)?;
    Ok(CheckResult::at_least("tripartite_two_parameter_residual", report.residual_at_4, 1e-6))
}

fn martingale(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let law = SplitLaw::tripartite(1.0, 1.0)?;
    let alpha = solve_malthusian(&law)?.alpha_star;
    let terminal = replicates(config.martingale_traces, config.key("martingale"), |k| {
        simulate_martingale_keyed(&law, alpha, 25, DEFAULT_MARTINGALE_DELTA, k).map(|t| t.terminal())
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let fixed = empirical_fixed_point_check(&law, alpha, config.fixed_point_samples, config.task_seed("fixed_point"))?;
    let gap = fixed.moment_gaps.iter().fold(0.0f64, |g, x| g.max(x.abs()));

    let lattice = SplitLaw::deterministic(vec![0.25, 0.25], vec![0.5])?;
    let trace = simulate_martingale(&lattice, 0.5, 25, DEFAULT_MARTINGALE_DELTA, config.task_seed("lattice"))?;
    let drift = trace.values.iter().fold(0.0f64, |g, m| g.max((m - 1.0).abs()));
    Ok(vec![
        CheckResult::at_most("martingale_mean_abs_z", z_of_mean(&terminal, 1.0).abs(), 4.0),
        CheckResult::at_most("fixed_point_moment_gap_max_abs_z", gap, 4.0),
        CheckResult::at_most("lattice_martingale_max_drift", drift, 0.0),
    ])
}

fn power_laws(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let law = SplitLaw::tripartite(1.0, 1.0)?;
    let alpha = solve_malthusian(&law)?.alpha_star;
    let delta = 1e-6;
    let grid: Vec<f64> = (0..25).map(|i| delta * 1e3f64.powf(i as f64 / 24.0)).collect();
    let boxes = replicates(config.paintboxes, config.key("paintbox"), |k| {
        generate_paintbox_keyed(&law, delta, 10_000, k)
    });
    let mut pooled = vec![0.0; grid.len()];
    for pb in boxes {
        let pb = pb?.require_complete()?;
        for (acc, &x) in pooled.iter_mut().zip(&grid) {
            *acc += count_nx(&pb, x).count as f64;
        }
    }
    let points: Vec<(f64, f64)> = grid.into_iter().zip(pooled).collect();
    let slope = power_law_slope(&points)?.slope;

    let bessel = SplitLaw::tripartite(0.5, 0.5)?;
    let limit = block_count_limit_check(&bessel, config.limit_n, config.limit_reps, config.task_seed("limit"))?;
    let [e1, e2] = limit.relative_errors();
    Ok(vec![
        CheckResult::at_most("nx_slope_rel_error", (slope / alpha - 1.0).abs(), 0.05),
        CheckResult::at_most("scaled_block_count_mean_rel_error", e1, 0.10),
        CheckResult::at_most("scaled_block_count_second_moment_rel_error", e2, 0.10),
    ])
}

fn structure(config: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let laws = [
        SplitLaw::tripartite(1.0, 1.0)?,
        SplitLaw::multi(3, 0.2, 0.9)?,
        SplitLaw::refined(SplitLaw::tripartite(0.5, 0.5)?, vec![0.3, 0.7])?,
    ];
    let mut violations = 0usize;
    for (i, law) in laws.iter().enumerate() {
        let parts = replicates(200, config.key("structure").child(i as u64), |k| {
            sample_partition_keyed(law, 300, k)
        });
        for occ in parts {
            let occ = occ?;
            let weighted: u64 = (1..=occ.n).map(|r| r as u64 * occ.count(r)).sum();
            let total: u64 = (1..=occ.n).map(|r| occ.count(r)).sum();
            if weighted != occ.n as u64 || total != occ.blocks() {
                violations += 1;
            }
        }
        let boxes = replicates(20, config.key("structure_boxes").child(i as u64), |k| {
            generate_paintbox_keyed(law, 1e-4, 10_000, k)
        });
        for pb in boxes {
            if (pb?.total_mass() - 1.0).abs() > 1e-9 {
                violations += 1;
            }
        }
        if (psi(law, 1.0)? + phi(law, 1.0)? - 1.0).abs() > 1e-14 {
            violations += 1;
        }
    }
    let mut normalization: f64 = 0.0;
    for n in 1..=7 {
        let total: f64 = enumerate_occupancies(n)
            .iter()
            .map(|o| eppf_probability(0.5, 0.25, o))
            .sum::<Result<f64>>()?;
        normalization = normalization.max((total - 1.0).abs());
    }
    let base = SplitLaw::tripartite(1.0, 1.0)?;
    let refined = SplitLaw::refined(base.clone(), vec![0.2, 0.3, 0.5])?;
    if solve_malthusian(&base)?.alpha_star != solve_malthusian(&refined)?.alpha_star {
        violations += 1;
    }
    Ok(vec![
        CheckResult::at_most("structural_violations", violations as f64, 0.0),
        CheckResult::at_most("partition_probability_normalization_error", normalization, 1e-12),
    ])
}

fn z_of_mean(xs: &[f64], target: f64) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if mean == target {
        0.0
    } else {
        (mean - target) / (var / n).sqrt()
    }
}

/// Largest `|z|` of the first two sample moments against `beta(a, b)`.
fn beta_moment_z(xs: &[f64], a: f64, b: f64) -> f64 {
    let m1 = a / (a + b);
    let m2 = m1 * (a + 1.0) / (a + b + 1.0);
    let squares: Vec<f64> = xs.iter().map(|x| x * x).collect();
    z_of_mean(xs, m1).abs().max(z_of_mean(&squares, m2).abs())
}

/// Whether every check passed.
pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_directions() {
        assert!(CheckResult::at_most("a", 1.0, 1.0).pass);
        assert!(!CheckResult::at_most("a", 1.1, 1.0).pass);
        assert!(CheckResult::at_least("b", 1.0, 0.5).pass);
        assert!(!CheckResult::at_least("b", 0.1, 0.5).pass);
    }

    #[test]
    fn deterministic_pieces_pass() {
        for check in malthusian_golden()
            .unwrap()
            .into_iter()
            .chain(moment_oracles().unwrap())
            .chain([noncoincidence().unwrap()])
        {
            assert!(check.pass, "{check:?}");
        }
    }

    #[test]
    fn z_helpers() {
        let xs: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert_eq!(z_of_mean(&xs, 0.5), 0.0);
        assert!(z_of_mean(&xs, 0.7) < -3.0);
    }
}
