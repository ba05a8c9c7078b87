//! Mellin transforms of the crumb and solid intensity measures, the
//! Malthusian equation `psi(alpha) = 1`, and the asymptotic constants that
//! follow from its root.

use serde::Serialize;
use statrs::function::gamma::{digamma, gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::split_laws::{validate_supercritical, DirichletShape, SplitLaw};

/// Convergence tolerance of the Malthusian solver, `|psi(alpha*) - 1|`.
pub const ROOT_TOL: f64 = 1e-12;

/// Distance from `alpha*` inside which `p(alpha)` is treated as the pole.
pub const POLE_TOL: f64 = 1e-9;

/// The pair of transforms `psi` (crumbs) and `phi` (solids) of one law.
#[derive(Clone, Copy, Debug)]
pub struct MellinPair<'a> {
    law: &'a SplitLaw,
}

impl<'a> MellinPair<'a> {
    pub fn new(law: &'a SplitLaw) -> Self {
        MellinPair { law }
    }

    pub fn law(&self) -> &SplitLaw {
        self.law
    }

    /// Left end of the real half-line where `psi` is finite.
    pub fn psi_abscissa(&self) -> f64 {
        match self.law.dirichlet_shape() {
            Some(shape) => -shape.crumb_shape,
            None => f64::NEG_INFINITY,
        }
    }

    /// Left end of the real half-line where `phi` is finite.
    pub fn phi_abscissa(&self) -> f64 {
        match self.law.dirichlet_shape() {
            Some(shape) => -shape.solid_shape,
            None => f64::NEG_INFINITY,
        }
    }

    pub fn psi(&self, alpha: f64) -> Result<f64> {
        self.check(alpha, self.psi_abscissa())?;
        Ok(match self.law {
            SplitLaw::DeterministicTest { crumbs, .. } => crumbs.iter().map(|x| x.powf(alpha)).sum(),
            _ => {
                let shape = self.shape();
                shape.crumbs as f64 * dirichlet_marginal_moment(shape.crumb_shape, shape.total(), alpha)
            }
        })
    }

    pub fn phi(&self, alpha: f64) -> Result<f64> {
        self.check(alpha, self.phi_abscissa())?;
        Ok(phi_unchecked(self.law, alpha))
    }

    /// Derivative of `psi`; negative wherever `psi` is finite and `alpha >= 0`.
    pub fn psi_prime(&self, alpha: f64) -> Result<f64> {
        let value = self.psi(alpha)?;
        Ok(match self.law {
            SplitLaw::DeterministicTest { crumbs, .. } => {
                crumbs.iter().map(|x| x.powf(alpha) * x.ln()).sum()
            }
            _ => {
                let shape = self.shape();
                value * (digamma(alpha + shape.crumb_shape) - digamma(alpha + shape.total()))
            }
        })
    }

    fn shape(&self) -> DirichletShape {
        self.law
            .dirichlet_shape()
            .expect("non-deterministic laws are Dirichlet based")
    }

    fn check(&self, alpha: f64, abscissa: f64) -> Result<()> {
        if alpha.is_finite() && alpha > abscissa {
            Ok(())
        } else {
            Err(Error::DomainError { alpha, abscissa })
        }
    }
}

/// `E[X^s]` for `X ~ beta(a, total - a)`, i.e.
/// `Gamma(total) Gamma(a + s) / (Gamma(a) Gamma(total + s))`.
///
/// The integer part of a positive `s` is peeled off as a finite product so
/// that integer arguments are exact to rounding.
pub fn beta_moment(a: f64, total: f64, s: f64) -> f64 {
    let whole = if s > 0.0 { s.floor() } else { 0.0 };
    let frac = s - whole;
    let mut value = if frac == 0.0 {
        1.0
    } else {
        (ln_gamma(total) - ln_gamma(total + frac) + ln_gamma(a + frac) - ln_gamma(a)).exp()
    };
    for i in 0..whole as u64 {
        let i = i as f64;
        value *= (a + frac + i) / (total + frac + i);
    }
    value
}

fn dirichlet_marginal_moment(a: f64, total: f64, s: f64) -> f64 {
    beta_moment(a, total, s)
}

fn phi_unchecked(law: &SplitLaw, alpha: f64) -> f64 {
    match law {
        SplitLaw::DeterministicTest { solids, .. } => solids.iter().map(|y| y.powf(alpha)).sum(),
        SplitLaw::Refined { base, subdivider } => {
            phi_unchecked(base, alpha) * subdivider.iter().map(|w| w.powf(alpha)).sum::<f64>()
        }
        _ => {
            let shape = law.dirichlet_shape().expect("Dirichlet law");
            dirichlet_marginal_moment(shape.solid_shape, shape.total(), alpha)
        }
    }
}

pub fn psi(law: &SplitLaw, alpha: f64) -> Result<f64> {
    MellinPair::new(law).psi(alpha)
}

pub fn phi(law: &SplitLaw, alpha: f64) -> Result<f64> {
    MellinPair::new(law).phi(alpha)
}

pub fn psi_prime(law: &SplitLaw, alpha: f64) -> Result<f64> {
    MellinPair::new(law).psi_prime(alpha)
}

/// Root of the Malthusian equation and the constants of the block-count
/// asymptotics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MalthusianSolution {
    pub alpha_star: f64,
    /// `psi'(alpha*)`, negative.
    pub psi_prime: f64,
    /// `phi(alpha*)`.
    pub phi_at_star: f64,
    /// `Gamma(-alpha*) phi(alpha*) / psi'(alpha*)`, the limit of `E[K_n] / n^alpha*`.
    pub c_blocks: f64,
    /// `phi(alpha*) / (-alpha* psi'(alpha*))`, the limit of `x^alpha* N_x / M`.
    pub c_nx: f64,
    /// Crumb sizes on a geometric progression: the constants above describe a
    /// log-periodic average rather than a limit.
    pub lattice: bool,
}

impl MalthusianSolution {
    /// `-Gamma(r - alpha*) phi(alpha*) / (r! psi'(alpha*))`, the limit of `E[K_{nr}] / n^alpha*`.
    pub fn c_count_r(&self, r: usize) -> f64 {
        assert!(r >= 1, "block size starts at 1");
        let a = self.alpha_star;
        let ratio = (ln_gamma(r as f64 - a) - ln_gamma(r as f64 + 1.0)).exp();
        -ratio * self.phi_at_star / self.psi_prime
    }
}

/// Solves `psi(alpha) = 1` on `(0, 1)`: bisection down to a bracket of width
/// `1e-3`, then safeguarded Newton steps.
pub fn solve_malthusian(law: &SplitLaw) -> Result<MalthusianSolution> {
    validate_supercritical(law)?;
    let mellin = MellinPair::new(law);
    let psi_at_zero = mellin.psi(0.0)?;
    let psi_at_one = mellin.psi(1.0)?;
    if !(psi_at_zero > 1.0 && psi_at_one < 1.0) {
        return Err(Error::NoRoot {
            psi_at_zero,
            psi_at_one,
        });
    }

    // psi is decreasing: psi(lo) > 1 > psi(hi)
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if mellin.psi(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut alpha = 0.5 * (lo + hi);
    for _ in 0..200 {
        let value = mellin.psi(alpha)? - 1.0;
        if value > 0.0 {
            lo = alpha;
        } else {
            hi = alpha;
        }
        if value.abs() <= ROOT_TOL * 1e-3 || hi - lo <= f64::EPSILON * alpha.max(1e-300) {
            break;
        }
        let slope = mellin.psi_prime(alpha)?;
        let mut next = alpha - value / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == alpha {
            break;
        }
        alpha = next;
    }
    let residual = (mellin.psi(alpha)? - 1.0).abs();
    if residual > ROOT_TOL {
        return Err(Error::NoRoot {
            psi_at_zero,
            psi_at_one,
        });
    }

    let psi_prime = mellin.psi_prime(alpha)?;
    let phi_at_star = mellin.phi(alpha)?;
    Ok(MalthusianSolution {
        alpha_star: alpha,
        psi_prime,
        phi_at_star,
        c_blocks: gamma(-alpha) * phi_at_star / psi_prime,
        c_nx: phi_at_star / (-alpha * psi_prime),
        lattice: law.is_lattice(),
    })
}

/// `p(alpha) = phi(alpha) / (1 - psi(alpha))`; at a positive integer `n` this is
/// the probability that `n` balls all land on one atom.
pub fn p_of_alpha(law: &SplitLaw, alpha: f64) -> Result<f64> {
    let solution = solve_malthusian(law)?;
    p_of_alpha_with(law, &solution, alpha)
}

/// As [`p_of_alpha`], reusing an already computed root.
pub fn p_of_alpha_with(law: &SplitLaw, solution: &MalthusianSolution, alpha: f64) -> Result<f64> {
    if (alpha - solution.alpha_star).abs() < POLE_TOL {
        return Err(Error::PoleAtAlphaStar {
            alpha_star: solution.alpha_star,
        });
    }
    let mellin = MellinPair::new(law);
    Ok(mellin.phi(alpha)? / (1.0 - mellin.psi(alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tri(g: f64, b: f64) -> SplitLaw {
        SplitLaw::tripartite(g, b).unwrap()
    }

    fn quarter_law() -> SplitLaw {
        SplitLaw::deterministic(vec![0.25, 0.25], vec![0.5]).unwrap()
    }

    #[test]
    fn psi_examples() {
        let a0 = 0.5;
        assert!((psi(&tri(a0, 1.0 - a0), 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        assert!((psi(&tri(1.0, 1.0), 0.0).unwrap() - 2.0).abs() < 1e-14);
        assert!((psi(&quarter_law(), 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn phi_examples() {
        assert!((phi(&tri(1.0, 1.0), 0.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((phi(&SplitLaw::multi(3, 0.2, 0.9).unwrap(), 0.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((phi(&tri(1.0, 1.0), 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);

        let refined = SplitLaw::refined(tri(1.0, 1.0), vec![0.5, 0.5]).unwrap();
        assert!((phi(&refined, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        let base2 = phi(&tri(1.0, 1.0), 2.0).unwrap();
        assert!((phi(&refined, 2.0).unwrap() - base2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn domain_is_enforced() {
        assert!(matches!(
            psi(&tri(0.5, 0.5), -0.5),
            Err(Error::DomainError { .. })
        ));
        assert!(psi(&tri(0.5, 0.5), -0.49).is_ok());
        assert!(matches!(
            phi(&tri(1.0, 0.3), -0.3),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn psi_prime_examples() {
        let d = psi_prime(&quarter_law(), 0.5).unwrap();
        assert!((d + 2.0 * std::f64::consts::LN_2).abs() < 1e-14);
        assert!((d + 1.386_294_361_119_890_6).abs() < 1e-12);

        // psi(b) = 2 a0/(b + a0) gives psi'(a0) = -1/(2 a0)
        let bessel = psi_prime(&tri(0.5, 0.5), 0.5).unwrap();
        assert!((bessel + 1.0).abs() < 1e-12, "{bessel}");

        let law = tri(1.0, 1.0);
        let h = 1e-5;
        let fd = (psi(&law, 0.5 + h).unwrap() - psi(&law, 0.5 - h).unwrap()) / (2.0 * h);
        assert!((psi_prime(&law, 0.5).unwrap() - fd).abs() <= 1e-6);
    }

    #[test]
    fn malthusian_roots() {
        let s = solve_malthusian(&tri(1.0, 1.0)).unwrap();
        assert!((s.alpha_star - (17f64.sqrt() - 3.0) / 2.0).abs() < 1e-12);
        assert!((s.alpha_star - 0.561_552_812_8).abs() < 1e-10);
        for a0 in [0.25, 0.5, 0.75] {
            let s = solve_malthusian(&tri(a0, 1.0 - a0)).unwrap();
            assert!((s.alpha_star - a0).abs() < 1e-12);
        }
        let s = solve_malthusian(&SplitLaw::multi(2, 0.3, 0.4).unwrap()).unwrap();
        assert!((s.alpha_star - 0.6).abs() < 1e-12);
        assert!(!s.lattice);
    }

    #[test]
    fn solution_constants_are_positive() {
        let s = solve_malthusian(&tri(1.0, 1.0)).unwrap();
        assert!(s.psi_prime < 0.0 && s.c_blocks > 0.0 && s.c_nx > 0.0);
        assert!((1..50).all(|r| s.c_count_r(r) > 0.0));
    }

    #[test]
    fn bessel_constant_matches_ratio_of_gammas() {
        // K_n ~ Gamma(a)/Gamma(2a) M n^a for the (a, 1 - a, a) split
        for a0 in [0.3, 0.5, 0.7] {
            let s = solve_malthusian(&tri(a0, 1.0 - a0)).unwrap();
            let expected = gamma(a0) / gamma(2.0 * a0);
            assert!((s.c_blocks / expected - 1.0).abs() < 1e-10);
        }
        let s = solve_malthusian(&tri(0.5, 0.5)).unwrap();
        assert!((s.c_blocks - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn count_constants_partial_sums() {
        // sum_{r=1}^R Gamma(r - a)/r! = Gamma(-a) [Gamma(R + 1 - a)/(Gamma(1 - a) R!) - 1]
        let s = solve_malthusian(&tri(1.0, 1.0)).unwrap();
        let a = s.alpha_star;
        let scale = -s.phi_at_star / s.psi_prime;
        let mut partial = 0.0;
        let mut previous = 0.0;
        for r in 1..=200usize {
            partial += s.c_count_r(r);
            assert!(partial > previous && partial < s.c_blocks);
            previous = partial;
            if r % 50 == 0 {
                let tail_factor =
                    (ln_gamma(r as f64 + 1.0 - a) - ln_gamma(1.0 - a) - ln_gamma(r as f64 + 1.0)).exp();
                let closed = scale * gamma(-a) * (tail_factor - 1.0);
                assert!((partial / closed - 1.0).abs() < 1e-10, "r={r}");
            }
        }
    }

    #[test]
    fn lattice_law_is_tagged() {
        let s = solve_malthusian(&quarter_law()).unwrap();
        assert!(s.lattice);
        assert!((s.alpha_star - 0.5).abs() < 1e-12);
    }

    #[test]
    fn subcritical_law_is_refused() {
        let law = SplitLaw::deterministic(vec![0.45, 0.45], vec![0.1]).unwrap();
        assert!(solve_malthusian(&law).is_ok());
        let sub = SplitLaw::deterministic(vec![0.9], vec![0.1]).unwrap();
        assert!(matches!(solve_malthusian(&sub), Err(Error::SubcriticalLaw { .. })));
    }

    #[test]
    fn p_examples() {
        let law = tri(1.0, 1.0);
        assert!((p_of_alpha(&law, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((p_of_alpha(&law, 2.0).unwrap() - 0.25).abs() < 1e-14);
        let s = solve_malthusian(&law).unwrap();
        assert!(matches!(
            p_of_alpha(&law, s.alpha_star + 1e-10),
            Err(Error::PoleAtAlphaStar { .. })
        ));
        // Ewens-Pitman (alpha, alpha/d) probability of one colour
        for d in [1usize, 2, 3] {
            let alpha = 0.5;
            let theta = alpha / d as f64;
            let law = SplitLaw::multi_ewens_pitman(alpha, d).unwrap();
            for n in 2..=12 {
                let mut ep = 1.0;
                for i in 0..n - 1 {
                    ep *= (1.0 - alpha + i as f64) / (1.0 + theta + i as f64);
                }
                let p = p_of_alpha(&law, n as f64).unwrap();
                assert!((p - ep).abs() < 1e-10, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn refined_keeps_alpha_star() {
        let base = tri(1.0, 1.0);
        let refined = SplitLaw::refined(base.clone(), vec![0.3, 0.7]).unwrap();
        let a = solve_malthusian(&base).unwrap();
        let b = solve_malthusian(&refined).unwrap();
        assert_eq!(a.alpha_star, b.alpha_star);
        assert!((b.c_blocks / a.c_blocks - (0.3f64.powf(a.alpha_star) + 0.7f64.powf(a.alpha_star))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn transforms_consistent(gamma_ in 0.05f64..4.0, beta in 0.05f64..4.0, d in 1usize..5) {
            for law in [tri(gamma_, beta), SplitLaw::multi(d, gamma_, beta).unwrap()] {
                let m = MellinPair::new(&law);
                prop_assert!((m.psi(1.0).unwrap() + m.phi(1.0).unwrap() - 1.0).abs() < 1e-12);
                let mut prev = f64::INFINITY;
                for i in 0..100 {
                    let v = m.psi(i as f64 / 99.0).unwrap();
                    prop_assert!(v < prev);
                    prev = v;
                }
                for a in [0.1, 0.5, 0.9] {
                    let h = 1e-5;
                    let fd = (m.psi(a + h).unwrap() - m.psi(a - h).unwrap()) / (2.0 * h);
                    prop_assert!((m.psi_prime(a).unwrap() - fd).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn solver_hits_unit_psi(gamma_ in 0.05f64..4.0, beta in 0.05f64..4.0, d in 1usize..5) {
            let law = SplitLaw::multi(d, gamma_, beta).unwrap();
            let s = solve_malthusian(&law).unwrap();
            prop_assert!((psi(&law, s.alpha_star).unwrap() - 1.0).abs() <= ROOT_TOL);
            prop_assert!(s.alpha_star > 0.0 && s.alpha_star < 1.0);
        }
    }
}
