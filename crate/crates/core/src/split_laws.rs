//! Splitting laws: the joint law of crumb and solid sizes produced when a
//! crumb divides.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-sum invariant of a single split.
pub const UNIT_SUM_TOL: f64 = 1e-12;

/// Law of one division step.
///
/// Serialized as a tagged JSON object, e.g.
/// `{"type":"dirichlet_tripartite","gamma":1.0,"beta":1.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitLaw {
    /// Crumbs `X1, X3` and solid `Y2` with `(X1, Y2, X3) ~ Dirichlet(gamma, beta, gamma)`.
    DirichletTripartite { gamma: f64, beta: f64 },
    /// `d + 1` crumbs and one solid, jointly `Dirichlet(gamma, ..., gamma, beta)`.
    DirichletMulti { d: usize, gamma: f64, beta: f64 },
    /// Every solid of `base` is further cut in the proportions `subdivider`.
    Refined {
        base: Box<SplitLaw>,
        subdivider: Vec<f64>,
    },
    /// The same outcome at every step.
    #[serde(rename = "deterministic")]
    DeterministicTest { crumbs: Vec<f64>, solids: Vec<f64> },
}

/// Shape parameters of a Dirichlet split with exchangeable crumbs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletShape {
    pub crumbs: usize,
    pub crumb_shape: f64,
    pub solid_shape: f64,
}

impl DirichletShape {
    /// Sum of all shape parameters.
    pub fn total(&self) -> f64 {
        self.solid_shape + self.crumbs as f64 * self.crumb_shape
    }
}

impl SplitLaw {
    pub fn tripartite(gamma: f64, beta: f64) -> Result<Self> {
        let law = SplitLaw::DirichletTripartite { gamma, beta };
        law.validate()?;
        Ok(law)
    }

    pub fn multi(d: usize, gamma: f64, beta: f64) -> Result<Self> {
        let law = SplitLaw::DirichletMulti { d, gamma, beta };
        law.validate()?;
        Ok(law)
    }

    /// The `d + 1` crumb law whose partition is Ewens-Pitman `(alpha, alpha/d)`.
    pub fn multi_ewens_pitman(alpha: f64, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidLaw("d must be at least 1".into()));
        }
        Self::multi(d, alpha / d as f64, 1.0 - alpha)
    }

    pub fn refined(base: SplitLaw, subdivider: Vec<f64>) -> Result<Self> {
        let law = SplitLaw::Refined {
            base: Box::new(base),
            subdivider,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn deterministic(crumbs: Vec<f64>, solids: Vec<f64>) -> Result<Self> {
        let law = SplitLaw::DeterministicTest { crumbs, solids };
        law.validate()?;
        Ok(law)
    }

    /// Parses and validates a JSON law description.
    pub fn from_json(text: &str) -> Result<Self> {
        let law: SplitLaw = serde_json::from_str(text)?;
        law.validate()?;
        Ok(law)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split laws always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SplitLaw::DirichletTripartite { gamma, beta } => {
                check_shape("gamma", *gamma)?;
                check_shape("beta", *beta)
            }
            SplitLaw::DirichletMulti { d, gamma, beta } => {
                if *d == 0 {
                    return Err(Error::InvalidLaw("d must be at least 1".into()));
                }
                check_shape("gamma", *gamma)?;
                check_shape("beta", *beta)
            }
            SplitLaw::Refined { base, subdivider } => {
                base.validate()?;
                if subdivider.is_empty() {
                    return Err(Error::InvalidLaw("subdivider is empty".into()));
                }
                check_sizes("subdivider", subdivider)?;
                check_unit_sum(subdivider.iter().sum())
            }
            SplitLaw::DeterministicTest { crumbs, solids } => {
                check_sizes("crumb", crumbs)?;
                check_sizes("solid", solids)?;
                check_unit_sum(crumbs.iter().sum::<f64>() + solids.iter().sum::<f64>())
            }
        }
    }

    /// Shape of the underlying Dirichlet split, looking through refinements.
    pub fn dirichlet_shape(&self) -> Option<DirichletShape> {
        match self {
            SplitLaw::DirichletTripartite { gamma, beta } => Some(DirichletShape {
                crumbs: 2,
                crumb_shape: *gamma,
                solid_shape: *beta,
            }),
            SplitLaw::DirichletMulti { d, gamma, beta } => Some(DirichletShape {
                crumbs: d + 1,
                crumb_shape: *gamma,
                solid_shape: *beta,
            }),
            SplitLaw::Refined { base, .. } => base.dirichlet_shape(),
            SplitLaw::DeterministicTest { .. } => None,
        }
    }

    /// Number of crumbs produced by every split (all supported laws are finite).
    pub fn crumb_count(&self) -> usize {
        match self {
            SplitLaw::DirichletTripartite { .. } => 2,
            SplitLaw::DirichletMulti { d, .. } => d + 1,
            SplitLaw::Refined { base, .. } => base.crumb_count(),
            SplitLaw::DeterministicTest { crumbs, .. } => crumbs.len(),
        }
    }

    /// Whether the crumb sizes sit on a geometric progression.
    pub fn is_lattice(&self) -> bool {
        match self {
            SplitLaw::DeterministicTest { crumbs, .. } => is_geometric(crumbs),
            SplitLaw::Refined { base, .. } => base.is_lattice(),
            _ => false,
        }
    }
}

fn check_shape(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{name} must be positive, got {v}")))
    }
}

fn check_sizes(name: &str, sizes: &[f64]) -> Result<()> {
    match sizes.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        Some(s) => Err(Error::InvalidLaw(format!("{name} size {s} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn check_unit_sum(sum: f64) -> Result<()> {
    if (sum - 1.0).abs() <= UNIT_SUM_TOL {
        Ok(())
    } else {
        Err(Error::MassLeak { sum })
    }
}

// log-sizes commensurable with denominators up to 64
fn is_geometric(sizes: &[f64]) -> bool {
    let Some(&first) = sizes.first() else {
        return false;
    };
    let base = first.ln();
    sizes.iter().all(|&s| {
        let ratio = s.ln() / base;
        (1..=64).any(|q| {
            let scaled = ratio * q as f64;
            (scaled - scaled.round()).abs() < 1e-9
        })
    })
}

/// One realized division. Crumbs carry even labels, solids odd labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub crumbs: Vec<(u64, f64)>,
    pub solids: Vec<(u64, f64)>,
}

impl SplitOutcome {
    pub fn total_mass(&self) -> f64 {
        self.crumb_mass() + self.solid_mass()
    }

    pub fn crumb_mass(&self) -> f64 {
        self.crumbs.iter().map(|&(_, s)| s).sum()
    }

    pub fn solid_mass(&self) -> f64 {
        self.solids.iter().map(|&(_, s)| s).sum()
    }
}

fn crumb_label(i: usize) -> u64 {
    2 * i as u64
}

fn solid_label(j: usize) -> u64 {
    2 * j as u64 + 1
}

/// Draws one division from `law`.
pub fn sample_split<R: Rng + ?Sized>(law: &SplitLaw, rng: &mut R) -> SplitOutcome {
    match law {
        SplitLaw::DirichletTripartite { gamma, beta } => {
            let v = sample_dirichlet(&[*gamma, *beta, *gamma], rng);
            SplitOutcome {
                crumbs: vec![(crumb_label(0), v[0]), (crumb_label(1), v[2])],
                solids: vec![(solid_label(0), v[1])],
            }
        }
        SplitLaw::DirichletMulti { d, gamma, beta } => {
            let mut shapes = vec![*gamma; d + 1];
            shapes.push(*beta);
            let v = sample_dirichlet(&shapes, rng);
            SplitOutcome {
                crumbs: (0..=*d).map(|i| (crumb_label(i), v[i])).collect(),
                solids: vec![(solid_label(0), v[d + 1])],
            }
        }
        SplitLaw::Refined { base, subdivider } => {
            let outcome = sample_split(base, rng);
            let parts = subdivider.len();
            let solids = outcome
                .solids
                .iter()
                .enumerate()
                .flat_map(|(j, &(_, y))| {
                    subdivider
                        .iter()
                        .enumerate()
                        .map(move |(k, &w)| (solid_label(j * parts + k), y * w))
                })
                .collect();
            SplitOutcome {
                crumbs: outcome.crumbs,
                solids,
            }
        }
        SplitLaw::DeterministicTest { crumbs, solids } => SplitOutcome {
            crumbs: crumbs
                .iter()
                .enumerate()
                .map(|(i, &x)| (crumb_label(i), x))
                .collect(),
            solids: solids
                .iter()
                .enumerate()
                .map(|(j, &y)| (solid_label(j), y))
                .collect(),
        },
    }
}

/// Dirichlet vector by Gamma normalization.
pub fn sample_dirichlet<R: Rng + ?Sized>(shapes: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = shapes
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// First-order summary of a split law against the supercriticality conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupercriticalReport {
    pub mean_crumb_mass: f64,
    pub mean_crumb_count: f64,
    pub ok: bool,
    /// Crumb sizes on a geometric progression; asymptotics oscillate.
    pub lattice: bool,
}

/// Checks `E[sum X] < 1` and `E[#{X > 0}] > 1`.
pub fn validate_supercritical(law: &SplitLaw) -> Result<SupercriticalReport> {
    law.validate()?;
    let (mean_crumb_mass, mean_crumb_count) = match law.dirichlet_shape() {
        Some(shape) => {
            let c = shape.crumbs as f64;
            (c * shape.crumb_shape / shape.total(), c)
        }
        None => match law {
            SplitLaw::DeterministicTest { crumbs, .. } => (
                crumbs.iter().sum(),
                crumbs.iter().filter(|&&x| x > 0.0).count() as f64,
            ),
            _ => unreachable!("non-Dirichlet laws are deterministic or refined"),
        },
    };
    if mean_crumb_count <= 1.0 {
        return Err(Error::SubcriticalLaw { mean_crumb_count });
    }
    Ok(SupercriticalReport {
        mean_crumb_mass,
        mean_crumb_count,
        ok: mean_crumb_mass < 1.0,
        lattice: law.is_lattice(),
    })
}
