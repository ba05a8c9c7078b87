//! Recursive partition structures.
//!
//! A unit mass splits into *crumbs*, which keep splitting by the same random
//! rule, and *solids*, which stop. The solids form a random discrete
//! distribution (a paintbox); sampling balls from it induces an exchangeable
//! random partition. This crate provides
//!
//! - splitting laws and single-step sampling ([`split_laws`]),
//! - Mellin transforms, the Malthusian exponent and asymptotic constants ([`mellin`]),
//! - exact simulation of paintboxes, partitions and the intrinsic martingale ([`branching`]),
//! - certified high-precision expectations of block counts ([`exact_counts`]),
//! - moments of the martingale limit ([`moments`]),
//! - the Ewens-Pitman reference family ([`ewens_pitman`]),
//! - statistical checks and the verification suite ([`verify`], [`suite`]).

#![forbid(unsafe_code)]

pub mod branching;
pub mod error;
pub mod ewens_pitman;
pub mod exact_counts;
pub mod mellin;
pub mod moments;
pub mod rng;
pub mod split_laws;
pub mod suite;
pub mod verify;

pub use branching::{OccupancyVector, PaintboxSample};
pub use error::{Error, Result};
pub use mellin::{solve_malthusian, MalthusianSolution, MellinPair};
pub use moments::MomentTable;
pub use rng::StreamKey;
pub use split_laws::{sample_split, validate_supercritical, SplitLaw, SplitOutcome};
pub use suite::CheckResult;
