//! Random billiards with thermostatted walls.
//!
//! A point particle flies freely inside a table and scatters at the wall by
//! the Maxwell–Smoluchowski law: with probability `alpha` it leaves with a
//! fresh flux-weighted Maxwellian velocity at the wall temperature,
//! otherwise it reflects specularly. The crate simulates the resulting
//! Markov chain, solves for its stationary speed laws, evaluates heat fluxes
//! and the entropy production rate, and runs a small heat engine whose top
//! wall is a sliding belt.

pub mod chain;
pub mod engine;
pub mod entropy;
pub mod experiment;
pub mod geometry;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod stationary;
pub mod stats;
