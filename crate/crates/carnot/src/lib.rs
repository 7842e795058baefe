//! Computational laboratory for sub-Laplacian potential theory and
//! self-similar sets on Carnot groups.
//!
//! The crate builds Carnot groups from exactly validated stratified Lie
//! algebra data, equips H-type groups with the closed-form fundamental
//! solution of their sub-Laplacian and the associated Riesz-type gradient
//! kernel, constructs self-similar Cantor sets adapted to vertical cosets and
//! dilation cones, and certifies the quantitative conditions — separation,
//! Ahlfors-David regularity, and non-vanishing kernel integrals — that drive
//! removability questions for Lipschitz harmonic functions.
//!
//! Everything downstream of the exact algebra layer is floating point, but
//! deterministically so: a fixed seed and configuration reproduce every
//! artifact bit for bit regardless of thread count.

pub mod algebra;
pub mod cli;
pub mod config;
pub mod group;
pub mod ifs;
pub mod measure;
pub mod potential;
pub mod reduce;
pub mod report;
pub mod rng;
pub mod singint;
