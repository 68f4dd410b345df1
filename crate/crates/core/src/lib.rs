//! Adaptive finite elements for quasi-static phase-field brittle fracture.
#![allow(clippy::needless_range_loop)]

pub mod adapt;
pub mod estimator;
pub mod fespace;
pub mod material;
pub mod mesh;
pub mod newton;
pub mod output;
pub mod qoi;
pub mod scenarios;
pub mod system;
pub mod verification;
