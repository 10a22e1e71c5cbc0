//! Numerical laboratory for corner formation in the binormal flow.
//!
//! The crate integrates self-similar filament profiles, evolves the cubic
//! Schrödinger equation obtained through the Hasimoto transform, builds
//! perturbed data from prescribed asymptotic states and reconstructs the
//! filament from the evolved wave field.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod nlsolver;
pub mod numerics;
pub mod rigid;
pub mod reconstruction;
pub mod scattering;
pub mod selfsimilar;
pub mod vector;

pub use error::{LabError, Result};
pub use vector::{CVec3, Vec3};
