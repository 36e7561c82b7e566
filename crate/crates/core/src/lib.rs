//! Hybrid Lagrangian mechanics with nonholonomic constraints.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: kinetic-energy metric, musical isomorphisms, constraint
//!   one-forms and the g-orthogonal projection onto the constraint distribution.
//! * [`impacts`]: specular, elastic and plastic impact maps.
//! * [`penny`]: the vertical rolling disk on an elliptical table.
//! * [`engine`]: flow / locate impact / apply map execution loop.
//! * [`experiments`]: scenario files, presets, trajectory and ensemble output.

pub mod engine;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod impacts;
pub mod parallel;
pub mod penny;

pub use error::{Error, Result};
