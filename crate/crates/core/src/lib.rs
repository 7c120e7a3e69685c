//! Online figure-8 path shaping for a planar sailboat analog of an airborne
//! wind energy system.
//!
//! The pipeline: [`geometry`] turns a width/height pair into waypoints,
//! [`controller`] flies the [`dynamics`] model around them, [`metric`] scores
//! the lap by average cubed apparent wind, and [`bo`] searches the
//! width/height box with a [`gp`] surrogate and expected improvement.
//! [`harness`] wires it into a reproducible CLI.

pub mod bo;
pub mod controller;
pub mod dynamics;
pub mod geometry;
pub mod gp;
pub mod harness;
pub mod metric;
pub mod sampling;

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(value: f64) -> String {
    if value.is_finite() {
        format!("{value:.16e}")
    } else {
        value.to_string()
    }
}
