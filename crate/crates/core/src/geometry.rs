//! Figure-8 waypoint generation from the Lemniscate of Gerono.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default `n`: the path carries `n + 1 = 40` waypoints.
pub const DEFAULT_WAYPOINT_PARAM: usize = 39;

/// Width `w` and height `h` of the figure-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisParams {
    pub w: f64,
    pub h: f64,
}

impl BasisParams {
    pub fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.w, self.h]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { w: a[0], h: a[1] }
    }
}

impl fmt::Display for BasisParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(W = {}, H = {})", self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    W,
    H,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::W => f.write_str("W"),
            Axis::H => f.write_str("H"),
        }
    }
}

/// Closed axis-aligned box of admissible basis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub w_min: f64,
    pub w_max: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            w_min: 20.0,
            w_max: 120.0,
            h_min: 5.0,
            h_max: 45.0,
        }
    }
}

impl SearchBox {
    pub fn unit() -> Self {
        Self {
            w_min: 0.0,
            w_max: 1.0,
            h_min: 0.0,
            h_max: 1.0,
        }
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.w_min, self.h_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.w_max, self.h_max]
    }

    pub fn widths(&self) -> [f64; 2] {
        [self.w_max - self.w_min, self.h_max - self.h_min]
    }

    pub fn center(&self) -> BasisParams {
        BasisParams::new(
            0.5 * (self.w_min + self.w_max),
            0.5 * (self.h_min + self.h_max),
        )
    }

    pub fn diagonal(&self) -> f64 {
        let [dw, dh] = self.widths();
        dw.hypot(dh)
    }

    pub fn is_well_formed(&self) -> bool {
        [self.w_min, self.w_max, self.h_min, self.h_max]
            .iter()
            .all(|v| v.is_finite())
            && self.w_min < self.w_max
            && self.h_min < self.h_max
    }

    pub fn contains(&self, beta: &BasisParams) -> bool {
        validate_basis(beta, self).is_ok()
    }

    pub fn clamp(&self, beta: BasisParams) -> BasisParams {
        BasisParams::new(
            beta.w.clamp(self.w_min, self.w_max),
            beta.h.clamp(self.h_min, self.h_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("basis parameter {axis} = {value} lies outside [{min}, {max}]")]
    OutOfBounds {
        axis: Axis,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("basis parameter {axis} = {value} must be strictly positive and finite")]
    NonPositive { axis: Axis, value: f64 },
    #[error("waypoint parameter n = {0} is too small, need n >= 3")]
    TooFewWaypoints(usize),
    #[error("search box is malformed: need finite bounds with min < max on both axes")]
    MalformedBox,
}

/// Checks `beta` against the closed box. Reports the first offending axis.
pub fn validate_basis(beta: &BasisParams, bounds: &SearchBox) -> Result<(), GeometryError> {
    let axes = [
        (Axis::W, beta.w, bounds.w_min, bounds.w_max),
        (Axis::H, beta.h, bounds.h_min, bounds.h_max),
    ];
    for (axis, value, min, max) in axes {
        if !(min..=max).contains(&value) {
            return Err(GeometryError::OutOfBounds {
                axis,
                value,
                min,
                max,
            });
        }
    }
    Ok(())
}

/// Ordered figure-8 waypoints, traversed by increasing index and closed by
/// wrapping from the last point back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    pub points: Vec<[f64; 2]>,
    pub n: usize,
}

impl WaypointPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// JSON array of `[x, y]` pairs.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.points).expect("finite coordinates always serialize")
    }
}

/// Samples `n + 1` points of the lemniscate `x = W cos s`, `y = H sin s cos s`
/// at `s = 2πi / (n + 1)`.
pub fn waypoints(beta: &BasisParams, n: usize) -> Result<WaypointPath, GeometryError> {
    for (axis, value) in [(Axis::W, beta.w), (Axis::H, beta.h)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(GeometryError::NonPositive { axis, value });
        }
    }
    if n < 3 {
        return Err(GeometryError::TooFewWaypoints(n));
    }
    let divisions = (n + 1) as f64;
    let points = (0..=n)
        .map(|i| {
            let (sin, cos) = (2.0 * PI * i as f64 / divisions).sin_cos();
            [beta.w * cos, beta.h * sin * cos]
        })
        .collect();
    Ok(WaypointPath { points, n })
}

/// Like [`waypoints`] but also enforces the search box.
pub fn waypoints_in(
    beta: &BasisParams,
    n: usize,
    bounds: &SearchBox,
) -> Result<WaypointPath, GeometryError> {
    validate_basis(beta, bounds)?;
    waypoints(beta, n)
}
