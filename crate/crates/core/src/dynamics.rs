//! Planar sailboat model, wind-window profile and a fixed-step RK4 integrator.
//!
//! The hull velocity is always aligned with the heading `psi`. Rotation is
//! driven by the rudder through `r_dot = (k_r / I_R) v^2 u_r`, translation by
//! the projection of sail lift and drag onto the heading.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state diverged at t = {t}: {field} is not finite")]
    Divergence { t: f64, field: &'static str },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Integrated state of the hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SailboatState {
    pub x: f64,
    pub y: f64,
    /// Heading [rad].
    pub psi: f64,
    /// Yaw rate [rad/s].
    pub r: f64,
    /// Speed along the heading [m/s], never negative.
    pub v: f64,
    pub t: f64,
}

impl SailboatState {
    pub fn at_rest(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi,
            r: 0.0,
            v: 0.0,
            t: 0.0,
        }
    }

    fn check_finite(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("x", self.x),
            ("y", self.y),
            ("psi", self.psi),
            ("r", self.r),
            ("v", self.v),
            ("t", self.t),
        ];
        match fields.iter().find(|(_, value)| !value.is_finite()) {
            Some((field, _)) => Err(DynamicsError::Divergence { t: self.t, field }),
            None => Ok(()),
        }
    }
}

/// Lumped physical coefficients of the hull and sail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SailboatParams {
    /// Rotational aerodynamic damping coefficient.
    pub k_r: f64,
    /// Hull inertia [kg m^2].
    pub inertia: f64,
    /// Mass [kg].
    pub mass: f64,
    /// Lift sensitivity.
    pub k_l: f64,
    /// Drag coefficient at zero angle of attack.
    pub k_d0: f64,
    /// Drag sensitivity to the squared angle of attack.
    pub k_d1: f64,
}

impl Default for SailboatParams {
    fn default() -> Self {
        Self {
            k_r: 1.0,
            inertia: 1.0,
            mass: 1.0,
            k_l: 1.0,
            k_d0: 0.01,
            k_d1: 0.5,
        }
    }
}

impl SailboatParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("k_r", self.k_r),
            ("inertia", self.inertia),
            ("mass", self.mass),
            ("k_l", self.k_l),
            ("k_d0", self.k_d0),
            ("k_d1", self.k_d1),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidParameter {
                    name,
                    value,
                    reason: "must be strictly positive",
                });
            }
        }
        Ok(())
    }
}

/// Steady wind with a cosine profile across the window `|x| <= half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindParams {
    /// Peak wind speed at `x = 0` [m/s].
    pub v_max: f64,
    /// Half-width `R` of the wind window [m].
    pub half_width: f64,
    /// Unit vector the wind blows toward.
    pub direction: [f64; 2],
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            v_max: 5.0,
            half_width: 100.0,
            direction: [0.0, -1.0],
        }
    }
}

impl WindParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.v_max.is_finite() && self.v_max >= 0.0) {
            return Err(DynamicsError::InvalidParameter {
                name: "v_max",
                value: self.v_max,
                reason: "must be non-negative",
            });
        }
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(DynamicsError::InvalidParameter {
                name: "half_width",
                value: self.half_width,
                reason: "must be strictly positive",
            });
        }
        let norm = self.direction[0].hypot(self.direction[1]);
        if norm.is_nan() || (norm - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::InvalidParameter {
                name: "direction",
                value: norm,
                reason: "must be a unit vector",
            });
        }
        Ok(())
    }
}

/// Apparent wind seen from the hull.
///
/// `psi_app` is the bearing the apparent wind comes *from*, measured from the
/// heading: `0` is a head wind, `±π/2` a beam wind, `π` a tail wind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApparentWind {
    pub v_app: f64,
    pub psi_app: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Rudder angle [rad], within `[-π/2, π/2]`.
    pub u_r: f64,
    /// Sail angle [rad].
    pub u_s: f64,
}

impl ControlInput {
    pub const RUDDER_LIMIT: f64 = FRAC_PI_2;
}

/// Time derivative of the integrated part of [`SailboatState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub x_dot: f64,
    pub y_dot: f64,
    pub psi_dot: f64,
    pub r_dot: f64,
    pub v_dot: f64,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

pub fn wind_speed(x: f64, wind: &WindParams) -> f64 {
    let r = wind.half_width;
    // the profile vanishes at |x| = R, where cos(±π/2) is not exactly zero in floating point
    if x.abs() < r {
        (wind.v_max * (PI * x / (2.0 * r)).cos()).max(0.0)
    } else {
        0.0
    }
}

pub fn apparent_wind(state: &SailboatState, wind: &WindParams) -> ApparentWind {
    let w = wind_speed(state.x, wind);
    let (sin_psi, cos_psi) = state.psi.sin_cos();
    let ax = w * wind.direction[0] - state.v * cos_psi;
    let ay = w * wind.direction[1] - state.v * sin_psi;
    let v_app = ax.hypot(ay);
    let psi_app = if ax == 0.0 && ay == 0.0 {
        0.0
    } else {
        // bearing of the source, i.e. of the reversed flow vector
        wrap_angle((-ay).atan2(-ax) - state.psi)
    };
    ApparentWind { v_app, psi_app }
}

/// Lift and drag on the sail for angle of attack `alpha`.
pub fn aero_forces(alpha: f64, v_app: f64, p: &SailboatParams) -> (f64, f64) {
    let q = v_app * v_app;
    let lift = p.k_l * alpha * q;
    let drag = (p.k_d0 + p.k_d1 * alpha * alpha) * q;
    (lift, drag)
}

pub fn derivatives(
    state: &SailboatState,
    u: &ControlInput,
    p: &SailboatParams,
    wind: &WindParams,
) -> StateDerivative {
    let app = apparent_wind(state, wind);
    let alpha = app.psi_app - u.u_s;
    let (lift, drag) = aero_forces(alpha, app.v_app, p);
    let (sin_app, cos_app) = app.psi_app.sin_cos();
    let (sin_psi, cos_psi) = state.psi.sin_cos();
    StateDerivative {
        x_dot: state.v * cos_psi,
        y_dot: state.v * sin_psi,
        psi_dot: state.r,
        r_dot: p.k_r / p.inertia * state.v * state.v * u.u_r,
        v_dot: (lift * sin_app - drag * cos_app) / p.mass,
    }
}

fn offset(state: &SailboatState, d: &StateDerivative, h: f64) -> SailboatState {
    SailboatState {
        x: state.x + h * d.x_dot,
        y: state.y + h * d.y_dot,
        psi: state.psi + h * d.psi_dot,
        r: state.r + h * d.r_dot,
        v: state.v + h * d.v_dot,
        t: state.t + h,
    }
}

/// One classical RK4 step with the controls held over the interval.
///
/// Speed is clamped at zero after the step and the heading is left unwrapped
/// so that it stays continuous along the trajectory.
pub fn step(
    state: &SailboatState,
    u: &ControlInput,
    p: &SailboatParams,
    wind: &WindParams,
    dt: f64,
) -> Result<SailboatState, DynamicsError> {
    step_with(state, dt, |s| derivatives(s, u, p, wind))
}

/// RK4 over an arbitrary right-hand side. Shared by [`step`] and by tests
/// that integrate modified vector fields.
pub fn step_with<F>(
    state: &SailboatState,
    dt: f64,
    mut rhs: F,
) -> Result<SailboatState, DynamicsError>
where
    F: FnMut(&SailboatState) -> StateDerivative,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let k1 = rhs(state);
    let k2 = rhs(&offset(state, &k1, 0.5 * dt));
    let k3 = rhs(&offset(state, &k2, 0.5 * dt));
    let k4 = rhs(&offset(state, &k3, dt));
    let blend = |a: f64, b: f64, c: f64, d: f64| dt / 6.0 * (a + 2.0 * b + 2.0 * c + d);
    let next = SailboatState {
        x: state.x + blend(k1.x_dot, k2.x_dot, k3.x_dot, k4.x_dot),
        y: state.y + blend(k1.y_dot, k2.y_dot, k3.y_dot, k4.y_dot),
        psi: state.psi + blend(k1.psi_dot, k2.psi_dot, k3.psi_dot, k4.psi_dot),
        r: state.r + blend(k1.r_dot, k2.r_dot, k3.r_dot, k4.r_dot),
        v: (state.v + blend(k1.v_dot, k2.v_dot, k3.v_dot, k4.v_dot)).max(0.0),
        t: state.t + dt,
    };
    next.check_finite()?;
    Ok(next)
}
