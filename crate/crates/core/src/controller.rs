//! Waypoint tracking: a feedback-linearizing rudder law over a rate-limited
//! first-order heading reference, and a sail law that holds a fixed angle of
//! attack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{wrap_angle, ApparentWind, ControlInput, SailboatParams, SailboatState};
use crate::geometry::WaypointPath;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid controller setting {name} = {value}: {reason}")]
pub struct ControllerConfigError {
    pub name: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Distance at which the current waypoint counts as reached [m].
    pub capture_radius: f64,
    /// Heading-error gain [1/s].
    pub k_psi: f64,
    /// Yaw-rate tracking gain [1/s]. Four times `k_psi` makes the heading
    /// response critically damped.
    pub k_rate: f64,
    /// Limit on the reference yaw rate [rad/s].
    pub r_max: f64,
    /// Commanded angle of attack magnitude [rad].
    pub alpha_star: f64,
    /// Speed floor used when inverting the yaw dynamics [m/s].
    pub v_eps: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            capture_radius: 8.0,
            k_psi: 2.0,
            k_rate: 8.0,
            r_max: 3.0,
            alpha_star: 0.1,
            v_eps: 0.5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerConfigError> {
        let positive = [
            ("capture_radius", self.capture_radius),
            ("k_psi", self.k_psi),
            ("k_rate", self.k_rate),
            ("r_max", self.r_max),
            ("alpha_star", self.alpha_star),
            ("v_eps", self.v_eps),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ControllerConfigError {
                    name,
                    value,
                    reason: "must be strictly positive",
                });
            }
        }
        if self.alpha_star >= std::f64::consts::FRAC_PI_2 {
            return Err(ControllerConfigError {
                name: "alpha_star",
                value: self.alpha_star,
                reason: "must be below π/2",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrackingState {
    pub target_index: usize,
    pub laps_completed: usize,
}

/// Moves to the next waypoint once the current one is within the capture
/// radius. Wrapping past the last waypoint completes a lap.
pub fn advance_target(
    state: &SailboatState,
    path: &WaypointPath,
    ts: TrackingState,
    cfg: &ControllerConfig,
) -> TrackingState {
    let [tx, ty] = path.points[ts.target_index];
    if (tx - state.x).hypot(ty - state.y) >= cfg.capture_radius {
        return ts;
    }
    if ts.target_index + 1 >= path.len() {
        TrackingState {
            target_index: 0,
            laps_completed: ts.laps_completed + 1,
        }
    } else {
        TrackingState {
            target_index: ts.target_index + 1,
            ..ts
        }
    }
}

pub fn rudder_command(
    state: &SailboatState,
    target: [f64; 2],
    cfg: &ControllerConfig,
    p: &SailboatParams,
) -> f64 {
    let desired = (target[1] - state.y).atan2(target[0] - state.x);
    let error = wrap_angle(desired - state.psi);
    let r_ref = (cfg.k_psi * error).clamp(-cfg.r_max, cfg.r_max);
    let r_dot_cmd = cfg.k_rate * (r_ref - state.r);
    let v = state.v.max(cfg.v_eps);
    let limit = ControlInput::RUDDER_LIMIT;
    (p.inertia / p.k_r * r_dot_cmd / (v * v)).clamp(-limit, limit)
}

/// Sail angle that realizes `|alpha| = alpha_star` on the side the wind comes from.
pub fn sail_command(app: &ApparentWind, cfg: &ControllerConfig) -> f64 {
    if app.psi_app == 0.0 {
        -cfg.alpha_star
    } else {
        app.psi_app - app.psi_app.signum() * cfg.alpha_star
    }
}
