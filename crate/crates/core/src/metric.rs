//! Closed-loop lap simulation and the lap-averaged power index
//! `J = k_p / T_f * ∫ v_app^3 dt`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    advance_target, rudder_command, sail_command, ControllerConfig, TrackingState,
};
use crate::dynamics::{
    apparent_wind, step, ControlInput, DynamicsError, SailboatParams, SailboatState, WindParams,
};
use crate::geometry::{
    waypoints, BasisParams, GeometryError, WaypointPath, DEFAULT_WAYPOINT_PARAM,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("lap {lap} does not exist, the log holds {available} complete laps")]
    NoSuchLap { lap: usize, available: usize },
    #[error("lap {lap} is degenerate: {reason}")]
    DegenerateLap { lap: usize, reason: &'static str },
}

/// Why an evaluation of `J(beta)` produced no value.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalFailure {
    #[error("lap_timeout: lap {lap} exceeded {limit} s")]
    LapTimeout { lap: usize, limit: f64 },
    #[error("divergence: {0}")]
    Divergence(#[from] DynamicsError),
    #[error("invalid basis: {0}")]
    InvalidBasis(#[from] GeometryError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
}

impl EvalFailure {
    /// Short machine-readable tag used in CSV output.
    pub fn kind(&self) -> &'static str {
        match self {
            EvalFailure::LapTimeout { .. } => "lap_timeout",
            EvalFailure::Divergence(_) => "divergence",
            EvalFailure::InvalidBasis(_) => "invalid_basis",
            EvalFailure::Metric(_) => "degenerate_lap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: SailboatState,
    pub v_app: f64,
    pub psi_app: f64,
    pub u_r: f64,
    pub u_s: f64,
    pub target_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub samples: Vec<Sample>,
    /// Sample indices at which a lap was completed, ascending.
    pub lap_boundaries: Vec<usize>,
}

impl TrajectoryLog {
    pub fn laps(&self) -> usize {
        self.lap_boundaries.len()
    }

    /// Sample index range `[start, end]` of lap `lap`. Lap 0 starts at the
    /// first sample.
    pub fn lap_span(&self, lap: usize) -> Result<(usize, usize), MetricError> {
        let end = *self.lap_boundaries.get(lap).ok_or(MetricError::NoSuchLap {
            lap,
            available: self.laps(),
        })?;
        let start = if lap == 0 {
            0
        } else {
            self.lap_boundaries[lap - 1]
        };
        Ok((start, end))
    }

    pub fn lap_duration(&self, lap: usize) -> Result<f64, MetricError> {
        let (start, end) = self.lap_span(lap)?;
        Ok(self.samples[end].t - self.samples[start].t)
    }

    pub const CSV_HEADER: &'static str = "t,x,y,psi,r,v,v_app,psi_app,u_r,u_s,target_index,lap";

    /// One row per sample; `lap` is the index of the lap the sample belongs to.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        let mut lap = 0;
        for (k, s) in self.samples.iter().enumerate() {
            let row = [
                s.t,
                s.state.x,
                s.state.y,
                s.state.psi,
                s.state.r,
                s.state.v,
                s.v_app,
                s.psi_app,
                s.u_r,
                s.u_s,
            ];
            for value in row {
                write!(out, "{},", crate::fmt_f64(value))?;
            }
            writeln!(out, "{},{}", s.target_index, lap)?;
            if self.lap_boundaries.get(lap) == Some(&k) {
                lap += 1;
            }
        }
        Ok(())
    }
}

/// Trapezoidal lap average of `k_p v_app^3`.
pub fn lap_power(log: &TrajectoryLog, lap: usize, k_p: f64) -> Result<f64, MetricError> {
    let (start, end) = log.lap_span(lap)?;
    if end <= start {
        return Err(MetricError::DegenerateLap {
            lap,
            reason: "fewer than two samples",
        });
    }
    let samples = &log.samples[start..=end];
    let duration = samples[samples.len() - 1].t - samples[0].t;
    if duration.is_nan() || duration <= 0.0 {
        return Err(MetricError::DegenerateLap {
            lap,
            reason: "non-positive duration",
        });
    }
    let integral: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].v_app.powi(3) + w[1].v_app.powi(3)))
        .sum();
    Ok(k_p * integral / duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Lumped power coefficient.
    pub k_p: f64,
    /// Laps averaged into `J` after the warm-up.
    pub laps: usize,
    /// Laps discarded before averaging.
    pub warmup_laps: usize,
    /// Maximum duration of a single lap [s].
    pub lap_timeout: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            k_p: 1.0,
            laps: 1,
            warmup_laps: 1,
            lap_timeout: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub r: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            psi: 0.0,
            v: 2.0,
            r: 0.0,
        }
    }
}

impl From<InitialState> for SailboatState {
    fn from(s: InitialState) -> Self {
        SailboatState {
            x: s.x,
            y: s.y,
            psi: s.psi,
            r: s.r,
            v: s.v,
            t: 0.0,
        }
    }
}

/// Everything needed to turn a basis parameter into a value of `J`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimulationConfig {
    pub boat: SailboatParams,
    pub wind: WindParams,
    pub controller: ControllerConfig,
    pub metric: MetricConfig,
    pub initial: InitialState,
    pub waypoint_param: usize,
    pub dt: f64,
}

impl SimulationConfig {
    pub fn with_defaults() -> Self {
        Self {
            waypoint_param: DEFAULT_WAYPOINT_PARAM,
            dt: 0.01,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub path: WaypointPath,
    pub log: TrajectoryLog,
    /// The boat came to rest in still air, so nothing changes from then on.
    pub becalmed: bool,
}

/// Flies the closed loop around `path` until `warmup_laps + laps` laps are
/// complete, the boat is becalmed, or a lap times out.
pub fn simulate_path(
    path: WaypointPath,
    cfg: &SimulationConfig,
) -> Result<SimulationOutcome, EvalFailure> {
    let target_laps = cfg.metric.warmup_laps + cfg.metric.laps;
    let mut state = SailboatState::from(cfg.initial);
    let mut tracking = TrackingState::default();
    let mut log = TrajectoryLog::default();
    let mut lap_start = state.t;
    loop {
        let next = advance_target(&state, &path, tracking, &cfg.controller);
        if next.laps_completed > tracking.laps_completed {
            log.lap_boundaries.push(log.samples.len());
            lap_start = state.t;
        }
        tracking = next;

        let app = apparent_wind(&state, &cfg.wind);
        let u = ControlInput {
            u_r: rudder_command(
                &state,
                path.points[tracking.target_index],
                &cfg.controller,
                &cfg.boat,
            ),
            u_s: sail_command(&app, &cfg.controller),
        };
        log.samples.push(Sample {
            t: state.t,
            state,
            v_app: app.v_app,
            psi_app: app.psi_app,
            u_r: u.u_r,
            u_s: u.u_s,
            target_index: tracking.target_index,
        });

        if tracking.laps_completed >= target_laps {
            return Ok(SimulationOutcome {
                path,
                log,
                becalmed: false,
            });
        }
        if state.v == 0.0 && app.v_app == 0.0 {
            return Ok(SimulationOutcome {
                path,
                log,
                becalmed: true,
            });
        }
        if state.t - lap_start > cfg.metric.lap_timeout {
            return Err(EvalFailure::LapTimeout {
                lap: tracking.laps_completed,
                limit: cfg.metric.lap_timeout,
            });
        }
        state = step(&state, &u, &cfg.boat, &cfg.wind, cfg.dt)?;
    }
}

pub fn simulate(
    beta: &BasisParams,
    cfg: &SimulationConfig,
) -> Result<SimulationOutcome, EvalFailure> {
    simulate_path(waypoints(beta, cfg.waypoint_param)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Mean lap power over the scored laps.
    pub j: f64,
    pub lap_powers: Vec<f64>,
    pub lap_times: Vec<f64>,
    pub laps_completed: usize,
    pub becalmed: bool,
}

impl Evaluation {
    pub fn mean_lap_time(&self) -> Option<f64> {
        if self.lap_times.is_empty() {
            None
        } else {
            Some(self.lap_times.iter().sum::<f64>() / self.lap_times.len() as f64)
        }
    }
}

/// Scores a finished simulation: drops the warm-up laps and averages the rest.
pub fn score(
    outcome: &SimulationOutcome,
    metric: &MetricConfig,
) -> Result<Evaluation, EvalFailure> {
    let laps_completed = outcome.log.laps();
    if outcome.becalmed {
        // v_app stays exactly zero from here on, so every future lap scores zero
        return Ok(Evaluation {
            j: 0.0,
            lap_powers: Vec::new(),
            lap_times: Vec::new(),
            laps_completed,
            becalmed: true,
        });
    }
    let scored = metric.warmup_laps..metric.warmup_laps + metric.laps;
    let lap_powers = scored
        .clone()
        .map(|lap| lap_power(&outcome.log, lap, metric.k_p))
        .collect::<Result<Vec<_>, _>>()?;
    let lap_times = scored
        .map(|lap| outcome.log.lap_duration(lap))
        .collect::<Result<Vec<_>, _>>()?;
    let j = lap_powers.iter().sum::<f64>() / lap_powers.len().max(1) as f64;
    Ok(Evaluation {
        j,
        lap_powers,
        lap_times,
        laps_completed,
        becalmed: false,
    })
}

/// The objective queried by the optimizer. Deterministic in `(beta, cfg)`.
pub fn evaluate_basis(
    beta: &BasisParams,
    cfg: &SimulationConfig,
) -> Result<Evaluation, EvalFailure> {
    score(&simulate(beta, cfg)?, &cfg.metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_log(n: usize, v_app: impl Fn(f64) -> f64) -> TrajectoryLog {
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                Sample {
                    t,
                    state: SailboatState::at_rest(0.0, 0.0, 0.0),
                    v_app: v_app(t),
                    psi_app: 0.0,
                    u_r: 0.0,
                    u_s: 0.0,
                    target_index: 0,
                }
            })
            .collect();
        TrajectoryLog {
            samples,
            lap_boundaries: vec![n],
        }
    }

    #[test]
    fn zero_wind_zero_power() {
        assert_eq!(lap_power(&synthetic_log(10, |_| 0.0), 0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_apparent_wind() {
        let j = lap_power(&synthetic_log(7, |_| 2.0), 0, 1.5).unwrap();
        assert!((j - 1.5 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn linear_ramp_against_analytic_integral() {
        // trapezoid error for t^3 on [0, 1] with step h is h^2 / 4 exactly
        for n in [10, 100, 1000] {
            let j = lap_power(&synthetic_log(n, |t| t), 0, 1.0).unwrap();
            let h = 1.0 / n as f64;
            assert!((j - 0.25).abs() <= 0.25 * h * h + 1e-14, "n = {n}, j = {j}");
        }
    }

    #[test]
    fn linear_in_power_coefficient() {
        let log = synthetic_log(50, |t| 1.0 + t.sin());
        let a = lap_power(&log, 0, 0.7).unwrap();
        let b = lap_power(&log, 0, 1.4).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn degenerate_and_missing_laps() {
        let mut log = synthetic_log(4, |t| t);
        assert!(matches!(
            lap_power(&log, 3, 1.0),
            Err(MetricError::NoSuchLap { .. })
        ));
        log.lap_boundaries = vec![0];
        assert!(matches!(
            lap_power(&log, 0, 1.0),
            Err(MetricError::DegenerateLap { .. })
        ));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let log = synthetic_log(3, |t| t);
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], TrajectoryLog::CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 12);
    }

    #[test]
    fn becalmed_boat_scores_zero() {
        let cfg = SimulationConfig {
            wind: WindParams {
                v_max: 0.0,
                ..WindParams::default()
            },
            initial: InitialState {
                v: 0.0,
                ..InitialState::default()
            },
            ..SimulationConfig::with_defaults()
        };
        let eval = evaluate_basis(&BasisParams::new(8.0, 6.0), &cfg).unwrap();
        assert_eq!(eval.j, 0.0);
        assert!(eval.becalmed);
    }

    #[test]
    fn coasting_without_wind_is_bounded_by_initial_energy() {
        let cfg = SimulationConfig {
            wind: WindParams {
                v_max: 0.0,
                ..WindParams::default()
            },
            metric: MetricConfig {
                lap_timeout: 30.0,
                ..MetricConfig::default()
            },
            ..SimulationConfig::with_defaults()
        };
        match evaluate_basis(&BasisParams::new(8.0, 6.0), &cfg) {
            Ok(eval) => assert!(eval.j <= cfg.metric.k_p * cfg.initial.v.powi(3)),
            Err(failure) => assert_eq!(failure.kind(), "lap_timeout"),
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = SimulationConfig::with_defaults();
        let beta = BasisParams::new(9.0, 7.0);
        let a = evaluate_basis(&beta, &cfg).unwrap();
        let b = evaluate_basis(&beta, &cfg).unwrap();
        assert_eq!(a.j.to_bits(), b.j.to_bits());
        assert!(a.j > 0.0);
    }

    #[test]
    fn invalid_basis_is_reported() {
        let err = evaluate_basis(
            &BasisParams::new(-1.0, 2.0),
            &SimulationConfig::with_defaults(),
        )
        .unwrap_err();
        assert_eq!(err.kind(), "invalid_basis");
    }
}
