//! Experiment configuration, the `simulate` / `optimize` / `sweep` commands and
//! everything they write to disk.
//!
//! Outputs are a pure function of the resolved configuration: floats are
//! written with round-trip precision and nothing time-dependent goes into a
//! file, so rerunning a command reproduces its files byte for byte.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bo::{run_bo, BoConfig, BoError, BoHistory};
use crate::controller::ControllerConfig;
use crate::dynamics::{SailboatParams, WindParams};
use crate::fmt_f64;
use crate::geometry::{
    validate_basis, waypoints, BasisParams, GeometryError, SearchBox, DEFAULT_WAYPOINT_PARAM,
};
use crate::metric::{
    evaluate_basis, score, simulate, EvalFailure, InitialState, MetricConfig, SimulationConfig,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const HISTORY_CSV: &str = "history.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const WAYPOINTS_JSON: &str = "waypoints.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const BEST_JSON: &str = "best.json";
pub const SWEEP_HISTORY_CSV: &str = "sweep_history.csv";
pub const SWEEP_FINAL_CSV: &str = "sweep_final.csv";

/// Process exit codes. `2` is left to the argument parser for usage errors.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 3;
    pub const INVALID_INPUT: i32 = 4;
    pub const LAP_TIMEOUT: i32 = 5;
    pub const SIMULATION: i32 = 6;
    pub const OPTIMIZATION_ABORT: i32 = 7;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(#[from] GeometryError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] EvalFailure),
    #[error("optimization aborted: {0}")]
    Optimization(#[from] BoError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigRead { .. }
            | HarnessError::ConfigParse { .. }
            | HarnessError::Config(_) => exit_code::CONFIG,
            HarnessError::InvalidInput(_) => exit_code::INVALID_INPUT,
            HarnessError::Simulation(EvalFailure::LapTimeout { .. }) => exit_code::LAP_TIMEOUT,
            HarnessError::Simulation(EvalFailure::InvalidBasis(_)) => exit_code::INVALID_INPUT,
            HarnessError::Simulation(_) => exit_code::SIMULATION,
            HarnessError::Optimization(BoError::InvalidConfig { .. }) => exit_code::CONFIG,
            HarnessError::Optimization(_) => exit_code::OPTIMIZATION_ABORT,
            HarnessError::Io { .. } => exit_code::IO,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Waypoint parameter: the path has `n + 1` points.
    pub n: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let b = SearchBox::default();
        Self {
            n: DEFAULT_WAYPOINT_PARAM,
            w_min: b.w_min,
            w_max: b.w_max,
            h_min: b.h_min,
            h_max: b.h_max,
        }
    }
}

impl GeometryConfig {
    pub fn domain(&self) -> SearchBox {
        SearchBox {
            w_min: self.w_min,
            w_max: self.w_max,
            h_min: self.h_min,
            h_max: self.h_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Fixed RK4 step [s].
    pub dt: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// The complete experiment. Every field has a default, so an empty file is a
/// valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub boat: SailboatParams,
    pub wind: WindParams,
    pub controller: ControllerConfig,
    pub metric: MetricConfig,
    pub initial: InitialState,
    pub geometry: GeometryConfig,
    pub integrator: IntegratorConfig,
    pub bo: BoConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            boat: SailboatParams::default(),
            wind: WindParams::default(),
            controller: ControllerConfig::default(),
            metric: MetricConfig::default(),
            initial: InitialState::default(),
            geometry: GeometryConfig::default(),
            integrator: IntegratorConfig::default(),
            bo: BoConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::ConfigParse {
            path: origin.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::ConfigRead {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let config = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
        self.boat.validate().map_err(|e| config(&e))?;
        self.wind.validate().map_err(|e| config(&e))?;
        self.controller.validate().map_err(|e| config(&e))?;
        let m = &self.metric;
        if !m.k_p.is_finite() || m.k_p < 0.0 {
            return Err(HarnessError::Config(format!(
                "metric.k_p = {} must be finite and nonnegative",
                m.k_p
            )));
        }
        if m.laps == 0 {
            return Err(HarnessError::Config(
                "metric.laps must be at least 1".into(),
            ));
        }
        if !(m.lap_timeout.is_finite() && m.lap_timeout > 0.0) {
            return Err(HarnessError::Config(format!(
                "metric.lap_timeout = {} must be positive",
                m.lap_timeout
            )));
        }
        let i = &self.initial;
        if ![i.x, i.y, i.psi, i.r].iter().all(|v| v.is_finite()) || !(i.v.is_finite() && i.v >= 0.0)
        {
            return Err(HarnessError::Config(
                "initial state must be finite with v >= 0".into(),
            ));
        }
        if self.geometry.n < 3 {
            return Err(config(&GeometryError::TooFewWaypoints(self.geometry.n)));
        }
        let domain = self.geometry.domain();
        if !domain.is_well_formed() || domain.w_min <= 0.0 || domain.h_min <= 0.0 {
            return Err(HarnessError::Config(
                "geometry box needs finite bounds with 0 < min < max on both axes".into(),
            ));
        }
        let dt = self.integrator.dt;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(HarnessError::Config(format!(
                "integrator.dt = {dt} must be positive"
            )));
        }
        self.bo_config().validate()?;
        Ok(())
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            boat: self.boat,
            wind: self.wind,
            controller: self.controller,
            metric: self.metric,
            initial: self.initial,
            waypoint_param: self.geometry.n,
            dt: self.integrator.dt,
        }
    }

    pub fn bo_config(&self) -> BoConfig {
        BoConfig {
            domain: self.geometry.domain(),
            rng_seed: self.seed,
            ..self.bo
        }
    }
}

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<&Path, HarnessError> {
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(format!(
        "cannot create output directory {}",
        dir.display()
    )))?;
    write_file(&dir.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(io_err(format!("cannot write {}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(io_err(format!("cannot create {}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("summary records always serialize");
    text.push('\n');
    text.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub w: f64,
    pub h: f64,
    /// `ok` or the failure tag.
    pub status: String,
    pub j: Option<f64>,
    /// Mean duration of the scored laps [s].
    pub lap_time: Option<f64>,
    pub lap_powers: Vec<f64>,
    pub lap_times: Vec<f64>,
    pub laps_completed: usize,
    pub becalmed: bool,
    pub error: Option<String>,
}

/// Flies one figure-8 and writes `trajectory.csv`, `waypoints.json` and
/// `summary.json`. A failed simulation still writes the summary.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    beta: BasisParams,
) -> Result<SimulationSummary, HarnessError> {
    cfg.validate()?;
    validate_basis(&beta, &cfg.geometry.domain())?;
    let dir = prepare_out_dir(cfg)?;
    let sim = cfg.simulation();
    let path = waypoints(&beta, sim.waypoint_param)?;
    write_file(&dir.join(WAYPOINTS_JSON), path.to_json().as_bytes())?;

    let mut summary = SimulationSummary {
        w: beta.w,
        h: beta.h,
        status: "ok".into(),
        j: None,
        lap_time: None,
        lap_powers: Vec::new(),
        lap_times: Vec::new(),
        laps_completed: 0,
        becalmed: false,
        error: None,
    };
    let result = simulate(&beta, &sim).and_then(|outcome| {
        let evaluation = score(&outcome, &sim.metric)?;
        Ok((outcome, evaluation))
    });
    match result {
        Ok((outcome, evaluation)) => {
            let trajectory = dir.join(TRAJECTORY_CSV);
            let mut out = create(&trajectory)?;
            outcome
                .log
                .write_csv(&mut out)
                .map_err(io_err(format!("cannot write {}", trajectory.display())))?;
            summary.j = Some(evaluation.j);
            summary.lap_time = evaluation.mean_lap_time();
            summary.laps_completed = evaluation.laps_completed;
            summary.becalmed = evaluation.becalmed;
            summary.lap_powers = evaluation.lap_powers;
            summary.lap_times = evaluation.lap_times;
            write_file(&dir.join(SUMMARY_JSON), &to_json(&summary))?;
            Ok(summary)
        }
        Err(failure) => {
            summary.status = failure.kind().into();
            summary.error = Some(failure.to_string());
            write_file(&dir.join(SUMMARY_JSON), &to_json(&summary))?;
            Err(failure.into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRecord {
    pub evaluation: usize,
    pub w: f64,
    pub h: f64,
    pub j: f64,
}

/// Runs the optimizer with the sailboat objective and writes `history.csv`,
/// one `waypoints_iter<k>.json` per evaluation and `best.json`.
pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<BoHistory, HarnessError> {
    cfg.validate()?;
    let dir = prepare_out_dir(cfg)?;
    let sim = cfg.simulation();
    let history = run_bo(
        |_, beta| evaluate_basis(beta, &sim).map(|e| e.j),
        &cfg.bo_config(),
    )?;

    let history_path = dir.join(HISTORY_CSV);
    history
        .write_csv(create(&history_path)?)
        .map_err(|e| HarnessError::Io {
            context: format!("cannot write {}", history_path.display()),
            source: e.into(),
        })?;
    for r in &history.records {
        let path = waypoints(&r.beta, sim.waypoint_param)?;
        write_file(
            &dir.join(format!("waypoints_iter{}.json", r.evaluation)),
            path.to_json().as_bytes(),
        )?;
    }
    let (beta, j) = history.best().expect("run_bo returns at least one success");
    let evaluation = history
        .records
        .iter()
        .find(|r| r.outcome == Ok(j) && r.beta == beta)
        .map_or(0, |r| r.evaluation);
    let best = BestRecord {
        evaluation,
        w: beta.w,
        h: beta.h,
        j,
    };
    write_file(&dir.join(BEST_JSON), &to_json(&best))?;
    Ok(history)
}

/// Outcome of one optimization inside a sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub seed: u64,
    pub result: Result<BoHistory, HarnessError>,
}

impl SweepRun {
    pub fn best(&self) -> Option<(BasisParams, f64)> {
        self.result.as_ref().ok().and_then(BoHistory::best)
    }
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

/// Runs [`cmd_optimize`] once per seed, each into `seed_<s>/`, in parallel.
/// A failing run is recorded and the sweep continues. Writes
/// `sweep_history.csv` (every evaluation of every run) and `sweep_final.csv`
/// (the incumbent of each run).
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRun>, HarnessError> {
    cfg.validate()?;
    if cfg.sweep.seeds.len() < 2 {
        return Err(HarnessError::Config(
            "sweep.seeds needs at least two seeds".into(),
        ));
    }
    let mut unique = cfg.sweep.seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != cfg.sweep.seeds.len() {
        return Err(HarnessError::Config("sweep.seeds must not repeat".into()));
    }
    let dir = prepare_out_dir(cfg)?;
    let runs: Vec<SweepRun> = cfg
        .sweep
        .seeds
        .par_iter()
        .map(|&seed| {
            let run_cfg = ExperimentConfig {
                seed,
                out_dir: seed_dir(dir, seed),
                ..cfg.clone()
            };
            SweepRun {
                seed,
                result: cmd_optimize(&run_cfg),
            }
        })
        .collect();

    let csv_err = |path: &Path| {
        let context = format!("cannot write {}", path.display());
        move |e: csv::Error| HarnessError::Io {
            context,
            source: e.into(),
        }
    };
    let history_path = dir.join(SWEEP_HISTORY_CSV);
    let mut w = csv::Writer::from_writer(create(&history_path)?);
    w.write_record(["seed", "evaluation", "w", "h", "status", "j", "best_so_far"])
        .map_err(csv_err(&history_path))?;
    for run in &runs {
        let Ok(history) = &run.result else { continue };
        for r in &history.records {
            let (status, j) = match &r.outcome {
                Ok(j) => ("ok".to_owned(), fmt_f64(*j)),
                Err(kind) => (kind.clone(), String::new()),
            };
            w.write_record([
                run.seed.to_string(),
                r.evaluation.to_string(),
                fmt_f64(r.beta.w),
                fmt_f64(r.beta.h),
                status,
                j,
                r.best_so_far.map(fmt_f64).unwrap_or_default(),
            ])
            .map_err(csv_err(&history_path))?;
        }
    }
    w.flush()
        .map_err(io_err(format!("cannot write {}", history_path.display())))?;

    let final_path = dir.join(SWEEP_FINAL_CSV);
    let mut w = csv::Writer::from_writer(create(&final_path)?);
    w.write_record(["seed", "status", "w", "h", "j", "error"])
        .map_err(csv_err(&final_path))?;
    for run in &runs {
        let record = match (&run.result, run.best()) {
            (Ok(_), Some((beta, j))) => [
                run.seed.to_string(),
                "ok".into(),
                fmt_f64(beta.w),
                fmt_f64(beta.h),
                fmt_f64(j),
                String::new(),
            ],
            (Ok(_), None) => [
                run.seed.to_string(),
                "no_success".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ],
            (Err(e), _) => [
                run.seed.to_string(),
                "failed".into(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ],
        };
        w.write_record(record).map_err(csv_err(&final_path))?;
    }
    w.flush()
        .map_err(io_err(format!("cannot write {}", final_path.display())))?;
    Ok(runs)
}

/// Largest minus smallest final incumbent along each axis over the successful runs.
pub fn incumbent_spread(runs: &[SweepRun]) -> Option<[f64; 2]> {
    let finals: Vec<BasisParams> = runs
        .iter()
        .filter_map(|r| r.best().map(|(b, _)| b))
        .collect();
    if finals.is_empty() {
        return None;
    }
    let spread = |f: fn(&BasisParams) -> f64| {
        let (lo, hi) = finals
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    };
    Some([spread(|b| b.w), spread(|b| b.h)])
}
