//! Expected-improvement acquisition and the Bayesian-optimization loop.
//!
//! The loop evaluates a seeded Latin-hypercube design, then repeatedly refits
//! the GP on every successful evaluation, maximizes expected improvement over a
//! candidate set, and evaluates the winner. Failed evaluations never enter the
//! GP; instead the proposer keeps a small exclusion ball around each of them.

use std::cmp::Ordering;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::fmt_f64;
use crate::geometry::{BasisParams, SearchBox};
use crate::gp::{fit_hyperparameters, Dataset, FitOptions, FittedGp, Hyperparams, LogBounds};
use crate::metric::EvalFailure;
use crate::sampling::latin_hypercube;

/// Closed-form `E[max(0, X − j_max)]` for `X ~ N(mu, sigma²)`.
pub fn expected_improvement(mu: f64, sigma: f64, j_max: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::standard();
    let diff = mu - j_max;
    let z = diff / sigma;
    (diff * normal.cdf(z) + sigma * normal.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoError {
    #[error("invalid optimizer setting {name}: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
    #[error("all {} initial evaluations failed: {}", .0.len(), .0.join("; "))]
    AllInitialFailed(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    /// Search box. Not part of the serialized form: experiment configs carry
    /// it with the geometry settings.
    #[serde(skip)]
    pub domain: SearchBox,
    /// Size of the Latin-hypercube initial design.
    pub n_init: usize,
    /// Number of acquisition-driven evaluations after the initial design.
    pub n_iter: usize,
    /// Candidate grid points per axis.
    pub acq_grid: usize,
    /// Coordinate-refinement iterations from the best candidate.
    pub acq_refine_steps: usize,
    /// Uniform random candidates added to the grid.
    pub acq_random: usize,
    /// Random perturbations per observed input; zero also drops the pairwise
    /// midpoints.
    pub acq_perturb: usize,
    /// Hyperparameter-fit starting points per iteration.
    pub restarts: usize,
    /// Radius of the exclusion ball around failed evaluations, as a fraction
    /// of the box diagonal.
    pub failure_radius: f64,
    /// Not serialized; experiment configs carry one top-level seed.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            domain: SearchBox::default(),
            n_init: 5,
            n_iter: 20,
            acq_grid: 50,
            acq_refine_steps: 30,
            acq_random: 256,
            acq_perturb: 4,
            restarts: 10,
            failure_radius: 0.02,
            rng_seed: 1,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        let invalid = |name, reason: &str| {
            Err(BoError::InvalidConfig {
                name,
                reason: reason.to_owned(),
            })
        };
        if !self.domain.is_well_formed() {
            return invalid("domain", "need finite bounds with min < max on both axes");
        }
        if self.n_init == 0 {
            return invalid("n_init", "must be at least 1");
        }
        if self.acq_grid < 2 {
            return invalid("acq_grid", "must be at least 2 per axis");
        }
        if self.restarts == 0 {
            return invalid("restarts", "must be at least 1");
        }
        if !(self.failure_radius.is_finite() && self.failure_radius >= 0.0) {
            return invalid("failure_radius", "must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Where a proposal came from and how promising it looked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub beta: BasisParams,
    pub ei: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    beta: BasisParams,
    ei: f64,
    variance: f64,
}

/// Higher EI wins, then higher variance, then the lexicographically smaller point.
fn better(a: &Scored, b: &Scored) -> bool {
    let order =
        a.ei.total_cmp(&b.ei)
            .then(a.variance.total_cmp(&b.variance))
            .then(b.beta.w.total_cmp(&a.beta.w))
            .then(b.beta.h.total_cmp(&a.beta.h));
    order == Ordering::Greater
}

fn excluded(beta: &BasisParams, failures: &[BasisParams], radius: f64) -> bool {
    failures
        .iter()
        .any(|f| (beta.w - f.w).hypot(beta.h - f.h) <= radius)
}

/// Point of the candidate set farthest (in box-normalized distance) from every
/// observed or failed input; the box center when there is nothing yet.
fn space_filling(
    candidates: &[BasisParams],
    occupied: &[BasisParams],
    domain: &SearchBox,
) -> BasisParams {
    if occupied.is_empty() {
        return domain.center();
    }
    let [dw, dh] = domain.widths();
    let clearance = |c: &BasisParams| {
        occupied
            .iter()
            .map(|o| ((c.w - o.w) / dw).hypot((c.h - o.h) / dh))
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = candidates[0];
    let mut best_clearance = clearance(&best);
    for c in &candidates[1..] {
        let d = clearance(c);
        if d > best_clearance {
            best = *c;
            best_clearance = d;
        }
    }
    best
}

fn candidate_set<R: Rng + ?Sized>(gp: &FittedGp, cfg: &BoConfig, rng: &mut R) -> Vec<BasisParams> {
    let domain = &cfg.domain;
    let [dw, dh] = domain.widths();
    let g = cfg.acq_grid;
    let mut out = Vec::with_capacity(g * g + cfg.acq_random);
    for i in 0..g {
        for j in 0..g {
            let u = i as f64 / (g - 1) as f64;
            let v = j as f64 / (g - 1) as f64;
            out.push(BasisParams::new(
                domain.w_min + u * dw,
                domain.h_min + v * dh,
            ));
        }
    }
    for _ in 0..cfg.acq_random {
        out.push(BasisParams::new(
            rng.random_range(domain.w_min..=domain.w_max),
            rng.random_range(domain.h_min..=domain.h_max),
        ));
    }
    if cfg.acq_perturb == 0 {
        return out;
    }
    let inputs = gp.dataset().inputs();
    for (k, a) in inputs.iter().enumerate() {
        for b in &inputs[k + 1..] {
            out.push(BasisParams::new(0.5 * (a.w + b.w), 0.5 * (a.h + b.h)));
        }
        for _ in 0..cfg.acq_perturb {
            let p = BasisParams::new(
                a.w + 0.05 * dw * rng.random_range(-1.0..=1.0),
                a.h + 0.05 * dh * rng.random_range(-1.0..=1.0),
            );
            out.push(domain.clamp(p));
        }
    }
    out
}

/// Maximizes expected improvement over the domain.
///
/// Scores a uniform grid, random points, midpoints of observed pairs and
/// perturbations of observed inputs, then refines the best candidate by
/// coordinate search with shrinking steps. Points within the exclusion ball of
/// a failed evaluation are never proposed. When EI is zero everywhere the
/// result is the most isolated candidate instead.
pub fn propose_next<R: Rng + ?Sized>(
    gp: &FittedGp,
    cfg: &BoConfig,
    j_max: f64,
    failures: &[BasisParams],
    rng: &mut R,
) -> Proposal {
    let domain = cfg.domain;
    let radius = cfg.failure_radius * domain.diagonal();
    let candidates: Vec<BasisParams> = candidate_set(gp, cfg, rng)
        .into_iter()
        .filter(|c| !excluded(c, failures, radius))
        .collect();
    let score = |beta: BasisParams| {
        let p = gp.predict(&beta);
        Scored {
            beta,
            ei: expected_improvement(p.mean, p.std(), j_max),
            variance: p.variance,
        }
    };
    let scored: Vec<Scored> = candidates.par_iter().map(|c| score(*c)).collect();

    let mut occupied: Vec<BasisParams> = gp.dataset().inputs().to_vec();
    occupied.extend_from_slice(failures);
    let Some(mut best) = scored
        .iter()
        .copied()
        .reduce(|a, b| if better(&b, &a) { b } else { a })
    else {
        // every candidate excluded: nothing better than the center
        let beta = domain.center();
        return Proposal {
            beta,
            ..to_proposal(score(beta))
        };
    };
    if best.ei <= 0.0 {
        let beta = space_filling(&candidates, &occupied, &domain);
        return to_proposal(score(beta));
    }

    let [dw, dh] = domain.widths();
    let spacing = 1.0 / (cfg.acq_grid - 1) as f64;
    let mut step = [0.5 * spacing * dw, 0.5 * spacing * dh];
    for _ in 0..cfg.acq_refine_steps {
        let mut moved = false;
        for (axis, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
            let mut a = best.beta.as_array();
            a[axis] += sign * step[axis];
            let trial = domain.clamp(BasisParams::from_array(a));
            if trial == best.beta || excluded(&trial, failures, radius) {
                continue;
            }
            let s = score(trial);
            if better(&s, &best) {
                best = s;
                moved = true;
            }
        }
        if !moved {
            step = [0.5 * step[0], 0.5 * step[1]];
        }
    }
    to_proposal(best)
}

fn to_proposal(s: Scored) -> Proposal {
    Proposal {
        beta: s.beta,
        ei: s.ei,
        variance: s.variance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Acquisition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoRecord {
    /// Zero-based evaluation index across both phases.
    pub evaluation: usize,
    pub phase: Phase,
    pub beta: BasisParams,
    /// The objective value, or the failure tag.
    pub outcome: Result<f64, String>,
    /// Best successful value up to and including this record.
    pub best_so_far: Option<f64>,
    /// Hyperparameters of the GP that proposed this point.
    pub theta: Option<Hyperparams>,
    /// Expected improvement at the proposal.
    pub ei: Option<f64>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoHistory {
    pub records: Vec<BoRecord>,
}

impl BoHistory {
    pub const CSV_HEADER: [&'static str; 12] = [
        "evaluation",
        "phase",
        "w",
        "h",
        "status",
        "j",
        "best_so_far",
        "sigma0",
        "lambda_w",
        "lambda_h",
        "sigma_eps",
        "ei",
    ];

    pub fn best(&self) -> Option<(BasisParams, f64)> {
        let mut best: Option<(BasisParams, f64)> = None;
        for r in &self.records {
            if let Ok(j) = r.outcome {
                if best.is_none_or(|(_, b)| j > b) {
                    best = Some((r.beta, j));
                }
            }
        }
        best
    }

    pub fn best_so_far(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.best_so_far)
    }

    /// Appends `record`, filling in the running best.
    fn push(&mut self, mut record: BoRecord) {
        let previous = self.best_so_far();
        record.best_so_far = match (&record.outcome, previous) {
            (Ok(j), Some(b)) => Some(j.max(b)),
            (Ok(j), None) => Some(*j),
            (Err(_), b) => b,
        };
        self.records.push(record);
    }

    /// One row per evaluation. Wall time is left out so that the file is a
    /// pure function of configuration and seed.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            let (status, j) = match &r.outcome {
                Ok(j) => ("ok".to_owned(), fmt_f64(*j)),
                Err(kind) => (kind.clone(), String::new()),
            };
            let phase = match r.phase {
                Phase::Init => "init",
                Phase::Acquisition => "acquisition",
            };
            w.write_record([
                r.evaluation.to_string(),
                phase.to_owned(),
                fmt_f64(r.beta.w),
                fmt_f64(r.beta.h),
                status,
                j,
                opt(r.best_so_far),
                opt(r.theta.map(|t| t.sigma0)),
                opt(r.theta.map(|t| t.lengths[0])),
                opt(r.theta.map(|t| t.lengths[1])),
                opt(r.theta.map(|t| t.sigma_eps)),
                opt(r.ei),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fits hyperparameters on the successful evaluations and conditions the GP.
/// Falls back to the prior hyperparameters with fewer than two points or if
/// fitting breaks down numerically.
fn train(
    inputs: &[BasisParams],
    targets: &[f64],
    cfg: &BoConfig,
    warm: Option<&Hyperparams>,
    seed: u64,
) -> Result<FittedGp, crate::gp::GpError> {
    let data = Dataset::new(inputs.to_vec(), targets)?;
    let prior = Hyperparams::prior(&data, &cfg.domain);
    let theta = if data.len() >= 2 {
        let bounds = LogBounds::for_data(&data, &cfg.domain);
        let options = FitOptions {
            restarts: cfg.restarts,
            seed,
            ..FitOptions::default()
        };
        fit_hyperparameters(&data, &bounds, warm, &options).unwrap_or(prior)
    } else {
        prior
    };
    FittedGp::new(data.clone(), theta).or_else(|_| FittedGp::new(data, prior))
}

/// Runs the optimization loop against `objective`.
///
/// Makes exactly `n_init + n_iter` objective calls. Failures are recorded but
/// never become the incumbent. Errors only if the configuration is invalid or
/// every initial evaluation fails.
pub fn run_bo<F>(mut objective: F, cfg: &BoConfig) -> Result<BoHistory, BoError>
where
    F: FnMut(usize, &BasisParams) -> Result<f64, EvalFailure>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut history = BoHistory::default();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut failures = Vec::new();
    let mut failure_messages = Vec::new();

    let mut evaluate = |k: usize,
                        beta: BasisParams,
                        inputs: &mut Vec<BasisParams>,
                        targets: &mut Vec<f64>,
                        failures: &mut Vec<BasisParams>| {
        match objective(k, &beta) {
            Ok(j) => {
                inputs.push(beta);
                targets.push(j);
                Ok(j)
            }
            Err(e) => {
                failures.push(beta);
                Err(e)
            }
        }
    };

    let design = latin_hypercube(cfg.n_init, cfg.domain.lower(), cfg.domain.upper(), &mut rng);
    for (k, point) in design.into_iter().enumerate() {
        let beta = BasisParams::from_array(point);
        let started = Instant::now();
        let outcome = evaluate(k, beta, &mut inputs, &mut targets, &mut failures).map_err(|e| {
            failure_messages.push(format!("{beta}: {e}"));
            e.kind().to_owned()
        });
        history.push(BoRecord {
            evaluation: k,
            phase: Phase::Init,
            beta,
            outcome,
            best_so_far: None,
            theta: None,
            ei: None,
            wall_time: started.elapsed(),
        });
    }
    if inputs.is_empty() {
        return Err(BoError::AllInitialFailed(failure_messages));
    }

    let mut theta: Option<Hyperparams> = None;
    for i in 0..cfg.n_iter {
        let k = cfg.n_init + i;
        let started = Instant::now();
        let fit_seed = rng.random::<u64>();
        let j_max = history.best_so_far().expect("at least one success");
        let proposal = match train(&inputs, &targets, cfg, theta.as_ref(), fit_seed) {
            Ok(gp) => {
                theta = Some(*gp.theta());
                propose_next(&gp, cfg, j_max, &failures, &mut rng)
            }
            Err(_) => {
                // a GP that cannot be conditioned at all: explore instead
                let mut occupied = inputs.clone();
                occupied.extend_from_slice(&failures);
                let pool: Vec<_> = latin_hypercube(
                    cfg.acq_random.max(1),
                    cfg.domain.lower(),
                    cfg.domain.upper(),
                    &mut rng,
                )
                .into_iter()
                .map(BasisParams::from_array)
                .collect();
                Proposal {
                    beta: space_filling(&pool, &occupied, &cfg.domain),
                    ei: 0.0,
                    variance: 0.0,
                }
            }
        };
        let beta = proposal.beta;
        let outcome = evaluate(k, beta, &mut inputs, &mut targets, &mut failures)
            .map_err(|e| e.kind().to_owned());
        history.push(BoRecord {
            evaluation: k,
            phase: Phase::Acquisition,
            beta,
            outcome,
            best_so_far: None,
            theta,
            ei: Some(proposal.ei),
            wall_time: started.elapsed(),
        });
    }
    Ok(history)
}
