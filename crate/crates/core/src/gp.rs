//! Gaussian-process surrogate over basis parameters.
//!
//! Squared-exponential kernel with one length scale per axis, Gaussian noise,
//! hyperparameters fitted by maximizing the log marginal likelihood in log
//! space. Targets are centered on their mean before fitting; the offset is
//! added back to every prediction.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BasisParams, SearchBox};
use crate::sampling::latin_hypercube;

/// Relative diagonal jitter, tried in order until the factorization succeeds.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("covariance matrix is not positive definite even with jitter {jitter:e}·σ0²")]
    NotPositiveDefinite { jitter: f64 },
    #[error("dataset has {inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("dataset contains a non-finite value")]
    NonFinite,
    #[error("need at least {needed} observations, have {have}")]
    TooFewPoints { needed: usize, have: usize },
}

/// Observations with centered targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<BasisParams>,
    targets: Vec<f64>,
    mean_offset: f64,
}

impl Dataset {
    /// Centers `raw_targets` on their mean.
    pub fn new(inputs: Vec<BasisParams>, raw_targets: &[f64]) -> Result<Self, GpError> {
        let offset = if raw_targets.is_empty() {
            0.0
        } else {
            raw_targets.iter().sum::<f64>() / raw_targets.len() as f64
        };
        Self::with_offset(inputs, raw_targets, offset)
    }

    pub fn with_offset(
        inputs: Vec<BasisParams>,
        raw_targets: &[f64],
        mean_offset: f64,
    ) -> Result<Self, GpError> {
        if inputs.len() != raw_targets.len() {
            return Err(GpError::LengthMismatch {
                inputs: inputs.len(),
                targets: raw_targets.len(),
            });
        }
        let finite = inputs.iter().all(|b| b.w.is_finite() && b.h.is_finite())
            && raw_targets.iter().all(|y| y.is_finite())
            && mean_offset.is_finite();
        if !finite {
            return Err(GpError::NonFinite);
        }
        Ok(Self {
            inputs,
            targets: raw_targets.iter().map(|y| y - mean_offset).collect(),
            mean_offset,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[BasisParams] {
        &self.inputs
    }

    /// Centered targets.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    /// Population standard deviation of the targets.
    pub fn target_std(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        let n = self.targets.len() as f64;
        let mean = self.targets.iter().sum::<f64>() / n;
        (self.targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Scale used to place the signal and noise bounds. Falls back to a tiny
    /// multiple of the offset when all targets coincide.
    pub fn target_scale(&self) -> f64 {
        let std = self.target_std();
        if std > 0.0 {
            std
        } else {
            1e-8 * self.mean_offset.abs().max(1.0)
        }
    }
}

/// Kernel and noise hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma0: f64,
    pub lengths: [f64; 2],
    pub sigma_eps: f64,
}

impl Hyperparams {
    /// `(ln σ0, ln Λ_w, ln Λ_h, ln σ_ε)`.
    pub fn to_log(&self) -> [f64; 4] {
        [
            self.sigma0.ln(),
            self.lengths[0].ln(),
            self.lengths[1].ln(),
            self.sigma_eps.ln(),
        ]
    }

    pub fn from_log(p: [f64; 4]) -> Self {
        Self {
            sigma0: p[0].exp(),
            lengths: [p[1].exp(), p[2].exp()],
            sigma_eps: p[3].exp(),
        }
    }

    /// Fixed hyperparameters used before there is enough data to fit: the
    /// target spread as signal scale, a quarter of each box width as length
    /// scale, and a noise of one thousandth of the signal.
    pub fn prior(data: &Dataset, domain: &SearchBox) -> Self {
        let std = data.target_std();
        let sigma0 = if data.len() >= 2 && std > 0.0 {
            std
        } else {
            data.mean_offset().abs().max(1.0)
        };
        let [dw, dh] = domain.widths();
        Self {
            sigma0,
            lengths: [0.25 * dw, 0.25 * dh],
            sigma_eps: 1e-3 * sigma0,
        }
    }
}

pub fn se_kernel(a: &BasisParams, b: &BasisParams, theta: &Hyperparams) -> f64 {
    let dw = (a.w - b.w) / theta.lengths[0];
    let dh = (a.h - b.h) / theta.lengths[1];
    theta.sigma0 * theta.sigma0 * (-0.5 * (dw * dw + dh * dh)).exp()
}

/// `K + σ_ε² I` with jitter, factored.
struct Factored {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

fn covariance(inputs: &[BasisParams], theta: &Hyperparams, jitter: f64) -> DMatrix<f64> {
    let t = inputs.len();
    let s2 = theta.sigma0 * theta.sigma0;
    let mut k = DMatrix::from_fn(t, t, |i, j| se_kernel(&inputs[i], &inputs[j], theta));
    for i in 0..t {
        k[(i, i)] += jitter * s2 + theta.sigma_eps * theta.sigma_eps;
    }
    k
}

fn factor(inputs: &[BasisParams], theta: &Hyperparams) -> Result<Factored, GpError> {
    for jitter in JITTER_LADDER {
        if let Some(chol) = covariance(inputs, theta, jitter).cholesky() {
            return Ok(Factored { chol, jitter });
        }
    }
    Err(GpError::NotPositiveDefinite {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// Log marginal likelihood of the centered targets and its gradient with
/// respect to `(ln σ0, ln Λ_w, ln Λ_h, ln σ_ε)`.
pub fn log_marginal_likelihood(
    data: &Dataset,
    theta: &Hyperparams,
) -> Result<(f64, [f64; 4]), GpError> {
    let t = data.len();
    if t == 0 {
        return Err(GpError::TooFewPoints { needed: 1, have: 0 });
    }
    let Factored { chol, jitter } = factor(&data.inputs, theta)?;
    let y = DVector::from_column_slice(&data.targets);
    let alpha = chol.solve(&y);
    let log_det_half: f64 = chol
        .l_dirty()
        .diagonal()
        .iter()
        .take(t)
        .map(|d| d.ln())
        .sum();
    let value = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * t as f64 * (2.0 * PI).ln();

    // ∂/∂p = ½ tr((α αᵀ − K⁻¹) ∂K/∂p)
    let k_inv = chol.inverse();
    let s2 = theta.sigma0 * theta.sigma0;
    let mut grad = [0.0; 4];
    for i in 0..t {
        for j in 0..t {
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            let a = &data.inputs[i];
            let b = &data.inputs[j];
            let kij = se_kernel(a, b, theta);
            let signal = if i == j { kij + jitter * s2 } else { kij };
            grad[0] += w * 2.0 * signal;
            grad[1] += w * kij * ((a.w - b.w) / theta.lengths[0]).powi(2);
            grad[2] += w * kij * ((a.h - b.h) / theta.lengths[1]).powi(2);
            if i == j {
                grad[3] += w * 2.0 * theta.sigma_eps * theta.sigma_eps;
            }
        }
    }
    for g in &mut grad {
        *g *= 0.5;
    }
    Ok((value, grad))
}

/// Box in log-hyperparameter space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl LogBounds {
    /// Signal in `[1e-3, 1e2]` target scales, length scales in `[1e-2, 2]`
    /// box widths, noise in `[1e-6, 1]` target scales.
    pub fn for_data(data: &Dataset, domain: &SearchBox) -> Self {
        let s = data.target_scale();
        let [dw, dh] = domain.widths();
        Self {
            lower: [
                (1e-3 * s).ln(),
                (1e-2 * dw).ln(),
                (1e-2 * dh).ln(),
                (1e-6 * s).ln(),
            ],
            upper: [(1e2 * s).ln(), (2.0 * dw).ln(), (2.0 * dh).ln(), s.ln()],
        }
    }

    pub fn clamp(&self, p: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|k| p[k].clamp(self.lower[k], self.upper[k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 200,
            seed: 0,
        }
    }
}

fn objective(data: &Dataset, p: [f64; 4]) -> Option<(f64, [f64; 4])> {
    log_marginal_likelihood(data, &Hyperparams::from_log(p))
        .ok()
        .filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient ascent with Barzilai–Borwein steps and Armijo
/// backtracking. Never returns a point worse than `start`.
fn ascend(
    data: &Dataset,
    start: [f64; 4],
    bounds: &LogBounds,
    max_iterations: usize,
) -> Option<([f64; 4], f64)> {
    let mut x = bounds.clamp(start);
    let (mut f, mut g) = objective(data, x)?;
    let mut step = 0.1 / g.iter().fold(1e-12_f64, |m, v| m.max(v.abs()));
    for _ in 0..max_iterations {
        let mut accepted = None;
        for _ in 0..40 {
            let trial = bounds.clamp(std::array::from_fn(|k| x[k] + step * g[k]));
            let d: [f64; 4] = std::array::from_fn(|k| trial[k] - x[k]);
            if d.iter().all(|v| v.abs() < 1e-10) {
                break;
            }
            if let Some((f_new, g_new)) = objective(data, trial) {
                if f_new >= f + 1e-4 * dot(&g, &d) {
                    accepted = Some((trial, f_new, g_new, d));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new, s)) = accepted else {
            break;
        };
        let y: [f64; 4] = std::array::from_fn(|k| g_new[k] - g[k]);
        let sy = dot(&s, &y);
        // ascent on a locally concave objective has s·y < 0
        step = if sy < 0.0 {
            (dot(&s, &s) / -sy).clamp(1e-8, 1e4)
        } else {
            (2.0 * step).min(1e4)
        };
        let improvement = f_new - f;
        x = x_new;
        f = f_new;
        g = g_new;
        if improvement <= 1e-12 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((x, f))
}

/// Multi-start maximization of the log marginal likelihood. Starts from
/// `warm_start` (when given) plus Latin-hypercube points in `bounds`.
pub fn fit_hyperparameters(
    data: &Dataset,
    bounds: &LogBounds,
    warm_start: Option<&Hyperparams>,
    options: &FitOptions,
) -> Result<Hyperparams, GpError> {
    if data.len() < 2 {
        return Err(GpError::TooFewPoints {
            needed: 2,
            have: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts: Vec<[f64; 4]> = warm_start
        .map(|h| bounds.clamp(h.to_log()))
        .into_iter()
        .collect();
    let fresh = options.restarts.max(1).saturating_sub(starts.len());
    starts.extend(latin_hypercube(fresh, bounds.lower, bounds.upper, &mut rng));

    let mut best: Option<([f64; 4], f64)> = None;
    for start in starts {
        if let Some((x, f)) = ascend(data, start, bounds, options.max_iterations) {
            if best.is_none_or(|(_, fb)| f > fb) {
                best = Some((x, f));
            }
        }
    }
    best.map(|(x, _)| Hyperparams::from_log(x))
        .ok_or(GpError::NotPositiveDefinite {
            jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A GP conditioned on a dataset with fixed hyperparameters. Immutable.
#[derive(Debug, Clone)]
pub struct FittedGp {
    dataset: Dataset,
    theta: Hyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl FittedGp {
    pub fn new(dataset: Dataset, theta: Hyperparams) -> Result<Self, GpError> {
        let Factored { chol, jitter } = factor(&dataset.inputs, &theta)?;
        let alpha = chol.solve(&DVector::from_column_slice(&dataset.targets));
        Ok(Self {
            dataset,
            theta,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn theta(&self) -> &Hyperparams {
        &self.theta
    }

    /// Relative jitter that was needed to factor the covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor of `K + σ_ε² I` (jitter included).
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Posterior mean and latent-function variance at `q`.
    pub fn predict(&self, q: &BasisParams) -> Prediction {
        let prior = self.theta.sigma0 * self.theta.sigma0;
        if self.dataset.is_empty() {
            return Prediction {
                mean: self.dataset.mean_offset,
                variance: prior,
            };
        }
        let k = DVector::from_iterator(
            self.dataset.len(),
            self.dataset
                .inputs
                .iter()
                .map(|x| se_kernel(q, x, &self.theta)),
        );
        let mean = k.dot(&self.alpha) + self.dataset.mean_offset;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        Prediction {
            mean,
            variance: (prior - v.norm_squared()).max(0.0),
        }
    }
}
