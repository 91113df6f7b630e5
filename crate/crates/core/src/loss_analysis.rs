//! Gradient variance of regression and dice losses under Gaussian target
//! noise, the critical noise level where dice overtakes regression, and an
//! SGD simulator for the weight-deviation law `E‖w − w*‖² = c1·Var(ε) + c2`.

use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};
use thiserror::Error;

pub const MIN_MC_SAMPLES: usize = 10_000;
const MC_CHUNK: usize = 1 << 15;
const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("noise deviation {0} must be finite and non-negative")]
    InvalidSigma(f64),
    #[error("object length {0} must be positive")]
    InvalidLength(f64),
    #[error("at least {MIN_MC_SAMPLES} samples required, got {0}")]
    TooFewSamples(usize),
    #[error("step schedule is not square summable: {0}")]
    NotSquareSummable(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
    Dice,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::L1, LossKind::L2, LossKind::Dice];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Dice => "dice",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "dice" => Ok(Self::Dice),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

/// Loss kind with noise deviation `sigma` and object length `ell`.
///
/// `sigma = 0` is allowed and describes noiseless targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLossSpec {
    pub kind: LossKind,
    pub sigma: f64,
    pub ell: f64,
}

impl NoiseLossSpec {
    pub fn new(kind: LossKind, sigma: f64, ell: f64) -> Result<Self, LossError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(LossError::InvalidSigma(sigma));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(LossError::InvalidLength(ell));
        }
        Ok(Self { kind, sigma, ell })
    }

    pub fn with_kind(self, kind: LossKind) -> Self {
        Self { kind, ..self }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// 1-D dice loss of a length-`ell` segment displaced by `eta`.
pub fn dice_loss(ell: f64, eta: f64) -> f64 {
    (eta.abs() / ell).min(1.0)
}

/// Derivative `ε` of the loss with respect to the prediction noise `eta`.
pub fn loss_grad_wrt_noise(spec: &NoiseLossSpec, eta: f64) -> f64 {
    match spec.kind {
        LossKind::L1 => sign(eta),
        LossKind::L2 => eta,
        LossKind::Dice => {
            if eta.abs() <= spec.ell {
                sign(eta) / spec.ell
            } else {
                0.0
            }
        }
    }
}

/// `Var(ε)` for `η ~ N(0, σ²)`: 1 for L1, σ² for L2 and
/// `Erf(ℓ/(√2σ))/ℓ²` for dice. All three are 0 when σ = 0.
pub fn var_closed_form(spec: &NoiseLossSpec) -> f64 {
    if spec.sigma == 0.0 {
        return 0.0;
    }
    match spec.kind {
        LossKind::L1 => 1.0,
        LossKind::L2 => spec.sigma * spec.sigma,
        LossKind::Dice => dice_variance(spec.ell, spec.sigma),
    }
}

fn dice_variance(ell: f64, sigma: f64) -> f64 {
    erf(ell / (SQRT_2 * sigma)) / (ell * ell)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub variance: f64,
    pub se: f64,
    pub samples: usize,
}

/// Sample variance of `loss_grad_wrt_noise` over `η ~ N(0, σ²)` and its
/// standard error.
///
/// Samples are drawn in fixed-size chunks, each from its own ChaCha stream,
/// so the estimate does not depend on thread scheduling.
pub fn var_monte_carlo(spec: &NoiseLossSpec, samples: usize, seed: u64) -> Result<McEstimate, LossError> {
    if samples < MIN_MC_SAMPLES {
        return Err(LossError::TooFewSamples(samples));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let values: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = MC_CHUNK.min(samples - c * MC_CHUNK);
            (0..len)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    loss_grad_wrt_noise(spec, spec.sigma * z)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (variance, se) = variance_with_se(&values);
    Ok(McEstimate {
        variance,
        se,
        samples,
    })
}

/// Unbiased sample variance and the standard error of that estimate,
/// `sqrt((m4 − (n−3)/(n−1)·s⁴)/n)`.
///
/// Since `κ4 ≥ −2σ⁴` for every distribution, `Var(s²) ≥ 2σ⁴/(n(n−1))`.
/// The plug-in estimate can fall below that floor when the values take
/// two levels only (the L1 gradient), so it is clamped to it.
pub fn variance_with_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = (x - mean) * (x - mean);
        (a + d, b + d * d)
    });
    let s2 = m2 / (n - 1.0);
    let m4 = m4 / n;
    let floor = 2.0 * s2 * s2 / (n * (n - 1.0));
    let se = ((m4 - (n - 3.0) / (n - 1.0) * s2 * s2) / n).max(floor).sqrt();
    (s2, se)
}

/// Bisection root of `σ² = Erf(ℓ/(√2σ))/ℓ²` on `(0, 1/ℓ]`.
pub fn sigma_m(ell: f64) -> Result<f64, LossError> {
    if !(ell.is_finite() && ell > 0.0) {
        return Err(LossError::InvalidLength(ell));
    }
    let g = |s: f64| s * s - dice_variance(ell, s);
    let (mut lo, mut hi) = (0.0_f64, 1.0 / ell);
    if g(hi) <= 0.0 {
        return Ok(hi);
    }
    while hi - lo > BISECTION_TOL * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `σ² − Erf(ℓ/(√2σ))/ℓ²`, the crossing residual at `sigma`.
pub fn critical_residual(ell: f64, sigma: f64) -> f64 {
    sigma * sigma - dice_variance(ell, sigma)
}

/// Noise level above which the dice gradient variance is below both
/// regression variances.
///
/// For `ℓ ≥ 1` this is `σ_m`. For shorter objects the dice variance can
/// exceed the L1 value of 1, so the level is also bounded below by the σ
/// solving `Erf(ℓ/(√2σ)) = ℓ²`, which is `ℓ/(√2·Erf⁻¹(ℓ²))`.
pub fn critical_sigma(ell: f64) -> Result<f64, LossError> {
    let sm = sigma_m(ell)?;
    if ell >= 1.0 {
        return Ok(sm);
    }
    Ok(sm.max(ell / (SQRT_2 * erf_inv(ell * ell))))
}

/// Step sizes `s_j`, `j = 1, 2, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `s_j = 1/j`.
    Harmonic,
    /// `s_j = scale · j^(−exponent)`.
    Power { scale: f64, exponent: f64 },
    /// `s_j = c` for every step.
    Constant(f64),
    /// Exactly these steps.
    Explicit(Vec<f64>),
}

impl StepSchedule {
    /// Rejects schedules whose infinite extension is not square summable.
    pub fn validate(&self) -> Result<(), LossError> {
        match self {
            StepSchedule::Harmonic => Ok(()),
            StepSchedule::Power { scale, exponent } => {
                if !scale.is_finite() || !exponent.is_finite() {
                    Err(LossError::InvalidConfig("non-finite power schedule".into()))
                } else if *exponent <= 0.5 && *scale != 0.0 {
                    Err(LossError::NotSquareSummable(format!(
                        "power exponent {exponent} must exceed 1/2"
                    )))
                } else {
                    Ok(())
                }
            }
            StepSchedule::Constant(c) => {
                if *c == 0.0 {
                    Ok(())
                } else {
                    Err(LossError::NotSquareSummable(format!("constant step {c}")))
                }
            }
            StepSchedule::Explicit(v) => {
                if v.iter().all(|s| s.is_finite()) {
                    Ok(())
                } else {
                    Err(LossError::NotSquareSummable("non-finite explicit step".into()))
                }
            }
        }
    }

    /// The first `steps` step sizes (all of them for an explicit schedule).
    pub fn steps(&self, steps: usize) -> Vec<f64> {
        match self {
            StepSchedule::Harmonic => (1..=steps).map(|j| 1.0 / j as f64).collect(),
            StepSchedule::Power { scale, exponent } => {
                (1..=steps).map(|j| scale * (j as f64).powf(-exponent)).collect()
            }
            StepSchedule::Constant(c) => vec![*c; steps],
            StepSchedule::Explicit(v) => v.clone(),
        }
    }
}

/// Linear model `ẑ = w·h` trained by SGD from `w0 ~ N(0, w0_std² I)`
/// towards `w*`, with features `h ~ N(0, I_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdSimConfig {
    pub dim: usize,
    pub steps: usize,
    pub schedule: StepSchedule,
    pub trials: usize,
    pub seed: u64,
    pub w0_std: f64,
    pub w_star: Vec<f64>,
}

impl Default for SgdSimConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            steps: 1000,
            schedule: StepSchedule::Harmonic,
            trials: 10_000,
            seed: 7,
            w0_std: 0.1,
            w_star: vec![0.5, -0.5, 0.25, 0.0],
        }
    }
}

impl SgdSimConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        self.schedule.validate()?;
        if self.trials < 1 {
            return Err(LossError::InvalidConfig("trials must be at least 1".into()));
        }
        if self.dim < 1 || self.w_star.len() != self.dim {
            return Err(LossError::InvalidConfig(format!(
                "w_star has {} entries for dimension {}",
                self.w_star.len(),
                self.dim
            )));
        }
        if !(self.w0_std.is_finite() && self.w0_std >= 0.0) {
            return Err(LossError::InvalidConfig(format!("w0_std {}", self.w0_std)));
        }
        Ok(())
    }

    /// `c1 = Σ s_j² · E(hᵀh)`.
    pub fn c1(&self) -> f64 {
        let s2: f64 = self.schedule.steps(self.steps).iter().map(|s| s * s).sum();
        s2 * self.dim as f64
    }

    /// `c2 = E‖w0 − w*‖²`.
    pub fn c2(&self) -> f64 {
        self.dim as f64 * self.w0_std * self.w0_std + self.w_star.iter().map(|w| w * w).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdSimResult {
    pub mean_deviation: f64,
    pub se: f64,
    /// Per-trial `‖w_T − w*‖²`, in trial order.
    pub samples: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
}

/// `c1·Var(ε) + c2`.
pub fn predicted_deviation(spec: &NoiseLossSpec, config: &SgdSimConfig) -> f64 {
    config.c1() * var_closed_form(spec) + config.c2()
}

/// Monte-Carlo estimate of `E‖w_T − w*‖²` for
/// `w_T = w0 − Σ_j s_j h_j ε(η_j)`.
///
/// Each trial draws from its own ChaCha stream and the draw order does not
/// depend on the loss kind, so different kinds see the same `w0`, `h_j` and
/// standardized noise.
pub fn sgd_convergence_sim(spec: &NoiseLossSpec, config: &SgdSimConfig) -> Result<SgdSimResult, LossError> {
    config.validate()?;
    let steps = config.schedule.steps(config.steps);
    let samples: Vec<f64> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut diff: Vec<f64> = config
                .w_star
                .iter()
                .map(|ws| {
                    let z: f64 = rng.sample(StandardNormal);
                    config.w0_std * z - ws
                })
                .collect();
            let mut h = vec![0.0; config.dim];
            for &s in &steps {
                for hk in h.iter_mut() {
                    *hk = rng.sample(StandardNormal);
                }
                let z: f64 = rng.sample(StandardNormal);
                let eps = loss_grad_wrt_noise(spec, spec.sigma * z);
                for (d, hk) in diff.iter_mut().zip(&h) {
                    *d -= s * hk * eps;
                }
            }
            diff.iter().map(|d| d * d).sum()
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let se = if samples.len() > 1 {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(SgdSimResult {
        mean_deviation: mean,
        se,
        samples,
        c1: config.c1(),
        c2: config.c2(),
    })
}

/// Least-squares line `y = a·x + b` with its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
