use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{correlate, relative_sq_error, rescale, ses_convolve, EquivError, Image2D, ScaleFilterBank};

/// A feature extractor whose output may have several channels, together
/// with the channel correspondence expected under input rescaling.
pub trait FeatureMap {
    fn channels(&self, image: &Image2D) -> Result<Vec<Image2D>, EquivError>;

    /// Pairs `(k, k′)` such that channel `k` of `Φ(T_s h)` should match
    /// `T_s` applied to channel `k′` of `Φ(h)`.
    fn channel_pairs(&self, s: f64) -> Vec<(usize, usize)>;
}

impl<F> FeatureMap for F
where
    F: Fn(&Image2D) -> Result<Image2D, EquivError>,
{
    fn channels(&self, image: &Image2D) -> Result<Vec<Image2D>, EquivError> {
        Ok(vec![self(image)?])
    }

    fn channel_pairs(&self, _s: f64) -> Vec<(usize, usize)> {
        vec![(0, 0)]
    }
}

/// One SES layer: its scale stack is the feature map. Rescaling the input
/// by `s` moves scale `σ_k` to `σ_k/s`, so channel `k` is paired with the
/// bank scale nearest to `σ_k/s` when that scale lies within `tolerance`
/// (relative).
#[derive(Debug, Clone)]
pub struct SesLayer {
    pub bank: ScaleFilterBank,
    pub tolerance: f64,
}

impl SesLayer {
    pub fn new(bank: ScaleFilterBank) -> Self {
        Self { bank, tolerance: 0.02 }
    }
}

impl FeatureMap for SesLayer {
    fn channels(&self, image: &Image2D) -> Result<Vec<Image2D>, EquivError> {
        ses_convolve(image, &self.bank)
    }

    fn channel_pairs(&self, s: f64) -> Vec<(usize, usize)> {
        let sig = &self.bank.sigmas;
        (0..sig.len())
            .filter_map(|k| {
                let target = sig[k] / s;
                let (kp, &best) = sig
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 / target).ln().abs().total_cmp(&(b.1 / target).ln().abs()))?;
                ((best / target - 1.0).abs() <= self.tolerance).then_some((k, kp))
            })
            .collect()
    }
}

/// A single fixed-scale convolution.
#[derive(Debug, Clone)]
pub struct VanillaLayer {
    pub filter: Array2<f64>,
}

impl VanillaLayer {
    /// The bank's filter at its first scale.
    pub fn from_bank(bank: &ScaleFilterBank) -> Result<Self, EquivError> {
        Ok(Self {
            filter: bank.filter_at(bank.sigmas[0])?,
        })
    }
}

impl FeatureMap for VanillaLayer {
    fn channels(&self, image: &Image2D) -> Result<Vec<Image2D>, EquivError> {
        Ok(vec![correlate(image, &self.filter)?])
    }

    fn channel_pairs(&self, _s: f64) -> Vec<(usize, usize)> {
        vec![(0, 0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDelta {
    pub scale: f64,
    /// Mean normalized error; `None` when every term was excluded.
    pub delta: Option<f64>,
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub per_scale: Vec<ScaleDelta>,
    /// Mean of the per-scale errors that have at least one term.
    pub mean: Option<f64>,
    /// Terms skipped because `T_s Φ(h)` was identically zero.
    pub excluded: usize,
}

/// `Δ = mean ‖T_s Φ(h) − Φ(T_s h)‖² / ‖T_s Φ(h)‖²` over images and paired
/// channels, for each scale.
pub fn equivariance_error(net: &dyn FeatureMap, images: &[Image2D], scales: &[f64]) -> Result<EquivarianceReport, EquivError> {
    let base: Vec<Vec<Image2D>> = images.iter().map(|h| net.channels(h)).collect::<Result<_, _>>()?;
    let mut excluded = 0;
    let mut per_scale = Vec::with_capacity(scales.len());
    for &s in scales {
        let pairs = net.channel_pairs(s);
        let (mut sum, mut terms) = (0.0, 0);
        for (h, phi_h) in images.iter().zip(&base) {
            let phi_ts = net.channels(&rescale(h, s)?)?;
            for &(k, kp) in &pairs {
                let ts_phi = rescale(&phi_h[kp], s)?;
                match relative_sq_error(&phi_ts[k], &ts_phi)? {
                    Some(e) => {
                        sum += e;
                        terms += 1;
                    }
                    None => excluded += 1,
                }
            }
        }
        per_scale.push(ScaleDelta {
            scale: s,
            delta: (terms > 0).then(|| sum / terms as f64),
            terms,
        });
    }
    let valid: Vec<f64> = per_scale.iter().filter_map(|d| d.delta).collect();
    let mean = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    Ok(EquivarianceReport {
        per_scale,
        mean,
        excluded,
    })
}

/// Relative error `‖T_s(h) ⋆ ψ_σ − T_s(h ⋆ ψ_σ′)‖ / ‖T_s(h ⋆ ψ_σ′)‖` of the
/// bank filter; the scale-equivariance identity uses `σ′ = σ/s`.
pub fn identity_error(image: &Image2D, bank: &ScaleFilterBank, sigma: f64, sigma_src: f64, s: f64) -> Result<f64, EquivError> {
    let lhs = correlate(&rescale(image, s)?, &bank.filter_at(sigma)?)?;
    let rhs = rescale(&correlate(image, &bank.filter_at(sigma_src)?)?, s)?;
    let den = rhs.norm_sq();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs.sub(&rhs)?.norm_sq() / den).sqrt())
}

/// Four Gaussian blobs of width 2–5 px near the center of a `size × size`
/// zero background.
pub fn toy_image(size: usize, rng: &mut impl Rng) -> Result<Image2D, EquivError> {
    let n = size as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.3 * n..0.7 * n),
                rng.random_range(0.3 * n..0.7 * n),
                rng.random_range(2.0..5.0),
                rng.random_range(0.5..1.5),
            )
        })
        .collect();
    Image2D::from_fn(size, size, |(r, c)| {
        blobs
            .iter()
            .map(|&(cy, cx, w, a)| {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                a * (-d2 / (2.0 * w * w)).exp()
            })
            .sum()
    })
}

pub fn toy_images(count: usize, size: usize, seed: u64) -> Result<Vec<Image2D>, EquivError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| toy_image(size, &mut rng)).collect()
}
