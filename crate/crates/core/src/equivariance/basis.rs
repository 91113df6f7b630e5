use ndarray::Array2;

use super::EquivError;

/// Probabilist's Hermite polynomial `H_n(x)` by the three-term recurrence.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn factor(sigma: f64, n: usize, size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    (0..size)
        .map(|i| {
            let x = i as f64 - half;
            hermite(n, x / sigma) * (-(x * x) / (sigma * sigma)).exp()
        })
        .collect()
}

/// `ψ_σnm(u, v) = (1/σ²)·H_n(u/σ)·H_m(v/σ)·exp(−(u² + v²)/σ²)` sampled on a
/// centered `size × size` grid, rows indexed by `v`.
pub fn steerable_basis(sigma: f64, n: usize, m: usize, size: usize) -> Result<Array2<f64>, EquivError> {
    if size.is_multiple_of(2) {
        return Err(EquivError::EvenFilterSize(size));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(EquivError::InvalidScale(sigma));
    }
    let fu = factor(sigma, n, size);
    let fv = factor(sigma, m, size);
    let inv = 1.0 / (sigma * sigma);
    Ok(Array2::from_shape_fn((size, size), |(r, c)| inv * fv[r] * fu[c]))
}

/// Hermite–Gaussian basis up to `max_order` in each direction at several
/// scales, combined by one weight vector shared by every scale.
///
/// The normalization `A_nm` of each basis function is fixed across scales
/// and makes the base-scale function unit-norm, so the `1/σ²` factor alone
/// carries the scale dependence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFilterBank {
    pub sigmas: Vec<f64>,
    pub size: usize,
    pub max_order: usize,
    /// One weight per `(n, m)`, row-major in `n`.
    pub weights: Vec<f64>,
    norms: Vec<f64>,
}

impl ScaleFilterBank {
    pub fn new(sigmas: Vec<f64>, size: usize, max_order: usize, weights: Vec<f64>) -> Result<Self, EquivError> {
        if sigmas.is_empty() {
            return Err(EquivError::InvalidBank("no scales".into()));
        }
        if let Some(&s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(EquivError::InvalidScale(s));
        }
        let count = (max_order + 1) * (max_order + 1);
        if weights.len() != count {
            return Err(EquivError::InvalidBank(format!(
                "{} weights for {count} basis functions",
                weights.len()
            )));
        }
        let base = sigmas[0];
        let norms = (0..count)
            .map(|k| {
                let psi = steerable_basis(base, k / (max_order + 1), k % (max_order + 1), size)?;
                Ok(1.0 / psi.iter().map(|x| x * x).sum::<f64>().sqrt())
            })
            .collect::<Result<Vec<_>, EquivError>>()?;
        Ok(Self {
            sigmas,
            size,
            max_order,
            weights,
            norms,
        })
    }

    /// Scales `σ0·(1, 1 + α, 1 + 2α)`, matching image downscaling by
    /// `(1/(1 + 2α), 1/(1 + α), 1)`.
    pub fn from_alpha(sigma0: f64, alpha: f64, size: usize, max_order: usize, weights: Vec<f64>) -> Result<Self, EquivError> {
        Self::new(
            vec![sigma0, sigma0 * (1.0 + alpha), sigma0 * (1.0 + 2.0 * alpha)],
            size,
            max_order,
            weights,
        )
    }

    pub fn basis_count(&self) -> usize {
        self.weights.len()
    }

    /// Normalized basis function `A_nm·ψ_σnm`.
    pub fn basis(&self, sigma: f64, n: usize, m: usize) -> Result<Array2<f64>, EquivError> {
        let k = n * (self.max_order + 1) + m;
        Ok(steerable_basis(sigma, n, m, self.size)? * self.norms[k])
    }

    /// `Σ_nm w_nm A_nm ψ_σnm` at an arbitrary scale.
    pub fn filter_at(&self, sigma: f64) -> Result<Array2<f64>, EquivError> {
        let mut out = Array2::zeros((self.size, self.size));
        for n in 0..=self.max_order {
            for m in 0..=self.max_order {
                let w = self.weights[n * (self.max_order + 1) + m];
                out.scaled_add(w, &self.basis(sigma, n, m)?);
            }
        }
        Ok(out)
    }

    /// One filter per bank scale.
    pub fn filters(&self) -> Result<Vec<Array2<f64>>, EquivError> {
        self.sigmas.iter().map(|&s| self.filter_at(s)).collect()
    }
}
