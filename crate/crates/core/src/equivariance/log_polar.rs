use std::f64::consts::TAU;

use ndarray::Array2;

use super::{check_same_shape, EquivError, Image2D};

const SSIM_WINDOW: usize = 7;

/// Image resampled on a `ln r × θ` grid. Row `i` holds radius
/// `r_min·exp(i·d_rho)` and column `j` holds angle `2πj/n_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPolar {
    pub image: Image2D,
    pub center: (f64, f64),
    pub r_min: f64,
    pub r_max: f64,
    pub d_rho: f64,
    pub source_shape: (usize, usize),
}

impl LogPolar {
    pub fn n_rho(&self) -> usize {
        self.image.height()
    }

    pub fn n_theta(&self) -> usize {
        self.image.width()
    }
}

/// Forward log-polar transform about `center = (u, v)`, radii from 1 px to
/// the distance of the nearest image border.
pub fn log_polar(image: &Image2D, center: (f64, f64), n_rho: usize, n_theta: usize) -> Result<LogPolar, EquivError> {
    let (h, w) = image.shape();
    let (cu, cv) = center;
    let inside = |x: f64, n: usize| x > 0.0 && x < (n - 1) as f64;
    if !inside(cu, w) || !inside(cv, h) {
        return Err(EquivError::CenterOnBoundary(cu, cv));
    }
    if n_rho < 3 || n_theta < 3 {
        return Err(EquivError::InvalidGrid(format!("{n_rho}x{n_theta} grid")));
    }
    let r_min = 1.0;
    let r_max = cu.min(cv).min((w - 1) as f64 - cu).min((h - 1) as f64 - cv);
    if r_max <= r_min {
        return Err(EquivError::InvalidGrid(format!("maximum radius {r_max} below 1 px")));
    }
    let d_rho = (r_max / r_min).ln() / (n_rho - 1) as f64;
    let grid = Array2::from_shape_fn((n_rho, n_theta), |(i, j)| {
        let r = r_min * (i as f64 * d_rho).exp();
        let theta = TAU * j as f64 / n_theta as f64;
        image.sample_bilinear(cv + r * theta.sin(), cu + r * theta.cos())
    });
    Ok(LogPolar {
        image: Image2D::new(grid)?,
        center,
        r_min,
        r_max,
        d_rho,
        source_shape: (h, w),
    })
}

/// Resamples a log-polar image back onto its source grid. Radii outside
/// `[r_min, r_max]` take the nearest ring; θ wraps around.
pub fn log_polar_inverse(lp: &LogPolar) -> Result<Image2D, EquivError> {
    let (cu, cv) = lp.center;
    let n_rho = lp.n_rho();
    let n_theta = lp.n_theta();
    let g = lp.image.grid();
    let grid = Array2::from_shape_fn(lp.source_shape, |(r, c)| {
        let (du, dv) = (c as f64 - cu, r as f64 - cv);
        let rad = du.hypot(dv).max(lp.r_min);
        let ri = ((rad / lp.r_min).ln() / lp.d_rho).clamp(0.0, (n_rho - 1) as f64);
        let ti = dv.atan2(du).rem_euclid(TAU) / TAU * n_theta as f64;
        let r0 = ri.floor() as usize;
        let r1 = (r0 + 1).min(n_rho - 1);
        let fr = ri - r0 as f64;
        let t0f = ti.floor();
        let ft = ti - t0f;
        let t0 = (t0f as usize) % n_theta;
        let t1 = (t0 + 1) % n_theta;
        g[[r0, t0]] * (1.0 - fr) * (1.0 - ft) + g[[r0, t1]] * (1.0 - fr) * ft + g[[r1, t0]] * fr * (1.0 - ft) + g[[r1, t1]] * fr * ft
    });
    Image2D::new(grid)
}

/// Mean structural similarity over all `7×7` windows, with the dynamic
/// range taken from `reference`.
pub fn ssim(reference: &Image2D, other: &Image2D) -> Result<f64, EquivError> {
    check_same_shape(reference, other)?;
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(EquivError::ImageTooSmall {
            image_h: h,
            image_w: w,
            filter: SSIM_WINDOW,
        });
    }
    let (lo, hi) = reference
        .grid()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (a, b) = (reference.grid(), other.grid());
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + SSIM_WINDOW {
                for j in c..c + SSIM_WINDOW {
                    let (x, y) = (a[[i, j]], b[[i, j]]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{rescale, toy_images};
    use super::*;

    fn texture(size: usize) -> Image2D {
        Image2D::from_fn(size, size, |(r, c)| {
            let (x, y) = (c as f64, r as f64);
            (0.9 * x + 0.3 * y).sin() + 0.7 * (0.4 * x - 1.3 * y).cos() + 0.5 * (2.1 * x + 1.7 * y).sin()
        })
        .unwrap()
    }

    #[test]
    fn center_on_boundary_rejected() {
        let img = Image2D::zeros(16, 16).unwrap();
        assert!(matches!(log_polar(&img, (0.0, 7.5), 8, 8), Err(EquivError::CenterOnBoundary(..))));
        assert!(matches!(log_polar(&img, (7.5, 15.0), 8, 8), Err(EquivError::CenterOnBoundary(..))));
    }

    #[test]
    fn quarter_turn_is_column_shift() {
        let img = toy_images(1, 33, 4).unwrap().remove(0);
        let n = 33;
        let turned = Image2D::from_fn(n, n, |(r, c)| img.get(c, n - 1 - r)).unwrap();
        let c = img.center();
        let a = log_polar(&img, c, 16, 32).unwrap();
        let b = log_polar(&turned, c, 16, 32).unwrap();
        // b(θ) = a(θ + π/2), a shift of a quarter of the columns
        for i in 0..16 {
            for j in 0..32 {
                let d = (b.image.get(i, (j + 24) % 32) - a.image.get(i, j)).abs();
                assert!(d < 1e-9, "ring {i} angle {j}: {d}");
            }
        }
    }

    #[test]
    fn scaling_shifts_log_radius() {
        let img = toy_images(1, 129, 6).unwrap().remove(0);
        let c = img.center();
        let n_rho = 96;
        let a = log_polar(&img, c, n_rho, 64).unwrap();
        let s: f64 = 1.5;
        let b = log_polar(&rescale(&img, s).unwrap(), c, n_rho, 64).unwrap();
        let expected = (s.ln() / a.d_rho).round() as isize;
        // Pearson correlation of the overlapping rings at each shift
        let score = |k: usize| {
            let x: Vec<f64> = a.image.grid().rows().into_iter().take(n_rho - k).flatten().copied().collect();
            let y: Vec<f64> = b.image.grid().rows().into_iter().skip(k).flatten().copied().collect();
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
            let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        let best = (0..30).max_by(|&x, &y| score(x).total_cmp(&score(y))).unwrap() as isize;
        assert!((best - expected).abs() <= 1, "peak {best}, expected {expected}");
    }

    #[test]
    fn round_trip_loses_structure_at_low_resolution() {
        let img = texture(64);
        let lp = log_polar(&img, img.center(), 16, 16).unwrap();
        let back = log_polar_inverse(&lp).unwrap();
        let q = ssim(&img, &back).unwrap();
        assert!(q < 0.95, "ssim {q}");
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let img = texture(20);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        // same local means, opposite structure
        let lifted = Image2D::from_fn(20, 20, |(r, c)| img.get(r, c) + 3.0).unwrap();
        let inverted = Image2D::from_fn(20, 20, |(r, c)| 3.0 - img.get(r, c)).unwrap();
        assert!(ssim(&lifted, &inverted).unwrap() < 0.0);
    }
}
