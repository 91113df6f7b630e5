//! Pinhole projection, ground-plane depth, bottom-center estimation and the
//! first-order depth-error trends under a change of camera height.
//!
//! Camera frame: +x right, +y towards the ground, +z forward. The ground is
//! the plane `n·X = H` with `n = (0, cos δ, sin δ)` in world coordinates,
//! where world points map to the camera by `R·X + T`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("point at depth {0} is not in front of the camera")]
    BehindCamera(f64),
    #[error("pixel row {v} is at or above the horizon (denominator {denominator})")]
    Horizon { v: f64, denominator: f64 },
    #[error("invalid detection geometry: {0}")]
    InvalidDetection(String),
    #[error("invalid trend input: {0}")]
    InvalidTrend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub f: f64,
    pub cu: f64,
    pub cv: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    /// Mounting height above the ground.
    pub h: f64,
    /// Ground pitch δ.
    pub pitch: f64,
    pub image_h: f64,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f: f64,
        cu: f64,
        cv: f64,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        h: f64,
        pitch: f64,
        image_h: f64,
    ) -> Result<Self, DepthError> {
        if !(f.is_finite() && f > 0.0) {
            return Err(DepthError::InvalidCamera(format!("focal length {f}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(DepthError::InvalidCamera(format!("height {h}")));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-9 && (r.determinant() - 1.0).abs() <= 1e-9) {
            return Err(DepthError::InvalidCamera("R is not a rotation".into()));
        }
        if ![cu, cv, pitch, image_h].iter().all(|x| x.is_finite()) || !t.iter().all(|x| x.is_finite()) {
            return Err(DepthError::InvalidCamera("non-finite parameter".into()));
        }
        Ok(Self {
            f,
            cu,
            cv,
            r,
            t,
            h,
            pitch,
            image_h,
        })
    }

    /// Camera with `R = I`, `T = 0` and no pitch.
    pub fn level(f: f64, cu: f64, cv: f64, h: f64, image_h: f64) -> Result<Self, DepthError> {
        Self::new(f, cu, cv, Matrix3::identity(), Vector3::zeros(), h, 0.0, image_h)
    }

    /// The same camera mounted at height `h`.
    pub fn with_height(&self, h: f64) -> Result<Self, DepthError> {
        Self::new(self.f, self.cu, self.cv, self.r, self.t, h, self.pitch, self.image_h)
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.cu, 0.0, self.f, self.cv, 0.0, 0.0, 1.0)
    }

    pub fn intrinsics_inverse(&self) -> Matrix3<f64> {
        let fi = 1.0 / self.f;
        Matrix3::new(fi, 0.0, -self.cu * fi, 0.0, fi, -self.cv * fi, 0.0, 0.0, 1.0)
    }

    /// `A = R⁻¹K⁻¹`.
    pub fn a(&self) -> Matrix3<f64> {
        self.r.transpose() * self.intrinsics_inverse()
    }

    /// `B = −R⁻¹T`.
    pub fn b(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Slope β of the linear regressed-depth model, `60 / (image_h − cv)`.
    pub fn default_beta(&self) -> f64 {
        60.0 / (self.image_h - self.cv)
    }
}

/// Projects a world point to `(u, v, z)`.
pub fn project(cam: &CameraModel, point: Vector3<f64>) -> Result<(f64, f64, f64), DepthError> {
    let pc = cam.r * point + cam.t;
    let z = pc.z;
    if !(z > 0.0) {
        return Err(DepthError::BehindCamera(z));
    }
    Ok((cam.f * pc.x / z + cam.cu, cam.f * pc.y / z + cam.cv, z))
}

/// Depth of the ground plane seen at pixel `(u, v)`:
/// `z = ReLU(H − b₂cos δ − b₃sin δ) / ((a₂·p)cos δ + (a₃·p)sin δ)`.
pub fn ground_depth(cam: &CameraModel, u: f64, v: f64) -> Result<f64, DepthError> {
    let a = cam.a();
    let b = cam.b();
    let p = Vector3::new(u, v, 1.0);
    let (s, c) = cam.pitch.sin_cos();
    let num = cam.h - b.y * c - b.z * s;
    let den = a.row(1).dot(&p.transpose()) * c + a.row(2).dot(&p.transpose()) * s;
    if !(den > 0.0) {
        return Err(DepthError::Horizon { v, denominator: den });
    }
    Ok(num.max(0.0) / den)
}

/// `z = (H − b₂) f / (v − c_v)` for `R = I`, no pitch.
pub fn ground_depth_simple(cam: &CameraModel, v: f64) -> Result<f64, DepthError> {
    let den = (v - cam.cv) / cam.f;
    if !(den > 0.0) {
        return Err(DepthError::Horizon { v, denominator: den });
    }
    Ok((cam.h + cam.t.y).max(0.0) / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionGeom {
    pub uc: f64,
    pub vc: f64,
    pub uc2d: f64,
    pub vc2d: f64,
    pub h2d: f64,
    pub alpha: f64,
    pub z_reg: f64,
}

impl DetectionGeom {
    pub fn validate(&self) -> Result<(), DepthError> {
        if !(self.h2d > 0.0) {
            return Err(DepthError::InvalidDetection(format!("2D height {}", self.h2d)));
        }
        Ok(())
    }
}

/// `u_b = u_c`, `v_b = v_c + h₂D/2 + α(v_c − v_c,2D)`.
pub fn bottom_center(det: &DetectionGeom) -> (f64, f64) {
    (det.uc, det.vc + 0.5 * det.h2d + det.alpha * (det.vc - det.vc2d))
}

/// Mean of the regressed and ground depths. A missing, non-finite or
/// non-positive ground depth leaves the regressed depth alone.
pub fn merge_depth(z_reg: f64, z_ground: Option<f64>) -> f64 {
    match z_ground {
        Some(zg) if zg.is_finite() && zg > 0.0 => 0.5 * (z_reg + zg),
        _ => z_reg,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendKind {
    Ground,
    Regressed,
}

/// Inputs of the first-order trend for one object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendParams {
    pub dh: f64,
    /// Bottom-center row, used by the ground kind.
    pub vb: Option<f64>,
    /// Object depth, used by the regressed kind.
    pub z: Option<f64>,
    pub beta: Option<f64>,
}

/// `ReLU(1/(v_b − c_v))·f·ΔH` for the ground kind and `−(β/z)·f·ΔH` for
/// the regressed kind.
pub fn predicted_trend(kind: TrendKind, cam: &CameraModel, params: &TrendParams) -> Result<f64, DepthError> {
    match kind {
        TrendKind::Ground => {
            let vb = params
                .vb
                .ok_or_else(|| DepthError::InvalidTrend("ground trend needs v_b".into()))?;
            let d = vb - cam.cv;
            let inv = if d > 0.0 { 1.0 / d } else { 0.0 };
            Ok(inv * cam.f * params.dh)
        }
        TrendKind::Regressed => {
            let z = params.z.filter(|z| *z > 0.0);
            let beta = params.beta.filter(|b| *b > 0.0);
            match (z, beta) {
                (Some(z), Some(beta)) => Ok(-(beta / z) * cam.f * params.dh),
                _ => Err(DepthError::InvalidTrend("regressed trend needs z > 0 and beta > 0".into())),
            }
        }
    }
}

/// Ratio of normalized focal lengths `f̄ = 2f/h` of two cameras.
pub fn focal_scale(f_src: f64, h_src: f64, f_dst: f64, h_dst: f64) -> Result<f64, DepthError> {
    if ![f_src, h_src, f_dst, h_dst].iter().all(|x| x.is_finite() && *x > 0.0) {
        return Err(DepthError::InvalidCamera("focal lengths and heights must be positive".into()));
    }
    Ok(normalized_focal(f_src, h_src) / normalized_focal(f_dst, h_dst))
}

pub fn normalized_focal(f: f64, h: f64) -> f64 {
    2.0 * f / h
}

/// An object standing on the ground: lateral offset, depth and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub x: f64,
    pub z: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Objects with depth uniform in `z_range`, lateral offset uniform in
    /// ±10 m and height uniform in [1.4, 1.8] m.
    pub fn random(n: usize, z_range: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = (0..n)
            .map(|_| SceneObject {
                x: rng.random_range(-10.0..10.0),
                z: rng.random_range(z_range.0..z_range.1),
                height: rng.random_range(1.4..1.8),
            })
            .collect();
        Self { objects }
    }

    /// Image geometry of `obj` seen from `cam`.
    pub fn detection(cam: &CameraModel, obj: &SceneObject, z_reg: f64) -> Result<DetectionGeom, DepthError> {
        let bottom = Vector3::new(obj.x, cam.h, obj.z);
        let top = Vector3::new(obj.x, cam.h - obj.height, obj.z);
        let center = Vector3::new(obj.x, cam.h - 0.5 * obj.height, obj.z);
        let (uc, vc, _) = project(cam, center)?;
        let (_, vb, _) = project(cam, bottom)?;
        let (_, vt, _) = project(cam, top)?;
        Ok(DetectionGeom {
            uc,
            vc,
            uc2d: uc,
            vc2d: 0.5 * (vb + vt),
            h2d: vb - vt,
            alpha: 0.0,
            z_reg,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub dh: f64,
    pub mean_err_ground: f64,
    pub mean_err_regressed: f64,
    pub mean_err_merged: f64,
    pub se_ground: f64,
    pub se_regressed: f64,
    pub se_merged: f64,
    /// Mean first-order trend over the scene.
    pub predicted_ground: f64,
    pub predicted_regressed: f64,
    /// Simulated minus predicted mean error.
    pub residual_ground: f64,
    pub residual_regressed: f64,
    /// Mean ground error when the height-shifted pixel is evaluated with
    /// the exact ground depth instead of the first-order model.
    pub exact_shift_err_ground: f64,
}

impl TrendRow {
    pub fn se(&self) -> f64 {
        self.se_ground.max(self.se_regressed).max(self.se_merged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendSimConfig {
    pub beta: f64,
    pub noise_sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Monte-Carlo mean depth errors of the ground, regressed and merged
/// predictors after the camera moves from height `H` to `H + ΔH`.
///
/// Both predictors follow the first-order models: at the training height
/// each returns the true depth plus `N(0, noise_sigma²)` noise. After the
/// move the regressed model sees its center row shifted by `f·ΔH/z` and the
/// ground model evaluates the ground plane of the new height at the
/// training-height bottom row, dropping the `ΔH/z` term.
pub fn trend_sim(
    cam: &CameraModel,
    height_deltas: &[f64],
    scene: &Scene,
    config: &TrendSimConfig,
) -> Result<Vec<TrendRow>, DepthError> {
    if scene.objects.is_empty() || config.trials == 0 {
        return Err(DepthError::InvalidTrend("scene and trials must be non-empty".into()));
    }
    if !(config.beta > 0.0) || !(config.noise_sigma >= 0.0) {
        return Err(DepthError::InvalidTrend("beta must be positive and noise non-negative".into()));
    }
    let max_dh = height_deltas.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    if scene.objects.iter().any(|o| o.z <= max_dh) {
        return Err(DepthError::InvalidTrend("object depth must exceed |ΔH|".into()));
    }
    height_deltas
        .iter()
        .enumerate()
        .map(|(k, &dh)| trend_row(cam, dh, k as u64, scene, config))
        .collect()
}

fn trend_row(cam: &CameraModel, dh: f64, stream: u64, scene: &Scene, config: &TrendSimConfig) -> Result<TrendRow, DepthError> {
    let moved = cam.with_height(cam.h + dh)?;
    struct Obj {
        ground_offset: f64,
        reg_offset: f64,
        exact_ground: f64,
        pred_ground: f64,
        pred_reg: f64,
    }
    let objs = scene
        .objects
        .iter()
        .map(|o| {
            let before = Scene::detection(cam, o, o.z)?;
            let after = Scene::detection(&moved, o, o.z)?;
            let (ub, vb) = bottom_center(&before);
            let (ub_new, vb_new) = bottom_center(&after);
            let ground_first_order = ground_depth(&moved, ub, vb)?;
            let exact = ground_depth(&moved, ub_new, vb_new)?;
            let params = TrendParams {
                dh,
                vb: Some(vb),
                z: Some(o.z),
                beta: Some(config.beta),
            };
            Ok(Obj {
                ground_offset: ground_first_order - o.z,
                reg_offset: -config.beta * (after.vc - before.vc),
                exact_ground: exact - o.z,
                pred_ground: predicted_trend(TrendKind::Ground, cam, &params)?,
                pred_reg: predicted_trend(TrendKind::Regressed, cam, &params)?,
            })
        })
        .collect::<Result<Vec<_>, DepthError>>()?;

    let errs: Vec<[f64; 3]> = (0..config.trials)
        .into_par_iter()
        .flat_map_iter(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((stream << 32) | t as u64);
            let out: Vec<[f64; 3]> = scene
                .objects
                .iter()
                .zip(&objs)
                .map(|(o, ob)| {
                    let ng: f64 = rng.sample(StandardNormal);
                    let nr: f64 = rng.sample(StandardNormal);
                    let zg = o.z + ob.ground_offset + config.noise_sigma * ng;
                    let zr = o.z + ob.reg_offset + config.noise_sigma * nr;
                    let zm = merge_depth(zr, Some(zg));
                    [zg - o.z, zr - o.z, zm - o.z]
                })
                .collect();
            out
        })
        .collect();

    let n = errs.len() as f64;
    let stat = |k: usize| {
        let mean = errs.iter().map(|e| e[k]).sum::<f64>() / n;
        let var = errs.iter().map(|e| (e[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    };
    let (g, sg) = stat(0);
    let (r, sr) = stat(1);
    let (m, sm) = stat(2);
    let m_obj = objs.len() as f64;
    let pred_g = objs.iter().map(|o| o.pred_ground).sum::<f64>() / m_obj;
    let pred_r = objs.iter().map(|o| o.pred_reg).sum::<f64>() / m_obj;
    Ok(TrendRow {
        dh,
        mean_err_ground: g,
        mean_err_regressed: r,
        mean_err_merged: m,
        se_ground: sg,
        se_regressed: sr,
        se_merged: sm,
        predicted_ground: pred_g,
        predicted_regressed: pred_r,
        residual_ground: g - pred_g,
        residual_regressed: r - pred_r,
        exact_shift_err_ground: objs.iter().map(|o| o.exact_ground).sum::<f64>() / m_obj,
    })
}
