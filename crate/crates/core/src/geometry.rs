//! 2D, bird's-eye-view and 3D box overlap measures.
//!
//! Boxes follow the camera convention: `y` is the vertical axis, the
//! ground footprint lives in the `x`/`z` plane and `yaw` rotates the
//! footprint about `y`. The rotated footprint intersection is computed by
//! convex polygon clipping; the vertical overlap is a 1-D interval
//! intersection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid 2D box [{x1}, {y1}, {x2}, {y2}]: corners must satisfy x1 <= x2 and y1 <= y2")]
    InvalidBox2D { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid 3D box: {0}")]
    InvalidBox3D(String),
    #[error("degenerate hull volume {0}")]
    DegenerateHull(f64),
    #[error("voxel resolution {0} is below the minimum of 16 cells per meter")]
    ResolutionTooLow(f64),
    #[error("malformed box document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Axis-aligned image box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let ok = [x1, y1, x2, y2].iter().all(|v| v.is_finite()) && x1 <= x2 && y1 <= y2;
        if !ok {
            return Err(GeometryError::InvalidBox2D { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for Box2D {
    type Error = GeometryError;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Box2D::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Box2D> for [f64; 4] {
    fn from(b: Box2D) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Seven-parameter 3D box with its detector score and projected 2D box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Box3DRecord", into = "Box3DRecord")]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub score: f64,
    pub box2d: Box2D,
}

#[derive(Serialize, Deserialize)]
struct Box3DRecord {
    cx: f64,
    cy: f64,
    cz: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw: f64,
    score: f64,
    box2d: Box2D,
}

impl TryFrom<Box3DRecord> for Box3D {
    type Error = GeometryError;

    fn try_from(r: Box3DRecord) -> Result<Self, Self::Error> {
        Box3D::new([r.cx, r.cy, r.cz], [r.l, r.w, r.h], r.yaw, r.score, r.box2d)
    }
}

impl From<Box3D> for Box3DRecord {
    fn from(b: Box3D) -> Self {
        Self {
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            l: b.l,
            w: b.w,
            h: b.h,
            yaw: b.yaw,
            score: b.score,
            box2d: b.box2d,
        }
    }
}

impl Box3D {
    pub fn new(
        center: [f64; 3],
        dims: [f64; 3],
        yaw: f64,
        score: f64,
        box2d: Box2D,
    ) -> Result<Self, GeometryError> {
        if !center.iter().chain(dims.iter()).all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(GeometryError::InvalidBox3D("non-finite parameter".into()));
        }
        if dims.iter().any(|&d| d <= 0.0) {
            return Err(GeometryError::InvalidBox3D(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidBox3D(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l: dims[0],
            w: dims[1],
            h: dims[2],
            yaw,
            score,
            box2d,
        })
    }

    /// A box whose projected 2D box is a placeholder; handy when only the 3D
    /// geometry matters.
    pub fn from_geometry(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Result<Self, GeometryError> {
        let placeholder = Box2D::new(0.0, 0.0, 1.0, 1.0)?;
        Self::new(center, dims, yaw, 1.0, placeholder)
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn translate(&self, d: [f64; 3]) -> Self {
        Self {
            cx: self.cx + d[0],
            cy: self.cy + d[1],
            cz: self.cz + d[2],
            ..*self
        }
    }

    /// Vertical extent `(bottom, top)` along `y`.
    pub fn y_range(&self) -> (f64, f64) {
        (self.cy - 0.5 * self.h, self.cy + 0.5 * self.h)
    }

    /// Footprint corners in the `x`/`z` plane, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (0.5 * self.l, 0.5 * self.w);
        [(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)].map(|(lx, lz)| {
            [
                self.cx + lx * c + lz * s,
                self.cz - lx * s + lz * c,
            ]
        })
    }

    /// Whether the BEV point `(x, z)` lies inside the rotated footprint.
    pub fn bev_contains(&self, x: f64, z: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dz) = (x - self.cx, z - self.cz);
        let lx = dx * c - dz * s;
        let lz = dx * s + dz * c;
        lx.abs() <= 0.5 * self.l && lz.abs() <= 0.5 * self.w
    }
}

/// Parses a JSON array of box records.
pub fn boxes_from_json(text: &str) -> Result<Vec<Box3D>, GeometryError> {
    serde_json::from_str(text).map_err(|e| GeometryError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn boxes_to_json(boxes: &[Box3D]) -> String {
    serde_json::to_string_pretty(boxes).expect("boxes always serialize")
}

pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn interval_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

fn ensure_ccw(mut poly: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if polygon_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Sutherland-Hodgman clipping of `subject` by the convex polygon `clip`.
/// Both polygons must be counter-clockwise.
pub(crate) fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            if dp >= 0.0 {
                output.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                output.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    output
}

/// Intersection area of the two rotated footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let pa = ensure_ccw(a.bev_corners().to_vec());
    let pb = ensure_ccw(b.bev_corners().to_vec());
    polygon_area(&clip_convex(&pa, &pb)).abs()
}

fn intersection_union(a: &Box3D, b: &Box3D) -> (f64, f64) {
    let inter = bev_intersection_area(a, b) * interval_overlap(a.y_range(), b.y_range());
    let union = a.volume() + b.volume() - inter;
    (inter, union)
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let (inter, union) = intersection_union(a, b);
    if a.volume() <= 0.0 || b.volume() <= 0.0 || union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Axis-aligned hull volume of the two boxes: the BEV bounding rectangle of
/// both footprints with their yaw removed, times the vertical hull extent.
pub fn hull_volume(a: &Box3D, b: &Box3D) -> f64 {
    let xmin = (a.cx - a.l / 2.0).min(b.cx - b.l / 2.0);
    let xmax = (a.cx + a.l / 2.0).max(b.cx + b.l / 2.0);
    let zmin = (a.cz - a.w / 2.0).min(b.cz - b.w / 2.0);
    let zmax = (a.cz + a.w / 2.0).max(b.cz + b.w / 2.0);
    let (ay, by) = (a.y_range(), b.y_range());
    let height = ay.1.max(by.1) - ay.0.min(by.0);
    (xmax - xmin) * (zmax - zmin) * height
}

/// Generalized 3D IoU: `V(∩)/V(∪) + V(∪)/V_hull − 1`.
pub fn giou3d(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    let hull = hull_volume(a, b);
    if !(hull > 0.0) || !hull.is_finite() {
        return Err(GeometryError::DegenerateHull(hull));
    }
    let (inter, union) = intersection_union(a, b);
    if union <= 0.0 {
        return Err(GeometryError::DegenerateHull(hull));
    }
    // with different yaws the de-rotated hull can be smaller than the
    // rotated union; the enclosing volume is never allowed below the union
    Ok(inter / union + union / hull.max(union) - 1.0)
}

/// Brute-force voxel estimate of the 3D IoU used to check [`iou3d`].
///
/// Cells are counted at their centers on a regular grid covering both boxes.
/// Because the vertical extent of each box is an interval, the 3D count
/// factors into a BEV count times a vertical count on the same grid.
pub fn voxel_iou3d_oracle(a: &Box3D, b: &Box3D, resolution: f64) -> Result<f64, GeometryError> {
    if !(resolution >= 16.0) {
        return Err(GeometryError::ResolutionTooLow(resolution));
    }
    let cell = 1.0 / resolution;
    let corners: Vec<[f64; 2]> = a.bev_corners().into_iter().chain(b.bev_corners()).collect();
    let xmin = corners.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let xmax = corners.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let zmin = corners.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let zmax = corners.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let nx = ((xmax - xmin) / cell).ceil() as usize;
    let nz = ((zmax - zmin) / cell).ceil() as usize;

    let (mut bev_a, mut bev_b, mut bev_ab) = (0u64, 0u64, 0u64);
    for i in 0..nx {
        let x = xmin + (i as f64 + 0.5) * cell;
        for k in 0..nz {
            let z = zmin + (k as f64 + 0.5) * cell;
            let ia = a.bev_contains(x, z);
            let ib = b.bev_contains(x, z);
            bev_a += ia as u64;
            bev_b += ib as u64;
            bev_ab += (ia && ib) as u64;
        }
    }

    let (ay, by) = (a.y_range(), b.y_range());
    let ymin = ay.0.min(by.0);
    let ny = ((ay.1.max(by.1) - ymin) / cell).ceil() as usize;
    let (mut col_a, mut col_b, mut col_ab) = (0u64, 0u64, 0u64);
    for j in 0..ny {
        let y = ymin + (j as f64 + 0.5) * cell;
        let ia = y >= ay.0 && y <= ay.1;
        let ib = y >= by.0 && y <= by.1;
        col_a += ia as u64;
        col_b += ib as u64;
        col_ab += (ia && ib) as u64;
    }

    let vol_a = (bev_a * col_a) as f64;
    let vol_b = (bev_b * col_b) as f64;
    let inter = (bev_ab * col_ab) as f64;
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok(inter / union)
}
