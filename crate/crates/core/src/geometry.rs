//! Camera rig, road-plane ranging and 2D line algebra.
//!
//! Conventions: world lengths in centimeters, camera frame with `x` to the
//! right, `y` down (towards the road) and `z` forward. The road plane is
//! `y = H_C`. Image coordinates are pixels with `v` pointing down and pixel
//! centers on integer coordinates.

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

/// Largest slope accepted for a [`Line2`]. Curb edges are near-horizontal.
pub const MAX_LINE_SLOPE: f64 = 5.0;

/// Lines whose slopes differ by less than this are treated as parallel.
const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("row {v} is at or above the horizon row {c_y}")]
    AtOrAboveHorizon { v: f64, c_y: f64 },
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("line slope {0} is not finite or too steep")]
    NearVertical(f64),
    #[error("searching region does not overlap the image")]
    RegionOutsideImage,
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),
    #[error("invalid detection domain: {0}")]
    InvalidDomain(String),
}

/// Intrinsics and mounting height of the forward camera.
///
/// The camera's `x z` plane is parallel to the road, so there is no tilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraRig {
    pub f_x: f64,
    pub f_y: f64,
    pub c_x: f64,
    pub c_y: f64,
    /// Height of the projection center above the road, cm.
    pub h_c: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            f_x: 1000.0,
            f_y: 1000.0,
            c_x: 960.0,
            c_y: 540.0,
            h_c: 55.0,
            width: 1920,
            height: 1080,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidRig(msg.to_string()));
        if !(self.f_x > 0.0 && self.f_y > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.c_x > 0.0 && self.c_x < self.width as f64) {
            return bad("c_x must lie inside the image");
        }
        if !(self.c_y > 0.0 && self.c_y < self.height as f64) {
            return bad("c_y must lie inside the image");
        }
        if !(self.h_c > 0.0) {
            return bad("camera height must be positive");
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Point2<f64> {
        Point2::new(self.c_x, self.c_y)
    }

    /// Row index of the lowest pixel row.
    pub fn bottom_row(&self) -> f64 {
        self.height as f64 - 1.0
    }

    /// Same rig with focal lengths, principal point and image size scaled by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            f_x: self.f_x * k,
            f_y: self.f_y * k,
            c_x: self.c_x * k,
            c_y: self.c_y * k,
            h_c: self.h_c,
            width: (self.width as f64 * k).round() as u32,
            height: (self.height as f64 * k).round() as u32,
        }
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 - 1.0 && p.y <= self.height as f64 - 1.0
    }
}

/// Projects a camera-frame point with the pinhole model.
pub fn project_point(p: &Vector3<f64>, rig: &CameraRig) -> Result<Point2<f64>, GeometryError> {
    if !(p.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Point2::new(
        rig.f_x * p.x / p.z + rig.c_x,
        rig.f_y * p.y / p.z + rig.c_y,
    ))
}

/// Depth of the road-plane point imaged on row `v`.
pub fn distance_from_row(v: f64, rig: &CameraRig) -> Result<f64, GeometryError> {
    let y = v - rig.c_y;
    if !(y > 0.0) {
        return Err(GeometryError::AtOrAboveHorizon { v, c_y: rig.c_y });
    }
    Ok(rig.f_y * rig.h_c / y)
}

/// Image row of the road-plane points at depth `d`.
pub fn row_from_distance(d: f64, rig: &CameraRig) -> Result<f64, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDistance(d));
    }
    Ok(rig.c_y + rig.f_y * rig.h_c / d)
}

/// Vertical sampling rate of a fronto-parallel surface at depth `d`, px/cm.
pub fn sampling_rate(d: f64, rig: &CameraRig) -> Result<f64, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDistance(d));
    }
    Ok(rig.f_y / d)
}

/// Curb pose and size relative to the camera.
///
/// The base edge is the road-level front edge, passing through `(0, H_C, d)`
/// and rotated by `theta` about the vertical axis, so that it lies on
/// `z = d - x·tan(theta)`. `e == 0` marks a depth that was not estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurbState {
    pub d: f64,
    pub theta: f64,
    pub h: f64,
    pub e: f64,
}

/// Index of a horizontal curb edge, lowest in the image first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurbEdge {
    /// Front edge on the road.
    Base,
    /// Front edge of the top face.
    TopFront,
    /// Rear edge of the top face.
    TopRear,
}

impl CurbState {
    pub fn new(d: f64, theta: f64, h: f64, e: f64) -> Self {
        Self { d, theta, h, e }
    }

    pub fn is_valid(&self) -> bool {
        self.d > 0.0
            && self.theta.abs() < std::f64::consts::FRAC_PI_2
            && self.h > 0.0
            && self.e >= 0.0
            && [self.d, self.theta, self.h, self.e].iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.d, self.theta, self.h, self.e]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { d: v[0], theta: v[1], h: v[2], e: v[3] }
    }

    /// Camera-frame point on `edge` at lateral position `x`.
    pub fn edge_point(&self, edge: CurbEdge, x: f64, rig: &CameraRig) -> Vector3<f64> {
        let (y, s) = match edge {
            CurbEdge::Base => (rig.h_c, 0.0),
            CurbEdge::TopFront => (rig.h_c - self.h, 0.0),
            CurbEdge::TopRear => (rig.h_c - self.h, self.e),
        };
        let z = self.d - x * self.theta.tan() + s / self.theta.cos();
        Vector3::new(x, y, z)
    }

    /// Image projection of a curb edge.
    pub fn edge_line(&self, edge: CurbEdge, rig: &CameraRig) -> Result<Line2, GeometryError> {
        // any two points in front of the camera span the projected line
        let t = self.theta.tan().abs();
        let x = if t > 1e-12 { (0.25 * self.d / t).min(50.0) } else { 50.0 };
        let p = project_point(&self.edge_point(edge, -x, rig), rig)?;
        let q = project_point(&self.edge_point(edge, x, rig), rig)?;
        Line2::through(&p, &q)
    }
}

/// Image line `v = a·u + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
}

impl Line2 {
    pub fn new(a: f64, b: f64) -> Result<Self, GeometryError> {
        if !a.is_finite() || !b.is_finite() || a.abs() > MAX_LINE_SLOPE {
            return Err(GeometryError::NearVertical(a));
        }
        Ok(Self { a, b })
    }

    pub fn through(p: &Point2<f64>, q: &Point2<f64>) -> Result<Self, GeometryError> {
        let du = q.x - p.x;
        if du.abs() < 1e-12 {
            return Err(GeometryError::NearVertical(f64::INFINITY));
        }
        let a = (q.y - p.y) / du;
        Self::new(a, p.y - a * p.x)
    }

    pub fn v_at(&self, u: f64) -> f64 {
        self.a * u + self.b
    }

    pub fn homogeneous(&self) -> HomLine {
        HomLine(Vector3::new(self.a, -1.0, self.b))
    }
}

/// Line in homogeneous form `l · [u, v, 1] = 0`. Unlike [`Line2`] it can be
/// vertical; used for the detection-domain side boundaries and construction
/// lines of the target control points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomLine(pub Vector3<f64>);

impl HomLine {
    pub fn through(p: &Point2<f64>, q: &Point2<f64>) -> Self {
        HomLine(Vector3::new(p.x, p.y, 1.0).cross(&Vector3::new(q.x, q.y, 1.0)))
    }

    pub fn vertical(u: f64) -> Self {
        HomLine(Vector3::new(1.0, 0.0, -u))
    }

    /// Signed algebraic distance of a point from the line (pixels when normalized).
    pub fn distance(&self, p: &Point2<f64>) -> f64 {
        let l = &self.0;
        (l.x * p.x + l.y * p.y + l.z) / l.x.hypot(l.y)
    }

    /// Column at which the line crosses row `v`, if it is not horizontal.
    pub fn u_at(&self, v: f64) -> Option<f64> {
        let l = &self.0;
        if l.x.abs() < 1e-15 {
            None
        } else {
            Some(-(l.y * v + l.z) / l.x)
        }
    }

    pub fn intersect(&self, other: &HomLine) -> Intersection {
        let p = self.0.cross(&other.0);
        let scale = self.0.norm() * other.0.norm();
        if p.z.abs() <= 1e-12 * scale {
            Intersection::AtInfinity
        } else {
            Intersection::Point(Point2::new(p.x / p.z, p.y / p.z))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intersection {
    Point(Point2<f64>),
    AtInfinity,
}

impl Intersection {
    pub fn point(self) -> Option<Point2<f64>> {
        match self {
            Intersection::Point(p) => Some(p),
            Intersection::AtInfinity => None,
        }
    }
}

/// Intersection of two slope–intercept lines via the cross product of their
/// homogeneous vectors `[a, -1, b]`.
pub fn intersect_lines(l1: &Line2, l2: &Line2) -> Intersection {
    if (l1.a - l2.a).abs() < PARALLEL_EPS {
        return Intersection::AtInfinity;
    }
    let p = l1.homogeneous().0.cross(&l2.homogeneous().0);
    Intersection::Point(Point2::new(p.x / p.z, p.y / p.z))
}

/// Rectangular road-plane area ahead of the vehicle where curbs are detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CddConfig {
    pub d_min: f64,
    pub d_max: f64,
    /// Half-width of the domain, cm.
    pub w_max: f64,
}

impl CddConfig {
    /// Domain whose near limit is the depth seen by the bottom image row.
    pub fn from_rig(rig: &CameraRig, d_max: f64, w_max: f64) -> Result<Self, GeometryError> {
        let d_min = distance_from_row(rig.bottom_row(), rig)?;
        let cdd = Self { d_min, d_max, w_max };
        cdd.validate()?;
        Ok(cdd)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(GeometryError::InvalidDomain(format!(
                "need 0 < d_min < d_max, got {} and {}",
                self.d_min, self.d_max
            )));
        }
        if !(self.w_max > 0.0) {
            return Err(GeometryError::InvalidDomain("w_max must be positive".into()));
        }
        Ok(())
    }

    pub fn area_m2(&self) -> f64 {
        2.0 * self.w_max * (self.d_max - self.d_min) / 1.0e4
    }

    pub fn contains_depth(&self, d: f64) -> bool {
        d >= self.d_min && d <= self.d_max
    }
}

/// Depth slice of the detection domain searched in the current frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    pub d_near: f64,
    pub d_far: f64,
}

impl Csr {
    pub fn new(d_near: f64, d_far: f64, cdd: &CddConfig) -> Result<Self, GeometryError> {
        // small slack so spans computed from clipped arithmetic stay valid
        let tol = 1e-9 * cdd.d_max;
        if !(d_near >= cdd.d_min - tol && d_near < d_far && d_far <= cdd.d_max + tol) {
            return Err(GeometryError::InvalidDomain(format!(
                "searching region [{d_near}, {d_far}] outside [{}, {}]",
                cdd.d_min, cdd.d_max
            )));
        }
        Ok(Self { d_near, d_far })
    }

    pub fn full(cdd: &CddConfig) -> Self {
        Self { d_near: cdd.d_min, d_far: cdd.d_max }
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.d_near && d <= self.d_far
    }
}

/// Image footprint of a [`Csr`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsrImage {
    /// Near-left, near-right, far-right, far-left corners.
    pub corners: [Point2<f64>; 4],
    pub b_l: HomLine,
    pub b_r: HomLine,
}

impl CsrImage {
    pub fn near_row(&self) -> f64 {
        self.corners[0].y
    }

    pub fn far_row(&self) -> f64 {
        self.corners[3].y
    }
}

/// Projections `b_L`, `b_R` of the left and right domain boundaries. Both pass
/// through the principal point, the vanishing point of lines parallel to `z`.
pub fn side_boundaries(rig: &CameraRig, cdd: &CddConfig) -> (HomLine, HomLine) {
    let c = rig.principal_point();
    let at = |x: f64| {
        project_point(&Vector3::new(x, rig.h_c, cdd.d_max), rig).expect("d_max is positive")
    };
    (HomLine::through(&c, &at(-cdd.w_max)), HomLine::through(&c, &at(cdd.w_max)))
}

pub fn csr_to_image(csr: &Csr, rig: &CameraRig, cdd: &CddConfig) -> Result<CsrImage, GeometryError> {
    let p = |x: f64, z: f64| project_point(&Vector3::new(x, rig.h_c, z), rig);
    let w = cdd.w_max;
    let corners = [p(-w, csr.d_near)?, p(w, csr.d_near)?, p(w, csr.d_far)?, p(-w, csr.d_far)?];
    let (b_l, b_r) = side_boundaries(rig, cdd);

    let (w_px, h_px) = (rig.width as f64 - 1.0, rig.height as f64 - 1.0);
    let rows_overlap = corners[3].y <= h_px && corners[0].y >= 0.0;
    let cols_overlap = corners[0].x <= w_px && corners[1].x >= 0.0;
    if !(rows_overlap && cols_overlap) {
        return Err(GeometryError::RegionOutsideImage);
    }
    Ok(CsrImage { corners, b_l, b_r })
}
