//! Inverse perspective-compressing mapping.
//!
//! A nonlinear vertical remap that gives a fronto-parallel surface the same
//! pixel height at every road depth: row spacing at depth `D_i` is scaled by
//! `S_i = y_0 / y_i`, where `y = v - c_y` and `y_0` is the row offset of the
//! farthest realizable sampling distance `D̂_max ≤ D_max`. Each row is also
//! scaled horizontally by the same factor around `c_x`, which turns the
//! detection-domain trapezoid into a rectangle.
//!
//! The forward map has an exact harmonic-sum form ([`RemapConfig::open_form_v`])
//! and a closed-form approximation ([`RemapConfig::forward_v`]) that agrees
//! with it to a few thousandths of a pixel and inverts analytically.

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::geometry::{csr_to_image, CameraRig, CddConfig, Csr, GeometryError, Line2};
use crate::raster::{sample_bilinear, sample_nearest, FloatImage, GrayImage, Raster};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RemapError {
    #[error("row offset {0} is at or above the remap singularity (v - c_y <= 1/2)")]
    RowAboveReference(f64),
    #[error("row {v} is at or above the horizon row {c_y}")]
    AtOrAboveHorizon { v: f64, c_y: f64 },
    #[error("remapped row {0} is below the invertible band")]
    NegativeDiscriminant(f64),
    #[error("searching region does not overlap the image")]
    RegionOutsideImage,
    #[error("line back-mapping is degenerate")]
    DegenerateFit,
    #[error("invalid remap configuration: {0}")]
    InvalidConfig(String),
}

impl From<GeometryError> for RemapError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::RegionOutsideImage => RemapError::RegionOutsideImage,
            GeometryError::AtOrAboveHorizon { v, c_y } => RemapError::AtOrAboveHorizon { v, c_y },
            other => RemapError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// How the searching region is cut out of the frame before remapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpSettings {
    pub interpolation: Interpolation,
    /// Curb height the warped band must still contain at the far limit, cm.
    pub clearance_height: f64,
    /// Curb depth the warped band must still contain beyond the far limit, cm.
    pub clearance_depth: f64,
}

impl Default for WarpSettings {
    fn default() -> Self {
        Self { interpolation: Interpolation::Bilinear, clearance_height: 30.0, clearance_depth: 40.0 }
    }
}

/// Parameters of the remap derived from the rig and detection domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemapConfig {
    /// Row offset of the reference row, `y_0 = f_y·H_C / D̂_max`.
    pub y0: f64,
    /// Longest sampling distance realizable by an integer row, cm.
    pub d_hat_max: f64,
    pub rig: CameraRig,
    /// Half-width of the remapped domain rectangle, cm.
    pub w_max: f64,
}

impl RemapConfig {
    pub fn new(rig: &CameraRig, cdd: &CddConfig) -> Result<Self, RemapError> {
        rig.validate()?;
        cdd.validate()?;
        let fh = rig.f_y * rig.h_c;
        // first integer row whose road depth does not exceed d_max
        let v0 = (rig.c_y + fh / cdd.d_max - 1e-9).ceil();
        let y0 = v0 - rig.c_y;
        if !(y0 > 1.0) {
            return Err(RemapError::InvalidConfig(format!("reference row offset y0 = {y0} must exceed 1")));
        }
        let d_hat_max = fh / y0;
        // no-interpolation condition over the realizable sampling distances
        let rate_hat = rig.f_y / d_hat_max;
        let min_rate = rig.f_y / d_hat_max.max(f64::MIN_POSITIVE);
        if rate_hat > min_rate * (1.0 + 1e-12) || d_hat_max > cdd.d_max * (1.0 + 1e-12) {
            return Err(RemapError::InvalidConfig("reference distance violates sampling bound".into()));
        }
        Ok(Self { y0, d_hat_max, rig: *rig, w_max: cdd.w_max })
    }

    /// Image row of the reference (first remapped) row.
    pub fn reference_row(&self) -> f64 {
        self.rig.c_y + self.y0
    }

    /// Closed-form vertical remap `ṽ = y0·ln[y² / (y0·(y − 1/2))] − 1/2`.
    pub fn forward_v(&self, v: f64) -> Result<f64, RemapError> {
        let y = v - self.rig.c_y;
        if !(y > 0.5) {
            return Err(RemapError::RowAboveReference(y));
        }
        Ok(self.y0 * (y * y / (self.y0 * (y - 0.5))).ln() - 0.5)
    }

    pub fn forward_u(&self, u: f64, v: f64) -> Result<f64, RemapError> {
        let y = v - self.rig.c_y;
        if !(y > 0.0) {
            return Err(RemapError::AtOrAboveHorizon { v, c_y: self.rig.c_y });
        }
        Ok(self.y0 * (u - self.rig.c_x) / y + self.rig.c_x)
    }

    pub fn forward(&self, p: &Point2<f64>) -> Result<Point2<f64>, RemapError> {
        Ok(Point2::new(self.forward_u(p.x, p.y)?, self.forward_v(p.y)?))
    }

    /// Exact harmonic partial sum `y0·Σ_{i=1..n} 1/(y0 + i)` for the integer
    /// row `v = reference_row + n`. Test oracle for [`Self::forward_v`].
    pub fn open_form_v(&self, v: i64) -> Result<f64, RemapError> {
        let n = v as f64 - self.reference_row();
        if (n - n.round()).abs() > 1e-9 || n < -1e-9 {
            return Err(RemapError::RowAboveReference(v as f64 - self.rig.c_y));
        }
        let n = n.round() as i64;
        // Neumaier compensated summation
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for i in 1..=n {
            let term = 1.0 / (self.y0 + i as f64);
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        Ok(self.y0 * (sum + comp))
    }

    /// Remapped row where the original-image line `l` crosses remapped column `ut`.
    pub fn line_row_at(&self, l: &Line2, ut: f64) -> Result<f64, RemapError> {
        // with du = u - c_x: y = a·du + beta and ut - c_x = y0·du / y
        let beta = l.a * self.rig.c_x + l.b - self.rig.c_y;
        let k = (ut - self.rig.c_x) / self.y0;
        let denom = 1.0 - k * l.a;
        if denom.abs() < 1e-12 {
            return Err(RemapError::DegenerateFit);
        }
        let du = k * beta / denom;
        self.forward_v(l.a * du + beta + self.rig.c_y)
    }

    /// Analytic inverse of the forward maps.
    pub fn inverse_map(&self, ut: f64, vt: f64) -> Result<Point2<f64>, RemapError> {
        let m = self.y0 * ((vt + 0.5) / self.y0).exp();
        if !(m >= 2.0) {
            return Err(RemapError::NegativeDiscriminant(vt));
        }
        let y = 0.5 * (m + (m * (m - 2.0)).sqrt());
        let v = y + self.rig.c_y;
        let u = (ut - self.rig.c_x) * y / self.y0 + self.rig.c_x;
        Ok(Point2::new(u, v))
    }

    /// Largest deviation of the closed-form row map from the harmonic sum
    /// over the integer rows from the reference row to the image bottom,
    /// with the row where it occurs.
    pub fn approximation_error(&self) -> (f64, i64) {
        let first = self.reference_row().round() as i64;
        let mut worst = (0.0, first);
        for v in first..self.rig.height as i64 {
            let (Ok(c), Ok(o)) = (self.forward_v(v as f64), self.open_form_v(v)) else { continue };
            if (c - o).abs() > worst.0 {
                worst = ((c - o).abs(), v);
            }
        }
        worst
    }

    /// Largest `forward(inverse(p)) - p` distance over an `n x n` grid that
    /// spans the remapped domain columns and rows down to the image bottom.
    pub fn round_trip_error(&self, n: usize) -> Result<f64, RemapError> {
        let (u0, u1) = self.domain_columns();
        let v1 = self.forward_v(self.rig.height as f64 - 1.0)?;
        let step = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (n.max(2) - 1) as f64;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let q = Point2::new(step(u0, u1, i), step(0.0, v1, j));
                let p = self.inverse_map(q.x, q.y)?;
                let r = self.forward(&p)?;
                worst = worst.max((r - q).norm());
            }
        }
        Ok(worst)
    }

    /// Remapped column span of the detection domain's side boundaries.
    pub fn domain_columns(&self) -> (f64, f64) {
        let half = self.y0 * self.rig.f_x * self.w_max / (self.rig.f_y * self.rig.h_c);
        (self.rig.c_x - half, self.rig.c_x + half)
    }
}

/// Remapped searching region with its placement in remapped coordinates.
#[derive(Debug, Clone)]
pub struct WarpedCsr {
    pub image: FloatImage,
    /// Remapped column `ũ` of raster column 0.
    pub u0: f64,
    /// Remapped row `ṽ` of raster row 0.
    pub v0: f64,
    pub csr: Csr,
}

impl WarpedCsr {
    pub fn to_raster(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(p.x - self.u0, p.y - self.v0)
    }

    pub fn to_remapped(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(p.x + self.u0, p.y + self.v0)
    }

    /// Converts a raster-coordinate line to remapped coordinates.
    pub fn line_to_remapped(&self, l: &Line2) -> Line2 {
        // v - v0 = a (u - u0) + b
        Line2 { a: l.a, b: l.b + self.v0 - l.a * self.u0 }
    }

    pub fn column_span(&self) -> (f64, f64) {
        (self.u0, self.u0 + self.image.width() as f64 - 1.0)
    }
}

/// Image rows bounding the band that is remapped for a searching region.
pub fn csr_row_band(csr: &Csr, cfg: &RemapConfig, settings: &WarpSettings) -> (f64, f64) {
    let rig = &cfg.rig;
    let bottom = (rig.c_y + rig.f_y * rig.h_c / csr.d_near).min(rig.bottom_row());
    let lift = (rig.h_c - settings.clearance_height).max(1.0);
    let top = rig.c_y + rig.f_y * lift / (csr.d_far + settings.clearance_depth);
    let top = top.max(0.0).max(rig.c_y + 1.0);
    (top, bottom)
}

/// Warps the searching region into the remapped rectangle.
pub fn warp_csr(
    image: &GrayImage,
    csr: &Csr,
    cfg: &RemapConfig,
    cdd: &CddConfig,
    settings: &WarpSettings,
) -> Result<WarpedCsr, RemapError> {
    csr_to_image(csr, &cfg.rig, cdd)?;
    if image.is_empty() {
        return Err(RemapError::RegionOutsideImage);
    }
    let (top, bottom) = csr_row_band(csr, cfg, settings);
    if !(bottom > top) {
        return Err(RemapError::RegionOutsideImage);
    }
    let v0 = cfg.forward_v(top)?;
    let height = (cfg.forward_v(bottom)? - v0).ceil().max(1.0) as usize;
    let (left, right) = cfg.domain_columns();
    let width = (right - left).ceil().max(1.0) as usize;

    let mut data = vec![0f32; width * height];
    for (r, row) in data.chunks_mut(width).enumerate() {
        let vt = v0 + r as f64;
        let m = cfg.inverse_map(left, vt)?;
        // the row of the source is shared along a remapped row
        let y = m.y - cfg.rig.c_y;
        for (c, px) in row.iter_mut().enumerate() {
            let u = (left + c as f64 - cfg.rig.c_x) * y / cfg.y0 + cfg.rig.c_x;
            *px = match settings.interpolation {
                Interpolation::Bilinear => sample_bilinear(image, u, m.y),
                Interpolation::Nearest => sample_nearest(image, u, m.y),
            };
        }
    }
    Ok(WarpedCsr { image: Raster::from_vec(width, height, data), u0: left, v0, csr: *csr })
}

/// Maps a remapped-space line back into the original image.
///
/// Straight lines do not stay straight under the vertical remap, so the line
/// is sampled across `[u_min, u_max]`, every sample is inverse mapped, and a
/// line is least-squares fitted to them. Returns the line and the fit RMS (px).
pub fn map_line_to_original(
    line: &Line2,
    cfg: &RemapConfig,
    u_min: f64,
    u_max: f64,
) -> Result<(Line2, f64), RemapError> {
    const SAMPLES: usize = 16;
    let mut pts = Vec::with_capacity(SAMPLES);
    for i in 0..SAMPLES {
        let ut = u_min + (u_max - u_min) * i as f64 / (SAMPLES - 1) as f64;
        pts.push(cfg.inverse_map(ut, line.v_at(ut))?);
    }
    let n = pts.len() as f64;
    let mu = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let suu: f64 = pts.iter().map(|p| (p.x - mu).powi(2)).sum();
    let suv: f64 = pts.iter().map(|p| (p.x - mu) * (p.y - mv)).sum();
    if suu < 1e-9 * n {
        return Err(RemapError::DegenerateFit);
    }
    let a = suv / suu;
    let b = mv - a * mu;
    let fitted = Line2::new(a, b).map_err(|_| RemapError::DegenerateFit)?;
    let rms = (pts.iter().map(|p| (fitted.v_at(p.x) - p.y).powi(2)).sum::<f64>() / n).sqrt();
    Ok((fitted, rms))
}
