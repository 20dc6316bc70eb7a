//! Synthetic road scenes with a parametric curb, rendered by analytic ray
//! classification, plus approach trajectories and ground-truth records.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::{sample_windows, AppearanceConfig, Patch};
use crate::geometry::{distance_from_row, CameraRig, CddConfig, CurbEdge, CurbState, Line2};
use crate::ipcm::RemapConfig;
use crate::raster::{load_pgm, save_pgm, GrayImage};
use crate::template::{fit_template, initial_state, FitConfig, LineTuple};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("frame {frame}: no curb pixel is visible")]
    StateOutsideFrame { frame: usize, record: Box<GroundTruthRecord> },
    #[error("invalid photometry: {0}")]
    InvalidPhotometry(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lighting {
    /// Darker band with hard lateral borders across the curb faces.
    HardBand { from: f64, to: f64, factor: f32 },
    /// Brightness ramp across the whole scene from left to right.
    SoftGradient { left: f32, right: f32 },
    Uniform,
}

/// Surface intensities, lighting, texture and distractors of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Photometry {
    pub road: f32,
    pub face: f32,
    pub top: f32,
    pub beyond: f32,
    pub sky: f32,
    pub noise_sigma: f32,
    /// Peak deviation of the smooth surface texture.
    pub texture_amplitude: f32,
    /// Texture cell size on the surfaces, cm.
    pub texture_cell: f64,
    pub lighting: Lighting,
    /// Number of small painted patches on the road.
    pub road_patches: usize,
    /// Probability of a full-width painted stripe on the road.
    pub stripe_probability: f64,
    pub min_contrast: f32,
}

impl Photometry {
    pub fn clear() -> Self {
        Self {
            road: 90.0,
            face: 175.0,
            top: 125.0,
            beyond: 60.0,
            sky: 200.0,
            noise_sigma: 4.0,
            texture_amplitude: 6.0,
            texture_cell: 15.0,
            lighting: Lighting::HardBand { from: -40.0, to: 25.0, factor: 0.8 },
            road_patches: 0,
            stripe_probability: 0.0,
            min_contrast: 30.0,
        }
    }

    pub fn shadow() -> Self {
        Self {
            road: 80.0,
            face: 165.0,
            top: 115.0,
            beyond: 55.0,
            lighting: Lighting::SoftGradient { left: 0.8, right: 1.0 },
            ..Self::clear()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "clear" => Some(Self::clear()),
            "shadow" => Some(Self::shadow()),
            _ => None,
        }
    }

    pub fn with_distractors(mut self, patches: usize, stripe_probability: f64) -> Self {
        self.road_patches = patches;
        self.stripe_probability = stripe_probability;
        self
    }

    pub fn with_noise(mut self, sigma: f32) -> Self {
        self.noise_sigma = sigma;
        self
    }

    fn darkest_factor(&self) -> f32 {
        match self.lighting {
            Lighting::HardBand { factor, .. } => factor.min(1.0),
            Lighting::SoftGradient { left, right } => left.min(right).min(1.0),
            Lighting::Uniform => 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidPhotometry(m));
        for (name, v) in [("road", self.road), ("face", self.face), ("top", self.top), ("beyond", self.beyond), ("sky", self.sky)] {
            if !(0.0..=255.0).contains(&v) {
                return bad(format!("{name} intensity {v} outside [0, 255]"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.texture_amplitude >= 0.0) || !(self.texture_cell > 0.0) {
            return bad("noise, texture amplitude and cell must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.stripe_probability) {
            return bad("stripe probability outside [0, 1]".into());
        }
        let k = self.darkest_factor();
        for (pair, x, y) in [("road/face", self.road, self.face), ("face/top", self.face, self.top), ("top/beyond", self.top, self.beyond)] {
            if (x - y).abs() * k < self.min_contrast {
                return bad(format!("{pair} contrast below {}", self.min_contrast));
            }
        }
        Ok(())
    }
}

/// Per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub frame: usize,
    pub state: Option<CurbState>,
    /// Projections of the base, top-front and top-rear edges.
    pub edges: Option<[Line2; 3]>,
    /// The base edge is visible on the central column.
    pub present: bool,
    /// A curb exists but its base edge is below the image.
    pub partial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Road,
    Face,
    Top,
    Beyond,
    Sky,
}

/// Painted full-width stripe on the road, depths in cm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stripe {
    pub z_near: f64,
    pub z_far: f64,
    pub value: f32,
}

/// Painted rectangle on the road shifting the road intensity by `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadPatch {
    pub x0: f64,
    pub x1: f64,
    pub z0: f64,
    pub z1: f64,
    pub delta: f32,
}

/// Distractors drawn for one frame seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneLayout {
    pub stripes: Vec<Stripe>,
    pub patches: Vec<RoadPatch>,
}

/// Distractor layout used by `render_frame` for the same arguments.
/// Stripes stay in front of the curb.
pub fn scene_layout(state: Option<CurbState>, cdd: &CddConfig, photo: &Photometry, seed: u64) -> SceneLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE4E);
    let front = state.map(|s| s.d - s.theta.tan().abs() * cdd.w_max - 30.0).unwrap_or(cdd.d_max);
    let mut stripes = Vec::new();
    if rng.gen_bool(photo.stripe_probability) && front > cdd.d_min + 40.0 {
        let z_near = rng.gen_range(cdd.d_min + 10.0..front - 20.0);
        let thickness = rng.gen_range(10.0..20.0);
        stripes.push(Stripe { z_near, z_far: z_near + thickness, value: rng.gen_range(170.0..220.0) });
    }
    let mut patches = Vec::new();
    for _ in 0..photo.road_patches {
        let x0 = rng.gen_range(-cdd.w_max..cdd.w_max);
        let z0 = rng.gen_range(cdd.d_min..cdd.d_max);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        patches.push(RoadPatch {
            x0,
            x1: x0 + rng.gen_range(20.0..80.0),
            z0,
            z1: z0 + rng.gen_range(5.0..30.0),
            delta: sign * rng.gen_range(25.0..45.0),
        });
    }
    SceneLayout { stripes, patches }
}

struct Scene<'a> {
    rig: &'a CameraRig,
    photo: &'a Photometry,
    curb: Option<CurbState>,
    sin_t: f64,
    cos_t: f64,
    stripes: Vec<Stripe>,
    patches: Vec<RoadPatch>,
    texture_seed: u64,
}

fn hash2(seed: u64, i: i64, j: i64) -> f32 {
    // splitmix64 over the lattice coordinates
    let mut z = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32 * 2.0 - 1.0
}

/// Lattice values of the last cell looked up; neighbouring pixels mostly
/// share a cell.
#[derive(Default)]
struct NoiseCache {
    key: Option<(u64, i64, i64)>,
    corners: [f32; 4],
}

fn value_noise(cache: &mut NoiseCache, seed: u64, x: f64, y: f64) -> f32 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = ((x - fx) as f32, (y - fy) as f32);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (i, j) = (fx as i64, fy as i64);
    if cache.key != Some((seed, i, j)) {
        cache.corners = [hash2(seed, i, j), hash2(seed, i + 1, j), hash2(seed, i, j + 1), hash2(seed, i + 1, j + 1)];
        cache.key = Some((seed, i, j));
    }
    let [a, b, c, d] = cache.corners;
    let top = a * (1.0 - sx) + b * sx;
    let bottom = c * (1.0 - sx) + d * sx;
    top * (1.0 - sy) + bottom * sy
}

impl Scene<'_> {
    /// Surface hit by the ray through `(u, v)` and the hit point `(x, z)`.
    fn classify(&self, u: f64, v: f64) -> (Surface, f64, f64) {
        self.classify_ray(self.ray_x(u), self.ray_y(v))
    }

    fn ray_x(&self, u: f64) -> f64 {
        (u - self.rig.c_x) / self.rig.f_x
    }

    fn ray_y(&self, v: f64) -> f64 {
        (v - self.rig.c_y) / self.rig.f_y
    }

    /// Same as `classify` for the normalized ray `(rx, ry, 1)`.
    fn classify_ray(&self, rx: f64, ry: f64) -> (Surface, f64, f64) {
        let rig = self.rig;
        let Some(c) = self.curb else {
            if ry <= 0.0 {
                return (Surface::Sky, 0.0, 0.0);
            }
            let z = rig.h_c / ry;
            return (Surface::Road, rx * z, z);
        };
        let k = rx * self.sin_t + self.cos_t;
        if k > 0.0 {
            let z_face = c.d * self.cos_t / k;
            let y_face = ry * z_face;
            if y_face > rig.h_c {
                let z = rig.h_c / ry;
                return (Surface::Road, rx * z, z);
            }
            if y_face >= rig.h_c - c.h {
                return (Surface::Face, rx * z_face, z_face);
            }
        } else if ry > 0.0 {
            let z = rig.h_c / ry;
            return (Surface::Road, rx * z, z);
        }
        if ry <= 0.0 {
            return (Surface::Sky, 0.0, 0.0);
        }
        let z = (rig.h_c - c.h) / ry;
        let s = z * k - c.d * self.cos_t;
        if s <= c.e {
            (Surface::Top, rx * z, z)
        } else {
            (Surface::Beyond, rx * z, z)
        }
    }

    fn lateral(&self, x: f64, z: f64) -> f64 {
        x * self.cos_t - z * self.sin_t
    }

    fn shade(&self, cache: &mut NoiseCache, surface: Surface, x: f64, z: f64) -> f32 {
        let p = self.photo;
        let mut value = match surface {
            Surface::Road => p.road,
            Surface::Face => p.face,
            Surface::Top => p.top,
            Surface::Beyond => p.beyond,
            Surface::Sky => return p.sky,
        };
        if surface == Surface::Road {
            for s in &self.stripes {
                if z >= s.z_near && z <= s.z_far {
                    value = s.value;
                }
            }
            for q in &self.patches {
                if x >= q.x0 && x <= q.x1 && z >= q.z0 && z <= q.z1 {
                    value += q.delta;
                }
            }
        }
        let lat = self.lateral(x, z);
        let factor = match p.lighting {
            Lighting::HardBand { from, to, factor } if matches!(surface, Surface::Face | Surface::Top) && lat >= from && lat <= to => factor,
            Lighting::SoftGradient { left, right } => {
                let t = ((lat + 130.0) / 260.0).clamp(0.0, 1.0) as f32;
                left + (right - left) * t
            }
            _ => 1.0,
        };
        value *= factor;
        if p.texture_amplitude > 0.0 {
            let tag = surface as u64;
            value += p.texture_amplitude * value_noise(cache, self.texture_seed ^ tag, lat / p.texture_cell, z / p.texture_cell);
        }
        value
    }

    /// `ray` is the precomputed normalized ray through the pixel center.
    fn render_pixel(&self, cache: &mut NoiseCache, u: f64, v: f64, ray: (f64, f64), corners: [Surface; 4]) -> f32 {
        if corners.iter().all(|&s| s == corners[0]) {
            let (s, x, z) = self.classify_ray(ray.0, ray.1);
            return self.shade(cache, s, x, z);
        }
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let su = u - 0.375 + 0.25 * i as f64;
                let sv = v - 0.375 + 0.25 * j as f64;
                let (s, x, z) = self.classify(su, sv);
                acc += self.shade(cache, s, x, z);
            }
        }
        acc / 16.0
    }
}

fn row_seed(seed: u64, row: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Edge lines and visibility flags of a state under a rig.
pub fn ground_truth(frame: usize, state: Option<CurbState>, rig: &CameraRig) -> GroundTruthRecord {
    let Some(s) = state else {
        return GroundTruthRecord { frame, state: None, edges: None, present: false, partial: false };
    };
    let lines = [CurbEdge::Base, CurbEdge::TopFront, CurbEdge::TopRear].map(|e| s.edge_line(e, rig));
    let edges = match lines {
        [Ok(a), Ok(b), Ok(c)] => Some([a, b, c]),
        _ => None,
    };
    let bottom = rig.bottom_row();
    let (present, partial) = match &edges {
        Some(e) => {
            let base_row = e[0].v_at(rig.c_x);
            let top_row = e[2].v_at(rig.c_x);
            (base_row <= bottom, base_row > bottom && top_row <= bottom)
        }
        None => (false, false),
    };
    GroundTruthRecord { frame, state, edges, present, partial }
}

/// Renders one frame. A `None` state is a curb-free road.
///
/// Pixels whose corners see different surfaces are 4×4 supersampled. Noise
/// is drawn per row from a generator seeded by `(seed, row)`.
pub fn render_frame(
    frame: usize,
    state: Option<CurbState>,
    rig: &CameraRig,
    cdd: &CddConfig,
    photo: &Photometry,
    seed: u64,
) -> Result<(GrayImage, GroundTruthRecord), SynthError> {
    photo.validate()?;
    let record = ground_truth(frame, state, rig);
    let layout = scene_layout(state, cdd, photo, seed);
    let scene = Scene {
        rig,
        photo,
        curb: state,
        sin_t: state.map_or(0.0, |s| s.theta.sin()),
        cos_t: state.map_or(1.0, |s| s.theta.cos()),
        stripes: layout.stripes,
        patches: layout.patches,
        texture_seed: seed.rotate_left(17) ^ 0x7E47,
    };

    let (w, h) = (rig.width as usize, rig.height as usize);
    let corner_rx: Vec<f64> = (0..=w).map(|i| scene.ray_x(i as f64 - 0.5)).collect();
    let center_rx: Vec<f64> = (0..w).map(|i| scene.ray_x(i as f64)).collect();
    let mut corner_rows: Vec<Vec<Surface>> = (0..=h)
        .into_par_iter()
        .map(|j| {
            let ry = scene.ray_y(j as f64 - 0.5);
            corner_rx.iter().map(|&rx| scene.classify_ray(rx, ry).0).collect()
        })
        .collect();
    let normal = Normal::new(0.0f32, photo.noise_sigma.max(0.0)).expect("finite sigma");
    let mut data = vec![0u8; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        let (upper, lower) = (&corner_rows[j], &corner_rows[j + 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed(seed, j));
        let mut cache = NoiseCache::default();
        let ry = scene.ray_y(j as f64);
        for (i, px) in row.iter_mut().enumerate() {
            let corners = [upper[i], upper[i + 1], lower[i], lower[i + 1]];
            let mut value = scene.render_pixel(&mut cache, i as f64, j as f64, (center_rx[i], ry), corners);
            if photo.noise_sigma > 0.0 {
                value += normal.sample(&mut rng);
            }
            *px = value.round().clamp(0.0, 255.0) as u8;
        }
    });
    corner_rows.clear();

    let image = GrayImage::from_vec(w, h, data);
    if state.is_some() && !record.present && !record.partial {
        return Err(SynthError::StateOutsideFrame { frame, record: Box::new(record) });
    }
    Ok((image, record))
}

/// Constant-speed approach with optional yaw drift and jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Trajectory {
    pub d_start: f64,
    pub d_end: f64,
    /// Approach speed, cm/s.
    pub speed: f64,
    pub fps: f64,
    pub theta_start: f64,
    /// Yaw change, rad/s.
    pub yaw_rate: f64,
    pub h: f64,
    pub e: f64,
    /// Per-frame Gaussian jitter on D (cm) and on yaw (rad).
    pub jitter_d: f64,
    pub jitter_theta: f64,
    /// Per-frame Gaussian shift of the principal row, px, standing in for
    /// camera pitch vibration. The detector keeps the nominal rig.
    pub row_jitter: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            d_start: 500.0,
            d_end: 100.0,
            speed: 30.0,
            fps: 21.0,
            theta_start: 0.0,
            yaw_rate: 0.0,
            h: 12.0,
            e: 20.0,
            jitter_d: 0.0,
            jitter_theta: 0.0,
            row_jitter: 0.0,
        }
    }
}

impl Trajectory {
    pub fn frame_count(&self) -> usize {
        ((self.d_start - self.d_end).abs() / self.speed * self.fps).floor() as usize + 1
    }

    pub fn states(&self, seed: u64) -> Result<Vec<CurbState>, SynthError> {
        if !(self.speed > 0.0 && self.fps > 0.0 && self.d_end > 0.0 && self.d_start > 0.0) {
            return Err(SynthError::InvalidTrajectory("speed, fps and distances must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A4EC7);
        let jd = Normal::new(0.0, self.jitter_d.max(0.0)).expect("finite jitter");
        let jt = Normal::new(0.0, self.jitter_theta.max(0.0)).expect("finite jitter");
        let dir = if self.d_end < self.d_start { -1.0 } else { 1.0 };
        Ok((0..self.frame_count())
            .map(|t| {
                let time = t as f64 / self.fps;
                let d = self.d_start + dir * self.speed * time + jd.sample(&mut rng);
                let theta = self.theta_start + self.yaw_rate * time + jt.sample(&mut rng);
                CurbState::new(d, theta, self.h, self.e)
            })
            .collect())
    }
}

impl Trajectory {
    /// Principal-row offsets of every frame.
    pub fn row_offsets(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0091_75C4);
        let n = Normal::new(0.0, self.row_jitter.max(0.0)).expect("finite jitter");
        (0..self.frame_count()).map(|_| n.sample(&mut rng)).collect()
    }

    /// Rig that renders frame `t` given the offsets from `row_offsets`.
    pub fn frame_rig(rig: &CameraRig, offsets: &[f64], t: usize) -> CameraRig {
        CameraRig { c_y: rig.c_y + offsets.get(t).copied().unwrap_or(0.0), ..*rig }
    }
}

/// Renders a trajectory with its principal-row jitter. Ground-truth edge
/// lines refer to the jittered rig of each frame.
pub fn render_trajectory(
    traj: &Trajectory,
    rig: &CameraRig,
    cdd: &CddConfig,
    photo: &Photometry,
    seed: u64,
) -> Result<Vec<(GrayImage, GroundTruthRecord)>, SynthError> {
    let states = traj.states(seed)?;
    let offsets = traj.row_offsets(seed);
    states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let frame_rig = Trajectory::frame_rig(rig, &offsets, t);
            let frame_seed = seed.wrapping_add(t as u64);
            match render_frame(t, Some(*s), &frame_rig, cdd, photo, frame_seed) {
                Err(SynthError::StateOutsideFrame { record, .. }) => {
                    Ok((render_frame(t, None, &frame_rig, cdd, photo, frame_seed)?.0, *record))
                }
                other => other,
            }
        })
        .collect()
}

/// Renders a sequence; frame `t` uses seed `seed + t`.
pub fn render_sequence(
    states: &[Option<CurbState>],
    rig: &CameraRig,
    cdd: &CddConfig,
    photo: &Photometry,
    seed: u64,
) -> Result<Vec<(GrayImage, GroundTruthRecord)>, SynthError> {
    states
        .iter()
        .enumerate()
        .map(|(t, s)| match render_frame(t, *s, rig, cdd, photo, seed.wrapping_add(t as u64)) {
            Err(SynthError::StateOutsideFrame { record, .. }) => {
                let (img, _) = render_frame(t, None, rig, cdd, photo, seed.wrapping_add(t as u64))?;
                Ok((img, *record))
            }
            other => other,
        })
        .collect()
}

pub const GT_HEADER: [&str; 13] =
    ["frame", "present", "partial", "D_cm", "theta_rad", "H_cm", "E_cm", "a1", "b1", "a2", "b2", "a3", "b3"];

pub fn write_ground_truth<W: Write>(out: W, records: &[GroundTruthRecord]) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GT_HEADER)?;
    for r in records {
        let mut row = vec![r.frame.to_string(), (r.present as u8).to_string(), (r.partial as u8).to_string()];
        match r.state {
            Some(s) => row.extend(s.as_array().iter().map(|v| format!("{v:.17e}"))),
            None => row.extend(std::iter::repeat_n("NA".to_string(), 4)),
        }
        match r.edges {
            Some(e) => {
                for l in e {
                    row.push(format!("{:.17e}", l.a));
                    row.push(format!("{:.17e}", l.b));
                }
            }
            None => row.extend(std::iter::repeat_n("NA".to_string(), 6)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Lines starting with `#` carry run metadata and are skipped.
pub fn read_ground_truth<R: Read>(input: R) -> Result<Vec<GroundTruthRecord>, SynthError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let bad = |m: &str| SynthError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string()));
    if r.headers()?.iter().collect::<Vec<_>>() != GT_HEADER {
        return Err(bad("unexpected ground-truth header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<f64>, SynthError> {
            match &rec[i] {
                "NA" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad("bad number in ground truth")),
            }
        };
        let frame = rec[0].parse().map_err(|_| bad("bad frame index"))?;
        let state = match (num(3)?, num(4)?, num(5)?, num(6)?) {
            (Some(d), Some(t), Some(h), Some(e)) => Some(CurbState::new(d, t, h, e)),
            _ => None,
        };
        let mut e = Vec::new();
        for k in 0..3 {
            if let (Some(a), Some(b)) = (num(7 + 2 * k)?, num(8 + 2 * k)?) {
                e.push(Line2 { a, b });
            }
        }
        out.push(GroundTruthRecord {
            frame,
            state,
            edges: if e.len() == 3 { Some([e[0], e[1], e[2]]) } else { None },
            present: &rec[1] == "1",
            partial: &rec[2] == "1",
        });
    }
    Ok(out)
}

/// Depth seen by the bottom image row, the nearest visible road point.
pub fn nearest_visible_depth(rig: &CameraRig) -> f64 {
    distance_from_row(rig.bottom_row(), rig).expect("bottom row is below the horizon")
}

/// Scene distribution of the classifier training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Depth range of the curbs, cm; clipped to the detection domain.
    pub d_range: [f64; 2],
    /// Largest absolute yaw, rad.
    pub theta_max: f64,
    pub h_range: [f64; 2],
    pub e_range: [f64; 2],
    pub noise_sigma: f32,
    pub road_patches: usize,
    pub stripe_probability: f64,
    /// Uniform perturbation of the positive states: D (cm), yaw (rad),
    /// relative H.
    pub pos_jitter: [f64; 3],
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            d_range: [110.0, 500.0],
            theta_max: 0.3,
            h_range: [8.0, 20.0],
            e_range: [10.0, 30.0],
            noise_sigma: 4.0,
            road_patches: 3,
            stripe_probability: 0.5,
            pos_jitter: [0.0; 3],
        }
    }
}

/// Classifier window with its label (+1 curb face, -1 otherwise) and the
/// seed of the scene it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub label: i8,
    pub scene: u64,
}

fn corpus_state(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, cdd: &CddConfig) -> CurbState {
    let lo = cfg.d_range[0].max(cdd.d_min);
    let hi = cfg.d_range[1].min(cdd.d_max).max(lo + 1.0);
    CurbState::new(
        rng.gen_range(lo..hi),
        rng.gen_range(-cfg.theta_max..=cfg.theta_max),
        rng.gen_range(cfg.h_range[0]..=cfg.h_range[1]),
        rng.gen_range(cfg.e_range[0]..=cfg.e_range[1]),
    )
}

fn pair_fit(lines: [Line2; 2], rig: &CameraRig, cdd: &CddConfig) -> Option<CurbState> {
    let t = LineTuple { lines: lines.to_vec() };
    let fit = FitConfig::default();
    let init = initial_state(&t, &fit, rig).ok()?;
    fit_template(&t, &init, &fit, cdd, rig).ok().map(|c| c.state)
}

/// Labeled windows from `n_scenes` rendered scenes whose seeds start at
/// `seed`. Every scene gives one positive bag from the slightly perturbed
/// true state and one
/// negative bag, cycling through: a depth offset of 20-50 cm, a pair fit of
/// the two top edges, a pair fit of the base and the rear edge, and a
/// curb-free road with a painted stripe fitted as if it were a face. Pair
/// fits that land within 20 cm in depth and 40% in height of the true state
/// are replaced by the depth offset.
/// Scenes whose windows cannot be sampled are replaced by the next seed.
pub fn make_training_corpus(
    n_scenes: usize,
    cfg: &CorpusConfig,
    rig: &CameraRig,
    cdd: &CddConfig,
    remap: &RemapConfig,
    app: &AppearanceConfig,
    seed: u64,
) -> Result<Vec<LabeledPatch>, SynthError> {
    let mut out = Vec::with_capacity(n_scenes * 14);
    let mut done = 0;
    let mut scene = seed;
    while done < n_scenes {
        if scene.wrapping_sub(seed) > 4 * n_scenes as u64 + 16 {
            return Err(SynthError::InvalidTrajectory("corpus scenes keep leaving the frame".into()));
        }
        let s = scene;
        scene = scene.wrapping_add(1);
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xC0_4B05);
        let base = if done % 2 == 0 { Photometry::clear() } else { Photometry::shadow() };
        let photo = base.with_noise(cfg.noise_sigma).with_distractors(cfg.road_patches, cfg.stripe_probability);
        let truth = corpus_state(&mut rng, cfg, cdd);
        let (frame, record) = match render_frame(0, Some(truth), rig, cdd, &photo, s) {
            Ok(r) => r,
            Err(SynthError::StateOutsideFrame { .. }) => continue,
            Err(e) => return Err(e),
        };
        // positives carry fit-sized errors so the classifier tolerates imperfect candidates
        let jittered = CurbState {
            d: truth.d + rng.gen_range(-cfg.pos_jitter[0]..=cfg.pos_jitter[0]),
            theta: truth.theta + rng.gen_range(-cfg.pos_jitter[1]..=cfg.pos_jitter[1]),
            h: truth.h * (1.0 + rng.gen_range(-cfg.pos_jitter[2]..=cfg.pos_jitter[2])),
            ..truth
        };
        let Ok(pos) = sample_windows(&jittered, &frame, remap, app) else { continue };
        let Some([e1, e2, e3]) = record.edges else { continue };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let offset = CurbState { d: truth.d + sign * rng.gen_range(20.0..50.0), ..truth };
        // a pair fit close to the true face is not a usable negative
        let distinct = |x: &CurbState| (x.d - truth.d).abs() >= 20.0 || (x.h - truth.h).abs() >= 0.4 * truth.h;
        let mis_fit = |lines| pair_fit(lines, rig, cdd).filter(distinct).unwrap_or(offset);
        let neg = match done % 4 {
            0 => sample_windows(&offset, &frame, remap, app).ok(),
            1 => sample_windows(&mis_fit([e2, e3]), &frame, remap, app).ok(),
            2 => sample_windows(&mis_fit([e1, e3]), &frame, remap, app).ok(),
            _ => {
                let road = photo.clone().with_distractors(cfg.road_patches, 1.0);
                let seed_free = s ^ 0xF4EE;
                let (free, _) = render_frame(0, None, rig, cdd, &road, seed_free)?;
                let layout = scene_layout(None, cdd, &road, seed_free);
                let fake = match layout.stripes.first() {
                    Some(st) => {
                        CurbState::new(st.z_near, 0.0, (rig.h_c * (1.0 - st.z_near / st.z_far)).max(3.0), 0.0)
                    }
                    None => corpus_state(&mut rng, cfg, cdd),
                };
                sample_windows(&fake, &free, remap, app).ok()
            }
        };
        let Some(neg) = neg else { continue };
        out.extend(pos.into_iter().map(|patch| LabeledPatch { patch, label: 1, scene: s }));
        out.extend(neg.into_iter().map(|patch| LabeledPatch { patch, label: -1, scene: s }));
        done += 1;
    }
    Ok(out)
}

pub const CORPUS_INDEX: &str = "index.csv";

/// Writes the patches as PGM files plus an index `file,label,scene`.
pub fn write_corpus(dir: &std::path::Path, corpus: &[LabeledPatch]) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(CORPUS_INDEX))?;
    w.write_record(["file", "label", "scene"])?;
    for (i, p) in corpus.iter().enumerate() {
        let name = format!("patch_{i:06}.pgm");
        save_pgm(dir.join(&name), p.patch.pixels(), &[format!("label {} scene {}", p.label, p.scene)])?;
        w.write_record([name, p.label.to_string(), p.scene.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(dir: &std::path::Path) -> Result<Vec<LabeledPatch>, SynthError> {
    let mut r = csv::Reader::from_path(dir.join(CORPUS_INDEX))?;
    let bad = |m: String| SynthError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, m));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(bad(format!("corpus index row has {} fields", rec.len())));
        }
        let label: i8 = rec[1].parse().map_err(|_| bad(format!("bad label {:?}", &rec[1])))?;
        if label != 1 && label != -1 {
            return Err(bad(format!("label {label} is not +1 or -1")));
        }
        let scene: u64 = rec[2].parse().map_err(|_| bad(format!("bad scene {:?}", &rec[2])))?;
        let img = load_pgm(dir.join(&rec[0]))?;
        let patch = Patch::new(img).ok_or_else(|| bad(format!("{} is not a 32x32 patch", &rec[0])))?;
        out.push(LabeledPatch { patch, label, scene });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GrayImage;

    fn small_rig() -> CameraRig {
        // a quarter-size rig keeps the tests fast
        CameraRig { f_x: 500.0, f_y: 500.0, c_x: 240.0, c_y: 135.0, h_c: 55.0, width: 480, height: 270 }
    }

    fn quiet() -> Photometry {
        Photometry { noise_sigma: 0.0, texture_amplitude: 0.0, lighting: Lighting::Uniform, ..Photometry::clear() }
    }

    /// Row of the largest vertical intensity change on column `u`, with
    /// sub-pixel refinement from the two adjacent differences.
    fn step_row(img: &GrayImage, u: usize, from: usize, to: usize) -> f64 {
        let diff = |v: usize| (img.get(u, v + 1) as f64 - img.get(u, v) as f64).abs();
        let v = (from..to).max_by(|&a, &b| diff(a).total_cmp(&diff(b))).unwrap();
        // an anti-aliased step spreads over two differences
        let (d0, dm, dp) = (diff(v), diff(v - 1), diff(v + 1));
        v as f64 + 0.5 + (dp - dm) / (d0 + dm + dp) * 1.0
    }

    #[test]
    fn frontal_curb_edges_are_horizontal() {
        let rig = small_rig();
        let gt = ground_truth(0, Some(CurbState::new(300.0, 0.0, 12.0, 20.0)), &rig);
        for l in gt.edges.unwrap() {
            assert!(l.a.abs() < 1e-12);
        }
        assert!(gt.present && !gt.partial);
    }

    #[test]
    fn base_edge_row_matches_ranging() {
        let rig = small_rig();
        let cdd = CddConfig::from_rig(&rig, 500.0, 130.0).unwrap();
        for d in [215.0, 237.0, 400.0] {
            let (img, _) = render_frame(0, Some(CurbState::new(d, 0.0, 12.0, 20.0)), &rig, &cdd, &quiet(), 1).unwrap();
            let expected = rig.c_y + rig.f_y * rig.h_c / d;
            let from = (expected - 4.0) as usize;
            let measured = step_row(&img, 240, from, from + 8);
            assert!((measured - expected).abs() < 0.5, "d={d}: {measured} vs {expected}");
        }
    }

    #[test]
    fn near_curb_is_partial() {
        let rig = small_rig();
        let cdd = CddConfig::from_rig(&rig, 500.0, 130.0).unwrap();
        let d_min = nearest_visible_depth(&rig);
        let (_, gt) = render_frame(0, Some(CurbState::new(d_min - 8.0, 0.0, 12.0, 20.0)), &rig, &cdd, &quiet(), 1).unwrap();
        assert!(gt.partial && !gt.present);
    }

    #[test]
    fn invisible_curb_is_reported_with_its_record() {
        let rig = small_rig();
        let cdd = CddConfig::from_rig(&rig, 500.0, 130.0).unwrap();
        match render_frame(3, Some(CurbState::new(20.0, 0.0, 12.0, 20.0)), &rig, &cdd, &quiet(), 1) {
            Err(SynthError::StateOutsideFrame { frame, record }) => {
                assert_eq!(frame, 3);
                assert!(!record.present && !record.partial);
            }
            other => panic!("unexpected {:?}", other.map(|r| r.1)),
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let rig = small_rig();
        let cdd = CddConfig::from_rig(&rig, 500.0, 130.0).unwrap();
        let s = Some(CurbState::new(260.0, 0.1, 12.0, 20.0));
        let photo = Photometry::clear().with_distractors(4, 1.0);
        let a = render_frame(0, s, &rig, &cdd, &photo, 42).unwrap().0;
        let b = render_frame(0, s, &rig, &cdd, &photo, 42).unwrap().0;
        let c = render_frame(0, s, &rig, &cdd, &photo, 43).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn constant_speed_approach_is_linear() {
        let traj = Trajectory { d_start: 500.0, d_end: 200.0, speed: 300.0 / 99.0 * 21.0, ..Default::default() };
        let states = traj.states(0).unwrap();
        assert_eq!(states.len(), 100);
        for (t, s) in states.iter().enumerate() {
            assert!((s.d - (500.0 - 300.0 * t as f64 / 99.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let rig = small_rig();
        let recs = vec![
            ground_truth(0, Some(CurbState::new(301.5, -0.05, 12.0, 20.0)), &rig),
            ground_truth(1, None, &rig),
        ];
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("frame,present,partial,D_cm,theta_rad,H_cm,E_cm,a1,b1,a2,b2,a3,b3\n"));
        assert_eq!(read_ground_truth(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn presets_validate() {
        Photometry::clear().validate().unwrap();
        Photometry::shadow().validate().unwrap();
        let weak = Photometry { top: 160.0, ..Photometry::clear() };
        assert!(weak.validate().is_err());
    }
}
