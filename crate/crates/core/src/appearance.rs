//! Appearance check of curb candidates: windows along the frontal face,
//! 288-value gradient-orientation descriptors, a linear classifier and a
//! per-candidate majority vote.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CurbEdge, CurbState};
use crate::ipcm::RemapConfig;
use crate::raster::{gaussian_blur, sample_bilinear, FloatImage, GrayImage};
use crate::template::Candidate;

pub const PATCH_SIZE: usize = 32;
pub const CELL_SIZE: usize = 8;
pub const N_BINS: usize = 8;
pub const HOG_LEN: usize = 288;
pub const BAG_SIZE: usize = 7;
pub const MODEL_HEADER: &str = "curbsight-svm v1";

const BLOCK_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum AppearanceError {
    #[error("frontal face lies outside the remapped region")]
    FaceOutsideImage,
    #[error("frontal face is only {0:.2} px high")]
    DegenerateFace(f64),
    #[error("descriptor has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set has no {0} examples")]
    EmptyClass(&'static str),
    #[error("bag has {0} instances")]
    WrongBagSize(usize),
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppearanceConfig {
    /// Window side as a multiple of the face height.
    pub window_scale: f64,
    pub patch_blur_sigma: f64,
    pub min_face_px: f64,
    /// Hinge-loss weight of the classifier.
    pub svm_c: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        Self { window_scale: 2.5, patch_blur_sigma: 0.8, min_face_px: 4.0, svm_c: 10.0, max_epochs: 3000, seed: 0 }
    }
}

/// 32×32 grayscale window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pixels: GrayImage,
}

impl Patch {
    pub fn new(pixels: GrayImage) -> Option<Self> {
        (pixels.width() == PATCH_SIZE && pixels.height() == PATCH_SIZE).then_some(Self { pixels })
    }

    pub fn pixels(&self) -> &GrayImage {
        &self.pixels
    }
}

/// Descriptor: 3×3 blocks of 2×2 cells of 8 unsigned orientation bins.
pub fn hog(patch: &Patch) -> Vec<f64> {
    let img = &patch.pixels;
    let n_cells = PATCH_SIZE / CELL_SIZE;
    let mut cells = vec![[0f64; N_BINS]; n_cells * n_cells];
    let bin_width = 180.0 / N_BINS as f64;
    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            let p = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy) as f64;
            let gx = p(1, 0) - p(-1, 0);
            let gy = p(0, 1) - p(0, -1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // bins centered on multiples of the bin width, linear vote split
            let pos = (angle / bin_width) % N_BINS as f64;
            let lo = pos.floor() as usize % N_BINS;
            let frac = pos - pos.floor();
            let cell = &mut cells[(y / CELL_SIZE) * n_cells + x / CELL_SIZE];
            cell[lo] += mag * (1.0 - frac);
            cell[(lo + 1) % N_BINS] += mag * frac;
        }
    }
    let mut out = Vec::with_capacity(HOG_LEN);
    for by in 0..n_cells - 1 {
        for bx in 0..n_cells - 1 {
            let start = out.len();
            for (cy, cx) in [(by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)] {
                out.extend_from_slice(&cells[cy * n_cells + cx]);
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
            out[start..].iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(out, "{:.16e}", self.bias)?;
        for w in &self.weights {
            writeln!(out, "{w:.16e}")?;
        }
        out.flush()
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, AppearanceError> {
        let mut lines = input.lines();
        let bad = |m: &str| AppearanceError::BadModel(m.to_string());
        if lines.next().transpose()?.as_deref() != Some(MODEL_HEADER) {
            return Err(bad("missing header"));
        }
        let mut values = Vec::with_capacity(HOG_LEN + 1);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.push(line.trim().parse::<f64>().map_err(|_| bad("unparsable number"))?);
        }
        if values.len() != HOG_LEN + 1 {
            return Err(bad(&format!("expected {} numbers, found {}", HOG_LEN + 1, values.len())));
        }
        let model = Self { bias: values[0], weights: values[1..].to_vec() };
        if !model.is_finite() {
            return Err(bad("non-finite value"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, AppearanceError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Score `w·f + b` and its sign; an exact zero counts as negative.
pub fn predict(model: &LinearModel, f: &[f64]) -> Result<(f64, i8), AppearanceError> {
    if f.len() != model.weights.len() {
        return Err(AppearanceError::DimensionMismatch { expected: model.weights.len(), got: f.len() });
    }
    let score = model.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + model.bias;
    Ok((score, if score > 0.0 { 1 } else { -1 }))
}

/// Per-epoch dual objective of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub dual_objectives: Vec<f64>,
    pub epochs: usize,
}

/// L2-regularized hinge-loss classifier by dual coordinate descent. The bias
/// is learned as the weight of a constant feature. Visiting order is shuffled
/// per epoch from `seed`, so training is deterministic.
pub fn train(positives: &[Vec<f64>], negatives: &[Vec<f64>], cfg: &AppearanceConfig) -> Result<(LinearModel, TrainReport), AppearanceError> {
    if positives.is_empty() {
        return Err(AppearanceError::EmptyClass("positive"));
    }
    if negatives.is_empty() {
        return Err(AppearanceError::EmptyClass("negative"));
    }
    let dim = positives[0].len();
    let data: Vec<(&[f64], f64)> =
        positives.iter().map(|x| (x.as_slice(), 1.0)).chain(negatives.iter().map(|x| (x.as_slice(), -1.0))).collect();
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != dim) {
        return Err(AppearanceError::DimensionMismatch { expected: dim, got: x.len() });
    }
    let c = cfg.svm_c;
    let mut w = vec![0.0; dim + 1];
    let mut alpha = vec![0.0; data.len()];
    let qd: Vec<f64> = data.iter().map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let dot = |w: &[f64], x: &[f64]| w[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[dim];
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let (x, y) = data[i];
            let g = y * dot(&w, x) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y;
                for (wk, xk) in w[..dim].iter_mut().zip(x) {
                    *wk += step * xk;
                }
                w[dim] += step;
            }
        }
        let dual = 0.5 * w.iter().map(|v| v * v).sum::<f64>() - alpha.iter().sum::<f64>();
        report.dual_objectives.push(dual);
        report.epochs = epoch + 1;
        if pg_max - pg_min < 1e-3 {
            break;
        }
    }
    let bias = w.pop().expect("bias slot");
    Ok((LinearModel { weights: w, bias }, report))
}

/// Seven window descriptors of one candidate with their scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub instances: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub labels: Vec<i8>,
    pub label: i8,
}

impl Bag {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len().max(1) as f64
    }
}

/// Majority label of seven instance labels.
pub fn bag_label(labels: &[i8]) -> Result<i8, AppearanceError> {
    if labels.len() != BAG_SIZE {
        return Err(AppearanceError::WrongBagSize(labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l > 0).count();
    Ok(if pos * 2 > BAG_SIZE { 1 } else { -1 })
}

pub fn classify_bag(instances: Vec<Vec<f64>>, model: &LinearModel) -> Result<Bag, AppearanceError> {
    if instances.len() != BAG_SIZE {
        return Err(AppearanceError::WrongBagSize(instances.len()));
    }
    let mut scores = Vec::with_capacity(BAG_SIZE);
    let mut labels = Vec::with_capacity(BAG_SIZE);
    for f in &instances {
        let (s, l) = predict(model, f)?;
        scores.push(s);
        labels.push(l);
    }
    let label = bag_label(&labels)?;
    Ok(Bag { instances, scores, labels, label })
}

/// Placement of one sampling window in remapped coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub center_u: f64,
    pub center_v: f64,
    pub side: f64,
    /// Face height at the window center.
    pub face: f64,
}

/// Seven square windows centered on the frontal face at 1/8 .. 7/8 of the
/// remapped domain width, with side `window_scale` times the local face
/// height.
pub fn window_layout(state: &CurbState, remap: &RemapConfig, cfg: &AppearanceConfig) -> Result<Vec<Window>, AppearanceError> {
    let rig = &remap.rig;
    let base = state.edge_line(CurbEdge::Base, rig).map_err(|_| AppearanceError::FaceOutsideImage)?;
    let top = state.edge_line(CurbEdge::TopFront, rig).map_err(|_| AppearanceError::FaceOutsideImage)?;
    let (left, right) = remap.domain_columns();
    let mut out = Vec::with_capacity(BAG_SIZE);
    for k in 1..=BAG_SIZE {
        let u = left + (right - left) * k as f64 / (BAG_SIZE + 1) as f64;
        let row = |l| remap.line_row_at(l, u).map_err(|_| AppearanceError::FaceOutsideImage);
        let (vb, vt) = (row(&base)?, row(&top)?);
        let face = vb - vt;
        if face < cfg.min_face_px {
            return Err(AppearanceError::DegenerateFace(face));
        }
        let v = 0.5 * (vb + vt);
        let c = remap.inverse_map(u, v).map_err(|_| AppearanceError::FaceOutsideImage)?;
        if !rig.contains(&c) {
            return Err(AppearanceError::FaceOutsideImage);
        }
        out.push(Window { center_u: u, center_v: v, side: cfg.window_scale * face, face });
    }
    Ok(out)
}

/// Resamples a remapped-space window of the frame to 32×32 and smooths it.
pub fn extract_patch(frame: &GrayImage, remap: &RemapConfig, win: &Window, blur_sigma: f64) -> Patch {
    let n = PATCH_SIZE as f64;
    let mut p = FloatImage::filled(PATCH_SIZE, PATCH_SIZE, 0.0);
    for j in 0..PATCH_SIZE {
        let vt = win.center_v + (j as f64 + 0.5 - n / 2.0) * win.side / n;
        for i in 0..PATCH_SIZE {
            let ut = win.center_u + (i as f64 + 0.5 - n / 2.0) * win.side / n;
            let value = match remap.inverse_map(ut, vt) {
                Ok(q) => sample_bilinear(frame, q.x, q.y),
                // above the invertible band: nearest valid content is the top row of the band
                Err(_) => sample_bilinear(frame, ut, remap.rig.c_y + 1.0),
            };
            p.set(i, j, value);
        }
    }
    Patch { pixels: gaussian_blur(&p, blur_sigma).to_gray() }
}

/// The seven patches of a state's frontal face.
pub fn sample_windows(state: &CurbState, frame: &GrayImage, remap: &RemapConfig, cfg: &AppearanceConfig) -> Result<Vec<Patch>, AppearanceError> {
    Ok(window_layout(state, remap, cfg)?
        .iter()
        .map(|w| extract_patch(frame, remap, w, cfg.patch_blur_sigma))
        .collect())
}

/// Candidate that passed the appearance check, with its bag.
#[derive(Debug, Clone)]
pub struct Validated {
    pub candidate: Candidate,
    pub bag: Bag,
}

/// Keeps the candidates whose bag is positive. Candidates whose face cannot
/// be sampled are dropped.
pub fn filter_candidates(
    cands: &[Candidate],
    model: &LinearModel,
    frame: &GrayImage,
    remap: &RemapConfig,
    cfg: &AppearanceConfig,
) -> Vec<Validated> {
    let mut out = Vec::new();
    for c in cands {
        let bag = sample_windows(&c.state, frame, remap, cfg)
            .and_then(|patches| classify_bag(patches.iter().map(hog).collect(), model));
        match bag {
            Ok(bag) if bag.label > 0 => out.push(Validated { candidate: c.clone(), bag }),
            Ok(_) => {}
            Err(e) => log::debug!("candidate dropped: {e}"),
        }
    }
    out
}
