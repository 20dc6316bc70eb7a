//! Per-frame detection and sequence tracking built from the individual stages.

use std::borrow::Borrow;

use crate::appearance::{filter_candidates, AppearanceConfig, Bag, LinearModel};
use crate::edges::{extract_lines, ExtractError, LineExtractionConfig, LineSet};
use crate::geometry::{CameraRig, CddConfig, Csr};
use crate::ipcm::{RemapConfig, RemapError, WarpSettings};
use crate::raster::GrayImage;
use crate::template::{build_candidate_set, Candidate, FitConfig, TupleKind};
use crate::tracker::{Observation, StepOutput, Tracker, TrackerConfig};

/// Everything a single frame needs, apart from the frame and its region.
#[derive(Debug, Clone)]
pub struct Detector {
    pub rig: CameraRig,
    pub cdd: CddConfig,
    pub remap: RemapConfig,
    pub warp: WarpSettings,
    pub lines: LineExtractionConfig,
    pub fit: FitConfig,
    pub appearance: AppearanceConfig,
    /// Without a model every fitted candidate is accepted.
    pub model: Option<LinearModel>,
}

#[derive(Debug, Clone, Default)]
pub struct FrameDetection {
    pub lines: LineSet,
    pub candidates: Vec<Candidate>,
    /// Candidates that passed the appearance check.
    pub accepted: Vec<Candidate>,
    /// Bags of the accepted candidates; empty without a model.
    pub bags: Vec<Bag>,
}

impl FrameDetection {
    /// Preferred accepted candidate: triplets before pairs, then lowest residual.
    pub fn best(&self) -> Option<&Candidate> {
        self.accepted.iter().min_by(|a, b| {
            let rank = |c: &Candidate| (c.kind == TupleKind::Pair) as u8;
            rank(a).cmp(&rank(b)).then(a.residual_norm.total_cmp(&b.residual_norm))
        })
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.accepted.iter().map(Observation::from).collect()
    }
}

impl Detector {
    pub fn new(rig: CameraRig, cdd: CddConfig, model: Option<LinearModel>) -> Result<Self, RemapError> {
        Ok(Self {
            rig,
            cdd,
            remap: RemapConfig::new(&rig, &cdd)?,
            warp: WarpSettings::default(),
            lines: LineExtractionConfig::default(),
            fit: FitConfig::default(),
            appearance: AppearanceConfig::default(),
            model,
        })
    }

    pub fn detect(&self, frame: &GrayImage, csr: &Csr) -> Result<FrameDetection, ExtractError> {
        let lines = extract_lines(frame, csr, &self.remap, &self.cdd, &self.warp, &self.lines)?;
        let candidates = build_candidate_set(&lines, &self.fit, &self.cdd, &self.rig);
        let (accepted, bags) = match &self.model {
            Some(m) => filter_candidates(&candidates, m, frame, &self.remap, &self.appearance)
                .into_iter()
                .map(|v| (v.candidate, v.bag))
                .unzip(),
            None => (candidates.clone(), Vec::new()),
        };
        Ok(FrameDetection { lines, candidates, accepted, bags })
    }
}

/// One tracked frame: the tracker output and the detection it consumed.
#[derive(Debug, Clone)]
pub struct TrackedFrame {
    pub step: StepOutput,
    pub detection: FrameDetection,
}

/// Runs detection and tracking over frames in order. Frame `t` is searched
/// in the region the tracker requests for `t`. Extraction failures count as
/// frames without candidates.
pub fn track_frames<I>(detector: &Detector, cfg: &TrackerConfig, frames: I) -> Vec<TrackedFrame>
where
    I: IntoIterator,
    I::Item: Borrow<GrayImage>,
{
    let mut tracker = Tracker::new(*cfg, detector.cdd);
    frames
        .into_iter()
        .enumerate()
        .map(|(t, frame)| {
            let csr = tracker.search_region(t);
            let detection = detector.detect(frame.borrow(), &csr).unwrap_or_else(|e| {
                log::debug!("frame {t}: {e}");
                FrameDetection::default()
            });
            let step = tracker.step(t, &detection.observations());
            TrackedFrame { step, detection }
        })
        .collect()
}
