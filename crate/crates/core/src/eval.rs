//! Detection rates and distance-binned parameter errors.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::CurbState;
use crate::synth::GroundTruthRecord;
use crate::tracker::{Mode, TrackLogRow};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("confusion counts are all zero")]
    EmptyCounts,
    #[error("logs are misaligned: {0}")]
    MisalignedLogs(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Association gate of the detection rates and bin width of the errors, cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub gate: f64,
    pub bin_width: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { gate: 50.0, bin_width: 25.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, tn: self.tn + o.tn, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, EvalError> {
    match c.total() {
        0 => Err(EvalError::EmptyCounts),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// F1 score and whether it was degenerate. Precision or recall with a zero
/// denominator gives a score of 0 and a warning.
pub fn f1(c: &ConfusionCounts) -> (f64, bool) {
    if c.tp + c.fp == 0 || c.tp + c.fn_ == 0 || c.tp == 0 {
        log::warn!("degenerate F1: tp={} fp={} fn={}", c.tp, c.fp, c.fn_);
        return (0.0, true);
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    (2.0 * p * r / (p + r), false)
}

/// Per-frame detector decision: the chosen candidate's state, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDecision {
    pub frame: usize,
    pub detected: Option<CurbState>,
}

/// Per-frame truth: curb present and its distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTruth {
    pub frame: usize,
    pub present: bool,
    pub d: Option<f64>,
}

/// A present curb counts as found only when the detected distance is within
/// `gate` cm of the truth; a wrong distance is a miss.
pub fn detection_confusion(decisions: &[FrameDecision], truth: &[FrameTruth], gate: f64) -> Result<ConfusionCounts, EvalError> {
    if decisions.len() != truth.len() {
        return Err(EvalError::MisalignedLogs(format!("{} decisions for {} truth frames", decisions.len(), truth.len())));
    }
    let mut c = ConfusionCounts::default();
    for (d, g) in decisions.iter().zip(truth) {
        if d.frame != g.frame {
            return Err(EvalError::MisalignedLogs(format!("frame {} paired with frame {}", d.frame, g.frame)));
        }
        match (g.present, d.detected) {
            (true, Some(x)) if g.d.is_some_and(|gd| (x.d - gd).abs() <= gate) => c.tp += 1,
            (true, _) => c.fn_ += 1,
            (false, None) => c.tn += 1,
            (false, Some(_)) => c.fp += 1,
        }
    }
    Ok(c)
}

pub const PARAMS: [&str; 4] = ["D", "theta", "H", "E"];

/// Minimum, quartiles and maximum (linear interpolation between order
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (i, frac) = (x.floor() as usize, x - x.floor());
            if i + 1 < v.len() {
                v[i] + frac * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Some(Self { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

/// Errors of the samples whose true distance falls into `[lo, hi)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    /// Absolute errors per parameter in `PARAMS` order.
    pub abs: [Vec<f64>; 4],
    /// Percentage errors of D, only for true distances of at least D_min.
    pub pct_d: Vec<f64>,
}

impl Bin {
    pub fn len(&self) -> usize {
        self.abs[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedErrors {
    pub width: f64,
    pub bins: Vec<Bin>,
}

/// Summary of one bin. MAPE is reported for D, H and E; yaw gets MAE only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mae: [f64; 4],
    pub mape_d: Option<f64>,
    pub mape_h: Option<f64>,
    pub mape_e: Option<f64>,
    pub quantiles: [Option<Quantiles>; 4],
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Pairs estimates with truth by frame index and bins the errors by true
/// distance in `width` cm bins over `[0, d_max]`. Frames without an estimate
/// or without a curb are skipped; samples beyond `d_max` go to the last bin.
pub fn binned_errors(
    estimates: &[(usize, Option<CurbState>)],
    truth: &[(usize, Option<CurbState>)],
    d_min: f64,
    d_max: f64,
    width: f64,
) -> Result<BinnedErrors, EvalError> {
    if estimates.len() != truth.len() {
        return Err(EvalError::MisalignedLogs(format!("{} estimates for {} truth frames", estimates.len(), truth.len())));
    }
    let n_bins = (d_max / width).ceil().max(1.0) as usize;
    let mut bins: Vec<Bin> =
        (0..n_bins).map(|i| Bin { lo: i as f64 * width, hi: (i + 1) as f64 * width, ..Default::default() }).collect();
    for ((te, est), (tg, gt)) in estimates.iter().zip(truth) {
        if te != tg {
            return Err(EvalError::MisalignedLogs(format!("frame {te} paired with frame {tg}")));
        }
        let (Some(x), Some(g)) = (est, gt) else { continue };
        let i = ((g.d.max(0.0) / width).floor() as usize).min(n_bins - 1);
        let b = &mut bins[i];
        let (xa, ga) = (x.as_array(), g.as_array());
        for k in 0..4 {
            b.abs[k].push((xa[k] - ga[k]).abs());
        }
        if g.d >= d_min {
            b.pct_d.push((x.d - g.d).abs() / g.d * 100.0);
        }
    }
    Ok(BinnedErrors { width, bins })
}

impl BinnedErrors {
    pub fn total(&self) -> usize {
        self.bins.iter().map(Bin::len).sum()
    }

    pub fn summaries(&self, truth_h: Option<f64>, truth_e: Option<f64>) -> Vec<BinSummary> {
        self.bins
            .iter()
            .map(|b| {
                let mae = [0, 1, 2, 3].map(|k| mean(&b.abs[k]).unwrap_or(f64::NAN));
                let pct = |k: usize, t: Option<f64>| t.filter(|t| *t > 0.0).and_then(|t| mean(&b.abs[k]).map(|m| m / t * 100.0));
                BinSummary {
                    lo: b.lo,
                    hi: b.hi,
                    n: b.len(),
                    mae,
                    mape_d: mean(&b.pct_d),
                    mape_h: pct(2, truth_h),
                    mape_e: pct(3, truth_e),
                    quantiles: [0, 1, 2, 3].map(|k| Quantiles::of(&b.abs[k])),
                }
            })
            .collect()
    }

    /// Mean absolute error of one parameter over all bins.
    pub fn overall_mae(&self, k: usize) -> Option<f64> {
        let all: Vec<f64> = self.bins.iter().flat_map(|b| b.abs[k].iter().copied()).collect();
        mean(&all)
    }
}

/// Machine-readable evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub seed: u64,
    pub frames: usize,
    pub tracked_frames: usize,
    pub confusion: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub f1: f64,
    pub f1_degenerate: bool,
    pub mae: [Option<f64>; 4],
    pub bins: Vec<BinSummary>,
}

/// Scores a track log against ground truth. Detection decisions are the
/// chosen candidates; parameter errors use the smoothed states.
pub fn evaluate_run(
    rows: &[TrackLogRow],
    truth: &[GroundTruthRecord],
    d_min: f64,
    d_max: f64,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(Report, BinnedErrors), EvalError> {
    let decisions: Vec<FrameDecision> = rows.iter().map(|r| FrameDecision { frame: r.t, detected: r.chosen }).collect();
    let truths: Vec<FrameTruth> =
        truth.iter().map(|g| FrameTruth { frame: g.frame, present: g.present, d: g.state.map(|s| s.d) }).collect();
    let confusion = detection_confusion(&decisions, &truths, cfg.gate)?;
    let est: Vec<_> = rows.iter().map(|r| (r.t, r.smoothed)).collect();
    let gt: Vec<_> = truth.iter().map(|g| (g.frame, g.state.filter(|_| g.present))).collect();
    let binned = binned_errors(&est, &gt, d_min, d_max, cfg.bin_width)?;
    let first = truth.iter().find_map(|g| g.state);
    let bins = binned.summaries(first.map(|s| s.h), first.map(|s| s.e).filter(|e| *e > 0.0));
    let (f1, f1_degenerate) = f1(&confusion);
    let report = Report {
        seed,
        frames: rows.len(),
        tracked_frames: rows.iter().filter(|r| r.mode == Mode::Tracking).count(),
        confusion,
        accuracy: accuracy(&confusion).ok(),
        f1,
        f1_degenerate,
        mae: [0, 1, 2, 3].map(|k| binned.overall_mae(k)),
        bins,
    };
    Ok((report, binned))
}

pub fn write_report_json(path: &Path, report: &Report) -> Result<(), EvalError> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), report)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// One row per bin: counts, MAE per parameter and MAPE of D, H and E.
pub fn write_bins_csv<W: Write>(out: W, bins: &[BinSummary]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo_cm", "hi_cm", "n", "mae_D", "mae_theta", "mae_H", "mae_E", "mape_D", "mape_H", "mape_E"])?;
    for b in bins {
        let mut row = vec![format!("{}", b.lo), format!("{}", b.hi), b.n.to_string()];
        row.extend(b.mae.iter().map(|m| opt(m.is_finite().then_some(*m))));
        row.extend([opt(b.mape_d), opt(b.mape_h), opt(b.mape_e)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated box-plot rows `center min q1 median q3 max` of one
/// parameter, for gnuplot's `candlesticks` style. Empty bins are skipped.
pub fn write_boxplot<W: Write>(mut out: W, bins: &[BinSummary], param: usize) -> std::io::Result<()> {
    writeln!(out, "# bin_center_cm min q1 median q3 max  ({} absolute error)", PARAMS[param])?;
    for b in bins {
        if let Some(q) = &b.quantiles[param] {
            writeln!(out, "{} {} {} {} {} {}", 0.5 * (b.lo + b.hi), q.min, q.q1, q.median, q.q3, q.max)?;
        }
    }
    Ok(())
}
