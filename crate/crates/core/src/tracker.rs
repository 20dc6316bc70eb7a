//! Temporal filtering of per-frame curb candidates with per-parameter
//! regression lines over frame index.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::{CddConfig, Csr, CurbState};
use crate::template::Candidate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Consecutive non-empty frames needed to start tracking.
    pub init_frames: usize,
    /// Length of the prediction set.
    pub window: usize,
    /// Gate width in standard deviations.
    pub gate_sigmas: f64,
    /// Lower bounds of the per-parameter deviations: D (cm), yaw (rad), H (cm), E (cm).
    pub sigma_floor: [f64; 4],
    /// Per-parameter scales dividing the squared errors when ranking the
    /// initial combinations.
    pub sse_scale: [f64; 4],
    /// Depth extent of the searching region while tracking, cm.
    pub csr_length: f64,
    /// Consecutive misses after which tracking restarts.
    pub max_misses: usize,
    /// Largest number of initial combinations searched exhaustively.
    pub max_combinations: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            init_frames: 5,
            window: 7,
            gate_sigmas: 3.0,
            sigma_floor: [4.0, 0.02, 1.0, 3.0],
            sse_scale: [1.0, 0.01, 0.5, 1.0],
            csr_length: 60.0,
            max_misses: 5,
            max_combinations: 100_000,
        }
    }
}

/// Per-frame input: a validated candidate state and its fit residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub state: CurbState,
    pub residual: f64,
}

impl From<&Candidate> for Observation {
    fn from(c: &Candidate) -> Self {
        Self { state: c.state, residual: c.residual_norm }
    }
}

/// Least-squares line `value = slope·t + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub sse: f64,
    /// Residual standard deviation, `sqrt(SSE / (n - 2))`; zero below 3 samples.
    pub sigma: f64,
    pub n: usize,
}

impl LineFit {
    pub fn fit(samples: &[(f64, f64)]) -> Option<Self> {
        let n = samples.len();
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mt = samples.iter().map(|s| s.0).sum::<f64>() / nf;
        let mv = samples.iter().map(|s| s.1).sum::<f64>() / nf;
        let stt: f64 = samples.iter().map(|s| (s.0 - mt).powi(2)).sum();
        let stv: f64 = samples.iter().map(|s| (s.0 - mt) * (s.1 - mv)).sum();
        let slope = if stt > 0.0 { stv / stt } else { 0.0 };
        let intercept = mv - slope * mt;
        let sse: f64 = samples.iter().map(|s| (s.1 - slope * s.0 - intercept).powi(2)).sum();
        let sigma = if n > 2 { (sse / (nf - 2.0)).sqrt() } else { 0.0 };
        Some(Self { slope, intercept, sse, sigma, n })
    }

    pub fn at(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }
}

/// Regression lines for D, yaw, H and E. The E line is absent while fewer
/// than two samples carry a depth estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionLines {
    pub d: LineFit,
    pub theta: LineFit,
    pub h: LineFit,
    pub e: Option<LineFit>,
}

impl PredictionLines {
    pub fn fit(samples: &[(usize, CurbState)]) -> Option<Self> {
        let col = |f: fn(&CurbState) -> f64| samples.iter().map(|(t, s)| (*t as f64, f(s))).collect::<Vec<_>>();
        let with_e: Vec<(f64, f64)> = samples.iter().filter(|(_, s)| s.e > 0.0).map(|(t, s)| (*t as f64, s.e)).collect();
        Some(Self {
            d: LineFit::fit(&col(|s| s.d))?,
            theta: LineFit::fit(&col(|s| s.theta))?,
            h: LineFit::fit(&col(|s| s.h))?,
            e: if with_e.len() >= 2 { LineFit::fit(&with_e) } else { None },
        })
    }

    pub fn at(&self, t: usize) -> CurbState {
        let t = t as f64;
        CurbState::new(self.d.at(t), self.theta.at(t), self.h.at(t), self.e.map_or(0.0, |l| l.at(t)))
    }

    /// Combination score: each parameter's SSE over its squared scale.
    pub fn score(&self, scale: &[f64; 4]) -> f64 {
        self.d.sse / scale[0].powi(2)
            + self.theta.sse / scale[1].powi(2)
            + self.h.sse / scale[2].powi(2)
            + self.e.map_or(0.0, |l| l.sse) / scale[3].powi(2)
    }

    /// Residual deviations with the configured floors applied.
    pub fn sigmas(&self, floor: &[f64; 4]) -> [f64; 4] {
        [
            self.d.sigma.max(floor[0]),
            self.theta.sigma.max(floor[1]),
            self.h.sigma.max(floor[2]),
            self.e.map_or(0.0, |l| l.sigma).max(floor[3]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSelection {
    pub samples: Vec<(usize, CurbState)>,
    pub lines: PredictionLines,
    /// The combination space exceeded the limit and the per-frame
    /// lowest-residual candidates were used instead.
    pub fallback: bool,
}

/// Picks one candidate per buffered frame so that the four regression lines
/// fit best. `buffer` holds consecutive frames, each with candidates.
pub fn select_initial_combination(buffer: &[(usize, Vec<Observation>)], cfg: &TrackerConfig) -> Option<InitialSelection> {
    if buffer.is_empty() || buffer.iter().any(|(_, c)| c.is_empty()) {
        return None;
    }
    let total = buffer.iter().try_fold(1usize, |acc, (_, c)| acc.checked_mul(c.len()));
    if total.is_none_or(|n| n > cfg.max_combinations) {
        let samples: Vec<(usize, CurbState)> = buffer
            .iter()
            .map(|(t, c)| (*t, c.iter().min_by(|a, b| a.residual.total_cmp(&b.residual)).expect("non-empty").state))
            .collect();
        let lines = PredictionLines::fit(&samples)?;
        return Some(InitialSelection { samples, lines, fallback: true });
    }
    let mut index = vec![0usize; buffer.len()];
    let mut best: Option<(f64, Vec<usize>, PredictionLines)> = None;
    let mut samples = Vec::with_capacity(buffer.len());
    loop {
        samples.clear();
        samples.extend(buffer.iter().zip(&index).map(|((t, c), &i)| (*t, c[i].state)));
        if let Some(lines) = PredictionLines::fit(&samples) {
            let score = lines.score(&cfg.sse_scale);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, index.clone(), lines));
            }
        }
        // odometer increment over the Cartesian product
        let mut k = 0;
        while k < index.len() {
            index[k] += 1;
            if index[k] < buffer[k].1.len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
        if k == index.len() {
            break;
        }
    }
    let (_, idx, lines) = best?;
    let samples = buffer.iter().zip(&idx).map(|((t, c), &i)| (*t, c[i].state)).collect();
    Some(InitialSelection { samples, lines, fallback: false })
}

/// State predicted for frame `t`, with D kept inside `[0, D_max]`.
pub fn predict_state(lines: &PredictionLines, t: usize, cdd: &CddConfig) -> CurbState {
    let mut x = lines.at(t);
    x.d = x.d.clamp(0.0, cdd.d_max);
    x
}

/// Searching region of length `length` centered on the predicted distance.
/// A prediction outside the domain resets the region to the far end.
pub fn update_csr(x: &CurbState, cdd: &CddConfig, length: f64) -> Csr {
    let length = length.min(cdd.d_max - cdd.d_min);
    if !cdd.contains_depth(x.d) {
        return Csr { d_near: cdd.d_max - length, d_far: cdd.d_max };
    }
    let near = (x.d - length / 2.0).max(cdd.d_min);
    let far = (x.d + length / 2.0).min(cdd.d_max);
    Csr { d_near: near, d_far: far }
}

/// Gates candidates against the prediction in the order D, H, yaw, E and
/// returns the index of the inlier closest in D. E is skipped when either
/// side lacks a depth estimate.
pub fn gate_and_select(obs: &[Observation], predicted: &CurbState, sigma: &[f64; 4], k: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, o) in obs.iter().enumerate() {
        let s = &o.state;
        let dd = (s.d - predicted.d).abs() / sigma[0];
        let inlier = dd < k
            && (s.h - predicted.h).abs() < k * sigma[2]
            && (s.theta - predicted.theta).abs() < k * sigma[1]
            && (s.e <= 0.0 || predicted.e <= 0.0 || (s.e - predicted.e).abs() < k * sigma[3]);
        if inlier && best.is_none_or(|(_, b)| dd < b) {
            best = Some((i, dd));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Collecting,
    Tracking,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Collecting => "collecting",
            Mode::Tracking => "tracking",
        }
    }
}

/// What happened in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Collecting { buffered: usize },
    Initialized,
    Tracked,
    Missed { misses: usize },
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub t: usize,
    /// Mode after the step.
    pub mode: Mode,
    pub status: StepStatus,
    pub predicted: Option<CurbState>,
    pub chosen: Option<CurbState>,
    pub smoothed: Option<CurbState>,
    /// Searching region the frame was processed with.
    pub csr: Csr,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    cdd: CddConfig,
    mode: Mode,
    buffer: Vec<(usize, Vec<Observation>)>,
    window: VecDeque<(usize, CurbState)>,
    lines: Option<PredictionLines>,
    misses: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, cdd: CddConfig) -> Self {
        Self { cfg, cdd, mode: Mode::Collecting, buffer: Vec::new(), window: VecDeque::new(), lines: None, misses: 0 }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn lines(&self) -> Option<&PredictionLines> {
        self.lines.as_ref()
    }

    pub fn prediction_set(&self) -> impl Iterator<Item = &(usize, CurbState)> {
        self.window.iter()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Searching region for frame `t`: the whole domain while collecting,
    /// a slice around the prediction while tracking.
    pub fn search_region(&self, t: usize) -> Csr {
        match (&self.mode, &self.lines) {
            (Mode::Tracking, Some(l)) => update_csr(&predict_state(l, t, &self.cdd), &self.cdd, self.cfg.csr_length),
            _ => Csr::full(&self.cdd),
        }
    }

    fn reset(&mut self) {
        self.mode = Mode::Collecting;
        self.buffer.clear();
        self.window.clear();
        self.lines = None;
        self.misses = 0;
    }

    pub fn step(&mut self, t: usize, obs: &[Observation]) -> StepOutput {
        let csr = self.search_region(t);
        let out = |mode, status, predicted, chosen, smoothed| StepOutput { t, mode, status, predicted, chosen, smoothed, csr };
        match self.mode {
            Mode::Collecting => {
                if obs.is_empty() {
                    self.buffer.clear();
                    return out(Mode::Collecting, StepStatus::Collecting { buffered: 0 }, None, None, None);
                }
                if self.buffer.last().is_some_and(|(last, _)| *last + 1 != t) {
                    self.buffer.clear();
                }
                self.buffer.push((t, obs.to_vec()));
                if self.buffer.len() < self.cfg.init_frames {
                    return out(Mode::Collecting, StepStatus::Collecting { buffered: self.buffer.len() }, None, None, None);
                }
                let Some(sel) = select_initial_combination(&self.buffer, &self.cfg) else {
                    self.buffer.clear();
                    return out(Mode::Collecting, StepStatus::Collecting { buffered: 0 }, None, None, None);
                };
                self.buffer.clear();
                self.window = sel.samples.iter().copied().collect();
                self.lines = Some(sel.lines);
                self.mode = Mode::Tracking;
                self.misses = 0;
                let chosen = self.window.back().map(|s| s.1);
                out(Mode::Tracking, StepStatus::Initialized, None, chosen, Some(sel.lines.at(t)))
            }
            Mode::Tracking => {
                let lines = self.lines.expect("tracking has lines");
                let predicted = predict_state(&lines, t, &self.cdd);
                let sigma = lines.sigmas(&self.cfg.sigma_floor);
                match gate_and_select(obs, &predicted, &sigma, self.cfg.gate_sigmas) {
                    Some(i) => {
                        let chosen = obs[i].state;
                        if self.window.len() == self.cfg.window {
                            self.window.pop_front();
                        }
                        self.window.push_back((t, chosen));
                        let samples: Vec<_> = self.window.iter().copied().collect();
                        let refit = PredictionLines::fit(&samples).expect("non-empty window");
                        self.lines = Some(refit);
                        self.misses = 0;
                        out(Mode::Tracking, StepStatus::Tracked, Some(predicted), Some(chosen), Some(refit.at(t)))
                    }
                    None => {
                        self.misses += 1;
                        if self.misses >= self.cfg.max_misses {
                            self.reset();
                            return out(Mode::Collecting, StepStatus::Lost, Some(predicted), None, None);
                        }
                        let misses = self.misses;
                        out(Mode::Tracking, StepStatus::Missed { misses }, Some(predicted), None, Some(predicted))
                    }
                }
            }
        }
    }
}

pub const TRACK_LOG_HEADER: [&str; 17] = [
    "t", "mode", "pred_D", "pred_theta", "pred_H", "pred_E", "chosen_D", "chosen_theta", "chosen_H", "chosen_E", "smooth_D",
    "smooth_theta", "smooth_H", "smooth_E", "csr_near", "csr_far", "status",
];

fn state_fields(s: &Option<CurbState>) -> Vec<String> {
    match s {
        Some(s) => s.as_array().iter().map(|v| format!("{v:.6}")).collect(),
        None => vec!["NA".to_string(); 4],
    }
}

fn status_str(s: &StepStatus) -> String {
    match s {
        StepStatus::Collecting { buffered } => format!("collecting:{buffered}"),
        StepStatus::Initialized => "initialized".into(),
        StepStatus::Tracked => "tracked".into(),
        StepStatus::Missed { misses } => format!("missed:{misses}"),
        StepStatus::Lost => "lost".into(),
    }
}

/// Writes the per-frame track log as CSV. Angles are in radians.
pub fn write_track_log<W: Write>(out: W, steps: &[StepOutput]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_LOG_HEADER)?;
    for s in steps {
        let mut row = vec![s.t.to_string(), s.mode.as_str().to_string()];
        row.extend(state_fields(&s.predicted));
        row.extend(state_fields(&s.chosen));
        row.extend(state_fields(&s.smoothed));
        row.push(format!("{:.3}", s.csr.d_near));
        row.push(format!("{:.3}", s.csr.d_far));
        row.push(status_str(&s.status));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Row of a track log as read back for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackLogRow {
    pub t: usize,
    pub mode: Mode,
    pub chosen: Option<CurbState>,
    pub smoothed: Option<CurbState>,
}

/// Lines starting with `#` carry run metadata and are skipped.
pub fn read_track_log<R: std::io::Read>(input: R) -> Result<Vec<TrackLogRow>, csv::Error> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let invalid = |m: &str| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string()));
    if r.headers()?.iter().collect::<Vec<_>>() != TRACK_LOG_HEADER {
        return Err(invalid("unexpected track log header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let state = |from: usize| -> Result<Option<CurbState>, csv::Error> {
            let mut v = [0.0; 4];
            for k in 0..4 {
                match &rec[from + k] {
                    "NA" => return Ok(None),
                    s => v[k] = s.parse().map_err(|_| invalid("bad number in track log"))?,
                }
            }
            Ok(Some(CurbState::from_array(v)))
        };
        let mode = match &rec[1] {
            "tracking" => Mode::Tracking,
            "collecting" => Mode::Collecting,
            _ => return Err(invalid("bad mode")),
        };
        rows.push(TrackLogRow {
            t: rec[0].parse().map_err(|_| invalid("bad frame index"))?,
            mode,
            chosen: state(6)?,
            smoothed: state(10)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cdd() -> CddConfig {
        CddConfig { d_min: 102.0, d_max: 500.0, w_max: 130.0 }
    }

    fn obs(d: f64, theta: f64, h: f64, e: f64) -> Observation {
        Observation { state: CurbState::new(d, theta, h, e), residual: 0.1 }
    }

    #[test]
    fn single_candidate_frames_give_the_unique_combination() {
        let buf: Vec<_> = (0..5).map(|t| (t, vec![obs(400.0 - 2.0 * t as f64, 0.01, 12.0, 20.0)])).collect();
        let sel = select_initial_combination(&buf, &TrackerConfig::default()).unwrap();
        assert!(!sel.fallback);
        assert!((sel.lines.d.slope + 2.0).abs() < 1e-9);
        assert!((sel.lines.d.intercept - 400.0).abs() < 1e-9);
        assert!(sel.lines.score(&TrackerConfig::default().sse_scale) < 1e-12);
    }

    #[test]
    fn outlier_candidate_is_left_out() {
        let mut buf: Vec<_> = (0..5).map(|t| (t, vec![obs(300.0 - 1.5 * t as f64, 0.0, 12.0, 20.0)])).collect();
        buf[2].1.insert(0, obs(420.0, 0.0, 12.0, 20.0));
        let sel = select_initial_combination(&buf, &TrackerConfig::default()).unwrap();
        assert!((sel.samples[2].1.d - 297.0).abs() < 1e-9);
    }

    #[test]
    fn combination_explosion_falls_back_to_lowest_residual() {
        let cfg = TrackerConfig { max_combinations: 10, ..Default::default() };
        let buf: Vec<_> = (0..5)
            .map(|t| {
                let mut c = vec![obs(300.0, 0.0, 12.0, 20.0), obs(310.0, 0.0, 12.0, 20.0)];
                c[1].residual = 0.01;
                (t, c)
            })
            .collect();
        let sel = select_initial_combination(&buf, &cfg).unwrap();
        assert!(sel.fallback);
        assert!(sel.samples.iter().all(|s| s.1.d == 310.0));
    }

    #[test]
    fn prediction_follows_the_lines() {
        let samples: Vec<_> = (0..5).map(|t| (t, CurbState::new(350.0, 0.05, 12.0, 18.0))).collect();
        let lines = PredictionLines::fit(&samples).unwrap();
        assert_eq!(predict_state(&lines, 9, &cdd()), CurbState::new(350.0, 0.05, 12.0, 18.0));
        let samples: Vec<_> = (0..5).map(|t| (t, CurbState::new(350.0 - 2.0 * t as f64, 0.0, 12.0, 18.0))).collect();
        let lines = PredictionLines::fit(&samples).unwrap();
        for t in 5..10 {
            assert!((predict_state(&lines, t, &cdd()).d - (350.0 - 2.0 * t as f64)).abs() < 1e-9);
        }
        let far: Vec<_> = (0..5).map(|t| (t, CurbState::new(480.0 + 10.0 * t as f64, 0.0, 12.0, 18.0))).collect();
        assert_eq!(predict_state(&PredictionLines::fit(&far).unwrap(), 20, &cdd()).d, 500.0);
    }

    #[test]
    fn searching_region_examples() {
        let c = cdd();
        let x = |d| CurbState::new(d, 0.0, 12.0, 20.0);
        assert_eq!(update_csr(&x(300.0), &c, 60.0), Csr { d_near: 270.0, d_far: 330.0 });
        assert_eq!(update_csr(&x(112.0), &c, 60.0).d_near, 102.0);
        assert_eq!(update_csr(&x(80.0), &c, 60.0), Csr { d_near: 440.0, d_far: 500.0 });
    }

    #[test]
    fn gate_prefers_the_inlier() {
        let sigma = [4.0, 0.02, 1.0, 3.0];
        let pred = CurbState::new(300.0, 0.0, 12.0, 20.0);
        assert_eq!(gate_and_select(&[obs(303.0, 0.01, 12.5, 21.0)], &pred, &sigma, 3.0), Some(0));
        let two = [obs(360.0, 0.0, 12.0, 20.0), obs(298.0, 0.0, 12.2, 19.0)];
        assert_eq!(gate_and_select(&two, &pred, &sigma, 3.0), Some(1));
        // both within the E gate: D decides
        let e_close = [obs(308.0, 0.0, 12.0, 22.0), obs(301.0, 0.0, 12.0, 18.0)];
        assert_eq!(gate_and_select(&e_close, &pred, &sigma, 3.0), Some(1));
        assert_eq!(gate_and_select(&[obs(300.0, 0.3, 12.0, 20.0)], &pred, &sigma, 3.0), None);
        // pair candidates carry no depth and pass the E gate
        assert_eq!(gate_and_select(&[obs(300.0, 0.0, 12.0, 0.0)], &pred, &sigma, 3.0), Some(0));
    }

    #[test]
    fn tracking_starts_on_the_fifth_clean_frame() {
        let mut tr = Tracker::new(TrackerConfig::default(), cdd());
        for t in 0..5 {
            let o = tr.step(t, &[obs(400.0 - t as f64, 0.0, 12.0, 20.0)]);
            assert_eq!(o.mode, if t < 4 { Mode::Collecting } else { Mode::Tracking }, "t={t}");
        }
    }

    #[test]
    fn empty_frame_resets_the_buffer() {
        let mut tr = Tracker::new(TrackerConfig::default(), cdd());
        for t in 0..4 {
            tr.step(t, &[obs(400.0, 0.0, 12.0, 20.0)]);
        }
        let o = tr.step(4, &[]);
        assert_eq!(o.mode, Mode::Collecting);
        assert_eq!(tr.buffered(), 0);
    }

    #[test]
    fn misses_eventually_restart_collection() {
        let mut tr = Tracker::new(TrackerConfig::default(), cdd());
        for t in 0..5 {
            tr.step(t, &[obs(400.0, 0.0, 12.0, 20.0)]);
        }
        for t in 5..9 {
            assert!(matches!(tr.step(t, &[]).status, StepStatus::Missed { .. }));
        }
        assert_eq!(tr.step(9, &[]).status, StepStatus::Lost);
        assert_eq!(tr.mode(), Mode::Collecting);
    }

    #[test]
    fn track_log_round_trip() {
        let mut tr = Tracker::new(TrackerConfig::default(), cdd());
        let steps: Vec<_> = (0..8).map(|t| tr.step(t, &[obs(400.0 - t as f64, 0.01, 12.0, 20.0)])).collect();
        let mut buf = Vec::new();
        write_track_log(&mut buf, &steps).unwrap();
        let rows = read_track_log(&buf[..]).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[4].mode, Mode::Tracking);
        assert!(rows[0].smoothed.is_none());
        assert!((rows[7].smoothed.unwrap().d - 393.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn on_line_sample_keeps_the_fit(
            slope in -5.0f64..5.0, icpt in 100.0f64..400.0, noise in prop::collection::vec(-3.0f64..3.0, 5)
        ) {
            let pts: Vec<(f64, f64)> = noise.iter().enumerate().map(|(t, n)| (t as f64, slope * t as f64 + icpt + n)).collect();
            let a = LineFit::fit(&pts).unwrap();
            let mut more = pts.clone();
            more.push((5.0, a.at(5.0)));
            let b = LineFit::fit(&more).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-9);
            prop_assert!((a.intercept - b.intercept).abs() < 1e-9);
        }

        #[test]
        fn wider_gates_never_reject(
            d in 250.0f64..350.0, h in 8.0f64..16.0, th in -0.1f64..0.1, e in 0.0f64..30.0, k in 1.0f64..4.0
        ) {
            let pred = CurbState::new(300.0, 0.0, 12.0, 20.0);
            let o = [obs(d, th, h, e)];
            let narrow = [4.0, 0.02, 1.0, 3.0];
            let wide = narrow.map(|s| s * k);
            if gate_and_select(&o, &pred, &narrow, 3.0).is_some() {
                prop_assert!(gate_and_select(&o, &pred, &wide, 3.0).is_some());
            }
        }

        #[test]
        fn tracking_only_after_five_consecutive_and_window_bounded(
            pattern in prop::collection::vec(prop::bool::weighted(0.8), 1..60)
        ) {
            let mut tr = Tracker::new(TrackerConfig::default(), cdd());
            let mut run = 0usize;
            let mut prev = Mode::Collecting;
            for (t, &present) in pattern.iter().enumerate() {
                let o = if present { vec![obs(450.0 - t as f64, 0.0, 12.0, 20.0)] } else { vec![] };
                let out = tr.step(t, &o);
                run = if present { run + 1 } else { 0 };
                if prev == Mode::Collecting && out.mode == Mode::Tracking {
                    prop_assert_eq!(run, 5);
                }
                prop_assert!(tr.prediction_set().count() <= 7);
                let ts: Vec<usize> = tr.prediction_set().map(|s| s.0).collect();
                prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
                prev = out.mode;
            }
        }
    }
}
