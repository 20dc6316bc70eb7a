//! Single TOML configuration for all stages, with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceConfig;
use crate::edges::LineExtractionConfig;
use crate::eval::EvalConfig;
use crate::appearance::LinearModel;
use crate::geometry::{CameraRig, CddConfig};
use crate::pipeline::Detector;
use crate::ipcm::{RemapConfig, WarpSettings};
use crate::synth::{CorpusConfig, Photometry, Trajectory};
use crate::template::FitConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Detection domain. A missing `d_min` is the depth of the bottom image row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub d_min: Option<f64>,
    pub d_max: f64,
    pub w_max: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { d_min: None, d_max: 500.0, w_max: 130.0 }
    }
}

/// Scene settings of the `render` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// `clear` or `shadow`.
    pub preset: String,
    pub noise_sigma: f32,
    pub road_patches: usize,
    pub stripe_probability: f64,
    pub trajectory: Trajectory,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { preset: "clear".into(), noise_sigma: 4.0, road_patches: 0, stripe_probability: 0.0, trajectory: Trajectory::default() }
    }
}

impl RenderConfig {
    pub fn photometry(&self) -> Result<Photometry, ConfigError> {
        let p = Photometry::preset(&self.preset)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown photometry preset {:?}", self.preset)))?
            .with_noise(self.noise_sigma)
            .with_distractors(self.road_patches, self.stripe_probability);
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// Classifier model file; without one every fitted candidate is accepted.
    pub model: Option<PathBuf>,
    pub rig: CameraRig,
    pub domain: DomainConfig,
    pub warp: WarpSettings,
    pub lines: LineExtractionConfig,
    pub fit: FitConfig,
    pub appearance: AppearanceConfig,
    pub tracker: TrackerConfig,
    pub render: RenderConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalConfig,
}

/// Sets `key` (dotted path) in a TOML table; `value` is parsed as a TOML
/// value and kept as a string when it does not parse.
fn set_dotted(root: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(format!("{key}={value}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::BadOverride(format!("{key}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

impl Config {
    /// Parses TOML text and applies `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            set_dotted(&mut table, k.trim(), v.trim())?;
        }
        let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cdd(&self) -> Result<CddConfig, ConfigError> {
        let invalid = |e: crate::geometry::GeometryError| ConfigError::Invalid(e.to_string());
        match self.domain.d_min {
            Some(d_min) => {
                let c = CddConfig { d_min, d_max: self.domain.d_max, w_max: self.domain.w_max };
                c.validate().map_err(invalid)?;
                Ok(c)
            }
            None => CddConfig::from_rig(&self.rig, self.domain.d_max, self.domain.w_max).map_err(invalid),
        }
    }

    pub fn remap(&self) -> Result<RemapConfig, ConfigError> {
        RemapConfig::new(&self.rig, &self.cdd()?).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Detector with this configuration's stage settings.
    pub fn detector(&self, model: Option<LinearModel>) -> Result<Detector, ConfigError> {
        let mut d = Detector::new(self.rig, self.cdd()?, model).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        d.warp = self.warp;
        d.lines = self.lines;
        d.fit = self.fit;
        d.appearance = self.appearance;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.rig.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.remap()?;
        let l = &self.lines;
        if !(l.edges.low >= 0.0 && l.edges.low <= l.edges.high) {
            return bad("edge thresholds need 0 <= low <= high".into());
        }
        if !(l.hough.angle_step_deg > 0.0 && l.hough.angle_band_deg > 0.0 && l.hough.max_lines > 0) {
            return bad("hough angle band, step and line cap must be positive".into());
        }
        let f = &self.fit;
        if (0..4).any(|k| !(f.lower[k] < f.upper[k])) || f.diff_steps.iter().any(|s| !(*s > 0.0)) {
            return bad("fit bounds must be ordered and difference steps positive".into());
        }
        let a = &self.appearance;
        if !(a.window_scale > 0.0 && a.svm_c > 0.0 && a.min_face_px > 0.0 && a.patch_blur_sigma >= 0.0) {
            return bad("appearance window scale, C and minimum face must be positive".into());
        }
        let t = &self.tracker;
        if t.init_frames < 2 || t.window < t.init_frames || !(t.gate_sigmas > 0.0) || !(t.csr_length > 0.0) || t.max_misses == 0 {
            return bad("tracker needs init_frames >= 2, window >= init_frames and positive gates".into());
        }
        if t.sigma_floor.iter().chain(&t.sse_scale).any(|v| !(*v > 0.0)) {
            return bad("tracker sigma floors and SSE scales must be positive".into());
        }
        if !(self.eval.gate > 0.0 && self.eval.bin_width > 0.0) {
            return bad("evaluation gate and bin width must be positive".into());
        }
        self.render.photometry()?;
        Ok(())
    }
}
