//! Render configuration, stored as TOML.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{Foveation, StrategyConfig};

use super::camera::Camera;
use super::transport::{DistanceMethod, Integrator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Tomo,
    Pt,
    Foveated,
    #[serde(rename = "motionblur")]
    MotionBlur,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "tomo" => Some(Mode::Tomo),
            "pt" => Some(Mode::Pt),
            "foveated" => Some(Mode::Foveated),
            "motionblur" => Some(Mode::MotionBlur),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumParams {
    #[serde(default = "white")]
    pub albedo: [f64; 3],
    #[serde(default)]
    pub hg_g: f64,
    #[serde(default = "unit")]
    pub density_scale: f64,
}

impl Default for MediumParams {
    fn default() -> Self {
        MediumParams { albedo: white(), hg_g: 0.0, density_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Environment {
    Constant { color: [f64; 3] },
    Sky { zenith: [f64; 3], horizon: [f64; 3] },
    /// Equirectangular map in a PFM file.
    Map { path: String, #[serde(default = "unit")] scale: f64 },
}

impl Default for Environment {
    fn default() -> Self {
        Environment::Constant { color: white() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sun {
    /// Direction towards the light.
    pub direction: [f64; 3],
    pub radiance: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LightConfig {
    #[serde(default)]
    pub env: Environment,
    #[serde(default)]
    pub sun: Option<Sun>,
}

/// Horizontal Lambertian plane `y = height`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ground {
    pub height: f64,
    #[serde(default = "grey")]
    pub albedo: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    pub direction: [f64; 3],
    pub magnitude: f64,
    #[serde(default = "default_cull")]
    pub cull_threshold: f64,
    /// Skip culled groups; `false` renders the full reference.
    #[serde(default = "yes")]
    pub cull: bool,
}

/// Attenuation below which motion-blurred Gabor groups are dropped.
pub const DEFAULT_CULL_THRESHOLD: f64 = 0.2;

fn default_cull() -> f64 {
    DEFAULT_CULL_THRESHOLD
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

fn grey() -> [f64; 3] {
    [0.5; 3]
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn one_spp() -> usize {
    1
}

fn default_depth() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    #[serde(default = "one_spp")]
    pub spp: usize,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exposure: f64,
    /// Adaptive clamping threshold; absent means fixed 3σ extents.
    #[serde(default)]
    pub clamp_eps: Option<f64>,
    #[serde(default)]
    pub zero_nee: bool,
    #[serde(default)]
    pub camera: Camera,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub nee_strategy: StrategyConfig,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub distance: DistanceMethod,
    #[serde(default)]
    pub medium: MediumParams,
    #[serde(default)]
    pub light: LightConfig,
    #[serde(default)]
    pub ground: Option<Ground>,
    #[serde(default)]
    pub foveation: Option<Foveation>,
    #[serde(default)]
    pub motion: Option<MotionConfig>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 64,
            height: 64,
            spp: 1,
            max_depth: default_depth(),
            mode: Mode::Tomo,
            seed: 0,
            exposure: 0.0,
            clamp_eps: None,
            zero_nee: false,
            camera: Camera::default(),
            strategy: StrategyConfig::deterministic(),
            nee_strategy: StrategyConfig::deterministic(),
            integrator: Integrator::Exact,
            distance: DistanceMethod::Bisection,
            medium: MediumParams::default(),
            light: LightConfig::default(),
            ground: None,
            foveation: None,
            motion: None,
        }
    }
}

impl RenderConfig {
    pub fn from_toml(s: &str) -> Result<RenderConfig, ConfigError> {
        let cfg: RenderConfig = toml::from_str(s).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("render config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("zero-area image");
        }
        if self.camera.frame(self.width, self.height).is_none() {
            return bad("degenerate camera");
        }
        if self.spp == 0 {
            return bad("spp must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        let m = &self.medium;
        if !(m.hg_g > -1.0 && m.hg_g < 1.0) {
            return bad("hg_g must lie in (-1, 1)");
        }
        if !(m.density_scale > 0.0) {
            return bad("density_scale must be positive");
        }
        if m.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("albedo must lie in [0, 1]");
        }
        if let Some(e) = self.clamp_eps {
            if !(e > 0.0) {
                return bad("clamp_eps must be positive");
            }
        }
        if let Integrator::Fast { terms, midpoint } = self.integrator {
            if !(1..=crate::kernel::MAX_SERIES_TERMS).contains(&terms) || !(midpoint >= 0.0) {
                return bad("fast integrator needs 1..=16 terms and a non-negative threshold");
            }
        }
        if self.mode == Mode::Foveated && self.foveation.is_none() {
            return bad("foveated mode needs a [foveation] table");
        }
        if self.mode == Mode::MotionBlur && self.motion.is_none() {
            return bad("motionblur mode needs a [motion] table");
        }
        Ok(())
    }
}
