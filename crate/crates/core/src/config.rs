//! One config to rule the run: every module's tunables under one TOML
//! document, each field carrying its documented default. CLI flags override
//! file values; the effective config is echoed into the run manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::light::LightConfig;
use crate::plate::SegmentConfig;
use crate::report::ReportConfig;
use crate::synth::NoiseConfig;
use crate::tracker::TrackerConfig;
use crate::violations::ViolationConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub light: LightConfig,
    pub violations: ViolationConfig,
    pub segment: SegmentConfig,
    pub report: ReportConfig,
    /// Noise model applied by the synthetic scene generator.
    pub synth_noise: NoiseConfig,
    /// Plates are rectified to this canonical height (width follows the
    /// quad's aspect) before segmentation.
    pub plate_rectify_height: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            light: LightConfig::default(),
            violations: ViolationConfig::default(),
            segment: SegmentConfig::default(),
            report: ReportConfig::default(),
            synth_noise: NoiseConfig::default(),
            plate_rectify_height: 80,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
