use serde::{Deserialize, Serialize};

use crate::color_features::FeatureConfig;
use crate::error::{Error, Result};
use crate::evaluator::parse_grid;
use crate::scene_builder::SceneConfig;
use crate::similarity::{FusionWeights, LapFilter, Method};
use crate::tracker::TrackerConfig;

/// Every tunable of the pipeline in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub scenes: SceneConfig,
    /// Frame width in pixels; when unset, the largest box right edge seen in
    /// the tracks is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_width: Option<f64>,
    pub features: FeatureConfig,
    pub fusion: FusionWeights,
    pub lap: LapFilter,
    pub method: String,
    pub ranks: Vec<usize>,
    pub grid: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            scenes: SceneConfig::default(),
            frame_width: None,
            features: FeatureConfig::default(),
            fusion: FusionWeights::default(),
            lap: LapFilter::default(),
            method: Method::ColorWithShoes.to_string(),
            ranks: vec![1, 5],
            grid: "0:1:0.05".into(),
        }
    }
}

impl PipelineConfig {
    pub fn method(&self) -> Result<Method> {
        self.method.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.scenes.validate()?;
        self.fusion.validate()?;
        self.lap.validate()?;
        self.method()?;
        parse_grid(&self.grid)?;
        if let Some(w) = self.frame_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "frame_width {w} must be positive"
                )));
            }
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::InvalidConfig(
                "ranks must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }
}
