//! Pipeline configuration, read from JSON with defaults for missing fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::body::{HeuristicParams, RefineParams, TorsoParams};
use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::kmeans::KMeansConfig;
use crate::skin::{GroupParams, LikelihoodRule, DECISION_THRESHOLD};
use crate::temporal::WindowParams;
use crate::textdet::DecodeParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkinConfig {
    pub likelihood: LikelihoodRule,
    pub posterior_threshold: f64,
    pub grouping: GroupParams,
}

impl Default for SkinConfig {
    fn default() -> Self {
        Self {
            likelihood: LikelihoodRule::ModeFrequency,
            posterior_threshold: DECISION_THRESHOLD,
            grouping: GroupParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DetectorConfig {
    /// Faces proposed from skin intensities.
    #[default]
    SkinHeuristic,
    /// Precomputed detections JSON.
    File { path: PathBuf },
}

/// Where text score maps come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoreSource {
    /// Pixel scores from the torso crop of the fused image.
    #[default]
    BaselineFromFused,
    /// Full-frame F32M maps for the keyframe: 1-channel pixel, 8-channel links.
    Files { pixel: PathBuf, links: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub frame_pattern: String,
    pub seed: u64,
    pub features: FeatureParams,
    pub kmeans: KMeansConfig,
    pub window: WindowParams,
    pub skin: SkinConfig,
    /// Seed merge distance as a fraction of the frame diagonal.
    pub seed_gap_fraction: f64,
    pub detector: DetectorConfig,
    pub heuristic: HeuristicParams,
    pub refine: RefineParams,
    pub torso: TorsoParams,
    pub decode: DecodeParams,
    pub scores: ScoreSource,
    /// Run text detection on every window frame, not only the keyframe.
    pub detect_all_frames: bool,
    /// Torsos overlapping an earlier one at least this much are dropped.
    pub torso_dedup_iou: f64,
    pub overlay: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_pattern: "*.png".into(),
            seed: 0,
            features: FeatureParams::default(),
            kmeans: KMeansConfig::default(),
            window: WindowParams::default(),
            skin: SkinConfig::default(),
            seed_gap_fraction: 0.05,
            detector: DetectorConfig::default(),
            heuristic: HeuristicParams::default(),
            refine: RefineParams::default(),
            torso: TorsoParams::default(),
            decode: DecodeParams::default(),
            scores: ScoreSource::default(),
            detect_all_frames: false,
            torso_dedup_iou: 0.5,
            overlay: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        let f = &self.features;
        if f.gradient_window % 2 == 0
            || f.range_window % 2 == 0
            || f.gradient_window == 0
            || f.range_window == 0
        {
            return fail("feature windows must be odd and positive");
        }
        if self.kmeans.restarts == 0
            || self.kmeans.max_iterations == 0
            || !(self.kmeans.tolerance >= 0.0)
        {
            return fail("k-means needs restarts, iterations and a nonnegative tolerance");
        }
        if !(self.window.z_threshold > 0.0) || self.window.max_window < 2 {
            return fail("window needs a positive z threshold and max_window >= 2");
        }
        if !(0.0..=1.0).contains(&self.skin.posterior_threshold) {
            return fail("posterior threshold must lie in [0, 1]");
        }
        if !(self.seed_gap_fraction >= 0.0) {
            return fail("seed gap fraction must be nonnegative");
        }
        let t = &self.torso;
        if !(t.height_multiplier > 1.0) || !(t.width_multiplier > 0.0) {
            return fail("torso multipliers must be positive, height above 1");
        }
        if !(t.min_aspect <= t.max_aspect)
            || !(t.skin_growth >= 0.0)
            || !(t.min_area_fraction >= 0.0)
        {
            return fail("faceless torso gates are inconsistent");
        }
        let d = &self.decode;
        if !(d.theta_pixel > 0.0 && d.theta_pixel < 1.0 && d.theta_link > 0.0 && d.theta_link < 1.0)
        {
            return fail("decoder thresholds must lie in (0, 1)");
        }
        let h = &self.heuristic;
        if h.tone_candidates == 0
            || !(h.tone_tolerance >= 0.0)
            || !(h.min_aspect <= h.max_aspect)
            || !(h.beta > 0.0)
        {
            return fail("heuristic detector parameters are inconsistent");
        }
        if !(0.0..=1.0).contains(&self.torso_dedup_iou) {
            return fail("torso dedup IoU must lie in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = PipelineConfig {
            seed: 9,
            detector: DetectorConfig::File {
                path: "faces.json".into(),
            },
            ..Default::default()
        };
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(
            PipelineConfig::from_json("{}").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_json(r#"{"decode":{"theta_pixel":1.5}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"features":{"range_window":4}}"#).is_err());
        assert!(PipelineConfig::from_json("not json").is_err());
    }
}
