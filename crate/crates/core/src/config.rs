//! JSON run configuration shared by the command-line verbs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{OccError, Result};
use crate::geometry::{CameraRig, VoxelGridSpec};
use crate::head::HeadConfig;
use crate::metrics::BenchOptions;
use crate::scenegen::{RigSpec, SceneSpec};
use crate::view_transform::DepthBinSpec;

/// Either a generated ring or explicit per-camera matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigConfig {
    Ring(RigSpec),
    Explicit(CameraRig),
}

impl RigConfig {
    pub fn build(&self) -> Result<CameraRig> {
        match self {
            RigConfig::Ring(spec) => spec.build(),
            RigConfig::Explicit(rig) => {
                rig.validate()?;
                Ok(rig.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub ground: bool,
    pub boxes: usize,
    pub pillars: usize,
    pub clearance: f64,
    pub max_retries: usize,
    /// Std-dev of Gaussian noise added to rendered features; 0 disables it.
    pub noise_sigma: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let s = SceneSpec::default();
        Self { ground: s.ground, boxes: s.boxes, pillars: s.pillars, clearance: s.clearance, max_retries: s.max_retries, noise_sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Weights manifest; `None` means seeded random weights.
    pub weights: Option<PathBuf>,
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { weights: None, scene_dir: PathBuf::from("out/scene"), out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub repeats: usize,
    pub warmup: usize,
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repeats: 9, warmup: 2, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: VoxelGridSpec,
    pub rig: RigConfig,
    pub depth_bins: DepthBinSpec,
    pub head: HeadConfig,
    pub scene: SceneConfig,
    pub paths: PathsConfig,
    pub bench: BenchConfig,
    pub gradcheck_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            grid: VoxelGridSpec { range: [-8.0, -8.0, -1.0, 8.0, 8.0, 2.2], dims: [40, 40, 8] },
            rig: RigConfig::Ring(RigSpec::default()),
            depth_bins: DepthBinSpec { d_min: 0.5, d_max: 16.5, count: 16 },
            head: HeadConfig::default(),
            scene: SceneConfig::default(),
            paths: PathsConfig::default(),
            bench: BenchConfig::default(),
            gradcheck_seeds: 20,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| OccError::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            OccError::Config(msg) => OccError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.depth_bins.validate()?;
        self.head.validate(&self.grid)?;
        self.rig.build()?;
        if self.bench.repeats < 5 {
            return Err(OccError::config(format!("bench.repeats must be at least 5, got {}", self.bench.repeats)));
        }
        if !(self.scene.noise_sigma >= 0.0) {
            return Err(OccError::config("scene.noise_sigma must be non-negative"));
        }
        self.scene_spec().validate()
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            grid: self.grid,
            classes: self.head.classes,
            ground: self.scene.ground,
            boxes: self.scene.boxes,
            pillars: self.scene.pillars,
            clearance: self.scene.clearance,
            max_retries: self.scene.max_retries,
        }
    }

    pub fn bench_options(&self) -> BenchOptions {
        BenchOptions { repeats: self.bench.repeats, warmup: self.bench.warmup, seed: self.seed, parallel: self.bench.parallel }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        v["head"]["kernal"] = serde_json::json!(3);
        let err = RunConfig::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, OccError::Config(_)));
        assert!(err.to_string().contains("kernal"), "{err}");
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        v["sead"] = serde_json::json!(1);
        assert!(RunConfig::from_json(&v.to_string()).unwrap_err().to_string().contains("sead"));
    }

    #[test]
    fn explicit_rig_accepted() {
        let mut cfg = RunConfig::default();
        cfg.rig = RigConfig::Explicit(RigSpec::default().build().unwrap());
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
