//! TOML experiment configuration.
//!
//! Every field has a default, so a file only needs the values it changes. Loading merges the
//! file's tables into the default configuration key by key; arrays (such as `tags`) and the
//! `orientation` and `level` values replace the default as a whole, and so does a trajectory
//! table that names a different `kind`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{Intrinsics, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::estimator::ExtrinsicCalib;
use crate::lie::{Cov6, Pose, Rotation, Vec3};
use crate::mc::{builtin_scenarios, Experiment, Level, ScenarioConfig};
use crate::sim::{PixelNoise, Scene, TrajectorySpec, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::tags::{Tag, TagId, TagMap, DEFAULT_TAG_SIZE};

/// A rotation given either as axis and angle or as intrinsic Z-Y-X Euler angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Orientation {
    AxisAngle { axis: [f64; 3], angle_deg: f64 },
    YawPitchRoll { yaw_pitch_roll_deg: [f64; 3] },
}

impl Orientation {
    pub fn rotation(&self) -> Rotation {
        match self {
            Orientation::AxisAngle { axis, angle_deg } => {
                Rotation::from_axis_angle(&Vec3::from(*axis), angle_deg.to_radians())
            }
            Orientation::YawPitchRoll {
                yaw_pitch_roll_deg: [y, p, r],
            } => Rotation::from_yaw_pitch_roll(y.to_radians(), p.to_radians(), r.to_radians()),
        }
    }
}

/// Camera mounting: pose of the camera frame in the vehicle frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrinsicsConfig {
    pub position_m: [f64; 3],
    pub orientation: Orientation,
}

impl Default for ExtrinsicsConfig {
    /// Camera at the vehicle origin looking along the vehicle's forward axis.
    fn default() -> Self {
        ExtrinsicsConfig {
            position_m: [0.0; 3],
            orientation: Orientation::AxisAngle {
                axis: [-1.0, 1.0, -1.0],
                angle_deg: 120.0,
            },
        }
    }
}

impl ExtrinsicsConfig {
    pub fn calib(&self) -> ExtrinsicCalib {
        let t_vc = Pose::new(self.orientation.rotation(), Vec3::from(self.position_m));
        ExtrinsicCalib::new(t_vc.inverse())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagConfig {
    pub id: TagId,
    #[serde(default = "default_tag_size")]
    pub size_m: f64,
    /// Tag center in the inertial frame.
    pub position: [f64; 3],
    #[serde(default = "wall_orientation")]
    pub orientation: Orientation,
    /// Standard deviation of the installation error, translation part (m).
    #[serde(default)]
    pub sigma_translation_m: [f64; 3],
    /// Standard deviation of the installation error, rotation part (deg).
    #[serde(default)]
    pub sigma_rotation_deg: [f64; 3],
}

fn default_tag_size() -> f64 {
    DEFAULT_TAG_SIZE
}

/// Tag facing +Y from the y = 0 wall.
fn wall_orientation() -> Orientation {
    Orientation::AxisAngle {
        axis: [1.0, 0.0, 0.0],
        angle_deg: -90.0,
    }
}

impl TagConfig {
    pub fn tag(&self) -> Result<Tag> {
        let s = &self.sigma_translation_m;
        let r = self.sigma_rotation_deg.map(f64::to_radians);
        let sigma = Cov6::from_diagonal(&nalgebra::Vector6::new(
            s[0] * s[0],
            s[1] * s[1],
            s[2] * s[2],
            r[0] * r[0],
            r[1] * r[1],
            r[2] * r[2],
        ));
        let pose = Pose::new(self.orientation.rotation(), Vec3::from(self.position));
        Tag::new(self.id, self.size_m, pose, sigma)
    }
}

fn default_tags() -> Vec<TagConfig> {
    [-1.0, 0.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &x)| TagConfig {
            id: i as TagId,
            size_m: DEFAULT_TAG_SIZE,
            position: [x, 0.0, 1.0],
            orientation: wall_orientation(),
            sigma_translation_m: [0.0; 3],
            sigma_rotation_deg: [0.0; 3],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Pixel noise added to the simulated corners (px).
    pub pixel_sigma: f64,
    /// Pixel noise the filters assume; defaults to `pixel_sigma`.
    pub assumed_pixel_sigma: Option<f64>,
    /// Velocity noise of the motion inputs (m/s).
    pub input_sigma_translation: f64,
    /// Angular-rate noise of the motion inputs (rad/s).
    pub input_sigma_rotation: f64,
    /// Corrupt the simulated inputs with the noise the filters assume.
    pub corrupt_inputs: bool,
    /// Initial standard deviation of every pose component (m and rad).
    pub initial_sigma: f64,
    /// Start each run from a draw of the initial covariance instead of the truth.
    pub sample_initial_error: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pixel_sigma: 1.0,
            assumed_pixel_sigma: None,
            input_sigma_translation: 0.05,
            input_sigma_rotation: 0.05,
            corrupt_inputs: true,
            initial_sigma: 0.01,
            sample_initial_error: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Drop the cross-corner correlation of the installation-error term.
    pub per_corner_independent: bool,
    pub divergence_threshold_m: f64,
    pub visibility_margin_px: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            per_corner_independent: false,
            divergence_threshold_m: DEFAULT_DIVERGENCE_THRESHOLD,
            visibility_margin_px: DEFAULT_MARGIN,
        }
    }
}

/// A scenario as written in the `[scenarios.<name>]` tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub trajectory: String,
    pub perturbed_ids: Vec<TagId>,
    pub level: Level,
    pub iterations: usize,
    pub base_seed: u64,
}

fn default_scenarios() -> BTreeMap<String, ScenarioEntry> {
    builtin_scenarios()
        .into_iter()
        .map(|s| {
            (
                s.name,
                ScenarioEntry {
                    trajectory: s.trajectory,
                    perturbed_ids: s.perturbed_ids,
                    level: s.level,
                    iterations: s.iterations,
                    base_seed: s.base_seed,
                },
            )
        })
        .collect()
}

fn default_trajectories() -> BTreeMap<String, TrajectorySpec> {
    Experiment::default().trajectories
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub camera: Intrinsics,
    pub extrinsics: ExtrinsicsConfig,
    pub noise: NoiseConfig,
    pub filter: FilterConfig,
    pub tags: Vec<TagConfig>,
    pub trajectories: BTreeMap<String, TrajectorySpec>,
    pub scenarios: BTreeMap<String, ScenarioEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            camera: Intrinsics::default(),
            extrinsics: ExtrinsicsConfig::default(),
            noise: NoiseConfig::default(),
            filter: FilterConfig::default(),
            tags: default_tags(),
            trajectories: default_trajectories(),
            scenarios: default_scenarios(),
        }
    }
}

/// Keys whose values are replaced rather than merged.
const REPLACED_KEYS: [&str; 2] = ["orientation", "level"];

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(existing)
                        if !REPLACED_KEYS.contains(&key.as_str())
                            && same_kind(existing, &value) =>
                    {
                        merge(existing, value)
                    }
                    _ => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// False when `over` switches a tagged table to another variant.
fn same_kind(base: &toml::Value, over: &toml::Value) -> bool {
    match (base.get("kind"), over.get("kind")) {
        (Some(b), Some(o)) => b == o,
        _ => true,
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    /// Parses TOML text on top of the defaults and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(config_error)?;
        let mut merged =
            toml::Value::try_from(ExperimentConfig::default()).map_err(config_error)?;
        merge(&mut merged, toml::Value::Table(user));
        let config: ExperimentConfig = merged.try_into().map_err(config_error)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The full effective configuration as TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_error)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment()?;
        let n = &self.noise;
        let positive = [
            ("noise.pixel_sigma", n.pixel_sigma),
            (
                "noise.assumed_pixel_sigma",
                n.assumed_pixel_sigma.unwrap_or(n.pixel_sigma),
            ),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("noise.input_sigma_translation", n.input_sigma_translation),
            ("noise.input_sigma_rotation", n.input_sigma_rotation),
            ("noise.initial_sigma", n.initial_sigma),
            (
                "filter.visibility_margin_px",
                self.filter.visibility_margin_px,
            ),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.filter.divergence_threshold_m > 0.0) {
            return Err(Error::Config(
                "filter.divergence_threshold_m must be > 0".into(),
            ));
        }
        for spec in self.trajectories.values() {
            spec.validate()?;
        }
        for scenario in self.scenarios() {
            scenario.validate()?;
            if !self.trajectories.contains_key(&scenario.trajectory) {
                return Err(Error::Config(format!(
                    "scenario {} references unknown trajectory {}",
                    scenario.name, scenario.trajectory
                )));
            }
            if let Some(id) = scenario
                .perturbed_ids
                .iter()
                .find(|id| !self.tags.iter().any(|t| t.id == **id))
            {
                return Err(Error::Config(format!(
                    "scenario {} perturbs unknown tag {id}",
                    scenario.name
                )));
            }
        }
        Ok(())
    }

    pub fn tag_map(&self) -> Result<TagMap> {
        TagMap::new(
            self.tags
                .iter()
                .map(TagConfig::tag)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.camera.validate()?;
        let n = &self.noise;
        let p0 = n.initial_sigma * n.initial_sigma;
        Ok(Experiment {
            scene: Scene {
                map: self.tag_map()?,
                calib: self.extrinsics.calib(),
                intr: self.camera,
                margin: self.filter.visibility_margin_px,
            },
            trajectories: self.trajectories.clone(),
            input_sigma: [n.input_sigma_translation, n.input_sigma_rotation],
            corrupt_inputs: n.corrupt_inputs,
            pixel_noise: PixelNoise {
                actual: n.pixel_sigma,
                assumed: n.assumed_pixel_sigma.unwrap_or(n.pixel_sigma),
            },
            initial_cov: Cov6::identity() * p0,
            sample_initial_error: n.sample_initial_error,
            per_corner_independent: self.filter.per_corner_independent,
            divergence_threshold: self.filter.divergence_threshold_m,
        })
    }

    /// All configured scenarios, ordered by name.
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        self.scenarios
            .iter()
            .map(|(name, e)| ScenarioConfig {
                name: name.clone(),
                trajectory: e.trajectory.clone(),
                perturbed_ids: e.perturbed_ids.clone(),
                level: e.level,
                iterations: e.iterations,
                base_seed: e.base_seed,
            })
            .collect()
    }

    pub fn scenario(&self, name: &str) -> Result<ScenarioConfig> {
        self.scenarios()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario {name}")))
    }
}
