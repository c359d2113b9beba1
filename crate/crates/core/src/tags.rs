//! Tag map: nominal tag poses, corner geometry, and installation-error perturbations.

use std::collections::BTreeSet;

use nalgebra::Vector6;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{sample_perturbed, Cov6, Homogeneous, Pose, Rotation, Vec3};

/// Edge length of the printed tags used in the default layout (m).
pub const DEFAULT_TAG_SIZE: f64 = 0.165;

pub type TagId = u32;

/// A fiducial tag. `nominal_pose` maps tag-frame points into the inertial frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Tag {
    pub id: TagId,
    pub size: f64,
    pub nominal_pose: Pose,
    /// Covariance of the left perturbation `eps_tau` of the nominal pose.
    pub sigma_tau: Cov6,
}

impl Tag {
    pub fn new(id: TagId, size: f64, nominal_pose: Pose, sigma_tau: Cov6) -> Result<Self> {
        if !(size > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tag {id}: size must be > 0"
            )));
        }
        crate::lie::covariance_factor(&sigma_tau)?;
        Ok(Tag {
            id,
            size,
            nominal_pose,
            sigma_tau,
        })
    }

    pub fn corners_tag_frame(&self) -> [Homogeneous; 4] {
        corner_points_tag_frame(self.size)
    }
}

/// Ordered, non-empty collection of tags with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TagMap {
    tags: Vec<Tag>,
}

impl TagMap {
    pub fn new(tags: Vec<Tag>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::EmptyMap);
        }
        let mut seen = BTreeSet::new();
        for t in &tags {
            if !seen.insert(t.id) {
                return Err(Error::DuplicateTag(t.id));
            }
        }
        Ok(TagMap { tags })
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tag> {
        self.tags.iter()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn get(&self, id: TagId) -> Result<&Tag> {
        self.tags
            .iter()
            .find(|t| t.id == id)
            .ok_or(Error::UnknownTag(id))
    }

    pub fn ids(&self) -> Vec<TagId> {
        self.tags.iter().map(|t| t.id).collect()
    }

    /// Replaces the uncertainty of the listed tags, leaving poses untouched.
    pub fn with_sigma(&self, ids: &BTreeSet<TagId>, sigma: &Cov6) -> Result<TagMap> {
        for id in ids {
            self.get(*id)?;
        }
        let mut out = self.clone();
        for t in out.tags.iter_mut().filter(|t| ids.contains(&t.id)) {
            t.sigma_tau = *sigma;
        }
        Ok(out)
    }

    /// Three coplanar tags on a wall in the inertial XZ plane (y = 0), centers at
    /// x = -1, 0, 1 m and z = 1 m, facing +Y. Ids are 0, 1, 2 from left to right, so the
    /// middle tag is id 1.
    pub fn default_wall() -> TagMap {
        let tags = [-1.0, 0.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| Tag {
                id: i as TagId,
                size: DEFAULT_TAG_SIZE,
                nominal_pose: wall_tag_pose(Vec3::new(x, 0.0, 1.0)),
                sigma_tau: Cov6::zeros(),
            })
            .collect();
        TagMap { tags }
    }
}

/// Pose of a tag mounted on the y = 0 wall: tag X along inertial +X, tag Z out of the wall
/// (inertial +Y), tag Y along inertial -Z.
pub fn wall_tag_pose(center: Vec3) -> Pose {
    let rotation = Rotation::from_axis_angle(&Vec3::x(), -std::f64::consts::FRAC_PI_2);
    Pose::new(rotation, center)
}

/// Tag-frame corners, counterclockwise from `(-s/2, -s/2)`.
pub fn corner_points_tag_frame(size: f64) -> [Homogeneous; 4] {
    let h = 0.5 * size;
    [
        Homogeneous::new(-h, -h, 0.0, 1.0),
        Homogeneous::new(h, -h, 0.0, 1.0),
        Homogeneous::new(h, h, 0.0, 1.0),
        Homogeneous::new(-h, h, 0.0, 1.0),
    ]
}

/// Inertial-frame corners of `tag` when mounted at `true_pose`.
pub fn corner_points_world(tag: &Tag, true_pose: &Pose) -> [Homogeneous; 4] {
    tag.corners_tag_frame()
        .map(|c| true_pose.transform_homogeneous(&c))
}

/// Which twist components a [`PerturbationSpec`] perturbs, in `[x, y, z, rx, ry, rz]` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMask(pub [bool; 6]);

impl AxisMask {
    pub const ALL: AxisMask = AxisMask([true; 6]);
    /// `{x, z, theta_y}`: motion within a wall parallel to the XZ plane.
    pub const IN_PLANE: AxisMask = AxisMask([true, false, true, false, true, false]);
    pub const NONE: AxisMask = AxisMask([false; 6]);
}

/// Per-axis standard deviations of tag installation error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Translation standard deviations along x, y, z (m).
    pub sigma_translation: [f64; 3],
    /// Rotation standard deviations about x, y, z (rad).
    pub sigma_rotation: [f64; 3],
    pub mask: AxisMask,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            sigma_translation: [0.0; 3],
            sigma_rotation: [0.0; 3],
            mask: AxisMask::NONE,
        }
    }
}

impl PerturbationSpec {
    /// `sigma_x = sigma_z = sigma_xz`, `sigma_theta_y = sigma_theta_y_deg`, in-plane mask.
    pub fn in_plane(sigma_xz: f64, sigma_theta_y_deg: f64) -> Self {
        let r = sigma_theta_y_deg.to_radians();
        PerturbationSpec {
            sigma_translation: [sigma_xz, 0.0, sigma_xz],
            sigma_rotation: [0.0, r, 0.0],
            mask: AxisMask::IN_PLANE,
        }
    }

    /// Same standard deviation on every translation axis and every rotation axis.
    pub fn isotropic(sigma_translation: f64, sigma_rotation_deg: f64) -> Self {
        let r = sigma_rotation_deg.to_radians();
        PerturbationSpec {
            sigma_translation: [sigma_translation; 3],
            sigma_rotation: [r; 3],
            mask: AxisMask::ALL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.sigma_translation.iter().chain(&self.sigma_rotation);
        for &s in all {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "perturbation sigma must be finite and >= 0, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Diagonal installation-error covariance; masked-out slots are exactly zero.
pub fn build_sigma(spec: &PerturbationSpec) -> Cov6 {
    let sigmas = [
        spec.sigma_translation[0],
        spec.sigma_translation[1],
        spec.sigma_translation[2],
        spec.sigma_rotation[0],
        spec.sigma_rotation[1],
        spec.sigma_rotation[2],
    ];
    let diag = Vector6::from_fn(|i, _| {
        if spec.mask.0[i] {
            sigmas[i] * sigmas[i]
        } else {
            0.0
        }
    });
    Cov6::from_diagonal(&diag)
}

/// Returns a copy of `map` where each tag in `ids` is moved to a pose drawn from its own
/// `sigma_tau`. Tags are visited in map order; each listed tag consumes a fixed number of draws.
pub fn perturb_map<R: Rng + ?Sized>(
    map: &TagMap,
    ids: &BTreeSet<TagId>,
    rng: &mut R,
) -> Result<TagMap> {
    for id in ids {
        map.get(*id)?;
    }
    let mut out = map.clone();
    for tag in out.tags.iter_mut().filter(|t| ids.contains(&t.id)) {
        tag.nominal_pose = sample_perturbed(&tag.nominal_pose, &tag.sigma_tau, rng)?;
    }
    Ok(out)
}
