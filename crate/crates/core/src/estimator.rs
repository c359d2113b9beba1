//! On-manifold EKF over a single SE(3) pose, with pixel-level tag-corner measurements.
//!
//! Frame conventions:
//! - the state `T_vi` maps inertial-frame points into the vehicle frame;
//! - `T_cv` maps vehicle-frame points into the camera frame;
//! - a tag pose `T_it` maps tag-frame points into the inertial frame.
//!
//! A tag corner `P` is therefore observed at `D^T T_cv T_vi T_it P` in the camera frame.
//! Both the state and the tag poses are perturbed on the left, `T = exp(eps^) T_mean`.
//!
//! In [`FilterMode::TieEkf`] the tag-pose uncertainty `Sigma_tau` is pushed through the
//! measurement model and added to the pixel noise of that tag's corners. The four corners of a
//! tag share one `eps_tau`, so their noise is correlated; different tags are independent.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3x4, Matrix3x6, Matrix6, Vector2};
use serde::{Deserialize, Serialize};

use crate::camera::{pixel_in_bounds, project, projection_jacobian, Intrinsics, PixelPoint};
use crate::error::{Error, Result};
use crate::lie::{adjoint, dot_op, exp_se3, Cov6, Homogeneous, Pose, Twist, Vec3};
use crate::tags::{TagId, TagMap};

/// Minimum eigenvalue tolerated in a filter covariance.
pub const COV_PSD_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    /// `T_vi`, inertial to vehicle.
    pub pose: Pose,
    /// Covariance of the left perturbation of `pose`.
    pub cov: Cov6,
}

impl FilterState {
    pub fn new(pose: Pose, cov: Cov6) -> Self {
        FilterState { pose, cov }
    }

    /// Vehicle position expressed in the inertial frame, `-C^T r`.
    pub fn position(&self) -> Vec3 {
        vehicle_position(&self.pose)
    }

    /// First-order covariance of [`FilterState::position`], `C^T P_rho C`.
    pub fn position_covariance(&self) -> nalgebra::Matrix3<f64> {
        let c = self.pose.rotation.matrix();
        let p_rho = self.cov.fixed_view::<3, 3>(0, 0);
        c.transpose() * p_rho * c
    }
}

/// Position of the vehicle in the inertial frame for a state pose `T_vi`.
pub fn vehicle_position(t_vi: &Pose) -> Vec3 {
    t_vi.inverse().translation
}

/// Relative motion over one step and its noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionInput {
    /// `log(Xi_k)` with `Xi_k = T_{v_k v_{k-1}}`.
    pub xi_rel: Twist,
    /// `Q_k`.
    pub process_noise: Cov6,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagObservation {
    pub tag_id: TagId,
    /// Pixel corners in the order of [`crate::tags::corner_points_tag_frame`].
    pub corners: [PixelPoint; 4],
    /// Standard deviation of the per-coordinate pixel noise.
    pub pixel_sigma: f64,
}

/// `T_cv`, vehicle to camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrinsicCalib {
    pub t_cv: Pose,
}

impl ExtrinsicCalib {
    pub fn new(t_cv: Pose) -> Self {
        ExtrinsicCalib { t_cv }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterMode {
    #[serde(rename = "EKF")]
    Ekf,
    #[serde(rename = "TIE-EKF")]
    TieEkf,
}

impl FilterMode {
    pub const BOTH: [FilterMode; 2] = [FilterMode::Ekf, FilterMode::TieEkf];

    pub fn name(&self) -> &'static str {
        match self {
            FilterMode::Ekf => "EKF",
            FilterMode::TieEkf => "TIE-EKF",
        }
    }
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "EKF" => Ok(FilterMode::Ekf),
            "TIE-EKF" => Ok(FilterMode::TieEkf),
            other => Err(Error::InvalidParameter(format!(
                "unknown filter mode {other}"
            ))),
        }
    }
}

/// Knobs of the correction step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOptions {
    pub mode: FilterMode,
    /// Drop the cross-corner terms of each tag's augmented noise block.
    pub per_corner_independent: bool,
    /// Multiplies the whole measurement covariance `R'`.
    pub noise_scale: f64,
}

impl UpdateOptions {
    pub fn new(mode: FilterMode) -> Self {
        UpdateOptions {
            mode,
            per_corner_independent: false,
            noise_scale: 1.0,
        }
    }
}

/// `Xi_k T_{k-1}` and `Ad(Xi_k) P Ad(Xi_k)^T + Q_k`.
pub fn predict(state: &FilterState, input: &MotionInput) -> FilterState {
    let xi = exp_se3(&input.xi_rel);
    let f = adjoint(&xi);
    let cov = f * state.cov * f.transpose() + input.process_noise;
    FilterState::new(xi * state.pose, symmetrize(&cov))
}

fn top_rows(t: &Pose) -> Matrix3x4<f64> {
    t.matrix().fixed_view::<3, 4>(0, 0).into_owned()
}

/// Corner in the camera frame, `D^T T_cv T_vi T_it P`.
pub fn predict_corner_camframe(
    state_pose: &Pose,
    calib: &ExtrinsicCalib,
    tag_nominal: &Pose,
    corner: &Homogeneous,
) -> Vec3 {
    let p = (calib.t_cv * *state_pose * *tag_nominal).transform_homogeneous(corner);
    Vec3::new(p.x, p.y, p.z)
}

/// Derivative of the camera-frame corner with respect to the state perturbation,
/// `D^T T_cv (T_vi T_it P)^dot`.
pub fn state_jacobian_z(
    state_pose: &Pose,
    calib: &ExtrinsicCalib,
    tag_nominal: &Pose,
    corner: &Homogeneous,
) -> Matrix3x6<f64> {
    let q = (*state_pose * *tag_nominal).transform_homogeneous(corner);
    top_rows(&calib.t_cv) * dot_op(&q)
}

/// Derivative of the camera-frame corner with respect to the tag-pose perturbation,
/// `D^T T_cv T_vi (T_it P)^dot`.
pub fn tag_jacobian_e(
    state_pose: &Pose,
    calib: &ExtrinsicCalib,
    tag_nominal: &Pose,
    corner: &Homogeneous,
) -> Matrix3x6<f64> {
    let q = tag_nominal.transform_homogeneous(corner);
    top_rows(&(calib.t_cv * *state_pose)) * dot_op(&q)
}

/// Measurement covariance of one tag's corners, `H Sigma_tau H^T + pixel_sigma^2 I`, where
/// `H` stacks the per-corner `S_n E_n` (2x6 each).
///
/// Returns a `2n x 2n` matrix for `n` corners (8x8 for a fully visible tag). With
/// `per_corner_independent` the off-diagonal 2x2 blocks between different corners are zeroed.
pub fn augmented_noise_block(
    s_list: &[Matrix2x3<f64>],
    e_list: &[Matrix3x6<f64>],
    sigma_tau: &Cov6,
    pixel_sigma: f64,
    per_corner_independent: bool,
) -> DMatrix<f64> {
    assert_eq!(s_list.len(), e_list.len(), "one E per S");
    let n = s_list.len();
    let mut h = DMatrix::zeros(2 * n, 6);
    for (i, (s, e)) in s_list.iter().zip(e_list).enumerate() {
        h.fixed_view_mut::<2, 6>(2 * i, 0).copy_from(&(s * e));
    }
    let sigma = DMatrix::from_column_slice(6, 6, sigma_tau.as_slice());
    let mut r = &h * sigma * h.transpose();
    if per_corner_independent {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    r.view_mut((2 * i, 2 * j), (2, 2)).fill(0.0);
                }
            }
        }
    }
    for k in 0..2 * n {
        r[(k, k)] += pixel_sigma * pixel_sigma;
    }
    r
}

/// One stacked corner measurement.
struct CornerRow {
    g: Matrix2x6<f64>,
    innovation: Vector2<f64>,
}

/// Kalman correction with all corners of all observed tags stacked.
///
/// Corners whose predicted position is behind the camera or outside the image are dropped.
/// If nothing remains the state is returned unchanged.
pub fn correct(
    state: &FilterState,
    observations: &[TagObservation],
    map: &TagMap,
    calib: &ExtrinsicCalib,
    intr: &Intrinsics,
    opts: &UpdateOptions,
) -> Result<FilterState> {
    let mut rows: Vec<CornerRow> = Vec::with_capacity(observations.len() * 4);
    let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(observations.len());

    for obs in observations {
        let tag = map.get(obs.tag_id)?;
        if !(obs.pixel_sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tag {}: pixel_sigma must be > 0",
                obs.tag_id
            )));
        }
        let mut s_list = Vec::with_capacity(4);
        let mut e_list = Vec::with_capacity(4);
        for (corner, measured) in tag.corners_tag_frame().iter().zip(&obs.corners) {
            let p_cam = predict_corner_camframe(&state.pose, calib, &tag.nominal_pose, corner);
            let predicted = match project(&p_cam, intr) {
                Ok(px) if pixel_in_bounds(&px, intr, 0.0) => px,
                _ => continue,
            };
            let s = projection_jacobian(&p_cam, intr)?;
            let z = state_jacobian_z(&state.pose, calib, &tag.nominal_pose, corner);
            rows.push(CornerRow {
                g: s * z,
                innovation: Vector2::new(measured.u - predicted.u, measured.v - predicted.v),
            });
            s_list.push(s);
            e_list.push(match opts.mode {
                FilterMode::TieEkf => tag_jacobian_e(&state.pose, calib, &tag.nominal_pose, corner),
                FilterMode::Ekf => Matrix3x6::zeros(),
            });
        }
        if s_list.is_empty() {
            continue;
        }
        let block = match opts.mode {
            FilterMode::TieEkf => augmented_noise_block(
                &s_list,
                &e_list,
                &tag.sigma_tau,
                obs.pixel_sigma,
                opts.per_corner_independent,
            ),
            FilterMode::Ekf => {
                let dim = 2 * s_list.len();
                DMatrix::identity(dim, dim) * (obs.pixel_sigma * obs.pixel_sigma)
            }
        };
        blocks.push(block);
    }

    if rows.is_empty() {
        return Ok(*state);
    }

    let m = 2 * rows.len();
    let mut g = DMatrix::zeros(m, 6);
    let mut innovation = DVector::zeros(m);
    for (i, row) in rows.iter().enumerate() {
        g.fixed_view_mut::<2, 6>(2 * i, 0).copy_from(&row.g);
        innovation
            .fixed_rows_mut::<2>(2 * i)
            .copy_from(&row.innovation);
    }
    let mut r = DMatrix::zeros(m, m);
    let mut offset = 0;
    for block in &blocks {
        let d = block.nrows();
        r.view_mut((offset, offset), (d, d)).copy_from(block);
        offset += d;
    }
    if opts.noise_scale != 1.0 {
        r *= opts.noise_scale;
    }

    let p = DMatrix::from_column_slice(6, 6, state.cov.as_slice());
    let gp = &g * &p;
    let w = &gp * g.transpose() + r;
    let min_diag = w.diagonal().min();
    let chol = w
        .cholesky()
        .ok_or(Error::SingularInnovation { rows: m, min_diag })?;
    // K = P G^T W^-1 = (W^-1 G P)^T since P and W are symmetric.
    let gain = chol.solve(&gp).transpose();
    let delta = &gain * &innovation;
    let correction = Twist::from_column_slice(delta.as_slice());

    let kg = &gain * &g;
    let kg = Matrix6::from_column_slice(kg.as_slice());
    let cov = (Matrix6::identity() - kg) * state.cov;

    Ok(FilterState::new(
        exp_se3(&correction) * state.pose,
        symmetrize(&cov),
    ))
}

pub fn symmetrize(m: &Cov6) -> Cov6 {
    (m + m.transpose()) * 0.5
}
