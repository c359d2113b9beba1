//! Synthetic experiments: ground-truth trajectories, noisy inputs and tag observations, and
//! single filter runs with error metrics.

use std::io::Write;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{corners_visible, project, Intrinsics, PixelPoint, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::estimator::{
    correct, predict, predict_corner_camframe, ExtrinsicCalib, FilterState, MotionInput,
    TagObservation, UpdateOptions,
};
use crate::lie::{exp_se3, log_se3, sample_twist, Cov6, Pose, Rotation, Twist, Vec3};
use crate::tags::TagMap;

/// RMSE above which a run counts as diverged (m).
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 5.0;

/// Camera, extrinsics and tag map shared by the simulator and the filter.
#[derive(Clone, Debug)]
pub struct Scene {
    pub map: TagMap,
    pub calib: ExtrinsicCalib,
    pub intr: Intrinsics,
    /// Image-border margin for visibility (px).
    pub margin: f64,
}

/// Forward-left-up vehicle frame to a camera looking along the vehicle's forward axis
/// (camera x right, y down, z forward).
pub fn forward_camera_rotation() -> Rotation {
    let c_vc = Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    );
    Rotation::from_matrix(c_vc).expect("valid rotation")
}

impl Scene {
    /// Default wall layout, 640x480 camera, camera looking forward from the vehicle origin.
    pub fn default_wall() -> Scene {
        let t_vc = Pose::from_rotation(forward_camera_rotation());
        Scene {
            map: TagMap::default_wall(),
            calib: ExtrinsicCalib::new(t_vc.inverse()),
            intr: Intrinsics::default(),
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryKind {
    /// Back-and-forth sweeps of `length_m` along inertial x, centered on `center`, facing -y.
    StraightLine {
        length_m: f64,
        repetitions: u32,
        center: [f64; 3],
    },
    /// Horizontal circle around `center` with a sinusoidal height component, yawed so the
    /// vehicle's forward axis points horizontally at `look_at`.
    Circle {
        radius_m: f64,
        revolutions: u32,
        vertical_amplitude_m: f64,
        /// Vertical oscillations per revolution.
        vertical_cycles: u32,
        center: [f64; 3],
        look_at: [f64; 3],
    },
}

/// Unknown keys are rejected by the flattened [`TrajectoryKind`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: TrajectoryKind,
    /// m/s
    pub speed: f64,
    /// s
    pub dt: f64,
}

impl TrajectorySpec {
    /// 3 m back-and-forth line, four legs, 2.5 m from the wall at tag height.
    pub fn straight_line_default() -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::StraightLine {
                length_m: 3.0,
                repetitions: 4,
                center: [0.0, 2.5, 1.0],
            },
            speed: 0.5,
            dt: 0.1,
        }
    }

    /// Radius-1 m circle, two revolutions, +-0.2 m vertical motion.
    pub fn circle_default() -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::Circle {
                radius_m: 1.0,
                revolutions: 2,
                vertical_amplitude_m: 0.2,
                vertical_cycles: 2,
                center: [0.0, 2.5, 1.0],
                look_at: [0.0, 0.0, 1.0],
            },
            speed: 0.5,
            dt: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("trajectory: {msg}")));
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if !(self.speed > 0.0) {
            return bad("speed must be > 0");
        }
        match &self.kind {
            TrajectoryKind::StraightLine {
                length_m,
                repetitions,
                ..
            } => {
                if !(*length_m > 0.0) || *repetitions == 0 {
                    return bad("length and repetitions must be positive");
                }
            }
            TrajectoryKind::Circle {
                radius_m,
                revolutions,
                vertical_amplitude_m,
                ..
            } => {
                if !(*radius_m > 0.0) || *revolutions == 0 || !(*vertical_amplitude_m >= 0.0) {
                    return bad("radius and revolutions must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Ground truth and exact motion inputs.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    /// `T_{v_k i}` for k = 0..=K.
    pub poses: Vec<Pose>,
    /// `log(T_k T_{k-1}^-1)` for k = 1..=K, carrying the process noise the filter assumes.
    pub inputs: Vec<MotionInput>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// `T_vi` for a vehicle at `position` whose forward axis points along `forward` (horizontal)
/// with z up.
pub fn vehicle_pose_facing(position: Vec3, forward: Vec3) -> Pose {
    let x = Vec3::new(forward.x, forward.y, 0.0).normalize();
    let z = Vec3::z();
    let y = z.cross(&x);
    let c_iv = Matrix3::from_columns(&[x, y, z]);
    Pose::new(Rotation::from_matrix_unchecked(c_iv), position).inverse()
}

fn positions_and_headings(spec: &TrajectorySpec) -> Vec<(Vec3, Vec3)> {
    let step = spec.speed * spec.dt;
    match &spec.kind {
        TrajectoryKind::StraightLine {
            length_m,
            repetitions,
            center,
        } => {
            let center = Vec3::from(*center);
            let per_leg = (length_m / step).round().max(1.0) as usize;
            let half = 0.5 * length_m;
            let forward = -Vec3::y();
            let mut out = vec![(center - Vec3::x() * half, forward)];
            for leg in 0..*repetitions as usize {
                let (from, sign) = if leg % 2 == 0 {
                    (-half, 1.0)
                } else {
                    (half, -1.0)
                };
                for k in 1..=per_leg {
                    let x = from + sign * length_m * k as f64 / per_leg as f64;
                    out.push((center + Vec3::x() * x, forward));
                }
            }
            out
        }
        TrajectoryKind::Circle {
            radius_m,
            revolutions,
            vertical_amplitude_m,
            vertical_cycles,
            center,
            look_at,
        } => {
            let center = Vec3::from(*center);
            let look_at = Vec3::from(*look_at);
            let total_angle = std::f64::consts::TAU * *revolutions as f64;
            let steps = (total_angle * radius_m / step).round().max(1.0) as usize;
            (0..=steps)
                .map(|k| {
                    let theta = total_angle * k as f64 / steps as f64;
                    let p = center
                        + Vec3::new(
                            radius_m * theta.cos(),
                            radius_m * theta.sin(),
                            vertical_amplitude_m * (*vertical_cycles as f64 * theta).sin(),
                        );
                    (p, look_at - p)
                })
                .collect()
        }
    }
}

/// Builds the ground-truth poses and exact relative-motion inputs.
///
/// Fails if at some step no tag of `scene.map` is fully visible.
pub fn generate_trajectory(
    spec: &TrajectorySpec,
    process_noise: &Cov6,
    scene: &Scene,
) -> Result<Trajectory> {
    spec.validate()?;
    let poses: Vec<Pose> = positions_and_headings(spec)
        .into_iter()
        .map(|(p, f)| vehicle_pose_facing(p, f))
        .collect();
    for (step, pose) in poses.iter().enumerate() {
        if visible_tags(pose, &scene.map, scene).next().is_none() {
            return Err(Error::NoTagVisible { step });
        }
    }
    let inputs = poses
        .windows(2)
        .map(|w| MotionInput {
            xi_rel: log_se3(&(w[1] * w[0].inverse())),
            process_noise: *process_noise,
        })
        .collect();
    Ok(Trajectory {
        dt: spec.dt,
        poses,
        inputs,
    })
}

/// Replaces each input by `log(exp(w) exp(xi))` with `w ~ N(0, Q_k)`.
pub fn corrupt_inputs<R: Rng + ?Sized>(
    inputs: &[MotionInput],
    rng: &mut R,
) -> Result<Vec<MotionInput>> {
    inputs
        .iter()
        .map(|input| {
            let w = sample_twist(&input.process_noise, rng)?;
            Ok(MotionInput {
                xi_rel: log_se3(&(exp_se3(&w) * exp_se3(&input.xi_rel))),
                process_noise: input.process_noise,
            })
        })
        .collect()
}

/// Noise-free pixel corners of every tag fully visible from `pose`.
fn visible_tags<'a>(
    pose: &'a Pose,
    map: &'a TagMap,
    scene: &'a Scene,
) -> impl Iterator<Item = (u32, [PixelPoint; 4])> + 'a {
    map.iter().filter_map(move |tag| {
        let cam = tag
            .corners_tag_frame()
            .map(|c| predict_corner_camframe(pose, &scene.calib, &tag.nominal_pose, &c));
        let depths = cam.map(|p| p.z);
        let pixels = cam.map(|p| project(&p, &scene.intr).unwrap_or_default());
        corners_visible(&pixels, &depths, &scene.intr, scene.margin).then_some((tag.id, pixels))
    })
}

/// How pixel measurements are corrupted and what noise level they advertise to the filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelNoise {
    /// Standard deviation of the noise actually added (px). May be zero.
    pub actual: f64,
    /// Standard deviation written into each observation for the filter (px). Must be > 0.
    pub assumed: f64,
}

impl PixelNoise {
    pub fn matched(sigma: f64) -> Self {
        PixelNoise {
            actual: sigma,
            assumed: sigma,
        }
    }
}

/// Per-step observations of `true_map` from `true_poses`.
///
/// A tag is reported only if all four noise-free corners are visible. Two normal variates are
/// drawn per reported corner, in map order.
pub fn synthesize_observations<R: Rng + ?Sized>(
    true_poses: &[Pose],
    true_map: &TagMap,
    scene: &Scene,
    noise: PixelNoise,
    rng: &mut R,
) -> Vec<Vec<TagObservation>> {
    true_poses
        .iter()
        .map(|pose| {
            visible_tags(pose, true_map, scene)
                .map(|(tag_id, pixels)| {
                    let corners = pixels.map(|px| {
                        let du: f64 = rng.sample(StandardNormal);
                        let dv: f64 = rng.sample(StandardNormal);
                        PixelPoint::new(px.u + noise.actual * du, px.v + noise.actual * dv)
                    });
                    TagObservation {
                        tag_id,
                        corners,
                        pixel_sigma: noise.assumed,
                    }
                })
                .collect()
        })
        .collect()
}

/// One timestep of a filter run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunRecord {
    pub t: f64,
    pub true_pose: Pose,
    pub estimated_pose: Pose,
    /// `log(est * true^-1)`, in the tangent space of the filter covariance.
    pub error: Twist,
    /// Diagonal of the filter covariance.
    pub cov_diag: Twist,
    /// Estimated minus true vehicle position, inertial frame (m).
    pub position_error: Vec3,
    /// Standard deviation of the estimated position, inertial frame (m).
    pub position_sigma: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub records: Vec<RunRecord>,
    pub rmse_position: f64,
    pub diverged: bool,
}

/// Everything a filter run consumes, generated once per Monte Carlo iteration and replayed to
/// each filter.
#[derive(Clone, Debug)]
pub struct RunInputs {
    pub dt: f64,
    pub truth: Vec<Pose>,
    pub inputs: Vec<MotionInput>,
    pub observations: Vec<Vec<TagObservation>>,
    pub initial_state: FilterState,
}

impl RunInputs {
    /// SHA-256 over the bit patterns of the inputs, observations and initial state.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        for input in &self.inputs {
            input.xi_rel.iter().copied().for_each(&mut put);
            input.process_noise.iter().copied().for_each(&mut put);
        }
        for step in &self.observations {
            put(step.len() as f64);
            for obs in step {
                put(obs.tag_id as f64);
                put(obs.pixel_sigma);
                for c in &obs.corners {
                    put(c.u);
                    put(c.v);
                }
            }
        }
        self.initial_state
            .pose
            .matrix()
            .iter()
            .copied()
            .for_each(&mut put);
        self.initial_state.cov.iter().copied().for_each(&mut put);
        let bytes = h.finalize();
        let mut out = String::with_capacity(64);
        for b in bytes.iter() {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// Root mean squared 3D position error.
pub fn rmse(errors: impl IntoIterator<Item = Vec3>) -> f64 {
    let (sum, n) = errors
        .into_iter()
        .fold((0.0, 0usize), |(s, n), e| (s + e.norm_squared(), n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Runs the filter over a whole trajectory: correct at step 0, then predict/correct.
pub fn run_filter(
    run: &RunInputs,
    nominal_map: &TagMap,
    scene: &Scene,
    opts: &UpdateOptions,
    divergence_threshold: f64,
) -> Result<RunResult> {
    if run.inputs.len() + 1 != run.truth.len() || run.observations.len() != run.truth.len() {
        return Err(Error::InvalidParameter(format!(
            "misaligned run: {} poses, {} inputs, {} observation steps",
            run.truth.len(),
            run.inputs.len(),
            run.observations.len()
        )));
    }
    let mut records = Vec::with_capacity(run.truth.len());
    let mut state = run.initial_state;
    for (k, truth) in run.truth.iter().enumerate() {
        if k > 0 {
            state = predict(&state, &run.inputs[k - 1]);
        }
        state = correct(
            &state,
            &run.observations[k],
            nominal_map,
            &scene.calib,
            &scene.intr,
            opts,
        )?;
        let truth_state = FilterState::new(*truth, Cov6::zeros());
        records.push(RunRecord {
            t: k as f64 * run.dt,
            true_pose: *truth,
            estimated_pose: state.pose,
            error: log_se3(&(state.pose * truth.inverse())),
            cov_diag: state.cov.diagonal(),
            position_error: state.position() - truth_state.position(),
            position_sigma: state
                .position_covariance()
                .diagonal()
                .map(|v| v.max(0.0).sqrt()),
        });
    }
    let rmse_position = rmse(records.iter().map(|r| r.position_error));
    Ok(RunResult {
        records,
        diverged: !(rmse_position <= divergence_threshold),
        rmse_position,
    })
}

pub const TIMESERIES_HEADER: &str =
    "t,err_x,err_y,err_z,err_rx,err_ry,err_rz,sig_x,sig_y,sig_z,sig_rx,sig_ry,sig_rz";

/// Per-timestep error twist and `sqrt(diag(P))`.
pub fn write_timeseries<W: Write>(records: &[RunRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TIMESERIES_HEADER}")?;
    for r in records {
        write!(out, "{}", r.t)?;
        for v in r.error.iter() {
            write!(out, ",{v}")?;
        }
        for v in r.cov_diag.iter() {
            write!(out, ",{}", v.max(0.0).sqrt())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{vehicle_position, FilterMode};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q() -> Cov6 {
        Cov6::from_diagonal(&Twist::new(2.5e-5, 2.5e-5, 2.5e-5, 2.5e-5, 2.5e-5, 2.5e-5))
    }

    #[test]
    fn straight_line_step_counts() {
        let scene = Scene::default_wall();
        let traj =
            generate_trajectory(&TrajectorySpec::straight_line_default(), &q(), &scene).unwrap();
        assert_eq!(traj.inputs.len(), 240);
        assert_eq!(traj.poses.len(), 241);
        let positions: Vec<Vec3> = traj.poses.iter().map(vehicle_position).collect();
        for (k, w) in positions.windows(2).enumerate() {
            let d = w[1] - w[0];
            assert_relative_eq!(d.norm(), 0.05, epsilon = 1e-12);
            let leg = k / 60;
            let sign = if leg % 2 == 0 { 1.0 } else { -1.0 };
            assert_relative_eq!(d.x, 0.05 * sign, epsilon = 1e-12);
        }
        assert_relative_eq!(positions[0].x, -1.5, epsilon = 1e-12);
        assert_relative_eq!(positions[60].x, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn exact_inputs_replay_truth() {
        let scene = Scene::default_wall();
        for spec in [
            TrajectorySpec::straight_line_default(),
            TrajectorySpec::circle_default(),
        ] {
            let traj = generate_trajectory(&spec, &q(), &scene).unwrap();
            let mut pose = traj.poses[0];
            for (input, truth) in traj.inputs.iter().zip(&traj.poses[1..]) {
                pose = exp_se3(&input.xi_rel) * pose;
                assert_relative_eq!(pose.matrix(), truth.matrix(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn circle_closes() {
        let scene = Scene::default_wall();
        let mut spec = TrajectorySpec::circle_default();
        if let TrajectoryKind::Circle { revolutions, .. } = &mut spec.kind {
            *revolutions = 1;
        }
        let traj = generate_trajectory(&spec, &q(), &scene).unwrap();
        let first = traj.poses.first().unwrap();
        let last = traj.poses.last().unwrap();
        assert_relative_eq!(first.matrix(), last.matrix(), epsilon = 1e-9);
        // radius 1 m around the center, horizontally
        for p in traj.poses.iter().map(vehicle_position) {
            let r = ((p.x).powi(2) + (p.y - 2.5).powi(2)).sqrt();
            assert_relative_eq!(r, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn invisible_trajectory_is_rejected() {
        let scene = Scene::default_wall();
        let spec = TrajectorySpec {
            kind: TrajectoryKind::StraightLine {
                length_m: 3.0,
                repetitions: 1,
                center: [0.0, -2.5, 1.0],
            },
            speed: 0.5,
            dt: 0.1,
        };
        assert!(matches!(
            generate_trajectory(&spec, &q(), &scene),
            Err(Error::NoTagVisible { step: 0 })
        ));
    }

    #[test]
    fn tags_behind_camera_are_not_observed() {
        let scene = Scene::default_wall();
        // facing away from the wall
        let pose = vehicle_pose_facing(Vec3::new(0.0, 2.5, 1.0), Vec3::y());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = synthesize_observations(
            &[pose],
            &scene.map,
            &scene,
            PixelNoise::matched(1.0),
            &mut rng,
        );
        assert!(obs[0].is_empty());
        let facing = vehicle_pose_facing(Vec3::new(0.0, 2.5, 1.0), -Vec3::y());
        let obs = synthesize_observations(
            &[facing],
            &scene.map,
            &scene,
            PixelNoise::matched(1.0),
            &mut rng,
        );
        assert_eq!(obs[0].len(), 3);
    }

    #[test]
    fn pixel_noise_has_requested_std() {
        let scene = Scene::default_wall();
        let pose = vehicle_pose_facing(Vec3::new(0.0, 2.5, 1.0), -Vec3::y());
        let poses = vec![pose; 850];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clean = synthesize_observations(
            &poses[..1],
            &scene.map,
            &scene,
            PixelNoise::matched(0.0),
            &mut rng,
        );
        let noisy = synthesize_observations(
            &poses,
            &scene.map,
            &scene,
            PixelNoise::matched(1.5),
            &mut rng,
        );
        let mut sum_sq = 0.0;
        let mut n = 0;
        for step in &noisy {
            for (obs, base) in step.iter().zip(&clean[0]) {
                for (c, b) in obs.corners.iter().zip(&base.corners) {
                    sum_sq += (c.u - b.u).powi(2) + (c.v - b.v).powi(2);
                    n += 2;
                }
            }
        }
        assert!(n >= 20_000);
        let std = (sum_sq / n as f64).sqrt();
        assert!((std - 1.5).abs() < 0.075, "std {std}");
    }

    fn exact_run(spec: &TrajectorySpec) -> (Scene, RunInputs) {
        let scene = Scene::default_wall();
        let traj = generate_trajectory(spec, &Cov6::zeros(), &scene).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let observations = synthesize_observations(
            &traj.poses,
            &scene.map,
            &scene,
            PixelNoise {
                actual: 0.0,
                assumed: 1.0,
            },
            &mut rng,
        );
        let run = RunInputs {
            dt: traj.dt,
            initial_state: FilterState::new(traj.poses[0], Cov6::identity() * 1e-4),
            truth: traj.poses,
            inputs: traj.inputs,
            observations,
        };
        (scene, run)
    }

    #[test]
    fn noise_free_run_is_exact() {
        let (scene, run) = exact_run(&TrajectorySpec::straight_line_default());
        let res = run_filter(
            &run,
            &scene.map,
            &scene,
            &UpdateOptions::new(FilterMode::Ekf),
            DEFAULT_DIVERGENCE_THRESHOLD,
        )
        .unwrap();
        assert!(res.rmse_position < 1e-3);
        assert!(!res.diverged);
        assert!(res.records.iter().all(|r| r.position_error.norm() < 1e-3));
    }

    #[test]
    fn zero_sigma_modes_agree() {
        let (scene, run) = exact_run(&TrajectorySpec::circle_default());
        let a = run_filter(
            &run,
            &scene.map,
            &scene,
            &UpdateOptions::new(FilterMode::Ekf),
            5.0,
        )
        .unwrap();
        let b = run_filter(
            &run,
            &scene.map,
            &scene,
            &UpdateOptions::new(FilterMode::TieEkf),
            5.0,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rmse_ignores_order() {
        let errs = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
        ];
        let mut rev = errs.clone();
        rev.reverse();
        assert_eq!(rmse(errs.clone()), rmse(rev));
        assert_relative_eq!(rmse(errs), (14.0f64 / 3.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let (scene, mut run) = exact_run(&TrajectorySpec::straight_line_default());
        run.inputs.pop();
        assert!(run_filter(
            &run,
            &scene.map,
            &scene,
            &UpdateOptions::new(FilterMode::Ekf),
            5.0
        )
        .is_err());
    }

    #[test]
    fn timeseries_format() {
        let (scene, run) = exact_run(&TrajectorySpec::straight_line_default());
        let res = run_filter(
            &run,
            &scene.map,
            &scene,
            &UpdateOptions::new(FilterMode::Ekf),
            5.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_timeseries(&res.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TIMESERIES_HEADER);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), res.records.len());
        assert!(rows.iter().all(|r| r.split(',').count() == 13));
    }
}
