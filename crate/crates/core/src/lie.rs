//! SO(3) / SE(3) matrix Lie group machinery.
//!
//! Twists are ordered `[rho; phi]`: translational part first (meters), rotational part
//! second (radians). Every covariance in the crate uses the same ordering.
//!
//! Uncertain poses use left perturbations, `T = exp(eps^) * T_mean`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix4x6, Matrix6, SymmetricEigen, Vector3, Vector4, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Twist = Vector6<f64>;
pub type Cov6 = Matrix6<f64>;
/// Homogeneous point `[eps; eta]`.
pub type Homogeneous = Vector4<f64>;

/// Angle below which closed-form expressions switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance used when validating rotation matrices and algebra elements.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Eigenvalue floor accepted as "positive semidefinite".
pub const PSD_TOL: f64 = 1e-10;

/// Number of standard normal draws consumed by [`sample_twist`] and
/// [`sample_perturbed`], regardless of the covariance.
pub const DRAWS_PER_SAMPLE: usize = 6;

/// A 3x3 rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix after checking `C C^T = I` and `det C = 1`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m * m.transpose() - Matrix3::identity()).amax();
        let det = m.determinant();
        if !ortho.is_finite() || ortho > STRUCTURE_TOL || (det - 1.0).abs() > STRUCTURE_TOL {
            return Err(Error::NotLieAlgebra("SO(3)"));
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix without validation. Callers guarantee orthonormality.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation about `axis` (need not be unit length) by `angle` radians.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_so3(&(axis * (angle / n)))
    }

    /// Z-Y-X Tait-Bryan angles: `C = Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> Self {
        let rz = exp_so3(&Vec3::new(0.0, 0.0, yaw));
        let ry = exp_so3(&Vec3::new(0.0, pitch, 0.0));
        let rx = exp_so3(&Vec3::new(roll, 0.0, 0.0));
        rz * ry * rx
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// A rigid-body transform `[C r; 0^T 1]` in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose::new(Rotation::identity(), translation)
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Pose::new(rotation, Vec3::zeros())
    }

    /// Validates the rotation block and the bottom row `[0 0 0 1]`.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = Vector4::new(m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0);
        if bottom.amax() > STRUCTURE_TOL {
            return Err(Error::NotLieAlgebra("SE(3)"));
        }
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Pose::new(rotation, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Pose::new(rt, -(rt.rotate(&self.translation)))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Applies the transform to a homogeneous point, preserving its scale `eta`.
    pub fn transform_homogeneous(&self, p: &Homogeneous) -> Homogeneous {
        let eps = Vec3::new(p.x, p.y, p.z);
        let out = self.rotation.rotate(&eps) + self.translation * p.w;
        Vector4::new(out.x, out.y, out.z, p.w)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(
            self.rotation * rhs.rotation,
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phi = log_so3(&self.rotation);
        write!(
            f,
            "Pose(r: [{:.4}, {:.4}, {:.4}], phi: [{:.4}, {:.4}, {:.4}])",
            self.translation.x, self.translation.y, self.translation.z, phi.x, phi.y, phi.z
        )
    }
}

/// Mean pose plus a 6x6 covariance of its left perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertainPose {
    pub mean: Pose,
    pub cov: Cov6,
}

impl UncertainPose {
    pub fn new(mean: Pose, cov: Cov6) -> Self {
        UncertainPose { mean, cov }
    }

    pub fn certain(mean: Pose) -> Self {
        UncertainPose::new(mean, Cov6::zeros())
    }
}

pub fn hat3(phi: &Vec3) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -phi.z, phi.y, //
        phi.z, 0.0, -phi.x, //
        -phi.y, phi.x, 0.0,
    )
}

/// Inverse of [`hat3`]. Rejects matrices that are not antisymmetric within tolerance.
pub fn vee3(m: &Matrix3<f64>) -> Result<Vec3> {
    let asym = (m + m.transpose()).amax();
    if !asym.is_finite() || asym > STRUCTURE_TOL {
        return Err(Error::NotLieAlgebra("so(3)"));
    }
    Ok(vee3_unchecked(m))
}

fn vee3_unchecked(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn split(xi: &Twist) -> (Vec3, Vec3) {
    (
        xi.fixed_rows::<3>(0).into_owned(),
        xi.fixed_rows::<3>(3).into_owned(),
    )
}

fn join(rho: &Vec3, phi: &Vec3) -> Twist {
    Twist::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
}

pub fn hat6(xi: &Twist) -> Matrix4<f64> {
    let (rho, phi) = split(xi);
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&phi));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&rho);
    m
}

/// Inverse of [`hat6`]. Requires an antisymmetric rotation block and a zero bottom row.
pub fn vee6(m: &Matrix4<f64>) -> Result<Twist> {
    let bottom = m.fixed_view::<1, 4>(3, 0).amax();
    if !bottom.is_finite() || bottom > STRUCTURE_TOL {
        return Err(Error::NotLieAlgebra("se(3)"));
    }
    let phi = vee3(&m.fixed_view::<3, 3>(0, 0).into_owned())?;
    let rho = m.fixed_view::<3, 1>(0, 3).into_owned();
    Ok(join(&rho, &phi))
}

/// Rodrigues formula, `C = I + (sin t / t) phi^ + ((1 - cos t) / t^2) phi^ phi^`.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta = phi.norm();
    let k = hat3(phi);
    let k2 = k * k;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, half_versine_ratio(theta))
    };
    Rotation(Matrix3::identity() + k * a + k2 * b)
}

/// Rotation vector with norm in `[0, pi]`.
///
/// At an angle of exactly pi the axis sign is ambiguous; the component with the largest
/// magnitude is made positive.
pub fn log_so3(c: &Rotation) -> Vec3 {
    let m = c.matrix();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // vee((C - C^T) / 2) = sin(theta) * axis
    let s_axis = vee3_unchecked(&((m - m.transpose()) * 0.5));
    let sin = s_axis.norm();
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return s_axis * (1.0 + theta * theta / 6.0);
    }
    if sin > 1e-4 || cos > 0.0 {
        return s_axis * (theta / sin);
    }

    // Near pi: recover the axis from the symmetric part, (C + C^T)/2 - cos I = (1 - cos) a a^T.
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let one_minus_cos = 1.0 - cos;
    let i = (0..3)
        .max_by(|&x, &y| b[(x, x)].total_cmp(&b[(y, y)]))
        .unwrap_or(0);
    let col = b.column(i).into_owned();
    let mut axis = col / (b[(i, i)] * one_minus_cos).max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();

    let alignment = axis.dot(&s_axis);
    if alignment.abs() > 1e-12 {
        if alignment < 0.0 {
            axis = -axis;
        }
    } else {
        let j = axis.iamax();
        if axis[j] < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// `(1 - cos t) / t^2` written as `2 sin^2(t/2) / t^2` to avoid cancellation at small `t`.
fn half_versine_ratio(theta: f64) -> f64 {
    let s = (0.5 * theta).sin() / theta;
    2.0 * s * s
}

/// Left Jacobian of SO(3).
pub fn left_jacobian_so3(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi);
    let k2 = k * k;
    let (a, b) = if theta < SMALL_ANGLE {
        (
            0.5 - theta * theta / 24.0,
            1.0 / 6.0 - theta * theta / 120.0,
        )
    } else {
        (
            half_versine_ratio(theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    };
    Matrix3::identity() + k * a + k2 * b
}

/// Inverse of [`left_jacobian_so3`].
pub fn inv_left_jacobian_so3(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat3(phi);
    let k2 = k * k;
    let b = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k2 * b
}

pub fn exp_se3(xi: &Twist) -> Pose {
    let (rho, phi) = split(xi);
    Pose::new(exp_so3(&phi), left_jacobian_so3(&phi) * rho)
}

/// Inverse of [`exp_se3`] for rotation angles below pi.
pub fn log_se3(t: &Pose) -> Twist {
    let phi = log_so3(&t.rotation);
    let rho = inv_left_jacobian_so3(&phi) * t.translation;
    join(&rho, &phi)
}

/// `Ad(T) = [[C, r^ C], [0, C]]`, so that `T exp(xi^) T^-1 = exp((Ad(T) xi)^)`.
pub fn adjoint(t: &Pose) -> Matrix6<f64> {
    let c = t.rotation.matrix();
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(c);
    ad.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(hat3(&t.translation) * c));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(c);
    ad
}

/// The dot operator: `p^dot = [[eta I, -eps^], [0^T, 0^T]]`, with `xi^ p = p^dot xi`.
pub fn dot_op(p: &Homogeneous) -> Matrix4x6<f64> {
    let eps = Vec3::new(p.x, p.y, p.z);
    let mut m = Matrix4x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * p.w));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat3(&eps)));
    m
}

/// Square-root factor `L` with `L L^T = cov`.
///
/// Diagonal covariances are factored entry by entry so that zero variances stay exactly zero.
/// Otherwise a Cholesky factorization is attempted, falling back to an eigendecomposition with
/// eigenvalues clamped at zero for rank-deficient input.
pub fn covariance_factor(cov: &Cov6) -> Result<Matrix6<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd {
            min_eigenvalue: f64::NAN,
        });
    }
    let asym = (cov - cov.transpose()).amax();
    if asym > STRUCTURE_TOL {
        return Err(Error::InvalidParameter(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }

    let is_diagonal = (0..6).all(|i| (0..6).all(|j| i == j || cov[(i, j)] == 0.0));
    if is_diagonal {
        let d = cov.diagonal();
        if let Some(min) = d.iter().copied().filter(|&v| v < -PSD_TOL).reduce(f64::min) {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        return Ok(Matrix6::from_diagonal(&d.map(|v| v.max(0.0).sqrt())));
    }

    if let Some(chol) = cov.cholesky() {
        return Ok(chol.l());
    }

    let eig = SymmetricEigen::new(*cov);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix6::from_diagonal(&sqrt_vals))
}

/// Draws `eps ~ N(0, cov)`. Always consumes [`DRAWS_PER_SAMPLE`] normal variates.
pub fn sample_twist<R: Rng + ?Sized>(cov: &Cov6, rng: &mut R) -> Result<Twist> {
    let factor = covariance_factor(cov)?;
    let z = Twist::from_fn(|_, _| rng.sample(StandardNormal));
    Ok(factor * z)
}

/// Draws `exp(eps^) * mean` with `eps ~ N(0, cov)`.
///
/// Always consumes [`DRAWS_PER_SAMPLE`] normal variates. With a zero covariance the mean is
/// returned unchanged.
pub fn sample_perturbed<R: Rng + ?Sized>(mean: &Pose, cov: &Cov6, rng: &mut R) -> Result<Pose> {
    let eps = sample_twist(cov, rng)?;
    if eps.iter().all(|&v| v == 0.0) {
        return Ok(*mean);
    }
    Ok(exp_se3(&eps) * *mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist {
        let rho = random_vec3(rng, 3.0);
        let dir = random_vec3(rng, 1.0).normalize();
        let angle = rng.random_range(0.0..max_angle);
        join(&rho, &(dir * angle))
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        exp_se3(&random_twist(rng, 3.0))
    }

    fn series_exp(m: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for n in 1..=terms {
            term = term * m / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn hat3_examples() {
        assert_eq!(hat3(&Vec3::zeros()), Matrix3::zeros());
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(hat3(&Vec3::new(0.0, 0.0, 1.0)), expected);
    }

    #[test]
    fn hat3_is_cross_product_and_anticommutes() {
        let mut rng = rng();
        for _ in 0..100 {
            let a = random_vec3(&mut rng, 2.0);
            let b = random_vec3(&mut rng, 2.0);
            assert_relative_eq!(hat3(&a) * b, a.cross(&b), epsilon = 1e-14);
            assert_relative_eq!(hat3(&a) * b, -(hat3(&b) * a), epsilon = 1e-14);
        }
    }

    #[test]
    fn hat6_layout() {
        assert_eq!(hat6(&Twist::zeros()), Matrix4::zeros());
        let m = hat6(&Twist::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let mut expected = Matrix4::zeros();
        expected[(0, 3)] = 1.0;
        assert_eq!(m, expected);
    }

    #[test]
    fn vee_roundtrips() {
        let mut rng = rng();
        assert_eq!(vee3(&hat3(&Vec3::zeros())).unwrap(), Vec3::zeros());
        let z = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(vee3(&hat3(&z)).unwrap(), z);
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 3.0);
            assert_eq!(vee6(&hat6(&xi)).unwrap(), xi);
            let phi = random_vec3(&mut rng, 3.0);
            assert_eq!(vee3(&hat3(&phi)).unwrap(), phi);
        }
    }

    #[test]
    fn vee_rejects_malformed() {
        assert!(vee3(&Matrix3::identity()).is_err());
        let mut m = hat6(&Twist::new(1.0, 2.0, 3.0, 0.1, 0.2, 0.3));
        m[(3, 3)] = 1.0;
        assert!(vee6(&m).is_err());
    }

    #[test]
    fn exp_so3_quarter_turn_matches_series() {
        let phi = Vec3::new(0.0, 0.0, PI / 2.0);
        let c = exp_so3(&phi);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*c.matrix(), expected, epsilon = 1e-15);
        let series = series_exp(&hat6(&join(&Vec3::zeros(), &phi)), 20);
        assert_relative_eq!(
            series.fixed_view::<3, 3>(0, 0).into_owned(),
            *c.matrix(),
            epsilon = 1e-12
        );
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Matrix3::identity());
    }

    #[test]
    fn exp_so3_inverse_symmetry() {
        let mut rng = rng();
        for _ in 0..100 {
            let phi = random_vec3(&mut rng, 2.0);
            let prod = exp_so3(&phi) * exp_so3(&-phi);
            assert_relative_eq!(*prod.matrix(), Matrix3::identity(), epsilon = 1e-14);
            assert!(Rotation::from_matrix(*exp_so3(&phi).matrix()).is_ok());
        }
    }

    #[test]
    fn log_so3_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
        let phi = Vec3::new(0.1, -0.2, 0.3);
        assert_relative_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-10);

        let half_turn =
            Rotation::from_matrix(Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0))
                .unwrap();
        let out = log_so3(&half_turn);
        assert_relative_eq!(out, Vec3::new(0.0, 0.0, PI), epsilon = 1e-12);
        assert_relative_eq!(
            *exp_so3(&out).matrix(),
            *half_turn.matrix(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_so3_at_pi_prefers_positive_major_component() {
        for axis in [
            Vec3::new(-1.0, 0.2, 0.1),
            Vec3::new(0.3, -2.0, 0.5),
            Vec3::new(0.1, 0.1, -1.0),
        ] {
            let c = exp_so3(&(axis.normalize() * PI));
            let out = log_so3(&c);
            assert_relative_eq!(out.norm(), PI, epsilon = 1e-9);
            assert!(out[out.iamax()] > 0.0);
            assert_relative_eq!(*exp_so3(&out).matrix(), *c.matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn log_so3_near_pi_keeps_sign() {
        let phi = Vec3::new(0.0, -1.0, 0.0) * (PI - 1e-6);
        let out = log_so3(&exp_so3(&phi));
        assert_relative_eq!(out, phi, epsilon = 1e-8);
    }

    #[test]
    fn exp_se3_examples() {
        assert_eq!(exp_se3(&Twist::zeros()), Pose::identity());
        let t = exp_se3(&Twist::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0));
        assert_eq!(t.translation, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(*t.rotation.matrix(), Matrix3::identity());
    }

    #[test]
    fn se3_roundtrip() {
        let mut rng = rng();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let xi = random_twist(&mut rng, 3.0);
            worst = worst.max((log_se3(&exp_se3(&xi)) - xi).amax());
        }
        assert!(worst < 1e-9, "worst roundtrip error {worst:e}");
    }

    #[test]
    fn exp_se3_matches_series() {
        let mut rng = rng();
        for _ in 0..200 {
            let mut xi = Twist::from_fn(|_, _| rng.random_range(-1.0..1.0));
            xi *= rng.random_range(0.0..2.0) / xi.norm();
            let series = series_exp(&hat6(&xi), 30);
            assert_relative_eq!(exp_se3(&xi).matrix(), series, epsilon = 1e-10);
        }
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        for theta in [1e-9, 1e-8, 2e-8, 1e-6] {
            let phi = Vec3::new(0.3, -0.4, 0.5).normalize() * theta;
            let c = exp_so3(&phi);
            assert_relative_eq!(log_so3(&c), phi, epsilon = 1e-15);
            let j = left_jacobian_so3(&phi) * inv_left_jacobian_so3(&phi);
            assert_relative_eq!(j, Matrix3::identity(), epsilon = 1e-14);
        }
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(adjoint(&Pose::identity()), Matrix6::identity());
        let r = Vec3::new(1.0, -2.0, 0.5);
        let ad = adjoint(&Pose::from_translation(r));
        let mut expected = Matrix6::identity();
        expected.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat3(&r));
        assert_eq!(ad, expected);
    }

    #[test]
    fn adjoint_transports_twists() {
        let mut rng = rng();
        for _ in 0..100 {
            let t = random_pose(&mut rng);
            let xi = random_twist(&mut rng, 2.0);
            let lhs = t * exp_se3(&xi) * t.inverse();
            let rhs = exp_se3(&(adjoint(&t) * xi));
            assert_relative_eq!(lhs.matrix(), rhs.matrix(), epsilon = 1e-8);
        }
    }

    #[test]
    fn dot_op_examples() {
        let d = dot_op(&Homogeneous::new(0.0, 0.0, 0.0, 1.0));
        let mut expected = Matrix4x6::zeros();
        expected
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        assert_eq!(d, expected);

        let d = dot_op(&Homogeneous::new(1.0, 2.0, 3.0, 1.0));
        assert_eq!(
            d.fixed_view::<3, 3>(0, 3).into_owned(),
            -hat3(&Vec3::new(1.0, 2.0, 3.0))
        );
    }

    #[test]
    fn dot_op_identity() {
        let mut rng = rng();
        for _ in 0..100 {
            let xi = random_twist(&mut rng, 3.0);
            let p = Homogeneous::from_fn(|_, _| rng.random_range(-5.0..5.0));
            assert_relative_eq!(hat6(&xi) * p, dot_op(&p) * xi, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_inverse_and_matrix() {
        let mut rng = rng();
        for _ in 0..50 {
            let t = random_pose(&mut rng);
            assert_relative_eq!(
                (t * t.inverse()).matrix(),
                Matrix4::identity(),
                epsilon = 1e-9
            );
            let back = Pose::from_matrix(&t.matrix()).unwrap();
            assert_eq!(back, t);
        }
        assert!(Rotation::from_matrix(Matrix3::identity() * 2.0).is_err());
    }

    #[test]
    fn zero_covariance_returns_mean_and_fixed_draws() {
        let mean = Pose::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let mut a = rng();
        let mut b = rng();
        let out = sample_perturbed(&mean, &Cov6::zeros(), &mut a).unwrap();
        assert_eq!(out, mean);
        for _ in 0..DRAWS_PER_SAMPLE {
            let _: f64 = b.sample(StandardNormal);
        }
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn rank_deficient_sampling_respects_mask() {
        let cov = Cov6::from_diagonal(&Twist::new(0.0004, 0.0, 0.0004, 0.0, 0.0, 0.0));
        let mut rng = rng();
        let n = 10_000;
        let mut sum = Vec3::zeros();
        let mut sum_sq = Vec3::zeros();
        for _ in 0..n {
            let p = sample_perturbed(&Pose::identity(), &cov, &mut rng).unwrap();
            assert_eq!(p.translation.y, 0.0);
            assert_eq!(*p.rotation.matrix(), Matrix3::identity());
            sum += p.translation;
            sum_sq += p.translation.component_mul(&p.translation);
        }
        for axis in [0, 2] {
            let mean = sum[axis] / n as f64;
            let std = (sum_sq[axis] / n as f64 - mean * mean).sqrt();
            assert!((std - 0.02).abs() < 0.002, "axis {axis} std {std}");
        }
    }

    #[test]
    fn sampled_covariance_matches() {
        let mut rng = rng();
        let a = Matrix6::from_fn(|_, _| rng.random_range(-0.1..0.1));
        let cov = a * a.transpose() + Matrix6::identity() * 1e-3;
        let mean = random_pose(&mut rng);
        let n = 100_000;
        let mut acc = Matrix6::zeros();
        for _ in 0..n {
            let sample = sample_perturbed(&mean, &cov, &mut rng).unwrap();
            let e = log_se3(&(sample * mean.inverse()));
            acc += e * e.transpose();
        }
        acc /= n as f64;
        for i in 0..6 {
            let rel = (acc[(i, i)] - cov[(i, i)]).abs() / cov[(i, i)];
            assert!(rel < 0.05, "slot {i}: {} vs {}", acc[(i, i)], cov[(i, i)]);
        }
        let scale = cov.diagonal().max();
        assert!((acc - cov).amax() < 0.05 * scale);
    }

    #[test]
    fn non_psd_is_rejected() {
        let mut cov = Cov6::identity();
        cov[(0, 1)] = 2.0;
        cov[(1, 0)] = 2.0;
        assert!(matches!(covariance_factor(&cov), Err(Error::NotPsd { .. })));
        let neg = Cov6::from_diagonal(&Twist::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(sample_twist(&neg, &mut rng()).is_err());
    }
}
