//! Rigid-body pose algebra.
//!
//! A [`Pose`] is a translation plus a unit quaternion. Composition,
//! relative transforms and inversion follow the usual homogeneous-matrix
//! semantics (`a.compose(b)` equals the matrix product `A * B`), but the
//! quaternion representation avoids re-orthonormalization drift.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Rigid transform: translation (meters) plus unit rotation quaternion.
///
/// Invariants maintained by every constructor and operation:
/// - quaternion norm is 1 (within 1e-9),
/// - the scalar part is non-negative (double-cover canonicalization), so
///   equality checks and serialization are deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

/// Separation between two poses: Euclidean translation distance plus the
/// geodesic quaternion angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDistance {
    /// Meters.
    pub translational: f64,
    /// Radians, in `[0, pi]`.
    pub angular: f64,
}

/// Tangent displacement of a pose per unit change of a scalar parameter.
///
/// Both components are expressed in the parent (world) frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVelocity {
    /// Meters per unit parameter.
    pub linear: Vector3<f64>,
    /// Axis-scaled angular rate, radians per unit parameter.
    pub angular: Vector3<f64>,
}

impl Pose {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation: canonicalize(rotation),
        }
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Pose with the given translation and a rotation of `angle` radians
    /// about `axis` (normalized internally).
    pub fn from_parts(translation: Vector3<f64>, axis: Vector3<f64>, angle: f64) -> Self {
        let rotation = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self::new(translation, rotation)
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    /// Motion composition: `self` followed by `other` (homogeneous-matrix
    /// product of the two transforms).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.translation + self.rotation * other.translation,
            self.rotation * other.rotation,
        )
    }

    /// Inverse transform: `p.compose(&p.inverse())` is the identity.
    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose::new(-(inv_rot * self.translation), inv_rot)
    }

    /// Relative transform from `self` to `other`: `self⁻¹ · other`, so that
    /// `self.compose(&self.relative(other)) == *other`.
    pub fn relative(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Rotate-then-shift a point from the local frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }

    /// Translation distance and geodesic rotation angle between two poses.
    pub fn distance(&self, other: &Pose) -> PoseDistance {
        PoseDistance {
            translational: (self.translation - other.translation).norm(),
            angular: quaternion_angle(&self.rotation, &other.rotation),
        }
    }

    /// Componentwise closeness test used throughout the test suites.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        let d = self.distance(other);
        d.translational <= tol && d.angular <= tol
    }

    /// Serialization layout: `[tx, ty, tz, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    /// Parse from the `[tx, ty, tz, qw, qx, qy, qz]` layout. The quaternion
    /// is renormalized; a near-zero quaternion is rejected. Already-unit
    /// quaternions are taken bit-exactly so parse/serialize round trips.
    pub fn from_array(v: &[f64; 7]) -> Option<Self> {
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        if q.norm() < 1e-9 || v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some(Self::new(
            Vector3::new(v[0], v[1], v[2]),
            unit_quaternion(q),
        ))
    }
}

/// Geodesic angle `2·acos(|<qa, qb>|)` between two unit quaternions,
/// evaluated in the numerically stable `atan2` form (the `acos` form loses
/// eight digits near zero).
pub fn quaternion_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let qa = a.quaternion();
    let qb = b.quaternion();
    let qb = if qa.dot(qb) < 0.0 { -*qb } else { *qb };
    let diff = (qa - qb).norm();
    let sum = (qa + qb).norm();
    4.0 * diff.atan2(sum)
}

/// Wrap a raw quaternion, renormalizing only when it is not already unit
/// within 1e-9 (renormalizing an exact-unit value would perturb its bits).
pub(crate) fn unit_quaternion(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    if (q.norm() - 1.0).abs() <= 1e-9 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    }
}

/// Flip the sign of the whole quaternion so the scalar part is >= 0. When the
/// scalar part is exactly zero the first nonzero vector component is made
/// positive, keeping the representative unique.
fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.quaternion();
    let flip = if c.w < 0.0 {
        true
    } else if c.w == 0.0 {
        let v = [c.i, c.j, c.k];
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    } else {
        false
    };
    if flip {
        UnitQuaternion::new_unchecked(-c)
    } else {
        q
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <[f64; 7]>::deserialize(deserializer)?;
        Pose::from_array(&v).ok_or_else(|| D::Error::custom("invalid pose: degenerate quaternion"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    // Independent 4x4 homogeneous-matrix oracle. Kept free of Pose's own
    // compose/inverse so the algebra is checked against a second route.
    fn to_matrix(p: &Pose) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&p.rotation().to_rotation_matrix().into_inner());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation());
        m
    }

    fn matrices_close(a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64) -> bool {
        (a - b).iter().all(|x| x.abs() <= tol)
    }

    fn random_pose(rng: &mut StdRng) -> Pose {
        let t = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-3.0..3.0);
        if axis.norm() < 1e-6 {
            Pose::from_translation(t.x, t.y, t.z)
        } else {
            Pose::from_parts(t, axis, angle)
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            assert!(Pose::identity().compose(&p).approx_eq(&p, 1e-9));
            assert!(p.compose(&p.inverse()).approx_eq(&Pose::identity(), 1e-9));
        }
    }

    #[test]
    fn compose_matches_matrix_product() {
        // Derived case from the 4x4 oracle: (trans + 90deg about z) * (trans).
        let a = Pose::from_parts(
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::z(),
            std::f64::consts::FRAC_PI_2,
        );
        let b = Pose::from_translation(1.0, 0.0, 0.0);
        let c = a.compose(&b);
        assert!((c.translation() - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(
            c.rotation()
                .angle_to(&UnitQuaternion::from_axis_angle(
                    &Vector3::z_axis(),
                    std::f64::consts::FRAC_PI_2
                ))
                .abs()
                < 1e-12
        );

        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let oracle = to_matrix(&a) * to_matrix(&b);
            assert!(matrices_close(&to_matrix(&a.compose(&b)), &oracle, 1e-9));
        }
    }

    #[test]
    fn inverse_matches_matrix_oracle() {
        let p = Pose::from_translation(1.0, 2.0, 3.0);
        let inv = p.inverse();
        assert!((inv.translation() - Vector3::new(-1.0, -2.0, -3.0)).norm() < 1e-12);

        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let oracle = to_matrix(&p).try_inverse().unwrap();
            assert!(matrices_close(&to_matrix(&p.inverse()), &oracle, 1e-9));
            assert!(p.inverse().inverse().approx_eq(&p, 1e-9));
        }
    }

    #[test]
    fn relative_transform() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            assert!(a.relative(&a).approx_eq(&Pose::identity(), 1e-9));
            assert!(Pose::identity().relative(&b).approx_eq(&b, 1e-9));
            // adjunction: a ∘ (a ⊖ b) = b
            assert!(a.compose(&a.relative(&b)).approx_eq(&b, 1e-9));
        }
        let p = Pose::from_translation(1.0, 0.0, 0.0);
        let q = Pose::from_translation(2.0, 0.0, 0.0);
        assert!(p
            .relative(&q)
            .approx_eq(&Pose::from_translation(1.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn associativity() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..1000 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!(left.approx_eq(&right, 1e-9));
        }
    }

    #[test]
    fn distance_basics() {
        let p = Pose::from_parts(Vector3::new(0.3, -0.1, 2.0), Vector3::y(), 0.7);
        let d = p.distance(&p);
        assert_eq!(d.translational, 0.0);
        assert!(d.angular < 1e-9);

        // Antipodal rotation: 180 degrees about x.
        let flip = Pose::from_parts(Vector3::zeros(), Vector3::x(), std::f64::consts::PI);
        let d = Pose::identity().distance(&flip);
        assert!(d.translational < 1e-12);
        assert!((d.angular - std::f64::consts::PI).abs() < 1e-9);

        // 3-4-5 triangle.
        let d = Pose::identity().distance(&Pose::from_translation(3.0, 4.0, 0.0));
        assert!((d.translational - 5.0).abs() < 1e-12);
        assert!(d.angular < 1e-12);
    }

    #[test]
    fn distance_symmetric_triangle() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..1000 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            let dab = a.distance(&b);
            let dba = b.distance(&a);
            assert!((dab.translational - dba.translational).abs() < 1e-12);
            assert!((dab.angular - dba.angular).abs() < 1e-12);
            assert!(dab.translational >= 0.0 && dab.angular >= 0.0);
            assert!(dab.angular <= std::f64::consts::PI + 1e-12);
            let dac = a.distance(&c);
            let dcb = c.distance(&b);
            assert!(dab.translational <= dac.translational + dcb.translational + 1e-9);
            assert!(dab.angular <= dac.angular + dcb.angular + 1e-9);
        }
    }

    #[test]
    fn canonical_scalar_part() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..500 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = a.compose(&b);
            assert!(c.rotation().quaternion().w >= 0.0);
            assert!((c.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_serde_roundtrip() {
        let p = Pose::from_parts(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, -1.0), 1.1);
        let json = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert!(p.approx_eq(&back, 1e-12));
        assert!(serde_json::from_str::<Pose>("[0,0,0,0,0,0,0]").is_err());
    }
}
