//! Candidate articulation models and the action-conditional likelihood.
//!
//! Each model maps a scalar configuration to a relative pose (forward
//! kinematics), projects a pose back to the nearest configuration (inverse
//! kinematics), and exposes the tangent of the forward map (Jacobian). The
//! one-step prediction for an observed pose `y` under an applied action `a`
//! is
//!
//! ```text
//! predict(y, a) = fk( ik(y) + J⁻¹ a )
//! ```
//!
//! i.e. the action is projected onto the model's tangent direction at the
//! current configuration and integrated along the manifold. Observations are
//! scored against predictions with a Gaussian-plus-uniform outlier mixture.

mod mlesac;

pub use mlesac::{fit_mlesac, model_evidence, segment_seed, FitSettings, SegmentFit};
pub(crate) use mlesac::gauss_terms as mlesac_gauss_terms;

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseVelocity};
use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tag of an articulation model plus its BIC parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Rigid,
    Prismatic,
    Revolute,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rigid, ModelKind::Prismatic, ModelKind::Revolute];

    /// Free-parameter count `k_q` used by the BIC penalty.
    pub fn param_count(self) -> usize {
        match self {
            ModelKind::Rigid => 6,
            ModelKind::Prismatic => 8,
            ModelKind::Revolute => 9,
        }
    }

    /// Smallest number of poses a minimal MLESAC sample needs.
    pub fn min_samples(self) -> usize {
        match self {
            ModelKind::Rigid => 1,
            ModelKind::Prismatic => 2,
            ModelKind::Revolute => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rigid => "rigid",
            ModelKind::Prismatic => "prismatic",
            ModelKind::Revolute => "revolute",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "rigid" => Some(ModelKind::Rigid),
            "prismatic" => Some(ModelKind::Prismatic),
            "revolute" => Some(ModelKind::Revolute),
            _ => None,
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            ModelKind::Rigid => 0,
            ModelKind::Prismatic => 1,
            ModelKind::Revolute => 2,
        }
    }
}

/// Scalar coordinate on a model's manifold: meters along the prismatic
/// axis, radians about the revolute axis, identically zero for rigid.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Configuration(pub f64);

/// A fitted articulation model: kind plus parameter record.
#[derive(Debug, Clone, PartialEq)]
pub enum ArticulationModel {
    /// Constant relative pose.
    Rigid { offset: Pose },
    /// Translation along a fixed axis. `axis` is a unit vector expressed in
    /// the `origin` frame; the orientation stays that of `origin`.
    Prismatic {
        origin: Pose,
        axis: Unit<Vector3<f64>>,
    },
    /// Rotation about the z-axis of the `center` frame at distance `radius`,
    /// with a fixed orientation offset composed last (so door-like parts
    /// rotate together with the configuration).
    Revolute {
        center: Pose,
        radius: f64,
        orientation_offset: UnitQuaternion<f64>,
    },
}

impl ArticulationModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            ArticulationModel::Rigid { .. } => ModelKind::Rigid,
            ArticulationModel::Prismatic { .. } => ModelKind::Prismatic,
            ArticulationModel::Revolute { .. } => ModelKind::Revolute,
        }
    }

    /// Relative pose at configuration `c`.
    pub fn forward_kinematics(&self, c: Configuration) -> Pose {
        match self {
            ArticulationModel::Rigid { offset } => *offset,
            ArticulationModel::Prismatic { origin, axis } => {
                let step = Pose::new(axis.into_inner() * c.0, UnitQuaternion::identity());
                origin.compose(&step)
            }
            ArticulationModel::Revolute {
                center,
                radius,
                orientation_offset,
            } => {
                let spin = Pose::new(
                    Vector3::zeros(),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c.0),
                );
                let arm = Pose::new(Vector3::new(*radius, 0.0, 0.0), *orientation_offset);
                center.compose(&spin).compose(&arm)
            }
        }
    }

    /// Configuration of the manifold point nearest to `delta`. Total on all
    /// poses; the revolute branch cut resolves to `(-pi, pi]`.
    pub fn inverse_kinematics(&self, delta: &Pose) -> Configuration {
        match self {
            ArticulationModel::Rigid { .. } => Configuration(0.0),
            ArticulationModel::Prismatic { origin, axis } => {
                let local = origin.relative(delta);
                Configuration(axis.dot(&local.translation()))
            }
            ArticulationModel::Revolute {
                center,
                radius,
                orientation_offset,
            } => {
                let local = center.relative(delta);
                let t = local.translation();
                let r_xy = (t.x * t.x + t.y * t.y).sqrt();
                if *radius > 1e-9 && r_xy > 1e-12 {
                    Configuration(t.y.atan2(t.x))
                } else {
                    // Radius-zero joint (or a point on the axis): recover the
                    // angle from the rotation component instead.
                    let spin = local.rotation() * orientation_offset.inverse();
                    Configuration(z_angle(&spin))
                }
            }
        }
    }

    /// Tangent of the forward map at `c`, per unit configuration change.
    pub fn jacobian(&self, c: Configuration) -> PoseVelocity {
        match self {
            ArticulationModel::Rigid { .. } => PoseVelocity {
                linear: Vector3::zeros(),
                angular: Vector3::zeros(),
            },
            ArticulationModel::Prismatic { origin, axis } => PoseVelocity {
                linear: origin.rotation() * axis.into_inner(),
                angular: Vector3::zeros(),
            },
            ArticulationModel::Revolute { center, radius, .. } => {
                let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c.0);
                let radial = spin * Vector3::new(*radius, 0.0, 0.0);
                PoseVelocity {
                    linear: center.rotation() * Vector3::z().cross(&radial),
                    angular: center.rotation() * Vector3::z(),
                }
            }
        }
    }

    /// Least-squares projection of an action onto the tangent direction at
    /// the configuration of `delta`, returning the implied configuration
    /// rate. The translational component of the action is used; the
    /// rotational component only matters for joints whose tangent has no
    /// translational part (radius-zero revolute).
    pub fn inverse_jacobian_apply(&self, delta: &Pose, action: &Pose) -> f64 {
        let c = self.inverse_kinematics(delta);
        let j = self.jacobian(c);
        let lin_sq = j.linear.norm_squared();
        if lin_sq > 1e-18 {
            j.linear.dot(&action.translation()) / lin_sq
        } else {
            let ang_sq = j.angular.norm_squared();
            if ang_sq > 1e-18 {
                j.angular.dot(&action.rotation().scaled_axis()) / ang_sq
            } else {
                0.0
            }
        }
    }

    /// One-step prediction: project `y_prev` onto the manifold, advance the
    /// configuration by the projected action, and map back.
    pub fn predict(&self, y_prev: &Pose, a_prev: &Pose) -> Pose {
        let c = self.inverse_kinematics(y_prev);
        let dc = self.inverse_jacobian_apply(y_prev, a_prev);
        self.forward_kinematics(Configuration(c.0 + dc))
    }

    /// Equivalent model with the configuration axis reversed, i.e.
    /// `reflected.forward_kinematics(c) == self.forward_kinematics(-c)`.
    pub fn reflected(&self) -> ArticulationModel {
        match self {
            ArticulationModel::Rigid { offset } => ArticulationModel::Rigid { offset: *offset },
            ArticulationModel::Prismatic { origin, axis } => ArticulationModel::Prismatic {
                origin: *origin,
                axis: Unit::new_unchecked(-axis.into_inner()),
            },
            ArticulationModel::Revolute {
                center,
                radius,
                orientation_offset,
            } => {
                // Conjugating by a half-turn about x flips the z spin.
                let half_x = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
                ArticulationModel::Revolute {
                    center: Pose::new(center.translation(), center.rotation() * half_x),
                    radius: *radius,
                    orientation_offset: half_x.inverse() * *orientation_offset,
                }
            }
        }
    }
}

/// Best-fit rotation angle about z for a general rotation (Frobenius
/// projection onto the rotz subgroup).
fn z_angle(q: &UnitQuaternion<f64>) -> f64 {
    let m = q.to_rotation_matrix();
    let m = m.matrix();
    (m[(1, 0)] - m[(0, 1)]).atan2(m[(0, 0)] + m[(1, 1)])
}

/// Observation noise and outlier mixture parameters (paper-style robust
/// observation model: Gaussian inliers, uniform outliers with prior weight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma_trans: f64,
    sigma_rot: f64,
    gamma: f64,
    outlier_weight: f64,
    outlier_volume: f64,
}

impl NoiseModel {
    /// `sigma_trans`/`sigma_rot` are standard deviations (m, rad); `gamma`
    /// is the outlier probability; `outlier_weight` the exponential prior
    /// rate `w` in `p(gamma) ∝ exp(-w·gamma)`; `outlier_volume` the support
    /// volume of the uniform outlier density.
    pub fn new(
        sigma_trans: f64,
        sigma_rot: f64,
        gamma: f64,
        outlier_weight: f64,
        outlier_volume: f64,
    ) -> Result<Self> {
        if !(sigma_trans.is_finite() && sigma_trans > 0.0) {
            return Err(Error::InvalidNoiseModel(format!(
                "sigma_trans must be positive, got {sigma_trans}"
            )));
        }
        if !(sigma_rot.is_finite() && sigma_rot > 0.0) {
            return Err(Error::InvalidNoiseModel(format!(
                "sigma_rot must be positive, got {sigma_rot}"
            )));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidNoiseModel(format!(
                "gamma must be in [0,1], got {gamma}"
            )));
        }
        if !(outlier_weight.is_finite() && outlier_weight > 0.0) {
            return Err(Error::InvalidNoiseModel(format!(
                "outlier_weight must be positive, got {outlier_weight}"
            )));
        }
        if !(outlier_volume.is_finite() && outlier_volume > 0.0) {
            return Err(Error::InvalidNoiseModel(format!(
                "outlier_volume must be positive, got {outlier_volume}"
            )));
        }
        Ok(Self {
            sigma_trans,
            sigma_rot,
            gamma,
            outlier_weight,
            outlier_volume,
        })
    }

    /// Default volume: a 1 m³ translational box times the π-radian geodesic
    /// rotation range.
    pub fn default_outlier_volume() -> f64 {
        std::f64::consts::PI
    }

    pub fn sigma_trans(&self) -> f64 {
        self.sigma_trans
    }

    pub fn sigma_rot(&self) -> f64 {
        self.sigma_rot
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn outlier_weight(&self) -> f64 {
        self.outlier_weight
    }

    pub fn outlier_volume(&self) -> f64 {
        self.outlier_volume
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.sigma_trans,
            self.sigma_rot,
            gamma,
            self.outlier_weight,
            self.outlier_volume,
        )
    }

    /// Log normalizer of the inlier Gaussian (3 translational dims plus the
    /// geodesic angle dim).
    pub(crate) fn ln_gauss_norm(&self) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        2.0 * two_pi.ln() + 3.0 * self.sigma_trans.ln() + self.sigma_rot.ln()
    }

    /// Log density of the inlier Gaussian at the given pose discrepancy.
    pub(crate) fn ln_gauss(&self, trans: f64, ang: f64) -> f64 {
        let zt = trans / self.sigma_trans;
        let za = ang / self.sigma_rot;
        -0.5 * (zt * zt + za * za) - self.ln_gauss_norm()
    }
}

/// Log-probability of observing `y` given the model prediction `pred`:
/// mixture of the inlier Gaussian and the uniform outlier density, plus the
/// log outlier-probability prior `-w·gamma`.
pub fn observation_loglik(y: &Pose, pred: &Pose, n: &NoiseModel) -> f64 {
    let d = y.distance(pred);
    ln_mixture(n.ln_gauss(d.translational, d.angular), n, n.gamma)
}

/// Mixture of a Gaussian log-density with the uniform outlier floor at a
/// given gamma, including the `-w·gamma` prior term.
pub(crate) fn ln_mixture(ln_gauss: f64, n: &NoiseModel, gamma: f64) -> f64 {
    let ln_in = if gamma < 1.0 {
        (1.0 - gamma).ln() + ln_gauss
    } else {
        f64::NEG_INFINITY
    };
    let ln_out = if gamma > 0.0 {
        gamma.ln() - n.outlier_volume.ln()
    } else {
        f64::NEG_INFINITY
    };
    log_add_exp(ln_in, ln_out) - n.outlier_weight * gamma
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sum of per-step observation log-probabilities over a segment. `y` must
/// hold one more pose than `actions`; the prediction of `y[k+1]` uses
/// `y[k]` and `actions[k]`.
pub fn sequence_loglik(
    m: &ArticulationModel,
    y: &[Pose],
    actions: &[Pose],
    n: &NoiseModel,
) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::SegmentTooShort {
            got: y.len(),
            need: 2,
        });
    }
    if y.len() != actions.len() + 1 {
        return Err(Error::SeriesMismatch {
            poses: y.len(),
            actions: actions.len(),
        });
    }
    let mut total = 0.0;
    for k in 0..actions.len() {
        let pred = m.predict(&y[k], &actions[k]);
        total += observation_loglik(&y[k + 1], &pred, n);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// JSON shape: {"kind": ..., "theta": {...}, "k_q": ...}
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThetaJson {
    Revolute {
        center: Pose,
        radius: f64,
        orientation_offset: [f64; 4],
    },
    Prismatic {
        origin: Pose,
        axis: [f64; 3],
    },
    Rigid {
        offset: Pose,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    kind: String,
    theta: ThetaJson,
    k_q: usize,
}

impl Serialize for ArticulationModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let theta = match self {
            ArticulationModel::Rigid { offset } => ThetaJson::Rigid { offset: *offset },
            ArticulationModel::Prismatic { origin, axis } => ThetaJson::Prismatic {
                origin: *origin,
                axis: [axis.x, axis.y, axis.z],
            },
            ArticulationModel::Revolute {
                center,
                radius,
                orientation_offset,
            } => {
                let q = orientation_offset.quaternion();
                ThetaJson::Revolute {
                    center: *center,
                    radius: *radius,
                    orientation_offset: [q.w, q.i, q.j, q.k],
                }
            }
        };
        ModelJson {
            kind: self.kind().name().to_string(),
            theta,
            k_q: self.kind().param_count(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ArticulationModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = ModelJson::deserialize(deserializer)?;
        let kind = ModelKind::from_name(&raw.kind)
            .ok_or_else(|| D::Error::custom(format!("unknown model kind {:?}", raw.kind)))?;
        let model = match (kind, raw.theta) {
            (ModelKind::Rigid, ThetaJson::Rigid { offset }) => {
                ArticulationModel::Rigid { offset }
            }
            (ModelKind::Prismatic, ThetaJson::Prismatic { origin, axis }) => {
                let v = Vector3::new(axis[0], axis[1], axis[2]);
                if v.norm() < 1e-9 {
                    return Err(D::Error::custom("prismatic axis must be nonzero"));
                }
                let axis = if (v.norm() - 1.0).abs() <= 1e-9 {
                    Unit::new_unchecked(v)
                } else {
                    Unit::new_normalize(v)
                };
                ArticulationModel::Prismatic { origin, axis }
            }
            (
                ModelKind::Revolute,
                ThetaJson::Revolute {
                    center,
                    radius,
                    orientation_offset: q,
                },
            ) => {
                if !(radius.is_finite() && radius >= 0.0) {
                    return Err(D::Error::custom("revolute radius must be >= 0"));
                }
                let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
                if quat.norm() < 1e-9 {
                    return Err(D::Error::custom("degenerate orientation quaternion"));
                }
                ArticulationModel::Revolute {
                    center,
                    radius,
                    orientation_offset: crate::geometry::unit_quaternion(quat),
                }
            }
            _ => return Err(D::Error::custom("theta record does not match model kind")),
        };
        if raw.k_q != model.kind().param_count() {
            return Err(D::Error::custom(format!(
                "k_q {} does not match kind {:?} (expected {})",
                raw.k_q,
                model.kind().name(),
                model.kind().param_count()
            )));
        }
        Ok(model)
    }
}
