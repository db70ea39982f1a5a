//! Seeded ground-truth trajectory generators.
//!
//! Two desk-scale objects are scripted: a drawer (single prismatic joint,
//! 0.4 m travel) and a microwave-like door (rigid while latched, then
//! revolute with 0.3 m radius). Three demonstration regimes reproduce the
//! evaluation conditions:
//!
//! - `WithGrasp`: clean, information-rich actions along the motion tangent;
//! - `NoActionGaps`: the demonstrator stops acting for extended stretches,
//!   during which the object holds still;
//! - `WithoutGrasp`: push-without-grasp demonstrations in which runs of
//!   steps point mostly orthogonal to the motion axis (the object barely
//!   moves) alternate with effective pushes, under tripled sensor noise.
//!
//! Observations are corrupted with the same Gaussian-plus-uniform mixture
//! the inference assumes. Everything is deterministic per seed.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::models::{ArticulationModel, Configuration, NoiseModel};
use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Scripted object class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    /// Rigid (latched) then revolute.
    MicrowaveLike,
    /// Single prismatic joint.
    DrawerLike,
}

/// Demonstration regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    WithGrasp,
    NoActionGaps,
    WithoutGrasp,
}

/// Zero-action stretches injected in the `NoActionGaps` regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSpec {
    pub count: usize,
    /// Length of each gap in steps.
    pub len: usize,
}

/// Full description of one synthetic demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub object: ObjectKind,
    pub regime: Regime,
    /// Number of observations T.
    pub t_steps: usize,
    /// Sensor corruption applied to the clean poses.
    pub noise: NoiseModel,
    /// Demonstrator hand speed, meters per moving step.
    pub action_magnitude: f64,
    pub gaps: GapSpec,
    /// Mean fraction of steps whose action points orthogonal to the motion
    /// tangent (used only in the `WithoutGrasp` regime).
    pub off_axis_fraction: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps < 40 {
            return Err(Error::InvalidScenario(format!(
                "t_steps must be >= 40, got {}",
                self.t_steps
            )));
        }
        if !(self.action_magnitude.is_finite() && self.action_magnitude > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "action_magnitude must be positive, got {}",
                self.action_magnitude
            )));
        }
        if self.gaps.count * self.gaps.len >= self.t_steps {
            return Err(Error::InvalidScenario(format!(
                "gaps cover {} steps of a {}-step series",
                self.gaps.count * self.gaps.len,
                self.t_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.off_axis_fraction) {
            return Err(Error::InvalidScenario(format!(
                "off_axis_fraction must be in [0,1], got {}",
                self.off_axis_fraction
            )));
        }
        Ok(())
    }

    /// Low-noise grasped drawer demonstration.
    pub fn with_grasp_drawer(seed: u64) -> Self {
        Self {
            object: ObjectKind::DrawerLike,
            regime: Regime::WithGrasp,
            t_steps: 150,
            noise: default_noise(1.0, 0.02),
            action_magnitude: 0.010,
            gaps: GapSpec { count: 0, len: 0 },
            off_axis_fraction: 0.0,
            seed,
        }
    }

    /// Low-noise grasped microwave demonstration (latched, then opened).
    pub fn with_grasp_microwave(seed: u64) -> Self {
        Self {
            object: ObjectKind::MicrowaveLike,
            regime: Regime::WithGrasp,
            t_steps: 200,
            noise: default_noise(1.0, 0.02),
            action_magnitude: 0.010,
            gaps: GapSpec { count: 0, len: 0 },
            off_axis_fraction: 0.0,
            seed,
        }
    }

    /// Brisk drawer demonstration with two long zero-action stretches.
    pub fn no_action_gaps_drawer(seed: u64) -> Self {
        Self {
            object: ObjectKind::DrawerLike,
            regime: Regime::NoActionGaps,
            t_steps: 150,
            noise: default_noise(1.0, 0.02),
            action_magnitude: 0.040,
            gaps: GapSpec { count: 2, len: 30 },
            off_axis_fraction: 0.0,
            seed,
        }
    }

    /// Microwave demonstration with zero-action stretches in the open phase.
    pub fn no_action_gaps_microwave(seed: u64) -> Self {
        Self {
            object: ObjectKind::MicrowaveLike,
            regime: Regime::NoActionGaps,
            t_steps: 200,
            noise: default_noise(1.0, 0.02),
            action_magnitude: 0.030,
            gaps: GapSpec { count: 2, len: 30 },
            off_axis_fraction: 0.0,
            seed,
        }
    }

    /// Push-without-grasp drawer demonstration: tripled noise, mostly
    /// orthogonal pushes.
    pub fn without_grasp_drawer(seed: u64) -> Self {
        Self {
            object: ObjectKind::DrawerLike,
            regime: Regime::WithoutGrasp,
            t_steps: 160,
            noise: default_noise(3.0, 0.02),
            action_magnitude: 0.070,
            gaps: GapSpec { count: 0, len: 0 },
            off_axis_fraction: 0.70,
            seed,
        }
    }
}

/// Base sensor noise: 5 mm / 0.01 rad, scaled by `factor`.
fn default_noise(factor: f64, gamma: f64) -> NoiseModel {
    NoiseModel::new(
        0.005 * factor,
        0.01 * factor,
        gamma,
        5.0,
        NoiseModel::default_outlier_volume(),
    )
    .expect("default noise parameters are valid")
}

/// Ground-truth description of one generated segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrueSegment {
    pub t0: usize,
    pub t1: usize,
    pub model: ArticulationModel,
    pub c_start: f64,
    pub c_end: f64,
}

/// A generated demonstration with its labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledTrajectory {
    pub poses: Vec<Pose>,
    /// `actions[t]` acts between `poses[t]` and `poses[t+1]`.
    pub actions: Vec<Pose>,
    /// Interior changepoint indices (empty for single-model objects).
    pub changepoints: Vec<usize>,
    pub segments: Vec<TrueSegment>,
    pub spec: ScenarioSpec,
    pub schema_version: u32,
}

/// Desk-scale drawer: 0.4 m travel along a tilted axis.
pub fn drawer_truth() -> ArticulationModel {
    let origin = Pose::from_parts(Vector3::new(0.55, -0.20, 0.30), Vector3::z(), 0.35);
    ArticulationModel::Prismatic {
        origin,
        axis: Unit::new_normalize(Vector3::new(1.0, 0.0, 0.05)),
    }
}

/// Desk-scale microwave door: radius 0.3 m, hinge axis tilted slightly off
/// vertical.
pub fn microwave_truth() -> ArticulationModel {
    let center = Pose::from_parts(
        Vector3::new(0.60, 0.25, 0.35),
        Vector3::new(0.05, 1.0, 0.08),
        1.75,
    );
    ArticulationModel::Revolute {
        center,
        radius: 0.3,
        orientation_offset: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.15),
    }
}

/// Configuration at which the microwave latch lets go.
pub const MICROWAVE_LATCH: f64 = 0.05;

const DRAWER_TRAVEL: (f64, f64) = (0.0, 0.40);
const DOOR_SWING: (f64, f64) = (0.20, 1.25);

/// Generate one labeled demonstration.
pub fn generate(spec: &ScenarioSpec) -> Result<LabeledTrajectory> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let clean = match spec.object {
        ObjectKind::DrawerLike => script_drawer(spec, &mut rng),
        ObjectKind::MicrowaveLike => script_microwave(spec, &mut rng),
    };
    let poses = corrupt(&clean.poses, &spec.noise, &mut rng);
    Ok(LabeledTrajectory {
        poses,
        actions: clean.actions,
        changepoints: clean.changepoints,
        segments: clean.segments,
        spec: *spec,
        schema_version: 1,
    })
}

struct CleanTrajectory {
    poses: Vec<Pose>,
    actions: Vec<Pose>,
    changepoints: Vec<usize>,
    segments: Vec<TrueSegment>,
}

/// Step plan shared by both objects: which steps act, and how.
#[derive(Clone, Copy, PartialEq)]
enum StepKind {
    /// Tangential push of full magnitude.
    Drive,
    /// No action at all (gap regime).
    Idle,
    /// Mostly-orthogonal push (without-grasp regime).
    OffAxis,
}

fn plan_steps(spec: &ScenarioSpec, n_steps: usize, rng: &mut StdRng) -> Vec<StepKind> {
    let mut plan = vec![StepKind::Drive; n_steps];
    match spec.regime {
        Regime::WithGrasp => {}
        Regime::NoActionGaps => {
            // Evenly spaced gaps, each `len` long.
            let count = spec.gaps.count;
            for k in 0..count {
                let center = (n_steps * (k + 1)) / (count + 1);
                let start = center.saturating_sub(spec.gaps.len / 2);
                for step in plan.iter_mut().skip(start).take(spec.gaps.len) {
                    *step = StepKind::Idle;
                }
            }
        }
        Regime::WithoutGrasp => {
            // Alternate runs of effective and slipping pushes. Run lengths
            // are drawn so the long-run fraction of off-axis steps matches
            // `off_axis_fraction`.
            let f = spec.off_axis_fraction;
            let mean_drive = 8.0f64;
            let mean_off = if f >= 1.0 {
                n_steps as f64
            } else {
                mean_drive * f / (1.0 - f).max(1e-6)
            };
            let mut t = 0usize;
            let mut driving = rng.gen_bool(1.0 - f);
            while t < n_steps {
                let mean = if driving { mean_drive } else { mean_off };
                let len = (mean * rng.gen_range(0.6..1.4)).round().max(1.0) as usize;
                let kind = if driving {
                    StepKind::Drive
                } else {
                    StepKind::OffAxis
                };
                for step in plan.iter_mut().skip(t).take(len) {
                    *step = kind;
                }
                t += len;
                driving = !driving;
            }
        }
    }
    plan
}

fn script_drawer(spec: &ScenarioSpec, rng: &mut StdRng) -> CleanTrajectory {
    let truth = drawer_truth();
    let plan = plan_steps(spec, spec.t_steps - 1, rng);
    let mut c = 0.02;
    let mut dir = 1.0f64;
    let mut poses = vec![truth.forward_kinematics(Configuration(c))];
    let mut actions = Vec::with_capacity(spec.t_steps - 1);
    let (c_first, mut c_last) = (c, c);

    for kind in plan {
        let pose = *poses.last().unwrap();
        let action = match kind {
            StepKind::Idle => Pose::identity(),
            StepKind::Drive => {
                bounce(c, &mut dir, spec.action_magnitude, DRAWER_TRAVEL);
                tangential_action(&truth, c, dir * spec.action_magnitude)
            }
            StepKind::OffAxis => {
                bounce(c, &mut dir, spec.action_magnitude * 0.05, DRAWER_TRAVEL);
                off_axis_action(&truth, c, dir, spec.action_magnitude, rng)
            }
        };
        let dc = truth.inverse_jacobian_apply(&pose, &action);
        c += dc;
        c_last = c;
        poses.push(truth.forward_kinematics(Configuration(c)));
        actions.push(action);
    }

    let segments = vec![TrueSegment {
        t0: 0,
        t1: spec.t_steps,
        model: truth,
        c_start: c_first,
        c_end: c_last,
    }];
    CleanTrajectory {
        poses,
        actions,
        changepoints: vec![],
        segments,
    }
}

fn script_microwave(spec: &ScenarioSpec, rng: &mut StdRng) -> CleanTrajectory {
    let truth = microwave_truth();
    let cp = spec.t_steps / 2;
    let latched_pose = truth.forward_kinematics(Configuration(MICROWAVE_LATCH));
    let plan = plan_steps(spec, spec.t_steps - 1, rng);

    let mut poses = vec![latched_pose];
    let mut actions = Vec::with_capacity(spec.t_steps - 1);
    let mut c = MICROWAVE_LATCH;
    let mut dir = 1.0f64;
    let dc_drive = spec.action_magnitude / 0.3; // handle speed over door radius
    let mut c_end = c;

    for (t, kind) in plan.into_iter().enumerate() {
        let in_rigid_phase = t + 1 < cp;
        let pose = *poses.last().unwrap();
        if in_rigid_phase {
            // Tugging the latched door: actions happen, nothing moves.
            let action = match kind {
                StepKind::Idle => Pose::identity(),
                _ => random_direction_action(spec.action_magnitude * 0.5, rng),
            };
            poses.push(latched_pose);
            actions.push(action);
            continue;
        }
        let action = match kind {
            StepKind::Idle => Pose::identity(),
            StepKind::Drive => {
                bounce(c, &mut dir, dc_drive, DOOR_SWING);
                tangential_action(&truth, c, dir * spec.action_magnitude)
            }
            StepKind::OffAxis => off_axis_action(&truth, c, dir, spec.action_magnitude, rng),
        };
        let dc = truth.inverse_jacobian_apply(&pose, &action);
        c += dc;
        c_end = c;
        poses.push(truth.forward_kinematics(Configuration(c)));
        actions.push(action);
    }

    let rigid = ArticulationModel::Rigid {
        offset: latched_pose,
    };
    let segments = vec![
        TrueSegment {
            t0: 0,
            t1: cp,
            model: rigid,
            c_start: 0.0,
            c_end: 0.0,
        },
        TrueSegment {
            t0: cp,
            t1: spec.t_steps,
            model: truth,
            c_start: MICROWAVE_LATCH,
            c_end,
        },
    ];
    CleanTrajectory {
        poses,
        actions,
        changepoints: vec![cp],
        segments,
    }
}

/// Reverse direction only when the next step would exit the range in the
/// direction of travel, so starts outside the range walk back into it.
fn bounce(c: f64, dir: &mut f64, step: f64, range: (f64, f64)) {
    let next = c + *dir * step;
    if (*dir > 0.0 && next > range.1) || (*dir < 0.0 && next < range.0) {
        *dir = -*dir;
    }
}

/// Action exactly along the model tangent at configuration `c`, with the
/// given signed magnitude.
fn tangential_action(truth: &ArticulationModel, c: f64, magnitude: f64) -> Pose {
    let j = truth.jacobian(Configuration(c));
    let tangent = j.linear.normalize();
    Pose::new(tangent * magnitude, UnitQuaternion::identity())
}

/// Push of full magnitude pointing (mostly) orthogonal to the tangent: a
/// random perpendicular direction plus a 5% tangential leak.
fn off_axis_action(
    truth: &ArticulationModel,
    c: f64,
    dir: f64,
    magnitude: f64,
    rng: &mut StdRng,
) -> Pose {
    let j = truth.jacobian(Configuration(c));
    let tangent = j.linear.normalize();
    let raw = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let perp = raw - tangent * raw.dot(&tangent);
    let perp = if perp.norm() < 1e-9 {
        tangent.cross(&Vector3::z()).normalize()
    } else {
        perp.normalize()
    };
    let v = perp * magnitude + tangent * (0.05 * dir * magnitude);
    Pose::new(v, UnitQuaternion::identity())
}

fn random_direction_action(magnitude: f64, rng: &mut StdRng) -> Pose {
    let v = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let v = if v.norm() < 1e-9 {
        Vector3::x()
    } else {
        v.normalize()
    };
    Pose::new(v * magnitude, UnitQuaternion::identity())
}

/// Apply the Gaussian-plus-uniform observation mixture to clean poses.
fn corrupt(clean: &[Pose], noise: &NoiseModel, rng: &mut StdRng) -> Vec<Pose> {
    clean
        .iter()
        .map(|p| {
            if rng.gen_bool(noise.gamma()) {
                // Outlier: uniform over a 1 m box around the pose, uniformly
                // random orientation.
                let t = p.translation()
                    + Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    );
                Pose::new(t, random_quaternion(rng))
            } else {
                let t = p.translation()
                    + Vector3::new(
                        gauss(rng, noise.sigma_trans()),
                        gauss(rng, noise.sigma_trans()),
                        gauss(rng, noise.sigma_trans()),
                    );
                let dr = UnitQuaternion::from_scaled_axis(Vector3::new(
                    gauss(rng, noise.sigma_rot()),
                    gauss(rng, noise.sigma_rot()),
                    gauss(rng, noise.sigma_rot()),
                ));
                Pose::new(t, dr * p.rotation())
            }
        })
        .collect()
}

/// Box-Muller standard normal scaled by `sigma`.
fn gauss(rng: &mut StdRng, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_quaternion(rng: &mut StdRng) -> UnitQuaternion<f64> {
    loop {
        let q = Quaternion::new(
            gauss(rng, 1.0),
            gauss(rng, 1.0),
            gauss(rng, 1.0),
            gauss(rng, 1.0),
        );
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_mlesac, ModelKind};

    #[test]
    fn noiseless_with_grasp_drawer_is_a_line() {
        let mut spec = ScenarioSpec::with_grasp_drawer(3);
        spec.noise = NoiseModel::new(1e-12, 1e-12, 0.0, 5.0, 1.0).unwrap();
        let traj = generate(&spec).unwrap();
        assert!(traj.changepoints.is_empty());
        assert_eq!(traj.segments.len(), 1);
        assert_eq!(traj.segments[0].model.kind(), ModelKind::Prismatic);
        let truth = drawer_truth();
        for p in &traj.poses {
            let c = truth.inverse_kinematics(p);
            let on_line = truth.forward_kinematics(c);
            assert!(p.distance(&on_line).translational < 1e-9);
        }
    }

    #[test]
    fn microwave_labels_mark_scripted_changepoint() {
        let spec = ScenarioSpec::with_grasp_microwave(4);
        let traj = generate(&spec).unwrap();
        assert_eq!(traj.changepoints, vec![spec.t_steps / 2]);
        assert_eq!(traj.segments.len(), 2);
        assert_eq!(traj.segments[0].model.kind(), ModelKind::Rigid);
        assert_eq!(traj.segments[1].model.kind(), ModelKind::Revolute);
        // Revolute phase starts at the latch configuration.
        assert!((traj.segments[1].c_start - MICROWAVE_LATCH).abs() < 1e-9);
    }

    #[test]
    fn gap_regime_has_identity_actions_exactly_on_gaps() {
        let spec = ScenarioSpec::no_action_gaps_drawer(5);
        let traj = generate(&spec).unwrap();
        let idle: usize = traj
            .actions
            .iter()
            .filter(|a| a.translation().norm() == 0.0)
            .count();
        assert_eq!(idle, spec.gaps.count * spec.gaps.len);
    }

    #[test]
    fn action_consistency_in_noiseless_data() {
        let mut spec = ScenarioSpec::with_grasp_drawer(6);
        spec.noise = NoiseModel::new(1e-12, 1e-12, 0.0, 5.0, 1.0).unwrap();
        let traj = generate(&spec).unwrap();
        let truth = &traj.segments[0].model;
        for t in 0..traj.actions.len() {
            let pred = truth.predict(&traj.poses[t], &traj.actions[t]);
            assert!(pred.approx_eq(&traj.poses[t + 1], 1e-9), "step {t}");
        }
    }

    #[test]
    fn label_faithfulness_under_refit() {
        let mut spec = ScenarioSpec::with_grasp_drawer(7);
        spec.noise = NoiseModel::new(1e-9, 1e-9, 0.0, 5.0, 1.0).unwrap();
        let traj = generate(&spec).unwrap();
        let seg = &traj.segments[0];
        let n = NoiseModel::new(1e-6, 1e-6, 0.0, 5.0, 1.0).unwrap();
        let (fit, _) = fit_mlesac(
            ModelKind::Prismatic,
            &traj.poses[seg.t0..seg.t1],
            &traj.actions[seg.t0..seg.t1 - 1],
            &n,
            13,
            60,
        )
        .unwrap();
        let (
            ArticulationModel::Prismatic { origin, axis },
            ArticulationModel::Prismatic {
                origin: to,
                axis: ta,
            },
        ) = (&fit, &seg.model)
        else {
            panic!("wrong kinds")
        };
        let axis_fit = origin.rotation() * axis.into_inner();
        let axis_true = to.rotation() * ta.into_inner();
        let angle = axis_fit.dot(&axis_true).abs().min(1.0).acos();
        assert!(angle < 1e-6, "axis error {angle}");
    }

    #[test]
    fn seed_determinism() {
        let spec = ScenarioSpec::without_grasp_drawer(8);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.poses.len(), b.poses.len());
        for (p, q) in a.poses.iter().zip(&b.poses) {
            assert_eq!(p.to_array(), q.to_array());
        }
        for (p, q) in a.actions.iter().zip(&b.actions) {
            assert_eq!(p.to_array(), q.to_array());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ScenarioSpec::with_grasp_drawer(1);
        spec.t_steps = 20;
        assert!(generate(&spec).is_err());

        let mut spec = ScenarioSpec::no_action_gaps_drawer(1);
        spec.gaps = GapSpec { count: 5, len: 40 };
        assert!(generate(&spec).is_err());

        let mut spec = ScenarioSpec::without_grasp_drawer(1);
        spec.off_axis_fraction = 1.5;
        assert!(generate(&spec).is_err());
    }
}
