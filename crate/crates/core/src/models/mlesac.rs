//! MLESAC model fitting and BIC-penalized segment evidence.
//!
//! Hypotheses are generated from minimal pose samples (rigid: 1, prismatic:
//! 2, revolute: 3), scored by the robust sequence likelihood on a bounded
//! subsample of prediction steps, and the winner is polished with a damped
//! Gauss-Newton pass. The per-segment outlier probability is then fitted by
//! golden-section maximization of the penalized likelihood.

use super::{ln_mixture, log_add_exp, ArticulationModel, ModelKind, NoiseModel};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Knobs for MLESAC fitting and evidence evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    /// Minimal-sample hypotheses to draw.
    pub iterations: usize,
    /// Cap on the number of prediction steps used for hypothesis scoring and
    /// refinement (evenly spaced over the segment). The final evidence always
    /// uses every step.
    pub score_subsample: usize,
    /// Gauss-Newton refinement steps for the best hypothesis.
    pub refine_steps: usize,
    /// Refinement stops when the parameter step norm falls below this.
    pub refine_tol: f64,
    /// Fit the per-segment outlier probability by golden section; when false
    /// the noise model's gamma is used as-is.
    pub fit_gamma: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            iterations: 100,
            score_subsample: 30,
            refine_steps: 10,
            refine_tol: 1e-10,
            fit_gamma: true,
        }
    }
}

/// Result of fitting one model kind to one segment.
#[derive(Debug, Clone)]
pub struct SegmentFit {
    pub model: ArticulationModel,
    /// Fitted (or configured) outlier probability.
    pub gamma: f64,
    /// Robust sequence log-likelihood over the full segment at the fit.
    pub loglik: f64,
    /// `loglik - 0.5 * k_q * ln(segment length)`.
    pub evidence: f64,
}

/// Deterministic per-segment RNG seed, shared by the online filter and the
/// exhaustive oracle so both score identical evidence values.
pub fn segment_seed(master: u64, start: usize, end: usize, kind: ModelKind) -> u64 {
    let mut z = splitmix(master ^ start as u64);
    z = splitmix(z ^ end as u64);
    splitmix(z ^ kind.index() as u64)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fit `kind` to the segment and return the model with its full-segment
/// robust log-likelihood. Deterministic in `seed`.
pub fn fit_mlesac(
    kind: ModelKind,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    seed: u64,
    iterations: usize,
) -> Result<(ArticulationModel, f64)> {
    let settings = FitSettings {
        iterations,
        ..FitSettings::default()
    };
    let model = fit_model(kind, y, actions, noise, &settings, seed)?;
    let loglik = super::sequence_loglik(&model, y, actions, noise)?;
    Ok((model, loglik))
}

/// BIC-penalized segment evidence `ln L = ln p(y | M, θ̂, a) - k_q/2 · ln n`,
/// where `n` is the number of predicted observations. `y[0]` is the anchor
/// (the last observation before the segment, or the first of the series) and
/// is not itself scored.
pub fn model_evidence(
    kind: ModelKind,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    settings: &FitSettings,
    seed: u64,
) -> Result<SegmentFit> {
    let model = fit_model(kind, y, actions, noise, settings, seed)?;
    let terms = gauss_terms(&model, y, actions, noise);
    let gamma = if settings.fit_gamma {
        golden_section_gamma(&terms, noise)
    } else {
        noise.gamma()
    };
    let loglik = mixture_total(&terms, noise, gamma);
    let evidence = loglik - 0.5 * kind.param_count() as f64 * (actions.len() as f64).ln();
    Ok(SegmentFit {
        model,
        gamma,
        loglik,
        evidence,
    })
}

/// Per-step inlier Gaussian log-densities for the whole segment.
pub(crate) fn gauss_terms(
    model: &ArticulationModel,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
) -> Vec<f64> {
    (0..actions.len())
        .map(|k| {
            let pred = model.predict(&y[k], &actions[k]);
            let d = y[k + 1].distance(&pred);
            noise.ln_gauss(d.translational, d.angular)
        })
        .collect()
}

pub(crate) fn mixture_total(terms: &[f64], noise: &NoiseModel, gamma: f64) -> f64 {
    terms.iter().map(|g| ln_mixture(*g, noise, gamma)).sum()
}

/// Maximize the penalized segment likelihood over the outlier probability.
fn golden_section_gamma(terms: &[f64], noise: &NoiseModel) -> f64 {
    let obj = |g: f64| mixture_total(terms, noise, g);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    for _ in 0..60 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = obj(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = obj(x2);
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    // The boundary gamma = 0 is a common maximum; golden section cannot land
    // on it exactly, so compare explicitly.
    if obj(0.0) >= obj(mid) {
        0.0
    } else {
        mid
    }
}

fn fit_model(
    kind: ModelKind,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    settings: &FitSettings,
    seed: u64,
) -> Result<ArticulationModel> {
    if y.len() < kind.min_samples().max(2) {
        return Err(Error::SegmentTooShort {
            got: y.len(),
            need: kind.min_samples().max(2),
        });
    }
    if y.len() != actions.len() + 1 {
        return Err(Error::SeriesMismatch {
            poses: y.len(),
            actions: actions.len(),
        });
    }

    let steps = score_steps(actions.len(), settings.score_subsample);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best: Option<(f64, ArticulationModel)> = None;

    for _ in 0..settings.iterations.max(1) {
        let picks = draw_distinct(&mut rng, y.len(), kind.min_samples());
        let Some(candidate) = hypothesize(kind, &picks, y) else {
            continue;
        };
        let score = score_on(&candidate, y, actions, noise, &steps);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, candidate));
        }
    }

    let (_, model) = best.ok_or(Error::DegenerateFit {
        kind: kind.name(),
        iters: settings.iterations,
    })?;

    // Re-estimate on the whole segment: iteratively reweighted closed-form
    // least squares (the hypothesis only pins the inlier set roughly, so the
    // weights are refreshed from each new model), then a Gauss-Newton polish
    // of the robust objective. Both act on every step so segment evidence
    // reflects the segment-wide maximum likelihood.
    let all_steps: Vec<usize> = (0..actions.len()).collect();
    let mut model = model;
    let mut score = score_on(&model, y, actions, noise, &all_steps);
    for _ in 0..3 {
        let weights = inlier_weights(&model, y, actions, noise, &all_steps);
        let Some(ls) = least_squares_reestimate(&model, y, &weights) else {
            break;
        };
        let ls_score = score_on(&ls, y, actions, noise, &all_steps);
        if ls_score <= score {
            break;
        }
        model = ls;
        score = ls_score;
    }
    Ok(refine(model, y, actions, noise, &all_steps, settings))
}

/// Closed-form weighted re-estimate of the model parameters from the poses.
/// Returns `None` when the geometry is degenerate (flat covariance, collinear
/// circle points), in which case the hypothesis is kept as-is.
fn least_squares_reestimate(
    model: &ArticulationModel,
    y: &[Pose],
    step_weights: &[f64],
) -> Option<ArticulationModel> {
    // Per-pose weights: pose k+1 is vouched for by the step that predicts
    // it. (Splitting weight across both adjacent steps would let outlier
    // poses keep half weight under constant-prediction models.)
    let mut w = vec![0.0; y.len()];
    w[0] = step_weights[0];
    for (k, &sw) in step_weights.iter().enumerate() {
        w[k + 1] = sw;
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return None;
    }

    let centroid: Vector3<f64> = y
        .iter()
        .zip(&w)
        .map(|(p, &wi)| p.translation() * wi)
        .sum::<Vector3<f64>>()
        / total;
    let mean_rot = weighted_quaternion_mean(y.iter().map(|p| p.rotation()).zip(w.iter().copied()))?;

    match model {
        ArticulationModel::Rigid { .. } => Some(ArticulationModel::Rigid {
            offset: Pose::new(centroid, mean_rot),
        }),
        ArticulationModel::Prismatic { .. } => {
            let mut cov = nalgebra::Matrix3::<f64>::zeros();
            for (p, &wi) in y.iter().zip(&w) {
                let d = p.translation() - centroid;
                cov += wi * d * d.transpose();
            }
            let eig = nalgebra::SymmetricEigen::new(cov);
            let imax = eig.eigenvalues.imax();
            if eig.eigenvalues[imax] <= 1e-18 {
                return None;
            }
            let axis_world: Vector3<f64> = eig.eigenvectors.column(imax).into();
            let origin = Pose::new(centroid, mean_rot);
            Some(ArticulationModel::Prismatic {
                origin,
                axis: Unit::new_normalize(mean_rot.inverse() * axis_world),
            })
        }
        ArticulationModel::Revolute { .. } => {
            // Plane of rotation: smallest principal direction of the spread.
            let mut cov = nalgebra::Matrix3::<f64>::zeros();
            for (p, &wi) in y.iter().zip(&w) {
                let d = p.translation() - centroid;
                cov += wi * d * d.transpose();
            }
            let eig = nalgebra::SymmetricEigen::new(cov);
            let imin = eig.eigenvalues.imin();
            let normal: Vector3<f64> = eig.eigenvectors.column(imin).normalize();
            let (b1, b2) = plane_basis(&normal);

            // Weighted Kasa circle fit in plane coordinates.
            let mut a_mat = nalgebra::Matrix3::<f64>::zeros();
            let mut rhs = Vector3::<f64>::zeros();
            for (p, &wi) in y.iter().zip(&w) {
                let d = p.translation() - centroid;
                let (u, v) = (b1.dot(&d), b2.dot(&d));
                let row = Vector3::new(u, v, 1.0);
                a_mat += wi * row * row.transpose();
                rhs += wi * (u * u + v * v) * row;
            }
            let sol = a_mat.lu().solve(&rhs)?;
            let (mut cu, mut cv) = (0.5 * sol[0], 0.5 * sol[1]);
            let r2 = sol[2] + cu * cu + cv * cv;
            if !(r2.is_finite() && r2 > 1e-12) {
                return None;
            }
            let mut radius = r2.sqrt();
            // The algebraic fit shrinks noticeably on short noisy arcs;
            // polish with the geometric objective sum w (|p-c| - r)^2.
            for _ in 0..8 {
                let mut jtj = nalgebra::Matrix3::<f64>::zeros();
                let mut jtr = Vector3::<f64>::zeros();
                for (p, &wi) in y.iter().zip(&w) {
                    let d = p.translation() - centroid;
                    let (du, dv) = (b1.dot(&d) - cu, b2.dot(&d) - cv);
                    let dist = (du * du + dv * dv).sqrt();
                    if dist < 1e-12 {
                        continue;
                    }
                    let row = Vector3::new(-du / dist, -dv / dist, -1.0);
                    jtj += wi * row * row.transpose();
                    jtr += wi * (dist - radius) * row;
                }
                let Some(step) = (jtj + nalgebra::Matrix3::identity() * 1e-12)
                    .lu()
                    .solve(&(-jtr))
                else {
                    break;
                };
                cu += step[0];
                cv += step[1];
                radius += step[2];
                if !(radius.is_finite() && radius > 0.0) {
                    return None;
                }
                if step.norm() < 1e-12 {
                    break;
                }
            }
            let center3 = centroid + b1 * cu + b2 * cv;

            // Orient the spin axis so the weighted mean angle is positive,
            // with the first pose defining angle zero.
            let first_dir = y[0].translation() - center3;
            let x_raw = first_dir - normal * first_dir.dot(&normal);
            if x_raw.norm() < 1e-12 {
                return None;
            }
            let mut z_axis = normal;
            let mut x_axis = x_raw.normalize();
            let mean_angle: f64 = y
                .iter()
                .zip(&w)
                .map(|(p, &wi)| {
                    let d = p.translation() - center3;
                    wi * d.dot(&z_axis.cross(&x_axis)).atan2(d.dot(&x_axis))
                })
                .sum();
            if mean_angle < 0.0 {
                z_axis = -z_axis;
            }
            let y_axis = z_axis.cross(&x_axis);
            x_axis = y_axis.cross(&z_axis);
            let rot = nalgebra::Rotation3::from_basis_unchecked(&[
                x_axis.normalize(),
                y_axis.normalize(),
                z_axis,
            ]);
            let center_rot = UnitQuaternion::from_rotation_matrix(&rot);
            let center = Pose::new(center3, center_rot);

            // Orientation offset: weighted mean of the per-pose residual
            // rotations at their own configurations.
            let probe = ArticulationModel::Revolute {
                center,
                radius,
                orientation_offset: UnitQuaternion::identity(),
            };
            let offset = weighted_quaternion_mean(y.iter().zip(&w).map(|(p, &wi)| {
                let c = probe.inverse_kinematics(p);
                let spin =
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c.0);
                ((center_rot * spin).inverse() * p.rotation(), wi)
            }))?;
            Some(ArticulationModel::Revolute {
                center,
                radius,
                orientation_offset: offset,
            })
        }
    }
}

/// Weighted chordal mean of unit quaternions (principal eigenvector of the
/// weighted outer-product sum).
fn weighted_quaternion_mean(
    items: impl Iterator<Item = (UnitQuaternion<f64>, f64)>,
) -> Option<UnitQuaternion<f64>> {
    let mut m = nalgebra::Matrix4::<f64>::zeros();
    let mut reference: Option<nalgebra::Vector4<f64>> = None;
    let mut total = 0.0;
    for (q, w) in items {
        let c = q.quaternion();
        let mut v = nalgebra::Vector4::new(c.w, c.i, c.j, c.k);
        if let Some(r) = &reference {
            if v.dot(r) < 0.0 {
                v = -v;
            }
        } else {
            reference = Some(v);
        }
        m += w * v * v.transpose();
        total += w;
    }
    if total <= 0.0 {
        return None;
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let imax = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(imax);
    let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
    if q.norm() < 1e-9 {
        return None;
    }
    Some(UnitQuaternion::from_quaternion(q))
}

/// Deterministic orthonormal basis of the plane orthogonal to `n`.
fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = n.cross(&helper).normalize();
    let b2 = n.cross(&b1);
    (b1, b2)
}

/// Evenly spaced prediction-step indices, capped at `cap`.
fn score_steps(n_steps: usize, cap: usize) -> Vec<usize> {
    if cap == 0 || n_steps <= cap {
        (0..n_steps).collect()
    } else {
        (0..cap)
            .map(|j| j * (n_steps - 1) / (cap - 1))
            .collect()
    }
}

fn score_on(
    model: &ArticulationModel,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    steps: &[usize],
) -> f64 {
    steps
        .iter()
        .map(|&k| {
            let pred = model.predict(&y[k], &actions[k]);
            let d = y[k + 1].distance(&pred);
            ln_mixture(noise.ln_gauss(d.translational, d.angular), noise, noise.gamma())
        })
        .sum()
}

fn draw_distinct(rng: &mut StdRng, n: usize, k: usize) -> Vec<usize> {
    let mut picks = Vec::with_capacity(k);
    while picks.len() < k {
        let i = rng.gen_range(0..n);
        if !picks.contains(&i) {
            picks.push(i);
        }
    }
    picks
}

fn hypothesize(kind: ModelKind, picks: &[usize], y: &[Pose]) -> Option<ArticulationModel> {
    match kind {
        ModelKind::Rigid => Some(ArticulationModel::Rigid { offset: y[picks[0]] }),
        ModelKind::Prismatic => {
            let a = &y[picks[0]];
            let b = &y[picks[1]];
            let dir = b.translation() - a.translation();
            if dir.norm() < 1e-9 {
                return None;
            }
            let axis_local = a.rotation().inverse() * dir.normalize();
            Some(ArticulationModel::Prismatic {
                origin: *a,
                axis: Unit::new_normalize(axis_local),
            })
        }
        ModelKind::Revolute => {
            let p1 = y[picks[0]].translation();
            let p2 = y[picks[1]].translation();
            let p3 = y[picks[2]].translation();
            let (center, radius, normal) = circumcircle(&p1, &p2, &p3)?;
            // Orient the axis so the configuration grows from p1 to p2.
            let x_dir = p1 - center;
            if x_dir.norm() < 1e-12 {
                return None;
            }
            let mut z = normal;
            if z.cross(&x_dir).dot(&(p2 - center)) < 0.0 {
                z = -z;
            }
            let x_axis = x_dir.normalize();
            let y_axis = z.cross(&x_axis);
            let rot = nalgebra::Rotation3::from_basis_unchecked(&[x_axis, y_axis, z]);
            let center_rot = UnitQuaternion::from_rotation_matrix(&rot);
            let center_pose = Pose::new(center, center_rot);
            // f(0) must reproduce the first sampled pose's orientation.
            let orientation_offset = center_rot.inverse() * y[picks[0]].rotation();
            Some(ArticulationModel::Revolute {
                center: center_pose,
                radius,
                orientation_offset,
            })
        }
    }
}

/// Circumcircle of three points: center, radius and unit plane normal.
/// `None` for (near-)collinear triples.
fn circumcircle(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    p3: &Vector3<f64>,
) -> Option<(Vector3<f64>, f64, Vector3<f64>)> {
    let u = p2 - p1;
    let v = p3 - p1;
    let n = u.cross(&v);
    let n_norm = n.norm();
    if n_norm < 1e-10 * u.norm() * v.norm() || n_norm < 1e-14 {
        return None;
    }
    let n2 = n_norm * n_norm;
    // Standard barycentric circumcenter formula.
    let center = p1 + (v.norm_squared() * n.cross(&u) + u.norm_squared() * v.cross(&n)) / (2.0 * n2);
    let radius = (p1 - center).norm();
    if !radius.is_finite() {
        return None;
    }
    Some((center, radius, n / n_norm))
}

// ---------------------------------------------------------------------------
// Gauss-Newton refinement on a local parameterization of each model kind.
// ---------------------------------------------------------------------------

fn param_dim(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Rigid => 6,
        ModelKind::Prismatic => 8,
        ModelKind::Revolute => 10,
    }
}

/// Apply a local increment to the model parameters.
fn retract(model: &ArticulationModel, delta: &DVector<f64>) -> ArticulationModel {
    let d3 = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
    match model {
        ArticulationModel::Rigid { offset } => ArticulationModel::Rigid {
            offset: Pose::new(
                offset.translation() + d3(0),
                UnitQuaternion::from_scaled_axis(d3(3)) * offset.rotation(),
            ),
        },
        ArticulationModel::Prismatic { origin, axis } => {
            let (b1, b2) = tangent_basis(axis);
            let w = b1 * delta[6] + b2 * delta[7];
            let new_axis = UnitQuaternion::from_scaled_axis(w) * axis.into_inner();
            ArticulationModel::Prismatic {
                origin: Pose::new(
                    origin.translation() + d3(0),
                    UnitQuaternion::from_scaled_axis(d3(3)) * origin.rotation(),
                ),
                axis: Unit::new_normalize(new_axis),
            }
        }
        ArticulationModel::Revolute {
            center,
            radius,
            orientation_offset,
        } => ArticulationModel::Revolute {
            center: Pose::new(
                center.translation() + d3(0),
                UnitQuaternion::from_scaled_axis(d3(3)) * center.rotation(),
            ),
            radius: (radius + delta[6]).max(0.0),
            orientation_offset: UnitQuaternion::from_scaled_axis(d3(7)) * *orientation_offset,
        },
    }
}

/// Two unit vectors orthogonal to `axis` (deterministic choice).
fn tangent_basis(axis: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let a = axis.into_inner();
    let helper = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vector3::x()
    } else if a.y.abs() <= a.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = a.cross(&helper).normalize();
    let b2 = a.cross(&b1);
    (b1, b2)
}

/// Inlier-weighted residual vector over the scoring steps: one row pair
/// (translation, angle) per step, scaled by sigma and the current mixture
/// posterior of being an inlier.
fn residuals(
    model: &ArticulationModel,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    steps: &[usize],
    weights: &[f64],
) -> DVector<f64> {
    let mut r = DVector::zeros(2 * steps.len());
    for (row, &k) in steps.iter().enumerate() {
        let pred = model.predict(&y[k], &actions[k]);
        let d = y[k + 1].distance(&pred);
        let w = weights[row].sqrt();
        r[2 * row] = w * d.translational / noise.sigma_trans();
        r[2 * row + 1] = w * d.angular / noise.sigma_rot();
    }
    r
}

fn inlier_weights(
    model: &ArticulationModel,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    steps: &[usize],
) -> Vec<f64> {
    let gamma = noise.gamma();
    steps
        .iter()
        .map(|&k| {
            if gamma <= 0.0 {
                return 1.0;
            }
            let pred = model.predict(&y[k], &actions[k]);
            let d = y[k + 1].distance(&pred);
            let ln_in = (1.0 - gamma).ln() + noise.ln_gauss(d.translational, d.angular);
            let ln_out = gamma.ln() - noise.outlier_volume().ln();
            (ln_in - log_add_exp(ln_in, ln_out)).exp()
        })
        .collect()
}

/// Damped Gauss-Newton polish of the best hypothesis, accepting only steps
/// that improve the robust score.
fn refine(
    model: ArticulationModel,
    y: &[Pose],
    actions: &[Pose],
    noise: &NoiseModel,
    steps: &[usize],
    settings: &FitSettings,
) -> ArticulationModel {
    if settings.refine_steps == 0 || steps.is_empty() {
        return model;
    }
    let dim = param_dim(model.kind());
    let mut current = model;
    let mut score = score_on(&current, y, actions, noise, steps);
    let mut lambda = 1e-9;
    let fd_eps = 1e-7;

    for _ in 0..settings.refine_steps {
        let weights = inlier_weights(&current, y, actions, noise, steps);
        let r0 = residuals(&current, y, actions, noise, steps, &weights);
        let mut jac = DMatrix::zeros(r0.len(), dim);
        for col in 0..dim {
            let mut d = DVector::zeros(dim);
            d[col] = fd_eps;
            let perturbed = retract(&current, &d);
            let r1 = residuals(&perturbed, y, actions, noise, steps, &weights);
            jac.set_column(col, &((&r1 - &r0) / fd_eps));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r0;

        let mut accepted = false;
        for _ in 0..5 {
            let mut damped = jtj.clone();
            for i in 0..dim {
                damped[(i, i)] += lambda + 1e-12;
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = retract(&current, &step);
            let cand_score = score_on(&candidate, y, actions, noise, steps);
            if cand_score > score {
                let small = step.norm() < settings.refine_tol;
                current = candidate;
                score = cand_score;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small {
                    return current;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    current
}


