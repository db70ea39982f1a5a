//! Online MAP changepoint detection over articulation models.
//!
//! The filter follows the Fearnhead-Liu recursion: a particle per candidate
//! segment start `s` and model kind carries
//!
//! ```text
//! P_t(s, M) = (1 - B(t-s-1)) · L(s,t,M) · p(M) · P_s^MAP
//! P_t^MAP   = max_{s,M}  β(t-s) · L(s,t,M) · p(M) · P_s^MAP
//! ```
//!
//! with `β`/`B` the segment-length prior and `L` the BIC-penalized segment
//! evidence. All arithmetic is in log space. When the number of candidate
//! starts exceeds the particle budget, stratified optimal resampling picks
//! the survivors; surviving particles keep their exact scores so the Viterbi
//! backtrace stays sharp. [`exhaustive_map`] is the O(n²) exact oracle over
//! the same evidence values.

mod resample;

pub use resample::{stratified_optimal_resample, Survivor};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::models::{
    self, model_evidence, segment_seed, ArticulationModel, FitSettings, ModelKind, NoiseModel,
};
use serde::{Deserialize, Serialize};

/// Uniform prior over the three candidate kinds.
const LN_MODEL_PRIOR: f64 = -1.0986122886681098; // ln(1/3)

/// Truncated geometric prior over segment lengths.
///
/// `beta(len) ∝ p·(1-p)^(len-min_len)` on `[min_len, max_len]`, normalized to
/// sum to one; `B` is its CDF and `1-B` the survival function used by the
/// filtering weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLengthPrior {
    p: f64,
    min_len: usize,
    max_len: usize,
}

impl SegmentLengthPrior {
    pub fn new(p: f64, min_len: usize, max_len: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidPrior(format!("p must be in (0,1), got {p}")));
        }
        if min_len < 2 {
            return Err(Error::InvalidPrior(format!(
                "min_len must be >= 2, got {min_len}"
            )));
        }
        if max_len < min_len {
            return Err(Error::InvalidPrior(format!(
                "max_len {max_len} < min_len {min_len}"
            )));
        }
        Ok(Self { p, min_len, max_len })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn min_len(&self) -> usize {
        self.min_len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn ln_norm(&self) -> f64 {
        // 1 - (1-p)^(max-min+1)
        let q = 1.0 - self.p;
        let span = (self.max_len - self.min_len + 1) as f64;
        (-(span * q.ln()).exp()).ln_1p()
    }

    /// `ln β(len)`; `-inf` outside `[min_len, max_len]`.
    pub fn ln_beta(&self, len: usize) -> f64 {
        if len < self.min_len || len > self.max_len {
            return f64::NEG_INFINITY;
        }
        let q = 1.0 - self.p;
        self.p.ln() + (len - self.min_len) as f64 * q.ln() - self.ln_norm()
    }

    /// `ln(1 - B(len))`: log-probability that a segment is longer than `len`.
    pub fn ln_survival(&self, len: usize) -> f64 {
        if len < self.min_len {
            return 0.0;
        }
        if len >= self.max_len {
            return f64::NEG_INFINITY;
        }
        // 1 - B(len) = (q^(len-min+1) - q^(max-min+1)) / norm
        let q_ln = (1.0 - self.p).ln();
        let a = (len - self.min_len + 1) as f64 * q_ln;
        let b = (self.max_len - self.min_len + 1) as f64 * q_ln;
        a + (-((b - a).exp())).ln_1p() - self.ln_norm()
    }
}

impl Default for SegmentLengthPrior {
    fn default() -> Self {
        Self {
            p: 0.01,
            min_len: 10,
            max_len: 10_000,
        }
    }
}

/// Whether segment evidence conditions on the recorded actions or on zero
/// actions throughout (the observation-only baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    ActionConditional,
    ObservationOnly,
}

/// Filter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectSettings {
    /// Particle budget over candidate segment starts.
    pub max_particles: usize,
    /// A particle's segment is refit from scratch every `refit_stride` grown
    /// steps; in between, evidence is extended incrementally at the frozen
    /// fit. Stride 1 reproduces the exhaustive oracle's evidence exactly.
    pub refit_stride: usize,
    pub mode: InferenceMode,
    pub fit: FitSettings,
    pub seed: u64,
}

impl Default for DetectSettings {
    fn default() -> Self {
        Self {
            max_particles: 100,
            refit_stride: 10,
            mode: InferenceMode::ActionConditional,
            fit: FitSettings::default(),
            seed: 0,
        }
    }
}

/// One support point of the filter: candidate segment start `s` under one
/// model kind.
#[derive(Debug, Clone)]
pub struct Particle {
    /// Candidate previous-changepoint time.
    pub start: usize,
    pub kind: ModelKind,
    /// `ln P_t(s, M)` as of the latest step, `-inf` while unfit.
    pub log_p: f64,
    /// Cached MAP prefix value `ln P_s^MAP`, frozen when the particle is born.
    pub map_prefix: f64,
    fit: Option<RunningFit>,
}

#[derive(Debug, Clone)]
struct RunningFit {
    model: ArticulationModel,
    gamma: f64,
    /// Per-step inlier Gaussian log-densities over the segment so far.
    gauss: Vec<f64>,
    loglik: f64,
    /// BIC-penalized `ln L(s, t, M)`.
    evidence: f64,
}

/// One segment of a MAP segmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// First observation index of the segment.
    pub t0: usize,
    /// One past the last observation index.
    pub t1: usize,
    pub model: ArticulationModel,
    /// BIC-penalized segment evidence `ln L`.
    pub log_evidence: f64,
}

/// MAP segmentation of a series: changepoint times plus per-segment models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segmentation {
    /// `[0, τ_1, ..., T]`: segment k covers observations `[tau[k], tau[k+1])`.
    pub tau: Vec<usize>,
    pub segments: Vec<SegmentRecord>,
    /// Total log MAP score (sum of `ln β + ln p(M) + ln L` over segments).
    pub log_map_score: f64,
    pub schema_version: u32,
}

impl Segmentation {
    pub fn changepoints(&self) -> &[usize] {
        &self.tau[1..self.tau.len() - 1]
    }

    pub fn kinds(&self) -> Vec<ModelKind> {
        self.segments.iter().map(|s| s.model.kind()).collect()
    }
}

/// A segmentation re-expressed in model space: configuration ranges instead
/// of time indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationalSegmentation {
    pub tuples: Vec<ConfigSegment>,
}

/// Start and end configuration of one local model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigSegment {
    pub c_start: f64,
    pub c_end: f64,
    pub model: ArticulationModel,
}

/// Online MAP changepoint detection with a particle budget.
pub fn detect(
    y: &[Pose],
    actions: &[Pose],
    prior: &SegmentLengthPrior,
    noise: &NoiseModel,
    settings: &DetectSettings,
) -> Result<Segmentation> {
    check_series(y, actions, prior)?;
    if settings.max_particles == 0 {
        return Err(Error::Resample("max_particles must be >= 1".into()));
    }
    let actions = effective_actions(actions, settings.mode);
    run_filter(y, &actions, prior, noise, settings)
}

/// Exact O(n²) dynamic program over every candidate segment, sharing the
/// evidence function (and its per-segment seeds) with [`detect`].
pub fn exhaustive_map(
    y: &[Pose],
    actions: &[Pose],
    prior: &SegmentLengthPrior,
    noise: &NoiseModel,
    mode: InferenceMode,
    fit: &FitSettings,
    seed: u64,
) -> Result<Segmentation> {
    const GUARD: usize = 500;
    if y.len() > GUARD {
        return Err(Error::ExhaustiveGuard {
            len: y.len(),
            max: GUARD,
        });
    }
    check_series(y, actions, prior)?;
    let actions = effective_actions(actions, mode);
    let t_max = y.len();

    let mut v = vec![f64::NEG_INFINITY; t_max + 1];
    v[0] = 0.0;
    let mut back: Vec<Option<BackPtr>> = (0..=t_max).map(|_| None).collect();

    for t in prior.min_len()..=t_max {
        let mut best = Candidate::none();
        for s in 0..=(t - prior.min_len()) {
            if v[s] == f64::NEG_INFINITY || t - s > prior.max_len() {
                continue;
            }
            let ln_beta = prior.ln_beta(t - s);
            // The slice starts at the anchor observation just before the
            // segment, so every observation is predicted from its
            // predecessor no matter where boundaries fall.
            let ss = s.saturating_sub(1);
            for kind in ModelKind::ALL {
                let Ok(fit_res) = model_evidence(
                    kind,
                    &y[ss..t],
                    &actions[ss..t - 1],
                    noise,
                    fit,
                    segment_seed(seed, s, t, kind),
                ) else {
                    continue;
                };
                let score = v[s] + ln_beta + LN_MODEL_PRIOR + fit_res.evidence;
                best.offer(score, s, kind, || BackPtr {
                    start: s,
                    model: fit_res.model.clone(),
                    log_evidence: fit_res.evidence,
                });
            }
        }
        if let Some((score, ptr)) = best.take() {
            v[t] = score;
            back[t] = Some(ptr);
        }
    }

    backtrace(&v, &back, t_max)
}

/// Convert a time-indexed segmentation into configuration space: each
/// segment's boundary observations are projected through its own model.
pub fn to_configurational(
    seg: &Segmentation,
    y: &[Pose],
) -> Result<ConfigurationalSegmentation> {
    if seg.tau.last().copied() != Some(y.len()) || seg.tau.first().copied() != Some(0) {
        return Err(Error::SegmentationMismatch(format!(
            "tau {:?} does not span a series of {} observations",
            seg.tau,
            y.len()
        )));
    }
    let tuples = seg
        .segments
        .iter()
        .map(|s| {
            let c_start = s.model.inverse_kinematics(&y[s.t0]).0;
            let c_end = s.model.inverse_kinematics(&y[s.t1 - 1]).0;
            ConfigSegment {
                c_start,
                c_end,
                model: s.model.clone(),
            }
        })
        .collect();
    Ok(ConfigurationalSegmentation { tuples })
}

// ---------------------------------------------------------------------------
// Filter internals
// ---------------------------------------------------------------------------

struct BackPtr {
    start: usize,
    model: ArticulationModel,
    log_evidence: f64,
}

/// Argmax tracker with the tie rule: larger start wins, then
/// rigid < prismatic < revolute.
struct Candidate {
    score: f64,
    start: usize,
    kind_rank: usize,
    ptr: Option<BackPtr>,
}

impl Candidate {
    fn none() -> Self {
        Self {
            score: f64::NEG_INFINITY,
            start: 0,
            kind_rank: usize::MAX,
            ptr: None,
        }
    }

    fn offer(&mut self, score: f64, start: usize, kind: ModelKind, make: impl FnOnce() -> BackPtr) {
        if score == f64::NEG_INFINITY {
            return;
        }
        let rank = kind.index();
        let better = score > self.score
            || (score == self.score
                && (start > self.start || (start == self.start && rank < self.kind_rank)));
        if better {
            self.score = score;
            self.start = start;
            self.kind_rank = rank;
            self.ptr = Some(make());
        }
    }

    fn take(self) -> Option<(f64, BackPtr)> {
        self.ptr.map(|p| (self.score, p))
    }
}

fn check_series(y: &[Pose], actions: &[Pose], prior: &SegmentLengthPrior) -> Result<()> {
    let need = prior.min_len().max(2);
    if y.len() < need {
        return Err(Error::SeriesTooShort {
            got: y.len(),
            need,
        });
    }
    if actions.len() + 1 != y.len() {
        return Err(Error::SeriesMismatch {
            poses: y.len(),
            actions: actions.len(),
        });
    }
    Ok(())
}

fn effective_actions(actions: &[Pose], mode: InferenceMode) -> Vec<Pose> {
    match mode {
        InferenceMode::ActionConditional => actions.to_vec(),
        InferenceMode::ObservationOnly => vec![Pose::identity(); actions.len()],
    }
}

fn run_filter(
    y: &[Pose],
    actions: &[Pose],
    prior: &SegmentLengthPrior,
    noise: &NoiseModel,
    settings: &DetectSettings,
) -> Result<Segmentation> {
    let t_max = y.len();
    let stride = settings.refit_stride.max(1);

    let mut v = vec![f64::NEG_INFINITY; t_max + 1];
    v[0] = 0.0;
    let mut back: Vec<Option<BackPtr>> = (0..=t_max).map(|_| None).collect();

    // One support per candidate start; each carries the three kind particles.
    let mut supports: Vec<SupportPoint> = vec![SupportPoint::new(0, 0.0)];

    for t in 1..=t_max {
        let mut best = Candidate::none();
        for sp in &mut supports {
            let len = t - sp.start;
            let ln_beta = prior.ln_beta(len);
            let ln_surv = prior.ln_survival(len.saturating_sub(1));
            for particle in &mut sp.particles {
                particle.extend(
                    y,
                    actions,
                    t,
                    noise,
                    &settings.fit,
                    stride,
                    settings.seed,
                );
                let evidence = particle
                    .fit
                    .as_ref()
                    .map_or(f64::NEG_INFINITY, |f| f.evidence);
                particle.log_p = ln_surv + evidence + LN_MODEL_PRIOR + particle.map_prefix;
                if ln_beta != f64::NEG_INFINITY && evidence != f64::NEG_INFINITY {
                    let score = particle.map_prefix + ln_beta + LN_MODEL_PRIOR + evidence;
                    let fit = particle.fit.as_ref().unwrap();
                    best.offer(score, particle.start, particle.kind, || BackPtr {
                        start: particle.start,
                        model: fit.model.clone(),
                        log_evidence: fit.evidence,
                    });
                }
            }
        }
        if let Some((score, ptr)) = best.take() {
            v[t] = score;
            back[t] = Some(ptr);
        }

        // Prune to the particle budget on the filtering weights.
        if supports.len() > settings.max_particles {
            let log_weights: Vec<f64> = supports.iter().map(SupportPoint::log_weight).collect();
            let max_lw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max_lw == f64::NEG_INFINITY {
                return Err(Error::AllParticlesDead { t });
            }
            let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
            let survivors = stratified_optimal_resample(
                &weights,
                settings.max_particles,
                resample_seed(settings.seed, t),
            )?;
            let mut keep = vec![false; supports.len()];
            for s in &survivors {
                keep[s.index] = true;
            }
            let mut it = keep.iter();
            supports.retain(|_| *it.next().unwrap());
        }

        // A new candidate start at t, if a segment beginning here can close.
        if t + prior.min_len() <= t_max && v[t] != f64::NEG_INFINITY {
            supports.push(SupportPoint::new(t, v[t]));
        }
    }

    backtrace(&v, &back, t_max)
}

struct SupportPoint {
    start: usize,
    particles: [Particle; 3],
}

impl SupportPoint {
    fn new(start: usize, map_prefix: f64) -> Self {
        let particle = |kind: ModelKind| Particle {
            start,
            kind,
            log_p: f64::NEG_INFINITY,
            map_prefix,
            fit: None,
        };
        Self {
            start,
            particles: [
                particle(ModelKind::Rigid),
                particle(ModelKind::Prismatic),
                particle(ModelKind::Revolute),
            ],
        }
    }

    /// Filtering weight of this start: logsumexp over the kind particles.
    fn log_weight(&self) -> f64 {
        let m = self
            .particles
            .iter()
            .map(|p| p.log_p)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + self
            .particles
            .iter()
            .map(|p| (p.log_p - m).exp())
            .sum::<f64>()
            .ln()
    }
}

impl Particle {
    /// Bring the particle's evidence up to time `t` (segment `[start, t)`),
    /// either by a scheduled refit or by extending the frozen fit one step.
    /// Fits run over the anchored slice `[start-1, t)` so the segment's first
    /// observation is predicted from the observation before the changepoint.
    #[allow(clippy::too_many_arguments)]
    fn extend(
        &mut self,
        y: &[Pose],
        actions: &[Pose],
        t: usize,
        noise: &NoiseModel,
        fit_settings: &FitSettings,
        stride: usize,
        master_seed: u64,
    ) {
        let s = self.start;
        let ss = s.saturating_sub(1);
        let len = t - s;
        if t - ss < self.kind.min_samples().max(2) {
            return;
        }
        let due_refit = self.fit.is_none() || len % stride == 0;
        if due_refit {
            let seed = segment_seed(master_seed, s, t, self.kind);
            match model_evidence(
                self.kind,
                &y[ss..t],
                &actions[ss..t - 1],
                noise,
                fit_settings,
                seed,
            ) {
                Ok(res) => {
                    let gauss = models::mlesac_gauss_terms(
                        &res.model,
                        &y[ss..t],
                        &actions[ss..t - 1],
                        noise,
                    );
                    self.fit = Some(RunningFit {
                        model: res.model,
                        gamma: res.gamma,
                        gauss,
                        loglik: res.loglik,
                        evidence: res.evidence,
                    });
                }
                Err(_) => {
                    // Degenerate segment for this kind; retry next step.
                    self.fit = None;
                }
            }
        } else if let Some(fit) = &mut self.fit {
            // Incremental step: one new prediction term at the frozen fit.
            let k = t - 2;
            let pred = fit.model.predict(&y[k], &actions[k]);
            let d = y[k + 1].distance(&pred);
            let g = noise.ln_gauss(d.translational, d.angular);
            fit.gauss.push(g);
            fit.loglik += models::ln_mixture(g, noise, fit.gamma);
            fit.evidence = fit.loglik
                - 0.5 * self.kind.param_count() as f64 * (fit.gauss.len() as f64).ln();
        }
    }
}

fn resample_seed(master: u64, t: usize) -> u64 {
    segment_seed(master ^ 0x5ea1_5a1e_0f_u64, t, t, ModelKind::Rigid)
}

fn backtrace(v: &[f64], back: &[Option<BackPtr>], t_max: usize) -> Result<Segmentation> {
    if v[t_max] == f64::NEG_INFINITY {
        return Err(Error::AllParticlesDead { t: t_max });
    }
    let mut segments = Vec::new();
    let mut t = t_max;
    while t > 0 {
        let ptr = back[t]
            .as_ref()
            .ok_or(Error::AllParticlesDead { t })?;
        segments.push(SegmentRecord {
            t0: ptr.start,
            t1: t,
            model: ptr.model.clone(),
            log_evidence: ptr.log_evidence,
        });
        t = ptr.start;
    }
    segments.reverse();
    let mut tau: Vec<usize> = segments.iter().map(|s| s.t0).collect();
    tau.push(t_max);
    Ok(Segmentation {
        tau,
        segments,
        log_map_score: v[t_max],
        schema_version: 1,
    })
}

#[cfg(test)]
mod tests;
