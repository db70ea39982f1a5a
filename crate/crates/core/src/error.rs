use thiserror::Error;

/// Errors surfaced by model fitting, inference and automaton construction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid noise model: {0}")]
    InvalidNoiseModel(String),

    #[error("segment too short: got {got} observations, need at least {need}")]
    SegmentTooShort { got: usize, need: usize },

    #[error("series too short: {got} observations, need at least {need}")]
    SeriesTooShort { got: usize, need: usize },

    #[error("pose series has {poses} poses but action series has {actions} actions (want poses-1)")]
    SeriesMismatch { poses: usize, actions: usize },

    #[error("all {iters} sampling iterations drew degenerate minimal sets for {kind}")]
    DegenerateFit { kind: &'static str, iters: usize },

    #[error("all particles died at timestep {t}")]
    AllParticlesDead { t: usize },

    #[error("series length {len} exceeds the exhaustive search guard ({max})")]
    ExhaustiveGuard { len: usize, max: usize },

    #[error("invalid segment-length prior: {0}")]
    InvalidPrior(String),

    #[error("resampling failed: {0}")]
    Resample(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("kinematic graph error: {0}")]
    Graph(String),

    #[error("automaton validation failed: {0}")]
    Automaton(String),

    #[error("segmentation inconsistent with series: {0}")]
    SegmentationMismatch(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
