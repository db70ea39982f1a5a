//! Flat `key=value` run configuration.
//!
//! Every key is optional; values given on the command line override values
//! from the file. Unknown keys and out-of-range values are rejected.
//!
//! ```text
//! # observation model
//! sigma_trans    = 0.00625   # m, > 0
//! sigma_rot      = 0.0125    # rad, > 0
//! gamma          = 0.02      # outlier probability, [0, 1]
//! outlier_weight = 5.0       # exponential prior rate on gamma, > 0
//! outlier_volume = 3.141592653589793  # uniform outlier support volume, > 0
//!
//! # segment length prior
//! beta_p  = 0.01             # geometric success probability, (0, 1)
//! min_len = 10               # timesteps, >= 2
//! max_len = 10000            # timesteps, >= min_len
//!
//! # filter
//! max_particles = 100        # >= 1
//! refit_stride  = 10         # >= 1
//! mode          = action-conditional   # or observation-only
//! seed          = 0
//!
//! # MLESAC
//! mlesac_iters    = 100      # >= 1
//! score_subsample = 30       # 0 = use every step
//! refine_steps    = 10
//! fit_gamma       = true
//!
//! # automaton construction
//! min_mode_width = 0.05      # > 0
//! ```

use artkin::automaton::DEFAULT_MIN_MODE_WIDTH;
use artkin::changepoint::{DetectSettings, InferenceMode, SegmentLengthPrior};
use artkin::models::{FitSettings, NoiseModel};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub gamma: f64,
    pub outlier_weight: f64,
    pub outlier_volume: f64,
    pub beta_p: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub max_particles: usize,
    pub refit_stride: usize,
    pub mode: InferenceMode,
    pub seed: u64,
    pub mlesac_iters: usize,
    pub score_subsample: usize,
    pub refine_steps: usize,
    pub fit_gamma: bool,
    pub min_mode_width: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sigma_trans: 0.00625,
            sigma_rot: 0.0125,
            gamma: 0.02,
            outlier_weight: 5.0,
            outlier_volume: NoiseModel::default_outlier_volume(),
            beta_p: 0.01,
            min_len: 10,
            max_len: 10_000,
            max_particles: 100,
            refit_stride: 10,
            mode: InferenceMode::ActionConditional,
            seed: 0,
            mlesac_iters: 100,
            score_subsample: 30,
            refine_steps: 10,
            fit_gamma: true,
            min_mode_width: DEFAULT_MIN_MODE_WIDTH,
        }
    }
}

impl RunConfig {
    /// Parse a `key = value` file on top of the defaults.
    pub fn from_file_text(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("config line {line_no}: expected key=value, got {line:?}"));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| format!("config line {line_no}: {e}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value {value:?} for {key}"))
        }
        match key {
            "sigma_trans" => self.sigma_trans = num(key, value)?,
            "sigma_rot" => self.sigma_rot = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "outlier_weight" => self.outlier_weight = num(key, value)?,
            "outlier_volume" => self.outlier_volume = num(key, value)?,
            "beta_p" => self.beta_p = num(key, value)?,
            "min_len" => self.min_len = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "max_particles" => self.max_particles = num(key, value)?,
            "refit_stride" => self.refit_stride = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mlesac_iters" => self.mlesac_iters = num(key, value)?,
            "score_subsample" => self.score_subsample = num(key, value)?,
            "refine_steps" => self.refine_steps = num(key, value)?,
            "min_mode_width" => self.min_mode_width = num(key, value)?,
            "fit_gamma" => {
                self.fit_gamma = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(format!("bad value {value:?} for fit_gamma")),
                }
            }
            "mode" => self.mode = parse_mode(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.noise().map_err(|e| e.to_string())?;
        self.prior().map_err(|e| e.to_string())?;
        if self.max_particles == 0 {
            return Err("max_particles must be >= 1".into());
        }
        if self.refit_stride == 0 {
            return Err("refit_stride must be >= 1".into());
        }
        if self.mlesac_iters == 0 {
            return Err("mlesac_iters must be >= 1".into());
        }
        if !(self.min_mode_width.is_finite() && self.min_mode_width > 0.0) {
            return Err(format!(
                "min_mode_width must be positive, got {}",
                self.min_mode_width
            ));
        }
        Ok(())
    }

    pub fn noise(&self) -> artkin::Result<NoiseModel> {
        NoiseModel::new(
            self.sigma_trans,
            self.sigma_rot,
            self.gamma,
            self.outlier_weight,
            self.outlier_volume,
        )
    }

    pub fn prior(&self) -> artkin::Result<SegmentLengthPrior> {
        SegmentLengthPrior::new(self.beta_p, self.min_len, self.max_len)
    }

    pub fn detect_settings(&self) -> DetectSettings {
        DetectSettings {
            max_particles: self.max_particles,
            refit_stride: self.refit_stride,
            mode: self.mode,
            fit: self.fit(),
            seed: self.seed,
        }
    }

    pub fn fit(&self) -> FitSettings {
        FitSettings {
            iterations: self.mlesac_iters,
            score_subsample: self.score_subsample,
            refine_steps: self.refine_steps,
            refine_tol: 1e-10,
            fit_gamma: self.fit_gamma,
        }
    }
}

pub fn parse_mode(value: &str) -> Result<InferenceMode, String> {
    match value {
        "action-conditional" => Ok(InferenceMode::ActionConditional),
        "observation-only" => Ok(InferenceMode::ObservationOnly),
        _ => Err(format!(
            "bad mode {value:?} (want action-conditional or observation-only)"
        )),
    }
}
