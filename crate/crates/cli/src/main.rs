//! Batch front door: corpus generation, changepoint inference, automaton
//! export and simulation.
//!
//! Exit codes: 0 success, 2 malformed input, 3 inference failure,
//! 4 validation failure.

mod config;

use artkin::automaton::{self, build_automaton, build_graph, EdgeCandidate, HybridAutomaton};
use artkin::changepoint::{detect, to_configurational, Segmentation};
use artkin::io;
use artkin::synth::{self, GapSpec, ObjectKind, Regime, ScenarioSpec};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "artkin",
    about = "Hybrid kinematic model inference for articulated objects",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labeled synthetic demonstration (trajectory CSV + labels JSON).
    Synth(SynthArgs),
    /// Infer the MAP changepoint segmentation of a trajectory.
    Detect(DetectArgs),
    /// Compile pairwise segmentations into a hybrid automaton.
    Build(BuildArgs),
    /// Run the automaton on an input sequence and emit the state trace.
    Simulate(SimArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Object class: drawer | microwave
    #[arg(long)]
    object: String,
    /// Demonstration regime: with-grasp | no-action-gaps | without-grasp
    #[arg(long)]
    regime: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Demonstrator hand speed, meters per moving step.
    #[arg(long)]
    action_magnitude: Option<f64>,
    #[arg(long)]
    gap_count: Option<usize>,
    #[arg(long)]
    gap_len: Option<usize>,
    #[arg(long)]
    off_axis_fraction: Option<f64>,
    /// Sensor noise overrides for the generator.
    #[arg(long)]
    sigma_trans: Option<f64>,
    #[arg(long)]
    sigma_rot: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Output trajectory CSV path.
    #[arg(short, long)]
    output: PathBuf,
    /// Output labels JSON path.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// Input trajectory CSV.
    #[arg(short, long)]
    input: PathBuf,
    /// Run configuration file (key=value).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override: action-conditional | observation-only
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_particles: Option<usize>,
    /// Output segmentation JSON path.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    /// Comma-separated object part names, e.g. "body,door".
    #[arg(long)]
    parts: String,
    /// Edge spec `I:J:SEGMENTATION.json:TRAJECTORY.csv`, repeatable.
    #[arg(long = "edge", required = true)]
    edges: Vec<String>,
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    min_mode_width: Option<f64>,
    /// Output automaton JSON path.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    /// Automaton JSON produced by `build`.
    #[arg(short, long)]
    automaton: PathBuf,
    /// Input sequence CSV (`t,u0,...`).
    #[arg(short, long)]
    inputs: PathBuf,
    /// Output trace CSV path.
    #[arg(short, long)]
    output: PathBuf,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

fn classify(err: artkin::Error) -> Failure {
    use artkin::Error as E;
    let code = match &err {
        E::Parse(_)
        | E::InvalidNoiseModel(_)
        | E::InvalidPrior(_)
        | E::InvalidScenario(_)
        | E::SeriesTooShort { .. }
        | E::SeriesMismatch { .. }
        | E::SegmentTooShort { .. } => 2,
        E::AllParticlesDead { .. }
        | E::DegenerateFit { .. }
        | E::Resample(_)
        | E::ExhaustiveGuard { .. } => 3,
        E::Graph(_) | E::Automaton(_) | E::SegmentationMismatch(_) => 4,
    };
    Failure {
        code,
        message: err.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Detect(args) => cmd_detect(args),
        Cmd::Build(args) => cmd_build(args),
        Cmd::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: 2,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::from_file_text(&read_file(p)?).map_err(Failure::input),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let object = match args.object.as_str() {
        "drawer" => ObjectKind::DrawerLike,
        "microwave" => ObjectKind::MicrowaveLike,
        other => return Err(Failure::input(format!("unknown object {other:?}"))),
    };
    let regime = match args.regime.as_str() {
        "with-grasp" => Regime::WithGrasp,
        "no-action-gaps" => Regime::NoActionGaps,
        "without-grasp" => Regime::WithoutGrasp,
        other => return Err(Failure::input(format!("unknown regime {other:?}"))),
    };
    let mut spec = match (object, regime) {
        (ObjectKind::DrawerLike, Regime::WithGrasp) => ScenarioSpec::with_grasp_drawer(args.seed),
        (ObjectKind::DrawerLike, Regime::NoActionGaps) => {
            ScenarioSpec::no_action_gaps_drawer(args.seed)
        }
        (ObjectKind::DrawerLike, Regime::WithoutGrasp) => {
            ScenarioSpec::without_grasp_drawer(args.seed)
        }
        (ObjectKind::MicrowaveLike, Regime::WithGrasp) => {
            ScenarioSpec::with_grasp_microwave(args.seed)
        }
        (ObjectKind::MicrowaveLike, Regime::NoActionGaps) => {
            ScenarioSpec::no_action_gaps_microwave(args.seed)
        }
        (ObjectKind::MicrowaveLike, Regime::WithoutGrasp) => {
            let mut s = ScenarioSpec::without_grasp_drawer(args.seed);
            s.object = ObjectKind::MicrowaveLike;
            s.t_steps = 200;
            s
        }
    };
    if let Some(steps) = args.steps {
        spec.t_steps = steps;
    }
    if let Some(m) = args.action_magnitude {
        spec.action_magnitude = m;
    }
    if let Some(c) = args.gap_count {
        spec.gaps.count = c;
    }
    if let Some(l) = args.gap_len {
        spec.gaps.len = l;
    }
    if let Some(f) = args.off_axis_fraction {
        spec.off_axis_fraction = f;
    }
    if args.sigma_trans.is_some() || args.sigma_rot.is_some() || args.gamma.is_some() {
        spec.noise = artkin::NoiseModel::new(
            args.sigma_trans.unwrap_or(spec.noise.sigma_trans()),
            args.sigma_rot.unwrap_or(spec.noise.sigma_rot()),
            args.gamma.unwrap_or(spec.noise.gamma()),
            spec.noise.outlier_weight(),
            spec.noise.outlier_volume(),
        )
        .map_err(classify)?;
    }
    if spec.gaps.count == 0 {
        spec.gaps = GapSpec { count: 0, len: 0 };
    }

    let traj = synth::generate(&spec).map_err(classify)?;
    let csv = io::write_trajectory_csv(&traj.poses, &traj.actions);
    let labels = io::to_json_string(&io::LabelsFile::from_trajectory(&traj));
    write_file(&args.output, &csv)?;
    write_file(&args.labels, &labels)
}

fn cmd_detect(args: DetectArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(mode) = &args.mode {
        cfg.mode = config::parse_mode(mode).map_err(Failure::input)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.max_particles {
        cfg.max_particles = m;
    }
    cfg.validate().map_err(Failure::input)?;

    let (poses, actions) = io::read_trajectory_csv(&read_file(&args.input)?).map_err(classify)?;
    let noise = cfg.noise().map_err(classify)?;
    let prior = cfg.prior().map_err(classify)?;
    let seg = detect(&poses, &actions, &prior, &noise, &cfg.detect_settings()).map_err(classify)?;
    write_file(&args.output, &io::to_json_string(&seg))
}

fn cmd_build(args: BuildArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.config)?;
    let min_mode_width = args.min_mode_width.unwrap_or(cfg.min_mode_width);
    let parts: Vec<String> = args
        .parts
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let mut candidates = Vec::new();
    for spec in &args.edges {
        let fields: Vec<&str> = spec.splitn(4, ':').collect();
        if fields.len() != 4 {
            return Err(Failure::input(format!(
                "edge spec {spec:?}: want I:J:SEGMENTATION.json:TRAJECTORY.csv"
            )));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| Failure::input(format!("edge spec {spec:?}: bad part index")))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| Failure::input(format!("edge spec {spec:?}: bad part index")))?;
        let seg: Segmentation =
            io::segmentation_from_json(&read_file(Path::new(fields[2]))?).map_err(classify)?;
        let (poses, _) =
            io::read_trajectory_csv(&read_file(Path::new(fields[3]))?).map_err(classify)?;
        let conf = to_configurational(&seg, &poses).map_err(classify)?;
        candidates.push(EdgeCandidate {
            i,
            j,
            segmentation: conf,
            log_map_score: seg.log_map_score,
        });
    }

    let graph = build_graph(&parts, &candidates, min_mode_width).map_err(classify)?;
    let h = build_automaton(&graph).map_err(classify)?;
    write_file(&args.output, &io::to_json_string(&h))
}

fn cmd_simulate(args: SimArgs) -> Result<(), Failure> {
    let h: HybridAutomaton =
        io::automaton_from_json(&read_file(&args.automaton)?).map_err(classify)?;
    let violations = automaton::validate(&h);
    if !violations.is_empty() {
        return Err(Failure {
            code: 4,
            message: format!("automaton fails validation: {}", violations.join("; ")),
        });
    }
    let inputs = io::read_input_csv(&read_file(&args.inputs)?, h.n_coords()).map_err(classify)?;

    let mut mode = h.init.mode;
    let mut x = h.init.x.clone();
    let mut out = String::new();
    out.push_str("t,mode");
    for l in 0..h.n_coords() {
        out.push_str(&format!(",x{l}"));
    }
    for l in 0..h.n_coords() {
        out.push_str(&format!(",gx{l}"));
    }
    out.push_str(",fired\n");
    for (t, u) in inputs.iter().enumerate() {
        let step = h.step(mode, &x, u).map_err(classify)?;
        mode = step.mode;
        x = step.x;
        let gx = h.global_x(mode, &x);
        out.push_str(&t.to_string());
        out.push(',');
        out.push_str(&mode.to_string());
        for v in x.iter().chain(gx.iter()) {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push(',');
        if step.fired.is_empty() {
            out.push('-');
        } else {
            out.push_str(&step.fired.join(";"));
        }
        out.push('\n');
    }
    write_file(&args.output, &out)
}
