//! File formats shared with the CLI.
//!
//! Trajectory CSV columns (header required, exact order):
//!
//! ```text
//! t,tx,ty,tz,qw,qx,qy,qz,atx,aty,atz,aqw,aqx,aqy,aqz
//! ```
//!
//! One row per observation; the action columns of row `t` hold the action
//! applied between observations `t` and `t+1`. The final row carries the
//! identity action (there is no action after the last observation) and is
//! ignored on read. Sources without action rotations fill `aq*` with the
//! identity quaternion.
//!
//! JSON artifacts (segmentations, automata, synthetic labels) are pretty
//! printed with a trailing newline; serializing a parsed artifact reproduces
//! the bytes exactly.

use crate::changepoint::Segmentation;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::synth::{LabeledTrajectory, ScenarioSpec, TrueSegment};
use serde::{Deserialize, Serialize};

pub const TRAJECTORY_HEADER: &str = "t,tx,ty,tz,qw,qx,qy,qz,atx,aty,atz,aqw,aqx,aqy,aqz";

/// Render a pose/action series as trajectory CSV.
pub fn write_trajectory_csv(poses: &[Pose], actions: &[Pose]) -> String {
    let mut out = String::with_capacity(poses.len() * 96);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (t, pose) in poses.iter().enumerate() {
        let action = actions.get(t).copied().unwrap_or_else(Pose::identity);
        let p = pose.to_array();
        let a = action.to_array();
        out.push_str(&t.to_string());
        for v in p.iter().chain(a.iter()) {
            out.push(',');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    out
}

/// Shortest lossless decimal rendering.
fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Parse trajectory CSV into aligned pose and action series.
pub fn read_trajectory_csv(text: &str) -> Result<(Vec<Pose>, Vec<Pose>)> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Parse("empty trajectory file".into()));
    };
    if header.trim() != TRAJECTORY_HEADER {
        return Err(Error::Parse(format!(
            "line 1: expected header {TRAJECTORY_HEADER:?}, got {:?}",
            header.trim()
        )));
    }
    let mut poses = Vec::new();
    let mut actions = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected 15 fields, got {}",
                fields.len()
            )));
        }
        let t: usize = fields[0].trim().parse().map_err(|_| {
            Error::Parse(format!("line {line_no}: bad timestep {:?}", fields[0]))
        })?;
        if t != poses.len() {
            return Err(Error::Parse(format!(
                "line {line_no}: timestep {t} out of order (expected {})",
                poses.len()
            )));
        }
        let mut vals = [0.0f64; 14];
        for (k, f) in fields[1..].iter().enumerate() {
            vals[k] = f.trim().parse().map_err(|_| {
                Error::Parse(format!("line {line_no}: bad number {f:?}"))
            })?;
        }
        let pose = Pose::from_array(&vals[0..7].try_into().unwrap()).ok_or_else(|| {
            Error::Parse(format!("line {line_no}: degenerate pose quaternion"))
        })?;
        let action = Pose::from_array(&vals[7..14].try_into().unwrap()).ok_or_else(|| {
            Error::Parse(format!("line {line_no}: degenerate action quaternion"))
        })?;
        poses.push(pose);
        actions.push(action);
    }
    if poses.is_empty() {
        return Err(Error::Parse("trajectory file has no data rows".into()));
    }
    actions.pop(); // the last row's action is a filler
    Ok((poses, actions))
}

/// Input sequence CSV for the simulator: `t,u0,u1,...` with one column per
/// edge coordinate.
pub fn read_input_csv(text: &str, n_coords: usize) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Parse("empty input file".into()));
    };
    let expected_header = input_header(n_coords);
    if header.trim() != expected_header {
        return Err(Error::Parse(format!(
            "line 1: expected header {expected_header:?}, got {:?}",
            header.trim()
        )));
    }
    let mut inputs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_coords + 1 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {} fields, got {}",
                n_coords + 1,
                fields.len()
            )));
        }
        let mut u = Vec::with_capacity(n_coords);
        for f in &fields[1..] {
            u.push(f.trim().parse().map_err(|_| {
                Error::Parse(format!("line {line_no}: bad number {f:?}"))
            })?);
        }
        inputs.push(u);
    }
    Ok(inputs)
}

pub fn input_header(n_coords: usize) -> String {
    let mut h = String::from("t");
    for l in 0..n_coords {
        h.push_str(&format!(",u{l}"));
    }
    h
}

/// Labels sidecar written next to synthetic trajectory CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelsFile {
    pub changepoints: Vec<usize>,
    pub segments: Vec<TrueSegment>,
    pub scenario: ScenarioSpec,
    pub schema_version: u32,
}

impl LabelsFile {
    pub fn from_trajectory(traj: &LabeledTrajectory) -> Self {
        Self {
            changepoints: traj.changepoints.clone(),
            segments: traj.segments.clone(),
            scenario: traj.spec,
            schema_version: 1,
        }
    }
}

/// Pretty JSON with a trailing newline; parse-then-serialize is
/// byte-identical for all artifact types.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn segmentation_from_json(text: &str) -> Result<Segmentation> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("segmentation JSON: {e}")))
}

pub fn automaton_from_json(text: &str) -> Result<crate::automaton::HybridAutomaton> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("automaton JSON: {e}")))
}

pub fn labels_from_json(text: &str) -> Result<LabelsFile> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("labels JSON: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, ScenarioSpec};

    #[test]
    fn trajectory_roundtrip_is_lossless_and_stable() {
        let traj = synth::generate(&ScenarioSpec::with_grasp_drawer(9)).unwrap();
        let csv = write_trajectory_csv(&traj.poses, &traj.actions);
        let (poses, actions) = read_trajectory_csv(&csv).unwrap();
        assert_eq!(poses.len(), traj.poses.len());
        assert_eq!(actions.len(), traj.actions.len());
        for (a, b) in poses.iter().zip(&traj.poses) {
            assert_eq!(a.to_array(), b.to_array());
        }
        // Write -> read -> write reproduces the bytes.
        assert_eq!(write_trajectory_csv(&poses, &actions), csv);
    }

    #[test]
    fn truncated_row_names_line() {
        let traj = synth::generate(&ScenarioSpec::with_grasp_drawer(10)).unwrap();
        let csv = write_trajectory_csv(&traj.poses, &traj.actions);
        let mut lines: Vec<&str> = csv.lines().collect();
        lines[3] = "2,0.1,0.2";
        let broken = lines.join("\n");
        let err = read_trajectory_csv(&broken).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn header_mismatch_rejected() {
        assert!(read_trajectory_csv("a,b,c\n").is_err());
        assert!(read_trajectory_csv("").is_err());
    }

    #[test]
    fn input_csv_roundtrip() {
        let text = "t,u0,u1\n0,0.1,0.0\n1,-0.2,0.3\n";
        let u = read_input_csv(text, 2).unwrap();
        assert_eq!(u, vec![vec![0.1, 0.0], vec![-0.2, 0.3]]);
        assert!(read_input_csv(text, 1).is_err());
    }

    #[test]
    fn labels_json_roundtrip() {
        let traj = synth::generate(&ScenarioSpec::no_action_gaps_drawer(11)).unwrap();
        let labels = LabelsFile::from_trajectory(&traj);
        let json = to_json_string(&labels);
        let parsed = labels_from_json(&json).unwrap();
        assert_eq!(to_json_string(&parsed), json);
        assert_eq!(parsed.changepoints, traj.changepoints);
    }
}
