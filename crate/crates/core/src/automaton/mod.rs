//! Extended kinematic graphs and executable hybrid automata.
//!
//! An [`ExtendedKinematicGraph`] attaches an ordered sequence of local
//! articulation models (with configuration boundaries) to every edge of a
//! kinematic tree. [`build_automaton`] compiles the tree into a hybrid
//! automaton whose discrete modes are the Cartesian product of per-edge
//! local models. Per mode and edge coordinate, the continuous state is the
//! configuration *local to the active model*: it lives in `[0, w)` where `w`
//! is the model's configuration width, and the global configuration is
//! recovered by adding the mode offset (the sum of the widths of the
//! preceding models on that edge).
//!
//! Transitions are guarded threshold crossings: ascending at the local width
//! and descending at zero, with identity resets in the global coordinate.
//! The extreme modes of each coordinate instead clamp (the `e0`/`e-1`
//! self-edges), so the state never leaves the invariant set.

use crate::changepoint::ConfigurationalSegmentation;
use crate::error::{Error, Result};
use crate::models::ArticulationModel;
use serde::{Deserialize, Serialize};

/// Default width assigned to modes whose detected configuration span is
/// degenerate (rigid segments span zero by construction).
pub const DEFAULT_MIN_MODE_WIDTH: f64 = 0.05;

/// One candidate kinematic link between two parts, scored by its MAP
/// segmentation.
#[derive(Debug, Clone)]
pub struct EdgeCandidate {
    pub i: usize,
    pub j: usize,
    pub segmentation: ConfigurationalSegmentation,
    pub log_map_score: f64,
}

/// Kinematic tree whose edges carry ordered local models with strictly
/// increasing cumulative configuration boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedKinematicGraph {
    pub parts: Vec<String>,
    pub edges: Vec<GraphEdge>,
}

/// One edge of the graph: local models `models[k]` govern the cumulative
/// configuration interval `[config_changepoints[k], config_changepoints[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub models: Vec<ArticulationModel>,
    /// `models.len() + 1` strictly increasing values starting at 0.
    pub config_changepoints: Vec<f64>,
}

impl GraphEdge {
    /// Configuration width of local model `k`.
    pub fn width(&self, k: usize) -> f64 {
        self.config_changepoints[k + 1] - self.config_changepoints[k]
    }

    /// Mode offset of local model `k`: sum of the widths below it.
    pub fn offset(&self, k: usize) -> f64 {
        self.config_changepoints[k]
    }
}

/// Assemble the kinematic graph from scored pairwise segmentations: the
/// single edge for two parts, otherwise the maximum-score spanning tree.
pub fn build_graph(
    parts: &[String],
    candidates: &[EdgeCandidate],
    min_mode_width: f64,
) -> Result<ExtendedKinematicGraph> {
    if parts.len() < 2 {
        return Err(Error::Graph(format!(
            "need at least 2 parts, got {}",
            parts.len()
        )));
    }
    if !(min_mode_width.is_finite() && min_mode_width > 0.0) {
        return Err(Error::Graph(format!(
            "min_mode_width must be positive, got {min_mode_width}"
        )));
    }
    for c in candidates {
        if c.i >= parts.len() || c.j >= parts.len() || c.i == c.j {
            return Err(Error::Graph(format!(
                "candidate edge ({}, {}) out of range for {} parts",
                c.i,
                c.j,
                parts.len()
            )));
        }
    }

    // Maximum-total-score spanning tree (Kruskal with union-find).
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .log_map_score
            .partial_cmp(&candidates[a].log_map_score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut dsu: Vec<usize> = (0..parts.len()).collect();
    fn root(dsu: &mut Vec<usize>, mut v: usize) -> usize {
        while dsu[v] != v {
            dsu[v] = dsu[dsu[v]];
            v = dsu[v];
        }
        v
    }
    let mut edges = Vec::new();
    for idx in order {
        let c = &candidates[idx];
        let (ri, rj) = (root(&mut dsu, c.i), root(&mut dsu, c.j));
        if ri != rj {
            dsu[ri] = rj;
            edges.push(edge_from_candidate(c, min_mode_width));
        }
    }
    if edges.len() + 1 != parts.len() {
        return Err(Error::Graph(format!(
            "candidate edges leave the graph disconnected: {} edges for {} parts",
            edges.len(),
            parts.len()
        )));
    }
    edges.sort_by_key(|e: &GraphEdge| (e.i, e.j));
    Ok(ExtendedKinematicGraph {
        parts: parts.to_vec(),
        edges,
    })
}

/// Convert detected configuration spans into strictly increasing cumulative
/// boundaries. Models whose configuration ran backwards are reflected so
/// every span is positive; degenerate spans (rigid) get `min_mode_width`.
fn edge_from_candidate(c: &EdgeCandidate, min_mode_width: f64) -> GraphEdge {
    let mut models = Vec::with_capacity(c.segmentation.tuples.len());
    let mut boundaries = vec![0.0];
    for tuple in &c.segmentation.tuples {
        let span = tuple.c_end - tuple.c_start;
        let model = if span < 0.0 {
            tuple.model.reflected()
        } else {
            tuple.model.clone()
        };
        let width = span.abs().max(min_mode_width);
        boundaries.push(boundaries.last().unwrap() + width);
        models.push(model);
    }
    GraphEdge {
        i: c.i,
        j: c.j,
        models,
        config_changepoints: boundaries,
    }
}

// ---------------------------------------------------------------------------
// Hybrid automaton
// ---------------------------------------------------------------------------

/// Discrete mode: one local-model index per edge coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    pub id: usize,
    /// `indices[l]` is the active local model on edge coordinate `l`.
    pub indices: Vec<usize>,
}

/// Guard kind of one transition edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardKind {
    /// Cross to the next local model when `x >= threshold`.
    Upper,
    /// Cross to the previous local model when `x < 0`.
    Lower,
    /// Self edge `e0`: clamp at the lower bound of the first model.
    ClampLow,
    /// Self edge `e-1`: clamp at the upper bound of the last model.
    ClampHigh,
}

/// One transition edge with its guard predicate on coordinate `coord`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub coord: usize,
    pub kind: GuardKind,
    pub threshold: f64,
}

/// Default initial state: all coordinates at zero in the first mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitState {
    pub mode: usize,
    pub x: Vec<f64>,
}

/// Executable hybrid automaton over the kinematic tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAutomaton {
    pub parts: Vec<String>,
    pub edges: Vec<GraphEdge>,
    pub modes: Vec<Mode>,
    pub guards: Vec<Guard>,
    pub init: InitState,
    pub schema_version: u32,
}

/// Result of one guarded Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub mode: usize,
    pub x: Vec<f64>,
    /// Ids of the guard edges that fired, in coordinate order.
    pub fired: Vec<String>,
}

/// Compile the kinematic graph into the product hybrid automaton.
pub fn build_automaton(g: &ExtendedKinematicGraph) -> Result<HybridAutomaton> {
    if g.edges.len() + 1 != g.parts.len() || !is_connected(g) {
        return Err(Error::Graph(format!(
            "graph is not a tree: {} parts, {} edges",
            g.parts.len(),
            g.edges.len()
        )));
    }
    for e in &g.edges {
        if e.config_changepoints.len() != e.models.len() + 1 {
            return Err(Error::Graph(format!(
                "edge ({}, {}): {} boundaries for {} models",
                e.i,
                e.j,
                e.config_changepoints.len(),
                e.models.len()
            )));
        }
        if e.config_changepoints[0] != 0.0 {
            return Err(Error::Graph(format!(
                "edge ({}, {}): boundaries must start at 0",
                e.i, e.j
            )));
        }
        if e.config_changepoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Graph(format!(
                "edge ({}, {}): configuration boundaries must be strictly increasing: {:?}",
                e.i, e.j, e.config_changepoints
            )));
        }
    }

    let radices: Vec<usize> = g.edges.iter().map(|e| e.models.len()).collect();
    let n_modes: usize = radices.iter().product();
    let mut modes = Vec::with_capacity(n_modes);
    for id in 0..n_modes {
        modes.push(Mode {
            id,
            indices: decode_mode(id, &radices),
        });
    }

    let mut guards = Vec::new();
    for mode in &modes {
        for (l, edge) in g.edges.iter().enumerate() {
            let k = mode.indices[l];
            let width = edge.width(k);
            let tag = format!("e{}-{}", edge.i, edge.j);
            if k + 1 < radices[l] {
                let to = encode_mode_with(&mode.indices, l, k + 1, &radices);
                guards.push(Guard {
                    id: format!("{tag}:m{k}->m{}", k + 1),
                    from: mode.id,
                    to,
                    coord: l,
                    kind: GuardKind::Upper,
                    threshold: width,
                });
            }
            if k > 0 {
                let to = encode_mode_with(&mode.indices, l, k - 1, &radices);
                guards.push(Guard {
                    id: format!("{tag}:m{k}->m{}", k - 1),
                    from: mode.id,
                    to,
                    coord: l,
                    kind: GuardKind::Lower,
                    threshold: 0.0,
                });
            }
            // Boundary self-edges, declared on every mode; they fire only
            // where no cross edge shadows them.
            guards.push(Guard {
                id: format!("{tag}:m{k}:e0"),
                from: mode.id,
                to: mode.id,
                coord: l,
                kind: GuardKind::ClampLow,
                threshold: 0.0,
            });
            guards.push(Guard {
                id: format!("{tag}:m{k}:e-1"),
                from: mode.id,
                to: mode.id,
                coord: l,
                kind: GuardKind::ClampHigh,
                threshold: width,
            });
        }
    }

    let automaton = HybridAutomaton {
        parts: g.parts.clone(),
        edges: g.edges.clone(),
        modes,
        guards,
        init: InitState {
            mode: 0,
            x: vec![0.0; g.edges.len()],
        },
        schema_version: 1,
    };
    let violations = validate(&automaton);
    if !violations.is_empty() {
        return Err(Error::Automaton(violations.join("; ")));
    }
    Ok(automaton)
}

fn is_connected(g: &ExtendedKinematicGraph) -> bool {
    let n = g.parts.len();
    let mut dsu: Vec<usize> = (0..n).collect();
    fn root(dsu: &mut Vec<usize>, mut v: usize) -> usize {
        while dsu[v] != v {
            dsu[v] = dsu[dsu[v]];
            v = dsu[v];
        }
        v
    }
    for e in &g.edges {
        if e.i >= n || e.j >= n {
            return false;
        }
        let (a, b) = (root(&mut dsu, e.i), root(&mut dsu, e.j));
        if a != b {
            dsu[a] = b;
        }
    }
    (0..n).all(|v| root(&mut dsu, v) == root(&mut dsu, 0))
}

fn decode_mode(mut id: usize, radices: &[usize]) -> Vec<usize> {
    let mut indices = vec![0; radices.len()];
    for l in (0..radices.len()).rev() {
        indices[l] = id % radices[l];
        id /= radices[l];
    }
    indices
}

fn encode_mode(indices: &[usize], radices: &[usize]) -> usize {
    let mut id = 0;
    for l in 0..radices.len() {
        id = id * radices[l] + indices[l];
    }
    id
}

fn encode_mode_with(indices: &[usize], l: usize, k: usize, radices: &[usize]) -> usize {
    let mut v = indices.to_vec();
    v[l] = k;
    encode_mode(&v, radices)
}

impl HybridAutomaton {
    /// Number of edge coordinates (continuous state dimension).
    pub fn n_coords(&self) -> usize {
        self.edges.len()
    }

    /// Mode offsets `x^q`: cumulative configuration below the active local
    /// model on each coordinate.
    pub fn mode_offset(&self, mode_id: usize) -> Vec<f64> {
        let mode = &self.modes[mode_id];
        self.edges
            .iter()
            .zip(&mode.indices)
            .map(|(e, &k)| e.offset(k))
            .collect()
    }

    /// Global cumulative configuration of a state.
    pub fn global_x(&self, mode_id: usize, x: &[f64]) -> Vec<f64> {
        self.mode_offset(mode_id)
            .iter()
            .zip(x)
            .map(|(o, v)| o + v)
            .collect()
    }

    /// Whether `x` lies in the invariant set of `mode_id`: `[0, w)` per
    /// coordinate, closed at the top for the last local model.
    pub fn in_invariant(&self, mode_id: usize, x: &[f64]) -> bool {
        let mode = &self.modes[mode_id];
        self.edges.iter().zip(&mode.indices).zip(x).all(
            |((e, &k), &v)| {
                let w = e.width(k);
                if k + 1 == e.models.len() {
                    (0.0..=w).contains(&v)
                } else {
                    (0.0..w).contains(&v)
                }
            },
        )
    }

    /// One guarded Euler step `x+ = x + u`, firing at most the transitions
    /// needed to land inside an invariant set (adjacent-model hops; the
    /// extreme modes clamp). Deterministic; coordinates are processed in
    /// edge order.
    pub fn step(&self, mode_id: usize, x: &[f64], u: &[f64]) -> Result<StepOutcome> {
        if mode_id >= self.modes.len() {
            return Err(Error::Automaton(format!("unknown mode {mode_id}")));
        }
        if x.len() != self.n_coords() || u.len() != self.n_coords() {
            return Err(Error::Automaton(format!(
                "state/input dimension mismatch: {} coords, x has {}, u has {}",
                self.n_coords(),
                x.len(),
                u.len()
            )));
        }
        if !self.in_invariant(mode_id, x) {
            return Err(Error::Automaton(format!(
                "state {x:?} violates the invariant of mode {mode_id}"
            )));
        }
        let radices: Vec<usize> = self.edges.iter().map(|e| e.models.len()).collect();
        let mut indices = self.modes[mode_id].indices.clone();
        let mut out_x = vec![0.0; x.len()];
        let mut fired = Vec::new();

        for l in 0..self.n_coords() {
            let edge = &self.edges[l];
            let tag = format!("e{}-{}", edge.i, edge.j);
            let mut k = indices[l];
            let mut v = x[l] + u[l];
            // Walk adjacent models until the value lands inside one; the
            // chain ends are clamped by the boundary self-edges.
            loop {
                let w = edge.width(k);
                if v >= w && !(k + 1 == edge.models.len() && v == w) {
                    if k + 1 < edge.models.len() {
                        fired.push(format!("{tag}:m{k}->m{}", k + 1));
                        v -= w;
                        k += 1;
                    } else {
                        fired.push(format!("{tag}:m{k}:e-1"));
                        v = w;
                        break;
                    }
                } else if v < 0.0 {
                    if k > 0 {
                        fired.push(format!("{tag}:m{k}->m{}", k - 1));
                        k -= 1;
                        v += edge.width(k);
                    } else {
                        fired.push(format!("{tag}:m{k}:e0"));
                        v = 0.0;
                        break;
                    }
                } else {
                    break;
                }
            }
            indices[l] = k;
            out_x[l] = v;
        }

        let mode = encode_mode(&indices, &radices);
        Ok(StepOutcome {
            mode,
            x: out_x,
            fired,
        })
    }
}

/// Check every structural invariant; an empty list means well-formed.
pub fn validate(h: &HybridAutomaton) -> Vec<String> {
    let mut violations = Vec::new();

    let graph = ExtendedKinematicGraph {
        parts: h.parts.clone(),
        edges: h.edges.clone(),
    };
    if h.edges.len() + 1 != h.parts.len() || !is_connected(&graph) {
        violations.push("graph not a tree".to_string());
    }

    for e in &h.edges {
        if e.config_changepoints.len() != e.models.len() + 1
            || e.config_changepoints.first().copied() != Some(0.0)
            || e.config_changepoints.windows(2).any(|w| w[1] <= w[0])
        {
            violations.push(format!(
                "edge e{}-{}: boundaries {:?} not strictly increasing from 0",
                e.i, e.j, e.config_changepoints
            ));
        }
    }

    let radices: Vec<usize> = h.edges.iter().map(|e| e.models.len()).collect();
    let expected: usize = radices.iter().product();
    if h.modes.len() != expected {
        violations.push(format!(
            "mode count {} != product of local model counts {}",
            h.modes.len(),
            expected
        ));
    }
    for (i, m) in h.modes.iter().enumerate() {
        if m.id != i || m.indices.len() != radices.len() {
            violations.push(format!("mode {i} malformed"));
            continue;
        }
        if decode_mode(i, &radices) != m.indices {
            violations.push(format!("mode {i} indices {:?} out of order", m.indices));
        }
    }
    if !violations.is_empty() {
        // Guard checks below index into modes; stop if the skeleton is off.
        return violations;
    }

    for g in &h.guards {
        if g.from >= h.modes.len() || g.to >= h.modes.len() || g.coord >= h.edges.len() {
            violations.push(format!("guard {} references unknown mode/coordinate", g.id));
            continue;
        }
        let from = &h.modes[g.from].indices;
        let to = &h.modes[g.to].indices;
        let k = from[g.coord];
        let width = h.edges[g.coord].width(k);
        match g.kind {
            GuardKind::Upper => {
                if !is_adjacent_move(from, to, g.coord, 1) {
                    violations.push(format!("guard {} is not an adjacent ascent", g.id));
                }
                if (g.threshold - width).abs() > 1e-12 {
                    violations.push(format!(
                        "guard {} leaves a gap: threshold {} vs invariant top {}",
                        g.id, g.threshold, width
                    ));
                }
            }
            GuardKind::Lower => {
                if !is_adjacent_move(from, to, g.coord, -1) {
                    violations.push(format!("guard {} is not an adjacent descent", g.id));
                }
                if g.threshold != 0.0 {
                    violations.push(format!(
                        "guard {} descending threshold must be 0, got {}",
                        g.id, g.threshold
                    ));
                }
            }
            GuardKind::ClampLow | GuardKind::ClampHigh => {
                if g.from != g.to {
                    violations.push(format!("clamp {} must be a self edge", g.id));
                }
            }
        }
    }

    // Every mode carries both boundary self-edges per coordinate.
    for m in &h.modes {
        for l in 0..h.edges.len() {
            let has = |kind: GuardKind| {
                h.guards
                    .iter()
                    .any(|g| g.from == m.id && g.to == m.id && g.coord == l && g.kind == kind)
            };
            if !has(GuardKind::ClampLow) {
                violations.push(format!("mode {} coordinate {l} lacks the e0 clamp", m.id));
            }
            if !has(GuardKind::ClampHigh) {
                violations.push(format!("mode {} coordinate {l} lacks the e-1 clamp", m.id));
            }
        }
    }

    // Cross edges appear exactly where adjacent local models exist.
    for m in &h.modes {
        for (l, &radix) in radices.iter().enumerate() {
            let k = m.indices[l];
            let count = |kind: GuardKind| {
                h.guards
                    .iter()
                    .filter(|g| g.from == m.id && g.coord == l && g.kind == kind)
                    .count()
            };
            let expected_up = usize::from(k + 1 < radix);
            let expected_down = usize::from(k > 0);
            if count(GuardKind::Upper) != expected_up {
                violations.push(format!(
                    "mode {} coordinate {l}: expected {expected_up} ascending guard(s)",
                    m.id
                ));
            }
            if count(GuardKind::Lower) != expected_down {
                violations.push(format!(
                    "mode {} coordinate {l}: expected {expected_down} descending guard(s)",
                    m.id
                ));
            }
        }
    }

    if h.init.mode >= h.modes.len() || !h.in_invariant(h.init.mode, &h.init.x) {
        violations.push("init state outside its mode invariant".to_string());
    }
    if h.schema_version != 1 {
        violations.push(format!("unsupported schema_version {}", h.schema_version));
    }

    violations
}

fn is_adjacent_move(from: &[usize], to: &[usize], coord: usize, delta: i64) -> bool {
    if from.len() != to.len() {
        return false;
    }
    for l in 0..from.len() {
        if l == coord {
            if to[l] as i64 - from[l] as i64 != delta {
                return false;
            }
        } else if from[l] != to[l] {
            return false;
        }
    }
    true
}
