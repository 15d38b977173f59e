//! Domain types for the grid, case-file ingestion, structural validation,
//! and the redistribution uniqueness bound that seeds the host-set radius.
//!
//! Units are fixed: MW for power, radians for angles, MW/rad for
//! susceptance. Every case file names a reference node whose angle is
//! pinned to zero, since DC angles are otherwise determined only up to a
//! constant.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angle variables default to this symmetric bound (rad) unless a model
/// builder overrides it; wide enough that it never binds on sane data while
/// keeping big-M constants finite.
pub const DEFAULT_ANGLE_BOUND: f64 = 8.0 * std::f64::consts::PI;

/// Cap applied to the host radius when the uncertainty scaling is degenerate
/// (all half-widths zero), where the bound would otherwise be infinite.
pub const DEFAULT_HOST_CAP: f64 = 1.0e6;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

impl GridError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        GridError::Schema { path: path.into(), message: message.into() }
    }
}

/// A bus. Generator buses may also carry uncertainty, so every node has the
/// predicted injection and both uncertainty half-widths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub injection0: f64,
    #[serde(default)]
    pub dy_minus: f64,
    #[serde(default)]
    pub dy_plus: f64,
}

/// A controllable set-point with bounds, its bus, and the contribution
/// factor used by proportional load redistribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub node: String,
    pub x_min: f64,
    pub x_max: f64,
    pub contribution: f64,
}

/// Phase-shifting transformer parameters: the flow threshold at which the
/// device starts regulating and the shift bounds at which it saturates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PstSpec {
    pub threshold: f64,
    pub shift_min: f64,
    pub shift_max: f64,
}

/// A transmission line. An edge carrying a `limit` is a critical edge whose
/// flow magnitude is constrained; edges without a limit are unconstrained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    pub susceptance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pst: Option<PstSpec>,
}

/// A bus-coupler candidate: closing it forces the two buses onto one angle.
/// At most one pair may be closed in any control decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergePair {
    pub id: String,
    pub node_a: String,
    pub node_b: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Units {
    pub power: String,
    pub angle: String,
}

impl Default for Units {
    fn default() -> Self {
        Units { power: "MW".into(), angle: "rad".into() }
    }
}

/// A validated grid. Node/generator/edge cross-references are resolved into
/// indices at parse time; the struct is immutable afterwards and safe to
/// share across concurrent procedures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    #[serde(default)]
    pub units: Units,
    pub reference_node: String,
    pub nodes: Vec<Node>,
    pub generators: Vec<Generator>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub merge_pairs: Vec<MergePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<BTreeMap<String, Vec<String>>>,
}

impl Grid {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    /// Node index of the reference bus (validated to exist).
    pub fn reference_index(&self) -> usize {
        self.node_index(&self.reference_node).expect("validated")
    }

    /// Resolved endpoint indices of an edge.
    pub fn edge_nodes(&self, e: usize) -> (usize, usize) {
        let edge = &self.edges[e];
        (self.node_index(&edge.from).expect("validated"), self.node_index(&edge.to).expect("validated"))
    }

    /// Resolved endpoint indices of a merge pair.
    pub fn merge_nodes(&self, b: usize) -> (usize, usize) {
        let pair = &self.merge_pairs[b];
        (self.node_index(&pair.node_a).expect("validated"), self.node_index(&pair.node_b).expect("validated"))
    }

    /// Bus index of a generator.
    pub fn generator_node(&self, g: usize) -> usize {
        self.node_index(&self.generators[g].node).expect("validated")
    }

    /// Indices of edges that carry a flow limit.
    pub fn critical_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].limit.is_some()).collect()
    }

    /// Sum of predicted injections plus any forecast offsets; the set-point
    /// balance requires the generators to inject the negative of this.
    pub fn injection0_total(&self, y0: &[f64]) -> f64 {
        self.nodes.iter().map(|n| n.injection0).sum::<f64>() + y0.iter().sum::<f64>()
    }

    /// A bound on the magnitude any single line flow can attain, derived
    /// from the largest possible nodal injections; used to size big-M
    /// constants for merge-coupler flows.
    pub fn flow_cap(&self, host_radius: f64) -> f64 {
        let mut cap = 0.0;
        for n in &self.nodes {
            cap += n.injection0.abs() + host_radius * n.dy_minus.max(n.dy_plus);
        }
        for g in &self.generators {
            cap += g.x_min.abs().max(g.x_max.abs());
        }
        // Redistribution offsets are bounded by the generator ranges, which
        // the x_min/x_max magnitudes above already cover once; double the
        // generator share to cover set-point plus offset.
        for g in &self.generators {
            cap += g.x_max - g.x_min;
        }
        cap.max(1.0)
    }

    /// Validate all invariants that are not pure schema shape.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.nodes.is_empty() {
            return Err(GridError::schema("nodes", "at least one node is required"));
        }
        let mut seen = HashSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !seen.insert(n.id.clone()) {
                return Err(GridError::schema(format!("nodes[{i}].id"), format!("duplicate node id {:?}", n.id)));
            }
            if n.dy_minus < 0.0 || n.dy_plus < 0.0 {
                return Err(GridError::schema(
                    format!("nodes[{i}]"),
                    "uncertainty half-widths must be nonnegative",
                ));
            }
        }
        if self.node_index(&self.reference_node).is_none() {
            return Err(GridError::schema("reference_node", format!("unknown node {:?}", self.reference_node)));
        }
        let mut csum = 0.0;
        let mut seen = HashSet::new();
        for (i, g) in self.generators.iter().enumerate() {
            if !seen.insert(g.id.clone()) {
                return Err(GridError::schema(format!("generators[{i}].id"), format!("duplicate generator id {:?}", g.id)));
            }
            if self.node_index(&g.node).is_none() {
                return Err(GridError::schema(format!("generators[{i}].node"), format!("unknown node {:?}", g.node)));
            }
            if g.x_min > g.x_max {
                return Err(GridError::schema(format!("generators[{i}]"), "x_min exceeds x_max"));
            }
            if g.contribution < 0.0 {
                return Err(GridError::schema(format!("generators[{i}].contribution"), "must be nonnegative"));
            }
            csum += g.contribution;
        }
        if !self.generators.is_empty() && (csum - 1.0).abs() > 1e-9 {
            return Err(GridError::schema("generators", format!("contribution factors sum to {csum}")));
        }
        let mut seen = HashSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            if !seen.insert(e.id.clone()) {
                return Err(GridError::schema(format!("edges[{i}].id"), format!("duplicate edge id {:?}", e.id)));
            }
            for (field, id) in [("from", &e.from), ("to", &e.to)] {
                if self.node_index(id).is_none() {
                    return Err(GridError::schema(format!("edges[{i}].{field}"), format!("unknown node {:?}", id)));
                }
            }
            if e.susceptance <= 0.0 {
                return Err(GridError::schema(format!("edges[{i}].susceptance"), "must be positive"));
            }
            if let Some(l) = e.limit {
                if l <= 0.0 {
                    return Err(GridError::schema(format!("edges[{i}].limit"), "must be positive"));
                }
            }
            if let Some(p) = &e.pst {
                if p.threshold < 0.0 {
                    return Err(GridError::schema(format!("edges[{i}].pst.threshold"), "must be nonnegative"));
                }
                if !(p.shift_min <= 0.0 && 0.0 <= p.shift_max) {
                    return Err(GridError::schema(
                        format!("edges[{i}].pst"),
                        "shift bounds must straddle zero (shift_min <= 0 <= shift_max)",
                    ));
                }
            }
        }
        let mut seen = HashSet::new();
        for (i, b) in self.merge_pairs.iter().enumerate() {
            if !seen.insert(b.id.clone()) {
                return Err(GridError::schema(format!("merge_pairs[{i}].id"), format!("duplicate merge id {:?}", b.id)));
            }
            for (field, id) in [("node_a", &b.node_a), ("node_b", &b.node_b)] {
                if self.node_index(id).is_none() {
                    return Err(GridError::schema(format!("merge_pairs[{i}].{field}"), format!("unknown node {:?}", id)));
                }
            }
            if b.node_a == b.node_b {
                return Err(GridError::schema(format!("merge_pairs[{i}]"), "node_a equals node_b"));
            }
        }
        if let Some(regions) = &self.regions {
            let mut assigned: HashMap<&str, &str> = HashMap::new();
            for (name, ids) in regions {
                for id in ids {
                    if self.node_index(id).is_none() {
                        return Err(GridError::schema(format!("regions.{name}"), format!("unknown node {:?}", id)));
                    }
                    if let Some(other) = assigned.insert(id, name) {
                        return Err(GridError::schema(
                            format!("regions.{name}"),
                            format!("node {:?} already belongs to region {:?}", id, other),
                        ));
                    }
                }
            }
        }
        self.check_connected()?;
        Ok(())
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for e in 0..self.edges.len() {
            let (a, b) = self.edge_nodes(e);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(GridError::schema(
                format!("nodes[{i}]"),
                format!("node {:?} is disconnected from the closed-line graph", self.nodes[i].id),
            ));
        }
        Ok(())
    }
}

/// Parse and validate a case file. In strict mode (the default), unknown
/// keys anywhere in the document are rejected; `lenient` ignores them.
pub fn parse_grid(path: &Path, lenient: bool) -> Result<Grid, GridError> {
    let text = std::fs::read_to_string(path)?;
    parse_grid_str(&text, lenient)
}

pub fn parse_grid_str(text: &str, lenient: bool) -> Result<Grid, GridError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if !lenient {
        check_known_keys(&value)?;
    }
    let grid: Grid = serde_json::from_value(value)?;
    grid.validate()?;
    Ok(grid)
}

fn check_known_keys(value: &serde_json::Value) -> Result<(), GridError> {
    let check = |obj: &serde_json::Value, path: &str, allowed: &[&str]| -> Result<(), GridError> {
        if let Some(map) = obj.as_object() {
            for key in map.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(GridError::schema(format!("{path}.{key}"), "unknown key (strict mode)"));
                }
            }
        }
        Ok(())
    };
    check(value, "$", &["units", "reference_node", "nodes", "generators", "edges", "merge_pairs", "regions"])?;
    check(&value["units"], "units", &["power", "angle"])?;
    for (i, n) in value["nodes"].as_array().into_iter().flatten().enumerate() {
        check(n, &format!("nodes[{i}]"), &["id", "injection0", "dy_minus", "dy_plus"])?;
    }
    for (i, g) in value["generators"].as_array().into_iter().flatten().enumerate() {
        check(g, &format!("generators[{i}]"), &["id", "node", "x_min", "x_max", "contribution"])?;
    }
    for (i, e) in value["edges"].as_array().into_iter().flatten().enumerate() {
        check(e, &format!("edges[{i}]"), &["id", "from", "to", "susceptance", "limit", "pst"])?;
        check(&e["pst"], &format!("edges[{i}].pst"), &["threshold", "shift_min", "shift_max"])?;
    }
    for (i, b) in value["merge_pairs"].as_array().into_iter().flatten().enumerate() {
        check(b, &format!("merge_pairs[{i}]"), &["id", "node_a", "node_b"])?;
    }
    Ok(())
}

/// Largest host radius for which the scaled hyperbox keeps the total
/// uncertain imbalance coverable by the generators regardless of the chosen
/// set-points, so the redistribution response exists and is unique
/// everywhere in the host set.
///
/// With S0 the total predicted injection (loads plus forecast offsets), the
/// generators must together absorb -(S0 + total offset), which is possible
/// iff the offset stays within [-(sum x_max) - S0, -(sum x_min) - S0].
pub fn uniqueness_bound(grid: &Grid, region: &crate::region::HyperboxRegion) -> f64 {
    uniqueness_bound_raw(grid, &region.y0, &region.delta_minus, &region.delta_plus, DEFAULT_HOST_CAP)
}

pub fn uniqueness_bound_raw(grid: &Grid, y0: &[f64], delta_minus: &[f64], delta_plus: &[f64], cap: f64) -> f64 {
    let s0 = grid.injection0_total(y0);
    let x_min_total: f64 = grid.generators.iter().map(|g| g.x_min).sum();
    let x_max_total: f64 = grid.generators.iter().map(|g| g.x_max).sum();
    // Nominal point must itself be coverable.
    if s0 < -x_max_total - 1e-12 || s0 > -x_min_total + 1e-12 {
        return 0.0;
    }
    let sum_plus: f64 = delta_plus.iter().sum();
    let sum_minus: f64 = delta_minus.iter().sum();
    let up = if sum_plus > 0.0 { (-x_min_total - s0) / sum_plus } else { f64::INFINITY };
    let down = if sum_minus > 0.0 { (x_max_total + s0) / sum_minus } else { f64::INFINITY };
    up.min(down).min(cap).max(0.0)
}

/// Closed-form load redistribution: offsets that change the total generator
/// output by `di_total` by moving every generator along its contribution
/// factor, clamped at its bounds. Returns `None` when the demanded total is
/// outside the reachable range (the uniqueness condition is violated).
///
/// The clamped sum is monotone in the scalar drive t, so bisection on t
/// recovers the unique offset vector.
pub fn redistribution_offsets(grid: &Grid, x: &[f64], di_total: f64) -> Option<Vec<f64>> {
    let gens = &grid.generators;
    assert_eq!(x.len(), gens.len());
    let reach_min: f64 = gens.iter().zip(x).map(|(g, xv)| g.x_min - xv).sum();
    let reach_max: f64 = gens.iter().zip(x).map(|(g, xv)| g.x_max - xv).sum();
    if di_total < reach_min - 1e-9 || di_total > reach_max + 1e-9 {
        return None;
    }
    let sum_at = |t: f64| -> f64 {
        gens.iter()
            .zip(x)
            .map(|(g, xv)| (xv + g.contribution * t).clamp(g.x_min, g.x_max) - xv)
            .sum()
    };
    // Scale of t needed to saturate every generator.
    let mut t_span = 1.0;
    for g in gens {
        if g.contribution > 0.0 {
            t_span = f64::max(t_span, (g.x_max - g.x_min) / g.contribution);
        }
    }
    let (mut lo, mut hi) = (-t_span, t_span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sum_at(mid) < di_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let offsets: Vec<f64> = gens
        .iter()
        .zip(x)
        .map(|(g, xv)| (xv + g.contribution * t).clamp(g.x_min, g.x_max) - xv)
        .collect();
    // Bisection can leave a residual when the target sits exactly on a
    // saturation plateau; distribute it over unsaturated generators.
    let mut rest = di_total - offsets.iter().sum::<f64>();
    let mut offsets = offsets;
    if rest.abs() > 1e-9 {
        for (i, g) in gens.iter().enumerate() {
            let room = if rest > 0.0 { g.x_max - (x[i] + offsets[i]) } else { g.x_min - (x[i] + offsets[i]) };
            let take = if rest > 0.0 { rest.min(room) } else { rest.max(room) };
            offsets[i] += take;
            rest -= take;
            if rest.abs() <= 1e-12 {
                break;
            }
        }
        if rest.abs() > 1e-7 {
            return None;
        }
    }
    Some(offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::HyperboxRegion;

    fn two_node_text() -> String {
        r#"{
            "reference_node": "A",
            "nodes": [
                {"id": "A", "injection0": 0.0},
                {"id": "B", "injection0": -2.0, "dy_minus": 1.0, "dy_plus": 1.0}
            ],
            "generators": [{"id": "g", "node": "A", "x_min": -10.0, "x_max": 10.0, "contribution": 1.0}],
            "edges": [{"id": "L", "from": "A", "to": "B", "susceptance": 1.0, "limit": 5.0}],
            "merge_pairs": []
        }"#
        .into()
    }

    #[test]
    fn parses_minimal_two_node_case() {
        let grid = parse_grid_str(&two_node_text(), false).unwrap();
        assert_eq!(grid.nodes.len(), 2);
        assert_eq!(grid.edges.len(), 1);
        assert_eq!(grid.generators.len(), 1);
    }

    #[test]
    fn rejects_bad_contribution_sum() {
        let text = two_node_text().replace("\"contribution\": 1.0", "\"contribution\": 1.2");
        let err = parse_grid_str(&text, false).unwrap_err();
        assert!(err.to_string().contains("contribution factors sum to 1.2"), "{err}");
    }

    #[test]
    fn strict_mode_rejects_unknown_keys() {
        let text = two_node_text().replace("\"merge_pairs\": []", "\"merge_pairs\": [], \"comment\": \"x\"");
        assert!(parse_grid_str(&text, false).is_err());
        assert!(parse_grid_str(&text, true).is_ok());
    }

    #[test]
    fn rejects_dangling_reference() {
        let text = two_node_text().replace("\"to\": \"B\"", "\"to\": \"Z\"");
        let err = parse_grid_str(&text, false).unwrap_err();
        assert!(err.to_string().contains("unknown node"), "{err}");
    }

    #[test]
    fn rejects_nonpositive_susceptance() {
        let text = two_node_text().replace("\"susceptance\": 1.0", "\"susceptance\": 0.0");
        assert!(parse_grid_str(&text, false).is_err());
    }

    #[test]
    fn uniqueness_bound_two_node_is_eight() {
        let grid = parse_grid_str(&two_node_text(), false).unwrap();
        let region = HyperboxRegion::from_grid(&grid);
        // Total predicted injection is -2; the generator covers offsets in
        // [-8, 12], so the symmetric box is limited to radius 8.
        assert!((uniqueness_bound(&grid, &region) - 8.0).abs() < 1e-12);
        assert!((region.host_radius - 8.0).abs() < 1e-12);
    }

    #[test]
    fn uniqueness_bound_caps_degenerate_region() {
        let grid = parse_grid_str(&two_node_text(), false).unwrap();
        let bound = uniqueness_bound_raw(&grid, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], DEFAULT_HOST_CAP);
        assert_eq!(bound, DEFAULT_HOST_CAP);
    }

    #[test]
    fn uniqueness_bound_zero_when_nominal_uncoverable() {
        let text = two_node_text().replace("\"x_max\": 10.0", "\"x_max\": 1.0");
        let grid = parse_grid_str(&text, false).unwrap();
        // Loads total -2 but the generator tops out at 1.
        let bound = uniqueness_bound_raw(&grid, &[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], DEFAULT_HOST_CAP);
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn redistribution_matches_hand_values() {
        // Two generators, c = (0.5, 0.5), bounds +/-1 and +/-10, x = 0:
        // a demand of 3 drives t to 4, clamping the first at 1.
        let grid = parse_grid_str(
            r#"{
                "reference_node": "A",
                "nodes": [{"id": "A", "injection0": 0.0}, {"id": "B", "injection0": 0.0}],
                "generators": [
                    {"id": "g1", "node": "A", "x_min": -1.0, "x_max": 1.0, "contribution": 0.5},
                    {"id": "g2", "node": "B", "x_min": -10.0, "x_max": 10.0, "contribution": 0.5}
                ],
                "edges": [{"id": "L", "from": "A", "to": "B", "susceptance": 1.0}],
                "merge_pairs": []
            }"#,
            false,
        )
        .unwrap();
        let offs = redistribution_offsets(&grid, &[0.0, 0.0], 3.0).unwrap();
        assert!((offs[0] - 1.0).abs() < 1e-7 && (offs[1] - 2.0).abs() < 1e-7);
        let offs = redistribution_offsets(&grid, &[0.0, 0.0], 0.0).unwrap();
        assert!(offs[0].abs() < 1e-7 && offs[1].abs() < 1e-7);
        // Demand beyond total capacity violates the uniqueness condition.
        assert!(redistribution_offsets(&grid, &[0.0, 0.0], 12.0).is_none());
    }
}
