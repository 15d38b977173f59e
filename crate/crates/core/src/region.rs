//! The two parametrizations of the manageable-uncertainty region: a scaled
//! hyperbox around the forecast and a net A-to-B power-transfer notion.
//! Each exposes its region function h, the fixed host set that contains
//! every parametric region, and assembly of the per-scenario min-nest
//! constraint used by the discretized masters.

use serde::Serialize;

use crate::grid::{self, Grid};
use crate::milp::{encode_min2, Cmp, LinExpr, Model};

/// T(delta) = [y0 - delta_minus * delta, y0 + delta_plus * delta], one
/// offset coordinate per node, contained in the host box of radius
/// `host_radius` (the redistribution uniqueness bound).
#[derive(Debug, Clone, Serialize)]
pub struct HyperboxRegion {
    pub y0: Vec<f64>,
    pub delta_minus: Vec<f64>,
    pub delta_plus: Vec<f64>,
    pub host_radius: f64,
}

impl HyperboxRegion {
    /// Region with the node half-widths from the case file, forecast offset
    /// zero, and the host radius set to the uniqueness bound.
    pub fn from_grid(grid: &Grid) -> Self {
        let y0 = vec![0.0; grid.nodes.len()];
        let delta_minus: Vec<f64> = grid.nodes.iter().map(|n| n.dy_minus).collect();
        let delta_plus: Vec<f64> = grid.nodes.iter().map(|n| n.dy_plus).collect();
        let host_radius =
            grid::uniqueness_bound_raw(grid, &y0, &delta_minus, &delta_plus, grid::DEFAULT_HOST_CAP);
        HyperboxRegion { y0, delta_minus, delta_plus, host_radius }
    }

    /// Smallest delta whose box contains y; +infinity when a pinned
    /// dimension (zero scaling both ways) deviates from the forecast.
    pub fn h(&self, y: &[f64]) -> f64 {
        let mut h = 0.0_f64;
        for i in 0..y.len() {
            let d = y[i] - self.y0[i];
            let up = if d > 0.0 {
                if self.delta_plus[i] > 0.0 {
                    d / self.delta_plus[i]
                } else if d > 1e-12 {
                    return f64::INFINITY;
                } else {
                    0.0
                }
            } else {
                0.0
            };
            let dn = if d < 0.0 {
                if self.delta_minus[i] > 0.0 {
                    -d / self.delta_minus[i]
                } else if d < -1e-12 {
                    return f64::INFINITY;
                } else {
                    0.0
                }
            } else {
                0.0
            };
            h = h.max(up).max(dn);
        }
        h
    }

    /// Host-box bounds per offset coordinate.
    pub fn host_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.y0.len())
            .map(|i| {
                (
                    self.y0[i] - self.delta_minus[i] * self.host_radius,
                    self.y0[i] + self.delta_plus[i] * self.host_radius,
                )
            })
            .collect()
    }

    /// Epigraph rows `h_var >= (y_i - y0_i)/delta_plus_i` and the mirrored
    /// lower side, for a model where the offsets are decision expressions.
    /// Sufficient whenever the optimization pushes h down onto the max.
    pub fn h_epigraph(&self, m: &mut Model, dy: &[LinExpr], h_var: crate::milp::Var) {
        for i in 0..dy.len() {
            if self.delta_plus[i] > 0.0 {
                let row = LinExpr::var(h_var)
                    .plus_expr(&dy[i], -1.0 / self.delta_plus[i])
                    .plus_const(self.y0[i] / self.delta_plus[i]);
                m.add_row(format!("h_up{i}"), row, Cmp::Ge, 0.0);
            } else {
                m.add_row(format!("h_pin_up{i}"), dy[i].clone(), Cmp::Le, self.y0[i]);
            }
            if self.delta_minus[i] > 0.0 {
                let row = LinExpr::var(h_var)
                    .plus_expr(&dy[i], 1.0 / self.delta_minus[i])
                    .plus_const(-self.y0[i] / self.delta_minus[i]);
                m.add_row(format!("h_dn{i}"), row, Cmp::Ge, 0.0);
            } else {
                m.add_row(format!("h_pin_dn{i}"), dy[i].clone(), Cmp::Ge, self.y0[i]);
            }
        }
    }
}

/// Net power-transfer region: flexibility counts every manageable extra
/// transfer from the A node set to the B node set. h is the minimum of the
/// additional A injection and the B decrease, measured net of set-points.
#[derive(Debug, Clone, Serialize)]
pub struct TransferRegion {
    pub nodes_a: Vec<usize>,
    pub nodes_b: Vec<usize>,
    pub gens_a: Vec<usize>,
    pub gens_b: Vec<usize>,
    pub y0: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_hi: Vec<f64>,
}

impl TransferRegion {
    /// Build from the case file's named regions "A" and "B", with the host
    /// box spanned by the node half-widths at the uniqueness-bound radius.
    pub fn from_grid(grid: &Grid) -> Option<Self> {
        let regions = grid.regions.as_ref()?;
        let ids_a = regions.get("A")?;
        let ids_b = regions.get("B")?;
        let nodes_a: Vec<usize> = ids_a.iter().filter_map(|id| grid.node_index(id)).collect();
        let nodes_b: Vec<usize> = ids_b.iter().filter_map(|id| grid.node_index(id)).collect();
        let gens_a = (0..grid.generators.len())
            .filter(|&g| nodes_a.contains(&grid.generator_node(g)))
            .collect();
        let gens_b = (0..grid.generators.len())
            .filter(|&g| nodes_b.contains(&grid.generator_node(g)))
            .collect();
        let host = HyperboxRegion::from_grid(grid);
        let bounds = host.host_bounds();
        Some(TransferRegion {
            nodes_a,
            nodes_b,
            gens_a,
            gens_b,
            y0: host.y0,
            y_lo: bounds.iter().map(|b| b.0).collect(),
            y_hi: bounds.iter().map(|b| b.1).collect(),
        })
    }

    /// Transfer value at a point: uncertain offsets plus the induced
    /// redistribution offsets, summed over each side. Independent of the
    /// merge/PST controls by construction.
    pub fn h(&self, grid: &Grid, x: &[f64], dy: &[f64]) -> f64 {
        let total: f64 = dy.iter().zip(&self.y0).map(|(d, y0)| d - y0).sum();
        let Some(dz) = grid::redistribution_offsets(grid, x, -total) else {
            return f64::NEG_INFINITY;
        };
        let mut a = 0.0;
        for &n in &self.nodes_a {
            a += dy[n] - self.y0[n];
        }
        for &g in &self.gens_a {
            a += dz[g];
        }
        let mut b = 0.0;
        for &n in &self.nodes_b {
            b -= dy[n] - self.y0[n];
        }
        for &g in &self.gens_b {
            b -= dz[g];
        }
        a.min(b)
    }

    /// Exact h as a model variable from offset and redistribution
    /// expressions, via the two-term min encoding.
    pub fn h_exact(
        &self,
        m: &mut Model,
        dy: &[LinExpr],
        dz: &[LinExpr],
        name: &str,
    ) -> crate::milp::Var {
        let mut ea = LinExpr::default();
        for &n in &self.nodes_a {
            ea = ea.plus_expr(&dy[n], 1.0).plus_const(-self.y0[n]);
        }
        for &g in &self.gens_a {
            ea = ea.plus_expr(&dz[g], 1.0);
        }
        let mut eb = LinExpr::default();
        for &n in &self.nodes_b {
            eb = eb.plus_expr(&dy[n], -1.0).plus_const(self.y0[n]);
        }
        for &g in &self.gens_b {
            eb = eb.plus_expr(&dz[g], -1.0);
        }
        encode_min2(m, &ea, &eb, name)
    }

    pub fn host_bounds(&self) -> Vec<(f64, f64)> {
        self.y_lo.iter().zip(&self.y_hi).map(|(&l, &h)| (l, h)).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Region {
    Box(HyperboxRegion),
    Transfer(TransferRegion),
}

impl Region {
    pub fn host_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Region::Box(r) => r.host_bounds(),
            Region::Transfer(r) => r.host_bounds(),
        }
    }

    pub fn y0(&self) -> &[f64] {
        match self {
            Region::Box(r) => &r.y0,
            Region::Transfer(r) => &r.y0,
        }
    }
}

/// The normalization constant for the min-nest scaling: alpha is chosen as
/// alpha_prime divided by a problem-scale value so that the two branches of
/// the min are comparable (1 for the hyperbox, the optimistic transfer
/// value for the transfer region).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlphaScaling {
    pub alpha_prime: f64,
    pub delta_norm: f64,
}

impl AlphaScaling {
    pub fn alpha(&self) -> f64 {
        assert!(self.delta_norm > 0.0, "delta_norm must be positive");
        self.alpha_prime / self.delta_norm
    }
}

/// Add the per-scenario disjunctive constraint `min{terms} <= rhs` using
/// one binary per term: term_k <= rhs + M(1-b_k), sum b_k >= 1. Used by the
/// discretized upper level, where only the "<=" direction is needed.
pub fn min_nest_le(m: &mut Model, terms: &[LinExpr], rhs: f64, name: &str) {
    assert!(!terms.is_empty());
    let mut pick = LinExpr::default();
    for (k, t) in terms.iter().enumerate() {
        let big = m.big_m(t) + rhs.abs();
        let b = m.add_bin(format!("{name}_act{k}"));
        let row = LinExpr::default().plus_expr(t, 1.0).plus(big, b);
        m.add_row(format!("{name}_le{k}"), row, Cmp::Le, rhs + big);
        pick = pick.plus(1.0, b);
    }
    m.add_row(format!("{name}_pick"), pick, Cmp::Ge, 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> HyperboxRegion {
        HyperboxRegion {
            y0: vec![0.0, 0.0],
            delta_minus: vec![1.0, 2.0],
            delta_plus: vec![1.0, 1.0],
            host_radius: 3.0,
        }
    }

    #[test]
    fn h_box_examples() {
        let r = region();
        assert_eq!(r.h(&[0.0, 0.0]), 0.0);
        // y = y0 + 0.7 * delta_plus
        assert!((r.h(&[0.7, 0.7]) - 0.7).abs() < 1e-12);
        // mixed signs: (0.5/1, 1.0/2) -> 0.5
        assert!((r.h(&[0.5, -1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn h_box_pinned_dimension_sentinel() {
        let mut r = region();
        r.delta_plus[0] = 0.0;
        r.delta_minus[0] = 0.0;
        assert_eq!(r.h(&[0.5, 0.0]), f64::INFINITY);
        assert_eq!(r.h(&[0.0, 0.5]), 0.5);
    }

    #[test]
    fn h_box_positive_homogeneity() {
        let r = region();
        let y = [0.8, -1.7];
        for s in [0.0, 0.3, 1.0, 2.5] {
            let scaled = [s * y[0], s * y[1]];
            assert!((r.h(&scaled) - s * r.h(&y)).abs() < 1e-9);
        }
    }

    #[test]
    fn membership_equivalence_random() {
        // y in T(delta) iff h(y) <= delta.
        let r = region();
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut rnd = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let y = [8.0 * rnd() - 4.0, 8.0 * rnd() - 4.0];
            let delta = 3.0 * rnd();
            let inside = (0..2).all(|i| {
                y[i] >= r.y0[i] - r.delta_minus[i] * delta - 1e-12
                    && y[i] <= r.y0[i] + r.delta_plus[i] * delta + 1e-12
            });
            assert_eq!(inside, r.h(&y) <= delta + 1e-12, "y = {y:?}, delta = {delta}");
        }
    }

    #[test]
    fn alpha_scaling_divides() {
        let a = AlphaScaling { alpha_prime: 0.5, delta_norm: 2.0 };
        assert!((a.alpha() - 0.25).abs() < 1e-15);
    }
}
