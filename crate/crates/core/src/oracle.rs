//! Independent verification oracle.
//!
//! The oracle never touches the MILP formulation: it checks manageability
//! of single scenarios by enumerating the discrete control choices and the
//! shifter regimes, solving the resulting linear DC equations directly, and
//! it estimates flexibility values by dense scenario sampling combined with
//! bisection along rays. Values are approximate at the sampling resolution,
//! which is why comparisons against the solver carry a resolution-aware
//! slack.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::grid::{redistribution_offsets, Grid};
use crate::region::Region;

/// Consistency tolerance for regime membership and component balance.
const CONSISTENCY_TOL: f64 = 1e-7;
/// Flow-limit tolerance: scenarios exactly on a limit count as manageable.
const LIMIT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Set-point grid step in MW.
    pub x_grid_resolution: f64,
    /// Scenario grid step as a fraction of the host radius.
    pub y_grid_resolution: f64,
    /// Width at which ray bisection of the manageability boundary stops.
    pub delta_bisect_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { x_grid_resolution: 0.25, y_grid_resolution: 0.05, delta_bisect_tol: 1e-6 }
    }
}

impl OracleConfig {
    fn assert_valid(&self) {
        assert!(
            self.x_grid_resolution > 0.0 && self.y_grid_resolution > 0.0 && self.delta_bisect_tol > 0.0,
            "oracle resolutions must be positive"
        );
    }
}

/// Hard cap on total scenario samples per flexibility evaluation; the
/// per-dimension resolution shrinks on high-dimensional grids to respect it.
const SAMPLE_BUDGET: usize = 30_000;

/// Closed-form phase-shifting transformer response: given the uncontrolled
/// angle difference across the device, return the shift angle the five
/// regime law selects and the resulting line flow.
pub fn pst_response(
    threshold: f64,
    shift_min: f64,
    shift_max: f64,
    susceptance: f64,
    theta_diff: f64,
) -> (f64, f64) {
    let u = susceptance * theta_diff;
    if u >= threshold - susceptance * shift_min {
        // Positive saturation: the shifter is at its most negative angle.
        (shift_min, u + susceptance * shift_min)
    } else if u >= threshold {
        // Regulating at +threshold.
        ((threshold - u) / susceptance, threshold)
    } else if u > -threshold {
        (0.0, u)
    } else if u > -threshold - susceptance * shift_max {
        // Regulating at -threshold.
        ((-threshold - u) / susceptance, -threshold)
    } else {
        (shift_max, u + susceptance * shift_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    SatMin,
    RegulatePlus,
    Wait,
    RegulateMinus,
    SatMax,
}

const REGIMES: [Regime; 5] =
    [Regime::SatMin, Regime::RegulatePlus, Regime::Wait, Regime::RegulateMinus, Regime::SatMax];

/// One fully resolved discrete configuration: a merge choice plus a regime
/// per shifter, with the pinned supernode Laplacian factorized so that each
/// scenario check is a single back-substitution.
struct Combo {
    #[allow(dead_code)]
    merge_choice: Option<usize>,
    regimes: Vec<Regime>,
    /// node -> supernode index.
    super_of: Vec<usize>,
    n_super: usize,
    /// supernode -> connected component of the active graph.
    comp_of: Vec<usize>,
    n_comp: usize,
    /// one pinned supernode per component.
    pinned: Vec<usize>,
    /// constant injection adjustment per supernode (fixed regulated flows
    /// and saturated shift offsets moved to the right-hand side).
    adjust: Vec<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Reusable oracle for one grid: all discrete configurations enumerated and
/// factorized up front.
pub struct OracleEngine<'a> {
    grid: &'a Grid,
    combos: Vec<Combo>,
}

impl<'a> OracleEngine<'a> {
    pub fn new(grid: &'a Grid) -> Self {
        let pst_edges: Vec<usize> =
            (0..grid.edges.len()).filter(|&e| grid.edges[e].pst.is_some()).collect();
        let n_regime_combos = 5usize.pow(pst_edges.len() as u32);
        let merge_choices: Vec<Option<usize>> =
            std::iter::once(None).chain((0..grid.merge_pairs.len()).map(Some)).collect();
        assert!(
            n_regime_combos * merge_choices.len() <= 100_000,
            "too many discrete configurations for exhaustive oracle"
        );
        let mut combos = Vec::new();
        for &choice in &merge_choices {
            for code in 0..n_regime_combos {
                let mut c = code;
                let regimes: Vec<Regime> = pst_edges
                    .iter()
                    .map(|_| {
                        let r = REGIMES[c % 5];
                        c /= 5;
                        r
                    })
                    .collect();
                combos.push(build_combo(grid, &pst_edges, choice, regimes));
            }
        }
        OracleEngine { grid, combos }
    }

    /// Net nodal injections for set-points `x` and uncertain offsets `y`,
    /// including the automatic redistribution; None when the total imbalance
    /// exceeds the combined generator range.
    pub fn net_injections(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let grid = self.grid;
        let total: f64 = grid.nodes.iter().map(|n| n.injection0).sum::<f64>()
            + y.iter().sum::<f64>()
            + x.iter().sum::<f64>();
        let dz = redistribution_offsets(grid, x, -total)?;
        let mut p: Vec<f64> = grid.nodes.iter().zip(y).map(|(n, yv)| n.injection0 + yv).collect();
        for (g, _) in grid.generators.iter().enumerate() {
            p[grid.generator_node(g)] += x[g] + dz[g];
        }
        Some(p)
    }

    /// True when some discrete configuration yields a consistent DC state
    /// with every critical flow within its limit.
    pub fn manageable(&self, x: &[f64], y: &[f64]) -> bool {
        let Some(p) = self.net_injections(x, y) else {
            return false;
        };
        self.manageable_injections(&p)
    }

    fn manageable_injections(&self, p: &[f64]) -> bool {
        self.combos.iter().any(|c| self.combo_admits(c, p))
    }

    /// Per-edge flows of the best consistent configuration (smallest worst
    /// relative limit violation), with the merge choice that achieves it;
    /// None when no configuration is consistent.
    pub fn best_flows(&self, x: &[f64], y: &[f64]) -> Option<(Vec<f64>, Option<usize>, f64)> {
        let p = self.net_injections(x, y)?;
        let mut best: Option<(Vec<f64>, Option<usize>, f64)> = None;
        for combo in &self.combos {
            if let Some(flows) = self.combo_flows(combo, &p) {
                let viol = self
                    .grid
                    .edges
                    .iter()
                    .zip(&flows)
                    .filter_map(|(e, f)| e.limit.map(|l| f.abs() / l - 1.0))
                    .fold(f64::NEG_INFINITY, f64::max);
                if best.as_ref().map_or(true, |(_, _, b)| viol < *b) {
                    best = Some((flows, combo.merge_choice, viol));
                }
            }
        }
        best
    }

    fn combo_admits(&self, combo: &Combo, p: &[f64]) -> bool {
        match self.combo_flows(combo, p) {
            Some(flows) => self
                .grid
                .edges
                .iter()
                .zip(&flows)
                .all(|(e, f)| e.limit.map_or(true, |l| f.abs() <= l + LIMIT_TOL)),
            None => false,
        }
    }

    /// DC state of one configuration: None when the component balance or a
    /// regime membership condition fails, otherwise all edge flows.
    fn combo_flows(&self, combo: &Combo, p: &[f64]) -> Option<Vec<f64>> {
        let grid = self.grid;
        let mut q = vec![0.0; combo.n_super];
        for (n, &pn) in p.iter().enumerate() {
            q[combo.super_of[n]] += pn;
        }
        for s in 0..combo.n_super {
            q[s] += combo.adjust[s];
        }
        // Every disconnected component must balance on its own.
        let scale = p.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let mut residual = vec![0.0; combo.n_comp];
        for s in 0..combo.n_super {
            residual[combo.comp_of[s]] += q[s];
        }
        if residual.iter().any(|r| r.abs() > CONSISTENCY_TOL * scale) {
            return None;
        }
        let mut rhs = DVector::from_vec(q);
        for &s in &combo.pinned {
            rhs[s] = 0.0;
        }
        let theta = combo.lu.solve(&rhs)?;
        // Flows and regime consistency.
        let mut flows = Vec::with_capacity(grid.edges.len());
        let mut pst_pos = 0;
        for (e, edge) in grid.edges.iter().enumerate() {
            let (a, b) = grid.edge_nodes(e);
            let (sa, sb) = (combo.super_of[a], combo.super_of[b]);
            let u = edge.susceptance * (theta[sa] - theta[sb]);
            let flow = if let Some(pst) = &edge.pst {
                let regime = combo.regimes[pst_pos];
                pst_pos += 1;
                let h = edge.susceptance;
                let tol = CONSISTENCY_TOL * scale.max(1.0);
                match regime {
                    Regime::SatMin => {
                        if u < pst.threshold - h * pst.shift_min - tol {
                            return None;
                        }
                        u + h * pst.shift_min
                    }
                    Regime::RegulatePlus => {
                        if u < pst.threshold - tol || u > pst.threshold - h * pst.shift_min + tol {
                            return None;
                        }
                        pst.threshold
                    }
                    Regime::Wait => {
                        if u.abs() > pst.threshold + tol {
                            return None;
                        }
                        u
                    }
                    Regime::RegulateMinus => {
                        if u > -pst.threshold + tol || u < -pst.threshold - h * pst.shift_max - tol {
                            return None;
                        }
                        -pst.threshold
                    }
                    Regime::SatMax => {
                        if u > -pst.threshold - h * pst.shift_max + tol {
                            return None;
                        }
                        u + h * pst.shift_max
                    }
                }
            } else {
                u
            };
            flows.push(flow);
        }
        Some(flows)
    }

    /// Approximate flexibility at fixed set-points: the smallest region
    /// value of any unmanageable scenario, found by dense sampling of the
    /// host box plus bisection along rays from the forecast.
    pub fn flexibility_at(&self, region: &Region, x: &[f64], cfg: &OracleConfig) -> f64 {
        cfg.assert_valid();
        let grid = self.grid;
        let y0 = region.y0().to_vec();
        if !self.manageable(x, &y0) {
            return 0.0;
        }
        match region {
            Region::Box(r) => {
                let dims: Vec<usize> = (0..grid.nodes.len())
                    .filter(|&n| r.delta_minus[n] + r.delta_plus[n] > 0.0)
                    .collect();
                if dims.is_empty() {
                    return r.host_radius;
                }
                let host = r.host_radius;
                let mut best = host;
                // Rays through box corners, edges and faces: directions with
                // each active dimension at its negative bound, zero, or its
                // positive bound, scaled so the region value along the ray
                // equals the ray parameter.
                let mut memo: HashMap<i64, Option<Vec<f64>>> = HashMap::new();
                let n_rays = 3usize.pow(dims.len() as u32);
                for code in 1..n_rays {
                    let mut c = code;
                    let mut dir = vec![0.0; grid.nodes.len()];
                    let mut active = false;
                    for &d in &dims {
                        let s = c % 3;
                        c /= 3;
                        dir[d] = match s {
                            1 => -r.delta_minus[d],
                            2 => r.delta_plus[d],
                            _ => 0.0,
                        };
                        active |= dir[d] != 0.0;
                    }
                    if !active {
                        continue;
                    }
                    if let Some(t) =
                        self.ray_boundary(x, &y0, &dir, best.min(host), cfg, &mut memo)
                    {
                        best = best.min(t);
                    }
                }
                // Dense interior sweep to catch boundaries away from the
                // scanned rays.
                let res = grid_resolution(dims.len(), cfg.y_grid_resolution);
                let mut point = vec![0usize; dims.len()];
                loop {
                    let mut y = y0.clone();
                    let mut h = 0.0_f64;
                    for (k, &d) in dims.iter().enumerate() {
                        let lo = y0[d] - host * r.delta_minus[d];
                        let hi = y0[d] + host * r.delta_plus[d];
                        let frac = point[k] as f64 / (res - 1) as f64;
                        y[d] = lo + frac * (hi - lo);
                        let span = if y[d] >= y0[d] { r.delta_plus[d] } else { r.delta_minus[d] };
                        if span > 0.0 {
                            h = h.max((y[d] - y0[d]).abs() / span);
                        }
                    }
                    if h < best && h > 1e-12 && !self.manageable_memo(x, &y, &mut memo) {
                        // Sharpen through this point.
                        let dir: Vec<f64> =
                            y.iter().zip(&y0).map(|(a, b)| (a - b) / h).collect();
                        if let Some(t) = self.ray_boundary(x, &y0, &dir, h, cfg, &mut memo) {
                            best = best.min(t);
                        } else {
                            best = best.min(h);
                        }
                    }
                    if !advance(&mut point, res) {
                        break;
                    }
                }
                best
            }
            Region::Transfer(r) => {
                let bounds = region.host_bounds();
                let dims: Vec<usize> =
                    (0..grid.nodes.len()).filter(|&n| bounds[n].1 > bounds[n].0).collect();
                let host: f64 = r.y_hi.iter().zip(&r.y_lo).map(|(h, l)| (h - l).abs()).sum();
                if dims.is_empty() {
                    return host;
                }
                let res = grid_resolution(dims.len(), cfg.y_grid_resolution);
                let mut best = host;
                let mut point = vec![0usize; dims.len()];
                loop {
                    let mut y = y0.clone();
                    for (k, &d) in dims.iter().enumerate() {
                        let frac = point[k] as f64 / (res - 1) as f64;
                        y[d] = bounds[d].0 + frac * (bounds[d].1 - bounds[d].0);
                    }
                    let h = r.h(grid, x, &y);
                    if h > 1e-9 && h < best && !self.manageable(x, &y) {
                        best = h;
                    }
                    if !advance(&mut point, res) {
                        break;
                    }
                }
                best
            }
        }
    }

    fn manageable_memo(
        &self,
        x: &[f64],
        y: &[f64],
        memo: &mut HashMap<i64, Option<Vec<f64>>>,
    ) -> bool {
        // The redistribution depends on y only through the total imbalance;
        // cache it so dense sweeps pay one bisection per distinct total.
        let grid = self.grid;
        let total: f64 = grid.nodes.iter().map(|n| n.injection0).sum::<f64>()
            + y.iter().sum::<f64>()
            + x.iter().sum::<f64>();
        let key = (total * 1e9).round() as i64;
        let dz = memo
            .entry(key)
            .or_insert_with(|| redistribution_offsets(grid, x, -total))
            .clone();
        let Some(dz) = dz else {
            return false;
        };
        let mut p: Vec<f64> = grid.nodes.iter().zip(y).map(|(n, yv)| n.injection0 + yv).collect();
        for g in 0..grid.generators.len() {
            p[grid.generator_node(g)] += x[g] + dz[g];
        }
        self.manageable_injections(&p)
    }

    /// Smallest ray parameter in (0, cap] where the scenario y0 + t dir
    /// turns unmanageable, sharpened by bisection; None when every sampled
    /// point on the ray is manageable.
    fn ray_boundary(
        &self,
        x: &[f64],
        y0: &[f64],
        dir: &[f64],
        cap: f64,
        cfg: &OracleConfig,
        memo: &mut HashMap<i64, Option<Vec<f64>>>,
    ) -> Option<f64> {
        if cap <= 0.0 {
            return None;
        }
        let samples = 48;
        let at = |t: f64| -> Vec<f64> { y0.iter().zip(dir).map(|(y, d)| y + t * d).collect() };
        let mut lo = 0.0_f64;
        let mut hi = None;
        for i in 1..=samples {
            let t = cap * i as f64 / samples as f64;
            if self.manageable_memo(x, &at(t), memo) {
                lo = t;
            } else {
                hi = Some(t);
                break;
            }
        }
        let mut hi = hi?;
        for _ in 0..200 {
            if hi - lo <= cfg.delta_bisect_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.manageable_memo(x, &at(mid), memo) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

fn grid_resolution(dims: usize, fraction: f64) -> usize {
    // Step `fraction` of the host radius per dimension, capped by the
    // overall sample budget.
    let wanted = (2.0 / fraction).ceil() as usize + 1;
    let cap = (SAMPLE_BUDGET as f64).powf(1.0 / dims as f64).floor() as usize;
    let mut res = wanted.min(cap).clamp(3, 81);
    if res % 2 == 0 {
        res += 1;
    }
    res
}

fn advance(point: &mut [usize], res: usize) -> bool {
    for p in point.iter_mut() {
        *p += 1;
        if *p < res {
            return true;
        }
        *p = 0;
    }
    false
}

fn build_combo(grid: &Grid, pst_edges: &[usize], choice: Option<usize>, regimes: Vec<Regime>) -> Combo {
    let n = grid.nodes.len();
    // Supernode contraction for the closed merge pair, if any.
    let mut super_of: Vec<usize> = (0..n).collect();
    if let Some(b) = choice {
        let (a, bb) = grid.merge_nodes(b);
        let (keep, drop) = if a < bb { (a, bb) } else { (bb, a) };
        super_of[drop] = keep;
    }
    // Compact supernode ids.
    let mut ids: Vec<usize> = vec![usize::MAX; n];
    let mut n_super = 0;
    for node in 0..n {
        let root = super_of[node];
        if ids[root] == usize::MAX {
            ids[root] = n_super;
            n_super += 1;
        }
        super_of[node] = ids[root];
    }
    // Active edges: everything except regulated shifters; saturated and
    // waiting shifters keep their susceptance, with the fixed shift moved
    // into the adjustment vector.
    let mut lap = DMatrix::zeros(n_super, n_super);
    let mut adjust = vec![0.0; n_super];
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_super];
    for (e, edge) in grid.edges.iter().enumerate() {
        let (a, b) = grid.edge_nodes(e);
        let (sa, sb) = (super_of[a], super_of[b]);
        let h = edge.susceptance;
        let (active, shift, fixed_flow) = if let Some(pst) = &edge.pst {
            let pos = pst_edges.iter().position(|&p| p == e).expect("pst edge indexed");
            match regimes[pos] {
                Regime::SatMin => (true, pst.shift_min, 0.0),
                Regime::SatMax => (true, pst.shift_max, 0.0),
                Regime::Wait => (true, 0.0, 0.0),
                Regime::RegulatePlus => (false, 0.0, pst.threshold),
                Regime::RegulateMinus => (false, 0.0, -pst.threshold),
            }
        } else {
            (true, 0.0, 0.0)
        };
        if active {
            if sa != sb {
                lap[(sa, sa)] += h;
                lap[(sb, sb)] += h;
                lap[(sa, sb)] -= h;
                lap[(sb, sa)] -= h;
                adjacency[sa].push(sb);
                adjacency[sb].push(sa);
            }
            adjust[sa] -= h * shift;
            adjust[sb] += h * shift;
        } else {
            adjust[sa] -= fixed_flow;
            adjust[sb] += fixed_flow;
        }
    }
    // Components of the active graph, one pinned supernode each.
    let mut comp_of = vec![usize::MAX; n_super];
    let mut n_comp = 0;
    let mut pinned = Vec::new();
    for start in 0..n_super {
        if comp_of[start] != usize::MAX {
            continue;
        }
        pinned.push(start);
        let mut queue = vec![start];
        comp_of[start] = n_comp;
        while let Some(s) = queue.pop() {
            for &t in &adjacency[s] {
                if comp_of[t] == usize::MAX {
                    comp_of[t] = n_comp;
                    queue.push(t);
                }
            }
        }
        n_comp += 1;
    }
    for &s in &pinned {
        for t in 0..n_super {
            lap[(s, t)] = 0.0;
        }
        lap[(s, s)] = 1.0;
    }
    let lu = lap.lu();
    Combo { merge_choice: choice, regimes, super_of, n_super, comp_of, n_comp, pinned, adjust, lu }
}

/// Single-scenario manageability check with a freshly built engine.
pub fn oracle_manageable(grid: &Grid, x: &[f64], y: &[f64]) -> bool {
    OracleEngine::new(grid).manageable(x, y)
}

/// Approximate flexibility at fixed set-points.
pub fn oracle_flexibility_at(grid: &Grid, region: &Region, x: &[f64], cfg: &OracleConfig) -> f64 {
    OracleEngine::new(grid).flexibility_at(region, x, cfg)
}

/// Approximate maximal flexibility: coarse grid over the balanced set-point
/// polytope followed by one local refinement around the best point.
/// Supports up to three generators (one or two free dimensions).
pub fn oracle_flexibility(grid: &Grid, region: &Region, cfg: &OracleConfig) -> (f64, Vec<f64>) {
    let engine = OracleEngine::new(grid);
    let y0 = region.y0().to_vec();
    let need: f64 = -grid.injection0_total(&y0);
    let gens = &grid.generators;
    assert!(!gens.is_empty(), "grid has no generators");
    assert!(gens.len() <= 3, "exhaustive oracle supports at most three generators");
    let free = gens.len() - 1;
    if free == 0 {
        let x = vec![need];
        if need < gens[0].x_min - 1e-9 || need > gens[0].x_max + 1e-9 {
            return (0.0, x);
        }
        return (engine.flexibility_at(region, &x, cfg), x);
    }
    let evaluate = |centers: &[(f64, f64)], res: usize| -> (f64, Vec<f64>) {
        let mut best = (f64::NEG_INFINITY, vec![0.0; gens.len()]);
        let mut point = vec![0usize; free];
        loop {
            let mut x = vec![0.0; gens.len()];
            let mut ok = true;
            let mut used = 0.0;
            for k in 0..free {
                let (lo, hi) = centers[k];
                let frac = point[k] as f64 / (res - 1) as f64;
                x[k] = lo + frac * (hi - lo);
                used += x[k];
            }
            let last = need - used;
            x[free] = last;
            if last < gens[free].x_min - 1e-9 || last > gens[free].x_max + 1e-9 {
                ok = false;
            }
            for k in 0..free {
                if x[k] < gens[k].x_min - 1e-9 || x[k] > gens[k].x_max + 1e-9 {
                    ok = false;
                }
            }
            if ok {
                let value = engine.flexibility_at(region, &x, cfg);
                if value > best.0 {
                    best = (value, x);
                }
            }
            if !advance(&mut point, res) {
                break;
            }
        }
        best
    };
    let coarse_bounds: Vec<(f64, f64)> = gens[..free].iter().map(|g| (g.x_min, g.x_max)).collect();
    let span = coarse_bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0_f64, f64::max);
    let res = (((span / cfg.x_grid_resolution).ceil() as usize) + 1).clamp(3, 201);
    let coarse = evaluate(&coarse_bounds, res);
    if !coarse.0.is_finite() {
        return (0.0, coarse.1);
    }
    // Refine around the coarse optimum with the same resolution over a
    // window of two coarse steps.
    let fine_bounds: Vec<(f64, f64)> = (0..free)
        .map(|k| {
            let (lo, hi) = coarse_bounds[k];
            let step = (hi - lo) / (res - 1) as f64;
            ((coarse.1[k] - step).max(lo), (coarse.1[k] + step).min(hi))
        })
        .collect();
    let fine = evaluate(&fine_bounds, res);
    if fine.0 > coarse.0 {
        fine
    } else {
        coarse
    }
}
