//! Builds the grid-physics constraint blocks into a MILP model: DC flow
//! equations with nodal balance, the five-regime phase-shifter law, the
//! single-bus-merge disjunction, proportional load redistribution through
//! the clamp encoding, and the scalar violation measure over critical
//! edges. Each of x (set-points), y (uncertain offsets) and z (controls)
//! can be designated fixed or decision per subproblem.

use crate::grid::{Grid, DEFAULT_ANGLE_BOUND};
use crate::milp::{encode_abs, encode_clamp, encode_max_eq, Cmp, LinExpr, Model, Var};

/// Whether a variable group is pinned to values or left to the solver.
#[derive(Debug, Clone)]
pub enum Role {
    Fixed(Vec<f64>),
    Decision,
}

/// Control-variable role: `Base` is the no-action assignment (every merge
/// open, phase shifters following their law), `Decision` leaves the merge
/// choice to the solver, `FixedMerge` pins one specific choice (used by the
/// pooled worst-case blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZRole {
    Base,
    Decision,
    FixedMerge(Option<usize>),
}

/// Set-point and offset expressions shared by every physics block of a
/// model (the same scenario can be evaluated under several pinned controls).
#[derive(Debug, Clone)]
pub struct Injections {
    pub x: Vec<LinExpr>,
    pub dy: Vec<LinExpr>,
}

/// Redistribution variables: the scalar drive, the clamped absolute
/// generator outputs, and the resulting offsets.
#[derive(Debug, Clone)]
pub struct Redistribution {
    pub t: Var,
    pub out: Vec<Var>,
    pub dz: Vec<LinExpr>,
}

/// One physics block: angles, flows, shifts and merge controls for a single
/// control assignment.
#[derive(Debug, Clone)]
pub struct PhysicsBlock {
    pub theta: Vec<Var>,
    pub flow: Vec<Var>,
    pub shift: Vec<Option<Var>>,
    pub merge_p: Vec<Var>,
    pub merge_flow: Vec<Var>,
}

/// Create the set-point and offset expressions. Decision set-points get a
/// balance row (predicted injections must sum to zero); fixed values are
/// inlined as constants. `y_bounds` bounds decision offsets (host box).
pub fn injection_exprs(
    m: &mut Model,
    grid: &Grid,
    x_role: &Role,
    y_role: &Role,
    y0: &[f64],
    y_bounds: &[(f64, f64)],
) -> Injections {
    let x: Vec<LinExpr> = match x_role {
        Role::Fixed(values) => values.iter().map(|&v| LinExpr::constant(v)).collect(),
        Role::Decision => {
            let vars: Vec<Var> = grid
                .generators
                .iter()
                .map(|g| m.add_cont(format!("x_{}", g.id), g.x_min, g.x_max))
                .collect();
            let mut balance = LinExpr::constant(grid.injection0_total(y0));
            for &v in &vars {
                balance = balance.plus(1.0, v);
            }
            m.add_row("x_balance", balance, Cmp::Eq, 0.0);
            vars.into_iter().map(LinExpr::var).collect()
        }
    };
    let dy: Vec<LinExpr> = match y_role {
        Role::Fixed(values) => values.iter().map(|&v| LinExpr::constant(v)).collect(),
        Role::Decision => (0..grid.nodes.len())
            .map(|n| LinExpr::var(m.add_cont(format!("dy_{}", grid.nodes[n].id), y_bounds[n].0, y_bounds[n].1)))
            .collect(),
    };
    Injections { x, dy }
}

/// Proportional load redistribution: every generator moves along its
/// contribution factor under a shared scalar drive, clamped at its bounds,
/// and the clamped outputs absorb the total uncertain imbalance exactly.
/// The clamped sum is monotone in the drive, so the offsets are unique; the
/// model is infeasible iff the imbalance exceeds the reachable range.
pub fn add_redistribution(m: &mut Model, grid: &Grid, inj: &Injections) -> Redistribution {
    let mut t_span = 1.0;
    for g in &grid.generators {
        if g.contribution > 0.0 {
            t_span = f64::max(t_span, (g.x_max - g.x_min) / g.contribution + 1.0);
        }
    }
    let t = m.add_cont("redist_t", -t_span, t_span);
    let mut out = Vec::with_capacity(grid.generators.len());
    let mut dz = Vec::with_capacity(grid.generators.len());
    for (gi, g) in grid.generators.iter().enumerate() {
        let input = inj.x[gi].clone().plus(g.contribution, t);
        let o = encode_clamp(m, &input, g.x_min, g.x_max, &format!("out_{}", g.id));
        dz.push(LinExpr::var(o).plus_expr(&inj.x[gi], -1.0));
        out.push(o);
    }
    // Total power balance: predicted injections + offsets + outputs = 0.
    let mut balance = LinExpr::constant(grid.nodes.iter().map(|n| n.injection0).sum());
    for d in &inj.dy {
        balance = balance.plus_expr(d, 1.0);
    }
    for &o in &out {
        balance = balance.plus(1.0, o);
    }
    m.add_row("power_balance", balance, Cmp::Eq, 0.0);
    Redistribution { t, out, dz }
}

/// DC flow physics for one control assignment: flow equations, reference
/// angle, nodal balance with composed injections, merge disjunctions and
/// the phase-shifter law on PST edges.
pub fn add_dc_physics(
    m: &mut Model,
    grid: &Grid,
    inj: &Injections,
    redist: &Redistribution,
    z: ZRole,
    angle_bound: f64,
    host_radius: f64,
    tag: &str,
) -> PhysicsBlock {
    let theta: Vec<Var> = (0..grid.nodes.len())
        .map(|n| {
            if n == grid.reference_index() {
                m.add_cont(format!("th{tag}_{}", grid.nodes[n].id), 0.0, 0.0)
            } else {
                m.add_cont(format!("th{tag}_{}", grid.nodes[n].id), -angle_bound, angle_bound)
            }
        })
        .collect();
    let mut flow = Vec::with_capacity(grid.edges.len());
    let mut shift = Vec::with_capacity(grid.edges.len());
    for (ei, e) in grid.edges.iter().enumerate() {
        let (a, b) = grid.edge_nodes(ei);
        let sh = e.pst.as_ref().map(|p| m.add_cont(format!("sh{tag}_{}", e.id), p.shift_min, p.shift_max));
        let shift_span = e.pst.as_ref().map(|p| p.shift_max - p.shift_min).unwrap_or(0.0);
        let cap = e.susceptance * (2.0 * angle_bound + shift_span);
        let p = m.add_cont(format!("p{tag}_{}", e.id), -cap, cap);
        let mut row = LinExpr::var(p).plus(-e.susceptance, theta[a]).plus(e.susceptance, theta[b]);
        if let Some(sv) = sh {
            row = row.plus(-e.susceptance, sv);
        }
        m.add_row(format!("flow{tag}_{}", e.id), row, Cmp::Eq, 0.0);
        flow.push(p);
        shift.push(sh);
    }
    let (merge_p, merge_flow) = add_merge_control(m, grid, &theta, z, angle_bound, host_radius, tag);
    // Nodal balance: composed injection equals net outgoing flow.
    for n in 0..grid.nodes.len() {
        let mut row = LinExpr::constant(grid.nodes[n].injection0).plus_expr(&inj.dy[n], 1.0);
        for (gi, _) in grid.generators.iter().enumerate() {
            if grid.generator_node(gi) == n {
                row = row.plus(1.0, redist.out[gi]);
            }
        }
        for (ei, _) in grid.edges.iter().enumerate() {
            let (a, b) = grid.edge_nodes(ei);
            if a == n {
                row = row.plus(-1.0, flow[ei]);
            }
            if b == n {
                row = row.plus(1.0, flow[ei]);
            }
        }
        for (bi, _) in grid.merge_pairs.iter().enumerate() {
            let (a, b) = grid.merge_nodes(bi);
            if a == n {
                row = row.plus(-1.0, merge_flow[bi]);
            }
            if b == n {
                row = row.plus(1.0, merge_flow[bi]);
            }
        }
        m.add_row(format!("bal{tag}_{}", grid.nodes[n].id), row, Cmp::Eq, 0.0);
    }
    let block = PhysicsBlock { theta, flow, shift, merge_p, merge_flow };
    for (ei, e) in grid.edges.iter().enumerate() {
        if e.pst.is_some() {
            add_pst_law(m, grid, &block, ei, tag);
        }
    }
    block
}

/// Bus-merge disjunction: an open pair contributes no flow; a closed pair
/// pins the two bus angles together and carries whatever flow balance
/// requires. At most one pair may be closed.
fn add_merge_control(
    m: &mut Model,
    grid: &Grid,
    theta: &[Var],
    z: ZRole,
    angle_bound: f64,
    host_radius: f64,
    tag: &str,
) -> (Vec<Var>, Vec<Var>) {
    let cap = grid.flow_cap(host_radius);
    let mut merge_p = Vec::new();
    let mut merge_flow = Vec::new();
    for (bi, pair) in grid.merge_pairs.iter().enumerate() {
        let p = m.add_bin(format!("merge{tag}_{}", pair.id));
        match z {
            ZRole::Base => m.fix(p, 0.0),
            ZRole::FixedMerge(choice) => m.fix(p, if choice == Some(bi) { 1.0 } else { 0.0 }),
            ZRole::Decision => {}
        }
        let f = m.add_cont(format!("pm{tag}_{}", pair.id), -cap, cap);
        m.add_row(format!("m{tag}_{}_f_up", pair.id), LinExpr::var(f).plus(-cap, p), Cmp::Le, 0.0);
        m.add_row(format!("m{tag}_{}_f_dn", pair.id), LinExpr::var(f).plus(cap, p), Cmp::Ge, 0.0);
        let (a, b) = grid.merge_nodes(bi);
        let span = 2.0 * angle_bound;
        let diff = LinExpr::var(theta[a]).plus(-1.0, theta[b]);
        m.add_row(
            format!("m{tag}_{}_th_up", pair.id),
            diff.clone().plus(span, p),
            Cmp::Le,
            span,
        );
        m.add_row(format!("m{tag}_{}_th_dn", pair.id), diff.plus(-span, p), Cmp::Ge, -span);
        merge_p.push(p);
        merge_flow.push(f);
    }
    if merge_p.len() > 1 {
        let mut sum = LinExpr::default();
        for &p in &merge_p {
            sum = sum.plus(1.0, p);
        }
        m.add_row(format!("merge{tag}_single"), sum, Cmp::Le, 1.0);
    }
    (merge_p, merge_flow)
}

/// Five-regime phase-shifter law in the uncontrolled flow u = h(th_from -
/// th_to): below the threshold the device waits (shift 0); beyond it the
/// shift regulates the controlled flow onto +/-threshold until the shift
/// bound saturates. Regime binaries sum to one; membership and value rows
/// are big-M linked. Adjacent regimes agree at the breakpoints, so ties are
/// value-irrelevant.
pub fn add_pst_law(m: &mut Model, grid: &Grid, block: &PhysicsBlock, edge: usize, tag: &str) {
    let e = &grid.edges[edge];
    let spec = e.pst.as_ref().expect("edge has a PST");
    let h = e.susceptance;
    let pbar = spec.threshold;
    let (a, b) = grid.edge_nodes(edge);
    let u = LinExpr::term(h, block.theta[a]).plus(-h, block.theta[b]);
    let sh = block.shift[edge].expect("PST edge has a shift variable");
    let p = block.flow[edge];
    let id = format!("pst{tag}_{}", e.id);
    let regimes: Vec<Var> = (1..=5).map(|k| m.add_bin(format!("{id}_r{k}"))).collect();
    let mut sum = LinExpr::default();
    for &r in &regimes {
        sum = sum.plus(1.0, r);
    }
    m.add_row(format!("{id}_regime"), sum, Cmp::Eq, 1.0);
    // Enforce `expr <= rhs` only when the regime binary is active.
    let only_if = |m: &mut Model, expr: LinExpr, rhs: f64, r: Var, name: String| {
        let big = m.big_m(&expr) + rhs.abs();
        m.add_row(name, expr.plus(big, r), Cmp::Le, rhs + big);
    };
    let shift_e = LinExpr::var(sh);
    let p_e = LinExpr::var(p);
    // r1: positive saturation — shift pinned at shift_min, u beyond the
    // regulating range.
    only_if(m, shift_e.clone(), spec.shift_min, regimes[0], format!("{id}_r1_sh_up"));
    only_if(m, shift_e.clone().scaled(-1.0), -spec.shift_min, regimes[0], format!("{id}_r1_sh_dn"));
    only_if(m, u.clone().scaled(-1.0), -(pbar - h * spec.shift_min), regimes[0], format!("{id}_r1_u"));
    // r2: positive regulation — controlled flow pinned at +threshold.
    only_if(m, p_e.clone(), pbar, regimes[1], format!("{id}_r2_p_up"));
    only_if(m, p_e.clone().scaled(-1.0), -pbar, regimes[1], format!("{id}_r2_p_dn"));
    only_if(m, u.clone().scaled(-1.0), -pbar, regimes[1], format!("{id}_r2_u_lo"));
    only_if(m, u.clone(), pbar - h * spec.shift_min, regimes[1], format!("{id}_r2_u_hi"));
    // r3: wait region — no shift, |u| within the threshold.
    only_if(m, shift_e.clone(), 0.0, regimes[2], format!("{id}_r3_sh_up"));
    only_if(m, shift_e.clone().scaled(-1.0), 0.0, regimes[2], format!("{id}_r3_sh_dn"));
    only_if(m, u.clone(), pbar, regimes[2], format!("{id}_r3_u_hi"));
    only_if(m, u.clone().scaled(-1.0), pbar, regimes[2], format!("{id}_r3_u_lo"));
    // r4: negative regulation — controlled flow pinned at -threshold.
    only_if(m, p_e.clone(), -pbar, regimes[3], format!("{id}_r4_p_up"));
    only_if(m, p_e.scaled(-1.0), pbar, regimes[3], format!("{id}_r4_p_dn"));
    only_if(m, u.clone(), -pbar, regimes[3], format!("{id}_r4_u_hi"));
    only_if(m, u.clone().scaled(-1.0), pbar + h * spec.shift_max, regimes[3], format!("{id}_r4_u_lo"));
    // r5: negative saturation — shift pinned at shift_max.
    only_if(m, shift_e.clone(), spec.shift_max, regimes[4], format!("{id}_r5_sh_up"));
    only_if(m, shift_e.scaled(-1.0), -spec.shift_max, regimes[4], format!("{id}_r5_sh_dn"));
    only_if(m, u, -(pbar + h * spec.shift_max), regimes[4], format!("{id}_r5_u"));
}

/// The scalar violation g = max over critical edges of |P_e|/limit - 1.
/// With `equality` set, tightness binaries pin g onto the max (needed where
/// g appears on the large side of a constraint); otherwise the epigraph
/// rows suffice.
pub fn add_violation(m: &mut Model, grid: &Grid, block: &PhysicsBlock, equality: bool, tag: &str) -> Var {
    let critical = grid.critical_edges();
    assert!(!critical.is_empty(), "violation requires at least one critical edge");
    let mut exprs = Vec::with_capacity(critical.len());
    for e in critical {
        let limit = grid.edges[e].limit.unwrap();
        let flow = LinExpr::var(block.flow[e]);
        let bound = m.big_m(&flow);
        let abs = encode_abs(m, &flow, bound, &format!("v{tag}_{}", grid.edges[e].id));
        exprs.push(LinExpr::term(1.0 / limit, abs).plus_const(-1.0));
    }
    if equality {
        encode_max_eq(m, &exprs, &format!("g{tag}"))
    } else {
        let big = exprs.iter().map(|e| m.big_m(e)).fold(1.0_f64, f64::max);
        let g = m.add_cont(format!("g{tag}"), -1.0, big);
        for (k, e) in exprs.iter().enumerate() {
            m.add_row(format!("g{tag}_ge{k}"), LinExpr::var(g).plus_expr(e, -1.0), Cmp::Ge, 0.0);
        }
        g
    }
}

/// Convenience: one full scenario block (injections must already exist).
pub fn add_scenario_block(
    m: &mut Model,
    grid: &Grid,
    inj: &Injections,
    redist: &Redistribution,
    z: ZRole,
    host_radius: f64,
    tag: &str,
) -> PhysicsBlock {
    add_dc_physics(m, grid, inj, redist, z, DEFAULT_ANGLE_BOUND, host_radius, tag)
}
