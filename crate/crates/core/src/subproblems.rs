//! The three parametric solvers behind the orchestrator: the inner
//! minimization over recourse controls, the alternating max-min worst-case
//! scenario search, and the auxiliary fixed-set-point flexibility
//! evaluation solved by restriction of the right-hand side.

use std::time::Instant;

use thiserror::Error;

use crate::formulation::{
    add_redistribution, add_scenario_block, add_violation, injection_exprs, Role, ZRole,
};
use crate::grid::Grid;
use crate::milp::{Cmp, LinExpr, Model, Sense, SolveOptions, Status, Var};
use crate::region::Region;

#[derive(Debug, Error)]
pub enum SubError {
    #[error("model infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("time limit exhausted")]
    TimeLimit,
}

/// Solve options plus an overall wall-clock deadline shared by a run; each
/// individual solve receives the remaining budget.
#[derive(Debug, Clone)]
pub struct SolveCtx {
    pub opts: SolveOptions,
    pub deadline: Option<Instant>,
}

impl SolveCtx {
    pub fn new(opts: SolveOptions, deadline: Option<Instant>) -> Self {
        SolveCtx { opts, deadline }
    }

    pub fn options_now(&self) -> Result<SolveOptions, SubError> {
        let mut opts = self.opts.clone();
        if let Some(deadline) = self.deadline {
            let remaining = deadline.saturating_duration_since(Instant::now()).as_secs_f64();
            if remaining <= 0.0 {
                return Err(SubError::TimeLimit);
            }
            opts.time_limit = Some(opts.time_limit.map_or(remaining, |t| t.min(remaining)));
        }
        Ok(opts)
    }

    pub fn solve(&self, m: &Model) -> Result<crate::milp::SolveOutcome, SubError> {
        let out = m.solve(&self.options_now()?);
        match out.status {
            Status::Optimal | Status::Infeasible => Ok(out),
            Status::TimeLimit => Err(SubError::TimeLimit),
            Status::Error => Err(SubError::Solver(out.message.unwrap_or_default())),
        }
    }
}

/// A recourse-control assignment: which merge pair is closed, if any. The
/// phase-shifter response is law-governed and the redistribution is induced
/// by the scenario, so the merge choice is the entire discrete freedom.
pub type ControlChoice = Option<usize>;

#[derive(Debug, Clone)]
pub struct InnerMinResult {
    pub g_star: f64,
    pub z_star: ControlChoice,
    /// min over z of the scenario constraint min-nest at this point.
    pub scenario_value: f64,
}

/// Pointwise region value h(x, y) for either parametrization.
pub fn region_h(grid: &Grid, region: &Region, x: &[f64], dy: &[f64]) -> f64 {
    match region {
        Region::Box(r) => r.h(dy),
        Region::Transfer(r) => r.h(grid, x, dy),
    }
}

/// Globally minimize the violation over the recourse controls at a fixed
/// scenario. Infeasible only when the total imbalance exceeds the
/// generators' reach (redistribution uniqueness violated).
pub fn inner_min(
    grid: &Grid,
    region: &Region,
    x: &[f64],
    dy: &[f64],
    alpha: f64,
    delta: f64,
    ctx: &SolveCtx,
) -> Result<InnerMinResult, SubError> {
    let mut m = Model::new(Sense::Minimize);
    let y0 = region.y0().to_vec();
    let inj = injection_exprs(&mut m, grid, &Role::Fixed(x.to_vec()), &Role::Fixed(dy.to_vec()), &y0, &[]);
    let redist = add_redistribution(&mut m, grid, &inj);
    let host_radius = host_radius_of(region);
    let block = add_scenario_block(&mut m, grid, &inj, &redist, ZRole::Decision, host_radius, "");
    let g = add_violation(&mut m, grid, &block, false, "");
    m.set_objective(LinExpr::var(g));
    let out = ctx.solve(&m)?;
    if out.status == Status::Infeasible {
        return Err(SubError::Infeasible("redistribution cannot cover the scenario imbalance".into()));
    }
    let g_star = out.objective;
    let z_star = block
        .merge_p
        .iter()
        .position(|&p| out.value(p) > 0.5);
    let h = region_h(grid, region, x, dy);
    let scenario_value = match region {
        Region::Box(_) => (alpha * (delta - h)).min(g_star),
        Region::Transfer(_) => (alpha * (delta - h)).min(alpha * h).min(g_star),
    };
    Ok(InnerMinResult { g_star, z_star, scenario_value })
}

fn host_radius_of(region: &Region) -> f64 {
    match region {
        Region::Box(r) => r.host_radius,
        Region::Transfer(r) => {
            // Scale constant for merge-flow big-Ms; the box underlying the
            // transfer host already fixes the offset magnitudes.
            r.y_lo.iter().zip(&r.y_hi).map(|(l, h)| l.abs().max(h.abs())).fold(1.0, f64::max)
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorstCaseOutcome {
    /// Final outer (over-)estimate of the max-min value; a nonpositive
    /// value certifies that every scenario in the region is manageable.
    pub value: f64,
    pub y_star: Vec<f64>,
    /// Control assignments accumulated by the alternating loop.
    pub inner_pool: Vec<ControlChoice>,
    pub certified: bool,
}

/// Alternating discretization loop for the max-min worst-case search at a
/// fixed (x, delta): the outer MILP maximizes the min-nest with the inner
/// violation relaxed onto the pooled controls (an upper estimate); the
/// inner minimization at the outer's maximizer yields a lower estimate and
/// a new control for the pool. The control set is finite (one merge choice)
/// so the loop terminates after at most one pass over it.
pub fn worst_case(
    grid: &Grid,
    region: &Region,
    x: &[f64],
    delta: f64,
    alpha: f64,
    tol: f64,
    ctx: &SolveCtx,
) -> Result<WorstCaseOutcome, SubError> {
    let mut pool: Vec<ControlChoice> = vec![None];
    let mut best_lower = f64::NEG_INFINITY;
    let mut best_y: Vec<f64> = region.y0().to_vec();
    let max_iters = grid.merge_pairs.len() + 3;
    let mut upper = f64::INFINITY;
    for _ in 0..max_iters {
        let (outer_value, y_candidate) = worst_case_outer(grid, region, x, delta, alpha, &pool, ctx)?;
        upper = outer_value;
        let inner = inner_min(grid, region, x, &y_candidate, alpha, delta, ctx)?;
        if inner.scenario_value > best_lower {
            best_lower = inner.scenario_value;
            best_y = y_candidate;
        }
        if upper - best_lower <= tol {
            return Ok(WorstCaseOutcome { value: upper, y_star: best_y, inner_pool: pool, certified: true });
        }
        if pool.contains(&inner.z_star) {
            // The relaxation already covers the minimizing control; any
            // residual gap is numerical noise.
            return Ok(WorstCaseOutcome {
                value: upper,
                y_star: best_y,
                inner_pool: pool,
                certified: upper - best_lower <= 10.0 * tol.max(1e-6),
            });
        }
        pool.push(inner.z_star);
    }
    Ok(WorstCaseOutcome { value: upper, y_star: best_y, inner_pool: pool, certified: false })
}

/// Outer problem of the alternating loop: maximize min{alpha (delta - h),
/// eta} over scenarios in the host set, with eta bounded by the exact
/// violation of every pooled control. The violation uses the equality
/// encoding because it sits on the large side of the eta rows.
fn worst_case_outer(
    grid: &Grid,
    region: &Region,
    x: &[f64],
    delta: f64,
    alpha: f64,
    pool: &[ControlChoice],
    ctx: &SolveCtx,
) -> Result<(f64, Vec<f64>), SubError> {
    let mut m = Model::new(Sense::Maximize);
    let y0 = region.y0().to_vec();
    let bounds = region.host_bounds();
    let inj = injection_exprs(&mut m, grid, &Role::Fixed(x.to_vec()), &Role::Decision, &y0, &bounds);
    let redist = add_redistribution(&mut m, grid, &inj);
    let host_radius = host_radius_of(region);
    let mut g_vars: Vec<Var> = Vec::with_capacity(pool.len());
    for (k, &choice) in pool.iter().enumerate() {
        let block =
            add_scenario_block(&mut m, grid, &inj, &redist, ZRole::FixedMerge(choice), host_radius, &format!("_{k}"));
        g_vars.push(add_violation(&mut m, grid, &block, true, &format!("_{k}")));
    }
    let eta_hi = g_vars.iter().map(|&g| m.bounds(g).1).fold(0.0_f64, f64::max);
    let eta = m.add_cont("eta", -1.0, eta_hi);
    for (k, &g) in g_vars.iter().enumerate() {
        m.add_row(format!("eta_le{k}"), LinExpr::var(eta).plus(-1.0, g), Cmp::Le, 0.0);
    }
    let (h_terms, v_bound): (Vec<LinExpr>, f64) = match region {
        Region::Box(r) => {
            let h = m.add_cont("h", 0.0, r.host_radius);
            r.h_epigraph(&mut m, &inj.dy, h);
            (vec![LinExpr::term(-alpha, h).plus_const(alpha * delta)], alpha * (delta.abs() + r.host_radius) + 1.0)
        }
        Region::Transfer(r) => {
            let h = r.h_exact(&mut m, &inj.dy, &redist.dz, "ht");
            let (hl, hu) = m.bounds(h);
            let span = hl.abs().max(hu.abs());
            (
                vec![LinExpr::term(-alpha, h).plus_const(alpha * delta), LinExpr::term(alpha, h)],
                alpha * (delta.abs() + span) + 1.0,
            )
        }
    };
    let v_bound = v_bound.max(eta_hi + 1.0);
    let v = m.add_cont("wc_v", -v_bound, v_bound);
    for (k, t) in h_terms.iter().enumerate() {
        m.add_row(format!("v_le_h{k}"), LinExpr::var(v).plus_expr(t, -1.0), Cmp::Le, 0.0);
    }
    m.add_row("v_le_eta", LinExpr::var(v).plus(-1.0, eta), Cmp::Le, 0.0);
    m.set_objective(LinExpr::var(v));
    let out = ctx.solve(&m)?;
    if out.status == Status::Infeasible {
        return Err(SubError::Infeasible("worst-case outer problem infeasible".into()));
    }
    let y = inj.dy.iter().map(|e| out.eval(e)).collect();
    Ok((out.objective, y))
}

#[derive(Debug, Clone)]
pub struct AuxiliaryResult {
    /// Pessimistic (never over-estimating) flexibility at the fixed
    /// set-points: the objective of the unrestricted discretized master,
    /// which relaxes "every control violates" to "every pooled control is
    /// at its limit or beyond".
    pub delta_wc_relax: f64,
    pub y_witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxSettings {
    pub aux_tol: f64,
    pub aux_eps0: f64,
    pub r_r: f64,
    pub eps_floor: f64,
}

impl Default for AuxSettings {
    fn default() -> Self {
        AuxSettings { aux_tol: 0.025, aux_eps0: 0.005, r_r: 2.0, eps_floor: 1e-6 }
    }
}

/// Fixed-x flexibility by restriction of the right-hand side: the master
/// seeks the smallest-h scenario at which every pooled control violates by
/// at least eps; the inner minimization either accepts the candidate as
/// genuinely unmanageable or contributes the control that manages it. The
/// returned value is the eps = 0 master objective — a lower bound on the
/// true fixed-x flexibility, since every genuinely unmanageable point is
/// feasible for the relaxed master.
pub fn evaluate_flexibility_at(
    grid: &Grid,
    region: &Region,
    x: &[f64],
    settings: &AuxSettings,
    ctx: &SolveCtx,
) -> Result<AuxiliaryResult, SubError> {
    let host_radius = match region {
        Region::Box(r) => r.host_radius,
        Region::Transfer(r) => {
            // Largest attainable transfer over the host box.
            r.y_hi
                .iter()
                .zip(&r.y_lo)
                .map(|(h, l)| (h - l).abs())
                .sum::<f64>()
        }
    };
    let mut pool: Vec<ControlChoice> = Vec::new();
    let mut eps = settings.aux_eps0;
    let max_iters = 40 + 4 * grid.merge_pairs.len();
    for _ in 0..max_iters {
        let master = aux_master(grid, region, x, eps, &pool, ctx)?;
        let Some((h_candidate, y_candidate)) = master else {
            if eps > settings.eps_floor {
                eps = (eps / settings.r_r).max(settings.eps_floor);
                continue;
            }
            // No scenario puts every pooled control at its limit: the whole
            // host set is manageable.
            return Ok(AuxiliaryResult { delta_wc_relax: host_radius, y_witness: None });
        };
        let inner = inner_min(grid, region, x, &y_candidate, 1.0, 0.0, ctx)?;
        if inner.g_star <= 0.0 {
            if pool.contains(&inner.z_star) {
                // The candidate is managed by a control the master already
                // restricts; the restriction is too loose to separate them.
                if eps > settings.eps_floor {
                    eps = (eps / settings.r_r).max(settings.eps_floor);
                    continue;
                }
                let lower = aux_master(grid, region, x, 0.0, &pool, ctx)?
                    .map(|(h, _)| h)
                    .unwrap_or(host_radius);
                return Ok(AuxiliaryResult { delta_wc_relax: lower, y_witness: Some(y_candidate) });
            }
            pool.push(inner.z_star);
            continue;
        }
        // Candidate accepted: genuinely unmanageable, so the true value is
        // at most h_candidate. Report the relaxation lower bound.
        let lower = aux_master(grid, region, x, 0.0, &pool, ctx)?
            .map(|(h, _)| h)
            .unwrap_or(h_candidate);
        if h_candidate - lower <= settings.aux_tol * h_candidate.abs().max(1e-3) || eps <= settings.eps_floor {
            return Ok(AuxiliaryResult { delta_wc_relax: lower, y_witness: Some(y_candidate) });
        }
        eps = (eps / settings.r_r).max(settings.eps_floor);
    }
    // Iteration cap: fall back to the sound relaxation value.
    let lower = aux_master(grid, region, x, 0.0, &pool, ctx)?.map(|(h, _)| h).unwrap_or(host_radius);
    Ok(AuxiliaryResult { delta_wc_relax: lower, y_witness: None })
}

/// Discretized auxiliary master: minimize h over the host set subject to
/// every pooled control violating by at least eps. Returns None when
/// infeasible.
fn aux_master(
    grid: &Grid,
    region: &Region,
    x: &[f64],
    eps: f64,
    pool: &[ControlChoice],
    ctx: &SolveCtx,
) -> Result<Option<(f64, Vec<f64>)>, SubError> {
    let mut m = Model::new(Sense::Minimize);
    let y0 = region.y0().to_vec();
    let bounds = region.host_bounds();
    let inj = injection_exprs(&mut m, grid, &Role::Fixed(x.to_vec()), &Role::Decision, &y0, &bounds);
    let redist = add_redistribution(&mut m, grid, &inj);
    let host_radius = host_radius_of(region);
    for (k, &choice) in pool.iter().enumerate() {
        let block =
            add_scenario_block(&mut m, grid, &inj, &redist, ZRole::FixedMerge(choice), host_radius, &format!("_{k}"));
        let g = add_violation(&mut m, grid, &block, true, &format!("_{k}"));
        m.add_row(format!("g_restrict{k}"), LinExpr::var(g), Cmp::Ge, eps);
    }
    let h = match region {
        Region::Box(r) => {
            let h = m.add_cont("h", 0.0, r.host_radius);
            r.h_epigraph(&mut m, &inj.dy, h);
            h
        }
        Region::Transfer(r) => {
            let h = r.h_exact(&mut m, &inj.dy, &redist.dz, "ht");
            // Reverse-transfer scenarios are exempt from management.
            m.add_row("h_nonneg", LinExpr::var(h), Cmp::Ge, 0.0);
            h
        }
    };
    m.set_objective(LinExpr::var(h));
    let out = ctx.solve(&m)?;
    if out.status == Status::Infeasible {
        return Ok(None);
    }
    let y = inj.dy.iter().map(|e| out.eval(e)).collect();
    Ok(Some((out.objective, y)))
}
