//! The orchestrator: parallel lower-bounding and upper-bounding
//! discretization procedures with restriction of the right-hand side,
//! optional point dropping, the transformation-based upper level, and the
//! auxiliary fixed-x heuristic — producing a certified flexibility
//! interval.
//!
//! Naming: the relaxed discretized master over-estimates the flexibility,
//! so its value is stored as `delta_optimistic`; certified feasible values
//! are `delta_guaranteed`. In objective space (the problem minimizes
//! -delta) these are the classical lower and upper bounds respectively.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::formulation::{
    add_redistribution, add_scenario_block, add_violation, injection_exprs, Injections, Role, ZRole,
};
use crate::grid::Grid;
use crate::milp::{Cmp, LinExpr, Model, Sense, SolveOptions, Status};
use crate::region::{min_nest_le, AlphaScaling, Region};
use crate::subproblems::{
    evaluate_flexibility_at, worst_case, AuxSettings, SolveCtx, SubError,
};

#[derive(Debug, Error)]
pub enum EsipError {
    #[error("no feasible preventive action: the base case is infeasible for every set-point")]
    NoFeasibleAction,
    #[error(transparent)]
    Sub(#[from] SubError),
}

/// Solver parameters; defaults follow the small-grid settings of the
/// reference experiments.
#[derive(Debug, Clone, Serialize)]
pub struct Config {
    pub alpha_prime: f64,
    pub rel_tol: f64,
    pub eps_r0: f64,
    pub r_r: f64,
    pub aux_tol: f64,
    pub aux_eps0: f64,
    pub time_limit: Option<f64>,
    pub use_transformation: bool,
    pub use_dropping: bool,
    pub use_auxiliary: bool,
    /// Keep dropped scenarios in transformed form instead of removing them
    /// from the master entirely.
    pub keep_transformed: bool,
    pub single_thread: bool,
    pub seed: i32,
    /// Absolute tolerance for the worst-case alternation and for treating
    /// its value as nonpositive.
    pub wc_tol: f64,
    /// Iteration cap per bounding procedure.
    pub max_iters: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            alpha_prime: 0.5,
            rel_tol: 0.05,
            eps_r0: 0.05,
            r_r: 2.0,
            aux_tol: 0.025,
            aux_eps0: 0.005,
            time_limit: None,
            use_transformation: true,
            use_dropping: true,
            use_auxiliary: true,
            keep_transformed: true,
            single_thread: false,
            seed: 0,
            wc_tol: 1e-6,
            max_iters: 200,
        }
    }
}

impl Config {
    fn aux_settings(&self) -> AuxSettings {
        AuxSettings { aux_tol: self.aux_tol, aux_eps0: self.aux_eps0, r_r: self.r_r, eps_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioEntry {
    pub y: Vec<f64>,
    pub h: f64,
    pub origin_iter: u64,
    pub dropped: bool,
}

/// The growing discretization: worst-case scenarios driving the upper
/// level. Duplicates (componentwise within 1e-9) are not re-added; dropped
/// scenarios stay out of untransformed masters while flagged.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DiscretizationPool {
    pub scenarios: Vec<ScenarioEntry>,
}

impl DiscretizationPool {
    pub fn add(&mut self, y: Vec<f64>, h: f64, origin_iter: u64) -> bool {
        let duplicate = self
            .scenarios
            .iter()
            .any(|s| s.y.len() == y.len() && s.y.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-9));
        if duplicate {
            return false;
        }
        self.scenarios.push(ScenarioEntry { y, h, origin_iter, dropped: false });
        true
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

/// Mark as dropped every scenario whose region value already exceeds the
/// optimistic bound: with delta at most that bound, the scenario constraint
/// is satisfied by its distance term alone. Scenarios exactly on the
/// boundary are kept. Hyperbox only (h must not depend on x).
pub fn drop_redundant(pool: &mut DiscretizationPool, delta_optimistic: f64) -> usize {
    let mut dropped = 0;
    for s in &mut pool.scenarios {
        if !s.dropped && s.h > delta_optimistic + 1e-9 {
            s.dropped = true;
            dropped += 1;
        }
    }
    dropped
}

#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub procedure: String,
    pub iter: u64,
    pub eps_r: f64,
    pub delta_candidate: f64,
    pub wc_value: f64,
    pub pool_size: usize,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlexibilityResult {
    /// Certified feasible flexibility (negative infinity serialized as null
    /// when no witness was found).
    pub delta_guaranteed: f64,
    pub delta_optimistic: f64,
    pub x_star: Option<Vec<f64>>,
    pub certified: bool,
    pub timed_out: bool,
    pub lower_iters: u64,
    pub upper_iters: u64,
    pub log: Vec<LogRecord>,
    pub wall_ms: u128,
}

/// Shared bound bookkeeping. Updates are monotone: the optimistic bound
/// only decreases, the guaranteed bound only increases.
#[derive(Debug)]
struct BoundState {
    delta_optimistic: f64,
    delta_guaranteed: f64,
    incumbent_x: Option<Vec<f64>>,
    pool: DiscretizationPool,
    eps_r: f64,
    ub_consecutive_failures: u32,
    lb_iters: u64,
    ub_iters: u64,
    exact: bool,
    log: Vec<LogRecord>,
    aux_queue: Vec<Vec<f64>>,
    aux_seen: Vec<Vec<f64>>,
}

impl BoundState {
    fn update_optimistic(&mut self, delta: f64) {
        if delta < self.delta_optimistic {
            self.delta_optimistic = delta;
        }
    }

    fn update_guaranteed(&mut self, delta: f64, x: Vec<f64>) -> bool {
        if delta > self.delta_guaranteed {
            self.delta_guaranteed = delta;
            self.incumbent_x = Some(x);
            debug_assert!(self.delta_guaranteed <= self.delta_optimistic + 1e-6);
            true
        } else {
            false
        }
    }

    fn gap_closed(&self, cfg: &Config) -> bool {
        if self.exact {
            return true;
        }
        if !self.delta_guaranteed.is_finite() {
            return false;
        }
        let gap = self.delta_optimistic - self.delta_guaranteed;
        if self.delta_optimistic.abs() < 1e-3 {
            gap <= 1e-4
        } else {
            gap <= cfg.rel_tol * self.delta_optimistic
        }
    }

    fn push_aux(&mut self, x: &[f64]) {
        let seen = self
            .aux_seen
            .iter()
            .any(|p| p.len() == x.len() && p.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9));
        if !seen {
            self.aux_seen.push(x.to_vec());
            self.aux_queue.push(x.to_vec());
        }
    }
}

/// Build the discretized upper level: maximize delta over set-points and
/// per-scenario controls subject to the base-case constraint and one
/// min-nest (or transformed) constraint per active scenario, all restricted
/// by eps_r. Returns the model and the set-point expressions.
pub fn build_upper_level(
    grid: &Grid,
    region: &Region,
    scenarios: &[ScenarioEntry],
    eps_r: f64,
    alpha: f64,
    cfg: &Config,
) -> (Model, Vec<LinExpr>) {
    let mut m = Model::new(Sense::Maximize);
    let y0 = region.y0().to_vec();
    let host_radius = match region {
        Region::Box(r) => r.host_radius,
        Region::Transfer(r) => r.y_hi.iter().zip(&r.y_lo).map(|(h, l)| (h - l).abs()).sum::<f64>(),
    };
    let delta = m.add_cont("delta", 0.0, host_radius);
    // Base case: forecast scenario under the no-action controls.
    let base_inj = injection_exprs(&mut m, grid, &Role::Decision, &Role::Fixed(y0.clone()), &y0, &[]);
    let x_exprs = base_inj.x.clone();
    let base_redist = add_redistribution(&mut m, grid, &base_inj);
    let base_block = add_scenario_block(&mut m, grid, &base_inj, &base_redist, ZRole::Base, host_radius, "_b");
    let g_base = add_violation(&mut m, grid, &base_block, false, "_b");
    m.add_row("base_restrict", LinExpr::var(g_base), Cmp::Le, -eps_r);

    for (d, entry) in scenarios.iter().enumerate() {
        if entry.dropped && !(cfg.use_transformation && cfg.keep_transformed && matches!(region, Region::Box(_))) {
            continue;
        }
        let tag = format!("_{d}");
        match region {
            Region::Box(r) => {
                let transform = cfg.use_transformation && entry.h > 1e-12;
                if transform {
                    // Slide the scenario toward the forecast onto the box of
                    // radius min{h, delta}: s is that radius, and the
                    // offsets are linear in s.
                    let s = m.add_cont(format!("s{tag}"), 0.0, entry.h);
                    let b = m.add_bin(format!("s{tag}_cap"));
                    m.add_row(format!("s{tag}_le_d"), LinExpr::var(s).plus(-1.0, delta), Cmp::Le, 0.0);
                    let big = host_radius + entry.h;
                    m.add_row(
                        format!("s{tag}_ge_d"),
                        LinExpr::var(s).plus(-1.0, delta).plus(-big, b),
                        Cmp::Ge,
                        -big,
                    );
                    m.add_row(format!("s{tag}_ge_h"), LinExpr::var(s).plus(big, b), Cmp::Ge, entry.h);
                    let dy: Vec<LinExpr> = (0..grid.nodes.len())
                        .map(|n| {
                            let dir = (entry.y[n] - r.y0[n]) / entry.h;
                            LinExpr::term(dir, s).plus_const(r.y0[n])
                        })
                        .collect();
                    let inj = Injections { x: x_exprs.clone(), dy };
                    let redist = add_redistribution(&mut m, grid, &inj);
                    let block =
                        add_scenario_block(&mut m, grid, &inj, &redist, ZRole::Decision, host_radius, &tag);
                    let g = add_violation(&mut m, grid, &block, false, &tag);
                    m.add_row(format!("scen{tag}"), LinExpr::var(g), Cmp::Le, -eps_r);
                } else {
                    let dy: Vec<LinExpr> = entry.y.iter().map(|&v| LinExpr::constant(v)).collect();
                    let inj = Injections { x: x_exprs.clone(), dy };
                    let redist = add_redistribution(&mut m, grid, &inj);
                    let block =
                        add_scenario_block(&mut m, grid, &inj, &redist, ZRole::Decision, host_radius, &tag);
                    let g = add_violation(&mut m, grid, &block, false, &tag);
                    let dist = LinExpr::term(alpha, delta).plus_const(-alpha * entry.h);
                    min_nest_le(&mut m, &[dist, LinExpr::var(g)], -eps_r, &format!("scen{tag}"));
                }
            }
            Region::Transfer(r) => {
                let dy: Vec<LinExpr> = entry.y.iter().map(|&v| LinExpr::constant(v)).collect();
                let inj = Injections { x: x_exprs.clone(), dy };
                let redist = add_redistribution(&mut m, grid, &inj);
                let block = add_scenario_block(&mut m, grid, &inj, &redist, ZRole::Decision, host_radius, &tag);
                let g = add_violation(&mut m, grid, &block, false, &tag);
                let h = r.h_exact(&mut m, &inj.dy, &redist.dz, &format!("h{tag}"));
                let dist = LinExpr::term(alpha, delta).plus(-alpha, h);
                let reverse = LinExpr::term(alpha, h);
                min_nest_le(&mut m, &[dist, reverse, LinExpr::var(g)], -eps_r, &format!("scen{tag}"));
            }
        }
    }
    m.set_objective(LinExpr::var(delta));
    (m, x_exprs)
}

/// Solve the discretized upper level; None when infeasible.
pub fn upper_level(
    grid: &Grid,
    region: &Region,
    scenarios: &[ScenarioEntry],
    eps_r: f64,
    alpha: f64,
    cfg: &Config,
    ctx: &SolveCtx,
) -> Result<Option<(f64, Vec<f64>)>, SubError> {
    let (m, x_exprs) = build_upper_level(grid, region, scenarios, eps_r, alpha, cfg);
    let out = ctx.solve(&m)?;
    if out.status == Status::Infeasible {
        return Ok(None);
    }
    let x: Vec<f64> = x_exprs.iter().map(|e| out.eval(e)).collect();
    Ok(Some((out.objective, x)))
}

/// Optimistic transfer value used to normalize alpha: the largest transfer
/// attainable when the uncertain injections are decision variables too.
pub fn transfer_delta_norm(grid: &Grid, region: &Region, ctx: &SolveCtx) -> Result<f64, SubError> {
    let Region::Transfer(r) = region else {
        return Ok(1.0);
    };
    let mut m = Model::new(Sense::Maximize);
    let y0 = region.y0().to_vec();
    let bounds = region.host_bounds();
    let inj = injection_exprs(&mut m, grid, &Role::Decision, &Role::Decision, &y0, &bounds);
    let redist = add_redistribution(&mut m, grid, &inj);
    let h = r.h_exact(&mut m, &inj.dy, &redist.dz, "hnorm");
    m.set_objective(LinExpr::var(h));
    let out = ctx.solve(&m)?;
    if out.status == Status::Infeasible {
        return Err(SubError::Infeasible("transfer normalization problem infeasible".into()));
    }
    Ok(out.objective.max(1e-6))
}

struct Worker<'a> {
    grid: &'a Grid,
    region: &'a Region,
    alpha: f64,
    cfg: &'a Config,
    ctx: SolveCtx,
    start: Instant,
}

impl<'a> Worker<'a> {
    fn snapshot(&self, state: &Mutex<BoundState>) -> (Vec<ScenarioEntry>, f64, f64) {
        let s = state.lock().unwrap();
        (s.pool.scenarios.clone(), s.eps_r, s.delta_optimistic)
    }

    /// One lower-bounding step: relaxed master (eps = 0), optimistic-bound
    /// update, and worst-case verification of its candidate. A nonpositive
    /// worst-case value certifies the candidate as globally optimal for the
    /// current relaxation.
    fn lower_step(&self, state: &Mutex<BoundState>) -> Result<bool, SubError> {
        let (scenarios, _, _) = self.snapshot(state);
        let Some((delta_c, x_c)) =
            upper_level(self.grid, self.region, &scenarios, 0.0, self.alpha, self.cfg, &self.ctx)?
        else {
            return Err(SubError::Infeasible("no feasible preventive action".into()));
        };
        let wc = worst_case(self.grid, self.region, &x_c, delta_c, self.alpha, self.cfg.wc_tol, &self.ctx)?;
        let mut s = state.lock().unwrap();
        s.lb_iters += 1;
        let iter = s.lb_iters;
        s.update_optimistic(delta_c);
        if wc.value <= self.cfg.wc_tol {
            let opt = s.delta_optimistic;
            s.update_guaranteed(delta_c.min(opt), x_c);
            s.exact = true;
        } else {
            let h = crate::subproblems::region_h(self.grid, self.region, &x_c, &wc.y_star);
            s.pool.add(wc.y_star.clone(), h, iter);
            if self.cfg.use_auxiliary {
                s.push_aux(&x_c);
            }
        }
        if self.cfg.use_dropping && matches!(self.region, Region::Box(_)) {
            let opt = s.delta_optimistic;
            drop_redundant(&mut s.pool, opt);
        }
        let pool_size = s.pool.len();
        s.log.push(LogRecord {
            procedure: "lower_bounding".into(),
            iter,
            eps_r: 0.0,
            delta_candidate: delta_c,
            wc_value: wc.value,
            pool_size,
            wall_ms: self.start.elapsed().as_millis(),
        });
        Ok(s.gap_closed(self.cfg))
    }

    /// One upper-bounding step: restricted master at the current eps_r and
    /// worst-case verification; certified candidates raise the guaranteed
    /// bound, failures enlarge the discretization, and the restriction is
    /// reduced when the master is infeasible, when two consecutive
    /// candidates fail, or when a certified candidate stops improving.
    fn upper_step(&self, state: &Mutex<BoundState>) -> Result<bool, SubError> {
        let (scenarios, eps_r, _) = self.snapshot(state);
        let solved = upper_level(self.grid, self.region, &scenarios, eps_r, self.alpha, self.cfg, &self.ctx)?;
        let Some((delta_c, x_c)) = solved else {
            let mut s = state.lock().unwrap();
            s.ub_iters += 1;
            let iter = s.ub_iters;
            s.eps_r = (s.eps_r / self.cfg.r_r).max(1e-9);
            s.ub_consecutive_failures = 0;
            let pool_size = s.pool.len();
            s.log.push(LogRecord {
                procedure: "upper_bounding".into(),
                iter,
                eps_r,
                delta_candidate: f64::NAN,
                wc_value: f64::NAN,
                pool_size,
                wall_ms: self.start.elapsed().as_millis(),
            });
            return Ok(s.gap_closed(self.cfg));
        };
        let wc = worst_case(self.grid, self.region, &x_c, delta_c, self.alpha, self.cfg.wc_tol, &self.ctx)?;
        let mut s = state.lock().unwrap();
        s.ub_iters += 1;
        let iter = s.ub_iters;
        if wc.value <= self.cfg.wc_tol {
            let improved = s.update_guaranteed(delta_c, x_c.clone());
            s.ub_consecutive_failures = 0;
            if !improved {
                s.eps_r = (s.eps_r / self.cfg.r_r).max(1e-9);
            }
        } else {
            let h = crate::subproblems::region_h(self.grid, self.region, &x_c, &wc.y_star);
            s.pool.add(wc.y_star.clone(), h, iter);
            s.ub_consecutive_failures += 1;
            if s.ub_consecutive_failures >= 2 {
                s.eps_r = (s.eps_r / self.cfg.r_r).max(1e-9);
                s.ub_consecutive_failures = 0;
            }
            if self.cfg.use_auxiliary {
                s.push_aux(&x_c);
            }
        }
        let pool_size = s.pool.len();
        s.log.push(LogRecord {
            procedure: "upper_bounding".into(),
            iter,
            eps_r,
            delta_candidate: delta_c,
            wc_value: wc.value,
            pool_size,
            wall_ms: self.start.elapsed().as_millis(),
        });
        Ok(s.gap_closed(self.cfg))
    }

    /// Run one queued auxiliary evaluation, if any. The result is itself a
    /// certified feasible flexibility at its set-points, so it updates the
    /// guaranteed bound directly.
    fn aux_step(&self, state: &Mutex<BoundState>) -> Result<bool, SubError> {
        let x = {
            let mut s = state.lock().unwrap();
            s.aux_queue.pop()
        };
        let Some(x) = x else {
            return Ok(false);
        };
        let aux = evaluate_flexibility_at(self.grid, self.region, &x, &self.cfg.aux_settings(), &self.ctx)?;
        let mut s = state.lock().unwrap();
        // The auxiliary value is pessimistic for its own x but can still
        // exceed the optimistic bound transiently through solver
        // tolerances; clip to preserve the bound invariant.
        let value = aux.delta_wc_relax.min(s.delta_optimistic);
        s.update_guaranteed(value, x);
        let iter = s.lb_iters;
        let pool_size = s.pool.len();
        s.log.push(LogRecord {
            procedure: "auxiliary".into(),
            iter,
            eps_r: 0.0,
            delta_candidate: aux.delta_wc_relax,
            wc_value: f64::NAN,
            pool_size,
            wall_ms: self.start.elapsed().as_millis(),
        });
        Ok(s.gap_closed(self.cfg))
    }
}

/// Maximize the flexibility index. Returns a certified interval
/// [delta_guaranteed, delta_optimistic] with the incumbent set-points and
/// the full iteration log; on time limit the best bounds so far are
/// returned uncertified.
pub fn solve_flexibility(grid: &Grid, region: &Region, cfg: &Config) -> Result<FlexibilityResult, EsipError> {
    let start = Instant::now();
    let deadline = cfg.time_limit.map(|t| start + std::time::Duration::from_secs_f64(t));
    let opts = SolveOptions { seed: cfg.seed, threads: 1, ..SolveOptions::default() };
    let ctx = SolveCtx::new(opts, deadline);
    let delta_norm = match region {
        Region::Box(_) => 1.0,
        Region::Transfer(_) => match transfer_delta_norm(grid, region, &ctx) {
            Ok(v) => v,
            Err(SubError::TimeLimit) => 1.0,
            Err(e) => return Err(e.into()),
        },
    };
    let alpha = AlphaScaling { alpha_prime: cfg.alpha_prime, delta_norm }.alpha();
    let host_radius = match region {
        Region::Box(r) => r.host_radius,
        Region::Transfer(r) => r.y_hi.iter().zip(&r.y_lo).map(|(h, l)| (h - l).abs()).sum::<f64>(),
    };
    let state = Mutex::new(BoundState {
        delta_optimistic: host_radius,
        delta_guaranteed: f64::NEG_INFINITY,
        incumbent_x: None,
        pool: DiscretizationPool::default(),
        eps_r: cfg.eps_r0,
        ub_consecutive_failures: 0,
        lb_iters: 0,
        ub_iters: 0,
        exact: false,
        log: Vec::new(),
        aux_queue: Vec::new(),
        aux_seen: Vec::new(),
    });
    let worker = Worker { grid, region, alpha, cfg, ctx, start };

    let mut timed_out = false;
    let mut infeasible = false;
    if cfg.single_thread {
        // Deterministic round-robin over the three procedures.
        'outer: for _ in 0..cfg.max_iters {
            for step in 0..3 {
                let done = match step {
                    0 => worker.lower_step(&state),
                    1 => worker.upper_step(&state),
                    _ => {
                        if cfg.use_auxiliary {
                            worker.aux_step(&state)
                        } else {
                            Ok(false)
                        }
                    }
                };
                match done {
                    Ok(true) => break 'outer,
                    Ok(false) => {}
                    Err(SubError::TimeLimit) => {
                        timed_out = true;
                        break 'outer;
                    }
                    Err(SubError::Infeasible(_)) => {
                        infeasible = true;
                        break 'outer;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    } else {
        // Three cooperative workers exchanging monotone bound updates and
        // pool additions through the synchronized store.
        let done = AtomicBool::new(false);
        let failure: Mutex<Option<EsipError>> = Mutex::new(None);
        let run = |kind: usize| {
            let mut idle = 0u32;
            for _ in 0..cfg.max_iters {
                if done.load(Ordering::SeqCst) {
                    return;
                }
                let res = match kind {
                    0 => worker.lower_step(&state),
                    1 => worker.upper_step(&state),
                    _ => worker.aux_step(&state),
                };
                match res {
                    Ok(true) => {
                        done.store(true, Ordering::SeqCst);
                        return;
                    }
                    Ok(false) => {
                        if kind == 2 {
                            // Nothing queued; yield briefly.
                            idle += 1;
                            if idle > 10_000 {
                                std::thread::sleep(std::time::Duration::from_millis(5));
                                idle = 0;
                            }
                        }
                    }
                    Err(e) => {
                        let mut f = failure.lock().unwrap();
                        if f.is_none() {
                            *f = Some(match e {
                                SubError::Infeasible(_) => EsipError::NoFeasibleAction,
                                other => EsipError::Sub(other),
                            });
                        }
                        done.store(true, Ordering::SeqCst);
                        return;
                    }
                }
            }
        };
        std::thread::scope(|scope| {
            let lb = scope.spawn(|| run(0));
            let ub = scope.spawn(|| run(1));
            let aux = if cfg.use_auxiliary { Some(scope.spawn(|| run(2))) } else { None };
            lb.join().unwrap();
            ub.join().unwrap();
            if let Some(a) = aux {
                a.join().unwrap();
            }
        });
        if let Some(err) = failure.into_inner().unwrap() {
            match err {
                EsipError::Sub(SubError::TimeLimit) => timed_out = true,
                EsipError::NoFeasibleAction => infeasible = true,
                other => return Err(other),
            }
        }
    }

    let s = state.into_inner().unwrap();
    if infeasible && !s.delta_guaranteed.is_finite() {
        return Err(EsipError::NoFeasibleAction);
    }
    let certified = s.gap_closed(cfg) && !timed_out;
    Ok(FlexibilityResult {
        delta_guaranteed: s.delta_guaranteed,
        delta_optimistic: s.delta_optimistic,
        x_star: s.incumbent_x,
        certified,
        timed_out,
        lower_iters: s.lb_iters,
        upper_iters: s.ub_iters,
        log: s.log,
        wall_ms: start.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_grid_str;
    use crate::region::HyperboxRegion;
    use crate::subproblems::SolveCtx;

    fn two_node() -> (Grid, Region) {
        let grid = parse_grid_str(
            r#"{
                "reference_node": "A",
                "nodes": [
                    {"id": "A", "injection0": 0.0},
                    {"id": "B", "injection0": -2.0, "dy_minus": 1.0, "dy_plus": 1.0}
                ],
                "generators": [{"id": "g", "node": "A", "x_min": -10.0, "x_max": 10.0, "contribution": 1.0}],
                "edges": [{"id": "L", "from": "A", "to": "B", "susceptance": 1.0, "limit": 5.0}],
                "merge_pairs": []
            }"#,
            false,
        )
        .unwrap();
        let region = Region::Box(HyperboxRegion::from_grid(&grid));
        (grid, region)
    }

    fn cfg_st() -> Config {
        Config { single_thread: true, ..Config::default() }
    }

    #[test]
    fn empty_pool_upper_level_returns_host_radius() {
        let (grid, region) = two_node();
        let ctx = SolveCtx::new(Default::default(), None);
        let (delta, _) = upper_level(&grid, &region, &[], 0.0, 0.5, &cfg_st(), &ctx).unwrap().unwrap();
        assert!((delta - 8.0).abs() < 1e-6, "delta = {delta}");
    }

    #[test]
    fn transformed_corner_scenario_pins_delta_in_one_solve() {
        let (grid, region) = two_node();
        let ctx = SolveCtx::new(Default::default(), None);
        let corner = ScenarioEntry { y: vec![0.0, -8.0], h: 8.0, origin_iter: 0, dropped: false };
        let (delta, _) =
            upper_level(&grid, &region, &[corner.clone()], 0.0, 0.5, &cfg_st(), &ctx).unwrap().unwrap();
        assert!((delta - 3.0).abs() < 1e-6, "transformed delta = {delta}");
        // Without the transformation the point escapes the shrunken box and
        // the master stays just below the scenario's own radius.
        let cfg = Config { use_transformation: false, ..cfg_st() };
        let (delta, _) = upper_level(&grid, &region, &[corner], 0.0, 0.5, &cfg, &ctx).unwrap().unwrap();
        assert!(delta > 3.0 + 0.5, "untransformed delta = {delta}");
    }

    #[test]
    fn solve_two_node_interval_contains_three() {
        let (grid, region) = two_node();
        let res = solve_flexibility(&grid, &region, &cfg_st()).unwrap();
        assert!(res.certified);
        assert!(res.delta_guaranteed <= 3.0 + 1e-6 && 3.0 <= res.delta_optimistic + 1e-6,
            "interval [{}, {}]", res.delta_guaranteed, res.delta_optimistic);
        assert!(res.delta_optimistic - res.delta_guaranteed <= 0.05 * res.delta_optimistic + 1e-9);
    }

    #[test]
    fn drop_rule_examples() {
        let mut pool = DiscretizationPool::default();
        pool.add(vec![0.0, -8.0], 8.0, 0);
        pool.add(vec![0.0, -2.9], 2.9, 0);
        assert_eq!(drop_redundant(&mut pool, 3.0), 1);
        assert!(pool.scenarios[0].dropped && !pool.scenarios[1].dropped);
        // Boundary scenarios are kept.
        let mut pool = DiscretizationPool::default();
        pool.add(vec![0.0, -8.0], 8.0, 0);
        assert_eq!(drop_redundant(&mut pool, 8.0), 0);
    }

    #[test]
    fn pool_rejects_duplicates() {
        let mut pool = DiscretizationPool::default();
        assert!(pool.add(vec![1.0, 2.0], 2.0, 0));
        assert!(!pool.add(vec![1.0, 2.0 + 1e-10], 2.0, 1));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn single_thread_runs_are_identical() {
        let (grid, region) = two_node();
        let a = solve_flexibility(&grid, &region, &cfg_st()).unwrap();
        let b = solve_flexibility(&grid, &region, &cfg_st()).unwrap();
        assert_eq!(a.log.len(), b.log.len());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.procedure, rb.procedure);
            assert_eq!(ra.iter, rb.iter);
            assert!((ra.delta_candidate - rb.delta_candidate).abs() < 1e-12 || (ra.delta_candidate.is_nan() && rb.delta_candidate.is_nan()));
            assert_eq!(ra.pool_size, rb.pool_size);
        }
    }

    #[test]
    fn concurrent_mode_reaches_the_same_interval() {
        let (grid, region) = two_node();
        let st = solve_flexibility(&grid, &region, &cfg_st()).unwrap();
        let mt = solve_flexibility(&grid, &region, &Config::default()).unwrap();
        assert!(mt.certified);
        // Certified intervals from both modes must overlap.
        assert!(mt.delta_guaranteed <= st.delta_optimistic + 1e-6);
        assert!(st.delta_guaranteed <= mt.delta_optimistic + 1e-6);
    }
}
