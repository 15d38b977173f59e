//! A thin, swappable interface to a mixed-integer linear solver plus
//! reusable encoding helpers (absolute value, two-term min, clamp, exact
//! max) built on big-M disjunctions.
//!
//! Big-M constants are always derived from variable bounds — every
//! continuous variable carries explicit finite bounds — and each relaxed
//! big-M row registers a guard that is checked at reported optima: if the
//! optimum sits at the artificial slack boundary the constant was too small
//! and the encoding truncated the model, which is a bug, so solve panics.

use std::fmt::Write as _;
use std::path::Path;

use highs::HighsModelStatus;

pub const MIP_FEASIBILITY_TOL: f64 = 1e-6;
pub const MIP_INTEGRALITY_TOL: f64 = 1e-6;
pub const DEFAULT_MIP_GAP: f64 = 1e-6;
/// Headroom multiplier applied to derived big-M constants so that a
/// legitimate optimum can never coincide with the artificial boundary.
const BIG_M_HEADROOM: f64 = 1.0;
/// Tolerance for the big-M truncation guard.
const GUARD_TOL: f64 = 1e-4;

/// Handle to a model column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A linear expression `sum coeff_i * var_i + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        LinExpr { terms: vec![(v.0, 1.0)], constant: 0.0 }
    }

    pub fn term(coeff: f64, v: Var) -> Self {
        LinExpr { terms: vec![(v.0, coeff)], constant: 0.0 }
    }

    pub fn plus(mut self, coeff: f64, v: Var) -> Self {
        self.terms.push((v.0, coeff));
        self
    }

    pub fn plus_expr(mut self, other: &LinExpr, scale: f64) -> Self {
        for &(i, c) in &other.terms {
            self.terms.push((i, scale * c));
        }
        self.constant += scale * other.constant;
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    /// Merge duplicate columns; HiGHS rejects repeated indices in a row.
    fn normalized(&self) -> Vec<(usize, f64)> {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Col {
    name: String,
    lb: f64,
    ub: f64,
    integer: bool,
}

#[derive(Debug, Clone)]
struct Row {
    name: String,
    expr: LinExpr,
    cmp: Cmp,
    rhs: f64,
}

/// A big-M relaxation guard: when the binary takes `relaxed_at`, the row is
/// meant to be pure slack; the optimum must then keep `expr - rhs` strictly
/// below the big-M constant.
#[derive(Debug, Clone)]
struct Guard {
    expr: LinExpr,
    rhs: f64,
    big_m: f64,
    binary: Var,
    relaxed_at: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    cols: Vec<Col>,
    rows: Vec<Row>,
    objective: LinExpr,
    sense: Sense,
    guards: Vec<Guard>,
    aux: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    TimeLimit,
    Error,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: Status,
    pub values: Vec<f64>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub message: Option<String>,
}

impl SolveOutcome {
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.constant + e.terms.iter().map(|&(i, c)| c * self.values[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub time_limit: Option<f64>,
    pub mip_gap: f64,
    pub seed: i32,
    pub threads: i32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { time_limit: None, mip_gap: DEFAULT_MIP_GAP, seed: 0, threads: 1 }
    }
}

impl Model {
    pub fn new(sense: Sense) -> Self {
        Model { cols: Vec::new(), rows: Vec::new(), objective: LinExpr::default(), sense, guards: Vec::new(), aux: 0 }
    }

    /// Add a continuous variable; bounds must be finite so that big-M
    /// constants can be derived from them.
    pub fn add_cont(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> Var {
        assert!(lb.is_finite() && ub.is_finite(), "continuous variables require finite bounds");
        let name = self.fresh(name.into());
        assert!(lb <= ub, "lb > ub for {name}");
        self.cols.push(Col { name, lb, ub, integer: false });
        Var(self.cols.len() - 1)
    }

    fn fresh(&mut self, base: String) -> String {
        self.aux += 1;
        format!("{}_{}", base, self.aux - 1)
    }

    pub fn add_bin(&mut self, name: impl Into<String>) -> Var {
        let name = self.fresh(name.into());
        self.cols.push(Col { name, lb: 0.0, ub: 1.0, integer: true });
        Var(self.cols.len() - 1)
    }

    /// Fix a binary to a constant (used to pin control choices).
    pub fn fix(&mut self, v: Var, value: f64) {
        self.cols[v.0].lb = value;
        self.cols[v.0].ub = value;
    }

    pub fn bounds(&self, v: Var) -> (f64, f64) {
        (self.cols[v.0].lb, self.cols[v.0].ub)
    }

    pub fn add_row(&mut self, name: impl Into<String>, expr: LinExpr, cmp: Cmp, rhs: f64) {
        let name = self.fresh(name.into());
        self.rows.push(Row { name, expr, cmp, rhs });
    }

    pub fn set_objective(&mut self, expr: LinExpr) {
        self.objective = expr;
    }

    /// Upper bound on |expr| implied by the variable bounds, with headroom
    /// so a legitimate optimum never touches the derived constant.
    pub fn big_m(&self, expr: &LinExpr) -> f64 {
        let mut m = expr.constant.abs();
        for &(i, c) in &expr.terms {
            let col = &self.cols[i];
            m += c.abs() * col.lb.abs().max(col.ub.abs());
        }
        m + BIG_M_HEADROOM
    }

    fn register_guard(&mut self, expr: LinExpr, rhs: f64, big_m: f64, binary: Var, relaxed_at: f64) {
        self.guards.push(Guard { expr, rhs, big_m, binary, relaxed_at });
    }

    pub fn num_vars(&self) -> usize {
        self.cols.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn solve(&self, opts: &SolveOptions) -> SolveOutcome {
        let mut pb = highs::RowProblem::default();
        let mut handles = Vec::with_capacity(self.cols.len());
        let obj = {
            let mut coeffs = vec![0.0; self.cols.len()];
            for &(i, c) in &self.objective.normalized() {
                coeffs[i] = c;
            }
            coeffs
        };
        for (i, col) in self.cols.iter().enumerate() {
            let h = if col.integer {
                pb.add_integer_column(obj[i], col.lb..=col.ub)
            } else {
                pb.add_column(obj[i], col.lb..=col.ub)
            };
            handles.push(h);
        }
        for row in &self.rows {
            let factors: Vec<_> = row.expr.normalized().into_iter().map(|(i, c)| (handles[i], c)).collect();
            let rhs = row.rhs - row.expr.constant;
            match row.cmp {
                Cmp::Le => pb.add_row(..=rhs, factors),
                Cmp::Ge => pb.add_row(rhs.., factors),
                Cmp::Eq => pb.add_row(rhs..=rhs, factors),
            };
        }
        let sense = match self.sense {
            Sense::Minimize => highs::Sense::Minimise,
            Sense::Maximize => highs::Sense::Maximise,
        };
        let mut model = pb.optimise(sense);
        model.set_option("output_flag", false);
        model.set_option("threads", opts.threads);
        model.set_option("random_seed", opts.seed);
        model.set_option("mip_rel_gap", opts.mip_gap);
        model.set_option("mip_feasibility_tolerance", MIP_FEASIBILITY_TOL);
        model.set_option("primal_feasibility_tolerance", MIP_FEASIBILITY_TOL);
        if let Some(t) = opts.time_limit {
            model.set_option("time_limit", t.max(0.0));
        }
        let solved = model.solve();
        let status = solved.status();
        match status {
            HighsModelStatus::Optimal => {
                let solution = solved.get_solution();
                let values: Vec<f64> = solution.columns().to_vec();
                let objective = self.objective.constant
                    + self.objective.normalized().iter().map(|&(i, c)| c * values[i]).sum::<f64>();
                let outcome = SolveOutcome {
                    status: Status::Optimal,
                    values,
                    objective,
                    bound: objective,
                    gap: 0.0,
                    message: None,
                };
                self.check_guards(&outcome);
                outcome
            }
            HighsModelStatus::Infeasible => SolveOutcome {
                status: Status::Infeasible,
                values: Vec::new(),
                objective: f64::NAN,
                bound: f64::NAN,
                gap: f64::NAN,
                message: None,
            },
            HighsModelStatus::ReachedTimeLimit => SolveOutcome {
                status: Status::TimeLimit,
                values: Vec::new(),
                objective: f64::NAN,
                bound: f64::NAN,
                gap: f64::NAN,
                message: Some("time limit reached".into()),
            },
            other => SolveOutcome {
                status: Status::Error,
                values: Vec::new(),
                objective: f64::NAN,
                bound: f64::NAN,
                gap: f64::NAN,
                message: Some(format!("solver returned {other:?}")),
            },
        }
    }

    fn check_guards(&self, outcome: &SolveOutcome) {
        for g in &self.guards {
            let b = outcome.value(g.binary);
            if (b - g.relaxed_at).abs() > 0.5 {
                continue;
            }
            let used = outcome.eval(&g.expr) - g.rhs;
            assert!(
                used < g.big_m - GUARD_TOL,
                "big-M truncation: relaxed row exhausts its slack ({} >= {})",
                used,
                g.big_m
            );
        }
    }

    /// Write the model in standard LP text format.
    pub fn dump_lp(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        let dir = match self.sense {
            Sense::Minimize => "Minimize",
            Sense::Maximize => "Maximize",
        };
        let write_terms = |out: &mut String, terms: &[(usize, f64)]| {
            if terms.is_empty() {
                out.push_str(" 0 x0");
                return;
            }
            for &(i, c) in terms {
                let _ = write!(out, " {} {} {}", if c < 0.0 { "-" } else { "+" }, c.abs(), self.cols[i].name);
            }
        };
        let _ = writeln!(out, "{dir}");
        out.push_str(" obj:");
        write_terms(&mut out, &self.objective.normalized());
        out.push('\n');
        let _ = writeln!(out, "Subject To");
        for row in &self.rows {
            let _ = write!(out, " {}:", row.name);
            write_terms(&mut out, &row.expr.normalized());
            let op = match row.cmp {
                Cmp::Le => "<=",
                Cmp::Eq => "=",
                Cmp::Ge => ">=",
            };
            let _ = writeln!(out, " {} {}", op, row.rhs - row.expr.constant);
        }
        let _ = writeln!(out, "Bounds");
        for col in &self.cols {
            let _ = writeln!(out, " {} <= {} <= {}", col.lb, col.name, col.ub);
        }
        let binaries: Vec<_> = self.cols.iter().filter(|c| c.integer).collect();
        if !binaries.is_empty() {
            let _ = writeln!(out, "Binary");
            for col in binaries {
                let _ = writeln!(out, " {}", col.name);
            }
        }
        let _ = writeln!(out, "End");
        std::fs::write(path, out)
    }
}

/// `a = |expr|` via one binary selecting the sign branch. The epigraph rows
/// make `a >= |expr|` everywhere; the binary-linked rows pin equality at
/// every feasible point, not just at optima.
pub fn encode_abs(m: &mut Model, expr: &LinExpr, bound: f64, name: &str) -> Var {
    assert!(bound.is_finite(), "big-M for |{name}| must be finite");
    let a = m.add_cont(format!("{name}_abs"), 0.0, bound);
    let b = m.add_bin(format!("{name}_sgn"));
    m.add_row(format!("{name}_abs_ge_p"), LinExpr::var(a).plus_expr(expr, -1.0), Cmp::Ge, 0.0);
    m.add_row(format!("{name}_abs_ge_n"), LinExpr::var(a).plus_expr(expr, 1.0), Cmp::Ge, 0.0);
    // b = 1 selects a = expr, b = 0 selects a = -expr.
    let up = LinExpr::var(a).plus_expr(expr, -1.0).plus(-2.0 * bound, b);
    m.add_row(format!("{name}_abs_le_p"), up.clone(), Cmp::Le, 0.0);
    m.register_guard(up, 0.0, 2.0 * bound, b, 1.0);
    let un = LinExpr::var(a).plus_expr(expr, 1.0).plus(2.0 * bound, b);
    m.add_row(format!("{name}_abs_le_n"), un.clone(), Cmp::Le, 2.0 * bound);
    m.register_guard(un, 2.0 * bound, 2.0 * bound, b, 0.0);
    a
}

/// `v = min{e1, e2}` exactly: upper rows always, lower rows enforced by the
/// selector binaries, at least one of which must be active.
pub fn encode_min2(m: &mut Model, e1: &LinExpr, e2: &LinExpr, name: &str) -> Var {
    let m1 = m.big_m(e1);
    let m2 = m.big_m(e2);
    let big = m1.max(m2);
    let v = m.add_cont(format!("{name}_min"), -big, big);
    let b1 = m.add_bin(format!("{name}_sel1"));
    let b2 = m.add_bin(format!("{name}_sel2"));
    m.add_row(format!("{name}_min_le1"), LinExpr::var(v).plus_expr(e1, -1.0), Cmp::Le, 0.0);
    m.add_row(format!("{name}_min_le2"), LinExpr::var(v).plus_expr(e2, -1.0), Cmp::Le, 0.0);
    let big1 = 2.0 * big;
    for (e, b, tag) in [(e1, b1, "1"), (e2, b2, "2")] {
        // v >= e - big1 (1 - b)
        let row = LinExpr::default().plus_expr(e, 1.0).plus(-1.0, v).plus(big1, b);
        m.add_row(format!("{name}_min_ge{tag}"), row.clone(), Cmp::Le, big1);
        m.register_guard(row, big1, big1, b, 0.0);
    }
    m.add_row(format!("{name}_min_pick"), LinExpr::var(b1).plus(1.0, b2), Cmp::Ge, 1.0);
    v
}

/// `c = mid(lo, input, hi)` with constant clamp bounds: two regime binaries
/// mark saturation below and above; with both inactive `c = input`.
pub fn encode_clamp(m: &mut Model, input: &LinExpr, lo: f64, hi: f64, name: &str) -> Var {
    assert!(lo <= hi, "clamp bounds inverted for {name}");
    let big = m.big_m(input) + lo.abs().max(hi.abs());
    let c = m.add_cont(format!("{name}_mid"), lo, hi);
    let b_lo = m.add_bin(format!("{name}_sat_lo"));
    let b_hi = m.add_bin(format!("{name}_sat_hi"));
    m.add_row(format!("{name}_one_regime"), LinExpr::var(b_lo).plus(1.0, b_hi), Cmp::Le, 1.0);
    // c = input unless a saturation binary lifts the link.
    let link_up = LinExpr::var(c).plus_expr(input, -1.0).plus(-big, b_lo).plus(-big, b_hi);
    m.add_row(format!("{name}_track_up"), link_up, Cmp::Le, 0.0);
    let link_dn = LinExpr::var(c).plus_expr(input, -1.0).plus(big, b_lo).plus(big, b_hi);
    m.add_row(format!("{name}_track_dn"), link_dn, Cmp::Ge, 0.0);
    // b_lo = 1 pins c = lo and requires input <= lo; b_hi symmetric.
    let pin_lo = LinExpr::var(c).plus(big, b_lo);
    m.add_row(format!("{name}_pin_lo"), pin_lo.clone(), Cmp::Le, lo + big);
    m.register_guard(pin_lo, lo + big, big, b_lo, 0.0);
    let memb_lo = LinExpr::default().plus_expr(input, 1.0).plus(big, b_lo);
    m.add_row(format!("{name}_memb_lo"), memb_lo.clone(), Cmp::Le, lo + big);
    m.register_guard(memb_lo, lo + big, big, b_lo, 0.0);
    let pin_hi = LinExpr::var(c).plus(-big, b_hi);
    m.add_row(format!("{name}_pin_hi"), pin_hi.clone(), Cmp::Ge, hi - big);
    let memb_hi = LinExpr::default().plus_expr(input, 1.0).plus(-big, b_hi);
    m.add_row(format!("{name}_memb_hi"), memb_hi.clone(), Cmp::Ge, hi - big);
    c
}

/// `v = max_i e_i` exactly: epigraph rows plus tightness binaries forcing v
/// down onto at least one term, so v cannot float above the true maximum.
pub fn encode_max_eq(m: &mut Model, exprs: &[LinExpr], name: &str) -> Var {
    assert!(!exprs.is_empty());
    let big = exprs.iter().map(|e| m.big_m(e)).fold(0.0_f64, f64::max);
    let v = m.add_cont(format!("{name}_max"), -big, big);
    let mut pick = LinExpr::default();
    for (k, e) in exprs.iter().enumerate() {
        m.add_row(format!("{name}_max_ge{k}"), LinExpr::var(v).plus_expr(e, -1.0), Cmp::Ge, 0.0);
        let b = m.add_bin(format!("{name}_tight{k}"));
        let big1 = 2.0 * big;
        // v <= e + big1 (1 - b)
        let row = LinExpr::var(v).plus_expr(e, -1.0).plus(big1, b);
        m.add_row(format!("{name}_max_le{k}"), row.clone(), Cmp::Le, big1);
        m.register_guard(row, big1, big1, b, 0.0);
        pick = pick.plus(1.0, b);
    }
    m.add_row(format!("{name}_max_pick"), pick, Cmp::Ge, 1.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(m: &Model) -> SolveOutcome {
        m.solve(&SolveOptions::default())
    }

    #[test]
    fn minimal_lp_optimum() {
        let mut m = Model::new(Sense::Minimize);
        let x = m.add_cont("x", 0.0, 10.0);
        m.add_row("lb", LinExpr::var(x), Cmp::Ge, 3.0);
        m.set_objective(LinExpr::var(x));
        let out = solve(&m);
        assert_eq!(out.status, Status::Optimal);
        assert!((out.value(x) - 3.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_detected() {
        let mut m = Model::new(Sense::Maximize);
        let x = m.add_cont("x", 0.0, 10.0);
        m.add_row("ub", LinExpr::var(x), Cmp::Le, -1.0);
        m.set_objective(LinExpr::var(x));
        assert_eq!(solve(&m).status, Status::Infeasible);
    }

    #[test]
    fn abs_of_fixed_values() {
        for v in [4.0, -4.0, 0.0, 2.5] {
            let mut m = Model::new(Sense::Minimize);
            let x = m.add_cont("x", -5.0, 5.0);
            m.add_row("fix", LinExpr::var(x), Cmp::Eq, v);
            let bound = m.big_m(&LinExpr::var(x));
            let a = encode_abs(&mut m, &LinExpr::var(x), bound, "x");
            m.set_objective(LinExpr::var(a));
            let out = solve(&m);
            assert_eq!(out.status, Status::Optimal);
            assert!((out.value(a) - v.abs()).abs() < 1e-6, "|{v}| gave {}", out.value(a));
        }
    }

    #[test]
    fn abs_under_minimization_with_free_input() {
        let mut m = Model::new(Sense::Minimize);
        let x = m.add_cont("x", -5.0, 5.0);
        m.add_row("lb", LinExpr::var(x), Cmp::Ge, 2.0);
        let bound = m.big_m(&LinExpr::var(x));
        let a = encode_abs(&mut m, &LinExpr::var(x), bound, "x");
        m.set_objective(LinExpr::var(a));
        let out = solve(&m);
        assert!((out.value(a) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn min2_of_fixed_values() {
        for (a, b, want) in [(3.0, 5.0, 3.0), (5.0, 3.0, 3.0), (-1.0, 4.0, -1.0)] {
            for sense in [Sense::Minimize, Sense::Maximize] {
                let mut m = Model::new(sense);
                let x = m.add_cont("x", -10.0, 10.0);
                let y = m.add_cont("y", -10.0, 10.0);
                m.add_row("fx", LinExpr::var(x), Cmp::Eq, a);
                m.add_row("fy", LinExpr::var(y), Cmp::Eq, b);
                let v = encode_min2(&mut m, &LinExpr::var(x), &LinExpr::var(y), "m");
                m.set_objective(LinExpr::var(v));
                let out = solve(&m);
                assert_eq!(out.status, Status::Optimal);
                assert!((out.value(v) - want).abs() < 1e-6, "min({a},{b}) gave {}", out.value(v));
            }
        }
    }

    #[test]
    fn clamp_matches_mid_function() {
        for (input, want) in [(0.5, 0.5), (2.0, 1.0), (-7.0, -1.0), (1.0, 1.0), (-1.0, -1.0)] {
            for sense in [Sense::Minimize, Sense::Maximize] {
                let mut m = Model::new(sense);
                let x = m.add_cont("x", -10.0, 10.0);
                m.add_row("fx", LinExpr::var(x), Cmp::Eq, input);
                let c = encode_clamp(&mut m, &LinExpr::var(x), -1.0, 1.0, "c");
                m.set_objective(LinExpr::var(c));
                let out = solve(&m);
                assert_eq!(out.status, Status::Optimal);
                assert!((out.value(c) - want).abs() < 1e-6, "mid(-1,{input},1) gave {}", out.value(c));
            }
        }
    }

    #[test]
    fn max_eq_is_tight_in_both_directions() {
        for sense in [Sense::Minimize, Sense::Maximize] {
            let mut m = Model::new(sense);
            let x = m.add_cont("x", -10.0, 10.0);
            let y = m.add_cont("y", -10.0, 10.0);
            m.add_row("fx", LinExpr::var(x), Cmp::Eq, 0.2);
            m.add_row("fy", LinExpr::var(y), Cmp::Eq, -0.6);
            let v = encode_max_eq(&mut m, &[LinExpr::var(x), LinExpr::var(y)], "g");
            m.set_objective(LinExpr::var(v));
            let out = solve(&m);
            assert!((out.value(v) - 0.2).abs() < 1e-6, "max gave {}", out.value(v));
        }
    }

    #[test]
    fn encodings_match_over_value_grid() {
        // Sweep the helper encodings over a grid of fixed inputs and check
        // against the mathematical functions.
        let mut i = 0;
        let mut v = -6.0;
        while v <= 6.0 {
            let mut m = Model::new(Sense::Maximize);
            let x = m.add_cont("x", -6.0, 6.0);
            m.add_row("fx", LinExpr::var(x), Cmp::Eq, v);
            let bound = m.big_m(&LinExpr::var(x));
            let a = encode_abs(&mut m, &LinExpr::var(x), bound, "x");
            let c = encode_clamp(&mut m, &LinExpr::var(x), -2.5, 1.5, "c");
            let mn = encode_min2(&mut m, &LinExpr::var(x), &LinExpr::constant(0.75), "m");
            m.set_objective(LinExpr::var(a).plus(1.0, c).plus(1.0, mn));
            let out = solve(&m);
            assert_eq!(out.status, Status::Optimal, "grid point {v}");
            assert!((out.value(a) - v.abs()).abs() < 1e-6);
            assert!((out.value(c) - v.clamp(-2.5, 1.5)).abs() < 1e-6);
            assert!((out.value(mn) - v.min(0.75)).abs() < 1e-6);
            i += 1;
            v += 0.11;
        }
        assert!(i >= 100);
    }

    #[test]
    fn lp_dump_roundtrip_text() {
        let mut m = Model::new(Sense::Minimize);
        let x = m.add_cont("x", 0.0, 10.0);
        m.add_row("lb", LinExpr::var(x), Cmp::Ge, 3.0);
        m.set_objective(LinExpr::var(x));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lp");
        m.dump_lp(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("Minimize"));
        assert!(text.contains("Subject To"));
        assert!(text.contains("End"));
    }
}
