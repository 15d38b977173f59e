//! Command-line front end: solve a case for its maximal flexibility,
//! evaluate the pessimistic flexibility of fixed set-points, check a single
//! scenario, or run the brute-force oracle.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridflex::esip::{build_upper_level, solve_flexibility, Config, EsipError};
use gridflex::grid::{parse_grid, Grid};
use gridflex::oracle::{OracleConfig, OracleEngine};
use gridflex::region::{HyperboxRegion, Region, TransferRegion};
use gridflex::subproblems::{inner_min, evaluate_flexibility_at, AuxSettings, SolveCtx, SubError};

const SCHEMA_VERSION: &str = "1";

#[derive(Parser)]
#[command(name = "gridflex", version, about = "Flexibility index optimization for DC power grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize the flexibility index of a case.
    Solve(SolveArgs),
    /// Evaluate the pessimistic flexibility of fixed set-points.
    Evaluate(EvaluateArgs),
    /// Check manageability of one scenario, with flows and controls.
    Check(CheckArgs),
    /// Run the brute-force oracle on a small case.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Case file (JSON).
    case: PathBuf,
    /// Accept unknown keys in the case file.
    #[arg(long)]
    lenient: bool,
    /// Uncertainty region parametrization.
    #[arg(long, default_value = "box", value_parser = ["box", "transfer"])]
    region: String,
    /// Write the report JSON here in addition to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 0.5)]
    alpha_prime: f64,
    #[arg(long, default_value_t = 0.05)]
    rel_tol: f64,
    #[arg(long, default_value_t = 0.05)]
    eps_r0: f64,
    #[arg(long, default_value_t = 2.0)]
    r_r: f64,
    /// Disable the transformation-based upper level.
    #[arg(long)]
    no_transformation: bool,
    /// Disable dropping of redundant discretization points.
    #[arg(long)]
    no_dropping: bool,
    /// Disable the auxiliary fixed-set-point heuristic.
    #[arg(long)]
    no_auxiliary: bool,
    /// Run the bounding procedures round-robin on one thread.
    #[arg(long)]
    single_thread: bool,
    #[arg(long, default_value_t = 0)]
    seed: i32,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Dump the initial upper-level master in LP format.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
    /// Write the iteration log (JSON lines) here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// JSON map of generator id to set-point.
    #[arg(long)]
    x_file: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// JSON map of generator id to set-point.
    #[arg(long)]
    x_file: PathBuf,
    /// JSON map of node id to uncertain offset (missing nodes are 0).
    #[arg(long)]
    y_file: Option<PathBuf>,
    /// Also emit a scenario-sampling CSV with N points per uncertain axis.
    #[arg(long)]
    sample: Option<usize>,
    /// Where to write the sampling CSV.
    #[arg(long, default_value = "samples.csv")]
    sample_out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Evaluate at these set-points instead of optimizing over them.
    #[arg(long)]
    x_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    x_grid_resolution: f64,
    #[arg(long, default_value_t = 0.05)]
    y_grid_resolution: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Check(args) => cmd_check(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match code {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_case(common: &CommonArgs) -> Result<(Grid, Region, String), String> {
    let grid = parse_grid(&common.case, common.lenient).map_err(|e| e.to_string())?;
    let region = match common.region.as_str() {
        "box" => Region::Box(HyperboxRegion::from_grid(&grid)),
        "transfer" => Region::Transfer(
            TransferRegion::from_grid(&grid)
                .ok_or_else(|| "transfer region requires regions A and B in the case file".to_string())?,
        ),
        other => return Err(format!("unknown region kind {other}")),
    };
    let digest = file_digest(&common.case)?;
    Ok((grid, region, digest))
}

/// FNV-1a hash of the input file, hex encoded.
fn file_digest(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("fnv1a:{h:016x}"))
}

fn read_x_file(grid: &Grid, path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut x = vec![0.0; grid.generators.len()];
    for (id, value) in &map {
        let g = grid
            .generator_index(id)
            .ok_or_else(|| format!("x file references unknown generator {id}"))?;
        x[g] = *value;
    }
    for (g, gen) in grid.generators.iter().enumerate() {
        if !map.contains_key(&gen.id) {
            return Err(format!("x file is missing generator {}", gen.id));
        }
        if x[g] < gen.x_min - 1e-9 || x[g] > gen.x_max + 1e-9 {
            return Err(format!("set-point for {} is out of bounds", gen.id));
        }
    }
    Ok(x)
}

fn read_y_file(grid: &Grid, path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut y = vec![0.0; grid.nodes.len()];
    for (id, value) in &map {
        let n = grid.node_index(id).ok_or_else(|| format!("y file references unknown node {id}"))?;
        y[n] = *value;
    }
    Ok(y)
}

fn emit_report(report: &serde_json::Value, output: &Option<PathBuf>) -> Result<(), String> {
    let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
    println!("{text}");
    if let Some(path) = output {
        std::fs::write(path, text).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn x_map(grid: &Grid, x: &[f64]) -> serde_json::Value {
    let map: BTreeMap<&str, f64> =
        grid.generators.iter().zip(x).map(|(g, v)| (g.id.as_str(), *v)).collect();
    serde_json::to_value(map).expect("serializable")
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, String> {
    let (grid, region, digest) = load_case(&args.common)?;
    let cfg = Config {
        alpha_prime: args.alpha_prime,
        rel_tol: args.rel_tol,
        eps_r0: args.eps_r0,
        r_r: args.r_r,
        use_transformation: !args.no_transformation,
        use_dropping: !args.no_dropping,
        use_auxiliary: !args.no_auxiliary,
        single_thread: args.single_thread,
        seed: args.seed,
        time_limit: args.time_limit,
        ..Config::default()
    };
    if let Some(path) = &args.dump_lp {
        let (model, _) = build_upper_level(&grid, &region, &[], cfg.eps_r0, cfg.alpha_prime, &cfg);
        model.dump_lp(path).map_err(|e| e.to_string())?;
    }
    let started = std::time::Instant::now();
    let result = match solve_flexibility(&grid, &region, &cfg) {
        Ok(r) => r,
        Err(EsipError::NoFeasibleAction) => return Err("no feasible preventive action".to_string()),
        Err(EsipError::Sub(e)) => {
            let report = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "command": "solve",
                "case": args.common.case,
                "input_digest": digest,
                "error": e.to_string(),
            });
            emit_report(&report, &args.common.output)?;
            return Ok(ExitCode::from(2));
        }
    };
    let log_path = if let Some(path) = &args.log {
        let mut out = String::new();
        for rec in &result.log {
            out.push_str(&serde_json::to_string(rec).map_err(|e| e.to_string())?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| e.to_string())?;
        serde_json::json!(path)
    } else {
        serde_json::Value::Null
    };
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "solve",
        "case": args.common.case,
        "input_digest": digest,
        "region": args.common.region,
        "config": cfg,
        "delta_guaranteed": finite_or_null(result.delta_guaranteed),
        "delta_optimistic": finite_or_null(result.delta_optimistic),
        "certified": result.certified,
        "timed_out": result.timed_out,
        "x_star": result.x_star.as_ref().map(|x| x_map(&grid, x)),
        "iterations": {"lower": result.lower_iters, "upper": result.upper_iters},
        "log_path": log_path,
        "wall_ms": started.elapsed().as_millis() as u64,
    });
    emit_report(&report, &args.common.output)?;
    if result.timed_out {
        Ok(ExitCode::from(3))
    } else if result.certified {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode, String> {
    let (grid, region, digest) = load_case(&args.common)?;
    let x = read_x_file(&grid, &args.x_file)?;
    let ctx = SolveCtx::new(Default::default(), None);
    let result = match evaluate_flexibility_at(&grid, &region, &x, &AuxSettings::default(), &ctx) {
        Ok(r) => r,
        Err(SubError::Infeasible(msg)) => return Err(format!("infeasible base case: {msg}")),
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let witness = result.y_witness.as_ref().map(|y| {
        let map: BTreeMap<&str, f64> =
            grid.nodes.iter().zip(y).map(|(n, v)| (n.id.as_str(), *v)).collect();
        serde_json::to_value(map).expect("serializable")
    });
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "evaluate",
        "case": args.common.case,
        "input_digest": digest,
        "x": x_map(&grid, &x),
        "delta_wc_relax": result.delta_wc_relax,
        "y_witness": witness,
    });
    emit_report(&report, &args.common.output)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, String> {
    let (grid, region, digest) = load_case(&args.common)?;
    let x = read_x_file(&grid, &args.x_file)?;
    let y = match &args.y_file {
        Some(path) => read_y_file(&grid, path)?,
        None => region.y0().to_vec(),
    };
    let ctx = SolveCtx::new(Default::default(), None);
    let inner = match inner_min(&grid, &region, &x, &y, 0.0, 0.0, &ctx) {
        Ok(r) => r,
        Err(SubError::Infeasible(msg)) => return Err(format!("scenario rejected: {msg}")),
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let engine = OracleEngine::new(&grid);
    let flows = engine.best_flows(&x, &y).map(|(flows, merge, _)| {
        let per_edge: BTreeMap<&str, f64> =
            grid.edges.iter().zip(&flows).map(|(e, f)| (e.id.as_str(), *f)).collect();
        serde_json::json!({
            "per_edge": per_edge,
            "merge_closed": merge.map(|b| grid.merge_pairs[b].id.clone()),
        })
    });
    if let Some(n) = args.sample {
        write_samples(&grid, &region, &x, n.max(2), &args.sample_out)?;
    }
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "check",
        "case": args.common.case,
        "input_digest": digest,
        "x": x_map(&grid, &x),
        "g_star": inner.g_star,
        "manageable": inner.g_star <= 1e-9,
        "merge_closed": inner.z_star.map(|b| grid.merge_pairs[b].id.clone()),
        "flows": flows,
        "samples": args.sample.map(|_| args.sample_out.clone()),
    });
    emit_report(&report, &args.common.output)?;
    Ok(ExitCode::SUCCESS)
}

/// Scenario-sampling CSV over the uncertain axes: one column per uncertain
/// node offset, the region value h, and the manageability flag.
fn write_samples(
    grid: &Grid,
    region: &Region,
    x: &[f64],
    n: usize,
    path: &Path,
) -> Result<(), String> {
    let engine = OracleEngine::new(grid);
    let bounds = region.host_bounds();
    let y0 = region.y0().to_vec();
    let dims: Vec<usize> = (0..grid.nodes.len()).filter(|&i| bounds[i].1 > bounds[i].0).collect();
    if dims.is_empty() {
        return Err("case has no uncertain injections to sample".to_string());
    }
    let mut out = String::new();
    for &d in &dims {
        out.push_str(&format!("y_{},", grid.nodes[d].id));
    }
    out.push_str("h,manageable\n");
    let mut point = vec![0usize; dims.len()];
    loop {
        let mut y = y0.clone();
        for (k, &d) in dims.iter().enumerate() {
            let frac = point[k] as f64 / (n - 1) as f64;
            y[d] = bounds[d].0 + frac * (bounds[d].1 - bounds[d].0);
        }
        let h = match region {
            Region::Box(r) => r.h(&y),
            Region::Transfer(r) => r.h(grid, x, &y),
        };
        let manageable = engine.manageable(x, &y);
        for &d in &dims {
            out.push_str(&format!("{},", y[d]));
        }
        out.push_str(&format!("{},{}\n", h, u8::from(manageable)));
        let mut k = 0;
        loop {
            if k == point.len() {
                std::fs::write(path, out).map_err(|e| e.to_string())?;
                return Ok(());
            }
            point[k] += 1;
            if point[k] < n {
                break;
            }
            point[k] = 0;
            k += 1;
        }
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode, String> {
    let (grid, region, digest) = load_case(&args.common)?;
    if grid.generators.len() > 3 {
        return Err("oracle supports at most three generators".to_string());
    }
    if (grid.merge_pairs.len() + 1)
        * 5usize.pow(grid.edges.iter().filter(|e| e.pst.is_some()).count() as u32)
        > 100_000
    {
        return Err("too many discrete configurations for the oracle".to_string());
    }
    let cfg = OracleConfig {
        x_grid_resolution: args.x_grid_resolution,
        y_grid_resolution: args.y_grid_resolution,
        ..OracleConfig::default()
    };
    let (value, x) = match &args.x_file {
        Some(path) => {
            let x = read_x_file(&grid, path)?;
            (gridflex::oracle::oracle_flexibility_at(&grid, &region, &x, &cfg), x)
        }
        None => gridflex::oracle::oracle_flexibility(&grid, &region, &cfg),
    };
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": "oracle",
        "case": args.common.case,
        "input_digest": digest,
        "oracle_flexibility": value,
        "x": x_map(&grid, &x),
    });
    emit_report(&report, &args.common.output)?;
    // Flush before exiting so piped consumers see the report.
    std::io::stdout().flush().ok();
    Ok(ExitCode::SUCCESS)
}
