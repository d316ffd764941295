//! Command-line front end. Exit codes: 0 success, 1 configuration or I/O
//! error, 2 numerical failure (including failed table checks), 3 partial
//! results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::check::{run_checks, CheckHooks};
use crate::config::{self, RunConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::experiments::{self, monotonicity_report, rho_table, rho_variation, SweepTable};
use crate::linalg;
use crate::model::{BilinearSystem, ControlSignal, Trajectory};
use crate::ocp::{reference_solution_with, solve_finite_horizon};
use crate::rhc::{compare_to_reference, decay_certificate, run_rhc, RhcResult};
use crate::riccati::{solve_are, ARE_TOLERANCE};
use crate::taylor::TerminalPenalty;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bilinear-rhc", version, about = "Receding-horizon control of bilinear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override applied to the configuration, e.g. solver.h=0.02.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for output files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Md,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Riccati equation and print Π, A_π, λ and the residual.
    Riccati {
        #[command(flatten)]
        common: Common,
    },
    /// Solve one finite-horizon problem on (0, T).
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Run the receding-horizon loop on (0, L).
    Rhc {
        #[command(flatten)]
        common: Common,
        /// Also compute the reference control and report the errors against it.
        #[arg(long)]
        compare: bool,
    },
    /// Run the (τ, T) sweep and write error and ρ tables.
    PaperTables {
        #[command(flatten)]
        common: Common,
        /// Worker threads for independent cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run the embedded self-check suite.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::InvalidSystem(_) => EXIT_CONFIG,
        Error::PartialRhc { .. } => EXIT_PARTIAL,
        _ => EXIT_NUMERICAL,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Riccati { common } => cmd_riccati(&common),
        Command::Solve { common } => cmd_solve(&common),
        Command::Rhc { common, compare } => cmd_rhc(&common, compare),
        Command::PaperTables { common, jobs, format } => cmd_paper_tables(&common, jobs, format),
        Command::Check { common } => cmd_check(&common),
    }
}

fn require_config(common: &Common) -> Result<&Path> {
    common.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))
}

fn load_run(common: &Common) -> Result<RunConfig> {
    config::load(require_config(common)?, &common.overrides)
}

fn out_dir(common: &Common) -> Result<Option<&Path>> {
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
    }
    Ok(common.out.as_deref())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn format_matrix(m: &nalgebra::DMatrix<f64>) -> String {
    linalg::matrix_to_rows(m)
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:>14.8}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cmd_riccati(common: &Common) -> Result<i32> {
    let cfg = load_run(common)?;
    let ric = solve_are(&cfg.system)?;
    println!("Pi =\n{}", format_matrix(&ric.pi));
    println!("A_pi =\n{}", format_matrix(&ric.a_pi));
    println!("lambda = {:.10}", ric.lambda);
    println!("residual = {:.3e}", ric.residual);
    println!("newton iterations = {}", ric.iterations);
    if let Some(dir) = out_dir(common)? {
        write_json(
            &dir.join("riccati.json"),
            &json!({
                "Pi": linalg::matrix_to_rows(&ric.pi),
                "A_pi": linalg::matrix_to_rows(&ric.a_pi),
                "lambda": ric.lambda,
                "residual": ric.residual,
                "iterations": ric.iterations,
            }),
        )?;
    }
    Ok(if ric.residual <= ARE_TOLERANCE { EXIT_OK } else { EXIT_NUMERICAL })
}

fn write_control(path: &Path, u: &ControlSignal) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t_left", "t_right", "u_left", "u_right"])?;
    let grid = u.grid();
    for (k, seg) in u.segments().iter().enumerate() {
        w.write_record([grid.node(k), grid.node(k + 1), seg[0], seg[1]].iter().map(|v| format!("{v:.17e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, y: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = y.state(0).len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (k, s) in y.states().iter().enumerate() {
        let mut rec = vec![format!("{:.17e}", y.grid().node(k))];
        rec.extend(s.iter().map(|v| format!("{v:.17e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_solve(common: &Common) -> Result<i32> {
    let cfg = load_run(common)?;
    let y0 = cfg.initial_state()?;
    let ric = solve_are(&cfg.system)?;
    let phi = cfg.penalty(&ric)?;
    let sol = solve_finite_horizon(&cfg.system, cfg.horizon()?, &phi, &y0, &cfg.solver)?;
    println!("penalty = {}", phi.label());
    println!("cost = {:.12e} (state {:.6e}, control {:.6e}, terminal {:.6e})", sol.cost.total, sol.cost.state_cost, sol.cost.control_cost, sol.cost.terminal_cost);
    println!("gradient norm = {:.3e} after {} iterations", sol.grad_norm, sol.iterations);
    println!("converged = {}", sol.converged);
    if let Some(dir) = out_dir(common)? {
        write_control(&dir.join("control.csv"), &sol.u)?;
        write_trajectory(&dir.join("state.csv"), &sol.y)?;
        write_json(
            &dir.join("summary.json"),
            &json!({
                "penalty": phi.label(),
                "cost": sol.cost.total,
                "grad_norm": sol.grad_norm,
                "iterations": sol.iterations,
                "converged": sol.converged,
            }),
        )?;
    }
    Ok(if sol.converged { EXIT_OK } else { EXIT_PARTIAL })
}

fn write_rhc(dir: &Path, res: &RhcResult, extra: serde_json::Value) -> Result<()> {
    write_control(&dir.join("u_rh.csv"), &res.u_rh)?;
    write_trajectory(&dir.join("y_rh.csv"), &res.y_rh)?;
    let mut w = csv::Writer::from_path(dir.join("windows.csv"))?;
    w.write_record(["window", "start_time", "state_norm", "converged", "grad_norm", "iterations", "cost"])?;
    for r in &res.windows {
        w.write_record([
            r.index.to_string(),
            format!("{:.6}", r.start_time),
            format!("{:.10e}", r.initial_state.norm()),
            r.converged.to_string(),
            format!("{:.3e}", r.grad_norm),
            r.iterations.to_string(),
            format!("{:.12e}", r.cost),
        ])?;
    }
    w.flush()?;
    write_json(&dir.join("summary.json"), &extra)
}

fn cmd_rhc(common: &Common, compare: bool) -> Result<i32> {
    let cfg = load_run(common)?;
    let y0 = cfg.initial_state()?;
    let sys = &cfg.system;
    let ric = solve_are(sys)?;
    let phi = cfg.penalty(&ric)?;
    let rc = cfg.rhc_config(phi)?;
    let res = match run_rhc(sys, &y0, &rc) {
        Ok(res) => res,
        Err(Error::PartialRhc { window, grad_norm, completed, partial }) => {
            eprintln!("window {window} did not converge (gradient norm {grad_norm:.3e}); {completed} windows completed");
            if let Some(dir) = out_dir(common)? {
                write_rhc(dir, &partial, json!({"partial": true, "failed_window": window, "grad_norm": grad_norm}))?;
            }
            return Ok(EXIT_PARTIAL);
        }
        Err(e) => return Err(e),
    };

    println!("windows = {}", res.windows.len());
    for r in &res.windows {
        println!(
            "  n={:<3} t={:<6.2} |y_n|={:.4e} iterations={:<5} |g|={:.2e}",
            r.index,
            r.start_time,
            r.initial_state.norm(),
            r.iterations,
            r.grad_norm
        );
    }
    let mut summary = json!({"partial": false, "windows": res.windows.len(), "lambda": ric.lambda});
    match decay_certificate(&res, ric.lambda) {
        Ok(cert) if cert.trivially_stable => println!("decay: trivially stable (every window state is zero)"),
        Ok(cert) => {
            println!("decay rate = {:.4} (lambda = {:.4})", cert.rate, ric.lambda);
            summary["decay_rate"] = json!(cert.rate);
        }
        Err(e) => println!("decay: {e}"),
    }
    if compare {
        let reference_phi = TerminalPenalty::taylor3(sys, &ric)?;
        let reference = reference_solution_with(sys, &reference_phi, &y0, rc.span, &rc.opts)?;
        let cmp = compare_to_reference(sys, &res, &reference.solution, &reference.penalty)?;
        println!("control error = {:.3e}", cmp.control_error);
        println!("state error = {:.3e}", cmp.state_error);
        println!("suboptimality = {:.3e}", cmp.suboptimality);
        summary["control_error"] = json!(cmp.control_error);
        summary["state_error"] = json!(cmp.state_error);
        summary["suboptimality"] = json!(cmp.suboptimality);
        summary["a_n"] = json!(cmp.a_n);
        summary["b_n"] = json!(cmp.b_n);
    }
    if let Some(dir) = out_dir(common)? {
        write_rhc(dir, &res, summary)?;
    }
    Ok(EXIT_OK)
}

/// Optional `"checks"` block of a sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableChecks {
    /// Pairs with both values at or below this are exempt from monotonicity.
    pub monotonicity_floor: f64,
    pub rho_min_tau: f64,
    /// Upper bound on the ρ variation per order, keyed by `k`.
    pub rho_variation_max: BTreeMap<String, f64>,
}

impl Default for TableChecks {
    fn default() -> Self {
        Self { monotonicity_floor: 1e-7, rho_min_tau: 0.4, rho_variation_max: BTreeMap::new() }
    }
}

#[derive(Debug, Deserialize)]
struct PaperTablesConfig {
    #[serde(flatten)]
    sweep: serde_json::Value,
    #[serde(default)]
    checks: TableChecks,
}

fn write_table(dir: &Path, name: &str, table: &SweepTable, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let file = std::fs::File::create(dir.join(format!("{name}.csv")))?;
            experiments::write_csv(table, file)
        }
        Format::Md => Ok(std::fs::write(dir.join(format!("{name}.md")), experiments::markdown(table))?),
    }
}

fn cmd_paper_tables(common: &Common, jobs: usize, format: Format) -> Result<i32> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let path = require_config(common)?;
    let raw: PaperTablesConfig = config::load(path, &common.overrides)?;
    let sweep: SweepConfig = serde_json::from_value(raw.sweep).map_err(|e| Error::Config(e.to_string()))?;
    let checks = raw.checks;
    let spec = sweep.into_spec()?;
    let dir = out_dir(common)?.ok_or_else(|| Error::Config("--out is required".into()))?;

    let started = std::time::Instant::now();
    let outcome = experiments::run_sweep(&spec, jobs)?;
    log::info!("sweep finished in {:.1} s", started.elapsed().as_secs_f64());

    let mut passed = true;
    let mut summary_checks = Vec::new();
    let mut failures = 0;
    println!("lambda = {:.6}, reference certificate = {:.3e}", outcome.lambda, outcome.reference.insensitivity);
    for table in &outcome.tables {
        let k = table.order;
        let rho = rho_table(table, outcome.lambda);
        write_table(dir, &format!("error_k{k}"), table, format)?;
        write_table(dir, &format!("rho_k{k}"), &rho, format)?;
        failures += table.failures();
        let values: Vec<f64> = table.cells.iter().flatten().filter_map(|c| c.value()).collect();
        let max = values.iter().copied().fold(f64::NAN, f64::max);
        let min = values.iter().copied().fold(f64::NAN, f64::min);
        println!("k={k}: {} cells, {} failed, error range [{min:.2e}, {max:.2e}]", table.present(), table.failures());
        let variation = rho_variation(&rho, checks.rho_min_tau);
        if let (Some(v), Some(&bound)) = (variation, checks.rho_variation_max.get(&k.to_string())) {
            let ok = v <= bound;
            passed &= ok;
            println!("{} k={k}: rho variation over tau >= {} is {v:.2} (bound {bound})", if ok { "PASS" } else { "FAIL" }, checks.rho_min_tau);
            summary_checks.push(json!({"check": "rho_variation", "k": k, "value": v, "bound": bound, "passed": ok}));
        }
    }
    let report = monotonicity_report(&outcome.tables, checks.monotonicity_floor);
    let clean = report.is_clean();
    passed &= clean;
    println!(
        "{} monotonicity: {} comparisons, {} violations above {:.0e}",
        if clean { "PASS" } else { "FAIL" },
        report.comparisons,
        report.violations.len(),
        checks.monotonicity_floor
    );
    for v in &report.violations {
        println!("  {:?} k={} tau={} T={} -> {}: {:.3e} then {:.3e}", v.direction, v.order, v.tau, v.horizon, v.next, v.value, v.next_value);
    }
    summary_checks.push(json!({"check": "monotonicity", "violations": report.violations, "passed": clean}));
    write_json(
        &dir.join("summary.json"),
        &json!({
            "lambda": outcome.lambda,
            "reference_certificate": outcome.reference.insensitivity,
            "failed_cells": failures,
            "checks": summary_checks,
        }),
    )?;

    Ok(if failures > 0 {
        EXIT_PARTIAL
    } else if passed {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    })
}

fn cmd_check(common: &Common) -> Result<i32> {
    let (sys, y0) = match &common.config {
        Some(_) => {
            let cfg = load_run(common)?;
            let y0 = cfg.initial_state()?;
            (cfg.system, y0)
        }
        None => (BilinearSystem::reference_example(), DVector::from_vec(vec![1.0, 1.0])),
    };
    let report = run_checks(&sys, &y0, &CheckHooks::default());
    for line in &report.lines {
        println!("{line}");
    }
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_NUMERICAL })
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("RHC_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
