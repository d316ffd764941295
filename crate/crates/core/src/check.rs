//! Self-check suite run by `bilinear-rhc check`: a handful of fast
//! properties evaluated on a given system, each reported with its measured
//! value. Random directions come from a fixed seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{
    l2_inner, l2_norm, trajectory_sup_norm, weighted_l2_norm, BilinearSystem, ControlSignal, TimeGrid,
};
use crate::ocp::{cost_of, reduced_gradient, solve_finite_horizon, SolverOptions};
use crate::rhc::{run_rhc, RhcConfig};
use crate::riccati::{are_residual, solve_are, ARE_TOLERANCE};
use crate::simulate::integrate_state;
use crate::taylor::{cubic_hjb_residual, solve_cubic_term, TerminalPenalty};

/// Seed of every random draw in the suite.
pub const CHECK_SEED: u64 = 0x5eed_2024;

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const LQ_TOLERANCE: f64 = 1e-5;

/// Fault injection for testing the suite itself.
#[derive(Debug, Clone, Default)]
pub struct CheckHooks {
    /// Added to `Π[0, 0]` before the Riccati residual is measured.
    pub perturb_pi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e}, threshold {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    fn push(&mut self, name: &'static str, measured: f64, threshold: f64, detail: String) {
        let passed = measured <= threshold;
        self.lines.push(CheckLine { name, passed, measured, threshold, detail });
    }

    fn fail(&mut self, name: &'static str, threshold: f64, err: impl std::fmt::Display) {
        self.lines.push(CheckLine { name, passed: false, measured: f64::NAN, threshold, detail: err.to_string() });
    }
}

/// Runs every check on `sys` from `y0`. Solver failures become failed lines.
pub fn run_checks(sys: &BilinearSystem, y0: &DVector<f64>, hooks: &CheckHooks) -> CheckReport {
    let mut report = CheckReport::default();
    let opts = SolverOptions::default();

    let ric = match solve_are(sys) {
        Ok(r) => r,
        Err(e) => {
            report.fail("riccati residual", ARE_TOLERANCE, e);
            return report;
        }
    };
    let mut pi = ric.pi.clone();
    if let Some(d) = hooks.perturb_pi {
        pi[(0, 0)] += d;
    }
    report.push("riccati residual", are_residual(sys, &pi), ARE_TOLERANCE, format!("lambda = {:.6}", ric.lambda));

    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED);
    match solve_cubic_term(sys, &ric) {
        Ok(t3) => {
            let worst = (0..20)
                .map(|_| {
                    let y = DVector::from_fn(sys.dim(), |_, _| rng.random_range(-1.0..1.0));
                    cubic_hjb_residual(sys, &ric, &t3, &y).abs()
                })
                .fold(0.0, f64::max);
            report.push("cubic term identity", worst, 1e-9, "20 random states".into());
        }
        Err(e) => report.fail("cubic term identity", 1e-9, e),
    }

    match gradient_check(sys, y0, &ric, &mut rng) {
        Ok(err) => report.push("gradient vs finite differences", err, GRADIENT_TOLERANCE, "20 directions, T = 1".into()),
        Err(e) => report.fail("gradient vs finite differences", GRADIENT_TOLERANCE, e),
    }

    match lq_exactness(sys, y0, &opts) {
        Ok(err) => report.push("LQ exactness with N = 0", err, LQ_TOLERANCE, "tau = 0.4, T = 1, L = 2".into()),
        Err(e) => report.fail("LQ exactness with N = 0", LQ_TOLERANCE, e),
    }

    match rhc_consistency(sys, y0, &ric, &opts) {
        Ok((concat, warm_cold)) => {
            report.push("RHC concatenation", concat, 1e-10, "re-integrated u_RH vs y_RH".into());
            report.push("warm and cold starts agree", warm_cold, 1e-8, "L2 distance of u_RH".into());
        }
        Err(e) => report.fail("RHC concatenation", 1e-10, e),
    }

    let sandwich = norm_sandwich(&mut rng);
    report.push("weighted norm sandwich", sandwich, 1e-12, "relative excess".into());
    report
}

fn random_signal(grid: TimeGrid, rng: &mut ChaCha8Rng) -> ControlSignal {
    let segs = (0..grid.steps()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    ControlSignal::new(grid, segs).expect("finite values")
}

/// Worst relative error of `⟨∇J, v⟩` against central differences.
pub fn gradient_check(
    sys: &BilinearSystem,
    y0: &DVector<f64>,
    ric: &crate::riccati::RiccatiSolution,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let phi = TerminalPenalty::taylor3(sys, ric)?;
    let grid = TimeGrid::over(0.0, 1.0, 0.01)?;
    let u = ControlSignal::from_fn(grid, |t| -1.0 + 0.5 * (3.0 * t).sin())?;
    let g = reduced_gradient(sys, &u, y0, &phi)?;
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let v = random_signal(grid, rng);
        let plus = ControlSignal::new(grid, u.segments().iter().zip(v.segments()).map(|(a, b)| [a[0] + eps * b[0], a[1] + eps * b[1]]).collect())?;
        let minus = ControlSignal::new(grid, u.segments().iter().zip(v.segments()).map(|(a, b)| [a[0] - eps * b[0], a[1] - eps * b[1]]).collect())?;
        let fd = (cost_of(sys, &plus, y0, &phi)? - cost_of(sys, &minus, y0, &phi)?) / (2.0 * eps);
        let exact = l2_inner(&g, &v)?;
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-12));
    }
    Ok(worst)
}

/// `‖u_RH − ū‖` with the coupling removed and `φ = V₂`, where `ū` is the
/// long-horizon solve.
fn lq_exactness(sys: &BilinearSystem, y0: &DVector<f64>, opts: &SolverOptions) -> Result<f64> {
    let lin = sys.with_coupling(DMatrix::zeros(sys.dim(), sys.dim()))?;
    let ric = solve_are(&lin)?;
    let phi = TerminalPenalty::taylor2(&ric);
    let mut cfg = RhcConfig::new(0.4, 1.0, phi.clone());
    cfg.span = 2.0;
    let res = run_rhc(&lin, y0, &cfg)?;
    let reference = solve_finite_horizon(&lin, 2.0, &phi, y0, opts)?;
    Ok(l2_norm(&res.u_rh.difference(&reference.u)?))
}

fn rhc_consistency(
    sys: &BilinearSystem,
    y0: &DVector<f64>,
    ric: &crate::riccati::RiccatiSolution,
    opts: &SolverOptions,
) -> Result<(f64, f64)> {
    let mut cfg = RhcConfig::new(0.4, 1.0, TerminalPenalty::taylor2(ric));
    cfg.span = 2.0;
    cfg.opts = *opts;
    let warm = run_rhc(sys, y0, &cfg)?;
    let replay = integrate_state(sys, &warm.u_rh, y0)?;
    let concat = trajectory_sup_norm(&replay.difference(&warm.y_rh)?);
    cfg.warm_start = false;
    let cold = run_rhc(sys, y0, &cfg)?;
    Ok((concat, l2_norm(&warm.u_rh.difference(&cold.u_rh)?)))
}

/// `e^{−|μ|T}‖u‖ ≤ ‖u‖_{L²_μ} ≤ e^{|μ|T}‖u‖` on random signals; returns the
/// largest relative violation (zero when the bounds hold).
fn norm_sandwich(rng: &mut ChaCha8Rng) -> f64 {
    let grid = TimeGrid::over(0.0, 2.0, 0.01).expect("grid");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let u = random_signal(grid, rng);
        let mu = rng.random_range(-1.5..1.5);
        let plain = l2_norm(&u);
        let weighted = weighted_l2_norm(&u, mu);
        let factor = (mu.abs() * grid.span()).exp();
        worst = worst.max((plain / factor - weighted) / plain).max((weighted - plain * factor) / plain);
    }
    worst.max(0.0)
}
