//! Finite-horizon optimal control by reduced-gradient L-BFGS over the
//! discretized control.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbfgs::{self, Evaluation, LbfgsOptions};
use crate::model::{l2_norm, segment_inner, BilinearSystem, ControlSignal, CostateTrajectory, TimeGrid, Trajectory};
use crate::riccati::solve_are;
use crate::simulate::{self, CostBreakdown};
use crate::taylor::TerminalPenalty;

/// Extra horizon used to certify that the reference control does not depend
/// on where its horizon is cut.
pub const REFERENCE_EXTENSION: f64 = 3.0;
/// Allowed L² change of the reference under that extension.
pub const REFERENCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Tolerance on the L² norm of the reduced gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    /// RK4 step.
    pub h: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-12, max_iters: 5000, lbfgs_memory: 10, h: 0.01 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidInput("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 || self.lbfgs_memory == 0 {
            return Err(Error::InvalidInput("max_iters and lbfgs_memory must be at least 1".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidInput("step h must be positive".into()));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions { memory: self.lbfgs_memory, max_iters: self.max_iters, grad_tol: self.grad_tol }
    }
}

/// Stationary point of a finite-horizon problem, with a cost certificate
/// recomputed on the returned control.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub u: ControlSignal,
    pub y: Trajectory,
    pub p: CostateTrajectory,
    pub cost: CostBreakdown,
    /// Reduced gradient at `u` (L² representer).
    pub gradient: ControlSignal,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at every accepted optimizer iterate.
    pub cost_history: Vec<f64>,
}

struct Evaluated {
    y: Trajectory,
    p: CostateTrajectory,
    cost: CostBreakdown,
    gradient: ControlSignal,
}

/// Riesz representer of the step derivative `(∂J/∂u_l, ∂J/∂u_r)` under the
/// step mass matrix `(h/6) [[2, 1], [1, 2]]`.
fn representer(h: f64, d: [f64; 2]) -> [f64; 2] {
    let s = 2.0 / h;
    [s * (2.0 * d[0] - d[1]), s * (2.0 * d[1] - d[0])]
}

fn evaluate(sys: &BilinearSystem, u: &ControlSignal, y0: &DVector<f64>, phi: &TerminalPenalty) -> Result<Evaluated> {
    let fwd = simulate::forward(sys, u, y0)?;
    let cost = simulate::cost_from_forward(sys, &fwd, u, phi);
    let (costates, derivs) = simulate::discrete_adjoint(sys, &fwd, u, phi.grad(fwd.trajectory.last()));
    let h = u.grid().h();
    let gradient = ControlSignal::new(*u.grid(), derivs.into_iter().map(|d| representer(h, d)).collect())?;
    Ok(Evaluated { p: CostateTrajectory::new(*u.grid(), costates)?, y: fwd.trajectory, cost, gradient })
}

/// L² representer of the derivative of the discrete cost with respect to the
/// control, i.e. the discrete form of `α u + ⟨p, N y + B⟩`.
pub fn reduced_gradient(
    sys: &BilinearSystem,
    u: &ControlSignal,
    y0: &DVector<f64>,
    phi: &TerminalPenalty,
) -> Result<ControlSignal> {
    Ok(evaluate(sys, u, y0, phi)?.gradient)
}

/// Discrete cost `J(u)` with terminal penalty `phi`.
pub fn cost_of(sys: &BilinearSystem, u: &ControlSignal, y0: &DVector<f64>, phi: &TerminalPenalty) -> Result<f64> {
    let fwd = simulate::forward(sys, u, y0)?;
    Ok(simulate::cost_from_forward(sys, &fwd, u, phi).total)
}

/// Solves the horizon-`horizon` problem from `y0`, starting from zero control.
pub fn solve_finite_horizon(
    sys: &BilinearSystem,
    horizon: f64,
    phi: &TerminalPenalty,
    y0: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    opts.validate()?;
    let grid = TimeGrid::over(0.0, horizon, opts.h)?;
    solve_from_guess(sys, phi, y0, ControlSignal::zeros(grid), opts)
}

/// Solves on the grid of `guess`, using it as the initial iterate.
pub fn solve_from_guess(
    sys: &BilinearSystem,
    phi: &TerminalPenalty,
    y0: &DVector<f64>,
    guess: ControlSignal,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    opts.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::InvalidInput("initial state has the wrong dimension".into()));
    }
    let grid = *guess.grid();
    let h = grid.h();
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        a.chunks_exact(2)
            .zip(b.chunks_exact(2))
            .map(|(x, y)| segment_inner(h, [x[0], x[1]], [y[0], y[1]]))
            .sum()
    };
    let objective = |x: &[f64]| -> Result<Evaluation> {
        let u = ControlSignal::from_flat(grid, x)?;
        let fwd = simulate::forward(sys, &u, y0)?;
        let value = simulate::cost_from_forward(sys, &fwd, &u, phi).total;
        let (_, derivs) = simulate::discrete_adjoint(sys, &fwd, &u, phi.grad(fwd.trajectory.last()));
        let gradient = derivs.into_iter().flat_map(|d| representer(h, d)).collect();
        Ok(Evaluation { value, gradient })
    };
    let outcome = lbfgs::minimize(guess.to_flat(), opts.lbfgs(), objective, dot)?;

    let u = ControlSignal::from_flat(grid, &outcome.x)?;
    let certificate = evaluate(sys, &u, y0, phi)?;
    let grad_norm = l2_norm(&certificate.gradient);
    Ok(OcpSolution {
        u,
        y: certificate.y,
        p: certificate.p,
        cost: certificate.cost,
        gradient: certificate.gradient,
        grad_norm,
        iterations: outcome.iterations,
        converged: outcome.converged() && grad_norm <= opts.grad_tol,
        cost_history: outcome.history,
    })
}

/// Reference optimal control on `(0, span)` plus its horizon-insensitivity
/// certificate.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub solution: OcpSolution,
    pub penalty: TerminalPenalty,
    /// L² change of the control on `(0, span)` when the horizon is extended.
    pub insensitivity: f64,
}

/// Horizon-`span` solve with the cubic Taylor penalty, certified against a
/// solve on `span + 3`.
pub fn reference_solution(
    sys: &BilinearSystem,
    y0: &DVector<f64>,
    span: f64,
    opts: &SolverOptions,
) -> Result<ReferenceSolution> {
    let ric = solve_are(sys)?;
    let phi = TerminalPenalty::taylor3(sys, &ric)?;
    reference_solution_with(sys, &phi, y0, span, opts)
}

/// As [`reference_solution`], with the terminal penalty supplied.
pub fn reference_solution_with(
    sys: &BilinearSystem,
    phi: &TerminalPenalty,
    y0: &DVector<f64>,
    span: f64,
    opts: &SolverOptions,
) -> Result<ReferenceSolution> {
    let solution = solve_finite_horizon(sys, span, phi, y0, opts)?;
    let steps = solution.u.grid().steps();

    let long_grid = TimeGrid::over(0.0, span + REFERENCE_EXTENSION, opts.h)?;
    let mut guess = solution.u.segments().to_vec();
    guess.resize(long_grid.steps(), [0.0, 0.0]);
    let extended = solve_from_guess(sys, phi, y0, ControlSignal::new(long_grid, guess)?, opts)?;
    let restricted = extended.u.restrict(0, steps)?;
    let insensitivity = l2_norm(&restricted.difference(&solution.u)?);
    if !(insensitivity <= REFERENCE_TOLERANCE) {
        return Err(Error::ReferenceUnstable { change: insensitivity, tolerance: REFERENCE_TOLERANCE });
    }
    Ok(ReferenceSolution { solution, penalty: phi.clone(), insensitivity })
}
