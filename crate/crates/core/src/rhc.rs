//! The receding-horizon loop: solve a horizon-`T` problem from the current
//! state, keep the first `τ` of its control, move to the state reached at
//! `τ`, repeat until the span `L` is covered.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{
    l2_norm, steps_in, trajectory_l2_norm, trajectory_sup_norm, BilinearSystem, ControlSignal, TimeGrid, Trajectory,
};
use crate::ocp::{solve_from_guess, OcpSolution, SolverOptions};
use crate::simulate::eval_cost;
use crate::taylor::TerminalPenalty;

#[derive(Debug, Clone)]
pub struct RhcConfig {
    /// Sampling time τ.
    pub tau: f64,
    /// Prediction horizon T.
    pub horizon: f64,
    /// Simulated span L.
    pub span: f64,
    pub phi: TerminalPenalty,
    pub opts: SolverOptions,
    /// Start each window from the previous control shifted by τ.
    pub warm_start: bool,
}

impl RhcConfig {
    pub fn new(tau: f64, horizon: f64, phi: TerminalPenalty) -> Self {
        Self { tau, horizon, span: 5.0, phi, opts: SolverOptions::default(), warm_start: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.opts.validate()?;
        if !(self.tau > 0.0) || self.tau > self.horizon * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "need 0 < tau <= T, got tau = {}, T = {}",
                self.tau, self.horizon
            )));
        }
        steps_in(self.tau, self.opts.h)?;
        steps_in(self.horizon, self.opts.h)?;
        steps_in(self.span, self.opts.h)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub index: usize,
    pub start_time: f64,
    pub initial_state: DVector<f64>,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhcResult {
    /// Concatenated control on `(0, L)`.
    pub u_rh: ControlSignal,
    /// Concatenated trajectory on `(0, L)`.
    pub y_rh: Trajectory,
    pub windows: Vec<WindowRecord>,
    /// Steps per sampling interval.
    pub tau_steps: usize,
}

fn shifted_guess(prev: &ControlSignal, shift: usize, grid: TimeGrid) -> Result<ControlSignal> {
    let mut segs: Vec<[f64; 2]> = prev.segments().iter().skip(shift).copied().collect();
    segs.resize(grid.steps(), [0.0, 0.0]);
    ControlSignal::new(grid, segs)
}

/// Runs `ceil(L / τ)` windows; the last one is applied only up to `L`.
pub fn run_rhc(sys: &BilinearSystem, y0: &DVector<f64>, cfg: &RhcConfig) -> Result<RhcResult> {
    cfg.validate()?;
    if y0.len() != sys.dim() {
        return Err(Error::InvalidInput("initial state has the wrong dimension".into()));
    }
    let h = cfg.opts.h;
    let total_steps = steps_in(cfg.span, h)?;
    let tau_steps = steps_in(cfg.tau, h)?;
    let horizon_steps = steps_in(cfg.horizon, h)?;
    let global = TimeGrid::new(0.0, h, total_steps)?;
    let n_windows = total_steps.div_ceil(tau_steps);

    let mut segments: Vec<[f64; 2]> = Vec::with_capacity(total_steps);
    let mut states = vec![y0.clone()];
    let mut windows = Vec::with_capacity(n_windows);
    let mut previous: Option<ControlSignal> = None;

    for n in 0..n_windows {
        let start = n * tau_steps;
        let applied = tau_steps.min(total_steps - start);
        let y_n = states[start].clone();
        let grid = TimeGrid::new(global.node(start), h, horizon_steps)?;
        let guess = match (&previous, cfg.warm_start) {
            (Some(prev), true) => shifted_guess(prev, tau_steps, grid)?,
            _ => ControlSignal::zeros(grid),
        };

        let sol: OcpSolution = match solve_from_guess(sys, &cfg.phi, &y_n, guess, &cfg.opts) {
            Ok(sol) => sol,
            Err(err @ Error::Divergence { .. }) => {
                return Err(Error::WindowDivergence { window: n, source: Box::new(err) })
            }
            Err(err) => return Err(err),
        };
        log::debug!(
            "window {n}: |y_n| = {:.3e}, {} iterations, |g| = {:.2e}",
            y_n.norm(),
            sol.iterations,
            sol.grad_norm
        );

        if !sol.converged {
            let partial = partial_result(global, &segments, &states, windows, tau_steps)?;
            return Err(Error::PartialRhc {
                window: n,
                grad_norm: sol.grad_norm,
                completed: n,
                partial: Box::new(partial),
            });
        }

        segments.extend_from_slice(&sol.u.segments()[..applied]);
        states.extend(sol.y.states()[1..=applied].iter().cloned());
        windows.push(WindowRecord {
            index: n,
            start_time: global.node(start),
            initial_state: y_n,
            converged: sol.converged,
            grad_norm: sol.grad_norm,
            iterations: sol.iterations,
            cost: sol.cost.total,
        });
        previous = Some(sol.u);
    }

    Ok(RhcResult {
        u_rh: ControlSignal::new(global, segments)?,
        y_rh: Trajectory::new(global, states)?,
        windows,
        tau_steps,
    })
}

fn partial_result(
    global: TimeGrid,
    segments: &[[f64; 2]],
    states: &[DVector<f64>],
    windows: Vec<WindowRecord>,
    tau_steps: usize,
) -> Result<RhcResult> {
    // an empty prefix is represented on a one-step grid with zero control
    let steps = segments.len().max(1);
    let grid = TimeGrid::new(0.0, global.h(), steps)?;
    let mut segs = segments.to_vec();
    segs.resize(steps, [0.0, 0.0]);
    let mut st = states.to_vec();
    st.resize(steps + 1, states.last().cloned().unwrap_or_else(|| DVector::zeros(0)));
    Ok(RhcResult { u_rh: ControlSignal::new(grid, segs)?, y_rh: Trajectory::new(grid, st)?, windows, tau_steps })
}

/// Error of an RHC run against the reference solution on `(0, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceComparison {
    /// `‖u_RH − ū‖_{L²(0,L)}`.
    pub control_error: f64,
    /// `max_k |y_RH(t_k) − ȳ(t_k)|`.
    pub state_error: f64,
    /// `J(u_RH) − J(ū)` on `(0, L)` with the reference's terminal penalty.
    pub suboptimality: f64,
    /// Per window: max of the sup and L² state deviations and the L² control deviation.
    pub a_n: Vec<f64>,
    /// Per window: `|y_n − ȳ(nτ)|`.
    pub b_n: Vec<f64>,
}

pub fn compare_to_reference(
    sys: &BilinearSystem,
    res: &RhcResult,
    reference: &OcpSolution,
    phi: &TerminalPenalty,
) -> Result<ReferenceComparison> {
    let du = res.u_rh.difference(&reference.u)?;
    let dy = res.y_rh.difference(&reference.y)?;
    let j_rh = eval_cost(sys, &res.y_rh, &res.u_rh, phi)?.total;
    let j_ref = eval_cost(sys, &reference.y, &reference.u, phi)?.total;

    let total = du.grid().steps();
    let mut a_n = Vec::with_capacity(res.windows.len());
    let mut b_n = Vec::with_capacity(res.windows.len());
    for (n, _) in res.windows.iter().enumerate() {
        let start = n * res.tau_steps;
        let steps = res.tau_steps.min(total - start);
        let du_n = du.restrict(start, steps)?;
        let dy_n = dy.restrict(start, steps)?;
        a_n.push(l2_norm(&du_n).max(trajectory_sup_norm(&dy_n)).max(trajectory_l2_norm(&dy_n)));
        b_n.push(dy.state(start).norm());
    }

    Ok(ReferenceComparison {
        control_error: l2_norm(&du),
        state_error: trajectory_sup_norm(&dy),
        suboptimality: j_rh - j_ref,
        a_n,
        b_n,
    })
}

/// Least-squares fit `log|y_n| ≈ intercept − rate · nτ` over the window states.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCertificate {
    pub rate: f64,
    pub intercept: f64,
    /// Fitted rate divided by the reference rate λ.
    pub rate_ratio: f64,
    pub samples: usize,
    /// Every window state is exactly zero.
    pub trivially_stable: bool,
    pub passes: bool,
}

pub fn decay_certificate(res: &RhcResult, lambda: f64) -> Result<DecayCertificate> {
    if res.windows.len() < 3 {
        return Err(Error::InvalidInput("decay fit needs at least three windows".into()));
    }
    let samples: Vec<(f64, f64)> = res
        .windows
        .iter()
        .map(|w| (w.start_time, w.initial_state.norm()))
        .collect();
    fit_decay(&samples, lambda)
}

/// Fits `(t, |y|)` samples; zero norms are skipped.
pub fn fit_decay(samples: &[(f64, f64)], lambda: f64) -> Result<DecayCertificate> {
    let pts: Vec<(f64, f64)> = samples.iter().filter(|(_, v)| *v > 0.0).map(|&(t, v)| (t, v.ln())).collect();
    if pts.is_empty() {
        return Ok(DecayCertificate {
            rate: f64::INFINITY,
            intercept: f64::NEG_INFINITY,
            rate_ratio: f64::INFINITY,
            samples: 0,
            trivially_stable: true,
            passes: true,
        });
    }
    if pts.len() < 2 {
        return Err(Error::InvalidInput("decay fit needs two nonzero samples".into()));
    }
    let (slope, intercept) = least_squares_line(&pts);
    let rate = -slope;
    Ok(DecayCertificate {
        rate,
        intercept,
        rate_ratio: rate / lambda,
        samples: pts.len(),
        trivially_stable: false,
        passes: rate > 0.0,
    })
}

/// Slope and intercept of the least-squares line through `pts`.
pub fn least_squares_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
