//! Classical RK4 for the bilinear state equation, the backward costate
//! equation, and the finite-horizon cost.
//!
//! Within a step the control is linear, so the four RK4 stages see
//! `u(t_k⁺)`, `u(t_k + h/2)` (twice) and `u(t_{k+1}⁻)`. The running cost is
//! integrated with the same stages (Simpson per step on the stage states),
//! which keeps the discrete cost and its discrete adjoint exactly consistent.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::model::{segment_inner, BilinearSystem, ControlSignal, CostateTrajectory, Trajectory};
use crate::taylor::TerminalPenalty;

/// Components of `½∫|Cy|² + (α/2)∫u² + φ(y(T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub state_cost: f64,
    pub control_cost: f64,
    /// May be negative for the cubic penalty.
    pub terminal_cost: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn new(state_cost: f64, control_cost: f64, terminal_cost: f64) -> Self {
        Self { state_cost, control_cost, terminal_cost, total: state_cost + control_cost + terminal_cost }
    }
}

const RK4_WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

fn stage_controls(seg: [f64; 2]) -> [f64; 4] {
    let mid = 0.5 * (seg[0] + seg[1]);
    [seg[0], mid, mid, seg[1]]
}

/// One RK4 step; returns the four stage states and the next node state.
fn rk4_step(sys: &BilinearSystem, y: &DVector<f64>, seg: [f64; 2], h: f64) -> ([DVector<f64>; 4], DVector<f64>) {
    let c = stage_controls(seg);
    let y1 = y.clone();
    let k1 = sys.rhs(&y1, c[0]);
    let y2 = y + &k1 * (0.5 * h);
    let k2 = sys.rhs(&y2, c[1]);
    let y3 = y + &k2 * (0.5 * h);
    let k3 = sys.rhs(&y3, c[2]);
    let y4 = y + &k3 * h;
    let k4 = sys.rhs(&y4, c[3]);
    let next = y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    ([y1, y2, y3, y4], next)
}

fn running_cost(sys: &BilinearSystem, stages: &[DVector<f64>; 4], h: f64) -> f64 {
    stages
        .iter()
        .zip(RK4_WEIGHTS)
        .map(|(s, w)| w * 0.5 * (sys.c() * s).norm_squared())
        .sum::<f64>()
        * h
}

fn control_cost(sys: &BilinearSystem, u: &ControlSignal) -> f64 {
    let h = u.grid().h();
    0.5 * sys.alpha() * u.segments().iter().map(|s| segment_inner(h, *s, *s)).sum::<f64>()
}

/// Forward pass with the stage states kept for the adjoint sweep.
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass {
    pub trajectory: Trajectory,
    pub stages: Vec<[DVector<f64>; 4]>,
    pub state_cost: f64,
}

fn check_dim(sys: &BilinearSystem, v: &DVector<f64>, what: &str) -> Result<()> {
    if v.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "{what} has dimension {}, system has {}",
            v.len(),
            sys.dim()
        )));
    }
    Ok(())
}

pub(crate) fn forward(sys: &BilinearSystem, u: &ControlSignal, y0: &DVector<f64>) -> Result<ForwardPass> {
    check_dim(sys, y0, "initial state")?;
    let grid = *u.grid();
    let h = grid.h();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    let mut stages = Vec::with_capacity(grid.steps());
    let mut state_cost = 0.0;
    states.push(y0.clone());
    for (k, seg) in u.segments().iter().enumerate() {
        let (st, next) = rk4_step(sys, &states[k], *seg, h);
        if !all_finite(&next) {
            return Err(Error::Divergence { node: k + 1, time: grid.node(k + 1) });
        }
        state_cost += running_cost(sys, &st, h);
        stages.push(st);
        states.push(next);
    }
    Ok(ForwardPass { trajectory: Trajectory::new(grid, states)?, stages, state_cost })
}

/// RK4 solution of `y' = Ay + (Ny + B)u`, `y(t_0) = y0`, on the grid of `u`.
pub fn integrate_state(sys: &BilinearSystem, u: &ControlSignal, y0: &DVector<f64>) -> Result<Trajectory> {
    Ok(forward(sys, u, y0)?.trajectory)
}

/// Exact derivative of the discrete cost by reverse sweep through the RK4
/// steps. Returns the node costates `dJ/dy_k` and `dJ/d(u_k⁺, u_{k+1}⁻)`
/// per step.
pub(crate) fn discrete_adjoint(
    sys: &BilinearSystem,
    fwd: &ForwardPass,
    u: &ControlSignal,
    terminal_gradient: DVector<f64>,
) -> (Vec<DVector<f64>>, Vec<[f64; 2]>) {
    let grid = u.grid();
    let h = grid.h();
    let steps = grid.steps();
    let ctc = sys.ctc();
    let at = sys.a().transpose();
    let nt = sys.n().transpose();
    let alpha = sys.alpha();

    let mut costates = vec![DVector::zeros(sys.dim()); steps + 1];
    let mut grads = vec![[0.0; 2]; steps];
    costates[steps] = terminal_gradient;

    for k in (0..steps).rev() {
        let seg = u.segments()[k];
        let c = stage_controls(seg);
        let st = &fwd.stages[k];
        let lam = &costates[k + 1];

        let mut kbar: [DVector<f64>; 4] = [
            lam * (h * RK4_WEIGHTS[0]),
            lam * (h * RK4_WEIGHTS[1]),
            lam * (h * RK4_WEIGHTS[2]),
            lam * (h * RK4_WEIGHTS[3]),
        ];
        let mut ybar = lam.clone();
        let mut cbar = [0.0; 4];
        // stage s feeds K_s; Y_s depends on K_{s-1} with coefficient h/2, h/2, h
        let feed = [0.0, 0.5 * h, 0.5 * h, h];
        for s in (0..4).rev() {
            let stage_bar = &at * &kbar[s] + (&nt * &kbar[s]) * c[s] + (ctc * &st[s]) * (h * RK4_WEIGHTS[s]);
            cbar[s] = kbar[s].dot(&sys.control_direction(&st[s]));
            if s > 0 {
                let add = &stage_bar * feed[s];
                kbar[s - 1] += add;
            }
            ybar += stage_bar;
        }
        let mid = 0.5 * (cbar[1] + cbar[2]);
        grads[k] = [
            cbar[0] + mid + alpha * h / 6.0 * (2.0 * seg[0] + seg[1]),
            cbar[3] + mid + alpha * h / 6.0 * (seg[0] + 2.0 * seg[1]),
        ];
        costates[k] = ybar;
    }
    (costates, grads)
}

/// Continuous costate equation `−p' = (A + uN)ᵀp + CᵀC y`, `p(T) = p_T`,
/// integrated backward with RK4. Midpoint states come from the cubic
/// Hermite interpolant of the node states and their time derivatives.
pub fn integrate_adjoint(
    sys: &BilinearSystem,
    y: &Trajectory,
    u: &ControlSignal,
    p_terminal: &DVector<f64>,
) -> Result<CostateTrajectory> {
    y.grid().check_matches(u.grid(), "adjoint integration")?;
    check_dim(sys, p_terminal, "terminal costate")?;
    let grid = *u.grid();
    let h = grid.h();
    let steps = grid.steps();
    let at = sys.a().transpose();
    let nt = sys.n().transpose();
    let ctc = sys.ctc();
    let field = |p: &DVector<f64>, yv: &DVector<f64>, uv: f64| -> DVector<f64> {
        -(&at * p + (&nt * p) * uv + ctc * yv)
    };

    let mut costates = vec![DVector::zeros(sys.dim()); steps + 1];
    costates[steps] = p_terminal.clone();
    for k in (0..steps).rev() {
        let [l, r] = u.segments()[k];
        let m = 0.5 * (l + r);
        let (y_left, y_right) = (y.state(k), y.state(k + 1));
        let y_mid = (y_left + y_right) * 0.5 + (sys.rhs(y_left, l) - sys.rhs(y_right, r)) * (h / 8.0);

        let p1 = costates[k + 1].clone();
        let k1 = field(&p1, y_right, r);
        let p2 = &p1 - &k1 * (0.5 * h);
        let k2 = field(&p2, &y_mid, m);
        let p3 = &p1 - &k2 * (0.5 * h);
        let k3 = field(&p3, &y_mid, m);
        let p4 = &p1 - &k3 * h;
        let k4 = field(&p4, y_left, l);
        let pk = &p1 - (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if !all_finite(&pk) {
            return Err(Error::Divergence { node: k, time: grid.node(k) });
        }
        costates[k] = pk;
    }
    CostateTrajectory::new(grid, costates)
}

/// Finite-horizon cost of `(y, u)` with terminal penalty `phi`.
pub fn eval_cost(
    sys: &BilinearSystem,
    y: &Trajectory,
    u: &ControlSignal,
    phi: &TerminalPenalty,
) -> Result<CostBreakdown> {
    y.grid().check_matches(u.grid(), "cost evaluation")?;
    let h = u.grid().h();
    let state_cost: f64 = u
        .segments()
        .iter()
        .enumerate()
        .map(|(k, seg)| running_cost(sys, &rk4_step(sys, y.state(k), *seg, h).0, h))
        .sum();
    Ok(CostBreakdown::new(state_cost, control_cost(sys, u), phi.eval(y.last())))
}

pub(crate) fn cost_from_forward(
    sys: &BilinearSystem,
    fwd: &ForwardPass,
    u: &ControlSignal,
    phi: &TerminalPenalty,
) -> CostBreakdown {
    CostBreakdown::new(fwd.state_cost, control_cost(sys, u), phi.eval(fwd.trajectory.last()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar(a: f64, n: f64, b: f64, c: f64) -> BilinearSystem {
        BilinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, n),
            DMatrix::from_element(1, 1, c),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_rk4_step_of_decay() {
        // hand-evaluated RK4 stages for y' = -y, h = 0.01
        let h: f64 = 0.01;
        let expected = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let grid = TimeGrid::new(0.0, h, 1).unwrap();
        let y = integrate_state(&scalar(-1.0, 0.0, 0.0, 1.0), &ControlSignal::zeros(grid), &DVector::from_element(1, 1.0)).unwrap();
        assert!((y.state(1)[0] - expected).abs() < 1e-15);
        assert!((y.state(1)[0] - 0.9900498338).abs() < 1e-10);
    }

    #[test]
    fn equilibrium_stays_put() {
        let sys = BilinearSystem::reference_example();
        let grid = TimeGrid::over(0.0, 1.0, 0.01).unwrap();
        let y = integrate_state(&sys, &ControlSignal::zeros(grid), &DVector::zeros(2)).unwrap();
        assert!(y.states().iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn blow_up_reports_first_bad_node() {
        let sys = scalar(0.0, 1.0, 0.0, 1.0);
        let grid = TimeGrid::over(0.0, 1.0, 0.01).unwrap();
        let err = integrate_state(&sys, &ControlSignal::constant(grid, 1e80), &DVector::from_element(1, 1.0));
        assert!(matches!(err, Err(Error::Divergence { node: 1, .. })));
    }

    #[test]
    fn scalar_adjoint_closed_form() {
        let sys = scalar(-1.0, 0.0, 0.0, 1.0);
        let grid = TimeGrid::over(0.0, 2.0, 0.01).unwrap();
        let y = Trajectory::new(grid, vec![DVector::zeros(1); grid.steps() + 1]).unwrap();
        let p = integrate_adjoint(&sys, &y, &ControlSignal::zeros(grid), &DVector::from_element(1, 1.0)).unwrap();
        for k in 0..=grid.steps() {
            let exact = (grid.node(k) - grid.t_end()).exp();
            assert!((p.costate(k)[0] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_output_zero_terminal_gives_zero_costate() {
        let sys = BilinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[-0.2, -0.2, 0.0, -0.2]),
            DMatrix::zeros(1, 2),
            0.1,
        )
        .unwrap();
        let grid = TimeGrid::over(0.0, 1.0, 0.01).unwrap();
        let u = ControlSignal::from_fn(grid, |t| t.sin()).unwrap();
        let y = integrate_state(&sys, &u, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let p = integrate_adjoint(&sys, &y, &u, &DVector::zeros(2)).unwrap();
        assert!(p.costates().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn state_cost_of_free_decay() {
        let sys = scalar(-1.0, 0.0, 0.0, 1.0);
        let grid = TimeGrid::over(0.0, 5.0, 0.01).unwrap();
        let u = ControlSignal::zeros(grid);
        let y = integrate_state(&sys, &u, &DVector::from_element(1, 1.0)).unwrap();
        let cost = eval_cost(&sys, &y, &u, &TerminalPenalty::Zero).unwrap();
        assert!((cost.state_cost - (1.0 - (-10f64).exp()) / 4.0).abs() < 1e-6);
        assert_eq!(cost.total, cost.state_cost + cost.control_cost + cost.terminal_cost);
    }

    #[test]
    fn zero_everything_costs_nothing() {
        let sys = BilinearSystem::reference_example();
        let grid = TimeGrid::over(0.0, 1.0, 0.01).unwrap();
        let u = ControlSignal::zeros(grid);
        let y = integrate_state(&sys, &u, &DVector::zeros(2)).unwrap();
        let cost = eval_cost(&sys, &y, &u, &TerminalPenalty::Taylor2 { pi: DMatrix::identity(2, 2) }).unwrap();
        assert_eq!(cost.total, 0.0);
    }

    #[test]
    fn cost_from_stored_stages_matches_recomputation() {
        let sys = BilinearSystem::reference_example();
        let grid = TimeGrid::over(0.0, 1.0, 0.01).unwrap();
        let u = ControlSignal::from_fn(grid, |t| (2.0 * t).cos()).unwrap();
        let y0 = DVector::from_vec(vec![1.0, 1.0]);
        let fwd = forward(&sys, &u, &y0).unwrap();
        let phi = TerminalPenalty::Taylor2 { pi: DMatrix::identity(2, 2) };
        let a = cost_from_forward(&sys, &fwd, &u, &phi);
        let b = eval_cost(&sys, &fwd.trajectory, &u, &phi).unwrap();
        assert_relative_eq!(a.total, b.total, max_relative = 1e-15);
    }

    #[test]
    fn integration_is_deterministic() {
        let sys = BilinearSystem::reference_example();
        let grid = TimeGrid::over(0.0, 2.0, 0.01).unwrap();
        let u = ControlSignal::from_fn(grid, |t| (5.0 * t).sin()).unwrap();
        let y0 = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(integrate_state(&sys, &u, &y0).unwrap(), integrate_state(&sys, &u, &y0).unwrap());
    }
}
