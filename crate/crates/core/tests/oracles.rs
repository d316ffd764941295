//! Independent closed-form oracles for the linear (N = 0) case.

use bilinear_rhc::model::{BilinearSystem, ControlSignal, TimeGrid, Trajectory};
use bilinear_rhc::ocp::{reference_solution_with, SolverOptions};
use bilinear_rhc::rhc::{compare_to_reference, run_rhc, RhcConfig};
use bilinear_rhc::riccati::solve_are;
use bilinear_rhc::simulate::{integrate_adjoint, integrate_state};
use bilinear_rhc::taylor::TerminalPenalty;
use nalgebra::{DMatrix, DVector};

fn linear_example() -> BilinearSystem {
    BilinearSystem::reference_example().with_coupling(DMatrix::zeros(2, 2)).unwrap()
}

fn y0() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 1.0])
}

/// Exact state after one step of `y' = Ay + B u` with `u` linear from `l` to
/// `r`, through the augmented generator on `(y, u, u')`.
fn exact_step(sys: &BilinearSystem, y: &DVector<f64>, l: f64, r: f64, h: f64) -> DVector<f64> {
    let n = sys.dim();
    let mut g = DMatrix::zeros(n + 2, n + 2);
    g.view_mut((0, 0), (n, n)).copy_from(sys.a());
    g.view_mut((0, n), (n, 1)).copy_from(sys.b());
    g[(n, n + 1)] = 1.0;
    let mut z = DVector::zeros(n + 2);
    z.rows_mut(0, n).copy_from(y);
    z[n] = l;
    z[n + 1] = (r - l) / h;
    let out = (g * h).exp() * z;
    out.rows(0, n).into_owned()
}

fn exact_trajectory(sys: &BilinearSystem, u: &ControlSignal, y0: &DVector<f64>) -> Vec<DVector<f64>> {
    let h = u.grid().h();
    let mut states = vec![y0.clone()];
    for seg in u.segments() {
        let next = exact_step(sys, states.last().unwrap(), seg[0], seg[1], h);
        states.push(next);
    }
    states
}

#[test]
fn state_matches_matrix_exponential() {
    let sys = linear_example();
    let grid = TimeGrid::over(0.0, 1.0, 0.01).unwrap();
    let segs = (0..grid.steps())
        .map(|k| {
            let t = grid.node(k);
            [(5.0 * t).sin(), (5.0 * t).cos() - 0.5]
        })
        .collect();
    let u = ControlSignal::new(grid, segs).unwrap();
    let y = integrate_state(&sys, &u, &y0()).unwrap();
    let exact = exact_trajectory(&sys, &u, &y0());
    let err = y.states().iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-8, "max node error {err:e}");
}

fn terminal_error(h: f64) -> f64 {
    let sys = linear_example();
    let grid = TimeGrid::over(0.0, 2.0, h).unwrap();
    let u = ControlSignal::from_fn(grid, |t| 1.0 - t).unwrap();
    let y = integrate_state(&sys, &u, &y0()).unwrap();
    let exact = exact_step(&sys, &y0(), 1.0, -1.0, 2.0);
    (y.last() - exact).norm()
}

#[test]
fn rk4_converges_with_order_four() {
    let coarse = terminal_error(0.02);
    let fine = terminal_error(0.01);
    let ratio = coarse / fine;
    let order = ratio.log2();
    println!("error ratio {ratio:.3}, observed order {order:.3}");
    assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    assert!((3.8..=4.2).contains(&order), "order {order}");
}

#[test]
fn adjoint_matches_matrix_exponential() {
    // with u = 0: −p' = Aᵀp + CᵀC y, y(t) = e^{At} y0; in reversed time
    // q(s) = p(T − s), w(s) = y(T − s): q' = Aᵀq + CᵀC w, w' = −A w
    let sys = linear_example();
    let horizon = 1.5;
    let grid = TimeGrid::over(0.0, horizon, 0.01).unwrap();
    let u = ControlSignal::zeros(grid);
    let y = integrate_state(&sys, &u, &y0()).unwrap();
    let p_t = DVector::from_vec(vec![0.3, -0.7]);
    let p = integrate_adjoint(&sys, &y, &u, &p_t).unwrap();

    let mut g = DMatrix::zeros(4, 4);
    g.view_mut((0, 0), (2, 2)).copy_from(&sys.a().transpose());
    g.view_mut((0, 2), (2, 2)).copy_from(sys.ctc());
    g.view_mut((2, 2), (2, 2)).copy_from(&(-sys.a()));
    let y_t = (sys.a() * horizon).exp() * y0();
    let mut z0 = DVector::zeros(4);
    z0.rows_mut(0, 2).copy_from(&p_t);
    z0.rows_mut(2, 2).copy_from(&y_t);
    let mut worst: f64 = 0.0;
    for k in 0..=grid.steps() {
        let s = horizon - grid.node(k);
        let exact = ((&g * s).exp() * &z0).rows(0, 2).into_owned();
        worst = worst.max((p.costate(k) - exact).norm());
    }
    assert!(worst < 1e-7, "max costate error {worst:e}");
}

/// Solution of the Riccati differential equation `−P' = AᵀP + PA + CᵀC − PBBᵀP/α`,
/// `P(T) = 0`, on a uniform grid of `steps` intervals, index 0 at `s = 0`.
fn riccati_flow(sys: &BilinearSystem, horizon: f64, steps: usize) -> Vec<DMatrix<f64>> {
    let h = horizon / steps as f64;
    let f = |p: &DMatrix<f64>| -> DMatrix<f64> {
        let pb = p * sys.b();
        sys.a().transpose() * p + p * sys.a() + sys.ctc() - (&pb * pb.transpose()) / sys.alpha()
    };
    let mut out = vec![DMatrix::zeros(2, 2); steps + 1];
    for k in (0..steps).rev() {
        let p = &out[k + 1];
        let k1 = f(p);
        let k2 = f(&(p + &k1 * (0.5 * h)));
        let k3 = f(&(p + &k2 * (0.5 * h)));
        let k4 = f(&(p + &k3 * h));
        out[k] = p + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    out
}

/// `‖u_RH − ū‖_{L²(0,L)}` for `φ = 0` from Riccati feedbacks on a fine grid.
fn feedback_rhc_error(sys: &BilinearSystem, tau: f64, horizon: f64, span: f64) -> f64 {
    let pi = solve_are(sys).unwrap().pi;
    let hf = 1e-3;
    let sub = 2;
    let flow = riccati_flow(sys, horizon, (horizon / hf).round() as usize * sub);
    let control = |p: &DMatrix<f64>, y: &DVector<f64>| -> f64 { -(sys.b().dot(&(p * y))) / sys.alpha() };
    let rhs = |p: &DMatrix<f64>, y: &DVector<f64>| -> DVector<f64> { sys.a() * y + sys.b() * control(p, y) };

    let total = (span / hf).round() as usize;
    let per_window = (tau / hf).round() as usize;
    let mut y_rh = y0();
    let mut y_bar = y0();
    let mut integral = 0.0;
    for k in 0..total {
        let local = k % per_window;
        let (p0, pm, p1) = (&flow[sub * local], &flow[sub * local + 1], &flow[sub * local + 2]);
        let s1 = rhs(p0, &y_rh);
        let s2 = rhs(pm, &(&y_rh + &s1 * (0.5 * hf)));
        let s3 = rhs(pm, &(&y_rh + &s2 * (0.5 * hf)));
        let s4 = rhs(p1, &(&y_rh + &s3 * hf));
        let b1 = rhs(&pi, &y_bar);
        let b2 = rhs(&pi, &(&y_bar + &b1 * (0.5 * hf)));
        let b3 = rhs(&pi, &(&y_bar + &b2 * (0.5 * hf)));
        let b4 = rhs(&pi, &(&y_bar + &b3 * hf));
        let y_rh_next = &y_rh + (&s1 + (&s2 + &s3) * 2.0 + &s4) * (hf / 6.0);
        let y_bar_next = &y_bar + (&b1 + (&b2 + &b3) * 2.0 + &b4) * (hf / 6.0);
        // Simpson on the step, midpoints from the cubic Hermite interpolant
        let y_rh_mid = (&y_rh + &y_rh_next) * 0.5 + (&s1 - rhs(p1, &y_rh_next)) * (hf / 8.0);
        let y_bar_mid = (&y_bar + &y_bar_next) * 0.5 + (&b1 - rhs(&pi, &y_bar_next)) * (hf / 8.0);
        let d0 = control(p0, &y_rh) - control(&pi, &y_bar);
        let dm = control(pm, &y_rh_mid) - control(&pi, &y_bar_mid);
        let d1 = control(p1, &y_rh_next) - control(&pi, &y_bar_next);
        integral += hf / 6.0 * (d0 * d0 + 4.0 * dm * dm + d1 * d1);
        y_rh = y_rh_next;
        y_bar = y_bar_next;
    }
    integral.sqrt()
}

#[test]
fn rhc_error_matches_riccati_feedback_oracle() {
    let sys = linear_example();
    let ric = solve_are(&sys).unwrap();
    let opts = SolverOptions::default();
    let reference = reference_solution_with(&sys, &TerminalPenalty::taylor2(&ric), &y0(), 5.0, &opts).unwrap();
    for &(tau, horizon) in &[(0.4, 1.0), (1.0, 1.0), (0.2, 0.6)] {
        let res = run_rhc(&sys, &y0(), &RhcConfig::new(tau, horizon, TerminalPenalty::Zero)).unwrap();
        let ours = compare_to_reference(&sys, &res, &reference.solution, &reference.penalty).unwrap().control_error;
        let oracle = feedback_rhc_error(&sys, tau, horizon, 5.0);
        let rel = (ours - oracle).abs() / oracle;
        println!("tau={tau} T={horizon}: solver {ours:.6e}, oracle {oracle:.6e}, relative {rel:.2e}");
        assert!(rel < 1e-4, "tau={tau} T={horizon}: {ours} vs {oracle}");
    }
}

#[test]
fn reference_matches_riccati_feedback_trajectory() {
    let sys = linear_example();
    let ric = solve_are(&sys).unwrap();
    let reference =
        reference_solution_with(&sys, &TerminalPenalty::taylor2(&ric), &y0(), 5.0, &SolverOptions::default()).unwrap();
    let y: &Trajectory = &reference.solution.y;
    let mut worst: f64 = 0.0;
    for k in (0..=y.grid().steps()).step_by(50) {
        let exact = (&ric.a_pi * y.grid().node(k)).exp() * y0();
        worst = worst.max((y.state(k) - exact).norm());
    }
    // RK4 at h = 0.01 against the fast closed-loop mode
    assert!(worst < 1e-7, "max deviation from e^(A_pi t) y0: {worst:e}");
}
