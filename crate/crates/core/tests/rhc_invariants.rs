//! Structural properties of the receding horizon loop.

use bilinear_rhc::experiments::{monotonicity_report, read_csv, TableKind};
use bilinear_rhc::model::{l2_norm, BilinearSystem};
use bilinear_rhc::ocp::{reference_solution, reference_solution_with, solve_finite_horizon, SolverOptions};
use bilinear_rhc::rhc::{compare_to_reference, decay_certificate, run_rhc, RhcConfig};
use bilinear_rhc::riccati::solve_are;
use bilinear_rhc::simulate::integrate_state;
use bilinear_rhc::taylor::TerminalPenalty;
use nalgebra::{DMatrix, DVector};

fn y0() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 1.0])
}

fn taylor2() -> TerminalPenalty {
    TerminalPenalty::taylor2(&solve_are(&BilinearSystem::reference_example()).unwrap())
}

#[test]
fn concatenated_control_reproduces_the_state() {
    let sys = BilinearSystem::reference_example();
    let res = run_rhc(&sys, &y0(), &RhcConfig::new(0.7, 1.3, taylor2())).unwrap();
    let y = integrate_state(&sys, &res.u_rh, &y0()).unwrap();
    let err = y.states().iter().zip(res.y_rh.states()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn window_count_and_truncation() {
    let sys = BilinearSystem::reference_example();
    for &(tau, count) in &[(0.4, 13), (0.7, 8), (1.0, 5), (2.8, 2)] {
        let res = run_rhc(&sys, &y0(), &RhcConfig::new(tau, 2.8, taylor2())).unwrap();
        assert_eq!(res.windows.len(), count, "tau = {tau}");
        assert_eq!(res.u_rh.grid().steps(), 500);
        let last = res.windows.last().unwrap();
        assert!(last.start_time < 5.0 && last.start_time + tau >= 5.0 - 1e-12);
    }
}

#[test]
fn one_window_covering_the_span_is_the_finite_horizon_solve() {
    let sys = BilinearSystem::reference_example();
    let phi = taylor2();
    let res = run_rhc(&sys, &y0(), &RhcConfig::new(5.0, 5.0, phi.clone())).unwrap();
    let sol = solve_finite_horizon(&sys, 5.0, &phi, &y0(), &SolverOptions::default()).unwrap();
    assert_eq!(res.windows.len(), 1);
    assert!(l2_norm(&res.u_rh.difference(&sol.u).unwrap()) <= 1e-12);
}

#[test]
fn origin_stays_at_rest() {
    let sys = BilinearSystem::reference_example();
    let res = run_rhc(&sys, &DVector::zeros(2), &RhcConfig::new(0.4, 1.0, taylor2())).unwrap();
    assert!(res.u_rh.segments().iter().all(|s| s[0] == 0.0 && s[1] == 0.0));
    assert!(res.y_rh.states().iter().all(|y| y.norm() == 0.0));
    assert!(decay_certificate(&res, 1.5).unwrap().trivially_stable);
}

#[test]
fn warm_and_cold_starts_agree() {
    let sys = BilinearSystem::reference_example();
    let warm = RhcConfig::new(0.4, 1.6, taylor2());
    let cold = RhcConfig { warm_start: false, ..warm.clone() };
    let a = run_rhc(&sys, &y0(), &warm).unwrap();
    let b = run_rhc(&sys, &y0(), &cold).unwrap();
    let diff = l2_norm(&a.u_rh.difference(&b.u_rh).unwrap());
    assert!(diff <= 1e-8, "{diff:e}");
}

#[test]
fn linear_problem_with_riccati_penalty_is_exact() {
    let sys = BilinearSystem::reference_example().with_coupling(DMatrix::zeros(2, 2)).unwrap();
    let phi = TerminalPenalty::taylor2(&solve_are(&sys).unwrap());
    let opts = SolverOptions::default();
    let reference = reference_solution_with(&sys, &phi, &y0(), 5.0, &opts).unwrap();
    for &(tau, horizon) in &[(0.1, 0.1), (0.4, 1.9), (2.8, 2.8)] {
        let res = run_rhc(&sys, &y0(), &RhcConfig::new(tau, horizon, phi.clone())).unwrap();
        let err = compare_to_reference(&sys, &res, &reference.solution, &reference.penalty).unwrap().control_error;
        assert!(err <= 1e-5, "tau={tau} T={horizon}: {err:e}");
    }
}

#[test]
fn receding_horizon_is_never_better_than_the_reference() {
    let sys = BilinearSystem::reference_example();
    let reference = reference_solution(&sys, &y0(), 5.0, &SolverOptions::default()).unwrap();
    for &(tau, horizon) in &[(0.4, 0.4), (0.7, 1.6), (1.0, 2.8)] {
        let res = run_rhc(&sys, &y0(), &RhcConfig::new(tau, horizon, reference.penalty.clone())).unwrap();
        let cmp = compare_to_reference(&sys, &res, &reference.solution, &reference.penalty).unwrap();
        assert!(cmp.suboptimality >= -1e-9, "tau={tau} T={horizon}: {:e}", cmp.suboptimality);
        assert_eq!(cmp.a_n.len(), res.windows.len());
        assert_eq!(cmp.b_n[0], 0.0);
    }
}

#[test]
fn comparing_a_run_with_itself_gives_zero() {
    let sys = BilinearSystem::reference_example();
    let phi = taylor2();
    let res = run_rhc(&sys, &y0(), &RhcConfig::new(5.0, 5.0, phi.clone())).unwrap();
    let sol = solve_finite_horizon(&sys, 5.0, &phi, &y0(), &SolverOptions::default()).unwrap();
    let cmp = compare_to_reference(&sys, &res, &sol, &phi).unwrap();
    assert!(cmp.control_error <= 1e-12 && cmp.state_error <= 1e-12 && cmp.suboptimality.abs() <= 1e-12);
}

#[test]
fn window_states_decay_at_the_closed_loop_rate() {
    let sys = BilinearSystem::reference_example();
    let lambda = solve_are(&sys).unwrap().lambda;
    let res = run_rhc(&sys, &y0(), &RhcConfig::new(0.4, 1.6, taylor2())).unwrap();
    let norms: Vec<f64> = res.windows.iter().map(|w| w.initial_state.norm()).collect();
    assert!(norms.windows(2).all(|p| p[1] < p[0]), "{norms:?}");
    let cert = decay_certificate(&res, lambda).unwrap();
    println!("fitted rate {:.3}, ratio to lambda {:.3}", cert.rate, cert.rate_ratio);
    assert!(cert.passes && (1.0..=2.0).contains(&cert.rate), "{cert:?}");
}

const REFERENCE_K1: &str = "\
tau\\T,0.1,0.4,0.7,1.0,1.3,1.6,1.9,2.2,2.5,2.8
0.1,4.3e+0,8.3e-1,2.6e-1,1.1e-1,4.7e-2,2.0e-2,8.1e-3,3.3e-3,1.4e-3,5.5e-4
0.4,,1.6e+0,3.9e-1,1.6e-1,6.9e-2,2.9e-2,1.2e-2,4.9e-3,2.0e-3,8.2e-4
0.7,,,5.8e-1,2.2e-1,9.7e-2,4.2e-2,1.7e-2,7.2e-3,2.9e-3,1.2e-3
1.0,,,,2.7e-1,1.3e-1,6.0e-2,2.6e-2,1.1e-2,4.5e-3,1.8e-3
1.3,,,,,1.5e-1,8.2e-2,3.8e-2,1.7e-2,6.9e-3,2.8e-3
1.6,,,,,,8.6e-2,5.2e-2,2.5e-2,1.1e-2,4.4e-3
1.9,,,,,,,5.3e-2,3.3e-2,1.6e-2,6.8e-3
2.2,,,,,,,,3.4e-2,2.1e-2,1.0e-2
2.5,,,,,,,,,2.1e-2,1.3e-2
2.8,,,,,,,,,,1.4e-2
";

#[test]
fn reference_first_order_table_is_monotone() {
    let table = read_csv(REFERENCE_K1.as_bytes(), TableKind::Error, 1).unwrap();
    assert_eq!(table.present(), 55);
    let report = monotonicity_report(&[table], 1e-7);
    assert_eq!(report.comparisons, 90);
    assert!(report.is_clean(), "{:?}", report.violations);
}
