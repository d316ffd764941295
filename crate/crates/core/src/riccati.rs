//! Algebraic Riccati equation `AᵀΠ + ΠA + CᵀC − (1/α) ΠBBᵀΠ = 0` by
//! Newton–Kleinman, with Kronecker-vectorized Lyapunov solves inside.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate_system, BilinearSystem};

pub use crate::linalg::spectral_abscissa;

/// Relative Frobenius residual at which the Newton iteration stops.
pub const ARE_TOLERANCE: f64 = 1e-10;
/// Iteration cap for Newton–Kleinman.
pub const MAX_NEWTON_ITERATIONS: usize = 100;

/// Stabilizing solution of the Riccati equation and the closed loop it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub pi: DMatrix<f64>,
    /// `A − (1/α) B Bᵀ Π`.
    pub a_pi: DMatrix<f64>,
    /// Decay rate, minus the spectral abscissa of `a_pi`.
    pub lambda: f64,
    /// Frobenius norm of the Riccati residual at `pi`.
    pub residual: f64,
    pub iterations: usize,
}

impl RiccatiSolution {
    /// LQ feedback gain `k` with `u = −kᵀy`, i.e. `k = Π B / α`.
    pub fn gain(&self, sys: &BilinearSystem) -> DVector<f64> {
        &self.pi * sys.b() / sys.alpha()
    }
}

/// Riccati residual `AᵀΠ + ΠA + CᵀC − (1/α) ΠBBᵀΠ`.
pub fn are_residual_matrix(sys: &BilinearSystem, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let pb = pi * sys.b();
    sys.a().transpose() * pi + pi * sys.a() + sys.ctc() - (&pb * pb.transpose()) / sys.alpha()
}

pub fn are_residual(sys: &BilinearSystem, pi: &DMatrix<f64>) -> f64 {
    are_residual_matrix(sys, pi).norm()
}

/// `A − (1/α) B Bᵀ Π`.
pub fn closed_loop(sys: &BilinearSystem, pi: &DMatrix<f64>) -> DMatrix<f64> {
    let k = pi * sys.b() / sys.alpha();
    sys.a() - sys.b() * k.transpose()
}

/// Solves `MᵀX + XM + RHS = 0` through the Kronecker form
/// `(I ⊗ Mᵀ + Mᵀ ⊗ I) vec X = −vec RHS`.
pub fn solve_lyapunov(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || rhs.nrows() != n || rhs.ncols() != n {
        return Err(Error::InvalidInput("Lyapunov operands must be square and conformant".into()));
    }
    let idx = |i: usize, j: usize| i + n * j;
    let mut k = DMatrix::<f64>::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            for l in 0..n {
                k[(idx(i, j), idx(l, j))] += m[(l, i)];
                k[(idx(i, j), idx(i, l))] += m[(l, j)];
            }
        }
    }
    let b = DVector::from_iterator(n * n, rhs.iter().map(|v| -v));

    let lu = k.clone().full_piv_lu();
    let u_diag = lu.u().diagonal();
    let pivot_max = u_diag.amax();
    let pivot_min = u_diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if pivot_max == 0.0 || pivot_min <= 1e-14 * pivot_max {
        return Err(Error::DegenerateSpectrum(
            "Lyapunov operator is singular: eigenvalues of M sum to zero".into(),
        ));
    }
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::DegenerateSpectrum("Lyapunov operator is singular".into()))?;
    // one step of iterative refinement
    let r = &b - &k * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }

    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    let symmetric = linalg::relative_asymmetry(rhs) == 0.0;
    Ok(if symmetric { linalg::symmetrize(&x) } else { x })
}

/// Residual `‖MᵀX + XM + RHS‖_F`.
pub fn lyapunov_residual(m: &DMatrix<f64>, rhs: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (m.transpose() * x + x * m + rhs).norm()
}

/// Initial stabilizing gain: zero for stable `A`, otherwise a Bass-type
/// shifted Lyapunov design.
fn initial_gain(sys: &BilinearSystem) -> Result<DVector<f64>> {
    let n = sys.dim();
    let abscissa = spectral_abscissa(sys.a())?;
    if abscissa < 0.0 {
        return Ok(DVector::zeros(n));
    }
    // every eigenvalue of A + βI must lie in the open right half-plane
    let neg = -sys.a();
    let beta = abscissa.max(spectral_abscissa(&neg)?).max(0.0) + 1.0;
    let shifted = sys.a() + DMatrix::identity(n, n) * beta;
    let bbt = sys.b() * sys.b().transpose();
    let z = solve_lyapunov(&(-shifted.transpose()), &(bbt * 2.0))?;
    let tol = 1e-12 * linalg::max_abs(&z).max(f64::MIN_POSITIVE);
    let z_pinv = z
        .pseudo_inverse(tol)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let gain = z_pinv * sys.b();
    let cl = sys.a() - sys.b() * gain.transpose();
    if spectral_abscissa(&cl)? >= 0.0 {
        return Err(Error::NotStabilizing(
            "shifted Lyapunov design did not produce a stabilizing initial gain".into(),
        ));
    }
    Ok(gain)
}

/// Stabilizing solution of the Riccati equation by Newton–Kleinman.
pub fn solve_are(sys: &BilinearSystem) -> Result<RiccatiSolution> {
    let report = validate_system(sys)?;
    if let Some(mu) = report.uncontrollable_eigenvalue {
        return Err(Error::NoStabilizingSolution { re: mu.re, im: mu.im });
    }
    if let Some(mu) = report.unobservable_eigenvalue {
        return Err(Error::NotStabilizing(format!(
            "(A, C) is not detectable: unobservable eigenvalue {:.6} {:+.6}i",
            mu.re, mu.im
        )));
    }

    let alpha = sys.alpha();
    let newton_step = |gain: &DVector<f64>| -> Result<DMatrix<f64>> {
        let a_k = sys.a() - sys.b() * gain.transpose();
        let rhs = sys.ctc() + gain * gain.transpose() * alpha;
        solve_lyapunov(&a_k, &rhs)
    };

    let mut gain = initial_gain(sys)?;
    let mut last_residual = f64::INFINITY;
    for iteration in 1..=MAX_NEWTON_ITERATIONS {
        let mut pi = newton_step(&gain)?;
        let mut residual = are_residual(sys, &pi);
        last_residual = residual;
        if residual <= ARE_TOLERANCE * pi.norm().max(1.0) {
            // quadratic convergence: one more step lands at roundoff level
            let polished = newton_step(&(&pi * sys.b() / alpha))?;
            let polished_residual = are_residual(sys, &polished);
            if polished_residual < residual {
                pi = polished;
                residual = polished_residual;
            }
            let a_pi = closed_loop(sys, &pi);
            let lambda = -spectral_abscissa(&a_pi)?;
            if lambda <= 0.0 {
                return Err(Error::NotStabilizing(format!(
                    "Riccati solution does not stabilize (closed-loop abscissa {:.3e})",
                    -lambda
                )));
            }
            return Ok(RiccatiSolution { pi, a_pi, lambda, residual, iterations: iteration });
        }
        gain = &pi * sys.b() / alpha;
    }
    Err(Error::ConvergenceFailure { iterations: MAX_NEWTON_ITERATIONS, residual: last_residual })
}
