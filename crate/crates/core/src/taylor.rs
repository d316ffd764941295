//! Terminal penalties: zero, a fixed quadratic, and the second- and
//! third-order Taylor expansions of the value function at the origin.
//!
//! The cubic coefficient `T₃ = D³V(0)` is the unique symmetric solution of
//! the cubic-order part of the stationary HJB equation,
//!
//! ```text
//! ½ T₃(y, y, A_π y) = (1/α) ⟨Πy, B⟩ ⟨Πy, N y⟩   for all y,
//! ```
//!
//! solved by matching the coefficients of every cubic monomial.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::BilinearSystem;
use crate::riccati::RiccatiSolution;

/// Fully symmetric third-order tensor, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    n: usize,
    entries: Vec<f64>,
}

impl SymTensor3 {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![0.0; n * n * n] }
    }

    /// Builds the tensor from values on sorted index triples `i ≤ j ≤ k`.
    pub fn from_sorted(n: usize, value: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let [a, b, c] = sorted([i, j, k]);
                    let idx = t.index(i, j, k);
                    t.entries[idx] = value(a, b, c);
                }
            }
        }
        t
    }

    /// Symmetrizes an arbitrary dense `n×n×n` array given in `i, j, k` order.
    pub fn symmetrized(n: usize, raw: impl Fn(usize, usize, usize) -> f64) -> Self {
        Self::from_sorted(n, |i, j, k| {
            let perms = [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)];
            perms.iter().map(|&(a, b, c)| raw(a, b, c)).sum::<f64>() / 6.0
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.entries[self.index(i, j, k)]
    }

    /// Multilinear form `T(u, v, w)`.
    pub fn eval(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let uv = u[i] * v[j];
                if uv == 0.0 {
                    continue;
                }
                for k in 0..n {
                    acc += self.entries[self.index(i, j, k)] * uv * w[k];
                }
            }
        }
        acc
    }

    /// The covector `T(y, y, ·)`.
    pub fn contract2(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += self.entries[self.index(i, j, k)] * y[i] * y[j];
                }
            }
            acc
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

fn sorted(mut t: [usize; 3]) -> [usize; 3] {
    t.sort_unstable();
    t
}

/// Sorted index triples `i ≤ j ≤ k`, in lexicographic order.
fn sorted_triples(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                out.push([i, j, k]);
            }
        }
    }
    out
}

/// Solves the cubic-order HJB identity for `T₃ = D³V(0)`.
pub fn solve_cubic_term(sys: &BilinearSystem, ric: &RiccatiSolution) -> Result<SymTensor3> {
    let n = sys.dim();
    if ric.pi.nrows() != n {
        return Err(Error::InvalidInput("Riccati solution does not match the system".into()));
    }
    let triples = sorted_triples(n);
    let position = |t: [usize; 3]| triples.binary_search(&t).expect("sorted triple is indexed");
    let m = triples.len();

    // Coefficient of each monomial y_a y_b y_c in ½ T(y, y, A_π y), per unknown.
    let mut lhs = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let unknown = position(sorted([i, j, k]));
                for l in 0..n {
                    let coeff = ric.a_pi[(k, l)];
                    if coeff != 0.0 {
                        lhs[(position(sorted([i, j, l])), unknown)] += 0.5 * coeff;
                    }
                }
            }
        }
    }

    // (1/α) ⟨Πy, B⟩ ⟨Πy, N y⟩ = (1/α) Σ (ΠB)_i y_i Σ (ΠN)_jl y_j y_l
    let pb = &ric.pi * sys.b();
    let pn = &ric.pi * sys.n();
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                rhs[position(sorted([i, j, l]))] += pb[i] * pn[(j, l)] / sys.alpha();
            }
        }
    }

    if rhs.amax() == 0.0 {
        return Ok(SymTensor3::zeros(n));
    }

    let lu = lhs.full_piv_lu();
    let diag = lu.u().diagonal();
    let pivot_min = diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if pivot_min <= 1e-13 * diag.amax() {
        return Err(Error::DegenerateSpectrum(
            "cubic HJB system is singular: eigenvalue triples of A_pi sum to zero".into(),
        ));
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateSpectrum("cubic HJB system is singular".into()))?;
    Ok(SymTensor3::from_sorted(n, |i, j, k| x[position([i, j, k])]))
}

/// `½ T₃(y, y, A_π y) − (1/α) ⟨Πy, B⟩ ⟨Πy, N y⟩`.
pub fn cubic_hjb_residual(
    sys: &BilinearSystem,
    ric: &RiccatiSolution,
    t3: &SymTensor3,
    y: &DVector<f64>,
) -> f64 {
    let py = &ric.pi * y;
    0.5 * t3.eval(y, y, &(&ric.a_pi * y)) - py.dot(sys.b()) * py.dot(&(sys.n() * y)) / sys.alpha()
}

/// Terminal cost `φ` appended to each finite-horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalPenalty {
    Zero,
    Quadratic { q: DMatrix<f64> },
    Taylor2 { pi: DMatrix<f64> },
    Taylor3 { pi: DMatrix<f64>, t3: SymTensor3 },
}

impl TerminalPenalty {
    /// `½⟨y, Qy⟩`; `Q` must be symmetric positive semidefinite.
    pub fn quadratic(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::InvalidInput("Q must be square".into()));
        }
        if linalg::relative_asymmetry(&q) > 1e-12 {
            return Err(Error::InvalidInput("Q must be symmetric".into()));
        }
        if linalg::min_symmetric_eigenvalue(&q) < -1e-10 {
            return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
        }
        Ok(Self::Quadratic { q })
    }

    pub fn taylor2(ric: &RiccatiSolution) -> Self {
        Self::Taylor2 { pi: ric.pi.clone() }
    }

    pub fn taylor3(sys: &BilinearSystem, ric: &RiccatiSolution) -> Result<Self> {
        Ok(Self::Taylor3 { pi: ric.pi.clone(), t3: solve_cubic_term(sys, ric)? })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Quadratic { .. } => "quadratic",
            Self::Taylor2 { .. } => "taylor2",
            Self::Taylor3 { .. } => "taylor3",
        }
    }

    /// `φ(y)`.
    pub fn eval(&self, y: &DVector<f64>) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic { q: m } | Self::Taylor2 { pi: m } => 0.5 * y.dot(&(m * y)),
            Self::Taylor3 { pi, t3 } => 0.5 * y.dot(&(pi * y)) + t3.eval(y, y, y) / 6.0,
        }
    }

    /// `∇φ(y)`.
    pub fn grad(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(y.len()),
            Self::Quadratic { q: m } | Self::Taylor2 { pi: m } => m * y,
            Self::Taylor3 { pi, t3 } => pi * y + t3.contract2(y) * 0.5,
        }
    }
}

/// Kind of terminal penalty as written in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Zero,
    Quadratic,
    Taylor2,
    Taylor3,
}

impl PenaltyKind {
    /// Expansion order `k` used in the error tables (`k = 1` for `φ = 0`).
    pub fn order(self) -> Option<u32> {
        match self {
            Self::Zero => Some(1),
            Self::Taylor2 => Some(2),
            Self::Taylor3 => Some(3),
            Self::Quadratic => None,
        }
    }

    pub fn from_order(k: u32) -> Option<Self> {
        match k {
            1 => Some(Self::Zero),
            2 => Some(Self::Taylor2),
            3 => Some(Self::Taylor3),
            _ => None,
        }
    }
}

/// `"phi": {"kind": ..., "Q": ...}` in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
}

impl PenaltySpec {
    pub fn of_kind(kind: PenaltyKind) -> Self {
        Self { kind, q: None }
    }

    pub fn build(&self, sys: &BilinearSystem, ric: &RiccatiSolution) -> Result<TerminalPenalty> {
        match self.kind {
            PenaltyKind::Zero => Ok(TerminalPenalty::Zero),
            PenaltyKind::Quadratic => {
                let rows = self
                    .q
                    .as_ref()
                    .ok_or_else(|| Error::Config("quadratic penalty needs \"Q\"".into()))?;
                let q = linalg::matrix_from_rows(rows, "Q")
                    .map_err(|e| Error::Config(e.to_string()))?;
                if q.nrows() != sys.dim() {
                    return Err(Error::Config("Q does not match the state dimension".into()));
                }
                TerminalPenalty::quadratic(q)
            }
            PenaltyKind::Taylor2 => Ok(TerminalPenalty::taylor2(ric)),
            PenaltyKind::Taylor3 => TerminalPenalty::taylor3(sys, ric),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_are;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        v.normalize()
    }

    #[test]
    fn zero_coupling_gives_zero_tensor() {
        let sys = BilinearSystem::reference_example().with_coupling(DMatrix::zeros(2, 2)).unwrap();
        let ric = solve_are(&sys).unwrap();
        let t3 = solve_cubic_term(&sys, &ric).unwrap();
        assert_eq!(t3.max_abs(), 0.0);
    }

    #[test]
    fn scalar_cubic_term() {
        let (a, b, nn, alpha) = (-1.0, 1.0, 0.7, 1.0);
        let sys = BilinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, nn),
            DMatrix::from_element(1, 1, 1.0),
            alpha,
        )
        .unwrap();
        let ric = solve_are(&sys).unwrap();
        let pi = ric.pi[(0, 0)];
        let a_pi = ric.a_pi[(0, 0)];
        let t3 = solve_cubic_term(&sys, &ric).unwrap();
        assert_relative_eq!(t3.get(0, 0, 0), 2.0 * pi * pi * b * nn / (alpha * a_pi), max_relative = 1e-12);
    }

    #[test]
    fn reference_example_hjb_residual_and_symmetry() {
        let sys = BilinearSystem::reference_example();
        let ric = solve_are(&sys).unwrap();
        let t3 = solve_cubic_term(&sys, &ric).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let y = random_unit(&mut rng, 2);
            assert!(cubic_hjb_residual(&sys, &ric, &t3, &y).abs() <= 1e-9);
            let (u, v) = (random_unit(&mut rng, 2), random_unit(&mut rng, 2));
            let base = t3.eval(&u, &v, &y);
            for perm in [t3.eval(&u, &y, &v), t3.eval(&v, &u, &y), t3.eval(&v, &y, &u), t3.eval(&y, &u, &v), t3.eval(&y, &v, &u)] {
                assert_relative_eq!(base, perm, epsilon = 1e-15, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn penalty_values() {
        let pi = DMatrix::identity(2, 2);
        let phi = TerminalPenalty::Taylor2 { pi: pi.clone() };
        assert_relative_eq!(phi.eval(&DVector::from_vec(vec![1.0, 1.0])), 1.0);
        assert_eq!(phi.grad(&DVector::from_vec(vec![3.0, 4.0])), DVector::from_vec(vec![3.0, 4.0]));
        let y = DVector::from_vec(vec![0.3, -2.0]);
        assert_eq!(TerminalPenalty::Zero.eval(&y), 0.0);
        assert_eq!(TerminalPenalty::Zero.grad(&y), DVector::zeros(2));
        let cubic_free = TerminalPenalty::Taylor3 { pi, t3: SymTensor3::zeros(2) };
        assert_eq!(cubic_free.eval(&y), phi.eval(&y));
    }

    #[test]
    fn gradients_match_central_differences() {
        let sys = BilinearSystem::reference_example();
        let ric = solve_are(&sys).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let penalties = [
            TerminalPenalty::Zero,
            TerminalPenalty::quadratic(q).unwrap(),
            TerminalPenalty::taylor2(&ric),
            TerminalPenalty::taylor3(&sys, &ric).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-5;
        for i in 0..100 {
            let phi = &penalties[i % penalties.len()];
            let y = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let g = phi.grad(&y);
            let fd = DVector::from_fn(2, |j, _| {
                let mut e = DVector::zeros(2);
                e[j] = eps;
                (phi.eval(&(&y + &e)) - phi.eval(&(&y - &e))) / (2.0 * eps)
            });
            assert!((&g - fd).norm() <= 1e-6 * g.norm().max(1.0), "{}", phi.label());
        }
    }

    #[test]
    fn quadratic_penalty_validation() {
        assert!(TerminalPenalty::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(TerminalPenalty::quadratic(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).is_err());
        assert!(TerminalPenalty::quadratic(DMatrix::zeros(2, 2)).is_ok());
    }

    #[test]
    fn penalty_spec_json() {
        let spec: PenaltySpec = serde_json::from_str(r#"{"kind": "quadratic", "Q": [[1, 0], [0, 2]]}"#).unwrap();
        assert_eq!(spec.kind, PenaltyKind::Quadratic);
        let sys = BilinearSystem::reference_example();
        let ric = solve_are(&sys).unwrap();
        assert!(matches!(spec.build(&sys, &ric).unwrap(), TerminalPenalty::Quadratic { .. }));
        let bad: std::result::Result<PenaltySpec, _> = serde_json::from_str(r#"{"kind": "taylor4"}"#);
        assert!(bad.is_err());
    }
}
