//! System definition, time grids, signal containers and the norms used to
//! measure them.
//!
//! Controls are piecewise-linear on each grid step (a left and a right value
//! per step, so jumps are allowed at nodes). All norms of controls are
//! computed exactly on that class; state trajectories are sampled at nodes.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Dynamics `y' = A y + (N y + B) u` with running cost `½|Cy|² + (α/2) u²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemFile", into = "SystemFile")]
pub struct BilinearSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    n: DMatrix<f64>,
    c: DMatrix<f64>,
    alpha: f64,
    ctc: DMatrix<f64>,
}

impl BilinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        n: DMatrix<f64>,
        c: DMatrix<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let dim = a.nrows();
        if dim == 0 {
            return Err(Error::InvalidSystem("state dimension must be positive".into()));
        }
        if a.ncols() != dim {
            return Err(Error::InvalidSystem(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.len() != dim {
            return Err(Error::InvalidSystem(format!("B has length {}, expected {dim}", b.len())));
        }
        if n.nrows() != dim || n.ncols() != dim {
            return Err(Error::InvalidSystem(format!(
                "N is {}x{}, expected {dim}x{dim}",
                n.nrows(),
                n.ncols()
            )));
        }
        if c.ncols() != dim || c.nrows() == 0 {
            return Err(Error::InvalidSystem(format!(
                "C is {}x{}, expected z x {dim} with z >= 1",
                c.nrows(),
                c.ncols()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidSystem(format!("alpha must be positive, got {alpha}")));
        }
        let finite = a.iter().chain(b.iter()).chain(n.iter()).chain(c.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSystem("non-finite matrix entry".into()));
        }
        let ctc = c.transpose() * &c;
        Ok(Self { a, b, n, c, alpha, ctc })
    }

    /// The two-dimensional stabilization example used throughout the numerical study.
    pub fn reference_example() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[-0.2, -0.2, 0.0, -0.2]),
            DMatrix::identity(2, 2),
            0.1,
        )
        .expect("reference example is well formed")
    }

    /// Same system with a different bilinear coupling matrix.
    pub fn with_coupling(&self, n: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), n, self.c.clone(), self.alpha)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn n(&self) -> &DMatrix<f64> {
        &self.n
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `CᵀC`, precomputed.
    pub fn ctc(&self) -> &DMatrix<f64> {
        &self.ctc
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Right-hand side `A y + u (N y + B)`.
    pub fn rhs(&self, y: &DVector<f64>, u: f64) -> DVector<f64> {
        let mut f = &self.a * y;
        f += (&self.n * y + &self.b) * u;
        f
    }

    /// `N y + B`, the derivative of the right-hand side with respect to `u`.
    pub fn control_direction(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.n * y + &self.b
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }
}

/// On-disk form of a system: row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "N")]
    pub n: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl TryFrom<SystemFile> for BilinearSystem {
    type Error = Error;

    fn try_from(f: SystemFile) -> Result<Self> {
        BilinearSystem::new(
            linalg::matrix_from_rows(&f.a, "A")?,
            DVector::from_vec(f.b),
            linalg::matrix_from_rows(&f.n, "N")?,
            linalg::matrix_from_rows(&f.c, "C")?,
            f.alpha,
        )
    }
}

impl From<BilinearSystem> for SystemFile {
    fn from(s: BilinearSystem) -> Self {
        SystemFile {
            a: linalg::matrix_to_rows(&s.a),
            b: s.b.iter().copied().collect(),
            n: linalg::matrix_to_rows(&s.n),
            c: linalg::matrix_to_rows(&s.c),
            alpha: s.alpha,
        }
    }
}

/// Outcome of the spectral (PBH) checks on a system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemReport {
    pub stabilizable: bool,
    pub detectable: bool,
    pub spectral_abscissa: f64,
    /// First eigenvalue with `Re ≥ 0` at which `[A − μI, B]` loses rank.
    pub uncontrollable_eigenvalue: Option<Complex<f64>>,
    /// First eigenvalue with `Re ≥ 0` at which `[A − μI; C]` loses rank.
    pub unobservable_eigenvalue: Option<Complex<f64>>,
}

/// PBH rank tests for stabilizability of `(A, B)` and detectability of `(A, C)`.
pub fn validate_system(sys: &BilinearSystem) -> Result<SystemReport> {
    let n = sys.dim();
    let eig = linalg::eigenvalues(sys.a())?;
    let abscissa = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let to_c = |v: f64| Complex::new(v, 0.0);

    let ab_scale = linalg::max_abs(sys.a()).max(sys.b().amax());
    let ac_scale = linalg::max_abs(sys.a()).max(linalg::max_abs(sys.c()));

    let mut uncontrollable = None;
    let mut unobservable = None;
    for mu in eig.iter().filter(|z| z.re >= 0.0) {
        let shifted = DMatrix::from_fn(n, n, |i, j| {
            to_c(sys.a()[(i, j)]) - if i == j { *mu } else { Complex::new(0.0, 0.0) }
        });

        if uncontrollable.is_none() {
            let mut m = DMatrix::zeros(n, n + 1);
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            for i in 0..n {
                m[(i, n)] = to_c(sys.b()[i]);
            }
            if linalg::complex_rank(m, 1e-10 * ab_scale) < n {
                uncontrollable = Some(*mu);
            }
        }

        if unobservable.is_none() {
            let z = sys.output_dim();
            let mut m = DMatrix::zeros(n + z, n);
            m.view_mut((0, 0), (n, n)).copy_from(&shifted);
            for i in 0..z {
                for j in 0..n {
                    m[(n + i, j)] = to_c(sys.c()[(i, j)]);
                }
            }
            if linalg::complex_rank(m, 1e-10 * ac_scale) < n {
                unobservable = Some(*mu);
            }
        }
    }

    Ok(SystemReport {
        stabilizable: uncontrollable.is_none(),
        detectable: unobservable.is_none(),
        spectral_abscissa: abscissa,
        uncontrollable_eigenvalue: uncontrollable,
        unobservable_eigenvalue: unobservable,
    })
}

/// Uniform grid `t_start + k h`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    h: f64,
    steps: usize,
}

/// Relative tolerance for "span / h is an integer".
pub const GRID_TOLERANCE: f64 = 1e-9;

impl TimeGrid {
    pub fn new(t_start: f64, h: f64, steps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
        }
        if steps == 0 {
            return Err(Error::InvalidInput("grid needs at least one step".into()));
        }
        if !t_start.is_finite() {
            return Err(Error::InvalidInput("grid start is not finite".into()));
        }
        Ok(Self { t_start, h, steps })
    }

    /// Grid tiling `(t_start, t_start + span)` with step `h`.
    pub fn over(t_start: f64, span: f64, h: f64) -> Result<Self> {
        let steps = steps_in(span, h)?;
        Self::new(t_start, h, steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn node(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.h
    }

    pub fn t_end(&self) -> f64 {
        self.node(self.steps)
    }

    pub fn span(&self) -> f64 {
        self.steps as f64 * self.h
    }

    /// Grid of `steps` steps starting at node `offset` of this grid.
    pub fn subgrid(&self, offset: usize, steps: usize) -> Result<Self> {
        if offset + steps > self.steps {
            return Err(Error::InvalidInput(format!(
                "subgrid {offset}+{steps} exceeds {} steps",
                self.steps
            )));
        }
        Self::new(self.node(offset), self.h, steps)
    }

    /// Same step and node count, ignoring where the grid starts.
    pub fn same_shape(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && self.h == other.h
    }

    pub(crate) fn check_matches(&self, other: &TimeGrid, what: &str) -> Result<()> {
        let start_ok = (self.t_start - other.t_start).abs() <= GRID_TOLERANCE * self.h;
        if self.same_shape(other) && start_ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{what}: grids do not match ({self:?} vs {other:?})")))
        }
    }
}

/// Number of steps of size `h` in `span`, requiring `span / h` to be an integer.
pub fn steps_in(span: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(span > 0.0) || !span.is_finite() {
        return Err(Error::InvalidInput(format!("cannot tile span {span} with step {h}")));
    }
    let ratio = span / h;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > GRID_TOLERANCE * rounded.max(1.0) || rounded < 1.0 {
        return Err(Error::InvalidInput(format!(
            "span {span} is not an integer multiple of step {h}"
        )));
    }
    Ok(rounded as usize)
}

/// Piecewise-linear control: `segments[k] = [u(t_k⁺), u(t_{k+1}⁻)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    grid: TimeGrid,
    segments: Vec<[f64; 2]>,
}

impl ControlSignal {
    pub fn new(grid: TimeGrid, segments: Vec<[f64; 2]>) -> Result<Self> {
        if segments.len() != grid.steps() {
            return Err(Error::InvalidInput(format!(
                "control has {} segments for {} steps",
                segments.len(),
                grid.steps()
            )));
        }
        if segments.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("control contains non-finite values".into()));
        }
        Ok(Self { grid, segments })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self { grid, segments: vec![[value, value]; grid.steps()] }
    }

    /// Piecewise-constant signal with one value per step.
    pub fn piecewise_constant(grid: TimeGrid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| [v, v]).collect())
    }

    /// Samples `f` at both ends of every step (linear interpolant).
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let segments = (0..grid.steps())
            .map(|k| [f(grid.node(k)), f(grid.node(k + 1))])
            .collect();
        Self::new(grid, segments)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn segments(&self) -> &[[f64; 2]] {
        &self.segments
    }

    /// Value at the step midpoint.
    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.segments[k][0] + self.segments[k][1])
    }

    /// Evaluates the signal, right-continuous at interior nodes.
    pub fn value_at(&self, t: f64) -> f64 {
        let s = ((t - self.grid.t_start()) / self.grid.h()).clamp(0.0, self.grid.steps() as f64);
        let k = (s.floor() as usize).min(self.grid.steps() - 1);
        let theta = s - k as f64;
        let [l, r] = self.segments[k];
        l + (r - l) * theta
    }

    /// Restriction to steps `offset..offset + steps`.
    pub fn restrict(&self, offset: usize, steps: usize) -> Result<Self> {
        let grid = self.grid.subgrid(offset, steps)?;
        Ok(Self { grid, segments: self.segments[offset..offset + steps].to_vec() })
    }

    /// Pointwise difference `self − other` on a shared grid.
    pub fn difference(&self, other: &ControlSignal) -> Result<Self> {
        self.grid.check_matches(&other.grid, "control difference")?;
        let segments = self
            .segments
            .iter()
            .zip(&other.segments)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
            .collect();
        Ok(Self { grid: self.grid, segments })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            segments: self.segments.iter().map(|[l, r]| [l * factor, r * factor]).collect(),
        }
    }

    /// Flattened `[l0, r0, l1, r1, ...]`, the optimizer's decision vector.
    pub fn to_flat(&self) -> Vec<f64> {
        self.segments.iter().flatten().copied().collect()
    }

    pub fn from_flat(grid: TimeGrid, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * grid.steps() {
            return Err(Error::InvalidInput("flat control has the wrong length".into()));
        }
        Self::new(grid, flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// `∫ a b` over one step of length `h` for linear segments `a`, `b`.
pub(crate) fn segment_inner(h: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    h / 6.0 * (2.0 * a[0] * b[0] + a[0] * b[1] + a[1] * b[0] + 2.0 * a[1] * b[1])
}

/// L² inner product of two signals on a shared grid.
pub fn l2_inner(u: &ControlSignal, v: &ControlSignal) -> Result<f64> {
    u.grid.check_matches(&v.grid, "L2 inner product")?;
    let h = u.grid.h();
    Ok(u.segments.iter().zip(&v.segments).map(|(a, b)| segment_inner(h, *a, *b)).sum())
}

/// Exact L² norm of the piecewise-linear signal.
pub fn l2_norm(u: &ControlSignal) -> f64 {
    let h = u.grid.h();
    u.segments.iter().map(|s| segment_inner(h, *s, *s)).sum::<f64>().max(0.0).sqrt()
}

/// L² norm of `t ↦ e^{μt} u(t)` with the weight frozen at each step midpoint.
pub fn weighted_l2_norm(u: &ControlSignal, mu: f64) -> f64 {
    let grid = u.grid;
    let h = grid.h();
    u.segments
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let w = (mu * (grid.node(k) + 0.5 * h)).exp();
            w * w * segment_inner(h, *s, *s)
        })
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// Node-sampled state trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<DVector<f64>>) -> Result<Self> {
        check_node_count(&grid, states.len(), "trajectory")?;
        Ok(Self { grid, states })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.states[k]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least two nodes")
    }

    pub fn restrict(&self, offset: usize, steps: usize) -> Result<Self> {
        let grid = self.grid.subgrid(offset, steps)?;
        Ok(Self { grid, states: self.states[offset..=offset + steps].to_vec() })
    }

    pub fn difference(&self, other: &Trajectory) -> Result<Self> {
        self.grid.check_matches(&other.grid, "trajectory difference")?;
        let states = self.states.iter().zip(&other.states).map(|(a, b)| a - b).collect();
        Ok(Self { grid: self.grid, states })
    }
}

/// Node-sampled costate trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    grid: TimeGrid,
    costates: Vec<DVector<f64>>,
}

impl CostateTrajectory {
    pub fn new(grid: TimeGrid, costates: Vec<DVector<f64>>) -> Result<Self> {
        check_node_count(&grid, costates.len(), "costate trajectory")?;
        Ok(Self { grid, costates })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn costates(&self) -> &[DVector<f64>] {
        &self.costates
    }

    pub fn costate(&self, k: usize) -> &DVector<f64> {
        &self.costates[k]
    }
}

fn check_node_count(grid: &TimeGrid, len: usize, what: &str) -> Result<()> {
    if len != grid.steps() + 1 {
        return Err(Error::InvalidInput(format!(
            "{what} has {len} nodes for {} steps",
            grid.steps()
        )));
    }
    Ok(())
}

/// Max over nodes of the Euclidean state norm.
pub fn trajectory_sup_norm(y: &Trajectory) -> f64 {
    y.states.iter().map(|s| s.norm()).fold(0.0, f64::max)
}

/// L² norm in time of a node-sampled trajectory (trapezoidal rule).
pub fn trajectory_l2_norm(y: &Trajectory) -> f64 {
    let h = y.grid.h();
    let sq: Vec<f64> = y.states.iter().map(|s| s.norm_squared()).collect();
    let interior: f64 = sq[1..sq.len() - 1].iter().sum();
    (h * (interior + 0.5 * (sq[0] + sq[sq.len() - 1]))).sqrt()
}
