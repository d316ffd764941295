//! Sweeps of the receding-horizon error over sampling times and prediction
//! horizons, the derived ρ tables, monotonicity reports and table export.

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BilinearSystem;
use crate::ocp::{reference_solution_with, ReferenceSolution, SolverOptions};
use crate::rhc::{compare_to_reference, run_rhc, RhcConfig};
use crate::riccati::solve_are;
use crate::taylor::{PenaltyKind, TerminalPenalty};

/// `0.1, 0.4, …, 2.8`.
pub fn default_grid_values() -> Vec<f64> {
    (0..10).map(|i| (1 + 3 * i) as f64 / 10.0).collect()
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub system: BilinearSystem,
    pub y0: DVector<f64>,
    pub tau_values: Vec<f64>,
    pub horizon_values: Vec<f64>,
    /// Penalty orders: 1 for `φ = 0`, 2 and 3 for the Taylor penalties.
    pub orders: Vec<u32>,
    pub span: f64,
    pub opts: SolverOptions,
}

impl SweepSpec {
    pub fn reference_example() -> Self {
        Self {
            system: BilinearSystem::reference_example(),
            y0: DVector::from_vec(vec![1.0, 1.0]),
            tau_values: default_grid_values(),
            horizon_values: default_grid_values(),
            orders: vec![1, 2, 3],
            span: 5.0,
            opts: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ascending = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0) && v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&self.tau_values) || !ascending(&self.horizon_values) {
            return Err(Error::Config("tau and T values must be positive and strictly ascending".into()));
        }
        if self.orders.is_empty() || self.orders.iter().any(|k| PenaltyKind::from_order(*k).is_none()) {
            return Err(Error::Config("penalty orders must be among 1, 2, 3".into()));
        }
        if self.y0.len() != self.system.dim() {
            return Err(Error::Config("y0 does not match the state dimension".into()));
        }
        self.opts.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// `τ > T`.
    Absent,
    Value(f64),
    /// The cell's run failed; the message is not preserved by CSV.
    Failed(String),
    /// A derived value that does not exist (logarithm of a non-positive error).
    Undefined,
}

impl Cell {
    pub fn value(&self) -> Option<f64> {
        match self {
            Cell::Value(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Error,
    Rho,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: TableKind,
    pub order: u32,
    pub tau_values: Vec<f64>,
    pub horizon_values: Vec<f64>,
    /// `cells[i][j]` for `τ = tau_values[i]`, `T = horizon_values[j]`.
    pub cells: Vec<Vec<Cell>>,
    pub lambda: f64,
    pub reference_certificate: f64,
}

impl SweepTable {
    pub fn get(&self, tau: f64, horizon: f64) -> Option<&Cell> {
        let i = self.tau_values.iter().position(|t| (t - tau).abs() < 1e-9)?;
        let j = self.horizon_values.iter().position(|t| (t - horizon).abs() < 1e-9)?;
        Some(&self.cells[i][j])
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().flatten().filter(|c| matches!(c, Cell::Failed(_))).count()
    }

    pub fn present(&self) -> usize {
        self.cells.iter().flatten().filter(|c| !matches!(c, Cell::Absent)).count()
    }
}

pub struct SweepOutcome {
    pub tables: Vec<SweepTable>,
    pub reference: ReferenceSolution,
    pub lambda: f64,
}

/// Runs every `τ ≤ T` cell for every order against one reference control.
/// Failed cells are recorded in the table; the sweep itself fails only when
/// the reference cannot be computed.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepOutcome> {
    spec.validate()?;
    let sys = &spec.system;
    let ric = solve_are(sys)?;
    let reference_penalty = TerminalPenalty::taylor3(sys, &ric)?;
    let reference = reference_solution_with(sys, &reference_penalty, &spec.y0, spec.span, &spec.opts)?;

    let mut penalties = Vec::with_capacity(spec.orders.len());
    for &k in &spec.orders {
        let phi = match k {
            1 => TerminalPenalty::Zero,
            2 => TerminalPenalty::taylor2(&ric),
            _ => reference_penalty.clone(),
        };
        penalties.push(phi);
    }

    let mut tasks = Vec::new();
    for p in 0..penalties.len() {
        for (i, &tau) in spec.tau_values.iter().enumerate() {
            for (j, &horizon) in spec.horizon_values.iter().enumerate() {
                if tau <= horizon + 1e-9 {
                    tasks.push((p, i, j));
                }
            }
        }
    }

    let run_cell = |&(p, i, j): &(usize, usize, usize)| -> Cell {
        let mut cfg = RhcConfig::new(spec.tau_values[i], spec.horizon_values[j], penalties[p].clone());
        cfg.span = spec.span;
        cfg.opts = spec.opts.clone();
        let outcome = run_rhc(sys, &spec.y0, &cfg)
            .and_then(|res| compare_to_reference(sys, &res, &reference.solution, &reference.penalty));
        match outcome {
            Ok(cmp) => Cell::Value(cmp.control_error),
            Err(err) => {
                log::warn!("k={} tau={} T={}: {err}", spec.orders[p], spec.tau_values[i], spec.horizon_values[j]);
                Cell::Failed(err.to_string())
            }
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let values: Vec<Cell> = pool.install(|| tasks.par_iter().map(run_cell).collect());

    let mut tables: Vec<SweepTable> = spec
        .orders
        .iter()
        .map(|&order| SweepTable {
            kind: TableKind::Error,
            order,
            tau_values: spec.tau_values.clone(),
            horizon_values: spec.horizon_values.clone(),
            cells: vec![vec![Cell::Absent; spec.horizon_values.len()]; spec.tau_values.len()],
            lambda: ric.lambda,
            reference_certificate: reference.insensitivity,
        })
        .collect();
    for ((p, i, j), cell) in tasks.into_iter().zip(values) {
        tables[p].cells[i][j] = cell;
    }
    Ok(SweepOutcome { tables, reference, lambda: ric.lambda })
}

/// `ρ(τ, T) = ln e + (k + 1) λ T − λ τ` cellwise.
pub fn rho_table(table: &SweepTable, lambda: f64) -> SweepTable {
    let k = table.order as f64;
    let cells = table
        .cells
        .iter()
        .zip(&table.tau_values)
        .map(|(row, &tau)| {
            row.iter()
                .zip(&table.horizon_values)
                .map(|(cell, &horizon)| match cell {
                    Cell::Value(e) if *e > 0.0 => Cell::Value(e.ln() + (k + 1.0) * lambda * horizon - lambda * tau),
                    Cell::Value(_) => Cell::Undefined,
                    other => other.clone(),
                })
                .collect()
        })
        .collect();
    SweepTable { kind: TableKind::Rho, lambda, cells, ..table.clone() }
}

/// `max − min` over the values with `τ ≥ min_tau`; `None` without values.
pub fn rho_variation(table: &SweepTable, min_tau: f64) -> Option<f64> {
    let values: Vec<f64> = table
        .cells
        .iter()
        .zip(&table.tau_values)
        .filter(|(_, &tau)| tau >= min_tau - 1e-9)
        .flat_map(|(row, _)| row.iter().filter_map(Cell::value))
        .collect();
    let max = values.iter().copied().reduce(f64::max)?;
    let min = values.iter().copied().reduce(f64::min)?;
    Some(max - min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Along a row: should not increase with `T`.
    Horizon,
    /// Along a column: should not decrease with `τ`.
    Sampling,
    /// Across tables: should not increase with `k`.
    Order,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub direction: Direction,
    pub order: u32,
    pub tau: f64,
    pub horizon: f64,
    /// The compared cell: next `T`, next `τ`, or next order.
    pub next: f64,
    pub value: f64,
    pub next_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub comparisons: usize,
    pub violations: Vec<Violation>,
}

impl MonotonicityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares neighbouring cells; a pair where both values are `≤ floor` is not
/// a violation. Tables passed together are compared across orders when
/// their grids agree.
pub fn monotonicity_report(tables: &[SweepTable], floor: f64) -> MonotonicityReport {
    let mut report = MonotonicityReport::default();
    let mut compare = |direction, order, tau, horizon, next, a: &Cell, b: &Cell, ok: fn(f64, f64) -> bool| {
        if let (Some(x), Some(y)) = (a.value(), b.value()) {
            report.comparisons += 1;
            if !ok(x, y) && !(x <= floor && y <= floor) {
                report.violations.push(Violation { direction, order, tau, horizon, next, value: x, next_value: y });
            }
        }
    };
    let non_increasing: fn(f64, f64) -> bool = |x, y| y <= x;
    let non_decreasing: fn(f64, f64) -> bool = |x, y| y >= x;

    for t in tables {
        for (i, row) in t.cells.iter().enumerate() {
            for j in 0..row.len().saturating_sub(1) {
                let (tau, h0, h1) = (t.tau_values[i], t.horizon_values[j], t.horizon_values[j + 1]);
                compare(Direction::Horizon, t.order, tau, h0, h1, &row[j], &row[j + 1], non_increasing);
            }
        }
        for i in 0..t.cells.len().saturating_sub(1) {
            for j in 0..t.horizon_values.len() {
                let (tau, tau1, h) = (t.tau_values[i], t.tau_values[i + 1], t.horizon_values[j]);
                compare(Direction::Sampling, t.order, tau, h, tau1, &t.cells[i][j], &t.cells[i + 1][j], non_decreasing);
            }
        }
    }
    let mut ordered: Vec<&SweepTable> = tables.iter().collect();
    ordered.sort_by_key(|t| t.order);
    for pair in ordered.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.tau_values != b.tau_values || a.horizon_values != b.horizon_values {
            continue;
        }
        for (i, &tau) in a.tau_values.iter().enumerate() {
            for (j, &h) in a.horizon_values.iter().enumerate() {
                compare(Direction::Order, a.order, tau, h, b.order as f64, &a.cells[i][j], &b.cells[i][j], non_increasing);
            }
        }
    }
    report
}

const FAILED_MARKER: &str = "error";
const UNDEFINED_MARKER: &str = "undefined";
const CORNER: &str = "tau\\T";

/// Two significant digits with an explicit exponent sign: `4.3e+0`.
pub fn format_scientific(v: f64) -> String {
    let s = format!("{v:.1e}");
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let exp: i32 = exp.parse().unwrap_or(0);
            format!("{mantissa}e{exp:+}")
        }
        None => s,
    }
}

fn format_cell(kind: TableKind, cell: &Cell) -> String {
    match cell {
        Cell::Absent => String::new(),
        Cell::Failed(_) => FAILED_MARKER.into(),
        Cell::Undefined => UNDEFINED_MARKER.into(),
        Cell::Value(v) => match kind {
            TableKind::Error => format_scientific(*v),
            TableKind::Rho => format!("{v:.1}"),
        },
    }
}

fn format_axis(v: f64) -> String {
    format!("{v:.1}")
}

pub fn write_csv<W: Write>(table: &SweepTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![CORNER.to_string()];
    header.extend(table.horizon_values.iter().map(|&v| format_axis(v)));
    w.write_record(&header)?;
    for (row, &tau) in table.cells.iter().zip(&table.tau_values) {
        let mut record = vec![format_axis(tau)];
        record.extend(row.iter().map(|c| format_cell(table.kind, c)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(table: &SweepTable) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(table, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Reads a table written by [`write_csv`]; λ and the certificate are not
/// stored in the file and come back as NaN.
pub fn read_csv<R: Read>(input: R, kind: TableKind, order: u32) -> Result<SweepTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    let header = records.next().ok_or_else(|| Error::InvalidInput("empty table".into()))??;
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad {what} '{s}'")))
    };
    let horizon_values = header.iter().skip(1).map(|s| parse(s, "T value")).collect::<Result<Vec<_>>>()?;
    let mut tau_values = Vec::new();
    let mut cells = Vec::new();
    for record in records {
        let record = record?;
        if record.len() != horizon_values.len() + 1 {
            return Err(Error::InvalidInput("ragged table row".into()));
        }
        tau_values.push(parse(&record[0], "tau value")?);
        let row = record
            .iter()
            .skip(1)
            .map(|s| match s.trim() {
                "" => Ok(Cell::Absent),
                FAILED_MARKER => Ok(Cell::Failed(String::new())),
                UNDEFINED_MARKER => Ok(Cell::Undefined),
                v => parse(v, "cell").map(Cell::Value),
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
    }
    Ok(SweepTable { kind, order, tau_values, horizon_values, cells, lambda: f64::NAN, reference_certificate: f64::NAN })
}

pub fn markdown(table: &SweepTable) -> String {
    let mut s = String::new();
    let _ = write!(s, "| τ \\ T |");
    for &h in &table.horizon_values {
        let _ = write!(s, " {} |", format_axis(h));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(table.horizon_values.len()));
    s.push('\n');
    for (row, &tau) in table.cells.iter().zip(&table.tau_values) {
        let _ = write!(s, "| {} |", format_axis(tau));
        for c in row {
            let _ = write!(s, " {} |", format_cell(table.kind, c));
        }
        s.push('\n');
    }
    s
}
