//! Dense convex QP solver of the operator-splitting (ADMM) family:
//!
//! ```text
//! minimize   ½ zᵀ H z + fᵀ z
//! subject to l ≤ M z ≤ u
//! ```
//!
//! Equality constraints are rows with `l = u`. The iteration follows the
//! OSQP scheme: Ruiz equilibration, a cached Cholesky factor of
//! `H + σI + Mᵀ diag(ρ) M`, over-relaxation, adaptive `ρ`, and a final
//! polishing solve on the guessed active set.

mod admm;
pub mod condense;

use std::io::Write;

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ensure_finite_vec, Matrix, Vector};

pub use admm::QpSolver;
pub use condense::{
    condense_d2pc, condense_deepc, condense_tracking, DeepcBlocks, DeepcQp, DeepcRegularization,
    TrackingQp,
};

/// Quadratic program in condensed form.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    pub f: Vector,
    pub m: Matrix,
    pub l: Vector,
    pub u: Vector,
}

impl QpProblem {
    pub fn new(h: Matrix, f: Vector, m: Matrix, l: Vector, u: Vector) -> Result<Self> {
        let d = f.len();
        if h.shape() != (d, d) {
            return Err(Error::invalid(format!("H is {:?}, expected ({d}, {d})", h.shape())));
        }
        let c = m.nrows();
        if m.ncols() != d && c > 0 {
            return Err(Error::invalid(format!("M has {} columns, expected {d}", m.ncols())));
        }
        if l.len() != c || u.len() != c {
            return Err(Error::invalid(format!(
                "bounds have lengths {}/{}, expected {c}",
                l.len(),
                u.len()
            )));
        }
        ensure_finite(&h, "H")?;
        ensure_finite_vec(&f, "f")?;
        ensure_finite(&m, "M")?;
        let scale = 1.0 + h.amax();
        if (&h - h.transpose()).amax() > 1e-10 * scale {
            return Err(Error::invalid("H is not symmetric"));
        }
        for i in 0..c {
            if l[i].is_nan() || u[i].is_nan() || l[i] == f64::INFINITY || u[i] == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("invalid bounds on row {i}")));
            }
            if l[i] > u[i] {
                return Err(Error::invalid(format!("row {i} has l > u ({} > {})", l[i], u[i])));
            }
        }
        let m = if c == 0 { Matrix::zeros(0, d) } else { m };
        Ok(QpProblem { h, f, m, l, u })
    }

    pub fn unconstrained(h: Matrix, f: Vector) -> Result<Self> {
        let d = f.len();
        QpProblem::new(h, f, Matrix::zeros(0, d), Vector::zeros(0), Vector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.m.nrows()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    /// Largest bound violation `max(l − Mz, Mz − u, 0)`.
    pub fn max_violation(&self, z: &Vector) -> f64 {
        let mz = &self.m * z;
        (0..mz.len())
            .map(|i| (self.l[i] - mz[i]).max(mz[i] - self.u[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Plain-text dump: dimensions, then `H`, `f`, `M`, `l`, `u`, one row per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# qp: minimize 1/2 z'Hz + f'z s.t. l <= Mz <= u")?;
        writeln!(w, "vars,{}", self.num_vars())?;
        writeln!(w, "constraints,{}", self.num_constraints())?;
        let row = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "H")?;
        for r in 0..self.h.nrows() {
            writeln!(w, "{}", row(&mut self.h.row(r).iter().copied()))?;
        }
        writeln!(w, "f")?;
        writeln!(w, "{}", row(&mut self.f.iter().copied()))?;
        writeln!(w, "M")?;
        for r in 0..self.m.nrows() {
            writeln!(w, "{}", row(&mut self.m.row(r).iter().copied()))?;
        }
        writeln!(w, "l")?;
        writeln!(w, "{}", row(&mut self.l.iter().copied()))?;
        writeln!(w, "u")?;
        writeln!(w, "{}", row(&mut self.u.iter().copied()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Failure,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIter => "max_iter",
            QpStatus::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vector,
    /// Constraint multipliers: positive on active upper bounds, negative on
    /// active lower bounds.
    pub lambda: Vector,
    pub iterations: usize,
    /// `‖Mz − w‖_∞` for the splitting variable `w ∈ [l, u]`; equals
    /// `‖Mz − Π_[l,u](Mz)‖_∞` for polished solutions.
    pub primal_residual: f64,
    /// `‖Hz + f + Mᵀλ‖_∞`.
    pub dual_residual: f64,
    /// Thresholds the residuals were tested against.
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub polished: bool,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Absolute part of both termination thresholds.
    pub eps_abs: f64,
    /// Relative part, scaled by the magnitude of the terms in each residual.
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Rescale `ρ` when the normalized primal/dual residual ratio leaves
    /// `[1/x, x]`.
    pub adaptive_rho_ratio: f64,
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Consecutive residual increases treated as divergence.
    pub divergence_window: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 10_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_ratio: 10.0,
            adaptive_rho_interval: 25,
            scaling_iters: 10,
            polish: true,
            divergence_window: 100,
        }
    }
}

/// Initial iterate for [`QpSolver::solve_warm`].
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: Vector,
    pub lambda: Option<Vector>,
}

/// Solves `prob` with a fresh solver.
pub fn solve(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    QpSolver::new(*settings).solve(prob)
}
