//! Dense linear-algebra utilities: pseudoinverse, block-Hankel matrices,
//! numeric rank and persistent excitation.
//!
//! Signals are stored as matrices with one column per time sample, so an
//! `m`-dimensional signal of length `T` is an `m × T` matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative cutoff for singular values.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// Relative cutoff used for model identification in experiments. Data from
/// unstable plants spans many decades, and the informative singular values
/// sit far below `1e-12 · σ_max`.
pub const IDENTIFICATION_REL_TOL: f64 = f64::EPSILON;

/// Singular-value summary of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub numeric_rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Absolute cutoff `rel_tol · σ_max · max(rows, cols)`.
    pub tolerance_used: f64,
}

impl RankReport {
    fn from_singular_values(mut sv: Vec<f64>, rows: usize, cols: usize, rel_tol: f64) -> Self {
        sv.sort_by(|a, b| b.total_cmp(a));
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        let tolerance_used = rel_tol * sigma_max * rows.max(cols) as f64;
        let numeric_rank = sv.iter().filter(|&&s| s > tolerance_used).count();
        RankReport {
            numeric_rank,
            singular_values: sv,
            tolerance_used,
        }
    }

    fn empty() -> Self {
        RankReport {
            numeric_rank: 0,
            singular_values: Vec::new(),
            tolerance_used: 0.0,
        }
    }
}

/// Builds a matrix from row-major entries, rejecting non-finite values.
pub fn matrix_from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if entries.len() != rows * cols {
        return Err(Error::invalid(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            entries.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, entries);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

fn check_nonempty_finite(m: &Matrix) -> Result<()> {
    if m.is_empty() {
        return Err(Error::invalid("matrix is empty"));
    }
    ensure_finite(m, "matrix")
}

/// Moore-Penrose pseudoinverse by SVD with singular values at or below
/// `rel_tol · σ_max · max(rows, cols)` treated as zero.
pub fn pinv(j: &Matrix, rel_tol: f64) -> Result<Matrix> {
    pinv_with_report(j, rel_tol).map(|(p, _)| p)
}

/// [`pinv`] together with the rank report of `j` from the same decomposition.
pub fn pinv_with_report(j: &Matrix, rel_tol: f64) -> Result<(Matrix, RankReport)> {
    check_nonempty_finite(j)?;
    if !(rel_tol > 0.0) {
        return Err(Error::invalid("rel_tol must be positive"));
    }
    let (rows, cols) = j.shape();
    let scale_dim = rows.max(cols);

    Ok(svd_pinv(j, rel_tol, scale_dim))
}

/// Thin SVD `j = U diag(s) Vᵀ` computed by faer.
fn thin_svd(j: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let f = faer::Mat::<f64>::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)]);
    let svd = f.thin_svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let u = Matrix::from_fn(j.nrows(), k, |r, c| u[(r, c)]);
    let v = Matrix::from_fn(j.ncols(), k, |r, c| v[(r, c)]);
    let s = (0..k).map(|i| s[i]).collect();
    (u, s, v)
}

fn singular_values(j: &Matrix) -> Vec<f64> {
    let f = faer::Mat::<f64>::from_fn(j.nrows(), j.ncols(), |r, c| j[(r, c)]);
    f.singular_values().expect("SVD of a finite matrix converges")
}

fn svd_pinv(j: &Matrix, rel_tol: f64, scale_dim: usize) -> (Matrix, RankReport) {
    let (u, sv, v) = thin_svd(j);

    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max * scale_dim as f64;

    let mut out = Matrix::zeros(j.ncols(), j.nrows());
    for (k, &s) in sv.iter().enumerate() {
        if s > cutoff {
            out.ger(1.0 / s, &v.column(k), &u.column(k), 1.0);
        }
    }

    let mut sorted = sv;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let numeric_rank = sorted.iter().filter(|&&s| s > cutoff).count();
    (
        out,
        RankReport {
            numeric_rank,
            singular_values: sorted,
            tolerance_used: cutoff,
        },
    )
}

/// Rank from singular values with cutoff `rel_tol · σ_max · max(rows, cols)`.
pub fn numeric_rank(m: &Matrix, rel_tol: f64) -> Result<RankReport> {
    check_nonempty_finite(m)?;
    let (rows, cols) = m.shape();
    Ok(RankReport::from_singular_values(singular_values(m), rows, cols, rel_tol))
}

/// Block-Hankel matrix of depth `depth` for a signal stored as `m × T`.
///
/// Block `(i, j)` is the sample `u(i + j)`; column `k` is
/// `col(u(k), …, u(k + depth − 1))`.
pub fn hankel(signal: &Matrix, depth: usize) -> Result<Matrix> {
    let (m, t) = signal.shape();
    if depth == 0 {
        return Err(Error::invalid("Hankel depth must be at least 1"));
    }
    if m == 0 {
        return Err(Error::invalid("signal has zero dimension"));
    }
    if t < depth {
        return Err(Error::InsufficientData(format!(
            "signal length {t} is shorter than Hankel depth {depth}"
        )));
    }
    let cols = t - depth + 1;
    let mut h = Matrix::zeros(m * depth, cols);
    for i in 0..depth {
        h.view_mut((i * m, 0), (m, cols))
            .copy_from(&signal.columns(i, cols));
    }
    Ok(h)
}

/// Whether `signal` is persistently exciting of order `depth`, i.e. its
/// depth-`depth` Hankel matrix has full numeric row rank.
///
/// Short signals yield `false` with an empty report rather than an error.
pub fn is_persistently_exciting(signal: &Matrix, depth: usize, rel_tol: f64) -> (bool, RankReport) {
    let (m, t) = signal.shape();
    if depth == 0 || m == 0 || t < depth {
        return (false, RankReport::empty());
    }
    let h = match hankel(signal, depth) {
        Ok(h) => h,
        Err(_) => return (false, RankReport::empty()),
    };
    match numeric_rank(&h, rel_tol) {
        Ok(report) => (report.numeric_rank == m * depth, report),
        Err(_) => (false, RankReport::empty()),
    }
}

/// Stacks a list of equally sized vectors into an `m × T` signal matrix.
pub fn signal_from_samples(samples: &[Vector]) -> Result<Matrix> {
    let Some(first) = samples.first() else {
        return Err(Error::invalid("signal has no samples"));
    };
    let m = first.len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::invalid("signal samples have inconsistent dimensions"));
    }
    Ok(Matrix::from_fn(m, samples.len(), |i, t| samples[t][i]))
}

/// Kronecker product `I_n ⊗ block`.
pub(crate) fn block_diag_repeat(block: &Matrix, n: usize) -> Matrix {
    let (r, c) = block.shape();
    let mut out = Matrix::zeros(r * n, c * n);
    for k in 0..n {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}
