//! Condensing of the receding-horizon tracking problems into [`QpProblem`]s.
//!
//! The templates ([`TrackingQp`], [`DeepcQp`]) build `H` and `M` once; only
//! `f` and the bounds change from step to step, which keeps the solver's
//! cached factorization valid along a closed loop.

use super::QpProblem;
use crate::datadriven::Predictor;
use crate::error::{Error, Result};
use crate::numerics::{block_diag_repeat, ensure_finite, Matrix, Vector};

fn check_weights(q: &Matrix, r: &Matrix, p: usize, m: usize) -> Result<()> {
    if q.shape() != (p, p) {
        return Err(Error::invalid(format!("Q is {:?}, expected ({p}, {p})", q.shape())));
    }
    if r.shape() != (m, m) {
        return Err(Error::invalid(format!("R is {:?}, expected ({m}, {m})", r.shape())));
    }
    ensure_finite(q, "Q")?;
    ensure_finite(r, "R")?;
    Ok(())
}

fn check_bounds(bounds: Option<(f64, f64)>, what: &str) -> Result<()> {
    if let Some((lo, hi)) = bounds {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!("{what} bounds [{lo}, {hi}] are empty")));
        }
    }
    Ok(())
}

fn symmetrize(h: &mut Matrix) {
    let t = h.transpose();
    *h += t;
    *h *= 0.5;
}

/// Tracking problem over `ū = col(u(t), …, u(t+N−1))` with prediction
/// `ȳ = free + Γ ū`:
///
/// ```text
/// minimize ‖ȳ − r‖²_Q̄ + ‖ū‖²_R̄   s.t. ū ∈ 𝒰ᴺ, ȳ ∈ 𝒴ᴺ
/// ```
#[derive(Debug, Clone)]
pub struct TrackingQp {
    h: Matrix,
    m_rows: Matrix,
    /// `2 Γᵀ Q̄`.
    gq: Matrix,
    gamma: Matrix,
    input_bounds: Option<(f64, f64)>,
    output_bounds: Option<(f64, f64)>,
    p: usize,
    m: usize,
    horizon: usize,
}

impl TrackingQp {
    pub fn new(
        gamma: &Matrix,
        q: &Matrix,
        r: &Matrix,
        input_bounds: Option<(f64, f64)>,
        output_bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let (p, m) = (q.nrows(), r.nrows());
        if p == 0 || m == 0 || gamma.nrows() % p != 0 || gamma.ncols() % m != 0 {
            return Err(Error::invalid(format!(
                "Γ is {:?}, incompatible with p = {p}, m = {m}",
                gamma.shape()
            )));
        }
        let horizon = gamma.nrows() / p;
        if horizon == 0 || gamma.ncols() / m != horizon {
            return Err(Error::invalid(format!("Γ is {:?}, expected ({}, {})", gamma.shape(), p * horizon, m * horizon)));
        }
        check_weights(q, r, p, m)?;
        check_bounds(input_bounds, "input")?;
        check_bounds(output_bounds, "output")?;
        ensure_finite(gamma, "Γ")?;

        let qbar = block_diag_repeat(q, horizon);
        let rbar = block_diag_repeat(r, horizon);
        let gq = gamma.transpose() * &qbar * 2.0;
        let mut h = &gq * gamma + rbar * 2.0;
        symmetrize(&mut h);

        let d = m * horizon;
        let mut blocks: Vec<Matrix> = Vec::new();
        if input_bounds.is_some() {
            blocks.push(Matrix::identity(d, d));
        }
        if output_bounds.is_some() {
            blocks.push(gamma.clone());
        }
        let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut m_rows = Matrix::zeros(rows, d);
        let mut at = 0;
        for b in &blocks {
            m_rows.view_mut((at, 0), b.shape()).copy_from(b);
            at += b.nrows();
        }

        Ok(TrackingQp {
            h,
            m_rows,
            gq,
            gamma: gamma.clone(),
            input_bounds,
            output_bounds,
            p,
            m,
            horizon,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn hessian(&self) -> &Matrix {
        &self.h
    }

    /// Problem for the free response `free` (`pN`) and stacked reference `reference` (`pN`).
    pub fn problem(&self, free: &Vector, reference: &Vector) -> Result<QpProblem> {
        let py = self.p * self.horizon;
        if free.len() != py || reference.len() != py {
            return Err(Error::invalid(format!(
                "free response/reference have lengths {}/{}, expected {py}",
                free.len(),
                reference.len()
            )));
        }
        let f = &self.gq * (free - reference);
        let d = self.m * self.horizon;
        let mut l = Vec::with_capacity(self.m_rows.nrows());
        let mut u = Vec::with_capacity(self.m_rows.nrows());
        if let Some((lo, hi)) = self.input_bounds {
            l.extend(std::iter::repeat(lo).take(d));
            u.extend(std::iter::repeat(hi).take(d));
        }
        if let Some((lo, hi)) = self.output_bounds {
            l.extend(free.iter().map(|v| lo - v));
            u.extend(free.iter().map(|v| hi - v));
        }
        QpProblem::new(
            self.h.clone(),
            f,
            self.m_rows.clone(),
            Vector::from_vec(l),
            Vector::from_vec(u),
        )
    }

    /// Predicted outputs for a given input sequence.
    pub fn predicted_outputs(&self, free: &Vector, inputs: &Vector) -> Vector {
        free + &self.gamma * inputs
    }
}

/// One-shot condensing of a tracking problem with free response `free` and
/// forced-response matrix `gamma`.
pub fn condense_tracking(
    free: &Vector,
    gamma: &Matrix,
    reference: &Vector,
    q: &Matrix,
    r: &Matrix,
    input_bounds: Option<(f64, f64)>,
    output_bounds: Option<(f64, f64)>,
) -> Result<QpProblem> {
    TrackingQp::new(gamma, q, r, input_bounds, output_bounds)?.problem(free, reference)
}

/// D²PC problem at stacked state `chi_now`: free response `Φ χ̄(t)`,
/// forced response `Γ ū`.
pub fn condense_d2pc(
    predictor: &Predictor,
    chi_now: &Vector,
    reference: &Vector,
    q: &Matrix,
    r: &Matrix,
    input_bounds: Option<(f64, f64)>,
    output_bounds: Option<(f64, f64)>,
) -> Result<QpProblem> {
    if chi_now.len() != predictor.state_dim() {
        return Err(Error::invalid(format!(
            "χ̄ has length {}, expected {}",
            chi_now.len(),
            predictor.state_dim()
        )));
    }
    if q.nrows() != predictor.p() || r.nrows() != predictor.m() {
        return Err(Error::invalid("weight dimensions do not match the predictor"));
    }
    let free = predictor.phi() * chi_now;
    condense_tracking(&free, predictor.gamma(), reference, q, r, input_bounds, output_bounds)
}

/// Hankel blocks split into past (`T_ini` block rows) and future (`N` block rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DeepcBlocks {
    pub u_p: Matrix,
    pub y_p: Matrix,
    pub u_f: Matrix,
    pub y_f: Matrix,
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
}

impl DeepcBlocks {
    /// Splits depth-`(T_ini + N)` Hankel matrices of inputs (`hu`) and outputs (`hy`).
    pub fn from_hankels(hu: &Matrix, hy: &Matrix, t_ini: usize, horizon: usize) -> Result<Self> {
        let depth = t_ini + horizon;
        if t_ini == 0 || horizon == 0 {
            return Err(Error::invalid("T_ini and N must be at least 1"));
        }
        if hu.nrows() % depth != 0 || hy.nrows() % depth != 0 || hu.ncols() != hy.ncols() {
            return Err(Error::invalid(format!(
                "Hankel shapes {:?}/{:?} do not fit depth {depth}",
                hu.shape(),
                hy.shape()
            )));
        }
        if hu.ncols() == 0 {
            return Err(Error::invalid("Hankel matrices have no columns"));
        }
        let m = hu.nrows() / depth;
        let p = hy.nrows() / depth;
        Ok(DeepcBlocks {
            u_p: hu.rows(0, m * t_ini).into_owned(),
            u_f: hu.rows(m * t_ini, m * horizon).into_owned(),
            y_p: hy.rows(0, p * t_ini).into_owned(),
            y_f: hy.rows(p * t_ini, p * horizon).into_owned(),
            t_ini,
            horizon,
            m,
            p,
        })
    }

    pub fn columns(&self) -> usize {
        self.u_p.ncols()
    }

    fn validate(&self) -> Result<()> {
        let g = self.columns();
        let shapes = [
            (&self.u_p, self.m * self.t_ini, "U_p"),
            (&self.y_p, self.p * self.t_ini, "Y_p"),
            (&self.u_f, self.m * self.horizon, "U_f"),
            (&self.y_f, self.p * self.horizon, "Y_f"),
        ];
        for (mat, rows, name) in shapes {
            if mat.shape() != (rows, g) {
                return Err(Error::invalid(format!("{name} is {:?}, expected ({rows}, {g})", mat.shape())));
            }
            ensure_finite(mat, name)?;
        }
        if g == 0 || self.t_ini == 0 || self.horizon == 0 {
            return Err(Error::invalid("empty DeePC blocks"));
        }
        Ok(())
    }
}

/// Regularization weights turning DeePC into rDeePC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepcRegularization {
    pub lambda_g: f64,
    pub lambda_y: f64,
}

/// DeePC / rDeePC problem template. Decision variable `g` (unregularized)
/// or `(g, σ_y)` (regularized).
#[derive(Debug, Clone)]
pub struct DeepcQp {
    h: Matrix,
    m_rows: Matrix,
    /// `−2 Y_fᵀ Q̄`, padded with zero rows for `σ_y`.
    fr: Matrix,
    u_f: Matrix,
    t_ini: usize,
    m: usize,
    p: usize,
    horizon: usize,
    input_bounds: Option<(f64, f64)>,
    output_bounds: Option<(f64, f64)>,
}

impl DeepcQp {
    pub fn new(
        blocks: &DeepcBlocks,
        q: &Matrix,
        r: &Matrix,
        input_bounds: Option<(f64, f64)>,
        output_bounds: Option<(f64, f64)>,
        regularization: Option<DeepcRegularization>,
    ) -> Result<Self> {
        blocks.validate()?;
        let (m, p, n, ti) = (blocks.m, blocks.p, blocks.horizon, blocks.t_ini);
        check_weights(q, r, p, m)?;
        check_bounds(input_bounds, "input")?;
        check_bounds(output_bounds, "output")?;
        if let Some(reg) = regularization {
            if !(reg.lambda_g >= 0.0 && reg.lambda_y >= 0.0 && reg.lambda_g.is_finite() && reg.lambda_y.is_finite()) {
                return Err(Error::invalid("regularization weights must be finite and nonnegative"));
            }
        }
        let g = blocks.columns();
        let sig = if regularization.is_some() { p * ti } else { 0 };
        let d = g + sig;

        let qbar = block_diag_repeat(q, n);
        let rbar = block_diag_repeat(r, n);
        let yq = blocks.y_f.transpose() * &qbar;
        let mut h = Matrix::zeros(d, d);
        h.view_mut((0, 0), (g, g))
            .copy_from(&((&yq * &blocks.y_f + blocks.u_f.transpose() * &rbar * &blocks.u_f) * 2.0));
        if let Some(reg) = regularization {
            for i in 0..g {
                h[(i, i)] += 2.0 * reg.lambda_g;
            }
            for i in g..d {
                h[(i, i)] += 2.0 * reg.lambda_y;
            }
        }
        symmetrize(&mut h);

        let mut fr = Matrix::zeros(d, p * n);
        fr.view_mut((0, 0), (g, p * n)).copy_from(&(yq * -2.0));

        let mut rows = m * ti + p * ti;
        if input_bounds.is_some() {
            rows += m * n;
        }
        if output_bounds.is_some() {
            rows += p * n;
        }
        let mut m_rows = Matrix::zeros(rows, d);
        m_rows.view_mut((0, 0), (m * ti, g)).copy_from(&blocks.u_p);
        m_rows.view_mut((m * ti, 0), (p * ti, g)).copy_from(&blocks.y_p);
        if sig > 0 {
            for i in 0..sig {
                m_rows[(m * ti + i, g + i)] = -1.0;
            }
        }
        let mut at = m * ti + p * ti;
        if input_bounds.is_some() {
            m_rows.view_mut((at, 0), (m * n, g)).copy_from(&blocks.u_f);
            at += m * n;
        }
        if output_bounds.is_some() {
            m_rows.view_mut((at, 0), (p * n, g)).copy_from(&blocks.y_f);
        }

        Ok(DeepcQp {
            h,
            m_rows,
            fr,
            u_f: blocks.u_f.clone(),
            t_ini: ti,
            m,
            p,
            horizon: n,
            input_bounds,
            output_bounds,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn hessian(&self) -> &Matrix {
        &self.h
    }

    /// Problem for the initial trajectory `(u_ini, y_ini)` and stacked reference.
    pub fn problem(&self, u_ini: &Vector, y_ini: &Vector, reference: &Vector) -> Result<QpProblem> {
        if u_ini.len() != self.m * self.t_ini || y_ini.len() != self.p * self.t_ini {
            return Err(Error::invalid(format!(
                "initial trajectory has lengths {}/{}, expected {}/{}",
                u_ini.len(),
                y_ini.len(),
                self.m * self.t_ini,
                self.p * self.t_ini
            )));
        }
        if reference.len() != self.p * self.horizon {
            return Err(Error::invalid(format!(
                "reference has length {}, expected {}",
                reference.len(),
                self.p * self.horizon
            )));
        }
        let f = &self.fr * reference;
        let rows = self.m_rows.nrows();
        let mut l = Vector::zeros(rows);
        let mut u = Vector::zeros(rows);
        let mut at = 0;
        for v in u_ini.iter().chain(y_ini.iter()) {
            l[at] = *v;
            u[at] = *v;
            at += 1;
        }
        for (bounds, count) in [
            (self.input_bounds, self.m * self.horizon),
            (self.output_bounds, self.p * self.horizon),
        ] {
            if let Some((lo, hi)) = bounds {
                for _ in 0..count {
                    l[at] = lo;
                    u[at] = hi;
                    at += 1;
                }
            }
        }
        QpProblem::new(self.h.clone(), f, self.m_rows.clone(), l, u)
    }

    /// `ū = U_f g` for a decision vector `z = g` or `(g, σ_y)`.
    pub fn inputs_from(&self, z: &Vector) -> Vector {
        let g = self.u_f.ncols();
        &self.u_f * z.rows(0, g)
    }
}

/// One-shot condensing of a DeePC (or rDeePC when `regularization` is set) problem.
#[allow(clippy::too_many_arguments)]
pub fn condense_deepc(
    blocks: &DeepcBlocks,
    u_ini: &Vector,
    y_ini: &Vector,
    reference: &Vector,
    q: &Matrix,
    r: &Matrix,
    input_bounds: Option<(f64, f64)>,
    output_bounds: Option<(f64, f64)>,
    regularization: Option<DeepcRegularization>,
) -> Result<QpProblem> {
    DeepcQp::new(blocks, q, r, input_bounds, output_bounds, regularization)?.problem(u_ini, y_ini, reference)
}
