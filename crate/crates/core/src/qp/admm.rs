use nalgebra::{Cholesky, Dyn, LU};

use super::{QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const POLISH_DELTA: f64 = 1e-7;
const POLISH_REFINE_ITERS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

fn row_kinds(l: &Vector, u: &Vector) -> Vec<RowKind> {
    l.iter()
        .zip(u.iter())
        .map(|(&lo, &hi)| {
            if lo == hi {
                RowKind::Equality
            } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                RowKind::Free
            } else {
                RowKind::Inequality
            }
        })
        .collect()
}

fn clip_norm(x: f64) -> f64 {
    if x < 1e-4 {
        1.0
    } else {
        x.min(1e4)
    }
}

/// Ruiz equilibration: `H̄ = c·D H D`, `M̄ = E M D`.
struct Scaling {
    d: Vector,
    e: Vector,
    cost: f64,
}

fn equilibrate(h: &Matrix, m: &Matrix, iters: usize) -> (Matrix, Matrix, Scaling) {
    let n = h.nrows();
    let c = m.nrows();
    let mut hs = h.clone();
    let mut ms = m.clone();
    let mut d = Vector::from_element(n, 1.0);
    let mut e = Vector::from_element(c, 1.0);
    let mut cost = 1.0;
    for _ in 0..iters {
        let dd = Vector::from_fn(n, |j, _| {
            let hn = hs.column(j).amax();
            let mn = if c > 0 { ms.column(j).amax() } else { 0.0 };
            1.0 / clip_norm(hn.max(mn)).sqrt()
        });
        let de = Vector::from_fn(c, |i, _| 1.0 / clip_norm(ms.row(i).amax()).sqrt());
        for j in 0..n {
            for i in 0..n {
                hs[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..c {
                ms[(i, j)] *= de[i] * dd[j];
            }
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);

        let mean_col = if n > 0 {
            (0..n).map(|j| hs.column(j).amax()).sum::<f64>() / n as f64
        } else {
            1.0
        };
        let gamma = 1.0 / clip_norm(mean_col);
        hs *= gamma;
        cost *= gamma;
    }
    (hs, ms, Scaling { d, e, cost })
}

/// Scaled data and factorizations reused while `H`, `M` and the row kinds
/// stay the same between calls.
struct Workspace {
    h_raw: Matrix,
    m_raw: Matrix,
    kinds: Vec<RowKind>,
    h: Matrix,
    m: Matrix,
    scaling: Scaling,
    rho: f64,
    rho_vec: Vector,
    chol: Option<Cholesky<f64, Dyn>>,
    /// Regularized KKT factor for problems without inequality rows.
    direct: Option<LU<f64, Dyn, Dyn>>,
}

impl Workspace {
    fn matches(&self, prob: &QpProblem, kinds: &[RowKind]) -> bool {
        self.kinds == kinds && self.h_raw == prob.h && self.m_raw == prob.m
    }

    fn rho_vector(kinds: &[RowKind], rho: f64) -> Vector {
        Vector::from_iterator(
            kinds.len(),
            kinds.iter().map(|k| match k {
                RowKind::Equality => (rho * RHO_EQ_FACTOR).min(RHO_MAX),
                RowKind::Inequality => rho,
                RowKind::Free => RHO_MIN,
            }),
        )
    }

    fn factor(&mut self, sigma: f64) -> bool {
        let n = self.h.nrows();
        let mut k = &self.h + Matrix::identity(n, n) * sigma;
        if self.m.nrows() > 0 {
            let mut rm = self.m.clone();
            for (i, mut row) in rm.row_iter_mut().enumerate() {
                row *= self.rho_vec[i];
            }
            k += self.m.transpose() * rm;
        }
        self.chol = Cholesky::new(k);
        self.chol.is_some()
    }

    fn set_rho(&mut self, rho: f64, sigma: f64) -> bool {
        self.rho = rho;
        self.rho_vec = Workspace::rho_vector(&self.kinds, rho);
        self.factor(sigma)
    }
}

/// Stateful solver. Factorizations are cached across calls with the same
/// `H` and `M`, which is the common case in receding-horizon control where
/// only `f` and the bounds change between steps.
pub struct QpSolver {
    settings: QpSettings,
    ws: Option<Workspace>,
}

struct Iterate {
    x: Vector,
    z: Vector,
    y: Vector,
}

struct Residuals {
    primal: f64,
    dual: f64,
    eps_primal: f64,
    eps_dual: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        QpSolver { settings, ws: None }
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn solve(&mut self, prob: &QpProblem) -> Result<QpSolution> {
        self.solve_warm(prob, None)
    }

    pub fn solve_warm(&mut self, prob: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution> {
        let n = prob.num_vars();
        if let Some(w) = warm {
            if w.z.len() != n || w.lambda.as_ref().is_some_and(|l| l.len() != prob.num_constraints()) {
                return Err(Error::invalid("warm start has wrong dimensions"));
            }
        }
        let kinds = row_kinds(&prob.l, &prob.u);
        if !self.ws.as_ref().is_some_and(|ws| ws.matches(prob, &kinds)) {
            self.ws = Some(self.setup(prob, kinds)?);
        }
        let settings = self.settings;
        let ws = self.ws.as_mut().expect("workspace initialized");

        if ws.kinds.iter().all(|k| *k != RowKind::Inequality) {
            if let Some(sol) = direct_solve(ws, prob, &settings)? {
                return Ok(sol);
            }
        }
        Ok(run_admm(ws, prob, warm, &settings))
    }

    fn setup(&self, prob: &QpProblem, kinds: Vec<RowKind>) -> Result<Workspace> {
        let n = prob.num_vars();
        let delta = 1e-9 * (1.0 + prob.h.diagonal().amax());
        if n > 0 && Cholesky::new(&prob.h + Matrix::identity(n, n) * delta).is_none() {
            return Err(Error::invalid("H is not positive semidefinite"));
        }
        let (h, m, scaling) = equilibrate(&prob.h, &prob.m, self.settings.scaling_iters);
        let rho = self.settings.rho;
        let mut ws = Workspace {
            h_raw: prob.h.clone(),
            m_raw: prob.m.clone(),
            rho_vec: Workspace::rho_vector(&kinds, rho),
            kinds,
            h,
            m,
            scaling,
            rho,
            chol: None,
            direct: None,
        };
        ws.factor(self.settings.sigma);
        Ok(ws)
    }
}

fn project(v: &Vector, l: &Vector, u: &Vector) -> Vector {
    Vector::from_fn(v.len(), |i, _| v[i].clamp(l[i], u[i]))
}

fn amax(v: &Vector) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Residuals of an unscaled candidate `(x, z, y)` against the raw problem.
fn raw_residuals(prob: &QpProblem, x: &Vector, z: &Vector, y: &Vector, s: &QpSettings) -> Residuals {
    let mx = &prob.m * x;
    let hx = &prob.h * x;
    let mty = prob.m.transpose() * y;
    let primal = amax(&(&mx - z));
    let dual = amax(&(&hx + &prob.f + &mty));
    Residuals {
        primal,
        dual,
        eps_primal: s.eps_abs + s.eps_rel * amax(&mx).max(amax(z)),
        eps_dual: s.eps_abs + s.eps_rel * amax(&hx).max(amax(&mty)).max(amax(&prob.f)),
    }
}

fn unscale(ws: &Workspace, it: &Iterate) -> Iterate {
    let sc = &ws.scaling;
    Iterate {
        x: it.x.component_mul(&sc.d),
        z: it.z.component_div(&sc.e),
        y: it.y.component_mul(&sc.e) / sc.cost,
    }
}

fn run_admm(ws: &mut Workspace, prob: &QpProblem, warm: Option<&WarmStart>, s: &QpSettings) -> QpSolution {
    let n = prob.num_vars();
    let c = prob.num_constraints();
    let sc_d = ws.scaling.d.clone();
    let sc_e = ws.scaling.e.clone();
    let cost = ws.scaling.cost;
    let f = prob.f.component_mul(&sc_d) * cost;
    let l = prob.l.component_mul(&sc_e);
    let u = prob.u.component_mul(&sc_e);

    let mut it = match warm {
        Some(w) => {
            let x = w.z.component_div(&sc_d);
            let z = project(&(&ws.m * &x), &l, &u);
            let y = match &w.lambda {
                Some(lam) => lam.component_div(&sc_e) * cost,
                None => Vector::zeros(c),
            };
            Iterate { x, z, y }
        }
        None => Iterate {
            x: Vector::zeros(n),
            z: Vector::zeros(c).zip_map(&l, |_, lo| lo.max(0.0)).zip_map(&u, |v, hi| v.min(hi)),
            y: Vector::zeros(c),
        },
    };

    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut last_score = f64::INFINITY;
    let mut growth = 0usize;

    if ws.chol.is_none() {
        status = QpStatus::Failure;
    } else {
        for k in 1..=s.max_iter {
            iterations = k;
            let chol = ws.chol.as_ref().expect("factor present");
            let mut rhs = &it.x * s.sigma - &f;
            if c > 0 {
                let w = it.z.component_mul(&ws.rho_vec) - &it.y;
                rhs += ws.m.transpose() * w;
            }
            let x_tilde = chol.solve(&rhs);
            let z_tilde = &ws.m * &x_tilde;
            let x_new = &x_tilde * s.alpha + &it.x * (1.0 - s.alpha);
            let z_hat = &z_tilde * s.alpha + &it.z * (1.0 - s.alpha);
            let z_new = project(&(&z_hat + it.y.component_div(&ws.rho_vec)), &l, &u);
            it.y += (&z_hat - &z_new).component_mul(&ws.rho_vec);
            it.x = x_new;
            it.z = z_new;

            if !(it.x.iter().chain(it.y.iter()).all(|v| v.is_finite())) {
                status = QpStatus::Failure;
                break;
            }

            let raw = unscale(ws, &it);
            let res = raw_residuals(prob, &raw.x, &raw.z, &raw.y, s);
            if res.converged() {
                status = QpStatus::Solved;
                break;
            }

            let score = (res.primal / res.eps_primal).max(res.dual / res.eps_dual);
            if score > last_score {
                growth += 1;
                if growth >= s.divergence_window {
                    status = QpStatus::Failure;
                    break;
                }
            } else {
                growth = 0;
            }
            last_score = score;

            if s.adaptive_rho && c > 0 && k % s.adaptive_rho_interval == 0 {
                let mx = &ws.m * &it.x;
                let hx = &ws.h * &it.x;
                let mty = ws.m.transpose() * &it.y;
                let prim_n = amax(&(&mx - &it.z)) / amax(&mx).max(amax(&it.z)).max(1e-30);
                let dual_n = amax(&(&hx + &f + &mty)) / amax(&hx).max(amax(&mty)).max(amax(&f)).max(1e-30);
                if dual_n > 0.0 && prim_n > 0.0 {
                    let ratio = prim_n / dual_n;
                    if ratio > s.adaptive_rho_ratio || ratio < 1.0 / s.adaptive_rho_ratio {
                        let new_rho = (ws.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
                        if new_rho != ws.rho && !ws.set_rho(new_rho, s.sigma) {
                            status = QpStatus::Failure;
                            break;
                        }
                    }
                }
            }
        }
    }

    let raw = unscale(ws, &it);
    let res = raw_residuals(prob, &raw.x, &raw.z, &raw.y, s);
    let mut sol = QpSolution {
        status,
        z: raw.x,
        lambda: raw.y,
        iterations,
        primal_residual: res.primal,
        dual_residual: res.dual,
        primal_tolerance: res.eps_primal,
        dual_tolerance: res.eps_dual,
        polished: false,
    };

    if s.polish && status != QpStatus::Failure && sol.z.iter().all(|v| v.is_finite()) {
        if let Some(polished) = polish(ws, prob, &it, &f, &l, &u, s) {
            sol = QpSolution {
                iterations,
                ..polished
            };
        }
    }
    sol
}

/// Solves the regularized KKT system of the guessed active set and accepts
/// the result when it meets the termination thresholds with consistent
/// multiplier signs.
fn polish(
    ws: &Workspace,
    prob: &QpProblem,
    it: &Iterate,
    f: &Vector,
    l: &Vector,
    u: &Vector,
    s: &QpSettings,
) -> Option<QpSolution> {
    let c = prob.num_constraints();
    // (row, bound, is_lower)
    let mut active: Vec<(usize, f64, bool)> = Vec::new();
    for i in 0..c {
        match ws.kinds[i] {
            RowKind::Equality => active.push((i, l[i], true)),
            RowKind::Free => {}
            RowKind::Inequality => {
                if it.z[i] - l[i] < -it.y[i] {
                    active.push((i, l[i], true));
                } else if u[i] - it.z[i] < it.y[i] {
                    active.push((i, u[i], false));
                }
            }
        }
    }
    let rows: Vec<usize> = active.iter().map(|a| a.0).collect();
    let b = Vector::from_iterator(active.len(), active.iter().map(|a| a.1));
    let (x, y_red) = kkt_solve(&ws.h, &ws.m, &rows, f, &b, None)?;

    let mut y = Vector::zeros(c);
    for (k, &(i, _, _)) in active.iter().enumerate() {
        y[i] = y_red[k];
    }
    let scaled = Iterate {
        z: project(&(&ws.m * &x), l, u),
        x,
        y,
    };
    let raw = unscale(ws, &scaled);
    let res = raw_residuals(prob, &raw.x, &raw.z, &raw.y, s);
    let signs_ok = active.iter().all(|&(i, _, lower)| {
        ws.kinds[i] == RowKind::Equality
            || if lower {
                raw.y[i] <= res.eps_dual
            } else {
                raw.y[i] >= -res.eps_dual
            }
    });
    if !(res.converged() && signs_ok) {
        return None;
    }
    Some(QpSolution {
        status: QpStatus::Solved,
        z: raw.x,
        lambda: raw.y,
        iterations: 0,
        primal_residual: res.primal,
        dual_residual: res.dual,
        primal_tolerance: res.eps_primal,
        dual_tolerance: res.eps_dual,
        polished: true,
    })
}

/// Solves `[H A'; A 0] [x; y] = [−f; b]` for the rows `rows` of `M` through
/// the quasi-definite regularization `[H+δI A'; A −δI]` plus iterative
/// refinement.
fn kkt_solve(
    h: &Matrix,
    m: &Matrix,
    rows: &[usize],
    f: &Vector,
    b: &Vector,
    factor: Option<&LU<f64, Dyn, Dyn>>,
) -> Option<(Vector, Vector)> {
    let n = h.nrows();
    let k = rows.len();
    let owned;
    let lu = match factor {
        Some(lu) => lu,
        None => {
            owned = regularized_kkt(h, m, rows).lu();
            &owned
        }
    };
    let mut a = Matrix::zeros(k, n);
    for (r, &i) in rows.iter().enumerate() {
        a.row_mut(r).copy_from(&m.row(i));
    }
    let mut rhs = Vector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-f));
    rhs.rows_mut(n, k).copy_from(b);

    let mut sol = lu.solve(&rhs)?;
    for _ in 0..POLISH_REFINE_ITERS {
        let x = sol.rows(0, n);
        let y = sol.rows(n, k);
        let mut kx = Vector::zeros(n + k);
        kx.rows_mut(0, n).copy_from(&(h * x + a.transpose() * y));
        kx.rows_mut(n, k).copy_from(&(&a * x));
        let r = &rhs - kx;
        if r.iter().all(|v| v.abs() <= 1e-14 * (1.0 + rhs.amax())) {
            break;
        }
        sol += lu.solve(&r)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn regularized_kkt(h: &Matrix, m: &Matrix, rows: &[usize]) -> Matrix {
    let n = h.nrows();
    let k = rows.len();
    let mut kkt = Matrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..n {
        kkt[(i, i)] += POLISH_DELTA;
    }
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = m[(i, j)];
            kkt[(j, n + r)] = m[(i, j)];
        }
        kkt[(n + r, n + r)] = -POLISH_DELTA;
    }
    kkt
}

/// Problems with only equality (or free) rows are solved in one KKT solve.
/// Returns `None` when the direct solution does not meet the thresholds,
/// in which case the caller falls back to ADMM.
fn direct_solve(ws: &mut Workspace, prob: &QpProblem, s: &QpSettings) -> Result<Option<QpSolution>> {
    let cost = ws.scaling.cost;
    let f = prob.f.component_mul(&ws.scaling.d) * cost;
    let l = prob.l.component_mul(&ws.scaling.e);
    let rows: Vec<usize> = (0..prob.num_constraints())
        .filter(|&i| ws.kinds[i] == RowKind::Equality)
        .collect();
    if ws.direct.is_none() {
        ws.direct = Some(regularized_kkt(&ws.h, &ws.m, &rows).lu());
    }
    let b = Vector::from_iterator(rows.len(), rows.iter().map(|&i| l[i]));
    let Some((x, y_red)) = kkt_solve(&ws.h, &ws.m, &rows, &f, &b, ws.direct.as_ref()) else {
        return Ok(None);
    };
    let mut y = Vector::zeros(prob.num_constraints());
    for (k, &i) in rows.iter().enumerate() {
        y[i] = y_red[k];
    }
    let u = prob.u.component_mul(&ws.scaling.e);
    let scaled = Iterate {
        z: project(&(&ws.m * &x), &l, &u),
        x,
        y,
    };
    let raw = unscale(ws, &scaled);
    let res = raw_residuals(prob, &raw.x, &raw.z, &raw.y, s);
    if !res.converged() {
        return Ok(None);
    }
    Ok(Some(QpSolution {
        status: QpStatus::Solved,
        z: raw.x,
        lambda: raw.y,
        iterations: 0,
        primal_residual: res.primal,
        dual_residual: res.dual,
        primal_tolerance: res.eps_primal,
        dual_tolerance: res.eps_dual,
        polished: true,
    }))
}
