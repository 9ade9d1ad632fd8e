//! Receding-horizon controllers behind one step contract, and the closed
//! loop that drives them against a ground-truth plant.
//!
//! Every controller computes `u(t)` from measurements up to `t − 1`; the
//! measured `y(t)` is handed back through [`Controller::observe`] after the
//! input has been applied.

use std::collections::VecDeque;
use std::io::Write;

use crate::datadriven::{build_predictor, DataDrivenModel, Predictor};
use crate::error::{Error, Result};
use crate::numerics::{hankel, Matrix, Vector};
use crate::plant::{Benchmark, EpisodeData, LtiSystem, NoiseSpec, ReferenceSignal};
use crate::qp::{DeepcBlocks, DeepcQp, DeepcRegularization, QpProblem, QpSettings, QpSolver, QpStatus, TrackingQp, WarmStart};

/// Settings shared by all controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    pub input_bounds: Option<(f64, f64)>,
    pub output_bounds: Option<(f64, f64)>,
    pub solver: QpSettings,
}

impl ControllerConfig {
    pub fn new(
        horizon: usize,
        q: Matrix,
        r: Matrix,
        input_bounds: Option<(f64, f64)>,
        output_bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        let cfg = ControllerConfig {
            horizon,
            q,
            r,
            input_bounds,
            output_bounds,
            solver: QpSettings::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_benchmark(bench: &Benchmark) -> Self {
        let d = &bench.defaults;
        ControllerConfig {
            horizon: d.horizon,
            q: d.q.clone(),
            r: d.r.clone(),
            input_bounds: d.input_bounds,
            output_bounds: d.output_bounds,
            solver: QpSettings::default(),
        }
    }

    pub fn p(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !self.q.is_square() || !self.r.is_square() || self.q.nrows() == 0 || self.r.nrows() == 0 {
            return Err(Error::Config("Q and R must be nonempty square matrices".into()));
        }
        let m = self.r.nrows();
        if self.q.clone().symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        if self.r.clone().cholesky().is_none() || (&self.r - self.r.transpose()).amax() > 1e-12 || m == 0 {
            return Err(Error::Config("R must be symmetric positive definite".into()));
        }
        for (b, what) in [(self.input_bounds, "input"), (self.output_bounds, "output")] {
            if let Some((lo, hi)) = b {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(Error::Config(format!("{what} bounds [{lo}, {hi}] are empty")));
                }
            }
        }
        Ok(())
    }

    fn clamp_input(&self, u: &Vector) -> Vector {
        match self.input_bounds {
            Some((lo, hi)) => u.map(|v| v.clamp(lo, hi)),
            None => u.clone(),
        }
    }
}

/// Rolling input/output history, zero-padded before `t = 0` (plant at rest).
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    inputs: VecDeque<Vector>,
    outputs: VecDeque<Vector>,
    depth: usize,
    steps: usize,
    pub failed: bool,
}

impl ControllerState {
    pub fn new(depth: usize, m: usize, p: usize) -> Self {
        ControllerState {
            inputs: (0..depth).map(|_| Vector::zeros(m)).collect(),
            outputs: (0..depth).map(|_| Vector::zeros(p)).collect(),
            depth,
            steps: 0,
            failed: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of real samples pushed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn push(&mut self, u: &Vector, y: &Vector) {
        if self.depth == 0 {
            self.steps += 1;
            return;
        }
        self.inputs.pop_front();
        self.outputs.pop_front();
        self.inputs.push_back(u.clone());
        self.outputs.push_back(y.clone());
        self.steps += 1;
    }

    /// Last `k ≤ depth` inputs as an `m × k` matrix, oldest first.
    pub fn recent_inputs(&self, k: usize) -> Matrix {
        recent(&self.inputs, k)
    }

    /// Last `k ≤ depth` outputs as a `p × k` matrix, oldest first.
    pub fn recent_outputs(&self, k: usize) -> Matrix {
        recent(&self.outputs, k)
    }
}

fn recent(buf: &VecDeque<Vector>, k: usize) -> Matrix {
    assert!(k <= buf.len(), "history window {k} exceeds depth {}", buf.len());
    let rows = buf.front().map_or(0, |v| v.len());
    let start = buf.len() - k;
    Matrix::from_fn(rows, k, |i, j| buf[start + j][i])
}

/// Failed step returned when the measured history is no longer finite.
fn diverged(m: usize) -> StepResult {
    StepResult {
        input: Vector::zeros(m),
        status: QpStatus::Failure,
        iterations: 0,
    }
}

fn stack_columns(mat: &Matrix) -> Vector {
    Vector::from_column_slice(mat.as_slice())
}

/// Outcome of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Input to apply, clipped to the input bounds.
    pub input: Vector,
    pub status: QpStatus,
    pub iterations: usize,
}

pub trait Controller {
    fn name(&self) -> &'static str;

    fn m(&self) -> usize;

    fn p(&self) -> usize;

    /// Computes `u(t)`. `x_true` is the plant state and is read only by the
    /// model-based oracle.
    fn compute(&mut self, t: usize, x_true: &Vector, reference: &ReferenceSignal) -> Result<StepResult>;

    /// Records the applied `u(t)` and the measured `y(t)`.
    fn observe(&mut self, u: &Vector, y: &Vector);

    /// The QP that [`Controller::compute`] would solve at `t`, or `None`
    /// when the history is no longer finite.
    fn current_problem(&self, t: usize, x_true: &Vector, reference: &ReferenceSignal) -> Result<Option<QpProblem>>;
}

fn check_reference(reference: &ReferenceSignal, p: usize) -> Result<()> {
    if reference.dim() != p {
        return Err(Error::invalid(format!("reference has dimension {}, expected {p}", reference.dim())));
    }
    Ok(())
}

/// Model-based MPC with the true `(A, B, C)` and the true state.
pub struct MpcOracle {
    config: ControllerConfig,
    system: LtiSystem,
    /// `col(C, CA, …, CA^{N−1})`.
    phi: Matrix,
    qp: TrackingQp,
    solver: QpSolver,
}

impl MpcOracle {
    pub fn new(system: LtiSystem, config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        let (n, m, p, hz) = (system.n(), system.m(), system.p(), config.horizon);
        if config.m() != m || config.p() != p {
            return Err(Error::Config("weights do not match the plant dimensions".into()));
        }
        let mut phi = Matrix::zeros(p * hz, n);
        let mut markov: Vec<Matrix> = Vec::with_capacity(hz);
        let mut ca = system.c().clone();
        for j in 0..hz {
            phi.view_mut((j * p, 0), (p, n)).copy_from(&ca);
            markov.push(&ca * system.b());
            ca = &ca * system.a();
        }
        // y(t+j) = C A^j x(t) + Σ_{k<j} C A^{j−k−1} B u(t+k).
        let mut gamma = Matrix::zeros(p * hz, m * hz);
        for j in 1..hz {
            for k in 0..j {
                gamma.view_mut((j * p, k * m), (p, m)).copy_from(&markov[j - k - 1]);
            }
        }
        let qp = TrackingQp::new(&gamma, &config.q, &config.r, config.input_bounds, config.output_bounds)?;
        Ok(MpcOracle {
            solver: QpSolver::new(config.solver),
            config,
            system,
            phi,
            qp,
        })
    }
}

impl Controller for MpcOracle {
    fn name(&self) -> &'static str {
        "mpc"
    }

    fn m(&self) -> usize {
        self.system.m()
    }

    fn p(&self) -> usize {
        self.system.p()
    }

    fn compute(&mut self, t: usize, x_true: &Vector, reference: &ReferenceSignal) -> Result<StepResult> {
        let Some(prob) = self.current_problem(t, x_true, reference)? else {
            return Ok(diverged(self.m()));
        };
        let sol = self.solver.solve(&prob)?;
        Ok(StepResult {
            input: self.config.clamp_input(&sol.z.rows(0, self.m()).into_owned()),
            status: sol.status,
            iterations: sol.iterations,
        })
    }

    fn observe(&mut self, _u: &Vector, _y: &Vector) {}

    fn current_problem(&self, t: usize, x_true: &Vector, reference: &ReferenceSignal) -> Result<Option<QpProblem>> {
        check_reference(reference, self.p())?;
        if x_true.len() != self.system.n() {
            return Err(Error::invalid("state dimension mismatch"));
        }
        let free = &self.phi * x_true;
        if !free.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(self.qp.problem(&free, &reference.preview(t, self.config.horizon))?))
    }
}

/// Hankel blocks from several episodes concatenated column-wise.
pub fn mosaic_blocks(episodes: &[EpisodeData], t_ini: usize, horizon: usize) -> Result<DeepcBlocks> {
    if episodes.is_empty() {
        return Err(Error::InsufficientData("no episodes".into()));
    }
    let depth = t_ini + horizon;
    let mut hus = Vec::with_capacity(episodes.len());
    let mut hys = Vec::with_capacity(episodes.len());
    for ep in episodes {
        if ep.len() < depth {
            return Err(Error::InsufficientData(format!(
                "episode of length {} is shorter than T_ini + N = {depth}",
                ep.len()
            )));
        }
        hus.push(hankel(&ep.inputs, depth)?);
        hys.push(hankel(&ep.outputs, depth)?);
    }
    let cols: usize = hus.iter().map(|h| h.ncols()).sum();
    let mut hu = Matrix::zeros(hus[0].nrows(), cols);
    let mut hy = Matrix::zeros(hys[0].nrows(), cols);
    let mut at = 0;
    for (a, b) in hus.iter().zip(&hys) {
        hu.view_mut((0, at), a.shape()).copy_from(a);
        hy.view_mut((0, at), b.shape()).copy_from(b);
        at += a.ncols();
    }
    DeepcBlocks::from_hankels(&hu, &hy, t_ini, horizon)
}

/// Hankel blocks averaged entrywise over equally long episodes.
pub fn averaged_blocks(episodes: &[EpisodeData], t_ini: usize, horizon: usize) -> Result<DeepcBlocks> {
    let Some(first) = episodes.first() else {
        return Err(Error::InsufficientData("no episodes".into()));
    };
    if episodes.iter().any(|e| e.len() != first.len()) {
        return Err(Error::invalid("averaged Hankel blocks need episodes of equal length"));
    }
    let depth = t_ini + horizon;
    if first.len() < depth {
        return Err(Error::InsufficientData(format!(
            "episode of length {} is shorter than T_ini + N = {depth}",
            first.len()
        )));
    }
    let mut hu = hankel(&first.inputs, depth)?;
    let mut hy = hankel(&first.outputs, depth)?;
    for ep in &episodes[1..] {
        hu += hankel(&ep.inputs, depth)?;
        hy += hankel(&ep.outputs, depth)?;
    }
    let k = episodes.len() as f64;
    DeepcBlocks::from_hankels(&(hu / k), &(hy / k), t_ini, horizon)
}

/// DeePC, or rDeePC when constructed with a regularization.
pub struct Deepc {
    config: ControllerConfig,
    qp: DeepcQp,
    state: ControllerState,
    solver: QpSolver,
    t_ini: usize,
    m: usize,
    p: usize,
    regularized: bool,
}

impl Deepc {
    pub fn new(config: ControllerConfig, blocks: &DeepcBlocks, regularization: Option<DeepcRegularization>) -> Result<Self> {
        config.validate()?;
        if blocks.horizon != config.horizon || blocks.m != config.m() || blocks.p != config.p() {
            return Err(Error::Config("DeePC blocks do not match the controller configuration".into()));
        }
        let qp = DeepcQp::new(
            blocks,
            &config.q,
            &config.r,
            config.input_bounds,
            config.output_bounds,
            regularization,
        )?;
        Ok(Deepc {
            state: ControllerState::new(blocks.t_ini, blocks.m, blocks.p),
            solver: QpSolver::new(config.solver),
            config,
            qp,
            t_ini: blocks.t_ini,
            m: blocks.m,
            p: blocks.p,
            regularized: regularization.is_some(),
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }
}

impl Controller for Deepc {
    fn name(&self) -> &'static str {
        if self.regularized {
            "rdeepc"
        } else {
            "deepc"
        }
    }

    fn m(&self) -> usize {
        self.m
    }

    fn p(&self) -> usize {
        self.p
    }

    fn compute(&mut self, t: usize, x_true: &Vector, reference: &ReferenceSignal) -> Result<StepResult> {
        let Some(prob) = self.current_problem(t, x_true, reference)? else {
            self.state.failed = true;
            return Ok(diverged(self.m));
        };
        let sol = self.solver.solve(&prob)?;
        let ubar = self.qp.inputs_from(&sol.z);
        if sol.status != QpStatus::Solved {
            self.state.failed = true;
        }
        Ok(StepResult {
            input: self.config.clamp_input(&ubar.rows(0, self.m).into_owned()),
            status: sol.status,
            iterations: sol.iterations,
        })
    }

    fn observe(&mut self, u: &Vector, y: &Vector) {
        self.state.push(u, y);
    }

    fn current_problem(&self, t: usize, _x_true: &Vector, reference: &ReferenceSignal) -> Result<Option<QpProblem>> {
        check_reference(reference, self.p)?;
        let u_ini = stack_columns(&self.state.recent_inputs(self.t_ini));
        let y_ini = stack_columns(&self.state.recent_outputs(self.t_ini));
        if !y_ini.iter().chain(u_ini.iter()).all(|v| v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(self.qp.problem(&u_ini, &y_ini, &reference.preview(t, self.config.horizon))?))
    }
}

/// Receding-horizon control on an identified [`DataDrivenModel`].
pub struct D2pc {
    config: ControllerConfig,
    model: DataDrivenModel,
    predictor: Predictor,
    qp: TrackingQp,
    state: ControllerState,
    solver: QpSolver,
    warm_start: bool,
    previous: Option<(Vector, Vector)>,
}

impl D2pc {
    pub fn new(config: ControllerConfig, model: DataDrivenModel) -> Result<Self> {
        config.validate()?;
        if model.m() != config.m() || model.p() != config.p() {
            return Err(Error::Config("model dimensions do not match the controller configuration".into()));
        }
        let predictor = build_predictor(&model, config.horizon)?;
        let qp = TrackingQp::new(
            predictor.gamma(),
            &config.q,
            &config.r,
            config.input_bounds,
            config.output_bounds,
        )?;
        Ok(D2pc {
            state: ControllerState::new(model.nbar(), model.m(), model.p()),
            solver: QpSolver::new(config.solver),
            config,
            model,
            predictor,
            qp,
            warm_start: true,
            previous: None,
        })
    }

    pub fn with_warm_start(mut self, enabled: bool) -> Self {
        self.warm_start = enabled;
        self
    }

    pub fn model(&self) -> &DataDrivenModel {
        &self.model
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    /// Stacked χ̄(t) from the rolling history.
    pub fn current_chi(&self) -> Vector {
        let nbar = self.model.nbar();
        self.model
            .stacked_chi(&self.state.recent_outputs(nbar), &self.state.recent_inputs(nbar))
            .expect("history matches the model dimensions")
    }

    /// Previous solution shifted by one step, with the last block repeated.
    fn shifted_warm_start(&self) -> Option<WarmStart> {
        let (z, lambda) = self.previous.as_ref()?;
        let m = self.model.m();
        let p = self.model.p();
        let hz = self.config.horizon;
        let shift = |v: &Vector, offset: usize, block: usize, out: &mut Vector| {
            for k in 0..hz {
                let src = (k + 1).min(hz - 1);
                for i in 0..block {
                    out[offset + k * block + i] = v[offset + src * block + i];
                }
            }
        };
        let mut z_new = z.clone();
        shift(z, 0, m, &mut z_new);
        let mut l_new = lambda.clone();
        let mut at = 0;
        if self.config.input_bounds.is_some() {
            shift(lambda, 0, m, &mut l_new);
            at = m * hz;
        }
        if self.config.output_bounds.is_some() {
            shift(lambda, at, p, &mut l_new);
        }
        Some(WarmStart {
            z: z_new,
            lambda: Some(l_new),
        })
    }
}

impl Controller for D2pc {
    fn name(&self) -> &'static str {
        "d2pc"
    }

    fn m(&self) -> usize {
        self.model.m()
    }

    fn p(&self) -> usize {
        self.model.p()
    }

    fn compute(&mut self, t: usize, x_true: &Vector, reference: &ReferenceSignal) -> Result<StepResult> {
        let Some(prob) = self.current_problem(t, x_true, reference)? else {
            self.state.failed = true;
            self.previous = None;
            return Ok(diverged(self.m()));
        };
        let warm = if self.warm_start { self.shifted_warm_start() } else { None };
        let sol = self.solver.solve_warm(&prob, warm.as_ref())?;
        if sol.status == QpStatus::Solved {
            self.previous = Some((sol.z.clone(), sol.lambda.clone()));
        } else {
            self.state.failed = true;
            self.previous = None;
        }
        Ok(StepResult {
            input: self.config.clamp_input(&sol.z.rows(0, self.m()).into_owned()),
            status: sol.status,
            iterations: sol.iterations,
        })
    }

    fn observe(&mut self, u: &Vector, y: &Vector) {
        self.state.push(u, y);
    }

    fn current_problem(&self, t: usize, _x_true: &Vector, reference: &ReferenceSignal) -> Result<Option<QpProblem>> {
        check_reference(reference, self.p())?;
        let free = self.predictor.phi() * self.current_chi();
        if !free.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(self.qp.problem(&free, &reference.preview(t, self.config.horizon))?))
    }
}

/// Closed-loop record. Columns are time steps; a failed run is truncated
/// after the failing step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub reference: Matrix,
    pub inputs: Matrix,
    /// Noise-free plant outputs `C x(t)`.
    pub outputs: Matrix,
    /// Outputs as measured by the controller.
    pub measured: Matrix,
    pub status: Vec<QpStatus>,
    pub iterations: Vec<usize>,
    pub failed: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.status.len()
    }

    pub fn is_empty(&self) -> bool {
        self.status.is_empty()
    }

    /// CSV with columns `t, r_i, u_i, y_i, y_nom_i, solver_status`, where `y`
    /// is the measured output. `y_nom` columns are left empty past its end.
    pub fn write_csv<W: Write>(&self, mut w: W, y_nom: Option<&Matrix>) -> Result<()> {
        let (m, p) = (self.inputs.nrows(), self.outputs.nrows());
        let mut header = vec!["t".to_string()];
        header.extend((1..=p).map(|i| format!("r_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=p).map(|i| format!("y_{i}")));
        if y_nom.is_some() {
            header.extend((1..=p).map(|i| format!("y_nom_{i}")));
        }
        header.push("solver_status".into());
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.reference.column(t).iter().map(|v| v.to_string()));
            row.extend(self.inputs.column(t).iter().map(|v| v.to_string()));
            row.extend(self.measured.column(t).iter().map(|v| v.to_string()));
            if let Some(nom) = y_nom {
                if t < nom.ncols() {
                    row.extend(nom.column(t).iter().map(|v| v.to_string()));
                } else {
                    row.extend((0..p).map(|_| String::new()));
                }
            }
            row.push(self.status[t].as_str().into());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs `n_sim` steps from `x(0) = 0`. At each step the controller computes
/// `u(t)`, the plant output is measured with noise, and the input is applied.
/// The first non-solved step marks the run failed and ends it.
pub fn run_closed_loop(
    plant: &LtiSystem,
    controller: &mut dyn Controller,
    reference: &ReferenceSignal,
    noise: &NoiseSpec,
    n_sim: usize,
) -> Result<Trajectory> {
    run_closed_loop_from(plant, &Vector::zeros(plant.n()), controller, reference, noise, n_sim)
}

pub fn run_closed_loop_from(
    plant: &LtiSystem,
    x0: &Vector,
    controller: &mut dyn Controller,
    reference: &ReferenceSignal,
    noise: &NoiseSpec,
    n_sim: usize,
) -> Result<Trajectory> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    if controller.m() != m || controller.p() != p {
        return Err(Error::invalid("controller dimensions do not match the plant"));
    }
    if x0.len() != n {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    check_reference(reference, p)?;
    let mut source = noise.source();
    let mut rec = Trajectory {
        reference: Matrix::zeros(p, n_sim),
        inputs: Matrix::zeros(m, n_sim),
        outputs: Matrix::zeros(p, n_sim),
        measured: Matrix::zeros(p, n_sim),
        status: Vec::with_capacity(n_sim),
        iterations: Vec::with_capacity(n_sim),
        failed: false,
    };
    let mut x = x0.clone();
    for t in 0..n_sim {
        let step = controller.compute(t, &x, reference)?;
        let y = plant.output(&x);
        let y_meas = &y + source.sample(p);
        rec.reference.set_column(t, &reference.at(t));
        rec.inputs.set_column(t, &step.input);
        rec.outputs.set_column(t, &y);
        rec.measured.set_column(t, &y_meas);
        rec.status.push(step.status);
        rec.iterations.push(step.iterations);
        if step.status != QpStatus::Solved {
            rec.failed = true;
            break;
        }
        controller.observe(&step.input, &y_meas);
        x = plant.next_state(&x, &step.input);
    }
    let len = rec.status.len();
    if len < n_sim {
        rec.reference = rec.reference.columns(0, len).into_owned();
        rec.inputs = rec.inputs.columns(0, len).into_owned();
        rec.outputs = rec.outputs.columns(0, len).into_owned();
        rec.measured = rec.measured.columns(0, len).into_owned();
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datadriven::identify;
    use crate::numerics::DEFAULT_REL_TOL;
    use crate::plant::{collect_episode, collect_samples, BenchmarkName, ExcitationSpec};

    fn two_mass() -> Benchmark {
        Benchmark::get(BenchmarkName::TwoMass)
    }

    #[test]
    fn history_is_zero_padded_and_rolls() {
        let mut st = ControllerState::new(3, 1, 2);
        assert_eq!(st.recent_inputs(3), Matrix::zeros(1, 3));
        st.push(&Vector::from_element(1, 1.0), &Vector::from_vec(vec![2.0, 3.0]));
        st.push(&Vector::from_element(1, 4.0), &Vector::from_vec(vec![5.0, 6.0]));
        let u = st.recent_inputs(3);
        assert_eq!(u.as_slice(), &[0.0, 1.0, 4.0]);
        let y = st.recent_outputs(2);
        assert_eq!(y.as_slice(), &[2.0, 3.0, 5.0, 6.0]);
        for k in 0..5 {
            st.push(&Vector::from_element(1, k as f64), &Vector::zeros(2));
        }
        assert_eq!(st.recent_inputs(3).as_slice(), &[2.0, 3.0, 4.0]);
        assert_eq!(st.steps(), 7);
    }

    #[test]
    fn config_validation() {
        let one = Matrix::identity(1, 1);
        assert!(ControllerConfig::new(0, one.clone(), one.clone(), None, None).is_err());
        assert!(ControllerConfig::new(5, -one.clone(), one.clone(), None, None).is_err());
        assert!(ControllerConfig::new(5, one.clone(), Matrix::zeros(1, 1), None, None).is_err());
        assert!(ControllerConfig::new(5, one.clone(), one.clone(), Some((1.0, 0.0)), None).is_err());
        assert!(ControllerConfig::new(5, one.clone(), one, Some((-1.0, 1.0)), None).is_ok());
    }

    #[test]
    fn mpc_at_origin_with_zero_reference_is_zero() {
        let b = two_mass();
        let mut mpc = MpcOracle::new(b.system.clone(), ControllerConfig::from_benchmark(&b)).unwrap();
        let r = ReferenceSignal::constant(Vector::zeros(1));
        let step = mpc.compute(0, &Vector::zeros(4), &r).unwrap();
        assert_eq!(step.status, QpStatus::Solved);
        assert!(step.input.amax() < 1e-9);
    }

    #[test]
    fn pendulum_mpc_tracks_step_within_bounds() {
        let b = Benchmark::get(BenchmarkName::InvertedPendulum);
        let mut mpc = MpcOracle::new(b.system.clone(), ControllerConfig::from_benchmark(&b)).unwrap();
        let traj = run_closed_loop(&b.system, &mut mpc, &b.defaults.reference, &NoiseSpec::none(), b.defaults.n_sim).unwrap();
        assert!(!traj.failed);
        assert!(traj.inputs.amax() <= 20.0 + 1e-6);
        let last = traj.outputs[(0, traj.len() - 1)];
        assert!((last - 1.0).abs() < 0.01, "final output {last}");
    }

    #[test]
    fn d2pc_matches_mpc_on_noise_free_two_mass() {
        let b = two_mass();
        let cfg = ControllerConfig::from_benchmark(&b);
        let nbar = 20;
        let ep = collect_episode(&b.system, b.data_length(nbar), nbar, &ExcitationSpec::new(1.0, 3), &NoiseSpec::none()).unwrap();
        let model = identify(&[ep], nbar, DEFAULT_REL_TOL).unwrap();
        let mut d2pc = D2pc::new(cfg.clone(), model).unwrap();
        let mut mpc = MpcOracle::new(b.system.clone(), cfg).unwrap();
        let r = &b.defaults.reference;
        let a = run_closed_loop(&b.system, &mut d2pc, r, &NoiseSpec::none(), 150).unwrap();
        let o = run_closed_loop(&b.system, &mut mpc, r, &NoiseSpec::none(), 150).unwrap();
        assert!(!a.failed && !o.failed);
        assert!((&a.inputs - &o.inputs).amax() < 1e-4);
        assert!((&a.outputs - &o.outputs).amax() < 1e-2);
    }

    #[test]
    fn d2pc_zero_reference_gives_zero_input() {
        let b = two_mass();
        let ep = collect_episode(&b.system, 100, 6, &ExcitationSpec::new(1.0, 1), &NoiseSpec::none()).unwrap();
        let model = identify(&[ep], 6, DEFAULT_REL_TOL).unwrap();
        let mut c = D2pc::new(ControllerConfig::from_benchmark(&b), model).unwrap();
        let r = ReferenceSignal::constant(Vector::zeros(1));
        let traj = run_closed_loop(&b.system, &mut c, &r, &NoiseSpec::none(), 20).unwrap();
        assert!(traj.inputs.amax() < 1e-6);
        assert!(traj.outputs.amax() < 1e-6);
    }

    #[test]
    fn causality_future_noise_does_not_change_past_inputs() {
        let b = two_mass();
        let ep = collect_episode(&b.system, 100, 8, &ExcitationSpec::new(1.0, 2), &NoiseSpec::none()).unwrap();
        let model = identify(&[ep], 8, DEFAULT_REL_TOL).unwrap();
        let cfg = ControllerConfig::from_benchmark(&b);
        let r = &b.defaults.reference;
        let noise = NoiseSpec::new(1e-2, 7).unwrap();
        let mut c1 = D2pc::new(cfg.clone(), model.clone()).unwrap();
        let base = run_closed_loop(&b.system, &mut c1, r, &noise, 30).unwrap();

        // Same run, but measurements from t = 15 on are replaced by a
        // different noise realization.
        let mut c2 = D2pc::new(cfg, model).unwrap();
        let mut x = Vector::zeros(4);
        let mut other = NoiseSpec::new(1e-2, 99).unwrap().source();
        for t in 0..30 {
            let step = c2.compute(t, &x, r).unwrap();
            if t <= 15 {
                assert_eq!(step.input, base.inputs.column(t).into_owned(), "input at t = {t}");
            }
            let y = if t < 15 {
                base.measured.column(t).into_owned()
            } else {
                b.system.output(&x) + other.sample(1)
            };
            c2.observe(&step.input, &y);
            x = b.system.next_state(&x, &step.input);
        }
    }

    #[test]
    fn deepc_noise_free_two_mass_tracks_nominal() {
        let b = two_mass();
        let cfg = ControllerConfig::from_benchmark(&b);
        let ep = collect_samples(&b.system, 100, 0, None, &ExcitationSpec::new(1.0, 5), &NoiseSpec::none()).unwrap();
        let blocks = mosaic_blocks(&[ep], 4, cfg.horizon).unwrap();
        let mut deepc = Deepc::new(cfg.clone(), &blocks, None).unwrap();
        let mut mpc = MpcOracle::new(b.system.clone(), cfg).unwrap();
        let r = &b.defaults.reference;
        let a = run_closed_loop(&b.system, &mut deepc, r, &NoiseSpec::none(), 100).unwrap();
        let o = run_closed_loop(&b.system, &mut mpc, r, &NoiseSpec::none(), 100).unwrap();
        assert!(!a.failed);
        assert!((&a.outputs - &o.outputs).amax() < 1e-2);
        assert!(a.inputs.amax() <= 2.0 + 1e-6);
    }

    #[test]
    fn zero_reference_keeps_every_controller_at_rest() {
        let b = two_mass();
        let cfg = ControllerConfig::from_benchmark(&b);
        let r = ReferenceSignal::constant(Vector::zeros(1));
        let ep = collect_samples(&b.system, 100, 0, None, &ExcitationSpec::new(1.0, 5), &NoiseSpec::none()).unwrap();
        let blocks = mosaic_blocks(&[ep], 4, cfg.horizon).unwrap();
        let reg = DeepcRegularization {
            lambda_g: 500.0,
            lambda_y: 5e5,
        };
        let mut ctrls: Vec<Box<dyn Controller>> = vec![
            Box::new(MpcOracle::new(b.system.clone(), cfg.clone()).unwrap()),
            Box::new(Deepc::new(cfg.clone(), &blocks, None).unwrap()),
            Box::new(Deepc::new(cfg, &blocks, Some(reg)).unwrap()),
        ];
        for c in ctrls.iter_mut() {
            let traj = run_closed_loop(&b.system, c.as_mut(), &r, &NoiseSpec::none(), 10).unwrap();
            assert!(!traj.failed, "{}", c.name());
            assert!(traj.inputs.amax() < 1e-5, "{}", c.name());
        }
    }

    #[test]
    fn mosaic_and_averaged_block_shapes() {
        let b = two_mass();
        let eps: Vec<_> = (0..3)
            .map(|k| collect_samples(&b.system, 40, 0, None, &ExcitationSpec::new(1.0, k), &NoiseSpec::none()).unwrap())
            .collect();
        let mosaic = mosaic_blocks(&eps, 4, 10).unwrap();
        assert_eq!(mosaic.columns(), 3 * (40 - 14 + 1));
        let avg = averaged_blocks(&eps, 4, 10).unwrap();
        assert_eq!(avg.columns(), 27);
        let expected = (eps[0].inputs[(0, 0)] + eps[1].inputs[(0, 0)] + eps[2].inputs[(0, 0)]) / 3.0;
        assert!((avg.u_p[(0, 0)] - expected).abs() < 1e-15);
        assert!(mosaic_blocks(&eps, 30, 20).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let b = two_mass();
        let ep = collect_episode(&b.system, 100, 6, &ExcitationSpec::new(1.0, 4), &NoiseSpec::new(1e-2, 4).unwrap()).unwrap();
        let model = identify(&[ep], 6, DEFAULT_REL_TOL).unwrap();
        let cfg = ControllerConfig::from_benchmark(&b);
        let noise = NoiseSpec::new(1e-2, 11).unwrap();
        let run = || {
            let mut c = D2pc::new(cfg.clone(), model.clone()).unwrap();
            run_closed_loop(&b.system, &mut c, &b.defaults.reference, &noise, 40).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn trajectory_csv_layout() {
        let b = two_mass();
        let mut mpc = MpcOracle::new(b.system.clone(), ControllerConfig::from_benchmark(&b)).unwrap();
        let traj = run_closed_loop(&b.system, &mut mpc, &b.defaults.reference, &NoiseSpec::none(), 3).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, Some(&traj.outputs)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,r_1,u_1,y_1,y_nom_1,solver_status");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",solved"));
    }
}
