//! Seeded experiment batteries: MAE against the noise-free model-based MPC
//! trajectory, failure ratio over trials, and reproduction of the benchmark
//! tables as CSV.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;

use crate::controllers::{
    averaged_blocks, mosaic_blocks, run_closed_loop, Controller, ControllerConfig, D2pc, Deepc, MpcOracle, Trajectory,
};
use crate::datadriven::identify;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, IDENTIFICATION_REL_TOL};
use crate::plant::{
    collect_episode, collect_samples, Benchmark, BenchmarkName, EpisodeData, ExcitationSpec, NoiseSpec,
};
use crate::qp::{DeepcRegularization, QpSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mpc,
    Deepc,
    Rdeepc,
    D2pc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mpc, Method::Deepc, Method::Rdeepc, Method::D2pc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mpc => "mpc",
            Method::Deepc => "deepc",
            Method::Rdeepc => "rdeepc",
            Method::D2pc => "d2pc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mpc" => Ok(Method::Mpc),
            "deepc" => Ok(Method::Deepc),
            "rdeepc" => Ok(Method::Rdeepc),
            "d2pc" => Ok(Method::D2pc),
            other => Err(Error::NotFound(format!("unknown method '{other}'"))),
        }
    }
}

/// How several DeePC episodes are combined into Hankel blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepcData {
    /// Column-concatenated Hankel matrices of `q` episodes.
    Mosaic,
    /// Entrywise mean of the Hankel matrices of `N_d` episodes.
    Averaged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub benchmark: BenchmarkName,
    pub method: Method,
    pub nbar: usize,
    pub n_d: usize,
    pub t_ini: usize,
    /// Episode count for mosaic DeePC blocks.
    pub q: usize,
    pub lambda_g: f64,
    pub lambda_y: f64,
    pub deepc_data: DeepcData,
    pub noise: f64,
    pub trials: usize,
    pub n_sim: usize,
    pub base_seed: u64,
    /// Identification episode length; benchmark default when `None`.
    pub data_length: Option<usize>,
    /// DeePC episode length; benchmark default when `None`.
    pub deepc_episode_length: Option<usize>,
    pub excitation_amplitude: f64,
    pub pinv_tol: f64,
    pub solver: QpSettings,
}

impl ExperimentSpec {
    /// Spec with the benchmark's defaults: `n̄ = 4`, `N_d = 1`, `q = 1`, no noise, 10 trials.
    pub fn new(benchmark: BenchmarkName, method: Method) -> Self {
        let d = Benchmark::get(benchmark).defaults;
        ExperimentSpec {
            benchmark,
            method,
            nbar: 4,
            n_d: 1,
            t_ini: d.t_ini,
            q: 1,
            lambda_g: d.lambda_g,
            lambda_y: d.lambda_y,
            deepc_data: DeepcData::Mosaic,
            noise: 0.0,
            trials: 10,
            n_sim: d.n_sim,
            base_seed: 0,
            data_length: None,
            deepc_episode_length: None,
            excitation_amplitude: d.excitation_amplitude,
            pinv_tol: IDENTIFICATION_REL_TOL,
            solver: QpSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return cfg("trial count must be at least 1".into());
        }
        if self.n_sim == 0 {
            return cfg("N_sim must be at least 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return cfg(format!("noise intensity {} must be finite and nonnegative", self.noise));
        }
        if !(self.excitation_amplitude > 0.0 && self.excitation_amplitude.is_finite()) {
            return cfg("excitation amplitude must be positive".into());
        }
        let bench = Benchmark::get(self.benchmark);
        match self.method {
            Method::Mpc => {}
            Method::D2pc => {
                if self.nbar == 0 || self.n_d == 0 {
                    return cfg("D2PC needs nbar >= 1 and N_d >= 1".into());
                }
                let t = self.data_length.unwrap_or_else(|| bench.data_length(self.nbar));
                if t < 4 * self.nbar + 1 {
                    return cfg(format!("data length {t} is below 4·nbar + 1 = {}", 4 * self.nbar + 1));
                }
            }
            Method::Deepc | Method::Rdeepc => {
                if self.t_ini == 0 {
                    return cfg("DeePC needs T_ini >= 1".into());
                }
                let episodes = match self.deepc_data {
                    DeepcData::Mosaic => self.q,
                    DeepcData::Averaged => self.n_d,
                };
                if episodes == 0 {
                    return cfg("DeePC needs at least one episode".into());
                }
                let len = self.deepc_episode_length.unwrap_or(bench.defaults.deepc_episode_length);
                let depth = self.t_ini + bench.defaults.horizon;
                if len < depth {
                    return cfg(format!("DeePC episode length {len} is below T_ini + N = {depth}"));
                }
                if self.method == Method::Rdeepc
                    && !(self.lambda_g >= 0.0 && self.lambda_y >= 0.0 && self.lambda_g.is_finite() && self.lambda_y.is_finite())
                {
                    return cfg("regularization weights must be finite and nonnegative".into());
                }
            }
        }
        Ok(())
    }

    /// Short label for table columns, e.g. `D2PC(nbar=20)`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Mpc => "MPC".into(),
            Method::D2pc => format!("D2PC(nbar={})", self.nbar),
            Method::Deepc | Method::Rdeepc => {
                let name = if self.method == Method::Deepc { "DeePC" } else { "rDeePC" };
                match self.deepc_data {
                    DeepcData::Mosaic if self.q > 1 || self.benchmark == BenchmarkName::InvertedPendulum => {
                        format!("{name}(q={})", self.q)
                    }
                    _ => format!("{name}(T_ini={})", self.t_ini),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    /// Absent when the trial failed.
    pub mae: Option<f64>,
    pub failed: bool,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableCell {
    /// Mean MAE over non-failed trials; `None` (N.A.) when all trials failed.
    pub mean_mae: Option<f64>,
    pub failure_ratio: f64,
    pub trials: usize,
}

impl TableCell {
    pub fn from_trials(trials: &[TrialResult]) -> Self {
        let ok: Vec<f64> = trials.iter().filter_map(|t| t.mae).collect();
        let failed = trials.iter().filter(|t| t.failed).count();
        TableCell {
            mean_mae: if ok.is_empty() {
                None
            } else {
                Some(ok.iter().sum::<f64>() / ok.len() as f64)
            },
            failure_ratio: if trials.is_empty() {
                0.0
            } else {
                failed as f64 / trials.len() as f64
            },
            trials: trials.len(),
        }
    }

    /// MAE as printed in the tables: `N.A.`, `<0.001`, or three decimals.
    pub fn mae_text(&self) -> String {
        match self.mean_mae {
            None => "N.A.".into(),
            Some(v) if v < 0.001 => "<0.001".into(),
            Some(v) if v >= 1e4 => format!("{v:.3e}"),
            Some(v) => format!("{v:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cell: TableCell,
    pub trials: Vec<TrialResult>,
}

/// `(1/N)·Σ_t ‖y(t) − y_nom(t)‖₂` over the columns of two `p × N` trajectories.
pub fn compute_mae(y: &Matrix, y_nom: &Matrix) -> Result<f64> {
    if y.shape() != y_nom.shape() {
        return Err(Error::invalid(format!(
            "trajectory shapes {:?} and {:?} differ",
            y.shape(),
            y_nom.shape()
        )));
    }
    if y.ncols() == 0 {
        return Err(Error::invalid("empty trajectory"));
    }
    let total: f64 = (0..y.ncols()).map(|t| (y.column(t) - y_nom.column(t)).norm()).sum();
    Ok(total / y.ncols() as f64)
}

type NominalKey = (BenchmarkName, usize);

fn nominal_cache() -> &'static Mutex<HashMap<NominalKey, Matrix>> {
    static CACHE: OnceLock<Mutex<HashMap<NominalKey, Matrix>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Noise-free closed-loop outputs of the model-based MPC oracle with the
/// benchmark's default weights, horizon and reference. Cached per
/// `(benchmark, N_sim)`.
pub fn nominal_outputs(benchmark: BenchmarkName, n_sim: usize) -> Result<Matrix> {
    if let Some(y) = nominal_cache().lock().expect("cache lock").get(&(benchmark, n_sim)) {
        return Ok(y.clone());
    }
    let bench = Benchmark::get(benchmark);
    let mut mpc = MpcOracle::new(bench.system.clone(), ControllerConfig::from_benchmark(&bench))?;
    let traj = run_closed_loop(&bench.system, &mut mpc, &bench.defaults.reference, &NoiseSpec::none(), n_sim)?;
    if traj.failed {
        return Err(Error::Config(format!("nominal MPC failed on {benchmark}")));
    }
    nominal_cache()
        .lock()
        .expect("cache lock")
        .insert((benchmark, n_sim), traj.outputs.clone());
    Ok(traj.outputs)
}

fn excitation(spec: &ExperimentSpec, seed: u64, episode: usize) -> ExcitationSpec {
    ExcitationSpec::new(spec.excitation_amplitude, seed).with_stream(2 * episode as u64 + 1)
}

fn episode_noise(spec: &ExperimentSpec, seed: u64, episode: usize) -> Result<NoiseSpec> {
    Ok(NoiseSpec::new(spec.noise, seed)?.with_stream(2 * episode as u64 + 2))
}

/// Builds the controller of one trial from freshly collected episodes.
pub fn build_controller(spec: &ExperimentSpec, seed: u64) -> Result<Box<dyn Controller + Send>> {
    let bench = Benchmark::get(spec.benchmark);
    let mut cfg = ControllerConfig::from_benchmark(&bench);
    cfg.solver = spec.solver;
    match spec.method {
        Method::Mpc => Ok(Box::new(MpcOracle::new(bench.system.clone(), cfg)?)),
        Method::D2pc => {
            let t_len = spec.data_length.unwrap_or_else(|| bench.data_length(spec.nbar));
            let episodes = (0..spec.n_d)
                .map(|e| {
                    collect_episode(
                        &bench.system,
                        t_len,
                        spec.nbar,
                        &excitation(spec, seed, e),
                        &episode_noise(spec, seed, e)?,
                    )
                })
                .collect::<Result<Vec<EpisodeData>>>()?;
            let model = identify(&episodes, spec.nbar, spec.pinv_tol)?;
            Ok(Box::new(D2pc::new(cfg, model)?))
        }
        Method::Deepc | Method::Rdeepc => {
            let len = spec.deepc_episode_length.unwrap_or(bench.defaults.deepc_episode_length);
            let count = match spec.deepc_data {
                DeepcData::Mosaic => spec.q,
                DeepcData::Averaged => spec.n_d,
            };
            let episodes = (0..count)
                .map(|e| {
                    collect_samples(
                        &bench.system,
                        len,
                        0,
                        None,
                        &excitation(spec, seed, e),
                        &episode_noise(spec, seed, e)?,
                    )
                })
                .collect::<Result<Vec<EpisodeData>>>()?;
            let blocks = match spec.deepc_data {
                DeepcData::Mosaic => mosaic_blocks(&episodes, spec.t_ini, cfg.horizon)?,
                DeepcData::Averaged => averaged_blocks(&episodes, spec.t_ini, cfg.horizon)?,
            };
            let reg = (spec.method == Method::Rdeepc).then_some(DeepcRegularization {
                lambda_g: spec.lambda_g,
                lambda_y: spec.lambda_y,
            });
            Ok(Box::new(Deepc::new(cfg, &blocks, reg)?))
        }
    }
}

/// One seeded trial against the nominal outputs `y_nom` (`p × N_sim`).
pub fn run_trial(spec: &ExperimentSpec, seed: u64, y_nom: &Matrix) -> Result<TrialResult> {
    let bench = Benchmark::get(spec.benchmark);
    let mut controller = build_controller(spec, seed)?;
    let noise = NoiseSpec::new(spec.noise, seed)?.with_stream(0);
    let traj = run_closed_loop(&bench.system, controller.as_mut(), &bench.defaults.reference, &noise, spec.n_sim)?;
    let mae = if traj.failed {
        None
    } else {
        Some(compute_mae(&traj.outputs, y_nom)?)
    };
    Ok(TrialResult {
        seed,
        mae,
        failed: traj.failed,
        trajectory: traj,
    })
}

/// Runs `spec.trials` independent trials in parallel; trial `k` uses seed
/// `base_seed + k`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let y_nom = nominal_outputs(spec.benchmark, spec.n_sim)?;
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|k| run_trial(spec, spec.base_seed.wrapping_add(k as u64), &y_nom))
        .collect::<Result<Vec<_>>>()?;
    let cell = TableCell::from_trials(&trials);
    log::info!(
        "{} {} noise={} -> mae={} fr={}",
        spec.benchmark,
        spec.label(),
        spec.noise,
        cell.mae_text(),
        cell.failure_ratio
    );
    Ok(ExperimentResult {
        spec: spec.clone(),
        cell,
        trials,
    })
}

/// Overrides applied to every experiment of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    pub trials: usize,
    pub n_sim: Option<usize>,
    pub base_seed: u64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            trials: 10,
            n_sim: None,
            base_seed: 0,
        }
    }
}

/// One cell of a table grid: row label, column label and the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub row: String,
    pub column: String,
    pub spec: ExperimentSpec,
}

pub const TABLE_IDS: [u32; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 9];

pub fn table_title(id: u32) -> Option<&'static str> {
    Some(match id {
        1 => "Inverted pendulum (A_n = 0), N_d = 1 for D2PC",
        2 => "Inverted pendulum (A_n = 1e-4), N_d = 50 for D2PC",
        3 => "Inverted pendulum (A_n = 1e-4), D2PC for various nbar with N_d = 50",
        4 => "Two-mass system, comparison of MAE (N_d = 1)",
        5 => "Two-mass system, MAE of D2PC for various nbar (N_d = 1)",
        6 => "Two-mass system (A_n = 0.1), MAE for various N_d",
        7 => "Four-tank system, MAE of D2PC for various nbar (N_d = 1)",
        8 => "Four-tank system (A_n = 0.1), MAE for various N_d",
        9 => "Four-tank system, comparison of MAE (N_d = 1)",
        _ => return None,
    })
}

fn noise_label(a: f64) -> String {
    format!("A_n={a:e}")
}

/// Grid of experiments behind table `id`.
pub fn table_grid(id: u32, opts: &TableOptions) -> Result<Vec<TableEntry>> {
    use BenchmarkName::*;
    use Method::*;
    let base = |b: BenchmarkName, m: Method, noise: f64| {
        let mut s = ExperimentSpec::new(b, m);
        s.noise = noise;
        s.trials = opts.trials;
        s.base_seed = opts.base_seed;
        if let Some(n) = opts.n_sim {
            s.n_sim = n;
        }
        s
    };
    let d2pc = |b, noise, nbar, n_d| {
        let mut s = base(b, D2pc, noise);
        s.nbar = nbar;
        s.n_d = n_d;
        s
    };
    let mosaic = |m, noise, q| {
        let mut s = base(InvertedPendulum, m, noise);
        s.q = q;
        s
    };
    let deepc = |b, m, noise, t_ini| {
        let mut s = base(b, m, noise);
        s.t_ini = t_ini;
        s
    };
    let entry = |row: String, spec: ExperimentSpec| TableEntry {
        row,
        column: spec.label(),
        spec,
    };

    let mut out = Vec::new();
    match id {
        1 => {
            for q in [1, 3, 5, 10] {
                out.push(entry("A_n=0".into(), mosaic(Deepc, 0.0, q)));
            }
            out.push(entry("A_n=0".into(), d2pc(InvertedPendulum, 0.0, 4, 1)));
        }
        2 => {
            for m in [Deepc, Rdeepc] {
                for q in [5, 10] {
                    out.push(entry("A_n=1e-4".into(), mosaic(m, 1e-4, q)));
                }
            }
            out.push(entry("A_n=1e-4".into(), d2pc(InvertedPendulum, 1e-4, 10, 50)));
        }
        3 => {
            for nbar in [4, 6, 8, 10, 12, 14] {
                out.push(entry("A_n=1e-4".into(), d2pc(InvertedPendulum, 1e-4, nbar, 50)));
            }
        }
        4 => {
            for noise in [1e-8, 1e-4, 1e-2, 1e-1] {
                for m in [Deepc, Rdeepc] {
                    for t_ini in [4, 15] {
                        out.push(entry(noise_label(noise), deepc(TwoMass, m, noise, t_ini)));
                    }
                }
                out.push(entry(noise_label(noise), d2pc(TwoMass, noise, 20, 1)));
            }
        }
        5 => {
            for noise in [1e-2, 1e-1] {
                for nbar in [4, 6, 8, 10, 15, 20] {
                    out.push(entry(noise_label(noise), d2pc(TwoMass, noise, nbar, 1)));
                }
            }
        }
        6 | 8 => {
            let (b, nbar, t_ini) = if id == 6 { (TwoMass, 20, 15) } else { (FourTank, 30, 30) };
            for n_d in [1, 5, 20, 50, 500] {
                let row = format!("N_d={n_d}");
                out.push(entry(row.clone(), d2pc(b, 0.1, nbar, n_d)));
                let mut s = deepc(b, Rdeepc, 0.1, t_ini);
                s.deepc_data = DeepcData::Averaged;
                s.n_d = n_d;
                out.push(entry(row, s));
            }
        }
        7 => {
            for noise in [1e-2, 1e-1] {
                for nbar in [4, 6, 10, 15, 20, 30] {
                    out.push(entry(noise_label(noise), d2pc(FourTank, noise, nbar, 1)));
                }
            }
        }
        9 => {
            for noise in [1e-7, 1e-3, 1e-2, 1e-1] {
                for m in [Deepc, Rdeepc] {
                    for t_ini in [4, 30] {
                        out.push(entry(noise_label(noise), deepc(FourTank, m, noise, t_ini)));
                    }
                }
                out.push(entry(noise_label(noise), d2pc(FourTank, noise, 30, 1)));
            }
        }
        other => return Err(Error::NotFound(format!("unknown table id {other}"))),
    }
    Ok(out)
}

/// A reproduced table: grid entries with their aggregated cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TableReport {
    pub id: u32,
    pub entries: Vec<(TableEntry, TableCell)>,
    pub options: TableOptions,
}

impl TableReport {
    /// CSV with a `#` metadata header and one line per cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let s = QpSettings::default();
        writeln!(w, "# table,{}", self.id)?;
        writeln!(w, "# title,{}", table_title(self.id).unwrap_or(""))?;
        writeln!(w, "# base_seed,{}", self.options.base_seed)?;
        writeln!(w, "# trials,{}", self.options.trials)?;
        if let Some((first, _)) = self.entries.first() {
            writeln!(w, "# n_sim,{}", first.spec.n_sim)?;
            let solver = &first.spec.solver;
            writeln!(
                w,
                "# solver,eps_abs={},eps_rel={},max_iter={},rho={},sigma={},alpha={},polish={}",
                solver.eps_abs, solver.eps_rel, solver.max_iter, solver.rho, solver.sigma, solver.alpha, solver.polish
            )?;
        } else {
            writeln!(w, "# solver,eps_abs={},eps_rel={},max_iter={}", s.eps_abs, s.eps_rel, s.max_iter)?;
        }
        writeln!(w, "row,column,benchmark,method,noise,nbar,n_d,t_ini,q,mae,mae_text,failure_ratio")?;
        for (e, c) in &self.entries {
            let sp = &e.spec;
            writeln!(
                w,
                "{},{},{},{},{:e},{},{},{},{},{},{},{}",
                e.row,
                e.column,
                sp.benchmark,
                sp.method,
                sp.noise,
                sp.nbar,
                sp.n_d,
                sp.t_ini,
                sp.q,
                c.mean_mae.map_or_else(|| "NA".to_string(), |v| format!("{v:.6e}")),
                c.mae_text(),
                c.failure_ratio
            )?;
        }
        Ok(())
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<&TableCell> {
        self.entries
            .iter()
            .find(|(e, _)| e.row == row && e.column == column)
            .map(|(_, c)| c)
    }
}

/// Runs every experiment of table `id` in order.
pub fn run_table(id: u32, opts: &TableOptions) -> Result<TableReport> {
    let grid = table_grid(id, opts)?;
    let mut entries = Vec::with_capacity(grid.len());
    for e in grid {
        let res = run_experiment(&e.spec)?;
        entries.push((e, res.cell));
    }
    Ok(TableReport {
        id,
        entries,
        options: opts.clone(),
    })
}

/// Runs table `id` and writes it to `path`.
pub fn reproduce_table(id: u32, path: &Path, opts: &TableOptions) -> Result<TableReport> {
    let report = run_table(id, opts)?;
    let file = std::fs::File::create(path)?;
    report.write_csv(std::io::BufWriter::new(file))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        let y = Matrix::from_element(1, 10, 1.0);
        assert_eq!(compute_mae(&y, &y).unwrap(), 0.0);
        assert!((compute_mae(&y, &Matrix::zeros(1, 10)).unwrap() - 1.0).abs() < 1e-15);
        let mut a = Matrix::zeros(2, 8);
        a[(0, 3)] = 3.0;
        a[(1, 3)] = 4.0;
        assert!((compute_mae(&a, &Matrix::zeros(2, 8)).unwrap() - 5.0 / 8.0).abs() < 1e-15);
        assert!(compute_mae(&a, &Matrix::zeros(2, 7)).is_err());
    }

    fn fake_trial(mae: Option<f64>) -> TrialResult {
        TrialResult {
            seed: 0,
            mae,
            failed: mae.is_none(),
            trajectory: Trajectory {
                reference: Matrix::zeros(1, 0),
                inputs: Matrix::zeros(1, 0),
                outputs: Matrix::zeros(1, 0),
                measured: Matrix::zeros(1, 0),
                status: vec![],
                iterations: vec![],
                failed: mae.is_none(),
            },
        }
    }

    #[test]
    fn table_cell_aggregation() {
        let cell = TableCell::from_trials(&[fake_trial(Some(1.0)), fake_trial(None), fake_trial(Some(3.0)), fake_trial(None)]);
        assert_eq!(cell.mean_mae, Some(2.0));
        assert_eq!(cell.failure_ratio, 0.5);
        let all_failed = TableCell::from_trials(&[fake_trial(None), fake_trial(None)]);
        assert_eq!(all_failed.mae_text(), "N.A.");
        assert_eq!(all_failed.failure_ratio, 1.0);
        assert_eq!(TableCell::from_trials(&[fake_trial(Some(1e-4))]).mae_text(), "<0.001");
    }

    #[test]
    fn method_parsing() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("lqr".parse::<Method>(), Err(Error::NotFound(_))));
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec::new(BenchmarkName::TwoMass, Method::D2pc);
        assert!(s.validate().is_ok());
        s.trials = 0;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = ExperimentSpec::new(BenchmarkName::TwoMass, Method::D2pc);
        s.nbar = 30;
        s.data_length = Some(100);
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::new(BenchmarkName::InvertedPendulum, Method::Deepc);
        s.t_ini = 10;
        assert!(s.validate().is_err());
        s.t_ini = 4;
        s.q = 0;
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::new(BenchmarkName::FourTank, Method::Mpc);
        s.noise = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn table_grids_match_layouts() {
        let opts = TableOptions::default();
        let t5 = table_grid(5, &opts).unwrap();
        assert_eq!(t5.len(), 12);
        let nbars: Vec<_> = t5.iter().take(6).map(|e| e.spec.nbar).collect();
        assert_eq!(nbars, vec![4, 6, 8, 10, 15, 20]);
        assert!(t5.iter().all(|e| e.spec.method == Method::D2pc && e.spec.benchmark == BenchmarkName::TwoMass));
        let t8 = table_grid(8, &opts).unwrap();
        assert_eq!(t8.len(), 10);
        assert!(t8.iter().all(|e| e.spec.benchmark == BenchmarkName::FourTank));
        assert_eq!(t8[8].spec.n_d, 500);
        assert_eq!(t8[9].spec.deepc_data, DeepcData::Averaged);
        let t7 = table_grid(7, &opts).unwrap();
        let nbars: Vec<_> = t7.iter().take(6).map(|e| e.spec.nbar).collect();
        assert_eq!(nbars, vec![4, 6, 10, 15, 20, 30]);
        for id in TABLE_IDS {
            for e in table_grid(id, &opts).unwrap() {
                e.spec.validate().unwrap();
            }
        }
        assert!(matches!(table_grid(10, &opts), Err(Error::NotFound(_))));
    }

    #[test]
    fn mpc_experiment_has_zero_mae() {
        let mut s = ExperimentSpec::new(BenchmarkName::TwoMass, Method::Mpc);
        s.trials = 2;
        s.n_sim = 50;
        let res = run_experiment(&s).unwrap();
        assert_eq!(res.cell.failure_ratio, 0.0);
        assert!(res.cell.mean_mae.unwrap() < 1e-12);
    }

    #[test]
    fn experiments_are_reproducible() {
        let mut s = ExperimentSpec::new(BenchmarkName::TwoMass, Method::D2pc);
        s.nbar = 8;
        s.noise = 1e-2;
        s.trials = 3;
        s.n_sim = 60;
        s.base_seed = 17;
        let a = run_experiment(&s).unwrap();
        let b = run_experiment(&s).unwrap();
        assert_eq!(a.cell, b.cell);
        assert_eq!(a.trials.iter().map(|t| t.seed).collect::<Vec<_>>(), vec![17, 18, 19]);
    }
}
