//! Ground-truth plants: discrete LTI simulation with bounded measurement
//! noise, reference signals, pre-experiment episodes and the three benchmark
//! systems.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    ensure_finite, ensure_finite_vec, is_persistently_exciting, Matrix, Vector, DEFAULT_REL_TOL,
};

/// Maximum number of excitation draws before giving up on persistent excitation.
pub const MAX_EXCITATION_ATTEMPTS: usize = 10;

/// Seeded generator on an explicit stream, so independent consumers derived
/// from one seed never share random numbers.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Discrete-time plant `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl LtiSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::invalid(format!("A must be square and nonempty, got {:?}", a.shape())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::invalid(format!("B must be {n}xm, got {:?}", b.shape())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::invalid(format!("C must be px{n}, got {:?}", c.shape())));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        ensure_finite(&c, "C")?;
        Ok(LtiSystem { a, b, c })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn output(&self, x: &Vector) -> Vector {
        &self.c * x
    }

    pub fn next_state(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
}

/// Bounded uniform measurement noise, `‖n(t)‖_∞ ≤ intensity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub intensity: f64,
    pub seed: u64,
    pub stream: u64,
}

impl NoiseSpec {
    pub fn new(intensity: f64, seed: u64) -> Result<Self> {
        if !(intensity >= 0.0) || !intensity.is_finite() {
            return Err(Error::invalid(format!("noise intensity must be finite and >= 0, got {intensity}")));
        }
        Ok(NoiseSpec {
            intensity,
            seed,
            stream: 0,
        })
    }

    pub fn none() -> Self {
        NoiseSpec {
            intensity: 0.0,
            seed: 0,
            stream: 0,
        }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        NoiseSpec { stream, ..self }
    }

    pub fn source(&self) -> NoiseSource {
        NoiseSource {
            rng: seeded_rng(self.seed, self.stream),
            intensity: self.intensity,
        }
    }
}

/// Stateful generator of noise samples for one consumer.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    intensity: f64,
}

impl NoiseSource {
    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    /// One `p`-dimensional sample, i.i.d. uniform on `[-A_n, A_n]` per component.
    pub fn sample(&mut self, p: usize) -> Vector {
        if self.intensity == 0.0 {
            return Vector::zeros(p);
        }
        let a = self.intensity;
        Vector::from_fn(p, |_, _| self.rng.gen_range(-a..=a))
    }
}

/// Random excitation for pre-experiments: i.i.d. uniform on
/// `[-amplitude, amplitude]` per input component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationSpec {
    pub amplitude: f64,
    pub seed: u64,
    pub stream: u64,
}

impl ExcitationSpec {
    pub fn new(amplitude: f64, seed: u64) -> Self {
        ExcitationSpec {
            amplitude,
            seed,
            stream: 0,
        }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        ExcitationSpec { stream, ..self }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, m: usize, len: usize) -> Matrix {
        let a = self.amplitude;
        Matrix::from_fn(m, len, |_, _| rng.gen_range(-a..=a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Zero before `start_step`, `value` afterwards.
    Step,
    /// `value` at all times.
    Constant,
}

/// Reference `r(t)` to be tracked by the output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    pub kind: ReferenceKind,
    pub value: Vector,
    pub start_step: usize,
}

impl ReferenceSignal {
    pub fn step(value: Vector, start_step: usize) -> Self {
        ReferenceSignal {
            kind: ReferenceKind::Step,
            value,
            start_step,
        }
    }

    pub fn constant(value: Vector) -> Self {
        ReferenceSignal {
            kind: ReferenceKind::Constant,
            value,
            start_step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    pub fn at(&self, t: usize) -> Vector {
        match self.kind {
            ReferenceKind::Step if t < self.start_step => Vector::zeros(self.value.len()),
            _ => self.value.clone(),
        }
    }

    /// `col(r(t), …, r(t + horizon − 1))`.
    pub fn preview(&self, t: usize, horizon: usize) -> Vector {
        let p = self.value.len();
        let mut out = Vector::zeros(p * horizon);
        for k in 0..horizon {
            out.rows_mut(k * p, p).copy_from(&self.at(t + k));
        }
        out
    }
}

/// One pre-experiment record. Columns are time samples; the first
/// `initial_offset` samples form the history window preceding episode time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub inputs: Matrix,
    pub outputs: Matrix,
    pub initial_offset: usize,
}

impl EpisodeData {
    pub fn new(inputs: Matrix, outputs: Matrix, initial_offset: usize) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(Error::invalid(format!(
                "episode has {} input samples but {} output samples",
                inputs.ncols(),
                outputs.ncols()
            )));
        }
        if inputs.nrows() == 0 || outputs.nrows() == 0 {
            return Err(Error::invalid("episode signals must have nonzero dimension"));
        }
        if inputs.ncols() < initial_offset + 1 {
            return Err(Error::InsufficientData(format!(
                "episode of {} samples cannot hold an offset of {initial_offset}",
                inputs.ncols()
            )));
        }
        ensure_finite(&inputs, "episode inputs")?;
        ensure_finite(&outputs, "episode outputs")?;
        Ok(EpisodeData {
            inputs,
            outputs,
            initial_offset,
        })
    }

    /// Total number of samples, including the offset window.
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn p(&self) -> usize {
        self.outputs.nrows()
    }

    /// Writes `t,u_1..u_m,y_1..y_p` rows; `t` is episode time, so the offset
    /// window has negative indices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.m()).map(|i| format!("u_{i}")));
        header.extend((1..=self.p()).map(|i| format!("y_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let t = k as i64 - self.initial_offset as i64;
            let mut row = vec![t.to_string()];
            row.extend(self.inputs.column(k).iter().map(|v| v.to_string()));
            row.extend(self.outputs.column(k).iter().map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let header = header?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::parse(1, "first column must be t"));
        }
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let p = cols.iter().filter(|c| c.starts_with("y_")).count();
        if m == 0 || p == 0 || cols.len() != 1 + m + p {
            return Err(Error::parse(1, "expected columns t,u_1..u_m,y_1..y_p"));
        }
        let mut times = Vec::new();
        let mut u = Vec::new();
        let mut y = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + m + p {
                return Err(Error::parse(idx + 1, "wrong number of fields"));
            }
            let t: i64 = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(idx + 1, "bad time index"))?;
            times.push(t);
            for (k, f) in fields[1..].iter().enumerate() {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(idx + 1, format!("bad number {f:?}")))?;
                if k < m {
                    u.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        let len = times.len();
        if len == 0 {
            return Err(Error::parse(2, "episode has no samples"));
        }
        if times.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::parse(2, "time index must increase by one per row"));
        }
        if times[0] > 0 {
            return Err(Error::parse(2, "episode must start at or before t = 0"));
        }
        let offset = (-times[0]) as usize;
        let inputs = Matrix::from_column_slice(m, len, &u);
        let outputs = Matrix::from_column_slice(p, len, &y);
        EpisodeData::new(inputs, outputs, offset)
    }
}

fn check_inputs(sys: &LtiSystem, x0: &Vector, inputs: &Matrix) -> Result<()> {
    if x0.len() != sys.n() {
        return Err(Error::invalid(format!("x0 has length {}, expected {}", x0.len(), sys.n())));
    }
    if inputs.nrows() != sys.m() {
        return Err(Error::invalid(format!(
            "inputs have dimension {}, expected {}",
            inputs.nrows(),
            sys.m()
        )));
    }
    ensure_finite_vec(x0, "x0")?;
    ensure_finite(inputs, "inputs")
}

/// Simulates `len(inputs)` steps from `x0` and returns the noisy outputs
/// `y(t) = C x(t) + n(t)`, one column per step.
pub fn simulate(sys: &LtiSystem, x0: &Vector, inputs: &Matrix, noise: &NoiseSpec) -> Result<Matrix> {
    check_inputs(sys, x0, inputs)?;
    let mut source = noise.source();
    Ok(run(sys, x0, inputs, &mut source))
}

fn run(sys: &LtiSystem, x0: &Vector, inputs: &Matrix, noise: &mut NoiseSource) -> Matrix {
    let p = sys.p();
    let mut y = Matrix::zeros(p, inputs.ncols());
    let mut x = x0.clone();
    for t in 0..inputs.ncols() {
        let yt = sys.output(&x) + noise.sample(p);
        y.set_column(t, &yt);
        x = sys.next_state(&x, &inputs.column(t).into_owned());
    }
    y
}

/// Draws an excitation of `len` samples (re-drawing until it is persistently
/// exciting of order `pe_order`, when given) and records the plant response
/// from rest.
pub fn collect_samples(
    sys: &LtiSystem,
    len: usize,
    initial_offset: usize,
    pe_order: Option<usize>,
    excitation: &ExcitationSpec,
    noise: &NoiseSpec,
) -> Result<EpisodeData> {
    if !(excitation.amplitude > 0.0) || !excitation.amplitude.is_finite() {
        return Err(Error::invalid("excitation amplitude must be positive"));
    }
    let mut rng = seeded_rng(excitation.seed, excitation.stream);
    let inputs = match pe_order {
        None => excitation.draw(&mut rng, sys.m(), len),
        Some(order) => {
            let mut accepted = None;
            for _ in 0..MAX_EXCITATION_ATTEMPTS {
                let u = excitation.draw(&mut rng, sys.m(), len);
                if is_persistently_exciting(&u, order, DEFAULT_REL_TOL).0 {
                    accepted = Some(u);
                    break;
                }
            }
            accepted.ok_or(Error::ExcitationFailure {
                order,
                attempts: MAX_EXCITATION_ATTEMPTS,
            })?
        }
    };
    let mut source = noise.source();
    let outputs = run(sys, &Vector::zeros(sys.n()), &inputs, &mut source);
    EpisodeData::new(inputs, outputs, initial_offset)
}

/// Pre-experiment for data-driven identification: `t_len + nbar` samples
/// from rest, with the first `nbar` reserved as history window and the input
/// persistently exciting of order `2·nbar + 1`.
pub fn collect_episode(
    sys: &LtiSystem,
    t_len: usize,
    nbar: usize,
    excitation: &ExcitationSpec,
    noise: &NoiseSpec,
) -> Result<EpisodeData> {
    if nbar == 0 {
        return Err(Error::invalid("nbar must be at least 1"));
    }
    if t_len < 4 * nbar + 1 {
        return Err(Error::InsufficientData(format!(
            "episode length T = {t_len} is below 4·nbar + 1 = {}",
            4 * nbar + 1
        )));
    }
    collect_samples(sys, t_len + nbar, nbar, Some(2 * nbar + 1), excitation, noise)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkName {
    InvertedPendulum,
    TwoMass,
    FourTank,
}

impl BenchmarkName {
    pub const ALL: [BenchmarkName; 3] = [
        BenchmarkName::InvertedPendulum,
        BenchmarkName::TwoMass,
        BenchmarkName::FourTank,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchmarkName::InvertedPendulum => "inverted_pendulum",
            BenchmarkName::TwoMass => "two_mass",
            BenchmarkName::FourTank => "four_tank",
        }
    }
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverted_pendulum" | "pendulum" => Ok(BenchmarkName::InvertedPendulum),
            "two_mass" => Ok(BenchmarkName::TwoMass),
            "four_tank" => Ok(BenchmarkName::FourTank),
            other => Err(Error::NotFound(format!("unknown benchmark {other:?}"))),
        }
    }
}

/// Per-benchmark control and experiment defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkDefaults {
    pub horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    /// Same interval for every input component; `None` when unconstrained.
    pub input_bounds: Option<(f64, f64)>,
    pub output_bounds: Option<(f64, f64)>,
    pub reference: ReferenceSignal,
    pub n_sim: usize,
    /// Data length `T` per identification episode. `None` uses the smallest
    /// admissible length `(1 + m)(2·nbar + 1) − 1`.
    pub data_length: Option<usize>,
    /// Samples per DeePC episode.
    pub deepc_episode_length: usize,
    pub t_ini: usize,
    pub lambda_g: f64,
    pub lambda_y: f64,
    /// Half-width of the uniform excitation input.
    pub excitation_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: BenchmarkName,
    pub system: LtiSystem,
    pub defaults: BenchmarkDefaults,
}

impl Benchmark {
    pub fn get(name: BenchmarkName) -> Benchmark {
        match name {
            BenchmarkName::InvertedPendulum => inverted_pendulum(),
            BenchmarkName::TwoMass => two_mass(),
            BenchmarkName::FourTank => four_tank(),
        }
    }

    /// Episode data length `T` for an identification with order bound `nbar`.
    pub fn data_length(&self, nbar: usize) -> usize {
        let m = self.system.m();
        let minimal = (1 + m) * (2 * nbar + 1) - 1;
        self.defaults.data_length.unwrap_or(minimal).max(4 * nbar + 1)
    }
}

/// Looks a benchmark up by name.
pub fn benchmark(name: &str) -> Result<Benchmark> {
    name.parse::<BenchmarkName>().map(Benchmark::get)
}

fn sys_from_rows(n: usize, m: usize, p: usize, a: &[f64], b: &[f64], c: &[f64]) -> LtiSystem {
    LtiSystem::new(
        Matrix::from_row_slice(n, n, a),
        Matrix::from_row_slice(n, m, b),
        Matrix::from_row_slice(p, n, c),
    )
    .expect("benchmark matrices are consistent")
}

fn inverted_pendulum() -> Benchmark {
    #[rustfmt::skip]
    let a = [
         1.208,  0.106, 0.0, 0.096,
         4.187,  1.194, 0.0, 1.779,
        -0.016, -0.001, 1.0, 0.070,
        -0.299, -0.015, 0.0, 0.460,
    ];
    let b = [-0.022, -0.414, 0.007, 0.126];
    let c = [0.0, 0.0, 1.0, 0.0];
    Benchmark {
        name: BenchmarkName::InvertedPendulum,
        system: sys_from_rows(4, 1, 1, &a, &b, &c),
        defaults: BenchmarkDefaults {
            horizon: 20,
            q: Matrix::from_element(1, 1, 1000.0),
            r: Matrix::from_element(1, 1, 1.0),
            input_bounds: Some((-20.0, 20.0)),
            output_bounds: None,
            reference: ReferenceSignal::step(Vector::from_element(1, 1.0), 0),
            n_sim: 80,
            data_length: None,
            deepc_episode_length: 29,
            t_ini: 4,
            lambda_g: 500.0,
            lambda_y: 5e5,
            excitation_amplitude: 1.0,
        },
    }
}

fn two_mass() -> Benchmark {
    #[rustfmt::skip]
    let a = [
         0.990, 0.100,  0.01,  0.000,
        -0.193, 0.990,  0.193, 0.010,
         0.098, 0.003,  0.902, 0.097,
         1.928, 0.098, -1.93,  0.902,
    ];
    let b = [0.005, 0.010, 0.000, 0.003];
    let c = [0.0, 0.0, 1.0, 0.0];
    Benchmark {
        name: BenchmarkName::TwoMass,
        system: sys_from_rows(4, 1, 1, &a, &b, &c),
        defaults: BenchmarkDefaults {
            horizon: 20,
            q: Matrix::from_element(1, 1, 200.0),
            r: Matrix::from_element(1, 1, 1.0),
            input_bounds: Some((-2.0, 2.0)),
            output_bounds: None,
            reference: ReferenceSignal::step(Vector::from_element(1, 1.0), 0),
            n_sim: 300,
            data_length: Some(100),
            deepc_episode_length: 100,
            t_ini: 15,
            lambda_g: 500.0,
            lambda_y: 5e5,
            excitation_amplitude: 2.0,
        },
    }
}

fn four_tank() -> Benchmark {
    #[rustfmt::skip]
    let a = [
        0.921, 0.0,   0.041, 0.0,
        0.0,   0.918, 0.0,   0.033,
        0.0,   0.0,   0.924, 0.0,
        0.0,   0.0,   0.0,   0.937,
    ];
    #[rustfmt::skip]
    let b = [
        0.017, 0.001,
        0.001, 0.023,
        0.0,   0.061,
        0.072, 0.0,
    ];
    #[rustfmt::skip]
    let c = [
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
    ];
    Benchmark {
        name: BenchmarkName::FourTank,
        system: sys_from_rows(4, 2, 2, &a, &b, &c),
        defaults: BenchmarkDefaults {
            horizon: 30,
            q: Matrix::identity(2, 2) * 3.0,
            r: Matrix::identity(2, 2) * 0.01,
            input_bounds: None,
            output_bounds: None,
            reference: ReferenceSignal::constant(Vector::from_vec(vec![0.65, 0.77])),
            n_sim: 300,
            data_length: Some(400),
            deepc_episode_length: 400,
            t_ini: 30,
            lambda_g: 0.1,
            lambda_y: 1000.0,
            excitation_amplitude: 1.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_dynamics_give_zero_output() {
        let bm = Benchmark::get(BenchmarkName::TwoMass);
        let y = simulate(&bm.system, &Vector::zeros(4), &Matrix::zeros(1, 10), &NoiseSpec::none()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pendulum_free_response_from_third_state() {
        let bm = Benchmark::get(BenchmarkName::InvertedPendulum);
        let mut x0 = Vector::zeros(4);
        x0[2] = 1.0;
        let y = simulate(&bm.system, &x0, &Matrix::zeros(1, 2), &NoiseSpec::none()).unwrap();
        assert_eq!(y[(0, 0)], 1.0);
        assert_eq!(y[(0, 1)], 1.0);
    }

    #[test]
    fn two_mass_unit_input_two_steps() {
        let bm = Benchmark::get(BenchmarkName::TwoMass);
        let sys = &bm.system;
        let y = simulate(sys, &Vector::zeros(4), &Matrix::from_element(1, 3, 1.0), &NoiseSpec::none()).unwrap();
        // Oracle: x(2) = A B + B for u = 1, written out by hand.
        let (a, b) = (sys.a(), sys.b());
        let x2: Vec<f64> = (0..4)
            .map(|i| (0..4).map(|k| a[(i, k)] * b[(k, 0)]).sum::<f64>() + b[(i, 0)])
            .collect();
        let expected: f64 = (0..4).map(|i| sys.c()[(0, i)] * x2[i]).sum();
        assert_eq!(y[(0, 0)], 0.0);
        assert_eq!(y[(0, 1)], 0.0);
        assert!((y[(0, 2)] - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let bm = Benchmark::get(BenchmarkName::FourTank);
        let err = simulate(&bm.system, &Vector::zeros(4), &Matrix::zeros(1, 3), &NoiseSpec::none());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        assert!(LtiSystem::new(Matrix::zeros(2, 3), Matrix::zeros(2, 1), Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn episode_lengths_and_excitation() {
        let bm = Benchmark::get(BenchmarkName::InvertedPendulum);
        let ep = collect_episode(&bm.system, 17, 4, &ExcitationSpec::new(1.0, 3), &NoiseSpec::none()).unwrap();
        assert_eq!(ep.len(), 21);
        assert_eq!(ep.initial_offset, 4);
        assert!(is_persistently_exciting(&ep.inputs, 9, DEFAULT_REL_TOL).0);
        assert!(collect_episode(&bm.system, 16, 4, &ExcitationSpec::new(1.0, 3), &NoiseSpec::none()).is_err());
    }

    #[test]
    fn episodes_are_deterministic() {
        let bm = Benchmark::get(BenchmarkName::FourTank);
        let exc = ExcitationSpec::new(1.0, 42).with_stream(3);
        let noise = NoiseSpec::new(0.1, 42).unwrap().with_stream(4);
        let a = collect_episode(&bm.system, 200, 10, &exc, &noise).unwrap();
        let b = collect_episode(&bm.system, 200, 10, &exc, &noise).unwrap();
        assert_eq!(a, b);
        let c = collect_episode(&bm.system, 200, 10, &exc.with_stream(5), &noise).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn excitation_failure_after_retries() {
        // Too short to ever be persistently exciting of order 2·nbar + 1 = 9 with m = 2.
        let bm = Benchmark::get(BenchmarkName::FourTank);
        let err = collect_episode(&bm.system, 17, 4, &ExcitationSpec::new(1.0, 1), &NoiseSpec::none());
        assert!(matches!(err, Err(Error::ExcitationFailure { order: 9, attempts: 10 })));
    }

    #[test]
    fn unstable_pendulum_episode_grows_large() {
        let bm = Benchmark::get(BenchmarkName::InvertedPendulum);
        let ep = collect_samples(&bm.system, 56, 0, None, &ExcitationSpec::new(1.0, 7), &NoiseSpec::none()).unwrap();
        let y55 = ep.outputs[(0, 55)].abs().log10();
        // Reported magnitude is ~6.6e10; accept two decades either side.
        assert!((8.8..=12.8).contains(&y55), "log10|y_d(55)| = {y55}");
    }

    #[test]
    fn benchmark_literals() {
        let p = benchmark("inverted_pendulum").unwrap();
        assert_eq!(p.system.a()[(0, 0)], 1.208);
        assert_eq!(p.system.b()[(1, 0)], -0.414);
        assert_eq!(p.system.c(), &Matrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(p.defaults.horizon, 20);
        assert_eq!(p.defaults.q[(0, 0)], 1000.0);
        assert_eq!(p.defaults.input_bounds, Some((-20.0, 20.0)));

        let t = benchmark("four_tank").unwrap();
        assert_eq!(t.system.b().shape(), (4, 2));
        assert_eq!(t.system.b()[(3, 0)], 0.072);
        assert_eq!(t.system.c(), &Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert_eq!(t.defaults.horizon, 30);
        assert_eq!(t.defaults.q, Matrix::identity(2, 2) * 3.0);
        assert_eq!(t.defaults.r, Matrix::identity(2, 2) * 0.01);
        assert_eq!(t.defaults.input_bounds, None);

        let m = benchmark("two_mass").unwrap();
        assert_eq!(m.defaults.q[(0, 0)], 200.0);
        assert_eq!(m.defaults.input_bounds, Some((-2.0, 2.0)));
        assert_eq!(m.system.a()[(3, 2)], -1.93);

        assert!(matches!(benchmark("cart_pole"), Err(Error::NotFound(_))));
    }

    #[test]
    fn reference_preview() {
        let r = ReferenceSignal::step(Vector::from_element(1, 2.0), 3);
        let prev = r.preview(1, 4);
        assert_eq!(prev.as_slice(), &[0.0, 0.0, 2.0, 2.0]);
        let c = ReferenceSignal::constant(Vector::from_vec(vec![0.65, 0.77]));
        assert_eq!(c.preview(0, 2).as_slice(), &[0.65, 0.77, 0.65, 0.77]);
    }

    #[test]
    fn episode_csv_roundtrip() {
        let bm = Benchmark::get(BenchmarkName::FourTank);
        let ep = collect_episode(&bm.system, 200, 6, &ExcitationSpec::new(1.0, 9), &NoiseSpec::new(0.01, 9).unwrap()).unwrap();
        let mut buf = Vec::new();
        ep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u_1,u_2,y_1,y_2\n-6,"));
        let back = EpisodeData::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, ep);
    }

    #[test]
    fn noise_bound_over_many_samples() {
        let mut src = NoiseSpec::new(0.3, 5).unwrap().source();
        let mut max: f64 = 0.0;
        for _ in 0..50_000 {
            max = max.max(src.sample(2).amax());
        }
        assert!(max <= 0.3);
        assert!(max > 0.29);
    }

    fn stable_system() -> LtiSystem {
        let a = Matrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.1, 0.7, 0.3, 0.0, 0.1, 0.4]);
        let b = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, -1.0]);
        let c = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        LtiSystem::new(a, b, c).unwrap()
    }

    proptest! {
        #[test]
        fn simulation_is_linear(seed in any::<u64>(), len in 1usize..40) {
            let sys = stable_system();
            let mut rng = seeded_rng(seed, 0);
            let u1 = Matrix::from_fn(2, len, |_, _| rng.gen_range(-1.0..1.0));
            let u2 = Matrix::from_fn(2, len, |_, _| rng.gen_range(-1.0..1.0));
            let x0 = Vector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let none = NoiseSpec::none();
            let y12 = simulate(&sys, &x0, &(&u1 + &u2), &none).unwrap();
            let y1 = simulate(&sys, &x0, &u1, &none).unwrap();
            let y2 = simulate(&sys, &Vector::zeros(3), &u2, &none).unwrap();
            let diff = (&y12 - (y1 + y2)).amax();
            prop_assert!(diff <= 1e-9 * (1.0 + y12.amax()));
        }

        #[test]
        fn noise_never_exceeds_intensity(intensity in 0.0f64..10.0, seed in any::<u64>()) {
            let mut src = NoiseSpec::new(intensity, seed).unwrap().source();
            for _ in 0..2_000 {
                prop_assert!(src.sample(3).amax() <= intensity);
            }
        }
    }
}
