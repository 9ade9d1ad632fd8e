use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use d2pc::controllers::run_closed_loop;
use d2pc::datadriven::identify;
use d2pc::harness::{
    build_controller, nominal_outputs, reproduce_table, run_experiment, table_title, DeepcData, ExperimentSpec, Method,
    TableOptions, TABLE_IDS,
};
use d2pc::numerics::{Vector, IDENTIFICATION_REL_TOL};
use d2pc::plant::{collect_episode, Benchmark, BenchmarkName, EpisodeData, ExcitationSpec, NoiseSpec};
use d2pc::Error;

#[derive(Parser)]
#[command(name = "d2pc", version, about = "Data-driven predictive control benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed loop and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the first-step QP to this file.
        #[arg(long)]
        dump_qp: Option<PathBuf>,
    },
    /// Identify a data-driven model from episode CSV files or fresh episodes.
    Identify {
        #[command(flatten)]
        spec: SpecArgs,
        /// Episode CSV files (columns t, u_1..u_m, y_1..y_p). When omitted,
        /// `--nd` episodes are collected from the benchmark plant.
        #[arg(long, num_args = 1..)]
        episodes: Vec<PathBuf>,
        /// Model output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one seeded experiment and print its table cell.
    Experiment {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Per-trial CSV (summary only when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce a benchmark table as CSV.
    Table {
        /// Table id (1-9).
        id: u32,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        nsim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// inverted_pendulum, two_mass or four_tank.
    #[arg(long, default_value = "two_mass")]
    benchmark: String,
    /// mpc, deepc, rdeepc or d2pc.
    #[arg(long, default_value = "d2pc")]
    method: String,
    #[arg(long)]
    nbar: Option<usize>,
    /// Number of averaged episodes.
    #[arg(long)]
    nd: Option<usize>,
    #[arg(long)]
    tini: Option<usize>,
    /// Number of mosaic DeePC episodes.
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    lambda_y: Option<f64>,
    /// Build DeePC blocks by averaging `--nd` episodes instead of concatenating `--q`.
    #[arg(long)]
    averaged: bool,
    /// Noise intensity A_n (uniform on [-A_n, A_n]).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    nsim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SpecArgs {
    fn to_spec(&self) -> Result<ExperimentSpec, Error> {
        let bench: BenchmarkName = self.benchmark.parse()?;
        let method: Method = self.method.parse()?;
        let mut s = ExperimentSpec::new(bench, method);
        if let Some(v) = self.nbar {
            s.nbar = v;
        }
        if let Some(v) = self.nd {
            s.n_d = v;
        }
        if let Some(v) = self.tini {
            s.t_ini = v;
        }
        if let Some(v) = self.q {
            s.q = v;
        }
        if let Some(v) = self.lambda_g {
            s.lambda_g = v;
        }
        if let Some(v) = self.lambda_y {
            s.lambda_y = v;
        }
        if let Some(v) = self.nsim {
            s.n_sim = v;
        }
        if self.averaged {
            s.deepc_data = DeepcData::Averaged;
        }
        s.noise = self.noise;
        s.base_seed = self.seed;
        Ok(s)
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(args: &SpecArgs, out: Option<&Path>, dump_qp: Option<&Path>) -> Result<(), Error> {
    let mut spec = args.to_spec()?;
    spec.trials = 1;
    spec.validate()?;
    let bench = Benchmark::get(spec.benchmark);
    let mut controller = build_controller(&spec, spec.base_seed)?;
    if let Some(path) = dump_qp {
        let x0 = Vector::zeros(bench.system.n());
        match controller.current_problem(0, &x0, &bench.defaults.reference)? {
            Some(prob) => prob.write_text(BufWriter::new(File::create(path)?))?,
            None => log::warn!("no QP to dump: history is not finite"),
        }
    }
    let noise = NoiseSpec::new(spec.noise, spec.base_seed)?.with_stream(0);
    let traj = run_closed_loop(&bench.system, controller.as_mut(), &bench.defaults.reference, &noise, spec.n_sim)?;
    let y_nom = nominal_outputs(spec.benchmark, spec.n_sim)?;
    traj.write_csv(output(out)?, Some(&y_nom))?;
    if traj.failed {
        eprintln!("solver failure at step {}", traj.len() - 1);
    }
    Ok(())
}

fn identify_cmd(args: &SpecArgs, files: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    let spec = args.to_spec()?;
    let nbar = spec.nbar;
    let episodes: Vec<EpisodeData> = if files.is_empty() {
        let bench = Benchmark::get(spec.benchmark);
        let t_len = bench.data_length(nbar);
        (0..spec.n_d)
            .map(|e| {
                collect_episode(
                    &bench.system,
                    t_len,
                    nbar,
                    &ExcitationSpec::new(spec.excitation_amplitude, spec.base_seed).with_stream(2 * e as u64 + 1),
                    &NoiseSpec::new(spec.noise, spec.base_seed)?.with_stream(2 * e as u64 + 2),
                )
            })
            .collect::<Result<_, _>>()?
    } else {
        files
            .iter()
            .map(|p| EpisodeData::read_csv(BufReader::new(File::open(p)?)))
            .collect::<Result<_, _>>()?
    };
    let model = identify(&episodes, nbar, IDENTIFICATION_REL_TOL)?;
    model.write_text(output(out)?)?;
    Ok(())
}

fn experiment(args: &SpecArgs, trials: usize, out: Option<&Path>) -> Result<(), Error> {
    let mut spec = args.to_spec()?;
    spec.trials = trials;
    let res = run_experiment(&spec)?;
    println!(
        "{} {} noise={:e}: mae={} fr={}",
        spec.benchmark,
        spec.label(),
        spec.noise,
        res.cell.mae_text(),
        res.cell.failure_ratio
    );
    if let Some(path) = out {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# benchmark,{}", spec.benchmark)?;
        writeln!(w, "# method,{}", spec.label())?;
        writeln!(w, "# noise,{:e}", spec.noise)?;
        writeln!(w, "# n_sim,{}", spec.n_sim)?;
        writeln!(w, "# base_seed,{}", spec.base_seed)?;
        writeln!(w, "trial,seed,failed,mae")?;
        for (k, t) in res.trials.iter().enumerate() {
            let mae = t.mae.map_or_else(|| "NA".to_string(), |v| format!("{v:.6e}"));
            writeln!(w, "{k},{},{},{mae}", t.seed, t.failed)?;
        }
        let mean = res.cell.mean_mae.map_or_else(|| "NA".to_string(), |v| format!("{v:.6e}"));
        writeln!(w, "mean,,{},{mean}", res.cell.failure_ratio)?;
    }
    Ok(())
}

fn table(id: u32, trials: usize, nsim: Option<usize>, seed: u64, out: Option<&Path>) -> Result<(), Error> {
    if table_title(id).is_none() {
        return Err(Error::NotFound(format!("unknown table id {id}; known: {TABLE_IDS:?}")));
    }
    let opts = TableOptions {
        trials,
        n_sim: nsim,
        base_seed: seed,
    };
    let default_path = PathBuf::from(format!("table{id}.csv"));
    let path = out.unwrap_or(&default_path);
    let report = reproduce_table(id, path, &opts)?;
    println!("{}", table_title(id).unwrap_or_default());
    for (e, c) in &report.entries {
        println!("{:<14} {:<22} mae={:<8} fr={}", e.row, e.column, c.mae_text(), c.failure_ratio);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::Config(_) | Error::NotFound(_) | Error::InvalidInput(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { spec, out, dump_qp } => simulate(spec, out.as_deref(), dump_qp.as_deref()),
        Command::Identify { spec, episodes, out } => identify_cmd(spec, episodes, out.as_deref()),
        Command::Experiment { spec, trials, out } => experiment(spec, *trials, out.as_deref()),
        Command::Table {
            id,
            trials,
            nsim,
            seed,
            out,
        } => table(*id, *trials, *nsim, *seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
