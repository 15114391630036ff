//! Command-line surface: `run`, `sweep`, `table`, `plot-data`, `selftest`.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::algorithms::Method;
use crate::harness::{
    problem_stream, run_benchmark, run_sweep, summarize_sweep, RunRecord, SearchSpace, SweepConfig,
};
use crate::math::RngStream;
use crate::problems::{dump_environments, instantiate_problem, ProblemSpec};
use crate::report::{
    plot_data_csv, read_records, render_table, sweep_csv, table_csv, write_records,
    write_sweep_records,
};
use crate::{selftest, Result};

#[derive(Debug, Parser)]
#[command(
    name = "invbench",
    version,
    about = "Linear invariance benchmark problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the search/selection protocol over a problem × method grid.
    Run(RunArgs),
    /// Environment-count or spurious-dimension sweep.
    Sweep(SweepArgs),
    /// Render the test-error table from a record CSV.
    Table(TableArgs),
    /// Environment-averaged test errors from a record CSV.
    PlotData(PlotDataArgs),
    /// Quick gradient, rotation, shuffle and determinism checks.
    Selftest,
}

#[derive(Debug, Clone, Args)]
pub struct Protocol {
    /// Methods to train (comma-separated).
    #[arg(long = "method", value_delimiter = ',',
          default_values = ["ANDMask", "ERM", "IGA", "IRMv1", "Oracle"])]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    pub d_inv: usize,
    #[arg(long, default_value_t = 5)]
    pub d_spu: usize,
    #[arg(long, default_value_t = 3)]
    pub n_env: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_per_env: usize,
    /// Random-search trials per method.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Repetitions (full resamples of problem, data and search).
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    /// Full-batch Adam updates per trial.
    #[arg(long, default_value_t = 10_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "INVBENCH_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, short, default_value = "results")]
    pub out: PathBuf,
}

impl Protocol {
    fn space(&self) -> SearchSpace {
        SearchSpace {
            n_trials: self.trials,
            steps: self.steps,
            ..SearchSpace::default()
        }
    }

    fn methods(&self) -> Vec<Method> {
        // canonical order, no duplicates
        self.methods
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Problems to run (comma-separated, e.g. example1,example2s).
    #[arg(long = "problem", value_delimiter = ',',
          default_values = ["example1", "example1s", "example2", "example2s", "example3", "example3s"])]
    pub problems: Vec<ProblemSpec>,
    #[command(flatten)]
    pub protocol: Protocol,
    /// Also dump repetition 0's datasets as CSV into this directory.
    #[arg(long)]
    pub dump_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    DeltaEnv,
    DeltaSpu,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Axis grid: n_env values for delta-env, d_spu values for delta-spu.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    #[arg(long = "problem", value_delimiter = ',',
          default_values = ["example1", "example1s", "example2", "example2s", "example3", "example3s"])]
    pub problems: Vec<ProblemSpec>,
    #[command(flatten)]
    pub protocol: Protocol,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Record CSV written by `run`.
    pub records: PathBuf,
    /// Emit comma-separated values instead of the aligned table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// Record CSV written by `run`.
    pub records: PathBuf,
}

fn setup_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    read_records(fs::File::open(path)?)
}

/// Every requested (problem, method, env) cell has a usable record.
fn all_cells_present(records: &[RunRecord], problems: &[ProblemSpec], methods: &[Method]) -> bool {
    problems.iter().all(|p| {
        methods.iter().all(|&m| {
            (0..p.n_env).all(|e| {
                records
                    .iter()
                    .any(|r| r.problem == p.name() && r.algorithm == m && r.env == e && !r.diverged)
            })
        })
    })
}

fn specs_with_dims(problems: &[ProblemSpec], p: &Protocol) -> Vec<ProblemSpec> {
    let mut seen = BTreeSet::new();
    problems
        .iter()
        .filter(|s| seen.insert(s.name()))
        .map(|s| {
            s.clone()
                .with_dims(p.d_inv, p.d_spu, p.n_env)
                .with_n_per_env(p.n_per_env)
        })
        .collect()
}

pub fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let p = &args.protocol;
    setup_workers(p.workers);
    let specs = specs_with_dims(&args.problems, p);
    for s in &specs {
        s.validate()?;
    }
    let methods = p.methods();
    let space = p.space();
    let root = RngStream::new(p.seed);

    if let Some(dir) = &args.dump_data {
        for spec in &specs {
            let rep0 = problem_stream(&root, spec).split(0);
            let inst = instantiate_problem(spec, &rep0.split(0))?;
            let envs = inst.build_environments(false, &rep0.split(1))?;
            dump_environments(dir, &spec.name(), &envs)?;
            if methods.iter().any(|m| m.is_oracle()) {
                let envs = inst.build_environments(true, &rep0.split(1))?;
                dump_environments(dir, &format!("{}_oracle", spec.name()), &envs)?;
            }
        }
    }

    let mut records = Vec::new();
    for spec in &specs {
        log::info!("{spec}: {} methods × {} repetitions", methods.len(), p.reps);
        records.extend(run_benchmark(
            spec,
            &methods,
            &space,
            p.reps,
            &problem_stream(&root, spec),
        )?);
    }

    fs::create_dir_all(&p.out)?;
    let path = p.out.join("records.csv");
    write_records(&records, BufWriter::new(fs::File::create(&path)?))?;
    log::info!("wrote {}", path.display());
    let table = render_table(&records);
    write_file(&p.out.join("table.txt"), &table)?;
    write_file(&p.out.join("table.csv"), &table_csv(&records)?)?;
    print!("{table}");

    Ok(if all_cells_present(&records, &specs, &methods) {
        ExitCode::SUCCESS
    } else {
        log::warn!("some requested cells have no non-diverged record");
        ExitCode::FAILURE
    })
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let p = &args.protocol;
    setup_workers(p.workers);
    let mut config = match args.axis {
        AxisArg::DeltaEnv => SweepConfig {
            fixed: p.d_spu,
            ..SweepConfig::delta_env()
        },
        AxisArg::DeltaSpu => SweepConfig {
            fixed: p.n_env,
            ..SweepConfig::delta_spu()
        },
    };
    config.d_inv = p.d_inv;
    config.n_per_env = p.n_per_env;
    if !args.values.is_empty() {
        config.values = args.values.clone();
    }
    let methods = p.methods();
    let problems: Vec<ProblemSpec> = specs_with_dims(&args.problems, p);
    let records = run_sweep(
        &config,
        &problems,
        &methods,
        &p.space(),
        p.reps,
        &RngStream::new(p.seed),
    )?;

    fs::create_dir_all(&p.out)?;
    let rec_path = p.out.join("sweep_records.csv");
    write_sweep_records(&records, BufWriter::new(fs::File::create(&rec_path)?))?;
    let points = summarize_sweep(&records);
    let csv = sweep_csv(&points)?;
    write_file(&p.out.join("sweep.csv"), &csv)?;
    print!("{csv}");

    let expected_values = config.values.iter().collect::<BTreeSet<_>>().len();
    let complete = points.len() == expected_values * problems.len() * methods.len();
    Ok(if complete {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn cmd_table(args: &TableArgs) -> Result<ExitCode> {
    let records = load_records(&args.records)?;
    if args.csv {
        print!("{}", table_csv(&records)?);
    } else {
        print!("{}", render_table(&records));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_plot_data(args: &PlotDataArgs) -> Result<ExitCode> {
    let records = load_records(&args.records)?;
    print!("{}", plot_data_csv(&records)?);
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_selftest() -> Result<ExitCode> {
    let checks = selftest::run_all()?;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn execute(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Table(a) => cmd_table(a),
        Command::PlotData(a) => cmd_plot_data(a),
        Command::Selftest => cmd_selftest(),
    }
}
