//! The `psmm` command-line tool.
//!
//! Exit codes: 0 on success, 2 for bad input or configuration, 3 when the
//! numerics fail. Diagnostics go to stderr as a single line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::TensorDataset;
use crate::error::{Error, Result};
use crate::io::{self, Estimate};
use crate::matnorm::{self, FlipFlopOptions};
use crate::pipeline::{self, PsmmConfig};
use crate::synth::{self, BenchmarkSpec, Method, Model};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "psmm", version, about = "Principal support matrix machines for matrix and tensor predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the row and column subspaces and write an estimate JSON.
    Fit(FitArgs),
    /// Project a dataset onto a fitted estimate and write the coordinates as CSV.
    Reduce(ReduceArgs),
    /// Draw a dataset from one of the benchmark models.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo benchmark grid and write one CSV row per fit.
    Benchmark(BenchmarkArgs),
    /// Fit the matrix-normal mean and Kronecker covariance factors.
    Cov(CovArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Auto,
    Fixed(usize),
}

impl Dim {
    fn get(self) -> Option<usize> {
        match self {
            Dim::Auto => None,
            Dim::Fixed(r) => Some(r),
        }
    }
}

fn parse_dim(s: &str) -> std::result::Result<Dim, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Dim::Auto);
    }
    s.parse().map(Dim::Fixed).map_err(|_| format!("expected \"auto\" or a positive integer, got {s:?}"))
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Number of response slices H.
    #[arg(long, default_value_t = pipeline::DEFAULT_SLICES)]
    slices: usize,
    /// Penalty λ; the per-sample cost is λ/n.
    #[arg(long, default_value_t = crate::smm::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = "auto", value_parser = parse_dim)]
    r1: Dim,
    #[arg(long, default_value = "auto", value_parser = parse_dim)]
    r2: Dim,
    /// Use one basis for rows and columns (square predictors).
    #[arg(long)]
    symmetric: bool,
    /// Relative objective tolerance of the alternating descent.
    #[arg(long, default_value_t = crate::smm::DEFAULT_TOL)]
    tol: f64,
    /// Maximum alternating sweeps per slice.
    #[arg(long, default_value_t = crate::smm::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Random starts in addition to the deterministic one.
    #[arg(long, default_value_t = crate::smm::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    #[arg(long)]
    input: PathBuf,
    /// Estimate JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum DataFormat {
    Mds1,
    Csv,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Benchmark model 1, 2 or 3.
    #[arg(long)]
    model: u32,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = synth::DEFAULT_NOISE_SD)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the true bases as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DataFormat::Mds1)]
    format: DataFormat,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long, default_value = "1,2,3")]
    models: String,
    #[arg(long, default_value = "psmm,psvm")]
    methods: String,
    /// Sample sizes as `start:stop:step` or a comma list.
    #[arg(long, default_value = "100:500:100")]
    n: String,
    #[arg(long, default_value = "5,10")]
    d: String,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Record wall-clock fit times (makes the output non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Select dimensions by BIC instead of using the true ones.
    #[arg(long)]
    select_dims: bool,
    #[arg(long, default_value_t = synth::DEFAULT_NOISE_SD)]
    noise_sd: f64,
    #[arg(long, default_value_t = pipeline::DEFAULT_SLICES)]
    slices: usize,
    #[arg(long, default_value_t = crate::smm::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = crate::smm::DEFAULT_RESTARTS)]
    restarts: usize,
}

#[derive(Debug, Args)]
struct CovArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = matnorm::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = matnorm::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    output: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("psmm: {}", line.trim_start_matches("error: "));
            return EXIT_INPUT;
        }
    };
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Reduce(a) => cmd_reduce(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Cov(a) => cmd_cov(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("psmm: error[{}]: {msg}", e.kind());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn read_input(path: &Path) -> Result<TensorDataset> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    io::read_dataset(&bytes)
}

fn write_output(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let config = PsmmConfig {
        slices: a.slices,
        lambda: a.lambda,
        r1: a.r1.get(),
        r2: a.r2.get(),
        symmetric: a.symmetric,
        seed: a.seed,
        smm_tol: a.tol,
        smm_max_iter: a.max_iter,
        restarts: a.restarts,
        ..PsmmConfig::default()
    };
    config.validate()?;
    let data = read_input(&a.input)?;
    let estimate = match data.to_matrix() {
        Some(m) => Estimate::Matrix(pipeline::fit_psmm(&m, &config)?),
        None => Estimate::Tensor(pipeline::fit_pstm(&data, &config)?),
    };
    write_output(&a.output, |w| io::write_estimate(w, &estimate))?;
    Ok(EXIT_OK)
}

fn cmd_reduce(a: &ReduceArgs) -> Result<i32> {
    let estimate = io::read_estimate(
        File::open(&a.model).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", a.model.display())))?,
    )?;
    let data = read_input(&a.input)?;
    match estimate {
        Estimate::Matrix(est) => {
            let m = data.to_matrix().ok_or_else(|| {
                Error::DimensionMismatch(format!("data has order {} but the estimate is for matrices", data.order()))
            })?;
            let reduced = pipeline::reduce(&m, &est)?;
            write_output(&a.output, |w| io::write_reduced_csv(w, &reduced))?;
        }
        Estimate::Tensor(est) => {
            let cores = pipeline::reduce_tensor(&data, &est)?;
            write_output(&a.output, |w| io::write_reduced_tensor_csv(w, &cores))?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let model = Model::from_id(a.model)?;
    let inst = synth::gen_model(model, a.n, a.d, a.noise_sd, a.seed)?;
    write_output(&a.output, |w| match a.format {
        DataFormat::Mds1 => io::write_mds1_matrix(w, &inst.dataset),
        DataFormat::Csv => io::write_csv_dataset(w, &inst.dataset),
    })?;
    if let Some(path) = &a.truth {
        let truth = io::TruthFile::new(model.id(), &inst.true_row_basis, &inst.true_col_basis);
        write_output(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &truth)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
    }
    Ok(EXIT_OK)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse {p:?} in --{what}")))
        })
        .collect()
}

/// `start:stop:step` (inclusive) or a comma-separated list.
fn parse_grid(s: &str, what: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [_] => parse_list(s, what),
        [start, stop, step] => {
            let num = |p: &str| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("cannot parse range {s:?} in --{what}")))
            };
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step == 0 || start > stop {
                return Err(Error::InvalidConfig(format!("--{what} range needs start <= stop and step >= 1")));
            }
            Ok((start..=stop).step_by(step).collect())
        }
        _ => Err(Error::InvalidConfig(format!("--{what} must be a list or start:stop:step"))),
    }
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<i32> {
    let models = parse_list::<u32>(&a.models, "models")?
        .into_iter()
        .map(Model::from_id)
        .collect::<Result<Vec<_>>>()?;
    let methods = a.methods.split(',').map(str::parse).collect::<Result<Vec<Method>>>()?;
    let mut spec = BenchmarkSpec::new(
        models,
        methods,
        parse_grid(&a.n, "n")?,
        parse_list(&a.d, "d")?,
        a.replicates,
    );
    spec.seed = a.seed;
    spec.noise_sd = a.noise_sd;
    spec.select_dims = a.select_dims;
    spec.timing = a.timing;
    spec.config.slices = a.slices;
    spec.config.lambda = a.lambda;
    spec.config.restarts = a.restarts;
    if a.jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be >= 1".into()));
    }
    let result = synth::run_benchmark(&spec, a.jobs)?;
    write_output(&a.output, |w| result.write_csv(w))?;
    Ok(EXIT_OK)
}

fn cmd_cov(a: &CovArgs) -> Result<i32> {
    let opts = FlipFlopOptions { tol: a.tol, max_iter: a.max_iter, ..FlipFlopOptions::default() };
    opts.validate()?;
    let data = read_input(&a.input)?;
    let m = data
        .to_matrix()
        .ok_or_else(|| Error::InvalidInput(format!("cov needs matrix predictors, got order {}", data.order())))?;
    match matnorm::flipflop_fit(&m, &opts) {
        Ok(p) => {
            write_output(&a.output, |w| io::write_cov(w, &p))?;
            Ok(EXIT_OK)
        }
        Err(Error::FlipFlopNotConverged(p)) => {
            write_output(&a.output, |w| io::write_cov(w, &p))?;
            eprintln!("psmm: error[flipflop_not_converged]: flip-flop did not converge in {} sweeps; output written", p.iterations);
            Ok(EXIT_NUMERICAL)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("100:500:100", "n").unwrap(), vec![100, 200, 300, 400, 500]);
        assert_eq!(parse_grid("5,10", "d").unwrap(), vec![5, 10]);
        assert_eq!(parse_grid("7", "d").unwrap(), vec![7]);
        assert!(parse_grid("5:1:1", "n").is_err());
        assert!(parse_grid("1:5:0", "n").is_err());
        assert!(parse_grid("1:x:2", "n").is_err());
    }

    #[test]
    fn dim_parsing() {
        assert_eq!(parse_dim("auto"), Ok(Dim::Auto));
        assert_eq!(parse_dim("3"), Ok(Dim::Fixed(3)));
        assert!(parse_dim("-1").is_err());
    }

    #[test]
    fn help_and_bad_flags() {
        assert_eq!(run(["psmm", "--version"]), EXIT_OK);
        assert_eq!(run(["psmm", "fit", "--bogus"]), EXIT_INPUT);
        assert_eq!(run(["psmm", "simulate", "--model", "4", "--n", "4", "--d", "2", "--output", "/dev/null"]), EXIT_INPUT);
    }
}
