//! Synthetic matrix-normal data, the benchmark models, the Kronecker subspace
//! distance, and the benchmark runner.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{MatrixDataset, TensorDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, kron, sym_sqrt};
use crate::pipeline::{self, derive_seed, PsmmConfig};
use crate::tensor::Tensor;

pub const DEFAULT_NOISE_SD: f64 = 0.2;
/// Largest row/column dimension for which projectors are formed explicitly.
pub const EXPLICIT_PROJECTOR_MAX_DIM: usize = 32;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` draws of `M + Σ_r^{1/2} G Σ_c^{1/2}` with `G` standard normal.
pub fn sample_matrix_normal(
    n: usize,
    mean: &DMatrix<f64>,
    sigma_row: &DMatrix<f64>,
    sigma_col: &DMatrix<f64>,
    seed: u64,
) -> Result<MatrixDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let (d1, d2) = mean.shape();
    if sigma_row.shape() != (d1, d1) || sigma_col.shape() != (d2, d2) {
        return Err(Error::DimensionMismatch(format!(
            "mean is {d1}x{d2} but factors are {:?} and {:?}",
            sigma_row.shape(),
            sigma_col.shape()
        )));
    }
    let r = sym_sqrt(sigma_row)?;
    let c = sym_sqrt(sigma_col)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let g = DMatrix::from_fn(d1, d2, |_, _| normal(&mut rng));
            mean + &r * g * &c
        })
        .collect();
    MatrixDataset::new(samples, None)
}

/// The three benchmark regression models on `X ~ MN(0, I, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Model {
    /// `exp(X₁₁) + X₁₂`
    One,
    /// `X₁₁ / {0.5 + (X₁₂ + 1)²}`
    Two,
    /// `X₁₁(X₁₂ + X₂₁ + 1) + X₁₁`
    Three,
}

impl Model {
    pub fn from_id(id: u32) -> Result<Model> {
        match id {
            1 => Ok(Model::One),
            2 => Ok(Model::Two),
            3 => Ok(Model::Three),
            _ => Err(Error::InvalidConfig(format!("model must be 1, 2 or 3, got {id}"))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Model::One => 1,
            Model::Two => 2,
            Model::Three => 3,
        }
    }

    /// Noise-free response.
    pub fn mean_response(self, x: &DMatrix<f64>) -> f64 {
        let (x11, x12, x21) = (x[(0, 0)], x[(0, 1)], x[(1, 0)]);
        match self {
            Model::One => x11.exp() + x12,
            Model::Two => x11 / (0.5 + (x12 + 1.0).powi(2)),
            Model::Three => x11 * (x12 + x21 + 1.0) + x11,
        }
    }

    /// True `(r1, r2)`.
    pub fn true_dims(self) -> (usize, usize) {
        match self {
            Model::One | Model::Two => (1, 2),
            Model::Three => (2, 2),
        }
    }

    pub fn true_bases(self, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let (r1, r2) = self.true_dims();
        (DMatrix::identity(d, r1), DMatrix::identity(d, r2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub dataset: MatrixDataset,
    pub true_row_basis: DMatrix<f64>,
    pub true_col_basis: DMatrix<f64>,
    pub model: Model,
    pub seed: u64,
    pub noise_sd: f64,
    /// The `ε_i` added to each response.
    pub noise: Vec<f64>,
}

/// `n` samples of a benchmark model with `d × d` predictors.
pub fn gen_model(model: Model, n: usize, d: usize, noise_sd: f64, seed: u64) -> Result<SyntheticInstance> {
    if d < 2 {
        return Err(Error::InvalidConfig(format!("models need d >= 2, got {d}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sd must be >= 0, got {noise_sd}")));
    }
    let eye = DMatrix::identity(d, d);
    let data = sample_matrix_normal(n, &DMatrix::zeros(d, d), &eye, &eye, derive_seed(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let noise: Vec<f64> = (0..n).map(|_| noise_sd * normal(&mut rng)).collect();
    let responses = data.samples().iter().zip(&noise).map(|(x, e)| model.mean_response(x) + e).collect();
    let (true_row_basis, true_col_basis) = model.true_bases(d);
    Ok(SyntheticInstance {
        dataset: data.with_responses(Some(responses))?,
        true_row_basis,
        true_col_basis,
        model,
        seed,
        noise_sd,
        noise,
    })
}

/// `Y = u₀ᵀXv₀ + ε` with standard matrix-normal `X`.
pub fn gen_rank1_matrix(
    n: usize,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    noise_sd: f64,
    seed: u64,
) -> Result<MatrixDataset> {
    let (d1, d2) = (u0.len(), v0.len());
    let data = sample_matrix_normal(
        n,
        &DMatrix::zeros(d1, d2),
        &DMatrix::identity(d1, d1),
        &DMatrix::identity(d2, d2),
        derive_seed(seed, &[0]),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let responses = data
        .samples()
        .iter()
        .map(|x| (u0.transpose() * x * v0)[0] + noise_sd * normal(&mut rng))
        .collect();
    data.with_responses(Some(responses))
}

/// `Y = X ×₁u₁ ⋯ ×_K u_K + ε` with i.i.d. standard normal tensor entries.
pub fn gen_rank1_tensor(n: usize, directions: &[DVector<f64>], noise_sd: f64, seed: u64) -> Result<TensorDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let dims: Vec<usize> = directions.iter().map(|u| u.len()).collect();
    let refs: Vec<&DVector<f64>> = directions.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let samples: Vec<Tensor> = (0..n).map(|_| Tensor::from_fn(dims.clone(), |_| normal(&mut rng))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let responses = samples
        .iter()
        .map(|x| Ok(x.contract(&refs, None)?.scalar().expect("full contraction") + noise_sd * normal(&mut rng)))
        .collect::<Result<Vec<f64>>>()?;
    TensorDataset::new(samples, Some(responses))
}

fn ortho(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.ncols() == 0 {
        return Err(Error::InvalidInput("basis has no columns".into()));
    }
    linalg::orthonormalize(b)
}

fn check_ambient(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{what} bases live in dimensions {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(())
}

/// `‖P_a − P_b‖_F` with explicit `d1d2 × d1d2` projectors onto
/// `span(B_c ⊗ B_r)`.
pub fn subspace_distance_explicit(
    row_a: &DMatrix<f64>,
    col_a: &DMatrix<f64>,
    row_b: &DMatrix<f64>,
    col_b: &DMatrix<f64>,
) -> Result<f64> {
    check_ambient(row_a, row_b, "row")?;
    check_ambient(col_a, col_b, "column")?;
    let ba = kron(&ortho(col_a)?, &ortho(row_a)?);
    let bb = kron(&ortho(col_b)?, &ortho(row_b)?);
    Ok((&ba * ba.transpose() - &bb * bb.transpose()).norm())
}

/// The same distance from `q_a + q_b − 2‖B_aᵀB_b‖_F²`, using
/// `(B_c ⊗ B_r)ᵀ(B_c' ⊗ B_r') = (B_cᵀB_c') ⊗ (B_rᵀB_r')`.
pub fn subspace_distance_gram(
    row_a: &DMatrix<f64>,
    col_a: &DMatrix<f64>,
    row_b: &DMatrix<f64>,
    col_b: &DMatrix<f64>,
) -> Result<f64> {
    check_ambient(row_a, row_b, "row")?;
    check_ambient(col_a, col_b, "column")?;
    let (ra, ca, rb, cb) = (ortho(row_a)?, ortho(col_a)?, ortho(row_b)?, ortho(col_b)?);
    let qa = (ra.ncols() * ca.ncols()) as f64;
    let qb = (rb.ncols() * cb.ncols()) as f64;
    let cross = (ra.transpose() * &rb).norm_squared() * (ca.transpose() * &cb).norm_squared();
    Ok((qa + qb - 2.0 * cross).max(0.0).sqrt())
}

/// Frobenius distance between the orthogonal projectors onto the
/// Kronecker-product subspaces `span(B_c ⊗ B_r)`. Bases are orthonormalized
/// first.
pub fn subspace_distance(
    row_a: &DMatrix<f64>,
    col_a: &DMatrix<f64>,
    row_b: &DMatrix<f64>,
    col_b: &DMatrix<f64>,
) -> Result<f64> {
    if row_a.nrows().max(col_a.nrows()) <= EXPLICIT_PROJECTOR_MAX_DIM {
        subspace_distance_explicit(row_a, col_a, row_b, col_b)
    } else {
        subspace_distance_gram(row_a, col_a, row_b, col_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Psmm,
    Psvm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Psmm => "psmm",
            Method::Psvm => "psvm",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psmm" => Ok(Method::Psmm),
            "psvm" => Ok(Method::Psvm),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?} (expected psmm or psvm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub models: Vec<Model>,
    pub methods: Vec<Method>,
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub replicates: usize,
    /// Fit settings; dimensions are ignored unless `select_dims` is set.
    pub config: PsmmConfig,
    pub noise_sd: f64,
    pub seed: u64,
    /// Use the configured (or BIC-selected) dimensions instead of the truth.
    pub select_dims: bool,
    /// Record wall-clock fit times; otherwise the runtime column is 0.
    pub timing: bool,
}

impl BenchmarkSpec {
    pub fn new(models: Vec<Model>, methods: Vec<Method>, n_grid: Vec<usize>, d_grid: Vec<usize>, replicates: usize) -> Self {
        BenchmarkSpec {
            models,
            methods,
            n_grid,
            d_grid,
            replicates,
            config: PsmmConfig::default(),
            noise_sd: DEFAULT_NOISE_SD,
            seed: 0,
            select_dims: false,
            timing: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.methods.is_empty() || self.n_grid.is_empty() || self.d_grid.is_empty() {
            return Err(Error::InvalidConfig("benchmark grids must be non-empty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be >= 1".into()));
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub model: u32,
    pub method: String,
    pub n: usize,
    pub d: usize,
    pub replicate: usize,
    /// NaN when the fit failed.
    pub distance: f64,
    pub runtime_seconds: f64,
    pub r1: usize,
    pub r2: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean distance of the successful rows of one grid cell.
    pub fn mean_distance(&self, model: Model, method: Method, d: usize, n: usize) -> Option<f64> {
        let name = method.to_string();
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model.id() && r.method == name && r.d == d && r.n == n && r.status == "ok")
            .map(|r| r.distance)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

struct Job {
    model: Model,
    method: Method,
    d: usize,
    n: usize,
    replicate: usize,
}

fn run_job(spec: &BenchmarkSpec, job: &Job) -> BenchmarkRow {
    let data_seed = derive_seed(spec.seed, &[job.model.id() as u64, job.d as u64, job.n as u64, job.replicate as u64]);
    let mut row = BenchmarkRow {
        model: job.model.id(),
        method: job.method.to_string(),
        n: job.n,
        d: job.d,
        replicate: job.replicate,
        distance: f64::NAN,
        runtime_seconds: 0.0,
        r1: 0,
        r2: 0,
        status: "ok".into(),
    };
    let start = Instant::now();
    let outcome = fit_and_score(spec, job, data_seed);
    if spec.timing {
        row.runtime_seconds = start.elapsed().as_secs_f64();
    }
    match outcome {
        Ok((distance, (r1, r2))) => {
            row.distance = distance;
            row.r1 = r1;
            row.r2 = r2;
        }
        Err(e) => row.status = format!("error:{}", e.kind()),
    }
    row
}

fn fit_and_score(spec: &BenchmarkSpec, job: &Job, data_seed: u64) -> Result<(f64, (usize, usize))> {
    let inst = gen_model(job.model, job.n, job.d, spec.noise_sd, data_seed)?;
    let mut config = spec.config.clone();
    config.seed = derive_seed(data_seed, &[2]);
    if !spec.select_dims {
        let (r1, r2) = job.model.true_dims();
        config.r1 = Some(r1);
        config.r2 = Some(r2);
    }
    match job.method {
        Method::Psmm => {
            let est = pipeline::fit_psmm(&inst.dataset, &config)?;
            let dist = subspace_distance(&est.row_basis, &est.col_basis, &inst.true_row_basis, &inst.true_col_basis)?;
            Ok((dist, est.selected))
        }
        Method::Psvm => {
            let est = pipeline::fit_psvm_baseline(&inst.dataset, &config)?;
            let truth = kron(&inst.true_col_basis, &inst.true_row_basis);
            let one = DMatrix::identity(1, 1);
            let dist = subspace_distance(&est.row_basis, &est.col_basis, &truth, &one)?;
            Ok((dist, est.selected))
        }
    }
}

/// Runs every (model, method, d, n, replicate) cell on `jobs` threads. Rows
/// come back in that canonical order regardless of scheduling, and the data
/// of a cell do not depend on the method.
pub fn run_benchmark(spec: &BenchmarkSpec, jobs: usize) -> Result<BenchmarkResult> {
    spec.validate()?;
    let mut grid = Vec::new();
    for &model in &spec.models {
        for &method in &spec.methods {
            for &d in &spec.d_grid {
                for &n in &spec.n_grid {
                    for replicate in 0..spec.replicates {
                        grid.push(Job { model, method, d, n, replicate });
                    }
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} worker threads: {e}")))?;
    let rows = pool.install(|| grid.par_iter().map(|job| run_job(spec, job)).collect());
    Ok(BenchmarkResult { rows })
}
