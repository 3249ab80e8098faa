//! Matrix- and tensor-normal parameter estimation by the flip-flop algorithm.
//!
//! For centered samples `R_i = X_i − X̄` the matrix case alternates
//!
//! ```text
//! Σ_r ← (1/(d2·n)) Σ_i R_i Σ_c⁻¹ R_iᵀ
//! Σ_c ← (1/(d1·n)) Σ_i R_iᵀ Σ_r⁻¹ R_i
//! ```
//!
//! starting from `Σ_c = I`. Each half-step is the exact maximizer of the
//! Gaussian likelihood in one factor, so the likelihood never decreases.
//! The pair `(cΣ_r, Σ_c/c)` describes the same covariance `Σ_c ⊗ Σ_r`; fitted
//! parameters are reported with `trace(Σ_c) = d2`.
//!
//! The order-K version updates mode k from the mode-k matricization
//! `M_k` of the centered samples:
//! `Σ_k ← (1/(n·∏_{j≠k} d_j)) Σ_i M_k(X̃_i) (⊗_{j≠k} Σ_j)⁻¹ M_k(X̃_i)ᵀ`, and
//! reports `trace(Σ_k) = d_k` for every mode but the first.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::data::{MatrixDataset, TensorDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, floored_inverse, kron_diff_norm_sq, kron_norm, sym_inv_sqrt, symmetrize};
use crate::tensor::Tensor;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FlipFlopOptions {
    /// Relative Frobenius change of the Kronecker covariance between sweeps.
    pub tol: f64,
    pub max_iter: usize,
    /// Eigenvalue floor for inversions, relative to `trace/dim`.
    pub ridge: f64,
    /// Apply the trace convention after every sweep instead of once at the end.
    pub rescale_each_sweep: bool,
}

impl Default for FlipFlopOptions {
    fn default() -> Self {
        FlipFlopOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            ridge: DEFAULT_RIDGE,
            rescale_each_sweep: false,
        }
    }
}

impl FlipFlopOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("flip-flop tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("flip-flop max_iter must be >= 1".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// How the overall scale is split between the Kronecker factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleConvention {
    /// `trace(Σ_c) = d2` (tensor: `trace(Σ_k) = d_k` for k ≥ 2).
    TrailingTraceEqualsDim,
    /// Factors supplied by the caller, not rescaled.
    AsGiven,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatNormParams {
    pub mean: DMatrix<f64>,
    pub sigma_row: DMatrix<f64>,
    pub sigma_col: DMatrix<f64>,
    pub convention: ScaleConvention,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each completed sweep.
    pub loglik_trace: Vec<f64>,
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{name} is not square")));
    }
    let asym = linalg::relative_asymmetry(m);
    if asym > 1e-12 {
        return Err(Error::NotSymmetric(asym));
    }
    let (values, _) = linalg::sym_eigen_desc(m);
    let min = values.last().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(())
}

impl MatNormParams {
    /// Parameters supplied directly (e.g. known generator values).
    pub fn new(mean: DMatrix<f64>, sigma_row: DMatrix<f64>, sigma_col: DMatrix<f64>) -> Result<Self> {
        check_spd("sigma_row", &sigma_row)?;
        check_spd("sigma_col", &sigma_col)?;
        if sigma_row.nrows() != mean.nrows() || sigma_col.nrows() != mean.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "mean {:?} against factors {}x{} and {}x{}",
                mean.shape(),
                sigma_row.nrows(),
                sigma_row.ncols(),
                sigma_col.nrows(),
                sigma_col.ncols()
            )));
        }
        Ok(MatNormParams {
            mean,
            sigma_row,
            sigma_col,
            convention: ScaleConvention::AsGiven,
            iterations: 0,
            converged: true,
            loglik_trace: Vec::new(),
        })
    }

    /// Zero-mean, identity-covariance parameters.
    pub fn standard(d1: usize, d2: usize) -> Self {
        MatNormParams {
            mean: DMatrix::zeros(d1, d2),
            sigma_row: DMatrix::identity(d1, d1),
            sigma_col: DMatrix::identity(d2, d2),
            convention: ScaleConvention::TrailingTraceEqualsDim,
            iterations: 0,
            converged: true,
            loglik_trace: Vec::new(),
        }
    }

    pub fn d1(&self) -> usize {
        self.mean.nrows()
    }

    pub fn d2(&self) -> usize {
        self.mean.ncols()
    }

    /// `Var[vec(X)] = Σ_c ⊗ Σ_r` (column-major vec).
    pub fn kron_covariance(&self) -> DMatrix<f64> {
        linalg::kron(&self.sigma_col, &self.sigma_row)
    }

    /// Matrix-normal log-likelihood of `data` under these parameters.
    pub fn log_likelihood(&self, data: &MatrixDataset) -> Result<f64> {
        check_dims(data, self)?;
        let row = floored_inverse(&self.sigma_row, 0.0)?;
        let col = floored_inverse(&self.sigma_col, 0.0)?;
        let centered = center(data, &self.mean);
        Ok(loglik(&centered, &row, &col))
    }
}

fn check_dims(data: &MatrixDataset, params: &MatNormParams) -> Result<()> {
    if (data.d1(), data.d2()) != (params.d1(), params.d2()) {
        return Err(Error::DimensionMismatch(format!(
            "data is {}x{} but parameters are {}x{}",
            data.d1(),
            data.d2(),
            params.d1(),
            params.d2()
        )));
    }
    Ok(())
}

/// Entrywise mean of the samples.
pub fn sample_mean(data: &MatrixDataset) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(data.d1(), data.d2());
    for x in data.samples() {
        acc += x;
    }
    acc / data.n() as f64
}

fn center(data: &MatrixDataset, mean: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    data.samples().iter().map(|x| x - mean).collect()
}

fn sample_size_guard(n: usize, dims: &[usize]) -> Result<()> {
    let total: f64 = dims.iter().map(|&d| d as f64).product();
    let ratio = dims
        .iter()
        .map(|&d| {
            let d = d as f64;
            d / (total / d)
        })
        .fold(0.0, f64::max);
    let required = ratio + 1.0;
    if (n as f64) < required {
        return Err(Error::SampleTooSmall { n, required });
    }
    Ok(())
}

fn loglik(centered: &[DMatrix<f64>], row: &linalg::CovFactor, col: &linalg::CovFactor) -> f64 {
    let n = centered.len() as f64;
    let d1 = row.inverse.nrows() as f64;
    let d2 = col.inverse.nrows() as f64;
    let quad: f64 = centered
        .iter()
        .map(|r| linalg::frob_inner(&(&row.inverse * r * &col.inverse), r))
        .sum();
    -0.5 * (n * d1 * d2 * (2.0 * PI).ln() + n * d2 * row.log_det + n * d1 * col.log_det + quad)
}

/// Flip-flop MLE of the matrix-normal mean and Kronecker covariance factors.
pub fn flipflop_fit(data: &MatrixDataset, opts: &FlipFlopOptions) -> Result<MatNormParams> {
    flipflop_fit_from(data, opts, None)
}

/// As [`flipflop_fit`], starting the column factor at `init_col` instead of `I`.
pub fn flipflop_fit_from(
    data: &MatrixDataset,
    opts: &FlipFlopOptions,
    init_col: Option<&DMatrix<f64>>,
) -> Result<MatNormParams> {
    opts.validate()?;
    let (n, d1, d2) = (data.n(), data.d1(), data.d2());
    sample_size_guard(n, &[d1, d2])?;
    let mean = sample_mean(data);
    let centered = center(data, &mean);

    let mut sigma_col = match init_col {
        Some(c) => {
            check_spd("init_col", c)?;
            if c.nrows() != d2 {
                return Err(Error::DimensionMismatch("init_col has the wrong size".into()));
            }
            c.clone()
        }
        None => DMatrix::identity(d2, d2),
    };
    let mut col = floored_inverse(&sigma_col, opts.ridge)?;
    let mut sigma_row = DMatrix::identity(d1, d1);
    let mut previous: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut loglik_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let row_scale = 1.0 / (d2 * n) as f64;
    let col_scale = 1.0 / (d1 * n) as f64;
    for sweep in 1..=opts.max_iter {
        iterations = sweep;
        let mut acc = DMatrix::zeros(d1, d1);
        for r in &centered {
            acc += r * &col.inverse * r.transpose();
        }
        sigma_row = symmetrize(&(acc * row_scale));
        let mut row = floored_inverse(&sigma_row, opts.ridge)?;

        let mut acc = DMatrix::zeros(d2, d2);
        for r in &centered {
            acc += r.transpose() * &row.inverse * r;
        }
        sigma_col = symmetrize(&(acc * col_scale));
        col = floored_inverse(&sigma_col, opts.ridge)?;

        if opts.rescale_each_sweep {
            let c = d2 as f64 / sigma_col.trace();
            sigma_col *= c;
            sigma_row /= c;
            col.inverse /= c;
            col.log_det += d2 as f64 * c.ln();
            row.inverse *= c;
            row.log_det -= d1 as f64 * c.ln();
        }

        loglik_trace.push(loglik(&centered, &row, &col));

        if let Some((prev_row, prev_col)) = &previous {
            let change = kron_diff_norm_sq(&[&sigma_col, &sigma_row], &[prev_col, prev_row]).sqrt()
                / kron_norm(&[prev_col, prev_row]);
            if change < opts.tol {
                converged = true;
                break;
            }
        }
        previous = Some((sigma_row.clone(), sigma_col.clone()));
    }

    let c = d2 as f64 / sigma_col.trace();
    sigma_col *= c;
    sigma_row /= c;
    let params = MatNormParams {
        mean,
        sigma_row,
        sigma_col,
        convention: ScaleConvention::TrailingTraceEqualsDim,
        iterations,
        converged,
        loglik_trace,
    };
    if converged {
        Ok(params)
    } else {
        Err(Error::FlipFlopNotConverged(Box::new(params)))
    }
}

/// Centered samples whitened by both covariance factors.
#[derive(Debug, Clone)]
pub struct WhitenedDataset {
    /// `Z_i = Σ_r^{-1/2} (X_i − M) Σ_c^{-1/2}`.
    pub samples: Vec<DMatrix<f64>>,
    pub row_inv_sqrt: DMatrix<f64>,
    pub col_inv_sqrt: DMatrix<f64>,
    pub params: MatNormParams,
}

impl WhitenedDataset {
    /// Frobenius distances of `(1/(d2 n)) Σ Z Zᵀ` and `(1/(d1 n)) Σ Zᵀ Z` from identity.
    pub fn whitening_residuals(&self) -> (f64, f64) {
        let n = self.samples.len() as f64;
        let d1 = self.row_inv_sqrt.nrows();
        let d2 = self.col_inv_sqrt.nrows();
        let mut rows = DMatrix::zeros(d1, d1);
        let mut cols = DMatrix::zeros(d2, d2);
        for z in &self.samples {
            rows += z * z.transpose();
            cols += z.transpose() * z;
        }
        rows /= d2 as f64 * n;
        cols /= d1 as f64 * n;
        (
            (rows - DMatrix::<f64>::identity(d1, d1)).norm(),
            (cols - DMatrix::<f64>::identity(d2, d2)).norm(),
        )
    }
}

pub fn whiten(data: &MatrixDataset, params: &MatNormParams) -> Result<WhitenedDataset> {
    check_dims(data, params)?;
    let row_inv_sqrt = sym_inv_sqrt(&params.sigma_row, 0.0)?;
    let col_inv_sqrt = sym_inv_sqrt(&params.sigma_col, 0.0)?;
    let samples = data
        .samples()
        .iter()
        .map(|x| &row_inv_sqrt * (x - &params.mean) * &col_inv_sqrt)
        .collect();
    Ok(WhitenedDataset { samples, row_inv_sqrt, col_inv_sqrt, params: params.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorNormParams {
    pub mean: Tensor,
    /// One covariance factor per mode, `sigmas[k]` is `d_k × d_k`.
    pub sigmas: Vec<DMatrix<f64>>,
    pub convention: ScaleConvention,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
}

impl TensorNormParams {
    pub fn standard(dims: &[usize]) -> Self {
        TensorNormParams {
            mean: Tensor::zeros(dims.to_vec()),
            sigmas: dims.iter().map(|&d| DMatrix::identity(d, d)).collect(),
            convention: ScaleConvention::TrailingTraceEqualsDim,
            iterations: 0,
            converged: true,
            loglik_trace: Vec::new(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        self.mean.dims()
    }

    /// The order-2 case as matrix-normal parameters.
    pub fn to_matrix(&self) -> Option<MatNormParams> {
        Some(MatNormParams {
            mean: self.mean.to_matrix()?,
            sigma_row: self.sigmas[0].clone(),
            sigma_col: self.sigmas[1].clone(),
            convention: self.convention,
            iterations: self.iterations,
            converged: self.converged,
            loglik_trace: self.loglik_trace.clone(),
        })
    }
}

pub fn sample_mean_tensor(data: &TensorDataset) -> Tensor {
    let mut acc = Tensor::zeros(data.dims().to_vec());
    for x in data.samples() {
        for (a, v) in acc.data_mut().iter_mut().zip(x.data()) {
            *a += v;
        }
    }
    let n = data.n() as f64;
    acc.data_mut().iter_mut().for_each(|a| *a /= n);
    acc
}

fn whiten_all_but(x: &Tensor, inverses: &[DMatrix<f64>], skip: Option<usize>) -> Tensor {
    let mut w = x.clone();
    for (j, inv) in inverses.iter().enumerate() {
        if Some(j) != skip {
            w = w.mode_product(j, inv).expect("dims checked by caller");
        }
    }
    w
}

fn tensor_loglik(centered: &[Tensor], factors: &[linalg::CovFactor]) -> f64 {
    let n = centered.len() as f64;
    let dims: Vec<f64> = factors.iter().map(|f| f.inverse.nrows() as f64).collect();
    let total: f64 = dims.iter().product();
    let inverses: Vec<DMatrix<f64>> = factors.iter().map(|f| f.inverse.clone()).collect();
    let quad: f64 = centered.iter().map(|x| whiten_all_but(x, &inverses, None).inner(x)).sum();
    let log_dets: f64 = factors.iter().zip(&dims).map(|(f, d)| n * (total / d) * f.log_det).sum();
    -0.5 * (n * total * (2.0 * PI).ln() + log_dets + quad)
}

/// Flip-flop MLE for the order-K tensor-normal model.
pub fn flipflop_fit_tensor(data: &TensorDataset, opts: &FlipFlopOptions) -> Result<TensorNormParams> {
    opts.validate()?;
    let dims = data.dims().to_vec();
    let k = dims.len();
    let n = data.n();
    sample_size_guard(n, &dims)?;
    let total: usize = dims.iter().product();
    let mean = sample_mean_tensor(data);
    let centered: Vec<Tensor> = data.samples().iter().map(|x| x.sub(&mean)).collect();

    let mut sigmas: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::identity(d, d)).collect();
    let mut factors: Vec<linalg::CovFactor> = sigmas
        .iter()
        .map(|s| floored_inverse(s, opts.ridge))
        .collect::<Result<_>>()?;
    let mut previous: Option<Vec<DMatrix<f64>>> = None;
    let mut loglik_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for sweep in 1..=opts.max_iter {
        iterations = sweep;
        for mode in 0..k {
            let inverses: Vec<DMatrix<f64>> = factors.iter().map(|f| f.inverse.clone()).collect();
            let mut acc = DMatrix::zeros(dims[mode], dims[mode]);
            for x in &centered {
                let w = whiten_all_but(x, &inverses, Some(mode));
                acc += x.unfold(mode) * w.unfold(mode).transpose();
            }
            let scale = 1.0 / (n * (total / dims[mode])) as f64;
            sigmas[mode] = symmetrize(&(acc * scale));
            factors[mode] = floored_inverse(&sigmas[mode], opts.ridge)?;
        }
        if opts.rescale_each_sweep {
            rescale_tensor_factors(&mut sigmas, Some(&mut factors));
        }
        loglik_trace.push(tensor_loglik(&centered, &factors));

        if let Some(prev) = &previous {
            let cur: Vec<&DMatrix<f64>> = sigmas.iter().collect();
            let old: Vec<&DMatrix<f64>> = prev.iter().collect();
            let change = kron_diff_norm_sq(&cur, &old).sqrt() / kron_norm(&old);
            if change < opts.tol {
                converged = true;
                break;
            }
        }
        previous = Some(sigmas.clone());
    }

    rescale_tensor_factors(&mut sigmas, None);
    let params = TensorNormParams {
        mean,
        sigmas,
        convention: ScaleConvention::TrailingTraceEqualsDim,
        iterations,
        converged,
        loglik_trace,
    };
    if converged {
        Ok(params)
    } else {
        Err(Error::TensorFlipFlopNotConverged(Box::new(params)))
    }
}

fn rescale_tensor_factors(sigmas: &mut [DMatrix<f64>], mut factors: Option<&mut Vec<linalg::CovFactor>>) {
    let d0 = sigmas[0].nrows() as f64;
    for mode in 1..sigmas.len() {
        let dk = sigmas[mode].nrows() as f64;
        let c = dk / sigmas[mode].trace();
        sigmas[mode] *= c;
        sigmas[0] /= c;
        if let Some(f) = factors.as_deref_mut() {
            f[mode].inverse /= c;
            f[mode].log_det += dk * c.ln();
            f[0].inverse *= c;
            f[0].log_det -= d0 * c.ln();
        }
    }
}
