//! Rank-1 support matrix (and tensor) machines fitted by bi-convex
//! coordinate descent.
//!
//! For fixed `v` the sample objective
//!
//! ```text
//! (uᵀΣ_r u)(vᵀΣ_c v) + (λ/n) Σ_i {1 − y_i(uᵀ(X_i − X̄)v − t)}₊
//! ```
//!
//! is a linear SVM in `u` with features `a_i = (X_i − X̄)v`. Its dual is the
//! box-constrained QP of [`crate::qp`] with kernel
//! `k_ij = a_iᵀ Σ_r⁻¹ a_j / (vᵀΣ_c v)` and `C = λ/n`, and the minimizer is
//! `u = ½ Σ_i α_i y_i Σ_r⁻¹ a_i / (vᵀΣ_c v)`. The `v` step is the same with
//! `X_i` transposed and the factors swapped. The intercept is re-derived from
//! the dual after every step.
//!
//! The tensor version cycles over modes; the mode-k features are the
//! contractions of each centered sample over every other mode.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{MatrixDataset, TensorDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, floored_inverse, sym_eigen_desc, sym_inv_sqrt};
use crate::matnorm::{MatNormParams, TensorNormParams};
use crate::qp::{self, SmoSettings, SvmDualProblem};
use crate::tensor::{Contraction, Tensor};

pub const DEFAULT_LAMBDA: f64 = 100.0;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_RESTARTS: usize = 2;
/// KKT tolerance of the inner dual solves. SMO converges only linearly on
/// these rank-deficient kernels, so this is looser than [`qp::DEFAULT_TOL`].
pub const DEFAULT_QP_TOL: f64 = 1e-6;
/// Relative duality gap at which an inner dual solve is accepted early.
pub const QP_GAP_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct SmmOptions {
    /// Hinge-loss weight; the dual box is `C = λ/n`.
    pub lambda: f64,
    /// Relative objective decrease per sweep below which descent stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Seeded random starts in addition to the deterministic one.
    pub restarts: usize,
    pub seed: u64,
    pub qp_tol: f64,
    /// SMO budget in units of `n` updates (default `10·n`).
    pub qp_max_passes: Option<usize>,
}

impl Default for SmmOptions {
    fn default() -> Self {
        SmmOptions {
            lambda: DEFAULT_LAMBDA,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            qp_tol: DEFAULT_QP_TOL,
            qp_max_passes: None,
        }
    }
}

impl SmmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("smm tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("smm max_iter must be >= 1".into()));
        }
        if !(self.qp_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("qp tol must be > 0, got {}", self.qp_tol)));
        }
        Ok(())
    }
}

/// One per-slice solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionTriple {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every u- or v-update of the winning start.
    pub objective_trace: Vec<f64>,
    /// Number of inner QP solves that hit their update budget.
    pub qp_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDirectionSet {
    pub directions: Vec<DVector<f64>>,
    pub t: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub qp_failures: usize,
}

/// Result of one exact block update.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionUpdate {
    pub direction: DVector<f64>,
    pub t: f64,
    pub alphas: Vec<f64>,
    pub qp_converged: bool,
    pub qp_iterations: usize,
}

fn hinge_sum(margins: impl Iterator<Item = (f64, f64)>, t: f64) -> f64 {
    margins.map(|(y, m)| (1.0 - y * (m - t)).max(0.0)).sum()
}

fn check_labels(labels: &[f64], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {n} samples", labels.len())));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidInput("labels must be +1 or -1".into()));
    }
    Ok(())
}

fn class_counts(labels: &[f64]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    (pos, labels.len() - pos)
}

/// Solves the SVM dual for one block given the features of every sample.
///
/// `features` holds one column per sample; `sigma_inv` is the inverse
/// covariance factor of the block and `scale` the product of the quadratic
/// forms of the fixed blocks.
fn solve_block(
    features: &DMatrix<f64>,
    sigma_inv: &DMatrix<f64>,
    scale: f64,
    labels: &[f64],
    lambda: f64,
    qp_tol: f64,
    qp_max_passes: Option<usize>,
    warm: Option<&[f64]>,
) -> Result<DirectionUpdate> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateDirection(format!(
            "fixed direction has quadratic form {scale:.3e}"
        )));
    }
    let n = labels.len();
    let whitened = sigma_inv * features;
    let kernel = (features.transpose() * &whitened) / scale;
    let problem = SvmDualProblem::new(kernel, labels.to_vec(), lambda / n as f64, qp_tol)?;
    let settings = SmoSettings {
        max_passes: qp_max_passes,
        warm_start: warm.map(<[f64]>::to_vec),
        record_objective: false,
        gap_tol: Some(QP_GAP_TOL),
    };
    let (solution, qp_converged) = match qp::solve_svm_dual_with(&problem, &settings) {
        Ok(s) => (s, true),
        Err(Error::QpNotConverged(s)) => (*s, false),
        Err(e) => return Err(e),
    };
    let weights = DVector::from_iterator(n, solution.alphas.iter().zip(labels).map(|(a, y)| a * y));
    let direction = (&whitened * weights) * (0.5 / scale);
    Ok(DirectionUpdate {
        direction,
        t: solution.bias_t,
        qp_iterations: solution.iterations,
        alphas: solution.alphas,
        qp_converged,
    })
}

/// The sample objective of one slice with cached centering and inverses.
#[derive(Debug, Clone)]
pub struct SmmProblem {
    centered: Vec<DMatrix<f64>>,
    labels: Vec<f64>,
    sigma_row: DMatrix<f64>,
    sigma_col: DMatrix<f64>,
    row_inv: DMatrix<f64>,
    col_inv: DMatrix<f64>,
    lambda: f64,
    qp_tol: f64,
    qp_max_passes: Option<usize>,
}

impl SmmProblem {
    pub fn new(data: &MatrixDataset, labels: &[f64], params: &MatNormParams, lambda: f64) -> Result<Self> {
        if (data.d1(), data.d2()) != (params.d1(), params.d2()) {
            return Err(Error::DimensionMismatch(format!(
                "data is {}x{} but parameters are {}x{}",
                data.d1(),
                data.d2(),
                params.d1(),
                params.d2()
            )));
        }
        check_labels(labels, data.n())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(SmmProblem {
            centered: data.samples().iter().map(|x| x - &params.mean).collect(),
            labels: labels.to_vec(),
            sigma_row: params.sigma_row.clone(),
            sigma_col: params.sigma_col.clone(),
            row_inv: floored_inverse(&params.sigma_row, 0.0)?.inverse,
            col_inv: floored_inverse(&params.sigma_col, 0.0)?.inverse,
            lambda,
            qp_tol: DEFAULT_QP_TOL,
            qp_max_passes: None,
        })
    }

    pub fn with_qp(mut self, tol: f64, max_passes: Option<usize>) -> Self {
        self.qp_tol = tol;
        self.qp_max_passes = max_passes;
        self
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn objective(&self, u: &DVector<f64>, v: &DVector<f64>, t: f64) -> f64 {
        let penalty = self.sigma_row.dot(&(u * u.transpose())) * self.sigma_col.dot(&(v * v.transpose()));
        let margins = self
            .centered
            .iter()
            .zip(&self.labels)
            .map(|(r, &y)| (y, (u.transpose() * r * v)[0]));
        penalty + self.lambda / self.n() as f64 * hinge_sum(margins, t)
    }

    pub fn update_u(&self, v: &DVector<f64>, warm: Option<&[f64]>) -> Result<DirectionUpdate> {
        if v.len() != self.sigma_col.nrows() {
            return Err(Error::DimensionMismatch("v has the wrong length".into()));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateDirection("v = 0".into()));
        }
        let features = DMatrix::from_columns(&self.centered.iter().map(|r| r * v).collect::<Vec<_>>());
        let scale = (v.transpose() * &self.sigma_col * v)[0];
        solve_block(&features, &self.row_inv, scale, &self.labels, self.lambda, self.qp_tol, self.qp_max_passes, warm)
    }

    pub fn update_v(&self, u: &DVector<f64>, warm: Option<&[f64]>) -> Result<DirectionUpdate> {
        if u.len() != self.sigma_row.nrows() {
            return Err(Error::DimensionMismatch("u has the wrong length".into()));
        }
        if u.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateDirection("u = 0".into()));
        }
        let features =
            DMatrix::from_columns(&self.centered.iter().map(|r| r.transpose() * u).collect::<Vec<_>>());
        let scale = (u.transpose() * &self.sigma_row * u)[0];
        solve_block(&features, &self.col_inv, scale, &self.labels, self.lambda, self.qp_tol, self.qp_max_passes, warm)
    }
}

/// Sample objective `(uᵀΣ_r u)(vᵀΣ_c v) + (λ/n) Σ {1 − y_i(uᵀ(X_i−X̄)v − t)}₊`.
pub fn objective_eval(
    u: &DVector<f64>,
    v: &DVector<f64>,
    t: f64,
    data: &MatrixDataset,
    labels: &[f64],
    params: &MatNormParams,
    lambda: f64,
) -> Result<f64> {
    if u.len() != data.d1() || v.len() != data.d2() {
        return Err(Error::DimensionMismatch("direction lengths do not match the data".into()));
    }
    Ok(SmmProblem::new(data, labels, params, lambda)?.objective(u, v, t))
}

/// Exact minimizer over `u` for fixed `v`; returns `(u, alphas)`.
pub fn update_u(
    data: &MatrixDataset,
    labels: &[f64],
    v: &DVector<f64>,
    params: &MatNormParams,
    lambda: f64,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let up = SmmProblem::new(data, labels, params, lambda)?.update_u(v, None)?;
    Ok((up.direction, up.alphas))
}

/// Exact minimizer over `v` for fixed `u`; returns `(v, alphas)`.
pub fn update_v(
    data: &MatrixDataset,
    labels: &[f64],
    u: &DVector<f64>,
    params: &MatNormParams,
    lambda: f64,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let up = SmmProblem::new(data, labels, params, lambda)?.update_v(u, None)?;
    Ok((up.direction, up.alphas))
}

fn top_eigenvector(m: &DMatrix<f64>) -> DVector<f64> {
    let (_, vecs) = sym_eigen_desc(m);
    vecs.column(0).into_owned()
}

fn canonical_unit(v: DVector<f64>) -> DVector<f64> {
    let mut m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    linalg::canonicalize_signs(&mut m);
    let v = m.column(0).into_owned();
    linalg::unit(&v).unwrap_or(v)
}

/// Deterministic starting pair from the whitened class-contrast matrix
/// `Δ = (1/n) Σ y_i (X_i − X̄)`.
pub fn init_directions(
    data: &MatrixDataset,
    labels: &[f64],
    params: &MatNormParams,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_labels(labels, data.n())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::InfeasibleLabels);
    }
    let n = data.n() as f64;
    let mut delta = DMatrix::zeros(data.d1(), data.d2());
    let mut spread = 0.0;
    for (x, &y) in data.samples().iter().zip(labels) {
        let r = x - &params.mean;
        spread += r.norm();
        delta += r * y;
    }
    delta /= n;
    spread /= n;
    let row_is = sym_inv_sqrt(&params.sigma_row, 0.0)?;
    let col_is = sym_inv_sqrt(&params.sigma_col, 0.0)?;
    if delta.norm() <= 1e-12 * spread.max(f64::MIN_POSITIVE) {
        return Ok((top_eigenvector(&params.sigma_row), top_eigenvector(&params.sigma_col)));
    }
    let whitened = &row_is * &delta * &col_is;
    let svd = whitened.svd(true, true);
    let k = svd.singular_values.imax();
    let p = svd.u.expect("requested").column(k).into_owned();
    let q = svd.v_t.expect("requested").row(k).transpose();
    let u0 = canonical_unit(&row_is * p);
    let mut v0 = linalg::unit(&(&col_is * q)).expect("non-zero");
    // orient v0 so that u0ᵀΔv0 > 0
    if (u0.transpose() * &delta * &v0)[0] < 0.0 {
        v0.neg_mut();
    }
    Ok((u0, v0))
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        if let Some(u) = linalg::unit(&v) {
            return u;
        }
    }
}

fn require_two_per_class(labels: &[f64]) -> Result<()> {
    let (pos, neg) = class_counts(labels);
    if pos < 2 || neg < 2 {
        return Err(Error::InvalidInput(format!(
            "each class needs at least 2 samples, got {pos} positive and {neg} negative"
        )));
    }
    Ok(())
}

fn relative_decrease(before: f64, after: f64) -> f64 {
    (before - after) / before.abs().max(f64::MIN_POSITIVE)
}

/// Coordinate descent from the starting column direction `v0`.
pub fn descend_from(problem: &SmmProblem, u0: &DVector<f64>, v0: &DVector<f64>, opts: &SmmOptions) -> Result<DirectionTriple> {
    let mut u = u0.clone();
    let mut v = v0.clone();
    let mut t = 0.0;
    let mut previous = problem.objective(&u, &v, t);
    let mut trace = Vec::new();
    let mut warm_u: Option<Vec<f64>> = None;
    let mut warm_v: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut qp_failures = 0;
    for sweep in 1..=opts.max_iter {
        iterations = sweep;
        let up = problem.update_u(&v, warm_u.as_deref())?;
        qp_failures += usize::from(!up.qp_converged);
        u = up.direction;
        t = up.t;
        warm_u = Some(up.alphas);
        trace.push(problem.objective(&u, &v, t));
        if u.iter().all(|&x| x == 0.0) {
            // nothing separates along v; v-step is undefined
            converged = true;
            break;
        }
        let up = problem.update_v(&u, warm_v.as_deref())?;
        qp_failures += usize::from(!up.qp_converged);
        v = up.direction;
        t = up.t;
        warm_v = Some(up.alphas);
        let current = problem.objective(&u, &v, t);
        trace.push(current);
        if v.iter().all(|&x| x == 0.0) || relative_decrease(previous, current) < opts.tol {
            converged = true;
            break;
        }
        previous = current;
    }
    balance_pair(&mut u, &mut v);
    Ok(DirectionTriple {
        objective: problem.objective(&u, &v, t),
        u,
        v,
        t,
        iterations,
        converged,
        objective_trace: trace,
        qp_failures,
    })
}

/// Rescales `(u, v)` to `(c·u, v/c)` with `‖u‖ = ‖v‖`.
pub fn balance_pair(u: &mut DVector<f64>, v: &mut DVector<f64>) {
    let (nu, nv) = (u.norm(), v.norm());
    if nu > 0.0 && nv > 0.0 {
        let c = (nv / nu).sqrt();
        *u *= c;
        *v /= c;
    }
}

/// All starting points: the deterministic initializer, then `restarts` seeded
/// random unit pairs.
pub fn starting_points(
    data: &MatrixDataset,
    labels: &[f64],
    params: &MatNormParams,
    restarts: usize,
    seed: u64,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let mut starts = vec![init_directions(data, labels, params)?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let u = random_unit(&mut rng, data.d1());
        let v = random_unit(&mut rng, data.d2());
        starts.push((u, v));
    }
    Ok(starts)
}

fn pick_best<T>(fits: Vec<T>, objective: impl Fn(&T) -> f64) -> T {
    let mut best: Option<T> = None;
    for fit in fits {
        match &best {
            Some(b) if objective(b) <= objective(&fit) => {}
            _ => best = Some(fit),
        }
    }
    best.expect("at least one start")
}

/// Fits the rank-1 SMM of one slice, returning the lowest-objective start.
pub fn fit_rank1_smm(
    data: &MatrixDataset,
    labels: &[f64],
    params: &MatNormParams,
    opts: &SmmOptions,
) -> Result<DirectionTriple> {
    opts.validate()?;
    check_labels(labels, data.n())?;
    require_two_per_class(labels)?;
    let problem = SmmProblem::new(data, labels, params, opts.lambda)?.with_qp(opts.qp_tol, opts.qp_max_passes);
    let starts = starting_points(data, labels, params, opts.restarts, opts.seed)?;
    let mut fits = Vec::with_capacity(starts.len());
    for (i, (u0, v0)) in starts.iter().enumerate() {
        match descend_from(&problem, u0, v0, opts) {
            Ok(f) => fits.push(f),
            Err(e @ Error::DegenerateDirection(_)) if i == 0 => return Err(e),
            Err(Error::DegenerateDirection(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(pick_best(fits, |f| f.objective))
}

/// `X ×₁u₁ ⋯ ×_K u_K`, or with `skip = k` the vector over mode k.
pub fn mode_k_contract(tensor: &Tensor, vectors: &[&DVector<f64>], skip: Option<usize>) -> Result<Contraction> {
    tensor.contract(vectors, skip)
}

/// Order-K analogue of [`SmmProblem`].
#[derive(Debug, Clone)]
pub struct StmProblem {
    centered: Vec<Tensor>,
    labels: Vec<f64>,
    sigmas: Vec<DMatrix<f64>>,
    inverses: Vec<DMatrix<f64>>,
    lambda: f64,
    qp_tol: f64,
    qp_max_passes: Option<usize>,
}

impl StmProblem {
    pub fn new(data: &TensorDataset, labels: &[f64], params: &TensorNormParams, lambda: f64) -> Result<Self> {
        if data.dims() != params.dims() {
            return Err(Error::DimensionMismatch(format!(
                "data dims {:?} but parameter dims {:?}",
                data.dims(),
                params.dims()
            )));
        }
        check_labels(labels, data.n())?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(StmProblem {
            centered: data.samples().iter().map(|x| x.sub(&params.mean)).collect(),
            labels: labels.to_vec(),
            sigmas: params.sigmas.clone(),
            inverses: params
                .sigmas
                .iter()
                .map(|s| floored_inverse(s, 0.0).map(|f| f.inverse))
                .collect::<Result<_>>()?,
            lambda,
            qp_tol: DEFAULT_QP_TOL,
            qp_max_passes: None,
        })
    }

    pub fn with_qp(mut self, tol: f64, max_passes: Option<usize>) -> Self {
        self.qp_tol = tol;
        self.qp_max_passes = max_passes;
        self
    }

    pub fn order(&self) -> usize {
        self.sigmas.len()
    }

    fn quad_form(&self, k: usize, u: &DVector<f64>) -> f64 {
        (u.transpose() * &self.sigmas[k] * u)[0]
    }

    pub fn objective(&self, directions: &[DVector<f64>], t: f64) -> f64 {
        let penalty: f64 = (0..self.order()).map(|k| self.quad_form(k, &directions[k])).product();
        let refs: Vec<&DVector<f64>> = directions.iter().collect();
        let margins = self.centered.iter().zip(&self.labels).map(|(x, &y)| {
            let m = x.contract(&refs, None).ok().and_then(Contraction::scalar).unwrap_or(f64::NAN);
            (y, m)
        });
        penalty + self.lambda / self.labels.len() as f64 * hinge_sum(margins, t)
    }

    /// Exact minimizer over mode `k` with every other direction fixed.
    pub fn update_mode(&self, k: usize, directions: &[DVector<f64>], warm: Option<&[f64]>) -> Result<DirectionUpdate> {
        for (j, u) in directions.iter().enumerate() {
            if j != k && u.iter().all(|&x| x == 0.0) {
                return Err(Error::DegenerateDirection(format!("mode {j} direction is zero")));
            }
        }
        let refs: Vec<&DVector<f64>> = directions.iter().collect();
        let cols = self
            .centered
            .iter()
            .map(|x| x.contract(&refs, Some(k)).map(|c| c.vector().expect("skip given")))
            .collect::<Result<Vec<_>>>()?;
        let features = DMatrix::from_columns(&cols);
        let scale: f64 = (0..self.order()).filter(|&j| j != k).map(|j| self.quad_form(j, &directions[j])).product();
        solve_block(&features, &self.inverses[k], scale, &self.labels, self.lambda, self.qp_tol, self.qp_max_passes, warm)
    }
}

/// Deterministic start for the tensor fit: for order 2 the matrix
/// initializer, otherwise a higher-order power iteration on the whitened
/// class-contrast tensor seeded from its mode-wise leading singular vectors.
pub fn init_tensor_directions(
    data: &TensorDataset,
    labels: &[f64],
    params: &TensorNormParams,
) -> Result<Vec<DVector<f64>>> {
    if data.order() == 2 {
        let m = data.to_matrix().expect("order 2");
        let p = params.to_matrix().expect("order 2");
        let (u, v) = init_directions(&m, labels, &p)?;
        return Ok(vec![u, v]);
    }
    check_labels(labels, data.n())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::InfeasibleLabels);
    }
    let n = data.n() as f64;
    let mut delta = Tensor::zeros(data.dims().to_vec());
    let mut spread = 0.0;
    for (x, &y) in data.samples().iter().zip(labels) {
        let r = x.sub(&params.mean);
        spread += r.norm();
        for (d, v) in delta.data_mut().iter_mut().zip(r.data()) {
            *d += y * v / n;
        }
    }
    spread /= n;
    if delta.norm() <= 1e-12 * spread.max(f64::MIN_POSITIVE) {
        return Ok(params.sigmas.iter().map(top_eigenvector).collect());
    }
    let inv_sqrts: Vec<DMatrix<f64>> =
        params.sigmas.iter().map(|s| sym_inv_sqrt(s, 0.0)).collect::<Result<_>>()?;
    let mut whitened = delta;
    for (k, m) in inv_sqrts.iter().enumerate() {
        whitened = whitened.mode_product(k, m)?;
    }
    let mut dirs: Vec<DVector<f64>> = (0..whitened.order())
        .map(|k| {
            let unf = whitened.unfold(k);
            top_eigenvector(&(&unf * unf.transpose()))
        })
        .collect();
    for _ in 0..100 {
        let mut change = 0.0f64;
        for k in 0..dirs.len() {
            let refs: Vec<&DVector<f64>> = dirs.iter().collect();
            let next = whitened.contract(&refs, Some(k))?.vector().expect("skip given");
            let Some(next) = linalg::unit(&next) else { break };
            change = change.max((&next - &dirs[k]).amax());
            dirs[k] = next;
        }
        if change < 1e-12 {
            break;
        }
    }
    Ok(dirs
        .iter()
        .zip(&inv_sqrts)
        .map(|(p, m)| canonical_unit(m * p))
        .collect())
}

/// Rescales every direction to the geometric mean norm.
pub fn balance_directions(directions: &mut [DVector<f64>]) {
    let norms: Vec<f64> = directions.iter().map(|u| u.norm()).collect();
    if norms.contains(&0.0) {
        return;
    }
    let g = norms.iter().map(|x| x.ln()).sum::<f64>() / norms.len() as f64;
    let g = g.exp();
    for (u, nu) in directions.iter_mut().zip(norms) {
        *u *= g / nu;
    }
}

pub fn tensor_starting_points(
    data: &TensorDataset,
    labels: &[f64],
    params: &TensorNormParams,
    restarts: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut starts = vec![init_tensor_directions(data, labels, params)?];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        starts.push(data.dims().iter().map(|&d| random_unit(&mut rng, d)).collect());
    }
    Ok(starts)
}

/// Cyclic coordinate descent over modes from `start`.
pub fn descend_tensor_from(problem: &StmProblem, start: &[DVector<f64>], opts: &SmmOptions) -> Result<TensorDirectionSet> {
    let k = problem.order();
    let mut dirs = start.to_vec();
    let mut t = 0.0;
    let mut previous = problem.objective(&dirs, t);
    let mut warm: Vec<Option<Vec<f64>>> = vec![None; k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut qp_failures = 0;
    'sweeps: for sweep in 1..=opts.max_iter {
        iterations = sweep;
        for mode in 0..k {
            let up = problem.update_mode(mode, &dirs, warm[mode].as_deref())?;
            qp_failures += usize::from(!up.qp_converged);
            dirs[mode] = up.direction;
            t = up.t;
            warm[mode] = Some(up.alphas);
            trace.push(problem.objective(&dirs, t));
            if dirs[mode].iter().all(|&x| x == 0.0) {
                converged = true;
                break 'sweeps;
            }
        }
        let current = *trace.last().expect("one update per sweep");
        if relative_decrease(previous, current) < opts.tol {
            converged = true;
            break;
        }
        previous = current;
    }
    balance_directions(&mut dirs);
    Ok(TensorDirectionSet {
        objective: problem.objective(&dirs, t),
        directions: dirs,
        t,
        iterations,
        converged,
        objective_trace: trace,
        qp_failures,
    })
}

/// Fits the rank-1 support tensor machine of one slice.
pub fn fit_rank1_stm(
    data: &TensorDataset,
    labels: &[f64],
    params: &TensorNormParams,
    opts: &SmmOptions,
) -> Result<TensorDirectionSet> {
    opts.validate()?;
    check_labels(labels, data.n())?;
    require_two_per_class(labels)?;
    let problem = StmProblem::new(data, labels, params, opts.lambda)?.with_qp(opts.qp_tol, opts.qp_max_passes);
    let starts = tensor_starting_points(data, labels, params, opts.restarts, opts.seed)?;
    let mut fits = Vec::with_capacity(starts.len());
    for (i, start) in starts.iter().enumerate() {
        match descend_tensor_from(&problem, start, opts) {
            Ok(f) => fits.push(f),
            Err(e @ Error::DegenerateDirection(_)) if i == 0 => return Err(e),
            Err(Error::DegenerateDirection(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(pick_best(fits, |f| f.objective))
}
