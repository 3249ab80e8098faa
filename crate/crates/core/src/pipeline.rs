//! The PSMM / PSTM estimation procedure and the vectorized PSVM baseline.
//!
//! 1. Fit the (matrix- or tensor-) normal mean and covariance factors.
//! 2. Slice the response at its empirical quantiles into binary labels.
//! 3. Fit a rank-1 support matrix (tensor) machine per retained slice.
//! 4. Sum the per-slice outer products `u uᵀ` and `v vᵀ` in slice order.
//! 5. Keep the leading eigenvectors; the number kept is fixed or chosen by a
//!    penalized eigenvalue-sum criterion.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MatrixDataset, TensorDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen_desc};
use crate::matnorm::{self, FlipFlopOptions, MatNormParams};
use crate::smm::{self, DirectionTriple, SmmOptions, SmmProblem};

pub const DEFAULT_SLICES: usize = 10;
/// Relative ridge added to the vectorized covariance of the PSVM baseline.
pub const PSVM_RIDGE: f64 = 1e-6;

/// Estimation settings. `None` for a dimension means "choose by BIC".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsmmConfig {
    pub slices: usize,
    pub lambda: f64,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    /// Per-mode dimensions for tensor fits; missing entries fall back to
    /// `r1`/`r2` for the first two modes and BIC otherwise.
    #[serde(default)]
    pub mode_dims: Vec<Option<usize>>,
    pub symmetric: bool,
    pub seed: u64,
    pub flipflop_tol: f64,
    pub flipflop_max_iter: usize,
    pub ridge: f64,
    pub smm_tol: f64,
    pub smm_max_iter: usize,
    pub restarts: usize,
    pub qp_tol: f64,
}

impl Default for PsmmConfig {
    fn default() -> Self {
        PsmmConfig {
            slices: DEFAULT_SLICES,
            lambda: smm::DEFAULT_LAMBDA,
            r1: None,
            r2: None,
            mode_dims: Vec::new(),
            symmetric: false,
            seed: 0,
            flipflop_tol: matnorm::DEFAULT_TOL,
            flipflop_max_iter: matnorm::DEFAULT_MAX_ITER,
            ridge: matnorm::DEFAULT_RIDGE,
            smm_tol: smm::DEFAULT_TOL,
            smm_max_iter: smm::DEFAULT_MAX_ITER,
            restarts: smm::DEFAULT_RESTARTS,
            qp_tol: smm::DEFAULT_QP_TOL,
        }
    }
}

impl PsmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slices < 2 {
            return Err(Error::InvalidConfig(format!(
                "number of slices H must satisfy H >= 2, got {}",
                self.slices
            )));
        }
        let dims = [self.r1, self.r2].into_iter().chain(self.mode_dims.iter().copied());
        if dims.flatten().any(|r| r == 0) {
            return Err(Error::InvalidConfig("fixed dimensions must be >= 1".into()));
        }
        self.smm_options(0).validate()?;
        self.flipflop_options().validate()
    }

    pub fn flipflop_options(&self) -> FlipFlopOptions {
        FlipFlopOptions {
            tol: self.flipflop_tol,
            max_iter: self.flipflop_max_iter,
            ridge: self.ridge,
            rescale_each_sweep: false,
        }
    }

    /// Solver settings for slice `h` (1-based); each slice gets its own seed.
    pub fn smm_options(&self, h: usize) -> SmmOptions {
        SmmOptions {
            lambda: self.lambda,
            tol: self.smm_tol,
            max_iter: self.smm_max_iter,
            restarts: self.restarts,
            seed: derive_seed(self.seed, &[h as u64]),
            qp_tol: self.qp_tol,
            qp_max_passes: None,
        }
    }

    fn mode_dim(&self, k: usize) -> Option<usize> {
        match self.mode_dims.get(k) {
            Some(&r) => r,
            None if k == 0 => self.r1,
            None if k == 1 => self.r2,
            None => None,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed from a master seed and a path of indices.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Binary labels of every retained slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceLabelSet {
    /// `q_1, …, q_H`.
    pub cutpoints: Vec<f64>,
    /// 1-based indices `h` of the slices kept.
    pub retained: Vec<usize>,
    /// One ±1 vector per retained slice.
    pub labels: Vec<Vec<f64>>,
}

/// Labels `ỹ_i^h = 1{Y_i > q_h} − 1{Y_i ≤ q_h}` with `q_h` the
/// `⌈n·h/H⌉`-th order statistic. Slices with fewer than two samples in
/// either class are dropped.
pub fn slice_labels(responses: &[f64], slices: usize) -> Result<SliceLabelSet> {
    if slices < 2 {
        return Err(Error::InvalidConfig(format!(
            "number of slices H must satisfy H >= 2, got {slices}"
        )));
    }
    let n = responses.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("slicing needs at least 4 responses, got {n}")));
    }
    if responses.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite response".into()));
    }
    let mut sorted = responses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut set = SliceLabelSet { cutpoints: Vec::with_capacity(slices), retained: Vec::new(), labels: Vec::new() };
    for h in 1..=slices {
        let rank = (n * h).div_ceil(slices);
        let q = sorted[rank - 1];
        set.cutpoints.push(q);
        let labels: Vec<f64> = responses.iter().map(|&y| if y > q { 1.0 } else { -1.0 }).collect();
        let pos = labels.iter().filter(|&&y| y > 0.0).count();
        if pos >= 2 && n - pos >= 2 {
            set.retained.push(h);
            set.labels.push(labels);
        }
    }
    if set.retained.is_empty() {
        return Err(Error::TooFewSlices);
    }
    Ok(set)
}

/// Sum of outer products with its eigendecomposition (descending).
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Aggregate {
    pub fn from_vectors<'a>(dim: usize, vectors: impl IntoIterator<Item = &'a DVector<f64>>) -> Self {
        let mut matrix = DMatrix::zeros(dim, dim);
        for v in vectors {
            matrix += v * v.transpose();
        }
        Aggregate::from_matrix(matrix)
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let (eigenvalues, eigenvectors) = sym_eigen_desc(&matrix);
        Aggregate { matrix, eigenvalues, eigenvectors }
    }

    /// The leading `r` eigenvectors, or the identity when `r` is the full
    /// dimension.
    pub fn basis(&self, r: usize) -> DMatrix<f64> {
        let d = self.matrix.nrows();
        if r >= d {
            DMatrix::identity(d, d)
        } else {
            self.eigenvectors.columns(0, r).into_owned()
        }
    }

    /// Eigenvalues clamped at zero.
    pub fn reported_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| l.max(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateAggregate {
    pub row: Aggregate,
    pub col: Aggregate,
}

/// `Û = Σ_h u^h(u^h)ᵀ`, `V̂ = Σ_h v^h(v^h)ᵀ` in the given order.
pub fn aggregate_directions(triples: &[DirectionTriple]) -> Result<CandidateAggregate> {
    let first = triples.first().ok_or_else(|| Error::InvalidInput("no direction triples to aggregate".into()))?;
    let (d1, d2) = (first.u.len(), first.v.len());
    if triples.iter().any(|t| t.u.len() != d1 || t.v.len() != d2) {
        return Err(Error::DimensionMismatch("direction triples differ in shape".into()));
    }
    Ok(CandidateAggregate {
        row: Aggregate::from_vectors(d1, triples.iter().map(|t| &t.u)),
        col: Aggregate::from_vectors(d2, triples.iter().map(|t| &t.v)),
    })
}

/// `argmax_r Σ_{i≤r} λ_i − λ_1·n^{−1/2}·r`, ties to the smaller `r`.
pub fn select_dimension_bic(eigenvalues: &[f64], n: usize) -> Result<usize> {
    let first = *eigenvalues.first().ok_or_else(|| Error::InvalidInput("empty eigenvalue list".into()))?;
    if n == 0 {
        return Err(Error::InvalidInput("BIC needs n >= 1".into()));
    }
    let unit = first / (n as f64).sqrt();
    let mut best = (1, f64::NEG_INFINITY);
    let mut sum = 0.0;
    for (i, &l) in eigenvalues.iter().enumerate() {
        sum += l;
        let r = i + 1;
        let bic = sum - unit * r as f64;
        if bic > best.1 {
            best = (r, bic);
        }
    }
    Ok(best.0)
}

/// Per-slice fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub slice: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub qp_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    pub row_basis: DMatrix<f64>,
    pub col_basis: DMatrix<f64>,
    pub eigvals_row: Vec<f64>,
    pub eigvals_col: Vec<f64>,
    pub selected: (usize, usize),
    pub symmetric: bool,
    pub config: PsmmConfig,
    pub convergence: Vec<SliceSummary>,
}

/// Order-K estimate: one basis per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSubspaceEstimate {
    pub mode_bases: Vec<DMatrix<f64>>,
    pub eigvals: Vec<Vec<f64>>,
    pub selected: Vec<usize>,
    pub config: PsmmConfig,
    pub convergence: Vec<SliceSummary>,
}

fn require_responses(responses: Option<&[f64]>) -> Result<&[f64]> {
    responses.ok_or_else(|| Error::InvalidInput("dataset has no responses".into()))
}

fn check_fixed(r: Option<usize>, d: usize, what: &str) -> Result<()> {
    match r {
        Some(r) if r > d => Err(Error::InvalidConfig(format!("{what} = {r} exceeds the dimension {d}"))),
        _ => Ok(()),
    }
}

fn choose(r: Option<usize>, agg: &Aggregate, n: usize) -> Result<usize> {
    match r {
        Some(r) => Ok(r),
        None => select_dimension_bic(&agg.reported_eigenvalues(), n),
    }
}

fn summary(h: usize, iterations: usize, converged: bool, objective: f64, qp_failures: usize) -> SliceSummary {
    SliceSummary { slice: h, iterations, converged, objective, qp_failures }
}

/// Steps 3–5 for matrix data with known parameters.
pub fn fit_psmm_with_params(
    data: &MatrixDataset,
    params: &MatNormParams,
    config: &PsmmConfig,
) -> Result<SubspaceEstimate> {
    config.validate()?;
    let responses = require_responses(data.responses())?;
    let (d1, d2) = (data.d1(), data.d2());
    check_fixed(config.r1, d1, "r1")?;
    check_fixed(config.r2, d2, "r2")?;
    if config.symmetric && d1 != d2 {
        return Err(Error::InvalidConfig(format!("symmetric mode needs square predictors, got {d1}x{d2}")));
    }
    let slices = slice_labels(responses, config.slices)?;
    let fits: Vec<DirectionTriple> = slices
        .retained
        .par_iter()
        .zip(&slices.labels)
        .map(|(&h, labels)| smm::fit_rank1_smm(data, labels, params, &config.smm_options(h)))
        .collect::<Result<_>>()?;
    let convergence = slices
        .retained
        .iter()
        .zip(&fits)
        .map(|(&h, f)| summary(h, f.iterations, f.converged, f.objective, f.qp_failures))
        .collect();
    let agg = aggregate_directions(&fits)?;
    let n = data.n();
    let (row, col, selected) = if config.symmetric {
        let joint = Aggregate::from_matrix(&agg.row.matrix + &agg.col.matrix);
        let r = choose(config.r1.or(config.r2), &joint, n)?;
        (joint.clone(), joint, (r, r))
    } else {
        let r1 = choose(config.r1, &agg.row, n)?;
        let r2 = choose(config.r2, &agg.col, n)?;
        (agg.row, agg.col, (r1, r2))
    };
    Ok(SubspaceEstimate {
        row_basis: row.basis(selected.0),
        col_basis: col.basis(selected.1),
        eigvals_row: row.reported_eigenvalues(),
        eigvals_col: col.reported_eigenvalues(),
        selected,
        symmetric: config.symmetric,
        config: config.clone(),
        convergence,
    })
}

/// The full procedure for matrix-valued predictors.
pub fn fit_psmm(data: &MatrixDataset, config: &PsmmConfig) -> Result<SubspaceEstimate> {
    config.validate()?;
    require_responses(data.responses())?;
    let params = matnorm::flipflop_fit(data, &config.flipflop_options())?;
    fit_psmm_with_params(data, &params, config)
}

/// The tensor procedure; a mode of size 1 gets the basis `[1]`.
pub fn fit_pstm(data: &TensorDataset, config: &PsmmConfig) -> Result<TensorSubspaceEstimate> {
    config.validate()?;
    let responses = require_responses(data.responses())?;
    if config.symmetric {
        return Err(Error::InvalidConfig("symmetric mode applies to matrix predictors only".into()));
    }
    for (k, &d) in data.dims().iter().enumerate() {
        check_fixed(config.mode_dim(k), d, &format!("mode {} dimension", k + 1))?;
    }
    let params = matnorm::flipflop_fit_tensor(data, &config.flipflop_options())?;
    let slices = slice_labels(responses, config.slices)?;
    let fits: Vec<smm::TensorDirectionSet> = slices
        .retained
        .par_iter()
        .zip(&slices.labels)
        .map(|(&h, labels)| smm::fit_rank1_stm(data, labels, &params, &config.smm_options(h)))
        .collect::<Result<_>>()?;
    let convergence = slices
        .retained
        .iter()
        .zip(&fits)
        .map(|(&h, f)| summary(h, f.iterations, f.converged, f.objective, f.qp_failures))
        .collect();
    let mut est = TensorSubspaceEstimate {
        mode_bases: Vec::new(),
        eigvals: Vec::new(),
        selected: Vec::new(),
        config: config.clone(),
        convergence,
    };
    for (k, &d) in data.dims().iter().enumerate() {
        let agg = Aggregate::from_vectors(d, fits.iter().map(|f| &f.directions[k]));
        let r = choose(config.mode_dim(k), &agg, data.n())?;
        est.mode_bases.push(agg.basis(r));
        est.eigvals.push(agg.reported_eigenvalues());
        est.selected.push(r);
    }
    Ok(est)
}

/// Column-major `vec(X)` of every sample as a `d1·d2 × 1` dataset.
pub fn vectorize(data: &MatrixDataset) -> Result<MatrixDataset> {
    let p = data.d1() * data.d2();
    let samples = data.samples().iter().map(|x| DMatrix::from_column_slice(p, 1, x.as_slice())).collect();
    MatrixDataset::new(samples, data.responses().map(<[f64]>::to_vec))
}

/// Principal SVM on `vec(X)`: one linear SVM per slice with the full
/// (ridged) covariance of the vectorized predictors. The basis lives in
/// `ℝ^{d1·d2}`; `col_basis` is `[1]`.
pub fn fit_psvm_baseline(data: &MatrixDataset, config: &PsmmConfig) -> Result<SubspaceEstimate> {
    config.validate()?;
    let responses = require_responses(data.responses())?;
    let vdata = vectorize(data)?;
    let p = vdata.d1();
    let n = vdata.n();
    let mean = matnorm::sample_mean(&vdata);
    let mut cov = DMatrix::zeros(p, p);
    for x in vdata.samples() {
        let r = x - &mean;
        cov += &r * r.transpose();
    }
    cov /= n as f64;
    let ridge = PSVM_RIDGE * cov.trace() / p as f64;
    if !(ridge > 0.0) {
        return Err(Error::SingularCovariance("vectorized predictors have zero variance".into()));
    }
    for i in 0..p {
        cov[(i, i)] += ridge;
    }
    let params = MatNormParams::new(mean, linalg::symmetrize(&cov), DMatrix::identity(1, 1))?;
    let fixed = match (config.r1, config.r2) {
        (Some(a), Some(b)) => Some(a * b),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    };
    check_fixed(fixed, p, "r")?;
    let slices = slice_labels(responses, config.slices)?;
    let one = DVector::from_element(1, 1.0);
    let updates: Vec<(smm::DirectionUpdate, f64)> = slices
        .labels
        .par_iter()
        .map(|labels| {
            let problem = SmmProblem::new(&vdata, labels, &params, config.lambda)?.with_qp(config.qp_tol, None);
            let up = problem.update_u(&one, None)?;
            let objective = problem.objective(&up.direction, &one, up.t);
            Ok((up, objective))
        })
        .collect::<Result<_>>()?;
    let convergence = slices
        .retained
        .iter()
        .zip(&updates)
        .map(|(&h, (u, f))| summary(h, 1, u.qp_converged, *f, usize::from(!u.qp_converged)))
        .collect();
    let agg = Aggregate::from_vectors(p, updates.iter().map(|(u, _)| &u.direction));
    let r = choose(fixed, &agg, n)?;
    Ok(SubspaceEstimate {
        row_basis: agg.basis(r),
        col_basis: DMatrix::identity(1, 1),
        eigvals_row: agg.reported_eigenvalues(),
        eigvals_col: vec![0.0],
        selected: (r, 1),
        symmetric: false,
        config: config.clone(),
        convergence,
    })
}

/// Reduced predictors of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFeatures {
    /// `row_basisᵀ X col_basis` per sample.
    pub coordinates: Vec<DMatrix<f64>>,
    /// `(û₁ᵀXû₁, û₂ᵀXû₂, û₁ᵀXû₂)` per sample, symmetric rank-2 estimates only.
    pub symmetric_triples: Option<Vec<[f64; 3]>>,
}

pub fn reduce(data: &MatrixDataset, estimate: &SubspaceEstimate) -> Result<ReducedFeatures> {
    if data.d1() != estimate.row_basis.nrows() || data.d2() != estimate.col_basis.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "data is {}x{} but the estimate expects {}x{}",
            data.d1(),
            data.d2(),
            estimate.row_basis.nrows(),
            estimate.col_basis.nrows()
        )));
    }
    let rt = estimate.row_basis.transpose();
    let coordinates: Vec<DMatrix<f64>> = data.samples().iter().map(|x| &rt * x * &estimate.col_basis).collect();
    let symmetric_triples = (estimate.symmetric && estimate.row_basis.ncols() == 2).then(|| {
        let u1 = estimate.row_basis.column(0);
        let u2 = estimate.row_basis.column(1);
        data.samples()
            .iter()
            .map(|x| [(u1.transpose() * x * u1)[0], (u2.transpose() * x * u2)[0], (u1.transpose() * x * u2)[0]])
            .collect()
    });
    Ok(ReducedFeatures { coordinates, symmetric_triples })
}

/// Full contraction of each sample with the mode bases: an `r_1 × ⋯ × r_K` core.
pub fn reduce_tensor(data: &TensorDataset, estimate: &TensorSubspaceEstimate) -> Result<Vec<crate::tensor::Tensor>> {
    let expected: Vec<usize> = estimate.mode_bases.iter().map(|b| b.nrows()).collect();
    if data.dims() != expected.as_slice() {
        return Err(Error::DimensionMismatch(format!(
            "data dims {:?} but the estimate expects {expected:?}",
            data.dims()
        )));
    }
    data.samples()
        .iter()
        .map(|x| {
            estimate
                .mode_bases
                .iter()
                .enumerate()
                .try_fold(x.clone(), |acc, (k, b)| acc.mode_product(k, &b.transpose()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn triple(u: DVector<f64>, v: DVector<f64>) -> DirectionTriple {
        DirectionTriple {
            u,
            v,
            t: 0.0,
            objective: 0.0,
            iterations: 1,
            converged: true,
            objective_trace: vec![],
            qp_failures: 0,
        }
    }

    fn projector(b: &DMatrix<f64>) -> DMatrix<f64> {
        b * b.transpose()
    }

    fn bilinear_data(d: usize, n: usize, seed: u64) -> (MatrixDataset, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u0 = linalg::unit(&DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))).unwrap();
        let v0 = linalg::unit(&DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))).unwrap();
        let xs: Vec<DMatrix<f64>> = (0..n).map(|_| DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng))).collect();
        let ys = xs
            .iter()
            .map(|x| (u0.transpose() * x * &v0)[0] + 0.2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        (MatrixDataset::new(xs, Some(ys)).unwrap(), u0, v0)
    }

    #[test]
    fn slice_labels_four_points() {
        let s = slice_labels(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(s.cutpoints, vec![2.0, 4.0]);
        assert_eq!(s.retained, vec![1]);
        assert_eq!(s.labels, vec![vec![-1.0, -1.0, 1.0, 1.0]]);
    }

    #[test]
    fn slice_labels_hundred_distinct() {
        let y: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let s = slice_labels(&y, 10).unwrap();
        assert_eq!(s.retained, (1..=9).collect::<Vec<_>>());
        assert!(s.cutpoints.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn slice_labels_degenerate() {
        assert!(matches!(slice_labels(&[3.0; 8], 4), Err(Error::TooFewSlices)));
        assert!(slice_labels(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(slice_labels(&[1.0, 2.0, 3.0, 4.0], 1).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_directions(&[triple(e(3, 0), e(2, 0))]).unwrap();
        assert_eq!(a.row.matrix, e(3, 0) * e(3, 0).transpose());
        assert!((a.row.eigenvalues[0] - 1.0).abs() < 1e-15 && a.row.eigenvalues[1].abs() < 1e-15);
        let a = aggregate_directions(&[triple(e(3, 0), e(2, 0)), triple(e(3, 2), e(2, 1))]).unwrap();
        assert!((a.row.eigenvalues[0] - 1.0).abs() < 1e-14 && (a.row.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!(a.row.eigenvalues[2].abs() < 1e-14);
        let a = aggregate_directions(&[triple(e(3, 1) * 2.0, e(2, 0))]).unwrap();
        assert!((a.row.eigenvalues[0] - 4.0).abs() < 1e-14);
        assert!(aggregate_directions(&[]).is_err());
    }

    #[test]
    fn bic_examples() {
        assert_eq!(select_dimension_bic(&[10.0, 0.5, 0.1], 100).unwrap(), 1);
        assert_eq!(select_dimension_bic(&[4.0, 4.0, 4.0], 16).unwrap(), 3);
        assert_eq!(select_dimension_bic(&[1.0, 1.0], 4).unwrap(), 2);
        assert_eq!(select_dimension_bic(&[0.0, 0.0], 4).unwrap(), 1);
        assert!(select_dimension_bic(&[], 4).is_err());
    }

    #[test]
    fn config_rejects_single_slice() {
        let c = PsmmConfig { slices: 1, ..PsmmConfig::default() };
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("H >= 2"));
        assert!(PsmmConfig { lambda: 0.0, ..PsmmConfig::default() }.validate().is_err());
        assert!(PsmmConfig { r1: Some(0), ..PsmmConfig::default() }.validate().is_err());
    }

    fn estimate(row: DMatrix<f64>, col: DMatrix<f64>, symmetric: bool) -> SubspaceEstimate {
        SubspaceEstimate {
            selected: (row.ncols(), col.ncols()),
            row_basis: row,
            col_basis: col,
            eigvals_row: vec![],
            eigvals_col: vec![],
            symmetric,
            config: PsmmConfig::default(),
            convergence: vec![],
        }
    }

    #[test]
    fn reduce_examples() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let data = MatrixDataset::new(vec![x.clone()], None).unwrap();
        let col = DMatrix::from_columns(&[e(3, 0), e(3, 1)]);
        let est = estimate(DMatrix::from_columns(&[e(2, 0)]), col, false);
        let r = reduce(&data, &est).unwrap();
        assert_eq!(r.coordinates[0], DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert!(r.symmetric_triples.is_none());

        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let data = MatrixDataset::new(vec![s.clone()], None).unwrap();
        let est = estimate(DMatrix::identity(2, 2), DMatrix::identity(2, 2), true);
        let r = reduce(&data, &est).unwrap();
        assert_eq!(r.symmetric_triples.unwrap()[0], [1.0, 3.0, 2.0]);
        assert_eq!(r.coordinates[0], s);

        let wrong = estimate(DMatrix::identity(3, 3), DMatrix::identity(2, 2), false);
        assert!(reduce(&data, &wrong).is_err());
    }

    #[test]
    fn full_dimension_gives_identity_basis() {
        let agg = Aggregate::from_vectors(3, [&DVector::from_vec(vec![0.3, 1.0, -2.0])]);
        assert_eq!(agg.basis(3), DMatrix::identity(3, 3));
    }

    #[test]
    fn rank1_recovery_and_determinism() {
        let (data, u0, v0) = bilinear_data(5, 500, 21);
        let config = PsmmConfig { r1: Some(1), r2: Some(1), seed: 3, ..PsmmConfig::default() };
        let est = fit_psmm(&data, &config).unwrap();
        let cu = est.row_basis.column(0).dot(&u0).abs();
        let cv = est.col_basis.column(0).dot(&v0).abs();
        assert!(cu >= 0.95 && cv >= 0.95, "{cu} {cv}");
        assert!(linalg::orthonormality_error(&est.row_basis) < 1e-10);
        assert!(est.eigvals_row.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(est.convergence.len(), 9);
        let again = fit_psmm(&data, &config).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn pstm_order_two_matches_psmm() {
        let (data, _, _) = bilinear_data(4, 200, 22);
        let config = PsmmConfig { r1: Some(1), r2: Some(2), seed: 5, ..PsmmConfig::default() };
        let m = fit_psmm(&data, &config).unwrap();
        let t = fit_pstm(&data.to_tensor(), &config).unwrap();
        assert!((projector(&m.row_basis) - projector(&t.mode_bases[0])).norm() < 1e-6);
        assert!((projector(&m.col_basis) - projector(&t.mode_bases[1])).norm() < 1e-6);
        for (a, b) in m.convergence.iter().zip(&t.convergence) {
            assert!((a.objective - b.objective).abs() <= 1e-8);
        }
    }

    #[test]
    fn pstm_singleton_mode_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let xs: Vec<crate::tensor::Tensor> = (0..120)
            .map(|_| crate::tensor::Tensor::from_fn(vec![3, 1, 2], |_| StandardNormal.sample(&mut rng)))
            .collect();
        let ys = xs.iter().map(|x| x.get(&[0, 0, 0]) + 0.1 * x.get(&[1, 0, 1])).collect();
        let data = TensorDataset::new(xs, Some(ys)).unwrap();
        let est = fit_pstm(&data, &PsmmConfig::default()).unwrap();
        assert_eq!(est.mode_bases[1], DMatrix::identity(1, 1));
        let reduced = reduce_tensor(&data, &est).unwrap();
        assert_eq!(reduced[0].dims(), est.selected.as_slice());
    }

    #[test]
    fn psvm_fixed_rank_one() {
        let (data, _, _) = bilinear_data(3, 150, 24);
        let config = PsmmConfig { r1: Some(1), r2: Some(1), ..PsmmConfig::default() };
        let est = fit_psvm_baseline(&data, &config).unwrap();
        assert_eq!(est.row_basis.shape(), (9, 1));
        assert!((est.row_basis.norm() - 1.0).abs() < 1e-12);
        assert_eq!(est.col_basis, DMatrix::identity(1, 1));
    }

    #[test]
    fn basis_rotation_keeps_projector() {
        let b = linalg::orthonormalize(&DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0, 1.0, 1.0])).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((projector(&b) - projector(&(&b * q))).amax() < 1e-12);
    }

    #[test]
    fn seeds_differ_by_path() {
        assert_ne!(derive_seed(1, &[2]), derive_seed(1, &[3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(9, &[4, 5]), derive_seed(9, &[4, 5]));
    }
}
