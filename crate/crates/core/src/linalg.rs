//! Dense symmetric-matrix helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`sym_inv_sqrt`] and friends.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// `‖M − Mᵀ‖_F / ‖M‖_F`, or 0 for the zero matrix.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Flips each column so that its largest-magnitude entry is positive.
///
/// Eigen- and singular vectors are only defined up to sign; pinning the sign
/// keeps outputs reproducible across platforms and code paths.
pub fn canonicalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best * (1.0 + 1e-12) {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// The input is symmetrized first; the eigenvector matrix holds the
/// eigenvectors as columns in the same order as the returned values.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    canonicalize_signs(&mut vectors);
    (values, vectors)
}

fn spectral_map(values: &[f64], vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = values.len();
    let mut scaled = vectors.clone();
    for j in 0..n {
        let s = f(values[j]);
        scaled.column_mut(j).scale_mut(s);
    }
    let out = scaled * vectors.transpose();
    symmetrize(&out)
}

/// Returns the SPD matrix `R` with `R (M + ridge·I) R = I`.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    check_square_symmetric(m)?;
    let (values, vectors) = sym_eigen_desc(m);
    let min = values.last().copied().unwrap_or(0.0) + ridge;
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(spectral_map(&values, &vectors, |l| 1.0 / (l + ridge).sqrt()))
}

/// Symmetric square root of an SPD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(m)?;
    let (values, vectors) = sym_eigen_desc(m);
    let min = values.last().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(spectral_map(&values, &vectors, f64::sqrt))
}

/// Inverse and log-determinant of a covariance iterate.
#[derive(Debug, Clone)]
pub struct CovFactor {
    pub inverse: DMatrix<f64>,
    /// Log-determinant of the unregularized matrix.
    pub log_det: f64,
}

/// Inverts a covariance iterate with eigenvalues floored at `ridge·trace/dim`.
///
/// Fails with `SingularCovariance` when the trace is not positive or the
/// smallest eigenvalue is at round-off level relative to the trace.
pub fn floored_inverse(m: &DMatrix<f64>, ridge: f64) -> Result<CovFactor> {
    let dim = m.nrows();
    let trace = m.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::SingularCovariance(format!("trace {trace:.3e}")));
    }
    let scale = trace / dim as f64;
    let (values, vectors) = sym_eigen_desc(m);
    let min = values[dim - 1];
    if min <= f64::EPSILON * dim as f64 * scale {
        return Err(Error::SingularCovariance(format!(
            "smallest eigenvalue {min:.3e} against mean eigenvalue {scale:.3e}"
        )));
    }
    let floor = ridge * scale;
    let log_det = values.iter().map(|l| l.ln()).sum();
    let inverse = spectral_map(&values, &vectors, |l| 1.0 / l.max(floor));
    Ok(CovFactor { inverse, log_det })
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `‖A₁⊗⋯⊗A_K − B₁⊗⋯⊗B_K‖²_F` without forming either product.
///
/// Uses the telescoping expansion
/// `Σ_k B₁⊗⋯⊗B_{k−1}⊗(A_k−B_k)⊗A_{k+1}⊗⋯⊗A_K`, which avoids the cancellation
/// of the naive `‖A‖² + ‖B‖² − 2⟨A,B⟩` form when the two products are close.
pub fn kron_diff_norm_sq(a: &[&DMatrix<f64>], b: &[&DMatrix<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let k = a.len();
    let diffs: Vec<DMatrix<f64>> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    // factor m of term t
    let factor = |t: usize, m: usize| -> &DMatrix<f64> {
        use std::cmp::Ordering::*;
        match m.cmp(&t) {
            Less => b[m],
            Equal => &diffs[m],
            Greater => a[m],
        }
    };
    let mut total = 0.0;
    for s in 0..k {
        for t in 0..k {
            let mut prod = 1.0;
            for m in 0..k {
                prod *= frob_inner(factor(s, m), factor(t, m));
            }
            total += prod;
        }
    }
    total.max(0.0)
}

/// Frobenius norm of `A₁⊗⋯⊗A_K`.
pub fn kron_norm(a: &[&DMatrix<f64>]) -> f64 {
    a.iter().map(|m| m.norm()).product()
}

/// Orthonormal basis for the column span of `b` (thin QR, signs canonicalized).
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.ncols() == 0 || b.ncols() > b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "basis of shape {}x{} cannot be orthonormalized",
            b.nrows(),
            b.ncols()
        )));
    }
    let qr = b.clone().qr();
    let r = qr.r();
    let scale = b.norm().max(f64::MIN_POSITIVE);
    for i in 0..r.nrows() {
        if r[(i, i)].abs() <= 1e-12 * scale {
            return Err(Error::InvalidInput("basis columns are linearly dependent".into()));
        }
    }
    let mut q = qr.q();
    canonicalize_signs(&mut q);
    Ok(q)
}

/// Maximum of `|BᵀB − I|` over entries.
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b;
    let eye = DMatrix::<f64>::identity(g.nrows(), g.ncols());
    (g - eye).amax()
}

pub fn unit(v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}
