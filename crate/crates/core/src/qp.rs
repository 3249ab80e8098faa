//! SMO solver for the SVM-type dual
//!
//! ```text
//! minimize   −Σ α_i + ¼ Σ_i Σ_j α_i α_j y_i y_j k_ij
//! subject to Σ α_i y_i = 0,  0 ≤ α_i ≤ C
//! ```
//!
//! The ¼ (rather than ½) curvature comes from a primal penalty of `‖w‖²`, for
//! which the weight is recovered as `w = ½ Σ α_i y_i z_i`.
//!
//! Internally the problem is written as `½ αᵀHα − 1ᵀα` with
//! `H_ij = ½ y_i y_j k_ij`, and solved by two-coordinate updates on the
//! maximal violating pair (second-order working-set selection).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

pub const DEFAULT_TOL: f64 = 1e-8;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmDualProblem {
    kernel: DMatrix<f64>,
    labels: Vec<f64>,
    c: f64,
    tol: f64,
}

impl SvmDualProblem {
    /// `kernel` is symmetrized as `(K + Kᵀ)/2`; labels must be ±1 with both
    /// classes present.
    pub fn new(kernel: DMatrix<f64>, labels: Vec<f64>, c: f64, tol: f64) -> Result<Self> {
        let n = labels.len();
        if kernel.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "kernel {:?} for {n} labels",
                kernel.shape()
            )));
        }
        if kernel.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("kernel has non-finite entries".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidInput("labels must be +1 or -1".into()));
        }
        if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
            return Err(Error::InfeasibleLabels);
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!("box bound C must be > 0, got {c}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!("KKT tolerance must be > 0, got {tol}")));
        }
        Ok(SvmDualProblem { kernel: symmetrize(&kernel), labels, c, tol })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    fn h(&self, i: usize, j: usize) -> f64 {
        0.5 * self.labels[i] * self.labels[j] * self.kernel[(i, j)]
    }

    /// Gradient `Hα − 1`.
    fn gradient(&self, alphas: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.h(i, j) * alphas[j]).sum::<f64>() - 1.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmDualSolution {
    pub alphas: Vec<f64>,
    pub bias_t: f64,
    pub dual_objective: f64,
    pub kkt_residual: f64,
    /// Number of two-coordinate updates performed.
    pub iterations: usize,
    /// Dual objective after every update, when requested.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SmoSettings {
    /// Update budget in units of `n` updates; `None` means `10·n`.
    pub max_passes: Option<usize>,
    /// Feasible starting point; ignored if infeasible.
    pub warm_start: Option<Vec<f64>>,
    pub record_objective: bool,
    /// Also stop once the duality gap is below `gap_tol·max(1, |primal|)`;
    /// checked every `n` updates.
    pub gap_tol: Option<f64>,
}

/// Dual objective `−Σα + ¼ ΣΣ α_i α_j y_i y_j k_ij`.
pub fn dual_objective(problem: &SvmDualProblem, alphas: &[f64]) -> f64 {
    let n = problem.n();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alphas[i] * alphas[j] * problem.h(i, j);
        }
    }
    0.5 * quad - alphas.iter().sum::<f64>()
}

fn in_up(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a < c) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, c: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < c)
}

fn violation(problem: &SvmDualProblem, alphas: &[f64], grad: &[f64]) -> f64 {
    let c = problem.c;
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for (i, (&y, &a)) in problem.labels.iter().zip(alphas).enumerate() {
        let v = -y * grad[i];
        if in_up(y, a, c) {
            up = up.max(v);
        }
        if in_low(y, a, c) {
            low = low.min(v);
        }
    }
    if up.is_finite() && low.is_finite() {
        (up - low).max(0.0)
    } else {
        0.0
    }
}

/// Maximal KKT violation `max_{I_up} −y_i g_i − min_{I_low} −y_i g_i` (clamped at 0).
pub fn kkt_residual(problem: &SvmDualProblem, alphas: &[f64]) -> f64 {
    violation(problem, alphas, &problem.gradient(alphas))
}

fn is_feasible(problem: &SvmDualProblem, alphas: &[f64]) -> bool {
    let c = problem.c;
    alphas.len() == problem.n()
        && alphas.iter().all(|&a| (0.0..=c).contains(&a))
        && problem.labels.iter().zip(alphas).map(|(y, a)| y * a).sum::<f64>().abs()
            <= 1e-10 * problem.n() as f64 * c
}

/// Intercept `t` of the decision function `f(z) − t` implied by `alphas`.
///
/// Margin support vectors (`0 < α_i < C`) satisfy `y_i(f_i − t) = 1` with
/// `f_i = ½ Σ_j α_j y_j k_ij`; their `f_i − y_i` values are averaged. Without
/// margin vectors the midpoint of the interval allowed by the bound vectors
/// is returned.
pub fn recover_bias(problem: &SvmDualProblem, alphas: &[f64]) -> f64 {
    bias_from_gradient(problem, alphas, &problem.gradient(alphas))
}

/// [`recover_bias`] given the gradient `Hα − 1`, using `y_i f_i = g_i + 1`.
fn bias_from_gradient(problem: &SvmDualProblem, alphas: &[f64], grad: &[f64]) -> f64 {
    let c = problem.c;
    let eps = 1e-12 * c;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (i, (&y, &a)) in problem.labels.iter().zip(alphas).enumerate() {
        let value = y * (grad[i] + 1.0) - y;
        if a > eps && a < c - eps {
            free_sum += value;
            free_count += 1;
        } else {
            let at_upper = a >= c - eps;
            // (y=+1, α=C) and (y=−1, α=0) bound t from below; the rest from above.
            if (y > 0.0) == at_upper {
                lo = lo.max(value);
            } else {
                hi = hi.min(value);
            }
        }
    }
    if free_count > 0 {
        return free_sum / free_count as f64;
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

/// Primal value `‖w‖² + C Σ {1 − y_i(f_i − t)}₊` and dual value
/// `Σα − ‖w‖²` at `alphas`, from the gradient.
fn primal_dual_values(problem: &SvmDualProblem, alphas: &[f64], grad: &[f64], t: f64) -> (f64, f64) {
    let mut w2 = 0.0;
    let mut sum = 0.0;
    let mut hinge = 0.0;
    for (i, (&y, &a)) in problem.labels.iter().zip(alphas).enumerate() {
        w2 += 0.5 * a * (grad[i] + 1.0);
        sum += a;
        hinge += (y * t - grad[i]).max(0.0);
    }
    (w2 + problem.c * hinge, sum - w2)
}

pub fn solve_svm_dual(problem: &SvmDualProblem, max_passes: usize) -> Result<SvmDualSolution> {
    solve_svm_dual_with(problem, &SmoSettings { max_passes: Some(max_passes), ..Default::default() })
}

pub fn solve_svm_dual_with(problem: &SvmDualProblem, settings: &SmoSettings) -> Result<SvmDualSolution> {
    let n = problem.n();
    let c = problem.c;
    let y = &problem.labels;
    let max_updates = settings.max_passes.unwrap_or(10 * n).saturating_mul(n).max(1);

    let mut alpha = match &settings.warm_start {
        Some(a) if is_feasible(problem, a) => a.clone(),
        _ => vec![0.0; n],
    };
    let h = DMatrix::from_fn(n, n, |i, j| problem.h(i, j));
    let mut grad = problem.gradient(&alpha);
    let diag: Vec<f64> = (0..n).map(|i| h[(i, i)]).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let objective_from_grad =
        |alpha: &[f64], grad: &[f64]| 0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    if settings.record_objective {
        trace.push(objective_from_grad(&alpha, &grad));
    }

    let converged = loop {
        // working set: i maximizes −y g over I_up, j is the second-order choice in I_low
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if in_up(y[t], alpha[t], c) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = Some(t);
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                if !in_low(y[t], alpha[t], c) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = diag[i] + diag[t] - 2.0 * y[i] * y[t] * h[(t, i)];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let score = -(b * b) / a;
                    if score <= best {
                        best = score;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax - gmin > problem.tol => (i, j),
            _ => break true,
        };
        if let Some(gap_tol) = settings.gap_tol {
            if iterations % n == 0 {
                let t = bias_from_gradient(problem, &alpha, &grad);
                let (primal, dual) = primal_dual_values(problem, &alpha, &grad, t);
                if primal - dual <= gap_tol * primal.abs().max(1.0) {
                    break true;
                }
            }
        }
        if iterations >= max_updates {
            break false;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let hij = h[(i, j)];
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * hij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * hij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        if di != 0.0 || dj != 0.0 {
            for ((g, hi), hj) in grad.iter_mut().zip(h.column(i).iter()).zip(h.column(j).iter()) {
                *g += hi * di + hj * dj;
            }
        }
        if settings.record_objective {
            trace.push(objective_from_grad(&alpha, &grad));
        }
    };

    let solution = SvmDualSolution {
        bias_t: recover_bias(problem, &alpha),
        dual_objective: dual_objective(problem, &alpha),
        kkt_residual: violation(problem, &alpha, &grad),
        alphas: alpha,
        iterations,
        objective_trace: trace,
    };
    if converged {
        Ok(solution)
    } else {
        Err(Error::QpNotConverged(Box::new(solution)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(c: f64) -> SvmDualProblem {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        SvmDualProblem::new(k, vec![1.0, -1.0], c, DEFAULT_TOL).unwrap()
    }

    /// Grid search over the feasible segment α₁ = α₂ = a ∈ [0, C].
    fn two_point_grid(p: &SvmDualProblem) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        let steps = 200_000;
        for s in 0..=steps {
            let a = p.c() * s as f64 / steps as f64;
            let f = dual_objective(p, &[a, a]);
            if f < best.0 {
                best = (f, a);
            }
        }
        best
    }

    #[test]
    fn two_point_example() {
        let p = two_point(50.0);
        let (grid_obj, grid_a) = two_point_grid(&p);
        assert!((grid_a - 1.0).abs() < 1e-3);
        assert!((grid_obj + 1.0).abs() < 1e-6);

        let sol = solve_svm_dual(&p, 100).unwrap();
        assert!((sol.alphas[0] - 1.0).abs() < 1e-12);
        assert!((sol.alphas[1] - 1.0).abs() < 1e-12);
        assert!((sol.dual_objective + 1.0).abs() < 1e-12);
        assert!(sol.bias_t.abs() < 1e-12);
        assert!(sol.kkt_residual <= p.tol());
        // w = ½ Σ α_i y_i z_i with z = (+1, −1)
        let w = 0.5 * (sol.alphas[0] * 1.0 * 1.0 + sol.alphas[1] * -1.0 * -1.0);
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_box_forces_zero() {
        let p = two_point(1e-12);
        let sol = solve_svm_dual(&p, 100).unwrap();
        assert!(sol.alphas.iter().all(|&a| (0.0..=1e-12).contains(&a)));
    }

    #[test]
    fn zero_kernel_fills_the_box() {
        let k = DMatrix::zeros(6, 6);
        let y = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let p = SvmDualProblem::new(k, y, 0.7, DEFAULT_TOL).unwrap();
        let sol = solve_svm_dual(&p, 100).unwrap();
        assert!(sol.alphas.iter().all(|&a| (a - 0.7).abs() < 1e-15), "{:?}", sol.alphas);
    }

    #[test]
    fn single_class_is_infeasible() {
        let k = DMatrix::identity(3, 3);
        let err = SvmDualProblem::new(k, vec![1.0; 3], 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::InfeasibleLabels));
    }

    #[test]
    fn bias_midpoint_fallback() {
        // zero kernel: f_i = 0, all alphas at C, so (y=+1, C) gives t >= -1 and
        // (y=-1, C) gives t <= 1
        let k = DMatrix::zeros(2, 2);
        let p = SvmDualProblem::new(k, vec![1.0, -1.0], 1.0, 1e-8).unwrap();
        assert_eq!(recover_bias(&p, &[1.0, 1.0]), 0.0);
        // all at zero: (y=+1, 0) gives t <= -1, (y=-1, 0) gives t >= 1 → midpoint 0
        assert_eq!(recover_bias(&p, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn bias_negates_under_label_flip() {
        let k = DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 0.5, -1.0, 0.2, 0.5, 1.0, 0.3, -0.4, -1.0, 0.3, 1.5, 0.1, 0.2, -0.4, 0.1, 0.8],
        );
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = SvmDualProblem::new(k.clone(), y, 2.0, 1e-10).unwrap();
        let b = SvmDualProblem::new(k, flipped, 2.0, 1e-10).unwrap();
        let sa = solve_svm_dual(&a, 100).unwrap();
        let sb = solve_svm_dual(&b, 100).unwrap();
        assert!((sa.bias_t + sb.bias_t).abs() < 1e-8, "{} {}", sa.bias_t, sb.bias_t);
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let n = 12;
        let g = DMatrix::from_fn(n, 3, |i, j| ((i * 5 + j * 7) % 9) as f64 / 4.0 - 1.0);
        let k = &g * g.transpose();
        let y: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let p = SvmDualProblem::new(k, y, 1.0, 1e-10).unwrap();
        let sol = solve_svm_dual_with(&p, &SmoSettings { record_objective: true, ..Default::default() }).unwrap();
        assert_eq!(sol.objective_trace.len(), sol.iterations + 1);
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn residual_invariant_under_joint_rescaling() {
        let n = 8;
        let g = DMatrix::from_fn(n, 4, |i, j| ((i * 3 + j * 11) % 7) as f64 / 3.0 - 1.0);
        let k = &g * g.transpose();
        let y: Vec<f64> = (0..n).map(|i| if i < 4 { 1.0 } else { -1.0 }).collect();
        let p = SvmDualProblem::new(k.clone(), y.clone(), 1.0, 1e-8).unwrap();
        let alphas: Vec<f64> = vec![0.2, 0.5, 0.0, 1.0, 0.3, 0.9, 0.5, 0.0];
        let r = kkt_residual(&p, &alphas);
        for c in [0.5, 2.0, 10.0] {
            let scaled = SvmDualProblem::new(&k * c, y.clone(), 1.0 / c, 1e-8 * c).unwrap();
            let sa: Vec<f64> = alphas.iter().map(|a| a / c).collect();
            assert!((kkt_residual(&scaled, &sa) - r).abs() <= 1e-12 * r.max(1.0));
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let n = 10;
        let g = DMatrix::from_fn(n, 2, |i, j| ((i * 13 + j * 5) % 11) as f64 / 5.0 - 1.0);
        let k = &g * g.transpose();
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = SvmDualProblem::new(k, y, 0.5, 1e-10).unwrap();
        let cold = solve_svm_dual(&p, 100).unwrap();
        let warm = solve_svm_dual_with(
            &p,
            &SmoSettings { warm_start: Some(vec![0.25; n]), ..Default::default() },
        )
        .unwrap();
        assert!((cold.dual_objective - warm.dual_objective).abs() < 1e-9);
    }
}
