//! Small shared numerics: quadrature, sample statistics, a sequential
//! matrix-vector product with a pinned accumulation order, and the Lyapunov
//! solve for stationary covariances.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("lyapunov system is singular; gamma may not be positive stable")]
    SingularLyapunov,
}

/// Mean and standard error of a sample.
///
/// Returns `(mean, stderr)` with `stderr = sample_std / sqrt(len)`; the
/// stderr is 0 for samples of length < 2.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Matrix-vector product with a pinned accumulation order: entry `i` sums
/// `m[i,j] * v[j]` over ascending `j`, starting from zero.
///
/// The fixed order is part of the simulator's determinism contract;
/// BLAS-style blocked products are not guaranteed to round identically.
/// (The sweep runs over columns for cache friendliness on the column-major
/// storage, which leaves each entry's summation order unchanged.)
pub fn matvec_seq(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    matvec_seq_into(m, v, &mut out);
    out
}

/// Allocation-free [`matvec_seq`] writing into `out` (same summation order).
pub fn matvec_seq_into(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape();
    debug_assert_eq!(cols, v.len());
    debug_assert_eq!(rows, out.len());
    let data = m.as_slice();
    out.fill(0.0);
    for (j, vj) in v.iter().enumerate() {
        let col = &data[j * rows..(j + 1) * rows];
        for (oi, cij) in out.iter_mut().zip(col) {
            *oi += cij * vj;
        }
    }
}

/// Composite trapezoid weights for a uniform grid of `len` points.
pub fn trapezoid_weight(i: usize, len: usize, dt: f64) -> f64 {
    debug_assert!(len >= 2);
    if i == 0 || i + 1 == len {
        dt / 2.0
    } else {
        dt
    }
}

/// Cumulative trapezoid integral of samples `ys` on grid `ts`.
///
/// Output `out[i] = ∫_{ts[0]}^{ts[i]} y`, with `out[0] = 0`.
pub fn cumtrapz(ts: &[f64], ys: &[f64]) -> Vec<f64> {
    debug_assert_eq!(ts.len(), ys.len());
    let mut out = vec![0.0; ts.len()];
    for i in 1..ts.len() {
        out[i] = out[i - 1] + 0.5 * (ys[i] + ys[i - 1]) * (ts[i] - ts[i - 1]);
    }
    out
}

/// Composite Simpson rule on `[a, b]` with `m` subintervals (`m` even),
/// for a vector-valued integrand.
pub fn simpson<F>(f: F, a: f64, b: f64, m: usize, dim: usize) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    assert!(m >= 2 && m % 2 == 0, "simpson needs an even subinterval count");
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for j in 1..m {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    debug_assert_eq!(acc.len(), dim);
    acc * (h / 3.0)
}

/// Stationary covariance of the linear SDE `dh = -Γ h dt + σ dW`:
/// solves `Γ X + X Γᵀ = Σ` for symmetric `X`, with `Σ = σ σᵀ`.
pub fn lyapunov_stationary(
    gamma: &DMatrix<f64>,
    sigma_sq: &DMatrix<f64>,
) -> Result<DMatrix<f64>, NumericError> {
    let n = gamma.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(ΓX) = (I ⊗ Γ) vec(X); vec(XΓᵀ) = (Γ ⊗ I) vec(X), column-major vec.
    let system = eye.kronecker(gamma) + gamma.kronecker(&eye);
    let rhs = DVector::from_column_slice(sigma_sq.as_slice());
    let lu = system.lu();
    let sol = lu.solve(&rhs).ok_or(NumericError::SingularLyapunov)?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    // Symmetrize round-off.
    Ok((&x + x.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_stderr_basics() {
        let (m, s) = mean_stderr(&[1.0, 1.0, 1.0]);
        assert_eq!(m, 1.0);
        assert_eq!(s, 0.0);
        let (m, s) = mean_stderr(&[0.0, 2.0]);
        assert_eq!(m, 1.0);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let f = |t: f64| DVector::from_vec(vec![t * t * t, 1.0]);
        let got = simpson(f, 0.0, 2.0, 8, 2);
        assert_relative_eq!(got[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(got[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cumtrapz_linear_exact() {
        let ts: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t).collect();
        let c = cumtrapz(&ts, &ys);
        assert_relative_eq!(c[10], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_scalar_case() {
        // gamma = 1, sigma^2 = 0.25 -> variance sigma^2 / (2 gamma).
        let g = DMatrix::from_element(1, 1, 1.0);
        let s = DMatrix::from_element(1, 1, 0.25);
        let x = lyapunov_stationary(&g, &s).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.125, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_matrix_case_satisfies_equation() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 2.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]);
        let s = &sigma * sigma.transpose();
        let x = lyapunov_stationary(&g, &s).unwrap();
        let resid = &g * &x + &x * g.transpose() - &s;
        assert!(resid.amax() < 1e-12);
    }
}
