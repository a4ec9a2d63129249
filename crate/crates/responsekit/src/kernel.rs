//! Signature kernels over time-augmented paths, and Gram matrix assembly.
//!
//! Two kernel kinds are kept deliberately distinct, because they differ in
//! general and silently conflating them would change learned models:
//!
//! * [`KernelKind::FockTruncated`] — the factorial-weighted inner product of
//!   whole-path signatures truncated at level `M` (a single symmetric Fock
//!   space over the path);
//! * [`KernelKind::PiecewiseExp`] — the closed form for paths linearly
//!   interpolated on a shared `L+1`-point grid: the product over segments of
//!   `exp(<ΔX^(l), ΔY^(l)>)` (an `L`-fold Fock space, one factor per
//!   segment).
//!
//! Raw inputs are conformed before evaluation: time-augmented with the
//! spec's polynomial basis, resampled onto the shared segment grid for the
//! piecewise kernel, and optionally rescaled to unit 1-variation to keep the
//! exponents of the closed form O(1).

use crate::path::{augment_time, Path, PathError, PolyBasis};
use crate::signature::{signature, SignatureError, TruncatedSignature};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("signature shape mismatch: dim {dim_a}x level {lvl_a} vs dim {dim_b} x level {lvl_b}")]
    ShapeMismatch {
        dim_a: usize,
        lvl_a: usize,
        dim_b: usize,
        lvl_b: usize,
    },
    #[error("paths do not share the kernel's segment grid")]
    GridMismatch,
    #[error("gram needs at least one path")]
    NoPaths,
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    FockTruncated,
    PiecewiseExp,
}

/// Configuration of a signature kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Signature truncation level, used by `fock_truncated`.
    pub level: usize,
    /// Polynomial time augmentation applied to raw inputs before kernel
    /// evaluation.
    pub basis: PolyBasis,
    /// Shared `L+1` timestamps, used by `piecewise_exp`: every path is
    /// resampled onto this grid so the closed form applies.
    pub segment_grid: Vec<f64>,
    /// Rescale each conformed path by `1 / one_variation` so per-segment
    /// exponents stay O(1). Off by default; the kernel math itself applies
    /// no normalization.
    #[serde(default)]
    pub rescale: bool,
}

impl KernelSpec {
    /// Piecewise-exponential kernel on `segments` equal segments of
    /// `[0, t_end]` with the given basis.
    pub fn piecewise_exp(basis: PolyBasis, segments: usize, t_end: f64) -> Self {
        let grid = (0..=segments)
            .map(|i| t_end * i as f64 / segments as f64)
            .collect();
        Self {
            kind: KernelKind::PiecewiseExp,
            level: 0,
            basis,
            segment_grid: grid,
            rescale: false,
        }
    }

    /// Truncated Fock kernel at signature level `level`.
    pub fn fock_truncated(basis: PolyBasis, level: usize) -> Self {
        Self {
            kind: KernelKind::FockTruncated,
            level,
            basis,
            segment_grid: Vec::new(),
            rescale: false,
        }
    }

    /// Conforms a raw input path to this kernel: augment, resample (for the
    /// piecewise kernel), optionally rescale to unit 1-variation.
    pub fn conform(&self, raw: &Path) -> Result<Path, KernelError> {
        let mut p = augment_time(raw, &self.basis)?;
        if self.kind == KernelKind::PiecewiseExp {
            p = p.resample_linear(&self.segment_grid)?;
        }
        if self.rescale {
            let var = p.one_variation();
            if var > 1e-300 {
                p = p.scale_values(1.0 / var);
            }
        }
        Ok(p)
    }

    /// Kernel value on paths already conformed to this spec.
    pub fn eval_conformed(&self, x: &Path, y: &Path) -> Result<f64, KernelError> {
        match self.kind {
            KernelKind::PiecewiseExp => sig_kernel_pl(x, y, self),
            KernelKind::FockTruncated => {
                let sx = signature(x, self.level)?;
                let sy = signature(y, self.level)?;
                fock_inner(&sx, &sy)
            }
        }
    }

    /// Kernel value on raw inputs (conforms both first).
    pub fn eval(&self, x: &Path, y: &Path) -> Result<f64, KernelError> {
        self.eval_conformed(&self.conform(x)?, &self.conform(y)?)
    }
}

/// Symmetric Fock inner product of two equal-shape truncated signatures:
/// `sum_n n! <a_n, b_n>`.
pub fn fock_inner(a: &TruncatedSignature, b: &TruncatedSignature) -> Result<f64, KernelError> {
    if a.dim() != b.dim() || a.level() != b.level() {
        return Err(KernelError::ShapeMismatch {
            dim_a: a.dim(),
            lvl_a: a.level(),
            dim_b: b.dim(),
            lvl_b: b.level(),
        });
    }
    let mut total = 0.0;
    let mut factorial = 1.0;
    for n in 0..=a.level() {
        if n > 0 {
            factorial *= n as f64;
        }
        let dot: f64 = a
            .level_tensor(n)
            .iter()
            .zip(b.level_tensor(n))
            .map(|(x, y)| x * y)
            .sum();
        total += factorial * dot;
    }
    Ok(total)
}

/// Closed-form signature kernel for paths sampled on the shared segment
/// grid: the product over segments of `exp(<ΔX^(l), ΔY^(l)>)`. Always
/// strictly positive.
pub fn sig_kernel_pl(x: &Path, y: &Path, spec: &KernelSpec) -> Result<f64, KernelError> {
    if x.dim() != y.dim()
        || x.times() != spec.segment_grid.as_slice()
        || y.times() != spec.segment_grid.as_slice()
    {
        return Err(KernelError::GridMismatch);
    }
    let mut k = 1.0;
    for seg in 0..x.segments() {
        let dot: f64 = x
            .increment(seg)
            .iter()
            .zip(y.increment(seg))
            .map(|(a, b)| a * b)
            .sum();
        k *= dot.exp();
    }
    Ok(k)
}

/// Gram matrix `G[i, j] = K(path_i, path_j)` over raw input paths.
///
/// Paths are conformed once, the upper triangle is evaluated in parallel,
/// and the result is mirrored; entries are independent, so the matrix does
/// not depend on the scheduling.
pub fn gram(paths: &[Path], spec: &KernelSpec) -> Result<DMatrix<f64>, KernelError> {
    if paths.is_empty() {
        return Err(KernelError::NoPaths);
    }
    let conformed: Vec<Path> = paths
        .iter()
        .map(|p| spec.conform(p))
        .collect::<Result<_, _>>()?;
    gram_conformed(&conformed, spec)
}

/// [`gram`] over paths that are already conformed to `spec`.
pub fn gram_conformed(conformed: &[Path], spec: &KernelSpec) -> Result<DMatrix<f64>, KernelError> {
    if conformed.is_empty() {
        return Err(KernelError::NoPaths);
    }
    let n = conformed.len();

    // For the Fock kernel, signatures are the per-path feature; compute each
    // once instead of once per pair.
    let features: Option<Vec<TruncatedSignature>> = match spec.kind {
        KernelKind::FockTruncated => Some(
            conformed
                .par_iter()
                .map(|p| signature(p, spec.level))
                .collect::<Result<_, _>>()?,
        ),
        KernelKind::PiecewiseExp => None,
    };

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| match &features {
                    Some(sigs) => fock_inner(&sigs[i], &sigs[j]),
                    None => sig_kernel_pl(&conformed[i], &conformed[j], spec),
                })
                .collect::<Result<Vec<f64>, KernelError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut g = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            let j = i + off;
            g[(i, j)] = *v;
            g[(j, i)] = *v;
        }
    }
    Ok(g)
}
