//! Ridge-regularized kernel machines over paths.
//!
//! Fitting a functional of paths from examples `(u_n, y_n)` by square loss
//! plus a ridge penalty in the kernel's RKHS gives a solution that is a
//! finite kernel expansion over the training examples,
//!
//! ```text
//! F(x) = mean(y) + sum_n c_n K(u_n, x),    (G + λ I) c = y - mean(y),
//! ```
//!
//! which is exactly what [`KernelModel`] stores: the conformed training
//! paths, the dual coefficients, and the centering constant. Targets are
//! centered because the response-theory series the kernel mimics expands
//! around a mean-zero observable.
//!
//! The Gram solve uses a Cholesky factorization with an escalating jitter
//! ladder; the kernel matrix itself is never modified elsewhere.

use crate::kernel::{gram_conformed, KernelError, KernelSpec};
use crate::path::{Path, PathError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// On-disk model format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("need matching non-empty inputs and targets (got {inputs} inputs, {targets} targets)")]
    BadTrainingSet { inputs: usize, targets: usize },
    #[error("ridge parameter must be >= 0, got {0}")]
    NegativeRidge(f64),
    #[error(
        "gram matrix is too ill-conditioned even with jitter {max_jitter:.3e} \
         (condition estimate {condition:.3e})"
    )]
    IllConditionedGram { max_jitter: f64, condition: f64 },
    #[error("model file version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// A fitted kernel machine: the representer-theorem solution over the
/// training examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub spec: KernelSpec,
    /// Training paths, stored already conformed to `spec`.
    pub train_paths: Vec<Path>,
    /// Dual weight per training example.
    pub coeffs: Vec<f64>,
    pub lambda: f64,
    /// Centering constant added back to every prediction.
    pub target_mean: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: KernelModel,
}

/// Fits the kernel machine: conforms the inputs, assembles the Gram matrix,
/// centers the targets, and solves `(G + λI) c = y - mean(y)`.
///
/// The symmetric positive-definite solve starts at the requested `λ` and,
/// on factorization failure, escalates an additional jitter from
/// `1e-12 tr(G)/N` by factors of 10 up to `1e-6 tr(G)/N` before reporting
/// the Gram matrix as ill-conditioned.
pub fn fit(
    inputs: &[Path],
    targets: &[f64],
    spec: &KernelSpec,
    lambda: f64,
) -> Result<KernelModel, LearnError> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(LearnError::BadTrainingSet {
            inputs: inputs.len(),
            targets: targets.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(LearnError::NegativeRidge(lambda));
    }
    let conformed: Vec<Path> = inputs
        .iter()
        .map(|p| spec.conform(p))
        .collect::<Result<_, _>>()?;
    let gram = gram_conformed(&conformed, spec)?;

    let n = targets.len();
    let target_mean = targets.iter().sum::<f64>() / n as f64;
    let rhs = DVector::from_iterator(n, targets.iter().map(|y| y - target_mean));

    let coeffs = solve_spd_with_jitter(&gram, &rhs, lambda)?;
    Ok(KernelModel {
        spec: spec.clone(),
        train_paths: conformed,
        coeffs: coeffs.iter().cloned().collect(),
        lambda,
        target_mean,
    })
}

fn solve_spd_with_jitter(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, LearnError> {
    let n = gram.nrows();
    let trace_scale = gram.trace() / n as f64;
    let mut jitter = 0.0;
    loop {
        let mut regularized = gram.clone();
        for i in 0..n {
            regularized[(i, i)] += lambda + jitter;
        }
        if let Some(chol) = regularized.cholesky() {
            return Ok(chol.solve(rhs));
        }
        jitter = if jitter == 0.0 {
            1e-12 * trace_scale
        } else {
            jitter * 10.0
        };
        if jitter > 1e-6 * trace_scale {
            let eigs = nalgebra::SymmetricEigen::new(gram.clone()).eigenvalues;
            let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
            let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
            return Err(LearnError::IllConditionedGram {
                max_jitter: 1e-6 * trace_scale,
                condition: max / min.abs().max(f64::MIN_POSITIVE),
            });
        }
    }
}

impl KernelModel {
    /// Predicts the functional at a raw input path:
    /// `target_mean + sum_n coeffs[n] K(train_n, x)`.
    pub fn predict(&self, x: &Path) -> Result<f64, LearnError> {
        let xc = self.spec.conform(x)?;
        self.predict_conformed(&xc)
    }

    /// [`KernelModel::predict`] for a path already conformed to the spec.
    pub fn predict_conformed(&self, xc: &Path) -> Result<f64, LearnError> {
        let mut acc = self.target_mean;
        for (p, c) in self.train_paths.iter().zip(&self.coeffs) {
            acc += c * self.spec.eval_conformed(p, xc)?;
        }
        Ok(acc)
    }

    /// In-sample residuals `y_i - F(x_i)`, recomputed through the kernel.
    pub fn training_residuals(&self, targets: &[f64]) -> Result<Vec<f64>, LearnError> {
        self.train_paths
            .iter()
            .zip(targets)
            .map(|(p, y)| Ok(y - self.predict_conformed(p)?))
            .collect()
    }

    /// Writes the model as versioned JSON.
    pub fn save<P: AsRef<std::path::Path>>(&self, file: P) -> Result<(), LearnError> {
        let payload = ModelFile {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        let json = serde_json::to_string_pretty(&payload)
            .map_err(|e| LearnError::CorruptFile(e.to_string()))?;
        std::fs::write(file, json)?;
        Ok(())
    }

    /// Reads a model saved by [`KernelModel::save`]; rejects other format
    /// versions and malformed files.
    pub fn load<P: AsRef<std::path::Path>>(file: P) -> Result<Self, LearnError> {
        let raw = std::fs::read_to_string(file)?;
        let payload: ModelFile =
            serde_json::from_str(&raw).map_err(|e| LearnError::CorruptFile(e.to_string()))?;
        if payload.version != MODEL_FORMAT_VERSION {
            return Err(LearnError::VersionMismatch {
                found: payload.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if payload.model.coeffs.len() != payload.model.train_paths.len() {
            return Err(LearnError::CorruptFile(
                "coefficient and training-path counts differ".into(),
            ));
        }
        Ok(payload.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::PolyBasis;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn spec() -> KernelSpec {
        KernelSpec::piecewise_exp(PolyBasis::monomial(2, 1.0).unwrap(), 6, 1.0)
    }

    fn random_paths(n: usize, seed: u64) -> Vec<Path> {
        let mut rng = crate::rng::stream(seed, 0);
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        (0..n)
            .map(|_| {
                Path::from_fn(&grid, 2, |_| {
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn single_example_is_reproduced_exactly_without_ridge() {
        let spec = spec();
        let x = &random_paths(1, 1)[0];
        let model = fit(std::slice::from_ref(x), &[2.5], &spec, 0.0).unwrap();
        assert_relative_eq!(model.predict(x).unwrap(), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn interpolates_training_targets_at_tiny_ridge() {
        let spec = spec();
        let paths = random_paths(20, 2);
        let mut rng = crate::rng::stream(3, 0);
        let targets: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = fit(&paths, &targets, &spec, 1e-10).unwrap();
        for (p, y) in paths.iter().zip(&targets) {
            let pred = model.predict(p).unwrap();
            assert!(
                (pred - y).abs() < 1e-6 * y.abs().max(1.0),
                "prediction {pred} vs target {y}"
            );
        }
    }

    #[test]
    fn recovers_planted_kernel_section() {
        // Targets are a kernel section y_n = K(x_ref, x_n); with a vanishing
        // ridge the machine reproduces that section on paths inside the
        // training span (value-copies of training paths).
        let spec = spec();
        let paths = random_paths(25, 4);
        let x_ref = &random_paths(1, 5)[0];
        let targets: Vec<f64> = paths
            .iter()
            .map(|p| spec.eval(x_ref, p).unwrap())
            .collect();
        let model = fit(&paths, &targets, &spec, 1e-10).unwrap();
        for (i, p) in paths.iter().enumerate().step_by(5) {
            let held_out = p.clone();
            let pred = model.predict(&held_out).unwrap();
            let want = targets[i];
            assert!(
                (pred - want).abs() < 1e-6 * want.abs().max(1.0),
                "planted section: {pred} vs {want}"
            );
        }
    }

    #[test]
    fn prediction_is_the_explicit_kernel_expansion() {
        let spec = spec();
        let paths = random_paths(10, 6);
        let targets: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let model = fit(&paths, &targets, &spec, 1e-6).unwrap();
        let x = &random_paths(1, 7)[0];
        let xc = spec.conform(x).unwrap();
        let mut explicit = model.target_mean;
        for (p, c) in model.train_paths.iter().zip(&model.coeffs) {
            explicit += c * spec.eval_conformed(p, &xc).unwrap();
        }
        assert_eq!(model.predict(x).unwrap().to_bits(), explicit.to_bits());
    }

    #[test]
    fn constant_query_sees_mean_plus_coefficient_sum() {
        // Identity basis keeps a constant path constant, so every kernel
        // value against it is 1 and the prediction collapses to the mean
        // plus the coefficient sum.
        let spec = KernelSpec::piecewise_exp(PolyBasis::monomial(1, 1.0).unwrap(), 6, 1.0);
        let paths = random_paths(8, 8);
        let targets: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let model = fit(&paths, &targets, &spec, 1e-4).unwrap();
        let flat = Path::new(vec![0.0, 1.0], vec![vec![0.3, -0.4], vec![0.3, -0.4]]).unwrap();
        let want = model.target_mean + model.coeffs.iter().sum::<f64>();
        assert_relative_eq!(model.predict(&flat).unwrap(), want, epsilon = 1e-10);
    }

    #[test]
    fn training_order_does_not_matter() {
        let spec = spec();
        let paths = random_paths(12, 9);
        let targets: Vec<f64> = (0..12).map(|i| (i as f64).cos()).collect();
        let model = fit(&paths, &targets, &spec, 1e-8).unwrap();

        let perm: Vec<usize> = (0..12).rev().collect();
        let paths_p: Vec<Path> = perm.iter().map(|&i| paths[i].clone()).collect();
        let targets_p: Vec<f64> = perm.iter().map(|&i| targets[i]).collect();
        let model_p = fit(&paths_p, &targets_p, &spec, 1e-8).unwrap();

        for q in random_paths(5, 10) {
            let a = model.predict(&q).unwrap();
            let b = model_p.predict(&q).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn residual_norm_is_nondecreasing_in_ridge() {
        let spec = spec();
        let paths = random_paths(15, 11);
        let mut rng = crate::rng::stream(12, 0);
        let targets: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = -1.0;
        for lambda in [1e-10, 1e-6, 1e-2, 1.0] {
            let model = fit(&paths, &targets, &spec, lambda).unwrap();
            let norm: f64 = model
                .training_residuals(&targets)
                .unwrap()
                .iter()
                .map(|r| r * r)
                .sum::<f64>()
                .sqrt();
            assert!(
                norm >= last - 1e-12,
                "residual norm decreased: {norm} after {last} at lambda {lambda}"
            );
            last = norm;
        }
    }

    #[test]
    fn target_scaling_scales_coefficients_and_predictions() {
        let spec = spec();
        let paths = random_paths(10, 13);
        let targets: Vec<f64> = (0..10).map(|i| 0.3 * (i as f64) - 1.0).collect();
        let beta = 3.7;
        let scaled: Vec<f64> = targets.iter().map(|y| beta * y).collect();
        let m1 = fit(&paths, &targets, &spec, 1e-6).unwrap();
        let m2 = fit(&paths, &scaled, &spec, 1e-6).unwrap();
        for (a, b) in m1.coeffs.iter().zip(&m2.coeffs) {
            assert!((beta * a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
        let q = &random_paths(1, 14)[0];
        let (p1, p2) = (m1.predict(q).unwrap(), m2.predict(q).unwrap());
        assert!((beta * p1 - p2).abs() < 1e-10 * p2.abs().max(1.0));
    }

    #[test]
    fn save_load_round_trip_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("model.json");
        let spec = spec();
        let paths = random_paths(6, 15);
        let targets: Vec<f64> = (0..6).map(|i| (i as f64).sqrt()).collect();
        let model = fit(&paths, &targets, &spec, 1e-8).unwrap();
        model.save(&file).unwrap();
        let loaded = KernelModel::load(&file).unwrap();
        for q in random_paths(4, 16) {
            let a = model.predict(&q).unwrap();
            let b = loaded.predict(&q).unwrap();
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn load_rejects_truncated_and_mismatched_files() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("model.json");
        let spec = spec();
        let paths = random_paths(3, 17);
        let model = fit(&paths, &[1.0, 2.0, 3.0], &spec, 1e-8).unwrap();
        model.save(&file).unwrap();

        let full = std::fs::read_to_string(&file).unwrap();
        std::fs::write(&file, &full[..full.len() / 2]).unwrap();
        assert!(matches!(
            KernelModel::load(&file),
            Err(LearnError::CorruptFile(_))
        ));

        let bumped = full.replacen("\"version\": 1", "\"version\": 999", 1);
        std::fs::write(&file, bumped).unwrap();
        assert!(matches!(
            KernelModel::load(&file),
            Err(LearnError::VersionMismatch {
                found: 999,
                expected: MODEL_FORMAT_VERSION
            })
        ));
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let spec = spec();
        let paths = random_paths(2, 18);
        assert!(matches!(
            fit(&paths, &[1.0], &spec, 0.0),
            Err(LearnError::BadTrainingSet {
                inputs: 2,
                targets: 1
            })
        ));
        assert!(matches!(
            fit(&[], &[], &spec, 0.0),
            Err(LearnError::BadTrainingSet { .. })
        ));
        assert!(matches!(
            fit(&paths, &[1.0, 2.0], &spec, -1.0),
            Err(LearnError::NegativeRidge(_))
        ));
    }
}
