//! Piecewise-linear multi-channel paths.
//!
//! A [`Path`] is a sampled path on `[t0, tN]`: strictly increasing
//! timestamps, one `d`-dimensional value per timestamp, linear in between.
//! Paths are immutable values; every operation returns a new path, so they
//! can be shared freely across threads.
//!
//! [`augment_time`] lifts an `m`-channel input to `m·p` channels by
//! multiplying it against a stack of `p` polynomial time functions
//! ([`PolyBasis`]); this product lift is what turns signatures of the input
//! into response features.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("times must be strictly increasing (violated at index {index})")]
    NonMonotoneTimes { index: usize },
    #[error("length mismatch: {times} timestamps vs {values} value rows")]
    LengthMismatch { times: usize, values: usize },
    #[error("a path needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value at sample {sample}, channel {channel}")]
    NonFiniteValue { sample: usize, channel: usize },
    #[error("channel dimension must be >= 1")]
    EmptyDimension,
    #[error("inconsistent channel dimension at sample {sample}: expected {expected}, got {got}")]
    RaggedValues {
        sample: usize,
        expected: usize,
        got: usize,
    },
    #[error("channel dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("grid point {value} outside path domain [{start}, {end}]")]
    GridOutOfRange { value: f64, start: f64, end: f64 },
    #[error("polynomial basis degree must be >= 1")]
    DegreeTooSmall,
    #[error("invalid basis domain [{0}, {1}]")]
    BadDomain(f64, f64),
    #[error("CSV I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV parse failure at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// A piecewise-linear path: `len()` samples of dimension `dim()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    times: Vec<f64>,
    /// Row-major samples: `values[i * dim + k]` is channel `k` at `times[i]`.
    values: Vec<f64>,
    dim: usize,
}

impl Path {
    /// Validates and builds a path from one value row per timestamp.
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, PathError> {
        if times.len() != values.len() {
            return Err(PathError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        let dim = values.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(PathError::EmptyDimension);
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != dim {
                return Err(PathError::RaggedValues {
                    sample: i,
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let flat: Vec<f64> = values.into_iter().flatten().collect();
        Self::from_flat(times, flat, dim)
    }

    /// Validates and builds a path from row-major flat storage.
    pub fn from_flat(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self, PathError> {
        if dim == 0 {
            return Err(PathError::EmptyDimension);
        }
        if times.len() * dim != values.len() {
            return Err(PathError::LengthMismatch {
                times: times.len(),
                values: values.len() / dim.max(1),
            });
        }
        if times.len() < 2 {
            return Err(PathError::TooFewSamples(times.len()));
        }
        for i in 1..times.len() {
            if !(times[i] > times[i - 1]) {
                return Err(PathError::NonMonotoneTimes { index: i });
            }
        }
        if !times[0].is_finite() {
            return Err(PathError::NonMonotoneTimes { index: 0 });
        }
        for (idx, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(PathError::NonFiniteValue {
                    sample: idx / dim,
                    channel: idx % dim,
                });
            }
        }
        Ok(Self { times, values, dim })
    }

    /// One-channel path from scalar samples.
    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self, PathError> {
        Self::from_flat(times, values, 1)
    }

    /// Samples `f` on `grid` to build a path.
    pub fn from_fn<F>(grid: &[f64], dim: usize, mut f: F) -> Result<Self, PathError>
    where
        F: FnMut(f64) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &t in grid {
            let row = f(t);
            debug_assert_eq!(row.len(), dim);
            values.extend_from_slice(&row);
        }
        Self::from_flat(grid.to_vec(), values, dim)
    }

    /// Constant-zero path of the given dimension on `[t0, t1]`.
    pub fn zero(dim: usize, t0: f64, t1: f64) -> Self {
        Self::from_flat(vec![t0, t1], vec![0.0; 2 * dim], dim).expect("valid zero path")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 samples
    }

    /// Number of linear segments (`len() - 1`).
    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Value row at sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Linear interpolation at `t`, clamped to the path's time domain.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        if t <= self.start_time() {
            return self.sample(0).to_vec();
        }
        if t >= self.end_time() {
            return self.sample(self.len() - 1).to_vec();
        }
        let seg = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => return self.sample(i).to_vec(),
            Err(i) => i - 1,
        };
        let (t0, t1) = (self.times[seg], self.times[seg + 1]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.sample(seg), self.sample(seg + 1));
        a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
    }

    /// Increment of segment `seg`.
    pub fn increment(&self, seg: usize) -> Vec<f64> {
        let (a, b) = (self.sample(seg), self.sample(seg + 1));
        a.iter().zip(b).map(|(x, y)| y - x).collect()
    }

    /// Total increment `X(tN) - X(t0)`.
    pub fn total_increment(&self) -> Vec<f64> {
        let (a, b) = (self.sample(0), self.sample(self.len() - 1));
        a.iter().zip(b).map(|(x, y)| y - x).collect()
    }

    /// Concatenation: `other` is translated in time to start at this path's
    /// final time and in value to keep the result continuous, preserving the
    /// increments of `other`.
    pub fn concat(&self, other: &Path) -> Result<Path, PathError> {
        if self.dim != other.dim {
            return Err(PathError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let t_shift = self.end_time() - other.start_time();
        let base = self.sample(self.len() - 1).to_vec();
        let other0 = other.sample(0).to_vec();

        let mut times = self.times.clone();
        let mut values = self.values.clone();
        for i in 1..other.len() {
            times.push(other.times[i] + t_shift);
            for k in 0..self.dim {
                values.push(base[k] + (other.sample(i)[k] - other0[k]));
            }
        }
        Path::from_flat(times, values, self.dim)
    }

    /// Exact 1-variation of the piecewise-linear path: the sum of Euclidean
    /// segment lengths (the supremum over partitions is attained on the
    /// sample partition).
    pub fn one_variation(&self) -> f64 {
        (0..self.segments())
            .map(|s| self.increment(s).iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum()
    }

    /// Linear resampling onto `grid`, which must be strictly increasing and
    /// inside the path's time domain.
    pub fn resample_linear(&self, grid: &[f64]) -> Result<Path, PathError> {
        let (start, end) = (self.start_time(), self.end_time());
        let eps = 1e-12 * (end - start).abs().max(1.0);
        for &g in grid {
            if g < start - eps || g > end + eps {
                return Err(PathError::GridOutOfRange {
                    value: g,
                    start,
                    end,
                });
            }
        }
        let mut values = Vec::with_capacity(grid.len() * self.dim);
        for &g in grid {
            values.extend(self.value_at(g));
        }
        Path::from_flat(grid.to_vec(), values, self.dim)
    }

    /// Time reversal on the same time interval.
    pub fn reverse(&self) -> Path {
        let (t0, t1) = (self.start_time(), self.end_time());
        let n = self.len();
        let mut times = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..n {
            let j = n - 1 - i;
            times.push(t0 + (t1 - self.times[j]));
            values.extend_from_slice(self.sample(j));
        }
        // Reversal of strictly increasing times may produce duplicated
        // endpoints only if the input was degenerate, which `new` rejects.
        Path::from_flat(times, values, self.dim).expect("reversal preserves validity")
    }

    /// Rescales all values by `s`.
    pub fn scale_values(&self, s: f64) -> Path {
        Path {
            times: self.times.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
            dim: self.dim,
        }
    }

    /// Reads a path from CSV with header `t,x1,...,xd`.
    pub fn read_csv<P: AsRef<FsPath>>(file: P) -> Result<Self, PathError> {
        let reader = BufReader::new(std::fs::File::open(file)?);
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut dim = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                let mut cols = line.split(',');
                if cols.next().map(str::trim) != Some("t") {
                    return Err(PathError::Csv {
                        line: 1,
                        message: "expected header starting with `t`".into(),
                    });
                }
                dim = cols.count();
                if dim == 0 {
                    return Err(PathError::EmptyDimension);
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(PathError::Csv {
                    line: lineno + 1,
                    message: format!("expected {} columns, got {}", dim + 1, fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64, PathError> {
                s.trim().parse::<f64>().map_err(|e| PathError::Csv {
                    line: lineno + 1,
                    message: e.to_string(),
                })
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        Self::from_flat(times, values, dim.max(1))
    }

    /// Writes the path as CSV with header `t,x1,...,xd`.
    pub fn write_csv<P: AsRef<FsPath>>(&self, file: P) -> Result<(), PathError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(file)?);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|k| format!("x{k}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = std::iter::once(format!("{:.17e}", self.times[i]))
                .chain(self.sample(i).iter().map(|v| format!("{v:.17e}")))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Which polynomial family a [`PolyBasis`] stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `(1, s, s^2, ...)` with `s` the time rescaled to `[0, 1]`; the
    /// rescaling keeps high powers conditioned and, being the same fixed
    /// reparametrization for every path, leaves learned models unchanged.
    Monomial,
    /// The first `p` Legendre polynomials shifted to the domain, orthogonal
    /// under the uniform weight.
    Legendre,
}

/// A stack of `degree` polynomial time functions on a fixed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyBasis {
    pub kind: BasisKind,
    /// Number of basis functions (`>= 1`).
    pub degree: usize,
    /// Domain `[t0, t1]` the polynomials are defined over.
    pub domain: (f64, f64),
}

impl PolyBasis {
    pub fn new(kind: BasisKind, degree: usize, domain: (f64, f64)) -> Result<Self, PathError> {
        if degree < 1 {
            return Err(PathError::DegreeTooSmall);
        }
        if !(domain.1 > domain.0) || !domain.0.is_finite() || !domain.1.is_finite() {
            return Err(PathError::BadDomain(domain.0, domain.1));
        }
        Ok(Self {
            kind,
            degree,
            domain,
        })
    }

    /// Monomial basis on `[0, t_end]`.
    pub fn monomial(degree: usize, t_end: f64) -> Result<Self, PathError> {
        Self::new(BasisKind::Monomial, degree, (0.0, t_end))
    }

    /// Legendre basis on `[0, t_end]`.
    pub fn legendre(degree: usize, t_end: f64) -> Result<Self, PathError> {
        Self::new(BasisKind::Legendre, degree, (0.0, t_end))
    }

    /// Evaluates all `degree` basis functions at `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let s = (t - self.domain.0) / (self.domain.1 - self.domain.0);
        match self.kind {
            BasisKind::Monomial => {
                let mut out = Vec::with_capacity(self.degree);
                let mut pw = 1.0;
                for _ in 0..self.degree {
                    out.push(pw);
                    pw *= s;
                }
                out
            }
            BasisKind::Legendre => {
                // Shifted Legendre, standard normalization P_j(1) = 1, via
                // the three-term recurrence on x = 2s - 1.
                let x = 2.0 * s - 1.0;
                let mut out = Vec::with_capacity(self.degree);
                let mut p_prev = 1.0;
                out.push(p_prev);
                if self.degree > 1 {
                    let mut p = x;
                    out.push(p);
                    for j in 1..self.degree - 1 {
                        let jf = j as f64;
                        let p_next = ((2.0 * jf + 1.0) * x * p - jf * p_prev) / (jf + 1.0);
                        p_prev = p;
                        p = p_next;
                        out.push(p);
                    }
                }
                out
            }
        }
    }
}

/// Default grid-refinement factor for [`augment_time`]: bounds the error of
/// linearly interpolating the product `u(t)·ψ(t)` between samples.
pub const DEFAULT_AUGMENT_REFINE: usize = 4;

/// Time augmentation: lifts `u` to the `m·p`-channel product path whose
/// channel `(k, j)` is `u_k(t)·ψ_j(t)`, sampled on `u`'s grid refined by
/// [`DEFAULT_AUGMENT_REFINE`].
///
/// Channel layout: input channel `k` is the slow index, so channel
/// `k * p + j` holds `u_k · ψ_j`.
pub fn augment_time(u: &Path, basis: &PolyBasis) -> Result<Path, PathError> {
    augment_time_with(u, basis, DEFAULT_AUGMENT_REFINE)
}

/// [`augment_time`] with an explicit refinement factor.
pub fn augment_time_with(u: &Path, basis: &PolyBasis, refine: usize) -> Result<Path, PathError> {
    if basis.degree < 1 {
        return Err(PathError::DegreeTooSmall);
    }
    // With a single constant basis function the product is exactly
    // piecewise-linear, so no refinement is applied and the lift is the
    // identity on values.
    let refine = if basis.degree == 1 { 1 } else { refine.max(1) };
    let mut grid = Vec::with_capacity(u.segments() * refine + 1);
    for seg in 0..u.segments() {
        let (t0, t1) = (u.times()[seg], u.times()[seg + 1]);
        for r in 0..refine {
            grid.push(t0 + (t1 - t0) * (r as f64 / refine as f64));
        }
    }
    grid.push(u.end_time());

    let p = basis.degree;
    let m = u.dim();
    let mut values = Vec::with_capacity(grid.len() * m * p);
    for &t in &grid {
        let uv = u.value_at(t);
        let psi = basis.eval(t);
        for k in 0..m {
            for pj in &psi {
                values.push(uv[k] * pj);
            }
        }
    }
    Path::from_flat(grid, values, m * p)
}
