//! Truncated tensor-algebra signatures of piecewise-linear paths.
//!
//! The signature of a path is the sequence of its iterated integrals,
//! a group-like element of the tensor algebra. For a piecewise-linear path
//! it is the Chen product of per-segment tensor exponentials, which is how
//! [`signature`] computes it. [`sig_oracle`] evaluates single coefficients
//! by nested Riemann–Stieltjes quadrature over the ordered simplex instead;
//! it shares no code with the tensor route and serves as the independent
//! cross-check throughout the test suite.
//!
//! Dense per-level storage (`d^n` entries at level `n`, row-major word
//! indexing) is used throughout: truncation levels and alphabet sizes stay
//! small at desk scale, and the dense layout vectorizes.

use crate::path::Path;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("truncation level {requested} exceeds the configured cap {cap}")]
    LevelCap { requested: usize, cap: usize },
    #[error("refusing to allocate {entries} tensor entries (guard: {guard}); lower the level or dimension")]
    MemoryGuard { entries: usize, guard: usize },
    #[error("alphabet size mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("word of length {word} exceeds signature level {level}")]
    WordTooLong { word: usize, level: usize },
    #[error("letter {letter} out of range 1..={dim}")]
    LetterOutOfRange { letter: usize, dim: usize },
    #[error("inverse needs a unital element (level-0 entry 1, got {0})")]
    NotUnital(f64),
}

/// Resource guards for [`signature_with`]: a hard truncation cap and a bound
/// on total allocated tensor entries, protecting against accidental
/// combinatorial blowup in `d^M`.
#[derive(Debug, Clone)]
pub struct SignatureLimits {
    pub max_level: usize,
    pub max_entries: usize,
}

impl Default for SignatureLimits {
    fn default() -> Self {
        Self {
            max_level: 12,
            max_entries: 1 << 26,
        }
    }
}

/// A word over the alphabet `{1, ..., d}`, indexing one signature
/// coefficient (the empty word indexes level 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word(pub Vec<usize>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Row-major offset of the word in a level-`n` tensor over `d` letters:
    /// `(i_1, ..., i_n) -> sum (i_k - 1) d^(n-k)`.
    pub fn offset(&self, dim: usize) -> Result<usize, SignatureError> {
        let mut off = 0usize;
        for &letter in &self.0 {
            if letter == 0 || letter > dim {
                return Err(SignatureError::LetterOutOfRange { letter, dim });
            }
            off = off * dim + (letter - 1);
        }
        Ok(off)
    }
}

/// Levels `0..=level` of a signature over an alphabet of size `dim`;
/// level `n` is a dense tensor of `dim^n` word-indexed entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSignature {
    dim: usize,
    level: usize,
    levels: Vec<Vec<f64>>,
}

impl TruncatedSignature {
    /// The algebra unit `(1, 0, 0, ...)`.
    pub fn unit(dim: usize, level: usize) -> Self {
        let levels = (0..=level)
            .map(|n| {
                let mut v = vec![0.0; dim.pow(n as u32)];
                if n == 0 {
                    v[0] = 1.0;
                }
                v
            })
            .collect();
        Self { dim, level, levels }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Dense level-`n` tensor.
    pub fn level_tensor(&self, n: usize) -> &[f64] {
        &self.levels[n]
    }

    /// Coefficient indexed by `word` (the dual pairing with the
    /// corresponding tensor-basis element).
    pub fn coeff(&self, word: &Word) -> Result<f64, SignatureError> {
        if word.len() > self.level {
            return Err(SignatureError::WordTooLong {
                word: word.len(),
                level: self.level,
            });
        }
        Ok(self.levels[word.len()][word.offset(self.dim)?])
    }

    /// Checks the structural invariants after deserialization.
    pub fn validate(&self) -> bool {
        self.levels.len() == self.level + 1
            && self
                .levels
                .iter()
                .enumerate()
                .all(|(n, l)| l.len() == self.dim.pow(n as u32))
            && self
                .levels
                .iter()
                .all(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// Truncated tensor exponential of a level-1 element:
/// level `n` is `v^{(x) n} / n!`.
pub fn tensor_exp(v: &[f64], level: usize) -> TruncatedSignature {
    let dim = v.len();
    let mut levels = Vec::with_capacity(level + 1);
    levels.push(vec![1.0]);
    for n in 1..=level {
        let prev = &levels[n - 1];
        let mut next = vec![0.0; dim.pow(n as u32)];
        let scale = 1.0 / n as f64;
        for (i, p) in prev.iter().enumerate() {
            for (j, x) in v.iter().enumerate() {
                next[i * dim + j] = p * x * scale;
            }
        }
        levels.push(next);
    }
    TruncatedSignature { dim, level, levels }
}

/// Truncated tensor-algebra product:
/// `(a b)_n = sum_{k=0..n} a_k (x) b_{n-k}`, keeping levels `0..=level`.
pub fn tensor_mul(
    a: &TruncatedSignature,
    b: &TruncatedSignature,
    level: usize,
) -> Result<TruncatedSignature, SignatureError> {
    if a.dim != b.dim {
        return Err(SignatureError::DimMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    let dim = a.dim;
    let mut levels = Vec::with_capacity(level + 1);
    for n in 0..=level {
        let mut out = vec![0.0; dim.pow(n as u32)];
        for k in 0..=n {
            if k > a.level || n - k > b.level {
                continue;
            }
            let (ak, bk) = (&a.levels[k], &b.levels[n - k]);
            // Word concatenation is index concatenation in row-major order.
            for (i, av) in ak.iter().enumerate() {
                if *av == 0.0 {
                    continue;
                }
                let base = i * bk.len();
                for (j, bv) in bk.iter().enumerate() {
                    out[base + j] += av * bv;
                }
            }
        }
        levels.push(out);
    }
    Ok(TruncatedSignature { dim, level, levels })
}

/// Group inverse of a unital element, via the geometric series of its
/// strictly-positive-degree part (exact in the truncated algebra).
pub fn inverse(s: &TruncatedSignature) -> Result<TruncatedSignature, SignatureError> {
    let c0 = s.levels[0][0];
    if (c0 - 1.0).abs() > 1e-9 {
        return Err(SignatureError::NotUnital(c0));
    }
    let level = s.level;
    let mut x = s.clone();
    x.levels[0][0] = 0.0;
    let mut acc = TruncatedSignature::unit(s.dim, level);
    let mut power = TruncatedSignature::unit(s.dim, level);
    for k in 1..=level {
        power = tensor_mul(&power, &x, level)?;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for (al, pl) in acc.levels.iter_mut().zip(&power.levels) {
            for (a, p) in al.iter_mut().zip(pl) {
                *a += sign * p;
            }
        }
    }
    Ok(acc)
}

/// Signature of a piecewise-linear path truncated at `level`, under the
/// default [`SignatureLimits`].
pub fn signature(p: &Path, level: usize) -> Result<TruncatedSignature, SignatureError> {
    signature_with(p, level, &SignatureLimits::default())
}

/// [`signature`] with explicit resource limits.
///
/// Computed as the Chen product of per-segment exponentials
/// `exp(ΔX^(1)) (x) ... (x) exp(ΔX^(L))`, reduced over a fixed binary tree
/// so results do not depend on the execution schedule.
pub fn signature_with(
    p: &Path,
    level: usize,
    limits: &SignatureLimits,
) -> Result<TruncatedSignature, SignatureError> {
    if level > limits.max_level {
        return Err(SignatureError::LevelCap {
            requested: level,
            cap: limits.max_level,
        });
    }
    let mut entries: usize = 0;
    for n in 0..=level {
        entries = entries.saturating_add(p.dim().saturating_pow(n as u32));
        if entries > limits.max_entries {
            return Err(SignatureError::MemoryGuard {
                entries,
                guard: limits.max_entries,
            });
        }
    }
    Ok(chen_range(p, 0, p.segments(), level))
}

fn chen_range(p: &Path, lo: usize, hi: usize, level: usize) -> TruncatedSignature {
    debug_assert!(lo < hi);
    if hi - lo == 1 {
        return tensor_exp(&p.increment(lo), level);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = if hi - lo >= 64 {
        rayon::join(
            || chen_range(p, lo, mid, level),
            || chen_range(p, mid, hi, level),
        )
    } else {
        (chen_range(p, lo, mid, level), chen_range(p, mid, hi, level))
    };
    tensor_mul(&a, &b, level).expect("dims agree within one path")
}

/// Direct quadrature evaluation of one signature coefficient: nested
/// left-endpoint Riemann–Stieltjes sums over the ordered simplex, with
/// `subdiv` uniform subintervals per level. Converges to the coefficient as
/// `subdiv` grows; see [`sig_oracle_auto`] for a monitored driver.
pub fn sig_oracle(p: &Path, word: &Word, subdiv: usize) -> f64 {
    assert!(subdiv >= 1, "subdiv must be >= 1");
    if word.is_empty() {
        return 1.0;
    }
    let (t0, t1) = (p.start_time(), p.end_time());
    let nodes = subdiv + 1;
    // One inner layer per letter, left to right: F_k(t) = ∫_0^t F_{k-1} dX^{i_k}.
    let mut layer = vec![1.0; nodes];
    for &letter in &word.0 {
        let channel = sample_channel_uniform(p, letter - 1, t0, t1, subdiv);
        let mut next = vec![0.0; nodes];
        let mut acc = 0.0;
        for j in 1..nodes {
            acc += layer[j - 1] * (channel[j] - channel[j - 1]);
            next[j] = acc;
        }
        layer = next;
    }
    layer[nodes - 1]
}

/// Result of the subdivision-doubling oracle driver.
#[derive(Debug, Clone, Copy)]
pub struct OracleEstimate {
    pub value: f64,
    /// Final subdivision count reached.
    pub subdiv: usize,
    /// Whether successive extrapolated values stabilized below the tolerance.
    pub converged: bool,
}

/// Runs [`sig_oracle`] with doubling subdivisions and Richardson
/// extrapolation of the leading first-order error term, stopping once
/// successive extrapolated values differ by less than `tol`.
pub fn sig_oracle_auto(p: &Path, word: &Word, tol: f64, max_subdiv: usize) -> OracleEstimate {
    let mut subdiv = 64.min(max_subdiv);
    let mut coarse = sig_oracle(p, word, subdiv);
    let mut fine = sig_oracle(p, word, subdiv * 2);
    let mut extrap = 2.0 * fine - coarse;
    loop {
        subdiv *= 2;
        if subdiv * 2 > max_subdiv {
            return OracleEstimate {
                value: extrap,
                subdiv,
                converged: false,
            };
        }
        coarse = fine;
        fine = sig_oracle(p, word, subdiv * 2);
        let next = 2.0 * fine - coarse;
        if (next - extrap).abs() < tol {
            return OracleEstimate {
                value: next,
                subdiv: subdiv * 2,
                converged: true,
            };
        }
        extrap = next;
    }
}

/// Samples one channel of `p` at the `subdiv + 1` uniform nodes of
/// `[t0, t1]` with a single interpolation sweep.
fn sample_channel_uniform(p: &Path, channel: usize, t0: f64, t1: f64, subdiv: usize) -> Vec<f64> {
    let times = p.times();
    let mut out = Vec::with_capacity(subdiv + 1);
    let mut seg = 0usize;
    for j in 0..=subdiv {
        let t = t0 + (t1 - t0) * j as f64 / subdiv as f64;
        while seg + 2 < times.len() && times[seg + 1] <= t {
            seg += 1;
        }
        let (a, b) = (times[seg], times[seg + 1]);
        let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
        let (x, y) = (p.sample(seg)[channel], p.sample(seg + 1)[channel]);
        out.push(x + w * (y - x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn two_segment_l_path() -> Path {
        Path::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
        )
        .unwrap()
    }

    fn random_path(rng: &mut impl Rng, dim: usize, segs: usize) -> Path {
        let times: Vec<f64> = (0..=segs).map(|i| i as f64).collect();
        let mut row = vec![0.0; dim];
        let mut rows = vec![row.clone()];
        for _ in 0..segs {
            row = row
                .iter()
                .map(|v| v + rng.random_range(-1.0f64..1.0) / (dim as f64).sqrt())
                .collect();
            rows.push(row.clone());
        }
        Path::new(times, rows).unwrap()
    }

    // ---- oracle first: frozen expected values ----

    #[test]
    fn oracle_empty_word_is_one() {
        let p = two_segment_l_path();
        assert_eq!(sig_oracle(&p, &Word::empty(), 1), 1.0);
    }

    #[test]
    fn oracle_single_letter_telescopes_exactly() {
        let mut rng = crate::rng::stream(21, 0);
        for _ in 0..5 {
            let p = random_path(&mut rng, 2, 4);
            for subdiv in [4, 7, 64] {
                let got = sig_oracle(&p, &Word(vec![1]), subdiv);
                assert_relative_eq!(got, p.total_increment()[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn oracle_level_two_on_l_path() {
        let p = two_segment_l_path();
        // X^1 moves first, then X^2: word (1,2) integrates to 1, (2,1) to 0.
        assert_relative_eq!(sig_oracle(&p, &Word(vec![1, 2]), 512), 1.0, epsilon = 1e-6);
        assert!(sig_oracle(&p, &Word(vec![2, 1]), 512).abs() < 1e-6);
    }

    #[test]
    fn oracle_auto_converges_on_smooth_words() {
        let mut rng = crate::rng::stream(22, 0);
        let p = random_path(&mut rng, 2, 5);
        let est = sig_oracle_auto(&p, &Word(vec![1, 2]), 1e-7, 1 << 20);
        assert!(est.converged);
        let sig = signature(&p, 2).unwrap();
        let exact = sig.coeff(&Word(vec![1, 2])).unwrap();
        assert_relative_eq!(est.value, exact, max_relative = 1e-6, epsilon = 1e-8);
    }

    // ---- tensor algebra ----

    #[test]
    fn exp_of_zero_is_unit() {
        let e = tensor_exp(&[0.0, 0.0], 3);
        assert_eq!(e, TruncatedSignature::unit(2, 3));
    }

    #[test]
    fn exp_scalar_levels_are_powers_over_factorials() {
        let e = tensor_exp(&[2.0], 3);
        assert_eq!(e.level_tensor(0), &[1.0]);
        assert_eq!(e.level_tensor(1), &[2.0]);
        assert_eq!(e.level_tensor(2), &[2.0]);
        assert_relative_eq!(e.level_tensor(3)[0], 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn exp_2d_level_two_is_half_outer_product() {
        let e = tensor_exp(&[1.0, 1.0], 2);
        assert_eq!(e.level_tensor(2), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn mul_with_unit_is_identity() {
        let mut rng = crate::rng::stream(23, 0);
        let p = random_path(&mut rng, 2, 3);
        let s = signature(&p, 4).unwrap();
        let u = TruncatedSignature::unit(2, 4);
        assert_eq!(tensor_mul(&s, &u, 4).unwrap(), s);
        assert_eq!(tensor_mul(&u, &s, 4).unwrap(), s);
    }

    #[test]
    fn mul_rejects_dim_mismatch() {
        let a = TruncatedSignature::unit(2, 2);
        let b = TruncatedSignature::unit(3, 2);
        assert!(matches!(
            tensor_mul(&a, &b, 2),
            Err(SignatureError::DimMismatch { left: 2, right: 3 })
        ));
    }

    // ---- signature of paths ----

    #[test]
    fn constant_path_has_unit_signature() {
        let p = Path::new(vec![0.0, 1.0, 2.0], vec![vec![1.0]; 3]).unwrap();
        for m in [0, 1, 3, 5] {
            assert_eq!(signature(&p, m).unwrap(), TruncatedSignature::unit(1, m));
        }
    }

    #[test]
    fn scalar_signature_closed_form() {
        let p = Path::scalar(vec![0.0, 0.4, 1.0], vec![0.0, 0.8, 2.0]).unwrap();
        let s = signature(&p, 3).unwrap();
        assert_relative_eq!(s.coeff(&Word::empty()).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.coeff(&Word(vec![1])).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.coeff(&Word(vec![1, 1])).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            s.coeff(&Word(vec![1, 1, 1])).unwrap(),
            4.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn l_path_level_two_and_signed_area() {
        let s = signature(&two_segment_l_path(), 2).unwrap();
        let s12 = s.coeff(&Word(vec![1, 2])).unwrap();
        let s21 = s.coeff(&Word(vec![2, 1])).unwrap();
        assert_relative_eq!(s12, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s21, 0.0, epsilon = 1e-12);
        assert_relative_eq!((s12 - s21) / 2.0, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn level_one_is_total_increment() {
        let mut rng = crate::rng::stream(24, 0);
        for _ in 0..10 {
            let p = random_path(&mut rng, 3, 5);
            let s = signature(&p, 2).unwrap();
            for (got, want) in s.level_tensor(1).iter().zip(p.total_increment()) {
                assert_relative_eq!(*got, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chen_identity_on_random_pairs() {
        let mut rng = crate::rng::stream(25, 0);
        for m in [2, 4, 5] {
            for _ in 0..6 {
                let segs_x = rng.random_range(1..=5);
                let segs_y = rng.random_range(1..=5);
                let x = random_path(&mut rng, 3, segs_x);
                let y = random_path(&mut rng, 3, segs_y);
                let joined = signature(&x.concat(&y).unwrap(), m).unwrap();
                let product =
                    tensor_mul(&signature(&x, m).unwrap(), &signature(&y, m).unwrap(), m).unwrap();
                for n in 0..=m {
                    for (a, b) in joined.level_tensor(n).iter().zip(product.level_tensor(n)) {
                        assert!((a - b).abs() < 1e-10, "level {n}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn shuffle_identity_at_lowest_order() {
        let mut rng = crate::rng::stream(26, 0);
        let p = random_path(&mut rng, 3, 5);
        let s = signature(&p, 2).unwrap();
        for i in 1..=3usize {
            for j in 1..=3usize {
                let lhs = s.coeff(&Word(vec![i])).unwrap() * s.coeff(&Word(vec![j])).unwrap();
                let rhs =
                    s.coeff(&Word(vec![i, j])).unwrap() + s.coeff(&Word(vec![j, i])).unwrap();
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn time_reversal_gives_group_inverse() {
        let mut rng = crate::rng::stream(27, 0);
        for _ in 0..5 {
            let p = random_path(&mut rng, 2, 4);
            let prod =
                tensor_mul(&signature(&p, 4).unwrap(), &signature(&p.reverse(), 4).unwrap(), 4)
                    .unwrap();
            let unit = TruncatedSignature::unit(2, 4);
            for n in 0..=4 {
                for (a, b) in prod.level_tensor(n).iter().zip(unit.level_tensor(n)) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn series_inverse_matches_group_inverse() {
        let mut rng = crate::rng::stream(28, 0);
        let p = random_path(&mut rng, 2, 5);
        let s = signature(&p, 4).unwrap();
        let inv = inverse(&s).unwrap();
        let prod = tensor_mul(&s, &inv, 4).unwrap();
        let unit = TruncatedSignature::unit(2, 4);
        for n in 0..=4 {
            for (a, b) in prod.level_tensor(n).iter().zip(unit.level_tensor(n)) {
                assert!((a - b).abs() < 1e-10);
            }
        }

        // Single linear segment: inverse is the exponential of the negated
        // increment.
        let seg = Path::new(vec![0.0, 1.0], vec![vec![0.0, 0.0], vec![0.3, -0.7]]).unwrap();
        let s = signature(&seg, 4).unwrap();
        let inv = inverse(&s).unwrap();
        let neg = tensor_exp(&[-0.3, 0.7], 4);
        for n in 0..=4 {
            for (a, b) in inv.level_tensor(n).iter().zip(neg.level_tensor(n)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coefficients_match_oracle_on_random_paths() {
        let mut rng = crate::rng::stream(29, 0);
        let p = random_path(&mut rng, 2, 4);
        let s = signature(&p, 3).unwrap();
        for word in [
            Word(vec![1]),
            Word(vec![2]),
            Word(vec![1, 2]),
            Word(vec![2, 2]),
            Word(vec![1, 2, 1]),
            Word(vec![2, 1, 1]),
        ] {
            let est = sig_oracle_auto(&p, &word, 1e-7, 1 << 20);
            assert!(est.converged, "oracle failed to stabilize for {word:?}");
            let exact = s.coeff(&word).unwrap();
            let tol = 1e-6 * exact.abs().max(1.0);
            assert!(
                (est.value - exact).abs() < tol,
                "{word:?}: oracle {} vs signature {exact}",
                est.value
            );
        }
    }

    #[test]
    fn resource_guards_trip() {
        let p = two_segment_l_path();
        assert!(matches!(
            signature(&p, 13),
            Err(SignatureError::LevelCap {
                requested: 13,
                cap: 12
            })
        ));
        let limits = SignatureLimits {
            max_level: 12,
            max_entries: 10,
        };
        assert!(matches!(
            signature_with(&p, 4, &limits),
            Err(SignatureError::MemoryGuard { .. })
        ));
    }

    #[test]
    fn coeff_errors() {
        let s = signature(&two_segment_l_path(), 2).unwrap();
        assert!(matches!(
            s.coeff(&Word(vec![1, 2, 1])),
            Err(SignatureError::WordTooLong { word: 3, level: 2 })
        ));
        assert!(matches!(
            s.coeff(&Word(vec![3])),
            Err(SignatureError::LetterOutOfRange { letter: 3, dim: 2 })
        ));
    }

    #[test]
    fn json_dump_shape_and_round_trip() {
        let s = signature(&two_segment_l_path(), 2).unwrap();
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["dim"], 2);
        assert_eq!(json["level"], 2);
        assert_eq!(json["levels"][0][0], 1.0);
        assert_eq!(json["levels"][2][1], 1.0);
        let back: TruncatedSignature = serde_json::from_value(json).unwrap();
        assert!(back.validate());
        assert_eq!(back, s);
    }
}
