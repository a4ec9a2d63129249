//! Numerical nonequilibrium response theory.
//!
//! The output functional of a driven network expands into a Volterra series:
//! an order-`n` term integrates the response kernel `R^(n)(t, s_1..s_n)`
//! against `n` copies of the input amplitude. This module estimates kernels
//! from impulse experiments ([`impulse_response_mc`]), cross-checks the
//! first-order kernel against the stationary correlation function predicted
//! by the fluctuation–dissipation relation ([`fdt_correlation_ou`]),
//! evaluates truncated series ([`volterra_eval`]), composes two truncated
//! series into one ([`compose_kernels`]), and computes the memoryless
//! iterated-integral features that disentangle the input from the network
//! ([`memoryless_features`]).
//!
//! Kernels are stored on the ordered simplex `s_1 <= ... <= s_n <= t` only;
//! they are symmetric in the impulse times by construction, and evaluation
//! multiplies each stored entry by its multiset permutation count.
//! Quadrature everywhere is composite trapezoid on the uniform grid.

use crate::numeric::{cumtrapz, mean_stderr};
use crate::path::{Path, PathError};
use crate::rng::SeedStream;
use crate::srnn::{discretize, step_count, SrnnError, SrnnParams};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResponseError {
    #[error("kernel grid must be uniform from 0 with at least 2 points")]
    BadGrid,
    #[error("kernel sets do not share a grid")]
    GridMismatch,
    #[error("time {0} is not on the kernel grid")]
    TimeOffGrid(f64),
    #[error("kernel order {order} out of range 1..={max}")]
    OrderOutOfRange { order: usize, max: usize },
    #[error("input signal must be scalar, got {0} channels")]
    ScalarSignalRequired(usize),
    #[error("signal does not cover [0, {0}]")]
    SignalDomain(f64),
    #[error("impulse time must satisfy 0 < s < t, got s = {s}, t = {t}")]
    ImpulseOrdering { s: f64, t: f64 },
    #[error("invalid impulse: {0}")]
    BadImpulse(String),
    #[error("impulse bump covers no grid node")]
    OffGridBump,
    #[error("direction has {got} entries, network input dim is {want}")]
    DirectionDim { got: usize, want: usize },
    #[error("fluctuation-dissipation check requires a linear network (a = zero)")]
    NotLinear,
    #[error("fluctuation-dissipation check requires the stationary Gaussian initial law")]
    NotStationaryInit,
    #[error("composition would allocate {entries} intermediate entries (guard: {guard})")]
    ComposeTooLarge { entries: usize, guard: usize },
    #[error("memoryless features need max_order >= 1")]
    BadFeatureOrder,
    #[error(transparent)]
    Srnn(#[from] SrnnError),
    #[error(transparent)]
    Path(#[from] PathError),
}

// ---------------------------------------------------------------------------
// Simplex bookkeeping
// ---------------------------------------------------------------------------

/// Binomial coefficients C(n, k) for the simplex indexing, precomputed as a
/// Pascal triangle truncated at the few columns the rank formulas use
/// (full rows would overflow for the grid sizes involved).
#[derive(Debug, Clone, PartialEq)]
struct BinomTable {
    cols: usize,
    data: Vec<u64>,
}

impl BinomTable {
    fn new(rows: usize, max_k: usize) -> Self {
        let cols = max_k + 1;
        let mut data = vec![0u64; rows * cols];
        for n in 0..rows {
            data[n * cols] = 1;
            for k in 1..cols.min(n + 1) {
                let up_left = data[(n - 1) * cols + k - 1];
                let up = if k <= n - 1 { data[(n - 1) * cols + k] } else { 0 };
                data[n * cols + k] = up_left + up;
            }
        }
        Self { cols, data }
    }

    #[inline]
    fn c(&self, n: usize, k: usize) -> usize {
        debug_assert!(k < self.cols, "binomial column {k} beyond table");
        if k > n {
            0
        } else {
            self.data[n * self.cols + k] as usize
        }
    }
}

/// Number of nondecreasing `n`-tuples over `points` grid indices.
#[inline]
fn simplex_size(binom: &BinomTable, n: usize, points: usize) -> usize {
    binom.c(points + n - 1, n)
}

/// Offset of the `t`-block `t_idx` in an order-`n` kernel array:
/// the count of tuples bounded by smaller observation times.
#[inline]
fn block_offset(binom: &BinomTable, n: usize, t_idx: usize) -> usize {
    binom.c(t_idx + n, n + 1)
}

/// Colex rank of a nondecreasing tuple.
#[inline]
fn tuple_rank(binom: &BinomTable, tuple: &[usize]) -> usize {
    tuple
        .iter()
        .enumerate()
        .map(|(j, &a)| binom.c(a + j, j + 1))
        .sum()
}

/// Visits all nondecreasing `n`-tuples over `{0..=max_idx}` in colex order
/// (the storage order), reusing one buffer.
fn for_each_tuple<F: FnMut(&[usize])>(n: usize, max_idx: usize, mut f: F) {
    let mut buf = vec![0usize; n];
    loop {
        f(&buf);
        // Colex increment: bump the first coordinate that can grow.
        let mut pos = 0;
        loop {
            if pos == n {
                return;
            }
            let cap = if pos + 1 == n { max_idx } else { buf[pos + 1] };
            if buf[pos] < cap {
                buf[pos] += 1;
                for b in buf.iter_mut().take(pos) {
                    *b = 0;
                }
                break;
            }
            pos += 1;
        }
    }
}

/// Count of distinct permutations of a sorted tuple: `n! / prod(run!)`.
fn permutation_multiplicity(tuple: &[usize]) -> f64 {
    let mut mult = 1.0f64;
    let mut pos = 1.0f64;
    let mut run = 1.0f64;
    for w in tuple.windows(2) {
        pos += 1.0;
        if w[1] == w[0] {
            run += 1.0;
        } else {
            run = 1.0;
        }
        mult *= pos / run;
    }
    mult
}

// ---------------------------------------------------------------------------
// VolterraKernels
// ---------------------------------------------------------------------------

/// Discretized response kernels `R^(n)(t, s_1..s_n)`, orders `1..=N`, on a
/// uniform time grid.
///
/// Order `n` stores, for every grid time `t_i`, the values on the ordered
/// simplex of grid tuples `s_1 <= ... <= s_n <= t_i` (colex order); the
/// symmetric extension to unordered arguments is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraKernels {
    grid: Vec<f64>,
    kernels: Vec<Vec<f64>>,
    binom: BinomTable,
}

/// Serialization mirror of [`VolterraKernels`]: `{orders, grid, kernels}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolterraKernelsDump {
    pub orders: usize,
    pub grid: Vec<f64>,
    pub kernels: Vec<Vec<f64>>,
}

fn validate_grid(grid: &[f64]) -> Result<f64, ResponseError> {
    if grid.len() < 2 || grid[0].abs() > 1e-12 {
        return Err(ResponseError::BadGrid);
    }
    let dt = grid[1] - grid[0];
    if !(dt > 0.0) {
        return Err(ResponseError::BadGrid);
    }
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(ResponseError::BadGrid);
        }
    }
    Ok(dt)
}

impl VolterraKernels {
    /// Builds kernels of orders `1..=orders` by evaluating `f(order, t, s)`
    /// on every stored grid tuple (`s` sorted ascending, all `<= t`).
    pub fn from_fn<F>(grid: Vec<f64>, orders: usize, f: F) -> Result<Self, ResponseError>
    where
        F: Fn(usize, f64, &[f64]) -> f64 + Sync,
    {
        validate_grid(&grid)?;
        let points = grid.len();
        let binom = BinomTable::new(points + orders + 2, orders + 2);
        let mut kernels = Vec::with_capacity(orders);
        for order in 1..=orders {
            let blocks: Vec<Vec<f64>> = (0..points)
                .into_par_iter()
                .map(|t_idx| {
                    let mut block = Vec::with_capacity(simplex_size(&binom, order, t_idx + 1));
                    let mut times = vec![0.0; order];
                    for_each_tuple(order, t_idx, |tuple| {
                        for (t, &i) in times.iter_mut().zip(tuple) {
                            *t = grid[i];
                        }
                        block.push(f(order, grid[t_idx], &times));
                    });
                    block
                })
                .collect();
            kernels.push(blocks.concat());
        }
        Ok(Self {
            grid,
            kernels,
            binom,
        })
    }

    /// Rebuilds a kernel set from its dump, checking the layout.
    pub fn from_dump(dump: VolterraKernelsDump) -> Result<Self, ResponseError> {
        validate_grid(&dump.grid)?;
        if dump.kernels.len() != dump.orders {
            return Err(ResponseError::OrderOutOfRange {
                order: dump.kernels.len(),
                max: dump.orders,
            });
        }
        let points = dump.grid.len();
        let binom = BinomTable::new(points + dump.orders + 2, dump.orders + 2);
        for (i, k) in dump.kernels.iter().enumerate() {
            let expected = block_offset(&binom, i + 1, points);
            if k.len() != expected {
                return Err(ResponseError::BadGrid);
            }
        }
        Ok(Self {
            grid: dump.grid,
            kernels: dump.kernels,
            binom,
        })
    }

    pub fn to_dump(&self) -> VolterraKernelsDump {
        VolterraKernelsDump {
            orders: self.kernels.len(),
            grid: self.grid.clone(),
            kernels: self.kernels.clone(),
        }
    }

    /// Number of kernel orders `N`.
    pub fn orders(&self) -> usize {
        self.kernels.len()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    /// Index of `t` on the grid.
    pub fn time_index(&self, t: f64) -> Result<usize, ResponseError> {
        let dt = self.grid_step();
        let idx = (t / dt).round();
        if idx < 0.0 || idx as usize >= self.grid.len() || (idx * dt - t).abs() > 1e-9 * dt {
            return Err(ResponseError::TimeOffGrid(t));
        }
        Ok(idx as usize)
    }

    /// Kernel value `R^(order)(grid[t_idx], grid[s[0]], ..)` for a sorted
    /// index tuple with `s.last() <= t_idx`.
    pub fn value(&self, order: usize, t_idx: usize, s_sorted: &[usize]) -> f64 {
        debug_assert_eq!(s_sorted.len(), order);
        debug_assert!(s_sorted.windows(2).all(|w| w[0] <= w[1]));
        debug_assert!(s_sorted.last().map_or(true, |&l| l <= t_idx));
        let off = block_offset(&self.binom, order, t_idx);
        self.kernels[order - 1][off + tuple_rank(&self.binom, s_sorted)]
    }

    fn order_block(&self, order: usize, t_idx: usize) -> &[f64] {
        let off = block_offset(&self.binom, order, t_idx);
        let len = simplex_size(&self.binom, order, t_idx + 1);
        &self.kernels[order - 1][off..off + len]
    }
}

// ---------------------------------------------------------------------------
// Series evaluation
// ---------------------------------------------------------------------------

/// Samples a scalar signal on the kernel grid up to `t_idx`.
fn sample_signal(
    kernels: &VolterraKernels,
    gamma: &Path,
    t_idx: usize,
) -> Result<Vec<f64>, ResponseError> {
    if gamma.dim() != 1 {
        return Err(ResponseError::ScalarSignalRequired(gamma.dim()));
    }
    let t = kernels.grid[t_idx];
    let eps = 1e-9 * t.abs().max(1.0);
    if gamma.start_time() > eps || gamma.end_time() < t - eps {
        return Err(ResponseError::SignalDomain(t));
    }
    Ok((0..=t_idx)
        .map(|j| gamma.value_at(kernels.grid[j])[0])
        .collect())
}

/// Truncated Volterra series evaluation at a grid time `t`:
/// `F_t ≈ sum_n ∫_{[0,t]^n} R^(n)(t, s) γ(s_1)...γ(s_n) ds`.
///
/// Each full-cube integral is computed as a sum over the stored ordered
/// simplex with the multiset permutation count and composite-trapezoid
/// weights per coordinate. The result is exactly linear in each stored
/// kernel order; with a single order it is exactly linear in `γ`.
pub fn volterra_eval(
    kernels: &VolterraKernels,
    gamma: &Path,
    t: f64,
) -> Result<f64, ResponseError> {
    let t_idx = kernels.time_index(t)?;
    if t_idx == 0 {
        return Ok(0.0);
    }
    let g = sample_signal(kernels, gamma, t_idx)?;
    let dt = kernels.grid_step();
    // Per-node factor: trapezoid weight on [0, t] times the signal.
    let node: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(j, gj)| {
            let w = if j == 0 || j == t_idx { dt / 2.0 } else { dt };
            w * gj
        })
        .collect();

    let mut total = 0.0;
    for order in 1..=kernels.orders() {
        let block = kernels.order_block(order, t_idx);
        let mut acc = 0.0;
        let mut pos = 0usize;
        for_each_tuple(order, t_idx, |tuple| {
            let mut prod = block[pos];
            if prod != 0.0 {
                for &j in tuple {
                    prod *= node[j];
                }
                if prod != 0.0 {
                    acc += permutation_multiplicity(tuple) * prod;
                }
            }
            pos += 1;
        });
        total += acc;
    }
    Ok(total)
}

/// Nested two-stage evaluation `F_t[G_.[γ]]`: the inner series is evaluated
/// at every grid node to form a scalar path, which then drives the outer
/// series. This is the direct oracle that [`compose_kernels`] must agree
/// with.
pub fn nested_eval(
    outer: &VolterraKernels,
    inner: &VolterraKernels,
    gamma: &Path,
    t: f64,
) -> Result<f64, ResponseError> {
    if outer.grid != inner.grid {
        return Err(ResponseError::GridMismatch);
    }
    let t_idx = outer.time_index(t)?;
    if t_idx == 0 {
        return Ok(0.0);
    }
    let times: Vec<f64> = outer.grid[..=t_idx].to_vec();
    let mut eta = Vec::with_capacity(times.len());
    for (j, &tj) in times.iter().enumerate() {
        eta.push(if j == 0 {
            0.0
        } else {
            volterra_eval(inner, gamma, tj)?
        });
    }
    let eta_path = Path::scalar(times, eta)?;
    volterra_eval(outer, &eta_path, t)
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// Guard on dense intermediate tensors allocated during composition.
const COMPOSE_GUARD: usize = 1 << 25;

const FACTORIALS: [f64; 13] = [
    1.0,
    1.0,
    2.0,
    6.0,
    24.0,
    120.0,
    720.0,
    5040.0,
    40320.0,
    362880.0,
    3628800.0,
    39916800.0,
    479001600.0,
];

/// Ratio of the trapezoid weight of node `b` on `[0, grid[sigma]]` to its
/// weight on `[0, grid[t_idx]]`: the correction that makes the composed
/// kernels' quadrature commute exactly with nested evaluation. Zero above
/// the observation time (causality), 1 strictly inside, and a boundary
/// factor at `b == sigma`.
#[inline]
fn nested_weight_ratio(b: usize, sigma: usize, t_idx: usize) -> f64 {
    if b > sigma || sigma == 0 {
        0.0
    } else if b < sigma || sigma == t_idx {
        1.0
    } else {
        0.5
    }
}

/// All ordered compositions `(i_1..i_k)` with `k <= max_parts` parts, each
/// part in `1..=max_part`, grouped by nothing (the consumer reads the sum).
fn ordered_compositions(max_parts: usize, max_part: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    fn rec(buf: &mut Vec<usize>, left: usize, max_part: usize, out: &mut Vec<Vec<usize>>) {
        if !buf.is_empty() {
            out.push(buf.clone());
        }
        if left == 0 {
            return;
        }
        for part in 1..=max_part {
            buf.push(part);
            rec(buf, left - 1, max_part, out);
            buf.pop();
        }
    }
    rec(&mut buf, max_parts, max_part, &mut out);
    out
}

/// Composition of two truncated Volterra series: if `outer` has orders
/// `1..=N` and `inner` `1..=M`, the cascade `F[G[γ]]` is a truncated series
/// with exactly `N + M` kernels, assembled from products of one order-`k`
/// outer kernel with `k` inner kernels whose orders sum to the output order
/// (the index set of compositions of `r` into at most `N` parts of size at
/// most `M` — the exponential-Bell-polynomial structure).
///
/// Inner integrals are composite trapezoid over the shared grid.
pub fn compose_kernels(
    outer: &VolterraKernels,
    inner: &VolterraKernels,
) -> Result<VolterraKernels, ResponseError> {
    if outer.grid != inner.grid {
        return Err(ResponseError::GridMismatch);
    }
    let n_out = outer.orders();
    let m_in = inner.orders();
    let r_max = n_out + m_in;
    let grid = outer.grid.clone();
    let points = grid.len();
    let dt = outer.grid_step();
    let binom = BinomTable::new(points + r_max + 2, r_max + 2);

    let compositions = ordered_compositions(n_out, m_in);

    // Resource guard: the dense outer-kernel cube per observation time.
    let cube = points
        .checked_pow(n_out as u32)
        .filter(|c| *c <= COMPOSE_GUARD)
        .ok_or(ResponseError::ComposeTooLarge {
            entries: usize::MAX,
            guard: COMPOSE_GUARD,
        })?;
    let _ = cube;

    // Per observation time, all output orders at once.
    let per_t: Vec<Vec<Vec<f64>>> = (0..points)
        .into_par_iter()
        .map(|t_idx| compose_at_time(outer, inner, &binom, t_idx, dt, &compositions, r_max))
        .collect::<Result<_, _>>()?;

    let mut kernels = Vec::with_capacity(r_max);
    for r in 1..=r_max {
        let mut flat = Vec::with_capacity(block_offset(&binom, r, points));
        for blocks in &per_t {
            flat.extend_from_slice(&blocks[r - 1]);
        }
        kernels.push(flat);
    }
    Ok(VolterraKernels {
        grid,
        kernels,
        binom,
    })
}

/// Inner-kernel matrix for part size `i` at observation time `t_idx`:
///
/// `B[sigma, b] = w(sigma; [0,t]) * R_g^(i)(sigma, b) * prod_l ratio(b_l, sigma)`
///
/// with [`nested_weight_ratio`] adjusting each impulse coordinate so that
/// evaluating the composed kernels reproduces, node for node, the quadrature
/// of the nested two-stage evaluation; the sigma-sum is then the composite
/// trapezoid of the continuum composition integral.
fn inner_matrix(
    inner: &VolterraKernels,
    binom: &BinomTable,
    part: usize,
    t_idx: usize,
    dt: f64,
) -> Vec<f64> {
    let points_t = t_idx + 1;
    let cols = simplex_size(binom, part, points_t);
    let mut b = vec![0.0; points_t * cols];
    let mut col = 0usize;
    for_each_tuple(part, t_idx, |tuple| {
        let lo = *tuple.last().unwrap();
        for sigma in lo.max(1)..points_t {
            let w_sigma = if sigma == 0 || sigma == t_idx {
                dt / 2.0
            } else {
                dt
            };
            let ratio: f64 = tuple
                .iter()
                .map(|&bl| nested_weight_ratio(bl, sigma, t_idx))
                .product();
            if ratio != 0.0 {
                b[sigma * cols + col] = w_sigma * ratio * inner.value(part, sigma, tuple);
            }
        }
        col += 1;
    });
    b
}

#[allow(clippy::too_many_arguments)]
fn compose_at_time(
    outer: &VolterraKernels,
    inner: &VolterraKernels,
    binom: &BinomTable,
    t_idx: usize,
    dt: f64,
    compositions: &[Vec<usize>],
    r_max: usize,
) -> Result<Vec<Vec<f64>>, ResponseError> {
    let points_t = t_idx + 1;
    let mut out: Vec<Vec<f64>> = (1..=r_max)
        .map(|r| vec![0.0; simplex_size(binom, r, points_t)])
        .collect();

    // Dense symmetric extension of each outer kernel order on the sigma
    // cube, cached across compositions with the same k.
    let mut dense_outer: Vec<Option<Vec<f64>>> = vec![None; outer.orders() + 1];
    // Inner matrices per part size.
    let mut inner_mats: Vec<Option<Vec<f64>>> = vec![None; inner.orders() + 1];

    for comp in compositions {
        let k = comp.len();
        let r: usize = comp.iter().sum();

        let cube_len = points_t
            .checked_pow(k as u32)
            .filter(|c| *c <= COMPOSE_GUARD)
            .ok_or(ResponseError::ComposeTooLarge {
                entries: usize::MAX,
                guard: COMPOSE_GUARD,
            })?;

        if dense_outer[k].is_none() {
            let mut cube = vec![0.0; cube_len];
            let mut sorted = vec![0usize; k];
            for (flat, c) in cube.iter_mut().enumerate() {
                let mut rem = flat;
                for s in sorted.iter_mut() {
                    *s = rem % points_t;
                    rem /= points_t;
                }
                sorted.sort_unstable();
                *c = outer.value(k, t_idx, &sorted);
            }
            dense_outer[k] = Some(cube);
        }
        for &part in comp {
            if inner_mats[part].is_none() {
                inner_mats[part] = Some(inner_matrix(inner, binom, part, t_idx, dt));
            }
        }

        // Fold: contract the sigma axes one by one against the inner
        // matrices. Invariant before contracting the j-th part: the flat
        // index is `rest * P + sigma_j`, where `rest` packs the remaining
        // sigma axes (next one fastest) below the finished block columns
        // (first block fastest). Each step transposes sigma to the slow
        // axis and then accumulates whole rows, which both preserves the
        // invariant and keeps the inner loop contiguous.
        let mut state = dense_outer[k].clone().unwrap();
        for &part in comp {
            let cols = simplex_size(binom, part, points_t);
            let mat = inner_mats[part].as_ref().unwrap();
            let dr = state.len() / points_t;
            let next_len = dr
                .checked_mul(cols)
                .filter(|v| *v <= COMPOSE_GUARD)
                .ok_or(ResponseError::ComposeTooLarge {
                    entries: usize::MAX,
                    guard: COMPOSE_GUARD,
                })?;
            let mut transposed = vec![0.0; state.len()];
            for i in 0..dr {
                for sigma in 0..points_t {
                    transposed[sigma * dr + i] = state[i * points_t + sigma];
                }
            }
            let mut next = vec![0.0; next_len];
            for sigma in 0..points_t {
                let srow = &transposed[sigma * dr..(sigma + 1) * dr];
                let mrow = &mat[sigma * cols..(sigma + 1) * cols];
                for (b, mv) in mrow.iter().enumerate() {
                    if *mv != 0.0 {
                        let orow = &mut next[b * dr..(b + 1) * dr];
                        for (o, s) in orow.iter_mut().zip(srow) {
                            *o += mv * s;
                        }
                    }
                }
            }
            state = next;
        }

        // Scatter: state[(b_1..b_k)] contributes to the merged sorted tuple
        // with the multiset-distribution coefficient.
        let prefactor: f64 = comp.iter().map(|&i| FACTORIALS[i]).product::<f64>() / FACTORIALS[r];
        scatter_blocks(binom, comp, &state, points_t, prefactor, &mut out[r - 1]);
    }
    Ok(out)
}

/// Adds `prefactor * multiset_coefficient * T[b_1..b_k]` into the output
/// simplex entry of `merge(b_1..b_k)`, for every combination of inner block
/// tuples.
fn scatter_blocks(
    binom: &BinomTable,
    comp: &[usize],
    state: &[f64],
    points_t: usize,
    prefactor: f64,
    out: &mut [f64],
) {
    let k = comp.len();
    let r: usize = comp.iter().sum();
    let t_idx = points_t - 1;

    // Enumerate block tuples recursively; blocks vary with the first block
    // fastest, matching the fold's column layout.
    let mut blocks: Vec<Vec<usize>> = comp.iter().map(|&i| vec![0usize; i]).collect();
    let mut merged = vec![0usize; r];
    let sizes: Vec<usize> = comp
        .iter()
        .map(|&i| simplex_size(binom, i, points_t))
        .collect();
    let mut counters = vec![0usize; k];

    let mut flat = 0usize;
    loop {
        let v = state[flat];
        if v != 0.0 {
            // Merge the sorted blocks and compute the distribution count:
            // prod_value m_v(w)! / prod_(j,v) m_v(b_j)!.
            let mut pos = 0;
            for b in &blocks {
                merged[pos..pos + b.len()].copy_from_slice(b);
                pos += b.len();
            }
            merged.sort_unstable();
            let mut coef = prefactor;
            // m_v(w)! over distinct values of the merged tuple.
            let mut run = 1usize;
            for i in 1..r {
                if merged[i] == merged[i - 1] {
                    run += 1;
                    coef *= run as f64;
                } else {
                    run = 1;
                }
            }
            for b in &blocks {
                let mut run = 1usize;
                for i in 1..b.len() {
                    if b[i] == b[i - 1] {
                        run += 1;
                        coef /= run as f64;
                    } else {
                        run = 1;
                    }
                }
            }
            out[tuple_rank(binom, &merged)] += coef * v;
        }

        // Advance the odometer of block tuples.
        let mut j = 0;
        loop {
            if j == k {
                return;
            }
            counters[j] += 1;
            advance_tuple(&mut blocks[j], t_idx);
            if counters[j] < sizes[j] {
                break;
            }
            counters[j] = 0;
            for b in blocks[j].iter_mut() {
                *b = 0;
            }
            j += 1;
        }
        flat += 1;
    }
}

/// Advances a nondecreasing tuple to its colex successor (wraps to zero past
/// the end; the caller tracks the count).
fn advance_tuple(tuple: &mut [usize], max_idx: usize) {
    let n = tuple.len();
    let mut pos = 0;
    loop {
        if pos == n {
            return;
        }
        let cap = if pos + 1 == n { max_idx } else { tuple[pos + 1] };
        if tuple[pos] < cap {
            tuple[pos] += 1;
            for b in tuple.iter_mut().take(pos) {
                *b = 0;
            }
            return;
        }
        pos += 1;
    }
}

// ---------------------------------------------------------------------------
// Impulse response estimation
// ---------------------------------------------------------------------------

/// Shape of the small input bump used by the impulse experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpShape {
    Box,
    Triangle,
}

/// A small impulsive perturbation: amplitude `epsilon`, width `delta`,
/// centered at the requested impulse time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub shape: BumpShape,
}

impl ImpulseSpec {
    /// Box bump spanning a few integrator steps: `delta = 4 dt`, amplitude
    /// 0.05. The width must cover several steps; the amplitude trades the
    /// O(eps^2) bias against O(1/(eps sqrt(K))) Monte-Carlo noise.
    pub fn default_for(dt: f64) -> Self {
        Self {
            epsilon: 0.05,
            delta: 4.0 * dt,
            shape: BumpShape::Box,
        }
    }
}

/// Result of one impulse-response experiment.
#[derive(Debug, Clone, Copy)]
pub struct ImpulseEstimate {
    /// First-order estimate `R^(1)(t, s)` in the probed direction.
    pub value: f64,
    pub stderr: f64,
    /// Second-difference estimate of the order-2 response at `(t; s, s)`.
    pub second_order: f64,
    pub second_order_stderr: f64,
    /// Set when the quadratic contribution exceeds 10% of the linear one,
    /// i.e. `epsilon` is too large for a clean first-order read-out.
    pub nonlinearity_warning: bool,
}

fn bump_profile(
    shape: BumpShape,
    delta: f64,
    s: f64,
    steps: usize,
    dt: f64,
) -> Result<(Vec<f64>, f64), ResponseError> {
    let half = delta / 2.0;
    let phi: Vec<f64> = (0..=steps)
        .map(|j| {
            let d = (j as f64 * dt - s).abs();
            match shape {
                BumpShape::Box => {
                    if d <= half * (1.0 + 1e-9) {
                        1.0
                    } else {
                        0.0
                    }
                }
                BumpShape::Triangle => (1.0 - d / half).max(0.0),
            }
        })
        .collect();
    // Mass as the dynamics sees it: the integrator samples the input at the
    // left node of each step.
    let mass: f64 = phi[..steps].iter().sum::<f64>() * dt;
    if mass <= 0.0 {
        return Err(ResponseError::OffGridBump);
    }
    Ok((phi, mass))
}

/// Central-difference Monte-Carlo estimate of the first-order response
/// kernel `R^(1)(t, s)` in the input direction `direction`.
///
/// Three runs (+bump, -bump, unperturbed) share each trajectory's noise
/// stream (common random numbers); the antisymmetric difference cancels all
/// even orders, so the estimate is `R^(1) + O(epsilon^2)`, and for linear
/// networks the noise cancels exactly. The same pass returns the
/// second-difference estimate of the order-2 response, which doubles as the
/// nonlinearity diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn impulse_response_mc(
    p: &SrnnParams,
    direction: &[f64],
    t: f64,
    s: f64,
    spec: &ImpulseSpec,
    dt: f64,
    k_samples: usize,
    master_seed: u64,
) -> Result<ImpulseEstimate, ResponseError> {
    if direction.len() != p.input_dim() {
        return Err(ResponseError::DirectionDim {
            got: direction.len(),
            want: p.input_dim(),
        });
    }
    if !(s > 0.0) || s >= t {
        return Err(ResponseError::ImpulseOrdering { s, t });
    }
    if !(spec.epsilon > 0.0) || !(spec.delta > 0.0) {
        return Err(ResponseError::BadImpulse(
            "epsilon and delta must be positive".into(),
        ));
    }
    if spec.delta >= t {
        return Err(ResponseError::BadImpulse(format!(
            "bump width {} does not fit the horizon {t}",
            spec.delta
        )));
    }
    if k_samples < 2 {
        return Err(SrnnError::TooFewSamples(k_samples).into());
    }
    let steps = step_count(t, dt)?;
    let (phi, mass) = bump_profile(spec.shape, spec.delta, s, steps, dt)?;

    let m = p.input_dim();
    let plus_nodes: Vec<Vec<f64>> = phi
        .iter()
        .map(|f| (0..m).map(|c| spec.epsilon * f * direction[c]).collect())
        .collect();
    let zero = vec![0.0; m];

    let rnn = discretize(p, dt);
    let pairs: Vec<(f64, f64)> = (0..k_samples)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64), ResponseError> {
            let mut rng = SeedStream::new(master_seed, k as u64).rng();
            let mut h_plus = p.sample_init(&mut rng);
            let mut h_minus = h_plus.clone();
            let mut h_zero = h_plus.clone();
            let r = p.noise_dim();
            let mut xi = vec![0.0; r];
            let mut minus_node = vec![0.0; m];
            for (j, plus_node) in plus_nodes.iter().take(steps).enumerate() {
                for x in xi.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                for (mn, pn) in minus_node.iter_mut().zip(plus_node) {
                    *mn = -pn;
                }
                h_plus = rnn.step(&h_plus, plus_node, &xi);
                h_minus = rnn.step(&h_minus, &minus_node, &xi);
                h_zero = rnn.step(&h_zero, &zero, &xi);
                for h in [&h_plus, &h_minus, &h_zero] {
                    if h.iter().any(|v| !v.is_finite() || v.abs() > crate::srnn::DIVERGENCE_BOUND)
                    {
                        return Err(SrnnError::Diverged { step: j + 1 }.into());
                    }
                }
            }
            let f = p.readout();
            let fp = f.apply(&h_plus);
            let fm = f.apply(&h_minus);
            let f0 = f.apply(&h_zero);
            Ok((fp - fm, fp + fm - 2.0 * f0))
        })
        .collect::<Result<_, _>>()?;

    let d1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let d2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (m1, se1) = mean_stderr(&d1);
    let (m2, se2) = mean_stderr(&d2);

    let linear_scale = 2.0 * spec.epsilon * mass;
    let quad_scale = 2.0 * (spec.epsilon * mass) * (spec.epsilon * mass);
    let significant = m2.abs() > 3.0 * se2;
    Ok(ImpulseEstimate {
        value: m1 / linear_scale,
        stderr: se1 / linear_scale,
        second_order: m2 / quad_scale,
        second_order_stderr: se2 / quad_scale,
        nonlinearity_warning: significant && m2.abs() > 0.1 * m1.abs(),
    })
}

// ---------------------------------------------------------------------------
// Fluctuation-dissipation correlation
// ---------------------------------------------------------------------------

/// Stationary correlation estimate of the conjugate-observable form of the
/// first-order response for a linear network: `E[f(h_tau) (Σ∞^{-1} h_0)ᵀ C
/// direction]` under the unperturbed stationary dynamics. By the
/// fluctuation–dissipation relation this equals the impulse response at lag
/// `tau`; for the scalar Ornstein–Uhlenbeck case it is the normalized
/// autocorrelation `e^{-γ tau}`.
///
/// Returns `(estimate, stderr)`.
pub fn fdt_correlation_ou(
    p: &SrnnParams,
    direction: &[f64],
    tau: f64,
    dt: f64,
    k_samples: usize,
    master_seed: u64,
) -> Result<(f64, f64), ResponseError> {
    let out = fdt_correlation_ou_multi(p, direction, &[tau], dt, k_samples, master_seed)?;
    Ok(out[0])
}

/// [`fdt_correlation_ou`] at several lags sharing one set of trajectories.
pub fn fdt_correlation_ou_multi(
    p: &SrnnParams,
    direction: &[f64],
    taus: &[f64],
    dt: f64,
    k_samples: usize,
    master_seed: u64,
) -> Result<Vec<(f64, f64)>, ResponseError> {
    if direction.len() != p.input_dim() {
        return Err(ResponseError::DirectionDim {
            got: direction.len(),
            want: p.input_dim(),
        });
    }
    if !p.is_linear() {
        return Err(ResponseError::NotLinear);
    }
    if k_samples < 2 {
        return Err(SrnnError::TooFewSamples(k_samples).into());
    }
    let sigma_inf = p.stationary_covariance()?;
    match p.init() {
        crate::srnn::InitLaw::Gaussian { mean, cov } => {
            let scale = sigma_inf.amax().max(1e-300);
            if mean.iter().any(|m| m.abs() > 1e-9)
                || (cov - &sigma_inf).amax() > 1e-6 * scale
            {
                return Err(ResponseError::NotStationaryInit);
            }
        }
        _ => return Err(ResponseError::NotStationaryInit),
    }
    // Positive-definite noise is what makes the stationary law and its
    // log-gradient well defined.
    let sigma_inf_inv = sigma_inf
        .clone()
        .cholesky()
        .ok_or(ResponseError::NotStationaryInit)?
        .inverse();

    let lag_steps: Vec<usize> = taus
        .iter()
        .map(|&tau| {
            if tau == 0.0 {
                Ok(0)
            } else {
                step_count(tau, dt)
            }
        })
        .collect::<Result<_, SrnnError>>()?;
    let max_steps = *lag_steps.iter().max().unwrap_or(&0);

    let dir = DVector::from_column_slice(direction);
    let a_dir = p.input_matrix() * dir;

    let rnn = discretize(p, dt);
    let zero = vec![0.0; p.input_dim()];
    let per_traj: Vec<Vec<f64>> = (0..k_samples)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>, ResponseError> {
            let mut rng = SeedStream::new(master_seed, k as u64).rng();
            let h0 = p.sample_init(&mut rng);
            // Conjugate observable of the stationary Gaussian:
            // grad(-log rho_inf)(h0) projected on the perturbation direction.
            let v: f64 = {
                let h0v = DVector::from_column_slice(&h0);
                (&sigma_inf_inv * h0v).dot(&a_dir)
            };
            let mut h = h0;
            let r = p.noise_dim();
            let mut xi = vec![0.0; r];
            let mut values = vec![0.0; taus.len()];
            for (li, &ls) in lag_steps.iter().enumerate() {
                if ls == 0 {
                    values[li] = p.readout().apply(&h) * v;
                }
            }
            for j in 1..=max_steps {
                for x in xi.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                h = rnn.step(&h, &zero, &xi);
                if h.iter().any(|x| !x.is_finite() || x.abs() > crate::srnn::DIVERGENCE_BOUND) {
                    return Err(SrnnError::Diverged { step: j }.into());
                }
                for (li, &ls) in lag_steps.iter().enumerate() {
                    if ls == j {
                        values[li] = p.readout().apply(&h) * v;
                    }
                }
            }
            Ok(values)
        })
        .collect::<Result<_, _>>()?;

    Ok((0..taus.len())
        .map(|li| {
            let samples: Vec<f64> = per_traj.iter().map(|v| v[li]).collect();
            mean_stderr(&samples)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Memoryless iterated-integral features
// ---------------------------------------------------------------------------

/// Identifies one memoryless feature: the iterated integral of order `n`
/// with time powers `powers = (p_0, p_1..p_n)` and channels `channels =
/// (k_1..k_n)` (1-based), evaluated as
/// `t^{p_0} ∫_0^t s_1^{p_1} u^{k_1}(s_1) ... ∫_0^{s_{n-1}} s_n^{p_n} u^{k_n}(s_n) ds`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureKey {
    pub order: usize,
    pub powers: Vec<usize>,
    pub channels: Vec<usize>,
}

/// Memoryless feature vector with its deterministic index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub t: f64,
    pub keys: Vec<FeatureKey>,
    pub values: Vec<f64>,
}

impl FeatureSet {
    pub fn get(&self, key: &FeatureKey) -> Option<f64> {
        self.keys
            .iter()
            .position(|k| k == key)
            .map(|i| self.values[i])
    }
}

/// Computes all memoryless features of `u` at horizon `t` for orders
/// `1..=max_order`, powers `0..=max_power` per slot, and all channel
/// assignments, by recursive cumulative trapezoid integration (the inner
/// tables are built once per integrand chain suffix and reused across outer
/// levels).
///
/// Feature ordering is deterministic: ascending order `n`, then the power
/// multi-index `(p_0..p_n)` lexicographically, then the channel multi-index.
pub fn memoryless_features(
    u: &Path,
    max_order: usize,
    max_power: usize,
    t: f64,
) -> Result<FeatureSet, ResponseError> {
    if max_order < 1 {
        return Err(ResponseError::BadFeatureOrder);
    }
    let eps = 1e-9 * t.abs().max(1.0);
    if u.start_time() > eps || u.end_time() < t - eps {
        return Err(ResponseError::SignalDomain(t));
    }

    // Integration grid: the input's samples clipped to [0, t] with both
    // endpoints present.
    let mut grid = vec![0.0];
    for &s in u.times() {
        if s > 0.0 && s < t {
            grid.push(s);
        }
    }
    grid.push(t);
    let m = u.dim();
    let channel_samples: Vec<Vec<f64>> = (0..m)
        .map(|c| grid.iter().map(|&s| u.value_at(s)[c]).collect())
        .collect();
    let power_samples: Vec<Vec<f64>> = (0..=max_power)
        .map(|p| grid.iter().map(|&s| s.powi(p as i32)).collect())
        .collect();

    // Suffix tables: chain [(p_j, k_j), ...] -> cumulative integral values
    // G_j on the grid, built innermost-first.
    let mut tables: std::collections::HashMap<Vec<(usize, usize)>, Vec<f64>> =
        std::collections::HashMap::new();
    fn table<'a>(
        chain: &[(usize, usize)],
        grid: &[f64],
        powers: &[Vec<f64>],
        channels: &[Vec<f64>],
        tables: &'a mut std::collections::HashMap<Vec<(usize, usize)>, Vec<f64>>,
    ) -> &'a Vec<f64> {
        if !tables.contains_key(chain) {
            let (p, k) = chain[0];
            let integrand: Vec<f64> = if chain.len() == 1 {
                grid.iter()
                    .enumerate()
                    .map(|(i, _)| powers[p][i] * channels[k - 1][i])
                    .collect()
            } else {
                let inner = table(&chain[1..], grid, powers, channels, tables).clone();
                grid.iter()
                    .enumerate()
                    .map(|(i, _)| powers[p][i] * channels[k - 1][i] * inner[i])
                    .collect()
            };
            let integral = cumtrapz(grid, &integrand);
            tables.insert(chain.to_vec(), integral);
        }
        tables.get(chain).unwrap()
    }

    let mut keys = Vec::new();
    let mut values = Vec::new();
    for order in 1..=max_order {
        let power_slots = order + 1;
        let mut powers = vec![0usize; power_slots];
        loop {
            let mut channels = vec![1usize; order];
            loop {
                let chain: Vec<(usize, usize)> = (0..order)
                    .map(|j| (powers[j + 1], channels[j]))
                    .collect();
                let g1 = table(
                    &chain,
                    &grid,
                    &power_samples,
                    &channel_samples,
                    &mut tables,
                );
                let value = t.powi(powers[0] as i32) * g1.last().unwrap();
                keys.push(FeatureKey {
                    order,
                    powers: powers.clone(),
                    channels: channels.clone(),
                });
                values.push(value);
                // Advance channel multi-index lexicographically.
                if !advance_radix(&mut channels, 1, m) {
                    break;
                }
            }
            if !advance_radix(&mut powers, 0, max_power + 1) {
                break;
            }
        }
    }
    Ok(FeatureSet { t, keys, values })
}

/// Lexicographic increment of a fixed-length multi-index with digits
/// `lo..lo+radix`; returns false on wrap-around.
fn advance_radix(digits: &mut [usize], lo: usize, radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < lo + radix {
            return true;
        }
        *d = lo;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srnn::InitLaw;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn uniform_grid(points: usize, t_end: f64) -> Vec<f64> {
        (0..points)
            .map(|i| t_end * i as f64 / (points - 1) as f64)
            .collect()
    }

    fn exp_kernel_first_order(points: usize, t_end: f64) -> VolterraKernels {
        VolterraKernels::from_fn(uniform_grid(points, t_end), 1, |_, t, s| (-(t - s[0])).exp())
            .unwrap()
    }

    #[test]
    fn binomial_and_ranks() {
        let b = BinomTable::new(16, 6);
        assert_eq!(b.c(5, 2), 10);
        assert_eq!(b.c(6, 0), 1);
        assert_eq!(b.c(3, 5), 0);
        // Rank order matches colex enumeration.
        let mut expect = 0usize;
        for_each_tuple(3, 4, |tuple| {
            assert_eq!(tuple_rank(&b, tuple), expect);
            expect += 1;
        });
        assert_eq!(expect, simplex_size(&b, 3, 5));
    }

    #[test]
    fn multiplicities() {
        assert_eq!(permutation_multiplicity(&[1, 2, 3]), 6.0);
        assert_eq!(permutation_multiplicity(&[1, 1, 3]), 3.0);
        assert_eq!(permutation_multiplicity(&[2, 2, 2]), 1.0);
        assert_eq!(permutation_multiplicity(&[4]), 1.0);
    }

    #[test]
    fn kernel_storage_round_trip() {
        let k = VolterraKernels::from_fn(uniform_grid(9, 2.0), 2, |order, t, s| {
            t + 10.0 * s[0] + if order == 2 { 100.0 * s[1] } else { 0.0 }
        })
        .unwrap();
        assert_eq!(k.orders(), 2);
        assert_relative_eq!(k.value(1, 4, &[2]), 1.0 + 10.0 * 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            k.value(2, 8, &[3, 5]),
            2.0 + 10.0 * 0.75 + 100.0 * 1.25,
            epsilon = 1e-12
        );
        let dump = k.to_dump();
        let json = serde_json::to_string(&dump).unwrap();
        let back: VolterraKernelsDump = serde_json::from_str(&json).unwrap();
        let k2 = VolterraKernels::from_dump(back).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn eval_zero_signal_is_zero() {
        let k = exp_kernel_first_order(33, 2.0);
        let gamma = Path::zero(1, 0.0, 2.0);
        assert_eq!(volterra_eval(&k, &gamma, 2.0).unwrap(), 0.0);
        assert_eq!(volterra_eval(&k, &gamma, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn eval_first_order_convolution_closed_form() {
        let k = exp_kernel_first_order(201, 2.0);
        let c = 0.4;
        let gamma = Path::scalar(vec![0.0, 2.0], vec![c, c]).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let got = volterra_eval(&k, &gamma, t).unwrap();
            let want = c * (1.0 - (-t).exp());
            assert!((got - want).abs() < 1e-4 * c, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn eval_is_exactly_linear_at_first_order() {
        let k = exp_kernel_first_order(65, 1.0);
        let grid = uniform_grid(65, 1.0);
        let gamma =
            Path::from_fn(&grid, 1, |t| vec![0.1 * (2.0 * std::f64::consts::PI * t).sin()])
                .unwrap();
        let double = gamma.scale_values(2.0);
        let a = volterra_eval(&k, &gamma, 1.0).unwrap();
        let b = volterra_eval(&k, &double, 1.0).unwrap();
        assert_relative_eq!(b, 2.0 * a, epsilon = 1e-15);
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        let k = exp_kernel_first_order(11, 1.0);
        let gamma = Path::zero(1, 0.0, 1.0);
        assert!(matches!(
            volterra_eval(&k, &gamma, 0.123),
            Err(ResponseError::TimeOffGrid(_))
        ));
        let short = Path::zero(1, 0.0, 0.4);
        assert!(matches!(
            volterra_eval(&k, &short, 1.0),
            Err(ResponseError::SignalDomain(_))
        ));
        let wide = Path::zero(2, 0.0, 1.0);
        assert!(matches!(
            volterra_eval(&k, &wide, 1.0),
            Err(ResponseError::ScalarSignalRequired(2))
        ));
    }

    #[test]
    fn compose_produces_sum_of_orders() {
        let grid = uniform_grid(17, 1.0);
        let f = VolterraKernels::from_fn(grid.clone(), 2, |order, t, s| {
            (-(t - s[0])).exp() * if order == 2 { 0.5 } else { 1.0 }
        })
        .unwrap();
        let g = VolterraKernels::from_fn(grid, 2, |_, t, s| (-2.0 * (t - s[0])).exp()).unwrap();
        let fg = compose_kernels(&f, &g).unwrap();
        assert_eq!(fg.orders(), 4);

        let h = VolterraKernels::from_fn(uniform_grid(17, 1.0), 1, |_, _, _| 1.0).unwrap();
        assert_eq!(compose_kernels(&h, &h).unwrap().orders(), 2);
    }

    #[test]
    fn compose_first_order_matches_stationary_closed_form() {
        // Stationary exponential kernels: the composed first-order kernel at
        // lag tau = t - w is the lag-convolution
        // ∫_0^tau e^{-s} e^{-2(tau-s)} ds = e^{-tau} - e^{-2tau}.
        let points = 129;
        let grid = uniform_grid(points, 2.0);
        let f = VolterraKernels::from_fn(grid.clone(), 1, |_, t, s| (-(t - s[0])).exp()).unwrap();
        let g =
            VolterraKernels::from_fn(grid.clone(), 1, |_, t, s| (-2.0 * (t - s[0])).exp()).unwrap();
        let fg = compose_kernels(&f, &g).unwrap();
        let t_idx = points - 1;
        // Interior impulse times; at the very corner w = 0 the
        // nested-consistent quadrature convention deviates at O(grid step).
        for w_idx in [16usize, 32, 64, 100] {
            let tau = grid[t_idx] - grid[w_idx];
            let got = fg.value(1, t_idx, &[w_idx]);
            let want = (-tau).exp() - (-2.0 * tau).exp();
            assert!(
                (got - want).abs() < 2e-4,
                "tau={tau}: composed {got} vs closed form {want}"
            );
        }
    }

    #[test]
    fn composed_evaluation_matches_nested_evaluation() {
        let points = 33;
        let grid = uniform_grid(points, 1.0);
        let f = VolterraKernels::from_fn(grid.clone(), 2, |order, t, s| match order {
            1 => (-(t - s[0])).exp(),
            _ => 0.6 * (-(t - s[0]) - 0.5 * (t - s[1])).exp(),
        })
        .unwrap();
        let g = VolterraKernels::from_fn(grid.clone(), 2, |order, t, s| match order {
            1 => (-2.0 * (t - s[0])).exp(),
            _ => 0.3 * (-(t - s[0]) - (t - s[1])).exp(),
        })
        .unwrap();
        let fg = compose_kernels(&f, &g).unwrap();

        let gamma = Path::from_fn(&grid, 1, |t| {
            vec![0.1 * (2.0 * std::f64::consts::PI * t).cos()]
        })
        .unwrap();
        for t in [0.5, 1.0] {
            let direct = volterra_eval(&fg, &gamma, t).unwrap();
            let nested = nested_eval(&f, &g, &gamma, t).unwrap();
            // The composed quadrature telescopes into the nested one, so the
            // two routes agree to rounding, not just to O(grid^2).
            assert!(
                (direct - nested).abs() <= 1e-12 * nested.abs().max(1e-3),
                "t={t}: composed {direct} vs nested {nested}"
            );
        }
    }

    #[test]
    fn compose_requires_shared_grid() {
        let f = exp_kernel_first_order(11, 1.0);
        let g = exp_kernel_first_order(12, 1.0);
        assert!(matches!(
            compose_kernels(&f, &g),
            Err(ResponseError::GridMismatch)
        ));
    }

    // ---- impulse response ----

    fn stationary_scalar_ou(gamma: f64, sigma: f64) -> SrnnParams {
        SrnnParams::scalar_ou(gamma, 1.0, sigma, InitLaw::Point(vec![0.0]))
            .unwrap()
            .with_stationary_init()
            .unwrap()
    }

    #[test]
    fn impulse_recovers_ou_kernel() {
        // Linear network with common random numbers: the +/- difference is
        // deterministic, so a small K suffices.
        let p = stationary_scalar_ou(1.0, 0.5);
        let dt = 0.01;
        let spec = ImpulseSpec::default_for(dt);
        for tau in [0.25, 1.0] {
            let t = 2.0;
            let est = impulse_response_mc(&p, &[1.0], t, t - tau, &spec, dt, 64, 7).unwrap();
            let want = (-tau).exp();
            assert!(
                (est.value - want).abs() < 3.0 * est.stderr + 0.02,
                "tau={tau}: {} vs {want}",
                est.value
            );
            // No quadratic response in a linear network.
            assert!(est.second_order.abs() <= 3.0 * est.second_order_stderr + 1e-9);
            assert!(!est.nonlinearity_warning);
        }
    }

    #[test]
    fn impulse_limit_toward_equal_times_is_one() {
        let p = stationary_scalar_ou(1.0, 0.5);
        let dt = 0.005;
        let spec = ImpulseSpec::default_for(dt);
        let t = 0.5;
        let est = impulse_response_mc(&p, &[1.0], t, t - 0.05, &spec, dt, 64, 11).unwrap();
        assert!(
            (est.value - 1.0).abs() < 0.06,
            "short-lag response {} should be near 1",
            est.value
        );
    }

    #[test]
    fn impulse_rejects_bad_times() {
        let p = stationary_scalar_ou(1.0, 0.5);
        let spec = ImpulseSpec::default_for(0.01);
        assert!(matches!(
            impulse_response_mc(&p, &[1.0], 1.0, 1.0, &spec, 0.01, 16, 0),
            Err(ResponseError::ImpulseOrdering { .. })
        ));
        assert!(matches!(
            impulse_response_mc(&p, &[1.0], 1.0, 1.5, &spec, 0.01, 16, 0),
            Err(ResponseError::ImpulseOrdering { .. })
        ));
        assert!(matches!(
            impulse_response_mc(&p, &[1.0, 0.0], 1.0, 0.5, &spec, 0.01, 16, 0),
            Err(ResponseError::DirectionDim { got: 2, want: 1 })
        ));
    }

    // ---- fluctuation-dissipation ----

    #[test]
    fn fdt_zero_lag_is_one() {
        let p = stationary_scalar_ou(1.0, 0.5);
        let (est, se) = fdt_correlation_ou(&p, &[1.0], 0.0, 0.01, 4000, 3).unwrap();
        assert!((est - 1.0).abs() < 3.0 * se + 0.01, "{est} +- {se}");
    }

    #[test]
    fn fdt_matches_ou_autocorrelation() {
        let p = stationary_scalar_ou(1.0, 0.5);
        let (est, se) = fdt_correlation_ou(&p, &[1.0], 1.0, 0.01, 20_000, 5).unwrap();
        let want = (-1.0f64).exp();
        assert!((est - want).abs() < 3.0 * se + 0.01, "{est} vs {want}");
    }

    #[test]
    fn fdt_agrees_with_impulse_estimate() {
        let p = stationary_scalar_ou(1.0, 0.5);
        let dt = 0.01;
        let tau = 0.5;
        let (corr, se_c) = fdt_correlation_ou(&p, &[1.0], tau, dt, 20_000, 9).unwrap();
        let imp = impulse_response_mc(
            &p,
            &[1.0],
            2.0,
            2.0 - tau,
            &ImpulseSpec::default_for(dt),
            dt,
            64,
            9,
        )
        .unwrap();
        let tol = 3.0 * (se_c * se_c + imp.stderr * imp.stderr).sqrt() + 0.01;
        assert!(
            (corr - imp.value).abs() < tol,
            "correlation {corr} vs impulse {}",
            imp.value
        );
    }

    #[test]
    fn fdt_rejects_nonlinear_or_nonstationary() {
        let nonlinear = SrnnParams::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, 0.5),
            crate::srnn::Activation::Tanh,
            crate::srnn::Readout::Coordinate(0),
            InitLaw::Point(vec![0.0]),
        )
        .unwrap();
        assert!(matches!(
            fdt_correlation_ou(&nonlinear, &[1.0], 0.5, 0.01, 16, 0),
            Err(ResponseError::NotLinear)
        ));

        let point_init = SrnnParams::scalar_ou(1.0, 1.0, 0.5, InitLaw::Point(vec![0.0])).unwrap();
        assert!(matches!(
            fdt_correlation_ou(&point_init, &[1.0], 0.5, 0.01, 16, 0),
            Err(ResponseError::NotStationaryInit)
        ));
    }

    // ---- memoryless features ----

    #[test]
    fn features_of_zero_signal_vanish() {
        let u = Path::zero(1, 0.0, 1.0);
        let fs = memoryless_features(&u, 2, 1, 1.0).unwrap();
        assert!(!fs.values.is_empty());
        assert!(fs.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn feature_closed_forms() {
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 / 4000.0).collect();
        let ones = Path::from_fn(&grid, 1, |_| vec![1.0]).unwrap();
        let fs = memoryless_features(&ones, 1, 1, 1.0).unwrap();
        // n=1, p0=0, p1=1: ∫_0^1 s ds = 1/2.
        let key = FeatureKey {
            order: 1,
            powers: vec![0, 1],
            channels: vec![1],
        };
        assert_relative_eq!(fs.get(&key).unwrap(), 0.5, epsilon = 1e-8);

        // u(s) = s, n=2, all powers zero: ∫_0^t s1 ∫_0^{s1} s2 ds2 ds1 = t^4/8.
        let linear = Path::from_fn(&grid, 1, |s| vec![s]).unwrap();
        let fs = memoryless_features(&linear, 2, 0, 1.0).unwrap();
        let key = FeatureKey {
            order: 2,
            powers: vec![0, 0, 0],
            channels: vec![1, 1],
        };
        assert_relative_eq!(fs.get(&key).unwrap(), 0.125, epsilon = 1e-8);
    }

    #[test]
    fn first_order_zero_power_feature_is_plain_integral() {
        let grid: Vec<f64> = (0..=500).map(|i| i as f64 / 500.0).collect();
        let u = Path::from_fn(&grid, 2, |s| vec![(3.0 * s).sin(), s * s]).unwrap();
        let fs = memoryless_features(&u, 1, 0, 1.0).unwrap();
        for c in 1..=2usize {
            // Independent trapezoid sum over the same samples.
            let mut want = 0.0;
            for w in grid.windows(2) {
                let a = u.value_at(w[0])[c - 1];
                let b = u.value_at(w[1])[c - 1];
                want += 0.5 * (a + b) * (w[1] - w[0]);
            }
            let key = FeatureKey {
                order: 1,
                powers: vec![0, 0],
                channels: vec![c],
            };
            assert_relative_eq!(fs.get(&key).unwrap(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn feature_ordering_is_deterministic() {
        let u = Path::zero(2, 0.0, 1.0);
        let fs = memoryless_features(&u, 2, 1, 1.0).unwrap();
        // First key: order 1, powers (0,0), channel (1).
        assert_eq!(
            fs.keys[0],
            FeatureKey {
                order: 1,
                powers: vec![0, 0],
                channels: vec![1]
            }
        );
        // Channels vary fastest within a power block.
        assert_eq!(
            fs.keys[1],
            FeatureKey {
                order: 1,
                powers: vec![0, 0],
                channels: vec![2]
            }
        );
        // Count: sum over n of (max_power+1)^(n+1) * m^n.
        let expect = 4 * 2 + 8 * 4;
        assert_eq!(fs.keys.len(), expect);
    }
}
