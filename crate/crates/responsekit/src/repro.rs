//! Self-verification suite: every analytic and brute-force check the
//! library is expected to pass, each with a pinned tolerance and a runtime
//! budget, runnable as one batch (`responsekit repro` or the `acceptance`
//! test target).
//!
//! All randomness inside a criterion derives from the suite's master seed
//! through labeled substreams, so two runs with the same seed produce
//! identical numbers.

use crate::kernel::{fock_inner, gram, sig_kernel_pl, KernelSpec};
use crate::learn;
use crate::path::{Path, PolyBasis};
use crate::response::{
    compose_kernels, fdt_correlation_ou_multi, impulse_response_mc, memoryless_features,
    nested_eval, volterra_eval, FeatureKey, ImpulseEstimate, ImpulseSpec, VolterraKernels,
};
use crate::rng::{derive_master, stream, SeedStream};
use crate::signature::{
    sig_oracle_auto, signature, signature_with, tensor_exp, tensor_mul, SignatureLimits,
    TruncatedSignature, Word,
};
use crate::srnn::{
    discretize, euler_maruyama, output_functional, Activation, InitLaw, Readout, SrnnParams,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::{Duration, Instant};

/// Default master seed of the verification suite.
pub const DEFAULT_SEED: u64 = 20_260_810;

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub runtime: Duration,
    pub budget: Duration,
    pub detail: String,
}

impl CriterionResult {
    /// One-line pass/fail report.
    pub fn line(&self) -> String {
        format!(
            "[{}] {:2}. {:<28} {:7.2?} (budget {:?})  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.runtime,
            self.budget,
            self.detail
        )
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
}

const CRITERIA: [Criterion; 11] = [
    Criterion { id: 1, name: "signature closed forms", budget: Duration::from_secs(1) },
    Criterion { id: 2, name: "Chen identity + oracle", budget: Duration::from_secs(30) },
    Criterion { id: 3, name: "exponential property", budget: Duration::from_secs(5) },
    Criterion { id: 4, name: "Gram positivity", budget: Duration::from_secs(30) },
    Criterion { id: 5, name: "OU linear response", budget: Duration::from_secs(120) },
    Criterion { id: 6, name: "fluctuation-dissipation", budget: Duration::from_secs(120) },
    Criterion { id: 7, name: "Volterra first order", budget: Duration::from_secs(120) },
    Criterion { id: 8, name: "series composition", budget: Duration::from_secs(60) },
    Criterion { id: 9, name: "representer learning", budget: Duration::from_secs(600) },
    Criterion { id: 10, name: "memoryless features", budget: Duration::from_secs(5) },
    Criterion { id: 11, name: "determinism + reduction", budget: Duration::from_secs(10) },
];

/// Runs the whole suite.
pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    run_subset(&(1..=11).collect::<Vec<_>>(), seed)
}

/// Runs the selected criteria (ids 1..=11, unknown ids ignored).
pub fn run_subset(ids: &[usize], seed: u64) -> Vec<CriterionResult> {
    // Criteria 5 and 6 share the same Monte-Carlo runs.
    let ou = if ids.contains(&5) || ids.contains(&6) {
        Some(ou_response_bundle(seed))
    } else {
        None
    };

    let mut out = Vec::new();
    for c in CRITERIA.iter().filter(|c| ids.contains(&c.id)) {
        let start = Instant::now();
        let result = std::panic::catch_unwind(|| match c.id {
            1 => c1_signature_closed_forms(),
            2 => c2_chen_identity(seed),
            3 => c3_exponential_property(seed),
            4 => c4_gram_positivity(seed),
            5 => c5_ou_linear_response(ou.as_ref().unwrap()),
            6 => c6_fluctuation_dissipation(ou.as_ref().unwrap()),
            7 => c7_volterra_first_order(seed),
            8 => c8_composition(seed),
            9 => c9_representer_learning(seed),
            10 => c10_memoryless_features(),
            11 => c11_determinism(seed),
            _ => unreachable!(),
        });
        let runtime = start.elapsed();
        let (mut passed, detail) = match result {
            Ok(Ok(pair)) => pair,
            Ok(Err(msg)) => (false, msg),
            Err(_) => (false, "criterion panicked".to_string()),
        };
        if runtime > c.budget {
            passed = false;
        }
        out.push(CriterionResult {
            id: c.id,
            name: c.name,
            passed,
            runtime,
            budget: c.budget,
            detail,
        });
    }
    out
}

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// -- helpers ----------------------------------------------------------------

fn random_piecewise(rng: &mut impl Rng, dim: usize, segments: usize, t_end: f64) -> Path {
    let times: Vec<f64> = (0..=segments)
        .map(|i| t_end * i as f64 / segments as f64)
        .collect();
    let mut row: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rows = vec![row.clone()];
    for _ in 0..segments {
        // Bounded increments keep level-4 coefficients O(1).
        row = row
            .iter()
            .map(|v| v + rng.random_range(-1.0..1.0) / (dim as f64).sqrt())
            .collect();
        rows.push(row.clone());
    }
    Path::new(times, rows).unwrap()
}

fn stationary_scalar_ou(gamma: f64, sigma: f64) -> SrnnParams {
    SrnnParams::scalar_ou(gamma, 1.0, sigma, InitLaw::Point(vec![0.0]))
        .unwrap()
        .with_stationary_init()
        .unwrap()
}

// -- criterion 1 -------------------------------------------------------------

fn c1_signature_closed_forms() -> Check {
    let p = Path::scalar(vec![0.0, 0.4, 1.0], vec![0.0, 0.8, 2.0]).map_err(err)?;
    let s = signature(&p, 3).map_err(err)?;
    let want = [1.0, 2.0, 2.0, 4.0 / 3.0];
    let mut worst = 0.0f64;
    for (n, w) in want.iter().enumerate() {
        worst = worst.max((s.level_tensor(n)[0] - w).abs());
    }
    if worst > 1e-12 {
        return Ok((false, format!("scalar levels off by {worst:.2e}")));
    }

    let c = Path::scalar(vec![0.0, 0.5, 1.0], vec![0.7, 0.7, 0.7]).map_err(err)?;
    let sc = signature(&c, 4).map_err(err)?;
    if sc != TruncatedSignature::unit(1, 4) {
        return Ok((false, "constant path signature is not the exact unit".into()));
    }
    Ok((true, format!("scalar levels (1,2,2,4/3) off by {worst:.1e}; constant path exact")))
}

// -- criterion 2 -------------------------------------------------------------

fn c2_chen_identity(seed: u64) -> Check {
    let mut rng = stream(derive_master(seed, "c2"), 0);
    let level = 4;
    let mut worst_chen = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut paths = Vec::new();
    for _ in 0..10 {
        let segs = rng.random_range(1..=5);
        paths.push(random_piecewise(&mut rng, 2, segs, segs as f64));
    }

    for pair in paths.chunks(2) {
        let (x, y) = (&pair[0], &pair[1]);
        let joined = signature(&x.concat(y).map_err(err)?, level).map_err(err)?;
        let product = tensor_mul(
            &signature(x, level).map_err(err)?,
            &signature(y, level).map_err(err)?,
            level,
        )
        .map_err(err)?;
        for n in 0..=level {
            for (a, b) in joined
                .level_tensor(n)
                .iter()
                .zip(product.level_tensor(n))
            {
                worst_chen = worst_chen.max((a - b).abs());
            }
        }
    }
    if worst_chen > 1e-10 {
        return Ok((false, format!("Chen identity violated by {worst_chen:.2e}")));
    }

    // Every coefficient of every path against the quadrature oracle.
    for p in &paths {
        let s = signature(p, level).map_err(err)?;
        let mut words = vec![Word::empty()];
        for n in 1..=level {
            let mut new_words = Vec::new();
            for w in &words {
                if w.len() == n - 1 {
                    for letter in 1..=2usize {
                        let mut l = w.0.clone();
                        l.push(letter);
                        new_words.push(Word(l));
                    }
                }
            }
            words.extend(new_words);
        }
        for w in words.iter().filter(|w| !w.is_empty()) {
            let est = sig_oracle_auto(p, w, 1e-7, 1 << 21);
            if !est.converged {
                return Ok((false, format!("oracle failed to stabilize for {:?}", w.0)));
            }
            let exact = s.coeff(w).map_err(err)?;
            let rel = (est.value - exact).abs() / exact.abs().max(1.0);
            worst_oracle = worst_oracle.max(rel);
        }
    }
    if worst_oracle > 1e-6 {
        return Ok((false, format!("oracle disagreement {worst_oracle:.2e} relative")));
    }
    Ok((
        true,
        format!("Chen off by {worst_chen:.1e}; oracle off by {worst_oracle:.1e} relative"),
    ))
}

// -- criterion 3 -------------------------------------------------------------

fn c3_exponential_property(seed: u64) -> Check {
    let mut rng = stream(derive_master(seed, "c3"), 0);
    let limits = SignatureLimits {
        max_level: 20,
        max_entries: 1 << 26,
    };
    let mut worst_fock = 0.0f64;
    let mut worst_pl = 0.0f64;
    let spec = KernelSpec::piecewise_exp(PolyBasis::monomial(1, 1.0).map_err(err)?, 1, 1.0);
    for _ in 0..20 {
        let h1 = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)];
        let h2 = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)];
        let dot = h1[0] * h2[0] + h1[1] * h2[1];
        let fock = fock_inner(&tensor_exp(&h1, 20), &tensor_exp(&h2, 20)).map_err(err)?;
        worst_fock = worst_fock.max((fock - dot.exp()).abs());

        // Single-segment paths with those increments drive the closed form.
        let x = Path::new(vec![0.0, 1.0], vec![vec![0.0, 0.0], h1.to_vec()]).map_err(err)?;
        let y = Path::new(vec![0.0, 1.0], vec![vec![0.0, 0.0], h2.to_vec()]).map_err(err)?;
        let xc = spec.conform(&x).map_err(err)?;
        let yc = spec.conform(&y).map_err(err)?;
        let pl = sig_kernel_pl(&xc, &yc, &spec).map_err(err)?;
        worst_pl = worst_pl.max((pl - dot.exp()).abs());
        let _ = signature_with(&xc, 2, &limits).map_err(err)?;
    }
    let passed = worst_fock <= 1e-10 && worst_pl <= 1e-8;
    Ok((
        passed,
        format!("Fock vs exp off by {worst_fock:.1e}; piecewise kernel off by {worst_pl:.1e}"),
    ))
}

// -- criterion 4 -------------------------------------------------------------

fn c4_gram_positivity(seed: u64) -> Check {
    let mut rng = stream(derive_master(seed, "c4"), 0);
    let spec = KernelSpec::piecewise_exp(PolyBasis::monomial(2, 1.0).map_err(err)?, 8, 1.0);
    let paths: Vec<Path> = (0..100)
        .map(|_| random_piecewise(&mut rng, 2, 10, 1.0))
        .collect();
    let g = gram(&paths, &spec).map_err(err)?;
    let eigs = nalgebra::SymmetricEigen::new(g).eigenvalues;
    let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
    let passed = min >= -1e-8 * max;
    Ok((
        passed,
        format!("min eig {min:.3e}, max eig {max:.3e} over 100 paths"),
    ))
}

// -- criteria 5 and 6 (shared Monte-Carlo runs) ------------------------------

struct OuBundle {
    lags: Vec<f64>,
    impulses: Vec<Result<ImpulseEstimate, String>>,
    correlations: Result<Vec<(f64, f64)>, String>,
}

fn ou_response_bundle(seed: u64) -> OuBundle {
    let p = stationary_scalar_ou(1.0, 0.5);
    let dt = 0.005;
    let k = 200_000;
    let t = 2.5;
    let lags = vec![0.25, 0.5, 1.0, 2.0];
    let spec = ImpulseSpec::default_for(dt);
    let impulses = lags
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            impulse_response_mc(
                &p,
                &[1.0],
                t,
                t - tau,
                &spec,
                dt,
                k,
                derive_master(seed, &format!("c5-lag{i}")),
            )
            .map_err(err)
        })
        .collect();
    let correlations = fdt_correlation_ou_multi(
        &p,
        &[1.0],
        &lags,
        dt,
        k,
        derive_master(seed, "c6"),
    )
    .map_err(err);
    OuBundle {
        lags,
        impulses,
        correlations,
    }
}

fn c5_ou_linear_response(bundle: &OuBundle) -> Check {
    let mut detail = String::new();
    let mut passed = true;
    for (tau, est) in bundle.lags.iter().zip(&bundle.impulses) {
        let est = est.as_ref().map_err(|e| e.clone())?;
        let want = (-tau).exp();
        let tol = (3.0 * est.stderr).max(0.02);
        if (est.value - want).abs() > tol {
            passed = false;
        }
        detail.push_str(&format!(
            "tau={tau}: {:.4} vs e^-tau={want:.4}; ",
            est.value
        ));
    }
    Ok((passed, detail))
}

fn c6_fluctuation_dissipation(bundle: &OuBundle) -> Check {
    let corr = bundle.correlations.as_ref().map_err(|e| e.clone())?;
    let mut detail = String::new();
    let mut passed = true;
    for ((tau, est), (c, se_c)) in bundle.lags.iter().zip(&bundle.impulses).zip(corr) {
        let est = est.as_ref().map_err(|e| e.clone())?;
        let tol = 3.0 * (est.stderr * est.stderr + se_c * se_c).sqrt() + 0.01;
        if (c - est.value).abs() > tol {
            passed = false;
        }
        detail.push_str(&format!("tau={tau}: corr {c:.4} vs impulse {:.4}; ", est.value));
    }
    Ok((passed, detail))
}

// -- criterion 7 -------------------------------------------------------------

fn c7_volterra_first_order(seed: u64) -> Check {
    let p = stationary_scalar_ou(1.0, 0.5);
    let dt = 0.005;
    let k = 100_000;

    // Analytic first-order kernel of the scalar OU network.
    let points = 201;
    let grid: Vec<f64> = (0..points).map(|i| 2.0 * i as f64 / (points - 1) as f64).collect();
    let kernels =
        VolterraKernels::from_fn(grid.clone(), 1, |_, t, s| (-(t - s[0])).exp()).map_err(err)?;

    let gamma = Path::from_fn(&grid, 1, |s| {
        vec![0.1 * (2.0 * std::f64::consts::PI * s).sin()]
    })
    .map_err(err)?;
    let zero = Path::zero(1, 0.0, 2.0);

    let mut detail = String::new();
    let mut passed = true;
    for (i, t) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let master = derive_master(seed, &format!("c7-t{i}"));
        let (driven, se_d) = output_functional(&p, &gamma, t, dt, k, master).map_err(err)?;
        let (base, se_b) = output_functional(&p, &zero, t, dt, k, master).map_err(err)?;
        let mc = driven - base;
        let predicted = volterra_eval(&kernels, &gamma, t).map_err(err)?;
        let tol = 3.0 * (se_d * se_d + se_b * se_b).sqrt() + 1e-3;
        if (predicted - mc).abs() > tol {
            passed = false;
        }
        detail.push_str(&format!("t={t}: series {predicted:.5} vs MC {mc:.5}; "));
    }

    // Second-order estimate on the linear network is statistically zero.
    let est = impulse_response_mc(
        &p,
        &[1.0],
        1.0,
        0.5,
        &ImpulseSpec::default_for(dt),
        dt,
        20_000,
        derive_master(seed, "c7-r2"),
    )
    .map_err(err)?;
    if est.second_order.abs() > 3.0 * est.second_order_stderr {
        passed = false;
    }
    detail.push_str(&format!(
        "R2 {:.2e} (3se {:.2e})",
        est.second_order,
        3.0 * est.second_order_stderr
    ));
    Ok((passed, detail))
}

// -- criterion 8 -------------------------------------------------------------

fn c8_composition(_seed: u64) -> Check {
    let points = 64;
    let grid: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let f = VolterraKernels::from_fn(grid.clone(), 2, |order, t, s| match order {
        1 => (-(t - s[0])).exp(),
        _ => 0.6 * (-(t - s[0]) - 0.5 * (t - s[1])).exp(),
    })
    .map_err(err)?;
    let g = VolterraKernels::from_fn(grid.clone(), 2, |order, t, s| match order {
        1 => (-2.0 * (t - s[0])).exp(),
        _ => 0.3 * (-(t - s[0]) - (t - s[1])).exp(),
    })
    .map_err(err)?;
    let fg = compose_kernels(&f, &g).map_err(err)?;
    if fg.orders() != 4 {
        return Ok((false, format!("expected 4 composed kernels, got {}", fg.orders())));
    }
    let gamma = Path::from_fn(&grid, 1, |t| vec![0.1 * (std::f64::consts::PI * t).sin()])
        .map_err(err)?;
    let mut worst = 0.0f64;
    for t in [grid[points / 2], grid[points - 1]] {
        let direct = volterra_eval(&fg, &gamma, t).map_err(err)?;
        let nested = nested_eval(&f, &g, &gamma, t).map_err(err)?;
        worst = worst.max((direct - nested).abs() / nested.abs());
    }
    Ok((
        worst <= 1e-3,
        format!("4 composed orders; composed vs nested relative error {worst:.2e}"),
    ))
}

// -- criterion 9 -------------------------------------------------------------

fn c9_representer_learning(seed: u64) -> Check {
    let n = 8usize;
    let m = 2usize;
    let mut rng = stream(derive_master(seed, "c9-teacher"), 0);
    let mut randn = |scale: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        scale * z
    };
    let w = DMatrix::from_fn(n, n, |_, _| randn(0.8 / (n as f64).sqrt()));
    let b = DVector::from_fn(n, |_, _| randn(0.1));
    let c_in = DMatrix::from_fn(n, m, |_, _| randn(0.7));
    let readout = Readout::TanhLinear((0..n).map(|_| randn(1.0 / (n as f64).sqrt())).collect());
    let teacher = SrnnParams::new(
        DMatrix::identity(n, n),
        w,
        b,
        c_in,
        DMatrix::identity(n, n) * 0.1,
        Activation::Tanh,
        readout,
        InitLaw::Point(vec![0.0; n]),
    )
    .map_err(err)?;

    let t_end = 1.0;
    let dt = 0.01;
    let k = 10_000;
    let n_train_max = 200;
    let n_test = 50;

    let mut path_rng = stream(derive_master(seed, "c9-paths"), 0);
    let all_paths: Vec<Path> = (0..n_train_max + n_test)
        .map(|_| random_piecewise(&mut path_rng, m, 10, t_end))
        .collect();
    let targets: Vec<f64> = all_paths
        .iter()
        .enumerate()
        .map(|(i, u)| {
            output_functional(
                &teacher,
                u,
                t_end,
                dt,
                k,
                derive_master(seed, &format!("c9-target-{i}")),
            )
            .map(|(est, _)| est)
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;

    let (train_paths, test_paths) = all_paths.split_at(n_train_max);
    let (train_y, test_y) = targets.split_at(n_train_max);

    let spec = KernelSpec::piecewise_exp(PolyBasis::monomial(3, t_end).map_err(err)?, 10, t_end);
    let mut rmses = Vec::new();
    for &n_train in &[25usize, 50, 100, 200] {
        let model =
            learn::fit(&train_paths[..n_train], &train_y[..n_train], &spec, 1e-6).map_err(err)?;
        let mut sq = 0.0;
        for (u, y) in test_paths.iter().zip(test_y) {
            let p = model.predict(u).map_err(err)?;
            sq += (p - y) * (p - y);
        }
        rmses.push((sq / n_test as f64).sqrt());
    }

    // Interpolation regime: residuals at a vanishing ridge.
    let interp = learn::fit(train_paths, train_y, &spec, 1e-10).map_err(err)?;
    let resid = interp.training_residuals(train_y).map_err(err)?;
    let resid_rms =
        (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
    let mean_y = train_y.iter().sum::<f64>() / train_y.len() as f64;
    let scale =
        (train_y.iter().map(|y| (y - mean_y) * (y - mean_y)).sum::<f64>() / train_y.len() as f64)
            .sqrt();
    let rel_resid = resid_rms / scale.max(1e-300);

    let curve_ok = rmses[3] < rmses[0];
    let resid_ok = rel_resid <= 1e-6;
    Ok((
        curve_ok && resid_ok,
        format!(
            "test RMSE {:.4} -> {:.4} -> {:.4} -> {:.4} over N=25..200; \
             train residual {rel_resid:.2e} of target scale",
            rmses[0], rmses[1], rmses[2], rmses[3]
        ),
    ))
}

// -- criterion 10 ------------------------------------------------------------

fn c10_memoryless_features() -> Check {
    let grid: Vec<f64> = (0..=20_000).map(|i| i as f64 / 20_000.0).collect();
    let t = 1.0;
    let mut worst = 0.0f64;
    for q in 0..=2usize {
        let u = Path::from_fn(&grid, 1, |s| vec![s.powi(q as i32)]).unwrap();
        let fs = memoryless_features(&u, 3, 2, t).map_err(err)?;
        for (key, value) in fs.keys.iter().zip(&fs.values) {
            let want = exact_monomial_feature(key, q, t);
            worst = worst.max((value - want).abs());
        }
    }
    Ok((
        worst <= 1e-8,
        format!("nested integrals off closed forms by {worst:.2e}"),
    ))
}

/// Closed form of a memoryless feature for the monomial input `u(s) = s^q`:
/// repeated application of the power rule.
fn exact_monomial_feature(key: &FeatureKey, q: usize, t: f64) -> f64 {
    let mut coef = 1.0f64;
    let mut exponent = 0usize;
    for j in (1..=key.order).rev() {
        let e = key.powers[j] + q + exponent;
        coef /= (e + 1) as f64;
        exponent = e + 1;
    }
    t.powi((key.powers[0] + exponent) as i32) * coef
}

// -- criterion 11 ------------------------------------------------------------

fn c11_determinism(seed: u64) -> Check {
    // (a) Bit-identical reruns of a full stochastic experiment.
    let p = stationary_scalar_ou(1.0, 0.5);
    let master = derive_master(seed, "c11");
    let run = || -> Result<(f64, f64, Vec<u64>), String> {
        let (est, se) = output_functional(&p, &Path::zero(1, 0.0, 1.0), 1.0, 0.01, 5000, master)
            .map_err(err)?;
        let traj = euler_maruyama(
            &p,
            &Path::zero(1, 0.0, 1.0),
            1.0,
            0.01,
            SeedStream::new(master, 3),
        )
        .map_err(err)?;
        let bits = (0..traj.len()).map(|j| traj.state(j)[0].to_bits()).collect();
        Ok((est, se, bits))
    };
    let (e1, s1, b1) = run()?;
    let (e2, s2, b2) = run()?;
    if e1.to_bits() != e2.to_bits() || s1.to_bits() != s2.to_bits() || b1 != b2 {
        return Ok((false, "reruns under a fixed master seed differ".into()));
    }

    // (b) The one-step reduction at gamma = dt = 1 embeds the standard
    // noisy recurrent update: hidden block x, carried-input block z.
    let nx = 3usize;
    let nz = 2usize;
    let ntot = nx + nz;
    let mut rng = stream(derive_master(seed, "c11-rnn"), 0);
    let wp = DMatrix::from_fn(nx, nx, |_, _| rng.random_range(-0.5..0.5));
    let up = DMatrix::from_fn(nx, nz, |_, _| rng.random_range(-0.5..0.5));
    let bp = DVector::from_fn(nx, |_, _| rng.random_range(-0.2..0.2));
    let sigma = 0.1;

    let mut w_embed = DMatrix::zeros(ntot, ntot);
    w_embed.view_mut((0, 0), (nx, nx)).copy_from(&wp);
    w_embed.view_mut((0, nx), (nx, nz)).copy_from(&up);
    let mut b_embed = DVector::zeros(ntot);
    b_embed.rows_mut(0, nx).copy_from(&bp);
    let mut c_embed = DMatrix::zeros(ntot, nz);
    c_embed
        .view_mut((nx, 0), (nz, nz))
        .copy_from(&DMatrix::identity(nz, nz));
    let mut sigma_embed = DMatrix::zeros(ntot, nx);
    sigma_embed
        .view_mut((0, 0), (nx, nx))
        .copy_from(&(DMatrix::identity(nx, nx) * sigma));

    let embedded = SrnnParams::new(
        DMatrix::identity(ntot, ntot),
        w_embed.clone(),
        b_embed.clone(),
        c_embed,
        sigma_embed,
        Activation::Tanh,
        Readout::Coordinate(0),
        InitLaw::Point(vec![0.0; ntot]),
    )
    .map_err(err)?;

    let rnn = discretize(&embedded, 1.0);
    if rnn.alpha_scalar != Some(0.0) || rnn.beta != 1.0 {
        return Ok((false, "reduction constants differ from (0, 1, sigma)".into()));
    }

    let steps = 6usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64).collect();
    let mut urng = stream(derive_master(seed, "c11-u"), 1);
    let u = Path::from_fn(&grid, nz, |_| {
        vec![urng.random_range(-1.0..1.0), urng.random_range(-1.0..1.0)]
    })
    .map_err(err)?;

    let stream_seed = SeedStream::new(master, 42);
    let traj = euler_maruyama(&embedded, &u, steps as f64, 1.0, stream_seed).map_err(err)?;

    // Independent realization of the textbook update
    // x_{t+1} = tanh(W' x_t + U' z_t + b') + sigma xi_t, z_{t+1} = u_t,
    // drawing from the same stream.
    let mut rng = stream_seed.rng();
    let mut x = vec![0.0f64; nx];
    let mut z = vec![0.0f64; nz];
    let mut xi = vec![0.0f64; nx];
    for step in 0..steps {
        for v in xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut x_next = vec![0.0f64; nx];
        for (i, xn) in x_next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xv) in x.iter().enumerate() {
                acc += wp[(i, j)] * xv;
            }
            for (j, zv) in z.iter().enumerate() {
                acc += up[(i, j)] * zv;
            }
            acc += bp[i];
            let activated = acc.tanh();
            // Mirror of the affine one-step map with alpha = 0, beta = 1.
            *xn = 0.0 + 1.0 * (activated + 0.0) + sigma * xi[i];
        }
        let u_now = u.value_at(step as f64);
        x = x_next;
        z = u_now;

        let state = traj.state(step + 1);
        for (i, xv) in x.iter().enumerate() {
            if xv.to_bits() != state[i].to_bits() {
                return Ok((
                    false,
                    format!("x block differs at step {} coord {i}", step + 1),
                ));
            }
        }
        for (i, zv) in z.iter().enumerate() {
            if zv.to_bits() != state[nx + i].to_bits() {
                return Ok((
                    false,
                    format!("z block differs at step {} coord {i}", step + 1),
                ));
            }
        }
    }
    Ok((
        true,
        "bit-identical reruns; gamma=dt=1 reduction matches the noisy RNN update bit for bit"
            .into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    // The full suite runs in the dedicated acceptance test target; here we
    // only pin the cheap pieces and the plumbing.

    #[test]
    fn criterion_1_passes() {
        let r = run_subset(&[1], DEFAULT_SEED);
        assert!(r[0].passed, "{}", r[0].detail);
    }

    #[test]
    fn criterion_10_passes() {
        let r = run_subset(&[10], DEFAULT_SEED);
        assert!(r[0].passed, "{}", r[0].detail);
    }

    #[test]
    fn exact_monomial_feature_matches_hand_computation() {
        // order 2, powers (0,0,0), q=1: t^4 / 8.
        let key = FeatureKey {
            order: 2,
            powers: vec![0, 0, 0],
            channels: vec![1, 1],
        };
        assert!((exact_monomial_feature(&key, 1, 1.0) - 0.125).abs() < 1e-15);
        // order 1, p0=0, p1=1, q=0: t^2 / 2.
        let key = FeatureKey {
            order: 1,
            powers: vec![0, 1],
            channels: vec![1],
        };
        assert!((exact_monomial_feature(&key, 0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn subset_selection_reports_requested_ids() {
        let r = run_subset(&[1, 10], DEFAULT_SEED);
        let ids: Vec<usize> = r.iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![1, 10]);
    }
}
