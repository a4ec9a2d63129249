//! Numerical toolkit connecting stochastic recurrent networks, nonequilibrium
//! response theory, and path-signature kernel machines.
//!
//! The library is organized around one chain of ideas:
//!
//! 1. [`path`] — piecewise-linear multi-channel paths, the universal carrier
//!    for input signals and features, plus polynomial time augmentation.
//! 2. [`signature`] — truncated tensor-algebra signatures (iterated
//!    integrals) with an independent quadrature oracle.
//! 3. [`kernel`] — signature kernels: the factorial-weighted (symmetric Fock)
//!    truncated inner product and the closed-form piecewise-linear product
//!    kernel, plus Gram matrix assembly.
//! 4. [`srnn`] — Euler–Maruyama simulation of stochastic RNNs, Monte-Carlo
//!    output functionals, the analytic Ornstein–Uhlenbeck special case, and
//!    the discrete-RNN correspondence.
//! 5. [`response`] — impulse-response estimation of Volterra kernels,
//!    fluctuation–dissipation cross-checks on the OU case, Volterra series
//!    evaluation and composition, and memoryless iterated-integral features.
//! 6. [`learn`] — ridge-regularized kernel machines over training paths
//!    (the representer-theorem solution) with model persistence.
//! 7. [`cli`] — config-driven experiment runner behind the `responsekit`
//!    binary; [`repro`] — the self-checking verification suite it exposes.
//!
//! Every Monte-Carlo routine draws from counter-based substreams of a single
//! master seed (see [`rng`]), so whole experiments re-run bit-identically.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod kernel;
pub mod learn;
pub mod numeric;
pub mod path;
pub mod repro;
pub mod response;
pub mod rng;
pub mod signature;
pub mod srnn;

pub use kernel::{fock_inner, gram, sig_kernel_pl, KernelKind, KernelSpec};
pub use learn::{fit, KernelModel};
pub use path::{augment_time, BasisKind, Path, PolyBasis};
pub use response::{
    compose_kernels, fdt_correlation_ou, impulse_response_mc, memoryless_features, nested_eval,
    volterra_eval, ImpulseSpec, VolterraKernels,
};
pub use signature::{sig_oracle, signature, tensor_exp, tensor_mul, TruncatedSignature, Word};
pub use srnn::{discretize, euler_maruyama, ou_mean_analytic, output_functional, SrnnParams};
