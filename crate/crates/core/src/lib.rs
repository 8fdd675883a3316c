//! Computational toolkit for finite marked metric measure spaces.
//!
//! A *marked metric measure space* is a triple `(X, d, mu)` where `(X, d)` is a
//! complete separable metric space and `mu` is a finite measure on `X x R^m`;
//! the extra coordinate attaches a Euclidean *mark* to every unit of mass. This
//! crate works with the finite case: `n` atoms, an `n x n` distance matrix, an
//! `n x m` mark matrix, and nonnegative weights. The empty space `0` (the null
//! measure) is a first-class value.
//!
//! The toolkit covers, roughly bottom to top:
//!
//! * [`space`]: the [`FiniteMmmSpace`] type with validation, canonical form,
//!   normalization, restriction, and an ultrametricity test.
//! * [`monomial`]: polynomials of spaces. A monomial of order `k` integrates a
//!   bounded continuous test function of the `k x k` distance matrix and the
//!   `k` marks against the `k`-fold product of `mu`, optionally multiplied by
//!   a power of the total mass. Exact and Monte Carlo evaluators.
//! * [`prohorov`]: the exact Prohorov distance between two finite measures on
//!   a common finite metric space, by scanning the critical thresholds with a
//!   coupling-feasibility max-flow check, plus a subset brute force usable as
//!   a cross-check on small supports.
//! * [`gromov`]: Gromov-Prohorov upper bounds via glueing search, certified
//!   lower bounds, and the mass-reciprocal-plus-capped-distance metric used
//!   for spaces of arbitrary positive mass.
//! * [`law`]: empirical laws (weighted finite families of spaces scaled by a
//!   constant), their restriction to mass levels, the Prohorov distance
//!   between laws, and the vague distance obtained by integrating restricted
//!   Prohorov distances against `exp(-u) du`.
//! * [`gw`]: critical Galton-Watson genealogies with branching random walk
//!   marks, their scaled genealogical spaces, exact generating-function
//!   oracles, and cutoff (approximation) operators.
//! * [`moments`]: moment estimation for empirical laws, sampled moment
//!   measures, Carleman-condition reporting, and a method-of-moments
//!   diagnostic table.
//! * [`diag`]: convergence diagnostics built on restriction: restriction
//!   convergence, survival-probability extraction, pushforward tails, and the
//!   coupled approximation harness.
//!
//! Everything numeric is generic over [`Scalar`] (implemented for `f32` and
//! `f64`); the `*64` aliases at the crate root fix the default `f64`
//! instantiation. All randomized routines take explicit seeds and derive
//! per-replicate streams, so results are independent of thread count.

pub mod diag;
pub mod error;
pub mod gromov;
pub mod gw;
pub mod io;
pub mod law;
pub mod moments;
pub mod monomial;
pub mod prohorov;
pub mod report;
pub mod scalar;
pub mod space;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use space::{FiniteMmmSpace, MarkSpaceSpec};

/// Default `f64` space.
pub type FiniteMmmSpace64 = space::FiniteMmmSpace<f64>;
/// Default `f64` test function.
pub type TestFunction64 = monomial::TestFunction<f64>;
/// Default `f64` monomial.
pub type Monomial64 = monomial::Monomial<f64>;
/// Default `f64` glueing.
pub type Glueing64 = gromov::Glueing<f64>;
/// Default `f64` empirical law.
pub type EmpiricalLaw64 = law::EmpiricalLaw<f64>;
/// Default `f64` moment measure sample.
pub type EmpiricalMomentMeasure64 = moments::EmpiricalMomentMeasure<f64>;
