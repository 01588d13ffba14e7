//! Numerical laboratory for flows of non-smooth vector fields under the
//! standard Gaussian measure.
//!
//! The crate is organised bottom-up:
//!
//! * [`gaussian`]: the reference measure, Gauss–Hermite and Monte Carlo
//!   expectation schemes.
//! * [`orlicz`]: Zygmund, exponential and `Φ_α` Young-type functions,
//!   modulars and Luxembourg norms.
//! * [`field`]: time-dependent vector fields, Gaussian divergence, growth and
//!   divergence norms, Ornstein–Uhlenbeck smoothing.
//! * [`flow`]: forward/backward flow maps with an augmented divergence
//!   accumulator.
//! * [`density`]: pushforward densities, integrability and level-set checks.
//! * [`transport`]: transport equation by characteristics and the log-log
//!   stability estimates.
//! * [`lab`]: experiment configuration, studies and result emission used by
//!   the `flowlab` binary.

pub mod density;
pub mod error;
pub mod field;
pub mod flow;
pub mod gaussian;
pub mod lab;
pub mod orlicz;
pub mod par;
pub mod quadrature;
pub mod transport;

pub use error::{LabError, Result};
