//! Training randomized Markov policies so that the law of the cumulative
//! reward of a finite-horizon controlled Markov chain matches a target
//! distribution.
//!
//! The objective is the weighted L² distance between the target
//! characteristic function and the characteristic function of the simulated
//! return, discretized on a frequency grid. Gradients are pathwise: every
//! trajectory carries the sensitivity of its return with respect to the
//! policy parameters, propagated through the dynamics and the reward.
//!
//! Module map:
//!
//! * [`numerics`]: complex values, seeded substreams, Bessel functions,
//!   Householder least squares, 1-D Wasserstein distance.
//! * [`charfn`]: frequency grids, empirical and analytic characteristic functions.
//! * [`environment`]: controlled dynamics with first derivatives.
//! * [`policy`]: neural randomized policies with exact reverse-mode gradients.
//! * [`rollout`]: batched simulation with forward sensitivities.
//! * [`loss`]: the discretized loss, its stochastic gradient and closed forms.
//! * [`trainer`]: the outer descent loop and its diagnostics.
//! * [`oracle`]: analytic solutions used to certify learned policies.

pub mod charfn;
pub mod environment;
mod error;
pub mod loss;
pub mod numerics;
pub mod oracle;
pub mod policy;
pub mod rollout;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{ComplexValue, RandomStream};
