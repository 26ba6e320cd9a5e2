//! Mean-field games driven by a controlled jump-diffusion.
//!
//! The population state follows `dX = α dt + δ dW + dJ`, where `J` is a
//! compound-Poisson process with intensity `λ` and jump law `p(z)`, and every
//! agent maximises `E[∫(−α²/2 + g) dt + K(X_T)]` with quadratic `g` and `K`.
//! The value function is quadratic in the state, so the whole game reduces
//! to a backward Riccati system ([`riccati`]), an explicit expectation path
//! ([`expectation`]) and an explicit characteristic function ([`density`]).
//! [`montecarlo`] and the finite-difference forward solver serve as
//! independent oracles; [`investor`] maps a portfolio-opinion model onto the
//! same machinery.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod density;
pub mod exec;
pub mod expectation;
pub mod investor;
pub mod jump;
pub mod montecarlo;
pub mod quadrature;
pub mod riccati;

pub use jump::JumpDistribution;
pub use riccati::{CoefficientSchedule, MfgProblem, RiccatiSolution, TerminalData};
