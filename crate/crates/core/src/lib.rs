//! Exact event-driven simulation of age-dependent Hawkes networks, numerical
//! solution of their mean-field limit, stationary regimes, and the
//! coupling / propagation-of-chaos experiment harness.

pub mod cascade;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod meanfield;
pub mod prm;
pub mod quad;
pub mod rates;
pub mod sim;
pub mod stationary;
