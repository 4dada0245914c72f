//! Message-passing coordinate descent for parametric data fitting.
//!
//! The library is organized around an exact piecewise-polynomial algebra
//! ([`pwp`]): per-sample squared errors become piecewise quadratics of a
//! single network parameter ([`nn`]), batches of them merge into the loss
//! restricted to that parameter, and a trainer repeatedly minimizes that
//! restriction globally ([`train`]). Gradient baselines ([`baselines`]) and
//! dataset plumbing ([`data`]) support head-to-head comparisons.

pub mod baselines;
pub mod data;
pub mod nn;
pub mod pwp;
pub mod train;
