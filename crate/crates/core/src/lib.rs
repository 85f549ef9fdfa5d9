//! Regularized energy-cascade dynamics on a fractal space-time lattice.
//!
//! Scale `n` has length and turnover time `2^-n`, and carries a non-negative
//! energy `u_n` that changes only at multiples of its turnover time. At each
//! turnover a fraction `f(u_n, u_{n+1})` of the energy moves one scale down.
//! The ideal system is regularized at a viscous scale `N`, where a constant
//! (or random) fraction is dissipated and everything below `N` is removed.
//!
//! The crate is `no_std` (with `alloc`) and is organized as:
//!
//! * [`lattice`]: the tick-level integrator, flow map evaluation and energy
//!   accounting.
//! * [`algebra`]: shift maps, the transfer map, the RG operator acting on
//!   flow maps, and the composition giving states at dyadic times.
//! * [`spectral`]: Cauchy differences, eigenvalue and eigenvector estimates,
//!   perturbation growth and bifurcation scans for the deterministic case.
//! * [`stochastic`]: Monte Carlo flow kernels under viscous-scale noise,
//!   histogram densities, KS distances, the stochastic RG composition and
//!   period-two detection.
//! * [`cascade`]: forced steady states, structure functions and flux balance.
//! * [`stats`], [`rng`]: numeric helpers and counter-keyed random streams.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod algebra;
pub mod cascade;
pub mod error;
pub mod lattice;
mod math;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod stochastic;

pub use error::{Error, Result};
pub use lattice::{
    Dissipation, EnergyLedger, LatticeState, RegularizationSpec, SimConfig, TransferFamily,
    TransferSpec,
};

/// The default initial condition `a_n = 1 - n/5` for `n <= 4`, zero beyond.
pub fn staircase_initial(len: usize) -> alloc::vec::Vec<f64> {
    (0..len)
        .map(|n| if n <= 4 { 1.0 - n as f64 / 5.0 } else { 0.0 })
        .collect()
}
