//! Ulam discretization of the transfer operator, the inverse-branch kernel
//! `K`, correlation and Gordin sums, φ-mixing coefficients and stationary
//! sampling.

mod kernel;
mod mixing;
mod sampling;
mod ulam;

pub use kernel::{
    apply_kernel, cell_averages, correlation, correlation_from, gordin_sum, nu_integral, nu_product, GordinReport,
    KernelPowers,
};
pub use mixing::{
    coarsen, conditional_deviation, conditional_pair_deviation, decay_fit, phi_coefficients, phi_finite_chain,
    phi_oracle, state_norm, DecayFit, DecayModel, FiniteChain, MixingOptions, MixingProfile,
};
pub use sampling::{sample_stationary, InverseChain};
pub use ulam::{build_ulam, Csr, UlamOperator, UlamOptions};
