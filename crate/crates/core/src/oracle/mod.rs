//! Independent reference computations: dense linear algebra, quadrature-based
//! joint Gaussians and Euler-Maruyama ensembles. Nothing here calls the
//! spectral kernels or the closed-form prior and bridge code.

pub mod dense;
pub mod sim;

pub use dense::{joint_gaussian, DenseGaussian};
pub use sim::{simulate_prior, Ensemble, MomentEstimate, SimConfig};
