//! Coupling and Markov-Dobrushin estimation for diffusions.
//!
//! Modules:
//! - [`sde`]: models, registry and Euler-Maruyama simulation on
//!   counter-based random streams.
//! - [`coupling`]: maximal coupling of discrete laws and intersection
//!   coupling of 1D paths.
//! - [`md`]: Markov-Dobrushin coefficients from kernel histograms.
//! - [`girsanov`]: stochastic exponentials and reweighted kernels.
//! - [`harnack`]: parabolic and elliptic Harnack ratios from exit laws.
//! - [`tv`]: TV distances, curves and the coupling inequality.
//! - [`oracle`]: exact reference values.

pub mod binning;
pub mod coupling;
pub mod error;
pub mod export;
pub mod girsanov;
pub mod harnack;
pub mod md;
pub mod oracle;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod tv;

pub use binning::{Binning, KernelHistogram, Region};
pub use coupling::{
    build_maximal_coupling, draw_coupled_pairs, estimate_meeting_probability, intersection_couple_1d,
    CouplingResult, DiscreteDistribution, MaximalCouplingSampler, MeetingTable,
};
pub use error::{Error, Result};
pub use girsanov::{estimate_md_girsanov, reweighted_kernel, stochastic_exponential, Direction, DriftSplitModel, WeightedSample};
pub use harnack::{
    elliptic_harnack_check, md_via_elliptic, md_via_parabolic_corollary, parabolic_harnack_check,
    sample_parabolic_boundary, BoundaryMeasure, CylinderCells, HarnackReport, StartTime,
};
pub use md::{check_minorization, estimate_kernel_histogram, estimate_md, exact_md_finite_chain, MdQuery, MdReport};
pub use oracle::{FiniteChain, GaussianKernel};
pub use rng::Lane;
pub use sde::{IntegratorConfig, ModelRegistry, ModelSpec, Path, SdeModel};
pub use tv::{check_tv_monotonicity, coupling_bound_check, tv_exact, TvCurve};
