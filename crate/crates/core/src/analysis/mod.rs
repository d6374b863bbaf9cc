//! Verification instruments: kernel snapshots and their certificates, loss
//! decay fits, trajectory complexity with the generalization bound, neuron
//! mass diagnostics and Wasserstein-1 distances.

pub mod certificates;
pub mod complexity;
pub mod rate;
pub mod snapshot;
pub mod wasserstein;
pub mod xi;

pub use certificates::{check_oppenheim, check_pl, OppenheimCheck, PlReport};
pub use complexity::{gen_bound_rhs, omega_update, BoundConstants, ComplexityTrack};
pub use rate::{fit_rate, log_log_slope, RateReport};
pub use snapshot::{kernel_snapshot, snapshot_finite, snapshot_mf, KernelSnapshot};
pub use wasserstein::{wasserstein1, wasserstein1_uniform, WeightedCloud};
pub use xi::{xi_mass, XiMassReport};
