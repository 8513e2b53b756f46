//! Simulation and online state estimation for microbial growth in a
//! continuous bioreactor observed through sampled, noisy fluorescence
//! measurements.
//!
//! The toolkit covers the full workflow:
//!
//! * [`model`] — growth dynamics with Monod kinetics and reporter-protein
//!   synthesis, conservation structure, and equilibrium analysis;
//! * [`sim`] — ground-truth trajectories by fixed-step integration and
//!   seeded measurement sampling;
//! * [`hybridkf`] — a hybrid (continuous prediction, discrete updates)
//!   Kalman filter for linear time-varying systems, plus the discrete-time
//!   spectral analysis behind its convergence guarantees;
//! * [`likelihood`] — maximum-likelihood hyperparameter tuning through the
//!   prediction-error decomposition with a derivative-free optimizer, with
//!   the per-filter tuning problems packaged in [`tuning`];
//! * [`ckf`] — the conservation filter: growth-rate pre-estimation from a
//!   conserved variable plus a smoothed output, then linear filtering;
//! * [`bkf`] — the Bayesian filter: state augmentation with a stationary
//!   Ornstein-Uhlenbeck prior on the unknown reaction rate;
//! * [`ekf`] — the extended Kalman filter baseline on the nonlinear model;
//! * [`montecarlo`] — replicated statistical evaluation with standard-error
//!   bands and convergence-time metrics.

pub mod bkf;
pub mod ckf;
pub mod defaults;
pub mod ekf;
pub mod error;
pub mod hybridkf;
pub mod likelihood;
pub mod model;
pub mod montecarlo;
pub mod sim;
pub mod tuning;

pub use error::{Error, Result};
