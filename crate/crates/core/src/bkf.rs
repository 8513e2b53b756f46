//! Bayesian Kalman filter: state estimation without knowledge of the growth
//! law. The scalar reaction rate r(t) = mu(s) e is treated as an unknown
//! input with a stationary Ornstein-Uhlenbeck prior and appended to the
//! state. The augmented four-dimensional system is exactly linear and time
//! invariant, so the hybrid filter estimates (s, e, f, r) jointly with no
//! linearization error anywhere.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::hybridkf::{run_filter, FilterOutput, GaussianBelief, LtvSystem};
use crate::model::{ModelParams, StateVec};
use crate::sim::MeasurementSeries;

/// Ornstein-Uhlenbeck prior on the reaction rate: dr = -theta r dt + kappa dW.
/// theta sets the timescale of admissible fluctuations, kappa / sqrt(2 theta)
/// their admissible magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuPrior {
    /// Mean-reversion rate (1/h).
    pub theta: f64,
    /// Noise intensity.
    pub kappa: f64,
}

impl OuPrior {
    pub fn new(theta: f64, kappa: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {theta}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be > 0, got {kappa}")));
        }
        Ok(Self { theta, kappa })
    }

    /// Variance of the stationary distribution, kappa^2 / (2 theta).
    pub fn stationary_variance(&self) -> f64 {
        self.kappa * self.kappa / (2.0 * self.theta)
    }
}

/// Builds the augmented linear time-invariant system on (s, e, f, r): the
/// growth state decays at the dilution rate and is driven by r through the
/// stoichiometric direction, while r follows its Ornstein-Uhlenbeck prior.
pub fn build_augmented_system(
    params: &ModelParams,
    prior: &OuPrior,
    meas_variance: f64,
) -> Result<LtvSystem> {
    let n = params.stoichiometry();
    let mut a = DMatrix::<f64>::zeros(4, 4);
    for i in 0..3 {
        a[(i, i)] = -params.d;
        a[(i, 3)] = n[i];
    }
    a[(3, 3)] = -prior.theta;
    let b = DVector::from_vec(vec![params.d * params.s_in, 0.0, 0.0, 0.0]);
    let g = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, prior.kappa]);
    let q = DMatrix::from_element(1, 1, 1.0);
    let c = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]);
    LtvSystem::lti(a, b, g, q, c, meas_variance)
}

/// Initial belief of the augmented filter: the growth-state guess with its
/// covariance, and the reaction rate at its stationary prior (mean zero,
/// variance kappa^2 / (2 theta), no cross-covariance).
pub fn initial_belief(prior: &OuPrior, x0_guess: &StateVec, p0: &Matrix3<f64>) -> GaussianBelief {
    let mean = DVector::from_vec(vec![x0_guess.s, x0_guess.e, x0_guess.f, 0.0]);
    let mut cov = DMatrix::<f64>::zeros(4, 4);
    for i in 0..3 {
        for j in 0..3 {
            cov[(i, j)] = p0[(i, j)];
        }
    }
    cov[(3, 3)] = prior.stationary_variance();
    GaussianBelief { mean, cov }
}

/// Runs the Bayesian filter; the output is four-dimensional with the
/// reaction-rate track in the last component.
pub fn run_bkf(
    params: &ModelParams,
    prior: &OuPrior,
    meas: &MeasurementSeries,
    init: &GaussianBelief,
    dt: f64,
) -> Result<FilterOutput> {
    if init.dim() != 4 {
        return Err(Error::DimensionMismatch(format!(
            "augmented filter needs a 4-dim belief, got {}",
            init.dim()
        )));
    }
    let sys = build_augmented_system(params, prior, meas.meas_variance)?;
    run_filter(&sys, meas, init, dt)
}

/// Convenience: diagonal growth-state covariance.
pub fn diag_p0(p0_diag: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::from_diagonal(p0_diag)
}
