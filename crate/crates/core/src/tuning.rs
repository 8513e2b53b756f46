//! Ready-made maximum-likelihood tuning problems for the filter
//! hyperparameters: the pre-smoother intensity, the reaction-rate prior, the
//! extended filter's process noise, and the conservation filter's
//! process-noise fallback. All of them score candidates by the same
//! prediction-error likelihood; the nonlinear targets plug their own filter
//! runs into the generic optimizer.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::bkf::{build_augmented_system, initial_belief as bkf_initial_belief, OuPrior};
use crate::ckf::{self, DetectorState};
use crate::ekf::{run_ekf, EkfConfig};
use crate::error::Result;
use crate::hybridkf::{GaussianBelief, LtvSystem};
use crate::likelihood::{minimize, nll_from_output, tune, NelderMeadOptions, TuneResult, TuningProblem};
use crate::model::{equilibria, ModelParams, StateVec};
use crate::sim::MeasurementSeries;

/// Default box bounds for one positive hyperparameter.
pub const DEFAULT_BOUNDS: (f64, f64) = (1e-6, 1e3);

/// Tuning problem for the pre-smoother intensity beta: a stochastic double
/// integrator observed in its first component, started at the first
/// measurement with unknown slope.
pub fn presmoother_problem(meas: &MeasurementSeries) -> TuningProblem {
    let r = meas.meas_variance;
    let y0 = meas.values.first().copied().unwrap_or(0.0);
    TuningProblem {
        builder: Box::new(move |theta: &[f64]| {
            let beta = theta[0];
            let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
            let g = DMatrix::from_column_slice(2, 1, &[0.0, beta]);
            let q = DMatrix::from_element(1, 1, 1.0);
            let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
            let sys = LtvSystem::lti(a, DVector::zeros(2), g, q, c, r)?;
            let init = GaussianBelief::new(
                DVector::from_vec(vec![y0, 0.0]),
                DMatrix::from_diagonal(&DVector::from_vec(vec![r, 1.0])),
            )?;
            Ok((sys, init))
        }),
        bounds: vec![DEFAULT_BOUNDS],
        data: meas.clone(),
        dt: 1.0, // the double-integrator discretization is exact at any step
    }
}

/// Tunes the pre-smoother intensity.
pub fn tune_presmoother(meas: &MeasurementSeries, beta0: f64) -> TuneResult {
    tune(&presmoother_problem(meas), &[beta0])
}

/// Tuning problem for the reaction-rate prior (theta, kappa) of the Bayesian
/// filter; the initial rate variance follows the candidate's stationary law.
pub fn ou_prior_problem(
    params: &ModelParams,
    x0_guess: &StateVec,
    p0_diag: &Vector3<f64>,
    dt: f64,
    meas: &MeasurementSeries,
) -> TuningProblem {
    let params = *params;
    let x0 = *x0_guess;
    let p0 = crate::bkf::diag_p0(p0_diag);
    let r = meas.meas_variance;
    TuningProblem {
        builder: Box::new(move |theta: &[f64]| {
            let prior = OuPrior::new(theta[0], theta[1])?;
            let sys = build_augmented_system(&params, &prior, r)?;
            Ok((sys, bkf_initial_belief(&prior, &x0, &p0)))
        }),
        bounds: vec![DEFAULT_BOUNDS, DEFAULT_BOUNDS],
        data: meas.clone(),
        dt,
    }
}

/// Tunes the reaction-rate prior.
pub fn tune_ou_prior(
    params: &ModelParams,
    x0_guess: &StateVec,
    p0_diag: &Vector3<f64>,
    dt: f64,
    meas: &MeasurementSeries,
    theta0: &[f64; 2],
) -> TuneResult {
    tune(&ou_prior_problem(params, x0_guess, p0_diag, dt, meas), theta0)
}

/// Tunes the three diagonal process-noise intensities of the extended
/// filter by likelihood over its own (nonlinear) filter run.
pub fn tune_ekf_q(
    params: &ModelParams,
    x0_guess: &StateVec,
    p0_diag: &Vector3<f64>,
    dt: f64,
    meas: &MeasurementSeries,
    q0: &[f64; 3],
) -> Result<TuneResult> {
    let init = GaussianBelief::new(
        DVector::from_column_slice(x0_guess.as_vector().as_slice()),
        DMatrix::from_diagonal(&DVector::from_column_slice(p0_diag.as_slice())),
    )?;
    let params = *params;
    let meas = meas.clone();
    let objective = move |theta: &[f64]| -> f64 {
        let q = Vector3::new(theta[0], theta[1], theta[2]);
        let config = match EkfConfig::new(q, init.clone(), dt) {
            Ok(c) => c,
            Err(_) => return f64::INFINITY,
        };
        match run_ekf(&params, &config, &meas) {
            Ok(out) => {
                let nll = nll_from_output(&out);
                if nll.is_nan() {
                    f64::INFINITY
                } else {
                    nll
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    Ok(minimize(
        objective,
        q0,
        &[DEFAULT_BOUNDS; 3],
        &NelderMeadOptions::default(),
    ))
}

/// Tunes the conservation filter's process-noise fallback by likelihood over
/// the full pipeline run.
#[allow(clippy::too_many_arguments)]
pub fn tune_ckf_q_fallback(
    params: &ModelParams,
    x0_guess: &StateVec,
    p0_diag: &Vector3<f64>,
    sigma1_0: f64,
    beta: f64,
    dt: f64,
    meas: &MeasurementSeries,
    q0: f64,
) -> Result<TuneResult> {
    let det = DetectorState::new(sigma1_0, meas.times.first().copied().unwrap_or(0.0), *params)?;
    let eq = equilibria(params);
    let init = ckf::initial_belief(&x0_guess.as_vector(), p0_diag);
    let params = *params;
    let meas = meas.clone();
    let objective = move |theta: &[f64]| -> f64 {
        let q = ckf::q_schedule(&params, &eq, &meas, theta[0]);
        match ckf::run_ckf(&params, &meas, &init, &det, beta, &q, dt) {
            Ok(run) => {
                let nll = nll_from_output(&run.output);
                if nll.is_nan() {
                    f64::INFINITY
                } else {
                    nll
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    Ok(minimize(
        objective,
        &[q0],
        &[DEFAULT_BOUNDS],
        &NelderMeadOptions::default(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::negative_log_likelihood;
    use crate::sim::{integrate, sample_measurements, SimConfig};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn presmoother_recovery_beats_generating_beta() {
        // Data from the double-integrator model itself with known beta: the
        // tuned value cannot be worse than the generator's.
        let beta_true = 0.01;
        let r: f64 = 1e-4;
        let dt = 1.0 / 12.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let meas_noise = Normal::new(0.0, r.sqrt()).unwrap();
        let accel = Normal::new(0.0, 1.0).unwrap();

        // Exact discrete simulation of the double integrator driven by white
        // noise of intensity beta^2.
        let mut y = 0.1;
        let mut v = 0.0;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for k in 0..=200 {
            times.push(k as f64 * dt);
            values.push(y + meas_noise.sample(&mut rng));
            // One exact step: velocity noise and its integral are correlated.
            let (w1, w2) = (accel.sample(&mut rng), accel.sample(&mut rng));
            let s_pos = beta_true * (dt.powi(3) / 3.0f64).sqrt();
            let s_vel = beta_true * dt.sqrt();
            let rho = (3.0f64).sqrt() / 2.0;
            let dp = s_pos * w1;
            let dv = s_vel * (rho * w1 + (1.0 - rho * rho).sqrt() * w2);
            y += v * dt + dp;
            v += dv;
        }
        let meas = MeasurementSeries::new(times, values, r).unwrap();
        let problem = presmoother_problem(&meas);
        let result = tune_presmoother(&meas, 0.1);
        assert!(
            result.nll <= negative_log_likelihood(&problem, &[beta_true]) + 1e-9,
            "tuned nll {} vs generator {}",
            result.nll,
            negative_log_likelihood(&problem, &[beta_true])
        );
        // And the recovered scale is sane.
        assert!(result.theta[0] > 1e-4 && result.theta[0] < 1.0, "{}", result.theta[0]);
    }

    #[test]
    fn ekf_q_tuning_improves_on_start() {
        let p = ModelParams::default();
        let sim = SimConfig { t_end: 6.0, rng_seed: 99, ..SimConfig::default() };
        let traj = integrate(&p, &sim).unwrap();
        let meas = sample_measurements(&traj, &sim).unwrap();
        let x0 = StateVec::new(0.5, 1.5, 0.0);
        let p0 = Vector3::new(1.0, 1.0, sim.meas_variance);
        let q0 = [0.01, 0.01, 0.01];
        let result = tune_ekf_q(&p, &x0, &p0, 0.01, &meas, &q0).unwrap();
        // NLL at the starting point, computed directly.
        let init = GaussianBelief::new(
            DVector::from_column_slice(x0.as_vector().as_slice()),
            DMatrix::from_diagonal(&DVector::from_column_slice(p0.as_slice())),
        )
        .unwrap();
        let config = EkfConfig::new(Vector3::new(q0[0], q0[1], q0[2]), init, 0.01).unwrap();
        let start_nll = nll_from_output(&run_ekf(&p, &config, &meas).unwrap());
        assert!(result.nll <= start_nll + 1e-12);
        assert!(result.theta.iter().all(|&q| q > 0.0));
    }
}
