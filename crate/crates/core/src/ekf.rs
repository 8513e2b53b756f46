//! Extended Kalman filter baseline operating directly on the nonlinear
//! growth model: the mean propagates through the full nonlinear dynamics and
//! the covariance through the Jacobian linearization along the mean, with the
//! same discretization scheme as the linear hybrid filter so that the two
//! coincide when the model happens to be linear.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::hybridkf::{kalman_update, rk4_transition, FilterOutput, GaussianBelief};
use crate::model::{vector_field, ModelParams, StateVec};
use crate::sim::MeasurementSeries;

pub use crate::model::jacobian;

/// Extended-filter settings.
#[derive(Debug, Clone)]
pub struct EkfConfig {
    /// Diagonal process-noise intensities for (s, e, f).
    pub q_diag: Vector3<f64>,
    /// Prior belief at the first measurement time.
    pub init: GaussianBelief,
    /// Integrator substep (h).
    pub dt: f64,
}

impl EkfConfig {
    pub fn new(q_diag: Vector3<f64>, init: GaussianBelief, dt: f64) -> Result<Self> {
        if q_diag.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "q_diag must be componentwise >= 0, got {q_diag:?}"
            )));
        }
        if init.dim() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "extended filter needs a 3-dim belief, got {}",
                init.dim()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self { q_diag, init, dt })
    }
}

/// One nonlinear mean step; intermediate stages clamp the substrate at zero
/// to keep the kinetics evaluable.
fn rk4_mean_step(x: &Vector3<f64>, h: f64, params: &ModelParams) -> Result<Vector3<f64>> {
    let f = |v: &Vector3<f64>| -> Result<Vector3<f64>> {
        let st = StateVec::new(v[0].max(0.0), v[1], v[2]);
        Ok(vector_field(&st, params)?.as_vector())
    };
    let k1 = f(x)?;
    let k2 = f(&(x + 0.5 * h * k1))?;
    let k3 = f(&(x + 0.5 * h * k2))?;
    let k4 = f(&(x + h * k3))?;
    Ok(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

fn jacobian_at(x: &Vector3<f64>, params: &ModelParams) -> Result<DMatrix<f64>> {
    let j = jacobian(&StateVec::new(x[0].max(0.0), x[1], x[2]), params)?;
    Ok(DMatrix::from_column_slice(3, 3, j.as_slice()))
}

/// Propagates the belief over one interval: nonlinear mean, Jacobian-based
/// covariance with transition matrices and Simpson noise quadrature matching
/// the linear hybrid filter substep for substep.
fn ekf_predict(
    params: &ModelParams,
    belief: &GaussianBelief,
    t_from: f64,
    t_to: f64,
    dt: f64,
    q: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let delta = t_to - t_from;
    let n = crate::hybridkf::num_substeps(delta, dt);
    let h = delta / n as f64;

    let mut mean = Vector3::new(belief.mean[0], belief.mean[1], belief.mean[2]);
    let mut cov = belief.cov.clone();
    for _ in 0..n {
        let x0 = mean;
        let xm = rk4_mean_step(&x0, 0.5 * h, params)?;
        let x34 = rk4_mean_step(&xm, 0.25 * h, params)?;
        let x1 = rk4_mean_step(&x0, h, params)?;

        let a0 = jacobian_at(&x0, params)?;
        let am = jacobian_at(&xm, params)?;
        let a34 = jacobian_at(&x34, params)?;
        let a1 = jacobian_at(&x1, params)?;

        let phi = rk4_transition(&a0, &am, &a1, h);
        let phi_half = rk4_transition(&am, &a34, &a1, 0.5 * h);
        let noise = (h / 6.0)
            * (&phi * q * phi.transpose() + 4.0 * (&phi_half * q * phi_half.transpose()) + q);

        mean = x1;
        cov = &phi * cov * phi.transpose() + noise;
        cov = 0.5 * (&cov + cov.transpose());
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::FilterDiverged("non-finite extended-filter belief".into()));
        }
    }
    Ok(GaussianBelief { mean: DVector::from_column_slice(mean.as_slice()), cov })
}

/// Runs the extended filter over a measurement series. The substrate
/// estimate is clamped at zero after each update so the kinetics stay
/// evaluable on the next prediction.
pub fn run_ekf(
    params: &ModelParams,
    config: &EkfConfig,
    meas: &MeasurementSeries,
) -> Result<FilterOutput> {
    let m = meas.len();
    let c = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
    let r = meas.meas_variance;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "the filter needs a positive measurement variance, got {r}"
        )));
    }
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(config.q_diag.as_slice()));

    let mut out = FilterOutput {
        times: meas.times.clone(),
        predicted: Vec::with_capacity(m),
        filtered: Vec::with_capacity(m),
        innovations: Vec::with_capacity(m),
        innovation_vars: Vec::with_capacity(m),
        final_belief: config.init.clone(),
        dense: None,
    };
    if m == 0 {
        return Ok(out);
    }

    let mut belief = config.init.clone();
    for k in 0..m {
        if k > 0 {
            belief = ekf_predict(params, &belief, meas.times[k - 1], meas.times[k], config.dt, &q)?;
        }
        out.predicted.push(belief.clone());
        let (mut post, innovation, s) = kalman_update(&belief, &c, r, meas.values[k])?;
        post.mean[0] = post.mean[0].max(0.0);
        belief = post;
        out.innovations.push(innovation);
        out.innovation_vars.push(s);
        out.filtered.push(belief.clone());
    }
    out.final_belief = belief;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybridkf::{run_filter, LtvSystem};
    use crate::model::monod;
    use crate::sim::{integrate, sample_measurements, SimConfig};
    use rand::Rng;
    use rand::SeedableRng;

    fn reference_params() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = reference_params();
        let x = StateVec::new(1.0, 1.0, 0.3);
        let j = jacobian(&x, &p).unwrap();
        let h = 1e-6;
        for col in 0..3 {
            let mut hi = x.as_vector();
            let mut lo = x.as_vector();
            hi[col] += h;
            lo[col] -= h;
            let fhi = vector_field(&StateVec::from_vector(&hi), &p).unwrap().as_vector();
            let flo = vector_field(&StateVec::from_vector(&lo), &p).unwrap().as_vector();
            for row in 0..3 {
                let fd = (fhi[row] - flo[row]) / (2.0 * h);
                let denom = j[(row, col)].abs().max(1.0);
                assert!(
                    (fd - j[(row, col)]).abs() / denom < 1e-6,
                    "({row},{col}): fd {fd} vs {}",
                    j[(row, col)]
                );
            }
        }
    }

    #[test]
    fn jacobian_random_states_against_finite_differences() {
        let p = reference_params();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let x = StateVec::new(
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
            );
            let j = jacobian(&x, &p).unwrap();
            let h = 1e-6;
            for col in 0..3 {
                let mut hi = x.as_vector();
                let mut lo = x.as_vector();
                hi[col] += h;
                lo[col] = (lo[col] - h).max(0.0);
                let dv = hi[col] - lo[col];
                let fhi = vector_field(&StateVec::from_vector(&hi), &p).unwrap().as_vector();
                let flo = vector_field(&StateVec::from_vector(&lo), &p).unwrap().as_vector();
                for row in 0..3 {
                    let fd = (fhi[row] - flo[row]) / dv;
                    let denom = j[(row, col)].abs().max(1.0);
                    assert!(
                        (fd - j[(row, col)]).abs() / denom < 1e-6,
                        "x={x:?} ({row},{col}): fd {fd} vs {}",
                        j[(row, col)]
                    );
                }
            }
        }
    }

    #[test]
    fn exact_start_noiseless_tracks_truth() {
        let p = reference_params();
        let sim = SimConfig { t_end: 12.0, meas_variance: 0.0, ..SimConfig::default() };
        let traj = integrate(&p, &sim).unwrap();
        let mut meas = sample_measurements(&traj, &sim).unwrap();
        meas.meas_variance = 1e-12;
        let init = GaussianBelief::certain(DVector::from_vec(vec![0.0, 1.0, 0.0]));
        let config = EkfConfig::new(Vector3::zeros(), init, 0.005).unwrap();
        let out = run_ekf(&p, &config, &meas).unwrap();
        for (k, &t) in meas.times.iter().enumerate() {
            let truth = traj.state_at(t).unwrap().as_vector();
            let est = Vector3::new(
                out.filtered[k].mean[0],
                out.filtered[k].mean[1],
                out.filtered[k].mean[2],
            );
            assert!((truth - est).norm() < 1e-6, "t={t}: {}", (truth - est).norm());
        }
    }

    #[test]
    fn matches_linear_filter_when_kinetics_saturate() {
        // With k_s tiny and the substrate bounded away from zero the Monod
        // law is effectively the constant mu_max, so the model is linear and
        // the extended filter must agree with the linear hybrid filter.
        let p = ModelParams::new(1.0, 0.3, 2.0, 0.3, 0.1, 1e-12).unwrap();
        let sim = SimConfig {
            t_end: 6.0,
            x0: StateVec::new(2.0, 1.0, 0.0),
            rng_seed: 23,
            ..SimConfig::default()
        };
        let traj = integrate(&p, &sim).unwrap();
        let meas = sample_measurements(&traj, &sim).unwrap();

        let q_diag = Vector3::new(1e-4, 1e-4, 1e-5);
        let init = GaussianBelief::new(
            DVector::from_vec(vec![1.8, 1.2, 0.05]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 1e-4])),
        )
        .unwrap();

        let config = EkfConfig::new(q_diag, init.clone(), 0.005).unwrap();
        let ekf_out = run_ekf(&p, &config, &meas).unwrap();

        let mu = p.mu_max;
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                -p.d,
                -mu / p.gamma,
                0.0,
                0.0,
                (1.0 - p.alpha) * mu - p.d,
                0.0,
                0.0,
                p.alpha * mu,
                -p.d,
            ],
        );
        let b = DVector::from_vec(vec![p.d * p.s_in, 0.0, 0.0]);
        let sys = LtvSystem::lti(
            a,
            b,
            DMatrix::identity(3, 3),
            DMatrix::from_diagonal(&DVector::from_column_slice(q_diag.as_slice())),
            DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            meas.meas_variance,
        )
        .unwrap();
        let kf_out = run_filter(&sys, &meas, &init, 0.005).unwrap();

        for k in 0..meas.len() {
            let dm = (&ekf_out.filtered[k].mean - &kf_out.filtered[k].mean).abs().max();
            let dp = (&ekf_out.filtered[k].cov - &kf_out.filtered[k].cov).abs().max();
            assert!(dm < 1e-8, "step {k}: mean diff {dm}");
            assert!(dp < 1e-8, "step {k}: cov diff {dp}");
        }
    }

    #[test]
    fn converges_from_wrong_start_on_noisy_data() {
        // Reference scenario with a misinitialized filter and an inflated
        // diagonal process noise: the estimate still settles on the truth.
        let p = reference_params();
        let sim = SimConfig { rng_seed: 5, ..SimConfig::default() };
        let traj = integrate(&p, &sim).unwrap();
        let meas = sample_measurements(&traj, &sim).unwrap();
        let init = GaussianBelief::new(
            DVector::from_vec(vec![0.5, 1.5, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, sim.meas_variance])),
        )
        .unwrap();
        let config = EkfConfig::new(Vector3::new(0.04, 0.004, 2e-5), init, 0.005).unwrap();
        let out = run_ekf(&p, &config, &meas).unwrap();
        let t_last = *meas.times.last().unwrap();
        let truth = traj.state_at(t_last).unwrap().as_vector();
        let last = out.filtered.last().unwrap();
        let err = (Vector3::new(last.mean[0], last.mean[1], last.mean[2]) - truth).norm();
        assert!(err < 0.1, "final error {err}");
    }

    #[test]
    fn substrate_clamp_keeps_kinetics_evaluable() {
        let p = reference_params();
        let sim = SimConfig { t_end: 4.0, rng_seed: 31, ..SimConfig::default() };
        let traj = integrate(&p, &sim).unwrap();
        let meas = sample_measurements(&traj, &sim).unwrap();
        // Start with a negative-substrate-prone prior: tiny mean, huge noise.
        let init = GaussianBelief::new(
            DVector::from_vec(vec![0.01, 2.0, 0.3]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 4.0, 4.0])),
        )
        .unwrap();
        let config = EkfConfig::new(Vector3::new(0.04, 0.004, 2e-5), init, 0.005).unwrap();
        let out = run_ekf(&p, &config, &meas).unwrap();
        for b in &out.filtered {
            assert!(b.mean[0] >= 0.0);
        }
    }

    #[test]
    fn no_biomass_keeps_biomass_column_zero() {
        let p = reference_params();
        let j = jacobian(&StateVec::new(1.0, 0.0, 0.1), &p).unwrap();
        assert_eq!(j[(0, 0)], -p.d);
        assert_eq!(j[(1, 0)], 0.0);
        assert_eq!(j[(2, 0)], 0.0);
        let mu = monod(1.0, &p).unwrap();
        assert!((j[(1, 1)] - ((1.0 - p.alpha) * mu - p.d)).abs() < 1e-15);
    }
}
