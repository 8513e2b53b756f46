//! Ground-truth simulation: fixed-step integration of the growth dynamics and
//! generation of sampled, noisy fluorescence measurements.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{vector_field, ModelParams, StateVec};

/// Configuration of one simulated experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Start time (h).
    pub t0: f64,
    /// End time (h).
    pub t_end: f64,
    /// Integrator step (h).
    pub dt_integ: f64,
    /// Measurement spacing (h); must divide the horizon.
    pub sample_interval: f64,
    /// Initial condition.
    pub x0: StateVec,
    /// Measurement noise variance (g/L)^2.
    pub meas_variance: f64,
    /// Seed of the measurement-noise generator.
    pub rng_seed: u64,
}

impl SimConfig {
    pub fn new(
        t0: f64,
        t_end: f64,
        dt_integ: f64,
        sample_interval: f64,
        x0: StateVec,
        meas_variance: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        let cfg = Self { t0, t_end, dt_integ, sample_interval, x0, meas_variance, rng_seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t0) {
            return Err(Error::InvalidParameter(format!(
                "t_end must exceed t0, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        if !(self.dt_integ > 0.0 && self.dt_integ <= self.sample_interval) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < dt_integ <= sample_interval, got dt_integ = {}, sample_interval = {}",
                self.dt_integ, self.sample_interval
            )));
        }
        let span = self.t_end - self.t0;
        let ratio = span / self.sample_interval;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample_interval {} must divide the horizon {} (ratio {})",
                self.sample_interval, span, ratio
            )));
        }
        if !(self.meas_variance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "meas_variance must be >= 0, got {}",
                self.meas_variance
            )));
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidParameter("x0 must be finite".into()));
        }
        Ok(())
    }

    /// Number of sampling intervals over the horizon.
    pub fn num_intervals(&self) -> usize {
        ((self.t_end - self.t0) / self.sample_interval).round() as usize
    }

    /// The measurement times t0, t0 + h, ..., t_end.
    pub fn sample_times(&self) -> Vec<f64> {
        let m = self.num_intervals();
        (0..=m)
            .map(|k| {
                if k == m {
                    self.t_end
                } else {
                    self.t0 + k as f64 * self.sample_interval
                }
            })
            .collect()
    }
}

impl Default for SimConfig {
    /// 36 h horizon, 5-minute sampling, 0.005 h integrator step, noise
    /// variance 1e-4 (g/L)^2, initial condition (0, 1, 0).
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: 36.0,
            dt_integ: 0.005,
            sample_interval: 1.0 / 12.0,
            x0: StateVec::new(0.0, 1.0, 0.0),
            meas_variance: 1e-4,
            rng_seed: 42,
        }
    }
}

/// Densely gridded solution of the growth dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
}

impl Trajectory {
    /// State at an arbitrary time inside the grid range, by piecewise cubic
    /// Lagrange interpolation through the four surrounding grid nodes. Exact
    /// at the nodes; interpolation error is of the same order as the
    /// integrator's.
    pub fn state_at(&self, t: f64) -> Result<StateVec> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty trajectory".into()));
        }
        let (t_first, t_last) = (self.times[0], self.times[n - 1]);
        let tol = 1e-9 * (t_last - t_first).abs().max(1.0);
        if t < t_first - tol || t > t_last + tol {
            return Err(Error::InvalidParameter(format!(
                "time {t} outside trajectory range [{t_first}, {t_last}]"
            )));
        }
        if n == 1 {
            return Ok(self.states[0]);
        }
        let t = t.clamp(t_first, t_last);
        // Index of the interval containing t.
        let idx = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok(self.states[i]),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        // Four-node stencil clipped to the grid.
        let lo = idx.saturating_sub(1).min(n.saturating_sub(4));
        let hi = (lo + 4).min(n);
        let ts = &self.times[lo..hi];
        let xs = &self.states[lo..hi];
        let mut acc = Vector3::zeros();
        for (i, xi) in xs.iter().enumerate() {
            let mut w = 1.0;
            for (j, &tj) in ts.iter().enumerate() {
                if i != j {
                    w *= (t - tj) / (ts[i] - tj);
                }
            }
            acc += w * xi.as_vector();
        }
        Ok(StateVec::from_vector(&acc))
    }
}

/// One classical fourth-order step of the growth dynamics.
fn rk4_step(x: &Vector3<f64>, h: f64, params: &ModelParams) -> Result<Vector3<f64>> {
    let f = |v: &Vector3<f64>| -> Result<Vector3<f64>> {
        // Transient negative substrate from intermediate stages is clamped so
        // the kinetics stay evaluable; the converged solution is nonnegative.
        let st = StateVec::new(v[0].max(0.0), v[1], v[2]);
        Ok(vector_field(&st, params)?.as_vector())
    };
    let k1 = f(x)?;
    let k2 = f(&(x + 0.5 * h * k1))?;
    let k3 = f(&(x + 0.5 * h * k2))?;
    let k4 = f(&(x + h * k3))?;
    Ok(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Integrates the growth dynamics with a fixed step; the final step is
/// truncated so the grid lands exactly on `t_end`.
pub fn integrate(params: &ModelParams, config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let span = config.t_end - config.t0;
    let full_steps = (span / config.dt_integ - 1e-9).floor() as usize;
    let mut times = Vec::with_capacity(full_steps + 2);
    let mut states = Vec::with_capacity(full_steps + 2);

    let mut t = config.t0;
    let mut x = config.x0.as_vector();
    times.push(t);
    states.push(config.x0);

    let mut step = 0usize;
    while t < config.t_end - 1e-12 {
        let h = config.dt_integ.min(config.t_end - t);
        x = rk4_step(&x, h, params)?;
        step += 1;
        t = if h == config.dt_integ {
            config.t0 + step as f64 * config.dt_integ
        } else {
            config.t_end
        };
        if !(x[0].is_finite() && x[1].is_finite() && x[2].is_finite()) {
            return Err(Error::IntegrationDiverged { t });
        }
        times.push(t);
        states.push(StateVec::from_vector(&x));
    }
    Ok(Trajectory { times, states })
}

/// Sampled fluorescence measurements with their noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    /// Strictly increasing sample times (h).
    pub times: Vec<f64>,
    /// Measured fluorescence values (g/L).
    pub values: Vec<f64>,
    /// Variance of the additive Gaussian measurement noise (g/L)^2.
    pub meas_variance: f64,
}

impl MeasurementSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, meas_variance: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times vs {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("values must be finite".into()));
        }
        Ok(Self { times, values, meas_variance })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Samples the fluorescence component of a trajectory at the configured
/// interval and adds seeded Gaussian noise. The same seed always yields the
/// same series.
pub fn sample_measurements(traj: &Trajectory, config: &SimConfig) -> Result<MeasurementSeries> {
    let times = config.sample_times();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let noise = if config.meas_variance > 0.0 {
        Some(Normal::new(0.0, config.meas_variance.sqrt()).map_err(|e| {
            Error::InvalidParameter(format!("bad noise distribution: {e}"))
        })?)
    } else {
        None
    };
    let mut values = Vec::with_capacity(times.len());
    for &t in &times {
        let f = traj.state_at(t)?.f;
        let v = match &noise {
            Some(n) => f + n.sample(&mut rng),
            None => f,
        };
        values.push(v);
    }
    MeasurementSeries::new(times, values, config.meas_variance)
}
