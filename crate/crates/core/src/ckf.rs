//! Conservation Kalman filter: state estimation with a known growth law.
//!
//! The nonlinearity of the growth dynamics sits entirely in the scalar
//! reaction rate. Because one conserved combination of the state,
//! sigma_1 = s + f/(alpha gamma), obeys autonomous linear dynamics, it can be
//! predicted open-loop by an analytic detector; combining it with a smoothed
//! fluorescence estimate gives a substrate pre-estimate, hence a growth-rate
//! pre-estimate mu_hat(t). Substituting mu_hat for the Monod term turns the
//! model into a linear time-varying system that a hybrid Kalman filter
//! handles directly. The pipeline per sampling interval is:
//!
//! ```text
//!   detector sigma1_hat --\
//!                          >-- s_sigma = sigma1_hat - y_hat/(alpha gamma)
//!   pre-smoother y_hat ---/        |
//!                                  v
//!                     mu_hat = monod(s_sigma)  -->  Kalman filter on the
//!                                                   pre-estimated system
//! ```
//!
//! Everything is causal: the growth-rate pre-estimate on an interval uses
//! only measurements up to its left endpoint.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::hybridkf::{self, FilterOutput, GaussianBelief, LtvSystem};
use crate::model::{monod, monod_derivative, Equilibria, ModelParams};
use crate::sim::MeasurementSeries;

/// Open-loop predictor of the first conservation variable.
#[derive(Debug, Clone, Copy)]
pub struct DetectorState {
    /// Initial guess sigma1_hat(t0) (g/L).
    pub sigma1_0: f64,
    /// Reference time of the initial guess (h).
    pub t0: f64,
    pub params: ModelParams,
}

impl DetectorState {
    pub fn new(sigma1_0: f64, t0: f64, params: ModelParams) -> Result<Self> {
        if !(sigma1_0 >= 0.0 && sigma1_0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma1_0 must be >= 0, got {sigma1_0}"
            )));
        }
        Ok(Self { sigma1_0, t0, params })
    }
}

/// Evaluates the detector analytically: the conserved variable relaxes to the
/// inflow level exponentially at the dilution rate.
pub fn detector(det: &DetectorState, t: f64) -> f64 {
    let p = &det.params;
    p.s_in + (-p.d * (t - det.t0)).exp() * (det.sigma1_0 - p.s_in)
}

/// Affine prediction of the smoothed fluorescence on one interval, anchored
/// at the filtered estimate from the interval's left endpoint.
#[derive(Debug, Clone, Copy)]
pub struct YhatSegment {
    pub t_start: f64,
    pub value: f64,
    pub slope: f64,
}

impl YhatSegment {
    pub fn eval(&self, t: f64) -> f64 {
        self.value + (t - self.t_start) * self.slope
    }
}

/// Kalman pre-smoother for the measured fluorescence, built on a stochastic
/// double integrator: the signal's second derivative is white noise of
/// intensity beta^2, which penalizes overly irregular reconstructions.
pub struct PreSmoother {
    pub beta: f64,
    pub belief: GaussianBelief,
    /// Time of the current filtered belief (h).
    pub t: f64,
    system: LtvSystem,
}

impl PreSmoother {
    /// Starts the smoother at `t0` from a weakly informative prior centered
    /// on the first measurement with zero slope.
    pub fn new(beta: f64, y0: f64, meas_variance: f64, t0: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
        }
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let g = DMatrix::from_row_slice(2, 1, &[0.0, beta]);
        let q = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let system = LtvSystem::lti(a, DVector::zeros(2), g, q, c, meas_variance)?;
        let belief = GaussianBelief::new(
            DVector::from_vec(vec![y0, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![meas_variance, 1.0])),
        )?;
        Ok(Self { beta, belief, t: t0, system })
    }

    /// Applies the measurement at the smoother's current time.
    pub fn update(&mut self, y: f64) -> Result<()> {
        let (post, _, _) = hybridkf::update(&self.system, &self.belief, y)?;
        self.belief = post;
        Ok(())
    }

    /// The affine prediction anchored at the current filtered estimate; valid
    /// on the interval starting at the smoother's current time.
    pub fn segment(&self) -> YhatSegment {
        YhatSegment { t_start: self.t, value: self.belief.mean[0], slope: self.belief.mean[1] }
    }

    /// Advances the smoother to `t_k` and folds in the measurement `y_k`.
    /// Returns the prediction segment that covered the crossed interval and
    /// the new filtered belief.
    pub fn step(&mut self, t_k: f64, y_k: f64) -> Result<(YhatSegment, GaussianBelief)> {
        if !(t_k > self.t) {
            return Err(Error::InvalidParameter(format!(
                "pre-smoother time must advance: {} -> {t_k}",
                self.t
            )));
        }
        let segment = self.segment();
        // The double-integrator discretization is exact for any step size, so
        // the whole interval is one substep.
        self.belief = hybridkf::predict(&self.system, &self.belief, self.t, t_k, t_k - self.t)?;
        self.t = t_k;
        self.update(y_k)?;
        Ok((segment, self.belief.clone()))
    }
}

/// Growth-rate pre-estimate on one sampling interval.
#[derive(Debug, Clone, Copy)]
pub struct MuSegment {
    pub t_start: f64,
    pub t_end: f64,
    detector: DetectorState,
    yhat: YhatSegment,
}

impl MuSegment {
    /// Substrate pre-estimate, clamped at zero so the Monod law stays in its
    /// domain.
    pub fn s_sigma(&self, t: f64) -> f64 {
        let p = &self.detector.params;
        (detector(&self.detector, t) - self.yhat.eval(t) / (p.alpha * p.gamma)).max(0.0)
    }

    pub fn mu(&self, t: f64) -> f64 {
        monod(self.s_sigma(t), &self.detector.params)
            .expect("s_sigma is clamped nonnegative")
    }
}

/// Builds the growth-rate pre-estimate for the interval `[t_start, t_end)`
/// from the detector and the smoothed-fluorescence segment.
pub fn pre_estimate_mu(
    det: &DetectorState,
    yhat: &YhatSegment,
    t_start: f64,
    t_end: f64,
) -> MuSegment {
    MuSegment { t_start, t_end, detector: *det, yhat: *yhat }
}

/// Piecewise growth-rate pre-estimate over the full horizon.
#[derive(Debug, Clone, Default)]
pub struct MuSchedule {
    pub segments: Vec<MuSegment>,
}

impl MuSchedule {
    /// Evaluates the schedule; times before the first interval use the first
    /// segment and times at or past the last boundary use the last one.
    pub fn mu(&self, t: f64) -> Option<f64> {
        if self.segments.is_empty() {
            return None;
        }
        let idx = self
            .segments
            .partition_point(|seg| seg.t_end <= t)
            .min(self.segments.len() - 1);
        Some(self.segments[idx].mu(t))
    }
}

/// Piecewise-constant process-noise intensity for the pre-estimated system.
#[derive(Debug, Clone)]
pub struct QSchedule {
    /// Per-interval values; empty when the equilibrium-based formula does not
    /// apply and the fallback covers the whole horizon.
    pub per_interval: Vec<f64>,
    pub fallback: f64,
}

impl QSchedule {
    pub fn value(&self, interval: usize) -> f64 {
        self.per_interval.get(interval).copied().unwrap_or(self.fallback)
    }
}

/// Process-noise schedule for the conservation filter. Near the interior
/// equilibrium the pre-estimation error is driven by the measurement noise
/// through the conservation relation, giving
/// `Q_k = (mu'(s*) e* / (alpha gamma))^2 R (t_{k+1} - t_k)` per interval.
/// When the interior equilibrium does not exist the formula is undefined and
/// the (typically ML-tuned) fallback constant is used everywhere.
pub fn q_schedule(
    params: &ModelParams,
    eq: &Equilibria,
    meas: &MeasurementSeries,
    fallback: f64,
) -> QSchedule {
    match (eq.interior, eq.s_star) {
        (Some(interior), Some(s_star)) if interior.e > 0.0 => {
            let dmu = monod_derivative(s_star, params)
                .expect("s_star >= 0 whenever the interior equilibrium exists");
            let scale = (dmu * interior.e / (params.alpha * params.gamma)).powi(2);
            let per_interval = meas
                .times
                .windows(2)
                .map(|w| scale * meas.meas_variance * (w[1] - w[0]))
                .collect();
            QSchedule { per_interval, fallback }
        }
        _ => QSchedule { per_interval: Vec::new(), fallback },
    }
}

/// Pre-pipeline quantities reported at each measurement time.
#[derive(Debug, Clone, Copy)]
pub struct CkfPreEstimate {
    pub t: f64,
    pub sigma1: f64,
    pub y_smooth: f64,
    pub s_sigma: f64,
    pub mu_hat: f64,
}

/// Full result of a conservation-filter run.
#[derive(Debug, Clone)]
pub struct CkfRun {
    pub output: FilterOutput,
    pub pre: Vec<CkfPreEstimate>,
    pub mu_schedule: MuSchedule,
}

/// System matrix of the pre-estimated model for a given growth-rate value.
fn system_matrix(params: &ModelParams, mu: f64) -> Matrix3<f64> {
    Matrix3::new(
        -params.d,
        -mu / params.gamma,
        0.0,
        0.0,
        (1.0 - params.alpha) * mu - params.d,
        0.0,
        0.0,
        params.alpha * mu,
        -params.d,
    )
}

/// Asymptotic system matrix: when the pre-estimated substrate settles, the
/// growth rate tends to d / (1 - alpha) and the time-varying system freezes
/// at this matrix. Used by the spectral detectability and stabilizability
/// checks.
pub fn limit_system_matrix(params: &ModelParams) -> DMatrix<f64> {
    let mu_star = params.d / (1.0 - params.alpha);
    let m = system_matrix(params, mu_star);
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

fn interval_system(
    params: &ModelParams,
    seg: MuSegment,
    q_value: f64,
    meas_variance: f64,
) -> Result<LtvSystem> {
    let p = *params;
    let stoich = p.stoichiometry();
    let g = DMatrix::from_column_slice(3, 1, stoich.as_slice());
    let b = DVector::from_vec(vec![p.d * p.s_in, 0.0, 0.0]);
    let c = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
    LtvSystem::new(
        3,
        Box::new(move |t| {
            let m = system_matrix(&p, seg.mu(t));
            DMatrix::from_column_slice(3, 3, m.as_slice())
        }),
        Box::new(move |_| b.clone()),
        Box::new(move |_| g.clone()),
        Box::new(move |_| DMatrix::from_element(1, 1, q_value)),
        c,
        meas_variance,
    )
}

/// Runs the conservation-filter pipeline over a measurement series.
///
/// The initial belief is the prior at the first measurement time. The
/// filter's measurement variance is taken from the series. Per interval the
/// pipeline is strictly causal: the pre-smoother segment and hence the
/// growth-rate pre-estimate use only measurements up to the interval start.
pub fn run_ckf(
    params: &ModelParams,
    meas: &MeasurementSeries,
    init: &GaussianBelief,
    det: &DetectorState,
    beta: f64,
    q: &QSchedule,
    dt: f64,
) -> Result<CkfRun> {
    if meas.is_empty() {
        return Ok(CkfRun {
            output: FilterOutput {
                times: Vec::new(),
                predicted: Vec::new(),
                filtered: Vec::new(),
                innovations: Vec::new(),
                innovation_vars: Vec::new(),
                final_belief: init.clone(),
                dense: None,
            },
            pre: Vec::new(),
            mu_schedule: MuSchedule::default(),
        });
    }
    if init.dim() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "conservation filter needs a 3-dim belief, got {}",
            init.dim()
        )));
    }
    let m = meas.len();
    let r = meas.meas_variance;
    let alpha_gamma = params.alpha * params.gamma;

    let mut smoother = PreSmoother::new(beta, meas.values[0], r, meas.times[0])?;
    smoother.update(meas.values[0])?;

    let mut belief = init.clone();
    let mut out = FilterOutput {
        times: meas.times.clone(),
        predicted: Vec::with_capacity(m),
        filtered: Vec::with_capacity(m),
        innovations: Vec::with_capacity(m),
        innovation_vars: Vec::with_capacity(m),
        final_belief: init.clone(),
        dense: None,
    };
    let mut pre = Vec::with_capacity(m);
    let mut schedule = MuSchedule::default();

    let record_pre = |t: f64, smoother: &PreSmoother, det: &DetectorState| {
        let sigma1 = detector(det, t);
        let y_smooth = smoother.belief.mean[0];
        let s_sigma = (sigma1 - y_smooth / alpha_gamma).max(0.0);
        let mu_hat = monod(s_sigma, &det.params).expect("clamped nonnegative");
        CkfPreEstimate { t, sigma1, y_smooth, s_sigma, mu_hat }
    };

    // First update happens at the first measurement time, no prediction.
    out.predicted.push(belief.clone());
    let sys0 = interval_system(
        params,
        pre_estimate_mu(det, &smoother.segment(), meas.times[0], meas.times[0]),
        q.value(0),
        r,
    )?;
    let (post, innovation, s) = hybridkf::update(&sys0, &belief, meas.values[0])?;
    belief = post;
    out.innovations.push(innovation);
    out.innovation_vars.push(s);
    out.filtered.push(belief.clone());
    pre.push(record_pre(meas.times[0], &smoother, det));

    for k in 0..m - 1 {
        let (t_k, t_next) = (meas.times[k], meas.times[k + 1]);
        // Growth-rate pre-estimate on [t_k, t_next), from data up to t_k.
        let seg = pre_estimate_mu(det, &smoother.segment(), t_k, t_next);
        schedule.segments.push(seg);
        let sys = interval_system(params, seg, q.value(k), r)?;

        belief = hybridkf::predict(&sys, &belief, t_k, t_next, dt)?;
        out.predicted.push(belief.clone());
        let (post, innovation, s) = hybridkf::update(&sys, &belief, meas.values[k + 1])?;
        belief = post;
        out.innovations.push(innovation);
        out.innovation_vars.push(s);
        out.filtered.push(belief.clone());

        smoother.step(t_next, meas.values[k + 1])?;
        pre.push(record_pre(t_next, &smoother, det));
    }

    out.final_belief = belief;
    Ok(CkfRun { output: out, pre, mu_schedule: schedule })
}

/// Convenience: diagonal 3x3 initial belief for the growth state.
pub fn initial_belief(x0_guess: &Vector3<f64>, p0_diag: &Vector3<f64>) -> GaussianBelief {
    GaussianBelief {
        mean: DVector::from_column_slice(x0_guess.as_slice()),
        cov: DMatrix::from_diagonal(&DVector::from_column_slice(p0_diag.as_slice())),
    }
}
