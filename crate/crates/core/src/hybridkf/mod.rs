//! Hybrid Kalman filter for linear time-varying systems with continuous-time
//! dynamics and discrete-time scalar measurements:
//!
//! ```text
//!   dx/dt = A(t) x + b(t) + G(t) w(t),   E[w(t) w(tau)'] = Q(t) delta(t-tau)
//!   y_k   = C x(t_k) + v_k,              v_k ~ N(0, R)
//! ```
//!
//! Prediction discretizes each integrator substep into an exact affine
//! Gaussian transition (transition matrix by a fourth-order step of the
//! matrix ODE, process noise by Simpson quadrature of the same order), so a
//! filter run is equivalent to recursive conditioning in a well-defined
//! discrete-time linear Gaussian model. Updates use the Joseph form and the
//! covariance is re-symmetrized after every operation.

mod discrete;

pub use discrete::{
    discrete_transition, expm, spectral_radius, spectrum, steady_state_gain,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sim::MeasurementSeries;

/// Gaussian state estimate: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean dim {} vs cov {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let mut b = Self { mean, cov };
        b.symmetrize();
        Ok(b)
    }

    /// A fully certain belief (zero covariance).
    pub fn certain(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self { mean, cov: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn symmetrize(&mut self) {
        let sym = 0.5 * (&self.cov + self.cov.transpose());
        self.cov = sym;
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }
}

type MatrixFn = Box<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
type VectorFn = Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Time-indexed coefficients of the linear time-varying system.
pub struct LtvSystem {
    dim_x: usize,
    a: MatrixFn,
    b: VectorFn,
    g: MatrixFn,
    q: MatrixFn,
    /// Output matrix (1 x n; a single scalar measurement channel).
    pub c: DMatrix<f64>,
    /// Measurement noise variance, > 0.
    pub r: f64,
}

impl LtvSystem {
    pub fn new(
        dim_x: usize,
        a: MatrixFn,
        b: VectorFn,
        g: MatrixFn,
        q: MatrixFn,
        c: DMatrix<f64>,
        r: f64,
    ) -> Result<Self> {
        if c.nrows() != 1 || c.ncols() != dim_x {
            return Err(Error::DimensionMismatch(format!(
                "C must be 1x{dim_x}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "measurement variance must be > 0, got {r}"
            )));
        }
        Ok(Self { dim_x, a, b, g, q, c, r })
    }

    /// Convenience constructor for time-invariant coefficients.
    pub fn lti(
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
        r: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || g.nrows() != n {
            return Err(Error::DimensionMismatch("inconsistent system dimensions".into()));
        }
        if q.nrows() != g.ncols() || q.ncols() != g.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "Q must be {0}x{0} to match G",
                g.ncols()
            )));
        }
        Self::new(
            n,
            Box::new(move |_| a.clone()),
            Box::new(move |_| b.clone()),
            Box::new(move |_| g.clone()),
            Box::new(move |_| q.clone()),
            c,
            r,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim_x
    }

    pub fn a_at(&self, t: f64) -> DMatrix<f64> {
        (self.a)(t)
    }

    pub fn b_at(&self, t: f64) -> DVector<f64> {
        (self.b)(t)
    }

    /// Process noise contribution G(t) Q(t) G(t)' at time t.
    pub fn gqg_at(&self, t: f64) -> DMatrix<f64> {
        let g = (self.g)(t);
        let q = (self.q)(t);
        debug_assert_eq!(q.nrows(), g.ncols());
        &g * q * g.transpose()
    }

    /// One discretized integrator substep of size `h` starting at `t`:
    /// `x(t+h) = phi x(t) + drift + w`, `w ~ N(0, noise)`.
    pub fn discretize(&self, t: f64, h: f64) -> DiscretizedStep {
        let a0 = self.a_at(t);
        let am = self.a_at(t + 0.5 * h);
        let a1 = self.a_at(t + h);
        let phi = rk4_transition(&a0, &am, &a1, h);

        // Transition over the second half of the substep, for the Simpson
        // weight at the midpoint of the noise integral.
        let a34 = self.a_at(t + 0.75 * h);
        let phi_half = rk4_transition(&am, &a34, &a1, 0.5 * h);

        let b0 = self.b_at(t);
        let bm = self.b_at(t + 0.5 * h);
        let b1 = self.b_at(t + h);
        let drift = rk4_affine(&am, &a1, &b0, &bm, &b1, h);

        let s0 = self.gqg_at(t);
        let sm = self.gqg_at(t + 0.5 * h);
        let s1 = self.gqg_at(t + h);
        let mut noise = (h / 6.0)
            * (&phi * s0 * phi.transpose() + 4.0 * (&phi_half * sm * phi_half.transpose()) + s1);
        noise = 0.5 * (&noise + noise.transpose());

        DiscretizedStep { phi, drift, noise }
    }
}

/// Affine Gaussian transition over one integrator substep.
#[derive(Debug, Clone)]
pub struct DiscretizedStep {
    pub phi: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub noise: DMatrix<f64>,
}

/// Fourth-order step of the matrix ODE dPhi/dt = A(t) Phi from the identity,
/// given A at the start, midpoint, and end of the step.
pub(crate) fn rk4_transition(
    a0: &DMatrix<f64>,
    am: &DMatrix<f64>,
    a1: &DMatrix<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = a0.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let k1 = a0.clone();
    let k2 = am * (&id + (0.5 * h) * &k1);
    let k3 = am * (&id + (0.5 * h) * &k2);
    let k4 = a1 * (&id + h * &k3);
    &id + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Fourth-order step of dv/dt = A(t) v + b(t) from v = 0; together with the
/// transition matrix this reproduces exactly the classical fourth-order step
/// of the affine mean dynamics.
pub(crate) fn rk4_affine(
    am: &DMatrix<f64>,
    a1: &DMatrix<f64>,
    b0: &DVector<f64>,
    bm: &DVector<f64>,
    b1: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let k1 = b0.clone();
    let k2 = am * ((0.5 * h) * &k1) + bm;
    let k3 = am * ((0.5 * h) * &k2) + bm;
    let k4 = a1 * (h * &k3) + b1;
    (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Number of uniform substeps used to cover an interval of length `delta`
/// with nominal step `dt`.
pub fn num_substeps(delta: f64, dt: f64) -> usize {
    ((delta / dt - 1e-9).ceil().max(1.0)) as usize
}

/// Propagates a belief from `t_from` to `t_to` with nominal substep `dt`.
pub fn predict(
    sys: &LtvSystem,
    belief: &GaussianBelief,
    t_from: f64,
    t_to: f64,
    dt: f64,
) -> Result<GaussianBelief> {
    Ok(predict_grid(sys, belief, t_from, t_to, dt, false)?.0)
}

/// Like [`predict`], optionally recording the belief at every substep
/// boundary (including both endpoints).
pub fn predict_grid(
    sys: &LtvSystem,
    belief: &GaussianBelief,
    t_from: f64,
    t_to: f64,
    dt: f64,
    keep_grid: bool,
) -> Result<(GaussianBelief, Vec<(f64, GaussianBelief)>)> {
    if !(t_to > t_from) {
        return Err(Error::InvalidParameter(format!(
            "predict needs t_to > t_from, got [{t_from}, {t_to}]"
        )));
    }
    if belief.dim() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "belief dim {} vs system dim {}",
            belief.dim(),
            sys.dim()
        )));
    }
    let delta = t_to - t_from;
    let n = num_substeps(delta, dt);
    let h = delta / n as f64;

    let mut out = belief.clone();
    let mut grid = Vec::new();
    if keep_grid {
        grid.push((t_from, out.clone()));
    }
    for i in 0..n {
        let t = t_from + i as f64 * h;
        let step = sys.discretize(t, h);
        out.mean = &step.phi * &out.mean + &step.drift;
        out.cov = &step.phi * &out.cov * step.phi.transpose() + &step.noise;
        out.symmetrize();
        if !out.is_finite() {
            return Err(Error::FilterDiverged(format!(
                "non-finite belief during prediction at t = {}",
                t + h
            )));
        }
        if keep_grid {
            grid.push((t + h, out.clone()));
        }
    }
    Ok((out, grid))
}

/// Measurement update with the system's output model. Returns the posterior
/// belief, the innovation, and the innovation variance.
pub fn update(
    sys: &LtvSystem,
    belief: &GaussianBelief,
    y: f64,
) -> Result<(GaussianBelief, f64, f64)> {
    kalman_update(belief, &sys.c, sys.r, y)
}

/// Scalar-measurement Kalman update in Joseph form.
pub(crate) fn kalman_update(
    belief: &GaussianBelief,
    c: &DMatrix<f64>,
    r: f64,
    y: f64,
) -> Result<(GaussianBelief, f64, f64)> {
    let n = belief.dim();
    if c.nrows() != 1 || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C must be 1x{n}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let pct: DVector<f64> = (&belief.cov * c.transpose()).column(0).into_owned();
    let s = (c * &pct)[0] + r;
    if !(s > 0.0) {
        return Err(Error::SingularInnovation { s });
    }
    let k = &pct / s; // n x 1
    let innovation = y - (c * &belief.mean)[0];
    let mean = &belief.mean + &k * innovation;

    let ikc = DMatrix::<f64>::identity(n, n) - &k * c;
    let cov = &ikc * &belief.cov * ikc.transpose() + (&k * k.transpose()) * r;
    let mut post = GaussianBelief { mean, cov };
    post.symmetrize();
    if !post.is_finite() {
        return Err(Error::FilterDiverged("non-finite belief after update".into()));
    }
    Ok((post, innovation, s))
}

/// Per-step output of a filter run.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Measurement times.
    pub times: Vec<f64>,
    /// Prior beliefs at each measurement time (the initial belief at the
    /// first one).
    pub predicted: Vec<GaussianBelief>,
    /// Posterior beliefs after each update.
    pub filtered: Vec<GaussianBelief>,
    /// Innovations y_k - C x_predicted.
    pub innovations: Vec<f64>,
    /// Innovation variances S_k = C P C' + R.
    pub innovation_vars: Vec<f64>,
    /// Final posterior belief (the initial belief if there were no
    /// measurements).
    pub final_belief: GaussianBelief,
    /// Optional inter-sample belief grid (populated by
    /// [`run_filter_dense`]).
    pub dense: Option<Vec<(f64, GaussianBelief)>>,
}

/// Runs the filter over a measurement series. The initial belief is the
/// prior at the first measurement time, so the first update happens without
/// a preceding prediction.
pub fn run_filter(
    sys: &LtvSystem,
    meas: &MeasurementSeries,
    init: &GaussianBelief,
    dt: f64,
) -> Result<FilterOutput> {
    run_filter_impl(sys, meas, init, dt, false)
}

/// Same as [`run_filter`] but also records the belief on the integrator
/// grid between measurements.
pub fn run_filter_dense(
    sys: &LtvSystem,
    meas: &MeasurementSeries,
    init: &GaussianBelief,
    dt: f64,
) -> Result<FilterOutput> {
    run_filter_impl(sys, meas, init, dt, true)
}

fn run_filter_impl(
    sys: &LtvSystem,
    meas: &MeasurementSeries,
    init: &GaussianBelief,
    dt: f64,
    keep_dense: bool,
) -> Result<FilterOutput> {
    let m = meas.len();
    let mut out = FilterOutput {
        times: meas.times.clone(),
        predicted: Vec::with_capacity(m),
        filtered: Vec::with_capacity(m),
        innovations: Vec::with_capacity(m),
        innovation_vars: Vec::with_capacity(m),
        final_belief: init.clone(),
        dense: keep_dense.then(Vec::new),
    };
    if m == 0 {
        return Ok(out);
    }

    let mut belief = init.clone();
    for k in 0..m {
        if k > 0 {
            let (pred, grid) =
                predict_grid(sys, &belief, meas.times[k - 1], meas.times[k], dt, keep_dense)?;
            belief = pred;
            if let Some(dense) = out.dense.as_mut() {
                dense.extend(grid.into_iter().skip(1));
            }
        }
        out.predicted.push(belief.clone());
        let (post, innovation, s) = update(sys, &belief, meas.values[k])?;
        belief = post;
        out.innovations.push(innovation);
        out.innovation_vars.push(s);
        out.filtered.push(belief.clone());
    }
    out.final_belief = belief;
    Ok(out)
}
