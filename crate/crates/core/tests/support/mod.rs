//! Shared test support: an independent batch-conditioning oracle for the
//! recursive filter and helpers to generate random test systems.
#![allow(dead_code)] // each test binary compiles its own copy and uses a subset
//!
//! The oracle and the filter share only the model definition (the per-substep
//! affine Gaussian transitions exposed by `LtvSystem::discretize`); the
//! estimation routes are disjoint. The filter conditions recursively, one
//! measurement at a time; the oracle assembles the full joint Gaussian of
//! (x(t_M), y_0, ..., y_M) and conditions once, and likewise evaluates the
//! data log-density from the stacked joint covariance.

use biokf::hybridkf::{num_substeps, GaussianBelief, LtvSystem};
use biokf::sim::MeasurementSeries;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub struct IntervalModel {
    pub phi: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub noise: DMatrix<f64>,
}

/// Composes the substep transitions over one sampling interval, mirroring the
/// substep rule of the filter.
pub fn compose_interval(sys: &LtvSystem, t0: f64, t1: f64, dt: f64) -> IntervalModel {
    let n_sub = num_substeps(t1 - t0, dt);
    let h = (t1 - t0) / n_sub as f64;
    let dim = sys.dim();
    let mut phi = DMatrix::<f64>::identity(dim, dim);
    let mut drift = DVector::<f64>::zeros(dim);
    let mut noise = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n_sub {
        let s = sys.discretize(t0 + i as f64 * h, h);
        phi = &s.phi * phi;
        drift = &s.phi * drift + &s.drift;
        noise = &s.phi * noise * s.phi.transpose() + &s.noise;
    }
    IntervalModel { phi, drift, noise }
}

/// Batch posterior of the state at the last measurement time plus the exact
/// negative log-density of the measurement vector.
pub fn batch_posterior_and_nll(
    sys: &LtvSystem,
    meas: &MeasurementSeries,
    init: &GaussianBelief,
    dt: f64,
) -> (GaussianBelief, f64) {
    let m = meas.len();
    assert!(m >= 1);
    let dim = sys.dim();
    let c = &sys.c;
    let r = sys.r;

    // Marginal means/covariances of the state at measurement times, plus the
    // one-interval transitions.
    let mut means: Vec<DVector<f64>> = vec![init.mean.clone()];
    let mut vars: Vec<DMatrix<f64>> = vec![init.cov.clone()];
    let mut phis: Vec<DMatrix<f64>> = Vec::new();
    for k in 1..m {
        let im = compose_interval(sys, meas.times[k - 1], meas.times[k], dt);
        means.push(&im.phi * &means[k - 1] + &im.drift);
        vars.push(&im.phi * &vars[k - 1] * im.phi.transpose() + &im.noise);
        phis.push(im.phi);
    }

    // trans[j][k]: transition from time j to time k >= j.
    let mut trans: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); m];
    for j in 0..m {
        trans[j] = Vec::with_capacity(m - j);
        trans[j].push(DMatrix::identity(dim, dim));
        for k in j + 1..m {
            let prev = trans[j].last().unwrap().clone();
            trans[j].push(&phis[k - 1] * prev);
        }
    }
    let t_from = |j: usize, k: usize| -> &DMatrix<f64> { &trans[j][k - j] };

    // Stacked measurement moments.
    let mut mu_y = DVector::<f64>::zeros(m);
    for k in 0..m {
        mu_y[k] = (c * &means[k])[0];
    }
    let mut sigma_yy = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            // Cov(x_j, x_k) = Var(x_j) * T_{k<-j}'.
            let cov_xjxk = &vars[j] * t_from(j, k).transpose();
            let v = (c * cov_xjxk * c.transpose())[(0, 0)];
            sigma_yy[(j, k)] = v + if j == k { r } else { 0.0 };
            sigma_yy[(k, j)] = sigma_yy[(j, k)];
        }
    }
    // Cov(x_M, y_k) = T_{M<-k} Var(x_k) C'.
    let last = m - 1;
    let mut cross = DMatrix::<f64>::zeros(dim, m);
    for k in 0..m {
        let col = t_from(k, last) * &vars[k] * c.transpose();
        cross.view_mut((0, k), (dim, 1)).copy_from(&col);
    }

    let chol = sigma_yy
        .clone()
        .cholesky()
        .expect("stacked measurement covariance must be positive definite");
    let y = DVector::from_vec(meas.values.clone());
    let resid = &y - &mu_y;
    let alpha = chol.solve(&resid);

    let gain = chol.solve(&cross.transpose()).transpose(); // dim x m
    let mean = &means[last] + &gain * &resid;
    let cov = &vars[last] - &gain * cross.transpose();

    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut log_det = 0.0;
    for i in 0..m {
        log_det += 2.0 * chol.l()[(i, i)].ln();
    }
    let nll = 0.5 * (m as f64 * ln_2pi + log_det + resid.dot(&alpha));

    let mut post = GaussianBelief { mean, cov };
    post.symmetrize();
    (post, nll)
}

/// A random well-posed time-varying test system of dimension `n` with
/// sinusoidally varying coefficients.
pub fn random_ltv(rng: &mut impl Rng, n: usize) -> LtvSystem {
    let m_noise = rng.random_range(1..=n);
    let rand_mat = |rng: &mut dyn rand::RngCore, rows: usize, cols: usize, scale: f64| {
        DMatrix::from_fn(rows, cols, |_, _| {
            let r: f64 = rand::Rng::random_range(&mut *rng, -1.0..1.0);
            scale * r
        })
    };
    let a0 = rand_mat(rng, n, n, 0.8);
    let a1 = rand_mat(rng, n, n, 0.4);
    let b0 = rand_mat(rng, n, 1, 0.5).column(0).into_owned();
    let b1 = rand_mat(rng, n, 1, 0.5).column(0).into_owned();
    let g = rand_mat(rng, n, m_noise, 0.7);
    let l = rand_mat(rng, m_noise, m_noise, 0.6);
    let q = &l * l.transpose() + DMatrix::identity(m_noise, m_noise) * 0.05;
    let mut c = rand_mat(rng, 1, n, 1.0);
    c[(0, 0)] += 1.5; // keep the channel informative
    let r = rng.random_range(0.05..0.5);
    let omega = rng.random_range(0.5..2.0);

    LtvSystem::new(
        n,
        Box::new(move |t: f64| &a0 + &a1 * (omega * t).sin()),
        Box::new(move |t: f64| &b0 + &b1 * (omega * t).cos()),
        Box::new(move |_| g.clone()),
        Box::new(move |_| q.clone()),
        c,
        r,
    )
    .unwrap()
}

/// A random prior with positive-definite covariance.
pub fn random_belief(rng: &mut impl Rng, n: usize) -> GaussianBelief {
    let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.7..0.7));
    let cov = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    GaussianBelief::new(mean, cov).unwrap()
}

/// Random strictly increasing measurement times.
pub fn random_times(rng: &mut impl Rng, count: usize) -> Vec<f64> {
    let mut t = rng.random_range(0.0..0.5);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(t);
        t += rng.random_range(0.1..0.6);
    }
    out
}
