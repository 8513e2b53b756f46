//! Maximum-likelihood tuning of filter hyperparameters via the
//! prediction-error decomposition: the data likelihood factors into the
//! one-step-ahead Gaussian predictive densities that the Kalman filter
//! produces as innovations and innovation variances, so any candidate
//! parameter vector is scored by one filter pass. Minimization is
//! derivative-free (Nelder-Mead) in log-parameter space, which enforces
//! positivity and makes steps scale-free.

use crate::error::Result;
use crate::hybridkf::{run_filter, FilterOutput, GaussianBelief, LtvSystem};
use crate::sim::MeasurementSeries;

const LN_2PI: f64 = 1.8378770664093453;

/// A tuning problem: a builder mapping a positive parameter vector to the
/// filter model (system plus initial belief), the data to fit, box bounds
/// per parameter, and the prediction substep.
pub struct TuningProblem {
    /// Builds the filter model for a candidate parameter vector. The initial
    /// belief is part of the build because it may depend on the parameters
    /// (e.g. a stationary prior variance).
    pub builder: Box<dyn Fn(&[f64]) -> Result<(LtvSystem, GaussianBelief)> + Send + Sync>,
    /// Inclusive positive bounds per parameter.
    pub bounds: Vec<(f64, f64)>,
    pub data: MeasurementSeries,
    /// Integrator substep for the filter predictions (h).
    pub dt: f64,
}

/// Negative log-likelihood accumulated from a filter run:
/// `0.5 * sum_k [log 2 pi + log S_k + innovation_k^2 / S_k]`.
/// The first term uses the prior predictive variance at the first
/// measurement time.
pub fn nll_from_output(out: &FilterOutput) -> f64 {
    out.innovations
        .iter()
        .zip(&out.innovation_vars)
        .map(|(&e, &s)| 0.5 * (LN_2PI + s.ln() + e * e / s))
        .sum()
}

/// Scores a candidate parameter vector. Any failure (out-of-bounds
/// parameters, filter divergence, singular innovations) returns +infinity so
/// the optimizer simply avoids the point.
pub fn negative_log_likelihood(problem: &TuningProblem, theta: &[f64]) -> f64 {
    if theta.len() != problem.bounds.len() {
        return f64::INFINITY;
    }
    if theta
        .iter()
        .zip(&problem.bounds)
        .any(|(&t, &(lo, hi))| !(t >= lo && t <= hi))
    {
        return f64::INFINITY;
    }
    let (sys, init) = match (problem.builder)(theta) {
        Ok(built) => built,
        Err(_) => return f64::INFINITY,
    };
    match run_filter(&sys, &problem.data, &init, problem.dt) {
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
}

/// Nelder-Mead settings. Defaults: standard reflection/expansion/contraction
/// /shrink coefficients, a 2000-evaluation budget, and convergence once the
/// objective spread over the simplex drops below 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    pub spread_tol: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial simplex offset in log-parameter space.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            spread_tol: 1e-8,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.25,
        }
    }
}

/// Outcome of a tuning run.
#[derive(Debug, Clone)]
pub struct TuneResult {
    pub theta: Vec<f64>,
    pub nll: f64,
    pub evals: usize,
    /// False when the evaluation budget ran out before the simplex
    /// converged; `theta` is then the best point seen so far.
    pub converged: bool,
}

/// Derivative-free minimization of `objective` over positive parameters
/// within `bounds`, by Nelder-Mead on the logarithms of the parameters.
/// Never returns a point worse than `theta0`.
pub fn minimize(
    mut objective: impl FnMut(&[f64]) -> f64,
    theta0: &[f64],
    bounds: &[(f64, f64)],
    opts: &NelderMeadOptions,
) -> TuneResult {
    assert_eq!(theta0.len(), bounds.len());
    let dim = theta0.len();
    let log_bounds: Vec<(f64, f64)> =
        bounds.iter().map(|&(lo, hi)| (lo.ln(), hi.ln())).collect();
    let clamp = |z: &mut Vec<f64>| {
        for (v, &(lo, hi)) in z.iter_mut().zip(&log_bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let to_theta = |z: &[f64]| -> Vec<f64> { z.iter().map(|v| v.exp()).collect() };

    let mut evals = 0usize;
    let mut best_theta = theta0.to_vec();
    let mut eval = |z: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        objective(&to_theta(z))
    };

    // Initial simplex around log(theta0).
    let z0: Vec<f64> = theta0.iter().map(|t| t.ln()).collect();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut scores: Vec<f64> = Vec::with_capacity(dim + 1);
    {
        let mut p = z0.clone();
        clamp(&mut p);
        scores.push(eval(&p, &mut evals));
        simplex.push(p);
    }
    let mut best_nll = scores[0];
    for i in 0..dim {
        let mut p = z0.clone();
        p[i] += opts.initial_step;
        clamp(&mut p);
        let f = eval(&p, &mut evals);
        if f < best_nll {
            best_nll = f;
            best_theta = to_theta(&p);
        }
        simplex.push(p);
        scores.push(f);
    }

    let mut converged = false;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| {
            scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal)
        });
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim.saturating_sub(1)];

        if scores[best].is_finite()
            && (scores[worst] - scores[best]).abs() < opts.spread_tol
        {
            converged = true;
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += simplex[i][d];
            }
        }
        for v in centroid.iter_mut() {
            *v /= dim as f64;
        }

        let accept = |point: Vec<f64>, score: f64,
                          simplex: &mut Vec<Vec<f64>>,
                          scores: &mut Vec<f64>,
                          best_nll: &mut f64,
                          best_theta: &mut Vec<f64>| {
            if score < *best_nll {
                *best_nll = score;
                *best_theta = to_theta(&point);
            }
            simplex[worst] = point;
            scores[worst] = score;
        };

        let mut reflected = vec![0.0; dim];
        for d in 0..dim {
            reflected[d] = centroid[d] + opts.reflection * (centroid[d] - simplex[worst][d]);
        }
        clamp(&mut reflected);
        let f_reflected = eval(&reflected, &mut evals);

        if f_reflected < scores[best] {
            // Try to expand further in the same direction.
            let mut expanded = vec![0.0; dim];
            for d in 0..dim {
                expanded[d] = centroid[d] + opts.expansion * (reflected[d] - centroid[d]);
            }
            clamp(&mut expanded);
            let f_expanded = eval(&expanded, &mut evals);
            if f_expanded < f_reflected {
                accept(expanded, f_expanded, &mut simplex, &mut scores, &mut best_nll, &mut best_theta);
            } else {
                accept(reflected, f_reflected, &mut simplex, &mut scores, &mut best_nll, &mut best_theta);
            }
            continue;
        }
        if f_reflected < scores[second_worst] {
            accept(reflected, f_reflected, &mut simplex, &mut scores, &mut best_nll, &mut best_theta);
            continue;
        }

        // Contract toward the centroid.
        let mut contracted = vec![0.0; dim];
        for d in 0..dim {
            contracted[d] = centroid[d] + opts.contraction * (simplex[worst][d] - centroid[d]);
        }
        clamp(&mut contracted);
        let f_contracted = eval(&contracted, &mut evals);
        if f_contracted < scores[worst] {
            accept(contracted, f_contracted, &mut simplex, &mut scores, &mut best_nll, &mut best_theta);
            continue;
        }

        // Shrink everything toward the best vertex.
        let best_point = simplex[best].clone();
        for i in 0..=dim {
            if i == best {
                continue;
            }
            for d in 0..dim {
                simplex[i][d] = best_point[d] + opts.shrink * (simplex[i][d] - best_point[d]);
            }
            let f = eval(&simplex[i], &mut evals);
            if f < best_nll {
                best_nll = f;
                best_theta = to_theta(&simplex[i]);
            }
            scores[i] = f;
            if evals >= opts.max_evals {
                break;
            }
        }
    }

    TuneResult { theta: best_theta, nll: best_nll, evals, converged }
}

/// Tunes a filter model on its data starting from `theta0`, with the default
/// optimizer settings.
pub fn tune(problem: &TuningProblem, theta0: &[f64]) -> TuneResult {
    minimize(
        |theta| negative_log_likelihood(problem, theta),
        theta0,
        &problem.bounds,
        &NelderMeadOptions::default(),
    )
}
