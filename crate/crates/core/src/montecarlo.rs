//! Monte Carlo evaluation of the filters: many replicates of the same
//! ground truth with fresh measurement noise, per-filter mean trajectories
//! with standard-error bands, per-replicate error metrics, and a scalar
//! convergence-time metric that makes "converges faster" testable.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::bkf::{self, OuPrior};
use crate::ckf::{self, DetectorState};
use crate::ekf::{run_ekf, EkfConfig};
use crate::error::{Error, Result};
use crate::hybridkf::{FilterOutput, GaussianBelief};
use crate::model::{equilibria, ModelParams, StateVec};
use crate::sim::{integrate, sample_measurements, MeasurementSeries, SimConfig, Trajectory};

/// The three estimators under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Ckf,
    Bkf,
    Ekf,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Ckf => "ckf",
            FilterKind::Bkf => "bkf",
            FilterKind::Ekf => "ekf",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ckf" => Ok(FilterKind::Ckf),
            "bkf" => Ok(FilterKind::Bkf),
            "ekf" => Ok(FilterKind::Ekf),
            other => Err(Error::InvalidParameter(format!("unknown filter '{other}'"))),
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to run one estimation scenario: the true model and
/// simulation settings plus per-filter hyperparameters and the common filter
/// initialization.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ModelParams,
    pub sim: SimConfig,
    /// Filter initial mean (typically off the true initial condition).
    pub x0_guess: StateVec,
    /// Diagonal of the filter initial covariance.
    pub p0_diag: Vector3<f64>,
    /// Detector initialization for the conservation filter.
    pub sigma1_0: f64,
    /// Pre-smoother intensity.
    pub beta: f64,
    /// Process-noise fallback for the conservation filter.
    pub q_fallback: f64,
    /// Reaction-rate prior for the Bayesian filter.
    pub ou: OuPrior,
    /// Diagonal process noise for the extended filter.
    pub ekf_q_diag: Vector3<f64>,
    /// Filter integrator substep (h).
    pub filter_dt: f64,
    /// Measurement variance assumed by the filters; defaults to the
    /// generating variance when absent (useful for noiseless experiments
    /// where the generator variance is zero but the filters need a positive
    /// noise floor).
    pub assumed_meas_variance: Option<f64>,
}

impl Default for Scenario {
    /// The reference scenario: default model and simulation, filter started
    /// at (0.5, 1.5, 0) with covariance diag(1, 1, R), detector at 0.5, and
    /// ML-tuned hyperparameters for the default noise level (see the
    /// crate-level tuning command).
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            params: ModelParams::default(),
            sim,
            x0_guess: StateVec::new(0.5, 1.5, 0.0),
            p0_diag: Vector3::new(1.0, 1.0, sim.meas_variance),
            sigma1_0: 0.5,
            beta: crate::defaults::BETA,
            q_fallback: crate::defaults::Q_FALLBACK,
            ou: OuPrior { theta: crate::defaults::OU_THETA, kappa: crate::defaults::OU_KAPPA },
            ekf_q_diag: Vector3::new(
                crate::defaults::EKF_Q[0],
                crate::defaults::EKF_Q[1],
                crate::defaults::EKF_Q[2],
            ),
            filter_dt: 0.005,
            assumed_meas_variance: None,
        }
    }
}

impl Scenario {
    /// The measurement series as seen by the filters (assumed noise model
    /// possibly overriding the generator's).
    pub fn filter_series(&self, meas: &MeasurementSeries) -> MeasurementSeries {
        let mut m = meas.clone();
        if let Some(r) = self.assumed_meas_variance {
            m.meas_variance = r;
        }
        m
    }

    /// Runs one filter on one measurement series.
    pub fn run_filter_on(
        &self,
        kind: FilterKind,
        meas: &MeasurementSeries,
    ) -> Result<FilterOutput> {
        let meas = self.filter_series(meas);
        match kind {
            FilterKind::Ckf => {
                let det = DetectorState::new(self.sigma1_0, meas.times[0], self.params)?;
                let eq = equilibria(&self.params);
                let q = ckf::q_schedule(&self.params, &eq, &meas, self.q_fallback);
                let init = ckf::initial_belief(&self.x0_guess.as_vector(), &self.p0_diag);
                Ok(ckf::run_ckf(&self.params, &meas, &init, &det, self.beta, &q, self.filter_dt)?
                    .output)
            }
            FilterKind::Bkf => {
                let init = bkf::initial_belief(
                    &self.ou,
                    &self.x0_guess,
                    &bkf::diag_p0(&self.p0_diag),
                );
                bkf::run_bkf(&self.params, &self.ou, &meas, &init, self.filter_dt)
            }
            FilterKind::Ekf => {
                let init = GaussianBelief::new(
                    DVector::from_column_slice(self.x0_guess.as_vector().as_slice()),
                    DMatrix::from_diagonal(&DVector::from_column_slice(self.p0_diag.as_slice())),
                )?;
                let config = EkfConfig::new(self.ekf_q_diag, init, self.filter_dt)?;
                run_ekf(&self.params, &config, &meas)
            }
        }
    }
}

/// Monte Carlo configuration.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_replicates: usize,
    pub base_seed: u64,
    pub filters: Vec<FilterKind>,
    pub scenario: Scenario,
    /// Convergence threshold for the entry-time metric (g/L).
    pub eps: f64,
}

/// Per-filter aggregate over replicates.
#[derive(Debug, Clone)]
pub struct FilterStats {
    pub kind: FilterKind,
    /// Mean estimated state per measurement time, over replicates.
    pub mean: Vec<Vector3<f64>>,
    /// Standard error of that mean, per measurement time.
    pub se: Vec<Vector3<f64>>,
    /// Root-mean-square estimation error per replicate.
    pub rmse: Vec<f64>,
    /// Convergence time per replicate (h; infinite when the error never
    /// settles below the threshold).
    pub conv_time: Vec<f64>,
    /// Replicates excluded because the filter diverged.
    pub diverged: usize,
}

/// Monte Carlo summary: shared time grid and truth plus per-filter stats.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub times: Vec<f64>,
    pub truth: Vec<Vector3<f64>>,
    pub filters: Vec<FilterStats>,
}

/// First time from which the estimation error stays below `eps` for the rest
/// of the run; infinity if it never does.
pub fn convergence_time(estimate: &FilterOutput, truth: &Trajectory, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    let mut entry = f64::INFINITY;
    for (k, &t) in estimate.times.iter().enumerate().rev() {
        let x = truth.state_at(t)?.as_vector();
        let m = &estimate.filtered[k].mean;
        let err = (Vector3::new(m[0], m[1], m[2]) - x).norm();
        if err < eps {
            entry = t;
        } else {
            break;
        }
    }
    Ok(entry)
}

fn errors_at_times(
    estimate: &FilterOutput,
    truth: &Trajectory,
) -> Result<Vec<Vector3<f64>>> {
    estimate
        .times
        .iter()
        .zip(&estimate.filtered)
        .map(|(&t, b)| {
            let x = truth.state_at(t)?.as_vector();
            Ok(Vector3::new(b.mean[0], b.mean[1], b.mean[2]) - x)
        })
        .collect()
}

/// Runs the full Monte Carlo study: one shared ground truth, fresh
/// measurement noise per replicate (seed `base_seed + i`), every selected
/// filter on identical data, and deterministic aggregation in replicate
/// order.
pub fn run_mc(config: &McConfig) -> Result<McSummary> {
    if config.n_replicates < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicates, got {}",
            config.n_replicates
        )));
    }
    let scn = &config.scenario;
    let truth = integrate(&scn.params, &scn.sim)?;
    let times = scn.sim.sample_times();
    let truth_at: Vec<Vector3<f64>> = times
        .iter()
        .map(|&t| Ok(truth.state_at(t)?.as_vector()))
        .collect::<Result<_>>()?;
    let n_times = times.len();

    struct Acc {
        kind: FilterKind,
        sum: Vec<Vector3<f64>>,
        sum_sq: Vec<Vector3<f64>>,
        rmse: Vec<f64>,
        conv: Vec<f64>,
        diverged: usize,
        used: usize,
    }
    let mut accs: Vec<Acc> = config
        .filters
        .iter()
        .map(|&kind| Acc {
            kind,
            sum: vec![Vector3::zeros(); n_times],
            sum_sq: vec![Vector3::zeros(); n_times],
            rmse: Vec::new(),
            conv: Vec::new(),
            diverged: 0,
            used: 0,
        })
        .collect();

    for i in 0..config.n_replicates {
        let rep_cfg = SimConfig {
            rng_seed: config.base_seed.wrapping_add(i as u64),
            ..scn.sim
        };
        let meas = sample_measurements(&truth, &rep_cfg)?;
        for acc in accs.iter_mut() {
            match scn.run_filter_on(acc.kind, &meas) {
                Ok(out) => {
                    let errs = errors_at_times(&out, &truth)?;
                    let mut sq = 0.0;
                    for (k, e) in errs.iter().enumerate() {
                        let est = truth_at[k] + e;
                        acc.sum[k] += est;
                        acc.sum_sq[k] += est.component_mul(&est);
                        sq += e.norm_squared();
                    }
                    acc.rmse.push((sq / (3.0 * n_times as f64)).sqrt());
                    acc.conv.push(convergence_time(&out, &truth, config.eps)?);
                    acc.used += 1;
                }
                Err(_) => acc.diverged += 1,
            }
        }
    }

    let filters = accs
        .into_iter()
        .map(|acc| {
            let n = acc.used.max(1) as f64;
            let mean: Vec<Vector3<f64>> = acc.sum.iter().map(|s| s / n).collect();
            let se: Vec<Vector3<f64>> = acc
                .sum_sq
                .iter()
                .zip(&mean)
                .map(|(sq, m)| {
                    if acc.used < 2 {
                        Vector3::zeros()
                    } else {
                        let var =
                            (sq / n - m.component_mul(m)) * (n / (n - 1.0));
                        var.map(|v| (v.max(0.0) / n).sqrt())
                    }
                })
                .collect();
            FilterStats {
                kind: acc.kind,
                mean,
                se,
                rmse: acc.rmse,
                conv_time: acc.conv,
                diverged: acc.diverged,
            }
        })
        .collect();

    Ok(McSummary { times, truth: truth_at, filters })
}

/// Fraction of (time, component) pairs after `burn_in` hours where the truth
/// lies inside the mean +/- 2 SE band.
pub fn band_coverage(summary: &McSummary, stats: &FilterStats, burn_in: f64) -> f64 {
    let t0 = summary.times.first().copied().unwrap_or(0.0);
    let mut total = 0usize;
    let mut inside = 0usize;
    for (k, &t) in summary.times.iter().enumerate() {
        if t - t0 < burn_in {
            continue;
        }
        for c in 0..3 {
            total += 1;
            let lo = stats.mean[k][c] - 2.0 * stats.se[k][c];
            let hi = stats.mean[k][c] + 2.0 * stats.se[k][c];
            if summary.truth[k][c] >= lo && summary.truth[k][c] <= hi {
                inside += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

/// Median of a sample; infinite entries sort last, NaN entries are rejected
/// by the caller's construction.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
