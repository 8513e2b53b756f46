//! The four subcommands. Every command writes the fully resolved
//! configuration next to its outputs, so any result directory is
//! reproducible on its own.

use std::path::{Path, PathBuf};

use biokf::ckf::{self, DetectorState};
use biokf::model::{equilibria, StateVec};
use biokf::montecarlo::{band_coverage, median, run_mc, FilterKind};
use biokf::sim::{integrate, sample_measurements, MeasurementSeries};
use biokf::tuning;
use biokf::hybridkf::FilterOutput;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{self, fmt_num, CsvWriter};

pub const CONFIG_ECHO: &str = "config_resolved.cfg";

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| {
        CliError::Config(format!("cannot create output directory '{}': {e}", out.display()))
    })
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::write(out.join(CONFIG_ECHO), cfg.to_text())?;
    Ok(())
}

/// Simulates the ground truth and the noisy measurement series.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let params = cfg.model_params()?;
    let sim = cfg.sim_config()?;
    let traj = integrate(&params, &sim)?;
    let meas = sample_measurements(&traj, &sim)?;
    io::write_trajectory(&out.join(&cfg.truth), &traj)?;
    io::write_measurements(&out.join(&cfg.measurements), &meas)?;
    echo_config(cfg, out)?;
    println!(
        "simulate: {} truth rows, {} measurement rows -> {}",
        traj.times.len(),
        meas.len(),
        out.display()
    );
    Ok(())
}

/// Valid targets of `tune`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneTarget {
    Presmooth,
    Bkf,
    Ekf,
    Ckf,
}

impl std::str::FromStr for TuneTarget {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "presmooth" => Ok(TuneTarget::Presmooth),
            "bkf" => Ok(TuneTarget::Bkf),
            "ekf" => Ok(TuneTarget::Ekf),
            "ckf" => Ok(TuneTarget::Ckf),
            other => Err(CliError::Config(format!(
                "unknown tune target '{other}' (expected presmooth, bkf, ekf, or ckf)"
            ))),
        }
    }
}

/// Tunes one hyperparameter group on preliminary data generated with the
/// configured preliminary seed, writes the tuned values into the echoed
/// configuration, and returns the updated configuration.
pub fn cmd_tune(cfg: &RunConfig, target: TuneTarget, out: &Path) -> Result<RunConfig> {
    ensure_out_dir(out)?;
    let params = cfg.model_params()?;
    let mut prelim_sim = cfg.sim_config()?;
    prelim_sim.rng_seed = cfg.preliminary_seed;
    let traj = integrate(&params, &prelim_sim)?;
    let meas = sample_measurements(&traj, &prelim_sim)?;
    let x0_guess = StateVec::new(cfg.x0_guess[0], cfg.x0_guess[1], cfg.x0_guess[2]);
    let p0 = nalgebra::Vector3::new(cfg.p0_diag[0], cfg.p0_diag[1], cfg.p0_diag[2]);

    let mut updated = cfg.clone();
    let result = match target {
        TuneTarget::Presmooth => {
            let r = tuning::tune_presmoother(&meas, cfg.beta.max(1e-6));
            updated.beta = r.theta[0];
            updated.tuned_nll_presmooth = Some(r.nll);
            println!("tune presmooth: beta = {}", fmt_num(r.theta[0]));
            r
        }
        TuneTarget::Bkf => {
            let r = tuning::tune_ou_prior(
                &params,
                &x0_guess,
                &p0,
                cfg.filter_dt,
                &meas,
                &[cfg.theta.max(1e-6), cfg.kappa.max(1e-6)],
            );
            updated.theta = r.theta[0];
            updated.kappa = r.theta[1];
            updated.tuned_nll_bkf = Some(r.nll);
            println!(
                "tune bkf: theta = {}, kappa = {}",
                fmt_num(r.theta[0]),
                fmt_num(r.theta[1])
            );
            r
        }
        TuneTarget::Ekf => {
            let q0 = [
                cfg.ekf_q_diag[0].max(1e-6),
                cfg.ekf_q_diag[1].max(1e-6),
                cfg.ekf_q_diag[2].max(1e-6),
            ];
            let r = tuning::tune_ekf_q(&params, &x0_guess, &p0, cfg.filter_dt, &meas, &q0)?;
            updated.ekf_q_diag = [r.theta[0], r.theta[1], r.theta[2]];
            updated.tuned_nll_ekf = Some(r.nll);
            println!(
                "tune ekf: q_diag = {}, {}, {}",
                fmt_num(r.theta[0]),
                fmt_num(r.theta[1]),
                fmt_num(r.theta[2])
            );
            r
        }
        TuneTarget::Ckf => {
            let r = tuning::tune_ckf_q_fallback(
                &params,
                &x0_guess,
                &p0,
                cfg.sigma1_0,
                cfg.beta,
                cfg.filter_dt,
                &meas,
                cfg.q_fallback.max(1e-6),
            )?;
            updated.q_fallback = r.theta[0];
            updated.tuned_nll_ckf = Some(r.nll);
            println!("tune ckf: q_fallback = {}", fmt_num(r.theta[0]));
            r
        }
    };
    if !result.converged {
        eprintln!(
            "warning: optimizer budget exhausted after {} evaluations; best value so far written",
            result.evals
        );
    }
    println!("tune: final negative log-likelihood = {}", fmt_num(result.nll));
    echo_config(&updated, out)?;
    Ok(updated)
}

fn estimate_csv_path(out: &Path, filter: FilterKind) -> PathBuf {
    out.join(format!("estimates_{}.csv", filter.name()))
}

/// Runs one filter over the measurement CSV in the output directory and
/// writes the per-sample estimate table.
pub fn cmd_run(cfg: &RunConfig, filter: FilterKind, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let meas = io::read_measurements(&out.join(&cfg.measurements), cfg.meas_variance)?;
    if meas.is_empty() {
        return Err(CliError::Config("the measurement series is empty".into()));
    }
    let scenario = cfg.scenario()?;
    let path = estimate_csv_path(out, filter);
    echo_config(cfg, out)?;

    match filter {
        FilterKind::Ckf => {
            let params = scenario.params;
            let det = DetectorState::new(cfg.sigma1_0, meas.times[0], params)
                .map_err(CliError::from)?;
            let q = ckf::q_schedule(&params, &equilibria(&params), &meas, cfg.q_fallback);
            let init = ckf::initial_belief(&scenario.x0_guess.as_vector(), &scenario.p0_diag);
            let mut w = CsvWriter::create(
                &path,
                &[
                    "time", "y", "s_hat", "e_hat", "f_hat", "p_s", "p_e", "p_f", "sigma1_hat",
                    "y_smooth", "s_sigma", "mu_hat",
                ],
            )?;
            let run = ckf::run_ckf(&params, &meas, &init, &det, cfg.beta, &q, cfg.filter_dt)?;
            for (k, pre) in run.pre.iter().enumerate() {
                let b = &run.output.filtered[k];
                w.row(&[
                    fmt_num(meas.times[k]),
                    fmt_num(meas.values[k]),
                    fmt_num(b.mean[0]),
                    fmt_num(b.mean[1]),
                    fmt_num(b.mean[2]),
                    fmt_num(b.cov[(0, 0)]),
                    fmt_num(b.cov[(1, 1)]),
                    fmt_num(b.cov[(2, 2)]),
                    fmt_num(pre.sigma1),
                    fmt_num(pre.y_smooth),
                    fmt_num(pre.s_sigma),
                    fmt_num(pre.mu_hat),
                ])?;
            }
            w.finish()?;
        }
        FilterKind::Bkf => {
            let out_filter = scenario.run_filter_on(FilterKind::Bkf, &meas)?;
            let mut w = CsvWriter::create(
                &path,
                &[
                    "time", "y", "s_hat", "e_hat", "f_hat", "r_hat", "p_s", "p_e", "p_f", "p_r",
                ],
            )?;
            write_filter_rows(&mut w, &meas, &out_filter, true)?;
            w.finish()?;
        }
        FilterKind::Ekf => {
            let out_filter = scenario.run_filter_on(FilterKind::Ekf, &meas)?;
            let mut w = CsvWriter::create(
                &path,
                &["time", "y", "s_hat", "e_hat", "f_hat", "p_s", "p_e", "p_f"],
            )?;
            write_filter_rows(&mut w, &meas, &out_filter, false)?;
            w.finish()?;
        }
    }
    println!("run {}: {} rows -> {}", filter.name(), meas.len(), path.display());
    Ok(())
}

fn write_filter_rows(
    w: &mut CsvWriter,
    meas: &MeasurementSeries,
    out: &FilterOutput,
    with_rate: bool,
) -> Result<()> {
    for k in 0..meas.len() {
        let b = &out.filtered[k];
        let mut row = vec![
            fmt_num(meas.times[k]),
            fmt_num(meas.values[k]),
            fmt_num(b.mean[0]),
            fmt_num(b.mean[1]),
            fmt_num(b.mean[2]),
        ];
        if with_rate {
            row.push(fmt_num(b.mean[3]));
        }
        row.push(fmt_num(b.cov[(0, 0)]));
        row.push(fmt_num(b.cov[(1, 1)]));
        row.push(fmt_num(b.cov[(2, 2)]));
        if with_rate {
            row.push(fmt_num(b.cov[(3, 3)]));
        }
        w.row(&row)?;
    }
    Ok(())
}

/// Runs the Monte Carlo study and writes the summary and metrics tables.
pub fn cmd_montecarlo(cfg: &RunConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let mc = cfg.mc_config()?;
    let summary = run_mc(&mc)?;
    echo_config(cfg, out)?;

    let summary_path = out.join("mc_summary.csv");
    let mut w = CsvWriter::create(
        &summary_path,
        &["time", "filter", "component", "mean", "se", "band_lo", "band_hi"],
    )?;
    let components = ["s", "e", "f"];
    for stats in &summary.filters {
        for (k, &t) in summary.times.iter().enumerate() {
            for (c, name) in components.iter().enumerate() {
                let mean = stats.mean[k][c];
                let se = stats.se[k][c];
                w.row(&[
                    fmt_num(t),
                    stats.kind.name().to_string(),
                    name.to_string(),
                    fmt_num(mean),
                    fmt_num(se),
                    fmt_num(mean - 2.0 * se),
                    fmt_num(mean + 2.0 * se),
                ])?;
            }
        }
    }
    w.finish()?;

    let metrics_path = out.join("mc_metrics.csv");
    let mut w = CsvWriter::create(&metrics_path, &["filter", "replicate", "rmse", "t_eps"])?;
    for stats in &summary.filters {
        for (i, (rmse, t_eps)) in stats.rmse.iter().zip(&stats.conv_time).enumerate() {
            w.row(&[
                stats.kind.name().to_string(),
                i.to_string(),
                fmt_num(*rmse),
                fmt_num(*t_eps),
            ])?;
        }
    }
    w.finish()?;

    for stats in &summary.filters {
        if stats.conv_time.is_empty() {
            println!(
                "montecarlo {}: every replicate diverged ({} of {})",
                stats.kind, stats.diverged, cfg.n_replicates
            );
            continue;
        }
        println!(
            "montecarlo {}: median convergence {} h, band coverage {:.3}, {} of {} replicates diverged",
            stats.kind,
            fmt_num(median(&stats.conv_time)),
            band_coverage(&summary, stats, 12.0),
            stats.diverged,
            cfg.n_replicates,
        );
    }
    println!(
        "montecarlo: wrote {} and {}",
        summary_path.display(),
        metrics_path.display()
    );
    Ok(())
}

