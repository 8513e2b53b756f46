//! Flat `key = value` configuration with `[section]` headers. Every key has
//! a default, so an empty file (or no file) is a valid configuration; parsing
//! is strict about unknown sections and keys and reports line numbers.

use std::fmt::Write as _;
use std::path::Path;

use biokf::bkf::OuPrior;
use biokf::defaults;
use biokf::model::{ModelParams, StateVec};
use biokf::montecarlo::{FilterKind, McConfig, Scenario};
use biokf::sim::SimConfig;
use nalgebra::Vector3;

use crate::error::{CliError, Result};

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [model]
    pub gamma: f64,
    pub alpha: f64,
    pub s_in: f64,
    pub d: f64,
    pub mu_max: f64,
    pub k_s: f64,
    // [sim]
    pub t0: f64,
    pub t_end: f64,
    pub dt_integ: f64,
    pub sample_interval: f64,
    pub meas_variance: f64,
    pub rng_seed: u64,
    pub x0: [f64; 3],
    // [filter]
    pub filter_dt: f64,
    pub x0_guess: [f64; 3],
    pub p0_diag: [f64; 3],
    pub sigma1_0: f64,
    pub beta: f64,
    pub theta: f64,
    pub kappa: f64,
    pub q_fallback: f64,
    pub ekf_q_diag: [f64; 3],
    // [tune]
    pub preliminary_seed: u64,
    pub max_evals: usize,
    pub tuned_nll_presmooth: Option<f64>,
    pub tuned_nll_bkf: Option<f64>,
    pub tuned_nll_ekf: Option<f64>,
    pub tuned_nll_ckf: Option<f64>,
    // [montecarlo]
    pub n_replicates: usize,
    pub base_seed: u64,
    pub filters: Vec<FilterKind>,
    pub eps: f64,
    // [paths]
    pub measurements: String,
    pub truth: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelParams::default();
        let sim = SimConfig::default();
        Self {
            gamma: model.gamma,
            alpha: model.alpha,
            s_in: model.s_in,
            d: model.d,
            mu_max: model.mu_max,
            k_s: model.k_s,
            t0: sim.t0,
            t_end: sim.t_end,
            dt_integ: sim.dt_integ,
            sample_interval: sim.sample_interval,
            meas_variance: sim.meas_variance,
            rng_seed: sim.rng_seed,
            x0: [0.0, 1.0, 0.0],
            filter_dt: 0.005,
            x0_guess: [0.5, 1.5, 0.0],
            p0_diag: [1.0, 1.0, sim.meas_variance],
            sigma1_0: 0.5,
            beta: defaults::BETA,
            theta: defaults::OU_THETA,
            kappa: defaults::OU_KAPPA,
            q_fallback: defaults::Q_FALLBACK,
            ekf_q_diag: defaults::EKF_Q,
            preliminary_seed: defaults::PRELIMINARY_SEED,
            max_evals: 2000,
            tuned_nll_presmooth: None,
            tuned_nll_bkf: None,
            tuned_nll_ekf: None,
            tuned_nll_ckf: None,
            n_replicates: 100,
            base_seed: 12345,
            filters: vec![FilterKind::Ckf, FilterKind::Bkf, FilterKind::Ekf],
            eps: 0.1,
            measurements: "measurements.csv".into(),
            truth: "truth.csv".into(),
        }
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64> {
    value.trim().parse().map_err(|_| {
        CliError::Config(format!("line {line}: key '{key}': expected a number, got '{value}'"))
    })
}

fn parse_u64(line: usize, key: &str, value: &str) -> Result<u64> {
    value.trim().parse().map_err(|_| {
        CliError::Config(format!("line {line}: key '{key}': expected an integer, got '{value}'"))
    })
}

fn parse_vec3(line: usize, key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "line {line}: key '{key}': expected three comma-separated numbers, got '{value}'"
        )));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_f64(line, key, part)?;
    }
    Ok(out)
}

fn parse_filters(line: usize, value: &str) -> Result<Vec<FilterKind>> {
    value
        .split(',')
        .map(|name| {
            name.trim().parse().map_err(|_| {
                CliError::Config(format!("line {line}: unknown filter '{}'", name.trim()))
            })
        })
        .collect()
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    CliError::Config(format!("line {line_no}: malformed section header '{raw}'"))
                })?;
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "model" | "sim" | "filter" | "tune" | "montecarlo" | "paths"
                ) {
                    return Err(CliError::Config(format!(
                        "line {line_no}: unknown section [{section}]"
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {line_no}: expected 'key = value', got '{raw}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(line_no, &section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config '{}': {e}", path.display()))
        })?;
        Self::parse_str(&text).map_err(|e| match e {
            CliError::Config(msg) => {
                CliError::Config(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    fn apply(&mut self, line: usize, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("model", "gamma") => self.gamma = parse_f64(line, key, value)?,
            ("model", "alpha") => self.alpha = parse_f64(line, key, value)?,
            ("model", "s_in") => self.s_in = parse_f64(line, key, value)?,
            ("model", "d") => self.d = parse_f64(line, key, value)?,
            ("model", "mu_max") => self.mu_max = parse_f64(line, key, value)?,
            ("model", "k_s") => self.k_s = parse_f64(line, key, value)?,
            ("sim", "t0") => self.t0 = parse_f64(line, key, value)?,
            ("sim", "t_end") => self.t_end = parse_f64(line, key, value)?,
            ("sim", "dt_integ") => self.dt_integ = parse_f64(line, key, value)?,
            ("sim", "sample_interval") => self.sample_interval = parse_f64(line, key, value)?,
            ("sim", "meas_variance") => self.meas_variance = parse_f64(line, key, value)?,
            ("sim", "rng_seed") => self.rng_seed = parse_u64(line, key, value)?,
            ("sim", "x0") => self.x0 = parse_vec3(line, key, value)?,
            ("filter", "dt") => self.filter_dt = parse_f64(line, key, value)?,
            ("filter", "x0_guess") => self.x0_guess = parse_vec3(line, key, value)?,
            ("filter", "p0_diag") => self.p0_diag = parse_vec3(line, key, value)?,
            ("filter", "sigma1_0") => self.sigma1_0 = parse_f64(line, key, value)?,
            ("filter", "beta") => self.beta = parse_f64(line, key, value)?,
            ("filter", "theta") => self.theta = parse_f64(line, key, value)?,
            ("filter", "kappa") => self.kappa = parse_f64(line, key, value)?,
            ("filter", "q_fallback") => self.q_fallback = parse_f64(line, key, value)?,
            ("filter", "ekf_q_diag") => self.ekf_q_diag = parse_vec3(line, key, value)?,
            ("tune", "preliminary_seed") => self.preliminary_seed = parse_u64(line, key, value)?,
            ("tune", "max_evals") => self.max_evals = parse_u64(line, key, value)? as usize,
            ("tune", "tuned_nll_presmooth") => {
                self.tuned_nll_presmooth = Some(parse_f64(line, key, value)?)
            }
            ("tune", "tuned_nll_bkf") => self.tuned_nll_bkf = Some(parse_f64(line, key, value)?),
            ("tune", "tuned_nll_ekf") => self.tuned_nll_ekf = Some(parse_f64(line, key, value)?),
            ("tune", "tuned_nll_ckf") => self.tuned_nll_ckf = Some(parse_f64(line, key, value)?),
            ("montecarlo", "n_replicates") => {
                self.n_replicates = parse_u64(line, key, value)? as usize
            }
            ("montecarlo", "base_seed") => self.base_seed = parse_u64(line, key, value)?,
            ("montecarlo", "filters") => self.filters = parse_filters(line, value)?,
            ("montecarlo", "eps") => self.eps = parse_f64(line, key, value)?,
            ("paths", "measurements") => self.measurements = value.to_string(),
            ("paths", "truth") => self.truth = value.to_string(),
            _ => {
                let place = if section.is_empty() {
                    "outside any section".to_string()
                } else {
                    format!("in section [{section}]")
                };
                return Err(CliError::Config(format!(
                    "line {line}: unknown key '{key}' {place}"
                )));
            }
        }
        Ok(())
    }

    /// Checks the numeric constraints of the underlying modules.
    pub fn validate(&self) -> Result<()> {
        self.model_params()?;
        self.sim_config()?;
        if !(self.filter_dt > 0.0) {
            return Err(CliError::Config(format!(
                "filter dt must be > 0, got {}",
                self.filter_dt
            )));
        }
        if self.filters.is_empty() {
            return Err(CliError::Config("the filter list is empty".into()));
        }
        OuPrior::new(self.theta, self.kappa).map_err(CliError::from)?;
        Ok(())
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.gamma, self.alpha, self.s_in, self.d, self.mu_max, self.k_s)
            .map_err(CliError::from)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(
            self.t0,
            self.t_end,
            self.dt_integ,
            self.sample_interval,
            StateVec::new(self.x0[0], self.x0[1], self.x0[2]),
            self.meas_variance,
            self.rng_seed,
        )
        .map_err(CliError::from)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario {
            params: self.model_params()?,
            sim: self.sim_config()?,
            x0_guess: StateVec::new(self.x0_guess[0], self.x0_guess[1], self.x0_guess[2]),
            p0_diag: Vector3::new(self.p0_diag[0], self.p0_diag[1], self.p0_diag[2]),
            sigma1_0: self.sigma1_0,
            beta: self.beta,
            q_fallback: self.q_fallback,
            ou: OuPrior::new(self.theta, self.kappa).map_err(CliError::from)?,
            ekf_q_diag: Vector3::new(self.ekf_q_diag[0], self.ekf_q_diag[1], self.ekf_q_diag[2]),
            filter_dt: self.filter_dt,
            assumed_meas_variance: None,
        })
    }

    pub fn mc_config(&self) -> Result<McConfig> {
        Ok(McConfig {
            n_replicates: self.n_replicates,
            base_seed: self.base_seed,
            filters: self.filters.clone(),
            scenario: self.scenario()?,
            eps: self.eps,
        })
    }

    /// Serializes the fully resolved configuration (the echo written next to
    /// every command's outputs).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let num = |v: f64| format!("{v:.16e}");
        let vec3 = |v: &[f64; 3]| format!("{}, {}, {}", num(v[0]), num(v[1]), num(v[2]));
        writeln!(s, "[model]").unwrap();
        writeln!(s, "gamma = {}", num(self.gamma)).unwrap();
        writeln!(s, "alpha = {}", num(self.alpha)).unwrap();
        writeln!(s, "s_in = {}", num(self.s_in)).unwrap();
        writeln!(s, "d = {}", num(self.d)).unwrap();
        writeln!(s, "mu_max = {}", num(self.mu_max)).unwrap();
        writeln!(s, "k_s = {}", num(self.k_s)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[sim]").unwrap();
        writeln!(s, "t0 = {}", num(self.t0)).unwrap();
        writeln!(s, "t_end = {}", num(self.t_end)).unwrap();
        writeln!(s, "dt_integ = {}", num(self.dt_integ)).unwrap();
        writeln!(s, "sample_interval = {}", num(self.sample_interval)).unwrap();
        writeln!(s, "meas_variance = {}", num(self.meas_variance)).unwrap();
        writeln!(s, "rng_seed = {}", self.rng_seed).unwrap();
        writeln!(s, "x0 = {}", vec3(&self.x0)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[filter]").unwrap();
        writeln!(s, "dt = {}", num(self.filter_dt)).unwrap();
        writeln!(s, "x0_guess = {}", vec3(&self.x0_guess)).unwrap();
        writeln!(s, "p0_diag = {}", vec3(&self.p0_diag)).unwrap();
        writeln!(s, "sigma1_0 = {}", num(self.sigma1_0)).unwrap();
        writeln!(s, "beta = {}", num(self.beta)).unwrap();
        writeln!(s, "theta = {}", num(self.theta)).unwrap();
        writeln!(s, "kappa = {}", num(self.kappa)).unwrap();
        writeln!(s, "q_fallback = {}", num(self.q_fallback)).unwrap();
        writeln!(s, "ekf_q_diag = {}", vec3(&self.ekf_q_diag)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[tune]").unwrap();
        writeln!(s, "preliminary_seed = {}", self.preliminary_seed).unwrap();
        writeln!(s, "max_evals = {}", self.max_evals).unwrap();
        for (key, value) in [
            ("tuned_nll_presmooth", self.tuned_nll_presmooth),
            ("tuned_nll_bkf", self.tuned_nll_bkf),
            ("tuned_nll_ekf", self.tuned_nll_ekf),
            ("tuned_nll_ckf", self.tuned_nll_ckf),
        ] {
            if let Some(v) = value {
                writeln!(s, "{key} = {}", num(v)).unwrap();
            }
        }
        writeln!(s).unwrap();
        writeln!(s, "[montecarlo]").unwrap();
        writeln!(s, "n_replicates = {}", self.n_replicates).unwrap();
        writeln!(s, "base_seed = {}", self.base_seed).unwrap();
        let filter_names: Vec<&str> = self.filters.iter().map(|f| f.name()).collect();
        writeln!(s, "filters = {}", filter_names.join(", ")).unwrap();
        writeln!(s, "eps = {}", num(self.eps)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[paths]").unwrap();
        writeln!(s, "measurements = {}", self.measurements).unwrap();
        writeln!(s, "truth = {}", self.truth).unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = RunConfig::parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trip_through_text() {
        let mut cfg = RunConfig::default();
        cfg.rng_seed = 9;
        cfg.beta = 0.0123;
        cfg.filters = vec![FilterKind::Bkf];
        cfg.tuned_nll_bkf = Some(-1234.5);
        let text = cfg.to_text();
        let parsed = RunConfig::parse_str(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let err = RunConfig::parse_str("[sim]\nnope = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("nope"), "{msg}");
    }

    #[test]
    fn unknown_section_rejected() {
        let err = RunConfig::parse_str("[nope]\n").unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse_str("# top\n\n[model]\ngamma = 2.0 # inline\n").unwrap();
        assert_eq!(cfg.gamma, 2.0);
    }

    #[test]
    fn constraint_violations_are_config_errors() {
        let err = RunConfig::parse_str("[model]\nalpha = 1.5\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = RunConfig::parse_str("[sim]\ndt_integ = 0.5\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn vec3_and_filter_lists_parse() {
        let cfg =
            RunConfig::parse_str("[sim]\nx0 = 1, 2, 3\n[montecarlo]\nfilters = ekf, ckf\n")
                .unwrap();
        assert_eq!(cfg.x0, [1.0, 2.0, 3.0]);
        assert_eq!(cfg.filters, vec![FilterKind::Ekf, FilterKind::Ckf]);
        assert!(RunConfig::parse_str("[sim]\nx0 = 1, 2\n").is_err());
        assert!(RunConfig::parse_str("[montecarlo]\nfilters = ukf\n").is_err());
    }
}
