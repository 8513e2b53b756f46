//! Growth model of a constant-volume stirred-tank bioreactor in which a
//! microbial species consumes substrate and diverts a fixed fraction of its
//! uptake into a fluorescent reporter protein.
//!
//! State is the concentration triple (s, e, f): substrate, biomass, and
//! fluorescent protein, all in g/L. Kinetics follow the Monod law. The
//! stoichiometry admits two conserved linear combinations of the state whose
//! dynamics are autonomous and linear; these are the backbone of the
//! conservation-based estimator in [`crate::ckf`].

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Biological and reactor constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Growth yield (g biomass per g substrate).
    pub gamma: f64,
    /// Fraction of substrate uptake dedicated to reporter synthesis, in (0, 1).
    pub alpha: f64,
    /// Inflow substrate concentration (g/L).
    pub s_in: f64,
    /// Dilution rate (1/h).
    pub d: f64,
    /// Maximal specific growth rate (1/h).
    pub mu_max: f64,
    /// Half-saturation constant (g/L).
    pub k_s: f64,
}

impl ModelParams {
    pub fn new(gamma: f64, alpha: f64, s_in: f64, d: f64, mu_max: f64, k_s: f64) -> Result<Self> {
        let p = Self { gamma, alpha, s_in, d, mu_max, k_s };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("s_in", self.s_in),
            ("d", self.d),
            ("mu_max", self.mu_max),
            ("k_s", self.k_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Stoichiometric direction of the single reaction: growth consumes
    /// substrate at rate 1/gamma and splits biomass production between
    /// replication (1 - alpha) and reporter synthesis (alpha).
    pub fn stoichiometry(&self) -> Vector3<f64> {
        Vector3::new(-1.0 / self.gamma, 1.0 - self.alpha, self.alpha)
    }

    /// Reactor feed concentrations (substrate only).
    pub fn inflow(&self) -> Vector3<f64> {
        Vector3::new(self.s_in, 0.0, 0.0)
    }
}

impl Default for ModelParams {
    /// Reference configuration used throughout the test scenarios: yield 1,
    /// reporter fraction 0.3, feed 2 g/L, dilution 0.48/h, doubling time 1 h,
    /// half-saturation 0.2 g/L.
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: 0.3,
            s_in: 2.0,
            d: 0.48,
            mu_max: std::f64::consts::LN_2,
            k_s: 0.2,
        }
    }
}

/// Concentration state (substrate, biomass, fluorescent protein), g/L.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVec {
    pub s: f64,
    pub e: f64,
    pub f: f64,
}

impl StateVec {
    pub fn new(s: f64, e: f64, f: f64) -> Self {
        Self { s, e, f }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.s, self.e, self.f)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { s: v[0], e: v[1], f: v[2] }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.e.is_finite() && self.f.is_finite()
    }
}

/// Basis of the conserved linear combinations, as a 2x3 matrix annihilating
/// the stoichiometric direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationMatrix {
    pub pi: Matrix2x3<f64>,
}

impl ConservationMatrix {
    /// Applies the conservation projection to a state.
    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        self.pi * x
    }
}

/// Steady states of the model. The washout point always exists; the interior
/// point exists only when dilution is slow enough for growth to keep up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibria {
    pub washout: StateVec,
    pub interior: Option<StateVec>,
    /// Substrate level of the interior equilibrium, when present.
    pub s_star: Option<f64>,
}

/// Monod growth rate mu_max * s / (k_s + s), 1/h.
pub fn monod(s: f64, params: &ModelParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("monod requires s >= 0, got {s}")));
    }
    Ok(params.mu_max * s / (params.k_s + s))
}

/// Inverse of the Monod law on [0, mu_max).
pub fn monod_inverse(mu: f64, params: &ModelParams) -> Result<f64> {
    if !(mu >= 0.0 && mu < params.mu_max) {
        return Err(Error::Domain(format!(
            "monod_inverse requires 0 <= mu < mu_max = {}, got {mu}",
            params.mu_max
        )));
    }
    Ok(params.k_s * mu / (params.mu_max - mu))
}

/// Derivative of the Monod law, mu_max * k_s / (k_s + s)^2.
pub fn monod_derivative(s: f64, params: &ModelParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("monod_derivative requires s >= 0, got {s}")));
    }
    let denom = params.k_s + s;
    Ok(params.mu_max * params.k_s / (denom * denom))
}

/// Right-hand side of the growth dynamics (g/L/h).
pub fn vector_field(x: &StateVec, params: &ModelParams) -> Result<StateVec> {
    let mu = monod(x.s, params)?;
    let growth = mu * x.e;
    Ok(StateVec {
        s: -growth / params.gamma + params.d * (params.s_in - x.s),
        e: (1.0 - params.alpha) * growth - params.d * x.e,
        f: params.alpha * growth - params.d * x.f,
    })
}

/// The fixed conservation basis: sigma_1 = s + f/(alpha*gamma) and
/// sigma_2 = e - (1-alpha)/alpha * f. The first row is the one exploited by
/// the conservation filter, so this basis is not configurable.
pub fn conservation_matrix(params: &ModelParams) -> ConservationMatrix {
    let pi = Matrix2x3::new(
        1.0,
        0.0,
        1.0 / (params.alpha * params.gamma),
        0.0,
        1.0,
        -(1.0 - params.alpha) / params.alpha,
    );
    ConservationMatrix { pi }
}

/// Computes both equilibria. The interior point exists iff
/// d / (1 - alpha) < monod(s_in); the comparison is strict with no tolerance
/// band, so borderline parameter sets report it as absent.
pub fn equilibria(params: &ModelParams) -> Equilibria {
    let washout = StateVec::new(params.s_in, 0.0, 0.0);
    let mu_star = params.d / (1.0 - params.alpha);
    let mu_at_inflow =
        monod(params.s_in, params).expect("s_in > 0 is enforced by ModelParams");
    if mu_star < mu_at_inflow {
        let s_star = monod_inverse(mu_star, params)
            .expect("mu_star < monod(s_in) < mu_max on this branch");
        let excess = params.s_in - s_star;
        let interior = StateVec::new(
            s_star,
            params.gamma * (1.0 - params.alpha) * excess,
            params.gamma * params.alpha * excess,
        );
        Equilibria { washout, interior: Some(interior), s_star: Some(s_star) }
    } else {
        Equilibria { washout, interior: None, s_star: None }
    }
}

/// Jacobian of [`vector_field`] with respect to the state.
pub fn jacobian(x: &StateVec, params: &ModelParams) -> Result<Matrix3<f64>> {
    let mu = monod(x.s, params)?;
    let dmu = monod_derivative(x.s, params)?;
    let a = params.alpha;
    let g = params.gamma;
    let d = params.d;
    Ok(Matrix3::new(
        -dmu * x.e / g - d,
        -mu / g,
        0.0,
        (1.0 - a) * dmu * x.e,
        (1.0 - a) * mu - d,
        0.0,
        a * dmu * x.e,
        a * mu,
        -d,
    ))
}
