//! Discrete-time companions of the hybrid filter: exact discretization of a
//! frozen (time-invariant) system, eigenvalue computation for the spectral
//! detectability and stabilizability checks, and the steady-state filter
//! gain from the discrete algebraic Riccati fixed point.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix exponential (Pade scaling-and-squaring).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().exp()
}

/// Exact discretization of the frozen system dx/dt = A x + b + (noise of
/// intensity Q_c) over a step `dt`:
///
/// * `F = exp(A dt)`,
/// * `b_k = integral of exp(A (dt - tau)) b dtau` (computed through the
///   exponential of the augmented matrix `[[A, b], [0, 0]]`, which also
///   covers singular `A`),
/// * `Q_d = Q_c dt`, the covariance of the integrated noise increment.
pub fn discrete_transition(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q_c: &DMatrix<f64>,
    dt: f64,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.len(), n);

    let f = expm(&(a * dt));

    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(b);
    let e = expm(&(aug * dt));
    let b_k = DVector::from_iterator(n, (0..n).map(|i| e[(i, n)]));

    (f, b_k, q_c * dt)
}

/// Eigenvalues of a small square matrix, sorted by decreasing modulus.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    assert_eq!(m.nrows(), m.ncols(), "spectrum requires a square matrix");
    let mut eig: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    eig
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    spectrum(m).first().map_or(0.0, |l| l.norm())
}

/// Steady-state prediction covariance and gain of the discrete filter
/// x_{k+1} = F x_k + w, y_k = C x_k + v, by fixed-point iteration of the
/// Riccati recursion until the relative change drops below 1e-12.
pub fn steady_state_gain(
    f: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q_d: &DMatrix<f64>,
    r: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = f.nrows();
    if c.nrows() != 1 || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C must be 1x{n}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    const MAX_ITERS: usize = 100_000;
    let mut p = q_d.clone();
    for _ in 0..MAX_ITERS {
        let pct = &p * c.transpose();
        let s = (c * &pct)[(0, 0)] + r;
        if !(s > 0.0) {
            return Err(Error::SingularInnovation { s });
        }
        let updated = &p - (&pct / s) * pct.transpose();
        let mut next = f * updated * f.transpose() + q_d;
        next = 0.5 * (&next + next.transpose());
        let change = (&next - &p).abs().max();
        let scale = p.abs().max().max(1e-300);
        p = next;
        if change <= 1e-12 * scale.max(1.0) {
            let pct = &p * c.transpose();
            let s = (c * &pct)[(0, 0)] + r;
            let k = (f * &pct / s).column(0).into_owned();
            return Ok((p, k));
        }
    }
    Err(Error::RiccatiDiverged { iters: MAX_ITERS })
}
