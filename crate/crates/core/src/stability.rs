//! Linearization of the half-period map along a symmetric periodic solution.
//!
//! Over the guiding sensor indices `J` (size `N`), the derivative of the
//! half-period map is `A(s) = diag(1 - E) + S σᵀ` with
//! `E_j = 1 - e^{-λ_j s}`, `Q_j = 2e^{-λ_j s}/(1 + e^{-λ_j s})`,
//! `Q = m_0 K_0 + Σ_J m_j K_j Q_j`, `S_j = K_j Q_j / Q` and `σ_j = m_j E_j`.
//! The full period map has derivative `A²`, so `|μ| < 1` for every
//! eigenvalue `μ` of `A` is exponential stability.

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{self, advance_modes};
use crate::error::{Error, Result};
use crate::hysteresis::RelayOutput;
use crate::linalg::{self, Matrix};
use crate::periodic::PeriodicSolution;
use crate::spectral::SpectralSystem;

/// Default classification tolerance on `max |μ|` around 1.
pub const CLASSIFY_TOL: f64 = 1e-9;
/// Allowed relative disagreement between closed-form and simulated `Q`.
pub const Q_CONSISTENCY_TOL: f64 = 1e-8;
/// `|Q|` below this fraction of `Σ |terms|` is treated as zero.
const Q_DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QFunctions {
    /// `Q_j` over the sensor indices, in index order.
    pub q_j: Vec<f64>,
    pub q: f64,
    /// `|m_0 K_0| + Σ |m_j K_j Q_j|`, the magnitude scale of `Q`.
    pub scale: f64,
}

pub fn q_functions(system: &SpectralSystem, s: f64) -> QFunctions {
    let drift = system.drift();
    let mut q = drift;
    let mut scale = drift.abs();
    let q_j: Vec<f64> = system
        .sensor_indices()
        .iter()
        .map(|&j| {
            let e = (-system.lambda(j) * s).exp();
            let qj = 2.0 * e / (1.0 + e);
            let term = system.m(j) * system.k(j) * qj;
            q += term;
            scale += term.abs();
            qj
        })
        .collect();
    QFunctions { q_j, q, scale }
}

struct Parts {
    e: Vec<f64>,
    s_vec: Vec<f64>,
    sigma: Vec<f64>,
    q: f64,
}

fn parts(system: &SpectralSystem, s: f64) -> Result<Parts> {
    let qf = q_functions(system, s);
    if !(qf.q.abs() > Q_DEGENERATE * qf.scale) {
        return Err(Error::DegenerateLinearization { q: qf.q });
    }
    let sensors = system.sensor_indices();
    let e: Vec<f64> = sensors
        .iter()
        .map(|&j| -(-system.lambda(j) * s).exp_m1())
        .collect();
    let s_vec: Vec<f64> = sensors
        .iter()
        .zip(&qf.q_j)
        .map(|(&j, qj)| system.k(j) * qj / qf.q)
        .collect();
    let sigma: Vec<f64> = sensors
        .iter()
        .zip(&e)
        .map(|(&j, ej)| system.m(j) * ej)
        .collect();
    Ok(Parts {
        e,
        s_vec,
        sigma,
        q: qf.q,
    })
}

/// `A(s)`, an `N × N` matrix over the sensor indices.
pub fn matrix_a(system: &SpectralSystem, s: f64) -> Result<Matrix> {
    let p = parts(system, s)?;
    let n = p.e.len();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 1.0 - p.e[i] } else { 0.0 };
        diag + p.s_vec[i] * p.sigma[j]
    }))
}

/// `A(s) - I` formed entrywise, without the cancellation of `1 - 1`.
pub fn matrix_a_minus_identity(system: &SpectralSystem, s: f64) -> Result<Matrix> {
    let p = parts(system, s)?;
    let n = p.e.len();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let diag = if i == j { -p.e[i] } else { 0.0 };
        diag + p.s_vec[i] * p.sigma[j]
    }))
}

/// `dA/ds`, differentiating the entries termwise.
pub fn matrix_a_derivative(system: &SpectralSystem, s: f64) -> Result<Matrix> {
    let p = parts(system, s)?;
    let sensors = system.sensor_indices();
    let n = sensors.len();
    let mut de = Vec::with_capacity(n);
    let mut dq_j = Vec::with_capacity(n);
    let mut q_j = Vec::with_capacity(n);
    let mut dq = 0.0;
    for &j in sensors {
        let lambda = system.lambda(j);
        let e = (-lambda * s).exp();
        de.push(lambda * e);
        let d = -2.0 * lambda * e / ((1.0 + e) * (1.0 + e));
        dq_j.push(d);
        q_j.push(2.0 * e / (1.0 + e));
        dq += system.m(j) * system.k(j) * d;
    }
    let ds: Vec<f64> = (0..n)
        .map(|i| system.k(sensors[i]) * (dq_j[i] * p.q - q_j[i] * dq) / (p.q * p.q))
        .collect();
    let dsigma: Vec<f64> = (0..n).map(|i| system.m(sensors[i]) * de[i]).collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let diag = if i == j { -de[i] } else { 0.0 };
        diag + ds[i] * p.sigma[j] + p.s_vec[i] * dsigma[j]
    }))
}

/// Eigenvalues of `A`, decreasing in modulus.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    linalg::eigenvalues(a)
}

/// Relative residual of `Π(μ_i - 1) = (-1)^N (m_0 K_0 / Q) Π E_i`, with the
/// left side taken from the eigenvalues of `A - I`.
pub fn det_identity_check(system: &SpectralSystem, s: f64) -> Result<f64> {
    let p = parts(system, s)?;
    let am1 = matrix_a_minus_identity(system, s)?;
    let n = am1.rows();
    let lhs: Complex64 = linalg::eigenvalues(&am1)?.iter().product();
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let rhs = sign * system.drift() / p.q * p.e.iter().product::<f64>();
    let scale = lhs.norm().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).norm() / scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StabilityClass {
    Stable,
    Unstable,
    /// Unstable, with some eigenvalues strictly inside the unit circle.
    Saddle,
    /// `max |μ|` within the tolerance of 1.
    Marginal,
}

impl StabilityClass {
    pub fn name(self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::Saddle => "saddle",
            StabilityClass::Marginal => "marginal",
        }
    }

    /// Classification from eigenvalue moduli.
    pub fn from_moduli(moduli: &[f64], tol: f64) -> Self {
        let max = moduli.iter().copied().fold(0.0, f64::max);
        let min = moduli.iter().copied().fold(f64::INFINITY, f64::min);
        if max < 1.0 - tol {
            StabilityClass::Stable
        } else if max > 1.0 + tol {
            if min < 1.0 - tol {
                StabilityClass::Saddle
            } else {
                StabilityClass::Unstable
            }
        } else {
            StabilityClass::Marginal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub s: f64,
    pub q: f64,
    /// `Q` recovered from the rate of `v̂` at the simulated switching.
    pub q_simulated: f64,
    pub a: Matrix,
    pub mus: Vec<Complex64>,
    pub spectral_radius: f64,
    pub classification: StabilityClass,
    pub det_residual: f64,
    /// Largest relative eigenpair residual.
    pub eigen_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexRecord {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRecord {
    pub s: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub mus: Vec<ComplexRecord>,
    pub classification: &'static str,
    pub det_residual: f64,
}

impl StabilityReport {
    pub fn record(&self) -> StabilityRecord {
        StabilityRecord {
            s: self.s,
            q: self.q,
            a: self.a.as_slice().to_vec(),
            mus: self
                .mus
                .iter()
                .map(|z| ComplexRecord { re: z.re, im: z.im })
                .collect(),
            classification: self.classification.name(),
            det_residual: self.det_residual,
        }
    }
}

/// Classifies a valid periodic solution by the eigenvalues of `A(s)`.
pub fn classify(
    system: &SpectralSystem,
    sol: &PeriodicSolution,
    tol: f64,
) -> Result<StabilityReport> {
    if !sol.valid {
        return Err(Error::Config(format!(
            "solution at s = {} is not a valid periodic solution",
            sol.s
        )));
    }
    let qf = q_functions(system, sol.s);
    if !(qf.q > 0.0) {
        return Err(Error::DegenerateLinearization { q: qf.q });
    }
    let traj = dynamics::simulate(system, &sol.psi, sol.alpha, sol.beta, 1.5 * sol.s)?;
    let event = traj.events.first().ok_or_else(|| {
        Error::Consistency(format!(
            "no switching from psi within 1.5 s = {}",
            1.5 * sol.s
        ))
    })?;
    let q_simulated = event.rate;
    if !((q_simulated - qf.q).abs() <= Q_CONSISTENCY_TOL * qf.q.abs().max(1.0)) {
        return Err(Error::Consistency(format!(
            "Q = {} from the closed form but {} at the simulated switching",
            qf.q, q_simulated
        )));
    }
    let a = matrix_a(system, sol.s)?;
    let mus = linalg::eigenvalues(&a)?;
    let moduli: Vec<f64> = mus.iter().map(|z| z.norm()).collect();
    let classification = StabilityClass::from_moduli(&moduli, tol);
    let det_residual = if mus.is_empty() {
        0.0
    } else {
        det_identity_check(system, sol.s)?
    };
    let eigen_residual = mus
        .iter()
        .map(|&mu| linalg::eigen_residual(&a, mu))
        .fold(0.0, f64::max);
    Ok(StabilityReport {
        s: sol.s,
        q: qf.q,
        q_simulated,
        spectral_radius: moduli.first().copied().unwrap_or(0.0),
        a,
        mus,
        classification,
        det_residual,
        eigen_residual,
    })
}

/// `Q` recomputed as the rate of `v̂` after the exact `+1` flow from
/// `ψ(s)` over time `s`.
pub fn q_from_flow(system: &SpectralSystem, sol: &PeriodicSolution) -> f64 {
    let z = advance_modes(system, &sol.psi, RelayOutput::Plus, sol.s);
    dynamics::mean_rate(system, &z, RelayOutput::Plus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SmallSPrediction {
    PredictsStable,
    PredictsUnstable,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallSCriteria {
    pub prediction: SmallSPrediction,
    /// `Σ_J (M - m_j K_j) λ_j`.
    pub weighted_sum: f64,
    /// `weighted_sum / M`: `tr(A - I) = -L s + O(s²)`.
    pub l: f64,
    /// `(m_0 K_0 / M) Π_J λ_j`: `det(A - I) = J² s^N + O(s^{N+1})`.
    pub j2: f64,
    pub m_sum: f64,
    pub n_sensors: usize,
    /// `N` odd and the sum negative: an expanding eigenvalue together with
    /// a real one in `(0, 1)`.
    pub saddle_expected: bool,
}

/// Sign tests on `Σ_J (M - m_j K_j) λ_j` that decide stability for small
/// half-periods.
pub fn small_s_criteria(system: &SpectralSystem) -> SmallSCriteria {
    let m_sum = system.m_sum();
    let sensors = system.sensor_indices();
    let n = sensors.len();
    let weighted_sum: f64 = sensors
        .iter()
        .map(|&j| (m_sum - system.m(j) * system.k(j)) * system.lambda(j))
        .sum();
    let lambda_prod: f64 = sensors.iter().map(|&j| system.lambda(j)).product();
    let (l, j2) = if m_sum != 0.0 {
        (weighted_sum / m_sum, system.drift() / m_sum * lambda_prod)
    } else {
        (f64::NAN, f64::NAN)
    };
    let prediction = if n <= 1 {
        SmallSPrediction::PredictsStable
    } else if !(m_sum > 0.0) || weighted_sum == 0.0 {
        SmallSPrediction::Indeterminate
    } else if weighted_sum < 0.0 {
        SmallSPrediction::PredictsUnstable
    } else if n == 2 {
        SmallSPrediction::PredictsStable
    } else {
        SmallSPrediction::Indeterminate
    };
    SmallSCriteria {
        prediction,
        weighted_sum,
        l,
        j2,
        m_sum,
        n_sensors: n,
        saddle_expected: n >= 3 && n % 2 == 1 && m_sum > 0.0 && weighted_sum < 0.0,
    }
}
