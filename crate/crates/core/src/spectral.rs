//! Truncated spectral form of the controlled heat equation.
//!
//! A system is the list of Laplacian eigenvalues `λ_j` together with the
//! sensor coefficients `m_j` and the actuator coefficients `K_j`. Mode 0 is
//! the constant mode (`λ_0 = 0`). Modes with `m_j != 0` (plus mode 0) form the
//! guiding subsystem that alone decides the relay switchings; the rest are
//! guided and only follow.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSystem {
    lambdas: Vec<f64>,
    m: Vec<f64>,
    k: Vec<f64>,
    /// `{0} ∪ J`, ascending.
    guiding: Vec<usize>,
    /// `J`, ascending (guiding without the constant mode).
    sensors: Vec<usize>,
    /// `J_0`, ascending.
    guided: Vec<usize>,
}

impl SpectralSystem {
    /// Builds a system from explicit coefficient lists.
    ///
    /// Only structural problems (empty or ragged lists) are rejected here;
    /// the modelling assumptions are checked by [`validate`].
    pub fn new(lambdas: Vec<f64>, m: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Config("system needs at least one mode".into()));
        }
        if m.len() != lambdas.len() || k.len() != lambdas.len() {
            return Err(Error::Config(format!(
                "coefficient lengths differ: lambdas {}, m {}, k {}",
                lambdas.len(),
                m.len(),
                k.len()
            )));
        }
        let sensors: Vec<usize> = (1..m.len()).filter(|&j| m[j] != 0.0).collect();
        let guided: Vec<usize> = (1..m.len()).filter(|&j| m[j] == 0.0).collect();
        let mut guiding = Vec::with_capacity(sensors.len() + 1);
        guiding.push(0);
        guiding.extend_from_slice(&sensors);
        Ok(Self {
            lambdas,
            m,
            k,
            guiding,
            sensors,
            guided,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn m_coeffs(&self) -> &[f64] {
        &self.m
    }

    pub fn k_coeffs(&self) -> &[f64] {
        &self.k
    }

    pub fn lambda(&self, j: usize) -> f64 {
        self.lambdas[j]
    }

    pub fn m(&self, j: usize) -> f64 {
        self.m[j]
    }

    pub fn k(&self, j: usize) -> f64 {
        self.k[j]
    }

    /// `{0} ∪ J`.
    pub fn guiding_indices(&self) -> &[usize] {
        &self.guiding
    }

    /// `J = { j ≥ 1 : m_j ≠ 0 }`.
    pub fn sensor_indices(&self) -> &[usize] {
        &self.sensors
    }

    /// `J_0 = { j ≥ 1 : m_j = 0 }`.
    pub fn guided_indices(&self) -> &[usize] {
        &self.guided
    }

    /// `m_0 K_0`, the drift of the mean temperature carried by mode 0.
    pub fn drift(&self) -> f64 {
        self.m[0] * self.k[0]
    }

    /// `M = Σ m_j K_j`.
    pub fn m_sum(&self) -> f64 {
        self.guiding.iter().map(|&j| self.m[j] * self.k[j]).sum()
    }

    /// Smallest guided eigenvalue, `+∞` when there are no guided modes.
    pub fn kappa(&self) -> f64 {
        self.guided
            .iter()
            .map(|&j| self.lambdas[j])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue among the guiding modes (0 if only mode 0).
    pub fn guiding_lambda_max(&self) -> f64 {
        self.sensors
            .iter()
            .map(|&j| self.lambdas[j])
            .fold(0.0, f64::max)
    }

    /// Same system with every sensor coefficient multiplied by `c`.
    pub fn with_scaled_sensors(&self, c: f64) -> Result<Self> {
        Self::new(
            self.lambdas.clone(),
            self.m.iter().map(|m| m * c).collect(),
            self.k.clone(),
        )
    }

    /// Keeps the first `n_modes` modes.
    pub fn truncated(&self, n_modes: usize) -> Result<Self> {
        let n = n_modes.min(self.n_modes());
        Self::new(
            self.lambdas[..n].to_vec(),
            self.m[..n].to_vec(),
            self.k[..n].to_vec(),
        )
    }
}

/// Heated rod on `(0, π)`: insulated at `x = 0`, actuator at `x = π`.
///
/// `λ_j = j²`, `K_0 = 1/√π`, `K_j = (-1)^j √(2/π)`. Sensor coefficients not
/// listed in `m_overrides` are zero.
pub fn build_rod_model(
    n_modes: usize,
    m_overrides: &BTreeMap<usize, f64>,
) -> Result<SpectralSystem> {
    if n_modes == 0 {
        return Err(Error::Config("n_modes must be at least 1".into()));
    }
    if let Some((&j, _)) = m_overrides.iter().find(|(&j, _)| j >= n_modes) {
        return Err(Error::Config(format!(
            "sensor index {j} outside truncation of {n_modes} modes"
        )));
    }
    match m_overrides.get(&0) {
        Some(&m0) if m0 > 0.0 => {}
        Some(&m0) => return Err(Error::Config(format!("m0 must be positive, got {m0}"))),
        None => return Err(Error::Config("m0 must be given".into())),
    }
    let k_const = 1.0 / PI.sqrt();
    let k_osc = (2.0 / PI).sqrt();
    let lambdas = (0..n_modes).map(|j| (j * j) as f64).collect();
    let k = (0..n_modes)
        .map(|j| match j {
            0 => k_const,
            j if j % 2 == 0 => k_osc,
            _ => -k_osc,
        })
        .collect();
    let m = (0..n_modes)
        .map(|j| m_overrides.get(&j).copied().unwrap_or(0.0))
        .collect();
    SpectralSystem::new(lambdas, m, k)
}

/// Convenience for the common rod setting `m = (m0, m1, m2, 0, ...)`.
pub fn rod(n_modes: usize, sensors: &[(usize, f64)]) -> Result<SpectralSystem> {
    build_rod_model(n_modes, &sensors.iter().copied().collect())
}

/// Names of modelling assumptions that a system may violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    NonFinite,
    Lambda0Nonzero,
    LambdaNonpositive,
    LambdaDecreasing,
    M0Nonpositive,
    K0Nonpositive,
}

impl Violation {
    pub fn name(self) -> &'static str {
        match self {
            Violation::NonFinite => "non_finite",
            Violation::Lambda0Nonzero => "lambda0_nonzero",
            Violation::LambdaNonpositive => "lambda_nonpositive",
            Violation::LambdaDecreasing => "lambda_decreasing",
            Violation::M0Nonpositive => "m0_nonpositive",
            Violation::K0Nonpositive => "k0_nonpositive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// `M = Σ m_j K_j`.
    pub m_sum: f64,
    /// `min λ_j` over guided modes; `+∞` when there are none.
    pub kappa: f64,
    /// `Σ (1 + λ_j) m_j²`.
    pub sensor_weight: f64,
    /// `Σ_{j≥1} (K_j²/λ_j² + K_j²/λ_j)`.
    pub actuator_weight: f64,
    pub n_modes: usize,
}

/// Checks the modelling assumptions. Never fails; every problem is listed.
pub fn validate(system: &SpectralSystem) -> ValidationReport {
    let mut violations = Vec::new();
    let lam = system.lambdas();
    let all_finite = lam
        .iter()
        .chain(system.m_coeffs())
        .chain(system.k_coeffs())
        .all(|x| x.is_finite());
    if !all_finite {
        violations.push(Violation::NonFinite);
    }
    if lam[0] != 0.0 {
        violations.push(Violation::Lambda0Nonzero);
    }
    if lam.iter().skip(1).any(|&l| !(l > 0.0)) {
        violations.push(Violation::LambdaNonpositive);
    }
    if lam.windows(2).any(|w| w[1] < w[0]) {
        violations.push(Violation::LambdaDecreasing);
    }
    if !(system.m(0) > 0.0) {
        violations.push(Violation::M0Nonpositive);
    }
    if !(system.k(0) > 0.0) {
        violations.push(Violation::K0Nonpositive);
    }

    let sensor_weight = (0..system.n_modes())
        .map(|j| (1.0 + lam[j]) * system.m(j).powi(2))
        .sum();
    let actuator_weight: f64 = (1..system.n_modes())
        .map(|j| {
            let k2 = system.k(j).powi(2);
            k2 / lam[j].powi(2) + k2 / lam[j]
        })
        .sum();
    if !violations.contains(&Violation::NonFinite)
        && !(f64::is_finite(sensor_weight) && actuator_weight.is_finite())
    {
        violations.push(Violation::NonFinite);
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
        m_sum: system.m_sum(),
        kappa: system.kappa(),
        sensor_weight,
        actuator_weight,
        n_modes: system.n_modes(),
    }
}

/// JSON system descriptor: either explicit coefficient lists or the rod
/// builder shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SystemDescriptor {
    Rod {
        rod: RodDescriptor,
    },
    Explicit {
        lambdas: Vec<f64>,
        m: Vec<f64>,
        k: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodDescriptor {
    pub n_modes: usize,
    /// Sensor coefficients keyed by mode index (as strings in JSON).
    pub m: BTreeMap<String, f64>,
}

impl SystemDescriptor {
    pub fn build(&self) -> Result<SpectralSystem> {
        match self {
            SystemDescriptor::Explicit { lambdas, m, k } => {
                SpectralSystem::new(lambdas.clone(), m.clone(), k.clone())
            }
            SystemDescriptor::Rod { rod } => {
                let mut overrides = BTreeMap::new();
                for (key, &value) in &rod.m {
                    let j: usize = key.trim().parse().map_err(|_| {
                        Error::Config(format!("rod.m key {key:?} is not a mode index"))
                    })?;
                    overrides.insert(j, value);
                }
                build_rod_model(rod.n_modes, &overrides)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_rod(n: usize) -> SpectralSystem {
        rod(n, &[(0, 2.0), (1, 4.0), (2, 4.0)]).unwrap()
    }

    #[test]
    fn rod_coefficients() {
        let sys = reference_rod(5);
        assert_eq!(sys.lambdas(), &[0.0, 1.0, 4.0, 9.0, 16.0]);
        let c = (2.0 / PI).sqrt();
        assert!((sys.k(1) + 0.7978845608028654).abs() < 1e-15);
        assert_eq!(sys.k(1), -c);
        assert_eq!(sys.k(2), c);
        assert_eq!(sys.k(0), 1.0 / PI.sqrt());
        assert_eq!(sys.guiding_indices(), &[0, 1, 2]);
        assert_eq!(sys.sensor_indices(), &[1, 2]);
        assert_eq!(sys.guided_indices(), &[3, 4]);
    }

    #[test]
    fn single_mode_rod() {
        let sys = rod(1, &[(0, 1.0)]).unwrap();
        assert!(sys.sensor_indices().is_empty());
        assert!(sys.guided_indices().is_empty());
        assert_eq!(sys.kappa(), f64::INFINITY);
        assert!(validate(&sys).ok);
    }

    #[test]
    fn m_sum_of_reference_rod() {
        // 2/√π + 4·(−√(2/π)) + 4·√(2/π); the oscillating pair cancels exactly.
        let sys = reference_rod(3);
        let expected = 2.0 / PI.sqrt();
        assert!((sys.m_sum() - expected).abs() < 1e-15);
        assert!((sys.m_sum() - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-15);
    }

    #[test]
    fn rod_builder_rejects_bad_overrides() {
        assert!(rod(3, &[(0, 0.0)]).is_err());
        assert!(rod(3, &[(0, -1.0)]).is_err());
        assert!(rod(3, &[(0, 1.0), (3, 1.0)]).is_err());
        assert!(rod(0, &[(0, 1.0)]).is_err());
    }

    #[test]
    fn validation_of_reference_rod() {
        let report = validate(&reference_rod(5));
        assert!(report.ok);
        assert!((report.m_sum - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-15);
        assert_eq!(report.kappa, 9.0);
    }

    #[test]
    fn validation_flags_negative_m0() {
        let sys = SpectralSystem::new(vec![0.0, 1.0], vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let report = validate(&sys);
        assert!(!report.ok);
        assert_eq!(report.violations, vec![Violation::M0Nonpositive]);
        assert_eq!(report.violations[0].name(), "m0_nonpositive");
    }

    #[test]
    fn validation_flags_spectrum_problems() {
        let sys = SpectralSystem::new(
            vec![0.5, 4.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![1.0, f64::NAN, 0.0, 0.0],
        )
        .unwrap();
        let report = validate(&sys);
        for v in [
            Violation::NonFinite,
            Violation::Lambda0Nonzero,
            Violation::LambdaNonpositive,
            Violation::LambdaDecreasing,
        ] {
            assert!(report.violations.contains(&v), "missing {v:?}");
        }
    }

    #[test]
    fn rod_builder_is_deterministic() {
        let a = reference_rod(32);
        let b = reference_rod(32);
        let bits = |s: &SpectralSystem| -> Vec<u64> {
            s.k_coeffs()
                .iter()
                .chain(s.lambdas())
                .map(|x| x.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn descriptor_forms() {
        let rod_json = r#"{ "rod": { "n_modes": 5, "m": { "0": 2.0, "1": 4.0, "2": 4.0 } } }"#;
        let d: SystemDescriptor = serde_json::from_str(rod_json).unwrap();
        assert_eq!(d.build().unwrap(), reference_rod(5));

        let explicit = r#"{ "lambdas": [0, 1], "m": [1, 0], "k": [1, 1] }"#;
        let d: SystemDescriptor = serde_json::from_str(explicit).unwrap();
        let sys = d.build().unwrap();
        assert_eq!(sys.guided_indices(), &[1]);

        let bad_key = r#"{ "rod": { "n_modes": 5, "m": { "zero": 2.0 } } }"#;
        let d: SystemDescriptor = serde_json::from_str(bad_key).unwrap();
        assert!(d.build().is_err());
    }
}
