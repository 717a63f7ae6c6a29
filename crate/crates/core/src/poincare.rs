//! Numerical Poincaré maps between the threshold planes, finite-difference
//! Jacobians of the reduced period map, and measured convergence rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{self, advance_modes, first_crossing_bound, next_switching, ModeVector};
use crate::error::{Error, Result};
use crate::export::{csv_line, fmt_real};
use crate::hysteresis::{RelayOutput, RelayState};
use crate::linalg::{self, Matrix};
use crate::periodic::PeriodicSolution;
use crate::spectral::SpectralSystem;
use crate::stability::matrix_a;

/// Allowed deviation of `v̂` from the plane value.
pub const SECTION_TOL: f64 = 1e-12;
/// Relative finite-difference step.
pub const FD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Plane {
    Alpha,
    Beta,
}

/// A state on one of the planes `v̂ = α` or `v̂ = β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionPoint {
    pub state: ModeVector,
    pub plane: Plane,
}

impl SectionPoint {
    pub fn new(
        system: &SpectralSystem,
        state: ModeVector,
        plane: Plane,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let target = match plane {
            Plane::Alpha => alpha,
            Plane::Beta => beta,
        };
        let vhat = dynamics::mean_temperature(system, &state);
        if !((vhat - target).abs() <= SECTION_TOL * target.abs().max(1.0)) {
            return Err(Error::Config(format!(
                "state is not on the {plane:?} plane: mean {vhat} vs {target}"
            )));
        }
        Ok(Self { state, plane })
    }
}

/// Image of a half-map together with the flight time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfMap {
    pub point: SectionPoint,
    pub elapsed: f64,
    /// `dv̂/dt` at arrival, before switching.
    pub rate: f64,
    pub grazing: bool,
}

fn half_map(
    system: &SpectralSystem,
    state: &ModeVector,
    output: RelayOutput,
    alpha: f64,
    beta: f64,
) -> Result<HalfMap> {
    let relay = RelayState::with_output(alpha, beta, output);
    let target = relay.threshold_value(output.target());
    let bound = first_crossing_bound(system, state, output, target)?;
    let t_max = state.time + 1.05 * bound + 1e-9;
    let event = next_switching(system, state, &relay, t_max)?.ok_or(Error::NoCrossing { t_max })?;
    let mut arrived = advance_modes(system, state, output, event.offset);
    arrived.time = event.time;
    let plane = match output {
        RelayOutput::Plus => Plane::Beta,
        RelayOutput::Minus => Plane::Alpha,
    };
    Ok(HalfMap {
        point: SectionPoint {
            state: arrived,
            plane,
        },
        elapsed: event.offset,
        rate: event.rate,
        grazing: event.grazing,
    })
}

/// `P_α`: heat from `v̂ < β` until `v̂` first reaches `β`.
pub fn map_p_alpha(
    system: &SpectralSystem,
    p: &ModeVector,
    alpha: f64,
    beta: f64,
) -> Result<HalfMap> {
    half_map(system, p, RelayOutput::Plus, alpha, beta)
}

/// `P_β`: cool from `v̂ > α` until `v̂` first reaches `α`.
pub fn map_p_beta(
    system: &SpectralSystem,
    p: &ModeVector,
    alpha: f64,
    beta: f64,
) -> Result<HalfMap> {
    half_map(system, p, RelayOutput::Minus, alpha, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodMap {
    pub point: SectionPoint,
    pub first_half: f64,
    pub elapsed: f64,
    pub grazing: bool,
}

/// `P = P_β ∘ P_α`.
pub fn map_p(system: &SpectralSystem, p: &ModeVector, alpha: f64, beta: f64) -> Result<PeriodMap> {
    let first = map_p_alpha(system, p, alpha, beta)?;
    let second = map_p_beta(system, &first.point.state, alpha, beta)?;
    Ok(PeriodMap {
        point: second.point,
        first_half: first.elapsed,
        elapsed: first.elapsed + second.elapsed,
        grazing: first.grazing || second.grazing,
    })
}

/// `R_α`: completes guiding sensor coordinates `φ_J` to a state on the
/// plane `v̂ = α`; all remaining modes are copied from `base`.
pub fn lift_alpha(
    system: &SpectralSystem,
    phi_j: &[f64],
    base: &ModeVector,
    alpha: f64,
) -> ModeVector {
    let mut v = base.clone();
    let sensors = system.sensor_indices();
    let mut sensed = 0.0;
    for (&j, &x) in sensors.iter().zip(phi_j) {
        v.values[j] = x;
        sensed += system.m(j) * x;
    }
    v.values[0] = (alpha - sensed) / system.m(0);
    v
}

fn project(system: &SpectralSystem, v: &ModeVector) -> Vec<f64> {
    system
        .sensor_indices()
        .iter()
        .map(|&j| v.values[j])
        .collect()
}

/// `Π(φ_J) = E P R_α (φ_J)` with the switching times of the period.
pub fn reduced_period_map(
    system: &SpectralSystem,
    sol: &PeriodicSolution,
    phi_j: &[f64],
) -> Result<(Vec<f64>, PeriodMap)> {
    let start = lift_alpha(system, phi_j, &sol.psi, sol.alpha);
    let image = map_p(system, &start, sol.alpha, sol.beta)?;
    Ok((project(system, &image.point.state), image))
}

/// `Π` after a one-sided step `sign·h` in sensor coordinate `coordinate`,
/// or `NonDifferentiable` if the switching structure changed.
pub fn perturbed_image(
    system: &SpectralSystem,
    sol: &PeriodicSolution,
    coordinate: usize,
    sign: i8,
    h: f64,
) -> Result<Vec<f64>> {
    let mut phi = project(system, &sol.psi);
    phi[coordinate] += f64::from(sign) * h;
    let fail = |reason: String| Error::NonDifferentiable {
        coordinate,
        sign,
        reason,
    };
    let (image, period) = match reduced_period_map(system, sol, &phi) {
        Ok(r) => r,
        Err(e) => return Err(fail(e.to_string())),
    };
    if period.grazing {
        return Err(fail("grazing switching".into()));
    }
    let jump_tol = (1e-3 * sol.s).max(1e3 * h);
    if (period.first_half - sol.s).abs() > jump_tol {
        return Err(fail(format!(
            "first switching moved from {} to {}",
            sol.s, period.first_half
        )));
    }
    if (period.elapsed - 2.0 * sol.s).abs() > 2.0 * jump_tol {
        return Err(fail(format!(
            "period changed from {} to {}",
            2.0 * sol.s,
            period.elapsed
        )));
    }
    Ok(image)
}

/// Central-difference Jacobian of `Π` at `ψ_J`, with step
/// `eps · max(1, ‖ψ_J‖)`.
pub fn guiding_jacobian_fd(
    system: &SpectralSystem,
    sol: &PeriodicSolution,
    eps: f64,
) -> Result<Matrix> {
    if !sol.valid {
        return Err(Error::Config(format!(
            "solution at s = {} is not valid",
            sol.s
        )));
    }
    let n = system.sensor_indices().len();
    let psi_j = project(system, &sol.psi);
    let norm = psi_j.iter().map(|x| x * x).sum::<f64>().sqrt();
    let h = eps * norm.max(1.0);
    let mut jac = Matrix::zeros(n, n);
    for c in 0..n {
        let plus = perturbed_image(system, sol, c, 1, h)?;
        let minus = perturbed_image(system, sol, c, -1, h)?;
        for r in 0..n {
            jac[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Which parts of the state receive the random perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PerturbationSplit {
    Both,
    GuidingOnly,
    GuidedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateOptions {
    /// Weighted norm of the initial perturbation.
    pub delta0: f64,
    pub n_periods: usize,
    pub seed: u64,
    pub split: PerturbationSplit,
    /// Leading periods excluded from the fit.
    pub skip: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            delta0: 1e-6,
            n_periods: 30,
            seed: 0,
            split: PerturbationSplit::Both,
            skip: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub options: RateOptions,
    pub s: f64,
    /// Weighted distance to `ψ` on the plane `v̂ = α`; entry `k` is after
    /// `k` periods.
    pub distances: Vec<f64>,
    /// Period indices used in the fit.
    pub fit_range: (usize, usize),
    /// Per-period factor from a least-squares fit of `ln d_k`.
    pub fitted_factor: f64,
    pub spectral_radius_a2: f64,
    pub guided_factor: f64,
    /// `max(ρ(A²), e^{-2κs})`.
    pub predicted_factor: f64,
    /// Ratio of guided-part distances over the first period.
    pub guided_first_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub seed: u64,
    pub s: f64,
    pub fitted_factor: f64,
    pub predicted_factor: f64,
    pub spectral_radius_a2: f64,
    pub guided_factor: f64,
}

impl RateReport {
    /// Columns `period,distance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,distance\n");
        for (k, d) in self.distances.iter().enumerate() {
            out.push_str(&csv_line([k.to_string(), fmt_real(*d)]));
        }
        out
    }

    pub fn summary(&self) -> RateSummary {
        RateSummary {
            seed: self.options.seed,
            s: self.s,
            fitted_factor: self.fitted_factor,
            predicted_factor: self.predicted_factor,
            spectral_radius_a2: self.spectral_radius_a2,
            guided_factor: self.guided_factor,
        }
    }

    /// `|fitted / predicted - 1|`.
    pub fn relative_error(&self) -> f64 {
        (self.fitted_factor / self.predicted_factor - 1.0).abs()
    }
}

fn random_unit(
    rng: &mut ChaCha8Rng,
    system: &SpectralSystem,
    idx: &[usize],
    norm: f64,
) -> Vec<(usize, f64)> {
    if idx.is_empty() || norm == 0.0 {
        return Vec::new();
    }
    let raw: Vec<f64> = idx.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut full = vec![0.0; system.n_modes()];
    for (&j, &x) in idx.iter().zip(&raw) {
        full[j] = x;
    }
    let current = dynamics::weighted_norm_over(system, &full, idx);
    let scale = if current > 0.0 { norm / current } else { 0.0 };
    idx.iter().zip(raw).map(|(&j, x)| (j, x * scale)).collect()
}

fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Perturbs `ψ` on the section and iterates the period map, fitting the
/// per-period decay or growth of the distance to `ψ`.
pub fn measure_rate(
    system: &SpectralSystem,
    sol: &PeriodicSolution,
    options: RateOptions,
) -> Result<RateReport> {
    if !sol.valid {
        return Err(Error::Config(format!(
            "solution at s = {} is not valid",
            sol.s
        )));
    }
    if !(options.delta0 > 0.0) || options.n_periods < 2 {
        return Err(Error::Config(
            "need delta0 > 0 and at least two periods".into(),
        ));
    }
    let rho_a = if system.sensor_indices().is_empty() {
        0.0
    } else {
        linalg::spectral_radius(&matrix_a(system, sol.s)?)?
    };
    let spectral_radius_a2 = rho_a * rho_a;
    let guided_factor = (-2.0 * system.kappa() * sol.s).exp();
    let predicted_factor = spectral_radius_a2.max(guided_factor);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let sensors = system.sensor_indices();
    let guided = system.guided_indices();
    let (w_guiding, w_guided) = match options.split {
        PerturbationSplit::Both if !sensors.is_empty() && !guided.is_empty() => {
            (options.delta0 / 2f64.sqrt(), options.delta0 / 2f64.sqrt())
        }
        PerturbationSplit::Both if guided.is_empty() => (options.delta0, 0.0),
        PerturbationSplit::Both | PerturbationSplit::GuidedOnly => (0.0, options.delta0),
        PerturbationSplit::GuidingOnly => (options.delta0, 0.0),
    };
    let mut start = sol.psi.clone();
    for (j, d) in random_unit(&mut rng, system, sensors, w_guiding)
        .into_iter()
        .chain(random_unit(&mut rng, system, guided, w_guided))
    {
        start.values[j] += d;
    }
    let phi_j = project(system, &start);
    let mut v = lift_alpha(system, &phi_j, &start, sol.alpha);

    let scale = dynamics::weighted_norm(system, &sol.psi.values).max(1.0);
    let noise_floor = 1e-11 * scale;
    let growth_cap = 1e-3 * scale;
    let guided_distance = |v: &ModeVector| {
        let diff: Vec<f64> = v
            .values
            .iter()
            .zip(&sol.psi.values)
            .map(|(a, b)| a - b)
            .collect();
        dynamics::weighted_norm_over(system, &diff, guided)
    };
    let distance = |v: &ModeVector| {
        let mut w = v.clone();
        w.time = sol.psi.time;
        dynamics::weighted_distance(system, &w, &sol.psi)
    };

    let mut distances = vec![distance(&v)];
    let guided0 = guided_distance(&v);
    let mut guided_first_period = None;
    for k in 0..options.n_periods {
        let image = match map_p(system, &v, sol.alpha, sol.beta) {
            Ok(image) => image,
            Err(_) if distances.last().is_some_and(|&d| d > options.delta0) => break,
            Err(e) => return Err(e),
        };
        v = image.point.state;
        v.time = 0.0;
        if k == 0 && guided0 > 0.0 {
            guided_first_period = Some(guided_distance(&v) / guided0);
        }
        let d = distance(&v);
        distances.push(d);
        if !(d < growth_cap) || d < noise_floor {
            break;
        }
    }
    if predicted_factor < 1.0 && distances.last().is_some_and(|&d| !(d < growth_cap)) {
        return Err(Error::Divergence);
    }

    // Fit over the points above the noise floor, skipping transients when
    // enough points remain.
    let usable = distances
        .iter()
        .take_while(|&&d| d >= noise_floor && d < growth_cap)
        .count();
    let skip = if usable >= options.skip + 3 {
        options.skip
    } else {
        0
    };
    let end = usable.max(skip + 2).min(distances.len());
    let pts: Vec<(f64, f64)> = (skip..end)
        .map(|k| (k as f64, distances[k].max(f64::MIN_POSITIVE).ln()))
        .collect();
    let fitted_factor = fit_log_slope(&pts).exp();
    Ok(RateReport {
        options,
        s: sol.s,
        distances,
        fit_range: (skip, end),
        fitted_factor,
        spectral_radius_a2,
        guided_factor,
        predicted_factor,
        guided_first_period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic::{enumerate_periodic, symmetric_initial};
    use crate::spectral::rod;
    use crate::stability::{classify, CLASSIFY_TOL};

    fn rod_m0(m0: f64, n: usize) -> SpectralSystem {
        rod(n, &[(0, m0), (1, 4.0), (2, 4.0)]).unwrap()
    }

    fn first_valid(sys: &SpectralSystem, gap: f64) -> PeriodicSolution {
        enumerate_periodic(sys, 0.0, gap, 50.0)
            .unwrap()
            .solutions
            .into_iter()
            .find(|s| s.valid)
            .expect("a valid solution")
    }

    #[test]
    fn section_point_validation() {
        let sys = rod_m0(2.0, 4);
        let psi = symmetric_initial(&sys, 0.1, 0.5);
        assert!(SectionPoint::new(&sys, psi.clone(), Plane::Alpha, 0.1, 0.3).is_ok());
        assert!(SectionPoint::new(&sys, psi, Plane::Beta, 0.1, 0.3).is_err());
    }

    #[test]
    fn single_mode_half_map() {
        let sys = rod(1, &[(0, 2.0)]).unwrap();
        let (alpha, beta) = (0.2, 0.9);
        let v = ModeVector::new(vec![alpha / 2.0], 0.0);
        let half = map_p_alpha(&sys, &v, alpha, beta).unwrap();
        let t1 = (beta - alpha) / sys.drift();
        assert!((half.elapsed - t1).abs() < 1e-12);
        assert!(
            (half.point.state.values[0] - (v.values[0] + sys.k(0) * half.elapsed)).abs() < 1e-15
        );
        let full = map_p(&sys, &v, alpha, beta).unwrap();
        assert!((full.point.state.values[0] - v.values[0]).abs() < 1e-12);
        assert_eq!(full.point.plane, Plane::Alpha);
    }

    #[test]
    fn periodic_point_is_fixed() {
        for (m0, gap) in [(2.0, 0.1), (3.2, 0.4), (4.0, 0.3)] {
            let sys = rod_m0(m0, 8);
            for sol in enumerate_periodic(&sys, -0.1, gap - 0.1, 50.0)
                .unwrap()
                .valid()
            {
                let half = map_p_alpha(&sys, &sol.psi, sol.alpha, sol.beta).unwrap();
                assert!((half.elapsed - sol.s).abs() < 1e-9);
                for j in 1..8 {
                    assert!((half.point.state.values[j] + sol.psi.values[j]).abs() < 1e-8);
                }
                let full = map_p(&sys, &sol.psi, sol.alpha, sol.beta).unwrap();
                let mut back = full.point.state.clone();
                back.time = 0.0;
                assert!(dynamics::weighted_distance(&sys, &back, &sol.psi) < 1e-8);
            }
        }
    }

    #[test]
    fn guided_perturbation_keeps_arrival_time() {
        let sys = rod_m0(3.2, 8);
        let sol = first_valid(&sys, 0.2);
        let mut v = sol.psi.clone();
        v.values[5] += 0.3;
        v.values[7] -= 0.1;
        let a = map_p_alpha(&sys, &sol.psi, sol.alpha, sol.beta).unwrap();
        let b = map_p_alpha(&sys, &v, sol.alpha, sol.beta).unwrap();
        assert_eq!(a.elapsed, b.elapsed);
    }

    #[test]
    fn lift_stays_on_section() {
        let sys = rod_m0(3.2, 6);
        let sol = first_valid(&sys, 0.3);
        let v = lift_alpha(&sys, &[0.3, -0.2], &sol.psi, sol.alpha);
        assert!((dynamics::mean_temperature(&sys, &v) - sol.alpha).abs() < 1e-15);
        assert_eq!(&v.values[3..], &sol.psi.values[3..]);
    }

    #[test]
    fn jacobian_is_a_squared() {
        for (m0, gap) in [(2.0, 0.1), (3.2, 0.3), (3.2, 0.7), (4.0, 0.2)] {
            let sys = rod_m0(m0, 6);
            let sol = first_valid(&sys, gap);
            let a = matrix_a(&sys, sol.s).unwrap();
            let a2 = a.mul(&a);
            let fd = guiding_jacobian_fd(&sys, &sol, FD_EPS).unwrap();
            let err = fd.sub(&a2).max_abs();
            assert!(err <= 1e-5, "m0 = {m0}, gap = {gap}: {err}");
        }
    }

    #[test]
    fn scalar_jacobian() {
        let sys = rod(5, &[(0, 1.0), (1, 1.5)]).unwrap();
        let sol = first_valid(&sys, 0.4);
        let report = classify(&sys, &sol, CLASSIFY_TOL).unwrap();
        let mu = report.mus[0].re;
        let fd = guiding_jacobian_fd(&sys, &sol, FD_EPS).unwrap();
        assert!((fd[(0, 0)] - mu * mu).abs() < 1e-6);
    }

    #[test]
    fn grazing_point_is_not_differentiable() {
        // Endpoint tangency of the m0 = 2 rod near s ≈ 0.2649.
        let sys = rod_m0(2.0, 6);
        let (mut lo, mut hi) = (0.2, 0.3);
        let q = |s: f64| crate::periodic::char_h_t(&sys, s, s);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if q(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let f = crate::periodic::char_f(&sys, lo);
        let sol = PeriodicSolution::at(&sys, 0.0, f, lo);
        assert!(sol.valid);
        let err = guiding_jacobian_fd(&sys, &sol, FD_EPS).unwrap_err();
        assert!(matches!(err, Error::NonDifferentiable { .. }), "{err}");
        let psi_j = project(&sys, &sol.psi);
        let h = FD_EPS * psi_j.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        let failing = (0..2)
            .flat_map(|c| [1i8, -1].map(|sg| perturbed_image(&sys, &sol, c, sg, h).is_err()))
            .filter(|&e| e)
            .count();
        assert!(failing >= 1);
    }

    #[test]
    fn guided_only_rate() {
        let sys = SpectralSystem::new(vec![0.0, 9.0], vec![1.0, 0.0], vec![1.0, 0.5]).unwrap();
        let sol = PeriodicSolution::at(&sys, 0.0, sys.drift(), 1.0);
        assert!(sol.valid);
        let options = RateOptions {
            delta0: 1e-2,
            n_periods: 3,
            ..RateOptions::default()
        };
        let r = measure_rate(&sys, &sol, options).unwrap();
        let g = r.guided_first_period.unwrap();
        assert!((g / (-18f64).exp() - 1.0).abs() < 1e-4, "{g:e}");
        assert_eq!(r.predicted_factor, (-18f64).exp());
    }

    #[test]
    fn stable_rod_rate() {
        let sys = rod_m0(4.0, 8);
        let sol = first_valid(&sys, 0.3);
        let options = RateOptions {
            n_periods: 60,
            ..RateOptions::default()
        };
        let r = measure_rate(&sys, &sol, options).unwrap();
        assert!(r.fitted_factor < 1.0);
        assert!(r.relative_error() < 0.2, "{:?}", r.summary());
        let again = measure_rate(&sys, &sol, options).unwrap();
        assert_eq!(r, again);
        assert!(r.to_csv().starts_with("period,distance\n0,"));
    }

    #[test]
    fn unstable_rod_rate() {
        let sys = rod_m0(2.0, 8);
        let sol = first_valid(&sys, 0.05);
        let report = classify(&sys, &sol, CLASSIFY_TOL).unwrap();
        assert_ne!(
            report.classification,
            crate::stability::StabilityClass::Stable
        );
        let options = RateOptions {
            n_periods: 60,
            split: PerturbationSplit::GuidingOnly,
            ..RateOptions::default()
        };
        let r = measure_rate(&sys, &sol, options).unwrap();
        assert!(r.fitted_factor > 1.0);
        let mu2 = report.spectral_radius * report.spectral_radius;
        assert!(
            (r.fitted_factor / mu2 - 1.0).abs() < 0.2,
            "{} vs {}",
            r.fitted_factor,
            mu2
        );
    }
}
