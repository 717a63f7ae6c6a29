//! End-to-end acceptance checks, shared by the `acceptance` test target and
//! the `verify` command.
//!
//! Every check returns a [`CriterionResult`] instead of panicking so that a
//! failing criterion is reported alongside the others.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bifurcation::{scan_diagram, BifurcationKind, BifurcationPoint};
use crate::dynamics::{self, simulate, ModeVector};
use crate::error::Result;
use crate::linalg::{self, Matrix};
use crate::periodic::{char_f, char_h, enumerate_periodic, verify_by_simulation, PeriodicSolution};
use crate::poincare::{guiding_jacobian_fd, measure_rate, PerturbationSplit, RateOptions, FD_EPS};
use crate::spectral::{rod, SpectralSystem};
use crate::stability::{
    classify, det_identity_check, matrix_a, q_functions, StabilityClass, CLASSIFY_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {} ({:.2} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn run(
    id: u32,
    name: &'static str,
    body: impl FnOnce() -> Result<(bool, String)>,
) -> CriterionResult {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Rod with `m_1 = m_2 = 4` and the given `m_0`, truncated at `n_modes`.
pub fn reference_rod(m0: f64, n_modes: usize) -> SpectralSystem {
    rod(n_modes, &[(0, m0), (1, 4.0), (2, 4.0)]).expect("reference rod")
}

const ROD_MODES: usize = 16;
const DIAGRAM_POINTS: usize = 400;
const DIAGRAM_TIME_LIMIT: f64 = 10.0;

/// Kind, `(s, tol)` and `(gap, tol)` of a point that must be found.
type Expected = (BifurcationKind, (f64, f64), (f64, f64));

fn near(
    points: &[BifurcationPoint],
    kind: BifurcationKind,
    s: (f64, f64),
    gap: (f64, f64),
) -> Option<&BifurcationPoint> {
    points
        .iter()
        .find(|p| p.kind == kind && (p.s - s.0).abs() <= s.1 && (p.gap - gap.0).abs() <= gap.1)
}

fn diagram_check(
    m0: f64,
    expected: &[Expected],
) -> Result<(bool, String)> {
    let start = Instant::now();
    let sys = reference_rod(m0, ROD_MODES);
    let diagram = scan_diagram(&sys, 0.01, 6.0, DIAGRAM_POINTS)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut ok = elapsed < DIAGRAM_TIME_LIMIT;
    let mut parts = vec![format!("scan {elapsed:.2} s")];
    for (kind, s, gap) in expected {
        match near(&diagram.points, *kind, *s, *gap) {
            Some(p) => parts.push(format!(
                "{} at s = {:.6}, F = {:.6}",
                kind.name(),
                p.s,
                p.gap
            )),
            None => {
                ok = false;
                parts.push(format!("no {} near ({}, {})", kind.name(), s.0, gap.0));
            }
        }
    }
    Ok((ok, parts.join("; ")))
}

/// Diagram of the `m_0 = 2` rod: endpoint grazing near `(0.26, 0.23)` and
/// interior grazing near `(4.10, 0.04)`.
pub fn diagram_m0_2() -> CriterionResult {
    run(1, "bifurcation diagram, m0 = 2", || {
        diagram_check(
            2.0,
            &[
                (BifurcationKind::S1GrazeValid, (0.26, 0.01), (0.23, 0.01)),
                (BifurcationKind::S2GrazeInvalid, (4.10, 0.02), (0.04, 0.005)),
            ],
        )
    })
}

/// Diagram of the `m_0 = 3.2` rod: two interior grazings and a fold.
pub fn diagram_m0_32() -> CriterionResult {
    run(2, "bifurcation diagram, m0 = 3.2", || {
        diagram_check(
            3.2,
            &[
                (BifurcationKind::S2GrazeInvalid, (0.75, 0.01), (0.51, 0.01)),
                (BifurcationKind::S2GrazeInvalid, (1.74, 0.02), (0.26, 0.01)),
                (BifurcationKind::S3Fold, (0.55, 0.01), (0.56, 0.01)),
            ],
        )
    })
}

fn ratio_rod(ratio: f64) -> SpectralSystem {
    rod(ROD_MODES, &[(0, 4.0 * ratio), (1, 4.0), (2, 4.0)]).expect("ratio rod")
}

/// `max |μ| - 1` of `A(s)` for the rod with `m_0 / m_1 = ratio`.
fn radius_excess(ratio: f64, s: f64) -> Result<f64> {
    Ok(linalg::spectral_radius(&matrix_a(&ratio_rod(ratio), s)?)? - 1.0)
}

/// Small half-period stability switches at `m_0/m_1 = 3√2/5`.
pub fn stability_threshold() -> CriterionResult {
    run(3, "stability threshold m0/m1 = 3*sqrt(2)/5", || {
        let threshold = 3.0 * 2f64.sqrt() / 5.0;
        let mut ok = true;
        let mut parts = Vec::new();
        for (ratio, expected) in [
            (0.7, StabilityClass::Unstable),
            (1.0, StabilityClass::Stable),
        ] {
            let sys = ratio_rod(ratio);
            let gap = char_f(&sys, 0.03);
            let en = enumerate_periodic(&sys, 0.0, gap, 50.0)?;
            let sol = en
                .valid()
                .filter(|s| s.s < 0.05)
                .min_by(|a, b| a.s.total_cmp(&b.s));
            let Some(sol) = sol else {
                ok = false;
                parts.push(format!("ratio {ratio}: no valid solution with s < 0.05"));
                continue;
            };
            let report = classify(&sys, sol, CLASSIFY_TOL)?;
            ok &= report.classification == expected;
            parts.push(format!(
                "ratio {ratio}: s = {:.4}, max|mu| = {:.6}, {}",
                sol.s,
                report.spectral_radius,
                report.classification.name()
            ));
        }
        let mut crossings = Vec::new();
        for s in [0.04, 0.02, 0.01] {
            let (mut lo, mut hi) = (0.80, 0.90);
            let (flo, fhi) = (radius_excess(lo, s)?, radius_excess(hi, s)?);
            if (flo > 0.0) == (fhi > 0.0) {
                ok = false;
                parts.push(format!("s = {s}: no crossing in [0.80, 0.90]"));
                continue;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (radius_excess(mid, s)? > 0.0) == (flo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push((s, 0.5 * (lo + hi)));
        }
        if crossings.len() == 3 {
            let n = 3.0;
            let mx = crossings.iter().map(|c| c.0).sum::<f64>() / n;
            let my = crossings.iter().map(|c| c.1).sum::<f64>() / n;
            let slope = crossings
                .iter()
                .map(|c| (c.0 - mx) * (c.1 - my))
                .sum::<f64>()
                / crossings.iter().map(|c| (c.0 - mx).powi(2)).sum::<f64>();
            let at_zero = my - slope * mx;
            ok &= (at_zero - threshold).abs() <= 0.01;
            parts.push(format!(
                "crossings {:?}, extrapolated {:.5} vs {:.5}",
                crossings
                    .iter()
                    .map(|c| (c.0, (c.1 * 1e5).round() / 1e5))
                    .collect::<Vec<_>>(),
                at_zero,
                threshold
            ));
        }
        Ok((ok, parts.join("; ")))
    })
}

/// A random system with `n_sensors` sensor modes, two guided modes and
/// distinct eigenvalues.
fn random_system(rng: &mut ChaCha8Rng, n_sensors: usize) -> SpectralSystem {
    let n = n_sensors + 3;
    let mut lambdas = vec![0.0];
    let mut last = 0.0;
    for _ in 1..n {
        last += rng.gen_range(0.2..3.0);
        lambdas.push(last);
    }
    let mut m = vec![0.0; n];
    let mut k = vec![0.0; n];
    m[0] = rng.gen_range(0.5..3.0);
    k[0] = rng.gen_range(0.2..1.0);
    // Sensors on a random subset, the rest guided.
    let mut idx: Vec<usize> = (1..n).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    for &j in idx.iter().take(n_sensors) {
        let mut mj = 0.0;
        while mj == 0.0 {
            mj = rng.gen_range(-2.0..2.0);
        }
        m[j] = mj;
    }
    for kj in k.iter_mut().skip(1) {
        *kj = rng.gen_range(-1.0..1.0);
    }
    SpectralSystem::new(lambdas, m, k).expect("random system")
}

/// `Π(μ_i - 1) = (-1)^N (m_0 K_0/Q) Π E_i` over random systems and `s`.
pub fn determinant_identity() -> CriterionResult {
    run(4, "determinant identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sizes = [1usize, 2, 3, 5];
        let mut worst = 0.0f64;
        let mut rejected = 0usize;
        let mut count = 0usize;
        while count < 200 {
            let n = sizes[count % sizes.len()];
            let sys = random_system(&mut rng, n);
            let s = (rng.gen_range((1e-3f64).ln()..(20f64).ln())).exp();
            let q = q_functions(&sys, s).q;
            if q.abs() < 1e-3 * sys.drift() {
                rejected += 1;
                continue;
            }
            worst = worst.max(det_identity_check(&sys, s)?);
            count += 1;
        }
        Ok((
            worst <= 1e-9,
            format!("200 pairs, worst relative residual {worst:.3e} ({rejected} draws with Q near 0 redrawn)"),
        ))
    })
}

/// Valid solutions of the reference rods over a grid of gaps.
fn reference_solutions() -> Result<Vec<(SpectralSystem, PeriodicSolution)>> {
    let mut out = Vec::new();
    for m0 in [2.0, 3.2] {
        let sys = reference_rod(m0, ROD_MODES);
        for gap in [
            0.02, 0.05, 0.1, 0.15, 0.2, 0.23, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.5,
        ] {
            let en = enumerate_periodic(&sys, -0.5 * gap, 0.5 * gap, 50.0)?;
            for sol in en.solutions.into_iter().filter(|s| s.valid) {
                out.push((sys.clone(), sol));
            }
        }
    }
    Ok(out)
}

/// Finite-difference Jacobian of the reduced period map against `A(s)²`.
pub fn jacobian_agreement() -> CriterionResult {
    run(5, "finite-difference Jacobian equals A^2", || {
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for (sys, sol) in reference_solutions()? {
            // Switching rate at least a tenth of the drift: with a slower
            // crossing the switching time reacts to a step of size FD_EPS by
            // more than the distance to the nearest grazing.
            let transversal =
                sol.endpoint_rate >= 0.1 * sys.drift() && sol.min_h_margin < -1e-6 && !sol.grazing;
            if !transversal {
                skipped += 1;
                continue;
            }
            let a = matrix_a(&sys, sol.s)?;
            let fd = guiding_jacobian_fd(&sys, &sol, FD_EPS)?;
            worst = worst.max(fd.sub(&a.mul(&a)).max_abs());
            checked += 1;
        }
        Ok((
            checked > 0 && worst <= 1e-5,
            format!("{checked} transversal solutions ({skipped} near grazing skipped), worst max-entry error {worst:.3e}"),
        ))
    })
}

/// Simulation from `ψ` returns after `2s` with the expected symmetry.
pub fn periodicity_oracle() -> CriterionResult {
    run(6, "periodicity and symmetry by simulation", || {
        let mut solutions = reference_solutions()?;
        let single = rod(ROD_MODES, &[(0, 1.0)])?;
        for sol in enumerate_periodic(&single, 0.0, 0.7, 50.0)?.solutions {
            solutions.push((single.clone(), sol));
        }
        let (mut t_err, mut ret, mut sym) = (0.0f64, 0.0f64, 0.0f64);
        for (sys, sol) in &solutions {
            let r = verify_by_simulation(sys, sol, 1e-8)?;
            t_err = t_err.max(r.first_switch_error).max(r.second_switch_error);
            ret = ret.max(r.return_error);
            sym = sym.max(r.symmetry_error);
        }
        Ok((
            !solutions.is_empty() && t_err <= 1e-9 && ret <= 1e-8 && sym <= 1e-10,
            format!(
                "{} solutions; switch time error {t_err:.2e}, return {ret:.2e}, symmetry {sym:.2e}",
                solutions.len()
            ),
        ))
    })
}

/// System with a slowly decaying guided part, so that the contraction stays
/// above rounding over the whole horizon.
pub fn slow_guided_system() -> SpectralSystem {
    SpectralSystem::new(
        vec![0.0, 0.3, 0.5, 1.0, 1.7],
        vec![1.0, 0.0, 0.0, 2.0, 0.0],
        vec![0.8, 0.5, -0.4, 0.6, 0.3],
    )
    .expect("slow guided system")
}

/// Difference on the guided modes shrinks by at least `e^{-κ}` per unit time.
pub fn guided_contraction() -> CriterionResult {
    run(7, "guided contraction", || {
        let sys = slow_guided_system();
        let kappa = sys.kappa();
        let guided = sys.guided_indices().to_vec();
        let (alpha, beta) = (-0.1, 0.2);
        let a = ModeVector::new(vec![0.0, 0.2, -0.1, 0.05, 0.3], 0.0);
        let mut b = a.clone();
        for (i, &j) in guided.iter().enumerate() {
            b.values[j] += 0.5 - 0.3 * i as f64;
        }
        let ta = simulate(&sys, &a, alpha, beta, 10.0)?;
        let tb = simulate(&sys, &b, alpha, beta, 10.0)?;
        let dist = |t: f64| -> Option<f64> {
            let x = ta.state_at(&sys, t)?;
            let y = tb.state_at(&sys, t)?;
            let diff: Vec<f64> = x.values.iter().zip(&y.values).map(|(p, q)| p - q).collect();
            Some(dynamics::weighted_norm_over(&sys, &diff, &guided))
        };
        let bound = (-kappa).exp() * (1.0 + 1e-6);
        let mut worst = 0.0f64;
        for k in 0..10 {
            let (Some(d0), Some(d1)) = (dist(k as f64), dist(k as f64 + 1.0)) else {
                return Ok((false, format!("state unavailable at t = {k}")));
            };
            worst = worst.max(d1 / d0);
        }
        Ok((
            worst <= bound && ta.switch_times() == tb.switch_times(),
            format!(
                "kappa = {kappa}, worst per-unit factor {worst:.9} vs bound {bound:.9}, {} switchings",
                ta.switch_times().len()
            ),
        ))
    })
}

/// Guided perturbations leave every switching time bit-identical.
pub fn guiding_invariance() -> CriterionResult {
    run(8, "guiding invariance of switch times", || {
        let sys = reference_rod(3.2, ROD_MODES);
        let en = enumerate_periodic(&sys, -0.2, 0.2, 50.0)?;
        let base = en
            .valid()
            .next()
            .map(|s| s.psi.clone())
            .unwrap_or_else(|| ModeVector::zeros(ROD_MODES));
        let reference = simulate(&sys, &base, -0.2, 0.2, 10.0)?.switch_times();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut mismatches = 0;
        for _ in 0..100 {
            let mut v = base.clone();
            for &j in sys.guided_indices() {
                v.values[j] += rng.gen_range(-1.0..1.0);
            }
            if simulate(&sys, &v, -0.2, 0.2, 10.0)?.switch_times() != reference {
                mismatches += 1;
            }
        }
        Ok((
            mismatches == 0 && !reference.is_empty(),
            format!(
                "100 perturbations, {} reference switchings, {mismatches} mismatches",
                reference.len()
            ),
        ))
    })
}

/// Closed-form identities of the characteristic functions and `A(0) = I`.
pub fn identities() -> CriterionResult {
    run(9, "characteristic-function identities", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let sys = reference_rod(if i % 2 == 0 { 2.0 } else { 3.2 }, ROD_MODES);
            let s = (rng.gen_range((1e-4f64).ln()..(30f64).ln())).exp();
            let scale = sys.drift() * s
                + sys
                    .sensor_indices()
                    .iter()
                    .map(|&j| {
                        (2.0 * sys.m(j) * sys.k(j) / sys.lambda(j)
                            * (0.5 * sys.lambda(j) * s).tanh())
                        .abs()
                    })
                    .sum::<f64>();
            let e0 = (char_h(&sys, 0.0, s) + char_f(&sys, s)).abs() / scale;
            let es = char_h(&sys, s, s).abs() / scale;
            worst = worst.max(e0).max(es);
        }
        let sys = reference_rod(3.2, ROD_MODES);
        let err =
            |s: f64| -> Result<f64> { Ok(matrix_a(&sys, s)?.sub(&Matrix::identity(2)).max_abs()) };
        let mut ratios = Vec::new();
        for s in [1e-2, 1e-3, 1e-4, 1e-5] {
            ratios.push(err(s)? / s);
        }
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        let linear = hi / lo < 1.5;
        Ok((
            worst <= 1e-13 && linear,
            format!("1000 draws, worst relative identity error {worst:.2e}; |A(s) - I|/s in [{lo:.4}, {hi:.4}]"),
        ))
    })
}

/// Measured per-period rates against the eigenvalue prediction.
pub fn rate_measurement() -> CriterionResult {
    run(10, "measured convergence rates", || {
        let stable_sys = reference_rod(4.0, ROD_MODES);
        let stable = enumerate_periodic(&stable_sys, 0.0, 0.3, 50.0)?;
        let sol = stable.valid().next().expect("stable rod solution");
        let report = classify(&stable_sys, sol, CLASSIFY_TOL)?;
        let options = RateOptions {
            n_periods: 60,
            seed: 10,
            ..RateOptions::default()
        };
        let r = measure_rate(&stable_sys, sol, options)?;
        let stable_ok = report.classification == StabilityClass::Stable && r.relative_error() < 0.2;

        let unstable_sys = reference_rod(2.0, ROD_MODES);
        let unstable = enumerate_periodic(&unstable_sys, 0.0, 0.05, 50.0)?;
        let usol = unstable.valid().next().expect("unstable rod solution");
        let ureport = classify(&unstable_sys, usol, CLASSIFY_TOL)?;
        let u = measure_rate(
            &unstable_sys,
            usol,
            RateOptions {
                split: PerturbationSplit::GuidingOnly,
                ..options
            },
        )?;
        let mu2 = ureport.spectral_radius.powi(2);
        let unstable_ok = u.fitted_factor > 1.0 && (u.fitted_factor / mu2 - 1.0).abs() < 0.2;
        Ok((
            stable_ok && unstable_ok,
            format!(
                "stable: fitted {:.5} vs predicted {:.5}; unstable: fitted {:.5} vs max|mu|^2 {:.5}",
                r.fitted_factor, r.predicted_factor, u.fitted_factor, mu2
            ),
        ))
    })
}

/// Switch times agree between 16 and 32 retained modes.
pub fn truncation_convergence() -> CriterionResult {
    run(11, "truncation convergence 16 vs 32 modes", || {
        let mut worst = 0.0f64;
        let mut ok = true;
        for (m0, gap) in [(2.0, 0.1), (3.2, 0.4)] {
            let coarse = reference_rod(m0, 16);
            let fine = reference_rod(m0, 32);
            let sc = enumerate_periodic(&coarse, 0.0, gap, 50.0)?;
            let sf = enumerate_periodic(&fine, 0.0, gap, 50.0)?;
            for (a, b) in sc.valid().zip(sf.valid()) {
                let horizon = 10.0 * a.s;
                let ta = simulate(&coarse, &a.psi, a.alpha, a.beta, horizon)?.switch_times();
                let tb = simulate(&fine, &b.psi, b.alpha, b.beta, horizon)?.switch_times();
                if ta.len() != tb.len() {
                    ok = false;
                }
                for (x, y) in ta.iter().zip(&tb) {
                    worst = worst.max((x - y).abs());
                }
            }
            ok &= sc.n_valid() == sf.n_valid() && sc.n_valid() > 0;
        }
        Ok((
            ok && worst <= 1e-10,
            format!("worst switch time difference {worst:.2e}"),
        ))
    })
}

/// Every criterion, in order.
pub fn run_all() -> Vec<CriterionResult> {
    vec![
        diagram_m0_2(),
        diagram_m0_32(),
        stability_threshold(),
        determinant_identity(),
        jacobian_agreement(),
        periodicity_oracle(),
        guided_contraction(),
        guiding_invariance(),
        identities(),
        rate_measurement(),
        truncation_convergence(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_systems_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 3, 5] {
            let sys = random_system(&mut rng, n);
            assert_eq!(sys.sensor_indices().len(), n);
            assert!(crate::spectral::validate(&sys).ok);
        }
    }

    #[test]
    fn failing_body_is_reported() {
        let r = run(99, "x", || Err(crate::error::Error::Divergence));
        assert!(!r.passed);
        assert!(r.line().starts_with("[FAIL] 99 x"));
    }
}
