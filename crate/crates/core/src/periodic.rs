//! Symmetric periodic solutions with two switchings per period.
//!
//! For a candidate half-period `s`, the symmetric initial vector `ψ(s)` is
//! known in closed form. The first characteristic function `F(s)` gives the
//! threshold gap `β - α` for which `ψ(s)` reaches `β` at time `s`, and the
//! second characteristic function `H(t, s)` tells whether `β` is reached
//! earlier. A root `s` of `F(s) = β - α` with `H(·, s) < 0` on `(0, s)` is a
//! `2s`-periodic solution.

use serde::Serialize;

use crate::dynamics::{self, ModeVector, GRAZE_TOL};
use crate::error::{Error, Result};
use crate::spectral::SpectralSystem;

/// Interior grid used when scanning `H(·, s)`.
pub const H_GRID: usize = 512;
/// An interior maximum of `H` within this distance of zero is a tangency.
pub const TANGENCY_TOL: f64 = 1e-10;
/// Tolerance on refined roots of `F(s) = gap`.
pub const ROOT_TOL: f64 = 1e-12;

/// `(1 - e^{-λs}) / (1 + e^{-λs})` and `1 + e^{-λs}`.
#[inline]
fn ratio_parts(lambda: f64, s: f64) -> (f64, f64) {
    let x = -lambda * s;
    (-x.exp_m1(), 1.0 + x.exp())
}

/// First characteristic function
/// `F(s) = m_0 K_0 s + 2 Σ_J m_j (K_j/λ_j) (1 - e^{-λ_j s}) / (1 + e^{-λ_j s})`.
pub fn char_f(system: &SpectralSystem, s: f64) -> f64 {
    let mut f = system.drift() * s;
    for &j in system.sensor_indices() {
        let c = system.m(j) * system.k(j) / system.lambda(j);
        let (num, den) = ratio_parts(system.lambda(j), s);
        f += 2.0 * c * num / den;
    }
    f
}

/// `F'(s) = m_0 K_0 + 4 Σ_J m_j K_j e^{-λ_j s} / (1 + e^{-λ_j s})²`.
pub fn char_f_prime(system: &SpectralSystem, s: f64) -> f64 {
    let mut d = system.drift();
    for &j in system.sensor_indices() {
        let e = (-system.lambda(j) * s).exp();
        d += 4.0 * system.m(j) * system.k(j) * e / ((1.0 + e) * (1.0 + e));
    }
    d
}

/// Second characteristic function
/// `H(t, s) = m_0 K_0 (t - s) + 2 Σ_J m_j (K_j/λ_j) (e^{-λ_j s} - e^{-λ_j t}) / (1 + e^{-λ_j s})`.
pub fn char_h(system: &SpectralSystem, t: f64, s: f64) -> f64 {
    let mut h = system.drift() * (t - s);
    for &j in system.sensor_indices() {
        let lambda = system.lambda(j);
        let c = system.m(j) * system.k(j) / lambda;
        // e^{-λs} - e^{-λt} = e^{-λt} (e^{-λ(s-t)} - 1)
        let diff = (-lambda * t).exp() * (-lambda * (s - t)).exp_m1();
        let den = 1.0 + (-lambda * s).exp();
        h += 2.0 * c * diff / den;
    }
    h
}

/// `∂H/∂t = m_0 K_0 + 2 Σ_J m_j K_j e^{-λ_j t} / (1 + e^{-λ_j s})`.
pub fn char_h_t(system: &SpectralSystem, t: f64, s: f64) -> f64 {
    let mut d = system.drift();
    for &j in system.sensor_indices() {
        let lambda = system.lambda(j);
        d += 2.0 * system.m(j) * system.k(j) * (-lambda * t).exp() / (1.0 + (-lambda * s).exp());
    }
    d
}

/// The initial vector on `{v̂ = α}` whose `+1` flow over `s` ends at
/// `-ψ_j` in every mode `j ≥ 1`.
pub fn symmetric_initial(system: &SpectralSystem, alpha: f64, s: f64) -> ModeVector {
    let n = system.n_modes();
    let mut psi = vec![0.0; n];
    for (j, p) in psi.iter_mut().enumerate().skip(1) {
        let lambda = system.lambda(j);
        let (num, den) = ratio_parts(lambda, s);
        *p = -(system.k(j) / lambda) * num / den;
    }
    let sensed: f64 = system
        .sensor_indices()
        .iter()
        .map(|&j| system.m(j) * psi[j])
        .sum();
    psi[0] = (alpha - sensed) / system.m(0);
    ModeVector::new(psi, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FRoot {
    pub s: f64,
    pub f_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootSearch {
    pub roots: Vec<FRoot>,
    /// Beyond this half-period `F(s) > gap` holds, so no roots exist there.
    pub root_bound: f64,
    pub warnings: Vec<String>,
}

/// Upper bound on every root of `F(s) = gap`, from
/// `F(s) >= m_0 K_0 s - 2 Σ_J |m_j K_j| / λ_j`.
pub fn f_root_bound(system: &SpectralSystem, gap: f64) -> f64 {
    let slack: f64 = system
        .sensor_indices()
        .iter()
        .map(|&j| 2.0 * (system.m(j) * system.k(j)).abs() / system.lambda(j))
        .sum();
    (gap + slack) / system.drift()
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let lo_nonneg = f(lo) >= 0.0;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if (f(mid) >= 0.0) == lo_nonneg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All solutions of `F(s) = gap` in `(0, s_max]`.
pub fn find_f_roots(system: &SpectralSystem, gap: f64, s_max: f64) -> Result<RootSearch> {
    if !(gap > 0.0) {
        return Err(Error::Config(format!(
            "threshold gap must be positive, got {gap}"
        )));
    }
    if !(s_max > 0.0) {
        return Err(Error::Config(format!(
            "s_max must be positive, got {s_max}"
        )));
    }
    let drift = system.drift();
    if !(drift > 0.0) {
        return Err(Error::Config(format!(
            "m0*K0 must be positive, got {drift}"
        )));
    }
    let root_bound = f_root_bound(system, gap);
    let mut warnings = Vec::new();
    if s_max < root_bound {
        warnings.push(format!(
            "s_max = {s_max} is below the root bound {root_bound}; large roots may be missed"
        ));
    }
    let end = s_max.min(root_bound * (1.0 + 1e-9) + 1e-12);
    let step = (gap / (8.0 * drift)).min(1e-3 * s_max);
    let phi = |s: f64| char_f(system, s) - gap;
    let fp = |s: f64| char_f_prime(system, s);
    let scale = gap.max(1.0);

    let mut roots: Vec<f64> = Vec::new();
    let n_steps = (end / step).ceil() as usize;
    let mut a = 0.0;
    let mut pa = phi(a);
    let mut da = fp(a);
    for i in 1..=n_steps {
        let b = (i as f64 * step).min(end);
        let pb = phi(b);
        let db = fp(b);
        if (pa >= 0.0) != (pb >= 0.0) {
            roots.push(bisect(phi, a, b, ROOT_TOL));
        } else if (da > 0.0) != (db > 0.0) {
            // An extremum inside the step may hide a pair of roots.
            let e = bisect(fp, a, b, ROOT_TOL);
            let pe = phi(e);
            if (pe >= 0.0) != (pa >= 0.0) {
                roots.push(bisect(phi, a, e, ROOT_TOL));
                roots.push(bisect(phi, e, b, ROOT_TOL));
            } else if pe.abs() <= ROOT_TOL * scale {
                roots.push(e);
            }
        }
        a = b;
        pa = pb;
        da = db;
    }
    let roots = roots
        .into_iter()
        .filter(|&s| s > 0.0 && s <= s_max)
        .map(|s| FRoot { s, f_prime: fp(s) })
        .collect();
    Ok(RootSearch {
        roots,
        root_bound,
        warnings,
    })
}

/// Result of scanning `H(·, s)` on `(0, s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingCheck {
    /// `τ(s)` is empty.
    pub valid: bool,
    /// Supremum of `H` over the interior grid and refined maxima.
    pub margin: f64,
    /// Interior zeros of `H(·, s)` (crossings and tangencies), ascending.
    pub tau_set: Vec<f64>,
    /// Highest refined interior local maximum `(t, H)`.
    pub peak: Option<(f64, f64)>,
    /// Some contact with `β` is nontransversal: an interior maximum within
    /// `TANGENCY_TOL` of zero, or `|∂H/∂t(s, s)| < GRAZE_TOL`.
    pub grazing: bool,
    /// `∂H/∂t` at `t = s`, the rate of `v̂` at the switching.
    pub endpoint_rate: f64,
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Interior maximum of `H(·, s)` on `[a, b]`: a zero of `∂H/∂t` when it is
/// bracketed, otherwise golden-section search.
fn locate_max(system: &SpectralSystem, s: f64, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    let ht = |t: f64| char_h_t(system, t, s);
    if ht(a) > 0.0 && ht(b) < 0.0 {
        let t = bisect(ht, a, b, xtol.min(1e-15 * s.max(1.0)));
        (t, char_h(system, t, s))
    } else {
        golden_max(|t| char_h(system, t, s), a, b, xtol)
    }
}

/// Scans `H(·, s)` for zeros before `s`.
pub fn first_crossing_check(system: &SpectralSystem, s: f64) -> CrossingCheck {
    let h = |t: f64| char_h(system, t, s);
    let grid: Vec<f64> = (0..=H_GRID).map(|i| s * i as f64 / H_GRID as f64).collect();
    let mut values: Vec<f64> = grid.iter().map(|&t| h(t)).collect();
    values[H_GRID] = 0.0;
    let endpoint_rate = char_h_t(system, s, s);

    let mut tau_set = Vec::new();
    let mut margin = f64::NEG_INFINITY;
    let mut peak: Option<(f64, f64)> = None;
    let mut grazing = endpoint_rate.abs() < GRAZE_TOL;
    let xtol = 1e-12 * s.max(1e-300);

    for i in 1..H_GRID {
        margin = margin.max(values[i]);
        // Interior sign changes between grid nodes.
        if (values[i - 1] >= 0.0) != (values[i] >= 0.0) {
            tau_set.push(bisect(h, grid[i - 1], grid[i], xtol));
        }
        if values[i] >= values[i - 1] && values[i] >= values[i + 1] {
            let (tp, hp) = locate_max(system, s, grid[i - 1], grid[i + 1], xtol);
            let (tp, hp) = if hp >= values[i] {
                (tp, hp)
            } else {
                (grid[i], values[i])
            };
            margin = margin.max(hp);
            if peak.is_none_or(|(_, best)| hp > best) {
                peak = Some((tp, hp));
            }
            if hp.abs() <= TANGENCY_TOL {
                grazing = true;
            }
            let nodes_negative = values[i - 1] < 0.0 && values[i] < 0.0 && values[i + 1] < 0.0;
            if nodes_negative && hp >= 0.0 {
                if hp > TANGENCY_TOL {
                    // A thin positive bump between grid nodes: two crossings.
                    tau_set.push(bisect(h, grid[i - 1], tp, xtol));
                    tau_set.push(bisect(h, tp, grid[i + 1], xtol));
                } else {
                    tau_set.push(tp);
                }
            } else if (0.0..=TANGENCY_TOL).contains(&hp) && values[i - 1] < 0.0 && values[i + 1] < 0.0
            {
                tau_set.push(tp);
            }
        }
    }
    // Approach to t = s from above means an earlier crossing close to s.
    if endpoint_rate < 0.0 && values[H_GRID - 1] < 0.0 {
        let right = s - 1e-9 * s;
        if h(right) > 0.0 {
            tau_set.push(bisect(h, grid[H_GRID - 1], right, xtol));
        }
    }
    tau_set.sort_by(f64::total_cmp);
    tau_set.dedup_by(|a, b| (*a - *b).abs() <= 10.0 * xtol);

    CrossingCheck {
        valid: tau_set.is_empty(),
        margin,
        tau_set,
        peak,
        grazing,
        endpoint_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicSolution {
    /// Half-period `s`.
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Initial data on the plane `v̂ = α`.
    pub psi: ModeVector,
    pub valid: bool,
    pub grazing: bool,
    /// `F(s) - (β - α)` at the refined root.
    pub f_residual: f64,
    pub f_value: f64,
    pub f_prime: f64,
    pub min_h_margin: f64,
    /// `∂H/∂t(s, s)`, which equals `Q(s)`.
    pub endpoint_rate: f64,
    pub tau_set: Vec<f64>,
}

/// Flat JSON record of a solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionRecord {
    pub s: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub valid: bool,
    pub grazing: bool,
    #[serde(rename = "F_value")]
    pub f_value: f64,
    #[serde(rename = "min_H_margin")]
    pub min_h_margin: f64,
    pub psi: Vec<f64>,
}

impl PeriodicSolution {
    /// Builds and checks the candidate for half-period `s`.
    pub fn at(system: &SpectralSystem, alpha: f64, beta: f64, s: f64) -> Self {
        let psi = symmetric_initial(system, alpha, s);
        let check = first_crossing_check(system, s);
        let f_value = char_f(system, s);
        Self {
            s,
            alpha,
            beta,
            psi,
            valid: check.valid && f_value > 0.0,
            grazing: check.grazing,
            f_residual: f_value - (beta - alpha),
            f_value,
            f_prime: char_f_prime(system, s),
            min_h_margin: check.margin,
            endpoint_rate: check.endpoint_rate,
            tau_set: check.tau_set,
        }
    }

    pub fn period(&self) -> f64 {
        2.0 * self.s
    }

    pub fn record(&self) -> SolutionRecord {
        SolutionRecord {
            s: self.s,
            period: self.period(),
            valid: self.valid,
            grazing: self.grazing,
            f_value: self.f_value,
            min_h_margin: self.min_h_margin,
            psi: self.psi.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    /// One entry per root of `F(s) = β - α`, ascending in `s`.
    pub solutions: Vec<PeriodicSolution>,
    pub warnings: Vec<String>,
}

impl Enumeration {
    pub fn valid(&self) -> impl Iterator<Item = &PeriodicSolution> {
        self.solutions.iter().filter(|s| s.valid)
    }

    pub fn n_valid(&self) -> usize {
        self.valid().count()
    }

    pub fn n_ghost(&self) -> usize {
        self.solutions.len() - self.n_valid()
    }
}

/// Every symmetric candidate for the gap `β - α`, flagged valid or ghost.
pub fn enumerate_periodic(
    system: &SpectralSystem,
    alpha: f64,
    beta: f64,
    s_max: f64,
) -> Result<Enumeration> {
    if !(beta > alpha) {
        return Err(Error::Config(format!(
            "need beta > alpha, got alpha = {alpha}, beta = {beta}"
        )));
    }
    let search = find_f_roots(system, beta - alpha, s_max)?;
    let solutions = search
        .roots
        .iter()
        .map(|root| PeriodicSolution::at(system, alpha, beta, root.s))
        .collect();
    Ok(Enumeration {
        solutions,
        warnings: search.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub tol: f64,
    pub first_switch: Option<f64>,
    pub second_switch: Option<f64>,
    /// `|t_1 - s|`.
    pub first_switch_error: f64,
    /// `|t_2 - 2s|`.
    pub second_switch_error: f64,
    /// Weighted distance between the state at `t_2` and `ψ`.
    pub return_error: f64,
    /// `max_{j≥1} |z_j(t_1) + ψ_j|`.
    pub symmetry_error: f64,
    pub mismatches: Vec<String>,
}

/// Simulates from `ψ` and checks the switching times, the return to `ψ`
/// and the half-period antisymmetry.
pub fn verify_by_simulation(
    system: &SpectralSystem,
    sol: &PeriodicSolution,
    tol: f64,
) -> Result<VerificationReport> {
    let traj = dynamics::simulate(system, &sol.psi, sol.alpha, sol.beta, 2.5 * sol.s)?;
    let times = traj.switch_times();
    let first_switch = times.first().copied();
    let second_switch = times.get(1).copied();
    let first_switch_error = first_switch.map_or(f64::INFINITY, |t| (t - sol.s).abs());
    let second_switch_error = second_switch.map_or(f64::INFINITY, |t| (t - 2.0 * sol.s).abs());
    let return_error = traj.state_after_switch(1).map_or(f64::INFINITY, |z| {
        let diff: Vec<f64> = z
            .values
            .iter()
            .zip(&sol.psi.values)
            .map(|(a, b)| a - b)
            .collect();
        dynamics::weighted_norm(system, &diff)
    });
    let symmetry_error = traj.state_after_switch(0).map_or(f64::INFINITY, |z| {
        z.values
            .iter()
            .zip(&sol.psi.values)
            .skip(1)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max)
    });

    let mut mismatches = Vec::new();
    if !(first_switch_error <= tol) {
        mismatches.push(match first_switch {
            Some(t) if t < sol.s => format!("first switch at {t} precedes s = {}", sol.s),
            Some(t) => format!("first switch at {t}, expected s = {}", sol.s),
            None => "no switching at all".to_string(),
        });
    }
    if !(second_switch_error <= tol) {
        mismatches.push(format!(
            "second switch at {:?}, expected 2s = {}",
            second_switch,
            2.0 * sol.s
        ));
    }
    if !(return_error <= tol) {
        mismatches.push(format!("return error {return_error:e}"));
    }
    if !(symmetry_error <= tol) {
        mismatches.push(format!("symmetry error {symmetry_error:e}"));
    }
    Ok(VerificationReport {
        passed: mismatches.is_empty(),
        tol,
        first_switch,
        second_switch,
        first_switch_error,
        second_switch_error,
        return_error,
        symmetry_error,
        mismatches,
    })
}
