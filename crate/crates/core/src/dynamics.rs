//! Exact flow of the switched modal system, switching detection and full
//! trajectory simulation.
//!
//! Between two switchings every mode obeys `v_j' = -λ_j v_j + h K_j` with a
//! constant relay output `h`, so the flow is evaluated in closed form. Only
//! the switching instants need a numerical search.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hysteresis::{RelayOutput, RelayState, Threshold};
use crate::spectral::SpectralSystem;

/// Absolute tolerance of located switching times.
pub const EVENT_TOL: f64 = 1e-12;
/// A located switching with `|dv̂/dt|` below this is flagged as grazing.
pub const GRAZE_TOL: f64 = 1e-8;
/// Relative dwell floor: `dwell_floor = DWELL_FRACTION * horizon`.
pub const DWELL_FRACTION: f64 = 1e-9;

/// Modal amplitudes `v_j` at a given time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeVector {
    pub values: Vec<f64>,
    pub time: f64,
}

impl ModeVector {
    pub fn new(values: Vec<f64>, time: f64) -> Self {
        Self { values, time }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n], 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.time.is_finite()
    }
}

fn check_len(system: &SpectralSystem, v: &ModeVector) -> Result<()> {
    if v.len() != system.n_modes() {
        return Err(Error::Config(format!(
            "mode vector has {} entries, system has {} modes",
            v.len(),
            system.n_modes()
        )));
    }
    Ok(())
}

#[inline]
fn advance_component(lambda: f64, k: f64, h: f64, v: f64, dt: f64) -> f64 {
    if lambda == 0.0 {
        v + h * k * dt
    } else {
        let eq = h * k / lambda;
        v + (v - eq) * (-lambda * dt).exp_m1()
    }
}

#[inline]
fn rate_component(lambda: f64, k: f64, h: f64, v: f64) -> f64 {
    -lambda * v + h * k
}

/// Exact flow over `dt` with constant relay output `h`.
pub fn advance_modes(
    system: &SpectralSystem,
    v: &ModeVector,
    h: RelayOutput,
    dt: f64,
) -> ModeVector {
    let hv = h.value();
    let values = v
        .values
        .iter()
        .enumerate()
        .map(|(j, &x)| advance_component(system.lambda(j), system.k(j), hv, x, dt))
        .collect();
    ModeVector::new(values, v.time + dt)
}

/// `v̂ = Σ m_j v_j`. Only guiding modes contribute.
pub fn mean_temperature(system: &SpectralSystem, v: &ModeVector) -> f64 {
    system
        .guiding_indices()
        .iter()
        .map(|&j| system.m(j) * v.values[j])
        .sum()
}

/// `dv̂/dt = Σ m_j (-λ_j v_j + h K_j)`.
pub fn mean_rate(system: &SpectralSystem, v: &ModeVector, h: RelayOutput) -> f64 {
    let hv = h.value();
    system
        .guiding_indices()
        .iter()
        .map(|&j| system.m(j) * rate_component(system.lambda(j), system.k(j), hv, v.values[j]))
        .sum()
}

/// Mean temperature and its rate after flowing `tau` from `v`, touching
/// guiding modes only.
fn mean_and_rate_at(system: &SpectralSystem, v: &ModeVector, hv: f64, tau: f64) -> (f64, f64) {
    let mut mean = 0.0;
    let mut rate = 0.0;
    for &j in system.guiding_indices() {
        let (lambda, k, m) = (system.lambda(j), system.k(j), system.m(j));
        let x = advance_component(lambda, k, hv, v.values[j], tau);
        mean += m * x;
        rate += m * rate_component(lambda, k, hv, x);
    }
    (mean, rate)
}

/// Upper bound on the time needed to reach the threshold opposing `h`,
/// valid when `m_0 K_0 > 0` and `λ_0 = 0`.
pub fn first_crossing_bound(
    system: &SpectralSystem,
    v: &ModeVector,
    h: RelayOutput,
    target: f64,
) -> Result<f64> {
    let drift = system.drift();
    if !(drift > 0.0) {
        return Err(Error::Config(format!(
            "m0*K0 must be positive, got {drift}"
        )));
    }
    let hv = h.value();
    let slack: f64 = system
        .sensor_indices()
        .iter()
        .map(|&j| {
            let eq = hv * system.k(j) / system.lambda(j);
            (system.m(j) * (v.values[j] - eq)).abs()
        })
        .sum();
    let distance = hv * (target - mean_temperature(system, v));
    Ok(((distance + slack) / drift).max(0.0))
}

/// A located switching moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent {
    /// Absolute time of the switching.
    pub time: f64,
    /// Time elapsed since the start vector of the search.
    pub offset: f64,
    pub threshold: Threshold,
    /// `dv̂/dt` at the event, before switching.
    pub rate: f64,
    /// Nontransversal contact (`|rate| < GRAZE_TOL`).
    pub grazing: bool,
}

/// Finds the first time in `(v.time, t_max]` at which `v̂` attains the
/// threshold opposing the current relay output.
///
/// `Ok(None)` means no attainment before `t_max`; detection failures are
/// reported as errors.
pub fn next_switching(
    system: &SpectralSystem,
    v: &ModeVector,
    relay: &RelayState,
    t_max: f64,
) -> Result<Option<SwitchEvent>> {
    check_len(system, v)?;
    let h = relay.output();
    let hv = h.value();
    let which = h.target();
    let target = relay.threshold_value(which);
    let span = t_max - v.time;
    if !(span > 0.0) {
        return Ok(None);
    }
    let value_tol = EVENT_TOL * 1f64.max(relay.alpha().abs()).max(relay.beta().abs());

    // Signed distance to the target, negative inside the active region.
    let g = |tau: f64| {
        let (mean, rate) = mean_and_rate_at(system, v, hv, tau);
        (hv * (mean - target), hv * rate, rate)
    };

    let (g0, _, _) = g(0.0);
    if !g0.is_finite() {
        return Err(Error::Detection("non-finite mean temperature".into()));
    }
    if g0 > value_tol {
        return Err(Error::InconsistentRelay { distance: g0 });
    }
    let mut a = if g0 >= -value_tol {
        EVENT_TOL.min(span)
    } else {
        0.0
    };

    let lambda_max = system.guiding_lambda_max();
    let step = if lambda_max > 0.0 {
        (span / 64.0).min(1.0 / lambda_max)
    } else {
        span / 64.0
    };

    let (_, mut dga, _) = g(a);
    loop {
        let b = (a + step).min(span);
        let (gb, dgb, _) = g(b);
        if !gb.is_finite() {
            return Err(Error::Detection(format!(
                "non-finite signal at t = {}",
                v.time + b
            )));
        }
        let found = if gb >= 0.0 {
            Some(refine_root(&g, a, b))
        } else if dga > 0.0 && dgb < 0.0 {
            let peak = locate_peak(&g, a, b);
            let (gp, _, _) = g(peak);
            if gp > value_tol {
                Some(refine_root(&g, a, peak))
            } else if gp >= -value_tol {
                Some(peak)
            } else {
                None
            }
        } else {
            None
        };

        if let Some(tau) = found {
            let (gt, _, rate) = g(tau);
            if gt.abs() > value_tol {
                return Err(Error::Detection(format!(
                    "located switching misses the threshold by {gt:e} at t = {}",
                    v.time + tau
                )));
            }
            return Ok(Some(SwitchEvent {
                time: v.time + tau,
                offset: tau,
                threshold: which,
                rate,
                grazing: rate.abs() < GRAZE_TOL,
            }));
        }
        if b >= span {
            return Ok(None);
        }
        a = b;
        dga = dgb;
    }
}

/// Root of `g` in `[lo, hi]` with `g(lo) < 0 <= g(hi)`: bisection down to
/// `EVENT_TOL`, then Newton polishing kept inside the bracket.
fn refine_root<G>(g: &G, mut lo: f64, mut hi: f64) -> f64
where
    G: Fn(f64) -> (f64, f64, f64),
{
    for _ in 0..200 {
        if hi - lo <= EVENT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid).0 >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..8 {
        let (gx, dgx, _) = g(x);
        if gx == 0.0 || dgx.abs() < GRAZE_TOL {
            break;
        }
        let next = x - gx / dgx;
        if !(next >= lo && next <= hi) || next == x {
            break;
        }
        x = next;
    }
    x
}

/// Maximum of `g` in `[lo, hi]` given `g'(lo) > 0 > g'(hi)`.
fn locate_peak<G>(g: &G, mut lo: f64, mut hi: f64) -> f64
where
    G: Fn(f64) -> (f64, f64, f64),
{
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One constant-output piece of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub start_time: f64,
    pub end_time: f64,
    pub output: RelayOutput,
    pub start: ModeVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub alpha: f64,
    pub beta: f64,
    pub segments: Vec<Segment>,
    pub events: Vec<SwitchEvent>,
    pub terminal: ModeVector,
}

impl Trajectory {
    pub fn switch_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// State right after the `k`-th switching (0-based).
    pub fn state_after_switch(&self, k: usize) -> Option<&ModeVector> {
        self.segments.get(k + 1).map(|s| &s.start)
    }

    /// State at time `t` (right-continuous at switchings).
    pub fn state_at(&self, system: &SpectralSystem, t: f64) -> Option<ModeVector> {
        let first = self.segments.first()?;
        let last = self.segments.last()?;
        if t < first.start_time || t > last.end_time {
            return None;
        }
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| s.start_time <= t)
            .unwrap_or(first);
        Some(advance_modes(
            system,
            &seg.start,
            seg.output,
            t - seg.start_time,
        ))
    }

    /// CSV with columns `time,h,vhat,v_0..v_{n-1}`, sampled every `stride`
    /// plus at each switching time (where the new output is reported).
    pub fn to_csv(&self, system: &SpectralSystem, stride: f64) -> Result<String> {
        if !(stride > 0.0) {
            return Err(Error::Config(format!(
                "output stride must be positive, got {stride}"
            )));
        }
        let (Some(first), Some(last)) = (self.segments.first(), self.segments.last()) else {
            return Ok(String::new());
        };
        let (t0, t1) = (first.start_time, last.end_time);
        let mut times: Vec<f64> = Vec::new();
        let n_samples = ((t1 - t0) / stride).floor() as usize;
        for i in 0..=n_samples {
            times.push(t0 + i as f64 * stride);
        }
        times.extend(self.switch_times());
        times.sort_by(f64::total_cmp);
        times.dedup();

        let mut out = String::from("time,h,vhat");
        for j in 0..system.n_modes() {
            out.push_str(&format!(",v_{j}"));
        }
        out.push('\n');
        for t in times {
            let seg = self
                .segments
                .iter()
                .rev()
                .find(|s| s.start_time <= t)
                .unwrap_or(first);
            let v = advance_modes(system, &seg.start, seg.output, t - seg.start_time);
            out.push_str(&crate::export::fmt_real(t));
            out.push(',');
            out.push_str(if seg.output == RelayOutput::Plus {
                "1"
            } else {
                "-1"
            });
            out.push(',');
            out.push_str(&crate::export::fmt_real(mean_temperature(system, &v)));
            for x in &v.values {
                out.push(',');
                out.push_str(&crate::export::fmt_real(*x));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Simulates the switched system from `phi` over `[phi.time, phi.time + horizon]`.
pub fn simulate(
    system: &SpectralSystem,
    phi: &ModeVector,
    alpha: f64,
    beta: f64,
    horizon: f64,
) -> Result<Trajectory> {
    check_len(system, phi)?;
    if !(horizon > 0.0) {
        return Err(Error::Config(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if !phi.is_finite() {
        return Err(Error::Config("initial vector is not finite".into()));
    }
    let mut relay = RelayState::init(mean_temperature(system, phi), alpha, beta)?;
    let t_end = phi.time + horizon;
    let dwell_floor = DWELL_FRACTION * horizon;

    let mut segments = Vec::new();
    let mut events: Vec<SwitchEvent> = Vec::new();
    let mut short_gaps = 0usize;
    let mut current = phi.clone();
    loop {
        let h = relay.output();
        match next_switching(system, &current, &relay, t_end)? {
            None => {
                let terminal = advance_modes(system, &current, h, t_end - current.time);
                segments.push(Segment {
                    start_time: current.time,
                    end_time: t_end,
                    output: h,
                    start: current,
                });
                return Ok(Trajectory {
                    alpha,
                    beta,
                    segments,
                    events,
                    terminal,
                });
            }
            Some(event) => {
                if let Some(prev) = events.last() {
                    if event.time - prev.time < dwell_floor {
                        short_gaps += 1;
                        if short_gaps > 1 {
                            return Err(Error::ZenoSuspected {
                                t: event.time,
                                dwell_floor,
                            });
                        }
                    }
                }
                let mut next = advance_modes(system, &current, h, event.offset);
                next.time = event.time;
                segments.push(Segment {
                    start_time: current.time,
                    end_time: event.time,
                    output: h,
                    start: current,
                });
                relay.cross(event.threshold, event.time)?;
                events.push(event);
                current = next;
            }
        }
    }
}

/// Split of a mode vector into guiding (`{0} ∪ J`) and guided (`J_0`) parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    /// Guiding components, zeros elsewhere.
    pub guiding: ModeVector,
    /// Guided components, zeros elsewhere.
    pub guided: ModeVector,
    pub guiding_norm: f64,
    pub guided_norm: f64,
}

impl Decomposition {
    pub fn recombine(&self) -> ModeVector {
        let values = self
            .guiding
            .values
            .iter()
            .zip(&self.guided.values)
            .map(|(a, b)| a + b)
            .collect();
        ModeVector::new(values, self.guiding.time)
    }
}

pub fn decompose(system: &SpectralSystem, v: &ModeVector) -> Decomposition {
    let n = system.n_modes();
    let mut guiding = vec![0.0; n];
    let mut guided = vec![0.0; n];
    for &j in system.guiding_indices() {
        guiding[j] = v.values[j];
    }
    for &j in system.guided_indices() {
        guided[j] = v.values[j];
    }
    Decomposition {
        guiding_norm: weighted_norm_over(system, &v.values, system.guiding_indices()),
        guided_norm: weighted_norm_over(system, &v.values, system.guided_indices()),
        guiding: ModeVector::new(guiding, v.time),
        guided: ModeVector::new(guided, v.time),
    }
}

/// `(Σ_{j ∈ idx} (1 + λ_j) x_j²)^{1/2}`.
pub fn weighted_norm_over(system: &SpectralSystem, x: &[f64], idx: &[usize]) -> f64 {
    idx.iter()
        .map(|&j| (1.0 + system.lambda(j)) * x[j] * x[j])
        .sum::<f64>()
        .sqrt()
}

/// Weighted (H¹-type) norm over all modes.
pub fn weighted_norm(system: &SpectralSystem, x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(j, &xj)| (1.0 + system.lambda(j)) * xj * xj)
        .sum::<f64>()
        .sqrt()
}

/// Weighted distance between two mode vectors.
pub fn weighted_distance(system: &SpectralSystem, a: &ModeVector, b: &ModeVector) -> f64 {
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    weighted_norm(system, &diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::rod;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn reference_rod(n: usize) -> SpectralSystem {
        rod(n, &[(0, 2.0), (1, 4.0), (2, 4.0)]).unwrap()
    }

    /// Classical RK4 on `v_j' = -λ_j v_j + h K_j`, independent of the closed form.
    fn rk4(system: &SpectralSystem, v: &[f64], h: f64, dt: f64, step: f64) -> Vec<f64> {
        let f = |x: &[f64]| -> Vec<f64> {
            x.iter()
                .enumerate()
                .map(|(j, &xj)| -system.lambda(j) * xj + h * system.k(j))
                .collect()
        };
        let n_steps = (dt / step).round() as usize;
        let hstep = dt / n_steps as f64;
        let mut x = v.to_vec();
        for _ in 0..n_steps {
            let k1 = f(&x);
            let x2: Vec<f64> = x
                .iter()
                .zip(&k1)
                .map(|(a, k)| a + 0.5 * hstep * k)
                .collect();
            let k2 = f(&x2);
            let x3: Vec<f64> = x
                .iter()
                .zip(&k2)
                .map(|(a, k)| a + 0.5 * hstep * k)
                .collect();
            let k3 = f(&x3);
            let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + hstep * k).collect();
            let k4 = f(&x4);
            for i in 0..x.len() {
                x[i] += hstep / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }

    #[test]
    fn zero_step_is_identity() {
        let sys = reference_rod(5);
        let v = ModeVector::new(vec![0.3, -1.0, 2.0, 0.5, -0.25], 1.5);
        let w = advance_modes(&sys, &v, RelayOutput::Minus, 0.0);
        assert_eq!(v, w);
    }

    #[test]
    fn mode_equilibria_are_fixed() {
        let sys = reference_rod(5);
        for h in [RelayOutput::Plus, RelayOutput::Minus] {
            let mut values = vec![0.7];
            values.extend((1..5).map(|j| h.value() * sys.k(j) / sys.lambda(j)));
            let v = ModeVector::new(values, 0.0);
            let w = advance_modes(&sys, &v, h, 3.7);
            assert_eq!(&v.values[1..], &w.values[1..]);
            assert!((mean_rate(&sys, &v, h) - h.value() * sys.drift()).abs() < 1e-15);
        }
    }

    #[test]
    fn rod_unit_step_from_rest() {
        let sys = reference_rod(3);
        let w = advance_modes(&sys, &ModeVector::zeros(3), RelayOutput::Plus, 1.0);
        let c = (2.0 / PI).sqrt();
        let expected = [
            1.0 / PI.sqrt(),
            -c * (1.0 - (-1.0f64).exp()),
            c * (1.0 - (-4.0f64).exp()) / 4.0,
        ];
        for (a, b) in w.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        // Independent RK4 oracle, step 1e-4.
        let oracle = rk4(&sys, &[0.0; 3], 1.0, 1.0, 1e-4);
        for (a, b) in w.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((w.time - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_temperature_and_rate_examples() {
        let sys = reference_rod(3);
        assert_eq!(mean_temperature(&sys, &ModeVector::zeros(3)), 0.0);
        let v = ModeVector::new(vec![1.0, 0.5, -0.25], 0.0);
        assert_eq!(mean_temperature(&sys, &v), 3.0);

        let single = rod(1, &[(0, 1.7)]).unwrap();
        assert_eq!(
            mean_temperature(&single, &ModeVector::new(vec![2.0], 0.0)),
            3.4
        );
        assert_eq!(
            mean_rate(
                &single,
                &ModeVector::new(vec![-4.0], 0.0),
                RelayOutput::Plus
            ),
            single.drift()
        );

        let rate = mean_rate(&sys, &ModeVector::zeros(3), RelayOutput::Plus);
        assert!((rate - 2.0 / PI.sqrt()).abs() < 1e-15);
        assert!((rate - sys.m_sum()).abs() < 1e-15);
    }

    #[test]
    fn single_mode_switching_times() {
        let sys = rod(1, &[(0, 2.0)]).unwrap();
        let (alpha, beta) = (0.0, 1.0);
        let expected = (beta - alpha) / sys.drift();
        let v = ModeVector::new(vec![alpha / 2.0], 0.0);
        let relay = RelayState::init(alpha, alpha, beta).unwrap();
        let ev = next_switching(&sys, &v, &relay, 100.0).unwrap().unwrap();
        assert!((ev.time - expected).abs() < 1e-12);
        assert_eq!(ev.threshold, Threshold::Beta);
        assert!(!ev.grazing);

        let v = ModeVector::new(vec![beta / 2.0], 0.0);
        let relay = RelayState::with_output(alpha, beta, RelayOutput::Minus);
        let ev = next_switching(&sys, &v, &relay, 100.0).unwrap().unwrap();
        assert!((ev.time - expected).abs() < 1e-12);
        assert_eq!(ev.threshold, Threshold::Alpha);
    }

    #[test]
    fn no_crossing_before_limit() {
        let sys = rod(1, &[(0, 1.0)]).unwrap();
        let relay = RelayState::init(0.0, 0.0, 1.0).unwrap();
        let r = next_switching(&sys, &ModeVector::zeros(1), &relay, 0.5).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn inconsistent_relay_is_reported() {
        let sys = rod(1, &[(0, 1.0)]).unwrap();
        let relay = RelayState::with_output(0.0, 1.0, RelayOutput::Plus);
        let v = ModeVector::new(vec![5.0], 0.0);
        assert!(matches!(
            next_switching(&sys, &v, &relay, 10.0),
            Err(Error::InconsistentRelay { .. })
        ));
    }

    #[test]
    fn tangential_touch_is_a_grazing_switch() {
        // From rest with h = +1: v̂' = 1 - 4e^{-t} + 6e^{-4t}, which has an
        // interior maximum. Put β exactly at that maximum.
        let sys =
            SpectralSystem::new(vec![0.0, 1.0, 4.0], vec![1.0; 3], vec![1.0, -4.0, 6.0]).unwrap();
        let v = ModeVector::zeros(3);
        let slope = |t: f64| 1.0 - 4.0 * (-t).exp() + 6.0 * (-4.0 * t).exp();
        let (mut lo, mut hi) = (0.05, 0.5);
        assert!(slope(lo) > 0.0 && slope(hi) < 0.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let t_star = 0.5 * (lo + hi);
        let peak = mean_temperature(&sys, &advance_modes(&sys, &v, RelayOutput::Plus, t_star));
        let relay = RelayState::init(0.0, -1.0, peak).unwrap();
        let ev = next_switching(&sys, &v, &relay, 5.0).unwrap().unwrap();
        assert!(ev.grazing);
        assert!((ev.time - t_star).abs() < 1e-6);

        // Slightly above the peak there is no attainment at all on this arc.
        let relay = RelayState::init(0.0, -1.0, peak + 1e-6).unwrap();
        let ev = next_switching(&sys, &v, &relay, 5.0).unwrap().unwrap();
        assert!(ev.time > 1.0 && !ev.grazing);
    }

    #[test]
    fn single_mode_square_wave() {
        let sys = rod(1, &[(0, 2.0)]).unwrap();
        let (alpha, beta) = (0.0, 0.5);
        let half = (beta - alpha) / sys.drift();
        let phi = ModeVector::new(vec![alpha / sys.m(0)], 0.0);
        let traj = simulate(&sys, &phi, alpha, beta, 10.0).unwrap();
        let times = traj.switch_times();
        assert_eq!(times.len(), (10.0 / half).floor() as usize);
        for (k, t) in times.iter().enumerate() {
            assert!(
                (t - (k + 1) as f64 * half).abs() < 1e-10,
                "switch {k} at {t}"
            );
        }
        for w in traj.segments.windows(2) {
            assert_ne!(w[0].output, w[1].output);
            assert_eq!(w[0].end_time, w[1].start_time);
        }
    }

    #[test]
    fn short_horizon_has_one_segment() {
        let sys = reference_rod(5);
        let phi = ModeVector::zeros(5);
        let traj = simulate(&sys, &phi, 0.0, 1.0, 0.01).unwrap();
        assert_eq!(traj.segments.len(), 1);
        assert!(traj.events.is_empty());
        assert!((traj.terminal.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn simulate_rejects_bad_input() {
        let sys = reference_rod(5);
        assert!(simulate(&sys, &ModeVector::zeros(4), 0.0, 1.0, 1.0).is_err());
        assert!(simulate(&sys, &ModeVector::zeros(5), 0.0, 1.0, 0.0).is_err());
        assert!(simulate(&sys, &ModeVector::zeros(5), 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn decomposition_examples() {
        let sys = reference_rod(5);
        let v = ModeVector::new(vec![1.0; 5], 0.0);
        let d = decompose(&sys, &v);
        assert_eq!(d.guided_norm * d.guided_norm, 27.0);
        assert_eq!(d.guiding.values, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.recombine(), v);

        let v = ModeVector::new(vec![0.0, 0.0, 0.0, 2.0, -1.0], 0.0);
        let d = decompose(&sys, &v);
        assert_eq!(d.guiding_norm, 0.0);
        assert_eq!(d.guided_norm * d.guided_norm, 10.0 * 4.0 + 17.0);
    }

    #[test]
    fn csv_contains_switch_rows() {
        let sys = rod(1, &[(0, 2.0)]).unwrap();
        let traj = simulate(&sys, &ModeVector::zeros(1), 0.0, 0.5, 1.0).unwrap();
        let csv = traj.to_csv(&sys, 0.25).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "time,h,vhat,v_0");
        assert_eq!(lines.len(), 1 + 5 + traj.events.len());
        assert!(csv.ends_with('\n'));
    }

    proptest! {
        #[test]
        fn semigroup(a in 0.0f64..3.0, b in 0.0f64..3.0, seed in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let sys = rod(6, &[(0, 1.0), (2, 3.0)]).unwrap();
            let v = ModeVector::new(seed, 0.0);
            let direct = advance_modes(&sys, &v, RelayOutput::Minus, a + b);
            let split = advance_modes(&sys, &advance_modes(&sys, &v, RelayOutput::Minus, a), RelayOutput::Minus, b);
            for (x, y) in direct.values.iter().zip(&split.values) {
                prop_assert!((x - y).abs() <= 8.0 * f64::EPSILON * (1.0 + x.abs() + 12.0 * a.max(b)));
            }
        }

        #[test]
        fn closed_form_matches_rk4(dt in 0.01f64..2.0, seed in proptest::collection::vec(-1.0f64..1.0, 4), plus in any::<bool>()) {
            let sys = rod(4, &[(0, 2.0), (1, 4.0)]).unwrap();
            let h = if plus { RelayOutput::Plus } else { RelayOutput::Minus };
            let exact = advance_modes(&sys, &ModeVector::new(seed.clone(), 0.0), h, dt);
            let oracle = rk4(&sys, &seed, h.value(), dt, 1e-3);
            for (x, y) in exact.values.iter().zip(&oracle) {
                // λ_max = 9, step 1e-3: local error ~ (λh)^5/120 per step
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }

        #[test]
        fn guided_contraction(t in 0.1f64..5.0, d in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let sys = reference_rod(6);
            let base = ModeVector::new(vec![0.1, 0.2, -0.1, 0.05, 0.0, 0.3], 0.0);
            let mut other = base.clone();
            for (i, &j) in sys.guided_indices().iter().enumerate() {
                other.values[j] += d[i];
            }
            let ta = simulate(&sys, &base, 0.0, 0.3, t).unwrap();
            let tb = simulate(&sys, &other, 0.0, 0.3, t).unwrap();
            prop_assert_eq!(ta.switch_times(), tb.switch_times());
            let d0 = weighted_norm_over(&sys, &d.iter().enumerate().fold(vec![0.0; 6], |mut acc, (i, x)| { acc[sys.guided_indices()[i]] = *x; acc }), sys.guided_indices());
            let diff: Vec<f64> = tb.terminal.values.iter().zip(&ta.terminal.values).map(|(x, y)| x - y).collect();
            let dt = weighted_norm_over(&sys, &diff, sys.guided_indices());
            prop_assert!(dt <= (-sys.kappa() * t).exp() * d0 * (1.0 + 1e-6) + 1e-15);
        }
    }
}
