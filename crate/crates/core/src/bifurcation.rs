//! Bifurcation sets of the symmetric periodic solutions.
//!
//! As `s` varies, the candidate `ψ(s)` changes character at
//! * `S0`: `F(s) = 0`,
//! * `S1`: `F > 0`, no earlier crossing, and `v̂` touches `β` tangentially at `t = s`,
//! * `S2`: `F > 0` and every earlier zero of `H(·, s)` is a tangency,
//! * `S3`: `F > 0` and `F'(s) = 0` (a fold in the gap).
//!
//! The gaps `F(s)` over `S1 ∪ S2 ∪ S3` are the only places where the number
//! of periodic solutions can change.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::export::{csv_line, fmt_real};
use crate::periodic::{self, char_f, char_f_prime, char_h_t, first_crossing_check};
use crate::spectral::SpectralSystem;

/// Residual tolerance for set membership.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BifurcationKind {
    #[serde(rename = "S0")]
    S0,
    #[serde(rename = "S1_graze_valid")]
    S1GrazeValid,
    #[serde(rename = "S2_graze_invalid")]
    S2GrazeInvalid,
    #[serde(rename = "S3_fold")]
    S3Fold,
    /// Earlier zeros of `H(·, s)` of which some are tangential and some
    /// transversal; this belongs to none of the sets above.
    #[serde(rename = "mixed")]
    Mixed,
}

impl BifurcationKind {
    pub fn name(self) -> &'static str {
        match self {
            BifurcationKind::S0 => "S0",
            BifurcationKind::S1GrazeValid => "S1_graze_valid",
            BifurcationKind::S2GrazeInvalid => "S2_graze_invalid",
            BifurcationKind::S3Fold => "S3_fold",
            BifurcationKind::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub s: f64,
    /// `F(s)`, the threshold gap at which this happens.
    pub gap: f64,
    pub kind: BifurcationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramRow {
    pub s: f64,
    pub f: f64,
    pub f_prime: f64,
    pub valid: bool,
    pub grazing: bool,
    /// `∂H/∂t(s, s)`.
    pub endpoint_rate: f64,
    /// Value of the highest interior maximum of `H(·, s)`, if any.
    pub peak: Option<f64>,
}

impl DiagramRow {
    pub fn at(system: &SpectralSystem, s: f64) -> Self {
        let f = char_f(system, s);
        let check = first_crossing_check(system, s);
        Self {
            s,
            f,
            f_prime: char_f_prime(system, s),
            valid: f > 0.0 && check.valid,
            grazing: check.grazing,
            endpoint_rate: check.endpoint_rate,
            peak: check.peak.map(|(_, h)| h),
        }
    }
}

/// Membership of `s` in one of the bifurcation sets, tested in the order
/// S0, S1, S2, S3.
pub fn classify_s(system: &SpectralSystem, s: f64, tol: f64) -> Option<BifurcationPoint> {
    let f = char_f(system, s);
    let point = |kind, detail: String| {
        Some(BifurcationPoint {
            s,
            gap: f,
            kind,
            detail,
        })
    };
    if f.abs() <= tol {
        return point(BifurcationKind::S0, format!("F = {f:e}"));
    }
    if f < 0.0 {
        return None;
    }
    let check = first_crossing_check(system, s);
    // Near-tangent maxima count as contacts at this tolerance.
    let mut tau = check.tau_set.clone();
    if let Some((tp, hp)) = check.peak {
        if hp.abs() <= tol && !tau.iter().any(|t| (t - tp).abs() <= 1e-9 * s) {
            tau.push(tp);
        }
    }
    let q = check.endpoint_rate;
    if tau.is_empty() && q.abs() <= tol {
        return point(
            BifurcationKind::S1GrazeValid,
            format!("dH/dt(s, s) = {q:e}"),
        );
    }
    if !tau.is_empty() {
        let rates: Vec<f64> = tau.iter().map(|&t| char_h_t(system, t, s)).collect();
        let tangential = rates.iter().filter(|r| r.abs() <= tol).count();
        if tangential == tau.len() {
            return point(
                BifurcationKind::S2GrazeInvalid,
                format!("tangency at t = {:?}, dH/dt = {:?}", tau, rates),
            );
        }
        if tangential > 0 {
            return point(
                BifurcationKind::Mixed,
                format!(
                    "mixed: {tangential} of {} earlier zeros are tangential, at t = {:?}",
                    tau.len(),
                    tau
                ),
            );
        }
    }
    let fp = char_f_prime(system, s);
    if fp.abs() <= tol {
        return point(BifurcationKind::S3Fold, format!("F' = {fp:e}"));
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagram {
    pub rows: Vec<DiagramRow>,
    pub points: Vec<BifurcationPoint>,
}

impl Diagram {
    /// Columns `s,F,Fprime,valid,grazing`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,F,Fprime,valid,grazing\n");
        for r in &self.rows {
            out.push_str(&csv_line([
                fmt_real(r.s),
                fmt_real(r.f),
                fmt_real(r.f_prime),
                u8::from(r.valid).to_string(),
                u8::from(r.grazing).to_string(),
            ]));
        }
        out
    }

    pub fn points_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.points).map_err(|e| Error::Consistency(e.to_string()))
    }

    /// Gaps at which the solution count may change (`F` over S1, S2, S3),
    /// ascending.
    pub fn sigma_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.kind != BifurcationKind::S0)
            .map(|p| p.gap)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn bisect_sign<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let lo_pos = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if (f(mid) > 0.0) == lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Highest interior maximum of `H(·, s)`, or `NaN` when there is none.
fn peak_value(system: &SpectralSystem, s: f64) -> f64 {
    first_crossing_check(system, s)
        .peak
        .map_or(f64::NAN, |(_, h)| h)
}

/// Diagram rows on a log-uniform grid and every bifurcation point whose
/// residual changes sign between consecutive rows.
pub fn scan_diagram(
    system: &SpectralSystem,
    s_min: f64,
    s_max: f64,
    n_points: usize,
) -> Result<Diagram> {
    if !(s_min > 0.0 && s_max > s_min) {
        return Err(Error::Config(format!(
            "need 0 < s_min < s_max, got {s_min}, {s_max}"
        )));
    }
    if n_points < 2 {
        return Err(Error::Config(format!(
            "need at least two grid points, got {n_points}"
        )));
    }
    let ratio = (s_max / s_min).ln();
    let grid: Vec<f64> = (0..n_points)
        .map(|i| {
            if i + 1 == n_points {
                s_max
            } else {
                s_min * (ratio * i as f64 / (n_points - 1) as f64).exp()
            }
        })
        .collect();
    let rows: Vec<DiagramRow> = grid
        .par_iter()
        .map(|&s| DiagramRow::at(system, s))
        .collect();

    let mut points: Vec<BifurcationPoint> = rows
        .par_windows(2)
        .flat_map_iter(|w| interval_points(system, &w[0], &w[1]))
        .collect();
    points.sort_by(|a, b| a.s.total_cmp(&b.s));
    Ok(Diagram { rows, points })
}

fn interval_points(
    system: &SpectralSystem,
    a: &DiagramRow,
    b: &DiagramRow,
) -> Vec<BifurcationPoint> {
    let mut out = Vec::new();
    let changes = |x: f64, y: f64| (x > 0.0) != (y > 0.0);
    let make = |s: f64, kind: BifurcationKind, detail: String| BifurcationPoint {
        s,
        gap: char_f(system, s),
        kind,
        detail,
    };
    if changes(a.f, b.f) {
        let s = bisect_sign(|s| char_f(system, s), a.s, b.s);
        out.push(make(
            s,
            BifurcationKind::S0,
            format!("F = {:e}", char_f(system, s)),
        ));
    }
    if changes(a.f_prime, b.f_prime) {
        let s = bisect_sign(|s| char_f_prime(system, s), a.s, b.s);
        if char_f(system, s) > 0.0 {
            out.push(make(
                s,
                BifurcationKind::S3Fold,
                format!("F' = {:e}", char_f_prime(system, s)),
            ));
        }
    }
    if changes(a.endpoint_rate, b.endpoint_rate) {
        let s = bisect_sign(|s| periodic::char_h_t(system, s, s), a.s, b.s);
        let check = first_crossing_check(system, s);
        if char_f(system, s) > 0.0 && check.valid {
            out.push(make(
                s,
                BifurcationKind::S1GrazeValid,
                format!("dH/dt(s, s) = {:e}", check.endpoint_rate),
            ));
        }
    }
    if let (Some(pa), Some(pb)) = (a.peak, b.peak) {
        if changes(pa, pb) {
            let s = bisect_sign(|s| peak_value(system, s), a.s, b.s);
            let f = char_f(system, s);
            let check = first_crossing_check(system, s);
            if let (true, Some((tp, hp))) = (f > 0.0, check.peak) {
                let others = check
                    .tau_set
                    .iter()
                    .filter(|t| (*t - tp).abs() > 1e-9 * s)
                    .count();
                let (kind, detail) = if others == 0 {
                    (
                        BifurcationKind::S2GrazeInvalid,
                        format!("tangency at t = {tp}, H = {hp:e}"),
                    )
                } else {
                    (
                        BifurcationKind::Mixed,
                        format!(
                            "mixed: tangency at t = {tp} with {others} transversal earlier zeros"
                        ),
                    )
                };
                out.push(make(s, kind, detail));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapCount {
    pub gap: f64,
    pub n_valid: usize,
    pub n_ghost: usize,
}

/// Number of valid and ghost symmetric candidates for each gap.
pub fn count_solutions_vs_gap(
    system: &SpectralSystem,
    gaps: &[f64],
    s_max: f64,
) -> Result<Vec<GapCount>> {
    gaps.par_iter()
        .map(|&gap| {
            let en = periodic::enumerate_periodic(system, 0.0, gap, s_max)?;
            Ok(GapCount {
                gap,
                n_valid: en.n_valid(),
                n_ghost: en.n_ghost(),
            })
        })
        .collect()
}
