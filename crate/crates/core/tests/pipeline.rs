//! Cross-module checks through the public API only.

use hystheat_core::acceptance::reference_rod;
use hystheat_core::bifurcation::{count_solutions_vs_gap, scan_diagram, BifurcationKind};
use hystheat_core::periodic::{char_f, verify_by_simulation};
use hystheat_core::poincare::{guiding_jacobian_fd, measure_rate, RateOptions, FD_EPS};
use hystheat_core::stability::{classify, matrix_a, CLASSIFY_TOL};
use hystheat_core::{enumerate_periodic, simulate, StabilityClass};

#[test]
fn enumerate_verify_classify_rate() {
    let sys = reference_rod(3.2, 16);
    let en = enumerate_periodic(&sys, 0.0, 0.4, 10.0).unwrap();
    assert_eq!(en.n_valid(), 2);
    assert_eq!(en.n_ghost(), 1);
    for sol in en.valid() {
        let v = verify_by_simulation(&sys, sol, 1e-8).unwrap();
        assert!(v.passed, "{:?}", v.mismatches);
    }
    let slow = en.valid().max_by(|a, b| a.s.total_cmp(&b.s)).unwrap();
    let report = classify(&sys, slow, CLASSIFY_TOL).unwrap();
    assert_eq!(report.classification, StabilityClass::Stable);

    let rate = measure_rate(&sys, slow, RateOptions::default()).unwrap();
    assert!(rate.fitted_factor < 1.0);
    assert!(rate.relative_error() < 0.2, "{}", rate.relative_error());

    let fd = guiding_jacobian_fd(&sys, slow, FD_EPS).unwrap();
    let a = matrix_a(&sys, slow.s).unwrap();
    let err = fd.sub(&a.mul(&a)).max_abs();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gap_counts_agree_with_enumeration() {
    let sys = reference_rod(2.0, 16);
    let gaps = [0.05, 0.1, 0.2, 0.24, 0.3];
    let counts = count_solutions_vs_gap(&sys, &gaps, 10.0).unwrap();
    for c in &counts {
        let en = enumerate_periodic(&sys, 1.0, 1.0 + c.gap, 10.0).unwrap();
        assert_eq!((c.n_valid, c.n_ghost), (en.n_valid(), en.n_ghost()));
    }
}

#[test]
fn no_candidates_above_the_global_maximum_of_f() {
    let sys = reference_rod(2.0, 16);
    let diagram = scan_diagram(&sys, 1e-3, 10.0, 400).unwrap();
    let f_max = diagram.rows.iter().map(|r| r.f).fold(f64::MIN, f64::max);
    let en = enumerate_periodic(&sys, 0.0, f_max * 1.01, 10.0).unwrap();
    assert!(en.solutions.is_empty());
}

#[test]
fn sigma_values_separate_constant_counts() {
    let sys = reference_rod(3.2, 16);
    let diagram = scan_diagram(&sys, 1e-3, 10.0, 400).unwrap();
    let sigma = diagram.sigma_values();
    assert!(diagram
        .points
        .iter()
        .any(|p| p.kind == BifurcationKind::S3Fold));
    // The count only changes across Σ; check two gaps on either side of
    // the midpoint between neighbouring Σ values give equal counts.
    for w in sigma.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 1e-3 {
            continue;
        }
        let a = lo + 0.25 * (hi - lo);
        let b = lo + 0.75 * (hi - lo);
        let counts = count_solutions_vs_gap(&sys, &[a, b], 10.0).unwrap();
        assert_eq!(
            (counts[0].n_valid, counts[0].n_ghost),
            (counts[1].n_valid, counts[1].n_ghost),
            "between {lo} and {hi}"
        );
    }
}

#[test]
fn diagram_csv_round_trips() {
    let sys = reference_rod(2.0, 8);
    let diagram = scan_diagram(&sys, 0.01, 2.0, 50).unwrap();
    let csv = diagram.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("s,F,Fprime,valid,grazing"));
    for (line, row) in lines.zip(&diagram.rows) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0].parse::<f64>().unwrap(), row.s);
        assert_eq!(fields[1].parse::<f64>().unwrap(), row.f);
        assert_eq!(fields[1].parse::<f64>().unwrap(), char_f(&sys, row.s));
    }
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
}

#[test]
fn solution_record_json_shape() {
    let sys = reference_rod(2.0, 16);
    let en = enumerate_periodic(&sys, 0.0, 0.1, 10.0).unwrap();
    let rec = serde_json::to_value(en.solutions[0].record()).unwrap();
    for key in ["s", "T", "valid", "grazing", "F_value", "min_H_margin", "psi"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
    assert_eq!(rec["psi"].as_array().unwrap().len(), 16);
}

#[test]
fn simulation_is_deterministic() {
    let sys = reference_rod(3.2, 16);
    let en = enumerate_periodic(&sys, 0.0, 0.4, 10.0).unwrap();
    let sol = &en.solutions[0];
    let a = simulate(&sys, &sol.psi, 0.0, 0.4, 5.0).unwrap();
    let b = simulate(&sys, &sol.psi, 0.0, 0.4, 5.0).unwrap();
    assert_eq!(a.to_csv(&sys, 0.05).unwrap(), b.to_csv(&sys, 0.05).unwrap());
}
