//! Acceptance criteria at their pinned tolerances. Each test prints one
//! PASS/FAIL line (run with `--nocapture` to see them).

use bdy_cheat::equilibrium::{equilibrium_ratio, quadratic_residual};
use bdy_cheat::verify::{self, CriterionReport, VerifyOptions};
use bdy_cheat::ModelParams64;

fn check(report: CriterionReport) {
    println!("{}", report.line());
    assert!(report.passed, "{}", report.line());
}

/// Root of the quadratic by plain bisection on its sign change in `(0, 1 - gamma)`.
fn quadratic_bisection_oracle(p: &ModelParams64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0 - p.gamma());
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if quadratic_residual(p, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_1_equilibrium() {
    let p = ModelParams64::default();
    let r = equilibrium_ratio(&p);
    assert!((r - quadratic_bisection_oracle(&p)).abs() < 1e-12);
    assert!((r - verify::mean_equation_root(&p)).abs() < 1e-12);
    check(verify::criterion_equilibrium());
}

#[test]
fn criterion_2_ode_convergence() {
    check(verify::criterion_ode_convergence());
}

#[test]
fn criterion_3_entropy_monotonicity() {
    check(verify::criterion_entropy());
}

#[test]
fn criterion_4_abm_stationarity() {
    check(verify::criterion_abm_stationarity(VerifyOptions::default()));
}

#[test]
fn criterion_5_gini() {
    check(verify::criterion_gini(VerifyOptions::default()));
}

#[test]
fn criterion_6a_operator_zero_sum() {
    check(verify::property_zero_sum(VerifyOptions::default()));
}

#[test]
fn criterion_6b_geometric_fixed_points() {
    check(verify::property_fixed_points(VerifyOptions::default()));
}

#[test]
fn criterion_6c_poincare_inequality() {
    check(verify::property_poincare(VerifyOptions::default()));
}

#[test]
fn criterion_6d_energy_dissipation() {
    check(verify::property_dissipation(VerifyOptions::default()));
}

#[test]
fn criterion_6e_h_maximality() {
    check(verify::property_maximality(VerifyOptions::default()));
}

#[test]
fn criterion_6f_rk4_order() {
    check(verify::property_rk4_order());
}

#[test]
fn criterion_6g_linearization_defect() {
    check(verify::property_linearization_defect(VerifyOptions::default()));
}

#[test]
fn criterion_7_abm_vs_ode() {
    check(verify::criterion_cross_validation(VerifyOptions::default()));
}
