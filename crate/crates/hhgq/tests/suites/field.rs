use super::common::{c, simpson};
use hhgq::field::{classical_action, electric_field, excursion, vector_potential, FieldParams, Sin2Pulse};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn params() -> impl Strategy<Value = FieldParams> {
    (0.02..0.1f64, 0.03..0.1f64, 0.3..0.9f64).prop_map(|(e0, w, ip)| FieldParams::new(e0, w, ip, 5e-3, 1).unwrap())
}

fn complex_time(fp: &FieldParams) -> impl Strategy<Value = C64> {
    let span = 2.0 * fp.period();
    (-span..span, -20.0..20.0f64).prop_map(|(re, im)| c(re, im))
}

/// Five-point stencil derivative.
fn derivative(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
}

proptest! {
    #![proptest_config(super::common::cases(1000))]

    fn field_is_minus_time_derivative_of_potential(fp in params(), t in -500.0..500.0f64) {
        let a = |s: f64| vector_potential(c(s, 0.0), &fp).re;
        let e = electric_field(c(t, 0.0), &fp).re;
        let d = derivative(a, t, 0.02);
        prop_assert!((-d - e).abs() / fp.E0 < 1e-8, "t = {t}: -dA/dt = {}, E = {e}", -d);
    }
}

proptest! {
    #![proptest_config(super::common::cases(100))]

    fn closed_forms_match_quadrature(
        (fp, t1, t2) in params().prop_flat_map(|fp| (Just(fp), complex_time(&fp), complex_time(&fp))),
        pr in -2.0..2.0f64,
        pi in -0.5..0.5f64,
    ) {
        let p = c(pr, pi);
        let vel = |t: C64| p + vector_potential(t, &fp);
        let ex = simpson(&vel, t1, t2, 1e-13);
        let got = excursion(p, t1, t2, &fp);
        prop_assert!((got - ex).norm() < 1e-10 * ex.norm().max(1.0), "excursion {got} vs {ex}");
        let kin = |t: C64| 0.5 * vel(t) * vel(t);
        let sc = simpson(&kin, t1, t2, 1e-13);
        let got = classical_action(p, t1, t2, &fp);
        prop_assert!((got - sc).norm() < 1e-10 * sc.norm().max(1.0), "action {got} vs {sc}");
    }

    fn half_period_antisymmetry(
        (fp, t) in params().prop_flat_map(|fp| (Just(fp), complex_time(&fp))),
    ) {
        let shift = t + PI / fp.omegaL;
        let scale_e = fp.E0 * (fp.omegaL * t).cos().norm().max(1.0);
        let scale_a = scale_e / fp.omegaL;
        let de = electric_field(shift, &fp) + electric_field(t, &fp);
        let da = vector_potential(shift, &fp) + vector_potential(t, &fp);
        prop_assert!(de.norm() < 1e-12 * scale_e * (1.0 + t.norm()), "E: {de}");
        prop_assert!(da.norm() < 1e-12 * scale_a * (1.0 + t.norm()), "A: {da}");
    }

    fn pulse_potential_and_its_integral(e0 in 0.03..0.08f64, cycles in 2.0..10.0f64, frac in 0.02..0.98f64) {
        let pulse = Sin2Pulse { e0, omega: 0.057, cycles };
        let t = frac * pulse.duration();
        let d = derivative(|s| pulse.vector_potential(s), t, 0.02);
        prop_assert!((-d - pulse.field(t)).abs() / e0 < 1e-8);
        let d = derivative(|s| pulse.vector_potential_integral(s), t, 0.02);
        prop_assert!((d - pulse.vector_potential(t)).abs() / (e0 / 0.057) < 1e-8);
    }
}

fn cutoff_of_the_two_figure_fields() {
    assert_eq!(hhgq::field::cutoff_harmonic(&FieldParams::standard(0.053)), 21);
    assert_eq!(hhgq::field::cutoff_harmonic(&FieldParams::standard(0.065)), 27);
}

pub const CHECKS: &[(&str, fn())] = &[
    ("field_is_minus_time_derivative_of_potential", field_is_minus_time_derivative_of_potential),
    ("closed_forms_match_quadrature", closed_forms_match_quadrature),
    ("half_period_antisymmetry", half_period_antisymmetry),
    ("pulse_potential_and_its_integral", pulse_potential_and_its_integral),
    ("cutoff_of_the_two_figure_fields", cutoff_of_the_two_figure_fields),
];
