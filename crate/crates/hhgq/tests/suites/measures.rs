use super::common::c;
use hhgq::fock::{coherent_state, displacement_operator_spectral, tensor_states, QOperator, QState};
use hhgq::measures::{linear_entropy, log_negativity, wigner, WignerSpec};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn amplitudes(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n).prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
}

fn pure(dims: Vec<usize>) -> impl Strategy<Value = QState> {
    let n = dims.iter().product();
    amplitudes(n)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.norm() > 1e-3))
        .prop_map(move |v| QState::vector(dims.clone(), v).unwrap().normalized())
}

fn bipartite_pure() -> impl Strategy<Value = QState> {
    (2..6usize, 2..5usize).prop_flat_map(|(a, b)| pure(vec![a, b]))
}

fn mixture_of(states: &[QState], weights: &[f64]) -> QState {
    let mut acc = QOperator::zeros(states[0].dims());
    for (s, w) in states.iter().zip(weights) {
        acc = acc.add(&s.as_operator().scale(c(*w, 0.0)));
    }
    QState::from_operator(acc).normalized()
}

/// Low-photon superposition (n < 4) in a roomy single-mode space, displaced by γ.
fn displaced_low_state(raw: &[C64], gamma: C64, dim: usize) -> QState {
    let mut v = vec![c(0.0, 0.0); dim];
    v[..raw.len()].copy_from_slice(raw);
    let s = QState::vector(vec![dim], v).unwrap().normalized();
    QState::vector(vec![dim], displacement_operator_spectral(gamma, dim).apply(s.data())).unwrap()
}

proptest! {
    #![proptest_config(super::common::cases(100))]

    fn wigner_translates_with_displacement(
        raw in amplitudes(4).prop_filter("nonzero", |v| v.iter().any(|x| x.norm() > 1e-2)),
        k in -4i32..=4, l in -4i32..=4,
    ) {
        let dim = 60;
        let step = 0.25;
        let spec = WignerSpec { re_range: (-3.0, 3.0), im_range: (-3.0, 3.0), resolution: (25, 25) };
        let base = displaced_low_state(&raw, c(0.0, 0.0), dim);
        let moved = displaced_low_state(&raw, c(k as f64 * step, l as f64 * step), dim);
        let w0 = wigner(&base, &spec).unwrap();
        let w1 = wigner(&moved, &spec).unwrap();
        for j in 0..25i32 {
            for i in 0..25i32 {
                let (i1, j1) = (i + k, j + l);
                if !(0..25).contains(&i1) || !(0..25).contains(&j1) {
                    continue;
                }
                let a = w0.value(i as usize, j as usize);
                let b = w1.value(i1 as usize, j1 as usize);
                prop_assert!((a - b).abs() < 1e-9, "({i},{j}) shifted by ({k},{l}): {a} vs {b}");
            }
        }
    }

    fn wigner_integral_and_bounds(
        raw in amplitudes(4).prop_filter("nonzero", |v| v.iter().any(|x| x.norm() > 1e-2)),
        gr in -1.0..1.0f64, gi in -1.0..1.0f64,
    ) {
        let s = displaced_low_state(&raw, c(gr, gi), 50);
        let spec = WignerSpec { re_range: (-6.0, 6.0), im_range: (-6.0, 6.0), resolution: (97, 97) };
        let w = wigner(&s, &spec).unwrap();
        prop_assert!((w.integral() - 1.0).abs() < 0.02, "integral {}", w.integral());
        prop_assert!(w.min() >= -2.0 / PI - 1e-12 && w.max() <= 2.0 / PI + 1e-12);
    }

    fn log_negativity_ignores_which_subsystem(
        states in prop::collection::vec(bipartite_pure_fixed(), 1..4),
        weights in prop::collection::vec(0.1..1.0f64, 4),
    ) {
        let rho = mixture_of(&states, &weights);
        let a = log_negativity(&rho, 0).unwrap();
        let b = log_negativity(&rho, 1).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        prop_assert!(a >= -1e-12);
    }

    fn separable_mixtures_have_zero_negativity(
        parts in prop::collection::vec((pure(vec![3]), pure(vec![4])), 1..5),
        weights in prop::collection::vec(0.1..1.0f64, 5),
    ) {
        let products: Vec<QState> = parts.iter().map(|(a, b)| tensor_states(a, b).unwrap()).collect();
        let rho = mixture_of(&products, &weights);
        prop_assert!(log_negativity(&rho, 0).unwrap().abs() < 1e-9);
    }

    fn linear_entropy_is_symmetric_for_pure_states(s in bipartite_pure()) {
        let a = linear_entropy(&s, 0).unwrap();
        let b = linear_entropy(&s, 1).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        let d = s.dims()[0].min(s.dims()[1]) as f64;
        prop_assert!(a >= -1e-12 && a <= 1.0 - 1.0 / d + 1e-12);
    }

    fn coherent_wigner_is_gaussian(r in 3.0..5.0f64, t in 0.0..std::f64::consts::TAU) {
        let alpha = C64::from_polar(r, t);
        let (s, _) = coherent_state(alpha, 120).unwrap();
        let spec = WignerSpec {
            re_range: (alpha.re - 1.0, alpha.re + 1.0),
            im_range: (alpha.im - 1.0, alpha.im + 1.0),
            resolution: (9, 9),
        };
        let w = wigner(&s, &spec).unwrap();
        for j in 0..9 {
            for i in 0..9 {
                let beta = c(w.re_at(i), w.im_at(j));
                let want = 2.0 / PI * (-2.0 * (beta - alpha).norm_sqr()).exp();
                prop_assert!((w.value(i, j) - want).abs() < 1e-9, "{beta}: {} vs {want}", w.value(i, j));
            }
        }
    }
}

fn bipartite_pure_fixed() -> impl Strategy<Value = QState> {
    pure(vec![3, 4])
}

fn bell_state_has_one_ebit() {
    let s = 1.0 / 2.0_f64.sqrt();
    let mut v = vec![c(0.0, 0.0); 4];
    v[0] = c(s, 0.0);
    v[3] = c(0.0, s);
    let bell = QState::vector(vec![2, 2], v).unwrap();
    for which in 0..2 {
        assert!((log_negativity(&bell, which).unwrap() - 1.0).abs() < 1e-9);
    }
    assert!((linear_entropy(&bell, 0).unwrap() - 0.5).abs() < 1e-12);
}

pub const CHECKS: &[(&str, fn())] = &[
    ("wigner_translates_with_displacement", wigner_translates_with_displacement),
    ("wigner_integral_and_bounds", wigner_integral_and_bounds),
    ("log_negativity_ignores_which_subsystem", log_negativity_ignores_which_subsystem),
    ("separable_mixtures_have_zero_negativity", separable_mixtures_have_zero_negativity),
    ("linear_entropy_is_symmetric_for_pure_states", linear_entropy_is_symmetric_for_pure_states),
    ("coherent_wigner_is_gaussian", coherent_wigner_is_gaussian),
    ("bell_state_has_one_ebit", bell_state_has_one_ebit),
];
