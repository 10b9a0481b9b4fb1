use super::common::{c, matmul};
use hhgq::fock::{
    coherent_state, displacement_matrix_elements, displacement_operator, displacement_operator_spectral,
    hermitian_eigenvalues, partial_trace, partial_transpose, tensor_states, QOperator, QState, StateKind,
};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn amplitudes(n: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n).prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
}

fn random_vector(dims: Vec<usize>) -> impl Strategy<Value = QState> {
    let n = dims.iter().product();
    amplitudes(n).prop_filter("nonzero", |v| v.iter().any(|x| x.norm() > 1e-3)).prop_map(move |v| QState::vector(dims.clone(), v).unwrap())
}

fn bipartite_dims() -> impl Strategy<Value = Vec<usize>> {
    (2..6usize, 2..5usize).prop_map(|(a, b)| vec![a, b])
}

/// Mixture of up to four random pure states, left unnormalized.
fn random_mixture() -> impl Strategy<Value = QState> {
    bipartite_dims().prop_flat_map(|dims| {
        (prop::collection::vec(random_vector(dims.clone()), 1..5), prop::collection::vec(0.1..1.0f64, 4))
            .prop_map(move |(vs, ws)| {
                let mut acc = QOperator::zeros(&dims);
                for (v, w) in vs.iter().zip(ws) {
                    acc = acc.add(&v.as_operator().scale(c(w, 0.0)));
                }
                QState::from_operator(acc)
            })
    })
}

fn random_hermitian() -> impl Strategy<Value = QOperator> {
    (1..30usize).prop_flat_map(|n| {
        amplitudes(n * n).prop_map(move |v| {
            let m = QOperator::from_data(vec![n], v).unwrap();
            m.add(&m.adjoint()).scale(c(0.5, 0.0))
        })
    })
}

fn density_invariants(rho: &QState) -> Result<(), TestCaseError> {
    prop_assert_eq!(rho.kind(), StateKind::DensityMatrix);
    let r = rho.normalized();
    let op = r.as_operator();
    prop_assert!(op.hermitian_deviation() < 1e-10);
    prop_assert!((op.trace() - c(1.0, 0.0)).norm() < 1e-12);
    let ev = hermitian_eigenvalues(&op).unwrap();
    prop_assert!(ev[0] > -1e-9, "min eigenvalue {}", ev[0]);
    Ok(())
}

fn low_block_diff(a: &QOperator, b: &QOperator, k: usize) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            m = m.max((a.get(i, j) - b.get(i, j)).norm());
        }
    }
    m
}

fn small_alpha() -> impl Strategy<Value = C64> {
    (0.0..1.6f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| C64::from_polar(r, t))
}

proptest! {
    #![proptest_config(super::common::cases(100))]

    fn pure_state_densities(s in bipartite_dims().prop_flat_map(random_vector)) {
        density_invariants(&s.to_density())?;
        density_invariants(&partial_trace(&s, &[0]).unwrap())?;
        density_invariants(&partial_trace(&s, &[1]).unwrap())?;
    }

    fn mixed_state_densities(rho in random_mixture()) {
        density_invariants(&rho)?;
        density_invariants(&partial_trace(&rho, &[1]).unwrap())?;
    }

    fn graded_low_rank_spectra(n in 40..120usize, rank in 1..10usize, decade in 1.0..4.0f64, seed in any::<u64>()) {
        let mut acc = QOperator::zeros(&[n]);
        let mut x = seed | 1;
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for k in 0..rank {
            let v: Vec<C64> = (0..n).map(|_| c(next(), next())).collect();
            let s = QState::vector(vec![n], v).unwrap().normalized();
            acc = acc.add(&s.as_operator().scale(c(10f64.powf(-decade * k as f64), 0.0)));
        }
        let ev = hermitian_eigenvalues(&acc).unwrap();
        prop_assert!((ev.iter().sum::<f64>() - acc.trace().re).abs() < 1e-9);
        prop_assert!(ev[0] > -1e-9);
        density_invariants(&QState::from_operator(acc))?;
    }

    fn coherent_densities(alpha in small_alpha(), dim in 30..60usize) {
        let (s, leak) = coherent_state(alpha, dim).unwrap();
        prop_assert!(leak < 1e-6);
        density_invariants(&s.to_density())?;
    }

    fn displacement_composition(alpha in small_alpha(), beta in small_alpha()) {
        let dim = 60;
        let phase = C64::from_polar(1.0, (alpha * beta.conj()).im);
        for route in [displacement_operator, displacement_operator_spectral, displacement_matrix_elements] {
            let lhs = route(alpha, dim).matmul(&route(beta, dim));
            let rhs = route(alpha + beta, dim).scale(phase);
            prop_assert!(low_block_diff(&lhs, &rhs, 15) < 1e-7);
            let id = route(alpha, dim).matmul(&route(-alpha, dim));
            prop_assert!(low_block_diff(&id, &QOperator::identity(&[dim]), dim / 2) < 1e-7);
        }
    }

    fn eigenvalue_sums(h in random_hermitian()) {
        let ev = hermitian_eigenvalues(&h).unwrap();
        let tr = h.trace().re;
        prop_assert!((ev.iter().sum::<f64>() - tr).abs() < 1e-9);
        let tr2 = h.matmul(&h).trace().re;
        prop_assert!((ev.iter().map(|v| v * v).sum::<f64>() - tr2).abs() < 1e-9);
        prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    }

    fn two_by_two_spectrum(a in -2.0..2.0f64, d in -2.0..2.0f64, br in -2.0..2.0f64, bi in -2.0..2.0f64) {
        let b = c(br, bi);
        let h = QOperator::from_data(vec![2], vec![c(a, 0.0), b, b.conj(), c(d, 0.0)]).unwrap();
        let mid = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        let ev = hermitian_eigenvalues(&h).unwrap();
        prop_assert!((ev[0] - (mid - r)).abs() < 1e-12 && (ev[1] - (mid + r)).abs() < 1e-12);
    }

    fn product_reductions_recover_factors(a in random_vector(vec![4]), b in random_vector(vec![3])) {
        let (a, b) = (a.normalized(), b.normalized());
        let ab = tensor_states(&a, &b).unwrap();
        let ra = partial_trace(&ab, &[0]).unwrap();
        prop_assert!(ra.as_operator().max_abs_diff(&a.as_operator()) < 1e-12);
        let rb = partial_trace(&ab, &[1]).unwrap();
        prop_assert!(rb.as_operator().max_abs_diff(&b.as_operator()) < 1e-12);
    }

    fn partial_transpose_is_an_involution(rho in random_mixture(), which in 0..2usize) {
        let once = QState::from_operator(partial_transpose(&rho, which).unwrap());
        let twice = partial_transpose(&once, which).unwrap();
        prop_assert!(twice.max_abs_diff(&rho.as_operator()) < 1e-15);
        let both = partial_transpose(&QState::from_operator(partial_transpose(&rho, 0).unwrap()), 1).unwrap();
        prop_assert!(both.max_abs_diff(&rho.as_operator().transpose()) < 1e-15);
    }

    fn serialization_round_trips(rho in random_mixture(), v in bipartite_dims().prop_flat_map(random_vector)) {
        for s in [rho, v] {
            prop_assert_eq!(&QState::from_bytes(&s.to_bytes()).unwrap(), &s);
            prop_assert_eq!(&QState::from_json(&s.to_json()).unwrap(), &s);
        }
    }
}

fn matmul_agrees_with_naive_product() {
    let n = 7;
    let a: Vec<C64> = (0..n * n).map(|k| c((k as f64 * 0.37).sin(), (k as f64 * 0.11).cos())).collect();
    let b: Vec<C64> = (0..n * n).map(|k| c((k as f64 * 0.23).cos(), (k as f64 * 0.71).sin())).collect();
    let oa = QOperator::from_data(vec![n], a.clone()).unwrap();
    let ob = QOperator::from_data(vec![n], b.clone()).unwrap();
    let want = QOperator::from_data(vec![n], matmul(&a, &b, n)).unwrap();
    assert!(oa.matmul(&ob).max_abs_diff(&want) < 1e-13);
}

pub const CHECKS: &[(&str, fn())] = &[
    ("pure_state_densities", pure_state_densities),
    ("mixed_state_densities", mixed_state_densities),
    ("graded_low_rank_spectra", graded_low_rank_spectra),
    ("coherent_densities", coherent_densities),
    ("displacement_composition", displacement_composition),
    ("eigenvalue_sums", eigenvalue_sums),
    ("two_by_two_spectrum", two_by_two_spectrum),
    ("product_reductions_recover_factors", product_reductions_recover_factors),
    ("partial_transpose_is_an_involution", partial_transpose_is_an_involution),
    ("serialization_round_trips", serialization_round_trips),
    ("matmul_agrees_with_naive_product", matmul_agrees_with_naive_product),
];
