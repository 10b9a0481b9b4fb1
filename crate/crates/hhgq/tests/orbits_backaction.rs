#[path = "suites/common.rs"]
#[allow(dead_code)]
mod common;

use common::simpson;
use hhgq::backaction::{displacement_delta, displacement_integral, displacement_spectrum, orbit_amplitude};
use hhgq::field::{cutoff_harmonic, excursion, FieldParams};
use hhgq::orbits::{residual_norm, saddle_residuals, solve_orbit_pair, Branch, OrbitSolution, Window};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;

fn plateau(e0: f64) -> (FieldParams, Vec<(i64, Vec<OrbitSolution>)>) {
    let fp = FieldParams::standard(e0);
    let w = Window::one_cycle(&fp);
    let pairs = (15..cutoff_harmonic(&fp)).map(|q| (q, solve_orbit_pair(q, &fp, w, 1000).unwrap())).collect();
    (fp, pairs)
}

fn branch(pair: &[OrbitSolution], b: Branch) -> OrbitSolution {
    *pair.iter().find(|o| o.branch == b).unwrap()
}

#[test]
fn plateau_roots_are_valid_and_ordered() {
    for e0 in [0.053, 0.065] {
        let (fp, pairs) = plateau(e0);
        let w = Window::one_cycle(&fp);
        for (q, pair) in &pairs {
            assert_eq!(pair.len(), 2, "E0 {e0} q {q}");
            for o in pair {
                assert!(residual_norm(&saddle_residuals(&o.theta(), *q, &fp)) < 1e-10);
                for t in [o.t_ion.re, o.t_re.re] {
                    assert!(t >= w.start && t <= w.end, "E0 {e0} q {q}: {t} outside the window");
                }
            }
            assert!(branch(pair, Branch::Short).t_re.re < branch(pair, Branch::Long).t_re.re);
        }
        for win in pairs.windows(2) {
            let (a, b) = (&win[0].1, &win[1].1);
            assert!(branch(b, Branch::Short).t_re.re > branch(a, Branch::Short).t_re.re);
            assert!(branch(b, Branch::Long).t_re.re < branch(a, Branch::Long).t_re.re);
        }
    }
}

#[test]
fn shifted_window_maps_roots() {
    let fp = FieldParams::standard(0.065);
    let half = PI / fp.omegaL;
    for q in [17, 21, 25] {
        let base = solve_orbit_pair(q, &fp, Window::one_cycle(&fp), 1000).unwrap();
        let moved = solve_orbit_pair(q, &fp, Window::one_cycle(&fp).shifted(half), 1000).unwrap();
        assert_eq!(base.len(), moved.len());
        for (a, b) in base.iter().zip(&moved) {
            assert_eq!(a.branch, b.branch);
            assert!((a.t_ion + half - b.t_ion).norm() < 1e-8);
            assert!((a.t_re + half - b.t_re).norm() < 1e-8);
            assert!((a.p_s + b.p_s).norm() < 1e-8);
        }
    }
}

#[test]
fn coupling_enters_linearly() {
    let fp = FieldParams::standard(0.053);
    let pair = solve_orbit_pair(19, &fp, Window::one_cycle(&fp), 1000).unwrap();
    let fp3 = fp.with_g1(3.0 * fp.g1);
    for o in &pair {
        for q1 in 1..=4 {
            let a = displacement_delta(q1, o, &fp).unwrap();
            let b = displacement_delta(q1, o, &fp3).unwrap();
            assert!((b - 3.0 * a).norm() <= 1e-14 * b.norm());
        }
        let a = orbit_amplitude(o, &fp).unwrap();
        let b = orbit_amplitude(o, &fp3).unwrap();
        assert!((b.amplitude - 3.0 * a.amplitude).norm() <= 1e-14 * b.amplitude.norm());
    }
}

#[test]
fn fundamental_dominates_the_displacement_spectrum() {
    for e0 in [0.053, 0.065] {
        let (fp, pairs) = plateau(e0);
        for (q, pair) in &pairs {
            for o in pair {
                let s: Vec<f64> = displacement_spectrum(o, &fp, 6).unwrap().values().map(|v| v.norm()).collect();
                assert!(s.windows(2).all(|w| w[0] > w[1]), "E0 {e0} q {q} {}: {s:?}", o.branch);
            }
        }
    }
}

#[test]
fn branches_converge_toward_cutoff() {
    for e0 in [0.053, 0.065] {
        let (fp, pairs) = plateau(e0);
        let gaps: Vec<f64> = pairs[pairs.len() - 4..]
            .iter()
            .map(|(_, p)| {
                let d = |b| displacement_delta(1, &branch(p, b), &fp).unwrap();
                (d(Branch::Long) - d(Branch::Short)).norm()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "E0 {e0}: {gaps:?}");
    }
}

#[test]
fn displacement_integral_matches_quadrature() {
    let (fp, pairs) = plateau(0.065);
    for (_, pair) in pairs.iter().step_by(3) {
        for o in pair {
            for q1 in 1..=5 {
                let k = q1 as f64 * fp.omegaL;
                let f = |tau: C64| excursion(o.p_s, o.t_ion, tau, &fp) * (C64::i() * k * tau).exp();
                let want = simpson(&f, o.t_ion, o.t_re, 1e-12);
                let got = displacement_integral(q1, o, &fp);
                assert!((got - want).norm() < 1e-10 * want.norm().max(1.0), "{got} vs {want}");
            }
        }
    }
}
