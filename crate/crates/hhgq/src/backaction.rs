//! Per-orbit quantum-optical ingredients: dipole elements, saddle prefactors,
//! recombination amplitudes and the displacement of the field modes.
//!
//! The displacement integrand uses the τ-dependent excursion Δr(p, τ, t_ion),
//! i.e. the charge current accumulated since ionization.

use crate::field::{electric_field, excursion, vector_potential, FieldParams, Sin2Pulse};
use crate::orbits::{action_hessian, det3, Branch, OrbitSolution};
use crate::quad::{integrate_segment, QuadratureFailure};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

/// Gate under which the Hessian counts as degenerate.
pub const DEGENERATE_DET: f64 = 1e-18;

/// Overall normalization multiplying G·M. The saddle prefactor is fixed only
/// up to a constant; this value puts the linear entropy at E0 = 0.065,
/// q = 19, g1 = 5e-3, Nat = 1e5 on the 1e-2 scale.
pub const AMPLITUDE_SCALE: f64 = 5.0e-4;

#[derive(Debug, Error, PartialEq)]
pub enum BackactionError {
    #[error("Hessian determinant {0:e} below the coalescence gate")]
    DegenerateHessian(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureFailure),
    #[error("grid of {requested} points exceeds the budget of {budget}")]
    ResourceExceeded { requested: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitAmplitude {
    pub q: i64,
    pub branch: Branch,
    pub amplitude: C64,
    pub delta1: C64,
    pub delta_spectrum: Option<BTreeMap<i64, C64>>,
}

fn dipole_alpha(ip: f64) -> f64 {
    0.8 * ip
}

/// ⟨g|r̂|v⟩ for a Gaussian ground state of width set by α = 0.8 Ip.
pub fn dipole_matrix_element(v: C64, ip: f64) -> C64 {
    let a = dipole_alpha(ip);
    C64::i() * (1.0 / (PI * a)).powf(0.75) * (v / a) * (-v * v / (2.0 * a)).exp()
}

/// ⟨v|r̂|g⟩, the analytic continuation of the conjugate element.
pub fn ionization_matrix_element(v: C64, ip: f64) -> C64 {
    -dipole_matrix_element(v, ip)
}

pub fn coupling(q: i64, fp: &FieldParams) -> f64 {
    fp.g1 * (q as f64).sqrt()
}

/// ∫_{t_ion}^{t_re} Δr(p, t_ion, τ) e^{i q1 ω τ} dτ from its antiderivative.
pub fn displacement_integral(q1: i64, orbit: &OrbitSolution, fp: &FieldParams) -> C64 {
    let w = fp.omegaL;
    let k = q1 as f64 * w;
    let (ti, tr, p) = (orbit.t_ion, orbit.t_re, orbit.p_s);
    let c = fp.E0 / (w * w);
    let i = C64::i();
    let ex = |f: f64, t: C64| -> C64 {
        // ∫ e^{i f τ} dτ
        if f.abs() < 1e-14 {
            t
        } else {
            (i * f * t).exp() / (i * f)
        }
    };
    let prim = |t: C64| -> C64 {
        let lin = (i * k * t).exp() * ((t - ti) / (i * k) + 1.0 / (k * k));
        let cosine = 0.5 * (ex(k + w, t) + ex(k - w, t));
        p * lin + c * (cosine - (w * ti).cos() * ex(k, t))
    };
    prim(tr) - prim(ti)
}

pub fn displacement_delta(q1: i64, orbit: &OrbitSolution, fp: &FieldParams) -> Result<C64, BackactionError> {
    let v = displacement_integral(q1, orbit, fp);
    if !v.is_finite() {
        return Ok(coupling(q1, fp) * displacement_by_quadrature(q1, orbit, fp, 1e-12)?);
    }
    Ok(coupling(q1, fp) * v)
}

/// Same integral evaluated by adaptive quadrature along the segment.
pub fn displacement_by_quadrature(q1: i64, orbit: &OrbitSolution, fp: &FieldParams, tol: f64) -> Result<C64, QuadratureFailure> {
    let k = q1 as f64 * fp.omegaL;
    integrate_segment(
        |tau| excursion(orbit.p_s, orbit.t_ion, tau, fp) * (C64::i() * k * tau).exp(),
        orbit.t_ion,
        orbit.t_re,
        tol,
    )
}

pub fn displacement_spectrum(orbit: &OrbitSolution, fp: &FieldParams, q1_max: i64) -> Result<BTreeMap<i64, C64>, BackactionError> {
    (1..=q1_max).map(|q1| Ok((q1, displacement_delta(q1, orbit, fp)?))).collect()
}

pub fn hessian_determinant(orbit: &OrbitSolution, fp: &FieldParams) -> C64 {
    det3(&action_hessian(&orbit.theta(), fp))
}

/// (2π)^{3/2} / sqrt(det H), principal square root.
pub fn saddle_prefactor(orbit: &OrbitSolution, fp: &FieldParams) -> Result<C64, BackactionError> {
    let d = hessian_determinant(orbit, fp);
    if !(d.norm() >= DEGENERATE_DET) {
        return Err(BackactionError::DegenerateHessian(d.norm()));
    }
    Ok((2.0 * PI).powf(1.5) / d.sqrt())
}

/// Picks the sign of a square-root-valued quantity closest to its value at
/// the previous q along the same branch.
pub fn continue_branch(previous: Option<C64>, value: C64) -> C64 {
    match previous {
        Some(p) if (value + p).norm() < (value - p).norm() => -value,
        _ => value,
    }
}

/// M_q without the saddle prefactor and without the global Ip phase.
pub fn recombination_amplitude(orbit: &OrbitSolution, fp: &FieldParams) -> C64 {
    let vi = orbit.p_s + vector_potential(orbit.t_ion, fp);
    let vr = orbit.p_s + vector_potential(orbit.t_re, fp);
    coupling(orbit.q, fp)
        * (-C64::i() * orbit.action).exp()
        * dipole_matrix_element(vr, fp.Ip)
        * electric_field(orbit.t_ion, fp)
        * ionization_matrix_element(vi, fp.Ip)
}

pub fn orbit_amplitude(orbit: &OrbitSolution, fp: &FieldParams) -> Result<OrbitAmplitude, BackactionError> {
    orbit_amplitude_with(orbit, fp, None)
}

pub fn orbit_amplitude_with(orbit: &OrbitSolution, fp: &FieldParams, prefactor: Option<C64>) -> Result<OrbitAmplitude, BackactionError> {
    let g = match prefactor {
        Some(g) => g,
        None => saddle_prefactor(orbit, fp)?,
    };
    Ok(OrbitAmplitude {
        q: orbit.q,
        branch: orbit.branch,
        amplitude: AMPLITUDE_SCALE * g * recombination_amplitude(orbit, fp),
        delta1: displacement_delta(1, orbit, fp)?,
        delta_spectrum: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGrid {
    /// Points on the recombination-time axis.
    pub n_t2: usize,
    /// Points on the ionization-time axis over the whole pulse; only t1 < t2
    /// is summed.
    pub n_t1: usize,
    /// Maximum number of (t2, t1) pairs.
    pub budget: usize,
}

impl Default for ChannelGrid {
    fn default() -> Self {
        ChannelGrid { n_t2: 4000, n_t1: 4000, budget: 50_000_000 }
    }
}

/// Unnormalized one-photon probabilities for emission at ionization (P_t1)
/// and at recombination (P_t2). The momentum integral is done exactly (the
/// integrand is Gaussian times a quadratic in p); both time integrals use the
/// trapezoid rule. D(δ) and the δ part of the classical field are set to
/// identity, being O(g).
pub fn channel_probabilities(q: i64, pulse: &Sin2Pulse, ip: f64, g1: f64, grid: &ChannelGrid) -> Result<(f64, f64), BackactionError> {
    let requested = grid.n_t2.saturating_mul(grid.n_t1);
    if requested > grid.budget {
        return Err(BackactionError::ResourceExceeded { requested, budget: grid.budget });
    }
    let tmax = pulse.duration();
    let n2 = grid.n_t2.max(2);
    let n1 = grid.n_t1.max(2);
    let h2 = tmax / (n2 - 1) as f64;
    let h1 = tmax / (n1 - 1) as f64;

    // ∫₀ᵗ A² by Simpson's rule on a fine sub-grid.
    let fine = |t: f64| -> f64 { pulse.vector_potential(t).powi(2) };
    let cumulative_a2 = |t: f64| -> f64 {
        let m = ((t / tmax) * 4000.0).ceil().max(2.0) as usize * 2;
        let h = t / m as f64;
        let mut s = fine(0.0) + fine(t);
        for j in 1..m {
            s += if j % 2 == 1 { 4.0 } else { 2.0 } * fine(j as f64 * h);
        }
        s * h / 3.0
    };
    let t1s: Vec<f64> = (0..n1).map(|j| j as f64 * h1).collect();
    let t2s: Vec<f64> = (0..n2).map(|j| j as f64 * h2).collect();
    let ia2_1: Vec<f64> = t1s.par_iter().map(|&t| cumulative_a2(t)).collect();
    let ia2_2: Vec<f64> = t2s.par_iter().map(|&t| cumulative_a2(t)).collect();

    let alpha = dipole_alpha(ip);
    let norm = (1.0 / (PI * alpha)).powf(1.5) / (alpha * alpha);
    let qw = q as f64 * pulse.omega;
    let i = C64::i();

    let rows: Vec<(C64, C64)> = (0..n2)
        .into_par_iter()
        .map(|j2| {
            let t2 = t2s[j2];
            let a2 = pulse.vector_potential(t2);
            let ia2 = pulse.vector_potential_integral(t2);
            let mut acc1 = C64::new(0.0, 0.0);
            let mut acc2 = C64::new(0.0, 0.0);
            for (j1, &t1) in t1s.iter().enumerate() {
                if t1 > t2 {
                    break;
                }
                let a1 = pulse.vector_potential(t1);
                let dt = t2 - t1;
                let d_ia = ia2 - pulse.vector_potential_integral(t1);
                let d_ia2 = ia2_2[j2] - ia2_1[j1];
                // ∫dp (p+a1)(p+a2) exp(−βp² − γp − κ − i∫A²/2)
                let beta = C64::new(1.0 / alpha, 0.5 * dt);
                let gamma = C64::new((a1 + a2) / alpha, d_ia);
                let kappa = C64::new((a1 * a1 + a2 * a2) / (2.0 * alpha), 0.5 * d_ia2);
                let mu = -gamma / (2.0 * beta);
                let poly = 1.0 / (2.0 * beta) + mu * mu + (a1 + a2) * mu + a1 * a2;
                let gauss = (PI / beta).sqrt() * (gamma * gamma / (4.0 * beta) - kappa).exp();
                let core = norm * poly * gauss * (i * ip * (t1 - t2)).exp();
                let w = if j1 == 0 || (t2 - t1) < 0.5 * h1 { 0.5 } else { 1.0 };
                acc1 += w * core * pulse.field(t2) * (i * qw * t1).exp();
                acc2 += w * core * pulse.field(t1) * (i * qw * t2).exp();
            }
            let w2 = if j2 == 0 || j2 == n2 - 1 { 0.5 } else { 1.0 };
            (acc1 * h1 * w2, acc2 * h1 * w2)
        })
        .collect();
    let mut s1 = C64::new(0.0, 0.0);
    let mut s2 = C64::new(0.0, 0.0);
    for (a, b) in rows {
        s1 += a;
        s2 += b;
    }
    let g = g1 * (q as f64).sqrt();
    Ok(((g * h2 * s1).norm_sqr(), (g * h2 * s2).norm_sqr()))
}
