//! Observables on states: photon numbers, linear entropy, logarithmic
//! negativity and Wigner functions.

use crate::fock::{hermitian_eigenvalues, partial_trace, partial_transpose, split_index, FockError, QState, StateKind};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const NEGATIVE_EIGENVALUE: f64 = -1e-10;
pub const PURITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("state is mixed (purity {0}), linear entropy needs a pure state")]
    MixedInput(f64),
    #[error("mode {mode} carries {fraction:e} of the weight at or above dim/2")]
    SupportOverflow { mode: usize, fraction: f64 },
    #[error("Wigner function needs a single-mode state, got {0} modes")]
    NotSingleMode(usize),
    #[error(transparent)]
    Fock(#[from] FockError),
}

pub fn mean_photon(state: &QState, mode: usize) -> f64 {
    let s = state.normalized();
    let dims = s.dims().to_vec();
    let n = s.size();
    (0..n)
        .map(|i| {
            let w = match s.kind() {
                StateKind::Vector => s.data()[i].norm_sqr(),
                StateKind::DensityMatrix => s.data()[i * n + i].re,
            };
            w * split_index(&dims, i)[mode] as f64
        })
        .sum()
}

fn require_pure(state: &QState) -> Result<(), MeasureError> {
    let p = state.purity();
    if p < 1.0 - PURITY_TOL {
        return Err(MeasureError::MixedInput(p));
    }
    Ok(())
}

/// 1 − tr(ρ²) of the reduction obtained by tracing out the modes in `traced`.
pub fn linear_entropy_of(state: &QState, traced: &[usize]) -> Result<f64, MeasureError> {
    require_pure(state)?;
    let keep: Vec<usize> = (0..state.dims().len()).filter(|m| !traced.contains(m)).collect();
    let r = partial_trace(&state.normalized(), &keep)?;
    let purity: f64 = r.data().iter().map(|v| v.norm_sqr()).sum();
    Ok(1.0 - purity)
}

pub fn linear_entropy(state: &QState, traced: usize) -> Result<f64, MeasureError> {
    linear_entropy_of(state, &[traced])
}

/// log₂(2N + 1), N the magnitude of the negative part of the spectrum of the
/// partial transpose over `which`.
pub fn log_negativity(rho: &QState, which: usize) -> Result<f64, MeasureError> {
    let r = match rho.kind() {
        StateKind::Vector => rho.normalized().to_density(),
        StateKind::DensityMatrix => rho.normalized(),
    };
    let pt = partial_transpose(&r, which)?;
    let ev = hermitian_eigenvalues(&pt)?;
    let neg: f64 = ev.iter().filter(|&&v| v < NEGATIVE_EIGENVALUE).map(|v| -v).sum();
    Ok((2.0 * neg + 1.0).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WignerSpec {
    pub re_range: (f64, f64),
    pub im_range: (f64, f64),
    pub resolution: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub re_range: (f64, f64),
    pub im_range: (f64, f64),
    pub resolution: (usize, usize),
    /// Row-major over (Im β, Re β).
    pub values: Vec<f64>,
}

impl WignerGrid {
    fn step(range: (f64, f64), n: usize) -> f64 {
        if n < 2 {
            0.0
        } else {
            (range.1 - range.0) / (n - 1) as f64
        }
    }

    pub fn re_at(&self, i: usize) -> f64 {
        self.re_range.0 + i as f64 * Self::step(self.re_range, self.resolution.0)
    }

    pub fn im_at(&self, j: usize) -> f64 {
        self.im_range.0 + j as f64 * Self::step(self.im_range, self.resolution.1)
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution.0 + i]
    }

    pub fn cell_area(&self) -> f64 {
        Self::step(self.re_range, self.resolution.0) * Self::step(self.im_range, self.resolution.1)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> (f64, f64) {
        let k = (0..self.values.len()).max_by(|&a, &b| self.values[a].total_cmp(&self.values[b])).unwrap_or(0);
        (self.re_at(k % self.resolution.0), self.im_at(k / self.resolution.0))
    }

    /// Interior points strictly above their eight neighbours and above
    /// `floor` times the global maximum.
    pub fn local_maxima(&self, floor: f64) -> Vec<(f64, f64, f64)> {
        let (nr, ni) = self.resolution;
        let gate = floor * self.max();
        let mut out = Vec::new();
        for j in 1..ni.saturating_sub(1) {
            for i in 1..nr.saturating_sub(1) {
                let v = self.value(i, j);
                if v <= gate {
                    continue;
                }
                let top = (-1i64..=1).all(|dj| {
                    (-1i64..=1).all(|di| (di == 0 && dj == 0) || v > self.value((i as i64 + di) as usize, (j as i64 + dj) as usize))
                });
                if top {
                    out.push((self.re_at(i), self.im_at(j), v));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_beta,im_beta,W\n");
        for j in 0..self.resolution.1 {
            for i in 0..self.resolution.0 {
                s.push_str(&format!("{:.6},{:.6},{:.12e}\n", self.re_at(i), self.im_at(j), self.value(i, j)));
            }
        }
        s
    }
}

/// ρ regrouped by diagonal, ρ[n, n+off] at `diag[off][n]`, plus √n tables.
struct Diagonals {
    diag: Vec<Vec<C64>>,
    sqrt: Vec<f64>,
    inv_sqrt: Vec<f64>,
}

impl Diagonals {
    fn new(rho: &[C64], dim: usize) -> Self {
        let diag = (0..dim).map(|off| (0..dim - off).map(|n| rho[n * dim + n + off]).collect()).collect();
        let sqrt: Vec<f64> = (0..=dim).map(|n| (n as f64).sqrt()).collect();
        let inv_sqrt = sqrt.iter().map(|v| if *v > 0.0 { 1.0 / v } else { 0.0 }).collect();
        Diagonals { diag, sqrt, inv_sqrt }
    }

    /// tr(ρ D(α) Π), with ⟨m|D(α)|n⟩ generated diagonal by diagonal from the
    /// normalized Laguerre recurrence. Hermiticity pairs each element above
    /// the diagonal with its mirror.
    fn displaced_parity(&self, alpha: C64) -> f64 {
        let x = alpha.norm_sqr();
        let phase = if x > 0.0 { alpha / alpha.norm() } else { C64::new(1.0, 0.0) };
        let lnx = x.ln();
        let (sq, isq) = (&self.sqrt, &self.inv_sqrt);
        let mut ln_fact = 0.0;
        let mut up = C64::new(1.0, 0.0);
        let mut acc = 0.0;
        for (off, d) in self.diag.iter().enumerate() {
            if off > 0 {
                if x == 0.0 {
                    break;
                }
                ln_fact += (off as f64).ln();
                up *= phase;
            }
            let kf = off as f64;
            let mut prev = 0.0;
            let mut cur = (-0.5 * x + if off > 0 { 0.5 * kf * lnx - 0.5 * ln_fact } else { 0.0 }).exp();
            let mut part = 0.0;
            let mut sign = 1.0;
            for (n, r) in d.iter().enumerate() {
                part += sign * cur * (r.re * up.re - r.im * up.im);
                let next = ((2.0 * n as f64 + 1.0 + kf - x) * cur - sq[n] * sq[n + off] * prev) * isq[n + 1] * isq[n + off + 1];
                prev = cur;
                cur = next;
                sign = -sign;
            }
            acc += if off == 0 { part } else { 2.0 * part };
        }
        acc
    }
}

/// W(β) = (2/π) tr(D(β) Π D(−β) ρ) = (2/π) tr(ρ D(2β) Π), evaluated with the
/// untruncated matrix elements of D(2β).
pub fn wigner(rho: &QState, spec: &WignerSpec) -> Result<WignerGrid, MeasureError> {
    if rho.dims().len() != 1 {
        return Err(MeasureError::NotSingleMode(rho.dims().len()));
    }
    let r = match rho.kind() {
        StateKind::Vector => rho.normalized().to_density(),
        StateKind::DensityMatrix => rho.normalized(),
    };
    let dim = r.size();
    let frac = crate::hhgstate::support_fractions(&r)[0];
    if frac > crate::hhgstate::SUPPORT_TOL {
        return Err(MeasureError::SupportOverflow { mode: 0, fraction: frac });
    }
    let (nr, ni) = spec.resolution;
    let mut grid = WignerGrid { re_range: spec.re_range, im_range: spec.im_range, resolution: spec.resolution, values: Vec::new() };
    let diagonals = Diagonals::new(r.data(), dim);
    let values = (0..nr * ni)
        .into_par_iter()
        .map(|idx| {
            let beta = C64::new(grid.re_at(idx % nr), grid.im_at(idx / nr));
            2.0 / PI * diagonals.displaced_parity(2.0 * beta)
        })
        .collect();
    grid.values = values;
    Ok(grid)
}
