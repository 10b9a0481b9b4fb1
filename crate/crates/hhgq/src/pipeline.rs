//! One scan point end to end: orbits, amplitudes, the many-atom state, its
//! heralded reductions and the measures reported for it.

use crate::backaction::{orbit_amplitude, BackactionError, OrbitAmplitude};
use crate::field::FieldParams;
use crate::fock::{partial_trace, split_index, FockError, QState};
use crate::hhgstate::{
    herald_three_mode, herald_two_mode, many_atom_state_graded_unchecked, HeraldResult, KernelSpec, ManyAtomState, ModeLayout,
    StateError, SUPPORT_TOL,
};
use crate::measures::{linear_entropy_of, log_negativity, mean_photon, wigner, MeasureError, WignerGrid, WignerSpec};
use crate::orbits::{solve_orbits, Branch, OrbitError, OrbitSolution, Window};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue floor when restricting a mode to the range of its
/// reduced state.
pub const RANGE_TOL: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Backaction(#[from] BackactionError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error("mode {mode} needs a truncation above the cap of {cap}")]
    ResourceExceeded { mode: usize, cap: usize },
}

/// Per-mode truncations. With `adaptive`, a mode that fails the support rule
/// is enlarged by half until it passes or reaches `max_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub fundamental: usize,
    pub harmonic: usize,
    #[serde(default = "yes")]
    pub adaptive: bool,
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
}

fn yes() -> bool {
    true
}

fn default_max_dim() -> usize {
    1200
}

impl Truncation {
    pub fn desk() -> Self {
        Truncation { fundamental: 60, harmonic: 6, adaptive: true, max_dim: default_max_dim() }
    }

    pub fn paper() -> Self {
        Truncation { fundamental: 180, harmonic: 20, adaptive: true, max_dim: default_max_dim() }
    }

    pub fn dims(&self, layout: ModeLayout) -> Vec<usize> {
        let mut d = vec![self.fundamental];
        d.resize(layout.mode_count(), self.harmonic);
        d
    }
}

pub fn point_orbits(fp: &FieldParams, q: i64, seeds: usize) -> Result<Vec<OrbitSolution>, OrbitError> {
    solve_orbits(q, fp, Window::one_cycle(fp), seeds)
}

pub fn amplitudes_for(orbits: &[OrbitSolution], fp: &FieldParams) -> Result<Vec<OrbitAmplitude>, BackactionError> {
    orbits.iter().map(|o| orbit_amplitude(o, fp)).collect()
}

/// Represents `nat` atoms by `nat_compute` atoms carrying the amplitude
/// scaled by nat/nat_compute, which keeps every Nat·M̃ product. The
/// displacements are untouched.
pub fn equivalent_atoms(amps: &[OrbitAmplitude], nat: u64, nat_compute: u64) -> (Vec<OrbitAmplitude>, u64) {
    if nat <= nat_compute {
        return (amps.to_vec(), nat);
    }
    let f = nat as f64 / nat_compute as f64;
    let scaled = amps.iter().map(|a| OrbitAmplitude { amplitude: a.amplitude * f, ..a.clone() }).collect();
    (scaled, nat_compute)
}

fn grow(d: usize) -> usize {
    (d * 3).div_ceil(2).max(d + 2)
}

/// Fundamental-mode weight at or above dim/2 conditioned on a non-vacuum
/// outcome in each harmonic mode, i.e. the support of every heralded state.
pub fn heralded_support(state: &QState) -> Vec<f64> {
    let dims = state.dims().to_vec();
    let half = dims[0] / 2;
    (1..dims.len())
        .map(|m| {
            let (mut hit, mut tail) = (0.0, 0.0);
            for (i, v) in state.data().iter().enumerate() {
                let o = split_index(&dims, i);
                if o[m] > 0 {
                    let w = v.norm_sqr();
                    hit += w;
                    if o[0] >= half {
                        tail += w;
                    }
                }
            }
            if hit > 0.0 { tail / hit } else { 0.0 }
        })
        .collect()
}

pub fn prepare_state(amps: &[OrbitAmplitude], layout: ModeLayout, trunc: &Truncation, nat: u64) -> Result<(ManyAtomState, KernelSpec), PipelineError> {
    prepare_state_with(amps, layout, trunc, nat, false)
}

/// Graded many-atom state, enlarging truncations as needed when adaptive.
/// With `heralds`, the heralded fundamental states must satisfy the support
/// rule too.
pub fn prepare_state_with(amps: &[OrbitAmplitude], layout: ModeLayout, trunc: &Truncation, nat: u64, heralds: bool) -> Result<(ManyAtomState, KernelSpec), PipelineError> {
    let mut dims = trunc.dims(layout);
    if trunc.adaptive {
        let load = amps.iter().map(|a| a.delta1.norm_sqr()).fold(0.0, f64::max);
        while (dims[0] as f64) < 4.0 * load {
            dims[0] = grow(dims[0]);
        }
        if dims[0] > trunc.max_dim {
            return Err(PipelineError::ResourceExceeded { mode: 0, cap: trunc.max_dim });
        }
    }
    loop {
        let spec = KernelSpec { mode_layout: layout, amplitudes: amps.to_vec(), dims: dims.clone(), nat };
        let state = many_atom_state_graded_unchecked(&spec)?;
        let mut over: Vec<usize> = (0..dims.len()).filter(|&m| state.support_fraction[m] > SUPPORT_TOL).collect();
        if heralds && !over.contains(&0) && heralded_support(&state.state).iter().any(|&f| f > SUPPORT_TOL) {
            over.insert(0, 0);
        }
        if over.is_empty() {
            return Ok((state, spec));
        }
        if !trunc.adaptive {
            let fraction = state.support_fraction[over[0]];
            return Err(StateError::SupportOverflow { mode: over[0], fraction, half: dims[over[0]] / 2 }.into());
        }
        for m in over {
            let grown = grow(dims[m]);
            if grown > trunc.max_dim {
                return Err(PipelineError::ResourceExceeded { mode: m, cap: trunc.max_dim });
            }
            dims[m] = grown;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModeMeasures {
    pub n_fundamental: f64,
    pub n_harmonic: f64,
    pub linear_entropy: f64,
}

pub fn two_mode_measures(state: &QState) -> Result<TwoModeMeasures, PipelineError> {
    Ok(TwoModeMeasures {
        n_fundamental: mean_photon(state, 0),
        n_harmonic: mean_photon(state, 1),
        linear_entropy: linear_entropy_of(state, &[1])?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeModeMeasures {
    pub n_fundamental: f64,
    pub n_short: f64,
    pub n_long: f64,
    /// Fundamental against both harmonic modes jointly.
    pub linear_entropy: f64,
}

pub fn three_mode_measures(state: &QState) -> Result<ThreeModeMeasures, PipelineError> {
    Ok(ThreeModeMeasures {
        n_fundamental: mean_photon(state, 0),
        n_short: mean_photon(state, 1),
        n_long: mean_photon(state, 2),
        linear_entropy: linear_entropy_of(state, &[1, 2])?,
    })
}

/// Fundamental-mode density matrix after a non-vacuum herald on the
/// harmonic mode (two-mode) or on one branch mode (three-mode).
pub fn heralded_fundamental(state: &QState, layout: ModeLayout, branch: Branch) -> Result<(HeraldResult, QState), PipelineError> {
    let h = match layout {
        ModeLayout::TwoMode => herald_two_mode(state)?,
        ModeLayout::ThreeMode => herald_three_mode(state, branch)?,
    };
    let fund = if h.state.dims().len() == 1 { h.state.clone() } else { partial_trace(&h.state, &[0])? };
    Ok((h, fund))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerSummary {
    pub min: f64,
    pub max: f64,
    pub integral: f64,
    pub maxima: usize,
}

/// Local maxima above this fraction of the global maximum count as peaks.
pub const PEAK_FLOOR: f64 = 0.05;

pub fn wigner_summary(grid: &WignerGrid) -> WignerSummary {
    WignerSummary { min: grid.min(), max: grid.max(), integral: grid.integral(), maxima: grid.local_maxima(PEAK_FLOOR).len() }
}

pub fn heralded_wigner(fund: &QState, spec: &WignerSpec) -> Result<WignerGrid, PipelineError> {
    Ok(wigner(fund, spec)?)
}

/// Restricts mode 0 of a two-mode density matrix to the range of its reduced
/// state. The isometry is local, so negativities are unchanged.
pub fn compress_first_mode(rho: &QState) -> Result<QState, PipelineError> {
    let dims = rho.dims().to_vec();
    if dims.len() != 2 {
        return Err(FockError::DimensionMismatch(format!("expected two modes, got {}", dims.len())).into());
    }
    let r = match rho.kind() {
        crate::fock::StateKind::Vector => rho.normalized().to_density(),
        crate::fock::StateKind::DensityMatrix => rho.normalized(),
    };
    let (df, dl) = (dims[0], dims[1]);
    let red = partial_trace(&r, &[0])?;
    let m = nalgebra::DMatrix::<C64>::from_fn(df, df, |i, j| red.data()[i * df + j]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..df).filter(|&k| eig.eigenvalues[k] > RANGE_TOL * top).collect();
    let k = keep.len().max(1);
    let u = nalgebra::DMatrix::<C64>::from_fn(df, k, |f, c| keep.get(c).map_or(C64::new(0.0, 0.0), |&kk| eig.eigenvectors[(f, kk)]));
    // Contract (U† ⊗ 1) ρ (U ⊗ 1) one side at a time.
    let n = df * dl;
    let nk = k * dl;
    let mut left = vec![C64::new(0.0, 0.0); nk * n];
    for i in 0..k {
        for f in 0..df {
            let w = u[(f, i)].conj();
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            for l in 0..dl {
                let src = &r.data()[(f * dl + l) * n..(f * dl + l + 1) * n];
                let dst = &mut left[(i * dl + l) * n..(i * dl + l + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut out = vec![C64::new(0.0, 0.0); nk * nk];
    for row in 0..nk {
        for j in 0..k {
            for l in 0..dl {
                let mut acc = C64::new(0.0, 0.0);
                for f in 0..df {
                    acc += left[row * n + f * dl + l] * u[(f, j)];
                }
                out[row * nk + j * dl + l] = acc;
            }
        }
    }
    Ok(QState::density(vec![k, dl], out)?)
}

/// log_negativity between the fundamental and the remaining mode of a
/// two-mode density matrix.
pub fn fundamental_negativity(rho: &QState) -> Result<f64, PipelineError> {
    let c = compress_first_mode(rho)?;
    Ok(log_negativity(&c, 1)?)
}
