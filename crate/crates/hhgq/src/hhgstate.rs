//! Single-atom kernel, many-atom states and heralding projections.
//!
//! Mode 0 is always the fundamental. The two-mode layout puts both branches
//! on harmonic mode 1; the three-mode layout routes Short to mode 1 and Long
//! to mode 2.

use crate::backaction::OrbitAmplitude;
use crate::fock::{displacement_operator_spectral, flat_index, ladder_and_parity, split_index, tensor_operators, FockError, QOperator, QState};
use crate::orbits::Branch;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUPPORT_TOL: f64 = 1e-8;
pub const ZERO_PROBABILITY: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("dimensions too small: {0}")]
    DimensionOverflow(String),
    #[error("mode {mode} carries {fraction:e} of the weight at or above dim/2 = {half}")]
    SupportOverflow { mode: usize, fraction: f64, half: usize },
    #[error("herald success probability {0:e} is zero")]
    ZeroProbability(f64),
    #[error("atom count must be at least 1")]
    ZeroAtoms,
    #[error(transparent)]
    Fock(#[from] FockError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLayout {
    TwoMode,
    ThreeMode,
}

impl ModeLayout {
    pub fn mode_count(self) -> usize {
        match self {
            ModeLayout::TwoMode => 2,
            ModeLayout::ThreeMode => 3,
        }
    }

    pub fn harmonic_mode(self, branch: Branch) -> usize {
        match (self, branch) {
            (ModeLayout::TwoMode, _) => 1,
            (ModeLayout::ThreeMode, Branch::Short) => 1,
            (ModeLayout::ThreeMode, Branch::Long) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub mode_layout: ModeLayout,
    pub amplitudes: Vec<OrbitAmplitude>,
    pub dims: Vec<usize>,
    #[serde(rename = "Nat")]
    pub nat: u64,
}

impl KernelSpec {
    fn check(&self) -> Result<(), StateError> {
        if self.dims.len() != self.mode_layout.mode_count() {
            return Err(StateError::DimensionOverflow(format!("{} dims for {:?}", self.dims.len(), self.mode_layout)));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(StateError::DimensionOverflow("every mode needs dim >= 2".into()));
        }
        if self.nat == 0 {
            return Err(StateError::ZeroAtoms);
        }
        for a in &self.amplitudes {
            let load = a.delta1.norm_sqr();
            if load > self.dims[0] as f64 / 4.0 {
                return Err(StateError::DimensionOverflow(format!(
                    "|delta|^2 = {load:.3} does not fit a fundamental dim of {}",
                    self.dims[0]
                )));
            }
        }
        Ok(())
    }

    /// Σ_b M_b D(δ_b) restricted to the branches routed to `mode`.
    fn branch_operators(&self) -> Vec<(usize, QOperator)> {
        let df = self.dims[0];
        let mut out: Vec<(usize, QOperator)> = Vec::new();
        for a in &self.amplitudes {
            let mode = self.mode_layout.harmonic_mode(a.branch);
            let term = displacement_operator_spectral(a.delta1, df).scale(a.amplitude);
            match out.iter_mut().find(|(m, _)| *m == mode) {
                Some((_, op)) => *op = op.add(&term),
                None => out.push((mode, term)),
            }
        }
        out.sort_by_key(|(m, _)| *m);
        out
    }
}

/// 𝟙 + Σ_b M̃_b D_fund(δ_b) ⊗ a†_{mode(b)} as one dense operator.
pub fn build_kernel(spec: &KernelSpec) -> Result<QOperator, StateError> {
    spec.check()?;
    let mut k = QOperator::identity(&spec.dims);
    for (mode, b) in spec.branch_operators() {
        let mut term: Option<QOperator> = None;
        for (m, &d) in spec.dims.iter().enumerate() {
            let f = if m == 0 {
                b.clone()
            } else if m == mode {
                ladder_and_parity(d).a_dagger
            } else {
                QOperator::identity(&[d])
            };
            term = Some(match term {
                None => f,
                Some(t) => tensor_operators(&t, &f),
            });
        }
        k = k.add(&term.expect("modes"));
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyAtomState {
    /// Normalized state vector.
    pub state: QState,
    /// Norm of kernel^Nat |0̄⟩ before normalization.
    pub norm: f64,
    /// Per mode, the weight at photon numbers ≥ dim/2.
    pub support_fraction: Vec<f64>,
}

impl ManyAtomState {
    /// Fails when any mode carries more than the tolerated weight at or above
    /// half its truncation.
    pub fn checked(self) -> Result<Self, StateError> {
        for (mode, &fraction) in self.support_fraction.iter().enumerate() {
            if fraction > SUPPORT_TOL {
                return Err(StateError::SupportOverflow { mode, fraction, half: self.state.dims()[mode] / 2 });
            }
        }
        Ok(self)
    }
}

fn finish(dims: &[usize], data: Vec<C64>) -> Result<ManyAtomState, StateError> {
    let raw = QState::vector(dims.to_vec(), data)?;
    let norm = raw.weight().sqrt();
    let state = raw.normalized();
    let support_fraction = support_fractions(&state);
    Ok(ManyAtomState { state, norm, support_fraction })
}

pub fn support_fractions(state: &QState) -> Vec<f64> {
    let dims = state.dims().to_vec();
    let mut out = vec![0.0; dims.len()];
    let total = state.weight();
    let n = state.size();
    for i in 0..n {
        let w = match state.kind() {
            crate::fock::StateKind::Vector => state.data()[i].norm_sqr(),
            crate::fock::StateKind::DensityMatrix => state.data()[i * n + i].re,
        };
        let occ = split_index(&dims, i);
        for (m, &o) in occ.iter().enumerate() {
            if o >= dims[m] / 2 {
                out[m] += w;
            }
        }
    }
    out.iter().map(|v| v / total).collect()
}

/// kernel^Nat |0̄⟩ by exponentiation by squaring.
pub fn many_atom_state(kernel: &QOperator, nat: u64) -> Result<ManyAtomState, StateError> {
    many_atom_state_unchecked(kernel, nat)?.checked()
}

pub fn many_atom_state_unchecked(kernel: &QOperator, nat: u64) -> Result<ManyAtomState, StateError> {
    if nat == 0 {
        return Err(StateError::ZeroAtoms);
    }
    let dims = kernel.dims().to_vec();
    let mut result: Option<QOperator> = None;
    let mut base = kernel.clone();
    let mut e = nat;
    loop {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.matmul(&base),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = base.matmul(&base);
    }
    let r = result.expect("nat >= 1");
    let data = (0..r.size()).map(|i| r.get(i, 0)).collect();
    finish(&dims, data)
}

/// kernel applied `nat` times to the vacuum, one product at a time.
pub fn sequential_state_unchecked(kernel: &QOperator, nat: u64) -> Result<ManyAtomState, StateError> {
    if nat == 0 {
        return Err(StateError::ZeroAtoms);
    }
    let dims = kernel.dims().to_vec();
    let mut v = QState::vacuum(&dims).data().to_vec();
    for _ in 0..nat {
        v = kernel.apply(&v);
    }
    finish(&dims, v)
}

fn binomial(n: u64, k: usize) -> f64 {
    let mut c = 1.0;
    for j in 0..k {
        c *= (n as f64 - j as f64) / (j as f64 + 1.0);
    }
    c.max(0.0)
}

fn factorial_sqrt(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).sqrt()).product()
}

/// Same state as [`many_atom_state`] from the binomial expansion of
/// (𝟙 + X)^Nat, with X raising the harmonic photon number by one. The
/// expansion terminates at the harmonic truncation, so the result is exact
/// in the truncated space and costs no operator powers.
pub fn many_atom_state_graded(spec: &KernelSpec) -> Result<ManyAtomState, StateError> {
    many_atom_state_graded_unchecked(spec)?.checked()
}

pub fn many_atom_state_graded_unchecked(spec: &KernelSpec) -> Result<ManyAtomState, StateError> {
    spec.check()?;
    let df = spec.dims[0];
    let ops = spec.branch_operators();
    let apply = |op: &QOperator, v: &[C64]| op.apply(v);
    let mut data = vec![C64::new(0.0, 0.0); spec.dims.iter().product()];
    let mut vac = vec![C64::new(0.0, 0.0); df];
    vac[0] = C64::new(1.0, 0.0);
    match spec.mode_layout {
        ModeLayout::TwoMode => {
            let dh = spec.dims[1];
            let b = ops.iter().map(|(_, o)| o.clone()).reduce(|a, c| a.add(&c));
            let mut u = vac;
            for k in 0..dh {
                if k > 0 {
                    u = match &b {
                        Some(b) => apply(b, &u),
                        None => vec![C64::new(0.0, 0.0); df],
                    };
                }
                let c = binomial(spec.nat, k) * factorial_sqrt(k);
                for (f, x) in u.iter().enumerate() {
                    data[flat_index(&spec.dims, &[f, k])] = c * x;
                }
            }
        }
        ModeLayout::ThreeMode => {
            let (ds, dl) = (spec.dims[1], spec.dims[2]);
            let zero_op = QOperator::zeros(&[df]);
            let bs = ops.iter().find(|(m, _)| *m == 1).map(|(_, o)| o).unwrap_or(&zero_op);
            let bl = ops.iter().find(|(m, _)| *m == 2).map(|(_, o)| o).unwrap_or(&zero_op);
            // u[a][b]: sum over emission orderings with a short and b long photons.
            let mut u: Vec<Vec<Vec<C64>>> = vec![vec![Vec::new(); dl]; ds];
            for a in 0..ds {
                for b in 0..dl {
                    u[a][b] = if a == 0 && b == 0 {
                        vac.clone()
                    } else {
                        let mut acc = vec![C64::new(0.0, 0.0); df];
                        if a > 0 {
                            for (x, y) in acc.iter_mut().zip(apply(bs, &u[a - 1][b])) {
                                *x += y;
                            }
                        }
                        if b > 0 {
                            for (x, y) in acc.iter_mut().zip(apply(bl, &u[a][b - 1])) {
                                *x += y;
                            }
                        }
                        acc
                    };
                    let c = binomial(spec.nat, a + b) * factorial_sqrt(a) * factorial_sqrt(b);
                    for (f, x) in u[a][b].iter().enumerate() {
                        data[flat_index(&spec.dims, &[f, a, b])] = c * x;
                    }
                }
            }
        }
    }
    finish(&spec.dims, data)
}

/// Maps |f, a, b⟩ of the three-mode layout onto |f, a+b⟩ of one harmonic mode
/// by identifying the two branch creation operators.
pub fn merge_branch_modes(state: &QState, harmonic_dim: usize) -> Result<QState, StateError> {
    let dims = state.dims();
    if dims.len() != 3 {
        return Err(StateError::DimensionOverflow("merge needs a three-mode state".into()));
    }
    let out_dims = vec![dims[0], harmonic_dim];
    let mut out = vec![C64::new(0.0, 0.0); dims[0] * harmonic_dim];
    for i in 0..state.size() {
        let o = split_index(dims, i);
        let k = o[1] + o[2];
        if k >= harmonic_dim {
            continue;
        }
        let w = factorial_sqrt(k) / (factorial_sqrt(o[1]) * factorial_sqrt(o[2]));
        out[flat_index(&out_dims, &[o[0], k])] += state.data()[i] * w;
    }
    Ok(QState::vector(out_dims, out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeraldResult {
    pub state: QState,
    pub success_probability: f64,
    pub heralded_on: String,
}

/// Projects `mode` onto its non-vacuum subspace, traces it out and
/// normalizes. The remaining modes keep their order.
pub fn herald(state: &QState, mode: usize) -> Result<HeraldResult, StateError> {
    let dims = state.dims().to_vec();
    if mode >= dims.len() {
        return Err(FockError::BadModeIndex { index: mode, modes: dims.len() }.into());
    }
    let psi = state.normalized();
    let kept: Vec<usize> = (0..dims.len()).filter(|&m| m != mode).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&m| dims[m]).collect();
    let nk: usize = kept_dims.iter().product();
    let mut rho = vec![C64::new(0.0, 0.0); nk * nk];
    let mut branches: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); nk]; dims[mode]];
    match psi.kind() {
        crate::fock::StateKind::Vector => {
            for i in 0..psi.size() {
                let o = split_index(&dims, i);
                let ko: Vec<usize> = kept.iter().map(|&m| o[m]).collect();
                branches[o[mode]][flat_index(&kept_dims, &ko)] = psi.data()[i];
            }
            for v in branches.iter().skip(1) {
                for r in 0..nk {
                    if v[r] == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for c in 0..nk {
                        rho[r * nk + c] += v[r] * v[c].conj();
                    }
                }
            }
        }
        crate::fock::StateKind::DensityMatrix => {
            let n = psi.size();
            for i in 0..n {
                let oi = split_index(&dims, i);
                if oi[mode] == 0 {
                    continue;
                }
                for j in 0..n {
                    let oj = split_index(&dims, j);
                    if oj[mode] != oi[mode] {
                        continue;
                    }
                    let ki: Vec<usize> = kept.iter().map(|&m| oi[m]).collect();
                    let kj: Vec<usize> = kept.iter().map(|&m| oj[m]).collect();
                    rho[flat_index(&kept_dims, &ki) * nk + flat_index(&kept_dims, &kj)] += psi.data()[i * n + j];
                }
            }
        }
    }
    let p: f64 = (0..nk).map(|i| rho[i * nk + i].re).sum();
    if !(p >= ZERO_PROBABILITY) {
        return Err(StateError::ZeroProbability(p));
    }
    for v in rho.iter_mut() {
        *v /= p;
    }
    Ok(HeraldResult {
        state: QState::density(kept_dims, rho)?,
        success_probability: p,
        heralded_on: format!("non-vacuum on mode {mode}"),
    })
}

pub fn herald_two_mode(state: &QState) -> Result<HeraldResult, StateError> {
    herald(state, 1)
}

pub fn herald_three_mode(state: &QState, branch: Branch) -> Result<HeraldResult, StateError> {
    let r = herald(state, ModeLayout::ThreeMode.harmonic_mode(branch))?;
    Ok(HeraldResult { heralded_on: format!("non-vacuum on the {branch} harmonic mode"), ..r })
}

/// Probability of the vacuum outcome on `mode`.
pub fn vacuum_probability(state: &QState, mode: usize) -> f64 {
    let psi = state.normalized();
    let dims = psi.dims().to_vec();
    let n = psi.size();
    (0..n)
        .filter(|&i| split_index(&dims, i)[mode] == 0)
        .map(|i| match psi.kind() {
            crate::fock::StateKind::Vector => psi.data()[i].norm_sqr(),
            crate::fock::StateKind::DensityMatrix => psi.data()[i * n + i].re,
        })
        .sum()
}
