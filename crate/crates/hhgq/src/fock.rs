//! Dense linear algebra over tensor products of truncated Fock spaces.
//!
//! Composite indices are row-major: mode 0 is the most significant digit.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const LEAK_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FockError {
    #[error("coherent state leaks {leakage:e} of its norm past the truncation")]
    TruncationLeak { leakage: f64 },
    #[error("tensor product of incompatible kinds")]
    KindMismatch,
    #[error("mode index {index} out of range for {modes} modes")]
    BadModeIndex { index: usize, modes: usize },
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed state data: {0}")]
    Malformed(String),
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

/// Dense square complex matrix acting on a product of Fock spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QOperator {
    dims: Vec<usize>,
    n: usize,
    data: Vec<C64>,
}

impl QOperator {
    pub fn from_data(dims: Vec<usize>, data: Vec<C64>) -> Result<Self, FockError> {
        let n: usize = dims.iter().product();
        if data.len() != n * n {
            return Err(FockError::DimensionMismatch(format!("{} entries for size {n}", data.len())));
        }
        Ok(QOperator { dims, n, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        QOperator { dims: dims.to_vec(), n, data: vec![zero(); n * n] }
    }

    pub fn identity(dims: &[usize]) -> Self {
        let mut m = Self::zeros(dims);
        for i in 0..m.n {
            m.data[i * m.n + i] = one();
        }
        m
    }

    pub fn from_fn(dims: &[usize], f: impl Fn(usize, usize) -> C64) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n * n).map(|k| f(k / n, k % n)).collect();
        QOperator { dims: dims.to_vec(), n, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.n + j] = v;
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(&self.dims, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(&self.dims, |i, j| self.get(j, i))
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        QOperator { dims: self.dims.clone(), n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        QOperator { dims: self.dims.clone(), n: self.n, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Row-parallel product; each row is accumulated in a fixed order.
    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = vec![zero(); n * n];
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == zero() {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (r, b) in row.iter_mut().zip(brow) {
                    *r += a * b;
                }
            }
        });
        QOperator { dims: self.dims.clone(), n, data: out }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map(|i| self.data[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn norm1(&self) -> f64 {
        (0..self.n).map(|j| (0..self.n).map(|i| self.get(i, j).norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in i..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Solves self · X = rhs by LU with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self, FockError> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm())).unwrap();
            if a[piv * n + col].norm() == 0.0 {
                return Err(FockError::DimensionMismatch("singular matrix".into()));
            }
            if piv != col {
                for k in 0..n {
                    a.swap(col * n + k, piv * n + k);
                    b.swap(col * n + k, piv * n + k);
                }
            }
            let d = a[col * n + col];
            let (top, bottom) = a.split_at_mut((col + 1) * n);
            let (btop, bbottom) = b.split_at_mut((col + 1) * n);
            let prow = &top[col * n..];
            let brow = &btop[col * n..];
            bottom.par_chunks_mut(n).zip(bbottom.par_chunks_mut(n)).for_each(|(row, brw)| {
                let f = row[col] / d;
                if f == zero() {
                    return;
                }
                for k in col..n {
                    row[k] -= f * prow[k];
                }
                for k in 0..n {
                    brw[k] -= f * brow[k];
                }
            });
        }
        for col in (0..n).rev() {
            let d = a[col * n + col];
            for k in 0..n {
                let mut s = b[col * n + k];
                for j in col + 1..n {
                    s -= a[col * n + j] * b[j * n + k];
                }
                b[col * n + k] = s / d;
            }
        }
        Ok(QOperator { dims: rhs.dims.clone(), n, data: b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateKind {
    Vector,
    DensityMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QState {
    kind: StateKind,
    dims: Vec<usize>,
    data: Vec<C64>,
}

impl QState {
    pub fn vector(dims: Vec<usize>, data: Vec<C64>) -> Result<Self, FockError> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(FockError::DimensionMismatch(format!("vector of {} for size {n}", data.len())));
        }
        Ok(QState { kind: StateKind::Vector, dims, data })
    }

    pub fn density(dims: Vec<usize>, data: Vec<C64>) -> Result<Self, FockError> {
        let n: usize = dims.iter().product();
        if data.len() != n * n {
            return Err(FockError::DimensionMismatch(format!("matrix of {} for size {n}", data.len())));
        }
        Ok(QState { kind: StateKind::DensityMatrix, dims, data })
    }

    pub fn from_operator(op: QOperator) -> Self {
        QState { kind: StateKind::DensityMatrix, dims: op.dims, data: op.data }
    }

    pub fn vacuum(dims: &[usize]) -> Self {
        Self::basis(dims, &vec![0; dims.len()])
    }

    pub fn basis(dims: &[usize], occupation: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        let mut data = vec![zero(); n];
        data[flat_index(dims, occupation)] = one();
        QState { kind: StateKind::Vector, dims: dims.to_vec(), data }
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Squared norm for vectors, real trace for density matrices.
    pub fn weight(&self) -> f64 {
        match self.kind {
            StateKind::Vector => self.data.iter().map(|v| v.norm_sqr()).sum(),
            StateKind::DensityMatrix => self.as_operator().trace().re,
        }
    }

    pub fn normalized(&self) -> Self {
        let w = self.weight();
        let s = match self.kind {
            StateKind::Vector => 1.0 / w.sqrt(),
            StateKind::DensityMatrix => 1.0 / w,
        };
        QState { kind: self.kind, dims: self.dims.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn as_operator(&self) -> QOperator {
        match self.kind {
            StateKind::DensityMatrix => QOperator { dims: self.dims.clone(), n: self.size(), data: self.data.clone() },
            StateKind::Vector => {
                let v = &self.data;
                QOperator::from_fn(&self.dims, |i, j| v[i] * v[j].conj())
            }
        }
    }

    pub fn to_density(&self) -> Self {
        QState::from_operator(self.as_operator())
    }

    pub fn purity(&self) -> f64 {
        match self.kind {
            StateKind::Vector => 1.0,
            StateKind::DensityMatrix => {
                let r = self.normalized();
                r.data.iter().map(|v| v.norm_sqr()).sum()
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FockError> {
        let st: QState = serde_json::from_str(s).map_err(|e| FockError::Malformed(e.to_string()))?;
        st.check()?;
        Ok(st)
    }

    fn check(&self) -> Result<(), FockError> {
        let n = self.size();
        let expected = match self.kind {
            StateKind::Vector => n,
            StateKind::DensityMatrix => n * n,
        };
        if self.data.len() != expected {
            return Err(FockError::Malformed(format!("{} entries, expected {expected}", self.data.len())));
        }
        Ok(())
    }

    /// Little-endian binary layout: b"QST1", kind byte, mode count (u32),
    /// dims (u64 each), then (re, im) f64 pairs in row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 16 * self.data.len());
        out.extend_from_slice(b"QST1");
        out.push(match self.kind {
            StateKind::Vector => 0,
            StateKind::DensityMatrix => 1,
        });
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FockError> {
        let bad = |m: &str| FockError::Malformed(m.to_string());
        if bytes.len() < 9 || &bytes[..4] != b"QST1" {
            return Err(bad("missing header"));
        }
        let kind = match bytes[4] {
            0 => StateKind::Vector,
            1 => StateKind::DensityMatrix,
            _ => return Err(bad("unknown kind")),
        };
        let nd = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let mut pos = 9;
        let mut dims = Vec::with_capacity(nd);
        for _ in 0..nd {
            let b = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated dims"))?;
            dims.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
            pos += 8;
        }
        let rest = &bytes[pos..];
        if rest.len() % 16 != 0 {
            return Err(bad("truncated data"));
        }
        let data = rest
            .chunks_exact(16)
            .map(|c| C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
            .collect();
        let st = QState { kind, dims, data };
        st.check()?;
        Ok(st)
    }
}

pub fn flat_index(dims: &[usize], occupation: &[usize]) -> usize {
    dims.iter().zip(occupation).fold(0, |acc, (d, o)| acc * d + o)
}

pub fn split_index(dims: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
    out
}

pub struct Ladder {
    pub a: QOperator,
    pub a_dagger: QOperator,
    pub n: QOperator,
    pub parity: QOperator,
}

pub fn ladder_and_parity(dim: usize) -> Ladder {
    let d = [dim];
    let a = QOperator::from_fn(&d, |i, j| if j == i + 1 { C64::new((j as f64).sqrt(), 0.0) } else { zero() });
    let a_dagger = a.adjoint();
    let n = QOperator::from_fn(&d, |i, j| if i == j { C64::new(i as f64, 0.0) } else { zero() });
    let parity = QOperator::from_fn(&d, |i, j| match (i == j, i % 2) {
        (true, 0) => one(),
        (true, _) => -one(),
        _ => zero(),
    });
    Ladder { a, a_dagger, n, parity }
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with the degree-13 Padé kernel.
pub fn expm(a: &QOperator) -> QOperator {
    let theta13 = 5.371920351148152;
    let norm = a.norm1();
    let s = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a = a.scale(C64::new(0.5_f64.powi(s), 0.0));
    let id = QOperator::identity(a.dims());
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let lin = |terms: &[(&QOperator, usize)]| -> QOperator {
        let mut acc = QOperator::zeros(a.dims());
        for (m, k) in terms {
            acc = acc.add(&m.scale(b(*k)));
        }
        acc
    };
    let u_inner = a6.matmul(&lin(&[(&a6, 13), (&a4, 11), (&a2, 9)])).add(&lin(&[(&a6, 7), (&a4, 5), (&a2, 3), (&id, 1)]));
    let u = a.matmul(&u_inner);
    let v = a6.matmul(&lin(&[(&a6, 12), (&a4, 10), (&a2, 8)])).add(&lin(&[(&a6, 6), (&a4, 4), (&a2, 2), (&id, 0)]));
    let mut r = v.sub(&u).solve(&v.add(&u)).expect("Padé denominator is invertible");
    for _ in 0..s {
        r = r.matmul(&r);
    }
    r
}

/// exp(α a† − α* a) on the truncated space.
pub fn displacement_operator(alpha: C64, dim: usize) -> QOperator {
    let l = ladder_and_parity(dim);
    expm(&l.a_dagger.scale(alpha).sub(&l.a.scale(alpha.conj())))
}

/// The same truncated exponential as [`displacement_operator`], through the
/// spectrum of the real tridiagonal generator: with α = r e^{iφ},
/// D = R(φ) P exp(−iJ) P⁻¹ R(−φ), R = e^{iφn̂}, P = diag(iⁿ) and J_{n,n+1} = r√(n+1).
pub fn displacement_operator_spectral(alpha: C64, dim: usize) -> QOperator {
    let r = alpha.norm();
    let phi = alpha.arg();
    let j = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |m, n| if m + 1 == n || n + 1 == m { r * (m.max(n) as f64).sqrt() } else { 0.0 });
    let eig = nalgebra::SymmetricEigen::new(j);
    let v = &eig.eigenvectors;
    let vc = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |m, k| v[(m, k)] * eig.eigenvalues[k].cos());
    let vs = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |m, k| v[(m, k)] * eig.eigenvalues[k].sin());
    let c = &vc * v.transpose();
    let s = &vs * v.transpose();
    QOperator::from_fn(&[dim], |m, n| {
        let k = m as i64 - n as i64;
        let phase = C64::from_polar(1.0, phi * k as f64 + 0.5 * std::f64::consts::PI * k as f64);
        phase * C64::new(c[(m, n)], -s[(m, n)])
    })
}

/// Matrix elements ⟨m|D(α)|n⟩ of the untruncated displacement, restricted to
/// m, n < dim.
pub fn displacement_matrix_elements(alpha: C64, dim: usize) -> QOperator {
    // Normalized associated-Laguerre recurrence along each diagonal; the
    // naive ladder recurrence cancels catastrophically once |α| is a few.
    let mut d = QOperator::zeros(&[dim]);
    let x = alpha.norm_sqr();
    let phase = if x > 0.0 { alpha / alpha.norm() } else { C64::new(1.0, 0.0) };
    let below = -phase.conj();
    let lnx = x.ln();
    let sqrt_n: Vec<f64> = (0..=2 * dim).map(|n| (n as f64).sqrt()).collect();
    let mut ln_fact = 0.0;
    let mut up = C64::new(1.0, 0.0);
    let mut dn = C64::new(1.0, 0.0);
    for k in 0..dim {
        if k > 0 {
            ln_fact += (k as f64).ln();
            up *= phase;
            dn *= below;
        }
        let kf = k as f64;
        let mut prev = 0.0;
        let mut cur = if k == 0 {
            (-0.5 * x).exp()
        } else if x == 0.0 {
            0.0
        } else {
            (-0.5 * x + 0.5 * kf * lnx - 0.5 * ln_fact).exp()
        };
        for n in 0..dim - k {
            d.data[(n + k) * dim + n] = up * cur;
            if k > 0 {
                d.data[n * dim + n + k] = dn * cur;
            }
            let nf = n as f64;
            let next = ((2.0 * nf + 1.0 + kf - x) * cur - sqrt_n[n] * sqrt_n[n + k] * prev) / (sqrt_n[n + 1] * sqrt_n[n + k + 1]);
            prev = cur;
            cur = next;
        }
    }
    d
}

pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(dim);
    let mut v = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        out.push(v);
        v *= alpha / ((n + 1) as f64).sqrt();
    }
    out
}

/// Normalized truncated coherent state and its truncation leakage.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<(QState, f64), FockError> {
    let amps = coherent_amplitudes(alpha, dim);
    let kept: f64 = amps.iter().map(|v| v.norm_sqr()).sum();
    let leakage = (1.0 - kept).max(0.0);
    if leakage > LEAK_TOL {
        return Err(FockError::TruncationLeak { leakage });
    }
    let st = QState::vector(vec![dim], amps)?.normalized();
    Ok((st, leakage))
}

#[derive(Debug, Clone, PartialEq)]
pub enum QObject {
    Operator(QOperator),
    State(QState),
}

fn kron(a: &[C64], ar: usize, ac: usize, b: &[C64], br: usize, bc: usize) -> Vec<C64> {
    let rows = ar * br;
    let cols = ac * bc;
    let mut out = vec![zero(); rows * cols];
    for i in 0..ar {
        for j in 0..ac {
            let x = a[i * ac + j];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k) * cols + j * bc + l] = x * b[k * bc + l];
                }
            }
        }
    }
    out
}

pub fn tensor_operators(a: &QOperator, b: &QOperator) -> QOperator {
    let dims: Vec<usize> = a.dims.iter().chain(&b.dims).copied().collect();
    let n = a.n * b.n;
    QOperator { dims, n, data: kron(&a.data, a.n, a.n, &b.data, b.n, b.n) }
}

pub fn tensor_states(a: &QState, b: &QState) -> Result<QState, FockError> {
    if a.kind != b.kind {
        return Err(FockError::KindMismatch);
    }
    let dims: Vec<usize> = a.dims.iter().chain(&b.dims).copied().collect();
    let (na, nb) = (a.size(), b.size());
    let data = match a.kind {
        StateKind::Vector => kron(&a.data, na, 1, &b.data, nb, 1),
        StateKind::DensityMatrix => kron(&a.data, na, na, &b.data, nb, nb),
    };
    Ok(QState { kind: a.kind, dims, data })
}

pub fn tensor_product(a: &QObject, b: &QObject) -> Result<QObject, FockError> {
    match (a, b) {
        (QObject::Operator(x), QObject::Operator(y)) => Ok(QObject::Operator(tensor_operators(x, y))),
        (QObject::State(x), QObject::State(y)) => Ok(QObject::State(tensor_states(x, y)?)),
        _ => Err(FockError::KindMismatch),
    }
}

/// Embeds a single-mode operator acting on `mode` into the full product space.
pub fn embed(op: &QOperator, mode: usize, dims: &[usize]) -> QOperator {
    let mut acc: Option<QOperator> = None;
    for (k, &d) in dims.iter().enumerate() {
        let f = if k == mode { op.clone() } else { QOperator::identity(&[d]) };
        acc = Some(match acc {
            None => f,
            Some(m) => tensor_operators(&m, &f),
        });
    }
    acc.expect("at least one mode")
}

fn check_modes(dims: &[usize], modes: &[usize]) -> Result<(), FockError> {
    for &m in modes {
        if m >= dims.len() {
            return Err(FockError::BadModeIndex { index: m, modes: dims.len() });
        }
    }
    Ok(())
}

/// For every full index, its (kept index, traced index) pair.
fn split_kept(dims: &[usize], keep: &[usize]) -> (Vec<usize>, usize, Vec<usize>, Vec<usize>) {
    let kept_dims: Vec<usize> = (0..dims.len()).filter(|m| keep.contains(m)).map(|m| dims[m]).collect();
    let traced_dims: Vec<usize> = (0..dims.len()).filter(|m| !keep.contains(m)).map(|m| dims[m]).collect();
    let n: usize = dims.iter().product();
    let nt: usize = traced_dims.iter().product();
    let mut kidx = Vec::with_capacity(n);
    let mut tidx = Vec::with_capacity(n);
    for f in 0..n {
        let occ = split_index(dims, f);
        let ko: Vec<usize> = (0..dims.len()).filter(|m| keep.contains(m)).map(|m| occ[m]).collect();
        let to: Vec<usize> = (0..dims.len()).filter(|m| !keep.contains(m)).map(|m| occ[m]).collect();
        kidx.push(flat_index(&kept_dims, &ko));
        tidx.push(flat_index(&traced_dims, &to));
    }
    (kept_dims, nt, kidx, tidx)
}

/// Reduced density matrix over the modes in `keep` (any order; the result
/// keeps the original mode order).
pub fn partial_trace(rho: &QState, keep: &[usize]) -> Result<QState, FockError> {
    check_modes(&rho.dims, keep)?;
    let (kept_dims, nt, kidx, tidx) = split_kept(&rho.dims, keep);
    let nk: usize = kept_dims.iter().product();
    let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nt];
    for f in 0..kidx.len() {
        groups[tidx[f]].push((f, kidx[f]));
    }
    let mut out = vec![zero(); nk * nk];
    let n = rho.size();
    for g in &groups {
        for &(f1, k1) in g {
            for &(f2, k2) in g {
                out[k1 * nk + k2] += match rho.kind {
                    StateKind::Vector => rho.data[f1] * rho.data[f2].conj(),
                    StateKind::DensityMatrix => rho.data[f1 * n + f2],
                };
            }
        }
    }
    QState::density(kept_dims, out)
}

pub fn partial_transpose(rho: &QState, which: usize) -> Result<QOperator, FockError> {
    check_modes(&rho.dims, &[which])?;
    let op = rho.as_operator();
    let dims = op.dims.clone();
    let n = op.n;
    let mut stride = 1;
    for d in &dims[which + 1..] {
        stride *= d;
    }
    let dw = dims[which];
    let digit = |i: usize| (i / stride) % dw;
    let mut out = vec![zero(); n * n];
    for i in 0..n {
        let di = digit(i);
        for j in 0..n {
            let dj = digit(j);
            let i2 = i - di * stride + dj * stride;
            let j2 = j - dj * stride + di * stride;
            out[i2 * n + j2] = op.data[i * n + j];
        }
    }
    QOperator::from_data(dims, out)
}

/// Full spectrum of a Hermitian matrix, ascending. Householder reduction to
/// real tridiagonal form followed by implicit-shift QL.
pub fn hermitian_eigenvalues(h: &QOperator) -> Result<Vec<f64>, FockError> {
    let dev = h.hermitian_deviation();
    if dev > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(FockError::NotHermitian(dev));
    }
    let n = h.n;
    if n == 0 {
        return Ok(Vec::new());
    }
    let (mut d, mut e) = tridiagonalize(h);
    tql(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Returns the diagonal and the moduli of the subdiagonal (e[0] unused).
fn tridiagonalize(h: &QOperator) -> (Vec<f64>, Vec<f64>) {
    let n = h.n;
    let mut a = h.data.clone();
    // Symmetrize exactly so rounding in the input does not bias the spectrum.
    for i in 0..n {
        a[i * n + i] = C64::new(a[i * n + i].re, 0.0);
        for j in i + 1..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i].conj());
            a[i * n + j] = v;
            a[j * n + i] = v.conj();
        }
    }
    let mut e = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let x: Vec<C64> = (k + 1..n).map(|i| a[i * n + k]).collect();
        let xnorm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if xnorm == 0.0 {
            e[k + 1] = 0.0;
            continue;
        }
        let phase = if x[0].norm() == 0.0 { one() } else { x[0] / x[0].norm() };
        let alpha = -phase * xnorm;
        let mut v = x.clone();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            e[k + 1] = xnorm;
            continue;
        }
        for z in v.iter_mut() {
            *z /= vnorm;
        }
        // p = B v on the trailing block B = a[k+1.., k+1..]
        let p: Vec<C64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let row = &a[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + n];
                row.iter().zip(&v).map(|(b, vv)| b * vv).sum()
            })
            .collect();
        let kk: C64 = v.iter().zip(&p).map(|(vv, pp)| vv.conj() * pp).sum();
        let w: Vec<C64> = p.iter().zip(&v).map(|(pp, vv)| pp - kk.re * vv).collect();
        a[(k + 1) * n..].par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let (vi, wi) = (v[i], w[i]);
            for j in 0..m {
                row[k + 1 + j] -= 2.0 * (vi * w[j].conj() + wi * v[j].conj());
            }
        });
        a[(k + 1) * n + k] = alpha;
        a[k * n + k + 1] = alpha.conj();
        for i in k + 2..n {
            a[i * n + k] = zero();
            a[k * n + i] = zero();
        }
        e[k + 1] = xnorm;
    }
    if n >= 2 {
        e[n - 1] = a[(n - 1) * n + n - 2].norm();
    }
    let d = (0..n).map(|i| a[i * n + i].re).collect();
    (d, e)
}

/// Eigenvalues of the symmetric tridiagonal (d, e) by QL with implicit
/// Wilkinson shifts; e[i] couples rows i−1 and i.
fn tql(d: &mut [f64], e: &mut [f64]) -> Result<(), FockError> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    if n > 0 {
        e[n - 1] = 0.0;
    }
    // Absolute floor for deflation: without it, clusters of eigenvalues far
    // below the matrix scale (rank-deficient states) never split off.
    let scale = d.iter().zip(e.iter()).map(|(a, b)| a.abs() + b.abs()).fold(0.0, f64::max);
    let floor = f64::EPSILON * scale;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd + floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(FockError::Malformed("eigenvalue iteration did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub(crate) fn bell() -> QState {
        let s = 1.0 / 2.0_f64.sqrt();
        QState::vector(vec![2, 2], vec![c(s, 0.0), zero(), zero(), c(s, 0.0)]).unwrap()
    }

    #[test]
    fn ladder_basics() {
        let l = ladder_and_parity(6);
        assert_eq!(l.a.get(0, 1), one());
        let comm = l.a.matmul(&l.a_dagger).sub(&l.a_dagger.matmul(&l.a));
        for i in 0..6 {
            let expect = if i == 5 { 1.0 - 6.0 } else { 1.0 };
            assert!((comm.get(i, i).re - expect).abs() < 1e-12);
        }
        assert_eq!(l.parity.matmul(&l.parity), QOperator::identity(&[6]));
    }

    #[test]
    fn displacement_of_vacuum_is_coherent() {
        let alpha = c(1.2, -0.7);
        let d = displacement_operator(alpha, 40);
        let col: Vec<C64> = (0..40).map(|i| d.get(i, 0)).collect();
        let amps = coherent_amplitudes(alpha, 40);
        for i in 0..40 {
            assert!((col[i] - amps[i]).norm() < 1e-8);
        }
        assert!(displacement_operator(zero(), 8).max_abs_diff(&QOperator::identity(&[8])) < 1e-14);
    }

    #[test]
    fn exact_elements_match_expm_on_larger_space() {
        let alpha = c(-0.9, 1.4);
        let big = displacement_operator(alpha, 120);
        let exact = displacement_matrix_elements(alpha, 30);
        for i in 0..30 {
            for j in 0..30 {
                assert!((big.get(i, j) - exact.get(i, j)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn exact_elements_stay_bounded_at_large_alpha() {
        let alpha = c(5.0, -1.1);
        let big = displacement_operator(alpha, 200);
        let exact = displacement_matrix_elements(alpha, 200);
        for i in 0..70 {
            for j in 0..70 {
                assert!((big.get(i, j) - exact.get(i, j)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_route_matches_pade() {
        for (alpha, dim) in [(c(0.4, 0.0), 12), (c(-2.0, 3.0), 50), (c(5.0, -1.1), 90), (c(0.0, 0.0), 5)] {
            let d = displacement_operator_spectral(alpha, dim);
            assert!(d.max_abs_diff(&displacement_operator(alpha, dim)) < 1e-12);
        }
    }

    #[test]
    fn coherent_leak() {
        assert!(matches!(coherent_state(c(2.0, 0.0), 4), Err(FockError::TruncationLeak { leakage }) if (leakage - 0.5665).abs() < 1e-3));
        let (v, leak) = coherent_state(zero(), 5).unwrap();
        assert_eq!(v.data()[0], one());
        assert_eq!(leak, 0.0);
    }

    #[test]
    fn tensor_dims() {
        let a = QState::vacuum(&[180]);
        let b = QState::vacuum(&[20]);
        let t = tensor_states(&a, &b).unwrap();
        assert_eq!(t.dims(), &[180, 20]);
        assert_eq!(t.size(), 3600);
        assert_eq!(
            tensor_product(&QObject::State(a), &QObject::Operator(QOperator::identity(&[2]))),
            Err(FockError::KindMismatch)
        );
    }

    #[test]
    fn bell_reductions_and_transpose() {
        let rho = bell().to_density();
        for keep in [0, 1] {
            let r = partial_trace(&rho, &[keep]).unwrap();
            assert!((r.data()[0].re - 0.5).abs() < 1e-12 && (r.data()[3].re - 0.5).abs() < 1e-12);
            assert!(r.data()[1].norm() < 1e-12);
        }
        let pt = partial_transpose(&rho, 1).unwrap();
        let ev = hermitian_eigenvalues(&pt).unwrap();
        assert!((ev[0] + 0.5).abs() < 1e-12);
        let back = partial_transpose(&QState::from_operator(pt), 1).unwrap();
        assert_eq!(back, rho.as_operator());
        assert!(matches!(partial_trace(&rho, &[2]), Err(FockError::BadModeIndex { .. })));
    }

    #[test]
    fn eigen_small_cases() {
        let m = QOperator::from_data(vec![2], vec![zero(), one(), one(), zero()]).unwrap();
        let ev = hermitian_eigenvalues(&m).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
        let d = QOperator::from_fn(&[4], |i, j| if i == j { c([3.0, -1.0, 2.0, 0.5][i], 0.0) } else { zero() });
        assert_eq!(hermitian_eigenvalues(&d).unwrap(), vec![-1.0, 0.5, 2.0, 3.0]);
        let bad = QOperator::from_data(vec![2], vec![zero(), one(), zero(), zero()]).unwrap();
        assert!(matches!(hermitian_eigenvalues(&bad), Err(FockError::NotHermitian(_))));
    }

    #[test]
    fn serialization_roundtrip() {
        let s = tensor_states(&coherent_state(c(0.5, 0.2), 10).unwrap().0, &QState::basis(&[3], &[1])).unwrap();
        assert_eq!(QState::from_bytes(&s.to_bytes()).unwrap(), s);
        assert_eq!(QState::from_json(&s.to_json()).unwrap(), s);
        let r = s.to_density();
        assert_eq!(QState::from_bytes(&r.to_bytes()).unwrap(), r);
        assert!(QState::from_bytes(b"QST1").is_err());
    }
}
