//! Complex saddle points (quantum orbits) of the semiclassical HHG action.
//!
//! Sign conventions: ionization happens at Im t_ion > 0. Near and past the
//! crossing of the two branches the excursion-time order flips, so the
//! solver tracks branches by Im(t_re), which stays continuous in q: the Long
//! orbit has Im t_re > 0 and the Short one Im t_re < 0. On the plateau this
//! agrees with the excursion-time rule implemented by [`classify`].

use crate::field::{classical_action, electric_field, excursion, vector_potential, ComplexTime, FieldParams};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const RESIDUAL_GATE: f64 = 1e-10;
pub const DEDUP_DISTANCE: f64 = 1e-6;
pub const DEFAULT_SEEDS: usize = 1000;
pub const MAX_ITERATIONS: usize = 1000;
pub const MIN_SADDLE_ORDER: i64 = 15;

#[derive(Debug, Error, PartialEq)]
pub enum OrbitError {
    #[error("no seed converged for q = {q}")]
    NoConvergence { q: i64 },
    #[error("q = {q}: {count} distinct roots in the window, expected 1 or 2")]
    BranchCountUnexpected { q: i64, count: usize },
    #[error("excursion times coincide, cannot tell short from long")]
    AmbiguousClassification,
    #[error("classification needs 1 or 2 solutions, got {0}")]
    BadPairSize(usize),
    #[error("no Stokes crossing in q range [{lo}, {hi}]")]
    NotFound { lo: i64, hi: i64 },
    #[error("harmonic order {q} below the saddle-point regime (q >= 15)")]
    BelowSaddleRegime { q: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Short,
    Long,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Short => write!(f, "short"),
            Branch::Long => write!(f, "long"),
        }
    }
}

/// Saddle triple (t_ion, p, t_re).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub t_ion: ComplexTime,
    pub p: C64,
    pub t_re: ComplexTime,
}

impl Theta {
    pub fn to_array(self) -> [C64; 3] {
        [self.t_ion, self.p, self.t_re]
    }

    pub fn from_array(x: [C64; 3]) -> Self {
        Theta { t_ion: x[0], p: x[1], t_re: x[2] }
    }

    pub fn distance(&self, other: &Theta) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        (0..3).map(|i| (a[i] - b[i]).norm_sqr()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSolution {
    pub t_ion: ComplexTime,
    pub t_re: ComplexTime,
    pub p_s: C64,
    pub q: i64,
    pub branch: Branch,
    pub residual_norm: f64,
    pub action: C64,
}

impl OrbitSolution {
    pub fn theta(&self) -> Theta {
        Theta { t_ion: self.t_ion, p: self.p_s, t_re: self.t_re }
    }

    pub fn excursion_time(&self) -> f64 {
        (self.t_re - self.t_ion).re
    }
}

/// Real time interval [start, end].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn one_cycle(fp: &FieldParams) -> Self {
        Window { start: 0.0, end: fp.period() }
    }

    pub fn shifted(self, dt: f64) -> Self {
        Window { start: self.start + dt, end: self.end + dt }
    }
}

pub fn saddle_residuals(theta: &Theta, q: i64, fp: &FieldParams) -> [C64; 3] {
    let vi = theta.p + vector_potential(theta.t_ion, fp);
    let vr = theta.p + vector_potential(theta.t_re, fp);
    [
        vi * vi / 2.0 + fp.Ip,
        excursion(theta.p, theta.t_ion, theta.t_re, fp),
        vr * vr / 2.0 + fp.Ip - q as f64 * fp.omegaL,
    ]
}

pub fn residual_norm(r: &[C64; 3]) -> f64 {
    r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// S_sc = ½∫(p+A)² + Ip (t_re − t_ion) − qω t_re.
pub fn semiclassical_action(theta: &Theta, q: i64, fp: &FieldParams) -> C64 {
    classical_action(theta.p, theta.t_ion, theta.t_re, fp) + fp.Ip * (theta.t_re - theta.t_ion)
        - q as f64 * fp.omegaL * theta.t_re
}

/// Second derivatives of S_sc in the variables (t_ion, p, t_re).
pub fn action_hessian(theta: &Theta, fp: &FieldParams) -> [[C64; 3]; 3] {
    let vi = theta.p + vector_potential(theta.t_ion, fp);
    let vr = theta.p + vector_potential(theta.t_re, fp);
    let z = C64::new(0.0, 0.0);
    [
        [vi * electric_field(theta.t_ion, fp), -vi, z],
        [-vi, theta.t_re - theta.t_ion, vr],
        [z, vr, -vr * electric_field(theta.t_re, fp)],
    ]
}

/// Jacobian of [`saddle_residuals`]. The first residual is −∂S/∂t_ion, so its
/// row is the negated first Hessian row.
fn residual_jacobian(theta: &Theta, fp: &FieldParams) -> [[C64; 3]; 3] {
    let mut j = action_hessian(theta, fp);
    for v in j[0].iter_mut() {
        *v = -*v;
    }
    j
}

pub fn det3(m: &[[C64; 3]; 3]) -> C64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn solve3(m: &[[C64; 3]; 3], b: &[C64; 3]) -> Option<[C64; 3]> {
    let mut a = *m;
    let mut x = *b;
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))?;
        if a[piv][col].norm() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = x[col];
            x[row] -= f * v;
        }
    }
    for col in (0..3).rev() {
        let mut s = x[col];
        for k in col + 1..3 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    x.iter().all(|z| z.is_finite()).then_some(x)
}

/// Damped Newton from one starting point. Returns the final point and its
/// residual norm when it passes the residual gate.
pub fn newton_polish(start: Theta, q: i64, fp: &FieldParams, max_iter: usize) -> Option<(Theta, f64)> {
    let mut x = start.to_array();
    let mut rn = residual_norm(&saddle_residuals(&Theta::from_array(x), q, fp));
    for _ in 0..max_iter {
        if !rn.is_finite() {
            return None;
        }
        if rn < 1e-13 {
            break;
        }
        let th = Theta::from_array(x);
        let r = saddle_residuals(&th, q, fp);
        let dx = solve3(&residual_jacobian(&th, fp), &[-r[0], -r[1], -r[2]])?;
        let mut lam = 1.0;
        let mut next = x;
        let mut next_rn = f64::INFINITY;
        while lam > 1e-4 {
            for i in 0..3 {
                next[i] = x[i] + lam * dx[i];
            }
            next_rn = residual_norm(&saddle_residuals(&Theta::from_array(next), q, fp));
            if next_rn < rn {
                break;
            }
            lam *= 0.5;
        }
        if (0..3).all(|i| next[i] == x[i]) {
            break;
        }
        x = next;
        rn = next_rn;
    }
    (rn < RESIDUAL_GATE).then(|| (Theta::from_array(x), rn))
}

/// Seed points on a grid over (Re t_ion, Im t_ion, Re t_re), with p chosen so
/// that the return condition holds at the seed.
pub fn seed_grid(count: usize, window: Window, fp: &FieldParams) -> Vec<Theta> {
    if count == 0 {
        return Vec::new();
    }
    let n = (count as f64).cbrt().ceil() as usize;
    let t = fp.period();
    let lerp = |lo: f64, hi: f64, i: usize| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let w2 = fp.omegaL * fp.omegaL;
    let mut out = Vec::with_capacity(count);
    'outer: for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if out.len() == count {
                    break 'outer;
                }
                let ti = C64::new(lerp(window.start, window.start + 0.6 * t, i), lerp(2.0, 30.0, j));
                let tr = C64::new(lerp(window.start, window.start + 1.2 * t, k), 0.0);
                let dt = tr - ti;
                let p = if dt.norm() < 1.0 {
                    C64::new(0.0, 0.0)
                } else {
                    -(fp.E0 / w2) * ((fp.omegaL * tr).cos() - (fp.omegaL * ti).cos()) / dt
                };
                out.push(Theta { t_ion: ti, p, t_re: tr });
            }
        }
    }
    out
}

fn in_window(th: &Theta, window: Window, fp: &FieldParams) -> bool {
    let t = fp.period();
    th.t_ion.im > 0.0
        && th.t_ion.re >= window.start
        && th.t_ion.re < window.start + 0.5 * t
        && th.t_re.re >= window.start
        && th.t_re.re <= window.end
        && (th.t_re - th.t_ion).re > 0.25 * t
}

/// Deduplicated physical roots in the window, unlabelled.
pub fn find_roots(q: i64, fp: &FieldParams, window: Window, seeds: usize) -> Result<Vec<(Theta, f64)>, OrbitError> {
    let mut found: Vec<(Theta, f64)> = Vec::new();
    let mut any = false;
    for s in seed_grid(seeds, window, fp) {
        if let Some((th, rn)) = newton_polish(s, q, fp, MAX_ITERATIONS) {
            any = true;
            if !in_window(&th, window, fp) {
                continue;
            }
            if found.iter().all(|(u, _)| u.distance(&th) >= DEDUP_DISTANCE) {
                found.push((th, rn));
            }
        }
    }
    if !any {
        return Err(OrbitError::NoConvergence { q });
    }
    Ok(found)
}

fn make_solution(th: Theta, rn: f64, q: i64, branch: Branch, fp: &FieldParams) -> OrbitSolution {
    OrbitSolution {
        t_ion: th.t_ion,
        t_re: th.t_re,
        p_s: th.p,
        q,
        branch,
        residual_norm: rn,
        action: semiclassical_action(&th, q, fp),
    }
}

/// Both branches labelled by continuity (Im t_re), before any Stokes discard.
pub fn solve_orbit_pair(q: i64, fp: &FieldParams, window: Window, seeds: usize) -> Result<Vec<OrbitSolution>, OrbitError> {
    if q < MIN_SADDLE_ORDER {
        return Err(OrbitError::BelowSaddleRegime { q });
    }
    let mut roots = find_roots(q, fp, window, seeds)?;
    match roots.len() {
        1 => {
            let (th, rn) = roots[0];
            Ok(vec![make_solution(th, rn, q, Branch::Long, fp)])
        }
        2 => {
            roots.sort_by(|a, b| a.0.t_re.im.total_cmp(&b.0.t_re.im));
            Ok(vec![
                make_solution(roots[0].0, roots[0].1, q, Branch::Short, fp),
                make_solution(roots[1].0, roots[1].1, q, Branch::Long, fp),
            ])
        }
        count => Err(OrbitError::BranchCountUnexpected { q, count }),
    }
}

/// Short is dropped once Re S_short ≥ Re S_long.
pub fn past_stokes(pair: &[OrbitSolution]) -> bool {
    let s = pair.iter().find(|o| o.branch == Branch::Short);
    let l = pair.iter().find(|o| o.branch == Branch::Long);
    match (s, l) {
        (Some(s), Some(l)) => s.action.re >= l.action.re,
        _ => true,
    }
}

pub fn solve_orbits(q: i64, fp: &FieldParams, window: Window, seeds: usize) -> Result<Vec<OrbitSolution>, OrbitError> {
    let pair = solve_orbit_pair(q, fp, window, seeds)?;
    if pair.len() == 2 && past_stokes(&pair) {
        return Ok(pair.into_iter().filter(|o| o.branch == Branch::Long).collect());
    }
    Ok(pair)
}

/// Excursion-time rule: shorter Re(t_re − t_ion) is Short.
pub fn classify(pair: &[OrbitSolution]) -> Result<Vec<OrbitSolution>, OrbitError> {
    match pair.len() {
        1 => {
            let mut o = pair[0];
            o.branch = Branch::Long;
            Ok(vec![o])
        }
        2 => {
            let (a, b) = (pair[0], pair[1]);
            if (a.excursion_time() - b.excursion_time()).abs() < 1e-9 {
                return Err(OrbitError::AmbiguousClassification);
            }
            let (mut s, mut l) = if a.excursion_time() < b.excursion_time() { (a, b) } else { (b, a) };
            s.branch = Branch::Short;
            l.branch = Branch::Long;
            Ok(vec![s, l])
        }
        n => Err(OrbitError::BadPairSize(n)),
    }
}

/// Smallest q in `[lo, hi]` at which Re S_short ≥ Re S_long, after at least
/// one q in the range where the short branch is still subdominant.
pub fn stokes_transition(fp: &FieldParams, lo: i64, hi: i64) -> Result<i64, OrbitError> {
    let cutoff = crate::field::cutoff_harmonic(fp);
    if lo > cutoff || hi < lo {
        return Err(OrbitError::NotFound { lo, hi });
    }
    let window = Window::one_cycle(fp);
    let flags: Vec<Option<bool>> = (lo.max(MIN_SADDLE_ORDER)..=hi)
        .into_par_iter()
        .map(|q| solve_orbit_pair(q, fp, window, DEFAULT_SEEDS).ok().filter(|p| p.len() == 2).map(|p| past_stokes(&p)))
        .collect();
    let mut seen_before = false;
    for (i, f) in flags.iter().enumerate() {
        match f {
            Some(false) => seen_before = true,
            Some(true) if seen_before => return Ok(lo.max(MIN_SADDLE_ORDER) + i as i64),
            _ => {}
        }
    }
    Err(OrbitError::NotFound { lo, hi })
}
