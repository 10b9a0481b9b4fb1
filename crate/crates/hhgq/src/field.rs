//! Driving-field kinematics in atomic units, continued to complex time.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid field parameter {name} = {value}")]
    Invalid { name: &'static str, value: f64 },
    #[error("atom count must be at least 1")]
    ZeroAtoms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct FieldParams {
    pub E0: f64,
    pub omegaL: f64,
    pub Ip: f64,
    pub g1: f64,
    pub Nat: u64,
}

#[allow(non_snake_case)]
impl FieldParams {
    pub fn new(E0: f64, omegaL: f64, Ip: f64, g1: f64, Nat: u64) -> Result<Self, FieldError> {
        let fp = FieldParams { E0, omegaL, Ip, g1, Nat };
        fp.validate()?;
        Ok(fp)
    }

    /// Parameters used throughout the orbit figures: ω = 0.057, Ip = 0.5.
    pub fn standard(E0: f64) -> Self {
        FieldParams { E0, omegaL: 0.057, Ip: 0.5, g1: 5e-3, Nat: 100_000 }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let checks = [("E0", self.E0), ("omegaL", self.omegaL), ("Ip", self.Ip), ("g1", self.g1)];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(FieldError::Invalid { name, value });
            }
        }
        if self.Nat == 0 {
            return Err(FieldError::ZeroAtoms);
        }
        Ok(())
    }

    pub fn up(&self) -> f64 {
        self.E0 * self.E0 / (4.0 * self.omegaL * self.omegaL)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omegaL
    }

    pub fn with_g1(mut self, g1: f64) -> Self {
        self.g1 = g1;
        self
    }

    pub fn with_e0(mut self, e0: f64) -> Self {
        self.E0 = e0;
        self
    }

    pub fn with_nat(mut self, nat: u64) -> Self {
        self.Nat = nat;
        self
    }
}

pub type ComplexTime = C64;

pub fn electric_field(t: ComplexTime, fp: &FieldParams) -> C64 {
    fp.E0 * (fp.omegaL * t).cos()
}

pub fn vector_potential(t: ComplexTime, fp: &FieldParams) -> C64 {
    -(fp.E0 / fp.omegaL) * (fp.omegaL * t).sin()
}

/// ∫_{t1}^{t2} (p + A(τ)) dτ. The result is path independent, so the straight
/// segment between the complex endpoints is implied.
pub fn excursion(p: C64, t1: ComplexTime, t2: ComplexTime, fp: &FieldParams) -> C64 {
    let w = fp.omegaL;
    p * (t2 - t1) + (fp.E0 / (w * w)) * ((w * t2).cos() - (w * t1).cos())
}

/// ½ ∫_{t1}^{t2} (p + A(τ))² dτ from its antiderivative.
pub fn classical_action(p: C64, t1: ComplexTime, t2: ComplexTime, fp: &FieldParams) -> C64 {
    0.5 * (kinetic_antiderivative(p, t2, fp) - kinetic_antiderivative(p, t1, fp))
}

fn kinetic_antiderivative(p: C64, t: C64, fp: &FieldParams) -> C64 {
    let w = fp.omegaL;
    let c = fp.E0 / w;
    p * p * t + 2.0 * p * (c / w) * (w * t).cos() + c * c * (t / 2.0 - (2.0 * w * t).sin() / (4.0 * w))
}

pub fn cutoff_harmonic(fp: &FieldParams) -> i64 {
    ((3.17 * fp.up() + fp.Ip) / fp.omegaL).round() as i64
}

/// Finite sin² pulse, used only for the emission-channel comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sin2Pulse {
    pub e0: f64,
    pub omega: f64,
    pub cycles: f64,
}

impl Sin2Pulse {
    pub fn duration(&self) -> f64 {
        self.cycles * 2.0 * PI / self.omega
    }

    fn envelope_arg(&self) -> f64 {
        PI / self.duration()
    }

    pub fn field(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration() {
            return 0.0;
        }
        let s = (self.envelope_arg() * t).sin();
        self.e0 * s * s * (self.omega * t).cos()
    }

    /// A(t) = −∫₀ᵗ E, closed form of the sin² envelope integral.
    pub fn vector_potential(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        let w = self.omega;
        let k = 2.0 * self.envelope_arg();
        // sin²(kt/2) cos(wt) = ½cos(wt) − ¼cos((w+k)t) − ¼cos((w−k)t)
        let mut acc = 0.5 * (w * t).sin() / w - 0.25 * ((w + k) * t).sin() / (w + k);
        let d = w - k;
        acc -= if d.abs() < 1e-14 { 0.25 * t } else { 0.25 * (d * t).sin() / d };
        -self.e0 * acc
    }

    /// ∫₀ᵗ A(τ) dτ, used for the closed-form p-integration of the action.
    pub fn vector_potential_integral(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        let w = self.omega;
        let k = 2.0 * self.envelope_arg();
        let prim = |f: f64| -> f64 {
            if f.abs() < 1e-14 {
                0.5 * t * t
            } else {
                (1.0 - (f * t).cos()) / (f * f)
            }
        };
        -self.e0 * (0.5 * prim(w) - 0.25 * prim(w + k) - 0.25 * prim(w - k))
    }
}
