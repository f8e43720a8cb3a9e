//! The two benchmark problems on `x ∈ [−1, 1]`, `t ∈ [0, 1]`.
//!
//! Burgers: `u_t + u u_x − ν u_xx = 0`, `u(x,0) = −sin(πx)`, `u(±1,t) = 0`.
//! Allen–Cahn: `u_t − ε² u_xx + u³ − u = 0`, `u(x,0) = x² cos(πx)`, `u(±1,t) = −1`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivnet::{Jet, JetValues};
use crate::tape::{NodeId, Tape, TapeError};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("x = {0} outside [-1, 1]")]
    XOutOfRange(f64),
    #[error("t = {0} outside [0, 1]")]
    TOutOfRange(f64),
    #[error("unknown boundary side {0:?}")]
    InvalidSide(String),
    #[error("unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(&'static str),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Burgers,
    AllenCahn,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Burgers => "burgers",
            ProblemKind::AllenCahn => "allen-cahn",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "burgers" => Ok(ProblemKind::Burgers),
            "allen-cahn" | "allen_cahn" => Ok(ProblemKind::AllenCahn),
            other => Err(ProblemError::UnknownProblem(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn x(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

impl FromStr for Side {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(ProblemError::InvalidSide(other.to_string())),
        }
    }
}

pub const X_RANGE: (f64, f64) = (-1.0, 1.0);
pub const T_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Burgers viscosity.
    pub nu: f64,
    /// Allen–Cahn interface parameter ε².
    pub eps2: f64,
}

impl ProblemSpec {
    pub fn burgers(nu: f64) -> Result<Self, ProblemError> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(ProblemError::InvalidCoefficient("nu must be positive"));
        }
        Ok(Self {
            kind: ProblemKind::Burgers,
            nu,
            eps2: 0.0,
        })
    }

    pub fn allen_cahn(eps2: f64) -> Result<Self, ProblemError> {
        if !(eps2 > 0.0 && eps2.is_finite()) {
            return Err(ProblemError::InvalidCoefficient("eps2 must be positive"));
        }
        Ok(Self {
            kind: ProblemKind::AllenCahn,
            nu: 0.0,
            eps2,
        })
    }

    /// Benchmark settings: ν = 0.01, ε² = 1e-4.
    pub fn standard(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Burgers => Self::burgers(0.01).expect("valid nu"),
            ProblemKind::AllenCahn => Self::allen_cahn(1e-4).expect("valid eps2"),
        }
    }

    pub fn ic_value(&self, x: f64) -> Result<f64, ProblemError> {
        if !(X_RANGE.0..=X_RANGE.1).contains(&x) {
            return Err(ProblemError::XOutOfRange(x));
        }
        Ok(self.ic_unchecked(x))
    }

    pub(crate) fn ic_unchecked(&self, x: f64) -> f64 {
        match self.kind {
            ProblemKind::Burgers => -sin_pi(x),
            ProblemKind::AllenCahn => x * x * cos_pi(x),
        }
    }

    pub fn bc_value(&self, _side: Side, t: f64) -> Result<f64, ProblemError> {
        if !(T_RANGE.0..=T_RANGE.1).contains(&t) {
            return Err(ProblemError::TOutOfRange(t));
        }
        Ok(self.bc_constant())
    }

    /// Both built-in problems have constant Dirichlet data.
    pub(crate) fn bc_constant(&self) -> f64 {
        match self.kind {
            ProblemKind::Burgers => 0.0,
            ProblemKind::AllenCahn => -1.0,
        }
    }

    /// PDE residual recorded on the tape.
    pub fn residual(&self, tape: &mut Tape, jet: &Jet) -> Result<NodeId, ProblemError> {
        match self.kind {
            ProblemKind::Burgers => residual_burgers(tape, jet, self.nu),
            ProblemKind::AllenCahn => residual_allen_cahn(tape, jet, self.eps2),
        }
    }

    /// Residual from plain jet values.
    pub fn residual_values(&self, jet: &JetValues) -> Vec<f64> {
        (0..jet.u.len())
            .map(|i| self.residual_at(jet.u[i], jet.u_x[i], jet.u_t[i], jet.u_xx[i]))
            .collect()
    }

    pub fn residual_at(&self, u: f64, u_x: f64, u_t: f64, u_xx: f64) -> f64 {
        match self.kind {
            ProblemKind::Burgers => u_t + u * u_x - self.nu * u_xx,
            ProblemKind::AllenCahn => u_t - self.eps2 * u_xx + u * u * u - u,
        }
    }
}

/// `sin(πx)` with exact zeros at integers and exact odd symmetry.
pub fn sin_pi(x: f64) -> f64 {
    let k = x.round();
    let r = (PI * (x - k)).sin();
    if k.rem_euclid(2.0) == 0.0 {
        r
    } else {
        -r
    }
}

/// `cos(πx)` with exact values at integers.
pub fn cos_pi(x: f64) -> f64 {
    let k = x.round();
    let r = (PI * (x - k)).cos();
    if k.rem_euclid(2.0) == 0.0 {
        r
    } else {
        -r
    }
}

/// `u_t + u·u_x − ν·u_xx`
pub fn residual_burgers(tape: &mut Tape, jet: &Jet, nu: f64) -> Result<NodeId, ProblemError> {
    let adv = tape.mul(jet.u, jet.u_x)?;
    Ok(tape.lin_comb(&[(jet.u_t, 1.0), (adv, 1.0), (jet.u_xx, -nu)], 0.0)?)
}

/// `u_t − ε²·u_xx + u³ − u`
pub fn residual_allen_cahn(tape: &mut Tape, jet: &Jet, eps2: f64) -> Result<NodeId, ProblemError> {
    let u2 = tape.square(jet.u)?;
    let u3 = tape.mul(u2, jet.u)?;
    Ok(tape.lin_comb(
        &[(jet.u_t, 1.0), (jet.u_xx, -eps2), (u3, 1.0), (jet.u, -1.0)],
        0.0,
    )?)
}
