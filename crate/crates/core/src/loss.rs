//! Loss components over sampled point sets and their parameter gradients.
//!
//! Each component is recorded on its own tape and differentiated separately,
//! so the per-component gradient norms come straight out of three backward
//! passes. The weighted total is assembled afterwards from those pieces; the
//! weights are plain constants and never differentiated.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivnet::{forward_jet_batch, forward_values_taped, NetError, ParamVector};
use crate::problems::{ProblemError, ProblemSpec, Side, T_RANGE, X_RANGE};
use crate::tape::{GradVector, NodeId, Tape, TapeError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{0} point set is empty")]
    EmptySet(&'static str),
    #[error("point ({0}, {1}) lies outside the domain")]
    OutOfDomain(f64, f64),
    #[error("loss weight {0} is negative or not finite")]
    BadWeight(f64),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    /// Interior collocation points `(x, t)`.
    pub interior: Vec<(f64, f64)>,
    /// Initial-condition abscissae; `t = 0` implied.
    pub initial: Vec<f64>,
    pub boundary: Vec<(Side, f64)>,
}

fn in_x(x: f64) -> bool {
    (X_RANGE.0..=X_RANGE.1).contains(&x)
}

fn in_t(t: f64) -> bool {
    (T_RANGE.0..=T_RANGE.1).contains(&t)
}

impl PointSet {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.interior.is_empty() {
            return Err(LossError::EmptySet("interior"));
        }
        if self.initial.is_empty() {
            return Err(LossError::EmptySet("initial"));
        }
        if self.boundary.is_empty() {
            return Err(LossError::EmptySet("boundary"));
        }
        if let Some(&(x, t)) = self.interior.iter().find(|(x, t)| !in_x(*x) || !in_t(*t)) {
            return Err(LossError::OutOfDomain(x, t));
        }
        if let Some(&x) = self.initial.iter().find(|x| !in_x(**x)) {
            return Err(LossError::OutOfDomain(x, 0.0));
        }
        if let Some(&(s, t)) = self.boundary.iter().find(|(_, t)| !in_t(*t)) {
            return Err(LossError::OutOfDomain(s.x(), t));
        }
        Ok(())
    }
}

/// `(1/N_f) Σ f(x_i, t_i)²`
pub fn loss_pde(
    tape: &mut Tape,
    params: &ParamVector,
    spec: &ProblemSpec,
    interior: &[(f64, f64)],
) -> Result<NodeId, LossError> {
    if interior.is_empty() {
        return Err(LossError::EmptySet("interior"));
    }
    let jet = forward_jet_batch(tape, params, interior)?;
    let f = spec.residual(tape, &jet)?;
    Ok(tape.mean_squares(f)?)
}

fn misfit(
    tape: &mut Tape,
    params: &ParamVector,
    points: &[(f64, f64)],
    targets: Vec<f64>,
) -> Result<NodeId, LossError> {
    let u = forward_values_taped(tape, params, points)?;
    let n = targets.len();
    let target = tape.constant(Array2::from_shape_vec((1, n), targets).expect("row shape"));
    let diff = tape.sub(u, target)?;
    Ok(tape.mean_squares(diff)?)
}

/// `(1/N_i) Σ (u(x, 0) − u₀(x))²`
pub fn loss_ic(
    tape: &mut Tape,
    params: &ParamVector,
    spec: &ProblemSpec,
    initial: &[f64],
) -> Result<NodeId, LossError> {
    if initial.is_empty() {
        return Err(LossError::EmptySet("initial"));
    }
    let targets = initial
        .iter()
        .map(|&x| spec.ic_value(x))
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<(f64, f64)> = initial.iter().map(|&x| (x, 0.0)).collect();
    misfit(tape, params, &points, targets)
}

/// `(1/N_b) Σ (u(x_b, t_b) − u_b(t_b))²`
pub fn loss_bc(
    tape: &mut Tape,
    params: &ParamVector,
    spec: &ProblemSpec,
    boundary: &[(Side, f64)],
) -> Result<NodeId, LossError> {
    if boundary.is_empty() {
        return Err(LossError::EmptySet("boundary"));
    }
    let targets = boundary
        .iter()
        .map(|&(side, t)| spec.bc_value(side, t))
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<(f64, f64)> = boundary.iter().map(|&(s, t)| (s.x(), t)).collect();
    misfit(tape, params, &points, targets)
}

/// Weights applied to `(PDE, IC, BC)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl LossWeights {
    pub const UNIT: LossWeights = LossWeights {
        pde: 1.0,
        ic: 1.0,
        bc: 1.0,
    };

    pub fn new(pde: f64, ic: f64, bc: f64) -> Self {
        Self { pde, ic, bc }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.pde, self.ic, self.bc]
    }

    fn validate(&self) -> Result<(), LossError> {
        for w in self.as_array() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LossError::BadWeight(w));
            }
        }
        Ok(())
    }
}

/// Component losses, their parameter gradients and gradient norms.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub l_pde: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub g_pde: f64,
    pub g_ic: f64,
    pub g_bc: f64,
    pub grad_pde: GradVector,
    pub grad_ic: GradVector,
    pub grad_bc: GradVector,
}

impl LossBreakdown {
    pub fn from_components(losses: [f64; 3], grads: [GradVector; 3]) -> Self {
        let [grad_pde, grad_ic, grad_bc] = grads;
        Self {
            l_pde: losses[0],
            l_ic: losses[1],
            l_bc: losses[2],
            g_pde: grad_pde.norm(),
            g_ic: grad_ic.norm(),
            g_bc: grad_bc.norm(),
            grad_pde,
            grad_ic,
            grad_bc,
        }
    }

    pub fn losses(&self) -> [f64; 3] {
        [self.l_pde, self.l_ic, self.l_bc]
    }

    pub fn norms(&self) -> [f64; 3] {
        [self.g_pde, self.g_ic, self.g_bc]
    }
}

/// Builds and differentiates one tape per component.
pub fn component_grads(
    params: &ParamVector,
    spec: &ProblemSpec,
    points: &PointSet,
) -> Result<LossBreakdown, LossError> {
    points.validate()?;
    let n = params.len();

    let (l_pde, grad_pde) = {
        let mut tape = Tape::new(n);
        let root = loss_pde(&mut tape, params, spec, &points.interior)?;
        (tape.scalar_value(root)?, tape.backward(root)?)
    };
    let (l_ic, grad_ic) = {
        let mut tape = Tape::new(n);
        let root = loss_ic(&mut tape, params, spec, &points.initial)?;
        (tape.scalar_value(root)?, tape.backward(root)?)
    };
    let (l_bc, grad_bc) = {
        let mut tape = Tape::new(n);
        let root = loss_bc(&mut tape, params, spec, &points.boundary)?;
        (tape.scalar_value(root)?, tape.backward(root)?)
    };
    Ok(LossBreakdown::from_components(
        [l_pde, l_ic, l_bc],
        [grad_pde, grad_ic, grad_bc],
    ))
}

pub fn total_loss(weights: &LossWeights, b: &LossBreakdown) -> Result<f64, LossError> {
    weights.validate()?;
    Ok(weights.pde * b.l_pde + weights.ic * b.l_ic + weights.bc * b.l_bc)
}

pub fn total_grad(weights: &LossWeights, b: &LossBreakdown) -> Result<GradVector, LossError> {
    weights.validate()?;
    let mut g = GradVector::zeros(b.grad_pde.len());
    g.axpy(weights.pde, &b.grad_pde);
    g.axpy(weights.ic, &b.grad_ic);
    g.axpy(weights.bc, &b.grad_bc);
    Ok(g)
}
