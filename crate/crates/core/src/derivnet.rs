//! Fully connected `tanh` network `u(x, t)` with derivative jets.
//!
//! Parameter layout (the checkpoint format depends on it): layers in order from
//! input to output; for each layer the weight matrix `n_out × n_in` row-major,
//! followed by its `n_out` biases.
//!
//! A jet batch of `N` points is stored column-stacked as a `width × 4N` matrix
//! `[value | ∂/∂x | ∂/∂t | ∂²/∂x²]`, so each dense layer is a single matrix
//! product and the bias touches only the value block.

use std::path::Path;

use ndarray::{s, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::{NodeId, Tape, TapeError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("non-finite input point ({0}, {1})")]
    NonFiniteInput(f64, f64),
    #[error("parameter vector has {got} entries, architecture needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("parameter {0} is not finite")]
    NonFiniteParam(usize),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(&'static str),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

impl Default for Architecture {
    /// Seven hidden layers of 50 `tanh` units, `(x, t) → u`.
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_layers: 7,
            hidden_width: 50,
            output_dim: 1,
        }
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlice {
    pub n_in: usize,
    pub n_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Architecture {
    pub fn new(hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            hidden_layers,
            hidden_width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim != 2 || self.output_dim != 1 {
            return Err(NetError::InvalidArchitecture(
                "network maps (x, t) to a scalar",
            ));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(NetError::InvalidArchitecture(
                "hidden layers need at least one unit",
            ));
        }
        Ok(())
    }

    /// Zero hidden layers is allowed and gives a purely affine map.
    pub fn layers(&self) -> Vec<LayerSlice> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(self.output_dim);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let layer = LayerSlice {
                    n_in: w[0],
                    n_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.n_in * l.n_out + l.n_out)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    arch: Architecture,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn from_vec(arch: Architecture, values: Vec<f64>) -> Result<Self, NetError> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(NetError::LengthMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteParam(i));
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: Architecture) -> Result<Self, NetError> {
        Self::from_vec(arch, vec![0.0; arch.param_count()])
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn weight(&self, layer: &LayerSlice) -> Array2<f64> {
        let w = &self.values[layer.weight_offset..layer.bias_offset];
        Array2::from_shape_vec((layer.n_out, layer.n_in), w.to_vec()).expect("layer shape")
    }

    fn bias(&self, layer: &LayerSlice) -> Array2<f64> {
        let b = &self.values[layer.bias_offset..layer.bias_offset + layer.n_out];
        Array2::from_shape_vec((layer.n_out, 1), b.to_vec()).expect("bias shape")
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: Architecture, seed: u64) -> Result<ParamVector, NetError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.param_count()];
    for layer in arch.layers() {
        let bound = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
        for w in &mut values[layer.weight_offset..layer.bias_offset] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    ParamVector::from_vec(arch, values)
}

/// Network output and its input derivatives as tape nodes, each `1 × N`.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub u: NodeId,
    pub u_x: NodeId,
    pub u_t: NodeId,
    pub u_xx: NodeId,
}

/// Plain-value jet for a batch of points.
#[derive(Clone, Debug, PartialEq)]
pub struct JetValues {
    pub u: Vec<f64>,
    pub u_x: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_xx: Vec<f64>,
}

fn check_points(points: &[(f64, f64)]) -> Result<(), NetError> {
    match points
        .iter()
        .find(|(x, t)| !x.is_finite() || !t.is_finite())
    {
        Some(&(x, t)) => Err(NetError::NonFiniteInput(x, t)),
        None => Ok(()),
    }
}

/// Input jet: coordinates in the value block, seeds `∂x/∂x = 1`, `∂t/∂t = 1`.
fn input_jet(points: &[(f64, f64)]) -> Array2<f64> {
    let n = points.len();
    let mut a = Array2::zeros((2, 4 * n));
    for (j, &(x, t)) in points.iter().enumerate() {
        a[[0, j]] = x;
        a[[1, j]] = t;
        a[[0, n + j]] = 1.0;
        a[[1, 2 * n + j]] = 1.0;
    }
    a
}

fn input_values(points: &[(f64, f64)]) -> Array2<f64> {
    let mut a = Array2::zeros((2, points.len()));
    for (j, &(x, t)) in points.iter().enumerate() {
        a[[0, j]] = x;
        a[[1, j]] = t;
    }
    a
}

/// Records the jet of the network at every point on `tape`.
pub fn forward_jet_batch(
    tape: &mut Tape,
    params: &ParamVector,
    points: &[(f64, f64)],
) -> Result<Jet, NetError> {
    check_points(points)?;
    let n = points.len();
    let layers = params.arch.layers();
    let p = params.as_slice();
    let mut act = tape.constant(input_jet(points));
    for (i, layer) in layers.iter().enumerate() {
        let w = tape.param(p, layer.weight_offset, layer.n_out, layer.n_in)?;
        let b = tape.param(p, layer.bias_offset, layer.n_out, 1)?;
        let z = tape.affine(w, act, Some((b, n)))?;
        act = if i + 1 < layers.len() {
            tape.tanh_jet(z, n)?
        } else {
            z
        };
    }
    Ok(Jet {
        u: tape.columns(act, 0, n)?,
        u_x: tape.columns(act, n, n)?,
        u_t: tape.columns(act, 2 * n, n)?,
        u_xx: tape.columns(act, 3 * n, n)?,
    })
}

/// Single-point jet; every component is a `1 × 1` node.
pub fn forward_jet(tape: &mut Tape, params: &ParamVector, x: f64, t: f64) -> Result<Jet, NetError> {
    forward_jet_batch(tape, params, &[(x, t)])
}

/// Records network values (no derivatives) at every point, as a `1 × N` node.
pub fn forward_values_taped(
    tape: &mut Tape,
    params: &ParamVector,
    points: &[(f64, f64)],
) -> Result<NodeId, NetError> {
    check_points(points)?;
    let n = points.len();
    let layers = params.arch.layers();
    let p = params.as_slice();
    let mut act = tape.constant(input_values(points));
    for (i, layer) in layers.iter().enumerate() {
        let w = tape.param(p, layer.weight_offset, layer.n_out, layer.n_in)?;
        let b = tape.param(p, layer.bias_offset, layer.n_out, 1)?;
        let z = tape.affine(w, act, Some((b, n)))?;
        act = if i + 1 < layers.len() {
            tape.tanh(z)?
        } else {
            z
        };
    }
    Ok(act)
}

const CHUNK: usize = 4096;

/// Network values at a batch of points without recording a tape.
pub fn forward_values(params: &ParamVector, points: &[(f64, f64)]) -> Result<Vec<f64>, NetError> {
    check_points(points)?;
    let layers = params.arch.layers();
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(CHUNK) {
        let mut act = input_values(chunk);
        for (i, layer) in layers.iter().enumerate() {
            let mut z = params.weight(layer).dot(&act);
            z += &params.bias(layer);
            if i + 1 < layers.len() {
                z.mapv_inplace(f64::tanh);
            }
            act = z;
        }
        out.extend(act.row(0).iter().copied());
    }
    Ok(out)
}

pub fn forward_value(params: &ParamVector, x: f64, t: f64) -> Result<f64, NetError> {
    Ok(forward_values(params, &[(x, t)])?[0])
}

/// Jets at a batch of points without recording a tape.
pub fn jet_values(params: &ParamVector, points: &[(f64, f64)]) -> Result<JetValues, NetError> {
    check_points(points)?;
    let layers = params.arch.layers();
    let mut res = JetValues {
        u: Vec::with_capacity(points.len()),
        u_x: Vec::with_capacity(points.len()),
        u_t: Vec::with_capacity(points.len()),
        u_xx: Vec::with_capacity(points.len()),
    };
    for chunk in points.chunks(CHUNK) {
        let n = chunk.len();
        let mut act = input_jet(chunk);
        for (i, layer) in layers.iter().enumerate() {
            let mut z = params.weight(layer).dot(&act);
            let bias = params.bias(layer);
            for mut col in z.slice_mut(s![.., ..n]).axis_iter_mut(Axis(1)) {
                col += &bias.column(0);
            }
            if i + 1 < layers.len() {
                let (mut v, rest) = z.view_mut().split_at(Axis(1), n);
                let (mut vx, rest) = rest.split_at(Axis(1), n);
                let (mut vt, mut vxx) = rest.split_at(Axis(1), n);
                Zip::from(&mut v)
                    .and(&mut vx)
                    .and(&mut vt)
                    .and(&mut vxx)
                    .for_each(|a, ax, at, axx| {
                        let th = a.tanh();
                        let sech2 = 1.0 - th * th;
                        *axx = sech2 * *axx - 2.0 * th * sech2 * *ax * *ax;
                        *ax *= sech2;
                        *at *= sech2;
                        *a = th;
                    });
            }
            act = z;
        }
        let row = act.row(0);
        res.u.extend(row.slice(s![..n]).iter());
        res.u_x.extend(row.slice(s![n..2 * n]).iter());
        res.u_t.extend(row.slice(s![2 * n..3 * n]).iter());
        res.u_xx.extend(row.slice(s![3 * n..]).iter());
    }
    Ok(res)
}

/// On-disk checkpoint: `{architecture, seed, params}` with every parameter
/// written as a decimal double with 17 significant digits.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    architecture: Architecture,
    seed: u64,
    params: Box<serde_json::value::RawValue>,
}

pub fn checkpoint_to_string(params: &ParamVector, seed: u64) -> Result<String, NetError> {
    let body: Vec<String> = params.values.iter().map(|v| format!("{v:.16e}")).collect();
    let raw = serde_json::value::RawValue::from_string(format!("[{}]", body.join(",")))?;
    let file = CheckpointFile {
        architecture: params.arch,
        seed,
        params: raw,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_str(text: &str) -> Result<(ParamVector, u64), NetError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    let values: Vec<f64> = serde_json::from_str(file.params.get())?;
    Ok((ParamVector::from_vec(file.architecture, values)?, file.seed))
}

pub fn save_checkpoint(path: &Path, params: &ParamVector, seed: u64) -> Result<(), NetError> {
    std::fs::write(path, checkpoint_to_string(params, seed)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamVector, u64), NetError> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}


#[cfg(test)]
mod tests {
    use super::test_nets::*;
    use super::*;

    #[test]
    fn default_architecture_has_15501_params() {
        assert_eq!(Architecture::default().param_count(), 15_501);
        let p = init_params(Architecture::default(), 0).unwrap();
        assert_eq!(p.len(), 15_501);
    }

    #[test]
    fn param_count_matches_closed_form() {
        for l in 1..9 {
            for w in [1, 2, 5, 50, 64] {
                let closed = 2 * w + w + (l - 1) * (w * w + w) + w + 1;
                assert_eq!(Architecture::new(l, w).param_count(), closed);
            }
        }
    }

    #[test]
    fn affine_network_jet() {
        let p = affine(3.0, 2.0, 1.0);
        let mut tape = Tape::new(p.len());
        let jet = forward_jet(&mut tape, &p, 1.0, 1.0).unwrap();
        let vals: Vec<f64> = [jet.u, jet.u_x, jet.u_t, jet.u_xx]
            .iter()
            .map(|&id| tape.scalar_value(id).unwrap())
            .collect();
        assert_eq!(vals, vec![6.0, 3.0, 2.0, 0.0]);
        assert_eq!(
            forward_value(&affine(1.0, -1.0, 0.0), 0.5, 0.5).unwrap(),
            0.0
        );
    }

    #[test]
    fn layout_is_contiguous() {
        for (l, w) in [(1, 1), (3, 5), (7, 50), (2, 9)] {
            let arch = Architecture::new(l, w);
            let layers = arch.layers();
            let last = layers.last().unwrap();
            assert_eq!(last.bias_offset + last.n_out, arch.param_count());
            for pair in layers.windows(2) {
                assert_eq!(pair[0].bias_offset + pair[0].n_out, pair[1].weight_offset);
            }
        }
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let arch = Architecture::default();
        let p = init_params(arch, 7).unwrap();
        let layers = arch.layers();
        for layer in &layers {
            let b = &p.as_slice()[layer.bias_offset..layer.bias_offset + layer.n_out];
            assert!(b.iter().all(|&v| v == 0.0));
        }
        let first = &layers[0];
        let bound = (6.0_f64 / 52.0).sqrt();
        assert!((bound - 0.3397).abs() < 1e-4);
        let w = &p.as_slice()[first.weight_offset..first.bias_offset];
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert!(w.iter().any(|v| v.abs() > 0.5 * bound));
    }

    #[test]
    fn init_is_deterministic() {
        let arch = Architecture::default();
        assert_eq!(init_params(arch, 3).unwrap(), init_params(arch, 3).unwrap());
        assert_ne!(init_params(arch, 3).unwrap(), init_params(arch, 4).unwrap());
    }

    #[test]
    fn tanh_of_x_jet_at_origin() {
        let p = tiny(1.0, 0.0, 0.0, 1.0, 0.0);
        let mut tape = Tape::new(p.len());
        let jet = forward_jet(&mut tape, &p, 0.0, 0.0).unwrap();
        let vals: Vec<f64> = [jet.u, jet.u_x, jet.u_t, jet.u_xx]
            .iter()
            .map(|&id| tape.scalar_value(id).unwrap())
            .collect();
        assert_eq!(vals, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let p = tiny(0.7, -0.2, 0.1, 0.0, 0.0);
        for (x, t) in [(0.0, 0.0), (-1.0, 1.0), (0.3, 0.9)] {
            assert_eq!(forward_value(&p, x, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = tiny(1.0, 1.0, 0.0, 1.0, 0.0);
        assert!(matches!(
            forward_value(&p, f64::NAN, 0.0),
            Err(NetError::NonFiniteInput(..))
        ));
        let mut tape = Tape::new(p.len());
        assert!(forward_jet(&mut tape, &p, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn value_paths_agree_with_jet() {
        let arch = Architecture::new(3, 8);
        let p = random(arch, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..100)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let mut tape = Tape::new(p.len());
        let jet = forward_jet_batch(&mut tape, &p, &pts).unwrap();
        let taped = tape.value(jet.u).unwrap().row(0).to_vec();
        let plain = forward_values(&p, &pts).unwrap();
        let jv = jet_values(&p, &pts).unwrap();
        for (i, &v) in plain.iter().enumerate() {
            assert!((taped[i] - v).abs() <= 1e-12);
            assert!((jv.u[i] - v).abs() <= 1e-12);
            assert!((jv.u_xx[i] - tape.value(jet.u_xx).unwrap()[[0, i]]).abs() <= 1e-12);
        }
        let vt = forward_values_taped(&mut tape, &p, &pts).unwrap();
        for (i, &v) in plain.iter().enumerate() {
            assert!((tape.value(vt).unwrap()[[0, i]] - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = random(Architecture::new(2, 4), 9);
        let text = checkpoint_to_string(&p, 42).unwrap();
        let (q, seed) = checkpoint_from_str(&text).unwrap();
        assert_eq!(seed, 42);
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(text.contains("\"architecture\""));
        assert_eq!(checkpoint_to_string(&q, 42).unwrap(), text);
    }

    #[test]
    fn wrong_length_rejected() {
        let arch = Architecture::new(1, 1);
        assert!(ParamVector::from_vec(arch, vec![0.0; 4]).is_err());
        assert!(ParamVector::from_vec(arch, vec![0.0, 0.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
