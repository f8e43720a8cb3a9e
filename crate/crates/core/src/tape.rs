//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! Every node holds a dense `rows × cols` matrix. Scalars are `1 × 1` nodes, so
//! the same tape differentiates a single `θ²` and a batched network jet over ten
//! thousand collocation points. Nodes are appended in evaluation order; an
//! input id is always smaller than the id of the node that consumes it.
//!
//! Parameter leaves are bound to a slice of a flat parameter vector, and
//! [`Tape::backward`] returns the gradient of a scalar root with respect to
//! that whole vector. Constants and other non-parameter leaves receive no
//! gradient.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("node {0} does not exist on this tape")]
    UnknownNode(usize),
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward root must be a 1x1 node, got {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("parameter slice {offset}..{end} exceeds parameter count {n_params}")]
    ParamOutOfRange {
        offset: usize,
        end: usize,
        n_params: usize,
    },
    #[error("column block {start}..{end} exceeds {cols} columns")]
    ColumnsOutOfRange {
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("invalid operand: {0}")]
    InvalidOperand(&'static str),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds the tape can record.
#[derive(Clone, Debug)]
enum Op {
    /// Leaf bound to `params[offset .. offset + rows*cols]`, row-major.
    Param {
        offset: usize,
    },
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Square(NodeId),
    Tanh(NodeId),
    /// `offset + Σ coeff_i · input_i`
    LinComb {
        terms: Vec<(NodeId, f64)>,
    },
    /// `W · A`, plus a column bias added to the first `bias_cols` columns.
    Affine {
        weight: NodeId,
        input: NodeId,
        bias: Option<(NodeId, usize)>,
    },
    /// Column-stacked jet `[z | z_x | z_t | z_xx]` through `tanh`.
    TanhJet {
        input: NodeId,
        block: usize,
    },
    Columns {
        input: NodeId,
        start: usize,
    },
    MeanSquares(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Gradient of a scalar with respect to the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        // scaled to avoid overflow on pathological gradients
        let scale = self.0.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        let sum: f64 = self.0.iter().map(|g| (g / scale) * (g / scale)).sum();
        scale * sum.sqrt()
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &GradVector) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += a * o;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

impl std::ops::Index<usize> for GradVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    n_params: usize,
}

impl Tape {
    /// A tape whose parameter leaves index into a vector of `n_params` entries.
    pub fn new(n_params: usize) -> Self {
        Self {
            nodes: Vec::new(),
            n_params,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn value(&self, id: NodeId) -> Result<&Array2<f64>, TapeError> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(TapeError::UnknownNode(id.0))
    }

    /// Value of a `1 × 1` node.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64, TapeError> {
        let v = self.value(id)?;
        if v.dim() != (1, 1) {
            return Err(TapeError::NonScalarRoot(v.dim()));
        }
        Ok(v[[0, 0]])
    }

    pub fn shape(&self, id: NodeId) -> Result<(usize, usize), TapeError> {
        Ok(self.value(id)?.dim())
    }

    fn record(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn check(&self, id: NodeId) -> Result<&Array2<f64>, TapeError> {
        self.value(id)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TapeError> {
        let (sa, sb) = (self.check(a)?.dim(), self.check(b)?.dim());
        if sa != sb {
            return Err(TapeError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    /// Parameter leaf reading `rows*cols` entries of `params` starting at `offset`.
    pub fn param(
        &mut self,
        params: &[f64],
        offset: usize,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, TapeError> {
        let end = offset + rows * cols;
        if end > self.n_params || end > params.len() {
            return Err(TapeError::ParamOutOfRange {
                offset,
                end,
                n_params: self.n_params.min(params.len()),
            });
        }
        let value = Array2::from_shape_vec((rows, cols), params[offset..end].to_vec())
            .expect("slice length matches shape");
        Ok(self.record(Op::Param { offset }, value))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.record(Op::Constant, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("add", a, b)?;
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.record(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("sub", a, b)?;
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.record(Op::Sub(a, b), v))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("mul", a, b)?;
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.record(Op::Mul(a, b), v))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.check(a)?.mapv(|x| x * x);
        Ok(self.record(Op::Square(a), v))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.check(a)?.mapv(f64::tanh);
        Ok(self.record(Op::Tanh(a), v))
    }

    /// `offset + Σ coeff · input` over same-shaped inputs.
    pub fn lin_comb(&mut self, terms: &[(NodeId, f64)], offset: f64) -> Result<NodeId, TapeError> {
        let Some(&(first, _)) = terms.first() else {
            return Err(TapeError::InvalidOperand(
                "lin_comb needs at least one term",
            ));
        };
        for &(id, _) in terms {
            self.same_shape("lin_comb", first, id)?;
        }
        let mut v = Array2::from_elem(self.nodes[first.0].value.dim(), offset);
        for &(id, c) in terms {
            v.scaled_add(c, &self.nodes[id.0].value);
        }
        Ok(self.record(
            Op::LinComb {
                terms: terms.to_vec(),
            },
            v,
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.lin_comb(&[(a, c)], 0.0)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId, TapeError> {
        self.lin_comb(&[(a, 1.0)], c)
    }

    /// Dense layer `W · A`; `bias` (an `out × 1` node) is added to the first
    /// `bias_cols` columns only, which for a column-stacked jet is the value block.
    pub fn affine(
        &mut self,
        weight: NodeId,
        input: NodeId,
        bias: Option<(NodeId, usize)>,
    ) -> Result<NodeId, TapeError> {
        let (wr, wc) = self.check(weight)?.dim();
        let (ar, ac) = self.check(input)?.dim();
        if wc != ar {
            return Err(TapeError::ShapeMismatch {
                op: "affine",
                left: (wr, wc),
                right: (ar, ac),
            });
        }
        let mut z = self.nodes[weight.0].value.dot(&self.nodes[input.0].value);
        if let Some((b, cols)) = bias {
            let bv = self.check(b)?;
            if bv.dim() != (wr, 1) || cols > ac {
                return Err(TapeError::ShapeMismatch {
                    op: "affine bias",
                    left: bv.dim(),
                    right: (wr, cols),
                });
            }
            let bcol = bv.column(0).to_owned();
            for mut row_block in z.slice_mut(s![.., ..cols]).axis_iter_mut(Axis(1)) {
                row_block += &bcol;
            }
        }
        Ok(self.record(
            Op::Affine {
                weight,
                input,
                bias,
            },
            z,
        ))
    }

    /// `tanh` applied to a jet stored as four column blocks of width `block`:
    /// `[z | z_x | z_t | z_xx]` → `[v | v_x | v_t | v_xx]` with
    /// `v = tanh z`, `v_x = (1−v²) z_x`, `v_t = (1−v²) z_t`,
    /// `v_xx = (1−v²) z_xx − 2v(1−v²) z_x²`.
    pub fn tanh_jet(&mut self, input: NodeId, block: usize) -> Result<NodeId, TapeError> {
        let z = self.check(input)?;
        let (rows, cols) = z.dim();
        if cols != 4 * block {
            return Err(TapeError::ShapeMismatch {
                op: "tanh_jet",
                left: (rows, cols),
                right: (rows, 4 * block),
            });
        }
        let zs = z.as_standard_layout();
        let zs = zs.as_slice().expect("standard layout");
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let base = r * cols;
            for j in 0..block {
                let (i0, ix, it, ixx) = (
                    base + j,
                    base + block + j,
                    base + 2 * block + j,
                    base + 3 * block + j,
                );
                let th = zs[i0].tanh();
                let sech2 = 1.0 - th * th;
                out[i0] = th;
                out[ix] = sech2 * zs[ix];
                out[it] = sech2 * zs[it];
                out[ixx] = sech2 * zs[ixx] - 2.0 * th * sech2 * zs[ix] * zs[ix];
            }
        }
        let out = Array2::from_shape_vec((rows, cols), out).expect("jet shape");
        Ok(self.record(Op::TanhJet { input, block }, out))
    }

    /// Column block `[start, start + len)`.
    pub fn columns(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        let v = self.check(a)?;
        let cols = v.ncols();
        if start + len > cols {
            return Err(TapeError::ColumnsOutOfRange {
                start,
                end: start + len,
                cols,
            });
        }
        let block = v.slice(s![.., start..start + len]).to_owned();
        Ok(self.record(Op::Columns { input: a, start }, block))
    }

    /// Mean of squared entries, as a `1 × 1` node. Uses compensated summation.
    pub fn mean_squares(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let v = self.check(a)?;
        if v.is_empty() {
            return Err(TapeError::InvalidOperand("mean_squares of an empty node"));
        }
        let n = v.len() as f64;
        let m = compensated_sum(v.iter().map(|x| x * x)) / n;
        Ok(self.record(Op::MeanSquares(a), Array2::from_elem((1, 1), m)))
    }

    /// Gradient of the scalar `root` with respect to every parameter.
    /// The tape itself is not modified, so repeated calls agree exactly.
    pub fn backward(&self, root: NodeId) -> Result<GradVector, TapeError> {
        let rv = self.check(root)?;
        if rv.dim() != (1, 1) {
            return Err(TapeError::NonScalarRoot(rv.dim()));
        }
        let mut grad = vec![0.0; self.n_params];
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param { offset } => {
                    for (dst, src) in grad[*offset..].iter_mut().zip(g.iter()) {
                        *dst += src;
                    }
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, -&g);
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Square(a) => {
                    let ga = &g * &self.nodes[a.0].value * 2.0;
                    accumulate(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&gi, &v| gi * (1.0 - v * v));
                    accumulate(&mut adj, *a, ga);
                }
                Op::LinComb { terms } => {
                    for &(id, c) in terms {
                        accumulate(&mut adj, id, &g * c);
                    }
                }
                Op::Affine {
                    weight,
                    input,
                    bias,
                } => {
                    let w = &self.nodes[weight.0].value;
                    let a = &self.nodes[input.0].value;
                    if let Some((b, cols)) = bias {
                        let gb = g
                            .slice(s![.., ..*cols])
                            .sum_axis(Axis(1))
                            .insert_axis(Axis(1));
                        accumulate(&mut adj, *b, gb);
                    }
                    if needs_grad(&self.nodes[weight.0].op) {
                        accumulate(&mut adj, *weight, g.dot(&a.t()));
                    }
                    if needs_grad(&self.nodes[input.0].op) {
                        accumulate(&mut adj, *input, w.t().dot(&g));
                    }
                }
                Op::TanhJet { input, block } => {
                    let gz = tanh_jet_vjp(
                        self.nodes[input.0].value.view(),
                        node.value.view(),
                        g.view(),
                        *block,
                    );
                    accumulate(&mut adj, *input, gz);
                }
                Op::Columns { input, start } => {
                    let mut full = Array2::zeros(self.nodes[input.0].value.dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    accumulate(&mut adj, *input, full);
                }
                Op::MeanSquares(a) => {
                    let av = &self.nodes[a.0].value;
                    let c = 2.0 * g[[0, 0]] / av.len() as f64;
                    accumulate(&mut adj, *a, av * c);
                }
            }
        }
        Ok(GradVector(grad))
    }
}

fn needs_grad(op: &Op) -> bool {
    !matches!(op, Op::Constant)
}

fn accumulate(adj: &mut [Option<Array2<f64>>], id: NodeId, contrib: Array2<f64>) {
    match &mut adj[id.0] {
        Some(acc) => *acc += &contrib,
        slot @ None => *slot = Some(contrib),
    }
}

fn tanh_jet_vjp(
    z: ArrayView2<'_, f64>,
    out: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    block: usize,
) -> Array2<f64> {
    let (rows, cols) = z.dim();
    let (z, out, g) = (
        z.as_standard_layout(),
        out.as_standard_layout(),
        g.as_standard_layout(),
    );
    let (z, v, g) = (
        z.as_slice().expect("standard layout"),
        out.as_slice().expect("standard layout"),
        g.as_slice().expect("standard layout"),
    );
    let mut res = vec![0.0; rows * cols];
    for r in 0..rows {
        let base = r * cols;
        for j in 0..block {
            let (i0, ix, it, ixx) = (
                base + j,
                base + block + j,
                base + 2 * block + j,
                base + 3 * block + j,
            );
            let th = v[i0];
            let (ax, at, axx) = (z[ix], z[it], z[ixx]);
            let (b0, bx, bt, bxx) = (g[i0], g[ix], g[it], g[ixx]);
            let s = 1.0 - th * th;
            // adjoint of s = 1 - v²
            let ds = bx * ax + bt * at + bxx * (axx - 2.0 * th * ax * ax);
            // adjoint of v through its explicit occurrences
            let dv = b0 - 2.0 * s * ax * ax * bxx;
            res[i0] = s * dv - 2.0 * th * s * ds;
            res[ix] = s * (bx - 4.0 * th * ax * bxx);
            res[it] = s * bt;
            res[ixx] = s * bxx;
        }
    }
    Array2::from_shape_vec((rows, cols), res).expect("jet shape")
}
