//! Reverse-mode differentiation with respect to parameters.
//!
//! Nodes are recorded eagerly at whole-layer granularity. A node value is
//! either a plain tensor or a batch of [`Jet2`]s; jets carry the input-space
//! derivatives forward, so a single reverse sweep yields parameter gradients
//! of losses that involve `u`, `u_xx` and `u_yy`.
//!
//! Jet batches are stored `[feature][channel][point]`, which makes every
//! linear layer a single GEMM over `5·points` columns.

use crate::error::{Error, Result};
use crate::jet::{Jet2, CHANNELS};
use crate::kernels;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{probe, DenseTensor};
use crate::tt::TtShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `features × points` jets, stored `[feature][channel][point]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    features: usize,
    points: usize,
    data: Vec<f64>,
}

impl JetBatch {
    pub fn zeros(features: usize, points: usize) -> Self {
        Self { features, points, data: probe::buffer(features * CHANNELS * points) }
    }

    pub fn from_fn(features: usize, points: usize, mut f: impl FnMut(usize, usize) -> Jet2) -> Self {
        let mut batch = Self::zeros(features, points);
        for i in 0..features {
            for p in 0..points {
                batch.set(i, p, f(i, p));
            }
        }
        batch
    }

    /// The two input variables at each point: feature 0 is `x`, feature 1 is `y`.
    pub fn seeds(points: &[(f64, f64)]) -> Self {
        Self::from_fn(2, points.len(), |f, p| {
            let (x, y) = points[p];
            if f == 0 {
                Jet2::var_x(x)
            } else {
                Jet2::var_y(y)
            }
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, feature: usize, point: usize) -> Jet2 {
        let base = feature * CHANNELS * self.points + point;
        let mut c = [0.0; CHANNELS];
        for (ch, v) in c.iter_mut().enumerate() {
            *v = self.data[base + ch * self.points];
        }
        Jet2::from_channels(c)
    }

    pub fn set(&mut self, feature: usize, point: usize, jet: Jet2) {
        let base = feature * CHANNELS * self.points + point;
        for (ch, v) in jet.channels().into_iter().enumerate() {
            self.data[base + ch * self.points] = v;
        }
    }

    fn batch(&self) -> usize {
        CHANNELS * self.points
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Plain(DenseTensor),
    Jets(JetBatch),
}

impl Value {
    pub fn as_plain(&self) -> Option<&DenseTensor> {
        match self {
            Value::Plain(t) => Some(t),
            Value::Jets(_) => None,
        }
    }

    pub fn as_jets(&self) -> Option<&JetBatch> {
        match self {
            Value::Jets(j) => Some(j),
            Value::Plain(_) => None,
        }
    }

    fn raw(&self) -> &[f64] {
        match self {
            Value::Plain(t) => t.data(),
            Value::Jets(j) => &j.data,
        }
    }

    fn len(&self) -> usize {
        self.raw().len()
    }
}

enum Op {
    Param(ParamId),
    Constant,
    Affine { w: NodeId, b: Option<NodeId>, x: NodeId, out_dim: usize, in_dim: usize },
    Tt { shape: TtShape, cores: Vec<NodeId>, b: Option<NodeId>, x: NodeId, cache: kernels::TtCache },
    SinJets { x: NodeId, sines: Vec<f64>, cosines: Vec<f64> },
    SinPlain { x: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Pointwise { x: NodeId, partials: Vec<[f64; CHANNELS]> },
    MeanSquare(NodeId),
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Value,
}

/// Computation record for one loss evaluation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Layout of a linear layer's input: `(in_dim, batch, bias columns)` plus
/// whether it is a jet batch.
struct LinearInput {
    dim: usize,
    batch: usize,
    bias_cols: usize,
    points: Option<usize>,
}

impl Drop for Tape<'_> {
    fn drop(&mut self) {
        for node in self.nodes.drain(..) {
            if let Op::SinJets { sines, cosines, .. } = node.op {
                probe::recycle(sines);
                probe::recycle(cosines);
            }
            probe::recycle(match node.value {
                Value::Plain(t) => t.into_data(),
                Value::Jets(j) => j.data,
            });
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Value> {
        self.nodes.get(id.0).map(|n| &n.value).ok_or(Error::UnknownNode(id.0))
    }

    /// Scalar value of a one-element plain node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        match self.value(id)? {
            Value::Plain(t) if t.len() == 1 => Ok(t.data()[0]),
            _ => Err(Error::Tape(format!("node {} is not a scalar", id.0))),
        }
    }

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn plain(&self, id: NodeId) -> Result<&DenseTensor> {
        self.value(id)?
            .as_plain()
            .ok_or_else(|| Error::Tape(format!("node {} holds jets, expected a plain tensor", id.0)))
    }

    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        let p = self.params.get(id)?;
        let value = DenseTensor::new(p.shape.clone(), p.data.clone())?;
        Ok(self.push(Op::Param(id), Value::Plain(value)))
    }

    pub fn constant(&mut self, value: Value) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn seeds(&mut self, points: &[(f64, f64)]) -> NodeId {
        self.constant(Value::Jets(JetBatch::seeds(points)))
    }

    fn linear_input(&self, x: NodeId) -> Result<LinearInput> {
        Ok(match self.value(x)? {
            Value::Jets(j) => {
                LinearInput { dim: j.features, batch: j.batch(), bias_cols: j.points, points: Some(j.points) }
            }
            Value::Plain(t) => match t.shape() {
                [n] => LinearInput { dim: *n, batch: 1, bias_cols: 1, points: None },
                [n, b] => LinearInput { dim: *n, batch: *b, bias_cols: *b, points: None },
                s => return Err(Error::Tape(format!("linear input must be 1- or 2-way, got {s:?}"))),
            },
        })
    }

    fn wrap_linear_output(out: Vec<f64>, out_dim: usize, input: &LinearInput) -> Result<Value> {
        Ok(match input.points {
            Some(points) => Value::Jets(JetBatch { features: out_dim, points, data: out }),
            None if input.batch == 1 => Value::Plain(DenseTensor::new(vec![out_dim], out)?),
            None => Value::Plain(DenseTensor::new(vec![out_dim, input.batch], out)?),
        })
    }

    fn check_bias(&self, b: Option<NodeId>, out_dim: usize) -> Result<()> {
        if let Some(b) = b {
            let len = self.plain(b)?.len();
            if len != out_dim {
                return Err(Error::size(format!("bias has {len} entries, layer output is {out_dim}")));
            }
        }
        Ok(())
    }

    /// `W x + b`; on jets the bias only enters the value channel.
    pub fn affine(&mut self, w: NodeId, b: Option<NodeId>, x: NodeId) -> Result<NodeId> {
        let input = self.linear_input(x)?;
        let wt = self.plain(w)?;
        let (out_dim, in_dim) = match wt.shape() {
            [o, i] => (*o, *i),
            s => return Err(Error::Tape(format!("weight must be a matrix, got {s:?}"))),
        };
        if in_dim != input.dim {
            return Err(Error::size(format!("weight expects {in_dim} inputs, got {}", input.dim)));
        }
        self.check_bias(b, out_dim)?;
        let bias = b.map(|b| self.plain(b).map(|t| t.data())).transpose()?;
        let out = kernels::affine_forward(
            wt.data(),
            bias,
            self.value(x)?.raw(),
            out_dim,
            in_dim,
            input.batch,
            input.bias_cols,
        );
        let value = Self::wrap_linear_output(out, out_dim, &input)?;
        Ok(self.push(Op::Affine { w, b, x, out_dim, in_dim }, value))
    }

    /// TT-factorized `W x + b`, contracting the cores directly.
    pub fn tt_affine(&mut self, shape: &TtShape, cores: &[NodeId], b: Option<NodeId>, x: NodeId) -> Result<NodeId> {
        let input = self.linear_input(x)?;
        if cores.len() != 2 * shape.d() {
            return Err(Error::RankChain(format!("{} cores for d={}", cores.len(), shape.d())));
        }
        for (k, &c) in cores.iter().enumerate() {
            let got = self.plain(c)?.shape();
            if got != shape.core_shape(k) {
                return Err(Error::RankChain(format!("core {k} has shape {got:?}, expected {:?}", shape.core_shape(k))));
            }
        }
        if input.dim != shape.cols() {
            return Err(Error::size(format!("TT layer expects {} inputs, got {}", shape.cols(), input.dim)));
        }
        self.check_bias(b, shape.rows())?;
        let core_data: Vec<&[f64]> = cores.iter().map(|&c| self.plain(c).map(|t| t.data())).collect::<Result<_>>()?;
        let (mut out, cache) = kernels::tt_forward(shape, &core_data, self.value(x)?.raw(), input.batch);
        if let Some(b) = b {
            kernels::add_bias(&mut out, self.plain(b)?.data(), input.batch, input.bias_cols);
        }
        let value = Self::wrap_linear_output(out, shape.rows(), &input)?;
        Ok(self.push(Op::Tt { shape: shape.clone(), cores: cores.to_vec(), b, x, cache }, value))
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        match self.value(x)? {
            Value::Jets(j) => {
                let (out, sines, cosines) = kernels::sin_jets_forward(&j.data, j.features, j.points);
                let value = Value::Jets(JetBatch { features: j.features, points: j.points, data: out });
                Ok(self.push(Op::SinJets { x, sines, cosines }, value))
            }
            Value::Plain(t) => {
                let out = DenseTensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.sin()).collect())?;
                Ok(self.push(Op::SinPlain { x }, Value::Plain(out)))
            }
        }
    }

    fn same_layout(&self, a: NodeId, b: NodeId) -> Result<()> {
        let ok = match (self.value(a)?, self.value(b)?) {
            (Value::Plain(x), Value::Plain(y)) => x.shape() == y.shape(),
            (Value::Jets(x), Value::Jets(y)) => x.features == y.features && x.points == y.points,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::size(format!("nodes {} and {} have different layouts", a.0, b.0)))
        }
    }

    fn map_value(template: &Value, data: Vec<f64>) -> Result<Value> {
        Ok(match template {
            Value::Plain(t) => Value::Plain(DenseTensor::new(t.shape().to_vec(), data)?),
            Value::Jets(j) => Value::Jets(JetBatch { features: j.features, points: j.points, data }),
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_layout(a, b)?;
        let va = self.value(a)?;
        let data = va.raw().iter().zip(self.value(b)?.raw()).map(|(x, y)| x + y).collect();
        let value = Self::map_value(va, data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Elementwise product; the product rule applies on jets.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_layout(a, b)?;
        let value = match (self.value(a)?, self.value(b)?) {
            (Value::Jets(x), Value::Jets(y)) => {
                Value::Jets(JetBatch::from_fn(x.features, x.points, |f, p| x.get(f, p) * y.get(f, p)))
            }
            (va, vb) => {
                let data = va.raw().iter().zip(vb.raw()).map(|(x, y)| x * y).collect();
                Self::map_value(va, data)?
            }
        };
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let va = self.value(a)?;
        let value = Self::map_value(va, va.raw().iter().map(|x| c * x).collect())?;
        Ok(self.push(Op::Scale(a, c), value))
    }

    /// Maps every jet to a scalar. `f(feature, point, jet)` returns the value
    /// and its partials with respect to the five channels. The result is a
    /// plain `[features, points]` tensor.
    pub fn pointwise(
        &mut self,
        x: NodeId,
        mut f: impl FnMut(usize, usize, Jet2) -> (f64, [f64; CHANNELS]),
    ) -> Result<NodeId> {
        let j = self
            .value(x)?
            .as_jets()
            .ok_or_else(|| Error::Tape(format!("pointwise needs a jet node, node {} is plain", x.0)))?;
        let mut out = Vec::with_capacity(j.features * j.points);
        let mut partials = Vec::with_capacity(j.features * j.points);
        for feat in 0..j.features {
            for p in 0..j.points {
                let (v, d) = f(feat, p, j.get(feat, p));
                out.push(v);
                partials.push(d);
            }
        }
        let value = Value::Plain(DenseTensor::new(vec![j.features, j.points], out)?);
        Ok(self.push(Op::Pointwise { x, partials }, value))
    }

    /// Value channel of a jet node as a plain tensor.
    pub fn values(&mut self, x: NodeId) -> Result<NodeId> {
        self.pointwise(x, |_, _, j| (j.v, [1.0, 0.0, 0.0, 0.0, 0.0]))
    }

    /// Mean of squared entries of a plain node.
    pub fn mean_square(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.plain(x)?;
        let ms = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        Ok(self.push(Op::MeanSquare(x), Value::Plain(DenseTensor::scalar(ms))))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.plain(x)?.data().iter().sum();
        Ok(self.push(Op::Sum(x), Value::Plain(DenseTensor::scalar(s))))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in the
    /// store (zero for parameters that do not reach the loss).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        match self.value(loss)? {
            Value::Plain(t) if t.len() == 1 => {}
            _ => return Err(Error::Tape(format!("loss node {} is not a scalar", loss.0))),
        }
        let mut out = self.params.zeros_like();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    for (slot, v) in out.get_mut(*pid).iter_mut().zip(&g) {
                        *slot += v;
                    }
                }
                Op::Affine { w, b, x, out_dim, in_dim } => {
                    let input = self.linear_input(*x)?;
                    let xv = self.value(*x)?.raw();
                    let (dw, dx) =
                        kernels::affine_backward(self.plain(*w)?.data(), xv, &g, *out_dim, *in_dim, input.batch);
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, kernels::bias_grad(&g, input.batch, input.bias_cols));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tt { shape, cores, b, x, cache } => {
                    let input = self.linear_input(*x)?;
                    let core_data: Vec<&[f64]> =
                        cores.iter().map(|&c| self.plain(c).map(|t| t.data())).collect::<Result<_>>()?;
                    let (dcores, dx) =
                        kernels::tt_backward(shape, &core_data, cache, self.value(*x)?.raw(), &g, input.batch);
                    for (&c, dc) in cores.iter().zip(dcores) {
                        accumulate(&mut grads, c, dc);
                    }
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, kernels::bias_grad(&g, input.batch, input.bias_cols));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SinJets { x, sines, cosines } => {
                    let j = self.value(*x)?.as_jets().expect("recorded on jets");
                    let dx = kernels::sin_jets_backward(&j.data, sines, cosines, &g, j.features, j.points);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SinPlain { x } => {
                    let xv = self.value(*x)?.raw();
                    let dx = xv.iter().zip(&g).map(|(v, gi)| v.cos() * gi).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (da, db) = match (self.value(*a)?, self.value(*b)?) {
                        (Value::Jets(ja), Value::Jets(jb)) => (jet_mul_grad(jb, &g), jet_mul_grad(ja, &g)),
                        (va, vb) => (
                            vb.raw().iter().zip(&g).map(|(y, gi)| y * gi).collect(),
                            va.raw().iter().zip(&g).map(|(x, gi)| x * gi).collect(),
                        ),
                    };
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| c * v).collect());
                }
                Op::Pointwise { x, partials } => {
                    let j = self.value(*x)?.as_jets().expect("recorded on jets");
                    let mut dx = probe::buffer(j.data.len());
                    for feat in 0..j.features {
                        for p in 0..j.points {
                            let k = feat * j.points + p;
                            for ch in 0..CHANNELS {
                                dx[(feat * CHANNELS + ch) * j.points + p] = g[k] * partials[k][ch];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanSquare(x) => {
                    let xv = self.value(*x)?.raw();
                    let scale = 2.0 * g[0] / xv.len() as f64;
                    accumulate(&mut grads, *x, xv.iter().map(|v| scale * v).collect());
                }
                Op::Sum(x) => {
                    let n = self.value(*x)?.len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
            }
            probe::recycle(g);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
            probe::recycle(g);
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradient flowing into one factor of a jet product, given the other
/// factor `other` and the upstream gradient `g`.
fn jet_mul_grad(other: &JetBatch, g: &[f64]) -> Vec<f64> {
    let n = other.points;
    let mut out = probe::buffer(other.data.len());
    for f in 0..other.features {
        let base = f * CHANNELS * n;
        let o = &other.data[base..base + CHANNELS * n];
        let gi = &g[base..base + CHANNELS * n];
        let r = &mut out[base..base + CHANNELS * n];
        for p in 0..n {
            let (bv, bx, by, bxx, byy) = (o[p], o[n + p], o[2 * n + p], o[3 * n + p], o[4 * n + p]);
            let (gv, gx, gy, gxx, gyy) = (gi[p], gi[n + p], gi[2 * n + p], gi[3 * n + p], gi[4 * n + p]);
            r[p] = gv * bv + gx * bx + gy * by + gxx * bxx + gyy * byy;
            r[n + p] = gx * bv + 2.0 * gxx * bx;
            r[2 * n + p] = gy * bv + 2.0 * gyy * by;
            r[3 * n + p] = gxx * bv;
            r[4 * n + p] = gyy * bv;
        }
    }
    out
}
