//! Reverse-mode differentiation over a recorded tape of kernel calls.
//!
//! A [`Graph`] borrows a [`ParamSet`], records every operation applied to
//! its [`Var`]s, and replays the tape backwards to produce gradients for
//! each parameter. Batch-norm statistics observed in training mode are
//! collected so the caller can fold them into the running buffers.

use crate::error::{Error, Result};
use crate::kernels::attention::{self, AttentionCache, AttentionWeights};
use crate::kernels::graph::{self as gcn, BridgeCache};
use crate::kernels::norm::{self, BatchStats, NormCache};
use crate::kernels::{activation, conv, deform};
use crate::params::{ParamId, ParamKind, ParamSet};
use crate::tensor::{Real, Tensor};
use crate::training::loss::{composite_loss_with_grad, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T: Real> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    DeformConv2d { x: Var, offsets: Var, w: Var, b: Option<Var> },
    Mhsa { x: Var, w: [Var; 4], heads: usize, cache: AttentionCache<T> },
    GcnBridge { f: Var, w1: Var, w2: Var, cache: BridgeCache<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: NormCache<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: NormCache<T>, batch_stats: bool },
    Gelu { x: Var },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: Var },
    Concat { a: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Loss { logits: Var, grad: Tensor<T> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Running-statistics update produced by a training-mode batch norm.
pub struct StatUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats<T>,
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamSet<T>,
    mode: Mode,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>, mode: Mode) -> Self {
        Self { params, mode, nodes: Vec::new(), param_vars: vec![None; params.len()], stat_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient, for checking input derivatives.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let entry = self.params.entry(id);
        self.nodes.push(Node {
            value: entry.value.clone(),
            op: Op::Leaf,
            requires_grad: entry.kind == ParamKind::Trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Values of every recorded node, in tape order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, stride, pad }, &inputs))
    }

    pub fn deform_conv2d(&mut self, x: Var, offsets: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = deform::deform_conv2d(self.value(x), self.value(offsets), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, offsets, w];
        inputs.extend(b);
        Ok(self.push(out, Op::DeformConv2d { x, offsets, w, b }, &inputs))
    }

    pub fn mhsa(&mut self, x: Var, w: [Var; 4], heads: usize) -> Result<Var> {
        let weights = AttentionWeights {
            w_q: self.value(w[0]),
            w_k: self.value(w[1]),
            w_v: self.value(w[2]),
            w_o: self.value(w[3]),
        };
        let (out, cache) = attention::mhsa(self.value(x), &weights, heads)?;
        Ok(self.push(out, Op::Mhsa { x, w, heads, cache }, &[x, w[0], w[1], w[2], w[3]]))
    }

    pub fn gcn_bridge(&mut self, f: Var, w1: Var, w2: Var) -> Result<Var> {
        let (out, cache) = gcn::gcn_bridge(self.value(f), self.value(w1), self.value(w2))?;
        Ok(self.push(out, Op::GcnBridge { f, w1, w2, cache }, &[f, w1, w2]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, cache) = norm::layer_norm(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, cache }, &[x, gamma, beta]))
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let running = match self.mode {
            Mode::Train => None,
            Mode::Eval => Some((self.params.get(running_mean), self.params.get(running_var))),
        };
        let (out, cache, stats) = norm::batch_norm(self.value(x), self.value(g), self.value(b), running)?;
        if let Some(stats) = stats {
            self.stat_updates.push(StatUpdate { running_mean, running_var, stats });
        }
        let batch_stats = self.mode == Mode::Train;
        Ok(self.push(out, Op::BatchNorm { x, gamma: g, beta: b, cache, batch_stats }, &[x, g, b]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(activation::gelu);
        self.push(out, Op::Gelu { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// `s * x` for a single-element `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::ShapeMismatch(format!("scale factor {:?} is not a scalar", self.value(s).dims())));
        }
        let k = self.value(s).data()[0];
        let out = self.value(x).scale(k);
        Ok(self.push(out, Op::Scale { x, s }, &[x, s]))
    }

    /// Channel-axis concatenation of two `[b, c, h, w]` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = self.value(a).dims4()?;
        let [bb, cb, hb, wb] = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::ShapeMismatch(format!(
                "concat {:?} with {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            )));
        }
        let n = ha * wa;
        let mut out = Vec::with_capacity((ca + cb) * n * ba);
        for bi in 0..ba {
            out.extend_from_slice(&self.value(a).data()[bi * ca * n..(bi + 1) * ca * n]);
            out.extend_from_slice(&self.value(b).data()[bi * cb * n..(bi + 1) * cb * n]);
        }
        let t = Tensor::raw(vec![ba, ca + cb, ha, wa], out);
        Ok(self.push(t, Op::Concat { a, b }, &[a, b]))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = conv::max_pool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// Scalar composite loss of `logits` against a fixed target.
    pub fn composite_loss(&mut self, logits: Var, target: &Tensor<T>, w: LossWeights) -> Result<Var> {
        let (loss, grad) = composite_loss_with_grad(self.value(logits), target, w)?;
        Ok(self.push(Tensor::scalar(loss), Op::Loss { logits, grad }, &[logits]))
    }

    /// Back-propagates from `root`, seeded with ones (or `seed` if given).
    pub fn backward(&self, root: Var, seed: Option<Tensor<T>>) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = seed.unwrap_or_else(|| Tensor::full(self.value(root).dims(), T::one()));
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads, param_vars: self.param_vars.clone() }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let r = conv::conv2d_backward(self.value(*x), self.value(*w), b.is_some(), *stride, *pad, g, self.needs(*x));
                if let Some(dx) = r.input {
                    acc(*x, dx);
                }
                acc(*w, r.weight);
                if let (Some(b), Some(db)) = (b, r.bias) {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let r = conv::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    b.is_some(),
                    *stride,
                    *pad,
                    g,
                    self.needs(*x),
                );
                if let Some(dx) = r.input {
                    acc(*x, dx);
                }
                acc(*w, r.weight);
                if let (Some(b), Some(db)) = (b, r.bias) {
                    acc(*b, db);
                }
            }
            Op::DeformConv2d { x, offsets, w, b } => {
                let r = deform::deform_conv2d_backward(
                    self.value(*x),
                    self.value(*offsets),
                    self.value(*w),
                    b.is_some(),
                    g,
                    self.needs(*x),
                    self.needs(*offsets),
                );
                if let Some(dx) = r.input {
                    acc(*x, dx);
                }
                if let Some(doff) = r.offsets {
                    acc(*offsets, doff);
                }
                acc(*w, r.weight);
                if let (Some(b), Some(db)) = (b, r.bias) {
                    acc(*b, db);
                }
            }
            Op::Mhsa { x, w, heads, cache } => {
                let weights = AttentionWeights {
                    w_q: self.value(w[0]),
                    w_k: self.value(w[1]),
                    w_v: self.value(w[2]),
                    w_o: self.value(w[3]),
                };
                let r = attention::mhsa_backward(self.value(*x), &weights, *heads, cache, g, self.needs(*x));
                if let Some(dx) = r.input {
                    acc(*x, dx);
                }
                acc(w[0], r.w_q);
                acc(w[1], r.w_k);
                acc(w[2], r.w_v);
                acc(w[3], r.w_o);
            }
            Op::GcnBridge { f, w1, w2, cache } => {
                let r = gcn::gcn_bridge_backward(self.value(*f), self.value(*w1), self.value(*w2), cache, g, self.needs(*f));
                if let Some(df) = r.input {
                    acc(*f, df);
                }
                acc(*w1, r.w1);
                acc(*w2, r.w2);
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let r = norm::layer_norm_backward(self.value(*x).dims(), self.value(*gamma), cache, g, self.needs(*x));
                if let Some(dx) = r.input {
                    acc(*x, dx);
                }
                acc(*gamma, r.gamma);
                acc(*beta, r.beta);
            }
            Op::BatchNorm { x, gamma, beta, cache, batch_stats } => {
                let r = norm::batch_norm_backward(
                    self.value(*x).dims(),
                    self.value(*gamma),
                    cache,
                    *batch_stats,
                    g,
                    self.needs(*x),
                );
                if let Some(dx) = r.input {
                    acc(*x, dx);
                }
                acc(*gamma, r.gamma);
                acc(*beta, r.beta);
            }
            Op::Gelu { x } => {
                let dx = self.value(*x).zip_map(g, |v, d| d * activation::gelu_grad(v)).expect("same shape");
                acc(*x, dx);
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .zip_map(g, |v, d| if v > T::zero() { d } else { T::zero() })
                    .expect("same shape");
                acc(*x, dx);
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Scale { x, s } => {
                let k = self.value(*s).data()[0];
                if self.needs(*x) {
                    acc(*x, g.scale(k));
                }
                if self.needs(*s) {
                    let ds: T = self.value(*x).data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                    acc(*s, Tensor::raw(self.value(*s).dims().to_vec(), vec![ds]));
                }
            }
            Op::Concat { a, b } => {
                let [bn, ca, h, w] = self.value(*a).dims4().unwrap();
                let cb = self.value(*b).dims()[1];
                let n = h * w;
                let mut ga = Vec::with_capacity(bn * ca * n);
                let mut gb = Vec::with_capacity(bn * cb * n);
                for bi in 0..bn {
                    let base = bi * (ca + cb) * n;
                    ga.extend_from_slice(&g.data()[base..base + ca * n]);
                    gb.extend_from_slice(&g.data()[base + ca * n..base + (ca + cb) * n]);
                }
                if self.needs(*a) {
                    acc(*a, Tensor::raw(vec![bn, ca, h, w], ga));
                }
                if self.needs(*b) {
                    acc(*b, Tensor::raw(vec![bn, cb, h, w], gb));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                acc(*x, conv::max_pool2_backward(self.value(*x).dims(), argmax, g));
            }
            Op::Loss { logits, grad } => {
                let k = g.data()[0];
                acc(*logits, grad.scale(k));
            }
        }
    }
}

pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Real> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a parameter; `None` if it did not take part in the pass.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.param_vars[id.0].and_then(|v| self.of(v))
    }

    /// One gradient per parameter, zero where the parameter was unused or is
    /// a buffer.
    pub fn into_param_grads(mut self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        params
            .iter()
            .map(|(id, e)| {
                let g = self.param_vars[id.0].and_then(|v| self.grads[v.0].take());
                match (e.kind, g) {
                    (ParamKind::Trainable, Some(g)) => g,
                    _ => Tensor::zeros(e.value.dims()),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn shared_input_accumulates_gradient() {
        let mut ps = ParamSet::<f64>::new(0);
        let s = ps.add("s", &[1], Init::Constant(3.0), ParamKind::Trainable);
        let mut g = Graph::new(&ps, Mode::Train);
        let x = g.variable(Tensor::new(&[1, 1, 1, 2], vec![1.0, -2.0]).unwrap());
        let sv = g.param(s);
        let y = g.scale(x, sv).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z, None);
        // z = (s + 1) x
        assert_eq!(grads.of(x).unwrap().data(), &[4.0, 4.0]);
        assert_eq!(grads.param(s).unwrap().data(), &[-1.0]);
    }

    #[test]
    fn buffers_and_inputs_get_no_gradient() {
        let mut ps = ParamSet::<f64>::new(0);
        let buf = ps.add("buf", &[1], Init::Constant(2.0), ParamKind::Buffer);
        let mut g = Graph::new(&ps, Mode::Train);
        let x = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.param(buf);
        let y = g.scale(x, b).unwrap();
        let grads = g.backward(y, None);
        assert!(grads.of(x).is_none());
        let all = grads.into_param_grads(&ps);
        assert_eq!(all[0].data(), &[0.0]);
    }
}
