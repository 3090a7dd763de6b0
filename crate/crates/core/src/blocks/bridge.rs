use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::{Init, ParamId, ParamKind, ParamSet};
use crate::tensor::Real;

/// Two-layer graph convolution on a skip connection, fused additively
/// with the skip features. Maps with more than `node_budget` pixels pass
/// through unchanged.
#[derive(Clone, Debug)]
pub struct GcnBridge {
    pub w1: ParamId,
    pub w2: ParamId,
    pub node_budget: usize,
}

impl GcnBridge {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, c: usize, node_budget: usize) -> Self {
        let init = Init::Normal((1.0 / c as f64).sqrt());
        Self {
            w1: ps.add(&format!("{name}.w1"), &[c, c], init, ParamKind::Trainable),
            w2: ps.add(&format!("{name}.w2"), &[c, c], init, ParamKind::Trainable),
            node_budget,
        }
    }

    pub fn applies_to(&self, height: usize, width: usize) -> bool {
        height * width <= self.node_budget
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        let [_, _, h, w] = g.value(f).dims4()?;
        if !self.applies_to(h, w) {
            return Ok(f);
        }
        let w1 = g.param(self.w1);
        let w2 = g.param(self.w2);
        g.gcn_bridge(f, w1, w2)
    }
}
