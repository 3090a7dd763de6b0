//! Parameterized wrappers around the graph kernels.

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::{Init, ParamId, ParamKind, ParamSet};
use crate::tensor::Real;

fn trainable<T: Real>(ps: &mut ParamSet<T>, name: &str, dims: &[usize], init: Init) -> ParamId {
    ps.add(name, dims, init, ParamKind::Trainable)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-initialized `k x k` convolution with a zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self::with_init(ps, name, cin, cout, k, stride, pad, Init::Normal(std))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        Self {
            weight: trainable(ps, &format!("{name}.weight"), &[cout, cin, k, k], init),
            bias: Some(trainable(ps, &format!("{name}.bias"), &[cout], Init::Zeros)),
            stride,
            pad,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Transposed convolution with kernel = stride = 2 (exact 2x upsampling).
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize) -> Self {
        let std = (2.0 / cin as f64).sqrt();
        Self {
            weight: trainable(ps, &format!("{name}.weight"), &[cin, cout, 2, 2], Init::Normal(std)),
            bias: trainable(ps, &format!("{name}.bias"), &[cout], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv_transpose2d(x, w, Some(b), 2, 0)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: trainable(ps, &format!("{name}.gamma"), &[c], Init::Constant(1.0)),
            beta: trainable(ps, &format!("{name}.beta"), &[c], Init::Zeros),
            running_mean: ps.add(&format!("{name}.running_mean"), &[c], Init::Zeros, ParamKind::Buffer),
            running_var: ps.add(&format!("{name}.running_var"), &[c], Init::Constant(1.0), ParamKind::Buffer),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        g.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, c: usize) -> Self {
        Self {
            gamma: trainable(ps, &format!("{name}.gamma"), &[c], Init::Constant(1.0)),
            beta: trainable(ps, &format!("{name}.beta"), &[c], Init::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}
