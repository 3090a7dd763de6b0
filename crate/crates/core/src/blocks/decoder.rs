use crate::autograd::{Graph, Var};
use crate::blocks::layers::{BatchNorm, Conv, Upsample};
use crate::error::{Error, Result};
use crate::params::{Init, ParamSet};
use crate::tensor::Real;

/// U-Net decoder stage: 2x transposed-convolution upsampling, skip
/// concatenation, then two 3x3 conv + GELU + batch-norm units.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: Upsample,
    pub conv1: Conv,
    pub norm1: BatchNorm,
    pub conv2: Conv,
    pub norm2: BatchNorm,
}

impl DecoderStage {
    /// `c` is the channel count of the incoming (deeper) features; the
    /// stage emits `c / 2`.
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, c: usize) -> Self {
        let half = c / 2;
        Self {
            up: Upsample::new(ps, &format!("{name}.up"), c, half),
            conv1: Conv::new(ps, &format!("{name}.conv1"), c, half, 3, 1, 1),
            norm1: BatchNorm::new(ps, &format!("{name}.norm1"), half),
            conv2: Conv::new(ps, &format!("{name}.conv2"), half, half, 3, 1, 1),
            norm2: BatchNorm::new(ps, &format!("{name}.norm2"), half),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, skip: Var) -> Result<Var> {
        let [b, c, h, w] = g.value(x).dims4()?;
        let expected = vec![b, c / 2, 2 * h, 2 * w];
        if g.value(skip).dims() != expected.as_slice() {
            return Err(Error::SkipShapeMismatch { skip: g.value(skip).dims().to_vec(), expected });
        }
        let u = self.up.forward(g, x)?;
        let y = g.concat(u, skip)?;
        let y = self.conv1.forward(g, y)?;
        let y = g.gelu(y);
        let y = self.norm1.forward(g, y)?;
        let y = self.conv2.forward(g, y)?;
        let y = g.gelu(y);
        self.norm2.forward(g, y)
    }
}

/// Final 2x upsampling back to input resolution and a 1x1 projection to
/// class logits.
#[derive(Clone, Debug)]
pub struct Head {
    pub up: Upsample,
    pub out: Conv,
}

impl Head {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, c: usize, classes: usize) -> Self {
        Self {
            up: Upsample::new(ps, &format!("{name}.up"), c, c),
            out: Conv::with_init(ps, &format!("{name}.out"), c, classes, 1, 1, 0, Init::Normal((1.0 / c as f64).sqrt())),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.up.forward(g, x)?;
        let y = g.gelu(y);
        self.out.forward(g, y)
    }
}
