use crate::autograd::{Graph, Var};
use crate::blocks::layers::{BatchNorm, Conv};
use crate::error::Result;
use crate::params::ParamSet;
use crate::tensor::Real;

/// Two rounds of 3x3 conv, batch norm and ReLU: the classic U-Net unit.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub conv1: Conv,
    pub norm1: BatchNorm,
    pub conv2: Conv,
    pub norm2: BatchNorm,
}

impl DoubleConv {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv::new(ps, &format!("{name}.conv1"), cin, cout, 3, 1, 1),
            norm1: BatchNorm::new(ps, &format!("{name}.norm1"), cout),
            conv2: Conv::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1),
            norm2: BatchNorm::new(ps, &format!("{name}.norm2"), cout),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, x)?;
        let y = self.norm1.forward(g, y)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, y)?;
        let y = self.norm2.forward(g, y)?;
        Ok(g.relu(y))
    }
}
