//! Downsampling front of the encoder: the convolutional stem and the
//! strided patch aggregation between stages.

use crate::autograd::{Graph, Var};
use crate::blocks::layers::{BatchNorm, Conv};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Real;

fn check_even<T: Real>(g: &Graph<'_, T>, x: Var) -> Result<()> {
    let [_, _, h, w] = g.value(x).dims4()?;
    for d in [h, w] {
        if d % 2 != 0 {
            return Err(Error::OddSpatialDim(d));
        }
    }
    Ok(())
}

/// 3x3 stride-2 convolution, GELU, then batch normalization.
#[derive(Clone, Debug)]
pub struct Stem {
    pub conv: Conv,
    pub norm: BatchNorm,
}

impl Stem {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv: Conv::new(ps, &format!("{name}.conv"), cin, cout, 3, 2, 1),
            norm: BatchNorm::new(ps, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        check_even(g, x)?;
        g.value(x).check_finite()?;
        let y = self.conv.forward(g, x)?;
        let y = g.gelu(y);
        self.norm.forward(g, y)
    }
}

/// 2x2 stride-2 convolution doubling the channel count.
#[derive(Clone, Debug)]
pub struct PatchAggregation {
    pub conv: Conv,
}

impl PatchAggregation {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, cin: usize) -> Self {
        Self { conv: Conv::new(ps, &format!("{name}.conv"), cin, 2 * cin, 2, 2, 0) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        check_even(g, x)?;
        self.conv.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mode;
    use crate::tensor::Tensor;

    #[test]
    fn stem_halves_and_embeds() {
        let mut ps = ParamSet::<f32>::new(1);
        let stem = Stem::new(&mut ps, "stem", 1, 32);
        let mut g = Graph::new(&ps, Mode::Eval);
        let x = g.input(Tensor::full(&[1, 1, 64, 64], 0.5));
        let y = stem.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 32, 32, 32]);
    }

    #[test]
    fn stem_rejects_odd_and_nonfinite() {
        let mut ps = ParamSet::<f32>::new(1);
        let stem = Stem::new(&mut ps, "stem", 1, 4);
        let mut g = Graph::new(&ps, Mode::Eval);
        let odd = g.input(Tensor::zeros(&[1, 1, 7, 8]));
        assert!(matches!(stem.forward(&mut g, odd), Err(Error::OddSpatialDim(7))));
        let mut bad = Tensor::zeros(&[1, 1, 4, 4]);
        bad.data_mut()[3] = f32::INFINITY;
        let bad = g.input(bad);
        assert!(matches!(stem.forward(&mut g, bad), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn patch_aggregation_shape() {
        let mut ps = ParamSet::<f32>::new(1);
        let pa = PatchAggregation::new(&mut ps, "pa", 32);
        let mut g = Graph::new(&ps, Mode::Eval);
        let x = g.input(Tensor::full(&[1, 32, 32, 32], 0.1));
        let y = pa.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).dims(), &[1, 64, 16, 16]);
        let odd = g.input(Tensor::zeros(&[1, 32, 6, 5]));
        assert!(matches!(pa.forward(&mut g, odd), Err(Error::OddSpatialDim(5))));
    }
}
