//! Enhanced transformer block: self-attention and deformable convolution
//! run in parallel on the same input and are mixed by two learnable
//! scalars before a feed-forward sublayer.
//!
//! ```text
//! z = x + a * mhsa(norm1(x)) + b * dconv(x)
//! y = z + ffn(norm2(z))
//! ```

use crate::autograd::{Graph, Var};
use crate::blocks::layers::{Conv, LayerNorm};
use crate::error::Result;
use crate::kernels::attention::check_heads;
use crate::params::{Init, ParamId, ParamKind, ParamSet};
use crate::tensor::Real;

/// Multi-head self-attention over spatial tokens.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
}

impl Mhsa {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, c: usize, heads: usize) -> Result<Self> {
        check_heads(c, heads)?;
        let init = Init::Normal((1.0 / c as f64).sqrt());
        let mut mat = |suffix: &str| ps.add(&format!("{name}.{suffix}"), &[c, c], init, ParamKind::Trainable);
        Ok(Self { w_q: mat("w_q"), w_k: mat("w_k"), w_v: mat("w_v"), w_o: mat("w_o"), heads })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = [g.param(self.w_q), g.param(self.w_k), g.param(self.w_v), g.param(self.w_o)];
        g.mhsa(x, w, self.heads)
    }
}

/// 3x3 deformable convolution whose offsets come from a companion 3x3
/// convolution of the same input. The offset branch starts at zero.
#[derive(Clone, Debug)]
pub struct DeformConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub offset: Conv,
}

impl DeformConv {
    pub const TAPS: usize = 9;

    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize) -> Self {
        let std = (2.0 / (cin * Self::TAPS) as f64).sqrt();
        Self {
            kernel: ps.add(&format!("{name}.kernel"), &[cout, cin, 3, 3], Init::Normal(std), ParamKind::Trainable),
            bias: ps.add(&format!("{name}.bias"), &[cout], Init::Zeros, ParamKind::Trainable),
            offset: Conv::with_init(ps, &format!("{name}.offset"), cin, 2 * Self::TAPS, 3, 1, 1, Init::Zeros),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let offsets = self.offset.forward(g, x)?;
        let w = g.param(self.kernel);
        let b = g.param(self.bias);
        g.deform_conv2d(x, offsets, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct Etb {
    pub norm1: LayerNorm,
    pub mhsa: Option<Mhsa>,
    pub dconv: Option<DeformConv>,
    pub a: Option<ParamId>,
    pub b: Option<ParamId>,
    pub norm2: LayerNorm,
    pub ffn_in: Conv,
    pub ffn_out: Conv,
}

impl Etb {
    pub const FFN_EXPANSION: usize = 4;

    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        c: usize,
        heads: usize,
        use_mhsa: bool,
        use_dconv: bool,
    ) -> Result<Self> {
        let norm1 = LayerNorm::new(ps, &format!("{name}.norm1"), c);
        let (mhsa, a) = if use_mhsa {
            let m = Mhsa::new(ps, &format!("{name}.mhsa"), c, heads)?;
            (Some(m), Some(ps.add(&format!("{name}.a"), &[1], Init::Constant(1.0), ParamKind::Trainable)))
        } else {
            (None, None)
        };
        let (dconv, b) = if use_dconv {
            let d = DeformConv::new(ps, &format!("{name}.dconv"), c, c);
            (Some(d), Some(ps.add(&format!("{name}.b"), &[1], Init::Constant(1.0), ParamKind::Trainable)))
        } else {
            (None, None)
        };
        let hidden = Self::FFN_EXPANSION * c;
        Ok(Self {
            norm1,
            mhsa,
            dconv,
            a,
            b,
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), c),
            ffn_in: Conv::new(ps, &format!("{name}.ffn_in"), c, hidden, 1, 1, 0),
            ffn_out: Conv::with_init(
                ps,
                &format!("{name}.ffn_out"),
                hidden,
                c,
                1,
                1,
                0,
                Init::Normal((1.0 / hidden as f64).sqrt()),
            ),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut z = x;
        if let (Some(mhsa), Some(a)) = (&self.mhsa, self.a) {
            let n = self.norm1.forward(g, x)?;
            let m = mhsa.forward(g, n)?;
            let a = g.param(a);
            let m = g.scale(m, a)?;
            z = g.add(z, m)?;
        }
        if let (Some(dconv), Some(b)) = (&self.dconv, self.b) {
            let d = dconv.forward(g, x)?;
            let b = g.param(b);
            let d = g.scale(d, b)?;
            z = g.add(z, d)?;
        }
        let n = self.norm2.forward(g, z)?;
        let h = self.ffn_in.forward(g, n)?;
        let h = g.gelu(h);
        let f = self.ffn_out.forward(g, h)?;
        g.add(z, f)
    }
}
