//! Whole-network assembly: the hybrid transformer encoder with graph
//! bridges, and a plain U-Net that shares the decoder and bridge layout.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode, Var};
use crate::blocks::{DecoderStage, DoubleConv, Etb, GcnBridge, Head, PatchAggregation, Stem};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Ugformer,
    Unet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_stages: usize,
    pub heads: usize,
    pub use_mhsa: bool,
    pub use_dconv: bool,
    pub use_gcn: bool,
    pub node_budget: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Ugformer,
            in_channels: 1,
            base_channels: 32,
            num_stages: 3,
            heads: 4,
            use_mhsa: true,
            use_dconv: true,
            use_gcn: true,
            node_budget: 1024,
            num_classes: 1,
        }
    }
}

impl ModelConfig {
    pub fn small() -> Self {
        Self { base_channels: 16, ..Self::default() }
    }

    pub fn unet(use_gcn: bool) -> Self {
        Self { arch: Arch::Unet, use_gcn, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.in_channels == 0 || self.base_channels == 0 || self.num_classes == 0 {
            return bad("channel counts must be positive");
        }
        if self.num_stages == 0 {
            return bad("num_stages must be at least 1");
        }
        if self.arch == Arch::Ugformer {
            if !self.use_mhsa && !self.use_dconv {
                return bad("an ETB needs at least one of use_mhsa and use_dconv");
            }
            if self.heads == 0 {
                return bad("heads must be positive");
            }
        }
        Ok(())
    }

    /// Channel width of encoder level `l` (level 0 is the stem output).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.num_stages + 1)
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let divisor = self.divisor();
        if height == 0 || width == 0 || height % divisor != 0 || width % divisor != 0 {
            return Err(Error::BadSpatialDivisibility { height, width, divisor });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Encoder {
    Ugformer { stem: Stem, stages: Vec<(PatchAggregation, Etb)> },
    Unet { levels: Vec<DoubleConv> },
}

#[derive(Clone, Debug)]
struct Net {
    encoder: Encoder,
    bridges: Vec<Option<GcnBridge>>,
    decoder: Vec<DecoderStage>,
    head: Head,
}

impl Net {
    fn build<T: Real>(cfg: &ModelConfig, ps: &mut ParamSet<T>) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg.num_stages;
        let encoder = match cfg.arch {
            Arch::Ugformer => {
                let stem = Stem::new(ps, "stem", cfg.in_channels, cfg.channels(0));
                let mut stages = Vec::with_capacity(levels);
                for l in 0..levels {
                    let patch = PatchAggregation::new(ps, &format!("stage{l}.patch"), cfg.channels(l));
                    let etb = Etb::new(
                        ps,
                        &format!("stage{l}.etb"),
                        cfg.channels(l + 1),
                        cfg.heads,
                        cfg.use_mhsa,
                        cfg.use_dconv,
                    )?;
                    stages.push((patch, etb));
                }
                Encoder::Ugformer { stem, stages }
            }
            Arch::Unet => {
                let mut convs = Vec::with_capacity(levels + 1);
                for l in 0..=levels {
                    let cin = if l == 0 { cfg.in_channels } else { cfg.channels(l - 1) };
                    convs.push(DoubleConv::new(ps, &format!("enc{l}"), cin, cfg.channels(l)));
                }
                Encoder::Unet { levels: convs }
            }
        };
        let bridges = (0..levels)
            .map(|l| {
                cfg.use_gcn
                    .then(|| GcnBridge::new(ps, &format!("bridge{l}"), cfg.channels(l), cfg.node_budget))
            })
            .collect();
        let decoder = (0..levels)
            .map(|l| DecoderStage::new(ps, &format!("dec{l}"), cfg.channels(l + 1)))
            .collect();
        let head = Head::new(ps, "head", cfg.channels(0), cfg.num_classes);
        Ok(Self { encoder, bridges, decoder, head })
    }

    /// Returns the skip features of every level, deepest last.
    fn encode<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::new();
        match &self.encoder {
            Encoder::Ugformer { stem, stages } => {
                let mut h = stem.forward(g, x)?;
                feats.push(h);
                for (patch, etb) in stages {
                    h = patch.forward(g, h)?;
                    h = etb.forward(g, h)?;
                    feats.push(h);
                }
            }
            Encoder::Unet { levels } => {
                g.value(x).check_finite()?;
                let mut h = x;
                for level in levels {
                    h = level.forward(g, h)?;
                    h = g.max_pool2(h)?;
                    feats.push(h);
                }
            }
        }
        Ok(feats)
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut feats = self.encode(g, x)?;
        let mut h = feats.pop().expect("encoder emits at least one level");
        for (l, stage) in self.decoder.iter().enumerate().rev() {
            let mut skip = feats[l];
            if let Some(bridge) = &self.bridges[l] {
                skip = bridge.forward(g, skip)?;
            }
            h = stage.forward(g, h, skip)?;
        }
        self.head.forward(g, h)
    }
}

/// A segmentation network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
    net: Net,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new(seed);
        let net = Net::build(&config, &mut params)?;
        Ok(Self { config, params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.num_trainable()
    }

    /// Records the full network on `g`. Input must be `[B, in_channels, H, W]`.
    pub fn forward(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        self.config.check_input(h, w)?;
        self.net.forward(g, x)
    }

    /// Inference-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params, Mode::Eval);
        let xv = g.input(x.clone());
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast(), net: self.net.clone() }
    }
}
