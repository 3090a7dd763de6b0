//! Central finite-difference verification of the hand-written backward
//! passes.
//!
//! Each block is instantiated at a tiny size, reduced to a scalar through a
//! fixed random projection `Σ r ⊙ out`, and every parameter (plus every
//! input) is perturbed coordinate by coordinate.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Mode, Var};
use crate::blocks::{Conv, DecoderStage, DeformConv, Etb, GcnBridge, Mhsa, PatchAggregation, Stem};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamSet};
use crate::tensor::{cst, Real, Tensor};
use crate::training::loss::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockId {
    /// A bare 1x1 convolution; every derivative is exact.
    Linear,
    Stem,
    PatchAggregation,
    Mhsa,
    DeformConv,
    Etb,
    GcnBridge,
    DecoderStage,
    CompositeLoss,
}

impl BlockId {
    pub const ALL: [BlockId; 9] = [
        BlockId::Linear,
        BlockId::Stem,
        BlockId::PatchAggregation,
        BlockId::Mhsa,
        BlockId::DeformConv,
        BlockId::Etb,
        BlockId::GcnBridge,
        BlockId::DecoderStage,
        BlockId::CompositeLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::Linear => "linear",
            BlockId::Stem => "stem",
            BlockId::PatchAggregation => "patch_aggregation",
            BlockId::Mhsa => "mhsa",
            BlockId::DeformConv => "deform_conv",
            BlockId::Etb => "etb",
            BlockId::GcnBridge => "gcn_bridge",
            BlockId::DecoderStage => "decoder_stage",
            BlockId::CompositeLoss => "composite_loss",
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown block '{s}'")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckSettings {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that gradients
    /// that are zero up to rounding do not produce huge ratios.
    pub floor: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked fully.
    pub samples: usize,
}

impl GradcheckSettings {
    pub fn double() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, floor: 1e-5, samples: 32 }
    }

    pub fn single() -> Self {
        Self { step: 1e-5, tolerance: 5e-3, floor: 1e-3, samples: 32 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub block: BlockId,
    pub tolerance: f64,
    pub checks: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

type ForwardFn<T> = Box<dyn Fn(&mut Graph<'_, T>, &[Var]) -> Result<Var>>;

struct Case<T: Real> {
    params: ParamSet<T>,
    inputs: Vec<(&'static str, Tensor<T>)>,
    mode: Mode,
    forward: ForwardFn<T>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(dims, |_| cst(rng.random_range(lo..hi)))
}

/// Replaces every trainable parameter by a uniform draw so that no
/// derivative is degenerate (zero biases, unit scales and so on).
fn randomize<T: Real>(ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng, skip: &[ParamId]) {
    let ids: Vec<ParamId> = ps.ids().collect();
    for id in ids {
        if ps.entry(id).kind != ParamKind::Trainable || skip.contains(&id) {
            continue;
        }
        for v in ps.get_mut(id).data_mut() {
            *v = cst(rng.random_range(-0.5..0.5));
        }
    }
}

/// Puts every deformable sampling position well inside a pixel cell: the
/// offset bias is fractional and the offset kernel tiny, so bilinear
/// interpolation is smooth around each evaluated point.
fn keep_off_seams<T: Real>(ps: &mut ParamSet<T>, dconv: &DeformConv, rng: &mut ChaCha8Rng) {
    for v in ps.get_mut(dconv.offset.weight).data_mut() {
        *v = cst(rng.random_range(-0.005..0.005));
    }
    if let Some(b) = dconv.offset.bias {
        for v in ps.get_mut(b).data_mut() {
            let whole: f64 = rng.random_range(-1i32..=1).into();
            *v = cst(whole + rng.random_range(0.3..0.7));
        }
    }
}

fn build_case<T: Real>(block: BlockId, seed: u64) -> Result<Case<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::<T>::new(seed);
    let case = match block {
        BlockId::Linear => {
            let conv = Conv::new(&mut ps, "linear", 3, 2, 1, 1, 0);
            randomize(&mut ps, &mut rng, &[]);
            let x = uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| conv.forward(g, v[0])),
            }
        }
        BlockId::Stem => {
            let stem = Stem::new(&mut ps, "stem", 1, 3);
            randomize(&mut ps, &mut rng, &[]);
            let x = uniform(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| stem.forward(g, v[0])),
            }
        }
        BlockId::PatchAggregation => {
            let pa = PatchAggregation::new(&mut ps, "patch", 2);
            randomize(&mut ps, &mut rng, &[]);
            let x = uniform(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| pa.forward(g, v[0])),
            }
        }
        BlockId::Mhsa => {
            let mhsa = Mhsa::new(&mut ps, "mhsa", 4, 2)?;
            randomize(&mut ps, &mut rng, &[]);
            let x = uniform(&mut rng, &[2, 4, 3, 3], -1.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| mhsa.forward(g, v[0])),
            }
        }
        BlockId::DeformConv => {
            let dconv = DeformConv::new(&mut ps, "dconv", 2, 3);
            randomize(&mut ps, &mut rng, &[]);
            keep_off_seams(&mut ps, &dconv, &mut rng);
            let x = uniform(&mut rng, &[1, 2, 5, 5], 0.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| dconv.forward(g, v[0])),
            }
        }
        BlockId::Etb => {
            let etb = Etb::new(&mut ps, "etb", 4, 2, true, true)?;
            let keep: Vec<ParamId> = etb.a.iter().chain(etb.b.iter()).copied().collect();
            randomize(&mut ps, &mut rng, &keep);
            if let Some(d) = &etb.dconv {
                keep_off_seams(&mut ps, d, &mut rng);
            }
            let x = uniform(&mut rng, &[1, 4, 4, 4], 0.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| etb.forward(g, v[0])),
            }
        }
        BlockId::GcnBridge => {
            let bridge = GcnBridge::new(&mut ps, "bridge", 3, 1024);
            randomize(&mut ps, &mut rng, &[]);
            let x = uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| bridge.forward(g, v[0])),
            }
        }
        BlockId::DecoderStage => {
            let stage = DecoderStage::new(&mut ps, "dec", 4);
            randomize(&mut ps, &mut rng, &[]);
            let x = uniform(&mut rng, &[2, 4, 2, 2], -1.0, 1.0);
            let skip = uniform(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
            Case {
                params: ps,
                inputs: vec![("input", x), ("skip", skip)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| stage.forward(g, v[0], v[1])),
            }
        }
        BlockId::CompositeLoss => {
            let logits = uniform(&mut rng, &[2, 1, 4, 4], -3.0, 3.0);
            let target = Tensor::from_fn(&[2, 1, 4, 4], |_| if rng.random_bool(0.4) { T::one() } else { T::zero() });
            Case {
                params: ps,
                inputs: vec![("logits", logits)],
                mode: Mode::Train,
                forward: Box::new(move |g, v| g.composite_loss(v[0], &target, LossWeights::default())),
            }
        }
    };
    Ok(case)
}

impl<T: Real> Case<T> {
    fn run<'g>(&self, g: &mut Graph<'g, T>, inputs: &[Tensor<T>]) -> Result<(Vec<Var>, Var)> {
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = (self.forward)(g, &vars)?;
        Ok((vars, out))
    }

    fn objective(&self, params: &ParamSet<T>, inputs: &[Tensor<T>], proj: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::new(params, self.mode);
        let (_, out) = self.run(&mut g, inputs)?;
        let v = g.value(out);
        let mut acc = 0.0;
        for (a, r) in v.data().iter().zip(proj.data()) {
            acc += a.to_f64().unwrap() * r.to_f64().unwrap();
        }
        Ok(acc)
    }
}

fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn coordinates(len: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= samples {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, samples).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// 64-bit check at the default step and tolerance.
pub fn finite_diff_gradcheck(block: BlockId, seed: u64) -> Result<GradcheckReport> {
    finite_diff_gradcheck_with::<f64>(block, seed, GradcheckSettings::double())
}

/// Checks the backward pass computed in precision `T` against central
/// differences taken in 64-bit on the same (exactly widened) parameters
/// and inputs. Rounding noise of a 32-bit objective would swamp a 32-bit
/// difference quotient, so the reference is always 64-bit.
pub fn finite_diff_gradcheck_with<T: Real>(
    block: BlockId,
    seed: u64,
    settings: GradcheckSettings,
) -> Result<GradcheckReport> {
    let low = build_case::<T>(block, seed)?;
    let mut case = build_case::<f64>(block, seed)?;
    case.params = low.params.cast();
    let inputs: Vec<Tensor<f64>> = low.inputs.iter().map(|(_, t)| t.cast()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let low_inputs: Vec<Tensor<T>> = low.inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut g = Graph::new(&low.params, low.mode);
    let (vars, out) = low.run(&mut g, &low_inputs)?;
    let proj: Tensor<T> = uniform(&mut rng, g.value(out).dims(), -1.0, 1.0);
    let grads = g.backward(out, Some(proj.clone()));
    let proj: Tensor<f64> = proj.cast();

    let h = settings.step;
    let mut checks = Vec::new();
    let mut check = |name: String, analytic: &Tensor<f64>, perturb: &mut dyn FnMut(usize, f64) -> Result<f64>| -> Result<()> {
        let mut worst: f64 = 0.0;
        let idx = coordinates(analytic.len(), settings.samples, &mut rng);
        for &i in &idx {
            let a = analytic.data()[i];
            let plus = perturb(i, h)?;
            let minus = perturb(i, -h)?;
            let n = (plus - minus) / (2.0 * h);
            if !a.is_finite() || !n.is_finite() {
                return Err(Error::NonFiniteGradient(format!("{name}[{i}]")));
            }
            worst = worst.max(rel_err(a, n, settings.floor));
        }
        checks.push(TensorCheck { name, checked: idx.len(), max_rel_err: worst });
        Ok(())
    };

    let trainable: Vec<ParamId> =
        case.params.iter().filter(|(_, e)| e.kind == ParamKind::Trainable).map(|(id, _)| id).collect();
    for id in trainable {
        let name = case.params.entry(id).name.clone();
        let analytic: Tensor<f64> =
            grads.param(id).map(|t| t.cast()).unwrap_or_else(|| Tensor::zeros(case.params.get(id).dims()));
        let mut perturb = |i: usize, delta: f64| {
            let mut ps = case.params.clone();
            let v = &mut ps.get_mut(id).data_mut()[i];
            *v += delta;
            case.objective(&ps, &inputs, &proj)
        };
        check(name, &analytic, &mut perturb)?;
    }
    for (k, (name, _)) in case.inputs.iter().enumerate() {
        let analytic: Tensor<f64> =
            grads.of(vars[k]).map(|t| t.cast()).unwrap_or_else(|| Tensor::zeros(inputs[k].dims()));
        let mut perturb = |i: usize, delta: f64| {
            let mut shifted = inputs.clone();
            shifted[k].data_mut()[i] += delta;
            case.objective(&case.params, &shifted, &proj)
        };
        check(name.to_string(), &analytic, &mut perturb)?;
    }

    let max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        block,
        tolerance: settings.tolerance,
        checks,
        max_rel_err,
        passed: max_rel_err <= settings.tolerance,
    })
}
