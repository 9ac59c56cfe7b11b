use daa_autograd::{Graph, ParamSet, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::init::{push_conv, push_linear, rng};
use crate::error::{DaaError, Result};
use crate::factors::{AnatomyTensor, SubjectId};

pub const ADAIN_EPS: Real = 1e-5;
pub const DEFAULT_CODE_DIM: usize = 8;

/// Appearance code re-entangled with anatomy through AdaIN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingFactor {
    pub code: Vec<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_subject: Option<SubjectId>,
}

impl ImagingFactor {
    pub fn new(code: Vec<Real>, source_subject: Option<SubjectId>) -> Result<Self> {
        if code.is_empty() || code.iter().any(|v| !v.is_finite()) {
            return Err(DaaError::InvalidInput("imaging factor must be a non-empty finite vector".into()));
        }
        Ok(Self { code, source_subject })
    }

    pub fn dim(&self) -> usize {
        self.code.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.code.len()], self.code.clone())
    }
}

/// Instance-normalize each channel of `x` then apply per-channel `scale`
/// and `shift` (shape `[C]` or `[N, C]`).
pub fn adain(g: &Graph, x: Var, scale: Var, shift: Var) -> Var {
    let n = g.instance_norm(x, ADAIN_EPS);
    let s = g.scale_channels(n, scale);
    g.shift_channels(s, shift)
}

/// Eager AdaIN on a `[C, H, W]` or `[N, C, H, W]` tensor with `[C]` affine.
pub fn adain_value(features: &Tensor, scale: &[Real], shift: &[Real]) -> Tensor {
    let x = if features.shape().len() == 3 {
        features.clone().reshape(&[1, features.dim(0), features.dim(1), features.dim(2)])
    } else {
        features.clone()
    };
    assert_eq!(x.dim(1), scale.len());
    assert_eq!(x.dim(1), shift.len());
    let g = Graph::new();
    let xv = g.constant(x);
    let s = g.constant(Tensor::new(&[scale.len()], scale.to_vec()));
    let b = g.constant(Tensor::new(&[shift.len()], shift.to_vec()));
    let y = adain(&g, xv, s, b);
    let out = g.value(y).clone().reshape(features.shape());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub width: usize,
    pub code_dim: usize,
    pub mapper_hidden: usize,
}

impl GeneratorConfig {
    pub fn new(channels: usize, width: usize) -> Self {
        Self {
            channels,
            width,
            code_dim: DEFAULT_CODE_DIM,
            mapper_hidden: 32,
        }
    }
}

/// Decoder G: three conv-AdaIN-ReLU layers and a final conv with tanh.
/// Every layer keeps the spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub params: ParamSet,
    pub config: GeneratorConfig,
}

const HIDDEN_LAYERS: usize = 3;

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let w = config.width;
        push_conv(&mut p, "conv0", config.channels, w, 3, &mut r);
        push_conv(&mut p, "conv1", w, w, 3, &mut r);
        push_conv(&mut p, "conv2", w, w, 3, &mut r);
        push_conv(&mut p, "conv3", w, 1, 3, &mut r);
        push_linear(&mut p, "map", config.code_dim, config.mapper_hidden, &mut r);
        for l in 0..HIDDEN_LAYERS {
            push_linear(&mut p, &format!("scale{l}"), config.mapper_hidden, w, &mut r);
            push_linear(&mut p, &format!("shift{l}"), config.mapper_hidden, w, &mut r);
        }
        Self { params: p, config }
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let get = |n: &str| {
            params
                .find(n)
                .ok_or_else(|| DaaError::InvalidInput(format!("generator parameters lack {n}")))
        };
        let c0 = get("conv0.w")?;
        let m = get("map.w")?;
        let config = GeneratorConfig {
            channels: c0.dim(1),
            width: c0.dim(0),
            code_dim: m.dim(1),
            mapper_hidden: m.dim(0),
        };
        check_layout(&Self::new(config, 0).params, &params, "generator")?;
        Ok(Self { params, config })
    }

    /// `anatomy[N, K, H, W]`, `code[N, d]` -> image `[N, 1, H, W]`.
    pub fn forward(&self, g: &Graph, v: &[Var], anatomy: Var, code: Var) -> Var {
        let hidden = g.relu(g.linear(code, v[8], Some(v[9])));
        let mut h = anatomy;
        for l in 0..HIDDEN_LAYERS {
            h = g.conv2d(h, v[2 * l], Some(v[2 * l + 1]), 1, 1);
            let base = 10 + 4 * l;
            let scale = g.add_scalar(g.linear(hidden, v[base], Some(v[base + 1])), 1.0);
            let shift = g.linear(hidden, v[base + 2], Some(v[base + 3]));
            h = g.relu(adain(g, h, scale, shift));
        }
        let out = g.conv2d(h, v[6], Some(v[7]), 1, 1);
        g.tanh(out)
    }
}

pub(crate) fn check_layout(expect: &ParamSet, got: &ParamSet, what: &str) -> Result<()> {
    if expect.names() != got.names()
        || expect.tensors().iter().zip(got.tensors()).any(|(a, b)| a.shape() != b.shape())
    {
        return Err(DaaError::ShapeMismatch(format!("{what} parameter layout")));
    }
    Ok(())
}

/// Decode one anatomy with one imaging factor into an image `[1, 1, H, W]`.
pub fn generate(c: &AnatomyTensor, z: &ImagingFactor, gen: &Generator) -> Result<Tensor> {
    if c.num_channels() != gen.config.channels {
        return Err(DaaError::ShapeMismatch(format!(
            "generator expects {} channels, anatomy has {}",
            gen.config.channels,
            c.num_channels()
        )));
    }
    if z.dim() != gen.config.code_dim {
        return Err(DaaError::ShapeMismatch(format!(
            "generator expects a {}-d code, got {}",
            gen.config.code_dim,
            z.dim()
        )));
    }
    let g = Graph::new();
    let v = gen.params.bind(&g, false);
    let a = g.constant(c.to_tensor());
    let zc = g.constant(z.to_tensor());
    let y = gen.forward(&g, &v, a, zc);
    let out = g.value(y).clone();
    Ok(out)
}
