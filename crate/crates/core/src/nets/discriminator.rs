use daa_autograd::{Graph, ParamSet, Real, Tensor, Var};

use super::generator::check_layout;
use super::init::{push_conv, rng};
use crate::error::{DaaError, Result};
use crate::factors::HeartMask;

pub const LEAKY_SLOPE: Real = 0.2;
pub const DEFAULT_DISC_WIDTHS: [usize; 4] = [64, 128, 256, 512];

/// Least-squares critic: four stride-2 4x4 convolutions with leaky ReLU,
/// a 3x3 head to one channel, averaged to one score per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub params: ParamSet,
    pub widths: [usize; 4],
}

impl Discriminator {
    pub fn new(widths: [usize; 4], seed: u64) -> Self {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let mut cin = 1;
        for (l, &w) in widths.iter().enumerate() {
            push_conv(&mut p, &format!("conv{l}"), cin, w, 4, &mut r);
            cin = w;
        }
        push_conv(&mut p, "head", cin, 1, 3, &mut r);
        Self { params: p, widths }
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let mut widths = [0; 4];
        for (l, w) in widths.iter_mut().enumerate() {
            *w = params
                .find(&format!("conv{l}.w"))
                .ok_or_else(|| DaaError::InvalidInput(format!("discriminator parameters lack conv{l}.w")))?
                .dim(0);
        }
        check_layout(&Self::new(widths, 0).params, &params, "discriminator")?;
        Ok(Self { params, widths })
    }

    /// `image[N, 1, H, W]` -> scores `[N, 1]`.
    pub fn forward(&self, g: &Graph, v: &[Var], image: Var) -> Var {
        let mut h = image;
        for l in 0..4 {
            // inputs below 16 px reach a 1x1 map early; pad 2 keeps it 1x1
            let side = g.shape(h)[2].min(g.shape(h)[3]);
            let pad = if side >= 2 { 1 } else { 2 };
            h = g.leaky_relu(g.conv2d(h, v[2 * l], Some(v[2 * l + 1]), 2, pad), LEAKY_SLOPE);
        }
        let head = g.conv2d(h, v[8], Some(v[9]), 1, 1);
        g.mean_spatial(head)
    }

    /// Score of `image * mask`.
    pub fn forward_masked(&self, g: &Graph, v: &[Var], image: Var, mask: Var) -> Var {
        let masked = g.mul_spatial(image, mask);
        self.forward(g, v, masked)
    }
}

/// Score one image `[1, 1, H, W]` after masking it with `mask`.
pub fn discriminate(image: &Tensor, mask: &HeartMask, d: &Discriminator) -> Result<Real> {
    let (h, w) = mask.mask.dims();
    if image.shape() != [1, 1, h, w] {
        return Err(DaaError::ShapeMismatch(format!("image {:?} vs mask {h}x{w}", image.shape())));
    }
    let g = Graph::new();
    let v = d.params.bind(&g, false);
    let x = g.constant(image.clone());
    let m = g.constant(mask.to_tensor());
    let s = d.forward_masked(&g, &v, x, m);
    let out = g.value(s).item();
    Ok(out)
}
