use daa_autograd::{Graph, ParamSet, Real, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mask::BlendMask;
use crate::error::{DaaError, Result};
use crate::factors::AnatomyTensor;
use crate::nets::init::{push_conv, rng, DetRng};

pub const REFINER_LAYERS: usize = 4;
pub const DEFAULT_TAU: Real = 0.67;
pub const DEFAULT_NOISE_GAIN: Real = 0.1;
/// Initial weight of the input added to the output logits, so a fresh J
/// starts close to copying its input.
pub const DEFAULT_SKIP_GAIN: Real = 4.0;

/// The noise-injection network J: four 3x3 convolutions with per-channel
/// learned noise gains, plus a learned per-channel skip of the input onto
/// the logits, followed by a Gumbel-Softmax over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Refiner {
    pub params: ParamSet,
    pub channels: usize,
    pub width: usize,
    pub tau: Real,
}

/// Per-layer noise fields.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePatch {
    pub layers: Vec<Tensor>,
}

/// Random draws for one refiner pass over a batch: unit Gaussian noise
/// already multiplied by phi (gains are applied inside the network) and
/// phi-gated Gumbel noise for the output.
#[derive(Clone, Debug)]
pub struct RefinerNoise {
    pub unit: Vec<Tensor>,
    pub gumbel: Tensor,
}

impl Refiner {
    pub fn new(channels: usize, width: usize, tau: Real, seed: u64) -> Self {
        assert!(tau > 0.0, "gumbel temperature must be positive");
        let mut r = rng(seed);
        let mut params = ParamSet::new();
        let widths = Self::layer_widths(channels, width);
        let mut cin = channels;
        for (l, &cout) in widths.iter().enumerate() {
            push_conv(&mut params, &format!("conv{l}"), cin, cout, 3, &mut r);
            cin = cout;
        }
        for (l, &cout) in widths.iter().enumerate() {
            params.push(format!("gain{l}"), Tensor::full(&[cout], DEFAULT_NOISE_GAIN));
        }
        params.push("skip", Tensor::full(&[channels], DEFAULT_SKIP_GAIN));
        Self {
            params,
            channels,
            width,
            tau,
        }
    }

    /// Rebuild from a parameter set (e.g. a checkpoint).
    pub fn from_params(params: ParamSet, tau: Real) -> Result<Self> {
        let w0 = params
            .find("conv0.w")
            .ok_or_else(|| DaaError::InvalidInput("refiner parameters lack conv0.w".into()))?;
        let (width, channels) = (w0.dim(0), w0.dim(1));
        let expect = Self::new(channels, width, tau, 0);
        if expect.params.names() != params.names()
            || expect.params.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(DaaError::ShapeMismatch("refiner parameter layout".into()));
        }
        Ok(Self {
            params,
            channels,
            width,
            tau,
        })
    }

    fn layer_widths(channels: usize, width: usize) -> [usize; REFINER_LAYERS] {
        [width, width, width, channels]
    }

    pub fn widths(&self) -> [usize; REFINER_LAYERS] {
        Self::layer_widths(self.channels, self.width)
    }

    /// Gains of layer `l`.
    pub fn gain(&self, l: usize) -> &Tensor {
        self.params.get(2 * REFINER_LAYERS + l)
    }

    /// Draw noise for a batch of blend masks `[N, 1, H, W]`.
    pub fn draw_noise(&self, phi: &Tensor, rng: &mut DetRng) -> RefinerNoise {
        let s = phi.shape();
        let (n, h, w) = (s[0], s[2], s[3]);
        let plane = h * w;
        let gated = |c: usize, rng: &mut DetRng, f: &dyn Fn(&mut DetRng) -> Real| {
            let mut t = Tensor::zeros(&[n, c, h, w]);
            let data = t.data_mut();
            for i in 0..n {
                let p = &phi.data()[i * plane..(i + 1) * plane];
                for ch in 0..c {
                    for (j, &pj) in p.iter().enumerate() {
                        let v = f(rng);
                        data[(i * c + ch) * plane + j] = if pj == 0.0 { 0.0 } else { v * pj };
                    }
                }
            }
            t
        };
        let normal = |r: &mut DetRng| r.sample::<Real, _>(StandardNormal);
        let unit = self.widths().iter().map(|&c| gated(c, rng, &normal)).collect();
        let gumbel = gated(self.channels, rng, &sample_gumbel);
        RefinerNoise { unit, gumbel }
    }

    /// Forward pass over `x[N, K, H, W]`. `vars` come from `params.bind`.
    pub fn forward(&self, g: &Graph, vars: &[Var], x: Var, noise: &RefinerNoise, hard: bool) -> Var {
        let mut h = x;
        for l in 0..REFINER_LAYERS {
            h = g.conv2d(h, vars[2 * l], Some(vars[2 * l + 1]), 1, 1);
            let eps = g.constant(noise.unit[l].clone());
            let scaled = g.scale_channels(eps, vars[2 * REFINER_LAYERS + l]);
            h = g.add(h, scaled);
            if l + 1 < REFINER_LAYERS {
                h = g.relu(h);
            }
        }
        let h = g.add(h, g.scale_channels(x, vars[3 * REFINER_LAYERS]));
        gumbel_softmax(g, h, &noise.gumbel, self.tau, hard)
    }
}

pub(crate) fn sample_gumbel(r: &mut DetRng) -> Real {
    let u: Real = r.random::<Real>().max(Real::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// `softmax((logits + gumbel) / tau)` over channels; with `hard` the forward
/// value is the one-hot argmax while gradients flow through the soft sample.
pub fn gumbel_softmax(g: &Graph, logits: Var, gumbel: &Tensor, tau: Real, hard: bool) -> Var {
    let noisy = g.add(logits, g.constant(gumbel.clone()));
    let soft = g.softmax_channels(g.scale(noisy, 1.0 / tau));
    if hard {
        let onehot = one_hot_argmax(&g.value(soft));
        g.straight_through(onehot, soft)
    } else {
        soft
    }
}

/// One-hot of the per-site channel argmax (first maximum wins).
pub fn one_hot_argmax(x: &Tensor) -> Tensor {
    let s = x.shape();
    let (n, c) = (s[0], s[1]);
    let sp: usize = s[2..].iter().product::<usize>().max(1);
    let mut out = Tensor::zeros(s);
    for i in 0..n {
        for j in 0..sp {
            let mut best = 0;
            for ch in 1..c {
                if x.data()[(i * c + ch) * sp + j] > x.data()[(i * c + best) * sp + j] {
                    best = ch;
                }
            }
            out.data_mut()[(i * c + best) * sp + j] = 1.0;
        }
    }
    out
}

/// Stand-alone Gumbel-Softmax sample over `logits[N, K, ...]`.
pub fn gumbel_softmax_sample(logits: &Tensor, tau: Real, seed: u64, hard: bool) -> Tensor {
    assert!(tau > 0.0, "gumbel temperature must be positive");
    let mut r = rng(seed);
    let gumbel = Tensor::new(logits.shape(), (0..logits.len()).map(|_| sample_gumbel(&mut r)).collect());
    let g = Graph::new();
    let x = g.constant(logits.clone());
    let y = gumbel_softmax(&g, x, &gumbel, tau, hard);
    let v = g.value(y).clone();
    v
}

/// Noise fields (gain applied) the refiner would add for this mask and seed.
pub fn sample_noise_patches(phi: &BlendMask, refiner: &Refiner, seed: u64) -> NoisePatch {
    let noise = refiner.draw_noise(&phi.to_tensor(), &mut rng(seed));
    let layers = noise
        .unit
        .iter()
        .enumerate()
        .map(|(l, t)| {
            let gain = refiner.gain(l);
            let plane = t.len() / t.dim(1);
            let mut out = t.clone();
            for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let s = gain.data()[ch];
                for v in chunk {
                    *v *= s;
                }
            }
            out
        })
        .collect();
    NoisePatch { layers }
}

/// Run J on a composed anatomy. The result is a continuous anatomy whose
/// channels sum to one at every pixel.
pub fn refine(c_hat: &AnatomyTensor, phi: &BlendMask, refiner: &Refiner, seed: u64, hard: bool) -> Result<AnatomyTensor> {
    if c_hat.num_channels() != refiner.channels {
        return Err(DaaError::ShapeMismatch(format!(
            "refiner expects {} channels, anatomy has {}",
            refiner.channels,
            c_hat.num_channels()
        )));
    }
    if c_hat.dims() != phi.dims() {
        return Err(DaaError::ShapeMismatch(format!(
            "anatomy {:?} vs blend mask {:?}",
            c_hat.dims(),
            phi.dims()
        )));
    }
    let noise = refiner.draw_noise(&phi.to_tensor(), &mut rng(seed));
    let g = Graph::new();
    let vars = refiner.params.bind(&g, false);
    let x = g.constant(c_hat.to_tensor());
    let y = refiner.forward(&g, &vars, x, &noise, hard);
    let values = g.value(y).data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    AnatomyTensor::new(
        c_hat.height(),
        c_hat.width(),
        values,
        c_hat.roles().to_vec(),
        c_hat.subject_id.clone(),
        c_hat.pathology.clone(),
        true,
    )
}
