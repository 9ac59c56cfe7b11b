//! Blend mask, localized noise and the refiner network.

mod mask;
mod refiner;

pub(crate) use mask::gaussian_blur;
pub use mask::{blend_from_support, build_blend_mask, default_blend_params, BlendMask};
pub use refiner::{
    gumbel_softmax, gumbel_softmax_sample, one_hot_argmax, refine, sample_noise_patches, NoisePatch, Refiner,
    RefinerNoise, DEFAULT_NOISE_GAIN, DEFAULT_SKIP_GAIN, DEFAULT_TAU, REFINER_LAYERS,
};
