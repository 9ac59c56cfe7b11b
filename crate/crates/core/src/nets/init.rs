use daa_autograd::{ParamSet, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

pub fn rng(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot/Xavier uniform draw for a weight of shape `[out, in, (kh, kw)]`.
///
/// Bound `sqrt(6 / (fan_in + fan_out))` gives variance
/// `2 / (fan_in + fan_out)`.
pub fn xavier_uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let receptive: usize = shape[2..].iter().product::<usize>().max(1);
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    let bound = (6.0 / (fan_in + fan_out) as Real).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}

pub(crate) fn push_conv(p: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
    p.push(format!("{name}.w"), xavier_uniform(&[cout, cin, k, k], rng));
    p.push(format!("{name}.b"), Tensor::zeros(&[cout]));
}

pub(crate) fn push_linear(p: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut impl Rng) {
    p.push(format!("{name}.w"), xavier_uniform(&[dout, din], rng));
    p.push(format!("{name}.b"), Tensor::zeros(&[dout]));
}
