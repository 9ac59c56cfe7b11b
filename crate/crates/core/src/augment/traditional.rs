//! Classical image augmentations: blur, gamma, crop, rotation, flip and
//! elastic deformation. Geometric transforms are expressed as one sampling
//! field so images (bilinear) and label maps (nearest) stay aligned.

use daa_autograd::{Real, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blend::gaussian_blur;
use crate::nets::init::DetRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraditionalConfig {
    /// Gaussian blur sigma drawn from `[0, blur_sigma_max]`.
    pub blur_sigma_max: Real,
    /// Gamma exponent range applied on the `[0, 1]` intensity scale.
    pub gamma: (Real, Real),
    pub rotate_degrees: Real,
    pub flip_p: Real,
    /// Smallest crop side as a fraction of the image, resized back.
    pub crop_min: Real,
    /// Smoothing sigma of the elastic displacement field, in pixels.
    pub elastic_sigma: Real,
    /// RMS displacement of the elastic field, in pixels.
    pub elastic_alpha: Real,
}

impl Default for TraditionalConfig {
    fn default() -> Self {
        Self {
            blur_sigma_max: 1.5,
            gamma: (0.7, 1.4),
            rotate_degrees: 15.0,
            flip_p: 0.5,
            crop_min: 0.85,
            elastic_sigma: 4.0,
            elastic_alpha: 1.0,
        }
    }
}

/// Source coordinate of every output pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Warp {
    height: usize,
    width: usize,
    src: Vec<(Real, Real)>,
}

impl Warp {
    pub fn identity(height: usize, width: usize) -> Self {
        let src = (0..height * width).map(|i| ((i / width) as Real, (i % width) as Real)).collect();
        Self { height, width, src }
    }

    /// Flip, rotation and crop about the centre, then an elastic field.
    pub fn random(height: usize, width: usize, cfg: &TraditionalConfig, r: &mut DetRng) -> Self {
        let flip = r.random::<Real>() < cfg.flip_p;
        let angle = r.random_range(-1.0..=1.0) * cfg.rotate_degrees.to_radians();
        let scale = if cfg.crop_min < 1.0 { r.random_range(cfg.crop_min..=1.0) } else { 1.0 };
        let (cy, cx) = ((height as Real - 1.0) / 2.0, (width as Real - 1.0) / 2.0);
        // crop window centre may move within the slack the crop leaves
        let slack_y = (1.0 - scale) * height as Real / 2.0;
        let slack_x = (1.0 - scale) * width as Real / 2.0;
        let oy = r.random_range(-1.0..=1.0) * slack_y;
        let ox = r.random_range(-1.0..=1.0) * slack_x;
        let field = |r: &mut DetRng| -> Vec<Real> {
            let noise: Vec<Real> = (0..height * width).map(|_| r.sample::<Real, _>(StandardNormal)).collect();
            let smooth = gaussian_blur(&noise, height, width, cfg.elastic_sigma);
            let rms = (smooth.iter().map(|v| v * v).sum::<Real>() / smooth.len() as Real).sqrt();
            let k = if rms > 0.0 { cfg.elastic_alpha / rms } else { 0.0 };
            smooth.into_iter().map(|v| v * k).collect()
        };
        let (dy, dx) = if cfg.elastic_alpha > 0.0 {
            (field(r), field(r))
        } else {
            (vec![0.0; height * width], vec![0.0; height * width])
        };
        let (sin, cos) = angle.sin_cos();
        let src = (0..height * width)
            .map(|i| {
                let y = (i / width) as Real - cy;
                let mut x = (i % width) as Real - cx;
                if flip {
                    x = -x;
                }
                let (ry, rx) = (cos * y - sin * x, sin * y + cos * x);
                (cy + oy + scale * ry + dy[i], cx + ox + scale * rx + dx[i])
            })
            .collect();
        Self { height, width, src }
    }

    pub fn apply_bilinear(&self, values: &[Real]) -> Vec<Real> {
        let (h, w) = (self.height, self.width);
        let at = |y: isize, x: isize| values[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
        self.src
            .iter()
            .map(|&(sy, sx)| {
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                top * (1.0 - fy) + bottom * fy
            })
            .collect()
    }

    /// Nearest-neighbour resampling; out-of-frame sources take `fill`.
    pub fn apply_nearest<T: Copy>(&self, values: &[T], fill: T) -> Vec<T> {
        let (h, w) = (self.height as isize, self.width as isize);
        self.src
            .iter()
            .map(|&(sy, sx)| {
                let (y, x) = (sy.round() as isize, sx.round() as isize);
                if y < 0 || x < 0 || y >= h || x >= w {
                    fill
                } else {
                    values[(y * w + x) as usize]
                }
            })
            .collect()
    }
}

/// Gamma on the `[0, 1]` scale of a `[-1, 1]` image.
pub fn adjust_gamma(values: &[Real], gamma: Real) -> Vec<Real> {
    values
        .iter()
        .map(|&v| {
            let u = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
            2.0 * u.powf(gamma) - 1.0
        })
        .collect()
}

fn intensity(values: Vec<Real>, h: usize, w: usize, cfg: &TraditionalConfig, r: &mut DetRng) -> Vec<Real> {
    let (lo, hi) = cfg.gamma;
    let g = if hi > lo { r.random_range(lo..=hi) } else { lo };
    let sigma = r.random::<Real>() * cfg.blur_sigma_max;
    let v = adjust_gamma(&values, g);
    if sigma > 0.05 {
        gaussian_blur(&v, h, w, sigma).into_iter().map(|x| x.clamp(-1.0, 1.0)).collect()
    } else {
        v
    }
}

/// Augment one `[1, 1, H, W]` image.
pub fn augment_image(image: &Tensor, cfg: &TraditionalConfig, r: &mut DetRng) -> Tensor {
    let (h, w) = (image.dim(2), image.dim(3));
    let warp = Warp::random(h, w, cfg, r);
    let v = intensity(warp.apply_bilinear(image.data()), h, w, cfg, r);
    Tensor::new(image.shape(), v)
}

/// Augment an image together with its label map (0 = background).
pub fn augment_pair(image: &Tensor, labels: &[u8], cfg: &TraditionalConfig, r: &mut DetRng) -> (Tensor, Vec<u8>) {
    let (h, w) = (image.dim(2), image.dim(3));
    let warp = Warp::random(h, w, cfg, r);
    let l = warp.apply_nearest(labels, 0);
    let v = intensity(warp.apply_bilinear(image.data()), h, w, cfg, r);
    (Tensor::new(image.shape(), v), l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init::rng;
    use proptest::prelude::*;

    fn still() -> TraditionalConfig {
        TraditionalConfig {
            blur_sigma_max: 0.0,
            gamma: (1.0, 1.0),
            rotate_degrees: 0.0,
            flip_p: 0.0,
            crop_min: 1.0,
            elastic_sigma: 4.0,
            elastic_alpha: 0.0,
        }
    }

    #[test]
    fn identity_settings_change_nothing() {
        let img = Tensor::new(&[1, 1, 4, 5], (0..20).map(|i| i as Real / 10.0 - 1.0).collect());
        let out = augment_image(&img, &still(), &mut rng(0));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let labels: Vec<u8> = (0..20).map(|i| (i % 4) as u8).collect();
        assert_eq!(Warp::identity(4, 5).apply_nearest(&labels, 0), labels);
    }

    #[test]
    fn flip_is_a_mirror() {
        let cfg = TraditionalConfig {
            flip_p: 1.0,
            ..still()
        };
        let labels: Vec<u8> = (0..12).map(|i| i as u8).collect();
        let w = Warp::random(3, 4, &cfg, &mut rng(1));
        let out = w.apply_nearest(&labels, 99);
        assert_eq!(&out[..4], &[3, 2, 1, 0]);
        assert_eq!(w.apply_nearest(&out, 99), labels);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(adjust_gamma(&[-1.0, 1.0], 1.3), vec![-1.0, 1.0]);
        assert!((adjust_gamma(&[0.0], 2.0)[0] - (-0.5)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn outputs_stay_valid(seed in 0u64..1000) {
            let img = Tensor::new(&[1, 1, 16, 16], (0..256).map(|i| ((i * 37 % 200) as Real / 100.0) - 1.0).collect());
            let labels: Vec<u8> = (0..256).map(|i| (i % 3) as u8).collect();
            let (out, l) = augment_pair(&img, &labels, &TraditionalConfig::default(), &mut rng(seed));
            prop_assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!(l.iter().all(|&v| v < 3));
        }
    }
}
