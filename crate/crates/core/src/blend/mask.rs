use daa_autograd::{Real, Tensor};

use crate::factors::{dilate, Mask, MixRecord};

/// Soft map of where mixing happened.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendMask {
    height: usize,
    width: usize,
    phi: Vec<Real>,
    pub dilation_radius: usize,
    pub blur_sigma: Real,
}

/// Default dilation radius and blur sigma at 64x64, scaled with image size.
pub fn default_blend_params(height: usize, width: usize) -> (usize, Real) {
    let scale = height.max(width) as Real / 64.0;
    ((5.0 * scale).round() as usize, 2.0 * scale)
}

impl BlendMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            phi: vec![0.0; height * width],
            dilation_radius: 0,
            blur_sigma: 0.0,
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            phi: vec![1.0; height * width],
            ..Self::zeros(height, width)
        }
    }

    /// Wrap an explicit map; values are clamped to `[0, 1]`.
    pub fn from_values(height: usize, width: usize, phi: Vec<Real>) -> Self {
        assert_eq!(phi.len(), height * width);
        Self {
            phi: phi.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..Self::zeros(height, width)
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[Real] {
        &self.phi
    }

    pub fn get(&self, r: usize, c: usize) -> Real {
        self.phi[r * self.width + c]
    }

    /// `[1, 1, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.phi.clone())
    }
}

/// Normalized 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn gaussian_taps(sigma: Real) -> Vec<Real> {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<Real> = (-r..=r).map(|d| (-(d * d) as Real / (2.0 * sigma * sigma)).exp()).collect();
    let s: Real = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with zero padding outside the frame.
pub(crate) fn gaussian_blur(values: &[Real], height: usize, width: usize, sigma: Real) -> Vec<Real> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && xx < width as isize {
                    acc += t * values[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && yy < height as isize {
                    acc += t * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Dilate the touched pixels, blur, clamp, and zero everything outside the
/// dilated support.
pub fn build_blend_mask(rec: &MixRecord, dilation_radius: usize, blur_sigma: Real) -> BlendMask {
    blend_from_support(&rec.modified_support, dilation_radius, blur_sigma)
}

pub fn blend_from_support(support: &Mask, dilation_radius: usize, blur_sigma: Real) -> BlendMask {
    let (h, w) = support.dims();
    let region = dilate(support, dilation_radius);
    let blurred = gaussian_blur(&region.to_reals(), h, w, blur_sigma);
    let phi = blurred
        .iter()
        .zip(region.data())
        .map(|(&v, &inside)| if inside { v.clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    BlendMask {
        height: h,
        width: w,
        phi,
        dilation_radius,
        blur_sigma: blur_sigma.max(0.0),
    }
}
