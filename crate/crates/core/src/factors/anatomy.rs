use std::fmt;

use daa_autograd::{Real, Tensor};
use serde::{Deserialize, Serialize};

use super::mask::Mask;
use crate::error::{DaaError, Result};

/// Smallest accepted spatial side.
pub const MIN_SIDE: usize = 8;

/// Opaque subject identifier. Orders lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectId(pub String);

impl SubjectId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubjectId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Pathology class. Index 0 is the normal (healthy) class by convention.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathologyLabel {
    pub class_index: usize,
    pub class_name: String,
}

impl PathologyLabel {
    pub fn new(class_index: usize, class_name: impl Into<String>) -> Self {
        Self {
            class_index,
            class_name: class_name.into(),
        }
    }

    pub fn is_normal(&self) -> bool {
        self.class_index == 0
    }

    /// Check the label against a class count.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if num_classes < 2 {
            return Err(DaaError::InvalidInput(format!(
                "need at least two pathology classes, got {num_classes}"
            )));
        }
        if self.class_index >= num_classes {
            return Err(DaaError::InvalidInput(format!(
                "class index {} out of range for {num_classes} classes",
                self.class_index
            )));
        }
        Ok(())
    }
}

impl fmt::Display for PathologyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.class_name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelRole {
    Heart,
    Other,
}

/// K spatial anatomy factors of one subject, `[K, H, W]`.
///
/// Binary (`continuous == false`) tensors hold only 0/1. Refined outputs
/// reuse the type with values in `[0, 1]` and `continuous == true`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnatomyTensor {
    height: usize,
    width: usize,
    values: Vec<Real>,
    roles: Vec<ChannelRole>,
    pub subject_id: SubjectId,
    pub pathology: PathologyLabel,
    continuous: bool,
}

impl AnatomyTensor {
    pub fn from_masks(
        masks: &[Mask],
        roles: Vec<ChannelRole>,
        subject_id: SubjectId,
        pathology: PathologyLabel,
    ) -> Result<Self> {
        let Some(first) = masks.first() else {
            return Err(DaaError::InvalidInput("anatomy needs at least one channel".into()));
        };
        let (h, w) = first.dims();
        let mut values = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if m.dims() != (h, w) {
                return Err(DaaError::ShapeMismatch(format!(
                    "channel {:?} vs {:?}",
                    m.dims(),
                    (h, w)
                )));
            }
            values.extend(m.to_reals());
        }
        Self::new(h, w, values, roles, subject_id, pathology, false)
    }

    pub fn new(
        height: usize,
        width: usize,
        values: Vec<Real>,
        roles: Vec<ChannelRole>,
        subject_id: SubjectId,
        pathology: PathologyLabel,
        continuous: bool,
    ) -> Result<Self> {
        let k = roles.len();
        if k == 0 {
            return Err(DaaError::InvalidInput("anatomy needs at least one channel".into()));
        }
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(DaaError::InvalidInput(format!(
                "anatomy must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
            )));
        }
        if values.len() != k * height * width {
            return Err(DaaError::ShapeMismatch(format!(
                "{} values for {k}x{height}x{width}",
                values.len()
            )));
        }
        if !roles.contains(&ChannelRole::Heart) {
            return Err(DaaError::InvalidInput("no heart-related channel".into()));
        }
        let ok = if continuous {
            values.iter().all(|v| (0.0..=1.0).contains(v))
        } else {
            values.iter().all(|&v| v == 0.0 || v == 1.0)
        };
        if !ok {
            return Err(DaaError::InvalidInput(if continuous {
                "refined anatomy values must lie in [0, 1]".into()
            } else {
                "binary anatomy values must be exactly 0 or 1".into()
            }));
        }
        Ok(Self {
            height,
            width,
            values,
            roles,
            subject_id,
            pathology,
            continuous,
        })
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

    pub fn num_channels(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[ChannelRole] {
        &self.roles
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn heart_channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == ChannelRole::Heart)
            .map(|(i, _)| i)
    }

    pub fn channel_values(&self, k: usize) -> &[Real] {
        let plane = self.height * self.width;
        &self.values[k * plane..(k + 1) * plane]
    }

    /// Channel `k` as a binary map (values >= 0.5 are set).
    pub fn channel(&self, k: usize) -> Mask {
        let data = self.channel_values(k).iter().map(|&v| v >= 0.5).collect();
        Mask::from_vec(self.height, self.width, data)
    }

    /// Overwrite channel `k` of a binary tensor.
    pub fn set_channel(&mut self, k: usize, m: &Mask) {
        assert_eq!(m.dims(), self.dims());
        assert!(!self.continuous, "set_channel on a continuous tensor");
        let plane = self.height * self.width;
        for (dst, &v) in self.values[k * plane..(k + 1) * plane].iter_mut().zip(m.data()) {
            *dst = v as u8 as Real;
        }
    }

    /// `[1, K, H, W]` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, self.num_channels(), self.height, self.width],
            self.values.clone(),
        )
    }

    /// Threshold every channel at 0.5 into a binary tensor.
    pub fn binarized(&self) -> AnatomyTensor {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
        out.continuous = false;
        out
    }
}

/// Union of the heart-related channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeartMask {
    pub mask: Mask,
}

impl HeartMask {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, 1, self.mask.height(), self.mask.width()],
            self.mask.to_reals(),
        )
    }
}

pub fn heart_mask(c: &AnatomyTensor) -> HeartMask {
    let mut mask = Mask::new(c.height(), c.width());
    for k in c.heart_channels() {
        mask = mask.or(&c.channel(k));
    }
    HeartMask { mask }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub channel_a: usize,
    pub channel_b: usize,
    pub pixels: usize,
}

/// Every unordered pair of heart channels that share at least one pixel.
pub fn overlap_report(c: &AnatomyTensor) -> Vec<Overlap> {
    let heart: Vec<usize> = c.heart_channels().collect();
    let masks: Vec<Mask> = heart.iter().map(|&k| c.channel(k)).collect();
    let mut out = Vec::new();
    for i in 0..heart.len() {
        for j in i + 1..heart.len() {
            let pixels = masks[i].and(&masks[j]).count();
            if pixels > 0 {
                out.push(Overlap {
                    channel_a: heart[i],
                    channel_b: heart[j],
                    pixels,
                });
            }
        }
    }
    out
}
