use serde::{Deserialize, Serialize};

use crate::error::{DaaError, Result};

/// Binary H x W map.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
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

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    fn check_dims(&self, other: &Mask) {
        assert_eq!(self.dims(), other.dims(), "mask dimension mismatch");
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.check_dims(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Mask::from_vec(self.height, self.width, data)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.check_dims(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Mask::from_vec(self.height, self.width, data)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.check_dims(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect();
        Mask::from_vec(self.height, self.width, data)
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        self.check_dims(other);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a != b).collect();
        Mask::from_vec(self.height, self.width, data)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.check_dims(other);
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Shift by `(dr, dc)` pixels; pixels leaving the frame are dropped.
    pub fn translate(&self, dr: isize, dc: isize) -> Mask {
        let mut out = Mask::new(self.height, self.width);
        for r in 0..self.height {
            let nr = r as isize + dr;
            if nr < 0 || nr >= self.height as isize {
                continue;
            }
            for c in 0..self.width {
                let nc = c as isize + dc;
                if nc < 0 || nc >= self.width as isize || !self.get(r, c) {
                    continue;
                }
                out.set(nr as usize, nc as usize, true);
            }
        }
        out
    }

    /// Pixel values as 0.0 / 1.0.
    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as u8 as f64).collect()
    }
}

/// Arithmetic mean of the coordinates of the set pixels.
pub fn center_of_mass(mask: &Mask) -> Result<(f64, f64)> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                sr += r as f64;
                sc += c as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(DaaError::EmptyFactor { channel: None });
    }
    Ok((sr / n as f64, sc / n as f64))
}

/// Translate `donor` so that its center of mass lands on `target`'s.
///
/// Offsets are rounded to whole pixels, so each axis agrees within half a
/// pixel as long as no donor pixel leaves the frame.
pub fn register_factor(donor: &Mask, target: &Mask) -> Result<Mask> {
    let com_d = center_of_mass(donor)?;
    let com_t = center_of_mass(target)?;
    Ok(translate_to(donor, com_d, com_t))
}

pub(crate) fn translate_to(donor: &Mask, from: (f64, f64), to: (f64, f64)) -> Mask {
    let dr = (to.0 - from.0).round() as isize;
    let dc = (to.1 - from.1).round() as isize;
    donor.translate(dr, dc)
}
