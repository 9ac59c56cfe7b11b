//! Subject records and the `DAAF1` file format.
//!
//! All integers little-endian.
//!
//! | field        | type                          |
//! |--------------|-------------------------------|
//! | magic        | `b"DAAF"`                     |
//! | version      | u16 (= 1)                     |
//! | flags        | u16, bit 0 = synthetic        |
//! | H, W, K, Ω   | u16 each                      |
//! | id           | u16 length + UTF-8            |
//! | roles        | K bytes, 1 = heart-related    |
//! | class name   | u16 length + UTF-8            |
//! | image        | H·W f32                       |
//! | factors      | K·H·W u8 (0/1)                |
//! | masks        | u8 count M, then M·H·W u8     |
//! | imaging code | u16 length d, then d f32      |
//! | label        | u16                           |
//! | vendor       | u8                            |
//! | provenance   | u32 length + UTF-8 (may be 0) |

use std::path::Path;

use daa_autograd::{Real, Tensor};

use crate::error::{DaaError, Result};
use crate::factors::{AnatomyTensor, ChannelRole, Mask, PathologyLabel, SubjectId};
use crate::nets::ImagingFactor;

pub const MAGIC: &[u8; 4] = b"DAAF";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub id: SubjectId,
    /// `[1, 1, H, W]`, values in `[-1, 1]`, exactly representable as f32.
    pub image: Tensor,
    /// Structure masks in LV, MYO, RV order.
    pub masks: Vec<Mask>,
    pub anatomy: AnatomyTensor,
    pub imaging: ImagingFactor,
    pub pathology: PathologyLabel,
    pub vendor: u8,
    pub synthetic: bool,
    pub provenance: Option<String>,
}

impl SubjectRecord {
    pub fn height(&self) -> usize {
        self.anatomy.height()
    }

    pub fn width(&self) -> usize {
        self.anatomy.width()
    }

    pub fn to_bytes(&self, num_classes: usize) -> Vec<u8> {
        let (h, w) = self.anatomy.dims();
        let k = self.anatomy.num_channels();
        let mut b = Vec::with_capacity(16 + h * w * (4 + k + self.masks.len()));
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.synthetic as u16).to_le_bytes());
        for v in [h, w, k, num_classes] {
            b.extend_from_slice(&(v as u16).to_le_bytes());
        }
        put_str16(&mut b, self.id.as_str());
        b.extend(self.anatomy.roles().iter().map(|r| (*r == ChannelRole::Heart) as u8));
        put_str16(&mut b, &self.pathology.class_name);
        for &v in self.image.data() {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
        b.extend(self.anatomy.values().iter().map(|&v| (v >= 0.5) as u8));
        b.push(self.masks.len() as u8);
        for m in &self.masks {
            b.extend(m.data().iter().map(|&v| v as u8));
        }
        b.extend_from_slice(&(self.imaging.code.len() as u16).to_le_bytes());
        for &v in &self.imaging.code {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
        b.extend_from_slice(&(self.pathology.class_index as u16).to_le_bytes());
        b.push(self.vendor);
        let prov = self.provenance.as_deref().unwrap_or("");
        b.extend_from_slice(&(prov.len() as u32).to_le_bytes());
        b.extend_from_slice(prov.as_bytes());
        b
    }

    /// Parse a record; returns it with the stored class count.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(DaaError::format(0, "bad magic, expected DAAF"));
        }
        let at = r.pos as u64;
        let version = r.u16()?;
        if version != VERSION {
            return Err(DaaError::format(at, format!("unsupported version {version}")));
        }
        let flags = r.u16()?;
        let (h, w, k, omega) = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
        let id = SubjectId::new(r.str16()?);
        let at = r.pos as u64;
        let roles: Vec<ChannelRole> = r
            .take(k)?
            .iter()
            .map(|&v| match v {
                0 => Ok(ChannelRole::Other),
                1 => Ok(ChannelRole::Heart),
                _ => Err(DaaError::format(at, "role byte must be 0 or 1")),
            })
            .collect::<Result<_>>()?;
        let class_name = r.str16()?;
        let plane = h * w;
        let image: Vec<Real> = r.take(4 * plane)?.chunks_exact(4).map(f32_at).collect();
        let at = r.pos as u64;
        let factors: Vec<Real> = r.take(k * plane)?.iter().map(|&v| v as Real).collect();
        if factors.iter().any(|&v| v > 1.0) {
            return Err(DaaError::format(at, "factor bytes must be 0 or 1"));
        }
        let nmask = r.u8()? as usize;
        let at = r.pos as u64;
        let mask_bytes = r.take(nmask * plane)?;
        if mask_bytes.iter().any(|&v| v > 1) {
            return Err(DaaError::format(at, "mask bytes must be 0 or 1"));
        }
        let masks = mask_bytes
            .chunks_exact(plane.max(1))
            .map(|c| Mask::from_vec(h, w, c.iter().map(|&v| v == 1).collect()))
            .collect();
        let d = r.u16()? as usize;
        let code: Vec<Real> = r.take(4 * d)?.chunks_exact(4).map(f32_at).collect();
        let at = r.pos as u64;
        let label = r.u16()? as usize;
        let vendor = r.u8()?;
        let plen = r.u32()? as usize;
        let prov = r.take(plen)?;
        let provenance = if plen == 0 {
            None
        } else {
            Some(String::from_utf8(prov.to_vec()).map_err(|_| DaaError::format(at, "provenance is not UTF-8"))?)
        };
        if r.pos != bytes.len() {
            return Err(DaaError::format(r.pos as u64, "trailing bytes after record"));
        }
        let pathology = PathologyLabel::new(label, class_name);
        pathology.validate(omega).map_err(|e| DaaError::format(at, e.to_string()))?;
        let anatomy = AnatomyTensor::new(h, w, factors, roles, id.clone(), pathology.clone(), false)
            .map_err(|e| DaaError::format(0, e.to_string()))?;
        let imaging = ImagingFactor::new(code, Some(id.clone())).map_err(|e| DaaError::format(0, e.to_string()))?;
        Ok((
            Self {
                id,
                image: Tensor::new(&[1, 1, h, w], image),
                masks,
                anatomy,
                imaging,
                pathology,
                vendor,
                synthetic: flags & 1 == 1,
                provenance,
            },
            omega,
        ))
    }
}

fn f32_at(c: &[u8]) -> Real {
    f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Real
}

fn put_str16(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u16).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DaaError::format(
                self.pos as u64,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let at = self.pos as u64;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DaaError::format(at, "string is not UTF-8"))
    }
}

pub fn save_subject(record: &SubjectRecord, num_classes: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, record.to_bytes(num_classes)).map_err(|e| DaaError::io(path, e))
}

pub fn load_subject(path: impl AsRef<Path>) -> Result<SubjectRecord> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DaaError::io(path, e))?;
    Ok(SubjectRecord::from_bytes(&bytes)?.0)
}
