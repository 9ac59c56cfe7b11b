//! `DAAW1` parameter container.
//!
//! ```text
//! DAAW1
//! blocks <n>
//! <name> <d0>,<d1>,...     (n lines)
//! data
//! <little-endian f32 values of every block, in header order>
//! ```

use std::path::Path;

use daa_autograd::{ParamSet, Real, Tensor};

use crate::error::{DaaError, Result};

pub const MAGIC: &str = "DAAW1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(
            !name.is_empty() && !name.chars().any(char::is_whitespace),
            "block names must be non-empty and contain no whitespace"
        );
        self.blocks.push((name, t));
    }

    /// Add every tensor of `p` as `<prefix>.<name>`.
    pub fn push_params(&mut self, prefix: &str, p: &ParamSet) {
        for (n, t) in p.iter() {
            self.push(format!("{prefix}.{n}"), t.clone());
        }
    }

    /// Collect blocks named `<prefix>.*` (in file order) into a parameter set.
    pub fn params(&self, prefix: &str) -> ParamSet {
        let head = format!("{prefix}.");
        let mut p = ParamSet::new();
        for (n, t) in &self.blocks {
            if let Some(rest) = n.strip_prefix(&head) {
                p.push(rest, t.clone());
            }
        }
        p
    }

    pub fn push_meta(&mut self, key: &str, value: Real) {
        self.push(format!("meta.{key}"), Tensor::scalar(value));
    }

    pub fn meta(&self, key: &str) -> Option<Real> {
        let name = format!("meta.{key}");
        self.blocks.iter().find(|(n, _)| *n == name).map(|(_, t)| t.data()[0])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\nblocks {}\n", self.blocks.len());
        for (n, t) in &self.blocks {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            header.push_str(&format!("{n} {}\n", dims.join(",")));
        }
        header.push_str("data\n");
        let mut out = header.into_bytes();
        for (_, t) in &self.blocks {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let line = |pos: &mut usize| -> Result<(u64, String)> {
            let start = *pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| DaaError::format(start as u64, "unterminated header line"))?;
            *pos = start + end + 1;
            let s = std::str::from_utf8(&bytes[start..start + end])
                .map_err(|_| DaaError::format(start as u64, "header is not UTF-8"))?;
            Ok((start as u64, s.to_string()))
        };
        let (off, magic) = line(&mut pos)?;
        if magic != MAGIC {
            return Err(DaaError::format(off, format!("expected magic {MAGIC}, found `{magic}`")));
        }
        let (off, count) = line(&mut pos)?;
        let n: usize = count
            .strip_prefix("blocks ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| DaaError::format(off, "expected `blocks <n>`"))?;
        let mut specs = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let (off, l) = line(&mut pos)?;
            let (name, dims) = l
                .split_once(' ')
                .ok_or_else(|| DaaError::format(off, "expected `<name> <shape>`"))?;
            let shape: Vec<usize> = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| DaaError::format(off, format!("bad shape `{dims}`")))?;
            if name.is_empty() || shape.is_empty() {
                return Err(DaaError::format(off, "empty block name or shape"));
            }
            specs.push((name.to_string(), shape));
        }
        let (off, data) = line(&mut pos)?;
        if data != "data" {
            return Err(DaaError::format(off, "expected `data`"));
        }
        let mut blocks = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let count: usize = shape.iter().product();
            let need = count * 4;
            if bytes.len() - pos < need {
                return Err(DaaError::format(
                    bytes.len() as u64,
                    format!("truncated data for block `{name}`: need {need} bytes at {pos}"),
                ));
            }
            let values = bytes[pos..pos + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Real)
                .collect();
            pos += need;
            blocks.push((name, Tensor::new(&shape, values)));
        }
        if pos != bytes.len() {
            return Err(DaaError::format(pos as u64, "trailing bytes after last block"));
        }
        Ok(Self { blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| DaaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DaaError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Round every value through `f32`, matching what a save/load cycle keeps.
pub fn quantize(p: &mut ParamSet) {
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as Real;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        let mut p = ParamSet::new();
        p.push("conv0.w", Tensor::new(&[2, 1, 1, 1], vec![0.5, -1.25]));
        p.push("conv0.b", Tensor::new(&[2], vec![0.0, 3.0]));
        c.push_params("gen", &p);
        c.push_meta("tau", 0.67);
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.blocks.len(), 3);
        assert_eq!(back.params("gen").names(), &["conv0.w".to_string(), "conv0.b".to_string()]);
        assert_eq!(back.params("gen").get(0).data(), &[0.5, -1.25]);
        assert_eq!(back.meta("tau").unwrap(), 0.67f32 as Real);
        assert!(back.meta("missing").is_none());
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn header_is_text() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes[..40]);
        assert!(text.starts_with("DAAW1\nblocks 3\ngen.conv0.w 2,1,1,1\n"));
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, DaaError::FormatError { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(DaaError::FormatError { offset: 0, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"DAAW1\nblocks x\n").is_err());
    }
}
