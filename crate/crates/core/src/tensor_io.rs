//! Binary tensor files for masks, variance maps and regression weights.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field                                           |
//! |--------|------|-------------------------------------------------|
//! | 0      | 4    | magic `DWTN`                                    |
//! | 4      | 4    | version, u32 = 1                                |
//! | 8      | 4    | element kind, u32: 0 = real f32, 1 = complex f32 |
//! | 12     | 24   | shape `(d0, d1, d2)`, three u64                 |
//! | 36     | ...  | row-major payload; complex values as (re, im)   |
//!
//! Masks are stored with shape (frames, bins, channels), variance maps as
//! (frames, bins, 1), and weights as complex (bins, channels, order).

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::wpe::{RegressionWeights, VarianceMap};

const MAGIC: &[u8; 4] = b"DWTN";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Real = 0,
    Complex = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub kind: ElementKind,
    pub shape: [usize; 3],
    /// Interleaved (re, im) pairs for complex tensors.
    pub data: Vec<f32>,
}

impl RawTensor {
    fn scalars(kind: ElementKind, shape: [usize; 3]) -> usize {
        let n = shape.iter().product::<usize>();
        match kind {
            ElementKind::Real => n,
            ElementKind::Complex => 2 * n,
        }
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        if self.data.len() != Self::scalars(self.kind, self.shape) {
            return Err(Error::shape("tensor payload does not match its shape"));
        }
        w.write_all(MAGIC)?;
        w.write_all(&TENSOR_VERSION.to_le_bytes())?;
        w.write_all(&(self.kind as u32).to_le_bytes())?;
        for d in self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; 36];
        r.read_exact(&mut head)?;
        if &head[0..4] != MAGIC {
            return Err(Error::Format("not a tensor file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(head[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let kind = match u32_at(8) {
            0 => ElementKind::Real,
            1 => ElementKind::Complex,
            k => return Err(Error::Format(format!("unknown element kind {k}"))),
        };
        let shape = [u64_at(12) as usize, u64_at(20) as usize, u64_at(28) as usize];
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::Format(format!("implausible tensor shape {shape:?}")))?;
        let scalars = if kind == ElementKind::Complex { 2 * count } else { count };
        let mut bytes = vec![0u8; scalars * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RawTensor { kind, shape, data })
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = crate::audio::tmp_path(path);
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(&tmp, buf)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::read(path)?.as_slice())
    }

    fn expect_kind(&self, kind: ElementKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected {kind:?} tensor, found {:?}", self.kind)));
        }
        Ok(())
    }
}

pub fn mask_to_tensor(mask: &Mask) -> RawTensor {
    let (n, k, m) = mask.shape();
    RawTensor {
        kind: ElementKind::Real,
        shape: [n, k, m],
        data: mask.data().iter().map(|&v| v as f32).collect(),
    }
}

pub fn mask_from_tensor(t: &RawTensor) -> Result<Mask> {
    t.expect_kind(ElementKind::Real)?;
    let [n, k, m] = t.shape;
    Mask::new(n, k, m, t.data.iter().map(|&v| v as f64).collect())
}

pub fn variance_to_tensor(var: &VarianceMap) -> RawTensor {
    RawTensor {
        kind: ElementKind::Real,
        shape: [var.frames(), var.bins(), 1],
        data: var.data().iter().map(|&v| v as f32).collect(),
    }
}

pub fn variance_from_tensor(t: &RawTensor) -> Result<VarianceMap> {
    t.expect_kind(ElementKind::Real)?;
    let [n, k, m] = t.shape;
    if m != 1 {
        return Err(Error::shape("variance tensors have a unit third dimension"));
    }
    VarianceMap::new(n, k, t.data.iter().map(|&v| v as f64).collect())
}

pub fn weights_to_tensor(g: &RegressionWeights) -> RawTensor {
    let mut data = Vec::with_capacity(2 * g.bins() * g.channels() * g.order());
    for k in 0..g.bins() {
        for c in g.bin(k) {
            data.push(c.re as f32);
            data.push(c.im as f32);
        }
    }
    RawTensor { kind: ElementKind::Complex, shape: [g.bins(), g.channels(), g.order()], data }
}

/// The delay is not part of the file and must be supplied.
pub fn weights_from_tensor(t: &RawTensor, delay: usize) -> Result<RegressionWeights> {
    t.expect_kind(ElementKind::Complex)?;
    let [bins, channels, order] = t.shape;
    let per_bin = t
        .data
        .chunks_exact(2 * channels * order)
        .map(|chunk| {
            chunk
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
                .collect()
        })
        .collect::<Vec<_>>();
    if per_bin.len() != bins {
        return Err(Error::shape("weight payload does not match its shape"));
    }
    RegressionWeights::new(channels, order, delay, per_bin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let m = Mask::new(1, 2, 1, vec![0.25, 1.0]).unwrap();
        let mut buf = Vec::new();
        mask_to_tensor(&m).write(&mut buf).unwrap();
        assert_eq!(buf.len(), 36 + 8);
        assert_eq!(&buf[0..4], b"DWTN");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &0u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1u64.to_le_bytes());
        assert_eq!(&buf[20..28], &2u64.to_le_bytes());
        assert_eq!(&buf[36..40], &0.25f32.to_le_bytes());
    }

    #[test]
    fn rejects_unknown_version_and_out_of_range_masks() {
        let m = Mask::new(1, 1, 1, vec![0.5]).unwrap();
        let mut buf = Vec::new();
        mask_to_tensor(&m).write(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(RawTensor::read(bad.as_slice()), Err(Error::Format(_))));
        let mut big = buf.clone();
        big[36..40].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(mask_from_tensor(&RawTensor::read(big.as_slice()).unwrap()).is_err());
        assert!(RawTensor::read(&buf[..30]).is_err());
    }

    #[test]
    fn weights_keep_channel_major_order() {
        let per_bin = vec![
            (0..6).map(|i| Complex64::new(i as f64, -(i as f64))).collect(),
            (0..6).map(|i| Complex64::new(0.5 * i as f64, 1.0)).collect(),
        ];
        let g = RegressionWeights::new(2, 3, 3, per_bin).unwrap();
        let t = weights_to_tensor(&g);
        assert_eq!(t.shape, [2, 2, 3]);
        let back = weights_from_tensor(&t, 3).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn mask_and_variance_files_round_trip(
            vals in prop::collection::vec(0.0f32..=1.0, 24),
        ) {
            let m = Mask::new(2, 4, 3, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let mut buf = Vec::new();
            mask_to_tensor(&m).write(&mut buf).unwrap();
            prop_assert_eq!(mask_from_tensor(&RawTensor::read(buf.as_slice()).unwrap()).unwrap(), m);

            let v = VarianceMap::new(6, 4, vals.iter().map(|&x| (x + 0.5) as f64).collect()).unwrap();
            let mut buf = Vec::new();
            variance_to_tensor(&v).write(&mut buf).unwrap();
            prop_assert_eq!(variance_from_tensor(&RawTensor::read(buf.as_slice()).unwrap()).unwrap(), v);
        }
    }
}
