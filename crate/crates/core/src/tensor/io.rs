//! `.occt` tensor files.
//!
//! Layout: `OCCT` magic, version byte `0x01`, dtype byte (`0x00` f32 LE,
//! `0x01` f64 LE, `0x02` i64 LE labels), rank byte, `rank` little-endian
//! u64 dims, then the row-major payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{OccError, Result};

pub const MAGIC: &[u8; 4] = b"OCCT";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    I64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0x00,
            DType::F64 => 0x01,
            DType::I64 => 0x02,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0x00 => Ok(DType::F32),
            0x01 => Ok(DType::F64),
            0x02 => Ok(DType::I64),
            other => Err(OccError::Format(format!("unknown dtype byte 0x{other:02x}"))),
        }
    }
}

/// Contents of an `.occt` file.
#[derive(Debug, Clone, PartialEq)]
pub enum OcctData {
    /// Float payload (f32 files are widened on read).
    Float(Tensor),
    Labels { dims: Vec<usize>, values: Vec<i64> },
}

impl OcctData {
    pub fn dims(&self) -> &[usize] {
        match self {
            OcctData::Float(t) => t.dims(),
            OcctData::Labels { dims, .. } => dims,
        }
    }

    pub fn into_tensor(self) -> Result<Tensor> {
        match self {
            OcctData::Float(t) => Ok(t),
            OcctData::Labels { .. } => Err(OccError::Format("expected a float tensor, found labels".into())),
        }
    }
}

fn header(out: &mut Vec<u8>, dtype: DType, dims: &[usize]) -> Result<()> {
    if dims.len() > u8::MAX as usize {
        return Err(OccError::input(format!("rank {} exceeds 255", dims.len())));
    }
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

pub fn encode_tensor(tensor: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    header(&mut out, dtype, tensor.dims())?;
    match dtype {
        DType::F32 => tensor.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => tensor.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        DType::I64 => return Err(OccError::input("use encode_labels for integer payloads")),
    }
    Ok(out)
}

pub fn encode_labels(dims: &[usize], values: &[i64]) -> Result<Vec<u8>> {
    if dims.iter().product::<usize>() != values.len() {
        return Err(OccError::input(format!("dims {dims:?} do not match {} labels", values.len())));
    }
    let mut out = Vec::new();
    header(&mut out, DType::I64, dims)?;
    values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(out)
}

pub fn decode(mut bytes: &[u8]) -> Result<OcctData> {
    let mut fixed = [0u8; 7];
    bytes
        .read_exact(&mut fixed)
        .map_err(|_| OccError::Format("truncated header".into()))?;
    if &fixed[..4] != MAGIC {
        return Err(OccError::Format("bad magic, not an .occt file".into()));
    }
    if fixed[4] != VERSION {
        return Err(OccError::Format(format!("unsupported version {}", fixed[4])));
    }
    let dtype = DType::from_code(fixed[5])?;
    let rank = fixed[6] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        bytes
            .read_exact(&mut b)
            .map_err(|_| OccError::Format("truncated dims".into()))?;
        dims.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| OccError::Format("dim overflows usize".into()))?);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| OccError::Format("element count overflows".into()))?;
    let width = if dtype == DType::F32 { 4 } else { 8 };
    if bytes.len() != n * width {
        return Err(OccError::Format(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            n * width
        )));
    }
    Ok(match dtype {
        DType::F32 => {
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            OcctData::Float(Tensor::new(dims, data)?)
        }
        DType::F64 => {
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            OcctData::Float(Tensor::new(dims, data)?)
        }
        DType::I64 => OcctData::Labels {
            dims,
            values: bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
        },
    })
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor, dtype: DType) -> Result<()> {
    let bytes = encode_tensor(tensor, dtype)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, dims: &[usize], values: &[i64]) -> Result<()> {
    let bytes = encode_labels(dims, values)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<OcctData> {
    decode(&fs::read(path)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read(path)?.into_tensor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = encode_tensor(&t, DType::F64).unwrap();
        assert_eq!(&b[..7], &[b'O', b'C', b'C', b'T', 1, 1, 1]);
        assert_eq!(&b[7..15], &2u64.to_le_bytes());
        assert_eq!(b.len(), 15 + 16);
    }

    #[test]
    fn rejects_unknown_magic_and_version() {
        let t = Tensor::zeros(&[1]);
        let mut b = encode_tensor(&t, DType::F64).unwrap();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(OccError::Format(_))));
        b[4] = 1;
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(OccError::Format(_))));
        assert!(decode(&b"OCCT\x01\x07\x00"[..]).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let b = encode_tensor(&Tensor::zeros(&[3]), DType::F32).unwrap();
        assert!(decode(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let b = encode_labels(&[2, 2], &[0, 3, -1, 7]).unwrap();
        assert_eq!(
            decode(&b).unwrap(),
            OcctData::Labels { dims: vec![2, 2], values: vec![0, 3, -1, 7] }
        );
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(dims in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let t = Tensor::from_fn(&dims, |_| rng.normal() * 1e3);
            let back = decode(&encode_tensor(&t, DType::F64).unwrap()).unwrap().into_tensor().unwrap();
            prop_assert!(back.bit_eq(&t));
        }

        #[test]
        fn f32_round_trip_matches_cast(values in prop::collection::vec(-1e6f64..1e6, 1..20)) {
            let t = Tensor::new(vec![values.len()], values.clone()).unwrap();
            let back = decode(&encode_tensor(&t, DType::F32).unwrap()).unwrap().into_tensor().unwrap();
            for (a, b) in back.data().iter().zip(&values) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}
