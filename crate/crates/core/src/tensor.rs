//! Flat little-endian tensor files.
//!
//! Each record is a 16-byte header (magic `BMDS`, format version, rank, dtype
//! code; all `u32` after the magic), `rank` `u64` dimension sizes, then the
//! row-major element data. A file may hold several records back to back.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BMDS";
pub const FORMAT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum DType {
    F32 = 1,
    I32 = 2,
    F64 = 3,
}

impl DType {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::I32),
            3 => Some(DType::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let count = element_count(&dims).ok_or_else(|| Error::Shape("dimension product overflows".into()))?;
        if count != data.len() as u64 {
            return Err(Error::Shape(format!(
                "dims {dims:?} describe {count} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn into_f32(self) -> Option<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_i32(self) -> Option<Vec<i32>> {
        match self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn into_f64(self) -> Option<Vec<f64>> {
        match self.data {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }
}

fn element_count(dims: &[u64]) -> Option<u64> {
    dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
}

pub fn encode(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    out.extend_from_slice(&(t.data.dtype() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

pub fn encode_all(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        encode(t, &mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::integrity(
                    "tensor",
                    format!("truncated {what} at byte {} (need {n}, have {})", self.pos, self.bytes.len() - self.pos),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes one record from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::integrity("tensor", "bad magic"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::integrity("tensor", format!("unsupported format version {version}")));
    }
    let rank = r.u32("rank")?;
    if rank > MAX_RANK {
        return Err(Error::integrity("tensor", format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let dtype = DType::from_code(r.u32("dtype")?).ok_or_else(|| Error::integrity("tensor", "unknown dtype"))?;
    let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
    let count = element_count(&dims)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::integrity("tensor", "dimension product overflows"))?;
    let nbytes = count
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::integrity("tensor", "byte length overflows"))?;
    let raw = r.take(nbytes, "data")?;
    let data = match dtype {
        DType::F32 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::I32 => TensorData::I32(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
        DType::F64 => TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok((Tensor { dims, data }, r.pos))
}

/// Decodes a whole file of back-to-back records.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (t, used) = decode(bytes)?;
        out.push(t);
        bytes = &bytes[used..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_sixteen_bytes_plus_dims() {
        let t = Tensor::new(vec![2, 3], TensorData::F32(vec![0.0; 6])).unwrap();
        let mut buf = Vec::new();
        encode(&t, &mut buf);
        assert_eq!(&buf[..4], b"BMDS");
        assert_eq!(buf.len(), 16 + 2 * 8 + 6 * 4);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn rejects_malformed() {
        let t = Tensor::new(vec![4], TensorData::I32(vec![1, 2, 3, 4])).unwrap();
        let mut buf = Vec::new();
        encode(&t, &mut buf);

        assert!(matches!(decode(&buf[..buf.len() - 1]), Err(Error::Integrity { .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Integrity { .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        let mut bad = buf.clone();
        bad[12] = 7;
        assert!(decode(&bad).is_err());
        // Huge dimension must not allocate.
        let mut bad = buf.clone();
        bad[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bad).is_err());
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn shape_checked_on_construction() {
        assert!(Tensor::new(vec![2, 2], TensorData::F64(vec![0.0; 3])).is_err());
        assert!(Tensor::new(vec![], TensorData::F64(vec![1.0])).is_ok());
        assert!(Tensor::new(vec![0, 5], TensorData::F32(vec![])).is_ok());
    }

    proptest! {
        #[test]
        fn multi_record_round_trip(
            a in prop::collection::vec(any::<f32>(), 0..40),
            b in prop::collection::vec(any::<i32>(), 0..40),
            c in prop::collection::vec(any::<f64>(), 0..40),
        ) {
            let ts = vec![
                Tensor::new(vec![a.len() as u64], TensorData::F32(a)).unwrap(),
                Tensor::new(vec![1, b.len() as u64], TensorData::I32(b)).unwrap(),
                Tensor::new(vec![c.len() as u64, 1, 1], TensorData::F64(c)).unwrap(),
            ];
            let bytes = encode_all(&ts);
            let back = decode_all(&bytes).unwrap();
            // Compare bit patterns so NaN payloads count.
            prop_assert_eq!(encode_all(&back), bytes);
        }
    }
}
