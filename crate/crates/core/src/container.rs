//! Binary tensor container.
//!
//! Layout (little endian): magic `LTSR1`, rank `u32`, `rank` dims as `u32`,
//! dtype tag `u8` (`0x01` = f32), then `prod(dims)` f32 values in row-major
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const MAGIC: &[u8; 5] = b"LTSR1";
pub const DTYPE_F32: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorContainer {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_latent(t: &LatentTensor) -> Self {
        Self {
            dims: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn into_latent(self) -> Result<LatentTensor> {
        match self.dims[..] {
            [h, w, c] => LatentTensor::from_vec(h, w, c, self.data),
            _ => Err(Error::Format(format!("expected rank 3, got dims {:?}", self.dims))),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&u32_of(self.dims.len())?.to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&u32_of(d)?.to_le_bytes())?;
        }
        w.write_all(&[DTYPE_F32])?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let rank = read_u32(r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype tag {:#04x}", tag[0])));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 4 {
            return Err(Error::Format(format!(
                "payload is {} bytes, expected {}",
                bytes.len(),
                n * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + 4 * self.data.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let c = TensorContainer::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..5], b"LTSR1");
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..13], &1u32.to_le_bytes());
        assert_eq!(&b[13..17], &2u32.to_le_bytes());
        assert_eq!(b[17], DTYPE_F32);
        assert_eq!(&b[18..22], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 26);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let mut b = TensorContainer::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        b.pop();
        assert!(TensorContainer::read_from(&mut b.as_slice()).is_err());
        b[0] = b'X';
        assert!(TensorContainer::read_from(&mut b.as_slice()).is_err());
        assert!(TensorContainer::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    fn container() -> impl Strategy<Value = TensorContainer> {
        prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n).prop_map(move |data| TensorContainer {
                dims: dims.clone(),
                data,
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(c in container()) {
            let back = TensorContainer::read_from(&mut c.to_bytes().as_slice()).unwrap();
            prop_assert_eq!(&back.dims, &c.dims);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.data), bits(&c.data));
        }
    }
}
