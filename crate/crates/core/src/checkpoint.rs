//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "GDVA"
//! version  u32      currently 1
//! count    u32      number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rank     u32
//!   extents  rank × u64
//!   data     product(extents) × f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GDVA";
pub const VERSION: u32 = 1;

pub fn write_params(mut w: impl Write, params: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn read_params(mut r: impl Read) -> Result<ParamStore> {
    expect_magic(&mut r, MAGIC, VERSION)?;
    let count = read_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save(path: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    let bytes = fs::read(path)?;
    read_params(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new([1, 2], vec![1.0, -2.0]).unwrap());
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"GDVA");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(&buf[16..17], b"w");
        assert_eq!(buf.len(), 17 + 4 + 16 + 16);
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = read_params(&b"NOPE\x01\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    proptest! {
        #[test]
        fn round_trips(values in prop::collection::vec(-1e6f64..1e6, 1..40), split in 1usize..5) {
            let mut p = ParamStore::new();
            let rows = split.min(values.len());
            let cols = values.len() / rows;
            let t = Tensor::new([rows, cols], values[..rows * cols].to_vec()).unwrap();
            p.insert("layer.0.weight", t);
            p.insert("bias", Tensor::new([values.len()], values.clone()).unwrap());
            let mut buf = Vec::new();
            write_params(&mut buf, &p).unwrap();
            prop_assert_eq!(read_params(buf.as_slice()).unwrap(), p);
        }
    }
}
