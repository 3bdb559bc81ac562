//! Binary tensor records.
//!
//! Layout, little-endian throughout:
//! magic "FRTN", version u32, rank u32, dims u32 x rank, dtype u8
//! (0 = f64, 1 = f32), then the raw row-major payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"FRTN";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Dtype> {
        match code {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::F32),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Write one tensor record to `w`.
pub fn write_tensor(w: &mut impl Write, t: &Tensor, dtype: Dtype) -> std::io::Result<()> {
    w.write_all(&TENSOR_MAGIC)?;
    write_u32(w, TENSOR_VERSION)?;
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    w.write_all(&[dtype.code()])?;
    match dtype {
        Dtype::F64 => {
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for &x in t.data() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read one tensor record from `r`. f32 payloads are widened to f64.
pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let io_err = |e: std::io::Error| Error::Format(format!("truncated tensor record: {e}"));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {magic:?}, expected {TENSOR_MAGIC:?}"
        )));
    }
    let version = read_u32(r).map_err(io_err)?;
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!(
            "unsupported tensor version {version}"
        )));
    }
    let rank = read_u32(r).map_err(io_err)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r).map_err(io_err)? as usize);
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code).map_err(io_err)?;
    let dtype = Dtype::from_code(code[0])?;

    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        Dtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io_err)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
        Dtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(io_err)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
    }
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f64_bitwise() {
        let t = Tensor::from_vec(&[2, 3], vec![1.5, -2.25, 0.0, 1e-300, 3.7, -0.125]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F64).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn f32_payload_widens() {
        let t = Tensor::from_vec(&[2], vec![1.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F32).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data(), &[1.5, -0.25]);
    }

    #[test]
    fn corrupt_magic_and_truncation_fail_loudly() {
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, Dtype::F64).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor(&mut bad.as_slice()).is_err());

        let truncated = &buf[..buf.len() - 5];
        assert!(read_tensor(&mut &truncated[..]).is_err());
    }
}
