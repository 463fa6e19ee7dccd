//! ORTN tensor container.
//!
//! One record is the magic `ORTN`, a dtype byte (0 = f32, 1 = f64,
//! 2 = u8), an ndim byte, `ndim` little-endian u32 dims and the row-major
//! payload in little-endian order. A file holds one or more records back to
//! back.

use std::io::{Read, Write};
use std::path::Path;

use objtok_core::numcore::Tensor;

use crate::Error;

const MAGIC: &[u8; 4] = b"ORTN";

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self, Error> {
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format("tensor rank or dim too large for ORTN".into()));
        }
        if dims.iter().product::<usize>() != payload.len() {
            return Err(Error::Format(format!(
                "dims {dims:?} do not match {} values",
                payload.len()
            )));
        }
        Ok(Self { dims, payload })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            dims: t.dims().to_vec(),
            payload: Payload::F64(t.data().to_vec()),
        }
    }

    /// f64 tensor; f32 payloads are widened.
    pub fn to_tensor(&self) -> Result<Tensor, Error> {
        let data = match &self.payload {
            Payload::F64(v) => v.clone(),
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::U8(_) => return Err(Error::Format("u8 record is not a float tensor".into())),
        };
        Tensor::new(self.dims.clone(), data).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), Error> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.payload.code(), self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &self.payload {
            Payload::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            Payload::U8(v) => w.write_all(v)?,
        }
        Ok(())
    }

    /// Reads one record, or `None` at a clean end of input.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>, Error> {
        let mut magic = [0u8; 4];
        let got = read_full(r, &mut magic)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 || &magic != MAGIC {
            return Err(Error::Format("missing ORTN magic".into()));
        }
        let mut head = [0u8; 2];
        r.read_exact(&mut head)?;
        let mut dims = Vec::with_capacity(head[1] as usize);
        for _ in 0..head[1] {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            dims.push(u32::from_le_bytes(b) as usize);
        }
        let n: usize = dims.iter().product();
        let payload = match head[0] {
            0 => {
                let mut buf = vec![0u8; n * 4];
                r.read_exact(&mut buf)?;
                Payload::F32(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            1 => {
                let mut buf = vec![0u8; n * 8];
                r.read_exact(&mut buf)?;
                Payload::F64(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            2 => {
                let mut buf = vec![0u8; n];
                r.read_exact(&mut buf)?;
                Payload::U8(buf)
            }
            c => return Err(Error::Format(format!("unknown ORTN dtype code {c}"))),
        };
        Ok(Some(Self { dims, payload }))
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, Error> {
    let mut off = 0;
    while off < buf.len() {
        match r.read(&mut buf[off..])? {
            0 => break,
            n => off += n,
        }
    }
    Ok(off)
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>, Error> {
    let mut out = Vec::new();
    for r in records {
        r.write_to(&mut out)?;
    }
    Ok(out)
}

pub fn decode(mut bytes: &[u8]) -> Result<Vec<Record>, Error> {
    let mut out = Vec::new();
    while let Some(r) = Record::read_from(&mut bytes)? {
        out.push(r);
    }
    Ok(out)
}

pub fn write_file(path: &Path, records: &[Record]) -> Result<(), Error> {
    crate::files::write_bytes(path, &encode(records)?)
}

pub fn read_file(path: &Path) -> Result<Vec<Record>, Error> {
    decode(&crate::files::read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let r = Record::new(vec![2, 3], Payload::F64(vec![0.0; 6])).unwrap();
        let b = encode(&[r]).unwrap();
        assert_eq!(&b[..4], b"ORTN");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 2);
        assert_eq!(&b[6..10], &2u32.to_le_bytes());
        assert_eq!(&b[10..14], &3u32.to_le_bytes());
        assert_eq!(b.len(), 14 + 48);
    }

    #[test]
    fn several_records_round_trip() {
        let recs = vec![
            Record::new(vec![3], Payload::F32(vec![1.5, -2.0, 3.25])).unwrap(),
            Record::new(vec![2, 2], Payload::F64(vec![f64::MIN_POSITIVE, -0.0, 1e300, 7.0])).unwrap(),
            Record::new(vec![1, 2, 3], Payload::U8(vec![0, 1, 2, 253, 254, 255])).unwrap(),
            Record::new(vec![], Payload::F64(vec![4.0])).unwrap(),
        ];
        let back = decode(&encode(&recs).unwrap()).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[1].to_tensor().unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(Record::new(vec![2, 2], Payload::U8(vec![1, 2, 3])).is_err());
        assert!(decode(b"NOPE").is_err());
        let mut b = encode(&[Record::new(vec![4], Payload::F64(vec![1.0; 4])).unwrap()]).unwrap();
        b.truncate(b.len() - 3);
        assert!(decode(&b).is_err());
        let mut b = encode(&[Record::new(vec![1], Payload::U8(vec![9])).unwrap()]).unwrap();
        b[4] = 7;
        assert!(decode(&b).is_err());
    }
}
