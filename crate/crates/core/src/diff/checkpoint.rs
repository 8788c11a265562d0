//! Binary tensor records.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"SALN"
//! version u16
//! repeated until EOF:
//!   name_len u32, name [u8; name_len] (UTF-8)
//!   rank u32, dims [u64; rank]
//!   payload [f64; product(dims)]
//! ```

use std::io::{self, Read, Write};

use super::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SALN";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_tensor_records<W: Write>(mut w: W, records: &[(&str, &Tensor)]) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_tensor_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let bad = |m: String| Error::Checkpoint(m);
    let io_err = |e: io::Error| Error::Checkpoint(format!("truncated record stream: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v).map_err(io_err)?;
    let version = u16::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    while read_exact_or_eof(&mut r, &mut u32buf).map_err(io_err)? {
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| bad(format!("tensor name: {e}")))?;
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            dims.push(u64::from_le_bytes(u64buf) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let mut buf = Vec::new();
        write_tensor_records(&mut buf, &[("s", &Tensor::scalar(1.5))]).unwrap();
        assert_eq!(&buf[..4], b"SALN");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[1, 0, 0, 0]);
        assert_eq!(buf[10], b's');
        // rank 0, then one f64
        assert_eq!(&buf[11..15], &[0, 0, 0, 0]);
        assert_eq!(buf.len(), 15 + 8);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_tensor_records(&b"NOPE\x01\x00"[..]).is_err());
        let mut buf = Vec::new();
        write_tensor_records(&mut buf, &[("m", &Tensor::zeros(&[2, 2]))]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor_records(&buf[..]).is_err());
    }
}
