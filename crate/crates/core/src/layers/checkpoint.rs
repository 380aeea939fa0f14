//! Network checkpoint files.
//!
//! Little-endian layout: magic `NNCK`, `u32` version (= 1), `u32` tensor
//! count; then per tensor a `u32` name length, the UTF-8 name, `u32` rank,
//! `u32` dims, and the raw 32-bit floats row-major.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NNCK";
const VERSION: u32 = 1;

pub fn save_tensors(path: &Path, tensors: &[(&str, &Tensor<f32>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            msg: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Cursor { inner: BufReader::new(File::open(path)?), offset: 0 };
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:?}, expected NNCK") });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > 4096 {
            return Err(Error::Format {
                offset: r.offset - 4,
                msg: format!("implausible name length {name_len}"),
            });
        }
        let mut name_bytes = vec![0u8; name_len];
        let name_at = r.offset;
        r.read_exact_at(&mut name_bytes, "tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            offset: name_at,
            msg: "tensor name is not UTF-8".into(),
        })?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format {
                offset: r.offset - 4,
                msg: format!("implausible rank {rank} for `{name}`"),
            });
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let len: usize = dims.iter().product();
        if dims.contains(&0) || len > (1 << 28) {
            return Err(Error::Format {
                offset: r.offset,
                msg: format!("implausible dims {dims:?} for `{name}`"),
            });
        }
        let mut data = vec![0f32; len];
        for v in data.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact_at(&mut b, "tensor data")?;
            *v = f32::from_le_bytes(b);
        }
        out.push((name.clone(), Tensor::new(dims, data).map_err(|e| Error::Format {
            offset: r.offset,
            msg: format!("`{name}`: {e}"),
        })?));
    }
    Ok(out)
}
