//! Binary weights container.
//!
//! Layout, all little-endian:
//!   magic "NLMW" | format version u32 | entry count u32
//!   per entry: name length u16 | UTF-8 name | rank u8 | extents u64 each |
//!              payload f64 (raw bits)
//!
//! Roundtrips are bit-exact: payloads are moved through `to_bits`/`from_bits`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"NLMW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_entries<'a>(
    path: &Path,
    entries: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CoreError::io(path, e);

    w.write_all(&WEIGHTS_MAGIC).map_err(io)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes()).map_err(io)?;
    let count = u32::try_from(entries.len())
        .map_err(|_| CoreError::contract("save_entries", "too many entries"))?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;

    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| CoreError::contract("save_entries", format!("name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes()).map_err(io)?;
        w.write_all(name_bytes).map_err(io)?;
        let rank = u8::try_from(tensor.shape().len())
            .map_err(|_| CoreError::contract("save_entries", "rank too large"))?;
        w.write_all(&[rank]).map_err(io)?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_bits().to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let what = || format!("weights file {}", path.display());

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if magic != WEIGHTS_MAGIC {
        return Err(CoreError::malformed(what(), format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, path)?;
    if version != WEIGHTS_VERSION {
        return Err(CoreError::malformed(what(), format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r, path)? as usize;

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len_buf = [0u8; 2];
        read_exact(&mut r, &mut len_buf, path)?;
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, path)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| CoreError::malformed(what(), "entry name is not UTF-8"))?;
        let mut rank_buf = [0u8; 1];
        read_exact(&mut r, &mut rank_buf, path)?;
        let rank = rank_buf[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d = [0u8; 8];
            read_exact(&mut r, &mut d, path)?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut v = [0u8; 8];
            read_exact(&mut r, &mut v, path)?;
            data.push(f64::from_bits(u64::from_le_bytes(v)));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CoreError::malformed(what(), format!("entry {name}: {e}")))?;
        out.push((name, tensor));
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => Ok(out),
        Ok(_) => Err(CoreError::malformed(what(), "trailing bytes after last entry")),
        Err(e) => Err(CoreError::io(path, e)),
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CoreError::malformed(format!("weights file {}", path.display()), "truncated")
        } else {
            CoreError::io(path, e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}
