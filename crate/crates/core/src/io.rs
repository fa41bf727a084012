//! Portable tensor files and named-tensor bundles.
//!
//! A record is `b"GPCN"`, a version byte (1), a dtype byte (0 = f64), an ndim
//! byte, `ndim` little-endian u64 extents and then the little-endian payload.
//! A bundle concatenates records into one file and lists them in a TSV
//! manifest of `name, offset, shape, adler32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GPCN";
const VERSION: u8 = 1;
const DTYPE_F64: u8 = 0;

pub fn adler32(bytes: &[u8]) -> u32 {
    adler2::adler32_slice(bytes)
}

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.ndim()).map_err(|_| Error::Format(format!("too many axes: {}", t.ndim())))?;
    let mut out = Vec::with_capacity(7 + 8 * t.ndim() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F64, ndim]);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated tensor record: wanted {n} bytes, {} left", bytes.len())));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Decodes one record from the front of `bytes`, advancing the slice.
pub fn decode_tensor(bytes: &mut &[u8]) -> Result<Tensor> {
    if take(bytes, 4)? != MAGIC {
        return Err(Error::Format("bad magic, expected GPCN".into()));
    }
    let head = take(bytes, 3)?;
    if head[0] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[0])));
    }
    if head[1] != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype {}", head[1])));
    }
    let mut shape = Vec::with_capacity(head[2] as usize);
    for _ in 0..head[2] {
        let raw: [u8; 8] = take(bytes, 8)?.try_into().expect("8 bytes");
        shape.push(usize::try_from(u64::from_le_bytes(raw)).map_err(|_| Error::Format("extent overflow".into()))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::Format("extent product overflow".into()))?;
    let payload = take(bytes, n.checked_mul(8).ok_or_else(|| Error::Format("payload overflow".into()))?)?;
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut slice = bytes.as_slice();
    let t = decode_tensor(&mut slice)?;
    if !slice.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes in {}", slice.len(), path.display())));
    }
    Ok(t)
}

pub const BUNDLE_DATA: &str = "tensors.gpcn";
pub const BUNDLE_MANIFEST: &str = "manifest.tsv";

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Writes named tensors into `dir` as one record file plus manifest.
pub fn write_bundle(dir: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut data = Vec::new();
    let mut manifest = String::from("name\toffset\tshape\tadler32\n");
    for (name, t) in tensors {
        if name.contains(['\t', '\n']) {
            return Err(Error::Validation(format!("tensor name {name:?} contains a tab or newline")));
        }
        let rec = encode_tensor(t)?;
        manifest.push_str(&format!("{name}\t{}\t{}\t{:08x}\n", data.len(), shape_str(t.shape()), adler32(&rec)));
        data.extend_from_slice(&rec);
    }
    fs::File::create(dir.join(BUNDLE_DATA))?.write_all(&data)?;
    fs::write(dir.join(BUNDLE_MANIFEST), manifest)?;
    Ok(())
}

/// Reads a bundle, verifying every record against its manifest entry.
pub fn read_bundle(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let data = fs::read(dir.join(BUNDLE_DATA))?;
    let manifest = fs::read_to_string(dir.join(BUNDLE_MANIFEST))?;
    let mut out = Vec::new();
    for (lineno, line) in manifest.lines().enumerate().skip(1) {
        let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", lineno + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [name, offset, shape, sum] = cols[..] else {
            return Err(bad("expected 4 tab-separated columns"));
        };
        let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
        let mut slice = data.get(offset..).ok_or_else(|| bad("offset past end of data"))?;
        let before = slice.len();
        let t = decode_tensor(&mut slice)?;
        let rec = &data[offset..offset + (before - slice.len())];
        if format!("{:08x}", adler32(rec)) != sum {
            return Err(bad(&format!("checksum mismatch for {name}")));
        }
        if shape_str(t.shape()) != shape {
            return Err(bad(&format!("shape mismatch for {name}")));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}
