//! `VDS1` dataset container.
//!
//! ```text
//! "VDS1" u32 version u32 N u32 dim u32 M u32 M'
//! f64 vectors[N*dim] (row-major)  u32 coarse[N]  u32 fine[N]
//! ```
//! Little-endian throughout. The split tag is not stored.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const VDS_MAGIC: &[u8; 4] = b"VDS1";
pub const VDS_VERSION: u32 = 1;

pub fn vds_bytes(ds: &Dataset) -> Vec<u8> {
    let n = ds.len();
    let mut buf = Vec::with_capacity(24 + n * (ds.vectors.cols() * 8 + 8));
    buf.extend_from_slice(VDS_MAGIC);
    for v in [
        VDS_VERSION,
        n as u32,
        ds.vectors.cols() as u32,
        ds.meta.num_coarse as u32,
        ds.meta.num_fine as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.vectors.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &c in &ds.coarse_labels {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for &f in &ds.fine_labels {
        buf.extend_from_slice(&(f as u32).to_le_bytes());
    }
    buf
}

pub fn write_vds(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, vds_bytes(ds))?;
    Ok(())
}

pub fn read_vds(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    parse_vds(&bytes, split, format!("vds:{}", path.display()))
}

fn parse_vds(bytes: &[u8], split: Split, source: String) -> Result<Dataset> {
    let malformed = |m: &str| Error::MalformedRecord(format!("VDS: {m}"));
    if bytes.len() < 24 || &bytes[..4] != VDS_MAGIC {
        return Err(malformed("bad header"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
    if u32_at(4) != VDS_VERSION as usize {
        return Err(malformed("unsupported version"));
    }
    let (n, dim, m, mf) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20));
    let expected = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(24 + 8 * n))
        .ok_or_else(|| malformed("size overflow"))?;
    if bytes.len() != expected {
        return Err(malformed(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut off = 24;
    let vectors: Vec<f64> = (0..n * dim)
        .map(|i| f64::from_le_bytes(bytes[off + 8 * i..off + 8 * i + 8].try_into().expect("8 bytes")))
        .collect();
    off += 8 * n * dim;
    let coarse: Vec<usize> = (0..n).map(|i| u32_at(off + 4 * i)).collect();
    off += 4 * n;
    let fine: Vec<usize> = (0..n).map(|i| u32_at(off + 4 * i)).collect();
    Dataset::new(Matrix::from_vec(n, dim, vectors)?, coarse, fine, split, source, Some((m, mf)))
        .map_err(|e| malformed(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(
            Matrix::from_rows(&[[1.5, -2.0], [0.25, 1e-300]]).unwrap(),
            vec![0, 1],
            vec![0, 2],
            Split::Test,
            "t",
            Some((2, 3)),
        )
        .unwrap()
    }

    #[test]
    fn layout_and_round_trip() {
        let ds = sample();
        let bytes = vds_bytes(&ds);
        assert_eq!(&bytes[..4], b"VDS1");
        assert_eq!(bytes.len(), 24 + 2 * 2 * 8 + 2 * 4 * 2);
        let back = parse_vds(&bytes, Split::Test, "t".into()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = vds_bytes(&sample());
        assert!(matches!(
            parse_vds(&bytes[..bytes.len() - 1], Split::Test, String::new()),
            Err(Error::MalformedRecord(_))
        ));
    }
}
