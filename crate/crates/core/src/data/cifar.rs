//! CIFAR-10/100 binary records and coarse-map files.
//!
//! A record is one label byte (CIFAR-10) or a coarse byte followed by a fine
//! byte (CIFAR-100), then 3072 pixel bytes laid out as 1024 red, 1024 green
//! and 1024 blue values. Pixels are scaled to `[0, 1]` and normalized per
//! channel.
//!
//! Coarse-map lines are `fine_id<TAB>coarse_id`. A coarse id of `-` drops that
//! fine class from the dataset, which is how subsets such as the 8-class toy
//! split are built from CIFAR-10. Retained fine and coarse ids are relabelled
//! to `0..` in ascending order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const PIXELS: usize = 3072;
const CHANNEL: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }
}

/// Fine id → coarse id, or `None` for an excluded fine class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoarseMap {
    pub entries: BTreeMap<usize, Option<usize>>,
}

pub fn parse_coarse_map(text: &str) -> Result<CoarseMap> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::MalformedRecord(format!("coarse map line {}: {raw:?}", lineno + 1));
        let mut parts = line.split('\t').map(str::trim);
        let (Some(f), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let fine: usize = f.parse().map_err(|_| bad())?;
        let coarse = if c == "-" { None } else { Some(c.parse().map_err(|_| bad())?) };
        if entries.insert(fine, coarse).is_some() {
            return Err(bad());
        }
    }
    Ok(CoarseMap { entries })
}

pub fn read_coarse_map(path: impl AsRef<Path>) -> Result<CoarseMap> {
    parse_coarse_map(&fs::read_to_string(path)?)
}

/// Per-channel mean and std of `[0, 1]`-scaled pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn from_pixels(pixels: &Matrix) -> ChannelStats {
        let mut mean = [0.0; 3];
        let mut sq = [0.0; 3];
        for row in pixels.row_iter() {
            for ch in 0..3 {
                for &v in &row[ch * CHANNEL..(ch + 1) * CHANNEL] {
                    mean[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (pixels.rows() * CHANNEL).max(1) as f64;
        let mut std = [1.0; 3];
        for ch in 0..3 {
            mean[ch] /= count;
            let var = (sq[ch] / count - mean[ch] * mean[ch]).max(0.0);
            // a constant channel would divide by zero
            std[ch] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        ChannelStats { mean, std }
    }

    pub fn normalize(&self, pixels: &mut Matrix) {
        for r in 0..pixels.rows() {
            let row = pixels.row_mut(r);
            for ch in 0..3 {
                for v in &mut row[ch * CHANNEL..(ch + 1) * CHANNEL] {
                    *v = (*v - self.mean[ch]) / self.std[ch];
                }
            }
        }
    }
}

/// Loads a CIFAR binary file. Normalization uses `stats` when given (pass the
/// train split's stats when loading the test split), otherwise stats computed
/// from this file. Returns the dataset and the stats that were applied.
pub fn load_cifar_binary(
    path: impl AsRef<Path>,
    variant: CifarVariant,
    coarse_map_path: Option<&Path>,
    split: Split,
    stats: Option<&ChannelStats>,
) -> Result<(Dataset, ChannelStats)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let map = coarse_map_path.map(read_coarse_map).transpose()?;
    let (mut ds, st) = decode_cifar(&bytes, variant, map.as_ref(), split, stats)?;
    ds.meta.source = format!("cifar:{}", path.display());
    Ok((ds, st))
}

pub(crate) fn decode_cifar(
    bytes: &[u8],
    variant: CifarVariant,
    map: Option<&CoarseMap>,
    split: Split,
    stats: Option<&ChannelStats>,
) -> Result<(Dataset, ChannelStats)> {
    let rec = variant.record_len();
    if bytes.is_empty() || !bytes.len().is_multiple_of(rec) {
        return Err(Error::MalformedRecord(format!(
            "{} bytes is not a whole number of {rec}-byte records",
            bytes.len()
        )));
    }
    if variant == CifarVariant::Cifar10 && map.is_none() {
        return Err(Error::IncompleteCoarseMap("CIFAR-10 needs a coarse map".into()));
    }
    let labels_off = variant.label_bytes();
    let fine_of = |r: &[u8]| r[labels_off - 1] as usize;

    if let Some(map) = map {
        let seen: BTreeSet<usize> = bytes.chunks_exact(rec).map(fine_of).collect();
        let missing: Vec<usize> = seen.iter().copied().filter(|f| !map.entries.contains_key(f)).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteCoarseMap(format!("no entry for fine ids {missing:?}")));
        }
    }

    // relabelling tables; identity for native CIFAR-100 labels
    let (fine_ids, coarse_ids): (BTreeMap<usize, usize>, BTreeMap<usize, usize>) = match map {
        Some(map) => {
            let kept: Vec<(usize, usize)> = map.entries.iter().filter_map(|(&f, c)| c.map(|c| (f, c))).collect();
            let coarse: BTreeSet<usize> = kept.iter().map(|&(_, c)| c).collect();
            (
                kept.iter().enumerate().map(|(i, &(f, _))| (f, i)).collect(),
                coarse.into_iter().enumerate().map(|(i, c)| (c, i)).collect(),
            )
        }
        None => ((0..100).map(|i| (i, i)).collect(), (0..20).map(|i| (i, i)).collect()),
    };

    let mut data = Vec::new();
    let mut coarse = Vec::new();
    let mut fine = Vec::new();
    for r in bytes.chunks_exact(rec) {
        let f = fine_of(r);
        let c = match map {
            Some(m) => match m.entries[&f] {
                Some(c) => c,
                None => continue,
            },
            None => r[0] as usize,
        };
        let (Some(&fi), Some(&ci)) = (fine_ids.get(&f), coarse_ids.get(&c)) else {
            return Err(Error::MalformedRecord(format!("label byte out of range: fine {f}, coarse {c}")));
        };
        fine.push(fi);
        coarse.push(ci);
        data.extend(r[labels_off..].iter().map(|&p| p as f64 / 255.0));
    }
    let n = fine.len();
    let mut pixels = Matrix::from_vec(n, PIXELS, data)?;
    let st = stats.copied().unwrap_or_else(|| ChannelStats::from_pixels(&pixels));
    st.normalize(&mut pixels);
    let counts = Some((coarse_ids.len(), fine_ids.len()));
    Ok((Dataset::new(pixels, coarse, fine, split, "cifar", counts)?, st))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record10(label: u8, px: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(px, PIXELS));
        r
    }

    #[test]
    fn parses_map_with_comments_and_exclusions() {
        let m = parse_coarse_map("# header\n0\t1\n1\t-  # dropped\n\n2\t0\n").unwrap();
        assert_eq!(m.entries[&0], Some(1));
        assert_eq!(m.entries[&1], None);
        assert_eq!(m.entries.len(), 3);
        assert!(parse_coarse_map("0 1\n").is_err());
        assert!(parse_coarse_map("0\t1\n0\t2\n").is_err());
    }

    #[test]
    fn cifar10_relabels_and_drops() {
        let mut bytes = Vec::new();
        for (l, p) in [(3u8, 0u8), (7, 255), (5, 10), (3, 20)] {
            bytes.extend(record10(l, p));
        }
        let map = parse_coarse_map("3\t9\n5\t-\n7\t2\n").unwrap();
        let (ds, st) = decode_cifar(&bytes, CifarVariant::Cifar10, Some(&map), Split::Train, None).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.fine_labels, vec![0, 1, 0]);
        assert_eq!(ds.coarse_labels, vec![1, 0, 1]);
        assert_eq!((ds.meta.num_coarse, ds.meta.num_fine), (2, 2));
        let expected_mean = (0.0 + 1.0 + 20.0 / 255.0) / 3.0;
        assert!((st.mean[0] - expected_mean).abs() < 1e-12);
        let col_mean: f64 = (0..3).map(|r| ds.vectors.get(r, 0)).sum::<f64>() / 3.0;
        assert!(col_mean.abs() < 1e-12);
    }

    #[test]
    fn missing_map_entry_is_incomplete() {
        let bytes = [record10(1, 0), record10(4, 0)].concat();
        let map = parse_coarse_map("1\t0\n").unwrap();
        assert!(matches!(
            decode_cifar(&bytes, CifarVariant::Cifar10, Some(&map), Split::Train, None),
            Err(Error::IncompleteCoarseMap(_))
        ));
        assert!(matches!(
            decode_cifar(&bytes, CifarVariant::Cifar10, None, Split::Train, None),
            Err(Error::IncompleteCoarseMap(_))
        ));
    }

    #[test]
    fn cifar100_native_coarse_byte() {
        let mut bytes = Vec::new();
        for (c, f) in [(4u8, 30u8), (19, 99)] {
            bytes.extend([c, f]);
            bytes.extend(std::iter::repeat_n(7u8, PIXELS));
        }
        let (ds, _) = decode_cifar(&bytes, CifarVariant::Cifar100, None, Split::Test, None).unwrap();
        assert_eq!(ds.coarse_labels, vec![4, 19]);
        assert_eq!(ds.fine_labels, vec![30, 99]);
        assert_eq!((ds.meta.num_coarse, ds.meta.num_fine), (20, 100));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let bytes = [record10(1, 0), record10(2, 0)].concat();
        let map = parse_coarse_map("1\t0\n2\t0\n").unwrap();
        let r = decode_cifar(&bytes[..bytes.len() - 5], CifarVariant::Cifar10, Some(&map), Split::Train, None);
        assert!(matches!(r, Err(Error::MalformedRecord(_))));
    }
}
