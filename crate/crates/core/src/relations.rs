//! Target relation rows over `{key-view self} ∪ {bank entries}`.
//!
//! Column 0 of every row is the sample's own key view and is always 1.
//! Columns `1..=fill` line up with a bank snapshot (oldest first).
//!
//! * self relations: only the key view is positive.
//! * supervised relations: every bank entry sharing the coarse label is
//!   positive with weight 1.
//! * masked relations: a temperature softmax over the key projection's
//!   similarities to same-coarse-label bank entries, rescaled so that the
//!   best neighbour gets weight 1. Entries with another coarse label are 0.
//!
//! Bank entries that are stale copies of the query sample (same dataset id)
//! are excluded from both the supervised and masked relations when ids are
//! supplied.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{norm, Matrix};

/// Relation temperature, including the two symbolic limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Temperature {
    /// Limit τ → 0⁺: one-hot on the most similar unmasked entry.
    Zero,
    Finite(f64),
    /// Limit τ → ∞: uniform weight on every unmasked entry.
    Infinity,
}

impl Temperature {
    pub fn finite(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self::Finite(tau))
        } else {
            Err(Error::NonPositiveTemperature(tau))
        }
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "0"),
            Self::Finite(t) => write!(f, "{t}"),
            Self::Infinity => write!(f, "inf"),
        }
    }
}

impl FromStr for Temperature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => return Ok(Self::Infinity),
            _ => {}
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::BadConfig(format!("cannot parse temperature {s:?}")))?;
        if v == 0.0 {
            Ok(Self::Zero)
        } else if v == f64::INFINITY {
            Ok(Self::Infinity)
        } else {
            Self::finite(v).map_err(|_| Error::BadConfig(format!("temperature {s} must be > 0")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationKind {
    SelfCon,
    Sup,
    Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationRows {
    /// `B × (1 + fill)`.
    pub rows: Matrix,
    pub kind: RelationKind,
    /// Set for [`RelationKind::Mask`] only.
    pub tau: Option<Temperature>,
}

impl RelationRows {
    pub fn batch_size(&self) -> usize {
        self.rows.rows()
    }

    /// Rows scaled to sum to 1 (all-zero rows stay zero).
    pub fn row_normalized(&self) -> Matrix {
        normalize_rows(&self.rows)
    }
}

/// Dataset ids used to skip bank copies of the query sample.
#[derive(Clone, Copy, Debug)]
pub struct InstanceIds<'a> {
    pub batch: &'a [usize],
    pub bank: &'a [usize],
}

fn normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

fn check_ids(ids: Option<InstanceIds<'_>>, batch: usize, fill: usize) -> Result<()> {
    if let Some(ids) = ids {
        if ids.batch.len() != batch || ids.bank.len() != fill {
            return Err(shape_err(format!(
                "{} batch ids / {} bank ids for a {batch}x{fill} relation",
                ids.batch.len(),
                ids.bank.len()
            )));
        }
    }
    Ok(())
}

#[inline]
fn same_instance(ids: Option<InstanceIds<'_>>, i: usize, j: usize) -> bool {
    ids.is_some_and(|ids| ids.batch[i] == ids.bank[j])
}

/// Each row is `[1, 0, …, 0]`.
pub fn relations_self(batch_size: usize, fill: usize) -> RelationRows {
    let mut rows = Matrix::zeros(batch_size, 1 + fill);
    for i in 0..batch_size {
        rows.set(i, 0, 1.0);
    }
    RelationRows {
        rows,
        kind: RelationKind::SelfCon,
        tau: None,
    }
}

/// Indicator of equal labels against the bank, plus the self slot.
pub fn relations_sup(
    batch_labels: &[usize],
    bank_labels: &[usize],
    exclude: Option<InstanceIds<'_>>,
) -> Result<RelationRows> {
    let (b, fill) = (batch_labels.len(), bank_labels.len());
    check_ids(exclude, b, fill)?;
    let mut rows = Matrix::zeros(b, 1 + fill);
    for (i, &yi) in batch_labels.iter().enumerate() {
        let row = rows.row_mut(i);
        row[0] = 1.0;
        for (j, &yj) in bank_labels.iter().enumerate() {
            if yj == yi && !same_instance(exclude, i, j) {
                row[1 + j] = 1.0;
            }
        }
    }
    Ok(RelationRows {
        rows,
        kind: RelationKind::Sup,
        tau: None,
    })
}

/// Masked soft relations plus, per row, the confidence weight
/// `1 − H(z′)/ln K` of the pre-rescale masked softmax `z′` over its `K`
/// unmasked entries (1 when `K = 1`, 0 when `K = 0`).
pub fn relations_mask_with_confidence(
    key_projections: &Matrix,
    bank_projections: &Matrix,
    bank_labels: &[usize],
    batch_labels: &[usize],
    exclude: Option<InstanceIds<'_>>,
    tau: Temperature,
) -> Result<(RelationRows, Vec<f64>)> {
    let (b, fill) = (key_projections.rows(), bank_projections.rows());
    if batch_labels.len() != b || bank_labels.len() != fill {
        return Err(shape_err(format!(
            "{} batch labels for {b} keys, {} bank labels for {fill} entries",
            batch_labels.len(),
            bank_labels.len()
        )));
    }
    if let Temperature::Finite(t) = tau {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveTemperature(t));
        }
    }
    check_ids(exclude, b, fill)?;
    let sims = if fill == 0 {
        Matrix::zeros(b, 0)
    } else {
        key_projections.matmul_t(bank_projections)?
    };

    let mut rows = Matrix::zeros(b, 1 + fill);
    let mut confidence = vec![0.0; b];
    let mut unmasked: Vec<usize> = Vec::with_capacity(fill);
    let mut soft: Vec<f64> = Vec::with_capacity(fill);
    for i in 0..b {
        let d = sims.row(i);
        unmasked.clear();
        for (j, &yj) in bank_labels.iter().enumerate() {
            if d[j].is_nan() {
                return Err(Error::NonFiniteSimilarity { row: i, col: j });
            }
            if yj == batch_labels[i] && !same_instance(exclude, i, j) {
                unmasked.push(j);
            }
        }
        let row = rows.row_mut(i);
        row[0] = 1.0;
        let k = unmasked.len();
        if k == 0 {
            continue;
        }
        match tau {
            Temperature::Infinity => {
                for &j in &unmasked {
                    row[1 + j] = 1.0;
                }
                confidence[i] = if k == 1 { 1.0 } else { 0.0 };
            }
            Temperature::Zero => {
                // first maximum wins, i.e. the lowest bank index on ties
                let mut best = unmasked[0];
                for &j in &unmasked[1..] {
                    if d[j] > d[best] {
                        best = j;
                    }
                }
                row[1 + best] = 1.0;
                confidence[i] = 1.0;
            }
            Temperature::Finite(t) => {
                let max = unmasked.iter().map(|&j| d[j]).fold(f64::NEG_INFINITY, f64::max);
                soft.clear();
                soft.extend(unmasked.iter().map(|&j| ((d[j] - max) / t).exp()));
                let sum: f64 = soft.iter().sum();
                soft.iter_mut().for_each(|v| *v /= sum);
                let peak = soft.iter().copied().fold(0.0, f64::max);
                for (&j, &z) in unmasked.iter().zip(&soft) {
                    row[1 + j] = z / peak;
                }
                confidence[i] = if k == 1 {
                    1.0
                } else {
                    let h: f64 = soft.iter().filter(|&&z| z > 0.0).map(|&z| -z * z.ln()).sum();
                    (1.0 - h / (k as f64).ln()).clamp(0.0, 1.0)
                };
            }
        }
    }
    Ok((
        RelationRows {
            rows,
            kind: RelationKind::Mask,
            tau: Some(tau),
        },
        confidence,
    ))
}

/// Masked soft relations of the key projections against the bank.
pub fn relations_mask(
    key_projections: &Matrix,
    bank_projections: &Matrix,
    bank_labels: &[usize],
    batch_labels: &[usize],
    exclude: Option<InstanceIds<'_>>,
    tau: Temperature,
) -> Result<RelationRows> {
    relations_mask_with_confidence(key_projections, bank_projections, bank_labels, batch_labels, exclude, tau)
        .map(|(rows, _)| rows)
}

/// Mean Euclidean distance between row-normalized relation rows.
pub fn dz(z: &RelationRows, z_ref: &RelationRows) -> Result<f64> {
    dz_matrix(&z.rows, &z_ref.rows)
}

pub(crate) fn dz_matrix(z: &Matrix, z_ref: &Matrix) -> Result<f64> {
    if !z.same_shape(z_ref) {
        return Err(shape_err(format!(
            "d_z between {:?} and {:?}",
            z.shape(),
            z_ref.shape()
        )));
    }
    if z.rows() == 0 {
        return Ok(0.0);
    }
    let (a, b) = (normalize_rows(z), normalize_rows(z_ref));
    let total: f64 = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| {
            let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            norm(&diff)
        })
        .sum();
    Ok(total / z.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit vectors in the plane whose dot product with `[1, 0]` equals `cos`.
    fn keyed(sims: &[f64]) -> (Matrix, Matrix) {
        let key = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let bank = Matrix::from_rows(&sims.iter().map(|&c| [c, (1.0 - c * c).sqrt()]).collect::<Vec<_>>()).unwrap();
        (key, bank)
    }

    #[test]
    fn self_relations() {
        let r = relations_self(2, 3);
        assert_eq!(r.rows, Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]).unwrap());
        let r = relations_self(4, 0);
        assert_eq!(r.rows, Matrix::filled(4, 1, 1.0));
    }

    #[test]
    fn sup_relations() {
        let r = relations_sup(&[0], &[0, 1, 0], None).unwrap();
        assert_eq!(r.rows.data(), &[1.0, 1.0, 0.0, 1.0]);
        let r = relations_sup(&[2], &[0, 1, 0], None).unwrap();
        assert_eq!(r.rows.data(), &[1.0, 0.0, 0.0, 0.0]);
        let ids = InstanceIds { batch: &[7], bank: &[7, 3, 4] };
        let r = relations_sup(&[0], &[0, 1, 0], Some(ids)).unwrap();
        assert_eq!(r.rows.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn mask_example_values() {
        let (key, bank) = keyed(&[0.8, 0.2, 0.9]);
        let r = relations_mask(&key, &bank, &[0, 0, 1], &[0], None, Temperature::Finite(0.1)).unwrap();
        let row = r.rows.row(0);
        assert_eq!(row[0], 1.0);
        assert_eq!(row[1], 1.0);
        assert!((row[2] - 0.0024787521766663585).abs() < 1e-9);
        assert_eq!(row[3], 0.0);

        let r = relations_mask(&key, &bank, &[0, 0, 1], &[0], None, Temperature::Infinity).unwrap();
        assert_eq!(r.rows.row(0), &[1.0, 1.0, 1.0, 0.0]);
        let r = relations_mask(&key, &bank, &[0, 0, 1], &[0], None, Temperature::Zero).unwrap();
        assert_eq!(r.rows.row(0), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_temperature_ties_pick_lowest_index() {
        let (key, bank) = keyed(&[0.3, 0.7, 0.7, 0.1]);
        let r = relations_mask(&key, &bank, &[0; 4], &[0], None, Temperature::Zero).unwrap();
        assert_eq!(r.rows.row(0), &[1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_mask_falls_back_to_self() {
        let (key, bank) = keyed(&[0.3, 0.7]);
        for tau in [Temperature::Zero, Temperature::Finite(0.05), Temperature::Infinity] {
            let (r, c) = relations_mask_with_confidence(&key, &bank, &[1, 1], &[0], None, tau).unwrap();
            assert_eq!(r.rows.row(0), &[1.0, 0.0, 0.0]);
            assert_eq!(c, vec![0.0]);
        }
    }

    #[test]
    fn same_id_entries_are_excluded() {
        let (key, bank) = keyed(&[0.99, 0.5]);
        let ids = InstanceIds { batch: &[4], bank: &[4, 5] };
        let r = relations_mask(&key, &bank, &[0, 0], &[0], Some(ids), Temperature::Finite(0.1)).unwrap();
        assert_eq!(r.rows.row(0), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn nan_similarity_is_reported() {
        let key = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        let bank = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            relations_mask(&key, &bank, &[0], &[0], None, Temperature::Finite(0.1)),
            Err(Error::NonFiniteSimilarity { row: 0, col: 0 })
        ));
    }

    #[test]
    fn confidence_weights() {
        let (key, bank) = keyed(&[0.5, 0.5, 0.5]);
        let (_, c) = relations_mask_with_confidence(&key, &bank, &[0; 3], &[0], None, Temperature::Finite(0.1)).unwrap();
        assert!(c[0].abs() < 1e-12);
        let (key, bank) = keyed(&[0.9, -0.9]);
        let (_, c) = relations_mask_with_confidence(&key, &bank, &[0; 2], &[0], None, Temperature::Finite(0.01)).unwrap();
        assert!(c[0] > 0.99);
    }

    #[test]
    fn temperature_parsing() {
        assert_eq!("0".parse::<Temperature>().unwrap(), Temperature::Zero);
        assert_eq!("inf".parse::<Temperature>().unwrap(), Temperature::Infinity);
        assert_eq!("0.05".parse::<Temperature>().unwrap(), Temperature::Finite(0.05));
        assert!("-1".parse::<Temperature>().is_err());
        assert!("abc".parse::<Temperature>().is_err());
        for t in [Temperature::Zero, Temperature::Finite(0.05), Temperature::Infinity] {
            assert_eq!(t.to_string().parse::<Temperature>().unwrap(), t);
        }
    }

    #[test]
    fn dz_examples() {
        let a = RelationRows { rows: Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), kind: RelationKind::Sup, tau: None };
        let b = RelationRows { rows: Matrix::from_rows(&[[0.0, 1.0]]).unwrap(), kind: RelationKind::Sup, tau: None };
        assert_eq!(dz(&a, &a).unwrap(), 0.0);
        assert!((dz(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let c = relations_self(2, 1);
        assert!(dz(&a, &c).is_err());
    }
}
