//! Datasets, two-view augmentation and batching.
//!
//! Fine labels travel with every dataset and batch but are only read by
//! evaluation code; training losses see coarse labels alone.

mod augment;
mod cifar;
mod container;
mod synthetic;

pub use augment::{augment, AugmentPolicy, STRONG_SCALE};
pub use cifar::{load_cifar_binary, parse_coarse_map, read_coarse_map, ChannelStats, CifarVariant, CoarseMap};
pub use container::{read_vds, vds_bytes, write_vds, VDS_MAGIC, VDS_VERSION};
pub use synthetic::{gen_hierarchical_gaussian, SyntheticConfig};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub n: usize,
    pub input_dim: usize,
    pub num_coarse: usize,
    pub num_fine: usize,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vectors: Matrix,
    pub coarse_labels: Vec<usize>,
    pub fine_labels: Vec<usize>,
    pub split: Split,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Validates alignment and fine→coarse consistency. Class counts default
    /// to `max label + 1` and may be raised with `class_counts`.
    pub fn new(
        vectors: Matrix,
        coarse_labels: Vec<usize>,
        fine_labels: Vec<usize>,
        split: Split,
        source: impl Into<String>,
        class_counts: Option<(usize, usize)>,
    ) -> Result<Self> {
        let n = vectors.rows();
        if coarse_labels.len() != n || fine_labels.len() != n {
            return Err(shape_err(format!(
                "{n} vectors, {} coarse labels, {} fine labels",
                coarse_labels.len(),
                fine_labels.len()
            )));
        }
        let min_coarse = coarse_labels.iter().max().map_or(0, |m| m + 1);
        let min_fine = fine_labels.iter().max().map_or(0, |m| m + 1);
        let (num_coarse, num_fine) = class_counts.unwrap_or((min_coarse, min_fine));
        if num_coarse < min_coarse || num_fine < min_fine {
            return Err(Error::BadConfig(format!(
                "class counts ({num_coarse}, {num_fine}) below observed labels ({min_coarse}, {min_fine})"
            )));
        }
        check_hierarchy(&coarse_labels, &fine_labels)?;
        Ok(Self {
            meta: DatasetMeta {
                n,
                input_dim: vectors.cols(),
                num_coarse,
                num_fine,
                source: source.into(),
            },
            vectors,
            coarse_labels,
            fine_labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    /// Rows `idx` as a new dataset (ids are renumbered).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.vectors.select_rows(idx),
            idx.iter().map(|&i| self.coarse_labels[i]).collect(),
            idx.iter().map(|&i| self.fine_labels[i]).collect(),
            self.split,
            self.meta.source.clone(),
            Some((self.meta.num_coarse, self.meta.num_fine)),
        )
    }
}

/// Rejects any fine label that appears under two coarse labels.
pub fn check_hierarchy(coarse: &[usize], fine: &[usize]) -> Result<()> {
    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    for (&c, &f) in coarse.iter().zip(fine) {
        match parent.insert(f, c) {
            Some(prev) if prev != c => {
                return Err(Error::BadConfig(format!(
                    "fine class {f} appears under coarse classes {prev} and {c}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// One minibatch of paired views. Rows of every field are aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub query_views: Matrix,
    pub key_views: Matrix,
    pub coarse_labels: Vec<usize>,
    /// Evaluation/diagnostics only.
    pub fine_labels: Vec<usize>,
    /// Row indices into the source dataset.
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Iterator over one epoch: a seeded permutation chunked into batches, the
/// last (possibly short) batch included.
pub struct EpochBatches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    policy: AugmentPolicy,
    rng: ChaCha8Rng,
}

impl Iterator for EpochBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let ids: Vec<usize> = self.order[self.pos..end].to_vec();
        self.pos = end;
        let dim = self.dataset.vectors.cols();
        let mut q = Vec::with_capacity(ids.len() * dim);
        let mut k = Vec::with_capacity(ids.len() * dim);
        for &i in &ids {
            let (qv, kv) = augment(self.dataset.vectors.row(i), &self.policy, &mut self.rng);
            q.extend(qv);
            k.extend(kv);
        }
        let b = ids.len();
        Some(Batch {
            query_views: Matrix::from_vec(b, dim, q).expect("sized buffer"),
            key_views: Matrix::from_vec(b, dim, k).expect("sized buffer"),
            coarse_labels: ids.iter().map(|&i| self.dataset.coarse_labels[i]).collect(),
            fine_labels: ids.iter().map(|&i| self.dataset.fine_labels[i]).collect(),
            ids,
        })
    }
}

pub fn batches<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<EpochBatches<'a>> {
    if batch_size == 0 {
        return Err(Error::BadConfig("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    Ok(EpochBatches {
        dataset,
        order,
        pos: 0,
        batch_size,
        policy: *policy,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let vectors = Matrix::from_vec(n, 2, (0..2 * n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(
            vectors,
            (0..n).map(|i| i % 2).collect(),
            (0..n).map(|i| i % 4).collect(),
            Split::Train,
            "toy",
            None,
        )
        .unwrap()
    }

    #[test]
    fn chunking_keeps_short_tail() {
        let ds = toy(10);
        let sizes: Vec<usize> = batches(&ds, 4, &AugmentPolicy::identity(), 1).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn epoch_is_a_permutation() {
        let ds = toy(37);
        let mut ids: Vec<usize> = batches(&ds, 8, &AugmentPolicy::identity(), 5).unwrap().flat_map(|b| b.ids).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn batches_are_deterministic_and_aligned() {
        let ds = toy(20);
        let policy = AugmentPolicy { noise_sigma: 0.3, scale_jitter: 0.1, mask_frac: 0.2, strong: true, strong_scale: 2.0 };
        let a: Vec<Batch> = batches(&ds, 6, &policy, 9).unwrap().collect();
        let b: Vec<Batch> = batches(&ds, 6, &policy, 9).unwrap().collect();
        assert_eq!(a, b);
        for batch in &a {
            for (r, &id) in batch.ids.iter().enumerate() {
                assert_eq!(batch.coarse_labels[r], ds.coarse_labels[id]);
                assert_eq!(batch.fine_labels[r], ds.fine_labels[id]);
            }
        }
        let c: Vec<Batch> = batches(&ds, 6, &policy, 10).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batches(&toy(3), 0, &AugmentPolicy::identity(), 0).is_err());
    }

    #[test]
    fn inconsistent_hierarchy_rejected() {
        let err = Dataset::new(Matrix::zeros(2, 1), vec![0, 1], vec![3, 3], Split::Train, "bad", None);
        assert!(matches!(err, Err(Error::BadConfig(_))));
    }
}
