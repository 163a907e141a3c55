//! Retrieval metrics on fine labels, embedding export and the relation
//! distance diagnostic.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::model::ModelParams;
use crate::numerics::{dot, Matrix};
use crate::relations::{dz, relations_mask, relations_sup, InstanceIds, Temperature};

/// Which model output is used as the retrieval embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmbeddingSpace {
    #[default]
    Features,
    Projections,
}

impl fmt::Display for EmbeddingSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Features => "features",
            Self::Projections => "projections",
        })
    }
}

impl FromStr for EmbeddingSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "features" => Ok(Self::Features),
            "projections" => Ok(Self::Projections),
            other => Err(Error::BadConfig(format!("unknown embedding space {other:?}"))),
        }
    }
}

pub fn embed(model: &ModelParams, inputs: &Matrix, space: EmbeddingSpace) -> Result<Matrix> {
    match space {
        EmbeddingSpace::Features => model.features(inputs),
        EmbeddingSpace::Projections => model.projections(inputs),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    pub scores: Vec<f64>,
    pub n_queries: usize,
    pub space: EmbeddingSpace,
}

impl RecallReport {
    pub fn score(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.scores[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,score\n");
        for (k, v) in self.ks.iter().zip(&self.scores) {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

/// Recall@K over all points as queries, each query ranking every other point
/// by cosine similarity (ties to the lower index).
pub fn recall_at_k(embeddings: &Matrix, fine_labels: &[usize], ks: &[usize]) -> Result<RecallReport> {
    let n = embeddings.rows();
    if fine_labels.len() != n {
        return Err(shape_err(format!("{} labels for {n} embeddings", fine_labels.len())));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::BadConfig("ks must be nonempty and positive".into()));
    }
    let kmax = *ks.iter().max().expect("nonempty");
    if n < kmax + 1 {
        return Err(Error::TooFewPoints { n, need: kmax + 1 });
    }
    let (unit, _) = embeddings.l2_normalize_rows()?;

    // Only the rank of the best same-class neighbour matters: the query scores
    // at K exactly when that rank is below K.
    let mut hits = vec![0usize; ks.len()];
    let mut sims = vec![0.0; n];
    for i in 0..n {
        let qi = unit.row(i);
        for (j, s) in sims.iter_mut().enumerate() {
            *s = dot(qi, unit.row(j));
        }
        let best = (0..n)
            .filter(|&j| j != i && fine_labels[j] == fine_labels[i])
            .fold(None, |acc: Option<usize>, j| match acc {
                Some(b) if sims[b] >= sims[j] => Some(b),
                _ => Some(j),
            });
        let Some(best) = best else { continue };
        let rank = (0..n)
            .filter(|&j| j != i && (sims[j] > sims[best] || (sims[j] == sims[best] && j < best)))
            .count();
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank < k {
                *h += 1;
            }
        }
    }
    let report = RecallReport {
        ks: ks.to_vec(),
        scores: hits.iter().map(|&h| h as f64 / n as f64).collect(),
        n_queries: n,
        space: EmbeddingSpace::Features,
    };
    Ok(report)
}

/// Embeds `dataset` and evaluates Recall@K on its fine labels.
pub fn evaluate_recall(
    model: &ModelParams,
    dataset: &Dataset,
    ks: &[usize],
    space: EmbeddingSpace,
) -> Result<RecallReport> {
    if model.input_dim() != dataset.vectors.cols() {
        return Err(Error::DimMismatch(format!(
            "model expects {}-dim inputs, dataset has {}",
            model.input_dim(),
            dataset.vectors.cols()
        )));
    }
    let e = embed(model, &dataset.vectors, space)?;
    let mut r = recall_at_k(&e, &dataset.fine_labels, ks)?;
    r.space = space;
    Ok(r)
}

/// CSV with columns `id,coarse_label,fine_label,e0,…`. Values use the shortest
/// round-trip scientific notation.
pub fn embeddings_csv(embeddings: &Matrix, dataset: &Dataset) -> String {
    let mut s = String::from("id,coarse_label,fine_label");
    for c in 0..embeddings.cols() {
        s.push_str(&format!(",e{c}"));
    }
    s.push('\n');
    for i in 0..embeddings.rows() {
        s.push_str(&format!("{i},{},{}", dataset.coarse_labels[i], dataset.fine_labels[i]));
        for v in embeddings.row(i) {
            s.push_str(&format!(",{v:e}"));
        }
        s.push('\n');
    }
    s
}

pub fn export_embeddings(
    model: &ModelParams,
    dataset: &Dataset,
    path: impl AsRef<Path>,
    space: EmbeddingSpace,
) -> Result<()> {
    let e = if dataset.is_empty() {
        let d = match space {
            EmbeddingSpace::Features => model.config().feat_dim,
            EmbeddingSpace::Projections => model.config().proj_dim,
        };
        Matrix::zeros(0, d)
    } else {
        embed(model, &dataset.vectors, space)?
    };
    let mut f = fs::File::create(path)?;
    f.write_all(embeddings_csv(&e, dataset).as_bytes())?;
    Ok(())
}

/// Parses a CSV written by [`export_embeddings`] back into
/// `(ids, coarse, fine, embeddings)`.
pub fn parse_embeddings_csv(text: &str) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, Matrix)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedRecord("empty embedding CSV".into()))?;
    let d = header.split(',').count().saturating_sub(3);
    let (mut ids, mut coarse, mut fine, mut data) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for line in lines {
        let bad = || Error::MalformedRecord(format!("embedding row {line:?}"));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 3 {
            return Err(bad());
        }
        ids.push(cells[0].parse().map_err(|_| bad())?);
        coarse.push(cells[1].parse().map_err(|_| bad())?);
        fine.push(cells[2].parse().map_err(|_| bad())?);
        for c in &cells[3..] {
            data.push(c.parse::<f64>().map_err(|_| bad())?);
        }
    }
    let n = ids.len();
    Ok((ids, coarse, fine, Matrix::from_vec(n, d, data)?))
}

/// Relation distances of one subsample against the fine-label reference.
#[derive(Clone, Debug, PartialEq)]
pub struct DzReport {
    pub sample_size: usize,
    pub dz_sup: f64,
    /// `(τ, d_z(Z_mask(τ), Ẑ))` in grid order.
    pub dz_mask: Vec<(Temperature, f64)>,
}

impl DzReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,d_z_sup,d_z_mask\n");
        for (t, v) in &self.dz_mask {
            s.push_str(&format!("{t},{},{v}\n", self.dz_sup));
        }
        s
    }
}

/// Draws `sample_size` points, lets them play both batch and bank, and compares
/// coarse-label and masked relations with the fine-label relations, using the
/// key-encoder projections of the raw vectors.
pub fn dz_report(
    model: &ModelParams,
    dataset: &Dataset,
    tau_grid: &[Temperature],
    sample_size: usize,
    seed: u64,
) -> Result<DzReport> {
    if sample_size > dataset.len() {
        return Err(Error::TooFewPoints {
            n: dataset.len(),
            need: sample_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, dataset.len(), sample_size).into_vec();
    idx.sort_unstable();
    let sub = dataset.subset(&idx)?;
    let proj = model.key_projections(&sub.vectors)?;
    let ids: Vec<usize> = (0..sample_size).collect();
    let exclude = Some(InstanceIds { batch: &ids, bank: &ids });
    let z_fine = relations_sup(&sub.fine_labels, &sub.fine_labels, exclude)?;
    let z_sup = relations_sup(&sub.coarse_labels, &sub.coarse_labels, exclude)?;
    let dz_sup = dz(&z_sup, &z_fine)?;
    let dz_mask = tau_grid
        .iter()
        .map(|&t| {
            let z = relations_mask(&proj, &proj, &sub.coarse_labels, &sub.coarse_labels, exclude, t)?;
            Ok((t, dz(&z, &z_fine)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DzReport {
        sample_size,
        dz_sup,
        dz_mask,
    })
}
