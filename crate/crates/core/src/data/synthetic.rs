//! Hierarchical Gaussian mixture with a known coarse/fine class tree.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub m_coarse: usize,
    pub fine_per_coarse: usize,
    pub n_per_fine: usize,
    pub dim: usize,
    /// Approximate pairwise distance between coarse centers.
    pub coarse_sep: f64,
    /// Distance of each fine center from its coarse center.
    pub fine_sep: f64,
    /// Per-coordinate sample noise std.
    pub noise: f64,
    /// Fraction of each fine class assigned to the train split.
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            m_coarse: 4,
            fine_per_coarse: 3,
            n_per_fine: 150,
            dim: 100,
            coarse_sep: 20.0,
            fine_sep: 4.0,
            noise: 1.0,
            train_frac: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if !(self.coarse_sep > self.fine_sep && self.fine_sep > self.noise && self.noise > 0.0) {
            return bad("need coarse_sep > fine_sep > noise > 0");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.m_coarse == 0 || self.fine_per_coarse == 0 || self.n_per_fine == 0 {
            return bad("class and sample counts must be positive");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return bad("train_frac must lie in (0, 1)");
        }
        Ok(())
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates `(train, test)`, split per fine class.
pub fn gen_hierarchical_gaussian(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).expect("positive noise");
    // random unit directions are nearly orthogonal in high dimension, so a
    // radius of sep/√2 puts centers roughly `sep` apart
    let radius = cfg.coarse_sep / std::f64::consts::SQRT_2;
    let n_train = ((cfg.n_per_fine as f64) * cfg.train_frac).round() as usize;
    let n_train = n_train.clamp(1, cfg.n_per_fine.saturating_sub(1).max(1));

    let mut train = (Vec::new(), Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..cfg.m_coarse {
        let coarse_center: Vec<f64> = random_unit(cfg.dim, &mut rng).into_iter().map(|x| x * radius).collect();
        for f in 0..cfg.fine_per_coarse {
            let fine_id = m * cfg.fine_per_coarse + f;
            let offset = random_unit(cfg.dim, &mut rng);
            let center: Vec<f64> = coarse_center
                .iter()
                .zip(&offset)
                .map(|(c, o)| c + cfg.fine_sep * o)
                .collect();
            let mut samples: Vec<Vec<f64>> = (0..cfg.n_per_fine)
                .map(|_| center.iter().map(|c| c + noise.sample(&mut rng)).collect())
                .collect();
            samples.shuffle(&mut rng);
            for (s, x) in samples.into_iter().enumerate() {
                let dst = if s < n_train { &mut train } else { &mut test };
                dst.0.extend(x);
                dst.1.push(m);
                dst.2.push(fine_id);
            }
        }
    }
    let counts = Some((cfg.m_coarse, cfg.m_coarse * cfg.fine_per_coarse));
    let build = |(v, c, f): (Vec<f64>, Vec<usize>, Vec<usize>), split| {
        let n = c.len();
        Dataset::new(Matrix::from_vec(n, cfg.dim, v)?, c, f, split, "synthetic", counts)
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}
