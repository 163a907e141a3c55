//! Vector-space stand-ins for image augmentations: random coordinate
//! masking, a global scale jitter and additive Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Default magnitude multiplier of the query (strong) branch.
pub const STRONG_SCALE: f64 = 2.0;

/// Upper bound on the strong branch's masking fraction.
const MAX_MASK_FRAC: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub noise_sigma: f64,
    /// Multiplicative jitter drawn from `U(1 − j, 1 + j)`.
    pub scale_jitter: f64,
    /// Probability of zeroing each coordinate.
    pub mask_frac: f64,
    /// Use larger magnitudes for the query view.
    pub strong: bool,
    /// Multiplier applied to every magnitude of the query view when `strong` is set.
    pub strong_scale: f64,
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            noise_sigma: 0.0,
            scale_jitter: 0.0,
            mask_frac: 0.0,
            strong: false,
            strong_scale: STRONG_SCALE,
        }
    }

    fn strong_branch(&self) -> Self {
        if !self.strong {
            return *self;
        }
        let k = self.strong_scale;
        Self {
            noise_sigma: self.noise_sigma * k,
            scale_jitter: (self.scale_jitter * k).min(1.0),
            mask_frac: (self.mask_frac * k).min(MAX_MASK_FRAC.max(self.mask_frac)),
            strong: false,
            strong_scale: k,
        }
    }

    fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut v = x.to_vec();
        if self.mask_frac > 0.0 {
            for c in v.iter_mut() {
                if rng.random::<f64>() < self.mask_frac {
                    *c = 0.0;
                }
            }
        }
        if self.scale_jitter > 0.0 {
            let s = rng.random_range(1.0 - self.scale_jitter..=1.0 + self.scale_jitter);
            v.iter_mut().for_each(|c| *c *= s);
        }
        if self.noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            v.iter_mut().for_each(|c| *c += n.sample(rng));
        }
        v
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            noise_sigma: 0.5,
            scale_jitter: 0.1,
            mask_frac: 0.1,
            strong: true,
            strong_scale: STRONG_SCALE,
        }
    }
}

/// Returns `(query_view, key_view)`: the query from the strong branch, the
/// key from the weak one.
pub fn augment<R: Rng + ?Sized>(vector: &[f64], policy: &AugmentPolicy, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let query = policy.strong_branch().apply(vector, rng);
    let key = policy.apply(vector, rng);
    (query, key)
}
