//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use maskcon::bank::BankSnapshot;
use maskcon::losses::{evaluate_objective, ObjectiveConfig, ObjectiveInputs};
use maskcon::model::{ModelConfig, ModelParams};
use maskcon::numerics::{finite_diff_grad, relative_error, Matrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    gaussian_matrix(rows, cols, rng).l2_normalize_rows().unwrap().0
}

/// A random batch/bank state for objective-level checks.
pub struct State {
    pub model: ModelParams,
    pub query_inputs: Matrix,
    pub key_proj: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
    pub bank: BankSnapshot,
}

impl State {
    /// Dims at most `max_dim`, batch at most `max_b`, bank fill at most `max_fill`.
    pub fn random(rng: &mut ChaCha8Rng, max_dim: usize, max_b: usize, max_fill: usize) -> State {
        let d = |rng: &mut ChaCha8Rng| rng.random_range(2..=max_dim);
        let classes = rng.random_range(1..=4);
        let cfg = ModelConfig {
            input_dim: d(rng),
            encoder_hidden: vec![d(rng)],
            feat_dim: d(rng),
            proj_hidden: d(rng),
            proj_dim: d(rng),
            num_classes: classes,
        };
        let mut model = ModelParams::init(&cfg, rng);
        // small random biases so no parameter sits at a special value
        for t in model.trainable_mut() {
            if t.rows() == 1 {
                for v in t.data_mut() {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        let b = rng.random_range(1..=max_b);
        let fill = rng.random_range(0..=max_fill);
        let query_inputs = gaussian_matrix(b, cfg.input_dim, rng);
        // key projections are constants of the objective
        let key_proj = unit_rows(b, cfg.proj_dim, rng);
        let labels = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let ids: Vec<usize> = (0..b).map(|i| i * 3).collect();
        let bank = BankSnapshot {
            projections: unit_rows(fill, cfg.proj_dim, rng),
            labels: (0..fill).map(|_| rng.random_range(0..classes)).collect(),
            // overlaps the batch ids so self-exclusion is exercised
            ids: (0..fill).map(|_| rng.random_range(0..3 * b)).collect(),
        };
        State {
            model,
            query_inputs,
            key_proj,
            labels,
            ids,
            bank,
        }
    }

    pub fn value(&self, model: &ModelParams, cfg: &ObjectiveConfig) -> f64 {
        let pass = model.forward(&self.query_inputs, cfg.kind.uses_logits()).unwrap();
        evaluate_objective(&self.inputs(&pass.projections, pass.logits.as_ref()), cfg)
            .unwrap()
            .value
    }

    pub fn inputs<'a>(&'a self, proj: &'a Matrix, logits: Option<&'a Matrix>) -> ObjectiveInputs<'a> {
        ObjectiveInputs {
            query_proj: proj,
            key_proj: &self.key_proj,
            logits,
            coarse_labels: &self.labels,
            ids: &self.ids,
            bank: &self.bank,
        }
    }

    /// Relative error between backprop and central differences over every
    /// trainable parameter.
    pub fn gradient_error(&self, cfg: &ObjectiveConfig) -> f64 {
        let pass = self.model.forward(&self.query_inputs, cfg.kind.uses_logits()).unwrap();
        let out = evaluate_objective(&self.inputs(&pass.projections, pass.logits.as_ref()), cfg).unwrap();
        let grads = self
            .model
            .backward(&pass, out.grad_proj.as_ref(), out.grad_logits.as_ref())
            .unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
        let flat = flatten(&self.model);
        let numeric = finite_diff_grad(
            |p| {
                let mut m = self.model.clone();
                unflatten(&mut m, p);
                self.value(&m, cfg)
            },
            &flat,
            1e-6,
        );
        relative_error(&analytic, &numeric)
    }
}

pub fn flatten(model: &ModelParams) -> Vec<f64> {
    let mut m = model.clone();
    m.trainable_mut().iter().flat_map(|t| t.data().to_vec()).collect()
}

pub fn unflatten(model: &mut ModelParams, flat: &[f64]) {
    let mut off = 0;
    for t in model.trainable_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Brute-force Recall@K: sort every other point by descending cosine
/// similarity (lower index first on ties) and look for a matching label in
/// the first K.
pub fn recall_oracle(emb: &Matrix, labels: &[usize], k: usize) -> f64 {
    let n = emb.rows();
    let cos = |a: &[f64], b: &[f64]| {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        ab / (aa.sqrt() * bb.sqrt())
    };
    let mut hits = 0;
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (cos(emb.row(i), emb.row(j)), j)).collect();
        others.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        if others.iter().take(k).any(|&(_, j)| labels[j] == labels[i]) {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Mean Euclidean distance between rows after scaling each to sum 1.
pub fn dz_oracle(a: &Matrix, b: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let sa: f64 = a.row(i).iter().sum();
        let sb: f64 = b.row(i).iter().sum();
        let mut sq = 0.0;
        for j in 0..a.cols() {
            let x = if sa > 0.0 { a.get(i, j) / sa } else { 0.0 };
            let y = if sb > 0.0 { b.get(i, j) / sb } else { 0.0 };
            sq += (x - y) * (x - y);
        }
        total += sq.sqrt();
    }
    total / a.rows() as f64
}

/// Largest absolute difference among the objective identities that hold
/// exactly in theory: MaskCon at τ = ∞ against Grafit, Grafit(1) = SupCon,
/// CoIns(1) = SupCE and Grafit(0) = CoIns(0) = SelfCon.
pub fn degeneracy_gap(state: &State, w: f64) -> f64 {
    use maskcon::losses::ObjectiveKind as K;
    use maskcon::relations::Temperature;
    let v = |kind: K, w: f64, tau: Temperature| {
        state.value(&state.model, &ObjectiveConfig::new(kind).with_w(w).with_tau(tau))
    };
    let inf = Temperature::Infinity;
    let pairs = [
        (v(K::MaskCon, w, inf), v(K::Grafit, w, inf)),
        (v(K::Grafit, 1.0, inf), v(K::SupCon, 1.0, inf)),
        (v(K::CoIns, 1.0, inf), v(K::SupCe, 1.0, inf)),
        (v(K::Grafit, 0.0, inf), v(K::SelfCon, 1.0, inf)),
        (v(K::CoIns, 0.0, inf), v(K::SelfCon, 1.0, inf)),
    ];
    pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Reference FIFO: a deque trimmed to `capacity` after every push.
pub fn deque_simulation(capacity: usize, pushes: &[Vec<(Vec<f64>, usize, usize)>]) -> Vec<(Vec<f64>, usize, usize)> {
    let mut q = std::collections::VecDeque::new();
    for batch in pushes {
        for e in batch {
            q.push_back(e.clone());
            if q.len() > capacity {
                q.pop_front();
            }
        }
    }
    q.into_iter().collect()
}
