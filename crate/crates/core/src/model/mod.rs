//! Encoder, projector and classifier heads, plus the momentum ("key") copy of
//! encoder+projector.
//!
//! All three heads are small MLPs. The projector output is L2-normalized on
//! the way out, so downstream cosine similarities are plain dot products.
//! The classifier shares the query encoder with the contrastive branch.

mod checkpoint;
mod mlp;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use mlp::{Linear, Mlp, MlpCache};

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, MIN_NORM};

/// Layer widths of the three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub feat_dim: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![256],
            feat_dim: 128,
            proj_hidden: 512,
            proj_dim: 128,
            num_classes,
        }
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.encoder_hidden);
        dims.push(self.feat_dim);
        dims
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub projector: Mlp,
    pub classifier: Linear,
    pub key_encoder: Mlp,
    pub key_projector: Mlp,
}

/// Gradients of the trainable (query-side) parameters.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub encoder: Mlp,
    pub projector: Mlp,
    pub classifier: Linear,
}

impl ModelGrads {
    /// Same order as [`ModelParams::trainable_mut`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.encoder
            .tensors()
            .chain(self.projector.tensors())
            .chain([&self.classifier.weight, &self.classifier.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Cached activations of the L2-normalizing projector.
#[derive(Clone, Debug)]
pub struct ProjCache {
    mlp: MlpCache,
    normalized: Matrix,
    norms: Vec<f64>,
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub features: Matrix,
    pub projections: Matrix,
    pub logits: Option<Matrix>,
    enc_cache: MlpCache,
    proj_cache: ProjCache,
}

impl ModelParams {
    /// He-initialized query heads; key heads start as exact copies.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let encoder = Mlp::he(&cfg.encoder_dims(), rng);
        let projector = Mlp::he(&[cfg.feat_dim, cfg.proj_hidden, cfg.proj_dim], rng);
        let classifier = Linear::he(cfg.feat_dim, cfg.num_classes, rng);
        Self {
            key_encoder: encoder.clone(),
            key_projector: projector.clone(),
            encoder,
            projector,
            classifier,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.encoder.input_dim(),
            encoder_hidden: self.encoder.layers[..self.encoder.layers.len().saturating_sub(1)]
                .iter()
                .map(Linear::output_dim)
                .collect(),
            feat_dim: self.encoder.output_dim(),
            proj_hidden: self.projector.layers.first().map_or(0, Linear::output_dim),
            proj_dim: self.projector.output_dim(),
            num_classes: self.classifier.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encoder_forward(&self, inputs: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.encoder.forward(inputs)
    }

    /// Projects features onto the unit sphere.
    pub fn project(&self, features: &Matrix) -> Result<(Matrix, ProjCache)> {
        let (raw, mlp) = self.projector.forward(features)?;
        let (normalized, norms) = raw.l2_normalize_rows()?;
        Ok((
            normalized.clone(),
            ProjCache {
                mlp,
                normalized,
                norms,
            },
        ))
    }

    pub fn classify(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.classifier.input_dim() {
            return Err(shape_err(format!(
                "classifier expects {}-dim features, got {}",
                self.classifier.input_dim(),
                features.cols()
            )));
        }
        self.classifier.forward(features)
    }

    /// Encoder features without caching.
    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        self.encoder.infer(inputs)
    }

    /// Normalized query-side projections without caching.
    pub fn projections(&self, inputs: &Matrix) -> Result<Matrix> {
        let f = self.encoder.infer(inputs)?;
        Ok(self.projector.infer(&f)?.l2_normalize_rows()?.0)
    }

    /// Normalized projections from the momentum encoder (no gradient).
    pub fn key_projections(&self, inputs: &Matrix) -> Result<Matrix> {
        let f = self.key_encoder.infer(inputs)?;
        Ok(self.key_projector.infer(&f)?.l2_normalize_rows()?.0)
    }

    /// Query-side forward pass keeping the caches needed by [`Self::backward`].
    pub fn forward(&self, inputs: &Matrix, with_logits: bool) -> Result<ForwardPass> {
        let (features, enc_cache) = self.encoder_forward(inputs)?;
        let (projections, proj_cache) = self.project(&features)?;
        let logits = if with_logits {
            Some(self.classify(&features)?)
        } else {
            None
        };
        Ok(ForwardPass {
            features,
            projections,
            logits,
            enc_cache,
            proj_cache,
        })
    }

    /// Gradients of the trainable parameters given upstream gradients wrt the
    /// normalized projections and/or the logits.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_proj: Option<&Matrix>,
        grad_logits: Option<&Matrix>,
    ) -> Result<ModelGrads> {
        let mut grad_feat = Matrix::zeros(pass.features.rows(), pass.features.cols());
        let projector = match grad_proj {
            Some(g) => {
                let graw = normalize_backward(&pass.proj_cache.normalized, &pass.proj_cache.norms, g)?;
                let (pg, gf) = self.projector.backward(&pass.proj_cache.mlp, &graw)?;
                grad_feat.axpy(1.0, &gf)?;
                pg
            }
            None => self.projector.zeros_like(),
        };
        let classifier = match grad_logits {
            Some(g) => {
                let (cg, gf) = self.classifier.backward(&pass.features, g)?;
                grad_feat.axpy(1.0, &gf)?;
                cg
            }
            None => Linear::zeros(self.classifier.input_dim(), self.classifier.output_dim()),
        };
        let (encoder, _) = self.encoder.backward(&pass.enc_cache, &grad_feat)?;
        Ok(ModelGrads {
            encoder,
            projector,
            classifier,
        })
    }

    /// Trainable tensors in a fixed order: encoder, projector, classifier.
    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .tensors_mut()
            .chain(self.projector.tensors_mut())
            .chain([&mut self.classifier.weight, &mut self.classifier.bias])
            .collect()
    }

    pub fn trainable_shapes(&self) -> Vec<(usize, usize)> {
        self.encoder
            .tensors()
            .chain(self.projector.tensors())
            .chain([&self.classifier.weight, &self.classifier.bias])
            .map(Matrix::shape)
            .collect()
    }

    /// `true` for weight matrices, `false` for biases, in trainable order.
    pub fn trainable_is_weight(&self) -> Vec<bool> {
        let n = self.trainable_shapes().len();
        (0..n).map(|i| i % 2 == 0).collect()
    }

    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        momentum_update(&mut self.key_encoder, &self.encoder, m)?;
        momentum_update(&mut self.key_projector, &self.projector, m)
    }

    /// Every tensor (query and key) with its checkpoint name.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        fn push_mlp<'a>(prefix: &str, mlp: &'a Mlp, out: &mut Vec<(String, &'a Matrix)>) {
            for (l, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{l}.weight"), &layer.weight));
                out.push((format!("{prefix}.{l}.bias"), &layer.bias));
            }
        }
        let mut out = Vec::new();
        push_mlp("encoder", &self.encoder, &mut out);
        push_mlp("projector", &self.projector, &mut out);
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        push_mlp("key_encoder", &self.key_encoder, &mut out);
        push_mlp("key_projector", &self.key_projector, &mut out);
        out
    }

    /// Rebuilds parameters from `(name, tensor)` pairs as written by
    /// [`Self::named_tensors`].
    pub fn from_named_tensors(tensors: Vec<(String, Matrix)>) -> Result<Self> {
        use std::collections::BTreeMap;
        let mut by_name: BTreeMap<String, Matrix> = BTreeMap::new();
        for (name, t) in tensors {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::MalformedRecord(format!("duplicate tensor {name}")));
            }
        }
        let mut take_mlp = |prefix: &str| -> Result<Mlp> {
            let mut layers = Vec::new();
            loop {
                let l = layers.len();
                let w = by_name.remove(&format!("{prefix}.{l}.weight"));
                let b = by_name.remove(&format!("{prefix}.{l}.bias"));
                match (w, b) {
                    (Some(weight), Some(bias)) => layers.push(Linear { weight, bias }),
                    (None, None) => break,
                    _ => {
                        return Err(Error::MalformedRecord(format!(
                            "{prefix}.{l} has a weight or bias but not both"
                        )))
                    }
                }
            }
            if layers.is_empty() {
                return Err(Error::MalformedRecord(format!("missing {prefix} layers")));
            }
            Ok(Mlp { layers })
        };
        let encoder = take_mlp("encoder")?;
        let projector = take_mlp("projector")?;
        let key_encoder = take_mlp("key_encoder")?;
        let key_projector = take_mlp("key_projector")?;
        let classifier = match (
            by_name.remove("classifier.weight"),
            by_name.remove("classifier.bias"),
        ) {
            (Some(weight), Some(bias)) => Linear { weight, bias },
            _ => return Err(Error::MalformedRecord("missing classifier".into())),
        };
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::MalformedRecord(format!("unexpected tensor {extra}")));
        }
        let params = Self {
            encoder,
            projector,
            classifier,
            key_encoder,
            key_projector,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks that consecutive layers chain and key copies mirror query heads.
    pub fn validate(&self) -> Result<()> {
        for (name, mlp) in [
            ("encoder", &self.encoder),
            ("projector", &self.projector),
            ("key_encoder", &self.key_encoder),
            ("key_projector", &self.key_projector),
        ] {
            for (l, layer) in mlp.layers.iter().enumerate() {
                if layer.bias.rows() != 1 || layer.bias.cols() != layer.output_dim() {
                    return Err(Error::DimMismatch(format!("{name}.{l} bias shape")));
                }
            }
            for w in mlp.layers.windows(2) {
                if w[0].output_dim() != w[1].input_dim() {
                    return Err(Error::DimMismatch(format!("{name} layers do not chain")));
                }
            }
        }
        if self.projector.input_dim() != self.encoder.output_dim()
            || self.classifier.input_dim() != self.encoder.output_dim()
            || self.classifier.bias.cols() != self.classifier.output_dim()
        {
            return Err(Error::DimMismatch("heads do not match encoder width".into()));
        }
        if !self.key_encoder.same_shape(&self.encoder) || !self.key_projector.same_shape(&self.projector) {
            return Err(Error::DimMismatch("key copies differ from query heads".into()));
        }
        Ok(())
    }
}

/// `key ← m·key + (1 − m)·query`, element-wise.
pub fn momentum_update(key: &mut Mlp, query: &Mlp, m: f64) -> Result<()> {
    if !key.same_shape(query) {
        return Err(shape_err("momentum update between differently shaped networks"));
    }
    for (k, q) in key.tensors_mut().zip(query.tensors()) {
        for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = m * *kv + (1.0 - m) * qv;
        }
    }
    Ok(())
}

/// Backward through `y = x / ‖x‖`: `dx = (dy − y·(y·dy)) / ‖x‖`.
fn normalize_backward(y: &Matrix, norms: &[f64], dy: &Matrix) -> Result<Matrix> {
    if !y.same_shape(dy) {
        return Err(shape_err(format!(
            "projection gradient {:?} vs projections {:?}",
            dy.shape(),
            y.shape()
        )));
    }
    let mut dx = dy.clone();
    for (i, &n) in norms.iter().enumerate() {
        debug_assert!(n >= MIN_NORM);
        let yr = y.row(i);
        let proj: f64 = yr.iter().zip(dy.row(i)).map(|(a, b)| a * b).sum();
        for (d, &yv) in dx.row_mut(i).iter_mut().zip(yr) {
            *d = (*d - yv * proj) / n;
        }
    }
    Ok(dx)
}
