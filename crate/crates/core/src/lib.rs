//! Contrastive representation learning from coarse labels.
//!
//! A small MLP encoder with an L2-normalized projection head is trained
//! against a momentum-encoder memory bank. The targets are inter-sample
//! relation rows. Self-supervised, supervised-contrastive and cross-entropy
//! baselines (and their Grafit/CoIns mixtures) share the same machinery with
//! the masked soft relations of MaskCon, which restrict a temperature
//! softmax over bank similarities to entries that carry the query's coarse
//! label. Evaluation is Recall@K on held-out fine labels.

pub mod bank;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod relations;
pub mod train;

pub use error::{Error, Result};
