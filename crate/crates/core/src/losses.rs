//! Training objectives and their analytic gradients.
//!
//! The contrastive loss scores each query projection against
//! `[its own key view, bank_1, …, bank_fill]` at temperature `τ0` and takes
//! the cross-entropy to a row-normalized relation target. Keys, bank entries
//! and targets are constants: gradients flow only into the query projection
//! (or the logits, for cross-entropy).

use std::fmt;
use std::str::FromStr;

use crate::bank::BankSnapshot;
use crate::data::Batch;
use crate::error::{shape_err, Error, Result};
use crate::model::ModelParams;
use crate::numerics::{dot, log_sum_exp, Matrix};
use crate::relations::{
    relations_mask_with_confidence, relations_self, relations_sup, InstanceIds, RelationRows, Temperature,
};

/// Allowed deviation from unit norm for projections entering the loss.
const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient wrt the query projections (contrastive) or logits (CE).
    pub grads: Matrix,
}

/// Mean cross-entropy of `softmax(logits)` against integer labels.
pub fn ce_loss(logits: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    let (b, m) = logits.shape();
    if labels.len() != b {
        return Err(shape_err(format!("{} labels for {b} logit rows", labels.len())));
    }
    let mut grads = Matrix::zeros(b, m);
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::LabelOutOfRange { label: y, classes: m });
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        value -= row[y] - lse;
        let g = grads.row_mut(i);
        for (gv, &l) in g.iter_mut().zip(row) {
            *gv = (l - lse).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok(LossOutput {
        value: value / b.max(1) as f64,
        grads,
    })
}

fn check_unit_rows(m: &Matrix) -> Result<()> {
    for (row, n) in m.row_norms().into_iter().enumerate() {
        if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(Error::NotNormalized { row, norm: n });
        }
    }
    Ok(())
}

/// Log-probabilities `log softmax(d_i / τ0)` for the self+bank layout.
pub struct ContrastLayout<'a> {
    key: &'a Matrix,
    bank: &'a Matrix,
    tau0: f64,
    log_q: Matrix,
}

/// How a relation term is weighted across the batch.
#[derive(Clone, Debug)]
pub enum TermWeight {
    Uniform(f64),
    PerRow(Vec<f64>),
}

impl TermWeight {
    fn at(&self, i: usize) -> f64 {
        match self {
            Self::Uniform(w) => *w,
            Self::PerRow(ws) => ws[i],
        }
    }
}

impl<'a> ContrastLayout<'a> {
    pub fn new(query: &Matrix, key: &'a Matrix, bank: &'a Matrix, tau0: f64) -> Result<Self> {
        if !(tau0 > 0.0 && tau0.is_finite()) {
            return Err(Error::NonPositiveTemperature(tau0));
        }
        let (b, d) = query.shape();
        if key.shape() != (b, d) || (bank.rows() > 0 && bank.cols() != d) {
            return Err(shape_err(format!(
                "query {:?}, key {:?}, bank {:?}",
                query.shape(),
                key.shape(),
                bank.shape()
            )));
        }
        check_unit_rows(query)?;
        check_unit_rows(key)?;
        let fill = bank.rows();
        let bank_sims = if fill == 0 {
            Matrix::zeros(b, 0)
        } else {
            query.matmul_t(bank)?
        };
        let mut log_q = Matrix::zeros(b, 1 + fill);
        for i in 0..b {
            let row = log_q.row_mut(i);
            row[0] = dot(query.row(i), key.row(i)) / tau0;
            for (dst, s) in row[1..].iter_mut().zip(bank_sims.row(i)) {
                *dst = s / tau0;
            }
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(Self { key, bank, tau0, log_q })
    }

    pub fn batch_size(&self) -> usize {
        self.log_q.rows()
    }

    pub fn width(&self) -> usize {
        self.log_q.cols()
    }

    /// Per-row cross-entropies `−Σ_n z̄_n log q_n` against a relation target.
    pub fn row_losses(&self, z: &RelationRows) -> Result<Vec<f64>> {
        self.check_target(z)?;
        let zn = z.row_normalized();
        Ok((0..self.batch_size())
            .map(|i| -dot(zn.row(i), self.log_q.row(i)))
            .collect())
    }

    fn check_target(&self, z: &RelationRows) -> Result<()> {
        if z.rows.shape() != self.log_q.shape() {
            return Err(shape_err(format!(
                "relation rows {:?} for a {:?} similarity layout",
                z.rows.shape(),
                self.log_q.shape()
            )));
        }
        Ok(())
    }

    /// Value and query gradient of `(1/B) Σ_i Σ_t w_t,i · CE(z̄_t,i, q_i)`.
    pub fn loss(&self, terms: &[(TermWeight, &RelationRows)]) -> Result<LossOutput> {
        let (b, width) = self.log_q.shape();
        let mut grad_logits = Matrix::zeros(b, width);
        let mut value = 0.0;
        for (weight, z) in terms {
            self.check_target(z)?;
            let zn = z.row_normalized();
            for i in 0..b {
                let w = weight.at(i);
                if w == 0.0 {
                    continue;
                }
                let (zr, lq) = (zn.row(i), self.log_q.row(i));
                value -= w * dot(zr, lq);
                for ((g, &zv), &l) in grad_logits.row_mut(i).iter_mut().zip(zr).zip(lq) {
                    *g += w * (l.exp() - zv);
                }
            }
        }
        let scale = 1.0 / (b.max(1) as f64);
        grad_logits.scale_in_place(scale / self.tau0);
        // d logit_i0 / d query_i = key_i, d logit_ij / d query_i = bank_j (times 1/τ0)
        let bank_cols = Matrix::from_vec(
            b,
            width - 1,
            grad_logits.row_iter().flat_map(|r| r[1..].to_vec()).collect(),
        )?;
        let mut grads = if self.bank.rows() == 0 {
            Matrix::zeros(b, self.key.cols())
        } else {
            bank_cols.matmul(self.bank)?
        };
        for i in 0..b {
            let g0 = grad_logits.get(i, 0);
            for (g, &k) in grads.row_mut(i).iter_mut().zip(self.key.row(i)) {
                *g += g0 * k;
            }
        }
        Ok(LossOutput {
            value: value * scale,
            grads,
        })
    }
}

/// Contrastive loss of query projections against `[key, bank…]` with target `z`.
pub fn con_loss(
    query_proj: &Matrix,
    key_proj: &Matrix,
    bank_proj: &Matrix,
    z: &RelationRows,
    tau0: f64,
) -> Result<LossOutput> {
    ContrastLayout::new(query_proj, key_proj, bank_proj, tau0)?.loss(&[(TermWeight::Uniform(1.0), z)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    SelfCon,
    SupCon,
    SupCe,
    Grafit,
    CoIns,
    MaskCon,
}

impl ObjectiveKind {
    pub fn uses_logits(self) -> bool {
        matches!(self, Self::SupCe | Self::CoIns)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SelfCon => "selfcon",
            Self::SupCon => "supcon",
            Self::SupCe => "supce",
            Self::Grafit => "grafit",
            Self::CoIns => "coins",
            Self::MaskCon => "maskcon",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "selfcon" => Self::SelfCon,
            "supcon" => Self::SupCon,
            "supce" => Self::SupCe,
            "grafit" => Self::Grafit,
            "coins" => Self::CoIns,
            "maskcon" => Self::MaskCon,
            other => return Err(Error::BadConfig(format!("unknown objective {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Weight of the label-driven term; ignored by SelfCon, SupCon and SupCE.
    pub w: f64,
    /// Relation temperature; MaskCon only.
    pub tau: Temperature,
    /// Temperature of the predicted similarity distribution.
    pub tau0: f64,
    /// Replace `w` by the per-sample confidence `1 − H(z′)/ln K` (MaskCon only).
    pub adaptive_w: bool,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            w: 1.0,
            tau: Temperature::Finite(0.05),
            tau0: 0.1,
            adaptive_w: false,
        }
    }

    pub fn with_w(mut self, w: f64) -> Self {
        self.w = w;
        self
    }

    pub fn with_tau(mut self, tau: Temperature) -> Self {
        self.tau = tau;
        self
    }
}

/// Everything an objective needs for one batch; all but `query_proj` and
/// `logits` are constants.
pub struct ObjectiveInputs<'a> {
    pub query_proj: &'a Matrix,
    pub key_proj: &'a Matrix,
    pub logits: Option<&'a Matrix>,
    pub coarse_labels: &'a [usize],
    pub ids: &'a [usize],
    pub bank: &'a BankSnapshot,
}

#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    pub value: f64,
    pub grad_proj: Option<Matrix>,
    pub grad_logits: Option<Matrix>,
}

/// Evaluates any objective on precomputed projections/logits.
pub fn evaluate_objective(inputs: &ObjectiveInputs<'_>, cfg: &ObjectiveConfig) -> Result<ObjectiveOutput> {
    if !(0.0..=1.0).contains(&cfg.w) {
        return Err(Error::BadConfig(format!("w = {} outside [0, 1]", cfg.w)));
    }
    let b = inputs.query_proj.rows();
    let bank = inputs.bank;
    let fill = bank.len();
    if inputs.coarse_labels.len() != b || inputs.ids.len() != b {
        return Err(shape_err(format!(
            "{} labels / {} ids for a batch of {b}",
            inputs.coarse_labels.len(),
            inputs.ids.len()
        )));
    }
    let ids = InstanceIds {
        batch: inputs.ids,
        bank: &bank.ids,
    };

    // weight of the contrastive self term, the label-driven contrastive term and CE
    let (w_self, w_label, w_ce) = match cfg.kind {
        ObjectiveKind::SelfCon => (1.0, 0.0, 0.0),
        ObjectiveKind::SupCon => (0.0, 1.0, 0.0),
        ObjectiveKind::SupCe => (0.0, 0.0, 1.0),
        ObjectiveKind::Grafit | ObjectiveKind::MaskCon => (1.0 - cfg.w, cfg.w, 0.0),
        ObjectiveKind::CoIns => (1.0 - cfg.w, 0.0, cfg.w),
    };

    let mut value = 0.0;
    let mut grad_proj = None;
    if cfg.kind != ObjectiveKind::SupCe {
        let layout = ContrastLayout::new(inputs.query_proj, inputs.key_proj, &bank.projections, cfg.tau0)?;
        let z_self = relations_self(b, fill);
        let label_rows = match cfg.kind {
            ObjectiveKind::SupCon | ObjectiveKind::Grafit => {
                Some((relations_sup(inputs.coarse_labels, &bank.labels, Some(ids))?, None))
            }
            ObjectiveKind::MaskCon => {
                let (rows, conf) = relations_mask_with_confidence(
                    inputs.key_proj,
                    &bank.projections,
                    &bank.labels,
                    inputs.coarse_labels,
                    Some(ids),
                    cfg.tau,
                )?;
                Some((rows, cfg.adaptive_w.then_some(conf)))
            }
            _ => None,
        };
        let out = match &label_rows {
            Some((rows, Some(conf))) => layout.loss(&[
                (TermWeight::PerRow(conf.clone()), rows),
                (TermWeight::PerRow(conf.iter().map(|c| 1.0 - c).collect()), &z_self),
            ])?,
            Some((rows, None)) => layout.loss(&[
                (TermWeight::Uniform(w_label), rows),
                (TermWeight::Uniform(w_self), &z_self),
            ])?,
            None => layout.loss(&[(TermWeight::Uniform(w_self), &z_self)])?,
        };
        value += out.value;
        grad_proj = Some(out.grads);
    }

    let mut grad_logits = None;
    if cfg.kind.uses_logits() {
        let logits = inputs
            .logits
            .ok_or_else(|| Error::BadConfig(format!("{} needs classifier logits", cfg.kind)))?;
        let mut out = ce_loss(logits, inputs.coarse_labels)?;
        value += w_ce * out.value;
        out.grads.scale_in_place(w_ce);
        grad_logits = Some(out.grads);
    }

    Ok(ObjectiveOutput {
        value,
        grad_proj,
        grad_logits,
    })
}

fn forward_objective(
    batch: &Batch,
    model: &ModelParams,
    bank: &BankSnapshot,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveOutput> {
    let pass = model.forward(&batch.query_views, cfg.kind.uses_logits())?;
    let key_proj = model.key_projections(&batch.key_views)?;
    evaluate_objective(
        &ObjectiveInputs {
            query_proj: &pass.projections,
            key_proj: &key_proj,
            logits: pass.logits.as_ref(),
            coarse_labels: &batch.coarse_labels,
            ids: &batch.ids,
            bank,
        },
        cfg,
    )
}

/// `w·L_maskcon + (1 − w)·L_selfcon` for one batch.
pub fn maskcon_objective(
    batch: &Batch,
    model: &ModelParams,
    bank: &BankSnapshot,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveOutput> {
    if cfg.kind != ObjectiveKind::MaskCon {
        return Err(Error::BadConfig(format!("maskcon_objective called with {}", cfg.kind)));
    }
    forward_objective(batch, model, bank, cfg)
}

/// SelfCon, SupCon, SupCE, Grafit or CoIns for one batch.
pub fn baseline_objective(
    batch: &Batch,
    model: &ModelParams,
    bank: &BankSnapshot,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveOutput> {
    if cfg.kind == ObjectiveKind::MaskCon {
        return Err(Error::BadConfig("baseline_objective called with maskcon".into()));
    }
    forward_objective(batch, model, bank, cfg)
}
