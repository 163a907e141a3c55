//! Training runs, evaluation of saved checkpoints and `(w, τ)` sweeps.

mod config;
mod metrics;

pub use config::{DataSource, RunConfig};
pub use metrics::{metrics_csv, parse_metrics_csv, MetricsRow, METRICS_HEADER, METRIC_KS};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bank::MemoryBank;
use crate::data::{batches, gen_hierarchical_gaussian, load_cifar_binary, read_vds, write_vds, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{dz_report, evaluate_recall, DzReport, EmbeddingSpace, RecallReport};
use crate::losses::{evaluate_objective, ObjectiveInputs};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::numerics::{sgd_step, OptimState};
use crate::relations::{dz, relations_mask, relations_sup, InstanceIds, Temperature};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synthetic(s) => gen_hierarchical_gaussian(s),
        DataSource::Vds { train, test } => Ok((read_vds(train, Split::Train)?, read_vds(test, Split::Test)?)),
        DataSource::Cifar {
            variant,
            train,
            test,
            coarse_map,
        } => {
            let (tr, stats) = load_cifar_binary(train, *variant, coarse_map.as_deref(), Split::Train, None)?;
            let (te, _) = load_cifar_binary(test, *variant, coarse_map.as_deref(), Split::Test, Some(&stats))?;
            Ok((tr, te))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub metrics: Vec<MetricsRow>,
    /// Recall@{1,2,5,10} after the final epoch.
    pub final_recall: RecallReport,
}

fn numerical(epoch: usize, batch: usize, msg: impl Into<String>) -> Error {
    Error::Numerical {
        epoch,
        batch,
        msg: msg.into(),
    }
}

/// Trains from scratch. `observer` sees each metrics row as it is produced.
pub fn run_training(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    mut observer: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.vectors.cols() != test.vectors.cols() {
        return Err(Error::DimMismatch(format!(
            "train has {}-dim vectors, test has {}",
            train.vectors.cols(),
            test.vectors.cols()
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model_cfg = ModelConfig {
        input_dim: train.vectors.cols(),
        encoder_hidden: cfg.encoder_hidden.clone(),
        feat_dim: cfg.feat_dim,
        proj_hidden: cfg.proj_hidden,
        proj_dim: cfg.proj_dim,
        num_classes: train.meta.num_coarse.max(1),
    };
    let mut model = ModelParams::init(&model_cfg, &mut rng);
    let mut bank = MemoryBank::new(cfg.bank_size, cfg.proj_dim);
    let mut optim = OptimState::new(
        &model.trainable_shapes(),
        cfg.base_lr,
        cfg.momentum,
        cfg.weight_decay,
        cfg.epochs,
    );
    if !cfg.decay_bias {
        optim.decay_mask = model.trainable_is_weight();
    }

    // warmup: fill the bank from the initial key encoder without updates
    for batch in batches(train, cfg.batch_size, &cfg.augment, rng.next_u64())? {
        let keys = model.key_projections(&batch.key_views)?;
        bank.push(&keys, &batch.coarse_labels, &batch.ids)?;
    }

    let uses_logits = cfg.objective.kind.uses_logits();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut final_recall = None;
    for epoch in 0..cfg.epochs {
        optim.epoch = epoch;
        let lr = optim.lr()?;
        let (mut loss_sum, mut dz_sup_sum, mut dz_mask_sum) = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for (bi, batch) in batches(train, cfg.batch_size, &cfg.augment, rng.next_u64())?.enumerate() {
            let pass = model.forward(&batch.query_views, uses_logits)?;
            let key_proj = model.key_projections(&batch.key_views)?;
            let snap = bank.snapshot();
            let out = evaluate_objective(
                &ObjectiveInputs {
                    query_proj: &pass.projections,
                    key_proj: &key_proj,
                    logits: pass.logits.as_ref(),
                    coarse_labels: &batch.coarse_labels,
                    ids: &batch.ids,
                    bank: &snap,
                },
                &cfg.objective,
            )?;
            if !out.value.is_finite() {
                return Err(numerical(epoch, bi, format!("objective = {}", out.value)));
            }

            // diagnostic: distance of coarse and masked relations from the fine-label relations
            let exclude = Some(InstanceIds {
                batch: &batch.ids,
                bank: &snap.ids,
            });
            let bank_fine: Vec<usize> = snap.ids.iter().map(|&id| train.fine_labels[id]).collect();
            let z_fine = relations_sup(&batch.fine_labels, &bank_fine, exclude)?;
            let z_sup = relations_sup(&batch.coarse_labels, &snap.labels, exclude)?;
            let z_mask = relations_mask(
                &key_proj,
                &snap.projections,
                &snap.labels,
                &batch.coarse_labels,
                exclude,
                cfg.dz_tau,
            )?;
            dz_sup_sum += dz(&z_sup, &z_fine)?;
            dz_mask_sum += dz(&z_mask, &z_fine)?;

            let grads = model.backward(&pass, out.grad_proj.as_ref(), out.grad_logits.as_ref())?;
            if !grads.is_finite() {
                return Err(numerical(epoch, bi, "non-finite gradient"));
            }
            sgd_step(&mut model.trainable_mut(), &grads.tensors(), &mut optim)?;
            model.momentum_update(cfg.ema)?;
            bank.push(&key_proj, &batch.coarse_labels, &batch.ids)?;
            loss_sum += out.value;
            n_batches += 1;
        }

        let last = epoch + 1 == cfg.epochs;
        let recall = if last || (epoch + 1) % cfg.eval_every == 0 {
            let report = evaluate_recall(&model, test, &METRIC_KS, cfg.eval_space)?;
            let scores = [report.scores[0], report.scores[1], report.scores[2], report.scores[3]];
            if last {
                final_recall = Some(report);
            }
            Some(scores)
        } else {
            None
        };
        let nb = n_batches.max(1) as f64;
        let row = MetricsRow {
            epoch,
            objective: loss_sum / nb,
            lr,
            recall,
            d_z_sup: dz_sup_sum / nb,
            d_z_mask: dz_mask_sum / nb,
            wall_seconds: if cfg.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        observer(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome {
        model,
        metrics,
        final_recall: final_recall.expect("epochs >= 1"),
    })
}

/// Loads data, trains, and writes `metrics.csv`, `model.ckpt` and the
/// resolved `config.txt` into the output directory. Synthetic data is also
/// saved as `train.vds` / `test.vds` so the run can be re-evaluated.
pub fn cmd_train(cfg: &RunConfig, observer: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    if matches!(cfg.data, DataSource::Synthetic(_)) {
        write_vds(&train, cfg.out_dir.join("train.vds"))?;
        write_vds(&test, cfg.out_dir.join("test.vds"))?;
    }
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_config_string())?;
    let outcome = run_training(cfg, &train, &test, observer)?;
    fs::write(cfg.out_dir.join(METRICS_FILE), metrics_csv(&outcome.metrics))?;
    save_checkpoint(&outcome.model, cfg.out_dir.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Relation temperatures reported by [`cmd_eval`].
pub const EVAL_DZ_TAUS: [Temperature; 3] = [Temperature::Zero, Temperature::Finite(0.05), Temperature::Infinity];

/// Number of test points drawn for the d_z report.
pub const EVAL_DZ_SAMPLE: usize = 256;

/// Recall@K and d_z of a saved checkpoint on a VDS dataset.
pub fn cmd_eval(
    checkpoint: impl AsRef<Path>,
    data: impl AsRef<Path>,
    ks: &[usize],
    space: EmbeddingSpace,
) -> Result<(RecallReport, DzReport)> {
    let model = load_checkpoint(checkpoint)?;
    let ds = read_vds(data, Split::Test)?;
    let recall = evaluate_recall(&model, &ds, ks, space)?;
    let dz = dz_report(&model, &ds, &EVAL_DZ_TAUS, EVAL_DZ_SAMPLE.min(ds.len()), 0)?;
    Ok((recall, dz))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub w: f64,
    pub tau: Temperature,
    pub recall: [f64; 4],
    pub d_z_sup: f64,
    pub d_z_mask: f64,
}

pub const SWEEP_HEADER: &str = "w,tau,recall@1,recall@2,recall@5,recall@10,d_z_sup,d_z_mask";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let rec = r.recall.map(|v| v.to_string()).join(",");
        s.push_str(&format!("{},{},{rec},{},{}\n", r.w, r.tau, r.d_z_sup, r.d_z_mask));
    }
    s
}

fn cell_dir(root: &Path, w: f64, tau: Temperature) -> PathBuf {
    root.join(format!("w{w}_tau{tau}"))
}

/// Trains one run per `(w, τ)` cell with a shared seed and writes
/// `sweep.csv` into the output directory.
pub fn cmd_sweep(
    cfg: &RunConfig,
    ws: &[f64],
    taus: &[Temperature],
    mut on_cell: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if ws.is_empty() || taus.is_empty() {
        return Err(Error::BadConfig("sweep needs nonempty w and tau lists".into()));
    }
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut rows = Vec::new();
    for &w in ws {
        for &tau in taus {
            let mut cell = cfg.clone();
            cell.objective.w = w;
            cell.objective.tau = tau;
            cell.out_dir = cell_dir(&cfg.out_dir, w, tau);
            cell.validate()?;
            let out = run_training(&cell, &train, &test, |_| {})?;
            fs::create_dir_all(&cell.out_dir)?;
            fs::write(cell.out_dir.join(METRICS_FILE), metrics_csv(&out.metrics))?;
            let last = out.metrics.last().expect("epochs >= 1");
            let row = SweepRow {
                w,
                tau,
                recall: last.recall.expect("last epoch is evaluated"),
                d_z_sup: last.d_z_sup,
                d_z_mask: last.d_z_mask,
            };
            on_cell(&row);
            rows.push(row);
        }
    }
    fs::write(cfg.out_dir.join("sweep.csv"), sweep_csv(&rows))?;
    Ok(rows)
}
