//! Training loop, evaluation, single-clip prediction and the analysis probes.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{add_noise_scaled, augment};
use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset::{ensure_dir, split_inter, split_intra, Dataset, Partition, PoseSequence, SplitName, SplitStrategy};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, PredictionRecord};
use crate::model::{Inference, Model, StepRngs};
use crate::nn::{apply_bn_updates, Matrix, Sgd, Tape};
use crate::objective::{bce, PROB_EPS};
use crate::rng::{stable_hash, stream};

/// One row of `history.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_cls: f64,
    pub l_unc: f64,
    pub l_mu: f64,
    pub val_l_cls: Option<f64>,
    pub val_acc: Option<f64>,
    pub val_auc_roc: Option<f64>,
    pub val_auc_ua_total: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Run directory for `history.csv` and `checkpoints/`.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

pub struct TrainOutcome {
    /// Checkpoint of the selected epoch.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Splits shuffled indices into batches; a trailing batch of one is merged
/// into its predecessor so batch statistics stay defined.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

fn preprocess_all(model: &Model, clips: &[&PoseSequence]) -> Result<Vec<PoseSequence>> {
    clips.par_iter().map(|c| model.preprocess(c)).collect()
}

fn check_topology(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.topology.joint_count() != model.topology.joint_count() {
        return Err(Error::Topology(format!(
            "data has {} joints, the checkpoint was trained on {}",
            dataset.topology.joint_count(),
            model.topology.joint_count()
        )));
    }
    Ok(())
}

/// Partition of `dataset` as configured under `partition.*`.
pub fn make_partition(config: &Config, dataset: &Dataset) -> Result<Partition> {
    let p = &config.partition;
    match p.strategy {
        SplitStrategy::Inter => split_inter(dataset, p.ratios, p.seed, p.tolerance),
        SplitStrategy::Intra => {
            let [train, test, val] = p.intra_counts;
            split_intra(dataset, train, test, val, p.seed)
        }
    }
}

/// Better-than comparison for model selection: higher validation AUC-ROC,
/// then lower validation L_cls.
fn improves(auc: Option<f64>, loss: Option<f64>, best: &Option<(Option<f64>, Option<f64>)>) -> bool {
    let Some((best_auc, best_loss)) = best else {
        return true;
    };
    let a = auc.unwrap_or(f64::NEG_INFINITY);
    let b = best_auc.unwrap_or(f64::NEG_INFINITY);
    if a != b {
        return a > b;
    }
    loss.unwrap_or(f64::INFINITY) < best_loss.unwrap_or(f64::INFINITY)
}

pub fn train(
    config: &Config,
    dataset: &Dataset,
    partition: &Partition,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_clips = dataset.select(&partition.train)?;
    if train_clips.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let val_clips = dataset.select(&partition.val)?;
    let mut model = Model::new(config.clone(), dataset.topology.clone())?;
    let train_pre = preprocess_all(&model, &train_clips)?;
    let val_pre = preprocess_all(&model, &val_clips)?;
    let tcfg = &config.train;

    let ckpt_dir = opts.out_dir.as_ref().map(|d| d.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        ensure_dir(dir)?;
    }

    let mut opt = Sgd::new(&model.store, tcfg.momentum, tcfg.weight_decay);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut best_key: Option<(Option<f64>, Option<f64>)> = None;

    for epoch in 0..tcfg.epochs {
        let lr = tcfg.lr_at(epoch);
        let augmented: Vec<PoseSequence> = if config.augment.enabled {
            train_pre
                .par_iter()
                .map(|c| {
                    let mut rng = stream(tcfg.augment_seed, &[epoch as u64, stable_hash(&c.clip_id)]);
                    augment(c, &mut rng, &config.augment)
                })
                .collect()
        } else {
            train_pre.clone()
        };
        let mut order: Vec<usize> = (0..augmented.len()).collect();
        order.shuffle(&mut stream(tcfg.seed, &[0x5F1E, epoch as u64]));

        let mut sums = [0.0; 4];
        let mut weight = 0usize;
        for (step, idx) in batches(&order, tcfg.batch_size).iter().enumerate() {
            let batch: Vec<&PoseSequence> = idx.iter().map(|&i| &augmented[i]).collect();
            let mut tape = Tape::new();
            let mut rngs = StepRngs::for_step(config, epoch, step);
            let out = model.train_step(&mut tape, &batch, &mut rngs)?;
            if !out.terms.total.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|c| c.clip_id.as_str()).collect();
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {step} (clips {})",
                    ids.join(", ")
                )));
            }
            let grads = tape.backward(out.loss).params(&tape);
            opt.step(&mut model.store, &grads, lr);
            apply_bn_updates(&mut model.store, &out.bn_updates);
            let n = batch.len();
            let t = out.terms;
            for (s, v) in sums.iter_mut().zip([t.total, t.l_cls, t.l_unc, t.l_mu]) {
                *s += v * n as f64;
            }
            weight += n;
        }
        let mean = |s: f64| s / weight as f64;
        if tcfg.recalibrate_bn {
            recalibrate(&mut model, &train_pre, epoch)?;
        }

        let (val_report, val_loss) = if val_pre.is_empty() {
            (None, None)
        } else {
            let records = infer_all(&model, &val_pre, false)?
                .into_iter()
                .map(|i| i.record)
                .collect::<Vec<_>>();
            let loss = records
                .iter()
                .map(|r| bce(r.p_f, r.y_true as f64, PROB_EPS))
                .sum::<f64>()
                / records.len() as f64;
            let report = MetricsReport::from_records(
                "val",
                &records,
                config.udm.t_train,
                config.udm.t_eval,
                config.udm.n,
            );
            (Some(report), Some(loss))
        };
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: mean(sums[0]),
            l_cls: mean(sums[1]),
            l_unc: mean(sums[2]),
            l_mu: mean(sums[3]),
            val_l_cls: val_loss,
            val_acc: val_report.as_ref().and_then(|r| r.acc),
            val_auc_roc: val_report.as_ref().and_then(|r| r.auc_roc),
            val_auc_ua_total: val_report.as_ref().and_then(|r| r.auc_ua.total),
        };
        if opts.verbose {
            eprintln!(
                "epoch {:>3} lr {:.5} loss {:.4} (cls {:.4} unc {:.4}) val auc {} acc {}",
                log.epoch,
                lr,
                log.loss,
                log.l_cls,
                log.l_unc,
                fmt_opt(log.val_auc_roc),
                fmt_opt(log.val_acc)
            );
        }
        // Without a validation set the latest epoch is kept.
        let selected = val_pre.is_empty() || improves(log.val_auc_roc, log.val_l_cls, &best_key);
        if selected {
            best_key = Some((log.val_auc_roc, log.val_l_cls));
            let ck = Checkpoint::from_model(&model, epoch + 1, log.val_auc_roc, log.val_l_cls, Some(partition.clone()));
            if let Some(dir) = &ckpt_dir {
                ck.save(dir.join("best.ckpt"))?;
            }
            best = Some(ck);
        }
        history.push(log);
        if let Some(dir) = &opts.out_dir {
            write_history(&history, dir.join("history.csv"))?;
        }
    }
    let last = Checkpoint::from_model(
        &model,
        tcfg.epochs,
        history.last().and_then(|h| h.val_auc_roc),
        history.last().and_then(|h| h.val_l_cls),
        Some(partition.clone()),
    );
    if let Some(dir) = &ckpt_dir {
        last.save(dir.join("last.ckpt"))?;
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        last,
        history,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

pub fn write_history(history: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for h in history {
        w.serialize(h).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Running statistics gathered during training describe augmented clips and
/// dropout-perturbed fusion inputs; clean inference sees neither.
fn recalibrate(model: &mut Model, clips: &[PoseSequence], epoch: usize) -> Result<()> {
    let rows = clips
        .par_iter()
        .map(|c| model.embed(c))
        .collect::<Result<Vec<_>>>()?;
    let d = rows[0].cols();
    let h = Matrix::from_vec(rows.len(), d, rows.into_iter().flat_map(Matrix::into_vec).collect());
    let parts = [0xBCA1, epoch as u64];
    let mut rngs = StepRngs {
        dropout: stream(model.config.train.dropout_seed, &parts),
        mc: stream(model.config.train.mc_seed, &parts),
    };
    model.recalibrate_heads(&h, &mut rngs);
    Ok(())
}

fn infer_all(model: &Model, clips: &[PoseSequence], keep_samples: bool) -> Result<Vec<Inference>> {
    clips.par_iter().map(|c| model.infer(c, keep_samples)).collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<PredictionRecord>,
}

/// Clips of `split` from the checkpoint's partition (all clips when the split
/// is `All` and no partition was stored).
pub fn split_clips<'a>(ck: &Checkpoint, dataset: &'a Dataset, split: SplitName) -> Result<Vec<&'a PoseSequence>> {
    match (&ck.partition, split) {
        (Some(p), s) => dataset.select(&p.ids(s)),
        (None, SplitName::All) => Ok(dataset.clips.iter().collect()),
        (None, s) => Err(Error::Split(format!(
            "checkpoint carries no partition, cannot select split {s:?}"
        ))),
    }
}

/// Evaluation with augmentation off and dropout active only in f_e.
pub fn evaluate(model: &Model, dataset: &Dataset, clips: &[&PoseSequence], split: &str) -> Result<Evaluation> {
    check_topology(model, dataset)?;
    let pre = preprocess_all(model, clips)?;
    let records: Vec<PredictionRecord> = infer_all(model, &pre, false)?
        .into_iter()
        .map(|i| i.record)
        .collect();
    let u = &model.config.udm;
    Ok(Evaluation {
        report: MetricsReport::from_records(split, &records, u.t_train, u.t_eval, u.n),
        records,
    })
}

pub fn predict(model: &Model, seq: &PoseSequence) -> Result<PredictionRecord> {
    let pre = model.preprocess(seq)?;
    Ok(model.infer(&pre, true)?.record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub level: f64,
    pub mean_u_a: f64,
    pub std_u_a: f64,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.iter().any(|l| !(*l >= 0.0)) || levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("noise levels must be non-negative and ascending".into()));
    }
    Ok(())
}

/// U_a of one preprocessed clip under Gaussian noise of std `level × channel
/// std`, one value per draw.
fn probe_draws(model: &Model, pre: &PoseSequence, level: f64, draws: usize) -> Result<Vec<f64>> {
    if level == 0.0 {
        return Ok(vec![model.aleatoric(pre)?; draws.max(1)]);
    }
    (0..draws.max(1))
        .map(|d| {
            let mut rng = stream(
                model.config.train.augment_seed,
                &[0x9B0B, stable_hash(&pre.clip_id), level.to_bits(), d as u64],
            );
            model.aleatoric(&add_noise_scaled(pre, &mut rng, level))
        })
        .collect()
}

fn summarize(level: f64, values: &[f64]) -> ProbeRow {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ProbeRow {
        level,
        mean_u_a: mean,
        std_u_a: var.sqrt(),
    }
}

/// Noise probe on a single raw clip.
pub fn noise_probe(model: &Model, seq: &PoseSequence, levels: &[f64], draws: usize) -> Result<Vec<ProbeRow>> {
    check_levels(levels)?;
    let pre = model.preprocess(seq)?;
    levels
        .iter()
        .map(|&l| Ok(summarize(l, &probe_draws(model, &pre, l, draws)?)))
        .collect()
}

/// Noise probe averaged over a set of raw clips: each row pools every draw of
/// every clip at that level.
pub fn noise_probe_set(
    model: &Model,
    clips: &[&PoseSequence],
    levels: &[f64],
    draws: usize,
) -> Result<Vec<ProbeRow>> {
    check_levels(levels)?;
    let pre = preprocess_all(model, clips)?;
    levels
        .iter()
        .map(|&l| {
            let per_clip: Vec<Vec<f64>> = pre
                .par_iter()
                .map(|c| probe_draws(model, c, l, draws))
                .collect::<Result<_>>()?;
            Ok(summarize(l, &per_clip.concat()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub clip_id: String,
    pub label: u8,
    pub h: Vec<f64>,
    /// h_e′ ⊕ h_a′; absent when the fusion heads are disabled.
    pub fused: Option<Vec<f64>>,
}

pub fn export_embeddings(model: &Model, clips: &[&PoseSequence]) -> Result<Vec<EmbeddingRow>> {
    let pre = preprocess_all(model, clips)?;
    Ok(infer_all(model, &pre, false)?
        .into_iter()
        .map(|i| EmbeddingRow {
            clip_id: i.record.clip_id,
            label: i.record.y_true,
            h: i.h,
            fused: i.fused,
        })
        .collect())
}

/// Writes `clip_id,label,h_0..,f_0..` with floats in shortest round-trip form.
pub fn write_embeddings_csv(rows: &[EmbeddingRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    if let Some(first) = rows.first() {
        let mut header = vec!["clip_id".to_string(), "label".to_string()];
        header.extend((0..first.h.len()).map(|i| format!("h_{i}")));
        if let Some(f) = &first.fused {
            header.extend((0..f.len()).map(|i| format!("f_{i}")));
        }
        w.write_record(&header).map_err(to_err)?;
    }
    for r in rows {
        let mut rec = vec![r.clip_id.clone(), r.label.to_string()];
        rec.extend(r.h.iter().map(|v| v.to_string()));
        if let Some(f) = &r.fused {
            rec.extend(f.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_probe_csv(rows: &[ProbeRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in rows {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = mid;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}
