//! Classification metrics (ACC, SN, SP, AUC-ROC) and uncertainty metrics (UA,
//! AUC-UA, threshold sweeps). Percentages throughout; undefined values are
//! `None`, never 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::udm::UncertaintyEstimate;

pub const HARD_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub y_true: u8,
    pub p_f: f64,
    pub hard_label: u8,
    pub estimate: UncertaintyEstimate,
}

impl PredictionRecord {
    pub fn new(clip_id: impl Into<String>, y_true: u8, p_f: f64, estimate: UncertaintyEstimate) -> Self {
        PredictionRecord {
            clip_id: clip_id.into(),
            y_true,
            p_f,
            hard_label: u8::from(p_f >= HARD_THRESHOLD),
            estimate,
        }
    }

    pub fn correct(&self) -> bool {
        self.hard_label == self.y_true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Epistemic,
    Aleatoric,
    Total,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 3] = [
        UncertaintyKind::Epistemic,
        UncertaintyKind::Aleatoric,
        UncertaintyKind::Total,
    ];

    pub fn value(self, est: &UncertaintyEstimate) -> f64 {
        match self {
            UncertaintyKind::Epistemic => est.u_e,
            UncertaintyKind::Aleatoric => est.u_a,
            UncertaintyKind::Total => est.sigma2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.y_true, r.hard_label) {
                (1, 1) => c.tp += 1,
                (1, _) => c.r#fn += 1,
                (_, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.r#fn
    }

    pub fn acc(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sn(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.r#fn)
    }

    pub fn sp(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub acc: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
}

pub fn confusion_metrics(records: &[PredictionRecord]) -> ConfusionMetrics {
    let c = Confusion::from_records(records);
    ConfusionMetrics {
        acc: c.acc(),
        sn: c.sn(),
        sp: c.sp(),
    }
}

/// Mann-Whitney AUC (ties count ½) of `scores` against binary `labels`, in percent.
pub fn auc_from_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC-ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Rank sum of positives with mid-ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(100.0 * u / (n_pos as f64 * n_neg as f64))
}

pub fn auc_roc(records: &[PredictionRecord]) -> Result<f64> {
    let scores: Vec<f64> = records.iter().map(|r| r.p_f).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.y_true).collect();
    auc_from_scores(&scores, &labels)
}

/// Min-max normalisation; a constant input maps to all zeros.
pub fn normalize_uncertainty(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect()
}

pub fn normalized(records: &[PredictionRecord], which: UncertaintyKind) -> Vec<f64> {
    let raw: Vec<f64> = records.iter().map(|r| which.value(&r.estimate)).collect();
    normalize_uncertainty(&raw)
}

/// The 101 thresholds 0, 0.01, …, 1.
pub fn threshold_grid() -> Vec<f64> {
    (0..=100).map(|k| k as f64 / 100.0).collect()
}

fn ua_from_normalized(records: &[PredictionRecord], norm: &[f64], ut: f64) -> f64 {
    let desired = records
        .iter()
        .zip(norm)
        .filter(|(r, &u)| {
            let uncertain = u >= ut;
            r.correct() != uncertain
        })
        .count();
    100.0 * desired as f64 / records.len() as f64
}

/// Percentage of correct-certain plus incorrect-uncertain records, where a
/// record is uncertain when its normalised uncertainty is ≥ `ut`.
pub fn uncertainty_accuracy(
    records: &[PredictionRecord],
    ut: f64,
    which: UncertaintyKind,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Metric("uncertainty accuracy of an empty record set".into()));
    }
    Ok(ua_from_normalized(records, &normalized(records, which), ut))
}

/// UA at every grid threshold.
pub fn ua_curve(records: &[PredictionRecord], which: UncertaintyKind) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Metric("uncertainty accuracy of an empty record set".into()));
    }
    let norm = normalized(records, which);
    Ok(threshold_grid()
        .into_iter()
        .map(|t| (t, ua_from_normalized(records, &norm, t)))
        .collect())
}

/// Trapezoidal area under UA(U_t) over the 101-point grid on [0, 1].
pub fn auc_ua(records: &[PredictionRecord], which: UncertaintyKind) -> Result<f64> {
    let curve = ua_curve(records, which)?;
    Ok(curve
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub u_t: f64,
    pub retained_pr: Option<f64>,
    pub retained_normal: Option<f64>,
    pub acc: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
}

/// Metrics on the records whose normalised epistemic uncertainty is ≤ U_t, for
/// every grid threshold. Retention is relative to the original class counts.
pub fn sweep_threshold(records: &[PredictionRecord]) -> Vec<SweepRow> {
    let norm = normalized(records, UncertaintyKind::Epistemic);
    let n_pr = records.iter().filter(|r| r.y_true == 1).count();
    let n_normal = records.len() - n_pr;
    threshold_grid()
        .into_iter()
        .map(|u_t| {
            let kept: Vec<&PredictionRecord> = records
                .iter()
                .zip(&norm)
                .filter(|(_, &u)| u <= u_t)
                .map(|(r, _)| r)
                .collect();
            let c = Confusion::from_records(kept.iter().copied());
            let kept_pr = kept.iter().filter(|r| r.y_true == 1).count();
            let kept_normal = kept.len() - kept_pr;
            SweepRow {
                u_t,
                retained_pr: (n_pr > 0).then(|| kept_pr as f64 / n_pr as f64),
                retained_normal: (n_normal > 0).then(|| kept_normal as f64 / n_normal as f64),
                acc: c.acc(),
                sn: c.sn(),
                sp: c.sp(),
            }
        })
        .collect()
}

/// Sweep table as CSV text; undefined metrics are empty cells.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["u_t", "retained_pr", "retained_normal", "acc", "sn", "sp"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.u_t.to_string(),
            fmt(r.retained_pr),
            fmt(r.retained_normal),
            fmt(r.acc),
            fmt(r.sn),
            fmt(r.sp),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, sweep_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucUa {
    pub epistemic: Option<f64>,
    pub aleatoric: Option<f64>,
    pub total: Option<f64>,
}

/// Summary written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub records: usize,
    pub positives: usize,
    pub acc: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub auc_roc: Option<f64>,
    pub auc_ua: AucUa,
    pub mean_u_e: Option<f64>,
    pub mean_u_a: Option<f64>,
    pub mean_sigma2: Option<f64>,
    /// Uncertainties are min-max normalised over the evaluated record set.
    pub normalization: String,
    pub t_train: usize,
    pub t_eval: usize,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_records(
        split: &str,
        records: &[PredictionRecord],
        t_train: usize,
        t_eval: usize,
        n: usize,
    ) -> Self {
        let c = confusion_metrics(records);
        let mean = |f: fn(&UncertaintyEstimate) -> f64| {
            (!records.is_empty())
                .then(|| records.iter().map(|r| f(&r.estimate)).sum::<f64>() / records.len() as f64)
        };
        MetricsReport {
            split: split.to_string(),
            records: records.len(),
            positives: records.iter().filter(|r| r.y_true == 1).count(),
            acc: c.acc,
            sn: c.sn,
            sp: c.sp,
            auc_roc: auc_roc(records).ok(),
            auc_ua: AucUa {
                epistemic: auc_ua(records, UncertaintyKind::Epistemic).ok(),
                aleatoric: auc_ua(records, UncertaintyKind::Aleatoric).ok(),
                total: auc_ua(records, UncertaintyKind::Total).ok(),
            },
            mean_u_e: mean(|e| e.u_e),
            mean_u_a: mean(|e| e.u_a),
            mean_sigma2: mean(|e| e.sigma2),
            normalization: "min-max over the evaluated record set".into(),
            t_train,
            t_eval,
            n,
        }
    }
}
