use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};

use super::dtw::{align_by_path, dtw};
use crate::error::{Error, Result};
use crate::models::{Task, ARTICULATOR_NAMES};

/// Sum with Neumaier compensation, so the result barely depends on order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    let ss = compensated_sum(values.iter().map(|v| (v - mu) * (v - mu)));
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Pearson correlation, or `None` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::Eval(format!(
            "correlation of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Eval("correlation needs at least two samples".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let sab = compensated_sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)));
    let saa = compensated_sum(a.iter().map(|x| (x - ma) * (x - ma)));
    let sbb = compensated_sum(b.iter().map(|y| (y - mb) * (y - mb)));
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)))
}

/// Pearson correlation; a constant input yields 0 and a logged warning.
pub fn cc(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(pearson(a, b)?.unwrap_or_else(|| {
        log::warn!("correlation with a zero-variance input defined as 0");
        0.0
    }))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Eval(format!(
            "RMSE of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Eval("RMSE of empty vectors".into()));
    }
    Ok((compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y))) / a.len() as f64).sqrt())
}

/// Per-channel metrics of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub id: String,
    pub subject: String,
    pub cc: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Channels whose correlation was undefined (constant signal).
    pub degenerate_channels: Vec<usize>,
}

impl MetricReport {
    pub fn mean_cc(&self) -> f64 {
        mean(&self.cc)
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(&self.rmse)
    }
}

/// Framewise metrics of two equally long `[n, c]` sequences.
pub fn framewise_metrics(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<MetricReport> {
    if pred.dim() != gt.dim() {
        return Err(Error::Eval(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dim(),
            gt.dim()
        )));
    }
    if gt.nrows() == 0 {
        return Err(Error::Eval("zero-length sequence".into()));
    }
    let mut report = MetricReport {
        id: String::new(),
        subject: String::new(),
        cc: Vec::with_capacity(gt.ncols()),
        rmse: Vec::with_capacity(gt.ncols()),
        degenerate_channels: Vec::new(),
    };
    for c in 0..gt.ncols() {
        let a: Vec<f64> = pred.column(c).to_vec();
        let b: Vec<f64> = gt.column(c).to_vec();
        let r = if a.len() < 2 { None } else { pearson(&a, &b)? };
        if r.is_none() {
            report.degenerate_channels.push(c);
        }
        report.cc.push(r.unwrap_or(0.0));
        report.rmse.push(rmse(&a, &b)?);
    }
    if !report.degenerate_channels.is_empty() {
        log::warn!(
            "{} channel(s) with undefined correlation scored as 0",
            report.degenerate_channels.len()
        );
    }
    Ok(report)
}

/// AAI predictions are compared framewise; PTA predictions are first
/// DTW-aligned and mean-pooled onto the ground-truth timeline.
pub fn evaluate_sentence(
    task: Task,
    pred: ArrayView2<f64>,
    gt: ArrayView2<f64>,
) -> Result<MetricReport> {
    if pred.nrows() == 0 || gt.nrows() == 0 {
        return Err(Error::Eval("zero-length sequence".into()));
    }
    match task {
        Task::Aai => framewise_metrics(pred, gt),
        Task::Pta => {
            let r = dtw(pred, gt)?;
            let aligned: Array2<f64> = align_by_path(pred, gt.nrows(), &r.path)?;
            framewise_metrics(aligned.view(), gt)
        }
    }
}

/// Mean and sample standard deviation over sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSummary {
    pub subject: String,
    pub n_sentences: usize,
    pub channel_cc: Vec<(f64, f64)>,
    pub channel_rmse: Vec<(f64, f64)>,
    /// Statistics of the per-sentence channel-averaged values.
    pub mean_cc: (f64, f64),
    pub mean_rmse: (f64, f64),
}

pub fn summarize(subject: &str, reports: &[MetricReport]) -> Result<CorpusSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Eval(format!("no sentences to summarize for {subject}")))?;
    let channels = first.cc.len();
    let stat = |v: Vec<f64>| (mean(&v), sample_std(&v));
    Ok(CorpusSummary {
        subject: subject.to_string(),
        n_sentences: reports.len(),
        channel_cc: (0..channels)
            .map(|c| stat(reports.iter().map(|r| r.cc[c]).collect()))
            .collect(),
        channel_rmse: (0..channels)
            .map(|c| stat(reports.iter().map(|r| r.rmse[c]).collect()))
            .collect(),
        mean_cc: stat(reports.iter().map(MetricReport::mean_cc).collect()),
        mean_rmse: stat(reports.iter().map(MetricReport::mean_rmse).collect()),
    })
}

pub const METRICS_HEADER: &str = "scope,sentence,subject,channel,cc,rmse,cc_std,rmse_std";

fn channel_name(c: usize) -> String {
    ARTICULATOR_NAMES
        .get(c)
        .map_or_else(|| format!("ch{c}"), |s| s.to_string())
}

/// Metrics as CSV text.
///
/// `sentence` rows hold one channel of one sentence and `sentence_mean`
/// rows the channel average of a sentence; `corpus` rows hold mean and
/// sample standard deviation over the sentences of a subject, per channel
/// and for the channel average (`channel = mean`).
pub fn metrics_csv(reports: &[MetricReport], summaries: &[CorpusSummary]) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for r in reports {
        for c in 0..r.cc.len() {
            writeln!(
                out,
                "sentence,{},{},{},{},{},,",
                r.id,
                r.subject,
                channel_name(c),
                r.cc[c],
                r.rmse[c]
            )
            .unwrap();
        }
        writeln!(
            out,
            "sentence_mean,{},{},mean,{},{},,",
            r.id,
            r.subject,
            r.mean_cc(),
            r.mean_rmse()
        )
        .unwrap();
    }
    for s in summaries {
        for c in 0..s.channel_cc.len() {
            let (cm, cs) = s.channel_cc[c];
            let (rm, rs) = s.channel_rmse[c];
            writeln!(
                out,
                "corpus,*,{},{},{cm},{rm},{cs},{rs}",
                s.subject,
                channel_name(c)
            )
            .unwrap();
        }
        writeln!(
            out,
            "corpus,*,{},mean,{},{},{},{}",
            s.subject, s.mean_cc.0, s.mean_rmse.0, s.mean_cc.1, s.mean_rmse.1
        )
        .unwrap();
    }
    out
}
