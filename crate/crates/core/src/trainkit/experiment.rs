//! Subject-dependent (E1), pooled (E2) and pooled-then-fine-tuned (E3)
//! experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::TrainConfig;
use super::trainer::{fit, log_csv, TrainOutcome};
use crate::datakit::{load_examples, CorpusManifest, Example, Split};
use crate::error::{Error, Result};
use crate::evalkit::{
    duration_significance, evaluate_sentence, mean, metrics_csv, significance_csv, summarize,
    CorpusSummary, MetricReport, PhonemeSignificance,
};
use crate::models::{AcousticFeatures, Model, ModelConfig, PhonemeSequence, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Setup {
    E1,
    E2,
    E3,
}

impl Setup {
    pub fn as_str(self) -> &'static str {
        match self {
            Setup::E1 => "E1",
            Setup::E2 => "E2",
            Setup::E3 => "E3",
        }
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Setup::E1),
            "E2" => Ok(Setup::E2),
            "E3" => Ok(Setup::E3),
            _ => Err(Error::config(format!("unknown setup '{s}' (E1, E2, E3)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub setup: Setup,
    /// Subjects to train/evaluate; all subjects of the manifest if empty.
    pub subjects: Vec<String>,
    /// Pooled checkpoint to fine-tune (E3); defaults to the E2 checkpoint
    /// in the output directory.
    pub source: Option<PathBuf>,
}

pub const POOLED: &str = "pooled";

pub fn checkpoint_path(out_dir: &Path, setup: Setup, name: &str) -> PathBuf {
    out_dir.join(format!("{setup}_{name}.ckpt"))
}

/// Duration accuracy of a PTA model on a set of sentences.
#[derive(Clone, Debug)]
pub struct DurationEval {
    /// Mean absolute error of rounded predictions in frames.
    pub mae: f64,
    pub mean_gt: f64,
    /// Ground-truth and predicted durations grouped by phoneme id.
    pub gt: BTreeMap<usize, Vec<f64>>,
    pub pred: BTreeMap<usize, Vec<f64>>,
}

impl DurationEval {
    pub fn relative_mae(&self) -> f64 {
        self.mae / self.mean_gt
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub reports: Vec<MetricReport>,
    pub summary: CorpusSummary,
    pub durations: Option<DurationEval>,
}

/// Runs inference on every example and scores it against its target.
pub fn evaluate_model(
    model: &Model<f32>,
    examples: &[Example],
    subject: &str,
) -> Result<Evaluation> {
    let mut reports = Vec::with_capacity(examples.len());
    let mut errors = Vec::new();
    let mut gt_all = Vec::new();
    let mut gt_map: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut pred_map: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for ex in examples {
        let pred = match model.task() {
            Task::Aai => model.infer_aai(&AcousticFeatures::new(ex.acoustics.clone())?)?,
            Task::Pta => {
                let p = PhonemeSequence::new(ex.phonemes.clone(), model.config.vocab_size)?;
                let (traj, d) = model.infer_pta(&p)?;
                for ((&ph, &g), &q) in ex.phonemes.iter().zip(&ex.durations).zip(d.as_slice()) {
                    errors.push((g as f64 - q as f64).abs());
                    gt_all.push(g as f64);
                    gt_map.entry(ph).or_default().push(g as f64);
                    pred_map.entry(ph).or_default().push(q as f64);
                }
                traj
            }
        };
        let mut r = evaluate_sentence(model.task(), pred.frames().view(), ex.target.view())?;
        r.id = ex.id.clone();
        r.subject = ex.subject.clone();
        reports.push(r);
    }
    let summary = summarize(subject, &reports)?;
    let durations = (model.task() == Task::Pta).then(|| DurationEval {
        mae: mean(&errors),
        mean_gt: mean(&gt_all),
        gt: gt_map,
        pred: pred_map,
    });
    Ok(Evaluation {
        reports,
        summary,
        durations,
    })
}

#[derive(Clone, Debug)]
pub struct SubjectResult {
    pub subject: String,
    pub checkpoint: PathBuf,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub setup: Setup,
    pub task: Task,
    pub subjects: Vec<SubjectResult>,
    /// Training runs by model name (subject or `pooled`).
    pub training: Vec<(String, TrainOutcome)>,
    pub significance: Vec<PhonemeSignificance>,
    pub metrics_path: PathBuf,
}

impl ExperimentResult {
    pub fn subject(&self, name: &str) -> Option<&SubjectResult> {
        self.subjects.iter().find(|s| s.subject == name)
    }
}

pub const SUMMARY_HEADER: &str =
    "subject,n_sentences,mean_cc,std_cc,mean_rmse,std_rmse,duration_mae,mean_duration";

pub fn summary_csv(results: &[SubjectResult]) -> String {
    let mut out = String::new();
    writeln!(out, "{SUMMARY_HEADER}").unwrap();
    for r in results {
        let s = &r.evaluation.summary;
        let (mae, md) = r
            .evaluation
            .durations
            .as_ref()
            .map_or((String::new(), String::new()), |d| {
                (d.mae.to_string(), d.mean_gt.to_string())
            });
        writeln!(
            out,
            "{},{},{},{},{},{},{mae},{md}",
            r.subject, s.n_sentences, s.mean_cc.0, s.mean_cc.1, s.mean_rmse.0, s.mean_rmse.1
        )
        .unwrap();
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_one(
    mut model: Model<f32>,
    manifest: &CorpusManifest,
    subject: Option<&str>,
    cfg: &TrainConfig,
    ckpt: &Path,
) -> Result<(Model<f32>, TrainOutcome)> {
    let train = load_examples(manifest, subject, Split::Train)?;
    let val = load_examples(manifest, subject, Split::Val)?;
    let who = subject.unwrap_or(POOLED);
    log::info!(
        "training {who}: {} train / {} val sentences",
        train.len(),
        val.len()
    );
    let outcome = fit(&mut model, &train, &val, cfg)?;
    model.save(ckpt)?;
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("train");
    let log_path = ckpt.with_file_name(format!("{stem}_log.csv"));
    write_text(&log_path, &log_csv(&outcome.log))?;
    Ok((model, outcome))
}

/// Writes `<prefix>_metrics.csv`, `<prefix>_summary.csv` and, when
/// durations were predicted, `<prefix>_durations.csv` with the per-phoneme
/// significance tests pooled over all subjects.
pub fn write_reports(
    out_dir: &Path,
    prefix: &str,
    results: &[SubjectResult],
) -> Result<(PathBuf, Vec<PhonemeSignificance>)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let reports: Vec<MetricReport> = results
        .iter()
        .flat_map(|r| r.evaluation.reports.iter().cloned())
        .collect();
    let summaries: Vec<CorpusSummary> = results
        .iter()
        .map(|r| r.evaluation.summary.clone())
        .collect();
    let metrics_path = out_dir.join(format!("{prefix}_metrics.csv"));
    write_text(&metrics_path, &metrics_csv(&reports, &summaries))?;
    write_text(
        &out_dir.join(format!("{prefix}_summary.csv")),
        &summary_csv(results),
    )?;

    let mut significance = Vec::new();
    if results.iter().any(|r| r.evaluation.durations.is_some()) {
        let mut gt: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut pred: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for d in results
            .iter()
            .filter_map(|r| r.evaluation.durations.as_ref())
        {
            for (k, v) in &d.gt {
                gt.entry(*k).or_default().extend(v);
            }
            for (k, v) in &d.pred {
                pred.entry(*k).or_default().extend(v);
            }
        }
        significance = duration_significance(&gt, &pred)?;
        write_text(
            &out_dir.join(format!("{prefix}_durations.csv")),
            &significance_csv(&significance),
        )?;
    }
    Ok((metrics_path, significance))
}

/// Trains and evaluates according to `plan`, writing checkpoints, training
/// logs and metric tables into `out_dir`.
pub fn run_experiment(
    plan: &ExperimentPlan,
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    manifest: &CorpusManifest,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    let all = manifest.subjects();
    let subjects = if plan.subjects.is_empty() {
        all.clone()
    } else {
        for s in &plan.subjects {
            if !all.contains(s) {
                return Err(Error::Data(format!("subject {s} not in manifest")));
            }
        }
        plan.subjects.clone()
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let source = match plan.setup {
        Setup::E3 => {
            let p = plan
                .source
                .clone()
                .unwrap_or_else(|| checkpoint_path(out_dir, Setup::E2, POOLED));
            if !p.exists() {
                return Err(Error::Train(format!(
                    "E3 fine-tunes a pooled model, but {} does not exist (run E2 first)",
                    p.display()
                )));
            }
            let m = Model::<f32>::load(&p)?;
            if m.task() != model_cfg.task {
                return Err(Error::config(format!(
                    "pooled checkpoint is a {} model, experiment asks for {}",
                    m.task(),
                    model_cfg.task
                )));
            }
            Some(m)
        }
        _ => None,
    };

    let mut results = Vec::new();
    let mut training = Vec::new();
    let evaluate = |model: &Model<f32>, subject: &str, ckpt: &Path| -> Result<SubjectResult> {
        let test = load_examples(manifest, Some(subject), Split::Test)?;
        Ok(SubjectResult {
            subject: subject.to_string(),
            checkpoint: ckpt.to_path_buf(),
            evaluation: evaluate_model(model, &test, subject)?,
        })
    };

    match plan.setup {
        Setup::E1 | Setup::E3 => {
            for subject in &subjects {
                let init = match &source {
                    Some(m) => m.clone(),
                    None => Model::new(model_cfg.clone(), train_cfg.seed)?,
                };
                let ckpt = checkpoint_path(out_dir, plan.setup, subject);
                let (model, outcome) = train_one(init, manifest, Some(subject), train_cfg, &ckpt)?;
                results.push(evaluate(&model, subject, &ckpt)?);
                training.push((subject.clone(), outcome));
            }
        }
        Setup::E2 => {
            let ckpt = checkpoint_path(out_dir, Setup::E2, POOLED);
            let init = Model::new(model_cfg.clone(), train_cfg.seed)?;
            let (model, outcome) = train_one(init, manifest, None, train_cfg, &ckpt)?;
            for subject in &subjects {
                results.push(evaluate(&model, subject, &ckpt)?);
            }
            training.push((POOLED.to_string(), outcome));
        }
    }

    let (metrics_path, significance) = write_reports(out_dir, plan.setup.as_str(), &results)?;

    Ok(ExperimentResult {
        setup: plan.setup,
        task: model_cfg.task,
        subjects: results,
        training,
        significance,
        metrics_path,
    })
}
