//! Command-line front end: corpus synthesis, training, evaluation,
//! inference, benchmarking and gradient checking.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_bench, BenchOptions, MIN_REPS, MIN_WARMUP};
use crate::config::KvConfig;
use crate::datakit::{
    format_ints, format_matrix, generate_synthetic, load_examples, read_matrix, read_phonemes,
    CorpusManifest, Split, SyntheticSpec, MANIFEST_NAME,
};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, SuiteOptions, DEFAULT_SEEDS};
use crate::models::{AcousticFeatures, Model, ModelConfig, PhonemeSequence, Task, N_FEATURES};
use crate::trainkit::{
    evaluate_model, run_experiment, write_reports, ExperimentPlan, Setup, SubjectResult,
    TrainConfig,
};
use crate::transformer::PeMode;

#[derive(Parser, Debug)]
#[command(
    name = "artic",
    version,
    about = "Transformer acoustic-to-articulatory and phoneme-to-articulatory models"
)]
pub struct Cli {
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value configuration file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Corpus manifest (manifest.tsv)
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Seed for every random choice of the command
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-subject corpus
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train models for setup E1, E2 or E3 and evaluate them on the test split
    Train {
        #[command(flatten)]
        common: Common,
        /// aai or pta (may also come from the config file)
        #[arg(long)]
        task: Option<Task>,
        /// E1 (per subject), E2 (pooled) or E3 (pooled, then fine-tuned per subject)
        #[arg(long, default_value = "E1")]
        setup: Setup,
        /// none, additive, concatenative or relative
        #[arg(long)]
        pe_mode: Option<PeMode>,
        /// Restrict to these subjects (repeatable)
        #[arg(long = "subject")]
        subjects: Vec<String>,
        /// Pooled checkpoint fine-tuned by E3 (default: <out>/E2_pooled.ckpt)
        #[arg(long, value_name = "FILE")]
        source: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a corpus
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// train, val or test
        #[arg(long, default_value = "test")]
        split: Split,
        /// Restrict to these subjects (repeatable)
        #[arg(long = "subject")]
        subjects: Vec<String>,
    },
    /// Predict a trajectory from an acoustic CSV (AAI) or a phoneme file (PTA)
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Acoustic features (13 comma-separated columns) or phoneme ids
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
    /// Time one FFT layer forward pass against sequence length
    Bench {
        #[command(flatten)]
        common: Common,
        /// Sequence lengths
        #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024, 2048])]
        lengths: Vec<usize>,
        /// Model widths
        #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64])]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value = "relative")]
        pe_mode: PeMode,
        #[arg(long, default_value_t = MIN_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = MIN_REPS)]
        reps: usize,
    },
    /// Run the finite-difference gradient suite in double precision
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random cases per check
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
        /// Flip the sign of one case's gradient (the run must then fail)
        #[arg(long, value_name = "CASE")]
        inject_fault: Option<String>,
    },
}

fn config(common: &Common) -> Result<KvConfig> {
    match &common.config {
        Some(p) => KvConfig::load(p),
        None => Ok(KvConfig::empty()),
    }
}

fn out_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::config("--out is required for this command"))
}

fn manifest(common: &Common) -> Result<CorpusManifest> {
    let p = common
        .manifest
        .as_deref()
        .ok_or_else(|| Error::config("--manifest is required for this command"))?;
    CorpusManifest::load(p)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn no_config_keys(common: &Common) -> Result<()> {
    config(common)?.finish()
}

fn print_results(results: &[SubjectResult]) {
    println!("subject  sentences  mean_cc  mean_rmse  duration_mae");
    for r in results {
        let s = &r.evaluation.summary;
        let mae = r
            .evaluation
            .durations
            .as_ref()
            .map_or("-".to_string(), |d| format!("{:.3}", d.mae));
        println!(
            "{:<8} {:>9}  {:>7.4}  {:>9.4}  {mae:>12}",
            r.subject, s.n_sentences, s.mean_cc.0, s.mean_rmse.0
        );
    }
}

pub fn cmd_synth(common: &Common) -> Result<PathBuf> {
    let kv = config(common)?;
    let spec = SyntheticSpec::from_kv(&kv, common.seed)?;
    kv.finish()?;
    let out = out_dir(common)?;
    let m = generate_synthetic(&spec, out)?;
    let path = out.join(MANIFEST_NAME);
    println!("wrote {} sentences to {}", m.records.len(), path.display());
    for (k, v) in &m.meta {
        if k.starts_with("ols_cc.") {
            println!("{k} = {v}");
        }
    }
    Ok(path)
}

/// Reads the model and training settings of `train`; flags win over the file.
pub fn train_configs(
    common: &Common,
    task: Option<Task>,
    pe_mode: Option<PeMode>,
    manifest: &CorpusManifest,
) -> Result<(TrainConfig, ModelConfig)> {
    let mut kv = config(common)?;
    if let Some(m) = pe_mode {
        kv.set("pe_mode", m.as_str());
    }
    if let (Some(t), Some(_)) = (task, kv.get::<Task>("task")?) {
        kv.set("task", t.as_str());
    }
    if !kv.contains("vocab_size") {
        if let Some(v) = manifest.vocab_size() {
            kv.set("vocab_size", v.to_string());
        }
    }
    let train = TrainConfig::from_kv(&kv, common.seed)?;
    let model = ModelConfig::from_kv(&kv, task)?;
    kv.finish()?;
    Ok((train, model))
}

pub fn cmd_train(
    common: &Common,
    task: Option<Task>,
    setup: Setup,
    pe_mode: Option<PeMode>,
    subjects: &[String],
    source: Option<PathBuf>,
) -> Result<Vec<SubjectResult>> {
    let manifest = manifest(common)?;
    let (train_cfg, model_cfg) = train_configs(common, task, pe_mode, &manifest)?;
    let plan = ExperimentPlan {
        setup,
        subjects: subjects.to_vec(),
        source,
    };
    let out = out_dir(common)?;
    let r = run_experiment(&plan, &train_cfg, &model_cfg, &manifest, out)?;
    println!(
        "{} {} ({} encoding), metrics in {}",
        r.setup,
        r.task,
        model_cfg.pe_mode,
        r.metrics_path.display()
    );
    print_results(&r.subjects);
    Ok(r.subjects)
}

pub fn cmd_eval(
    common: &Common,
    checkpoint: &Path,
    split: Split,
    subjects: &[String],
) -> Result<Vec<SubjectResult>> {
    no_config_keys(common)?;
    let manifest = manifest(common)?;
    let model = Model::<f32>::load(checkpoint)?;
    let subjects = if subjects.is_empty() {
        manifest.subjects()
    } else {
        subjects.to_vec()
    };
    let mut results = Vec::new();
    for s in &subjects {
        let examples = load_examples(&manifest, Some(s), split)?;
        if examples.is_empty() {
            log::warn!("subject {s} has no {split} sentences");
            continue;
        }
        results.push(SubjectResult {
            subject: s.clone(),
            checkpoint: checkpoint.to_path_buf(),
            evaluation: evaluate_model(&model, &examples, s)?,
        });
    }
    if results.is_empty() {
        return Err(Error::Data(format!("no {split} sentences to evaluate")));
    }
    let (path, _) = write_reports(out_dir(common)?, split.as_str(), &results)?;
    println!(
        "{} model on the {split} split, metrics in {}",
        model.task(),
        path.display()
    );
    print_results(&results);
    Ok(results)
}

pub fn cmd_infer(common: &Common, checkpoint: &Path, input: &Path) -> Result<()> {
    no_config_keys(common)?;
    let model = Model::<f32>::load(checkpoint)?;
    let out = out_dir(common)?;
    let traj = match model.task() {
        Task::Aai => model.infer_aai(&AcousticFeatures::new(read_matrix(input, N_FEATURES)?)?)?,
        Task::Pta => {
            let p = PhonemeSequence::new(read_phonemes(input)?, model.config.vocab_size)?;
            let (traj, d) = model.infer_pta(&p)?;
            write(&out.join("durations.txt"), &format_ints(d.as_slice()))?;
            traj
        }
    };
    let path = out.join("trajectory.csv");
    write(&path, &format_matrix(traj.frames()))?;
    println!(
        "wrote {} frames to {}",
        traj.frames().nrows(),
        path.display()
    );
    Ok(())
}

pub fn cmd_bench(common: &Common, opts: BenchOptions) -> Result<String> {
    no_config_keys(common)?;
    let report = run_bench(&opts)?;
    let csv = report.to_csv();
    if let Some(out) = &common.out {
        write(&out.join("bench.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(csv)
}

pub fn cmd_gradcheck(common: &Common, seeds: usize, inject_fault: Option<String>) -> Result<()> {
    no_config_keys(common)?;
    let report = run_suite(&SuiteOptions {
        seeds,
        base_seed: common.seed,
        inject_fault,
    })?;
    let text = report.to_text();
    if let Some(out) = &common.out {
        write(&out.join("gradcheck.txt"), &text)?;
    }
    print!("{text}");
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .cases
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        Err(Error::Train(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => cmd_synth(&common).map(drop),
        Command::Train {
            common,
            task,
            setup,
            pe_mode,
            subjects,
            source,
        } => cmd_train(&common, task, setup, pe_mode, &subjects, source).map(drop),
        Command::Eval {
            common,
            checkpoint,
            split,
            subjects,
        } => cmd_eval(&common, &checkpoint, split, &subjects).map(drop),
        Command::Infer {
            common,
            checkpoint,
            input,
        } => cmd_infer(&common, &checkpoint, &input),
        Command::Bench {
            common,
            lengths,
            widths,
            heads,
            pe_mode,
            warmup,
            reps,
        } => {
            let opts = BenchOptions {
                lengths,
                widths,
                n_heads: heads,
                pe_mode,
                warmup,
                reps,
                seed: common.seed,
            };
            cmd_bench(&common, opts).map(drop)
        }
        Command::Gradcheck {
            common,
            seeds,
            inject_fault,
        } => cmd_gradcheck(&common, seeds, inject_fault),
    }
}
