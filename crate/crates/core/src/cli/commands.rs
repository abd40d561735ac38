//! Subcommand bodies. Each returns a [`Summary`] of what it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{CliError, ExperimentConfig};
use crate::codec::{reconstruction_snr, train_codec, CodecModel};
use crate::evalkit::{
    codec_impact, evaluate_run, impact_items, plot_loss_curves, plot_metric_vs_snr, read_eval_manifest,
    write_eval_set, Report, SystemOutputs, EVAL_MANIFEST,
};
use crate::generate::{run_batch, ModelBundle};
use crate::prompting::{
    build_example, sample_materials, write_dataset, DatasetHeader, TaskSpec, UtterancePool, VocabMap,
};
use crate::synthworld::{build_corpus, Manifest, Split, MANIFEST_FILE};
use crate::trainer::{read_metrics, write_metrics, InitSource, LmCheckpoint, Trainer, TrainingData};
use crate::util::{atomic_write, derive_seed, rng_for, sha256_hex};

/// One-line result of a subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub command: String,
    pub artifacts: Vec<PathBuf>,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Tts,
    Multitask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub stage: TrainStage,
    pub init: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextMode {
    On,
    Off,
}

impl TextMode {
    fn label(self) -> &'static str {
        match self {
            TextMode::On => "text_on",
            TextMode::Off => "text_off",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub text: TextMode,
    /// Tasks of the evaluation set to run; ignored with `requests`.
    pub tasks: Vec<TaskSpec>,
    pub requests: Option<PathBuf>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub tasks: Vec<TaskSpec>,
    pub text: Vec<TextMode>,
    pub name: String,
}

fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact(path))
    }
}

/// The snapshot sits inside the run directory, so its `out_root` is `.`.
fn record_config(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out_root)?;
    let path = cfg.out_root.join("config.toml");
    let mut snapshot = cfg.clone();
    snapshot.out_root = PathBuf::from(".");
    atomic_write(&path, snapshot.to_toml().as_bytes())?;
    Ok(path)
}

/// `path` relative to the run directory when it lies inside it.
fn run_relative(cfg: &ExperimentConfig, path: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    let (root, full) = (abs(&cfg.out_root), abs(path));
    full.strip_prefix(&root).map(Path::to_path_buf).unwrap_or(full)
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    Ok(Manifest::load(&require(cfg.corpus_dir().join(MANIFEST_FILE))?)?)
}

fn load_codec(cfg: &ExperimentConfig) -> Result<CodecModel, CliError> {
    Ok(CodecModel::load(&require(cfg.codec_path())?)?)
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    let manifest = build_corpus(&cfg.corpus, &cfg.corpus_dir())?;
    let path = cfg.corpus_dir().join(MANIFEST_FILE);
    Ok(Summary {
        command: "simulate".into(),
        details: json!({
            "utterances": manifest.records.len(),
            "train": manifest.split(Split::Train).count(),
            "test": manifest.split(Split::Test).count(),
            "manifest_sha256": file_hash(&path)?,
        }),
        artifacts: vec![config_path, path],
    })
}

pub fn run_train_codec(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    let manifest = load_manifest(cfg)?;
    let (model, logs) = train_codec(&manifest, &cfg.codec, &cfg.codec_train)?;
    let dir = cfg.codec_path().parent().expect("codec path has a parent").to_path_buf();
    std::fs::create_dir_all(&dir)?;
    model.save(&cfg.codec_path())?;
    let log_path = dir.join("log.csv");
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &logs {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    atomic_write(&log_path, &bytes)?;
    let held_out: Vec<_> = manifest
        .split(Split::Test)
        .map(|r| manifest.read(r))
        .collect::<Result<_, _>>()?;
    let snr = reconstruction_snr(&model, &held_out)?;
    Ok(Summary {
        command: "train-codec".into(),
        details: json!({
            "steps": logs.len(),
            "held_out_snr_db": snr,
            "checksum": model.checksum(),
        }),
        artifacts: vec![config_path, cfg.codec_path(), log_path],
    })
}

/// Encodes `data.examples_per_task` training examples per task and writes
/// `eval.items_per_task` held-out items per task.
pub fn run_compile_data(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    let manifest = load_manifest(cfg)?;
    let codec = load_codec(cfg)?;
    let vocab = VocabMap::new(codec.config.codebook_size, codec.config.num_layers);
    let mut artifacts = vec![config_path];

    let train_pool = UtterancePool::load(&manifest, Split::Train)?;
    std::fs::create_dir_all(cfg.data_dir())?;
    for task in TaskSpec::ALL {
        let mut rng = rng_for(cfg.seed, &format!("data/{}", task.short_name()));
        let examples = (0..cfg.data.examples_per_task)
            .map(|_| {
                let (materials, _) = sample_materials(task, &train_pool, &cfg.data.materials, &mut rng)?;
                build_example(&materials, true, &vocab, &codec, &cfg.prompt)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let header = DatasetHeader {
            vocab: vocab.clone(),
            codec_checksum: codec.checksum(),
            count: examples.len(),
            source: json!({ "split": "train", "materials": cfg.data.materials, "seed": cfg.seed }),
        };
        let path = cfg.data_dir().join(TrainingData::file_name(task));
        write_dataset(&path, &header, &examples)?;
        artifacts.push(path);
    }

    let test_pool = UtterancePool::load(&manifest, Split::Test)?;
    let mut items = Vec::new();
    for task in TaskSpec::ALL {
        let mut rng = rng_for(cfg.seed, &format!("eval/{}", task.short_name()));
        for k in 0..cfg.eval.items_per_task {
            let (materials, refs) = sample_materials(task, &test_pool, &cfg.eval.materials, &mut rng)?;
            items.push((format!("{}-{k:04}", task.short_name()), materials, refs));
        }
    }
    write_eval_set(&cfg.eval_dir(), &items)?;
    artifacts.push(cfg.eval_dir().join(EVAL_MANIFEST));
    Ok(Summary {
        command: "compile-data".into(),
        details: json!({
            "examples_per_task": cfg.data.examples_per_task,
            "eval_items": items.len(),
            "vocab_hash": vocab.hash(),
        }),
        artifacts,
    })
}

pub fn run_train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    let codec = load_codec(cfg)?;
    let data = TrainingData::load_dir(&require(cfg.data_dir())?, Some(&codec.checksum()))?;
    let (mut trainer, out_dir, mut rows) = if let Some(path) = &args.resume {
        let ckpt = LmCheckpoint::load(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let step = ckpt.header.step;
        let earlier = match read_metrics(&dir.join("metrics.csv")) {
            Ok(rows) => rows.into_iter().filter(|r| r.step <= step).collect(),
            Err(_) => Vec::new(),
        };
        (Trainer::resume(&ckpt)?, dir, earlier)
    } else {
        let mut run = match args.stage {
            TrainStage::Tts => cfg.stage1.clone(),
            TrainStage::Multitask => cfg.stage2.clone(),
        };
        if let Some(init) = &args.init {
            if args.stage == TrainStage::Tts {
                return Err(CliError::Usage("--init applies to the multitask stage".into()));
            }
            run.init = InitSource::Checkpoint(require(init.clone())?);
        }
        let name = args.name.clone().unwrap_or_else(|| match (args.stage, &args.init) {
            (TrainStage::Tts, _) => "tts".to_string(),
            (TrainStage::Multitask, Some(_)) => "multitask".to_string(),
            (TrainStage::Multitask, None) => "multitask-random".to_string(),
        });
        let mut trainer = Trainer::new(run, cfg.model.clone(), &data.vocab, &data.codec_checksum)?;
        if let Some(init) = &args.init {
            trainer.record_init_as(run_relative(cfg, init));
        }
        (trainer, cfg.train_dir(&name), Vec::new())
    };
    rows.extend(trainer.train(&data, Some(&out_dir))?);
    let metrics = out_dir.join("metrics.csv");
    write_metrics(&metrics, &rows)?;
    let ckpt = out_dir.join("final.ckpt");
    let last = rows.last();
    Ok(Summary {
        command: "train".into(),
        details: json!({
            "steps": trainer.step(),
            "final_ar_loss": last.map(|r| r.ar_loss),
            "final_nar_loss": last.map(|r| r.nar_loss),
            "checkpoint_sha256": file_hash(&ckpt)?,
        }),
        artifacts: vec![config_path, ckpt, metrics],
    })
}

struct Inference<'a> {
    cfg: &'a ExperimentConfig,
    codec: CodecModel,
    vocab: VocabMap,
    models: ModelBundle,
    checkpoint_id: String,
}

impl<'a> Inference<'a> {
    fn load(cfg: &'a ExperimentConfig, checkpoint: &Path) -> Result<Self, CliError> {
        let codec = load_codec(cfg)?;
        let vocab = VocabMap::new(codec.config.codebook_size, codec.config.num_layers);
        let ckpt = LmCheckpoint::load(&require(checkpoint.to_path_buf())?)?;
        Ok(Self {
            cfg,
            models: ModelBundle::from_checkpoint(&ckpt)?,
            checkpoint_id: ckpt.checksum(),
            codec,
            vocab,
        })
    }

    fn batch(&self, requests: &Path, out_dir: &Path) -> Result<usize, CliError> {
        let outputs = run_batch(
            requests,
            out_dir,
            &self.models,
            &self.codec,
            &self.vocab,
            &self.cfg.eval.sampling,
            derive_seed(self.cfg.seed, "infer"),
        )?;
        Ok(outputs.len())
    }

    /// Writes the evaluation-set requests into `out_dir` and runs them.
    fn eval_set(&self, tasks: &[TaskSpec], text: TextMode, out_dir: &Path) -> Result<usize, CliError> {
        let eval_dir = self.cfg.eval_dir();
        let items = read_eval_manifest(&require(eval_dir.join(EVAL_MANIFEST))?)?;
        std::fs::create_dir_all(out_dir)?;
        let mut lines = String::new();
        for item in items.iter().filter(|i| tasks.contains(&i.task)) {
            let mut request = item.request(text == TextMode::On);
            for path in request.inputs.values_mut() {
                *path = Path::new("..").join("..").join("eval").join(&*path);
            }
            lines.push_str(&serde_json::to_string(&request)?);
            lines.push('\n');
        }
        let requests = out_dir.join("requests.jsonl");
        atomic_write(&requests, lines.as_bytes())?;
        self.batch(&requests, out_dir)
    }
}

pub fn run_infer(cfg: &ExperimentConfig, args: &InferArgs) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    let inference = Inference::load(cfg, &args.checkpoint)?;
    let out_dir = cfg.infer_dir(&args.label);
    let count = match &args.requests {
        Some(requests) => inference.batch(requests, &out_dir)?,
        None => inference.eval_set(&args.tasks, args.text, &out_dir)?,
    };
    let outputs = out_dir.join("outputs.jsonl");
    Ok(Summary {
        command: "infer".into(),
        details: json!({
            "requests": count,
            "checkpoint": inference.checkpoint_id,
            "outputs_sha256": file_hash(&outputs)?,
        }),
        artifacts: vec![config_path, outputs],
    })
}

fn write_report(cfg: &ExperimentConfig, name: &str, report: &Report) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(cfg.reports_dir())?;
    let json_path = cfg.reports_dir().join(format!("{name}.json"));
    let text_path = cfg.reports_dir().join(format!("{name}.txt"));
    atomic_write(&json_path, report.to_json()?.as_bytes())?;
    atomic_write(&text_path, report.render_text().as_bytes())?;
    Ok(vec![json_path, text_path])
}

/// Runs inference on the evaluation set once per text mode and scores the
/// outputs against the no-processing baseline.
pub fn run_eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    if args.text.is_empty() {
        return Err(CliError::Usage("eval needs at least one text mode".into()));
    }
    let inference = Inference::load(cfg, &args.checkpoint)?;
    let mut systems = Vec::new();
    for &mode in &args.text {
        let dir = cfg.infer_dir(&format!("{}-{}", args.name, mode.label()));
        inference.eval_set(&args.tasks, mode, &dir)?;
        systems.push(SystemOutputs {
            label: mode.label().into(),
            dir,
        });
    }
    let report = evaluate_run(
        &cfg.eval_dir().join(EVAL_MANIFEST),
        &systems,
        &args.tasks,
        Some(inference.checkpoint_id.clone()),
    )?;
    let mut artifacts = vec![config_path];
    artifacts.extend(write_report(cfg, &args.name, &report)?);
    Ok(Summary {
        command: "eval".into(),
        details: json!({ "rows": report.rows.len(), "items": report.items.len() }),
        artifacts,
    })
}

pub fn run_codec_impact(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    let manifest = load_manifest(cfg)?;
    let codec = load_codec(cfg)?;
    let items = impact_items(&manifest, derive_seed(cfg.seed, "codec-impact"), cfg.eval.impact_items)?;
    let report = codec_impact(&items, &codec)?;
    let mut artifacts = vec![config_path];
    artifacts.extend(write_report(cfg, "codec_impact", &report)?);
    Ok(Summary {
        command: "codec-impact".into(),
        details: json!({ "items": items.len(), "rows": report.rows.len() }),
        artifacts,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut entries = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

/// Loss curves for every training run, metric-vs-SNR curves for every
/// evaluation report and one text file with all report tables.
pub fn run_report(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let config_path = record_config(cfg)?;
    std::fs::create_dir_all(cfg.plots_dir())?;
    let mut artifacts = vec![config_path];
    for dir in sorted_entries(&cfg.out_root.join("train"))? {
        let metrics = dir.join("metrics.csv");
        if !metrics.exists() {
            continue;
        }
        let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let path = cfg.plots_dir().join(format!("loss-{name}.svg"));
        plot_loss_curves(&read_metrics(&metrics)?, &path)?;
        artifacts.push(path);
    }
    let mut tables = String::new();
    for path in sorted_entries(&cfg.reports_dir())? {
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let report: Report = serde_json::from_slice(&std::fs::read(&path)?)?;
        tables.push_str(&report.render_text());
        tables.push('\n');
        if report.kind != "evaluation" {
            continue;
        }
        let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        for task in TaskSpec::ALL {
            let items: Vec<_> = report
                .items
                .iter()
                .filter(|i| i.task == Some(task) && i.snr_db.is_some())
                .cloned()
                .collect();
            if items.is_empty() {
                continue;
            }
            let plot = cfg.plots_dir().join(format!("{name}-{}-snr.svg", task.short_name()));
            if task == TaskSpec::Sr {
                plot_metric_vs_snr(&items, "MCD (dB)", |i| i.scores.mcd, &plot)?;
            } else {
                plot_metric_vs_snr(&items, "content error rate", |i| i.scores.cer, &plot)?;
            }
            artifacts.push(plot);
        }
    }
    let summary_path = cfg.reports_dir().join("summary.txt");
    std::fs::create_dir_all(cfg.reports_dir())?;
    atomic_write(&summary_path, tables.as_bytes())?;
    artifacts.push(summary_path);
    Ok(Summary {
        command: "report".into(),
        details: json!({ "artifacts": artifacts.len() }),
        artifacts,
    })
}
