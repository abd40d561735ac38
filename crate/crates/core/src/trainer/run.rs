use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{CheckpointHeader, LmCheckpoint, RngState, CHECKPOINT_VERSION};
use super::data::TrainingData;
use super::optim::{clip_scale, global_grad_norm, AdamW, AdamWConfig};
use super::{apply_text_dropout, lr_schedule, sample_task, InitSource, Result, RunConfig, TrainerError};
use crate::nclm::{CodecLm, LmItem, LmKind, ModelConfig};
use crate::prompting::{TrainingExample, VocabMap};
use crate::util::{atomic_write, derive_seed, rng_for};

const STREAMS: [&str; 5] = ["task", "text_dropout", "data", "dropout", "nar_layer"];

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub task: String,
    pub ar_loss: f64,
    pub nar_loss: f64,
    pub lr: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| TrainerError::Io(e.into_error()))?;
    Ok(atomic_write(path, &bytes)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
    Ok(rows)
}

/// Owns both models, their optimizers and every random stream of a run.
pub struct Trainer {
    pub run: RunConfig,
    pub ar: CodecLm,
    pub nar: CodecLm,
    ar_opt: AdamW,
    nar_opt: AdamW,
    streams: BTreeMap<String, ChaCha8Rng>,
    step: usize,
    vocab_hash: String,
    codec_checksum: String,
}

fn check_vocab(model: &ModelConfig, vocab: &VocabMap) -> Result<()> {
    if model.codebook_size != vocab.codebook_size || model.num_layers != vocab.num_layers {
        return Err(TrainerError::Compat {
            expected: format!("{} layers x {} codes", model.num_layers, model.codebook_size),
            found: format!("{} layers x {} codes", vocab.num_layers, vocab.codebook_size),
        });
    }
    Ok(())
}

fn expect_equal(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(TrainerError::Compat {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn optim_config(run: &RunConfig) -> AdamWConfig {
    AdamWConfig {
        weight_decay: run.weight_decay,
        ..AdamWConfig::default()
    }
}

impl Trainer {
    /// Fresh run: random init, or stage-two init from a stage-one checkpoint
    /// with the task-token embeddings redrawn.
    pub fn new(run: RunConfig, model: ModelConfig, vocab: &VocabMap, codec_checksum: &str) -> Result<Self> {
        run.validate()?;
        check_vocab(&model, vocab)?;
        let (ar, nar) = match &run.init {
            InitSource::Random => (
                CodecLm::new(model.clone(), LmKind::Ar, derive_seed(run.seed, "trainer/ar"), DType::F32)?,
                CodecLm::new(model, LmKind::Nar, derive_seed(run.seed, "trainer/nar"), DType::F32)?,
            ),
            InitSource::Checkpoint(path) => {
                let ckpt = LmCheckpoint::load(path)?;
                expect_equal(&vocab.hash(), &ckpt.header.vocab_hash)?;
                expect_equal(codec_checksum, &ckpt.header.codec_checksum)?;
                if ckpt.header.model != model {
                    return Err(TrainerError::Compat {
                        expected: format!("{model:?}"),
                        found: format!("{:?}", ckpt.header.model),
                    });
                }
                let (ar, nar) = ckpt.models()?;
                let mut rng = rng_for(run.seed, "trainer/task-token-init");
                ar.reinit_task_tokens(&mut rng)?;
                nar.reinit_task_tokens(&mut rng)?;
                (ar, nar)
            }
        };
        let streams = STREAMS
            .iter()
            .map(|s| (s.to_string(), rng_for(run.seed, &format!("trainer/{s}"))))
            .collect();
        Ok(Self {
            ar_opt: AdamW::new(ar.params.vars(), optim_config(&run))?,
            nar_opt: AdamW::new(nar.params.vars(), optim_config(&run))?,
            run,
            ar,
            nar,
            streams,
            step: 0,
            vocab_hash: vocab.hash(),
            codec_checksum: codec_checksum.to_string(),
        })
    }

    /// Continues a run exactly where `ckpt` left off.
    pub fn resume(ckpt: &LmCheckpoint) -> Result<Self> {
        let h = &ckpt.header;
        let (ar, nar) = ckpt.models()?;
        let mut ar_opt = AdamW::new(ar.params.vars(), optim_config(&h.run))?;
        ar_opt.load_bytes(&ckpt.ar_optim)?;
        let mut nar_opt = AdamW::new(nar.params.vars(), optim_config(&h.run))?;
        nar_opt.load_bytes(&ckpt.nar_optim)?;
        let mut streams = BTreeMap::new();
        for name in STREAMS {
            let state = h
                .streams
                .get(name)
                .ok_or_else(|| TrainerError::Corrupt(format!("missing rng stream {name}")))?;
            streams.insert(name.to_string(), state.restore()?);
        }
        Ok(Self {
            run: h.run.clone(),
            ar,
            nar,
            ar_opt,
            nar_opt,
            streams,
            step: h.step,
            vocab_hash: h.vocab_hash.clone(),
            codec_checksum: h.codec_checksum.clone(),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Replaces the init path recorded in checkpoints, for example with one
    /// relative to the run directory. The loaded weights are unaffected.
    pub fn record_init_as(&mut self, path: PathBuf) {
        if let InitSource::Checkpoint(_) = self.run.init {
            self.run.init = InitSource::Checkpoint(path);
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.run.steps
    }

    pub fn checkpoint(&self) -> Result<LmCheckpoint> {
        Ok(LmCheckpoint {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                model: self.ar.config.clone(),
                vocab_hash: self.vocab_hash.clone(),
                codec_checksum: self.codec_checksum.clone(),
                run: self.run.clone(),
                step: self.step,
                streams: self
                    .streams
                    .iter()
                    .map(|(k, v)| (k.clone(), RngState::capture(v)))
                    .collect(),
            },
            ar_params: self.ar.params.to_bytes()?,
            nar_params: self.nar.params.to_bytes()?,
            ar_optim: self.ar_opt.to_bytes()?,
            nar_optim: self.nar_opt.to_bytes()?,
        })
    }

    fn stream(&mut self, name: &str) -> &mut ChaCha8Rng {
        self.streams.get_mut(name).expect("stream registered")
    }

    fn check_data(&self, data: &TrainingData) -> Result<()> {
        expect_equal(&self.vocab_hash, &data.vocab.hash())?;
        expect_equal(&self.codec_checksum, &data.codec_checksum)?;
        data.check_covers(&self.run.enabled_tasks())
    }

    /// One update of both models on one sampled single-task batch.
    pub fn train_step(&mut self, data: &TrainingData) -> Result<MetricRow> {
        if self.is_done() {
            return Err(TrainerError::Config {
                field: "steps".into(),
                message: format!("run already finished at step {}", self.step),
            });
        }
        let enabled = self.run.enabled_tasks();
        let task = sample_task(self.stream("task"), &enabled)?;
        let pool = data.examples(task)?;
        let batch_size = self.run.batch_size;
        let picks: Vec<usize> = {
            let rng = self.stream("data");
            (0..batch_size).map(|_| rng.random_range(0..pool.len())).collect()
        };
        let p = self.run.text_dropout_p;
        let batch: Vec<TrainingExample> = {
            let rng = self.stream("text_dropout");
            picks
                .iter()
                .map(|&i| apply_text_dropout(pool[i].clone(), rng, p))
                .collect()
        };
        let items: Vec<LmItem> = batch.iter().map(LmItem::from).collect();
        let lr = lr_schedule(self.step + 1, self.run.warmup_steps, self.run.peak_lr, self.run.steps)?;
        let clip = self.run.grad_clip;

        let mut dropout = self.streams.remove("dropout").expect("stream registered");
        let ar_loss = self.ar.ar_loss(&items, Some(&mut dropout));
        let layers = self.nar.config.num_layers;
        let nar_layer = self.stream("nar_layer").random_range(2..=layers);
        let nar_loss = ar_loss.and_then(|a| Ok((a, self.nar.nar_loss(&items, nar_layer, Some(&mut dropout))?)));
        self.streams.insert("dropout".into(), dropout);
        let (ar_loss, nar_loss) = nar_loss?;

        let grads = ar_loss.backward()?;
        let scale = clip_scale(global_grad_norm(self.ar.params.vars(), &grads)?, clip);
        self.ar_opt.step(self.ar.params.vars(), &grads, lr, scale)?;
        let grads = nar_loss.backward()?;
        let scale = clip_scale(global_grad_norm(self.nar.params.vars(), &grads)?, clip);
        self.nar_opt.step(self.nar.params.vars(), &grads, lr, scale)?;

        let row = MetricRow {
            step: self.step,
            task: task.short_name().to_string(),
            ar_loss: ar_loss.to_dtype(DType::F64)?.to_scalar()?,
            nar_loss: nar_loss.to_dtype(DType::F64)?.to_scalar()?,
            lr,
        };
        self.step += 1;
        Ok(row)
    }

    /// Runs until `steps`, writing `step-<n>.ckpt` every `checkpoint_every`
    /// steps, then `final.ckpt` and `metrics.csv`, when `out_dir` is given.
    pub fn train(&mut self, data: &TrainingData, out_dir: Option<&Path>) -> Result<Vec<MetricRow>> {
        self.check_data(data)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut rows = Vec::new();
        while !self.is_done() {
            rows.push(self.train_step(data)?);
            if let (Some(dir), k) = (out_dir, self.run.checkpoint_every) {
                if k > 0 && self.step % k == 0 && !self.is_done() {
                    self.checkpoint()?.save(&dir.join(format!("step-{}.ckpt", self.step)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint()?.save(&dir.join("final.ckpt"))?;
            write_metrics(&dir.join("metrics.csv"), &rows)?;
        }
        Ok(rows)
    }
}

/// Builds a trainer for `run` and trains it to completion.
pub fn train_stage(
    run: RunConfig,
    model: ModelConfig,
    data: &TrainingData,
    out_dir: Option<&Path>,
) -> Result<(Trainer, Vec<MetricRow>)> {
    let mut trainer = Trainer::new(run, model, &data.vocab, &data.codec_checksum)?;
    let rows = trainer.train(data, out_dir)?;
    Ok((trainer, rows))
}
