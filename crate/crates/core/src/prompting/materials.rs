//! Sampling of per-task signal materials from a rendered corpus.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExampleMeta, PromptError, Result, TaskSpec};
use crate::synthworld::{
    generate_noise, make_edit_pair, mix_at_snr, Manifest, NoiseBank, NoiseSpec, Split, SymbolSeq,
    SynthUtterance, UtteranceRecord, Waveform, NOISE_TEMPLATES, SAMPLE_RATE, SYMBOL_SAMPLES,
    TRAIN_NOISE_TEMPLATES,
};

/// Raw model inputs for one task, before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptInputs {
    Ns { noisy: Waveform },
    Sr { noisy: Waveform },
    Tse { enrollment: Waveform, mixture: Waveform },
    ZsTts { prompt: Waveform },
    /// Empty waveforms stand for absent context.
    Cse { pre: Waveform, post: Waveform },
    Nse { pre: Waveform, mid: Waveform, post: Waveform },
}

impl PromptInputs {
    pub fn task(&self) -> TaskSpec {
        match self {
            PromptInputs::Ns { .. } => TaskSpec::Ns,
            PromptInputs::Sr { .. } => TaskSpec::Sr,
            PromptInputs::Tse { .. } => TaskSpec::Tse,
            PromptInputs::ZsTts { .. } => TaskSpec::ZsTts,
            PromptInputs::Cse { .. } => TaskSpec::Cse,
            PromptInputs::Nse { .. } => TaskSpec::Nse,
        }
    }
}

/// Signals used to score an output for this item.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReferences {
    /// What "no processing" would return: the raw input signal.
    pub baseline: Waveform,
    /// The desired output signal.
    pub reference: Waveform,
    /// Clean speech of the speaker the output should sound like.
    pub speaker: Option<Waveform>,
    /// Clean speech of the competing speaker (extraction only).
    pub interferer: Option<Waveform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMaterials {
    pub inputs: PromptInputs,
    /// One segment, or pre/edited/post for the editing tasks.
    pub target: Vec<Waveform>,
    /// Content of the desired output.
    pub text: SymbolSeq,
    pub meta: ExampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub snr_db: (f64, f64),
    pub sir_db: (f64, f64),
    pub edit_fraction: (f64, f64),
    /// Noise templates drawn from `[lo, hi)`.
    pub noise_templates: (usize, usize),
    pub enrollment_seconds: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self::train()
    }
}

impl MaterialConfig {
    pub fn train() -> Self {
        Self {
            snr_db: (-5.0, 20.0),
            sir_db: (-5.0, 20.0),
            edit_fraction: (0.1, 0.7),
            noise_templates: (0, TRAIN_NOISE_TEMPLATES),
            enrollment_seconds: 3.0,
        }
    }

    pub fn eval() -> Self {
        Self {
            snr_db: (0.0, 20.0),
            sir_db: (0.0, 20.0),
            edit_fraction: (0.1, 0.5),
            noise_templates: (TRAIN_NOISE_TEMPLATES, NOISE_TEMPLATES),
            enrollment_seconds: 3.0,
        }
    }
}

struct PoolItem {
    record: UtteranceRecord,
    utterance: SynthUtterance,
    wave: Waveform,
}

/// In-memory utterances of one split, indexed by speaker.
pub struct UtterancePool {
    items: Vec<PoolItem>,
    by_speaker: BTreeMap<String, Vec<usize>>,
    speakers: Vec<String>,
    bank: NoiseBank,
}

impl UtterancePool {
    pub fn load(manifest: &Manifest, split: Split) -> Result<Self> {
        let mut items = Vec::new();
        for record in manifest.split(split) {
            items.push(PoolItem {
                wave: manifest.read(record)?,
                utterance: manifest.utterance(record),
                record: record.clone(),
            });
        }
        let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            by_speaker.entry(item.record.speaker_id.clone()).or_default().push(i);
        }
        let speakers: Vec<String> = by_speaker
            .iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(k, _)| k.clone())
            .collect();
        if speakers.len() < 2 {
            return Err(PromptError::MaterialError(
                "split needs at least two speakers with two utterances each".into(),
            ));
        }
        Ok(Self {
            items,
            by_speaker,
            speakers,
            bank: NoiseBank::new(manifest.header.config.seed),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn pick_speaker<R: Rng>(&self, rng: &mut R) -> &str {
        &self.speakers[rng.random_range(0..self.speakers.len())]
    }

    fn pick_utterance<R: Rng>(&self, speaker: &str, rng: &mut R) -> usize {
        let list = &self.by_speaker[speaker];
        list[rng.random_range(0..list.len())]
    }

    /// Other utterances of the same speaker, concatenated in random order
    /// until `len` samples are covered, then trimmed.
    fn enrollment<R: Rng>(&self, speaker: &str, exclude: usize, len: usize, rng: &mut R) -> Waveform {
        let others: Vec<usize> = self.by_speaker[speaker]
            .iter()
            .copied()
            .filter(|&i| i != exclude)
            .collect();
        let mut samples = Vec::with_capacity(len);
        while samples.len() < len {
            let i = others[rng.random_range(0..others.len())];
            samples.extend_from_slice(&self.items[i].wave.samples);
        }
        samples.truncate(len);
        Waveform::new(samples, SAMPLE_RATE)
    }

    /// Speech of `speaker` covering exactly `len` samples.
    fn filler<R: Rng>(&self, speaker: &str, len: usize, rng: &mut R) -> Waveform {
        self.enrollment(speaker, usize::MAX, len, rng)
    }

    fn noise<R: Rng>(&self, len: usize, cfg: &MaterialConfig, rng: &mut R) -> Result<Waveform> {
        let spec = NoiseSpec {
            template_id: rng.random_range(cfg.noise_templates.0..cfg.noise_templates.1),
            gain: 1.0,
        };
        Ok(generate_noise(&self.bank, &spec, len, rng.random())?)
    }
}

fn uniform<R: Rng>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Draws the signals for one example of `task`, plus the references used to
/// score it.
pub fn sample_materials<R: Rng>(
    task: TaskSpec,
    pool: &UtterancePool,
    cfg: &MaterialConfig,
    rng: &mut R,
) -> Result<(TaskMaterials, EvalReferences)> {
    let enroll_len = (cfg.enrollment_seconds * SAMPLE_RATE as f64).round() as usize;
    let speaker = pool.pick_speaker(rng).to_string();
    let idx = pool.pick_utterance(&speaker, rng);
    let item = &pool.items[idx];
    let clean = item.wave.clone();
    let text = item.utterance.content.clone();
    let mut meta = ExampleMeta {
        utterance_ids: vec![item.record.id.clone()],
        ..ExampleMeta::default()
    };

    let out = match task {
        TaskSpec::Ns | TaskSpec::Sr => {
            let snr = uniform(cfg.snr_db, rng);
            let noise = pool.noise(clean.len(), cfg, rng)?;
            let mix = mix_at_snr(&clean, &noise, snr)?;
            meta.snr_db = Some(snr);
            let (inputs, target, reference, spk) = if task == TaskSpec::Ns {
                (
                    PromptInputs::Ns {
                        noisy: mix.mixture.clone(),
                    },
                    clean.clone(),
                    clean.clone(),
                    Some(clean.clone()),
                )
            } else {
                (
                    PromptInputs::Sr {
                        noisy: mix.mixture.clone(),
                    },
                    mix.scaled_noise.clone(),
                    mix.scaled_noise.clone(),
                    None,
                )
            };
            (
                TaskMaterials {
                    inputs,
                    target: vec![target],
                    text,
                    meta,
                },
                EvalReferences {
                    baseline: mix.mixture,
                    reference,
                    speaker: spk,
                    interferer: None,
                },
            )
        }
        TaskSpec::Tse => {
            let other = loop {
                let s = pool.pick_speaker(rng);
                if s != speaker {
                    break s.to_string();
                }
            };
            let interferer = pool.filler(&other, clean.len(), rng);
            let sir = uniform(cfg.sir_db, rng);
            let mix = mix_at_snr(&clean, &interferer, sir)?;
            let enrollment = pool.enrollment(&speaker, idx, enroll_len, rng);
            meta.snr_db = Some(sir);
            meta.utterance_ids.push(format!("interferer:{other}"));
            (
                TaskMaterials {
                    inputs: PromptInputs::Tse {
                        enrollment,
                        mixture: mix.mixture.clone(),
                    },
                    target: vec![clean.clone()],
                    text,
                    meta,
                },
                EvalReferences {
                    baseline: mix.mixture,
                    reference: clean.clone(),
                    speaker: Some(clean),
                    interferer: Some(interferer),
                },
            )
        }
        TaskSpec::ZsTts => {
            let prompt = pool.enrollment(&speaker, idx, enroll_len, rng);
            (
                TaskMaterials {
                    inputs: PromptInputs::ZsTts {
                        prompt: prompt.clone(),
                    },
                    target: vec![clean.clone()],
                    text,
                    meta,
                },
                EvalReferences {
                    baseline: prompt,
                    reference: clean.clone(),
                    speaker: Some(clean),
                    interferer: None,
                },
            )
        }
        TaskSpec::Cse | TaskSpec::Nse => {
            let pair = make_edit_pair(&item.utterance, cfg.edit_fraction, SYMBOL_SAMPLES, rng)?;
            let (s, e) = pair.sample_span();
            let n = pair.original.len();
            meta.snr_db = None;
            if task == TaskSpec::Cse {
                let pre = pair.original.slice(0, s);
                let post = pair.original.slice(e, n);
                (
                    TaskMaterials {
                        inputs: PromptInputs::Cse {
                            pre: pre.clone(),
                            post: post.clone(),
                        },
                        target: vec![pre, pair.replaced.slice(s, e), post],
                        text: pair.replaced_text.clone(),
                        meta,
                    },
                    EvalReferences {
                        baseline: pair.original.clone(),
                        reference: pair.replaced,
                        speaker: Some(pair.original),
                        interferer: None,
                    },
                )
            } else {
                let snr = uniform(cfg.snr_db, rng);
                let noise = pool.noise(n, cfg, rng)?;
                let mix = mix_at_snr(&pair.original, &noise, snr)?;
                let noisy = &mix.mixture;
                let edited = pair.replaced.add(&mix.scaled_noise);
                meta.snr_db = Some(snr);
                let pre = noisy.slice(0, s);
                let post = noisy.slice(e, n);
                (
                    TaskMaterials {
                        inputs: PromptInputs::Nse {
                            pre: pre.clone(),
                            mid: noisy.slice(s, e),
                            post: post.clone(),
                        },
                        target: vec![pre, edited.slice(s, e), post],
                        text: pair.replaced_text.clone(),
                        meta,
                    },
                    EvalReferences {
                        baseline: noisy.clone(),
                        reference: edited,
                        speaker: Some(pair.original),
                        interferer: None,
                    },
                )
            }
        }
    };
    Ok(out)
}
