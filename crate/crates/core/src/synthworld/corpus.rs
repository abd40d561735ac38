use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, SpeakerTemplate, SymbolSeq, SynthError, SynthUtterance, Waveform, SAMPLE_RATE};
use crate::util::{atomic_write, derive_seed, rng_for};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_symbols: usize,
    pub max_symbols: usize,
    /// Fraction of speakers held out for the test split.
    pub test_speaker_fraction: f64,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            num_speakers: 100,
            utterances_per_speaker: 20,
            min_symbols: 4,
            max_symbols: 10,
            test_speaker_fraction: 0.2,
            min_duration: 0.4,
            max_duration: 1.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |field: &str, msg: &str| Err((field.to_string(), msg.to_string()));
        if self.num_speakers < 2 {
            return fail("num_speakers", "need at least two speakers");
        }
        if self.utterances_per_speaker == 0 {
            return fail("utterances_per_speaker", "must be positive");
        }
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return fail("min_symbols", "need 1 <= min_symbols <= max_symbols");
        }
        if !(self.test_speaker_fraction > 0.0 && self.test_speaker_fraction < 1.0) {
            return fail("test_speaker_fraction", "must lie in (0, 1)");
        }
        if !(self.min_duration >= 0.0 && self.min_duration <= self.max_duration) {
            return fail("min_duration", "need 0 <= min_duration <= max_duration");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// First manifest line; describes how the waveform files are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub format: String,
    pub sample_rate: u32,
    pub config: CorpusConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker_id: String,
    pub symbols: Vec<u8>,
    pub duration: f64,
    pub split: Split,
    /// Waveform path relative to the manifest directory.
    pub path: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<UtteranceRecord>,
    /// Directory holding the manifest; record paths resolve against it.
    pub root: PathBuf,
}

impl Manifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| SynthError::Config("empty manifest".into()))?,
        )?;
        let records = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<UtteranceRecord>, _>>()?;
        Ok(Self {
            header,
            records,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn read(&self, record: &UtteranceRecord) -> Result<Waveform> {
        read_waveform(&self.root.join(&record.path))
    }

    pub fn speaker(&self, speaker_id: &str) -> SpeakerTemplate {
        SpeakerTemplate::from_seed(self.header.config.seed, speaker_id)
    }

    pub fn utterance(&self, record: &UtteranceRecord) -> SynthUtterance {
        SynthUtterance {
            id: record.id.clone(),
            speaker: self.speaker(&record.speaker_id),
            content: SymbolSeq(record.symbols.clone()),
            seed: record.seed,
        }
    }
}

pub fn write_waveform(path: &Path, wave: &Waveform) -> Result<()> {
    let mut bytes = Vec::with_capacity(wave.len() * 4);
    for &x in &wave.samples {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)?;
    Ok(())
}

pub fn read_waveform(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(SynthError::Config(format!(
            "{} is not a whole number of f32 samples",
            path.display()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

/// The corpus as records plus the utterances that render them, without I/O.
pub fn plan_corpus(config: &CorpusConfig) -> Result<Vec<(UtteranceRecord, SynthUtterance)>> {
    config
        .validate()
        .map_err(|(field, msg)| SynthError::Config(format!("{field}: {msg}")))?;
    let mut speaker_ids: Vec<String> = (0..config.num_speakers).map(|j| format!("spk{j:04}")).collect();
    let mut order = speaker_ids.clone();
    order.shuffle(&mut rng_for(config.seed, "split"));
    let n_test = ((config.num_speakers as f64 * config.test_speaker_fraction).ceil() as usize)
        .clamp(1, config.num_speakers - 1);
    let test: Vec<String> = order[..n_test].to_vec();

    let mut planned = Vec::new();
    for speaker_id in speaker_ids.drain(..) {
        let speaker = SpeakerTemplate::from_seed(config.seed, &speaker_id);
        let split = if test.contains(&speaker_id) {
            Split::Test
        } else {
            Split::Train
        };
        for u in 0..config.utterances_per_speaker {
            let id = format!("{speaker_id}_utt{u:03}");
            let mut rng = rng_for(config.seed, &format!("content/{id}"));
            let n = rng.random_range(config.min_symbols..=config.max_symbols);
            let content = SymbolSeq((0..n).map(|_| rng.random_range(0..16u8)).collect());
            let duration = content.duration_seconds();
            if duration < config.min_duration - 1e-12 || duration > config.max_duration + 1e-12 {
                continue;
            }
            let seed = derive_seed(config.seed, &format!("utterance/{id}"));
            let record = UtteranceRecord {
                id: id.clone(),
                speaker_id: speaker_id.clone(),
                symbols: content.0.clone(),
                duration,
                split,
                path: format!("wav/{id}.f32"),
                seed,
            };
            let utt = SynthUtterance {
                id,
                speaker: speaker.clone(),
                content,
                seed,
            };
            planned.push((record, utt));
        }
    }
    Ok(planned)
}

/// Renders the corpus under `out_dir` and writes `manifest.jsonl` last.
pub fn build_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    let planned = plan_corpus(config)?;
    fs::create_dir_all(out_dir.join("wav"))?;
    planned
        .par_iter()
        .map(|(record, utt)| write_waveform(&out_dir.join(&record.path), &utt.render()?))
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        header: ManifestHeader {
            version: MANIFEST_VERSION,
            format: "f32le".into(),
            sample_rate: SAMPLE_RATE,
            config: config.clone(),
        },
        records: planned.into_iter().map(|(r, _)| r).collect(),
        root: out_dir.to_path_buf(),
    };
    atomic_write(&out_dir.join(MANIFEST_FILE), manifest.to_jsonl()?.as_bytes())?;
    Ok(manifest)
}
