use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    symbol_frequency, Result, SymbolSeq, SynthError, Waveform, ALPHABET_SIZE,
    HARMONIC_CEILING_HZ, NUM_BANDS, SAMPLE_RATE, SYMBOL_SAMPLES,
};
use crate::util::rng_for;

/// Peak-ish amplitude scale of a synthesized utterance.
const AMPLITUDE: f64 = 0.3;
/// Raised-cosine ramp at each end of a segment; two ramps form a 10 ms crossfade.
pub(crate) const FADE_SAMPLES: usize = 40;
/// Excitation noise power relative to the segment power (-30 dB).
const EXCITATION_REL_POWER: f64 = 1e-3;

/// Speaker identity: gains of the first eight harmonics, unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTemplate {
    pub id: String,
    pub envelope: [f64; NUM_BANDS],
}

impl SpeakerTemplate {
    /// Draws the template for `id` under `corpus_seed`.
    ///
    /// The fundamental always carries the largest gain so the spectral peak
    /// inside the symbol range is the fundamental itself.
    pub fn from_seed(corpus_seed: u64, id: &str) -> Self {
        let mut rng = rng_for(corpus_seed, &format!("speaker/{id}"));
        let mut envelope = [0.0; NUM_BANDS];
        envelope[0] = 1.0;
        for gain in envelope.iter_mut().skip(1) {
            let u: f64 = rng.random();
            *gain = 0.02 + 0.85 * u * u;
        }
        let norm = envelope.iter().map(|g| g * g).sum::<f64>().sqrt();
        for g in &mut envelope {
            *g /= norm;
        }
        Self {
            id: id.to_string(),
            envelope,
        }
    }

    pub fn is_valid(&self) -> bool {
        let norm = self.envelope.iter().map(|g| g * g).sum::<f64>().sqrt();
        (norm - 1.0).abs() <= 1e-6 && self.envelope.iter().all(|g| *g >= 0.0 && g.is_finite())
    }
}

/// Speaker plus content plus the seed of its excitation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: SpeakerTemplate,
    pub content: SymbolSeq,
    pub seed: u64,
}

impl SynthUtterance {
    pub fn render(&self) -> Result<Waveform> {
        synthesize(&self.speaker, &self.content, self.seed)
    }
}

fn fade_gain(n: usize) -> f64 {
    let edge = n.min(SYMBOL_SAMPLES - 1 - n);
    if edge >= FADE_SAMPLES {
        1.0
    } else {
        0.5 - 0.5 * (PI * (edge as f64 + 0.5) / FADE_SAMPLES as f64).cos()
    }
}

/// Renders `content` in the voice of `speaker`.
///
/// Each symbol is an independent 800-sample segment whose harmonics start at
/// phase zero. Excitation noise is seeded per segment index, so two contents
/// that agree on a segment render that segment identically.
pub fn synthesize(speaker: &SpeakerTemplate, content: &SymbolSeq, seed: u64) -> Result<Waveform> {
    if content.is_empty() || content.0.iter().any(|&s| s as usize >= ALPHABET_SIZE) {
        return Err(SynthError::InvalidContent);
    }
    if !speaker.is_valid() {
        return Err(SynthError::InvalidContent);
    }
    let mut samples = Vec::with_capacity(content.len() * SYMBOL_SAMPLES);
    for (index, &symbol) in content.0.iter().enumerate() {
        let f0 = symbol_frequency(symbol);
        let mut segment = vec![0.0f64; SYMBOL_SAMPLES];
        for (h, gain) in speaker.envelope.iter().enumerate() {
            let freq = f0 * (h + 1) as f64;
            if freq >= HARMONIC_CEILING_HZ {
                break;
            }
            let step = 2.0 * PI * freq / SAMPLE_RATE as f64;
            for (n, x) in segment.iter_mut().enumerate() {
                *x += AMPLITUDE * gain * (step * n as f64).sin();
            }
        }
        let power = segment.iter().map(|x| x * x).sum::<f64>() / SYMBOL_SAMPLES as f64;
        let std = (power * EXCITATION_REL_POWER).sqrt();
        let mut rng = rng_for(seed, &format!("excitation/{index}"));
        for (n, x) in segment.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *x = (*x + std * e) * fade_gain(n);
        }
        samples.extend_from_slice(&segment);
    }
    Ok(Waveform::new(samples, SAMPLE_RATE))
}
