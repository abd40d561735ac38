use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Result, SynthError, Waveform, NUM_BANDS, SAMPLE_RATE};
use crate::util::rng_for;

pub const NOISE_TEMPLATES: usize = 32;
/// Templates `[0, TRAIN_NOISE_TEMPLATES)` are for training, the rest for evaluation.
pub const TRAIN_NOISE_TEMPLATES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub template_id: usize,
    pub gain: f64,
}

/// Seeded bank of band-shape templates over eight equal 500 Hz bands.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub templates: Vec<[f64; NUM_BANDS]>,
}

impl NoiseBank {
    pub fn new(corpus_seed: u64) -> Self {
        let templates = (0..NOISE_TEMPLATES)
            .map(|i| {
                let mut rng = rng_for(corpus_seed, &format!("noise-template/{i}"));
                let mut shape = [0.0; NUM_BANDS];
                for g in &mut shape {
                    let u: f64 = rng.random();
                    *g = 0.05 + u * u;
                }
                let peak = rng.random_range(0..NUM_BANDS);
                shape[peak] += 1.5;
                shape
            })
            .collect();
        Self { templates }
    }

    pub fn train_ids() -> std::ops::Range<usize> {
        0..TRAIN_NOISE_TEMPLATES
    }

    pub fn eval_ids() -> std::ops::Range<usize> {
        TRAIN_NOISE_TEMPLATES..NOISE_TEMPLATES
    }
}

/// Shapes seeded white noise by the template's band gains; RMS equals `spec.gain`.
pub fn generate_noise(bank: &NoiseBank, spec: &NoiseSpec, len: usize, seed: u64) -> Result<Waveform> {
    let shape = bank
        .templates
        .get(spec.template_id)
        .ok_or_else(|| SynthError::Config(format!("noise template {} out of range", spec.template_id)))?;
    if len == 0 || spec.gain <= 0.0 {
        return Err(SynthError::DegenerateNoise);
    }
    let mut rng = rng_for(seed, &format!("noise/{}", spec.template_id));
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let band_hz = SAMPLE_RATE as f64 / 2.0 / NUM_BANDS as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let mirrored = k.min(len - k);
        let freq = mirrored as f64 * SAMPLE_RATE as f64 / len as f64;
        let band = ((freq / band_hz) as usize).min(NUM_BANDS - 1);
        *c *= shape[band];
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut samples: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    if rms <= 0.0 {
        return Err(SynthError::DegenerateNoise);
    }
    for x in &mut samples {
        *x *= spec.gain / rms;
    }
    Ok(Waveform::new(samples, SAMPLE_RATE))
}
