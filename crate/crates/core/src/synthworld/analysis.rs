//! Model-free inversion of the synthetic world: symbol recognition and
//! speaker embedding over the 100 ms symbol grid.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{
    symbol_frequency, Result, SymbolSeq, SynthError, Waveform, ALPHABET_SIZE,
    HARMONIC_CEILING_HZ, NUM_BANDS, SAMPLE_RATE, SYMBOL_SAMPLES,
};

const BIN_HZ: f64 = SAMPLE_RATE as f64 / SYMBOL_SAMPLES as f64;
/// Peak search covers f(0) - 15 Hz .. f(15) + 15 Hz.
const SEARCH_LO_BIN: usize = 11;
const SEARCH_HI_BIN: usize = 58;
/// A segment is trusted when its peak stands this far above the median bin.
const RELIABLE_PEAK_RATIO: f64 = 4.0;
const MIN_EMBED_SAMPLES: usize = 2400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reliability {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentAnalysis {
    pub symbols: SymbolSeq,
    pub reliability: Vec<Reliability>,
}

struct Segment {
    magnitudes: Vec<f64>,
    peak_bin: usize,
    symbol: u8,
    reliability: Reliability,
}

fn fft() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(SYMBOL_SAMPLES))
        .clone()
}

fn hann() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        (0..SYMBOL_SAMPLES)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / SYMBOL_SAMPLES as f64).cos())
            .collect()
    })
}

fn nearest_symbol(freq: f64) -> u8 {
    let mut best = 0u8;
    let mut best_dist = f64::INFINITY;
    for k in 0..ALPHABET_SIZE as u8 {
        let dist = (symbol_frequency(k) - freq).abs();
        if dist < best_dist {
            best = k;
            best_dist = dist;
        }
    }
    best
}

fn analyze_segment(samples: &[f64]) -> Segment {
    let window = hann();
    let mut buf: Vec<Complex<f64>> = (0..SYMBOL_SAMPLES)
        .map(|n| Complex::new(samples.get(n).copied().unwrap_or(0.0) * window[n], 0.0))
        .collect();
    fft().process(&mut buf);
    let magnitudes: Vec<f64> = buf[..SYMBOL_SAMPLES / 2].iter().map(|c| c.norm()).collect();

    let mut peak_bin = SEARCH_LO_BIN;
    for bin in SEARCH_LO_BIN..=SEARCH_HI_BIN {
        if magnitudes[bin] > magnitudes[peak_bin] {
            peak_bin = bin;
        }
    }
    let mut sorted: Vec<f64> = magnitudes[SEARCH_LO_BIN..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let peak = magnitudes[peak_bin];
    let reliability = if peak > 1e-9 && peak > RELIABLE_PEAK_RATIO * median {
        Reliability::High
    } else {
        Reliability::Low
    };
    Segment {
        symbol: nearest_symbol(peak_bin as f64 * BIN_HZ),
        magnitudes,
        peak_bin,
        reliability,
    }
}

/// Full segments plus a trailing partial one when it covers at least half a symbol.
fn segments(wave: &Waveform) -> Vec<Segment> {
    let full = wave.len() / SYMBOL_SAMPLES;
    let rest = wave.len() % SYMBOL_SAMPLES;
    let count = full + usize::from(rest >= SYMBOL_SAMPLES / 2);
    (0..count)
        .map(|i| {
            let start = i * SYMBOL_SAMPLES;
            let end = (start + SYMBOL_SAMPLES).min(wave.len());
            analyze_segment(&wave.samples[start..end])
        })
        .collect()
}

/// Recognizes one symbol per 100 ms segment from its spectral peak.
///
/// The strongest bin inside the symbol range is mapped to the nearest symbol
/// frequency (ties to the lower symbol). Segments whose peak does not rise
/// clearly above the median bin, silence included, are flagged `Low`.
pub fn analyze_content(wave: &Waveform) -> Result<ContentAnalysis> {
    if wave.len() < SYMBOL_SAMPLES {
        return Err(SynthError::TooShort {
            got: wave.len(),
            need: SYMBOL_SAMPLES,
        });
    }
    let segs = segments(wave);
    Ok(ContentAnalysis {
        symbols: SymbolSeq(segs.iter().map(|s| s.symbol).collect()),
        reliability: segs.iter().map(|s| s.reliability).collect(),
    })
}

/// Mean harmonic-amplitude profile over reliable segments, unit L2 norm.
///
/// Band `h` averages the magnitude at `h * f0` over the segments where that
/// harmonic lies below the synthesis ceiling. With no usable segment the
/// embedding falls back to the flat vector.
pub fn speaker_embed(wave: &Waveform) -> Result<[f64; NUM_BANDS]> {
    if wave.len() < MIN_EMBED_SAMPLES {
        return Err(SynthError::TooShort {
            got: wave.len(),
            need: MIN_EMBED_SAMPLES,
        });
    }
    let mut sums = [0.0f64; NUM_BANDS];
    let mut counts = [0usize; NUM_BANDS];
    for seg in segments(wave) {
        if seg.reliability == Reliability::Low {
            continue;
        }
        let f0 = symbol_frequency(seg.symbol);
        let f0_bin = (f0 / BIN_HZ).round() as usize;
        debug_assert!(seg.peak_bin.abs_diff(f0_bin) <= 1);
        for h in 0..NUM_BANDS {
            if f0 * (h + 1) as f64 >= HARMONIC_CEILING_HZ {
                break;
            }
            sums[h] += seg.magnitudes[f0_bin * (h + 1)];
            counts[h] += 1;
        }
    }
    let mut embedding = [0.0; NUM_BANDS];
    for h in 0..NUM_BANDS {
        if counts[h] > 0 {
            embedding[h] = sums[h] / counts[h] as f64;
        }
    }
    let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return Ok([1.0 / (NUM_BANDS as f64).sqrt(); NUM_BANDS]);
    }
    for x in &mut embedding {
        *x /= norm;
    }
    Ok(embedding)
}
