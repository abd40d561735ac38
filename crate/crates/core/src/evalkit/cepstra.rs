use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::synthworld::Waveform;

pub const CEPSTRA_FRAME: usize = 256;
pub const CEPSTRA_HOP: usize = 80;
pub const MEL_FILTERS: usize = 24;
/// Highest cepstral index kept; `c0` is stored but ignored by [`mcd`].
pub const CEPSTRA_ORDER: usize = 13;

/// Mel-cepstra `c0..=c13` per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CepstraSeq {
    pub frames: Vec<Vec<f64>>,
    /// Frame start times in seconds.
    pub times: Vec<f64>,
}

impl CepstraSeq {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn order(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len().saturating_sub(1))
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

struct Analysis {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// `MEL_FILTERS x (CEPSTRA_FRAME / 2 + 1)` triangular weights.
    filters: Vec<Vec<f64>>,
}

fn analysis(sample_rate: u32) -> &'static Analysis {
    static CACHE: OnceLock<(u32, Analysis)> = OnceLock::new();
    let (rate, a) = CACHE.get_or_init(|| {
        let bins = CEPSTRA_FRAME / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..MEL_FILTERS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (MEL_FILTERS + 1) as f64))
            .collect();
        let filters = (0..MEL_FILTERS)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * sample_rate as f64 / CEPSTRA_FRAME as f64;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        let window = (0..CEPSTRA_FRAME)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / CEPSTRA_FRAME as f64).cos())
            .collect();
        (
            sample_rate,
            Analysis {
                fft: FftPlanner::new().plan_fft_forward(CEPSTRA_FRAME),
                window,
                filters,
            },
        )
    });
    assert_eq!(*rate, sample_rate, "cepstral analysis is fixed to one sample rate");
    a
}

/// Hann-windowed 256-sample frames every 80 samples, power spectrum, 24
/// triangular mel filters up to Nyquist, natural log, orthonormal DCT-II.
/// Signals shorter than one frame are zero-padded to one frame.
pub fn cepstra(wave: &Waveform) -> Result<CepstraSeq> {
    if wave.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let a = analysis(wave.sample_rate);
    let n_frames = if wave.len() <= CEPSTRA_FRAME {
        1
    } else {
        1 + (wave.len() - CEPSTRA_FRAME) / CEPSTRA_HOP
    };
    let mut frames = Vec::with_capacity(n_frames);
    let mut times = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); CEPSTRA_FRAME];
    for f in 0..n_frames {
        let start = f * CEPSTRA_HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            let x = wave.samples.get(start + i).copied().unwrap_or(0.0);
            *b = Complex::new(x * a.window[i], 0.0);
        }
        a.fft.process(&mut buf);
        let power: Vec<f64> = buf[..CEPSTRA_FRAME / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> = a
            .filters
            .iter()
            .map(|w| w.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>().max(1e-10).ln())
            .collect();
        let m = MEL_FILTERS as f64;
        let coeffs = (0..=CEPSTRA_ORDER)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                scale
                    * log_mel
                        .iter()
                        .enumerate()
                        .map(|(j, v)| v * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                        .sum::<f64>()
            })
            .collect();
        frames.push(coeffs);
        times.push(start as f64 / wave.sample_rate as f64);
    }
    Ok(CepstraSeq { frames, times })
}

const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10;

fn frame_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a[1..].iter().zip(&b[1..]).map(|(x, y)| (x - y).powi(2)).sum()
}

/// DTW path with squared-Euclidean cost over `c1..`, symmetric step pattern
/// (diagonal, horizontal, vertical). Ties prefer diagonal, then advancing `a`.
fn dtw_path(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let cost = frame_distance_sq(&a[i], &b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + cost;
        }
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        path.push((i, j));
    }
    path.reverse();
    path
}

fn mcd_directed(a: &CepstraSeq, b: &CepstraSeq) -> f64 {
    let path = dtw_path(&a.frames, &b.frames);
    let total: f64 = path
        .iter()
        .map(|&(i, j)| MCD_SCALE * (2.0 * frame_distance_sq(&a.frames[i], &b.frames[j])).sqrt())
        .sum();
    total / path.len() as f64
}

/// Mel-cepstral distortion in dB over the DTW alignment, excluding `c0`:
/// mean of `(10 / ln 10) * sqrt(2 * sum_d (a_d - b_d)^2)` along the path.
/// The result averages both argument orders so it is exactly symmetric.
pub fn mcd(a: &CepstraSeq, b: &CepstraSeq) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let d = a.frames[0].len();
    if a.frames.iter().chain(&b.frames).any(|f| f.len() != d) || d < 2 {
        return Err(EvalError::Dimension {
            left: a.order(),
            right: b.order(),
        });
    }
    Ok(0.5 * (mcd_directed(a, b) + mcd_directed(b, a)))
}
