use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::nearest;
use super::{CodecConfig, CodecError, CodecModel, Result};
use crate::synthworld::{
    generate_noise, mix_at_snr, Manifest, NoiseBank, NoiseSpec, Split, Waveform,
};
use crate::util::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecTrainConfig {
    pub steps: usize,
    pub batch_frames: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    /// Codewords unassigned for this many steps are re-seeded from the batch.
    pub dead_code_steps: usize,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_frames: 256,
            learning_rate: 1e-3,
            ema_decay: 0.99,
            dead_code_steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecStepLog {
    pub step: usize,
    /// Reconstruction MSE plus weighted commitment, measured before the update.
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
}

/// Training material for the codec: every clean training utterance, plus one
/// augmented view each (noisy mixture, noise alone, or two-speaker mixture),
/// so the code space covers every kind of signal the prompts carry.
pub fn training_waveforms(manifest: &Manifest, seed: u64) -> Result<Vec<Waveform>> {
    let records: Vec<_> = manifest.split(Split::Train).collect();
    if records.is_empty() {
        return Err(CodecError::EmptyCorpus);
    }
    let bank = NoiseBank::new(manifest.header.config.seed);
    let mut rng = rng_for(seed, "codec/augment");
    let train_ids: Vec<usize> = NoiseBank::train_ids().collect();
    let mut out = Vec::with_capacity(records.len() * 2);
    for (i, record) in records.iter().enumerate() {
        let clean = manifest.read(record)?;
        let noise_seed = derive_seed(seed, &format!("codec/noise/{}", record.id));
        let spec = NoiseSpec {
            template_id: *train_ids.choose(&mut rng).expect("train templates"),
            gain: 1.0,
        };
        let noise = generate_noise(&bank, &spec, clean.len(), noise_seed)?;
        let augmented = match i % 3 {
            0 => mix_at_snr(&clean, &noise, rng.random_range(-5.0..20.0))?.mixture,
            1 => {
                let level = rng.random_range(0.05..0.3);
                let rms = noise.power().sqrt();
                Waveform::new(noise.samples.iter().map(|x| x * level / rms).collect(), clean.sample_rate)
            }
            _ => {
                let other = records[rng.random_range(0..records.len())];
                let interferer = manifest.read(other)?.fit_to(clean.len());
                if interferer.power() > 0.0 {
                    mix_at_snr(&clean, &interferer, rng.random_range(-5.0..5.0))?.mixture
                } else {
                    clean.clone()
                }
            }
        };
        out.push(clean);
        out.push(augmented);
    }
    Ok(out)
}

struct Adam {
    m: Array2<f32>,
    v: Array2<f32>,
}

impl Adam {
    fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    fn step(&mut self, param: &mut Array2<f32>, grad: &Array2<f32>, lr: f64, t: usize) {
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        self.m.zip_mut_with(grad, |m, g| *m = b1 * *m + (1.0 - b1) * g);
        self.v.zip_mut_with(grad, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        let lr = lr as f32;
        ndarray::Zip::from(param)
            .and(&self.m)
            .and(&self.v)
            .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
    }
}

/// Running codebook statistics for the exponential-moving-average update.
struct EmaState {
    counts: Vec<Array1<f32>>,
    sums: Vec<Array2<f32>>,
    last_used: Vec<Vec<usize>>,
}

fn sample_batch(pool: &Array2<f32>, size: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..pool.nrows())).collect();
    pool.select(Axis(0), &idx)
}

/// Frames with any energy; all-zero padding frames carry no training signal.
fn frame_pool(model: &CodecModel, waves: &[Waveform]) -> Result<Array2<f32>> {
    let mut rows = Vec::new();
    let window = model.config.window;
    for w in waves {
        if w.sample_rate != model.config.sample_rate {
            return Err(CodecError::RateError {
                expected: model.config.sample_rate,
                got: w.sample_rate,
            });
        }
        let frames = model.frames(&w.samples);
        for row in frames.outer_iter() {
            if row.iter().any(|&x| x != 0.0) {
                rows.extend(row.iter().copied());
            }
        }
    }
    if rows.is_empty() {
        return Err(CodecError::EmptyCorpus);
    }
    Ok(Array2::from_shape_vec((rows.len() / window, window), rows).expect("frame pool shape"))
}

/// Trains a codec on the training split of `manifest`.
pub fn train_codec(
    manifest: &Manifest,
    config: &CodecConfig,
    train: &CodecTrainConfig,
) -> Result<(CodecModel, Vec<CodecStepLog>)> {
    let waves = training_waveforms(manifest, train.seed)?;
    train_on_waveforms(&waves, config, train)
}

/// Minimizes frame MSE plus weighted commitment with a straight-through
/// quantizer. Transforms follow Adam; codebooks follow assignment EMAs.
pub fn train_on_waveforms(
    waves: &[Waveform],
    config: &CodecConfig,
    train: &CodecTrainConfig,
) -> Result<(CodecModel, Vec<CodecStepLog>)> {
    let mut model = CodecModel::init(config.clone(), train.seed)?;
    if waves.is_empty() {
        return Err(CodecError::EmptyCorpus);
    }
    let pool = frame_pool(&model, waves)?;
    let mut logs = Vec::with_capacity(train.steps);
    if train.steps == 0 {
        return Ok((model, logs));
    }
    let mut rng = rng_for(train.seed, "codec/train");
    let (d, w) = (config.latent_dim, config.window);
    let mut adam_a = Adam::new((d, w));
    let mut adam_s = Adam::new((w, d));

    init_codebooks(&mut model, &pool, &mut rng);
    let mut ema = EmaState {
        counts: (0..config.num_layers).map(|_| Array1::ones(config.codebook_size)).collect(),
        sums: model.codebooks.clone(),
        last_used: vec![vec![0; config.codebook_size]; config.num_layers],
    };
    let beta = config.commitment_weight as f32;

    for step in 0..train.steps {
        let x = sample_batch(&pool, train.batch_frames, &mut rng);
        let b = x.nrows();
        let z = x.dot(&model.analysis.t());
        let mut q = Array2::<f32>::zeros(z.raw_dim());
        let mut assignments = Vec::with_capacity(b);
        for (t, row) in z.outer_iter().enumerate() {
            let quant = model.quantize(row);
            q.row_mut(t).assign(&quant.quantized);
            assignments.push(quant);
        }
        let y = q.dot(&model.synthesis.t());
        let diff = &y - &x;
        let recon = diff.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / (b * w) as f64;
        let zq = &z - &q;
        let commit = zq.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / (b * d) as f64;
        logs.push(CodecStepLog {
            step,
            loss: recon + config.commitment_weight * commit,
            reconstruction: recon,
            commitment: commit,
        });

        let dy = diff.mapv(|v| 2.0 * v / (b * w) as f32);
        let ds = dy.t().dot(&q);
        let dz = dy.dot(&model.synthesis) + &zq.mapv(|v| 2.0 * beta * v / (b * d) as f32);
        let da = dz.t().dot(&x);
        adam_a.step(&mut model.analysis, &da, train.learning_rate, step + 1);
        adam_s.step(&mut model.synthesis, &ds, train.learning_rate, step + 1);

        update_codebooks(&mut model, &mut ema, &assignments, train, step, &mut rng);
        model.pin_zero_codewords();
        if logs.last().is_some_and(|l| !l.loss.is_finite()) {
            return Err(CodecError::NonFinite);
        }
    }
    Ok((model, logs))
}

/// Seeds codewords `1..V` of each layer from residuals of a data sample,
/// layer by layer.
fn init_codebooks(model: &mut CodecModel, pool: &Array2<f32>, rng: &mut ChaCha8Rng) {
    let n = (model.config.codebook_size * 8).min(pool.nrows().max(1) * 4);
    let x = sample_batch(pool, n, rng);
    let mut residual = x.dot(&model.analysis.t());
    for l in 0..model.config.num_layers {
        for k in 1..model.config.codebook_size {
            let row = residual.row(rng.random_range(0..residual.nrows())).to_owned();
            model.codebooks[l].row_mut(k).assign(&row);
        }
        let cb = &model.codebooks[l];
        let mut next = residual.clone();
        for (t, row) in residual.outer_iter().enumerate() {
            let (code, _) = nearest(cb, row);
            next.row_mut(t).scaled_add(-1.0, &cb.row(code as usize));
        }
        residual = next;
    }
}

fn update_codebooks(
    model: &mut CodecModel,
    ema: &mut EmaState,
    assignments: &[super::model::Quantized],
    train: &CodecTrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) {
    let decay = train.ema_decay as f32;
    let (size, dim) = (model.config.codebook_size, model.config.latent_dim);
    for l in 0..model.config.num_layers {
        let mut counts = Array1::<f32>::zeros(size);
        let mut sums = Array2::<f32>::zeros((size, dim));
        for a in assignments {
            let k = a.codes[l] as usize;
            counts[k] += 1.0;
            sums.row_mut(k).scaled_add(1.0, &a.residuals[l]);
            ema.last_used[l][k] = step;
        }
        ema.counts[l].zip_mut_with(&counts, |c, n| *c = decay * *c + (1.0 - decay) * n);
        ema.sums[l].zip_mut_with(&sums, |s, v| *s = decay * *s + (1.0 - decay) * v);
        let total: f32 = ema.counts[l].sum();
        let eps = 1e-5f32;
        for k in 1..size {
            let smoothed = (ema.counts[l][k] + eps) / (total + size as f32 * eps) * total;
            let word = ema.sums[l].row(k).mapv(|v| v / smoothed);
            model.codebooks[l].row_mut(k).assign(&word);
            if step - ema.last_used[l][k] >= train.dead_code_steps {
                let a = &assignments[rng.random_range(0..assignments.len())];
                let fresh = a.residuals[l].clone();
                model.codebooks[l].row_mut(k).assign(&fresh);
                ema.counts[l][k] = 1.0;
                ema.sums[l].row_mut(k).assign(&fresh);
                ema.last_used[l][k] = step;
            }
        }
    }
}

/// `10 log10(sum x^2 / sum (x - decode(encode(x)))^2)` pooled over `waves`.
pub fn reconstruction_snr(model: &CodecModel, waves: &[Waveform]) -> Result<f64> {
    let (mut signal, mut error) = (0.0f64, 0.0f64);
    for w in waves {
        let y = model.decode(&model.encode(w)?)?;
        for (a, b) in w.samples.iter().zip(&y.samples) {
            signal += a * a;
            error += (a - b) * (a - b);
        }
    }
    Ok(10.0 * (signal / error.max(1e-30)).log10())
}
