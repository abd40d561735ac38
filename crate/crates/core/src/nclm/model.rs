use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::sequence::{special_row, table_rows, LmItem, SequenceBatch};
use super::{positional_encoding, ModelConfig, NclmError, Result};
use crate::prompting::Special;
use crate::util::rng_for;

const MASK_VALUE: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmKind {
    /// Causal; predicts layer-1 codes and `<eos>`.
    Ar,
    /// Bidirectional; predicts layer `l >= 2` from the layers below.
    Nar,
}

/// One transformer language model (AR or NAR) with its parameters.
#[derive(Debug, Clone)]
pub struct CodecLm {
    pub config: ModelConfig,
    pub kind: LmKind,
    pub params: ParamStore,
    pe: Tensor,
}

/// Mean cross-entropy of `logits` (`N x V`) against `targets`, in nats.
pub fn mean_nll(logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
    let t = Tensor::from_vec(targets.to_vec(), targets.len(), logits.device())?;
    Ok(candle_nn::loss::cross_entropy(logits, &t)?)
}

fn layer_norm(x: &Tensor, g: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
    Ok(xn.broadcast_mul(g)?.broadcast_add(b)?)
}

impl CodecLm {
    pub fn new(config: ModelConfig, kind: LmKind, seed: u64, dtype: DType) -> Result<Self> {
        config
            .validate()
            .map_err(|(f, m)| NclmError::Config(format!("{f}: {m}")))?;
        let mut rng = rng_for(seed, &format!("nclm/init/{kind:?}"));
        let d = config.d_model;
        let std = config.init_std;
        let mut p = ParamStore::new(dtype);
        p.add_normal("embed.table", &[table_rows(&config), d], std, &mut rng)?;
        p.add_normal("embed.segment", &[3, d], std, &mut rng)?;
        if kind == LmKind::Nar {
            p.add_normal("embed.layer", &[config.num_layers, d], std, &mut rng)?;
        }
        for i in 0..config.depth {
            let n = |s: &str| format!("block{i}.{s}");
            p.add_const(&n("ln1.g"), &[d], 1.0)?;
            p.add_const(&n("ln1.b"), &[d], 0.0)?;
            p.add_normal(&n("attn.wqkv"), &[d, 3 * d], std, &mut rng)?;
            p.add_const(&n("attn.bqkv"), &[3 * d], 0.0)?;
            p.add_normal(&n("attn.wo"), &[d, d], std, &mut rng)?;
            p.add_const(&n("attn.bo"), &[d], 0.0)?;
            p.add_const(&n("ln2.g"), &[d], 1.0)?;
            p.add_const(&n("ln2.b"), &[d], 0.0)?;
            p.add_normal(&n("ff.w1"), &[d, config.d_ff], std, &mut rng)?;
            p.add_const(&n("ff.b1"), &[config.d_ff], 0.0)?;
            p.add_normal(&n("ff.w2"), &[config.d_ff, d], std, &mut rng)?;
            p.add_const(&n("ff.b2"), &[d], 0.0)?;
        }
        p.add_const("final.ln.g", &[d], 1.0)?;
        p.add_const("final.ln.b", &[d], 0.0)?;
        let out = Self::output_size_for(&config, kind);
        p.add_normal("head.w", &[d, out], std, &mut rng)?;
        p.add_const("head.b", &[out], 0.0)?;

        let pe: Vec<f64> = (0..config.max_positions)
            .flat_map(|pos| positional_encoding(pos, d))
            .collect();
        let pe = Tensor::from_vec(pe, (config.max_positions, d), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(Self {
            config,
            kind,
            params: p,
            pe,
        })
    }

    fn output_size_for(config: &ModelConfig, kind: LmKind) -> usize {
        match kind {
            LmKind::Ar => config.codebook_size + 1,
            LmKind::Nar => config.codebook_size,
        }
    }

    pub fn output_size(&self) -> usize {
        Self::output_size_for(&self.config, self.kind)
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Independent copy of the parameters.
    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self {
            config: self.config.clone(),
            kind: self.kind,
            params: self.params.deep_clone()?,
            pe: self.pe.clone(),
        })
    }

    /// Sets the output projection to zero so every logit is 0.
    pub fn zero_output_head(&self) -> Result<()> {
        let d = self.config.d_model;
        let out = self.output_size();
        self.params.set_values("head.w", &vec![0.0; d * out])?;
        self.params.set_values("head.b", &vec![0.0; out])
    }

    /// Embedding-table rows of the task tokens introduced by multi-task training.
    pub fn task_token_rows(&self) -> Vec<usize> {
        Special::ALL
            .iter()
            .filter(|s| s.is_task_token())
            .map(|&s| special_row(s))
            .collect()
    }

    /// Redraws the task-token embedding rows; every other value is kept.
    pub fn reinit_task_tokens(&self, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.config.d_model;
        let mut table = self.params.values("embed.table")?;
        for row in self.task_token_rows() {
            for v in &mut table[row * d..(row + 1) * d] {
                *v = self.config.init_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.params.set_values("embed.table", &table)
    }

    fn dropout(&self, x: Tensor, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let p = self.config.dropout;
        let Some(rng) = rng.as_deref_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep as f32 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), &Device::Cpu)?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }

    fn embed(&self, batch: &SequenceBatch, nar_layer: Option<usize>) -> Result<Tensor> {
        let (b, s, k, d) = (batch.batch, batch.seq_len, batch.slots, self.config.d_model);
        let dev = Device::Cpu;
        let table = self.params.get("embed.table");
        let zero = Tensor::zeros((1, d), self.dtype(), &dev)?;
        let table = Tensor::cat(&[table, &zero], 0)?;
        let rows = Tensor::from_vec(batch.rows.clone(), b * s * k, &dev)?;
        let tokens = table.index_select(&rows, 0)?.reshape((b, s, k, d))?.sum(2)?;
        let pos = Tensor::from_vec(batch.positions.clone(), b * s, &dev)?;
        let pe = self.pe.index_select(&pos, 0)?.reshape((b, s, d))?;
        let seg = Tensor::from_vec(batch.segments.clone(), b * s, &dev)?;
        let seg = self
            .params
            .get("embed.segment")
            .index_select(&seg, 0)?
            .reshape((b, s, d))?;
        let mut x = ((tokens + pe)? + seg)?;
        if let Some(l) = nar_layer {
            let layer = self.params.get("embed.layer").narrow(0, l - 1, 1)?;
            x = x.broadcast_add(&layer)?;
        }
        Ok(x)
    }

    fn attention_mask(&self, batch: &SequenceBatch) -> Result<Tensor> {
        let s = batch.seq_len;
        let causal = self.kind == LmKind::Ar;
        let mut mask = Vec::with_capacity(batch.batch * s * s);
        for &len in &batch.lengths {
            for i in 0..s {
                for j in 0..s {
                    let blocked = j >= len || (causal && j > i);
                    mask.push(if blocked { MASK_VALUE as f32 } else { 0.0 });
                }
            }
        }
        Ok(Tensor::from_vec(mask, (batch.batch, 1, s, s), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    fn attention(&self, i: usize, h: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, s, d) = h.dims3()?;
        let heads = self.config.heads;
        let dh = d / heads;
        let p = |n: &str| self.params.get(&format!("block{i}.{n}"));
        let qkv = h.broadcast_matmul(p("attn.wqkv"))?.broadcast_add(p("attn.bqkv"))?;
        let split = |offset: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, offset, d)?
                .reshape((b, s, heads, dh))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let (q, k, v) = (split(0)?, split(d)?, split(2 * d)?);
        let scores = (q.matmul(&k.t()?)? * (1.0 / (dh as f64).sqrt()))?.broadcast_add(mask)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, s, d))?;
        Ok(out.broadcast_matmul(p("attn.wo"))?.broadcast_add(p("attn.bo"))?)
    }

    /// Final hidden states, `batch x seq_len x d_model`. Dropout is active
    /// only when an RNG is supplied.
    pub fn hidden(
        &self,
        batch: &SequenceBatch,
        nar_layer: Option<usize>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        match (self.kind, nar_layer) {
            (LmKind::Ar, None) => {}
            (LmKind::Nar, Some(l)) if (2..=self.config.num_layers).contains(&l) => {}
            (_, l) => {
                return Err(NclmError::LayerError {
                    layer: l.unwrap_or(0),
                    layers: self.config.num_layers,
                })
            }
        }
        let mut rng = dropout;
        let mask = self.attention_mask(batch)?;
        let mut x = self.embed(batch, nar_layer)?;
        x = self.dropout(x, &mut rng)?;
        for i in 0..self.config.depth {
            let p = |n: &str| self.params.get(&format!("block{i}.{n}"));
            let h = layer_norm(&x, p("ln1.g"), p("ln1.b"))?;
            let a = self.attention(i, &h, &mask)?;
            x = (x + self.dropout(a, &mut rng)?)?;
            let h = layer_norm(&x, p("ln2.g"), p("ln2.b"))?;
            let f = h
                .broadcast_matmul(p("ff.w1"))?
                .broadcast_add(p("ff.b1"))?
                .gelu()?
                .broadcast_matmul(p("ff.w2"))?
                .broadcast_add(p("ff.b2"))?;
            x = (x + self.dropout(f, &mut rng)?)?;
        }
        layer_norm(&x, self.params.get("final.ln.g"), self.params.get("final.ln.b"))
    }

    /// Logits at the batch's scored rows, `N x output_size`.
    pub fn logits(
        &self,
        batch: &SequenceBatch,
        nar_layer: Option<usize>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let h = self.hidden(batch, nar_layer, dropout)?;
        let d = self.config.d_model;
        let idx = Tensor::from_vec(batch.target_index.clone(), batch.target_index.len(), &Device::Cpu)?;
        let rows = h.reshape((batch.batch * batch.seq_len, d))?.index_select(&idx, 0)?;
        Ok(rows
            .matmul(self.params.get("head.w"))?
            .broadcast_add(self.params.get("head.b"))?)
    }

    fn expect_kind(&self, kind: LmKind) -> Result<()> {
        if self.kind != kind {
            return Err(NclmError::Config(format!("expected a {kind:?} model")));
        }
        Ok(())
    }

    /// Mean NLL per scored frame of layer-1 codes plus the closing `<eos>`.
    pub fn ar_loss(&self, items: &[LmItem<'_>], dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        self.expect_kind(LmKind::Ar)?;
        let batch = SequenceBatch::for_ar(&self.config, items, true)?;
        let logits = self.logits(&batch, None, dropout)?;
        mean_nll(&logits, &batch.target_ids)
    }

    /// Mean NLL per output frame of codec layer `l` (1-based, `2..=L`).
    pub fn nar_loss(&self, items: &[LmItem<'_>], l: usize, dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        self.expect_kind(LmKind::Nar)?;
        let batch = SequenceBatch::for_nar(&self.config, items, l, true)?;
        let logits = self.logits(&batch, Some(l), dropout)?;
        mean_nll(&logits, &batch.target_ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::AcousticTokenMatrix;
    use crate::prompting::PromptElement;
    use rand::SeedableRng;

    fn item_parts(seed: u64, cfg: &ModelConfig) -> (Vec<u32>, Vec<PromptElement>, AcousticTokenMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cfg.num_layers;
        let v = cfg.codebook_size as u32;
        let text: Vec<u32> = (0..3).map(|_| rng.random_range(0..16)).collect();
        let a = AcousticTokenMatrix::new(4, l, (0..4 * l).map(|_| rng.random_range(0..v)).collect());
        let o = AcousticTokenMatrix::new(3, l, (0..3 * l).map(|_| rng.random_range(0..v)).collect());
        (
            text,
            vec![PromptElement::Special(Special::Ns), PromptElement::Codes(a)],
            o,
        )
    }

    fn small() -> ModelConfig {
        ModelConfig {
            depth: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            num_layers: 4,
            codebook_size: 64,
            max_positions: 64,
            init_std: 0.3,
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let cfg = small();
        let (t, a, o) = item_parts(1, &cfg);
        let item = LmItem {
            text: &t,
            prompt: &a,
            target: &o,
        };
        let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 0, DType::F64).unwrap();
        ar.zero_output_head().unwrap();
        let loss: f64 = ar.ar_loss(&[item], None).unwrap().to_scalar().unwrap();
        assert!((loss - 65f64.ln()).abs() < 1e-6);
        assert!((65f64.ln() - 4.1744).abs() < 1e-4);
        let nar = CodecLm::new(cfg, LmKind::Nar, 0, DType::F64).unwrap();
        nar.zero_output_head().unwrap();
        for l in 2..=4 {
            let loss: f64 = nar.nar_loss(&[item], l, None).unwrap().to_scalar().unwrap();
            assert!((loss - 64f64.ln()).abs() < 1e-6);
        }
        assert!((64f64.ln() - 4.1589).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let targets = [2u32, 0, 1];
        let mut prev = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0] {
            let mut v = vec![0.0f64; 9];
            for (i, &t) in targets.iter().enumerate() {
                v[i * 3 + t as usize] = scale;
            }
            let logits = Tensor::from_vec(v, (3, 3), &Device::Cpu).unwrap();
            let loss: f64 = mean_nll(&logits, &targets).unwrap().to_scalar().unwrap();
            assert!(loss >= 0.0 && loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn loss_matches_plain_softmax_cross_entropy() {
        let cfg = small();
        let parts: Vec<_> = (0..3).map(|s| item_parts(s, &cfg)).collect();
        let items: Vec<LmItem> = parts
            .iter()
            .map(|(t, a, o)| LmItem {
                text: t,
                prompt: a,
                target: o,
            })
            .collect();
        let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 3, DType::F64).unwrap();
        let batch = SequenceBatch::for_ar(&cfg, &items, true).unwrap();
        let logits: Vec<Vec<f64>> = ar.logits(&batch, None, None).unwrap().to_vec2().unwrap();
        // Plain log-sum-exp cross-entropy, averaged over scored rows.
        let mut total = 0.0;
        for (row, &t) in logits.iter().zip(&batch.target_ids) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[t as usize];
        }
        let oracle = total / batch.target_ids.len() as f64;
        let loss: f64 = ar.ar_loss(&items, None).unwrap().to_scalar().unwrap();
        assert!((loss - oracle).abs() < 1e-6, "{loss} vs {oracle}");
        assert_eq!(batch.target_ids.len(), 3 * 4);
    }

    #[test]
    fn ar_logits_ignore_future_targets() {
        let cfg = small();
        let (t, a, o) = item_parts(5, &cfg);
        let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 1, DType::F32).unwrap();
        let base = SequenceBatch::for_ar(
            &cfg,
            &[LmItem {
                text: &t,
                prompt: &a,
                target: &o,
            }],
            true,
        )
        .unwrap();
        let base_logits: Vec<Vec<f32>> = ar.logits(&base, None, None).unwrap().to_vec2().unwrap();
        for changed in 0..o.num_frames() {
            let mut o2 = o.clone();
            o2.set(changed, 0, (o.get(changed, 0) + 1) % 64);
            let b2 = SequenceBatch::for_ar(
                &cfg,
                &[LmItem {
                    text: &t,
                    prompt: &a,
                    target: &o2,
                }],
                true,
            )
            .unwrap();
            let l2: Vec<Vec<f32>> = ar.logits(&b2, None, None).unwrap().to_vec2().unwrap();
            // Row r predicts frame r from frames < r: rows <= changed must not move.
            for r in 0..=changed {
                assert_eq!(base_logits[r], l2[r], "row {r} saw frame {changed}");
            }
            assert_ne!(base_logits[changed + 1], l2[changed + 1]);
        }
    }

    #[test]
    fn nar_is_bidirectional_and_conditioned_on_lower_layers() {
        let cfg = small();
        let (t, a, o) = item_parts(6, &cfg);
        let nar = CodecLm::new(cfg.clone(), LmKind::Nar, 2, DType::F32).unwrap();
        let run = |m: &AcousticTokenMatrix| -> Vec<Vec<f32>> {
            let b = SequenceBatch::for_nar(
                &cfg,
                &[LmItem {
                    text: &t,
                    prompt: &a,
                    target: m,
                }],
                2,
                true,
            )
            .unwrap();
            nar.logits(&b, Some(2), None).unwrap().to_vec2().unwrap()
        };
        let base = run(&o);
        let mut late = o.clone();
        late.set(2, 0, (o.get(2, 0) + 7) % 64);
        let changed = run(&late);
        // Frame 0 reacts to a change at frame 2.
        assert_ne!(base[0], changed[0]);
        // Target layer values do not leak into the input.
        let mut tgt = o.clone();
        tgt.set(1, 1, (o.get(1, 1) + 3) % 64);
        assert_eq!(base, run(&tgt));
    }

    #[test]
    fn prompt_frame_permutation_moves_only_those_rows() {
        let cfg = small();
        let (t, a, o) = item_parts(7, &cfg);
        let PromptElement::Codes(m) = &a[1] else { panic!() };
        let mut swapped = m.clone();
        for l in 0..4 {
            swapped.set(0, l, m.get(2, l));
            swapped.set(2, l, m.get(0, l));
        }
        let a2 = vec![a[0].clone(), PromptElement::Codes(swapped)];
        let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 1, DType::F64).unwrap();
        let emb = |prompt: &[PromptElement]| -> Vec<Vec<f64>> {
            let b = SequenceBatch::for_ar(
                &cfg,
                &[LmItem {
                    text: &t,
                    prompt,
                    target: &o,
                }],
                true,
            )
            .unwrap();
            let e = ar.embed(&b, None).unwrap();
            let pe = ar.pe.index_select(&Tensor::from_vec(b.positions.clone(), b.seq_len, &Device::Cpu).unwrap(), 0).unwrap();
            (e.squeeze(0).unwrap() - pe).unwrap().to_vec2().unwrap()
        };
        let e1 = emb(&a);
        let e2 = emb(&a2);
        // Prompt frames start after T(3), <sep>, <ns>.
        let (f0, f2) = (5, 7);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
        for r in 0..e1.len() {
            let expected = match r {
                r if r == f0 => &e1[f2],
                r if r == f2 => &e1[f0],
                _ => &e1[r],
            };
            assert!(close(expected, &e2[r]), "row {r}");
        }
        assert!(!close(&e1[f0], &e1[f2]));
    }

    #[test]
    fn nar_layer_sum_matches_hand_sum() {
        let cfg = small();
        let nar = CodecLm::new(cfg.clone(), LmKind::Nar, 4, DType::F64).unwrap();
        let o = AcousticTokenMatrix::new(1, 4, vec![3, 10, 20, 30]);
        let prompt = vec![PromptElement::Codes(AcousticTokenMatrix::new(1, 4, vec![1, 2, 3, 4]))];
        let b = SequenceBatch::for_nar(
            &cfg,
            &[LmItem {
                text: &[],
                prompt: &prompt,
                target: &o,
            }],
            4,
            true,
        )
        .unwrap();
        let e: Vec<Vec<f64>> = nar.embed(&b, Some(4)).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        let table = nar.params.values("embed.table").unwrap();
        let seg = nar.params.values("embed.segment").unwrap();
        let layer = nar.params.values("embed.layer").unwrap();
        let d = cfg.d_model;
        let row = |r: usize, k: usize| table[r * d + k];
        let last = b.seq_len - 1;
        let pe = positional_encoding(1, d);
        for k in 0..d {
            let hand = row(25 + 3, k) + row(25 + 64 + 10, k) + row(25 + 128 + 20, k)
                + pe[k]
                + seg[2 * d + k]
                + layer[3 * d + k];
            assert!((e[last][k] - hand).abs() < 1e-12);
        }
    }

    fn gradcheck_items(cfg: &ModelConfig) -> Vec<(Vec<u32>, Vec<PromptElement>, AcousticTokenMatrix)> {
        (0..2)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
                let l = cfg.num_layers;
                let v = cfg.codebook_size as u32;
                let text: Vec<u32> = (0..2 + seed as usize).map(|_| rng.random_range(0..16)).collect();
                let a = AcousticTokenMatrix::new(3, l, (0..3 * l).map(|_| rng.random_range(0..v)).collect());
                let o = AcousticTokenMatrix::new(2 + seed as usize, l, (0..(2 + seed as usize) * l).map(|_| rng.random_range(0..v)).collect());
                (text, vec![PromptElement::Special(Special::Sr), PromptElement::Codes(a)], o)
            })
            .collect()
    }

    /// Largest relative error between backprop and central differences.
    fn max_gradient_error(model: &CodecLm, loss: &dyn Fn(&CodecLm) -> Tensor) -> f64 {
        const EPS: f64 = 1e-5;
        const FLOOR: f64 = 1e-6;
        let grads = loss(model).backward().unwrap();
        let mut worst = 0.0f64;
        for name in model.params.names().to_vec() {
            let var = model.params.var(&name);
            let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
                None => vec![0.0; var.elem_count()],
            };
            let base = model.params.values(&name).unwrap();
            for i in 0..base.len() {
                let mut probe = base.clone();
                probe[i] = base[i] + EPS;
                model.params.set_values(&name, &probe).unwrap();
                let up: f64 = loss(model).to_scalar().unwrap();
                probe[i] = base[i] - EPS;
                model.params.set_values(&name, &probe).unwrap();
                let down: f64 = loss(model).to_scalar().unwrap();
                model.params.set_values(&name, &base).unwrap();
                let numeric = (up - down) / (2.0 * EPS);
                let a = analytic[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn ar_and_nar_gradients_match_finite_differences() {
        let cfg = ModelConfig::gradcheck();
        let parts = gradcheck_items(&cfg);
        let items: Vec<LmItem> = parts
            .iter()
            .map(|(t, a, o)| LmItem {
                text: t,
                prompt: a,
                target: o,
            })
            .collect();
        let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 11, DType::F64).unwrap();
        assert!(ar.params.num_parameters() <= 1000);
        let err = max_gradient_error(&ar, &|m| m.ar_loss(&items, None).unwrap());
        assert!(err < 1e-4, "AR max relative error {err}");
        let nar = CodecLm::new(cfg.clone(), LmKind::Nar, 12, DType::F64).unwrap();
        assert!(nar.params.num_parameters() <= 1000);
        let err = max_gradient_error(&nar, &|m| m.nar_loss(&items, 2, None).unwrap());
        assert!(err < 1e-4, "NAR max relative error {err}");
    }
}
