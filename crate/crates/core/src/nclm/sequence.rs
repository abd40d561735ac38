//! Flattening of `(T, A, O)` into padded index tensors.
//!
//! Every position carries `L` embedding-row slots that are summed. Text ids
//! and specials use one slot; prompt code frames fill all `L`; output frames
//! fill layer 1 (AR) or layers `1..l-1` (NAR at layer `l`). Unused slots
//! point at a constant zero row.

use super::{ModelConfig, NclmError, Result};
use crate::codec::AcousticTokenMatrix;
use crate::prompting::{PromptElement, Special};
use crate::synthworld::ALPHABET_SIZE;

pub const SEGMENT_T: u32 = 0;
pub const SEGMENT_A: u32 = 1;
pub const SEGMENT_O: u32 = 2;

/// Text ids plus the pad id.
pub(crate) const TEXT_ROWS: usize = ALPHABET_SIZE + 1;
pub(crate) const SPECIAL_ROWS: usize = Special::ALL.len();

pub(crate) fn special_row(s: Special) -> usize {
    TEXT_ROWS + s.index()
}

pub(crate) fn code_row(cfg: &ModelConfig, layer: usize, code: u32) -> usize {
    TEXT_ROWS + SPECIAL_ROWS + layer * cfg.codebook_size + code as usize
}

pub(crate) fn table_rows(cfg: &ModelConfig) -> usize {
    TEXT_ROWS + SPECIAL_ROWS + cfg.num_layers * cfg.codebook_size
}

/// One model input: text ids, acoustic prompt and (known part of) the output.
#[derive(Debug, Clone, Copy)]
pub struct LmItem<'a> {
    pub text: &'a [u32],
    pub prompt: &'a [PromptElement],
    pub target: &'a AcousticTokenMatrix,
}

impl<'a> From<&'a crate::prompting::TrainingExample> for LmItem<'a> {
    fn from(ex: &'a crate::prompting::TrainingExample) -> Self {
        Self {
            text: &ex.text,
            prompt: &ex.prompt,
            target: &ex.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub slots: usize,
    /// `batch * seq_len * slots` embedding-table rows.
    pub rows: Vec<u32>,
    pub positions: Vec<u32>,
    pub segments: Vec<u32>,
    pub lengths: Vec<usize>,
    /// Index of the `<sep>` opening the output segment, per item.
    pub o_start: Vec<usize>,
    /// Flat `b * seq_len + pos` indices whose logits are scored.
    pub target_index: Vec<u32>,
    /// Target id per scored row; empty at inference.
    pub target_ids: Vec<u32>,
}

struct ItemBuilder<'c> {
    cfg: &'c ModelConfig,
    zero: u32,
    rows: Vec<u32>,
    positions: Vec<u32>,
    segments: Vec<u32>,
    segment: u32,
    pos: u32,
}

impl<'c> ItemBuilder<'c> {
    fn new(cfg: &'c ModelConfig) -> Self {
        Self {
            cfg,
            zero: table_rows(cfg) as u32,
            rows: Vec::new(),
            positions: Vec::new(),
            segments: Vec::new(),
            segment: SEGMENT_T,
            pos: 0,
        }
    }

    fn start_segment(&mut self, segment: u32) {
        self.segment = segment;
        self.pos = 0;
    }

    fn push(&mut self, slots: &[u32]) {
        let l = self.cfg.num_layers;
        self.rows.extend_from_slice(slots);
        self.rows.extend(std::iter::repeat_n(self.zero, l - slots.len()));
        self.positions.push(self.pos);
        self.segments.push(self.segment);
        self.pos += 1;
    }

    fn len(&self) -> usize {
        self.positions.len()
    }

    fn check_code(&self, code: u32) -> Result<()> {
        if code as usize >= self.cfg.codebook_size {
            return Err(NclmError::CodeError {
                what: "code",
                id: code,
                limit: self.cfg.codebook_size,
            });
        }
        Ok(())
    }

    /// `T, <sep>, A, <sep>`; returns the index of the second `<sep>`.
    fn prefix(&mut self, text: &[u32], prompt: &[PromptElement]) -> Result<usize> {
        for &t in text {
            if t as usize >= TEXT_ROWS {
                return Err(NclmError::CodeError {
                    what: "text",
                    id: t,
                    limit: TEXT_ROWS,
                });
            }
            self.push(&[t]);
        }
        self.start_segment(SEGMENT_A);
        self.push(&[special_row(Special::Sep) as u32]);
        for e in prompt {
            match e {
                PromptElement::Special(s) => self.push(&[special_row(*s) as u32]),
                PromptElement::Codes(m) => {
                    if m.num_layers() != self.cfg.num_layers {
                        return Err(NclmError::LayerError {
                            layer: m.num_layers(),
                            layers: self.cfg.num_layers,
                        });
                    }
                    for t in 0..m.num_frames() {
                        let mut slots = Vec::with_capacity(self.cfg.num_layers);
                        for (l, &c) in m.frame(t).iter().enumerate() {
                            self.check_code(c)?;
                            slots.push(code_row(self.cfg, l, c) as u32);
                        }
                        self.push(&slots);
                    }
                }
            }
        }
        self.start_segment(SEGMENT_O);
        let o_start = self.len();
        self.push(&[special_row(Special::Sep) as u32]);
        Ok(o_start)
    }
}

#[derive(Default)]
struct Assembly {
    items: Vec<(Vec<u32>, Vec<u32>, Vec<u32>)>,
    o_start: Vec<usize>,
    targets: Vec<(usize, usize, Option<u32>)>,
}

impl Assembly {
    fn add(&mut self, b: ItemBuilder<'_>, o_start: usize) {
        self.items.push((b.rows, b.positions, b.segments));
        self.o_start.push(o_start);
    }

    fn finish(self, cfg: &ModelConfig) -> Result<SequenceBatch> {
        let slots = cfg.num_layers;
        let zero = table_rows(cfg) as u32;
        let seq_len = self.items.iter().map(|(_, p, _)| p.len()).max().unwrap_or(0);
        let max_pos = self
            .items
            .iter()
            .flat_map(|(_, p, _)| p.iter().copied())
            .max()
            .unwrap_or(0) as usize;
        if max_pos >= cfg.max_positions {
            return Err(NclmError::TooLong {
                len: max_pos + 1,
                max: cfg.max_positions,
            });
        }
        let batch = self.items.len();
        let mut rows = Vec::with_capacity(batch * seq_len * slots);
        let mut positions = Vec::with_capacity(batch * seq_len);
        let mut segments = Vec::with_capacity(batch * seq_len);
        let mut lengths = Vec::with_capacity(batch);
        for (r, p, s) in &self.items {
            let pad = seq_len - p.len();
            rows.extend_from_slice(r);
            rows.extend(std::iter::repeat_n(zero, pad * slots));
            positions.extend_from_slice(p);
            positions.extend(std::iter::repeat_n(0, pad));
            segments.extend_from_slice(s);
            segments.extend(std::iter::repeat_n(SEGMENT_O, pad));
            lengths.push(p.len());
        }
        let target_index = self
            .targets
            .iter()
            .map(|&(b, pos, _)| (b * seq_len + pos) as u32)
            .collect();
        let target_ids = self.targets.iter().filter_map(|&(_, _, id)| id).collect();
        Ok(SequenceBatch {
            batch,
            seq_len,
            slots,
            rows,
            positions,
            segments,
            lengths,
            o_start: self.o_start,
            target_index,
            target_ids,
        })
    }
}

impl SequenceBatch {
    /// AR input over layer-1 codes of `item.target`.
    ///
    /// With `training`, every output position is scored: position `t` of
    /// the output segment predicts frame `t`, and the last one `<eos>`
    /// (id `V_c`). Otherwise only the final position is scored.
    pub fn for_ar(cfg: &ModelConfig, items: &[LmItem<'_>], training: bool) -> Result<Self> {
        let mut asm = Assembly::default();
        for (b, item) in items.iter().enumerate() {
            if training && item.target.is_empty() {
                return Err(NclmError::EmptyTarget);
            }
            let mut builder = ItemBuilder::new(cfg);
            let o_start = builder.prefix(item.text, item.prompt)?;
            let n = item.target.num_frames();
            for t in 0..n {
                let c = item.target.get(t, 0);
                builder.check_code(c)?;
                builder.push(&[code_row(cfg, 0, c) as u32]);
            }
            if training {
                for t in 0..n {
                    asm.targets.push((b, o_start + t, Some(item.target.get(t, 0))));
                }
                asm.targets.push((b, o_start + n, Some(cfg.codebook_size as u32)));
            } else {
                asm.targets.push((b, o_start + n, None));
            }
            asm.add(builder, o_start);
        }
        asm.finish(cfg)
    }

    /// NAR input for layer `l` (1-based, `2..=L`): output frames embed the
    /// sum of layers `1..l-1`; every output frame is scored.
    pub fn for_nar(cfg: &ModelConfig, items: &[LmItem<'_>], l: usize, training: bool) -> Result<Self> {
        if l < 2 || l > cfg.num_layers {
            return Err(NclmError::LayerError {
                layer: l,
                layers: cfg.num_layers,
            });
        }
        let mut asm = Assembly::default();
        for (b, item) in items.iter().enumerate() {
            if item.target.is_empty() {
                return Err(NclmError::EmptyTarget);
            }
            let needed = if training { l } else { l - 1 };
            if item.target.num_layers() < needed {
                return Err(NclmError::LayerError {
                    layer: l,
                    layers: item.target.num_layers(),
                });
            }
            let mut builder = ItemBuilder::new(cfg);
            let o_start = builder.prefix(item.text, item.prompt)?;
            for t in 0..item.target.num_frames() {
                let mut slots = Vec::with_capacity(l - 1);
                for layer in 0..l - 1 {
                    let c = item.target.get(t, layer);
                    builder.check_code(c)?;
                    slots.push(code_row(cfg, layer, c) as u32);
                }
                builder.push(&slots);
                let id = if training {
                    let c = item.target.get(t, l - 1);
                    builder.check_code(c)?;
                    Some(c)
                } else {
                    None
                };
                asm.targets.push((b, o_start + 1 + t, id));
            }
            asm.add(builder, o_start);
        }
        asm.finish(cfg)
    }
}
