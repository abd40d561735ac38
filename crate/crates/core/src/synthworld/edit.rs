use rand::Rng;

use super::{Result, SymbolSeq, SynthError, SynthUtterance, Waveform, ALPHABET_SIZE, SYMBOL_SAMPLES};

/// An utterance and a copy of it with a contiguous symbol span re-spoken.
#[derive(Debug, Clone)]
pub struct EditPair {
    pub original: Waveform,
    pub replaced: Waveform,
    /// Content of `original`.
    pub text: SymbolSeq,
    pub replaced_text: SymbolSeq,
    /// `[start, end)` in symbols.
    pub symbol_span: (usize, usize),
    /// `[start, end)` in codec frames of the given hop.
    pub edit_span: (usize, usize),
    pub replaced_fraction: f64,
}

impl EditPair {
    pub fn sample_span(&self) -> (usize, usize) {
        (
            self.symbol_span.0 * SYMBOL_SAMPLES,
            self.symbol_span.1 * SYMBOL_SAMPLES,
        )
    }
}

/// Replaces a random contiguous span covering a fraction in `fraction_range`
/// of the utterance with fresh symbols from the same speaker.
///
/// Every replaced symbol differs from the one it replaces. The span is
/// recorded both in symbols and in codec frames of `frame_hop` samples.
pub fn make_edit_pair<R: Rng>(
    utt: &SynthUtterance,
    fraction_range: (f64, f64),
    frame_hop: usize,
    rng: &mut R,
) -> Result<EditPair> {
    let (lo, hi) = fraction_range;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(SynthError::SpanError(format!("invalid fraction range ({lo}, {hi})")));
    }
    if frame_hop == 0 {
        return Err(SynthError::SpanError("frame hop must be positive".into()));
    }
    let n = utt.content.len();
    if n < 3 {
        return Err(SynthError::SpanError(format!("{n} symbols, need at least 3")));
    }
    let min_len = ((lo * n as f64 - 1e-9).ceil() as usize).max(1);
    let max_len = (hi * n as f64 + 1e-9).floor() as usize;
    if min_len > max_len || min_len >= n {
        return Err(SynthError::SpanError(format!(
            "{n} symbols cannot cover a fraction in [{lo}, {hi}]"
        )));
    }
    let span_len = rng.random_range(min_len..=max_len);
    let start = rng.random_range(0..=n - span_len);
    let end = start + span_len;

    let mut replaced_symbols = utt.content.0.clone();
    for symbol in &mut replaced_symbols[start..end] {
        let offset = rng.random_range(1..ALPHABET_SIZE as u8);
        *symbol = (*symbol + offset) % ALPHABET_SIZE as u8;
    }
    let replaced_utt = SynthUtterance {
        content: SymbolSeq(replaced_symbols),
        ..utt.clone()
    };
    let start_sample = start * SYMBOL_SAMPLES;
    let end_sample = end * SYMBOL_SAMPLES;
    Ok(EditPair {
        original: utt.render()?,
        replaced: replaced_utt.render()?,
        text: utt.content.clone(),
        replaced_text: replaced_utt.content,
        symbol_span: (start, end),
        edit_span: (start_sample / frame_hop, end_sample.div_ceil(frame_hop)),
        replaced_fraction: span_len as f64 / n as f64,
    })
}
