//! Compiled dataset file.
//!
//! Layout: magic `CLMDATA1`, u32 header length, JSON [`DatasetHeader`], then
//! one `u32 length + payload` record per example, then a SHA-256 trailer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExampleMeta, PromptElement, PromptError, Result, Special, TaskSpec, TrainingExample, VocabMap};
use crate::codec::AcousticTokenMatrix;
use crate::util::{atomic_write, sha256_bytes, verify_trailer, ByteReader};

const MAGIC: &[u8; 8] = b"CLMDATA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub vocab: VocabMap,
    pub codec_checksum: String,
    pub count: usize,
    /// Free-form provenance (split, material config, seed).
    pub source: serde_json::Value,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix(out: &mut Vec<u8>, m: &AcousticTokenMatrix) {
    push_u32(out, m.num_frames() as u32);
    push_u32(out, m.num_layers() as u32);
    for &c in m.codes() {
        push_u32(out, c);
    }
}

fn encode_record(ex: &TrainingExample) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(ex.task.index() as u8);
    push_u32(&mut out, ex.text.len() as u32);
    for &t in &ex.text {
        push_u32(&mut out, t);
    }
    push_u32(&mut out, ex.prompt.len() as u32);
    for e in &ex.prompt {
        match e {
            PromptElement::Codes(m) => {
                out.push(0);
                push_matrix(&mut out, m);
            }
            PromptElement::Special(s) => {
                out.push(1);
                out.push(s.index() as u8);
            }
        }
    }
    push_matrix(&mut out, &ex.target);
    let meta = serde_json::to_vec(&ex.meta).expect("meta serializes");
    push_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    out
}

fn format_err(e: impl std::fmt::Display) -> PromptError {
    PromptError::Format(e.to_string())
}

fn read_matrix(r: &mut ByteReader) -> Result<AcousticTokenMatrix> {
    let frames = r.u32().map_err(format_err)? as usize;
    let layers = r.u32().map_err(format_err)? as usize;
    let mut codes = Vec::with_capacity(frames * layers);
    for _ in 0..frames * layers {
        codes.push(r.u32().map_err(format_err)?);
    }
    Ok(AcousticTokenMatrix::new(frames, layers, codes))
}

fn decode_record(bytes: &[u8]) -> Result<TrainingExample> {
    let mut r = ByteReader::new(bytes);
    let task = *TaskSpec::ALL
        .get(r.u8().map_err(format_err)? as usize)
        .ok_or_else(|| format_err("bad task id"))?;
    let n_text = r.u32().map_err(format_err)? as usize;
    let text = (0..n_text)
        .map(|_| r.u32().map_err(format_err))
        .collect::<Result<Vec<_>>>()?;
    let n_prompt = r.u32().map_err(format_err)? as usize;
    let mut prompt = Vec::with_capacity(n_prompt);
    for _ in 0..n_prompt {
        match r.u8().map_err(format_err)? {
            0 => prompt.push(PromptElement::Codes(read_matrix(&mut r)?)),
            1 => {
                let s = *Special::ALL
                    .get(r.u8().map_err(format_err)? as usize)
                    .ok_or_else(|| format_err("bad special id"))?;
                prompt.push(PromptElement::Special(s));
            }
            t => return Err(format_err(format!("bad element tag {t}"))),
        }
    }
    let target = read_matrix(&mut r)?;
    let n_meta = r.u32().map_err(format_err)? as usize;
    let meta: ExampleMeta = serde_json::from_slice(r.take(n_meta).map_err(format_err)?).map_err(format_err)?;
    if r.remaining() != 0 {
        return Err(format_err("trailing record bytes"));
    }
    Ok(TrainingExample {
        task,
        text,
        prompt,
        target,
        meta,
    })
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, examples: &[TrainingExample]) -> Result<()> {
    let mut header = header.clone();
    header.count = examples.len();
    let json = serde_json::to_vec(&header).map_err(format_err)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    for ex in examples {
        let rec = encode_record(ex);
        push_u32(&mut out, rec.len() as u32);
        out.extend_from_slice(&rec);
    }
    let digest = sha256_bytes(&out);
    out.extend_from_slice(&digest);
    atomic_write(path, &out)?;
    Ok(())
}

/// Reads a compiled dataset; with `expected_codec` set, refuses files
/// compiled against a different codec.
pub fn read_dataset(path: &Path, expected_codec: Option<&str>) -> Result<(DatasetHeader, Vec<TrainingExample>)> {
    let bytes = std::fs::read(path)?;
    let body = verify_trailer(&bytes).ok_or_else(|| format_err("checksum mismatch"))?;
    let mut r = ByteReader::new(body);
    if r.take(8).map_err(format_err)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let n = r.u32().map_err(format_err)? as usize;
    let header: DatasetHeader = serde_json::from_slice(r.take(n).map_err(format_err)?).map_err(format_err)?;
    VocabMap::from_json(&header.vocab.to_json())?;
    if let Some(expected) = expected_codec {
        if header.codec_checksum != expected {
            return Err(PromptError::CompatError {
                expected: expected.to_string(),
                found: header.codec_checksum.clone(),
            });
        }
    }
    let mut examples = Vec::with_capacity(header.count);
    while r.remaining() > 0 {
        let len = r.u32().map_err(format_err)? as usize;
        examples.push(decode_record(r.take(len).map_err(format_err)?)?);
    }
    if examples.len() != header.count {
        return Err(format_err("record count mismatch"));
    }
    Ok((header, examples))
}
