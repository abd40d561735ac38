//! LM checkpoint container.
//!
//! Layout: magic `CLMMODEL`, u32 header length, JSON header, then four
//! u32-length-prefixed blobs (AR parameters, NAR parameters, AR optimizer,
//! NAR optimizer) and a SHA-256 trailer over everything before it.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, RunConfig, TrainerError};
use crate::nclm::{CodecLm, LmKind, ModelConfig};
use crate::util::{atomic_write, sha256_bytes, sha256_hex, verify_trailer, ByteReader};

const MAGIC: &[u8; 8] = b"CLMMODEL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| TrainerError::Corrupt(format!("rng state: {m}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed is not hex"))?
            .try_into()
            .map_err(|_| bad("seed must be 32 bytes"))?;
        let pos: u128 = self.word_pos.parse().map_err(|_| bad("word_pos"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub model: ModelConfig,
    pub vocab_hash: String,
    pub codec_checksum: String,
    pub run: RunConfig,
    pub step: usize,
    pub streams: BTreeMap<String, RngState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmCheckpoint {
    pub header: CheckpointHeader,
    pub ar_params: Vec<u8>,
    pub nar_params: Vec<u8>,
    pub ar_optim: Vec<u8>,
    pub nar_optim: Vec<u8>,
}

impl LmCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for blob in [&self.ar_params, &self.nar_params, &self.ar_optim, &self.nar_optim] {
            out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
            out.extend_from_slice(blob);
        }
        let digest = sha256_bytes(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = verify_trailer(bytes).ok_or_else(|| TrainerError::Corrupt("checksum mismatch".into()))?;
        let corrupt = |e: std::io::Error| TrainerError::Corrupt(e.to_string());
        let mut r = ByteReader::new(body);
        if r.take(8).map_err(corrupt)? != MAGIC {
            return Err(TrainerError::Corrupt("bad magic".into()));
        }
        let n = r.u32().map_err(corrupt)? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(n).map_err(corrupt)?).map_err(|e| TrainerError::Corrupt(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(TrainerError::Corrupt(format!("unsupported version {}", header.version)));
        }
        let mut blob = || -> Result<Vec<u8>> {
            let n = r.u32().map_err(corrupt)? as usize;
            Ok(r.take(n).map_err(corrupt)?.to_vec())
        };
        let (ar_params, nar_params, ar_optim, nar_optim) = (blob()?, blob()?, blob()?, blob()?);
        if r.remaining() != 0 {
            return Err(TrainerError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            header,
            ar_params,
            nar_params,
            ar_optim,
            nar_optim,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(atomic_write(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the AR and NAR models stored in this checkpoint.
    pub fn models(&self) -> Result<(CodecLm, CodecLm)> {
        let cfg = self.header.model.clone();
        let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 0, DType::F32)?;
        ar.params.load_bytes(&self.ar_params)?;
        let nar = CodecLm::new(cfg, LmKind::Nar, 0, DType::F32)?;
        nar.params.load_bytes(&self.nar_params)?;
        Ok((ar, nar))
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}
