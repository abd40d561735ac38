//! Binary codec container: magic, version, JSON header, little-endian f32
//! payload (analysis, synthesis, codebooks) and a SHA-256 trailer over
//! everything before it.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CodecConfig, CodecError, CodecModel, Result};
use crate::util::{atomic_write, push_f32s, sha256_bytes, sha256_hex, verify_trailer, ByteReader};

const MAGIC: &[u8; 8] = b"CLMCODEC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: CodecConfig,
}

impl CodecModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
        })
        .expect("codec header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        push_f32s(&mut out, &self.analysis.iter().copied().collect::<Vec<_>>());
        push_f32s(&mut out, &self.synthesis.iter().copied().collect::<Vec<_>>());
        for cb in &self.codebooks {
            push_f32s(&mut out, &cb.iter().copied().collect::<Vec<_>>());
        }
        let digest = sha256_bytes(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = verify_trailer(bytes).ok_or_else(|| CodecError::Corrupt("checksum mismatch".into()))?;
        let corrupt = |e: std::io::Error| CodecError::Corrupt(e.to_string());
        let mut r = ByteReader::new(body);
        if r.take(8).map_err(corrupt)? != MAGIC {
            return Err(CodecError::Corrupt("bad magic".into()));
        }
        let version = r.u32().map_err(corrupt)?;
        if version != VERSION {
            return Err(CodecError::Corrupt(format!("unsupported version {version}")));
        }
        let len = r.u32().map_err(corrupt)? as usize;
        let header: Header = serde_json::from_slice(r.take(len).map_err(corrupt)?)
            .map_err(|e| CodecError::Corrupt(e.to_string()))?;
        let c = header.config;
        c.validate()
            .map_err(|(f, m)| CodecError::Corrupt(format!("{f}: {m}")))?;
        let mut matrix = |rows: usize, cols: usize| -> Result<Array2<f32>> {
            let v = r.f32_vec(rows * cols).map_err(corrupt)?;
            Ok(Array2::from_shape_vec((rows, cols), v).expect("sized read"))
        };
        let analysis = matrix(c.latent_dim, c.window)?;
        let synthesis = matrix(c.window, c.latent_dim)?;
        let codebooks = (0..c.num_layers)
            .map(|_| matrix(c.codebook_size, c.latent_dim))
            .collect::<Result<Vec<_>>>()?;
        if r.remaining() != 0 {
            return Err(CodecError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            config: c,
            analysis,
            synthesis,
            codebooks,
        })
    }

    /// Hex SHA-256 of the serialized model; identifies a codec across stages.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
