//! Binary checkpoint: magic, version, JSON config block, then named tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EncoderConfig, EncoderError, EncoderParams};
use crate::params::ParamSet;

const MAGIC: &[u8; 8] = b"ACENC01\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything stored in one checkpoint file. Encoder tensors use the `enc.`/`dec.`
/// prefixes; projection heads are stored alongside under `head.`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub tensors: ParamSet,
}

impl Checkpoint {
    pub fn from_encoder(params: &EncoderParams) -> Self {
        Self {
            config: params.config.clone(),
            tensors: params.params.clone(),
        }
    }

    pub fn encoder(&self) -> Result<EncoderParams, EncoderError> {
        EncoderParams::from_tensors(self.config.clone(), &self.tensors)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, EncoderError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), EncoderError> {
        let cfg = serde_json::to_vec(&self.config).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        self.tensors.write_tensors(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EncoderError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| EncoderError::Checkpoint("file too short for header".into()))?;
        if &magic != MAGIC {
            return Err(EncoderError::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(EncoderError::Checkpoint(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let len = u32::from_le_bytes(word) as usize;
        if len > 1 << 20 {
            return Err(EncoderError::Checkpoint(format!("config block of {len} bytes")));
        }
        let mut cfg = vec![0u8; len];
        r.read_exact(&mut cfg)?;
        let config: EncoderConfig =
            serde_json::from_slice(&cfg).map_err(|e| EncoderError::Checkpoint(format!("config block: {e}")))?;
        config.validate()?;
        let tensors = ParamSet::read_tensors(r).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
        Ok(Self { config, tensors })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), EncoderError> {
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, EncoderError> {
    let mut r = BufReader::new(File::open(path)?);
    Checkpoint::read_from(&mut r)
}
