//! Binary checkpoint container.
//!
//! `CRCKPT01`, a length-prefixed JSON header (tower config, vocabulary,
//! training seed, tensor shapes), then every tensor of [`ModelParams`] as
//! little-endian `f32` in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, TowerConfig, Vocab};
use crate::error::{Error, Result};
use crate::fileio::{self, BinReader, BinWriter};

const MAGIC: &[u8; 8] = b"CRCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TowerConfig,
    pub seed: u64,
    pub params: ModelParams<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TowerConfig,
    vocab: Vocab,
    seed: u64,
    tensor_lens: Vec<usize>,
}

impl Checkpoint {
    pub fn vocab(&self) -> Vocab {
        self.params.vocab()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.params.tensors();
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab(),
            seed: self.seed,
            tensor_lens: tensors.iter().map(|t| t.len()).collect(),
        };
        let mut w = BinWriter::default();
        w.bytes(MAGIC);
        w.json(&header)?;
        for t in tensors {
            w.f32s(t);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let header: Header = r.json()?;
        header.config.validate()?;
        let mut params = ModelParams::<f32>::zeros(&header.config, header.vocab);
        let expected: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        if expected != header.tensor_lens {
            return Err(Error::Format(format!(
                "tensor sizes {:?} disagree with config (expected {:?})",
                header.tensor_lens, expected
            )));
        }
        for t in params.tensors_mut() {
            let data = r.f32s(t.len())?;
            t.copy_from_slice(&data);
        }
        r.finish()?;
        Ok(Self { config: header.config, seed: header.seed, params })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fileio::write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fileio::read_all(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn bytes_round_trip_exactly() {
        let config = TowerConfig { hidden_sizes: vec![6, 5], embed_dim_condition: 3, ..TowerConfig::default() };
        let vocab = Vocab { users: 9, items: 11, topics: 4 };
        let params = ModelParams::init(&config, vocab, &mut seeded(1, 0));
        let ck = Checkpoint { config, seed: 99, params };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let config = TowerConfig::default();
        let ck = Checkpoint { seed: 1, params: ModelParams::zeros(&config, Vocab { users: 2, items: 2, topics: 1 }), config };
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(b"NOTACKPT"), Err(Error::Format(_))));
    }
}
