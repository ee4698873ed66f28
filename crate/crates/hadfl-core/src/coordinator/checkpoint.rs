//! Model backup: checkpoint files in a store directory.
//!
//! File layout: a 16-byte header — magic `HADF`, format version (u32 LE),
//! config digest (8 bytes) — followed by the model-broadcast payload
//! encoding: version (u64 LE), dim (u32 LE), then dim little-endian f64
//! values. Files are named `ckpt_{sync_round}.bin` and never rewritten.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::rat::{to_f64, Rat};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HADF";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub sync_round: u64,
    /// Virtual seconds at backup time (informational; not in the file).
    pub wall_time: f64,
    pub config_digest: [u8; 8],
}

/// Directory of immutable checkpoint files with monotone sync rounds.
#[derive(Debug)]
pub struct CheckpointStore {
    dir: PathBuf,
    digest: [u8; 8],
    last_round: Option<u64>,
}

impl CheckpointStore {
    pub fn create(dir: impl Into<PathBuf>, digest: [u8; 8]) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CheckpointStore {
            dir,
            digest,
            last_round: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a checkpoint if `sync_round` falls on the backup cadence.
    pub fn backup(
        &mut self,
        params: &ParamVector,
        sync_round: u64,
        now: Rat,
        every_n_rounds: u64,
    ) -> Result<Option<Checkpoint>> {
        if every_n_rounds == 0 || sync_round % every_n_rounds != 0 {
            return Ok(None);
        }
        if let Some(last) = self.last_round {
            if sync_round <= last {
                return Err(Error::invalid(
                    "sync_round",
                    format!("checkpoint rounds must increase (last {last}, got {sync_round})"),
                ));
            }
        }
        let ckpt = Checkpoint {
            params: params.clone(),
            sync_round,
            wall_time: to_f64(now),
            config_digest: self.digest,
        };
        let path = self.dir.join(format!("ckpt_{sync_round}.bin"));
        fs::write(&path, encode(&ckpt))?;
        self.last_round = Some(sync_round);
        Ok(Some(ckpt))
    }

    /// Loads the checkpoint with the highest sync round, if any.
    pub fn restore_latest(&self) -> Result<Option<Checkpoint>> {
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let name = match path.file_name().and_then(|n| n.to_str()) {
                Some(n) => n,
                None => continue,
            };
            if let Some(round) = name
                .strip_prefix("ckpt_")
                .and_then(|r| r.strip_suffix(".bin"))
                .and_then(|r| r.parse::<u64>().ok())
            {
                if best.as_ref().map_or(true, |(b, _)| round > *b) {
                    best = Some((round, path));
                }
            }
        }
        match best {
            Some((_, path)) => Ok(Some(read_checkpoint(&path)?)),
            None => Ok(None),
        }
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let dim = ckpt.params.dim();
    let mut out = Vec::with_capacity(16 + 12 + 8 * dim);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.config_digest);
    out.extend_from_slice(&ckpt.sync_round.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in ckpt.params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 28 {
        return Err(Error::BadCheckpoint("file too short".into()));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported format {version}")));
    }
    let mut digest = [0u8; 8];
    digest.copy_from_slice(&bytes[8..16]);
    let sync_round = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
    if bytes.len() != 28 + 8 * dim {
        return Err(Error::BadCheckpoint(format!(
            "expected {} bytes for dim {dim}, got {}",
            28 + 8 * dim,
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(dim);
    for i in 0..dim {
        let off = 28 + 8 * i;
        values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Ok(Checkpoint {
        params: ParamVector::from_values(values)?,
        sync_round,
        wall_time: 0.0,
        config_digest: digest,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::rat_int;

    fn params(vals: &[f64]) -> ParamVector {
        ParamVector::from_values(vals.to_vec()).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path(), [7; 8]).unwrap();
        let w = params(&[1.5, -2.25, 1e-300, 0.0]);
        let ckpt = store.backup(&w, 3, rat_int(12), 1).unwrap().unwrap();
        assert_eq!(ckpt.sync_round, 3);
        let restored = store.restore_latest().unwrap().unwrap();
        assert_eq!(restored.params, w);
        assert_eq!(restored.sync_round, 3);
        assert_eq!(restored.config_digest, [7; 8]);
    }

    #[test]
    fn cadence_and_monotonicity() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path(), [0; 8]).unwrap();
        let w = params(&[1.0]);
        assert!(store.backup(&w, 1, rat_int(0), 2).unwrap().is_none());
        assert!(store.backup(&w, 2, rat_int(0), 2).unwrap().is_some());
        assert!(store.backup(&w, 2, rat_int(0), 1).is_err());
        assert!(store.backup(&w, 4, rat_int(0), 2).unwrap().is_some());
    }

    #[test]
    fn restore_picks_highest_round() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::create(dir.path(), [0; 8]).unwrap();
        store.backup(&params(&[1.0]), 1, rat_int(0), 1).unwrap();
        store.backup(&params(&[2.0]), 2, rat_int(0), 1).unwrap();
        store.backup(&params(&[3.0]), 5, rat_int(0), 1).unwrap();
        let latest = store.restore_latest().unwrap().unwrap();
        assert_eq!(latest.sync_round, 5);
        assert_eq!(latest.params.as_slice(), &[3.0]);
    }

    #[test]
    fn decode_rejects_corruption() {
        let ckpt = Checkpoint {
            params: params(&[1.0, 2.0]),
            sync_round: 9,
            wall_time: 0.0,
            config_digest: [1; 8],
        };
        let bytes = encode(&ckpt);
        assert!(decode(&bytes[..10]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).is_err());
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(decode(&truncated).is_err());
        assert_eq!(decode(&bytes).unwrap().params.as_slice(), &[1.0, 2.0]);
    }
}
