use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::TrainError;
use crate::game::GameKind;

/// Sampling state needed to continue a run: every random stream is derived
/// from the run seed and the step counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_step: usize,
}

/// JSON sidecar written next to the parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub config_hash: String,
    pub rng: RngState,
    pub adam: Option<AdamState>,
    pub game: GameKind,
    pub dim: usize,
    pub logit_scale: f64,
}

/// `checkpoint.bin` -> `checkpoint.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes the parameters as little-endian `f64` values plus the sidecar.
pub fn save_checkpoint(bin: &Path, theta: &[f64], meta: &CheckpointMeta) -> Result<(), TrainError> {
    if meta.dim != theta.len() {
        return Err(TrainError::Checkpoint(format!("meta says {} parameters, got {}", meta.dim, theta.len())));
    }
    let bytes: Vec<u8> = theta.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(bin, bytes)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    fs::write(sidecar_path(bin), json)?;
    Ok(())
}

pub fn load_checkpoint(bin: &Path) -> Result<(Vec<f64>, CheckpointMeta), TrainError> {
    let bytes = fs::read(bin)?;
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(bin))?)
        .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if bytes.len() != meta.dim * 8 {
        return Err(TrainError::Checkpoint(format!(
            "{} bytes do not hold {} parameters",
            bytes.len(),
            meta.dim
        )));
    }
    let theta = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((theta, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = std::env::temp_dir().join(format!("gametalk-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let bin = dir.join("checkpoint.bin");
        let theta = vec![0.25, -1.5e-7, f64::MAX, 0.0];
        let meta = CheckpointMeta {
            step: 7,
            config_hash: "abc".into(),
            rng: RngState { seed: 3, next_step: 7 },
            adam: Some(AdamState { t: 7, m: vec![0.1; 4], v: vec![0.2; 4] }),
            game: GameKind::Rps,
            dim: 4,
            logit_scale: 1.0,
        };
        save_checkpoint(&bin, &theta, &meta).unwrap();
        assert_eq!(fs::read(&bin).unwrap().len(), 32);
        let (t2, m2) = load_checkpoint(&bin).unwrap();
        assert_eq!(t2, theta);
        assert_eq!(m2, meta);
        fs::remove_dir_all(dir).ok();
    }
}
