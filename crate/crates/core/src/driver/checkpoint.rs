//! Checkpoints: lossless, versioned snapshots of config + state, written
//! atomically (temp file then rename).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DriverError, RunConfig, RunState};

pub const CHECKPOINT_VERSION: &str = "dagevo-checkpoint-1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    config: RunConfig,
    state: RunState,
}

pub fn checkpoint(state: &RunState, config: &RunConfig, path: &Path) -> Result<(), DriverError> {
    let doc = Checkpoint {
        version: CHECKPOINT_VERSION.to_string(),
        config: config.clone(),
        state: state.clone(),
    };
    let body = serde_json::to_string(&doc)
        .map_err(|e| DriverError::CorruptCheckpoint(format!("cannot serialize state: {e}")))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, body.as_bytes())?;
    tmp.persist(path).map_err(|e| DriverError::Io(e.error))?;
    Ok(())
}

pub fn resume(path: &Path) -> Result<(RunConfig, RunState), DriverError> {
    let body = std::fs::read_to_string(path)?;
    // Peek at the version before committing to the full shape, so version
    // mismatches are reported as such rather than as corruption.
    let value: serde_json::Value =
        serde_json::from_str(&body).map_err(|e| DriverError::CorruptCheckpoint(e.to_string()))?;
    let found = value
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| DriverError::CorruptCheckpoint("missing version field".into()))?;
    if found != CHECKPOINT_VERSION {
        return Err(DriverError::CheckpointVersion {
            found: found.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let doc: Checkpoint =
        serde_json::from_value(value).map_err(|e| DriverError::CorruptCheckpoint(e.to_string()))?;
    Ok((doc.config, doc.state))
}
