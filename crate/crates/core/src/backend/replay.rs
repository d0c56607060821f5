//! Replay backend: serves recorded responses from a fixture store.
//!
//! One file per request digest, holding the canonical request alongside the
//! recorded response, so a fixture can be audited by eye and a digest can
//! be recomputed from the file itself.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, LlmRequest, LlmResponse};

#[derive(Serialize, Deserialize)]
struct Fixture {
    request: LlmRequest,
    response: LlmResponse,
}

/// Digest of the canonical (sorted-key, compact JSON) request form.
pub fn request_digest(request: &LlmRequest) -> String {
    let value = serde_json::to_value(request).expect("requests always serialize");
    let canonical = serde_json::to_string(&value).expect("canonical value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayBackend { dir: dir.into() }
    }

    fn fixture_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    /// Record a (request, response) pair into the store. Used by tests and
    /// by capture tooling wrapping a live backend.
    pub fn store(&self, request: &LlmRequest, response: &LlmResponse) -> std::io::Result<String> {
        fs::create_dir_all(&self.dir)?;
        let digest = request_digest(request);
        let fixture = Fixture {
            request: request.clone(),
            response: response.clone(),
        };
        let body = serde_json::to_string_pretty(&fixture).expect("fixtures serialize");
        fs::write(self.fixture_path(&digest), body)?;
        Ok(digest)
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        request.validate()?;
        let digest = request_digest(request);
        let path = self.fixture_path(&digest);
        let body =
            fs::read_to_string(&path).map_err(|_| BackendError::ReplayMiss(digest.clone()))?;
        let fixture: Fixture = serde_json::from_str(&body).map_err(|e| BackendError::Api {
            status: 0,
            message: format!("corrupt fixture {digest}: {e}"),
        })?;
        Ok(fixture.response)
    }
}
