//! Persistent query cache: one JSON file per request digest.
//!
//! The digest covers every input that can change a reply: provider id,
//! prompt text, image bytes, temperature hint, and scene metadata. A hit
//! is served without touching the wrapped oracle; a corrupt entry falls
//! through to a live query and is rewritten. Writes go through a
//! temporary file and an atomic rename so concurrent readers never see a
//! torn entry.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::hex_string;
use crate::oracle::{Oracle, OracleError, OracleRequest, OracleResponse};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    provider_id: String,
    raw_text: String,
    latency_ms: u64,
}

/// Wraps any oracle with an optional disk cache and live/hit counters.
/// With no cache directory it still counts queries, which feeds the run
/// ledger.
pub struct CachedOracle {
    inner: Box<dyn Oracle>,
    dir: Option<PathBuf>,
    live: AtomicU64,
    hits: AtomicU64,
    write_seq: AtomicU64,
}

impl CachedOracle {
    pub fn new(inner: Box<dyn Oracle>, dir: Option<PathBuf>) -> Result<Self, OracleError> {
        if let Some(dir) = &dir {
            std::fs::create_dir_all(dir).map_err(|e| OracleError::Cache {
                path: dir.display().to_string(),
                detail: e.to_string(),
            })?;
        }
        Ok(CachedOracle {
            inner,
            dir,
            live: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            write_seq: AtomicU64::new(0),
        })
    }

    /// Queries answered by the wrapped oracle.
    pub fn live_queries(&self) -> u64 {
        self.live.load(Ordering::Relaxed)
    }

    /// Queries served from disk.
    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Collision-resistant fingerprint of everything that can change the
    /// oracle's reply.
    pub fn digest_for(&self, request: &OracleRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.inner.id().as_bytes());
        hasher.update([0xFF]);
        hasher.update(request.prompt.text().as_bytes());
        hasher.update([0xFF]);
        hasher.update((request.images.len() as u64).to_le_bytes());
        for image in &request.images {
            hasher.update(image.width().to_le_bytes());
            hasher.update(image.height().to_le_bytes());
            hasher.update(image.data());
        }
        hasher.update([0xFF]);
        match request.temperature_hint {
            Some(t) => hasher.update(t.to_bits().to_le_bytes()),
            None => hasher.update([0x00]),
        }
        hasher.update([0xFF]);
        if let Some(scene) = &request.scene {
            let json = serde_json::to_string(scene).expect("scene metadata serializes");
            hasher.update(json.as_bytes());
        }
        hex_string(&hasher.finalize())
    }

    fn entry_path(&self, dir: &Path, digest: &str) -> PathBuf {
        dir.join(format!("{digest}.json"))
    }

    fn read_entry(&self, path: &Path, digest: &str) -> Option<OracleResponse> {
        let bytes = std::fs::read(path).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        if entry.digest != digest {
            return None;
        }
        Some(OracleResponse {
            raw_text: entry.raw_text,
            extracted_label: None,
            latency_ms: entry.latency_ms,
            provider_id: entry.provider_id,
        })
    }

    fn write_entry(
        &self,
        dir: &Path,
        digest: &str,
        response: &OracleResponse,
    ) -> Result<(), OracleError> {
        let entry = CacheEntry {
            digest: digest.to_owned(),
            provider_id: response.provider_id.clone(),
            raw_text: response.raw_text.clone(),
            latency_ms: response.latency_ms,
        };
        let body = serde_json::to_vec(&entry).expect("cache entry serializes");
        let seq = self.write_seq.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!("{digest}.tmp.{}.{seq}", std::process::id()));
        let path = self.entry_path(dir, digest);
        let io_err = |e: std::io::Error| OracleError::Cache {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        std::fs::write(&tmp, body).map_err(io_err)?;
        std::fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(())
    }
}

impl Oracle for CachedOracle {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn query(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let Some(dir) = self.dir.clone() else {
            self.live.fetch_add(1, Ordering::Relaxed);
            return self.inner.query(request);
        };
        let digest = self.digest_for(request);
        let path = self.entry_path(&dir, &digest);
        if let Some(response) = self.read_entry(&path, &digest) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(response);
        }
        self.live.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.query(request)?;
        self.write_entry(&dir, &digest, &response)?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Image, Rgb, TargetPrompt};
    use crate::oracle::ScriptedOracle;
    use std::sync::Arc;

    fn request(pixel: Rgb) -> OracleRequest {
        OracleRequest::new(
            TargetPrompt::new("what now").unwrap(),
            vec![Arc::new(Image::filled(3, 3, pixel).unwrap())],
        )
        .unwrap()
    }

    fn scripted() -> Box<dyn Oracle> {
        Box::new(ScriptedOracle::new("mock", vec!["first".into(), "second".into()]).unwrap())
    }

    #[test]
    fn identical_requests_hit_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = CachedOracle::new(scripted(), Some(dir.path().to_owned())).unwrap();
        let a = oracle.query(&request(Rgb::WHITE)).unwrap();
        let b = oracle.query(&request(Rgb::WHITE)).unwrap();
        // The scripted oracle would have said "second" on a live call.
        assert_eq!(a.raw_text, "first");
        assert_eq!(b.raw_text, "first");
        assert_eq!(oracle.live_queries(), 1);
        assert_eq!(oracle.cache_hits(), 1);
    }

    #[test]
    fn byte_differing_images_miss() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = CachedOracle::new(scripted(), Some(dir.path().to_owned())).unwrap();
        let a = oracle.query(&request(Rgb::WHITE)).unwrap();
        let b = oracle.query(&request(Rgb([254, 255, 255]))).unwrap();
        assert_eq!(a.raw_text, "first");
        assert_eq!(b.raw_text, "second");
        assert_eq!(oracle.live_queries(), 2);
        assert_eq!(oracle.cache_hits(), 0);
    }

    #[test]
    fn cleared_cache_queries_live_again() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = CachedOracle::new(scripted(), Some(dir.path().to_owned())).unwrap();
        oracle.query(&request(Rgb::WHITE)).unwrap();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            std::fs::remove_file(entry.unwrap().path()).unwrap();
        }
        let b = oracle.query(&request(Rgb::WHITE)).unwrap();
        assert_eq!(b.raw_text, "second");
        assert_eq!(oracle.live_queries(), 2);
    }

    #[test]
    fn corrupt_entries_fall_through_and_are_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let oracle = CachedOracle::new(scripted(), Some(dir.path().to_owned())).unwrap();
        let req = request(Rgb::WHITE);
        oracle.query(&req).unwrap();
        let digest = oracle.digest_for(&req);
        let path = dir.path().join(format!("{digest}.json"));
        std::fs::write(&path, b"{ not json").unwrap();
        let b = oracle.query(&req).unwrap();
        assert_eq!(b.raw_text, "second");
        // The rewritten entry now serves hits again.
        let c = oracle.query(&req).unwrap();
        assert_eq!(c.raw_text, "second");
        assert_eq!(oracle.cache_hits(), 1);
    }

    #[test]
    fn scene_metadata_changes_the_digest() {
        let oracle = CachedOracle::new(scripted(), None).unwrap();
        let plain = request(Rgb::WHITE);
        let with_scene = request(Rgb::WHITE).with_scene(crate::oracle::SceneMetadata {
            benign_label: "brake".into(),
            keywords: vec![],
            sign: None,
        });
        assert_ne!(oracle.digest_for(&plain), oracle.digest_for(&with_scene));
    }

    #[test]
    fn without_a_directory_queries_are_live_but_counted() {
        let oracle = CachedOracle::new(scripted(), None).unwrap();
        oracle.query(&request(Rgb::WHITE)).unwrap();
        oracle.query(&request(Rgb::WHITE)).unwrap();
        assert_eq!(oracle.live_queries(), 2);
        assert_eq!(oracle.cache_hits(), 0);
    }
}
