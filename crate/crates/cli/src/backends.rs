//! Backend construction with optional replay record/playback.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use cascadener::backend::{
    BackendConfig, ChatBackend, EmbeddingBackend, HashEmbedder, HttpBackend, ReplayChat, ReplayEmbedder, ReplayMode,
    ReplayStore,
};

use crate::CliError;

/// Embedder base URL selecting the offline hash embedder.
pub const MOCK_URL: &str = "mock";

pub struct Backends {
    store: Option<(Arc<Mutex<ReplayStore>>, ReplayMode)>,
}

impl Backends {
    pub fn new(replay: Option<&PathBuf>, mode: ReplayMode) -> Result<Self, CliError> {
        let store = match replay {
            Some(path) => {
                if mode == ReplayMode::Playback && !path.exists() {
                    return Err(CliError::Op(format!("replay file {} does not exist", path.display())));
                }
                let store = ReplayStore::open(path).map_err(|e| CliError::Op(e.to_string()))?;
                Some((Arc::new(Mutex::new(store)), mode))
            }
            None => None,
        };
        Ok(Self { store })
    }

    pub fn chat(&self, cfg: &BackendConfig) -> Box<dyn ChatBackend> {
        match &self.store {
            Some((store, ReplayMode::Playback)) => Box::new(ReplayChat::playback(store.clone(), cfg.model.clone())),
            Some((store, ReplayMode::Record)) => Box::new(ReplayChat::record(
                Arc::new(HttpBackend::new(cfg.clone())),
                store.clone(),
            )),
            None => Box::new(HttpBackend::new(cfg.clone())),
        }
    }

    pub fn embedder(&self, cfg: &BackendConfig, dim: usize) -> Box<dyn EmbeddingBackend> {
        let inner: Arc<dyn EmbeddingBackend> = if cfg.base_url == MOCK_URL {
            Arc::new(HashEmbedder::new(dim))
        } else {
            Arc::new(HttpBackend::new(cfg.clone()))
        };
        match &self.store {
            // the hash embedder is already deterministic; no file needed
            _ if cfg.base_url == MOCK_URL => Box::new(inner),
            Some((store, ReplayMode::Playback)) => {
                Box::new(ReplayEmbedder::playback(store.clone(), inner.model_id().to_string()))
            }
            Some((store, ReplayMode::Record)) => Box::new(ReplayEmbedder::record(inner, store.clone())),
            None => Box::new(inner),
        }
    }
}
