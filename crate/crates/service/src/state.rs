use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::http::StatusCode;
use mathlink_core::corpus::{
    load_fc_memory, load_formula_catalog, load_identifier_catalog, load_user_inputs, CatalogKind, CorpusError,
    Endpoint, RemoteWiki,
};
use mathlink_core::evaluation::ReferenceRow;
use mathlink_core::recommend::Catalogs;
use mathlink_core::session::{load_session, save_session, KnowledgeStores, SessionError, SessionState};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Mutex;

use crate::config::{CatalogPaths, ServiceConfig};
use crate::error::ApiError;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("reference table {path}: {message}")]
    Reference { path: PathBuf, message: String },
    #[error("session {path}: {source}")]
    Session {
        path: PathBuf,
        #[source]
        source: SessionError,
    },
    #[error("session directory {path}: {source}")]
    SessionDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Catalogs and stores read at start-up.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub catalogs: Catalogs,
    pub stores: KnowledgeStores,
    pub reference: Vec<ReferenceRow>,
}

impl Resources {
    pub fn load(paths: &CatalogPaths, reference: Option<&Path>) -> Result<Self, LoadError> {
        let mut catalogs = Catalogs::default();
        for (kind, path) in [
            (CatalogKind::Arxiv, &paths.arxiv),
            (CatalogKind::Wikipedia, &paths.wikipedia),
            (CatalogKind::Wikidata, &paths.wikidata),
            (CatalogKind::UserInput, &paths.user_input),
        ] {
            if let Some(path) = path {
                catalogs.add_identifier_catalog(load_identifier_catalog(path, kind)?);
            }
        }
        if let Some(path) = &paths.formulas {
            catalogs.formulas = load_formula_catalog(path)?;
        }
        let mut stores = KnowledgeStores::default();
        if let Some(path) = &paths.fc_memory {
            stores.fc_memory = load_fc_memory(path)?;
        }
        if let Some(path) = &paths.user_inputs {
            stores.user_inputs = load_user_inputs(path)?;
        }
        let reference = match reference {
            Some(path) => load_reference(path)?,
            None => Vec::new(),
        };
        Ok(Resources {
            catalogs,
            stores,
            reference,
        })
    }
}

pub fn load_reference(path: &Path) -> Result<Vec<ReferenceRow>, LoadError> {
    let err = |message: String| LoadError::Reference {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

#[derive(Debug, Clone)]
pub(crate) struct StoredResponse {
    pub status: StatusCode,
    pub body: Value,
}

pub(crate) struct SessionEntry {
    pub state: SessionState,
    pub eval_seed: u64,
    /// Responses of earlier state-changing requests, by idempotency key.
    pub replays: HashMap<String, StoredResponse>,
}

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub catalogs: Catalogs,
    pub reference: Vec<ReferenceRow>,
    pub stores: RwLock<KnowledgeStores>,
    pub sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    pub created: std::sync::Mutex<HashMap<String, StoredResponse>>,
    pub endpoint: Endpoint,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl AppState {
    pub fn new(config: ServiceConfig, resources: Resources) -> Self {
        let endpoint = match (&config.article_dir, &config.wiki_base_url) {
            (Some(dir), _) => Endpoint::Path(dir.clone()),
            (None, Some(base)) => Endpoint::Remote(RemoteWiki::with_base_url(base)),
            (None, None) => Endpoint::Remote(RemoteWiki::from_env()),
        };
        AppState {
            inner: Arc::new(Inner {
                config,
                catalogs: resources.catalogs,
                reference: resources.reference,
                stores: RwLock::new(resources.stores),
                sessions: RwLock::new(HashMap::new()),
                created: std::sync::Mutex::new(HashMap::new()),
                endpoint,
            }),
        }
    }

    /// Loads catalogs and every session file in the session directory.
    pub fn from_config(config: ServiceConfig) -> Result<Self, LoadError> {
        let resources = Resources::load(&config.catalogs, config.reference_table.as_deref())?;
        let app = AppState::new(config, resources);
        if let Some(dir) = app.inner.config.session_dir.clone() {
            app.load_sessions(&dir)?;
        }
        Ok(app)
    }

    fn load_sessions(&self, dir: &Path) -> Result<(), LoadError> {
        let dir_err = |source| LoadError::SessionDir {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(dir_err)?;
        for entry in std::fs::read_dir(dir).map_err(dir_err)? {
            let path = entry.map_err(dir_err)?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
                continue;
            };
            let state = load_session(&path).map_err(|source| LoadError::Session {
                path: path.clone(),
                source,
            })?;
            self.insert(id, state);
        }
        tracing::info!(count = self.session_count(), dir = %dir.display(), "sessions loaded");
        Ok(())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().expect("session map").len()
    }

    /// Registers a session under `id`; returns false when the id is taken.
    pub fn insert(&self, id: String, state: SessionState) -> bool {
        let eval_seed = fnv1a(&[&self.inner.config.eval_seed.to_le_bytes(), id.as_bytes()]);
        let mut sessions = self.inner.sessions.write().expect("session map");
        if sessions.contains_key(&id) {
            return false;
        }
        sessions.insert(
            id,
            Arc::new(Mutex::new(SessionEntry {
                state,
                eval_seed,
                replays: HashMap::new(),
            })),
        );
        true
    }

    pub(crate) fn entry(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    pub(crate) fn all_entries(&self) -> Vec<(String, Arc<Mutex<SessionEntry>>)> {
        let mut all: Vec<_> = self
            .inner
            .sessions
            .read()
            .expect("session map")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        all.sort_by(|a, b| a.0.cmp(&b.0));
        all
    }

    pub(crate) fn persist(&self, id: &str, state: &SessionState) -> Result<(), ApiError> {
        let Some(dir) = &self.inner.config.session_dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir).map_err(ApiError::storage)?;
        save_session(state, &dir.join(format!("{id}.json"))).map_err(ApiError::storage)
    }

    /// Seed for one popup: stable per session and target.
    pub(crate) fn popup_seed(session_seed: u64, target: &str) -> u64 {
        fnv1a(&[&session_seed.to_le_bytes(), target.as_bytes()])
    }
}
