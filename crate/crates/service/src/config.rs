use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use mathlink_core::recommend::RecommenderConfig;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid value for {var}: `{value}`")]
    Env { var: &'static str, value: String },
}

/// Dataset files; any of them may be absent.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogPaths {
    pub arxiv: Option<PathBuf>,
    pub wikipedia: Option<PathBuf>,
    pub wikidata: Option<PathBuf>,
    /// Identifier list built from earlier manual input.
    pub user_input: Option<PathBuf>,
    pub formulas: Option<PathBuf>,
    pub fc_memory: Option<PathBuf>,
    /// Typed-name store shared across sessions.
    pub user_inputs: Option<PathBuf>,
}

impl CatalogPaths {
    /// Conventional file names inside one directory, kept only when present.
    pub fn from_dir(dir: &Path) -> Self {
        let pick = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        CatalogPaths {
            arxiv: pick("arxiv.tsv"),
            wikipedia: pick("wikipedia.tsv"),
            wikidata: pick("wikidata.tsv"),
            user_input: pick("user_input.tsv"),
            formulas: pick("formulas.json"),
            fc_memory: pick("fc_memory.json"),
            user_inputs: pick("user_inputs.json"),
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.arxiv,
            &mut self.wikipedia,
            &mut self.wikidata,
            &mut self.user_input,
            &mut self.formulas,
            &mut self.fc_memory,
            &mut self.user_inputs,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Sessions are persisted here as `<id>.json` and reloaded on start.
    pub session_dir: Option<PathBuf>,
    /// Serve articles from local files instead of the remote wiki.
    pub article_dir: Option<PathBuf>,
    pub wiki_base_url: Option<String>,
    /// Mixed into every per-session evaluation seed.
    pub eval_seed: u64,
    /// Published CG/DCG values to compare source reports against.
    pub reference_table: Option<PathBuf>,
    pub catalogs: CatalogPaths,
    pub recommender: RecommenderConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            session_dir: None,
            article_dir: None,
            wiki_base_url: None,
            eval_seed: 0,
            reference_table: None,
            catalogs: CatalogPaths::default(),
            recommender: RecommenderConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Relative paths in a config file are taken relative to that file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ServiceConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.session_dir,
            &mut config.article_dir,
            &mut config.reference_table,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        config.catalogs.resolve(base);
        Ok(config)
    }

    /// Optional file, then `MATHLINK_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let config = match path {
            Some(p) => ServiceConfig::from_file(p)?,
            None => ServiceConfig::default(),
        };
        config.with_env(|k| std::env::var(k).ok())
    }

    pub fn with_env(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn parse<T: std::str::FromStr>(var: &'static str, value: String) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::Env { var, value })
        }
        if let Some(v) = var("MATHLINK_BIND") {
            self.bind = parse("MATHLINK_BIND", v)?;
        }
        if let Some(v) = var("MATHLINK_PORT") {
            self.bind.set_port(parse("MATHLINK_PORT", v)?);
        }
        if let Some(v) = var("MATHLINK_SESSION_DIR") {
            self.session_dir = Some(v.into());
        }
        if let Some(v) = var("MATHLINK_ARTICLE_DIR") {
            self.article_dir = Some(v.into());
        }
        if let Some(v) = var("MATHLINK_WIKI_BASE_URL") {
            self.wiki_base_url = Some(v);
        }
        if let Some(v) = var("MATHLINK_EVAL_SEED") {
            self.eval_seed = parse("MATHLINK_EVAL_SEED", v)?;
        }
        if let Some(v) = var("MATHLINK_CATALOG_DIR") {
            self.catalogs = CatalogPaths::from_dir(Path::new(&v));
        }
        Ok(self)
    }
}
