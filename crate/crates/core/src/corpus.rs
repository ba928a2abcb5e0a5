//! Documents and recommendation-source datasets.
//!
//! Identifier frequency lists are TSV (`symbol<TAB>name<TAB>qid<TAB>rank`),
//! formula items and the Formula Concept memory are JSON. Catalogs are
//! read-only once loaded; the memory and the user-input store are the two
//! stores that sessions keep teaching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{canonicalize_latex, is_identifier_key};
use crate::qid::{InvalidQid, Qid};
use crate::recommend::Source;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileMissing(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("invalid QID at line {line}: {qid}")]
    InvalidQid { line: usize, qid: String },
    #[error("duplicate QID {0} in formula catalog")]
    DuplicateQid(Qid),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("article not found: {0}")]
    NotFound(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
}

impl CorpusError {
    fn schema(line: usize, message: impl Into<String>) -> Self {
        CorpusError::SchemaViolation {
            line,
            message: message.into(),
        }
    }

    fn from_json(err: serde_json::Error) -> Self {
        CorpusError::schema(err.line(), err.to_string())
    }
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::FileMissing(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFormat {
    Wikitext,
    Latex,
}

impl DocFormat {
    /// `.tex` files are LaTeX, everything else is treated as Wikitext.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tex") => DocFormat::Latex,
            _ => DocFormat::Wikitext,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    File,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub title: String,
    pub body: String,
    pub format: DocFormat,
    pub retrieved_at: DateTime<Utc>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

impl RawDocument {
    pub fn new(
        title: impl Into<String>,
        body: impl Into<String>,
        format: DocFormat,
        origin: Origin,
    ) -> Result<Self, CorpusError> {
        let title = title.into();
        let body = body.into();
        if body.is_empty() {
            return Err(CorpusError::EmptyBody(title));
        }
        Ok(RawDocument {
            title,
            body,
            format,
            retrieved_at: Utc::now(),
            origin,
            revision: None,
        })
    }

    /// Reads a document from disk; the title is the file stem.
    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let body = read_file(path)?;
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        RawDocument::new(title, body, DocFormat::from_path(path), Origin::File)
    }
}

/// Which frequency list an [`IdentifierCatalog`] was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogKind {
    Arxiv,
    Wikipedia,
    Wikidata,
    UserInput,
}

impl CatalogKind {
    pub fn source(self) -> Source {
        match self {
            CatalogKind::Arxiv => Source::Arxiv,
            CatalogKind::Wikipedia => Source::Wikipedia,
            CatalogKind::Wikidata => Source::Wikidata,
            CatalogKind::UserInput => Source::UserInput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierCandidate {
    pub name: String,
    pub qid: Option<Qid>,
    pub frequency_rank: u32,
}

/// Per-symbol candidate names ranked by corpus frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifierCatalog {
    kind: CatalogKind,
    entries: BTreeMap<String, Vec<IdentifierCandidate>>,
}

impl IdentifierCatalog {
    pub fn kind(&self) -> CatalogKind {
        self.kind
    }

    pub fn candidates(&self, symbol: &str) -> &[IdentifierCandidate] {
        self.entries.get(symbol).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse_tsv(text: &str, kind: CatalogKind) -> Result<Self, CorpusError> {
        // (symbol, name) -> (rank, qid, line)
        let mut best: BTreeMap<(String, String), (u32, Option<Qid>, usize)> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(CorpusError::schema(
                    line_no,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let (symbol, name, qid, rank) = (fields[0], fields[1].trim(), fields[2].trim(), fields[3].trim());
            if !is_identifier_key(symbol) {
                return Err(CorpusError::schema(
                    line_no,
                    format!("`{symbol}` is not a single Latin or Greek identifier"),
                ));
            }
            if name.is_empty() {
                return Err(CorpusError::schema(line_no, "empty name"));
            }
            let qid = if qid.is_empty() {
                None
            } else {
                Some(Qid::new(qid).map_err(|InvalidQid(q)| CorpusError::InvalidQid { line: line_no, qid: q })?)
            };
            let rank: u32 = match rank.parse() {
                Ok(r) if r > 0 => r,
                _ => return Err(CorpusError::schema(line_no, format!("rank `{rank}` is not a positive integer"))),
            };
            let key = (symbol.to_string(), name.to_string());
            match best.get(&key) {
                Some((r, _, _)) if *r <= rank => {}
                _ => {
                    best.insert(key, (rank, qid, line_no));
                }
            }
        }

        let mut entries: BTreeMap<String, Vec<(IdentifierCandidate, usize)>> = BTreeMap::new();
        for ((symbol, name), (frequency_rank, qid, line)) in best {
            entries.entry(symbol).or_default().push((
                IdentifierCandidate {
                    name,
                    qid,
                    frequency_rank,
                },
                line,
            ));
        }
        let mut out = BTreeMap::new();
        for (symbol, mut list) in entries {
            list.sort_by(|a, b| a.0.frequency_rank.cmp(&b.0.frequency_rank).then_with(|| a.0.name.cmp(&b.0.name)));
            for pair in list.windows(2) {
                if pair[0].0.frequency_rank == pair[1].0.frequency_rank {
                    return Err(CorpusError::schema(
                        pair[1].1.max(pair[0].1),
                        format!("rank {} used twice for symbol `{symbol}`", pair[1].0.frequency_rank),
                    ));
                }
            }
            out.insert(symbol, list.into_iter().map(|(c, _)| c).collect());
        }
        Ok(IdentifierCatalog { kind, entries: out })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (symbol, list) in &self.entries {
            for c in list {
                let qid = c.qid.as_ref().map(Qid::as_str).unwrap_or("");
                let _ = writeln!(s, "{symbol}\t{}\t{qid}\t{}", c.name, c.frequency_rank);
            }
        }
        s
    }
}

pub fn load_identifier_catalog(path: &Path, kind: CatalogKind) -> Result<IdentifierCatalog, CorpusError> {
    IdentifierCatalog::parse_tsv(&read_file(path)?, kind)
}

pub fn save_identifier_catalog(catalog: &IdentifierCatalog, path: &Path) -> Result<(), CorpusError> {
    write_file(path, &catalog.to_tsv())
}

/// A knowledge-base item describing a formula.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulaItem {
    pub qid: Qid,
    pub name: String,
    /// LaTeX of the `defining formula` statement; items that still lack one
    /// are kept so seeding can report them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defining_formula: Option<String>,
    #[serde(default)]
    pub has_part: BTreeSet<Qid>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub calculated_from: BTreeSet<Qid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FormulaCatalog {
    items: Vec<FormulaItem>,
    by_qid: BTreeMap<Qid, usize>,
}

impl FormulaCatalog {
    pub fn new(items: Vec<FormulaItem>) -> Result<Self, CorpusError> {
        let mut by_qid = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if let Some(f) = &item.defining_formula {
                if f.trim().is_empty() {
                    return Err(CorpusError::schema(0, format!("{} has an empty defining_formula", item.qid)));
                }
            }
            if by_qid.insert(item.qid.clone(), i).is_some() {
                return Err(CorpusError::DuplicateQid(item.qid.clone()));
            }
        }
        Ok(FormulaCatalog { items, by_qid })
    }

    pub fn items(&self) -> &[FormulaItem] {
        &self.items
    }

    pub fn get(&self, qid: &Qid) -> Option<&FormulaItem> {
        self.by_qid.get(qid).map(|&i| &self.items[i])
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let items: Vec<FormulaItem> = serde_json::from_str(text).map_err(CorpusError::from_json)?;
        FormulaCatalog::new(items)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.items).expect("formula items serialize")
    }
}

pub fn load_formula_catalog(path: &Path) -> Result<FormulaCatalog, CorpusError> {
    FormulaCatalog::from_json(&read_file(path)?)
}

pub fn save_formula_catalog(catalog: &FormulaCatalog, path: &Path) -> Result<(), CorpusError> {
    write_file(path, &catalog.to_json())
}

/// Name and optional QID identifying a Formula Concept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptKey {
    pub name: String,
    pub qid: Option<Qid>,
}

impl ConceptKey {
    pub fn new(name: impl Into<String>, qid: Option<Qid>) -> Self {
        ConceptKey { name: name.into(), qid }
    }
}

#[derive(Serialize, Deserialize)]
struct ConceptRecord {
    name: String,
    qid: Option<Qid>,
    variants: Vec<String>,
}

/// Past formula annotations: every LaTeX variant seen per concept.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FcMemory {
    concepts: BTreeMap<ConceptKey, BTreeSet<String>>,
}

impl FcMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variant unless one with the same canonical form is already
    /// stored for the concept. Returns whether the memory changed.
    pub fn insert_variant(&mut self, key: ConceptKey, latex: &str) -> bool {
        let variants = self.concepts.entry(key).or_default();
        let canonical = canonicalize_latex(latex);
        if variants.iter().any(|v| canonicalize_latex(v) == canonical) {
            return false;
        }
        variants.insert(latex.to_string())
    }

    pub fn variants(&self, key: &ConceptKey) -> Option<&BTreeSet<String>> {
        self.concepts.get(key)
    }

    pub fn concepts(&self) -> impl Iterator<Item = (&ConceptKey, &BTreeSet<String>)> {
        self.concepts.iter()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let records: Vec<ConceptRecord> = serde_json::from_str(text).map_err(CorpusError::from_json)?;
        let mut concepts = BTreeMap::new();
        for (i, rec) in records.into_iter().enumerate() {
            let key = ConceptKey::new(rec.name, rec.qid);
            let mut canon = BTreeSet::new();
            let mut set = BTreeSet::new();
            for v in rec.variants {
                if !canon.insert(canonicalize_latex(&v)) {
                    return Err(CorpusError::schema(
                        0,
                        format!("concept #{i} `{}` has two variants with canonical form of `{v}`", key.name),
                    ));
                }
                set.insert(v);
            }
            if concepts.insert(key.clone(), set).is_some() {
                return Err(CorpusError::schema(0, format!("concept `{}` listed twice", key.name)));
            }
        }
        Ok(FcMemory { concepts })
    }

    pub fn to_json(&self) -> String {
        let records: Vec<ConceptRecord> = self
            .concepts
            .iter()
            .map(|(k, v)| ConceptRecord {
                name: k.name.clone(),
                qid: k.qid.clone(),
                variants: v.iter().cloned().collect(),
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("memory serializes")
    }
}

pub fn load_fc_memory(path: &Path) -> Result<FcMemory, CorpusError> {
    FcMemory::from_json(&read_file(path)?)
}

pub fn save_fc_memory(memory: &FcMemory, path: &Path) -> Result<(), CorpusError> {
    write_file(path, &memory.to_json())
}

/// Whether a manually typed name was for an identifier or a formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Identifier,
    Formula,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct UserInputRecord {
    kind: TargetKind,
    key: String,
    name: String,
    qid: Option<Qid>,
    count: u32,
}

/// Names users typed in by hand, keyed by identifier symbol or by the
/// canonical LaTeX of the formula they were typed for.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UserInputStore {
    entries: BTreeMap<(TargetKind, String), BTreeMap<ConceptKey, u32>>,
}

impl UserInputStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: TargetKind, key: &str, name: &str, qid: Option<Qid>) {
        let key = match kind {
            TargetKind::Identifier => key.to_string(),
            TargetKind::Formula => canonicalize_latex(key),
        };
        *self
            .entries
            .entry((kind, key))
            .or_default()
            .entry(ConceptKey::new(name, qid))
            .or_insert(0) += 1;
    }

    /// Stored names for a key, most frequently typed first.
    pub fn lookup(&self, kind: TargetKind, key: &str) -> Vec<(&ConceptKey, u32)> {
        let key = match kind {
            TargetKind::Identifier => key.to_string(),
            TargetKind::Formula => canonicalize_latex(key),
        };
        let mut out: Vec<_> = self
            .entries
            .get(&(kind, key))
            .map(|m| m.iter().map(|(k, &c)| (k, c)).collect())
            .unwrap_or_default();
        out.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| crate::qid::cmp_optional(a.0.qid.as_ref(), b.0.qid.as_ref()))
                .then_with(|| a.0.name.cmp(&b.0.name))
        });
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let records: Vec<UserInputRecord> = serde_json::from_str(text).map_err(CorpusError::from_json)?;
        let mut store = UserInputStore::new();
        for r in records {
            store
                .entries
                .entry((r.kind, r.key))
                .or_default()
                .insert(ConceptKey::new(r.name, r.qid), r.count);
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        let records: Vec<UserInputRecord> = self
            .entries
            .iter()
            .flat_map(|((kind, key), names)| {
                names.iter().map(move |(n, &count)| UserInputRecord {
                    kind: *kind,
                    key: key.clone(),
                    name: n.name.clone(),
                    qid: n.qid.clone(),
                    count,
                })
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("store serializes")
    }
}

pub fn load_user_inputs(path: &Path) -> Result<UserInputStore, CorpusError> {
    UserInputStore::from_json(&read_file(path)?)
}

pub fn save_user_inputs(store: &UserInputStore, path: &Path) -> Result<(), CorpusError> {
    write_file(path, &store.to_json())
}

/// Where [`fetch_article`] looks for article source.
#[derive(Debug, Clone)]
pub enum Endpoint {
    /// A single article file, or a directory of `<title>.wiki|.wikitext|.txt|.tex` files.
    Path(PathBuf),
    Remote(RemoteWiki),
}

/// Raw-source HTTP endpoint of a MediaWiki installation.
#[derive(Debug, Clone)]
pub struct RemoteWiki {
    /// URL with a `{title}` placeholder.
    pub url_template: String,
    pub max_retries: u32,
    pub timeout: Duration,
    /// Upper bound on a single honored `Retry-After` wait.
    pub max_retry_wait: Duration,
}

pub const WIKI_BASE_URL_ENV: &str = "MATHLINK_WIKI_BASE_URL";

impl RemoteWiki {
    pub fn with_base_url(base: &str) -> Self {
        RemoteWiki {
            url_template: format!("{}/w/index.php?title={{title}}&action=raw", base.trim_end_matches('/')),
            max_retries: 2,
            timeout: Duration::from_secs(30),
            max_retry_wait: Duration::from_secs(60),
        }
    }

    /// Base URL from `MATHLINK_WIKI_BASE_URL`, defaulting to English Wikipedia.
    pub fn from_env() -> Self {
        let base = std::env::var(WIKI_BASE_URL_ENV).unwrap_or_else(|_| "https://en.wikipedia.org".to_string());
        RemoteWiki::with_base_url(&base)
    }

    fn url_for(&self, title: &str) -> String {
        self.url_template.replace("{title}", &encode_title(title))
    }
}

fn encode_title(title: &str) -> String {
    let mut out = String::with_capacity(title.len());
    for b in title.replace(' ', "_").bytes() {
        if b.is_ascii_alphanumeric() || b"-._~()".contains(&b) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

pub fn fetch_article(title: &str, endpoint: &Endpoint) -> Result<RawDocument, CorpusError> {
    match endpoint {
        Endpoint::Path(path) => fetch_from_path(title, path),
        Endpoint::Remote(remote) => fetch_remote(title, remote),
    }
}

fn fetch_from_path(title: &str, path: &Path) -> Result<RawDocument, CorpusError> {
    if path.is_dir() {
        for ext in ["wiki", "wikitext", "txt", "tex"] {
            let candidate = path.join(format!("{title}.{ext}"));
            if candidate.is_file() {
                return fetch_from_path(title, &candidate);
            }
        }
        return Err(CorpusError::NotFound(title.to_string()));
    }
    let body = read_file(path)?;
    RawDocument::new(title, body, DocFormat::from_path(path), Origin::File)
}

fn fetch_remote(title: &str, remote: &RemoteWiki) -> Result<RawDocument, CorpusError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(remote.timeout)
        .user_agent(concat!("mathlink/", env!("CARGO_PKG_VERSION")))
        .build()
        .map_err(|e| CorpusError::Network(e.to_string()))?;
    let url = remote.url_for(title);
    let mut attempt = 0;
    loop {
        let resp = client.get(&url).send().map_err(|e| CorpusError::Network(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Err(CorpusError::NotFound(title.to_string()));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            if attempt >= remote.max_retries {
                return Err(CorpusError::RateLimited { retry_after });
            }
            attempt += 1;
            tracing::debug!(title, attempt, ?retry_after, "rate limited, retrying");
            thread::sleep(retry_after.unwrap_or(Duration::from_secs(1)).min(remote.max_retry_wait));
            continue;
        }
        if !status.is_success() {
            return Err(CorpusError::Network(format!("HTTP {status} for {url}")));
        }
        let body = resp.text().map_err(|e| CorpusError::Network(e.to_string()))?;
        return RawDocument::new(title, body, DocFormat::Wikitext, Origin::Remote);
    }
}
