//! Annotation sessions.
//!
//! A session is an append-only event log over one parsed document. The
//! effective state (annotations and rejections) is a fold over that log;
//! saving writes the log, loading replays it and checks the result against
//! the snapshot stored next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConceptKey, DocFormat, FcMemory, Origin, RawDocument, TargetKind, UserInputStore};
use crate::math::{
    extract_math_segments, tokenize_segment, ExtractionIssue, MathSegment, TokenKind, TokenizedFormula,
    TokenizerOptions,
};
use crate::qid::Qid;
use crate::recommend::{Source, CUTOFF};

pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown target {0}")]
    UnknownTarget(Target),
    #[error("{0} is already annotated")]
    AlreadyAnnotated(Target),
    #[error("{0} is not annotated")]
    NotAnnotated(Target),
    #[error("{0} was rejected")]
    Rejected(Target),
    #[error("{0} is already rejected")]
    AlreadyRejected(Target),
    #[error("invalid target {target}: {reason}")]
    InvalidTarget { target: Target, reason: String },
    #[error("accepted position {0} outside 1..={CUTOFF}")]
    InvalidPosition(u32),
    #[error("annotation name is empty")]
    EmptyName,
    #[error("session file schema violation: {0}")]
    SchemaViolation(String),
    #[error("session file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("event log is inconsistent at event {seq}: {reason}")]
    InvalidEventLog { seq: u64, reason: String },
    #[error("replayed state differs from the stored snapshot")]
    ReplayMismatch,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Something the annotator can click on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Target {
    /// Every occurrence of an identifier symbol.
    Identifier { symbol: String },
    /// One identifier token inside one formula.
    Occurrence { segment_id: usize, token_index: usize },
    /// A whole formula segment.
    Formula { segment_id: usize },
}

impl Target {
    pub fn kind(&self) -> TargetKind {
        match self {
            Target::Identifier { .. } | Target::Occurrence { .. } => TargetKind::Identifier,
            Target::Formula { .. } => TargetKind::Formula,
        }
    }

    pub fn identifier(symbol: impl Into<String>) -> Self {
        Target::Identifier { symbol: symbol.into() }
    }
}

/// `identifier:<symbol>`, `occurrence:<segment>:<token>`, `formula:<segment>`.
impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Identifier { symbol } => write!(f, "identifier:{symbol}"),
            Target::Occurrence {
                segment_id,
                token_index,
            } => write!(f, "occurrence:{segment_id}:{token_index}"),
            Target::Formula { segment_id } => write!(f, "formula:{segment_id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse target `{0}`")]
pub struct ParseTargetError(pub String);

impl FromStr for Target {
    type Err = ParseTargetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTargetError(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(err)?;
        match kind {
            "identifier" if !rest.is_empty() => Ok(Target::identifier(rest)),
            "occurrence" => {
                let (seg, tok) = rest.split_once(':').ok_or_else(err)?;
                Ok(Target::Occurrence {
                    segment_id: seg.parse().map_err(|_| err())?,
                    token_index: tok.parse().map_err(|_| err())?,
                })
            }
            "formula" => Ok(Target::Formula {
                segment_id: rest.parse().map_err(|_| err())?,
            }),
            _ => Err(err()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    Recommended { source: Source, position: u32 },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub target: Target,
    pub name: String,
    pub qid: Option<Qid>,
    pub mode: Mode,
    pub provenance: Provenance,
    pub elapsed_ms: u64,
}

/// Client request to annotate a target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub target: Target,
    pub name: String,
    #[serde(default)]
    pub qid: Option<Qid>,
    #[serde(default)]
    pub mode: Mode,
    pub provenance: Provenance,
    #[serde(default)]
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventAction {
    AcceptRecommendation {
        target: Target,
        name: String,
        qid: Option<Qid>,
        mode: Mode,
        source: Source,
        position: u32,
        elapsed_ms: u64,
    },
    ManualInsert {
        target: Target,
        name: String,
        qid: Option<Qid>,
        mode: Mode,
        elapsed_ms: u64,
    },
    Undo {
        target: Target,
    },
    Reject {
        target: Target,
    },
}

impl EventAction {
    pub fn target(&self) -> &Target {
        match self {
            EventAction::AcceptRecommendation { target, .. }
            | EventAction::ManualInsert { target, .. }
            | EventAction::Undo { target }
            | EventAction::Reject { target } => target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub action: EventAction,
}

/// Store updates produced by an annotation; undo never retracts them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Learning {
    FormulaVariant { concept: ConceptKey, latex: String },
    TypedName { kind: TargetKind, key: String, name: String, qid: Option<Qid> },
}

/// Shared stores that accumulate across sessions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeStores {
    pub fc_memory: FcMemory,
    pub user_inputs: UserInputStore,
}

impl KnowledgeStores {
    pub fn learn(&mut self, learning: &Learning) {
        match learning {
            Learning::FormulaVariant { concept, latex } => {
                self.fc_memory.insert_variant(concept.clone(), latex);
            }
            Learning::TypedName { kind, key, name, qid } => {
                self.user_inputs.record(*kind, key, name, qid.clone());
            }
        }
    }
}

/// A local annotation whose name differs from another annotation of the same symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub symbol: String,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotateOutcome {
    pub learnings: Vec<Learning>,
    pub conflicts: Vec<Conflict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Progress {
    pub annotated: usize,
    pub total: usize,
    pub rejected: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Symbol(String),
    Occurrence(usize, usize),
    Segment(usize),
}

impl Key {
    fn of(target: &Target) -> Key {
        match target {
            Target::Identifier { symbol } => Key::Symbol(symbol.clone()),
            Target::Occurrence {
                segment_id,
                token_index,
            } => Key::Occurrence(*segment_id, *token_index),
            Target::Formula { segment_id } => Key::Segment(*segment_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    doc: RawDocument,
    options: TokenizerOptions,
    segments: Vec<MathSegment>,
    formulas: Vec<TokenizedFormula>,
    issues: Vec<ExtractionIssue>,
    occurrences: BTreeMap<String, Vec<(usize, usize)>>,
    annotations: BTreeMap<Key, Annotation>,
    rejected: BTreeSet<Target>,
    events: Vec<AnnotationEvent>,
}

impl SessionState {
    pub fn new(doc: RawDocument) -> Self {
        Self::with_options(doc, TokenizerOptions::default())
    }

    pub fn with_options(doc: RawDocument, options: TokenizerOptions) -> Self {
        let extraction = extract_math_segments(&doc);
        for issue in &extraction.issues {
            tracing::warn!(title = %doc.title, ?issue, "math extraction issue");
        }
        let formulas: Vec<TokenizedFormula> = extraction
            .segments
            .iter()
            .map(|s| tokenize_segment(s, &options))
            .collect();
        let mut occurrences: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for f in &formulas {
            for (tok, sym) in f.identifier_occurrences() {
                occurrences.entry(sym.to_string()).or_default().push((f.segment_id, tok));
            }
        }
        SessionState {
            doc,
            options,
            segments: extraction.segments,
            formulas,
            issues: extraction.issues,
            occurrences,
            annotations: BTreeMap::new(),
            rejected: BTreeSet::new(),
            events: Vec::new(),
        }
    }

    pub fn doc(&self) -> &RawDocument {
        &self.doc
    }

    pub fn options(&self) -> &TokenizerOptions {
        &self.options
    }

    pub fn segments(&self) -> &[MathSegment] {
        &self.segments
    }

    pub fn formulas(&self) -> &[TokenizedFormula] {
        &self.formulas
    }

    pub fn issues(&self) -> &[ExtractionIssue] {
        &self.issues
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.values()
    }

    pub fn rejected(&self) -> &BTreeSet<Target> {
        &self.rejected
    }

    /// `(segment_id, token_index)` of every occurrence of `symbol`.
    pub fn occurrences(&self, symbol: &str) -> &[(usize, usize)] {
        self.occurrences.get(symbol).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.occurrences.keys().map(String::as_str)
    }

    pub fn segment(&self, segment_id: usize) -> Option<&MathSegment> {
        self.segments.get(segment_id)
    }

    pub fn formula(&self, segment_id: usize) -> Option<&TokenizedFormula> {
        self.formulas.get(segment_id)
    }

    fn occurrence_symbol(&self, segment_id: usize, token_index: usize) -> Option<&str> {
        let tok = self.formulas.get(segment_id)?.tokens.get(token_index)?;
        (tok.kind == TokenKind::Identifier).then_some(())?;
        tok.symbol.as_deref()
    }

    /// Effective annotation covering a target, local before global.
    pub fn annotation_for(&self, target: &Target) -> Option<&Annotation> {
        match target {
            Target::Occurrence {
                segment_id,
                token_index,
            } => self
                .annotations
                .get(&Key::Occurrence(*segment_id, *token_index))
                .or_else(|| {
                    let sym = self.occurrence_symbol(*segment_id, *token_index)?;
                    self.annotations.get(&Key::Symbol(sym.to_string()))
                }),
            other => self.annotations.get(&Key::of(other)),
        }
    }

    pub fn is_rejected(&self, target: &Target) -> bool {
        match target {
            Target::Identifier { symbol } => {
                let occ = self.occurrences(symbol);
                !occ.is_empty()
                    && occ.iter().all(|&(s, t)| {
                        self.rejected.contains(&Target::Occurrence {
                            segment_id: s,
                            token_index: t,
                        })
                    })
            }
            other => self.rejected.contains(other),
        }
    }

    /// Number of occurrences of `symbol` that display an annotation.
    pub fn annotated_occurrences(&self, symbol: &str) -> usize {
        self.occurrences(symbol)
            .iter()
            .filter(|&&(s, t)| {
                let occ = Target::Occurrence {
                    segment_id: s,
                    token_index: t,
                };
                !self.rejected.contains(&occ) && self.annotation_for(&occ).is_some()
            })
            .count()
    }

    /// QIDs annotated on the identifiers of one formula.
    pub fn identifier_qids_in_segment(&self, segment_id: usize) -> BTreeSet<Qid> {
        let Some(f) = self.formulas.get(segment_id) else {
            return BTreeSet::new();
        };
        f.identifier_occurrences()
            .filter_map(|(tok, _)| {
                self.annotation_for(&Target::Occurrence {
                    segment_id,
                    token_index: tok,
                })
            })
            .filter_map(|a| a.qid.clone())
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let occurrence_total: usize = self.occurrences.values().map(Vec::len).sum();
        let total = occurrence_total + self.segments.len();
        let rejected = self.rejected.len();
        let annotated_ids: usize = self.occurrences.keys().map(|s| self.annotated_occurrences(s)).sum();
        let annotated_formulas = self.annotations.keys().filter(|k| matches!(k, Key::Segment(_))).count();
        let annotated = annotated_ids + annotated_formulas;
        let denominator = total - rejected;
        let fraction = if denominator == 0 {
            1.0
        } else {
            annotated as f64 / denominator as f64
        };
        Progress {
            annotated,
            total,
            rejected,
            fraction,
        }
    }

    fn check_exists(&self, target: &Target) -> Result<(), SessionError> {
        let ok = match target {
            Target::Identifier { symbol } => self.occurrences.contains_key(symbol),
            Target::Occurrence {
                segment_id,
                token_index,
            } => self.occurrence_symbol(*segment_id, *token_index).is_some(),
            Target::Formula { segment_id } => *segment_id < self.segments.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(SessionError::UnknownTarget(target.clone()))
        }
    }

    /// Resolves the target an annotation is stored under.
    fn normalize(&self, target: &Target, mode: Mode) -> Result<Target, SessionError> {
        self.check_exists(target)?;
        match (target, mode) {
            (Target::Identifier { .. }, Mode::Local) => Err(SessionError::InvalidTarget {
                target: target.clone(),
                reason: "local annotations need a single occurrence".into(),
            }),
            (
                Target::Occurrence {
                    segment_id,
                    token_index,
                },
                Mode::Global,
            ) => Ok(Target::identifier(
                self.occurrence_symbol(*segment_id, *token_index).expect("checked"),
            )),
            _ => Ok(target.clone()),
        }
    }

    pub fn annotate(&mut self, req: AnnotateRequest) -> Result<AnnotateOutcome, SessionError> {
        let target = self.normalize(&req.target, req.mode)?;
        let action = match req.provenance {
            Provenance::Recommended { source, position } => EventAction::AcceptRecommendation {
                target,
                name: req.name,
                qid: req.qid,
                mode: req.mode,
                source,
                position,
                elapsed_ms: req.elapsed_ms,
            },
            Provenance::Manual => EventAction::ManualInsert {
                target,
                name: req.name,
                qid: req.qid,
                mode: req.mode,
                elapsed_ms: req.elapsed_ms,
            },
        };
        self.record(action.clone())?;

        let mut outcome = AnnotateOutcome::default();
        let (target, name, qid, manual) = match &action {
            EventAction::AcceptRecommendation { target, name, qid, .. } => (target, name, qid, false),
            EventAction::ManualInsert { target, name, qid, .. } => (target, name, qid, true),
            _ => unreachable!(),
        };
        if let Target::Formula { segment_id } = target {
            outcome.learnings.push(Learning::FormulaVariant {
                concept: ConceptKey::new(name.clone(), qid.clone()),
                latex: self.segments[*segment_id].raw_latex.clone(),
            });
        }
        if manual {
            let key = match target {
                Target::Identifier { symbol } => symbol.clone(),
                Target::Occurrence {
                    segment_id,
                    token_index,
                } => self.occurrence_symbol(*segment_id, *token_index).unwrap_or_default().to_string(),
                Target::Formula { segment_id } => self.segments[*segment_id].raw_latex.clone(),
            };
            outcome.learnings.push(Learning::TypedName {
                kind: target.kind(),
                key,
                name: name.clone(),
                qid: qid.clone(),
            });
        }
        if let Target::Occurrence {
            segment_id,
            token_index,
        } = target
        {
            let symbol = self.occurrence_symbol(*segment_id, *token_index).unwrap_or_default().to_string();
            let names: BTreeSet<String> = self
                .occurrences(&symbol)
                .iter()
                .filter_map(|&(s, t)| {
                    self.annotation_for(&Target::Occurrence {
                        segment_id: s,
                        token_index: t,
                    })
                })
                .map(|a| a.name.clone())
                .collect();
            if names.len() > 1 {
                tracing::warn!(%symbol, ?names, "identifier annotated with different meanings in one document");
                outcome.conflicts.push(Conflict {
                    symbol,
                    names: names.into_iter().collect(),
                });
            }
        }
        Ok(outcome)
    }

    /// Removes the annotation covering `target`; local annotations first.
    pub fn unannotate(&mut self, target: &Target) -> Result<(), SessionError> {
        self.check_exists(target)?;
        let stored = match target {
            Target::Occurrence {
                segment_id,
                token_index,
            } if !self.annotations.contains_key(&Key::of(target)) => {
                Target::identifier(self.occurrence_symbol(*segment_id, *token_index).expect("checked"))
            }
            other => other.clone(),
        };
        self.record(EventAction::Undo { target: stored })
    }

    pub fn reject(&mut self, target: &Target) -> Result<(), SessionError> {
        self.check_exists(target)?;
        self.record(EventAction::Reject { target: target.clone() })
    }

    fn record(&mut self, action: EventAction) -> Result<(), SessionError> {
        let event = AnnotationEvent {
            seq: self.events.len() as u64 + 1,
            timestamp: Utc::now(),
            action,
        };
        self.apply(&event.action)?;
        self.events.push(event);
        Ok(())
    }

    /// State transition for one event; shared by live mutation and replay.
    fn apply(&mut self, action: &EventAction) -> Result<(), SessionError> {
        match action {
            EventAction::AcceptRecommendation {
                target,
                name,
                qid,
                mode,
                source,
                position,
                elapsed_ms,
            } => {
                if !(1..=CUTOFF as u32).contains(position) {
                    return Err(SessionError::InvalidPosition(*position));
                }
                self.insert_annotation(Annotation {
                    target: target.clone(),
                    name: name.clone(),
                    qid: qid.clone(),
                    mode: *mode,
                    provenance: Provenance::Recommended {
                        source: *source,
                        position: *position,
                    },
                    elapsed_ms: *elapsed_ms,
                })
            }
            EventAction::ManualInsert {
                target,
                name,
                qid,
                mode,
                elapsed_ms,
            } => self.insert_annotation(Annotation {
                target: target.clone(),
                name: name.clone(),
                qid: qid.clone(),
                mode: *mode,
                provenance: Provenance::Manual,
                elapsed_ms: *elapsed_ms,
            }),
            EventAction::Undo { target } => {
                self.check_exists(target)?;
                self.annotations
                    .remove(&Key::of(target))
                    .map(|_| ())
                    .ok_or_else(|| SessionError::NotAnnotated(target.clone()))
            }
            EventAction::Reject { target } => {
                if matches!(target, Target::Identifier { .. }) {
                    return Err(SessionError::InvalidTarget {
                        target: target.clone(),
                        reason: "reject a single occurrence or a formula".into(),
                    });
                }
                self.check_exists(target)?;
                if self.annotation_for(target).is_some() {
                    return Err(SessionError::AlreadyAnnotated(target.clone()));
                }
                if !self.rejected.insert(target.clone()) {
                    return Err(SessionError::AlreadyRejected(target.clone()));
                }
                Ok(())
            }
        }
    }

    fn insert_annotation(&mut self, annotation: Annotation) -> Result<(), SessionError> {
        let target = &annotation.target;
        self.check_exists(target)?;
        if annotation.name.trim().is_empty() {
            return Err(SessionError::EmptyName);
        }
        match (target, annotation.mode) {
            (Target::Identifier { .. }, Mode::Local) | (Target::Occurrence { .. }, Mode::Global) => {
                return Err(SessionError::InvalidTarget {
                    target: target.clone(),
                    reason: "mode does not match target scope".into(),
                })
            }
            _ => {}
        }
        if self.is_rejected(target) {
            return Err(SessionError::Rejected(target.clone()));
        }
        let key = Key::of(target);
        if self.annotations.contains_key(&key) {
            return Err(SessionError::AlreadyAnnotated(target.clone()));
        }
        self.annotations.insert(key, annotation);
        Ok(())
    }

    /// Rebuilds a session by folding `events` over a freshly parsed document.
    pub fn replay(
        doc: RawDocument,
        options: TokenizerOptions,
        events: Vec<AnnotationEvent>,
    ) -> Result<Self, SessionError> {
        let mut state = SessionState::with_options(doc, options);
        for (i, event) in events.into_iter().enumerate() {
            if event.seq != i as u64 + 1 {
                return Err(SessionError::InvalidEventLog {
                    seq: event.seq,
                    reason: format!("expected sequence number {}", i + 1),
                });
            }
            state.apply(&event.action).map_err(|e| SessionError::InvalidEventLog {
                seq: event.seq,
                reason: e.to_string(),
            })?;
            state.events.push(event);
        }
        Ok(state)
    }

    /// One row per effective annotation, ordered by first occurrence in the document.
    pub fn annotation_table(&self) -> Vec<TableRow> {
        let mut rows: Vec<(usize, u8, TableRow)> = self
            .annotations
            .values()
            .map(|a| {
                let (pos, text, order) = match &a.target {
                    Target::Identifier { symbol } => {
                        let pos = self
                            .occurrences(symbol)
                            .iter()
                            .map(|&(s, t)| self.token_offset(s, t))
                            .min()
                            .unwrap_or(usize::MAX);
                        (pos, symbol.clone(), 1)
                    }
                    Target::Occurrence {
                        segment_id,
                        token_index,
                    } => (
                        self.token_offset(*segment_id, *token_index),
                        self.occurrence_symbol(*segment_id, *token_index).unwrap_or_default().to_string(),
                        1,
                    ),
                    Target::Formula { segment_id } => {
                        let seg = &self.segments[*segment_id];
                        (seg.span.0, seg.raw_latex.clone(), 0)
                    }
                };
                let (source, position) = match a.provenance {
                    Provenance::Recommended { source, position } => (Some(source), Some(position)),
                    Provenance::Manual => (None, None),
                };
                let kind = a.target.kind();
                (
                    pos,
                    order,
                    TableRow {
                        target: a.target.clone(),
                        target_text: text,
                        kind,
                        bold: kind == TargetKind::Identifier,
                        name: a.name.clone(),
                        qid: a.qid.clone(),
                        mode: a.mode,
                        source,
                        position,
                        elapsed_ms: a.elapsed_ms,
                    },
                )
            })
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then_with(|| a.2.target.cmp(&b.2.target)));
        rows.into_iter().map(|(_, _, r)| r).collect()
    }

    fn token_offset(&self, segment_id: usize, token_index: usize) -> usize {
        let seg = &self.segments[segment_id];
        seg.content_span.0 + self.formulas[segment_id].tokens[token_index].span.0
    }

    /// Formula annotations that carry a QID, keyed by segment.
    pub fn formula_qids(&self) -> BTreeMap<usize, Qid> {
        self.annotations
            .values()
            .filter_map(|a| match (&a.target, &a.qid) {
                (Target::Formula { segment_id }, Some(q)) => Some((*segment_id, q.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn to_file(&self) -> SessionFile {
        SessionFile {
            format_version: SESSION_FORMAT_VERSION,
            document: self.doc.clone(),
            tokenizer: self.options.clone(),
            events: self.events.clone(),
            effective: Snapshot {
                annotations: self.annotations.values().cloned().collect(),
                rejected: self.rejected.iter().cloned().collect(),
            },
        }
    }

    pub fn from_file(file: SessionFile) -> Result<Self, SessionError> {
        if file.format_version != SESSION_FORMAT_VERSION {
            return Err(SessionError::VersionMismatch {
                found: file.format_version,
                expected: SESSION_FORMAT_VERSION,
            });
        }
        if file.document.body.is_empty() {
            return Err(SessionError::SchemaViolation("document body is empty".into()));
        }
        let state = SessionState::replay(file.document, file.tokenizer, file.events)?;
        let snapshot = Snapshot {
            annotations: state.annotations.values().cloned().collect(),
            rejected: state.rejected.iter().cloned().collect(),
        };
        if snapshot != file.effective {
            return Err(SessionError::ReplayMismatch);
        }
        Ok(state)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("session serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let file: SessionFile =
            serde_json::from_str(text).map_err(|e| SessionError::SchemaViolation(e.to_string()))?;
        SessionState::from_file(file)
    }
}

/// On-disk session: the event log plus the state it folds to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub format_version: u32,
    pub document: RawDocument,
    #[serde(default)]
    pub tokenizer: TokenizerOptions,
    pub events: Vec<AnnotationEvent>,
    pub effective: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub annotations: Vec<Annotation>,
    pub rejected: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub target: Target,
    pub target_text: String,
    pub kind: TargetKind,
    /// Identifier rows render in bold.
    pub bold: bool,
    pub name: String,
    pub qid: Option<Qid>,
    pub mode: Mode,
    pub source: Option<Source>,
    pub position: Option<u32>,
    pub elapsed_ms: u64,
}

pub fn create_session(doc: RawDocument) -> SessionState {
    SessionState::new(doc)
}

pub fn save_session(session: &SessionState, path: &Path) -> Result<(), SessionError> {
    std::fs::write(path, session.to_json())?;
    Ok(())
}

pub fn load_session(path: &Path) -> Result<SessionState, SessionError> {
    SessionState::from_json(&std::fs::read_to_string(path)?)
}

/// Convenience for tests and fixtures: an in-memory Wikitext document.
pub fn wikitext_document(title: &str, body: &str) -> RawDocument {
    RawDocument::new(title, body, DocFormat::Wikitext, Origin::File).expect("non-empty body")
}
