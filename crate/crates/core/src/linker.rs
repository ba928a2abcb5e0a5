//! QID link insertion into Wikitext, knowledge-base seeding lists and
//! annotation-table export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConceptKey, FcMemory, FormulaCatalog, RawDocument, TargetKind};
use crate::math::{Display, MathSegment, TokenizedFormula};
use crate::qid::Qid;
use crate::recommend::Source;
use crate::session::{Mode, SessionState, Target};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("segment {0} has no editable opening tag")]
    MalformedTag(usize),
    #[error("annotation refers to unknown segment {0}")]
    UnknownSegment(usize),
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid export: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub candidates: usize,
    pub skipped_duplicates: usize,
    pub linked: usize,
    pub skipped_non_equation: usize,
    /// Inline equations left alone because only block math was requested.
    pub skipped_inline: usize,
}

impl std::ops::AddAssign for LinkStats {
    fn add_assign(&mut self, o: LinkStats) {
        self.candidates += o.candidates;
        self.skipped_duplicates += o.skipped_duplicates;
        self.linked += o.linked;
        self.skipped_non_equation += o.skipped_non_equation;
        self.skipped_inline += o.skipped_inline;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkOptions {
    /// Emit `qid="Q1"` instead of `qid=Q1`.
    pub quote_attrs: bool,
    pub block_only: bool,
}

/// Adds a `qid` attribute to the opening tag of each annotated equation.
///
/// Segments are visited in document order; a QID inserted earlier, or
/// carried by any pre-existing attribute, is skipped. Segments that already
/// carry a `qid` attribute are never touched and are not candidates.
pub fn insert_qid_links(
    doc: &RawDocument,
    segments: &[MathSegment],
    formulas: &[TokenizedFormula],
    annotations: &BTreeMap<usize, Qid>,
    options: LinkOptions,
) -> Result<(String, LinkStats), LinkError> {
    if let Some(&id) = annotations.keys().find(|&&id| id >= segments.len()) {
        return Err(LinkError::UnknownSegment(id));
    }
    let mut order: Vec<&MathSegment> = segments.iter().collect();
    order.sort_by_key(|s| s.span.0);

    let mut stats = LinkStats::default();
    // pre-existing attributes claim their QID anywhere in the document
    let mut seen: BTreeSet<String> = segments.iter().filter_map(|s| s.existing_qid.clone()).collect();
    let mut inserts: Vec<(usize, String)> = Vec::new();
    for seg in order {
        if seg.existing_qid.is_some() {
            continue;
        }
        let Some(qid) = annotations.get(&seg.segment_id) else {
            continue;
        };
        let is_equation = formulas
            .iter()
            .find(|f| f.segment_id == seg.segment_id)
            .is_some_and(|f| f.is_equation);
        if !is_equation {
            stats.skipped_non_equation += 1;
            continue;
        }
        if options.block_only && seg.display == Display::Inline {
            stats.skipped_inline += 1;
            continue;
        }
        stats.candidates += 1;
        if !seen.insert(qid.to_string()) {
            stats.skipped_duplicates += 1;
            continue;
        }
        let (start, end) = seg.open_tag.ok_or(LinkError::MalformedTag(seg.segment_id))?;
        let tag = &doc.body[start..end];
        if !tag.ends_with('>') || tag.ends_with("/>") {
            return Err(LinkError::MalformedTag(seg.segment_id));
        }
        let attr = if options.quote_attrs {
            format!(" qid=\"{qid}\"")
        } else {
            format!(" qid={qid}")
        };
        inserts.push((end - 1, attr));
        stats.linked += 1;
    }

    let mut out = String::with_capacity(doc.body.len() + inserts.len() * 12);
    let mut cursor = 0;
    for (at, attr) in inserts {
        out.push_str(&doc.body[cursor..at]);
        out.push_str(&attr);
        cursor = at;
    }
    out.push_str(&doc.body[cursor..]);
    Ok((out, stats))
}

/// Links a session's formula annotations into its document.
pub fn link_session(session: &SessionState, options: LinkOptions) -> Result<(String, LinkStats), LinkError> {
    insert_qid_links(
        session.doc(),
        session.segments(),
        session.formulas(),
        &session.formula_qids(),
        options,
    )
}

/// Which knowledge-base contributions a concept needs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub item: bool,
    pub formula: bool,
    pub parts: bool,
}

impl Contribution {
    pub fn is_empty(&self) -> bool {
        !(self.item || self.formula || self.parts)
    }
}

impl fmt::Display for Contribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.item, "i"), (self.formula, "f"), (self.parts, "p")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        f.write_str(&parts.join("/"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierProperty {
    #[default]
    HasPart,
    CalculatedFrom,
}

impl IdentifierProperty {
    pub fn abbreviation(self) -> &'static str {
        match self {
            IdentifierProperty::HasPart => "hp",
            IdentifierProperty::CalculatedFrom => "cf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub name: String,
    pub qid: Option<Qid>,
    pub contribution: Contribution,
    pub fc_variations: usize,
    pub identifier_property: IdentifierProperty,
}

pub const SEEDING_HEADER: [&str; 5] = ["Name", "QID", "Contrib.", "FC vars.", "Prop."];

/// Concepts annotated on formulae that still need item, formula or parts
/// contributions in the catalog, sorted by name.
pub fn seeding_list(sessions: &[SessionState], catalog: &FormulaCatalog, memory: &FcMemory) -> Vec<SeedEntry> {
    let mut concepts: BTreeMap<ConceptKey, BTreeSet<Qid>> = BTreeMap::new();
    for s in sessions {
        for a in s.annotations() {
            if let Target::Formula { segment_id } = a.target {
                concepts
                    .entry(ConceptKey::new(a.name.clone(), a.qid.clone()))
                    .or_default()
                    .extend(s.identifier_qids_in_segment(segment_id));
            }
        }
    }
    let mut out: Vec<SeedEntry> = concepts
        .into_iter()
        .filter_map(|(key, identifier_qids)| {
            let item = key.qid.as_ref().and_then(|q| catalog.get(q));
            let (contribution, identifier_property) = match item {
                None => (
                    Contribution {
                        item: true,
                        formula: true,
                        parts: true,
                    },
                    IdentifierProperty::HasPart,
                ),
                Some(item) => {
                    let (prop, parts) = if item.has_part.is_empty() && !item.calculated_from.is_empty() {
                        (IdentifierProperty::CalculatedFrom, &item.calculated_from)
                    } else {
                        (IdentifierProperty::HasPart, &item.has_part)
                    };
                    (
                        Contribution {
                            item: false,
                            formula: item.defining_formula.is_none(),
                            parts: parts.is_empty() || !identifier_qids.is_subset(parts),
                        },
                        prop,
                    )
                }
            };
            (!contribution.is_empty()).then(|| SeedEntry {
                fc_variations: memory.variants(&key).map_or(0, BTreeSet::len),
                name: key.name,
                qid: key.qid,
                contribution,
                identifier_property,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.name
            .to_lowercase()
            .cmp(&b.name.to_lowercase())
            .then_with(|| a.name.cmp(&b.name))
            .then_with(|| a.qid.cmp(&b.qid))
    });
    out
}

pub fn seeding_tsv(entries: &[SeedEntry]) -> String {
    let mut out = SEEDING_HEADER.join("\t");
    out.push('\n');
    for e in entries {
        let qid = e.qid.as_ref().map(Qid::to_string).unwrap_or_default();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.name,
            qid,
            e.contribution,
            e.fc_variations,
            e.identifier_property.abbreviation()
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

/// One annotation-table row in export form; field order is the column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub target: String,
    pub kind: TargetKind,
    pub name: String,
    pub qid: Option<Qid>,
    pub mode: Mode,
    pub source: Option<Source>,
    pub position: Option<u32>,
    pub elapsed_ms: u64,
}

pub const EXPORT_COLUMNS: [&str; 8] = ["target", "kind", "name", "qid", "mode", "source", "position", "elapsed_ms"];

pub fn export_rows(session: &SessionState) -> Vec<ExportRow> {
    session
        .annotation_table()
        .into_iter()
        .map(|r| ExportRow {
            target: r.target.to_string(),
            kind: r.kind,
            name: r.name,
            qid: r.qid,
            mode: r.mode,
            source: r.source,
            position: r.position,
            elapsed_ms: r.elapsed_ms,
        })
        .collect()
}

pub fn render_export(session: &SessionState, format: ExportFormat) -> Result<String, ExportError> {
    let rows = export_rows(session);
    match format {
        ExportFormat::Json => Ok(serde_json::to_string_pretty(&rows)?),
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(EXPORT_COLUMNS)?;
            for r in &rows {
                w.write_record([
                    r.target.clone(),
                    snake(&r.kind),
                    r.name.clone(),
                    r.qid.as_ref().map(Qid::to_string).unwrap_or_default(),
                    snake(&r.mode),
                    r.source.as_ref().map(snake).unwrap_or_default(),
                    r.position.map(|p| p.to_string()).unwrap_or_default(),
                    r.elapsed_ms.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

fn snake<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("expected a string enum, got {other:?}"),
    }
}

pub fn export_annotations(session: &SessionState, format: ExportFormat, path: &Path) -> Result<(), ExportError> {
    std::fs::write(path, render_export(session, format)?)?;
    Ok(())
}

pub fn import_annotations_json(text: &str) -> Result<Vec<ExportRow>, ExportError> {
    Ok(serde_json::from_str(text)?)
}
