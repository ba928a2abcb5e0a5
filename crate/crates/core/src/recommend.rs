//! Ranked name/QID recommendations per source.
//!
//! Sources are kept side by side; there is no merged ranking. Every list is
//! cut at [`CUTOFF`] and ranked from 1.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CatalogKind, DocFormat, FcMemory, FormulaCatalog, IdentifierCatalog, RawDocument, TargetKind};
use crate::math::{canonicalize_latex, MathSegment};
use crate::qid::{cmp_optional, Qid};
use crate::session::{KnowledgeStores, SessionState, Target};

/// Longest list any source may return.
pub const CUTOFF: usize = 10;

/// Recommendation sources in the order they are listed to the annotator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Arxiv,
    Wikipedia,
    Wikidata,
    WikidataFuzzy,
    WikidataParts,
    FcMemory,
    WordWindow,
    UserInput,
}

impl Source {
    pub const ALL: [Source; 8] = [
        Source::Arxiv,
        Source::Wikipedia,
        Source::Wikidata,
        Source::WikidataFuzzy,
        Source::WikidataParts,
        Source::FcMemory,
        Source::WordWindow,
        Source::UserInput,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Source::Arxiv => "arXiv",
            Source::Wikipedia => "Wikipedia",
            Source::Wikidata => "Wikidata",
            Source::WikidataFuzzy => "Wikidata fuzzy",
            Source::WikidataParts => "Wikidata parts",
            Source::FcMemory => "FC memory",
            Source::WordWindow => "Word window",
            Source::UserInput => "User input",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationCandidate {
    pub name: String,
    pub qid: Option<Qid>,
    pub source: Source,
    pub rank: u32,
    /// Similarity or overlap in `[0, 1]`; 1.0 for frequency-list entries.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedSource {
    pub label: String,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub target: Target,
    pub per_source: BTreeMap<Source, Vec<RecommendationCandidate>>,
    pub presentation: Vec<PresentedSource>,
}

impl RecommendationSet {
    fn new(target: Target, lists: Vec<(Source, Vec<RecommendationCandidate>)>) -> Self {
        let per_source: BTreeMap<_, _> = lists.into_iter().filter(|(_, l)| !l.is_empty()).collect();
        let presentation = canonical_presentation(&per_source);
        RecommendationSet {
            target,
            per_source,
            presentation,
        }
    }
}

fn canonical_presentation(per_source: &BTreeMap<Source, Vec<RecommendationCandidate>>) -> Vec<PresentedSource> {
    per_source
        .keys()
        .map(|&source| PresentedSource {
            label: source.display_name().to_string(),
            source,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderConfig {
    pub fuzzy_threshold: f64,
    /// Per-source list length, at most [`CUTOFF`].
    pub cutoff: usize,
    /// Words taken on each side of a formula.
    pub window: usize,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        RecommenderConfig {
            fuzzy_threshold: 0.7,
            cutoff: CUTOFF,
            window: 5,
        }
    }
}

impl RecommenderConfig {
    fn cutoff(&self) -> usize {
        self.cutoff.clamp(1, CUTOFF)
    }
}

/// All read-only datasets a recommender consults.
#[derive(Debug, Clone, Default)]
pub struct Catalogs {
    pub identifiers: BTreeMap<CatalogKind, IdentifierCatalog>,
    pub formulas: FormulaCatalog,
}

impl Catalogs {
    pub fn add_identifier_catalog(&mut self, catalog: IdentifierCatalog) {
        self.identifiers.insert(catalog.kind(), catalog);
    }
}

fn ranked(source: Source, items: impl IntoIterator<Item = (String, Option<Qid>, f64)>, cutoff: usize) -> Vec<RecommendationCandidate> {
    items
        .into_iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, (name, qid, score))| RecommendationCandidate {
            name,
            qid,
            source,
            rank: i as u32 + 1,
            score,
        })
        .collect()
}

/// `1 - levenshtein / max(len)` over characters; two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

fn by_score_then_qid(
    a: &(String, Option<Qid>, f64),
    b: &(String, Option<Qid>, f64),
) -> Ordering {
    b.2.total_cmp(&a.2)
        .then_with(|| cmp_optional(a.1.as_ref(), b.1.as_ref()))
        .then_with(|| a.0.cmp(&b.0))
}

/// Catalog formulae whose canonical form is within `threshold` of the query.
pub fn fuzzy_match(raw_latex: &str, catalog: &FormulaCatalog, threshold: f64, cutoff: usize) -> Vec<RecommendationCandidate> {
    let query = canonicalize_latex(raw_latex);
    let mut hits: Vec<(String, Option<Qid>, f64)> = catalog
        .items()
        .iter()
        .filter_map(|item| {
            let formula = item.defining_formula.as_deref()?;
            let score = similarity(&query, &canonicalize_latex(formula));
            (score >= threshold).then(|| (item.name.clone(), Some(item.qid.clone()), score))
        })
        .collect();
    hits.sort_by(by_score_then_qid);
    ranked(Source::WikidataFuzzy, hits, cutoff.min(CUTOFF))
}

/// Items whose `has part` set overlaps the QIDs already annotated on a
/// formula's identifiers, scored by the covered fraction of their parts.
pub fn parts_overlap(annotated: &BTreeSet<Qid>, catalog: &FormulaCatalog, cutoff: usize) -> Vec<RecommendationCandidate> {
    let mut hits: Vec<(usize, &Qid, &str, f64)> = catalog
        .items()
        .iter()
        .filter_map(|item| {
            let shared = item.has_part.intersection(annotated).count();
            (shared > 0).then(|| (shared, &item.qid, item.name.as_str(), shared as f64 / item.has_part.len() as f64))
        })
        .collect();
    hits.sort_by(|a, b| {
        b.3.total_cmp(&a.3)
            .then_with(|| b.0.cmp(&a.0))
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(b.2))
    });
    ranked(
        Source::WikidataParts,
        hits.into_iter().map(|(_, q, n, s)| (n.to_string(), Some(q.clone()), s)),
        cutoff.min(CUTOFF),
    )
}

/// Concepts from past annotations with a variant close to the query.
pub fn fc_memory_lookup(raw_latex: &str, memory: &FcMemory, threshold: f64, cutoff: usize) -> Vec<RecommendationCandidate> {
    let query = canonicalize_latex(raw_latex);
    let mut hits: Vec<(String, Option<Qid>, f64)> = memory
        .concepts()
        .filter_map(|(key, variants)| {
            let best = variants
                .iter()
                .map(|v| similarity(&query, &canonicalize_latex(v)))
                .fold(f64::NEG_INFINITY, f64::max);
            (best >= threshold).then(|| (key.name.clone(), key.qid.clone(), best))
        })
        .collect();
    hits.sort_by(by_score_then_qid);
    ranked(Source::FcMemory, hits, cutoff.min(CUTOFF))
}

/// Up to `k` words on each side of `segment`, nearest first, the preceding
/// word winning ties. Markup and other math are skipped.
pub fn word_window(doc: &RawDocument, segments: &[MathSegment], segment: &MathSegment, k: usize, cutoff: usize) -> Vec<RecommendationCandidate> {
    // prose gaps between math segments, split at the target
    let mut before_text = String::new();
    let mut after_text = String::new();
    let mut cursor = 0;
    for seg in segments.iter().map(|s| s.span).chain([(doc.body.len(), doc.body.len())]) {
        if seg.0 > cursor {
            let gap = &doc.body[cursor..seg.0];
            if seg.0 <= segment.span.0 {
                before_text.push_str(gap);
                before_text.push(' ');
            } else if cursor >= segment.span.1 {
                after_text.push_str(gap);
                after_text.push(' ');
            }
        }
        cursor = cursor.max(seg.1);
    }

    let before = prose_words(&before_text, doc.format);
    let after = prose_words(&after_text, doc.format);
    let near_before = before.iter().rev().take(k);
    let near_after = after.iter().take(k);

    let mut interleaved = Vec::new();
    let mut b = near_before.peekable();
    let mut a = near_after.peekable();
    while b.peek().is_some() || a.peek().is_some() {
        if let Some(w) = b.next() {
            interleaved.push(w.clone());
        }
        if let Some(w) = a.next() {
            interleaved.push(w.clone());
        }
    }
    let mut seen = BTreeSet::new();
    let unique = interleaved.into_iter().filter(|w| seen.insert(w.clone()));
    ranked(Source::WordWindow, unique.map(|w| (w, None, 1.0)), cutoff.min(CUTOFF))
}

/// Plain words of a text fragment with markup removed.
pub fn prose_words(text: &str, format: DocFormat) -> Vec<String> {
    let plain = match format {
        DocFormat::Wikitext => strip_wikitext(text),
        DocFormat::Latex => strip_latex(text),
    };
    plain
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn skip_past(text: &str, from: usize, pat: &str) -> usize {
    text[from..].find(pat).map(|i| from + i + pat.len()).unwrap_or(text.len())
}

fn strip_wikitext(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with("<!--") {
            i = skip_past(text, i, "-->");
        } else if rest.as_bytes().get(..4).is_some_and(|b| b.eq_ignore_ascii_case(b"<ref")) {
            let tag_end = skip_past(text, i, ">");
            i = if text[..tag_end].ends_with("/>") {
                tag_end
            } else {
                skip_past(text, tag_end, "</ref>")
            };
            out.push(' ');
        } else if rest.starts_with('<') && rest[1..].starts_with(|c: char| c.is_ascii_alphabetic() || c == '/') {
            i = skip_past(text, i, ">");
            out.push(' ');
        } else if rest.starts_with("{{") {
            let mut depth = 0usize;
            let mut j = i;
            while j < text.len() {
                if text[j..].starts_with("{{") {
                    depth += 1;
                    j += 2;
                } else if text[j..].starts_with("}}") {
                    depth -= 1;
                    j += 2;
                    if depth == 0 {
                        break;
                    }
                } else {
                    j += text[j..].chars().next().map(char::len_utf8).unwrap_or(1);
                }
            }
            i = j;
            out.push(' ');
        } else if rest.starts_with("[[") {
            let end = rest.find("]]").map(|e| i + e).unwrap_or(text.len());
            let inner = &text[i + 2..end];
            let is_media = ["File:", "Image:", "Category:"].iter().any(|p| inner.starts_with(p));
            if !is_media {
                out.push_str(inner.rsplit('|').next().unwrap_or(inner));
            }
            i = (end + 2).min(text.len());
        } else if rest.starts_with("[http") || rest.starts_with("[//") {
            let end = rest.find(']').map(|e| i + e).unwrap_or(text.len());
            if let Some((_, label)) = text[i + 1..end].split_once(' ') {
                out.push_str(label);
            }
            i = (end + 1).min(text.len());
        } else if rest.starts_with("''") {
            i += rest.len() - rest.trim_start_matches('\'').len();
        } else {
            let c = rest.chars().next().expect("non-empty");
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

fn strip_latex(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '%' => {
                for n in chars.by_ref() {
                    if n == '\n' {
                        break;
                    }
                }
                out.push(' ');
            }
            '\\' => {
                while chars.peek().is_some_and(|n| n.is_ascii_alphabetic()) {
                    chars.next();
                }
                out.push(' ');
            }
            '{' | '}' | '~' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}

/// Identifier recommendations from the frequency lists, word window and user input.
pub fn recommend_identifier(
    symbol: &str,
    doc: &RawDocument,
    segments: &[MathSegment],
    segment: &MathSegment,
    catalogs: &Catalogs,
    stores: &KnowledgeStores,
    config: &RecommenderConfig,
) -> RecommendationSet {
    let cutoff = config.cutoff();
    let mut lists = Vec::new();
    for kind in [CatalogKind::Arxiv, CatalogKind::Wikipedia, CatalogKind::Wikidata] {
        if let Some(cat) = catalogs.identifiers.get(&kind) {
            let items = cat.candidates(symbol).iter().map(|c| (c.name.clone(), c.qid.clone(), 1.0));
            lists.push((kind.source(), ranked(kind.source(), items, cutoff)));
        }
    }
    lists.push((Source::WordWindow, word_window(doc, segments, segment, config.window, cutoff)));

    let mut typed: Vec<(String, Option<Qid>, f64)> = stores
        .user_inputs
        .lookup(TargetKind::Identifier, symbol)
        .into_iter()
        .map(|(k, _)| (k.name.clone(), k.qid.clone(), 1.0))
        .collect();
    if let Some(cat) = catalogs.identifiers.get(&CatalogKind::UserInput) {
        for c in cat.candidates(symbol) {
            if !typed.iter().any(|t| t.0 == c.name && t.1 == c.qid) {
                typed.push((c.name.clone(), c.qid.clone(), 1.0));
            }
        }
    }
    lists.push((Source::UserInput, ranked(Source::UserInput, typed, cutoff)));
    RecommendationSet::new(Target::identifier(symbol), lists)
}

/// Formula recommendations. The parts source appears only once at least
/// one identifier of the formula carries an annotated QID.
pub fn recommend_formula(
    segment_id: usize,
    session: &SessionState,
    catalogs: &Catalogs,
    stores: &KnowledgeStores,
    config: &RecommenderConfig,
) -> Option<RecommendationSet> {
    let segment = session.segment(segment_id)?;
    let cutoff = config.cutoff();
    let raw = &segment.raw_latex;
    let mut lists = vec![(
        Source::WikidataFuzzy,
        fuzzy_match(raw, &catalogs.formulas, config.fuzzy_threshold, cutoff),
    )];
    let annotated = session.identifier_qids_in_segment(segment_id);
    if !annotated.is_empty() {
        lists.push((Source::WikidataParts, parts_overlap(&annotated, &catalogs.formulas, cutoff)));
    }
    lists.push((
        Source::FcMemory,
        fc_memory_lookup(raw, &stores.fc_memory, config.fuzzy_threshold, cutoff),
    ));
    lists.push((
        Source::WordWindow,
        word_window(session.doc(), session.segments(), segment, config.window, cutoff),
    ));
    let typed = stores
        .user_inputs
        .lookup(TargetKind::Formula, raw)
        .into_iter()
        .map(|(k, _)| (k.name.clone(), k.qid.clone(), 1.0));
    lists.push((Source::UserInput, ranked(Source::UserInput, typed, cutoff)));
    Some(RecommendationSet::new(Target::Formula { segment_id }, lists))
}

/// Recommendations for any session target; identifiers use the first
/// formula the symbol occurs in as word-window context.
pub fn recommend_for_target(
    target: &Target,
    session: &SessionState,
    catalogs: &Catalogs,
    stores: &KnowledgeStores,
    config: &RecommenderConfig,
) -> Option<RecommendationSet> {
    let (symbol, segment_id) = match target {
        Target::Formula { segment_id } => return recommend_formula(*segment_id, session, catalogs, stores, config),
        Target::Identifier { symbol } => (symbol.clone(), session.occurrences(symbol).first()?.0),
        Target::Occurrence {
            segment_id,
            token_index,
        } => {
            let tok = session.formula(*segment_id)?.tokens.get(*token_index)?;
            (tok.symbol.clone()?, *segment_id)
        }
    };
    let segment = session.segment(segment_id)?;
    Some(recommend_identifier(
        &symbol,
        session.doc(),
        session.segments(),
        segment,
        catalogs,
        stores,
        config,
    ))
}

/// Orders the sources of a set for display. In evaluation mode the order
/// is a seeded shuffle and the labels are `Source A`, `Source B`, ….
pub fn presentation_order(mut set: RecommendationSet, rng_seed: u64, eval_mode: bool) -> RecommendationSet {
    if !eval_mode {
        set.presentation = canonical_presentation(&set.per_source);
        return set;
    }
    let mut sources: Vec<Source> = set.per_source.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sources.shuffle(&mut rng);
    set.presentation = sources
        .into_iter()
        .enumerate()
        .map(|(i, source)| PresentedSource {
            label: anonymous_label(i),
            source,
        })
        .collect();
    set
}

fn anonymous_label(i: usize) -> String {
    format!("Source {}", (b'A' + (i % 26) as u8) as char)
}
