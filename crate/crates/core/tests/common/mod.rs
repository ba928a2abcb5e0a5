#![allow(dead_code)]

pub mod props;

use std::path::PathBuf;

use mathlink_core::corpus::{
    load_fc_memory, load_formula_catalog, load_identifier_catalog, CatalogKind, FcMemory, RawDocument,
};
use mathlink_core::recommend::Catalogs;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn article(title: &str) -> RawDocument {
    RawDocument::from_file(&fixture(&format!("articles/{title}.wiki"))).unwrap()
}

pub fn catalogs() -> Catalogs {
    let mut c = Catalogs::default();
    for (file, kind) in [
        ("arxiv.tsv", CatalogKind::Arxiv),
        ("wikipedia.tsv", CatalogKind::Wikipedia),
        ("wikidata.tsv", CatalogKind::Wikidata),
    ] {
        c.add_identifier_catalog(load_identifier_catalog(&fixture(&format!("catalogs/{file}")), kind).unwrap());
    }
    c.formulas = load_formula_catalog(&fixture("catalogs/formulas.json")).unwrap();
    c
}

pub fn memory() -> FcMemory {
    load_fc_memory(&fixture("catalogs/fc_memory.json")).unwrap()
}

/// Textbook two-row Levenshtein over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn oracle_similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        1.0
    } else {
        1.0 - levenshtein(a, b) as f64 / n as f64
    }
}

/// Numeric QID value for tie-breaks.
pub fn qid_num(q: &str) -> u64 {
    q[1..].parse().unwrap()
}

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use mathlink_core::corpus::TargetKind;
use mathlink_core::evaluation::{PositionHistogram, ReferenceRow};
use mathlink_core::recommend::Source;
use mathlink_core::session::{
    wikitext_document, AnnotateRequest, AnnotationEvent, EventAction, Mode, Provenance, SessionState, Target,
};

pub type CountTable = BTreeMap<TargetKind, BTreeMap<Source, [u64; 10]>>;

pub fn position_counts() -> CountTable {
    serde_json::from_str(&std::fs::read_to_string(fixture("position_counts.json")).unwrap()).unwrap()
}

pub fn reference_rows() -> Vec<ReferenceRow> {
    serde_json::from_str(&std::fs::read_to_string(fixture("reference_table.json")).unwrap()).unwrap()
}

pub fn histogram(kind: TargetKind, source: Source) -> PositionHistogram {
    PositionHistogram::new(position_counts()[&kind][&source])
}

fn event(seq: u64, action: EventAction) -> AnnotationEvent {
    AnnotationEvent {
        seq,
        timestamp: Utc.timestamp_opt(1_600_000_000 + seq as i64, 0).unwrap(),
        action,
    }
}

pub fn accept_event(seq: u64, kind: TargetKind, source: Source, position: u32, elapsed_ms: u64) -> AnnotationEvent {
    let target = match kind {
        TargetKind::Identifier => Target::identifier("x"),
        TargetKind::Formula => Target::Formula { segment_id: 0 },
    };
    event(
        seq,
        EventAction::AcceptRecommendation {
            target,
            name: "n".into(),
            qid: None,
            mode: Mode::Global,
            source,
            position,
            elapsed_ms,
        },
    )
}

pub fn manual_event(seq: u64, kind: TargetKind, elapsed_ms: u64) -> AnnotationEvent {
    let target = match kind {
        TargetKind::Identifier => Target::identifier("x"),
        TargetKind::Formula => Target::Formula { segment_id: 0 },
    };
    event(
        seq,
        EventAction::ManualInsert {
            target,
            name: "n".into(),
            qid: None,
            mode: Mode::Global,
            elapsed_ms,
        },
    )
}

/// One accept event per counted acceptance, in table order.
pub fn events_from_counts(table: &CountTable) -> Vec<AnnotationEvent> {
    let mut out = Vec::new();
    for (kind, rows) in table {
        for (source, counts) in rows {
            for (i, &n) in counts.iter().enumerate() {
                for _ in 0..n {
                    out.push(accept_event(out.len() as u64, *kind, *source, i as u32 + 1, 1000));
                }
            }
        }
    }
    out
}

/// Identifier means 2.6 s / 6.3 s and formula means 2.8 s / 4.0 s
/// (recommendation / manual), plus one idle outlier.
pub fn timing_events() -> Vec<AnnotationEvent> {
    let mut out = Vec::new();
    let id = TargetKind::Identifier;
    let f = TargetKind::Formula;
    for ms in [2000, 3200, 2600, 2400, 2800] {
        out.push(accept_event(out.len() as u64, id, Source::Wikipedia, 1, ms));
    }
    for ms in [6000, 6600, 5900, 6700] {
        out.push(manual_event(out.len() as u64, id, ms));
    }
    out.push(manual_event(out.len() as u64, id, 11 * 60 * 1000));
    for ms in [2500, 3100] {
        out.push(accept_event(out.len() as u64, f, Source::WordWindow, 2, ms));
    }
    for ms in [3500, 4500, 4000] {
        out.push(manual_event(out.len() as u64, f, ms));
    }
    out
}

pub const SEEDING_DOC: &str = "Centre <math display=\"block\">\\vec R = \\frac{1}{M}\\sum_i m_i \\vec r_i</math>\n\
Coulomb <math display=\"block\">F = k_e \\frac{q_1 q_2}{r^2}</math>\n\
Lorentz <math display=\"block\">\\gamma = \\frac{1}{\\sqrt{1-v^2/c^2}}</math>\n\
Einstein <math display=\"block\">E = m c^2</math>\n";

fn req(target: Target, name: &str, qid: &str) -> AnnotateRequest {
    AnnotateRequest {
        target,
        name: name.into(),
        qid: Some(qid.parse().unwrap()),
        mode: Mode::Global,
        provenance: Provenance::Manual,
        elapsed_ms: 1000,
    }
}

/// A session whose formula annotations reproduce three seeding-list rows
/// plus one concept that needs nothing.
pub fn seeding_session() -> SessionState {
    let mut s = SessionState::new(wikitext_document("Seeding", SEEDING_DOC));
    for (sym, name, qid) in [
        ("R", "position of the center of mass", "Q2945123"),
        ("M", "total mass", "Q11423"),
        ("F", "force", "Q11402"),
        ("q", "electric charge", "Q1111"),
        ("\\gamma", "Lorentz factor", "Q599404"),
        ("v", "velocity", "Q11465"),
        ("c", "speed of light", "Q2111"),
        ("E", "energy", "Q11379"),
        ("m", "mass", "Q11423"),
    ] {
        s.annotate(req(Target::identifier(sym), name, qid)).unwrap();
    }
    for (seg, name, qid) in [
        (0, "center of mass", "Q2945123"),
        (1, "electrostatic force", "Q103438301"),
        (2, "Lorentz factor", "Q599404"),
        (3, "mass–energy equivalence", "Q35875"),
    ] {
        s.annotate(req(Target::Formula { segment_id: seg }, name, qid)).unwrap();
    }
    s
}
