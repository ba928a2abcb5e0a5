//! Generators and property checks shared by the property suite and the
//! acceptance harness.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use regex::Regex;

use mathlink_core::corpus::{FormulaCatalog, FormulaItem};
use mathlink_core::linker::{insert_qid_links, LinkOptions};
use mathlink_core::math::canonicalize_latex;
use mathlink_core::recommend::{fuzzy_match, Source, CUTOFF};
use mathlink_core::session::{
    wikitext_document, AnnotateRequest, Mode, Provenance, SessionError, SessionState, Target,
};
use mathlink_core::Qid;

use super::{oracle_similarity, qid_num};

pub fn latex_fragment() -> impl Strategy<Value = String> {
    let atoms = prop::sample::select(vec![
        "a", "b", "E", "m", "c", "x", "=", "+", "-", "^", "_", "2", "{", "}", "\\,", r"\;", "\\!", " ", "\\vec", "\\mathbf",
        "\\alpha", "{x}", "{2}", "\\frac", "(", ")", "/", "\\ ", "v", "\\sin", "\\cdot",
    ]);
    prop::collection::vec(atoms, 0..24).prop_map(|v| v.concat())
}

// ---- fuzzy matching ----

pub fn catalog_and_query() -> impl Strategy<Value = (Vec<(u32, String)>, String)> {
    let formula = prop::collection::vec(prop::sample::select(vec!["E", "m", "c", "=", "^2", "\\,", "a", "F", " "]), 1..8)
        .prop_map(|v| v.concat())
        .prop_filter("non-blank", |s| !s.trim().is_empty());
    (
        prop::collection::btree_map(1u32..5000, formula.clone(), 0..200).prop_map(|m| m.into_iter().collect()),
        formula,
    )
}

pub fn check_fuzzy_oracle(items: &[(u32, String)], query: &str) -> Result<(), TestCaseError> {
    let catalog = FormulaCatalog::new(
        items
            .iter()
            .map(|(q, f)| FormulaItem {
                qid: format!("Q{q}").parse().unwrap(),
                name: format!("n{q}"),
                defining_formula: Some(f.clone()),
                has_part: BTreeSet::new(),
                calculated_from: BTreeSet::new(),
            })
            .collect(),
    )
    .unwrap();
    let cq = canonicalize_latex(query);
    let mut expected: Vec<(u32, f64)> = items
        .iter()
        .map(|(q, f)| (*q, oracle_similarity(&cq, &canonicalize_latex(f))))
        .filter(|(_, s)| *s >= 0.7)
        .collect();
    expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    expected.truncate(CUTOFF);
    let got: Vec<(u32, f64)> = fuzzy_match(query, &catalog, 0.7, CUTOFF)
        .into_iter()
        .map(|c| (qid_num(c.qid.unwrap().as_str()) as u32, c.score))
        .collect();
    prop_assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        prop_assert_eq!(g.0, e.0);
        prop_assert!((g.1 - e.1).abs() < 1e-12);
    }
    Ok(())
}

// ---- sessions ----

#[derive(Debug, Clone)]
pub enum Op {
    Annotate { pick: usize, kind: u8, local: bool, name: u8, qid: Option<u8>, position: Option<u32>, elapsed: u32 },
    Unannotate { pick: usize, kind: u8 },
    Reject { pick: usize, kind: u8 },
}

pub fn session_body() -> impl Strategy<Value = String> {
    let formula = prop::collection::vec(prop::sample::select(vec!["a", "b", "E", "m", "c", "=", "+", "^2", "_i", "2"]), 1..6)
        .prop_map(|v| v.concat());
    prop::collection::vec(formula, 1..12).prop_map(|fs| {
        fs.iter()
            .enumerate()
            .map(|(i, f)| format!("w{i} <math>{f}</math> "))
            .collect::<String>()
    })
}

pub fn ops(max: usize) -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        5 => (any::<usize>(), 0u8..3, any::<bool>(), 0u8..4, prop::option::of(0u8..6), prop::option::of(0u32..12), 0u32..20_000)
            .prop_map(|(pick, kind, local, name, qid, position, elapsed)| Op::Annotate { pick, kind, local, name, qid, position, elapsed }),
        2 => (any::<usize>(), 0u8..3).prop_map(|(pick, kind)| Op::Unannotate { pick, kind }),
        1 => (any::<usize>(), 0u8..3).prop_map(|(pick, kind)| Op::Reject { pick, kind }),
    ];
    prop::collection::vec(op, 0..max)
}

fn pick_target(s: &SessionState, pick: usize, kind: u8) -> Option<Target> {
    match kind {
        0 => {
            let syms: Vec<&str> = s.symbols().collect();
            (!syms.is_empty()).then(|| Target::identifier(syms[pick % syms.len()]))
        }
        1 => {
            let occ: Vec<(usize, usize)> = s.symbols().flat_map(|sym| s.occurrences(sym).to_vec()).collect();
            (!occ.is_empty()).then(|| {
                let (segment_id, token_index) = occ[pick % occ.len()];
                Target::Occurrence { segment_id, token_index }
            })
        }
        _ => (!s.segments().is_empty()).then(|| Target::Formula { segment_id: pick % s.segments().len() }),
    }
}

pub fn apply_op(s: &mut SessionState, op: &Op) -> Result<(), SessionError> {
    let (pick, kind) = match op {
        Op::Annotate { pick, kind, .. } | Op::Unannotate { pick, kind } | Op::Reject { pick, kind } => (*pick, *kind),
    };
    let Some(target) = pick_target(s, pick, kind) else { return Ok(()) };
    match op {
        Op::Annotate { local, name, qid, position, elapsed, .. } => {
            let provenance = match position {
                Some(p) => Provenance::Recommended { source: Source::ALL[*p as usize % Source::ALL.len()], position: *p },
                None => Provenance::Manual,
            };
            s.annotate(AnnotateRequest {
                target,
                name: ["mass", "energy", "speed", "time"][*name as usize].into(),
                qid: qid.map(|q| Qid::new(format!("Q{}", q + 1)).unwrap()),
                mode: if *local { Mode::Local } else { Mode::Global },
                provenance,
                elapsed_ms: *elapsed as u64,
            })
            .map(|_| ())
        }
        Op::Unannotate { .. } => s.unannotate(&target),
        Op::Reject { .. } => s.reject(&target),
    }
}

/// Global annotation covers every visible occurrence; otherwise each
/// occurrence shows at most its own local annotation.
pub fn check_occurrence_invariant(s: &SessionState) -> Result<(), TestCaseError> {
    for sym in s.symbols() {
        let occ = s.occurrences(sym);
        let visible: Vec<Target> = occ
            .iter()
            .map(|&(segment_id, token_index)| Target::Occurrence { segment_id, token_index })
            .filter(|t| !s.rejected().contains(t))
            .collect();
        let annotated = s.annotated_occurrences(sym);
        if s.annotation_for(&Target::identifier(sym)).is_some() {
            prop_assert_eq!(annotated, visible.len(), "global {}", sym);
        } else {
            let locals = visible
                .iter()
                .filter(|t| s.annotations().any(|a| &a.target == *t))
                .count();
            prop_assert_eq!(annotated, locals, "local {}", sym);
        }
        prop_assert!(annotated <= occ.len());
    }
    let p = s.progress();
    prop_assert!((0.0..=1.0).contains(&p.fraction));
    Ok(())
}

pub fn check_replay(body: &str, ops: &[Op]) -> Result<usize, TestCaseError> {
    let mut s = SessionState::new(wikitext_document("t", body));
    for op in ops {
        let before_events = s.events().len();
        let before = s.to_json();
        if apply_op(&mut s, op).is_err() {
            prop_assert_eq!(s.events().len(), before_events);
            prop_assert_eq!(s.to_json(), before);
        } else {
            prop_assert!(s.events().len() <= before_events + 1);
        }
        check_occurrence_invariant(&s)?;
    }
    let json = s.to_json();
    let loaded = SessionState::from_json(&json).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(loaded.to_json(), json.clone());
    let folded = SessionState::replay(s.doc().clone(), s.options().clone(), s.events().to_vec())
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(folded.to_json(), json);
    Ok(s.events().len())
}

// ---- linking ----

#[derive(Debug, Clone)]
pub struct LinkCase {
    pub body: String,
    pub annotations: BTreeMap<usize, Qid>,
}

pub fn link_case(max_segments: usize) -> impl Strategy<Value = LinkCase> {
    let latex = prop::sample::select(vec!["a=b", "E=mc^2", "x", "v^2", "e^{x=0}", "F = m a", "p=mv", "\\frac{1}{2}"]);
    let attrs = prop::sample::select(vec!["", " display=\"block\"", " display=block", " display=\"inline\""]);
    let prose = prop::sample::select(vec!["", " ", "text ", "\n", "== H ==\n", "<!-- c --> ", "[[link]] "]);
    let seg = (prose, attrs, latex, prop::option::weighted(0.7, 0u8..12), prop::bool::weighted(0.05));
    prop::collection::vec(seg, 0..max_segments).prop_map(|segs| {
        let mut body = String::new();
        let mut annotations = BTreeMap::new();
        let mut pre_existing = BTreeSet::new();
        for (i, (prose, attrs, latex, qid, existing)) in segs.into_iter().enumerate() {
            body.push_str(prose);
            if existing && pre_existing.insert(i % 40 + 100) {
                body.push_str(&format!("<math qid=Q{} {}>{latex}</math>", i % 40 + 100, attrs.trim()));
            } else {
                body.push_str(&format!("<math{attrs}>{latex}</math>"));
            }
            if let Some(q) = qid {
                annotations.insert(i, Qid::new(format!("Q{}", 100 + q as u32 * 3)).unwrap());
            }
        }
        body.push_str(" end");
        LinkCase { body, annotations }
    })
}

pub fn check_link_conservation(case: &LinkCase) -> Result<(), TestCaseError> {
    let s = SessionState::new(wikitext_document("t", &case.body));
    let ann: BTreeMap<usize, Qid> =
        case.annotations.iter().filter(|(k, _)| **k < s.segments().len()).map(|(k, v)| (*k, v.clone())).collect();
    let (out, stats) = insert_qid_links(s.doc(), s.segments(), s.formulas(), &ann, LinkOptions::default())
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(stats.linked + stats.skipped_duplicates, stats.candidates);

    let attr = Regex::new(r"qid=Q([0-9]+)").unwrap();
    let mut seen = BTreeSet::new();
    for m in attr.captures_iter(&out) {
        prop_assert!(seen.insert(m[1].to_string()), "QID Q{} emitted twice", &m[1]);
    }
    let inserted = Regex::new(r" qid=Q[0-9]+>").unwrap();
    prop_assert_eq!(inserted.find_iter(&out).count(), stats.linked);
    prop_assert_eq!(inserted.replace_all(&out, ">").into_owned(), case.body.clone());

    // only equations were touched
    let relinked = SessionState::new(wikitext_document("t", &out));
    for (seg, f) in relinked.segments().iter().zip(relinked.formulas()) {
        let was = &s.segments()[seg.segment_id];
        if seg.existing_qid.is_some() && was.existing_qid.is_none() {
            prop_assert!(f.is_equation);
        }
    }
    Ok(())
}
