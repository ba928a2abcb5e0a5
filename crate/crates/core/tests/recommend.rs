mod common;

use std::collections::BTreeSet;

use common::{oracle_similarity, qid_num};
use mathlink_core::corpus::{FormulaCatalog, FormulaItem};
use mathlink_core::math::canonicalize_latex;
use mathlink_core::recommend::*;
use mathlink_core::session::{wikitext_document, AnnotateRequest, KnowledgeStores, Mode, Provenance, SessionState, Target};
use mathlink_core::Qid;

fn stores() -> KnowledgeStores {
    KnowledgeStores {
        fc_memory: common::memory(),
        ..Default::default()
    }
}

fn assert_well_formed(set: &RecommendationSet) {
    for (source, list) in &set.per_source {
        assert!(!list.is_empty() && list.len() <= CUTOFF);
        for (i, c) in list.iter().enumerate() {
            assert_eq!(c.rank as usize, i + 1);
            assert_eq!(c.source, *source);
            assert!((0.0..=1.0).contains(&c.score));
        }
    }
}

#[test]
fn popup_for_m_on_article() {
    let session = SessionState::new(common::article("Mass–energy equivalence"));
    let set = recommend_for_target(
        &Target::identifier("m"),
        &session,
        &common::catalogs(),
        &stores(),
        &RecommenderConfig::default(),
    )
    .unwrap();
    assert_well_formed(&set);
    assert_eq!(set.per_source[&Source::Arxiv][0].name, "mass");
    assert!(set.per_source.len() >= 4, "{:?}", set.per_source.keys());
    assert!(set.per_source.contains_key(&Source::WordWindow));
}

#[test]
fn fourteen_candidates_cut_to_ten() {
    let session = SessionState::new(common::article("Mass–energy equivalence"));
    let set = recommend_for_target(&Target::identifier("E"), &session, &common::catalogs(), &stores(), &RecommenderConfig::default())
        .unwrap();
    let arxiv = &set.per_source[&Source::Arxiv];
    assert_eq!(arxiv.len(), 10);
    assert_eq!(arxiv.last().unwrap().name, "elastic modulus");
}

#[test]
fn unknown_symbol_with_no_context() {
    let session = SessionState::new(wikitext_document("t", "<math>\\zeta</math>"));
    let set = recommend_for_target(&Target::identifier("\\zeta"), &session, &common::catalogs(), &stores(), &RecommenderConfig::default())
        .unwrap();
    assert!(set.per_source.keys().all(|s| *s == Source::WordWindow));
}

#[test]
fn thin_space_variant_matches_exactly() {
    let hits = fuzzy_match(r"E=m\,c^2", &common::catalogs().formulas, 0.7, CUTOFF);
    assert_eq!(hits[0].qid.as_ref().unwrap().as_str(), "Q35875");
    assert_eq!(hits[0].score, 1.0);
}

#[test]
fn bold_and_arrow_vectors_match_each_other() {
    let hits = fuzzy_match(r"\mathbf{F} = m\mathbf{a}", &common::catalogs().formulas, 0.7, CUTOFF);
    let top: Vec<_> = hits.iter().take(2).map(|h| (h.qid.as_ref().unwrap().as_str(), h.score)).collect();
    // both items canonicalize to the same string; the lower QID wins the tie
    assert_eq!(top, [("Q11402", 1.0), ("Q2397319", 1.0)]);
}

fn brute_force(query: &str, items: &[FormulaItem], threshold: f64) -> Vec<(String, f64)> {
    let q = canonicalize_latex(query);
    let mut all: Vec<(u64, String, String, f64)> = items
        .iter()
        .map(|it| {
            let s = oracle_similarity(&q, &canonicalize_latex(it.defining_formula.as_ref().unwrap()));
            (qid_num(it.qid.as_str()), it.qid.to_string(), it.name.clone(), s)
        })
        .filter(|x| x.3 >= threshold)
        .collect();
    all.sort_by(|a, b| b.3.partial_cmp(&a.3).unwrap().then(a.0.cmp(&b.0)).then(a.2.cmp(&b.2)));
    all.into_iter().take(10).map(|x| (x.1, x.3)).collect()
}

#[test]
fn twenty_item_catalog_matches_oracle() {
    let formulas = [
        "E=mc^2", "E=mc^3", "F=ma", "F=mv", "p=mv", "E=m c^2", "e=mc^2", "E=\\gamma mc^2", "m=E/c^2", "E^2=p^2c^2+m^2c^4",
        "K=\\frac{1}{2}mv^2", "U=mgh", "W=Fd", "P=W/t", "v=d/t", "a=v/t", "E=hf", "E=h\\nu", "F=qE", "E=mc",
    ];
    let items: Vec<FormulaItem> = formulas
        .iter()
        .enumerate()
        .map(|(i, f)| FormulaItem {
            qid: format!("Q{}", 1000 - i * 7).parse().unwrap(),
            name: format!("item {i}"),
            defining_formula: Some(f.to_string()),
            has_part: BTreeSet::new(),
            calculated_from: BTreeSet::new(),
        })
        .collect();
    let cat = FormulaCatalog::new(items.clone()).unwrap();
    for query in ["E=mc^2", "F=ma", "E = m\\,c^2", "p=m\\,v", "x"] {
        let got: Vec<_> = fuzzy_match(query, &cat, 0.7, CUTOFF)
            .into_iter()
            .map(|c| (c.qid.unwrap().to_string(), c.score))
            .collect();
        assert_eq!(got, brute_force(query, &items, 0.7), "{query}");
    }
}

#[test]
fn parts_recommendation_after_identifiers() {
    let mut session = SessionState::new(wikitext_document("t", "<math display=\"block\">E=m\\,c^2</math>"));
    let catalogs = common::catalogs();
    let cfg = RecommenderConfig::default();
    let before = recommend_formula(0, &session, &catalogs, &stores(), &cfg).unwrap();
    assert!(!before.per_source.contains_key(&Source::WikidataParts));
    assert_eq!(before.per_source[&Source::WikidataFuzzy][0].qid.as_ref().unwrap().as_str(), "Q35875");
    assert_eq!(before.per_source[&Source::FcMemory][0].qid.as_ref().unwrap().as_str(), "Q35875");

    for (sym, qid) in [("E", "Q11379"), ("m", "Q11423"), ("c", "Q2111")] {
        session
            .annotate(AnnotateRequest {
                target: Target::identifier(sym),
                name: sym.into(),
                qid: Some(qid.parse().unwrap()),
                mode: Mode::Global,
                provenance: Provenance::Manual,
                elapsed_ms: 1,
            })
            .unwrap();
    }
    let after = recommend_formula(0, &session, &catalogs, &stores(), &cfg).unwrap();
    assert_well_formed(&after);
    let parts = &after.per_source[&Source::WikidataParts];
    assert_eq!(parts[0].qid.as_ref().unwrap().as_str(), "Q35875");
    assert_eq!(parts[0].score, 1.0);
}

#[test]
fn memory_variant_lookup_from_fixture() {
    let hits = fc_memory_lookup("m=E/c^2", &common::memory(), 0.7, CUTOFF);
    assert_eq!(hits[0].qid.as_ref().map(Qid::as_str), Some("Q35875"));
    assert_eq!((hits[0].rank, hits[0].score), (1, 1.0));
}

#[test]
fn window_default_is_five_each_side() {
    let doc = wikitext_document("t", "one two three four five six seven <math>x</math> a b c d e f g");
    let segs = mathlink_core::math::extract_math_segments(&doc).segments;
    let words: Vec<_> = word_window(&doc, &segs, &segs[0], RecommenderConfig::default().window, CUTOFF)
        .into_iter()
        .map(|c| c.name)
        .collect();
    assert_eq!(words, ["seven", "a", "six", "b", "five", "c", "four", "d", "three", "e"]);
}

#[test]
fn eval_presentation_is_a_bijection() {
    let session = SessionState::new(common::article("Mass–energy equivalence"));
    let set = recommend_for_target(&Target::identifier("m"), &session, &common::catalogs(), &stores(), &RecommenderConfig::default())
        .unwrap();
    let shuffled = presentation_order(set.clone(), 99, true);
    assert_eq!(shuffled.per_source, set.per_source);
    let a: BTreeSet<_> = shuffled.presentation.iter().map(|p| p.source).collect();
    let b: BTreeSet<_> = set.per_source.keys().copied().collect();
    assert_eq!(a, b);
    assert!(shuffled.presentation.iter().all(|p| p.label.starts_with("Source ")));
}
