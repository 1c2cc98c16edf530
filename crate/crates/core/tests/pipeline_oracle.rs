mod common;

use std::collections::BTreeMap;

use common::fixture;
use trollhunter_core::cooccur::{build_table, extract_pairs, top_k_terms, ContingencyTable};
use trollhunter_core::ingestion::{scan_store, Post};
use trollhunter_core::synth::{generate, ScenarioSpec};
use trollhunter_core::textpipe::{process_text, BaselineAnnotator, FilterConfig, PostTerms};

fn corpora() -> Vec<(String, Vec<Post>)> {
    let mixed = scan_store(fixture("corpora/debate_mixed.jsonl")).unwrap();
    let small =
        generate(&ScenarioSpec::load(fixture("scenarios/small_mixed.json")).unwrap()).unwrap();
    let mut trimmed = ScenarioSpec::load(fixture("scenarios/two_narrative.json")).unwrap();
    trimmed.post_count = 150;
    let two = generate(&trimmed).unwrap();
    vec![
        ("debate_mixed".into(), mixed),
        ("small_mixed".into(), small),
        ("two_narrative_150".into(), two),
    ]
}

fn terms_of(posts: &[Post]) -> Vec<(String, PostTerms)> {
    let tagger = BaselineAnnotator::bundled();
    let cfg = FilterConfig::default();
    posts
        .iter()
        .map(|p| (p.id.clone(), process_text(&p.text, &tagger, &cfg).unwrap()))
        .collect()
}

/// Document frequencies counted by scanning every post for every lemma.
fn brute_top(per_post: &[(String, PostTerms)], k: usize, verbs: bool) -> Vec<String> {
    let mut vocab: Vec<String> = per_post
        .iter()
        .flat_map(|(_, t)| {
            if verbs {
                t.verbs.iter()
            } else {
                t.nouns.iter()
            }
        })
        .cloned()
        .collect();
    vocab.sort();
    vocab.dedup();
    let mut df: Vec<(String, usize)> = vocab
        .into_iter()
        .map(|w| {
            let n = per_post
                .iter()
                .filter(|(_, t)| {
                    if verbs {
                        t.verbs.contains(&w)
                    } else {
                        t.nouns.contains(&w)
                    }
                })
                .count();
            (w, n)
        })
        .collect();
    // selection sort: highest count first, earliest word on ties
    let mut out = Vec::new();
    while out.len() < k && !df.is_empty() {
        let mut best = 0;
        for i in 1..df.len() {
            if df[i].1 > df[best].1 || (df[i].1 == df[best].1 && df[i].0 < df[best].0) {
                best = i;
            }
        }
        out.push(df.remove(best).0);
    }
    out
}

/// Nested-loop recount of the verb x noun table with zero margins dropped.
fn brute_table(
    per_post: &[(String, PostTerms)],
    verbs: &[String],
    nouns: &[String],
) -> ContingencyTable {
    let mut counts = BTreeMap::new();
    for v in verbs {
        for n in nouns {
            let mut c = 0u64;
            for (_, t) in per_post {
                if t.verbs.contains(v) && t.nouns.contains(n) {
                    c += 1;
                }
            }
            counts.insert((v.clone(), n.clone()), c);
        }
    }
    let rows: Vec<String> = verbs
        .iter()
        .filter(|v| nouns.iter().any(|n| counts[&((*v).clone(), n.clone())] > 0))
        .cloned()
        .collect();
    let cols: Vec<String> = nouns
        .iter()
        .filter(|n| verbs.iter().any(|v| counts[&(v.clone(), (*n).clone())] > 0))
        .cloned()
        .collect();
    let cells = rows
        .iter()
        .map(|v| {
            cols.iter()
                .map(|n| counts[&(v.clone(), n.clone())])
                .collect()
        })
        .collect();
    ContingencyTable::new(rows, cols, cells)
}

#[test]
fn build_table_matches_brute_force_recount() {
    for (name, posts) in corpora() {
        assert!(posts.len() <= 200, "{name} is too large for the oracle");
        let per_post = terms_of(&posts);
        let terms: Vec<PostTerms> = per_post.iter().map(|(_, t)| t.clone()).collect();
        let pairs: Vec<_> = per_post
            .iter()
            .flat_map(|(id, t)| extract_pairs(id, &t.nouns, &t.verbs))
            .collect();
        for k in [2, 5, 10] {
            let top = top_k_terms(&terms, k).unwrap();
            assert_eq!(
                top.verbs,
                brute_top(&per_post, k, true),
                "{name} k={k} verbs"
            );
            assert_eq!(
                top.nouns,
                brute_top(&per_post, k, false),
                "{name} k={k} nouns"
            );
            let (table, _) = build_table(&pairs, &top.verbs, &top.nouns).unwrap();
            assert_eq!(
                table,
                brute_table(&per_post, &top.verbs, &top.nouns),
                "{name} k={k}"
            );
        }
    }
}

#[test]
fn mixed_corpus_folds_inflections() {
    let per_post = terms_of(&scan_store(fixture("corpora/debate_mixed.jsonl")).unwrap());
    let verbs: Vec<&String> = per_post.iter().flat_map(|(_, t)| &t.verbs).collect();
    assert!(verbs.iter().any(|v| *v == "lie"));
    assert!(!verbs.iter().any(|v| *v == "lies" || *v == "lied"));
    let nouns: Vec<&String> = per_post.iter().flat_map(|(_, t)| &t.nouns).collect();
    assert!(nouns.iter().any(|n| *n == "cage"));
}
