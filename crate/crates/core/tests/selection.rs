use std::collections::BTreeMap;

use common::{cluster_config, cluster_corpus, exhaustive_scores, fast_config, label, pool_kb};
use kgdial::corpus::{Dialog, EntityKey, KnowledgeBase, SnippetRef, Split, Turn};
use kgdial::entity_filter::{build_filter, match_entities, DfCeiling, FilterConfig};
use kgdial::metrics::recall_at_k;
use kgdial::neural::{init_rng, triplet_cosine_loss, EncoderWeights, FocalConfig, TripletConfig};
use kgdial::selector::{
    build_embedding_index, rank_all_snippets, rank_by_embedding, train_embedding_encoder, train_ranker,
    two_stage_select, Aggregation, Candidates, NegativePools, RankerEnsemble, Stage, NEGATIVE_POOL,
};
use proptest::prelude::*;
use rand::Rng;

mod common;

fn random_kb() -> impl Strategy<Value = Vec<(Vec<usize>, Vec<usize>)>> {
    let words = || proptest::collection::vec(0usize..12, 1..6);
    proptest::collection::vec((words(), words()), 2..25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn negative_pools_equal_exhaustive_ranking(docs in random_kb()) {
        let kb = pool_kb(&docs);
        let refs: Vec<SnippetRef> = kb.snippets().map(|s| s.reference.clone()).collect();
        let pools = NegativePools::build(&kb, &refs).unwrap();
        for gold in &refs {
            let pool = pools.pool(gold).unwrap();
            let oracle = exhaustive_scores(&kb, gold);
            prop_assert_eq!(pool.len(), oracle.len().min(NEGATIVE_POOL));
            prop_assert!(!pool.contains(gold));
            let by_ref: BTreeMap<&SnippetRef, f64> = oracle.iter().map(|(r, s)| (r, *s)).collect();
            for (i, r) in pool.iter().enumerate() {
                // Equal up to the order of exact ties.
                prop_assert!((by_ref[r] - oracle[i].1).abs() < 1e-12);
            }
            let distinct_gap = oracle.len() <= NEGATIVE_POOL
                || (oracle[NEGATIVE_POOL - 1].1 - oracle[NEGATIVE_POOL].1).abs() > 1e-9;
            if distinct_gap {
                let mut a: Vec<&SnippetRef> = pool.iter().collect();
                let mut b: Vec<&SnippetRef> = oracle.iter().take(NEGATIVE_POOL).map(|(r, _)| r).collect();
                a.sort();
                b.sort();
                prop_assert_eq!(a, b);
            }
        }
    }
}

const HOTELS: &[&str] = &["alder", "birch", "cedar", "damson", "elm", "fig"];
const TOPICS: &[(&str, &str, &str)] = &[
    (
        "do they have free parking",
        "is there free parking",
        "yes parking is free",
    ),
    (
        "is there wifi in the rooms",
        "is there wifi",
        "wifi is available in every room",
    ),
    (
        "do they serve breakfast",
        "is breakfast served",
        "breakfast is served from 7",
    ),
];

/// Every hotel has the same three snippets; only the dialog history names the hotel.
fn distractor_corpus(hotels: &[&str]) -> (Split, KnowledgeBase) {
    let mut kb = KnowledgeBase::default();
    let mut dialogs = Vec::new();
    let mut labels = Vec::new();
    for (h, name) in hotels.iter().enumerate() {
        let id = (h + 1).to_string();
        kb.add_entity(EntityKey::new("hotel", &id), Some(format!("{name} lodge")))
            .unwrap();
        for (t, (utt, q, a)) in TOPICS.iter().enumerate() {
            let r = SnippetRef::new("hotel", &id, t.to_string());
            kb.add_snippet(r.clone(), *q, *a).unwrap();
            let turns = vec![
                Turn::user(format!("i want a room at the {name} lodge")),
                Turn::system(format!("the {name} lodge has rooms available")),
                Turn::user(*utt),
            ];
            dialogs.push(Dialog::new(format!("{h}-{t}"), turns).unwrap());
            labels.push(label(&r));
        }
    }
    (Split::new(dialogs, labels).unwrap(), kb)
}

#[test]
fn two_stage_beats_all_candidates_on_distractors() {
    let (split, kb) = distractor_corpus(HOTELS);
    // Identical texts across hotels would be contradictory negatives, so the
    // text-only knowledge ranker learns from a single hotel.
    let (single, single_kb) = distractor_corpus(&HOTELS[..1]);
    let fc = FilterConfig {
        t1: DfCeiling::Absolute(10),
        t3: DfCeiling::Absolute(8),
        ..FilterConfig::default()
    };
    let filter = build_filter(&kb, &split.dialogs, &fc).unwrap();
    let cfg = fast_config(3);
    let focal = FocalConfig::default();
    let (entity, _) = train_ranker::<f64>(
        &split,
        &split,
        &kb,
        Stage::Entity,
        Candidates::Filtered(&filter),
        &cfg,
        &focal,
    )
    .unwrap();
    let (knowledge, _) = train_ranker::<f64>(
        &single,
        &single,
        &single_kb,
        Stage::Knowledge,
        Candidates::All,
        &cfg,
        &focal,
    )
    .unwrap();

    let flat: f64 = split
        .knowledge_turns()
        .map(|(d, _, gold)| recall_at_k(&rank_all_snippets(&knowledge, d, &kb, 5).unwrap().keys(), gold, 1))
        .sum::<f64>()
        / split.len() as f64;
    // Identical snippet texts tie across hotels, so only the first hotel's turns can be right.
    assert!(flat <= 1.0 / HOTELS.len() as f64 + 1e-12, "all-candidates R@1 {flat}");

    let entity = RankerEnsemble::new(vec![entity], Aggregation::MeanScore).unwrap();
    let knowledge = RankerEnsemble::new(vec![knowledge], Aggregation::MeanScore).unwrap();
    let mut hits = 0.0;
    for (d, _, gold) in split.knowledge_turns() {
        let cands = match_entities(d, &filter);
        assert!(cands.contains(&gold.entity()));
        let sel = two_stage_select(&entity, &knowledge, d, &cands, &kb, 5).unwrap();
        let top = sel.entities.first().unwrap();
        assert!(sel.snippets.keys().iter().all(|s| &s.entity() == top));
        hits += recall_at_k(&sel.snippets.keys(), gold, 1);
    }
    let two_stage = hits / split.len() as f64;
    assert!(two_stage >= 0.9, "two-stage R@1 {two_stage}");
    assert!(two_stage > flat);
}

#[test]
fn triplet_training_separates_clusters() {
    let (train, kb) = cluster_corpus(1, 12);
    let (valid, _) = cluster_corpus(2, 3);
    let cfg = cluster_config();
    let triplet = TripletConfig::default();
    let (enc, _, log) = train_embedding_encoder::<f64>(&train, &valid, &kb, &cfg, &triplet).unwrap();
    assert!(!log.gaps.is_empty());
    for &g in &log.gaps {
        assert!(g > triplet.beta && g < triplet.alpha, "mined gap {g}");
    }
    let index = build_embedding_index(&kb, &enc);
    let r1 = valid
        .knowledge_turns()
        .map(|(d, _, gold)| recall_at_k(&rank_by_embedding(&index, d).unwrap().keys(), gold, 1))
        .sum::<f64>()
        / valid.len() as f64;
    assert!(r1 >= 0.9, "embedding R@1 {r1}");
}

#[test]
fn initial_triplet_loss_is_near_the_margin() {
    let mut rng = init_rng(11);
    let enc = EncoderWeights::<f64>::init(200, 64, &mut init_rng(12)).unwrap();
    let alpha = TripletConfig::default().alpha;
    let mut total = 0.0;
    let n = 2000;
    for _ in 0..n {
        let mut seq = || -> Vec<usize> { (0..rng.gen_range(3..12)).map(|_| rng.gen_range(5..200)).collect() };
        let (a, p, q) = (enc.encode(&seq()), enc.encode(&seq()), enc.encode(&seq()));
        total += triplet_cosine_loss(&a, &p, &q, alpha).unwrap();
    }
    let mean = total / n as f64;
    assert!((mean - alpha).abs() < 0.05, "mean initial loss {mean}");
}
