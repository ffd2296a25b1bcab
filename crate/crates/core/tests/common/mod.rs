//! Corpora and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use kgdial::corpus::{Dialog, EntityKey, KnowledgeBase, SnippetRef, Split, Turn, TurnLabel};
use kgdial::entity_filter::{DfCeiling, EntityPatterns, FilterConfig};
use kgdial::features::snippet_text;
use kgdial::neural::{init_rng, TrainConfig};
use kgdial::textproc::tokenize;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn label(r: &SnippetRef) -> TurnLabel {
    TurnLabel {
        target: true,
        snippets: vec![r.clone()],
        response: Some("ok".into()),
    }
}

pub fn fast_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.05,
        warmup_steps: 10,
        batch_size: 4,
        epochs: 60,
        dim: 32,
        seed,
        ..TrainConfig::default()
    }
}

/// Levenshtein distance by the full Wagner-Fischer table.
pub fn edit_distance_oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in t[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[a.len()][b.len()]
}

/// Smallest grid threshold with the highest F1, by trying every grid point.
pub fn threshold_sweep_oracle(probs: &[f64], labels: &[bool]) -> f64 {
    let mut best = (0.01, -1.0);
    for i in 1..100 {
        let t = i as f64 / 100.0;
        let tp = probs.iter().zip(labels).filter(|(p, y)| **p >= t && **y).count();
        let fp = probs.iter().zip(labels).filter(|(p, y)| **p >= t && !**y).count();
        let fneg = probs.iter().zip(labels).filter(|(p, y)| **p < t && **y).count();
        let den = 2 * tp + fp + fneg;
        let f1 = if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 };
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    best.0
}

pub const WORDS: &[&str] = &[
    "red", "rex", "lion", "lino", "inn", "house", "blue", "bleu", "oak", "the", "a",
];

pub fn filter_kb(names: &[Vec<usize>], domain_only: bool) -> KnowledgeBase {
    let mut kb = KnowledgeBase::default();
    for (i, name) in names.iter().enumerate() {
        let key = EntityKey::new("hotel", i.to_string());
        let text: Vec<&str> = name.iter().map(|&w| WORDS[w]).collect();
        kb.add_entity(key, Some(text.join(" "))).unwrap();
        kb.add_snippet(SnippetRef::new("hotel", i.to_string(), "0"), "q", "a")
            .unwrap();
    }
    if domain_only {
        kb.add_entity(EntityKey::new("taxi", "*"), None).unwrap();
    }
    kb
}

/// Dialogs over [`WORDS`]; speakers alternate back from a final user turn.
pub fn filter_dialogs(utts: &[Vec<Vec<usize>>]) -> Vec<Dialog> {
    utts.iter()
        .enumerate()
        .map(|(i, turns)| {
            let n = turns.len();
            let turns = turns
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let text = t.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ");
                    if (n - 1 - j) % 2 == 0 {
                        Turn::user(text)
                    } else {
                        Turn::system(text)
                    }
                })
                .collect();
            Dialog::new(i.to_string(), turns).unwrap()
        })
        .collect()
}

/// Random corpus for the filter: entity names and dialogs as word indices.
pub fn random_filter_corpus(rng: &mut impl Rng) -> (Vec<Vec<usize>>, Vec<Vec<Vec<usize>>>) {
    let seq = |rng: &mut dyn rand::RngCore, max: usize| -> Vec<usize> {
        (0..rng.gen_range(1..=max))
            .map(|_| rng.gen_range(0..WORDS.len()))
            .collect()
    };
    let names = (0..rng.gen_range(1..5)).map(|_| seq(rng, 3)).collect();
    let utts = (0..rng.gen_range(1..6))
        .map(|_| (0..rng.gen_range(1..4)).map(|_| seq(rng, 5)).collect())
        .collect();
    (names, utts)
}

pub fn absolute_filter(t1: usize, t2: usize, t3: usize) -> FilterConfig {
    FilterConfig {
        t1: DfCeiling::Absolute(t1),
        t2,
        t3: DfCeiling::Absolute(t3),
        ..FilterConfig::default()
    }
}

/// Every turn scanned for every pattern of every entity, word by word.
pub fn naive_match(dialog: &Dialog, patterns: &EntityPatterns) -> BTreeSet<EntityKey> {
    let mut out: BTreeSet<EntityKey> = patterns.domain_only().clone();
    for key in patterns.named_entities() {
        let pats = patterns
            .exact_set(key)
            .unwrap()
            .iter()
            .chain(patterns.fuzzy_set(key).unwrap());
        'pat: for p in pats {
            let words: Vec<&str> = p.words().collect();
            for turn in &dialog.turns {
                let toks = tokenize(&turn.text).0;
                if toks
                    .windows(words.len())
                    .any(|w| w.iter().zip(&words).all(|(a, b)| a == b))
                {
                    out.insert(key.clone());
                    break 'pat;
                }
            }
        }
    }
    out
}

/// Dense TF-IDF cosine of `gold` against every other snippet, best first.
pub fn exhaustive_scores(kb: &KnowledgeBase, gold: &SnippetRef) -> Vec<(SnippetRef, f64)> {
    let docs: Vec<(SnippetRef, Vec<String>)> = kb
        .snippets()
        .map(|s| (s.reference.clone(), snippet_text(s).0))
        .collect();
    let mut vocab: Vec<String> = docs.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
    vocab.sort();
    vocab.dedup();
    let n = docs.len() as f64;
    let dense = |d: &[String]| -> Vec<f64> {
        vocab
            .iter()
            .map(|w| {
                let tf = d.iter().filter(|t| *t == w).count() as f64;
                let df = docs.iter().filter(|(_, o)| o.contains(w)).count() as f64;
                tf * ((1.0 + n) / (1.0 + df)).ln()
            })
            .collect()
    };
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let g = dense(&docs.iter().find(|(r, _)| r == gold).unwrap().1);
    let mut scored: Vec<(SnippetRef, f64)> = docs
        .iter()
        .filter(|(r, _)| r != gold)
        .map(|(r, d)| (r.clone(), cos(&g, &dense(d))))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

pub const POOL_WORDS: &[&str] = &[
    "park", "wifi", "free", "yes", "no", "room", "pet", "dog", "car", "bike", "time", "open",
];

/// One entity whose snippets are the given word-index questions and answers.
pub fn pool_kb(docs: &[(Vec<usize>, Vec<usize>)]) -> KnowledgeBase {
    let mut kb = KnowledgeBase::default();
    kb.add_entity(EntityKey::new("hotel", "1"), Some("Inn".into())).unwrap();
    for (i, (q, a)) in docs.iter().enumerate() {
        let q: Vec<&str> = q.iter().map(|&w| POOL_WORDS[w]).collect();
        let a: Vec<&str> = a.iter().map(|&w| POOL_WORDS[w]).collect();
        kb.add_snippet(SnippetRef::new("hotel", "1", i.to_string()), q.join(" "), a.join(" "))
            .unwrap();
    }
    kb
}

/// Eight snippets with disjoint topic words; each context samples its snippet's words plus shared filler.
pub fn cluster_corpus(seed: u64, per_snippet: usize) -> (Split, KnowledgeBase) {
    let mut rng = init_rng(seed);
    let mut kb = KnowledgeBase::default();
    kb.add_entity(EntityKey::new("faq", "*"), None).unwrap();
    let topic = |k: usize, j: usize| format!("t{k}w{j}");
    let filler = ["please", "tell", "me", "about", "i", "would", "like", "to", "know"];
    let mut dialogs = Vec::new();
    let mut labels = Vec::new();
    for k in 0..8 {
        let r = SnippetRef::new("faq", "*", k.to_string());
        kb.add_snippet(
            r.clone(),
            format!("{} {} {}", topic(k, 0), topic(k, 1), topic(k, 2)),
            format!("{} {} {}", topic(k, 3), topic(k, 4), topic(k, 5)),
        )
        .unwrap();
        for i in 0..per_snippet {
            let mut words: Vec<String> = (0..6).map(|j| topic(k, j)).collect();
            words.shuffle(&mut rng);
            words.truncate(rng.gen_range(2..=4));
            for _ in 0..rng.gen_range(1..4) {
                words.push(filler[rng.gen_range(0..filler.len())].to_string());
            }
            words.shuffle(&mut rng);
            dialogs.push(Dialog::new(format!("{k}-{i}"), vec![Turn::user(words.join(" "))]).unwrap());
            labels.push(label(&r));
        }
    }
    (Split::new(dialogs, labels).unwrap(), kb)
}

pub fn cluster_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 80,
        ..fast_config(5)
    }
}

/// Knowledge-seeking questions against chit-chat and booking requests.
pub fn detector_split(n: usize) -> Split {
    let pos = [
        "is there free parking",
        "do they have wifi",
        "can i bring my dog",
        "is breakfast included",
    ];
    let neg = [
        "book a table for two",
        "i need a taxi at noon",
        "find me a cheap hotel",
        "thanks goodbye",
    ];
    let mut dialogs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let (text, target) = if i % 2 == 0 {
            (pos[i / 2 % 4], true)
        } else {
            (neg[i / 2 % 4], false)
        };
        dialogs.push(Dialog::new(i.to_string(), vec![Turn::user(text)]).unwrap());
        labels.push(if target {
            label(&SnippetRef::new("hotel", "1", "0"))
        } else {
            TurnLabel::negative()
        });
    }
    Split::new(dialogs, labels).unwrap()
}

pub const HOTEL_NAMES: [&str; 20] = [
    "gonville",
    "aylesbray",
    "hamilton",
    "bridgeway",
    "lovell",
    "arbury",
    "warkworth",
    "huntingdon",
    "carolina",
    "leverton",
    "finches",
    "limehouse",
    "cityroomz",
    "acorn",
    "alexander",
    "allenbell",
    "ashley",
    "autumn",
    "avalon",
    "cambridgebelfry",
];

/// 20 pairs, one per hotel, so every hotel name occurs in a single pair.
pub fn copy_corpus() -> (Split, KnowledgeBase) {
    let mut kb = KnowledgeBase::default();
    let mut dialogs = Vec::new();
    let mut labels = Vec::new();
    for (i, name) in HOTEL_NAMES.iter().enumerate() {
        let key = EntityKey::new("hotel", i.to_string());
        kb.add_entity(key, Some(name.to_string())).unwrap();
        let parking = SnippetRef::new("hotel", i.to_string(), "0");
        let wifi = SnippetRef::new("hotel", i.to_string(), "1");
        kb.add_snippet(parking.clone(), "Is parking free?", "Yes, parking is free.")
            .unwrap();
        kb.add_snippet(wifi.clone(), "Is there wifi?", "No, there is no wifi.")
            .unwrap();
        let (gold, question, response) = if i % 2 == 0 {
            (
                parking,
                "Is parking free there?",
                format!("yes {name} has free parking"),
            )
        } else {
            (wifi, "Do they have wifi?", format!("no {name} does not have wifi"))
        };
        dialogs.push(
            Dialog::new(
                i.to_string(),
                vec![Turn::system("How can I help?"), Turn::user(question)],
            )
            .unwrap(),
        );
        labels.push(TurnLabel {
            target: true,
            snippets: vec![gold],
            response: Some(response),
        });
    }
    (Split::new(dialogs, labels).unwrap(), kb)
}

pub fn copy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 2e-2,
        warmup_steps: 10,
        batch_size: 4,
        epochs: 60,
        seed,
        dim: 16,
        ..TrainConfig::default()
    }
}
