//! Statistical entity-candidate filtering.
//!
//! Each named entity gets a pattern set of name N-grams that are rare both in
//! the dialog utterances and among entity names. A typo-tolerant extension adds
//! rare utterance N-grams within a small edit distance of those patterns. A
//! dialog's candidate entities are the ones whose patterns occur anywhere in its
//! history; domain-level entries (taxi, train) are always candidates.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, EntityKey, KnowledgeBase, Split};
use crate::error::{Error, Result};
use crate::textproc::{edit_distance_within, ngrams, tfidf_vector, tokenize, DocFreqTable, NGram, TokenSeq};

/// Upper bound (exclusive) on a document frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfCeiling {
    /// `max(1, round(num_utterances / divisor))`.
    PerUtterances(f64),
    Absolute(usize),
}

impl DfCeiling {
    pub fn resolve(self, num_utterances: usize) -> usize {
        match self {
            DfCeiling::PerUtterances(div) => ((num_utterances as f64 / div).round() as usize).max(1),
            DfCeiling::Absolute(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Utterance-df ceiling for exact patterns.
    pub t1: DfCeiling,
    /// Entity-name-df ceiling for exact patterns.
    pub t2: usize,
    /// Utterance-df ceiling for fuzzy patterns.
    pub t3: DfCeiling,
    /// Maximum edit distance per N-gram arity for fuzzy matching.
    pub max_edit: BTreeMap<usize, usize>,
    pub exact_n: Vec<usize>,
    pub fuzzy_n: Vec<usize>,
    pub fuzzy: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            t1: DfCeiling::PerUtterances(100.0),
            t2: 5,
            t3: DfCeiling::PerUtterances(2000.0),
            max_edit: BTreeMap::from([(1, 2), (2, 1)]),
            exact_n: vec![1, 2, 3, 4],
            fuzzy_n: vec![1, 2],
            fuzzy: true,
        }
    }
}

impl FilterConfig {
    pub fn exact_only() -> Self {
        FilterConfig {
            fuzzy: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t2 < 1 {
            return Err(Error::invalid("t2", "must be at least 1"));
        }
        match (self.t1, self.t3) {
            (DfCeiling::PerUtterances(a), DfCeiling::PerUtterances(b)) => {
                if !(a > 0.0 && b > 0.0 && a < b) {
                    return Err(Error::invalid(
                        "t1/t3",
                        "divisors must be positive with t1's smaller than t3's",
                    ));
                }
            }
            (DfCeiling::Absolute(a), DfCeiling::Absolute(b)) => {
                if !(a > b && b > 0) {
                    return Err(Error::invalid("t1/t3", "require t1 > t3 > 0"));
                }
            }
            (t1, t3) => {
                for (name, c) in [("t1", t1), ("t3", t3)] {
                    match c {
                        DfCeiling::PerUtterances(d) if d <= 0.0 => {
                            return Err(Error::invalid(name, "divisor must be positive"))
                        }
                        DfCeiling::Absolute(0) => return Err(Error::invalid(name, "ceiling must be positive")),
                        _ => {}
                    }
                }
            }
        }
        let bad_arity = |ns: &[usize]| ns.is_empty() || ns.iter().any(|&n| !(1..=4).contains(&n));
        if bad_arity(&self.exact_n) || bad_arity(&self.fuzzy_n) {
            return Err(Error::invalid("exact_n/fuzzy_n", "arities must be within 1..=4"));
        }
        if let Some(n) = self.fuzzy_n.iter().find(|n| !self.max_edit.contains_key(n)) {
            return Err(Error::invalid("max_edit", format!("no edit bound for arity {n}")));
        }
        Ok(())
    }
}

/// One token sequence per distinct utterance of the split.
///
/// Dialog logs may repeat the same conversation as successive prefixes; an
/// utterance is identified by its full prefix, so each is counted once.
pub fn utterance_documents(dialogs: &[Dialog]) -> Vec<TokenSeq> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for dialog in dialogs {
        let mut prefix = DefaultHasher::new();
        for turn in &dialog.turns {
            turn.speaker.hash(&mut prefix);
            turn.text.hash(&mut prefix);
            if seen.insert(prefix.finish()) {
                docs.push(tokenize(&turn.text));
            }
        }
    }
    docs
}

/// Per-entity pattern sets with an inverted index for matching.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "PatternsFile", from = "PatternsFile")]
pub struct EntityPatterns {
    exact: BTreeMap<EntityKey, BTreeSet<NGram>>,
    fuzzy: BTreeMap<EntityKey, BTreeSet<NGram>>,
    domain_only: BTreeSet<EntityKey>,
    index: HashMap<NGram, BTreeSet<EntityKey>>,
    arities: BTreeSet<usize>,
    num_utterances: usize,
    t1: usize,
    t3: usize,
}

impl EntityPatterns {
    pub fn exact_set(&self, key: &EntityKey) -> Option<&BTreeSet<NGram>> {
        self.exact.get(key)
    }

    pub fn fuzzy_set(&self, key: &EntityKey) -> Option<&BTreeSet<NGram>> {
        self.fuzzy.get(key)
    }

    pub fn named_entities(&self) -> impl Iterator<Item = &EntityKey> {
        self.exact.keys()
    }

    pub fn domain_only(&self) -> &BTreeSet<EntityKey> {
        &self.domain_only
    }

    pub fn num_utterances(&self) -> usize {
        self.num_utterances
    }

    /// Resolved `(t1, t3)` ceilings.
    pub fn ceilings(&self) -> (usize, usize) {
        (self.t1, self.t3)
    }

    /// N-gram arities that occur in any pattern set.
    pub fn arities(&self) -> impl Iterator<Item = usize> + '_ {
        self.arities.iter().copied()
    }

    fn rebuild_index(&mut self) {
        self.index.clear();
        self.arities.clear();
        for (key, set) in self.exact.iter().chain(&self.fuzzy) {
            for gram in set {
                self.arities.insert(gram.n());
                self.index.entry(gram.clone()).or_default().insert(key.clone());
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PatternEntry {
    entity: EntityKey,
    exact: Vec<String>,
    fuzzy: Vec<String>,
}

/// On-disk form of [`EntityPatterns`]; the index is rebuilt on load.
#[derive(Serialize, Deserialize)]
struct PatternsFile {
    num_utterances: usize,
    t1: usize,
    t3: usize,
    domain_only: Vec<EntityKey>,
    entities: Vec<PatternEntry>,
}

impl From<EntityPatterns> for PatternsFile {
    fn from(p: EntityPatterns) -> Self {
        let texts = |set: Option<&BTreeSet<NGram>>| {
            set.map(|s| s.iter().map(|g| g.text().to_string()).collect())
                .unwrap_or_default()
        };
        PatternsFile {
            num_utterances: p.num_utterances,
            t1: p.t1,
            t3: p.t3,
            domain_only: p.domain_only.iter().cloned().collect(),
            entities: p
                .exact
                .keys()
                .map(|k| PatternEntry {
                    entity: k.clone(),
                    exact: texts(p.exact.get(k)),
                    fuzzy: texts(p.fuzzy.get(k)),
                })
                .collect(),
        }
    }
}

impl From<PatternsFile> for EntityPatterns {
    fn from(f: PatternsFile) -> Self {
        let grams = |texts: Vec<String>| -> BTreeSet<NGram> {
            texts
                .iter()
                .filter(|t| !t.is_empty())
                .map(|t| NGram::new(&t.split(' ').collect::<Vec<_>>()))
                .collect()
        };
        let mut exact = BTreeMap::new();
        let mut fuzzy = BTreeMap::new();
        for e in f.entities {
            exact.insert(e.entity.clone(), grams(e.exact));
            fuzzy.insert(e.entity, grams(e.fuzzy));
        }
        let mut p = EntityPatterns {
            exact,
            fuzzy,
            domain_only: f.domain_only.into_iter().collect(),
            index: HashMap::new(),
            arities: BTreeSet::new(),
            num_utterances: f.num_utterances,
            t1: f.t1,
            t3: f.t3,
        };
        p.rebuild_index();
        p
    }
}

fn df_for_targets(docs: &[TokenSeq], targets: &HashSet<NGram>) -> HashMap<NGram, usize> {
    let arities: BTreeSet<usize> = targets.iter().map(NGram::n).collect();
    let mut counts: HashMap<NGram, usize> = HashMap::new();
    for doc in docs {
        let mut seen = HashSet::new();
        for &n in &arities {
            for gram in ngrams(doc, n) {
                if targets.contains(&gram) && seen.insert(gram.clone()) {
                    *counts.entry(gram).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Exact pattern sets: name N-grams with `df(U) < t1` and `df(E) < t2`.
pub fn build_patterns(kb: &KnowledgeBase, utterances: &[TokenSeq], cfg: &FilterConfig) -> Result<EntityPatterns> {
    cfg.validate()?;
    if utterances.is_empty() {
        return Err(Error::invalid(
            "utterances",
            "no utterances to compute frequencies from",
        ));
    }
    let num_utterances = utterances.len();
    let t1 = cfg.t1.resolve(num_utterances);
    let t3 = cfg.t3.resolve(num_utterances);

    let mut names = Vec::new();
    let mut domain_only = BTreeSet::new();
    for (key, name) in kb.entities() {
        match name {
            Some(name) => names.push((key.clone(), tokenize(name))),
            None => {
                domain_only.insert(key.clone());
            }
        }
    }

    let mut name_table = DocFreqTable::new(&cfg.exact_n);
    let mut targets = HashSet::new();
    let mut name_grams = Vec::with_capacity(names.len());
    for (key, tokens) in &names {
        name_table.add_document(tokens);
        let grams: BTreeSet<NGram> = cfg.exact_n.iter().flat_map(|&n| ngrams(tokens, n)).collect();
        targets.extend(grams.iter().cloned());
        name_grams.push((key.clone(), grams));
    }
    let utterance_df = df_for_targets(utterances, &targets);

    let exact = name_grams
        .into_iter()
        .map(|(key, grams)| {
            let kept = grams
                .into_iter()
                .filter(|g| utterance_df.get(g).copied().unwrap_or(0) < t1 && name_table.df(g) < cfg.t2)
                .collect();
            (key, kept)
        })
        .collect::<BTreeMap<_, BTreeSet<_>>>();
    let fuzzy = exact.keys().map(|k| (k.clone(), BTreeSet::new())).collect();

    let mut patterns = EntityPatterns {
        exact,
        fuzzy,
        domain_only,
        index: HashMap::new(),
        arities: BTreeSet::new(),
        num_utterances,
        t1,
        t3,
    };
    patterns.rebuild_index();
    Ok(patterns)
}

/// Adds typo-tolerant patterns: utterance N-grams with `df(U) < t3` within the
/// arity's edit bound of some exact pattern of the same arity.
pub fn fuzzy_extend(
    mut patterns: EntityPatterns,
    utterances: &[TokenSeq],
    cfg: &FilterConfig,
) -> Result<EntityPatterns> {
    cfg.validate()?;
    let table = crate::textproc::build_df_table(utterances, &cfg.fuzzy_n)?;
    let t3 = cfg.t3.resolve(utterances.len());
    patterns.t3 = t3;

    // (arity, entity index, pattern chars), bucketed by arity then char length.
    let entities: Vec<EntityKey> = patterns.exact.keys().cloned().collect();
    let mut buckets: HashMap<(usize, usize), Vec<CharPattern>> = HashMap::new();
    for (idx, key) in entities.iter().enumerate() {
        for gram in &patterns.exact[key] {
            if cfg.fuzzy_n.contains(&gram.n()) {
                let chars: Vec<char> = gram.text().chars().collect();
                buckets.entry((gram.n(), chars.len())).or_default().push((idx, chars));
            }
        }
    }

    let mut candidates = Vec::new();
    for &n in &cfg.fuzzy_n {
        for gram in table.grams_of_arity(n) {
            if table.df(gram) < t3 {
                candidates.push(gram.clone());
            }
        }
    }

    let matches: Vec<(NGram, Vec<usize>)> = candidates
        .into_par_iter()
        .filter_map(|gram| {
            let max = cfg.max_edit[&gram.n()];
            let chars: Vec<char> = gram.text().chars().collect();
            let lo = chars.len().saturating_sub(max);
            let mut hits = BTreeSet::new();
            for len in lo..=chars.len() + max {
                let Some(bucket) = buckets.get(&(gram.n(), len)) else {
                    continue;
                };
                for (idx, pat) in bucket {
                    if !hits.contains(idx) && edit_distance_within(&chars, pat, max).is_some() {
                        hits.insert(*idx);
                    }
                }
            }
            (!hits.is_empty()).then(|| (gram, hits.into_iter().collect()))
        })
        .collect();

    for (gram, hits) in matches {
        for idx in hits {
            let key = &entities[idx];
            if !patterns.exact[key].contains(&gram) {
                patterns
                    .fuzzy
                    .get_mut(key)
                    .expect("entity present")
                    .insert(gram.clone());
            }
        }
    }
    patterns.rebuild_index();
    Ok(patterns)
}

/// Entity index and pattern characters.
type CharPattern = (usize, Vec<char>);

/// Builds exact patterns and, when enabled in `cfg`, the fuzzy extension.
pub fn build_filter(kb: &KnowledgeBase, dialogs: &[Dialog], cfg: &FilterConfig) -> Result<EntityPatterns> {
    let utterances = utterance_documents(dialogs);
    let patterns = build_patterns(kb, &utterances, cfg)?;
    if cfg.fuzzy {
        fuzzy_extend(patterns, &utterances, cfg)
    } else {
        Ok(patterns)
    }
}

/// Entities eligible for ranking in one dialog context.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub entities: BTreeSet<EntityKey>,
}

impl CandidateSet {
    pub fn contains(&self, key: &EntityKey) -> bool {
        self.entities.contains(key)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityKey> {
        self.entities.iter()
    }

    /// Every entity of the knowledge base.
    pub fn all(kb: &KnowledgeBase) -> Self {
        CandidateSet {
            entities: kb.entities().map(|(k, _)| k.clone()).collect(),
        }
    }
}

/// Scans every turn of the history for pattern N-grams.
pub fn match_entities(context: &Dialog, patterns: &EntityPatterns) -> CandidateSet {
    let mut entities = patterns.domain_only.clone();
    for turn in &context.turns {
        let tokens = tokenize(&turn.text);
        for n in patterns.arities() {
            for gram in ngrams(&tokens, n) {
                if let Some(keys) = patterns.index.get(&gram) {
                    entities.extend(keys.iter().cloned());
                }
            }
        }
    }
    CandidateSet { entities }
}

/// Named entities scored by TF-IDF cosine between the dialog history and the name.
pub fn tfidf_entity_scores(context: &Dialog, kb: &KnowledgeBase, table: &DocFreqTable) -> Vec<(EntityKey, f64)> {
    let history: Vec<String> = context.turns.iter().flat_map(|t| tokenize(&t.text).0).collect();
    let query = tfidf_vector(&TokenSeq(history), table);
    let mut scored: Vec<(EntityKey, f64)> = kb
        .entities()
        .filter_map(|(key, name)| name.map(|n| (key.clone(), query.cosine(&tfidf_vector(&tokenize(n), table)))))
        .collect();
    // Stable sort keeps key order among ties.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}

/// Top-`k` named entities by TF-IDF similarity, plus all domain-level entries.
///
/// `table` holds unigram document frequencies over the split's utterances.
pub fn tfidf_prefilter(context: &Dialog, kb: &KnowledgeBase, table: &DocFreqTable, k: usize) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let mut entities: BTreeSet<EntityKey> = kb.domain_only_entities().cloned().collect();
    entities.extend(
        tfidf_entity_scores(context, kb, table)
            .into_iter()
            .take(k)
            .map(|(key, _)| key),
    );
    Ok(CandidateSet { entities })
}

/// Candidate-set size and gold-entity recall over knowledge-seeking turns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total_entities: usize,
    pub avg_matched: f64,
    pub recall: f64,
}

pub fn filter_stats(split: &Split, patterns: &EntityPatterns, kb: &KnowledgeBase) -> FilterStats {
    let mut turns = 0usize;
    let mut matched = 0usize;
    let mut hits = 0usize;
    for (dialog, _, gold) in split.knowledge_turns() {
        let candidates = match_entities(dialog, patterns);
        turns += 1;
        matched += candidates.len();
        let gold = gold.entity();
        if gold.is_domain_only() || candidates.contains(&gold) {
            hits += 1;
        }
    }
    let (avg_matched, recall) = if turns == 0 {
        (0.0, 0.0)
    } else {
        (matched as f64 / turns as f64, hits as f64 / turns as f64)
    };
    FilterStats {
        total_entities: kb.num_entities(),
        avg_matched,
        recall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SnippetRef, Turn};

    fn toy_kb(names: &[(&str, &str, &str)]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::default();
        for &(domain, id, name) in names {
            let key = EntityKey::new(domain, id);
            let name = (id != "*").then(|| name.to_string());
            kb.add_entity(key, name).unwrap();
            kb.add_snippet(SnippetRef::new(domain, id, "0"), "q?", "a.").unwrap();
        }
        kb
    }

    fn docs(texts: &[&str]) -> Vec<TokenSeq> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    fn set(grams: &[&str]) -> BTreeSet<NGram> {
        grams
            .iter()
            .map(|g| NGram::new(&g.split(' ').collect::<Vec<_>>()))
            .collect()
    }

    fn cfg(t1: usize, t3: usize) -> FilterConfig {
        FilterConfig {
            t1: DfCeiling::Absolute(t1),
            t3: DfCeiling::Absolute(t3),
            ..Default::default()
        }
    }

    #[test]
    fn frequent_words_are_excluded() {
        // 1000 utterances; "hotel" in 200 of them, "gonville" in 3; t1 = 1000/100 = 10.
        let mut texts = Vec::new();
        for i in 0..1000 {
            texts.push(match i {
                i if i < 3 => "the gonville hotel please".to_string(),
                i if i < 200 => "a hotel please".to_string(),
                i => format!("filler {i}"),
            });
        }
        let utts: Vec<TokenSeq> = texts.iter().map(|t| tokenize(t)).collect();
        let kb = toy_kb(&[("hotel", "1", "Gonville Hotel")]);
        let p = build_patterns(&kb, &utts, &FilterConfig::default()).unwrap();
        assert_eq!(p.ceilings().0, 10);
        assert_eq!(
            p.exact_set(&EntityKey::new("hotel", "1")).unwrap(),
            &set(&["gonville", "gonville hotel"])
        );
    }

    #[test]
    fn patterns_round_trip_through_json() {
        let kb = toy_kb(&[("hotel", "1", "Gonville Hotel"), ("taxi", "*", "")]);
        let p = build_filter(
            &kb,
            &[Dialog::new("d", vec![Turn::user("i want the gonvile hotel")]).unwrap()],
            &cfg(3, 2),
        )
        .unwrap();
        let back: EntityPatterns = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let d = Dialog::new("x", vec![Turn::user("the gonvile please")]).unwrap();
        assert_eq!(match_entities(&d, &back), match_entities(&d, &p));
    }

    #[test]
    fn all_frequent_name_yields_empty_set() {
        let utts = docs(&["the hotel", "the hotel", "hotel the"]);
        let kb = toy_kb(&[("hotel", "1", "The Hotel")]);
        let p = build_patterns(&kb, &utts, &cfg(2, 1)).unwrap();
        assert!(p.exact_set(&EntityKey::new("hotel", "1")).unwrap().is_empty());
    }

    #[test]
    fn names_shared_across_many_entities_are_excluded() {
        let names: Vec<(String, String)> = (0..10)
            .map(|i| {
                (
                    i.to_string(),
                    format!(
                        "{} house",
                        ["alpha", "bravo", "charlie", "delta", "echo", "fox", "golf", "hotel", "india", "juliet"][i]
                    ),
                )
            })
            .collect();
        let triples: Vec<(&str, &str, &str)> = names.iter().map(|(id, n)| ("hotel", id.as_str(), n.as_str())).collect();
        let kb = toy_kb(&triples);
        let utts = docs(&["nothing relevant"]);
        let p = build_patterns(&kb, &utts, &cfg(5, 1)).unwrap();
        let house = set(&["house"]).into_iter().next().unwrap();
        for key in p.named_entities() {
            assert!(!p.exact_set(key).unwrap().contains(&house));
        }
    }

    #[test]
    fn fuzzy_adds_rare_typos() {
        let utts = docs(&[
            "i want the gonvile hotel",
            "book gonville hotel",
            "a hovel",
            "a hovel",
            "another hovel",
            "x",
        ]);
        let kb = toy_kb(&[("hotel", "1", "Gonville Hotel")]);
        let c = cfg(3, 2);
        let p = build_patterns(&kb, &utts, &c).unwrap();
        let key = EntityKey::new("hotel", "1");
        assert!(p
            .exact_set(&key)
            .unwrap()
            .contains(&set(&["gonville"]).pop_first().unwrap()));
        let p = fuzzy_extend(p, &utts, &c).unwrap();
        let fuzzy = p.fuzzy_set(&key).unwrap();
        assert!(fuzzy.contains(&set(&["gonvile"]).pop_first().unwrap()));
        assert!(fuzzy.contains(&set(&["gonvile hotel"]).pop_first().unwrap()));
        // "hovel" is within distance 2 of "hotel" but too frequent (df 3 >= t3 = 2).
        assert!(!fuzzy.contains(&set(&["hovel"]).pop_first().unwrap()));
        // Exact patterns are never duplicated into the fuzzy set.
        assert!(fuzzy.is_disjoint(p.exact_set(&key).unwrap()));
    }

    #[test]
    fn matching_includes_domain_entries() {
        let kb = toy_kb(&[
            ("hotel", "1", "Gonville Hotel"),
            ("hotel", "2", "Acorn Guest House"),
            ("taxi", "*", ""),
            ("train", "*", ""),
        ]);
        let utts = docs(&["gonville please", "acorn is nice", "hello", "hello", "hello there"]);
        let p = build_patterns(&kb, &utts, &cfg(3, 1)).unwrap();
        let dialog = |text: &str| Dialog::new("d", vec![Turn::user(text)]).unwrap();

        let got = match_entities(&dialog("is the gonville nice"), &p);
        let want: BTreeSet<EntityKey> = [
            EntityKey::new("hotel", "1"),
            EntityKey::new("taxi", "*"),
            EntityKey::new("train", "*"),
        ]
        .into();
        assert_eq!(got.entities, want);

        let got = match_entities(&dialog("hello"), &p);
        assert_eq!(got.entities, p.domain_only().clone());

        let got = match_entities(&dialog("gonville or acorn"), &p);
        assert!(got.contains(&EntityKey::new("hotel", "1")));
        assert!(got.contains(&EntityKey::new("hotel", "2")));
    }

    #[test]
    fn tfidf_prefilter_ranks_exact_name_first() {
        let kb = toy_kb(&[
            ("hotel", "1", "Gonville Hotel"),
            ("hotel", "2", "Acorn Guest House"),
            ("restaurant", "3", "Pizza Hut City Centre"),
            ("taxi", "*", ""),
        ]);
        let table = crate::textproc::build_df_table(
            &docs(&["hotel please", "guest house", "pizza", "city centre hotel"]),
            &[1],
        )
        .unwrap();
        let ctx = Dialog::new("d", vec![Turn::user("Acorn Guest House")]).unwrap();
        let scores = tfidf_entity_scores(&ctx, &kb, &table);
        assert_eq!(scores[0].0, EntityKey::new("hotel", "2"));
        let top1 = tfidf_prefilter(&ctx, &kb, &table, 1).unwrap();
        assert_eq!(top1.len(), 2);
        assert!(top1.contains(&EntityKey::new("taxi", "*")));
        let all = tfidf_prefilter(&ctx, &kb, &table, 10).unwrap();
        assert_eq!(all.len(), kb.num_entities());
        assert!(tfidf_prefilter(&ctx, &kb, &table, 0).is_err());
    }

    #[test]
    fn prefix_logs_count_each_utterance_once() {
        let a = Dialog::new("0", vec![Turn::user("hi")]).unwrap();
        let b = Dialog::new("1", vec![Turn::user("hi"), Turn::system("hello"), Turn::user("bye")]).unwrap();
        assert_eq!(utterance_documents(&[a, b]).len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        assert!(cfg(2, 2).validate().is_err());
        let c = FilterConfig {
            t2: 0,
            ..FilterConfig::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(DfCeiling::PerUtterances(100.0).resolve(60), 1);
        assert_eq!(DfCeiling::PerUtterances(100.0).resolve(1049), 10);
    }
}
