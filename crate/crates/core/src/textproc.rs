//! Tokenization, N-grams, document frequencies, edit distance and TF-IDF.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Lowercased word tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl From<Vec<&str>> for TokenSeq {
    fn from(tokens: Vec<&str>) -> Self {
        TokenSeq(tokens.into_iter().map(str::to_owned).collect())
    }
}

/// Splits on anything that is not a Unicode letter or digit and lowercases.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenSeq(tokens)
}

/// A run of `n` words, stored in its canonical space-joined form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NGram {
    text: String,
    n: usize,
}

impl NGram {
    pub fn new(words: &[impl AsRef<str>]) -> Self {
        assert!(!words.is_empty(), "an n-gram has at least one word");
        let text = words.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        NGram { text, n: words.len() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split(' ')
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn ngrams(seq: &TokenSeq, n: usize) -> Vec<NGram> {
    assert!(n >= 1, "n-gram arity must be positive");
    seq.0.windows(n).map(NGram::new).collect()
}

/// Character-level Levenshtein distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `Some(d)` when the Levenshtein distance `d` is at most `max`, else `None`.
///
/// Only the diagonal band of width `2 * max + 1` is evaluated.
pub fn edit_distance_within(a: &[char], b: &[char], max: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > max {
        return None;
    }
    const FAR: usize = usize::MAX / 2;
    let mut prev = vec![FAR; m + 1];
    let mut cur = vec![FAR; m + 1];
    for (j, slot) in prev.iter_mut().enumerate().take(max.min(m) + 1) {
        *slot = j;
    }
    for i in 1..=n {
        let lo = i.saturating_sub(max).max(1);
        let hi = (i + max).min(m);
        cur.fill(FAR);
        if i <= max {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= max).then_some(prev[m])
}

/// Per-document N-gram counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocFreqTable {
    counts: HashMap<NGram, usize>,
    num_docs: usize,
    arities: Vec<usize>,
}

impl DocFreqTable {
    pub fn new(arities: &[usize]) -> Self {
        let mut arities = arities.to_vec();
        arities.sort_unstable();
        arities.dedup();
        DocFreqTable {
            counts: HashMap::new(),
            num_docs: 0,
            arities,
        }
    }

    /// Counts each distinct N-gram of the document once.
    pub fn add_document(&mut self, doc: &TokenSeq) {
        let mut seen = HashSet::new();
        for &n in &self.arities {
            for gram in ngrams(doc, n) {
                if seen.insert(gram.clone()) {
                    *self.counts.entry(gram).or_insert(0) += 1;
                }
            }
        }
        self.num_docs += 1;
    }

    pub fn df(&self, gram: &NGram) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Document frequency of a single word.
    pub fn df_word(&self, word: &str) -> usize {
        self.df(&NGram::new(&[word]))
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn arities(&self) -> &[usize] {
        &self.arities
    }

    /// Distinct N-grams of arity `n`, sorted.
    pub fn grams_of_arity(&self, n: usize) -> Vec<&NGram> {
        let mut grams: Vec<&NGram> = self.counts.keys().filter(|g| g.n == n).collect();
        grams.sort_unstable();
        grams
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn build_df_table(docs: &[TokenSeq], arities: &[usize]) -> Result<DocFreqTable> {
    if docs.is_empty() {
        return Err(Error::invalid("docs", "document frequency needs at least one document"));
    }
    if arities.contains(&0) {
        return Err(Error::invalid("arities", "n-gram arity must be positive"));
    }
    let mut table = DocFreqTable::new(arities);
    for doc in docs {
        table.add_document(doc);
    }
    Ok(table)
}

/// Sparse unigram TF-IDF weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfIdfVector {
    weights: BTreeMap<String, f64>,
}

impl TfIdfVector {
    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &TfIdfVector) -> f64 {
        let (small, large) = if self.weights.len() <= other.weights.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.weights.iter().map(|(t, w)| w * large.weight(t)).sum()
    }

    /// Cosine similarity; 0 when either vector has zero norm.
    pub fn cosine(&self, other: &TfIdfVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (self.dot(other) / denom).clamp(-1.0, 1.0)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(t, &w)| (t.as_str(), w))
    }
}

/// `tf(t) * ln((1 + N) / (1 + df(t)))` over the unigrams of `seq`.
pub fn tfidf_vector(seq: &TokenSeq, table: &DocFreqTable) -> TfIdfVector {
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for tok in seq.iter() {
        *tf.entry(tok).or_insert(0) += 1;
    }
    let n = table.num_docs() as f64;
    let weights = tf
        .into_iter()
        .map(|(term, count)| {
            let df = table.df_word(term) as f64;
            (term.to_owned(), count as f64 * ((1.0 + n) / (1.0 + df)).ln())
        })
        .collect();
    TfIdfVector { weights }
}

/// Dense cosine similarity; 0 when either vector has zero norm.
pub fn cosine<S: Scalar>(u: &[S], v: &[S]) -> S {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let denom = dot(u, u).sqrt() * dot(v, v).sqrt();
    if denom == S::zero() {
        S::zero()
    } else {
        (dot(u, v) / denom).max(-S::one()).min(S::one())
    }
}
