//! Detection, selection and generation metrics, and end-to-end scoring.
//!
//! BLEU is sentence-level with add-one smoothing on orders two and up;
//! ROUGE-L is the LCS F-measure with equal precision and recall weights.
//! METEOR is not computed and never reported.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{SnippetRef, TurnLabel};
use crate::error::{Error, Result};
use crate::textproc::{tokenize, TokenSeq};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of boolean predictions; empty denominators give 0.
pub fn prf1(pred: &[bool], gold: &[bool]) -> Prf {
    assert_eq!(pred.len(), gold.len(), "predictions and gold must align");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// 1 if `gold` is among the first `k` entries of `ranked`, else 0.
pub fn recall_at_k<K: PartialEq>(ranked: &[K], gold: &K, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    if ranked.iter().take(k).any(|r| r == gold) {
        1.0
    } else {
        0.0
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and the hypothesis n-gram count.
fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let ref_counts = ngram_counts(reference, n);
    let matches = hyp_counts
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp()
}

/// Sentence BLEU up to order `n`.
pub fn bleu_n(hyp: &TokenSeq, reference: &TokenSeq, n: usize) -> f64 {
    sentence_bleu(hyp, reference, n, true)
}

/// Sentence BLEU; `smooth` adds one to numerator and denominator of orders two and up.
pub fn sentence_bleu(hyp: &TokenSeq, reference: &TokenSeq, n: usize, smooth: bool) -> f64 {
    assert!(n >= 1, "BLEU order must be positive");
    if hyp.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (m, c) = clipped_matches(&hyp.0, &reference.0, order);
        let p = if order == 1 || !smooth {
            if c == 0 {
                return 0.0;
            }
            m as f64 / c as f64
        } else {
            (m as f64 + 1.0) / (c as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    (log_sum / n as f64).exp() * brevity_penalty(hyp.len(), reference.len())
}

/// Corpus BLEU (pooled counts, no smoothing).
pub fn corpus_bleu(pairs: &[(TokenSeq, TokenSeq)], n: usize) -> f64 {
    assert!(n >= 1, "BLEU order must be positive");
    let hyp_len: usize = pairs.iter().map(|(h, _)| h.len()).sum();
    let ref_len: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut m, mut c) = (0, 0);
        for (h, r) in pairs {
            let (mi, ci) = clipped_matches(&h.0, &r.0, order);
            m += mi;
            c += ci;
        }
        if m == 0 || c == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / c as f64).ln();
    }
    (log_sum / n as f64).exp() * brevity_penalty(hyp_len, ref_len)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(hyp: &TokenSeq, reference: &TokenSeq) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&hyp.0, &reference.0) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Pipeline output for one dialog's final turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub target: bool,
    /// Ranked snippets, best first.
    #[serde(rename = "knowledge", default, skip_serializing_if = "Vec::is_empty")]
    pub snippets: Vec<SnippetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl PredictionRecord {
    pub fn negative() -> Self {
        PredictionRecord {
            target: false,
            snippets: Vec::new(),
            response: None,
        }
    }
}

impl From<&TurnLabel> for PredictionRecord {
    fn from(label: &TurnLabel) -> Self {
        PredictionRecord {
            target: label.target,
            snippets: label.snippets.clone(),
            response: label.response.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    pub r_at_1: f64,
    pub r_at_5: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationScores {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub corpus_bleu4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub turns: usize,
    pub gold_positive: usize,
    pub predicted_positive: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub detection: Prf,
    pub selection: SelectionScores,
    pub generation: GenerationScores,
    pub counts: Counts,
}

/// Detection-gated scoring: selection and generation credit is only given on
/// gold-positive turns that were also predicted positive.
pub fn pipeline_score(preds: &[PredictionRecord], labels: &[TurnLabel]) -> Result<MetricReport> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidData(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let pred_flags: Vec<bool> = preds.iter().map(|p| p.target).collect();
    let gold_flags: Vec<bool> = labels.iter().map(|l| l.target).collect();
    let detection = prf1(&pred_flags, &gold_flags);

    let mut gold_positive = 0usize;
    let (mut r1, mut r5) = (0.0, 0.0);
    let (mut b1, mut b4, mut rl) = (0.0, 0.0, 0.0);
    let mut pairs = Vec::new();
    for (pred, label) in preds.iter().zip(labels) {
        let Some(gold) = label.gold().filter(|_| label.target) else {
            continue;
        };
        gold_positive += 1;
        let reference = tokenize(label.response.as_deref().unwrap_or(""));
        if !pred.target {
            pairs.push((TokenSeq::default(), reference));
            continue;
        }
        r1 += recall_at_k(&pred.snippets, gold, 1);
        r5 += recall_at_k(&pred.snippets, gold, 5);
        let hyp = tokenize(pred.response.as_deref().unwrap_or(""));
        b1 += bleu_n(&hyp, &reference, 1);
        b4 += bleu_n(&hyp, &reference, 4);
        rl += rouge_l(&hyp, &reference);
        pairs.push((hyp, reference));
    }
    let mean = |x: f64| {
        if gold_positive == 0 {
            0.0
        } else {
            x / gold_positive as f64
        }
    };
    Ok(MetricReport {
        detection,
        selection: SelectionScores {
            r_at_1: mean(r1),
            r_at_5: mean(r5),
        },
        generation: GenerationScores {
            bleu1: mean(b1),
            bleu4: mean(b4),
            rouge_l: mean(rl),
            corpus_bleu4: corpus_bleu(&pairs, 4),
        },
        counts: Counts {
            turns: labels.len(),
            gold_positive,
            predicted_positive: pred_flags.iter().filter(|&&p| p).count(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> TokenSeq {
        tokenize(s)
    }

    #[test]
    fn prf_examples() {
        assert_eq!(
            prf1(&[true, false, true], &[true, false, true]),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        assert_eq!(
            prf1(&[false, false], &[true, false]),
            Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0
            }
        );
        // TP=2, FP=1, FN=1
        let m = prf1(&[true, true, true, false], &[true, true, false, true]);
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_at_k_examples() {
        assert_eq!(recall_at_k(&["a", "b"], &"a", 1), 1.0);
        assert_eq!(recall_at_k(&["b", "a"], &"a", 1), 0.0);
        assert_eq!(recall_at_k(&["b", "a"], &"a", 2), 1.0);
        for k in 1..4 {
            assert_eq!(recall_at_k(&["b", "c"], &"a", k), 0.0);
        }
    }

    #[test]
    fn bleu_examples() {
        let s = toks("the cat sat on the mat");
        assert!((bleu_n(&s, &s, 4) - 1.0).abs() < 1e-12);
        let b = bleu_n(&toks("the cat"), &toks("the cat sat"), 1);
        assert!((b - (-0.5f64).exp()).abs() < 1e-12);
        assert!((b - 0.6065).abs() < 1e-4);
        assert_eq!(bleu_n(&toks(""), &s, 1), 0.0);
        assert!((corpus_bleu(&[(s.clone(), s.clone())], 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn higher_orders_can_raise_bleu() {
        // Clipping costs a unigram match but every bigram matches: p1 = 5/6, p2 = 1.
        let hyp = toks("d c b c a d");
        let reference = toks("a d c b c a");
        let b1 = sentence_bleu(&hyp, &reference, 1, false);
        let b2 = sentence_bleu(&hyp, &reference, 2, false);
        assert!((b1 - 5.0 / 6.0).abs() < 1e-12);
        assert!(b2 > b1);
        assert_eq!(sentence_bleu(&toks("a b"), &toks("c d"), 2, false), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("a b c"), &toks("a b c")), 1.0);
        assert!((rouge_l(&toks("a b c"), &toks("a c")) - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")), 0.0);
    }

    fn label(doc: &str, response: &str) -> TurnLabel {
        TurnLabel {
            target: true,
            snippets: vec![SnippetRef::new("hotel", "1", doc)],
            response: Some(response.into()),
        }
    }

    #[test]
    fn oracle_predictions_score_one() {
        let labels = vec![label("0", "yes they do"), TurnLabel::negative(), label("1", "no pets")];
        let preds: Vec<PredictionRecord> = labels.iter().map(PredictionRecord::from).collect();
        let r = pipeline_score(&preds, &labels).unwrap();
        assert_eq!(r.detection.f1, 1.0);
        assert_eq!(r.selection.r_at_1, 1.0);
        assert_eq!(r.selection.r_at_5, 1.0);
        assert!((r.generation.bleu1 - 1.0).abs() < 1e-12);
        assert!((r.generation.rouge_l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missed_detections_gate_downstream() {
        let labels: Vec<TurnLabel> = (0..4).map(|i| label(&i.to_string(), "ok sure")).collect();
        let mut preds: Vec<PredictionRecord> = labels.iter().map(PredictionRecord::from).collect();
        preds[1] = PredictionRecord::negative();
        preds[3] = PredictionRecord::negative();
        let r = pipeline_score(&preds, &labels).unwrap();
        assert!(r.selection.r_at_1 <= 0.5);
        assert_eq!(r.detection.recall, 0.5);
    }

    #[test]
    fn four_turn_fixture_by_hand() {
        // Turn 0: correct everywhere. Turn 1: gold positive, missed by detection.
        // Turn 2: gold snippet at rank 2, response "a b" vs "a b c".
        // Turn 3: gold negative, predicted positive.
        let labels = vec![
            label("0", "a b c"),
            label("1", "x y"),
            label("2", "a b c"),
            TurnLabel::negative(),
        ];
        let preds = vec![
            PredictionRecord::from(&labels[0]),
            PredictionRecord::negative(),
            PredictionRecord {
                target: true,
                snippets: vec![SnippetRef::new("hotel", "1", "9"), SnippetRef::new("hotel", "1", "2")],
                response: Some("a b".into()),
            },
            PredictionRecord {
                target: true,
                snippets: vec![SnippetRef::new("hotel", "1", "0")],
                response: Some("hi".into()),
            },
        ];
        let r = pipeline_score(&preds, &labels).unwrap();
        // TP=2, FP=1, FN=1
        assert!((r.detection.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.detection.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.selection.r_at_1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.selection.r_at_5 - 2.0 / 3.0).abs() < 1e-12);
        // BLEU-1 of "a b" vs "a b c": p1 = 1, BP = exp(1 - 3/2).
        let b1 = (1.0 + (-0.5f64).exp()) / 3.0;
        assert!((r.generation.bleu1 - b1).abs() < 1e-12);
        // ROUGE-L: 1 and 2·(1·2/3)/(1 + 2/3) = 0.8.
        assert!((r.generation.rouge_l - 1.8 / 3.0).abs() < 1e-12);
        assert_eq!(r.counts.gold_positive, 3);
        assert_eq!(r.counts.predicted_positive, 3);
    }

    #[test]
    fn report_json_keys() {
        let labels = vec![label("0", "a")];
        let preds = vec![PredictionRecord::from(&labels[0])];
        let v = serde_json::to_value(pipeline_score(&preds, &labels).unwrap()).unwrap();
        for path in [
            "/detection/precision",
            "/detection/recall",
            "/detection/f1",
            "/selection/r_at_1",
            "/selection/r_at_5",
            "/generation/bleu1",
            "/generation/bleu4",
            "/generation/rouge_l",
        ] {
            assert!(v.pointer(path).is_some(), "{path}");
        }
        assert!(v.pointer("/generation/meteor").is_none());
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(hyp in proptest::collection::vec("[a-d]", 0..10),
                               reference in proptest::collection::vec("[a-d]", 1..10)) {
            let (h, r) = (TokenSeq(hyp), TokenSeq(reference));
            for n in 1..=4 {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&bleu_n(&h, &r, n)));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&sentence_bleu(&h, &r, n, false)));
            }
            let rl = rouge_l(&h, &r);
            prop_assert!((0.0..=1.0).contains(&rl));
        }

        #[test]
        fn recall_monotone_in_k(ranked in proptest::collection::vec(0u8..6, 0..6), gold in 0u8..6) {
            let mut last = 0.0;
            for k in 1..8 {
                let r = recall_at_k(&ranked, &gold, k);
                prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
