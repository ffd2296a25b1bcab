//! Knowledge-seeking turn detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, Split};
use crate::error::{Error, Result};
use crate::features::context_tokens;
use crate::metrics::prf1;
use crate::neural::{
    init_rng, train_binary, BinaryExample, FocalConfig, TextClassifier, TrainConfig, TrainReport, Vocab,
};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.45;
/// Lower threshold trading precision for recall.
pub const RECALL_THRESHOLD: f64 = 0.25;

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("threshold", format!("{t} is not inside (0, 1)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DetectorModel<S> {
    pub classifier: TextClassifier<S>,
    threshold: f64,
}

impl<S: Scalar> DetectorModel<S> {
    pub fn new(classifier: TextClassifier<S>, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(DetectorModel { classifier, threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        check_threshold(t)?;
        self.threshold = t;
        Ok(())
    }

    pub fn input_ids(&self, context: &Dialog) -> Vec<usize> {
        self.classifier.vocab.ids(&context_tokens(context))
    }

    /// Probability that the last turn of `context` needs external knowledge.
    pub fn detect(&self, context: &Dialog) -> S {
        self.classifier.probability(&self.input_ids(context))
    }

    pub fn decide(&self, context: &Dialog) -> bool {
        self.detect(context).as_f64() >= self.threshold
    }
}

fn examples(split: &Split, vocab: &Vocab) -> Vec<BinaryExample> {
    split
        .iter()
        .map(|(d, l)| BinaryExample {
            ids: vocab.ids(&context_tokens(d)),
            label: l.target,
        })
        .collect()
}

/// F1 of `model` on `split` at its threshold.
pub fn detection_f1<S: Scalar>(model: &DetectorModel<S>, split: &Split) -> f64 {
    let pred: Vec<bool> = split.dialogs.par_iter().map(|d| model.decide(d)).collect();
    let gold: Vec<bool> = split.labels.iter().map(|l| l.target).collect();
    prf1(&pred, &gold).f1
}

/// Trains a detector on `train`, keeping the epoch with the best F1 on `valid`.
pub fn train_detector<S: Scalar>(
    train: &Split,
    valid: &Split,
    cfg: &TrainConfig,
    focal: &FocalConfig,
) -> Result<(DetectorModel<S>, TrainReport)> {
    let positives = train.labels.iter().filter(|l| l.target).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::InvalidData(
            "detector training data must contain both positive and negative turns".into(),
        ));
    }
    cfg.validate()?;
    let contexts: Vec<_> = train.dialogs.iter().map(context_tokens).collect();
    let vocab = Vocab::build(&contexts, 1);
    let data = examples(train, &vocab);
    let mut classifier = TextClassifier::init(vocab, cfg.dim, &mut init_rng(cfg.seed))?;
    let mut probe = DetectorModel::new(classifier.clone(), DEFAULT_THRESHOLD)?;
    let report = train_binary(
        &mut classifier.weights,
        cfg,
        focal,
        |_, _| data.clone(),
        |w| {
            probe.classifier.weights = w.clone();
            detection_f1(&probe, valid)
        },
    )?;
    Ok((DetectorModel::new(classifier, DEFAULT_THRESHOLD)?, report))
}

/// Smallest grid threshold `t ∈ {0.01, …, 0.99}` maximizing F1 of `prob ≥ t`.
///
/// F1 values are compared as exact fractions `2tp / (2tp + fp + fn)`.
pub fn tune_threshold(probs: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(probs.len(), labels.len(), "probabilities and labels must align");
    let f1_fraction = |t: f64| {
        let (mut tp, mut wrong) = (0u64, 0u64);
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= t, y) {
                (true, true) => tp += 1,
                (true, false) | (false, true) => wrong += 1,
                (false, false) => {}
            }
        }
        (2 * tp, 2 * tp + wrong)
    };
    let mut best_t = 0.01;
    let mut best = f1_fraction(best_t);
    for i in 2..100 {
        let t = i as f64 / 100.0;
        let (num, den) = f1_fraction(t);
        // num/den > best.0/best.1, with 0/0 treated as 0
        if num as u128 * best.1.max(1) as u128 > best.0 as u128 * den.max(1) as u128 {
            best = (num, den);
            best_t = t;
        }
    }
    best_t
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    /// Strict majority of thresholded member decisions.
    #[default]
    Majority,
    /// Mean member probability against the threshold.
    MeanProbability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct DetectorEnsemble<S> {
    members: Vec<DetectorModel<S>>,
    threshold: f64,
    pub vote: Vote,
}

impl<S: Scalar> DetectorEnsemble<S> {
    pub fn new(members: Vec<DetectorModel<S>>, threshold: f64, vote: Vote) -> Result<Self> {
        if members.is_empty() || members.len().is_multiple_of(2) {
            return Err(Error::invalid(
                "ensemble-size",
                format!("need an odd number of members, got {}", members.len()),
            ));
        }
        check_threshold(threshold)?;
        Ok(DetectorEnsemble {
            members,
            threshold,
            vote,
        })
    }

    pub fn members(&self) -> &[DetectorModel<S>] {
        &self.members
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        check_threshold(t)?;
        self.threshold = t;
        Ok(())
    }

    pub fn member_probabilities(&self, context: &Dialog) -> Vec<f64> {
        self.members.iter().map(|m| m.detect(context).as_f64()).collect()
    }

    /// Mean member probability.
    pub fn probability(&self, context: &Dialog) -> f64 {
        let p = self.member_probabilities(context);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn decide(&self, context: &Dialog) -> bool {
        ensemble_detect(self, context, self.threshold)
    }

    pub fn decide_all(&self, dialogs: &[Dialog]) -> Vec<bool> {
        dialogs.par_iter().map(|d| self.decide(d)).collect()
    }
}

/// Ensemble decision at threshold `t`.
pub fn ensemble_detect<S: Scalar>(ens: &DetectorEnsemble<S>, context: &Dialog, t: f64) -> bool {
    let probs = ens.member_probabilities(context);
    match ens.vote {
        Vote::Majority => majority(probs.iter().map(|&p| p >= t)),
        Vote::MeanProbability => probs.iter().sum::<f64>() / probs.len() as f64 >= t,
    }
}

/// True iff more than half of the votes are true.
pub fn majority(votes: impl IntoIterator<Item = bool>) -> bool {
    let (yes, total) = votes
        .into_iter()
        .fold((0usize, 0usize), |(y, n), v| (y + v as usize, n + 1));
    2 * yes > total
}

/// Trains `size` detectors on seeds `cfg.seed, cfg.seed + 1, …`.
pub fn train_detector_ensemble<S: Scalar>(
    train: &Split,
    valid: &Split,
    cfg: &TrainConfig,
    focal: &FocalConfig,
    size: usize,
    threshold: f64,
    vote: Vote,
) -> Result<(DetectorEnsemble<S>, Vec<TrainReport>)> {
    let mut members = Vec::with_capacity(size);
    let mut reports = Vec::with_capacity(size);
    for i in 0..size {
        let member_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let (mut model, report) = train_detector(train, valid, &member_cfg, focal)?;
        model.set_threshold(threshold)?;
        members.push(model);
        reports.push(report);
    }
    Ok((DetectorEnsemble::new(members, threshold, vote)?, reports))
}
