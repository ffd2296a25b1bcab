//! Two-stage knowledge selection: entity ranking over filtered candidates,
//! then snippet ranking within the top entity. Also the cosine-embedding
//! variant and score-level ensembling.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, EntityKey, KnowledgeBase, SnippetRef, Split};
use crate::entity_filter::{match_entities, CandidateSet, EntityPatterns};
use crate::error::{Error, Result};
use crate::features::{context_tokens, entity_input, snippet_input, snippet_text};
use crate::metrics::recall_at_k;
use crate::neural::{
    fit, init_rng, select_semi_hard, train_binary, triplet_cosine_loss_with_grad, BinaryExample, EncoderParams,
    EncoderWeights, FocalConfig, TextClassifier, TrainConfig, TrainReport, TripletConfig, Vocab,
};
use crate::scalar::Scalar;
use crate::textproc::{build_df_table, cosine, tfidf_vector, TokenSeq};

/// Snippets written to prediction files per turn.
pub const TOP_K: usize = 5;

/// Knowledge-stage negatives are drawn from this many nearest snippets.
pub const NEGATIVE_POOL: usize = 10;

/// Keys ordered by descending score, ties by ascending key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList<K> {
    items: Vec<(K, f64)>,
}

impl<K: Ord + Clone> RankedList<K> {
    pub fn from_scores(mut items: Vec<(K, f64)>) -> Result<Self> {
        if items.iter().any(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFinite("ranking scores"));
        }
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList { items })
    }

    pub fn items(&self) -> &[(K, f64)] {
        &self.items
    }

    pub fn keys(&self) -> Vec<K> {
        self.items.iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn first(&self) -> Option<&K> {
        self.items.first().map(|(k, _)| k)
    }

    pub fn score_of(&self, key: &K) -> Option<f64> {
        self.items.iter().find(|(k, _)| k == key).map(|&(_, s)| s)
    }

    pub fn truncate(mut self, k: usize) -> Self {
        self.items.truncate(k);
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Entity,
    Knowledge,
}

/// Point-wise binary ranker for one selection stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RankerModel<S> {
    pub classifier: TextClassifier<S>,
    stage: Stage,
}

impl<S: Scalar> RankerModel<S> {
    pub fn new(classifier: TextClassifier<S>, stage: Stage) -> Self {
        RankerModel { classifier, stage }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::invalid(
                "stage",
                format!("a {:?} ranker cannot score {:?} inputs", self.stage, stage),
            ));
        }
        Ok(())
    }

    fn score(&self, tokens: &TokenSeq) -> f64 {
        self.classifier.probability(&self.classifier.vocab.ids(tokens)).as_f64()
    }
}

/// Scores every candidate entity; the full list is returned.
pub fn rank_entities<S: Scalar>(
    model: &RankerModel<S>,
    context: &Dialog,
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
) -> Result<RankedList<EntityKey>> {
    model.expect_stage(Stage::Entity)?;
    if candidates.is_empty() {
        return Err(Error::invalid(
            "candidates",
            "entity ranking needs at least one candidate",
        ));
    }
    let keys: Vec<&EntityKey> = candidates.iter().collect();
    let scores = keys
        .par_iter()
        .map(|&key| (key.clone(), model.score(&entity_input(context, key, kb))))
        .collect();
    RankedList::from_scores(scores)
}

/// Top-`k` snippets of one entity.
pub fn rank_snippets<S: Scalar>(
    model: &RankerModel<S>,
    context: &Dialog,
    entity: &EntityKey,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<RankedList<SnippetRef>> {
    model.expect_stage(Stage::Knowledge)?;
    let refs: Vec<SnippetRef> = kb.snippets_of(entity).map(|s| s.reference.clone()).collect();
    if refs.is_empty() {
        return Err(Error::InvalidData(format!(
            "selected entity {entity} has no knowledge snippets"
        )));
    }
    score_snippets(model, context, refs, kb).map(|l| l.truncate(k))
}

/// Top-`k` snippets of the whole knowledge base, scored like [`rank_snippets`].
pub fn rank_all_snippets<S: Scalar>(
    model: &RankerModel<S>,
    context: &Dialog,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<RankedList<SnippetRef>> {
    model.expect_stage(Stage::Knowledge)?;
    let refs = kb.snippets().map(|s| s.reference.clone()).collect();
    score_snippets(model, context, refs, kb).map(|l| l.truncate(k))
}

fn score_snippets<S: Scalar>(
    model: &RankerModel<S>,
    context: &Dialog,
    refs: Vec<SnippetRef>,
    kb: &KnowledgeBase,
) -> Result<RankedList<SnippetRef>> {
    let scores = refs
        .into_par_iter()
        .map(|r| {
            let s = model.score(&snippet_input(
                context,
                kb.snippet(&r).expect("snippet from the knowledge base"),
            ));
            (r, s)
        })
        .collect();
    RankedList::from_scores(scores)
}

/// How member rankings are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanScore,
    /// Each member awards `n - 1 - rank` points.
    Borda,
}

/// Combines full rankings of the same key set.
pub fn ensemble_rank<K: Ord + Clone>(lists: &[RankedList<K>], agg: Aggregation) -> Result<RankedList<K>> {
    let Some(first) = lists.first() else {
        return Err(Error::invalid("models", "ensemble needs at least one member"));
    };
    let mut totals: BTreeMap<K, f64> = first.items.iter().map(|(k, _)| (k.clone(), 0.0)).collect();
    for list in lists {
        if list.len() != totals.len() {
            return Err(Error::invalid("models", "members ranked different candidate sets"));
        }
        let n = list.len();
        for (rank, (key, score)) in list.items.iter().enumerate() {
            let Some(t) = totals.get_mut(key) else {
                return Err(Error::invalid("models", "members ranked different candidate sets"));
            };
            *t += match agg {
                Aggregation::MeanScore => *score,
                Aggregation::Borda => (n - 1 - rank) as f64,
            };
        }
    }
    let m = lists.len() as f64;
    RankedList::from_scores(
        totals
            .into_iter()
            .map(|(k, t)| (k, if agg == Aggregation::MeanScore { t / m } else { t }))
            .collect(),
    )
}

/// Rankers of one stage whose scores are aggregated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RankerEnsemble<S> {
    members: Vec<RankerModel<S>>,
    pub aggregation: Aggregation,
}

impl<S: Scalar> RankerEnsemble<S> {
    pub fn new(members: Vec<RankerModel<S>>, aggregation: Aggregation) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::invalid("models", "ensemble needs at least one member"));
        };
        if members.iter().any(|m| m.stage != first.stage) {
            return Err(Error::invalid("models", "ensemble members belong to different stages"));
        }
        Ok(RankerEnsemble { members, aggregation })
    }

    pub fn members(&self) -> &[RankerModel<S>] {
        &self.members
    }

    pub fn stage(&self) -> Stage {
        self.members[0].stage
    }

    pub fn rank_entities(
        &self,
        context: &Dialog,
        candidates: &CandidateSet,
        kb: &KnowledgeBase,
    ) -> Result<RankedList<EntityKey>> {
        let lists = self
            .members
            .iter()
            .map(|m| rank_entities(m, context, candidates, kb))
            .collect::<Result<Vec<_>>>()?;
        ensemble_rank(&lists, self.aggregation)
    }

    pub fn rank_snippets(
        &self,
        context: &Dialog,
        entity: &EntityKey,
        kb: &KnowledgeBase,
        k: usize,
    ) -> Result<RankedList<SnippetRef>> {
        let lists = self
            .members
            .iter()
            .map(|m| rank_snippets(m, context, entity, kb, usize::MAX))
            .collect::<Result<Vec<_>>>()?;
        ensemble_rank(&lists, self.aggregation).map(|l| l.truncate(k))
    }

    pub fn rank_all_snippets(&self, context: &Dialog, kb: &KnowledgeBase, k: usize) -> Result<RankedList<SnippetRef>> {
        let lists = self
            .members
            .iter()
            .map(|m| rank_all_snippets(m, context, kb, usize::MAX))
            .collect::<Result<Vec<_>>>()?;
        ensemble_rank(&lists, self.aggregation).map(|l| l.truncate(k))
    }
}

/// Output of two-stage selection for one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub entities: RankedList<EntityKey>,
    pub snippets: RankedList<SnippetRef>,
}

/// Ranks candidates that own at least one snippet, then the snippets of the winner.
pub fn two_stage_select<S: Scalar>(
    entity_ranker: &RankerEnsemble<S>,
    knowledge_ranker: &RankerEnsemble<S>,
    context: &Dialog,
    candidates: &CandidateSet,
    kb: &KnowledgeBase,
    k: usize,
) -> Result<Selection> {
    let with_snippets = CandidateSet {
        entities: candidates
            .iter()
            .filter(|e| kb.snippets_of(e).next().is_some())
            .cloned()
            .collect(),
    };
    let entities = entity_ranker.rank_entities(context, &with_snippets, kb)?;
    let top = entities.first().expect("non-empty ranking").clone();
    let snippets = knowledge_ranker.rank_snippets(context, &top, kb, k)?;
    Ok(Selection { entities, snippets })
}

/// Uniform draw from `candidates \ {gold}`; `None` when nothing else is left.
pub fn sample_negative_entity(gold: &EntityKey, candidates: &CandidateSet, rng: &mut impl Rng) -> Option<EntityKey> {
    let others: Vec<&EntityKey> = candidates.iter().filter(|k| *k != gold).collect();
    if others.is_empty() {
        None
    } else {
        Some(others[rng.gen_range(0..others.len())].clone())
    }
}

/// For each requested snippet, the [`NEGATIVE_POOL`] other snippets with the
/// highest TF-IDF cosine to its question and answer (ties by key order).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativePools {
    pools: BTreeMap<SnippetRef, Vec<SnippetRef>>,
}

impl NegativePools {
    pub fn build<'a>(kb: &KnowledgeBase, golds: impl IntoIterator<Item = &'a SnippetRef>) -> Result<Self> {
        if kb.len() < 2 {
            return Err(Error::InvalidData(
                "knowledge negatives need at least two snippets".into(),
            ));
        }
        let texts: Vec<(SnippetRef, TokenSeq)> =
            kb.snippets().map(|s| (s.reference.clone(), snippet_text(s))).collect();
        let docs: Vec<TokenSeq> = texts.iter().map(|(_, t)| t.clone()).collect();
        let table = build_df_table(&docs, &[1])?;
        let vectors: Vec<_> = texts.iter().map(|(_, t)| tfidf_vector(t, &table)).collect();
        let index: BTreeMap<&SnippetRef, usize> = texts.iter().enumerate().map(|(i, (r, _))| (r, i)).collect();
        let golds: BTreeSet<&SnippetRef> = golds.into_iter().collect();
        let pools = golds
            .into_par_iter()
            .map(|gold| {
                let Some(&gi) = index.get(gold) else {
                    return Err(Error::InvalidData(format!("unknown gold snippet {gold}")));
                };
                let scored: Vec<(SnippetRef, f64)> = texts
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != gi)
                    .map(|(i, (r, _))| (r.clone(), vectors[gi].cosine(&vectors[i])))
                    .collect();
                let pool = RankedList::from_scores(scored)?.truncate(NEGATIVE_POOL).keys();
                Ok((gold.clone(), pool))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(NegativePools { pools })
    }

    pub fn pool(&self, gold: &SnippetRef) -> Option<&[SnippetRef]> {
        self.pools.get(gold).map(Vec::as_slice)
    }
}

/// Uniform draw from the negative pool of `gold`.
pub fn sample_negative_knowledge(gold: &SnippetRef, pools: &NegativePools, rng: &mut impl Rng) -> Option<SnippetRef> {
    let pool = pools.pool(gold)?;
    if pool.is_empty() {
        None
    } else {
        Some(pool[rng.gen_range(0..pool.len())].clone())
    }
}

/// Where entity-stage negatives and validation candidates come from.
#[derive(Clone, Copy, Debug)]
pub enum Candidates<'a> {
    Filtered(&'a EntityPatterns),
    All,
}

impl Candidates<'_> {
    pub fn for_context(&self, context: &Dialog, kb: &KnowledgeBase) -> CandidateSet {
        match self {
            Candidates::Filtered(p) => match_entities(context, p),
            Candidates::All => CandidateSet::all(kb),
        }
    }
}

fn ranker_vocab(split: &Split, kb: &KnowledgeBase) -> Vocab {
    let mut seqs: Vec<TokenSeq> = split.dialogs.iter().map(context_tokens).collect();
    for s in kb.snippets() {
        seqs.push(snippet_text(s));
    }
    for (key, name) in kb.entities() {
        seqs.push(crate::textproc::tokenize(&key.domain));
        if let Some(n) = name {
            seqs.push(crate::textproc::tokenize(n));
        }
    }
    Vocab::build(&seqs, 1)
}

/// Mean R@1 of a stage over the knowledge-seeking turns of `split`.
pub fn stage_recall_at_1<S: Scalar>(
    model: &RankerModel<S>,
    split: &Split,
    kb: &KnowledgeBase,
    candidates: Candidates<'_>,
) -> f64 {
    let turns: Vec<_> = split.knowledge_turns().collect();
    if turns.is_empty() {
        return 0.0;
    }
    let hits: f64 = turns
        .iter()
        .map(|&(dialog, _, gold)| match model.stage {
            Stage::Entity => {
                let cands = candidates.for_context(dialog, kb);
                if cands.is_empty() {
                    return 0.0;
                }
                rank_entities(model, dialog, &cands, kb)
                    .map(|l| recall_at_k(&l.keys(), &gold.entity(), 1))
                    .unwrap_or(0.0)
            }
            Stage::Knowledge => rank_snippets(model, dialog, &gold.entity(), kb, 1)
                .map(|l| recall_at_k(&l.keys(), gold, 1))
                .unwrap_or(0.0),
        })
        .sum();
    hits / turns.len() as f64
}

/// Trains a point-wise ranker with one sampled negative per positive,
/// keeping the epoch with the best validation R@1.
pub fn train_ranker<S: Scalar>(
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
    stage: Stage,
    candidates: Candidates<'_>,
    cfg: &TrainConfig,
    focal: &FocalConfig,
) -> Result<(RankerModel<S>, TrainReport)> {
    cfg.validate()?;
    let turns: Vec<_> = train.knowledge_turns().collect();
    if turns.is_empty() {
        return Err(Error::InvalidData(
            "no knowledge-seeking turns to train a ranker on".into(),
        ));
    }
    for &(_, _, gold) in &turns {
        if kb.snippet(gold).is_none() {
            return Err(Error::InvalidData(format!(
                "gold snippet {gold} is not in the knowledge base"
            )));
        }
    }
    let vocab = ranker_vocab(train, kb);
    let ids = |seq: TokenSeq| vocab.ids(&seq);

    // Inputs that do not depend on the sampled negative are fixed up front.
    let positives: Vec<Vec<usize>> = turns
        .iter()
        .map(|&(d, _, gold)| match stage {
            Stage::Entity => ids(entity_input(d, &gold.entity(), kb)),
            Stage::Knowledge => ids(snippet_input(
                d,
                kb.snippet(gold).expect("snippet from the knowledge base"),
            )),
        })
        .collect();
    let entity_pools: Vec<CandidateSet> = match stage {
        Stage::Entity => turns.iter().map(|&(d, _, _)| candidates.for_context(d, kb)).collect(),
        Stage::Knowledge => Vec::new(),
    };
    let pools = match stage {
        Stage::Knowledge => NegativePools::build(kb, turns.iter().map(|t| t.2))?,
        Stage::Entity => NegativePools::default(),
    };

    let epoch_data = |_: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(2 * turns.len());
        for (i, &(d, _, gold)) in turns.iter().enumerate() {
            let negative = match stage {
                Stage::Entity => {
                    sample_negative_entity(&gold.entity(), &entity_pools[i], rng).map(|e| ids(entity_input(d, &e, kb)))
                }
                Stage::Knowledge => sample_negative_knowledge(gold, &pools, rng).map(|r| {
                    ids(snippet_input(
                        d,
                        kb.snippet(&r).expect("snippet from the knowledge base"),
                    ))
                }),
            };
            if let Some(neg) = negative {
                out.push(BinaryExample {
                    ids: positives[i].clone(),
                    label: true,
                });
                out.push(BinaryExample { ids: neg, label: false });
            }
        }
        out
    };

    let mut classifier = TextClassifier::init(vocab.clone(), cfg.dim, &mut init_rng(cfg.seed))?;
    let mut probe = RankerModel::new(classifier.clone(), stage);
    let report = train_binary(&mut classifier.weights, cfg, focal, epoch_data, |w| {
        probe.classifier.weights = w.clone();
        stage_recall_at_1(&probe, valid, kb, candidates)
    })?;
    Ok((RankerModel::new(classifier, stage), report))
}

/// Trains `size` rankers on consecutive seeds.
#[allow(clippy::too_many_arguments)]
pub fn train_ranker_ensemble<S: Scalar>(
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
    stage: Stage,
    candidates: Candidates<'_>,
    cfg: &TrainConfig,
    focal: &FocalConfig,
    size: usize,
) -> Result<(RankerEnsemble<S>, Vec<TrainReport>)> {
    if size == 0 {
        return Err(Error::invalid("ensemble-size", "must be at least 1"));
    }
    let mut members = Vec::with_capacity(size);
    let mut reports = Vec::with_capacity(size);
    for i in 0..size {
        let member_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let (m, r) = train_ranker(train, valid, kb, stage, candidates, &member_cfg, focal)?;
        members.push(m);
        reports.push(r);
    }
    Ok((RankerEnsemble::new(members, Aggregation::MeanScore)?, reports))
}

/// Precomputed snippet embeddings under one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex<S> {
    encoder: EncoderParams<S>,
    entries: Vec<(SnippetRef, Vec<S>)>,
}

impl<S: Scalar> EmbeddingIndex<S> {
    pub fn encoder(&self) -> &EncoderParams<S> {
        &self.encoder
    }

    pub fn entries(&self) -> &[(SnippetRef, Vec<S>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Encodes question ⊕ answer of every snippet.
pub fn build_embedding_index<S: Scalar>(kb: &KnowledgeBase, encoder: &EncoderParams<S>) -> EmbeddingIndex<S> {
    let snippets: Vec<_> = kb.snippets().collect();
    let entries = snippets
        .par_iter()
        .map(|s| (s.reference.clone(), encoder.encode_tokens(&snippet_text(s))))
        .collect();
    EmbeddingIndex {
        encoder: encoder.clone(),
        entries,
    }
}

/// Every indexed snippet by cosine to the context embedding.
pub fn rank_by_embedding<S: Scalar>(index: &EmbeddingIndex<S>, context: &Dialog) -> Result<RankedList<SnippetRef>> {
    if index.is_empty() {
        return Err(Error::invalid("index", "embedding index is empty"));
    }
    let query = index.encoder.encode_tokens(&context_tokens(context));
    let scores = index
        .entries
        .par_iter()
        .map(|(r, e)| (r.clone(), cosine(&query, e).as_f64()))
        .collect();
    RankedList::from_scores(scores)
}

/// Triplet training diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MiningLog {
    /// `cos(a, p) - cos(a, n)` of every mined negative, at mining time.
    pub gaps: Vec<f64>,
    /// Anchors without a negative inside the band.
    pub skipped: usize,
}

/// One anchor/positive pair as token ids.
#[derive(Clone, Debug)]
struct Pair {
    anchor: Vec<usize>,
    positive: Vec<usize>,
    gold: SnippetRef,
}

fn embedding_recall_at_1<S: Scalar>(encoder: &EncoderParams<S>, split: &Split, kb: &KnowledgeBase) -> f64 {
    let turns: Vec<_> = split.knowledge_turns().collect();
    if turns.is_empty() || kb.is_empty() {
        return 0.0;
    }
    let index = build_embedding_index(kb, encoder);
    let hits: f64 = turns
        .iter()
        .map(|&(d, _, gold)| {
            rank_by_embedding(&index, d)
                .map(|l| recall_at_k(&l.keys(), gold, 1))
                .unwrap_or(0.0)
        })
        .sum();
    hits / turns.len() as f64
}

/// Trains the encoder with the cosine triplet loss; each anchor's negative is
/// mined among the positives of the other pairs in its batch.
pub fn train_embedding_encoder<S: Scalar>(
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
    cfg: &TrainConfig,
    triplet: &TripletConfig,
) -> Result<(EncoderParams<S>, TrainReport, MiningLog)> {
    cfg.validate()?;
    triplet.validate()?;
    let vocab = ranker_vocab(train, kb);
    let mut pairs = Vec::new();
    for (d, _, gold) in train.knowledge_turns() {
        let Some(s) = kb.snippet(gold) else {
            return Err(Error::InvalidData(format!(
                "gold snippet {gold} is not in the knowledge base"
            )));
        };
        pairs.push(Pair {
            anchor: vocab.ids(&context_tokens(d)),
            positive: vocab.ids(&snippet_text(s)),
            gold: gold.clone(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::InvalidData(
            "no knowledge-seeking turns to train embeddings on".into(),
        ));
    }
    let mut weights = EncoderWeights::init(vocab.len(), cfg.dim, &mut init_rng(cfg.seed))?;
    let alpha = S::lit(triplet.alpha);
    let mut log = MiningLog::default();
    let mut probe = EncoderParams {
        vocab: vocab.clone(),
        weights: weights.clone(),
    };
    let report = fit(
        &mut weights,
        cfg,
        |_, _| pairs.clone(),
        |w: &EncoderWeights<S>, batch: &[Pair], grads: &mut EncoderWeights<S>| {
            let anchors: Vec<_> = batch.iter().map(|p| w.forward(&p.anchor)).collect();
            let positives: Vec<_> = batch.iter().map(|p| w.forward(&p.positive)).collect();
            let mut loss = S::zero();
            let mut used = 0usize;
            let mut parts = Vec::new();
            for (i, pair) in batch.iter().enumerate() {
                let a = &anchors[i].output;
                let sim_p = cosine(a, &positives[i].output);
                let others: Vec<usize> = (0..batch.len()).filter(|&j| batch[j].gold != pair.gold).collect();
                let gaps: Vec<S> = others
                    .iter()
                    .map(|&j| sim_p - cosine(a, &positives[j].output))
                    .collect();
                let Some(pick) = select_semi_hard(&gaps, triplet) else {
                    log.skipped += 1;
                    continue;
                };
                let j = others[pick];
                log.gaps.push(gaps[pick].as_f64());
                let (l, g) = triplet_cosine_loss_with_grad(a, &positives[i].output, &positives[j].output, alpha)?;
                loss += l;
                used += 1;
                parts.push((i, j, g));
            }
            if used == 0 {
                return Ok(None);
            }
            let inv = S::one() / S::lit(used as f64);
            for (i, j, g) in parts {
                let scale = |v: Vec<S>| v.into_iter().map(|x| x * inv).collect::<Vec<_>>();
                w.backward(&batch[i].anchor, &anchors[i], &scale(g.anchor), grads);
                w.backward(&batch[i].positive, &positives[i], &scale(g.positive), grads);
                w.backward(&batch[j].positive, &positives[j], &scale(g.negative), grads);
            }
            Ok(Some(loss * inv))
        },
        |w| {
            probe.weights = w.clone();
            embedding_recall_at_1(&probe, valid, kb)
        },
    )?;
    Ok((EncoderParams { vocab, weights }, report, log))
}
