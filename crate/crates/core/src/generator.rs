//! Attention encoder-decoder with a pointer-generator output layer.
//!
//! Encoder states are token plus position embeddings. The decoder is a single
//! tanh recurrence with dot-product attention; the output distribution mixes
//! a vocabulary softmax with the attention weights over source positions.
//! Source tokens outside the vocabulary get temporary ids `V, V + 1, …` in
//! order of first occurrence, so they can be copied.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, KnowledgeBase, Snippet, SnippetRef, Split};
use crate::error::{Error, Result};
use crate::features::generation_source;
use crate::neural::{fit, init_rng, Tensor, TrainConfig, TrainReport, Trainable, Vocab, BOS, EOS, UNK};
use crate::scalar::{dot, sigmoid, softmax, Scalar};
use crate::textproc::{tokenize, TokenSeq};

/// Probabilities are clamped to this floor before taking logs.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Source tokens kept from the end of the input.
    pub max_source_len: usize,
    /// Decoding length limit.
    pub max_len: usize,
    /// Vocabulary threshold; rarer tokens can only be produced by copying.
    pub min_count: usize,
    /// `false` fixes `p_gen = 1`, removing the copy path.
    pub use_pointer: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_source_len: 200,
            max_len: 64,
            min_count: 2,
            use_pointer: true,
        }
    }
}

/// Trainable tensors of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Seq2SeqWeights<S> {
    /// `[V×d]`, shared by encoder and decoder.
    pub embedding: Tensor<S>,
    /// `[L×d]` source position embeddings.
    pub position: Tensor<S>,
    /// `[d×2d]` recurrence over `[s; E[y]]`.
    pub w_s: Tensor<S>,
    /// `[V×2d]` vocabulary projection over `[s; c]`.
    pub w_v: Tensor<S>,
    pub b_v: Tensor<S>,
    /// `[2d]` over `[c; s]`.
    pub w_ptr: Tensor<S>,
    /// `[1]`.
    pub b_ptr: Tensor<S>,
}

impl<S: Scalar> Trainable<S> for Seq2SeqWeights<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![
            &self.embedding,
            &self.position,
            &self.w_s,
            &self.w_v,
            &self.b_v,
            &self.w_ptr,
            &self.b_ptr,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![
            &mut self.embedding,
            &mut self.position,
            &mut self.w_s,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_ptr,
            &mut self.b_ptr,
        ]
    }
}

fn uniform<S: Scalar>(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<S> {
    Tensor::from_fn(shape, || S::lit(rng.gen_range(-scale..scale)))
}

impl<S: Scalar> Seq2SeqWeights<S> {
    pub fn init(vocab_size: usize, dim: usize, max_source_len: usize, rng: &mut impl Rng) -> Result<Self> {
        if vocab_size < 5 || dim == 0 || max_source_len == 0 {
            return Err(Error::invalid(
                "generator",
                "needs V >= 5, d >= 1 and a positive source length",
            ));
        }
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Seq2SeqWeights {
            embedding: uniform(rng, &[vocab_size, dim], 0.5),
            position: uniform(rng, &[max_source_len, dim], 0.1),
            w_s: uniform(rng, &[dim, 2 * dim], xavier(2 * dim, dim)),
            w_v: uniform(rng, &[vocab_size, 2 * dim], xavier(2 * dim, vocab_size)),
            b_v: Tensor::zeros(&[vocab_size]),
            w_ptr: uniform(rng, &[2 * dim], xavier(2 * dim, 1)),
            b_ptr: Tensor::zeros(&[1]),
        })
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn max_source_len(&self) -> usize {
        self.position.rows()
    }
}

/// Vocabulary, weights and the flags the model was trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Seq2SeqParams<S> {
    pub vocab: Vocab,
    pub weights: Seq2SeqWeights<S>,
    pub config: GeneratorConfig,
}

/// A tokenized source with its extended-vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenInput {
    pub tokens: Vec<String>,
    /// Vocabulary ids, `UNK` for out-of-vocabulary tokens.
    pub ids: Vec<usize>,
    /// Vocabulary ids, or `V + k` for the `k`-th distinct OOV token.
    pub ext_ids: Vec<usize>,
    /// Distinct OOV tokens in order of first occurrence.
    pub oovs: Vec<String>,
    vocab_size: usize,
}

impl GenInput {
    /// Keeps the last `max_len` tokens of `source`.
    pub fn new(source: &TokenSeq, vocab: &Vocab, max_len: usize) -> Self {
        let start = source.len().saturating_sub(max_len);
        let tokens: Vec<String> = source.0[start..].to_vec();
        let v = vocab.len();
        let mut oovs: Vec<String> = Vec::new();
        let mut ids = Vec::with_capacity(tokens.len());
        let mut ext_ids = Vec::with_capacity(tokens.len());
        for tok in &tokens {
            match vocab.get(tok) {
                Some(id) => {
                    ids.push(id);
                    ext_ids.push(id);
                }
                None => {
                    let k = oovs.iter().position(|o| o == tok).unwrap_or_else(|| {
                        oovs.push(tok.clone());
                        oovs.len() - 1
                    });
                    ids.push(UNK);
                    ext_ids.push(v + k);
                }
            }
        }
        GenInput {
            tokens,
            ids,
            ext_ids,
            oovs,
            vocab_size: v,
        }
    }

    pub fn extended_size(&self) -> usize {
        self.vocab_size + self.oovs.len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Extended id of `token`: vocabulary id, source OOV id, or `UNK`.
    pub fn target_id(&self, vocab: &Vocab, token: &str) -> usize {
        if let Some(id) = vocab.get(token) {
            return id;
        }
        self.oovs
            .iter()
            .position(|o| o == token)
            .map_or(UNK, |k| self.vocab_size + k)
    }

    /// Surface form of an extended id.
    pub fn render<'a>(&'a self, vocab: &'a Vocab, id: usize) -> &'a str {
        if id < self.vocab_size {
            vocab.token(id)
        } else {
            &self.oovs[id - self.vocab_size]
        }
    }
}

/// Source for one turn: last two turns, snippet, domain and entity name.
pub fn build_gen_input(dialog: &Dialog, snippet: &Snippet, vocab: &Vocab, max_source_len: usize) -> GenInput {
    GenInput::new(&generation_source(dialog, snippet), vocab, max_source_len)
}

/// Like [`build_gen_input`], resolving the snippet in `kb`.
pub fn build_gen_input_from(
    dialog: &Dialog,
    reference: &SnippetRef,
    kb: &KnowledgeBase,
    vocab: &Vocab,
    max_source_len: usize,
) -> Result<GenInput> {
    let snippet = kb
        .snippet(reference)
        .ok_or_else(|| Error::InvalidData(format!("snippet {reference} is not in the knowledge base")))?;
    Ok(build_gen_input(dialog, snippet, vocab, max_source_len))
}

/// A probability distribution over the extended vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDistribution<S> {
    pub probs: Vec<S>,
}

impl<S: Scalar> MixtureDistribution<S> {
    /// Highest-probability id, lowest id on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn total(&self) -> S {
        self.probs.iter().copied().sum()
    }
}

/// `p_gen · P_vocab(w) + (1 - p_gen) · Σ_{i: ext_i = w} a_i` over `extended_size` ids.
pub fn mixture<S: Scalar>(
    p_vocab: &[S],
    attention: &[S],
    ext_ids: &[usize],
    p_gen: S,
    extended_size: usize,
) -> MixtureDistribution<S> {
    let mut probs = vec![S::zero(); extended_size];
    for (p, &v) in probs.iter_mut().zip(p_vocab) {
        *p = p_gen * v;
    }
    let copy = S::one() - p_gen;
    if copy != S::zero() {
        for (&a, &id) in attention.iter().zip(ext_ids) {
            probs[id] += copy * a;
        }
    }
    MixtureDistribution { probs }
}

/// Encoder states `h_i = E[x_i] + P[i]`.
pub fn encode_source<S: Scalar>(weights: &Seq2SeqWeights<S>, input: &GenInput) -> Vec<Vec<S>> {
    let last = weights.max_source_len() - 1;
    input
        .ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            weights
                .embedding
                .row(id)
                .iter()
                .zip(weights.position.row(i.min(last)))
                .map(|(&e, &p)| e + p)
                .collect()
        })
        .collect()
}

/// Mean of the encoder states; zero for an empty source.
fn initial_state<S: Scalar>(h: &[Vec<S>], dim: usize) -> Vec<S> {
    let mut s = vec![S::zero(); dim];
    if h.is_empty() {
        return s;
    }
    for hi in h {
        for (a, &b) in s.iter_mut().zip(hi) {
            *a += b;
        }
    }
    let inv = S::one() / S::lit(h.len() as f64);
    s.iter_mut().for_each(|a| *a *= inv);
    s
}

/// Everything one decoder step computes.
#[derive(Clone, Debug)]
pub struct StepOutput<S> {
    pub state: Vec<S>,
    pub attention: Vec<S>,
    pub context: Vec<S>,
    pub p_vocab: Vec<S>,
    pub p_gen: S,
    pub dist: MixtureDistribution<S>,
}

/// One decoder step from state `s_prev` after emitting `prev` (an extended id).
pub fn decode_step<S: Scalar>(
    params: &Seq2SeqParams<S>,
    s_prev: &[S],
    prev: usize,
    h: &[Vec<S>],
    input: &GenInput,
) -> StepOutput<S> {
    step_with(&params.weights, &params.config, s_prev, prev, h, input)
}

fn step_with<S: Scalar>(
    w: &Seq2SeqWeights<S>,
    config: &GeneratorConfig,
    s_prev: &[S],
    prev: usize,
    h: &[Vec<S>],
    input: &GenInput,
) -> StepOutput<S> {
    let d = w.dim();
    let prev_in = if prev < w.vocab_size() { prev } else { UNK };
    let mut x = Vec::with_capacity(2 * d);
    x.extend_from_slice(s_prev);
    x.extend_from_slice(w.embedding.row(prev_in));
    let state: Vec<S> = w.w_s.matvec(&x).into_iter().map(S::tanh).collect();

    let (attention, context) = if h.is_empty() {
        (Vec::new(), vec![S::zero(); d])
    } else {
        let scores: Vec<S> = h.iter().map(|hi| dot(&state, hi)).collect();
        let a = softmax(&scores);
        let mut c = vec![S::zero(); d];
        for (ai, hi) in a.iter().zip(h) {
            for (cj, &hj) in c.iter_mut().zip(hi) {
                *cj += *ai * hj;
            }
        }
        (a, c)
    };

    let sc: Vec<S> = state.iter().chain(&context).copied().collect();
    let logits: Vec<S> = w
        .w_v
        .matvec(&sc)
        .into_iter()
        .zip(w.b_v.values())
        .map(|(z, &b)| z + b)
        .collect();
    let p_vocab = softmax(&logits);
    let p_gen = if config.use_pointer && !h.is_empty() {
        let cs: Vec<S> = context.iter().chain(&state).copied().collect();
        sigmoid(dot(w.w_ptr.values(), &cs) + w.b_ptr.values()[0])
    } else {
        S::one()
    };
    let dist = mixture(&p_vocab, &attention, &input.ext_ids, p_gen, input.extended_size());
    StepOutput {
        state,
        attention,
        context,
        p_vocab,
        p_gen,
        dist,
    }
}

/// Teacher-forcing targets: response tokens then `EOS`, as extended ids.
pub fn target_ids(response: &str, input: &GenInput, vocab: &Vocab) -> Vec<usize> {
    let mut ids: Vec<usize> = tokenize(response).iter().map(|t| input.target_id(vocab, t)).collect();
    ids.push(EOS);
    ids
}

/// Summed NLL over supervised targets and the number of supervised targets.
/// `UNK` targets are fed to the decoder but not supervised. When `grads` is
/// given, the gradient of the summed NLL times `scale` is accumulated into it.
pub fn sequence_nll<S: Scalar>(
    params: &Seq2SeqParams<S>,
    input: &GenInput,
    targets: &[usize],
    grads: Option<(&mut Seq2SeqWeights<S>, S)>,
) -> (S, usize) {
    nll_with(&params.weights, &params.config, input, targets, grads)
}

fn nll_with<S: Scalar>(
    w: &Seq2SeqWeights<S>,
    config: &GeneratorConfig,
    input: &GenInput,
    targets: &[usize],
    mut grads: Option<(&mut Seq2SeqWeights<S>, S)>,
) -> (S, usize) {
    let d = w.dim();
    let v = w.vocab_size();
    let h = encode_source(w, input);
    let s0 = initial_state(&h, d);

    let mut steps = Vec::with_capacity(targets.len());
    let mut prev = BOS;
    let mut s_prev = s0.clone();
    for &y in targets {
        let out = step_with(w, config, &s_prev, prev, &h, input);
        s_prev = out.state.clone();
        steps.push(out);
        prev = y;
    }

    let floor = S::lit(LOG_FLOOR);
    let mut loss = S::zero();
    let mut count = 0;
    for (out, &y) in steps.iter().zip(targets) {
        if y != UNK {
            loss -= out.dist.probs[y].max(floor).ln();
            count += 1;
        }
    }
    let Some((g, scale)) = grads.as_mut() else {
        return (loss, count);
    };
    let scale = *scale;

    let mut dh: Vec<Vec<S>> = vec![vec![S::zero(); d]; h.len()];
    let mut ds_next = vec![S::zero(); d];
    for t in (0..steps.len()).rev() {
        let out = &steps[t];
        let y = targets[t];
        let s_prev: &[S] = if t == 0 { &s0 } else { &steps[t - 1].state };
        let prev_in = if t == 0 {
            BOS
        } else if targets[t - 1] < v {
            targets[t - 1]
        } else {
            UNK
        };

        let mut ds = std::mem::replace(&mut ds_next, vec![S::zero(); d]);
        let mut dc = vec![S::zero(); d];
        let mut da = vec![S::zero(); h.len()];

        let py = out.dist.probs[y];
        if y != UNK && py > floor {
            let delta = -scale / py;
            let pv_y = if y < v { out.p_vocab[y] } else { S::zero() };
            let copy_y: S = out
                .attention
                .iter()
                .zip(&input.ext_ids)
                .filter(|(_, &id)| id == y)
                .map(|(&a, _)| a)
                .sum();

            // Vocabulary softmax.
            if y < v {
                let dpv = delta * out.p_gen;
                let do_: Vec<S> = out
                    .p_vocab
                    .iter()
                    .enumerate()
                    .map(|(j, &pj)| {
                        let onehot = if j == y { S::one() } else { S::zero() };
                        dpv * pv_y * (onehot - pj)
                    })
                    .collect();
                let sc: Vec<S> = out.state.iter().chain(&out.context).copied().collect();
                g.w_v.add_outer(&do_, &sc, S::one());
                for (b, &x) in g.b_v.values_mut().iter_mut().zip(&do_) {
                    *b += x;
                }
                let dsc = w.w_v.matvec_t(&do_);
                for j in 0..d {
                    ds[j] += dsc[j];
                    dc[j] += dsc[d + j];
                }
            }

            // Copy path and generation gate.
            if config.use_pointer && !h.is_empty() {
                let copy = S::one() - out.p_gen;
                for (dai, &id) in da.iter_mut().zip(&input.ext_ids) {
                    if id == y {
                        *dai += delta * copy;
                    }
                }
                let dg = delta * (pv_y - copy_y) * out.p_gen * copy;
                let cs: Vec<S> = out.context.iter().chain(&out.state).copied().collect();
                for (wp, &x) in g.w_ptr.values_mut().iter_mut().zip(&cs) {
                    *wp += dg * x;
                }
                g.b_ptr.values_mut()[0] += dg;
                let wp = w.w_ptr.values();
                for j in 0..d {
                    dc[j] += dg * wp[j];
                    ds[j] += dg * wp[d + j];
                }
            }
        }

        // Context and attention.
        if !h.is_empty() {
            for (i, hi) in h.iter().enumerate() {
                let a = out.attention[i];
                for j in 0..d {
                    dh[i][j] += a * dc[j];
                }
                da[i] += dot(&dc, hi);
            }
            let mean_da: S = out.attention.iter().zip(&da).map(|(&a, &g)| a * g).sum();
            for (i, hi) in h.iter().enumerate() {
                let dscore = out.attention[i] * (da[i] - mean_da);
                if dscore == S::zero() {
                    continue;
                }
                for j in 0..d {
                    ds[j] += dscore * hi[j];
                    dh[i][j] += dscore * out.state[j];
                }
            }
        }

        // Recurrence.
        let du: Vec<S> = ds
            .iter()
            .zip(&out.state)
            .map(|(&g, &s)| g * (S::one() - s * s))
            .collect();
        let x: Vec<S> = s_prev.iter().chain(w.embedding.row(prev_in)).copied().collect();
        g.w_s.add_outer(&du, &x, S::one());
        let dx = w.w_s.matvec_t(&du);
        ds_next.copy_from_slice(&dx[..d]);
        for (e, &gx) in g.embedding.row_mut(prev_in).iter_mut().zip(&dx[d..]) {
            *e += gx;
        }
    }

    // s0 = mean(h)
    if !h.is_empty() {
        let inv = S::one() / S::lit(h.len() as f64);
        for dhi in dh.iter_mut() {
            for (a, &b) in dhi.iter_mut().zip(&ds_next) {
                *a += b * inv;
            }
        }
    }
    let last = w.max_source_len() - 1;
    for (i, (dhi, &id)) in dh.iter().zip(&input.ids).enumerate() {
        for (e, &x) in g.embedding.row_mut(id).iter_mut().zip(dhi) {
            *e += x;
        }
        for (p, &x) in g.position.row_mut(i.min(last)).iter_mut().zip(dhi) {
            *p += x;
        }
    }
    (loss, count)
}

/// Greedy decoding; stops at `EOS` or after `max_len` tokens. Special tokens
/// are not rendered.
pub fn greedy_decode<S: Scalar>(params: &Seq2SeqParams<S>, input: &GenInput, max_len: usize) -> String {
    let h = encode_source(&params.weights, input);
    let mut state = initial_state(&h, params.weights.dim());
    let mut prev = BOS;
    let mut out: Vec<&str> = Vec::new();
    for _ in 0..max_len {
        let step = decode_step(params, &state, prev, &h, input);
        let next = step.dist.argmax();
        if next == EOS {
            break;
        }
        if next >= Vocab::NUM_RESERVED {
            out.push(input.render(&params.vocab, next));
        }
        state = step.state;
        prev = next;
    }
    out.join(" ")
}

/// One supervised pair.
#[derive(Clone, Debug)]
pub struct GenExample {
    pub input: GenInput,
    pub targets: Vec<usize>,
}

impl GenExample {
    /// `None` when the response has no supervisable token besides `EOS`.
    pub fn new(input: GenInput, response: &str, vocab: &Vocab) -> Option<Self> {
        let targets = target_ids(response, &input, vocab);
        if targets[..targets.len() - 1].iter().all(|&t| t == UNK) {
            return None;
        }
        Some(GenExample { input, targets })
    }
}

fn source_and_response<'a>(split: &'a Split, kb: &'a KnowledgeBase) -> Result<Vec<(TokenSeq, &'a str)>> {
    split
        .knowledge_turns()
        .map(|(d, l, gold)| {
            let snippet = kb
                .snippet(gold)
                .ok_or_else(|| Error::InvalidData(format!("gold snippet {gold} is not in the knowledge base")))?;
            Ok((generation_source(d, snippet), l.response.as_deref().unwrap_or("")))
        })
        .collect()
}

/// Tokens occurring in at least `min_count` training pairs (source or response).
pub fn generator_vocab(pairs: &[(TokenSeq, &str)], min_count: usize) -> Vocab {
    let per_pair: Vec<TokenSeq> = pairs
        .iter()
        .map(|(src, resp)| {
            let distinct: std::collections::BTreeSet<String> = src.0.iter().cloned().chain(tokenize(resp).0).collect();
            TokenSeq(distinct.into_iter().collect())
        })
        .collect();
    Vocab::build(&per_pair, min_count)
}

/// Mean per-token NLL over `examples`.
pub fn mean_token_nll<S: Scalar>(params: &Seq2SeqParams<S>, examples: &[GenExample]) -> f64 {
    mean_nll_with(&params.weights, &params.config, examples)
}

fn mean_nll_with<S: Scalar>(w: &Seq2SeqWeights<S>, config: &GeneratorConfig, examples: &[GenExample]) -> f64 {
    let (loss, count) = examples
        .par_iter()
        .map(|ex| {
            let (l, c) = nll_with(w, config, &ex.input, &ex.targets, None);
            (l.as_f64(), c)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0usize), |(a, b), (l, c)| (a + l, b + c));
    if count == 0 {
        0.0
    } else {
        loss / count as f64
    }
}

/// Builds examples; pairs without a supervisable token are dropped.
pub fn generation_examples(
    split: &Split,
    kb: &KnowledgeBase,
    vocab: &Vocab,
    max_source_len: usize,
) -> Result<Vec<GenExample>> {
    Ok(source_and_response(split, kb)?
        .into_iter()
        .filter_map(|(src, resp)| GenExample::new(GenInput::new(&src, vocab, max_source_len), resp, vocab))
        .collect())
}

/// Teacher-forced NLL training; keeps the epoch with the lowest validation NLL.
pub fn train_generator<S: Scalar>(
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
    cfg: &TrainConfig,
    gen_cfg: &GeneratorConfig,
) -> Result<(Seq2SeqParams<S>, TrainReport)> {
    cfg.validate()?;
    if gen_cfg.max_source_len == 0 {
        return Err(Error::invalid("max-source-len", "must be positive"));
    }
    let pairs = source_and_response(train, kb)?;
    if pairs.is_empty() {
        return Err(Error::InvalidData(
            "no knowledge-seeking turns to train the generator on".into(),
        ));
    }
    let vocab = generator_vocab(&pairs, gen_cfg.min_count);
    let examples = generation_examples(train, kb, &vocab, gen_cfg.max_source_len)?;
    if examples.is_empty() {
        return Err(Error::InvalidData("no response has a supervisable token".into()));
    }
    let valid_examples = generation_examples(valid, kb, &vocab, gen_cfg.max_source_len)?;
    let weights = Seq2SeqWeights::init(vocab.len(), cfg.dim, gen_cfg.max_source_len, &mut init_rng(cfg.seed))?;
    let mut params = Seq2SeqParams {
        vocab,
        weights,
        config: gen_cfg.clone(),
    };
    let eval = if valid_examples.is_empty() {
        &examples
    } else {
        &valid_examples
    };
    let report = fit(
        &mut params.weights,
        cfg,
        |_, _| examples.clone(),
        |w: &Seq2SeqWeights<S>, batch: &[GenExample], grads: &mut Seq2SeqWeights<S>| {
            let tokens: usize = batch
                .iter()
                .map(|ex| ex.targets.iter().filter(|&&t| t != UNK).count())
                .sum();
            if tokens == 0 {
                return Ok(None);
            }
            let scale = S::one() / S::lit(tokens as f64);
            let mut loss = S::zero();
            for ex in batch {
                loss += nll_with(w, gen_cfg, &ex.input, &ex.targets, Some((&mut *grads, scale))).0;
            }
            Ok(Some(loss * scale))
        },
        |w| -mean_nll_with(w, gen_cfg, eval),
    )?;
    Ok((params, report))
}

/// Responses for several inputs, in order.
pub fn generate_all<S: Scalar>(params: &Seq2SeqParams<S>, inputs: &[GenInput], max_len: usize) -> Vec<String> {
    inputs.par_iter().map(|i| greedy_decode(params, i, max_len)).collect()
}

/// Token counts of source OOVs, for diagnostics.
pub fn oov_counts(inputs: &[GenInput]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for i in inputs {
        for o in &i.oovs {
            *counts.entry(o.clone()).or_insert(0) += 1;
        }
    }
    counts
}
