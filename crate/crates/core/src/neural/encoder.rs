//! Mean-pooling text encoder and the linear classifier head on top of it.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Tensor, Trainable};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::textproc::TokenSeq;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const EOS: usize = 3;
pub const BOS: usize = 4;

const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<sep>", "<eos>", "<bos>"];

/// Token ↔ id mapping. Ids below [`Vocab::NUM_RESERVED`] are special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(repr: VocabRepr) -> Self {
        Vocab::from_tokens(repr.tokens.into_iter().skip(RESERVED.len()))
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens }
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocab {
    pub const NUM_RESERVED: usize = RESERVED.len();

    /// Reserved tokens followed by `tokens` in the given order (duplicates dropped).
    pub fn from_tokens<T: Into<String>>(tokens: impl IntoIterator<Item = T>) -> Self {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
        {
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    /// Tokens occurring at least `min_count` times, sorted alphabetically.
    pub fn build<'a>(seqs: impl IntoIterator<Item = &'a TokenSeq>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in seqs {
            for tok in seq.iter() {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        Vocab::from_tokens(
            counts
                .into_iter()
                .filter(|&(_, c)| c >= min_count.max(1))
                .map(|(t, _)| t.to_string()),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn ids(&self, seq: &TokenSeq) -> Vec<usize> {
        seq.iter().map(|t| self.id(t)).collect()
    }
}

fn uniform<S: Scalar>(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<S> {
    Tensor::from_fn(shape, || S::lit(rng.gen_range(-scale..scale)))
}

/// Trainable encoder tensors: embedding `[V×d]`, projection `[d×d]`, bias `[d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EncoderWeights<S> {
    pub embedding: Tensor<S>,
    pub proj_w: Tensor<S>,
    pub proj_b: Tensor<S>,
}

impl<S: Scalar> Trainable<S> for EncoderWeights<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.embedding, &self.proj_w, &self.proj_b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.embedding, &mut self.proj_w, &mut self.proj_b]
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct EncodeCache<S> {
    pub mean: Vec<S>,
    pub output: Vec<S>,
}

impl<S: Scalar> EncoderWeights<S> {
    pub fn init(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if vocab_size < 4 || dim < 1 {
            return Err(Error::invalid(
                "encoder",
                "needs at least 4 vocabulary entries and d >= 1",
            ));
        }
        let xavier = (6.0 / (2 * dim) as f64).sqrt();
        Ok(EncoderWeights {
            embedding: uniform(rng, &[vocab_size, dim], 3f64.sqrt()),
            proj_w: uniform(rng, &[dim, dim], xavier),
            proj_b: Tensor::zeros(&[dim]),
        })
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        EncoderWeights {
            embedding: Tensor::zeros(&[vocab_size, dim]),
            proj_w: Tensor::zeros(&[dim, dim]),
            proj_b: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.proj_b.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    /// `tanh(W · mean(emb[ids]) + b)`; an empty input pools the PAD embedding.
    pub fn forward(&self, ids: &[usize]) -> EncodeCache<S> {
        let d = self.dim();
        let mean = if ids.is_empty() {
            self.embedding.row(PAD).to_vec()
        } else {
            let mut acc = vec![S::zero(); d];
            for &id in ids {
                for (a, &e) in acc.iter_mut().zip(self.embedding.row(id)) {
                    *a += e;
                }
            }
            let inv = S::one() / S::lit(ids.len() as f64);
            acc.iter_mut().for_each(|a| *a *= inv);
            acc
        };
        let mut z = self.proj_w.matvec(&mean);
        for (zi, &bi) in z.iter_mut().zip(self.proj_b.values()) {
            *zi += bi;
        }
        let output = z.into_iter().map(S::tanh).collect();
        EncodeCache { mean, output }
    }

    pub fn encode(&self, ids: &[usize]) -> Vec<S> {
        self.forward(ids).output
    }

    /// Accumulates into `grads` the gradient of a loss whose gradient with
    /// respect to the encoder output is `d_out`.
    pub fn backward(&self, ids: &[usize], cache: &EncodeCache<S>, d_out: &[S], grads: &mut Self) {
        let dz: Vec<S> = d_out
            .iter()
            .zip(&cache.output)
            .map(|(&g, &y)| g * (S::one() - y * y))
            .collect();
        grads.proj_w.add_outer(&dz, &cache.mean, S::one());
        for (b, &g) in grads.proj_b.values_mut().iter_mut().zip(&dz) {
            *b += g;
        }
        let d_mean = self.proj_w.matvec_t(&dz);
        if ids.is_empty() {
            for (e, &g) in grads.embedding.row_mut(PAD).iter_mut().zip(&d_mean) {
                *e += g;
            }
            return;
        }
        let inv = S::one() / S::lit(ids.len() as f64);
        for &id in ids {
            for (e, &g) in grads.embedding.row_mut(id).iter_mut().zip(&d_mean) {
                *e += g * inv;
            }
        }
    }
}

/// Vocabulary plus encoder weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EncoderParams<S> {
    pub vocab: Vocab,
    pub weights: EncoderWeights<S>,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn init(vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let weights = EncoderWeights::init(vocab.len(), dim, rng)?;
        Ok(EncoderParams { vocab, weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn encode_tokens(&self, tokens: &TokenSeq) -> Vec<S> {
        self.weights.encode(&self.vocab.ids(tokens))
    }
}

/// Linear scoring layer `σ(w · x + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ClassifierHead<S> {
    pub w: Tensor<S>,
    /// Shape `[1]`.
    pub b: Tensor<S>,
}

impl<S: Scalar> Trainable<S> for ClassifierHead<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.w, &mut self.b]
    }
}

impl<S: Scalar> ClassifierHead<S> {
    pub fn init(dim: usize, rng: &mut impl Rng) -> Self {
        ClassifierHead {
            w: uniform(rng, &[dim], (6.0 / (dim + 1) as f64).sqrt()),
            b: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        ClassifierHead {
            w: Tensor::zeros(&[dim]),
            b: Tensor::zeros(&[1]),
        }
    }

    pub fn bias(&self) -> S {
        self.b.values()[0]
    }

    pub fn logit(&self, x: &[S]) -> S {
        crate::scalar::dot(self.w.values(), x) + self.bias()
    }

    pub fn classify(&self, x: &[S]) -> S {
        sigmoid(self.logit(x))
    }
}

/// Encoder and head trained together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ClassifierWeights<S> {
    pub encoder: EncoderWeights<S>,
    pub head: ClassifierHead<S>,
}

impl<S: Scalar> Trainable<S> for ClassifierWeights<S> {
    fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

impl<S: Scalar> ClassifierWeights<S> {
    pub fn probability(&self, ids: &[usize]) -> S {
        self.head.classify(&self.encoder.encode(ids))
    }

    /// Focal loss of one example; accumulates its gradient into `grads`.
    pub fn loss_and_grad(&self, ids: &[usize], label: bool, gamma: S, grads: &mut Self) -> S {
        let cache = self.encoder.forward(ids);
        let logit = self.head.logit(&cache.output);
        let (loss, dz) = super::loss::binary_focal_from_logit(logit, label, gamma);
        for (g, &x) in grads.head.w.values_mut().iter_mut().zip(&cache.output) {
            *g += dz * x;
        }
        grads.head.b.values_mut()[0] += dz;
        let d_out: Vec<S> = self.head.w.values().iter().map(|&w| w * dz).collect();
        self.encoder.backward(ids, &cache, &d_out, &mut grads.encoder);
        loss
    }
}

/// A binary text classifier: vocabulary, encoder and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TextClassifier<S> {
    pub vocab: Vocab,
    pub weights: ClassifierWeights<S>,
}

impl<S: Scalar> TextClassifier<S> {
    pub fn init(vocab: Vocab, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderWeights::init(vocab.len(), dim, rng)?;
        let head = ClassifierHead::init(dim, rng);
        Ok(TextClassifier {
            vocab,
            weights: ClassifierWeights { encoder, head },
        })
    }

    /// All-zero weights; every input scores exactly 0.5.
    pub fn zeros(vocab: Vocab, dim: usize) -> Self {
        let weights = ClassifierWeights {
            encoder: EncoderWeights::zeros(vocab.len(), dim),
            head: ClassifierHead::zeros(dim),
        };
        TextClassifier { vocab, weights }
    }

    pub fn probability(&self, ids: &[usize]) -> S {
        self.weights.probability(ids)
    }
}
