//! Finite-difference checks of every hand-derived gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::generator::{sequence_nll, GenInput, GeneratorConfig, Seq2SeqParams, Seq2SeqWeights};
use crate::neural::{
    binary_focal_from_logit, focal_loss, focal_softmax_grad, grad_check, init_rng, triplet_cosine_loss_with_grad,
    ClassifierHead, ClassifierWeights, EncoderWeights, Trainable, Vocab, EOS,
};
use crate::scalar::{softmax, Scalar};
use crate::textproc::TokenSeq;

pub const TOLERANCE: f64 = 1e-4;
pub const EPSILON: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn result(name: &'static str, err: f64) -> CheckResult {
    CheckResult {
        name,
        max_relative_error: err,
        passed: err < TOLERANCE,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn focal_softmax(rng: &mut ChaCha8Rng) -> CheckResult {
    let logits = random_vec(rng, 4);
    let target = rng.gen_range(0..4);
    let err = grad_check(
        |z: &[f64]| {
            let p = softmax(z);
            (focal_loss(&p, target, 2.0), focal_softmax_grad(&p, target, 2.0))
        },
        &logits,
        EPSILON,
    );
    result("focal loss / logits", err)
}

fn focal_binary(rng: &mut ChaCha8Rng) -> CheckResult {
    let z = [rng.gen_range(-2.0..2.0)];
    let label = rng.gen_bool(0.5);
    let err = grad_check(
        |x: &[f64]| {
            let (l, g) = binary_focal_from_logit(x[0], label, 2.0);
            (l, vec![g])
        },
        &z,
        EPSILON,
    );
    result("binary focal loss / logit", err)
}

fn triplet(rng: &mut ChaCha8Rng) -> CheckResult {
    // Resample until the hinge is active and away from its kink.
    loop {
        let v = random_vec(rng, 12);
        let (a, rest) = v.split_at(4);
        let (p, n) = rest.split_at(4);
        let (loss, _) = triplet_cosine_loss_with_grad(a, p, n, 0.2).expect("non-zero vectors");
        if loss < 0.05 {
            continue;
        }
        let err = grad_check(
            |x: &[f64]| {
                let (l, g) = triplet_cosine_loss_with_grad(&x[..4], &x[4..8], &x[8..], 0.2).expect("non-zero");
                (l, [g.anchor, g.positive, g.negative].concat())
            },
            &v,
            EPSILON,
        );
        return result("cosine triplet loss / a, p, n", err);
    }
}

fn classifier(rng: &mut ChaCha8Rng, seed: u64) -> CheckResult {
    let mut init = init_rng(seed);
    let model = ClassifierWeights::<f64> {
        encoder: EncoderWeights::init(9, 4, &mut init).expect("valid shape"),
        head: ClassifierHead::init(4, &mut init),
    };
    let ids: Vec<usize> = (0..5).map(|_| rng.gen_range(0..9)).collect();
    let label = rng.gen_bool(0.5);
    let err = grad_check(
        |x: &[f64]| {
            let mut m = model.clone();
            m.assign_flat(x);
            let mut g = m.zeros_like();
            let l = m.loss_and_grad(&ids, label, 2.0, &mut g);
            (l, g.flatten())
        },
        &model.flatten(),
        EPSILON,
    );
    result("encoder + head / focal loss", err)
}

fn embedding_triplet(rng: &mut ChaCha8Rng, seed: u64) -> CheckResult {
    let enc = EncoderWeights::<f64>::init(10, 4, &mut init_rng(seed)).expect("valid shape");
    loop {
        let seqs: Vec<Vec<usize>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(0..10)).collect()).collect();
        let loss_at = |w: &EncoderWeights<f64>| {
            let [a, p, n] = [0, 1, 2].map(|i| w.encode(&seqs[i]));
            triplet_cosine_loss_with_grad(&a, &p, &n, 0.2)
                .map(|(l, _)| l)
                .unwrap_or(0.0)
        };
        if loss_at(&enc) < 0.05 {
            continue;
        }
        let err = grad_check(
            |x: &[f64]| {
                let mut w = enc.clone();
                w.assign_flat(x);
                let caches: Vec<_> = seqs.iter().map(|s| w.forward(s)).collect();
                let (l, g) =
                    triplet_cosine_loss_with_grad(&caches[0].output, &caches[1].output, &caches[2].output, 0.2)
                        .expect("non-zero");
                let mut grads = w.zeros_like();
                for (i, d) in [g.anchor, g.positive, g.negative].iter().enumerate() {
                    w.backward(&seqs[i], &caches[i], d, &mut grads);
                }
                (l, grads.flatten())
            },
            &enc.flatten(),
            EPSILON,
        );
        return result("encoder / cosine triplet loss", err);
    }
}

fn generator_params(seed: u64, use_pointer: bool) -> Seq2SeqParams<f64> {
    let vocab = Vocab::from_tokens(["a", "b", "c", "d"]);
    let weights = Seq2SeqWeights::init(vocab.len(), 3, 6, &mut init_rng(seed)).expect("valid shape");
    Seq2SeqParams {
        vocab,
        weights,
        config: GeneratorConfig {
            max_source_len: 6,
            use_pointer,
            ..GeneratorConfig::default()
        },
    }
}

fn generator_case(seed: u64, use_pointer: bool) -> (Seq2SeqParams<f64>, GenInput, Vec<usize>) {
    let params = generator_params(seed, use_pointer);
    let source = TokenSeq(["a", "x", "b", "y", "x"].iter().map(|s| s.to_string()).collect());
    let input = GenInput::new(&source, &params.vocab, 6);
    let v = &params.vocab;
    let targets = vec![
        v.id("b"),
        input.target_id(v, "x"),
        v.id("c"),
        input.target_id(v, "y"),
        EOS,
    ];
    (params, input, targets)
}

fn generator_full(seed: u64, use_pointer: bool, name: &'static str) -> CheckResult {
    let (params, input, targets) = generator_case(seed, use_pointer);
    let err = grad_check(
        |x: &[f64]| {
            let mut p = params.clone();
            p.weights.assign_flat(x);
            let mut g = p.weights.zeros_like();
            let (l, _) = sequence_nll(&p, &input, &targets, Some((&mut g, 1.0)));
            (l, g.flatten())
        },
        &params.weights.flatten(),
        EPSILON,
    );
    result(name, err)
}

/// Only `w_ptr` and `b_ptr` are perturbed.
fn generator_gate(seed: u64) -> CheckResult {
    let (params, input, targets) = generator_case(seed, true);
    let mut start = params.weights.w_ptr.values().to_vec();
    start.push(params.weights.b_ptr.values()[0]);
    let d2 = start.len() - 1;
    let err = grad_check(
        |x: &[f64]| {
            let mut p = params.clone();
            p.weights.w_ptr.values_mut().copy_from_slice(&x[..d2]);
            p.weights.b_ptr.values_mut()[0] = x[d2];
            let mut g = p.weights.zeros_like();
            let (l, _) = sequence_nll(&p, &input, &targets, Some((&mut g, 1.0)));
            let mut grad = g.w_ptr.values().to_vec();
            grad.push(g.b_ptr.values()[0]);
            (l, grad)
        },
        &start,
        EPSILON,
    );
    result("p_gen gate / w_ptr, b_ptr", err)
}

/// Runs every check at points drawn from `seed`.
pub fn run_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = init_rng(seed ^ 0x9c4e_c4ec);
    vec![
        focal_softmax(&mut rng),
        focal_binary(&mut rng),
        triplet(&mut rng),
        classifier(&mut rng, seed),
        embedding_triplet(&mut rng, seed),
        generator_gate(seed),
        generator_full(seed, true, "pointer-generator / all weights"),
        generator_full(seed, false, "decoder without copy path / all weights"),
    ]
}

/// Single-precision sanity check: the classifier gradient in `f32` against `f64`.
pub fn f32_agrees(seed: u64) -> bool {
    let mut init = init_rng(seed);
    let m64 = ClassifierWeights::<f64> {
        encoder: EncoderWeights::init(9, 4, &mut init).expect("valid shape"),
        head: ClassifierHead::init(4, &mut init),
    };
    let mut m32 = ClassifierWeights::<f32> {
        encoder: EncoderWeights::zeros(9, 4),
        head: ClassifierHead::zeros(4),
    };
    let flat: Vec<f32> = m64.flatten().iter().map(|&x| x as f32).collect();
    m32.assign_flat(&flat);
    let ids = [1, 5, 7, 7];
    let mut g64 = m64.zeros_like();
    let mut g32 = m32.zeros_like();
    m64.loss_and_grad(&ids, true, 2.0, &mut g64);
    m32.loss_and_grad(&ids, true, 2.0, &mut g32);
    g64.flatten()
        .iter()
        .zip(g32.flatten())
        .all(|(&a, b)| (a - b.as_f64()).abs() < 1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_several_seeds() {
        for seed in [0, 1, 2] {
            for r in run_suite(seed) {
                assert!(r.passed, "seed {seed}: {} error {}", r.name, r.max_relative_error);
            }
        }
    }

    #[test]
    fn single_precision_matches() {
        assert!(f32_agrees(3));
    }
}
