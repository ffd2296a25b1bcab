//! End-to-end acceptance checks; prints one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;

use common::*;
use kgdial::corpus::{load_dialogs, load_knowledge, load_labels, Split};
use kgdial::detector::{detection_f1, train_detector, tune_threshold};
use kgdial::entity_filter::{build_filter, filter_stats, match_entities, FilterConfig, FilterStats};
use kgdial::fixtures;
use kgdial::generator::{
    build_gen_input, decode_step, encode_source, greedy_decode, mixture, train_generator, GenInput, GeneratorConfig,
    Seq2SeqParams, Seq2SeqWeights,
};
use kgdial::metrics::{bleu_n, recall_at_k};
use kgdial::neural::{
    binary_cross_entropy, binary_focal, focal_loss, init_rng, FocalConfig, TrainConfig, Trainable, TripletConfig, Vocab,
};
use kgdial::pipeline::{predictions_to_json, run_pipeline, train_bundle, ModelBundle, PipelineConfig};
use kgdial::selector::{
    build_embedding_index, rank_by_embedding, stage_recall_at_1, train_embedding_encoder, train_ranker, Candidates,
    NegativePools, Stage, NEGATIVE_POOL,
};
use kgdial::textproc::{edit_distance, tokenize, TokenSeq};
use kgdial::verify::{f32_agrees, run_suite};
use rand::Rng;

mod common;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn filter_reproduction() -> Outcome {
    match std::env::var_os("KGD_DSTC9_DIR") {
        Some(dir) => dstc9_filter(Path::new(&dir)),
        None => {
            let split = fixtures::split().unwrap();
            let kb = fixtures::knowledge().unwrap();
            let cfg = fixtures::config().unwrap();
            let mut ok = true;
            let mut parts = Vec::new();
            for (fuzzy, golden) in [(false, fixtures::GOLDEN_FILTER_EXACT), (true, fixtures::GOLDEN_FILTER)] {
                let fc = FilterConfig {
                    fuzzy,
                    ..cfg.filter.clone()
                };
                let got = filter_stats(&split, &build_filter(&kb, &split.dialogs, &fc).unwrap(), &kb);
                let want: FilterStats = serde_json::from_str(golden).unwrap();
                ok &= got == want;
                parts.push(format!("avg {} recall {}", got.avg_matched, got.recall));
            }
            outcome(
                ok,
                format!("toy fixture vs golden (no KGD_DSTC9_DIR): {}", parts.join("; ")),
            )
        }
    }
}

fn dstc9_filter(dir: &Path) -> Outcome {
    let train = dir.join("train");
    let split = Split::new(
        load_dialogs(&train.join("logs.json")).unwrap(),
        load_labels(&train.join("labels.json")).unwrap(),
    )
    .unwrap();
    let kb = load_knowledge(&dir.join("knowledge.json")).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (fuzzy, avg, recall) in [(false, 4.651, 0.9958), (true, 4.887, 0.9974)] {
        let fc = FilterConfig {
            fuzzy,
            ..FilterConfig::default()
        };
        let s = filter_stats(&split, &build_filter(&kb, &split.dialogs, &fc).unwrap(), &kb);
        ok &= s.total_entities == 145 && (s.avg_matched - avg).abs() <= 0.5 && s.recall >= recall;
        parts.push(format!(
            "{}: entities {} avg {:.3} recall {:.4}",
            if fuzzy { "fuzzy" } else { "exact" },
            s.total_entities,
            s.avg_matched,
            s.recall
        ));
    }
    outcome(ok, parts.join("; "))
}

fn loss_identities() -> Outcome {
    let mut rng = init_rng(2);
    let (mut worst, mut ordered) = (0.0f64, true);
    for _ in 0..1000 {
        let p: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
        let t = rng.gen_bool(0.5);
        let ce = binary_cross_entropy(p, t);
        worst = worst.max((binary_focal(p, t, 0.0) - ce).abs());
        ordered &= binary_focal(p, t, 2.0) <= ce;
        let probs = [p, 1.0 - p];
        let target = usize::from(!t);
        worst = worst.max((focal_loss(&probs, target, 0.0) + probs[target].ln()).abs());
        ordered &= focal_loss(&probs, target, 2.0) <= -probs[target].ln();
    }
    outcome(
        worst <= 1e-9 && ordered,
        format!("max |focal(γ=0) - CE| {worst:.2e}, focal(γ=2) <= CE: {ordered}"),
    )
}

fn gradient_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..100 {
        for r in run_suite(seed) {
            worst = worst.max(r.max_relative_error);
            failures += usize::from(!r.passed);
        }
    }
    let f32_ok = f32_agrees(0);
    outcome(
        failures == 0 && f32_ok,
        format!("100 points, max relative error {worst:.2e}, {failures} failures, f32 agrees: {f32_ok}"),
    )
}

fn random_params(rng: &mut impl Rng, use_pointer: bool) -> Seq2SeqParams<f64> {
    let vocab = Vocab::from_tokens(["the", "hotel", "has", "free", "parking", "wifi", "yes", "no"]);
    let mut weights = Seq2SeqWeights::init(vocab.len(), 6, 12, rng).unwrap();
    let scale = rng.gen_range(0.5..4.0);
    for t in weights.tensors_mut() {
        t.values_mut()
            .iter_mut()
            .for_each(|v| *v = scale * rng.gen_range(-1.0..1.0));
    }
    Seq2SeqParams {
        vocab,
        weights,
        config: GeneratorConfig {
            max_source_len: 12,
            use_pointer,
            ..GeneratorConfig::default()
        },
    }
}

fn random_source(rng: &mut impl Rng) -> TokenSeq {
    let words = [
        "the",
        "hotel",
        "free",
        "parking",
        "gonville",
        "acorn",
        "wifi",
        "lensfield",
        "yes",
    ];
    TokenSeq(
        (0..rng.gen_range(1..16))
            .map(|_| words[rng.gen_range(0..words.len())].to_string())
            .collect(),
    )
}

fn mixture_normalization() -> Outcome {
    let mut rng = init_rng(4);
    let mut worst: f64 = 0.0;
    let mut endpoints = true;
    for draw in 0..1000 {
        let params = random_params(&mut rng, draw % 5 != 0);
        let input = GenInput::new(&random_source(&mut rng), &params.vocab, 12);
        let h = encode_source(&params.weights, &input);
        let s: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prev = rng.gen_range(0..input.extended_size());
        let step = decode_step(&params, &s, prev, &h, &input);
        worst = worst.max((step.dist.total() - 1.0).abs());
        if !params.config.use_pointer {
            endpoints &= step.p_gen == 1.0;
        }

        let size = input.extended_size();
        let generate = mixture(&step.p_vocab, &step.attention, &input.ext_ids, 1.0, size);
        let mut want = step.p_vocab.clone();
        want.resize(size, 0.0);
        endpoints &= generate.probs == want;

        let copy = mixture(&step.p_vocab, &step.attention, &input.ext_ids, 0.0, size);
        let mut want = vec![0.0; size];
        for (&a, &id) in step.attention.iter().zip(&input.ext_ids) {
            want[id] += a;
        }
        endpoints &= copy.probs == want;
    }
    outcome(
        worst <= 1e-9 && endpoints,
        format!("1000 draws, max |Σp - 1| {worst:.2e}, endpoint identities exact: {endpoints}"),
    )
}

fn oracle_equivalences() -> Outcome {
    let mut rng = init_rng(5);
    let alphabet: Vec<char> = "abcdeé".chars().collect();
    let word = |rng: &mut dyn rand::RngCore| -> String {
        (0..rng.gen_range(0..9))
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect()
    };
    let edit_ok = (0..10_000).all(|_| {
        let (a, b) = (word(&mut rng), word(&mut rng));
        edit_distance(&a, &b) == edit_distance_oracle(&a, &b)
    });

    let match_ok = (0..1000).all(|_| {
        let (names, utts) = random_filter_corpus(&mut rng);
        let kb = filter_kb(&names, rng.gen_bool(0.5));
        let dialogs = filter_dialogs(&utts);
        let t3 = rng.gen_range(1..4);
        let mut cfg = absolute_filter(t3 + rng.gen_range(1..5), rng.gen_range(1..4), t3);
        cfg.fuzzy = rng.gen_bool(0.5);
        let p = build_filter(&kb, &dialogs, &cfg).unwrap();
        dialogs
            .iter()
            .all(|d| match_entities(d, &p).entities == naive_match(d, &p))
    });

    let threshold_ok = (0..1000).all(|_| {
        let n = rng.gen_range(1..30);
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=200) as f64 / 200.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        tune_threshold(&probs, &labels) == threshold_sweep_oracle(&probs, &labels)
    });

    let pools_ok = (0..200).all(|_| {
        let docs: Vec<(Vec<usize>, Vec<usize>)> = (0..rng.gen_range(2..25))
            .map(|_| {
                let mut w = || {
                    (0..rng.gen_range(1..6))
                        .map(|_| rng.gen_range(0..POOL_WORDS.len()))
                        .collect()
                };
                (w(), w())
            })
            .collect();
        let kb = pool_kb(&docs);
        let refs: Vec<_> = kb.snippets().map(|s| s.reference.clone()).collect();
        let pools = NegativePools::build(&kb, &refs).unwrap();
        refs.iter().all(|gold| {
            let pool = pools.pool(gold).unwrap();
            let oracle = exhaustive_scores(&kb, gold);
            let score = |r| oracle.iter().find(|(o, _)| o == r).unwrap().1;
            pool.len() == oracle.len().min(NEGATIVE_POOL)
                && pool
                    .iter()
                    .enumerate()
                    .all(|(i, r)| (score(r) - oracle[i].1).abs() < 1e-12)
        })
    });

    outcome(
        edit_ok && match_ok && threshold_ok && pools_ok,
        format!(
            "edit distance {edit_ok}, indexed matching {match_ok}, threshold sweep {threshold_ok}, negative pools {pools_ok}"
        ),
    )
}

fn synthetic_learning() -> Outcome {
    let split = detector_split(32);
    let cfg = TrainConfig {
        lr: 1e-2,
        warmup_steps: 10,
        batch_size: 4,
        epochs: 10,
        seed: 7,
        dim: 8,
        ..TrainConfig::default()
    };
    let (detector, _) = train_detector::<f64>(&split, &split, &cfg, &FocalConfig::default()).unwrap();
    let f1 = detection_f1(&detector, &split);

    let toy = fixtures::split().unwrap();
    let kb = fixtures::knowledge().unwrap();
    let toy_cfg = fixtures::config().unwrap();
    let patterns = build_filter(&kb, &toy.dialogs, &toy_cfg.filter).unwrap();
    let ranker_r1 = |stage| {
        let c = Candidates::Filtered(&patterns);
        let (m, _) = train_ranker::<f64>(&toy, &toy, &kb, stage, c, &toy_cfg.train_config(), &toy_cfg.focal).unwrap();
        stage_recall_at_1(&m, &toy, &kb, c)
    };
    let (entity, knowledge) = (ranker_r1(Stage::Entity), ranker_r1(Stage::Knowledge));

    let (train, ckb) = cluster_corpus(1, 12);
    let (valid, _) = cluster_corpus(2, 3);
    let triplet = TripletConfig::default();
    let (enc, _, log) = train_embedding_encoder::<f64>(&train, &valid, &ckb, &cluster_config(), &triplet).unwrap();
    let in_band = !log.gaps.is_empty() && log.gaps.iter().all(|&g| g > triplet.beta && g < triplet.alpha);
    let index = build_embedding_index(&ckb, &enc);
    let embed_r1 = valid
        .knowledge_turns()
        .map(|(d, _, gold)| recall_at_k(&rank_by_embedding(&index, d).unwrap().keys(), gold, 1))
        .sum::<f64>()
        / valid.len() as f64;

    outcome(
        f1 >= 0.95 && entity == 1.0 && knowledge == 1.0 && embed_r1 >= 0.9 && in_band,
        format!(
            "detector F1 {f1:.3}, entity R@1 {entity}, knowledge R@1 {knowledge}, embedding R@1 {embed_r1:.3}, \
             {} mined gaps in (β, α): {in_band}",
            log.gaps.len()
        ),
    )
}

/// Mean BLEU-1 against the references, and the fraction of turns whose
/// source-only names all appear in the output.
fn copy_scores(use_pointer: bool) -> (f64, f64) {
    let (split, kb) = copy_corpus();
    let gen_cfg = GeneratorConfig {
        use_pointer,
        ..GeneratorConfig::default()
    };
    let (params, _) = train_generator::<f64>(&split, &split, &kb, &copy_config(1), &gen_cfg).unwrap();
    let (mut bleu, mut with_oov, mut emitted) = (0.0, 0usize, 0usize);
    for (dialog, label, gold) in split.knowledge_turns() {
        let input = build_gen_input(dialog, kb.snippet(gold).unwrap(), &params.vocab, gen_cfg.max_source_len);
        let hyp = tokenize(&greedy_decode(&params, &input, 64));
        let reference = tokenize(label.response.as_deref().unwrap());
        bleu += bleu_n(&hyp, &reference, 1);
        let names: BTreeSet<&str> = reference.iter().filter(|t| input.oovs.iter().any(|o| o == t)).collect();
        if !names.is_empty() {
            with_oov += 1;
            emitted += usize::from(names.iter().all(|n| hyp.iter().any(|t| t == *n)));
        }
    }
    (bleu / split.len() as f64, emitted as f64 / with_oov.max(1) as f64)
}

fn copy_path() -> Outcome {
    let (bleu, oov) = copy_scores(true);
    let (ablated_bleu, ablated_oov) = copy_scores(false);
    outcome(
        bleu >= 0.9 && oov >= 0.95 && ablated_oov < 0.95,
        format!(
            "pointer: BLEU-1 {bleu:.3}, OOV emission {oov:.2}; no pointer: BLEU-1 {ablated_bleu:.3}, OOV emission {ablated_oov:.2}"
        ),
    )
}

fn determinism() -> Outcome {
    let split = fixtures::split().unwrap();
    let kb = fixtures::knowledge().unwrap();
    let cfg = fixtures::config().unwrap();
    let a = train_bundle(&cfg, &split, &split, &kb).unwrap();
    let b = train_bundle(&cfg, &split, &split, &kb).unwrap();
    let dir = tempfile::tempdir().unwrap();
    b.save(dir.path()).unwrap();
    let reloaded = ModelBundle::load(dir.path(), &cfg).unwrap();
    let run = |bundle: &ModelBundle, c: &PipelineConfig| run_pipeline(&split.dialogs, &kb, bundle, c).unwrap();
    let first = predictions_to_json(&run(&a, &cfg));
    let identical = first == predictions_to_json(&run(&b, &cfg)) && first == predictions_to_json(&run(&reloaded, &cfg));

    let positives = |t: f64| {
        let c = PipelineConfig {
            threshold: t,
            ..cfg.clone()
        };
        run(&a, &c).iter().filter(|p| p.target).count()
    };
    let counts: Vec<usize> = (1..20).rev().map(|i| positives(i as f64 * 0.05)).collect();
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]) && positives(0.25) >= positives(0.45);
    outcome(
        identical && monotone,
        format!(
            "byte-identical predictions {identical}; positives at 0.45 {}, at 0.25 {}, monotone {monotone}",
            positives(0.45),
            positives(0.25)
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("entity filter statistics", filter_reproduction),
        ("loss identities", loss_identities),
        ("gradient suite", gradient_suite),
        ("mixture normalization", mixture_normalization),
        ("oracle equivalences", oracle_equivalences),
        ("synthetic learning", synthetic_learning),
        ("copy path", copy_path),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.passed);
        println!(
            "{} criterion {} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
