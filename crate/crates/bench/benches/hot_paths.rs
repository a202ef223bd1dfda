use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kgdial::cooccur::{build_cooccurrence, CooccurWeighting};
use kgdial::jointembed::joint_gradients;
use kgdial::kvl::constrain;
use kgdial::metrics::{corpus_bleu, reference_tokens};
use kgdial::neural::{backward, encode, generate, EntityIndex, LossConfig};
use kgdial::{EmbeddingMatrix, EntityRegistry, IntentSet, JointTrainConfig, ModelParams};
use kgdial_bench::{load_corpus, WINDOW};

fn cooccurrence(c: &mut Criterion) {
    let corpus = load_corpus();
    c.bench_function("cooccurrence build", |b| {
        b.iter(|| build_cooccurrence(black_box(&corpus.pairs), &corpus.vocab, WINDOW, CooccurWeighting::Flat).unwrap())
    });
}

fn joint_gradient(c: &mut Criterion) {
    let corpus = load_corpus();
    let mut group = c.benchmark_group("joint gradient");
    for dim in [50, 300] {
        let cfg = JointTrainConfig {
            dim,
            ..JointTrainConfig::default()
        };
        let e = EmbeddingMatrix::random(corpus.vocab.len(), dim, 7);
        group.bench_function(format!("d={dim}"), |b| {
            b.iter(|| joint_gradients(black_box(&e), &corpus.cooccur, &corpus.relation, cfg.lambda, &cfg))
        });
    }
    group.finish();
}

fn decoder(c: &mut Criterion) {
    let corpus = load_corpus();
    let emb = EmbeddingMatrix::random(corpus.vocab.len(), 64, 11);
    let params = ModelParams::new(&emb, IntentSet::in_car().len(), 11).unwrap();
    let entities = EntityIndex::from_vocab(&corpus.vocab);
    let batch: Vec<_> = corpus.pairs.iter().take(8).cloned().collect();
    let loss = LossConfig::default();

    let mut group = c.benchmark_group("seq2seq d=64");
    group.bench_function("forward/backward batch 8", |b| {
        b.iter(|| backward(black_box(&params), &batch, &entities, &loss).unwrap())
    });
    group.bench_function("encode", |b| b.iter(|| encode(&params, black_box(&batch[0].input)).unwrap()));
    group.bench_function("greedy decode 20", |b| {
        b.iter(|| generate(&params, black_box(&batch[0].input), 20).unwrap())
    });
    group.finish();
}

fn bleu(c: &mut Criterion) {
    let corpus = load_corpus();
    let refs: Vec<Vec<String>> = corpus.pairs.iter().map(|p| reference_tokens(&corpus.vocab, p)).collect();
    let hyps: Vec<Vec<String>> = refs.iter().map(|r| r.iter().rev().cloned().collect()).collect();
    c.bench_function("corpus bleu", |b| b.iter(|| corpus_bleu(black_box(&refs), black_box(&hyps)).unwrap()));
}

fn kvl(c: &mut Criterion) {
    let corpus = load_corpus();
    let registry = EntityRegistry::new(&corpus.vocab, &corpus.kg);
    let v = corpus.vocab.len();
    c.bench_function("kvl constrain", |b| {
        b.iter_batched(
            || {
                let mut dist: Vec<f64> = (0..v).map(|i| ((i * 7919) % 101) as f64 + 1.0).collect();
                let z: f64 = dist.iter().sum();
                dist.iter_mut().for_each(|p| *p /= z);
                dist
            },
            |dist| constrain(&dist, &registry).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, cooccurrence, joint_gradient, decoder, bleu, kvl);
criterion_main!(benches);
