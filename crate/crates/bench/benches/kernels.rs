use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use hdr_bench::{clicks, eval_set, examples, model, store, world};
use hdr_core::cvrmodel::{TrainConfig, Trainer};
use hdr_core::dayvec::{retrieve_top_k, VectorBuilder};
use hdr_core::metrics::{auc, ece, DEFAULT_ECE_BUCKETS};
use hdr_core::shiftcorr::{estimate_for_target, solve_label_dist, CondPredMatrix, PredDist};
use hdr_core::transblock::{composite_loss_and_grad, finetune, FinetuneConfig, TransBlock};
use hdr_core::{DayStore, ShiftConfig};
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let w = world(10_000);
    let (preds, labels) = eval_set(&w, 100_000, 1);
    let mut g = c.benchmark_group("metrics");
    g.throughput(Throughput::Elements(preds.len() as u64));
    g.bench_function("auc_100k", |b| b.iter(|| auc(black_box(&preds), black_box(&labels)).unwrap()));
    g.bench_function("ece_100k", |b| b.iter(|| ece(black_box(&preds), &labels, DEFAULT_ECE_BUCKETS).unwrap()));
    g.finish();
}

fn model_kernels(c: &mut Criterion) {
    let w = world(10_000);
    let data = examples(&clicks(&w, 20, 5000, 2));
    let m = model(&w);
    let mut g = c.benchmark_group("cvrmodel");
    g.throughput(Throughput::Elements(data.len() as u64));
    g.bench_function("loss_and_grad_5000", |b| b.iter(|| m.loss_and_grad(black_box(&data), (1.0, 1.0)).unwrap()));
    g.bench_function("train_epoch_5000_batch_250", |b| {
        b.iter_batched(
            || m.clone(),
            |mut m| {
                let cfg = TrainConfig { batch_size: 250, ..TrainConfig::default() };
                Trainer::new(cfg, &m).unwrap().train(&mut m, &data).unwrap()
            },
            BatchSize::LargeInput,
        )
    });
    let tb = TransBlock::new(m.hidden_dim(), &[100], 3).unwrap();
    g.bench_function("composite_loss_and_grad_5000", |b| {
        b.iter(|| composite_loss_and_grad(&m, black_box(&tb), &data, (1.2, 0.9)).unwrap())
    });
    g.bench_function("finetune_5000", |b| {
        let cfg = FinetuneConfig { batch_size: 100, ..FinetuneConfig::default() };
        b.iter(|| finetune(&m, &tb, black_box(&data), (1.2, 0.9), &cfg).unwrap())
    });
    g.finish();
}

fn retrieval(c: &mut Criterion) {
    let w = world(2000);
    let s = store(&w, 120, 4);
    let cats = vec![1, 3, 4, 5, 6, 7, 10];
    let mut g = c.benchmark_group("dayvec");
    g.bench_function("build_history_and_retrieve_day_116", |b| {
        b.iter(|| VectorBuilder::new(10, cats.clone()).retrieve(&s, black_box(116), 2, 4).unwrap())
    });
    let mut builder = VectorBuilder::new(10, cats.clone());
    let history = builder.history(&s, 116, 4).unwrap();
    let target = builder.build(&s, 116).unwrap();
    g.bench_function("rank_cached_history", |b| b.iter(|| retrieve_top_k(black_box(&target), &history, 2).unwrap()));
    g.finish();
}

fn shift(c: &mut Criterion) {
    let m = CondPredMatrix([[0.09, 0.05], [0.91, 0.95]]);
    c.bench_function("shiftcorr/solve_label_dist", |b| {
        b.iter(|| solve_label_dist(black_box(&m), &PredDist([0.06, 0.94]), [0.05, 0.95], 1.0).unwrap())
    });
    let w = world(10_000);
    let s = store(&w, 40, 5);
    let model = model(&w);
    let history = [s.day(36).unwrap(), s.day(37).unwrap()];
    let target = s.day(38).unwrap();
    c.bench_function("shiftcorr/estimate_for_target", |b| {
        b.iter(|| estimate_for_target(&model, black_box(&history), target, &ShiftConfig::default()).unwrap())
    });
}

criterion_group!(benches, metrics, model_kernels, retrieval, shift);
criterion_main!(benches);
