use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sadmil::baggraph::{energy_s1, energy_s2, energy_value};
use sadmil::dataio::generate;
use sadmil::losses::batch_loss;
use sadmil::milmodel::{forward, forward_on_tape, ParamVars};
use sadmil::{BagGraph, LossConfig, ModelConfig, ModelParams, SynthConfig, Tape};

fn energies(c: &mut Criterion) {
    let mut group = c.benchmark_group("energy");
    for n in [24usize, 57, 256] {
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = BagGraph::chain(n).unwrap();
        group.bench_with_input(BenchmarkId::new("s1", n), &n, |b, _| {
            b.iter(|| energy_value(energy_s1, black_box(&f), &g).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("s2", n), &n, |b, _| {
            b.iter(|| energy_value(energy_s2, black_box(&f), &g).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let bags = generate(&SynthConfig {
        num_bags: 4,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = ModelConfig::default();
    let params = ModelParams::init(&cfg, 1).unwrap();
    let graphs: Vec<BagGraph> = bags
        .iter()
        .map(|b| BagGraph::chain(b.len()).unwrap())
        .collect();
    let graph_refs: Vec<&BagGraph> = graphs.iter().collect();
    let labels: Vec<u8> = bags.iter().map(|b| b.bag_label).collect();
    let loss = LossConfig::default();

    c.bench_function("forward/bag", |b| {
        b.iter(|| forward(black_box(&bags[0]), &params, &cfg).unwrap())
    });
    c.bench_function("loss_and_backward/batch4", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params);
            let mut probs = Vec::new();
            let mut fs = Vec::new();
            for bag in &bags {
                let nodes = forward_on_tape(&mut tape, &vars, bag, &cfg).unwrap();
                probs.push(nodes.prob);
                fs.push(nodes.f.unwrap());
            }
            let root = batch_loss(&mut tape, &probs, &labels, &fs, &graph_refs, &loss).unwrap();
            tape.backward(root).unwrap()
        })
    });
}

criterion_group!(benches, energies, model);
criterion_main!(benches);
