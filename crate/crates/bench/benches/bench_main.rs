use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use d12_bench::{piece, MIDI_FIXTURE};
use d12_core::group::{channels, isotypic_projector, stacked_basis, IrrepLabel};
use d12_core::ingest::smf::{parse_smf, serialize_smf};
use d12_core::nn::{Model, ModelConfig};

fn forward(c: &mut Criterion) {
    let p = piece(8);
    let mut group = c.benchmark_group("forward_T32");
    for (name, config) in [("equivariant", ModelConfig::default()), ("plain", ModelConfig::plain_default())] {
        let model = Model::new(config, 0).unwrap();
        group.bench_function(name, |b| b.iter(|| model.forward(black_box(&p.melody)).unwrap()));
    }
    group.finish();
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    c.bench_function("loss_and_grads_T32_equivariant", |b| b.iter(|| model.loss_and_grads(black_box(&p)).unwrap()));
}

fn change_of_basis(c: &mut Criterion) {
    c.bench_function("isotypic_projector_E1", |b| b.iter(|| isotypic_projector(black_box(IrrepLabel::E1))));
    c.bench_function("stacked_basis", |b| b.iter(stacked_basis));
    c.bench_function("intertwiner_residuals", |b| {
        b.iter(|| channels().iter().map(|ch| ch.intertwiner_residual()).fold(0.0, f64::max))
    });
}

fn smf(c: &mut Criterion) {
    c.bench_function("smf_parse", |b| b.iter(|| parse_smf(black_box(MIDI_FIXTURE)).unwrap()));
    let parsed = parse_smf(MIDI_FIXTURE).unwrap();
    c.bench_function("smf_serialize", |b| b.iter(|| serialize_smf(black_box(&parsed))));
}

criterion_group!(benches, forward, change_of_basis, smf);
criterion_main!(benches);
