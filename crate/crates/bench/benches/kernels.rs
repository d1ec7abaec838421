use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use colgrid_bench::{small_run, spike_batch, torus};
use colgrid_core::model::{Integrator, NeuronState};
use colgrid_core::netgen::{
    self, BinomialTable, ExternalDrive, Projector, RandomStream, StreamKind,
};
use colgrid_core::transport::codec;
use colgrid_core::{run, NeuronParams};

fn neuron_update(c: &mut Criterion) {
    let params = NeuronParams::default();
    let integrator = Integrator::new(&params, 0.1);
    let mut group = c.benchmark_group("neuron");
    group.throughput(Throughput::Elements(1240));
    group.bench_function("advance_column", |b| {
        let mut states = vec![NeuronState::at_rest(&params); 1240];
        b.iter(|| {
            for (i, s) in states.iter_mut().enumerate() {
                integrator.advance(s, black_box(0.02 * (i % 7) as f64));
            }
        })
    });
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let spec = torus(4, 4);
    let params = NeuronParams::default();
    let mut group = c.benchmark_group("sampling");
    group.bench_function("binomial_1240_0.8", |b| {
        let table = BinomialTable::new(1240, 0.8);
        let mut stream = RandomStream::tagged(StreamKind::Synapse, 1, 2, 3);
        b.iter(|| table.sample(&mut stream))
    });
    group.bench_function("external_poisson", |b| {
        let drive = ExternalDrive::new(&spec, &params, 0.1, 1);
        let mut step = 0u64;
        b.iter(|| {
            step += 1;
            drive.count(black_box(17), step)
        })
    });
    group.finish();
}

fn generation(c: &mut Criterion) {
    let spec = torus(4, 4);
    let params = NeuronParams::default();
    let mut group = c.benchmark_group("netgen");
    group.sample_size(10);
    group.bench_function("incoming_column_4x4_torus", |b| {
        let mut projector = Projector::new(&spec, 1);
        b.iter(|| netgen::generate_incoming_with(&mut projector, spec.column(5), &params, 10))
    });
    group.finish();
}

fn wire(c: &mut Criterion) {
    let batch = spike_batch(2000);
    let frame = codec::encode(&batch).unwrap();
    let mut group = c.benchmark_group("codec");
    group.throughput(Throughput::Bytes(frame.len() as u64));
    group.bench_function("encode_2000", |b| {
        b.iter(|| codec::encode(black_box(&batch)).unwrap())
    });
    group.bench_function("decode_2000", |b| {
        b.iter(|| codec::decode(black_box(&frame)).unwrap())
    });
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine");
    group.sample_size(10);
    for workers in [1, 2] {
        group.bench_function(format!("small_run_w{workers}"), |b| {
            b.iter_batched(
                || small_run(workers),
                |config| run(&config).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    neuron_update,
    sampling,
    generation,
    wire,
    simulation
);
criterion_main!(benches);
