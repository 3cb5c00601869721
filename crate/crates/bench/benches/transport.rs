use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use modbot_core::gaits::{get_preset, Gains};
use modbot_core::runtime::TrajectoryBuffer;
use modbot_core::sim::{run_networked, NetworkOptions};
use modbot_core::transport::{decode, encode, TrajectorySegmentMessage};
use modbot_core::HierarchicalCpg;

fn segment(seq: u64) -> TrajectorySegmentMessage {
    TrajectorySegmentMessage {
        module_id: 0,
        seq,
        start_time_ms: 50 * (seq + 1),
        sample_period_ms: 10,
        samples: (0..5).map(|i| [0.1 * i as f64, -0.2, 0.3, 1.2, -1.5]).collect(),
    }
}

fn codec(c: &mut Criterion) {
    let msg = segment(7);
    let bytes = encode(&msg);
    c.bench_function("encode_segment", |b| b.iter(|| encode(black_box(&msg))));
    c.bench_function("decode_segment", |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
}

fn buffer(c: &mut Criterion) {
    c.bench_function("buffer_ingest_apply_1s", |b| {
        b.iter(|| {
            let mut buf = TrajectoryBuffer::new(0, 64);
            for seq in 0..20 {
                buf.ingest(segment(seq), (50 * seq) as f64).unwrap();
                for k in 0..5 {
                    black_box(buf.apply((50 * (seq + 1) + 10 * k) as f64));
                }
            }
        })
    });
}

fn pipeline(c: &mut Criterion) {
    let cpg = HierarchicalCpg::new(get_preset("snake_crawl").unwrap().to_system_config(&Gains::default()).unwrap()).unwrap();
    let mut opts = NetworkOptions::default();
    opts.channel.loss_probability = 0.1;
    opts.channel.jitter_ms = 2.0;
    opts.probe = false;
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("snake_crawl_networked_2s", |b| {
        b.iter(|| run_networked(&cpg, cpg.initial_state(), 2.0, &opts, None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, codec, buffer, pipeline);
criterion_main!(benches);
