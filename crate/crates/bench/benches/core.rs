use std::io::Cursor;

use cingal_bench::sample_bundle;
use cingal_core::channel::{read_frame, write_frame, DEFAULT_MAX_FRAME};
use cingal_core::store::Store;
use cingal_core::{Bundle, DigestAlgorithm};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn digest(c: &mut Criterion) {
    let mut g = c.benchmark_group("digest");
    for size in [256, 4096, 65536] {
        let b = sample_bundle(4, size);
        g.throughput(Throughput::Bytes(b.serialize().len() as u64));
        for alg in [DigestAlgorithm::Md5, DigestAlgorithm::Sha256] {
            g.bench_with_input(BenchmarkId::new(format!("{alg:?}"), size), &b, |bench, b| {
                bench.iter(|| b.guid(alg))
            });
        }
    }
    g.finish();
}

fn bundle_parse(c: &mut Criterion) {
    let mut g = c.benchmark_group("bundle");
    for data in [1, 16, 128] {
        let doc = sample_bundle(data, 128).serialize();
        g.throughput(Throughput::Bytes(doc.len() as u64));
        g.bench_with_input(BenchmarkId::new("parse", data), &doc, |bench, doc| {
            bench.iter(|| Bundle::parse(doc).unwrap())
        });
        let b = Bundle::parse(&doc).unwrap();
        g.bench_with_input(BenchmarkId::new("serialize", data), &b, |bench, b| bench.iter(|| b.serialize()));
    }
    g.finish();
}

fn store_put(c: &mut Criterion) {
    let bundles: Vec<Bundle> = (0..64).map(|i| sample_bundle(2, 64 + i)).collect();
    c.bench_function("store/put-get-64", |bench| {
        bench.iter(|| {
            let s = Store::in_memory(DigestAlgorithm::Md5);
            for b in &bundles {
                let k = s.put(b).unwrap();
                s.get(&k).unwrap();
            }
        })
    });
    let dir = std::env::temp_dir().join(format!("cingal-bench-{}", std::process::id()));
    let s = Store::open(&dir, DigestAlgorithm::Md5).unwrap();
    c.bench_function("store/put-persistent", |bench| {
        let mut i = 0;
        bench.iter(|| {
            i += 1;
            s.put(&sample_bundle(1, 32 + i % 512)).unwrap()
        })
    });
    let _ = std::fs::remove_dir_all(dir);
}

fn framing(c: &mut Criterion) {
    let mut g = c.benchmark_group("framing");
    for size in [64, 4096, 1 << 20] {
        let msg = vec![0x5A; size];
        g.throughput(Throughput::Bytes(size as u64));
        g.bench_with_input(BenchmarkId::new("roundtrip", size), &msg, |bench, msg| {
            let mut buf = Vec::with_capacity(size + 4);
            bench.iter(|| {
                buf.clear();
                write_frame(&mut buf, msg, DEFAULT_MAX_FRAME).unwrap();
                read_frame(&mut Cursor::new(&buf), DEFAULT_MAX_FRAME).unwrap().unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, digest, bundle_parse, store_put, framing);
criterion_main!(benches);
