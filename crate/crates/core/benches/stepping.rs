use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use smartlet_core::scenarios::bundled;
use smartlet_core::{World, WorldScenario};

/// A grid of fig2 robots spread over a large arena.
fn swarm(n: usize) -> WorldScenario {
    let mut s = bundled("fig2_locomotion").unwrap().unwrap();
    let side = (n as f64).sqrt().ceil() as usize;
    s.arena.width_mm = 4.0 * side as f64 + 8.0;
    s.arena.height_mm = s.arena.width_mm;
    let template = s.robots[0].clone();
    s.robots = (0..n)
        .map(|i| {
            let mut r = template.clone();
            r.x_mm = 4.0 + 4.0 * (i % side) as f64;
            r.y_mm = 4.0 + 4.0 * (i / side) as f64;
            r
        })
        .collect();
    s
}

fn stepping(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_100_ticks");
    group.sample_size(20);
    for n in [16, 256] {
        let s = swarm(n);
        for (label, parallel) in [("sequential", false), ("parallel", true)] {
            group.bench_with_input(BenchmarkId::new(label, n), &s, |b, s| {
                b.iter_batched(
                    || {
                        let mut w = World::new(s).unwrap();
                        w.set_parallel(parallel);
                        w
                    },
                    |mut w| {
                        for _ in 0..100 {
                            w.step().unwrap();
                        }
                        w
                    },
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, stepping);
criterion_main!(benches);
