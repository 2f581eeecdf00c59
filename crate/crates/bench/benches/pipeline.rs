use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mbnoma::baselines::oma_baseline;
use mbnoma::beamforming::effective_channel_from;
use mbnoma::downlink::{group_users, multi_beam_noma, partition_slot, DropContext};
use mbnoma::harness::drop_rng;
use mbnoma::channel::generate_drop;
use mbnoma::power::{allocate_power, LinkGains, PowerProblem, ScheduleMask};
use mbnoma::precoding::{equivalent_channels, zf_precoder};
use mbnoma_bench::Fixture;

const SIZES: [(usize, usize); 3] = [(5, 3), (7, 4), (12, 8)];

fn drop_generation(c: &mut Criterion) {
    let fx = Fixture::new(12, 8, 1);
    c.bench_function("generate_drop/k12", |b| {
        let mut d = 0;
        b.iter(|| {
            d += 1;
            generate_drop(black_box(&fx.cfg.drop), &mut drop_rng(1, d)).unwrap()
        })
    });
}

fn grouping(c: &mut Criterion) {
    let mut group = c.benchmark_group("coalition_formation");
    group.sample_size(20);
    for (k, n) in SIZES {
        let fx = Fixture::new(k, n, 2);
        let ctx = DropContext::new(&fx.channels, &fx.r_min, &fx.cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(format!("k{k}_n{n}")), &ctx, |b, ctx| {
            b.iter(|| group_users(black_box(ctx)).unwrap())
        });
    }
    group.finish();
}

fn precoding_and_power(c: &mut Criterion) {
    let mut zf = c.benchmark_group("zf_precoder");
    let mut cases = Vec::new();
    for (k, n) in SIZES {
        let fx = Fixture::new(k, n, 3);
        let ctx = DropContext::new(&fx.channels, &fx.r_min, &fx.cfg).unwrap();
        let slot = partition_slot(&ctx, &group_users(&ctx).unwrap().partition).unwrap();
        let h_eff = effective_channel_from(&slot.beams, &ctx.projections);
        zf.bench_function(format!("k{k}_n{n}"), |b| {
            b.iter(|| zf_precoder(&equivalent_channels(black_box(&h_eff), &slot.groups).unwrap(), 1e8).unwrap())
        });
        let pre = zf_precoder(&equivalent_channels(&h_eff, &slot.groups).unwrap(), 1e8).unwrap();
        let gains = LinkGains::new(&h_eff, &pre.g).unwrap();
        let mask = ScheduleMask::new(k, slot.groups.clone()).unwrap();
        cases.push((k, n, fx, gains, mask));
    }
    zf.finish();

    let mut sca = c.benchmark_group("sca_power_allocation");
    sca.sample_size(20);
    for (k, n, fx, gains, mask) in &cases {
        let pb = PowerProblem {
            mask,
            gains,
            noise_mw: fx.cfg.drop.noise_mw(),
            p_bs_mw: fx.cfg.drop.bs_power_mw(),
            r_min: Some(&fx.r_min),
            sic_constraints: true,
        };
        sca.bench_function(format!("k{k}_n{n}"), |b| b.iter(|| allocate_power(black_box(&pb), &fx.cfg.power).unwrap()));
    }
    sca.finish();
}

fn end_to_end(c: &mut Criterion) {
    let fx = Fixture::new(7, 4, 4);
    let ctx = DropContext::new(&fx.channels, &fx.r_min, &fx.cfg).unwrap();
    let mut group = c.benchmark_group("drop_k7_n4");
    group.sample_size(10);
    group.bench_function("proposed", |b| b.iter(|| multi_beam_noma(&ctx, &group_users(&ctx).unwrap()).unwrap()));
    group.bench_function("oma", |b| b.iter(|| oma_baseline(black_box(&ctx)).unwrap()));
    group.finish();
}

criterion_group!(benches, drop_generation, grouping, precoding_and_power, end_to_end);
criterion_main!(benches);
