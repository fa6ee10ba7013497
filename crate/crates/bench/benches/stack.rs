use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ecoweave_core::network::{Iface, Outgoing};
use ecoweave_core::sim::{bundled, Scenario, Simulator};
use ecoweave_core::{decode_frame, encode_frame, AmType, Frame, NetworkConfig, NetworkLevel, Role, RubiconAddress};

fn codec(c: &mut Criterion) {
    let frame = Frame {
        am_type: AmType::Network,
        src: RubiconAddress::new(7, 5),
        dst: RubiconAddress::sink(7),
        seq: 42,
        reliable: true,
        payload: (0..114).collect(),
    };
    let bytes = encode_frame(&frame).unwrap();
    c.bench_function("encode_frame_114", |b| b.iter(|| encode_frame(black_box(&frame)).unwrap()));
    c.bench_function("decode_frame_114", |b| b.iter(|| decode_frame(black_box(&bytes), 7, 7).unwrap()));
}

fn network_hop(c: &mut Criterion) {
    c.bench_function("mote_to_sink_hop", |b| {
        b.iter_batched(
            || {
                let cfg = NetworkConfig::default();
                let m = NetworkLevel::new(Role::Mote, RubiconAddress::new(7, 5), cfg);
                let s = NetworkLevel::new(Role::Sink, RubiconAddress::sink(7), cfg);
                (m, s)
            },
            |(mut m, mut s)| {
                m.net_send(AmType::Network, RubiconAddress::sink(7), &[1, 2, 3, 4], false).unwrap();
                if let Some(Outgoing::Radio(p)) = m.pop_outgoing(Iface::Radio) {
                    s.receive_radio(p);
                }
                s.process_ingoing()
            },
            BatchSize::SmallInput,
        )
    });
}

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(20);
    for (name, text, until) in
        [("staggered", bundled::STAGGERED, 10_000), ("hospital", bundled::HOSPITAL, 10_000), ("aal", bundled::AAL, 12_000)]
    {
        let sc = Scenario::parse(text).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut sim = Simulator::new(&sc, 1);
                sim.run_until(until);
                sim.trace().len()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, codec, network_hop, scenarios);
criterion_main!(benches);
